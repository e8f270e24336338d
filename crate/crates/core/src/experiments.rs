//! Monte Carlo experiments and their JSON reports.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chains::{d_return_probs, DpOptions};
use crate::constants::LimitConstants;
use crate::dual::{series_sample_sites, SeriesOptions, SeriesState};
use crate::error::{RapError, Result};
use crate::exec::run_replicas;
use crate::forward::fluctuation_sample;
use crate::lattice::{euclid, Dim, Site, ORIGIN};
use crate::model::RapModel;
use crate::potential::{PotentialContext, PotentialSettings};
use crate::rng::{Domain, StreamKey};
use crate::stats::{ks_test, ks_two_sample, normal_cdf, CovEstimate, Summary, MIN_KS_SAMPLES};
use crate::variance::{as_rows, corollary1_cov_scan_d1, scale_of, truncated_moment_matrix, truncated_second_moment};
use crate::weights::{LawSpec, SlopeVector};

/// Replica-level settings shared by every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub replicas: usize,
    /// Not part of the report: results do not depend on it.
    #[serde(skip)]
    pub threads: usize,
    /// Significance level of every pass/fail decision.
    pub alpha: f64,
    pub budget_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentParams {
    /// Forward simulation against the dual series at one site and horizon.
    Equivalence { x: Vec<i64>, n: usize },
    /// Normalized series at truncation A|x|².
    Clt { x: Vec<i64>, a: f64 },
    /// Joint series at several sites, against the exact moment matrix.
    MomentMatrix { sites: Vec<Vec<i64>>, n: usize },
    /// Sites ⌊n t_j⌋, truncation A n², normalized by √(c n).
    Fdd { times: Vec<f64>, n: usize, a: f64, probes: usize },
    /// Quenched minus annealed coincidence sums for each x.
    Condition3 { xs: Vec<Vec<i64>>, a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub law: LawSpec,
    pub slope: Vec<f64>,
    pub run: RunSettings,
    pub params: ExperimentParams,
}

impl ExperimentConfig {
    pub fn model(&self) -> Result<RapModel> {
        let law = self.law.build()?;
        let slope = SlopeVector::new(law.dim(), &self.slope)?;
        Ok(RapModel::new(law, slope))
    }

    fn validate_run(&self, needs_ks: bool) -> Result<()> {
        let r = &self.run;
        if needs_ks && r.replicas < MIN_KS_SAMPLES {
            return Err(RapError::invalid(
                "replicas",
                format!("at least {MIN_KS_SAMPLES} replicas are needed for a p-value, got {}", r.replicas),
            ));
        }
        if r.replicas < 4 {
            return Err(RapError::invalid("replicas", "at least 4 replicas are needed"));
        }
        if !(r.alpha > 0.0 && r.alpha < 1.0) {
            return Err(RapError::invalid("alpha", format!("must lie in (0, 1), got {}", r.alpha)));
        }
        Ok(())
    }
}

/// One named pass/fail line of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Check {
        Check {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub n_samples: usize,
    pub mean: f64,
    pub var: f64,
    pub var_ci: [f64; 2],
    pub predicted_var: f64,
    pub ks_d: Option<f64>,
    pub ks_p: Option<f64>,
    pub pass: bool,
    pub runtime_s: f64,
    pub anomalies: usize,
    pub checks: Vec<Check>,
    pub extra: serde_json::Value,
}

impl TestReport {
    /// The report as JSON without its wall-clock time.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("runtime_s");
        }
        v.to_string()
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

struct ReportBuilder {
    experiment: &'static str,
    config: serde_json::Value,
    start: Instant,
    checks: Vec<Check>,
}

impl ReportBuilder {
    fn new(experiment: &'static str, cfg: &ExperimentConfig) -> ReportBuilder {
        ReportBuilder {
            experiment,
            config: serde_json::to_value(cfg).expect("config serializes"),
            start: Instant::now(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check::new(name, pass, detail));
    }

    fn finish(self, s: &Summary, alpha: f64, predicted_var: f64, ks: Option<(f64, f64)>, anomalies: usize, extra: serde_json::Value) -> TestReport {
        TestReport {
            experiment: self.experiment.to_string(),
            config: self.config,
            n_samples: s.n,
            mean: s.mean,
            var: s.var,
            var_ci: s.var_ci(alpha),
            predicted_var,
            ks_d: ks.map(|k| k.0),
            ks_p: ks.map(|k| k.1),
            pass: self.checks.iter().all(|c| c.pass),
            runtime_s: self.start.elapsed().as_secs_f64(),
            anomalies,
            checks: self.checks,
            extra,
        }
    }
}

fn site_of(model: &RapModel, coords: &[i64], name: &str) -> Result<Site> {
    let s = model.dim().site(coords).map_err(|_| {
        RapError::invalid(name, format!("expected {} coordinate(s), got {coords:?}", model.dim().as_usize()))
    })?;
    if s == ORIGIN {
        return Err(RapError::invalid(name, "must be nonzero"));
    }
    Ok(s)
}

fn dp_options(run: &RunSettings) -> DpOptions {
    DpOptions {
        budget_cells: run.budget_cells,
        ..DpOptions::default()
    }
}

fn series_options(run: &RunSettings, trace: bool) -> SeriesOptions {
    SeriesOptions {
        budget_cells: run.budget_cells,
        trace,
        ..SeriesOptions::default()
    }
}

fn limit_constants(model: &RapModel) -> Result<LimitConstants> {
    let ctx = PotentialContext::new(&model.kernel, PotentialSettings::default())?;
    LimitConstants::compute(model, &ctx)
}

/// Dual-series replicas at `sites` with `n` terms each.
pub fn dual_replicas(model: &RapModel, sites: &[Site], n: usize, run: &RunSettings, trace: bool) -> Result<Vec<SeriesState>> {
    let nbhd = model.law.neighborhood().clone();
    let sampler = model.law.sampler();
    let opts = series_options(run, trace);
    run_replicas(run.replicas, run.threads, |r| {
        let key = StreamKey::new(run.seed, Domain::Dual, r);
        series_sample_sites(&nbhd, &sampler, &model.slope, sites, n, &key, &opts)
    })
}

/// Forward-simulation replicas of X_n(x) − X_n(0) − x·λ.
pub fn forward_replicas(model: &RapModel, x: Site, n: usize, run: &RunSettings) -> Result<Vec<f64>> {
    let nbhd = model.law.neighborhood().clone();
    let sampler = model.law.sampler();
    run_replicas(run.replicas, run.threads, |r| {
        let key = StreamKey::new(run.seed, Domain::Forward, r);
        fluctuation_sample(&nbhd, &sampler, &model.slope, x, n, &key, run.budget_cells)
    })
}

fn mean_check(b: &mut ReportBuilder, name: &str, s: &Summary) {
    let z = s.mean_z();
    b.check(name, z <= 4.0, format!("mean {:.6e}, {z:.2} standard errors from 0", s.mean));
}

fn var_check(b: &mut ReportBuilder, name: &str, s: &Summary, target: f64, alpha: f64) {
    let [lo, hi] = s.var_ci(alpha);
    b.check(
        name,
        s.var_covers(target, alpha),
        format!("target {target:.6e}, var {:.6e}, CI [{lo:.6e}, {hi:.6e}]", s.var),
    );
}

/// Forward simulation and dual series at the same (x, n): both variances
/// against the exact DP value, and a two-sample KS test between them.
pub fn equivalence_experiment(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ExperimentParams::Equivalence { x, n } = &cfg.params else {
        return Err(RapError::invalid("kind", "expected an equivalence experiment"));
    };
    cfg.validate_run(true)?;
    let model = cfg.model()?;
    model.require_nondegenerate()?;
    let x = site_of(&model, x, "x")?;
    let n = *n;
    let mut b = ReportBuilder::new("equivalence", cfg);
    let exact = truncated_second_moment(&model, x, n, &dp_options(&cfg.run))?;
    let fwd = forward_replicas(&model, x, n, &cfg.run)?;
    let dual = dual_replicas(&model, &[x], n, &cfg.run, false)?;
    let anomalies = dual.iter().map(|s| s.anomalies).sum();
    let dual: Vec<f64> = dual.iter().map(|s| s.value()).collect();
    let sf = Summary::new(&fwd)?;
    let sd = Summary::new(&dual)?;
    let alpha = cfg.run.alpha;
    var_check(&mut b, "forward variance covers exact", &sf, exact, alpha);
    var_check(&mut b, "dual variance covers exact", &sd, exact, alpha);
    mean_check(&mut b, "forward mean zero", &sf);
    mean_check(&mut b, "dual mean zero", &sd);
    let ks = ks_two_sample(&fwd, &dual)?;
    b.check("two-sample KS", ks.p >= alpha, format!("D = {:.4}, p = {:.4}", ks.d, ks.p));
    let extra = serde_json::json!({
        "exact_var": exact,
        "forward": sf,
        "dual": sd,
    });
    Ok(b.finish(&sd, alpha, exact, Some((ks.d, ks.p)), anomalies, extra))
}

/// Series at truncation A|x|², normalized by √P_x; KS against the normal
/// with the exact finite-size variance.
pub fn clt_experiment(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ExperimentParams::Clt { x, a } = &cfg.params else {
        return Err(RapError::invalid("kind", "expected a clt experiment"));
    };
    cfg.validate_run(true)?;
    let model = cfg.model()?;
    model.require_nondegenerate()?;
    let x = site_of(&model, x, "x")?;
    if !(*a >= 1.0) {
        return Err(RapError::invalid("A", format!("must be >= 1, got {a}")));
    }
    let p_x = scale_of(model.dim(), x);
    if !(p_x > 0.0) {
        return Err(RapError::invalid("x", "log|x| must be positive in d=2 (|x| > 1)"));
    }
    let n = (a * euclid(x).powi(2)).floor() as usize;
    let consts = limit_constants(&model)?;
    let predicted = match model.dim() {
        Dim::One => consts.h(*a)?,
        Dim::Two => consts.c,
    };
    let mut b = ReportBuilder::new("clt", cfg);
    let exact = truncated_second_moment(&model, x, n, &dp_options(&cfg.run))? / p_x;
    let states = dual_replicas(&model, &[x], n, &cfg.run, false)?;
    let anomalies = states.iter().map(|s| s.anomalies).sum();
    let samples: Vec<f64> = states.iter().map(|s| s.value() / p_x.sqrt()).collect();
    let s = Summary::new(&samples)?;
    let alpha = cfg.run.alpha;
    var_check(&mut b, "variance covers exact", &s, exact, alpha);
    mean_check(&mut b, "mean zero", &s);
    let ks = ks_test(&samples, |v| normal_cdf(v, exact))?;
    b.check("KS vs exact-variance normal", ks.p >= alpha, format!("D = {:.4}, p = {:.4}", ks.d, ks.p));
    let extra = serde_json::json!({
        "n_terms": n,
        "normalizer": p_x,
        "exact_var": exact,
        "limit_var": predicted,
        "var_ratio_to_limit": s.var / predicted,
        "exact_ratio_to_limit": exact / predicted,
        "constants": consts,
    });
    Ok(b.finish(&s, alpha, predicted, Some((ks.d, ks.p)), anomalies, extra))
}

#[derive(Serialize)]
struct MatrixSummary {
    #[serde(serialize_with = "as_rows")]
    empirical: DMatrix<f64>,
    #[serde(serialize_with = "as_rows")]
    standard_error: DMatrix<f64>,
    #[serde(serialize_with = "as_rows")]
    exact: DMatrix<f64>,
    uncovered: Vec<(usize, usize)>,
}

/// Joint series at several sites sharing one environment: empirical second
/// moments against the exact matrix (diagonal and cross terms).
pub fn moment_matrix_experiment(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ExperimentParams::MomentMatrix { sites, n } = &cfg.params else {
        return Err(RapError::invalid("kind", "expected a moment_matrix experiment"));
    };
    cfg.validate_run(false)?;
    let model = cfg.model()?;
    model.require_nondegenerate()?;
    let sites: Vec<Site> = sites.iter().map(|c| site_of(&model, c, "sites")).collect::<Result<_>>()?;
    let mut b = ReportBuilder::new("moment_matrix", cfg);
    let exact = truncated_moment_matrix(&model, &sites, *n, &dp_options(&cfg.run))?;
    let states = dual_replicas(&model, &sites, *n, &cfg.run, false)?;
    let anomalies = states.iter().map(|s| s.anomalies).sum();
    let rows: Vec<Vec<f64>> = states.iter().map(|s| s.values.clone()).collect();
    let est = CovEstimate::new(&rows)?;
    let alpha = cfg.run.alpha;
    let uncovered = est.uncovered(&exact, alpha);
    b.check(
        "second-moment matrix covers exact",
        uncovered.is_empty(),
        format!("entries outside CI: {uncovered:?}"),
    );
    for j in 0..sites.len() {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        mean_check(&mut b, &format!("mean zero at {:?}", sites[j]), &Summary::new(&col)?);
    }
    let first: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let s = Summary::new(&first)?;
    let extra = serde_json::json!({
        "sites": sites,
        "n_terms": n,
        "matrix": MatrixSummary {
            empirical: est.cov.clone(),
            standard_error: est.se.clone(),
            exact: exact.clone(),
            uncovered,
        },
    });
    Ok(b.finish(&s, alpha, exact[(0, 0)], None, anomalies, extra))
}

#[derive(Serialize)]
struct Probe {
    alpha: Vec<f64>,
    exact_var: f64,
    summary: Summary,
    ks_d: f64,
    ks_p: f64,
}

/// Finite-dimensional distributions in d=1: sites ⌊n t_j⌋ with A n² terms,
/// normalized by √(c n); empirical covariance against the exact matrix, and
/// Cramér–Wold probes along random directions.
pub fn fdd_experiment_d1(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ExperimentParams::Fdd { times, n, a, probes } = &cfg.params else {
        return Err(RapError::invalid("kind", "expected an fdd experiment"));
    };
    cfg.validate_run(true)?;
    let model = cfg.model()?;
    if model.dim() != Dim::One {
        return Err(RapError::invalid("dimension", "the fdd experiment is defined in d=1"));
    }
    model.require_nondegenerate()?;
    if times.len() > 4 {
        return Err(RapError::invalid("times", "at most 4 times"));
    }
    let consts = limit_constants(&model)?;
    let scan = corollary1_cov_scan_d1(&model, &consts, *a, *n, times, &dp_options(&cfg.run))?;
    let mut b = ReportBuilder::new("fdd", cfg);
    let norm = scan.normalizer.sqrt();
    let states = dual_replicas(&model, &scan.sites, scan.n_terms, &cfg.run, false)?;
    let anomalies = states.iter().map(|s| s.anomalies).sum();
    let rows: Vec<Vec<f64>> = states
        .iter()
        .map(|s| s.values.iter().map(|v| v / norm).collect())
        .collect();
    let est = CovEstimate::new(&rows)?;
    let alpha = cfg.run.alpha;
    let exact = &scan.normalized;
    let uncovered = est.uncovered(exact, alpha);
    b.check(
        "covariance covers exact",
        uncovered.is_empty(),
        format!("entries outside CI: {uncovered:?}"),
    );
    let k = times.len();
    let mut probe_out = Vec::with_capacity(*probes);
    for p in 0..*probes {
        let mut rng = StreamKey::new(cfg.run.seed, Domain::Probe, 0).rng(p as u64);
        let dir: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let av = DVector::from_column_slice(&dir);
        let target = (av.transpose() * exact * &av)[(0, 0)];
        let combo: Vec<f64> = rows.iter().map(|r| r.iter().zip(&dir).map(|(x, w)| x * w).sum()).collect();
        let s = Summary::new(&combo)?;
        let ks = ks_test(&combo, |v| normal_cdf(v, target))?;
        var_check(&mut b, &format!("probe {p} variance covers exact"), &s, target, alpha);
        b.check(&format!("probe {p} KS"), ks.p >= alpha, format!("D = {:.4}, p = {:.4}", ks.d, ks.p));
        probe_out.push(Probe {
            alpha: dir,
            exact_var: target,
            summary: s,
            ks_d: ks.d,
            ks_p: ks.p,
        });
    }
    let last: Vec<f64> = rows.iter().map(|r| r[k - 1]).collect();
    let s = Summary::new(&last)?;
    let ks = ks_test(&last, |v| normal_cdf(v, exact[(k - 1, k - 1)]))?;
    b.check("last-time KS", ks.p >= alpha, format!("D = {:.4}, p = {:.4}", ks.d, ks.p));
    let rel_to_limit = exact
        .iter()
        .zip(scan.limit.iter())
        .map(|(e, l)| (e / l - 1.0).abs())
        .fold(0.0f64, f64::max);
    let extra = serde_json::json!({
        "sites": scan.sites,
        "n_terms": scan.n_terms,
        "normalizer": scan.normalizer,
        "matrix": MatrixSummary {
            empirical: est.cov.clone(),
            standard_error: est.se.clone(),
            exact: exact.clone(),
            uncovered,
        },
        "limit": scan.limit.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        "exact_max_rel_dev_from_limit": rel_to_limit,
        "probes": probe_out,
        "constants": consts,
    });
    Ok(b.finish(&s, alpha, exact[(k - 1, k - 1)], Some((ks.d, ks.p)), anomalies, extra))
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition3Row {
    pub x: Site,
    pub n_terms: usize,
    /// Pair (x, 0).
    pub cross: Summary,
    /// Pair (0, 0).
    pub diagonal: Summary,
}

/// (1/P_x) Σ_{i≤A|x|²}[quenched coincidence − annealed P(D_{i−1}=0)] for the
/// pairs (x, 0) and (0, 0), per replica, for each x.
pub fn condition3_diagnostic(cfg: &ExperimentConfig) -> Result<TestReport> {
    let ExperimentParams::Condition3 { xs, a } = &cfg.params else {
        return Err(RapError::invalid("kind", "expected a condition3 experiment"));
    };
    cfg.validate_run(false)?;
    let model = cfg.model()?;
    if xs.is_empty() {
        return Err(RapError::invalid("xs", "need at least one site"));
    }
    if !(*a >= 1.0) {
        return Err(RapError::invalid("A", format!("must be >= 1, got {a}")));
    }
    let mut b = ReportBuilder::new("condition3", cfg);
    let dp = dp_options(&cfg.run);
    let mut rows = Vec::with_capacity(xs.len());
    let mut anomalies = 0;
    for c in xs {
        let x = site_of(&model, c, "xs")?;
        let p_x = scale_of(model.dim(), x);
        if !(p_x > 0.0) {
            return Err(RapError::invalid("xs", "log|x| must be positive in d=2 (|x| > 1)"));
        }
        let n = (a * euclid(x).powi(2)).floor() as usize;
        let ann_x = d_return_probs(&model.kernel, x, n.saturating_sub(1), &dp)?;
        let ann_0 = d_return_probs(&model.kernel, ORIGIN, n.saturating_sub(1), &dp)?;
        let states = dual_replicas(&model, &[x], n, &cfg.run, true)?;
        anomalies += states.iter().map(|s| s.anomalies).sum::<usize>();
        let mut cross = Vec::with_capacity(states.len());
        let mut diag = Vec::with_capacity(states.len());
        for s in &states {
            let t = s.trace.as_ref().expect("traced");
            let (mut u, mut v) = (0.0, 0.0);
            for (k, pt) in t.iter().enumerate() {
                u += pt.x_vs_0 - ann_x[k];
                v += pt.zero_vs_0 - ann_0[k];
            }
            cross.push(u / p_x);
            diag.push(v / p_x);
        }
        let row = Condition3Row {
            x,
            n_terms: n,
            cross: Summary::new(&cross)?,
            diagonal: Summary::new(&diag)?,
        };
        mean_check(&mut b, &format!("pair (x,0) mean zero at x={x:?}"), &row.cross);
        mean_check(&mut b, &format!("pair (0,0) mean zero at x={x:?}"), &row.diagonal);
        rows.push(row);
    }
    for (name, pick) in [("(x,0)", 0usize), ("(0,0)", 1)] {
        let vars: Vec<f64> = rows
            .iter()
            .map(|r| if pick == 0 { r.cross.var } else { r.diagonal.var })
            .collect();
        let dec = vars.windows(2).all(|w| w[1] < w[0]);
        b.check(&format!("pair {name} variance decreasing in x"), dec, format!("{vars:?}"));
    }
    let last = rows.last().expect("nonempty").cross;
    let extra = serde_json::json!({ "rows": rows });
    Ok(b.finish(&last, cfg.run.alpha, 0.0, None, anomalies, extra))
}

/// Dispatches on the experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TestReport> {
    match cfg.params {
        ExperimentParams::Equivalence { .. } => equivalence_experiment(cfg),
        ExperimentParams::Clt { .. } => clt_experiment(cfg),
        ExperimentParams::MomentMatrix { .. } => moment_matrix_experiment(cfg),
        ExperimentParams::Fdd { .. } => fdd_experiment_d1(cfg),
        ExperimentParams::Condition3 { .. } => condition3_diagnostic(cfg),
    }
}
