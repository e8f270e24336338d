//! One function per subcommand. Each writes its files into the output
//! directory and returns whether its statistical checks passed.

use std::fs;
use std::io::Write;
use std::path::Path;

use rap_core::chains::{d_return_probs, h_return_probs, losa_scan, renewal_check, tau_tail, DpOptions};
use rap_core::constants::LimitConstants;
use rap_core::exec::default_threads;
use rap_core::experiments::{run_experiment, ExperimentConfig, ExperimentParams, RunSettings, TestReport};
use rap_core::lattice::{euclid, Dim, Site, Stencil};
use rap_core::model::RapModel;
use rap_core::potential::{PotentialContext, PotentialSettings};
use rap_core::variance::{
    corollary1_cov_scan_d1, corollary1_cov_scan_d2, scale_of, total_second_moment_potential, truncated_second_moment,
    CovScan,
};
use serde::Serialize;

use crate::config::*;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}
use crate::CliError;

/// Run-level settings after merging flags, environment and file.
#[derive(Debug, Clone)]
pub struct Env {
    pub model: RapModel,
    pub seed: Option<u64>,
    pub replicas: usize,
    pub threads: usize,
    pub alpha: f64,
    pub budget_cells: usize,
    pub out: std::path::PathBuf,
    pub command: &'static str,
}

pub const DEFAULT_REPLICAS: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_BUDGET: usize = 20_000_000;

impl Env {
    fn dp(&self) -> DpOptions {
        DpOptions {
            budget_cells: self.budget_cells,
            ..DpOptions::default()
        }
    }

    fn dim(&self) -> Dim {
        self.model.dim()
    }

    fn site(&self, c: &[i64], name: &str) -> Result<Site, CliError> {
        self.dim().site(c).map_err(|_| {
            CliError::Validation(format!(
                "invalid `{name}`: expected {} coordinate(s), got {c:?}",
                self.dim().as_usize()
            ))
        })
    }

    fn experiment(&self, params: ExperimentParams) -> Result<ExperimentConfig, CliError> {
        let seed = self.seed.ok_or_else(|| {
            CliError::Validation(format!(
                "invalid `seed`: required for `{}` (pass --seed or set seed in [run])",
                self.command
            ))
        })?;
        Ok(ExperimentConfig {
            law: self.model.law.to_spec(),
            slope: self.model.slope.0[..self.dim().as_usize()].to_vec(),
            run: RunSettings {
                seed,
                replicas: self.replicas,
                threads: self.threads,
                alpha: self.alpha,
                budget_cells: self.budget_cells,
            },
            params,
        })
    }
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Validation(format!("invalid `{name}`: required")))
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn site_label(dim: Dim, s: Site) -> String {
    match dim {
        Dim::One => format!("{}", s[0]),
        Dim::Two => format!("{},{}", s[0], s[1]),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for r in rows {
        writeln!(f, "{}", r.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn context(model: &RapModel) -> Result<PotentialContext, CliError> {
    Ok(PotentialContext::new(&model.kernel, PotentialSettings::default())?)
}

fn stencil_lines(name: &str, dim: Dim, s: &Stencil) -> Vec<String> {
    s.entries()
        .iter()
        .map(|&(site, p)| format!("{name}({}) = {p}", site_label(dim, site)))
        .collect()
}

#[derive(Serialize)]
struct ConstantsOut {
    sigma2: f64,
    mu: f64,
    q_h: Vec<(Site, f64)>,
    q_d: Vec<(Site, f64)>,
    quadratic_form: [[f64; 2]; 2],
    form_det: f64,
    limits: LimitConstants,
    potential: Vec<(Site, f64)>,
    h: Vec<(f64, f64)>,
}

pub fn constants(env: &Env, args: &ConstantsArgs) -> Result<bool, CliError> {
    let m = &env.model;
    let dim = env.dim();
    let ctx = context(m)?;
    let consts = LimitConstants::compute(m, &ctx)?;
    let sites = match &args.sites {
        Some(s) => s.0.clone(),
        None => match dim {
            Dim::One => vec![vec![1], vec![2], vec![4], vec![8]],
            Dim::Two => vec![vec![1, 0], vec![1, 1], vec![2, 0], vec![4, 0], vec![8, 0]],
        },
    };
    let mut potential = Vec::new();
    for c in &sites {
        let s = env.site(c, "sites")?;
        potential.push((s, ctx.potential_kernel(s)?));
    }
    let a_values = args.a_values.clone().map(|r| r.0).unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0, 16.0]);
    let h = match dim {
        Dim::One => a_values.iter().map(|&a| Ok((a, consts.h(a)?))).collect::<Result<Vec<_>, CliError>>()?,
        Dim::Two => Vec::new(),
    };
    let form = ctx.form();
    let q = form.matrix();
    let out = ConstantsOut {
        sigma2: m.sigma2(),
        mu: m.drift.mu,
        q_h: m.kernel.q_h().entries().to_vec(),
        q_d: m.kernel.q_d().entries().to_vec(),
        quadratic_form: [[q[(0, 0)], q[(0, 1)]], [q[(1, 0)], q[(1, 1)]]],
        form_det: form.det(),
        limits: consts,
        potential,
        h,
    };
    let mut lines = vec![format!("dimension = {}", dim.as_usize()), format!("sigma2 = {}", out.sigma2), format!("mu = {}", out.mu)];
    lines.extend(stencil_lines("q_H", dim, m.kernel.q_h()));
    lines.extend(stencil_lines("q_D", dim, m.kernel.q_d()));
    match dim {
        Dim::One => lines.push(format!("sigma_H2 = {}", form.sigma_h2())),
        Dim::Two => {
            lines.push(format!("Q = [[{}, {}], [{}, {}]]", q[(0, 0)], q[(0, 1)], q[(1, 0)], q[(1, 1)]));
            lines.push(format!("det_Q = {}", form.det()));
        }
    }
    lines.push(format!("frak_A = {}", consts.frak_a));
    lines.push(format!("c = {}", consts.c));
    if let Some(cp) = consts.c_prime {
        lines.push(format!("c_prime = {cp}"));
    }
    for (s, a) in &out.potential {
        lines.push(format!("a({}) = {a}", site_label(dim, *s)));
    }
    for (a, h) in &out.h {
        lines.push(format!("h({a}) = {h}"));
    }
    for l in &lines {
        say!("{l}");
    }
    write_json(&env.out.join("constants.json"), &out)?;
    Ok(true)
}

pub fn green(env: &Env, args: &GreenArgs) -> Result<bool, CliError> {
    let x = env.site(&required(args.x.clone(), "x")?.0, "x")?;
    let nmax = args.nmax.unwrap_or(256);
    let m = &env.model;
    let dp = env.dp();
    let ctx = context(m)?;
    let frak_a = ctx.frak_a(m.kernel.q_d())?;
    let ph = h_return_probs(&m.kernel, nmax, &dp)?;
    let p0 = d_return_probs(&m.kernel, [0, 0], nmax, &dp)?;
    let px = d_return_probs(&m.kernel, x, nmax, &dp)?;
    let tail = tau_tail(&m.kernel, x, nmax, &dp)?;
    let renewal = renewal_check(&m.kernel, x, nmax, &dp)?;
    let mut cum = 0.0;
    let mut rows = Vec::with_capacity(nmax + 1);
    let mut worst = 0.0f64;
    for n in 0..=nmax {
        cum += p0[n];
        let asym = match env.dim() {
            Dim::One if n >= 1 => p0[n] / ctx.lemma4_prediction(frak_a, n),
            Dim::Two if n >= 2 => cum / ctx.lemma4_prediction(frak_a, n),
            _ => f64::NAN,
        };
        let lclt = if n >= 1 { ctx.local_clt_ratio(n, ph[n]) } else { f64::NAN };
        let r = renewal[n];
        worst = worst.max(r.residual.abs());
        rows.push(vec![
            n.to_string(),
            real(ph[n]),
            real(p0[n]),
            real(px[n]),
            real(tail[n]),
            real(r.green_diff),
            real(r.renewal),
            real(r.residual),
            real(asym),
            real(lclt),
        ]);
    }
    write_csv(
        &env.out.join("green.csv"),
        &["n", "p0_h", "p0_d", "px_d", "tau_tail_x", "green_diff", "renewal", "residual", "return_asymptotic_ratio", "local_clt_ratio"],
        &rows,
    )?;
    say!("max |renewal residual| = {worst:.3e} over n <= {nmax}");
    Ok(true)
}

pub fn losa(env: &Env, args: &LosaArgs) -> Result<bool, CliError> {
    let l = env.site(&required(args.l.clone(), "l")?.0, "l")?;
    let lp = env.site(&required(args.lp.clone(), "lp")?.0, "lp")?;
    let nmax = args.nmax.unwrap_or(10_000);
    let scan = losa_scan(&env.model.kernel, l, lp, nmax, &env.dp())?;
    let rows: Vec<Vec<String>> = scan.values.iter().enumerate().map(|(n, v)| vec![n.to_string(), real(*v)]).collect();
    write_csv(&env.out.join("losa_scan.csv"), &["n", "partial_sum"], &rows)?;
    say!(
        "max |S(n)|: first half {:.6e}, second half {:.6e}",
        scan.max_abs_in(0, nmax / 2),
        scan.max_abs_in(nmax / 2, nmax)
    );
    Ok(true)
}

pub fn variance_scan(env: &Env, args: &VarianceScanArgs) -> Result<bool, CliError> {
    let m = &env.model;
    let a = args.a.unwrap_or(2.0);
    if !(a >= 1.0) {
        return Err(CliError::Validation(format!("invalid `a`: must be >= 1, got {a}")));
    }
    let xs = match &args.xs {
        Some(s) => s.0.clone(),
        None => match env.dim() {
            Dim::One => vec![vec![8], vec![16], vec![32], vec![64]],
            Dim::Two => vec![vec![8, 0], vec![16, 0], vec![32, 0]],
        },
    };
    let ctx = context(m)?;
    let consts = LimitConstants::compute(m, &ctx)?;
    let predicted = match env.dim() {
        Dim::One => consts.h(a)?,
        Dim::Two => consts.c,
    };
    let mut rows = Vec::new();
    for c in &xs {
        let x = env.site(c, "xs")?;
        let p = scale_of(env.dim(), x);
        if !(p > 0.0) {
            return Err(CliError::Validation(format!("invalid `xs`: log|x| must be positive, got x = {c:?}")));
        }
        let n = (a * euclid(x).powi(2)).floor() as usize;
        let raw = truncated_second_moment(m, x, n.max(1), &env.dp())?;
        let total = total_second_moment_potential(m, &ctx, consts.frak_a, x)?;
        say!("x = {}: n = {n}, normalized = {:.6}, predicted = {predicted:.6}", site_label(env.dim(), x), raw / p);
        rows.push(vec![
            x[0].to_string(),
            x[1].to_string(),
            n.to_string(),
            real(raw),
            real(raw / p),
            real(predicted),
            real(raw / p / predicted),
            real(total / p),
        ]);
    }
    write_csv(
        &env.out.join("variance_scan.csv"),
        &["x1", "x2", "n_terms", "raw", "normalized", "predicted", "ratio", "total_normalized"],
        &rows,
    )?;
    Ok(true)
}

pub fn cov_scan(env: &Env, args: &CovScanArgs) -> Result<bool, CliError> {
    let m = &env.model;
    let consts = LimitConstants::compute(m, &context(m)?)?;
    let scan: CovScan = match env.dim() {
        Dim::One => {
            let times = args.times.clone().map(|r| r.0).unwrap_or_else(|| vec![0.5, 1.0]);
            corollary1_cov_scan_d1(m, &consts, args.a.unwrap_or(4.0), args.n.unwrap_or(32), &times, &env.dp())?
        }
        Dim::Two => {
            let pts = args.points.clone().map(|p| p.0).unwrap_or_else(|| vec![vec![1, 0], vec![0, 1]]);
            let pts: Vec<Site> = pts.iter().map(|c| env.site(c, "points")).collect::<Result<_, _>>()?;
            corollary1_cov_scan_d2(m, &consts, &pts, args.n.unwrap_or(8), &env.dp())?
        }
    };
    let k = scan.sites.len();
    let mut rows = Vec::new();
    for i in 0..k {
        for j in 0..k {
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                format!("\"{}\"", site_label(env.dim(), scan.sites[i])),
                format!("\"{}\"", site_label(env.dim(), scan.sites[j])),
                real(scan.raw[(i, j)]),
                real(scan.normalized[(i, j)]),
                real(scan.limit[(i, j)]),
            ]);
        }
    }
    write_csv(
        &env.out.join("cov_scan.csv"),
        &["i", "j", "site_i", "site_j", "raw", "normalized", "limit"],
        &rows,
    )?;
    write_json(&env.out.join("cov_scan.json"), &scan)?;
    say!("normalized {}", scan.normalized);
    say!("limit {}", scan.limit);
    Ok(true)
}

fn report(env: &Env, r: &TestReport) -> Result<bool, CliError> {
    write_json(&env.out.join("report.json"), r)?;
    say!(
        "{}: pass = {}, n = {}, mean = {:.6e}, var = {:.6e}, var_ci = [{:.6e}, {:.6e}], predicted_var = {:.6e}, ks_p = {}",
        r.experiment,
        r.pass,
        r.n_samples,
        r.mean,
        r.var,
        r.var_ci[0],
        r.var_ci[1],
        r.predicted_var,
        r.ks_p.map_or("n/a".to_string(), |p| format!("{p:.4}"))
    );
    for c in &r.checks {
        say!("  [{}] {}: {}", if c.pass { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(r.pass)
}

pub fn forward_sim(env: &Env, args: &ForwardArgs) -> Result<bool, CliError> {
    let x = required(args.x.clone(), "x")?.0;
    let cfg = env.experiment(ExperimentParams::Equivalence { x, n: args.n.unwrap_or(64) })?;
    report(env, &run_experiment(&cfg)?)
}

pub fn clt(env: &Env, args: &CltArgs) -> Result<bool, CliError> {
    let x = required(args.x.clone(), "x")?.0;
    let cfg = env.experiment(ExperimentParams::Clt { x, a: args.a.unwrap_or(2.0) })?;
    report(env, &run_experiment(&cfg)?)
}

pub fn fdd(env: &Env, args: &FddArgs) -> Result<bool, CliError> {
    let cfg = env.experiment(ExperimentParams::Fdd {
        times: args.times.clone().map(|r| r.0).unwrap_or_else(|| vec![0.5, 1.0]),
        n: args.n.unwrap_or(32),
        a: args.a.unwrap_or(4.0),
        probes: args.probes.unwrap_or(3),
    })?;
    report(env, &run_experiment(&cfg)?)
}

pub fn cross_moments(env: &Env, args: &CrossMomentArgs) -> Result<bool, CliError> {
    let sites = required(args.sites.clone(), "sites")?.0;
    let cfg = env.experiment(ExperimentParams::MomentMatrix { sites, n: args.n.unwrap_or(64) })?;
    report(env, &run_experiment(&cfg)?)
}

pub fn condition3(env: &Env, args: &Condition3Args) -> Result<bool, CliError> {
    let xs = match &args.xs {
        Some(s) => s.0.clone(),
        None => match env.dim() {
            Dim::One => vec![vec![8], vec![16], vec![32]],
            Dim::Two => vec![vec![4, 0], vec![8, 0], vec![16, 0]],
        },
    };
    let cfg = env.experiment(ExperimentParams::Condition3 { xs, a: args.a.unwrap_or(2.0) })?;
    report(env, &run_experiment(&cfg)?)
}

pub fn resolve_threads(flag: Option<usize>, file: Option<usize>) -> usize {
    flag.or(file).filter(|&t| t > 0).unwrap_or_else(default_threads)
}
