use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ratetip::asymptotics::{
    default_r_samples, estimate_error_constant, max_defect, validity_radius, SeriesCoefficients, SeriesSummary,
    MAX_SERIES_ORDER,
};
use ratetip::equilibria::QuasiStaticBranch;
use ratetip::grid::{TauGrid, DEFAULT_GRID_POINTS};
use ratetip::integrate::{estimate_pullback_attractor, estimate_pullback_repeller, PullbackError, PullbackOptions};
use ratetip::model::{builtin, parse_model_file, validate_ramp, ModelSpec, RampReport};
use ratetip::tipping::{
    delta_curve, detect_tipping, indicator_crossing, refine_bracket, TipOptions, TippingSetup, DEFAULT_EPSILON, DEFAULT_TAU,
};

use crate::config::{ConfigFile, Range};
use crate::error::CliError;
use crate::output::{write_json, write_table, Table};
use crate::GlobalArgs;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_OUT: &str = "out";

pub struct Context {
    pub cfg: ConfigFile,
    pub model: ModelSpec,
    pub out: PathBuf,
    pub tol: f64,
    pub seed: u64,
}

impl Context {
    pub fn resolve(g: &GlobalArgs, cfg: ConfigFile) -> Result<Self, CliError> {
        let tol: f64 = cfg.resolve(g.tol, "tol", DEFAULT_TOL)?;
        if !(tol > 0.0 && tol < 1e-2) {
            return Err(CliError::Usage(format!("tol = {tol} must lie in (0, 1e-2)")));
        }
        let seed = cfg.resolve(g.seed, "seed", 0u64)?;
        let out = cfg.resolve(g.out.clone(), "out", PathBuf::from(DEFAULT_OUT))?;
        let model_file: Option<PathBuf> = cfg.resolve_opt(g.model_file.clone(), "model_file")?;
        let model = match model_file {
            Some(path) => {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Usage(format!("cannot read model file {}: {e}", path.display())))?;
                parse_model_file(&text)?.into_model()?
            }
            None => {
                let name: String = cfg.resolve(g.model.clone(), "model", "quad_arctan".to_string())?;
                let zeta: f64 = cfg.resolve(g.zeta, "zeta", 0.1)?;
                builtin(&name, &BTreeMap::from([("zeta".to_string(), zeta)]))?
            }
        };
        Ok(Context { cfg, model, out, tol, seed })
    }

    pub fn table(&self, header: &[&str]) -> Table {
        let mut t = Table::new(header.iter().copied()).meta("model", self.model.name());
        for (k, v) in self.model.params() {
            t = t.meta(k, v);
        }
        t
    }
}

fn announce(path: PathBuf) {
    println!("wrote {}", path.display());
}

pub fn branches(ctx: &Context) -> Result<(), CliError> {
    let setup = TippingSetup::new(&ctx.model, 0)?;
    let (s, u) = (setup.stable(), setup.unstable());
    let sigma = setup.orientation();
    let mut t = ctx
        .table(&["tau", "lambda", "Xs", "Xu", "gap", "dxf_s", "dxf_u"])
        .meta("min_gap", setup.gap())
        .meta("margin_s", s.margin())
        .meta("margin_u", u.margin())
        .meta("tau_tail", s.tau_tail());
    for k in 0..s.tau().len() {
        let (xs, xu) = (s.values()[k], u.values()[k]);
        t.push(vec![s.tau()[k], s.lambda_values()[k], xs, xu, sigma * (xs - xu), s.dxf()[k], u.dxf()[k]]);
    }
    announce(write_table(&ctx.out, "branches.csv", &t)?);
    Ok(())
}

fn check_order(order: usize) -> Result<(), CliError> {
    if order > MAX_SERIES_ORDER {
        return Err(CliError::Usage(format!(
            "series order too high: requested {order}, maximum is {MAX_SERIES_ORDER}"
        )));
    }
    Ok(())
}

fn coefficient_table(ctx: &Context, series: &SeriesCoefficients, label: &str) -> Table {
    let n = series.order();
    let names: Vec<String> = (0..=n).map(|i| format!("a_{i}")).collect();
    let mut header = vec!["tau"];
    header.extend(names.iter().map(String::as_str));
    let mut t = ctx.table(&header).meta("branch", label).meta("order", n);
    for (k, &tau) in series.tau().iter().enumerate() {
        let mut row = vec![tau];
        row.extend(series.values().iter().map(|col| col[k]));
        t.push(row);
    }
    t
}

#[derive(Serialize)]
struct SeriesDoc {
    model: String,
    params: BTreeMap<String, f64>,
    order: usize,
    stable: SeriesSummary,
    unstable: SeriesSummary,
    /// Slow-equation defect of each truncation at `r = 0.01`.
    defect_at_r_0_01: Vec<[f64; 2]>,
}

fn summary(series: &SeriesCoefficients, fit: bool, tol: f64) -> Result<SeriesSummary, CliError> {
    let error_fit = if fit {
        Some(estimate_error_constant(series, &default_r_samples(), &PullbackOptions::new(tol))?)
    } else {
        None
    };
    Ok(SeriesSummary {
        kind: series.kind(),
        order: series.order(),
        sup_norms: series.sup_norms().to_vec(),
        validity_radius: validity_radius(series, 10.0),
        error_fit,
    })
}

pub fn series(ctx: &Context, order: Option<usize>, no_fit: bool) -> Result<(), CliError> {
    let order: usize = ctx.cfg.resolve(order, "order", 3)?;
    check_order(order)?;
    let fit = !no_fit && ctx.cfg.resolve(None, "fit", true)?;
    let setup = TippingSetup::new(&ctx.model, order)?;
    let (ss, su) = (setup.series_s(), setup.series_u());
    announce(write_table(&ctx.out, "series_stable.csv", &coefficient_table(ctx, ss, "stable"))?);
    announce(write_table(&ctx.out, "series_unstable.csv", &coefficient_table(ctx, su, "unstable"))?);
    let doc = SeriesDoc {
        model: ctx.model.name().to_string(),
        params: ctx.model.params().clone(),
        order,
        stable: summary(ss, fit, ctx.tol)?,
        unstable: summary(su, fit, ctx.tol)?,
        defect_at_r_0_01: (0..=order).map(|m| [m as f64, max_defect(&ss.truncated(m), &ctx.model, 0.01)]).collect(),
    };
    announce(write_json(&ctx.out, "series.json", &doc)?);
    Ok(())
}

/// Samples of a pullback estimate on `times`, NaN where it is undefined.
/// An escape before the window is reported through `escape`.
pub fn pullback_curve(
    model: &ModelSpec,
    branch: &QuasiStaticBranch,
    attractor: bool,
    r: f64,
    window: (f64, f64),
    tol: f64,
    times: &[f64],
) -> Result<(Vec<f64>, Option<f64>), CliError> {
    let opts = PullbackOptions::new(tol);
    let sol = if attractor {
        estimate_pullback_attractor(model, branch, r, window, &opts)
    } else {
        estimate_pullback_repeller(model, branch, r, window, &opts)
    };
    match sol {
        Ok(s) => Ok((times.iter().map(|&t| s.eval(t).unwrap_or(f64::NAN)).collect(), s.escape_time())),
        Err(PullbackError::Escape { t_escape, .. }) => Ok((vec![f64::NAN; times.len()], Some(t_escape))),
        Err(e) => Err(e.into()),
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| if k + 1 == n { b } else { a + (b - a) * k as f64 / (n - 1) as f64 }).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

pub fn pullback(ctx: &Context, r: Option<f64>, window: Option<Range>, side: Option<String>) -> Result<(), CliError> {
    let r: f64 = ctx.cfg.resolve_opt(r, "r")?.ok_or_else(|| CliError::Usage("pullback needs --r".into()))?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(CliError::Usage(format!("rate r = {r} must be > 0")));
    }
    let Range(lo, hi) = ctx.cfg.resolve(window, "window", Range(-20.0, 20.0))?;
    let side: String = ctx.cfg.resolve(side, "side", "both".to_string())?;
    let (want_a, want_r) = match side.as_str() {
        "attractor" => (true, false),
        "repeller" => (false, true),
        "both" => (true, true),
        other => return Err(CliError::Usage(format!("unknown side '{other}' (attractor, repeller, both)"))),
    };
    let setup = TippingSetup::new(&ctx.model, 0)?;
    let times = linspace(lo, hi, 2001);
    let nan = (vec![f64::NAN; times.len()], None);
    let (xm, esc_m) = if want_a {
        pullback_curve(&ctx.model, setup.stable(), true, r, (lo, hi), ctx.tol, &times)?
    } else {
        nan.clone()
    };
    let (xp, esc_p) = if want_r {
        pullback_curve(&ctx.model, setup.unstable(), false, r, (lo, hi), ctx.tol, &times)?
    } else {
        nan
    };
    let mut t = ctx
        .table(&["t", "x_minus", "x_plus", "Xs", "Xu"])
        .meta("r", r)
        .meta("escape_x_minus", fmt_opt(esc_m))
        .meta("escape_x_plus", fmt_opt(esc_p));
    for (k, &tt) in times.iter().enumerate() {
        t.push(vec![tt, xm[k], xp[k], setup.stable().value_at(r * tt), setup.unstable().value_at(r * tt)]);
    }
    announce(write_table(&ctx.out, "pullback.csv", &t)?);
    Ok(())
}

pub struct TipArgs {
    pub order: Option<usize>,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub r_range: Option<Range>,
    pub delta: bool,
    pub indicator: bool,
}

pub fn tip(ctx: &Context, a: TipArgs) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let n: usize = cfg.resolve(a.order, "order", 1)?;
    check_order(n)?;
    let epsilon_opt: Option<f64> = cfg.resolve_opt(a.epsilon, "epsilon")?;
    let tau: f64 = cfg.resolve(a.tau, "tau", DEFAULT_TAU)?;
    let Range(r_min, r_max) = cfg.resolve(a.r_range, "r_range", Range(0.05, 5.0))?;
    if !(r_min > 0.0) {
        return Err(CliError::Usage(format!("r range must be positive, got {r_min}:{r_max}")));
    }
    let delta = a.delta || cfg.resolve(None, "delta", false)?;
    let indicator = a.indicator || cfg.resolve(None, "indicator", false)?;

    let setup = TippingSetup::new(&ctx.model, n)?;
    let epsilon = epsilon_opt.unwrap_or_else(|| DEFAULT_EPSILON.min(setup.default_epsilon()));
    let opts = TipOptions { probe_tol: ctx.tol, ..TipOptions::default() };
    let mut report = detect_tipping(&setup, n, epsilon, tau, (r_min, r_max), &opts)?;

    if let (true, Some([lo, hi])) = (delta, report.bracket) {
        let (r_star, _) = refine_bracket(&setup, n, epsilon, tau, lo, hi, 1e-12, ctx.tol)?;
        let taus: Vec<f64> = (0..=tau.floor() as usize).map(|k| k as f64).collect();
        let curve = delta_curve(&setup, n, epsilon, r_star, &taus, 1e-11, ctx.tol)?;
        report.delta_curve = curve.iter().filter(|d| d.defined).map(|d| [d.tau, d.delta]).collect();
    }
    if indicator {
        let (cross, curve) = indicator_crossing(&setup, r_min, r_max, 30.0, 1e-4, 1e-9)?;
        report.indicator_crossing = cross;
        report.indicator_curve = curve.iter().map(|s| [s.r, s.value]).collect();
    }

    let mut t = ctx
        .table(&["r", "tau", "d_out", "d_in", "flags"])
        .meta("order", n)
        .meta("epsilon", epsilon)
        .meta("flags", "1 = D_out from escape verdict, 2 = D_in from escape verdict");
    let mut rows: Vec<Vec<f64>> = report
        .evidence
        .iter()
        .map(|s| {
            let value = |d: &ratetip::tipping::Discriminant| d.value.unwrap_or(d.sign as f64 * f64::INFINITY);
            let flags = (s.d_out.escape_verdict as u8) + 2 * (s.d_in.escape_verdict as u8);
            vec![s.config.r, s.config.tau, value(&s.d_out), value(&s.d_in), flags as f64]
        })
        .collect();
    rows.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
    rows.dedup();
    for row in rows {
        t.push(row);
    }
    announce(write_json(&ctx.out, "tip.json", &report)?);
    announce(write_table(&ctx.out, "discriminants.csv", &t)?);
    println!("classification: {}", serde_json::to_value(report.classification).unwrap_or_default());
    if let Some(r) = report.r_star {
        println!("r_star: {r}");
    }
    Ok(())
}

#[derive(Serialize)]
struct JetCheck {
    x: f64,
    lambda: f64,
    dx_error: f64,
    dxx_error: f64,
    dlambda_error: f64,
}

#[derive(Serialize)]
struct ValidateDoc {
    model: String,
    seed: u64,
    ramp: RampReport,
    jet_checks: Vec<JetCheck>,
    jet_max_error: f64,
    branch_residual: f64,
    min_gap: f64,
    margin_s: f64,
    margin_u: f64,
    passed: bool,
    failures: Vec<String>,
}

pub fn validate(ctx: &Context, samples: Option<usize>) -> Result<(), CliError> {
    let samples: usize = ctx.cfg.resolve(samples, "samples", 64)?;
    let model = &ctx.model;
    let ramp = model.ramp();
    let grid = TauGrid::graded(ramp.tail_tau(), DEFAULT_GRID_POINTS, 1.0);
    let ramp_report = validate_ramp(ramp, grid.nodes());
    let setup = TippingSetup::new(model, 1)?;

    let field = model.field();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let (xa, xb) = {
        let s = setup.stable().values();
        let u = setup.unstable().values();
        let lo = s.iter().chain(u).copied().fold(f64::INFINITY, f64::min);
        let hi = s.iter().chain(u).copied().fold(f64::NEG_INFINITY, f64::max);
        (lo - 1.0, hi + 1.0)
    };
    let (la, lb) = (ramp.lambda_minus().min(ramp.lambda_plus()), ramp.lambda_minus().max(ramp.lambda_plus()));
    let h = 1e-4;
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    let jet_checks: Vec<JetCheck> = (0..samples)
        .map(|_| {
            let x = rng.gen_range(xa..xb);
            let lambda = rng.gen_range(la..=lb);
            let c = field.taylor(x, lambda, 2);
            let f = |x: f64| field.eval(x, lambda);
            let fd1 = (f(x + h) - f(x - h)) / (2.0 * h);
            let fd2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
            let fdl = (field.eval(x, lambda + h) - field.eval(x, lambda - h)) / (2.0 * h);
            JetCheck {
                x,
                lambda,
                dx_error: rel(c.derivative(1), fd1),
                dxx_error: rel(c.derivative(2), fd2),
                dlambda_error: rel(field.param_deriv(x, lambda), fdl),
            }
        })
        .collect();
    let jet_max_error =
        jet_checks.iter().map(|j| j.dx_error.max(j.dxx_error).max(j.dlambda_error)).fold(0.0, f64::max);

    let mut failures = Vec::new();
    if !ramp_report.is_clean() {
        failures.push(format!("ramp: {} violation(s)", ramp_report.violations.len()));
    }
    if jet_max_error > 1e-4 {
        failures.push(format!("jets disagree with finite differences (max relative error {jet_max_error:.3e})"));
    }
    let branch_residual = setup.stable().residual_max().max(setup.unstable().residual_max());
    if branch_residual > 1e-8 {
        failures.push(format!("branch residual {branch_residual:.3e}"));
    }
    let doc = ValidateDoc {
        model: model.name().to_string(),
        seed: ctx.seed,
        ramp: ramp_report,
        jet_checks,
        jet_max_error,
        branch_residual,
        min_gap: setup.gap(),
        margin_s: setup.stable().margin(),
        margin_u: setup.unstable().margin(),
        passed: failures.is_empty(),
        failures: failures.clone(),
    };
    announce(write_json(&ctx.out, "validate.json", &doc)?);
    if failures.is_empty() {
        println!("validate: all checks passed");
        Ok(())
    } else {
        Err(CliError::Math(format!("validation failed: {}", failures.join("; "))))
    }
}
