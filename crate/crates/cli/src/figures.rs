//! Figure data: one CSV per panel, plotting left to external tools.

use ratetip::asymptotics::partial_sum_to;
use ratetip::integrate::{solve_ivp, Trajectory};
use ratetip::model::{quad_arctan, ModelSpec};
use ratetip::tipping::{delta_curve, detect_tipping, refine_bracket, TipOptions, TippingSetup};

use crate::commands::{linspace, pullback_curve, Context};
use crate::error::CliError;
use crate::output::{write_table, Table};

const EPSILON: f64 = 0.2;
const TAU: f64 = 30.0;

pub fn figure(ctx: &Context, which: &str) -> Result<(), CliError> {
    match which.trim() {
        "1" => figure1(ctx),
        "2" => figure2(ctx),
        "3" => probe_figure(ctx, 3),
        "4" => probe_figure(ctx, 4),
        "5" => figure5(ctx),
        other => Err(CliError::Usage(format!("unknown figure '{other}' (expected 1..5)"))),
    }
}

fn base_table(model: &ModelSpec, figure: u32, panel: &str, r: f64, header: &[&str]) -> Table {
    let mut t = Table::new(header.iter().copied())
        .meta("figure", figure)
        .meta("panel", panel)
        .meta("model", model.name());
    for (k, v) in model.params() {
        t = t.meta(k, v);
    }
    if r.is_finite() {
        t = t.meta("r", r);
    }
    t
}

fn save(ctx: &Context, name: String, table: &Table) -> Result<(), CliError> {
    println!("wrote {}", write_table(&ctx.out, &name, table)?.display());
    Ok(())
}

struct Pullbacks {
    x_minus: Vec<f64>,
    x_plus: Vec<f64>,
    xs: Vec<f64>,
    xu: Vec<f64>,
    /// Tolerances actually reached, `None` for an uncertified long-anchor run.
    tol_minus: Option<f64>,
    tol_plus: Option<f64>,
}

impl Pullbacks {
    fn annotate(&self, t: Table) -> Table {
        let show = |v: Option<f64>| {
            v.map(|x| x.to_string()).unwrap_or_else(|| format!("single run anchored {LONG_ANCHOR}/r away, convergence not certified"))
        };
        t.meta("pullback_tol_x_minus", show(self.tol_minus)).meta("pullback_tol_x_plus", show(self.tol_plus))
    }
}

const LONG_ANCHOR: f64 = 200.0;

/// Pullback samples, relaxing the tolerance near the critical rate where
/// the estimate becomes ill-conditioned.
fn ladder(setup: &TippingSetup, attractor: bool, r: f64, times: &[f64], tol: f64) -> Result<(Vec<f64>, Option<f64>), CliError> {
    let window = (times[0], times[times.len() - 1]);
    let branch = if attractor { setup.stable() } else { setup.unstable() };
    for t in [tol, tol.max(1e-8), tol.max(1e-6)] {
        match pullback_curve(setup.model(), branch, attractor, r, window, t, times) {
            Ok((v, _)) => return Ok((v, Some(t))),
            Err(CliError::Convergence(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let (lo, hi) = window;
    let traj = if attractor {
        let t0 = lo - LONG_ANCHOR / r;
        solve_ivp(setup.model(), r, t0, branch.value_at(r * t0), hi, tol)?
    } else {
        let t0 = hi + LONG_ANCHOR / r;
        solve_ivp(setup.model(), r, t0, branch.value_at(r * t0), lo, tol)?
    };
    Ok((probe_curve(&traj, times), None))
}

fn pullbacks(setup: &TippingSetup, r: f64, times: &[f64], tol: f64) -> Result<Pullbacks, CliError> {
    let (x_minus, tol_minus) = ladder(setup, true, r, times, tol)?;
    let (x_plus, tol_plus) = ladder(setup, false, r, times, tol)?;
    Ok(Pullbacks {
        x_minus,
        x_plus,
        xs: times.iter().map(|&t| setup.stable().value_at(r * t)).collect(),
        xu: times.iter().map(|&t| setup.unstable().value_at(r * t)).collect(),
        tol_minus,
        tol_plus,
    })
}

fn figure1(ctx: &Context) -> Result<(), CliError> {
    let setup = TippingSetup::new(&quad_arctan(0.1)?, 1)?;
    let times = linspace(-20.0, 20.0, 801);
    for (panel, r) in [("a", 0.2), ("b", 0.4)] {
        let p = pullbacks(&setup, r, &times, ctx.tol)?;
        let mut t = p.annotate(base_table(setup.model(), 1, panel, r, &["t", "x_minus", "x_plus", "Xs", "Xu"]));
        for (k, &tt) in times.iter().enumerate() {
            t.push(vec![tt, p.x_minus[k], p.x_plus[k], p.xs[k], p.xu[k]]);
        }
        save(ctx, format!("figure1_{panel}.csv"), &t)?;
    }
    Ok(())
}

fn figure2(ctx: &Context) -> Result<(), CliError> {
    let setup = TippingSetup::new(&quad_arctan(1.1)?, 3)?;
    let times = linspace(-8.0, 8.0, 801);
    let header = ["t", "x_minus", "x_plus", "Xs", "Xu", "S1s", "S2s", "S3s", "S1u", "S2u", "S3u"];
    for (panel, r) in [("a", 0.5), ("b", 2.0)] {
        let p = pullbacks(&setup, r, &times, ctx.tol)?;
        let mut t = p.annotate(base_table(setup.model(), 2, panel, r, &header));
        for (k, &tt) in times.iter().enumerate() {
            let mut row = vec![tt, p.x_minus[k], p.x_plus[k], p.xs[k], p.xu[k]];
            row.extend((1..=3).map(|n| partial_sum_to(setup.series_s(), n, r, tt)));
            row.extend((1..=3).map(|n| partial_sum_to(setup.series_u(), n, r, tt)));
            t.push(row);
        }
        save(ctx, format!("figure2_{panel}.csv"), &t)?;
    }
    Ok(())
}

/// First-order `r*` at horizon 30, bisected far below plotting resolution.
fn tight_r_star(setup: &TippingSetup, tol: f64) -> Result<(f64, f64), CliError> {
    let opts = TipOptions { probe_tol: tol, oracle_tol: None, ..TipOptions::default() };
    let report = detect_tipping(setup, 1, EPSILON, TAU, (0.05, 5.0), &opts)?;
    let [lo, hi] = report
        .bracket
        .ok_or_else(|| CliError::Math("no tipping bracket found for the figure model".into()))?;
    Ok(refine_bracket(setup, 1, EPSILON, TAU, lo, hi, 1e-12, tol)?)
}

fn probe_curve(traj: &Trajectory, times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| traj.eval(t).unwrap_or(f64::NAN)).collect()
}

/// Figures 3 (`z` probes) and 4 (`y` probes) on `t ∈ [−30, 30]`.
fn probe_figure(ctx: &Context, figure: u32) -> Result<(), CliError> {
    let setup = TippingSetup::new(&quad_arctan(0.1)?, 1)?;
    let (r_star, _) = tight_r_star(&setup, ctx.tol)?;
    let rs = if figure == 3 {
        let d = delta_curve(&setup, 1, EPSILON, r_star, &[TAU], 1e-12, ctx.tol)?[0];
        let inside = if d.defined && d.delta > 0.0 { r_star - 0.5 * d.delta } else { r_star };
        [0.2, inside, r_star + 0.01, 0.4]
    } else {
        [0.2, r_star - 0.01, r_star + 0.01, 0.4]
    };
    let (pm, pp) = if figure == 3 { ("z_minus", "z_plus") } else { ("y_minus", "y_plus") };
    let header = ["t", "x_minus", "x_plus", "S1s", "S1u", pm, pp];
    let times = linspace(-TAU, TAU, 1201);
    let sigma = setup.orientation();
    // z starts on the far side of each branch, y on the near side
    let side = if figure == 3 { -1.0 } else { 1.0 };
    let m = setup.model();
    for (panel, &r) in ["a", "b", "c", "d"].iter().zip(rs.iter()) {
        let p = pullbacks(&setup, r, &times, ctx.tol)?;
        let s0 = partial_sum_to(setup.series_s(), 1, r, -TAU);
        let u0 = partial_sum_to(setup.series_u(), 1, r, TAU);
        let minus = solve_ivp(m, r, -TAU, s0 + side * sigma * EPSILON, TAU, ctx.tol)?;
        let plus = solve_ivp(m, r, TAU, u0 - side * sigma * EPSILON, -TAU, ctx.tol)?;
        let (a, b) = (probe_curve(&minus, &times), probe_curve(&plus, &times));
        let mut t = p
            .annotate(base_table(m, figure, panel, r, &header))
            .meta("r_star", r_star)
            .meta("epsilon", EPSILON)
            .meta("tau", TAU);
        for (k, &tt) in times.iter().enumerate() {
            t.push(vec![
                tt,
                p.x_minus[k],
                p.x_plus[k],
                partial_sum_to(setup.series_s(), 1, r, tt),
                partial_sum_to(setup.series_u(), 1, r, tt),
                a[k],
                b[k],
            ]);
        }
        save(ctx, format!("figure{figure}_{panel}.csv"), &t)?;
    }
    Ok(())
}

fn figure5(ctx: &Context) -> Result<(), CliError> {
    let setup = TippingSetup::new(&quad_arctan(0.1)?, 1)?;
    let (r_star, _) = tight_r_star(&setup, ctx.tol)?;
    let panels = [("full", linspace(0.0, TAU, 61)), ("zoom", linspace(20.0, TAU, 41))];
    for (panel, taus) in panels {
        let curve = delta_curve(&setup, 1, EPSILON, r_star, &taus, 1e-11, ctx.tol)?;
        let mut t = base_table(setup.model(), 5, panel, f64::NAN, &["tau", "r_star_minus_delta", "delta", "defined"])
            .meta("r_star", r_star)
            .meta("epsilon", EPSILON)
            .meta("order", 1);
        for d in curve {
            t.push(vec![d.tau, d.r_lower, d.delta, if d.defined { 1.0 } else { 0.0 }]);
        }
        save(ctx, format!("figure5_{panel}.csv"), &t)?;
    }
    Ok(())
}
