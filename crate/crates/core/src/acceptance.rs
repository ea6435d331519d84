//! Reference experiments with pinned seeds and tolerances. Each check
//! returns a [`Outcome`] with a one-line verdict; the integration test target
//! and `socialpressure selftest` both run them.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::coupling::{self, fit_rate};
use crate::finite_system::{self, FiniteSystem, InitialCondition, ModelParams, SimulateOptions};
use crate::invariant::{self, InvariantDensity};
use crate::limit_sde::{self, DriftCurve, PicardConfig, Thinning};
use crate::rates::RateFunction;
use crate::rng::{self, domain};
use crate::stats::{self, Moments};

/// Verdict of one acceptance check.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} [{}] {}: {} ({:.1}s of {}s)",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

pub const NAMES: [&str; 9] = [
    "phase-transition",
    "closed-form-density",
    "house-of-cards-stationarity",
    "figure-1",
    "strong-convergence-rate",
    "jump-dominance",
    "pathwise-bounds",
    "picard-particle-consistency",
    "coupling-exactness",
];

const BUDGETS: [u64; 9] = [5, 1, 60, 300, 1200, 60, 60, 600, 120];

/// Run check `id` (1-based).
pub fn run(id: u8) -> Outcome {
    let start = Instant::now();
    let result = match id {
        1 => phase_transition(),
        2 => closed_form_density(),
        3 => house_of_cards_stationarity(),
        4 => figure_one(),
        5 => strong_convergence_rate(),
        6 => jump_dominance(),
        7 => pathwise_bounds(),
        8 => picard_particle_consistency(),
        9 => coupling_exactness(),
        _ => Err(format!("no criterion {id}")),
    };
    let elapsed = start.elapsed();
    let idx = (id.clamp(1, 9) - 1) as usize;
    let budget = Duration::from_secs(BUDGETS[idx]);
    let (mut passed, mut detail) = match result {
        Ok((p, d)) => (p, d),
        Err(e) => (false, format!("error: {e}")),
    };
    if elapsed > budget {
        passed = false;
        detail.push_str("; over time budget");
    }
    Outcome { id, name: NAMES[idx], passed, detail, elapsed, budget }
}

pub fn run_all() -> Vec<Outcome> {
    (1..=9).map(run).collect()
}

type Check = Result<(bool, String), String>;

fn err<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

const RESIDUAL_TOL: f64 = 1e-10;

fn tanh() -> RateFunction {
    RateFunction::tanh_plus_one()
}

fn gamma_star(h: f64) -> Result<f64, String> {
    Ok(invariant::solve_gamma(&tanh(), h, RESIDUAL_TOL).map_err(err)?.gamma_star())
}

fn phase_transition() -> Check {
    let rf = tanh();
    let mut ok = true;
    let mut parts = Vec::new();
    for h in [0.25, 0.5, 0.9, 1.0] {
        let sol = invariant::solve_gamma(&rf, h, RESIDUAL_TOL).map_err(err)?;
        if sol.roots != [0.0] {
            ok = false;
            parts.push(format!("h={h}: roots {:?}", sol.roots));
        }
    }
    for h in [1.1, 1.5, 2.0, 4.0] {
        let sol = invariant::solve_gamma(&rf, h, RESIDUAL_TOL).map_err(err)?;
        let g = sol.gamma_star();
        let r = invariant::gamma_residual(&rf, h, g).map_err(err)?;
        let good = sol.roots.len() == 3 && sol.roots[0] == -g && sol.roots[1] == 0.0 && g > 0.0 && r.abs() < RESIDUAL_TOL;
        ok &= good;
        parts.push(format!("h={h}: gamma*={g:.6} |R|={:.1e}", r.abs()));
    }
    Ok((ok, format!("h<=1 -> {{0}}; {}", parts.join(", "))))
}

fn closed_form_density() -> Check {
    let rf = tanh();
    let mut worst: f64 = 0.0;
    for h in [1.5, 2.0, 4.0] {
        let g = gamma_star(h)?;
        let d = InvariantDensity::new(&rf, h, g).map_err(err)?;
        let m = g * h / 2.0;
        for i in 0..=2000 {
            let x = 10.0 * g * h * i as f64 / 2000.0;
            worst = worst.max((d.density(x) - (-x / m).exp() / m).abs());
        }
    }
    Ok((worst < 1e-8, format!("max abs error {worst:.2e} (< 1e-8)")))
}

const HOC_SEED: u64 = 20_240_301;

fn house_of_cards_stationarity() -> Check {
    let h = 2.0;
    let g = gamma_star(h)?;
    let (burn_in, count) = (200.0, 100_000usize);
    let path = invariant::simulate_house_of_cards(&tanh(), h, g, 0.0, burn_in + count as f64, HOC_SEED).map_err(err)?;
    let samples = path.sample(burn_in, 1.0, count);
    let m = g * h / 2.0;
    let d = stats::ks_distance(&samples, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x / m).exp() });
    Ok((d < 0.02, format!("KS distance {d:.4} (< 0.02) at gamma*={g:.6}, 1e5 samples")))
}

const FIGURE_SEED: u64 = 1000;

fn figure_one() -> Check {
    let rf = tanh();
    let (n, horizon) = (1000, 15.0);
    let opts = SimulateOptions { grid_intervals: 300, keep_pressures: false, keep_events: false };
    let low: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|r| {
            let u0 = if r < 5 { 1.0 } else { -1.0 };
            let p = ModelParams { n, h: 0.5, rate: rf.clone(), horizon, seed: FIGURE_SEED, initial: InitialCondition::Constant(u0) };
            finite_system::simulate_replica(&p, r, opts).map(|t| *t.mean_pressure.last().unwrap())
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let plateau = gamma_star(2.0)? * 2.0 / 2.0;
    let high: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|r| {
            let p = ModelParams { n, h: 2.0, rate: rf.clone(), horizon, seed: FIGURE_SEED + 1, initial: InitialCondition::Constant(0.0) };
            finite_system::simulate_replica(&p, r, opts).map(|t| *t.mean_pressure.last().unwrap())
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let low_ok = low.iter().all(|m| m.abs() < 0.1);
    let near = high.iter().filter(|m| (m.abs() - plateau).abs() <= 0.2 * plateau).count();
    let both_signs = high.iter().any(|&m| m > 0.0) && high.iter().any(|&m| m < 0.0);
    let worst_low = low.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let signs: String = high.iter().map(|&m| if m > 0.0 { '+' } else { '-' }).collect();
    Ok((
        low_ok && near >= 9 && both_signs,
        format!("h=0.5 max |mean| {worst_low:.3} (< 0.1); h=2 {near}/10 within 20% of {plateau:.4}, signs {signs}"),
    ))
}

const COUPLING_SEED: u64 = 77;

fn strong_convergence_rate() -> Check {
    let ns = [25, 50, 100, 200, 400, 800];
    let cfg = PicardConfig { samples: 100_000, intervals: Some(500), ..Default::default() };
    let curve = coupling::strong_error_curve(&tanh(), 0.5, &InitialCondition::Constant(1.0), 5.0, &ns, 100, COUPLING_SEED, &cfg)
        .map_err(err)?;
    let fit = fit_rate(&curve.rows).map_err(err)?;
    let means: Vec<String> = curve.rows.iter().map(|r| format!("{:.4}", r.mean_sup_error)).collect();
    Ok((
        (-0.65..=-0.40).contains(&fit.slope) && fit.r_squared > 0.9,
        format!("slope {:.3} in [-0.65, -0.40], r^2 {:.4} (> 0.9); errors {}", fit.slope, fit.r_squared, means.join(" ")),
    ))
}

fn jump_dominance() -> Check {
    let p = ModelParams { n: 50, h: 1.0, rate: tanh(), horizon: 1.0, seed: 606, initial: InitialCondition::IidUniform { l: 1.0 } };
    let rep = finite_system::check_jump_dominance(&p, 500).map_err(err)?;
    let worst = rep.deciles.iter().map(|d| d.margin).fold(f64::INFINITY, f64::min);
    Ok((
        rep.passed(),
        format!(
            "smallest decile margin {worst:.3} (bound sf - empirical sf); mean Z/N {:.4} +- {:.4} <= {:.1}",
            rep.mean_jumps_per_actor, rep.mean_jumps_std_error, rep.mean_bound
        ),
    ))
}

fn pathwise_bounds() -> Check {
    let rf = tanh();
    // finite systems, checked after every event
    let mut finite_events = 0u64;
    for (r, (h, init)) in [(0.5, InitialCondition::Constant(1.0)), (2.0, InitialCondition::IidUniform { l: 1.0 }), (4.0, InitialCondition::IidTwoPoint { l: 0.5 })]
        .into_iter()
        .enumerate()
    {
        let p = ModelParams { n: 100, h, rate: rf.clone(), horizon: 5.0, seed: 700 + r as u64, initial: init };
        let mut sys = FiniteSystem::from_params(&p, 0).map_err(err)?;
        while let Some(ev) = sys.step().map_err(err)? {
            if ev.time > p.horizon {
                break;
            }
            sys.check_pathwise_bound().map_err(err)?;
            finite_events += 1;
        }
    }
    // limit paths under the extreme admissible drift and under a solved curve
    let (h, l, horizon) = (2.0, 1.0, 3.0);
    let bound = limit_sde::apriori_gamma(l, horizon, h, &rf).map_err(err)?;
    let th = Thinning::for_horizon(&rf, h, l, horizon).map_err(err)?;
    let extreme = DriftCurve::constant(horizon, 16, 2.0, 0.0).map_err(err)?;
    let cfg = PicardConfig { samples: 5000, intervals: Some(150), ..Default::default() };
    let solved = limit_sde::picard_solve(&rf, h, &InitialCondition::IidUniform { l }, horizon, &cfg, 71).map_err(err)?;
    let mut worst: f64 = solved.max_abs;
    let mut rng = rng::stream(72, &[domain::LIMIT_PATH]);
    for i in 0..10_000 {
        let drift = if i % 2 == 0 { &extreme } else { &solved.curve };
        let u0 = l * (2.0 * (i % 3) as f64 / 2.0 - 1.0);
        let path = limit_sde::sample_limit_path(&rf, h, drift, u0, horizon, th, &mut rng).map_err(err)?;
        worst = worst.max(path.max_abs);
    }
    Ok((
        worst <= bound,
        format!("{finite_events} finite events checked; 10^4 limit paths sup|U| {worst:.3} <= gamma_T {bound}"),
    ))
}

fn picard_particle_consistency() -> Check {
    let rf = tanh();
    let (h, horizon) = (2.0, 5.0);
    let init = InitialCondition::Constant(1.0);
    let cfg = PicardConfig { samples: 50_000, intervals: Some(250), tol: Some(1e-5), ..Default::default() };
    let sol = limit_sde::picard_solve(&rf, h, &init, horizon, &cfg, 808).map_err(err)?;
    let grid = finite_system::uniform_grid(horizon, 50);
    let p = ModelParams { n: 4000, h, rate: rf, horizon, seed: 809, initial: init };
    let replicas = 32u64;
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..replicas)
        .into_par_iter()
        .map(|r| finite_system::empirical_rates(&p, r, &grid))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mut worst: f64 = 0.0;
    for (k, &t) in grid.iter().enumerate() {
        let idx = (t / horizon * 250.0).round() as usize;
        for (side, picard, se) in [(0, sol.curve.a_plus(), &sol.se_plus), (1, sol.curve.a_minus(), &sol.se_minus)] {
            let m: Moments = runs.iter().map(|r| if side == 0 { r.0[k] } else { r.1[k] }).collect();
            let combined = (m.std_error().powi(2) + se[idx].powi(2)).sqrt();
            if combined == 0.0 {
                if m.mean() != picard[idx] {
                    worst = f64::INFINITY;
                }
                continue;
            }
            worst = worst.max((m.mean() - picard[idx]).abs() / combined);
        }
    }
    Ok((worst < 4.0, format!("max deviation {worst:.2} combined SE (< 4) over 51 grid points, N=4000 x {replicas}")))
}

fn coupling_exactness() -> Check {
    let rf = tanh();
    let (h, horizon) = (0.5, 1.0);
    let init = InitialCondition::IidUniform { l: 1.0 };
    let cfg = PicardConfig { samples: 5000, intervals: Some(50), ..Default::default() };
    let sol = limit_sde::picard_solve(&rf, h, &init, horizon, &cfg, 909).map_err(err)?;
    let p = ModelParams { n: 100, h, rate: rf, horizon, seed: 910, initial: init };
    let self_err = (0..10)
        .map(|r| coupling::self_coupled_run(&p, &sol.curve, r).map(|c| c.sup_errors.iter().fold(0.0f64, |a, &e| a.max(e))))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?
        .into_iter()
        .fold(0.0f64, f64::max);
    let coupled: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|r| coupling::coupled_run(&p, &sol.curve, r).map(|c| c.events[0] as f64))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let standalone = ModelParams { seed: 911, ..p.clone() };
    let direct: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|r| finite_system::total_jumps_at_horizon(&standalone, r).map(|z| z as f64))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let d = stats::ks_two_sample(&coupled, &direct);
    let pvalue = stats::ks_two_sample_pvalue(d, 200, 200);
    Ok((
        self_err == 0.0 && pvalue > 0.01,
        format!("self-coupling max error {self_err}; Z_T KS p-value {pvalue:.3} (> 0.01)"),
    ))
}
