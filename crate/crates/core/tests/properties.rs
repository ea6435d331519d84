use proptest::prelude::*;

use socialpressure::finite_system::{self, FiniteSystem, SimulateOptions};
use socialpressure::invariant;
use socialpressure::limit_sde::{self, LimitError, PicardConfig};
use socialpressure::stats;
use socialpressure::{InitialCondition, ModelParams, RateFunction};

fn params(n: usize, h: f64, rate: RateFunction, horizon: f64, seed: u64, initial: InitialCondition) -> ModelParams {
    ModelParams { n, h, rate, horizon, seed, initial }
}

#[test]
fn tanh_event_count_is_poisson() {
    let (n, t) = (20, 0.5);
    let p = params(n, 0.8, RateFunction::tanh_plus_one(), t, 31, InitialCondition::IidUniform { l: 1.0 });
    let counts: Vec<u64> = (0..2000)
        .map(|r| {
            let mut sys = FiniteSystem::from_params(&p, r).unwrap().record_events(false);
            sys.advance_to(t).unwrap();
            sys.total_jumps()
        })
        .collect();
    let pv = stats::poisson_chi_square_pvalue(&counts, 2.0 * n as f64 * t);
    assert!(pv > 0.01, "p = {pv}");
}

#[test]
fn actors_are_exchangeable() {
    let n = 30;
    let p = params(n, 1.5, RateFunction::exponential(), 1.0, 32, InitialCondition::IidUniform { l: 0.5 });
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for r in 0..400 {
        let mut sys = FiniteSystem::from_params(&p, r).unwrap().record_events(false);
        sys.advance_to(1.0).unwrap();
        first.push(sys.jump_counts()[0] as f64);
        last.push(sys.jump_counts()[n - 1] as f64);
    }
    let d = stats::ks_two_sample(&first, &last);
    let pv = stats::ks_two_sample_pvalue(d, first.len(), last.len());
    assert!(pv > 0.01, "D = {d}, p = {pv}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pathwise_bound_after_every_event(
        seed in 0u64..1000,
        n in 2usize..40,
        h in 0.1f64..3.0,
        l in 0.0f64..2.0,
        exp in any::<bool>(),
    ) {
        let rate = if exp { RateFunction::exponential() } else { RateFunction::tanh_plus_one() };
        let p = params(n, h, rate, 1.0, seed, InitialCondition::IidTwoPoint { l });
        let mut sys = FiniteSystem::from_params(&p, 0).unwrap();
        while let Some(ev) = sys.step().unwrap() {
            if ev.time > 1.0 {
                break;
            }
            sys.check_pathwise_bound().unwrap();
            prop_assert_eq!(sys.pressure(ev.actor), 0.0);
        }
    }

    #[test]
    fn mean_pressure_stays_in_bound(seed in 0u64..1000, h in 0.1f64..3.0) {
        let p = params(50, h, RateFunction::tanh_plus_one(), 2.0, seed, InitialCondition::Constant(1.0));
        let tr = finite_system::simulate(&p, SimulateOptions { grid_intervals: 20, keep_pressures: false, keep_events: false }).unwrap();
        for (m, z) in tr.mean_pressure.iter().zip(&tr.total_jumps) {
            prop_assert!(m.abs() <= 1.0 + h * *z as f64 / 50.0 + 1e-12);
        }
    }
}

fn residual_history(h: f64, horizon: f64) -> Vec<Vec<f64>> {
    let cfg = PicardConfig { samples: 2000, intervals: Some(64), tol: Some(1e-13), max_iter: 40, window: Some(horizon) };
    match limit_sde::picard_solve(&RateFunction::tanh_plus_one(), h, &InitialCondition::Constant(1.0), horizon, &cfg, 5) {
        Ok(sol) => sol.windows.into_iter().map(|w| w.residuals).collect(),
        Err(LimitError::NonConvergence { residuals, .. }) => vec![residuals],
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn picard_residuals_contract() {
    for (h, horizon) in [(0.5, 1.0), (2.0, 0.5)] {
        let c = limit_sde::contraction_report(&RateFunction::tanh_plus_one(), h, 1.0, horizon).unwrap().c_at_t_star;
        let bound = c.max(0.9);
        for res in residual_history(h, horizon) {
            // below this the residual is at rounding level
            let live: Vec<f64> = res.iter().copied().take_while(|&r| r > 1e-13).collect();
            assert!(live.len() >= 3, "h = {h}: {res:?}");
            for w in live[1..].windows(2) {
                assert!(w[1] < w[0], "h = {h}: not monotone {res:?}");
            }
            let ratios: Vec<f64> = live.windows(2).map(|w| w[1] / w[0]).collect();
            let good = ratios.iter().filter(|&&q| q <= bound).count();
            assert!(good as f64 >= 0.8 * ratios.len() as f64, "h = {h}: ratios {ratios:?}");
        }
    }
}

#[test]
fn integral_of_abs_times_intensity_is_bounded() {
    let rf = RateFunction::tanh_plus_one();
    for (h, init) in [(0.5, InitialCondition::Constant(1.0)), (2.0, InitialCondition::IidUniform { l: 1.0 })] {
        let t = 2.0;
        let cfg = PicardConfig { samples: 5000, intervals: Some(200), ..PicardConfig::default() };
        let sol = limit_sde::picard_solve(&rf, h, &init, t, &cfg, 6).unwrap();
        let ts = sol.curve.times();
        let (mut est, mut var) = (0.0, 0.0);
        for i in 1..ts.len() {
            let dt = ts[i] - ts[i - 1];
            est += 0.5 * dt * (sol.abs_times_intensity[i] + sol.abs_times_intensity[i - 1]);
            var += (0.5 * dt * (sol.abs_times_intensity_se[i] + sol.abs_times_intensity_se[i - 1])).powi(2);
        }
        // correlated across the grid, so bound sigma by the sum of errors
        let sigma = sol.abs_times_intensity_se.iter().sum::<f64>() * (t / (ts.len() - 1) as f64);
        assert!(var.sqrt() <= sigma + 1e-15);
        let bound = 2.0 * init.support_bound() + 2.0 * h * t * rf.m_less(2.0 * h).unwrap();
        assert!(est <= bound + 4.0 * sigma, "h = {h}: {est} > {bound}");
    }
}

#[test]
fn long_horizon_drift_matches_root() {
    let rf = RateFunction::tanh_plus_one();
    let h = 2.0;
    let gamma = invariant::solve_gamma(&rf, h, 1e-10).unwrap().gamma_star();
    let cfg = PicardConfig { samples: 10_000, intervals: Some(1000), ..PicardConfig::default() };
    let sol = limit_sde::picard_solve(&rf, h, &InitialCondition::Constant(1.0), 5.0, &cfg, 7).unwrap();
    let k = sol.curve.times().len() - 1;
    let d = sol.curve.a_plus()[k] - sol.curve.a_minus()[k];
    let se = sol.se_plus[k] + sol.se_minus[k];
    assert!((h * d - h * gamma).abs() <= h * (4.0 * se + 0.01), "d = {d}, gamma = {gamma}, se = {se}");
}
