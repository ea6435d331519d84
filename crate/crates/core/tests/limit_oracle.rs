//! Picard solver against a deterministic renewal-equation oracle.
//!
//! For `phi = 1 + tanh` the total jump rate is 2 regardless of position, so
//! with `U_0 = c` and `J(t) = int_0^t (a_plus - a_minus)`
//!
//! `E tanh U_t = e^{-2t} tanh(c + h J(t)) + int_0^t 2 e^{-2(t-s)} tanh(h (J(t) - J(s))) ds`
//!
//! and `a_plus - a_minus = 2 E tanh U_t`. The oracle solves this by implicit
//! trapezoid time stepping.

use socialpressure::limit_sde::{picard_solve, PicardConfig};
use socialpressure::{InitialCondition, RateFunction};

/// Returns `d(t_k) = a_plus - a_minus` on a uniform grid of `steps` cells.
fn renewal_oracle(c: f64, h: f64, horizon: f64, steps: usize) -> Vec<f64> {
    let dt = horizon / steps as f64;
    let mut j = vec![0.0; steps + 1];
    let mut d = vec![0.0; steps + 1];
    d[0] = 2.0 * c.tanh();
    for n in 1..=steps {
        let t = n as f64 * dt;
        let mut dn = d[n - 1];
        for _ in 0..50 {
            let jn = j[n - 1] + 0.5 * dt * (d[n - 1] + dn);
            // trapezoid over s in [0, t]; the s = t end contributes tanh(0) = 0
            let mut integral = 0.0;
            for k in 0..n {
                let w = if k == 0 { 0.5 } else { 1.0 };
                integral += w * 2.0 * (-2.0 * (t - k as f64 * dt)).exp() * (h * (jn - j[k])).tanh();
            }
            integral *= dt;
            let next = 2.0 * ((-2.0 * t).exp() * (c + h * jn).tanh() + integral);
            let done = (next - dn).abs() < 1e-14;
            dn = next;
            if done {
                break;
            }
        }
        d[n] = dn;
        j[n] = j[n - 1] + 0.5 * dt * (d[n - 1] + dn);
    }
    d
}

#[test]
fn oracle_converges_under_refinement() {
    let a = renewal_oracle(1.0, 2.0, 2.0, 1000);
    let b = renewal_oracle(1.0, 2.0, 2.0, 2000);
    assert!((a[1000] - b[2000]).abs() < 1e-5, "{} {}", a[1000], b[2000]);
}

#[test]
fn picard_matches_renewal_oracle() {
    let rf = RateFunction::tanh_plus_one();
    for &(h, horizon) in &[(0.5, 3.0), (2.0, 5.0)] {
        let intervals = (40.0 * horizon) as usize;
        let cfg = PicardConfig { samples: 20_000, intervals: Some(intervals), ..Default::default() };
        let start = std::time::Instant::now();
        let sol = picard_solve(&rf, h, &InitialCondition::Constant(1.0), horizon, &cfg, 17).unwrap();
        let elapsed = start.elapsed();
        let fine = 25;
        let oracle = renewal_oracle(1.0, h, horizon, intervals * fine);
        let mut worst: f64 = 0.0;
        for k in 0..=intervals {
            let d = sol.curve.a_plus()[k] - sol.curve.a_minus()[k];
            let se = 2.0 * sol.se_plus[k];
            let z = (d - oracle[k * fine]).abs() / se.max(1e-12);
            worst = worst.max(z);
        }
        println!(
            "h={h} T={horizon}: worst z {worst:.2}, windows {}, iterations {}, end d {:.5} vs {:.5}, {:?}",
            sol.windows.len(),
            sol.windows.iter().map(|w| w.residuals.len()).sum::<usize>(),
            sol.curve.a_plus()[intervals] - sol.curve.a_minus()[intervals],
            oracle[intervals * fine],
            elapsed
        );
        assert!(worst < 5.0, "h={h}: worst z {worst}");
    }
}
