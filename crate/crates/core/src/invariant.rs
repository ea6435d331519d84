//! Invariant measures of the limit equation.
//!
//! A stationary law with drift `h gamma` is the law of a house-of-cards
//! process `Y` that moves with slope `h gamma` and falls to 0 at rate
//! `Phi(Y)`. For `gamma != 0` it has density
//! `g(x) = exp(-Psi(x) / (gamma h)) / Z` on the half-line of sign `gamma`,
//! where `Psi(x) = int_0^x Phi`, and it is invariant for the limit equation
//! iff `gamma = int (phi(x) - phi(-x)) g(dx)`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::io;
use crate::quadrature::{self, QuadratureError};
use crate::rates::{RateError, RateFunction};
use crate::rng::{self, domain};

/// Relative tolerance of the normalizing and moment integrals.
pub const DEFAULT_QUAD_TOL: f64 = 1e-12;

// residual integrals are computed to this absolute tolerance; residuals
// smaller than `SIGN_NOISE` are treated as carrying no sign in the scan
const RESIDUAL_QUAD_TOL: f64 = 1e-13;
const SIGN_NOISE: f64 = 1e-12;
const SCAN_POINTS: usize = 400;
const SCAN_MIN: f64 = 1e-6;
const MAX_SCAN_DOUBLINGS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("normalizing integral diverges (the rate is not integrable enough): {0}")]
    Divergent(QuadratureError),
    #[error(transparent)]
    Quadrature(QuadratureError),
    #[error("residual still positive at gamma_max = {gamma_max}; enlarge the scan range")]
    ScanRange { gamma_max: f64 },
    #[error("root near {gamma} has residual {residual:e} above {tol:e}")]
    Residual { gamma: f64, residual: f64, tol: f64 },
}

fn quad_err(e: QuadratureError) -> InvariantError {
    match e {
        QuadratureError::Divergent { .. } => InvariantError::Divergent(e),
        other => InvariantError::Quadrature(other),
    }
}

/// Normalized invariant density for a nonzero `gamma`.
#[derive(Debug, Clone)]
pub struct InvariantDensity {
    gamma: f64,
    h: f64,
    rf: RateFunction,
    norm_const: f64,
    quad_tol: f64,
}

impl InvariantDensity {
    pub fn new(rf: &RateFunction, h: f64, gamma: f64) -> Result<Self, InvariantError> {
        Self::with_tolerance(rf, h, gamma, DEFAULT_QUAD_TOL)
    }

    pub fn with_tolerance(rf: &RateFunction, h: f64, gamma: f64, quad_tol: f64) -> Result<Self, InvariantError> {
        if !(gamma != 0.0 && gamma.is_finite()) {
            return Err(InvariantError::Invalid(format!("gamma must be finite and nonzero, got {gamma}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(InvariantError::Invalid(format!("h must be positive, got {h}")));
        }
        let mut d = Self { gamma, h, rf: rf.clone(), norm_const: 1.0, quad_tol };
        let scale = d.scale()?;
        d.norm_const = unnormalized_integral(|y| d.unnormalized(y), scale, quad_tol)?;
        Ok(d)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `+1` when the support is `[0, inf)`, `-1` for `(-inf, 0]`.
    pub fn support_sign(&self) -> f64 {
        self.gamma.signum()
    }

    /// `int_0^inf exp(-Psi(t) / (|gamma| h)) dt`.
    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    // characteristic length of the density: Psi(y) ~ |gamma| h
    fn scale(&self) -> Result<f64, InvariantError> {
        let c = self.gamma.abs() * self.h;
        let mut y = c / self.rf.big_phi(0.0)?.max(1e-300);
        for _ in 0..2000 {
            match self.rf.big_phi_integral(y) {
                Ok(psi) if psi <= 2.0 * c => break,
                _ => y *= 0.5,
            }
        }
        Ok(y)
    }

    // exp(-Psi(y) / (|gamma| h)) for y >= 0; Psi past the overflow guard
    // counts as infinite
    fn unnormalized(&self, y: f64) -> f64 {
        match self.rf.big_phi_integral(y) {
            Ok(psi) => (-psi / (self.gamma.abs() * self.h)).exp(),
            Err(RateError::Overflow { .. }) => 0.0,
            Err(_) => f64::NAN,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let y = x * self.support_sign();
        if y < 0.0 {
            return 0.0;
        }
        self.unnormalized(y) / self.norm_const
    }

    /// `int x g(x) dx`.
    pub fn mean(&self) -> Result<f64, InvariantError> {
        let m = self.expectation(|y| y)?;
        Ok(self.support_sign() * m)
    }

    /// `int f(|x|) g(x) dx` over the support.
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64, InvariantError> {
        let scale = self.scale()?;
        let v = unnormalized_integral(
            |y| match self.unnormalized(y) {
                0.0 => 0.0,
                w => f(y) * w,
            },
            scale,
            self.quad_tol,
        )?;
        Ok(v / self.norm_const)
    }

    /// Distribution function, by quadrature.
    pub fn cdf(&self, x: f64) -> Result<f64, InvariantError> {
        let y = x * self.support_sign();
        let mass = if y <= 0.0 {
            0.0
        } else {
            quadrature::integrate(|s| self.unnormalized(s), 0.0, y, self.quad_tol).map_err(quad_err)?.value / self.norm_const
        };
        Ok(if self.gamma > 0.0 { mass.min(1.0) } else { (1.0 - mass).max(0.0) })
    }

    /// CSV `x,g(x)` on `points` equally spaced values of `x`.
    pub fn write_csv<W: Write>(&self, mut w: W, xs: &[f64], header_comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "x,g(x)")?;
        for &x in xs {
            writeln!(w, "{},{}", io::fmt17(x), io::fmt17(self.density(x)))?;
        }
        Ok(())
    }
}

// Positive integrand over [0, inf) to relative tolerance `tol`, scaled by a
// coarse first pass.
fn unnormalized_integral<F: Fn(f64) -> f64>(f: F, scale: f64, tol: f64) -> Result<f64, InvariantError> {
    let scale = scale.max(1e-12);
    let rough = quadrature::integrate_to_infinity(&f, 0.0, scale, 1e-4 * scale).map_err(quad_err)?.value;
    let abs_tol = tol * rough.abs().max(f64::MIN_POSITIVE);
    quadrature::integrate_to_infinity(f, 0.0, scale, abs_tol).map(|i| i.value).map_err(quad_err)
}

/// `int (phi(x) - phi(-x)) g_gamma(dx) - gamma`, by the general formula.
/// Zero at `gamma = 0` by convention (the point-mass branch).
pub fn gamma_residual_general(rf: &RateFunction, h: f64, gamma: f64) -> Result<f64, InvariantError> {
    if gamma == 0.0 {
        return Ok(0.0);
    }
    if gamma < 0.0 {
        return Ok(-gamma_residual_general(rf, h, -gamma)?);
    }
    let d = InvariantDensity::with_tolerance(rf, h, gamma, RESIDUAL_QUAD_TOL)?;
    let v = d.expectation(|y| rf.phi_difference(y).unwrap_or(f64::NAN))?;
    Ok(v - gamma)
}

/// Residual in the single-integral form valid for `phi = B + f` with `f`
/// odd: `2 int_0^inf e^{-u} f(u h gamma / 2B) du - gamma`.
pub fn gamma_residual_reduced(rf: &RateFunction, h: f64, gamma: f64) -> Result<f64, InvariantError> {
    let parts = rf
        .affine_parts()
        .ok_or_else(|| InvariantError::Invalid(format!("{} is not of the form constant plus odd", rf.name())))?;
    if gamma == 0.0 {
        return Ok(0.0);
    }
    if gamma < 0.0 {
        return Ok(-gamma_residual_reduced(rf, h, -gamma)?);
    }
    let c = h * gamma / (2.0 * parts.offset());
    let v = quadrature::integrate_to_infinity(|u| (-u).exp() * parts.odd(u * c), 0.0, 1.0, RESIDUAL_QUAD_TOL)
        .map_err(quad_err)?
        .value;
    Ok(2.0 * v - gamma)
}

/// Fixed-point residual; uses the reduced form when available.
pub fn gamma_residual(rf: &RateFunction, h: f64, gamma: f64) -> Result<f64, InvariantError> {
    if rf.affine_parts().is_some() {
        gamma_residual_reduced(rf, h, gamma)
    } else {
        gamma_residual_general(rf, h, gamma)
    }
}

/// All solutions of the fixed-point equation found by the scan.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSolution {
    /// Sorted; always contains 0 and is closed under negation.
    pub roots: Vec<f64>,
    /// `B / f'(0)` for constant-plus-odd rates.
    pub threshold: Option<f64>,
    pub residual_tol: f64,
    /// Upper end of the scan that produced the roots.
    pub gamma_max: f64,
}

impl GammaSolution {
    /// Largest root (0 when the point mass is the only invariant law).
    pub fn gamma_star(&self) -> f64 {
        *self.roots.last().unwrap()
    }

    pub fn positive_roots(&self) -> impl Iterator<Item = f64> + '_ {
        self.roots.iter().copied().filter(|&g| g > 0.0)
    }
}

/// Default upper end of the root scan, `2 M<(10 h)`.
pub fn default_gamma_max(rf: &RateFunction, h: f64) -> Result<f64, InvariantError> {
    Ok(2.0 * rf.m_less(10.0 * h)?)
}

pub fn solve_gamma(rf: &RateFunction, h: f64, residual_tol: f64) -> Result<GammaSolution, InvariantError> {
    solve_gamma_in(rf, h, residual_tol, default_gamma_max(rf, h)?)
}

/// Scan `rho(gamma) = R(gamma) / gamma` for sign changes on a geometric
/// grid in `[1e-6, gamma_max]`, bisecting each bracket. The scan range is
/// doubled while the residual stays positive at its upper end.
pub fn solve_gamma_in(rf: &RateFunction, h: f64, residual_tol: f64, gamma_max: f64) -> Result<GammaSolution, InvariantError> {
    if !(h > 0.0) {
        return Err(InvariantError::Invalid(format!("h must be positive, got {h}")));
    }
    if !(residual_tol > 0.0) {
        return Err(InvariantError::Invalid("residual_tol must be positive".into()));
    }
    let mut gamma_max = gamma_max;
    for _ in 0..=MAX_SCAN_DOUBLINGS {
        let grid: Vec<f64> = (0..SCAN_POINTS)
            .map(|i| SCAN_MIN * (gamma_max / SCAN_MIN).powf(i as f64 / (SCAN_POINTS - 1) as f64))
            .collect();
        let mut values = Vec::with_capacity(grid.len());
        for &g in &grid {
            values.push(gamma_residual(rf, h, g)?);
        }
        if *values.last().unwrap() > SIGN_NOISE {
            gamma_max *= 2.0;
            continue;
        }
        let mut positive = Vec::new();
        let mut last: Option<(f64, f64)> = None;
        for (&g, &r) in grid.iter().zip(&values) {
            if r.abs() <= SIGN_NOISE {
                continue;
            }
            if let Some((g0, r0)) = last {
                if r0.signum() != r.signum() {
                    positive.push(bisect(rf, h, g0, g, r0, residual_tol)?);
                }
            }
            last = Some((g, r));
        }
        let mut roots: Vec<f64> = positive.iter().map(|g| -g).collect();
        roots.push(0.0);
        roots.extend(&positive);
        roots.sort_by(f64::total_cmp);
        return Ok(GammaSolution { roots, threshold: rf.phase_threshold(), residual_tol, gamma_max });
    }
    Err(InvariantError::ScanRange { gamma_max })
}

fn bisect(rf: &RateFunction, h: f64, mut lo: f64, mut hi: f64, r_lo: f64, tol: f64) -> Result<f64, InvariantError> {
    let s_lo = r_lo.signum();
    let mut best = (f64::INFINITY, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = gamma_residual(rf, h, mid)?;
        if r.abs() < best.0 {
            best = (r.abs(), mid);
        }
        if r == 0.0 || (hi - lo) <= 4.0 * f64::EPSILON * mid {
            break;
        }
        if r.signum() == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 >= tol {
        return Err(InvariantError::Residual { gamma: best.1, residual: best.0, tol });
    }
    Ok(best.1)
}

/// One row of the phase diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRow {
    pub h: f64,
    pub gamma_star: f64,
    pub invariant_mean: f64,
}

pub fn phase_diagram(rf: &RateFunction, h_grid: &[f64], residual_tol: f64) -> Result<Vec<PhaseRow>, InvariantError> {
    h_grid
        .iter()
        .map(|&h| {
            let sol = solve_gamma(rf, h, residual_tol)?;
            let g = sol.gamma_star();
            let invariant_mean = if g > 0.0 { InvariantDensity::new(rf, h, g)?.mean()? } else { 0.0 };
            Ok(PhaseRow { h, gamma_star: g, invariant_mean })
        })
        .collect()
}

pub fn write_phase_csv<W: Write>(rows: &[PhaseRow], mut w: W, header_comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = header_comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "h,gamma_star,invariant_mean")?;
    for r in rows {
        writeln!(w, "{},{},{}", io::fmt17(r.h), io::fmt17(r.gamma_star), io::fmt17(r.invariant_mean))?;
    }
    Ok(())
}

/// A house-of-cards path: slope `h gamma` between falls to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseOfCardsPath {
    pub y0: f64,
    pub slope: f64,
    pub horizon: f64,
    /// Times of the falls to 0.
    pub jumps: Vec<f64>,
}

impl HouseOfCardsPath {
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.jumps.partition_point(|&s| s <= t);
        if idx == 0 {
            self.y0 + self.slope * t
        } else {
            self.slope * (t - self.jumps[idx - 1])
        }
    }

    /// Values at `start, start + spacing, ...` (`count` of them).
    pub fn sample(&self, start: f64, spacing: f64, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        let mut idx = 0;
        for i in 0..count {
            let t = start + spacing * i as f64;
            while idx < self.jumps.len() && self.jumps[idx] <= t {
                idx += 1;
            }
            out.push(if idx == 0 { self.y0 + self.slope * t } else { self.slope * (t - self.jumps[idx - 1]) });
        }
        out
    }

    /// Fraction of `[start, horizon]` spent in `[a, b]`.
    pub fn occupation(&self, a: f64, b: f64, start: f64) -> f64 {
        let mut total = 0.0;
        let mut seg_start = start;
        let mut anchor = (0.0, self.y0);
        let first = self.jumps.partition_point(|&s| s <= start);
        if first > 0 {
            anchor = (self.jumps[first - 1], 0.0);
        }
        let add = |t0: f64, t1: f64, anchor: (f64, f64)| {
            if t1 <= t0 {
                return 0.0;
            }
            let y = |t: f64| anchor.1 + self.slope * (t - anchor.0);
            if self.slope == 0.0 {
                return if (a..=b).contains(&y(t0)) { t1 - t0 } else { 0.0 };
            }
            // times at which the segment is inside [a, b]
            let ta = anchor.0 + (a - anchor.1) / self.slope;
            let tb = anchor.0 + (b - anchor.1) / self.slope;
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            (t1.min(hi) - t0.max(lo)).max(0.0)
        };
        for &j in &self.jumps[first..] {
            total += add(seg_start, j, anchor);
            seg_start = j;
            anchor = (j, 0.0);
        }
        total += add(seg_start, self.horizon, anchor);
        total / (self.horizon - start)
    }
}

/// Exact simulation by thinning. Time is cut into pieces of length at most
/// `1 / bound`; on each piece the position lies between its endpoint
/// values, so `M<` of the larger endpoint magnitude dominates `Phi`.
pub fn simulate_house_of_cards(
    rf: &RateFunction,
    h: f64,
    gamma: f64,
    y0: f64,
    horizon: f64,
    seed: u64,
) -> Result<HouseOfCardsPath, InvariantError> {
    if !(horizon > 0.0) {
        return Err(InvariantError::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    let constant = rf.affine_parts().map(|p| 2.0 * p.offset());
    let slope = h * gamma;
    let mut rng = rng::stream(seed, &[domain::HOUSE_OF_CARDS]);
    let mut path = HouseOfCardsPath { y0, slope, horizon, jumps: Vec::new() };
    let (mut anchor_t, mut anchor_y) = (0.0, y0);
    let mut t = 0.0;
    while t < horizon {
        let y_now = anchor_y + slope * (t - anchor_t);
        let bound = match constant {
            Some(c) => c,
            None => {
                // piece length from the rate at the current magnitude
                let local = rf.m_less(y_now.abs())?.max(1e-12);
                let piece = (1.0 / local).min(horizon - t);
                rf.m_less(y_now.abs().max((y_now + slope * piece).abs()))?
            }
        };
        let piece = match constant {
            Some(_) => horizon - t,
            None => (1.0 / rf.m_less(y_now.abs())?.max(1e-12)).min(horizon - t),
        };
        let end = t + piece;
        let mut s = t;
        loop {
            let e: f64 = Exp1.sample(&mut rng);
            s += e / bound;
            if s >= end {
                t = end;
                break;
            }
            let y = anchor_y + slope * (s - anchor_t);
            let rate = rf.big_phi(y)?;
            let accept = constant.is_some() || rng.gen::<f64>() * bound <= rate;
            if accept {
                path.jumps.push(s);
                anchor_t = s;
                anchor_y = 0.0;
                t = s;
                if constant.is_none() {
                    break;
                }
            }
        }
    }
    Ok(path)
}

/// `E[tau_x]`, the mean time for the house-of-cards process started at `x`
/// to fall: `int_0^inf exp(-(Psi(x + h gamma s) - Psi(x)) / (h gamma)) ds`.
pub fn check_recurrence_time(rf: &RateFunction, h: f64, gamma: f64, x: f64) -> Result<f64, InvariantError> {
    if !(gamma > 0.0 && h > 0.0) {
        return Err(InvariantError::Invalid(format!("need gamma > 0 and h > 0 (gamma = {gamma}, h = {h})")));
    }
    let c = h * gamma;
    let psi_x = rf.big_phi_integral(x)?;
    let scale = 1.0 / rf.big_phi(x)?.max(1e-12);
    quadrature::integrate_to_infinity(
        |s| match rf.big_phi_integral(x + c * s) {
            Ok(p) => (-(p - psi_x) / c).exp(),
            Err(RateError::Overflow { .. }) => 0.0,
            Err(_) => f64::NAN,
        },
        0.0,
        scale,
        DEFAULT_QUAD_TOL,
    )
    .map(|i| i.value)
    .map_err(quad_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{self, Moments};
    use proptest::prelude::*;

    fn tanh() -> RateFunction {
        RateFunction::tanh_plus_one()
    }

    #[test]
    fn tanh_density_closed_form() {
        for &(h, g) in &[(2.0, 1.2585957), (0.5, 0.3), (4.0, -1.6)] {
            let d = InvariantDensity::new(&tanh(), h, g).unwrap();
            let m = g.abs() * h / 2.0;
            let mut worst: f64 = 0.0;
            for i in 0..=1000 {
                let y = 10.0 * g.abs() * h * i as f64 / 1000.0;
                let exact = (-y / m).exp() / m;
                worst = worst.max((d.density(y * g.signum()) - exact).abs());
            }
            assert!(worst < 1e-8, "{worst}");
            assert_eq!(d.density(-g.signum()), 0.0);
        }
    }

    #[test]
    fn density_normalized() {
        for rf in [tanh(), RateFunction::exponential()] {
            let d = InvariantDensity::new(&rf, 1.5, 0.8).unwrap();
            assert!((d.expectation(|_| 1.0).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn tanh_mean_closed_form() {
        let d = InvariantDensity::new(&tanh(), 2.0, 1.3).unwrap();
        assert!((d.mean().unwrap() - 1.3).abs() < 1e-9);
        let d = InvariantDensity::new(&tanh(), 2.0, -1.3).unwrap();
        assert!((d.mean().unwrap() + 1.3).abs() < 1e-9);
    }

    #[test]
    fn zero_gamma_rejected() {
        assert!(InvariantDensity::new(&tanh(), 1.0, 0.0).is_err());
    }

    #[test]
    fn residual_signs() {
        assert!(gamma_residual(&tanh(), 0.5, 0.5).unwrap() < 0.0);
        assert!(gamma_residual(&tanh(), 2.0, 0.01).unwrap() > 0.0);
        assert!(gamma_residual(&tanh(), 2.0, 2.0).unwrap() < 0.0);
        assert_eq!(gamma_residual(&tanh(), 2.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn general_and_reduced_forms_agree() {
        let affine = RateFunction::affine_odd("atan", |x: f64| x.atan() / 2.0, |x: f64| 0.5 / (1.0 + x * x), 1.0).unwrap();
        for rf in [tanh(), affine] {
            for &h in &[0.5, 1.5, 3.0] {
                for &g in &[0.05, 0.7, 2.5, -1.1] {
                    let a = gamma_residual_general(&rf, h, g).unwrap();
                    let b = gamma_residual_reduced(&rf, h, g).unwrap();
                    assert!((a - b).abs() < 1e-9, "{h} {g}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn reduced_form_needs_affine_rate() {
        assert!(gamma_residual_reduced(&RateFunction::exponential(), 1.0, 1.0).is_err());
    }

    #[test]
    fn phase_transition_at_threshold() {
        let sol = solve_gamma(&tanh(), 0.5, 1e-10).unwrap();
        assert_eq!(sol.roots, vec![0.0]);
        assert_eq!(sol.threshold, Some(1.0));
        let sol = solve_gamma(&tanh(), 1.0, 1e-10).unwrap();
        assert_eq!(sol.roots, vec![0.0]);
        let sol = solve_gamma(&tanh(), 2.0, 1e-10).unwrap();
        assert_eq!(sol.roots.len(), 3);
        assert_eq!(sol.roots[0], -sol.roots[2]);
        assert!(gamma_residual(&tanh(), 2.0, sol.gamma_star()).unwrap().abs() < 1e-10);
    }

    #[test]
    fn exponential_roots_closed_under_negation() {
        let sol = solve_gamma(&RateFunction::exponential(), 1.0, 1e-10).unwrap();
        let n = sol.roots.len();
        for i in 0..n {
            assert_eq!(sol.roots[i], -sol.roots[n - 1 - i]);
        }
        assert_eq!(sol.threshold, None);
    }

    #[test]
    fn recurrence_time_tanh_is_half() {
        for &x in &[0.0, 1.0, 5.0] {
            assert!((check_recurrence_time(&tanh(), 2.0, 1.2, x).unwrap() - 0.5).abs() < 1e-10);
        }
    }

    #[test]
    fn recurrence_time_normalizes_density() {
        let rf = RateFunction::exponential();
        let (h, g) = (1.5, 0.9);
        let d = InvariantDensity::new(&rf, h, g).unwrap();
        let tau = check_recurrence_time(&rf, h, g, 0.0).unwrap();
        assert!((tau * h * g - d.norm_const()).abs() < 1e-9);
    }

    #[test]
    fn exponential_recurrence_decreasing() {
        let rf = RateFunction::exponential();
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let t = check_recurrence_time(&rf, 1.0, 1.0, i as f64 * 0.5).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn house_of_cards_trapped_at_zero() {
        let p = simulate_house_of_cards(&tanh(), 2.0, 0.0, 0.7, 20.0, 3).unwrap();
        let first = p.jumps[0];
        assert_eq!(p.value_at(first * 0.5), 0.7);
        for i in 0..100 {
            assert_eq!(p.value_at(first + (20.0 - first) * i as f64 / 100.0), 0.0);
        }
    }

    #[test]
    fn house_of_cards_tanh_jumps_are_poisson() {
        let counts: Vec<u64> =
            (0..2000).map(|s| simulate_house_of_cards(&tanh(), 1.0, 0.8, 0.0, 3.0, s).unwrap().jumps.len() as u64).collect();
        assert!(stats::poisson_chi_square_pvalue(&counts, 6.0) > 0.01);
    }

    #[test]
    fn house_of_cards_return_times_match_quadrature() {
        let rf = RateFunction::exponential();
        let (h, g) = (1.0, 0.8);
        let p = simulate_house_of_cards(&rf, h, g, 0.0, 20_000.0, 5).unwrap();
        let gaps: Moments = p.jumps.windows(2).map(|w| w[1] - w[0]).collect();
        let exact = check_recurrence_time(&rf, h, g, 0.0).unwrap();
        assert!((gaps.mean() - exact).abs() < 3.0 * gaps.std_error(), "{} vs {exact}", gaps.mean());
    }

    #[test]
    fn occupation_matches_density() {
        let rf = RateFunction::exponential();
        let (h, g) = (1.0, 0.8);
        let d = InvariantDensity::new(&rf, h, g).unwrap();
        let (a, b) = (0.2, 0.6);
        let exact = d.cdf(b).unwrap() - d.cdf(a).unwrap();
        // batch means over independent runs
        let fr: Moments = (0..40)
            .map(|s| simulate_house_of_cards(&rf, h, g, 0.0, 2000.0, 100 + s).unwrap().occupation(a, b, 10.0))
            .collect();
        assert!((fr.mean() - exact).abs() < 3.0 * fr.std_error(), "{} vs {exact}", fr.mean());
    }

    #[test]
    fn occupation_of_linear_segment() {
        let p = HouseOfCardsPath { y0: 0.0, slope: 1.0, horizon: 4.0, jumps: vec![2.0] };
        // in [0.5, 1.5] during [0.5, 1.5] and [2.5, 3.5]
        assert!((p.occupation(0.5, 1.5, 0.0) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn density_symmetry(g in 0.05f64..3.0, x in -5.0f64..5.0, h in 0.2f64..4.0) {
            for rf in [tanh(), RateFunction::exponential()] {
                let a = InvariantDensity::new(&rf, h, g).unwrap().density(x);
                let b = InvariantDensity::new(&rf, h, -g).unwrap().density(-x);
                prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
                prop_assert!(a >= 0.0);
            }
        }

        #[test]
        fn residual_odd(g in 0.01f64..3.0, h in 0.2f64..4.0) {
            let r = gamma_residual(&tanh(), h, g).unwrap();
            prop_assert_eq!(gamma_residual(&tanh(), h, -g).unwrap(), -r);
        }
    }
}
