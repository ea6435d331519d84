//! The McKean–Vlasov limit equation.
//!
//! A limit actor resets to 0 at rate `Phi(U)` and, between resets, drifts
//! with velocity `h (E[phi(U_t)] - E[phi(-U_t)])`. The two expectations are
//! carried by a [`DriftCurve`]; given a curve, paths are sampled exactly by
//! thinning, and [`picard_solve`] iterates curve -> paths -> curve until the
//! curve is a fixed point.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::finite_system::{InitialCondition, Opinion};
use crate::io::{self, CsvError};
use crate::rates::{RateError, RateFunction};
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimitError {
    #[error("invalid drift curve: {0}")]
    InvalidCurve(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("dominating rate {bound} exceeded by intensity {rate} at u = {u}")]
    DominatingRate { u: f64, rate: f64, bound: f64 },
    #[error("a priori bound violated: sup |U| = {value} > {bound}")]
    AprioriBound { value: f64, bound: f64 },
    #[error("Picard iteration did not converge on [{start}, {end}] after {} iterations (last residual {last:e})", residuals.len())]
    NonConvergence { start: f64, end: f64, residuals: Vec<f64>, last: f64 },
}

/// Estimates of `t -> E[phi(U_t)]` and `t -> E[phi(-U_t)]` on a grid,
/// linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCurve {
    times: Vec<f64>,
    a_plus: Vec<f64>,
    a_minus: Vec<f64>,
    // int_0^{t_k} (a_plus - a_minus)
    cumulative: Vec<f64>,
}

impl DriftCurve {
    pub fn new(times: Vec<f64>, a_plus: Vec<f64>, a_minus: Vec<f64>) -> Result<Self, LimitError> {
        let bad = |m: &str| Err(LimitError::InvalidCurve(m.to_string()));
        if times.len() < 2 || a_plus.len() != times.len() || a_minus.len() != times.len() {
            return bad("need at least two grid points and matching lengths");
        }
        if times[0] != 0.0 {
            return bad("grid must start at t = 0");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("grid times must be strictly increasing");
        }
        if a_plus.iter().chain(&a_minus).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("a_plus and a_minus must be finite and non-negative");
        }
        let mut curve = Self { times, a_plus, a_minus, cumulative: Vec::new() };
        curve.rebuild();
        Ok(curve)
    }

    /// Constant curve on a uniform grid with `intervals` cells.
    pub fn constant(horizon: f64, intervals: usize, a_plus: f64, a_minus: f64) -> Result<Self, LimitError> {
        let times = crate::finite_system::uniform_grid(horizon, intervals);
        let k = times.len();
        Self::new(times, vec![a_plus; k], vec![a_minus; k])
    }

    fn rebuild(&mut self) {
        self.cumulative.clear();
        self.cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 1..self.times.len() {
            let dt = self.times[k] - self.times[k - 1];
            acc += 0.5 * dt * (self.diff(k - 1) + self.diff(k));
            self.cumulative.push(acc);
        }
    }

    #[inline]
    fn diff(&self, k: usize) -> f64 {
        self.a_plus[k] - self.a_minus[k]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn a_plus(&self) -> &[f64] {
        &self.a_plus
    }

    pub fn a_minus(&self) -> &[f64] {
        &self.a_minus
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    #[inline]
    fn cell(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1) - 1
    }

    /// Interpolated `a_plus(t) - a_minus(t)`.
    pub fn difference_at(&self, t: f64) -> f64 {
        let k = self.cell(t);
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.diff(k) + w * (self.diff(k + 1) - self.diff(k))
    }

    /// Interpolated `(a_plus(t), a_minus(t))`.
    pub fn values_at(&self, t: f64) -> (f64, f64) {
        let k = self.cell(t);
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (
            self.a_plus[k] + w * (self.a_plus[k + 1] - self.a_plus[k]),
            self.a_minus[k] + w * (self.a_minus[k + 1] - self.a_minus[k]),
        )
    }

    /// `int_0^t (a_plus - a_minus)`, exact for the interpolant. Times past
    /// the horizon extrapolate the last cell.
    #[inline]
    pub fn integral(&self, t: f64) -> f64 {
        let k = self.cell(t);
        let dt = self.times[k + 1] - self.times[k];
        let s = t - self.times[k];
        let slope = (self.diff(k + 1) - self.diff(k)) / dt;
        self.cumulative[k] + s * (self.diff(k) + 0.5 * slope * s)
    }

    /// Times inside grid cells where `a_plus - a_minus` changes sign.
    pub fn zero_crossings(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for k in 0..self.times.len() - 1 {
            let (d0, d1) = (self.diff(k), self.diff(k + 1));
            if d0 * d1 < 0.0 {
                let w = d0 / (d0 - d1);
                out.push(self.times[k] + w * (self.times[k + 1] - self.times[k]));
            }
        }
        out
    }

    /// `max_k max(|a_plus - a_plus'|, |a_minus - a_minus'|)` on a common grid.
    pub fn sup_distance(&self, other: &DriftCurve) -> f64 {
        self.a_plus
            .iter()
            .zip(&other.a_plus)
            .chain(self.a_minus.iter().zip(&other.a_minus))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// CSV `t,a_plus,a_minus`.
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "t,a_plus,a_minus")?;
        for k in 0..self.times.len() {
            writeln!(w, "{},{},{}", io::fmt17(self.times[k]), io::fmt17(self.a_plus[k]), io::fmt17(self.a_minus[k]))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, CsvError> {
        let rows = io::read_table(r, &["t", "a_plus", "a_minus"])?;
        let mut t = Vec::with_capacity(rows.len());
        let mut p = Vec::with_capacity(rows.len());
        let mut m = Vec::with_capacity(rows.len());
        for row in rows {
            t.push(row[0]);
            p.push(row[1]);
            m.push(row[2]);
        }
        Self::new(t, p, m).map_err(|e| CsvError::Invalid(e.to_string()))
    }
}

/// `2 L + 2 h t M<(2h)`: almost-sure bound on `sup_{s <= t} |U_s|`.
pub fn apriori_gamma(l: f64, t: f64, h: f64, rf: &RateFunction) -> Result<f64, RateError> {
    Ok(2.0 * l + 2.0 * h * t * rf.m_less(2.0 * h)?)
}

/// Thinning setup for a limit path.
#[derive(Debug, Clone, Copy)]
pub struct Thinning {
    /// Candidate intensity; must dominate `Phi` along the path.
    pub dominating_rate: f64,
    /// When set, `phi` is evaluated at `clamp(u, -r, r)`.
    pub clamp_radius: Option<f64>,
}

impl Thinning {
    /// Candidate rate `M<(r)` for paths started within `[-L, L]` and the
    /// Step-2 truncation at `r = 2L + 2hT M<(2h)`.
    pub fn for_horizon(rf: &RateFunction, h: f64, l: f64, horizon: f64) -> Result<Self, RateError> {
        let r = apriori_gamma(l, horizon, h, rf)?;
        Ok(Self { dominating_rate: rf.m_less(r)?, clamp_radius: Some(r) })
    }

    #[inline]
    fn rates(&self, rf: &RateFunction, u: f64) -> Result<(f64, f64), LimitError> {
        let x = match self.clamp_radius {
            Some(r) => u.clamp(-r, r),
            None => u,
        };
        let (p, m) = (rf.phi(x)?, rf.phi(-x)?);
        if p + m > self.dominating_rate * (1.0 + 1e-12) {
            return Err(LimitError::DominatingRate { u, rate: p + m, bound: self.dominating_rate });
        }
        Ok((p, m))
    }
}

/// Flow of a limit path between resets.
#[derive(Debug, Clone, Copy)]
pub struct Flow<'a> {
    pub drift: &'a DriftCurve,
    pub h: f64,
}

impl Flow<'_> {
    /// Value at `t` of a path that was at `u` at time `s` with no reset in
    /// between.
    #[inline]
    pub fn transport(&self, u: f64, s: f64, t: f64) -> f64 {
        u + self.h * (self.drift.integral(t) - self.drift.integral(s))
    }
}

/// One sampled limit path: initial value and reset times.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPath {
    pub u0: f64,
    pub horizon: f64,
    pub resets: Vec<(f64, Opinion)>,
    /// Largest `|U|` seen at candidate times and at the horizon.
    pub max_abs: f64,
}

impl LimitPath {
    /// Value at `t` (right-continuous).
    pub fn value_at(&self, flow: &Flow<'_>, t: f64) -> f64 {
        let idx = self.resets.partition_point(|&(s, _)| s <= t);
        if idx == 0 {
            flow.transport(self.u0, 0.0, t)
        } else {
            flow.transport(0.0, self.resets[idx - 1].0, t)
        }
    }
}

/// Sample a path of the limit dynamics driven by `drift` on `[0, horizon]`.
///
/// Candidates `(s, z)` arrive at rate `Lambda` with `z` uniform on
/// `[0, Lambda]`; `z <= phi(U)` is a favorable reset, `phi(U) < z <= Phi(U)`
/// a contrary one (the two opinion measures realized on one stream).
pub fn sample_limit_path<R: Rng + ?Sized>(
    rf: &RateFunction,
    h: f64,
    drift: &DriftCurve,
    u0: f64,
    horizon: f64,
    thinning: Thinning,
    rng: &mut R,
) -> Result<LimitPath, LimitError> {
    if horizon > drift.horizon() * (1.0 + 1e-12) {
        return Err(LimitError::InvalidCurve(format!("curve ends at {} < horizon {horizon}", drift.horizon())));
    }
    let flow = Flow { drift, h };
    let lambda = thinning.dominating_rate;
    let mut path = LimitPath { u0, horizon, resets: Vec::new(), max_abs: u0.abs() };
    let (mut anchor_t, mut anchor_u) = (0.0, u0);
    let mut s = 0.0;
    loop {
        let e: f64 = Exp1.sample(rng);
        s += e / lambda;
        if s >= horizon {
            break;
        }
        let z = rng.gen::<f64>() * lambda;
        let u = flow.transport(anchor_u, anchor_t, s);
        path.max_abs = path.max_abs.max(u.abs());
        let (p, m) = thinning.rates(rf, u)?;
        let opinion = if z <= p {
            Opinion::Favorable
        } else if z <= p + m {
            Opinion::Contrary
        } else {
            continue;
        };
        path.resets.push((s, opinion));
        anchor_t = s;
        anchor_u = 0.0;
    }
    path.max_abs = path.max_abs.max(flow.transport(anchor_u, anchor_t, horizon).abs());
    Ok(path)
}

/// Theoretical Picard contraction data on the truncated problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    /// Truncation radius `2L + 2hT M<(2h)`.
    pub radius: f64,
    /// Bound `K` on the truncated rate.
    pub rate_bound: f64,
    /// Lipschitz constant of the truncated rate.
    pub lipschitz: f64,
    /// `C(T) = 2 (L + 2 h K T) C_lip`.
    pub growth: f64,
    pub t_star: f64,
    pub c_at_t_star: f64,
}

impl ContractionReport {
    /// `c(t) = 2 h C_lip t exp(t C(T))`.
    pub fn factor(&self, h: f64, t: f64) -> f64 {
        2.0 * h * self.lipschitz * t * (t * self.growth).exp()
    }
}

pub fn contraction_report(rf: &RateFunction, h: f64, l: f64, horizon: f64) -> Result<ContractionReport, LimitError> {
    if !(h > 0.0 && horizon > 0.0 && l >= 0.0) {
        return Err(LimitError::InvalidConfig(format!("need h > 0, T > 0, L >= 0 (h = {h}, T = {horizon}, L = {l})")));
    }
    let radius = apriori_gamma(l, horizon, h, rf)?;
    let rate_bound = rf.sup_phi(radius)?;
    let lipschitz = rf.lipschitz_bound(radius)?;
    let growth = 2.0 * (l + 2.0 * h * rate_bound * horizon) * lipschitz;
    let mut rep = ContractionReport { radius, rate_bound, lipschitz, growth, t_star: horizon, c_at_t_star: 0.0 };
    if rep.factor(h, horizon) < 1.0 {
        rep.c_at_t_star = rep.factor(h, horizon);
        return Ok(rep);
    }
    let (mut lo, mut hi) = (0.0, horizon);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rep.factor(h, mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    rep.t_star = lo;
    rep.c_at_t_star = rep.factor(h, lo);
    Ok(rep)
}

/// Configuration of [`picard_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig {
    /// Monte Carlo paths per iteration.
    pub samples: usize,
    /// Grid cells over `[0, T]`; defaults to 512 per unit time.
    pub intervals: Option<usize>,
    /// Sup-norm stopping tolerance; defaults to 5 Monte Carlo standard
    /// errors of the curve estimate. At least two iterations always run.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Window length override.
    pub window: Option<f64>,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { samples: 20_000, intervals: None, tol: None, max_iter: 50, window: None }
    }
}

/// Residual history of one Picard window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub start: f64,
    pub end: f64,
    pub tol: f64,
    pub residuals: Vec<f64>,
}

/// Output of [`picard_solve`].
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub curve: DriftCurve,
    /// Standard errors of `a_plus`, `a_minus` at each grid point.
    pub se_plus: Vec<f64>,
    pub se_minus: Vec<f64>,
    /// Sample means of `|U_t| Phi(U_t)` on the grid, with standard errors.
    pub abs_times_intensity: Vec<f64>,
    pub abs_times_intensity_se: Vec<f64>,
    pub windows: Vec<WindowReport>,
    pub contraction: ContractionReport,
    /// Largest `|U|` over all sampled paths of the accepted iterates.
    pub max_abs: f64,
    pub apriori_bound: f64,
}

const CHUNK: usize = 256;
const MAX_WINDOW_HALVINGS: usize = 6;

// per-grid-point accumulators: sum and sum of squares of phi(U), phi(-U),
// |U| Phi(U)
#[derive(Clone)]
struct Sums {
    s: Vec<[f64; 6]>,
}

impl Sums {
    fn new(points: usize) -> Self {
        Self { s: vec![[0.0; 6]; points] }
    }

    #[inline]
    fn add(&mut self, k: usize, p: f64, m: f64, q: f64) {
        let e = &mut self.s[k];
        e[0] += p;
        e[1] += p * p;
        e[2] += m;
        e[3] += m * m;
        e[4] += q;
        e[5] += q * q;
    }

    fn merge(&mut self, other: &Sums) {
        for (a, b) in self.s.iter_mut().zip(&other.s) {
            for i in 0..6 {
                a[i] += b[i];
            }
        }
    }
}

struct Problem<'a> {
    rf: &'a RateFunction,
    h: f64,
    thinning: Thinning,
    seed: u64,
}

impl Problem<'_> {
    #[inline]
    fn observe(&self, u: f64) -> Result<(f64, f64, f64), LimitError> {
        let (p, m) = self.thinning.rates(self.rf, u)?;
        Ok((p, m, u.abs() * (p + m)))
    }

    /// Advance one path over grid cells `ka..kb`, accumulating observations
    /// at grid points `ka+1..=kb` into `sums[k - ka - 1]`. Returns the end
    /// value and the largest `|U|` seen.
    fn run_window(
        &self,
        drift: &DriftCurve,
        window: usize,
        path: usize,
        u_start: f64,
        ka: usize,
        kb: usize,
        sums: &mut Sums,
    ) -> Result<(f64, f64), LimitError> {
        let times = drift.times();
        let (ta, tb) = (times[ka], times[kb]);
        let flow = Flow { drift, h: self.h };
        let mut rng = rng::stream(self.seed, &[domain::PICARD, window as u64, path as u64]);
        let lambda = self.thinning.dominating_rate;
        let (mut anchor_t, mut anchor_u) = (ta, u_start);
        let mut max_abs = u_start.abs();
        let mut next_grid = ka + 1;
        let mut s = ta;
        loop {
            let e: f64 = Exp1.sample(&mut rng);
            s += e / lambda;
            let z = rng.gen::<f64>() * lambda;
            let stop = s.min(tb);
            while next_grid <= kb && times[next_grid] <= stop {
                let u = flow.transport(anchor_u, anchor_t, times[next_grid]);
                max_abs = max_abs.max(u.abs());
                let (p, m, q) = self.observe(u)?;
                sums.add(next_grid - ka - 1, p, m, q);
                next_grid += 1;
            }
            if s >= tb {
                break;
            }
            let u = flow.transport(anchor_u, anchor_t, s);
            max_abs = max_abs.max(u.abs());
            let (p, m) = self.thinning.rates(self.rf, u)?;
            if z <= p + m {
                anchor_t = s;
                anchor_u = 0.0;
            }
        }
        let end = flow.transport(anchor_u, anchor_t, tb);
        Ok((end, max_abs.max(end.abs())))
    }
}

/// Solve the limit equation for `E[phi(+-U_t)]` on `[0, T]` by Picard
/// iteration with Monte Carlo expectations.
///
/// The horizon is split into windows; on each window the curve starts at
/// the constant value at the window start and the map curve -> paths ->
/// curve is iterated with common random numbers (path `m` of window `w`
/// always replays the same candidate stream) until the sup-norm change drops
/// below the tolerance. A window that fails to converge in `max_iter`
/// iterations is halved and restarted.
pub fn picard_solve(
    rf: &RateFunction,
    h: f64,
    initial: &InitialCondition,
    horizon: f64,
    cfg: &PicardConfig,
    seed: u64,
) -> Result<PicardSolution, LimitError> {
    if cfg.samples < 1000 {
        return Err(LimitError::InvalidConfig(format!("need at least 1000 samples, got {}", cfg.samples)));
    }
    if matches!(cfg.tol, Some(t) if !(t > 0.0)) {
        return Err(LimitError::InvalidConfig("tol must be positive".into()));
    }
    if !(h > 0.0 && horizon > 0.0) {
        return Err(LimitError::InvalidConfig(format!("need h > 0 and T > 0 (h = {h}, T = {horizon})")));
    }
    initial.validate(None).map_err(|e| LimitError::InvalidConfig(e.to_string()))?;
    let l = initial.support_bound();
    let intervals = cfg.intervals.unwrap_or_else(|| ((512.0 * horizon).ceil() as usize).max(1));
    let times = crate::finite_system::uniform_grid(horizon, intervals);
    let dt = horizon / intervals as f64;
    let contraction = contraction_report(rf, h, l, horizon)?;
    let thinning = Thinning::for_horizon(rf, h, l, horizon)?;
    let apriori_bound = contraction.radius;
    let problem = Problem { rf, h, thinning, seed };
    let m = cfg.samples;

    let window_len = match cfg.window {
        Some(w) if w > 0.0 => w,
        Some(w) => return Err(LimitError::InvalidConfig(format!("window {w} must be positive"))),
        None => {
            let practical = (0.25 / (h * rf.lipschitz_bound(l + h)?.max(1e-12))).min(horizon);
            contraction.t_star.max(practical)
        }
    };
    let base_cells = ((window_len / dt).round() as usize).clamp(1, intervals);

    // initial pressures and statistics at t = 0
    let mut state: Vec<f64> = (0..m)
        .map(|i| initial.sample(&mut rng::stream(seed, &[domain::INITIAL, i as u64])))
        .collect();
    let mut a_plus = vec![0.0; times.len()];
    let mut a_minus = vec![0.0; times.len()];
    let mut se_plus = vec![0.0; times.len()];
    let mut se_minus = vec![0.0; times.len()];
    let mut abs_int = vec![0.0; times.len()];
    let mut abs_int_se = vec![0.0; times.len()];
    {
        let mut s0 = Sums::new(1);
        for &u in &state {
            let (p, mm, q) = problem.observe(u)?;
            s0.add(0, p, mm, q);
        }
        let st = moments(&s0.s[0], m);
        (a_plus[0], se_plus[0], a_minus[0], se_minus[0], abs_int[0], abs_int_se[0]) = st;
    }
    let mut max_abs = state.iter().fold(0.0f64, |a, u| a.max(u.abs()));
    let mut windows = Vec::new();
    let mut ka = 0;
    let mut window_idx = 0usize;
    while ka < intervals {
        let mut cells = base_cells.min(intervals - ka);
        let mut halvings = 0;
        loop {
            let kb = ka + cells;
            match iterate_window(&problem, &times, &mut a_plus, &mut a_minus, &state, ka, kb, window_idx, cfg)? {
                Ok(out) => {
                    for k in ka + 1..=kb {
                        let st = moments(&out.sums.s[k - ka - 1], m);
                        let (_, sp, _, sm, q, qse) = st;
                        se_plus[k] = sp;
                        se_minus[k] = sm;
                        abs_int[k] = q;
                        abs_int_se[k] = qse;
                    }
                    if out.max_abs > apriori_bound * (1.0 + 1e-9) {
                        return Err(LimitError::AprioriBound { value: out.max_abs, bound: apriori_bound });
                    }
                    max_abs = max_abs.max(out.max_abs);
                    state = out.ends;
                    windows.push(WindowReport { start: times[ka], end: times[kb], tol: out.tol, residuals: out.residuals });
                    ka = kb;
                    window_idx += 1;
                    break;
                }
                Err(residuals) => {
                    if cells == 1 || halvings >= MAX_WINDOW_HALVINGS {
                        let last = *residuals.last().unwrap_or(&f64::NAN);
                        return Err(LimitError::NonConvergence { start: times[ka], end: times[kb], residuals, last });
                    }
                    cells = (cells / 2).max(1);
                    halvings += 1;
                    // fresh streams for the restarted window
                    window_idx += 1;
                }
            }
        }
    }
    let curve = DriftCurve::new(times, a_plus, a_minus)?;
    Ok(PicardSolution {
        curve,
        se_plus,
        se_minus,
        abs_times_intensity: abs_int,
        abs_times_intensity_se: abs_int_se,
        windows,
        contraction,
        max_abs,
        apriori_bound,
    })
}

fn moments(e: &[f64; 6], m: usize) -> (f64, f64, f64, f64, f64, f64) {
    let n = m as f64;
    let stat = |s: f64, ss: f64| {
        let mean = s / n;
        let var = ((ss - n * mean * mean) / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    };
    let (p, sp) = stat(e[0], e[1]);
    let (mm, sm) = stat(e[2], e[3]);
    let (q, sq) = stat(e[4], e[5]);
    (p, sp, mm, sm, q, sq)
}

struct WindowOutcome {
    sums: Sums,
    ends: Vec<f64>,
    max_abs: f64,
    residuals: Vec<f64>,
    tol: f64,
}

#[allow(clippy::too_many_arguments)]
fn iterate_window(
    problem: &Problem<'_>,
    times: &[f64],
    a_plus: &mut [f64],
    a_minus: &mut [f64],
    state: &[f64],
    ka: usize,
    kb: usize,
    window_idx: usize,
    cfg: &PicardConfig,
) -> Result<Result<WindowOutcome, Vec<f64>>, LimitError> {
    let m = state.len();
    let points = kb - ka;
    // U^[0] is frozen at its window-start value.
    for k in ka + 1..=kb {
        a_plus[k] = a_plus[ka];
        a_minus[k] = a_minus[ka];
    }
    let mut residuals = Vec::new();
    let mut tol = cfg.tol.unwrap_or(f64::INFINITY);
    for iter in 0..cfg.max_iter {
        let drift = DriftCurve::new(times.to_vec(), a_plus.to_vec(), a_minus.to_vec())?;
        let chunks: Vec<(Sums, Vec<f64>, f64)> = (0..m.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut sums = Sums::new(points);
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(m);
                let mut ends = Vec::with_capacity(hi - lo);
                let mut max_abs = 0.0f64;
                for path in lo..hi {
                    let (end, mx) = problem.run_window(&drift, window_idx, path, state[path], ka, kb, &mut sums)?;
                    ends.push(end);
                    max_abs = max_abs.max(mx);
                }
                Ok((sums, ends, max_abs))
            })
            .collect::<Result<_, LimitError>>()?;
        let mut total = Sums::new(points);
        let mut ends = Vec::with_capacity(m);
        let mut max_abs = 0.0f64;
        for (s, e, mx) in &chunks {
            total.merge(s);
            ends.extend_from_slice(e);
            max_abs = max_abs.max(*mx);
        }
        let mut residual = 0.0f64;
        let mut max_se = 0.0f64;
        for k in ka + 1..=kb {
            let (p, sp, mm, sm, _, _) = moments(&total.s[k - ka - 1], m);
            residual = residual.max((p - a_plus[k]).abs()).max((mm - a_minus[k]).abs());
            max_se = max_se.max(sp).max(sm);
            a_plus[k] = p;
            a_minus[k] = mm;
        }
        residuals.push(residual);
        if iter == 0 && cfg.tol.is_none() {
            tol = 5.0 * max_se;
        }
        if iter >= 1 && residual < tol || residual == 0.0 {
            return Ok(Ok(WindowOutcome { sums: total, ends, max_abs, residuals, tol }));
        }
    }
    Ok(Err(residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn apriori_gamma_values() {
        let t = RateFunction::tanh_plus_one();
        assert_eq!(apriori_gamma(1.0, 3.0, 2.0, &t).unwrap(), 26.0);
        assert_eq!(apriori_gamma(0.7, 0.0, 2.0, &t).unwrap(), 1.4);
    }

    #[test]
    fn curve_validation() {
        assert!(DriftCurve::new(vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(DriftCurve::new(vec![0.1, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(DriftCurve::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(DriftCurve::new(vec![0.0, 1.0], vec![-1.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn integral_of_piecewise_linear() {
        let c = DriftCurve::new(vec![0.0, 1.0, 3.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]).unwrap();
        // d = 1, 2, -1
        assert!((c.integral(1.0) - 1.5).abs() < 1e-15);
        assert!((c.integral(3.0) - 2.5).abs() < 1e-15);
        assert!((c.integral(0.5) - (0.5 + 0.125)).abs() < 1e-15);
        assert!((c.difference_at(2.0) - 0.5).abs() < 1e-15);
        let z = c.zero_crossings();
        assert_eq!(z.len(), 1);
        assert!((z[0] - (1.0 + 2.0 / 3.0 * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_drift_traps_at_zero() {
        let rf = RateFunction::tanh_plus_one();
        let drift = DriftCurve::constant(5.0, 10, 1.0, 1.0).unwrap();
        let th = Thinning::for_horizon(&rf, 1.0, 1.0, 5.0).unwrap();
        let mut r = rng::stream(1, &[99]);
        let flow = Flow { drift: &drift, h: 1.0 };
        for _ in 0..100 {
            let p = sample_limit_path(&rf, 1.0, &drift, 0.8, 5.0, th, &mut r).unwrap();
            if let Some(&(first, _)) = p.resets.first() {
                for i in 0..50 {
                    let t = first + (5.0 - first) * i as f64 / 50.0;
                    assert_eq!(p.value_at(&flow, t), 0.0);
                }
                assert_eq!(p.value_at(&flow, first * 0.5), 0.8);
            }
        }
    }

    #[test]
    fn constant_drift_is_linear_between_resets() {
        let rf = RateFunction::tanh_plus_one();
        let drift = DriftCurve::constant(4.0, 16, 1.5, 0.5).unwrap();
        let h = 0.7;
        let flow = Flow { drift: &drift, h };
        let th = Thinning::for_horizon(&rf, h, 1.0, 4.0).unwrap();
        let p = sample_limit_path(&rf, h, &drift, -0.2, 4.0, th, &mut rng::stream(3, &[1])).unwrap();
        let start = p.resets.first().map(|r| r.0).unwrap_or(4.0);
        for i in 0..10 {
            let t = start * i as f64 / 10.0;
            assert!((p.value_at(&flow, t) - (-0.2 + h * 1.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_paths_respect_apriori_bound() {
        let rf = RateFunction::tanh_plus_one();
        let (h, l, horizon) = (2.0, 1.0, 3.0);
        // the most adverse admissible drift: |a_plus - a_minus| = 2
        let drift = DriftCurve::constant(horizon, 8, 2.0, 0.0).unwrap();
        let th = Thinning::for_horizon(&rf, h, l, horizon).unwrap();
        let bound = apriori_gamma(l, horizon, h, &rf).unwrap();
        let mut r = rng::stream(8, &[0]);
        for i in 0..10_000 {
            let u0 = if i % 2 == 0 { l } else { -l };
            let p = sample_limit_path(&rf, h, &drift, u0, horizon, th, &mut r).unwrap();
            assert!(p.max_abs <= bound);
        }
    }

    #[test]
    fn dominating_rate_violation_detected() {
        let rf = RateFunction::exponential();
        let drift = DriftCurve::constant(2.0, 4, 1.0, 1.0).unwrap();
        let th = Thinning { dominating_rate: 2.5, clamp_radius: None };
        let r = sample_limit_path(&rf, 1.0, &drift, 3.0, 2.0, th, &mut rng::stream(1, &[2]));
        assert!(matches!(r, Err(LimitError::DominatingRate { .. })));
    }

    #[test]
    fn contraction_factor_behaviour() {
        let rf = RateFunction::tanh_plus_one();
        let rep = contraction_report(&rf, 1e-6, 1.0, 2.0).unwrap();
        assert_eq!(rep.t_star, 2.0);
        assert!(rep.c_at_t_star < 1e-3);
        let rep = contraction_report(&rf, 2.0, 1.0, 1.0).unwrap();
        assert!(rep.t_star > 0.0 && rep.t_star < 1.0);
        assert!(rep.c_at_t_star < 1.0);
        let mut prev = 0.0;
        for i in 0..100 {
            let c = rep.factor(2.0, i as f64 / 100.0);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn zero_start_gives_phi_zero_exactly() {
        let rf = RateFunction::exponential();
        let cfg = PicardConfig { samples: 1000, intervals: Some(20), tol: None, max_iter: 50, window: None };
        let sol = picard_solve(&rf, 0.3, &InitialCondition::Constant(0.0), 0.5, &cfg, 4).unwrap();
        assert_eq!(sol.curve.a_plus()[0], 1.0);
        assert_eq!(sol.curve.a_minus()[0], 1.0);
    }

    #[test]
    fn picard_is_reproducible() {
        let rf = RateFunction::tanh_plus_one();
        let cfg = PicardConfig { samples: 2000, intervals: Some(40), tol: Some(1e-6), max_iter: 50, window: None };
        let a = picard_solve(&rf, 1.5, &InitialCondition::Constant(1.0), 1.0, &cfg, 9).unwrap();
        let b = picard_solve(&rf, 1.5, &InitialCondition::Constant(1.0), 1.0, &cfg, 9).unwrap();
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn picard_rejects_small_sample() {
        let rf = RateFunction::tanh_plus_one();
        let cfg = PicardConfig { samples: 10, ..Default::default() };
        assert!(picard_solve(&rf, 1.0, &InitialCondition::Constant(0.0), 1.0, &cfg, 1).is_err());
    }

    #[test]
    fn curve_csv_roundtrip() {
        let c = DriftCurve::new(vec![0.0, 0.5, 1.0], vec![1.0, 1.25, 1.5], vec![1.0, 0.75, 1.0 / 3.0]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf, Some("seed=1")).unwrap();
        let back = DriftCurve::read_csv(&buf[..]).unwrap();
        assert_eq!(back, c);
    }
}
