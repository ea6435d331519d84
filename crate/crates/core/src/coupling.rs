//! Coupled construction of the finite system and `N` independent copies of
//! the limit equation, driven by the same Poisson randomness, and the
//! resulting strong-error estimates.
//!
//! Every (actor, opinion) pair owns a [`SharedPoissonStream`] of candidate
//! points `(s, z)`. Each side accepts a candidate when `z <= phi(o U_{s-})`
//! for its own state; the finite side then applies the social-pressure map,
//! the limit side resets its copy to 0.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::finite_system::{InitialCondition, ModelParams, Opinion, SimError, BOUND_SLACK};
use crate::io;
use crate::limit_sde::{self, DriftCurve, LimitError, PicardConfig};
use crate::rates::{RateError, RateFunction};
use crate::rng::{self, domain, StreamRng};
use crate::stats::{self, LineFit, Moments};

/// Upper bound on adaptive raises of the dominating rate in one run.
pub const MAX_RAISES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error("drift curve covers [0, {curve}] but the horizon is {horizon}")]
    ShortCurve { curve: f64, horizon: f64 },
    #[error("intensity {rate} of actor {actor} exceeds the dominating rate {bound} at t = {t} after {raises} raises")]
    RateBreach { actor: usize, t: f64, rate: f64, bound: f64, raises: usize },
    #[error("pathwise bound violated for actor {actor} at t = {t}: |U| = {value} > {bound}")]
    PathwiseBound { actor: usize, t: f64, value: f64, bound: f64 },
    #[error("need at least two rows with positive errors to fit a rate")]
    Degenerate,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Identifies one candidate stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
    pub actor: usize,
    pub opinion: Opinion,
}

#[derive(Debug, Clone)]
struct Layer {
    lo: f64,
    hi: f64,
    rng: StreamRng,
    next: (f64, f64),
}

impl Layer {
    fn new(key: &StreamKey, index: usize, lo: f64, hi: f64, from: f64) -> Self {
        let rng = rng::stream(
            key.seed,
            &[domain::COUPLING, key.replica, key.actor as u64, key.opinion.index() as u64, index as u64],
        );
        let mut layer = Self { lo, hi, rng, next: (from, 0.0) };
        layer.advance();
        layer
    }

    fn advance(&mut self) {
        let e: f64 = Exp1.sample(&mut self.rng);
        let s = self.next.0 + e / (self.hi - self.lo);
        let z = self.lo + self.rng.gen::<f64>() * (self.hi - self.lo);
        self.next = (s, z);
    }
}

/// Lazily generated Poisson points on `[0, inf) x [0, Lambda]` with unit
/// intensity, replayable from their key.
///
/// Raising `Lambda` to `Lambda'` at time `s0` superposes an independent
/// stream on `(s0, inf) x (Lambda, Lambda']`, so the points below the old
/// level are unchanged and the union is again a unit-intensity Poisson
/// measure on the enlarged strip.
#[derive(Debug, Clone)]
pub struct SharedPoissonStream {
    key: StreamKey,
    layers: Vec<Layer>,
    consumed: f64,
}

impl SharedPoissonStream {
    pub fn new(key: StreamKey, dominating_rate: f64) -> Self {
        assert!(dominating_rate > 0.0 && dominating_rate.is_finite());
        Self { key, layers: vec![Layer::new(&key, 0, 0.0, dominating_rate, 0.0)], consumed: 0.0 }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn dominating_rate(&self) -> f64 {
        self.layers.last().unwrap().hi
    }

    /// Time of the next point.
    pub fn peek_time(&self) -> f64 {
        self.layers.iter().map(|l| l.next.0).fold(f64::INFINITY, f64::min)
    }

    /// Next point `(s, z)` in time order.
    pub fn next_point(&mut self) -> (f64, f64) {
        let i = (0..self.layers.len())
            .min_by(|&a, &b| self.layers[a].next.0.total_cmp(&self.layers[b].next.0))
            .unwrap();
        let p = self.layers[i].next;
        self.layers[i].advance();
        self.consumed = p.0;
        p
    }

    /// Enlarge the strip to `[0, rate]` for times after `from`.
    pub fn raise(&mut self, rate: f64, from: f64) {
        let top = self.dominating_rate();
        if rate <= top {
            return;
        }
        let from = from.max(self.consumed);
        let idx = self.layers.len();
        self.layers.push(Layer::new(&self.key, idx, top, rate, from));
    }
}

/// One half of a coupled run.
pub trait Side {
    /// Left limit of actor `a`'s pressure at `t`.
    fn value(&self, a: usize, t: f64) -> f64;
    /// Pressures of all actors at `t`.
    fn values_at(&self, t: f64, out: &mut [f64]);
    /// Apply an accepted event of actor `a` at time `t`.
    fn accept(&mut self, a: usize, o: Opinion, t: f64);
    /// Pathwise bound on `|U(a)|` in the current state.
    fn bound(&self, a: usize) -> f64;
    /// A bound on every actor's `|U|` until the next accepted event.
    fn global_bound(&self) -> f64;
}

/// Finite system in the offset representation: `U(b) = stored[b] + offset`.
#[derive(Debug, Clone)]
pub struct FiniteSide {
    stored: Vec<f64>,
    initial: Vec<f64>,
    offset: f64,
    shift: f64,
    l: f64,
    h: f64,
    jumps: u64,
}

impl FiniteSide {
    pub fn new(initial: Vec<f64>, h: f64) -> Self {
        let n = initial.len();
        let l = initial.iter().fold(0.0f64, |m, u| m.max(u.abs()));
        Self { stored: initial.clone(), initial, offset: 0.0, shift: h / n as f64, l, h, jumps: 0 }
    }

    pub fn total_jumps(&self) -> u64 {
        self.jumps
    }
}

impl Side for FiniteSide {
    #[inline]
    fn value(&self, a: usize, _t: f64) -> f64 {
        self.stored[a] + self.offset
    }

    fn values_at(&self, _t: f64, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.stored) {
            *o = s + self.offset;
        }
    }

    fn accept(&mut self, a: usize, o: Opinion, _t: f64) {
        self.offset += o.sign() * self.shift;
        self.stored[a] = -self.offset;
        self.jumps += 1;
    }

    fn bound(&self, a: usize) -> f64 {
        self.initial[a].abs() + self.h * self.jumps as f64 / self.stored.len() as f64
    }

    fn global_bound(&self) -> f64 {
        // the next event can add at most h/N
        self.l + self.h * (self.jumps + 1) as f64 / self.stored.len() as f64
    }
}

/// `N` independent copies of the limit equation under a fixed drift curve.
#[derive(Debug, Clone)]
pub struct LimitSide<'a> {
    drift: &'a DriftCurve,
    h: f64,
    anchor_u: Vec<f64>,
    // h * int_0^{anchor time} (a_plus - a_minus)
    anchor_i: Vec<f64>,
    radius: f64,
    resets: u64,
}

impl<'a> LimitSide<'a> {
    /// `radius` is the a priori bound on `|U|` over the horizon.
    pub fn new(initial: Vec<f64>, drift: &'a DriftCurve, h: f64, radius: f64) -> Self {
        let n = initial.len();
        Self { drift, h, anchor_u: initial, anchor_i: vec![0.0; n], radius, resets: 0 }
    }

    pub fn total_resets(&self) -> u64 {
        self.resets
    }
}

impl Side for LimitSide<'_> {
    #[inline]
    fn value(&self, a: usize, t: f64) -> f64 {
        self.anchor_u[a] + (self.h * self.drift.integral(t) - self.anchor_i[a])
    }

    fn values_at(&self, t: f64, out: &mut [f64]) {
        let it = self.h * self.drift.integral(t);
        for ((o, u), i) in out.iter_mut().zip(&self.anchor_u).zip(&self.anchor_i) {
            *o = u + (it - i);
        }
    }

    fn accept(&mut self, a: usize, _o: Opinion, t: f64) {
        self.anchor_u[a] = 0.0;
        self.anchor_i[a] = self.h * self.drift.integral(t);
        self.resets += 1;
    }

    fn bound(&self, _a: usize) -> f64 {
        self.radius
    }

    fn global_bound(&self) -> f64 {
        self.radius
    }
}

/// Per-actor strong errors of one coupled run.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingResult {
    pub n: usize,
    pub seed: u64,
    pub replica: u64,
    /// `sup_{s <= T} |U^N_s(a) - U_s(a)|` per actor.
    pub sup_errors: Vec<f64>,
    pub mean_sup_error: f64,
    /// Accepted events of the first and second side over `[0, T]`.
    pub events: [u64; 2],
    pub dominating_rate: f64,
    pub raises: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    time: f64,
    stream: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.stream.cmp(&other.stream))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Initial dominating rate: `sup phi` when finite, otherwise twice `M<` at
/// the larger of the limit a priori radius and the finite-system cap
/// `L + h z_cap`, with `z_cap = 1 + 2 T M<(2h) + 12 sqrt(T M<(2h) / N)` a
/// high-probability bound on `Z_T / N`.
pub fn initial_dominating_rate(rf: &RateFunction, h: f64, l: f64, horizon: f64, n: usize) -> Result<f64, RateError> {
    if let Some(s) = rf.global_sup() {
        return Ok(s);
    }
    let m2h = rf.m_less(2.0 * h)?;
    let z_cap = 1.0 + 2.0 * horizon * m2h + 12.0 * (horizon * m2h / n as f64).sqrt();
    let radius = limit_sde::apriori_gamma(l, horizon, h, rf)?.max(l + h * z_cap);
    Ok(2.0 * rf.m_less(radius)?)
}

/// Run two sides through shared candidate streams on `[0, horizon]`.
///
/// Errors are checked at time 0, at left and right limits of every
/// accepted event, at sign changes of the drift and at the horizon. Between
/// consecutive checkpoints both pressures differ by a constant plus a
/// monotone function of time, so the supremum is attained at the
/// checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn coupled_run_sides<A: Side, B: Side>(
    rf: &RateFunction,
    a: &mut A,
    b: &mut B,
    n: usize,
    horizon: f64,
    drift_crossings: &[f64],
    seed: u64,
    replica: u64,
    dominating_rate: f64,
) -> Result<CouplingResult, CouplingError> {
    let mut lambda = dominating_rate;
    let mut streams: Vec<SharedPoissonStream> = (0..n)
        .flat_map(|actor| {
            Opinion::BOTH.map(|opinion| SharedPoissonStream::new(StreamKey { seed, replica, actor, opinion }, lambda))
        })
        .collect();
    let mut heap: BinaryHeap<Reverse<Candidate>> =
        streams.iter().enumerate().map(|(i, s)| Reverse(Candidate { time: s.peek_time(), stream: i })).collect();
    let mut sup = vec![0.0f64; n];
    let mut va = vec![0.0; n];
    let mut vb = vec![0.0; n];
    let mut raises = 0;
    let mut events = [0u64; 2];
    let mut crossings = drift_crossings.iter().copied().filter(|&c| c > 0.0 && c < horizon).peekable();

    let checkpoint = |a: &A, b: &B, t: f64, va: &mut [f64], vb: &mut [f64], sup: &mut [f64]| {
        a.values_at(t, va);
        b.values_at(t, vb);
        for i in 0..n {
            sup[i] = sup[i].max((va[i] - vb[i]).abs());
            for (v, side_bound) in [(va[i], a.bound(i)), (vb[i], b.bound(i))] {
                if v.abs() > side_bound * (1.0 + BOUND_SLACK) + BOUND_SLACK {
                    return Err(CouplingError::PathwiseBound { actor: i, t, value: v.abs(), bound: side_bound });
                }
            }
        }
        Ok(())
    };

    checkpoint(a, b, 0.0, &mut va, &mut vb, &mut sup)?;
    while let Some(Reverse(cand)) = heap.pop() {
        let (s, z) = streams[cand.stream].next_point();
        debug_assert_eq!(s, cand.time);
        while let Some(&c) = crossings.peek() {
            if c >= s.min(horizon) {
                break;
            }
            checkpoint(a, b, c, &mut va, &mut vb, &mut sup)?;
            crossings.next();
        }
        if s >= horizon {
            break;
        }
        heap.push(Reverse(Candidate { time: streams[cand.stream].peek_time(), stream: cand.stream }));
        let actor = cand.stream / 2;
        let opinion = Opinion::BOTH[cand.stream % 2];
        let ua = a.value(actor, s);
        let ub = b.value(actor, s);
        let ra = rf.phi(opinion.sign() * ua)?;
        let rb = rf.phi(opinion.sign() * ub)?;
        let rate = ra.max(rb);
        if rate > lambda {
            return Err(CouplingError::RateBreach { actor, t: s, rate, bound: lambda, raises });
        }
        let acc_a = z <= ra;
        let acc_b = z <= rb;
        if !(acc_a || acc_b) {
            continue;
        }
        checkpoint(a, b, s, &mut va, &mut vb, &mut sup)?;
        if acc_a {
            a.accept(actor, opinion, s);
            events[0] += 1;
        }
        if acc_b {
            b.accept(actor, opinion, s);
            events[1] += 1;
        }
        checkpoint(a, b, s, &mut va, &mut vb, &mut sup)?;

        let needed = rf.m_less(a.global_bound().max(b.global_bound()))?;
        if needed > lambda {
            if raises >= MAX_RAISES {
                return Err(CouplingError::RateBreach { actor, t: s, rate: needed, bound: lambda, raises });
            }
            lambda = 2.0 * needed;
            raises += 1;
            for st in streams.iter_mut() {
                st.raise(lambda, s);
            }
            heap = streams
                .iter()
                .enumerate()
                .map(|(i, st)| Reverse(Candidate { time: st.peek_time(), stream: i }))
                .collect();
        }
    }
    for c in crossings {
        checkpoint(a, b, c, &mut va, &mut vb, &mut sup)?;
    }
    checkpoint(a, b, horizon, &mut va, &mut vb, &mut sup)?;
    let mean_sup_error = sup.iter().sum::<f64>() / n as f64;
    Ok(CouplingResult {
        n,
        seed,
        replica,
        sup_errors: sup,
        mean_sup_error,
        events,
        dominating_rate: lambda,
        raises,
    })
}

fn check_curve(drift: &DriftCurve, horizon: f64) -> Result<(), CouplingError> {
    if drift.horizon() < horizon * (1.0 - 1e-12) {
        return Err(CouplingError::ShortCurve { curve: drift.horizon(), horizon });
    }
    Ok(())
}

/// Couple the finite system of `params` (replica `replica`) with `N` limit
/// copies following `drift`. Initial pressures are shared.
pub fn coupled_run(params: &ModelParams, drift: &DriftCurve, replica: u64) -> Result<CouplingResult, CouplingError> {
    params.validate()?;
    check_curve(drift, params.horizon)?;
    let u0 = params.initial_pressures(replica)?;
    let l = params.initial.support_bound();
    let radius = limit_sde::apriori_gamma(l, params.horizon, params.h, &params.rate)?;
    let lambda = initial_dominating_rate(&params.rate, params.h, l, params.horizon, params.n)?;
    let mut finite = FiniteSide::new(u0.clone(), params.h);
    let mut limit = LimitSide::new(u0, drift, params.h, radius);
    coupled_run_sides(
        &params.rate,
        &mut finite,
        &mut limit,
        params.n,
        params.horizon,
        &drift.zero_crossings(),
        params.seed,
        replica,
        lambda,
    )
}

/// Limit copies on both sides of the coupling.
pub fn self_coupled_run(params: &ModelParams, drift: &DriftCurve, replica: u64) -> Result<CouplingResult, CouplingError> {
    params.validate()?;
    check_curve(drift, params.horizon)?;
    let u0 = params.initial_pressures(replica)?;
    let l = params.initial.support_bound();
    let radius = limit_sde::apriori_gamma(l, params.horizon, params.h, &params.rate)?;
    let lambda = initial_dominating_rate(&params.rate, params.h, l, params.horizon, params.n)?;
    let mut a = LimitSide::new(u0.clone(), drift, params.h, radius);
    let mut b = LimitSide::new(u0, drift, params.h, radius);
    coupled_run_sides(
        &params.rate,
        &mut a,
        &mut b,
        params.n,
        params.horizon,
        &drift.zero_crossings(),
        params.seed,
        replica,
        lambda,
    )
}

/// One row of a strong-error table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub n: usize,
    pub mean_sup_error: f64,
    pub std_error: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone)]
pub struct ErrorCurve {
    pub rows: Vec<ErrorRow>,
    pub drift: DriftCurve,
}

impl ErrorCurve {
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "N,mean_sup_error,std_error,replicas")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.n, io::fmt17(r.mean_sup_error), io::fmt17(r.std_error), r.replicas)?;
        }
        Ok(())
    }
}

/// Mean sup-error against `N`. The drift curve is solved once with
/// `picard` and reused; replica `r` of size `N` uses its own streams.
#[allow(clippy::too_many_arguments)]
pub fn strong_error_curve(
    rf: &RateFunction,
    h: f64,
    initial: &InitialCondition,
    horizon: f64,
    ns: &[usize],
    replicas: usize,
    seed: u64,
    picard: &PicardConfig,
) -> Result<ErrorCurve, CouplingError> {
    if ns.len() < 2 || ns.iter().any(|&n| n < 10) {
        return Err(CouplingError::Invalid("need at least two actor counts, each >= 10".into()));
    }
    if replicas < 2 {
        return Err(CouplingError::Invalid("need at least two replicas".into()));
    }
    let sol = limit_sde::picard_solve(rf, h, initial, horizon, picard, seed)?;
    let drift = sol.curve;
    error_table(rf, h, initial, horizon, ns, replicas, seed, &drift).map(|rows| ErrorCurve { rows, drift })
}

/// Strong-error table against a given drift curve.
#[allow(clippy::too_many_arguments)]
pub fn error_table(
    rf: &RateFunction,
    h: f64,
    initial: &InitialCondition,
    horizon: f64,
    ns: &[usize],
    replicas: usize,
    seed: u64,
    drift: &DriftCurve,
) -> Result<Vec<ErrorRow>, CouplingError> {
    let mut rows = Vec::with_capacity(ns.len());
    for (i, &n) in ns.iter().enumerate() {
        let params = ModelParams { n, h, rate: rf.clone(), horizon, seed: rng::key_hash(&[seed, i as u64, n as u64]), initial: initial.clone() };
        let errs: Vec<f64> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| coupled_run(&params, drift, r).map(|c| c.mean_sup_error))
            .collect::<Result<_, _>>()?;
        let m: Moments = errs.iter().copied().collect();
        rows.push(ErrorRow { n, mean_sup_error: m.mean(), std_error: m.std_error(), replicas });
    }
    Ok(rows)
}

/// Least squares of `log(mean error)` on `log N`.
pub fn fit_rate(rows: &[ErrorRow]) -> Result<LineFit, CouplingError> {
    if rows.len() < 2 || rows.iter().any(|r| !(r.mean_sup_error > 0.0)) {
        return Err(CouplingError::Degenerate);
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_sup_error.ln()).collect();
    Ok(stats::least_squares(&xs, &ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_system::total_jumps_at_horizon;

    fn key(actor: usize) -> StreamKey {
        StreamKey { seed: 5, replica: 0, actor, opinion: Opinion::Favorable }
    }

    #[test]
    fn stream_replays() {
        let mut a = SharedPoissonStream::new(key(3), 2.0);
        let mut b = SharedPoissonStream::new(key(3), 2.0);
        for _ in 0..100 {
            assert_eq!(a.next_point(), b.next_point());
        }
        a.raise(5.0, 30.0);
        b.raise(5.0, 30.0);
        for _ in 0..100 {
            assert_eq!(a.next_point(), b.next_point());
        }
        let mut c = SharedPoissonStream::new(key(4), 2.0);
        assert_ne!(SharedPoissonStream::new(key(3), 2.0).next_point(), c.next_point());
    }

    #[test]
    fn raise_keeps_lower_points() {
        let mut a = SharedPoissonStream::new(key(1), 1.0);
        let mut b = SharedPoissonStream::new(key(1), 1.0);
        b.raise(3.0, 0.0);
        let low_a: Vec<_> = (0..200).map(|_| a.next_point()).collect();
        let mut low_b = Vec::new();
        while low_b.len() < 200 {
            let p = b.next_point();
            if p.1 <= 1.0 {
                low_b.push(p);
            } else {
                assert!(p.1 <= 3.0);
            }
        }
        assert_eq!(low_a, low_b);
    }

    fn thinned_counts(lambda: f64, rate: f64, horizon: f64, raise_at: Option<f64>, streams: usize) -> Vec<u64> {
        (0..streams)
            .map(|i| {
                let mut s = SharedPoissonStream::new(StreamKey { seed: 11, replica: 1, actor: i, opinion: Opinion::Contrary }, lambda);
                let mut count = 0;
                let mut raised = false;
                loop {
                    if let Some(r) = raise_at {
                        if !raised && s.peek_time() > r {
                            s.raise(2.0 * rate, r);
                            raised = true;
                        }
                    }
                    let (t, z) = s.next_point();
                    if t >= horizon {
                        break;
                    }
                    if z <= rate.min(s.dominating_rate()) {
                        count += 1;
                    }
                }
                count
            })
            .collect()
    }

    #[test]
    fn thinning_is_poisson() {
        let counts = thinned_counts(2.0, 0.7, 3.0, None, 4000);
        assert!(stats::poisson_chi_square_pvalue(&counts, 2.1) > 0.01);
    }

    #[test]
    fn thinning_is_poisson_across_raise() {
        // rate 1.5 only dominated after the raise: points before t = 1 use
        // min(rate, 1.0), points after use 1.5
        let counts = thinned_counts(1.0, 1.5, 3.0, Some(1.0), 4000);
        assert!(stats::poisson_chi_square_pvalue(&counts, 1.0 + 1.5 * 2.0) > 0.01);
    }

    fn params(n: usize, h: f64, horizon: f64, initial: InitialCondition, seed: u64) -> ModelParams {
        ModelParams { n, h, rate: RateFunction::tanh_plus_one(), horizon, seed, initial }
    }

    #[test]
    fn self_coupling_is_exact() {
        let drift = DriftCurve::new(vec![0.0, 1.0, 2.0], vec![1.5, 0.8, 1.2], vec![0.5, 1.2, 0.8]).unwrap();
        let p = params(60, 1.5, 2.0, InitialCondition::IidUniform { l: 1.0 }, 3);
        let r = self_coupled_run(&p, &drift, 0).unwrap();
        assert!(r.sup_errors.iter().all(|&e| e == 0.0));
        assert_eq!(r.events[0], r.events[1]);
        assert!(r.events[0] > 0);
    }

    #[test]
    fn coupled_run_replays() {
        let drift = DriftCurve::constant(2.0, 8, 1.0, 1.0).unwrap();
        let p = params(40, 0.5, 2.0, InitialCondition::IidTwoPoint { l: 1.0 }, 8);
        assert_eq!(coupled_run(&p, &drift, 2).unwrap(), coupled_run(&p, &drift, 2).unwrap());
    }

    #[test]
    fn zero_horizon_error_is_zero() {
        let drift = DriftCurve::constant(1.0, 4, 1.0, 1.0).unwrap();
        let p = params(20, 0.5, 1e-9, InitialCondition::IidUniform { l: 1.0 }, 1);
        let r = coupled_run(&p, &drift, 0).unwrap();
        assert!(r.sup_errors.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn short_curve_rejected() {
        let drift = DriftCurve::constant(1.0, 4, 1.0, 1.0).unwrap();
        let p = params(20, 0.5, 2.0, InitialCondition::Constant(0.0), 1);
        assert!(matches!(coupled_run(&p, &drift, 0), Err(CouplingError::ShortCurve { .. })));
    }

    #[test]
    fn finite_marginal_has_simulator_law() {
        let drift = DriftCurve::constant(1.0, 4, 1.0, 1.0).unwrap();
        let p = params(30, 0.5, 1.0, InitialCondition::Constant(1.0), 21);
        let coupled: Vec<f64> = (0..200).map(|r| coupled_run(&p, &drift, r).unwrap().events[0] as f64).collect();
        let direct: Vec<f64> = (0..200).map(|r| total_jumps_at_horizon(&p, 1000 + r).unwrap() as f64).collect();
        let d = stats::ks_two_sample(&coupled, &direct);
        assert!(stats::ks_two_sample_pvalue(d, 200, 200) > 0.01, "KS {d}");
    }

    #[test]
    fn dominating_rate_for_unbounded_family() {
        let rf = RateFunction::exponential();
        let lam = initial_dominating_rate(&rf, 0.2, 0.5, 1.0, 100).unwrap();
        let gamma = limit_sde::apriori_gamma(0.5, 1.0, 0.2, &rf).unwrap();
        assert!(lam >= 2.0 * rf.m_less(gamma).unwrap());
        assert_eq!(initial_dominating_rate(&RateFunction::tanh_plus_one(), 2.0, 1.0, 5.0, 10).unwrap(), 2.0);
    }

    #[test]
    fn exponential_family_couples_without_breach() {
        let rf = RateFunction::exponential();
        let (h, horizon) = (0.2, 1.0);
        let cfg = PicardConfig { samples: 2000, intervals: Some(20), ..Default::default() };
        let init = InitialCondition::IidUniform { l: 0.5 };
        let sol = limit_sde::picard_solve(&rf, h, &init, horizon, &cfg, 2).unwrap();
        let p = ModelParams { n: 30, h, rate: rf, horizon, seed: 4, initial: init };
        let r = coupled_run(&p, &sol.curve, 0).unwrap();
        assert!(r.mean_sup_error.is_finite());
    }

    #[test]
    fn fit_rate_synthetic() {
        let rows = |f: &dyn Fn(f64) -> f64| -> Vec<ErrorRow> {
            [25, 50, 100, 200]
                .iter()
                .map(|&n| ErrorRow { n, mean_sup_error: f(n as f64), std_error: 0.0, replicas: 1 })
                .collect()
        };
        let fit = fit_rate(&rows(&|n| n.powf(-0.5))).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let fit = fit_rate(&rows(&|_| 0.3)).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!(matches!(fit_rate(&rows(&|n| n.powf(-0.5))[..1]), Err(CouplingError::Degenerate)));
        assert!(matches!(fit_rate(&rows(&|_| 0.0)), Err(CouplingError::Degenerate)));
    }
}
