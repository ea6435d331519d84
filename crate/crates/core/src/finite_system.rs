//! Exact event-driven simulation of the N-actor social pressure process.
//!
//! Between events every pressure is constant, so every rate is constant and
//! the process is simulated exactly: an exponential clock on the total rate
//! followed by a categorical draw of `(actor, opinion)`. When actor `a`
//! expresses opinion `o`, its own pressure resets to 0 and every other
//! pressure moves by `o * h / N`.
//!
//! Pressures are stored as `stored[b] + offset`; an event adds `o * h / N`
//! to the shared offset and rewrites only the acting actor, so an event
//! costs O(1) plus the cost of the categorical draw: O(1) when the total
//! intensity `Phi` is constant (odd-plus-constant rates) and O(N) otherwise.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::io;
use crate::quadrature::{self, QuadratureError};
use crate::rates::{RateError, RateFunction, Reach};
use crate::rng::{self, domain, StreamRng};
use crate::stats::{self, Moments};

/// Relative slack allowed when checking pathwise bounds in floating point.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("event times not strictly increasing at t = {t}")]
    EventTie { t: f64 },
    #[error("pathwise bound violated for actor {actor} at t = {t}: |u| = {value} > {bound}")]
    PathwiseBound { actor: usize, t: f64, value: f64, bound: f64 },
}

/// Opinion expressed at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opinion {
    Favorable,
    Contrary,
}

impl Opinion {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Opinion::Favorable => 1.0,
            Opinion::Contrary => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Opinion::Favorable => 1,
            Opinion::Contrary => -1,
        }
    }

    pub const BOTH: [Opinion; 2] = [Opinion::Favorable, Opinion::Contrary];

    pub fn index(self) -> usize {
        match self {
            Opinion::Favorable => 0,
            Opinion::Contrary => 1,
        }
    }
}

/// Law of the initial pressures.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Constant(f64),
    /// i.i.d. uniform on `[-l, l]`
    IidUniform { l: f64 },
    /// i.i.d. `+l` or `-l` with probability one half each
    IidTwoPoint { l: f64 },
    /// Explicit list; as a law for a single actor, the empirical measure.
    Custom(Vec<f64>),
}

impl InitialCondition {
    /// Almost-sure bound `L` on `|U_0|`.
    pub fn support_bound(&self) -> f64 {
        match self {
            InitialCondition::Constant(c) => c.abs(),
            InitialCondition::IidUniform { l } | InitialCondition::IidTwoPoint { l } => *l,
            InitialCondition::Custom(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    /// `E|U_0|`.
    pub fn mean_abs(&self) -> f64 {
        match self {
            InitialCondition::Constant(c) => c.abs(),
            InitialCondition::IidUniform { l } => l / 2.0,
            InitialCondition::IidTwoPoint { l } => *l,
            InitialCondition::Custom(v) => v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64,
        }
    }

    /// Whether the law is invariant under `u -> -u`.
    pub fn is_symmetric(&self) -> bool {
        match self {
            InitialCondition::Constant(c) => *c == 0.0,
            InitialCondition::IidUniform { .. } | InitialCondition::IidTwoPoint { .. } => true,
            InitialCondition::Custom(v) => {
                let mut a: Vec<f64> = v.clone();
                let mut b: Vec<f64> = v.iter().map(|x| -x).collect();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                a == b
            }
        }
    }

    pub fn validate(&self, n: Option<usize>) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidParams(m));
        match self {
            InitialCondition::Constant(c) if !c.is_finite() => bad(format!("constant initial pressure {c}")),
            InitialCondition::IidUniform { l } | InitialCondition::IidTwoPoint { l } if !(*l >= 0.0 && l.is_finite()) => {
                bad(format!("initial support bound {l}"))
            }
            InitialCondition::Custom(v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return bad("custom initial list must be non-empty and finite".into());
                }
                match n {
                    Some(n) if v.len() != n => bad(format!("custom initial list has {} entries, expected N = {n}", v.len())),
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// Draw one pressure from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InitialCondition::Constant(c) => *c,
            InitialCondition::IidUniform { l } => {
                if *l == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-*l..=*l)
                }
            }
            InitialCondition::IidTwoPoint { l } => {
                if rng.gen::<bool>() {
                    *l
                } else {
                    -*l
                }
            }
            InitialCondition::Custom(v) => v[rng.gen_range(0..v.len())],
        }
    }

    /// Initial list for `n` actors.
    pub fn realize<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>, SimError> {
        self.validate(Some(n))?;
        Ok(match self {
            InitialCondition::Custom(v) => v.clone(),
            law => (0..n).map(|_| law.sample(rng)).collect(),
        })
    }
}

/// Parameters of one finite-system run.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub n: usize,
    pub h: f64,
    pub rate: RateFunction,
    pub horizon: f64,
    pub seed: u64,
    pub initial: InitialCondition,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 {
            return Err(SimError::InvalidParams(format!("N = {} must be at least 2", self.n)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(SimError::InvalidParams(format!("h = {} must be positive", self.h)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(SimError::InvalidParams(format!("T = {} must be non-negative", self.horizon)));
        }
        self.initial.validate(Some(self.n))
    }

    /// Initial pressures of replica `replica`; shared with the coupled
    /// construction so both see the same initial list.
    pub fn initial_pressures(&self, replica: u64) -> Result<Vec<f64>, SimError> {
        let mut r = rng::stream(self.seed, &[domain::INITIAL, replica]);
        self.initial.realize(self.n, &mut r)
    }
}

/// Materialized state of the finite system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub pressures: Vec<f64>,
    pub jump_counts: Vec<u64>,
    pub total_jumps: u64,
}

impl SystemState {
    pub fn new(pressures: Vec<f64>) -> Self {
        let n = pressures.len();
        Self { t: 0.0, pressures, jump_counts: vec![0; n], total_jumps: 0 }
    }

    pub fn n(&self) -> usize {
        self.pressures.len()
    }

    /// Actor `actor` expresses `opinion`: reset it, shift everyone else.
    pub fn apply_opinion(&mut self, actor: usize, opinion: Opinion, h: f64) {
        let shift = opinion.sign() * h / self.n() as f64;
        for (b, u) in self.pressures.iter_mut().enumerate() {
            if b == actor {
                *u = 0.0;
            } else {
                *u += shift;
            }
        }
        self.jump_counts[actor] += 1;
        self.total_jumps += 1;
    }

    /// `sum_b Phi(u_b)`.
    pub fn total_rate(&self, rf: &RateFunction) -> Result<f64, RateError> {
        self.pressures.iter().try_fold(0.0, |acc, &u| Ok(acc + rf.big_phi(u)?))
    }

    pub fn mean_pressure(&self) -> f64 {
        self.pressures.iter().sum::<f64>() / self.n() as f64
    }

    /// `|u_a| <= |u_0(a)| + h Z / N` for every actor.
    pub fn check_pathwise_bound(&self, initial: &[f64], h: f64) -> Result<(), SimError> {
        let extra = h * self.total_jumps as f64 / self.n() as f64;
        for (a, (&u, &u0)) in self.pressures.iter().zip(initial).enumerate() {
            let bound = u0.abs() + extra;
            if u.abs() > bound * (1.0 + BOUND_SLACK) + BOUND_SLACK {
                return Err(SimError::PathwiseBound { actor: a, t: self.t, value: u.abs(), bound });
            }
        }
        Ok(())
    }
}

/// One event of the finite system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub actor: usize,
    pub opinion: Opinion,
}

/// Running finite system.
pub struct FiniteSystem<'a> {
    rate: &'a RateFunction,
    h: f64,
    n: usize,
    t: f64,
    stored: Vec<f64>,
    offset: f64,
    initial: Vec<f64>,
    jump_counts: Vec<u64>,
    total_jumps: u64,
    rng: StreamRng,
    constant_intensity: Option<f64>,
    cumulative: Vec<f64>,
    pending: Option<EventRecord>,
    events: Option<Vec<EventRecord>>,
    halted_at: Option<f64>,
}

impl<'a> FiniteSystem<'a> {
    pub fn new(rate: &'a RateFunction, h: f64, initial: Vec<f64>, rng: StreamRng) -> Self {
        let n = initial.len();
        // Odd-plus-constant rates have Phi = 2B everywhere.
        let constant_intensity = rate.affine_parts().map(|v| 2.0 * v.offset());
        Self {
            rate,
            h,
            n,
            t: 0.0,
            stored: initial.clone(),
            offset: 0.0,
            initial,
            jump_counts: vec![0; n],
            total_jumps: 0,
            rng,
            constant_intensity,
            cumulative: Vec::new(),
            pending: None,
            events: None,
            halted_at: None,
        }
    }

    /// Replica `replica` of `params`, initial list included.
    pub fn from_params(params: &'a ModelParams, replica: u64) -> Result<Self, SimError> {
        params.validate()?;
        let initial = params.initial_pressures(replica)?;
        let rng = rng::stream(params.seed, &[domain::FINITE, replica]);
        Ok(Self::new(&params.rate, params.h, initial, rng))
    }

    pub fn record_events(mut self, on: bool) -> Self {
        self.events = if on { Some(Vec::new()) } else { None };
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn pressure(&self, actor: usize) -> f64 {
        self.stored[actor] + self.offset
    }

    pub fn pressures(&self) -> impl Iterator<Item = f64> + '_ {
        self.stored.iter().map(move |s| s + self.offset)
    }

    pub fn total_jumps(&self) -> u64 {
        self.total_jumps
    }

    pub fn jump_counts(&self) -> &[u64] {
        &self.jump_counts
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn halted_at(&self) -> Option<f64> {
        self.halted_at
    }

    pub fn events(&self) -> Option<&[EventRecord]> {
        self.events.as_deref()
    }

    pub fn take_events(&mut self) -> Vec<EventRecord> {
        self.events.take().unwrap_or_default()
    }

    pub fn state(&self) -> SystemState {
        SystemState {
            t: self.t,
            pressures: self.pressures().collect(),
            jump_counts: self.jump_counts.clone(),
            total_jumps: self.total_jumps,
        }
    }

    /// Check `|u_a| <= |u_0(a)| + h Z / N` for all actors.
    pub fn check_pathwise_bound(&self) -> Result<(), SimError> {
        let extra = self.h * self.total_jumps as f64 / self.n as f64;
        for a in 0..self.n {
            let u = self.pressure(a).abs();
            let bound = self.initial[a].abs() + extra;
            if u > bound * (1.0 + BOUND_SLACK) + BOUND_SLACK {
                return Err(SimError::PathwiseBound { actor: a, t: self.t, value: u, bound });
            }
        }
        Ok(())
    }

    /// Sum of `Phi` over actors at the current state.
    pub fn total_rate(&self) -> Result<f64, RateError> {
        match self.constant_intensity {
            Some(c) => Ok(c * self.n as f64),
            None => self.pressures().try_fold(0.0, |acc, u| Ok(acc + self.rate.big_phi(u)?)),
        }
    }

    /// Draw the next event after the current time without applying it.
    fn propose(&mut self) -> Result<Option<EventRecord>, SimError> {
        match self.constant_intensity {
            Some(c) => {
                let total = c * self.n as f64;
                let wait: f64 = Exp1.sample(&mut self.rng);
                let actor = self.rng.gen_range(0..self.n);
                let up = self.rate.phi(self.pressure(actor))?;
                let opinion = if self.rng.gen::<f64>() * c < up { Opinion::Favorable } else { Opinion::Contrary };
                Ok(Some(EventRecord { time: self.t + wait / total, actor, opinion }))
            }
            None => {
                self.cumulative.clear();
                let mut acc = 0.0;
                for b in 0..self.n {
                    let u = self.stored[b] + self.offset;
                    acc += self.rate.phi(u)?;
                    self.cumulative.push(acc);
                    acc += self.rate.phi(-u)?;
                    self.cumulative.push(acc);
                }
                if acc <= 0.0 {
                    return Ok(None);
                }
                let wait: f64 = Exp1.sample(&mut self.rng);
                let target = self.rng.gen::<f64>() * acc;
                let idx = self.cumulative.partition_point(|&c| c <= target).min(2 * self.n - 1);
                let opinion = if idx % 2 == 0 { Opinion::Favorable } else { Opinion::Contrary };
                Ok(Some(EventRecord { time: self.t + wait / acc, actor: idx / 2, opinion }))
            }
        }
    }

    fn apply(&mut self, ev: EventRecord) -> Result<(), SimError> {
        if ev.time <= self.t {
            return Err(SimError::EventTie { t: ev.time });
        }
        self.t = ev.time;
        self.offset += ev.opinion.sign() * self.h / self.n as f64;
        self.stored[ev.actor] = -self.offset;
        self.jump_counts[ev.actor] += 1;
        self.total_jumps += 1;
        if let Some(log) = self.events.as_mut() {
            log.push(ev);
        }
        Ok(())
    }

    /// Process every event strictly before `t`; afterwards the state is the
    /// left limit at `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<(), SimError> {
        if self.halted_at.is_some() {
            self.t = self.t.max(t);
            return Ok(());
        }
        loop {
            let ev = match self.pending.take() {
                Some(ev) => ev,
                None => match self.propose()? {
                    Some(ev) => ev,
                    None => {
                        self.halted_at = Some(self.t);
                        self.t = self.t.max(t);
                        return Ok(());
                    }
                },
            };
            if ev.time >= t {
                self.pending = Some(ev);
                self.t = self.t.max(t);
                return Ok(());
            }
            self.apply(ev)?;
        }
    }

    /// Apply exactly one event (no horizon); `None` when absorbed.
    pub fn step(&mut self) -> Result<Option<EventRecord>, SimError> {
        let ev = match self.pending.take() {
            Some(ev) => Some(ev),
            None => self.propose()?,
        };
        match ev {
            Some(ev) => {
                self.apply(ev)?;
                Ok(Some(ev))
            }
            None => {
                self.halted_at = Some(self.t);
                Ok(None)
            }
        }
    }
}

/// Uniform grid `0, T/k, ..., T` with `k` intervals.
pub fn uniform_grid(horizon: f64, intervals: usize) -> Vec<f64> {
    let k = intervals.max(1);
    (0..=k).map(|i| if i == k { horizon } else { horizon * i as f64 / k as f64 }).collect()
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub mean_pressure: Vec<f64>,
    pub total_jumps: Vec<u64>,
    pub pressures: Option<Vec<Vec<f64>>>,
    pub events: Vec<EventRecord>,
    pub halted_at: Option<f64>,
    pub final_state: SystemState,
    pub initial: Vec<f64>,
}

impl Trajectory {
    /// CSV `t,mean_pressure,total_jumps[,u_0..u_{N-1}]`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, header_comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        write!(w, "t,mean_pressure,total_jumps")?;
        if let Some(p) = &self.pressures {
            for i in 0..p.first().map_or(0, Vec::len) {
                write!(w, ",u_{i}")?;
            }
        }
        writeln!(w)?;
        for k in 0..self.grid.len() {
            write!(w, "{},{},{}", io::fmt17(self.grid[k]), io::fmt17(self.mean_pressure[k]), self.total_jumps[k])?;
            if let Some(p) = &self.pressures {
                for u in &p[k] {
                    write!(w, ",{}", io::fmt17(*u))?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// CSV `time,actor,opinion` with opinions as `1` / `-1`.
    pub fn write_events_csv<W: std::io::Write>(&self, mut w: W, header_comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "time,actor,opinion")?;
        for e in &self.events {
            writeln!(w, "{},{},{}", io::fmt17(e.time), e.actor, e.opinion.as_i8())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimulateOptions {
    pub grid_intervals: usize,
    pub keep_pressures: bool,
    pub keep_events: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self { grid_intervals: 300, keep_pressures: false, keep_events: true }
    }
}

/// Simulate replica `replica` of `params` on `[0, T]`, sampling left limits on
/// a uniform grid. The pathwise bound is checked at every grid time.
pub fn simulate_replica(params: &ModelParams, replica: u64, opts: SimulateOptions) -> Result<Trajectory, SimError> {
    let mut sys = FiniteSystem::from_params(params, replica)?.record_events(opts.keep_events);
    let grid = uniform_grid(params.horizon, opts.grid_intervals);
    let mut mean_pressure = Vec::with_capacity(grid.len());
    let mut total_jumps = Vec::with_capacity(grid.len());
    let mut pressures = opts.keep_pressures.then(Vec::new);
    for &g in &grid {
        sys.advance_to(g)?;
        sys.check_pathwise_bound()?;
        mean_pressure.push(sys.pressures().sum::<f64>() / sys.n() as f64);
        total_jumps.push(sys.total_jumps());
        if let Some(p) = pressures.as_mut() {
            p.push(sys.pressures().collect());
        }
    }
    let final_state = sys.state();
    let halted_at = sys.halted_at();
    let initial = sys.initial().to_vec();
    Ok(Trajectory {
        grid,
        mean_pressure,
        total_jumps,
        pressures,
        events: sys.take_events(),
        halted_at,
        final_state,
        initial,
    })
}

/// Replica 0 of `params`.
pub fn simulate(params: &ModelParams, opts: SimulateOptions) -> Result<Trajectory, SimError> {
    simulate_replica(params, 0, opts)
}

/// Total jump count `Z_T` of replica `replica` (no event log kept).
pub fn total_jumps_at_horizon(params: &ModelParams, replica: u64) -> Result<u64, SimError> {
    let mut sys = FiniteSystem::from_params(params, replica)?;
    sys.advance_to(params.horizon)?;
    sys.check_pathwise_bound()?;
    Ok(sys.total_jumps())
}

/// Actor averages of `phi(U_t(a))` and `phi(-U_t(a))` at the grid times
/// (left limits), for comparison with the limit drift curve.
pub fn empirical_rates(params: &ModelParams, replica: u64, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let mut sys = FiniteSystem::from_params(params, replica)?;
    let n = sys.n() as f64;
    let mut plus = Vec::with_capacity(grid.len());
    let mut minus = Vec::with_capacity(grid.len());
    for &t in grid {
        sys.advance_to(t)?;
        sys.check_pathwise_bound()?;
        let (mut p, mut m) = (0.0, 0.0);
        for u in sys.pressures() {
            p += params.rate.phi(u)?;
            m += params.rate.phi(-u)?;
        }
        plus.push(p / n);
        minus.push(m / n);
    }
    Ok((plus, minus))
}

/// One decile of the jump-count dominance comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DecileRow {
    pub level: f64,
    pub threshold: f64,
    pub empirical_sf: f64,
    pub bound_sf: f64,
    /// `bound_sf - empirical_sf`; negative means the bound is undercut.
    pub margin: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub replicas: usize,
    pub deciles: Vec<DecileRow>,
    pub mean_jumps_per_actor: f64,
    pub mean_jumps_std_error: f64,
    pub mean_bound: f64,
    pub degenerate: bool,
    pub deciles_pass: bool,
    pub mean_pass: bool,
}

impl DominanceReport {
    pub fn passed(&self) -> bool {
        self.deciles_pass && self.mean_pass
    }
}

/// Compare the law of `Z_T` against `N + 2 Poisson(T N M<(2h))` at the
/// empirical deciles, and the per-actor mean against `1 + 2 T M<(2h)`.
pub fn check_jump_dominance(params: &ModelParams, replicas: usize) -> Result<DominanceReport, SimError> {
    if replicas < 100 {
        return Err(SimError::InvalidParams(format!("dominance check needs at least 100 replicas, got {replicas}")));
    }
    params.validate()?;
    let n = params.n as f64;
    let t = params.horizon;
    let m2h = params.rate.m_less(2.0 * params.h)?;
    let mean_bound = 1.0 + 2.0 * t * m2h;
    if t == 0.0 {
        return Ok(DominanceReport {
            replicas,
            deciles: Vec::new(),
            mean_jumps_per_actor: 0.0,
            mean_jumps_std_error: 0.0,
            mean_bound,
            degenerate: true,
            deciles_pass: true,
            mean_pass: true,
        });
    }
    let counts: Vec<u64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| total_jumps_at_horizon(params, r))
        .collect::<Result<_, _>>()?;
    let poisson_mean = t * n * m2h;
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let rf = replicas as f64;
    let mut deciles = Vec::with_capacity(9);
    let mut deciles_pass = true;
    for k in 1..=9 {
        let level = k as f64 / 10.0;
        let idx = ((level * rf).ceil() as usize).clamp(1, replicas) - 1;
        let threshold = sorted[idx] as f64;
        let empirical_sf = counts.iter().filter(|&&z| z as f64 > threshold).count() as f64 / rf;
        // P(N + 2P > q) = P(P > (q - N) / 2)
        let bound_sf = stats::poisson_sf(poisson_mean, (threshold - n) / 2.0);
        let std_error = (bound_sf * (1.0 - bound_sf) / rf).sqrt();
        let margin = bound_sf - empirical_sf;
        if -margin > 3.0 * std_error {
            deciles_pass = false;
        }
        deciles.push(DecileRow { level, threshold, empirical_sf, bound_sf, margin, std_error });
    }
    let per_actor: Moments = counts.iter().map(|&z| z as f64 / n).collect();
    let mean_pass = per_actor.mean() <= mean_bound + 3.0 * per_actor.std_error();
    Ok(DominanceReport {
        replicas,
        deciles,
        mean_jumps_per_actor: per_actor.mean(),
        mean_jumps_std_error: per_actor.std_error(),
        mean_bound,
        degenerate: false,
        deciles_pass,
        mean_pass,
    })
}

/// Value of the initial-condition-free bound on `E|U_t(a)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreeBound {
    Finite(f64),
    /// `M>` is bounded (or the window is empty): no finite bound.
    Unbounded,
}

/// `E[(M>)^{-1}(E)] + h + h (t - s) M<(2h)` where `E` is exponential with
/// rate `t - s` (the first mark height of a unit-intensity Poisson measure
/// over a window of length `t - s`).
pub fn initial_free_bound(rf: &RateFunction, t: f64, s: f64, h: f64) -> Result<FreeBound, SimError> {
    if !(0.0 <= s && s <= t && t.is_finite()) {
        return Err(SimError::InvalidParams(format!("need 0 <= s <= t, got s = {s}, t = {t}")));
    }
    if !rf.m_greater_unbounded() {
        return Ok(FreeBound::Unbounded);
    }
    let window = t - s;
    if window <= 0.0 {
        return Ok(FreeBound::Unbounded);
    }
    let floor = rf.m_greater(0.0)?;
    let failure = std::cell::RefCell::new(None);
    let integrand = |y: f64| match rf.m_greater_inverse(y) {
        Ok(Reach::At(r)) => r * window * (-window * y).exp(),
        Ok(Reach::Unreachable) => f64::INFINITY,
        Err(e) => {
            *failure.borrow_mut() = Some(e);
            f64::NAN
        }
    };
    let expected = quadrature::integrate_to_infinity(integrand, floor, 1.0 / window, 1e-10);
    if let Some(e) = failure.into_inner() {
        return Err(e.into());
    }
    let expected = match expected {
        Ok(v) => v.value,
        Err(QuadratureError::Divergent { .. }) => return Ok(FreeBound::Unbounded),
        Err(e) => return Err(e.into()),
    };
    Ok(FreeBound::Finite(expected + h + h * window * rf.m_less(2.0 * h)?))
}

/// Infimum of [`initial_free_bound`] over `s` on a 200-point grid of `(0, t)`.
pub fn initial_free_bound_inf(rf: &RateFunction, t: f64, h: f64) -> Result<FreeBound, SimError> {
    let mut best = FreeBound::Unbounded;
    for i in 0..200 {
        let s = t * i as f64 / 200.0;
        if let FreeBound::Finite(v) = initial_free_bound(rf, t, s, h)? {
            best = match best {
                FreeBound::Finite(b) if b <= v => best,
                _ => FreeBound::Finite(v),
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tanh_params(n: usize, h: f64, horizon: f64, initial: InitialCondition) -> ModelParams {
        ModelParams { n, h, rate: RateFunction::tanh_plus_one(), horizon, seed: 11, initial }
    }

    #[test]
    fn apply_opinion_two_actors() {
        let mut s = SystemState::new(vec![0.4, -0.2]);
        s.apply_opinion(0, Opinion::Favorable, 1.0);
        assert_eq!(s.pressures[0], 0.0);
        assert!((s.pressures[1] - 0.3).abs() < 1e-15);
        assert_eq!(s.total_jumps, 1);
        assert_eq!(s.jump_counts, vec![1, 0]);
    }

    #[test]
    fn apply_opinion_three_actors_contrary() {
        let mut s = SystemState::new(vec![0.0; 3]);
        s.apply_opinion(1, Opinion::Contrary, 0.9);
        assert!((s.pressures[0] + 0.3).abs() < 1e-15);
        assert_eq!(s.pressures[1], 0.0);
        assert!((s.pressures[2] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn total_rate_examples() {
        let t = RateFunction::tanh_plus_one();
        let e = RateFunction::exponential();
        let s = SystemState::new((0..1000).map(|i| (i as f64 - 500.0) / 100.0).collect());
        assert!((s.total_rate(&t).unwrap() - 2000.0).abs() < 1e-9);
        assert_eq!(SystemState::new(vec![0.0, 0.0]).total_rate(&e).unwrap(), 4.0);
        let v = SystemState::new(vec![1.0, -1.0]).total_rate(&e).unwrap();
        assert!((v - 4.0 * 1f64.cosh()).abs() < 1e-14);
    }

    #[test]
    fn reset_is_exact_and_bound_holds() {
        for rate in [RateFunction::tanh_plus_one(), RateFunction::exponential()] {
            let params = ModelParams { n: 20, h: 1.3, rate, horizon: 1.0, seed: 3, initial: InitialCondition::IidUniform { l: 1.0 } };
            let mut sys = FiniteSystem::from_params(&params, 0).unwrap();
            for _ in 0..2000 {
                let ev = sys.step().unwrap().unwrap();
                assert_eq!(sys.pressure(ev.actor), 0.0);
                sys.check_pathwise_bound().unwrap();
            }
        }
    }

    #[test]
    fn constant_rate_waiting_times() {
        // N = 2, Phi = 2: total rate 4
        let params = tanh_params(2, 1.0, 0.0, InitialCondition::Constant(0.0));
        let mut sys = FiniteSystem::from_params(&params, 0).unwrap();
        let mut prev = 0.0;
        let mut m = Moments::new();
        for _ in 0..100_000 {
            let ev = sys.step().unwrap().unwrap();
            m.push(ev.time - prev);
            prev = ev.time;
        }
        assert!((m.mean() - 0.25).abs() < 3.0 * 0.25 / (100_000f64).sqrt(), "{}", m.mean());
    }

    #[test]
    fn symmetric_first_event_selection() {
        for rate in [RateFunction::tanh_plus_one(), RateFunction::exponential()] {
            let params = ModelParams { n: 2, h: 1.0, rate, horizon: 1.0, seed: 5, initial: InitialCondition::Constant(0.0) };
            let reps = 40_000u64;
            let mut freq = [0u64; 4];
            for r in 0..reps {
                let mut sys = FiniteSystem::from_params(&params, r).unwrap();
                let ev = sys.step().unwrap().unwrap();
                freq[ev.actor * 2 + ev.opinion.index()] += 1;
            }
            let p = 0.25;
            let sigma = (p * (1.0 - p) / reps as f64).sqrt();
            for f in freq {
                assert!((f as f64 / reps as f64 - p).abs() < 3.0 * sigma, "{freq:?}");
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let params = tanh_params(50, 2.0, 2.0, InitialCondition::IidUniform { l: 1.0 });
        let a = simulate(&params, SimulateOptions::default()).unwrap();
        let b = simulate(&params, SimulateOptions::default()).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.mean_pressure, b.mean_pressure);
        let other = ModelParams { seed: 12, ..params };
        assert_ne!(simulate(&other, SimulateOptions::default()).unwrap().events, a.events);
    }

    #[test]
    fn event_times_strictly_increase() {
        let params = ModelParams {
            n: 30,
            h: 0.7,
            rate: RateFunction::exponential(),
            horizon: 3.0,
            seed: 9,
            initial: InitialCondition::IidTwoPoint { l: 0.5 },
        };
        let tr = simulate(&params, SimulateOptions::default()).unwrap();
        assert!(tr.events.windows(2).all(|w| w[0].time < w[1].time));
        assert!(tr.events.iter().all(|e| e.time < 3.0));
        assert_eq!(*tr.total_jumps.last().unwrap() as usize, tr.events.len());
    }

    #[test]
    fn grid_values_are_left_limits() {
        let params = tanh_params(10, 1.0, 2.0, InitialCondition::Constant(1.0));
        let tr = simulate(&params, SimulateOptions { grid_intervals: 20, keep_pressures: true, keep_events: true }).unwrap();
        // Z at grid time g counts only events strictly before g.
        for (g, z) in tr.grid.iter().zip(&tr.total_jumps) {
            let before = tr.events.iter().filter(|e| e.time < *g).count() as u64;
            assert_eq!(before, *z);
        }
        assert_eq!(tr.mean_pressure[0], 1.0);
    }

    #[test]
    fn zero_horizon_dominance_is_degenerate() {
        let params = tanh_params(50, 1.0, 0.0, InitialCondition::IidUniform { l: 1.0 });
        let rep = check_jump_dominance(&params, 100).unwrap();
        assert!(rep.degenerate && rep.passed());
        assert!(check_jump_dominance(&params, 10).is_err());
    }

    #[test]
    fn custom_initial_length_checked() {
        let params = tanh_params(3, 1.0, 1.0, InitialCondition::Custom(vec![0.1, 0.2]));
        assert!(matches!(params.validate(), Err(SimError::InvalidParams(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(tanh_params(1, 1.0, 1.0, InitialCondition::Constant(0.0)).validate().is_err());
        assert!(tanh_params(5, 0.0, 1.0, InitialCondition::Constant(0.0)).validate().is_err());
        assert!(tanh_params(5, 1.0, -1.0, InitialCondition::Constant(0.0)).validate().is_err());
    }

    #[test]
    fn free_bound_cases() {
        let t = RateFunction::tanh_plus_one();
        assert_eq!(initial_free_bound(&t, 3.0, 1.0, 0.5).unwrap(), FreeBound::Unbounded);
        let e = RateFunction::exponential();
        assert_eq!(initial_free_bound(&e, 3.0, 3.0, 0.5).unwrap(), FreeBound::Unbounded);
        let b = match initial_free_bound(&e, 3.0, 1.0, 0.5).unwrap() {
            FreeBound::Finite(v) => v,
            FreeBound::Unbounded => panic!(),
        };
        assert!(b.is_finite() && b > 0.5);
        // narrower window: larger expected inverse term
        let small = match initial_free_bound(&e, 3.0, 2.99, 0.5).unwrap() {
            FreeBound::Finite(v) => v,
            FreeBound::Unbounded => panic!(),
        };
        let wide = match initial_free_bound(&e, 30.0, 0.0, 0.5).unwrap() {
            FreeBound::Finite(v) => v,
            FreeBound::Unbounded => panic!(),
        };
        assert!(small > 3.0);
        assert!(wide > b);
    }
}
