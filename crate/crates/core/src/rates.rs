//! Jump-rate families and the rate bounds derived from them.
//!
//! An actor at social pressure `u` expresses opinion `o = ±1` at rate
//! `phi(o * u)`. Everything downstream consumes the rate through this
//! module: the total intensity `Phi(r) = phi(r) + phi(-r)`, its running
//! supremum `M<(l)` over `[0, l]`, its tail infimum `M>(l)` over `(l, inf)`,
//! the generalized inverse of `M>`, and local Lipschitz constants.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::quadrature;

/// Largest argument accepted by the exponential family.
pub const EXP_OVERFLOW_GUARD: f64 = 700.0;

/// Half-width of the grid on which user-supplied odd parts are validated.
pub const VALIDATION_RADIUS: f64 = 20.0;

/// Successive grid estimates of `M<`/`M>` must agree to this tolerance.
pub const GRID_REFINEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("exponential rate overflow: |x| = {x} exceeds {EXP_OVERFLOW_GUARD}")]
    Overflow { x: f64 },
    #[error("non-finite rate argument {x}")]
    NonFinite { x: f64 },
    #[error("negative argument {value} for {what}")]
    Negative { what: &'static str, value: f64 },
    #[error("invalid odd part `{name}`: {reason}")]
    InvalidOddPart { name: String, reason: String },
    #[error("unknown rate family `{0}` (expected tanh-plus-one or exponential)")]
    UnknownFamily(String),
    #[error("grid estimate of {what} did not stabilise within {GRID_REFINEMENT_TOL:e}")]
    GridRefinement { what: &'static str },
    #[error(transparent)]
    Quadrature(#[from] quadrature::QuadratureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RateFamily {
    TanhPlusOne,
    Exponential,
    AffineOdd,
}

type RealFn = dyn Fn(f64) -> f64 + Send + Sync;

/// `phi(x) = f(x) + B` with `f` odd, increasing, bounded by `B` and with
/// slope decreasing on `[0, inf)`.
pub struct AffineOdd {
    name: String,
    f: Box<RealFn>,
    slope: Box<RealFn>,
    offset: f64,
}

impl AffineOdd {
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn odd(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn slope(&self, x: f64) -> f64 {
        (self.slope)(x)
    }
}

#[derive(Clone)]
enum Kind {
    TanhPlusOne,
    Exponential,
    AffineOdd(Arc<AffineOdd>),
}

/// Result of the generalized inverse of `M>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reach {
    At(f64),
    /// `M>` stays below the requested level everywhere.
    Unreachable,
}

/// A jump-rate function `phi: R -> [0, inf)`.
#[derive(Clone)]
pub struct RateFunction {
    kind: Kind,
}

impl fmt::Debug for RateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::AffineOdd(a) => write!(f, "AffineOdd({}, B={})", a.name, a.offset),
            _ => f.write_str(self.name()),
        }
    }
}

fn check_finite(x: f64) -> Result<(), RateError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(RateError::NonFinite { x })
    }
}

fn check_nonneg(what: &'static str, value: f64) -> Result<(), RateError> {
    check_finite(value)?;
    if value < 0.0 {
        Err(RateError::Negative { what, value })
    } else {
        Ok(())
    }
}

fn validation_grid() -> Vec<f64> {
    let mut xs = vec![0.0];
    let mut x = 1e-3;
    while x <= VALIDATION_RADIUS {
        xs.push(x);
        x *= 1.1;
    }
    xs.push(VALIDATION_RADIUS);
    xs
}

impl RateFunction {
    /// `phi(r) = 1 + tanh(r)`.
    pub fn tanh_plus_one() -> Self {
        Self { kind: Kind::TanhPlusOne }
    }

    /// `phi(r) = exp(r)`.
    pub fn exponential() -> Self {
        Self { kind: Kind::Exponential }
    }

    /// `phi(x) = f(x) + offset` for a user-supplied odd part `f` with
    /// derivative `slope`. The structural hypotheses (oddness, `f <= offset`,
    /// positive slope decreasing on `[0, inf)`) are spot-checked on a
    /// geometric grid over `[-VALIDATION_RADIUS, VALIDATION_RADIUS]`.
    pub fn affine_odd<F, D>(name: impl Into<String>, f: F, slope: D, offset: f64) -> Result<Self, RateError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        let invalid = |reason: String| RateError::InvalidOddPart { name: name.clone(), reason };
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(invalid(format!("offset B = {offset} must be positive")));
        }
        if f(0.0).abs() > 1e-12 {
            return Err(invalid(format!("f(0) = {} is not 0", f(0.0))));
        }
        let mut prev_slope = f64::INFINITY;
        for x in validation_grid() {
            let (fp, fm) = (f(x), f(-x));
            let (sp, sm) = (slope(x), slope(-x));
            if !(fp.is_finite() && fm.is_finite() && sp.is_finite() && sm.is_finite()) {
                return Err(invalid(format!("non-finite value at x = {x}")));
            }
            if (fp + fm).abs() > 1e-9 * fp.abs().max(1.0) {
                return Err(invalid(format!("f(-x) != -f(x) at x = {x}")));
            }
            if fp > offset * (1.0 + 1e-12) || fm > offset * (1.0 + 1e-12) {
                return Err(invalid(format!("f exceeds B at x = {x}")));
            }
            if sp <= 0.0 || sm <= 0.0 {
                return Err(invalid(format!("slope not positive at x = {x}")));
            }
            if sp > prev_slope * (1.0 + 1e-12) {
                return Err(invalid(format!("slope increases on [0, inf) at x = {x}")));
            }
            prev_slope = sp;
        }
        Ok(Self {
            kind: Kind::AffineOdd(Arc::new(AffineOdd { name, f: Box::new(f), slope: Box::new(slope), offset })),
        })
    }

    /// Look up a builtin family by name.
    pub fn from_name(name: &str) -> Result<Self, RateError> {
        match name {
            "tanh-plus-one" | "tanh" => Ok(Self::tanh_plus_one()),
            "exponential" | "exp" => Ok(Self::exponential()),
            other => Err(RateError::UnknownFamily(other.to_string())),
        }
    }

    pub fn family(&self) -> RateFamily {
        match self.kind {
            Kind::TanhPlusOne => RateFamily::TanhPlusOne,
            Kind::Exponential => RateFamily::Exponential,
            Kind::AffineOdd(_) => RateFamily::AffineOdd,
        }
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            Kind::TanhPlusOne => "tanh-plus-one",
            Kind::Exponential => "exponential",
            Kind::AffineOdd(a) => &a.name,
        }
    }

    /// `(f, B)` decomposition when the rate is odd-plus-constant.
    pub fn affine_parts(&self) -> Option<AffineView<'_>> {
        match &self.kind {
            Kind::TanhPlusOne => Some(AffineView::Tanh),
            Kind::Exponential => None,
            Kind::AffineOdd(a) => Some(AffineView::User(a)),
        }
    }

    /// Jump rate `phi(x)`.
    #[inline]
    pub fn phi(&self, x: f64) -> Result<f64, RateError> {
        match &self.kind {
            Kind::TanhPlusOne => {
                check_finite(x)?;
                Ok(1.0 + x.tanh())
            }
            Kind::Exponential => {
                check_finite(x)?;
                if x.abs() > EXP_OVERFLOW_GUARD {
                    return Err(RateError::Overflow { x });
                }
                Ok(x.exp())
            }
            Kind::AffineOdd(a) => {
                check_finite(x)?;
                Ok(((a.f)(x) + a.offset).max(0.0))
            }
        }
    }

    /// Total intensity `Phi(r) = phi(-r) + phi(r)`.
    #[inline]
    pub fn big_phi(&self, r: f64) -> Result<f64, RateError> {
        Ok(self.phi(-r)? + self.phi(r)?)
    }

    /// `phi(x) - phi(-x)`, without cancellation for the built-in families.
    pub fn phi_difference(&self, x: f64) -> Result<f64, RateError> {
        check_finite(x)?;
        match &self.kind {
            Kind::TanhPlusOne => Ok(2.0 * x.tanh()),
            Kind::Exponential => {
                if x.abs() > EXP_OVERFLOW_GUARD {
                    return Err(RateError::Overflow { x });
                }
                Ok(2.0 * x.sinh())
            }
            Kind::AffineOdd(a) => Ok(2.0 * a.odd(x)),
        }
    }

    /// `int_0^x Phi(s) ds` (signed for negative `x`).
    pub fn big_phi_integral(&self, x: f64) -> Result<f64, RateError> {
        check_finite(x)?;
        match &self.kind {
            Kind::TanhPlusOne => Ok(2.0 * x),
            Kind::Exponential => {
                if x.abs() > EXP_OVERFLOW_GUARD {
                    return Err(RateError::Overflow { x });
                }
                Ok(2.0 * x.sinh())
            }
            // Phi is the constant 2B
            Kind::AffineOdd(a) => Ok(2.0 * a.offset() * x),
        }
    }

    /// Largest value of `phi` on `[-r, r]`.
    pub fn sup_phi(&self, r: f64) -> Result<f64, RateError> {
        check_nonneg("sup_phi radius", r)?;
        match &self.kind {
            Kind::TanhPlusOne => Ok(1.0 + r.tanh()),
            Kind::Exponential => self.phi(r),
            Kind::AffineOdd(_) => {
                let n = 256;
                let mut best = 0.0f64;
                for i in 0..=n {
                    let x = r * i as f64 / n as f64;
                    best = best.max(self.phi(x)?).max(self.phi(-x)?);
                }
                Ok(best)
            }
        }
    }

    /// `sup phi` over the whole line, when finite.
    pub fn global_sup(&self) -> Option<f64> {
        match &self.kind {
            Kind::TanhPlusOne => Some(2.0),
            Kind::Exponential => None,
            Kind::AffineOdd(a) => Some(2.0 * a.offset),
        }
    }

    /// `M<(l) = sup { Phi(r) : r in [0, l] }`.
    pub fn m_less(&self, l: f64) -> Result<f64, RateError> {
        check_nonneg("M< argument", l)?;
        match &self.kind {
            Kind::TanhPlusOne => Ok(2.0),
            Kind::Exponential => self.big_phi(l),
            Kind::AffineOdd(_) => {
                if l == 0.0 {
                    return self.big_phi(0.0);
                }
                refine("M<", |n| {
                    let mut best = f64::NEG_INFINITY;
                    for i in 0..=n {
                        best = best.max(self.big_phi(l * i as f64 / n as f64)?);
                    }
                    Ok(best)
                })
            }
        }
    }

    /// `M>(l) = inf { Phi(r) : r > l }`.
    ///
    /// For user-supplied rates the infimum is taken over `l + d` with `d`
    /// on a geometric grid in `[1e-9, 1e4]`.
    pub fn m_greater(&self, l: f64) -> Result<f64, RateError> {
        check_nonneg("M> argument", l)?;
        match &self.kind {
            Kind::TanhPlusOne => Ok(2.0),
            // Phi = 2 cosh is increasing on [0, inf): infimum at the left end.
            Kind::Exponential => self.big_phi(l),
            Kind::AffineOdd(_) => refine("M>", |n| {
                let (lo, hi) = (1e-9f64.ln(), 1e4f64.ln());
                let mut best = f64::INFINITY;
                for i in 0..=n {
                    let d = (lo + (hi - lo) * i as f64 / n as f64).exp();
                    best = best.min(self.big_phi(l + d)?);
                }
                Ok(best)
            }),
        }
    }

    /// Whether `M>(l) -> inf` as `l -> inf`.
    pub fn m_greater_unbounded(&self) -> bool {
        matches!(self.kind, Kind::Exponential)
    }

    /// Generalized inverse `inf { r >= 0 : M>(r) >= y }`.
    pub fn m_greater_inverse(&self, y: f64) -> Result<Reach, RateError> {
        check_nonneg("M> inverse argument", y)?;
        if self.m_greater(0.0)? >= y {
            return Ok(Reach::At(0.0));
        }
        match &self.kind {
            Kind::TanhPlusOne => Ok(Reach::Unreachable),
            Kind::Exponential => {
                let r = (y / 2.0).acosh();
                if r > EXP_OVERFLOW_GUARD {
                    return Err(RateError::Overflow { x: r });
                }
                Ok(Reach::At(r))
            }
            Kind::AffineOdd(_) => {
                const CAP: f64 = 1e4;
                if self.m_greater(CAP)? < y {
                    return Ok(Reach::Unreachable);
                }
                let (mut lo, mut hi) = (0.0, CAP);
                while hi - lo > 1e-12 * hi.max(1.0) {
                    let mid = 0.5 * (lo + hi);
                    if self.m_greater(mid)? >= y {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Ok(Reach::At(hi))
            }
        }
    }

    /// A Lipschitz constant for `phi` on `[-r, r]`.
    pub fn lipschitz_bound(&self, r: f64) -> Result<f64, RateError> {
        check_nonneg("Lipschitz radius", r)?;
        match &self.kind {
            // sup sech^2 = 1, attained at 0
            Kind::TanhPlusOne => Ok(1.0),
            Kind::Exponential => self.phi(r),
            Kind::AffineOdd(a) => {
                let n = 256;
                let mut best = 0.0f64;
                for i in 0..=n {
                    let x = r * i as f64 / n as f64;
                    best = best.max((a.slope)(x)).max((a.slope)(-x));
                }
                Ok(best)
            }
        }
    }

    /// Critical interaction strength `B / f'(0)` for odd-plus-constant rates.
    pub fn phase_threshold(&self) -> Option<f64> {
        match &self.kind {
            Kind::TanhPlusOne => Some(1.0),
            Kind::Exponential => None,
            Kind::AffineOdd(a) => Some(a.offset / (a.slope)(0.0)),
        }
    }
}

/// Borrowed view of an odd-plus-constant rate.
pub enum AffineView<'a> {
    Tanh,
    User(&'a AffineOdd),
}

impl AffineView<'_> {
    pub fn offset(&self) -> f64 {
        match self {
            AffineView::Tanh => 1.0,
            AffineView::User(a) => a.offset,
        }
    }

    pub fn odd(&self, x: f64) -> f64 {
        match self {
            AffineView::Tanh => x.tanh(),
            AffineView::User(a) => a.odd(x),
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match self {
            AffineView::Tanh => {
                let c = x.cosh();
                1.0 / (c * c)
            }
            AffineView::User(a) => a.slope(x),
        }
    }
}

fn refine<F>(what: &'static str, eval: F) -> Result<f64, RateError>
where
    F: Fn(usize) -> Result<f64, RateError>,
{
    let mut n = 64;
    let mut prev = eval(n)?;
    while n < 1 << 20 {
        n *= 2;
        let next = eval(n)?;
        if (next - prev).abs() < GRID_REFINEMENT_TOL {
            return Ok(next);
        }
        prev = next;
    }
    Err(RateError::GridRefinement { what })
}
