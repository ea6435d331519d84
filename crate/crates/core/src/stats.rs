//! Small statistics toolkit: running moments, Kolmogorov–Smirnov distances
//! and p-values, chi-square goodness of fit, least squares.

use statrs::distribution::{ChiSquared, ContinuousCDF, DiscreteCDF, Poisson};

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// `sup |F_n - F|` for the sample against a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Two-sample statistic `sup |F_a - F_b|` (ties handled by jumping over
/// equal values in both samples together).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov survival function `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.27 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value of the two-sample KS statistic.
pub fn ks_two_sample_pvalue(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sq = ne.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// Chi-square goodness of fit of observed integer counts against a Poisson
/// law. Cells are grown from the centre of mass until every expected count
/// is at least 5. Returns the p-value.
pub fn poisson_chi_square_pvalue(counts: &[u64], mean: f64) -> f64 {
    let n = counts.len() as f64;
    let law = Poisson::new(mean).expect("positive Poisson mean");
    let max = *counts.iter().max().unwrap_or(&0);
    // cells [edges[i], edges[i+1]) with open-ended first/last cells
    let mut edges = Vec::new();
    let mut lo = 0u64;
    let mut mass_below = 0.0;
    let top = max.max(mean as u64 * 3 + 10);
    let mut k = 0u64;
    while k <= top {
        let cell_mass = law.cdf(k) - mass_below;
        let tail = 1.0 - law.cdf(k);
        if cell_mass * n >= 5.0 && tail * n >= 5.0 {
            edges.push((lo, k));
            mass_below = law.cdf(k);
            lo = k + 1;
        }
        k += 1;
    }
    let mut observed = vec![0u64; edges.len() + 1];
    for &c in counts {
        let idx = edges.iter().position(|&(_, hi)| c <= hi).unwrap_or(edges.len());
        observed[idx] += 1;
    }
    let mut expected = Vec::with_capacity(edges.len() + 1);
    let mut prev = 0.0;
    for &(_, hi) in &edges {
        let c = law.cdf(hi);
        expected.push((c - prev) * n);
        prev = c;
    }
    expected.push((1.0 - prev) * n);
    chi_square_pvalue(&observed, &expected, 1)
}

/// Pearson chi-square p-value; `constraints` counts the degrees of freedom
/// removed (1 when the totals are matched).
pub fn chi_square_pvalue(observed: &[u64], expected: &[f64], constraints: usize) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    let dof = observed.len().saturating_sub(constraints).max(1);
    let chi = ChiSquared::new(dof as f64).expect("positive dof");
    1.0 - chi.cdf(stat)
}

/// `P(X > x)` for `X ~ Poisson(mean)`.
pub fn poisson_sf(mean: f64, x: f64) -> f64 {
    if x < 0.0 {
        return 1.0;
    }
    if mean <= 0.0 {
        return 0.0;
    }
    let law = Poisson::new(mean).expect("positive Poisson mean");
    1.0 - law.cdf(x.floor() as u64)
}

/// Ordinary least squares fit `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    LineFit { slope, intercept, r_squared }
}
