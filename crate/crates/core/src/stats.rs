//! Summary statistics and hypothesis tests used by the aggregation layer.

use serde::{Deserialize, Serialize};

use crate::special::student_t_cdf;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `H1: mean(a) < mean(b)`.
    Less,
    /// `H1: mean(a) > mean(b)`.
    Greater,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
    pub direction: Direction,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolated quantile of unsorted data, `q ∈ [0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || v[lo] == v[hi] {
        return v[lo];
    }
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Standard error of a binomial proportion.
pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// One-sided Welch t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_one_sided(a: &[f64], b: &[f64], direction: Direction) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(
            "each sample needs at least 2 values".into(),
        ));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("samples must be finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = variance(a) / na;
    let vb = variance(b) / nb;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Err(Error::DegenerateTest);
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p_value = match direction {
        Direction::Less => student_t_cdf(t, dof),
        Direction::Greater => student_t_cdf(-t, dof),
    };
    Ok(WelchTest {
        t_stat: t,
        dof,
        p_value,
        direction,
    })
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value from the t approximation.
    pub p_value: f64,
    pub n: usize,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput(
            "spearman needs at least 3 pairs".into(),
        ));
    }
    let rho = pearson(&ranks(x), &ranks(y));
    if rho.is_nan() {
        return Err(Error::DegenerateTest);
    }
    let dof = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (dof / (1.0 - rho * rho)).sqrt();
        2.0 * student_t_cdf(-t.abs(), dof)
    };
    Ok(Spearman { rho, p_value, n })
}
