//! Thurstone (Case V) maximum-likelihood aggregation of a pair matrix.
//!
//! Maximizes `L(mu) = sum_{i != j} m_ij * ln Phi(mu_i - mu_j)` by gradient
//! ascent (Newton directions with backtracking) starting from `mu = 0`. The objective is concave and invariant to
//! a common shift of `mu`; the shift is fixed afterwards by the gauge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ranking::{PairMatrix, RankingError};
use crate::scalar::Scalar;

/// Normalization that removes the translation ambiguity of the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    #[default]
    ZeroSum,
    FirstZero,
    UnitSum,
}

impl Gauge {
    pub fn as_str(self) -> &'static str {
        match self {
            Gauge::ZeroSum => "zero-sum",
            Gauge::FirstZero => "first-zero",
            Gauge::UnitSum => "unit-sum",
        }
    }

    pub fn apply<T: Scalar>(self, mu: &mut [T]) {
        if mu.is_empty() {
            return;
        }
        let n = T::from_count(mu.len() as u64);
        let shift = match self {
            Gauge::ZeroSum => -mu.iter().copied().sum::<T>() / n,
            Gauge::FirstZero => -mu[0],
            Gauge::UnitSum => (T::one() - mu.iter().copied().sum::<T>()) / n,
        };
        for m in mu.iter_mut() {
            *m = *m + shift;
        }
    }
}

impl fmt::Display for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gauge {
    type Err = RankingError;
    fn from_str(s: &str) -> Result<Self, RankingError> {
        match s {
            "zero-sum" => Ok(Gauge::ZeroSum),
            "first-zero" => Ok(Gauge::FirstZero),
            "unit-sum" => Ok(Gauge::UnitSum),
            _ => Err(RankingError::Config(format!(
                "unknown gauge `{s}` (expected zero-sum, first-zero or unit-sum)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingConfig<T> {
    /// Additive smoothing for performance ratios.
    pub epsilon: T,
    pub gauge: Gauge,
    /// Convergence threshold on the Euclidean norm of the gradient.
    pub tol: T,
    pub max_iter: usize,
    /// Lower clamp for `Phi` inside the logarithm.
    pub phi_floor: T,
}

impl<T: Scalar> Default for RankingConfig<T> {
    fn default() -> Self {
        RankingConfig {
            epsilon: T::lit(1e-6),
            gauge: Gauge::ZeroSum,
            tol: T::lit(1e-9).max(T::epsilon() * T::lit(100.0)),
            max_iter: 10_000,
            phi_floor: T::lit(1e-12).max(T::min_positive_value()),
        }
    }
}

impl<T: Scalar> RankingConfig<T> {
    pub fn validate(&self) -> Result<(), RankingError> {
        if self.epsilon.is_nan() || self.epsilon < T::zero() {
            return Err(RankingError::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.phi_floor > T::zero() && self.phi_floor < T::lit(0.5)) {
            return Err(RankingError::Config(format!(
                "phi floor must lie in (0, 0.5), got {}",
                self.phi_floor
            )));
        }
        if self.tol.is_nan() || self.tol <= T::zero() {
            return Err(RankingError::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Global scores for the models of a pair matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingVector<T> {
    pub model_ids: Vec<String>,
    pub mu: Vec<T>,
    pub gauge: Gauge,
    pub log_likelihood: T,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct RankingJson {
    gauge: Gauge,
    models: Vec<RankedModel>,
    log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub id: String,
    pub mu: f64,
    pub rank: usize,
}

impl<T: Scalar> RankingVector<T> {
    /// 1-based ranks, highest score first; ties keep model order.
    pub fn ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.mu.len()).collect();
        order.sort_by(|&a, &b| self.mu[b].partial_cmp(&self.mu[a]).unwrap_or(std::cmp::Ordering::Equal));
        let mut ranks = vec![0; self.mu.len()];
        for (pos, &i) in order.iter().enumerate() {
            ranks[i] = pos + 1;
        }
        ranks
    }

    /// Model ids from best to worst.
    pub fn order(&self) -> Vec<&str> {
        let ranks = self.ranks();
        let mut ids: Vec<(usize, &str)> = ranks
            .iter()
            .copied()
            .zip(self.model_ids.iter().map(String::as_str))
            .collect();
        ids.sort();
        ids.into_iter().map(|(_, id)| id).collect()
    }

    pub fn score_of(&self, model_id: &str) -> Option<T> {
        self.model_ids.iter().position(|m| m == model_id).map(|i| self.mu[i])
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let ranks = self.ranks();
        serde_json::to_value(RankingJson {
            gauge: self.gauge,
            models: self
                .model_ids
                .iter()
                .zip(&self.mu)
                .zip(ranks)
                .map(|((id, mu), rank)| RankedModel {
                    id: id.clone(),
                    mu: mu.as_f64(),
                    rank,
                })
                .collect(),
            log_likelihood: self.log_likelihood.as_f64(),
        })
        .expect("ranking serializes")
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self, RankingError> {
        let r: RankingJson =
            serde_json::from_value(v).map_err(|e| RankingError::Config(format!("ranking json: {e}")))?;
        Ok(RankingVector {
            model_ids: r.models.iter().map(|m| m.id.clone()).collect(),
            mu: r.models.iter().map(|m| T::lit(m.mu)).collect(),
            gauge: r.gauge,
            log_likelihood: T::lit(r.log_likelihood),
            iterations: 0,
        })
    }
}

fn clamped_cdf<T: Scalar>(d: T, floor: T) -> T {
    d.norm_cdf().max(floor)
}

/// `ln max(Phi(d), floor)`, accurate when `Phi(d)` is close to 1.
fn ln_clamped_cdf<T: Scalar>(d: T, floor: T) -> T {
    if d > T::zero() {
        (-(-d).norm_cdf()).ln_1p()
    } else {
        clamped_cdf(d, floor).ln()
    }
}

/// `sum_{i != j} m_ij ln Phi(mu_i - mu_j)` with `Phi` clamped below.
pub fn log_likelihood<T: Scalar>(m: &PairMatrix<T>, mu: &[T], phi_floor: T) -> T {
    let j = m.len();
    let mut total = T::zero();
    for r in 0..j {
        for c in 0..j {
            if r != c {
                let w = m.get(r, c);
                if w != T::zero() {
                    total = total + w * ln_clamped_cdf(mu[r] - mu[c], phi_floor);
                }
            }
        }
    }
    total
}

/// Analytic gradient of [`log_likelihood`].
pub fn gradient<T: Scalar>(m: &PairMatrix<T>, mu: &[T], phi_floor: T) -> Vec<T> {
    let j = m.len();
    let mut g = vec![T::zero(); j];
    for r in 0..j {
        for c in 0..j {
            if r == c {
                continue;
            }
            let w = m.get(r, c);
            if w == T::zero() {
                continue;
            }
            let d = mu[r] - mu[c];
            let t = w * d.norm_pdf() / clamped_cdf(d, phi_floor);
            g[r] = g[r] + t;
            g[c] = g[c] - t;
        }
    }
    g
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Solves `(-H + 11^T / J) d = g`. `-H` is a weighted graph Laplacian whose
/// null space is the common shift, which the rank-one term removes.
fn newton_direction<T: Scalar>(m: &PairMatrix<T>, mu: &[T], g: &[T], phi_floor: T) -> Option<Vec<T>> {
    let j = mu.len();
    let inv_j = T::one() / T::from_count(j as u64);
    let mut h = vec![inv_j; j * j];
    for r in 0..j {
        for c in 0..j {
            let w = m.get(r, c);
            if r == c || w == T::zero() {
                continue;
            }
            let d = mu[r] - mu[c];
            let cdf = d.norm_cdf();
            // -(ln Phi)'' = lambda (d + lambda), which tends to 1 in the far tail
            let curv = if cdf > phi_floor {
                let lambda = d.norm_pdf() / cdf;
                lambda * (d + lambda)
            } else {
                T::one()
            };
            let k = w * curv;
            h[r * j + r] = h[r * j + r] + k;
            h[c * j + c] = h[c * j + c] + k;
            h[r * j + c] = h[r * j + c] - k;
            h[c * j + r] = h[c * j + r] - k;
        }
    }
    cholesky_solve(&mut h, g.to_vec(), j)
}

fn cholesky_solve<T: Scalar>(a: &mut [T], mut b: Vec<T>, n: usize) -> Option<Vec<T>> {
    for k in 0..n {
        let mut d = a[k * n + k];
        for p in 0..k {
            d = d - a[k * n + p] * a[k * n + p];
        }
        if d.is_nan() || d <= T::zero() {
            return None;
        }
        let d = d.sqrt();
        a[k * n + k] = d;
        for i in k + 1..n {
            let mut v = a[i * n + k];
            for p in 0..k {
                v = v - a[i * n + p] * a[k * n + p];
            }
            a[i * n + k] = v / d;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for p in 0..i {
            v = v - a[i * n + p] * b[p];
        }
        b[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for p in i + 1..n {
            v = v - a[p * n + i] * b[p];
        }
        b[i] = v / a[i * n + i];
    }
    if b.iter().all(|x| x.is_finite()) {
        Some(b)
    } else {
        None
    }
}

/// Maximum-likelihood global scores for `m`.
pub fn mle_rank<T: Scalar>(m: &PairMatrix<T>, cfg: &RankingConfig<T>) -> Result<RankingVector<T>, RankingError> {
    cfg.validate()?;
    m.validate()?;
    let j = m.len();
    if j < 2 {
        return Err(RankingError::TooFewModels(j));
    }

    let mut mu = vec![T::zero(); j];
    let mut ll = log_likelihood(m, &mu, cfg.phi_floor);
    let mut g = gradient(m, &mu, cfg.phi_floor);
    let mut gnorm = norm(&g);
    let mut iterations = 0;
    while gnorm >= cfg.tol {
        if iterations == cfg.max_iter {
            return Err(RankingError::NoConvergence {
                iterations,
                grad_norm: gnorm.as_f64(),
            });
        }
        iterations += 1;
        let dir = newton_direction(m, &mu, &g, cfg.phi_floor).unwrap_or_else(|| g.clone());
        let mut t = T::one();
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<T> = mu.iter().zip(&dir).map(|(&x, &d)| x + t * d).collect();
            let cand_ll = log_likelihood(m, &cand, cfg.phi_floor);
            let cand_g = gradient(m, &cand, cfg.phi_floor);
            let cand_norm = norm(&cand_g);
            // at the optimum L is flat to rounding, so a shrinking gradient also counts
            if cand_ll > ll || (cand_ll >= ll - T::epsilon() * ll.abs() && cand_norm < gnorm) {
                mu = cand;
                ll = cand_ll;
                g = cand_g;
                gnorm = cand_norm;
                moved = true;
                break;
            }
            t = t / T::lit(2.0);
        }
        if !moved {
            return Err(RankingError::NoConvergence {
                iterations,
                grad_norm: gnorm.as_f64(),
            });
        }
    }

    cfg.gauge.apply(&mut mu);
    let log_likelihood = log_likelihood(m, &mu, cfg.phi_floor);
    Ok(RankingVector {
        model_ids: m.model_ids().to_vec(),
        mu,
        gauge: cfg.gauge,
        log_likelihood,
        iterations,
    })
}
