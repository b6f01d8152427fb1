//! Hidden semi-Markov models with truncated Poisson durations and diagonal
//! Gaussian emissions.
//!
//! Inference runs backward over segment start positions. With
//! `beta_s[z] = p(x_s.. | a segment in state z starts at s)` and
//! `gamma_s = Psi beta_s` (computed once per boundary through the transition
//! backend),
//! `beta_s[z] = sum_l p(l | z) prod_{i<l} p(x_{s+i} | z) gamma_{s+l}[z]`
//! with `gamma_T = 1`, so the final segment ends exactly at `T`.

use crate::hmm::check_transition;
use crate::hmm::STOCHASTIC_TOL;
use crate::hypergraph::{apply_score, ScoreMatrix};
use crate::lowrank::DEFAULT_MATERIALIZE_LIMIT;
use crate::numeric::{dot, logsumexp, DenseMatrix, ScaledVector};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// A `T x d` sequence of real-valued frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSeq {
    frames: DenseMatrix,
}

impl FrameSeq {
    pub fn new(frames: DenseMatrix) -> Self {
        Self { frames }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::new(DenseMatrix::from_rows(rows)?))
    }

    pub fn frames(&self) -> &DenseMatrix {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HsmmModel {
    start: Vec<f64>,
    transition: Arc<ScoreMatrix>,
    log_lambda: Vec<f64>,
    max_duration: usize,
    means: DenseMatrix,
    variances: DenseMatrix,
    /// `L x M`, entry `(z, l - 1)` is `ln p(l | z)`.
    log_duration: DenseMatrix,
}

/// `ln p(l)` for `l = 1..=m` under a Poisson with rate `exp(log_lambda)`,
/// renormalized over that support.
pub fn truncated_poisson_log_pmf(log_lambda: f64, m: usize) -> Result<Vec<f64>> {
    if m < 1 {
        return Err(Error::InvalidParameter("maximum duration must be at least 1".into()));
    }
    if !log_lambda.is_finite() {
        return Err(Error::NonFinite("Poisson log rate"));
    }
    let lambda = log_lambda.exp();
    let mut log_fact = 0.0;
    let unnorm: Vec<f64> = (1..=m)
        .map(|l| {
            log_fact += (l as f64).ln();
            l as f64 * log_lambda - lambda - log_fact
        })
        .collect();
    let z = logsumexp(&unnorm)?;
    Ok(unnorm.into_iter().map(|v| v - z).collect())
}

impl HsmmModel {
    pub fn new(
        start: Vec<f64>,
        transition: ScoreMatrix,
        log_lambda: Vec<f64>,
        max_duration: usize,
        means: DenseMatrix,
        variances: DenseMatrix,
    ) -> Result<Self> {
        let l = start.len();
        if l == 0 {
            return Err(Error::Empty("HSMM state space"));
        }
        if max_duration < 1 {
            return Err(Error::InvalidParameter("maximum duration must be at least 1".into()));
        }
        if start.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Negative("start distribution"));
        }
        let sum: f64 = start.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotNormalized {
                what: "start distribution",
                row: 0,
                sum,
            });
        }
        if transition.rows() != l {
            return Err(Error::Shape {
                context: "transition matrix",
                expected: format!("{l}x{l}"),
                got: format!("{}x{}", transition.rows(), transition.cols()),
            });
        }
        check_transition("transition matrix", &transition, STOCHASTIC_TOL)?;
        if log_lambda.len() != l {
            return Err(Error::Shape {
                context: "Poisson log rates",
                expected: l.to_string(),
                got: log_lambda.len().to_string(),
            });
        }
        if means.rows() != l || variances.rows() != l || means.cols() != variances.cols() {
            return Err(Error::Shape {
                context: "Gaussian parameters",
                expected: format!("{l}xd means and variances"),
                got: format!(
                    "{}x{} means, {}x{} variances",
                    means.rows(),
                    means.cols(),
                    variances.rows(),
                    variances.cols()
                ),
            });
        }
        if variances.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidParameter("Gaussian variances must be positive".into()));
        }
        let mut log_duration = DenseMatrix::zeros(l, max_duration);
        for (z, &ll) in log_lambda.iter().enumerate() {
            log_duration
                .row_mut(z)
                .copy_from_slice(&truncated_poisson_log_pmf(ll, max_duration)?);
        }
        Ok(Self {
            start,
            transition: Arc::new(transition),
            log_lambda,
            max_duration,
            means,
            variances,
            log_duration,
        })
    }

    pub fn states(&self) -> usize {
        self.start.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn transition(&self) -> &ScoreMatrix {
        &self.transition
    }

    pub fn log_lambda(&self) -> &[f64] {
        &self.log_lambda
    }

    pub fn max_duration(&self) -> usize {
        self.max_duration
    }

    pub fn means(&self) -> &DenseMatrix {
        &self.means
    }

    pub fn variances(&self) -> &DenseMatrix {
        &self.variances
    }

    /// Same parameters with another transition encoding.
    pub fn with_transition(&self, transition: ScoreMatrix) -> Result<Self> {
        Self::new(
            self.start.clone(),
            transition,
            self.log_lambda.clone(),
            self.max_duration,
            self.means.clone(),
            self.variances.clone(),
        )
    }

    pub fn to_dense(&self) -> Result<Self> {
        self.to_dense_with_limit(DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn to_dense_with_limit(&self, limit: u128) -> Result<Self> {
        let dense = self.transition.materialize_with_limit(limit)?;
        self.with_transition(ScoreMatrix::Dense(dense))
    }

    /// `p(l | z)` for `l = 1..=M`.
    pub fn duration_pmf(&self, z: usize) -> Vec<f64> {
        self.log_duration.row(z).iter().map(|v| v.exp()).collect()
    }

    /// `ln p(x_t | z)` as a `T x L` table.
    pub fn frame_log_densities(&self, x: &FrameSeq) -> Result<DenseMatrix> {
        if x.dim() != self.dim() {
            return Err(Error::Shape {
                context: "frame dimension",
                expected: self.dim().to_string(),
                got: x.dim().to_string(),
            });
        }
        let l = self.states();
        let log_norm: Vec<f64> = (0..l)
            .map(|z| {
                -0.5 * self
                    .variances
                    .row(z)
                    .iter()
                    .map(|v| (2.0 * std::f64::consts::PI * v).ln())
                    .sum::<f64>()
            })
            .collect();
        let mut out = DenseMatrix::zeros(x.len(), l);
        for t in 0..x.len() {
            let frame = x.frames.row(t);
            for z in 0..l {
                let quad: f64 = frame
                    .iter()
                    .zip(self.means.row(z))
                    .zip(self.variances.row(z))
                    .map(|((xi, m), v)| (xi - m) * (xi - m) / v)
                    .sum();
                out.set(t, z, log_norm[z] - 0.5 * quad);
            }
        }
        Ok(out)
    }

    /// `ln p(x)` summed over all segmentations and state sequences.
    pub fn log_marginal(&self, x: &FrameSeq) -> Result<f64> {
        if x.is_empty() {
            return Err(Error::SequenceTooShort { min: 1, got: 0 });
        }
        let emit = self.frame_log_densities(x)?;
        let l = self.states();
        let t_len = x.len();
        // gamma[s] for s in 1..=T; gamma[T] is all ones.
        let mut gamma: Vec<Option<ScaledVector>> = vec![None; t_len + 1];
        gamma[t_len] = Some(ScaledVector::ones(l));
        let mut terms = Vec::with_capacity(self.max_duration);
        let mut seg = vec![0.0; l];
        let mut log_beta = vec![0.0; l];
        let mut beta0 = None;
        for s in (0..t_len).rev() {
            let longest = self.max_duration.min(t_len - s);
            for z in 0..l {
                terms.clear();
                seg[z] = 0.0;
                for len in 1..=longest {
                    seg[z] += emit.get(s + len - 1, z);
                    let g = gamma[s + len].as_ref().expect("filled for later boundaries");
                    let gv = g.values()[z];
                    if gv > 0.0 {
                        terms.push(self.log_duration.get(z, len - 1) + seg[z] + gv.ln() + g.log_scale());
                    }
                }
                log_beta[z] = if terms.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    logsumexp(&terms)?
                };
            }
            let beta = ScaledVector::from_log(&log_beta);
            if s == 0 {
                beta0 = Some(beta);
            } else {
                gamma[s] = Some(apply_score(&self.transition, &beta)?);
            }
            // Boundaries more than M frames ahead are never read again.
            if s + self.max_duration < t_len {
                gamma[s + self.max_duration] = None;
            }
        }
        let beta0 = beta0.expect("T >= 1");
        let p = dot(&self.start, beta0.values());
        Ok(if p == 0.0 {
            f64::NEG_INFINITY
        } else {
            p.ln() + beta0.log_scale()
        })
    }

    /// Ancestral sample of segments until at least `t_target` frames exist;
    /// the final segment is cut to end exactly at `t_target`.
    pub fn sample(&self, t_target: usize, seed: u64) -> Result<(Vec<(usize, usize)>, FrameSeq)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut segments = Vec::new();
        let mut data = Vec::with_capacity(t_target * d);
        let mut total = 0;
        let mut z = crate::hmm::draw(&self.start, &mut rng);
        while total < t_target {
            if !segments.is_empty() {
                z = crate::hmm::draw(&self.transition.row(z), &mut rng);
            }
            let len = 1 + crate::hmm::draw(&self.duration_pmf(z), &mut rng);
            let len = len.min(t_target - total);
            for _ in 0..len {
                for k in 0..d {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    data.push(self.means.get(z, k) + self.variances.get(z, k).sqrt() * eps);
                }
            }
            segments.push((z, len));
            total += len;
        }
        Ok((segments, FrameSeq::new(DenseMatrix::new(t_target, d, data)?)))
    }
}
