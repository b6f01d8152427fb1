//! Baum-Welch fitting of dense HMMs with categorical emissions.

use super::{Emission, HmmModel, ObservationSeq};
use crate::hypergraph::ScoreMatrix;
use crate::numeric::DenseMatrix;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct EmFit {
    pub model: HmmModel,
    /// Weighted training log-likelihood before each update, followed by the
    /// value for the returned model (`iters + 1` entries).
    pub log_likelihoods: Vec<f64>,
}

/// [`em_fit_weighted`] with unit weights.
pub fn em_fit(
    data: &[ObservationSeq],
    states: usize,
    vocab: usize,
    iters: usize,
    seed: u64,
) -> Result<EmFit> {
    let weighted: Vec<(ObservationSeq, f64)> = data.iter().map(|x| (x.clone(), 1.0)).collect();
    em_fit_weighted(&weighted, states, vocab, iters, seed)
}

fn random_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let mut data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.5..1.5)).collect();
    for r in data.chunks_mut(cols) {
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
    }
    DenseMatrix::new(rows, cols, data).expect("finite by construction")
}

fn normalize_rows(counts: &DenseMatrix, fallback: &DenseMatrix) -> DenseMatrix {
    let mut out = counts.clone();
    for i in 0..out.rows() {
        let s: f64 = counts.row(i).iter().sum();
        if s > 0.0 {
            out.row_mut(i).iter_mut().for_each(|v| *v /= s);
        } else {
            // A state with no expected visits keeps its parameters; any choice
            // leaves the likelihood unchanged.
            out.row_mut(i).copy_from_slice(fallback.row(i));
        }
    }
    out
}

/// Expectation-maximization over weighted token sequences from a seeded
/// random start. The returned model has a dense transition matrix.
pub fn em_fit_weighted(
    data: &[(ObservationSeq, f64)],
    states: usize,
    vocab: usize,
    iters: usize,
    seed: u64,
) -> Result<EmFit> {
    if states == 0 {
        return Err(Error::InvalidParameter("EM needs at least one state".into()));
    }
    if vocab == 0 {
        return Err(Error::InvalidParameter("EM needs a nonempty vocabulary".into()));
    }
    if data.is_empty() {
        return Err(Error::Empty("EM training data"));
    }
    if let Some((_, w)) = data.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidParameter(format!("sequence weight {w}")));
    }
    if data.iter().any(|(x, _)| !matches!(x, ObservationSeq::Tokens(_))) {
        return Err(Error::InvalidParameter(
            "EM supports categorical token sequences only".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = random_rows(1, states, &mut rng).into_data();
    let trans = random_rows(states, states, &mut rng);
    let emit = random_rows(states, vocab, &mut rng);
    let mut model = HmmModel::new(start, ScoreMatrix::Dense(trans), Emission::Categorical(emit))?;
    for (x, _) in data {
        model.validate(x)?;
    }
    let mut history = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let (ll, next) = em_step(&model, data)?;
        history.push(ll);
        model = next;
    }
    let mut ll = 0.0;
    for (x, w) in data {
        if *w > 0.0 {
            ll += w * model.log_marginal(x)?;
        }
    }
    history.push(ll);
    Ok(EmFit {
        model,
        log_likelihoods: history,
    })
}

/// One E-step plus M-step; returns the likelihood of the input model.
fn em_step(model: &HmmModel, data: &[(ObservationSeq, f64)]) -> Result<(f64, HmmModel)> {
    let l = model.states();
    let Emission::Categorical(old_emit) = model.emission() else {
        unreachable!("EM models are categorical")
    };
    let trans = model.transition().materialize()?;
    let mut start_counts = vec![0.0; l];
    let mut trans_counts = DenseMatrix::zeros(l, l);
    let mut emit_counts = DenseMatrix::zeros(l, old_emit.cols());
    let mut total_weight = 0.0;
    let mut ll = 0.0;
    let mut xi = DenseMatrix::zeros(l, l);
    for (x, w) in data {
        if *w == 0.0 {
            continue;
        }
        let ObservationSeq::Tokens(tokens) = x else {
            unreachable!("checked by the caller")
        };
        let chart = model.forward_backward(x)?;
        ll += w * chart.log_likelihood;
        total_weight += w;
        let post = chart.posteriors();
        for (c, p) in start_counts.iter_mut().zip(post.row(0)) {
            *c += w * p;
        }
        for (t, &tok) in tokens.iter().enumerate() {
            for z in 0..l {
                let v = emit_counts.get(z, tok) + w * post.get(t, z);
                emit_counts.set(z, tok, v);
            }
        }
        for t in 0..tokens.len().saturating_sub(1) {
            let f = chart.fwd.row(t);
            let g: Vec<f64> = chart
                .bwd
                .row(t + 1)
                .iter()
                .zip(chart.emit.row(t + 1))
                .map(|(b, e)| b * e)
                .collect();
            let mut s = 0.0;
            for i in 0..l {
                let row = xi.row_mut(i);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f[i] * trans.get(i, j) * g[j];
                    s += *v;
                }
            }
            if s == 0.0 {
                continue;
            }
            for i in 0..l {
                for j in 0..l {
                    let v = trans_counts.get(i, j) + w * xi.get(i, j) / s;
                    trans_counts.set(i, j, v);
                }
            }
        }
    }
    let start: Vec<f64> = if total_weight > 0.0 {
        let s: f64 = start_counts.iter().sum();
        start_counts.iter().map(|c| c / s).collect()
    } else {
        model.start().to_vec()
    };
    let new_trans = normalize_rows(&trans_counts, &trans);
    let new_emit = normalize_rows(&emit_counts, old_emit);
    let next = HmmModel::new(start, ScoreMatrix::Dense(new_trans), Emission::Categorical(new_emit))?;
    Ok((ll, next))
}
