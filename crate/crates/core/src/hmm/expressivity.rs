//! A 3-state HMM whose transition matrix has rank 2, and a measurement of how
//! closely 2-state HMMs fitted by EM can match its two-step marginal.

use super::{em_fit_weighted, Emission, HmmModel, ObservationSeq};
use crate::hypergraph::ScoreMatrix;
use crate::lowrank::LowRankFactors;
use crate::numeric::{derive_seed, estimate_rank, DenseMatrix, RANK_THRESHOLD};
use crate::Result;

/// Start `[1/3, 1/3, 1/3]`, identity emissions, and transitions
/// `[[1/3, 1/3, 1/3], [0, 1, 0], [1/2, 0, 1/2]] = U V^T` with
/// `U = [[1/3, 2/3], [1, 0], [0, 1]]`, `V^T = [[0, 1, 0], [1/2, 0, 1/2]]`.
pub fn three_state_rank_two_model() -> HmmModel {
    let u = DenseMatrix::from_rows(&[
        vec![1.0 / 3.0, 2.0 / 3.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
    ])
    .expect("fixed shape");
    let v = DenseMatrix::from_rows(&[vec![0.0, 0.5], vec![1.0, 0.0], vec![0.0, 0.5]])
        .expect("fixed shape");
    let f = LowRankFactors::from_raw(u, v).expect("nonnegative factors");
    HmmModel::new(
        vec![1.0 / 3.0; 3],
        ScoreMatrix::LowRank(f),
        Emission::Categorical(DenseMatrix::identity(3)),
    )
    .expect("stochastic by construction")
}

/// `[[1/9, 1/9, 1/9], [0, 1/3, 0], [1/6, 0, 1/6]]`, indexed `[x1][x2]`.
pub fn three_state_target_marginal() -> DenseMatrix {
    DenseMatrix::from_rows(&[
        vec![1.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0],
        vec![0.0, 1.0 / 3.0, 0.0],
        vec![1.0 / 6.0, 0.0, 1.0 / 6.0],
    ])
    .expect("fixed shape")
}

/// `p(x1, x2)` for all pairs of a 3-symbol model.
pub fn two_step_marginal(m: &HmmModel) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(3, 3);
    for a in 0..3 {
        for b in 0..3 {
            out.set(a, b, m.log_marginal(&vec![a, b].into())?.exp());
        }
    }
    Ok(out)
}

fn total_variation(p: &DenseMatrix, q: &DenseMatrix) -> f64 {
    0.5 * p
        .data()
        .iter()
        .zip(q.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

#[derive(Clone, Debug)]
pub struct ExpressivityReport {
    pub target: DenseMatrix,
    /// Marginal computed from the 3-state model.
    pub model_marginal: DenseMatrix,
    pub max_abs_error: f64,
    pub transition_rank: usize,
    /// Total-variation distance reached by each 2-state restart.
    pub restart_tv: Vec<f64>,
    pub best_tv: f64,
    pub best_marginal: DenseMatrix,
}

/// Rebuilds the 3-state fixture, checks its marginal, and fits 2-state HMMs by
/// EM on the nine length-2 strings weighted by their target probability.
pub fn expressivity_report(restarts: usize, iters: usize, seed: u64) -> Result<ExpressivityReport> {
    let model = three_state_rank_two_model();
    let target = three_state_target_marginal();
    let model_marginal = two_step_marginal(&model)?;
    let max_abs_error = model_marginal
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let transition_rank = estimate_rank(&model.transition().materialize()?, RANK_THRESHOLD)?;
    let data: Vec<(ObservationSeq, f64)> = (0..9)
        .map(|k| (vec![k / 3, k % 3].into(), target.get(k / 3, k % 3)))
        .collect();
    let mut restart_tv = Vec::with_capacity(restarts);
    let mut best: Option<(f64, DenseMatrix)> = None;
    for r in 0..restarts {
        let fit = em_fit_weighted(&data, 2, 3, iters, derive_seed(seed, r as u64))?;
        let marginal = two_step_marginal(&fit.model)?;
        let tv = total_variation(&marginal, &target);
        restart_tv.push(tv);
        if best.as_ref().is_none_or(|(b, _)| tv < *b) {
            best = Some((tv, marginal));
        }
    }
    let (best_tv, best_marginal) = best.unwrap_or((f64::NAN, DenseMatrix::zeros(3, 3)));
    Ok(ExpressivityReport {
        target,
        model_marginal,
        max_abs_error,
        transition_rank,
        restart_tv,
        best_tv,
        best_marginal,
    })
}
