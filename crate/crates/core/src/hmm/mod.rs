//! Hidden Markov models with a pluggable transition backend.
//!
//! The likelihood is the backward recursion
//! `alpha_T = e_T`, `alpha_t = e_t * (Psi alpha_{t+1})`, `p(x) = start . alpha_1`
//! where `e_t[z] = p(x_t | z)`. With a low-rank `Psi` each step costs `O(L N)`.

mod em;
mod expressivity;

pub use em::{em_fit, em_fit_weighted, EmFit};
pub use expressivity::{expressivity_report, three_state_rank_two_model, ExpressivityReport};

use crate::hypergraph::{Hypergraph, HypergraphBuilder, NodeId, ScoreMatrix};
use crate::lowrank::DEFAULT_MATERIALIZE_LIMIT;
use crate::numeric::{dot, gemm, rescale_pow2, DenseMatrix, Operand, ScaledVector};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Tolerance for row-sum checks on model parameters.
pub const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum Emission {
    /// `L x V` table of `p(x | z)`.
    Categorical(DenseMatrix),
    /// `L x K` table of per-state probabilities that each of `K` bits is set.
    Bernoulli(DenseMatrix),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObservationSeq {
    Tokens(Vec<usize>),
    /// One row of `K` bits per time step.
    Binary(Vec<Vec<bool>>),
}

impl ObservationSeq {
    pub fn len(&self) -> usize {
        match self {
            ObservationSeq::Tokens(x) => x.len(),
            ObservationSeq::Binary(x) => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<Vec<usize>> for ObservationSeq {
    fn from(x: Vec<usize>) -> Self {
        ObservationSeq::Tokens(x)
    }
}

#[derive(Clone, Debug)]
pub struct HmmModel {
    start: Vec<f64>,
    transition: Arc<ScoreMatrix>,
    emission: Emission,
    /// Categorical: `V x L`, so one token's likelihoods are contiguous.
    /// Bernoulli: `K x L` log-probabilities of a set bit.
    emission_by_symbol: DenseMatrix,
    /// Bernoulli only: `K x L` log-probabilities of a clear bit.
    log_clear: Option<DenseMatrix>,
}

impl PartialEq for HmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.start == other.start
            && self.transition == other.transition
            && self.emission == other.emission
    }
}

fn check_distribution(what: &'static str, p: &[f64], tol: f64) -> Result<()> {
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    if p.iter().any(|&x| x < 0.0) {
        return Err(Error::Negative(what));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::NotNormalized { what, row: 0, sum });
    }
    Ok(())
}

/// Checks that a square scoring matrix is row-stochastic. Row sums come from
/// `Psi 1`, which is `O(L N)` for factorized backends.
pub(crate) fn check_transition(what: &'static str, t: &ScoreMatrix, tol: f64) -> Result<()> {
    if t.rows() != t.cols() {
        return Err(Error::Shape {
            context: "transition matrix",
            expected: "square".into(),
            got: format!("{}x{}", t.rows(), t.cols()),
        });
    }
    if let ScoreMatrix::Dense(m) = t {
        if !m.is_nonnegative() {
            return Err(Error::Negative(what));
        }
    }
    let sums = t.apply(&vec![1.0; t.cols()])?;
    for (row, sum) in sums.into_iter().enumerate() {
        if (sum - 1.0).abs() > tol {
            return Err(Error::NotNormalized { what, row, sum });
        }
    }
    Ok(())
}

impl HmmModel {
    pub fn new(start: Vec<f64>, transition: ScoreMatrix, emission: Emission) -> Result<Self> {
        Self::with_shared_transition(start, Arc::new(transition), emission)
    }

    pub fn with_shared_transition(
        start: Vec<f64>,
        transition: Arc<ScoreMatrix>,
        emission: Emission,
    ) -> Result<Self> {
        let l = start.len();
        if l == 0 {
            return Err(Error::Empty("HMM state space"));
        }
        check_distribution("start distribution", &start, STOCHASTIC_TOL)?;
        if transition.rows() != l {
            return Err(Error::Shape {
                context: "transition matrix",
                expected: format!("{l}x{l}"),
                got: format!("{}x{}", transition.rows(), transition.cols()),
            });
        }
        check_transition("transition matrix", &transition, STOCHASTIC_TOL)?;
        let (emission_by_symbol, log_clear) = match &emission {
            Emission::Categorical(e) => {
                if e.rows() != l {
                    return Err(Error::Shape {
                        context: "emission table rows",
                        expected: l.to_string(),
                        got: e.rows().to_string(),
                    });
                }
                if e.cols() == 0 {
                    return Err(Error::Empty("vocabulary"));
                }
                e.check_row_stochastic("emission table", STOCHASTIC_TOL)?;
                (e.transpose(), None)
            }
            Emission::Bernoulli(p) => {
                if p.rows() != l {
                    return Err(Error::Shape {
                        context: "Bernoulli emission rows",
                        expected: l.to_string(),
                        got: p.rows().to_string(),
                    });
                }
                if p.data().iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    return Err(Error::InvalidParameter(
                        "Bernoulli emission probabilities must lie in [0, 1]".into(),
                    ));
                }
                let pt = p.transpose();
                let set = pt.data().iter().map(|x| x.ln()).collect();
                let clear = pt.data().iter().map(|x| (-x).ln_1p()).collect();
                // ln(0) = -inf is not a finite matrix entry, so bypass the check.
                (
                    DenseMatrix::from_parts_unchecked(pt.rows(), pt.cols(), set),
                    Some(DenseMatrix::from_parts_unchecked(pt.rows(), pt.cols(), clear)),
                )
            }
        };
        Ok(Self {
            start,
            transition,
            emission,
            emission_by_symbol,
            log_clear,
        })
    }

    pub fn states(&self) -> usize {
        self.start.len()
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn transition(&self) -> &ScoreMatrix {
        &self.transition
    }

    pub fn shared_transition(&self) -> Arc<ScoreMatrix> {
        Arc::clone(&self.transition)
    }

    pub fn emission(&self) -> &Emission {
        &self.emission
    }

    /// Vocabulary size (categorical) or bits per frame (Bernoulli).
    pub fn symbols(&self) -> usize {
        match &self.emission {
            Emission::Categorical(e) => e.cols(),
            Emission::Bernoulli(p) => p.cols(),
        }
    }

    /// Same parameters with another transition encoding.
    pub fn with_transition(&self, transition: ScoreMatrix) -> Result<Self> {
        Self::new(self.start.clone(), transition, self.emission.clone())
    }

    /// Same model with the transition materialized densely.
    pub fn to_dense(&self) -> Result<Self> {
        self.to_dense_with_limit(DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn to_dense_with_limit(&self, limit: u128) -> Result<Self> {
        let dense = self.transition.materialize_with_limit(limit)?;
        self.with_transition(ScoreMatrix::Dense(dense))
    }

    pub fn validate(&self, x: &ObservationSeq) -> Result<()> {
        if x.is_empty() {
            return Err(Error::SequenceTooShort { min: 1, got: 0 });
        }
        match (x, &self.emission) {
            (ObservationSeq::Tokens(tokens), Emission::Categorical(e)) => {
                if let Some((position, &token)) =
                    tokens.iter().enumerate().find(|(_, &t)| t >= e.cols())
                {
                    return Err(Error::TokenOutOfRange {
                        token,
                        position,
                        vocab: e.cols(),
                    });
                }
                Ok(())
            }
            (ObservationSeq::Binary(frames), Emission::Bernoulli(p)) => {
                if let Some(bad) = frames.iter().find(|f| f.len() != p.cols()) {
                    return Err(Error::Shape {
                        context: "binary frame width",
                        expected: p.cols().to_string(),
                        got: bad.len().to_string(),
                    });
                }
                Ok(())
            }
            _ => Err(Error::InvalidParameter(
                "observation kind does not match the emission model".into(),
            )),
        }
    }

    /// Writes `p(x_t | z)` up to a common factor into `out` and returns the log
    /// of that factor.
    pub(crate) fn emission_at(&self, x: &ObservationSeq, t: usize, out: &mut [f64]) -> f64 {
        match x {
            ObservationSeq::Tokens(tokens) => {
                out.copy_from_slice(self.emission_by_symbol.row(tokens[t]));
                0.0
            }
            ObservationSeq::Binary(frames) => {
                let clear = self.log_clear.as_ref().expect("Bernoulli model");
                out.fill(0.0);
                for (k, &bit) in frames[t].iter().enumerate() {
                    let src = if bit {
                        self.emission_by_symbol.row(k)
                    } else {
                        clear.row(k)
                    };
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += s;
                    }
                }
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    out.fill(0.0);
                    return 0.0;
                }
                for o in out.iter_mut() {
                    *o = (*o - max).exp();
                }
                max
            }
        }
    }

    /// `ln p(z_t = . , x_t | z_{t-1})` and friends need the log emission; this
    /// returns `ln p(x_t | z)` for every `z`.
    pub(crate) fn log_emission_at(&self, x: &ObservationSeq, t: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.states()];
        let shift = self.emission_at(x, t, &mut e);
        e.iter().map(|v| v.ln() + shift).collect()
    }

    /// `ln p(x)`.
    pub fn log_marginal(&self, x: &ObservationSeq) -> Result<f64> {
        self.validate(x)?;
        let l = self.states();
        let t_len = x.len();
        let mut alpha = vec![0.0; l];
        let mut scale = self.emission_at(x, t_len - 1, &mut alpha);
        scale += rescale_pow2(&mut alpha);
        let mut next = vec![0.0; l];
        let mut emit = vec![0.0; l];
        let mut scratch = vec![0.0; self.transition.scratch_len()];
        for t in (0..t_len - 1).rev() {
            self.transition.apply_into(&alpha, &mut scratch, &mut next);
            scale += self.emission_at(x, t, &mut emit);
            for (a, e) in next.iter_mut().zip(&emit) {
                *a *= e;
            }
            scale += rescale_pow2(&mut next);
            std::mem::swap(&mut alpha, &mut next);
        }
        let p = dot(&self.start, &alpha);
        Ok(if p == 0.0 {
            f64::NEG_INFINITY
        } else {
            p.ln() + scale
        })
    }

    /// `ln p(x)` for many sequences at once using matrix-matrix products.
    ///
    /// Sequences are grouped by length; each group advances as a `B x L`
    /// block so the transition is streamed once per step for the whole group.
    pub fn log_marginal_batch(&self, seqs: &[ObservationSeq]) -> Result<Vec<f64>> {
        for x in seqs {
            self.validate(x)?;
        }
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, x) in seqs.iter().enumerate() {
            by_len.entry(x.len()).or_default().push(i);
        }
        let mut out = vec![0.0; seqs.len()];
        let mut ws = BatchWorkspace::default();
        for (_, idx) in by_len {
            let group: Vec<&ObservationSeq> = idx.iter().map(|&i| &seqs[i]).collect();
            let ll = self.batch_group(&group, &mut ws);
            for (i, v) in idx.into_iter().zip(ll) {
                out[i] = v;
            }
        }
        Ok(out)
    }

    fn batch_group(&self, seqs: &[&ObservationSeq], ws: &mut BatchWorkspace) -> Vec<f64> {
        let l = self.states();
        let b = seqs.len();
        let t_len = seqs[0].len();
        ws.resize(b, l, self.transition.scratch_len());
        let mut scale = vec![0.0; b];
        for (r, x) in seqs.iter().enumerate() {
            let row = &mut ws.state[r * l..(r + 1) * l];
            scale[r] = self.emission_at(x, t_len - 1, row);
            scale[r] += rescale_pow2(row);
        }
        for t in (0..t_len - 1).rev() {
            self.apply_block(b, ws);
            for (r, x) in seqs.iter().enumerate() {
                scale[r] += self.emission_at(x, t, &mut ws.emit);
                let row = &mut ws.next[r * l..(r + 1) * l];
                for (a, e) in row.iter_mut().zip(&ws.emit) {
                    *a *= e;
                }
                scale[r] += rescale_pow2(row);
            }
            std::mem::swap(&mut ws.state, &mut ws.next);
        }
        (0..b)
            .map(|r| {
                let p = dot(&self.start, &ws.state[r * l..(r + 1) * l]);
                if p == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    p.ln() + scale[r]
                }
            })
            .collect()
    }

    /// `next = state Psi^T` for a `b x L` block.
    fn apply_block(&self, b: usize, ws: &mut BatchWorkspace) {
        let l = self.states();
        match self.transition.as_ref() {
            ScoreMatrix::Dense(m) => gemm(
                b,
                l,
                l,
                Operand::row_major(&ws.state, l),
                Operand::transposed(m.data(), l),
                &mut ws.next,
                0.0,
            ),
            ScoreMatrix::LowRank(f) => {
                use crate::lowrank::NormalizerSide;
                let n = f.rank();
                if f.side() == NormalizerSide::Tail {
                    for r in 0..b {
                        for (s, c) in ws.state[r * l..(r + 1) * l].iter_mut().zip(f.c()) {
                            *s *= c;
                        }
                    }
                }
                // Gamma = state V, then next = Gamma U^T: the L x L product is
                // never formed.
                gemm(
                    b,
                    l,
                    n,
                    Operand::row_major(&ws.state, l),
                    Operand::row_major(f.v().data(), n),
                    &mut ws.gamma,
                    0.0,
                );
                gemm(
                    b,
                    n,
                    l,
                    Operand::row_major(&ws.gamma, n),
                    Operand::transposed(f.u().data(), n),
                    &mut ws.next,
                    0.0,
                );
                if f.side() == NormalizerSide::Head {
                    for r in 0..b {
                        for (s, c) in ws.next[r * l..(r + 1) * l].iter_mut().zip(f.c()) {
                            *s *= c;
                        }
                    }
                }
            }
            ScoreMatrix::BandedLowRank(_) => {
                for r in 0..b {
                    let (src, dst) = (&ws.state[r * l..(r + 1) * l], &mut ws.next[r * l..(r + 1) * l]);
                    self.transition.apply_into(src, &mut ws.scratch, dst);
                }
            }
        }
    }

    /// `p(z_t | x)` as a `T x L` table.
    pub fn posterior_marginals(&self, x: &ObservationSeq) -> Result<DenseMatrix> {
        let chart = self.forward_backward(x)?;
        Ok(chart.posteriors())
    }

    pub(crate) fn forward_backward(&self, x: &ObservationSeq) -> Result<Chart> {
        self.validate(x)?;
        let l = self.states();
        let t_len = x.len();
        let mut emit = DenseMatrix::zeros(t_len, l);
        let mut emit_scale = vec![0.0; t_len];
        for t in 0..t_len {
            emit_scale[t] = self.emission_at(x, t, emit.row_mut(t));
        }
        let mut fwd = DenseMatrix::zeros(t_len, l);
        let mut fwd_scale = vec![0.0; t_len];
        {
            let row = fwd.row_mut(0);
            for ((f, s), e) in row.iter_mut().zip(&self.start).zip(emit.row(0)) {
                *f = s * e;
            }
            fwd_scale[0] = emit_scale[0] + rescale_pow2(row);
        }
        for t in 1..t_len {
            let mut v = self.transition.apply_transpose(fwd.row(t - 1))?;
            for (a, e) in v.iter_mut().zip(emit.row(t)) {
                *a *= e;
            }
            fwd_scale[t] = fwd_scale[t - 1] + emit_scale[t] + rescale_pow2(&mut v);
            fwd.row_mut(t).copy_from_slice(&v);
        }
        let mut bwd = DenseMatrix::zeros(t_len, l);
        let mut bwd_scale = vec![0.0; t_len];
        bwd.row_mut(t_len - 1).fill(1.0);
        for t in (0..t_len - 1).rev() {
            let g: Vec<f64> = bwd.row(t + 1).iter().zip(emit.row(t + 1)).map(|(b, e)| b * e).collect();
            let mut v = self.transition.apply(&g)?;
            bwd_scale[t] = bwd_scale[t + 1] + emit_scale[t + 1] + rescale_pow2(&mut v);
            bwd.row_mut(t).copy_from_slice(&v);
        }
        let last = dot(fwd.row(t_len - 1), &vec![1.0; l]);
        let log_likelihood = if last == 0.0 {
            f64::NEG_INFINITY
        } else {
            last.ln() + fwd_scale[t_len - 1]
        };
        Ok(Chart {
            emit,
            fwd,
            bwd,
            log_likelihood,
        })
    }

    /// Most probable state path and its log joint probability.
    ///
    /// Factorized transitions are materialized first, subject to the default
    /// size guard. Among equally good paths the lexicographically smallest is
    /// returned.
    pub fn viterbi(&self, x: &ObservationSeq) -> Result<(Vec<usize>, f64)> {
        self.viterbi_with_limit(x, DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn viterbi_with_limit(&self, x: &ObservationSeq, limit: u128) -> Result<(Vec<usize>, f64)> {
        self.validate(x)?;
        let trans = self.transition.materialize_with_limit(limit)?;
        let log_trans: Vec<f64> = trans.data().iter().map(|p| p.ln()).collect();
        let l = self.states();
        let t_len = x.len();
        // best[t][z]: best log score of x_t.. given z_t = z.
        let mut best = vec![vec![0.0; l]; t_len];
        best[t_len - 1] = self.log_emission_at(x, t_len - 1);
        for t in (0..t_len - 1).rev() {
            let e = self.log_emission_at(x, t);
            for z in 0..l {
                let row = &log_trans[z * l..(z + 1) * l];
                let m = row
                    .iter()
                    .zip(&best[t + 1])
                    .map(|(a, b)| a + b)
                    .fold(f64::NEG_INFINITY, f64::max);
                best[t][z] = e[z] + m;
            }
        }
        // Decode left to right, keeping the first maximizer at each step.
        let argmax = |scores: &mut dyn Iterator<Item = f64>| {
            let mut arg = (0, f64::NEG_INFINITY);
            for (i, s) in scores.enumerate() {
                if s > arg.1 {
                    arg = (i, s);
                }
            }
            arg
        };
        let (z0, score) = argmax(&mut self.start.iter().zip(&best[0]).map(|(s, b)| s.ln() + b));
        let mut path = vec![z0];
        for t in 1..t_len {
            let prev = path[t - 1];
            let row = &log_trans[prev * l..(prev + 1) * l];
            let (z, _) = argmax(&mut row.iter().zip(&best[t]).map(|(a, b)| a + b));
            path.push(z);
        }
        Ok((path, score))
    }

    /// Ancestral sample of `t_len` steps, deterministic in `seed`.
    pub fn sample(&self, t_len: usize, seed: u64) -> Result<(Vec<usize>, ObservationSeq)> {
        if t_len == 0 {
            return Err(Error::SequenceTooShort { min: 1, got: 0 });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = Vec::with_capacity(t_len);
        let mut z = draw(&self.start, &mut rng);
        states.push(z);
        for _ in 1..t_len {
            z = draw(&self.transition.row(z), &mut rng);
            states.push(z);
        }
        let obs = match &self.emission {
            Emission::Categorical(e) => {
                ObservationSeq::Tokens(states.iter().map(|&z| draw(e.row(z), &mut rng)).collect())
            }
            Emission::Bernoulli(p) => ObservationSeq::Binary(
                states
                    .iter()
                    .map(|&z| p.row(z).iter().map(|&q| rng.random::<f64>() < q).collect())
                    .collect(),
            ),
        };
        Ok((states, obs))
    }

    /// The same computation as [`HmmModel::log_marginal`] laid out as a
    /// hypergraph: one node per time step, emissions as clamped head weights,
    /// and a size-1 root reached through the start distribution.
    pub fn to_hypergraph(&self, x: &ObservationSeq) -> Result<(Hypergraph, BTreeMap<NodeId, ScaledVector>)> {
        self.validate(x)?;
        let l = self.states();
        let t_len = x.len();
        let mut b = HypergraphBuilder::new();
        let root = b.add_node(1);
        let nodes: Vec<NodeId> = (0..t_len).map(|_| b.add_node(l)).collect();
        for t in (0..t_len - 1).rev() {
            let mut w = vec![0.0; l];
            let shift = self.emission_at(x, t, &mut w);
            let w: Vec<f64> = w.iter().map(|v| v * shift.exp()).collect();
            b.add_weighted_edge(nodes[t], &[nodes[t + 1]], self.shared_transition(), w)?;
        }
        let start = DenseMatrix::new(1, l, self.start.clone())?;
        b.add_edge(root, &[nodes[0]], Arc::new(ScoreMatrix::Dense(start)))?;
        let mut last = vec![0.0; l];
        let shift = self.emission_at(x, t_len - 1, &mut last);
        let mut init = BTreeMap::new();
        init.insert(nodes[t_len - 1], ScaledVector::new(last, shift)?);
        Ok((b.build(root)?, init))
    }
}

#[derive(Default)]
struct BatchWorkspace {
    state: Vec<f64>,
    next: Vec<f64>,
    gamma: Vec<f64>,
    emit: Vec<f64>,
    scratch: Vec<f64>,
}

impl BatchWorkspace {
    fn resize(&mut self, b: usize, l: usize, rank: usize) {
        self.state.resize(b * l, 0.0);
        self.next.resize(b * l, 0.0);
        self.gamma.resize(b * rank, 0.0);
        self.emit.resize(l, 0.0);
        self.scratch.resize(rank, 0.0);
    }
}

/// Scaled forward and backward tables for one sequence. Rows are rescaled
/// independently, so only ratios within a row carry meaning.
pub(crate) struct Chart {
    pub emit: DenseMatrix,
    pub fwd: DenseMatrix,
    pub bwd: DenseMatrix,
    pub log_likelihood: f64,
}

impl Chart {
    pub fn posteriors(&self) -> DenseMatrix {
        let (t_len, l) = (self.fwd.rows(), self.fwd.cols());
        let mut out = DenseMatrix::zeros(t_len, l);
        for t in 0..t_len {
            let row = out.row_mut(t);
            for ((o, f), b) in row.iter_mut().zip(self.fwd.row(t)).zip(self.bwd.row(t)) {
                *o = f * b;
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        out
    }
}

/// Inverse-CDF draw from an unnormalized-safe probability vector.
pub(crate) fn draw(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in p.iter().enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}
