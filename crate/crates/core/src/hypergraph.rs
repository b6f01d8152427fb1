//! Labeled directed hypergraphs and sum-product marginalization over them.
//!
//! Every hyperedge has one head and one or two tails. Its score matrix has a
//! row per head label and a column per joint tail labeling, where a pair of
//! tails `(z1, z2)` maps to column `z1 * L2 + z2`. Marginalization walks the
//! edges in order and accumulates `alpha_head += Psi_e beta_tails`.

use crate::lowrank::{BandedLowRankFactors, LowRankFactors, DEFAULT_MATERIALIZE_LIMIT};
use crate::numeric::{matvec_into, matvec_transpose, DenseMatrix, ScaledVector};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::sync::Arc;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Backend {
    Dense,
    LowRank,
    Banded,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Dense => "dense",
            Backend::LowRank => "lowrank",
            Backend::Banded => "banded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dense" => Some(Backend::Dense),
            "lowrank" => Some(Backend::LowRank),
            "banded" => Some(Backend::Banded),
            _ => None,
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A scoring matrix in one of three storage formats, all applied the same way.
#[derive(Clone, Debug, PartialEq)]
pub enum ScoreMatrix {
    Dense(DenseMatrix),
    LowRank(LowRankFactors),
    BandedLowRank(BandedLowRankFactors),
}

impl ScoreMatrix {
    pub fn backend(&self) -> Backend {
        match self {
            ScoreMatrix::Dense(_) => Backend::Dense,
            ScoreMatrix::LowRank(_) => Backend::LowRank,
            ScoreMatrix::BandedLowRank(_) => Backend::Banded,
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            ScoreMatrix::Dense(m) => m.rows(),
            ScoreMatrix::LowRank(f) => f.rows(),
            ScoreMatrix::BandedLowRank(b) => b.size(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            ScoreMatrix::Dense(m) => m.cols(),
            ScoreMatrix::LowRank(f) => f.cols(),
            ScoreMatrix::BandedLowRank(b) => b.size(),
        }
    }

    /// Inner dimension of the factorization, if any.
    pub fn rank(&self) -> Option<usize> {
        match self {
            ScoreMatrix::Dense(_) => None,
            ScoreMatrix::LowRank(f) => Some(f.rank()),
            ScoreMatrix::BandedLowRank(b) => Some(b.low_rank().rank()),
        }
    }

    /// Scratch length needed by [`ScoreMatrix::apply_into`].
    pub(crate) fn scratch_len(&self) -> usize {
        self.rank().unwrap_or(0)
    }

    /// `out = Psi beta`. `scratch` must hold [`ScoreMatrix::scratch_len`] entries.
    pub(crate) fn apply_into(&self, beta: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        match self {
            ScoreMatrix::Dense(m) => matvec_into(m, beta, out),
            ScoreMatrix::LowRank(f) => f.apply_into(beta, scratch, out),
            ScoreMatrix::BandedLowRank(b) => b.apply_into(beta, scratch, out),
        }
    }

    pub fn apply(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.cols() {
            return Err(Error::Shape {
                context: "score matrix apply",
                expected: self.cols().to_string(),
                got: beta.len().to_string(),
            });
        }
        let mut scratch = vec![0.0; self.scratch_len()];
        let mut out = vec![0.0; self.rows()];
        self.apply_into(beta, &mut scratch, &mut out);
        Ok(out)
    }

    /// `Psi^T a`.
    pub fn apply_transpose(&self, a: &[f64]) -> Result<Vec<f64>> {
        match self {
            ScoreMatrix::Dense(m) => matvec_transpose(m, a),
            ScoreMatrix::LowRank(f) => f.apply_transpose(a),
            ScoreMatrix::BandedLowRank(b) => b.apply_transpose(a),
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        match self {
            ScoreMatrix::Dense(m) => m.row(i).to_vec(),
            ScoreMatrix::LowRank(f) => f.row(i),
            ScoreMatrix::BandedLowRank(b) => b.row(i),
        }
    }

    pub fn materialize(&self) -> Result<DenseMatrix> {
        self.materialize_with_limit(DEFAULT_MATERIALIZE_LIMIT)
    }

    /// Dense copy, refusing matrices with more than `limit` entries.
    pub fn materialize_with_limit(&self, limit: u128) -> Result<DenseMatrix> {
        match self {
            ScoreMatrix::Dense(m) => {
                crate::lowrank::size_guard(m.rows(), m.cols(), limit)?;
                Ok(m.clone())
            }
            ScoreMatrix::LowRank(f) => f.materialize_with_limit(limit),
            ScoreMatrix::BandedLowRank(b) => b.materialize_with_limit(limit),
        }
    }

    /// Dense copy of the same matrix, as a [`ScoreMatrix::Dense`].
    pub fn to_dense(&self) -> Result<ScoreMatrix> {
        Ok(ScoreMatrix::Dense(self.materialize()?))
    }
}

/// `Psi beta` on a scaled vector; the result is renormalized.
pub fn apply_score(score: &ScoreMatrix, beta: &ScaledVector) -> Result<ScaledVector> {
    let values = score.apply(beta.values())?;
    let mut out = ScaledVector::from_raw(values, beta.log_scale());
    out.renormalize();
    Ok(out)
}

/// Outer product of two tail vectors, flattened as `z1 * L2 + z2`.
pub fn join_tails(a: &ScaledVector, b: &ScaledVector) -> ScaledVector {
    let mut values = Vec::with_capacity(a.len() * b.len());
    for &x in a.values() {
        values.extend(b.values().iter().map(|y| x * y));
    }
    ScaledVector::from_raw(values, a.log_scale() + b.log_scale())
}

#[derive(Clone, Debug)]
pub struct Hyperedge {
    head: NodeId,
    tails: Vec<NodeId>,
    score: Arc<ScoreMatrix>,
    /// Clamped potentials: the effective matrix is `diag(head_weights) Psi`.
    head_weights: Option<Vec<f64>>,
}

impl Hyperedge {
    pub fn head(&self) -> NodeId {
        self.head
    }

    pub fn tails(&self) -> &[NodeId] {
        &self.tails
    }

    pub fn score(&self) -> &ScoreMatrix {
        &self.score
    }

    pub fn head_weights(&self) -> Option<&[f64]> {
        self.head_weights.as_deref()
    }
}

#[derive(Clone, Debug, Default)]
pub struct HypergraphBuilder {
    sizes: Vec<usize>,
    edges: Vec<Hyperedge>,
}

impl HypergraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node with `labels` possible labels.
    pub fn add_node(&mut self, labels: usize) -> NodeId {
        self.sizes.push(labels);
        self.sizes.len() - 1
    }

    pub fn add_edge(
        &mut self,
        head: NodeId,
        tails: &[NodeId],
        score: Arc<ScoreMatrix>,
    ) -> Result<()> {
        self.push_edge(head, tails, score, None)
    }

    /// Adds an edge whose rows are additionally scaled by `head_weights`.
    pub fn add_weighted_edge(
        &mut self,
        head: NodeId,
        tails: &[NodeId],
        score: Arc<ScoreMatrix>,
        head_weights: Vec<f64>,
    ) -> Result<()> {
        if head_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Negative("edge head weights"));
        }
        self.push_edge(head, tails, score, Some(head_weights))
    }

    fn push_edge(
        &mut self,
        head: NodeId,
        tails: &[NodeId],
        score: Arc<ScoreMatrix>,
        head_weights: Option<Vec<f64>>,
    ) -> Result<()> {
        if tails.is_empty() || tails.len() > 2 {
            return Err(Error::InvalidGraph(format!(
                "edge into node {head} has {} tails; 1 or 2 are supported",
                tails.len()
            )));
        }
        let n = self.sizes.len();
        if let Some(&bad) = std::iter::once(&head).chain(tails).find(|&&v| v >= n) {
            return Err(Error::InvalidGraph(format!("unknown node {bad}")));
        }
        let rows = self.sizes[head];
        let cols: usize = tails.iter().map(|&t| self.sizes[t]).product();
        if score.rows() != rows || score.cols() != cols {
            return Err(Error::Shape {
                context: "hyperedge score matrix",
                expected: format!("{rows}x{cols}"),
                got: format!("{}x{}", score.rows(), score.cols()),
            });
        }
        if let Some(w) = &head_weights {
            if w.len() != rows {
                return Err(Error::Shape {
                    context: "edge head weights",
                    expected: rows.to_string(),
                    got: w.len().to_string(),
                });
            }
        }
        self.edges.push(Hyperedge {
            head,
            tails: tails.to_vec(),
            score,
            head_weights,
        });
        Ok(())
    }

    /// Validates the edge order and freezes the graph.
    ///
    /// Every tail must be a leaf (no incoming edges) or the head of earlier
    /// edges only, so each node is complete before it is read.
    pub fn build(self, root: NodeId) -> Result<Hypergraph> {
        let n = self.sizes.len();
        if root >= n {
            return Err(Error::InvalidGraph(format!("unknown root {root}")));
        }
        let mut incoming = vec![0usize; n];
        for e in &self.edges {
            incoming[e.head] += 1;
        }
        if incoming[root] == 0 {
            return Err(Error::InvalidGraph("root has no incoming edge".into()));
        }
        let mut seen = vec![0usize; n];
        for (k, e) in self.edges.iter().enumerate() {
            for &t in &e.tails {
                if incoming[t] > 0 && seen[t] < incoming[t] {
                    return Err(Error::InvalidGraph(format!(
                        "edge {k} reads node {t} before all of its incoming edges"
                    )));
                }
            }
            seen[e.head] += 1;
        }
        let leaves = (0..n).filter(|&v| incoming[v] == 0).collect();
        Ok(Hypergraph {
            sizes: self.sizes,
            edges: self.edges,
            root,
            leaves,
        })
    }
}

/// An immutable hypergraph whose edge list is a valid topological schedule.
#[derive(Clone, Debug)]
pub struct Hypergraph {
    sizes: Vec<usize>,
    edges: Vec<Hyperedge>,
    root: NodeId,
    leaves: Vec<NodeId>,
}

impl Hypergraph {
    pub fn node_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn labels(&self, v: NodeId) -> usize {
        self.sizes[v]
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    fn leaf_vectors(
        &self,
        leaf_init: &BTreeMap<NodeId, ScaledVector>,
    ) -> Result<Vec<Option<ScaledVector>>> {
        let mut alpha: Vec<Option<ScaledVector>> = vec![None; self.node_count()];
        for &v in &self.leaves {
            alpha[v] = Some(ScaledVector::ones(self.sizes[v]));
        }
        for (&v, init) in leaf_init {
            if v >= self.node_count() || alpha[v].is_none() {
                return Err(Error::InvalidGraph(format!(
                    "initial vector given for non-leaf node {v}"
                )));
            }
            if init.len() != self.sizes[v] {
                return Err(Error::Shape {
                    context: "leaf initialization",
                    expected: self.sizes[v].to_string(),
                    got: init.len().to_string(),
                });
            }
            alpha[v] = Some(init.clone());
        }
        Ok(alpha)
    }

    /// Log of the total score `sum_z alpha_root[z]`. Leaves missing from
    /// `leaf_init` start as all-ones.
    pub fn marginalize(&self, leaf_init: &BTreeMap<NodeId, ScaledVector>) -> Result<f64> {
        let mut alpha = self.leaf_vectors(leaf_init)?;
        for e in &self.edges {
            let beta = match e.tails.as_slice() {
                [t] => alpha[*t].clone().expect("schedule validated at build"),
                [t1, t2] => join_tails(
                    alpha[*t1].as_ref().expect("schedule validated at build"),
                    alpha[*t2].as_ref().expect("schedule validated at build"),
                ),
                _ => unreachable!("tail count validated at build"),
            };
            let mut out = apply_score(&e.score, &beta)?;
            if let Some(w) = &e.head_weights {
                out.hadamard_in_place(w);
                out.renormalize();
            }
            match &mut alpha[e.head] {
                Some(acc) => acc.add_assign(&out)?,
                slot @ None => *slot = Some(out),
            }
        }
        Ok(alpha[self.root]
            .as_ref()
            .expect("root has an incoming edge")
            .log_sum())
    }

    /// Log of the best single derivation score (max-times semiring).
    ///
    /// Max does not distribute over the sum inside `U (V^T beta)`, so only dense
    /// score matrices are accepted; factorized ones yield
    /// [`Error::LowRankUnderMax`].
    pub fn max_marginalize(&self, leaf_init: &BTreeMap<NodeId, Vec<f64>>) -> Result<f64> {
        let mut alpha: Vec<Option<Vec<f64>>> = vec![None; self.node_count()];
        for &v in &self.leaves {
            alpha[v] = Some(vec![0.0; self.sizes[v]]);
        }
        for (&v, init) in leaf_init {
            if v >= self.node_count() || alpha[v].is_none() {
                return Err(Error::InvalidGraph(format!(
                    "initial vector given for non-leaf node {v}"
                )));
            }
            if init.len() != self.sizes[v] {
                return Err(Error::Shape {
                    context: "leaf initialization",
                    expected: self.sizes[v].to_string(),
                    got: init.len().to_string(),
                });
            }
            alpha[v] = Some(init.iter().map(|x| x.ln()).collect());
        }
        for e in &self.edges {
            let ScoreMatrix::Dense(m) = e.score.as_ref() else {
                return Err(Error::LowRankUnderMax);
            };
            let beta: Vec<f64> = match e.tails.as_slice() {
                [t] => alpha[*t].clone().expect("schedule validated at build"),
                [t1, t2] => {
                    let a = alpha[*t1].as_ref().expect("schedule validated at build");
                    let b = alpha[*t2].as_ref().expect("schedule validated at build");
                    a.iter()
                        .flat_map(|x| b.iter().map(move |y| x + y))
                        .collect()
                }
                _ => unreachable!("tail count validated at build"),
            };
            let out: Vec<f64> = (0..m.rows())
                .map(|i| {
                    let best = m
                        .row(i)
                        .iter()
                        .zip(&beta)
                        .map(|(p, b)| p.ln() + b)
                        .fold(f64::NEG_INFINITY, f64::max);
                    match &e.head_weights {
                        Some(w) => best + w[i].ln(),
                        None => best,
                    }
                })
                .collect();
            match &mut alpha[e.head] {
                Some(acc) => acc.iter_mut().zip(&out).for_each(|(a, o)| *a = a.max(*o)),
                slot @ None => *slot = Some(out),
            }
        }
        Ok(alpha[self.root]
            .as_ref()
            .expect("root has an incoming edge")
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Both sides of the max/sum interchange for one nonnegative factorization.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxSumInterchange {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    pub beta: Vec<f64>,
    /// `max_z sum_n U[z][n] V[z][n] beta[z]`
    pub max_of_sums: f64,
    /// `sum_n max_z U[z][n] V[z][n] beta[z]`
    pub sum_of_maxes: f64,
}

/// Evaluates both orders of `max` and `sum` over the factor terms.
pub fn max_sum_interchange(u: DenseMatrix, v: DenseMatrix, beta: Vec<f64>) -> Result<MaxSumInterchange> {
    if u.rows() != v.rows() || u.cols() != v.cols() || beta.len() != u.rows() {
        return Err(Error::Shape {
            context: "max/sum interchange",
            expected: format!("{}x{} factors and {} weights", u.rows(), u.cols(), u.rows()),
            got: format!("{}x{}, {}x{}, {}", u.rows(), u.cols(), v.rows(), v.cols(), beta.len()),
        });
    }
    let term = |z: usize, n: usize| u.get(z, n) * v.get(z, n) * beta[z];
    let max_of_sums = (0..u.rows())
        .map(|z| (0..u.cols()).map(|n| term(z, n)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let sum_of_maxes = (0..u.cols())
        .map(|n| (0..u.rows()).map(|z| term(z, n)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(MaxSumInterchange {
        u,
        v,
        beta,
        max_of_sums,
        sum_of_maxes,
    })
}

/// The shipped 2x2 instance where the two orders disagree (1 vs 2).
pub fn max_sum_counterexample() -> MaxSumInterchange {
    max_sum_interchange(
        DenseMatrix::identity(2),
        DenseMatrix::identity(2),
        vec![1.0, 1.0],
    )
    .expect("fixed shapes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::{init_band, LowRankFactors};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(rows: &[Vec<f64>]) -> Arc<ScoreMatrix> {
        Arc::new(ScoreMatrix::Dense(DenseMatrix::from_rows(rows).unwrap()))
    }

    fn sv(values: &[f64]) -> ScaledVector {
        ScaledVector::new(values.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn join_examples() {
        assert_eq!(join_tails(&sv(&[1.0, 0.0]), &sv(&[0.0, 1.0])).to_linear(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(join_tails(&sv(&[1.0]), &sv(&[1.0, 1.0, 1.0])).to_linear(), vec![1.0; 3]);
        assert_eq!(
            join_tails(&sv(&[0.5, 0.5]), &sv(&[0.25, 0.75])).to_linear(),
            vec![0.125, 0.375, 0.125, 0.375]
        );
        let a = ScaledVector::new(vec![1.0], 2.0).unwrap();
        let b = ScaledVector::new(vec![1.0], -0.5).unwrap();
        assert_eq!(join_tails(&a, &b).log_scale(), 1.5);
    }

    #[test]
    fn single_edge() {
        let mut b = HypergraphBuilder::new();
        let s = b.add_node(1);
        let leaf = b.add_node(1);
        b.add_edge(s, &[leaf], dense(&[vec![1.0]])).unwrap();
        let g = b.build(s).unwrap();
        assert_eq!(g.marginalize(&BTreeMap::new()).unwrap(), 0.0);
    }

    #[test]
    fn chain_of_half_matrices() {
        let mut b = HypergraphBuilder::new();
        let s = b.add_node(2);
        let mid = b.add_node(2);
        let leaf = b.add_node(2);
        let half = dense(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        b.add_edge(mid, &[leaf], half.clone()).unwrap();
        b.add_edge(s, &[mid], half).unwrap();
        let g = b.build(s).unwrap();
        // alpha_mid = [1, 1], alpha_root = [1, 1]
        let got = g.marginalize(&BTreeMap::new()).unwrap();
        assert!((got - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn shared_heads_sum() {
        let mut b = HypergraphBuilder::new();
        let s = b.add_node(1);
        let x = b.add_node(2);
        let y = b.add_node(3);
        b.add_edge(s, &[x], dense(&[vec![1.0, 2.0]])).unwrap();
        b.add_edge(s, &[y], dense(&[vec![1.0, 1.0, 1.0]])).unwrap();
        let g = b.build(s).unwrap();
        let got = g.marginalize(&BTreeMap::new()).unwrap();
        assert!((got - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_schedules() {
        let mut b = HypergraphBuilder::new();
        let s = b.add_node(1);
        let m = b.add_node(1);
        let l = b.add_node(1);
        b.add_edge(s, &[m], dense(&[vec![1.0]])).unwrap();
        b.add_edge(m, &[l], dense(&[vec![1.0]])).unwrap();
        assert!(matches!(b.build(s), Err(Error::InvalidGraph(_))));

        let mut b = HypergraphBuilder::new();
        let s = b.add_node(1);
        b.add_edge(s, &[s], dense(&[vec![1.0]])).unwrap();
        assert!(matches!(b.build(s), Err(Error::InvalidGraph(_))));

        let mut b = HypergraphBuilder::new();
        let s = b.add_node(1);
        let l = b.add_node(2);
        assert!(matches!(
            b.add_edge(s, &[l], dense(&[vec![1.0]])),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            b.add_edge(s, &[l, l, l], dense(&[vec![1.0; 8]])),
            Err(Error::InvalidGraph(_))
        ));
        assert!(matches!(b.build(l), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn max_sum_fixture_disagrees() {
        let f = max_sum_counterexample();
        assert_eq!(f.max_of_sums, 1.0);
        assert_eq!(f.sum_of_maxes, 2.0);
    }

    #[test]
    fn max_refuses_factorized_scores() {
        let mut b = HypergraphBuilder::new();
        let s = b.add_node(2);
        let l = b.add_node(2);
        let f = LowRankFactors::from_raw(DenseMatrix::identity(2), DenseMatrix::identity(2)).unwrap();
        b.add_edge(s, &[l], Arc::new(ScoreMatrix::LowRank(f))).unwrap();
        let g = b.build(s).unwrap();
        assert_eq!(g.max_marginalize(&BTreeMap::new()), Err(Error::LowRankUnderMax));
    }

    #[test]
    fn max_marginalize_picks_best_derivation() {
        let mut b = HypergraphBuilder::new();
        let s = b.add_node(1);
        let x = b.add_node(2);
        let y = b.add_node(2);
        b.add_edge(s, &[x, y], dense(&[vec![0.1, 0.4, 0.3, 0.2]])).unwrap();
        let g = b.build(s).unwrap();
        let got = g.max_marginalize(&BTreeMap::new()).unwrap();
        assert!((got - 0.4f64.ln()).abs() < 1e-15);
    }

    /// Random graph with a valid schedule: nodes are created leaves-first and
    /// each edge's head is a later node than its tails.
    struct RandomGraph {
        sizes: Vec<usize>,
        edges: Vec<(usize, Vec<usize>, DenseMatrix)>,
        /// Alternative factorization per edge, when one was drawn.
        factors: Vec<LowRankFactors>,
        root: usize,
    }

    fn random_graph(seed: u64, max_nodes: usize, max_labels: usize, rank: usize) -> RandomGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=max_nodes);
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max_labels)).collect();
        let mut edges = Vec::new();
        let mut factors = Vec::new();
        // Node v > 0 gets one or two incoming edges from nodes 0..v; node 0 is
        // always a leaf.
        for head in 1..n {
            let k = rng.random_range(1..=2);
            for _ in 0..k {
                let arity = if head >= 2 { rng.random_range(1..=2) } else { 1 };
                let tails: Vec<usize> = (0..arity).map(|_| rng.random_range(0..head)).collect();
                let cols: usize = tails.iter().map(|&t| sizes[t]).product();
                let u = DenseMatrix::new(
                    sizes[head],
                    rank,
                    (0..sizes[head] * rank).map(|_| rng.random::<f64>()).collect(),
                )
                .unwrap();
                let v = DenseMatrix::new(cols, rank, (0..cols * rank).map(|_| rng.random::<f64>()).collect())
                    .unwrap();
                let f = LowRankFactors::from_raw(u, v).unwrap();
                edges.push((head, tails, f.materialize().unwrap()));
                factors.push(f);
            }
        }
        RandomGraph {
            sizes,
            edges,
            factors,
            root: n - 1,
        }
    }

    fn build_graph(r: &RandomGraph, low_rank: bool) -> Hypergraph {
        let mut b = HypergraphBuilder::new();
        for &s in &r.sizes {
            b.add_node(s);
        }
        for ((head, tails, m), f) in r.edges.iter().zip(&r.factors) {
            let score = if low_rank {
                ScoreMatrix::LowRank(f.clone())
            } else {
                ScoreMatrix::Dense(m.clone())
            };
            b.add_edge(*head, tails, Arc::new(score)).unwrap();
        }
        // Order edges by head so every node is complete before it is read.
        b.edges.sort_by_key(|e| e.head);
        b.build(r.root).unwrap()
    }

    fn oracle(r: &RandomGraph, leaf: &BTreeMap<usize, Vec<f64>>) -> f64 {
        let edges: Vec<lrinfer_oracles::OracleEdge> = r
            .edges
            .iter()
            .map(|(h, t, m)| lrinfer_oracles::OracleEdge {
                head: *h,
                tails: t.clone(),
                score: m.to_rows(),
            })
            .collect();
        let leaves: Vec<Option<Vec<f64>>> = (0..r.sizes.len()).map(|v| leaf.get(&v).cloned()).collect();
        lrinfer_oracles::hypergraph_log_total(&r.sizes, &edges, &leaves, r.root)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn backends_agree(seed in any::<u64>()) {
            let r = random_graph(seed, 6, 8, 3);
            let d = build_graph(&r, false).marginalize(&BTreeMap::new()).unwrap();
            let l = build_graph(&r, true).marginalize(&BTreeMap::new()).unwrap();
            prop_assert!((d - l).abs() <= 1e-10 * d.abs().max(1.0));
        }

        #[test]
        fn matches_enumeration(seed in any::<u64>()) {
            let r = random_graph(seed, 4, 4, 2);
            let g = build_graph(&r, false);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut init = BTreeMap::new();
            let mut raw = BTreeMap::new();
            for &v in g.leaves() {
                let x: Vec<f64> = (0..r.sizes[v]).map(|_| rng.random::<f64>() + 0.1).collect();
                init.insert(v, ScaledVector::new(x.clone(), 0.0).unwrap());
                raw.insert(v, x);
            }
            let got = g.marginalize(&init).unwrap();
            let want = oracle(&r, &raw);
            prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{got} vs {want}");
        }

        #[test]
        fn leaf_scaling_shifts_evidence(seed in any::<u64>(), k in 0.01f64..100.0) {
            // With two nodes every derivation reads the single leaf once.
            let r = random_graph(seed, 2, 5, 2);
            let g = build_graph(&r, true);
            let base = g.marginalize(&BTreeMap::new()).unwrap();
            let leaf = g.leaves()[0];
            let mut init = BTreeMap::new();
            init.insert(leaf, ScaledVector::new(vec![k; r.sizes[leaf]], 0.0).unwrap());
            let scaled = g.marginalize(&init).unwrap();
            prop_assert!((scaled - base - k.ln()).abs() <= 1e-10 * base.abs().max(1.0));
        }
    }

    #[test]
    fn banded_zero_band_matches_low_rank_on_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = 10;
        let u = DenseMatrix::new(l, 4, (0..l * 4).map(|_| rng.random::<f64>()).collect()).unwrap();
        let v = DenseMatrix::new(l, 4, (0..l * 4).map(|_| rng.random::<f64>()).collect()).unwrap();
        let lr = LowRankFactors::row_normalized(u, v).unwrap();
        let zero = DenseMatrix::zeros(l, 5);
        let banded = BandedLowRankFactors::from_band(lr.clone(), zero).unwrap();
        let band = init_band(&lr, 1.0, 2).unwrap();
        let banded_full = BandedLowRankFactors::from_band(lr.clone(), band).unwrap();
        let beta = ScaledVector::new((0..l).map(|_| rng.random::<f64>()).collect(), 0.0).unwrap();
        let a = apply_score(&ScoreMatrix::LowRank(lr), &beta).unwrap();
        let b = apply_score(&ScoreMatrix::BandedLowRank(banded), &beta).unwrap();
        for (x, y) in a.to_linear().iter().zip(b.to_linear()) {
            assert!((x - y).abs() <= 1e-12 * x);
        }
        let dense = ScoreMatrix::BandedLowRank(banded_full.clone()).to_dense().unwrap();
        let c = apply_score(&ScoreMatrix::BandedLowRank(banded_full), &beta).unwrap();
        let d = apply_score(&dense, &beta).unwrap();
        for (x, y) in c.to_linear().iter().zip(d.to_linear()) {
            assert!((x - y).abs() <= 1e-12 * x);
        }
    }
}
