//! Chomsky-normal-form PCFGs: inside (CKY) marginalization over any score
//! backend for the nonterminal-to-nonterminal rules, and dense max-product
//! parsing.
//!
//! Spans of width 1 carry preterminal charts of size `nP`; wider spans carry
//! nonterminal charts of size `nN`. A binary rule `A -> B C` lives in one of
//! four blocks chosen by whether each child span has width 1:
//!
//! | block | left child | right child | columns |
//! |-------|------------|-------------|---------|
//! | `nn`  | nonterminal | nonterminal | `b * nN + c` |
//! | `np`  | nonterminal | preterminal | `b * nP + d` |
//! | `pn`  | preterminal | nonterminal | `d * nN + c` |
//! | `pp`  | preterminal | preterminal | `d * nP + e` |
//!
//! The four blocks are normalized jointly: for each head, the row sums of all
//! four add to one.

use crate::hypergraph::{Hypergraph, HypergraphBuilder, NodeId, ScoreMatrix};
use crate::lowrank::{
    init_orthogonal, FeatureKind, FeatureMap, LowRankFactors, NormalizerSide,
    DEFAULT_MATERIALIZE_LIMIT, FEATURE_EXP_CLAMP,
};
use crate::numeric::{dot, logsumexp, DenseMatrix, ScaledVector};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Tolerance on the joint rule normalization per head.
pub const RULE_TOL: f64 = 1e-9;
/// Tolerance on start and terminal distributions.
pub const DIST_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Nonterminal(usize),
    Preterminal(usize),
}

/// One node of a parse tree, listed in preorder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParseNode {
    pub start: usize,
    pub end: usize,
    pub label: Symbol,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parse {
    pub nodes: Vec<ParseNode>,
    pub log_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcfgModel {
    n_nt: usize,
    n_pt: usize,
    start: Vec<f64>,
    nn: Arc<ScoreMatrix>,
    np: Arc<ScoreMatrix>,
    pn: Arc<ScoreMatrix>,
    pp: Arc<ScoreMatrix>,
    terminal: DenseMatrix,
}

fn check_dims(context: &'static str, m: &DenseMatrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::Shape {
            context,
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    if !m.is_nonnegative() {
        return Err(Error::Negative(context));
    }
    Ok(())
}

impl PcfgModel {
    pub fn new(
        start: Vec<f64>,
        nn: ScoreMatrix,
        np: DenseMatrix,
        pn: DenseMatrix,
        pp: DenseMatrix,
        terminal: DenseMatrix,
    ) -> Result<Self> {
        let n_nt = start.len();
        let n_pt = terminal.rows();
        if n_nt == 0 {
            return Err(Error::Empty("nonterminal set"));
        }
        if n_pt == 0 {
            return Err(Error::Empty("preterminal set"));
        }
        if terminal.cols() == 0 {
            return Err(Error::Empty("vocabulary"));
        }
        if start.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Negative("start distribution"));
        }
        let sum: f64 = start.iter().sum();
        if (sum - 1.0).abs() > DIST_TOL {
            return Err(Error::NotNormalized {
                what: "start distribution",
                row: 0,
                sum,
            });
        }
        if nn.rows() != n_nt || nn.cols() != n_nt * n_nt {
            return Err(Error::Shape {
                context: "nonterminal-pair rule block",
                expected: format!("{n_nt}x{}", n_nt * n_nt),
                got: format!("{}x{}", nn.rows(), nn.cols()),
            });
        }
        if let ScoreMatrix::Dense(m) = &nn {
            if !m.is_nonnegative() {
                return Err(Error::Negative("nonterminal-pair rule block"));
            }
        }
        check_dims("nonterminal-preterminal rule block", &np, n_nt, n_nt * n_pt)?;
        check_dims("preterminal-nonterminal rule block", &pn, n_nt, n_pt * n_nt)?;
        check_dims("preterminal-pair rule block", &pp, n_nt, n_pt * n_pt)?;
        let mut sums = nn.apply(&vec![1.0; nn.cols()])?;
        for block in [&np, &pn, &pp] {
            for (s, r) in sums.iter_mut().zip(block.row_sums()) {
                *s += r;
            }
        }
        for (row, sum) in sums.into_iter().enumerate() {
            if sum.is_nan() || (sum - 1.0).abs() > RULE_TOL {
                return Err(Error::NotNormalized {
                    what: "binary rules",
                    row,
                    sum,
                });
            }
        }
        terminal.check_row_stochastic("terminal emissions", DIST_TOL)?;
        Ok(Self {
            n_nt,
            n_pt,
            start,
            nn: Arc::new(nn),
            np: Arc::new(ScoreMatrix::Dense(np)),
            pn: Arc::new(ScoreMatrix::Dense(pn)),
            pp: Arc::new(ScoreMatrix::Dense(pp)),
            terminal,
        })
    }

    pub fn nonterminals(&self) -> usize {
        self.n_nt
    }

    pub fn preterminals(&self) -> usize {
        self.n_pt
    }

    pub fn vocab(&self) -> usize {
        self.terminal.cols()
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn nn(&self) -> &ScoreMatrix {
        &self.nn
    }

    fn dense_block(m: &ScoreMatrix) -> &DenseMatrix {
        match m {
            ScoreMatrix::Dense(d) => d,
            _ => unreachable!("side blocks are always dense"),
        }
    }

    pub fn np(&self) -> &DenseMatrix {
        Self::dense_block(&self.np)
    }

    pub fn pn(&self) -> &DenseMatrix {
        Self::dense_block(&self.pn)
    }

    pub fn pp(&self) -> &DenseMatrix {
        Self::dense_block(&self.pp)
    }

    pub fn terminal(&self) -> &DenseMatrix {
        &self.terminal
    }

    /// Same grammar with another encoding of the nonterminal-pair block.
    pub fn with_nn(&self, nn: ScoreMatrix) -> Result<Self> {
        Self::new(
            self.start.clone(),
            nn,
            self.np().clone(),
            self.pn().clone(),
            self.pp().clone(),
            self.terminal.clone(),
        )
    }

    pub fn to_dense(&self) -> Result<Self> {
        self.to_dense_with_limit(DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn to_dense_with_limit(&self, limit: u128) -> Result<Self> {
        let dense = self.nn.materialize_with_limit(limit)?;
        self.with_nn(ScoreMatrix::Dense(dense))
    }

    /// Full rule table `nN x S^2` over unified symbols (`S = nN + nP`,
    /// preterminal `d` is symbol `nN + d`), column `b * S + c`.
    pub fn materialize_rules(&self) -> Result<DenseMatrix> {
        self.materialize_rules_with_limit(DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn materialize_rules_with_limit(&self, limit: u128) -> Result<DenseMatrix> {
        let (n, p) = (self.n_nt, self.n_pt);
        let s = n + p;
        crate::lowrank::size_guard(n, s * s, limit)?;
        let nn = self.nn.materialize_with_limit(limit)?;
        let mut out = DenseMatrix::zeros(n, s * s);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    out.set(a, b * s + c, nn.get(a, b * n + c));
                }
                for d in 0..p {
                    out.set(a, b * s + n + d, self.np().get(a, b * p + d));
                    out.set(a, (n + d) * s + b, self.pn().get(a, d * n + b));
                }
            }
            for d in 0..p {
                for e in 0..p {
                    out.set(a, (n + d) * s + n + e, self.pp().get(a, d * p + e));
                }
            }
        }
        Ok(out)
    }

    fn validate(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() < 2 {
            return Err(Error::SequenceTooShort {
                min: 2,
                got: tokens.len(),
            });
        }
        if let Some((position, &token)) = tokens.iter().enumerate().find(|(_, &x)| x >= self.vocab()) {
            return Err(Error::TokenOutOfRange {
                token,
                position,
                vocab: self.vocab(),
            });
        }
        Ok(())
    }

    fn block(&self, left_width: usize, right_width: usize) -> &ScoreMatrix {
        match (left_width == 1, right_width == 1) {
            (false, false) => &self.nn,
            (false, true) => &self.np,
            (true, false) => &self.pn,
            (true, true) => &self.pp,
        }
    }

    fn leaf_chart(&self, x: usize) -> ScaledVector {
        let col = (0..self.n_pt).map(|d| self.terminal.get(d, x)).collect();
        let mut v = ScaledVector::from_raw(col, 0.0);
        v.renormalize();
        v
    }

    /// `ln p(tokens)` summed over all parse trees.
    pub fn log_inside(&self, tokens: &[usize]) -> Result<f64> {
        self.inside_with_order(tokens, &|_| {})
    }

    /// Inside pass that lets `order` permute the split points of each span
    /// before they are accumulated.
    pub(crate) fn inside_with_order(&self, tokens: &[usize], order: &dyn Fn(&mut [usize])) -> Result<f64> {
        self.validate(tokens)?;
        let t_len = tokens.len();
        let idx = |i: usize, k: usize| i * (t_len + 1) + k;
        let mut chart: Vec<Option<ScaledVector>> = vec![None; (t_len + 1) * (t_len + 1)];
        for (i, &x) in tokens.iter().enumerate() {
            chart[idx(i, i + 1)] = Some(self.leaf_chart(x));
        }
        let s = self.n_nt.max(self.n_pt);
        let mut joined = vec![0.0; s * s];
        let mut scratch = vec![0.0; self.nn.scratch_len()];
        let mut splits = Vec::with_capacity(t_len);
        for w in 2..=t_len {
            for i in 0..=t_len - w {
                let k = i + w;
                splits.clear();
                splits.extend(i + 1..k);
                order(&mut splits);
                let mut acc = ScaledVector::zeros(self.n_nt);
                for &j in &splits {
                    let left = chart[idx(i, j)].as_ref().expect("narrower spans are complete");
                    let right = chart[idx(j, k)].as_ref().expect("narrower spans are complete");
                    if left.is_zero() || right.is_zero() {
                        continue;
                    }
                    let block = self.block(j - i, k - j);
                    let cols = left.len() * right.len();
                    for (row, &a) in joined[..cols].chunks_exact_mut(right.len()).zip(left.values()) {
                        for (o, &b) in row.iter_mut().zip(right.values()) {
                            *o = a * b;
                        }
                    }
                    let mut out = vec![0.0; self.n_nt];
                    block.apply_into(&joined[..cols], &mut scratch, &mut out);
                    acc.add_assign(&ScaledVector::from_raw(out, left.log_scale() + right.log_scale()))?;
                }
                acc.renormalize();
                chart[idx(i, k)] = Some(acc);
            }
        }
        let root = chart[idx(0, t_len)].as_ref().expect("full span computed");
        let p = dot(&self.start, root.values());
        Ok(if p == 0.0 {
            f64::NEG_INFINITY
        } else {
            p.ln() + root.log_scale()
        })
    }

    /// Highest-scoring parse under the dense rule table.
    ///
    /// Ties go to the smaller split point, then to smaller left and right
    /// child labels, then to the smaller root label.
    pub fn map_parse(&self, tokens: &[usize]) -> Result<Parse> {
        self.map_parse_with_limit(tokens, DEFAULT_MATERIALIZE_LIMIT)
    }

    pub fn map_parse_with_limit(&self, tokens: &[usize], limit: u128) -> Result<Parse> {
        self.validate(tokens)?;
        let nn = self.nn.materialize_with_limit(limit)?;
        let ln = |m: &DenseMatrix| DenseMatrix::from_parts_unchecked(m.rows(), m.cols(), m.data().iter().map(|v| v.ln()).collect());
        let blocks = [ln(&nn), ln(self.np()), ln(self.pn()), ln(self.pp())];
        let block_of = |lw: usize, rw: usize| match (lw == 1, rw == 1) {
            (false, false) => 0,
            (false, true) => 1,
            (true, false) => 2,
            (true, true) => 3,
        };
        let t_len = tokens.len();
        let idx = |i: usize, k: usize| i * (t_len + 1) + k;
        let mut best: Vec<Vec<f64>> = vec![Vec::new(); (t_len + 1) * (t_len + 1)];
        // Backpointer per (span, head): (split, left label, right label).
        let mut back: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); (t_len + 1) * (t_len + 1)];
        for (i, &x) in tokens.iter().enumerate() {
            best[idx(i, i + 1)] = (0..self.n_pt).map(|d| self.terminal.get(d, x).ln()).collect();
        }
        for w in 2..=t_len {
            for i in 0..=t_len - w {
                let k = i + w;
                let mut score = vec![f64::NEG_INFINITY; self.n_nt];
                let mut bp = vec![(i + 1, 0, 0); self.n_nt];
                for j in i + 1..k {
                    let block = &blocks[block_of(j - i, k - j)];
                    let (left, right) = (&best[idx(i, j)], &best[idx(j, k)]);
                    let rn = right.len();
                    for (b, &lb) in left.iter().enumerate() {
                        if lb == f64::NEG_INFINITY {
                            continue;
                        }
                        for (c, &rc) in right.iter().enumerate() {
                            if rc == f64::NEG_INFINITY {
                                continue;
                            }
                            let col = b * rn + c;
                            for a in 0..self.n_nt {
                                let v = block.get(a, col) + lb + rc;
                                if v > score[a] {
                                    score[a] = v;
                                    bp[a] = (j, b, c);
                                }
                            }
                        }
                    }
                }
                best[idx(i, k)] = score;
                back[idx(i, k)] = bp;
            }
        }
        let mut root = 0;
        let mut log_score = f64::NEG_INFINITY;
        for (a, &v) in best[idx(0, t_len)].iter().enumerate() {
            let s = self.start[a].ln() + v;
            if s > log_score {
                log_score = s;
                root = a;
            }
        }
        let mut nodes = Vec::with_capacity(2 * t_len - 1);
        let mut stack = vec![(0, t_len, root)];
        while let Some((i, k, a)) = stack.pop() {
            if k == i + 1 {
                nodes.push(ParseNode {
                    start: i,
                    end: k,
                    label: Symbol::Preterminal(a),
                });
                continue;
            }
            nodes.push(ParseNode {
                start: i,
                end: k,
                label: Symbol::Nonterminal(a),
            });
            let (j, b, c) = back[idx(i, k)][a];
            stack.push((j, k, c));
            stack.push((i, j, b));
        }
        Ok(Parse { nodes, log_score })
    }

    /// The sentence laid out as a hypergraph with one node per span plus a
    /// one-label root carrying the start distribution.
    pub fn to_hypergraph(&self, tokens: &[usize]) -> Result<(Hypergraph, BTreeMap<NodeId, ScaledVector>)> {
        self.validate(tokens)?;
        let t_len = tokens.len();
        let mut b = HypergraphBuilder::new();
        let mut node = BTreeMap::new();
        let mut init = BTreeMap::new();
        for (i, &x) in tokens.iter().enumerate() {
            let v = b.add_node(self.n_pt);
            node.insert((i, i + 1), v);
            init.insert(v, self.leaf_chart(x));
        }
        for w in 2..=t_len {
            for i in 0..=t_len - w {
                node.insert((i, i + w), b.add_node(self.n_nt));
            }
        }
        for w in 2..=t_len {
            for i in 0..=t_len - w {
                let k = i + w;
                for j in i + 1..k {
                    let score = match (j - i == 1, k - j == 1) {
                        (false, false) => &self.nn,
                        (false, true) => &self.np,
                        (true, false) => &self.pn,
                        (true, true) => &self.pp,
                    };
                    b.add_edge(node[&(i, k)], &[node[&(i, j)], node[&(j, k)]], Arc::clone(score))?;
                }
            }
        }
        let root = b.add_node(1);
        let start = DenseMatrix::new(1, self.n_nt, self.start.clone())?;
        b.add_edge(root, &[node[&(0, t_len)]], Arc::new(ScoreMatrix::Dense(start)))?;
        Ok((b.build(root)?, init))
    }
}

/// Embeddings for a grammar whose nonterminal-pair rules are scored by a
/// positive feature map and all other distributions by `exp` of dot products.
#[derive(Clone, Debug, PartialEq)]
pub struct LpcfgEmbeddings {
    /// Start symbol as a head, `D`.
    pub root: Vec<f64>,
    /// Nonterminals as heads of the dense blocks and as start targets, `nN x D`.
    pub nonterminal: DenseMatrix,
    /// Nonterminals as heads of the feature-mapped block, `nN x D`.
    pub nonterminal_feature: DenseMatrix,
    /// Preterminals as heads of terminal rules, `nP x D`.
    pub preterminal: DenseMatrix,
    /// Vocabulary as terminal tails, `V x D`.
    pub vocab: DenseMatrix,
    /// Tail-pair embeddings per block, rows ordered as the block columns.
    pub nn_tail: DenseMatrix,
    pub np_tail: DenseMatrix,
    pub pn_tail: DenseMatrix,
    pub pp_tail: DenseMatrix,
}

fn softmax_rows(heads: &DenseMatrix, tails: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(heads.rows(), tails.rows());
    let mut logits = vec![0.0; tails.rows()];
    for h in 0..heads.rows() {
        for (t, l) in logits.iter_mut().enumerate() {
            *l = dot(heads.row(h), tails.row(t));
        }
        let z = logsumexp(&logits)?;
        for (o, l) in out.row_mut(h).iter_mut().zip(&logits) {
            *o = (l - z).exp();
        }
    }
    Ok(out)
}

fn exp_scores(heads: &DenseMatrix, tails: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(heads.rows(), tails.rows());
    for h in 0..heads.rows() {
        for t in 0..tails.rows() {
            out.set(h, t, dot(heads.row(h), tails.row(t)).min(FEATURE_EXP_CLAMP).exp());
        }
    }
    out
}

/// Builds a grammar whose nonterminal-pair block is
/// `diag(c) phi(U') phi(V_pairs)^T` and whose other three blocks are
/// `exp(u^T v)` scores, with `c` and the dense blocks divided by one joint
/// per-head normalizer.
pub fn build_lpcfg(e: &LpcfgEmbeddings, phi: &FeatureMap) -> Result<PcfgModel> {
    let n = e.nonterminal.rows();
    let p = e.preterminal.rows();
    let d = phi.input_dim();
    let shapes = [
        ("nonterminal embeddings", &e.nonterminal, n),
        ("nonterminal feature embeddings", &e.nonterminal_feature, n),
        ("nonterminal-pair tail embeddings", &e.nn_tail, n * n),
        ("nonterminal-preterminal tail embeddings", &e.np_tail, n * p),
        ("preterminal-nonterminal tail embeddings", &e.pn_tail, p * n),
        ("preterminal-pair tail embeddings", &e.pp_tail, p * p),
    ];
    for (context, m, rows) in shapes {
        if m.rows() != rows || m.cols() != d {
            return Err(Error::Shape {
                context,
                expected: format!("{rows}x{d}"),
                got: format!("{}x{}", m.rows(), m.cols()),
            });
        }
    }
    if e.root.len() != d || e.preterminal.cols() != d || e.vocab.cols() != d {
        return Err(Error::Shape {
            context: "root, preterminal and vocabulary embeddings",
            expected: format!("dimension {d}"),
            got: format!("{}, {}, {}", e.root.len(), e.preterminal.cols(), e.vocab.cols()),
        });
    }
    let u = phi.apply_rows(&e.nonterminal_feature)?;
    let v = phi.apply_rows(&e.nn_tail)?;
    let raw = LowRankFactors::from_raw(u.clone(), v.clone())?;
    let mut mass = raw.unnormalized_row_mass();
    let mut np = exp_scores(&e.nonterminal, &e.np_tail);
    let mut pn = exp_scores(&e.nonterminal, &e.pn_tail);
    let mut pp = exp_scores(&e.nonterminal, &e.pp_tail);
    for block in [&np, &pn, &pp] {
        for (m, r) in mass.iter_mut().zip(block.row_sums()) {
            *m += r;
        }
    }
    let mut c = Vec::with_capacity(n);
    for (row, &m) in mass.iter().enumerate() {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::ZeroNormalizer(row));
        }
        c.push(1.0 / m);
    }
    for block in [&mut np, &mut pn, &mut pp] {
        for (a, &ca) in c.iter().enumerate() {
            block.row_mut(a).iter_mut().for_each(|x| *x *= ca);
        }
    }
    let nn = LowRankFactors::from_parts(u, v, c, NormalizerSide::Head)?;
    let root = DenseMatrix::new(1, d, e.root.clone())?;
    let start = softmax_rows(&root, &e.nonterminal)?.into_data();
    let terminal = softmax_rows(&e.preterminal, &e.vocab)?;
    PcfgModel::new(start, ScoreMatrix::LowRank(nn), np, pn, pp, terminal)
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    DenseMatrix::from_parts_unchecked(rows, cols, data)
}

/// A random low-rank grammar from Gaussian embeddings of dimension `dim` and
/// an orthogonal feature projection of rank `rank`.
pub fn random_lpcfg(n_nt: usize, n_pt: usize, vocab: usize, rank: usize, dim: usize, seed: u64) -> Result<PcfgModel> {
    if n_nt == 0 || n_pt == 0 || vocab == 0 || rank == 0 || dim == 0 {
        return Err(Error::InvalidParameter("grammar sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 / (dim as f64).sqrt();
    let e = LpcfgEmbeddings {
        root: gaussian_matrix(1, dim, s, &mut rng).into_data(),
        nonterminal: gaussian_matrix(n_nt, dim, s, &mut rng),
        nonterminal_feature: gaussian_matrix(n_nt, dim, s, &mut rng),
        preterminal: gaussian_matrix(n_pt, dim, s, &mut rng),
        vocab: gaussian_matrix(vocab, dim, s, &mut rng),
        nn_tail: gaussian_matrix(n_nt * n_nt, dim, s, &mut rng),
        np_tail: gaussian_matrix(n_nt * n_pt, dim, s, &mut rng),
        pn_tail: gaussian_matrix(n_pt * n_nt, dim, s, &mut rng),
        pp_tail: gaussian_matrix(n_pt * n_pt, dim, s, &mut rng),
    };
    let projection = init_orthogonal(rank, dim, crate::numeric::derive_seed(seed, 1));
    build_lpcfg(&e, &FeatureMap::new(FeatureKind::ExpLinearMinusHalfNormSq, projection))
}
