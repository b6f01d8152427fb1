//! Exhaustive-enumeration reference implementations.
//!
//! Everything here works on plain nested `Vec`s in linear probability space and
//! deliberately shares no code with `lrinfer-core`. The functions are exponential
//! in the problem size and only meant for tiny instances inside tests.

/// Direct double-loop matrix-vector product.
pub fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| {
            let mut acc = 0.0;
            for j in 0..v.len() {
                acc += row[j] * v[j];
            }
            acc
        })
        .collect()
}

/// Calls `f` with every tuple in `{0..base}^len`, in lexicographic order.
pub fn for_each_tuple(base: usize, len: usize, mut f: impl FnMut(&[usize])) {
    if base == 0 && len > 0 {
        return;
    }
    let mut idx = vec![0usize; len];
    loop {
        f(&idx);
        let mut pos = len;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < base {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Joint probability of one HMM state path and observation string.
pub fn hmm_joint(
    start: &[f64],
    trans: &[Vec<f64>],
    emit: &[Vec<f64>],
    path: &[usize],
    x: &[usize],
) -> f64 {
    let mut p = start[path[0]] * emit[path[0]][x[0]];
    for t in 1..x.len() {
        p *= trans[path[t - 1]][path[t]] * emit[path[t]][x[t]];
    }
    p
}

/// `ln p(x)` by summing over all `L^T` state paths.
pub fn hmm_log_marginal(start: &[f64], trans: &[Vec<f64>], emit: &[Vec<f64>], x: &[usize]) -> f64 {
    let mut total = 0.0;
    for_each_tuple(start.len(), x.len(), |path| {
        total += hmm_joint(start, trans, emit, path, x);
    });
    total.ln()
}

/// `p(z_t | x)` by path enumeration, as a `T x L` table.
pub fn hmm_posteriors(
    start: &[f64],
    trans: &[Vec<f64>],
    emit: &[Vec<f64>],
    x: &[usize],
) -> Vec<Vec<f64>> {
    let l = start.len();
    let mut table = vec![vec![0.0; l]; x.len()];
    let mut total = 0.0;
    for_each_tuple(l, x.len(), |path| {
        let p = hmm_joint(start, trans, emit, path, x);
        total += p;
        for (t, &z) in path.iter().enumerate() {
            table[t][z] += p;
        }
    });
    for row in &mut table {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    table
}

/// Highest-probability path by enumeration. Among equal scores the
/// lexicographically first path wins.
pub fn hmm_viterbi(
    start: &[f64],
    trans: &[Vec<f64>],
    emit: &[Vec<f64>],
    x: &[usize],
) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for_each_tuple(start.len(), x.len(), |path| {
        let lp = hmm_joint(start, trans, emit, path, x).ln();
        if lp > best.1 {
            best = (path.to_vec(), lp);
        }
    });
    best
}

/// One hyperedge for [`hypergraph_log_total`]; `score[z_head][column]` with
/// tail pairs flattened as `z1 * L2 + z2`.
pub struct OracleEdge {
    pub head: usize,
    pub tails: Vec<usize>,
    pub score: Vec<Vec<f64>>,
}

/// Log of the total score at `root`, by recursive expansion of every
/// derivation with no shared intermediate tables.
///
/// `leaf[v]` overrides the all-ones vector at a node with no incoming edges.
pub fn hypergraph_log_total(
    sizes: &[usize],
    edges: &[OracleEdge],
    leaf: &[Option<Vec<f64>>],
    root: usize,
) -> f64 {
    fn value(
        v: usize,
        z: usize,
        sizes: &[usize],
        edges: &[OracleEdge],
        leaf: &[Option<Vec<f64>>],
    ) -> f64 {
        let incoming: Vec<&OracleEdge> = edges.iter().filter(|e| e.head == v).collect();
        if incoming.is_empty() {
            return leaf[v].as_ref().map_or(1.0, |x| x[z]);
        }
        let mut total = 0.0;
        for e in incoming {
            let tail_sizes: Vec<usize> = e.tails.iter().map(|&t| sizes[t]).collect();
            let cols: usize = tail_sizes.iter().product();
            for col in 0..cols {
                let labels: Vec<usize> = if tail_sizes.len() == 1 {
                    vec![col]
                } else {
                    vec![col / tail_sizes[1], col % tail_sizes[1]]
                };
                let mut p = e.score[z][col];
                for (&t, &zt) in e.tails.iter().zip(&labels) {
                    p *= value(t, zt, sizes, edges, leaf);
                }
                total += p;
            }
        }
        total
    }
    let total: f64 = (0..sizes[root]).map(|z| value(root, z, sizes, edges, leaf)).sum();
    total.ln()
}

/// All ordered compositions of `total` into positive parts no larger than `max_part`.
pub fn compositions(total: usize, max_part: usize) -> Vec<Vec<usize>> {
    fn rec(rem: usize, max_part: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rem == 0 {
            out.push(cur.clone());
            return;
        }
        for l in 1..=max_part.min(rem) {
            cur.push(l);
            rec(rem - l, max_part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(total, max_part, &mut Vec::new(), &mut out);
    out
}

/// `ln p(x)` for a hidden semi-Markov model by enumerating every segmentation
/// of the `T` frames and every state sequence over its segments.
///
/// `duration[z][l - 1]` is `p(l | z)`; `frame_log_density[t][z]` is `ln p(x_t | z)`.
pub fn hsmm_log_marginal(
    start: &[f64],
    trans: &[Vec<f64>],
    duration: &[Vec<f64>],
    frame_log_density: &[Vec<f64>],
) -> f64 {
    let t_len = frame_log_density.len();
    let l = start.len();
    let m = duration[0].len();
    let mut total = 0.0;
    for seg in compositions(t_len, m) {
        for_each_tuple(l, seg.len(), |states| {
            let mut p = 1.0;
            let mut t = 0;
            for (k, (&z, &len)) in states.iter().zip(&seg).enumerate() {
                p *= if k == 0 { start[z] } else { trans[states[k - 1]][z] };
                p *= duration[z][len - 1];
                for frame in &frame_log_density[t..t + len] {
                    p *= frame[z].exp();
                }
                t += len;
            }
            total += p;
        });
    }
    total.ln()
}

/// Unlabeled binary bracketing over a span of leaves.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Leaf(usize),
    Node(usize, usize, Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn internal_count(&self) -> usize {
        match self {
            Shape::Leaf(_) => 0,
            Shape::Node(_, _, l, r) => 1 + l.internal_count() + r.internal_count(),
        }
    }
}

/// Every binary bracketing of `[i, k)`, smaller split points first.
pub fn shapes(i: usize, k: usize) -> Vec<Shape> {
    if k == i + 1 {
        return vec![Shape::Leaf(i)];
    }
    let mut out = Vec::new();
    for j in i + 1..k {
        for left in shapes(i, j) {
            for right in shapes(j, k) {
                out.push(Shape::Node(i, k, Box::new(left.clone()), Box::new(right)));
            }
        }
    }
    out
}

/// A CNF grammar over a unified symbol space: nonterminals are `0..n_nt`,
/// preterminal `d` is symbol `n_nt + d`.
pub struct Grammar {
    pub n_nt: usize,
    pub n_pt: usize,
    /// `start[a]` for nonterminal `a`.
    pub start: Vec<f64>,
    /// `rule[a][b][c] = p(b c | a)` over unified symbols.
    pub rule: Vec<Vec<Vec<f64>>>,
    /// `terminal[d][x] = p(x | d)` for preterminal `d`.
    pub terminal: Vec<Vec<f64>>,
}

/// A labeled tree node in preorder: `(start, end, unified symbol)`.
pub type LabeledSpan = (usize, usize, usize);

fn tree_prob(
    g: &Grammar,
    shape: &Shape,
    nt_labels: &[usize],
    pt_labels: &[usize],
    words: &[usize],
    next_nt: &mut usize,
    spans: &mut Vec<LabeledSpan>,
) -> (f64, usize) {
    match shape {
        Shape::Leaf(i) => {
            let d = pt_labels[*i];
            spans.push((*i, i + 1, g.n_nt + d));
            (g.terminal[d][words[*i]], g.n_nt + d)
        }
        Shape::Node(i, k, left, right) => {
            let a = nt_labels[*next_nt];
            *next_nt += 1;
            spans.push((*i, *k, a));
            let (pl, b) = tree_prob(g, left, nt_labels, pt_labels, words, next_nt, spans);
            let (pr, c) = tree_prob(g, right, nt_labels, pt_labels, words, next_nt, spans);
            (g.rule[a][b][c] * pl * pr, a)
        }
    }
}

/// Visits every labeled tree with its probability (including the start rule)
/// and its preorder span list.
pub fn for_each_tree(g: &Grammar, words: &[usize], mut f: impl FnMut(f64, &[LabeledSpan])) {
    let t = words.len();
    for shape in shapes(0, t) {
        let internal = shape.internal_count();
        for_each_tuple(g.n_nt, internal, |nt| {
            for_each_tuple(g.n_pt, t, |pt| {
                let mut spans = Vec::new();
                let mut next = 0;
                let (p, root) = tree_prob(g, &shape, nt, pt, words, &mut next, &mut spans);
                f(g.start[root] * p, &spans);
            });
        });
    }
}

/// `ln p(words)` summed over all labeled binary trees.
pub fn pcfg_log_inside(g: &Grammar, words: &[usize]) -> f64 {
    let mut total = 0.0;
    for_each_tree(g, words, |p, _| total += p);
    total.ln()
}

/// Best labeled tree by enumeration; the first tree in enumeration order
/// wins ties.
pub fn pcfg_best_tree(g: &Grammar, words: &[usize]) -> (Vec<LabeledSpan>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for_each_tree(g, words, |p, spans| {
        let lp = p.ln();
        if lp > best.1 {
            best = (spans.to_vec(), lp);
        }
    });
    best
}

/// Number of binary trees with `n` leaves.
pub fn catalan(n: usize) -> usize {
    shapes(0, n).len()
}
