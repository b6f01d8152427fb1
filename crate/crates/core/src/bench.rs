//! Synthetic models, wall-clock timing grids, rank reports and CSV output.

use crate::hmm::{Emission, HmmModel, ObservationSeq};
use crate::hsmm::{FrameSeq, HsmmModel};
use crate::hypergraph::{Backend, ScoreMatrix};
use crate::lowrank::{build_factors, init_orthogonal, FeatureKind, FeatureMap};
use crate::pcfg::{random_lpcfg, PcfgModel};
use crate::numeric::{derive_seed, estimate_rank, DenseMatrix, RANK_THRESHOLD};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::Write;
use std::time::Instant;

/// Default memory budget for dense structures: 8 GiB.
pub const DEFAULT_BUDGET_BYTES: u64 = 8 << 30;

/// Embedding dimension of synthetic models.
pub const SYNTHETIC_EMBED_DIM: usize = 64;

/// Vocabulary size of synthetic HMM and PCFG corpora.
pub const SYNTHETIC_VOCAB: usize = 128;

/// Frame dimension of synthetic HSMM data.
pub const SYNTHETIC_FRAME_DIM: usize = 16;

/// Maximum segment length of synthetic HSMMs.
pub const SYNTHETIC_MAX_DURATION: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Hmm,
    Hsmm,
    Pcfg,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Hmm => "hmm",
            Family::Hsmm => "hsmm",
            Family::Pcfg => "pcfg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hmm" => Some(Family::Hmm),
            "hsmm" => Some(Family::Hsmm),
            "pcfg" => Some(Family::Pcfg),
            _ => None,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Family::Hmm => 1,
            Family::Hsmm => 2,
            Family::Pcfg => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub family: Family,
    /// State counts (nonterminal counts for PCFGs).
    pub l_grid: Vec<usize>,
    /// State-to-rank ratios; the rank is `max(1, L / ratio)`.
    pub ratio_grid: Vec<usize>,
    pub t: usize,
    pub batch: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    pub budget_bytes: u64,
}

impl BenchConfig {
    pub fn new(family: Family, l_grid: Vec<usize>, ratio_grid: Vec<usize>) -> Self {
        Self {
            family,
            l_grid,
            ratio_grid,
            t: 32,
            batch: 8,
            repeats: 3,
            warmup: 1,
            seed: 0,
            budget_bytes: DEFAULT_BUDGET_BYTES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_grid.is_empty() || self.ratio_grid.is_empty() {
            return Err(Error::InvalidParameter("bench grids must be nonempty".into()));
        }
        if self.l_grid.contains(&0) || self.ratio_grid.contains(&0) {
            return Err(Error::InvalidParameter("bench grid entries must be positive".into()));
        }
        if self.repeats < 3 {
            return Err(Error::InvalidParameter(format!(
                "need at least 3 timed repeats, got {}",
                self.repeats
            )));
        }
        if self.warmup < 1 {
            return Err(Error::InvalidParameter("need at least 1 warmup run".into()));
        }
        if self.t == 0 || self.batch == 0 {
            return Err(Error::InvalidParameter("sequence length and batch must be positive".into()));
        }
        if self.family == Family::Pcfg && self.t < 2 {
            return Err(Error::SequenceTooShort { min: 2, got: self.t });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub family: Family,
    pub l: usize,
    pub n: usize,
    pub backend: Backend,
    /// `None` when the cell was skipped for exceeding the byte budget.
    pub seconds_per_batch: Option<f64>,
    pub ll_per_token: Option<f64>,
    pub peak_chart_bytes: u64,
    pub flagged: bool,
}

/// Rank for a state count and state-to-rank ratio.
pub fn rank_for(l: usize, ratio: usize) -> usize {
    (l / ratio).max(1)
}

fn cell_seed(seed: u64, family: Family, l: usize, ratio: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, family.stream()), l as u64), ratio as u64)
}

fn random_stochastic(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let mut data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.5..1.5)).collect();
    for r in data.chunks_mut(cols) {
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
    }
    DenseMatrix::new(rows, cols, data).expect("finite by construction")
}

/// Gaussian embedding rows scaled to unit expected norm.
pub fn random_embeddings(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let s = 1.0 / (dim as f64).sqrt();
    let data = (0..rows * dim)
        .map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    DenseMatrix::new(rows, dim, data).expect("finite by construction")
}

/// Row-normalized `L x L` low-rank transition from random embeddings and an
/// orthogonal feature projection of rank `n`.
pub fn synthetic_transition(l: usize, n: usize, kind: FeatureKind, seed: u64) -> Result<ScoreMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = SYNTHETIC_EMBED_DIM;
    let head = random_embeddings(l, d, &mut rng);
    let tail = random_embeddings(l, d, &mut rng);
    let phi = FeatureMap::new(kind, init_orthogonal(n, d, rng.random()));
    Ok(ScoreMatrix::LowRank(build_factors(&head, &tail, &phi)?))
}

/// Low-rank HMM with random categorical emissions.
pub fn synthetic_hmm(l: usize, n: usize, vocab: usize, seed: u64) -> Result<HmmModel> {
    let transition = synthetic_transition(l, n, FeatureKind::ExpLinear, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let start = random_stochastic(1, l, &mut rng).into_data();
    let emit = random_stochastic(l, vocab, &mut rng);
    HmmModel::new(start, transition, Emission::Categorical(emit))
}

/// Uniformly random token sequences; timing does not depend on their content.
pub fn random_token_batch(batch: usize, t: usize, vocab: usize, seed: u64) -> Vec<ObservationSeq> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch)
        .map(|_| ObservationSeq::Tokens((0..t).map(|_| rng.random_range(0..vocab)).collect()))
        .collect()
}

/// Median wall-clock seconds of `repeats` runs after `warmup` discarded runs.
pub fn time_median<T>(warmup: usize, repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut last = None;
    for _ in 0..warmup {
        last = Some(f()?);
    }
    let mut secs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        let out = f()?;
        secs.push(t0.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
        last = Some(out);
    }
    Ok((median(&mut secs), last.expect("at least one run")))
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// What one cell times: a low-rank model, its dense counterpart built lazily,
/// and the total log-likelihood of the cell's batch under either.
struct Cell<M, D, E> {
    family: Family,
    l: usize,
    n: usize,
    tokens: usize,
    dense_bytes: u64,
    chart_bytes: [u64; 2],
    low_rank: M,
    densify: D,
    eval: E,
}

impl<M, D: FnOnce(&M) -> Result<M>, E: Fn(&M) -> Result<f64>> Cell<M, D, E> {
    /// Dense then low-rank records; dense is skipped and flagged when its
    /// scoring matrix exceeds the byte budget.
    fn run(self, cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
        let record = |backend, timed: Option<(f64, f64)>, bytes, flagged| BenchRecord {
            family: self.family,
            l: self.l,
            n: self.n,
            backend,
            seconds_per_batch: timed.map(|t| t.0),
            ll_per_token: timed.map(|t| t.1 / self.tokens as f64),
            peak_chart_bytes: bytes,
            flagged,
        };
        let mut out = Vec::with_capacity(2);
        if self.dense_bytes > cfg.budget_bytes {
            log::warn!(
                "{} L={}: dense scores need {} bytes, skipping",
                self.family.name(),
                self.l,
                self.dense_bytes
            );
            out.push(record(Backend::Dense, None, self.chart_bytes[0], true));
        } else {
            let dense = (self.densify)(&self.low_rank)?;
            let timed = time_median(cfg.warmup, cfg.repeats, || (self.eval)(&dense))?;
            out.push(record(Backend::Dense, Some(timed), self.chart_bytes[0], false));
        }
        let timed = time_median(cfg.warmup, cfg.repeats, || (self.eval)(&self.low_rank))?;
        out.push(record(Backend::LowRank, Some(timed), self.chart_bytes[1], false));
        Ok(out)
    }
}

fn hmm_cell(cfg: &BenchConfig, l: usize, ratio: usize) -> Result<Vec<BenchRecord>> {
    let n = rank_for(l, ratio);
    let seed = cell_seed(cfg.seed, Family::Hmm, l, ratio);
    let data = random_token_batch(cfg.batch, cfg.t, SYNTHETIC_VOCAB, derive_seed(seed, 2));
    let chart = |rank: usize| (8 * cfg.batch * (2 * l + rank)) as u64;
    Cell {
        family: Family::Hmm,
        l,
        n,
        tokens: cfg.batch * cfg.t,
        dense_bytes: 8 * (l as u64).pow(2),
        chart_bytes: [chart(0), chart(n)],
        low_rank: synthetic_hmm(l, n, SYNTHETIC_VOCAB, seed)?,
        densify: |m: &HmmModel| m.to_dense_with_limit(u128::MAX),
        eval: |m: &HmmModel| Ok(m.log_marginal_batch(&data)?.iter().sum()),
    }
    .run(cfg)
}

/// Low-rank HSMM with random durations and unit-variance Gaussian emissions
/// of dimension [`SYNTHETIC_FRAME_DIM`].
pub fn synthetic_hsmm(l: usize, n: usize, max_duration: usize, seed: u64) -> Result<HsmmModel> {
    let transition = synthetic_transition(l, n, FeatureKind::ExpLinear, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let start = random_stochastic(1, l, &mut rng).into_data();
    let log_lambda = (0..l).map(|_| rng.random_range(0.0..2.0)).collect();
    let means = random_embeddings(l, SYNTHETIC_FRAME_DIM, &mut rng);
    let variances = DenseMatrix::new(l, SYNTHETIC_FRAME_DIM, vec![1.0; l * SYNTHETIC_FRAME_DIM])?;
    HsmmModel::new(start, transition, log_lambda, max_duration, means, variances)
}

/// Standard-normal frame sequences.
pub fn random_frame_batch(batch: usize, t: usize, dim: usize, seed: u64) -> Vec<FrameSeq> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch)
        .map(|_| FrameSeq::new(random_embeddings(t, dim, &mut rng)))
        .collect()
}

fn hsmm_cell(cfg: &BenchConfig, l: usize, ratio: usize) -> Result<Vec<BenchRecord>> {
    let n = rank_for(l, ratio);
    let seed = cell_seed(cfg.seed, Family::Hsmm, l, ratio);
    let m = SYNTHETIC_MAX_DURATION;
    let data = random_frame_batch(cfg.batch, cfg.t, SYNTHETIC_FRAME_DIM, derive_seed(seed, 2));
    let chart = |rank: usize| (8 * ((m + 2) * l + rank + cfg.t * l)) as u64;
    Cell {
        family: Family::Hsmm,
        l,
        n,
        tokens: cfg.batch * cfg.t,
        dense_bytes: 8 * (l as u64).pow(2),
        chart_bytes: [chart(0), chart(n)],
        low_rank: synthetic_hsmm(l, n, m, seed)?,
        densify: |h: &HsmmModel| h.to_dense_with_limit(u128::MAX),
        eval: |h: &HsmmModel| data.iter().map(|x| h.log_marginal(x)).sum(),
    }
    .run(cfg)
}

/// `L` nonterminals, `2L` preterminals; the nonterminal-pair block has rank `n`.
fn pcfg_cell(cfg: &BenchConfig, l: usize, ratio: usize) -> Result<Vec<BenchRecord>> {
    let n = rank_for(l, ratio);
    let seed = cell_seed(cfg.seed, Family::Pcfg, l, ratio);
    let data: Vec<Vec<usize>> = random_token_batch(cfg.batch, cfg.t, SYNTHETIC_VOCAB, derive_seed(seed, 2))
        .into_iter()
        .map(|x| match x {
            ObservationSeq::Tokens(t) => t,
            ObservationSeq::Binary(_) => unreachable!("token batches only"),
        })
        .collect();
    let t = cfg.t;
    let spans = (t * (t + 1) / 2) as u64;
    let joined = (2 * l * 2 * l) as u64;
    let chart = |rank: usize| 8 * (spans * 2 * l as u64 + joined + rank as u64);
    Cell {
        family: Family::Pcfg,
        l,
        n,
        tokens: cfg.batch * cfg.t,
        dense_bytes: 8 * (l as u64).pow(3),
        chart_bytes: [chart(0), chart(n)],
        low_rank: random_lpcfg(l, 2 * l, SYNTHETIC_VOCAB, n, SYNTHETIC_EMBED_DIM, seed)?,
        densify: |g: &PcfgModel| g.to_dense_with_limit(u128::MAX),
        eval: |g: &PcfgModel| data.iter().map(|x| g.log_inside(x)).sum(),
    }
    .run(cfg)
}

/// Runs every `(L, ratio)` cell sequentially. Each cell draws its model and
/// data from a seed derived from `(cfg.seed, family, L, ratio)` alone.
pub fn run_grid(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &l in &cfg.l_grid {
        for &ratio in &cfg.ratio_grid {
            log::info!("{} cell L={l} ratio={ratio}", cfg.family.name());
            let cell = match cfg.family {
                Family::Hmm => hmm_cell(cfg, l, ratio)?,
                Family::Hsmm => hsmm_cell(cfg, l, ratio)?,
                Family::Pcfg => pcfg_cell(cfg, l, ratio)?,
            };
            out.extend(cell);
        }
    }
    Ok(out)
}

/// Dense-over-low-rank time ratio for each `(L, N)` pair where both ran.
pub fn speedups(records: &[BenchRecord]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for d in records.iter().filter(|r| r.backend == Backend::Dense) {
        let lr = records
            .iter()
            .find(|r| r.backend == Backend::LowRank && r.family == d.family && r.l == d.l && r.n == d.n);
        if let (Some(ds), Some(ls)) = (d.seconds_per_batch, lr.and_then(|r| r.seconds_per_batch)) {
            out.push((d.l, d.n, ds / ls));
        }
    }
    out
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

pub const FRONTIER_HEADER: &str = "family,L,N,backend,secs_per_batch,ll_per_token,flagged";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Writes the frontier CSV: header plus one LF-terminated row per record.
/// Skipped cells leave the timing and likelihood fields empty.
pub fn write_frontier_csv(records: &[BenchRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{FRONTIER_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.family.name(),
            r.l,
            r.n,
            r.backend.name(),
            fmt_opt(r.seconds_per_batch),
            fmt_opt(r.ll_per_token),
            r.flagged
        )?;
    }
    Ok(())
}

/// One parsed frontier row. Peak chart bytes are not part of the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierRow {
    pub family: Family,
    pub l: usize,
    pub n: usize,
    pub backend: Backend,
    pub seconds_per_batch: Option<f64>,
    pub ll_per_token: Option<f64>,
    pub flagged: bool,
}

impl From<&BenchRecord> for FrontierRow {
    fn from(r: &BenchRecord) -> Self {
        Self {
            family: r.family,
            l: r.l,
            n: r.n,
            backend: r.backend,
            seconds_per_batch: r.seconds_per_batch,
            ll_per_token: r.ll_per_token,
            flagged: r.flagged,
        }
    }
}

pub fn parse_frontier_csv(text: &str) -> Result<Vec<FrontierRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == FRONTIER_HEADER => {}
        other => {
            return Err(Error::InvalidParameter(format!(
                "bad frontier header {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let bad = |line: usize, what: &str| Error::InvalidParameter(format!("frontier line {line}: bad {what}"));
    let opt = |s: &str, line: usize, what: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(line, what))
        }
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let no = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(no, "field count"));
        }
        out.push(FrontierRow {
            family: Family::parse(f[0]).ok_or_else(|| bad(no, "family"))?,
            l: f[1].parse().map_err(|_| bad(no, "L"))?,
            n: f[2].parse().map_err(|_| bad(no, "N"))?,
            backend: Backend::parse(f[3]).ok_or_else(|| bad(no, "backend"))?,
            seconds_per_batch: opt(f[4], no, "seconds")?,
            ll_per_token: opt(f[5], no, "likelihood")?,
            flagged: f[6].parse().map_err(|_| bad(no, "flag"))?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankRow {
    pub name: String,
    pub states: usize,
    pub transition_rank: usize,
    /// Rank of the emission table when it is dense and categorical.
    pub emission_rank: Option<usize>,
}

/// Estimated ranks of each model's transition (and categorical emission).
pub fn rank_report(models: &[(String, HmmModel)], limit: u128) -> Result<Vec<RankRow>> {
    models
        .iter()
        .map(|(name, m)| {
            let t = m.transition().materialize_with_limit(limit)?;
            let emission_rank = match m.emission() {
                Emission::Categorical(e) => Some(estimate_rank(e, RANK_THRESHOLD)?),
                Emission::Bernoulli(_) => None,
            };
            Ok(RankRow {
                name: name.clone(),
                states: m.states(),
                transition_rank: estimate_rank(&t, RANK_THRESHOLD)?,
                emission_rank,
            })
        })
        .collect()
}

pub const RANK_HEADER: &str = "model,L,transition_rank,emission_rank";

pub fn write_rank_csv(rows: &[RankRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{RANK_HEADER}")?;
    for r in rows {
        let e = r.emission_rank.map(|x| x.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.name, r.states, r.transition_rank, e)?;
    }
    Ok(())
}
