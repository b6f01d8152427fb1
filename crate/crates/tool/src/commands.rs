//! Argument definitions and subcommand implementations. Every command writes
//! its primary output to the supplied writer so runs can be captured.

use crate::corpus::{self, Line};
use crate::modelfile::{self, Model};
use crate::{CliError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lrinfer_core::bench::{
    rank_report, run_grid, speedups, synthetic_hmm, synthetic_hsmm, write_frontier_csv, write_rank_csv, BenchConfig,
    Family, RankRow, DEFAULT_BUDGET_BYTES,
};
use lrinfer_core::hmm::{em_fit, expressivity_report, three_state_rank_two_model, HmmModel, ObservationSeq};
use lrinfer_core::hsmm::FrameSeq;
use lrinfer_core::hypergraph::ScoreMatrix;
use lrinfer_core::lowrank::{init_band, BandedLowRankFactors, DEFAULT_BAND_MASS_RATIO, DEFAULT_MATERIALIZE_LIMIT};
use lrinfer_core::numeric::{derive_seed, estimate_rank, DenseMatrix, RANK_THRESHOLD};
use lrinfer_core::pcfg::random_lpcfg;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "lrinfer", version, about = "Exact inference for HMMs, HSMMs and PCFGs with low-rank scoring matrices")]
pub struct Cli {
    /// Worker threads for per-sequence inference.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Log-likelihood of every sequence in a corpus, then the total.
    Marginal(MarginalArgs),
    /// Fit a dense categorical HMM with EM.
    Fit(FitArgs),
    /// Time dense against low-rank inference over a grid and write CSV.
    Bench(BenchArgs),
    /// Estimated ranks of saved models' scoring matrices.
    Rank(RankArgs),
    /// The three-state rank-two HMM and the best two-state EM fit to its marginal.
    Expressivity(ExpressivityArgs),
    /// Write a random model file.
    Synth(SynthArgs),
    /// Write the three-state rank-two HMM as a model file.
    Fixture(FixtureArgs),
    /// Draw sequences from a model.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
pub struct MarginalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Token file, or for HSMMs a directory of CSV frame files.
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub states: usize,
    /// Vocabulary size; defaults to one past the largest token.
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FamilyArg {
    Hmm,
    Hsmm,
    Pcfg,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Hmm => Family::Hmm,
            FamilyArg::Hsmm => Family::Hsmm,
            FamilyArg::Pcfg => Family::Pcfg,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BackendArg {
    Dense,
    Lowrank,
    Banded,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// State counts (nonterminal counts for PCFGs).
    #[arg(long = "L", value_delimiter = ',', required = true)]
    pub l: Vec<usize>,
    /// State-to-rank ratios.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ratio: Vec<usize>,
    #[arg(long = "T", default_value_t = 32)]
    pub t: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BUDGET_BYTES)]
    pub budget_bytes: u64,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Largest matrix, in entries, that may be materialized.
    #[arg(long, default_value_t = DEFAULT_MATERIALIZE_LIMIT as u64)]
    pub limit: u64,
}

#[derive(Args, Debug)]
pub struct ExpressivityArgs {
    #[arg(long, default_value_t = 32)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value = "lowrank")]
    pub backend: BackendArg,
    /// State count (nonterminal count for PCFGs).
    #[arg(long = "L")]
    pub l: usize,
    /// Rank; defaults to a quarter of `L`.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub vocab: usize,
    /// Maximum segment length (HSMM).
    #[arg(long, default_value_t = 4)]
    pub max_duration: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "T")]
    pub t: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    /// Directory for HSMM frame files; HMM samples go to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if cli.threads == 0 {
        return Err(CliError::runtime("--threads must be at least 1"));
    }
    match &cli.command {
        Command::Marginal(a) => marginal(a, cli.threads, out),
        Command::Fit(a) => fit(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Rank(a) => rank(a, out),
        Command::Expressivity(a) => expressivity(a, out),
        Command::Synth(a) => synth(a),
        Command::Fixture(a) => modelfile::save(&a.out, &Model::Hmm(three_state_rank_two_model())),
        Command::Sample(a) => sample(a, out),
    }
}

/// Applies `f` to every item on `threads` workers, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

fn check_hmm_line(m: &HmmModel, l: &Line<ObservationSeq>) -> Result<()> {
    match &l.data {
        ObservationSeq::Tokens(x) => {
            if let Some(&bad) = x.iter().find(|&&t| t >= m.symbols()) {
                return Err(CliError::dimension(format!(
                    "line {}: token {bad} out of range for vocabulary {}",
                    l.line,
                    m.symbols()
                )));
            }
        }
        ObservationSeq::Binary(x) => {
            if let Some(f) = x.iter().find(|f| f.len() != m.symbols()) {
                return Err(CliError::dimension(format!(
                    "line {}: frame has {} bits, model expects {}",
                    l.line,
                    f.len(),
                    m.symbols()
                )));
            }
        }
    }
    Ok(())
}

fn hmm_corpus(m: &HmmModel, path: &Path) -> Result<Vec<Line<ObservationSeq>>> {
    let text = corpus::read_text(path)?;
    let lines: Vec<Line<ObservationSeq>> = match m.emission() {
        lrinfer_core::hmm::Emission::Categorical(_) => corpus::parse_tokens(&text)?
            .into_iter()
            .map(|l| Line { line: l.line, data: ObservationSeq::Tokens(l.data) })
            .collect(),
        lrinfer_core::hmm::Emission::Bernoulli(_) => corpus::parse_binary(&text)?
            .into_iter()
            .map(|l| Line { line: l.line, data: ObservationSeq::Binary(l.data) })
            .collect(),
    };
    for l in &lines {
        check_hmm_line(m, l)?;
    }
    Ok(lines)
}

fn marginal(a: &MarginalArgs, threads: usize, out: &mut dyn Write) -> Result<()> {
    let model = modelfile::load(&a.model)?;
    let scores: Vec<f64> = match &model {
        Model::Hmm(m) => {
            let lines = hmm_corpus(m, &a.corpus)?;
            parallel_map(&lines, threads, |l| Ok(m.log_marginal(&l.data)?))?
        }
        Model::Hsmm(m) => {
            let seqs = corpus::read_frame_dir(&a.corpus)?;
            for (name, x) in &seqs {
                if x.dim() != m.dim() {
                    return Err(CliError::dimension(format!(
                        "{name}: frames have {} columns, model expects {}",
                        x.dim(),
                        m.dim()
                    )));
                }
            }
            parallel_map(&seqs, threads, |(_, x)| Ok(m.log_marginal(x)?))?
        }
        Model::Pcfg(g) => {
            let lines = corpus::parse_tokens(&corpus::read_text(&a.corpus)?)?;
            for l in &lines {
                if let Some(&bad) = l.data.iter().find(|&&t| t >= g.vocab()) {
                    return Err(CliError::dimension(format!(
                        "line {}: token {bad} out of range for vocabulary {}",
                        l.line,
                        g.vocab()
                    )));
                }
                if l.data.len() < 2 {
                    return Err(CliError::dimension(format!(
                        "line {}: sentences need at least 2 tokens",
                        l.line
                    )));
                }
            }
            parallel_map(&lines, threads, |l| Ok(g.log_inside(&l.data)?))?
        }
    };
    for s in &scores {
        writeln!(out, "{s:?}")?;
    }
    writeln!(out, "total {:?}", scores.iter().fold(0.0, |a, b| a + b))?;
    Ok(())
}

fn fit(a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let lines = corpus::parse_tokens(&corpus::read_text(&a.corpus)?)?;
    let largest = lines.iter().flat_map(|l| l.data.iter().copied()).max();
    let vocab = match (a.vocab, largest) {
        (Some(v), Some(m)) if m >= v => {
            let line = lines.iter().find(|l| l.data.contains(&m)).map_or(0, |l| l.line);
            return Err(CliError::dimension(format!(
                "line {line}: token {m} out of range for vocabulary {v}"
            )));
        }
        (Some(v), _) => v,
        (None, Some(m)) => m + 1,
        (None, None) => return Err(CliError::corpus("empty corpus")),
    };
    let data: Vec<ObservationSeq> = lines.into_iter().map(|l| ObservationSeq::Tokens(l.data)).collect();
    let result = em_fit(&data, a.states, vocab, a.iters, a.seed)?;
    for (i, ll) in result.log_likelihoods.iter().enumerate() {
        writeln!(out, "iter {i} {ll:?}")?;
    }
    modelfile::save(&a.out, &Model::Hmm(result.model))
}

fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = BenchConfig::new(a.family.into(), a.l.clone(), a.ratio.clone());
    cfg.t = a.t;
    cfg.batch = a.batch;
    cfg.repeats = a.repeats;
    cfg.warmup = a.warmup;
    cfg.seed = a.seed;
    cfg.budget_bytes = a.budget_bytes;
    let records = run_grid(&cfg)?;
    for (l, n, s) in speedups(&records) {
        log::info!("L={l} N={n} speedup {s:.3}");
    }
    match &a.out {
        Some(p) => {
            let mut buf = Vec::new();
            write_frontier_csv(&records, &mut buf)?;
            std::fs::write(p, buf)?;
        }
        None => write_frontier_csv(&records, out)?,
    }
    Ok(())
}

fn rank(a: &RankArgs, out: &mut dyn Write) -> Result<()> {
    let limit = u128::from(a.limit);
    let mut rows = Vec::new();
    for path in &a.model {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let row = match modelfile::load(path)? {
            Model::Hmm(m) => rank_report(&[(name, m)], limit)?.remove(0),
            Model::Hsmm(m) => RankRow {
                name,
                states: m.states(),
                transition_rank: estimate_rank(&m.transition().materialize_with_limit(limit)?, RANK_THRESHOLD)?,
                emission_rank: None,
            },
            Model::Pcfg(g) => RankRow {
                name,
                states: g.nonterminals(),
                transition_rank: estimate_rank(&g.nn().materialize_with_limit(limit)?, RANK_THRESHOLD)?,
                emission_rank: Some(estimate_rank(g.terminal(), RANK_THRESHOLD)?),
            },
        };
        rows.push(row);
    }
    write_rank_csv(&rows, out)?;
    Ok(())
}

fn write_table(out: &mut dyn Write, m: &DenseMatrix) -> Result<()> {
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn expressivity(a: &ExpressivityArgs, out: &mut dyn Write) -> Result<()> {
    let r = expressivity_report(a.restarts, a.iters, a.seed)?;
    writeln!(out, "target two-step marginal")?;
    write_table(out, &r.target)?;
    writeln!(out, "three-state model max abs error {:?}", r.max_abs_error)?;
    writeln!(out, "three-state transition rank {}", r.transition_rank)?;
    writeln!(out, "best two-state tv {:?}", r.best_tv)?;
    writeln!(out, "best two-state marginal")?;
    write_table(out, &r.best_marginal)?;
    Ok(())
}

fn with_band(t: &ScoreMatrix, seed: u64) -> Result<ScoreMatrix> {
    let ScoreMatrix::LowRank(f) = t else {
        return Err(CliError::runtime("banded models start from a low-rank transition"));
    };
    let band = init_band(f, DEFAULT_BAND_MASS_RATIO, seed)?;
    Ok(ScoreMatrix::BandedLowRank(BandedLowRankFactors::from_band(f.clone(), band)?))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let n = a.rank.unwrap_or((a.l / 4).max(1));
    let band_seed = derive_seed(a.seed, 7);
    let model = match a.family {
        FamilyArg::Hmm => {
            let m = synthetic_hmm(a.l, n, a.vocab, a.seed)?;
            Model::Hmm(match a.backend {
                BackendArg::Lowrank => m,
                BackendArg::Dense => m.to_dense()?,
                BackendArg::Banded => m.with_transition(with_band(m.transition(), band_seed)?)?,
            })
        }
        FamilyArg::Hsmm => {
            let m = synthetic_hsmm(a.l, n, a.max_duration, a.seed)?;
            Model::Hsmm(match a.backend {
                BackendArg::Lowrank => m,
                BackendArg::Dense => m.to_dense()?,
                BackendArg::Banded => m.with_transition(with_band(m.transition(), band_seed)?)?,
            })
        }
        FamilyArg::Pcfg => {
            let g = random_lpcfg(a.l, 2 * a.l, a.vocab, n, 16, a.seed)?;
            Model::Pcfg(match a.backend {
                BackendArg::Lowrank => g,
                BackendArg::Dense => g.to_dense()?,
                BackendArg::Banded => {
                    return Err(CliError::runtime("PCFG rule blocks are not square; banded is unavailable"))
                }
            })
        }
    };
    modelfile::save(&a.out, &model)
}

fn sample(a: &SampleArgs, out: &mut dyn Write) -> Result<()> {
    if a.t == 0 {
        return Err(CliError::runtime("--T must be positive"));
    }
    match modelfile::load(&a.model)? {
        Model::Hmm(m) => {
            for i in 0..a.count {
                let (_, x) = m.sample(a.t, derive_seed(a.seed, i as u64))?;
                let words: Vec<String> = match x {
                    ObservationSeq::Tokens(t) => t.iter().map(|v| v.to_string()).collect(),
                    ObservationSeq::Binary(f) => f
                        .iter()
                        .map(|bits| bits.iter().map(|&b| if b { '1' } else { '0' }).collect())
                        .collect(),
                };
                writeln!(out, "{}", words.join(" "))?;
            }
            Ok(())
        }
        Model::Hsmm(m) => {
            let dir = a
                .out
                .as_ref()
                .ok_or_else(|| CliError::runtime("HSMM samples need --out DIR"))?;
            std::fs::create_dir_all(dir)?;
            for i in 0..a.count {
                let (segments, x): (_, FrameSeq) = m.sample(a.t, derive_seed(a.seed, i as u64))?;
                let name = format!("seq{i:05}.csv");
                corpus::write_frames(&dir.join(&name), &x)?;
                let segs: Vec<String> = segments.iter().map(|(z, l)| format!("{z}:{l}")).collect();
                writeln!(out, "{name} {}", segs.join(" "))?;
            }
            Ok(())
        }
        Model::Pcfg(_) => Err(CliError::runtime("sampling is not available for PCFG models")),
    }
}
