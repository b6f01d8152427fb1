//! JSON model files.
//!
//! ```json
//! {"backend":"lowrank","dims":{"rank":2,"states":3,"vocab":3},"family":"hmm",
//!  "params":{"emission":[...],"start":[...],"transition_c":[...],...},"version":1}
//! ```
//!
//! Arrays are row-major with shapes fixed by `dims`. Output is canonical:
//! keys sorted, no whitespace, floats as 17 significant digits, so
//! save -> load -> save is byte-identical.

use crate::{CliError, Result};
use lrinfer_core::hmm::{Emission, HmmModel};
use lrinfer_core::hsmm::HsmmModel;
use lrinfer_core::hypergraph::{Backend, ScoreMatrix};
use lrinfer_core::lowrank::{BandedLowRankFactors, LowRankFactors, NormalizerSide};
use lrinfer_core::numeric::DenseMatrix;
use lrinfer_core::pcfg::PcfgModel;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Hmm(HmmModel),
    Hsmm(HsmmModel),
    Pcfg(PcfgModel),
}

impl Model {
    pub fn family(&self) -> &'static str {
        match self {
            Model::Hmm(_) => "hmm",
            Model::Hsmm(_) => "hsmm",
            Model::Pcfg(_) => "pcfg",
        }
    }

    /// Backend of the scoring matrix that carries the low-rank option.
    pub fn backend(&self) -> Backend {
        match self {
            Model::Hmm(m) => m.transition().backend(),
            Model::Hsmm(m) => m.transition().backend(),
            Model::Pcfg(m) => m.nn().backend(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    backend: String,
    dims: BTreeMap<String, u64>,
    family: String,
    params: BTreeMap<String, Vec<f64>>,
    version: u64,
}

#[derive(Default)]
struct Builder {
    dims: BTreeMap<String, u64>,
    params: BTreeMap<String, Vec<f64>>,
}

impl Builder {
    fn dim(&mut self, k: &str, v: usize) {
        self.dims.insert(k.into(), v as u64);
    }

    fn param(&mut self, k: &str, v: &[f64]) {
        self.params.insert(k.into(), v.to_vec());
    }

    fn score(&mut self, prefix: &str, s: &ScoreMatrix) -> Result<()> {
        let low_rank = |b: &mut Self, f: &LowRankFactors| -> Result<()> {
            if f.side() != NormalizerSide::Head {
                return Err(CliError::model("only head-side low-rank constants can be saved"));
            }
            b.dim("rank", f.rank());
            b.param(&format!("{prefix}_u"), f.u().data());
            b.param(&format!("{prefix}_v"), f.v().data());
            b.param(&format!("{prefix}_c"), f.c());
            Ok(())
        };
        match s {
            ScoreMatrix::Dense(m) => self.param(prefix, m.data()),
            ScoreMatrix::LowRank(f) => low_rank(self, f)?,
            ScoreMatrix::BandedLowRank(b) => {
                low_rank(self, b.low_rank())?;
                self.param(&format!("{prefix}_band"), b.band().data());
            }
        }
        Ok(())
    }
}

pub fn to_json(model: &Model) -> Result<String> {
    let mut b = Builder::default();
    match model {
        Model::Hmm(m) => {
            b.dim("states", m.states());
            b.param("start", m.start());
            b.score("transition", m.transition())?;
            match m.emission() {
                Emission::Categorical(e) => {
                    b.dim("vocab", e.cols());
                    b.param("emission", e.data());
                }
                Emission::Bernoulli(e) => {
                    b.dim("bits", e.cols());
                    b.param("emission_bernoulli", e.data());
                }
            }
        }
        Model::Hsmm(m) => {
            b.dim("states", m.states());
            b.dim("max_duration", m.max_duration());
            b.dim("frame_dim", m.dim());
            b.param("start", m.start());
            b.score("transition", m.transition())?;
            b.param("log_lambda", m.log_lambda());
            b.param("means", m.means().data());
            b.param("variances", m.variances().data());
        }
        Model::Pcfg(m) => {
            if m.nn().backend() == Backend::Banded {
                return Err(CliError::model("banded rule blocks are not supported"));
            }
            b.dim("nonterminals", m.nonterminals());
            b.dim("preterminals", m.preterminals());
            b.dim("vocab", m.vocab());
            b.param("start", m.start());
            b.score("rules_nn", m.nn())?;
            b.param("rules_np", m.np().data());
            b.param("rules_pn", m.pn().data());
            b.param("rules_pp", m.pp().data());
            b.param("terminal", m.terminal().data());
        }
    }
    let doc = Document {
        backend: model.backend().name().into(),
        dims: b.dims,
        family: model.family().into(),
        params: b.params,
        version: FORMAT_VERSION,
    };
    let value = serde_json::to_value(&doc).map_err(|e| CliError::model(e.to_string()))?;
    let mut out = String::new();
    write_canonical(&value, &mut out)?;
    out.push('\n');
    Ok(out)
}

fn write_canonical(v: &Value, out: &mut String) -> Result<()> {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                let x = n.as_f64().expect("JSON numbers are finite");
                out.push_str(&format!("{x:.16e}"));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push(':');
                write_canonical(&map[k], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

struct Reader {
    dims: BTreeMap<String, u64>,
    params: BTreeMap<String, Vec<f64>>,
    used_dims: BTreeSet<String>,
}

impl Reader {
    fn dim(&mut self, k: &str) -> Result<usize> {
        self.used_dims.insert(k.into());
        let v = *self
            .dims
            .get(k)
            .ok_or_else(|| CliError::model(format!("missing dims.{k}")))?;
        usize::try_from(v).map_err(|_| CliError::model(format!("dims.{k} too large")))
    }

    fn has_dim(&self, k: &str) -> bool {
        self.dims.contains_key(k)
    }

    fn vector(&mut self, k: &str, len: usize) -> Result<Vec<f64>> {
        let v = self
            .params
            .remove(k)
            .ok_or_else(|| CliError::model(format!("missing params.{k}")))?;
        if v.len() != len {
            return Err(CliError::model(format!(
                "params.{k} has {} entries, dims imply {len}",
                v.len()
            )));
        }
        Ok(v)
    }

    fn matrix(&mut self, k: &str, rows: usize, cols: usize) -> Result<DenseMatrix> {
        let data = self.vector(k, rows * cols)?;
        DenseMatrix::new(rows, cols, data).map_err(|e| CliError::model(format!("params.{k}: {e}")))
    }

    fn score(&mut self, prefix: &str, backend: Backend, rows: usize, cols: usize) -> Result<ScoreMatrix> {
        if backend == Backend::Dense {
            return Ok(ScoreMatrix::Dense(self.matrix(prefix, rows, cols)?));
        }
        let n = self.dim("rank")?;
        let u = self.matrix(&format!("{prefix}_u"), rows, n)?;
        let v = self.matrix(&format!("{prefix}_v"), cols, n)?;
        let c = self.vector(&format!("{prefix}_c"), rows)?;
        let f = LowRankFactors::from_parts(u, v, c, NormalizerSide::Head).map_err(model_err)?;
        if backend == Backend::LowRank {
            return Ok(ScoreMatrix::LowRank(f));
        }
        if rows != cols {
            return Err(CliError::model("banded scores must be square"));
        }
        let width = 2 * lrinfer_core::lowrank::band_half_width(n) + 1;
        let band = self.matrix(&format!("{prefix}_band"), rows, width)?;
        Ok(ScoreMatrix::BandedLowRank(
            BandedLowRankFactors::from_band(f, band).map_err(model_err)?,
        ))
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.dims.keys().find(|k| !self.used_dims.contains(*k)) {
            return Err(CliError::model(format!("unknown field dims.{k}")));
        }
        if let Some(k) = self.params.keys().next() {
            return Err(CliError::model(format!("unknown field params.{k}")));
        }
        Ok(())
    }
}

fn model_err(e: lrinfer_core::Error) -> CliError {
    CliError::model(e.to_string())
}

pub fn from_json(text: &str) -> Result<Model> {
    let doc: Document = serde_json::from_str(text).map_err(|e| CliError::model(format!("model file: {e}")))?;
    if doc.version != FORMAT_VERSION {
        return Err(CliError::model(format!(
            "unsupported model version {} (expected {FORMAT_VERSION})",
            doc.version
        )));
    }
    let backend =
        Backend::parse(&doc.backend).ok_or_else(|| CliError::model(format!("unknown backend {:?}", doc.backend)))?;
    let mut r = Reader {
        dims: doc.dims,
        params: doc.params,
        used_dims: BTreeSet::new(),
    };
    let model = match doc.family.as_str() {
        "hmm" => {
            let l = r.dim("states")?;
            let start = r.vector("start", l)?;
            let transition = r.score("transition", backend, l, l)?;
            let emission = if r.has_dim("bits") {
                let k = r.dim("bits")?;
                Emission::Bernoulli(r.matrix("emission_bernoulli", l, k)?)
            } else {
                let v = r.dim("vocab")?;
                Emission::Categorical(r.matrix("emission", l, v)?)
            };
            Model::Hmm(HmmModel::new(start, transition, emission).map_err(model_err)?)
        }
        "hsmm" => {
            let l = r.dim("states")?;
            let m = r.dim("max_duration")?;
            let d = r.dim("frame_dim")?;
            let start = r.vector("start", l)?;
            let transition = r.score("transition", backend, l, l)?;
            let log_lambda = r.vector("log_lambda", l)?;
            let means = r.matrix("means", l, d)?;
            let variances = r.matrix("variances", l, d)?;
            Model::Hsmm(HsmmModel::new(start, transition, log_lambda, m, means, variances).map_err(model_err)?)
        }
        "pcfg" => {
            let n = r.dim("nonterminals")?;
            let p = r.dim("preterminals")?;
            let v = r.dim("vocab")?;
            let start = r.vector("start", n)?;
            let nn = r.score("rules_nn", backend, n, n * n)?;
            let np = r.matrix("rules_np", n, n * p)?;
            let pn = r.matrix("rules_pn", n, p * n)?;
            let pp = r.matrix("rules_pp", n, p * p)?;
            let terminal = r.matrix("terminal", p, v)?;
            Model::Pcfg(PcfgModel::new(start, nn, np, pn, pp, terminal).map_err(model_err)?)
        }
        other => return Err(CliError::model(format!("unknown model family {other:?}"))),
    };
    r.finish()?;
    Ok(model)
}

pub fn load(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::model(format!("cannot read model {}: {e}", path.display())))?;
    from_json(&text).map_err(|e| CliError::new(e.kind, format!("{}: {}", path.display(), e.message)))
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, to_json(model)?)?;
    Ok(())
}
