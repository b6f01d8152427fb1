//! Exact inference for hidden Markov models, hidden semi-Markov models and
//! probabilistic context-free grammars, expressed as sum-product
//! marginalization over hypergraphs with dense, low-rank or banded plus
//! low-rank scoring matrices.

pub mod bench;
pub mod error;
pub mod hmm;
pub mod hsmm;
pub mod pcfg;
pub mod hypergraph;
pub mod lowrank;
pub mod numeric;

pub use error::{Error, Result};
