//! Concept insertion for biomedical knowledge bases: decide for each new atom
//! which existing concept it belongs to, or that it starts a new concept.

pub mod candidates;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hnsw;
pub mod kb;
pub mod lexnorm;
pub mod pipeline;
pub mod protocol;
pub mod rba;
pub mod reranker;
pub mod scorer;
pub mod synth;
pub mod unionfind;
pub mod vecindex;

pub use error::{Error, ErrorKind, Result};
pub use kb::{Atom, Concept, InsertionSet, KnowledgeBase, Label, Prediction, QueryAtom};
