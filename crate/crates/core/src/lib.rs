//! Language modeling over finite command grammars, n-best rescoring with
//! n-gram, recurrent and image-conditioned recurrent models, and WER-based
//! evaluation with fold aggregation and McNemar's test.

pub mod associate;
pub mod command;
pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod grammar;
pub mod multimodal;
pub mod ngram;
pub mod rescore;
pub mod rnnlm;
pub mod util;
pub mod vocab;

pub use command::Command;
pub use vocab::Vocab;
