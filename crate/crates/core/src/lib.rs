//! Adversarial question generation over reading-comprehension corpora:
//! semantic graphs, answer/clue/style sampling, question generation,
//! semantic and syntactic filtering, TF-IDF retrieval and metrics.

pub mod backend;
pub mod corpus;
pub mod filters;
pub mod genclient;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod retriever;
pub mod semgraph;
pub mod util;

pub use corpus::{Answer, Dataset, Passage, Provenance, QAPair};
pub use filters::{Bucket, FilterConfig, FilterVerdict};
pub use genclient::{GeneratedQuestion, GenerationBackend, GenerationRequest};
pub use retriever::TfIdfIndex;
pub use semgraph::{AcsSample, SamplingConfig, SemanticGraph};
pub use pipeline::{run, RunConfig, RunManifest};
