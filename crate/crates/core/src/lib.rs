//! Batch annotation of a document corpus with a language model: corpus
//! ingestion and sampling, prompt assembly, a retrying provider client, a
//! resumable batch runner, parsing of model output into example records,
//! quote verification against the sources, and subject-area statistics.

pub mod analytics;
pub mod corpus;
pub mod error;
pub mod fsio;
pub mod prompts;
pub mod provider;
pub mod records;
pub mod runner;
pub mod taxonomy;
pub mod verify;

pub use error::{Error, Result};

// The guide's chapters, compiled so their examples run as doc-tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    pub mod corpus {}
    #[doc = include_str!("../../../book/src/taxonomy.md")]
    pub mod taxonomy {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    pub mod prompts {}
    #[doc = include_str!("../../../book/src/provider.md")]
    pub mod provider {}
    #[doc = include_str!("../../../book/src/runner.md")]
    pub mod runner {}
    #[doc = include_str!("../../../book/src/records.md")]
    pub mod records {}
    #[doc = include_str!("../../../book/src/verification.md")]
    pub mod verification {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    pub mod analytics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
