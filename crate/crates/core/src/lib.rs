//! A unified encoder for plain, layout-annotated and markup text.
//!
//! Every format shares one word table, one position table and one
//! Transformer. Documents add a projected 2D layout embedding and web pages
//! add a projected XPath embedding before the shared encoder.

pub mod accounting;
pub mod bench;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod dom;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod input;
pub mod layers;
pub mod model;
pub mod numeric;
pub mod pretrain;
pub mod synthetic;
pub mod tokenizer;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/xpath.md")]
    mod xpath {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/accounting.md")]
    mod accounting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
