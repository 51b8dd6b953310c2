//! Model-ready sequences tagged with their format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dom::XPathSeq;
use crate::embeddings::LayoutBox;
use crate::error::{Error, Result};
use crate::tokenizer::EncodedSeq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Plain,
    Doc,
    Web,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Plain, Format::Doc, Format::Web];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Plain => "plain",
            Format::Doc => "doc",
            Format::Web => "web",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Format::Plain),
            "doc" | "document" => Ok(Format::Doc),
            "web" => Ok(Format::Web),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

/// Encoded ids plus the prior belonging to the format: one box per position
/// for documents, one XPath per position for web pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInput {
    pub format: Format,
    pub seq: EncodedSeq,
    pub boxes: Option<Vec<LayoutBox>>,
    pub xpaths: Option<Vec<XPathSeq>>,
}

impl ModelInput {
    pub fn plain(seq: EncodedSeq) -> Self {
        ModelInput {
            format: Format::Plain,
            seq,
            boxes: None,
            xpaths: None,
        }
    }

    pub fn doc(seq: EncodedSeq, boxes: Vec<LayoutBox>) -> Result<Self> {
        let m = ModelInput {
            format: Format::Doc,
            seq,
            boxes: Some(boxes),
            xpaths: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn web(seq: EncodedSeq, xpaths: Vec<XPathSeq>) -> Result<Self> {
        let m = ModelInput {
            format: Format::Web,
            seq,
            boxes: None,
            xpaths: Some(xpaths),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    /// Exactly the prior matching the format, one entry per position.
    pub fn validate(&self) -> Result<()> {
        let n = self.seq.len();
        let check = |what: &'static str, got: Option<usize>, want: bool| -> Result<()> {
            match (got, want) {
                (Some(g), true) if g != n => Err(Error::Arity {
                    what,
                    expected: n,
                    got: g,
                }),
                (Some(_), false) => Err(Error::Config(format!(
                    "{} input carries unexpected {what}",
                    self.format
                ))),
                (None, true) => Err(Error::Config(format!("{} input is missing {what}", self.format))),
                _ => Ok(()),
            }
        };
        check("boxes", self.boxes.as_ref().map(Vec::len), self.format == Format::Doc)?;
        check("xpaths", self.xpaths.as_ref().map(Vec::len), self.format == Format::Web)
    }

    /// Same input with different token ids and identical priors.
    pub fn with_ids(&self, ids: Vec<usize>) -> Self {
        let mut m = self.clone();
        m.seq.ids = ids;
        m
    }
}
