//! On-disk corpora for the three formats and their conversion to model inputs.
//!
//! * plain: JSON Lines `{"text": ...}`, or raw text with one document per
//!   blank-line-separated block.
//! * doc: JSON Lines `{"page_w", "page_h", "words": [{"text", "box": [l, t, r, b]}]}`
//!   with pixel boxes.
//! * web: a directory of `.html` files, or JSON Lines `{"nodes": [{"text", "tags", "subs"}]}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dom::{extract_text_nodes, parse_html, ExtractOptions, TagVocab, XPathRecord, XPathSeq};
use crate::embeddings::{normalize_box, LayoutBox};
use crate::error::{Error, Result};
use crate::input::{Format, ModelInput};
use crate::tokenizer::{EncodedSeq, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlainRecord {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocWord {
    pub text: String,
    /// Pixel box `[left, top, right, bottom]`.
    #[serde(rename = "box")]
    pub box_px: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub page_w: f64,
    pub page_h: f64,
    pub words: Vec<DocWord>,
}

impl DocRecord {
    /// Every box lies on the page and is not inverted.
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.words.iter().enumerate() {
            normalize_box(w.box_px, self.page_w, self.page_h, 2)
                .map_err(|e| Error::Geometry(format!("word {i} ({:?}): {e}", w.text)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebRecord {
    pub nodes: Vec<XPathRecord>,
}

impl WebRecord {
    pub fn from_html(source: &str, tags: &TagVocab, opts: &ExtractOptions) -> Result<Self> {
        let root = parse_html(source)?;
        let nodes = extract_text_nodes(&root, tags, opts)?
            .iter()
            .map(|n| XPathRecord::from_node(n, tags))
            .collect();
        Ok(WebRecord { nodes })
    }
}

/// Handling of web files that fail to parse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorPolicy {
    Skip,
    #[default]
    Abort,
}

#[derive(Debug)]
pub struct WebLoad {
    pub records: Vec<WebRecord>,
    /// Files dropped under [`ErrorPolicy::Skip`] with the reason.
    pub skipped: Vec<Error>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn schema(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn json_lines<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| schema(path, i + 1, e.to_string()))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Plain records in file order. An empty file gives an empty list.
pub fn load_plain(path: impl AsRef<Path>) -> Result<Vec<PlainRecord>> {
    let path = path.as_ref();
    parse_plain(path, &read(path)?)
}

pub fn parse_plain(path: &Path, text: &str) -> Result<Vec<PlainRecord>> {
    let is_jsonl = text.trim_start().starts_with('{');
    if is_jsonl {
        let mut out = Vec::new();
        for (line, rec) in json_lines::<PlainRecord>(path, text)? {
            if rec.text.trim().is_empty() {
                return Err(schema(path, line, "empty \"text\""));
            }
            out.push(rec);
        }
        return Ok(out);
    }
    let mut out = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    for line in text.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.push(PlainRecord {
                    text: block.join("\n"),
                });
                block.clear();
            }
        } else {
            block.push(line);
        }
    }
    Ok(out)
}

pub fn load_doc(path: impl AsRef<Path>) -> Result<Vec<DocRecord>> {
    let path = path.as_ref();
    parse_doc(path, &read(path)?)
}

pub fn parse_doc(path: &Path, text: &str) -> Result<Vec<DocRecord>> {
    json_lines::<DocRecord>(path, text)?
        .into_iter()
        .map(|(line, rec)| {
            rec.validate().map_err(|e| schema(path, line, e.to_string()))?;
            Ok(rec)
        })
        .collect()
}

/// Web records from a directory of `.html` files (sorted by name) or a JSON
/// Lines file of pre-extracted nodes.
pub fn load_web(
    path: impl AsRef<Path>,
    tags: &TagVocab,
    opts: &ExtractOptions,
    policy: ErrorPolicy,
) -> Result<WebLoad> {
    let path = path.as_ref();
    if !path.is_dir() {
        let records = json_lines::<WebRecord>(path, &read(path)?)?
            .into_iter()
            .map(|(_, r)| r)
            .collect();
        return Ok(WebLoad {
            records,
            skipped: Vec::new(),
        });
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "html" || x == "htm"))
        .collect();
    files.sort();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for file in files {
        match WebRecord::from_html(&read(&file)?, tags, opts) {
            Ok(r) => records.push(r),
            Err(e) => {
                let e = Error::in_file(&file, e);
                match policy {
                    ErrorPolicy::Skip => skipped.push(e),
                    ErrorPolicy::Abort => return Err(e),
                }
            }
        }
    }
    Ok(WebLoad { records, skipped })
}

/// Table sizes that bound the priors of a model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSpec {
    pub max_len: usize,
    pub coord_bins: usize,
    pub xpath_depth: usize,
    pub max_subscript: usize,
}

impl InputSpec {
    pub fn from_model(cfg: &ModelConfig) -> Self {
        InputSpec {
            max_len: cfg.encoder.max_len,
            coord_bins: cfg.coord_bins,
            xpath_depth: cfg.xpath_depth,
            max_subscript: cfg.max_subscript,
        }
    }
}

/// Tokenizes each unit and copies its prior onto all of its subwords.
fn pieces_with_prior<P: Clone>(vocab: &Vocab, units: impl Iterator<Item = (String, P)>) -> (Vec<usize>, Vec<P>) {
    let mut ids = Vec::new();
    let mut priors = Vec::new();
    for (text, prior) in units {
        for id in vocab.ids_of(&vocab.tokenize(&text)) {
            ids.push(id);
            priors.push(prior.clone());
        }
    }
    (ids, priors)
}

/// Lays priors out alongside an encoded sequence: `blank` at the specials
/// and padding, content priors truncated in step with the ids.
fn align<P: Clone>(seq: &EncodedSeq, priors: &[P], blank: P) -> Vec<P> {
    let mut out = Vec::with_capacity(seq.len());
    out.push(blank.clone());
    out.extend_from_slice(&priors[..seq.n_content()]);
    out.resize(seq.len(), blank);
    out
}

pub fn plain_input(rec: &PlainRecord, vocab: &Vocab, spec: &InputSpec) -> Result<ModelInput> {
    let ids = vocab.ids_of(&vocab.tokenize(&rec.text));
    Ok(ModelInput::plain(EncodedSeq::from_ids(&ids, vocab.special(), spec.max_len)?))
}

pub fn doc_input(rec: &DocRecord, vocab: &Vocab, spec: &InputSpec) -> Result<ModelInput> {
    let boxes = rec
        .words
        .iter()
        .map(|w| normalize_box(w.box_px, rec.page_w, rec.page_h, spec.coord_bins))
        .collect::<Result<Vec<_>>>()?;
    let units = rec.words.iter().map(|w| w.text.clone()).zip(boxes);
    let (ids, priors) = pieces_with_prior(vocab, units);
    let seq = EncodedSeq::from_ids(&ids, vocab.special(), spec.max_len)?;
    let boxes = align(&seq, &priors, LayoutBox::zero());
    ModelInput::doc(seq, boxes)
}

/// Converts a recorded path to model ids: unknown tags map to UNK,
/// subscripts clamp to the table, and only the leafmost depths are kept.
pub fn xpath_for_model(rec: &XPathRecord, tags: &TagVocab, spec: &InputSpec) -> XPathSeq {
    let mut xp = rec.to_xpath(tags);
    for p in &mut xp.pairs {
        p.1 = p.1.min(spec.max_subscript - 1);
    }
    if xp.len() > spec.xpath_depth {
        xp.pairs.drain(..xp.len() - spec.xpath_depth);
    }
    xp
}

pub fn web_input(rec: &WebRecord, vocab: &Vocab, tags: &TagVocab, spec: &InputSpec) -> Result<ModelInput> {
    let units = rec
        .nodes
        .iter()
        .map(|n| (n.text.clone(), xpath_for_model(n, tags, spec)));
    let (ids, priors) = pieces_with_prior(vocab, units);
    let seq = EncodedSeq::from_ids(&ids, vocab.special(), spec.max_len)?;
    let xpaths = align(&seq, &priors, XPathSeq::empty());
    ModelInput::web(seq, xpaths)
}

/// Converted inputs for all three formats, indexed by [`Format::index`].
#[derive(Debug, Clone, Default)]
pub struct Corpora {
    pub inputs: [Vec<ModelInput>; 3],
}

impl Corpora {
    pub fn get(&self, f: Format) -> &[ModelInput] {
        &self.inputs[f.index()]
    }

    pub fn sizes(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.inputs[i].len())
    }

    pub fn build(
        plain: &[PlainRecord],
        doc: &[DocRecord],
        web: &[WebRecord],
        vocab: &Vocab,
        tags: &TagVocab,
        spec: &InputSpec,
    ) -> Result<Self> {
        Ok(Corpora {
            inputs: [
                plain.iter().map(|r| plain_input(r, vocab, spec)).collect::<Result<_>>()?,
                doc.iter().map(|r| doc_input(r, vocab, spec)).collect::<Result<_>>()?,
                web.iter().map(|r| web_input(r, vocab, tags, spec)).collect::<Result<_>>()?,
            ],
        })
    }
}
