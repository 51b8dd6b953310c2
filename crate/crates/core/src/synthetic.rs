//! Seeded synthetic corpus for all three formats.
//!
//! Sentences come from a handful of topics. Each topic has a fixed word
//! order with two slots that switch between alternatives, so a masked word
//! is recoverable from the rest of its sentence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DocRecord, DocWord, PlainRecord, WebRecord};
use crate::dom::{ExtractOptions, TagVocab};
use crate::error::{Error, Result};
use crate::tokenizer::{Vocab, CLS, MASK, PAD, SEP, UNK};

const TOPICS: &[&[&str]] = &[
    &["invoice", "number", "shows", "the", "total", "amount", "due", "by", "friday", "noon", "monday", "cash"],
    &["weather", "report", "says", "heavy", "rain", "falls", "over", "northern", "hills", "tonight", "light", "valleys"],
    &["museum", "guide", "describes", "ancient", "bronze", "statues", "from", "eastern", "temples", "carefully", "marble", "palaces"],
    &["recipe", "card", "lists", "fresh", "garlic", "butter", "and", "green", "herbs", "first", "olive", "spices"],
    &["train", "schedule", "announces", "late", "evening", "departures", "toward", "coastal", "cities", "daily", "early", "towns"],
    &["student", "essay", "explains", "how", "river", "deltas", "form", "sandy", "islands", "slowly", "glacier", "ridges"],
    &["hotel", "receipt", "records", "two", "night", "stays", "with", "breakfast", "included", "yesterday", "three", "dinner"],
    &["garden", "club", "plants", "tall", "yellow", "sunflowers", "along", "stone", "walls", "each", "red", "fences"],
    &["software", "manual", "covers", "network", "setup", "steps", "for", "office", "printers", "quickly", "backup", "servers"],
    &["football", "team", "wins", "another", "home", "match", "after", "extra", "time", "again", "away", "penalties"],
];

/// Words stored only as pieces, so tokenization exercises continuations.
const SPLIT: &[(&str, &str)] = &[
    ("sunflowers", "sun"),
    ("departures", "depart"),
    ("breakfast", "break"),
    ("penalties", "penal"),
];

const WEB_TAGS: &[&str] = &["div", "span", "p", "li", "td", "a", "b"];

pub struct SyntheticCorpus {
    pub vocab: Vocab,
    pub plain: Vec<PlainRecord>,
    pub doc: Vec<DocRecord>,
    /// Raw pages; parse with [`WebRecord::from_html`].
    pub html: Vec<String>,
}

impl SyntheticCorpus {
    pub fn web_records(&self, tags: &TagVocab) -> Result<Vec<WebRecord>> {
        let opts = ExtractOptions::default();
        self.html.iter().map(|h| WebRecord::from_html(h, tags, &opts)).collect()
    }

    /// Writes `vocab.txt`, `plain.jsonl`, `doc.jsonl` and `web/NNNN.html`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let web = dir.join("web");
        fs::create_dir_all(&web).map_err(|e| Error::io(&web, e))?;
        let put = |p: &Path, s: &str| fs::write(p, s).map_err(|e| Error::io(p, e));
        put(&dir.join("vocab.txt"), &self.vocab.to_text())?;
        put(&dir.join("plain.jsonl"), &to_jsonl(&self.plain))?;
        put(&dir.join("doc.jsonl"), &to_jsonl(&self.doc))?;
        for (i, h) in self.html.iter().enumerate() {
            put(&web.join(format!("{i:04}.html")), h)?;
        }
        Ok(())
    }
}

fn to_jsonl<T: serde::Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

/// Vocabulary covering every generated word.
pub fn synthetic_vocab() -> Vocab {
    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    let mut push = |t: String| {
        if !tokens.contains(&t) {
            tokens.push(t);
        }
    };
    for topic in TOPICS {
        for &w in topic.iter() {
            match SPLIT.iter().find(|(full, _)| *full == w) {
                Some((full, head)) => {
                    push(head.to_string());
                    push(format!("##{}", &full[head.len()..]));
                }
                None => push(w.to_string()),
            }
        }
    }
    Vocab::from_tokens(tokens).expect("synthetic vocab is well formed")
}

/// One sentence of `topic`: the first ten words, with slots 3 and 7
/// switching to words 10 and 11 by coin flip.
pub fn sentence<R: Rng + ?Sized>(topic: usize, rng: &mut R) -> Vec<&'static str> {
    let words = TOPICS[topic % TOPICS.len()];
    let mut s: Vec<&str> = words[..10].to_vec();
    if rng.random_bool(0.5) {
        s[3] = words[10];
    }
    if rng.random_bool(0.5) {
        s[7] = words[11];
    }
    s
}

pub fn topic_count() -> usize {
    TOPICS.len()
}

/// `n` records per format from `seed`.
pub fn generate(n: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plain = Vec::with_capacity(n);
    let mut doc = Vec::with_capacity(n);
    let mut html = Vec::with_capacity(n);
    for i in 0..n {
        let words = sentence(i % TOPICS.len(), &mut rng);
        plain.push(PlainRecord {
            text: words.join(" "),
        });
    }
    for _ in 0..n {
        let words = sentence(rng.random_range(0..TOPICS.len()), &mut rng);
        doc.push(doc_page(&words, &mut rng));
    }
    for _ in 0..n {
        let words = sentence(rng.random_range(0..TOPICS.len()), &mut rng);
        html.push(web_page(&words, &mut rng));
    }
    SyntheticCorpus {
        vocab: synthetic_vocab(),
        plain,
        doc,
        html,
    }
}

/// Words laid out left to right in lines on a letter-sized page.
fn doc_page<R: Rng + ?Sized>(words: &[&str], rng: &mut R) -> DocRecord {
    let (page_w, page_h) = (850.0, 1100.0);
    let mut x = 60.0 + rng.random_range(0.0..40.0);
    let mut y = 80.0 + rng.random_range(0.0..400.0);
    let line_h = 18.0;
    let mut out = Vec::with_capacity(words.len());
    for w in words {
        let width = 9.0 * w.len() as f64;
        if x + width > page_w - 60.0 {
            x = 60.0;
            y += line_h * 1.5;
        }
        out.push(DocWord {
            text: w.to_string(),
            box_px: [x, y, x + width, y + line_h],
        });
        x += width + 8.0;
    }
    DocRecord {
        page_w,
        page_h,
        words: out,
    }
}

/// Sentence split into runs of one to three words, each nested one or two
/// elements deep under a shared wrapper.
fn web_page<R: Rng + ?Sized>(words: &[&str], rng: &mut R) -> String {
    let mut s = String::from("<html><body><div>");
    let mut i = 0;
    while i < words.len() {
        let take = rng.random_range(1..=3).min(words.len() - i);
        let outer = WEB_TAGS.choose(rng).expect("tags");
        let inner = WEB_TAGS.choose(rng).expect("tags");
        let text = words[i..i + take].join(" ");
        if rng.random_bool(0.5) {
            let _ = write!(s, "<{outer}><{inner}>{text}</{inner}></{outer}>");
        } else {
            let _ = write!(s, "<{outer}>{text}</{outer}>");
        }
        i += take;
    }
    s.push_str("</div></body></html>");
    s
}
