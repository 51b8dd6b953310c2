//! WordPiece tokenization: whitespace split, optional lowercase, then greedy
//! longest-match subwords per word.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD: &str = "[PAD]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";

/// Words longer than this many characters become a single `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub cls: usize,
    pub sep: usize,
    pub pad: usize,
    pub mask: usize,
    pub unk: usize,
}

impl SpecialIds {
    pub fn contains(&self, id: usize) -> bool {
        [self.cls, self.sep, self.pad, self.mask, self.unk].contains(&id)
    }
}

/// Bijective token ↔ id map with the five special tokens.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    special: SpecialIds,
    prefix: String,
    lowercase: bool,
}

impl Vocab {
    /// Builds a vocab from tokens in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = Vec::new();
        let mut ids = HashMap::new();
        for (i, tok) in tokens.into_iter().enumerate() {
            let tok = tok.into();
            if tok.is_empty() {
                return Err(Error::VocabFormat {
                    line: i + 1,
                    message: "empty token".into(),
                });
            }
            if let Some(prev) = ids.insert(tok.clone(), i) {
                return Err(Error::VocabFormat {
                    line: i + 1,
                    message: format!("duplicate token {tok:?} (first on line {})", prev + 1),
                });
            }
            list.push(tok);
        }
        let find = |t: &str| {
            ids.get(t)
                .copied()
                .ok_or_else(|| Error::MissingSpecial(t.to_string()))
        };
        let special = SpecialIds {
            cls: find(CLS)?,
            sep: find(SEP)?,
            pad: find(PAD)?,
            mask: find(MASK)?,
            unk: find(UNK)?,
        };
        Ok(Vocab {
            tokens: list,
            ids,
            special,
            prefix: "##".into(),
            lowercase: true,
        })
    }

    /// Reads a UTF-8 file with one token per line; line index is the id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    /// One token per line, the inverse of [`Vocab::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.lowercase = lowercase;
        self
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = prefix.into();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(&self, id: usize) -> bool {
        self.special.contains(id)
    }

    /// Subword pieces for `text`; always succeeds, unknown words become `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            self.tokenize_word(word, &mut out);
        }
        out
    }

    fn tokenize_word(&self, word: &str, out: &mut Vec<String>) {
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(UNK.to_string());
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, &self.prefix);
                }
                if self.ids.contains_key(&piece) {
                    found = Some(piece);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(p) => {
                    pieces.push(p);
                    start = end;
                }
                None => {
                    out.push(UNK.to_string());
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    /// Ids for tokens; tokens missing from the vocab map to `[UNK]`.
    pub fn ids_of<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(self.special.unk))
            .collect()
    }

    /// `[CLS] + tokens + [SEP]` padded or truncated to `max_len`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Result<EncodedSeq> {
        EncodedSeq::from_ids(&self.ids_of(tokens), self.special, max_len)
    }
}

/// A fixed-length encoded sequence. Position `i` is implicit.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncodedSeq {
    pub ids: Vec<usize>,
    pub attention: Vec<bool>,
    pub n_real: usize,
}

impl EncodedSeq {
    /// Wraps content ids with `[CLS]`/`[SEP]`, keeping the first
    /// `max_len - 2`, and pads with `[PAD]`.
    pub fn from_ids(content: &[usize], special: SpecialIds, max_len: usize) -> Result<Self> {
        if max_len < 2 {
            return Err(Error::Config(format!("max length must be >= 2, got {max_len}")));
        }
        let keep = content.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(special.cls);
        ids.extend_from_slice(&content[..keep]);
        ids.push(special.sep);
        let n_real = ids.len();
        ids.resize(max_len, special.pad);
        let attention = (0..max_len).map(|i| i < n_real).collect();
        Ok(EncodedSeq {
            ids,
            attention,
            n_real,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of content tokens kept between `[CLS]` and `[SEP]`.
    pub fn n_content(&self) -> usize {
        self.n_real - 2
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        0..self.ids.len()
    }

    /// The content ids between `[CLS]` and `[SEP]`.
    pub fn content(&self) -> &[usize] {
        &self.ids[1..self.n_real - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(extra: &[&str]) -> Vocab {
        let mut t = vec![PAD, UNK, CLS, SEP, MASK];
        t.extend_from_slice(extra);
        Vocab::from_tokens(t).unwrap()
    }

    #[test]
    fn seven_line_vocab() {
        let v = Vocab::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nhello\n##lo\n").unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("##lo"), Some(6));
        assert_eq!(v.special().mask, 4);
    }

    #[test]
    fn missing_special_and_duplicates() {
        let err = Vocab::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\nhello\n").unwrap_err();
        assert!(matches!(err, Error::MissingSpecial(ref t) if t == MASK));
        let err = Vocab::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\nb\na\n").unwrap_err();
        assert!(matches!(err, Error::VocabFormat { line: 8, .. }), "{err}");
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab(&["un", "##aff", "##able", "hello"]);
        assert_eq!(v.tokenize("hello"), vec!["hello"]);
        assert_eq!(v.tokenize("unaffable"), vec!["un", "##aff", "##able"]);
        assert_eq!(v.tokenize("Hello  UNAFFABLE"), vec!["hello", "un", "##aff", "##able"]);
        assert_eq!(v.tokenize("hello€"), vec![UNK]);
        assert_eq!(v.clone().with_lowercase(false).tokenize("Hello"), vec![UNK]);
        assert!(v.tokenize("   ").is_empty());
    }

    #[test]
    fn overlong_words_are_unknown() {
        let v = vocab(&["a", "##a"]);
        assert_eq!(v.tokenize(&"a".repeat(MAX_WORD_CHARS)).len(), MAX_WORD_CHARS);
        assert_eq!(v.tokenize(&"a".repeat(MAX_WORD_CHARS + 1)), vec![UNK]);
    }

    #[test]
    fn encode_boundaries() {
        let v = vocab(&["x"]);
        let s = v.encode::<&str>(&[], 5).unwrap();
        assert_eq!(s.ids, vec![2, 3, 0, 0, 0]);
        assert_eq!(s.attention, vec![true, true, false, false, false]);

        let toks = vec!["x"; 3];
        let s = v.encode(&toks, 5).unwrap();
        assert_eq!(s.n_real, 5);
        assert!(s.attention.iter().all(|&a| a));

        let toks = vec!["x"; 600];
        let s = v.encode(&toks, 512).unwrap();
        assert_eq!(s.n_content(), 510);
        assert_eq!(s.ids[0], 2);
        assert_eq!(s.ids[511], 3);
        assert!(v.encode(&toks, 1).is_err());
    }
}
