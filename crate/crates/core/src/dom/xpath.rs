//! XPath tag/subscript sequences for text nodes.
//!
//! A subscript is the 1-based ordinal of an element among its same-tag
//! siblings, or 0 when the tag occurs only once under that parent. Tags
//! outside the reserved set are dropped from the chain.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::parse::{DomChild, DomNode};
use crate::error::{Error, Result};

/// Default maximum XPath depth.
pub const DEFAULT_MAX_DEPTH: usize = 50;

pub const DEFAULT_RESERVED_TAGS: &[&str] = &[
    "html", "body", "div", "span", "li", "ul", "ol", "a", "p", "table", "tr", "td", "th", "h1",
    "h2", "h3", "h4", "h5", "h6", "section", "header", "footer", "nav", "button", "img", "form",
    "input", "label",
];

/// Reserved tag names plus an unknown-tag id and a padding id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for TagVocab {
    fn default() -> Self {
        TagVocab::new(DEFAULT_RESERVED_TAGS.iter().copied())
    }
}

impl TagVocab {
    pub fn new<I, S>(reserved: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names = Vec::new();
        let mut ids = HashMap::new();
        for name in reserved {
            let name = name.into().to_ascii_lowercase();
            if !ids.contains_key(&name) {
                ids.insert(name.clone(), names.len());
                names.push(name);
            }
        }
        TagVocab { names, ids }
    }

    /// Number of reserved tags.
    pub fn reserved_len(&self) -> usize {
        self.names.len()
    }

    pub fn unk_id(&self) -> usize {
        self.names.len()
    }

    pub fn pad_id(&self) -> usize {
        self.names.len() + 1
    }

    /// Rows needed in a tag embedding table (reserved + UNK + PAD).
    pub fn table_size(&self) -> usize {
        self.names.len() + 2
    }

    pub fn is_reserved(&self, tag: &str) -> bool {
        self.ids.contains_key(tag)
    }

    /// Id for a tag name; unknown names map to the UNK id.
    pub fn id(&self, tag: &str) -> usize {
        self.ids.get(tag).copied().unwrap_or(self.unk_id())
    }

    pub fn name(&self, id: usize) -> &str {
        match self.names.get(id) {
            Some(n) => n,
            None if id == self.unk_id() => "[unk]",
            None => "[pad]",
        }
    }
}

/// Root-to-node chain of `(tag_id, subscript)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct XPathSeq {
    pub pairs: Vec<(usize, usize)>,
}

impl XPathSeq {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        XPathSeq { pairs }
    }

    pub fn empty() -> Self {
        XPathSeq::default()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn tags(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    pub fn subs(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|p| p.1)
    }

    pub fn from_names(names: &[(impl AsRef<str>, usize)], tags: &TagVocab) -> Self {
        XPathSeq {
            pairs: names.iter().map(|(t, s)| (tags.id(t.as_ref()), *s)).collect(),
        }
    }

    pub fn to_names<'v>(&self, tags: &'v TagVocab) -> Vec<(&'v str, usize)> {
        self.pairs.iter().map(|&(t, s)| (tags.name(t), s)).collect()
    }

    /// `/html/body/div/span[2]` form.
    pub fn to_xpath_string(&self, tags: &TagVocab) -> String {
        format_xpath(&self.to_names(tags))
    }
}

pub fn format_xpath<S: AsRef<str>>(steps: &[(S, usize)]) -> String {
    let mut s = String::new();
    for (tag, sub) in steps {
        s.push('/');
        s.push_str(tag.as_ref());
        if *sub > 0 {
            s.push_str(&format!("[{sub}]"));
        }
    }
    s
}

/// Parses `/tag[sub]/tag/...`; a step without brackets has subscript 0.
pub fn parse_xpath(s: &str) -> Result<Vec<(String, usize)>> {
    let bad = || Error::XPathSyntax(s.to_string());
    let body = s.strip_prefix('/').ok_or_else(bad)?;
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('/')
        .map(|step| {
            let (tag, sub) = match step.find('[') {
                Some(i) => {
                    let inner = step[i + 1..].strip_suffix(']').ok_or_else(bad)?;
                    let sub: usize = inner.parse().map_err(|_| bad())?;
                    if sub == 0 {
                        return Err(bad());
                    }
                    (&step[..i], sub)
                }
                None => (step, 0),
            };
            if tag.is_empty() || !tag.chars().all(|c| c.is_ascii_alphanumeric() || "-_:".contains(c)) {
                return Err(bad());
            }
            Ok((tag.to_string(), sub))
        })
        .collect()
}

/// Subscript of each element child of `parent`, in order.
pub fn assign_subscripts(parent: &DomNode) -> Vec<usize> {
    let mut totals: HashMap<&str, usize> = HashMap::new();
    for e in parent.elements() {
        *totals.entry(e.tag.as_str()).or_default() += 1;
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    parent
        .elements()
        .map(|e| {
            if totals[e.tag.as_str()] < 2 {
                0
            } else {
                let n = seen.entry(e.tag.as_str()).or_default();
                *n += 1;
                *n
            }
        })
        .collect()
}

/// What to do with chains deeper than the maximum after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthPolicy {
    /// Keep the leafmost pairs.
    #[default]
    Truncate,
    Error,
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub max_depth: usize,
    pub depth_policy: DepthPolicy,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            max_depth: DEFAULT_MAX_DEPTH,
            depth_policy: DepthPolicy::Truncate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextNode {
    pub text: String,
    pub xpath: XPathSeq,
}

/// One JSON Lines record of `xdoc xpath` output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XPathRecord {
    pub text: String,
    pub tags: Vec<String>,
    pub subs: Vec<usize>,
}

impl XPathRecord {
    pub fn from_node(node: &TextNode, tags: &TagVocab) -> Self {
        XPathRecord {
            text: node.text.clone(),
            tags: node.xpath.tags().map(|t| tags.name(t).to_string()).collect(),
            subs: node.xpath.subs().collect(),
        }
    }

    pub fn to_xpath(&self, tags: &TagVocab) -> XPathSeq {
        XPathSeq::new(
            self.tags
                .iter()
                .zip(&self.subs)
                .map(|(t, &s)| (tags.id(t), s))
                .collect(),
        )
    }
}

/// Every nonblank text fragment under `root`, in document order, with its
/// XPath. Whitespace inside a fragment is collapsed to single spaces.
pub fn extract_text_nodes(
    root: &DomNode,
    tags: &TagVocab,
    opts: &ExtractOptions,
) -> Result<Vec<TextNode>> {
    let mut out = Vec::new();
    let mut chain = Vec::new();
    walk(root, 0, tags, opts, &mut chain, &mut out)?;
    Ok(out)
}

fn walk(
    node: &DomNode,
    sub: usize,
    tags: &TagVocab,
    opts: &ExtractOptions,
    chain: &mut Vec<(usize, usize)>,
    out: &mut Vec<TextNode>,
) -> Result<()> {
    let kept = tags.is_reserved(&node.tag);
    if kept {
        chain.push((tags.id(&node.tag), sub));
    }
    let subs = assign_subscripts(node);
    let mut next_sub = subs.into_iter();
    for child in &node.children {
        match child {
            DomChild::Element(e) => {
                let s = next_sub.next().unwrap_or(0);
                walk(e, s, tags, opts, chain, out)?;
            }
            DomChild::Text(t) => {
                let text = t.split_whitespace().collect::<Vec<_>>().join(" ");
                if text.is_empty() {
                    continue;
                }
                let pairs = if chain.len() > opts.max_depth {
                    if opts.depth_policy == DepthPolicy::Error {
                        return Err(Error::DepthOverflow {
                            depth: chain.len(),
                            max: opts.max_depth,
                            path: XPathSeq::new(chain.clone()).to_xpath_string(tags),
                        });
                    }
                    chain[chain.len() - opts.max_depth..].to_vec()
                } else {
                    chain.clone()
                };
                out.push(TextNode {
                    text,
                    xpath: XPathSeq::new(pairs),
                });
            }
        }
    }
    if kept {
        chain.pop();
    }
    Ok(())
}

/// Follows `(tag, subscript)` steps from the root. Subscript 0 requires the
/// tag to be unique among siblings; `k > 0` picks the k-th same-tag sibling.
pub fn select<'a, S: AsRef<str>>(root: &'a DomNode, steps: &[(S, usize)]) -> Option<&'a DomNode> {
    let ((first, sub0), rest) = steps.split_first()?;
    if root.tag != first.as_ref() || *sub0 != 0 {
        return None;
    }
    let mut cur = root;
    for (tag, sub) in rest {
        let tag = tag.as_ref();
        let mut same = cur.elements().filter(|e| e.tag == tag);
        cur = match sub {
            0 => {
                let only = same.next()?;
                if same.next().is_some() {
                    return None;
                }
                only
            }
            k => same.nth(k - 1)?,
        };
    }
    Some(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dom::parse_html;

    #[test]
    fn subscript_rule() {
        let p = parse_html("<html><div></div><span></span><span></span></html>").unwrap();
        assert_eq!(assign_subscripts(&p), vec![0, 1, 2]);
        let p = parse_html("<html><a></a><a></a><a></a></html>").unwrap();
        assert_eq!(assign_subscripts(&p), vec![1, 2, 3]);
        let p = parse_html("<html><a></a><b></b><i></i></html>").unwrap();
        assert_eq!(assign_subscripts(&p), vec![0, 0, 0]);
    }

    #[test]
    fn xpath_string_round_trip() {
        let steps = parse_xpath("/html/body/div/span[2]").unwrap();
        assert_eq!(
            steps,
            vec![
                ("html".to_string(), 0),
                ("body".to_string(), 0),
                ("div".to_string(), 0),
                ("span".to_string(), 2)
            ]
        );
        assert_eq!(format_xpath(&steps), "/html/body/div/span[2]");
        assert!(parse_xpath("html/body").is_err());
        assert!(parse_xpath("/html/span[0]").is_err());
        assert!(parse_xpath("/html/span[x]").is_err());
    }

    #[test]
    fn unreserved_tags_shorten_the_chain() {
        let root = parse_html("<html><body><b><p>x</p></b></body></html>").unwrap();
        let tags = TagVocab::default();
        let nodes = extract_text_nodes(&root, &tags, &ExtractOptions::default()).unwrap();
        assert_eq!(nodes[0].xpath.to_xpath_string(&tags), "/html/body/p");
    }

    #[test]
    fn depth_policy() {
        let root = parse_html("<html><body><div><div><p>deep</p></div></div></body></html>").unwrap();
        let tags = TagVocab::default();
        let trunc = ExtractOptions {
            max_depth: 3,
            depth_policy: DepthPolicy::Truncate,
        };
        let nodes = extract_text_nodes(&root, &tags, &trunc).unwrap();
        assert_eq!(nodes[0].xpath.to_xpath_string(&tags), "/div/div/p");
        let strict = ExtractOptions {
            depth_policy: DepthPolicy::Error,
            ..trunc
        };
        let err = extract_text_nodes(&root, &tags, &strict).unwrap_err();
        assert!(matches!(err, Error::DepthOverflow { depth: 5, max: 3, .. }), "{err}");
    }

    #[test]
    fn tag_vocab_layout() {
        let t = TagVocab::default();
        assert_eq!(t.reserved_len(), 28);
        assert_eq!(t.table_size(), 30);
        assert_eq!(t.id("marquee"), t.unk_id());
        assert_eq!(t.id("html"), 0);
    }
}
