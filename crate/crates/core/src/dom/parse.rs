//! Parser for a well-formed HTML subset.
//!
//! Accepted input: properly nested elements, void elements (`br`, `img`,
//! `hr`, `input`, `meta`, `link`) with or without a trailing `/`, comments,
//! a doctype, and `script`/`style` blocks whose content is skipped. Attribute
//! values are parsed and dropped.

use crate::error::{Error, Result};

const VOID: &[&str] = &["br", "img", "hr", "input", "meta", "link"];
const RAW_TEXT: &[&str] = &["script", "style"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomChild {
    Element(DomNode),
    Text(String),
}

/// An element with its children in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomNode {
    pub tag: String,
    pub children: Vec<DomChild>,
}

impl DomNode {
    pub fn new(tag: impl Into<String>) -> Self {
        DomNode {
            tag: tag.into(),
            children: Vec::new(),
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = &DomNode> {
        self.children.iter().filter_map(|c| match c {
            DomChild::Element(e) => Some(e),
            DomChild::Text(_) => None,
        })
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.children.iter().filter_map(|c| match c {
            DomChild::Text(t) => Some(t.as_str()),
            DomChild::Element(_) => None,
        })
    }

    /// Serializes back to HTML (no attributes).
    pub fn to_html(&self) -> String {
        let mut s = String::new();
        self.write_html(&mut s);
        s
    }

    fn write_html(&self, s: &mut String) {
        s.push('<');
        s.push_str(&self.tag);
        s.push('>');
        if VOID.contains(&self.tag.as_str()) {
            return;
        }
        for c in &self.children {
            match c {
                DomChild::Element(e) => e.write_html(s),
                DomChild::Text(t) => escape_into(t, s),
            }
        }
        s.push_str("</");
        s.push_str(&self.tag);
        s.push('>');
    }
}

fn escape_into(t: &str, s: &mut String) {
    for ch in t.chars() {
        match ch {
            '<' => s.push_str("&lt;"),
            '>' => s.push_str("&gt;"),
            '&' => s.push_str("&amp;"),
            c => s.push(c),
        }
    }
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
}

/// Parses `source` into a tree rooted at `<html>`.
pub fn parse_html(source: &str) -> Result<DomNode> {
    let mut p = Parser { src: source, pos: 0 };
    p.document()
}

impl<'s> Parser<'s> {
    fn rest(&self) -> &'s str {
        &self.src[self.pos..]
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::HtmlParse {
            offset,
            message: message.into(),
        }
    }

    fn eof(&self, stack: &[DomNode]) -> Error {
        Error::UnexpectedEof {
            offset: self.src.len(),
            open: stack.last().map_or_else(String::new, |n| n.tag.clone()),
        }
    }

    fn document(&mut self) -> Result<DomNode> {
        let mut stack: Vec<DomNode> = Vec::new();
        let mut root: Option<DomNode> = None;
        loop {
            if self.pos >= self.src.len() {
                if !stack.is_empty() {
                    return Err(self.eof(&stack));
                }
                return root.ok_or_else(|| self.err(self.pos, "no <html> element"));
            }
            let start = self.pos;
            let rest = self.rest();
            if rest.starts_with("<!--") {
                match rest.find("-->") {
                    Some(i) => self.pos += i + 3,
                    None => return Err(self.eof(&stack)),
                }
            } else if rest.starts_with("<!") || rest.starts_with("<?") {
                match rest.find('>') {
                    Some(i) => self.pos += i + 1,
                    None => return Err(self.eof(&stack)),
                }
            } else if rest.starts_with("</") {
                self.pos += 2;
                let name = self.name()?;
                self.skip_ws();
                if !self.rest().starts_with('>') {
                    return Err(if self.pos >= self.src.len() {
                        self.eof(&stack)
                    } else {
                        self.err(self.pos, format!("expected '>' closing </{name}"))
                    });
                }
                self.pos += 1;
                match stack.pop() {
                    Some(node) if node.tag == name => {
                        self.attach(node, &mut stack, &mut root, start)?;
                    }
                    Some(node) => {
                        return Err(self.err(
                            start,
                            format!("mismatched </{name}>, expected </{}>", node.tag),
                        ))
                    }
                    None => return Err(self.err(start, format!("unexpected </{name}>"))),
                }
            } else if rest.starts_with('<') {
                self.pos += 1;
                let name = self.name()?;
                let self_closing = self.attributes(&stack)?;
                let node = DomNode::new(name.clone());
                if self_closing || VOID.contains(&name.as_str()) {
                    self.attach(node, &mut stack, &mut root, start)?;
                } else if RAW_TEXT.contains(&name.as_str()) {
                    self.skip_raw(&name, &stack)?;
                    self.attach(node, &mut stack, &mut root, start)?;
                } else {
                    if stack.is_empty() && (root.is_some() || name != "html") {
                        return Err(self.err(start, format!("root element must be <html>, found <{name}>")));
                    }
                    stack.push(node);
                }
            } else {
                let end = rest.find('<').map_or(self.src.len(), |i| self.pos + i);
                let raw = &self.src[self.pos..end];
                self.pos = end;
                match stack.last_mut() {
                    Some(top) => {
                        let text = decode_entities(raw);
                        if let Some(DomChild::Text(prev)) = top.children.last_mut() {
                            prev.push_str(&text);
                        } else {
                            top.children.push(DomChild::Text(text));
                        }
                    }
                    None if raw.trim().is_empty() => {}
                    None => return Err(self.err(start, "text outside the <html> element")),
                }
            }
        }
    }

    fn attach(
        &self,
        node: DomNode,
        stack: &mut [DomNode],
        root: &mut Option<DomNode>,
        at: usize,
    ) -> Result<()> {
        match stack.last_mut() {
            Some(parent) => {
                parent.children.push(DomChild::Element(node));
                Ok(())
            }
            None if root.is_none() && node.tag == "html" => {
                *root = Some(node);
                Ok(())
            }
            None => Err(self.err(at, format!("<{}> outside the <html> element", node.tag))),
        }
    }

    fn name(&mut self) -> Result<String> {
        let rest = self.rest();
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == ':'))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.err(self.pos, "expected a tag name"));
        }
        self.pos += len;
        Ok(rest[..len].to_ascii_lowercase())
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Skips attributes up to and including `>`; returns whether the tag
    /// ended with `/>`.
    fn attributes(&mut self, stack: &[DomNode]) -> Result<bool> {
        loop {
            self.skip_ws();
            let rest = self.rest();
            if rest.is_empty() {
                return Err(self.eof(stack));
            }
            if rest.starts_with("/>") {
                self.pos += 2;
                return Ok(true);
            }
            if rest.starts_with('>') {
                self.pos += 1;
                return Ok(false);
            }
            let len = rest
                .find(|c: char| c.is_whitespace() || c == '=' || c == '>' || c == '/')
                .unwrap_or(rest.len());
            if len == 0 {
                return Err(self.err(self.pos, "malformed attribute"));
            }
            self.pos += len;
            self.skip_ws();
            if self.rest().starts_with('=') {
                self.pos += 1;
                self.skip_ws();
                let rest = self.rest();
                match rest.chars().next() {
                    Some(q @ ('"' | '\'')) => match rest[1..].find(q) {
                        Some(i) => self.pos += i + 2,
                        None => return Err(self.eof(stack)),
                    },
                    Some(_) => {
                        let len = rest
                            .find(|c: char| c.is_whitespace() || c == '>')
                            .unwrap_or(rest.len());
                        self.pos += len;
                    }
                    None => return Err(self.eof(stack)),
                }
            }
        }
    }

    fn skip_raw(&mut self, name: &str, stack: &[DomNode]) -> Result<()> {
        let close = format!("</{name}");
        let lower = self.rest().to_ascii_lowercase();
        match lower.find(&close) {
            Some(i) => {
                self.pos += i + close.len();
                match self.rest().find('>') {
                    Some(j) => {
                        self.pos += j + 1;
                        Ok(())
                    }
                    None => Err(self.eof(stack)),
                }
            }
            None => Err(Error::UnexpectedEof {
                offset: self.src.len(),
                open: name.to_string(),
            }),
        }
    }
}

fn decode_entities(raw: &str) -> String {
    if !raw.contains('&') {
        return raw.to_string();
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        let decoded = rest.find(';').filter(|&j| j <= 10).and_then(|j| {
            let ent = &rest[1..j];
            let ch = match ent {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ => ent
                    .strip_prefix("#x")
                    .or_else(|| ent.strip_prefix("#X"))
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .or_else(|| ent.strip_prefix('#').and_then(|d| d.parse().ok()))
                    .and_then(char::from_u32),
            };
            ch.map(|c| (c, j + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}
