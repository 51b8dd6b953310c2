//! HTML to DOM tree, and DOM text nodes to XPath sequences.

mod parse;
mod xpath;

pub use parse::{parse_html, DomChild, DomNode};
pub use xpath::{
    assign_subscripts, extract_text_nodes, format_xpath, parse_xpath, select, DepthPolicy,
    ExtractOptions, TagVocab, TextNode, XPathRecord, XPathSeq, DEFAULT_MAX_DEPTH,
    DEFAULT_RESERVED_TAGS,
};
