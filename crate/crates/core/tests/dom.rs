//! HTML parsing and XPath extraction on whole pages.

use proptest::prelude::*;
use xdoc::dom::{
    extract_text_nodes, format_xpath, parse_html, parse_xpath, select, DomChild, DomNode, ExtractOptions,
    TagVocab, XPathRecord,
};
use xdoc::{Error, ErrorKind};

const PAGE: &str = r#"<!DOCTYPE html>
<html lang="en">
  <head><title>Listing</title><style>p { color: red }</style></head>
  <body>
    <!-- header -->
    <div class="card">
      <span>Name:</span>
      <span data-x='1'>Tom</span>
      <br>
      <img src="a.png"/>
    </div>
    <ul><li>one</li><li>two <b>bold</b> tail</li></ul>
    <script>if (a < b) { document.write("</div>") }</script>
  </body>
</html>"#;

fn records(page: &str) -> Vec<XPathRecord> {
    let tags = TagVocab::default();
    let root = parse_html(page).unwrap();
    extract_text_nodes(&root, &tags, &ExtractOptions::default())
        .unwrap()
        .iter()
        .map(|n| XPathRecord::from_node(n, &tags))
        .collect()
}

#[test]
fn realistic_page_yields_expected_records() {
    let recs = records(PAGE);
    let got: Vec<(String, String)> = recs
        .iter()
        .map(|r| {
            let steps: Vec<(&str, usize)> = r.tags.iter().map(|t| t.as_str()).zip(r.subs.iter().copied()).collect();
            (r.text.clone(), format_xpath(&steps))
        })
        .collect();
    let want = [
        ("Listing", "/html"),
        ("Name:", "/html/body/div/span[1]"),
        ("Tom", "/html/body/div/span[2]"),
        ("one", "/html/body/ul/li[1]"),
        ("two", "/html/body/ul/li[2]"),
        ("bold", "/html/body/ul/li[2]"),
        ("tail", "/html/body/ul/li[2]"),
    ];
    let want: Vec<(String, String)> = want.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    assert_eq!(got, want);
}

#[test]
fn records_serialize_as_text_tags_subs() {
    let recs = records("<html><body><div><span>a</span><span>b</span></div></body></html>");
    let line = serde_json::to_string(&recs[1]).unwrap();
    assert_eq!(line, r#"{"text":"b","tags":["html","body","div","span"],"subs":[0,0,0,2]}"#);
}

#[test]
fn malformed_pages_are_data_errors() {
    for bad in [
        "<html><body></div></html>",
        "<html><body><div>",
        "<div></div>",
        "<html><body><p class=\"x></p></body></html>",
        "text <html></html>",
    ] {
        let err = parse_html(bad).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Data, "{bad}: {err}");
        assert!(
            matches!(err, Error::HtmlParse { .. } | Error::UnexpectedEof { .. }),
            "{bad}: {err}"
        );
    }
}

#[test]
fn select_rejects_ambiguous_or_missing_steps() {
    let root = parse_html("<html><body><div><span>a</span><span>b</span></div></body></html>").unwrap();
    assert!(select(&root, &[("html", 0), ("body", 0), ("div", 0), ("span", 0)]).is_none());
    assert!(select(&root, &[("html", 0), ("body", 0), ("div", 0), ("span", 3)]).is_none());
    assert!(select(&root, &[("html", 0), ("body", 0), ("p", 0)]).is_none());
    let b = select(&root, &[("html", 0), ("body", 0), ("div", 0), ("span", 2)]).unwrap();
    assert_eq!(b.texts().collect::<Vec<_>>(), vec!["b"]);
}

fn arb_tree() -> impl Strategy<Value = DomNode> {
    let leaf = "[a-z]{1,6}".prop_map(|t| {
        let mut n = DomNode::new("span");
        n.children.push(DomChild::Text(t));
        n
    });
    leaf.prop_recursive(4, 40, 4, |inner| {
        (
            prop::sample::select(vec!["div", "span", "li", "p", "td"]),
            prop::collection::vec(inner, 1..4),
        )
            .prop_map(|(tag, kids)| {
                let mut n = DomNode::new(tag);
                n.children = kids.into_iter().map(DomChild::Element).collect();
                n
            })
    })
}

proptest! {
    #[test]
    fn serialized_trees_parse_back_identically(body in arb_tree()) {
        let mut html = DomNode::new("html");
        html.children.push(DomChild::Element(body));
        let parsed = parse_html(&html.to_html()).unwrap();
        prop_assert_eq!(parsed, html);
    }

    #[test]
    fn every_extracted_path_selects_its_text(body in arb_tree()) {
        let mut html = DomNode::new("html");
        html.children.push(DomChild::Element(body));
        let tags = TagVocab::default();
        for node in extract_text_nodes(&html, &tags, &ExtractOptions::default()).unwrap() {
            let steps = node.xpath.to_names(&tags);
            let target = select(&html, &steps);
            prop_assert!(target.is_some_and(|n| n.texts().any(|t| t == node.text)));
            let text = node.xpath.to_xpath_string(&tags);
            let reparsed = parse_xpath(&text).unwrap();
            let names: Vec<(String, usize)> = steps.iter().map(|(t, s)| (t.to_string(), *s)).collect();
            prop_assert_eq!(reparsed, names);
        }
    }
}
