//! Closed-form parameter counts per component and per model profile.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::config::ModelConfig;
use crate::embeddings::AdaptiveLayer;
use crate::encoder::Encoder;
use crate::numeric::{Group, ParamStore};

/// Parameter counts by component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub word: usize,
    pub pos1d: usize,
    pub transformer: usize,
    pub twod: usize,
    pub xpath: usize,
    pub adaptive: usize,
    /// Embedding LayerNorm and the MLM head.
    pub other: usize,
}

/// Totals for models that keep subsets of the components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProfileTotals {
    /// Shared components only.
    pub roberta: usize,
    /// Shared plus the 2D tables.
    pub layoutlm: usize,
    /// Shared plus the XPath tables.
    pub markuplm: usize,
    /// Everything.
    pub xdoc: usize,
}

impl ProfileTotals {
    pub fn singles(&self) -> usize {
        self.roberta + self.layoutlm + self.markuplm
    }

    /// Unified total over the three single-format totals.
    pub fn sharing_ratio(&self) -> f64 {
        self.xdoc as f64 / self.singles() as f64
    }
}

impl ParamBreakdown {
    pub fn shared(&self) -> usize {
        self.word + self.pos1d + self.transformer + self.other
    }

    pub fn total(&self) -> usize {
        self.shared() + self.twod + self.xpath + self.adaptive
    }

    pub fn profiles(&self) -> ProfileTotals {
        let s = self.shared();
        ProfileTotals {
            roberta: s,
            layoutlm: s + self.twod,
            markuplm: s + self.xpath,
            xdoc: self.total(),
        }
    }
}

/// Exact counts from table and layer dimensions, biases included.
pub fn count_parameters(cfg: &ModelConfig) -> ParamBreakdown {
    let h = cfg.hidden();
    let e = &cfg.encoder;
    let adaptive = if cfg.symmetric_adaptive {
        AdaptiveLayer::numel(cfg.adaptive, h, h)
    } else {
        AdaptiveLayer::numel(cfg.adaptive, h, h) + AdaptiveLayer::numel(cfg.adaptive, cfg.xpath_width(), h)
    };
    ParamBreakdown {
        word: cfg.vocab_size * h,
        pos1d: e.max_len * h,
        transformer: e.n_layers * Encoder::layer_numel(h, e.ffn_dim, e.key_bias),
        twod: cfg.layout_table_count() * cfg.coord_bins * h,
        xpath: cfg.xpath_depth * (cfg.tag_table_size + cfg.max_subscript) * cfg.xpath_unit,
        adaptive,
        other: if cfg.embed_layer_norm { 2 * h } else { 0 }
            + Encoder::head_numel(h, cfg.vocab_size, cfg.tie_mlm_head),
    }
}

/// Counts recovered from an instantiated store by parameter name.
pub fn enumerate_parameters(store: &ParamStore) -> ParamBreakdown {
    let mut b = ParamBreakdown::default();
    for (_, p) in store.iter() {
        let n = p.value.len();
        let name = p.name.as_str();
        let slot = if name == "shared.word_emb" {
            &mut b.word
        } else if name == "shared.pos_emb" {
            &mut b.pos1d
        } else if name.starts_with("shared.encoder.") {
            &mut b.transformer
        } else if name.contains("adaptive") {
            &mut b.adaptive
        } else if p.group == Group::Doc {
            &mut b.twod
        } else if p.group == Group::Web {
            &mut b.xpath
        } else {
            &mut b.other
        };
        *slot += n;
    }
    b
}

/// Counts per parameter group.
pub fn group_totals(store: &ParamStore) -> BTreeMap<Group, usize> {
    let mut m = BTreeMap::new();
    for (_, p) in store.iter() {
        *m.entry(p.group).or_insert(0) += p.value.len();
    }
    m
}

/// Millions with one decimal.
pub fn millions(n: usize) -> String {
    format!("{:.1}M", n as f64 / 1e6)
}

impl fmt::Display for ParamBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("word", self.word),
            ("pos1d", self.pos1d),
            ("transformer", self.transformer),
            ("twod", self.twod),
            ("xpath", self.xpath),
            ("adaptive", self.adaptive),
            ("other", self.other),
        ];
        writeln!(f, "{:<12} {:>12} {:>8}", "component", "params", "approx")?;
        for (name, n) in rows {
            writeln!(f, "{name:<12} {n:>12} {:>8}", millions(n))?;
        }
        let p = self.profiles();
        writeln!(f)?;
        writeln!(f, "{:<12} {:>12} {:>8}", "profile", "params", "approx")?;
        for (name, n) in [
            ("roberta", p.roberta),
            ("layoutlm", p.layoutlm),
            ("markuplm", p.markuplm),
            ("xdoc", p.xdoc),
        ] {
            writeln!(f, "{name:<12} {n:>12} {:>8}", millions(n))?;
        }
        writeln!(f, "{:<12} {:>12} {:>8}", "singles", p.singles(), millions(p.singles()))?;
        write!(f, "sharing ratio {:.4}", p.sharing_ratio())
    }
}
