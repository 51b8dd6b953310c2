//! Per-format input embeddings.
//!
//! Every format starts from the shared `word + position` sum. Documents add
//! an adaptive projection of the six-way layout embedding; web pages add an
//! adaptive projection of the concatenated per-depth XPath embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AdaptiveSpec, ModelConfig};
use crate::dom::XPathSeq;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::numeric::{Group, Init, ParamId, ParamStore, Tape, Var};

/// Layout coordinates as integer bins: left, right, top, bottom, width, height.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutBox {
    pub l: usize,
    pub r: usize,
    pub t: usize,
    pub b: usize,
    pub w: usize,
    pub h: usize,
}

impl LayoutBox {
    /// Box from bin coordinates; width and height are derived.
    pub fn new(l: usize, r: usize, t: usize, b: usize) -> Result<Self> {
        if l > r || t > b {
            return Err(Error::Geometry(format!(
                "inverted box l={l} r={r} t={t} b={b}"
            )));
        }
        Ok(LayoutBox {
            l,
            r,
            t,
            b,
            w: r - l,
            h: b - t,
        })
    }

    /// Box for special tokens.
    pub fn zero() -> Self {
        LayoutBox::default()
    }

    pub fn max_bin(&self) -> usize {
        [self.l, self.r, self.t, self.b, self.w, self.h]
            .into_iter()
            .max()
            .unwrap_or(0)
    }
}

/// Scales a pixel box `(left, top, right, bottom)` on a `page_w × page_h`
/// page into `bins` coordinate bins: `floor(c / extent · (bins − 1))`,
/// clamped into `[0, bins)`.
pub fn normalize_box(raw: [f64; 4], page_w: f64, page_h: f64, bins: usize) -> Result<LayoutBox> {
    let [l, t, r, b] = raw;
    if !(page_w > 0.0 && page_h > 0.0) {
        return Err(Error::Geometry(format!("page size {page_w}x{page_h} must be positive")));
    }
    if !raw.iter().all(|c| c.is_finite()) || l > r || t > b {
        return Err(Error::Geometry(format!("inverted box {raw:?}")));
    }
    if l < 0.0 || t < 0.0 || r > page_w || b > page_h {
        return Err(Error::Geometry(format!(
            "box {raw:?} outside {page_w}x{page_h} page"
        )));
    }
    if bins == 0 {
        return Err(Error::Config("coordinate bins must be positive".into()));
    }
    let scale = (bins - 1) as f64;
    let bin = |c: f64, extent: f64| ((c / extent * scale).floor().max(0.0) as usize).min(bins - 1);
    LayoutBox::new(bin(l, page_w), bin(r, page_w), bin(t, page_h), bin(b, page_h))
}

/// `Linear (ReLU Linear)^k`, or the identity when disabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptiveLayer {
    pub linears: Vec<Linear>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl AdaptiveLayer {
    /// Declares the layer's linears under `name`; inner widths equal `out_dim`.
    #[allow(clippy::too_many_arguments)]
    pub fn declare<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        spec: AdaptiveSpec,
        in_dim: usize,
        out_dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if spec == AdaptiveSpec::Disabled && in_dim != out_dim {
            return Err(Error::Config(format!(
                "disabled adaptive layer {name} cannot map {in_dim} to {out_dim}"
            )));
        }
        let mut linears = Vec::new();
        for i in 0..spec.linear_count() {
            let d_in = if i == 0 { in_dim } else { out_dim };
            linears.push(Linear::declare(
                store,
                &format!("{name}.linear{i}"),
                group,
                d_in,
                out_dim,
                std,
                rng,
            )?);
        }
        Ok(AdaptiveLayer {
            linears,
            in_dim,
            out_dim,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.linears.is_empty()
    }

    pub fn numel(spec: AdaptiveSpec, in_dim: usize, out_dim: usize) -> usize {
        (0..spec.linear_count())
            .map(|i| Linear::numel(if i == 0 { in_dim } else { out_dim }, out_dim))
            .sum()
    }

    /// Applies the layer to each row of `x: [n, in_dim]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let width = tape.value(x).last_dim();
        if width != self.in_dim {
            return Err(Error::shape("adaptive_forward", tape.shape(x), &[self.in_dim]));
        }
        let mut h = x;
        for (i, lin) in self.linears.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = lin.forward(tape, h)?;
        }
        Ok(h)
    }

    /// The last linear map, whose zeroing makes the layer's output vanish.
    pub fn last(&self) -> Option<&Linear> {
        self.linears.last()
    }
}

/// Handles to every embedding table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub pos1d: ParamId,
    /// Left, right, top, bottom, width, height. With shared x/y tables the
    /// left/right entries point to one table and top/bottom to another.
    pub layout: [ParamId; 6],
    pub tag: Vec<ParamId>,
    pub sub: Vec<ParamId>,
    pub hidden: usize,
    pub max_len: usize,
    pub coord_bins: usize,
    pub xpath_unit: usize,
    pub tag_pad: usize,
    pub max_subscript: usize,
}

impl EmbeddingTables {
    /// Declares shared, document and web tables. The word row for `pad_id`
    /// starts at zero.
    pub fn declare<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        pad_id: usize,
        tag_pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let h = cfg.hidden();
        let std = cfg.init_std;
        let normal = Init::Normal { std };
        let word = store.declare("shared.word_emb", Group::Shared, true, &[cfg.vocab_size, h], normal, rng)?;
        if pad_id < cfg.vocab_size {
            store.get_mut(word).value.row_mut(pad_id).fill(0.0);
        }
        let pos1d = store.declare(
            "shared.pos_emb",
            Group::Shared,
            true,
            &[cfg.encoder.max_len, h],
            normal,
            rng,
        )?;
        let shape = [cfg.coord_bins, h];
        let layout = if cfg.share_xy_tables {
            let x = store.declare("doc.x_emb", Group::Doc, true, &shape, normal, rng)?;
            let y = store.declare("doc.y_emb", Group::Doc, true, &shape, normal, rng)?;
            let w = store.declare("doc.width_emb", Group::Doc, true, &shape, normal, rng)?;
            let hh = store.declare("doc.height_emb", Group::Doc, true, &shape, normal, rng)?;
            [x, x, y, y, w, hh]
        } else {
            let mut ids = [ParamId(0); 6];
            for (slot, name) in ids
                .iter_mut()
                .zip(["left", "right", "top", "bottom", "width", "height"])
            {
                *slot = store.declare(format!("doc.{name}_emb"), Group::Doc, true, &shape, normal, rng)?;
            }
            ids
        };
        if tag_pad >= cfg.tag_table_size {
            return Err(Error::Config(format!(
                "tag table of {} rows has no room for pad id {tag_pad}",
                cfg.tag_table_size
            )));
        }
        let mut tag = Vec::with_capacity(cfg.xpath_depth);
        let mut sub = Vec::with_capacity(cfg.xpath_depth);
        for j in 0..cfg.xpath_depth {
            tag.push(store.declare(
                format!("web.tag_emb.{j}"),
                Group::Web,
                true,
                &[cfg.tag_table_size, cfg.xpath_unit],
                normal,
                rng,
            )?);
            sub.push(store.declare(
                format!("web.sub_emb.{j}"),
                Group::Web,
                true,
                &[cfg.max_subscript, cfg.xpath_unit],
                normal,
                rng,
            )?);
        }
        Ok(EmbeddingTables {
            word,
            pos1d,
            layout,
            tag,
            sub,
            hidden: h,
            max_len: cfg.encoder.max_len,
            coord_bins: cfg.coord_bins,
            xpath_unit: cfg.xpath_unit,
            tag_pad,
            max_subscript: cfg.max_subscript,
        })
    }

    pub fn xpath_depth(&self) -> usize {
        self.tag.len()
    }

    /// `WordEmb(s_i) + PosEmb(i)` for every position: `[L, H]`.
    pub fn embed_plain(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        if ids.len() > self.max_len {
            return Err(Error::Range {
                what: "sequence length",
                value: ids.len(),
                limit: self.max_len,
            });
        }
        let word = tape.param(self.word);
        let pos = tape.param(self.pos1d);
        let w = tape.gather_rows(word, ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = tape.gather_rows(pos, &positions)?;
        tape.add(w, p)
    }

    /// Six-way layout embedding for each box: `[n, H]`.
    pub fn two_d_embeddings(&self, tape: &mut Tape, boxes: &[LayoutBox]) -> Result<Var> {
        for bx in boxes {
            let m = bx.max_bin();
            if m >= self.coord_bins {
                return Err(Error::Index {
                    what: "coordinate bin",
                    index: m,
                    size: self.coord_bins,
                });
            }
        }
        let fields: [fn(&LayoutBox) -> usize; 6] =
            [|b| b.l, |b| b.r, |b| b.t, |b| b.b, |b| b.w, |b| b.h];
        let mut acc: Option<Var> = None;
        for (table, field) in self.layout.iter().zip(fields) {
            let ids: Vec<usize> = boxes.iter().map(field).collect();
            let tv = tape.param(*table);
            let rows = tape.gather_rows(tv, &ids)?;
            acc = Some(match acc {
                None => rows,
                Some(a) => tape.add(a, rows)?,
            });
        }
        Ok(acc.expect("six layout tables"))
    }

    /// Layout embedding of a single box: `[H]`.
    pub fn two_d_embedding(&self, tape: &mut Tape, bx: &LayoutBox) -> Result<Var> {
        let v = self.two_d_embeddings(tape, std::slice::from_ref(bx))?;
        tape.reshape(v, &[self.hidden])
    }

    /// Concatenated per-depth `TagEmb_j(tag_j) + SubEmb_j(sub_j)`: `[n, D·u]`.
    /// Depths beyond a sequence's length use the `(PAD, 0)` pair.
    pub fn xpath_embeddings(&self, tape: &mut Tape, xpaths: &[XPathSeq]) -> Result<Var> {
        let depth = self.xpath_depth();
        for xp in xpaths {
            if xp.len() > depth {
                return Err(Error::Range {
                    what: "xpath depth",
                    value: xp.len(),
                    limit: depth,
                });
            }
            for &(tag, sub) in &xp.pairs {
                if sub >= self.max_subscript {
                    return Err(Error::Range {
                        what: "xpath subscript",
                        value: sub,
                        limit: self.max_subscript,
                    });
                }
                let rows = tape.store().value(self.tag[0]).shape()[0];
                if tag >= rows {
                    return Err(Error::Range {
                        what: "xpath tag id",
                        value: tag,
                        limit: rows,
                    });
                }
            }
        }
        let mut parts = Vec::with_capacity(depth);
        for j in 0..depth {
            let (tags, subs): (Vec<usize>, Vec<usize>) = xpaths
                .iter()
                .map(|xp| xp.pairs.get(j).copied().unwrap_or((self.tag_pad, 0)))
                .unzip();
            let tt = tape.param(self.tag[j]);
            let st = tape.param(self.sub[j]);
            let te = tape.gather_rows(tt, &tags)?;
            let se = tape.gather_rows(st, &subs)?;
            parts.push(tape.add(te, se)?);
        }
        tape.concat_cols(&parts)
    }

    /// XPath embedding of a single sequence: `[D·u]`.
    pub fn xpath_embedding(&self, tape: &mut Tape, xp: &XPathSeq) -> Result<Var> {
        let v = self.xpath_embeddings(tape, std::slice::from_ref(xp))?;
        tape.reshape(v, &[self.xpath_depth() * self.xpath_unit])
    }

    /// Plain embedding plus the document adaptive projection of each box.
    pub fn embed_doc(
        &self,
        tape: &mut Tape,
        ids: &[usize],
        boxes: &[LayoutBox],
        adaptive: &AdaptiveLayer,
    ) -> Result<Var> {
        if boxes.len() != ids.len() {
            return Err(Error::Arity {
                what: "boxes",
                expected: ids.len(),
                got: boxes.len(),
            });
        }
        let plain = self.embed_plain(tape, ids)?;
        let layout = self.two_d_embeddings(tape, boxes)?;
        let extra = adaptive.forward(tape, layout)?;
        tape.add(plain, extra)
    }

    /// Plain embedding plus the web adaptive projection of each XPath.
    pub fn embed_web(
        &self,
        tape: &mut Tape,
        ids: &[usize],
        xpaths: &[XPathSeq],
        adaptive: &AdaptiveLayer,
    ) -> Result<Var> {
        if xpaths.len() != ids.len() {
            return Err(Error::Arity {
                what: "xpaths",
                expected: ids.len(),
                got: xpaths.len(),
            });
        }
        let plain = self.embed_plain(tape, ids)?;
        let xe = self.xpath_embeddings(tape, xpaths)?;
        let extra = adaptive.forward(tape, xe)?;
        tape.add(plain, extra)
    }
}
