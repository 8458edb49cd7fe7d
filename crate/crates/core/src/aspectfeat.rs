//! Per-segment multi-aspect features: appearance (V), text (T), position (P),
//! text density (D) and neighbour gap distance (G).

use crate::docmodel::{AnnotatedPage, BBox, DocumentPage, Segment};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

pub const POS_DIM: usize = 6;
pub const DENSITY_DIM: usize = 1;
pub const GAP_DIM: usize = 4;
pub const DEFAULT_D_V: usize = 32;
pub const DEFAULT_D_T: usize = 128;

/// One of the five feature aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aspect {
    V,
    T,
    P,
    D,
    G,
}

impl Aspect {
    pub const ALL: [Aspect; 5] = [Aspect::V, Aspect::T, Aspect::P, Aspect::D, Aspect::G];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn letter(self) -> char {
        match self {
            Aspect::V => 'V',
            Aspect::T => 'T',
            Aspect::P => 'P',
            Aspect::D => 'D',
            Aspect::G => 'G',
        }
    }
}

/// Set of enabled aspects, written as letters, e.g. `"VTPDG"`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AspectFlags(u8);

impl AspectFlags {
    pub const NONE: AspectFlags = AspectFlags(0);
    pub const ALL: AspectFlags = AspectFlags(0b11111);

    pub fn with(mut self, a: Aspect) -> Self {
        self.0 |= a.bit();
        self
    }

    pub fn without(mut self, a: Aspect) -> Self {
        self.0 &= !a.bit();
        self
    }

    pub fn has(self, a: Aspect) -> bool {
        self.0 & a.bit() != 0
    }
}

impl fmt::Display for AspectFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return f.write_str("-");
        }
        for a in Aspect::ALL {
            if self.has(a) {
                write!(f, "{}", a.letter())?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for AspectFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AspectFlags({self})")
    }
}

impl FromStr for AspectFlags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut flags = AspectFlags::NONE;
        if s == "-" || s.eq_ignore_ascii_case("none") {
            return Ok(flags);
        }
        for ch in s.chars() {
            let a = match ch.to_ascii_uppercase() {
                'V' => Aspect::V,
                'T' => Aspect::T,
                'P' => Aspect::P,
                'D' => Aspect::D,
                'G' => Aspect::G,
                ',' | ' ' => continue,
                other => return Err(format!("unknown aspect '{other}' in '{s}' (expected letters from VTPDG)")),
            };
            flags = flags.with(a);
        }
        Ok(flags)
    }
}

impl Serialize for AspectFlags {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AspectFlags {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Slot offsets of the assembled vector: `[V | T | P | D | G]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectLayout {
    pub d_v: usize,
    pub d_t: usize,
}

impl Default for AspectLayout {
    fn default() -> Self {
        AspectLayout { d_v: DEFAULT_D_V, d_t: DEFAULT_D_T }
    }
}

impl AspectLayout {
    pub fn range(&self, a: Aspect) -> std::ops::Range<usize> {
        let v = 0..self.d_v;
        let t = v.end..v.end + self.d_t;
        let p = t.end..t.end + POS_DIM;
        let d = p.end..p.end + DENSITY_DIM;
        let g = d.end..d.end + GAP_DIM;
        match a {
            Aspect::V => v,
            Aspect::T => t,
            Aspect::P => p,
            Aspect::D => d,
            Aspect::G => g,
        }
    }

    pub fn total(&self) -> usize {
        self.d_v + self.d_t + POS_DIM + DENSITY_DIM + GAP_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiAspectFeature {
    pub v: Vec<f64>,
    pub t: Vec<f64>,
    pub p: [f64; POS_DIM],
    pub d: f64,
    pub g: [f64; GAP_DIM],
    pub layout: AspectLayout,
    pub mask: AspectFlags,
}

impl MultiAspectFeature {
    /// Concatenated vector in layout order; disabled aspects are zero.
    pub fn to_vec<S: Scalar>(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.layout.total()];
        self.write_into(&mut out);
        out
    }

    pub fn write_into<S: Scalar>(&self, out: &mut [S]) {
        let l = self.layout;
        let mut put = |a: Aspect, vals: &[f64]| {
            let r = l.range(a);
            for (o, &x) in out[r].iter_mut().zip(vals) {
                *o = if self.mask.has(a) { S::lit(x) } else { S::zero() };
            }
        };
        put(Aspect::V, &self.v);
        put(Aspect::T, &self.t);
        put(Aspect::P, &self.p);
        put(Aspect::D, &[self.d]);
        put(Aspect::G, &self.g);
    }
}

/// `(x/W, y/H, w/W, h/H, cx/W, cy/H)`.
pub fn positional_features(seg: &Segment, page: &DocumentPage) -> [f64; POS_DIM] {
    let b = &seg.bbox;
    let (cx, cy) = b.center();
    [b.x / page.page_w, b.y / page.page_h, b.w / page.page_w, b.h / page.page_h, cx / page.page_w, cy / page.page_h]
}

/// Characters per squared page unit; zero-area boxes give 0.
pub fn density_feature(seg: &Segment) -> f64 {
    let area = seg.bbox.area();
    if area <= 0.0 {
        0.0
    } else {
        seg.text.chars().count() as f64 / area
    }
}

/// Normalized edge-to-edge distance to the nearest neighbour in each
/// direction `(up, down, left, right)`.
///
/// A neighbour in a vertical direction must overlap the segment's horizontal
/// extent (and vice versa) and have its centre on that side. Distances are
/// divided by the page height (vertical) or width (horizontal) and clamped to
/// `[0, 1]`; 1 means no neighbour.
pub fn gap_distances(seg: &Segment, page: &DocumentPage) -> [f64; GAP_DIM] {
    let b = seg.bbox;
    let (cx, cy) = b.center();
    let others: Vec<&BBox> = page.segments.iter().filter(|s| s.id != seg.id).map(|s| &s.bbox).collect();

    // Each distance is monotone in one edge coordinate of the neighbour, so
    // the first qualifying box in that edge order is the nearest.
    let first = |mut cands: Vec<&BBox>, key: &dyn Fn(&BBox) -> f64, ok: &dyn Fn(&BBox) -> bool, dist: &dyn Fn(&BBox) -> f64| {
        cands.sort_by(|p, q| key(p).total_cmp(&key(q)));
        cands.into_iter().find(|o| ok(o)).map(dist)
    };
    let h_overlap = |o: &BBox| b.horizontal_overlap(o) > 0.0;
    let v_overlap = |o: &BBox| b.vertical_overlap(o) > 0.0;

    let up = first(others.clone(), &|o| -o.bottom(), &|o| h_overlap(o) && o.center().1 < cy, &|o| (b.y - o.bottom()).max(0.0));
    let down = first(others.clone(), &|o| o.y, &|o| h_overlap(o) && o.center().1 > cy, &|o| (o.y - b.bottom()).max(0.0));
    let left = first(others.clone(), &|o| -o.right(), &|o| v_overlap(o) && o.center().0 < cx, &|o| (b.x - o.right()).max(0.0));
    let right = first(others, &|o| o.x, &|o| v_overlap(o) && o.center().0 > cx, &|o| (o.x - b.right()).max(0.0));
    let norm = |d: Option<f64>, extent: f64| d.map_or(1.0, |d| (d / extent).clamp(0.0, 1.0));
    [norm(up, page.page_h), norm(down, page.page_h), norm(left, page.page_w), norm(right, page.page_w)]
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Appearance proxy: `[ln(1 + area), ln((w+1)/(h+1)), h / median page h,
/// letter, digit, punctuation, space fractions]`, zero-padded to `d_v`.
pub fn appearance_feature(seg: &Segment, page: &DocumentPage, d_v: usize) -> Vec<f64> {
    let med = median(page.segments.iter().map(|s| s.bbox.h).collect());
    appearance_with_median(seg, med, d_v)
}

fn appearance_with_median(seg: &Segment, median_h: f64, d_v: usize) -> Vec<f64> {
    let b = &seg.bbox;
    let n = seg.text.chars().count();
    let frac = |pred: &dyn Fn(char) -> bool| {
        if n == 0 {
            0.0
        } else {
            seg.text.chars().filter(|&c| pred(c)).count() as f64 / n as f64
        }
    };
    let raw = [
        (1.0 + b.area()).ln(),
        ((b.w + 1.0) / (b.h + 1.0)).ln(),
        if median_h > 0.0 { b.h / median_h } else { 1.0 },
        frac(&|c| c.is_alphabetic()),
        frac(&|c| c.is_numeric()),
        frac(&|c| !c.is_alphanumeric() && !c.is_whitespace()),
        frac(&|c| c.is_whitespace()),
    ];
    let mut v = vec![0.0; d_v];
    for (o, x) in v.iter_mut().zip(raw) {
        *o = x;
    }
    v
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hashed, L2-normalized count vector of lowercase character 2- and 3-grams.
pub fn text_feature(text: &str, d_t: usize) -> Vec<f64> {
    let mut v = vec![0.0; d_t];
    if d_t == 0 {
        return v;
    }
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut buf = String::new();
    for n in [2usize, 3] {
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w.iter());
            v[(fnv1a(buf.as_bytes()) % d_t as u64) as usize] += 1.0;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Hash bucket for a whole token, used by the token embedding table.
pub fn token_bucket(token: &str, buckets: usize) -> usize {
    (fnv1a(token.to_lowercase().as_bytes()) % buckets.max(1) as u64) as usize
}

pub fn assemble_multi_aspect(seg: &Segment, page: &DocumentPage, flags: AspectFlags, layout: AspectLayout) -> MultiAspectFeature {
    let med = median(page.segments.iter().map(|s| s.bbox.h).collect());
    assemble_with_median(seg, page, flags, layout, med)
}

fn assemble_with_median(seg: &Segment, page: &DocumentPage, flags: AspectFlags, layout: AspectLayout, med: f64) -> MultiAspectFeature {
    let zeros = |n| vec![0.0; n];
    MultiAspectFeature {
        v: if flags.has(Aspect::V) { appearance_with_median(seg, med, layout.d_v) } else { zeros(layout.d_v) },
        t: if flags.has(Aspect::T) { text_feature(&seg.text, layout.d_t) } else { zeros(layout.d_t) },
        p: if flags.has(Aspect::P) { positional_features(seg, page) } else { [0.0; POS_DIM] },
        d: if flags.has(Aspect::D) { density_feature(seg) } else { 0.0 },
        g: if flags.has(Aspect::G) { gap_distances(seg, page) } else { [0.0; GAP_DIM] },
        layout,
        mask: flags,
    }
}

/// Features of every segment of a page, in segment order.
pub fn page_features(page: &DocumentPage, flags: AspectFlags, layout: AspectLayout) -> Vec<MultiAspectFeature> {
    let med = median(page.segments.iter().map(|s| s.bbox.h).collect());
    page.segments.iter().map(|s| assemble_with_median(s, page, flags, layout, med)).collect()
}

/// Header row of [`write_feature_table`].
pub fn feature_table_header(layout: AspectLayout) -> Vec<String> {
    let mut cols = vec!["doc_id".to_string(), "segment_id".to_string()];
    cols.extend((0..layout.d_v).map(|i| format!("v{i}")));
    cols.extend((0..layout.d_t).map(|i| format!("t{i}")));
    cols.extend(["p_x", "p_y", "p_w", "p_h", "p_cx", "p_cy", "d"].iter().map(|s| s.to_string()));
    cols.extend(["g_up", "g_down", "g_left", "g_right"].iter().map(|s| s.to_string()));
    cols
}

/// Tab-separated export: one row per segment, header first.
pub fn write_feature_table<W: Write>(corpus: &[AnnotatedPage], flags: AspectFlags, layout: AspectLayout, mut out: W) -> io::Result<()> {
    writeln!(out, "{}", feature_table_header(layout).join("\t"))?;
    for doc in corpus {
        for (seg, f) in doc.page.segments.iter().zip(page_features(&doc.page, flags, layout)) {
            write!(out, "{}\t{}", doc.doc_id, seg.id)?;
            for x in f.to_vec::<f64>() {
                write!(out, "\t{x}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
