//! Deterministic generator of Form-604-style pages with ground-truth
//! layout and key-value annotations, plus digital/printed/handwritten
//! noise profiles and a textline-parser simulator.

mod grammar;
mod parser_view;

pub use grammar::{default_patterns, format_date, render_value, tag_value, PatternFamily, ValuePattern};
pub use parser_view::{corrupt_parser_view, page_from_regions, tile_tokens};

use crate::docmodel::{
    load_corpus, save_corpus, AnnotatedPage, BBox, CorpusError, DocumentPage, IntentGroup, KeyIntent, KeyValueLink, LayoutCategory, Nature,
    Role, Segment,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("page too small: {what} needs {needed:.1} page units, {available:.1} available")]
    Placement { what: &'static str, needed: f64, available: f64 },
    #[error("invalid template: {0}")]
    Template(String),
    #[error("invalid noise profile: {0}")]
    Profile(String),
}

/// Inclusive size range in page units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: f64,
    pub max: f64,
}

impl SizeRange {
    pub const fn new(min: f64, max: f64) -> Self {
        SizeRange { min, max }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max <= self.min {
            self.min
        } else {
            rng.random_range(self.min..self.max)
        }
    }
}

/// Text line heights per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontSizes {
    pub title: SizeRange,
    pub section: SizeRange,
    pub form_key: SizeRange,
    pub form_value: SizeRange,
    pub table_key: SizeRange,
    pub table_value: SizeRange,
    pub others: SizeRange,
    /// Line height of handwritten filled-in values.
    pub handwriting: SizeRange,
}

impl Default for FontSizes {
    fn default() -> Self {
        FontSizes {
            title: SizeRange::new(22.0, 34.0),
            section: SizeRange::new(11.5, 13.5),
            form_key: SizeRange::new(11.5, 13.5),
            form_value: SizeRange::new(11.5, 13.5),
            table_key: SizeRange::new(9.5, 11.5),
            table_value: SizeRange::new(9.5, 11.5),
            others: SizeRange::new(8.0, 11.0),
            handwriting: SizeRange::new(13.0, 18.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotLayout {
    /// Key and value share a row (horizontal pair).
    FormRow,
    /// Key heads a table column with its value below (vertical pair).
    TableColumn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateSlot {
    pub intent: KeyIntent,
    pub layout: SlotLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateSpec {
    pub page_w: f64,
    pub page_h: f64,
    pub margin: f64,
    pub slots: Vec<TemplateSlot>,
    /// Inclusive range of title lines.
    pub titles: (usize, usize),
    pub sections: usize,
    /// Inclusive range of `Others` segments.
    pub others: (usize, usize),
    pub fonts: FontSizes,
    /// Character advance as a fraction of line height.
    pub char_aspect: f64,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        let slots = KeyIntent::ALL
            .iter()
            .map(|&intent| TemplateSlot {
                intent,
                layout: match intent.group() {
                    IntentGroup::Form => SlotLayout::FormRow,
                    IntentGroup::Table => SlotLayout::TableColumn,
                },
            })
            .collect();
        TemplateSpec {
            page_w: 1000.0,
            page_h: 1414.0,
            margin: 50.0,
            slots,
            titles: (1, 3),
            sections: 2,
            others: (2, 4),
            fonts: FontSizes::default(),
            char_aspect: 0.5,
        }
    }
}

impl TemplateSpec {
    pub fn validate(&self) -> Result<(), GenerateError> {
        let err = |m: String| Err(GenerateError::Template(m));
        if !(self.page_w > 0.0 && self.page_h > 0.0) {
            return err("page size must be positive".into());
        }
        if self.margin < 0.0 || 2.0 * self.margin >= self.page_w.min(self.page_h) {
            return err("margin leaves no usable area".into());
        }
        if self.slots.len() != KeyIntent::ALL.len() {
            return err(format!("expected 12 slots, found {}", self.slots.len()));
        }
        for intent in KeyIntent::ALL {
            let n = self.slots.iter().filter(|s| s.intent == intent).count();
            if n != 1 {
                return err(format!("intent {intent} appears {n} times"));
            }
        }
        for s in &self.slots {
            let expected = match s.intent.group() {
                IntentGroup::Form => SlotLayout::FormRow,
                IntentGroup::Table => SlotLayout::TableColumn,
            };
            if s.layout != expected {
                return err(format!("intent {} must use layout {expected:?}", s.intent));
            }
        }
        if self.titles.0 > self.titles.1 || self.others.0 > self.others.1 {
            return err("count ranges must have min <= max".into());
        }
        if self.titles.1 > TITLE_TEXTS.len() || self.sections > SECTION_TEXTS.len() {
            return err("too many title or section lines requested".into());
        }
        if !(self.char_aspect > 0.0) {
            return err("char_aspect must be positive".into());
        }
        Ok(())
    }

    fn form_slots(&self) -> impl Iterator<Item = KeyIntent> + '_ {
        self.slots.iter().filter(|s| s.layout == SlotLayout::FormRow).map(|s| s.intent)
    }

    fn table_slots(&self) -> impl Iterator<Item = KeyIntent> + '_ {
        self.slots.iter().filter(|s| s.layout == SlotLayout::TableColumn).map(|s| s.intent)
    }
}

/// Geometric and textual degradation applied to a generated page.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    pub nature: Nature,
    /// Standard deviation of per-box offsets, page units.
    pub bbox_jitter: f64,
    /// Standard deviation of the page rotation, degrees.
    pub rotation: f64,
    pub char_noise_rate: f64,
    pub value_drop_rate: f64,
    pub flip_alignment_rate: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile::digital()
    }
}

impl NoiseProfile {
    pub fn zero() -> Self {
        NoiseProfile {
            nature: Nature::Digital,
            bbox_jitter: 0.0,
            rotation: 0.0,
            char_noise_rate: 0.0,
            value_drop_rate: 0.0,
            flip_alignment_rate: 0.0,
        }
    }

    pub fn digital() -> Self {
        NoiseProfile {
            nature: Nature::Digital,
            bbox_jitter: 0.0,
            rotation: 0.0,
            char_noise_rate: 0.0,
            value_drop_rate: 0.04,
            flip_alignment_rate: 0.03,
        }
    }

    pub fn printed() -> Self {
        NoiseProfile {
            nature: Nature::Printed,
            bbox_jitter: 1.5,
            rotation: 0.4,
            char_noise_rate: 0.03,
            value_drop_rate: 0.05,
            flip_alignment_rate: 0.06,
        }
    }

    pub fn handwritten() -> Self {
        NoiseProfile {
            nature: Nature::Handwritten,
            bbox_jitter: 4.0,
            rotation: 1.0,
            char_noise_rate: 0.12,
            value_drop_rate: 0.10,
            flip_alignment_rate: 0.12,
        }
    }

    pub fn for_nature(nature: Nature) -> Self {
        match nature {
            Nature::Digital => NoiseProfile::digital(),
            Nature::Printed => NoiseProfile::printed(),
            Nature::Handwritten => NoiseProfile::handwritten(),
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        let rates = [
            ("char_noise_rate", self.char_noise_rate),
            ("value_drop_rate", self.value_drop_rate),
            ("flip_alignment_rate", self.flip_alignment_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(GenerateError::Profile(format!("{name} must lie in [0,1], got {r}")));
            }
        }
        for (name, s) in [("bbox_jitter", self.bbox_jitter), ("rotation", self.rotation)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(GenerateError::Profile(format!("{name} must be a finite value >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Per-category segment counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CategoryCounts(pub [usize; 7]);

impl CategoryCounts {
    pub fn get(&self, c: LayoutCategory) -> usize {
        self.0[c.index()]
    }

    pub fn bump(&mut self, c: LayoutCategory) {
        self.0[c.index()] += 1;
    }

    pub fn add(&mut self, other: &CategoryCounts) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += b;
        }
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

impl Serialize for CategoryCounts {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, usize> = LayoutCategory::ALL.iter().map(|c| (c.name(), self.get(*c))).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CategoryCounts {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, usize>::deserialize(d)?;
        let mut out = CategoryCounts::default();
        for (k, v) in map {
            let c = LayoutCategory::from_name(&k).ok_or_else(|| serde::de::Error::custom(format!("unknown category {k}")))?;
            out.0[c.index()] = v;
        }
        Ok(out)
    }
}

/// A generated page together with the generator's own bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDocument {
    pub page: DocumentPage,
    pub links: Vec<KeyValueLink>,
    /// Segments emitted per category, counted at placement time.
    pub counts: CategoryCounts,
    /// Value text before character noise, with the family it was drawn from.
    pub clean_values: Vec<(KeyIntent, PatternFamily, String)>,
}

impl GeneratedDocument {
    pub fn into_annotated(self, doc_id: impl Into<String>) -> AnnotatedPage {
        AnnotatedPage { doc_id: doc_id.into(), page: self.page, links: self.links }
    }
}

const TITLE_TEXTS: [&str; 3] = ["Form 604", "Corporations Act 2001 Section 671B", "Notice of change of interests of substantial holder"];
const SECTION_TEXTS: [&str; 2] = ["1. Details of substantial holder (1)", "2. Previous and present voting power (2)"];
const OTHERS_TEXTS: [&str; 10] = [
    "page 1/2",
    "Annexure A",
    "sign here",
    "capacity Company Secretary",
    "This is annexure A referred to in Form 604",
    "See annexure",
    "Signature",
    "(5) Voting power of substantial holder",
    "Lodged with ASX",
    "604 GUIDE page 1/1",
];

/// Where an `Others` segment is placed.
#[derive(Clone, Copy, PartialEq, Eq)]
enum OtherSlot {
    Header,
    BeforeRow(usize),
    Footer,
}

struct Builder {
    segments: Vec<Segment>,
    links: Vec<KeyValueLink>,
    counts: CategoryCounts,
    clean_values: Vec<(KeyIntent, PatternFamily, String)>,
    char_aspect: f64,
}

impl Builder {
    fn text_width(&self, text: &str, h: f64) -> f64 {
        text.chars().count() as f64 * h * self.char_aspect
    }

    fn push(&mut self, bbox: BBox, text: String, category: LayoutCategory, intent: Option<KeyIntent>) -> usize {
        let id = self.segments.len();
        self.segments.push(Segment::new(id, bbox, text, category, intent));
        self.counts.bump(category);
        id
    }
}

fn other_text<R: Rng + ?Sized>(rng: &mut R) -> String {
    match rng.random_range(0..13) {
        i @ 0..=9 => OTHERS_TEXTS[i].to_string(),
        10 => format!("print name {}", grammar::person_name(rng)),
        11 => format!("date {}", format_date(grammar::random_date(rng), PatternFamily::DateSlash)),
        _ => format!(
            "{} ACN {:03} {:03} {:03}",
            grammar::company_name(rng),
            rng.random_range(0..1000),
            rng.random_range(0..1000),
            rng.random_range(0..1000)
        ),
    }
}

/// Generates one page. Deterministic for a fixed `(seed, template, profile)`.
pub fn generate_document(seed: u64, template: &TemplateSpec, profile: &NoiseProfile) -> Result<GeneratedDocument, GenerateError> {
    template.validate()?;
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns = default_patterns();
    let fonts = &template.fonts;
    let mut b = Builder {
        segments: Vec::new(),
        links: Vec::new(),
        counts: CategoryCounts::default(),
        clean_values: Vec::new(),
        char_aspect: template.char_aspect,
    };

    let left = template.margin + rng.random_range(0.0..30.0);
    let right = template.page_w - template.margin;
    let bottom = template.page_h - template.margin;
    let usable_w = right - left;
    let mut y = template.margin + rng.random_range(0.0..50.0);

    let n_titles = rng.random_range(template.titles.0..=template.titles.1);
    let n_others = rng.random_range(template.others.0..=template.others.1);
    let form: Vec<KeyIntent> = template.form_slots().collect();
    let table: Vec<KeyIntent> = template.table_slots().collect();
    let other_slots: Vec<OtherSlot> = (0..n_others)
        .map(|_| match rng.random_range(0..4) {
            0 => OtherSlot::Header,
            1 => OtherSlot::Footer,
            _ => OtherSlot::BeforeRow(rng.random_range(0..form.len().max(1))),
        })
        .collect();

    let h_key = fonts.form_key.sample(&mut rng);
    let handwritten = profile.nature == Nature::Handwritten;
    let value_font = |rng: &mut ChaCha8Rng, printed: &SizeRange| {
        if handwritten {
            fonts.handwriting.sample(rng)
        } else {
            printed.sample(rng)
        }
    };
    let h_val = value_font(&mut rng, &fonts.form_value);
    let row_gap = rng.random_range(6.0..16.0);

    let place_other = |b: &mut Builder, rng: &mut ChaCha8Rng, y: &mut f64| {
        let h = fonts.others.sample(rng);
        let text = other_text(rng);
        let w = b.text_width(&text, h).min(usable_w);
        let x = left + rng.random_range(0.0..(usable_w - w).max(1.0));
        b.push(BBox::new(x, *y, w, h), text, LayoutCategory::Others, None);
        *y += h + row_gap;
    };

    for _ in other_slots.iter().filter(|s| **s == OtherSlot::Header) {
        place_other(&mut b, &mut rng, &mut y);
    }

    for text in TITLE_TEXTS.iter().take(n_titles) {
        let h = fonts.title.sample(&mut rng);
        let w = b.text_width(text, h * 0.6).min(usable_w);
        let x = left + rng.random_range(0.0..(usable_w - w).max(1.0) * 0.3);
        b.push(BBox::new(x, y, w, h), text.to_string(), LayoutCategory::Title, None);
        y += h + row_gap;
    }

    // Values are drawn up front so the layout knows their widths.
    let mut drawn: BTreeMap<KeyIntent, (PatternFamily, String, bool, bool)> = BTreeMap::new();
    for slot in &template.slots {
        let pattern = &patterns[slot.intent.index()];
        let family = pattern.sample_family(&mut rng);
        let text = render_value(family, &mut rng);
        let dropped = rng.random_bool(profile.value_drop_rate);
        let flipped = rng.random_bool(profile.flip_alignment_rate);
        drawn.insert(slot.intent, (family, text, dropped, flipped));
    }

    let max_key_w = form.iter().map(|i| b.text_width(i.canonical_key_text(), h_key)).fold(0.0, f64::max);
    let value_x = left + max_key_w + rng.random_range(20.0..60.0);
    let mut sections_placed = 0;
    let place_section = |b: &mut Builder, rng: &mut ChaCha8Rng, y: &mut f64, idx: usize| {
        let h = fonts.section.sample(rng);
        let text = SECTION_TEXTS[idx];
        let w = b.text_width(text, h).min(usable_w);
        b.push(BBox::new(left, *y, w, h), text.to_string(), LayoutCategory::Section, None);
        *y += h + row_gap;
    };

    for (row, &intent) in form.iter().enumerate() {
        if intent == KeyIntent::HoldNm && sections_placed < template.sections {
            place_section(&mut b, &mut rng, &mut y, sections_placed);
            sections_placed += 1;
        }
        for _ in other_slots.iter().filter(|s| **s == OtherSlot::BeforeRow(row)) {
            place_other(&mut b, &mut rng, &mut y);
        }
        let key_text = intent.canonical_key_text();
        let key_w = b.text_width(key_text, h_key);
        let key = b.push(BBox::new(left, y, key_w, h_key), key_text.to_string(), intent.category(Role::Key), Some(intent));
        let (family, text, dropped, flipped) = drawn[&intent].clone();
        let mut row_h = h_key;
        let value = if dropped {
            None
        } else {
            let w_full = b.text_width(&text, h_val);
            let bbox = if flipped {
                let vy = y + h_key + 4.0;
                row_h = h_key + 4.0 + h_val;
                let x = left + rng.random_range(0.0..20.0);
                BBox::new(x, vy, w_full.min(right - x), h_val)
            } else {
                row_h = h_key.max(h_val);
                BBox::new(value_x, y + (h_key - h_val) / 2.0, w_full.min(right - value_x).max(1.0), h_val)
            };
            b.clean_values.push((intent, family, text.clone()));
            Some(b.push(bbox, text, intent.category(Role::Value), Some(intent)))
        };
        b.links.push(KeyValueLink { key_segment: key, value_segment: value, intent });
        y += row_h + row_gap;
    }
    while sections_placed < template.sections {
        place_section(&mut b, &mut rng, &mut y, sections_placed);
        sections_placed += 1;
    }

    if !table.is_empty() {
        let h_tk = fonts.table_key.sample(&mut rng);
        let h_tv = value_font(&mut rng, &fonts.table_value);
        let gap_in_cell = 6.0;
        let mut flipped: Vec<bool> = table.iter().map(|i| drawn[i].3 && !drawn[i].2).collect();
        let key_ws: Vec<f64> = table.iter().map(|i| b.text_width(i.canonical_key_text(), h_tk)).collect();
        let val_ws: Vec<f64> = table.iter().map(|i| if drawn[i].2 { 0.0 } else { b.text_width(&drawn[i].1, h_tv) }).collect();
        let col_w = |flipped: &[bool], c: usize| {
            if flipped[c] {
                key_ws[c] + gap_in_cell + val_ws[c]
            } else {
                key_ws[c].max(val_ws[c])
            }
        };
        let min_gap = 10.0;
        let width = |flipped: &[bool]| (0..table.len()).map(|c| col_w(flipped, c)).sum::<f64>() + min_gap * (table.len() - 1) as f64;
        // Cancel flips from the right until the header row fits.
        for c in (0..table.len()).rev() {
            if width(&flipped) <= usable_w {
                break;
            }
            flipped[c] = false;
        }
        let needed = width(&flipped);
        if needed > usable_w {
            return Err(GenerateError::Placement { what: "table header row", needed, available: usable_w });
        }
        let slack = (usable_w - needed) / (table.len().max(2) - 1) as f64;
        let col_gap = min_gap + rng.random_range(0.0..=slack.min(30.0));
        let header_y = y;
        let mut x = left;
        let mut any_below = false;
        for (c, &intent) in table.iter().enumerate() {
            let key = b.push(
                BBox::new(x, header_y, key_ws[c], h_tk),
                intent.canonical_key_text().to_string(),
                intent.category(Role::Key),
                Some(intent),
            );
            let (family, text, dropped, _) = drawn[&intent].clone();
            let value = if dropped {
                None
            } else {
                let bbox = if flipped[c] {
                    BBox::new(x + key_ws[c] + gap_in_cell, header_y + (h_tk - h_tv) / 2.0, val_ws[c], h_tv)
                } else {
                    any_below = true;
                    BBox::new(x, header_y + h_tk + 6.0, val_ws[c], h_tv)
                };
                b.clean_values.push((intent, family, text.clone()));
                Some(b.push(bbox, text, intent.category(Role::Value), Some(intent)))
            };
            b.links.push(KeyValueLink { key_segment: key, value_segment: value, intent });
            x += col_w(&flipped, c) + col_gap;
        }
        y = header_y + h_tk + row_gap + if any_below { 6.0 + h_tv } else { 0.0 };
    }

    for _ in other_slots.iter().filter(|s| **s == OtherSlot::Footer) {
        place_other(&mut b, &mut rng, &mut y);
    }

    if y > bottom {
        return Err(GenerateError::Placement { what: "page content", needed: y, available: bottom });
    }

    // Degradation.
    if profile.char_noise_rate > 0.0 {
        for seg in b.segments.iter_mut().filter(|s| s.role == Some(Role::Value)) {
            seg.text = corrupt_text(&seg.text, profile.char_noise_rate, &mut rng);
        }
    }
    let theta =
        if profile.rotation > 0.0 { Normal::new(0.0, profile.rotation).expect("finite sigma").sample(&mut rng).to_radians() } else { 0.0 };
    let jitter = (profile.bbox_jitter > 0.0).then(|| Normal::new(0.0, profile.bbox_jitter).expect("finite sigma"));
    let (cx, cy) = (template.page_w / 2.0, template.page_h / 2.0);
    for seg in &mut b.segments {
        let mut bb = seg.bbox;
        if theta != 0.0 {
            bb = rotate_aabb(&bb, theta, cx, cy);
        }
        if let Some(j) = &jitter {
            let dx = j.sample(&mut rng);
            let dy = j.sample(&mut rng);
            let dw = j.sample(&mut rng) * 0.5;
            let dh = j.sample(&mut rng) * 0.25;
            bb = BBox::new(bb.x + dx, bb.y + dy, (bb.w + dw).max(1.0), (bb.h + dh).max(1.0));
        }
        seg.bbox = clamp_to_page(&bb, template.page_w, template.page_h);
    }

    let tokens = b.segments.iter().flat_map(|s| tile_tokens(s.id, &s.bbox, &s.text)).collect();
    let page = DocumentPage { page_w: template.page_w, page_h: template.page_h, nature: profile.nature, segments: b.segments, tokens };
    Ok(GeneratedDocument { page, links: b.links, counts: b.counts, clean_values: b.clean_values })
}

fn rotate_aabb(b: &BBox, theta: f64, cx: f64, cy: f64) -> BBox {
    let (s, c) = theta.sin_cos();
    let corners = [(b.x, b.y), (b.right(), b.y), (b.x, b.bottom()), (b.right(), b.bottom())];
    let mut x0 = f64::INFINITY;
    let mut y0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for (x, y) in corners {
        let rx = cx + (x - cx) * c - (y - cy) * s;
        let ry = cy + (x - cx) * s + (y - cy) * c;
        x0 = x0.min(rx);
        y0 = y0.min(ry);
        x1 = x1.max(rx);
        y1 = y1.max(ry);
    }
    BBox::from_corners(x0, y0, x1, y1)
}

fn clamp_to_page(b: &BBox, w: f64, h: f64) -> BBox {
    let x0 = b.x.clamp(0.0, w);
    let y0 = b.y.clamp(0.0, h);
    let x1 = b.right().clamp(0.0, w);
    let y1 = b.bottom().clamp(0.0, h);
    BBox::from_corners(x0, y0, x1, y1)
}

const NOISE_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

/// Per-character substitution or deletion with probability `rate` each.
/// At least one character always survives.
pub fn corrupt_text<R: Rng + ?Sized>(text: &str, rate: f64, rng: &mut R) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if rng.random_bool(rate) {
            if rng.random_bool(0.5) {
                let mut sub = NOISE_CHARS[rng.random_range(0..NOISE_CHARS.len())] as char;
                if sub == ch {
                    sub = if ch == 'x' { 'y' } else { 'x' };
                }
                out.push(sub);
            }
        } else {
            out.push(ch);
        }
    }
    if out.is_empty() {
        if let Some(c) = text.chars().next() {
            out.push(c);
        }
    }
    out
}

/// Corpus partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    TestDigital,
    TestPrinted,
    TestHandwritten,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Train, Split::Val, Split::TestDigital, Split::TestPrinted, Split::TestHandwritten];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::TestDigital => "test_digital",
            Split::TestPrinted => "test_printed",
            Split::TestHandwritten => "test_handwritten",
        }
    }

    pub fn from_name(s: &str) -> Option<Split> {
        Split::ALL.iter().copied().find(|x| x.name() == s)
    }

    pub fn nature(self) -> Nature {
        match self {
            Split::TestPrinted => Nature::Printed,
            Split::TestHandwritten => Nature::Handwritten,
            _ => Nature::Digital,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test_digital: usize,
    pub test_printed: usize,
    pub test_handwritten: usize,
}

impl Default for SplitCounts {
    /// 200 digital documents split 70/10/20, plus 20 printed and 20
    /// handwritten test documents.
    fn default() -> Self {
        SplitCounts { train: 140, val: 20, test_digital: 40, test_printed: 20, test_handwritten: 20 }
    }
}

impl SplitCounts {
    pub fn new(train: usize, val: usize, test_digital: usize, test_printed: usize, test_handwritten: usize) -> Self {
        SplitCounts { train, val, test_digital, test_printed, test_handwritten }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::TestDigital => self.test_digital,
            Split::TestPrinted => self.test_printed,
            Split::TestHandwritten => self.test_handwritten,
        }
    }

    pub fn total(&self) -> usize {
        Split::ALL.iter().map(|s| self.get(*s)).sum()
    }
}

/// Noise profile per nature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSet {
    pub digital: NoiseProfile,
    pub printed: NoiseProfile,
    pub handwritten: NoiseProfile,
}

impl Default for ProfileSet {
    fn default() -> Self {
        ProfileSet { digital: NoiseProfile::digital(), printed: NoiseProfile::printed(), handwritten: NoiseProfile::handwritten() }
    }
}

impl ProfileSet {
    pub fn zero() -> Self {
        let z = NoiseProfile::zero();
        ProfileSet {
            digital: z,
            printed: NoiseProfile { nature: Nature::Printed, ..z },
            handwritten: NoiseProfile { nature: Nature::Handwritten, ..z },
        }
    }

    pub fn get(&self, nature: Nature) -> &NoiseProfile {
        match nature {
            Nature::Digital => &self.digital,
            Nature::Printed => &self.printed,
            Nature::Handwritten => &self.handwritten,
        }
    }

    pub fn get_mut(&mut self, nature: Nature) -> &mut NoiseProfile {
        match nature {
            Nature::Digital => &mut self.digital,
            Nature::Printed => &mut self.printed,
            Nature::Handwritten => &mut self.handwritten,
        }
    }
}

/// Generator configuration; every key has a built-in default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub counts: SplitCounts,
    pub profiles: ProfileSet,
    pub template: TemplateSpec,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of document `index` in `split`, derived from the master seed.
pub fn document_seed(master: u64, split: Split, index: usize) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(((split.index() as u64) << 40) ^ index as u64))
}

/// Generation summary written next to the corpus files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub documents: BTreeMap<String, usize>,
    pub components: BTreeMap<String, CategoryCounts>,
    pub profiles: ProfileSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub splits: BTreeMap<Split, Vec<AnnotatedPage>>,
    pub manifest: Manifest,
}

impl GeneratedCorpus {
    pub fn split(&self, split: Split) -> &[AnnotatedPage] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Writes `<split>.json` for every split plus `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io { path: dir.display().to_string(), source })?;
        for (split, docs) in &self.splits {
            save_corpus(docs, dir.join(format!("{}.json", split.name())))?;
        }
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
    }
}

/// Loads one split file from a corpus directory.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Vec<AnnotatedPage>, CorpusError> {
    load_corpus(dir.as_ref().join(format!("{}.json", split.name())))
}

/// Generates every split. Each document draws from its own seed substream, so
/// the result does not depend on generation order.
pub fn generate_corpus(config: &CorpusConfig) -> Result<GeneratedCorpus, GenerateError> {
    let mut splits = BTreeMap::new();
    let mut documents = BTreeMap::new();
    let mut components = BTreeMap::new();
    for split in Split::ALL {
        let n = config.counts.get(split);
        let profile = config.profiles.get(split.nature());
        let mut docs = Vec::with_capacity(n);
        let mut counts = CategoryCounts::default();
        for i in 0..n {
            let g = generate_document(document_seed(config.seed, split, i), &config.template, profile)?;
            counts.add(&g.counts);
            docs.push(g.into_annotated(format!("{}-{i:04}", split.name())));
        }
        documents.insert(split.name().to_string(), n);
        components.insert(split.name().to_string(), counts);
        splits.insert(split, docs);
    }
    Ok(GeneratedCorpus { splits, manifest: Manifest { seed: config.seed, documents, components, profiles: config.profiles } })
}
