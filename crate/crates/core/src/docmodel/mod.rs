//! Page, segment and annotation types shared by every other module.

mod bbox;
mod schema;

pub use bbox::{iou, pair_relation, BBox, PairRelation, RELATION_OVERLAP_THRESHOLD};
pub use schema::{load_corpus, read_corpus, save_corpus, write_corpus, CorpusError, FORMAT_NAME, FORMAT_VERSION};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Token boxes may stick out of their parent segment by this many page units.
pub const TOKEN_SLACK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayoutCategory {
    Title,
    Section,
    FormKey,
    FormValue,
    TableKey,
    TableValue,
    Others,
}

impl LayoutCategory {
    pub const ALL: [LayoutCategory; 7] = [
        LayoutCategory::Title,
        LayoutCategory::Section,
        LayoutCategory::FormKey,
        LayoutCategory::FormValue,
        LayoutCategory::TableKey,
        LayoutCategory::TableValue,
        LayoutCategory::Others,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayoutCategory::Title => "Title",
            LayoutCategory::Section => "Section",
            LayoutCategory::FormKey => "Form Key",
            LayoutCategory::FormValue => "Form Value",
            LayoutCategory::TableKey => "Table Key",
            LayoutCategory::TableValue => "Table Value",
            LayoutCategory::Others => "Others",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        LayoutCategory::ALL.iter().copied().find(|c| c.name() == s)
    }

    /// Key/value categories must carry an intent.
    pub fn is_key_value(self) -> bool {
        self.role().is_some()
    }

    pub fn role(self) -> Option<Role> {
        match self {
            LayoutCategory::FormKey | LayoutCategory::TableKey => Some(Role::Key),
            LayoutCategory::FormValue | LayoutCategory::TableValue => Some(Role::Value),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LayoutCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Key,
    Value,
}

/// Which half of the standard template an intent lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntentGroup {
    Form,
    Table,
}

/// The twelve form fields a key can ask for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyIntent {
    ComNm,
    ComId,
    HoldNm,
    HoldId,
    ChgDate,
    GvnDate,
    NtcDate,
    Class,
    PreShr,
    PrePct,
    NewShr,
    NewPct,
}

impl KeyIntent {
    pub const ALL: [KeyIntent; 12] = [
        KeyIntent::ComNm,
        KeyIntent::ComId,
        KeyIntent::HoldNm,
        KeyIntent::HoldId,
        KeyIntent::ChgDate,
        KeyIntent::GvnDate,
        KeyIntent::NtcDate,
        KeyIntent::Class,
        KeyIntent::PreShr,
        KeyIntent::PrePct,
        KeyIntent::NewShr,
        KeyIntent::NewPct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KeyIntent::ComNm => "com_nm",
            KeyIntent::ComId => "com_id",
            KeyIntent::HoldNm => "hold_nm",
            KeyIntent::HoldId => "hold_id",
            KeyIntent::ChgDate => "chg_date",
            KeyIntent::GvnDate => "gvn_date",
            KeyIntent::NtcDate => "ntc_date",
            KeyIntent::Class => "class",
            KeyIntent::PreShr => "pre_shr",
            KeyIntent::PrePct => "pre_pct",
            KeyIntent::NewShr => "new_shr",
            KeyIntent::NewPct => "new_pct",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        KeyIntent::ALL.iter().copied().find(|k| k.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn group(self) -> IntentGroup {
        if self.index() < 7 {
            IntentGroup::Form
        } else {
            IntentGroup::Table
        }
    }

    pub fn category(self, role: Role) -> LayoutCategory {
        match (self.group(), role) {
            (IntentGroup::Form, Role::Key) => LayoutCategory::FormKey,
            (IntentGroup::Form, Role::Value) => LayoutCategory::FormValue,
            (IntentGroup::Table, Role::Key) => LayoutCategory::TableKey,
            (IntentGroup::Table, Role::Value) => LayoutCategory::TableValue,
        }
    }

    /// Key text printed by the standard template.
    pub fn canonical_key_text(self) -> &'static str {
        match self {
            KeyIntent::ComNm => "To Company Name/Scheme",
            KeyIntent::ComId => "ACN/ARSN",
            KeyIntent::HoldNm => "Name",
            KeyIntent::HoldId => "ACN/ARSN (if applicable)",
            KeyIntent::ChgDate => "There was a change in the interests of the substantial holder on",
            KeyIntent::GvnDate => "The previous notice was given to the company on",
            KeyIntent::NtcDate => "The previous notice was dated",
            KeyIntent::Class => "Class of securities",
            KeyIntent::PreShr => "Previous person's votes",
            KeyIntent::PrePct => "Previous voting power",
            KeyIntent::NewShr => "Present person's votes",
            KeyIntent::NewPct => "Present voting power",
        }
    }
}

impl fmt::Display for KeyIntent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KeyIntent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KeyIntent::from_name(s).ok_or_else(|| {
            let names: Vec<_> = KeyIntent::ALL.iter().map(|k| k.name()).collect();
            format!("unknown key intent '{s}'; expected one of: {}", names.join(", "))
        })
    }
}

/// Provenance of a scanned or born-digital page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nature {
    Digital,
    Printed,
    Handwritten,
}

impl Nature {
    pub const ALL: [Nature; 3] = [Nature::Digital, Nature::Printed, Nature::Handwritten];

    pub fn name(self) -> &'static str {
        match self {
            Nature::Digital => "digital",
            Nature::Printed => "printed",
            Nature::Handwritten => "handwritten",
        }
    }

    /// One-letter tag used in report tables.
    pub fn tag(self) -> &'static str {
        match self {
            Nature::Digital => "D",
            Nature::Printed => "P",
            Nature::Handwritten => "H",
        }
    }
}

impl fmt::Display for Nature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: usize,
    pub bbox: BBox,
    pub text: String,
    pub category: LayoutCategory,
    pub intent: Option<KeyIntent>,
    pub role: Option<Role>,
}

impl Segment {
    /// Builds a segment whose role is implied by the category.
    pub fn new(id: usize, bbox: BBox, text: impl Into<String>, category: LayoutCategory, intent: Option<KeyIntent>) -> Self {
        Segment { id, bbox, text: text.into(), category, intent, role: category.role() }
    }

    /// Annotation label: compound `<intent>_key` / `<intent>_value` for key and
    /// value segments, the layout category name otherwise.
    pub fn label(&self) -> String {
        match (self.intent, self.role) {
            (Some(i), Some(Role::Key)) => format!("{}_key", i.name()),
            (Some(i), Some(Role::Value)) => format!("{}_value", i.name()),
            _ => self.category.name().to_string(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !self.bbox.is_valid() {
            return Err("bbox must have finite coordinates and non-negative size".into());
        }
        if self.intent.is_some() != self.category.is_key_value() {
            return Err(format!(
                "intent must be present exactly for key/value categories (category {}, intent {:?})",
                self.category, self.intent
            ));
        }
        if self.role != self.category.role() {
            return Err(format!("role {:?} does not match category {}", self.role, self.category));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenBox {
    pub text: String,
    pub bbox: BBox,
    pub parent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentPage {
    pub page_w: f64,
    pub page_h: f64,
    pub nature: Nature,
    pub segments: Vec<Segment>,
    pub tokens: Vec<TokenBox>,
}

impl DocumentPage {
    pub fn segment(&self, id: usize) -> Option<&Segment> {
        self.segments.get(id).filter(|s| s.id == id)
    }

    /// First key segment carrying the intent.
    pub fn key_segment(&self, intent: KeyIntent) -> Option<&Segment> {
        self.segments.iter().find(|s| s.intent == Some(intent) && s.role == Some(Role::Key))
    }

    pub fn value_segment(&self, intent: KeyIntent) -> Option<&Segment> {
        self.segments.iter().find(|s| s.intent == Some(intent) && s.role == Some(Role::Value))
    }

    /// Checks every page, segment and token invariant. Errors name the
    /// offending item and field.
    pub fn check(&self) -> Result<(), String> {
        if !(self.page_w > 0.0 && self.page_w.is_finite()) {
            return Err("page_w: must be positive".into());
        }
        if !(self.page_h > 0.0 && self.page_h.is_finite()) {
            return Err("page_h: must be positive".into());
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.id != i {
                return Err(format!("segments[{i}].id: expected {i}, found {}", seg.id));
            }
            seg.check().map_err(|e| format!("segment {}: {e}", seg.id))?;
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            let parent = self.segments.get(tok.parent).ok_or_else(|| format!("tokens[{i}].parent: no segment {}", tok.parent))?;
            if !tok.bbox.is_valid() {
                return Err(format!("tokens[{i}].bbox: invalid box"));
            }
            if !parent.bbox.expand(TOKEN_SLACK).contains(&tok.bbox) {
                return Err(format!("tokens[{i}].bbox: outside parent segment {}", tok.parent));
            }
        }
        Ok(())
    }

    pub fn tokens_of(&self, segment: usize) -> impl Iterator<Item = &TokenBox> {
        self.tokens.iter().filter(move |t| t.parent == segment)
    }
}

/// A key and the segment holding its answer. `value_segment` is `None` when
/// the form was left empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyValueLink {
    pub key_segment: usize,
    pub value_segment: Option<usize>,
    pub intent: KeyIntent,
}

impl KeyValueLink {
    pub fn check(&self, page: &DocumentPage) -> Result<(), String> {
        let key = page.segment(self.key_segment).ok_or_else(|| format!("key: no segment {}", self.key_segment))?;
        if key.role != Some(Role::Key) || key.intent != Some(self.intent) {
            return Err(format!("key: segment {} is not a {} key", key.id, self.intent));
        }
        if let Some(v) = self.value_segment {
            if v == self.key_segment {
                return Err("value: must differ from key".into());
            }
            let value = page.segment(v).ok_or_else(|| format!("value: no segment {v}"))?;
            if value.role != Some(Role::Value) || value.intent != Some(self.intent) {
                return Err(format!("value: segment {v} is not a {} value", self.intent));
            }
        }
        Ok(())
    }
}

/// One annotated document: the page plus its key-value links.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPage {
    pub doc_id: String,
    pub page: DocumentPage,
    pub links: Vec<KeyValueLink>,
}

impl AnnotatedPage {
    pub fn check(&self) -> Result<(), String> {
        self.page.check()?;
        for (i, link) in self.links.iter().enumerate() {
            link.check(&self.page).map_err(|e| format!("links[{i}].{e}"))?;
        }
        Ok(())
    }

    pub fn link(&self, intent: KeyIntent) -> Option<&KeyValueLink> {
        self.links.iter().find(|l| l.intent == intent)
    }
}
