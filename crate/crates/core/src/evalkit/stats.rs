//! Corpus statistics: component counts, box geometry, value lengths, pair
//! alignment and value-pattern mix.

use crate::docmodel::{pair_relation, AnnotatedPage, IntentGroup, KeyIntent, LayoutCategory, PairRelation, Role};
use crate::synthform::{tag_value, CategoryCounts};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Mean box geometry of one layout category.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryGeometry {
    pub segments: usize,
    pub avg_width: f64,
    pub avg_height: f64,
    pub avg_pixels: f64,
    pub avg_tokens: f64,
}

/// Horizontal/vertical split of the links of one intent. Empty values are
/// not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationRatio {
    pub horizontal: usize,
    pub vertical: usize,
}

impl RelationRatio {
    pub fn total(&self) -> usize {
        self.horizontal + self.vertical
    }

    pub fn horizontal_pct(&self) -> f64 {
        pct(self.horizontal, self.total())
    }

    pub fn vertical_pct(&self) -> f64 {
        pct(self.vertical, self.total())
    }

    /// Pairs whose alignment differs from the one their template places
    /// them in: vertical form pairs and horizontal table pairs.
    pub fn off_template(&self, intent: KeyIntent) -> usize {
        match intent.group() {
            IntentGroup::Form => self.vertical,
            IntentGroup::Table => self.horizontal,
        }
    }
}

fn pct(part: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * part as f64 / total as f64
    }
}

/// Mean character counts of the key and value texts of an intent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CharCounts {
    pub keys: usize,
    pub avg_key_chars: f64,
    pub values: usize,
    pub avg_value_chars: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    /// Segment counts per split and category.
    pub components: BTreeMap<String, CategoryCounts>,
    pub geometry: BTreeMap<String, CategoryGeometry>,
    pub char_counts: BTreeMap<String, CharCounts>,
    pub relations: BTreeMap<String, RelationRatio>,
    /// Percentage of present values per pattern family, per intent. Values no
    /// tagger recognises are counted under `unmatched`.
    pub value_patterns: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Default)]
struct GeoAcc {
    n: usize,
    w: f64,
    h: f64,
    px: f64,
    tokens: usize,
}

/// Statistics over named splits. Categories and intents that never occur
/// are omitted from the per-category and per-intent tables.
pub fn component_stats(splits: &[(&str, &[AnnotatedPage])]) -> StatsReport {
    let mut report = StatsReport::default();
    let mut geo: BTreeMap<LayoutCategory, GeoAcc> = BTreeMap::new();
    let mut chars: BTreeMap<KeyIntent, (usize, usize, usize, usize)> = BTreeMap::new();
    let mut patterns: BTreeMap<KeyIntent, BTreeMap<String, usize>> = BTreeMap::new();
    for (name, docs) in splits {
        let mut counts = CategoryCounts::default();
        for doc in *docs {
            for s in &doc.page.segments {
                counts.bump(s.category);
                let g = geo.entry(s.category).or_default();
                g.n += 1;
                g.w += s.bbox.w;
                g.h += s.bbox.h;
                g.px += s.bbox.area();
                g.tokens += doc.page.tokens_of(s.id).count();
                if let Some(intent) = s.intent {
                    let c = chars.entry(intent).or_default();
                    let len = s.text.chars().count();
                    match s.role {
                        Some(Role::Key) => {
                            c.0 += 1;
                            c.1 += len;
                        }
                        Some(Role::Value) => {
                            c.2 += 1;
                            c.3 += len;
                            let family = tag_value(intent, &s.text).map_or("unmatched", |f| f.name());
                            *patterns.entry(intent).or_default().entry(family.to_string()).or_default() += 1;
                        }
                        None => {}
                    }
                }
            }
        }
        report.components.insert(name.to_string(), counts);
    }
    let all: Vec<&AnnotatedPage> = splits.iter().flat_map(|(_, d)| d.iter()).collect();
    report.relations = relations_of(all.iter().copied()).into_iter().map(|(k, v)| (k.name().to_string(), v)).collect();
    for (c, g) in geo {
        let n = g.n as f64;
        report.geometry.insert(
            c.name().to_string(),
            CategoryGeometry {
                segments: g.n,
                avg_width: g.w / n,
                avg_height: g.h / n,
                avg_pixels: g.px / n,
                avg_tokens: g.tokens as f64 / n,
            },
        );
    }
    for (intent, (kn, kc, vn, vc)) in chars {
        let avg = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
        report.char_counts.insert(
            intent.name().to_string(),
            CharCounts { keys: kn, avg_key_chars: avg(kc, kn), values: vn, avg_value_chars: avg(vc, vn) },
        );
    }
    for (intent, fams) in patterns {
        let total: usize = fams.values().sum();
        report.value_patterns.insert(intent.name().to_string(), fams.into_iter().map(|(f, n)| (f, pct(n, total))).collect());
    }
    report
}

fn relations_of<'a>(docs: impl Iterator<Item = &'a AnnotatedPage>) -> BTreeMap<KeyIntent, RelationRatio> {
    let mut out: BTreeMap<KeyIntent, RelationRatio> = BTreeMap::new();
    for doc in docs {
        for link in &doc.links {
            let Some(v) = link.value_segment else { continue };
            let (Some(key), Some(value)) = (doc.page.segment(link.key_segment), doc.page.segment(v)) else {
                continue;
            };
            let r = out.entry(link.intent).or_default();
            match pair_relation(&key.bbox, &value.bbox) {
                PairRelation::Horizontal => r.horizontal += 1,
                PairRelation::Vertical => r.vertical += 1,
            }
        }
    }
    out
}

/// Per-intent alignment of every link with a present value.
pub fn relation_ratio_stats(docs: &[AnnotatedPage]) -> BTreeMap<KeyIntent, RelationRatio> {
    relations_of(docs.iter())
}
