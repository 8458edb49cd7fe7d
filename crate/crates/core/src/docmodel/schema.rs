//! JSON annotation file format.
//!
//! ```text
//! {
//!   "format": "formpoint-annotations",
//!   "version": 1,
//!   "documents": [
//!     {
//!       "id": "train-0000",
//!       "page_w": 1000.0, "page_h": 1414.0, "nature": "digital",
//!       "segments": [ { "id": 0, "bbox": [x, y, w, h], "text": "...", "label": "Title" }, ... ],
//!       "tokens":   [ { "text": "...", "bbox": [x, y, w, h], "parent": 0 }, ... ],
//!       "links":    [ { "key": 3, "value": 4, "intent": "com_nm" }, ... ]
//!     }
//!   ]
//! }
//! ```
//!
//! `label` is either a layout category name ("Title", "Section", "Others",
//! "Form Key", ...) or a compound key/value label such as "com_nm_key" or
//! "class_value". Key and value segments must use the compound form.

use super::{AnnotatedPage, BBox, DocumentPage, KeyIntent, KeyValueLink, LayoutCategory, Nature, Role, Segment, TokenBox};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_NAME: &str = "formpoint-annotations";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotation JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema violation in document {record} ({doc_id}): {field}: {message}")]
    Schema { record: usize, doc_id: String, field: String, message: String },
    #[error("duplicate segment id {id} in document {record} ({doc_id})")]
    DuplicateSegmentId { record: usize, doc_id: String, id: usize },
    #[error("unsupported annotation format '{0}'")]
    Format(String),
}

#[derive(Serialize, Deserialize)]
struct FileRecord {
    format: String,
    version: u32,
    documents: Vec<DocRecord>,
}

#[derive(Serialize, Deserialize)]
struct DocRecord {
    #[serde(default)]
    id: String,
    page_w: f64,
    page_h: f64,
    nature: Nature,
    segments: Vec<SegmentRecord>,
    #[serde(default)]
    tokens: Vec<TokenRecord>,
    #[serde(default)]
    links: Vec<LinkRecord>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    id: usize,
    bbox: BBox,
    text: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    text: String,
    bbox: BBox,
    parent: usize,
}

#[derive(Serialize, Deserialize)]
struct LinkRecord {
    key: usize,
    value: Option<usize>,
    intent: String,
}

/// Parses a label into (category, intent).
fn parse_label(label: &str) -> Result<(LayoutCategory, Option<KeyIntent>), String> {
    if let Some(cat) = LayoutCategory::from_name(label) {
        return Ok((cat, None));
    }
    let (stem, role) = if let Some(stem) = label.strip_suffix("_key") {
        (stem, Role::Key)
    } else if let Some(stem) = label.strip_suffix("_value") {
        (stem, Role::Value)
    } else {
        return Err(format!("unknown label '{label}'"));
    };
    let intent = KeyIntent::from_name(stem).ok_or_else(|| format!("unknown key intent in label '{label}'"))?;
    Ok((intent.category(role), Some(intent)))
}

fn convert(record: usize, doc: DocRecord) -> Result<AnnotatedPage, CorpusError> {
    let doc_id = doc.id.clone();
    let schema = |field: String, message: String| CorpusError::Schema { record, doc_id: doc_id.clone(), field, message };

    let mut seen = HashSet::new();
    let mut segments = Vec::with_capacity(doc.segments.len());
    for (i, s) in doc.segments.into_iter().enumerate() {
        if !seen.insert(s.id) {
            return Err(CorpusError::DuplicateSegmentId { record, doc_id: doc_id.clone(), id: s.id });
        }
        if s.id != i {
            return Err(schema(format!("segments[{i}].id"), format!("expected {i}, found {}", s.id)));
        }
        let (category, intent) = parse_label(&s.label).map_err(|m| schema(format!("segment {}.label", s.id), m))?;
        let seg = Segment::new(s.id, s.bbox, s.text, category, intent);
        seg.check().map_err(|m| schema(format!("segment {}", s.id), m))?;
        segments.push(seg);
    }
    let tokens = doc.tokens.into_iter().map(|t| TokenBox { text: t.text, bbox: t.bbox, parent: t.parent }).collect();
    let page = DocumentPage { page_w: doc.page_w, page_h: doc.page_h, nature: doc.nature, segments, tokens };
    page.check().map_err(|m| schema("page".into(), m))?;

    let mut links = Vec::with_capacity(doc.links.len());
    for (i, l) in doc.links.into_iter().enumerate() {
        let intent = KeyIntent::from_name(&l.intent)
            .ok_or_else(|| schema(format!("links[{i}].intent"), format!("unknown key intent '{}'", l.intent)))?;
        let link = KeyValueLink { key_segment: l.key, value_segment: l.value, intent };
        link.check(&page).map_err(|m| schema(format!("links[{i}]"), m))?;
        links.push(link);
    }
    Ok(AnnotatedPage { doc_id, page, links })
}

fn to_record(doc: &AnnotatedPage) -> DocRecord {
    DocRecord {
        id: doc.doc_id.clone(),
        page_w: doc.page.page_w,
        page_h: doc.page.page_h,
        nature: doc.page.nature,
        segments: doc
            .page
            .segments
            .iter()
            .map(|s| SegmentRecord { id: s.id, bbox: s.bbox, text: s.text.clone(), label: s.label() })
            .collect(),
        tokens: doc.page.tokens.iter().map(|t| TokenRecord { text: t.text.clone(), bbox: t.bbox, parent: t.parent }).collect(),
        links: doc
            .links
            .iter()
            .map(|l| LinkRecord { key: l.key_segment, value: l.value_segment, intent: l.intent.name().to_string() })
            .collect(),
    }
}

/// Reads a corpus from any reader, validating every record.
pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<AnnotatedPage>, CorpusError> {
    let file: FileRecord = serde_json::from_reader(reader)?;
    if file.format != FORMAT_NAME || file.version != FORMAT_VERSION {
        return Err(CorpusError::Format(format!("{} v{}", file.format, file.version)));
    }
    file.documents.into_iter().enumerate().map(|(i, d)| convert(i, d)).collect()
}

pub fn write_corpus<W: Write>(corpus: &[AnnotatedPage], mut writer: W) -> Result<(), CorpusError> {
    let file = FileRecord { format: FORMAT_NAME.to_string(), version: FORMAT_VERSION, documents: corpus.iter().map(to_record).collect() };
    serde_json::to_writer_pretty(&mut writer, &file)?;
    writer.write_all(b"\n").map_err(|source| CorpusError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedPage>, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    read_corpus(bytes.as_slice())
}

pub fn save_corpus(corpus: &[AnnotatedPage], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf)?;
    fs::write(path, buf).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrap(docs: &str) -> String {
        format!(r#"{{"format":"{FORMAT_NAME}","version":1,"documents":[{docs}]}}"#)
    }

    #[test]
    fn minimal_title_page() {
        let json = wrap(
            r#"{"id":"a","page_w":100,"page_h":100,"nature":"digital",
                "segments":[{"id":0,"bbox":[0,0,50,10],"text":"Form 604","label":"Title"}]}"#,
        );
        let corpus = read_corpus(json.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 1);
        assert!(corpus[0].links.is_empty());
        assert_eq!(corpus[0].page.segments[0].category, LayoutCategory::Title);
    }

    #[test]
    fn form_value_without_intent_is_rejected() {
        let json = wrap(
            r#"{"id":"a","page_w":100,"page_h":100,"nature":"printed",
                "segments":[{"id":0,"bbox":[0,0,50,10],"text":"x","label":"Title"},
                            {"id":1,"bbox":[0,20,50,10],"text":"Acme Ltd","label":"Form Value"}]}"#,
        );
        let err = read_corpus(json.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("segment 1"), "{msg}");
        assert!(matches!(err, CorpusError::Schema { record: 0, .. }));
    }

    #[test]
    fn duplicate_segment_id_is_rejected() {
        let json = wrap(
            r#"{"id":"a","page_w":100,"page_h":100,"nature":"digital",
                "segments":[{"id":0,"bbox":[0,0,5,5],"text":"x","label":"Title"},
                            {"id":0,"bbox":[0,0,5,5],"text":"y","label":"Others"}]}"#,
        );
        assert!(matches!(read_corpus(json.as_bytes()), Err(CorpusError::DuplicateSegmentId { id: 0, .. })));
    }

    #[test]
    fn compound_labels_and_links() {
        let json = wrap(
            r#"{"id":"a","page_w":100,"page_h":100,"nature":"handwritten",
                "segments":[{"id":0,"bbox":[0,0,20,5],"text":"Class of securities","label":"class_key"},
                            {"id":1,"bbox":[0,10,20,5],"text":"Ordinary","label":"class_value"}],
                "tokens":[{"text":"Ordinary","bbox":[0,10,20,5],"parent":1}],
                "links":[{"key":0,"value":1,"intent":"class"}]}"#,
        );
        let corpus = read_corpus(json.as_bytes()).unwrap();
        let seg = &corpus[0].page.segments[1];
        assert_eq!(seg.category, LayoutCategory::TableValue);
        assert_eq!(seg.intent, Some(KeyIntent::Class));
        assert_eq!(corpus[0].links[0].value_segment, Some(1));
    }

    #[test]
    fn link_to_wrong_intent_is_rejected() {
        let json = wrap(
            r#"{"id":"a","page_w":100,"page_h":100,"nature":"digital",
                "segments":[{"id":0,"bbox":[0,0,20,5],"text":"k","label":"class_key"},
                            {"id":1,"bbox":[0,10,20,5],"text":"v","label":"pre_pct_value"}],
                "links":[{"key":0,"value":1,"intent":"class"}]}"#,
        );
        let msg = read_corpus(json.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("links[0]"), "{msg}");
    }

    #[test]
    fn token_outside_parent_is_rejected() {
        let json = wrap(
            r#"{"id":"a","page_w":100,"page_h":100,"nature":"digital",
                "segments":[{"id":0,"bbox":[0,0,20,5],"text":"k","label":"Others"}],
                "tokens":[{"text":"k","bbox":[50,50,5,5],"parent":0}]}"#,
        );
        assert!(read_corpus(json.as_bytes()).unwrap_err().to_string().contains("tokens[0]"));
    }

    #[test]
    fn empty_corpus_round_trip() {
        let mut buf = Vec::new();
        write_corpus(&[], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"documents\": []"));
        assert!(read_corpus(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = save_corpus(&[], "/nonexistent-dir/for/sure/c.json").unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }
}
