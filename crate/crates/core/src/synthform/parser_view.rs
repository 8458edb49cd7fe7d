//! Simulated textline-parser output for parser-mode evaluation.

use crate::docmodel::{pair_relation, BBox, DocumentPage, LayoutCategory, Nature, PairRelation, Segment, TokenBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splits `text` on whitespace and gives each token the slice of `bbox`
/// proportional to its character offsets.
pub fn tile_tokens(parent: usize, bbox: &BBox, text: &str) -> Vec<TokenBox> {
    let total = text.chars().count();
    if total == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = None;
    let chars: Vec<char> = text.chars().collect();
    for i in 0..=total {
        let boundary = i == total || chars[i].is_whitespace();
        match (start, boundary) {
            (None, false) => start = Some(i),
            (Some(s), true) => {
                let x0 = bbox.x + bbox.w * s as f64 / total as f64;
                let x1 = bbox.x + bbox.w * i as f64 / total as f64;
                out.push(TokenBox { text: chars[s..i].iter().collect(), bbox: BBox::new(x0, bbox.y, (x1 - x0).max(0.0), bbox.h), parent });
                start = None;
            }
            _ => {}
        }
    }
    out
}

struct Region {
    bbox: BBox,
    text: String,
    first_id: usize,
}

/// Re-segments a page the way a textline parser might: neighbouring regions
/// on the same row are merged with probability `merge_rate`, and
/// multi-token regions are cut at a token boundary with probability
/// `split_rate`. Rates `(0, 0)` return the segments unchanged and in order.
pub fn corrupt_parser_view(page: &DocumentPage, merge_rate: f64, split_rate: f64, seed: u64) -> Vec<(BBox, String)> {
    let merge_rate = merge_rate.clamp(0.0, 1.0);
    let split_rate = split_rate.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Group into rows by vertical overlap, top to bottom.
    let mut order: Vec<&Segment> = page.segments.iter().collect();
    order.sort_by(|a, b| a.bbox.center().1.total_cmp(&b.bbox.center().1).then(a.id.cmp(&b.id)));
    let mut rows: Vec<Vec<&Segment>> = Vec::new();
    for seg in order {
        match rows.last_mut() {
            Some(row) if row.iter().any(|r| pair_relation(&r.bbox, &seg.bbox) == PairRelation::Horizontal) => row.push(seg),
            _ => rows.push(vec![seg]),
        }
    }

    let mut regions: Vec<Region> = Vec::new();
    for mut row in rows {
        row.sort_by(|a, b| a.bbox.x.total_cmp(&b.bbox.x).then(a.id.cmp(&b.id)));
        let mut current: Option<Region> = None;
        for seg in row {
            let merge = rng.random::<f64>() < merge_rate;
            current = Some(match current.take() {
                Some(mut r) if merge => {
                    r.bbox = r.bbox.union(&seg.bbox);
                    r.text = format!("{} {}", r.text, seg.text);
                    r.first_id = r.first_id.min(seg.id);
                    r
                }
                prev => {
                    if let Some(r) = prev {
                        regions.push(r);
                    }
                    Region { bbox: seg.bbox, text: seg.text.clone(), first_id: seg.id }
                }
            });
        }
        regions.extend(current);
    }

    let mut out: Vec<(usize, usize, BBox, String)> = Vec::new();
    for r in regions {
        let tokens = tile_tokens(0, &r.bbox, &r.text);
        let cut = rng.random::<f64>() < split_rate;
        let at = if tokens.len() >= 2 { rng.random_range(1..tokens.len()) } else { 0 };
        if cut && tokens.len() >= 2 {
            let left = tokens[..at].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
            let right = tokens[at..].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
            let split_x = tokens[at].bbox.x;
            let lb = BBox::new(r.bbox.x, r.bbox.y, split_x - r.bbox.x, r.bbox.h);
            let rb = BBox::new(split_x, r.bbox.y, r.bbox.right() - split_x, r.bbox.h);
            out.push((r.first_id, 0, lb, left));
            out.push((r.first_id, 1, rb, right));
        } else {
            out.push((r.first_id, 0, r.bbox, r.text));
        }
    }
    out.sort_by_key(|(id, part, _, _)| (*id, *part));
    out.into_iter().map(|(_, _, b, t)| (b, t)).collect()
}

/// Builds an unlabelled page from parser regions; every segment is `Others`
/// and tokens are re-tiled from the region text.
pub fn page_from_regions(page_w: f64, page_h: f64, nature: Nature, regions: &[(BBox, String)]) -> DocumentPage {
    let segments: Vec<Segment> =
        regions.iter().enumerate().map(|(i, (b, t))| Segment::new(i, *b, t.clone(), LayoutCategory::Others, None)).collect();
    let tokens = segments.iter().flat_map(|s| tile_tokens(s.id, &s.bbox, &s.text)).collect();
    DocumentPage { page_w, page_h, nature, segments, tokens }
}
