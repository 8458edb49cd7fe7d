//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `cargo test --test acceptance -- 1 3` runs only the listed criteria.

use formpoint::aspectfeat::{gap_distances, AspectFlags};
use formpoint::docmodel::{iou, pair_relation, BBox, DocumentPage, LayoutCategory, Nature, PairRelation, Segment};
use formpoint::dualnet::{gradient_check, train, ModelConfig, Schedule};
use formpoint::evalkit::{cohen_kappa, component_stats, evaluate_docs, evaluate_parser_mode, weighted_f1};
use formpoint::geoenc::{xpos, ypos, PeVariant, XYPosConfig};
use formpoint::synthform::{
    generate_corpus, generate_document, CategoryCounts, CorpusConfig, NoiseProfile, ProfileSet, Split, SplitCounts, TemplateSpec,
};
use formpoint::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

/// Float-rounding tolerance for the XY-Pos goldens.
const XY_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const LEARN_F1: f64 = 0.95;
const LEARN_DOCS: usize = 400;
const LEARN_EPOCHS: usize = 12;
const NATURE_GAP: f64 = 0.05;
const PE_GAP: f64 = 0.01;
const TREND_EPOCHS: usize = 15;
const SEEDS: [u64; 3] = [0, 1, 2];

type Criterion = (u32, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

// 1 -------------------------------------------------------------------------

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= XY_TOL)
}

fn xy_pos_exactness() -> Verdict {
    let t = Instant::now();
    let cfg = XYPosConfig { m: 4, n: 2 };
    let full = xpos::<f64>(&BBox::new(0.0, 0.0, 1000.0, 10.0), 1000.0, cfg);
    let f1 = close(&full, &[0.25, 0.5, 0.75, 1.0, 0.25, 0.5, 0.75, 1.0]);
    let zero = xpos::<f64>(&BBox::new(300.0, 0.0, 0.0, 10.0), 1000.0, cfg);
    let f2 = close(&zero, &[0.3; 8]);
    let g = xpos::<f64>(&BBox::new(100.0, 0.0, 200.0, 10.0), 1000.0, cfg);
    let f3 = close(&g[..4], &[0.15, 0.2, 0.25, 0.3]) && close(&g[4..], &[0.15, 0.2, 0.25, 0.3]);
    let y = ypos::<f64>(&BBox::new(0.0, 50.0, 10.0, 100.0), 1000.0, cfg);
    let f4 = close(&y[..4], &[0.075, 0.1, 0.125, 0.15]) && close(&y[4..], &[0.075, 0.1, 0.125, 0.15]);
    let full = XYPosConfig::default();
    let dims = xpos::<f64>(&BBox::new(1.0, 2.0, 3.0, 4.0), 10.0, full).len();
    let f5 = full.m == 32 && full.n == 24 && dims == 768;
    let elapsed = t.elapsed();
    let pass = f1 && f2 && f3 && f4 && f5 && within(elapsed, Duration::from_secs(1));
    verdict(
        pass,
        format!("full-width {f1}, zero-width {f2}, x golden {f3}, y golden {f4}, 32x24 gives {dims} dims; {elapsed:.2?} (limit 1s)"),
    )
}

// 2 -------------------------------------------------------------------------

fn gradient_check_criterion() -> Verdict {
    let t = Instant::now();
    let result = gradient_check(&ModelConfig::tiny(), 0, GRAD_TOL, None);
    let elapsed = t.elapsed();
    match result {
        Ok(r) => verdict(
            r.max_rel_error <= GRAD_TOL && within(elapsed, Duration::from_secs(60)),
            format!(
                "max relative error {:.2e} over {} tensors (tol {GRAD_TOL:e}); {elapsed:.2?} (limit 60s)",
                r.max_rel_error,
                r.tensors.len()
            ),
        ),
        Err(e) => verdict(false, format!("{e}")),
    }
}

// 3 -------------------------------------------------------------------------

/// Pairwise definition of the nearest-neighbour gaps.
fn gap_brute(i: usize, page: &DocumentPage) -> [f64; 4] {
    let s = page.segments[i].bbox;
    let mut best = [f64::INFINITY; 4];
    for (j, other) in page.segments.iter().enumerate() {
        if j == i {
            continue;
        }
        let o = other.bbox;
        let x_overlap = s.x.max(o.x) < (s.x + s.w).min(o.x + o.w);
        let y_overlap = s.y.max(o.y) < (s.y + s.h).min(o.y + o.h);
        let above = o.y + o.h / 2.0 < s.y + s.h / 2.0;
        let below = o.y + o.h / 2.0 > s.y + s.h / 2.0;
        let left = o.x + o.w / 2.0 < s.x + s.w / 2.0;
        let right = o.x + o.w / 2.0 > s.x + s.w / 2.0;
        if x_overlap && above {
            best[0] = best[0].min((s.y - o.y - o.h).max(0.0));
        }
        if x_overlap && below {
            best[1] = best[1].min((o.y - s.y - s.h).max(0.0));
        }
        if y_overlap && left {
            best[2] = best[2].min((s.x - o.x - o.w).max(0.0));
        }
        if y_overlap && right {
            best[3] = best[3].min((o.x - s.x - s.w).max(0.0));
        }
    }
    let ext = [page.page_h, page.page_h, page.page_w, page.page_w];
    std::array::from_fn(|k| if best[k].is_finite() { (best[k] / ext[k]).min(1.0) } else { 1.0 })
}

fn random_page(rng: &mut ChaCha8Rng) -> DocumentPage {
    let n = rng.random_range(1..30);
    let segments = (0..n)
        .map(|i| {
            let b = BBox::new(
                rng.random_range(0..900) as f64,
                rng.random_range(0..1200) as f64,
                rng.random_range(0..150) as f64,
                rng.random_range(0..40) as f64,
            );
            Segment::new(i, b, "x", LayoutCategory::Others, None)
        })
        .collect();
    DocumentPage { page_w: 1000.0, page_h: 1300.0, nature: Nature::Digital, segments, tokens: vec![] }
}

fn oracle_equivalences() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut gap_mismatch = 0;
    for _ in 0..200 {
        let p = random_page(&mut rng);
        for i in 0..p.segments.len() {
            if gap_distances(&p.segments[i], &p) != gap_brute(i, &p) {
                gap_mismatch += 1;
            }
        }
    }
    let a = BBox::new(0.0, 0.0, 10.0, 10.0);
    let iou_ok = iou(&a, &a) == 1.0
        && iou(&a, &BBox::new(20.0, 0.0, 10.0, 10.0)) == 0.0
        && (iou(&BBox::new(0.0, 0.0, 20.0, 10.0), &BBox::new(10.0, 0.0, 10.0, 10.0)) - 0.5).abs() < 1e-12
        && (iou(&a, &BBox::new(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12;
    let rel_ok = pair_relation(&BBox::new(0.0, 100.0, 80.0, 14.0), &BBox::new(120.0, 100.0, 60.0, 14.0)) == PairRelation::Horizontal
        && pair_relation(&BBox::new(0.0, 100.0, 80.0, 14.0), &BBox::new(0.0, 130.0, 80.0, 14.0)) == PairRelation::Vertical;
    let f1 = weighted_f1(&["A", "B", "B"], &["A", "A", "B"]).unwrap();
    let f1_ok = (f1.weighted_f1 - 2.0 / 3.0).abs() < 1e-12
        && (f1.per_class["A"].f1 - 2.0 / 3.0).abs() < 1e-12
        && (f1.per_class["B"].f1 - 2.0 / 3.0).abs() < 1e-12;
    let k_neg = cohen_kappa(&["x", "x", "y", "y"], &["y", "y", "x", "x"]).unwrap();
    let la: Vec<u8> = (0..20_000).map(|_| rng.random_range(0..4)).collect();
    let lb: Vec<u8> = (0..20_000).map(|_| rng.random_range(0..4)).collect();
    let k_zero = cohen_kappa(&la, &lb).unwrap();
    let kappa_ok = (k_neg + 1.0).abs() < 1e-12 && k_zero.abs() < 0.03;
    let mut counts = CategoryCounts::default();
    let docs: Vec<_> = (0..50)
        .map(|i| {
            let g = generate_document(500 + i, &TemplateSpec::default(), &NoiseProfile::handwritten()).unwrap();
            counts.add(&g.counts);
            g.into_annotated(format!("h{i}"))
        })
        .collect();
    let stats_ok = component_stats(&[("h", &docs)]).components["h"] == counts;
    let elapsed = t.elapsed();
    let pass = gap_mismatch == 0 && iou_ok && rel_ok && f1_ok && kappa_ok && stats_ok && within(elapsed, Duration::from_secs(60));
    verdict(
        pass,
        format!(
            "gap mismatches {gap_mismatch}, iou {iou_ok}, pair_relation {rel_ok}, weighted F1 {:.4}, kappa {k_neg:.3}/{k_zero:.4}, stats {stats_ok}; {elapsed:.2?} (limit 60s)",
            f1.weighted_f1
        ),
    )
}

// 4 and 8 -------------------------------------------------------------------

struct Learned {
    model: Model,
    test: Vec<formpoint::docmodel::AnnotatedPage>,
    elapsed: Duration,
}

fn learned() -> &'static Learned {
    static CELL: OnceLock<Learned> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let corpus = generate_corpus(&CorpusConfig {
            seed: 4,
            counts: SplitCounts::new(LEARN_DOCS, 20, 40, 0, 0),
            profiles: ProfileSet::zero(),
            ..CorpusConfig::default()
        })
        .expect("corpus");
        let mut cfg = ModelConfig::small();
        cfg.schedule.epochs = LEARN_EPOCHS;
        let (model, _) = train::<f32>(corpus.split(Split::Train), corpus.split(Split::Val), &cfg).expect("training");
        Learned { model, test: corpus.split(Split::TestDigital).to_vec(), elapsed: t.elapsed() }
    })
}

fn learnability() -> Verdict {
    let l = learned();
    let cfg = &l.model.config;
    let report = evaluate_docs(&l.model, &l.test, "learnability", "test_digital").expect("evaluation");
    let pass = report.weighted_f1 >= LEARN_F1
        && cfg.d_model == 128
        && (cfg.xy.m, cfg.xy.n) == (16, 8)
        && within(l.elapsed, Duration::from_secs(30 * 60));
    verdict(
        pass,
        format!(
            "held-out weighted F1 {:.4} (need >= {LEARN_F1}) on {} keys; d_model {}, grid {}x{}, fusion layers {}, {LEARN_DOCS} train docs; {:.0?} (limit 30min)",
            report.weighted_f1, report.instances, cfg.d_model, cfg.xy.m, cfg.xy.n, cfg.dual_layers, l.elapsed
        ),
    )
}

fn parser_mode() -> Verdict {
    let l = learned();
    let exact = evaluate_docs(&l.model, &l.test, "parser", "test_digital").expect("evaluation");
    let clean = evaluate_parser_mode(&l.model, &l.test, 0.0, 0.0, 8, 0.5).expect("parser mode");
    let noisy = evaluate_parser_mode(&l.model, &l.test, 0.3, 0.3, 8, 0.5).expect("parser mode");
    let pass = (clean.accuracy - exact.accuracy).abs() < 1e-12 && noisy.accuracy < clean.accuracy;
    verdict(
        pass,
        format!(
            "rates (0,0): parser accuracy {:.4} vs exact-index {:.4}; rates (0.3,0.3): {:.4}",
            clean.accuracy, exact.accuracy, noisy.accuracy
        ),
    )
}

// 5, 6, 7 -------------------------------------------------------------------

/// Configuration for the trend criteria, which train twelve models.
fn trend_config(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 64,
        ffn_dim: 128,
        scorer_hidden: 64,
        dual_layers: 1,
        xy: XYPosConfig { m: 16, n: 4 },
        seed,
        schedule: Schedule { epochs: TREND_EPOCHS, ..Schedule::default() },
        ..ModelConfig::small()
    }
}

struct TrendCorpus {
    train: Vec<formpoint::docmodel::AnnotatedPage>,
    val: Vec<formpoint::docmodel::AnnotatedPage>,
    tests: [Vec<formpoint::docmodel::AnnotatedPage>; 3],
}

fn trend_corpora() -> &'static Vec<TrendCorpus> {
    static CELL: OnceLock<Vec<TrendCorpus>> = OnceLock::new();
    CELL.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let c = generate_corpus(&CorpusConfig {
                    seed: 100 + seed,
                    counts: SplitCounts::new(140, 20, 40, 40, 40),
                    ..CorpusConfig::default()
                })
                .expect("corpus");
                TrendCorpus {
                    train: c.split(Split::Train).to_vec(),
                    val: c.split(Split::Val).to_vec(),
                    tests: [Split::TestDigital, Split::TestPrinted, Split::TestHandwritten].map(|s| c.split(s).to_vec()),
                }
            })
            .collect()
    })
}

type ScoreCache = BTreeMap<(String, String), [f64; 3]>;

/// Mean held-out weighted F1 over the seeds on D, P and H for one variant.
fn trend_scores(aspects: AspectFlags, pe: PeVariant) -> [f64; 3] {
    static CACHE: OnceLock<Mutex<ScoreCache>> = OnceLock::new();
    let key = (aspects.to_string(), pe.as_str().to_string());
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return *v;
    }
    let mut sum = [0.0; 3];
    for (i, c) in trend_corpora().iter().enumerate() {
        let cfg = ModelConfig { aspect_flags: aspects, pe_variant: pe, ..trend_config(SEEDS[i]) };
        let (model, _) = train::<f32>(&c.train, &c.val, &cfg).expect("training");
        for (k, docs) in c.tests.iter().enumerate() {
            sum[k] += evaluate_docs(&model, docs, "trend", "test").expect("evaluation").weighted_f1;
        }
    }
    let mean = sum.map(|s| s / SEEDS.len() as f64);
    eprintln!("  [{} / {}] D {:.4} P {:.4} H {:.4}", key.0, key.1, mean[0], mean[1], mean[2]);
    cache.lock().unwrap().insert(key, mean);
    mean
}

fn nature_ordering() -> Verdict {
    let [d, p, h] = trend_scores(AspectFlags::ALL, PeVariant::Xy);
    let pass = d >= p && p >= h && d - h >= NATURE_GAP;
    verdict(pass, format!("mean weighted F1 D {d:.4} >= P {p:.4} >= H {h:.4}, D - H = {:.4} (need >= {NATURE_GAP})", d - h))
}

fn aspect_ablation() -> Verdict {
    let full = trend_scores(AspectFlags::ALL, PeVariant::Xy)[2];
    let vtp = trend_scores("VTP".parse().unwrap(), PeVariant::Xy)[2];
    verdict(full >= vtp, format!("handwritten mean weighted F1: VTPDG {full:.4} vs VTP {vtp:.4}"))
}

fn pe_ablation() -> Verdict {
    let xy = trend_scores(AspectFlags::ALL, PeVariant::Xy)[2];
    let linear = trend_scores(AspectFlags::ALL, PeVariant::Linear)[2];
    let none = trend_scores(AspectFlags::ALL, PeVariant::None)[2];
    let pass = xy >= linear && linear >= none && xy - none >= PE_GAP;
    verdict(
        pass,
        format!(
            "handwritten mean weighted F1: xy {xy:.4}, linear {linear:.4}, none {none:.4}; xy - none = {:.4} (need >= {PE_GAP})",
            xy - none
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn cli(out: &Path, args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_formpoint"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FORMPOINT_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn determinism() -> Verdict {
    let run = |dir: &Path| -> Result<(Vec<Vec<u8>>, String), String> {
        cli(dir, &["--seed", "9", "generate", "--digital", "8", "--printed", "2", "--handwritten", "2"])?;
        let out = cli(dir, &["--seed", "9", "train", "--preset", "tiny", "--max-tokens", "32", "--epochs", "2"])?;
        let hash = out.lines().find_map(|l| l.strip_prefix("params sha256 ")).unwrap_or_default().to_string();
        let mut files = Vec::new();
        for f in ["train.json", "val.json", "test_digital.json", "test_printed.json", "test_handwritten.json", "manifest.json"] {
            files.push(std::fs::read(dir.join("corpus").join(f)).map_err(|e| e.to_string())?);
        }
        files.push(std::fs::read(dir.join("params/model.bin")).map_err(|e| e.to_string())?);
        Ok((files, hash))
    };
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    match (run(a.path()), run(b.path())) {
        (Ok((fa, ha)), Ok((fb, hb))) => {
            let same_files = fa == fb;
            verdict(
                same_files && ha == hb && !ha.is_empty(),
                format!("corpus and params bytes identical: {same_files}; params hashes {ha:.16} / {hb:.16}"),
            )
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, format!("command failed: {e}")),
    }
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 9] = [
        (1, "XY-Pos exactness", xy_pos_exactness),
        (2, "gradient check", gradient_check_criterion),
        (3, "oracle equivalences", oracle_equivalences),
        (4, "learnability", learnability),
        (5, "nature-degradation ordering", nature_ordering),
        (6, "aspect ablation trend", aspect_ablation),
        (7, "PE ablation trend", pe_ablation),
        (8, "parser-mode protocol", parser_mode),
        (9, "determinism", determinism),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let v = run();
        failed += usize::from(!v.pass);
        println!("criterion {id} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
