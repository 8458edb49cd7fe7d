use formpoint::docmodel::AnnotatedPage;
use formpoint::dualnet::{predict_document, train, ModelConfig, Schedule};
use formpoint::evalkit::evaluate_docs;
use formpoint::synthform::{generate_corpus, CorpusConfig, ProfileSet, Split, SplitCounts};
use formpoint::Model;

fn overfit(docs: &[AnnotatedPage]) -> Model {
    let cfg = ModelConfig { schedule: Schedule { epochs: 200, lr: 0.02, ..Schedule::default() }, ..ModelConfig::tiny() };
    train::<f32>(docs, &[], &cfg).unwrap().0
}

fn corpus(seed: u64, value_drop: f64) -> Vec<AnnotatedPage> {
    let mut profiles = ProfileSet::zero();
    profiles.digital.value_drop_rate = value_drop;
    let c = generate_corpus(&CorpusConfig { seed, counts: SplitCounts::new(20, 0, 0, 0, 0), profiles, ..CorpusConfig::default() }).unwrap();
    c.split(Split::Train).to_vec()
}

#[test]
fn tiny_model_fits_twenty_clean_documents() {
    let docs = corpus(3, 0.0);
    let model = overfit(&docs);
    let report = evaluate_docs(&model, &docs, "overfit", "train").unwrap();
    assert_eq!(report.weighted_f1, 1.0);
    assert_eq!(report.accuracy, 1.0);
    for p in predict_document(&model, &docs[0]).unwrap() {
        assert_eq!(p.predicted, p.gold, "{}", p.intent);
    }
}

#[test]
fn dropped_values_are_predicted_absent() {
    let docs = corpus(5, 0.3);
    let model = overfit(&docs);
    let mut dropped = 0;
    for doc in &docs {
        for p in predict_document(&model, doc).unwrap() {
            if p.gold.is_none() {
                dropped += 1;
                assert_eq!(p.predicted, None, "{} in {}", p.intent, doc.doc_id);
            }
        }
    }
    assert!(dropped > 0);
}
