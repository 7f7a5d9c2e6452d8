use std::path::Path;

use echo_sim::annotation::{generate_records, AnnotationScenario};

#[test]
fn bundled_fixture_is_the_default_generator_output() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/annotation_records.jsonl");
    let bundled = echo_metrics::records::load(&path).unwrap();
    assert_eq!(bundled, generate_records(&AnnotationScenario::default()));
}

#[test]
fn random_labels_match_the_no_example_predictor() {
    use echo_metrics::consistency::{consistency_experiment, ConsistencyConfig, HeuristicPredictor, LabelSource};

    let recs = generate_records(&AnnotationScenario {
        users: 1500,
        ..AnnotationScenario::default()
    });
    let h = HeuristicPredictor::default();
    let cfg = ConsistencyConfig::default();
    let random = consistency_experiment(&recs, &LabelSource::Random, &h, &cfg).unwrap();
    let none =
        consistency_experiment(&recs, &LabelSource::Author, &h, &ConsistencyConfig { example_count: 0, ..cfg }).unwrap();
    assert!(none.evaluated >= 2000);
    assert!(
        (random.mean - none.mean).abs() <= 0.02,
        "random {:.4} vs no examples {:.4}",
        random.mean,
        none.mean
    );
}
