mod common;

use cfcommit_core::cfsearch::{generate, SearchConfig};
use cfcommit_core::dataspec::Outcome;
use common::{grid_oracle, grid_problem};

#[test]
fn worked_example_matches_grid() {
    use cfcommit_core::cfsearch::DistanceWeights;
    use cfcommit_core::dataspec::{FeatureSchema, Instance};
    use cfcommit_core::model::ScoringModel;

    let model = ScoringModel::new(vec![1.0, 0.0], -1.0);
    let x = Instance { subject_id: 0, values: vec![0.0, 0.0], observed_at: 0 };
    let w = DistanceWeights::numeric(vec![1.0, 1.0]).unwrap();
    let schema = FeatureSchema::uniform_box(2, 0.0, 2.0).unwrap();
    let cf = generate(&model, &x, Outcome::Positive, &schema, &w, &SearchConfig::default()).unwrap();
    let oracle = grid_oracle(&model, &x.values, Outcome::Positive, &w.weights).unwrap();
    assert_eq!(oracle, 1.0);
    assert!((cf.distance - oracle).abs() < 1e-3);
}

#[test]
fn fifty_problems_within_tolerance_of_grid() {
    for seed in 0..50 {
        let p = grid_problem(seed);
        let cf = generate(&p.model, &p.x, p.target, &p.schema, &p.weights, &SearchConfig::default()).unwrap();
        let oracle = grid_oracle(&p.model, &p.x.values, p.target, &p.weights.weights).unwrap();
        assert_eq!(p.model.label(&cf.point).unwrap(), p.target);
        assert!(
            (cf.distance - oracle).abs() < 1e-3,
            "seed {seed}: generated {} vs grid {oracle} at {:?}",
            cf.distance,
            cf.point
        );
    }
}
