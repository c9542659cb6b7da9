use thingsyntax::analysis::{rank_queries, ExperimentConfig, QueryMode, SyntheticExperiment};
use thingsyntax::encoder::{FvOptions, GmmModel};
use thingsyntax::grammar::BinBoundaries;
use thingsyntax::index::Index;
use thingsyntax::io::{load_model, load_windows, save_model, save_windows};
use thingsyntax::retrieval::{DapConfig, EvalReport, FusionMethod, PriorModel};
use thingsyntax::PropertyMask;

fn small() -> SyntheticExperiment {
    SyntheticExperiment::generate(ExperimentConfig {
        images_per_class: 30,
        holdout_per_class: 20,
        statement_pool_per_class: 20,
        components: 4,
        ..ExperimentConfig::default()
    })
}

#[test]
fn rankings_survive_a_trip_through_files() {
    let exp = small();
    let models = exp.fit_models(3, Some(4), PropertyMask::FULL).unwrap();
    let queries = exp.queries(&models.boundaries, None).unwrap();
    let dap = DapConfig::default();

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    save_model(&d.join("boundaries.json"), &models.boundaries).unwrap();
    save_model(&d.join("prior.json"), &models.prior).unwrap();
    save_model(&d.join("gmm.json"), models.gmm.as_ref().unwrap()).unwrap();
    save_windows(&d.join("corpus.jsonl"), &exp.test).unwrap();

    let boundaries: BinBoundaries = load_model(&d.join("boundaries.json")).unwrap();
    let prior: PriorModel = load_model(&d.join("prior.json")).unwrap();
    let gmm: GmmModel = load_model(&d.join("gmm.json")).unwrap();
    let records = load_windows(&d.join("corpus.jsonl")).unwrap();
    assert_eq!(records, exp.test);
    let corpus = records.iter().map(|r| (r.syntax(None).unwrap(), r.scene.clone())).collect();
    let reloaded = Index::new(boundaries, prior, Some(gmm), FvOptions::default(), corpus).unwrap();
    let original = exp.build_index(&models).unwrap();

    for mode in [QueryMode::Statements, QueryMode::Blocks, QueryMode::Fused] {
        let a = rank_queries(&original, &queries, mode, PropertyMask::FULL, &dap, FusionMethod::ScoreAverage).unwrap();
        let b = rank_queries(&reloaded, &queries, mode, PropertyMask::FULL, &dap, FusionMethod::ScoreAverage).unwrap();
        assert_eq!(a, b, "{mode}");
        let report = EvalReport::evaluate(&b, &reloaded.labels()).unwrap();
        assert!((0.0..=1.0).contains(&report.map));
    }
}

#[test]
fn every_test_image_is_ranked_once_per_scene() {
    let exp = small();
    let models = exp.fit_models(3, None, PropertyMask::FULL).unwrap();
    let index = exp.build_index(&models).unwrap();
    let queries = exp.queries(&models.boundaries, None).unwrap();
    let rankings = rank_queries(
        &index,
        &queries,
        QueryMode::Statements,
        PropertyMask::FULL,
        &DapConfig::default(),
        FusionMethod::ScoreAverage,
    )
    .unwrap();
    assert_eq!(rankings.len(), 2);
    for ranked in rankings.values() {
        let mut ids: Vec<&str> = ranked.ids().collect();
        assert_eq!(ids.len(), exp.test.len());
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), exp.test.len());
    }
}
