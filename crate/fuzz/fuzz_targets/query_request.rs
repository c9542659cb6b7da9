#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use thingsyntax::analysis::{ExperimentConfig, SyntheticExperiment};
use thingsyntax::PropertyMask;
use thingsyntax_service::{run_query, LoadedIndex, QueryRequest};

fn index() -> &'static LoadedIndex {
    static INDEX: OnceLock<LoadedIndex> = OnceLock::new();
    INDEX.get_or_init(|| {
        let exp = SyntheticExperiment::generate(ExperimentConfig {
            images_per_class: 5,
            holdout_per_class: 5,
            statement_pool_per_class: 3,
            ..ExperimentConfig::default()
        });
        let models = exp.fit_models(3, Some(2), PropertyMask::FULL).unwrap();
        LoadedIndex::from_index(exp.build_index(&models).unwrap())
    })
}

fuzz_target!(|data: &[u8]| {
    let Ok(req) = serde_json::from_slice::<QueryRequest>(data) else { return };
    if let Ok(resp) = run_query(index(), &req) {
        assert!(resp.results.len() <= req.result_limit);
        assert!(resp.results.windows(2).all(|w| w[0].score >= w[1].score));
    }
});
