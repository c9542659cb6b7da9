use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::rank::{average_precision, mean_average_precision, RankedList};
use super::RetrievalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAp {
    pub scene_id: String,
    pub ap: f64,
}

/// Per-scene average precision and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: Vec<SceneAp>,
    pub map: f64,
}

impl EvalReport {
    /// Every scene is one query ranked over the whole test pool; the relevant
    /// images are those labeled with that scene.
    pub fn evaluate(
        rankings: &BTreeMap<String, RankedList>,
        labels: &BTreeMap<String, String>,
    ) -> Result<EvalReport, RetrievalError> {
        let mut scenes = Vec::with_capacity(rankings.len());
        for (scene, ranked) in rankings {
            let relevant: HashSet<String> = labels
                .iter()
                .filter(|(_, l)| *l == scene)
                .map(|(id, _)| id.clone())
                .collect();
            let ap = average_precision(ranked, &relevant)?;
            scenes.push(SceneAp {
                scene_id: scene.clone(),
                ap,
            });
        }
        let aps: Vec<f64> = scenes.iter().map(|s| s.ap).collect();
        let map = mean_average_precision(&aps).ok_or(RetrievalError::EmptyRelevance)?;
        Ok(EvalReport { scenes, map })
    }

    /// `scene_id,AP` rows followed by a final `MAP` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scene_id", "AP"]).expect("in-memory write");
        for s in &self.scenes {
            w.write_record([s.scene_id.as_str(), &format!("{:.6}", s.ap)])
                .expect("in-memory write");
        }
        w.write_record(["MAP", &format!("{:.6}", self.map)]).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}
