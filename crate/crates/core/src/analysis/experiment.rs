use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::noise::{inject_noise, noisy_syntax, NoiseTargets};
use super::{derive_seed, AnalysisError};
use crate::encoder::{fit_gmm, FvOptions, GmmModel, GmmOptions};
use crate::grammar::{
    fit_boundaries, histogram_from_syntax, render_statement, BinBoundaries, HistogramLayout, Statement, StatementHistogram,
};
use crate::index::Index;
use crate::io::{generate_synthetic, Archetype, WindowsRecord};
use crate::retrieval::{
    fuse_rankings, mean_average_precision, rank_images, Block, BlockColor, DapConfig, EvalReport, FusionMethod,
    Illustration, PriorModel, RankedList,
};
use crate::things::{Property, PropertyMask, SyntaxMatrix, ThingWindow};

/// Sizes, seeds and scoring options of a synthetic retrieval experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub images_per_class: usize,
    pub holdout_per_class: usize,
    /// Annotated images per class drawn as block illustrations.
    pub sources_per_class: usize,
    /// Annotated images per class whose most frequent statements become the
    /// statement query.
    pub statement_pool_per_class: usize,
    pub statements_per_class: usize,
    pub bins: usize,
    pub components: usize,
    pub seed: u64,
    pub alpha: f64,
    pub dap: DapConfig,
    pub fv: FvOptions,
    pub gmm: GmmOptions,
    pub fusion: FusionMethod,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            images_per_class: 100,
            holdout_per_class: 40,
            sources_per_class: 3,
            statement_pool_per_class: 100,
            statements_per_class: 5,
            bins: 3,
            components: 64,
            seed: 7,
            alpha: 1.0,
            dap: DapConfig::default(),
            fv: FvOptions::default(),
            gmm: GmmOptions::default(),
            fusion: FusionMethod::ScoreAverage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Statements,
    Blocks,
    Fused,
}

impl QueryMode {
    pub fn name(self) -> &'static str {
        match self {
            QueryMode::Statements => "statements",
            QueryMode::Blocks => "blocks",
            QueryMode::Fused => "fused",
        }
    }

    fn needs_gmm(self) -> bool {
        self != QueryMode::Statements
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "statements" => Ok(QueryMode::Statements),
            "blocks" => Ok(QueryMode::Blocks),
            "fused" => Ok(QueryMode::Fused),
            _ => Err(format!("unknown query mode {s:?} (expected statements, blocks or fused)")),
        }
    }
}

/// Holdout-fitted models shared by the index and the queries.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub boundaries: BinBoundaries,
    pub prior: PriorModel,
    pub gmm: Option<GmmModel>,
}

/// Per-scene statement and block queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassQueries {
    pub statements: BTreeMap<String, Vec<String>>,
    pub blocks: BTreeMap<String, Vec<Illustration>>,
}

/// Noise applied to the query-source annotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub targets: NoiseTargets,
    pub seed: u64,
}

/// Holdout statement counts smoothed into a prior.
pub fn holdout_prior(holdout: &[SyntaxMatrix], boundaries: &BinBoundaries, alpha: f64) -> Result<PriorModel, AnalysisError> {
    let mut counts = StatementHistogram::zeros(HistogramLayout::new(boundaries.bins()));
    for w in holdout {
        let h = histogram_from_syntax(w, boundaries);
        for (c, v) in counts.counts.iter_mut().zip(h.counts) {
            *c += v;
        }
    }
    Ok(PriorModel::from_counts(counts, alpha)?)
}

/// Rankings of every scene's query over the whole index.
pub fn rank_queries(
    index: &Index,
    queries: &ClassQueries,
    mode: QueryMode,
    mask: PropertyMask,
    dap: &DapConfig,
    fusion: FusionMethod,
) -> Result<BTreeMap<String, RankedList>, AnalysisError> {
    let scenes: Vec<&String> = match mode {
        QueryMode::Blocks => queries.blocks.keys().collect(),
        _ => queries.statements.keys().collect(),
    };
    let mut out = BTreeMap::new();
    for scene in scenes {
        let ranked = match mode {
            QueryMode::Statements => rank_images(index.statement_scores(&queries.statements[scene], mask, dap)?)?,
            QueryMode::Blocks => rank_images(index.block_scores(&queries.blocks[scene])?)?,
            QueryMode::Fused => {
                let s = index.statement_scores(&queries.statements[scene], mask, dap)?;
                let b = index.block_scores(queries.blocks.get(scene).map(Vec::as_slice).unwrap_or(&[]))?;
                fuse_rankings(&s, &b, fusion)?
            }
        };
        out.insert(scene.clone(), ranked);
    }
    Ok(out)
}

/// A generated corpus: labeled test images, an unlabeled holdout, and
/// per-class annotated source images from which queries are derived. The
/// three sets come from independent seeds and never share ids.
#[derive(Debug, Clone)]
pub struct SyntheticExperiment {
    pub config: ExperimentConfig,
    pub test: Vec<WindowsRecord>,
    pub holdout: Vec<WindowsRecord>,
    pub sources: BTreeMap<String, Vec<WindowsRecord>>,
}

fn relabel(records: Vec<WindowsRecord>, prefix: &str, keep_scene: bool) -> Vec<WindowsRecord> {
    records
        .into_iter()
        .map(|mut r| {
            r.image_id = format!("{prefix}{}", r.image_id);
            if !keep_scene {
                r.scene = None;
            }
            r
        })
        .collect()
}

fn syntax_of(records: &[WindowsRecord]) -> Vec<SyntaxMatrix> {
    records
        .iter()
        .map(|r| r.syntax(None).expect("synthetic boxes carry color labels"))
        .collect()
}

/// The `n` most frequent statements among `windows`, most frequent first,
/// ties broken by histogram index.
pub fn typical_statements(windows: &[ThingWindow], boundaries: &BinBoundaries, n: usize) -> Vec<String> {
    let w = SyntaxMatrix::new("pool", windows.to_vec());
    let h = histogram_from_syntax(&w, boundaries);
    let mut ranked: Vec<(Statement, f64)> = h.statements().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
        .into_iter()
        .take(n)
        .map(|(s, _)| render_statement(&s, boundaries.bins()))
        .collect()
}

impl SyntheticExperiment {
    pub fn generate(config: ExperimentConfig) -> SyntheticExperiment {
        let test = generate_synthetic(&Archetype::ALL, config.images_per_class, config.seed);
        let holdout = relabel(
            generate_synthetic(&Archetype::ALL, config.holdout_per_class, derive_seed(config.seed, 1)),
            "holdout-",
            false,
        );
        let mut sources: BTreeMap<String, Vec<WindowsRecord>> = BTreeMap::new();
        for r in relabel(
            generate_synthetic(
                &Archetype::ALL,
                config.sources_per_class.max(config.statement_pool_per_class),
                derive_seed(config.seed, 2),
            ),
            "source-",
            true,
        ) {
            sources.entry(r.scene.clone().unwrap_or_default()).or_default().push(r);
        }
        SyntheticExperiment {
            config,
            test,
            holdout,
            sources,
        }
    }

    pub fn labels(&self) -> BTreeMap<String, String> {
        self.test
            .iter()
            .filter_map(|r| r.scene.clone().map(|s| (r.image_id.clone(), s)))
            .collect()
    }

    pub fn fit_models(&self, bins: usize, components: Option<usize>, gmm_mask: PropertyMask) -> Result<FittedModels, AnalysisError> {
        let holdout = syntax_of(&self.holdout);
        let boundaries = fit_boundaries(&holdout, bins)?;
        let prior = holdout_prior(&holdout, &boundaries, self.config.alpha)?;
        let gmm = components
            .map(|k| fit_gmm(&holdout, k, self.config.seed, gmm_mask, self.config.gmm))
            .transpose()?;
        Ok(FittedModels { boundaries, prior, gmm })
    }

    pub fn build_index(&self, models: &FittedModels) -> Result<Index, AnalysisError> {
        let corpus = syntax_of(&self.test)
            .into_iter()
            .zip(self.test.iter().map(|r| r.scene.clone()))
            .collect();
        Ok(Index::new(
            models.boundaries.clone(),
            models.prior.clone(),
            models.gmm.clone(),
            self.config.fv,
            corpus,
        )?)
    }

    /// Statements are the most frequent statements over the class's
    /// statement pool; each of the first `sources_per_class` source images
    /// becomes one block illustration. Noise, when given, moves the source
    /// annotations before either is derived.
    pub fn queries(&self, boundaries: &BinBoundaries, noise: Option<NoiseSpec>) -> Result<ClassQueries, AnalysisError> {
        let mut out = ClassQueries::default();
        for (scene, records) in &self.sources {
            let mut windows = Vec::new();
            let mut illustrations = Vec::new();
            for (i, r) in records.iter().enumerate() {
                let (meta, boxes) = match noise {
                    None => (r.meta(), r.raw_boxes()),
                    Some(n) => {
                        let noisy = inject_noise(&r.raw_boxes(), &r.meta(), n.sigma, derive_seed(n.seed, i as u64), n.targets);
                        (noisy.meta, noisy.boxes)
                    }
                };
                let noisy = super::noise::NoisyImage { meta, boxes };
                let (syntax, _) = noisy_syntax(&noisy, None)?;
                if i < self.config.statement_pool_per_class {
                    windows.extend(syntax.rows);
                }
                if i >= self.config.sources_per_class {
                    continue;
                }
                let (iw, ih) = (noisy.meta.width as f64, noisy.meta.height as f64);
                illustrations.push(
                    noisy
                        .boxes
                        .iter()
                        .map(|b| Block {
                            x: b.x / iw,
                            y: b.y / ih,
                            w: b.width / iw,
                            h: b.height / ih,
                            color: b.color.map(BlockColor::Named).unwrap_or(BlockColor::Any),
                        })
                        .collect(),
                );
            }
            let statements = typical_statements(&windows, boundaries, self.config.statements_per_class);
            out.statements.insert(scene.clone(), statements);
            out.blocks.insert(scene.clone(), illustrations);
        }
        Ok(out)
    }

    pub fn evaluate(&self, index: &Index, queries: &ClassQueries, mode: QueryMode, mask: PropertyMask) -> Result<EvalReport, AnalysisError> {
        let rankings = rank_queries(index, queries, mode, mask, &self.config.dap, self.config.fusion)?;
        Ok(EvalReport::evaluate(&rankings, &self.labels())?)
    }

    /// MAP of the same rankings against randomly permuted test labels, one
    /// value per trial.
    pub fn shuffled_label_maps(
        &self,
        index: &Index,
        queries: &ClassQueries,
        mode: QueryMode,
        trials: usize,
        seed: u64,
    ) -> Result<Vec<f64>, AnalysisError> {
        let rankings = rank_queries(index, queries, mode, PropertyMask::FULL, &self.config.dap, self.config.fusion)?;
        let labels = self.labels();
        let ids: Vec<String> = labels.keys().cloned().collect();
        let mut scenes: Vec<String> = labels.values().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..trials)
            .map(|_| {
                scenes.shuffle(&mut rng);
                let shuffled: BTreeMap<String, String> = ids.iter().cloned().zip(scenes.iter().cloned()).collect();
                Ok(EvalReport::evaluate(&rankings, &shuffled)?.map)
            })
            .collect()
    }

    fn map_for(&self, bins: usize, mode: QueryMode, gmm_mask: PropertyMask, components: usize, noise: Option<NoiseSpec>, stmt_mask: PropertyMask) -> Result<f64, AnalysisError> {
        let models = self.fit_models(bins, mode.needs_gmm().then_some(components), gmm_mask)?;
        let index = self.build_index(&models)?;
        let queries = self.queries(&models.boundaries, noise)?;
        Ok(self.evaluate(&index, &queries, mode, stmt_mask)?.map)
    }

    /// Statement MAP for every bin count.
    pub fn sweep_bins(&self, bins: &[usize]) -> Result<Vec<SweepRow>, AnalysisError> {
        bins.par_iter()
            .map(|&b| {
                let map = self.map_for(b, QueryMode::Statements, PropertyMask::FULL, self.config.components, None, PropertyMask::FULL)?;
                Ok(SweepRow::new("bins", b, "all", QueryMode::Statements, map))
            })
            .collect()
    }

    /// Block MAP for every GMM size.
    pub fn sweep_components(&self, components: &[usize]) -> Result<Vec<SweepRow>, AnalysisError> {
        components
            .par_iter()
            .map(|&k| {
                let map = self.map_for(self.config.bins, QueryMode::Blocks, PropertyMask::FULL, k, None, PropertyMask::FULL)?;
                Ok(SweepRow::new("components", k, "all", QueryMode::Blocks, map))
            })
            .collect()
    }

    /// MAP for every (sigma, target) cell; each cell draws noise from its own
    /// seed derived from the master seed and the cell position.
    pub fn sweep_noise(&self, sigmas: &[f64], targets: &[NoiseTargets], mode: QueryMode) -> Result<Vec<SweepRow>, AnalysisError> {
        let models = self.fit_models(self.config.bins, mode.needs_gmm().then_some(self.config.components), PropertyMask::FULL)?;
        let index = self.build_index(&models)?;
        let cells: Vec<(usize, f64, NoiseTargets)> = targets
            .iter()
            .flat_map(|&t| sigmas.iter().map(move |&s| (s, t)))
            .enumerate()
            .map(|(i, (s, t))| (i, s, t))
            .collect();
        cells
            .par_iter()
            .map(|&(i, sigma, t)| {
                let spec = NoiseSpec {
                    sigma,
                    targets: t,
                    seed: derive_seed(self.config.seed, 1000 + i as u64),
                };
                let queries = self.queries(&models.boundaries, Some(spec))?;
                let map = self.evaluate(&index, &queries, mode, PropertyMask::FULL)?.map;
                Ok(SweepRow::new("sigma", sigma, &t.to_string(), mode, map))
            })
            .collect()
    }

    /// MAP with queries restricted to one property at a time, then all five.
    pub fn sweep_properties(&self, mode: QueryMode) -> Result<Vec<SweepRow>, AnalysisError> {
        let masks: Vec<(String, PropertyMask)> = Property::ALL
            .iter()
            .map(|&p| (p.name().to_string(), PropertyMask::new([p]).expect("one property")))
            .chain(std::iter::once(("all".to_string(), PropertyMask::FULL)))
            .collect();
        masks
            .par_iter()
            .map(|(name, mask)| {
                let map = match mode {
                    QueryMode::Statements => {
                        self.map_for(self.config.bins, mode, PropertyMask::FULL, self.config.components, None, *mask)?
                    }
                    _ => self.map_for(self.config.bins, mode, *mask, self.config.components, None, *mask)?,
                };
                Ok(SweepRow::new("property", name, name, mode, map))
            })
            .collect()
    }
}

/// One cell of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub value: String,
    pub target: String,
    pub mode: QueryMode,
    pub map: f64,
}

impl SweepRow {
    fn new(sweep: &str, value: impl fmt::Display, target: &str, mode: QueryMode, map: f64) -> SweepRow {
        SweepRow {
            sweep: sweep.into(),
            value: value.to_string(),
            target: target.into(),
            mode,
            map,
        }
    }
}

/// `sweep,value,target,mode,MAP` rows.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sweep", "value", "target", "mode", "MAP"]).expect("in-memory write");
    for r in rows {
        w.write_record([r.sweep.as_str(), &r.value, &r.target, r.mode.name(), &format!("{:.6}", r.map)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Mean of the MAP column.
pub fn mean_map(rows: &[SweepRow]) -> Option<f64> {
    mean_average_precision(&rows.iter().map(|r| r.map).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticExperiment {
        SyntheticExperiment::generate(ExperimentConfig {
            images_per_class: 20,
            holdout_per_class: 20,
            components: 8,
            ..ExperimentConfig::default()
        })
    }

    #[test]
    fn sets_are_disjoint_and_holdout_unlabeled() {
        let e = small();
        assert_eq!(e.test.len(), 40);
        assert!(e.holdout.iter().all(|r| r.scene.is_none() && r.image_id.starts_with("holdout-")));
        assert_eq!(e.sources.len(), 2);
        assert!(e.sources.values().all(|v| v.len() == 100));
    }

    #[test]
    fn typical_statements_are_the_most_frequent() {
        let b = BinBoundaries::uniform(3).unwrap();
        let w = |x: f64, color| ThingWindow { x, y: 0.5, size: 0.5, ratio: 0.5, color };
        let windows = vec![
            w(0.1, crate::color::Color::Red),
            w(0.9, crate::color::Color::Blue),
            w(0.9, crate::color::Color::Blue),
            w(0.5, crate::color::Color::Green),
            w(0.1, crate::color::Color::Red),
            w(0.9, crate::color::Color::Blue),
        ];
        let top = typical_statements(&windows, &b, 2);
        assert_eq!(top, ["Blue medium squared thing at center right", "Red medium squared thing at center left"]);
        assert_eq!(typical_statements(&windows, &b, 10).len(), 3);
    }

    #[test]
    fn queries_have_the_configured_shape() {
        let e = small();
        let m = e.fit_models(3, None, PropertyMask::FULL).unwrap();
        let q = e.queries(&m.boundaries, None).unwrap();
        assert!(q.statements.values().all(|s| s.len() == 5));
        assert!(q.blocks.values().all(|b| b.len() == 3));
        let corridor = &q.statements["corridor"];
        assert!(corridor.iter().all(|s| !s.contains("wide")), "{corridor:?}");
        assert!(q.statements["shelfscape"].iter().all(|s| !s.contains("tall")));
        let zero = e
            .queries(&m.boundaries, Some(NoiseSpec { sigma: 0.0, targets: NoiseTargets::ALL, seed: 1 }))
            .unwrap();
        assert_eq!(zero.statements, q.statements);
    }

    #[test]
    fn statements_separate_the_archetypes() {
        let e = small();
        let m = e.fit_models(3, Some(8), PropertyMask::FULL).unwrap();
        let idx = e.build_index(&m).unwrap();
        let q = e.queries(&m.boundaries, None).unwrap();
        for mode in [QueryMode::Statements, QueryMode::Blocks, QueryMode::Fused] {
            let r = e.evaluate(&idx, &q, mode, PropertyMask::FULL).unwrap();
            assert!(r.map > 0.8, "{mode}: {}", r.map);
        }
    }

    #[test]
    fn sweep_rows_and_csv() {
        let e = small();
        let rows = e.sweep_bins(&[3, 4]).unwrap();
        assert_eq!(rows.iter().map(|r| r.value.as_str()).collect::<Vec<_>>(), ["3", "4"]);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("sweep,value,target,mode,MAP\n"));
        let again = e.sweep_bins(&[3, 4]).unwrap();
        assert_eq!(rows, again);
    }
}
