use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thingsyntax::analysis::{
    derive_seed, holdout_prior, kl_matrix, mean_kl_to_reference, property_distribution, rank_queries, sweep_csv,
    ClassQueries, ExperimentConfig, NoiseTargets, QueryMode, SweepRow, SyntheticExperiment,
};
use thingsyntax::encoder::{fit_gmm, FvOptions, GmmModel, GmmOptions};
use thingsyntax::grammar::fit_boundaries;
use thingsyntax::io::{load_windows_with, to_model_bytes, write_windows, LoadOptions, ModelFile, WindowsRecord};
use thingsyntax::retrieval::{
    build_scene_profile, DapConfig, EvalReport, Illustration, ProfileContext, ProfileSource, RankedEntry, RankedList,
};
use thingsyntax::{PropertyMask, SyntaxMatrix};
use thingsyntax_service::{load_index_dir, AppState, LoadedIndex, BOUNDARIES_FILE, GMM_FILE, IMAGES_DIR, PRIOR_FILE};

use crate::artifacts::Run;
use crate::config::PipelineConfig;
use crate::CliError;

pub const HOLDOUT_FILE: &str = "holdout.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SOURCES_FILE: &str = "sources.jsonl";
pub const STATEMENTS_FILE: &str = "statements.jsonl";
pub const BLOCKS_FILE: &str = "blocks.jsonl";
pub const RANKINGS_FILE: &str = "rankings.jsonl";
pub const MAP_REPORT_FILE: &str = "map_report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Test images per class [default: per_class from the config, else 100].
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Holdout images per class [default: 400].
    #[arg(long)]
    pub holdout_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HoldoutArgs {
    /// Holdout windows file [default: <dir>/holdout.jsonl].
    #[arg(long)]
    pub holdout: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ProfileFrom {
    Statements,
    Blocks,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long, value_enum, default_value = "statements")]
    pub from: ProfileFrom,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// statements, blocks or fused.
    #[arg(long, default_value = "statements", value_parser = QueryMode::from_str)]
    pub by: QueryMode,
    /// Corpus windows file [default: <dir>/corpus.jsonl].
    #[arg(long)]
    pub windows: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// [default: <dir>/rankings.jsonl]
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    /// Windows file whose scene labels define relevance [default: <dir>/corpus.jsonl].
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KlArgs {
    /// Labeled windows file [default: <dir>/corpus.jsonl].
    #[arg(long)]
    pub windows: Option<PathBuf>,
    /// Second labeled windows file (e.g. annotations) to compare against, class by class.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Uniform bins for continuous properties.
    #[arg(long, default_value_t = thingsyntax::analysis::ANALYSIS_BINS)]
    pub analysis_bins: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Bin counts, as an inclusive range `3..11` or a list `3,5,7`.
    #[arg(long = "bins", id = "sweep_bins", value_parser = parse_usize_set)]
    pub bins: Option<UsizeSet>,
    /// GMM sizes, as a range or a list.
    #[arg(long, value_parser = parse_usize_set)]
    pub gmm: Option<UsizeSet>,
    /// Noise levels in pixels; empty for the configured grid.
    #[arg(long, num_args = 0.., value_delimiter = ',')]
    pub noise: Option<Vec<f64>>,
    /// Restrict queries to each property in turn.
    #[arg(long)]
    pub ablation: bool,
    /// Query mode for the noise and ablation sweeps.
    #[arg(long, default_value = "statements", value_parser = QueryMode::from_str)]
    pub mode: QueryMode,
    /// Noise targets, comma-separated (all, position, x+y, w, h, ...).
    #[arg(long, value_delimiter = ',', value_parser = NoiseTargets::from_str)]
    pub targets: Option<Vec<NoiseTargets>>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory with boundaries.json, prior.json, optional gmm.json and corpus.jsonl [default: <dir>].
    #[arg(long)]
    pub index_dir: Option<PathBuf>,
    /// Thumbnails named `<image_id>.<ext>`.
    #[arg(long)]
    pub thumbs_dir: Option<PathBuf>,
    /// Corpus windows file [default: <index-dir>/corpus.jsonl].
    #[arg(long)]
    pub windows: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsizeSet(pub Vec<usize>);

/// `a..b` (inclusive) or `a,b,c`.
pub fn parse_usize_set(s: &str) -> Result<UsizeSet, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty range {s}"));
        }
        return Ok(UsizeSet((a..=b).collect()));
    }
    s.split(',').map(num).collect::<Result<_, _>>().map(UsizeSet)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StatementsRow {
    scene: String,
    statements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlocksRow {
    scene: String,
    illustrations: Vec<Illustration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RankingRow {
    scene: String,
    mode: QueryMode,
    results: Vec<RankedEntry>,
}

fn pipeline_err(e: impl std::fmt::Display) -> CliError {
    CliError::Pipeline(e.to_string())
}

fn input_err(path: &Path) -> impl Fn(String) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn experiment_config(cfg: &PipelineConfig) -> ExperimentConfig {
    ExperimentConfig {
        images_per_class: cfg.per_class,
        holdout_per_class: cfg.holdout_per_class,
        sources_per_class: cfg.sources_per_class,
        statement_pool_per_class: cfg.statement_pool_per_class,
        statements_per_class: cfg.statements_per_class,
        bins: cfg.bins,
        components: cfg.components,
        seed: cfg.seed,
        alpha: cfg.alpha,
        dap: dap_config(cfg),
        fv: FvOptions::default(),
        gmm: GmmOptions::default(),
        fusion: cfg.fusion,
    }
}

fn dap_config(cfg: &PipelineConfig) -> DapConfig {
    DapConfig {
        alpha: cfg.alpha,
        variant: cfg.dap_variant,
    }
}

fn windows_bytes(records: &[WindowsRecord]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    write_windows(&mut out, records).map_err(|e| CliError::Output(e.to_string()))?;
    Ok(out)
}

fn model_bytes<T: ModelFile>(model: &T) -> Result<Vec<u8>, CliError> {
    to_model_bytes(model).map_err(|e| CliError::Output(e.to_string()))
}

fn read_windows_file(run: &mut Run, path: &Path) -> Result<Vec<WindowsRecord>, CliError> {
    run.input(path)?;
    let report = load_windows_with(path, &LoadOptions::default()).map_err(|e| CliError::Input(e.to_string()))?;
    for w in &report.warnings {
        log::warn!("{}: line {}: image {}: box {} dropped: {}", path.display(), w.line, w.image_id, w.box_index, w.reason);
    }
    Ok(report.records)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(run: &mut Run, path: &Path) -> Result<Vec<T>, CliError> {
    run.input(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path)(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| input_err(path)(format!("line {}: {e}", i + 1))))
        .collect()
}

fn read_model<T: ModelFile>(run: &mut Run, path: &Path) -> Result<T, CliError> {
    run.input(path)?;
    thingsyntax::io::load_model(path).map_err(|e| CliError::Input(e.to_string()))
}

fn syntax_of(records: &[WindowsRecord], dir: &Path) -> Result<Vec<SyntaxMatrix>, CliError> {
    let images = dir.join(IMAGES_DIR);
    let images = images.is_dir().then_some(images.as_path());
    records
        .iter()
        .map(|r| r.syntax_with_images(images).map_err(|e| CliError::Input(e.to_string())))
        .collect()
}

pub fn synth(cfg: &PipelineConfig, args: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if let Some(n) = args.per_class {
        cfg.per_class = n;
    }
    if let Some(n) = args.holdout_per_class {
        cfg.holdout_per_class = n;
    }
    if cfg.per_class == 0 || cfg.holdout_per_class == 0 {
        return Err(CliError::Config("per-class and holdout-per-class must be positive".into()));
    }
    let mut run = Run::new("synth", &cfg.dir);
    run.seed("test", cfg.seed);
    run.seed("holdout", derive_seed(cfg.seed, 1));
    run.seed("sources", derive_seed(cfg.seed, 2));
    let exp = SyntheticExperiment::generate(experiment_config(&cfg));
    let models = exp.fit_models(cfg.bins, None, PropertyMask::FULL).map_err(pipeline_err)?;
    let queries = exp.queries(&models.boundaries, None).map_err(pipeline_err)?;

    run.write(&cfg.path(HOLDOUT_FILE), &windows_bytes(&exp.holdout)?)?;
    run.write(&cfg.path(CORPUS_FILE), &windows_bytes(&exp.test)?)?;
    let sources: Vec<WindowsRecord> = exp.sources.values().flatten().cloned().collect();
    run.write(&cfg.path(SOURCES_FILE), &windows_bytes(&sources)?)?;
    write_queries(&mut run, &cfg, &queries)?;
    let details = json!({
        "test_images": exp.test.len(),
        "holdout_images": exp.holdout.len(),
        "source_images": sources.len(),
        "scenes": queries.statements.keys().collect::<Vec<_>>(),
    });
    println!(
        "{} test, {} holdout and {} source images in {}",
        exp.test.len(),
        exp.holdout.len(),
        sources.len(),
        cfg.dir.display()
    );
    run.finish(&cfg, details)?;
    Ok(())
}

fn write_queries(run: &mut Run, cfg: &PipelineConfig, q: &ClassQueries) -> Result<(), CliError> {
    let statements: Vec<StatementsRow> = q
        .statements
        .iter()
        .map(|(s, v)| StatementsRow { scene: s.clone(), statements: v.clone() })
        .collect();
    let blocks: Vec<BlocksRow> = q
        .blocks
        .iter()
        .map(|(s, v)| BlocksRow { scene: s.clone(), illustrations: v.clone() })
        .collect();
    run.write_jsonl(&cfg.path(STATEMENTS_FILE), &statements)?;
    run.write_jsonl(&cfg.path(BLOCKS_FILE), &blocks)
}

fn read_queries(run: &mut Run, cfg: &PipelineConfig, mode: QueryMode) -> Result<ClassQueries, CliError> {
    let mut q = ClassQueries::default();
    if mode != QueryMode::Blocks {
        for r in read_jsonl::<StatementsRow>(run, &cfg.path(STATEMENTS_FILE))? {
            q.statements.insert(r.scene, r.statements);
        }
    }
    if mode != QueryMode::Statements {
        for r in read_jsonl::<BlocksRow>(run, &cfg.path(BLOCKS_FILE))? {
            q.blocks.insert(r.scene, r.illustrations);
        }
    }
    Ok(q)
}

fn holdout_syntax(run: &mut Run, cfg: &PipelineConfig, args: &HoldoutArgs) -> Result<Vec<SyntaxMatrix>, CliError> {
    let path = args.holdout.clone().unwrap_or_else(|| cfg.path(HOLDOUT_FILE));
    let records = read_windows_file(run, &path)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("{}: no images", path.display())));
    }
    syntax_of(&records, &cfg.dir)
}

pub fn fit_bins(cfg: &PipelineConfig, args: &HoldoutArgs) -> Result<(), CliError> {
    let mut run = Run::new("fit-bins", &cfg.dir);
    let holdout = holdout_syntax(&mut run, cfg, args)?;
    let boundaries = fit_boundaries(&holdout, cfg.bins).map_err(pipeline_err)?;
    let prior = holdout_prior(&holdout, &boundaries, cfg.alpha).map_err(pipeline_err)?;
    run.write(&cfg.path(BOUNDARIES_FILE), &model_bytes(&boundaries)?)?;
    run.write(&cfg.path(PRIOR_FILE), &model_bytes(&prior)?)?;
    let windows: usize = holdout.iter().map(|m| m.rows.len()).sum();
    println!("B={} boundaries from {windows} holdout windows", cfg.bins);
    run.finish(cfg, json!({ "holdout_images": holdout.len(), "holdout_windows": windows, "cuts": boundaries.cuts() }))?;
    Ok(())
}

pub fn fit_gmm_cmd(cfg: &PipelineConfig, args: &HoldoutArgs) -> Result<(), CliError> {
    let mut run = Run::new("fit-gmm", &cfg.dir);
    run.seed("gmm", cfg.seed);
    let holdout = holdout_syntax(&mut run, cfg, args)?;
    let gmm = fit_gmm(&holdout, cfg.components, cfg.seed, cfg.properties, GmmOptions::default()).map_err(pipeline_err)?;
    run.write(&cfg.path(GMM_FILE), &model_bytes(&gmm)?)?;
    let info = gmm.fit_info().clone();
    println!("K={} GMM over {} windows", gmm.k(), info.windows);
    run.finish(cfg, json!({ "fit": info }))?;
    Ok(())
}

pub fn profile(cfg: &PipelineConfig, args: &ProfileArgs) -> Result<(), CliError> {
    let mut run = Run::new("profile", &cfg.dir);
    let mode = match args.from {
        ProfileFrom::Statements => QueryMode::Statements,
        ProfileFrom::Blocks => QueryMode::Blocks,
    };
    let queries = read_queries(&mut run, cfg, mode)?;
    let gmm: Option<GmmModel> = match args.from {
        ProfileFrom::Blocks => Some(read_model(&mut run, &cfg.path(GMM_FILE))?),
        ProfileFrom::Statements => None,
    };
    let mut written = Vec::new();
    let mut emit = |run: &mut Run, scene: &str, source: ProfileSource<'_>, context: ProfileContext<'_>, kind: &str| {
        let p = build_scene_profile(scene, source, context).map_err(|e| CliError::Input(format!("scene {scene}: {e}")))?;
        let path = cfg.path("profiles").join(format!("{scene}.{kind}.json"));
        run.write(&path, &model_bytes(&p)?)?;
        written.push(path);
        Ok::<(), CliError>(())
    };
    match &gmm {
        None => {
            for (scene, texts) in &queries.statements {
                let ctx = ProfileContext::Statements { bins: cfg.bins, mask: cfg.properties };
                emit(&mut run, scene, ProfileSource::Statements(texts), ctx, "statements")?;
            }
        }
        Some(model) => {
            for (scene, ills) in &queries.blocks {
                let ctx = ProfileContext::Fisher { model, options: FvOptions::default() };
                emit(&mut run, scene, ProfileSource::Blocks(ills), ctx, "blocks")?;
            }
        }
    }
    println!("{} profiles in {}", written.len(), cfg.path("profiles").display());
    run.finish(cfg, json!({ "profiles": written.len() }))?;
    Ok(())
}

pub fn query(cfg: &PipelineConfig, args: &QueryArgs) -> Result<(), CliError> {
    let mut run = Run::new("query", &cfg.dir);
    for name in [BOUNDARIES_FILE, PRIOR_FILE] {
        run.input(&cfg.path(name))?;
    }
    if args.by != QueryMode::Statements {
        run.input(&cfg.path(GMM_FILE))?;
    }
    let corpus = args.windows.clone().unwrap_or_else(|| cfg.path(CORPUS_FILE));
    run.input(&corpus)?;
    let loaded = load_index_dir(&cfg.dir, Some(&corpus)).map_err(|e| CliError::Input(e.to_string()))?;
    if loaded.index.bins() != cfg.bins {
        return Err(CliError::Config(format!(
            "boundaries were fitted with B={} but B={} is configured",
            loaded.index.bins(),
            cfg.bins
        )));
    }
    let queries = read_queries(&mut run, cfg, args.by)?;
    let rankings = rank_queries(&loaded.index, &queries, args.by, cfg.properties, &dap_config(cfg), cfg.fusion)
        .map_err(pipeline_err)?;
    let rows: Vec<RankingRow> = rankings
        .into_iter()
        .map(|(scene, r)| RankingRow { scene, mode: args.by, results: r.entries })
        .collect();
    run.write_jsonl(&cfg.path(RANKINGS_FILE), &rows)?;
    println!("{} {} rankings over {} images", rows.len(), args.by, loaded.index.len());
    run.finish(cfg, json!({ "mode": args.by, "scenes": rows.len(), "corpus_size": loaded.index.len() }))?;
    Ok(())
}

pub fn eval(cfg: &PipelineConfig, args: &EvalArgs) -> Result<(), CliError> {
    let mut run = Run::new("eval", &cfg.dir);
    let rankings_path = args.rankings.clone().unwrap_or_else(|| cfg.path(RANKINGS_FILE));
    let rows: Vec<RankingRow> = read_jsonl(&mut run, &rankings_path)?;
    let mut rankings = BTreeMap::new();
    let mut modes = std::collections::BTreeSet::new();
    for r in rows {
        modes.insert(r.mode.name());
        if rankings.insert(r.scene.clone(), RankedList { entries: r.results }).is_some() {
            return Err(input_err(&rankings_path)(format!("scene {:?} ranked twice", r.scene)));
        }
    }
    let labels_path = args.labels.clone().unwrap_or_else(|| cfg.path(CORPUS_FILE));
    let labels: BTreeMap<String, String> = read_windows_file(&mut run, &labels_path)?
        .into_iter()
        .filter_map(|r| r.scene.map(|s| (r.image_id, s)))
        .collect();
    if labels.is_empty() {
        return Err(input_err(&labels_path)("no scene labels".into()));
    }
    let report = EvalReport::evaluate(&rankings, &labels).map_err(pipeline_err)?;
    run.write(&cfg.path(MAP_REPORT_FILE), report.to_csv().as_bytes())?;
    for s in &report.scenes {
        println!("{}\t{:.4}", s.scene_id, s.ap);
    }
    println!("MAP\t{:.4}", report.map);
    run.finish(cfg, json!({ "modes": modes, "map": report.map, "scenes": report.scenes }))?;
    Ok(())
}

fn by_scene(syntax: Vec<SyntaxMatrix>, records: &[WindowsRecord]) -> BTreeMap<String, Vec<SyntaxMatrix>> {
    let mut out: BTreeMap<String, Vec<SyntaxMatrix>> = BTreeMap::new();
    for (m, r) in syntax.into_iter().zip(records) {
        if let Some(s) = &r.scene {
            out.entry(s.clone()).or_default().push(m);
        }
    }
    out
}

pub fn kl(cfg: &PipelineConfig, args: &KlArgs) -> Result<(), CliError> {
    let mut run = Run::new("kl", &cfg.dir);
    let path = args.windows.clone().unwrap_or_else(|| cfg.path(CORPUS_FILE));
    let records = read_windows_file(&mut run, &path)?;
    let classes = by_scene(syntax_of(&records, &cfg.dir)?, &records);
    let reference = match &args.reference {
        None => None,
        Some(p) => {
            let r = read_windows_file(&mut run, p)?;
            Some(by_scene(syntax_of(&r, &cfg.dir)?, &r))
        }
    };
    let mut reference_rows = Vec::new();
    let mut summary = serde_json::Map::new();
    for property in cfg.properties.properties() {
        let dists = classes
            .iter()
            .map(|(c, pool)| Ok((c.clone(), property_distribution(pool, property, args.analysis_bins)?)))
            .collect::<Result<BTreeMap<_, _>, thingsyntax::analysis::AnalysisError>>()
            .map_err(pipeline_err)?;
        let matrix = kl_matrix(&dists).map_err(pipeline_err)?;
        run.write(&cfg.path(&format!("kl_{}.csv", property.name())), matrix.to_csv().as_bytes())?;
        println!(
            "{}: max {} -> {} {:.4}, min {} -> {} {:.4}",
            property.name(),
            matrix.max_pair.0,
            matrix.max_pair.1,
            matrix.max_pair.2,
            matrix.min_pair.0,
            matrix.min_pair.1,
            matrix.min_pair.2
        );
        summary.insert(property.name().into(), json!({ "max": matrix.max_pair, "min": matrix.min_pair }));
        if let Some(reference) = &reference {
            let refs = reference
                .iter()
                .map(|(c, pool)| Ok((c.clone(), property_distribution(pool, property, args.analysis_bins)?)))
                .collect::<Result<BTreeMap<_, _>, thingsyntax::analysis::AnalysisError>>()
                .map_err(pipeline_err)?;
            let d = mean_kl_to_reference(&dists, &refs).map_err(pipeline_err)?;
            reference_rows.push([property.name().to_string(), format!("{d:.6}")]);
        }
    }
    if reference.is_some() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["property", "mean_KL"]).map_err(pipeline_err)?;
        for r in &reference_rows {
            w.write_record(r).map_err(pipeline_err)?;
        }
        let bytes = w.into_inner().map_err(pipeline_err)?;
        run.write(&cfg.path("kl_reference.csv"), &bytes)?;
    }
    run.finish(cfg, json!({ "classes": classes.keys().collect::<Vec<_>>(), "pairs": summary }))?;
    Ok(())
}

fn require_colors(records: &[WindowsRecord], path: &Path) -> Result<(), CliError> {
    for r in records {
        if r.boxes.iter().any(|b| b.color.is_none()) {
            return Err(input_err(path)(format!("image {} has a box without a color label", r.image_id)));
        }
    }
    Ok(())
}

pub fn sweep(cfg: &PipelineConfig, args: &SweepArgs) -> Result<(), CliError> {
    if args.bins.is_none() && args.gmm.is_none() && args.noise.is_none() && !args.ablation {
        return Err(CliError::Usage("sweep needs --bins, --gmm, --noise or --ablation".into()));
    }
    let mut run = Run::new("sweep", &cfg.dir);
    let mut load = |name: &str| -> Result<Vec<WindowsRecord>, CliError> {
        let path = cfg.path(name);
        let records = read_windows_file(&mut run, &path)?;
        require_colors(&records, &path)?;
        Ok(records)
    };
    let test = load(CORPUS_FILE)?;
    let holdout = load(HOLDOUT_FILE)?;
    let mut sources: BTreeMap<String, Vec<WindowsRecord>> = BTreeMap::new();
    for r in load(SOURCES_FILE)? {
        let scene = r
            .scene
            .clone()
            .ok_or_else(|| input_err(&cfg.path(SOURCES_FILE))(format!("image {} has no scene", r.image_id)))?;
        sources.entry(scene).or_default().push(r);
    }
    let exp = SyntheticExperiment { config: experiment_config(cfg), test, holdout, sources };

    let mut rows: Vec<SweepRow> = Vec::new();
    if let Some(UsizeSet(bins)) = &args.bins {
        if bins.iter().any(|&b| b < 2) {
            return Err(CliError::Config("bin counts must be at least 2".into()));
        }
        rows.extend(exp.sweep_bins(bins).map_err(pipeline_err)?);
    }
    if let Some(UsizeSet(ks)) = &args.gmm {
        rows.extend(exp.sweep_components(ks).map_err(pipeline_err)?);
    }
    if let Some(noise) = &args.noise {
        let sigmas = if noise.is_empty() { cfg.noise_grid.clone() } else { noise.clone() };
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(CliError::Config("noise levels must be finite and non-negative".into()));
        }
        let targets = args.targets.clone().unwrap_or_else(|| cfg.noise_targets.clone());
        for (i, _) in targets.iter().flat_map(|_| sigmas.iter()).enumerate() {
            run.seed(&format!("noise-cell-{i}"), derive_seed(cfg.seed, 1000 + i as u64));
        }
        rows.extend(exp.sweep_noise(&sigmas, &targets, args.mode).map_err(pipeline_err)?);
    }
    if args.ablation {
        rows.extend(exp.sweep_properties(args.mode).map_err(pipeline_err)?);
    }
    if args.gmm.is_some() || args.mode != QueryMode::Statements {
        run.seed("gmm", cfg.seed);
    }
    run.write(&cfg.path(SWEEP_FILE), sweep_csv(&rows).as_bytes())?;
    for r in &rows {
        println!("{}={} {} {}\tMAP {:.4}", r.sweep, r.value, r.target, r.mode, r.map);
    }
    run.finish(cfg, json!({ "rows": rows.len() }))?;
    Ok(())
}

fn load_serving(dir: &Path, windows: Option<&Path>, thumbs: Option<&Path>) -> Result<LoadedIndex, CliError> {
    let loaded = load_index_dir(dir, windows).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(match thumbs {
        Some(t) => loaded.with_thumbnails(t),
        None => loaded,
    })
}

pub fn serve(cfg: &PipelineConfig, args: &ServeArgs) -> Result<(), CliError> {
    let dir = args.index_dir.clone().unwrap_or_else(|| cfg.dir.clone());
    let state = if dir.join(BOUNDARIES_FILE).is_file() {
        AppState::with_index(load_serving(&dir, args.windows.as_deref(), args.thumbs_dir.as_deref())?)
    } else {
        log::warn!("no {BOUNDARIES_FILE} in {}; serving without an index until reload", dir.display());
        AppState::empty()
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(pipeline_err)?;
    rt.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(pipeline_err)?);
        spawn_reloader(state.clone(), dir, args.windows.clone(), args.thumbs_dir.clone());
        thingsyntax_service::serve(listener, state).await.map_err(pipeline_err)
    })
}

#[cfg(unix)]
fn spawn_reloader(state: Arc<AppState>, dir: PathBuf, windows: Option<PathBuf>, thumbs: Option<PathBuf>) {
    use tokio::signal::unix::{signal, SignalKind};
    tokio::spawn(async move {
        let mut hup = match signal(SignalKind::hangup()) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("SIGHUP reload unavailable: {e}");
                return;
            }
        };
        while hup.recv().await.is_some() {
            let (d, w, t) = (dir.clone(), windows.clone(), thumbs.clone());
            let loaded = tokio::task::spawn_blocking(move || load_serving(&d, w.as_deref(), t.as_deref())).await;
            match loaded {
                Ok(Ok(idx)) => {
                    log::info!("reloaded {} images", idx.index.len());
                    state.swap(idx);
                }
                Ok(Err(e)) => log::error!("reload failed, keeping the current index: {e}"),
                Err(e) => log::error!("reload task failed: {e}"),
            }
        }
    });
}

#[cfg(not(unix))]
fn spawn_reloader(_: Arc<AppState>, _: PathBuf, _: Option<PathBuf>, _: Option<PathBuf>) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usize_sets() {
        assert_eq!(parse_usize_set("3..11").unwrap().0, (3..=11).collect::<Vec<_>>());
        assert_eq!(parse_usize_set("3..=5").unwrap().0, vec![3, 4, 5]);
        assert_eq!(parse_usize_set("16,64").unwrap().0, vec![16, 64]);
        assert!(parse_usize_set("5..3").is_err());
        assert!(parse_usize_set("a").is_err());
    }
}
