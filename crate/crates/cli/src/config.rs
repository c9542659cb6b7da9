use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thingsyntax::analysis::{NoiseTargets, NOISE_GRID};
use thingsyntax::retrieval::{DapVariant, FusionMethod};
use thingsyntax::{Property, PropertyMask};

use crate::CliError;

/// Settings shared by every subcommand. Values come from flags, then the
/// config file, then these defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Work directory holding datasets and model files.
    pub dir: PathBuf,
    #[serde(rename = "B")]
    pub bins: usize,
    #[serde(rename = "K")]
    pub components: usize,
    pub seed: u64,
    pub alpha: f64,
    pub properties: PropertyMask,
    pub noise_grid: Vec<f64>,
    pub noise_targets: Vec<NoiseTargets>,
    pub dap_variant: DapVariant,
    pub fusion: FusionMethod,
    pub per_class: usize,
    pub holdout_per_class: usize,
    pub sources_per_class: usize,
    pub statement_pool_per_class: usize,
    pub statements_per_class: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dir: PathBuf::from("."),
            bins: 3,
            components: 1024,
            seed: 0,
            alpha: 1.0,
            properties: PropertyMask::FULL,
            noise_grid: NOISE_GRID.to_vec(),
            noise_targets: vec![NoiseTargets::ALL],
            dap_variant: DapVariant::Soft,
            fusion: FusionMethod::ScoreAverage,
            per_class: 100,
            holdout_per_class: 400,
            sources_per_class: 3,
            statement_pool_per_class: 100,
            statements_per_class: 5,
        }
    }
}

/// The TOML config file; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dir: Option<PathBuf>,
    #[serde(rename = "B", alias = "bins")]
    pub bins: Option<usize>,
    #[serde(rename = "K", alias = "components")]
    pub components: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub properties: Option<Vec<Property>>,
    pub noise_grid: Option<Vec<f64>>,
    pub noise_targets: Option<Vec<String>>,
    pub dap_variant: Option<DapVariant>,
    pub fusion: Option<FusionMethod>,
    pub per_class: Option<usize>,
    pub holdout_per_class: Option<usize>,
    pub sources_per_class: Option<usize>,
    pub statement_pool_per_class: Option<usize>,
    pub statements_per_class: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagConfig {
    pub dir: Option<PathBuf>,
    pub bins: Option<usize>,
    pub components: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub properties: Option<Vec<Property>>,
    pub dap_variant: Option<DapVariant>,
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

impl PipelineConfig {
    pub fn resolve(flags: FlagConfig, file: FileConfig) -> Result<PipelineConfig, CliError> {
        let d = PipelineConfig::default();
        let properties = match flags.properties.or(file.properties) {
            None => d.properties,
            Some(p) => PropertyMask::new(p)
                .ok_or_else(|| CliError::Config("properties must name at least one property".into()))?,
        };
        let noise_targets = match file.noise_targets {
            None => d.noise_targets,
            Some(t) => t
                .iter()
                .map(|s| s.parse::<NoiseTargets>().map_err(CliError::Config))
                .collect::<Result<_, _>>()?,
        };
        let cfg = PipelineConfig {
            dir: pick(flags.dir, file.dir, d.dir),
            bins: pick(flags.bins, file.bins, d.bins),
            components: pick(flags.components, file.components, d.components),
            seed: pick(flags.seed, file.seed, d.seed),
            alpha: pick(flags.alpha, file.alpha, d.alpha),
            properties,
            noise_grid: file.noise_grid.unwrap_or(d.noise_grid),
            noise_targets,
            dap_variant: pick(flags.dap_variant, file.dap_variant, d.dap_variant),
            fusion: file.fusion.unwrap_or(d.fusion),
            per_class: file.per_class.unwrap_or(d.per_class),
            holdout_per_class: file.holdout_per_class.unwrap_or(d.holdout_per_class),
            sources_per_class: file.sources_per_class.unwrap_or(d.sources_per_class),
            statement_pool_per_class: file.statement_pool_per_class.unwrap_or(d.statement_pool_per_class),
            statements_per_class: file.statements_per_class.unwrap_or(d.statements_per_class),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.bins < 2 {
            return Err(CliError::Config(format!("B must be at least 2 (got {})", self.bins)));
        }
        if self.components < 1 {
            return Err(CliError::Config("K must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(CliError::Config(format!("alpha must be positive (got {})", self.alpha)));
        }
        if self.noise_grid.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(CliError::Config("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::resolve(FlagConfig::default(), FileConfig::default()).unwrap();
        assert_eq!((c.bins, c.components, c.alpha, c.seed), (3, 1024, 1.0, 0));
        assert_eq!(c.noise_grid, vec![2.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0]);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: FileConfig = toml::from_str("B = 5\nK = 16\nseed = 3\nnoise_targets = [\"position\", \"w\"]").unwrap();
        let flags = FlagConfig { bins: Some(4), ..FlagConfig::default() };
        let c = PipelineConfig::resolve(flags, file).unwrap();
        assert_eq!((c.bins, c.components, c.seed, c.alpha), (4, 16, 3, 1.0));
        assert_eq!(c.noise_targets, vec![NoiseTargets::POSITION, NoiseTargets::WIDTH]);
    }

    #[test]
    fn invalid_values() {
        let bad = |flags: FlagConfig| PipelineConfig::resolve(flags, FileConfig::default()).is_err();
        assert!(bad(FlagConfig { bins: Some(1), ..FlagConfig::default() }));
        assert!(bad(FlagConfig { components: Some(0), ..FlagConfig::default() }));
        assert!(bad(FlagConfig { alpha: Some(0.0), ..FlagConfig::default() }));
        assert!(bad(FlagConfig { properties: Some(vec![]), ..FlagConfig::default() }));
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
    }
}
