//! One TOML file drives the whole pipeline: simulation, quantile prep,
//! training, prediction, benchmarking, and holdout evaluation all read the
//! same `ExperimentConfig`, so a run is reproducible from a single artifact.
//!
//! Paths inside the file are resolved relative to the file's own directory,
//! making a config independent of the invocation directory. The full schema
//! is documented in `docs/config-schema.md`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use dlgp::model::{CovarianceMode, DlgpInit, OutputTransform, TrainConfig, DEFAULT_DENSE_CAP};
use dlgp::net::{Activation, LayerSpec};
use dlgp::quantile::validate_levels;
use dlgp::{Error, Result};

pub const KNOWN_MODELS: [&str; 4] = ["dl-gp", "gp", "q-dl", "mean"];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip)]
    base: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub quantiles: QuantilesSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
    pub network: NetworkSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub splits: SplitsSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Input and intermediate dataset locations.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Plain (input columns, output columns) CSV; the motorcycle benchmark
    /// and direct regression runs read this.
    pub xy: Option<PathBuf>,
    /// Replicate table written by `simulate` and read by `prep-quantiles`.
    pub replicates: Option<PathBuf>,
    /// Quantile design written by `prep-quantiles`; the training input for
    /// the trajectory workflow.
    pub quantile_design: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Design size m (must be even: the design pairs mirrored rows).
    pub scenarios: usize,
    /// Replicates per scenario.
    pub replicates: usize,
    pub horizon_weeks: usize,
    #[serde(default)]
    pub seed: u64,
    /// Parameter ranges; empty means the built-in epidemic scenario. The
    /// bundled simulator interprets exactly five parameters.
    #[serde(default)]
    pub parameters: Vec<ParameterRange>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantilesSection {
    /// Strictly increasing levels in (0,1), shared by `prep-quantiles` and
    /// the quantile deep-learner baseline.
    pub levels: Vec<f64>,
}

impl Default for QuantilesSection {
    fn default() -> Self {
        QuantilesSection { levels: vec![0.05, 0.20, 0.5, 0.80, 0.95] }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    /// Scenario ids excluded from training and scored by `evaluate`.
    #[serde(default)]
    pub holdout_scenarios: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Feature-map layers, first to last; the last width is the latent
    /// dimension q.
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub width: usize,
    pub activation: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Latent GP count q. Redundant with the final layer width; when set the
    /// two must agree, which catches edits that change one but not the other.
    pub latent_dim: Option<usize>,
    pub covariance: CovarianceMode,
    pub output_transform: OutputTransform,
    pub dense_cap: usize,
    pub init_lengthscale: f64,
    pub init_nugget: f64,
    pub init_noise: f64,
    pub init_mixture_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let init = DlgpInit::default();
        ModelSection {
            latent_dim: None,
            covariance: CovarianceMode::Full,
            output_transform: OutputTransform::None,
            dense_cap: DEFAULT_DENSE_CAP,
            init_lengthscale: init.lengthscale,
            init_nugget: init.nugget,
            init_noise: init.noise,
            init_mixture_scale: init.mixture_scale,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub steps: usize,
    /// Kernel-hyperparameter slice sweep every this many gradient steps.
    pub slice_interval: usize,
    pub seed: u64,
    /// Benchmark-only: independent fits per split, combined into an
    /// equal-weight predictive ensemble. The pipeline commands always train
    /// once.
    pub restarts: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let tc = TrainConfig::default();
        TrainSection {
            learning_rate: tc.learning_rate,
            steps: tc.n_steps,
            slice_interval: tc.slice_interval,
            seed: tc.seed,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitsSection {
    pub fraction: f64,
    pub count: usize,
    pub seed: u64,
    pub models: Vec<String>,
}

impl Default for SplitsSection {
    fn default() -> Self {
        SplitsSection {
            fraction: 0.9,
            count: 30,
            seed: 0,
            models: vec!["dl-gp".into(), "gp".into(), "q-dl".into()],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Central-interval coverage used by predictions and reports.
    pub level: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("work"), level: 0.90 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Input(format!("file not found: {}", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let specs = self.layer_specs()?;
        let bottleneck = specs.last().map(|l| l.width).unwrap_or(0);
        if let Some(q) = self.model.latent_dim {
            if q < 1 {
                return Err(Error::Config("latent dimension q must be at least 1".into()));
            }
            if q != bottleneck {
                return Err(Error::Config(format!(
                    "latent dimension q={q} does not match the final network layer width \
                     {bottleneck}; the bottleneck layer defines the latent coordinates"
                )));
            }
        }
        validate_levels(&self.quantiles.levels)?;
        if !(self.splits.fraction.is_finite()
            && self.splits.fraction > 0.0
            && self.splits.fraction < 1.0)
        {
            return Err(Error::Config(format!(
                "split fraction must be strictly between 0 and 1, got {}",
                self.splits.fraction
            )));
        }
        for name in &self.splits.models {
            if !KNOWN_MODELS.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "unknown model {name:?}; valid models: {}",
                    KNOWN_MODELS.join(", ")
                )));
            }
        }
        if !(self.output.level.is_finite() && self.output.level > 0.0 && self.output.level < 1.0)
        {
            return Err(Error::Config(format!(
                "interval level must be strictly between 0 and 1, got {}",
                self.output.level
            )));
        }
        if let Some(sim) = &self.simulate {
            if !sim.parameters.is_empty() && sim.parameters.len() != 5 {
                return Err(Error::Config(format!(
                    "the bundled simulator takes exactly 5 parameters, got {}",
                    sim.parameters.len()
                )));
            }
        }
        let mut seen = Vec::new();
        for &id in &self.trajectory.holdout_scenarios {
            if seen.contains(&id) {
                return Err(Error::Config(format!("duplicate holdout scenario id {id}")));
            }
            seen.push(id);
        }
        Ok(())
    }

    /// Resolve a configured path against the config file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        if self.network.layers.is_empty() {
            return Err(Error::Config("the network needs at least one layer".into()));
        }
        self.network
            .layers
            .iter()
            .map(|entry| {
                let activation: Activation = entry.activation.parse()?;
                if entry.width == 0 {
                    return Err(Error::Config("layer widths must be at least 1".into()));
                }
                Ok(LayerSpec { width: entry.width, activation })
            })
            .collect()
    }

    pub fn dlgp_init(&self) -> DlgpInit {
        DlgpInit {
            lengthscale: self.model.init_lengthscale,
            nugget: self.model.init_nugget,
            noise: self.model.init_noise,
            mixture_scale: self.model.init_mixture_scale,
        }
    }

    pub fn train_config(&self, seed_override: Option<u64>) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            n_steps: self.train.steps,
            slice_interval: self.train.slice_interval,
            seed: seed_override.unwrap_or(self.train.seed),
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(body: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "dlgp-cli-config-{}-{}",
            std::process::id(),
            body.len()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    const MINIMAL: &str = r#"
[network]
layers = [{ width = 4, activation = "tanh" }, { width = 2, activation = "tanh" }]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::load(&write_config(MINIMAL)).unwrap();
        assert_eq!(cfg.quantiles.levels, vec![0.05, 0.20, 0.5, 0.80, 0.95]);
        assert_eq!(cfg.splits.count, 30);
        assert_eq!(cfg.output.level, 0.90);
        assert_eq!(cfg.train.steps, 500);
        let specs = cfg.layer_specs().unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[1].width, 2);
    }

    #[test]
    fn latent_dim_must_match_bottleneck() {
        let body = format!("{MINIMAL}\n[model]\nlatent_dim = 3\n");
        let err = ExperimentConfig::load(&write_config(&body)).unwrap_err();
        assert!(err.is_user_error());
        assert!(err.to_string().contains("final network layer width"), "{err}");
    }

    #[test]
    fn decreasing_levels_rejected() {
        let body = format!("{MINIMAL}\n[quantiles]\nlevels = [0.5, 0.2]\n");
        assert!(ExperimentConfig::load(&write_config(&body)).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let body = format!("{MINIMAL}\n[train]\nlearning_rte = 0.1\n");
        let err = ExperimentConfig::load(&write_config(&body)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn paths_resolve_against_config_directory() {
        let body = format!("{MINIMAL}\n[data]\nxy = \"sub/data.csv\"\n");
        let path = write_config(&body);
        let cfg = ExperimentConfig::load(&path).unwrap();
        let resolved = cfg.resolve(cfg.data.xy.as_ref().unwrap());
        assert_eq!(resolved, path.parent().unwrap().join("sub/data.csv"));
    }

    #[test]
    fn missing_config_names_the_file() {
        let err = ExperimentConfig::load(Path::new("/nonexistent/c.toml")).unwrap_err();
        assert!(err.to_string().contains("file not found"), "{err}");
    }
}
