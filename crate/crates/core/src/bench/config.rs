use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decomposition::Decomposition;
use crate::field::GeneratorParams;
use crate::gridworld::{load_pgm, Environment, SpeedParams};
use crate::planner::PlanConfig;
use crate::rrt::RrtConfig;
use crate::siren::EncoderArch;
use crate::trainer::TrainConfig;
use crate::{Config2, Error, Result};

pub const RUN_CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    /// PGM file, relative to the config file.
    pub path: PathBuf,
    /// Meters per cell.
    pub cell_size: f64,
    #[serde(default)]
    pub origin: [f64; 2],
    /// Label used in reports; defaults to the file stem.
    #[serde(default)]
    pub id: Option<String>,
}

/// Speed shaping in meters; absent bounds default to 1 and 10 cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedSpec {
    pub d_min: Option<f64>,
    pub d_max: Option<f64>,
    pub s_const: f64,
}

impl Default for SpeedSpec {
    fn default() -> Self {
        SpeedSpec {
            d_min: None,
            d_max: None,
            s_const: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionSpec {
    pub n_per_axis: usize,
    pub overlap: f64,
}

impl Default for DecompositionSpec {
    fn default() -> Self {
        DecompositionSpec {
            n_per_axis: 4,
            overlap: 1.0,
        }
    }
}

/// Either a named tier (`small`, `medium`, `large`) or an explicit architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchSpec {
    Tier(String),
    Custom(EncoderArch),
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::Tier("medium".into())
    }
}

impl ArchSpec {
    pub fn resolve(&self) -> Result<EncoderArch> {
        let arch = match self {
            ArchSpec::Tier(name) => {
                EncoderArch::tier(name).ok_or_else(|| Error::InvalidArgument(format!("unknown tier `{name}`")))?
            }
            ArchSpec::Custom(a) => *a,
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub n_pairs: usize,
    pub seed: u64,
    /// Subset of `learned`, `fmm`, `rrt`.
    pub methods: Vec<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_pairs: 200,
            seed: 0,
            methods: vec!["learned".into(), "fmm".into(), "rrt".into()],
        }
    }
}

/// Trained checkpoint to evaluate instead of training from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSource {
    pub checkpoint: PathBuf,
}

/// Versioned JSON description of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub map: MapSpec,
    #[serde(default)]
    pub decomposition: DecompositionSpec,
    #[serde(default)]
    pub arch: ArchSpec,
    #[serde(default)]
    pub generator: GeneratorParams,
    #[serde(default)]
    pub speed: SpeedSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub rrt: RrtConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub model: Option<ModelSource>,
}

impl RunConfig {
    pub fn new(map: MapSpec) -> Self {
        RunConfig {
            version: RUN_CONFIG_VERSION,
            map,
            decomposition: Default::default(),
            arch: Default::default(),
            generator: Default::default(),
            speed: Default::default(),
            train: Default::default(),
            plan: Default::default(),
            rrt: Default::default(),
            eval: Default::default(),
            model: None,
        }
    }

    /// Parses and validates; relative file paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.version != RUN_CONFIG_VERSION {
            return Err(Error::Parse(format!(
                "run config version {} (expected {RUN_CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.map.path = base.join(&cfg.map.path);
        if let Some(m) = &mut cfg.model {
            m.checkpoint = base.join(&m.checkpoint);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.map.path.is_file() {
            return Err(Error::InvalidArgument(format!("map file {} not found", self.map.path.display())));
        }
        if let Some(m) = &self.model {
            if !m.checkpoint.is_file() {
                return Err(Error::InvalidArgument(format!("checkpoint {} not found", m.checkpoint.display())));
            }
        }
        if !(self.map.cell_size > 0.0) {
            return Err(Error::InvalidArgument("cell_size must be positive".into()));
        }
        if self.eval.n_pairs == 0 {
            return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
        }
        for m in &self.eval.methods {
            if !["learned", "fmm", "rrt"].contains(&m.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown method `{m}`")));
            }
        }
        self.arch.resolve()?;
        self.train.validate()
    }

    pub fn env_id(&self) -> String {
        self.map.id.clone().unwrap_or_else(|| {
            self.map
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "map".into())
        })
    }

    pub fn speed_params(&self) -> Result<SpeedParams<f64>> {
        let cs = self.map.cell_size;
        SpeedParams::new(
            self.speed.d_min.unwrap_or(cs),
            self.speed.d_max.unwrap_or(10.0 * cs),
            self.speed.s_const,
        )
    }

    pub fn environment(&self) -> Result<Environment<f64>> {
        let bytes = std::fs::read(&self.map.path).map_err(|e| Error::io(&self.map.path, e))?;
        let grid = load_pgm(&bytes, self.map.cell_size, Config2(self.map.origin))?;
        Ok(Environment::new(grid, self.speed_params()?))
    }

    pub fn decomposition(&self, env: &Environment<f64>) -> Result<Decomposition<f64>> {
        Decomposition::build(env.bounds(), self.decomposition.n_per_axis, self.decomposition.overlap)
    }

    /// Default clearance for pair sampling and path validation.
    pub fn d_safe(&self) -> f64 {
        self.plan.d_safe.unwrap_or(0.5 * self.map.cell_size)
    }
}
