use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accelsim::AcceleratorConfig;
use crate::error::{Error, Result};
use crate::mpsearch::Probe;
use crate::quantizer::QuantConfig;
use crate::refmodel::{DatasetConfig, ModelConfig, TrainConfig};

/// A sub-config given inline or as a path relative to the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: Default> Default for Source<T> {
    fn default() -> Self {
        Source::Inline(T::default())
    }
}

impl<T: DeserializeOwned + Clone> Source<T> {
    fn resolve(&self, base: &Path, what: &str) -> Result<T> {
        match self {
            Source::Inline(t) => Ok(t.clone()),
            Source::Path(p) => {
                let path = base.join(p);
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("{what} config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{what} config {}: {e}", path.display())))
            }
        }
    }
}

/// Mixed-precision search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    /// Size budget; the midpoint between all-4 and all-8 when absent.
    pub budget_mb: Option<f64>,
    pub hessian_samples: usize,
    pub hessian_batch: usize,
    pub probe: Probe,
    pub population: usize,
    pub offspring: usize,
    pub mutation_prob: f64,
    pub iterations: usize,
    /// Held-out samples scored by the fake-quant model during search.
    pub eval_samples: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            budget_mb: None,
            hessian_samples: 16,
            hessian_batch: 32,
            probe: Probe::Rademacher,
            population: 25,
            offspring: 10,
            mutation_prob: 0.5,
            iterations: 20,
            eval_samples: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub val_samples: usize,
    /// Inputs compared code-by-code under `eval --check`.
    pub check_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { val_samples: 300, check_samples: 100 }
    }
}

/// Which network the simulator times.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    /// The trained model at its searched bit-widths.
    #[default]
    Model,
    /// DeiT-Tiny dimensions at W8A8.
    DeitTiny,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub workload: WorkloadKind,
}

/// The run config as written on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Source<ModelConfig>,
    #[serde(default)]
    pub dataset: Source<DatasetConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub quant: QuantConfig,
    #[serde(default)]
    pub search: SearchSettings,
    #[serde(default)]
    pub arch: Source<AcceleratorConfig>,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub simulate: SimSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Every setting with files inlined and the run seed propagated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub quant: QuantConfig,
    pub search: SearchSettings,
    pub arch: AcceleratorConfig,
    pub eval: EvalSettings,
    pub simulate: SimSettings,
    pub seed: u64,
}

impl Resolved {
    /// Loads `path` (or defaults), applies a seed override and validates.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<(Self, Option<PathBuf>)> {
        let (rc, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let rc: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                (rc, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (serde_json::from_str::<RunConfig>("{}")?, PathBuf::new()),
        };
        let seed = seed.unwrap_or(rc.seed);
        let model = rc.model.resolve(&base, "model")?;
        let mut dataset = rc.dataset.resolve(&base, "dataset")?;
        dataset.seed = dataset.seed.wrapping_add(seed);
        let train = TrainConfig { seed, ..rc.train };
        let r = Self {
            model,
            dataset,
            train,
            quant: rc.quant,
            search: rc.search,
            arch: rc.arch.resolve(&base, "arch")?,
            eval: rc.eval,
            simulate: rc.simulate,
            seed,
        };
        r.validate()?;
        Ok((r, rc.out))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.quant.validate()?;
        self.arch.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.dataset.classes != self.model.classes
            || self.dataset.tokens != self.model.tokens
            || self.dataset.dim != self.model.input_dim
        {
            return bad("dataset classes/tokens/dim must match the model's classes/tokens/input_dim".into());
        }
        if self.eval.val_samples == 0 || self.search.eval_samples == 0 || self.search.hessian_batch == 0 {
            return bad("sample counts must be positive".into());
        }
        if self.search.hessian_samples == 0 {
            return bad("hessian_samples must be positive".into());
        }
        if let Some(b) = self.search.budget_mb {
            if !(b.is_finite() && b > 0.0) {
                return bad(format!("budget_mb {b} must be positive"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(format!("{:x}", Sha256::digest(&bytes)))
    }
}
