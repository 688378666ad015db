//! Strict JSON experiment configuration.
//!
//! One document per run; unknown keys are rejected everywhere so a typo in a
//! hyperparameter name fails loudly instead of silently training with the
//! default.

use rots_core::attacks::{AttackKind, AttackSpec, Optimizer, STN_KL_WEIGHT, STN_SIGMA};
use rots_core::data::{load_multichannel_csv, load_ucr_tsv, synth_two_class, znormalize, Dataset};
use rots_core::plbench::PlProblemSpec;
use rots_core::rots::RotsHyper;
use rots_core::{CoreError, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rots,
    AdvFgs,
    AdvPgd,
    Stn,
    Clean,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Rots => "rots",
            Method::AdvFgs => "adv_fgs",
            Method::AdvPgd => "adv_pgd",
            Method::Stn => "stn",
            Method::Clean => "clean",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Two-class sine benchmark generated on the fly.
    Synth {
        n: usize,
        t: usize,
        #[serde(default = "default_noise")]
        noise_sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    /// UCR-style TSV: one series per row, label first.
    UcrTsv {
        path: PathBuf,
        #[serde(default)]
        znormalize: bool,
    },
    /// Multichannel CSV with a fixed channel count per series.
    MultichannelCsv {
        path: PathBuf,
        channels: usize,
        #[serde(default)]
        znormalize: bool,
    },
}

fn default_noise() -> f64 {
    0.1
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        let ds = match self {
            DatasetSource::Synth {
                n,
                t,
                noise_sigma,
                seed,
            } => synth_two_class(*n, *t, *noise_sigma, *seed)?,
            DatasetSource::UcrTsv {
                path,
                znormalize: z,
            } => {
                check_exists(path)?;
                maybe_znorm(load_ucr_tsv(path)?, *z)
            }
            DatasetSource::MultichannelCsv {
                path,
                channels,
                znormalize: z,
            } => {
                check_exists(path)?;
                maybe_znorm(load_multichannel_csv(path, *channels)?, *z)
            }
        };
        Ok(ds)
    }
}

fn check_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(CoreError::Arg(format!(
            "dataset.path: file {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn maybe_znorm(ds: Dataset, apply: bool) -> Dataset {
    if apply {
        znormalize(&ds)
    } else {
        ds
    }
}

/// Plain minibatch-SGD settings for the `clean` method.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    pub eta: f64,
    pub s: usize,
    pub k: usize,
}

impl Default for TrainBlock {
    fn default() -> Self {
        TrainBlock {
            eta: 0.05,
            s: 16,
            k: 500,
        }
    }
}

/// Epoch settings for the adversarial-training baselines.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl Default for AdvBlock {
    fn default() -> Self {
        AdvBlock {
            epochs: 20,
            batch_size: 16,
            optimizer: Optimizer::Adam { eta: 1e-3 },
        }
    }
}

/// Stability-training settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StnBlock {
    pub sigma: f64,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
}

impl Default for StnBlock {
    fn default() -> Self {
        StnBlock {
            sigma: STN_SIGMA,
            kl_weight: STN_KL_WEIGHT,
            epochs: 20,
            batch_size: 16,
            eta: 1e-3,
        }
    }
}

/// Robust-accuracy sweep settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub kinds: Vec<AttackKind>,
    pub levels: Vec<f64>,
    pub repeats: usize,
    /// PGD iteration count.
    pub steps: usize,
    /// PGD step size; `null` means the 2.5·ε/steps convention.
    pub alpha: Option<f64>,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock {
            kinds: vec![AttackKind::Gaussian],
            levels: vec![0.0, 0.05, 0.1, 0.2],
            repeats: 5,
            steps: 20,
            alpha: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Layer chain, e.g. "C:4,K:5;P:2"; empty means a bare linear head.
    #[serde(default)]
    pub arch: String,
    pub method: Method,
    #[serde(default)]
    pub rots: Option<RotsHyper>,
    #[serde(default)]
    pub train: Option<TrainBlock>,
    /// Attack used by the adversarial-training methods. `kind` must agree
    /// with the method; omit it to default from the method.
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub adv: Option<AdvBlock>,
    #[serde(default)]
    pub stn: Option<StnBlock>,
    #[serde(default)]
    pub eval: Option<EvalBlock>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_threads() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        parse_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CoreError::Arg("seeds: must list at least one seed".into()));
        }
        if self.threads == 0 {
            return Err(CoreError::Arg("threads: must be >= 1".into()));
        }
        let trained_kind = match self.method {
            Method::AdvFgs => Some(AttackKind::Fgs),
            Method::AdvPgd => Some(AttackKind::Pgd),
            _ => None,
        };
        if let (Some(spec), Some(kind)) = (&self.attack, trained_kind) {
            if spec.kind != kind {
                return Err(CoreError::Arg(format!(
                    "attack.kind does not match method {}",
                    self.method
                )));
            }
        }
        if let Some(eval) = &self.eval {
            if eval.levels.is_empty() || eval.kinds.is_empty() {
                return Err(CoreError::Arg(
                    "eval: need at least one kind and one level".into(),
                ));
            }
            if eval.repeats == 0 {
                return Err(CoreError::Arg("eval.repeats: must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Configuration for the synthetic compositional benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub problem: PlProblemSpec,
    pub eta: f64,
    pub gamma: f64,
    pub beta: f64,
    pub k: usize,
    pub trace_every: usize,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            problem: PlProblemSpec::default(),
            eta: 4e-3,
            gamma: 1e-2,
            beta: 0.05,
            k: 60_000,
            trace_every: 500,
            seeds: vec![0],
            out: None,
            threads: 1,
        }
    }
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<BenchConfig> {
        parse_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CoreError::Arg("seeds: must list at least one seed".into()));
        }
        if self.threads == 0 {
            return Err(CoreError::Arg("threads: must be >= 1".into()));
        }
        Ok(())
    }
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Parse {
        line: e.line(),
        msg: format!("{}: {e}", path.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let doc = r#"{"dataset": {"synth": {"n": 8, "t": 8}}, "method": "clean", "unknwon": 1}"#;
        let err = serde_json::from_str::<ExperimentConfig>(doc).unwrap_err();
        assert!(err.to_string().contains("unknwon"), "{err}");
    }

    #[test]
    fn defaults_fill_optional_blocks() {
        let doc = r#"{"dataset": {"synth": {"n": 8, "t": 8}}, "method": "rots"}"#;
        let cfg: ExperimentConfig = serde_json::from_str(doc).unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.threads, 1);
        assert!(cfg.rots.is_none());
        cfg.validate().unwrap();
    }

    #[test]
    fn bench_config_defaults_are_valid() {
        let cfg: BenchConfig = serde_json::from_str("{}").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.k, 60_000);
    }
}
