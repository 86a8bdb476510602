//! Experiment configuration: flat key-value TOML with sections. Unknown
//! keys are rejected with the offending key named. All defaults are the
//! protocol's stated hyperparameters (E=5, B=32, eta=0.01, momentum=0.9,
//! C=0.1, sigma=0.01, PCA variance target 0.993).

use edgefed::fed::{Algorithm, FedConfig, PartitionPlan, PartitionStrategy, Targets};
use edgefed::model::{Architecture, ElasticNet, TrainConfig};
use edgefed::privacy::DpConfig;
use edgefed::smartify::BinarizeMode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub data: DataSection,
    pub prep: PrepSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub fed: FedSection,
    pub privacy: PrivacySection,
    pub attack: AttackSection,
    pub ablation: AblationSection,
    pub crypto: CryptoSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![42, 123, 456],
            data: DataSection::default(),
            prep: PrepSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            fed: FedSection::default(),
            privacy: PrivacySection::default(),
            attack: AttackSection::default(),
            ablation: AblationSection::default(),
            crypto: CryptoSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "snake_case")]
pub struct DataSection {
    /// "synthetic" or "csv".
    pub source: String,
    pub rows: usize,
    /// Optional 7-entry class mix; empty means the default skew (0.73
    /// majority).
    pub proportions: Vec<f64>,
    pub heavy_tail_df: f64,
    pub seed: u64,
    pub csv_path: String,
    pub label_column: String,
    pub test_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "synthetic".into(),
            rows: 20_000,
            proportions: Vec::new(),
            heavy_tail_df: 3.0,
            seed: 7,
            csv_path: String::new(),
            label_column: "label".into(),
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSection {
    pub impute: bool,
    pub standardize: bool,
    pub pca: bool,
    pub pca_variance: f64,
    /// "none" | "undersample" | "smote" | "adaptive".
    pub balance: String,
    pub smote_k: usize,
}

impl Default for PrepSection {
    fn default() -> Self {
        Self {
            impute: true,
            standardize: true,
            pca: false,
            pca_variance: 0.993,
            balance: "none".into(),
            smote_k: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// "logistic" | "mlp".
    pub arch: String,
    pub hidden: [usize; 2],
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: "logistic".into(),
            hidden: [128, 64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub elastic_alpha: f64,
    pub elastic_l1_ratio: f64,
    /// 0 disables the proximal term.
    pub prox_mu: f64,
    pub dropout: f64,
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
            elastic_alpha: 0.01,
            elastic_l1_ratio: 0.5,
            prox_mu: 0.0,
            dropout: 0.5,
            early_stop_patience: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedSection {
    /// "edgedetect" | "fedavg" | "fedprox" | "signsgd".
    pub algorithm: String,
    pub clients: usize,
    pub participation: f64,
    pub rounds_max: usize,
    pub global_step: f64,
    pub momentum: f64,
    /// "iid" | "dirichlet" | "label_skew".
    pub partition: String,
    pub dirichlet_alpha: f64,
    pub skew_dominant_classes: usize,
    pub skew_dominance: f64,
    /// "signed_median" | "abs_median" | "zero".
    pub binarize_mode: String,
    pub encrypt: bool,
    pub paillier_bits: u32,
    pub batching: bool,
    pub fedprox_mu: f64,
    pub acc95: f64,
    pub acc98: f64,
}

impl Default for FedSection {
    fn default() -> Self {
        Self {
            algorithm: "edgedetect".into(),
            clients: 10,
            participation: 1.0,
            rounds_max: 50,
            global_step: 0.01,
            momentum: 0.9,
            partition: "iid".into(),
            dirichlet_alpha: 1.0,
            skew_dominant_classes: 3,
            skew_dominance: 0.7,
            binarize_mode: "signed_median".into(),
            encrypt: true,
            paillier_bits: 64,
            batching: true,
            fedprox_mu: 0.01,
            acc95: 0.95,
            acc98: 0.98,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub dp: bool,
    pub clip: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self {
            dp: true,
            clip: 0.1,
            sigma: 0.01,
            epsilon: 1.0,
            delta: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub steps: usize,
    pub trials: usize,
    pub cohort_clients: usize,
    pub features: usize,
    pub classes: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            steps: 500,
            trials: 20,
            cohort_clients: 10,
            features: 10,
            classes: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    /// Smaller experiment per cell so the full toggle matrix stays quick.
    pub rows: usize,
    pub rounds_max: usize,
    pub clients: usize,
    pub attack_trials: usize,
    pub attack_steps: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            rows: 2_000,
            rounds_max: 10,
            clients: 5,
            attack_trials: 5,
            attack_steps: 150,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CryptoSection {
    /// Modulus sizes for bench-crypto.
    pub bench_bits: Vec<u32>,
    pub bench_ops: usize,
}

impl Default for CryptoSection {
    fn default() -> Self {
        Self {
            bench_bits: vec![64, 512, 2048],
            bench_ops: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "runs/exp".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully resolved echo of this configuration; re-running from the echo
    /// reproduces every summary number.
    pub fn to_echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        match self.data.source.as_str() {
            "synthetic" => {}
            "csv" => {
                if self.data.csv_path.is_empty() {
                    return Err(ConfigError::Invalid(
                        "data.csv_path required when data.source = \"csv\"".into(),
                    ));
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "data.source {other:?} (expected \"synthetic\" or \"csv\")"
                )))
            }
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "data.test_fraction {} must be in (0, 1)",
                self.data.test_fraction
            )));
        }
        if !self.data.proportions.is_empty() && self.data.proportions.len() != 7 {
            return Err(ConfigError::Invalid(
                "data.proportions must have 7 entries (or be omitted)".into(),
            ));
        }
        match self.prep.balance.as_str() {
            "none" | "undersample" | "smote" | "adaptive" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "prep.balance {other:?} (expected none|undersample|smote|adaptive)"
                )))
            }
        }
        match self.model.arch.as_str() {
            "logistic" | "mlp" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "model.arch {other:?} (expected logistic|mlp)"
                )))
            }
        }
        self.binarize_mode()?;
        self.partition_strategy()?;
        let algorithm = self.algorithm()?;
        // encryption needs binarized updates; there is no full-precision
        // Paillier encoding in this artifact
        if self.fed.encrypt && !algorithm.is_binarized() {
            return Err(ConfigError::Invalid(
                "fed.encrypt = true requires the binarized edgedetect algorithm".into(),
            ));
        }
        self.fed_config()
            .and_then(|fc| {
                fc.validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            })
            .map(|_| ())
    }

    pub fn binarize_mode(&self) -> Result<BinarizeMode, ConfigError> {
        Ok(match self.fed.binarize_mode.as_str() {
            "signed_median" => BinarizeMode::SignedMedian,
            "abs_median" => BinarizeMode::AbsMedian,
            "zero" => BinarizeMode::Zero,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "fed.binarize_mode {other:?} (expected signed_median|abs_median|zero)"
                )))
            }
        })
    }

    pub fn dp_config(&self) -> Option<DpConfig> {
        self.privacy.dp.then_some(DpConfig {
            clip_c: self.privacy.clip,
            sigma: self.privacy.sigma,
            epsilon: self.privacy.epsilon,
            delta: self.privacy.delta,
        })
    }

    pub fn algorithm(&self) -> Result<Algorithm, ConfigError> {
        Ok(match self.fed.algorithm.as_str() {
            "fedavg" => Algorithm::FedAvg,
            "fedprox" => Algorithm::FedProx {
                mu: self.fed.fedprox_mu,
            },
            "signsgd" => Algorithm::SignSgd,
            "edgedetect" => Algorithm::EdgeDetect {
                mode: self.binarize_mode()?,
                encrypt: self.fed.encrypt,
                dp: self.dp_config(),
            },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "fed.algorithm {other:?} (expected edgedetect|fedavg|fedprox|signsgd)"
                )))
            }
        })
    }

    pub fn partition_strategy(&self) -> Result<PartitionStrategy, ConfigError> {
        Ok(match self.fed.partition.as_str() {
            "iid" => PartitionStrategy::Iid,
            "dirichlet" => PartitionStrategy::Dirichlet {
                alpha: self.fed.dirichlet_alpha,
            },
            "label_skew" => PartitionStrategy::LabelSkew {
                dominant_classes: self.fed.skew_dominant_classes,
                dominance: self.fed.skew_dominance,
            },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "fed.partition {other:?} (expected iid|dirichlet|label_skew)"
                )))
            }
        })
    }

    pub fn partition_plan(&self) -> Result<PartitionPlan, ConfigError> {
        Ok(PartitionPlan {
            strategy: self.partition_strategy()?,
            clients: self.fed.clients,
            seed: self.data.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            elastic_net: ElasticNet {
                alpha: self.train.elastic_alpha,
                l1_ratio: self.train.elastic_l1_ratio,
            },
            prox_mu: (self.train.prox_mu > 0.0).then_some(self.train.prox_mu),
            dropout: self.train.dropout,
            early_stop_patience: (self.train.early_stop_patience > 0)
                .then_some(self.train.early_stop_patience),
            seed: 0,
        }
    }

    pub fn fed_config(&self) -> Result<FedConfig, ConfigError> {
        Ok(FedConfig {
            algorithm: self.algorithm()?,
            clients: self.fed.clients,
            participation: self.fed.participation,
            rounds_max: self.fed.rounds_max,
            global_step: self.fed.global_step,
            momentum: self.fed.momentum,
            train: self.train_config(),
            targets: Targets {
                acc95: self.fed.acc95,
                acc98: self.fed.acc98,
            },
            paillier_bits: self.fed.paillier_bits,
            batching: self.fed.batching,
            baseline_dp: None,
        })
    }

    pub fn architecture(&self, features: usize, classes: usize) -> Architecture {
        match self.model.arch.as_str() {
            "mlp" => Architecture::Mlp {
                features,
                hidden: self.model.hidden,
                classes,
            },
            _ => Architecture::Logistic { features, classes },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol_hyperparameters() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.fed.momentum, 0.9);
        assert_eq!(cfg.privacy.clip, 0.1);
        assert_eq!(cfg.privacy.sigma, 0.01);
        assert_eq!(cfg.prep.pca_variance, 0.993);
        assert_eq!(cfg.seeds, vec![42, 123, 456]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("[fed]\nbogus_key = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key"), "message was: {msg}");
    }

    #[test]
    fn encrypt_without_binarization_rejected() {
        let err = ExperimentConfig::from_toml("[fed]\nalgorithm = \"fedavg\"\nencrypt = true\n")
            .unwrap_err();
        assert!(err.to_string().contains("binarized"));
    }

    #[test]
    fn echo_roundtrip_is_stable() {
        let cfg = ExperimentConfig::from_toml("[fed]\nclients = 4\n").unwrap();
        let echo = cfg.to_echo_toml();
        let again = ExperimentConfig::from_toml(&echo).unwrap();
        assert_eq!(echo, again.to_echo_toml());
        assert_eq!(again.fed.clients, 4);
    }

    #[test]
    fn enums_parse() {
        let cfg = ExperimentConfig::from_toml(
            "[fed]\nalgorithm = \"fedprox\"\npartition = \"dirichlet\"\nencrypt = false\n",
        )
        .unwrap();
        assert!(matches!(
            cfg.algorithm().unwrap(),
            Algorithm::FedProx { mu } if mu == 0.01
        ));
        assert!(matches!(
            cfg.partition_strategy().unwrap(),
            PartitionStrategy::Dirichlet { alpha } if alpha == 1.0
        ));
    }
}
