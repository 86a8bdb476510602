//! Subcommand implementations and run-directory artifact emission.

use std::io::Write;
use std::path::{Path, PathBuf};

use edgefed::dataio::{
    generate_synthetic, impute_median, ks_validate, load_csv, stratified_sample, Dataset,
    SyntheticSpec,
};
use edgefed::features::{
    apply_standardize, fit_incremental_pca, fit_standardize, smote, transform_pca, undersample,
    PcaTarget, SmoteConfig, SmoteMode,
};
use edgefed::fed::{run_experiment, Algorithm, ExperimentReport, PartitionPlan, RoundStats};
use edgefed::model::{
    checkpoint_to_bytes, evaluate, init_model, kfold_cv, local_train, loss_and_gradient,
    Architecture, ModelParams, TrainConfig,
};
use edgefed::privacy::{
    dp_sanitize, invert_gradient, recover_label_from_vector, AttackConfig, AttackTarget,
    GradObservation,
};
use edgefed::smartify::binarize;
use edgefed::util::{derive_seed, mean, rng_from_seed};
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! impl_runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for RunnerError {
            fn from(e: $t) -> Self {
                RunnerError::Runtime(e.to_string())
            }
        }
    )*};
}

impl_runtime_from!(
    edgefed::dataio::DataError,
    edgefed::features::FeatureError,
    edgefed::model::ModelError,
    edgefed::fed::FedError,
    edgefed::crypto::CryptoError,
    edgefed::privacy::PrivacyError,
    edgefed::smartify::SmartifyError,
    serde_json::Error
);

/// A run directory with the standard artifact set: config echo, status
/// marker, seed manifest, per-round JSONL and summary CSV.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(cfg: &ExperimentConfig, subcommand: &str) -> Result<Self, RunnerError> {
        let path = PathBuf::from(&cfg.output.dir).join(subcommand);
        std::fs::create_dir_all(&path)?;
        let dir = Self { path };
        dir.write("status.json", "{\"state\":\"running\"}\n")?;
        dir.write("config.echo.toml", &cfg.to_echo_toml())?;
        let manifest = cfg
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("\n");
        dir.write("seeds.txt", &(manifest + "\n"))?;
        Ok(dir)
    }

    pub fn write(&self, name: &str, content: &str) -> Result<(), RunnerError> {
        std::fs::write(self.path.join(name), content)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), RunnerError> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, &(text + "\n"))
    }

    pub fn finish(&self) -> Result<(), RunnerError> {
        self.write("status.json", "{\"state\":\"complete\"}\n")
    }
}

/// Preprocessed train/test pair plus a description of what the pipeline did.
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub report: PrepReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepReport {
    pub source: String,
    pub rows_total: usize,
    pub features_in: usize,
    pub features_out: usize,
    pub imputed_cells: usize,
    pub degenerate_columns: Vec<String>,
    pub pca_components: Option<usize>,
    pub pca_variance_retained: Option<f64>,
    pub train_class_counts: Vec<usize>,
    pub test_class_counts: Vec<usize>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, RunnerError> {
    match cfg.data.source.as_str() {
        "csv" => Ok(load_csv(
            Path::new(&cfg.data.csv_path),
            &cfg.data.label_column,
        )?),
        _ => {
            let spec = if cfg.data.proportions.is_empty() {
                SyntheticSpec::ids_default(cfg.data.rows, cfg.data.seed)
            } else {
                SyntheticSpec::ids_with_proportions(
                    cfg.data.rows,
                    cfg.data.proportions.clone(),
                    cfg.data.seed,
                )
            };
            let mut spec = spec;
            spec.heavy_tail_df = cfg.data.heavy_tail_df;
            Ok(generate_synthetic(&spec)?)
        }
    }
}

/// Standard pipeline: impute, stratified train/test split, standardize and
/// PCA fitted on the training split only, then optional class balancing of
/// the training split.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData, RunnerError> {
    prepare_with(cfg, cfg.prep.pca, &cfg.prep.balance)
}

pub fn prepare_with(
    cfg: &ExperimentConfig,
    use_pca: bool,
    balance: &str,
) -> Result<PreparedData, RunnerError> {
    let raw = load_dataset(cfg)?;
    let features_in = raw.n_features();
    let (imputed, imputed_cells, degenerate) = if cfg.prep.impute {
        let out = impute_median(&raw);
        (out.dataset, out.imputed_cells, out.degenerate_columns)
    } else {
        (raw, 0, Vec::new())
    };
    let (mut train, mut test) =
        imputed.train_test_split(cfg.data.test_fraction, derive_seed(cfg.data.seed, "split", 0))?;

    if cfg.prep.standardize {
        let scaler = fit_standardize(&train);
        train = apply_standardize(&train, &scaler)?;
        test = apply_standardize(&test, &scaler)?;
    }
    let mut pca_components = None;
    let mut pca_variance_retained = None;
    if use_pca {
        let model = fit_incremental_pca(
            &train,
            256.max(train.n_features()),
            PcaTarget::Variance(cfg.prep.pca_variance),
        )?;
        pca_components = Some(model.k);
        pca_variance_retained = Some(model.variance_retained);
        train = transform_pca(&train, &model)?;
        test = transform_pca(&test, &model)?;
    }
    train = match balance {
        "undersample" => undersample(&train, derive_seed(cfg.data.seed, "balance", 0))?,
        "smote" | "adaptive" => smote(
            &train,
            &SmoteConfig {
                k_neighbors: cfg.prep.smote_k,
                mode: if balance == "adaptive" {
                    SmoteMode::Adaptive
                } else {
                    SmoteMode::Uniform
                },
                target_count_per_class: 0,
                seed: derive_seed(cfg.data.seed, "balance", 1),
            },
        )?,
        _ => train,
    };

    let report = PrepReport {
        source: cfg.data.source.clone(),
        rows_total: train.n_rows() + test.n_rows(),
        features_in,
        features_out: train.n_features(),
        imputed_cells,
        degenerate_columns: degenerate,
        pca_components,
        pca_variance_retained,
        train_class_counts: train.class_counts(),
        test_class_counts: test.class_counts(),
    };
    Ok(PreparedData {
        train,
        test,
        report,
    })
}

pub fn run_prep(cfg: &ExperimentConfig) -> Result<(), RunnerError> {
    let dir = RunDir::create(cfg, "prep")?;
    let prepared = prepare(cfg)?;

    // sampling validation mirroring the 20% stratified extraction
    let full = load_dataset(cfg)?;
    let full = impute_median(&full).dataset;
    let sample = stratified_sample(&full, 0.2, derive_seed(cfg.data.seed, "ks-sample", 0))?;
    let ks = ks_validate(&full, &sample, 0.05)?;

    #[derive(Serialize)]
    struct PrepArtifact {
        prep: PrepReport,
        ks_rejections: usize,
        ks_alpha: f64,
        ks_features: usize,
    }
    dir.write_json(
        "prep_report.json",
        &PrepArtifact {
            prep: prepared.report,
            ks_rejections: ks.rejections,
            ks_alpha: ks.alpha,
            ks_features: ks.per_feature.len(),
        },
    )?;
    dir.write_json("ks_report.json", &ks)?;
    dir.finish()?;
    println!(
        "prep complete: {} features out, KS rejections {}/{}",
        prepared.train.n_features(),
        ks.rejections,
        ks.per_feature.len()
    );
    Ok(())
}

pub fn run_train_central(cfg: &ExperimentConfig) -> Result<(), RunnerError> {
    let dir = RunDir::create(cfg, "train-central")?;
    let prepared = prepare(cfg)?;
    let arch = cfg.architecture(prepared.train.n_features(), prepared.train.n_classes());

    #[derive(Serialize)]
    struct CentralSeed {
        seed: u64,
        test_accuracy: f64,
        test_macro_f1: f64,
        kappa: f64,
        mcc: Option<f64>,
        roc_auc: Option<f64>,
    }
    let mut per_seed = Vec::new();
    let mut first_model: Option<ModelParams> = None;
    for &seed in &cfg.seeds {
        let mut train_cfg = cfg.train_config();
        train_cfg.seed = derive_seed(seed, "central-train", 0);
        let init = init_model(arch, derive_seed(seed, "central-init", 0))?;
        let (delta, _) = local_train(&init, &prepared.train, &train_cfg)?;
        let model = ModelParams {
            arch,
            w: &init.w + &delta,
        };
        let metrics = evaluate(&model, &prepared.test)?;
        per_seed.push(CentralSeed {
            seed,
            test_accuracy: metrics.accuracy,
            test_macro_f1: metrics.macro_f1,
            kappa: metrics.kappa,
            mcc: metrics.mcc,
            roc_auc: metrics.roc_auc,
        });
        first_model.get_or_insert(model);
    }
    let cv = kfold_cv(arch, &prepared.train, 5, &cfg.seeds, &cfg.train_config())?;

    #[derive(Serialize)]
    struct CentralArtifact {
        prep: PrepReport,
        per_seed: Vec<CentralSeed>,
        cv: edgefed::model::CvReport,
    }
    dir.write_json(
        "central_report.json",
        &CentralArtifact {
            prep: prepared.report,
            per_seed,
            cv,
        },
    )?;
    if let Some(model) = first_model {
        std::fs::write(dir.path.join("model.ckpt"), checkpoint_to_bytes(&model))?;
    }
    dir.finish()?;
    println!("train-central complete");
    Ok(())
}

#[derive(Serialize)]
struct RoundLine<'a> {
    seed: u64,
    #[serde(flatten)]
    stats: &'a RoundStats,
}

/// Fixed summary CSV header shared by `fed` and re-used in tests.
pub const SUMMARY_HEADER: &str = "algorithm,k,distribution,r95,r98,acc,comm_per_round_mb,total_gb";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_csv_row(report: &ExperimentReport) -> String {
    let s = &report.summary;
    format!(
        "{},{},{},{},{},{},{},{}",
        s.algorithm,
        s.clients,
        s.distribution,
        opt(s.r95_median),
        opt(s.r98_median),
        s.accuracy_mean,
        s.comm_per_round_mb,
        opt(s.total_gb_to_target)
    )
}

fn write_rounds_jsonl(dir: &RunDir, name: &str, report: &ExperimentReport) -> Result<(), RunnerError> {
    let mut out = String::new();
    for seed_run in &report.per_seed {
        for stats in &seed_run.rounds {
            let line = serde_json::to_string(&RoundLine {
                seed: seed_run.seed,
                stats,
            })?;
            out.push_str(&line);
            out.push('\n');
        }
    }
    dir.write(name, &out)
}

pub fn fed_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, RunnerError> {
    let prepared = prepare(cfg)?;
    let arch = cfg.architecture(prepared.train.n_features(), prepared.train.n_classes());
    let plan = cfg.partition_plan()?;
    let fed_cfg = cfg.fed_config()?;
    Ok(run_experiment(
        arch,
        &prepared.train,
        &prepared.test,
        &plan,
        &fed_cfg,
        &cfg.seeds,
    )?)
}

pub fn run_fed(cfg: &ExperimentConfig) -> Result<(), RunnerError> {
    let dir = RunDir::create(cfg, "fed")?;
    let report = fed_experiment(cfg)?;
    write_rounds_jsonl(&dir, "rounds.jsonl", &report)?;
    dir.write(
        "summary.csv",
        &format!("{SUMMARY_HEADER}\n{}\n", summary_csv_row(&report)),
    )?;
    dir.write_json("report.json", &report)?;
    dir.finish()?;
    println!(
        "fed complete: {} final acc {:.4}, {} of {} seeds reached the 98% target",
        report.summary.algorithm,
        report.summary.accuracy_mean,
        report.summary.seeds_reaching_target,
        report.seeds.len()
    );
    Ok(())
}

/// One paired-attack measurement on a fresh logistic instance.
struct AttackInstance {
    model: ModelParams,
    x: Array1<f64>,
    y: usize,
    grad: Array1<f64>,
}

fn attack_instance(features: usize, classes: usize, seed: u64, train: &TrainConfig) -> AttackInstance {
    let arch = Architecture::Logistic { features, classes };
    let mut rng = rng_from_seed(seed);
    let mut model = init_model(arch, seed).expect("valid arch");
    for v in model.w.iter_mut() {
        *v += 0.4 * (rng.random::<f64>() - 0.5);
    }
    let x = Array1::from_iter((0..features).map(|_| rng.random::<f64>() * 2.0 - 1.0));
    let y = rng.random_range(0..classes);
    let xb = Array2::from_shape_vec((1, features), x.to_vec()).expect("row");
    let (_, grad) = loss_and_gradient(&model, xb.view(), &[y], train, None).expect("gradient");
    AttackInstance { model, x, y, grad }
}

/// A client's small-batch training gradient: what the protocol actually
/// uplinks. `target_label` is the first sample's label, the one the
/// cohort attack is scored against.
struct BatchInstance {
    model: ModelParams,
    target_label: usize,
    grad: Array1<f64>,
}

fn batch_instance(
    features: usize,
    classes: usize,
    batch: usize,
    seed: u64,
    train: &TrainConfig,
) -> BatchInstance {
    let arch = Architecture::Logistic { features, classes };
    let mut rng = rng_from_seed(seed);
    let mut model = init_model(arch, seed).expect("valid arch");
    for v in model.w.iter_mut() {
        *v += 0.4 * (rng.random::<f64>() - 0.5);
    }
    let xs = Array2::from_shape_fn((batch, features), |_| rng.random::<f64>() * 2.0 - 1.0);
    let ys: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let (_, grad) = loss_and_gradient(&model, xs.view(), &ys, train, None).expect("gradient");
    BatchInstance {
        model,
        target_label: ys[0],
        grad,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackSummary {
    pub trials: usize,
    pub mean_psnr_full_db: f64,
    pub mean_psnr_binarized_db: f64,
    pub psnr_gap_db: f64,
    pub label_recovery_full: f64,
    pub label_recovery_binarized: f64,
    pub aggregate_cohorts: usize,
    pub aggregate_cohort_size: usize,
    pub label_recovery_aggregate: f64,
}

/// Paired full-precision vs binarized inversion trials plus the
/// aggregate-cohort label-recovery experiment.
pub fn attack_summary(cfg: &ExperimentConfig) -> Result<AttackSummary, RunnerError> {
    let a = &cfg.attack;
    let train = cfg.train_config();
    let attack_cfg = AttackConfig {
        steps: a.steps,
        initial_step: 0.5,
        seed: 0,
        train: train.clone(),
    };
    let mut psnr_full = Vec::new();
    let mut psnr_bin = Vec::new();
    let mut rec_full = 0usize;
    let mut rec_bin = 0usize;
    for t in 0..a.trials {
        let inst = attack_instance(a.features, a.classes, derive_seed(1, "attack", t as u64), &train);
        let target = AttackTarget {
            true_features: inst.x.clone(),
            true_label: inst.y,
        };
        let mut cfg_t = attack_cfg.clone();
        cfg_t.seed = derive_seed(2, "attack-init", t as u64);
        let full = invert_gradient(
            &GradObservation::Full(inst.grad.clone()),
            &inst.model,
            &target,
            &cfg_t,
        )?;
        let bin = binarize(&inst.grad, cfg.binarize_mode().map_err(RunnerError::Config)?)?;
        let binned = invert_gradient(
            &GradObservation::Binarized(bin),
            &inst.model,
            &target,
            &cfg_t,
        )?;
        psnr_full.push(full.report.psnr_db.min(120.0));
        psnr_bin.push(binned.report.psnr_db.min(120.0));
        rec_full += usize::from(full.recovered_label == inst.y);
        rec_bin += usize::from(binned.recovered_label == inst.y);
    }

    // cohort experiment: the server only sees the mean of K binarized
    // small-batch updates; the bias read-out degrades toward chance
    let cohorts = a.trials.max(10);
    let batch = 8;
    let mut matched = 0usize;
    let mut total = 0usize;
    for c in 0..cohorts {
        let mut agg: Array1<f64> = Array1::zeros(0);
        let mut labels = Vec::new();
        let mut arch = None;
        for k in 0..a.cohort_clients {
            let inst = batch_instance(
                a.features,
                a.classes,
                batch,
                derive_seed(3, "cohort", (c * a.cohort_clients + k) as u64),
                &train,
            );
            let bin = binarize(&inst.grad, cfg.binarize_mode().map_err(RunnerError::Config)?)?;
            let unpacked = bin.unpack();
            if agg.is_empty() {
                agg = unpacked;
            } else {
                agg = agg + unpacked;
            }
            labels.push(inst.target_label);
            arch = Some(inst.model.arch);
        }
        let agg = agg / a.cohort_clients as f64;
        let guess = recover_label_from_vector(&agg, &arch.expect("cohort nonempty"));
        matched += labels.iter().filter(|&&l| l == guess).count();
        total += labels.len();
    }

    Ok(AttackSummary {
        trials: a.trials,
        mean_psnr_full_db: mean(&psnr_full),
        mean_psnr_binarized_db: mean(&psnr_bin),
        psnr_gap_db: mean(&psnr_full) - mean(&psnr_bin),
        label_recovery_full: rec_full as f64 / a.trials as f64,
        label_recovery_binarized: rec_bin as f64 / a.trials as f64,
        aggregate_cohorts: cohorts,
        aggregate_cohort_size: a.cohort_clients,
        label_recovery_aggregate: matched as f64 / total as f64,
    })
}

pub fn run_attack(cfg: &ExperimentConfig) -> Result<(), RunnerError> {
    let dir = RunDir::create(cfg, "attack")?;
    let summary = attack_summary(cfg)?;
    dir.write_json("attack_report.json", &summary)?;
    dir.finish()?;
    println!(
        "attack complete: PSNR full {:.1} dB vs binarized {:.1} dB, aggregate label recovery {:.3}",
        summary.mean_psnr_full_db, summary.mean_psnr_binarized_db, summary.label_recovery_aggregate
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub smartify: bool,
    pub encrypt: bool,
    pub dp: bool,
    pub pca: bool,
    pub smote: bool,
    pub valid: bool,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub comm_per_round_mb: Option<f64>,
    pub compression_ratio: Option<f64>,
    pub psnr_db: Option<f64>,
    pub label_recovery: Option<f64>,
    /// Whether an honest-but-curious server can read individual updates.
    pub individual_updates_visible: Option<bool>,
}

pub const ABLATION_HEADER: &str = "smartify,encrypt,dp,pca,smote,valid,acc,f1,comm_per_round_mb,ratio,psnr_db,label_recovery,updates_visible";

fn ablation_csv_row(c: &AblationCell) -> String {
    let b = |v: bool| if v { "1" } else { "0" };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        b(c.smartify),
        b(c.encrypt),
        b(c.dp),
        b(c.pca),
        b(c.smote),
        b(c.valid),
        opt(c.accuracy),
        opt(c.macro_f1),
        opt(c.comm_per_round_mb),
        opt(c.compression_ratio),
        opt(c.psnr_db),
        opt(c.label_recovery),
        c.individual_updates_visible
            .map(|v| b(v).to_string())
            .unwrap_or_default()
    )
}

/// Runs the full 2^5 toggle matrix. Cells with encryption but no
/// binarization are emitted as invalid (no full-precision Paillier
/// encoding exists here).
pub fn ablation_matrix(cfg: &ExperimentConfig) -> Result<Vec<AblationCell>, RunnerError> {
    let mut small = cfg.clone();
    small.data.rows = cfg.ablation.rows;
    small.fed.clients = cfg.ablation.clients;
    small.fed.rounds_max = cfg.ablation.rounds_max;

    let mut cells = Vec::with_capacity(32);
    for idx in 0..32u32 {
        let smartify = idx & 1 != 0;
        let encrypt = idx & 2 != 0;
        let dp = idx & 4 != 0;
        let pca = idx & 8 != 0;
        let smote_on = idx & 16 != 0;
        if encrypt && !smartify {
            cells.push(AblationCell {
                smartify,
                encrypt,
                dp,
                pca,
                smote: smote_on,
                valid: false,
                accuracy: None,
                macro_f1: None,
                comm_per_round_mb: None,
                compression_ratio: None,
                psnr_db: None,
                label_recovery: None,
                individual_updates_visible: None,
            });
            continue;
        }
        let balance = if smote_on { "smote" } else { "undersample" };
        let prepared = prepare_with(&small, pca, balance)?;
        let arch = small.architecture(prepared.train.n_features(), prepared.train.n_classes());
        let dp_cfg = dp.then(|| {
            let mut d = small.dp_config().unwrap_or_default();
            if !small.privacy.dp {
                d = edgefed::privacy::DpConfig::default();
            }
            d
        });
        let mut fed_cfg = small.fed_config().map_err(RunnerError::Config)?;
        fed_cfg.algorithm = if smartify {
            Algorithm::EdgeDetect {
                mode: small.binarize_mode().map_err(RunnerError::Config)?,
                encrypt,
                dp: dp_cfg,
            }
        } else {
            Algorithm::FedAvg
        };
        fed_cfg.baseline_dp = if smartify { None } else { dp_cfg };
        let plan = PartitionPlan {
            strategy: small.partition_strategy().map_err(RunnerError::Config)?,
            clients: small.fed.clients,
            seed: small.data.seed,
        };
        let report = run_experiment(
            arch,
            &prepared.train,
            &prepared.test,
            &plan,
            &fed_cfg,
            &small.seeds,
        )?;

        // leakage probe on a single-sample update in this cell's form
        let train = small.train_config();
        let mut psnrs = Vec::new();
        let mut recovered = 0usize;
        for t in 0..small.ablation.attack_trials {
            let inst = attack_instance(
                small.attack.features,
                small.attack.classes,
                derive_seed(11, "ablate-attack", (idx as u64) << 32 | t as u64),
                &train,
            );
            let observed_delta = match dp_cfg {
                Some(d) => dp_sanitize(&inst.grad, &d, derive_seed(12, "ablate-dp", t as u64)),
                None => inst.grad.clone(),
            };
            let observation = if smartify {
                GradObservation::Binarized(binarize(
                    &observed_delta,
                    small.binarize_mode().map_err(RunnerError::Config)?,
                )?)
            } else {
                GradObservation::Full(observed_delta)
            };
            let outcome = invert_gradient(
                &observation,
                &inst.model,
                &AttackTarget {
                    true_features: inst.x.clone(),
                    true_label: inst.y,
                },
                &AttackConfig {
                    steps: small.ablation.attack_steps,
                    initial_step: 0.5,
                    seed: derive_seed(13, "ablate-attack-init", t as u64),
                    train: train.clone(),
                },
            )?;
            psnrs.push(outcome.report.psnr_db.min(120.0));
            recovered += usize::from(outcome.recovered_label == inst.y);
        }

        cells.push(AblationCell {
            smartify,
            encrypt,
            dp,
            pca,
            smote: smote_on,
            valid: true,
            accuracy: Some(report.summary.accuracy_mean),
            macro_f1: Some(report.summary.macro_f1_mean),
            comm_per_round_mb: Some(report.summary.comm_per_round_mb),
            compression_ratio: Some(if smartify { 32.0 } else { 1.0 }),
            psnr_db: Some(mean(&psnrs)),
            label_recovery: Some(recovered as f64 / small.ablation.attack_trials.max(1) as f64),
            individual_updates_visible: Some(!encrypt),
        });
    }
    Ok(cells)
}

pub fn run_ablate(cfg: &ExperimentConfig) -> Result<(), RunnerError> {
    let dir = RunDir::create(cfg, "ablate")?;
    let cells = ablation_matrix(cfg)?;
    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for cell in &cells {
        csv.push_str(&ablation_csv_row(cell));
        csv.push('\n');
    }
    dir.write("ablation.csv", &csv)?;
    dir.write_json("ablation.json", &cells)?;
    dir.finish()?;
    println!("ablate complete: {} cells", cells.len());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CryptoBenchRow {
    pub bits: u32,
    pub keygen_ms: f64,
    pub encrypt_ms: f64,
    pub he_add_us: f64,
    pub decrypt_ms: f64,
    pub ciphertext_bytes: usize,
}

pub fn crypto_bench(cfg: &ExperimentConfig) -> Result<Vec<CryptoBenchRow>, RunnerError> {
    use num_bigint::BigUint;
    use std::time::Instant;

    let mut rows = Vec::new();
    let ops = cfg.crypto.bench_ops.max(1);
    for &bits in &cfg.crypto.bench_bits {
        let mut rng = rng_from_seed(derive_seed(cfg.seeds[0], "bench", bits as u64));
        let t0 = Instant::now();
        let kp = edgefed::crypto::keygen(bits, &mut rng)?;
        let keygen_ms = t0.elapsed().as_secs_f64() * 1e3;

        let messages: Vec<_> = (0..ops).map(|i| BigUint::from(i as u64 + 1)).collect();
        let t0 = Instant::now();
        let cts: Vec<_> = messages
            .iter()
            .map(|m| kp.public.encrypt(m, &mut rng))
            .collect::<Result<_, _>>()?;
        let encrypt_ms = t0.elapsed().as_secs_f64() * 1e3 / ops as f64;

        let t0 = Instant::now();
        let mut acc = cts[0].clone();
        for ct in cts.iter().skip(1) {
            acc = kp.public.he_add(&acc, ct)?;
        }
        let he_add_us = t0.elapsed().as_secs_f64() * 1e6 / (ops - 1).max(1) as f64;

        let t0 = Instant::now();
        let sum = kp.secret.decrypt(&acc)?;
        let decrypt_ms = t0.elapsed().as_secs_f64() * 1e3;
        let expected: u64 = (1..=ops as u64).sum();
        if sum != BigUint::from(expected) {
            return Err(RunnerError::Runtime(format!(
                "bench decrypt mismatch: {sum} vs {expected}"
            )));
        }
        rows.push(CryptoBenchRow {
            bits,
            keygen_ms,
            encrypt_ms,
            he_add_us,
            decrypt_ms,
            ciphertext_bytes: acc.wire_len(),
        });
    }
    Ok(rows)
}

pub fn run_bench_crypto(cfg: &ExperimentConfig) -> Result<(), RunnerError> {
    let dir = RunDir::create(cfg, "bench-crypto")?;
    let rows = crypto_bench(cfg)?;
    dir.write_json("crypto_bench.json", &rows)?;
    let mut out = std::io::stdout();
    writeln!(out, "bits  keygen_ms  encrypt_ms  he_add_us  decrypt_ms  ct_bytes")?;
    for r in &rows {
        writeln!(
            out,
            "{:<5} {:>9.2} {:>11.3} {:>10.2} {:>11.3} {:>9}",
            r.bits, r.keygen_ms, r.encrypt_ms, r.he_add_us, r.decrypt_ms, r.ciphertext_bytes
        )?;
    }
    dir.finish()?;
    Ok(())
}
