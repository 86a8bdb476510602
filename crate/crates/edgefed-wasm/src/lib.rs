//! Browser bindings for the simulator. Three interactive operations, each
//! returning a JSON string for the static page in `www/` to render:
//! binarization alignment on heavy-tailed gradients, a small federated
//! training run with live convergence/bandwidth curves, and an encrypted
//! aggregation walkthrough on a toy Paillier modulus.
//!
//! Everything is seeded explicitly; no entropy source is required in the
//! browser.

use edgefed::dataio::{generate_synthetic, SyntheticSpec};
use edgefed::fed::{
    init_state, run_round, Algorithm, FedConfig, PartitionPlan, PartitionStrategy, Targets,
};
use edgefed::model::{Architecture, TrainConfig};
use edgefed::privacy::DpConfig;
use edgefed::smartify::{binarize, cosine_alignment, BinarizeMode};
use edgefed::util::{mean, rng_from_seed, sample_std};
use ndarray::Array1;
use rand_distr::{Distribution, StudentT};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse_mode(mode: &str) -> Result<BinarizeMode, String> {
    match mode {
        "signed_median" => Ok(BinarizeMode::SignedMedian),
        "abs_median" => Ok(BinarizeMode::AbsMedian),
        "zero" => Ok(BinarizeMode::Zero),
        other => Err(format!("unknown mode {other:?}")),
    }
}

#[derive(Serialize)]
struct AlignmentOut {
    alignments: Vec<f64>,
    mean: f64,
    std: f64,
}

/// Cosine alignment between heavy-tailed synthetic gradients and their
/// binarization, across `draws` independent gradients of dimension `dim`
/// with Student-t(df) coordinates.
#[wasm_bindgen]
pub fn alignment_histogram(
    dim: usize,
    df: f64,
    draws: usize,
    mode: &str,
    seed: u64,
) -> Result<String, JsValue> {
    alignment_histogram_impl(dim, df, draws, mode, seed).map_err(|e| JsValue::from_str(&e))
}

pub fn alignment_histogram_impl(
    dim: usize,
    df: f64,
    draws: usize,
    mode: &str,
    seed: u64,
) -> Result<String, String> {
    let mode = parse_mode(mode)?;
    if dim == 0 || draws == 0 || !(df > 0.0) {
        return Err("dim, draws and df must be positive".to_string());
    }
    let noise = StudentT::new(df).map_err(|e| e.to_string())?;
    let mut rng = rng_from_seed(seed);
    let mut alignments = Vec::with_capacity(draws);
    for _ in 0..draws {
        let g = Array1::from_iter((0..dim).map(|_| noise.sample(&mut rng)));
        let bin = binarize(&g, mode).map_err(|e| e.to_string())?;
        let a = cosine_alignment(&bin, &g).map_err(|e| e.to_string())?;
        alignments.push(a);
    }
    let out = AlignmentOut {
        mean: mean(&alignments),
        std: sample_std(&alignments),
        alignments,
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}

#[derive(Serialize)]
struct FedRoundOut {
    round: u32,
    accuracy: f64,
    macro_f1: f64,
    alignment: Option<f64>,
    cumulative_wire_kb: f64,
    cumulative_logical_kb: f64,
}

#[derive(Serialize)]
struct FedDemoOut {
    rounds: Vec<FedRoundOut>,
    algorithm: String,
    clients: usize,
    d_params: usize,
    logical_bits_per_round_per_client: f64,
}

/// Runs a small federated experiment on synthetic 7-class flow data and
/// returns per-round accuracy and bandwidth. `partition` is "iid" or a
/// Dirichlet alpha value; `algorithm` is one of edgedetect, fedavg,
/// fedprox, signsgd. Encryption (64-bit toy modulus) produces bit-identical
/// models to the plaintext path — toggle it and watch the curves coincide.
#[wasm_bindgen]
pub fn run_fed_demo(
    algorithm: &str,
    clients: usize,
    partition: &str,
    rounds: usize,
    encrypt: bool,
    dp: bool,
    seed: u64,
) -> Result<String, JsValue> {
    run_fed_demo_impl(algorithm, clients, partition, rounds, encrypt, dp, seed)
        .map_err(|e| JsValue::from_str(&e))
}

#[allow(clippy::too_many_arguments)]
pub fn run_fed_demo_impl(
    algorithm: &str,
    clients: usize,
    partition: &str,
    rounds: usize,
    encrypt: bool,
    dp: bool,
    seed: u64,
) -> Result<String, String> {
    let err = |e: String| e;
    let clients = clients.clamp(2, 16);
    let rounds = rounds.clamp(1, 80);
    let algo = match algorithm {
        "fedavg" => Algorithm::FedAvg,
        "fedprox" => Algorithm::FedProx { mu: 0.01 },
        "signsgd" => Algorithm::SignSgd,
        "edgedetect" => Algorithm::EdgeDetect {
            mode: BinarizeMode::SignedMedian,
            encrypt,
            dp: dp.then(DpConfig::default),
        },
        other => return Err(format!("unknown algorithm {other:?}")),
    };
    let strategy = if partition == "iid" {
        PartitionStrategy::Iid
    } else {
        let alpha: f64 = partition
            .parse()
            .map_err(|_| "partition must be \"iid\" or an alpha value".to_string())?;
        PartitionStrategy::Dirichlet { alpha }
    };

    let spec = SyntheticSpec::ids_with_proportions(1400, vec![1.0 / 7.0; 7], seed);
    let ds = generate_synthetic(&spec).map_err(|e| err(e.to_string()))?;
    let scaler = edgefed::features::fit_standardize(&ds);
    let ds = edgefed::features::apply_standardize(&ds, &scaler).map_err(|e| err(e.to_string()))?;
    let (train, test) = ds.train_test_split(0.25, seed).map_err(|e| err(e.to_string()))?;
    let plan = PartitionPlan {
        strategy,
        clients,
        seed,
    };
    let parts = edgefed::fed::partition(&train, &plan).map_err(|e| err(e.to_string()))?;

    let cfg = FedConfig {
        algorithm: algo,
        clients,
        participation: 1.0,
        rounds_max: rounds,
        global_step: 0.01,
        momentum: 0.9,
        train: TrainConfig {
            epochs: 1,
            early_stop_patience: None,
            ..TrainConfig::default()
        },
        targets: Targets::default(),
        paillier_bits: 64,
        batching: true,
        baseline_dp: None,
    };
    let arch = Architecture::Logistic {
        features: train.n_features(),
        classes: train.n_classes(),
    };
    let mut state = init_state(arch, &cfg, seed).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let stats = run_round(&mut state, &cfg, &parts, &test).map_err(|e| err(e.to_string()))?;
        out.push(FedRoundOut {
            round: stats.round,
            accuracy: stats.accuracy,
            macro_f1: stats.macro_f1,
            alignment: stats.mean_alignment,
            cumulative_wire_kb: stats.cumulative_wire_bytes as f64 / 1e3,
            cumulative_logical_kb: stats.cumulative_logical_bytes / 1e3,
        });
    }
    let demo = FedDemoOut {
        rounds: out,
        algorithm: cfg.algorithm.name().to_string(),
        clients,
        d_params: arch.param_count(),
        logical_bits_per_round_per_client: if cfg.algorithm.is_binarized() {
            arch.param_count() as f64
        } else {
            32.0 * arch.param_count() as f64
        },
    };
    Ok(serde_json::to_string(&demo).expect("serializes"))
}

#[derive(Serialize)]
struct PaillierClientOut {
    client: usize,
    signs: Vec<i64>,
    ciphertext_preview: String,
}

#[derive(Serialize)]
struct PaillierDemoOut {
    modulus_bits: u32,
    n_hex: String,
    clients: Vec<PaillierClientOut>,
    aggregate_ciphertext_preview: String,
    decrypted_sums: Vec<i64>,
    plaintext_sums: Vec<i64>,
    sums_match: bool,
    normalized: Vec<f64>,
}

/// Walks one encrypted aggregation: each client binarizes a random update,
/// encrypts the packed signs under a shared toy key, the server multiplies
/// ciphertexts and decrypts only the per-coordinate sums.
#[wasm_bindgen]
pub fn paillier_demo(clients: usize, dims: usize, seed: u64) -> Result<String, JsValue> {
    paillier_demo_impl(clients, dims, seed).map_err(|e| JsValue::from_str(&e))
}

pub fn paillier_demo_impl(clients: usize, dims: usize, seed: u64) -> Result<String, String> {
    use edgefed::crypto::{keygen, pack_batch, unpack_sums, SignedEncoding};
    let err = |e: String| e;
    let clients = clients.clamp(2, 12);
    let dims = dims.clamp(2, 16);
    let mut rng = rng_from_seed(seed);
    let kp = keygen(64, &mut rng).map_err(|e| err(e.to_string()))?;
    let enc = SignedEncoding::for_key(&kp.public, clients as u64, 1).map_err(|e| err(e.to_string()))?;

    let noise = StudentT::new(3.0).map_err(|e| e.to_string())?;
    let mut client_rows = Vec::with_capacity(clients);
    let mut all_signs: Vec<Vec<i64>> = Vec::with_capacity(clients);
    let mut aggregate: Vec<Option<edgefed::crypto::Ciphertext>> =
        vec![None; dims.div_ceil(enc.slots_per_ciphertext)];
    for c in 0..clients {
        let g = Array1::from_iter((0..dims).map(|_| noise.sample(&mut rng)));
        let bin = binarize(&g, BinarizeMode::SignedMedian).map_err(|e| err(e.to_string()))?;
        let signs = bin.signs_i64();
        let packed = pack_batch(&signs, &enc).map_err(|e| err(e.to_string()))?;
        let mut preview = String::new();
        for (pos, m) in packed.iter().enumerate() {
            let ct = kp.public.encrypt(m, &mut rng).map_err(|e| err(e.to_string()))?;
            if pos == 0 {
                let hex = ct
                    .to_wire()
                    .iter()
                    .skip(4)
                    .take(8)
                    .map(|b| format!("{b:02x}"))
                    .collect::<String>();
                preview = format!("{hex}…");
            }
            aggregate[pos] = Some(match aggregate[pos].take() {
                None => ct,
                Some(acc) => kp.public.he_add(&acc, &ct).map_err(|e| err(e.to_string()))?,
            });
        }
        client_rows.push(PaillierClientOut {
            client: c,
            signs: signs.clone(),
            ciphertext_preview: preview,
        });
        all_signs.push(signs);
    }

    let mut decrypted_sums = Vec::with_capacity(dims);
    let mut agg_preview = String::new();
    for (pos, acc) in aggregate.into_iter().enumerate() {
        let ct = acc.expect("aggregated");
        if pos == 0 {
            let hex = ct
                .to_wire()
                .iter()
                .skip(4)
                .take(8)
                .map(|b| format!("{b:02x}"))
                .collect::<String>();
            agg_preview = format!("{hex}…");
        }
        let m = kp.secret.decrypt(&ct).map_err(|e| err(e.to_string()))?;
        let start = pos * enc.slots_per_ciphertext;
        let slots = enc.slots_per_ciphertext.min(dims - start);
        decrypted_sums.extend(
            unpack_sums(&m, &enc, clients as u64, slots).map_err(|e| err(e.to_string()))?,
        );
    }
    let mut plaintext_sums = vec![0i64; dims];
    for signs in &all_signs {
        for (j, &s) in signs.iter().enumerate() {
            plaintext_sums[j] += s;
        }
    }
    let out = PaillierDemoOut {
        modulus_bits: kp.public.bits(),
        n_hex: format!("{:x}", kp.public.n()),
        clients: client_rows,
        aggregate_ciphertext_preview: agg_preview,
        sums_match: decrypted_sums == plaintext_sums,
        normalized: decrypted_sums
            .iter()
            .map(|&s| s as f64 / clients as f64)
            .collect(),
        decrypted_sums,
        plaintext_sums,
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}
