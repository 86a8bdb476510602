//! Federated orchestration: client partitioning, participant selection,
//! the four-phase secure round (local SGD, binarization, encrypted
//! aggregation, momentum global update), the FedAvg / FedProx / signSGD
//! baselines, and convergence plus communication accounting.

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    encode_signed, keygen, pack_batch, unpack_sums, CryptoError, PaillierKeypair, SignedEncoding,
};
use crate::dataio::Dataset;
use crate::model::{
    evaluate, init_model, local_train, Architecture, ModelDelta, ModelParams, TrainConfig,
};
use crate::privacy::{dp_sanitize, DpConfig};
use crate::smartify::{binarize, cosine_alignment, BinDelta, BinarizeMode};
use crate::transport::{Message, MsgType};
use crate::util::{derive_seed, mean, rng_from_seed, sample_std};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("dataset has {rows} rows for {clients} clients")]
    TooFewRows { rows: usize, clients: usize },
    #[error("client {0} ended up empty after retries")]
    EmptyClient(usize),
    #[error("label-skew plan infeasible: {0}")]
    LabelSkewInfeasible(String),
    #[error("participation rate must be in (0, 1], got {0}")]
    BadParticipation(f64),
    #[error("config invalid: {0}")]
    BadConfig(String),
    #[error("round was given {got} client datasets, config says {expected}")]
    ClientCountMismatch { got: usize, expected: usize },
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("crypto error: {0}")]
    Crypto(#[from] CryptoError),
    #[error("smartify error: {0}")]
    Smartify(#[from] crate::smartify::SmartifyError),
    #[error("data error: {0}")]
    Data(#[from] crate::dataio::DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartitionStrategy {
    /// Per-class round-robin dealing: client proportions match the global
    /// mix up to rounding.
    Iid,
    /// Per-class client shares drawn from Dirichlet(alpha * 1_K); smaller
    /// alpha means stronger heterogeneity.
    Dirichlet { alpha: f64 },
    /// Each client predominantly observes a few classes: its dominant
    /// classes hold at least `dominance` of its rows.
    LabelSkew { dominant_classes: usize, dominance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub strategy: PartitionStrategy,
    pub clients: usize,
    pub seed: u64,
}

impl PartitionStrategy {
    pub fn label(&self) -> String {
        match self {
            PartitionStrategy::Iid => "iid".to_string(),
            PartitionStrategy::Dirichlet { alpha } => format!("dirichlet({alpha})"),
            PartitionStrategy::LabelSkew { .. } => "label_skew".to_string(),
        }
    }
}

/// Dirichlet(alpha * 1_K) sample via normalized Gamma draws.
fn dirichlet_weights(alpha: f64, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive alpha");
    let mut w: Vec<f64> = (0..k).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Largest-remainder rounding of `total * weights[i]` so counts sum to
/// `total` exactly.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| (w * total as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (w * total as f64 - counts[i] as f64, i))
        .collect();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite remainders"));
    for (_, i) in remainders.iter().take(total - assigned) {
        counts[*i] += 1;
    }
    counts
}

fn shuffled<T: Clone>(items: &[T], rng: &mut impl Rng) -> Vec<T> {
    let mut v = items.to_vec();
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v
}

/// Splits a dataset across `plan.clients` clients. Every row lands on
/// exactly one client and no client is empty; infeasible draws retry with
/// derived seeds before failing.
pub fn partition(ds: &Dataset, plan: &PartitionPlan) -> Result<Vec<Dataset>, FedError> {
    let k = plan.clients;
    if ds.n_rows() < k {
        return Err(FedError::TooFewRows {
            rows: ds.n_rows(),
            clients: k,
        });
    }
    const RETRIES: u64 = 8;
    let mut last_err = None;
    for attempt in 0..RETRIES {
        let seed = derive_seed(plan.seed, "partition-attempt", attempt);
        let result = match plan.strategy {
            PartitionStrategy::Iid => partition_iid(ds, k, seed),
            PartitionStrategy::Dirichlet { alpha } => partition_dirichlet(ds, k, alpha, seed),
            PartitionStrategy::LabelSkew {
                dominant_classes,
                dominance,
            } => partition_label_skew(ds, k, dominant_classes, dominance, seed),
        };
        match result {
            Ok(assignment) => {
                if let Some(empty) = assignment.iter().position(|rows| rows.is_empty()) {
                    last_err = Some(FedError::EmptyClient(empty));
                    continue;
                }
                return Ok(assignment
                    .into_iter()
                    .map(|rows| ds.select_rows(&rows))
                    .collect());
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(FedError::EmptyClient(0)))
}

fn partition_iid(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, FedError> {
    let mut rng = rng_from_seed(seed);
    let mut assignment = vec![Vec::new(); k];
    for c in 0..ds.n_classes() {
        let idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels[i] == c).collect();
        let idx = shuffled(&idx, &mut rng);
        let offset = rng.random_range(0..k);
        for (pos, row) in idx.into_iter().enumerate() {
            assignment[(pos + offset) % k].push(row);
        }
    }
    Ok(assignment)
}

fn partition_dirichlet(
    ds: &Dataset,
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>, FedError> {
    if !(alpha > 0.0) {
        return Err(FedError::BadConfig(format!("dirichlet alpha {alpha}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut assignment = vec![Vec::new(); k];
    for c in 0..ds.n_classes() {
        let idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        let idx = shuffled(&idx, &mut rng);
        let weights = dirichlet_weights(alpha, k, &mut rng);
        let counts = apportion(idx.len(), &weights);
        let mut at = 0;
        for (client, &count) in counts.iter().enumerate() {
            assignment[client].extend_from_slice(&idx[at..at + count]);
            at += count;
        }
    }
    Ok(assignment)
}

fn partition_label_skew(
    ds: &Dataset,
    k: usize,
    dominant_classes: usize,
    dominance: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>, FedError> {
    let classes = ds.n_classes();
    let g = dominant_classes.clamp(1, classes);
    if !(0.0..1.0).contains(&dominance) {
        return Err(FedError::BadConfig(format!("dominance {dominance}")));
    }
    let counts = ds.class_counts();
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    if k * g < present.len() {
        return Err(FedError::LabelSkewInfeasible(format!(
            "{k} clients x {g} dominant classes cannot cover {} classes",
            present.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    if g > present.len() {
        return Err(FedError::LabelSkewInfeasible(format!(
            "{g} dominant classes requested but only {} present",
            present.len()
        )));
    }

    // Dominance slots proportional to class mass, at least one and at most
    // one-per-client for each class, so dominant capacity exists wherever
    // rows exist.
    let total_slots = k * g;
    let weights: Vec<f64> = present
        .iter()
        .map(|&c| counts[c] as f64 / ds.n_rows() as f64)
        .collect();
    let mut slot_counts = apportion(total_slots, &weights);
    let mut pool = 0usize;
    for count in slot_counts.iter_mut() {
        if *count > k {
            pool += *count - k;
            *count = k;
        }
    }
    for i in 0..slot_counts.len() {
        if slot_counts[i] == 0 {
            if pool == 0 {
                let donor = (0..slot_counts.len())
                    .filter(|&j| slot_counts[j] > 1)
                    .max_by_key(|&j| slot_counts[j])
                    .ok_or_else(|| FedError::LabelSkewInfeasible("slot coverage".into()))?;
                slot_counts[donor] -= 1;
                pool += 1;
            }
            slot_counts[i] = 1;
            pool -= 1;
        }
    }
    while pool > 0 {
        let target = (0..slot_counts.len())
            .filter(|&j| slot_counts[j] < k)
            .max_by(|&a, &b| weights[a].partial_cmp(&weights[b]).expect("finite"))
            .ok_or_else(|| FedError::LabelSkewInfeasible("slot overflow".into()))?;
        slot_counts[target] += 1;
        pool -= 1;
    }

    // Deal slots in cyclic client order, most frequent class first: a class
    // run of length <= k never lands twice on one client, and k*g slots
    // dealt cyclically give every client exactly g dominant classes.
    let perm = shuffled(&(0..k).collect::<Vec<_>>(), &mut rng);
    let mut class_order: Vec<usize> = (0..present.len()).collect();
    class_order.sort_by(|&a, &b| slot_counts[b].cmp(&slot_counts[a]));
    let mut dominant: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = rng.random_range(0..k);
    for &ci in &class_order {
        for _ in 0..slot_counts[ci] {
            dominant[perm[cursor % k]].push(present[ci]);
            cursor += 1;
        }
    }

    // share of each class routed to its claimants as dominant mass
    let mut assignment = vec![Vec::new(); k];
    let mut minor_pool: Vec<usize> = Vec::new();
    for &c in &present {
        let idx: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.labels[i] == c).collect();
        let idx = shuffled(&idx, &mut rng);
        let claimants: Vec<usize> = (0..k).filter(|&cl| dominant[cl].contains(&c)).collect();
        let dominant_share = (dominance * idx.len() as f64).round() as usize;
        let per = apportion(dominant_share, &vec![1.0 / claimants.len() as f64; claimants.len()]);
        let mut at = 0;
        for (ci, &client) in claimants.iter().enumerate() {
            assignment[client].extend_from_slice(&idx[at..at + per[ci]]);
            at += per[ci];
        }
        minor_pool.extend_from_slice(&idx[at..]);
    }

    // distribute the minor pool without pushing any client below the
    // dominance floor; rows of a client's own dominant class are always safe
    let minor_pool = shuffled(&minor_pool, &mut rng);
    let mut dominant_count: Vec<usize> = assignment.iter().map(|a| a.len()).collect();
    let mut minor_count = vec![0usize; k];
    for row in minor_pool {
        let c = ds.labels[row];
        let slack = |cl: usize, dc: &[usize], mc: &[usize]| -> f64 {
            let dom = dc[cl] as f64;
            let tot = (dc[cl] + mc[cl]) as f64;
            dom / (tot + 1.0) - dominance
        };
        // prefer the non-claimant with the most dominance slack
        let mut best: Option<(f64, usize)> = None;
        for cl in 0..k {
            if dominant[cl].contains(&c) {
                continue;
            }
            let s = slack(cl, &dominant_count, &minor_count);
            if s >= 0.0 && best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, cl));
            }
        }
        match best {
            Some((_, cl)) => {
                assignment[cl].push(row);
                minor_count[cl] += 1;
            }
            None => {
                // fall back to the smallest claimant of this class
                let cl = (0..k)
                    .filter(|&cl| dominant[cl].contains(&c))
                    .min_by_key(|&cl| assignment[cl].len())
                    .ok_or_else(|| FedError::LabelSkewInfeasible("uncovered class".into()))?;
                assignment[cl].push(row);
                dominant_count[cl] += 1;
            }
        }
    }
    Ok(assignment)
}

/// Uniform participant selection: |S_r| = max(1, round(rate * K)) distinct
/// clients, deterministic per (seed, round).
pub fn select_participants(k: usize, rate: f64, round: u32, seed: u64) -> Vec<usize> {
    assert!(rate > 0.0 && rate <= 1.0, "participation rate {rate}");
    let take = ((rate * k as f64).round() as usize).clamp(1, k);
    let mut rng = rng_from_seed(derive_seed(seed, "participants", round as u64));
    let all: Vec<usize> = (0..k).collect();
    let mut shuffled = shuffled(&all, &mut rng);
    shuffled.truncate(take);
    shuffled.sort_unstable();
    shuffled
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Algorithm {
    FedAvg,
    FedProx { mu: f64 },
    SignSgd,
    EdgeDetect {
        mode: BinarizeMode,
        encrypt: bool,
        dp: Option<DpConfig>,
    },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx { .. } => "fedprox",
            Algorithm::SignSgd => "signsgd",
            Algorithm::EdgeDetect { .. } => "edgedetect",
        }
    }

    /// Binarized algorithms move one logical bit per coordinate uplink.
    pub fn is_binarized(&self) -> bool {
        matches!(self, Algorithm::SignSgd | Algorithm::EdgeDetect { .. })
    }
}

/// Accuracy targets as fractions of the centralized reference accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub acc95: f64,
    pub acc98: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Self {
            acc95: 0.95,
            acc98: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub algorithm: Algorithm,
    pub clients: usize,
    pub participation: f64,
    pub rounds_max: usize,
    /// Global step applied to binarized aggregates.
    pub global_step: f64,
    /// Heavy-ball momentum of the global update; 0 disables it.
    pub momentum: f64,
    pub train: TrainConfig,
    pub targets: Targets,
    pub paillier_bits: u32,
    /// Pack several coordinates per ciphertext; off reproduces the
    /// one-value-per-ciphertext protocol exactly.
    pub batching: bool,
    /// Ablation extension: clip-and-noise sanitization of baseline
    /// (non-binarized) updates before aggregation. EdgeDetect carries its
    /// own dp setting and ignores this field.
    pub baseline_dp: Option<DpConfig>,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::EdgeDetect {
                mode: BinarizeMode::SignedMedian,
                encrypt: true,
                dp: Some(DpConfig::default()),
            },
            clients: 10,
            participation: 1.0,
            rounds_max: 100,
            global_step: 0.01,
            momentum: 0.9,
            train: TrainConfig::default(),
            targets: Targets::default(),
            paillier_bits: 2048,
            batching: true,
            baseline_dp: None,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        if self.clients == 0 {
            return Err(FedError::BadConfig("clients must be positive".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(FedError::BadParticipation(self.participation));
        }
        if !(self.global_step > 0.0) {
            return Err(FedError::BadConfig(format!(
                "global_step {} must be positive",
                self.global_step
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(FedError::BadConfig(format!(
                "momentum {} must be in [0, 1)",
                self.momentum
            )));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Per-round bookkeeping mirroring the convergence/bandwidth tables:
/// evaluation metrics, alignment, and logical vs wire uplink bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u32,
    pub participants: Vec<usize>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub mean_alignment: Option<f64>,
    pub uplink_logical_bytes: f64,
    pub uplink_wire_bytes: u64,
    pub cumulative_logical_bytes: f64,
    pub cumulative_wire_bytes: u64,
    pub wall_time_s: f64,
}

/// Server-side state carried across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub model: ModelParams,
    pub prev_model: ModelParams,
    pub keypair: Option<PaillierKeypair>,
    pub round: u32,
    pub seed: u64,
    pub cumulative_logical_bytes: f64,
    pub cumulative_wire_bytes: u64,
}

pub fn init_state(arch: Architecture, cfg: &FedConfig, seed: u64) -> Result<ServerState, FedError> {
    cfg.validate()?;
    let model = init_model(arch, derive_seed(seed, "global-init", 0))?;
    let keypair = match &cfg.algorithm {
        Algorithm::EdgeDetect { encrypt: true, .. } => {
            let mut rng = rng_from_seed(derive_seed(seed, "keygen", 0));
            Some(keygen(cfg.paillier_bits, &mut rng)?)
        }
        _ => None,
    };
    Ok(ServerState {
        prev_model: model.clone(),
        model,
        keypair,
        round: 0,
        seed,
        cumulative_logical_bytes: 0.0,
        cumulative_wire_bytes: 0,
    })
}

/// Heavy-ball global update: w + step * delta + momentum * (w - w_prev).
/// With zero momentum this is the plain additive update.
pub fn global_update_momentum(
    w: &Array1<f64>,
    delta_agg: &Array1<f64>,
    step: f64,
    momentum: f64,
    w_prev: &Array1<f64>,
) -> Array1<f64> {
    assert_eq!(w.len(), delta_agg.len());
    assert_eq!(w.len(), w_prev.len());
    w + &(delta_agg * step) + &((w - w_prev) * momentum)
}

/// Sums binarized updates coordinate-wise in exact integer arithmetic,
/// optionally through the encrypted domain. Both routes produce identical
/// integers; the encrypted route only ever decrypts the aggregate.
pub fn aggregate_binarized(
    bins: &[BinDelta],
    keypair: Option<&PaillierKeypair>,
    batching: bool,
    rng: &mut impl rand::RngCore,
) -> Result<Vec<i64>, FedError> {
    assert!(!bins.is_empty());
    let d = bins[0].len();
    let k = bins.len() as u64;
    match keypair {
        None => {
            let mut sums = vec![0i64; d];
            for bin in bins {
                for (j, s) in bin.signs_i64().into_iter().enumerate() {
                    sums[j] += s;
                }
            }
            Ok(sums)
        }
        Some(kp) => {
            let enc = if batching {
                SignedEncoding::for_key(&kp.public, k, 1)?
            } else {
                SignedEncoding::new(k, 1, 1)
            };
            enc.check_cohort(k)?;
            let n_cts = d.div_ceil(enc.slots_per_ciphertext);
            let mut aggregate: Vec<Option<crate::crypto::Ciphertext>> = vec![None; n_cts];
            for bin in bins {
                let signs = bin.signs_i64();
                let plaintexts = if batching {
                    pack_batch(&signs, &enc)?
                } else {
                    signs
                        .iter()
                        .map(|&v| encode_signed(v, &enc, &kp.public))
                        .collect::<Result<Vec<_>, _>>()?
                };
                for (pos, m) in plaintexts.iter().enumerate() {
                    let ct = kp.public.encrypt(m, rng)?;
                    aggregate[pos] = Some(match aggregate[pos].take() {
                        None => ct,
                        Some(acc) => kp.public.he_add(&acc, &ct)?,
                    });
                }
            }
            let mut sums = Vec::with_capacity(d);
            for (pos, acc) in aggregate.into_iter().enumerate() {
                let ct = acc.expect("every position aggregated");
                let decrypted = kp.secret.decrypt(&ct)?;
                if batching {
                    let start = pos * enc.slots_per_ciphertext;
                    let slots = enc.slots_per_ciphertext.min(d - start);
                    sums.extend(unpack_sums(&decrypted, &enc, k, slots)?);
                } else {
                    sums.push(crate::crypto::decode_signed(&decrypted, kp.public.n()));
                }
            }
            Ok(sums)
        }
    }
}

/// Wire bytes of one client's uplink message for the given payload.
fn uplink_wire_bytes(msg_type: MsgType, round: u32, client: u32, payload: Vec<u8>) -> u64 {
    Message::new(msg_type, round, client, payload).encoded_len() as u64
}

fn full_precision_payload(delta: &ModelDelta) -> Vec<u8> {
    let mut payload = Vec::with_capacity(4 + delta.len() * 8);
    payload.extend_from_slice(&(delta.len() as u32).to_le_bytes());
    for v in delta.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    payload
}

fn encrypted_payload(cts: &[crate::crypto::Ciphertext]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(4);
    payload.extend_from_slice(&(cts.len() as u32).to_le_bytes());
    for ct in cts {
        payload.extend_from_slice(&ct.to_wire());
    }
    payload
}

#[cfg(not(target_arch = "wasm32"))]
fn now() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn now() -> Option<std::time::Instant> {
    None
}

/// Executes one communication round, mutating the server state and
/// returning its statistics.
pub fn run_round(
    state: &mut ServerState,
    cfg: &FedConfig,
    clients: &[Dataset],
    test: &Dataset,
) -> Result<RoundStats, FedError> {
    if clients.len() != cfg.clients {
        return Err(FedError::ClientCountMismatch {
            got: clients.len(),
            expected: cfg.clients,
        });
    }
    let started = now();
    let r = state.round;
    let participants = select_participants(cfg.clients, cfg.participation, r, state.seed);
    let d = state.model.arch.param_count();

    // Phase 1: local training from the broadcast parameters
    let mut deltas: Vec<ModelDelta> = Vec::with_capacity(participants.len());
    let mut sample_counts: Vec<usize> = Vec::with_capacity(participants.len());
    for &i in &participants {
        let mut train = cfg.train.clone();
        train.seed = derive_seed(state.seed, "local", ((r as u64) << 32) | i as u64);
        if let Algorithm::FedProx { mu } = cfg.algorithm {
            train.prox_mu = Some(mu);
        }
        let (delta, stats) = local_train(&state.model, &clients[i], &train)?;
        deltas.push(delta);
        sample_counts.push(stats.n_samples);
    }
    if let Some(dp_cfg) = &cfg.baseline_dp {
        if !matches!(cfg.algorithm, Algorithm::EdgeDetect { .. }) {
            for (pos, delta) in deltas.iter_mut().enumerate() {
                let seed = derive_seed(
                    state.seed,
                    "dp",
                    ((r as u64) << 32) | participants[pos] as u64,
                );
                *delta = dp_sanitize(delta, dp_cfg, seed);
            }
        }
    }

    let mut mean_alignment = None;
    let mut wire_bytes: u64 = 0;
    let logical_bits_per_client = if cfg.algorithm.is_binarized() {
        d as f64
    } else {
        32.0 * d as f64
    };
    let uplink_logical_bytes = participants.len() as f64 * logical_bits_per_client / 8.0;

    // Phases 2-4 per algorithm
    let new_w = match &cfg.algorithm {
        Algorithm::FedAvg | Algorithm::FedProx { .. } => {
            let total: f64 = sample_counts.iter().map(|&n| n as f64).sum();
            let mut agg: Array1<f64> = Array1::zeros(d);
            for (delta, &n) in deltas.iter().zip(sample_counts.iter()) {
                agg = agg + delta * (n as f64 / total);
            }
            for (pos, &i) in participants.iter().enumerate() {
                wire_bytes += uplink_wire_bytes(
                    MsgType::UpdateFull,
                    r,
                    i as u32,
                    full_precision_payload(&deltas[pos]),
                );
            }
            &state.model.w + &agg
        }
        Algorithm::SignSgd => {
            let bins: Vec<BinDelta> = deltas
                .iter()
                .map(|delta| binarize(delta, BinarizeMode::Zero))
                .collect::<Result<_, _>>()?;
            let aligns: Vec<f64> = bins
                .iter()
                .zip(deltas.iter())
                .filter(|(_, delta)| delta.iter().any(|&v| v != 0.0))
                .map(|(bin, delta)| cosine_alignment(bin, delta))
                .collect::<Result<_, _>>()?;
            if !aligns.is_empty() {
                mean_alignment = Some(mean(&aligns));
            }
            for (pos, &i) in participants.iter().enumerate() {
                wire_bytes +=
                    uplink_wire_bytes(MsgType::UpdateBin, r, i as u32, bins[pos].to_wire());
            }
            let mut rng = rng_from_seed(derive_seed(state.seed, "agg", r as u64));
            let sums = aggregate_binarized(&bins, None, cfg.batching, &mut rng)?;
            let agg = Array1::from_iter(
                sums.into_iter()
                    .map(|s| s as f64 / participants.len() as f64),
            );
            // zero-threshold baseline updates without momentum
            global_update_momentum(&state.model.w, &agg, cfg.global_step, 0.0, &state.prev_model.w)
        }
        Algorithm::EdgeDetect { mode, encrypt, dp } => {
            let mut bins = Vec::with_capacity(deltas.len());
            let mut aligns = Vec::new();
            for (pos, delta) in deltas.iter().enumerate() {
                let sanitized = match dp {
                    Some(dp_cfg) => {
                        let seed = derive_seed(
                            state.seed,
                            "dp",
                            ((r as u64) << 32) | participants[pos] as u64,
                        );
                        dp_sanitize(delta, dp_cfg, seed)
                    }
                    None => delta.clone(),
                };
                let bin = binarize(&sanitized, *mode)?;
                // alignment is measured against the client's true update
                if delta.iter().any(|&v| v != 0.0) {
                    aligns.push(cosine_alignment(&bin, delta)?);
                }
                bins.push(bin);
            }
            if !aligns.is_empty() {
                mean_alignment = Some(mean(&aligns));
            }
            let mut rng = rng_from_seed(derive_seed(state.seed, "agg", r as u64));
            let sums = if *encrypt {
                let kp = state.keypair.as_ref().expect("keypair present when encrypting");
                // wire accounting uses the actual ciphertext frames
                let enc = if cfg.batching {
                    SignedEncoding::for_key(&kp.public, bins.len() as u64, 1)?
                } else {
                    SignedEncoding::new(bins.len() as u64, 1, 1)
                };
                for (pos, &i) in participants.iter().enumerate() {
                    let signs = bins[pos].signs_i64();
                    let plaintexts = if cfg.batching {
                        pack_batch(&signs, &enc)?
                    } else {
                        signs
                            .iter()
                            .map(|&v| encode_signed(v, &enc, &kp.public))
                            .collect::<Result<Vec<_>, _>>()?
                    };
                    let cts = plaintexts
                        .iter()
                        .map(|m| kp.public.encrypt(m, &mut rng))
                        .collect::<Result<Vec<_>, _>>()?;
                    wire_bytes +=
                        uplink_wire_bytes(MsgType::UpdateEnc, r, i as u32, encrypted_payload(&cts));
                }
                let mut agg_rng = rng_from_seed(derive_seed(state.seed, "agg-enc", r as u64));
                aggregate_binarized(&bins, Some(kp), cfg.batching, &mut agg_rng)?
            } else {
                for (pos, &i) in participants.iter().enumerate() {
                    wire_bytes +=
                        uplink_wire_bytes(MsgType::UpdateBin, r, i as u32, bins[pos].to_wire());
                }
                aggregate_binarized(&bins, None, cfg.batching, &mut rng)?
            };
            let agg = Array1::from_iter(
                sums.into_iter()
                    .map(|s| s as f64 / participants.len() as f64),
            );
            global_update_momentum(
                &state.model.w,
                &agg,
                cfg.global_step,
                cfg.momentum,
                &state.prev_model.w,
            )
        }
    };

    state.prev_model = state.model.clone();
    state.model = ModelParams {
        arch: state.model.arch,
        w: new_w,
    };
    state.round += 1;
    state.cumulative_logical_bytes += uplink_logical_bytes;
    state.cumulative_wire_bytes += wire_bytes;

    let metrics = evaluate(&state.model, test)?;
    Ok(RoundStats {
        round: r,
        participants,
        accuracy: metrics.accuracy,
        macro_f1: metrics.macro_f1,
        mean_alignment,
        uplink_logical_bytes,
        uplink_wire_bytes: wire_bytes,
        cumulative_logical_bytes: state.cumulative_logical_bytes,
        cumulative_wire_bytes: state.cumulative_wire_bytes,
        wall_time_s: started.map_or(0.0, |t| t.elapsed().as_secs_f64()),
    })
}

/// One seed's trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub centralized_accuracy: f64,
    pub target95: f64,
    pub target98: f64,
    pub rounds: Vec<RoundStats>,
    /// First round (1-based) reaching each target, when reached.
    pub r95: Option<u32>,
    pub r98: Option<u32>,
    pub final_accuracy: f64,
    pub final_macro_f1: f64,
    pub wire_bytes_to_target: Option<u64>,
}

/// Aggregate over seeds, shaped like one row of the convergence table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub algorithm: String,
    pub clients: usize,
    pub distribution: String,
    pub r95_median: Option<f64>,
    pub r98_median: Option<f64>,
    pub seeds_reaching_target: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub comm_per_round_mb: f64,
    pub total_gb_to_target: Option<f64>,
    pub mean_alignment: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: FedConfig,
    pub plan: PartitionPlan,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedRun>,
    pub summary: ExperimentSummary,
}

pub fn median_of(values: &[f64]) -> Option<f64> {
    crate::util::median(values)
}

/// Runs the federated experiment for each seed: a centralized reference
/// fixes the absolute accuracy targets, clients are re-partitioned per
/// seed, and rounds run until the 98% target or the round cap. Results
/// aggregate over seeds with mean and standard deviation.
pub fn run_experiment(
    arch: Architecture,
    train: &Dataset,
    test: &Dataset,
    plan: &PartitionPlan,
    cfg: &FedConfig,
    seeds: &[u64],
) -> Result<ExperimentReport, FedError> {
    cfg.validate()?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        // centralized reference: one client holding the pooled data,
        // trained with the identical configuration
        let mut central_cfg = cfg.train.clone();
        central_cfg.seed = derive_seed(seed, "central-train", 0);
        let central_init = init_model(arch, derive_seed(seed, "central-init", 0))?;
        let (delta, _) = local_train(&central_init, train, &central_cfg)?;
        let central = ModelParams {
            arch,
            w: &central_init.w + &delta,
        };
        let centralized_accuracy = evaluate(&central, test)?.accuracy;
        let target95 = cfg.targets.acc95 * centralized_accuracy;
        let target98 = cfg.targets.acc98 * centralized_accuracy;

        let seeded_plan = PartitionPlan {
            strategy: plan.strategy,
            clients: cfg.clients,
            seed: derive_seed(seed, "partition", plan.seed),
        };
        let clients = partition(train, &seeded_plan)?;
        let mut state = init_state(arch, cfg, seed)?;
        let mut rounds = Vec::new();
        let mut r95 = None;
        let mut r98 = None;
        let mut wire_bytes_to_target = None;
        for _ in 0..cfg.rounds_max {
            let stats = run_round(&mut state, cfg, &clients, test)?;
            if r95.is_none() && stats.accuracy >= target95 {
                r95 = Some(stats.round + 1);
            }
            if r98.is_none() && stats.accuracy >= target98 {
                r98 = Some(stats.round + 1);
                wire_bytes_to_target = Some(stats.cumulative_wire_bytes);
            }
            rounds.push(stats);
            if r98.is_some() {
                break;
            }
        }
        let (final_accuracy, final_macro_f1) = rounds
            .last()
            .map(|s| (s.accuracy, s.macro_f1))
            .unwrap_or((0.0, 0.0));
        per_seed.push(SeedRun {
            seed,
            centralized_accuracy,
            target95,
            target98,
            rounds,
            r95,
            r98,
            final_accuracy,
            final_macro_f1,
            wire_bytes_to_target,
        });
    }

    let r95s: Vec<f64> = per_seed.iter().filter_map(|s| s.r95.map(f64::from)).collect();
    let r98s: Vec<f64> = per_seed.iter().filter_map(|s| s.r98.map(f64::from)).collect();
    let accs: Vec<f64> = per_seed.iter().map(|s| s.final_accuracy).collect();
    let f1s: Vec<f64> = per_seed.iter().map(|s| s.final_macro_f1).collect();
    let per_client_round_bytes: Vec<f64> = per_seed
        .iter()
        .flat_map(|s| {
            s.rounds
                .iter()
                .map(|r| r.uplink_wire_bytes as f64 / r.participants.len() as f64)
        })
        .collect();
    let totals: Vec<f64> = per_seed
        .iter()
        .filter_map(|s| s.wire_bytes_to_target.map(|b| b as f64 / 1e9))
        .collect();
    let aligns: Vec<f64> = per_seed
        .iter()
        .flat_map(|s| s.rounds.iter().filter_map(|r| r.mean_alignment))
        .collect();

    let summary = ExperimentSummary {
        algorithm: cfg.algorithm.name().to_string(),
        clients: cfg.clients,
        distribution: plan.strategy.label(),
        r95_median: median_of(&r95s),
        r98_median: median_of(&r98s),
        seeds_reaching_target: per_seed.iter().filter(|s| s.r98.is_some()).count(),
        accuracy_mean: mean(&accs),
        accuracy_std: sample_std(&accs),
        macro_f1_mean: mean(&f1s),
        comm_per_round_mb: mean(&per_client_round_bytes) / 1e6,
        total_gb_to_target: if totals.is_empty() {
            None
        } else {
            Some(mean(&totals))
        },
        mean_alignment: if aligns.is_empty() {
            None
        } else {
            Some(mean(&aligns))
        },
    };

    Ok(ExperimentReport {
        config: cfg.clone(),
        plan: *plan,
        seeds: seeds.to_vec(),
        per_seed,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn balanced_dataset(rows: usize, seed: u64) -> Dataset {
        let spec = SyntheticSpec::ids_with_proportions(
            rows,
            [1.0 / 7.0; 7].iter().copied().collect(),
            seed,
        );
        generate_synthetic(&spec).unwrap()
    }

    #[test]
    fn iid_partition_preserves_proportions() {
        let ds = balanced_dataset(700, 1);
        let plan = PartitionPlan {
            strategy: PartitionStrategy::Iid,
            clients: 2,
            seed: 3,
        };
        let parts = partition(&ds, &plan).unwrap();
        assert_eq!(parts.len(), 2);
        let global: Vec<f64> = ds
            .class_counts()
            .iter()
            .map(|&c| c as f64 / ds.n_rows() as f64)
            .collect();
        for p in &parts {
            assert!(p.n_rows() >= 300);
            for (c, &count) in p.class_counts().iter().enumerate() {
                let frac = count as f64 / p.n_rows() as f64;
                assert!((frac - global[c]).abs() < 0.05, "class {c}: {frac}");
            }
        }
    }

    #[test]
    fn partition_conserves_rows() {
        let ds = balanced_dataset(300, 5);
        for strategy in [
            PartitionStrategy::Iid,
            PartitionStrategy::Dirichlet { alpha: 0.5 },
            PartitionStrategy::LabelSkew {
                dominant_classes: 3,
                dominance: 0.7,
            },
        ] {
            let plan = PartitionPlan {
                strategy,
                clients: 5,
                seed: 11,
            };
            let parts = partition(&ds, &plan).unwrap();
            let total: usize = parts.iter().map(|p| p.n_rows()).sum();
            assert_eq!(total, ds.n_rows(), "{strategy:?}");
            // exact multiset of rows recovered
            let sig = |d: &Dataset| {
                let mut rows: Vec<Vec<u64>> = (0..d.n_rows())
                    .map(|i| {
                        let mut r: Vec<u64> =
                            d.features.row(i).iter().map(|v| v.to_bits()).collect();
                        r.push(d.labels[i] as u64);
                        r
                    })
                    .collect();
                rows.sort();
                rows
            };
            let mut combined = Vec::new();
            for p in &parts {
                combined.extend(sig(p));
            }
            combined.sort();
            assert_eq!(combined, sig(&ds), "{strategy:?}");
        }
    }

    #[test]
    fn dirichlet_large_alpha_approaches_iid() {
        let ds = balanced_dataset(1400, 9);
        let plan = PartitionPlan {
            strategy: PartitionStrategy::Dirichlet { alpha: 1e6 },
            clients: 4,
            seed: 2,
        };
        let parts = partition(&ds, &plan).unwrap();
        let global: Vec<f64> = ds
            .class_counts()
            .iter()
            .map(|&c| c as f64 / ds.n_rows() as f64)
            .collect();
        for p in &parts {
            let tv: f64 = p
                .class_counts()
                .iter()
                .enumerate()
                .map(|(c, &count)| {
                    (count as f64 / p.n_rows() as f64 - global[c]).abs()
                })
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.05, "total variation {tv}");
        }
    }

    fn label_entropy(p: &Dataset) -> f64 {
        let n = p.n_rows() as f64;
        p.class_counts()
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let q = c as f64 / n;
                -q * q.log2()
            })
            .sum()
    }

    #[test]
    fn dirichlet_small_alpha_is_more_heterogeneous() {
        let ds = balanced_dataset(2000, 31);
        let mut low = Vec::new();
        let mut high = Vec::new();
        for seed in 0..5u64 {
            for (alpha, out) in [(0.1, &mut low), (10.0, &mut high)] {
                let plan = PartitionPlan {
                    strategy: PartitionStrategy::Dirichlet { alpha },
                    clients: 10,
                    seed: 100 + seed,
                };
                let parts = partition(&ds, &plan).unwrap();
                let mean_entropy =
                    parts.iter().map(label_entropy).sum::<f64>() / parts.len() as f64;
                out.push(mean_entropy);
            }
        }
        assert!(
            mean(&low) < mean(&high),
            "entropy low-alpha {} vs high-alpha {}",
            mean(&low),
            mean(&high)
        );
    }

    #[test]
    fn label_skew_dominance_holds() {
        let ds = generate_synthetic(&SyntheticSpec::ids_default(3000, 77)).unwrap();
        let plan = PartitionPlan {
            strategy: PartitionStrategy::LabelSkew {
                dominant_classes: 3,
                dominance: 0.7,
            },
            clients: 6,
            seed: 13,
        };
        let parts = partition(&ds, &plan).unwrap();
        for (k, p) in parts.iter().enumerate() {
            let mut counts = p.class_counts();
            counts.sort_unstable_by(|a, b| b.cmp(a));
            let dominant: usize = counts.iter().take(3).sum();
            let frac = dominant as f64 / p.n_rows() as f64;
            assert!(frac >= 0.7, "client {k} dominance {frac}");
        }
    }

    #[test]
    fn select_participants_contract() {
        let all = select_participants(10, 1.0, 0, 42);
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let half = select_participants(50, 0.5, 3, 42);
        assert_eq!(half.len(), 25);
        let mut dedup = half.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 25);
        assert_eq!(half, select_participants(50, 0.5, 3, 42));
        assert_ne!(half, select_participants(50, 0.5, 4, 42));
        assert_eq!(select_participants(7, 0.01, 0, 1).len(), 1);
    }

    #[test]
    fn momentum_update_hand_cases() {
        // mu = 0 reduces to the additive rule
        let w = array![1.0, 2.0];
        let delta = array![0.5, -0.5];
        let out = global_update_momentum(&w, &delta, 0.1, 0.0, &w);
        assert_eq!(out, array![1.05, 1.95]);
        // pure momentum
        let prev = array![0.5, 2.5];
        let out = global_update_momentum(&w, &Array1::zeros(2), 0.1, 0.9, &prev);
        assert_abs_diff_eq!(out[0], 1.0 + 0.9 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 2.0 + 0.9 * -0.5, epsilon = 1e-12);
        // scalar hand computation: 1 + 0.01*1 + 0.9*(1 - 0.5) = 1.46
        let out = global_update_momentum(&array![1.0], &array![1.0], 0.01, 0.9, &array![0.5]);
        assert_abs_diff_eq!(out[0], 1.46, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_binarized_hand_example() {
        // K=3, d=4: {[+,+,-,-], [+,-,-,-], [+,+,+,-]} -> sums [3,1,-1,-3]
        let bins = vec![
            BinDelta::from_signs(&[1, 1, -1, -1], 0.0, BinarizeMode::Zero),
            BinDelta::from_signs(&[1, -1, -1, -1], 0.0, BinarizeMode::Zero),
            BinDelta::from_signs(&[1, 1, 1, -1], 0.0, BinarizeMode::Zero),
        ];
        let mut rng = rng_from_seed(1);
        let plain = aggregate_binarized(&bins, None, true, &mut rng).unwrap();
        assert_eq!(plain, vec![3, 1, -1, -3]);
        // normalized aggregate [1, 1/3, -1/3, -1]
        let norm: Vec<f64> = plain.iter().map(|&s| s as f64 / 3.0).collect();
        assert_abs_diff_eq!(norm[1], 1.0 / 3.0, epsilon = 1e-15);

        // encrypted route, batched and unbatched, matches exactly
        let kp = keygen(64, &mut rng).unwrap();
        for batching in [true, false] {
            let enc_sums =
                aggregate_binarized(&bins, Some(&kp), batching, &mut rng).unwrap();
            assert_eq!(enc_sums, plain, "batching={batching}");
        }
    }

    fn quick_fed_config(algorithm: Algorithm) -> FedConfig {
        FedConfig {
            algorithm,
            clients: 3,
            participation: 1.0,
            rounds_max: 2,
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
        }
    }

    fn quick_setup(seed: u64) -> (Dataset, Dataset, Vec<Dataset>) {
        let ds = balanced_dataset(420, seed);
        let scaler = crate::features::fit_standardize(&ds);
        let ds = crate::features::apply_standardize(&ds, &scaler).unwrap();
        let (train, test) = ds.train_test_split(0.25, 5).unwrap();
        let plan = PartitionPlan {
            strategy: PartitionStrategy::Iid,
            clients: 3,
            seed: 7,
        };
        let clients = partition(&train, &plan).unwrap();
        (train, test, clients)
    }

    #[test]
    fn encrypt_toggle_leaves_model_bit_identical() {
        let (_, test, clients) = quick_setup(50);
        let arch = Architecture::Logistic {
            features: 16,
            classes: 7,
        };
        let mut states = Vec::new();
        for encrypt in [true, false] {
            let cfg = quick_fed_config(Algorithm::EdgeDetect {
                mode: BinarizeMode::SignedMedian,
                encrypt,
                dp: Some(DpConfig::default()),
            });
            let mut state = init_state(arch, &cfg, 99).unwrap();
            for _ in 0..2 {
                run_round(&mut state, &cfg, &clients, &test).unwrap();
            }
            states.push(state.model.w.clone());
        }
        assert_eq!(states[0], states[1]);
    }

    #[test]
    fn round_accounting_and_determinism() {
        let (_, test, clients) = quick_setup(51);
        let arch = Architecture::Logistic {
            features: 16,
            classes: 7,
        };
        let d = arch.param_count();
        let cfg = quick_fed_config(Algorithm::SignSgd);
        let mut a = init_state(arch, &cfg, 1).unwrap();
        let stats_a = run_round(&mut a, &cfg, &clients, &test).unwrap();
        let mut b = init_state(arch, &cfg, 1).unwrap();
        let stats_b = run_round(&mut b, &cfg, &clients, &test).unwrap();
        assert_eq!(a.model.w, b.model.w);
        assert_eq!(stats_a.accuracy, stats_b.accuracy);
        assert_eq!(stats_a.uplink_wire_bytes, stats_b.uplink_wire_bytes);

        // logical bits: d per client; wire: header + bin frame per client
        assert_abs_diff_eq!(
            stats_a.uplink_logical_bytes,
            3.0 * d as f64 / 8.0,
            epsilon = 1e-12
        );
        let per_client_wire = (14 + 4 + d.div_ceil(8) + 8) as u64;
        assert_eq!(stats_a.uplink_wire_bytes, 3 * per_client_wire);
        assert!(stats_a.uplink_logical_bytes <= stats_a.uplink_wire_bytes as f64);

        let full_cfg = quick_fed_config(Algorithm::FedAvg);
        let mut c = init_state(arch, &full_cfg, 1).unwrap();
        let stats_full = run_round(&mut c, &full_cfg, &clients, &test).unwrap();
        // logical ratio is exactly 32
        assert_abs_diff_eq!(
            stats_full.uplink_logical_bytes / stats_a.uplink_logical_bytes,
            32.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn fedprox_sets_anchor_and_runs() {
        let (_, test, clients) = quick_setup(52);
        let arch = Architecture::Logistic {
            features: 16,
            classes: 7,
        };
        let cfg = quick_fed_config(Algorithm::FedProx { mu: 0.01 });
        let mut state = init_state(arch, &cfg, 3).unwrap();
        let stats = run_round(&mut state, &cfg, &clients, &test).unwrap();
        assert!(stats.accuracy.is_finite());
        assert!(stats.mean_alignment.is_none());
    }

    #[test]
    fn zero_lr_degenerate_round() {
        // eta = 0 locally: deltas are zero vectors, signed-median ties map
        // every coordinate to +1 and the update stays bounded by the step
        let (_, test, clients) = quick_setup(53);
        let arch = Architecture::Logistic {
            features: 16,
            classes: 7,
        };
        let mut cfg = quick_fed_config(Algorithm::EdgeDetect {
            mode: BinarizeMode::SignedMedian,
            encrypt: false,
            dp: None,
        });
        cfg.train.learning_rate = 0.0;
        cfg.momentum = 0.0;
        let mut state = init_state(arch, &cfg, 4).unwrap();
        let before = state.model.w.clone();
        let stats = run_round(&mut state, &cfg, &clients, &test).unwrap();
        let diff = &state.model.w - &before;
        assert!(diff.iter().all(|&v| (v - cfg.global_step).abs() < 1e-15));
        assert!(stats.mean_alignment.is_none());
    }

    #[test]
    fn experiment_report_shape() {
        let ds = balanced_dataset(560, 60);
        let scaler = crate::features::fit_standardize(&ds);
        let ds = crate::features::apply_standardize(&ds, &scaler).unwrap();
        let (train, test) = ds.train_test_split(0.25, 5).unwrap();
        let plan = PartitionPlan {
            strategy: PartitionStrategy::Iid,
            clients: 3,
            seed: 1,
        };
        let arch = Architecture::Logistic {
            features: 16,
            classes: 7,
        };
        let mut cfg = quick_fed_config(Algorithm::FedAvg);
        cfg.rounds_max = 3;
        let report = run_experiment(arch, &train, &test, &plan, &cfg, &[1, 2]).unwrap();
        assert_eq!(report.per_seed.len(), 2);
        assert_eq!(report.summary.algorithm, "fedavg");
        for seed_run in &report.per_seed {
            assert!(!seed_run.rounds.is_empty());
            assert!(seed_run.centralized_accuracy > 0.0);
            // cumulative bytes monotone
            let mut prev = 0u64;
            for r in &seed_run.rounds {
                assert!(r.cumulative_wire_bytes >= prev);
                prev = r.cumulative_wire_bytes;
            }
            if let (Some(r95), Some(r98)) = (seed_run.r95, seed_run.r98) {
                assert!(r95 <= r98);
            }
        }
        // rounds_max = 0 yields an empty trajectory with no targets reached
        cfg.rounds_max = 0;
        let empty = run_experiment(arch, &train, &test, &plan, &cfg, &[1]).unwrap();
        assert!(empty.per_seed[0].rounds.is_empty());
        assert!(empty.per_seed[0].r98.is_none());
    }
}
