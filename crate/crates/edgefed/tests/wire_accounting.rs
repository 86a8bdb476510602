//! Differential check that the orchestration's wire-byte accounting equals
//! the bytes a real transport moves for the same round's messages.

use edgefed::dataio::{generate_synthetic, SyntheticSpec};
use edgefed::features::{apply_standardize, fit_standardize};
use edgefed::fed::{init_state, partition, run_round, Algorithm, FedConfig, PartitionPlan, PartitionStrategy};
use edgefed::model::{Architecture, TrainConfig};
use edgefed::smartify::{BinDelta, BinarizeMode};
use edgefed::transport::{connect, serve, Message, MsgType};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};

fn one_round_stats(algorithm: Algorithm) -> (edgefed::fed::RoundStats, usize, usize) {
    let spec = SyntheticSpec::ids_with_proportions(420, vec![1.0 / 7.0; 7], 5);
    let ds = generate_synthetic(&spec).unwrap();
    let ds = apply_standardize(&ds, &fit_standardize(&ds)).unwrap();
    let (train, test) = ds.train_test_split(0.25, 9).unwrap();
    let plan = PartitionPlan {
        strategy: PartitionStrategy::Iid,
        clients: 3,
        seed: 2,
    };
    let clients = partition(&train, &plan).unwrap();
    let arch = Architecture::Logistic {
        features: train.n_features(),
        classes: 7,
    };
    let cfg = FedConfig {
        algorithm,
        clients: 3,
        rounds_max: 1,
        paillier_bits: 64,
        train: TrainConfig {
            epochs: 1,
            early_stop_patience: None,
            ..TrainConfig::default()
        },
        ..FedConfig::default()
    };
    let mut state = init_state(arch, &cfg, 1).unwrap();
    let stats = run_round(&mut state, &cfg, &clients, &test).unwrap();
    (stats, arch.param_count(), 3)
}

/// Sends each participant's uplink message through a real TCP session and
/// counts the bytes the server observes.
fn measured_wire_bytes(messages: Vec<Message>) -> u64 {
    let received = Arc::new(AtomicU64::new(0));
    let (done_tx, done_rx) = mpsc::channel::<()>();
    let recv_total = received.clone();
    let server = serve("127.0.0.1:0", move |mut session| {
        while let Ok(msg) = session.recv() {
            let last = msg.msg_type == MsgType::RoundAck;
            if !last {
                recv_total.fetch_add(msg.encoded_len() as u64, Ordering::SeqCst);
            }
            if last {
                break;
            }
        }
        let _ = done_tx.send(());
    })
    .unwrap();
    let addr = server.local_addr().unwrap().to_string();
    let mut session = connect(&addr).unwrap();
    let n = messages.len() as u64;
    for msg in messages {
        session.send(&msg).unwrap();
    }
    session
        .send(&Message::new(MsgType::RoundAck, 0, 0, Vec::new()))
        .unwrap();
    done_rx.recv().unwrap();
    // client-side counter ignores the terminating ack
    assert_eq!(
        session.bytes_sent(),
        received.load(Ordering::SeqCst) + Message::new(MsgType::RoundAck, 0, 0, Vec::new()).encoded_len() as u64
    );
    let _ = n;
    received.load(Ordering::SeqCst)
}

#[test]
fn binarized_round_accounting_matches_socket_bytes() {
    let (stats, d, k) = one_round_stats(Algorithm::SignSgd);
    // reconstruct the same-shaped uplink frames: one packed sign vector per
    // participant
    let signs = vec![1i8; d];
    let messages: Vec<Message> = (0..k)
        .map(|i| {
            let bin = BinDelta::from_signs(&signs, 0.0, BinarizeMode::Zero);
            Message::new(MsgType::UpdateBin, 0, i as u32, bin.to_wire())
        })
        .collect();
    let measured = measured_wire_bytes(messages);
    assert_eq!(stats.uplink_wire_bytes, measured);
}

#[test]
fn full_precision_round_accounting_matches_socket_bytes() {
    let (stats, d, k) = one_round_stats(Algorithm::FedAvg);
    let messages: Vec<Message> = (0..k)
        .map(|i| {
            let mut payload = Vec::with_capacity(4 + 8 * d);
            payload.extend_from_slice(&(d as u32).to_le_bytes());
            payload.extend(std::iter::repeat_n(0u8, 8 * d));
            Message::new(MsgType::UpdateFull, 0, i as u32, payload)
        })
        .collect();
    let measured = measured_wire_bytes(messages);
    assert_eq!(stats.uplink_wire_bytes, measured);
}

#[test]
fn logical_bytes_never_exceed_wire_bytes() {
    for algorithm in [
        Algorithm::SignSgd,
        Algorithm::FedAvg,
        Algorithm::EdgeDetect {
            mode: BinarizeMode::SignedMedian,
            encrypt: true,
            dp: None,
        },
    ] {
        let (stats, _, _) = one_round_stats(algorithm);
        assert!(
            stats.uplink_logical_bytes <= stats.uplink_wire_bytes as f64,
            "logical {} > wire {}",
            stats.uplink_logical_bytes,
            stats.uplink_wire_bytes
        );
    }
}
