//! Monte-Carlo check of the descent property: a small step along the
//! negated median-binarized gradient decreases a convex logistic loss
//! whenever the measured direction cosine is high.

use edgefed::dataio::Dataset;
use edgefed::model::{loss_and_gradient, Architecture, ModelParams, TrainConfig};
use edgefed::smartify::{binarize, empirical_descent_check, BinarizeMode};
use edgefed::util::rng_from_seed;
use ndarray::{Array1, Array2};
use rand::Rng;

#[test]
fn median_binarized_steps_descend_when_aligned() {
    let (n, d) = (100, 20);
    let mut rng = rng_from_seed(40);
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        for j in 0..d {
            features[[i, j]] =
                rng.random::<f64>() * 2.0 - 1.0 + if class == 1 { 0.4 } else { -0.4 };
        }
        labels.push(class);
    }
    let ds = Dataset::new(
        features,
        labels,
        vec!["a".into(), "b".into()],
        (0..d).map(|j| format!("f{j}")).collect(),
    )
    .unwrap();

    let arch = Architecture::Logistic {
        features: d,
        classes: 2,
    };
    let cfg = TrainConfig::default();
    let loss_and_grad = |w: &Array1<f64>| {
        let m = ModelParams {
            arch,
            w: w.clone(),
        };
        loss_and_gradient(&m, ds.features.view(), &ds.labels, &cfg, None).expect("convex loss")
    };

    let mut qualifying = 0usize;
    let mut descended = 0usize;
    for start in 0..100u64 {
        let mut srng = rng_from_seed(1000 + start);
        let w = Array1::from_iter(
            (0..arch.param_count()).map(|_| srng.random::<f64>() - 0.5),
        );
        let (_, grad) = loss_and_grad(&w);
        let bin = binarize(&grad, BinarizeMode::SignedMedian).unwrap();
        let report = empirical_descent_check(loss_and_grad, &w, &bin, 1e-3).unwrap();
        if report.cosine >= 0.8 {
            qualifying += 1;
            descended += usize::from(report.descended);
        }
    }
    assert!(
        qualifying >= 10,
        "only {qualifying} of 100 starts reached cosine 0.8; instance too adversarial"
    );
    let rate = descended as f64 / qualifying as f64;
    assert!(
        rate >= 0.95,
        "descent held in {descended}/{qualifying} aligned cases"
    );
}

#[test]
fn descent_check_detects_opposed_directions() {
    // sanity: the probe is not vacuously true
    let loss = |w: &Array1<f64>| (0.5 * w.mapv(|v| v * v).sum(), w.clone());
    let w = Array1::from_vec(vec![2.0, -1.5, 0.7, -0.3]);
    let toward = binarize(&w.clone(), BinarizeMode::Zero).unwrap();
    assert!(empirical_descent_check(loss, &w, &toward, 1e-3)
        .unwrap()
        .descended);
    let away: Vec<i8> = w.iter().map(|&v| if v >= 0.0 { -1 } else { 1 }).collect();
    let away = edgefed::smartify::BinDelta::from_signs(&away, 0.0, BinarizeMode::Zero);
    assert!(!empirical_descent_check(loss, &w, &away, 1e-3)
        .unwrap()
        .descended);
}
