//! Gradient smartification: median-threshold binarization of model updates
//! into packed ±1 vectors, the zero-threshold sign baseline, alignment
//! diagnostics and payload accounting.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelDelta;
use crate::util::median;

#[derive(Debug, Error)]
pub enum SmartifyError {
    #[error("delta is empty")]
    EmptyDelta,
    #[error("delta contains non-finite values")]
    NonFinite,
    #[error("lengths differ: bin {bin} vs full {full}")]
    LengthMismatch { bin: usize, full: usize },
    #[error("full vector has zero norm")]
    ZeroNorm,
    #[error("wire frame malformed: {0}")]
    BadWire(String),
}

/// Threshold rule for binarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeMode {
    /// theta = median(delta). The default: shift- and scale-invariant, and
    /// balanced (half the coordinates map to +1 on tie-free even input).
    SignedMedian,
    /// theta = median(|delta|); kept behind a flag for ablations.
    AbsMedian,
    /// theta = 0, plain signSGD.
    Zero,
}

/// A packed ±1 update: bit 1 encodes +1, bit 0 encodes -1. Bits are packed
/// little-endian within each byte (coordinate j lives in byte j/8 at bit
/// position j%8).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinDelta {
    bits: Vec<u8>,
    d_params: usize,
    pub threshold_used: f64,
    pub mode: BinarizeMode,
}

impl BinDelta {
    pub fn len(&self) -> usize {
        self.d_params
    }

    pub fn is_empty(&self) -> bool {
        self.d_params == 0
    }

    /// Sign at coordinate j as +1 or -1.
    pub fn sign(&self, j: usize) -> i8 {
        assert!(j < self.d_params);
        if self.bits[j / 8] >> (j % 8) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Expands to a ±1.0 vector.
    pub fn unpack(&self) -> Array1<f64> {
        Array1::from_iter((0..self.d_params).map(|j| self.sign(j) as f64))
    }

    /// Signs as ±1 integers, handy for exact aggregation.
    pub fn signs_i64(&self) -> Vec<i64> {
        (0..self.d_params).map(|j| self.sign(j) as i64).collect()
    }

    /// Builds directly from a ±1 sign slice (used by tests and transport).
    pub fn from_signs(signs: &[i8], threshold: f64, mode: BinarizeMode) -> Self {
        let mut bits = vec![0u8; signs.len().div_ceil(8)];
        for (j, &s) in signs.iter().enumerate() {
            if s >= 0 {
                bits[j / 8] |= 1 << (j % 8);
            }
        }
        Self {
            bits,
            d_params: signs.len(),
            threshold_used: threshold,
            mode,
        }
    }

    /// Wire form: 4-byte little-endian length, ceil(d/8) packed payload
    /// bytes, then the 8-byte threshold (diagnostic only).
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.bits.len() + 8);
        out.extend_from_slice(&(self.d_params as u32).to_le_bytes());
        out.extend_from_slice(&self.bits);
        out.extend_from_slice(&self.threshold_used.to_le_bytes());
        out
    }

    pub fn from_wire(buf: &[u8]) -> Result<Self, SmartifyError> {
        if buf.len() < 4 {
            return Err(SmartifyError::BadWire("missing length prefix".into()));
        }
        let d = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        let payload = d.div_ceil(8);
        let expected = 4 + payload + 8;
        if buf.len() != expected {
            return Err(SmartifyError::BadWire(format!(
                "expected {expected} bytes for d={d}, got {}",
                buf.len()
            )));
        }
        let bits = buf[4..4 + payload].to_vec();
        let threshold = f64::from_le_bytes(buf[4 + payload..].try_into().unwrap());
        Ok(Self {
            bits,
            d_params: d,
            threshold_used: threshold,
            // mode is not carried on the wire; the receiver records the
            // configured mode. SignedMedian is the protocol default.
            mode: BinarizeMode::SignedMedian,
        })
    }

    pub fn wire_len(&self) -> usize {
        4 + self.bits.len() + 8
    }
}

/// Binarizes an update: coordinate j maps to +1 iff delta_j >= theta (ties
/// to +1), where theta depends on the mode.
pub fn binarize(delta: &ModelDelta, mode: BinarizeMode) -> Result<BinDelta, SmartifyError> {
    if delta.is_empty() {
        return Err(SmartifyError::EmptyDelta);
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(SmartifyError::NonFinite);
    }
    let values: Vec<f64> = delta.to_vec();
    let theta = match mode {
        BinarizeMode::SignedMedian => median(&values).expect("nonempty"),
        BinarizeMode::AbsMedian => {
            let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
            median(&abs).expect("nonempty")
        }
        BinarizeMode::Zero => 0.0,
    };
    let mut bits = vec![0u8; values.len().div_ceil(8)];
    for (j, &v) in values.iter().enumerate() {
        if v >= theta {
            bits[j / 8] |= 1 << (j % 8);
        }
    }
    Ok(BinDelta {
        bits,
        d_params: values.len(),
        threshold_used: theta,
        mode,
    })
}

/// Cosine between the unpacked ±1 vector and the full-precision update.
pub fn cosine_alignment(bin: &BinDelta, full: &ModelDelta) -> Result<f64, SmartifyError> {
    if bin.len() != full.len() {
        return Err(SmartifyError::LengthMismatch {
            bin: bin.len(),
            full: full.len(),
        });
    }
    let full_norm = full.iter().map(|v| v * v).sum::<f64>().sqrt();
    if full_norm == 0.0 {
        return Err(SmartifyError::ZeroNorm);
    }
    let mut dot = 0.0;
    for (j, &v) in full.iter().enumerate() {
        dot += bin.sign(j) as f64 * v;
    }
    let bin_norm = (bin.len() as f64).sqrt();
    Ok(dot / (bin_norm * full_norm))
}

/// Information payload of the update: one bit per coordinate.
pub fn payload_bits(bin: &BinDelta) -> usize {
    bin.len()
}

/// Fixed per-update wire header (length prefix plus threshold), reported
/// separately from the payload.
pub fn header_bits() -> usize {
    (4 + 8) * 8
}

/// Logical compression ratio against a full-precision update of
/// `precision_bits` per coordinate, header excluded. Definitionally equal
/// to `precision_bits`.
pub fn compression_ratio(bin: &BinDelta, precision_bits: u32) -> f64 {
    let full = bin.len() as f64 * precision_bits as f64;
    full / payload_bits(bin) as f64
}

/// Outcome of a one-step descent probe along the binarized direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescentReport {
    pub descended: bool,
    pub cosine: f64,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Evaluates the loss at `w` and at `w - eta * unpack(bin)` and reports
/// whether the step descended together with the measured cosine between the
/// binarized direction and the true gradient at `w`. A diagnostic used in
/// acceptance checks, not in training.
pub fn empirical_descent_check<F>(
    loss_and_grad: F,
    w: &Array1<f64>,
    bin: &BinDelta,
    eta: f64,
) -> Result<DescentReport, SmartifyError>
where
    F: Fn(&Array1<f64>) -> (f64, Array1<f64>),
{
    let (loss_before, grad) = loss_and_grad(w);
    let cosine = cosine_alignment(bin, &grad)?;
    let stepped = w - &(bin.unpack() * eta);
    let (loss_after, _) = loss_and_grad(&stepped);
    Ok(DescentReport {
        descended: loss_after < loss_before,
        cosine,
        loss_before,
        loss_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn signed_median_hand_case() {
        // median of {-2, 0.1, 0.5, 3} = 0.3
        let delta = array![0.5, -2.0, 3.0, 0.1];
        let bin = binarize(&delta, BinarizeMode::SignedMedian).unwrap();
        assert_abs_diff_eq!(bin.threshold_used, 0.3, epsilon = 1e-12);
        assert_eq!(bin.signs_i64(), vec![1, -1, 1, -1]);
    }

    #[test]
    fn all_equal_maps_to_plus_one() {
        let delta = array![2.5, 2.5, 2.5];
        let bin = binarize(&delta, BinarizeMode::SignedMedian).unwrap();
        assert_eq!(bin.signs_i64(), vec![1, 1, 1]);
    }

    #[test]
    fn zero_mode_is_signsgd() {
        let delta = array![1.0, -1.0];
        let bin = binarize(&delta, BinarizeMode::Zero).unwrap();
        assert_eq!(bin.signs_i64(), vec![1, -1]);
        assert_eq!(bin.threshold_used, 0.0);
    }

    #[test]
    fn abs_median_uses_magnitudes() {
        // |delta| = {1, 2, 3, 4}, median 2.5: only coordinates >= 2.5 go +1
        let delta = array![1.0, -2.0, 3.0, 4.0];
        let bin = binarize(&delta, BinarizeMode::AbsMedian).unwrap();
        assert_abs_diff_eq!(bin.threshold_used, 2.5, epsilon = 1e-12);
        assert_eq!(bin.signs_i64(), vec![-1, -1, 1, 1]);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(binarize(&Array1::zeros(0), BinarizeMode::Zero).is_err());
        assert!(binarize(&array![1.0, f64::NAN], BinarizeMode::Zero).is_err());
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let delta = array![0.3, -0.2, 0.9, -4.0, 0.0, 1.5, -0.7, 2.0, -0.1];
        let bin = binarize(&delta, BinarizeMode::SignedMedian).unwrap();
        let unpacked = bin.unpack();
        assert!(unpacked.iter().all(|&v| v == 1.0 || v == -1.0));
        let rebuilt = BinDelta::from_signs(
            &unpacked.iter().map(|&v| v as i8).collect::<Vec<_>>(),
            bin.threshold_used,
            bin.mode,
        );
        assert_eq!(rebuilt.signs_i64(), bin.signs_i64());
    }

    #[test]
    fn signed_median_affine_invariance() {
        let delta = array![0.4, -1.2, 2.2, 0.05, -0.6, 3.3];
        let base = binarize(&delta, BinarizeMode::SignedMedian).unwrap();
        for (c, b) in [(2.0, 0.0), (0.5, 10.0), (7.0, -3.0)] {
            let scaled = delta.mapv(|v| c * v + b);
            let other = binarize(&scaled, BinarizeMode::SignedMedian).unwrap();
            assert_eq!(other.signs_i64(), base.signs_i64(), "c={c} b={b}");
        }
    }

    #[test]
    fn signed_median_balance_even_length() {
        let delta = array![0.9, -0.3, 1.7, 0.2, -2.0, 0.6];
        let bin = binarize(&delta, BinarizeMode::SignedMedian).unwrap();
        let plus = bin.signs_i64().iter().filter(|&&s| s == 1).count();
        assert_eq!(plus, 3);
    }

    #[test]
    fn zero_equals_signed_median_when_median_is_zero() {
        let delta = array![1.0, -1.0, 2.0, -2.0, 0.0];
        let a = binarize(&delta, BinarizeMode::SignedMedian).unwrap();
        let b = binarize(&delta, BinarizeMode::Zero).unwrap();
        assert_eq!(a.signs_i64(), b.signs_i64());
    }

    #[test]
    fn alignment_exact_cases() {
        let full = array![1.0, -1.0, 1.0];
        let bin = binarize(&full, BinarizeMode::Zero).unwrap();
        assert_abs_diff_eq!(cosine_alignment(&bin, &full).unwrap(), 1.0, epsilon = 1e-12);

        let orth = array![1.0, 1.0];
        let bin2 = binarize(&array![1.0, -1.0], BinarizeMode::Zero).unwrap();
        assert_abs_diff_eq!(cosine_alignment(&bin2, &orth).unwrap(), 0.0, epsilon = 1e-12);

        assert!(cosine_alignment(&bin2, &array![0.0, 0.0]).is_err());
        assert!(cosine_alignment(&bin2, &array![1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn payload_and_ratio_are_definitional() {
        let bin = binarize(&Array1::ones(35), BinarizeMode::Zero).unwrap();
        assert_eq!(payload_bits(&bin), 35);
        assert_eq!(compression_ratio(&bin, 32), 32.0);
        assert_eq!(compression_ratio(&bin, 64), 64.0);
        let one = binarize(&Array1::ones(1), BinarizeMode::Zero).unwrap();
        assert_eq!(compression_ratio(&one, 32), 32.0);
    }

    #[test]
    fn wire_roundtrip_and_length() {
        let delta = Array1::from_shape_fn(1000, |i| (i as f64).sin());
        let bin = binarize(&delta, BinarizeMode::SignedMedian).unwrap();
        let wire = bin.to_wire();
        assert_eq!(wire.len(), 4 + 125 + 8);
        assert_eq!(bin.wire_len(), wire.len());
        let back = BinDelta::from_wire(&wire).unwrap();
        assert_eq!(back.signs_i64(), bin.signs_i64());
        assert_eq!(back.threshold_used, bin.threshold_used);
        assert!(BinDelta::from_wire(&wire[..wire.len() - 1]).is_err());
    }

    #[test]
    fn descent_check_follows_gradient() {
        // quadratic bowl: L(w) = 0.5 ||w||^2, grad = w
        let loss = |w: &Array1<f64>| (0.5 * w.mapv(|v| v * v).sum(), w.clone());
        let w = array![1.0, -2.0, 3.0, -4.0];
        let aligned = binarize(&w.clone(), BinarizeMode::Zero).unwrap();
        let report = empirical_descent_check(loss, &w, &aligned, 1e-3).unwrap();
        assert!(report.descended);
        assert!(report.cosine > 0.0);

        // negated signs ascend
        let neg_signs: Vec<i8> = w.iter().map(|&v| if v >= 0.0 { -1 } else { 1 }).collect();
        let opposed = BinDelta::from_signs(&neg_signs, 0.0, BinarizeMode::Zero);
        let report = empirical_descent_check(loss, &w, &opposed, 1e-3).unwrap();
        assert!(!report.descended);
        assert!(report.cosine < 0.0);
    }
}
