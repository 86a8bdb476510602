//! Reconstruction-error contracts of the PCA transform: the mean squared
//! error on the fitting data matches the trailing eigenvalue mass, never
//! grows with k, and the retained-variance curve is nondecreasing.

use edgefed::dataio::{generate_synthetic, SyntheticSpec};
use edgefed::features::{
    apply_standardize, fit_incremental_pca, fit_standardize, transform_pca, PcaTarget,
};
use ndarray::Axis;

#[test]
fn reconstruction_error_matches_trailing_eigenvalues() {
    let ds = generate_synthetic(&SyntheticSpec::ids_default(400, 8)).unwrap();
    let z = apply_standardize(&ds, &fit_standardize(&ds)).unwrap();
    let d = z.n_features();
    let mut previous_error = f64::INFINITY;
    let mut previous_retained = 0.0;
    for k in [2, 4, 8, 12, d] {
        let model = fit_incremental_pca(&z, 64, PcaTarget::Components(k)).unwrap();
        assert!(
            model.variance_retained >= previous_retained - 1e-12,
            "variance retained dropped at k={k}"
        );
        previous_retained = model.variance_retained;

        let projected = transform_pca(&z, &model).unwrap();
        let reconstructed = model.inverse_transform(&projected.features);
        let n = z.n_rows() as f64;
        let total_sq: f64 = (&z.features - &reconstructed).mapv(|v| v * v).sum();
        let mean_sq = total_sq / n;
        let tail: f64 = model.eigenvalues[k..].iter().sum();
        if tail > 1e-9 {
            assert!(
                (mean_sq - tail).abs() <= 0.05 * tail,
                "k={k}: mean residual {mean_sq} vs trailing mass {tail}"
            );
        } else {
            assert!(mean_sq < 1e-6, "k={k}: full rank should reconstruct");
        }
        assert!(
            mean_sq <= previous_error + 1e-9,
            "reconstruction error grew from {previous_error} at k={k}"
        );
        previous_error = mean_sq;
    }
    let mean_check = z.features.mean_axis(Axis(0)).unwrap();
    assert!(mean_check.iter().all(|v| v.abs() < 1e-9));
}
