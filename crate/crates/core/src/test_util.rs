//! Shared helpers for unit and integration tests.

use crate::tensor::DenseTensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tensor with entries uniform in `(0.1, 1.1)`: strictly positive,
/// well away from zero so marginal inverses stay tame.
pub fn uniform_tensor(rng: &mut impl Rng, dims: &[usize]) -> DenseTensor {
    let len: usize = dims.iter().product();
    let values: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..1.1)).collect();
    DenseTensor::new(dims.to_vec(), values).expect("uniform tensor")
}

/// Random strictly positive probability vector of length `n`.
pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

#[track_caller]
pub fn assert_close(got: f64, want: f64, tol: f64) {
    let scale = 1.0f64.max(want.abs());
    assert!(
        (got - want).abs() <= tol * scale,
        "got {got}, want {want} (tol {tol})"
    );
}

#[track_caller]
pub fn assert_vec_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len(), "length mismatch");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        let scale = 1.0f64.max(w.abs());
        assert!(
            (g - w).abs() <= tol * scale,
            "entry {i}: got {g}, want {w} (tol {tol})"
        );
    }
}
