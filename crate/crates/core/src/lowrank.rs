//! Low-rank compression of kernel factors and of whole kernels.
//!
//! Matrix factors are compressed by truncated or randomized SVD; whole
//! (materialized, desk-scale) kernels by a sequential TT-SVD. The
//! `log_error` estimators measure `||log K - log K~||_inf`, the quantity the
//! error certificates consume.

use crate::error::{Error, Result};
use crate::model::{IndexTuple, KernelFactor, KernelModel, MATERIALIZATION_BUDGET};
use crate::tensor::{DenseTensor, Mat};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Thin SVD `M ~ U diag(s) V^T` with orthonormal columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Mat,
    pub singular_values: Vec<f64>,
    pub v: Mat,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Keep the `r` leading singular triplets.
    pub fn truncate(&self, r: usize) -> Result<SvdResult> {
        if r == 0 || r > self.rank() {
            return Err(Error::InvalidArgument(format!(
                "truncation rank {} out of range 1..={}",
                r,
                self.rank()
            )));
        }
        let take_cols = |m: &Mat| Mat::from_fn(m.nrows(), r, |i, j| m.get(i, j));
        Ok(SvdResult {
            u: take_cols(&self.u),
            singular_values: self.singular_values[..r].to_vec(),
            v: take_cols(&self.v),
        })
    }

    /// `U diag(s) V^T`.
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for i in 0..us.nrows() {
            for (j, &s) in self.singular_values.iter().enumerate() {
                let v = us.get(i, j) * s;
                us.set(i, j, v);
            }
        }
        us.matmul_t(&self.v).expect("svd reconstruct")
    }
}

fn to_dmatrix(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m.get(i, j))
}

/// Full SVD with singular values sorted non-increasing.
pub fn full_svd(m: &Mat) -> Result<SvdResult> {
    let svd = to_dmatrix(m).svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::InvalidArgument("svd did not produce U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvalidArgument("svd did not produce V^T".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
    });
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = Mat::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let v = Mat::from_fn(v_t.ncols(), order.len(), |i, j| v_t[(order[j], i)]);
    Ok(SvdResult {
        u,
        singular_values,
        v,
    })
}

/// Best rank-`r` approximation via full SVD plus truncation.
pub fn truncated_svd(m: &Mat, r: usize) -> Result<SvdResult> {
    let min_dim = m.nrows().min(m.ncols());
    if r == 0 || r > min_dim {
        return Err(Error::InvalidArgument(format!(
            "rank {} out of range 1..={}",
            r, min_dim
        )));
    }
    full_svd(m)?.truncate(r)
}

/// Spectral-norm error of the rank-`r` truncation: `sigma_{r+1}` (0 at full rank).
pub fn truncation_error(svd: &SvdResult, r: usize) -> f64 {
    svd.singular_values.get(r).copied().unwrap_or(0.0)
}

fn qr_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    let ncols = m.ncols();
    let qr = m.clone().qr();
    let q = qr.q();
    q.columns(0, ncols.min(q.ncols())).into_owned()
}

/// Halko-style randomized SVD: Gaussian sketch, optional power iterations
/// with QR re-orthonormalization, small exact SVD on the projected matrix.
///
/// Deterministic for a fixed `seed`.
pub fn randomized_svd(
    m: &Mat,
    r: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SvdResult> {
    let min_dim = m.nrows().min(m.ncols());
    let s = r + oversample;
    if r == 0 || s > min_dim {
        return Err(Error::InvalidArgument(format!(
            "rank {} + oversample {} out of range 1..={}",
            r, oversample, min_dim
        )));
    }
    let a = to_dmatrix(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(a.ncols(), s, |_, _| rng.sample::<f64, _>(StandardNormal));

    let mut q = qr_q(&(&a * g));
    for _ in 0..power_iters {
        let z = qr_q(&(a.transpose() * &q));
        q = qr_q(&(&a * z));
    }
    let b = q.transpose() * &a;
    let svd = b.svd(true, true);
    let ub = svd.u.expect("svd of projected matrix");
    let v_t = svd.v_t.expect("svd of projected matrix");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
    });
    order.truncate(r);

    let u_full = &q * ub;
    let u = Mat::from_fn(u_full.nrows(), r, |i, j| u_full[(i, order[j])]);
    let v = Mat::from_fn(v_t.ncols(), r, |i, j| v_t[(order[j], i)]);
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    Ok(SvdResult {
        u,
        singular_values,
        v,
    })
}

/// Defaults for [`randomized_svd`]: oversampling 10, two power iterations.
pub const RSVD_OVERSAMPLE: usize = 10;
pub const RSVD_POWER_ITERS: usize = 2;

/// Factorization method for [`lowrank_kernel_factor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdMethod {
    Exact,
    Randomized { seed: u64 },
}

/// `(U diag(s), V)` from a (possibly truncated) SVD: the two halves of the
/// low-rank kernel factor `U' V'^T`.
pub fn scaled_halves(svd: &SvdResult) -> (Mat, Mat) {
    let mut u_scaled = svd.u.clone();
    for i in 0..u_scaled.nrows() {
        for (j, &s) in svd.singular_values.iter().enumerate() {
            let v = u_scaled.get(i, j) * s;
            u_scaled.set(i, j, v);
        }
    }
    (u_scaled, svd.v.clone())
}

/// Low-rank kernel factor from an already-computed SVD truncation, with the
/// same positivity validation as [`lowrank_kernel_factor`]. Lets callers
/// decompose once and sweep ranks.
pub fn lowrank_factor_from_svd(
    alpha: IndexTuple,
    svd: &SvdResult,
    r: usize,
) -> Result<KernelFactor> {
    let truncated = svd.truncate(r)?;
    let (u, v) = scaled_halves(&truncated);
    check_reconstruction_positive(&u, &v, r)?;
    KernelFactor::low_rank(alpha, u, v)
}

/// Compress a strictly positive dense matrix factor to `LowRank(U', V')`
/// with `U' = U diag(s)`, `V' = V`, rejecting ranks whose reconstruction is
/// not strictly positive.
///
/// Positivity is checked exactly below the materialization budget and on
/// 10^4 sampled entries above it; a failing factor is rejected, not clamped.
pub fn lowrank_kernel_factor(
    alpha: IndexTuple,
    k_alpha: &Mat,
    r: usize,
    method: SvdMethod,
) -> Result<KernelFactor> {
    if k_alpha.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Positivity(
            "kernel factor must be strictly positive before compression".into(),
        ));
    }
    let svd = match method {
        SvdMethod::Exact => truncated_svd(k_alpha, r)?,
        SvdMethod::Randomized { seed } => {
            let oversample = RSVD_OVERSAMPLE.min(k_alpha.nrows().min(k_alpha.ncols()) - r);
            randomized_svd(k_alpha, r, oversample, RSVD_POWER_ITERS, seed)?
        }
    };
    let (u, v) = scaled_halves(&svd);
    check_reconstruction_positive(&u, &v, r)?;
    KernelFactor::low_rank(alpha, u, v)
}

fn check_reconstruction_positive(u: &Mat, v: &Mat, r: usize) -> Result<()> {
    let entries = u.nrows() * v.nrows();
    let entry = |i: usize, j: usize| -> f64 {
        let mut acc = 0.0;
        for c in 0..u.ncols() {
            acc += u.get(i, c) * v.get(j, c);
        }
        acc
    };
    if entries <= MATERIALIZATION_BUDGET {
        for i in 0..u.nrows() {
            for j in 0..v.nrows() {
                if !(entry(i, j) > 0.0) {
                    return Err(Error::RankTooSmall(format!(
                        "rank {} reconstruction is non-positive at ({}, {})",
                        r, i, j
                    )));
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x706f73);
        for _ in 0..10_000 {
            let i = rng.gen_range(0..u.nrows());
            let j = rng.gen_range(0..v.nrows());
            if !(entry(i, j) > 0.0) {
                return Err(Error::RankTooSmall(format!(
                    "rank {} reconstruction is non-positive at sampled ({}, {})",
                    r, i, j
                )));
            }
        }
    }
    Ok(())
}

/// Evaluation mode for [`log_error`].
#[derive(Debug, Clone, Copy)]
pub enum LogErrorMode {
    /// Max over every multi-index (budget-capped).
    Exact,
    /// Max over `count` uniformly sampled multi-indices: a lower bound.
    Sampled { count: usize, seed: u64 },
}

/// `||log K - log K~||_inf` over the full index set or a sample of it.
///
/// Both models must agree on mode sizes. Entries are evaluated through the
/// factor structure (sums of factor logs), so nothing is materialized.
pub fn log_error(k: &KernelModel, kt: &KernelModel, mode: LogErrorMode) -> Result<f64> {
    if k.mode_sizes() != kt.mode_sizes() {
        return Err(Error::DimensionMismatch(
            "kernel models have different mode sizes".into(),
        ));
    }
    let sizes = k.mode_sizes().to_vec();
    let log_entry = |model: &KernelModel, idx: &[usize]| -> Result<f64> {
        let mut acc = 0.0;
        let mut local = Vec::new();
        for f in model.factors() {
            local.clear();
            local.extend(f.alpha.modes().iter().map(|&m| idx[m]));
            let e = f.entry(&local);
            if !(e > 0.0) {
                return Err(Error::Positivity(format!(
                    "kernel entry at {:?} is non-positive in factor {:?}",
                    idx,
                    f.alpha.modes()
                )));
            }
            acc += e.ln();
        }
        Ok(acc)
    };
    match mode {
        LogErrorMode::Exact => {
            let entries: usize = sizes.iter().product();
            if entries > MATERIALIZATION_BUDGET {
                return Err(Error::BudgetExceeded {
                    entries,
                    budget: MATERIALIZATION_BUDGET,
                });
            }
            let mut idx = vec![0usize; sizes.len()];
            let mut worst = 0.0f64;
            for _ in 0..entries {
                let d = (log_entry(k, &idx)? - log_entry(kt, &idx)?).abs();
                worst = worst.max(d);
                for ax in (0..sizes.len()).rev() {
                    idx[ax] += 1;
                    if idx[ax] < sizes[ax] {
                        break;
                    }
                    idx[ax] = 0;
                }
            }
            Ok(worst)
        }
        LogErrorMode::Sampled { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            let mut idx = vec![0usize; sizes.len()];
            for _ in 0..count {
                for (ax, &n) in sizes.iter().enumerate() {
                    idx[ax] = rng.gen_range(0..n);
                }
                let d = (log_entry(k, &idx)? - log_entry(kt, &idx)?).abs();
                worst = worst.max(d);
            }
            Ok(worst)
        }
    }
}

/// `||log K^a - log K~^a||_inf` for a pair of factors on the same tuple.
pub fn factor_log_error(a: &KernelFactor, b: &KernelFactor) -> Result<f64> {
    if a.alpha != b.alpha || a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(
            "factors disagree on index tuple or shape".into(),
        ));
    }
    let dims = a.dims();
    let entries: usize = dims.iter().product();
    let mut idx = vec![0usize; dims.len()];
    let mut worst = 0.0f64;
    for _ in 0..entries {
        let (x, y) = (a.entry(&idx), b.entry(&idx));
        if !(x > 0.0) || !(y > 0.0) {
            return Err(Error::Positivity(format!(
                "non-positive factor entry at {:?}",
                idx
            )));
        }
        worst = worst.max((x.ln() - y.ln()).abs());
        for ax in (0..dims.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(worst)
}

/// Tensor-train cores: first `n_1 x r_1`, middle `r_{k-1} x n_k x r_k`,
/// last `r_{m-1} x n_m`.
#[derive(Debug, Clone)]
pub struct TTCores {
    cores: Vec<DenseTensor>,
}

impl TTCores {
    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn num_modes(&self) -> usize {
        self.cores.len()
    }

    /// Bond ranks `r_1..r_{m-1}`.
    pub fn ranks(&self) -> Vec<usize> {
        let m = self.cores.len();
        (0..m - 1)
            .map(|k| {
                if k == 0 {
                    self.cores[0].dims()[1]
                } else {
                    self.cores[k].dims()[2]
                }
            })
            .collect()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        let m = self.cores.len();
        (0..m)
            .map(|k| {
                // first core is n x r; the mode index sits second elsewhere
                let pos = if k == 0 { 0 } else { 1 };
                self.cores[k].dims()[pos]
            })
            .collect()
    }

    /// Single entry via a left-to-right core sweep, `O(m r^2)`.
    pub fn entry(&self, idx: &[usize]) -> f64 {
        let m = self.cores.len();
        debug_assert_eq!(idx.len(), m);
        let first = &self.cores[0];
        let r1 = first.dims()[1];
        let mut carry: Vec<f64> = (0..r1).map(|c| first.get(&[idx[0], c])).collect();
        for k in 1..m {
            let core = &self.cores[k];
            if k == m - 1 {
                let mut acc = 0.0;
                for (p, &cp) in carry.iter().enumerate() {
                    acc += cp * core.get(&[p, idx[k]]);
                }
                return acc;
            }
            let r_next = core.dims()[2];
            let mut next = vec![0.0; r_next];
            for (p, &cp) in carry.iter().enumerate() {
                if cp == 0.0 {
                    continue;
                }
                for (c, slot) in next.iter_mut().enumerate() {
                    *slot += cp * core.get(&[p, idx[k], c]);
                }
            }
            carry = next;
        }
        unreachable!("loop returns at the last core")
    }

    /// Contract all cores back into a dense tensor (desk scale only).
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let sizes = self.mode_sizes();
        let entries: usize = sizes.iter().product();
        if entries > MATERIALIZATION_BUDGET {
            return Err(Error::BudgetExceeded {
                entries,
                budget: MATERIALIZATION_BUDGET,
            });
        }
        let m = self.cores.len();
        // carry: (prod of emitted modes) x r_k, built left to right
        let first = &self.cores[0];
        let mut carry = Mat::new(first.dims()[0], first.dims()[1], first.values().to_vec())?;
        for k in 1..m {
            let core = &self.cores[k];
            let (r_prev, n_k, r_next) = if k == m - 1 {
                (core.dims()[0], core.dims()[1], 1)
            } else {
                (core.dims()[0], core.dims()[1], core.dims()[2])
            };
            let rows = carry.nrows();
            let mut next = Mat::zeros(rows * n_k, r_next);
            for row in 0..rows {
                for i in 0..n_k {
                    for c in 0..r_next {
                        let mut acc = 0.0;
                        for p in 0..r_prev {
                            let core_val = if k == m - 1 {
                                core.get(&[p, i])
                            } else {
                                core.get(&[p, i, c])
                            };
                            acc += carry.get(row, p) * core_val;
                        }
                        next.set(row * n_k + i, c, acc);
                    }
                }
            }
            carry = next;
        }
        DenseTensor::new(sizes, carry.data().to_vec())
    }
}

/// Sequential TT-SVD of a materialized tensor with requested bond ranks
/// (`m - 1` of them). Requested ranks are capped at the feasible unfolding
/// ranks; a zero or miscounted rank is rejected.
pub fn tt_svd(t: &DenseTensor, ranks: &[usize]) -> Result<TTCores> {
    let m = t.order();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "tensor train needs order >= 2".into(),
        ));
    }
    if ranks.len() != m - 1 {
        return Err(Error::InvalidArgument(format!(
            "expected {} bond ranks, got {}",
            m - 1,
            ranks.len()
        )));
    }
    if ranks.contains(&0) {
        return Err(Error::InvalidArgument("bond ranks must be >= 1".into()));
    }
    let sizes = t.dims().to_vec();
    let mut cores = Vec::with_capacity(m);
    let mut carry_rows = 1usize; // r_{k-1}
    let mut rest: usize = sizes.iter().product();
    let mut carry = Mat::new(1, rest, t.values().to_vec())?;

    for k in 0..m - 1 {
        let n_k = sizes[k];
        rest /= n_k;
        // unfold: (r_{k-1} * n_k) x rest
        let unfolded = Mat::new(carry_rows * n_k, rest, carry.data().to_vec())?;
        let r_k = ranks[k].min(unfolded.nrows()).min(unfolded.ncols());
        let svd = truncated_svd(&unfolded, r_k)?;
        // core k: r_{k-1} x n_k x r_k from the left factor
        let core = if k == 0 {
            DenseTensor::new(vec![n_k, r_k], svd.u.data().to_vec())?
        } else {
            DenseTensor::new(vec![carry_rows, n_k, r_k], svd.u.data().to_vec())?
        };
        cores.push(core);
        // carry = diag(s) V^T: r_k x rest
        let mut sv = Mat::zeros(r_k, rest);
        for i in 0..r_k {
            let s = svd.singular_values[i];
            for j in 0..rest {
                sv.set(i, j, s * svd.v.get(j, i));
            }
        }
        carry = sv;
        carry_rows = r_k;
    }
    cores.push(DenseTensor::new(
        vec![carry_rows, sizes[m - 1]],
        carry.data().to_vec(),
    )?);
    Ok(TTCores { cores })
}
