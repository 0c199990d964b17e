//! Factored cost models `C_I = sum_{a in F} C^a_{I_a}` and their Gibbs
//! kernels `K_I = prod_{a in F} K^a_{I_a}` with `K^a = exp(-C^a/eta)`.
//!
//! Dense assembly of either side is the oracle path; it is capped by a
//! materialization budget because the whole point of the structured solver
//! is that the full tensors never need to exist.

use crate::error::{Error, Result};
use crate::tensor::{strides_for, DenseTensor, Mat};

/// Default cap on dense materialization, in tensor entries.
pub const MATERIALIZATION_BUDGET: usize = 10_000_000;

/// A strictly increasing tuple of mode indices (0-based), `a = (a_1..a_M)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexTuple {
    modes: Vec<usize>,
}

impl IndexTuple {
    pub fn new(modes: Vec<usize>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidArgument(
                "index tuple must be non-empty".into(),
            ));
        }
        if modes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "index tuple {:?} must be strictly increasing",
                modes
            )));
        }
        Ok(Self { modes })
    }

    pub fn pair(a: usize, b: usize) -> Self {
        Self::new(vec![a, b]).expect("pair tuple")
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.modes.contains(&k)
    }
}

/// One cost factor `C^a`, attached to the modes in `alpha`.
#[derive(Debug, Clone)]
pub struct CostFactor {
    pub alpha: IndexTuple,
    pub values: DenseTensor,
}

/// A factored cost model over modes of the given sizes.
#[derive(Debug, Clone)]
pub struct CostModel {
    mode_sizes: Vec<usize>,
    factors: Vec<CostFactor>,
}

impl CostModel {
    pub fn new(mode_sizes: Vec<usize>, factors: Vec<CostFactor>) -> Result<Self> {
        validate_structure(
            &mode_sizes,
            factors.iter().map(|f| (&f.alpha, f.values.dims())),
        )?;
        for f in &factors {
            if f.values.values().iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cost factor on {:?} has a negative entry",
                    f.alpha.modes()
                )));
            }
        }
        Ok(Self {
            mode_sizes,
            factors,
        })
    }

    pub fn mode_sizes(&self) -> &[usize] {
        &self.mode_sizes
    }

    pub fn num_modes(&self) -> usize {
        self.mode_sizes.len()
    }

    pub fn factors(&self) -> &[CostFactor] {
        &self.factors
    }

    /// `||C||_inf` of the assembled tensor, computed without materializing:
    /// all factors are non-negative, so the max is the sum of factor maxima
    /// only when factor supports align. Assemble when the budget allows;
    /// otherwise fall back to the (valid, possibly loose) sum of maxima.
    pub fn cost_sup_norm(&self) -> f64 {
        let entries: usize = self.mode_sizes.iter().product();
        if entries <= MATERIALIZATION_BUDGET {
            if let Ok(dense) = self.assemble_dense() {
                return dense.norm_inf();
            }
        }
        self.factors.iter().map(|f| f.values.norm_inf()).sum()
    }

    /// Materialize `C_I = sum_a C^a_{I_a}` (budget-capped).
    pub fn assemble_dense(&self) -> Result<DenseTensor> {
        self.assemble_dense_with_budget(MATERIALIZATION_BUDGET)
    }

    pub fn assemble_dense_with_budget(&self, budget: usize) -> Result<DenseTensor> {
        let entries: usize = self.mode_sizes.iter().product();
        if entries > budget {
            return Err(Error::BudgetExceeded { entries, budget });
        }
        let mut out = DenseTensor::zeros(self.mode_sizes.clone());
        for f in &self.factors {
            accumulate_factor(&mut out, &f.alpha, &f.values, |acc, v| *acc += v);
        }
        Ok(out)
    }

    /// Map every factor through `K^a = exp(-C^a/eta)`, preserving structure.
    pub fn gibbs_factors(&self, eta: f64) -> Result<KernelModel> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization parameter must be positive, got {eta}"
            )));
        }
        let factors = self
            .factors
            .iter()
            .map(|f| KernelFactor {
                alpha: f.alpha.clone(),
                // divide before exponentiating so rescaling (C, eta) by a
                // common positive constant leaves the kernel bit-identical
                form: FactorForm::Dense(f.values.map(|c| (-(c / eta)).exp())),
            })
            .collect();
        KernelModel::new(self.mode_sizes.clone(), factors, eta)
    }
}

/// Storage form of one kernel factor.
#[derive(Debug, Clone)]
pub enum FactorForm {
    Dense(DenseTensor),
    /// `U V^T` for an order-2 factor; `U` is `n_row x r`, `V` is `n_col x r`.
    LowRank {
        u: Mat,
        v: Mat,
    },
}

/// One kernel factor `K^a` (dense, or low-rank factored for matrices).
#[derive(Debug, Clone)]
pub struct KernelFactor {
    pub alpha: IndexTuple,
    pub form: FactorForm,
}

impl KernelFactor {
    pub fn dense(alpha: IndexTuple, values: DenseTensor) -> Self {
        Self {
            alpha,
            form: FactorForm::Dense(values),
        }
    }

    pub fn low_rank(alpha: IndexTuple, u: Mat, v: Mat) -> Result<Self> {
        if alpha.len() != 2 {
            return Err(Error::InvalidArgument(
                "low-rank form is restricted to order-2 factors".into(),
            ));
        }
        if u.ncols() != v.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "low-rank halves disagree on rank: {} vs {}",
                u.ncols(),
                v.ncols()
            )));
        }
        Ok(Self {
            alpha,
            form: FactorForm::LowRank { u, v },
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        match &self.form {
            FactorForm::Dense(t) => t.dims().to_vec(),
            FactorForm::LowRank { u, v } => vec![u.nrows(), v.nrows()],
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match &self.form {
            FactorForm::Dense(_) => None,
            FactorForm::LowRank { u, .. } => Some(u.ncols()),
        }
    }

    /// Expand to a dense tensor (`U V^T` for the low-rank form).
    pub fn to_dense(&self) -> Result<DenseTensor> {
        match &self.form {
            FactorForm::Dense(t) => Ok(t.clone()),
            FactorForm::LowRank { u, v } => {
                let m = u.matmul_t(v)?;
                Ok(m.to_tensor())
            }
        }
    }

    /// Entry at a factor-local multi-index.
    pub fn entry(&self, idx: &[usize]) -> f64 {
        match &self.form {
            FactorForm::Dense(t) => t.get(idx),
            FactorForm::LowRank { u, v } => {
                let (i, j) = (idx[0], idx[1]);
                let mut acc = 0.0;
                for c in 0..u.ncols() {
                    acc += u.get(i, c) * v.get(j, c);
                }
                acc
            }
        }
    }
}

/// A factored Gibbs kernel with its regularization parameter.
#[derive(Debug, Clone)]
pub struct KernelModel {
    mode_sizes: Vec<usize>,
    factors: Vec<KernelFactor>,
    eta: f64,
}

impl KernelModel {
    pub fn new(mode_sizes: Vec<usize>, factors: Vec<KernelFactor>, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization parameter must be positive, got {eta}"
            )));
        }
        validate_structure(
            &mode_sizes,
            factors.iter().map(|f| (&f.alpha, FactorDims::from(f))),
        )?;
        for f in &factors {
            if let FactorForm::Dense(t) = &f.form {
                if t.values().iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::Positivity(format!(
                        "dense kernel factor on {:?} has a non-positive entry",
                        f.alpha.modes()
                    )));
                }
            }
        }
        Ok(Self {
            mode_sizes,
            factors,
            eta,
        })
    }

    pub fn mode_sizes(&self) -> &[usize] {
        &self.mode_sizes
    }

    pub fn num_modes(&self) -> usize {
        self.mode_sizes.len()
    }

    pub fn factors(&self) -> &[KernelFactor] {
        &self.factors
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Kernel entry at a global multi-index (product over factors).
    pub fn entry(&self, idx: &[usize]) -> f64 {
        let mut prod = 1.0;
        let mut local = Vec::new();
        for f in &self.factors {
            local.clear();
            local.extend(f.alpha.modes().iter().map(|&k| idx[k]));
            prod *= f.entry(&local);
        }
        prod
    }

    /// Materialize `K_I = prod_a K^a_{I_a}` (budget-capped). Low-rank
    /// factors are expanded first and must reconstruct strictly positive.
    pub fn assemble_dense(&self) -> Result<DenseTensor> {
        self.assemble_dense_with_budget(MATERIALIZATION_BUDGET)
    }

    pub fn assemble_dense_with_budget(&self, budget: usize) -> Result<DenseTensor> {
        let entries: usize = self.mode_sizes.iter().product();
        if entries > budget {
            return Err(Error::BudgetExceeded { entries, budget });
        }
        let mut out = DenseTensor::ones(self.mode_sizes.clone());
        for f in &self.factors {
            let dense = f.to_dense()?;
            if matches!(f.form, FactorForm::LowRank { .. })
                && dense.values().iter().any(|&v| !(v > 0.0))
            {
                return Err(Error::RankTooSmall(format!(
                    "low-rank factor on {:?} reconstructs a non-positive entry",
                    f.alpha.modes()
                )));
            }
            accumulate_factor(&mut out, &f.alpha, &dense, |acc, v| *acc *= v);
        }
        Ok(out)
    }
}

enum FactorDims {
    Owned(Vec<usize>),
}

impl From<&KernelFactor> for FactorDims {
    fn from(f: &KernelFactor) -> Self {
        FactorDims::Owned(f.dims())
    }
}

impl AsRef<[usize]> for FactorDims {
    fn as_ref(&self) -> &[usize] {
        match self {
            FactorDims::Owned(d) => d,
        }
    }
}

fn validate_structure<'a, D: AsRef<[usize]>>(
    mode_sizes: &[usize],
    factors: impl Iterator<Item = (&'a IndexTuple, D)>,
) -> Result<()> {
    let m = mode_sizes.len();
    if m == 0 {
        return Err(Error::InvalidArgument(
            "model needs at least one mode".into(),
        ));
    }
    if mode_sizes.contains(&0) {
        return Err(Error::InvalidArgument("mode sizes must be >= 1".into()));
    }
    let mut covered = vec![false; m];
    let mut any = false;
    for (alpha, dims) in factors {
        any = true;
        let dims = dims.as_ref();
        if alpha.modes().last().copied().unwrap_or(0) >= m {
            return Err(Error::InvalidArgument(format!(
                "factor tuple {:?} references a mode >= {}",
                alpha.modes(),
                m
            )));
        }
        if dims.len() != alpha.len() {
            return Err(Error::DimensionMismatch(format!(
                "factor on {:?} has order {}",
                alpha.modes(),
                dims.len()
            )));
        }
        for (pos, &k) in alpha.modes().iter().enumerate() {
            if dims[pos] != mode_sizes[k] {
                return Err(Error::DimensionMismatch(format!(
                    "factor on {:?}: dim {} is {}, mode {} has size {}",
                    alpha.modes(),
                    pos,
                    dims[pos],
                    k,
                    mode_sizes[k]
                )));
            }
            covered[k] = true;
        }
    }
    if !any {
        return Err(Error::InvalidArgument(
            "model needs at least one factor".into(),
        ));
    }
    if let Some(k) = covered.iter().position(|&c| !c) {
        return Err(Error::InvalidArgument(format!(
            "mode {} appears in no factor; its marginal would be unconstrained",
            k
        )));
    }
    Ok(())
}

/// Fold one factor into the accumulator tensor, broadcasting over the modes
/// the factor does not touch.
fn accumulate_factor(
    out: &mut DenseTensor,
    alpha: &IndexTuple,
    factor: &DenseTensor,
    op: impl Fn(&mut f64, f64),
) {
    let m = out.order();
    let dims = out.dims().to_vec();
    let f_strides = strides_for(factor.dims());
    let mut idx = vec![0usize; m];
    for flat in 0..out.len() {
        let mut f_flat = 0;
        for (pos, &k) in alpha.modes().iter().enumerate() {
            f_flat += idx[k] * f_strides[pos];
        }
        op(&mut out.values_mut()[flat], factor.values()[f_flat]);
        for ax in (0..m).rev() {
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Pairwise squared Euclidean distances between two point sets (rows).
pub fn sqdist_cost(x: &Mat, y: &Mat) -> Result<DenseTensor> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::InvalidArgument("empty point set".into()));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "point dimension mismatch: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let mut out = DenseTensor::zeros(vec![x.nrows(), y.nrows()]);
    for i in 0..x.nrows() {
        let xi = x.row(i);
        for j in 0..y.nrows() {
            let yj = y.row(j);
            let mut d = 0.0;
            for (a, b) in xi.iter().zip(yj) {
                let t = a - b;
                d += t * t;
            }
            out.set(&[i, j], d);
        }
    }
    Ok(out)
}
