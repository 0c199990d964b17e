//! The tensor network behind a factored Gibbs kernel, and everything needed
//! to contract it: greedy contraction planning with flop accounting, and
//! evaluation of marginals and transport costs against a set of scalings.
//!
//! Construction follows the graphical-model dual: every kernel factor is a
//! vertex; every mode gets a (virtual) delta vertex tying together the
//! factor legs that carry its index plus one open edge. Delta vertices are
//! never materialized — eliminating a mode multiplies all incident tensors
//! elementwise along that index and sums it out in one fused step. A
//! low-rank matrix factor `U V^T` contributes two vertices joined by an
//! internal rank edge, and a TT kernel contributes one vertex per core
//! joined by bond edges.

mod eval;
mod planner;

pub use eval::{eval_all_marginals, eval_cost, eval_marginal, eval_marginal_set, EvalSession};
pub use planner::{
    all_marginals_flops, flops, plan_marginal, plan_marginal_sequential, plan_marginal_set,
    ContractionPlan, PlanStep, StepOp,
};

use crate::error::{Error, Result};
use crate::lowrank::TTCores;
use crate::model::{FactorForm, KernelModel};
use crate::tensor::DenseTensor;

/// Variables are numbered `0..m` for the modes, then one id per internal
/// rank/bond edge in construction order.
pub type VarId = usize;

/// One tensor vertex with its legs (variable ids, one per data dimension).
#[derive(Debug, Clone)]
pub struct Vertex {
    pub legs: Vec<VarId>,
    pub data: DenseTensor,
    pub name: String,
}

/// The factor tensor network of a kernel model.
#[derive(Debug, Clone)]
pub struct FactorNetwork {
    mode_sizes: Vec<usize>,
    var_sizes: Vec<usize>,
    vertices: Vec<Vertex>,
}

impl FactorNetwork {
    /// Build the network for a factored kernel. Dense factors become single
    /// vertices; low-rank matrix factors become `U`/`V` vertex pairs joined
    /// by a rank edge.
    pub fn build(kernel: &KernelModel) -> Self {
        let mode_sizes = kernel.mode_sizes().to_vec();
        let mut var_sizes = mode_sizes.clone();
        let mut vertices = Vec::new();
        for (fi, f) in kernel.factors().iter().enumerate() {
            match &f.form {
                FactorForm::Dense(t) => {
                    vertices.push(Vertex {
                        legs: f.alpha.modes().to_vec(),
                        data: t.clone(),
                        name: format!("K{fi}{:?}", f.alpha.modes()),
                    });
                }
                FactorForm::LowRank { u, v } => {
                    let bond = var_sizes.len();
                    var_sizes.push(u.ncols());
                    let (a, b) = (f.alpha.modes()[0], f.alpha.modes()[1]);
                    vertices.push(Vertex {
                        legs: vec![a, bond],
                        data: u.to_tensor(),
                        name: format!("U{fi}[{a}]"),
                    });
                    vertices.push(Vertex {
                        legs: vec![b, bond],
                        data: v.to_tensor(),
                        name: format!("V{fi}[{b}]"),
                    });
                }
            }
        }
        Self {
            mode_sizes,
            var_sizes,
            vertices,
        }
    }

    /// Build the chain network of a TT kernel: one vertex per core, bond
    /// edges between neighbours, one mode leg each.
    pub fn from_tt(tt: &TTCores) -> Result<Self> {
        let m = tt.num_modes();
        if m < 2 {
            return Err(Error::InvalidArgument("TT network needs >= 2 modes".into()));
        }
        let mode_sizes = tt.mode_sizes();
        let ranks = tt.ranks();
        let mut var_sizes = mode_sizes.clone();
        let bond_base = var_sizes.len();
        var_sizes.extend(ranks.iter().copied());
        let mut vertices = Vec::new();
        for (k, core) in tt.cores().iter().enumerate() {
            // stored shapes: first n x r, middle r x n x r, last r x n;
            // legs are listed in data-dimension order
            let legs = if k == 0 {
                vec![0, bond_base]
            } else if k == m - 1 {
                vec![bond_base + k - 1, k]
            } else {
                vec![bond_base + k - 1, k, bond_base + k]
            };
            vertices.push(Vertex {
                legs,
                data: core.clone(),
                name: format!("G{k}"),
            });
        }
        Ok(Self {
            mode_sizes,
            var_sizes,
            vertices,
        })
    }

    pub fn mode_sizes(&self) -> &[usize] {
        &self.mode_sizes
    }

    pub fn num_modes(&self) -> usize {
        self.mode_sizes.len()
    }

    pub fn num_vars(&self) -> usize {
        self.var_sizes.len()
    }

    pub fn var_size(&self, v: VarId) -> usize {
        self.var_sizes[v]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    /// Degree of the (virtual) delta vertex of mode `k`: incident factor
    /// legs plus the open edge.
    pub fn delta_degree(&self, k: usize) -> usize {
        self.vertices.iter().filter(|v| v.legs.contains(&k)).count() + 1
    }
}

/// Per-mode scaling vectors `gamma_k = exp(beta_k)`, with an optional mask
/// of modes whose scaling is pinned to all-ones.
#[derive(Debug, Clone)]
pub struct Scalings {
    gammas: Vec<Vec<f64>>,
    fixed: Vec<bool>,
}

impl Scalings {
    pub fn ones(mode_sizes: &[usize]) -> Self {
        Self {
            gammas: mode_sizes.iter().map(|&n| vec![1.0; n]).collect(),
            fixed: vec![false; mode_sizes.len()],
        }
    }

    pub fn new(gammas: Vec<Vec<f64>>) -> Result<Self> {
        for (k, g) in gammas.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidArgument(format!("mode {k} scaling is empty")));
            }
            if g.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::Positivity(format!(
                    "scaling vector for mode {k} must be strictly positive and finite"
                )));
            }
        }
        let m = gammas.len();
        Ok(Self {
            gammas,
            fixed: vec![false; m],
        })
    }

    pub fn num_modes(&self) -> usize {
        self.gammas.len()
    }

    pub fn gamma(&self, k: usize) -> &[f64] {
        &self.gammas[k]
    }

    pub fn gammas(&self) -> &[Vec<f64>] {
        &self.gammas
    }

    pub fn set_gamma(&mut self, k: usize, g: Vec<f64>) -> Result<()> {
        if g.len() != self.gammas[k].len() {
            return Err(Error::DimensionMismatch(format!(
                "scaling for mode {k}: length {} != {}",
                g.len(),
                self.gammas[k].len()
            )));
        }
        if g.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Positivity(format!(
                "scaling for mode {k} must stay strictly positive"
            )));
        }
        self.gammas[k] = g;
        Ok(())
    }

    /// Multiply mode `k`'s scaling elementwise by `v`.
    pub fn scale_gamma(&mut self, k: usize, v: &[f64]) -> Result<()> {
        let g: Vec<f64> = self.gammas[k].iter().zip(v).map(|(a, b)| a * b).collect();
        self.set_gamma(k, g)
    }

    pub fn pin(&mut self, k: usize) {
        self.fixed[k] = true;
    }

    pub fn is_fixed(&self, k: usize) -> bool {
        self.fixed[k]
    }

    /// `beta_k = log(gamma_k)`.
    pub fn beta(&self, k: usize) -> Vec<f64> {
        self.gammas[k].iter().map(|g| g.ln()).collect()
    }
}

/// The rank-1 feasibility correction produced by structured rounding:
/// `prefactor * outer(vectors)`.
#[derive(Debug, Clone)]
pub struct Rank1Correction {
    pub prefactor: f64,
    pub vectors: Vec<Vec<f64>>,
}

impl Rank1Correction {
    pub fn zero(mode_sizes: &[usize]) -> Self {
        Self {
            prefactor: 0.0,
            vectors: mode_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.prefactor == 0.0
    }

    /// Contribution of the correction to the mode-k marginal.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let mut scale = self.prefactor;
        for (j, v) in self.vectors.iter().enumerate() {
            if j != k {
                scale *= v.iter().sum::<f64>();
            }
        }
        self.vectors[k].iter().map(|&x| scale * x).collect()
    }

    pub fn materialize(&self) -> Result<DenseTensor> {
        Ok(DenseTensor::outer(&self.vectors)?.scaled(self.prefactor))
    }
}

/// An implicit transport plan: scalings applied to a factor network, plus
/// an optional rank-1 rounding correction. The network itself is passed
/// alongside wherever needed; only desk-scale plans can be materialized.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub scalings: Scalings,
    pub correction: Option<Rank1Correction>,
}

impl TransportPlan {
    pub fn unrounded(scalings: Scalings) -> Self {
        Self {
            scalings,
            correction: None,
        }
    }

    /// Materialize against a kernel model (desk scale, budget-capped).
    pub fn materialize(&self, kernel: &KernelModel) -> Result<DenseTensor> {
        let mut dense = kernel.assemble_dense()?;
        for (k, g) in self.scalings.gammas().iter().enumerate() {
            dense.scale_mode(g, k)?;
        }
        if let Some(c) = &self.correction {
            if !c.is_zero() {
                dense = dense.add(&c.materialize()?)?;
            }
        }
        Ok(dense)
    }
}
