//! Plan execution: marginals and transport costs of the scaled network.
//!
//! An [`EvalSession`] memoizes step outputs by structural key, so the plans
//! for different marginals share their common messages — this is what makes
//! all four marginals of the length-4 chain cost `12n^2 + 4n` instead of
//! four times `6n^2`. The session's flop counter only charges each distinct
//! step once.

use std::collections::HashMap;
use std::rc::Rc;

use super::planner::{plan_marginal, plan_marginal_set, ContractionPlan, NodeKind, StepOp};
use super::{FactorNetwork, Rank1Correction, Scalings, VarId};
use crate::error::{Error, Result};
use crate::model::CostModel;
use crate::tensor::DenseTensor;

/// A tensor labeled by the network variables on its legs. Scalars have no
/// legs and a single value.
#[derive(Debug, Clone)]
pub(crate) struct Labeled {
    legs: Vec<VarId>,
    vals: Vec<f64>,
}

/// One evaluation context: a network plus a fixed set of scalings. Results
/// are memoized for the lifetime of the session; any change of scalings
/// requires a fresh session.
pub struct EvalSession<'a> {
    net: &'a FactorNetwork,
    scalings: &'a Scalings,
    memo: HashMap<String, Rc<Labeled>>,
    flops: u64,
}

impl<'a> EvalSession<'a> {
    pub fn new(net: &'a FactorNetwork, scalings: &'a Scalings) -> Result<Self> {
        if scalings.num_modes() != net.num_modes() {
            return Err(Error::DimensionMismatch(format!(
                "{} scaling vectors for {} modes",
                scalings.num_modes(),
                net.num_modes()
            )));
        }
        for k in 0..net.num_modes() {
            if scalings.gamma(k).len() != net.mode_sizes()[k] {
                return Err(Error::DimensionMismatch(format!(
                    "scaling for mode {k} has length {}, mode size is {}",
                    scalings.gamma(k).len(),
                    net.mode_sizes()[k]
                )));
            }
        }
        Ok(Self {
            net,
            scalings,
            memo: HashMap::new(),
            flops: 0,
        })
    }

    /// Flops charged so far (each distinct step once).
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// Execute a plan, reusing any memoized intermediates.
    fn run(&mut self, plan: &ContractionPlan) -> Result<Rc<Labeled>> {
        for step in &plan.steps {
            let out_key = &plan.nodes[step.output].key;
            if self.memo.contains_key(out_key) {
                continue;
            }
            let inputs: Vec<Rc<Labeled>> = step
                .inputs
                .iter()
                .map(|&i| self.node_value(plan, i))
                .collect::<Result<_>>()?;
            let sum_vars: Vec<VarId> = match &step.op {
                StepOp::Fuse { mode } => vec![*mode],
                StepOp::Contract { summed } => summed.clone(),
                StepOp::FinalJoin => Vec::new(),
            };
            let refs: Vec<&Labeled> = inputs.iter().map(|r| r.as_ref()).collect();
            let out = combine(self.net, &refs, &sum_vars, &plan.nodes[step.output].legs);
            self.flops += step.flops;
            self.memo.insert(out_key.clone(), Rc::new(out));
        }
        Ok(self.memo[&plan.nodes[plan.result].key].clone())
    }

    fn node_value(&mut self, plan: &ContractionPlan, id: usize) -> Result<Rc<Labeled>> {
        let node = &plan.nodes[id];
        if let Some(v) = self.memo.get(&node.key) {
            return Ok(v.clone());
        }
        let made = match node.kind {
            NodeKind::Source(i) => {
                let vtx = &self.net.vertices()[i];
                // reorder data legs ascending to match the plan's canonical order
                canonical(self.net, &vtx.legs, vtx.data.values())
            }
            NodeKind::Gamma(k) => Labeled {
                legs: vec![k],
                vals: self.scalings.gamma(k).to_vec(),
            },
            NodeKind::Step(_) => {
                return Err(Error::InvalidArgument(format!(
                    "plan references step output {id} before computing it"
                )))
            }
        };
        let rc = Rc::new(made);
        self.memo.insert(node.key.clone(), rc.clone());
        Ok(rc)
    }

    /// Mode-`k` marginal using the supplied plan. Errors if the result is
    /// not strictly positive (a low-rank approximation with too small a
    /// rank shows up here).
    pub fn marginal(&mut self, k: usize, plan: &ContractionPlan) -> Result<Vec<f64>> {
        let out = self.marginal_unchecked(k, plan)?;
        if out.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Positivity(format!(
                "marginal of mode {k} has a non-positive entry"
            )));
        }
        Ok(out)
    }

    /// Mode-`k` marginal without the positivity requirement. Marginals of a
    /// low-rank approximate kernel that are only reported (never inverted
    /// or logged) may legitimately carry small negative ripples.
    pub fn marginal_unchecked(&mut self, k: usize, plan: &ContractionPlan) -> Result<Vec<f64>> {
        if plan.open_modes != [k] {
            return Err(Error::InvalidArgument(format!(
                "plan targets modes {:?}, not {k}",
                plan.open_modes
            )));
        }
        let out = self.run(plan)?;
        Ok(out.vals.clone())
    }

    /// Joint marginal on a set of modes (no positivity requirement). The
    /// output is materialized, so its size falls under the budget.
    pub fn marginal_set(&mut self, plan: &ContractionPlan) -> Result<DenseTensor> {
        let entries: usize = plan
            .open_modes
            .iter()
            .map(|&k| self.net.var_size(k))
            .product();
        if entries > crate::model::MATERIALIZATION_BUDGET {
            return Err(Error::BudgetExceeded {
                entries,
                budget: crate::model::MATERIALIZATION_BUDGET,
            });
        }
        let out = self.run(plan)?;
        let dims: Vec<usize> = out.legs.iter().map(|&l| self.net.var_size(l)).collect();
        DenseTensor::new(dims, out.vals.clone())
    }
}

/// Reorder a vertex's values so its legs are ascending.
fn canonical(net: &FactorNetwork, legs: &[VarId], vals: &[f64]) -> Labeled {
    let mut order: Vec<usize> = (0..legs.len()).collect();
    order.sort_by_key(|&p| legs[p]);
    let sorted_legs: Vec<VarId> = order.iter().map(|&p| legs[p]).collect();
    if sorted_legs == legs {
        return Labeled {
            legs: sorted_legs,
            vals: vals.to_vec(),
        };
    }
    let dims: Vec<usize> = legs.iter().map(|&l| net.var_size(l)).collect();
    let out_dims: Vec<usize> = sorted_legs.iter().map(|&l| net.var_size(l)).collect();
    let out_strides = crate::tensor::strides_for(&out_dims);
    let mut out = vec![0.0; vals.len()];
    let mut idx = vec![0usize; dims.len()];
    for &v in vals {
        let mut flat = 0;
        for (out_pos, &in_pos) in order.iter().enumerate() {
            flat += idx[in_pos] * out_strides[out_pos];
        }
        out[flat] = v;
        for ax in (0..dims.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Labeled {
        legs: sorted_legs,
        vals: out,
    }
}

/// Multiply `inputs` together over the union of their legs (shared legs
/// align), summing out `sum_vars`, producing a tensor on `out_legs`.
fn combine(
    net: &FactorNetwork,
    inputs: &[&Labeled],
    sum_vars: &[VarId],
    out_legs: &[VarId],
) -> Labeled {
    let axes: Vec<VarId> = out_legs.iter().chain(sum_vars.iter()).copied().collect();
    let axis_sizes: Vec<usize> = axes.iter().map(|&v| net.var_size(v)).collect();
    let out_len: usize = out_legs.iter().map(|&v| net.var_size(v)).product();

    // per-input stride for every loop axis (0 when the input lacks the leg)
    let mut strides: Vec<Vec<usize>> = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let dims: Vec<usize> = inp.legs.iter().map(|&l| net.var_size(l)).collect();
        let s = crate::tensor::strides_for(&dims);
        let per_axis: Vec<usize> = axes
            .iter()
            .map(|v| inp.legs.iter().position(|l| l == v).map_or(0, |p| s[p]))
            .collect();
        strides.push(per_axis);
    }
    // output strides along the out axes, 0 along summed axes
    let out_dims: Vec<usize> = out_legs.iter().map(|&v| net.var_size(v)).collect();
    let out_s = crate::tensor::strides_for(&out_dims);
    let out_stride: Vec<usize> = (0..axes.len())
        .map(|a| if a < out_legs.len() { out_s[a] } else { 0 })
        .collect();

    let mut out = vec![0.0; out_len.max(1)];
    let total: usize = axis_sizes.iter().product::<usize>().max(1);
    let mut idx = vec![0usize; axes.len()];
    let mut offs = vec![0usize; inputs.len()];
    let mut out_off = 0usize;
    for count in 0..total {
        let mut prod = 1.0;
        for (i, inp) in inputs.iter().enumerate() {
            prod *= inp.vals[offs[i]];
        }
        out[out_off] += prod;
        if count + 1 == total {
            break;
        }
        for ax in (0..axes.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < axis_sizes[ax] {
                for (i, st) in strides.iter().enumerate() {
                    offs[i] += st[ax];
                }
                out_off += out_stride[ax];
                break;
            }
            idx[ax] = 0;
            for (i, st) in strides.iter().enumerate() {
                offs[i] -= st[ax] * (axis_sizes[ax] - 1);
            }
            out_off -= out_stride[ax] * (axis_sizes[ax] - 1);
        }
    }
    Labeled {
        legs: out_legs.to_vec(),
        vals: out,
    }
}

/// Mode-`k` marginal of the scaled network under a precomputed plan.
pub fn eval_marginal(
    net: &FactorNetwork,
    scalings: &Scalings,
    k: usize,
    plan: &ContractionPlan,
) -> Result<Vec<f64>> {
    EvalSession::new(net, scalings)?.marginal(k, plan)
}

/// Joint marginal on a mode set.
pub fn eval_marginal_set(
    net: &FactorNetwork,
    scalings: &Scalings,
    modes: &[usize],
) -> Result<DenseTensor> {
    let plan = plan_marginal_set(net, modes)?;
    EvalSession::new(net, scalings)?.marginal_set(&plan)
}

/// All `m` marginals in one shared session; the returned flop count charges
/// each distinct contraction step once.
pub fn eval_all_marginals(
    net: &FactorNetwork,
    scalings: &Scalings,
) -> Result<(Vec<Vec<f64>>, u64)> {
    let mut session = EvalSession::new(net, scalings)?;
    let mut out = Vec::with_capacity(net.num_modes());
    for k in 0..net.num_modes() {
        let plan = plan_marginal(net, k)?;
        out.push(session.marginal(k, &plan)?);
    }
    Ok((out, session.flops()))
}

/// Transport cost `<C, P>` of the scaled network (plus optional rank-1
/// rounding correction), via factor marginals: nothing is materialized at
/// full order.
pub fn eval_cost(
    net: &FactorNetwork,
    scalings: &Scalings,
    cost: &CostModel,
    correction: Option<&Rank1Correction>,
) -> Result<f64> {
    if cost.mode_sizes() != net.mode_sizes() {
        return Err(Error::DimensionMismatch(
            "cost model and network disagree on mode sizes".into(),
        ));
    }
    let mut session = EvalSession::new(net, scalings)?;
    let mut total = 0.0;
    for f in cost.factors() {
        let plan = plan_marginal_set(net, f.alpha.modes())?;
        let p_alpha = session.marginal_set(&plan)?;
        total += f.values.inner(&p_alpha)?;
    }
    if let Some(c) = correction {
        if !c.is_zero() {
            if c.vectors.len() != net.num_modes() {
                return Err(Error::DimensionMismatch(
                    "correction vector count does not match modes".into(),
                ));
            }
            for f in cost.factors() {
                // <C^a, outer(e)> splits into the factor-local outer product
                // times the total mass of the untouched directions
                let mut scale = c.prefactor;
                for (j, v) in c.vectors.iter().enumerate() {
                    if !f.alpha.contains(j) {
                        scale *= v.iter().sum::<f64>();
                    }
                }
                let local: Vec<Vec<f64>> = f
                    .alpha
                    .modes()
                    .iter()
                    .map(|&j| c.vectors[j].clone())
                    .collect();
                let outer = DenseTensor::outer(&local)?;
                total += scale * f.values.inner(&outer)?;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostFactor, IndexTuple, KernelFactor, KernelModel};
    use crate::network::planner::flops;
    use crate::test_util::{assert_close, assert_vec_close, seeded_rng, uniform_tensor};
    use rand::Rng;

    fn chain_kernel(rng: &mut impl Rng, sizes: &[usize]) -> KernelModel {
        let factors = (0..sizes.len() - 1)
            .map(|k| {
                KernelFactor::dense(
                    IndexTuple::pair(k, k + 1),
                    uniform_tensor(rng, &[sizes[k], sizes[k + 1]]),
                )
            })
            .collect();
        KernelModel::new(sizes.to_vec(), factors, 1.0).unwrap()
    }

    fn random_scalings(rng: &mut impl Rng, sizes: &[usize]) -> Scalings {
        Scalings::new(
            sizes
                .iter()
                .map(|&n| (0..n).map(|_| rng.gen_range(0.5..1.5)).collect())
                .collect(),
        )
        .unwrap()
    }

    /// Dense-path oracle: materialize, scale every mode, take the marginal.
    fn dense_marginal(kernel: &KernelModel, s: &Scalings, k: usize) -> Vec<f64> {
        let mut dense = kernel.assemble_dense().unwrap();
        for (mode, g) in s.gammas().iter().enumerate() {
            dense.scale_mode(g, mode).unwrap();
        }
        dense.marginal(k).unwrap()
    }

    #[test]
    fn all_ones_chain_counts_paths() {
        let factors = (0..3)
            .map(|k| KernelFactor::dense(IndexTuple::pair(k, k + 1), DenseTensor::ones(vec![3, 3])))
            .collect();
        let kernel = KernelModel::new(vec![3; 4], factors, 1.0).unwrap();
        let net = FactorNetwork::build(&kernel);
        let s = Scalings::ones(&[3; 4]);
        for k in 0..4 {
            let plan = plan_marginal(&net, k).unwrap();
            let got = eval_marginal(&net, &s, k, &plan).unwrap();
            assert_vec_close(&got, &[27.0; 3], 1e-12);
        }
    }

    #[test]
    fn single_factor_marginal_is_scaled_matvec() {
        let mut rng = seeded_rng(70);
        let kernel = chain_kernel(&mut rng, &[4, 5]);
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &[4, 5]);
        let plan = plan_marginal(&net, 0).unwrap();
        let got = eval_marginal(&net, &s, 0, &plan).unwrap();
        // r_0 = gamma_0 o (K gamma_1)
        let k = match &kernel.factors()[0].form {
            crate::model::FactorForm::Dense(t) => t.clone(),
            _ => unreachable!(),
        };
        let mut want = vec![0.0; 4];
        for i in 0..4 {
            for j in 0..5 {
                want[i] += k.get(&[i, j]) * s.gamma(1)[j];
            }
            want[i] *= s.gamma(0)[i];
        }
        assert_vec_close(&got, &want, 1e-13);
    }

    #[test]
    fn chain_marginals_match_dense_oracle() {
        let mut rng = seeded_rng(71);
        let kernel = chain_kernel(&mut rng, &[4, 4, 4, 4]);
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &[4, 4, 4, 4]);
        for k in 0..4 {
            let plan = plan_marginal(&net, k).unwrap();
            let got = eval_marginal(&net, &s, k, &plan).unwrap();
            let want = dense_marginal(&kernel, &s, k);
            assert_vec_close(&got, &want, 1e-11);
        }
    }

    #[test]
    fn all_marginals_match_individual_and_count_12n2_plus_4n() {
        let mut rng = seeded_rng(72);
        for n in [5usize, 50] {
            let kernel = chain_kernel(&mut rng, &[n; 4]);
            let net = FactorNetwork::build(&kernel);
            let s = random_scalings(&mut rng, &[n; 4]);
            let (all, counted) = eval_all_marginals(&net, &s).unwrap();
            for (k, got) in all.iter().enumerate() {
                let plan = plan_marginal(&net, k).unwrap();
                let single = eval_marginal(&net, &s, k, &plan).unwrap();
                assert_vec_close(got, &single, 1e-12);
                assert_eq!(flops(&plan), 6 * (n as u64) * (n as u64));
            }
            assert_eq!(counted, 12 * (n as u64) * (n as u64) + 4 * (n as u64));
        }
    }

    #[test]
    fn low_rank_chain_all_marginals_linear_in_rank() {
        use crate::lowrank::{lowrank_kernel_factor, SvdMethod};
        use crate::tensor::Mat;
        let mut rng = seeded_rng(73);
        let n = 16;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
            .collect();
        let gauss = |a: usize, b: usize| {
            let dx = pts[a].0 - pts[b].0;
            let dy = pts[a].1 - pts[b].1;
            (-(dx * dx + dy * dy)).exp()
        };
        for r in [2usize, 4, 8] {
            let factors: Vec<KernelFactor> = (0..3)
                .map(|k| {
                    let m =
                        Mat::from_fn(n, n, |i, j| gauss(i, j) + 0.01 * ((i + j + k) % 3) as f64);
                    lowrank_kernel_factor(IndexTuple::pair(k, k + 1), &m, r, SvdMethod::Exact)
                        .unwrap()
                })
                .collect();
            let kernel = KernelModel::new(vec![n; 4], factors, 1.0).unwrap();
            let net = FactorNetwork::build(&kernel);
            let s = random_scalings(&mut rng, &[n; 4]);
            let (marg, counted) = eval_all_marginals(&net, &s).unwrap();
            // against the dense expansion of the same low-rank kernel
            for (k, got) in marg.iter().enumerate() {
                let want = dense_marginal(&kernel, &s, k);
                assert_vec_close(got, &want, 1e-11);
            }
            assert!(
                counted <= 40 * (n as u64) * (r as u64),
                "rank {r}: {counted} flops > 40nr"
            );
        }
    }

    #[test]
    fn tt_network_marginals_match_dense_oracle() {
        use crate::lowrank::tt_svd;
        let mut rng = seeded_rng(74);
        let kernel = chain_kernel(&mut rng, &[4, 4, 4, 4]);
        let dense = kernel.assemble_dense().unwrap();
        let tt = tt_svd(&dense, &[4, 16, 4]).unwrap(); // full ranks: exact
        let net = FactorNetwork::from_tt(&tt).unwrap();
        let s = random_scalings(&mut rng, &[4, 4, 4, 4]);
        for k in 0..4 {
            let plan = plan_marginal(&net, k).unwrap();
            let got = eval_marginal(&net, &s, k, &plan).unwrap();
            let want = dense_marginal(&kernel, &s, k);
            assert_vec_close(&got, &want, 1e-10);
        }
    }

    #[test]
    fn scaling_one_mode_scales_every_marginal_linearly() {
        let mut rng = seeded_rng(75);
        let kernel = chain_kernel(&mut rng, &[3, 4, 3, 2]);
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &[3, 4, 3, 2]);
        let (base, _) = eval_all_marginals(&net, &s).unwrap();

        let c = 2.75;
        let mut scaled = s.clone();
        let g1: Vec<f64> = s.gamma(1).iter().map(|&x| c * x).collect();
        scaled.set_gamma(1, g1).unwrap();
        let (after, _) = eval_all_marginals(&net, &scaled).unwrap();
        for k in 0..4 {
            let want: Vec<f64> = base[k].iter().map(|&x| c * x).collect();
            assert_vec_close(&after[k], &want, 1e-12);
        }
    }

    #[test]
    fn pair_marginal_matches_dense_oracle() {
        let mut rng = seeded_rng(76);
        let kernel = chain_kernel(&mut rng, &[3, 4, 3, 2]);
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &[3, 4, 3, 2]);
        let mut dense = kernel.assemble_dense().unwrap();
        for (mode, g) in s.gammas().iter().enumerate() {
            dense.scale_mode(g, mode).unwrap();
        }
        for modes in [vec![0, 1], vec![1, 2], vec![0, 3], vec![2, 3]] {
            let got = eval_marginal_set(&net, &s, &modes).unwrap();
            let want = dense.marginal_onto(&modes).unwrap();
            for (g, w) in got.values().iter().zip(want.values()) {
                assert_close(*g, *w, 1e-11);
            }
        }
    }

    #[test]
    fn cost_of_zero_model_is_zero() {
        let mut rng = seeded_rng(77);
        let kernel = chain_kernel(&mut rng, &[3, 3, 3, 3]);
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &[3, 3, 3, 3]);
        let cost = crate::model::CostModel::new(
            vec![3; 4],
            (0..3)
                .map(|k| CostFactor {
                    alpha: IndexTuple::pair(k, k + 1),
                    values: DenseTensor::zeros(vec![3, 3]),
                })
                .collect(),
        )
        .unwrap();
        assert_close(eval_cost(&net, &s, &cost, None).unwrap(), 0.0, 1e-15);
    }

    #[test]
    fn two_marginal_cost_matches_loop_oracle() {
        let mut rng = seeded_rng(78);
        let kernel = chain_kernel(&mut rng, &[4, 5]);
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &[4, 5]);
        let c = uniform_tensor(&mut rng, &[4, 5]);
        let cost = crate::model::CostModel::new(
            vec![4, 5],
            vec![CostFactor {
                alpha: IndexTuple::pair(0, 1),
                values: c.clone(),
            }],
        )
        .unwrap();
        let got = eval_cost(&net, &s, &cost, None).unwrap();
        let k = match &kernel.factors()[0].form {
            crate::model::FactorForm::Dense(t) => t.clone(),
            _ => unreachable!(),
        };
        let mut want = 0.0;
        for i in 0..4 {
            for j in 0..5 {
                want += c.get(&[i, j]) * s.gamma(0)[i] * k.get(&[i, j]) * s.gamma(1)[j];
            }
        }
        assert_close(got, want, 1e-12);
    }

    #[test]
    fn cost_with_rank1_correction_matches_dense_oracle() {
        let mut rng = seeded_rng(79);
        let sizes = [4usize; 4];
        let kernel = chain_kernel(&mut rng, &sizes);
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &sizes);
        let cost = crate::model::CostModel::new(
            sizes.to_vec(),
            (0..3)
                .map(|k| CostFactor {
                    alpha: IndexTuple::pair(k, k + 1),
                    values: uniform_tensor(&mut rng, &[4, 4]),
                })
                .collect(),
        )
        .unwrap();
        let corr = Rank1Correction {
            prefactor: 0.37,
            vectors: (0..4)
                .map(|_| (0..4).map(|_| rng.gen_range(-0.2..0.8)).collect())
                .collect(),
        };
        let got = eval_cost(&net, &s, &cost, Some(&corr)).unwrap();

        // dense oracle
        let plan = crate::network::TransportPlan {
            scalings: s.clone(),
            correction: Some(corr.clone()),
        };
        let p = plan.materialize(&kernel).unwrap();
        let want = cost.assemble_dense().unwrap().inner(&p).unwrap();
        assert_close(got, want, 1e-10);
    }

    #[test]
    fn greedy_and_sequential_plans_agree() {
        use crate::network::planner::plan_marginal_sequential;
        let mut rng = seeded_rng(80);
        // chain and a loopy five-mode graph, dense factors
        let loops: Vec<Vec<(usize, usize)>> = vec![
            vec![(0, 1), (1, 2), (2, 3)],
            vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (3, 4)],
        ];
        for edges in loops {
            let m = edges.iter().map(|&(_, b)| b).max().unwrap() + 1;
            let factors = edges
                .iter()
                .map(|&(a, b)| {
                    KernelFactor::dense(IndexTuple::pair(a, b), uniform_tensor(&mut rng, &[3, 3]))
                })
                .collect();
            let kernel = KernelModel::new(vec![3; m], factors, 1.0).unwrap();
            let net = FactorNetwork::build(&kernel);
            let s = random_scalings(&mut rng, &vec![3; m]);
            for k in 0..m {
                let greedy = plan_marginal(&net, k).unwrap();
                let seq = plan_marginal_sequential(&net, k).unwrap();
                let a = eval_marginal(&net, &s, k, &greedy).unwrap();
                let b = eval_marginal(&net, &s, k, &seq).unwrap();
                assert_vec_close(&a, &b, 1e-10);
            }
        }
    }

    #[test]
    fn parallel_factors_form_a_multi_edge_cycle() {
        use crate::network::planner::plan_marginal_sequential;
        use crate::tensor::Mat;
        // two low-rank factors between modes 0 and 1 plus a dense hop to
        // mode 2: once both endpoint modes are fused, the two fused tensors
        // share both rank edges and must be summed in a single step (the
        // sequential planner takes exactly that route; the greedy planner
        // may thread the edges one at a time but must agree on the value)
        let mut rng = seeded_rng(82);
        let n = 5;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            (
                Mat::from_fn(n, 2, |_, _| rng.gen_range(0.2..1.0)),
                Mat::from_fn(n, 2, |_, _| rng.gen_range(0.2..1.0)),
            )
        };
        let (u1, v1) = mk(&mut rng);
        let (u2, v2) = mk(&mut rng);
        let factors = vec![
            KernelFactor::low_rank(IndexTuple::pair(0, 1), u1, v1).unwrap(),
            KernelFactor::low_rank(IndexTuple::pair(0, 1), u2, v2).unwrap(),
            KernelFactor::dense(IndexTuple::pair(1, 2), uniform_tensor(&mut rng, &[n, n])),
        ];
        let kernel = KernelModel::new(vec![n, n, n], factors, 1.0).unwrap();
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &[n, n, n]);

        let seq = plan_marginal_sequential(&net, 2).unwrap();
        let multi = seq.steps.iter().any(
            |st| matches!(&st.op, crate::network::StepOp::Contract { summed } if summed.len() == 2),
        );
        assert!(multi, "expected a simultaneous two-edge contraction");
        let want = dense_marginal(&kernel, &s, 2);
        let via_seq = eval_marginal(&net, &s, 2, &seq).unwrap();
        assert_vec_close(&via_seq, &want, 1e-11);

        for k in 0..3 {
            let plan = plan_marginal(&net, k).unwrap();
            let got = eval_marginal(&net, &s, k, &plan).unwrap();
            assert_vec_close(&got, &dense_marginal(&kernel, &s, k), 1e-11);
        }
    }

    #[test]
    fn disconnected_components_contract_as_independent_products() {
        let mut rng = seeded_rng(83);
        let factors = vec![
            KernelFactor::dense(IndexTuple::pair(0, 1), uniform_tensor(&mut rng, &[3, 4])),
            KernelFactor::dense(IndexTuple::pair(2, 3), uniform_tensor(&mut rng, &[2, 3])),
        ];
        let kernel = KernelModel::new(vec![3, 4, 2, 3], factors, 1.0).unwrap();
        let net = FactorNetwork::build(&kernel);
        let s = random_scalings(&mut rng, &[3, 4, 2, 3]);
        for k in 0..4 {
            let plan = plan_marginal(&net, k).unwrap();
            let got = eval_marginal(&net, &s, k, &plan).unwrap();
            let want = dense_marginal(&kernel, &s, k);
            assert_vec_close(&got, &want, 1e-11);
        }
    }

    #[test]
    fn tt_all_marginals_within_nr2_budget() {
        use crate::lowrank::tt_svd;
        let mut rng = seeded_rng(81);
        let kernel = chain_kernel(&mut rng, &[8, 8, 8, 8]);
        let dense = kernel.assemble_dense().unwrap();
        for r in [2usize, 4] {
            let tt = tt_svd(&dense, &[r, r, r]).unwrap();
            let net = FactorNetwork::from_tt(&tt).unwrap();
            let counted = crate::network::all_marginals_flops(&net).unwrap();
            let bound = 40 * 8 * (r as u64) * (r as u64);
            assert!(counted <= bound, "TT sweep at r={r}: {counted} > {bound}");
        }
    }

    #[test]
    fn nonpositive_marginal_is_flagged() {
        use crate::model::FactorForm;
        use crate::tensor::Mat;
        // hand-built low-rank factor whose reconstruction is negative
        let u = Mat::new(2, 1, vec![1.0, -1.0]).unwrap();
        let v = Mat::new(2, 1, vec![1.0, 1.0]).unwrap();
        let f = KernelFactor {
            alpha: IndexTuple::pair(0, 1),
            form: FactorForm::LowRank { u, v },
        };
        let kernel = KernelModel::new(vec![2, 2], vec![f], 1.0).unwrap();
        let net = FactorNetwork::build(&kernel);
        let s = Scalings::ones(&[2, 2]);
        let plan = plan_marginal(&net, 0).unwrap();
        assert!(matches!(
            eval_marginal(&net, &s, 0, &plan),
            Err(Error::Positivity(_))
        ));
    }
}
