//! Greedy contraction planning.
//!
//! A plan eliminates every variable that is not an open (output) mode, one
//! per step. Eliminating a mode variable is a delta fusion: all tensors
//! carrying that index are multiplied elementwise along it together with the
//! mode's scaling vector, then summed out. Eliminating a rank edge is a
//! pairwise contraction of the two vertices holding it, summing over every
//! rank edge the pair shares (multi-edges collapse in one step). A final
//! join attaches the open modes' scaling vectors and multiplies the
//! remaining pieces together.
//!
//! The greedy choice ranks candidate eliminations by how many mode indices
//! survive into the output, then by the product of surviving rank-edge
//! sizes, then by step cost, then by variable id. Keeping the primary keys
//! free of the mode size makes the chosen plan shape independent of `n`, so
//! flop counts scale linearly in `n` on the low-rank topologies, and on the
//! dense chain the plan is exactly the reuse-friendly message schedule.
//!
//! Flop accounting convention (additions + multiplications): an `n x n`
//! matrix-vector product costs `n(2n-1)`; an elementwise product of `q`
//! length-`n` vectors costs `(q-1)n`; a pairwise contraction over a summed
//! block of size `s` costs `2s-1` per output entry.

use super::{FactorNetwork, VarId};
use crate::error::{Error, Result};

/// What a plan step does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOp {
    /// Delta fusion of one mode: elementwise products along the mode index
    /// (scaling vector included), summed out.
    Fuse { mode: VarId },
    /// Pairwise contraction of two nodes over the listed rank edges.
    Contract { summed: Vec<VarId> },
    /// Terminal join: multiply all remaining pieces and the open modes'
    /// scaling vectors into the output tensor.
    FinalJoin,
}

/// A plan node: a network vertex, a scaling vector, or a step output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Source(usize),
    Gamma(usize),
    Step(usize),
}

#[derive(Debug, Clone)]
pub struct PlanNode {
    pub kind: NodeKind,
    pub legs: Vec<VarId>,
    /// Structural identity: equal keys across plans mean equal values, which
    /// is what lets several marginal evaluations share intermediates.
    pub key: String,
}

#[derive(Debug, Clone)]
pub struct PlanStep {
    pub op: StepOp,
    /// Input node ids, vectors-along-the-eliminated-mode first, then higher
    /// tensors, each group sorted by node id.
    pub inputs: Vec<usize>,
    pub output: usize,
    pub flops: u64,
}

/// An ordered elimination schedule for one marginal (or marginal set).
#[derive(Debug, Clone)]
pub struct ContractionPlan {
    pub open_modes: Vec<usize>,
    pub nodes: Vec<PlanNode>,
    pub steps: Vec<PlanStep>,
    pub result: usize,
    pub total_flops: u64,
}

/// Total additions + multiplications of a plan.
pub fn flops(plan: &ContractionPlan) -> u64 {
    plan.total_flops
}

/// Cost of evaluating all `m` marginals with shared intermediates: each
/// structurally distinct step across the per-mode plans is charged once.
/// Purely combinatorial — no scalings needed.
pub fn all_marginals_flops(net: &FactorNetwork) -> Result<u64> {
    let mut seen = std::collections::HashSet::new();
    let mut total = 0u64;
    for k in 0..net.num_modes() {
        let plan = plan_marginal(net, k)?;
        for step in &plan.steps {
            if seen.insert(plan.nodes[step.output].key.clone()) {
                total += step.flops;
            }
        }
    }
    Ok(total)
}

/// Plan the contraction computing the mode-`k` marginal.
pub fn plan_marginal(net: &FactorNetwork, k: usize) -> Result<ContractionPlan> {
    plan_marginal_set(net, &[k])
}

/// Reference planner: eliminates variables in plain ascending id order,
/// ignoring cost. Produces valid but usually wasteful plans; evaluation
/// results must agree with the greedy planner's, which is what the
/// plan-independence tests check.
pub fn plan_marginal_sequential(net: &FactorNetwork, k: usize) -> Result<ContractionPlan> {
    if k >= net.num_modes() {
        return Err(Error::InvalidArgument("open mode out of range".into()));
    }
    Planner::new(net, &[k]).run_sequential()
}

/// Plan the contraction computing the joint marginal on a set of modes
/// (strictly increasing). Used for pair marginals in cost evaluation.
pub fn plan_marginal_set(net: &FactorNetwork, open: &[usize]) -> Result<ContractionPlan> {
    if open.is_empty() || open.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "open modes must be non-empty and strictly increasing".into(),
        ));
    }
    if *open.last().unwrap() >= net.num_modes() {
        return Err(Error::InvalidArgument("open mode out of range".into()));
    }
    Planner::new(net, open).run()
}

struct Planner<'a> {
    net: &'a FactorNetwork,
    open: Vec<usize>,
    nodes: Vec<PlanNode>,
    steps: Vec<PlanStep>,
    alive: Vec<bool>,
}

#[derive(Debug)]
struct Candidate {
    /// (surviving non-open modes beyond one, surviving modes beyond the
    /// open-set size) — zero for moves that keep intermediates streamable.
    excess: usize,
    /// Product of surviving rank-edge sizes.
    profile: u64,
    flops: u64,
    var: VarId,
    op: StepOp,
    inputs: Vec<usize>,
    out_legs: Vec<VarId>,
}

impl<'a> Planner<'a> {
    fn new(net: &'a FactorNetwork, open: &[usize]) -> Self {
        let mut nodes = Vec::new();
        for (i, v) in net.vertices().iter().enumerate() {
            nodes.push(PlanNode {
                kind: NodeKind::Source(i),
                legs: sorted(&v.legs),
                key: format!("s{i}"),
            });
        }
        for k in 0..net.num_modes() {
            nodes.push(PlanNode {
                kind: NodeKind::Gamma(k),
                legs: vec![k],
                key: format!("g{k}"),
            });
        }
        let alive = vec![true; nodes.len()];
        Self {
            net,
            open: open.to_vec(),
            nodes,
            steps: Vec::new(),
            alive,
        }
    }

    fn run(mut self) -> Result<ContractionPlan> {
        loop {
            let cands = self.candidates();
            let Some(best) = cands.into_iter().min_by(|a, b| {
                (a.excess, a.profile, a.flops, a.var).cmp(&(b.excess, b.profile, b.flops, b.var))
            }) else {
                break;
            };
            self.emit(best);
        }
        self.final_join()
    }

    fn run_sequential(mut self) -> Result<ContractionPlan> {
        loop {
            let cands = self.candidates();
            let Some(first) = cands.into_iter().min_by_key(|c| c.var) else {
                break;
            };
            self.emit(first);
        }
        self.final_join()
    }

    /// Tensor nodes currently alive (gammas excluded).
    fn live_tensors(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.alive[i] && !matches!(self.nodes[i].kind, NodeKind::Gamma(_)))
            .collect()
    }

    fn candidates(&self) -> Vec<Candidate> {
        let live = self.live_tensors();
        let mut cands = Vec::new();

        // delta fusions of non-open modes
        for v in 0..self.net.num_modes() {
            if self.open.contains(&v) {
                continue;
            }
            let holders: Vec<usize> = live
                .iter()
                .copied()
                .filter(|&i| self.nodes[i].legs.contains(&v))
                .collect();
            let gamma = self.gamma_node(v);
            if holders.is_empty() && !self.alive[gamma] {
                continue; // already eliminated
            }
            let mut inputs: Vec<usize> = vec![gamma];
            inputs.extend(&holders);
            let (vectors, higher) = self.split_vectors(&inputs, v);
            let out_legs = union_minus(inputs.iter().map(|&i| self.nodes[i].legs.as_slice()), &[v]);
            let flops = self.fuse_flops(v, &vectors, &higher, &out_legs);
            let mut ordered = vectors.clone();
            ordered.extend(&higher);
            cands.push(self.candidate(StepOp::Fuse { mode: v }, v, ordered, out_legs, flops));
        }

        // rank-edge contractions (multi-edges between a pair collapse together)
        let m = self.net.num_modes();
        let mut seen_bonds = vec![false; self.net.num_vars()];
        for &i in &live {
            for &b in &self.nodes[i].legs {
                if b < m || seen_bonds[b] {
                    continue;
                }
                seen_bonds[b] = true;
                let holders: Vec<usize> = live
                    .iter()
                    .copied()
                    .filter(|&j| self.nodes[j].legs.contains(&b))
                    .collect();
                debug_assert_eq!(holders.len(), 2, "rank edge {b} must join two vertices");
                let (a, c) = (holders[0], holders[1]);
                let shared: Vec<VarId> = self.nodes[a]
                    .legs
                    .iter()
                    .copied()
                    .filter(|&x| x >= m && self.nodes[c].legs.contains(&x))
                    .collect();
                let out_legs = union_minus(
                    [self.nodes[a].legs.as_slice(), self.nodes[c].legs.as_slice()].into_iter(),
                    &shared,
                );
                let summed: u64 = shared
                    .iter()
                    .map(|&x| self.net.var_size(x) as u64)
                    .product();
                let out_size = self.legs_size(&out_legs);
                let flops = out_size * (2 * summed - 1);
                cands.push(self.candidate(
                    StepOp::Contract {
                        summed: shared.clone(),
                    },
                    *shared.iter().min().unwrap(),
                    vec![a.min(c), a.max(c)],
                    out_legs,
                    flops,
                ));
            }
        }
        cands
    }

    fn candidate(
        &self,
        op: StepOp,
        var: VarId,
        inputs: Vec<usize>,
        out_legs: Vec<VarId>,
        flops: u64,
    ) -> Candidate {
        let m = self.net.num_modes();
        let n_modes = out_legs.iter().filter(|&&l| l < m).count();
        let n_non_open = out_legs
            .iter()
            .filter(|&&l| l < m && !self.open.contains(&l))
            .count();
        let cap = self.open.len().max(1);
        let excess = n_non_open.saturating_sub(1) + n_modes.saturating_sub(cap);
        let profile: u64 = out_legs
            .iter()
            .filter(|&&l| l >= m)
            .map(|&l| self.net.var_size(l) as u64)
            .product();
        Candidate {
            excess,
            profile,
            flops,
            var,
            op,
            inputs,
            out_legs,
        }
    }

    fn gamma_node(&self, k: usize) -> usize {
        self.net.vertices().len() + k
    }

    /// Split fusion inputs into vectors along the eliminated mode and higher
    /// tensors, each sorted by node id.
    fn split_vectors(&self, inputs: &[usize], v: VarId) -> (Vec<usize>, Vec<usize>) {
        let mut vectors = Vec::new();
        let mut higher = Vec::new();
        for &i in inputs {
            if self.nodes[i].legs == [v] {
                vectors.push(i);
            } else {
                higher.push(i);
            }
        }
        vectors.sort_unstable();
        higher.sort_unstable();
        (vectors, higher)
    }

    fn legs_size(&self, legs: &[VarId]) -> u64 {
        legs.iter().map(|&l| self.net.var_size(l) as u64).product()
    }

    /// Fusion cost: Hadamard the vectors first, then stream the higher
    /// tensors slice by slice along the eliminated mode.
    fn fuse_flops(&self, v: VarId, vectors: &[usize], higher: &[usize], out_legs: &[VarId]) -> u64 {
        let n_v = self.net.var_size(v) as u64;
        let q = vectors.len() as u64;
        let mut cost = (q - 1) * n_v;
        match higher.len() {
            0 => cost += n_v - 1, // sum the weight vector to a scalar
            1 => {
                let out = self.legs_size(out_legs);
                cost += out * (2 * n_v - 1);
            }
            _ => {
                // per index of v: scale the first slice, expand across the
                // remaining slices, accumulate into the output
                let mut union: Vec<VarId> = self.nodes[higher[0]]
                    .legs
                    .iter()
                    .copied()
                    .filter(|&l| l != v)
                    .collect();
                let mut per_v = self.legs_size(&union);
                for &h in &higher[1..] {
                    for &l in &self.nodes[h].legs {
                        if l != v && !union.contains(&l) {
                            union.push(l);
                        }
                    }
                    per_v += self.legs_size(&union);
                }
                per_v += self.legs_size(out_legs); // accumulation adds
                cost += n_v * per_v;
            }
        }
        cost
    }

    fn emit(&mut self, c: Candidate) {
        let mut input_keys: Vec<&str> = c
            .inputs
            .iter()
            .map(|&i| self.nodes[i].key.as_str())
            .collect();
        input_keys.sort_unstable();
        let key = match &c.op {
            StepOp::Fuse { mode } => format!("F{mode}({})", input_keys.join(",")),
            StepOp::Contract { summed } => {
                format!("C{:?}({})", summed, input_keys.join(","))
            }
            StepOp::FinalJoin => unreachable!("final join emitted separately"),
        };
        for &i in &c.inputs {
            self.alive[i] = false;
        }
        let out_node = self.nodes.len();
        self.nodes.push(PlanNode {
            kind: NodeKind::Step(self.steps.len()),
            legs: c.out_legs.clone(),
            key,
        });
        self.alive.push(true);
        self.steps.push(PlanStep {
            op: c.op,
            inputs: c.inputs,
            output: out_node,
            flops: c.flops,
        });
    }

    fn final_join(mut self) -> Result<ContractionPlan> {
        let mut inputs: Vec<usize> = Vec::new();
        for k in &self.open {
            inputs.push(self.gamma_node(*k));
        }
        inputs.extend(self.live_tensors());
        for &i in &inputs {
            debug_assert!(
                self.nodes[i].legs.iter().all(|l| self.open.contains(l)),
                "final join input {:?} still has internal legs",
                self.nodes[i]
            );
        }
        let out_legs = self.open.clone();
        let out_size = self.legs_size(&out_legs);
        let flops = out_size * (inputs.len() as u64 - 1);
        let mut input_keys: Vec<&str> =
            inputs.iter().map(|&i| self.nodes[i].key.as_str()).collect();
        input_keys.sort_unstable();
        let key = format!("J{:?}({})", self.open, input_keys.join(","));
        for &i in &inputs {
            self.alive[i] = false;
        }
        let out_node = self.nodes.len();
        self.nodes.push(PlanNode {
            kind: NodeKind::Step(self.steps.len()),
            legs: out_legs,
            key,
        });
        self.steps.push(PlanStep {
            op: StepOp::FinalJoin,
            inputs,
            output: out_node,
            flops,
        });
        let total_flops = self.steps.iter().map(|s| s.flops).sum();
        Ok(ContractionPlan {
            open_modes: self.open,
            nodes: self.nodes,
            steps: self.steps,
            result: out_node,
            total_flops,
        })
    }
}

fn sorted(legs: &[VarId]) -> Vec<VarId> {
    let mut l = legs.to_vec();
    l.sort_unstable();
    l
}

fn union_minus<'a>(leg_sets: impl Iterator<Item = &'a [VarId]>, minus: &[VarId]) -> Vec<VarId> {
    let mut out: Vec<VarId> = Vec::new();
    for legs in leg_sets {
        for &l in legs {
            if !minus.contains(&l) && !out.contains(&l) {
                out.push(l);
            }
        }
    }
    out.sort_unstable();
    out
}
