//! Multi-marginal Sinkhorn iteration over an abstract marginal oracle.
//!
//! One iteration evaluates the marginals of the currently scaled kernel,
//! checks a stopping rule, picks the next mode by a selection rule, and
//! rescales that mode so its marginal matches the target exactly. Scalings
//! are kept multiplicatively (`gamma = exp(beta)`), so the update is
//! `gamma_k <- gamma_k o r_k o r_k(P)^{-1}` and `beta` stays recoverable as
//! `log gamma`.
//!
//! The oracle abstraction is what the structured solver plugs into: the
//! same iteration runs against a materialized tensor (the desk-scale
//! oracle) or a factor network, dense or low-rank, and produces identical
//! iterates.

use crate::error::{Error, Result};
use crate::network::{
    eval_all_marginals, plan_marginal, ContractionPlan, EvalSession, FactorNetwork, Scalings,
};
use crate::tensor::DenseTensor;

/// Supplies marginals of the scaled kernel.
///
/// Marginals are returned as computed, without a positivity requirement:
/// exact kernels yield strictly positive marginals by construction, while a
/// too-coarse low-rank kernel may not — the consumer validates wherever a
/// marginal feeds a logarithm or a division.
pub trait MarginalOracle {
    fn mode_sizes(&self) -> &[usize];
    fn marginal(&mut self, scalings: &Scalings, k: usize) -> Result<Vec<f64>>;
    fn all_marginals(&mut self, scalings: &Scalings) -> Result<Vec<Vec<f64>>>;
    /// Marginals of a subset of modes (parallel to `modes`), sharing work
    /// where the backend allows it.
    fn marginals_for(&mut self, scalings: &Scalings, modes: &[usize]) -> Result<Vec<Vec<f64>>> {
        modes.iter().map(|&k| self.marginal(scalings, k)).collect()
    }
    /// Cumulative operation count charged by this oracle.
    fn flops(&self) -> u64;
}

/// Brute-force oracle over a materialized kernel tensor.
pub struct DenseOracle {
    kernel: DenseTensor,
    mode_sizes: Vec<usize>,
    flops: u64,
}

impl DenseOracle {
    pub fn new(kernel: DenseTensor) -> Self {
        let mode_sizes = kernel.dims().to_vec();
        Self {
            kernel,
            mode_sizes,
            flops: 0,
        }
    }

    fn scaled(&self, scalings: &Scalings) -> Result<DenseTensor> {
        let mut t = self.kernel.clone();
        for (k, g) in scalings.gammas().iter().enumerate() {
            t.scale_mode(g, k)?;
        }
        Ok(t)
    }
}

impl MarginalOracle for DenseOracle {
    fn mode_sizes(&self) -> &[usize] {
        &self.mode_sizes
    }

    fn marginal(&mut self, scalings: &Scalings, k: usize) -> Result<Vec<f64>> {
        let t = self.scaled(scalings)?;
        self.flops += (self.mode_sizes.len() as u64 + 1) * t.len() as u64;
        t.marginal(k)
    }

    fn all_marginals(&mut self, scalings: &Scalings) -> Result<Vec<Vec<f64>>> {
        let t = self.scaled(scalings)?;
        let m = self.mode_sizes.len() as u64;
        self.flops += 2 * m * t.len() as u64;
        (0..self.mode_sizes.len()).map(|k| t.marginal(k)).collect()
    }

    fn marginals_for(&mut self, scalings: &Scalings, modes: &[usize]) -> Result<Vec<Vec<f64>>> {
        let t = self.scaled(scalings)?;
        self.flops += (modes.len() as u64 + 1) * t.len() as u64;
        modes.iter().map(|&k| t.marginal(k)).collect()
    }

    fn flops(&self) -> u64 {
        self.flops
    }
}

/// Strict positivity required wherever a marginal feeds a log or division.
fn check_positive(v: &[f64], k: usize) -> Result<()> {
    if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::Positivity(format!(
            "marginal of mode {k} has a non-positive entry"
        )));
    }
    Ok(())
}

/// Oracle backed by a factor network; plans are built once and reused, and
/// each iteration shares one evaluation session across all marginals.
pub struct NetworkOracle {
    net: FactorNetwork,
    plans: Vec<ContractionPlan>,
    flops: u64,
}

impl NetworkOracle {
    pub fn new(net: FactorNetwork) -> Result<Self> {
        let plans = (0..net.num_modes())
            .map(|k| plan_marginal(&net, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            net,
            plans,
            flops: 0,
        })
    }

    pub fn network(&self) -> &FactorNetwork {
        &self.net
    }

    /// Cost of one full marginal sweep (distinct steps charged once): the
    /// per-iteration cost of the solver on this network.
    pub fn sweep_flops(&self, scalings: &Scalings) -> Result<u64> {
        Ok(eval_all_marginals(&self.net, scalings)?.1)
    }
}

impl MarginalOracle for NetworkOracle {
    fn mode_sizes(&self) -> &[usize] {
        self.net.mode_sizes()
    }

    fn marginal(&mut self, scalings: &Scalings, k: usize) -> Result<Vec<f64>> {
        let mut session = EvalSession::new(&self.net, scalings)?;
        let out = session.marginal_unchecked(k, &self.plans[k]);
        self.flops += session.flops();
        out
    }

    fn all_marginals(&mut self, scalings: &Scalings) -> Result<Vec<Vec<f64>>> {
        let modes: Vec<usize> = (0..self.net.num_modes()).collect();
        self.marginals_for(scalings, &modes)
    }

    fn marginals_for(&mut self, scalings: &Scalings, modes: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut session = EvalSession::new(&self.net, scalings)?;
        let mut out = Vec::with_capacity(modes.len());
        for &k in modes {
            out.push(session.marginal_unchecked(k, &self.plans[k])?);
        }
        self.flops += session.flops();
        Ok(out)
    }

    fn flops(&self) -> u64 {
        self.flops
    }
}

/// Mode-selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Cyclic,
    /// Argmax of the mass-difference-plus-relative-entropy quantity.
    GreedyDistance,
    /// Argmax of the l1 distance to the line spanned by the target.
    GreedyProjection,
}

/// Stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stopping {
    /// Sum over modes of `||r_k(P) - r_k||_1 <= eps`.
    L1Sum,
    /// Max projection distance `< eps / (2m)`; implies the l1 rule.
    Projection,
}

#[derive(Debug, Clone)]
pub struct SinkhornConfig {
    pub eps_stop: f64,
    pub selection: Selection,
    pub stopping: Stopping,
    /// Modes whose scalings may update; `None` means all of them. Scalings
    /// of the other modes stay pinned at one.
    pub update_set: Option<Vec<usize>>,
    pub max_iters: usize,
    /// Rescale the initial plan to unit total mass before iterating.
    pub normalize_first: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            eps_stop: 1e-4,
            selection: Selection::GreedyProjection,
            stopping: Stopping::Projection,
            update_set: None,
            max_iters: 100_000,
            normalize_first: false,
        }
    }
}

/// Iteration snapshot handed to the selection and stopping rules.
pub struct SinkhornState<'a> {
    pub marginals: &'a [Vec<f64>],
    pub targets: &'a [Option<Vec<f64>>],
    pub update_set: &'a [usize],
}

impl<'a> SinkhornState<'a> {
    fn pairs(&self) -> impl Iterator<Item = (usize, &'a [f64], &'a [f64])> + '_ {
        self.update_set.iter().map(move |&k| {
            (
                k,
                self.marginals[k].as_slice(),
                self.targets[k]
                    .as_deref()
                    .expect("update modes carry targets"),
            )
        })
    }
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Greedy rule: argmax over the update set of
/// `1^T (r_k(P) - r_k) + KL(r_k || r_k(P))`, ties to the lowest mode
/// index. This is the per-mode decrease of the dual objective achieved by
/// updating mode `k`, so it is non-negative and zero exactly on matched
/// modes.
pub fn select_greedy_distance(st: &SinkhornState) -> usize {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (k, marg, target) in st.pairs() {
        let mass: f64 = marg.iter().zip(target).map(|(m, t)| m - t).sum();
        let rel: f64 = marg.iter().zip(target).map(|(m, t)| t * (t / m).ln()).sum();
        let q = mass + rel;
        if q > best.0 {
            best = (q, k);
        }
    }
    best.1
}

/// Distance from `r_k(P)` to the best scalar multiple of the target.
pub fn projection_distance(marg: &[f64], target: &[f64]) -> f64 {
    let dot: f64 = marg.iter().zip(target).map(|(m, t)| m * t).sum();
    let nrm2: f64 = target.iter().map(|t| t * t).sum();
    let c = dot / nrm2;
    marg.iter()
        .zip(target)
        .map(|(m, t)| (m - c * t).abs())
        .sum()
}

/// Greedy rule: argmax over the update set of the projection distance,
/// ties to the lowest mode index.
pub fn select_greedy_projection(st: &SinkhornState) -> usize {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (k, marg, target) in st.pairs() {
        let q = projection_distance(marg, target);
        if q > best.0 {
            best = (q, k);
        }
    }
    best.1
}

/// `sum_k ||r_k(P) - r_k||_1 <= eps` over the update set.
pub fn stopping_l1(st: &SinkhornState, eps: f64) -> bool {
    let total: f64 = st.pairs().map(|(_, m, t)| l1_diff(m, t)).sum();
    total <= eps
}

/// `max_k ||r_k(P) - proj r_k||_1 < eps / (2m)`; satisfying this implies
/// the l1 criterion with the same `eps`.
pub fn stopping_projection(st: &SinkhornState, eps: f64, m: usize) -> bool {
    let worst = st
        .pairs()
        .map(|(_, marg, t)| projection_distance(marg, t))
        .fold(0.0f64, f64::max);
    worst < eps / (2.0 * m as f64)
}

/// Iteration bound for the greedy-distance rule with the l1 stopping
/// criterion: `2 + 2 m^2 eps^{-1} (eta^{-1} ||C||_inf - log min r)`.
///
/// The underlying guarantee assumes `0 < eta < 1/2`; the value is computed
/// for any positive `eta` regardless.
pub fn iteration_bound_a(
    c_inf: f64,
    targets: &[Vec<f64>],
    eta: f64,
    eps_stop: f64,
    m: usize,
) -> Result<f64> {
    if !(eta > 0.0) || !(eps_stop > 0.0) {
        return Err(Error::InvalidArgument(
            "eta and eps_stop must be positive".into(),
        ));
    }
    let mut min_r = f64::INFINITY;
    for t in targets {
        for &x in t {
            if !(x > 0.0) {
                return Err(Error::InvalidArgument(
                    "target entries must be strictly positive".into(),
                ));
            }
            min_r = min_r.min(x);
        }
    }
    Ok(2.0 + 2.0 * (m * m) as f64 / eps_stop * (c_inf / eta - min_r.ln()))
}

/// Iteration bound for the greedy-projection rule with the projection
/// stopping criterion, equal mode sizes `n`:
/// `8 m^2 (sqrt(n)+1)^2 eps^{-2} log(eta^{-1} ||exp(-C/eta)||_1)`.
pub fn iteration_bound_b(n: usize, m: usize, eta: f64, eps_stop: f64, k_l1: f64) -> Result<f64> {
    if !(eta > 0.0) || !(eps_stop > 0.0) || !(k_l1 > 0.0) {
        return Err(Error::InvalidArgument(
            "eta, eps_stop and the kernel mass must be positive".into(),
        ));
    }
    let sqn = (n as f64).sqrt();
    Ok(
        8.0 * (m * m) as f64 * (sqn + 1.0) * (sqn + 1.0) / (eps_stop * eps_stop)
            * (k_l1 / eta).ln(),
    )
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub scalings: Scalings,
    pub iterations: usize,
    /// `sum_k ||r_k(P^t) - r_k||_1` over the update set, one entry per
    /// visited iterate including the final one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub selected_indices: Vec<usize>,
    /// Marginals of the final iterate.
    pub final_marginals: Vec<Vec<f64>>,
}

impl SinkhornResult {
    /// Per-iteration records `(t, k_next, residual)` for progress logs; the
    /// final iterate has no selection.
    pub fn iteration_records(&self) -> impl Iterator<Item = (usize, Option<usize>, f64)> + '_ {
        self.residual_history
            .iter()
            .enumerate()
            .map(|(t, &res)| (t, self.selected_indices.get(t).copied(), res))
    }
}

/// Run the scaling iteration until the configured stopping rule fires or
/// `max_iters` is exhausted (flagged, not an error).
///
/// `targets[k]` must be a strictly positive probability vector for every
/// mode in the update set; other modes may be `None` and keep unit scaling.
pub fn solve(
    oracle: &mut dyn MarginalOracle,
    targets: &[Option<Vec<f64>>],
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    let m = oracle.mode_sizes().len();
    if targets.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} modes",
            targets.len(),
            m
        )));
    }
    let update_set: Vec<usize> = match &cfg.update_set {
        None => (0..m).collect(),
        Some(s) => {
            let mut s = s.clone();
            s.sort_unstable();
            s.dedup();
            if s.is_empty() || *s.last().unwrap() >= m {
                return Err(Error::InvalidArgument("invalid update set".into()));
            }
            s
        }
    };
    for &k in &update_set {
        let t = targets[k].as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("mode {k} is updatable but has no target"))
        })?;
        if t.len() != oracle.mode_sizes()[k] {
            return Err(Error::DimensionMismatch(format!(
                "target for mode {k} has length {}",
                t.len()
            )));
        }
        if t.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "target for mode {k} must be strictly positive"
            )));
        }
        let total: f64 = t.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "target for mode {k} sums to {total}, expected 1"
            )));
        }
    }
    if !(cfg.eps_stop > 0.0) {
        return Err(Error::InvalidArgument("eps_stop must be positive".into()));
    }

    let mut scalings = Scalings::ones(oracle.mode_sizes());
    for k in 0..m {
        if !update_set.contains(&k) {
            scalings.pin(k);
        }
    }

    if cfg.normalize_first {
        let first = update_set[0];
        let r0 = oracle.marginal(&scalings, first)?;
        check_positive(&r0, first)?;
        let mass: f64 = r0.iter().sum();
        let g: Vec<f64> = scalings.gamma(first).iter().map(|&x| x / mass).collect();
        scalings.set_gamma(first, g)?;
    }

    let mut residual_history = Vec::new();
    let mut selected = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let full_update = update_set.len() == m;
    let mut marginals: Vec<Vec<f64>> = vec![Vec::new(); m];

    for t in 0..=cfg.max_iters {
        // only the updatable modes' marginals drive the iteration
        let upd_marginals = oracle.marginals_for(&scalings, &update_set)?;
        for (&k, marg) in update_set.iter().zip(&upd_marginals) {
            check_positive(marg, k)?;
        }
        for (&k, marg) in update_set.iter().zip(upd_marginals) {
            marginals[k] = marg;
        }
        let state = SinkhornState {
            marginals: &marginals,
            targets,
            update_set: &update_set,
        };
        let residual: f64 = state.pairs().map(|(_, a, b)| l1_diff(a, b)).sum();
        residual_history.push(residual);
        let stop = match cfg.stopping {
            Stopping::L1Sum => stopping_l1(&state, cfg.eps_stop),
            Stopping::Projection => stopping_projection(&state, cfg.eps_stop, m),
        };
        if stop {
            converged = true;
            iterations = t;
            break;
        }
        if t == cfg.max_iters {
            iterations = t;
            break;
        }
        let k = match cfg.selection {
            Selection::Cyclic => update_set[t % update_set.len()],
            Selection::GreedyDistance => select_greedy_distance(&state),
            Selection::GreedyProjection => select_greedy_projection(&state),
        };
        let ratio: Vec<f64> = targets[k]
            .as_ref()
            .expect("update mode has target")
            .iter()
            .zip(&marginals[k])
            .map(|(r, p)| r / p)
            .collect();
        scalings.scale_gamma(k, &ratio)?;
        selected.push(k);
    }

    // pinned modes' marginals are reporting-only, evaluated once at the end
    let final_marginals = if full_update {
        marginals
    } else {
        oracle.all_marginals(&scalings)?
    };

    Ok(SinkhornResult {
        scalings,
        iterations,
        residual_history,
        converged,
        selected_indices: selected,
        final_marginals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IndexTuple, KernelFactor, KernelModel};
    use crate::test_util::{
        assert_close, assert_vec_close, random_simplex, seeded_rng, uniform_tensor,
    };
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

    fn some_targets(rng: &mut impl Rng, sizes: &[usize]) -> Vec<Option<Vec<f64>>> {
        sizes
            .iter()
            .map(|&n| Some(random_simplex(rng, n)))
            .collect()
    }

    #[test]
    fn uniform_kernel_converges_immediately() {
        let kernel = DenseTensor::filled(vec![3, 3], 1.0 / 9.0);
        let mut oracle = DenseOracle::new(kernel);
        let targets = vec![Some(vec![1.0 / 3.0; 3]), Some(vec![1.0 / 3.0; 3])];
        let cfg = SinkhornConfig {
            eps_stop: 1e-10,
            stopping: Stopping::L1Sum,
            ..Default::default()
        };
        let res = solve(&mut oracle, &targets, &cfg).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.residual_history.len(), 1);
        for k in 0..2 {
            assert_vec_close(&res.scalings.beta(k), &[0.0; 3], 1e-14);
        }
    }

    #[test]
    fn two_marginal_matches_classical_sinkhorn() {
        // classical u/v iteration run to near machine precision
        let k = DenseTensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        let a = [0.5, 0.5];
        let b = [0.5, 0.5];
        let mut u = [1.0, 1.0];
        let mut v = [1.0, 1.0];
        for _ in 0..2000 {
            for i in 0..2 {
                let s: f64 = (0..2).map(|j| k.get(&[i, j]) * v[j]).sum();
                u[i] = a[i] / s;
            }
            for j in 0..2 {
                let s: f64 = (0..2).map(|i| k.get(&[i, j]) * u[i]).sum();
                v[j] = b[j] / s;
            }
        }
        let mut oracle = DenseOracle::new(k.clone());
        let targets = vec![Some(a.to_vec()), Some(b.to_vec())];
        // the projection score stays meaningful down to machine precision,
        // unlike the entropic score which is quadratic in the violation
        let cfg = SinkhornConfig {
            eps_stop: 1e-12,
            selection: Selection::GreedyProjection,
            stopping: Stopping::Projection,
            max_iters: 20_000,
            ..Default::default()
        };
        let res = solve(&mut oracle, &targets, &cfg).unwrap();
        assert!(res.converged);
        for i in 0..2 {
            for j in 0..2 {
                let want = u[i] * k.get(&[i, j]) * v[j];
                let got = res.scalings.gamma(0)[i] * k.get(&[i, j]) * res.scalings.gamma(1)[j];
                assert_close(got, want, 1e-8);
            }
        }
    }

    #[test]
    fn update_matches_selected_marginal_exactly() {
        let mut rng = seeded_rng(80);
        let kernel = chain_kernel(&mut rng, &[4, 4, 4, 4]);
        let mut oracle = DenseOracle::new(kernel.assemble_dense().unwrap());
        let targets = some_targets(&mut rng, &[4, 4, 4, 4]);
        let mut scalings = Scalings::ones(&[4, 4, 4, 4]);
        let margs = oracle.all_marginals(&scalings).unwrap();
        let k = 2;
        let ratio: Vec<f64> = targets[k]
            .as_ref()
            .unwrap()
            .iter()
            .zip(&margs[k])
            .map(|(r, p)| r / p)
            .collect();
        scalings.scale_gamma(k, &ratio).unwrap();
        let after = oracle.marginal(&scalings, k).unwrap();
        assert_vec_close(&after, targets[k].as_ref().unwrap(), 1e-12);
    }

    #[test]
    fn greedy_distance_picks_single_violator_and_breaks_ties_low() {
        let marginals = vec![vec![0.5, 0.5], vec![0.8, 0.2]];
        let targets = vec![Some(vec![0.5, 0.5]), Some(vec![0.5, 0.5])];
        let upd = [0usize, 1];
        let st = SinkhornState {
            marginals: &marginals,
            targets: &targets,
            update_set: &upd,
        };
        assert_eq!(select_greedy_distance(&st), 1);

        let matched = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let st = SinkhornState {
            marginals: &matched,
            targets: &targets,
            update_set: &upd,
        };
        assert_eq!(select_greedy_distance(&st), 0);
    }

    #[test]
    fn greedy_rules_match_direct_formula_evaluation() {
        let mut rng = seeded_rng(81);
        for _ in 0..50 {
            let m = rng.gen_range(2..5usize);
            let sizes: Vec<usize> = (0..m).map(|_| rng.gen_range(2..5)).collect();
            let marginals: Vec<Vec<f64>> = sizes
                .iter()
                .map(|&n| (0..n).map(|_| rng.gen_range(0.1..2.0)).collect())
                .collect();
            let targets: Vec<Option<Vec<f64>>> = sizes
                .iter()
                .map(|&n| Some(random_simplex(&mut rng, n)))
                .collect();
            let upd: Vec<usize> = (0..m).collect();
            let st = SinkhornState {
                marginals: &marginals,
                targets: &targets,
                update_set: &upd,
            };

            let dist_scores: Vec<f64> = (0..m)
                .map(|k| {
                    let t = targets[k].as_ref().unwrap();
                    let mass: f64 = marginals[k].iter().zip(t).map(|(a, b)| a - b).sum();
                    let kl: f64 = marginals[k]
                        .iter()
                        .zip(t)
                        .map(|(a, b)| b * (b / a).ln())
                        .sum();
                    mass + kl
                })
                .collect();
            let want = dist_scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            assert_eq!(select_greedy_distance(&st), want);

            let proj_scores: Vec<f64> = (0..m)
                .map(|k| projection_distance(&marginals[k], targets[k].as_ref().unwrap()))
                .collect();
            let want = proj_scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            assert_eq!(select_greedy_projection(&st), want);
        }
    }

    #[test]
    fn projection_score_ignores_scalar_multiples() {
        let target = vec![0.25, 0.75];
        let marg: Vec<f64> = target.iter().map(|&t| 3.7 * t).collect();
        assert!(projection_distance(&marg, &target) < 1e-12);
    }

    #[test]
    fn stopping_rules_edge_cases() {
        let marginals = vec![vec![0.5, 0.5], vec![0.6, 0.4]];
        let targets = vec![Some(vec![0.5, 0.5]), Some(vec![0.5, 0.5])];
        let upd = [0usize, 1];
        let st = SinkhornState {
            marginals: &marginals,
            targets: &targets,
            update_set: &upd,
        };
        // one marginal off by 0.1 in each of two entries: l1 total 0.2
        assert!(stopping_l1(&st, 0.2 + 1e-12));
        assert!(!stopping_l1(&st, 0.2 - 1e-12));
        assert!(!stopping_l1(&st, 0.0));

        let exact = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let st = SinkhornState {
            marginals: &exact,
            targets: &targets,
            update_set: &upd,
        };
        assert!(stopping_l1(&st, 1e-300));
        assert!(stopping_projection(&st, 1e-10, 2));
    }

    #[test]
    fn projection_stop_implies_l1_stop() {
        let mut rng = seeded_rng(82);
        for _ in 0..50 {
            let kernel = chain_kernel(&mut rng, &[3, 3, 3]);
            let mut oracle = DenseOracle::new(kernel.assemble_dense().unwrap());
            let targets = some_targets(&mut rng, &[3, 3, 3]);
            let eps = 10f64.powf(rng.gen_range(-6.0..-2.0));
            let cfg = SinkhornConfig {
                eps_stop: eps,
                selection: Selection::GreedyProjection,
                stopping: Stopping::Projection,
                normalize_first: true,
                ..Default::default()
            };
            let res = solve(&mut oracle, &targets, &cfg).unwrap();
            assert!(res.converged);
            let upd = [0usize, 1, 2];
            let st = SinkhornState {
                marginals: &res.final_marginals,
                targets: &targets,
                update_set: &upd,
            };
            assert!(
                stopping_l1(&st, eps),
                "projection stop at eps={eps} does not imply the l1 stop"
            );
        }
    }

    #[test]
    fn pinned_modes_keep_unit_scaling() {
        let mut rng = seeded_rng(83);
        let kernel = chain_kernel(&mut rng, &[3, 3, 3, 3]);
        let mut oracle = DenseOracle::new(kernel.assemble_dense().unwrap());
        let mut targets = some_targets(&mut rng, &[3, 3, 3, 3]);
        targets[1] = None;
        targets[2] = None;
        let cfg = SinkhornConfig {
            eps_stop: 1e-8,
            update_set: Some(vec![0, 3]),
            stopping: Stopping::Projection,
            ..Default::default()
        };
        let res = solve(&mut oracle, &targets, &cfg).unwrap();
        assert!(res.converged);
        assert_vec_close(res.scalings.gamma(1), &[1.0; 3], 0.0);
        assert_vec_close(res.scalings.gamma(2), &[1.0; 3], 0.0);
        for &k in &res.selected_indices {
            assert!(k == 0 || k == 3);
        }
        for k in [0usize, 3] {
            let diff: f64 = res.final_marginals[k]
                .iter()
                .zip(targets[k].as_ref().unwrap())
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(diff <= 1e-8);
        }
    }

    #[test]
    fn dense_structured_and_low_rank_oracles_agree() {
        use crate::lowrank::{lowrank_kernel_factor, SvdMethod};
        use crate::tensor::Mat;
        let mut rng = seeded_rng(84);
        let kernel = chain_kernel(&mut rng, &[4, 4, 4, 4]);
        let mut dense = DenseOracle::new(kernel.assemble_dense().unwrap());
        let mut net = NetworkOracle::new(FactorNetwork::build(&kernel)).unwrap();
        // full-rank compression: same kernel up to rounding
        let lr_factors = kernel
            .factors()
            .iter()
            .map(|f| {
                let m = Mat::from_tensor(&f.to_dense().unwrap()).unwrap();
                lowrank_kernel_factor(f.alpha.clone(), &m, 4, SvdMethod::Exact).unwrap()
            })
            .collect();
        let lr_kernel = KernelModel::new(vec![4; 4], lr_factors, 1.0).unwrap();
        let mut lowrank = NetworkOracle::new(FactorNetwork::build(&lr_kernel)).unwrap();

        let targets = some_targets(&mut rng, &[4, 4, 4, 4]);
        let cfg = SinkhornConfig {
            eps_stop: 1e-6,
            selection: Selection::GreedyProjection,
            stopping: Stopping::Projection,
            ..Default::default()
        };
        let a = solve(&mut dense, &targets, &cfg).unwrap();
        let b = solve(&mut net, &targets, &cfg).unwrap();
        let c = solve(&mut lowrank, &targets, &cfg).unwrap();
        assert_eq!(a.selected_indices, b.selected_indices);
        assert_eq!(a.selected_indices, c.selected_indices);
        assert_eq!(a.iterations, b.iterations);
        for k in 0..4 {
            assert_vec_close(&a.scalings.beta(k), &b.scalings.beta(k), 1e-10);
            assert_vec_close(&a.scalings.beta(k), &c.scalings.beta(k), 1e-10);
        }
    }

    #[test]
    fn nonconvergence_is_flagged_not_fatal() {
        let mut rng = seeded_rng(85);
        let kernel = chain_kernel(&mut rng, &[3, 3, 3]);
        let mut oracle = DenseOracle::new(kernel.assemble_dense().unwrap());
        let targets = some_targets(&mut rng, &[3, 3, 3]);
        let cfg = SinkhornConfig {
            eps_stop: 1e-14,
            max_iters: 3,
            stopping: Stopping::L1Sum,
            ..Default::default()
        };
        let res = solve(&mut oracle, &targets, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);
        assert_eq!(res.residual_history.len(), 4);
    }

    #[test]
    fn bound_a_direct_value() {
        // m=2, ||C||_inf = 0, uniform n=2 targets, eta=1/4, eps=1
        let targets = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let b = iteration_bound_a(0.0, &targets, 0.25, 1.0, 2).unwrap();
        assert_close(b, 2.0 + 8.0 * 2.0f64.ln(), 1e-12);
    }

    #[test]
    fn bound_a_monotonicity() {
        let targets = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let base = iteration_bound_a(1.0, &targets, 0.25, 0.1, 2).unwrap();
        let looser = iteration_bound_a(1.0, &targets, 0.25, 0.2, 2).unwrap();
        let costlier = iteration_bound_a(2.0, &targets, 0.25, 0.1, 2).unwrap();
        assert!(looser < base);
        assert!(costlier > base);
    }

    #[test]
    fn bound_b_direct_value_and_eps_scaling() {
        let b = iteration_bound_b(4, 2, 0.25, 1.0, 1.0).unwrap();
        assert_close(b, 8.0 * 4.0 * 9.0 * 4.0f64.ln(), 1e-12);
        let half = iteration_bound_b(4, 2, 0.25, 2.0, 1.0).unwrap();
        assert_close(half, b / 4.0, 1e-12);
    }

    #[test]
    fn observed_iterations_within_bound_a() {
        let mut rng = seeded_rng(86);
        for _ in 0..10 {
            let n = rng.gen_range(2..4usize);
            let kernel = chain_kernel(&mut rng, &[n, n, n]);
            // interpret the kernel as exp(-C/eta): recover C_inf for the bound
            let eta = rng.gen_range(0.1..0.45);
            let dense = kernel.assemble_dense().unwrap();
            let c_inf = dense
                .values()
                .iter()
                .map(|&v| -eta * v.ln())
                .fold(0.0f64, f64::max);
            let targets = some_targets(&mut rng, &[n, n, n]);
            let eps = 0.05;
            let mut oracle = DenseOracle::new(dense);
            let cfg = SinkhornConfig {
                eps_stop: eps,
                selection: Selection::GreedyDistance,
                stopping: Stopping::L1Sum,
                ..Default::default()
            };
            let res = solve(&mut oracle, &targets, &cfg).unwrap();
            assert!(res.converged);
            let plain: Vec<Vec<f64>> = targets.iter().map(|t| t.clone().unwrap()).collect();
            let bound = iteration_bound_a(c_inf, &plain, eta, eps, 3).unwrap();
            assert!(
                (res.iterations as f64) <= bound,
                "observed {} > bound {bound}",
                res.iterations
            );
        }
    }
}
