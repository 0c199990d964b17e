//! Chain proof of concept: four random planar point sets, squared-distance
//! chain cost, uniform targets. The exact structured kernel is the
//! reference; per-factor truncated SVDs and a whole-kernel TT-SVD are the
//! two approximations under comparison, swept over ranks.

use std::time::Instant;

use super::uniform_simplex;
use crate::error::{Error, Result};
use crate::lowrank::{
    full_svd, log_error, lowrank_factor_from_svd, tt_svd, LogErrorMode, SvdResult,
};
use crate::model::{sqdist_cost, CostFactor, CostModel, IndexTuple, KernelModel};
use crate::network::{all_marginals_flops, eval_cost, FactorNetwork};
use crate::rounding::round_structured;
use crate::sinkhorn::{solve, MarginalOracle, NetworkOracle, SinkhornConfig};
use crate::tensor::Mat;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct PocConfig {
    /// Points per mode.
    pub n: usize,
    /// Ranks to sweep.
    pub ranks: Vec<usize>,
    pub eta: f64,
    pub seed: u64,
    pub eps_stop: f64,
    pub max_iters: usize,
    /// Attempt the TT branch (requires materializing the kernel, so it is
    /// skipped above the budget regardless).
    pub tt: bool,
    /// Sample count for the log-error estimate.
    pub log_error_samples: usize,
}

impl PocConfig {
    pub fn new(n: usize, ranks: Vec<usize>, eta: f64, seed: u64) -> Self {
        Self {
            n,
            ranks,
            eta,
            seed,
            eps_stop: 1e-4,
            max_iters: 100_000,
            tt: true,
            log_error_samples: 1000,
        }
    }
}

/// Outcome of one approximate-kernel run at one rank.
#[derive(Debug, Clone)]
pub struct BranchReport {
    /// `|<C, P_approx> - <C, P_ref>|`.
    pub cost_diff: f64,
    /// Sampled estimate of `||log K - log K~||_inf`, when the approximate
    /// kernel was positive at every sampled index.
    pub log_error_sampled: Option<f64>,
    /// Cost of one all-marginals sweep on this network.
    pub sweep_flops: u64,
    /// Total marginal-evaluation work of the solve.
    pub solver_flops: u64,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PocRankRow {
    pub rank: usize,
    pub svds: std::result::Result<BranchReport, String>,
    pub tt: Option<std::result::Result<BranchReport, String>>,
}

#[derive(Debug, Clone)]
pub struct PocReport {
    pub n: usize,
    pub eta: f64,
    pub reference_cost: f64,
    pub reference_sweep_flops: u64,
    pub reference_iterations: usize,
    pub reference_seconds: f64,
    /// True when the TT branch was skipped because materializing the kernel
    /// would exceed the budget.
    pub tt_skipped: bool,
    pub rows: Vec<PocRankRow>,
}

/// Chain cost model from four seeded point sets uniform on the unit square.
pub fn chain_cost_model(n: usize, seed: u64) -> Result<CostModel> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two points per mode".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Mat> = (0..4)
        .map(|_| Mat::from_fn(n, 2, |_, _| rng.gen_range(0.0..1.0)))
        .collect();
    let factors = (0..3)
        .map(|k| {
            Ok(CostFactor {
                alpha: IndexTuple::pair(k, k + 1),
                values: sqdist_cost(&points[k], &points[k + 1])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CostModel::new(vec![n; 4], factors)
}

fn solve_and_cost(
    kernel_net: FactorNetwork,
    cost: &CostModel,
    targets: &[Option<Vec<f64>>],
    plain_targets: &[Vec<f64>],
    cfg: &PocConfig,
) -> Result<(f64, BranchReport)> {
    let start = Instant::now();
    let sweep_flops = all_marginals_flops(&kernel_net)?;
    let mut oracle = NetworkOracle::new(kernel_net)?;
    let sinkhorn_cfg = SinkhornConfig {
        eps_stop: cfg.eps_stop,
        max_iters: cfg.max_iters,
        ..Default::default()
    };
    let run = solve(&mut oracle, targets, &sinkhorn_cfg)?;
    if !run.converged {
        return Err(Error::InvalidArgument(format!(
            "solver hit the iteration cap ({})",
            cfg.max_iters
        )));
    }
    let (scalings, correction) = round_structured(&mut oracle, &run.scalings, plain_targets)?;
    let value = eval_cost(oracle.network(), &scalings, cost, Some(&correction))?;
    Ok((
        value,
        BranchReport {
            cost_diff: 0.0, // filled by the caller against the reference
            log_error_sampled: None,
            sweep_flops,
            solver_flops: oracle.flops(),
            iterations: run.iterations,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Run the proof-of-concept comparison. The reference plan always comes
/// from the exact structured kernel; each rank then gets a per-factor SVD
/// branch and (budget permitting) a TT branch.
pub fn run_poc(cfg: &PocConfig) -> Result<PocReport> {
    let cost = chain_cost_model(cfg.n, cfg.seed)?;
    let kernel = cost.gibbs_factors(cfg.eta)?;
    let n = cfg.n;
    let targets: Vec<Option<Vec<f64>>> = (0..4).map(|_| Some(uniform_simplex(n))).collect();
    let plain: Vec<Vec<f64>> = (0..4).map(|_| uniform_simplex(n)).collect();

    let ref_start = Instant::now();
    let (reference_cost, ref_report) =
        solve_and_cost(FactorNetwork::build(&kernel), &cost, &targets, &plain, cfg)?;
    let reference_seconds = ref_start.elapsed().as_secs_f64();

    // full SVDs once per factor; rank rows reuse the truncations
    let factor_mats: Vec<Mat> = kernel
        .factors()
        .iter()
        .map(|f| Mat::from_tensor(&f.to_dense()?))
        .collect::<Result<Vec<_>>>()?;
    let factor_svds: Vec<SvdResult> = factor_mats
        .iter()
        .map(full_svd)
        .collect::<Result<Vec<_>>>()?;

    // TT branch needs the materialized kernel
    let tt_dense = if cfg.tt {
        match kernel.assemble_dense() {
            Ok(d) => Some(d),
            Err(Error::BudgetExceeded { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let tt_skipped = cfg.tt && tt_dense.is_none();

    let mut rows = Vec::with_capacity(cfg.ranks.len());
    for &rank in &cfg.ranks {
        // per-factor truncated SVD kernel
        let svds = (|| -> Result<BranchReport> {
            let factors = kernel
                .factors()
                .iter()
                .zip(&factor_svds)
                .map(|(f, svd)| lowrank_factor_from_svd(f.alpha.clone(), svd, rank))
                .collect::<Result<Vec<_>>>()?;
            let approx = KernelModel::new(vec![n; 4], factors, cfg.eta)?;
            let (value, mut report) =
                solve_and_cost(FactorNetwork::build(&approx), &cost, &targets, &plain, cfg)?;
            report.cost_diff = (value - reference_cost).abs();
            report.log_error_sampled = log_error(
                &kernel,
                &approx,
                LogErrorMode::Sampled {
                    count: cfg.log_error_samples,
                    seed: cfg.seed ^ 0x5eed,
                },
            )
            .ok();
            Ok(report)
        })()
        .map_err(|e| e.to_string());

        // TT kernel at bond ranks (r, r, r)
        let tt = tt_dense.as_ref().map(|dense| {
            (|| -> Result<BranchReport> {
                let cores = tt_svd(dense, &[rank, rank, rank])?;
                let net = FactorNetwork::from_tt(&cores)?;
                let (value, mut report) = solve_and_cost(net, &cost, &targets, &plain, cfg)?;
                report.cost_diff = (value - reference_cost).abs();
                report.log_error_sampled =
                    sampled_tt_log_error(&kernel, &cores, cfg.log_error_samples, cfg.seed ^ 0x77);
                Ok(report)
            })()
            .map_err(|e| e.to_string())
        });

        rows.push(PocRankRow { rank, svds, tt });
    }

    Ok(PocReport {
        n,
        eta: cfg.eta,
        reference_cost,
        reference_sweep_flops: ref_report.sweep_flops,
        reference_iterations: ref_report.iterations,
        reference_seconds,
        tt_skipped,
        rows,
    })
}

/// Sampled `||log K - log K_TT||_inf`; `None` when a sampled TT entry is
/// non-positive (rank too small for a log to exist there).
fn sampled_tt_log_error(
    kernel: &KernelModel,
    cores: &crate::lowrank::TTCores,
    count: usize,
    seed: u64,
) -> Option<f64> {
    let sizes = kernel.mode_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut idx = vec![0usize; sizes.len()];
    for _ in 0..count {
        for (ax, &n) in sizes.iter().enumerate() {
            idx[ax] = rng.gen_range(0..n);
        }
        let exact = kernel.entry(&idx);
        let approx = cores.entry(&idx);
        if !(approx > 0.0) {
            return None;
        }
        worst = worst.max((exact.ln() - approx.ln()).abs());
    }
    Some(worst)
}
