//! Command-line drivers for the structured multi-marginal transport
//! solver: the chain proof-of-concept sweep, barycenter color transfer,
//! and Schrödinger-bridge marginal evolution.

mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use io::{
    fmt_metric, fmt_opt_metric, load_image, load_mass_grid, normalize_mass, save_image,
    save_marginal, write_csv,
};
use mmot::apps::{
    run_bridge, run_color_transfer, run_poc, BridgeConfig, BridgeGraph, ColorConfig, PocConfig,
};

#[derive(Parser)]
#[command(
    name = "mmot",
    about = "Multi-marginal entropic optimal transport on tensor-network Gibbs kernels",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chain proof of concept: exact vs per-factor SVD vs TT kernels over a
    /// rank sweep; writes one CSV row per rank.
    Poc(PocArgs),
    /// Transfer the color barycenter of three images onto a fourth.
    Color(ColorArgs),
    /// Marginal evolution between two endpoint distributions on a grid.
    Bridge(BridgeArgs),
}

#[derive(Args)]
struct PocArgs {
    /// Points per marginal.
    #[arg(long, default_value_t = 420)]
    n: usize,
    /// Rank sweep: inclusive range `a:b` or comma list `a,b,c`.
    #[arg(long, default_value = "3:50")]
    ranks: String,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long = "eps-stop", default_value_t = 1e-4)]
    eps_stop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-iters", default_value_t = 100_000)]
    max_iters: usize,
    /// Skip the TT branch even when the kernel fits the budget.
    #[arg(long = "no-tt", default_value_t = false)]
    no_tt: bool,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ColorArgs {
    /// The three source images (PNG).
    #[arg(long, num_args = 3, required = true)]
    inputs: Vec<PathBuf>,
    /// The image whose pixels get recolored.
    #[arg(long)]
    target: PathBuf,
    /// Barycenter weights `a,b,c` summing to one.
    #[arg(
        long,
        default_value = "0.3333333333333333,0.3333333333333333,0.3333333333333334"
    )]
    lambda: String,
    #[arg(long, default_value_t = 50)]
    rank: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long = "eps-stop", default_value_t = 1e-4)]
    eps_stop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-iters", default_value_t = 100_000)]
    max_iters: usize,
    /// Also run the dense pipeline and report the sup-norm color error.
    #[arg(long = "compare-full", default_value_t = false)]
    compare_full: bool,
    /// Recolored image output (PNG).
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV path (defaults to the image path with .csv).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct BridgeArgs {
    /// First endpoint distribution (PNG luminance or CSV); synthetic
    /// corner blob when omitted.
    #[arg(long)]
    first: Option<PathBuf>,
    /// Last endpoint distribution; synthetic opposite-corner blob when
    /// omitted.
    #[arg(long)]
    last: Option<PathBuf>,
    #[arg(long, default_value = "chain")]
    graph: String,
    #[arg(long, default_value_t = 10)]
    rank: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long = "grid-side", default_value_t = 8)]
    grid_side: usize,
    #[arg(long = "eps-stop", default_value_t = 1e-4)]
    eps_stop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-iters", default_value_t = 100_000)]
    max_iters: usize,
    /// Output directory for the marginal files and flop report.
    #[arg(long)]
    out: PathBuf,
}

fn parse_ranks(spec: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = spec.split_once(':') {
        let a: usize = a.trim().parse().context("rank range start")?;
        let b: usize = b.trim().parse().context("rank range end")?;
        if a == 0 || b < a {
            bail!("invalid rank range {spec}");
        }
        return Ok((a..=b).collect());
    }
    let ranks = spec
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("rank '{t}'"))
        })
        .collect::<Result<Vec<usize>>>()?;
    if ranks.is_empty() || ranks.contains(&0) {
        bail!("invalid rank list {spec}");
    }
    Ok(ranks)
}

fn parse_lambda(spec: &str) -> Result<[f64; 3]> {
    let parts = spec
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("weight '{t}'"))
        })
        .collect::<Result<Vec<f64>>>()?;
    if parts.len() != 3 {
        bail!("lambda needs exactly three weights, got {}", parts.len());
    }
    let total: f64 = parts.iter().sum();
    if parts.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
        bail!("lambda weights must be non-negative and sum to 1 (got {total})");
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn cmd_poc(args: &PocArgs) -> Result<()> {
    if args.n < 2 {
        bail!("--n must be at least 2");
    }
    let ranks = parse_ranks(&args.ranks)?;
    if ranks.iter().any(|&r| r > args.n) {
        bail!("ranks must not exceed n = {}", args.n);
    }
    let cfg = PocConfig {
        eps_stop: args.eps_stop,
        max_iters: args.max_iters,
        tt: !args.no_tt,
        ..PocConfig::new(args.n, ranks, args.eta, args.seed)
    };
    let report = run_poc(&cfg)?;

    let header = "rank,cost_diff_svds,cost_diff_tt,log_err_svds,log_err_tt,flops_svds,flops_tt,seconds_svds,seconds_tt";
    let mut rows = Vec::new();
    for row in &report.rows {
        let (cd_s, le_s, fl_s, sec_s) = match &row.svds {
            Ok(b) => (
                fmt_metric(b.cost_diff),
                fmt_opt_metric(b.log_error_sampled),
                b.sweep_flops.to_string(),
                fmt_metric(b.seconds),
            ),
            Err(_) => (String::new(), String::new(), String::new(), String::new()),
        };
        let (cd_t, le_t, fl_t, sec_t) = match &row.tt {
            Some(Ok(b)) => (
                fmt_metric(b.cost_diff),
                fmt_opt_metric(b.log_error_sampled),
                b.sweep_flops.to_string(),
                fmt_metric(b.seconds),
            ),
            _ => (String::new(), String::new(), String::new(), String::new()),
        };
        rows.push(vec![
            row.rank.to_string(),
            cd_s,
            cd_t,
            le_s,
            le_t,
            fl_s,
            fl_t,
            sec_s,
            sec_t,
        ]);
        if let Err(e) = &row.svds {
            eprintln!("rank {}: SVD branch failed: {e}", row.rank);
        }
        if let Some(Err(e)) = &row.tt {
            eprintln!("rank {}: TT branch failed: {e}", row.rank);
        }
    }
    write_csv(&args.out, header, &rows)?;
    println!(
        "poc: n={} eta={} reference cost {:.12e} ({} iterations, sweep {} flops, {:.2}s); {} ranks -> {}{}",
        report.n,
        report.eta,
        report.reference_cost,
        report.reference_iterations,
        report.reference_sweep_flops,
        report.reference_seconds,
        report.rows.len(),
        args.out.display(),
        if report.tt_skipped {
            "; TT branch skipped (kernel over the materialization budget)"
        } else {
            ""
        }
    );
    Ok(())
}

fn cmd_color(args: &ColorArgs) -> Result<()> {
    let lambda = parse_lambda(&args.lambda)?;
    let images = [
        load_image(&args.inputs[0])?,
        load_image(&args.inputs[1])?,
        load_image(&args.inputs[2])?,
        load_image(&args.target)?,
    ];
    let cfg = ColorConfig {
        eta: args.eta,
        seed: args.seed,
        eps_stop: args.eps_stop,
        max_iters: args.max_iters,
        compare_full: args.compare_full,
        ..ColorConfig::new(lambda, args.rank)
    };
    let (recolored, report) = run_color_transfer(&images, &cfg)?;
    save_image(&recolored, &args.out)?;

    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));
    let header = "rank,inf_error_vs_full,transfer_sweep_flops,transfer_sweep_flops_full,star_sweep_flops,star_sweep_flops_full,seconds,seconds_full";
    write_csv(
        &metrics_path,
        header,
        &[vec![
            report.rank.to_string(),
            fmt_opt_metric(report.inf_error_vs_full),
            report.transfer_sweep_flops.to_string(),
            report.transfer_sweep_flops_full.to_string(),
            report.star_sweep_flops.to_string(),
            report.star_sweep_flops_full.to_string(),
            fmt_metric(report.seconds),
            fmt_opt_metric(report.seconds_full),
        ]],
    )?;
    println!(
        "color: n={} rank={} -> {} (metrics {}); transfer sweep {} vs dense {} flops{}",
        report.n,
        report.rank,
        args.out.display(),
        metrics_path.display(),
        report.transfer_sweep_flops,
        report.transfer_sweep_flops_full,
        report
            .inf_error_vs_full
            .map(|e| format!("; |x^r - x*|_inf = {e:.3e}"))
            .unwrap_or_default()
    );
    Ok(())
}

/// Normalized Gaussian blob used when no endpoint file is given.
fn default_blob(side: usize, center: (f64, f64)) -> Vec<f64> {
    let h = 1.0 / (side as f64 - 1.0);
    let raw: Vec<f64> = (0..side * side)
        .map(|i| {
            let x = (i / side) as f64 * h - center.0;
            let y = (i % side) as f64 * h - center.1;
            (-(x * x + y * y) / 0.1).exp()
        })
        .collect();
    normalize_mass(&raw)
}

fn cmd_bridge(args: &BridgeArgs) -> Result<()> {
    let graph = match args.graph.as_str() {
        "chain" => BridgeGraph::Chain,
        "window" => BridgeGraph::Window,
        other => bail!("unknown graph '{other}' (expected chain or window)"),
    };
    if args.grid_side < 2 {
        bail!("--grid-side must be at least 2");
    }
    let side = args.grid_side;
    let first = match &args.first {
        Some(p) => load_mass_grid(p, side)?,
        None => default_blob(side, (0.15, 0.15)),
    };
    let last = match &args.last {
        Some(p) => load_mass_grid(p, side)?,
        None => default_blob(side, (0.85, 0.85)),
    };
    let cfg = BridgeConfig {
        rank: args.rank,
        eta: args.eta,
        eps_stop: args.eps_stop,
        max_iters: args.max_iters,
        seed: args.seed,
        ..BridgeConfig::new(side, graph)
    };
    let report = run_bridge(&first, &last, &cfg)?;
    if !report.converged {
        bail!("bridge solve hit the iteration cap ({})", args.max_iters);
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for (k, marginal) in report.marginals.iter().enumerate() {
        save_marginal(marginal, side, &args.out.join(format!("r{}", k + 1)))?;
    }
    let header = "mode,plan_flops";
    let rows: Vec<Vec<String>> = report
        .per_marginal_flops
        .iter()
        .enumerate()
        .map(|(k, &f)| vec![(k + 1).to_string(), f.to_string()])
        .collect();
    write_csv(&args.out.join("flops.csv"), header, &rows)?;
    println!(
        "bridge: side={} graph={} rank={} converged in {} iterations (residual {:.3e}); sweep {} flops -> {}",
        side,
        args.graph,
        args.rank,
        report.iterations,
        report.final_residual,
        report.sweep_flops,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Poc(args) => cmd_poc(args),
        Command::Color(args) => cmd_color(args),
        Command::Bridge(args) => cmd_bridge(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
