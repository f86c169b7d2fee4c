//! Command-line front end: `select` on real data, `simulate` for scenario
//! replicates, `sensitivity` for hyperparameter grids.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use bayes_knockoffs::data::Dataset;
use bayes_knockoffs::diagnostics::geweke_summary;
use bayes_knockoffs::fdr::{compute_w, estimate_two_sided_bound, estimate_upper_bound, select_bfdr};
use bayes_knockoffs::ggm::GgmHyper;
use bayes_knockoffs::io::{
    load_csv, write_metrics_table, write_report, write_sensitivity_table, LoadOptions,
    ReportBundle,
};
use bayes_knockoffs::regression::{
    derive_seed, run_chain, ChainConfig, PosteriorDraws, RegressionHyper, ResponseMode,
};
use bayes_knockoffs::sim::{
    default_sensitivity_grid, scenario3_full, HyperParam, Method, ScenarioId, ScenarioSpec,
};

#[derive(Parser)]
#[command(name = "bkf", version, about = "Bayesian model-X knockoff filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the knockoff filter on a CSV dataset and write a selection report.
    Select(SelectArgs),
    /// Generate scenario replicates, fit the model, and tabulate metrics.
    Simulate(SimulateArgs),
    /// Re-run one scenario over a hyperparameter grid, one value at a time.
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
struct HyperArgs {
    /// Spike variance for absent edges.
    #[arg(long, default_value_t = 1e-4)]
    v0: f64,
    /// Slab variance for present edges.
    #[arg(long, default_value_t = 1e-2)]
    v1: f64,
    /// Exponential rate parameter for precision diagonals.
    #[arg(long, default_value_t = 2.0)]
    theta: f64,
    /// Prior edge inclusion probability.
    #[arg(long, default_value_t = 0.01)]
    xi: f64,
    /// Slab scale of the coefficient prior.
    #[arg(long, default_value_t = 1.0)]
    h_beta: f64,
    /// Inverse-gamma shape for the noise variance.
    #[arg(long, default_value_t = 2.0)]
    a_sigma: f64,
    /// Inverse-gamma rate for the noise variance.
    #[arg(long, default_value_t = 2.0)]
    b_sigma: f64,
    /// Ising sparsity parameter a.
    #[arg(long, default_value_t = 0.5)]
    ising_a: f64,
    /// Ising graph-coupling parameter b.
    #[arg(long, default_value_t = 0.5)]
    ising_b: f64,
    /// Variance of the birth proposal for a new coefficient.
    #[arg(long, default_value_t = 0.5)]
    birth_var: f64,
    /// Standard deviation of the within-model random walk.
    #[arg(long, default_value_t = 0.25)]
    walk_sd: f64,
    /// Slack factor keeping the knockoff A-matrix strictly PD.
    #[arg(long, default_value_t = 1.0 - 1e-6)]
    shrink: f64,
}

impl HyperArgs {
    fn regression(&self) -> RegressionHyper {
        RegressionHyper {
            h_beta: self.h_beta,
            a_sigma: self.a_sigma,
            b_sigma: self.b_sigma,
            a_ising: self.ising_a,
            b_ising: self.ising_b,
            birth_proposal_var: self.birth_var,
            walk_proposal_sd: self.walk_sd,
        }
    }

    fn ggm(&self) -> anyhow::Result<GgmHyper> {
        Ok(GgmHyper::new(self.v0, self.v1, self.theta, self.xi)?)
    }

    fn manifest(&self) -> serde_json::Value {
        json!({
            "v0": self.v0,
            "v1": self.v1,
            "theta": self.theta,
            "xi": self.xi,
            "h_beta": self.h_beta,
            "a_sigma": self.a_sigma,
            "b_sigma": self.b_sigma,
            "ising_a": self.ising_a,
            "ising_b": self.ising_b,
            "birth_proposal_var": self.birth_var,
            "walk_proposal_sd": self.walk_sd,
            "shrink": self.shrink,
        })
    }
}

#[derive(Args)]
struct ChainArgs {
    /// Burn-in iterations per chain.
    #[arg(long, default_value_t = 8000)]
    burn_in: usize,
    /// Kept iterations per chain.
    #[arg(long, default_value_t = 8000)]
    iters: usize,
    /// Independent chains (pooled after burn-in).
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Base RNG seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Target Bayesian FDR level.
    #[arg(long, default_value_t = 0.1)]
    q: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Linear,
    Aft,
}

#[derive(Args)]
struct SelectArgs {
    /// Input CSV (header row, comma separator).
    #[arg(long)]
    input: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    response: String,
    /// Censoring indicator column (1 = event observed, 0 = censored);
    /// required in AFT mode.
    #[arg(long)]
    censoring: Option<String>,
    /// Response model.
    #[arg(long, value_enum, default_value_t = ModeArg::Linear)]
    mode: ModeArg,
    /// Apply the rank-based Gaussianization to the covariates.
    #[arg(long)]
    nonparanormal: bool,
    /// Skip centering of response and covariates.
    #[arg(long)]
    no_center: bool,
    /// In AFT mode the response column holds raw times and is logged at
    /// ingestion; set this when it already holds log times.
    #[arg(long)]
    response_is_log: bool,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory.
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario: 1, 2, 3, or aft.
    #[arg(long)]
    scenario: String,
    /// Independent replicate datasets.
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    /// Sample size per replicate.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Hub count (scenarios 3 and aft).
    #[arg(long, default_value_t = 40)]
    hubs: usize,
    /// Leaves per hub (scenarios 3 and aft).
    #[arg(long, default_value_t = 5)]
    children: usize,
    /// Hubs carrying signal (scenarios 3 and aft).
    #[arg(long, default_value_t = 4)]
    active_hubs: usize,
    /// Expected censored fraction (aft only).
    #[arg(long, default_value_t = 0.25)]
    censor_frac: f64,
    /// Also score the classical exact-covariance knockoff filter.
    #[arg(long)]
    with_baseline: bool,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory.
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args)]
struct SensitivityArgs {
    /// Scenario to re-run per grid point (same choices as simulate).
    #[arg(long, default_value = "2")]
    scenario: String,
    /// Hyperparameter to vary: a, b, v0, or v1. Omit for the full
    /// one-at-a-time default grid.
    #[arg(long)]
    vary: Option<String>,
    /// Comma-separated grid values (requires --vary).
    #[arg(long)]
    values: Option<String>,
    /// Replicates per grid point.
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Sample size per replicate.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory.
    #[arg(long)]
    outdir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Select(args) => run_select(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Sensitivity(args) => run_sensitivity(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn parse_scenario(args_scenario: &str, sim: Option<&SimulateArgs>) -> anyhow::Result<ScenarioId> {
    let (hubs, children, active_hubs, censor_frac) = match sim {
        Some(s) => (s.hubs, s.children, s.active_hubs, s.censor_frac),
        None => (40, 5, 4, 0.25),
    };
    Ok(match args_scenario {
        "1" => ScenarioId::One,
        "2" => ScenarioId::Two,
        "3" => {
            if sim.is_none() {
                scenario3_full()
            } else {
                ScenarioId::Three { hubs, children, active_hubs }
            }
        }
        "aft" => ScenarioId::Aft { hubs, children, active_hubs, censor_frac },
        other => bail!("unknown scenario {other:?}; expected 1, 2, 3, or aft"),
    })
}

fn run_select(args: SelectArgs) -> anyhow::Result<()> {
    let mode = match args.mode {
        ModeArg::Linear => ResponseMode::Linear,
        ModeArg::Aft => ResponseMode::Aft,
    };
    if mode == ResponseMode::Aft && args.censoring.is_none() {
        bail!("AFT mode needs --censoring");
    }
    let options = LoadOptions {
        response: args.response.clone(),
        censoring: args.censoring.clone(),
        center: !args.no_center,
        nonparanormal: args.nonparanormal,
        log_response: mode == ResponseMode::Aft && !args.response_is_log,
    };
    let data = load_csv(&args.input, &options)
        .with_context(|| format!("loading {}", args.input.display()))?;

    let hyper = args.hyper.regression();
    let ggm = args.hyper.ggm()?;
    if args.chain.chains == 0 {
        bail!("need at least one chain");
    }
    let seeds: Vec<u64> = (0..args.chain.chains)
        .map(|c| derive_seed(args.chain.seed, c as u64))
        .collect();
    let chains = run_chains(&data, &hyper, &ggm, &args, mode, &seeds)?;

    let mut chain_diagnostics = Vec::new();
    for (idx, draws) in chains.iter().enumerate() {
        let gz = geweke_summary(draws);
        chain_diagnostics.push((
            idx,
            gz.map(|g| g.mean_z).unwrap_or(f64::NAN),
            gz.map(|g| g.mean_abs_z).unwrap_or(f64::NAN),
            draws.accept_add_delete,
            draws.accept_within_model,
            draws.sigma2_mean(),
        ));
    }
    let pooled = PosteriorDraws::pool(&chains)?;
    let w = compute_w(&pooled.beta, &pooled.beta_tilde)?;
    let bounds = estimate_upper_bound(&w);
    let two_sided = estimate_two_sided_bound(&w);
    let report = select_bfdr(&bounds.bounds, args.chain.q)?;

    let manifest = json!({
        "command": "select",
        "input": args.input.display().to_string(),
        "response": args.response,
        "censoring": args.censoring,
        "mode": match mode { ResponseMode::Linear => "linear", ResponseMode::Aft => "aft" },
        "nonparanormal": args.nonparanormal,
        "center": !args.no_center,
        "response_is_log": args.response_is_log,
        "q": args.chain.q,
        "burn_in": args.chain.burn_in,
        "iters": args.chain.iters,
        "chains": args.chain.chains,
        "seed": args.chain.seed,
        "chain_seeds": seeds,
        "hyperparameters": args.hyper.manifest(),
        "n": data.n(),
        "p": data.p(),
        "bounds_clipped": bounds.clipped,
        "selected": report.selected.iter().map(|j| data.names[*j].clone()).collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
    });

    let bundle = ReportBundle {
        report: &report,
        two_sided: &two_sided,
        w: &w,
        draws: &pooled,
        names: &data.names,
        manifest,
        chain_diagnostics,
    };
    write_report(&args.outdir, &bundle)?;
    println!(
        "selected {} of {} variables at q = {} -> {}",
        report.selected.len(),
        data.p(),
        args.chain.q,
        args.outdir.display()
    );
    Ok(())
}

fn run_chains(
    data: &Dataset,
    hyper: &RegressionHyper,
    ggm: &GgmHyper,
    args: &SelectArgs,
    mode: ResponseMode,
    seeds: &[u64],
) -> anyhow::Result<Vec<PosteriorDraws>> {
    let configs: Vec<ChainConfig> = seeds
        .iter()
        .map(|&seed| ChainConfig {
            burn_in: args.chain.burn_in,
            iters: args.chain.iters,
            seed,
            mode,
            shrink: args.hyper.shrink,
            add_delete_moves: 1,
            knockoffs: true,
        })
        .collect();
    let results: Vec<_> = configs
        .par_iter()
        .map(|cfg| run_chain(data, hyper, ggm, cfg))
        .collect();
    let mut chains = Vec::with_capacity(results.len());
    for r in results {
        chains.push(r?);
    }
    Ok(chains)
}

fn run_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let id = parse_scenario(&args.scenario, Some(&args))?;
    let spec = ScenarioSpec::new(id, args.n, args.chain.seed);
    let mode = match id {
        ScenarioId::Aft { .. } => ResponseMode::Aft,
        _ => ResponseMode::Linear,
    };
    let chain = ChainConfig {
        burn_in: args.chain.burn_in,
        iters: args.chain.iters,
        seed: 0, // reseeded per replicate
        mode,
        shrink: args.hyper.shrink,
        add_delete_moves: 1,
        knockoffs: true,
    };
    let mut methods = vec![Method::Bayes {
        hyper: args.hyper.regression(),
        ggm: args.hyper.ggm()?,
        chain,
        q: args.chain.q,
    }];
    if args.with_baseline {
        methods.push(Method::ClassicalExact { q: args.chain.q });
    }
    let table = bayes_knockoffs::sim::run_replicates(&spec, &methods, args.replicates)?;
    let manifest = json!({
        "command": "simulate",
        "scenario": args.scenario,
        "spec": spec,
        "replicates": args.replicates,
        "with_baseline": args.with_baseline,
        "q": args.chain.q,
        "burn_in": args.chain.burn_in,
        "iters": args.chain.iters,
        "seed": args.chain.seed,
        "hyperparameters": args.hyper.manifest(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_metrics_table(&args.outdir, &table, manifest)?;
    for s in &table.summary {
        println!(
            "{}: FDR {:.3} TPR {:.3} (over {} replicates, {} failures)",
            s.method, s.mean.fdr, s.mean.tpr, s.replicates, s.failures
        );
    }
    println!("table written to {}", args.outdir.display());
    Ok(())
}

fn run_sensitivity(args: SensitivityArgs) -> anyhow::Result<()> {
    let id = parse_scenario(&args.scenario, None)?;
    let spec = ScenarioSpec::new(id, args.n, args.chain.seed);
    let grid: Vec<(HyperParam, f64)> = match (&args.vary, &args.values) {
        (Some(param), Some(values)) => {
            let param = HyperParam::parse(param)?;
            values
                .split(',')
                .map(|v| -> anyhow::Result<(HyperParam, f64)> {
                    Ok((param, v.trim().parse::<f64>().context("bad grid value")?))
                })
                .collect::<anyhow::Result<Vec<_>>>()?
        }
        (None, None) => default_sensitivity_grid(),
        _ => bail!("--vary and --values must be given together"),
    };
    let chain = ChainConfig {
        burn_in: args.chain.burn_in,
        iters: args.chain.iters,
        seed: 0, // reseeded per replicate
        mode: ResponseMode::Linear,
        shrink: args.hyper.shrink,
        add_delete_moves: 1,
        knockoffs: true,
    };
    let rows = bayes_knockoffs::sim::sensitivity_grid(
        &spec,
        &args.hyper.regression(),
        &args.hyper.ggm()?,
        &chain,
        args.chain.q,
        &grid,
        args.replicates,
    )?;
    let manifest = json!({
        "command": "sensitivity",
        "scenario": args.scenario,
        "spec": spec,
        "replicates": args.replicates,
        "q": args.chain.q,
        "burn_in": args.chain.burn_in,
        "iters": args.chain.iters,
        "seed": args.chain.seed,
        "grid": grid.iter().map(|(p, v)| json!({"param": p.label(), "value": v})).collect::<Vec<_>>(),
        "hyperparameters": args.hyper.manifest(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_sensitivity_table(&args.outdir, &rows, manifest)?;
    println!("{} grid rows written to {}", rows.len(), args.outdir.display());
    Ok(())
}
