use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use liquid_welfare::config::{DEFAULT_ETA, ETA_ENV_VAR};
use liquid_welfare::constructions::{
    budget_gap, convex_lower_bound, covering_deviation, known_budget_lower_bound, overbidding,
    private_budget_lower_bound, vcg_lower_bound, verify_covering_deviation, DeviationBranch,
};
use liquid_welfare::equilibrium::{Game, SearchMode};
use liquid_welfare::experiment::{
    default_sweep, run_experiment, run_sweep, write_csv, ExperimentConfig, ExperimentOutcome, InstanceSource,
    SweepConfig,
};
use liquid_welfare::io::{instance_to_json, load_instance_with_tolerance};
use liquid_welfare::vcg::VcgStrategySpace;
use liquid_welfare::{BidMatrix, Bundle, Instance, MechanismSelector};

#[derive(Parser)]
#[command(name = "lwa", version, about = "Liquid welfare of budget-constrained multi-item auctions")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Absolute tolerance for value comparisons.
    #[arg(long, global = true, env = ETA_ENV_VAR, default_value_t = DEFAULT_ETA)]
    eta: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Structured,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated instance document.
    Gen {
        #[command(subcommand)]
        generator: Generator,
    },
    /// Search for grid equilibria of one instance.
    Solve(SolveArgs),
    /// Print the welfare-ratio CSV row of one instance.
    Lpoa(LpoaArgs),
    /// Check the covering deviation on random opponent bids.
    #[command(name = "verify-lemma1")]
    VerifyDeviation(VerifyArgs),
    /// Run a batch of experiments; exits 1 if any bound check fails.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum Generator {
    /// One item, values (lambda, 2), budgets (1, 2).
    Example1 {
        #[arg(long)]
        lambda: f64,
    },
    /// One item, values and budgets (10, 0.01).
    Example2,
    /// Two items, values ((1,1),(0,1)), budgets (1, 1-eps).
    Thm3 {
        #[arg(long)]
        eps: f64,
    },
    /// Symmetric additive instance with unbounded budgets, m >= 2n.
    Thm4 {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        /// Item values, comma separated; unit weights if omitted.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Two items, values ((1,1-alpha),(0,1)), budgets (1, 1-eps).
    Vcg {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        eps: f64,
    },
    /// Two players sharing an additive valuation, budgets equal to its total.
    KnownBudget {
        #[arg(long)]
        m: usize,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct SearchArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// sfpa, sspa, vcg or convex:w1,...,wn
    #[arg(long)]
    mechanism: String,
    #[arg(long)]
    grid_step: f64,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    max_bid: Option<f64>,
    #[arg(long, default_value = "exhaustive")]
    mode: SearchMode,
    /// Allow bids above min{value, budget}.
    #[arg(long)]
    no_conservative: bool,
    #[arg(long, default_value = "structured")]
    vcg_space: VcgStrategySpace,
    #[arg(long, default_value_t = 1000)]
    max_rounds: usize,
}

#[derive(Args)]
struct LpoaArgs {
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long)]
    player: usize,
    /// Bundle as a bit mask over items.
    #[arg(long)]
    bundle: u32,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value = "sfpa")]
    mechanism: String,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep document; the built-in reproduction sweep if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random instances added to the built-in sweep.
    #[arg(long, default_value_t = 10)]
    random: usize,
    /// Directory for counterexample files.
    #[arg(long, default_value = "counterexamples")]
    counterexamples: PathBuf,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn generate(generator: Generator) -> Result<Instance> {
    Ok(match generator {
        Generator::Example1 { lambda } => budget_gap(lambda)?,
        Generator::Example2 => overbidding().0,
        Generator::Thm3 { eps } => convex_lower_bound(eps)?,
        Generator::Thm4 { n, m, weights } => private_budget_lower_bound(n, m, weights)?.symmetric,
        Generator::Vcg { alpha, eps } => vcg_lower_bound(alpha, eps)?,
        Generator::KnownBudget { m, weights } => known_budget_lower_bound(m, weights)?.symmetric,
    })
}

fn config_for(search: &SearchArgs) -> ExperimentConfig {
    ExperimentConfig::new(
        InstanceSource::Path(search.input.display().to_string()),
        &search.mechanism,
        search.grid_step,
    )
}

fn write_rows(out: &mut dyn Write, outcomes: &[&ExperimentOutcome]) -> Result<()> {
    if outcomes.is_empty() {
        return Ok(());
    }
    let rows: Vec<_> = outcomes.iter().map(|o| o.row.clone()).collect();
    write_csv(out, &rows)?;
    Ok(())
}

fn solve(cli: &Cli, args: &SolveArgs) -> Result<ExitCode> {
    let mut config = config_for(&args.search);
    config.eps = args.search.eps;
    config.max_bid = args.max_bid;
    config.mode = args.mode;
    config.conservative = !args.no_conservative;
    config.vcg_space = args.vcg_space;
    config.max_rounds = args.max_rounds;
    config.seed = cli.seed;
    let outcome = run_experiment(&config, cli.eta)?;
    let mut out = output(&cli.out)?;
    match cli.format {
        Format::Csv => write_rows(&mut out, &[&outcome])?,
        Format::Structured => {
            serde_json::to_writer_pretty(&mut out, &outcome.report)?;
            writeln!(out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn lpoa(cli: &Cli, args: &LpoaArgs) -> Result<ExitCode> {
    let mut config = config_for(&args.search);
    config.eps = args.search.eps;
    let outcome = run_experiment(&config, cli.eta)?;
    let mut out = output(&cli.out)?;
    match cli.format {
        Format::Csv => write_rows(&mut out, &[&outcome])?,
        Format::Structured => {
            serde_json::to_writer_pretty(&mut out, &outcome.row)?;
            writeln!(out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(cli: &Cli, args: &VerifyArgs) -> Result<ExitCode> {
    let inst = load_instance_with_tolerance(&args.input, cli.eta)?;
    let selector: MechanismSelector = args.mechanism.parse()?;
    let Some(auction) = selector.simple_auction(inst.num_players())? else {
        bail!("the covering deviation is defined for simple auctions only");
    };
    if args.player >= inst.num_players() {
        bail!("no player {} in a {}-player instance", args.player, inst.num_players());
    }
    let bundle = Bundle::from_mask(args.bundle);
    if bundle.is_empty() || !bundle.fits(inst.items()) {
        bail!("bundle {:#b} is not a nonempty bundle over {} items", args.bundle, inst.items());
    }
    let game = Game::new(inst.clone(), auction)?.with_eta(cli.eta);
    let full = Bundle::full(inst.items());
    let top = inst
        .players()
        .iter()
        .map(|p| p.valuation.evaluate(full))
        .collect::<liquid_welfare::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max)
        .max(1.0)
        * 1.2;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let (mut within, mut exceeded, mut violations) = (0usize, 0usize, Vec::new());
    for trial in 0..args.trials {
        let rows = (0..inst.num_players())
            .map(|_| (0..inst.items()).map(|_| rng.gen_range(0.0..=top)).collect())
            .collect();
        let bids = BidMatrix::new(rows)?;
        let result = covering_deviation(&game, args.player, bundle, &bids, args.delta)?;
        match result.branch {
            DeviationBranch::WithinBudget { .. } => within += 1,
            DeviationBranch::BudgetExceeded { .. } => exceeded += 1,
        }
        if let Err(v) = verify_covering_deviation(&result, &game, &bids) {
            violations.push(serde_json::json!({"trial": trial, "violation": v, "bids": bids}));
        }
    }
    let mut out = output(&cli.out)?;
    match cli.format {
        Format::Csv => {
            writeln!(out, "trials,within_budget,budget_exceeded,violations")?;
            writeln!(out, "{},{within},{exceeded},{}", args.trials, violations.len())?;
        }
        Format::Structured => {
            let summary = serde_json::json!({
                "trials": args.trials,
                "within_budget": within,
                "budget_exceeded": exceeded,
                "violations": violations,
            });
            serde_json::to_writer_pretty(&mut out, &summary)?;
            writeln!(out)?;
        }
    }
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn dump_counterexample(dir: &Path, index: usize, outcome: &ExperimentOutcome) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("counterexample-{index}.json"));
    let text = serde_json::to_string_pretty(&outcome.counterexample)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn sweep(cli: &Cli, args: &SweepArgs) -> Result<ExitCode> {
    let configs = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SweepConfig::from_json(&text)?.experiments
        }
        None => default_sweep(cli.seed, args.random),
    };
    let results = run_sweep(&configs, cli.eta);
    let mut outcomes = Vec::with_capacity(results.len());
    for (config, result) in configs.iter().zip(results) {
        outcomes.push(result.with_context(|| format!("experiment {}", config.instance_id()))?);
    }
    let mut all_pass = true;
    for (k, o) in outcomes.iter().enumerate() {
        if !o.row.pass {
            all_pass = false;
            if o.counterexample.is_some() {
                let path = dump_counterexample(&args.counterexamples, k, o)?;
                eprintln!("counterexample written to {}", path.display());
            }
        }
    }
    let mut out = output(&cli.out)?;
    match cli.format {
        Format::Csv => write_rows(&mut out, &outcomes.iter().collect::<Vec<_>>())?,
        Format::Structured => {
            let summary: Vec<_> = outcomes
                .iter()
                .map(|o| {
                    serde_json::json!({
                        "row": o.row,
                        "transfer": o.transfer.as_ref().map(|t| serde_json::json!({
                            "chosen": t.chosen,
                            "bids": t.bids,
                            "built_lw": t.built_lw,
                            "built_opt_lw": t.built_opt_lw,
                            "ratio": t.ratio,
                        })),
                    })
                })
                .collect();
            serde_json::to_writer_pretty(&mut out, &summary)?;
            writeln!(out)?;
        }
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Gen { .. } => {
            let Command::Gen { generator } = cli.command else { unreachable!() };
            let inst = generate(generator)?;
            let mut out = output(&cli.out)?;
            writeln!(out, "{}", instance_to_json(&inst))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve(args) => solve(&cli, args),
        Command::Lpoa(args) => lpoa(&cli, args),
        Command::VerifyDeviation(args) => verify(&cli, args),
        Command::Sweep(args) => sweep(&cli, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                if !e.to_string().contains(&cause.to_string()) {
                    eprintln!("  caused by: {cause}");
                }
            }
            ExitCode::from(2)
        }
    }
}
