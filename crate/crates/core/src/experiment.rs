//! Experiment configs, bound checks and sweeps producing one CSV row per run.
//!
//! Shift constructions run as a two-stage pipeline: find an equilibrium of the
//! symmetric instance, build the second instance from its allocation, confirm
//! the same bids are still an equilibrium there, and report the welfare ratio
//! of the built instance at that equilibrium.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Limits;
use crate::constructions::{
    budget_gap, convex_lower_bound, known_budget_bound, known_budget_lower_bound, overbidding,
    private_budget_bound, private_budget_lower_bound, vcg_lower_bound, ShiftConstruction,
};
use crate::equilibrium::{
    dynamics_report, enumerate_equilibria, BidGrid, EquilibriumEntry, EquilibriumReport, Game,
    Profile, SearchMode, SearchOptions,
};
use crate::error::{Error, Result};
use crate::io::load_instance_with_tolerance;
use crate::mechanism::{BidMatrix, MechanismSelector};
use crate::random::random_instance;
use crate::valuations::Instance;
use crate::vcg::{enumerate_vcg_equilibria, VcgGame, VcgStrategySpace};
use crate::welfare::{liquid_welfare, optimal_liquid_welfare, welfare_ratio};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GeneratorSpec {
    BudgetGap { lambda: f64 },
    Overbidding,
    ConvexLowerBound { eps: f64 },
    PrivateBudget {
        n: usize,
        m: usize,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    VcgLowerBound { alpha: f64, eps: f64 },
    KnownBudget {
        m: usize,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Random instance on the value grid with step 1/`levels`.
    Random {
        n: usize,
        m: usize,
        #[serde(default = "default_levels")]
        levels: u32,
    },
}

fn default_levels() -> u32 {
    10
}

impl GeneratorSpec {
    pub fn id(&self, seed: u64) -> String {
        match self {
            GeneratorSpec::BudgetGap { lambda } => format!("budget_gap(lambda={lambda})"),
            GeneratorSpec::Overbidding => "overbidding".into(),
            GeneratorSpec::ConvexLowerBound { eps } => format!("convex_lower_bound(eps={eps})"),
            GeneratorSpec::PrivateBudget { n, m, .. } => format!("private_budget(n={n},m={m})"),
            GeneratorSpec::VcgLowerBound { alpha, eps } => {
                format!("vcg_lower_bound(alpha={alpha},eps={eps})")
            }
            GeneratorSpec::KnownBudget { m, .. } => format!("known_budget(m={m})"),
            GeneratorSpec::Random { n, m, .. } => format!("random(n={n},m={m},seed={seed})"),
        }
    }

    fn shift_construction(&self) -> Result<Option<ShiftConstruction>> {
        match self {
            GeneratorSpec::PrivateBudget { n, m, weights } => {
                private_budget_lower_bound(*n, *m, weights.clone()).map(Some)
            }
            GeneratorSpec::KnownBudget { m, weights } => {
                known_budget_lower_bound(*m, weights.clone()).map(Some)
            }
            _ => Ok(None),
        }
    }

    /// The instance to search; for shift constructions, the symmetric one.
    pub fn instance(&self, seed: u64) -> Result<Instance> {
        match self {
            GeneratorSpec::BudgetGap { lambda } => budget_gap(*lambda),
            GeneratorSpec::Overbidding => Ok(overbidding().0),
            GeneratorSpec::ConvexLowerBound { eps } => convex_lower_bound(*eps),
            GeneratorSpec::VcgLowerBound { alpha, eps } => vcg_lower_bound(*alpha, *eps),
            GeneratorSpec::Random { n, m, levels } => {
                random_instance(&mut ChaCha8Rng::seed_from_u64(seed), *n, *m, *levels)
            }
            GeneratorSpec::PrivateBudget { .. } | GeneratorSpec::KnownBudget { .. } => {
                Ok(self.shift_construction()?.expect("shift generator").symmetric)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    Path(String),
    Generator(GeneratorSpec),
}

/// What a run must show to pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "check")]
pub enum BoundCheck {
    /// Nothing to check; the row always passes.
    #[default]
    None,
    /// `opt <= factor * lw + 2·n·m·step` at every equilibrium found.
    UpperBound { factor: f64 },
    /// At least one equilibrium, and `lpos >= bound - slack`.
    LposAtLeast { bound: f64, slack: f64 },
    /// At least one equilibrium, and `lpoa >= bound - slack`.
    LpoaAtLeast { bound: f64, slack: f64 },
}

impl BoundCheck {
    pub fn bound(&self) -> Option<f64> {
        match *self {
            BoundCheck::None => None,
            BoundCheck::UpperBound { factor } => Some(factor),
            BoundCheck::LposAtLeast { bound, .. } | BoundCheck::LpoaAtLeast { bound, .. } => Some(bound),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub id: Option<String>,
    pub instance: InstanceSource,
    pub mechanism: String,
    pub grid_step: f64,
    #[serde(default)]
    pub max_bid: Option<f64>,
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub mode: SearchMode,
    #[serde(default = "default_true")]
    pub conservative: bool,
    #[serde(default)]
    pub check: BoundCheck,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vcg_space: VcgStrategySpace,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
}

fn default_true() -> bool {
    true
}

fn default_rounds() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn new(instance: InstanceSource, mechanism: &str, grid_step: f64) -> Self {
        Self {
            id: None,
            instance,
            mechanism: mechanism.into(),
            grid_step,
            max_bid: None,
            eps: 0.0,
            mode: SearchMode::Exhaustive,
            conservative: true,
            check: BoundCheck::None,
            seed: 0,
            vcg_space: VcgStrategySpace::Structured,
            max_rounds: default_rounds(),
        }
    }

    pub fn generated(spec: GeneratorSpec, mechanism: &str, grid_step: f64) -> Self {
        Self::new(InstanceSource::Generator(spec), mechanism, grid_step)
    }

    pub fn with_check(mut self, check: BoundCheck) -> Self {
        self.check = check;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn instance_id(&self) -> String {
        if let Some(id) = &self.id {
            return id.clone();
        }
        match &self.instance {
            InstanceSource::Path(p) => Path::new(p)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.clone()),
            InstanceSource::Generator(g) => g.id(self.seed),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.grid_step.is_finite() && self.grid_step > 0.0) {
            return Err(Error::InvalidParam(format!("grid step must be positive, got {}", self.grid_step)));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::InvalidParam(format!("eps must be nonnegative, got {}", self.eps)));
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub instance_id: String,
    pub mechanism: String,
    pub step: f64,
    pub eps: f64,
    pub mode: SearchMode,
    pub complete: bool,
    pub n_eq: usize,
    pub opt_lw: f64,
    pub min_lw: Option<f64>,
    pub max_lw: Option<f64>,
    pub lpoa: Option<f64>,
    pub lpos: Option<f64>,
    pub paper_bound: Option<f64>,
    pub pass: bool,
}

pub const CSV_HEADER: [&str; 14] = [
    "instance_id",
    "mechanism",
    "step",
    "eps",
    "mode",
    "complete",
    "n_eq",
    "opt_lw",
    "min_lw",
    "max_lw",
    "lpoa",
    "lpos",
    "paper_bound",
    "pass",
];

/// Second stage of a shift construction.
#[derive(Clone, Debug, Serialize)]
pub struct TransferReport {
    /// Index into the symmetric report's equilibria of the one carried over.
    pub chosen: usize,
    /// Equilibria tried before one carried over, including the chosen one.
    pub tried: usize,
    pub built: Instance,
    pub bids: BidMatrix,
    pub built_lw: f64,
    pub built_opt_lw: f64,
    pub ratio: f64,
}

/// An equilibrium whose welfare breaks an upper-bound check.
#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub instance_id: String,
    pub mechanism: String,
    pub instance: Instance,
    pub equilibrium: EquilibriumEntry,
    pub opt_lw: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentOutcome {
    pub row: ExperimentRow,
    pub report: EquilibriumReport,
    pub transfer: Option<TransferReport>,
    pub counterexample: Option<Counterexample>,
}

fn load(config: &ExperimentConfig, eta: f64) -> Result<(Instance, Option<ShiftConstruction>)> {
    match &config.instance {
        InstanceSource::Path(p) => Ok((load_instance_with_tolerance(p, eta)?, None)),
        InstanceSource::Generator(g) => Ok((g.instance(config.seed)?, g.shift_construction()?)),
    }
}

fn grid_for(config: &ExperimentConfig, default: impl FnOnce(f64) -> Result<BidGrid>) -> Result<BidGrid> {
    match config.max_bid {
        Some(b) => BidGrid::new(config.grid_step, b),
        None => default(config.grid_step),
    }
}

/// Runs the search a config describes, without any bound check.
pub fn search(config: &ExperimentConfig, instance: Instance, eta: f64) -> Result<EquilibriumReport> {
    config.validate()?;
    let selector: MechanismSelector = config.mechanism.parse()?;
    let opts = SearchOptions {
        eps: config.eps,
        max_stored: Some(10_000),
    };
    match selector.simple_auction(instance.num_players())? {
        Some(auction) => {
            let game = Game::new(instance, auction)?
                .with_eta(eta)
                .with_conservative(config.conservative);
            let grid = grid_for(config, |s| game.default_grid(s))?;
            match config.mode {
                SearchMode::Exhaustive => enumerate_equilibria(&game, &grid, &opts),
                SearchMode::Dynamics => {
                    let start = BidMatrix::zeros(game.instance().num_players(), game.instance().items());
                    Ok(dynamics_report(&game, &grid, &start, config.max_rounds)?.0)
                }
            }
        }
        None => {
            if config.mode == SearchMode::Dynamics {
                return Err(Error::InvalidParam("dynamics mode is only available for simple auctions".into()));
            }
            let game = VcgGame::new(instance)
                .with_eta(eta)
                .with_conservative(config.conservative);
            let grid = grid_for(config, |s| game.default_grid(s))?;
            enumerate_vcg_equilibria(&game, &grid, config.vcg_space, &opts)
        }
    }
}

fn transfer(
    config: &ExperimentConfig,
    construction: &ShiftConstruction,
    report: &EquilibriumReport,
    eta: f64,
) -> Result<Option<TransferReport>> {
    let selector: MechanismSelector = config.mechanism.parse()?;
    let n = construction.symmetric.num_players();
    let Some(auction) = selector.simple_auction(n)? else {
        return Err(Error::InvalidParam("shift constructions need a simple auction".into()));
    };
    for (k, entry) in report.equilibria.iter().enumerate() {
        let Profile::Items(bids) = &entry.bids else { continue };
        let built = construction.build(&entry.outcome.allocation)?;
        let game = Game::new(built.clone(), auction.clone())?
            .with_eta(eta)
            .with_conservative(config.conservative);
        let grid = grid_for(config, |s| game.default_grid(s))?;
        if !game.is_grid_equilibrium(bids, &grid, config.eps)?.passed() {
            continue;
        }
        let built_lw = liquid_welfare(&built, &entry.outcome.allocation)?;
        let built_opt_lw = optimal_liquid_welfare(&built, &Limits::default(), eta)?.liquid_welfare;
        return Ok(Some(TransferReport {
            chosen: k,
            tried: k + 1,
            built,
            bids: bids.clone(),
            built_lw,
            built_opt_lw,
            ratio: welfare_ratio(built_opt_lw, built_lw, eta),
        }));
    }
    Ok(None)
}

fn reference_bound(config: &ExperimentConfig) -> Option<f64> {
    match &config.instance {
        InstanceSource::Generator(GeneratorSpec::PrivateBudget { n, m, .. }) => {
            Some(private_budget_bound(*n, *m))
        }
        InstanceSource::Generator(GeneratorSpec::KnownBudget { m, .. }) => Some(known_budget_bound(*m)),
        _ => None,
    }
}

/// Runs one experiment and evaluates its bound check.
pub fn run_experiment(config: &ExperimentConfig, eta: f64) -> Result<ExperimentOutcome> {
    let (instance, construction) = load(config, eta)?;
    let n = instance.num_players();
    let m = instance.items();
    let report = search(config, instance.clone(), eta)?;
    let mut row = ExperimentRow {
        instance_id: config.instance_id(),
        mechanism: config.mechanism.clone(),
        step: config.grid_step,
        eps: config.eps,
        mode: report.mode,
        complete: report.complete,
        n_eq: report.equilibrium_count,
        opt_lw: report.optimum.liquid_welfare,
        min_lw: report.min_lw,
        max_lw: report.max_lw,
        lpoa: report.lpoa_empirical,
        lpos: report.lpos_empirical,
        paper_bound: config.check.bound().or_else(|| reference_bound(config)),
        pass: true,
    };

    let transfer = match &construction {
        Some(c) => transfer(config, c, &report, eta)?,
        None => None,
    };
    if construction.is_some() {
        // the built instance's welfare at the carried-over equilibrium
        match &transfer {
            Some(t) => {
                row.opt_lw = t.built_opt_lw;
                row.min_lw = Some(t.built_lw);
                row.max_lw = Some(t.built_lw);
                row.lpoa = Some(t.ratio);
                row.lpos = Some(t.ratio);
            }
            None => {
                row.min_lw = None;
                row.max_lw = None;
                row.lpoa = None;
                row.lpos = None;
            }
        }
    }

    let mut counterexample = None;
    row.pass = match config.check {
        BoundCheck::None => true,
        BoundCheck::UpperBound { factor } => {
            let tolerance = 2.0 * n as f64 * m as f64 * config.grid_step;
            match &report.worst {
                Some(worst) if report.optimum.liquid_welfare > factor * worst.liquid_welfare + tolerance + eta => {
                    counterexample = Some(Counterexample {
                        instance_id: row.instance_id.clone(),
                        mechanism: row.mechanism.clone(),
                        instance,
                        equilibrium: worst.clone(),
                        opt_lw: report.optimum.liquid_welfare,
                        tolerance,
                    });
                    false
                }
                _ => true,
            }
        }
        BoundCheck::LposAtLeast { bound, slack } => row.lpos.is_some_and(|r| r >= bound - slack - eta),
        BoundCheck::LpoaAtLeast { bound, slack } => row.lpoa.is_some_and(|r| r >= bound - slack - eta),
    };
    Ok(ExperimentOutcome {
        row,
        report,
        transfer,
        counterexample,
    })
}

/// Runs every config, keeping results in config order.
pub fn run_sweep(configs: &[ExperimentConfig], eta: f64) -> Vec<Result<ExperimentOutcome>> {
    configs.par_iter().map(|c| run_experiment(c, eta)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub experiments: Vec<ExperimentConfig>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// The reproduction sweep: every constructed lower bound at desk scale plus
/// `random_instances` seeded random instances checked against the factor-2
/// upper bound under first and second price.
pub fn default_sweep(seed: u64, random_instances: usize) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    let lower = GeneratorSpec::ConvexLowerBound { eps: 0.1 };
    for mech in ["sfpa", "sspa", "convex:0.5,0.5"] {
        out.push(
            ExperimentConfig::generated(lower.clone(), mech, 0.05)
                .with_check(BoundCheck::LposAtLeast { bound: 1.9, slack: 0.05 }),
        );
    }
    out.push(
        ExperimentConfig::generated(
            GeneratorSpec::PrivateBudget {
                n: 2,
                m: 4,
                weights: None,
            },
            "sfpa",
            0.25,
        )
        .with_check(BoundCheck::LpoaAtLeast {
            bound: private_budget_bound(2, 4),
            slack: 0.1,
        }),
    );
    out.push(
        ExperimentConfig::generated(GeneratorSpec::VcgLowerBound { alpha: 0.05, eps: 0.1 }, "vcg", 0.05)
            .with_check(BoundCheck::LposAtLeast { bound: 1.9, slack: 0.05 }),
    );
    out.push(
        ExperimentConfig::generated(GeneratorSpec::KnownBudget { m: 4, weights: None }, "sfpa", 0.25)
            .with_check(BoundCheck::LpoaAtLeast {
                bound: known_budget_bound(4),
                slack: 0.05,
            }),
    );
    let mut pathology = ExperimentConfig::generated(GeneratorSpec::Overbidding, "sspa", 1.0)
        .with_check(BoundCheck::LpoaAtLeast { bound: 100.0, slack: 0.0 });
    pathology.max_bid = Some(200.0);
    pathology.conservative = false;
    out.push(pathology);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_instances {
        use rand::Rng;
        let n = rng.gen_range(2..=3);
        let m = rng.gen_range(2..=3);
        let instance_seed = rng.gen::<u64>();
        for mech in ["sfpa", "sspa"] {
            out.push(
                ExperimentConfig::generated(GeneratorSpec::Random { n, m, levels: 10 }, mech, 0.1)
                    .with_seed(instance_seed)
                    .with_check(BoundCheck::UpperBound { factor: 2.0 }),
            );
        }
    }
    out
}

/// Writes the header and one row per outcome.
pub fn write_csv<W: Write>(out: W, rows: &[ExperimentRow]) -> Result<()> {
    let format_err = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER).map_err(format_err)?;
    let num = |x: f64| x.to_string();
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.instance_id.clone(),
            r.mechanism.clone(),
            num(r.step),
            num(r.eps),
            r.mode.to_string(),
            r.complete.to_string(),
            r.n_eq.to_string(),
            num(r.opt_lw),
            opt(r.min_lw),
            opt(r.max_lw),
            opt(r.lpoa),
            opt(r.lpos),
            opt(r.paper_bound),
            r.pass.to_string(),
        ])
        .map_err(format_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<csv output>".into(),
        source,
    })
}
