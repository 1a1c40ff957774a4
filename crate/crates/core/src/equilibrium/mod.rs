//! Discretized bid spaces, best responses, exhaustive grid ε-equilibrium
//! enumeration and best-response dynamics for simple auctions.
//!
//! Every player's strategy space is the set of bid vectors on a per-item grid
//! `{0, step, 2·step, …, max_bid}`, restricted to conservative vectors unless
//! the game is built with conservativeness disabled. Vectors are enumerated in
//! lexicographic order (item 0 most significant), and every best response
//! returns the smallest vector among its maximizers.

pub(crate) mod search;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{Limits, DEFAULT_ETA};
use crate::error::{Error, Result};
use crate::mechanism::{conservative_violation, BidMatrix, Outcome, SimpleAuction, Utility};
use crate::valuations::{Bundle, Instance};
use crate::vcg::BundleBidTable;
use crate::welfare::{liquid_welfare, optimal_liquid_welfare, ratio_report, WelfareSummary};

use search::{equilibrium_profiles, profile_count, within, FiniteGame};

/// The per-item bid grid `{0, step, …, max_bid}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BidGrid {
    step: f64,
    max_bid: f64,
    #[serde(skip)]
    top: u32,
}

impl BidGrid {
    pub fn new(step: f64, max_bid: f64) -> Result<Self> {
        if !step.is_finite() || step <= 0.0 {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        if !max_bid.is_finite() || max_bid <= 0.0 {
            return Err(Error::InvalidGrid(format!("max bid must be positive, got {max_bid}")));
        }
        let ratio = max_bid / step;
        let top = ratio.round();
        if (ratio - top).abs() > 1e-6 * ratio.max(1.0) || top < 1.0 {
            return Err(Error::InvalidGrid(format!(
                "max bid {max_bid} is not a multiple of step {step}"
            )));
        }
        if top > u32::MAX as f64 {
            return Err(Error::InvalidGrid("grid has too many levels".into()));
        }
        Ok(Self {
            step,
            max_bid,
            top: top as u32,
        })
    }

    /// The smallest grid with this step whose top reaches `upper`.
    pub fn covering(step: f64, upper: f64) -> Result<Self> {
        if !step.is_finite() || step <= 0.0 {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        let levels = (upper / step - 1e-9).ceil().max(1.0);
        Self::new(step, levels * step)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn max_bid(&self) -> f64 {
        self.max_bid
    }

    /// Index of the largest grid value.
    pub fn top_level(&self) -> u32 {
        self.top
    }

    pub fn value(&self, level: u32) -> f64 {
        level as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..=self.top).map(|k| self.value(k)).collect()
    }
}

/// Grid bid vectors of one player, stored flat in lexicographic order.
#[derive(Clone, Debug)]
pub(crate) struct StrategySpace {
    items: usize,
    values: Vec<f64>,
    max_level: Vec<u32>,
}

impl StrategySpace {
    pub(crate) fn len(&self) -> usize {
        self.values.len() / self.items
    }

    pub(crate) fn vector(&self, s: usize) -> &[f64] {
        &self.values[s * self.items..(s + 1) * self.items]
    }

    pub(crate) fn bid(&self, s: usize, item: usize) -> f64 {
        self.values[s * self.items + item]
    }
}

/// Outcome of [`Game::is_grid_equilibrium`].
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "result")]
pub enum EquilibriumCheck {
    Pass,
    /// The profile itself breaks the conservativeness constraint.
    NotConservative { player: usize, bundle: Bundle },
    /// The best grid deviation of the first player who gains more than `eps`.
    Deviation {
        player: usize,
        bids: Vec<f64>,
        gain: f64,
    },
}

impl EquilibriumCheck {
    pub fn passed(&self) -> bool {
        matches!(self, EquilibriumCheck::Pass)
    }
}

/// A simple auction played on a fixed instance.
#[derive(Clone, Debug)]
pub struct Game {
    instance: Instance,
    auction: SimpleAuction,
    eta: f64,
    conservative: bool,
    limits: Limits,
    tables: Vec<Vec<f64>>,
}

impl Game {
    pub fn new(instance: Instance, auction: SimpleAuction) -> Result<Self> {
        if auction.rule.weights().len() != instance.num_players() {
            return Err(Error::InvalidRule(format!(
                "rule has {} weights for {} players",
                auction.rule.weights().len(),
                instance.num_players()
            )));
        }
        let tables = instance.value_tables();
        Ok(Self {
            instance,
            auction,
            eta: DEFAULT_ETA,
            conservative: true,
            limits: Limits::default(),
            tables,
        })
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    /// Enables or disables the conservativeness filter on strategies.
    pub fn with_conservative(mut self, conservative: bool) -> Self {
        self.conservative = conservative;
        self
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn auction(&self) -> &SimpleAuction {
        &self.auction
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn conservative(&self) -> bool {
        self.conservative
    }

    pub fn outcome(&self, bids: &BidMatrix) -> Result<Outcome> {
        self.auction.outcome(&self.instance, bids, self.eta)
    }

    /// Grid whose top is `max_i min{v_i([m]), c_i}` rounded up to the step.
    pub fn default_grid(&self, step: f64) -> Result<BidGrid> {
        BidGrid::covering(step, default_max_bid(&self.instance))
    }

    /// First player and bundle at which `bids` is not conservative.
    pub fn conservative_violation(&self, bids: &BidMatrix) -> Option<(usize, Bundle)> {
        (0..self.instance.num_players()).find_map(|i| {
            let p = self.instance.player(i);
            conservative_violation(&self.tables[i], p.budget, bids.row(i), self.eta)
                .map(|b| (i, b))
        })
    }

    pub(crate) fn space(&self, player: usize, grid: &BidGrid) -> Result<StrategySpace> {
        let m = self.instance.items();
        let per_item = grid.top_level() as u128 + 1;
        let raw = per_item.checked_pow(m as u32).unwrap_or(u128::MAX);
        if !self.conservative && raw > self.limits.max_strategies {
            return Err(Error::too_large("strategy space", raw, self.limits.max_strategies));
        }
        let p = self.instance.player(player);
        let values = &self.tables[player];
        let cap = p.budget.as_f64();
        let mut out = StrategySpace {
            items: m,
            values: Vec::new(),
            max_level: vec![0; m],
        };
        let mut sums = vec![0.0f64; 1usize << m];
        let mut current = vec![0.0f64; m];
        let mut levels = vec![0u32; m];
        self.extend_space(
            grid, values, cap, 0, &mut sums, &mut current, &mut levels, &mut out,
        )?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn extend_space(
        &self,
        grid: &BidGrid,
        values: &[f64],
        cap: f64,
        item: usize,
        sums: &mut [f64],
        current: &mut [f64],
        levels: &mut [u32],
        out: &mut StrategySpace,
    ) -> Result<()> {
        let m = current.len();
        if item == m {
            if out.len() as u128 >= self.limits.max_strategies {
                return Err(Error::too_large(
                    "strategy space",
                    out.len() as u128 + 1,
                    self.limits.max_strategies,
                ));
            }
            out.values.extend_from_slice(current);
            for (top, &level) in out.max_level.iter_mut().zip(levels.iter()) {
                *top = (*top).max(level);
            }
            return Ok(());
        }
        let bit = 1usize << item;
        for level in 0..=grid.top_level() {
            let x = grid.value(level);
            if self.conservative {
                // sums over every bundle of items 0..=item that contains `item`
                let mut ok = true;
                for sub in 0..bit {
                    let mask = sub | bit;
                    sums[mask] = sums[sub] + x;
                    if sums[mask] > values[mask].min(cap) + self.eta {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    // larger bids on this item only make every sum bigger
                    break;
                }
            }
            current[item] = x;
            levels[item] = level;
            self.extend_space(grid, values, cap, item + 1, sums, current, levels, out)?;
        }
        current[item] = 0.0;
        levels[item] = 0;
        Ok(())
    }

    /// Every grid bid vector available to `player` (conservative ones only,
    /// unless the filter is disabled), in lexicographic order.
    pub fn strategy_space(&self, player: usize, grid: &BidGrid) -> Result<Vec<Vec<f64>>> {
        let space = self.space(player, grid)?;
        Ok((0..space.len()).map(|s| space.vector(s).to_vec()).collect())
    }

    /// Best response within `space` against the bids in `columns`; entry
    /// `player` of each column is overwritten by the trial bid.
    pub(crate) fn best_response_in(
        &self,
        player: usize,
        space: &StrategySpace,
        grid: &BidGrid,
        columns: &mut [Vec<f64>],
    ) -> (usize, Utility) {
        let m = self.instance.items();
        let mut win: Vec<Vec<bool>> = Vec::with_capacity(m);
        let mut pay: Vec<Vec<f64>> = Vec::with_capacity(m);
        for (j, col) in columns.iter_mut().enumerate() {
            let top = space.max_level[j];
            let mut w = Vec::with_capacity(top as usize + 1);
            let mut p = Vec::with_capacity(top as usize + 1);
            for level in 0..=top {
                col[player] = grid.value(level);
                let wins = self.auction.winner(col) == player;
                w.push(wins);
                p.push(if wins { self.auction.rule.price(col) } else { 0.0 });
            }
            win.push(w);
            pay.push(p);
        }
        let profile = self.instance.player(player);
        let table = &self.tables[player];
        let step = grid.step();
        let mut best = (0usize, Utility::BudgetOverrun);
        for s in 0..space.len() {
            let mut mask = 0usize;
            let mut total = 0.0;
            for j in 0..m {
                let level = (space.bid(s, j) / step).round() as usize;
                if win[j][level] {
                    mask |= 1 << j;
                    total += pay[j][level];
                }
            }
            let u = Utility::from_parts(table[mask], total, profile.budget, self.eta);
            let improves = match (u, best.1) {
                (Utility::BudgetOverrun, _) => false,
                (Utility::Finite(_), Utility::BudgetOverrun) => true,
                (Utility::Finite(a), Utility::Finite(b)) => a > b + self.eta,
            };
            if s == 0 || improves {
                best = (s, u);
            }
        }
        best
    }

    /// A utility-maximizing grid vector for `player` against the other rows of `bids`.
    pub fn best_response(
        &self,
        player: usize,
        bids: &BidMatrix,
        grid: &BidGrid,
    ) -> Result<(Vec<f64>, Utility)> {
        bids.check_shape(&self.instance)?;
        let space = self.space(player, grid)?;
        let mut columns: Vec<Vec<f64>> = (0..bids.items()).map(|j| bids.column(j)).collect();
        let (s, u) = self.best_response_in(player, &space, grid, &mut columns);
        Ok((space.vector(s).to_vec(), u))
    }

    /// Passes iff `bids` is conservative (when the filter is on) and no player
    /// can gain more than `eps` by switching to any vector of her grid space.
    pub fn is_grid_equilibrium(
        &self,
        bids: &BidMatrix,
        grid: &BidGrid,
        eps: f64,
    ) -> Result<EquilibriumCheck> {
        bids.check_shape(&self.instance)?;
        if self.conservative {
            if let Some((player, bundle)) = self.conservative_violation(bids) {
                return Ok(EquilibriumCheck::NotConservative { player, bundle });
            }
        }
        let outcome = self.outcome(bids)?;
        for i in 0..self.instance.num_players() {
            let space = self.space(i, grid)?;
            let mut columns: Vec<Vec<f64>> = (0..bids.items()).map(|j| bids.column(j)).collect();
            let (s, best) = self.best_response_in(i, &space, grid, &mut columns);
            let u = outcome.utilities[i];
            if !within(u, best, eps, self.eta) {
                return Ok(EquilibriumCheck::Deviation {
                    player: i,
                    bids: space.vector(s).to_vec(),
                    gain: best.value() - u.value(),
                });
            }
        }
        Ok(EquilibriumCheck::Pass)
    }
}

pub(crate) fn default_max_bid(inst: &Instance) -> f64 {
    let full = Bundle::full(inst.items());
    inst.players()
        .iter()
        .map(|p| p.budget.cap(p.valuation.value(full)))
        .fold(0.0, f64::max)
}

/// The finite game a [`Game`] induces on a grid.
struct GridGame<'a> {
    game: &'a Game,
    grid: &'a BidGrid,
    spaces: Vec<StrategySpace>,
}

impl GridGame<'_> {
    fn columns(&self, profile: &[usize]) -> Vec<Vec<f64>> {
        (0..self.game.instance.items())
            .map(|j| {
                profile
                    .iter()
                    .enumerate()
                    .map(|(l, &s)| self.spaces[l].bid(s, j))
                    .collect()
            })
            .collect()
    }

    fn bids(&self, profile: &[usize]) -> BidMatrix {
        let rows = profile
            .iter()
            .enumerate()
            .map(|(l, &s)| self.spaces[l].vector(s).to_vec())
            .collect();
        BidMatrix::new(rows).expect("grid vectors are valid bids")
    }
}

impl FiniteGame for GridGame<'_> {
    fn num_players(&self) -> usize {
        self.spaces.len()
    }

    fn num_strategies(&self, player: usize) -> usize {
        self.spaces[player].len()
    }

    fn utilities(&self, profile: &[usize]) -> Vec<Utility> {
        let n = profile.len();
        let mut masks = vec![0usize; n];
        let mut payments = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..self.game.instance.items() {
            for (l, &s) in profile.iter().enumerate() {
                col[l] = self.spaces[l].bid(s, j);
            }
            let w = self.game.auction.winner(&col);
            masks[w] |= 1 << j;
            payments[w] += self.game.auction.rule.price(&col);
        }
        (0..n)
            .map(|i| {
                let p = self.game.instance.player(i);
                Utility::from_parts(self.game.tables[i][masks[i]], payments[i], p.budget, self.game.eta)
            })
            .collect()
    }

    fn best_response(&self, player: usize, profile: &[usize]) -> (usize, Utility) {
        let mut columns = self.columns(profile);
        self.game
            .best_response_in(player, &self.spaces[player], self.grid, &mut columns)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Exhaustive,
    Dynamics,
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(SearchMode::Exhaustive),
            "dynamics" => Ok(SearchMode::Dynamics),
            other => Err(Error::InvalidParam(format!("unknown search mode '{other}'"))),
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Exhaustive => "exhaustive",
            SearchMode::Dynamics => "dynamics",
        })
    }
}

/// Bids of an equilibrium: per-item bids for simple auctions, bundle bids for VCG.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Profile {
    Items(BidMatrix),
    Bundles(BundleBidTable),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriumEntry {
    pub bids: Profile,
    pub outcome: Outcome,
    pub liquid_welfare: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumReport {
    pub mechanism: String,
    pub grid: BidGrid,
    pub epsilon: f64,
    pub mode: SearchMode,
    /// True iff the full grid profile space was scanned.
    pub complete: bool,
    pub conservative: bool,
    pub profiles_scanned: u128,
    pub equilibrium_count: usize,
    /// Stored equilibria, in scan order; may be truncated by `max_stored`.
    pub equilibria: Vec<EquilibriumEntry>,
    /// An equilibrium of minimum liquid welfare.
    pub worst: Option<EquilibriumEntry>,
    /// An equilibrium of maximum liquid welfare.
    pub best: Option<EquilibriumEntry>,
    pub optimum: WelfareSummary,
    pub min_lw: Option<f64>,
    pub max_lw: Option<f64>,
    pub lpoa_empirical: Option<f64>,
    pub lpos_empirical: Option<f64>,
}

impl EquilibriumReport {
    pub(crate) fn new(
        mechanism: String,
        grid: BidGrid,
        epsilon: f64,
        mode: SearchMode,
        conservative: bool,
        optimum: WelfareSummary,
    ) -> Self {
        Self {
            mechanism,
            grid,
            epsilon,
            mode,
            complete: mode == SearchMode::Exhaustive,
            conservative,
            profiles_scanned: 0,
            equilibrium_count: 0,
            equilibria: Vec::new(),
            worst: None,
            best: None,
            optimum,
            min_lw: None,
            max_lw: None,
            lpoa_empirical: None,
            lpos_empirical: None,
        }
    }

    pub(crate) fn push(&mut self, entry: EquilibriumEntry, max_stored: Option<usize>, eta: f64) {
        self.equilibrium_count += 1;
        let lw = entry.liquid_welfare;
        if self.min_lw.is_none_or(|m| lw < m - eta) {
            self.min_lw = Some(lw);
            self.worst = Some(entry.clone());
        }
        if self.max_lw.is_none_or(|m| lw > m + eta) {
            self.max_lw = Some(lw);
            self.best = Some(entry.clone());
        }
        if max_stored.is_none_or(|cap| self.equilibria.len() < cap) {
            self.equilibria.push(entry);
        }
    }

    pub(crate) fn finish(mut self, eta: f64) -> Self {
        if let (Some(min), Some(max)) = (self.min_lw, self.max_lw) {
            if let Ok((lpoa, lpos)) = ratio_report(self.optimum.liquid_welfare, &[min, max], eta) {
                self.lpoa_empirical = Some(lpoa);
                self.lpos_empirical = Some(lpos);
            }
        }
        self
    }

    /// `(LPoA, LPoS)` over the equilibria found.
    pub fn ratios(&self) -> Result<(f64, f64)> {
        match (self.lpoa_empirical, self.lpos_empirical) {
            (Some(a), Some(s)) => Ok((a, s)),
            _ => Err(Error::NoEquilibriumFound),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchOptions {
    pub eps: f64,
    /// Keep at most this many equilibria in the report; counts and extremes
    /// still cover all of them.
    pub max_stored: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            eps: 0.0,
            max_stored: None,
        }
    }
}

pub(crate) fn check_profile_cap(count: u128, limits: &Limits) -> Result<()> {
    if count > limits.max_profiles {
        return Err(Error::InstanceTooLarge {
            what: "grid profile space",
            size: count,
            cap: limits.max_profiles,
            hint: "; use dynamics mode instead",
        });
    }
    Ok(())
}

/// Scans every grid profile and reports all ε-equilibria with their liquid welfare.
pub fn enumerate_equilibria(
    game: &Game,
    grid: &BidGrid,
    opts: &SearchOptions,
) -> Result<EquilibriumReport> {
    let spaces = (0..game.instance.num_players())
        .map(|i| game.space(i, grid))
        .collect::<Result<Vec<_>>>()?;
    let finite = GridGame { game, grid, spaces };
    let count = profile_count(&finite);
    check_profile_cap(count, &game.limits)?;

    let found = equilibrium_profiles(&finite, opts.eps, game.eta);
    let optimum = optimal_liquid_welfare(&game.instance, &game.limits, game.eta)?;
    let mut report = EquilibriumReport::new(
        game.auction.label(),
        *grid,
        opts.eps,
        SearchMode::Exhaustive,
        game.conservative,
        optimum,
    );
    report.profiles_scanned = count;
    let radix: Vec<usize> = finite.spaces.iter().map(StrategySpace::len).collect();
    let mut profile = vec![0usize; radix.len()];
    for index in found {
        search::decode(index, &radix, &mut profile);
        let bids = finite.bids(&profile);
        let outcome = game.outcome(&bids)?;
        let lw = liquid_welfare(&game.instance, &outcome.allocation)?;
        report.push(
            EquilibriumEntry {
                bids: Profile::Items(bids),
                outcome,
                liquid_welfare: lw,
            },
            opts.max_stored,
            game.eta,
        );
    }
    Ok(report.finish(game.eta))
}

#[derive(Clone, Debug, PartialEq)]
pub enum DynamicsOutcome {
    Converged { bids: BidMatrix, rounds: usize },
    /// Profiles at round boundaries, from the first visit of the repeated
    /// profile up to and including its second visit.
    CycleDetected { trace: Vec<BidMatrix> },
}

fn profile_key(bids: &BidMatrix) -> Vec<u64> {
    bids.rows().into_iter().flatten().map(f64::to_bits).collect()
}

/// Round-robin best-response dynamics from `start`. A player switches only on
/// a strict improvement, so a round without switches is a grid equilibrium.
pub fn best_response_dynamics(
    game: &Game,
    grid: &BidGrid,
    start: &BidMatrix,
    max_rounds: usize,
) -> Result<DynamicsOutcome> {
    start.check_shape(&game.instance)?;
    if game.conservative {
        if let Some((i, b)) = game.conservative_violation(start) {
            return Err(Error::InvalidBid(format!(
                "start profile is not conservative for player {i} on bundle {b}"
            )));
        }
    }
    let n = game.instance.num_players();
    let spaces = (0..n)
        .map(|i| game.space(i, grid))
        .collect::<Result<Vec<_>>>()?;
    let mut current = start.clone();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut trace = vec![current.clone()];
    seen.insert(profile_key(&current), 0);
    for round in 1..=max_rounds {
        let mut changed = false;
        for (i, space) in spaces.iter().enumerate() {
            let mut columns: Vec<Vec<f64>> =
                (0..current.items()).map(|j| current.column(j)).collect();
            let (s, best) = game.best_response_in(i, space, grid, &mut columns);
            let u = game.outcome(&current)?.utilities[i];
            if !within(u, best, 0.0, game.eta) {
                current = current.with_row(i, space.vector(s))?;
                changed = true;
            }
        }
        if !changed {
            return Ok(DynamicsOutcome::Converged {
                bids: current,
                rounds: round,
            });
        }
        let key = profile_key(&current);
        if let Some(&first) = seen.get(&key) {
            let mut cycle = trace[first..].to_vec();
            cycle.push(current);
            return Ok(DynamicsOutcome::CycleDetected { trace: cycle });
        }
        seen.insert(key, trace.len());
        trace.push(current.clone());
    }
    Err(Error::Timeout { rounds: max_rounds })
}

/// Report for a dynamics run: at most one equilibrium, never complete.
pub fn dynamics_report(
    game: &Game,
    grid: &BidGrid,
    start: &BidMatrix,
    max_rounds: usize,
) -> Result<(EquilibriumReport, DynamicsOutcome)> {
    let result = best_response_dynamics(game, grid, start, max_rounds)?;
    let optimum = optimal_liquid_welfare(&game.instance, &game.limits, game.eta)?;
    let mut report = EquilibriumReport::new(
        game.auction.label(),
        *grid,
        0.0,
        SearchMode::Dynamics,
        game.conservative,
        optimum,
    );
    if let DynamicsOutcome::Converged { bids, .. } = &result {
        let outcome = game.outcome(bids)?;
        let lw = liquid_welfare(&game.instance, &outcome.allocation)?;
        report.push(
            EquilibriumEntry {
                bids: Profile::Items(bids.clone()),
                outcome,
                liquid_welfare: lw,
            },
            None,
            game.eta,
        );
    }
    Ok((report.finish(game.eta), result))
}
