//! VCG over bundle bids with Clarke payments and budget-aware utilities, plus
//! grid equilibrium search over bundle-bid tables.
//!
//! Allocations are found by scanning all `n^m` item assignments in
//! lexicographic order (item 0 most significant); the first assignment of
//! maximum reported welfare wins.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{Limits, DEFAULT_ETA};
use crate::equilibrium::search::{equilibrium_profiles, profile_count, FiniteGame};
use crate::equilibrium::{
    check_profile_cap, default_max_bid, BidGrid, EquilibriumEntry, EquilibriumReport, Profile,
    SearchMode, SearchOptions,
};
use crate::error::{Error, Result};
use crate::mechanism::{Allocation, Outcome, Utility};
use crate::valuations::{Bundle, Instance};
use crate::welfare::{assignment_count, liquid_welfare, optimal_liquid_welfare};

/// Reported bundle values `b_i(S)`, one row of `2^m` entries per player
/// indexed by bundle mask; `b_i(∅) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BundleBidTable {
    items: usize,
    bids: Vec<Vec<f64>>,
}

impl BundleBidTable {
    pub fn new(items: usize, bids: Vec<Vec<f64>>) -> Result<Self> {
        if items == 0 || items > Limits::default().max_items {
            return Err(Error::InvalidBid(format!("unsupported item count {items}")));
        }
        if bids.is_empty() {
            return Err(Error::InvalidBid("bid table has no players".into()));
        }
        for (i, row) in bids.iter().enumerate() {
            if row.len() != 1 << items {
                return Err(Error::InvalidBid(format!(
                    "player {i} has {} bundle bids, expected {}",
                    row.len(),
                    1usize << items
                )));
            }
            if row[0] != 0.0 {
                return Err(Error::InvalidBid(format!("player {i} bids {} on the empty bundle", row[0])));
            }
            if let Some(b) = row.iter().find(|b| !b.is_finite() || **b < 0.0) {
                return Err(Error::InvalidBid(format!("player {i} has bundle bid {b}")));
            }
        }
        Ok(Self { items, bids })
    }

    /// Every player reports her true valuation.
    pub fn truthful(inst: &Instance) -> Self {
        Self {
            items: inst.items(),
            bids: inst.value_tables(),
        }
    }

    pub fn zeros(players: usize, items: usize) -> Self {
        Self {
            items,
            bids: vec![vec![0.0; 1 << items]; players],
        }
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn num_players(&self) -> usize {
        self.bids.len()
    }

    pub fn bid(&self, player: usize, bundle: Bundle) -> f64 {
        self.bids[player][bundle.mask() as usize]
    }

    pub fn row(&self, player: usize) -> &[f64] {
        &self.bids[player]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.bids
    }

    pub fn with_row(&self, player: usize, row: Vec<f64>) -> Result<Self> {
        let mut bids = self.bids.clone();
        bids[player] = row;
        Self::new(self.items, bids)
    }

    /// Reported welfare `Σ_i b_i(X_i)`.
    pub fn reported_welfare(&self, alloc: &Allocation) -> f64 {
        alloc
            .bundles()
            .iter()
            .enumerate()
            .map(|(i, b)| self.bid(i, *b))
            .sum()
    }

    fn check_shape(&self, inst: &Instance) -> Result<()> {
        if self.items != inst.items() || self.num_players() != inst.num_players() {
            return Err(Error::InvalidBid(format!(
                "bid table is {} players x {} items, instance is {} x {}",
                self.num_players(),
                self.items,
                inst.num_players(),
                inst.items()
            )));
        }
        Ok(())
    }
}

/// Winning assignment and Clarke payments for rows of bundle bids.
struct Scan {
    assignment: Vec<usize>,
    payments: Vec<f64>,
}

fn scan(rows: &[&[f64]], items: usize, eta: f64) -> Scan {
    let n = rows.len();
    let total = n.pow(items as u32);
    let mut digits = vec![0usize; items];
    let mut masks = vec![0usize; n];
    let mut best_total = f64::NEG_INFINITY;
    let mut best_index = 0;
    let mut best_without = vec![f64::NEG_INFINITY; n];
    let mut contrib = vec![0.0; n];
    for index in 0..total {
        let mut rest = index;
        for j in (0..items).rev() {
            digits[j] = rest % n;
            rest /= n;
        }
        masks.iter_mut().for_each(|x| *x = 0);
        for (j, &i) in digits.iter().enumerate() {
            masks[i] |= 1 << j;
        }
        let mut sum = 0.0;
        for i in 0..n {
            contrib[i] = rows[i][masks[i]];
            sum += contrib[i];
        }
        if sum > best_total + eta {
            best_total = sum;
            best_index = index;
        }
        for i in 0..n {
            best_without[i] = best_without[i].max(sum - contrib[i]);
        }
    }
    let mut assignment = vec![0usize; items];
    let mut rest = best_index;
    for j in (0..items).rev() {
        assignment[j] = rest % n;
        rest /= n;
    }
    masks.iter_mut().for_each(|x| *x = 0);
    for (j, &i) in assignment.iter().enumerate() {
        masks[i] |= 1 << j;
    }
    let payments = (0..n)
        .map(|i| {
            let others = best_total - rows[i][masks[i]];
            (best_without[i] - others).clamp(0.0, rows[i][masks[i]])
        })
        .collect();
    Scan {
        assignment,
        payments,
    }
}

fn check_size(bids: &BundleBidTable, limits: &Limits) -> Result<()> {
    let count = assignment_count(bids.num_players(), bids.items());
    if count > limits.max_assignments {
        return Err(Error::too_large("assignment space", count, limits.max_assignments));
    }
    Ok(())
}

fn row_refs(bids: &BundleBidTable) -> Vec<&[f64]> {
    bids.bids.iter().map(Vec::as_slice).collect()
}

/// A reported-welfare maximizing allocation.
pub fn vcg_allocate(bids: &BundleBidTable) -> Result<Allocation> {
    check_size(bids, &Limits::default())?;
    let s = scan(&row_refs(bids), bids.items(), DEFAULT_ETA);
    Allocation::new(s.assignment, bids.num_players())
}

/// Clarke payments: the others' best reported welfare without `i` minus their
/// reported welfare at `alloc`.
pub fn vcg_payments(bids: &BundleBidTable, alloc: &Allocation) -> Result<Vec<f64>> {
    check_size(bids, &Limits::default())?;
    if alloc.items() != bids.items() || alloc.num_players() != bids.num_players() {
        return Err(Error::InvalidAllocation("allocation does not match the bid table".into()));
    }
    let rows = row_refs(bids);
    let n = bids.num_players();
    let reported = bids.reported_welfare(alloc);
    (0..n)
        .map(|i| {
            let mut without = rows.clone();
            let zero = vec![0.0; 1 << bids.items()];
            without[i] = &zero;
            let s = scan(&without, bids.items(), DEFAULT_ETA);
            let best: f64 = s
                .assignment
                .iter()
                .enumerate()
                .fold(vec![0usize; n], |mut masks, (j, &l)| {
                    masks[l] |= 1 << j;
                    masks
                })
                .iter()
                .enumerate()
                .map(|(l, &mask)| without[l][mask])
                .sum();
            let own = bids.bid(i, alloc.bundle(i));
            Ok((best - (reported - own)).clamp(0.0, own))
        })
        .collect()
}

pub type VcgOutcome = Outcome;

/// Allocation, Clarke payments and budget-aware utilities.
pub fn vcg_outcome(inst: &Instance, bids: &BundleBidTable, eta: f64) -> Result<VcgOutcome> {
    bids.check_shape(inst)?;
    check_size(bids, &Limits::default())?;
    let s = scan(&row_refs(bids), bids.items(), eta);
    let allocation = Allocation::new(s.assignment, inst.num_players())?;
    Ok(Outcome::assemble(inst, allocation, s.payments, eta))
}

/// First bundle with `b_i(S) > min{v_i(S), c_i} + eta`.
pub fn bundle_conservative_violation(inst: &Instance, player: usize, row: &[f64], eta: f64) -> Option<Bundle> {
    let p = inst.player(player);
    let values = p.valuation.tabulate();
    let cap = p.budget.as_f64();
    (1..row.len())
        .find(|&mask| row[mask] > values[mask].min(cap) + eta)
        .map(|mask| Bundle::from_mask(mask as u32))
}

/// Which bundle-bid tables a player may use in the equilibrium search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcgStrategySpace {
    /// Two items only: zero on one singleton and a common scalar on the other
    /// singleton and the pair, or a scalar on the pair alone.
    #[default]
    Structured,
    /// Every table with grid entries on all nonempty bundles.
    FullGrid,
}

impl FromStr for VcgStrategySpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(VcgStrategySpace::Structured),
            "full-grid" | "full_grid" => Ok(VcgStrategySpace::FullGrid),
            other => Err(Error::InvalidParam(format!("unknown VCG strategy space '{other}'"))),
        }
    }
}

impl fmt::Display for VcgStrategySpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VcgStrategySpace::Structured => "structured",
            VcgStrategySpace::FullGrid => "full-grid",
        })
    }
}

/// VCG played on a fixed instance.
#[derive(Clone, Debug)]
pub struct VcgGame {
    instance: Instance,
    eta: f64,
    conservative: bool,
    limits: Limits,
}

impl VcgGame {
    pub fn new(instance: Instance) -> Self {
        Self {
            instance,
            eta: DEFAULT_ETA,
            conservative: true,
            limits: Limits::default(),
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

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

    pub fn outcome(&self, bids: &BundleBidTable) -> Result<Outcome> {
        vcg_outcome(&self.instance, bids, self.eta)
    }

    pub fn default_grid(&self, step: f64) -> Result<BidGrid> {
        BidGrid::covering(step, default_max_bid(&self.instance))
    }

    /// Tables available to `player`, sorted lexicographically and deduplicated.
    pub fn strategy_space(
        &self,
        player: usize,
        grid: &BidGrid,
        space: VcgStrategySpace,
    ) -> Result<Vec<Vec<f64>>> {
        let m = self.instance.items();
        let size = 1usize << m;
        let mut tables = match space {
            VcgStrategySpace::Structured => {
                if m != 2 {
                    return Err(Error::InvalidParam(format!(
                        "structured VCG strategies need exactly 2 items, got {m}"
                    )));
                }
                grid.values()
                    .into_iter()
                    .flat_map(|s| [vec![0.0, 0.0, s, s], vec![0.0, s, 0.0, s], vec![0.0, 0.0, 0.0, s]])
                    .collect::<Vec<_>>()
            }
            VcgStrategySpace::FullGrid => {
                let per = grid.top_level() as u128 + 1;
                let raw = per.checked_pow(size as u32 - 1).unwrap_or(u128::MAX);
                if raw > self.limits.max_strategies {
                    return Err(Error::too_large("bundle strategy space", raw, self.limits.max_strategies));
                }
                let values = grid.values();
                let mut out = Vec::new();
                let mut digits = vec![0usize; size - 1];
                loop {
                    let mut row = vec![0.0; size];
                    for (k, &d) in digits.iter().enumerate() {
                        row[k + 1] = values[d];
                    }
                    out.push(row);
                    let mut pos = digits.len();
                    loop {
                        if pos == 0 {
                            break;
                        }
                        pos -= 1;
                        digits[pos] += 1;
                        if digits[pos] < values.len() {
                            break;
                        }
                        digits[pos] = 0;
                    }
                    if digits.iter().all(|&d| d == 0) {
                        break;
                    }
                }
                out
            }
        };
        if self.conservative {
            tables.retain(|row| bundle_conservative_violation(&self.instance, player, row, self.eta).is_none());
        }
        tables.sort_by(|a, b| a.partial_cmp(b).expect("grid values are finite"));
        tables.dedup();
        Ok(tables)
    }
}

struct VcgGridGame<'a> {
    game: &'a VcgGame,
    spaces: Vec<Vec<Vec<f64>>>,
    tables: Vec<Vec<f64>>,
}

impl VcgGridGame<'_> {
    fn bids(&self, profile: &[usize]) -> BundleBidTable {
        BundleBidTable {
            items: self.game.instance.items(),
            bids: profile
                .iter()
                .enumerate()
                .map(|(l, &s)| self.spaces[l][s].clone())
                .collect(),
        }
    }
}

impl FiniteGame for VcgGridGame<'_> {
    fn num_players(&self) -> usize {
        self.spaces.len()
    }

    fn num_strategies(&self, player: usize) -> usize {
        self.spaces[player].len()
    }

    fn utilities(&self, profile: &[usize]) -> Vec<Utility> {
        let rows: Vec<&[f64]> = profile
            .iter()
            .enumerate()
            .map(|(l, &s)| self.spaces[l][s].as_slice())
            .collect();
        let s = scan(&rows, self.game.instance.items(), self.game.eta);
        let mut masks = vec![0usize; rows.len()];
        for (j, &i) in s.assignment.iter().enumerate() {
            masks[i] |= 1 << j;
        }
        (0..rows.len())
            .map(|i| {
                let p = self.game.instance.player(i);
                Utility::from_parts(self.tables[i][masks[i]], s.payments[i], p.budget, self.game.eta)
            })
            .collect()
    }
}

/// Scans every profile of bundle-bid tables and reports all ε-equilibria.
pub fn enumerate_vcg_equilibria(
    game: &VcgGame,
    grid: &BidGrid,
    space: VcgStrategySpace,
    opts: &SearchOptions,
) -> Result<EquilibriumReport> {
    let spaces = (0..game.instance.num_players())
        .map(|i| game.strategy_space(i, grid, space))
        .collect::<Result<Vec<_>>>()?;
    let finite = VcgGridGame {
        game,
        spaces,
        tables: game.instance.value_tables(),
    };
    let count = profile_count(&finite);
    check_profile_cap(count, &game.limits)?;
    let found = equilibrium_profiles(&finite, opts.eps, game.eta);
    let optimum = optimal_liquid_welfare(&game.instance, &game.limits, game.eta)?;
    let mut report = EquilibriumReport::new(
        "vcg".into(),
        *grid,
        opts.eps,
        SearchMode::Exhaustive,
        game.conservative,
        optimum,
    );
    report.profiles_scanned = count;
    let radix: Vec<usize> = finite.spaces.iter().map(Vec::len).collect();
    let mut profile = vec![0usize; radix.len()];
    for index in found {
        crate::equilibrium::search::decode(index, &radix, &mut profile);
        let bids = finite.bids(&profile);
        let outcome = game.outcome(&bids)?;
        let lw = liquid_welfare(&game.instance, &outcome.allocation)?;
        report.push(
            EquilibriumEntry {
                bids: Profile::Bundles(bids),
                outcome,
                liquid_welfare: lw,
            },
            opts.max_stored,
            game.eta,
        );
    }
    Ok(report.finish(game.eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuations::{Budget, PlayerProfile, ValuationFunction};

    fn additive(w: &[f64], budget: Budget) -> PlayerProfile {
        PlayerProfile::new(ValuationFunction::additive(w.to_vec()).unwrap(), budget)
    }

    /// Values ((1, 1-α), (0, 1)), budgets (1, 1-ε).
    fn budget_trap(alpha: f64, eps: f64) -> Instance {
        Instance::new(
            2,
            vec![
                additive(&[1.0, 1.0 - alpha], Budget::Finite(1.0)),
                additive(&[0.0, 1.0], Budget::Finite(1.0 - eps)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn truthful_split_and_payment() {
        let inst = budget_trap(0.05, 0.1);
        let bids = BundleBidTable::truthful(&inst);
        let alloc = vcg_allocate(&bids).unwrap();
        assert_eq!(alloc.assignment(), &[0, 1]);
        let pay = vcg_payments(&bids, &alloc).unwrap();
        assert!((pay[0] - 0.0).abs() < 1e-12);
        assert!((pay[1] - 0.95).abs() < 1e-12);
        let out = vcg_outcome(&inst, &bids, 1e-9).unwrap();
        assert_eq!(out.payments, pay);
        assert_eq!(out.utilities[1], Utility::BudgetOverrun);
        assert_eq!(out.utilities[0], Utility::Finite(1.0));
    }

    #[test]
    fn equal_additive_values_tie_to_first_assignment() {
        // v0 = (1,1), v1 = (0,1): both (0,0) and (0,1) report welfare 2
        let bids = BundleBidTable::new(2, vec![vec![0.0, 1.0, 1.0, 2.0], vec![0.0, 0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(vcg_allocate(&bids).unwrap().assignment(), &[0, 0]);
    }

    #[test]
    fn single_player_gets_everything_for_free() {
        let bids = BundleBidTable::new(2, vec![vec![0.0, 0.3, 0.4, 0.5]]).unwrap();
        let alloc = vcg_allocate(&bids).unwrap();
        assert_eq!(alloc.assignment(), &[0, 0]);
        assert_eq!(vcg_payments(&bids, &alloc).unwrap(), vec![0.0]);
    }

    #[test]
    fn pair_bidder_pays_rival_singleton_bid() {
        let inst = budget_trap(0.05, 0.1);
        let bids = BundleBidTable::new(2, vec![vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 0.9, 0.9]]).unwrap();
        let out = vcg_outcome(&inst, &bids, 1e-9).unwrap();
        assert_eq!(out.allocation.assignment(), &[0, 0]);
        assert!((out.payments[0] - 0.9).abs() < 1e-12);
        assert_eq!(out.payments[1], 0.0);
        match out.utilities[0] {
            Utility::Finite(u) => assert!((u - 1.05).abs() < 1e-12),
            Utility::BudgetOverrun => panic!("unexpected overrun"),
        }
    }

    #[test]
    fn zero_bids_pay_nothing() {
        let inst = budget_trap(0.05, 0.1);
        let out = vcg_outcome(&inst, &BundleBidTable::zeros(2, 2), 1e-9).unwrap();
        assert_eq!(out.allocation.assignment(), &[0, 0]);
        assert_eq!(out.payments, vec![0.0, 0.0]);
        assert_eq!(out.utilities, vec![Utility::Finite(1.95), Utility::Finite(0.0)]);
    }

    #[test]
    fn table_validation() {
        assert!(BundleBidTable::new(2, vec![vec![0.0, 1.0, 1.0]]).is_err());
        assert!(BundleBidTable::new(2, vec![vec![1.0, 1.0, 1.0, 1.0]]).is_err());
        assert!(BundleBidTable::new(2, vec![vec![0.0, -1.0, 1.0, 1.0]]).is_err());
    }

    #[test]
    fn structured_space_shape() {
        let inst = budget_trap(0.05, 0.1);
        let game = VcgGame::new(inst.clone()).with_conservative(false);
        let grid = BidGrid::new(0.5, 1.0).unwrap();
        // 3 shapes x 3 values, the zero table counted once
        assert_eq!(game.strategy_space(0, &grid, VcgStrategySpace::Structured).unwrap().len(), 7);
        let game = VcgGame::new(inst);
        // player 1 values item 0 at zero, so only the first and last shapes survive, capped at 0.9
        let space = game.strategy_space(1, &grid, VcgStrategySpace::Structured).unwrap();
        assert_eq!(
            space,
            vec![vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.5], vec![0.0, 0.0, 0.5, 0.5]]
        );
    }

    #[test]
    fn full_grid_space_counts() {
        let inst = budget_trap(0.05, 0.1);
        let game = VcgGame::new(inst).with_conservative(false);
        let grid = BidGrid::new(0.5, 1.0).unwrap();
        assert_eq!(game.strategy_space(0, &grid, VcgStrategySpace::FullGrid).unwrap().len(), 27);
    }

    #[test]
    fn structured_search_finds_the_trap() {
        let inst = budget_trap(0.05, 0.1);
        let game = VcgGame::new(inst);
        let grid = game.default_grid(0.05).unwrap();
        let report =
            enumerate_vcg_equilibria(&game, &grid, VcgStrategySpace::Structured, &SearchOptions::default())
                .unwrap();
        assert!(report.equilibrium_count > 0);
        for e in &report.equilibria {
            assert_eq!(e.outcome.allocation.assignment(), &[0, 0]);
        }
        let (_, lpos) = report.ratios().unwrap();
        assert!((lpos - 1.9).abs() < 1e-9);
    }
}
