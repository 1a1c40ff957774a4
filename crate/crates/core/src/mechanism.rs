//! Simple simultaneous auctions: every item goes to its highest bidder, who
//! pays an amount that depends only on the bids for that item.
//!
//! Payments are order-statistic rules `p = Σ_k w_k · b_(k)` over the column
//! sorted in descending order. With `Σ w_k <= 1` and `w >= 0` the payment is
//! in `[0, max bid]`, continuous and non-decreasing in every bid. First price is
//! `w = (1, 0, ..)`, second price is `w = (0, 1, 0, ..)`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::valuations::{Budget, Bundle, Instance};

/// Per-player, per-item nonnegative bids `b_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct BidMatrix {
    players: usize,
    items: usize,
    bids: Vec<f64>,
}

fn check_bid(x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidBid(format!("bids must be finite and nonnegative, got {x}")));
    }
    Ok(())
}

impl BidMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let players = rows.len();
        let items = rows.first().map_or(0, Vec::len);
        if players == 0 || items == 0 {
            return Err(Error::InvalidBid("bid matrix must be nonempty".into()));
        }
        let mut bids = Vec::with_capacity(players * items);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != items {
                return Err(Error::InvalidBid(format!(
                    "row {i} has {} bids, expected {items}",
                    row.len()
                )));
            }
            for &b in &row {
                check_bid(b)?;
            }
            bids.extend(row);
        }
        Ok(Self { players, items, bids })
    }

    pub fn zeros(players: usize, items: usize) -> Self {
        Self {
            players,
            items,
            bids: vec![0.0; players * items],
        }
    }

    pub fn num_players(&self) -> usize {
        self.players
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn bid(&self, player: usize, item: usize) -> f64 {
        self.bids[player * self.items + item]
    }

    pub fn row(&self, player: usize) -> &[f64] {
        &self.bids[player * self.items..(player + 1) * self.items]
    }

    pub fn column(&self, item: usize) -> Vec<f64> {
        (0..self.players).map(|i| self.bid(i, item)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.players).map(|i| self.row(i).to_vec()).collect()
    }

    /// Replaces player `i`'s bids, giving `(y, b_{-i})`.
    pub fn with_row(&self, player: usize, row: &[f64]) -> Result<Self> {
        if row.len() != self.items || player >= self.players {
            return Err(Error::InvalidBid(format!(
                "row for player {player} must have {} bids",
                self.items
            )));
        }
        for &b in row {
            check_bid(b)?;
        }
        let mut next = self.clone();
        next.bids[player * self.items..(player + 1) * self.items].copy_from_slice(row);
        Ok(next)
    }

    /// `max_{ℓ != i} b_ℓj` for every item, zero when `i` is the only player.
    pub fn max_others(&self, player: usize) -> Vec<f64> {
        (0..self.items)
            .map(|j| {
                (0..self.players)
                    .filter(|&l| l != player)
                    .map(|l| self.bid(l, j))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub(crate) fn check_shape(&self, inst: &Instance) -> Result<()> {
        if self.players != inst.num_players() || self.items != inst.items() {
            return Err(Error::InvalidBid(format!(
                "bid matrix is {}x{}, instance is {}x{}",
                self.players,
                self.items,
                inst.num_players(),
                inst.items()
            )));
        }
        Ok(())
    }
}

impl Serialize for BidMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(serializer)
    }
}

/// Order-statistic payment rule: weights applied to the column sorted descending.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PaymentRule {
    weights: Vec<f64>,
}

impl PaymentRule {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidRule("weight vector is empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidRule(format!("weights must be nonnegative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(Error::InvalidRule(format!("weights sum to {total} > 1")));
        }
        Ok(Self { weights })
    }

    pub fn first_price(players: usize) -> Self {
        let mut weights = vec![0.0; players.max(1)];
        weights[0] = 1.0;
        Self { weights }
    }

    /// Second price. A lone bidder has no second bid and pays nothing.
    pub fn second_price(players: usize) -> Self {
        let mut weights = vec![0.0; players.max(1)];
        if players >= 2 {
            weights[1] = 1.0;
        }
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The payment for one item given its column of bids.
    pub fn payment(&self, column: &[f64]) -> Result<f64> {
        if column.len() != self.weights.len() {
            return Err(Error::InvalidRule(format!(
                "rule has {} weights, column has {} bids",
                self.weights.len(),
                column.len()
            )));
        }
        for &b in column {
            check_bid(b)?;
        }
        Ok(self.price(column))
    }

    pub(crate) fn price(&self, column: &[f64]) -> f64 {
        let mut sorted = [0.0f64; 16];
        let mut heap;
        let buf: &mut [f64] = if column.len() <= sorted.len() {
            let buf = &mut sorted[..column.len()];
            buf.copy_from_slice(column);
            buf
        } else {
            heap = column.to_vec();
            &mut heap
        };
        buf.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
        let p: f64 = self.weights.iter().zip(buf.iter()).map(|(w, b)| w * b).sum();
        // rounding can push a full-weight combination a hair past the top bid
        p.clamp(0.0, buf[0])
    }
}

/// Who receives an item when several players share the column maximum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

/// Item `j` goes to player `assignment[j]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Allocation {
    players: usize,
    assignment: Vec<usize>,
}

impl Allocation {
    pub fn new(assignment: Vec<usize>, players: usize) -> Result<Self> {
        if let Some((j, &i)) = assignment.iter().enumerate().find(|(_, &i)| i >= players) {
            return Err(Error::InvalidAllocation(format!(
                "item {j} assigned to player {i}, but there are {players} players"
            )));
        }
        Ok(Self { players, assignment })
    }

    /// Builds an allocation from per-player bundles, which must partition the items.
    pub fn from_bundles(bundles: &[Bundle], items: usize) -> Result<Self> {
        let mut assignment = vec![usize::MAX; items];
        for (i, b) in bundles.iter().enumerate() {
            if !b.fits(items) {
                return Err(Error::InvalidAllocation(format!("bundle {b} exceeds {items} items")));
            }
            for j in b.items() {
                if assignment[j] != usize::MAX {
                    return Err(Error::InvalidAllocation(format!("item {j} assigned twice")));
                }
                assignment[j] = i;
            }
        }
        if let Some(j) = assignment.iter().position(|&i| i == usize::MAX) {
            return Err(Error::InvalidAllocation(format!("item {j} is unassigned")));
        }
        Ok(Self {
            players: bundles.len(),
            assignment,
        })
    }

    pub fn num_players(&self) -> usize {
        self.players
    }

    pub fn items(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn winner(&self, item: usize) -> usize {
        self.assignment[item]
    }

    pub fn bundle(&self, player: usize) -> Bundle {
        Bundle::from_items(
            self.assignment
                .iter()
                .enumerate()
                .filter(|(_, &i)| i == player)
                .map(|(j, _)| j),
        )
    }

    pub fn bundles(&self) -> Vec<Bundle> {
        let mut out = vec![Bundle::EMPTY; self.players];
        for (j, &i) in self.assignment.iter().enumerate() {
            out[i] = out[i].with(j);
        }
        out
    }
}

/// A player's utility; `BudgetOverrun` stands for `-∞` and ranks below every finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Utility {
    Finite(f64),
    BudgetOverrun,
}

impl Utility {
    pub fn from_parts(value: f64, payment: f64, budget: Budget, eta: f64) -> Self {
        if budget.admits(payment, eta) {
            Utility::Finite(value - payment)
        } else {
            Utility::BudgetOverrun
        }
    }

    /// The utility as a float, `-∞` for an overrun.
    pub fn value(self) -> f64 {
        match self {
            Utility::Finite(u) => u,
            Utility::BudgetOverrun => f64::NEG_INFINITY,
        }
    }

    pub fn is_overrun(self) -> bool {
        matches!(self, Utility::BudgetOverrun)
    }
}

impl PartialOrd for Utility {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl fmt::Display for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Utility::Finite(u) => write!(f, "{u}"),
            Utility::BudgetOverrun => write!(f, "-inf"),
        }
    }
}

impl Serialize for Utility {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Utility::Finite(u) => serializer.serialize_f64(*u),
            Utility::BudgetOverrun => serializer.serialize_str("budget_overrun"),
        }
    }
}

/// Allocation, total payment per player and utilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub allocation: Allocation,
    pub payments: Vec<f64>,
    pub utilities: Vec<Utility>,
}

impl Outcome {
    pub(crate) fn assemble(
        inst: &Instance,
        allocation: Allocation,
        payments: Vec<f64>,
        eta: f64,
    ) -> Self {
        let utilities = inst
            .players()
            .iter()
            .zip(&payments)
            .enumerate()
            .map(|(i, (p, &pay))| {
                let value = p.valuation.value(allocation.bundle(i));
                Utility::from_parts(value, pay, p.budget, eta)
            })
            .collect();
        Self {
            allocation,
            payments,
            utilities,
        }
    }
}

/// An auction from the simple class: per-item highest bid wins, per-item payment rule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimpleAuction {
    pub rule: PaymentRule,
    pub tie_break: TieBreak,
}

impl SimpleAuction {
    pub fn new(rule: PaymentRule) -> Self {
        Self {
            rule,
            tie_break: TieBreak::default(),
        }
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    /// Selector string for this auction: `sfpa`, `sspa` or `convex:w1,...`.
    pub fn label(&self) -> String {
        let n = self.rule.weights().len();
        if self.rule == PaymentRule::first_price(n) {
            "sfpa".into()
        } else if n >= 2 && self.rule == PaymentRule::second_price(n) {
            "sspa".into()
        } else {
            MechanismSelector::Convex(self.rule.weights().to_vec()).to_string()
        }
    }

    pub(crate) fn winner(&self, column: &[f64]) -> usize {
        let mut best = 0;
        for (i, &b) in column.iter().enumerate().skip(1) {
            let better = match self.tie_break {
                TieBreak::LowestIndex => b > column[best],
                TieBreak::HighestIndex => b >= column[best],
            };
            if better {
                best = i;
            }
        }
        best
    }

    pub fn allocate(&self, bids: &BidMatrix) -> Allocation {
        let assignment = (0..bids.items()).map(|j| self.winner(&bids.column(j))).collect();
        Allocation {
            players: bids.num_players(),
            assignment,
        }
    }

    pub fn outcome(&self, inst: &Instance, bids: &BidMatrix, eta: f64) -> Result<Outcome> {
        bids.check_shape(inst)?;
        if self.rule.weights().len() != inst.num_players() {
            return Err(Error::InvalidRule(format!(
                "rule has {} weights for {} players",
                self.rule.weights().len(),
                inst.num_players()
            )));
        }
        let allocation = self.allocate(bids);
        let mut payments = vec![0.0; inst.num_players()];
        for j in 0..bids.items() {
            payments[allocation.winner(j)] += self.rule.price(&bids.column(j));
        }
        Ok(Outcome::assemble(inst, allocation, payments, eta))
    }
}

/// First bundle (in mask order) whose bid sum exceeds `min{v(S), c}` by more
/// than `eta`, given the bundle values as a table.
pub(crate) fn conservative_violation(
    values: &[f64],
    budget: Budget,
    row: &[f64],
    eta: f64,
) -> Option<Bundle> {
    let cap = budget.as_f64();
    let mut sums = vec![0.0f64; values.len()];
    for mask in 1..values.len() {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + row[low];
        if sums[mask] > values[mask].min(cap) + eta {
            return Some(Bundle::from_mask(mask as u32));
        }
    }
    None
}

/// Checks `Σ_{j∈S} b_ij <= min{v_i(S), c_i}` for all `2^m` bundles `S`,
/// returning the first violating bundle.
pub fn is_conservative(inst: &Instance, player: usize, bids: &[f64], eta: f64) -> Result<(), Bundle> {
    let p = inst.player(player);
    conservative_violation(&p.valuation.tabulate(), p.budget, bids, eta).map_or(Ok(()), Err)
}

/// Mechanism selector used on the command line: `sfpa`, `sspa`, `convex:w1,...,wn` or `vcg`.
#[derive(Clone, Debug, PartialEq)]
pub enum MechanismSelector {
    FirstPrice,
    SecondPrice,
    Convex(Vec<f64>),
    Vcg,
}

impl MechanismSelector {
    /// The simple auction for `players` bidders, or `None` for VCG.
    pub fn simple_auction(&self, players: usize) -> Result<Option<SimpleAuction>> {
        let rule = match self {
            MechanismSelector::FirstPrice => PaymentRule::first_price(players),
            MechanismSelector::SecondPrice => PaymentRule::second_price(players),
            MechanismSelector::Convex(w) => {
                if w.len() != players {
                    return Err(Error::InvalidRule(format!(
                        "convex rule has {} weights for {players} players",
                        w.len()
                    )));
                }
                PaymentRule::new(w.clone())?
            }
            MechanismSelector::Vcg => return Ok(None),
        };
        Ok(Some(SimpleAuction::new(rule)))
    }
}

impl FromStr for MechanismSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sfpa" => Ok(MechanismSelector::FirstPrice),
            "sspa" => Ok(MechanismSelector::SecondPrice),
            "vcg" => Ok(MechanismSelector::Vcg),
            other => {
                let list = other.strip_prefix("convex:").ok_or_else(|| {
                    Error::InvalidRule(format!("unknown mechanism '{other}'"))
                })?;
                let weights = list
                    .split(',')
                    .map(|w| {
                        w.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::InvalidRule(format!("bad weight '{w}': {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                PaymentRule::new(weights.clone())?;
                Ok(MechanismSelector::Convex(weights))
            }
        }
    }
}

impl fmt::Display for MechanismSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MechanismSelector::FirstPrice => write!(f, "sfpa"),
            MechanismSelector::SecondPrice => write!(f, "sspa"),
            MechanismSelector::Vcg => write!(f, "vcg"),
            MechanismSelector::Convex(w) => {
                let parts: Vec<String> = w.iter().map(|x| x.to_string()).collect();
                write!(f, "convex:{}", parts.join(","))
            }
        }
    }
}
