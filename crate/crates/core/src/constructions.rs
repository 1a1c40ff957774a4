//! The covering deviation bid and its dichotomy check, plus generators for the
//! worked examples and lower-bound instances.
//!
//! The deviation: given player `i`, a bundle `S` and the opponents' bids, let
//! `T ⊆ S` be a maximum-cardinality subset with
//! `v_i(T) <= Σ_{j∈T} max_{ℓ≠i} b_ℓj`, and bid `max_{ℓ≠i} b_ℓj + δ` on every
//! item of `S \ T`, zero elsewhere. Either the deviation stays within budget
//! and earns at least `min{v_i(S), c_i} - Σ_{j∈S} max_{ℓ≠i} b_ℓj` (up to `δ|S|`),
//! or the opponents' bids on `S` already reach `min{v_i(S), c_i}`.

use serde::Serialize;

use crate::equilibrium::Game;
use crate::error::{Error, Result};
use crate::mechanism::{Allocation, BidMatrix, Utility};
use crate::valuations::{Budget, Bundle, Instance, PlayerProfile, ValuationFunction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "branch")]
pub enum DeviationBranch {
    /// Payment within budget; `utility >= bound - δ|S|` is the claim.
    WithinBudget { utility: f64, bound: f64 },
    /// Payment over budget; `lhs < rhs` is the claim, with
    /// `lhs = min{v_i(S), c_i}` and `rhs = Σ_{j∈S} max_{ℓ≠i} b_ℓj + δ|S|`.
    BudgetExceeded { lhs: f64, rhs: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationResult {
    pub player: usize,
    pub bundle: Bundle,
    /// The maximal subset `T` the opponents already cover.
    pub covered: Bundle,
    pub bids: Vec<f64>,
    pub delta: f64,
    pub branch: DeviationBranch,
}

fn covered_by(values: &[f64], opp_max: &[f64], t: Bundle, eta: f64) -> bool {
    values[t.mask() as usize] <= t.items().map(|j| opp_max[j]).sum::<f64>() + eta
}

/// Builds the deviation for `player` on `bundle` against the other rows of `bids`.
pub fn covering_deviation(
    game: &Game,
    player: usize,
    bundle: Bundle,
    bids: &BidMatrix,
    delta: f64,
) -> Result<DeviationResult> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let inst = game.instance();
    let m = inst.items();
    if !bundle.fits(m) {
        return Err(Error::InvalidBundle {
            mask: bundle.mask(),
            items: m,
        });
    }
    if player >= inst.num_players() {
        return Err(Error::InvalidParam(format!("no player {player}")));
    }
    let eta = game.eta();
    let values = inst.player(player).valuation.tabulate();
    let opp_max = bids.max_others(player);

    // subsets() runs in increasing mask order, so the first of maximum size wins
    let mut covered = Bundle::EMPTY;
    for t in bundle.subsets() {
        if t.len() > covered.len() && covered_by(&values, &opp_max, t, eta) {
            covered = t;
        }
    }
    let bidding = bundle.difference(covered);
    let y: Vec<f64> = (0..m)
        .map(|j| if bidding.contains(j) { opp_max[j] + delta } else { 0.0 })
        .collect();

    let outcome = game.outcome(&bids.with_row(player, &y)?)?;
    let profile = inst.player(player);
    let capped = profile.budget.cap(values[bundle.mask() as usize]);
    let opp_sum: f64 = bundle.items().map(|j| opp_max[j]).sum();
    let branch = match outcome.utilities[player] {
        Utility::Finite(utility) => DeviationBranch::WithinBudget {
            utility,
            bound: capped - opp_sum,
        },
        Utility::BudgetOverrun => DeviationBranch::BudgetExceeded {
            lhs: capped,
            rhs: opp_sum + delta * bundle.len() as f64,
        },
    };
    Ok(DeviationResult {
        player,
        bundle,
        covered,
        bids: y,
        delta,
        branch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "violation")]
pub enum DeviationViolation {
    /// The result does not match the construction for these inputs.
    Malformed { reason: String },
    /// Within budget, but the utility is below the bound.
    UtilityBelowBound { utility: f64, bound: f64 },
    /// Over budget, but the opponents' bids do not reach the capped value.
    ThresholdNotReached { lhs: f64, rhs: f64 },
    /// Some bundle `Q` has `Σ_{j∈Q} y_j > v_i(Q) + δ|Q ∩ (S \ T)|`.
    NotConservative { bundle: Bundle, bid_sum: f64, value: f64 },
    /// A strict superset of `T` inside `S` is covered as well.
    NotMaximal { superset: Bundle },
}

/// Re-derives every claim about `result` from scratch: the bid formula, the
/// dichotomy, value-conservativeness of the deviation and maximality of `T`.
pub fn verify_covering_deviation(
    result: &DeviationResult,
    game: &Game,
    bids: &BidMatrix,
) -> std::result::Result<(), DeviationViolation> {
    let inst = game.instance();
    let eta = game.eta();
    let i = result.player;
    let s = result.bundle;
    let t = result.covered;
    let delta = result.delta;
    let values = inst.player(i).valuation.tabulate();
    let opp_max = bids.max_others(i);
    let malformed = |reason: String| Err(DeviationViolation::Malformed { reason });

    if !t.is_subset_of(s) {
        return malformed(format!("covered set {t} is not inside {s}"));
    }
    if !covered_by(&values, &opp_max, t, eta) {
        return malformed(format!("covered set {t} is not covered"));
    }
    let bidding = s.difference(t);
    for (j, &y) in result.bids.iter().enumerate() {
        let expected = if bidding.contains(j) { opp_max[j] + delta } else { 0.0 };
        if y != expected {
            return malformed(format!("bid {y} on item {j}, expected {expected}"));
        }
    }

    let outcome = game
        .outcome(&bids.with_row(i, &result.bids).map_err(|e| DeviationViolation::Malformed {
            reason: e.to_string(),
        })?)
        .map_err(|e| DeviationViolation::Malformed { reason: e.to_string() })?;
    let capped = inst.player(i).budget.cap(values[s.mask() as usize]);
    let opp_sum: f64 = s.items().map(|j| opp_max[j]).sum();
    let slack = delta * s.len() as f64;
    match (result.branch, outcome.utilities[i]) {
        (DeviationBranch::WithinBudget { utility, bound }, Utility::Finite(u)) => {
            if utility != u || bound != capped - opp_sum {
                return malformed("within-budget branch fields do not match".into());
            }
            if u < bound - slack - eta {
                return Err(DeviationViolation::UtilityBelowBound { utility: u, bound });
            }
        }
        (DeviationBranch::BudgetExceeded { lhs, rhs }, Utility::BudgetOverrun) => {
            if lhs != capped || rhs != opp_sum + slack {
                return malformed("over-budget branch fields do not match".into());
            }
            if lhs >= rhs + eta {
                return Err(DeviationViolation::ThresholdNotReached { lhs, rhs });
            }
        }
        _ => return malformed("branch does not match the re-evaluated outcome".into()),
    }

    let m = inst.items();
    for q in Bundle::all(m) {
        let bid_sum: f64 = q.items().map(|j| result.bids[j]).sum();
        let value = values[q.mask() as usize];
        if bid_sum > value + delta * q.intersection(bidding).len() as f64 + eta {
            return Err(DeviationViolation::NotConservative {
                bundle: q,
                bid_sum,
                value,
            });
        }
    }
    for sup in s.subsets() {
        if t.is_subset_of(sup) && sup != t && covered_by(&values, &opp_max, sup, eta) {
            return Err(DeviationViolation::NotMaximal { superset: sup });
        }
    }
    Ok(())
}

fn unit_param(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::InvalidParam(format!("{name} must lie in (0, 1), got {x}")));
    }
    Ok(())
}

fn additive(weights: Vec<f64>, budget: Budget) -> Result<PlayerProfile> {
    Ok(PlayerProfile::new(ValuationFunction::additive(weights)?, budget))
}

/// One item, values `(λ, 2)`, budgets `(1, 2)`: the high-value player is
/// budget-poor, so social welfare and liquid welfare disagree.
pub fn budget_gap(lambda: f64) -> Result<Instance> {
    if !(lambda.is_finite() && lambda > 2.0) {
        return Err(Error::InvalidParam(format!("lambda must exceed 2, got {lambda}")));
    }
    Instance::new(
        1,
        vec![
            additive(vec![lambda], Budget::Finite(1.0))?,
            additive(vec![2.0], Budget::Finite(2.0))?,
        ],
    )
}

/// One item, values and budgets `(10, 0.01)`, with the profile where the poor
/// player bids 100 and the rich one 0. Under second price it is stable once
/// conservativeness is dropped.
pub fn overbidding() -> (Instance, BidMatrix) {
    let inst = Instance::new(
        1,
        vec![
            additive(vec![10.0], Budget::Finite(10.0)).expect("valid weights"),
            additive(vec![0.01], Budget::Finite(0.01)).expect("valid weights"),
        ],
    )
    .expect("valid instance");
    let bids = BidMatrix::new(vec![vec![0.0], vec![100.0]]).expect("valid bids");
    (inst, bids)
}

/// Two items, values `((1, 1), (0, 1))`, budgets `(1, 1 - ε)`. Every
/// equilibrium of a simple auction gives both items to player 0.
pub fn convex_lower_bound(eps: f64) -> Result<Instance> {
    unit_param("eps", eps)?;
    Instance::new(
        2,
        vec![
            additive(vec![1.0, 1.0], Budget::Finite(1.0))?,
            additive(vec![0.0, 1.0], Budget::Finite(1.0 - eps))?,
        ],
    )
}

/// Two items, values `((1, 1 - α), (0, 1))`, budgets `(1, 1 - ε)`, `0 < α < ε < 1`.
pub fn vcg_lower_bound(alpha: f64, eps: f64) -> Result<Instance> {
    unit_param("alpha", alpha)?;
    unit_param("eps", eps)?;
    if alpha >= eps {
        return Err(Error::InvalidParam(format!("need alpha < eps, got {alpha} >= {eps}")));
    }
    Instance::new(
        2,
        vec![
            additive(vec![1.0, 1.0 - alpha], Budget::Finite(1.0))?,
            additive(vec![0.0, 1.0], Budget::Finite(1.0 - eps))?,
        ],
    )
}

/// A symmetric instance plus the rule that turns one of its equilibrium
/// allocations into a second instance with a worse ratio.
#[derive(Clone, Debug)]
pub struct ShiftConstruction {
    pub symmetric: Instance,
    valuation: ValuationFunction,
    known_budgets: bool,
}

impl ShiftConstruction {
    /// Total value `V = v([m])`.
    pub fn total_value(&self) -> f64 {
        self.valuation.value(Bundle::full(self.symmetric.items()))
    }

    pub fn build(&self, alloc: &Allocation) -> Result<Instance> {
        let inst = &self.symmetric;
        if alloc.items() != inst.items() || alloc.num_players() != inst.num_players() {
            return Err(Error::InvalidAllocation("allocation does not match the instance".into()));
        }
        let worth: Vec<f64> = alloc.bundles().iter().map(|b| self.valuation.value(*b)).collect();
        let players = if self.known_budgets {
            // the richer bundle's owner gets the shift; ties go to player 1
            let shifted = if worth[0] > worth[1] { 0 } else { 1 };
            let total = self.total_value();
            (0..2)
                .map(|i| {
                    let valuation = if i == shifted {
                        self.valuation.shift(total)?
                    } else {
                        self.valuation.clone()
                    };
                    Ok(PlayerProfile::new(valuation, Budget::Finite(total)))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            let poorest = (0..worth.len())
                .min_by(|&a, &b| worth[a].total_cmp(&worth[b]))
                .expect("at least one player");
            (0..worth.len())
                .map(|i| {
                    if i == poorest {
                        Ok(PlayerProfile::new(self.valuation.clone(), Budget::Unbounded))
                    } else {
                        Ok(PlayerProfile::new(
                            self.valuation.shift(worth[i])?,
                            Budget::finite(worth[i])?,
                        ))
                    }
                })
                .collect::<Result<Vec<_>>>()?
        };
        Instance::new(inst.items(), players)
    }
}

fn symmetric_weights(m: usize, weights: Option<Vec<f64>>) -> Result<ValuationFunction> {
    let weights = weights.unwrap_or_else(|| vec![1.0; m]);
    if weights.len() != m {
        return Err(Error::InvalidParam(format!("{} weights for {m} items", weights.len())));
    }
    ValuationFunction::additive(weights)
}

/// `n` players sharing an additive valuation with unbounded budgets. The
/// builder keeps the player with the least valuable bundle as is and gives
/// every other player `i` the valuation `v + v(X_i)` with budget `v(X_i)`.
pub fn private_budget_lower_bound(
    n: usize,
    m: usize,
    weights: Option<Vec<f64>>,
) -> Result<ShiftConstruction> {
    if n == 0 || m < 2 * n {
        return Err(Error::InvalidParam(format!("need n >= 1 and m >= 2n, got n={n}, m={m}")));
    }
    let valuation = symmetric_weights(m, weights)?;
    let players = vec![PlayerProfile::new(valuation.clone(), Budget::Unbounded); n];
    Ok(ShiftConstruction {
        symmetric: Instance::new(m, players)?,
        valuation,
        known_budgets: false,
    })
}

/// Two players sharing an additive valuation with budgets `V = v([m])`. The
/// builder gives the owner of the more valuable bundle the valuation `v + V`.
pub fn known_budget_lower_bound(m: usize, weights: Option<Vec<f64>>) -> Result<ShiftConstruction> {
    if m < 2 {
        return Err(Error::InvalidParam(format!("need m >= 2, got {m}")));
    }
    let valuation = symmetric_weights(m, weights)?;
    let total = valuation.value(Bundle::full(m));
    let players = vec![PlayerProfile::new(valuation.clone(), Budget::finite(total)?); 2];
    Ok(ShiftConstruction {
        symmetric: Instance::new(m, players)?,
        valuation,
        known_budgets: true,
    })
}

/// `2 - (n-1)/m - 1/n`.
pub fn private_budget_bound(n: usize, m: usize) -> f64 {
    2.0 - (n as f64 - 1.0) / m as f64 - 1.0 / n as f64
}

/// `4/3 - 2/(3m)`.
pub fn known_budget_bound(m: usize) -> f64 {
    4.0 / 3.0 - 2.0 / (3.0 * m as f64)
}
