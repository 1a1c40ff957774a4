//! Independent brute-force oracles used to cross-check the library.

#![allow(dead_code)]

use std::collections::HashMap;

use liquid_welfare::equilibrium::{BidGrid, Game};
use liquid_welfare::{is_conservative, BidMatrix, Bundle, Instance, Utility};

pub const ETA: f64 = 1e-9;

/// Maximum liquid welfare by assigning items one at a time, memoized on the
/// bundles handed out so far.
pub fn recursive_opt_lw(inst: &Instance) -> f64 {
    fn go(inst: &Instance, item: usize, bundles: &mut Vec<u32>, memo: &mut HashMap<(usize, Vec<u32>), f64>) -> f64 {
        if item == inst.items() {
            return bundles
                .iter()
                .zip(inst.players())
                .map(|(&b, p)| p.budget.cap(p.valuation.evaluate(Bundle::from_mask(b)).unwrap()))
                .sum();
        }
        if let Some(&v) = memo.get(&(item, bundles.clone())) {
            return v;
        }
        let mut best = f64::NEG_INFINITY;
        for i in 0..bundles.len() {
            bundles[i] |= 1 << item;
            best = best.max(go(inst, item + 1, bundles, memo));
            bundles[i] &= !(1 << item);
        }
        memo.insert((item, bundles.clone()), best);
        best
    }
    go(inst, 0, &mut vec![0; inst.num_players()], &mut HashMap::new())
}

/// Maximum of `Σ_i table_i(X_i)` over all assignments of `items` items.
pub fn max_table_welfare(tables: &[Vec<f64>], items: usize) -> f64 {
    fn go(tables: &[Vec<f64>], item: usize, items: usize, masks: &mut Vec<usize>) -> f64 {
        if item == items {
            return masks.iter().zip(tables).map(|(&m, t)| t[m]).sum();
        }
        let mut best = f64::NEG_INFINITY;
        for i in 0..masks.len() {
            masks[i] |= 1 << item;
            best = best.max(go(tables, item + 1, items, masks));
            masks[i] &= !(1 << item);
        }
        best
    }
    go(tables, 0, items, &mut vec![0; tables.len()])
}

/// The covered subset: among all `T ⊆ S` with `v(T) <= Σ_{j∈T} opp_max_j + eta`,
/// the one of largest size, smallest mask on ties.
pub fn covered_subset_oracle(values: &[f64], opp_max: &[f64], s: u32, eta: f64) -> u32 {
    let mut best: Option<u32> = None;
    for t in 0..=s {
        if t & s != t {
            continue;
        }
        let sum: f64 = (0..32).filter(|j| t >> j & 1 == 1).map(|j| opp_max[j]).sum();
        if values[t as usize] <= sum + eta {
            let better = match best {
                None => true,
                Some(b) => t.count_ones() > b.count_ones(),
            };
            if better {
                best = Some(t);
            }
        }
    }
    best.unwrap()
}

/// All grid vectors of length `m` over `grid`, lexicographic.
pub fn grid_vectors(grid: &BidGrid, m: usize) -> Vec<Vec<f64>> {
    let values = grid.values();
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|v: Vec<f64>| {
                values.iter().map(move |&x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

/// Largest unilateral grid gain of any player, scanning every conservative
/// vector through full outcome evaluation. `None` if a player is overrun
/// while some deviation is not.
pub fn max_deviation_gain(game: &Game, bids: &BidMatrix, grid: &BidGrid) -> f64 {
    let inst = game.instance();
    let base = game.outcome(bids).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..inst.num_players() {
        for y in grid_vectors(grid, inst.items()) {
            if game.conservative() && is_conservative(inst, i, &y, game.eta()).is_err() {
                continue;
            }
            let u = game.outcome(&bids.with_row(i, &y).unwrap()).unwrap().utilities[i];
            let gain = match (u, base.utilities[i]) {
                (Utility::BudgetOverrun, _) => continue,
                (Utility::Finite(_), Utility::BudgetOverrun) => f64::INFINITY,
                (Utility::Finite(a), Utility::Finite(b)) => a - b,
            };
            worst = worst.max(gain);
        }
    }
    worst
}
