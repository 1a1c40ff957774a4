//! Liquid welfare, brute-force optimal allocations and empirical LPoA/LPoS.

use serde::Serialize;

use crate::config::Limits;
use crate::error::{Error, Result};
use crate::mechanism::Allocation;
use crate::valuations::{Bundle, Instance};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WelfareSummary {
    pub allocation: Allocation,
    pub liquid_welfare: f64,
    /// Uncapped total value, kept for diagnostics.
    pub social_welfare: f64,
}

fn check_allocation(inst: &Instance, alloc: &Allocation) -> Result<()> {
    if alloc.items() != inst.items() || alloc.num_players() != inst.num_players() {
        return Err(Error::InvalidAllocation(format!(
            "allocation covers {} items and {} players, instance has {} and {}",
            alloc.items(),
            alloc.num_players(),
            inst.items(),
            inst.num_players()
        )));
    }
    Ok(())
}

/// `LW(X) = Σ_i min{v_i(X_i), c_i}`.
pub fn liquid_welfare(inst: &Instance, alloc: &Allocation) -> Result<f64> {
    check_allocation(inst, alloc)?;
    Ok(liquid_welfare_of_bundles(inst, &alloc.bundles()))
}

pub fn social_welfare(inst: &Instance, alloc: &Allocation) -> Result<f64> {
    check_allocation(inst, alloc)?;
    Ok(alloc
        .bundles()
        .iter()
        .zip(inst.players())
        .map(|(b, p)| p.valuation.value(*b))
        .sum())
}

pub(crate) fn liquid_welfare_of_bundles(inst: &Instance, bundles: &[Bundle]) -> f64 {
    bundles
        .iter()
        .zip(inst.players())
        .map(|(b, p)| p.budget.cap(p.valuation.value(*b)))
        .sum()
}

/// `n^m`, saturating.
pub(crate) fn assignment_count(players: usize, items: usize) -> u128 {
    (players as u128).checked_pow(items as u32).unwrap_or(u128::MAX)
}

/// Scans all `n^m` item assignments in lexicographic order and returns the
/// first one attaining the maximum liquid welfare.
pub fn optimal_liquid_welfare(inst: &Instance, limits: &Limits, eta: f64) -> Result<WelfareSummary> {
    let (n, m) = (inst.num_players(), inst.items());
    let count = assignment_count(n, m);
    if count > limits.max_assignments {
        return Err(Error::too_large("assignment space", count, limits.max_assignments));
    }
    let tables = inst.value_tables();
    let caps: Vec<f64> = inst.players().iter().map(|p| p.budget.as_f64()).collect();

    let mut assignment = vec![0usize; m];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut masks = vec![0u32; n];
    loop {
        masks.iter_mut().for_each(|x| *x = 0);
        for (j, &i) in assignment.iter().enumerate() {
            masks[i] |= 1 << j;
        }
        let lw: f64 = (0..n)
            .map(|i| tables[i][masks[i] as usize].min(caps[i]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| lw > b + eta) {
            best = Some((lw, assignment.clone()));
        }
        // advance the last digit first so vectors come out in lexicographic order
        let mut pos = m;
        loop {
            if pos == 0 {
                let (lw, assignment) = best.expect("at least one assignment");
                let allocation = Allocation::new(assignment, n)?;
                let social_welfare = social_welfare(inst, &allocation)?;
                return Ok(WelfareSummary {
                    allocation,
                    liquid_welfare: lw,
                    social_welfare,
                });
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < n {
                break;
            }
            assignment[pos] = 0;
        }
    }
}

/// `opt / lw` with the conventions `0/0 = 1` and `x/0 = ∞`.
pub fn welfare_ratio(opt: f64, lw: f64, eta: f64) -> f64 {
    if lw <= eta {
        if opt <= eta {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        opt / lw
    }
}

/// Empirical `(LPoA, LPoS)`: the optimum divided by the worst and best
/// equilibrium liquid welfare.
pub fn ratio_report(opt_lw: f64, equilibrium_lws: &[f64], eta: f64) -> Result<(f64, f64)> {
    if equilibrium_lws.is_empty() {
        return Err(Error::NoEquilibriumFound);
    }
    let min = equilibrium_lws.iter().copied().fold(f64::INFINITY, f64::min);
    let max = equilibrium_lws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((welfare_ratio(opt_lw, min, eta), welfare_ratio(opt_lw, max, eta)))
}
