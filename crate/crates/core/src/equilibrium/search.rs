//! Exhaustive pure-equilibrium scan over a finite strategic-form game.
//!
//! Profiles are indexed in mixed radix with player 0 as the most significant
//! digit. Best-response values are cached per opponent profile and computed
//! on first use, so each is evaluated at most once across the whole scan.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::mechanism::Utility;

pub(crate) trait FiniteGame: Sync {
    fn num_players(&self) -> usize;

    fn num_strategies(&self, player: usize) -> usize;

    /// Utilities of every player at a profile of strategy indices.
    fn utilities(&self, profile: &[usize]) -> Vec<Utility>;

    /// Best response of `player` against the other entries of `profile`,
    /// taking the lowest strategy index among maximizers.
    fn best_response(&self, player: usize, profile: &[usize]) -> (usize, Utility) {
        let mut trial = profile.to_vec();
        let mut best = (0, Utility::BudgetOverrun);
        for s in 0..self.num_strategies(player) {
            trial[player] = s;
            let u = self.utilities(&trial)[player];
            if s == 0 || u > best.1 {
                best = (s, u);
            }
        }
        best
    }
}

pub(crate) fn profile_count<G: FiniteGame + ?Sized>(game: &G) -> u128 {
    (0..game.num_players())
        .map(|i| game.num_strategies(i) as u128)
        .try_fold(1u128, |acc, k| acc.checked_mul(k))
        .unwrap_or(u128::MAX)
}

pub(crate) fn decode(mut index: u64, radix: &[usize], out: &mut [usize]) {
    for i in (0..radix.len()).rev() {
        out[i] = (index % radix[i] as u64) as usize;
        index /= radix[i] as u64;
    }
}

/// Index of the opponents' sub-profile when `player` is removed.
fn others_index(profile: &[usize], radix: &[usize], player: usize) -> usize {
    profile
        .iter()
        .zip(radix)
        .enumerate()
        .filter(|(l, _)| *l != player)
        .fold(0usize, |acc, (_, (&s, &k))| acc * k + s)
}

/// `u + eps >= best`, with `eta` slack; an overrun never passes.
pub(crate) fn within(u: Utility, best: Utility, eps: f64, eta: f64) -> bool {
    match (u, best) {
        (Utility::BudgetOverrun, _) => matches!(best, Utility::BudgetOverrun),
        (_, Utility::BudgetOverrun) => true,
        (Utility::Finite(u), Utility::Finite(b)) => u + eps + eta >= b,
    }
}

const CHUNK: u64 = 4096;

/// Indices of every profile at which no player gains more than `eps` by a
/// unilateral deviation, in increasing order.
pub(crate) fn equilibrium_profiles<G: FiniteGame>(game: &G, eps: f64, eta: f64) -> Vec<u64> {
    let n = game.num_players();
    let radix: Vec<usize> = (0..n).map(|i| game.num_strategies(i)).collect();
    let total = profile_count(game) as u64;
    if total == 0 {
        return Vec::new();
    }
    let caches: Vec<Vec<OnceLock<Utility>>> = (0..n)
        .map(|i| {
            let size: usize = radix
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != i)
                .map(|(_, &k)| k)
                .product();
            (0..size).map(|_| OnceLock::new()).collect()
        })
        .collect();

    let chunks = total.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let end = (start + CHUNK).min(total);
            let mut profile = vec![0usize; n];
            let mut found = Vec::new();
            for index in start..end {
                decode(index, &radix, &mut profile);
                let utils = game.utilities(&profile);
                let stable = (0..n).all(|i| {
                    if utils[i].is_overrun() {
                        return false;
                    }
                    let key = others_index(&profile, &radix, i);
                    let best = *caches[i][key].get_or_init(|| game.best_response(i, &profile).1);
                    within(utils[i], best, eps, eta)
                });
                if stable {
                    found.push(index);
                }
            }
            found
        })
        .collect();
    per_chunk.into_iter().flatten().collect()
}
