//! Seeded generators for random instances on a value grid `{0, 1/L, …, 1}`.
//!
//! Values are drawn as integer levels and divided by `L`, so every bundle
//! value is a grid point and at most 1.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::valuations::{Budget, Bundle, Instance, PlayerProfile, ValuationFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValuationClass {
    Additive,
    Xos,
    Subadditive,
}

pub const VALUATION_CLASSES: [ValuationClass; 3] =
    [ValuationClass::Additive, ValuationClass::Xos, ValuationClass::Subadditive];

fn levels_with_total_at_most<R: Rng>(rng: &mut R, m: usize, levels: u32) -> Vec<u32> {
    loop {
        let w: Vec<u32> = (0..m).map(|_| rng.gen_range(0..=levels)).collect();
        if w.iter().sum::<u32>() <= levels {
            return w;
        }
    }
}

fn to_values(w: &[u32], levels: u32) -> Vec<f64> {
    w.iter().map(|&k| k as f64 / levels as f64).collect()
}

/// Additive weights summing to at most 1.
pub fn random_additive<R: Rng>(rng: &mut R, m: usize, levels: u32) -> Result<ValuationFunction> {
    ValuationFunction::additive(to_values(&levels_with_total_at_most(rng, m, levels), levels))
}

/// One to three additive clauses, each summing to at most 1.
pub fn random_xos<R: Rng>(rng: &mut R, m: usize, levels: u32) -> Result<ValuationFunction> {
    let k = rng.gen_range(1..=3);
    let clauses = (0..k)
        .map(|_| to_values(&levels_with_total_at_most(rng, m, levels), levels))
        .collect();
    ValuationFunction::xos(clauses)
}

/// Monotone subadditive table, built in order of bundle size. Each value is
/// drawn between the largest value of a one-smaller subset and the smallest
/// value of a split into two disjoint parts, which keeps both properties.
pub fn random_subadditive_table<R: Rng>(rng: &mut R, m: usize, levels: u32) -> Result<ValuationFunction> {
    let size = 1usize << m;
    let mut order: Vec<usize> = (1..size).collect();
    order.sort_by_key(|&s| (s.count_ones(), s));
    let mut table = vec![0u32; size];
    for s in order {
        let lo = Bundle::from_mask(s as u32)
            .items()
            .map(|j| table[s & !(1 << j)])
            .max()
            .unwrap_or(0);
        let mut hi = levels;
        // proper nonempty submasks a, paired with their complement in s
        let mut a = (s - 1) & s;
        while a > 0 {
            hi = hi.min(table[a] + table[s & !a]);
            a = (a - 1) & s;
        }
        table[s] = rng.gen_range(lo..=hi);
    }
    ValuationFunction::table(m, table.iter().map(|&k| k as f64 / levels as f64).collect())
}

pub fn random_valuation<R: Rng>(
    rng: &mut R,
    class: ValuationClass,
    m: usize,
    levels: u32,
) -> Result<ValuationFunction> {
    match class {
        ValuationClass::Additive => random_additive(rng, m, levels),
        ValuationClass::Xos => random_xos(rng, m, levels),
        ValuationClass::Subadditive => random_subadditive_table(rng, m, levels),
    }
}

/// Unbounded with probability 1/2, otherwise a grid point of `[0, 1]`.
pub fn random_budget<R: Rng>(rng: &mut R, levels: u32) -> Budget {
    if rng.gen_bool(0.5) {
        Budget::Unbounded
    } else {
        Budget::Finite(rng.gen_range(0..=levels) as f64 / levels as f64)
    }
}

/// `n` players with independently drawn classes, valuations and budgets.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, m: usize, levels: u32) -> Result<Instance> {
    let players = (0..n)
        .map(|_| {
            let class = *VALUATION_CLASSES.choose(rng).expect("nonempty");
            let valuation = random_valuation(rng, class, m, levels)?;
            Ok(PlayerProfile::new(valuation, random_budget(rng, levels)))
        })
        .collect::<Result<Vec<_>>>()?;
    Instance::new(m, players)
}

/// A table that breaks monotonicity or subadditivity: a valid random table
/// with either a superset pushed below a subset or a union pushed above the
/// sum of two disjoint parts.
pub fn random_violating_table<R: Rng>(rng: &mut R, m: usize, levels: u32) -> Result<ValuationFunction> {
    assert!(m >= 2, "violations need two items");
    let base = random_subadditive_table(rng, m, levels)?.tabulate();
    let mut values = base.clone();
    let size = 1usize << m;
    if rng.gen_bool(0.5) {
        // pick s and a proper nonempty part a; raise v(s) above v(a) + v(s\a)
        let s = loop {
            let s = rng.gen_range(1..size);
            if s.count_ones() >= 2 {
                break s;
            }
        };
        let parts: Vec<usize> = (1..s).filter(|a| a & s == *a).collect();
        let a = *parts.choose(rng).expect("s has proper parts");
        values[s] = base[a] + base[s & !a] + rng.gen_range(1..=levels) as f64 / levels as f64;
    } else {
        // pick s ⊊ t; push v(t) below v(s)
        let t = loop {
            let t = rng.gen_range(1..size);
            if t.count_ones() >= 2 {
                break t;
            }
        };
        let subs: Vec<usize> = (1..t).filter(|s| s & t == *s).collect();
        let s = *subs.choose(rng).expect("t has proper parts");
        let ks = ((values[s] * levels as f64).round() as u32).max(1);
        values[s] = ks as f64 / levels as f64;
        values[t] = rng.gen_range(0..ks) as f64 / levels as f64;
    }
    ValuationFunction::table(m, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DEFAULT_ETA;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_tables_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in 1..=4 {
            for _ in 0..50 {
                let v = random_subadditive_table(&mut rng, m, 10).unwrap();
                assert_eq!(v.validate(DEFAULT_ETA), Ok(()));
                assert!(v.tabulate().iter().all(|&x| x <= 1.0));
            }
        }
    }

    #[test]
    fn random_instances_validate_and_repeat() {
        let a = random_instance(&mut ChaCha8Rng::seed_from_u64(3), 3, 3, 10).unwrap();
        let b = random_instance(&mut ChaCha8Rng::seed_from_u64(3), 3, 3, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn violating_tables_fail_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 2..=4 {
            for _ in 0..50 {
                let v = random_violating_table(&mut rng, m, 10).unwrap();
                assert!(v.validate(DEFAULT_ETA).is_err());
            }
        }
    }
}
