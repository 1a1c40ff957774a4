//! Valuation functions over bundles of items, player profiles and instances.
//!
//! Three representations are supported: additive weights, XOS (a maximum over
//! additive clauses) and explicit tables holding one value per bundle. Tables
//! are the only way to express a general subadditive function, so they must
//! pass monotonicity and subadditivity checks before an [`Instance`] accepts
//! them.

use std::fmt;

use serde::Serialize;

use crate::config::{Limits, DEFAULT_ETA};
use crate::error::{Error, Result};

/// A set of items encoded as a bit mask: bit `j` is set iff item `j` is in the bundle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Bundle(u32);

impl Bundle {
    pub const EMPTY: Bundle = Bundle(0);

    pub const fn from_mask(mask: u32) -> Self {
        Bundle(mask)
    }

    pub fn from_items<I: IntoIterator<Item = usize>>(items: I) -> Self {
        Bundle(items.into_iter().fold(0u32, |acc, j| acc | (1u32 << j)))
    }

    pub fn singleton(item: usize) -> Self {
        Bundle(1u32 << item)
    }

    /// The bundle holding every item in `[0, items)`.
    pub fn full(items: usize) -> Self {
        Bundle(full_mask(items))
    }

    pub const fn mask(self) -> u32 {
        self.0
    }

    pub fn contains(self, item: usize) -> bool {
        item < 32 && self.0 & (1u32 << item) != 0
    }

    pub fn with(self, item: usize) -> Self {
        Bundle(self.0 | (1u32 << item))
    }

    pub fn without(self, item: usize) -> Self {
        Bundle(self.0 & !(1u32 << item))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Bundle) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: Bundle) -> Self {
        Bundle(self.0 | other.0)
    }

    pub fn intersection(self, other: Bundle) -> Self {
        Bundle(self.0 & other.0)
    }

    pub fn difference(self, other: Bundle) -> Self {
        Bundle(self.0 & !other.0)
    }

    /// True iff every item index is below `items`.
    pub fn fits(self, items: usize) -> bool {
        self.0 & !full_mask(items) == 0
    }

    pub fn items(self) -> impl Iterator<Item = usize> {
        let mask = self.0;
        (0..32).filter(move |j| mask & (1u32 << j) != 0)
    }

    /// Every bundle over `items` items, in increasing mask order.
    pub fn all(items: usize) -> impl Iterator<Item = Bundle> {
        (0..=full_mask(items)).map(Bundle)
    }

    /// Every subset of this bundle, in increasing mask order (including the empty set).
    pub fn subsets(self) -> impl Iterator<Item = Bundle> {
        let full = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full {
                None
            } else {
                // Next submask in increasing order.
                Some(((cur | !full).wrapping_add(1)) & full)
            };
            Some(Bundle(cur))
        })
    }
}

impl fmt::Display for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.items().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

pub(crate) fn full_mask(items: usize) -> u32 {
    if items >= 32 {
        u32::MAX
    } else {
        (1u32 << items) - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ValuationKind {
    Additive { weights: Vec<f64> },
    Xos { clauses: Vec<Vec<f64>> },
    Table { values: Vec<f64> },
}

/// A set function `v : 2^[m] -> R>=0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValuationFunction {
    items: usize,
    #[serde(flatten)]
    kind: ValuationKind,
}

fn check_entry(x: f64, what: &str) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InvalidValuation(format!(
            "{what} must be finite and nonnegative, got {x}"
        )));
    }
    Ok(())
}

fn check_items(items: usize) -> Result<()> {
    let cap = Limits::default().max_items;
    if items == 0 {
        return Err(Error::InvalidValuation("at least one item is required".into()));
    }
    if items > cap {
        return Err(Error::too_large("item count", items as u128, cap as u128));
    }
    Ok(())
}

impl ValuationFunction {
    pub fn additive(weights: Vec<f64>) -> Result<Self> {
        check_items(weights.len())?;
        for &w in &weights {
            check_entry(w, "additive weight")?;
        }
        Ok(Self {
            items: weights.len(),
            kind: ValuationKind::Additive { weights },
        })
    }

    pub fn xos(clauses: Vec<Vec<f64>>) -> Result<Self> {
        let first = clauses
            .first()
            .ok_or_else(|| Error::InvalidValuation("XOS needs at least one clause".into()))?;
        let items = first.len();
        check_items(items)?;
        for clause in &clauses {
            if clause.len() != items {
                return Err(Error::InvalidValuation(format!(
                    "XOS clause has {} weights, expected {items}",
                    clause.len()
                )));
            }
            for &w in clause {
                check_entry(w, "XOS clause weight")?;
            }
        }
        Ok(Self {
            items,
            kind: ValuationKind::Xos { clauses },
        })
    }

    /// Builds an explicit table. Only the shape and entries are checked here;
    /// class membership is checked by [`ValuationFunction::validate`], which
    /// [`Instance`] runs on construction.
    pub fn table(items: usize, values: Vec<f64>) -> Result<Self> {
        check_items(items)?;
        if values.len() != 1usize << items {
            return Err(Error::InvalidValuation(format!(
                "table over {items} items needs {} entries, got {}",
                1usize << items,
                values.len()
            )));
        }
        for &v in &values {
            check_entry(v, "table value")?;
        }
        Ok(Self {
            items,
            kind: ValuationKind::Table { values },
        })
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn kind(&self) -> &ValuationKind {
        &self.kind
    }

    /// `v(S)`, rejecting bundles that name items outside `[0, m)`.
    pub fn evaluate(&self, bundle: Bundle) -> Result<f64> {
        if !bundle.fits(self.items) {
            return Err(Error::InvalidBundle {
                mask: bundle.mask(),
                items: self.items,
            });
        }
        Ok(self.value(bundle))
    }

    /// `v(S)` for a bundle already known to fit.
    pub(crate) fn value(&self, bundle: Bundle) -> f64 {
        match &self.kind {
            ValuationKind::Additive { weights } => bundle.items().map(|j| weights[j]).sum(),
            ValuationKind::Xos { clauses } => clauses
                .iter()
                .map(|c| bundle.items().map(|j| c[j]).sum::<f64>())
                .fold(0.0, f64::max),
            ValuationKind::Table { values } => values[bundle.mask() as usize],
        }
    }

    /// All `2^m` values indexed by bundle mask.
    pub fn tabulate(&self) -> Vec<f64> {
        match &self.kind {
            ValuationKind::Table { values } => values.clone(),
            _ => Bundle::all(self.items).map(|s| self.value(s)).collect(),
        }
    }

    pub fn to_table(&self) -> ValuationFunction {
        ValuationFunction {
            items: self.items,
            kind: ValuationKind::Table {
                values: self.tabulate(),
            },
        }
    }

    /// Checks `v(S) <= v(S ∪ {j})` for every bundle `S` and item `j ∉ S`.
    pub fn check_monotone(&self, eta: f64) -> Result<(), Violation> {
        let table = self.tabulate();
        for s in Bundle::all(self.items) {
            for j in 0..self.items {
                if s.contains(j) {
                    continue;
                }
                let t = s.with(j);
                let (lhs, rhs) = (table[s.mask() as usize], table[t.mask() as usize]);
                if lhs > rhs + eta {
                    return Err(Violation {
                        kind: ViolationKind::Monotonicity,
                        first: s,
                        second: t,
                        lhs,
                        rhs,
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks `v(S ∪ T) <= v(S) + v(T)` over every pair of bundles.
    pub fn check_subadditive(&self, eta: f64) -> Result<(), Violation> {
        let table = self.tabulate();
        let top = full_mask(self.items);
        for s in 0..=top {
            for t in s..=top {
                let lhs = table[(s | t) as usize];
                let rhs = table[s as usize] + table[t as usize];
                if lhs > rhs + eta {
                    return Err(Violation {
                        kind: ViolationKind::Subadditivity,
                        first: Bundle(s),
                        second: Bundle(t),
                        lhs,
                        rhs,
                    });
                }
            }
        }
        Ok(())
    }

    /// Full class-membership check: `v(∅) = 0`, monotone and subadditive.
    /// Additive and XOS functions satisfy all three by construction.
    pub fn validate(&self, eta: f64) -> Result<(), Violation> {
        if let ValuationKind::Table { values } = &self.kind {
            if values[0].abs() > eta {
                return Err(Violation {
                    kind: ViolationKind::NonzeroEmpty,
                    first: Bundle::EMPTY,
                    second: Bundle::EMPTY,
                    lhs: values[0],
                    rhs: 0.0,
                });
            }
            self.check_monotone(eta)?;
            self.check_subadditive(eta)?;
        }
        Ok(())
    }

    /// `ṽ(∅) = 0` and `ṽ(S) = v(S) + k` for every nonempty `S`.
    pub fn shift(&self, k: f64) -> Result<ValuationFunction> {
        if !k.is_finite() || k < 0.0 {
            return Err(Error::InvalidShift(k));
        }
        let mut values = self.tabulate();
        for v in values.iter_mut().skip(1) {
            *v += k;
        }
        ValuationFunction::table(self.items, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    NonzeroEmpty,
    Monotonicity,
    Subadditivity,
}

/// A witness that a set function leaves the monotone subadditive class.
///
/// For monotonicity `first ⊂ second` with `lhs = v(first) > rhs = v(second)`;
/// for subadditivity `lhs = v(first ∪ second) > rhs = v(first) + v(second)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub first: Bundle,
    pub second: Bundle,
    pub lhs: f64,
    pub rhs: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ViolationKind::NonzeroEmpty => write!(f, "v({{}}) = {} is not zero", self.lhs),
            ViolationKind::Monotonicity => write!(
                f,
                "not monotone: v({}) = {} > v({}) = {}",
                self.first, self.lhs, self.second, self.rhs
            ),
            ViolationKind::Subadditivity => write!(
                f,
                "not subadditive: v({} ∪ {}) = {} > v({}) + v({}) = {}",
                self.first, self.second, self.lhs, self.first, self.second, self.rhs
            ),
        }
    }
}

/// A player's budget `c_i`, possibly unbounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Finite(f64),
    Unbounded,
}

impl Budget {
    pub fn finite(c: f64) -> Result<Self> {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::InvalidInstance(format!(
                "budget must be finite and nonnegative, got {c}"
            )));
        }
        Ok(Budget::Finite(c))
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Budget::Finite(c) => c,
            Budget::Unbounded => f64::INFINITY,
        }
    }

    /// `min{value, c}`.
    pub fn cap(self, value: f64) -> f64 {
        value.min(self.as_f64())
    }

    pub fn admits(self, payment: f64, eta: f64) -> bool {
        match self {
            Budget::Finite(c) => payment <= c + eta,
            Budget::Unbounded => true,
        }
    }
}

impl Serialize for Budget {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Budget::Finite(c) => serializer.serialize_f64(*c),
            Budget::Unbounded => serializer.serialize_str("inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlayerProfile {
    pub valuation: ValuationFunction,
    pub budget: Budget,
}

impl PlayerProfile {
    pub fn new(valuation: ValuationFunction, budget: Budget) -> Self {
        Self { valuation, budget }
    }
}

/// `m` items and `n` players whose valuations have passed class validation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Instance {
    items: usize,
    players: Vec<PlayerProfile>,
}

impl Instance {
    pub fn new(items: usize, players: Vec<PlayerProfile>) -> Result<Self> {
        Self::with_tolerance(items, players, DEFAULT_ETA)
    }

    pub fn with_tolerance(items: usize, players: Vec<PlayerProfile>, eta: f64) -> Result<Self> {
        if items == 0 {
            return Err(Error::InvalidInstance("at least one item is required".into()));
        }
        if players.is_empty() {
            return Err(Error::InvalidInstance("at least one player is required".into()));
        }
        for (i, p) in players.iter().enumerate() {
            if p.valuation.items() != items {
                return Err(Error::InvalidInstance(format!(
                    "player {i} has a valuation over {} items, instance has {items}",
                    p.valuation.items()
                )));
            }
            if let Budget::Finite(c) = p.budget {
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::InvalidInstance(format!(
                        "player {i} has invalid budget {c}"
                    )));
                }
            }
            p.valuation
                .validate(eta)
                .map_err(|violation| Error::ValidationFailed { player: i, violation })?;
        }
        Ok(Self { items, players })
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn players(&self) -> &[PlayerProfile] {
        &self.players
    }

    pub fn player(&self, i: usize) -> &PlayerProfile {
        &self.players[i]
    }

    /// Per-player tables of all `2^m` bundle values.
    pub fn value_tables(&self) -> Vec<Vec<f64>> {
        self.players.iter().map(|p| p.valuation.tabulate()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ETA: f64 = 1e-9;

    #[test]
    fn additive_sums_weights() {
        let v = ValuationFunction::additive(vec![1.0, 1.0]).unwrap();
        assert_eq!(v.evaluate(Bundle::from_items([0, 1])).unwrap(), 2.0);
    }

    #[test]
    fn empty_bundle_is_zero_for_every_kind() {
        let vs = [
            ValuationFunction::additive(vec![0.3, 0.7]).unwrap(),
            ValuationFunction::xos(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            ValuationFunction::table(2, vec![0.0, 1.0, 1.0, 1.5]).unwrap(),
        ];
        for v in &vs {
            assert_eq!(v.evaluate(Bundle::EMPTY).unwrap(), 0.0);
        }
    }

    #[test]
    fn xos_takes_max_clause() {
        let v = ValuationFunction::xos(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(v.evaluate(Bundle::from_items([0, 1])).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_bundle_is_rejected() {
        let v = ValuationFunction::additive(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            v.evaluate(Bundle::from_items([2])),
            Err(Error::InvalidBundle { mask: 4, items: 2 })
        ));
    }

    #[test]
    fn monotone_counterexample() {
        let v = ValuationFunction::table(2, vec![0.0, 2.0, 1.0, 1.0]).unwrap();
        let err = v.check_monotone(ETA).unwrap_err();
        assert_eq!(err.kind, ViolationKind::Monotonicity);
        assert_eq!((err.first, err.second), (Bundle::from_items([0]), Bundle::from_items([0, 1])));
        assert!(ValuationFunction::additive(vec![0.5, 0.0, 2.0])
            .unwrap()
            .check_monotone(ETA)
            .is_ok());
    }

    #[test]
    fn subadditive_counterexample() {
        let v = ValuationFunction::table(2, vec![0.0, 1.0, 1.0, 3.0]).unwrap();
        let err = v.check_subadditive(ETA).unwrap_err();
        assert_eq!(err.kind, ViolationKind::Subadditivity);
        assert_eq!((err.first, err.second), (Bundle::from_items([0]), Bundle::from_items([1])));
        assert!(ValuationFunction::additive(vec![0.5, 0.25, 2.0])
            .unwrap()
            .check_subadditive(ETA)
            .is_ok());
    }

    #[test]
    fn shift_adds_constant_to_nonempty_bundles() {
        let v = ValuationFunction::additive(vec![1.0, 1.0]).unwrap();
        let zero = v.shift(0.0).unwrap();
        assert_eq!(zero.tabulate(), v.tabulate());
        let w = v.shift(2.0).unwrap();
        assert_eq!(w.evaluate(Bundle::EMPTY).unwrap(), 0.0);
        assert_eq!(w.evaluate(Bundle::from_items([0])).unwrap(), 3.0);
        assert_eq!(w.evaluate(Bundle::from_items([0, 1])).unwrap(), 4.0);
        assert!(w.validate(ETA).is_ok());
        assert!(matches!(v.shift(-1.0), Err(Error::InvalidShift(_))));
    }

    #[test]
    fn instance_rejects_invalid_table() {
        let bad = ValuationFunction::table(2, vec![0.0, 1.0, 1.0, 3.0]).unwrap();
        let err = Instance::new(2, vec![PlayerProfile::new(bad, Budget::Unbounded)]).unwrap_err();
        assert!(matches!(err, Error::ValidationFailed { player: 0, .. }));
        assert!(err.to_string().contains("{0} ∪ {1}"));
    }

    #[test]
    fn instance_rejects_mismatched_items() {
        let a = ValuationFunction::additive(vec![1.0]).unwrap();
        let b = ValuationFunction::additive(vec![1.0, 1.0]).unwrap();
        let players = vec![
            PlayerProfile::new(a, Budget::Unbounded),
            PlayerProfile::new(b, Budget::Unbounded),
        ];
        assert!(Instance::new(1, players).is_err());
    }

    #[test]
    fn subsets_enumerates_submasks_in_order() {
        let s = Bundle::from_items([0, 2]);
        let subs: Vec<u32> = s.subsets().map(Bundle::mask).collect();
        assert_eq!(subs, vec![0, 1, 4, 5]);
        assert_eq!(Bundle::EMPTY.subsets().count(), 1);
    }

    #[test]
    fn bundle_display() {
        assert_eq!(Bundle::from_items([0, 3]).to_string(), "{0,3}");
        assert_eq!(Bundle::EMPTY.to_string(), "{}");
    }
}
