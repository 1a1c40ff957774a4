//! JSON documents for instances and bundle-bid tables.
//!
//! ```json
//! {"items": 2, "players": [
//!   {"budget": 1.0, "valuation": {"kind": "additive", "weights": [1.0, 1.0]}},
//!   {"budget": "inf", "valuation": {"kind": "table", "values": {"1": 0.5, "2": 0.5, "3": 1.0}}}
//! ]}
//! ```
//!
//! Table values are keyed by decimal bundle mask; every nonempty mask must be
//! present and the empty mask, if given, must be 0.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::DEFAULT_ETA;
use crate::error::{Error, Result};
use crate::valuations::{Budget, Instance, PlayerProfile, ValuationFunction, ValuationKind};
use crate::vcg::BundleBidTable;

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetDoc {
    Finite(f64),
    Named(String),
}

/// Bundle-keyed values; keys are decimal masks, written in numeric order.
#[derive(Debug, Default)]
struct Keyed(BTreeMap<u32, f64>);

impl Serialize for Keyed {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Keyed {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(deserializer)?;
        raw.into_iter()
            .map(|(k, v)| {
                k.trim()
                    .parse::<u32>()
                    .map(|mask| (mask, v))
                    .map_err(|_| serde::de::Error::custom(format!("bundle key '{k}' is not a mask")))
            })
            .collect::<std::result::Result<_, _>>()
            .map(Keyed)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
enum ValuationDoc {
    Additive { weights: Vec<f64> },
    Xos { clauses: Vec<Vec<f64>> },
    Table { values: Keyed },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlayerDoc {
    budget: BudgetDoc,
    valuation: ValuationDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    items: usize,
    players: Vec<PlayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleBidsDoc {
    items: usize,
    bids: Vec<Keyed>,
}

fn dense_table(items: usize, keyed: &Keyed, what: &str) -> Result<Vec<f64>> {
    if items == 0 || items > 16 {
        return Err(Error::Format(format!("unsupported item count {items}")));
    }
    let size = 1usize << items;
    let mut values = vec![f64::NAN; size];
    values[0] = 0.0;
    for (&mask, &v) in &keyed.0 {
        if mask as usize >= size {
            return Err(Error::Format(format!("{what}: mask {mask} is out of range for {items} items")));
        }
        if mask == 0 && v != 0.0 {
            return Err(Error::Format(format!("{what}: the empty bundle must map to 0, got {v}")));
        }
        values[mask as usize] = v;
    }
    if let Some(mask) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::Format(format!("{what}: missing entry for mask {mask}")));
    }
    Ok(values)
}

fn keyed_table(values: &[f64]) -> Keyed {
    Keyed(values
        .iter()
        .enumerate()
        .skip(1)
        .map(|(mask, &v)| (mask as u32, v))
        .collect())
}

fn parse_budget(doc: BudgetDoc) -> Result<Budget> {
    match doc {
        BudgetDoc::Finite(c) => Budget::finite(c),
        BudgetDoc::Named(s) if matches!(s.as_str(), "inf" | "Infinity" | "unbounded") => {
            Ok(Budget::Unbounded)
        }
        BudgetDoc::Named(s) => Err(Error::Format(format!("unknown budget '{s}'"))),
    }
}

/// Parses and validates an instance document with tolerance `eta`.
pub fn instance_from_json(text: &str, eta: f64) -> Result<Instance> {
    let doc: InstanceDoc = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let players = doc
        .players
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let valuation = match p.valuation {
                ValuationDoc::Additive { weights } => ValuationFunction::additive(weights)?,
                ValuationDoc::Xos { clauses } => ValuationFunction::xos(clauses)?,
                ValuationDoc::Table { values } => ValuationFunction::table(
                    doc.items,
                    dense_table(doc.items, &values, &format!("player {i}"))?,
                )?,
            };
            Ok(PlayerProfile::new(valuation, parse_budget(p.budget)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Instance::with_tolerance(doc.items, players, eta)
}

pub fn instance_to_json(inst: &Instance) -> String {
    let doc = InstanceDoc {
        items: inst.items(),
        players: inst
            .players()
            .iter()
            .map(|p| PlayerDoc {
                budget: match p.budget {
                    Budget::Finite(c) => BudgetDoc::Finite(c),
                    Budget::Unbounded => BudgetDoc::Named("inf".into()),
                },
                valuation: match p.valuation.kind() {
                    ValuationKind::Additive { weights } => ValuationDoc::Additive {
                        weights: weights.clone(),
                    },
                    ValuationKind::Xos { clauses } => ValuationDoc::Xos {
                        clauses: clauses.clone(),
                    },
                    ValuationKind::Table { values } => ValuationDoc::Table {
                        values: keyed_table(values),
                    },
                },
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("instance documents always serialize")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    load_instance_with_tolerance(path, DEFAULT_ETA)
}

pub fn load_instance_with_tolerance(path: impl AsRef<Path>, eta: f64) -> Result<Instance> {
    instance_from_json(&read(path.as_ref())?, eta)
}

pub fn save_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &(instance_to_json(inst) + "\n"))
}

/// Parses `{"items": m, "bids": [{"<mask>": bid, ...}, ...]}`.
pub fn bundle_bids_from_json(text: &str) -> Result<BundleBidTable> {
    let doc: BundleBidsDoc = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let rows = doc
        .bids
        .iter()
        .enumerate()
        .map(|(i, keyed)| dense_table(doc.items, keyed, &format!("player {i}")))
        .collect::<Result<Vec<_>>>()?;
    BundleBidTable::new(doc.items, rows)
}

pub fn bundle_bids_to_json(bids: &BundleBidTable) -> String {
    let doc = BundleBidsDoc {
        items: bids.items(),
        bids: bids.rows().iter().map(|r| keyed_table(r)).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("bid documents always serialize")
}

pub fn load_bundle_bids(path: impl AsRef<Path>) -> Result<BundleBidTable> {
    bundle_bids_from_json(&read(path.as_ref())?)
}
