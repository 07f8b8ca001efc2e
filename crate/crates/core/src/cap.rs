//! Per-net load capacitance tables.
//!
//! Capacitances are in normalized units (supply voltage 1, so the energy of
//! a rising edge equals the charged capacitance). A net's load splits into a
//! wire component (routed segments and vias) and a pin component (connected
//! cell inputs).

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dualrail::logical_name;
use crate::netlist::Netlist;

/// Per-unit capacitance constants used by extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitCaps {
    /// Per track-length unit of routed wire, any layer.
    pub wire: f64,
    /// Per via.
    pub via: f64,
    /// Per connected cell input pin.
    pub pin: f64,
}

impl Default for UnitCaps {
    fn default() -> Self {
        UnitCaps {
            wire: 1.0,
            via: 1.0,
            pin: 2.0,
        }
    }
}

/// One net's load, split by origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NetCap {
    pub wire: f64,
    pub pin: f64,
}

impl NetCap {
    pub fn total(self) -> f64 {
        self.wire + self.pin
    }
}

/// Net name -> load capacitance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapTable {
    entries: BTreeMap<String, NetCap>,
}

#[derive(Debug, Error)]
pub enum CapCsvError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: cap_total {total} does not equal wire {wire} + pin {pin}")]
    InconsistentTotal {
        line: usize,
        wire: f64,
        pin: f64,
        total: f64,
    },
    #[error("duplicate net {0}")]
    DuplicateNet(String),
}

impl CapTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every net of `netlist` at the same capacitance; handy baseline for
    /// pre-layout simulation.
    pub fn uniform(netlist: &Netlist, cap: f64) -> Self {
        let mut t = CapTable::new();
        for name in netlist.net_names() {
            t.entries.insert(
                name.to_string(),
                NetCap {
                    wire: 0.0,
                    pin: cap,
                },
            );
        }
        t
    }

    pub fn insert(&mut self, net: &str, cap: NetCap) {
        self.entries.insert(net.to_string(), cap);
    }

    pub fn add(&mut self, net: &str, cap: NetCap) {
        let e = self.entries.entry(net.to_string()).or_default();
        e.wire += cap.wire;
        e.pin += cap.pin;
    }

    pub fn get(&self, net: &str) -> Option<NetCap> {
        self.entries.get(net).copied()
    }

    pub fn total(&self, net: &str) -> Option<f64> {
        self.get(net).map(NetCap::total)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NetCap)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// CSV form, one sorted row per net: `net,cap_wire,cap_pin,cap_total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("net,cap_wire,cap_pin,cap_total\n");
        for (net, cap) in &self.entries {
            out.push_str(&format!(
                "{net},{},{},{}\n",
                cap.wire,
                cap.pin,
                cap.total()
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CapCsvError> {
        let mut table = CapTable::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "net,cap_wire,cap_pin,cap_total" => {}
            other => {
                return Err(CapCsvError::Syntax {
                    line: 1,
                    msg: format!("expected cap table header, found {:?}", other.map(|(_, h)| h)),
                })
            }
        }
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(CapCsvError::Syntax {
                    line: lineno,
                    msg: format!("expected 4 fields, found {}", fields.len()),
                });
            }
            let num = |s: &str| -> Result<f64, CapCsvError> {
                s.parse().map_err(|_| CapCsvError::Syntax {
                    line: lineno,
                    msg: format!("bad number {s:?}"),
                })
            };
            let (wire, pin, total) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
            if total != wire + pin {
                return Err(CapCsvError::InconsistentTotal {
                    line: lineno,
                    wire,
                    pin,
                    total,
                });
            }
            if table.entries.contains_key(fields[0]) {
                return Err(CapCsvError::DuplicateNet(fields[0].to_string()));
            }
            table.insert(fields[0], NetCap { wire, pin });
        }
        Ok(table)
    }
}

/// Scales every true-rail net's capacitance by an independent factor drawn
/// uniformly from [1-epsilon, 1+epsilon]. Models residual layout mismatch on
/// an otherwise balanced table. Deterministic per seed; epsilon 0 is the
/// identity.
pub fn inject_imbalance(table: &CapTable, epsilon: f64, seed: u64) -> CapTable {
    assert!(epsilon >= 0.0, "imbalance fraction must be non-negative");
    if epsilon == 0.0 {
        return table.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-epsilon, epsilon);
    let mut out = CapTable::new();
    for (net, cap) in table.iter() {
        let scaled = match logical_name(net) {
            Some((_, true)) => {
                let factor = 1.0 + dist.sample(&mut rng);
                NetCap {
                    wire: cap.wire * factor,
                    pin: cap.pin * factor,
                }
            }
            _ => cap,
        };
        out.insert(net, scaled);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> CapTable {
        let mut t = CapTable::new();
        t.insert("a_t", NetCap { wire: 7.0, pin: 2.0 });
        t.insert("a_f", NetCap { wire: 7.0, pin: 2.0 });
        t.insert("clk", NetCap { wire: 3.0, pin: 12.0 });
        t
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample_table();
        let csv = t.to_csv();
        assert!(csv.starts_with("net,cap_wire,cap_pin,cap_total\n"));
        assert!(csv.contains("a_t,7,2,9\n"));
        let back = CapTable::from_csv(&csv).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_rejects_inconsistent_total() {
        let text = "net,cap_wire,cap_pin,cap_total\nx,1,2,4\n";
        match CapTable::from_csv(text) {
            Err(CapCsvError::InconsistentTotal { line: 2, .. }) => {}
            other => panic!("expected a consistency error, got {other:?}"),
        }
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let t = sample_table();
        assert_eq!(inject_imbalance(&t, 0.0, 99), t);
    }

    #[test]
    fn imbalance_only_touches_true_rails_within_bound() {
        let t = sample_table();
        let eps = 0.1;
        let out = inject_imbalance(&t, eps, 7);
        assert_eq!(out.get("a_f"), t.get("a_f"));
        assert_eq!(out.get("clk"), t.get("clk"));
        let before = t.total("a_t").unwrap();
        let after = out.total("a_t").unwrap();
        assert!(after != before, "seeded perturbation should move the cap");
        assert!((after - before).abs() / before <= eps + 1e-12);
    }

    #[test]
    fn different_seeds_differ() {
        let t = sample_table();
        let a = inject_imbalance(&t, 0.1, 1);
        let b = inject_imbalance(&t, 0.1, 2);
        assert_ne!(a.total("a_t"), b.total("a_t"));
        let again = inject_imbalance(&t, 0.1, 1);
        assert_eq!(a, again);
    }

    #[test]
    fn uniform_covers_every_net() {
        let des = crate::dut::build_des_module(&crate::dut::DutConfig::default()).unwrap();
        let t = CapTable::uniform(&des, 2.0);
        assert_eq!(t.len(), des.net_count());
        for name in des.net_names() {
            assert_eq!(t.total(name), Some(2.0));
        }
    }
}
