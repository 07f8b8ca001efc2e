//! Generator for the DES S-box experiment module.
//!
//! The module registers a 4-bit `pl` and 6-bit `pr` input, applies a fixed
//! key by inverting the registered `pr` bits where the key has ones, feeds
//! the result through one DES S-box realized as an unoptimized sum of
//! minterms (balanced AND/OR trees over both input polarities), XORs the
//! S-box output with the registered `pl`, and registers the 4-bit result.

use crate::netlist::{Netlist, NetId, NetlistError, PortDir};

/// DES S-boxes S1..S8. Each table is laid out as four rows of sixteen, with
/// row = bits 5 and 0 of the 6-bit input and column = bits 4..1.
pub const SBOXES: [[u8; 64]; 8] = [
    [
        14, 4, 13, 1, 2, 15, 11, 8, 3, 10, 6, 12, 5, 9, 0, 7, //
        0, 15, 7, 4, 14, 2, 13, 1, 10, 6, 12, 11, 9, 5, 3, 8, //
        4, 1, 14, 8, 13, 6, 2, 11, 15, 12, 9, 7, 3, 10, 5, 0, //
        15, 12, 8, 2, 4, 9, 1, 7, 5, 11, 3, 14, 10, 0, 6, 13,
    ],
    [
        15, 1, 8, 14, 6, 11, 3, 4, 9, 7, 2, 13, 12, 0, 5, 10, //
        3, 13, 4, 7, 15, 2, 8, 14, 12, 0, 1, 10, 6, 9, 11, 5, //
        0, 14, 7, 11, 10, 4, 13, 1, 5, 8, 12, 6, 9, 3, 2, 15, //
        13, 8, 10, 1, 3, 15, 4, 2, 11, 6, 7, 12, 0, 5, 14, 9,
    ],
    [
        10, 0, 9, 14, 6, 3, 15, 5, 1, 13, 12, 7, 11, 4, 2, 8, //
        13, 7, 0, 9, 3, 4, 6, 10, 2, 8, 5, 14, 12, 11, 15, 1, //
        13, 6, 4, 9, 8, 15, 3, 0, 11, 1, 2, 12, 5, 10, 14, 7, //
        1, 10, 13, 0, 6, 9, 8, 7, 4, 15, 14, 3, 11, 5, 2, 12,
    ],
    [
        7, 13, 14, 3, 0, 6, 9, 10, 1, 2, 8, 5, 11, 12, 4, 15, //
        13, 8, 11, 5, 6, 15, 0, 3, 4, 7, 2, 12, 1, 10, 14, 9, //
        10, 6, 9, 0, 12, 11, 7, 13, 15, 1, 3, 14, 5, 2, 8, 4, //
        3, 15, 0, 6, 10, 1, 13, 8, 9, 4, 5, 11, 12, 7, 2, 14,
    ],
    [
        2, 12, 4, 1, 7, 10, 11, 6, 8, 5, 3, 15, 13, 0, 14, 9, //
        14, 11, 2, 12, 4, 7, 13, 1, 5, 0, 15, 10, 3, 9, 8, 6, //
        4, 2, 1, 11, 10, 13, 7, 8, 15, 9, 12, 5, 6, 3, 0, 14, //
        11, 8, 12, 7, 1, 14, 2, 13, 6, 15, 0, 9, 10, 4, 5, 3,
    ],
    [
        12, 1, 10, 15, 9, 2, 6, 8, 0, 13, 3, 4, 14, 7, 5, 11, //
        10, 15, 4, 2, 7, 12, 9, 5, 6, 1, 13, 14, 0, 11, 3, 8, //
        9, 14, 15, 5, 2, 8, 12, 3, 7, 0, 4, 10, 1, 13, 11, 6, //
        4, 3, 2, 12, 9, 5, 15, 10, 11, 14, 1, 7, 6, 0, 8, 13,
    ],
    [
        4, 11, 2, 14, 15, 0, 8, 13, 3, 12, 9, 7, 5, 10, 6, 1, //
        13, 0, 11, 7, 4, 9, 1, 10, 14, 3, 5, 12, 2, 15, 8, 6, //
        1, 4, 11, 13, 12, 3, 7, 14, 10, 15, 6, 8, 0, 5, 9, 2, //
        6, 11, 13, 8, 1, 4, 10, 7, 9, 5, 0, 15, 14, 2, 3, 12,
    ],
    [
        13, 2, 8, 4, 6, 15, 11, 1, 10, 9, 3, 14, 5, 0, 12, 7, //
        1, 15, 13, 8, 10, 3, 7, 4, 12, 5, 6, 11, 0, 14, 9, 2, //
        7, 11, 4, 1, 9, 12, 14, 2, 0, 6, 10, 13, 15, 3, 5, 8, //
        2, 1, 14, 7, 4, 10, 8, 13, 15, 12, 9, 0, 3, 5, 6, 11,
    ],
];

/// S-box lookup for a 6-bit input. `sbox` selects S1..S8 (1-based).
pub fn sbox_value(sbox: u8, x: u8) -> u8 {
    assert!((1..=8).contains(&sbox), "sbox selector out of range");
    assert!(x < 64, "sbox input out of range");
    let row = ((x >> 4) & 2) | (x & 1);
    let col = (x >> 1) & 0xF;
    SBOXES[(sbox - 1) as usize][(row * 16 + col) as usize]
}

/// Parameters of the generated module.
#[derive(Debug, Clone, PartialEq)]
pub struct DutConfig {
    /// Fixed 6-bit key folded into the netlist.
    pub key: u8,
    pub pl_width: u32,
    pub pr_width: u32,
    /// S-box selector, 1-based (S1..S8).
    pub sbox: u8,
    /// Power trace resolution used downstream.
    pub samples_per_cycle: usize,
}

impl Default for DutConfig {
    fn default() -> Self {
        DutConfig {
            key: 46,
            pl_width: 4,
            pr_width: 6,
            sbox: 1,
            samples_per_cycle: 800,
        }
    }
}

impl DutConfig {
    pub fn validate(&self) -> Result<(), NetlistError> {
        if self.key >= 64 {
            return Err(NetlistError::InvalidConfig(format!(
                "key {} exceeds 6 bits",
                self.key
            )));
        }
        if self.pr_width != 6 || self.pl_width != 4 {
            return Err(NetlistError::InvalidConfig(format!(
                "widths {}x{} do not match the 6-in 4-out S-box",
                self.pr_width, self.pl_width
            )));
        }
        if !(1..=8).contains(&self.sbox) {
            return Err(NetlistError::InvalidConfig(format!(
                "sbox selector {} out of range 1..=8",
                self.sbox
            )));
        }
        if self.samples_per_cycle == 0 {
            return Err(NetlistError::InvalidConfig(
                "samples_per_cycle must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Software model of the registered datapath: `sbox(pr ^ key) ^ pl`.
pub fn dut_reference_output(cfg: &DutConfig, pl: u8, pr: u8) -> u8 {
    (sbox_value(cfg.sbox, (pr ^ cfg.key) & 0x3F) ^ pl) & 0xF
}

/// Builds a balanced two-input gate tree over `terms`, writing the root to a
/// fresh net named `root`. Intermediate nets and gates use `prefix`.
fn gate_tree(
    n: &mut Netlist,
    cell: &str,
    mut terms: Vec<NetId>,
    prefix: &str,
    root: &str,
) -> Result<NetId, NetlistError> {
    assert!(!terms.is_empty());
    if terms.len() == 1 {
        let root_id = n.add_net(root)?;
        n.add_alias(root_id, terms[0])?;
        return Ok(root_id);
    }
    let mut counter = 0;
    while terms.len() > 1 {
        let last_level = terms.len() == 2;
        let mut next = Vec::with_capacity(terms.len() / 2 + 1);
        let mut it = terms.into_iter().peekable();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => {
                    let out = if last_level {
                        n.add_net(root)?
                    } else {
                        n.add_net(&format!("{prefix}_n{counter}"))?
                    };
                    n.add_instance(
                        &format!("{prefix}_g{counter}"),
                        cell,
                        vec![
                            ("A".to_string(), a),
                            ("B".to_string(), b),
                            ("Y".to_string(), out),
                        ],
                    )?;
                    counter += 1;
                    next.push(out);
                }
                None => next.push(a),
            }
        }
        terms = next;
    }
    Ok(terms[0])
}

/// Generates the S-box experiment netlist for `cfg`.
pub fn build_des_module(cfg: &DutConfig) -> Result<Netlist, NetlistError> {
    cfg.validate()?;
    let mut n = Netlist::new("des_sbox");
    n.add_port("clk", PortDir::Input, 1)?;
    n.add_port("pl", PortDir::Input, cfg.pl_width)?;
    n.add_port("pr", PortDir::Input, cfg.pr_width)?;
    n.add_port("out", PortDir::Output, cfg.pl_width)?;
    n.clock = Some("clk".to_string());
    let clk = n.net("clk").expect("clk net");

    let dff = |d: NetId, q: NetId| {
        vec![
            ("D".to_string(), d),
            ("CK".to_string(), clk),
            ("Q".to_string(), q),
        ]
    };

    let mut plr = Vec::new();
    for i in 0..cfg.pl_width {
        let d = n.net(&format!("pl[{i}]")).expect("pl bit");
        let q = n.add_net(&format!("plr_{i}"))?;
        n.add_instance(&format!("u_pl{i}"), "DFF", dff(d, q))?;
        plr.push(q);
    }
    let mut prr = Vec::new();
    for i in 0..cfg.pr_width {
        let d = n.net(&format!("pr[{i}]")).expect("pr bit");
        let q = n.add_net(&format!("prr_{i}"))?;
        n.add_instance(&format!("u_pr{i}"), "DFF", dff(d, q))?;
        prr.push(q);
    }

    // Key application: bit i of the S-box input is prr_i inverted where the
    // key has a one, prr_i unchanged otherwise.
    let mut lit_pos = Vec::new();
    let mut lit_neg = Vec::new();
    for i in 0..6 {
        let pos = if (cfg.key >> i) & 1 == 1 {
            let y = n.add_net(&format!("sx{i}"))?;
            n.add_instance(
                &format!("u_key{i}"),
                "INV",
                vec![("A".to_string(), prr[i as usize]), ("Y".to_string(), y)],
            )?;
            y
        } else {
            prr[i as usize]
        };
        let neg = n.add_net(&format!("sxn{i}"))?;
        n.add_instance(
            &format!("u_cmp{i}"),
            "INV",
            vec![("A".to_string(), pos), ("Y".to_string(), neg)],
        )?;
        lit_pos.push(pos);
        lit_neg.push(neg);
    }

    // One minterm per S-box input value with a nonzero output.
    let mut minterm_net = vec![None; 64];
    for m in 0..64u8 {
        if sbox_value(cfg.sbox, m) == 0 {
            continue;
        }
        let literals: Vec<NetId> = (0..6)
            .map(|i| {
                if (m >> i) & 1 == 1 {
                    lit_pos[i]
                } else {
                    lit_neg[i]
                }
            })
            .collect();
        let root = gate_tree(&mut n, "AND2", literals, &format!("m{m}"), &format!("m{m}"))?;
        minterm_net[m as usize] = Some(root);
    }

    for b in 0..cfg.pl_width {
        let terms: Vec<NetId> = (0..64u8)
            .filter(|&m| (sbox_value(cfg.sbox, m) >> b) & 1 == 1)
            .map(|m| minterm_net[m as usize].expect("minterm built"))
            .collect();
        if terms.is_empty() {
            return Err(NetlistError::InvalidConfig(format!(
                "S-box output bit {b} is constant zero"
            )));
        }
        let sb = gate_tree(&mut n, "OR2", terms, &format!("sb{b}"), &format!("sb{b}"))?;
        let ox = n.add_net(&format!("ox{b}"))?;
        n.add_instance(
            &format!("u_x{b}"),
            "XOR2",
            vec![
                ("A".to_string(), sb),
                ("B".to_string(), plr[b as usize]),
                ("Y".to_string(), ox),
            ],
        )?;
        let out_bit = n.net(&format!("out[{b}]")).expect("out bit");
        n.add_instance(&format!("u_or{b}"), "DFF", dff(ox, out_bit))?;
    }

    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellLibrary;
    use crate::netlist::validate_netlist;
    use crate::text::{emit_netlist, parse_netlist};

    /// Frozen copy of FIPS 46-3 S1 used as an oracle independent of SBOXES.
    const S1_ORACLE: [[u8; 16]; 4] = [
        [14, 4, 13, 1, 2, 15, 11, 8, 3, 10, 6, 12, 5, 9, 0, 7],
        [0, 15, 7, 4, 14, 2, 13, 1, 10, 6, 12, 11, 9, 5, 3, 8],
        [4, 1, 14, 8, 13, 6, 2, 11, 15, 12, 9, 7, 3, 10, 5, 0],
        [15, 12, 8, 2, 4, 9, 1, 7, 5, 11, 3, 14, 10, 0, 6, 13],
    ];

    #[test]
    fn s1_lookup_matches_oracle_for_all_inputs() {
        for x in 0..64u8 {
            let row = (((x >> 4) & 2) | (x & 1)) as usize;
            let col = ((x >> 1) & 0xF) as usize;
            assert_eq!(sbox_value(1, x), S1_ORACLE[row][col], "x={x}");
        }
    }

    #[test]
    fn s1_known_values() {
        assert_eq!(sbox_value(1, 0), 14);
        assert_eq!(sbox_value(1, 46), 11);
    }

    #[test]
    fn every_sbox_row_is_a_permutation() {
        for s in 1..=8u8 {
            for row in 0..4 {
                let mut seen = [false; 16];
                for col in 0..16 {
                    let v = SBOXES[(s - 1) as usize][row * 16 + col] as usize;
                    assert!(!seen[v], "S{s} row {row} repeats {v}");
                    seen[v] = true;
                }
            }
        }
    }

    #[test]
    fn module_validates_cleanly() {
        let lib = CellLibrary::standard();
        let n = build_des_module(&DutConfig::default()).unwrap();
        assert!(validate_netlist(&n, &lib).is_empty());
    }

    #[test]
    fn gate_counts_follow_structure() {
        let cfg = DutConfig::default();
        let n = build_des_module(&cfg).unwrap();
        let count = |cell: &str| n.instances.iter().filter(|i| i.cell == cell).count();
        let minterms = (0..64u8).filter(|&m| sbox_value(cfg.sbox, m) != 0).count();
        let or_terms: usize = (0..4)
            .map(|b| {
                (0..64u8)
                    .filter(|&m| (sbox_value(cfg.sbox, m) >> b) & 1 == 1)
                    .count()
                    - 1
            })
            .sum();
        assert_eq!(count("DFF"), 14);
        assert_eq!(count("INV"), 6 + cfg.key.count_ones() as usize);
        assert_eq!(count("AND2"), 5 * minterms);
        assert_eq!(count("OR2"), or_terms);
        assert_eq!(count("XOR2"), 4);
        assert_eq!(minterms, 60);
    }

    #[test]
    fn module_round_trips_through_text() {
        let lib = CellLibrary::standard();
        let n = build_des_module(&DutConfig::default()).unwrap();
        let text = emit_netlist(&n);
        let back = parse_netlist(&text, &lib).unwrap();
        assert!(n.structurally_eq(&back));
        assert_eq!(n.instances.len(), back.instances.len());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = DutConfig {
            key: 64,
            ..DutConfig::default()
        };
        assert!(build_des_module(&cfg).is_err());
        cfg.key = 0;
        cfg.sbox = 9;
        assert!(build_des_module(&cfg).is_err());
        cfg.sbox = 1;
        cfg.pr_width = 5;
        assert!(build_des_module(&cfg).is_err());
    }
}
