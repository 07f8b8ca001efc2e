//! Equivalence checking between design variants.
//!
//! Sequential designs are first cut at the registers: every register output
//! becomes a pseudo-input port and every register data input a pseudo-output
//! port, leaving a pure combinational netlist. Combinational equivalence is
//! then checked exhaustively per output over the union of both sides' input
//! support, which keeps the sweep within `max_inputs` even when the full
//! design has more inputs than that. A bounded co-simulation covers the
//! sequential behavior of dual-rail designs against their single-ended
//! source.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cap::CapTable;
use crate::cells::CellLibrary;
use crate::dualrail::{DualRailNetlist, WddlLibrary};
use crate::netlist::{Driver, Netlist, NetlistError, PortDir};
use crate::sim::{DualSim, Engine, SimError, SingleSim};

/// Default cap on swept inputs per output cone.
pub const DEFAULT_MAX_INPUTS: usize = 20;

#[derive(Debug, Error)]
pub enum EquivError {
    #[error("port signatures differ: {0}")]
    PortMismatch(String),
    #[error("output {port} depends on {inputs} inputs, above the bound {bound}")]
    TooManyInputs {
        port: String,
        inputs: usize,
        bound: usize,
    },
    #[error("design is not combinational: instance {0} is sequential")]
    NotCombinational(String),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Replaces every register with a pseudo-input port (its output net) and a
/// pseudo-output port (its data net), producing a combinational netlist.
pub fn cut_registers(n: &Netlist, lib: &CellLibrary) -> Result<Netlist, NetlistError> {
    let mut out = Netlist::new(&format!("{}_cut", n.name));
    for port in &n.ports {
        if n.clock.as_deref() == Some(port.name.as_str()) {
            continue;
        }
        out.add_port(&port.name, port.dir, port.width)?;
    }
    for id in n.net_ids() {
        let name = n.net_name(id);
        if n.clock.as_deref() == Some(name) {
            continue;
        }
        if out.net(name).is_none() {
            out.add_net(name)?;
        }
    }
    fn map(out: &Netlist, n: &Netlist, id: crate::netlist::NetId) -> crate::netlist::NetId {
        out.net(n.net_name(id))
            .expect("all source nets were copied")
    }

    let mut registers = Vec::new();
    for inst in &n.instances {
        let cell = lib
            .get(&inst.cell)
            .ok_or_else(|| NetlistError::UnknownCell {
                line: 0,
                name: inst.cell.clone(),
            })?;
        if cell.sequential {
            registers.push((inst, cell));
            continue;
        }
        let conns = inst
            .conns
            .iter()
            .map(|(pin, net)| (pin.clone(), map(&out, n, *net)))
            .collect();
        out.add_instance(&inst.name, &inst.cell, conns)?;
    }
    for (lhs, rhs) in &n.aliases {
        out.add_alias(map(&out, n, *lhs), map(&out, n, *rhs))?;
    }
    for (inst, cell) in registers {
        for pin in &cell.outputs {
            let port = if cell.outputs.len() == 1 {
                format!("cut_q_{}", inst.name)
            } else {
                format!("cut_q_{}_{}", inst.name, pin.name)
            };
            out.add_port(&port, PortDir::Input, 1)?;
            let port_net = out.net(&port).expect("port net exists");
            let q = inst.net_for(&pin.name).expect("bound register output");
            out.add_alias(map(&out, n, q), port_net)?;
        }
        for pin in cell.data_pins() {
            let port = if cell.data_pins().len() == 1 {
                format!("cut_d_{}", inst.name)
            } else {
                format!("cut_d_{}_{}", inst.name, pin)
            };
            out.add_port(&port, PortDir::Output, 1)?;
            let port_net = out.net(&port).expect("port net exists");
            let d = inst.net_for(pin).expect("bound register input");
            out.add_alias(port_net, map(&out, n, d))?;
        }
    }
    Ok(out)
}

/// Exhaustive-check outcome. The counterexample vector is indexed like the
/// sweep: input port bits sorted by port name, bit 0 first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExhaustiveVerdict {
    Equivalent,
    Different {
        /// Assignment per input bit, in input order.
        vector: Vec<bool>,
        /// Input bit names matching `vector`.
        inputs: Vec<String>,
        /// First output bit (in name order) disagreeing at the smallest
        /// counterexample.
        port: String,
    },
}

impl ExhaustiveVerdict {
    /// One-line machine form: `EQUIV` or `DIFF vector=<bits> port=<name>`.
    pub fn machine_line(&self) -> String {
        match self {
            ExhaustiveVerdict::Equivalent => "EQUIV".to_string(),
            ExhaustiveVerdict::Different { vector, port, .. } => {
                let bits: String = vector.iter().map(|b| if *b { '1' } else { '0' }).collect();
                format!("DIFF vector={bits} port={port}")
            }
        }
    }
}

/// Input and output bit lists of a combinational netlist, ports sorted by
/// name, bits in ascending index order.
fn bit_signature(n: &Netlist) -> (Vec<(String, usize)>, Vec<(String, usize)>) {
    let mut ports: Vec<_> = n.ports.iter().collect();
    ports.sort_by(|a, b| a.name.cmp(&b.name));
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for port in ports {
        for (bit, id) in n.port_bits(port).into_iter().enumerate() {
            let name = if port.width == 1 {
                port.name.clone()
            } else {
                format!("{}[{bit}]", port.name)
            };
            let slot = n.canonical(id).index();
            match port.dir {
                PortDir::Input => ins.push((name, slot)),
                PortDir::Output => outs.push((name, slot)),
            }
        }
    }
    (ins, outs)
}

/// Input-bit indices (into `ins`) that an output cone structurally reaches.
fn support(n: &Netlist, lib: &CellLibrary, out_slot: usize, ins: &[(String, usize)]) -> Vec<usize> {
    let conn = n.connectivity(lib);
    let mut slot_to_input: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, (_, slot)) in ins.iter().enumerate() {
        slot_to_input.insert(*slot, i);
    }
    let mut seen = vec![false; n.net_count()];
    let mut stack = vec![out_slot];
    let mut found = Vec::new();
    while let Some(slot) = stack.pop() {
        if seen[slot] {
            continue;
        }
        seen[slot] = true;
        if let Some(&i) = slot_to_input.get(&slot) {
            found.push(i);
        }
        if let Some(Driver::Instance(inst)) = conn.driver[slot] {
            let cell = lib.get(&n.instances[inst].cell).expect("validated design");
            for (pin, net) in &n.instances[inst].conns {
                if !cell.is_output(pin) {
                    stack.push(n.canonical(*net).index());
                }
            }
        }
    }
    found.sort_unstable();
    found
}

/// Exhaustively compares two combinational netlists output by output. Each
/// output is swept over the union of both cones' input support, all other
/// inputs held at 0; a cone union wider than `max_inputs` is an error. The
/// reported counterexample is the smallest assignment (inputs read as a
/// little-endian integer) over all outputs.
pub fn exhaustive_equiv(
    a: &Netlist,
    b: &Netlist,
    lib: &CellLibrary,
    max_inputs: usize,
) -> Result<ExhaustiveVerdict, EquivError> {
    for n in [a, b] {
        for inst in &n.instances {
            if lib.get(&inst.cell).map(|c| c.sequential).unwrap_or(false) {
                return Err(EquivError::NotCombinational(inst.name.clone()));
            }
        }
    }
    let (a_ins, a_outs) = bit_signature(a);
    let (b_ins, b_outs) = bit_signature(b);
    let names = |bits: &[(String, usize)]| -> Vec<String> {
        bits.iter().map(|(n, _)| n.clone()).collect()
    };
    if names(&a_ins) != names(&b_ins) {
        return Err(EquivError::PortMismatch(format!(
            "inputs {:?} vs {:?}",
            names(&a_ins),
            names(&b_ins)
        )));
    }
    if names(&a_outs) != names(&b_outs) {
        return Err(EquivError::PortMismatch(format!(
            "outputs {:?} vs {:?}",
            names(&a_outs),
            names(&b_outs)
        )));
    }

    let mut eng_a = Engine::new(a, lib)?;
    let mut eng_b = Engine::new(b, lib)?;
    let mut best: Option<(u64, usize)> = None;

    for (out_idx, (port, a_slot)) in a_outs.iter().enumerate() {
        let b_slot = b_outs[out_idx].1;
        let mut cone = support(a, lib, *a_slot, &a_ins);
        for i in support(b, lib, b_slot, &b_ins) {
            if !cone.contains(&i) {
                cone.push(i);
            }
        }
        cone.sort_unstable();
        if cone.len() > max_inputs {
            return Err(EquivError::TooManyInputs {
                port: port.clone(),
                inputs: cone.len(),
                bound: max_inputs,
            });
        }
        eng_a.reset();
        eng_b.reset();
        for w in 0..1u64 << cone.len() {
            let mut v = 0u64;
            for (k, &i) in cone.iter().enumerate() {
                let bit = (w >> k) & 1 == 1;
                eng_a.write(a_ins[i].1, bit);
                eng_b.write(b_ins[i].1, bit);
                if bit {
                    v |= 1 << i;
                }
            }
            eng_a.settle(|_, _| {});
            eng_b.settle(|_, _| {});
            if eng_a.values[*a_slot] != eng_b.values[b_slot] {
                if best.map(|(bv, _)| v < bv).unwrap_or(true) {
                    best = Some((v, out_idx));
                }
                break;
            }
        }
    }

    Ok(match best {
        None => ExhaustiveVerdict::Equivalent,
        Some((v, out_idx)) => ExhaustiveVerdict::Different {
            vector: (0..a_ins.len()).map(|i| (v >> i) & 1 == 1).collect(),
            inputs: names(&a_ins),
            port: a_outs[out_idx].0.clone(),
        },
    })
}

/// Co-simulation outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CosimVerdict {
    Equivalent,
    Mismatch {
        cycle: usize,
        /// Output port disagreeing at that capture.
        port: String,
        /// Input bits that cycle: ports sorted by name, each value
        /// little-endian.
        vector: Vec<bool>,
    },
}

impl CosimVerdict {
    /// Same one-line form as the exhaustive check; the cycle index is
    /// available on the enum.
    pub fn machine_line(&self) -> String {
        match self {
            CosimVerdict::Equivalent => "EQUIV".to_string(),
            CosimVerdict::Mismatch { vector, port, .. } => {
                let bits: String = vector.iter().map(|b| if *b { '1' } else { '0' }).collect();
                format!("DIFF vector={bits} port={port}")
            }
        }
    }
}

/// Drives the single-ended design and the dual-rail design with the same
/// seeded random stimulus for `cycles` cycles and compares outputs at every
/// capture.
pub fn cosim_equiv(
    single: &Netlist,
    lib: &CellLibrary,
    dual: &DualRailNetlist,
    wlib: &WddlLibrary,
    cycles: usize,
    seed: u64,
) -> Result<CosimVerdict, EquivError> {
    let mut in_ports: Vec<(String, u32)> = single
        .ports
        .iter()
        .filter(|p| p.dir == PortDir::Input && single.clock.as_deref() != Some(p.name.as_str()))
        .map(|p| (p.name.clone(), p.width))
        .collect();
    in_ports.sort();
    {
        let mut dual_ports: Vec<(String, u32)> = dual
            .netlist
            .ports
            .iter()
            .filter(|p| {
                p.dir == PortDir::Input && dual.netlist.clock.as_deref() != Some(p.name.as_str())
            })
            .filter_map(|p| crate::dualrail::logical_name(&p.name))
            .filter(|(_, is_true)| *is_true)
            .map(|(logical, _)| logical)
            .map(|logical| {
                let width = dual
                    .netlist
                    .port(&crate::dualrail::rail_name(&logical, true))
                    .map(|p| p.width)
                    .unwrap_or(0);
                (logical, width)
            })
            .collect();
        dual_ports.sort();
        if in_ports != dual_ports {
            return Err(EquivError::PortMismatch(format!(
                "inputs {in_ports:?} vs {dual_ports:?}"
            )));
        }
    }

    let caps_s = CapTable::uniform(single, 0.0);
    let caps_d = CapTable::uniform(&dual.netlist, 0.0);
    let mut sim_s = SingleSim::new(single, lib, &caps_s, 1)?;
    let mut sim_d = DualSim::new(dual, wlib, &caps_d, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for cycle in 0..cycles {
        let mut inputs = BTreeMap::new();
        let mut vector = Vec::new();
        for (name, width) in &in_ports {
            let v = rng.gen_range(0..1u64 << width);
            for bit in 0..*width {
                vector.push((v >> bit) & 1 == 1);
            }
            inputs.insert(name.clone(), v);
        }
        let out_s = sim_s.step(&inputs)?;
        let out_d = sim_d.step(&inputs)?;
        if out_s.outputs != out_d.outputs {
            let port = out_s
                .outputs
                .iter()
                .find(|(k, v)| out_d.outputs.get(*k) != Some(v))
                .map(|(k, _)| k.clone())
                .unwrap_or_else(|| "?".to_string());
            return Ok(CosimVerdict::Mismatch {
                cycle,
                port,
                vector,
            });
        }
    }
    Ok(CosimVerdict::Equivalent)
}
