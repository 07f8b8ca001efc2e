//! Seeded random combinational netlists for corpus-style testing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cells::CellLibrary;
use crate::netlist::{Netlist, PortDir};

/// Hard caps for generated designs. Small enough that exhaustive
/// input sweeps stay cheap, large enough to hit every cell at least
/// once in a modest corpus.
pub const MAX_INPUTS: usize = 12;
pub const MAX_GATES: usize = 40;

struct PlannedGate {
    cell: &'static str,
    // Indices into the signal list: 0..n_inputs are input ports,
    // n_inputs + k is the output of gate k.
    sources: Vec<usize>,
}

const COMB_CELLS: &[(&str, usize)] = &[
    ("AND2", 2),
    ("OR2", 2),
    ("NAND2", 2),
    ("NOR2", 2),
    ("XOR2", 2),
    ("XNOR2", 2),
    ("INV", 1),
    ("AOI32", 5),
    ("OAI32", 5),
];

/// Builds a random combinational netlist over the standard cell set.
///
/// The same seed always yields the same netlist. Gate inputs are drawn
/// from the ports and from earlier gate outputs only, so the result is
/// acyclic by construction. Every gate output that nothing reads is
/// exposed as an output port; there is always at least one because the
/// last gate has no downstream readers.
pub fn random_combinational(seed: u64, max_inputs: usize, max_gates: usize) -> Netlist {
    let max_inputs = max_inputs.clamp(1, MAX_INPUTS);
    let max_gates = max_gates.clamp(1, MAX_GATES);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_inputs = rng.gen_range(1..=max_inputs);
    let n_gates = rng.gen_range(1..=max_gates);

    let mut gates: Vec<PlannedGate> = Vec::with_capacity(n_gates);
    for k in 0..n_gates {
        let (cell, arity) = COMB_CELLS[rng.gen_range(0..COMB_CELLS.len())];
        let pool = n_inputs + k;
        let sources = (0..arity).map(|_| rng.gen_range(0..pool)).collect();
        gates.push(PlannedGate { cell, sources });
    }

    let mut read = vec![false; n_inputs + n_gates];
    for gate in &gates {
        for &s in &gate.sources {
            read[s] = true;
        }
    }

    let mut n = Netlist::new(&format!("rand{seed}"));
    let mut signals = Vec::with_capacity(n_inputs + n_gates);
    for i in 0..n_inputs {
        let name = format!("i{i}");
        n.add_port(&name, PortDir::Input, 1).unwrap();
        signals.push(n.net(&name).unwrap());
    }
    let mut out_idx = 0usize;
    for k in 0..gates.len() {
        let id = if read[n_inputs + k] {
            n.add_net(&format!("g{k}")).unwrap()
        } else {
            let name = format!("o{out_idx}");
            n.add_port(&name, PortDir::Output, 1).unwrap();
            out_idx += 1;
            n.net(&name).unwrap()
        };
        signals.push(id);
    }

    let lib = CellLibrary::standard();
    for (k, gate) in gates.iter().enumerate() {
        let cell = lib.get(gate.cell).unwrap();
        let mut conns: Vec<(String, _)> = cell
            .inputs
            .iter()
            .zip(&gate.sources)
            .map(|(pin, &s)| (pin.clone(), signals[s]))
            .collect();
        conns.push((cell.output_name().to_string(), signals[n_inputs + k]));
        n.add_instance(&format!("g{k}"), gate.cell, conns).unwrap();
    }
    n
}
