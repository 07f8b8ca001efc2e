//! Cycle-based gate-level simulation with charge accounting.
//!
//! Dual-rail designs run a two-phase cycle: a precharge phase drives every
//! input rail low and blanks register outputs, so the zero wave settles
//! through the monotone compounds; the evaluate phase then presents encoded
//! inputs and stored register pairs. Supply energy is counted on rising net
//! transitions only (charging), weighted by the net's capacitance, and
//! binned into per-cycle sample buckets by the driving gate's logic depth.
//! Single-ended designs use the same energy rule on value changes between
//! consecutive cycles.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::cap::CapTable;
use crate::cells::CellLibrary;
use crate::dualrail::{rail_name, DualRailNetlist, WddlLibrary};
use crate::netlist::{validate_netlist, DiagKind, Driver, Netlist, PortDir};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("combinational logic cannot settle: cycle through {0}")]
    NonSettling(String),
    #[error("design is invalid: {0}")]
    Invalid(String),
    #[error("stimulus cycle {cycle}: {msg}")]
    Stimulus { cycle: usize, msg: String },
    #[error("no capacitance entry for net {0}")]
    MissingCap(String),
    #[error("unknown register {0}")]
    UnknownRegister(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Precharge,
    Evaluate,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Precharge => f.write_str("precharge"),
            Phase::Evaluate => f.write_str("evaluate"),
        }
    }
}

/// One rising output transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchEvent {
    pub gate: String,
    pub cycle: usize,
    pub phase: Phase,
    /// Net that rose.
    pub rail: String,
}

/// Rising-transition accounting for a whole run.
#[derive(Debug, Clone, Default)]
pub struct SwitchStats {
    /// Rising gate-output transitions per cycle. For dual-rail runs this
    /// counts the evaluate phase, where each compound fires exactly once.
    pub rising_per_cycle: Vec<usize>,
    /// Per-event log; populated only when logging was requested.
    pub events: Vec<SwitchEvent>,
    pub logged: bool,
}

impl SwitchStats {
    /// CSV form of the event log: `gate,cycle,phase,rail`.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("gate,cycle,phase,rail\n");
        for e in &self.events {
            out.push_str(&format!("{},{},{},{}\n", e.gate, e.cycle, e.phase, e.rail));
        }
        out
    }
}

/// Per-cycle counts of rising transitions.
pub fn switching_histogram(stats: &SwitchStats) -> &[usize] {
    &stats.rising_per_cycle
}

/// Per-cycle energy, split into depth-indexed sample buckets.
#[derive(Debug, Clone)]
pub struct PowerTrace {
    pub samples_per_cycle: usize,
    /// One sample vector per cycle; each cycle's total is the exact sum of
    /// its samples.
    pub samples: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
}

impl PowerTrace {
    fn new(samples_per_cycle: usize) -> Self {
        PowerTrace {
            samples_per_cycle,
            samples: Vec::new(),
            totals: Vec::new(),
        }
    }

    fn push(&mut self, samples: Vec<f64>) {
        self.totals.push(samples.iter().sum());
        self.samples.push(samples);
    }

    /// CSV form, one row per cycle: `cycle,total_energy,s0,...,s{k-1}`.
    pub fn to_csv(&self) -> String {
        let mut head = String::from("cycle,total_energy");
        for i in 0..self.samples_per_cycle {
            head.push_str(&format!(",s{i}"));
        }
        head.push('\n');
        let mut out = head;
        for (cycle, (total, row)) in self.totals.iter().zip(&self.samples).enumerate() {
            out.push_str(&format!("{cycle},{total}"));
            for s in row {
                out.push_str(&format!(",{s}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlarmKind {
    /// Register input pair (0,0) at capture: the evaluate wave did not reach
    /// the register in time (or a null was injected).
    BothLow,
    /// Register input pair (1,1): not a valid dual-rail encoding.
    BothHigh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alarm {
    pub cycle: usize,
    pub register: String,
    pub kind: AlarmKind,
}

/// Alarm decision for a register's rail inputs at the capture instant.
pub fn fault_alarm(d_true: bool, d_false: bool) -> Option<AlarmKind> {
    match (d_true, d_false) {
        (false, false) => Some(AlarmKind::BothLow),
        (true, true) => Some(AlarmKind::BothHigh),
        _ => None,
    }
}

/// Shared evaluation core: topologically ordered settling over one netlist.
pub(crate) struct Engine<'a> {
    n: &'a Netlist,
    lib: &'a CellLibrary,
    /// Value per canonical net slot.
    pub(crate) values: Vec<bool>,
    /// Combinational instance indices in dependency order.
    comb_order: Vec<usize>,
    /// Sequential instance indices.
    regs: Vec<usize>,
    /// (pin, canonical slot) per instance.
    pin_slots: Vec<Vec<(String, usize)>>,
    /// Logic depth per instance: registers 0, combinational 1 + max(fanin).
    depth: Vec<usize>,
    max_depth: usize,
    /// Canonical slots driven by an instance (the only slots whose rises
    /// draw supply energy).
    pub(crate) instance_driven: Vec<Option<usize>>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(n: &'a Netlist, lib: &'a CellLibrary) -> Result<Self, SimError> {
        let diags = validate_netlist(n, lib);
        if let Some(d) = diags.first() {
            if d.kind == DiagKind::CombinationalCycle {
                return Err(SimError::NonSettling(d.object.clone()));
            }
            return Err(SimError::Invalid(d.message.clone()));
        }
        let conn = n.connectivity(lib);
        let count = n.instances.len();
        let mut pin_slots = Vec::with_capacity(count);
        for inst in &n.instances {
            pin_slots.push(
                inst.conns
                    .iter()
                    .map(|(pin, net)| (pin.clone(), n.canonical(*net).index()))
                    .collect::<Vec<_>>(),
            );
        }
        let mut instance_driven = vec![None; n.net_count()];
        for (slot, driver) in conn.driver.iter().enumerate() {
            if let Some(Driver::Instance(i)) = driver {
                instance_driven[slot] = Some(*i);
            }
        }

        let seq: Vec<bool> = n
            .instances
            .iter()
            .map(|i| lib.get(&i.cell).map(|c| c.sequential).unwrap_or(false))
            .collect();
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); count];
        let mut indegree = vec![0usize; count];
        for (i, inst) in n.instances.iter().enumerate() {
            if seq[i] {
                continue;
            }
            let cell = lib.get(&inst.cell).expect("validated design");
            for (pin, net) in &inst.conns {
                if cell.is_output(pin) {
                    continue;
                }
                let slot = n.canonical(*net).index();
                if let Some(j) = instance_driven[slot] {
                    if !seq[j] {
                        dependents[j].push(i);
                        indegree[i] += 1;
                    }
                }
            }
        }
        let mut queue: VecDeque<usize> = (0..count)
            .filter(|&i| !seq[i] && indegree[i] == 0)
            .collect();
        let mut comb_order = Vec::new();
        while let Some(i) = queue.pop_front() {
            comb_order.push(i);
            for &j in &dependents[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        let comb_total = seq.iter().filter(|s| !**s).count();
        if comb_order.len() < comb_total {
            let stuck = (0..count)
                .find(|&i| !seq[i] && indegree[i] > 0)
                .expect("an unordered gate exists");
            return Err(SimError::NonSettling(n.instances[stuck].name.clone()));
        }

        let mut depth = vec![0usize; count];
        for &i in &comb_order {
            let cell = lib.get(&n.instances[i].cell).expect("validated design");
            let mut level = 0;
            for (pin, net) in &n.instances[i].conns {
                if cell.is_output(pin) {
                    continue;
                }
                let slot = n.canonical(*net).index();
                if let Some(j) = instance_driven[slot] {
                    if !seq[j] {
                        level = level.max(depth[j]);
                    }
                }
            }
            depth[i] = level + 1;
        }
        let max_depth = depth.iter().copied().max().unwrap_or(0);
        let regs = (0..count).filter(|&i| seq[i]).collect();

        Ok(Engine {
            n,
            lib,
            values: vec![false; n.net_count()],
            comb_order,
            regs,
            pin_slots,
            depth,
            max_depth,
            instance_driven,
        })
    }

    fn slot(&self, inst: usize, pin: &str) -> usize {
        self.pin_slots[inst]
            .iter()
            .find(|(p, _)| p == pin)
            .map(|(_, s)| *s)
            .expect("pin is bound")
    }

    /// Writes a value; reports whether the slot rose.
    pub(crate) fn write(&mut self, slot: usize, v: bool) -> bool {
        let rose = !self.values[slot] && v;
        self.values[slot] = v;
        rose
    }

    /// Settles combinational logic in dependency order, reporting rising
    /// gate outputs as (instance, slot).
    pub(crate) fn settle(&mut self, mut on_rise: impl FnMut(usize, usize)) {
        for k in 0..self.comb_order.len() {
            let i = self.comb_order[k];
            let cell = self.lib.get(&self.n.instances[i].cell).expect("validated");
            let mut outs: Vec<(usize, bool)> = Vec::with_capacity(cell.outputs.len());
            for out in &cell.outputs {
                let Some(logic) = out.logic.as_ref() else {
                    continue;
                };
                let pins = &self.pin_slots[i];
                let values = &self.values;
                let v = logic.eval(&|name: &str| {
                    pins.iter()
                        .find(|(p, _)| p == name)
                        .map(|(_, s)| values[*s])
                        .expect("expression pins are bound")
                });
                outs.push((self.slot(i, &out.name), v));
            }
            for (slot, v) in outs {
                if self.write(slot, v) {
                    on_rise(i, slot);
                }
            }
        }
    }

    pub(crate) fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = false);
    }
}

/// Looks up input port bit slots, erroring on missing/misfit stimulus.
fn encode_stimulus(
    ports: &[(String, u32)],
    inputs: &BTreeMap<String, u64>,
    cycle: usize,
) -> Result<(), SimError> {
    for (name, width) in ports {
        match inputs.get(name) {
            None => {
                return Err(SimError::Stimulus {
                    cycle,
                    msg: format!("missing value for input port {name}"),
                })
            }
            Some(v) if *width < 64 && *v >> width != 0 => {
                return Err(SimError::Stimulus {
                    cycle,
                    msg: format!("value {v} does not fit port {name}[{width}]"),
                })
            }
            Some(_) => {}
        }
    }
    for name in inputs.keys() {
        if !ports.iter().any(|(p, _)| p == name) {
            return Err(SimError::Stimulus {
                cycle,
                msg: format!("unknown input port {name}"),
            });
        }
    }
    Ok(())
}

/// What one simulated cycle produced.
#[derive(Debug, Clone)]
pub struct CycleOut {
    pub cycle: usize,
    /// Decoded output port values at the end of the evaluate phase.
    pub outputs: BTreeMap<String, u64>,
    pub energy: f64,
    pub samples: Vec<f64>,
    /// Rising gate-output transitions in the evaluate phase.
    pub rises: usize,
    pub alarms: Vec<Alarm>,
    /// Nets left high after the precharge settle (always empty for a sound
    /// dual-rail design). Single-ended simulation leaves this empty.
    pub precharge_violations: Vec<String>,
    /// Rail pairs that settled non-complementary in the evaluate phase.
    pub pair_violations: Vec<String>,
}

struct DualReg {
    inst: usize,
    name: String,
    d: (usize, usize),
    q: (usize, usize),
    /// Stored rail pair; reset is logical 0, i.e. (0,1).
    state: (bool, bool),
}

/// Stepping simulator for a dual-rail design.
pub struct DualSim<'a> {
    eng: Engine<'a>,
    caps: Vec<f64>,
    bucket: Vec<usize>,
    samples_per_cycle: usize,
    regs: Vec<DualReg>,
    in_ports: Vec<(String, u32)>,
    in_bits: Vec<(usize, Vec<(usize, usize)>)>,
    out_bits: Vec<(String, Vec<(usize, usize)>)>,
    pair_slots: Vec<(String, usize, usize)>,
    cycle: usize,
    pending_null: Vec<usize>,
    pub log_events: bool,
    events: Vec<SwitchEvent>,
}

fn port_caps(
    n: &Netlist,
    table: &CapTable,
    instance_driven: &[Option<usize>],
) -> Result<Vec<f64>, SimError> {
    let mut caps = vec![0.0; n.net_count()];
    for id in n.net_ids() {
        let slot = id.index();
        if n.canonical(id) != id {
            continue;
        }
        match table.total(n.net_name(id)) {
            Some(c) => caps[slot] = c,
            None if instance_driven[slot].is_some() => {
                return Err(SimError::MissingCap(n.net_name(id).to_string()))
            }
            None => {}
        }
    }
    Ok(caps)
}

impl<'a> DualSim<'a> {
    pub fn new(
        dual: &'a DualRailNetlist,
        wlib: &'a WddlLibrary,
        table: &CapTable,
        samples_per_cycle: usize,
    ) -> Result<Self, SimError> {
        assert!(samples_per_cycle > 0, "at least one sample bucket");
        let n = &dual.netlist;
        let eng = Engine::new(n, &wlib.all)?;
        let caps = port_caps(n, table, &eng.instance_driven)?;
        let bucket = eng
            .depth
            .iter()
            .map(|&d| d * samples_per_cycle / (eng.max_depth + 1))
            .collect();

        let mut regs = Vec::new();
        for &i in &eng.regs {
            let inst = &n.instances[i];
            let cell = wlib.all.get(&inst.cell).expect("validated design");
            let dp = cell.data_pins();
            let d = (eng.slot(i, &dp[0]), eng.slot(i, &dp[1]));
            let q = (
                eng.slot(i, &cell.outputs[0].name),
                eng.slot(i, &cell.outputs[1].name),
            );
            regs.push(DualReg {
                inst: i,
                name: inst.name.clone(),
                d,
                q,
                state: (false, true),
            });
        }

        let mut in_ports = Vec::new();
        let mut in_bits = Vec::new();
        let mut out_bits = Vec::new();
        for port in &n.ports {
            if n.clock.as_deref() == Some(port.name.as_str()) {
                continue;
            }
            let Some((logical, true)) = crate::dualrail::logical_name(&port.name) else {
                continue;
            };
            let f_port = n
                .port(&rail_name(&logical, false))
                .expect("rail ports come in pairs");
            let slots: Vec<(usize, usize)> = n
                .port_bits(port)
                .into_iter()
                .zip(n.port_bits(f_port))
                .map(|(t, f)| (n.canonical(t).index(), n.canonical(f).index()))
                .collect();
            match port.dir {
                PortDir::Input => {
                    in_ports.push((logical, port.width));
                    in_bits.push((in_ports.len() - 1, slots));
                }
                PortDir::Output => out_bits.push((logical, slots)),
            }
        }

        let pair_slots = dual
            .pairs
            .iter()
            .map(|p| {
                (
                    p.logical.clone(),
                    n.canonical(p.t).index(),
                    n.canonical(p.f).index(),
                )
            })
            .collect();

        Ok(DualSim {
            eng,
            caps,
            bucket,
            samples_per_cycle,
            regs,
            in_ports,
            in_bits,
            out_bits,
            pair_slots,
            cycle: 0,
            pending_null: Vec::new(),
            log_events: false,
            events: Vec::new(),
        })
    }

    pub fn reset(&mut self) {
        self.eng.reset();
        for r in &mut self.regs {
            r.state = (false, true);
        }
        self.cycle = 0;
        self.pending_null.clear();
        self.events.clear();
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    pub fn register_names(&self) -> Vec<String> {
        self.regs.iter().map(|r| r.name.clone()).collect()
    }

    /// Forces the named register's input pair to (0,0) at the next capture.
    pub fn inject_null(&mut self, register: &str) -> Result<(), SimError> {
        match self.regs.iter().position(|r| r.name == register) {
            Some(i) => {
                if !self.pending_null.contains(&i) {
                    self.pending_null.push(i);
                }
                Ok(())
            }
            None => Err(SimError::UnknownRegister(register.to_string())),
        }
    }

    pub fn take_events(&mut self) -> Vec<SwitchEvent> {
        std::mem::take(&mut self.events)
    }

    /// Runs one full precharge + evaluate cycle.
    pub fn step(&mut self, inputs: &BTreeMap<String, u64>) -> Result<CycleOut, SimError> {
        encode_stimulus(&self.in_ports, inputs, self.cycle)?;
        let mut samples = vec![0.0; self.samples_per_cycle];
        let mut rises_eval = 0usize;
        let cycle = self.cycle;

        // Precharge: zero rails at inputs and registers; the wave settles
        // everything low in a sound design.
        for (_, slots) in &self.in_bits {
            for &(t, f) in slots {
                self.eng.write(t, false);
                self.eng.write(f, false);
            }
        }
        for r in &self.regs {
            self.eng.write(r.q.0, false);
            self.eng.write(r.q.1, false);
        }
        let mut precharge_rises: Vec<(usize, usize)> = Vec::new();
        self.eng.settle(|inst, slot| precharge_rises.push((inst, slot)));
        for &(inst, slot) in &precharge_rises {
            samples[self.bucket[inst]] += self.caps[slot];
            if self.log_events {
                self.events.push(SwitchEvent {
                    gate: self.eng.n.instances[inst].name.clone(),
                    cycle,
                    phase: Phase::Precharge,
                    rail: self.eng.n.net_name(crate::netlist::NetId(slot as u32)).to_string(),
                });
            }
        }
        let precharge_violations: Vec<String> = self
            .eng
            .n
            .net_ids()
            .filter(|&id| self.eng.n.canonical(id) == id && self.eng.values[id.index()])
            .map(|id| self.eng.n.net_name(id).to_string())
            .collect();

        // Evaluate: encoded inputs and stored register pairs.
        for (port_idx, slots) in &self.in_bits {
            let value = inputs[&self.in_ports[*port_idx].0];
            for (bit, &(t, f)) in slots.iter().enumerate() {
                let v = (value >> bit) & 1 == 1;
                self.eng.write(t, v);
                self.eng.write(f, !v);
            }
        }
        let record =
            |events: &mut Vec<SwitchEvent>, n: &Netlist, inst: usize, slot: usize, log: bool| {
                if log {
                    events.push(SwitchEvent {
                        gate: n.instances[inst].name.clone(),
                        cycle,
                        phase: Phase::Evaluate,
                        rail: n.net_name(crate::netlist::NetId(slot as u32)).to_string(),
                    });
                }
            };
        for r in &self.regs {
            for (slot, v) in [(r.q.0, r.state.0), (r.q.1, r.state.1)] {
                if self.eng.write(slot, v) {
                    rises_eval += 1;
                    samples[self.bucket[r.inst]] += self.caps[slot];
                    record(&mut self.events, self.eng.n, r.inst, slot, self.log_events);
                }
            }
        }
        let mut eval_rises: Vec<(usize, usize)> = Vec::new();
        self.eng.settle(|inst, slot| eval_rises.push((inst, slot)));
        for &(inst, slot) in &eval_rises {
            rises_eval += 1;
            samples[self.bucket[inst]] += self.caps[slot];
            record(&mut self.events, self.eng.n, inst, slot, self.log_events);
        }

        let mut outputs = BTreeMap::new();
        for (name, slots) in &self.out_bits {
            let mut v = 0u64;
            for (bit, &(t, _)) in slots.iter().enumerate() {
                v |= (self.eng.values[t] as u64) << bit;
            }
            outputs.insert(name.clone(), v);
        }

        let pair_violations: Vec<String> = self
            .pair_slots
            .iter()
            .filter(|(_, t, f)| self.eng.values[*t] == self.eng.values[*f])
            .map(|(logical, _, _)| logical.clone())
            .collect();

        // Capture on the clock edge closing the evaluate phase.
        let mut alarms = Vec::new();
        for (idx, r) in self.regs.iter_mut().enumerate() {
            let mut d = (self.eng.values[r.d.0], self.eng.values[r.d.1]);
            if self.pending_null.contains(&idx) {
                d = (false, false);
            }
            if let Some(kind) = fault_alarm(d.0, d.1) {
                alarms.push(Alarm {
                    cycle,
                    register: r.name.clone(),
                    kind,
                });
            }
            r.state = d;
        }
        self.pending_null.clear();
        self.cycle += 1;

        let energy = samples.iter().sum();
        Ok(CycleOut {
            cycle,
            outputs,
            energy,
            samples,
            rises: rises_eval,
            alarms,
            precharge_violations,
            pair_violations,
        })
    }
}

struct SingleReg {
    inst: usize,
    d: usize,
    q: usize,
    state: bool,
}

/// Stepping simulator for a single-ended design.
pub struct SingleSim<'a> {
    eng: Engine<'a>,
    caps: Vec<f64>,
    bucket: Vec<usize>,
    samples_per_cycle: usize,
    regs: Vec<SingleReg>,
    in_ports: Vec<(String, u32)>,
    in_bits: Vec<(usize, Vec<usize>)>,
    out_bits: Vec<(String, Vec<usize>)>,
    cycle: usize,
    pub log_events: bool,
    events: Vec<SwitchEvent>,
}

impl<'a> SingleSim<'a> {
    pub fn new(
        n: &'a Netlist,
        lib: &'a CellLibrary,
        table: &CapTable,
        samples_per_cycle: usize,
    ) -> Result<Self, SimError> {
        assert!(samples_per_cycle > 0, "at least one sample bucket");
        let eng = Engine::new(n, lib)?;
        let caps = port_caps(n, table, &eng.instance_driven)?;
        let bucket = eng
            .depth
            .iter()
            .map(|&d| d * samples_per_cycle / (eng.max_depth + 1))
            .collect();
        let mut regs = Vec::new();
        for &i in &eng.regs {
            let inst = &n.instances[i];
            let cell = lib.get(&inst.cell).expect("validated design");
            regs.push(SingleReg {
                inst: i,
                d: eng.slot(i, cell.data_pin()),
                q: eng.slot(i, cell.output_name()),
                state: false,
            });
        }
        let mut in_ports = Vec::new();
        let mut in_bits = Vec::new();
        let mut out_bits = Vec::new();
        for port in &n.ports {
            if n.clock.as_deref() == Some(port.name.as_str()) {
                continue;
            }
            let slots: Vec<usize> = n
                .port_bits(port)
                .into_iter()
                .map(|id| n.canonical(id).index())
                .collect();
            match port.dir {
                PortDir::Input => {
                    in_ports.push((port.name.clone(), port.width));
                    in_bits.push((in_ports.len() - 1, slots));
                }
                PortDir::Output => out_bits.push((port.name.clone(), slots)),
            }
        }
        Ok(SingleSim {
            eng,
            caps,
            bucket,
            samples_per_cycle,
            regs,
            in_ports,
            in_bits,
            out_bits,
            cycle: 0,
            log_events: false,
            events: Vec::new(),
        })
    }

    pub fn reset(&mut self) {
        self.eng.reset();
        for r in &mut self.regs {
            r.state = false;
        }
        self.cycle = 0;
        self.events.clear();
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    pub fn take_events(&mut self) -> Vec<SwitchEvent> {
        std::mem::take(&mut self.events)
    }

    /// Runs one clocked cycle; energy reflects changes from the previous
    /// cycle's settled values.
    pub fn step(&mut self, inputs: &BTreeMap<String, u64>) -> Result<CycleOut, SimError> {
        encode_stimulus(&self.in_ports, inputs, self.cycle)?;
        let mut samples = vec![0.0; self.samples_per_cycle];
        let mut rises = 0usize;
        let cycle = self.cycle;

        for (port_idx, slots) in &self.in_bits {
            let value = inputs[&self.in_ports[*port_idx].0];
            for (bit, &slot) in slots.iter().enumerate() {
                self.eng.write(slot, (value >> bit) & 1 == 1);
            }
        }
        for r in &self.regs {
            if self.eng.write(r.q, r.state) {
                rises += 1;
                samples[self.bucket[r.inst]] += self.caps[r.q];
                if self.log_events {
                    self.events.push(SwitchEvent {
                        gate: self.eng.n.instances[r.inst].name.clone(),
                        cycle,
                        phase: Phase::Evaluate,
                        rail: self
                            .eng
                            .n
                            .net_name(crate::netlist::NetId(r.q as u32))
                            .to_string(),
                    });
                }
            }
        }
        let mut comb_rises: Vec<(usize, usize)> = Vec::new();
        self.eng.settle(|inst, slot| comb_rises.push((inst, slot)));
        for &(inst, slot) in &comb_rises {
            rises += 1;
            samples[self.bucket[inst]] += self.caps[slot];
            if self.log_events {
                self.events.push(SwitchEvent {
                    gate: self.eng.n.instances[inst].name.clone(),
                    cycle,
                    phase: Phase::Evaluate,
                    rail: self
                        .eng
                        .n
                        .net_name(crate::netlist::NetId(slot as u32))
                        .to_string(),
                });
            }
        }

        let mut outputs = BTreeMap::new();
        for (name, slots) in &self.out_bits {
            let mut v = 0u64;
            for (bit, &slot) in slots.iter().enumerate() {
                v |= (self.eng.values[slot] as u64) << bit;
            }
            outputs.insert(name.clone(), v);
        }
        for r in &mut self.regs {
            r.state = self.eng.values[r.d];
        }
        self.cycle += 1;

        let energy = samples.iter().sum();
        Ok(CycleOut {
            cycle,
            outputs,
            energy,
            samples,
            rises,
            alarms: Vec::new(),
            precharge_violations: Vec::new(),
            pair_violations: Vec::new(),
        })
    }
}

/// A design plus everything needed to simulate it.
pub enum DesignRef<'a> {
    Single(&'a Netlist, &'a CellLibrary),
    Dual(&'a DualRailNetlist, &'a WddlLibrary),
}

/// Full result of a batch simulation.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub outputs: Vec<BTreeMap<String, u64>>,
    pub power: PowerTrace,
    pub switches: SwitchStats,
    pub alarms: Vec<Alarm>,
}

/// Simulates `stimulus.len()` cycles and aggregates the per-cycle records.
pub fn simulate(
    design: DesignRef<'_>,
    table: &CapTable,
    stimulus: &[BTreeMap<String, u64>],
    samples_per_cycle: usize,
    log_events: bool,
) -> Result<SimResult, SimError> {
    let mut outputs = Vec::with_capacity(stimulus.len());
    let mut power = PowerTrace::new(samples_per_cycle);
    let mut switches = SwitchStats {
        logged: log_events,
        ..SwitchStats::default()
    };
    let mut alarms = Vec::new();
    let mut push = |out: CycleOut| {
        outputs.push(out.outputs);
        power.push(out.samples);
        switches.rising_per_cycle.push(out.rises);
        alarms.extend(out.alarms);
    };
    match design {
        DesignRef::Single(n, lib) => {
            let mut sim = SingleSim::new(n, lib, table, samples_per_cycle)?;
            sim.log_events = log_events;
            for inputs in stimulus {
                push(sim.step(inputs)?);
            }
            switches.events = sim.take_events();
        }
        DesignRef::Dual(dual, wlib) => {
            let mut sim = DualSim::new(dual, wlib, table, samples_per_cycle)?;
            sim.log_events = log_events;
            for inputs in stimulus {
                push(sim.step(inputs)?);
            }
            switches.events = sim.take_events();
        }
    }
    Ok(SimResult {
        outputs,
        power,
        switches,
        alarms,
    })
}

/// One precharge violation: a net stuck high under the all-zero wave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrechargeViolation {
    pub net: String,
    /// Gate driving the offending net, when one exists.
    pub gate: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PrechargeReport {
    pub pass: bool,
    pub violations: Vec<PrechargeViolation>,
}

/// Drives every input rail low, blanks the registers, settles, and checks
/// that the zero wave reached every net.
pub fn precharge_check(
    dual: &DualRailNetlist,
    wlib: &WddlLibrary,
) -> Result<PrechargeReport, SimError> {
    let n = &dual.netlist;
    let mut eng = Engine::new(n, &wlib.all)?;
    for &i in &eng.regs.clone() {
        let cell = wlib.all.get(&n.instances[i].cell).expect("validated design");
        for out in &cell.outputs {
            let slot = eng.slot(i, &out.name);
            eng.write(slot, false);
        }
    }
    eng.settle(|_, _| {});
    let violations: Vec<PrechargeViolation> = n
        .net_ids()
        .filter(|&id| n.canonical(id) == id && eng.values[id.index()])
        .map(|id| PrechargeViolation {
            net: n.net_name(id).to_string(),
            gate: eng.instance_driven[id.index()].map(|i| n.instances[i].name.clone()),
        })
        .collect();
    Ok(PrechargeReport {
        pass: violations.is_empty(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cap::NetCap;
    use crate::dualrail::substitute_cells;
    use crate::dut::{build_des_module, dut_reference_output, DutConfig};
    use crate::text::parse_netlist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wlib() -> WddlLibrary {
        WddlLibrary::derive(&CellLibrary::standard())
    }

    fn and_module() -> Netlist {
        parse_netlist(
            "module top ( a , b , y ) ;\ninput a ;\ninput b ;\noutput y ;\nAND2 u1 ( .A(a) , .B(b) , .Y(y) ) ;\nendmodule\n",
            &CellLibrary::standard(),
        )
        .unwrap()
    }

    fn stim(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn dual_and_energy_is_one_output_cap() {
        let w = wlib();
        let n = and_module();
        let dual = substitute_cells(&n, &w).unwrap();
        let mut table = CapTable::new();
        let c = 2.5;
        table.insert("y_t", NetCap { wire: 0.0, pin: c });
        table.insert("y_f", NetCap { wire: 0.0, pin: c });
        let mut sim = DualSim::new(&dual, &w, &table, 4).unwrap();
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let out = sim.step(&stim(&[("a", a), ("b", b)])).unwrap();
            assert_eq!(out.energy, c, "inputs ({a},{b})");
            assert_eq!(out.rises, 1);
            assert_eq!(out.outputs["y"], a & b);
            assert!(out.precharge_violations.is_empty());
            assert!(out.pair_violations.is_empty());
        }
    }

    #[test]
    fn dual_and_unbalanced_caps_reveal_the_rail() {
        let w = wlib();
        let n = and_module();
        let dual = substitute_cells(&n, &w).unwrap();
        let mut table = CapTable::new();
        table.insert("y_t", NetCap { wire: 0.0, pin: 3.0 });
        table.insert("y_f", NetCap { wire: 0.0, pin: 5.0 });
        let mut sim = DualSim::new(&dual, &w, &table, 1).unwrap();
        let e11 = sim.step(&stim(&[("a", 1), ("b", 1)])).unwrap().energy;
        let e01 = sim.step(&stim(&[("a", 0), ("b", 1)])).unwrap().energy;
        assert_eq!(e11, 3.0);
        assert_eq!(e01, 5.0);
    }

    #[test]
    fn single_and_without_rises_draws_nothing() {
        let n = and_module();
        let lib = CellLibrary::standard();
        let mut table = CapTable::new();
        table.insert("y", NetCap { wire: 0.0, pin: 7.0 });
        let mut sim = SingleSim::new(&n, &lib, &table, 1).unwrap();
        for _ in 0..5 {
            let out = sim.step(&stim(&[("a", 0), ("b", 1)])).unwrap();
            assert_eq!(out.energy, 0.0);
            assert_eq!(out.rises, 0);
        }
        let out = sim.step(&stim(&[("a", 1), ("b", 1)])).unwrap();
        assert_eq!(out.energy, 7.0);
    }

    #[test]
    fn missing_cap_on_gate_output_is_an_error() {
        let n = and_module();
        let lib = CellLibrary::standard();
        let table = CapTable::new();
        match SingleSim::new(&n, &lib, &table, 1) {
            Err(SimError::MissingCap(net)) => assert_eq!(net, "y"),
            other => panic!("expected a missing-cap error, got {:?}", other.err()),
        }
    }

    #[test]
    fn des_dual_switching_count_is_constant() {
        let w = wlib();
        let des = build_des_module(&DutConfig::default()).unwrap();
        let dual = substitute_cells(&des, &w).unwrap();
        let table = CapTable::uniform(&dual.netlist, 1.0);
        let mut sim = DualSim::new(&dual, &w, &table, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = Vec::new();
        let mut energies = Vec::new();
        let mut sample_rows: Vec<Vec<f64>> = Vec::new();
        for i in 0..60 {
            let (pl, pr) = if i % 7 == 3 {
                (5, 33)
            } else {
                (rng.gen_range(0..16), rng.gen_range(0..64))
            };
            let out = sim.step(&stim(&[("pl", pl), ("pr", pr)])).unwrap();
            assert!(out.precharge_violations.is_empty());
            assert!(out.pair_violations.is_empty());
            assert!(out.alarms.is_empty());
            counts.push(out.rises);
            energies.push(out.energy);
            sample_rows.push(out.samples);
        }
        assert_eq!(counts[0], dual.netlist.instances.len());
        assert!(counts.iter().all(|&c| c == counts[0]));
        assert!(energies.iter().all(|&e| e == energies[0]));
        assert!(sample_rows.iter().all(|r| *r == sample_rows[0]));
    }

    #[test]
    fn dual_outputs_track_the_reference_model() {
        let cfg = DutConfig::default();
        let w = wlib();
        let des = build_des_module(&cfg).unwrap();
        let dual = substitute_cells(&des, &w).unwrap();
        let lib = CellLibrary::standard();
        let table_s = CapTable::uniform(&des, 1.0);
        let table_d = CapTable::uniform(&dual.netlist, 1.0);
        let mut single = SingleSim::new(&des, &lib, &table_s, 1).unwrap();
        let mut dsim = DualSim::new(&dual, &w, &table_d, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut history = Vec::new();
        for cycle in 0..40 {
            let pl = rng.gen_range(0..16u64);
            let pr = rng.gen_range(0..64u64);
            history.push((pl, pr));
            let inp = stim(&[("pl", pl), ("pr", pr)]);
            let a = single.step(&inp).unwrap();
            let b = dsim.step(&inp).unwrap();
            assert_eq!(a.outputs, b.outputs, "cycle {cycle}");
            if cycle >= 2 {
                let (pl0, pr0) = history[cycle - 2];
                let expect = dut_reference_output(&cfg, pl0 as u8, pr0 as u8) as u64;
                assert_eq!(a.outputs["out"], expect, "latency-2 output at {cycle}");
            }
        }
    }

    #[test]
    fn single_des_goes_quiet_on_constant_inputs() {
        let des = build_des_module(&DutConfig::default()).unwrap();
        let lib = CellLibrary::standard();
        let table = CapTable::uniform(&des, 1.0);
        let mut sim = SingleSim::new(&des, &lib, &table, 1).unwrap();
        let inp = stim(&[("pl", 9), ("pr", 41)]);
        let mut counts = Vec::new();
        for _ in 0..8 {
            counts.push(sim.step(&inp).unwrap().rises);
        }
        assert!(counts[0] > 0);
        assert!(counts[3..].iter().all(|&c| c == 0), "counts {counts:?}");
    }

    #[test]
    fn precharge_check_passes_clean_and_names_corruption() {
        let w = wlib();
        let des = build_des_module(&DutConfig::default()).unwrap();
        let dual = substitute_cells(&des, &w).unwrap();
        let report = precharge_check(&dual, &w).unwrap();
        assert!(report.pass);

        // Corrupt: a raw NAND on the rails emits 1 under the zero wave.
        let mut bad = dual.netlist.clone();
        let a_t = bad.net("pl_t[0]").unwrap();
        let a_f = bad.net("pl_f[0]").unwrap();
        let evil = bad.add_net("evil").unwrap();
        bad.add_instance(
            "mut1",
            "NAND2",
            vec![
                ("A".to_string(), a_t),
                ("B".to_string(), a_f),
                ("Y".to_string(), evil),
            ],
        )
        .unwrap();
        let bad_dual = DualRailNetlist {
            netlist: bad,
            base_name: dual.base_name.clone(),
            pairs: dual.pairs.clone(),
            pair_of: dual.pair_of.clone(),
        };
        let report = precharge_check(&bad_dual, &w).unwrap();
        assert!(!report.pass);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].net, "evil");
        assert_eq!(report.violations[0].gate.as_deref(), Some("mut1"));
    }

    #[test]
    fn null_injection_raises_the_alarm_in_cycle() {
        let w = wlib();
        let des = build_des_module(&DutConfig::default()).unwrap();
        let dual = substitute_cells(&des, &w).unwrap();
        let table = CapTable::uniform(&dual.netlist, 1.0);
        let mut sim = DualSim::new(&dual, &w, &table, 1).unwrap();
        let inp = stim(&[("pl", 1), ("pr", 2)]);
        let clean = sim.step(&inp).unwrap();
        assert!(clean.alarms.is_empty());
        sim.inject_null("u_pl0").unwrap();
        let hit = sim.step(&inp).unwrap();
        assert_eq!(
            hit.alarms,
            vec![Alarm {
                cycle: 1,
                register: "u_pl0".to_string(),
                kind: AlarmKind::BothLow,
            }]
        );
        assert!(sim.inject_null("nosuch").is_err());
    }

    #[test]
    fn alarm_decision_table() {
        assert_eq!(fault_alarm(true, false), None);
        assert_eq!(fault_alarm(false, true), None);
        assert_eq!(fault_alarm(false, false), Some(AlarmKind::BothLow));
        assert_eq!(fault_alarm(true, true), Some(AlarmKind::BothHigh));
    }

    #[test]
    fn combinational_loop_is_rejected() {
        let lib = CellLibrary::standard();
        let text = "module top ( a , y ) ;\ninput a ;\noutput y ;\nwire n1 ;\nAND2 u1 ( .A(a) , .B(y) , .Y(n1) ) ;\nAND2 u2 ( .A(n1) , .B(a) , .Y(y) ) ;\nendmodule\n";
        let n = parse_netlist(text, &lib).unwrap();
        let table = CapTable::uniform(&n, 1.0);
        match SingleSim::new(&n, &lib, &table, 1) {
            Err(SimError::NonSettling(_)) => {}
            other => panic!("expected non-settling, got {:?}", other.err()),
        }
    }

    #[test]
    fn batch_simulation_totals_match_event_log() {
        let w = wlib();
        let des = build_des_module(&DutConfig::default()).unwrap();
        let dual = substitute_cells(&des, &w).unwrap();
        let table = CapTable::uniform(&dual.netlist, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let stimulus: Vec<_> = (0..10)
            .map(|_| stim(&[("pl", rng.gen_range(0..16)), ("pr", rng.gen_range(0..64))]))
            .collect();
        let res = simulate(DesignRef::Dual(&dual, &w), &table, &stimulus, 6, true).unwrap();
        assert_eq!(res.outputs.len(), 10);
        assert_eq!(res.power.totals.len(), 10);
        assert_eq!(res.switches.rising_per_cycle.len(), 10);
        for cycle in 0..10 {
            let logged: f64 = res
                .switches
                .events
                .iter()
                .filter(|e| e.cycle == cycle)
                .map(|e| table.total(&e.rail).unwrap())
                .sum();
            assert_eq!(logged, res.power.totals[cycle]);
            let by_count = res
                .switches
                .events
                .iter()
                .filter(|e| e.cycle == cycle && e.phase == Phase::Evaluate)
                .count();
            assert_eq!(by_count, res.switches.rising_per_cycle[cycle]);
        }
        let csv = res.power.to_csv();
        assert!(csv.starts_with("cycle,total_energy,s0,s1,s2,s3,s4,s5\n"));
        assert_eq!(csv.lines().count(), 11);
    }

    #[test]
    fn stimulus_mismatches_are_reported() {
        let n = and_module();
        let lib = CellLibrary::standard();
        let table = CapTable::uniform(&n, 1.0);
        let mut sim = SingleSim::new(&n, &lib, &table, 1).unwrap();
        assert!(matches!(
            sim.step(&stim(&[("a", 1)])),
            Err(SimError::Stimulus { .. })
        ));
        assert!(matches!(
            sim.step(&stim(&[("a", 1), ("b", 2)])),
            Err(SimError::Stimulus { .. })
        ));
        assert!(matches!(
            sim.step(&stim(&[("a", 1), ("b", 1), ("zz", 0)])),
            Err(SimError::Stimulus { .. })
        ));
    }
}
