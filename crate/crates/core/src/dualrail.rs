//! Dual-rail (WDDL) compound cells and the cell-substitution pass.
//!
//! Every logical signal becomes a complementary rail pair (t, f). Each base
//! gate is replaced by a compound of two monotone gates: one computes the
//! function over the rails, the other its De Morgan dual, so that an all-zero
//! input wave (the precharge) propagates zeros and exactly one rail of every
//! pair rises during evaluation. Inverters disappear: a negation is just the
//! pair read with its rails swapped.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cells::{CellFunction, CellLibrary, OutputPin};
use crate::expr::BoolExpr;
use crate::netlist::{NetId, Netlist, NetlistError, PortDir, validate_netlist};

/// Rail net name for a logical net: `x` -> `x_t`, bus bit `p[3]` -> `p_t[3]`.
pub fn rail_name(logical: &str, true_rail: bool) -> String {
    let suffix = if true_rail { "_t" } else { "_f" };
    match logical.find('[') {
        Some(pos) => format!("{}{}{}", &logical[..pos], suffix, &logical[pos..]),
        None => format!("{logical}{suffix}"),
    }
}

/// Inverse of [`rail_name`]: returns the logical name and which rail.
pub fn logical_name(rail: &str) -> Option<(String, bool)> {
    let (stem, bracket) = match rail.find('[') {
        Some(pos) => (&rail[..pos], &rail[pos..]),
        None => (rail, ""),
    };
    let (base, true_rail) = if let Some(b) = stem.strip_suffix("_t") {
        (b, true)
    } else if let Some(b) = stem.strip_suffix("_f") {
        (b, false)
    } else {
        return None;
    };
    Some((format!("{base}{bracket}"), true_rail))
}

/// A WDDL compound cell: two negation-free expressions over the input rails,
/// one producing the function (true rail) and one its complement (false
/// rail), plus the single-ended gates that would compose it (for area
/// accounting).
#[derive(Debug, Clone, PartialEq)]
pub struct WddlCell {
    /// Base single-ended cell name.
    pub base: String,
    /// Compound name, `W_<base>`.
    pub name: String,
    pub true_logic: BoolExpr,
    pub false_logic: BoolExpr,
    /// Gates composing the compound (`AND2`/`OR2` decomposition of both
    /// expressions). Empty when the compound is a pure rewiring (INV).
    pub internal_instances: Vec<String>,
    pub area: f64,
}

impl WddlCell {
    /// True when the compound needs no gates: both rails are passthroughs of
    /// input rails (inverters and buffers).
    pub fn is_rewire(&self) -> bool {
        self.internal_instances.is_empty()
            && matches!(self.true_logic, BoolExpr::Var(_))
            && matches!(self.false_logic, BoolExpr::Var(_))
    }

    /// Netlist-facing view: rail input pins in base order (t then f per
    /// pin), outputs `<out>_t` and `<out>_f`.
    fn cell_function(&self, base: &CellFunction) -> CellFunction {
        let mut inputs = Vec::new();
        for pin in &base.inputs {
            inputs.push(format!("{pin}_t"));
            inputs.push(format!("{pin}_f"));
        }
        let out = base.output_name();
        let outputs = vec![
            OutputPin {
                name: format!("{out}_t"),
                logic: Some(self.true_logic.clone()),
            },
            OutputPin {
                name: format!("{out}_f"),
                logic: Some(self.false_logic.clone()),
            },
        ];
        CellFunction::compound(&self.name, inputs, outputs, false, self.area, base.input_cap)
            .expect("rail expressions reference rail pins")
    }
}

/// Positive half of the dualization: expression for the true rail.
fn t_expr(e: &BoolExpr) -> BoolExpr {
    match e {
        BoolExpr::Var(v) => BoolExpr::var(&format!("{v}_t")),
        BoolExpr::Not(inner) => f_expr(inner),
        BoolExpr::And(a, b) => BoolExpr::and(t_expr(a), t_expr(b)),
        BoolExpr::Or(a, b) => BoolExpr::or(t_expr(a), t_expr(b)),
        BoolExpr::Xor(a, b) => BoolExpr::or(
            BoolExpr::and(t_expr(a), f_expr(b)),
            BoolExpr::and(f_expr(a), t_expr(b)),
        ),
    }
}

/// Negative half: expression for the false rail (the complement).
fn f_expr(e: &BoolExpr) -> BoolExpr {
    match e {
        BoolExpr::Var(v) => BoolExpr::var(&format!("{v}_f")),
        BoolExpr::Not(inner) => t_expr(inner),
        BoolExpr::And(a, b) => BoolExpr::or(f_expr(a), f_expr(b)),
        BoolExpr::Or(a, b) => BoolExpr::and(f_expr(a), f_expr(b)),
        BoolExpr::Xor(a, b) => BoolExpr::or(
            BoolExpr::and(t_expr(a), t_expr(b)),
            BoolExpr::and(f_expr(a), f_expr(b)),
        ),
    }
}

/// Counts the AND/OR gate decomposition of a monotone rail expression.
fn gate_decomposition(e: &BoolExpr, out: &mut Vec<String>) {
    match e {
        BoolExpr::Var(_) => {}
        BoolExpr::And(a, b) => {
            gate_decomposition(a, out);
            gate_decomposition(b, out);
            out.push("AND2".to_string());
        }
        BoolExpr::Or(a, b) => {
            gate_decomposition(a, out);
            gate_decomposition(b, out);
            out.push("OR2".to_string());
        }
        BoolExpr::Not(_) | BoolExpr::Xor(_, _) => {
            unreachable!("dualized expressions are negation- and xor-free")
        }
    }
}

/// Derives the WDDL compound for a combinational cell. Inversions are pushed
/// onto the rails, so both returned expressions are negation-free.
pub fn dualize_function(base: &CellFunction, areas: &CellLibrary) -> WddlCell {
    let logic = base.outputs[0]
        .logic
        .as_ref()
        .expect("dualize_function takes a combinational cell");
    let true_logic = t_expr(logic);
    let false_logic = f_expr(logic);
    let mut internal = Vec::new();
    gate_decomposition(&true_logic, &mut internal);
    gate_decomposition(&false_logic, &mut internal);
    let area = internal.iter().map(|g| gate_area(areas, g)).sum();
    WddlCell {
        base: base.name.clone(),
        name: format!("W_{}", base.name),
        true_logic,
        false_logic,
        internal_instances: internal,
        area,
    }
}

fn gate_area(lib: &CellLibrary, name: &str) -> f64 {
    lib.get(name).map(|c| c.area).unwrap_or(4.0)
}

/// Compound library derived from a single-ended cell library.
#[derive(Debug, Clone)]
pub struct WddlLibrary {
    /// The source single-ended library.
    pub base: CellLibrary,
    /// Combinational compounds by base cell name. Pure rewirings (INV) are
    /// present here but never instantiated.
    pub compounds: BTreeMap<String, WddlCell>,
    /// Differential registers by base cell name; internal gate list per
    /// register (two base registers plus two output-gating AND2).
    pub register_internals: BTreeMap<String, Vec<String>>,
    /// Base cells plus all instantiable compounds, for parsing and
    /// validating dual-rail netlists.
    pub all: CellLibrary,
}

impl WddlLibrary {
    pub fn derive(base: &CellLibrary) -> Self {
        let mut compounds = BTreeMap::new();
        let mut register_internals = BTreeMap::new();
        let mut all = base.clone();
        for cell in base.iter() {
            if cell.sequential {
                let internals = vec![
                    cell.name.clone(),
                    cell.name.clone(),
                    "AND2".to_string(),
                    "AND2".to_string(),
                ];
                let area: f64 = internals.iter().map(|g| gate_area(base, g)).sum();
                let mut inputs = Vec::new();
                for pin in cell.data_pins() {
                    inputs.push(format!("{pin}_t"));
                    inputs.push(format!("{pin}_f"));
                }
                inputs.push(cell.clock_pin().to_string());
                let out = cell.output_name();
                let outputs = vec![
                    OutputPin {
                        name: format!("{out}_t"),
                        logic: None,
                    },
                    OutputPin {
                        name: format!("{out}_f"),
                        logic: None,
                    },
                ];
                let compound = CellFunction::compound(
                    &format!("W_{}", cell.name),
                    inputs,
                    outputs,
                    true,
                    area,
                    cell.input_cap,
                )
                .expect("register compound has no expressions");
                all.insert(compound).expect("compound is well-formed");
                register_internals.insert(cell.name.clone(), internals);
            } else {
                let compound = dualize_function(cell, base);
                if !compound.is_rewire() {
                    all.insert(compound.cell_function(cell))
                        .expect("compound is well-formed");
                }
                compounds.insert(cell.name.clone(), compound);
            }
        }
        WddlLibrary {
            base: base.clone(),
            compounds,
            register_internals,
            all,
        }
    }

    pub fn compound_name(&self, base_cell: &str) -> String {
        format!("W_{base_cell}")
    }

    /// Library of fat macros: one single-output cell per compound keeping the
    /// base pin names and logic, with the compound's area. Used for the fat
    /// netlist (one net per rail pair).
    pub fn fat_cells(&self) -> CellLibrary {
        let mut lib = CellLibrary::new();
        for cell in self.base.iter() {
            if cell.sequential {
                let mut fat = cell.clone();
                fat.name = self.compound_name(&cell.name);
                fat.area = self
                    .register_internals
                    .get(&cell.name)
                    .map(|gates| gates.iter().map(|g| gate_area(&self.base, g)).sum())
                    .unwrap_or(2.0 * cell.area);
                fat.input_cap = 2.0 * cell.input_cap;
                lib.insert(fat).expect("fat register is well-formed");
            } else if let Some(compound) = self.compounds.get(&cell.name) {
                if compound.is_rewire() {
                    continue;
                }
                let mut fat = cell.clone();
                fat.name = compound.name.clone();
                fat.area = compound.area;
                fat.input_cap = 2.0 * cell.input_cap;
                lib.insert(fat).expect("fat cell is well-formed");
            }
        }
        lib
    }
}

/// One logical signal's rail pair in a [`DualRailNetlist`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    /// Original (single-ended) net name.
    pub logical: String,
    pub t: NetId,
    pub f: NetId,
}

/// A netlist over WDDL compounds plus the rail-pair bookkeeping.
#[derive(Debug, Clone)]
pub struct DualRailNetlist {
    /// Plain structural netlist; cells come from [`WddlLibrary::all`].
    pub netlist: Netlist,
    /// Module name of the single-ended source design.
    pub base_name: String,
    pub pairs: Vec<Pair>,
    /// Logical net name -> index into `pairs`.
    pub pair_of: BTreeMap<String, usize>,
}

/// A fat netlist: the dual-rail design with every pair collapsed onto one
/// net, instances referencing fat macros (`W_*`).
#[derive(Debug, Clone)]
pub struct FatNetlist {
    pub netlist: Netlist,
    /// Fat net name -> (true rail name, false rail name).
    pub rail_map: BTreeMap<String, (String, String)>,
}

#[derive(Debug, Error)]
pub enum SubstituteError {
    #[error("input netlist is invalid: {0}")]
    InvalidInput(String),
    #[error("cell {0} has no WDDL counterpart")]
    MissingCounterpart(String),
    #[error("rail name {0} collides with an existing net")]
    NameCollision(String),
    #[error("instance {0} uses the clock net as a data input")]
    ClockAsData(String),
    #[error("netlist is not a recognizable dual-rail design: {0}")]
    NotDualRail(String),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

/// Rail source of a logical net: the pair of a root (non-inverter-driven)
/// net, plus the accumulated inversion parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RailSrc {
    root: NetId,
    swapped: bool,
}

/// Replaces every gate with its WDDL compound. Inverters vanish: their
/// output pair is the input pair with the rails swapped. Returns a design
/// with zero inverter instances and two rails per logical signal.
pub fn substitute_cells(
    netlist: &Netlist,
    wlib: &WddlLibrary,
) -> Result<DualRailNetlist, SubstituteError> {
    let diags = validate_netlist(netlist, &wlib.base);
    if let Some(d) = diags.first() {
        return Err(SubstituteError::InvalidInput(d.message.clone()));
    }

    let clock_id = netlist
        .clock
        .as_ref()
        .and_then(|name| netlist.net(name))
        .map(|id| netlist.canonical(id));

    // Which canonical nets are inverter outputs, and through which instance.
    let mut inv_input: Vec<Option<NetId>> = vec![None; netlist.net_count()];
    for inst in &netlist.instances {
        let cell = wlib.base.get(&inst.cell).expect("validated netlist");
        if cell.sequential {
            continue;
        }
        let compound = wlib
            .compounds
            .get(&inst.cell)
            .expect("combinational cell was dualized");
        if !compound.is_rewire() {
            continue;
        }
        // Pure rewiring (INV): record source; swap parity comes from which
        // rail the true output reads.
        let out_net = inst
            .net_for(cell.output_name())
            .expect("validated instance binds output");
        let in_net = inst
            .net_for(&cell.inputs[0])
            .expect("validated instance binds input");
        inv_input[netlist.canonical(out_net).index()] = Some(netlist.canonical(in_net));
    }

    let resolve = |mut id: NetId| -> RailSrc {
        let mut swapped = false;
        loop {
            id = netlist.canonical(id);
            match inv_input[id.index()] {
                Some(src) => {
                    swapped = !swapped;
                    id = src;
                }
                None => return RailSrc { root: id, swapped },
            }
        }
    };

    let mut dual = Netlist::new(&format!("{}_wddl", netlist.name));
    dual.clock = netlist.clock.clone();

    // Ports: the clock stays single-ended, every other port splits in two.
    for port in &netlist.ports {
        if netlist.clock.as_deref() == Some(port.name.as_str()) {
            dual.add_port(&port.name, port.dir, port.width)?;
        } else {
            dual.add_port(&rail_name(&port.name, true), port.dir, port.width)
                .map_err(|_| SubstituteError::NameCollision(port.name.clone()))?;
            dual.add_port(&rail_name(&port.name, false), port.dir, port.width)
                .map_err(|_| SubstituteError::NameCollision(port.name.clone()))?;
        }
    }

    // Rail pairs for every root net (id order for determinism).
    let mut pairs: Vec<Pair> = Vec::new();
    let mut pair_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut pair_index: Vec<Option<usize>> = vec![None; netlist.net_count()];
    for id in netlist.net_ids() {
        if netlist.canonical(id) != id || Some(id) == clock_id || inv_input[id.index()].is_some() {
            continue;
        }
        let logical = netlist.net_name(id).to_string();
        let t_name = rail_name(&logical, true);
        let f_name = rail_name(&logical, false);
        // Rail names of distinct logical nets never alias each other (the
        // suffix insertion is injective), so a preexisting net is either
        // this net's own port rail or the clock. Only the latter collides.
        if netlist.clock.as_deref() == Some(t_name.as_str())
            || netlist.clock.as_deref() == Some(f_name.as_str())
        {
            return Err(SubstituteError::NameCollision(logical));
        }
        let t = match dual.net(&t_name) {
            Some(existing) => existing,
            None => dual.add_net(&t_name)?,
        };
        let f = match dual.net(&f_name) {
            Some(existing) => existing,
            None => dual.add_net(&f_name)?,
        };
        pair_index[id.index()] = Some(pairs.len());
        pair_of.insert(logical.clone(), pairs.len());
        pairs.push(Pair { logical, t, f });
    }

    let rail_of = |src: RailSrc, want_true: bool, pairs: &[Pair], pair_index: &[Option<usize>]| {
        let pair = &pairs[pair_index[src.root.index()].expect("root has a pair")];
        if want_true != src.swapped {
            pair.t
        } else {
            pair.f
        }
    };

    // Instances. Inverters are skipped entirely.
    let dual_clk = dual.clock.as_ref().and_then(|c| dual.net(c));
    for inst in &netlist.instances {
        let cell = wlib.base.get(&inst.cell).expect("validated netlist");
        if !cell.sequential
            && wlib
                .compounds
                .get(&inst.cell)
                .expect("combinational cell was dualized")
                .is_rewire()
        {
            continue;
        }
        let compound_cell = wlib
            .all
            .get(&wlib.compound_name(&inst.cell))
            .ok_or_else(|| SubstituteError::MissingCounterpart(inst.cell.clone()))?;
        let mut conns: Vec<(String, NetId)> = Vec::new();
        for pin in &cell.inputs {
            let net = inst.net_for(pin).expect("validated instance");
            let c = netlist.canonical(net);
            if Some(c) == clock_id {
                if cell.sequential && pin == cell.clock_pin() {
                    conns.push((pin.clone(), dual_clk.expect("dual design keeps the clock")));
                    continue;
                }
                return Err(SubstituteError::ClockAsData(inst.name.clone()));
            }
            let src = resolve(c);
            conns.push((
                format!("{pin}_t"),
                rail_of(src, true, &pairs, &pair_index),
            ));
            conns.push((
                format!("{pin}_f"),
                rail_of(src, false, &pairs, &pair_index),
            ));
        }
        for out in &cell.outputs {
            let net = inst.net_for(&out.name).expect("validated instance");
            let c = netlist.canonical(net);
            let pair = &pairs[pair_index[c.index()].expect("gate output is a root")];
            conns.push((format!("{}_t", out.name), pair.t));
            conns.push((format!("{}_f", out.name), pair.f));
        }
        // Keep the library pin order for stable emission.
        let order: Vec<&str> = compound_cell.pins().collect();
        conns.sort_by_key(|(pin, _)| order.iter().position(|p| p == pin).unwrap_or(usize::MAX));
        dual.add_instance(&inst.name, &compound_cell.name.clone(), conns)?;
    }

    // Output ports whose net is not itself a root pair: tie the port rails
    // to the source pair, honoring swap parity so ports are canonical.
    for port in &netlist.ports {
        if port.dir != PortDir::Output {
            continue;
        }
        for bit in netlist.port_bits(port) {
            let src = resolve(bit);
            let logical = netlist.net_name(bit);
            let t_port = dual
                .net(&rail_name(logical, true))
                .expect("port rails exist");
            let f_port = dual
                .net(&rail_name(logical, false))
                .expect("port rails exist");
            let t_src = rail_of(src, true, &pairs, &pair_index);
            let f_src = rail_of(src, false, &pairs, &pair_index);
            if t_src != t_port {
                dual.add_alias(t_port, t_src)?;
                dual.add_alias(f_port, f_src)?;
            }
        }
    }

    Ok(DualRailNetlist {
        netlist: dual,
        base_name: netlist.name.clone(),
        pairs,
        pair_of,
    })
}

impl DualRailNetlist {
    pub fn pair(&self, logical: &str) -> Option<&Pair> {
        self.pair_of.get(logical).map(|&i| &self.pairs[i])
    }

    /// Pair index and rail side of a rail net, if it belongs to a pair.
    pub fn rail_side(&self, id: NetId) -> Option<(usize, bool)> {
        let c = self.netlist.canonical(id);
        self.pairs.iter().enumerate().find_map(|(i, p)| {
            if self.netlist.canonical(p.t) == c {
                Some((i, true))
            } else if self.netlist.canonical(p.f) == c {
                Some((i, false))
            } else {
                None
            }
        })
    }

    /// Count of inverter-style (single-input combinational) instances; zero
    /// by construction after substitution.
    pub fn inverter_count(&self, lib: &CellLibrary) -> usize {
        self.netlist
            .instances
            .iter()
            .filter(|i| {
                lib.get(&i.cell)
                    .map(|c| !c.sequential && c.inputs.len() == 1)
                    .unwrap_or(false)
            })
            .count()
    }

    /// Reconstructs pair bookkeeping from a parsed dual-rail netlist (the
    /// on-disk diff.v form). Pairs are identified from compound outputs and
    /// port rails; the rail naming convention supplies logical names.
    pub fn from_netlist(netlist: Netlist, wlib: &WddlLibrary) -> Result<Self, SubstituteError> {
        let diags = validate_netlist(&netlist, &wlib.all);
        if let Some(d) = diags.first() {
            return Err(SubstituteError::NotDualRail(d.message.clone()));
        }
        let mut pairs: Vec<Pair> = Vec::new();
        let mut pair_of: BTreeMap<String, usize> = BTreeMap::new();
        let mut add_pair = |netlist: &Netlist, t: NetId, f: NetId| -> Result<(), SubstituteError> {
            let t_name = netlist.net_name(t);
            let (logical, is_true) = logical_name(t_name)
                .ok_or_else(|| SubstituteError::NotDualRail(format!("net {t_name} is not a rail")))?;
            if !is_true {
                return Err(SubstituteError::NotDualRail(format!(
                    "expected a true rail, found {t_name}"
                )));
            }
            if pair_of.contains_key(&logical) {
                return Ok(());
            }
            pair_of.insert(logical.clone(), pairs.len());
            pairs.push(Pair { logical, t, f });
            Ok(())
        };

        for port in &netlist.ports {
            if netlist.clock.as_deref() == Some(port.name.as_str()) {
                continue;
            }
            let Some((logical, is_true)) = logical_name(&port.name) else {
                return Err(SubstituteError::NotDualRail(format!(
                    "port {} is not a rail pair",
                    port.name
                )));
            };
            if !is_true {
                continue;
            }
            let partner = rail_name(&logical, false);
            let Some(fp) = netlist.ports.iter().find(|p| p.name == partner) else {
                return Err(SubstituteError::NotDualRail(format!(
                    "port {} has no false rail {partner}",
                    port.name
                )));
            };
            if fp.dir != port.dir || fp.width != port.width {
                return Err(SubstituteError::NotDualRail(format!(
                    "rail ports {} and {partner} disagree",
                    port.name
                )));
            }
            if port.dir == PortDir::Input {
                let t_bits = netlist.port_bits(port);
                let f_bits = netlist.port_bits(fp);
                for (t, f) in t_bits.into_iter().zip(f_bits) {
                    add_pair(&netlist, t, f)?;
                }
            }
        }
        for inst in &netlist.instances {
            let cell = wlib
                .all
                .get(&inst.cell)
                .expect("validated against the compound library");
            if !inst.cell.starts_with("W_") {
                return Err(SubstituteError::NotDualRail(format!(
                    "instance {} uses non-compound cell {}",
                    inst.name, inst.cell
                )));
            }
            let mut outs = cell.outputs.iter();
            let (Some(t_pin), Some(f_pin), None) = (outs.next(), outs.next(), outs.next()) else {
                return Err(SubstituteError::NotDualRail(format!(
                    "compound {} does not drive a rail pair",
                    inst.cell
                )));
            };
            let t = inst.net_for(&t_pin.name).expect("validated instance");
            let f = inst.net_for(&f_pin.name).expect("validated instance");
            add_pair(&netlist, t, f)?;
        }

        let base_name = netlist
            .name
            .strip_suffix("_wddl")
            .unwrap_or(&netlist.name)
            .to_string();
        Ok(DualRailNetlist {
            netlist,
            base_name,
            pairs,
            pair_of,
        })
    }
}

/// Collapses each rail pair onto a single fat net. The result is a plain
/// netlist over fat macros, structurally isomorphic to the dual-rail design.
pub fn abstract_fat(dual: &DualRailNetlist, wlib: &WddlLibrary) -> FatNetlist {
    let d = &dual.netlist;
    let mut fat = Netlist::new(&format!("{}_fat", dual.base_name));
    fat.clock = d.clock.clone();

    for port in &d.ports {
        if d.clock.as_deref() == Some(port.name.as_str()) {
            fat.add_port(&port.name, port.dir, port.width)
                .expect("fat ports are fresh");
            continue;
        }
        let (logical, is_true) = logical_name(&port.name).expect("dual ports are rails");
        if is_true {
            fat.add_port(&logical, port.dir, port.width)
                .expect("fat ports are fresh");
        }
    }
    for pair in &dual.pairs {
        if fat.net(&pair.logical).is_none() {
            fat.add_net(&pair.logical).expect("pair names are unique");
        }
    }

    let rail_to_pair: BTreeMap<NetId, usize> = dual
        .pairs
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            [
                (d.canonical(p.t), i),
                (d.canonical(p.f), i),
            ]
        })
        .collect();

    for inst in &d.instances {
        let cell = wlib.all.get(&inst.cell).expect("dual cells are compounds");
        let mut conns: Vec<(String, NetId)> = Vec::new();
        for (pin, net) in &inst.conns {
            if cell.sequential && pin == cell.clock_pin() {
                let clk = fat
                    .net(d.clock.as_deref().expect("sequential design has a clock"))
                    .expect("fat keeps the clock");
                conns.push((pin.clone(), clk));
                continue;
            }
            let (base_pin, is_true) = logical_name(pin).expect("compound pins are rails");
            if !is_true {
                continue;
            }
            let pair_idx = rail_to_pair[&d.canonical(*net)];
            let fat_net = fat
                .net(&dual.pairs[pair_idx].logical)
                .expect("every pair has a fat net");
            conns.push((base_pin, fat_net));
        }
        fat.add_instance(&inst.name, &inst.cell, conns)
            .expect("fat instances mirror dual instances");
    }

    for (lhs, rhs) in &d.aliases {
        let (l_logical, l_true) = logical_name(d.net_name(*lhs)).expect("aliases tie rails");
        if !l_true {
            continue;
        }
        let r_pair = rail_to_pair[&d.canonical(*rhs)];
        let l = fat.net(&l_logical).expect("fat net exists");
        let r = fat
            .net(&dual.pairs[r_pair].logical)
            .expect("fat net exists");
        if fat.canonical(l) != fat.canonical(r) {
            fat.add_alias(l, r).expect("alias mirrors dual design");
        }
    }

    let rail_map = dual
        .pairs
        .iter()
        .map(|p| {
            (
                p.logical.clone(),
                (
                    d.net_name(p.t).to_string(),
                    d.net_name(p.f).to_string(),
                ),
            )
        })
        .collect();

    FatNetlist {
        netlist: fat,
        rail_map,
    }
}

/// Projects the dual-rail design back to a single-ended netlist computing
/// the true rails' evaluation-phase function. Swapped pairs re-materialize
/// as inverters.
pub fn project_true_rail(dual: &DualRailNetlist, wlib: &WddlLibrary) -> Netlist {
    let d = &dual.netlist;
    let mut proj = Netlist::new(&format!("{}_proj", dual.base_name));
    proj.clock = d.clock.clone();

    for port in &d.ports {
        if d.clock.as_deref() == Some(port.name.as_str()) {
            proj.add_port(&port.name, port.dir, port.width)
                .expect("projected ports are fresh");
            continue;
        }
        let (logical, is_true) = logical_name(&port.name).expect("dual ports are rails");
        if is_true {
            proj.add_port(&logical, port.dir, port.width)
                .expect("projected ports are fresh");
        }
    }
    for pair in &dual.pairs {
        if proj.net(&pair.logical).is_none() {
            proj.add_net(&pair.logical).expect("pair names are unique");
        }
    }

    let rail_to_pair: BTreeMap<NetId, (usize, bool)> = dual
        .pairs
        .iter()
        .enumerate()
        .flat_map(|(i, p)| [(d.canonical(p.t), (i, true)), (d.canonical(p.f), (i, false))])
        .collect();

    // One shared inverter per pair read with swapped rails.
    let mut inverted: BTreeMap<usize, NetId> = BTreeMap::new();
    let mut fresh = 0usize;
    let mut invert = |proj: &mut Netlist, pair_idx: usize, inverted: &mut BTreeMap<usize, NetId>| {
        if let Some(&net) = inverted.get(&pair_idx) {
            return net;
        }
        let source = proj
            .net(&dual.pairs[pair_idx].logical)
            .expect("pair net exists");
        let (name, inst) = loop {
            let name = format!("proj_n{fresh}");
            let inst = format!("proj_inv{fresh}");
            fresh += 1;
            if proj.net(&name).is_none() {
                break (name, inst);
            }
        };
        let out = proj.add_net(&name).expect("fresh name");
        proj.add_instance(
            &inst,
            "INV",
            vec![("A".to_string(), source), ("Y".to_string(), out)],
        )
        .expect("fresh instance");
        inverted.insert(pair_idx, out);
        out
    };

    for inst in &d.instances {
        let cell = wlib.all.get(&inst.cell).expect("dual cells are compounds");
        let base_name = inst.cell.strip_prefix("W_").expect("compound naming");
        let base = wlib.base.get(base_name).expect("compound has a base cell");
        let mut conns: Vec<(String, NetId)> = Vec::new();
        for (pin, net) in &inst.conns {
            if cell.sequential && pin == cell.clock_pin() {
                let clk = proj
                    .net(d.clock.as_deref().expect("sequential design has a clock"))
                    .expect("projection keeps the clock");
                conns.push((pin.clone(), clk));
                continue;
            }
            let (base_pin, is_true) = logical_name(pin).expect("compound pins are rails");
            if !is_true {
                continue;
            }
            let (pair_idx, on_true) = rail_to_pair[&d.canonical(*net)];
            let is_input = base.inputs.contains(&base_pin);
            let net = if on_true || !is_input {
                proj.net(&dual.pairs[pair_idx].logical)
                    .expect("pair net exists")
            } else {
                invert(&mut proj, pair_idx, &mut inverted)
            };
            conns.push((base_pin, net));
        }
        let order: Vec<&str> = base.pins().collect();
        conns.sort_by_key(|(pin, _)| order.iter().position(|p| p == pin).unwrap_or(usize::MAX));
        proj.add_instance(&inst.name, base_name, conns)
            .expect("projection mirrors dual instances");
    }

    for (lhs, rhs) in &d.aliases {
        let (l_logical, l_true) = logical_name(d.net_name(*lhs)).expect("aliases tie rails");
        if !l_true {
            continue;
        }
        let (pair_idx, on_true) = rail_to_pair[&d.canonical(*rhs)];
        let l = proj.net(&l_logical).expect("projected net exists");
        if on_true {
            let r = proj
                .net(&dual.pairs[pair_idx].logical)
                .expect("pair net exists");
            if proj.canonical(l) != proj.canonical(r) {
                proj.add_alias(l, r).expect("alias mirrors dual design");
            }
        } else {
            let src = proj
                .net(&dual.pairs[pair_idx].logical)
                .expect("pair net exists");
            let inst = format!("proj_portinv_{}", l_logical.replace(['[', ']'], "_"));
            proj.add_instance(
                &inst,
                "INV",
                vec![("A".to_string(), src), ("Y".to_string(), l)],
            )
            .expect("port inverter is fresh");
        }
    }

    proj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::text::{emit_netlist, parse_netlist};

    fn wlib() -> WddlLibrary {
        WddlLibrary::derive(&CellLibrary::standard())
    }

    #[test]
    fn and_compound_matches_de_morgan_dual() {
        let lib = wlib();
        let c = &lib.compounds["AND2"];
        assert_eq!(c.true_logic, parse_expr("A_t & B_t").unwrap());
        assert_eq!(c.false_logic, parse_expr("A_f | B_f").unwrap());
        assert_eq!(c.internal_instances, vec!["AND2", "OR2"]);
        assert_eq!(c.area, 8.0);
    }

    #[test]
    fn xor_compound_matches_truth_table() {
        let lib = wlib();
        let c = &lib.compounds["XOR2"];
        for a in [false, true] {
            for b in [false, true] {
                let rails = |name: &str| match name {
                    "A_t" => a,
                    "A_f" => !a,
                    "B_t" => b,
                    "B_f" => !b,
                    other => panic!("unexpected rail {other}"),
                };
                assert_eq!(c.true_logic.eval(&rails), a ^ b);
                assert_eq!(c.false_logic.eval(&rails), !(a ^ b));
            }
        }
        assert_eq!(c.true_logic, parse_expr("A_t & B_f | A_f & B_t").unwrap());
        assert_eq!(c.false_logic, parse_expr("A_t & B_t | A_f & B_f").unwrap());
    }

    #[test]
    fn inverter_is_a_pure_rail_swap() {
        let lib = wlib();
        let c = &lib.compounds["INV"];
        assert!(c.is_rewire());
        assert_eq!(c.true_logic, BoolExpr::var("A_f"));
        assert_eq!(c.false_logic, BoolExpr::var("A_t"));
        assert!(c.internal_instances.is_empty());
        assert!(!lib.all.contains("W_INV"));
    }

    #[test]
    fn every_compound_is_monotone_and_complementary() {
        let lib = wlib();
        for (base, c) in &lib.compounds {
            if c.is_rewire() {
                continue;
            }
            assert!(c.true_logic.is_negation_free(), "{base} true rail");
            assert!(c.false_logic.is_negation_free(), "{base} false rail");
            let cell = lib.base.get(base).unwrap();
            let k = cell.inputs.len();
            for v in 0..1u32 << k {
                let value = |pin: &str| {
                    let idx = cell.inputs.iter().position(|p| p == pin).unwrap();
                    (v >> idx) & 1 == 1
                };
                let rails = |name: &str| {
                    let (pin, is_true) = logical_name(name).unwrap();
                    if is_true {
                        value(&pin)
                    } else {
                        !value(&pin)
                    }
                };
                let t = c.true_logic.eval(&rails);
                let f = c.false_logic.eval(&rails);
                assert_eq!(t, cell.eval(&(0..k).map(|i| (v >> i) & 1 == 1).collect::<Vec<_>>()),
                    "{base} true rail disagrees at {v:b}");
                assert_ne!(t, f, "{base} rails must be complementary at {v:b}");
            }
            // Precharge absorption: all-zero rails settle both outputs at 0.
            assert!(!c.true_logic.eval(&|_| false), "{base} true rail precharge");
            assert!(!c.false_logic.eval(&|_| false), "{base} false rail precharge");
        }
    }

    #[test]
    fn compound_rail_loads_are_symmetric() {
        let lib = wlib();
        for (base, c) in &lib.compounds {
            let cell = lib.base.get(base).unwrap();
            for pin in &cell.inputs {
                let t_rail = format!("{pin}_t");
                let f_rail = format!("{pin}_f");
                let t_loads =
                    c.true_logic.count_var(&t_rail) + c.false_logic.count_var(&t_rail);
                let f_loads =
                    c.true_logic.count_var(&f_rail) + c.false_logic.count_var(&f_rail);
                assert_eq!(t_loads, f_loads, "{base} pin {pin} loads its rails unevenly");
            }
        }
    }

    fn single_and() -> Netlist {
        let lib = CellLibrary::standard();
        parse_netlist(
            "module top ( a , b , y ) ;\ninput a ;\ninput b ;\noutput y ;\nAND2 u1 ( .A(a) , .B(b) , .Y(y) ) ;\nendmodule\n",
            &lib,
        )
        .unwrap()
    }

    #[test]
    fn single_and_substitution_shape() {
        let lib = wlib();
        let dual = substitute_cells(&single_and(), &lib).unwrap();
        assert_eq!(dual.netlist.instances.len(), 1);
        assert_eq!(dual.pairs.len(), 3);
        assert_eq!(dual.inverter_count(&lib.all), 0);
        let inst = &dual.netlist.instances[0];
        assert_eq!(inst.cell, "W_AND2");
        assert_eq!(inst.conns.len(), 6);
        assert!(validate_netlist(&dual.netlist, &lib.all).is_empty());
    }

    #[test]
    fn inverter_chain_becomes_swapped_wiring() {
        let lib = CellLibrary::standard();
        let text = "module top ( a , y ) ;\ninput a ;\noutput y ;\nwire n1 ;\nwire n2 ;\nINV u1 ( .A(a) , .Y(n1) ) ;\nINV u2 ( .A(n1) , .Y(n2) ) ;\nINV u3 ( .A(n2) , .Y(y) ) ;\nendmodule\n";
        let n = parse_netlist(text, &lib).unwrap();
        let w = wlib();
        let dual = substitute_cells(&n, &w).unwrap();
        assert_eq!(dual.netlist.instances.len(), 0);
        // Odd inversion parity: the output true rail is the input false rail.
        let y_t = dual.netlist.net("y_t").unwrap();
        let a_f = dual.netlist.net("a_f").unwrap();
        let y_f = dual.netlist.net("y_f").unwrap();
        let a_t = dual.netlist.net("a_t").unwrap();
        assert_eq!(dual.netlist.canonical(y_t), a_f);
        assert_eq!(dual.netlist.canonical(y_f), a_t);
    }

    #[test]
    fn des_substitution_has_no_inverters() {
        let lib = wlib();
        let des = crate::dut::build_des_module(&crate::dut::DutConfig::default()).unwrap();
        let inv_count = des.instances.iter().filter(|i| i.cell == "INV").count();
        assert!(inv_count > 0, "source design should contain inverters");
        let dual = substitute_cells(&des, &lib).unwrap();
        assert_eq!(dual.inverter_count(&lib.all), 0);
        assert_eq!(
            dual.netlist.instances.len(),
            des.instances.len() - inv_count
        );
        assert!(validate_netlist(&dual.netlist, &lib.all).is_empty());
    }

    #[test]
    fn fat_abstraction_is_isomorphic() {
        let lib = wlib();
        let dual = substitute_cells(&single_and(), &lib).unwrap();
        let fat = abstract_fat(&dual, &lib);
        assert_eq!(fat.netlist.instances.len(), 1);
        assert_eq!(fat.netlist.net_count(), 3);
        assert_eq!(fat.rail_map.len(), dual.pairs.len());
        for (fat_net, (t, f)) in &fat.rail_map {
            assert!(fat.netlist.net(fat_net).is_some());
            assert_eq!(*t, rail_name(fat_net, true));
            assert_eq!(*f, rail_name(fat_net, false));
        }
        assert!(validate_netlist(&fat.netlist, &lib.fat_cells()).is_empty());
    }

    #[test]
    fn des_fat_counts_match_pairs() {
        let lib = wlib();
        let des = crate::dut::build_des_module(&crate::dut::DutConfig::default()).unwrap();
        let dual = substitute_cells(&des, &lib).unwrap();
        let fat = abstract_fat(&dual, &lib);
        assert_eq!(fat.netlist.instances.len(), dual.netlist.instances.len());
        // One fat net per pair plus the clock.
        assert_eq!(fat.netlist.net_count(), dual.pairs.len() + 1);
        assert!(validate_netlist(&fat.netlist, &lib.fat_cells()).is_empty());
    }

    #[test]
    fn projection_restores_a_plain_and() {
        let lib = wlib();
        let dual = substitute_cells(&single_and(), &lib).unwrap();
        let proj = project_true_rail(&dual, &lib);
        assert_eq!(proj.instances.len(), 1);
        assert_eq!(proj.instances[0].cell, "AND2");
        assert!(validate_netlist(&proj, &lib.base).is_empty());
    }

    #[test]
    fn projection_materializes_swap_as_inverter() {
        let lib = CellLibrary::standard();
        let text = "module top ( a , y ) ;\ninput a ;\noutput y ;\nINV u1 ( .A(a) , .Y(y) ) ;\nendmodule\n";
        let n = parse_netlist(text, &lib).unwrap();
        let w = wlib();
        let dual = substitute_cells(&n, &w).unwrap();
        assert_eq!(dual.netlist.instances.len(), 0);
        let proj = project_true_rail(&dual, &w);
        assert_eq!(proj.instances.len(), 1);
        assert_eq!(proj.instances[0].cell, "INV");
        assert!(validate_netlist(&proj, &w.base).is_empty());
    }

    #[test]
    fn dual_text_round_trip_recovers_pairs() {
        let lib = wlib();
        let des = crate::dut::build_des_module(&crate::dut::DutConfig::default()).unwrap();
        let dual = substitute_cells(&des, &lib).unwrap();
        let text = emit_netlist(&dual.netlist);
        let parsed = parse_netlist(&text, &lib.all).unwrap();
        let back = DualRailNetlist::from_netlist(parsed, &lib).unwrap();
        assert_eq!(back.base_name, "des_sbox");
        assert_eq!(back.pairs.len(), dual.pairs.len());
        for pair in &dual.pairs {
            let other = back.pair(&pair.logical).expect("pair survives round trip");
            assert_eq!(
                back.netlist.net_name(other.t),
                dual.netlist.net_name(pair.t)
            );
        }
        assert_eq!(back.netlist.instances.len(), dual.netlist.instances.len());
    }

    #[test]
    fn rail_like_net_names_do_not_alias() {
        // A net already named like a rail gets a doubled suffix; nothing
        // collides and both pairs stay distinct.
        let lib = CellLibrary::standard();
        let text = "module top ( a , a_t , y ) ;\ninput a ;\ninput a_t ;\noutput y ;\nAND2 u1 ( .A(a) , .B(a_t) , .Y(y) ) ;\nendmodule\n";
        let n = parse_netlist(text, &lib).unwrap();
        let w = wlib();
        let dual = substitute_cells(&n, &w).unwrap();
        assert_eq!(dual.pairs.len(), 3);
        let a = dual.pair("a").unwrap();
        let at = dual.pair("a_t").unwrap();
        assert_eq!(dual.netlist.net_name(a.t), "a_t");
        assert_eq!(dual.netlist.net_name(at.t), "a_t_t");
        assert!(validate_netlist(&dual.netlist, &w.all).is_empty());
    }

    #[test]
    fn clock_named_like_a_rail_is_rejected() {
        let lib = CellLibrary::standard();
        let text = "module top ( x_t , x , d , q ) ;\ninput x_t ;\ninput x ;\ninput d ;\noutput q ;\nwire w ;\nAND2 u2 ( .A(x) , .B(d) , .Y(w) ) ;\nDFF u1 ( .D(w) , .CK(x_t) , .Q(q) ) ;\nendmodule\n";
        let n = parse_netlist(text, &lib).unwrap();
        assert_eq!(n.clock.as_deref(), Some("x_t"));
        let w = wlib();
        match substitute_cells(&n, &w) {
            Err(SubstituteError::NameCollision(name)) => assert_eq!(name, "x"),
            other => panic!("expected a collision error, got {other:?}"),
        }
    }

    #[test]
    fn compound_areas_follow_internal_gates() {
        let lib = wlib();
        assert_eq!(lib.compounds["AND2"].area, 8.0);
        assert_eq!(lib.compounds["NAND2"].area, 8.0);
        assert_eq!(lib.compounds["XOR2"].area, 24.0);
        assert_eq!(lib.compounds["AOI32"].area, 32.0);
        let w_dff = lib.all.get("W_DFF").unwrap();
        assert_eq!(w_dff.area, 24.0);
        assert!(w_dff.sequential);
        assert_eq!(w_dff.clock_pin(), "CK");
        assert_eq!(w_dff.data_pins(), ["D_t".to_string(), "D_f".to_string()]);
    }

    #[test]
    fn rail_names_handle_bus_bits() {
        assert_eq!(rail_name("x", true), "x_t");
        assert_eq!(rail_name("pl[2]", false), "pl_f[2]");
        assert_eq!(logical_name("pl_t[2]"), Some(("pl[2]".to_string(), true)));
        assert_eq!(logical_name("x_f"), Some(("x".to_string(), false)));
        assert_eq!(logical_name("clk"), None);
    }
}
