//! Structural netlist model.
//!
//! A netlist is a named module with ordered ports, scalar nets (bus ports
//! expand to `name[i]` bit nets), cell instances with pin-to-net bindings,
//! and passthrough aliases (`assign lhs = rhs`). Aliased names refer to one
//! electrical net; `canonical` resolves a name-level id to its electrical
//! representative.

use std::collections::HashMap;

use thiserror::Error;

use crate::cells::CellLibrary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetId(pub u32);

impl NetId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortDir {
    Input,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Port {
    pub name: String,
    pub dir: PortDir,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub name: String,
    pub cell: String,
    /// Pin bindings in written order.
    pub conns: Vec<(String, NetId)>,
}

impl Instance {
    pub fn net_for(&self, pin: &str) -> Option<NetId> {
        self.conns
            .iter()
            .find(|(p, _)| p == pin)
            .map(|&(_, net)| net)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Netlist {
    pub name: String,
    pub ports: Vec<Port>,
    nets: Vec<String>,
    lookup: HashMap<String, NetId>,
    /// Alias target per net: `Some(rhs)` when this net was the left side of
    /// an `assign`.
    alias_to: Vec<Option<NetId>>,
    /// Alias statements in written order (lhs, rhs).
    pub aliases: Vec<(NetId, NetId)>,
    pub instances: Vec<Instance>,
    pub clock: Option<String>,
}

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: unknown cell function {name}")]
    UnknownCell { line: usize, name: String },
    #[error("line {line}: reference to undeclared net {name}")]
    UnknownNet { line: usize, name: String },
    #[error("instance {instance}: cell {cell} has no pin {pin}")]
    UnknownPin {
        instance: String,
        cell: String,
        pin: String,
    },
    #[error("instance {instance}: pin {pin} is unbound")]
    UnboundPin { instance: String, pin: String },
    #[error("instance {instance}: pin {pin} bound twice")]
    DuplicatePin { instance: String, pin: String },
    #[error("net {net} has more than one driver")]
    MultiplyDriven { net: String },
    #[error("duplicate net name {name}")]
    DuplicateNet { name: String },
    #[error("duplicate instance name {name}")]
    DuplicateInstance { name: String },
    #[error("alias from {lhs} to {rhs} would form a cycle")]
    AliasCycle { lhs: String, rhs: String },
    #[error("invalid module configuration: {0}")]
    InvalidConfig(String),
}

impl Netlist {
    pub fn new(name: &str) -> Self {
        Netlist {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn net_count(&self) -> usize {
        self.nets.len()
    }

    pub fn net_name(&self, id: NetId) -> &str {
        &self.nets[id.index()]
    }

    pub fn net(&self, name: &str) -> Option<NetId> {
        self.lookup.get(name).copied()
    }

    pub fn net_names(&self) -> impl Iterator<Item = &str> {
        self.nets.iter().map(String::as_str)
    }

    pub fn net_ids(&self) -> impl Iterator<Item = NetId> {
        (0..self.nets.len() as u32).map(NetId)
    }

    /// Follows alias links to the electrical representative.
    pub fn canonical(&self, id: NetId) -> NetId {
        let mut cur = id;
        while let Some(next) = self.alias_to[cur.index()] {
            cur = next;
        }
        cur
    }

    pub fn add_net(&mut self, name: &str) -> Result<NetId, NetlistError> {
        if self.lookup.contains_key(name) {
            return Err(NetlistError::DuplicateNet {
                name: name.to_string(),
            });
        }
        let id = NetId(self.nets.len() as u32);
        self.nets.push(name.to_string());
        self.lookup.insert(name.to_string(), id);
        self.alias_to.push(None);
        Ok(id)
    }

    /// Declares a port and creates its bit nets (`name` when width is 1,
    /// `name[i]` otherwise).
    pub fn add_port(&mut self, name: &str, dir: PortDir, width: u32) -> Result<(), NetlistError> {
        if width == 0 {
            return Err(NetlistError::InvalidConfig(format!(
                "port {name} has width 0"
            )));
        }
        if self.ports.iter().any(|p| p.name == name) {
            return Err(NetlistError::DuplicateNet {
                name: name.to_string(),
            });
        }
        if width == 1 {
            self.add_net(name)?;
        } else {
            for i in 0..width {
                self.add_net(&format!("{name}[{i}]"))?;
            }
        }
        self.ports.push(Port {
            name: name.to_string(),
            dir,
            width,
        });
        Ok(())
    }

    pub fn port(&self, name: &str) -> Option<&Port> {
        self.ports.iter().find(|p| p.name == name)
    }

    /// Bit nets of one port, ascending index.
    pub fn port_bits(&self, port: &Port) -> Vec<NetId> {
        if port.width == 1 {
            vec![self.net(&port.name).expect("port net exists")]
        } else {
            (0..port.width)
                .map(|i| {
                    self.net(&format!("{}[{i}]", port.name))
                        .expect("port bit net exists")
                })
                .collect()
        }
    }

    /// All bit nets of ports with the given direction, port order then bit
    /// order. The clock net is excluded for inputs when `skip_clock` is set.
    pub fn port_bit_nets(&self, dir: PortDir, skip_clock: bool) -> Vec<NetId> {
        let clock = self.clock.as_ref().and_then(|c| self.net(c));
        self.ports
            .iter()
            .filter(|p| p.dir == dir)
            .flat_map(|p| self.port_bits(p))
            .filter(|id| !(skip_clock && Some(*id) == clock))
            .collect()
    }

    pub fn add_instance(
        &mut self,
        name: &str,
        cell: &str,
        conns: Vec<(String, NetId)>,
    ) -> Result<(), NetlistError> {
        if self.instances.iter().any(|i| i.name == name) {
            return Err(NetlistError::DuplicateInstance {
                name: name.to_string(),
            });
        }
        self.instances.push(Instance {
            name: name.to_string(),
            cell: cell.to_string(),
            conns,
        });
        Ok(())
    }

    pub fn add_alias(&mut self, lhs: NetId, rhs: NetId) -> Result<(), NetlistError> {
        if self.canonical(lhs) == self.canonical(rhs) {
            return Err(NetlistError::AliasCycle {
                lhs: self.net_name(lhs).to_string(),
                rhs: self.net_name(rhs).to_string(),
            });
        }
        if self.alias_to[lhs.index()].is_some() {
            return Err(NetlistError::MultiplyDriven {
                net: self.net_name(lhs).to_string(),
            });
        }
        self.alias_to[lhs.index()] = Some(rhs);
        self.aliases.push((lhs, rhs));
        Ok(())
    }

    /// Structural equality: same module name, ports, net names, instances
    /// (by net name), aliases and clock. Net id numbering may differ.
    pub fn structurally_eq(&self, other: &Netlist) -> bool {
        if self.name != other.name || self.ports != other.ports || self.clock != other.clock {
            return false;
        }
        let mut a_nets: Vec<&str> = self.net_names().collect();
        let mut b_nets: Vec<&str> = other.net_names().collect();
        a_nets.sort_unstable();
        b_nets.sort_unstable();
        if a_nets != b_nets {
            return false;
        }
        if self.instances.len() != other.instances.len() {
            return false;
        }
        for (x, y) in self.instances.iter().zip(&other.instances) {
            if x.name != y.name || x.cell != y.cell || x.conns.len() != y.conns.len() {
                return false;
            }
            for ((pa, na), (pb, nb)) in x.conns.iter().zip(&y.conns) {
                if pa != pb || self.net_name(*na) != other.net_name(*nb) {
                    return false;
                }
            }
        }
        if self.aliases.len() != other.aliases.len() {
            return false;
        }
        self.aliases.iter().zip(&other.aliases).all(|(a, b)| {
            self.net_name(a.0) == other.net_name(b.0) && self.net_name(a.1) == other.net_name(b.1)
        })
    }
}

impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.structurally_eq(other)
    }
}

/// Electrical connectivity: one driver and a reader list per canonical net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    InputPort,
    /// Instance index and output pin.
    Instance(usize),
}

#[derive(Debug, Default)]
pub struct Connectivity {
    /// Indexed by canonical net id.
    pub driver: Vec<Option<Driver>>,
    pub extra_drivers: Vec<Vec<Driver>>,
    /// Readers: (instance index, input pin index) per canonical net.
    pub readers: Vec<Vec<(usize, usize)>>,
    /// Canonical nets read by output ports.
    pub output_loads: Vec<bool>,
}

impl Netlist {
    /// Builds driver and reader tables. Unknown cells are skipped here and
    /// surface as validation diagnostics instead.
    pub fn connectivity(&self, lib: &CellLibrary) -> Connectivity {
        let n = self.nets.len();
        let mut conn = Connectivity {
            driver: vec![None; n],
            extra_drivers: vec![Vec::new(); n],
            readers: vec![Vec::new(); n],
            output_loads: vec![false; n],
        };
        let add_driver = |conn: &mut Connectivity, net: NetId, d: Driver| {
            let slot = &mut conn.driver[net.index()];
            if slot.is_none() {
                *slot = Some(d);
            } else {
                conn.extra_drivers[net.index()].push(d);
            }
        };
        for port in &self.ports {
            for bit in self.port_bits(port) {
                let c = self.canonical(bit);
                match port.dir {
                    PortDir::Input => add_driver(&mut conn, c, Driver::InputPort),
                    PortDir::Output => conn.output_loads[c.index()] = true,
                }
            }
        }
        for (idx, inst) in self.instances.iter().enumerate() {
            let Some(cell) = lib.get(&inst.cell) else {
                continue;
            };
            for (pin_idx, (pin, net)) in inst.conns.iter().enumerate() {
                let c = self.canonical(*net);
                if cell.is_output(pin) {
                    add_driver(&mut conn, c, Driver::Instance(idx));
                } else {
                    conn.readers[c.index()].push((idx, pin_idx));
                }
            }
        }
        conn
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagKind {
    UnknownCell,
    UnknownPin,
    UnboundPin,
    DuplicatePin,
    MultiplyDriven,
    Undriven,
    CombinationalCycle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagKind,
    /// Name of the offending instance or net.
    pub object: String,
    pub message: String,
}

/// Checks the netlist invariants and returns one diagnostic per violation.
/// A clean netlist yields an empty list.
pub fn validate_netlist(netlist: &Netlist, lib: &CellLibrary) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    for inst in &netlist.instances {
        let Some(cell) = lib.get(&inst.cell) else {
            diags.push(Diagnostic {
                kind: DiagKind::UnknownCell,
                object: inst.name.clone(),
                message: format!("instance {} references unknown cell {}", inst.name, inst.cell),
            });
            continue;
        };
        let mut seen: Vec<&str> = Vec::new();
        for (pin, _) in &inst.conns {
            if !cell.pins().any(|p| p == pin) {
                diags.push(Diagnostic {
                    kind: DiagKind::UnknownPin,
                    object: inst.name.clone(),
                    message: format!("instance {} binds unknown pin {pin}", inst.name),
                });
            }
            if seen.contains(&pin.as_str()) {
                diags.push(Diagnostic {
                    kind: DiagKind::DuplicatePin,
                    object: inst.name.clone(),
                    message: format!("instance {} binds pin {pin} twice", inst.name),
                });
            }
            seen.push(pin);
        }
        for pin in cell.pins() {
            if !seen.contains(&pin) {
                diags.push(Diagnostic {
                    kind: DiagKind::UnboundPin,
                    object: inst.name.clone(),
                    message: format!("instance {} leaves pin {pin} unbound", inst.name),
                });
            }
        }
    }

    let conn = netlist.connectivity(lib);
    for id in netlist.net_ids() {
        if netlist.canonical(id) != id {
            continue;
        }
        let i = id.index();
        let name = netlist.net_name(id);
        if !conn.extra_drivers[i].is_empty() {
            diags.push(Diagnostic {
                kind: DiagKind::MultiplyDriven,
                object: name.to_string(),
                message: format!(
                    "net {name} has {} drivers",
                    1 + conn.extra_drivers[i].len()
                ),
            });
        }
        if conn.driver[i].is_none() {
            let loads = conn.readers[i].len();
            let message = if loads > 0 || conn.output_loads[i] {
                format!("net {name} has no driver")
            } else {
                format!("net {name} has no driver and no loads")
            };
            diags.push(Diagnostic {
                kind: DiagKind::Undriven,
                object: name.to_string(),
                message,
            });
        }
    }

    // Combinational cycles: edges between combinational instances through
    // canonical nets; registers cut the graph.
    let n_inst = netlist.instances.len();
    let mut indegree = vec![0usize; n_inst];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n_inst];
    for (idx, inst) in netlist.instances.iter().enumerate() {
        let Some(cell) = lib.get(&inst.cell) else {
            continue;
        };
        if cell.sequential {
            continue;
        }
        for (pin, net) in &inst.conns {
            if cell.is_output(pin) {
                continue;
            }
            let c = netlist.canonical(*net);
            if let Some(Driver::Instance(src)) = conn.driver[c.index()] {
                let src_cell = lib.get(&netlist.instances[src].cell);
                if src_cell.is_some_and(|c| !c.sequential) {
                    succs[src].push(idx);
                    indegree[idx] += 1;
                }
            }
        }
    }
    let mut queue: Vec<usize> = (0..n_inst).filter(|&i| indegree[i] == 0).collect();
    let mut done = 0;
    while let Some(i) = queue.pop() {
        done += 1;
        for &s in &succs[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                queue.push(s);
            }
        }
    }
    if done < n_inst {
        let member = (0..n_inst)
            .find(|&i| indegree[i] > 0)
            .expect("cycle member exists");
        let name = &netlist.instances[member].name;
        diags.push(Diagnostic {
            kind: DiagKind::CombinationalCycle,
            object: name.clone(),
            message: format!(
                "combinational cycle through instance {name} does not pass a register"
            ),
        });
    }

    diags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn and_netlist() -> (Netlist, CellLibrary) {
        let lib = CellLibrary::standard();
        let mut n = Netlist::new("top");
        n.add_port("a", PortDir::Input, 1).unwrap();
        n.add_port("b", PortDir::Input, 1).unwrap();
        n.add_port("y", PortDir::Output, 1).unwrap();
        let a = n.net("a").unwrap();
        let b = n.net("b").unwrap();
        let y = n.net("y").unwrap();
        n.add_instance(
            "u1",
            "AND2",
            vec![
                ("A".to_string(), a),
                ("B".to_string(), b),
                ("Y".to_string(), y),
            ],
        )
        .unwrap();
        (n, lib)
    }

    #[test]
    fn clean_and_gate_has_no_diagnostics() {
        let (n, lib) = and_netlist();
        assert!(validate_netlist(&n, &lib).is_empty());
    }

    #[test]
    fn two_drivers_yield_one_diagnostic() {
        let (mut n, lib) = and_netlist();
        let a = n.net("a").unwrap();
        let b = n.net("b").unwrap();
        let y = n.net("y").unwrap();
        n.add_instance(
            "u2",
            "OR2",
            vec![
                ("A".to_string(), a),
                ("B".to_string(), b),
                ("Y".to_string(), y),
            ],
        )
        .unwrap();
        let diags = validate_netlist(&n, &lib);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagKind::MultiplyDriven);
        assert_eq!(diags[0].object, "y");
    }

    #[test]
    fn combinational_loop_is_reported() {
        let lib = CellLibrary::standard();
        let mut n = Netlist::new("loop");
        n.add_port("b", PortDir::Input, 1).unwrap();
        n.add_port("y", PortDir::Output, 1).unwrap();
        let b = n.net("b").unwrap();
        let y = n.net("y").unwrap();
        let m = n.add_net("m").unwrap();
        n.add_instance(
            "g1",
            "AND2",
            vec![
                ("A".to_string(), y),
                ("B".to_string(), b),
                ("Y".to_string(), m),
            ],
        )
        .unwrap();
        n.add_instance(
            "g2",
            "AND2",
            vec![
                ("A".to_string(), m),
                ("B".to_string(), b),
                ("Y".to_string(), y),
            ],
        )
        .unwrap();
        let diags = validate_netlist(&n, &lib);
        let cycles: Vec<_> = diags
            .iter()
            .filter(|d| d.kind == DiagKind::CombinationalCycle)
            .collect();
        assert_eq!(cycles.len(), 1);
    }

    #[test]
    fn alias_resolves_passthrough_driver() {
        let lib = CellLibrary::standard();
        let mut n = Netlist::new("pass");
        n.add_port("a", PortDir::Input, 1).unwrap();
        n.add_port("y", PortDir::Output, 1).unwrap();
        let a = n.net("a").unwrap();
        let y = n.net("y").unwrap();
        n.add_alias(y, a).unwrap();
        assert_eq!(n.canonical(y), a);
        assert!(validate_netlist(&n, &lib).is_empty());
    }

    #[test]
    fn undriven_output_reported() {
        let lib = CellLibrary::standard();
        let mut n = Netlist::new("bad");
        n.add_port("y", PortDir::Output, 1).unwrap();
        let diags = validate_netlist(&n, &lib);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagKind::Undriven);
    }

    #[test]
    fn unbound_pin_reported() {
        let lib = CellLibrary::standard();
        let mut n = Netlist::new("bad");
        n.add_port("a", PortDir::Input, 1).unwrap();
        n.add_port("y", PortDir::Output, 1).unwrap();
        let a = n.net("a").unwrap();
        let y = n.net("y").unwrap();
        n.add_instance(
            "u1",
            "AND2",
            vec![("A".to_string(), a), ("Y".to_string(), y)],
        )
        .unwrap();
        let diags = validate_netlist(&n, &lib);
        assert!(diags.iter().any(|d| d.kind == DiagKind::UnboundPin));
    }

    #[test]
    fn bus_ports_expand_to_bit_nets() {
        let mut n = Netlist::new("bus");
        n.add_port("d", PortDir::Input, 3).unwrap();
        assert!(n.net("d[0]").is_some());
        assert!(n.net("d[2]").is_some());
        assert!(n.net("d").is_none());
        let port = n.port("d").unwrap().clone();
        assert_eq!(n.port_bits(&port).len(), 3);
    }
}
