//! Netlist text format.
//!
//! One statement per line, `#` starts a comment:
//!
//! ```text
//! module adder ( clk, a, y ) ;
//! input clk ;
//! input [3:0] a ;
//! output y ;
//! wire n1 ;
//! AND2 u1 ( .A(a[0]), .B(a[1]), .Y(n1) ) ;
//! assign y = n1 ;
//! endmodule
//! ```
//!
//! `assign` records a passthrough alias between two existing nets. Every net
//! referenced by an instance or alias must be declared by a port or `wire`
//! statement first.

use crate::cells::CellLibrary;
use crate::netlist::{Netlist, NetlistError, PortDir};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(u32),
    Sym(char),
}

struct Line {
    no: usize,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    len: usize,
}

impl Line {
    fn lex(no: usize, raw: &str) -> Result<Line, NetlistError> {
        let text = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let mut toks = Vec::new();
        let mut chars = text.char_indices().peekable();
        while let Some(&(i, c)) = chars.peek() {
            if c.is_whitespace() {
                chars.next();
            } else if c.is_ascii_alphabetic() || c == '_' {
                let mut s = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Ident(s), i + 1));
            } else if c.is_ascii_digit() {
                let mut v: u32 = 0;
                while let Some(&(_, c)) = chars.peek() {
                    if let Some(d) = c.to_digit(10) {
                        v = v * 10 + d;
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Int(v), i + 1));
            } else if "()[]:;,.=".contains(c) {
                toks.push((Tok::Sym(c), i + 1));
                chars.next();
            } else {
                return Err(NetlistError::Syntax {
                    line: no,
                    col: i + 1,
                    msg: format!("unexpected character '{c}'"),
                });
            }
        }
        Ok(Line {
            no,
            toks,
            pos: 0,
            len: text.len(),
        })
    }

    fn is_empty(&self) -> bool {
        self.toks.is_empty()
    }

    fn err(&self, msg: &str) -> NetlistError {
        let col = self
            .toks
            .get(self.pos)
            .map_or(self.len + 1, |&(_, col)| col);
        NetlistError::Syntax {
            line: self.no,
            col,
            msg: msg.to_string(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn ident(&mut self, what: &str) -> Result<String, NetlistError> {
        match self.peek() {
            Some(Tok::Ident(_)) => match self.next() {
                Some(Tok::Ident(s)) => Ok(s),
                _ => unreachable!(),
            },
            _ => Err(self.err(&format!("expected {what}"))),
        }
    }

    fn int(&mut self, what: &str) -> Result<u32, NetlistError> {
        match self.peek() {
            Some(Tok::Int(_)) => match self.next() {
                Some(Tok::Int(v)) => Ok(v),
                _ => unreachable!(),
            },
            _ => Err(self.err(&format!("expected {what}"))),
        }
    }

    fn sym(&mut self, c: char) -> Result<(), NetlistError> {
        match self.peek() {
            Some(Tok::Sym(s)) if *s == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(&format!("expected '{c}'"))),
        }
    }

    fn try_sym(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// Net reference: `name` or `name[i]`.
    fn net_ref(&mut self) -> Result<String, NetlistError> {
        let base = self.ident("net name")?;
        if self.try_sym('[') {
            let idx = self.int("bit index")?;
            self.sym(']')?;
            Ok(format!("{base}[{idx}]"))
        } else {
            Ok(base)
        }
    }

    fn finish_statement(&mut self) -> Result<(), NetlistError> {
        self.sym(';')?;
        if self.pos != self.toks.len() {
            return Err(self.err("one statement per line"));
        }
        Ok(())
    }
}

/// Parses netlist text against a cell library.
pub fn parse_netlist(text: &str, lib: &CellLibrary) -> Result<Netlist, NetlistError> {
    let mut netlist: Option<Netlist> = None;
    let mut header_ports: Vec<String> = Vec::new();
    let mut declared_ports: Vec<String> = Vec::new();
    let mut ended = false;
    let mut end_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let mut line = Line::lex(idx + 1, raw)?;
        if line.is_empty() {
            continue;
        }
        if ended {
            return Err(line.err("statement after endmodule"));
        }
        let keyword = match line.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => return Err(line.err("expected statement")),
        };
        match (keyword.as_str(), &mut netlist) {
            ("module", slot @ None) => {
                line.next();
                let name = line.ident("module name")?;
                line.sym('(')?;
                if !line.try_sym(')') {
                    loop {
                        header_ports.push(line.ident("port name")?);
                        if line.try_sym(')') {
                            break;
                        }
                        line.sym(',')?;
                    }
                }
                line.finish_statement()?;
                *slot = Some(Netlist::new(&name));
            }
            ("module", Some(_)) => return Err(line.err("duplicate module statement")),
            (_, None) => return Err(line.err("expected module statement")),
            ("endmodule", Some(_)) => {
                line.next();
                if line.pos != line.toks.len() {
                    return Err(line.err("one statement per line"));
                }
                ended = true;
                end_line = idx + 1;
            }
            ("input" | "output", Some(n)) => {
                line.next();
                let dir = if keyword == "input" {
                    PortDir::Input
                } else {
                    PortDir::Output
                };
                let width = if line.try_sym('[') {
                    let msb = line.int("port msb")?;
                    line.sym(':')?;
                    let lsb = line.int("port lsb")?;
                    line.sym(']')?;
                    if lsb != 0 {
                        return Err(line.err("port ranges must end at 0"));
                    }
                    msb + 1
                } else {
                    1
                };
                let name = line.ident("port name")?;
                line.finish_statement()?;
                if !header_ports.contains(&name) {
                    return Err(NetlistError::Syntax {
                        line: idx + 1,
                        col: 1,
                        msg: format!("port {name} not listed in module header"),
                    });
                }
                if declared_ports.contains(&name) {
                    return Err(NetlistError::DuplicateNet { name });
                }
                declared_ports.push(name.clone());
                n.add_port(&name, dir, width)?;
            }
            ("wire", Some(n)) => {
                line.next();
                let name = line.ident("wire name")?;
                line.finish_statement()?;
                n.add_net(&name)?;
            }
            ("assign", Some(n)) => {
                line.next();
                let lhs = line.net_ref()?;
                line.sym('=')?;
                let rhs = line.net_ref()?;
                line.finish_statement()?;
                let lhs_id = n.net(&lhs).ok_or(NetlistError::UnknownNet {
                    line: idx + 1,
                    name: lhs,
                })?;
                let rhs_id = n.net(&rhs).ok_or(NetlistError::UnknownNet {
                    line: idx + 1,
                    name: rhs,
                })?;
                n.add_alias(lhs_id, rhs_id)?;
            }
            (cell_name, Some(n)) => {
                line.next();
                let cell = lib.get(cell_name).ok_or(NetlistError::UnknownCell {
                    line: idx + 1,
                    name: cell_name.to_string(),
                })?;
                let inst_name = line.ident("instance name")?;
                line.sym('(')?;
                let mut conns = Vec::new();
                if !line.try_sym(')') {
                    loop {
                        line.sym('.')?;
                        let pin = line.ident("pin name")?;
                        line.sym('(')?;
                        let net = line.net_ref()?;
                        line.sym(')')?;
                        let net_id = n.net(&net).ok_or(NetlistError::UnknownNet {
                            line: idx + 1,
                            name: net,
                        })?;
                        if !cell.pins().any(|p| p == pin) {
                            return Err(NetlistError::UnknownPin {
                                instance: inst_name,
                                cell: cell.name.clone(),
                                pin,
                            });
                        }
                        if conns.iter().any(|(p, _)| *p == pin) {
                            return Err(NetlistError::DuplicatePin {
                                instance: inst_name,
                                pin,
                            });
                        }
                        conns.push((pin, net_id));
                        if line.try_sym(')') {
                            break;
                        }
                        line.sym(',')?;
                    }
                }
                line.finish_statement()?;
                for pin in cell.pins() {
                    if !conns.iter().any(|(p, _)| p == pin) {
                        return Err(NetlistError::UnboundPin {
                            instance: inst_name,
                            pin: pin.to_string(),
                        });
                    }
                }
                n.add_instance(&inst_name, cell_name, conns)?;
            }
        }
    }

    let mut netlist = netlist.ok_or(NetlistError::Syntax {
        line: 1,
        col: 1,
        msg: "missing module statement".to_string(),
    })?;
    if !ended {
        return Err(NetlistError::Syntax {
            line: text.lines().count() + 1,
            col: 1,
            msg: "missing endmodule".to_string(),
        });
    }
    for p in &header_ports {
        if !declared_ports.contains(p) {
            return Err(NetlistError::Syntax {
                line: end_line,
                col: 1,
                msg: format!("header port {p} has no direction declaration"),
            });
        }
    }

    // Reject multiply-driven nets at parse time.
    let conn = netlist.connectivity(lib);
    for id in netlist.net_ids() {
        if netlist.canonical(id) == id && !conn.extra_drivers[id.index()].is_empty() {
            return Err(NetlistError::MultiplyDriven {
                net: netlist.net_name(id).to_string(),
            });
        }
    }

    // Single consistent clock net across sequential cells, if any.
    let mut clock: Option<String> = None;
    let mut consistent = true;
    for inst in &netlist.instances {
        let Some(cell) = lib.get(&inst.cell) else {
            continue;
        };
        if !cell.sequential {
            continue;
        }
        if let Some(ck) = inst.net_for(cell.clock_pin()) {
            let name = netlist.net_name(netlist.canonical(ck)).to_string();
            match &clock {
                None => clock = Some(name),
                Some(existing) if *existing != name => consistent = false,
                _ => {}
            }
        }
    }
    netlist.clock = if consistent { clock } else { None };

    Ok(netlist)
}

/// Emits netlist text. Re-parsing the result yields a structurally equal
/// netlist.
pub fn emit_netlist(netlist: &Netlist) -> String {
    let mut out = String::new();
    out.push_str(&format!("module {} (", netlist.name));
    for (i, p) in netlist.ports.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { ", " });
        out.push_str(&p.name);
    }
    out.push_str(" ) ;\n");

    let mut port_bit_names: Vec<String> = Vec::new();
    for p in &netlist.ports {
        let dir = match p.dir {
            PortDir::Input => "input",
            PortDir::Output => "output",
        };
        if p.width == 1 {
            out.push_str(&format!("{dir} {} ;\n", p.name));
            port_bit_names.push(p.name.clone());
        } else {
            out.push_str(&format!("{dir} [{}:0] {} ;\n", p.width - 1, p.name));
            for i in 0..p.width {
                port_bit_names.push(format!("{}[{i}]", p.name));
            }
        }
    }

    for name in netlist.net_names() {
        if !port_bit_names.iter().any(|p| p == name) {
            out.push_str(&format!("wire {name} ;\n"));
        }
    }

    for inst in &netlist.instances {
        out.push_str(&format!("{} {} (", inst.cell, inst.name));
        for (i, (pin, net)) in inst.conns.iter().enumerate() {
            out.push_str(if i == 0 { " " } else { ", " });
            out.push_str(&format!(".{pin}({})", netlist.net_name(*net)));
        }
        out.push_str(" ) ;\n");
    }

    for (lhs, rhs) in &netlist.aliases {
        out.push_str(&format!(
            "assign {} = {} ;\n",
            netlist.net_name(*lhs),
            netlist.net_name(*rhs)
        ));
    }

    out.push_str("endmodule\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::validate_netlist;

    fn lib() -> CellLibrary {
        CellLibrary::standard()
    }

    #[test]
    fn single_and_gate_parses() {
        let text = "module top ( a, b, y ) ;\n\
                    input a ;\n\
                    input b ;\n\
                    output y ;\n\
                    AND2 u1 ( .A(a), .B(b), .Y(y) ) ;\n\
                    endmodule\n";
        let n = parse_netlist(text, &lib()).unwrap();
        assert_eq!(n.net_count(), 3);
        assert_eq!(n.instances.len(), 1);
        assert_eq!(n.instances[0].cell, "AND2");
        assert!(validate_netlist(&n, &lib()).is_empty());
    }

    #[test]
    fn passthrough_module_parses() {
        let text = "module pass ( a, y ) ;\n\
                    input a ;\n\
                    output y ;\n\
                    assign y = a ;\n\
                    endmodule\n";
        let n = parse_netlist(text, &lib()).unwrap();
        assert_eq!(n.instances.len(), 0);
        let a = n.net("a").unwrap();
        let y = n.net("y").unwrap();
        assert_eq!(n.canonical(y), a);
        assert!(validate_netlist(&n, &lib()).is_empty());
    }

    #[test]
    fn unknown_cell_is_named() {
        let text = "module top ( a, y ) ;\n\
                    input a ;\n\
                    output y ;\n\
                    FOO9 u1 ( .A(a), .Y(y) ) ;\n\
                    endmodule\n";
        match parse_netlist(text, &lib()) {
            Err(NetlistError::UnknownCell { name, line }) => {
                assert_eq!(name, "FOO9");
                assert_eq!(line, 4);
            }
            other => panic!("expected unknown-cell error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line_and_column() {
        let text = "module top ( a ) ;\ninput a @ ;\nendmodule\n";
        match parse_netlist(text, &lib()) {
            Err(NetlistError::Syntax { line, col, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(col, 9);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn multiply_driven_net_rejected() {
        let text = "module top ( a, b, y ) ;\n\
                    input a ;\n\
                    input b ;\n\
                    output y ;\n\
                    AND2 u1 ( .A(a), .B(b), .Y(y) ) ;\n\
                    OR2 u2 ( .A(a), .B(b), .Y(y) ) ;\n\
                    endmodule\n";
        assert!(matches!(
            parse_netlist(text, &lib()),
            Err(NetlistError::MultiplyDriven { net }) if net == "y"
        ));
    }

    #[test]
    fn unbound_pin_rejected() {
        let text = "module top ( a, y ) ;\n\
                    input a ;\n\
                    output y ;\n\
                    AND2 u1 ( .A(a), .Y(y) ) ;\n\
                    endmodule\n";
        assert!(matches!(
            parse_netlist(text, &lib()),
            Err(NetlistError::UnboundPin { pin, .. }) if pin == "B"
        ));
    }

    #[test]
    fn wide_port_emits_range() {
        let mut n = Netlist::new("w");
        n.add_port("d", PortDir::Input, 3).unwrap();
        let text = emit_netlist(&n);
        assert!(text.contains("input [2:0] d ;"), "{text}");
    }

    #[test]
    fn round_trip_preserves_structure() {
        let text = "module m ( clk, d, q ) ;\n\
                    input clk ;\n\
                    input [1:0] d ;\n\
                    output q ;\n\
                    wire n1 ;\n\
                    XOR2 u1 ( .A(d[0]), .B(d[1]), .Y(n1) ) ;\n\
                    DFF r1 ( .D(n1), .CK(clk), .Q(q) ) ;\n\
                    endmodule\n";
        let n = parse_netlist(text, &lib()).unwrap();
        assert_eq!(n.clock.as_deref(), Some("clk"));
        let emitted = emit_netlist(&n);
        let back = parse_netlist(&emitted, &lib()).unwrap();
        assert!(n.structurally_eq(&back));
    }

    #[test]
    fn statement_after_endmodule_rejected() {
        let text = "module m ( ) ;\nendmodule\nwire n ;\n";
        assert!(matches!(
            parse_netlist(text, &lib()),
            Err(NetlistError::Syntax { line: 3, .. })
        ));
    }
}
