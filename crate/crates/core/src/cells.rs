//! Cell function library.
//!
//! A library maps cell names to pin lists, logic, area and per-input-pin
//! capacitance. The text form is one cell per line:
//!
//! ```text
//! AND2 Y = A & B ; area=4 ; cap=2
//! DFF Q = reg(D,CK) ; area=8 ; cap=3
//! ```
//!
//! Sequential cells use the `reg(data,clock)` form instead of an expression.
//! `#` starts a comment.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{parse_expr, BoolExpr};

/// One output pin with its combinational logic (`None` on register outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPin {
    pub name: String,
    pub logic: Option<BoolExpr>,
}

/// One library cell: ordered input pins and one or more output pins. Base
/// cells are single-output; derived dual-rail compounds drive two rails.
/// Sequential cells keep the clock as the last input pin.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFunction {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<OutputPin>,
    pub sequential: bool,
    /// Abstract area units. Kept integral so area sums stay exact.
    pub area: f64,
    /// Capacitance units per input pin.
    pub input_cap: f64,
}

impl CellFunction {
    pub fn combinational(name: &str, expr: BoolExpr, area: f64, input_cap: f64) -> Self {
        let inputs = expr.variables();
        CellFunction {
            name: name.to_string(),
            inputs,
            outputs: vec![OutputPin {
                name: "Y".to_string(),
                logic: Some(expr),
            }],
            sequential: false,
            area,
            input_cap,
        }
    }

    pub fn register(name: &str, data: &str, clock: &str, area: f64, input_cap: f64) -> Self {
        CellFunction {
            name: name.to_string(),
            inputs: vec![data.to_string(), clock.to_string()],
            outputs: vec![OutputPin {
                name: "Q".to_string(),
                logic: None,
            }],
            sequential: true,
            area,
            input_cap,
        }
    }

    /// Multi-output cell (dual-rail compounds). Sequential compounds must
    /// keep the clock as the last input.
    pub fn compound(
        name: &str,
        inputs: Vec<String>,
        outputs: Vec<OutputPin>,
        sequential: bool,
        area: f64,
        input_cap: f64,
    ) -> Result<Self, LibraryError> {
        let cell = CellFunction {
            name: name.to_string(),
            inputs,
            outputs,
            sequential,
            area,
            input_cap,
        };
        cell.check_expressions()?;
        Ok(cell)
    }

    fn check_expressions(&self) -> Result<(), LibraryError> {
        for out in &self.outputs {
            if let Some(expr) = &out.logic {
                for var in expr.variables() {
                    if !self.inputs.contains(&var) {
                        return Err(LibraryError::UndeclaredInput {
                            cell: self.name.clone(),
                            var,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn data_pin(&self) -> &str {
        &self.inputs[0]
    }

    /// The clock is by convention the last input pin of a sequential cell.
    pub fn clock_pin(&self) -> &str {
        self.inputs.last().expect("sequential cell has inputs")
    }

    /// Data inputs of a sequential cell (everything but the clock).
    pub fn data_pins(&self) -> &[String] {
        &self.inputs[..self.inputs.len() - 1]
    }

    /// Output pin name of a single-output cell.
    pub fn output_name(&self) -> &str {
        assert_eq!(self.outputs.len(), 1, "cell {} is multi-output", self.name);
        &self.outputs[0].name
    }

    pub fn is_output(&self, pin: &str) -> bool {
        self.outputs.iter().any(|o| o.name == pin)
    }

    pub fn output_logic(&self, pin: &str) -> Option<&BoolExpr> {
        self.outputs
            .iter()
            .find(|o| o.name == pin)
            .and_then(|o| o.logic.as_ref())
    }

    /// All pins, inputs first then outputs in declared order.
    pub fn pins(&self) -> impl Iterator<Item = &str> {
        self.inputs
            .iter()
            .map(String::as_str)
            .chain(self.outputs.iter().map(|o| o.name.as_str()))
    }

    /// Evaluates a single-output combinational cell (input pin order).
    pub fn eval(&self, values: &[bool]) -> bool {
        self.eval_output(self.output_name(), values)
            .expect("eval called on sequential cell")
    }

    /// Evaluates one output pin; `None` when the pin has no logic.
    pub fn eval_output(&self, pin: &str, values: &[bool]) -> Option<bool> {
        let expr = self.output_logic(pin)?;
        Some(expr.eval(&|name| {
            let idx = self
                .inputs
                .iter()
                .position(|p| p == name)
                .expect("expression variable missing from pin list");
            values[idx]
        }))
    }
}

/// Name-keyed set of cell functions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellLibrary {
    cells: BTreeMap<String, CellFunction>,
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("library line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("library line {line}: duplicate cell {name}")]
    Duplicate { line: usize, name: String },
    #[error("cell {cell}: expression references undeclared input {var}")]
    UndeclaredInput { cell: String, var: String },
}

impl CellLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// The ten-cell standard library used throughout the flow.
    pub fn standard() -> Self {
        let mut lib = CellLibrary::new();
        let e = |s: &str| parse_expr(s).unwrap();
        for cell in [
            CellFunction::combinational("AND2", e("A & B"), 4.0, 2.0),
            CellFunction::combinational("OR2", e("A | B"), 4.0, 2.0),
            CellFunction::combinational("NAND2", e("!(A & B)"), 3.0, 2.0),
            CellFunction::combinational("NOR2", e("!(A | B)"), 3.0, 2.0),
            CellFunction::combinational("XOR2", e("A ^ B"), 6.0, 2.0),
            CellFunction::combinational("XNOR2", e("!(A ^ B)"), 6.0, 2.0),
            CellFunction::combinational("INV", e("!A"), 2.0, 1.0),
            CellFunction::combinational("AOI32", e("!((A & B & C) | (D & E))"), 7.0, 2.0),
            CellFunction::combinational("OAI32", e("!((A | B | C) & (D | E))"), 7.0, 2.0),
            CellFunction::register("DFF", "D", "CK", 8.0, 3.0),
        ] {
            lib.insert(cell).unwrap();
        }
        lib
    }

    pub fn insert(&mut self, cell: CellFunction) -> Result<(), LibraryError> {
        cell.check_expressions()?;
        self.cells.insert(cell.name.clone(), cell);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&CellFunction> {
        self.cells.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.cells.contains_key(name)
    }

    /// Cells in name order.
    pub fn iter(&self) -> impl Iterator<Item = &CellFunction> {
        self.cells.values()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Parses the one-cell-per-line text form.
    pub fn parse(text: &str) -> Result<Self, LibraryError> {
        let mut lib = CellLibrary::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let cell = parse_cell_line(line, line_no)?;
            if lib.contains(&cell.name) {
                return Err(LibraryError::Duplicate {
                    line: line_no,
                    name: cell.name,
                });
            }
            lib.insert(cell).map_err(|e| match e {
                LibraryError::UndeclaredInput { cell, var } => LibraryError::Syntax {
                    line: line_no,
                    msg: format!("cell {cell} references undeclared input {var}"),
                },
                other => other,
            })?;
        }
        Ok(lib)
    }

    /// Emits the text form, cells in name order.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for cell in self.cells.values() {
            let body = if cell.sequential {
                format!("reg({},{})", cell.data_pin(), cell.clock_pin())
            } else {
                cell.outputs[0].logic.as_ref().unwrap().to_string()
            };
            out.push_str(&format!(
                "{} {} = {} ; area={} ; cap={}\n",
                cell.name,
                cell.output_name(),
                body,
                cell.area,
                cell.input_cap
            ));
        }
        out
    }
}

fn parse_cell_line(line: &str, line_no: usize) -> Result<CellFunction, LibraryError> {
    let syntax = |msg: &str| LibraryError::Syntax {
        line: line_no,
        msg: msg.to_string(),
    };
    let mut fields = line.split(';').map(str::trim);
    let head = fields.next().ok_or_else(|| syntax("empty cell line"))?;
    let (decl, body) = head
        .split_once('=')
        .ok_or_else(|| syntax("expected `CELL OUT = expr`"))?;
    let mut decl_parts = decl.split_whitespace();
    let name = decl_parts
        .next()
        .ok_or_else(|| syntax("missing cell name"))?
        .to_string();
    let output = decl_parts
        .next()
        .ok_or_else(|| syntax("missing output pin"))?
        .to_string();
    if decl_parts.next().is_some() {
        return Err(syntax("unexpected token before `=`"));
    }

    let mut area = None;
    let mut cap = None;
    for field in fields {
        if field.is_empty() {
            continue;
        }
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| syntax("expected `key=value` attribute"))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| syntax(&format!("bad numeric value for {}", key.trim())))?;
        match key.trim() {
            "area" => area = Some(value),
            "cap" => cap = Some(value),
            other => return Err(syntax(&format!("unknown attribute {other}"))),
        }
    }
    let area = area.ok_or_else(|| syntax("missing area attribute"))?;
    let cap = cap.ok_or_else(|| syntax("missing cap attribute"))?;

    let body = body.trim();
    if let Some(rest) = body.strip_prefix("reg(") {
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| syntax("unterminated reg(...)"))?;
        let mut pins = inner.split(',').map(str::trim);
        let data = pins.next().filter(|p| !p.is_empty());
        let clock = pins.next().filter(|p| !p.is_empty());
        match (data, clock, pins.next()) {
            (Some(d), Some(c), None) => {
                let mut cell = CellFunction::register(&name, d, c, area, cap);
                cell.outputs[0].name = output;
                Ok(cell)
            }
            _ => Err(syntax("reg() takes exactly a data and a clock pin")),
        }
    } else {
        let expr = parse_expr(body).map_err(|e| syntax(&e.to_string()))?;
        let mut cell = CellFunction::combinational(&name, expr, area, cap);
        cell.outputs[0].name = output;
        Ok(cell)
    }
}
