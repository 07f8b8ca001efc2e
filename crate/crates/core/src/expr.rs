//! Boolean expressions over named variables.
//!
//! Cell functions are stored as expression trees restricted to AND, OR, NOT
//! and XOR. The text form follows Verilog operator spelling and precedence:
//! `!` binds tightest, then `&`, then `^`, then `|`.

use std::fmt;

use thiserror::Error;

/// Expression tree over named inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoolExpr {
    Var(String),
    Not(Box<BoolExpr>),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
    Xor(Box<BoolExpr>, Box<BoolExpr>),
}

impl BoolExpr {
    pub fn var(name: &str) -> Self {
        BoolExpr::Var(name.to_string())
    }

    pub fn not(e: BoolExpr) -> Self {
        BoolExpr::Not(Box::new(e))
    }

    pub fn and(a: BoolExpr, b: BoolExpr) -> Self {
        BoolExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: BoolExpr, b: BoolExpr) -> Self {
        BoolExpr::Or(Box::new(a), Box::new(b))
    }

    pub fn xor(a: BoolExpr, b: BoolExpr) -> Self {
        BoolExpr::Xor(Box::new(a), Box::new(b))
    }

    /// Balanced AND over one or more terms.
    pub fn and_all(terms: Vec<BoolExpr>) -> Self {
        Self::reduce(terms, BoolExpr::and)
    }

    /// Balanced OR over one or more terms.
    pub fn or_all(terms: Vec<BoolExpr>) -> Self {
        Self::reduce(terms, BoolExpr::or)
    }

    fn reduce(mut terms: Vec<BoolExpr>, op: fn(BoolExpr, BoolExpr) -> BoolExpr) -> Self {
        assert!(!terms.is_empty(), "reduce over empty term list");
        while terms.len() > 1 {
            let mut next = Vec::with_capacity(terms.len() / 2 + 1);
            let mut it = terms.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(op(a, b)),
                    None => next.push(a),
                }
            }
            terms = next;
        }
        terms.pop().unwrap()
    }

    /// Evaluates with variable values supplied by `lookup`.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> bool) -> bool {
        match self {
            BoolExpr::Var(n) => lookup(n),
            BoolExpr::Not(e) => !e.eval(lookup),
            BoolExpr::And(a, b) => a.eval(lookup) && b.eval(lookup),
            BoolExpr::Or(a, b) => a.eval(lookup) || b.eval(lookup),
            BoolExpr::Xor(a, b) => a.eval(lookup) ^ b.eval(lookup),
        }
    }

    /// Variable names in first-occurrence order, without duplicates.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            BoolExpr::Var(n) => {
                if !out.iter().any(|v| v == n) {
                    out.push(n.clone());
                }
            }
            BoolExpr::Not(e) => e.collect_vars(out),
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) | BoolExpr::Xor(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Number of occurrences of variable `name`.
    pub fn count_var(&self, name: &str) -> usize {
        match self {
            BoolExpr::Var(n) => usize::from(n == name),
            BoolExpr::Not(e) => e.count_var(name),
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) | BoolExpr::Xor(a, b) => {
                a.count_var(name) + b.count_var(name)
            }
        }
    }

    /// True when the tree contains no NOT node. For expressions over rail
    /// variables this is the structural monotonicity requirement.
    pub fn is_negation_free(&self) -> bool {
        match self {
            BoolExpr::Var(_) => true,
            BoolExpr::Not(_) => false,
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) | BoolExpr::Xor(a, b) => {
                a.is_negation_free() && b.is_negation_free()
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            BoolExpr::Var(_) | BoolExpr::Not(_) => 3,
            BoolExpr::And(..) => 2,
            BoolExpr::Xor(..) => 1,
            BoolExpr::Or(..) => 0,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let me = self.precedence();
        let need_paren = me < parent;
        if need_paren {
            write!(f, "(")?;
        }
        match self {
            BoolExpr::Var(n) => write!(f, "{n}")?,
            BoolExpr::Not(e) => {
                write!(f, "!")?;
                e.fmt_prec(f, 4)?;
            }
            BoolExpr::And(a, b) => {
                a.fmt_prec(f, me)?;
                write!(f, " & ")?;
                b.fmt_prec(f, me + 1)?;
            }
            BoolExpr::Xor(a, b) => {
                a.fmt_prec(f, me)?;
                write!(f, " ^ ")?;
                b.fmt_prec(f, me + 1)?;
            }
            BoolExpr::Or(a, b) => {
                a.fmt_prec(f, me)?;
                write!(f, " | ")?;
                b.fmt_prec(f, me + 1)?;
            }
        }
        if need_paren {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("expression syntax error at column {col}: {msg}")]
pub struct ExprError {
    pub col: usize,
    pub msg: String,
}

/// Parses the text form. Operators `& ^ |` associate left; `!` is prefix;
/// parentheses group.
pub fn parse_expr(text: &str) -> Result<BoolExpr, ExprError> {
    let mut p = ExprParser {
        chars: text.char_indices().peekable(),
        len: text.len(),
    };
    let e = p.or_expr()?;
    p.skip_ws();
    match p.chars.peek() {
        None => Ok(e),
        Some((i, c)) => Err(ExprError {
            col: i + 1,
            msg: format!("unexpected '{c}'"),
        }),
    }
}

struct ExprParser<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    len: usize,
}

impl ExprParser<'_> {
    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn eat(&mut self, want: char) -> bool {
        self.skip_ws();
        if matches!(self.chars.peek(), Some((_, c)) if *c == want) {
            self.chars.next();
            true
        } else {
            false
        }
    }

    fn or_expr(&mut self) -> Result<BoolExpr, ExprError> {
        let mut e = self.xor_expr()?;
        while self.eat('|') {
            e = BoolExpr::or(e, self.xor_expr()?);
        }
        Ok(e)
    }

    fn xor_expr(&mut self) -> Result<BoolExpr, ExprError> {
        let mut e = self.and_expr()?;
        while self.eat('^') {
            e = BoolExpr::xor(e, self.and_expr()?);
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<BoolExpr, ExprError> {
        let mut e = self.unary()?;
        while self.eat('&') {
            e = BoolExpr::and(e, self.unary()?);
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<BoolExpr, ExprError> {
        self.skip_ws();
        if self.eat('!') {
            return Ok(BoolExpr::not(self.unary()?));
        }
        if self.eat('(') {
            let e = self.or_expr()?;
            if !self.eat(')') {
                return Err(self.err("expected ')'"));
            }
            return Ok(e);
        }
        self.identifier().map(BoolExpr::Var)
    }

    fn identifier(&mut self) -> Result<String, ExprError> {
        self.skip_ws();
        let mut name = String::new();
        match self.chars.peek() {
            Some((_, c)) if c.is_ascii_alphabetic() || *c == '_' => {}
            _ => return Err(self.err("expected identifier")),
        }
        while let Some((_, c)) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || *c == '_' {
                name.push(*c);
                self.chars.next();
            } else {
                break;
            }
        }
        Ok(name)
    }

    fn err(&mut self, msg: &str) -> ExprError {
        let col = self.chars.peek().map_or(self.len + 1, |(i, _)| i + 1);
        ExprError {
            col,
            msg: msg.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(e: &BoolExpr, a: bool, b: bool, c: bool) -> bool {
        e.eval(&|n| match n {
            "A" => a,
            "B" => b,
            "C" => c,
            _ => panic!("unknown var {n}"),
        })
    }

    #[test]
    fn precedence_matches_verilog() {
        let e = parse_expr("A | B & C").unwrap();
        // OR of A with (B AND C)
        assert!(ev(&e, true, false, false));
        assert!(!ev(&e, false, true, false));
        let e = parse_expr("A ^ B & C").unwrap();
        assert!(ev(&e, true, true, false));
        assert!(!ev(&e, true, true, true));
    }

    #[test]
    fn not_binds_tightest() {
        let e = parse_expr("!A & B").unwrap();
        assert!(ev(&e, false, true, false));
        assert!(!ev(&e, true, true, false));
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "A & B",
            "!(A & B & C)",
            "!((A & B) | C)",
            "A ^ B",
            "(A | B) & C",
            "!A",
            "A & B | C ^ A",
        ] {
            let e = parse_expr(text).unwrap();
            let printed = e.to_string();
            let back = parse_expr(&printed).unwrap();
            assert_eq!(e, back, "round trip failed for {text} -> {printed}");
        }
    }

    #[test]
    fn syntax_error_reports_column() {
        let err = parse_expr("A &").unwrap_err();
        assert_eq!(err.col, 4);
        let err = parse_expr("A @ B").unwrap_err();
        assert_eq!(err.col, 3);
    }

    #[test]
    fn variable_order_and_counts() {
        let e = parse_expr("B & A | B").unwrap();
        assert_eq!(e.variables(), vec!["B".to_string(), "A".to_string()]);
        assert_eq!(e.count_var("B"), 2);
        assert_eq!(e.count_var("A"), 1);
    }

    #[test]
    fn balanced_reduction_is_shallow() {
        let terms: Vec<_> = (0..32).map(|i| BoolExpr::var(&format!("v{i}"))).collect();
        let e = BoolExpr::or_all(terms);
        fn depth(e: &BoolExpr) -> usize {
            match e {
                BoolExpr::Var(_) => 0,
                BoolExpr::Not(x) => 1 + depth(x),
                BoolExpr::And(a, b) | BoolExpr::Or(a, b) | BoolExpr::Xor(a, b) => {
                    1 + depth(a).max(depth(b))
                }
            }
        }
        assert_eq!(depth(&e), 5);
    }
}
