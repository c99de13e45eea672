//! Text form of kernel expressions.
//!
//! ```text
//! expr := base | "(" expr "+" expr ")" | "(" expr "*" expr ")"
//!       | "CP{" num "," num "}(" expr ";" expr ")"
//! base := ("LIN" | "PER" | "GE") "{" num "," num "," num "}"
//! ```
//!
//! Parameters are written with 17 significant digits so every `f64` survives
//! a round trip exactly.

use std::fmt;

use super::expr::{BaseKind, KernelExpr, Operator, ParamDomain};
use crate::error::{Error, Result};

fn write_num(f: &mut fmt::Formatter<'_>, x: f64) -> fmt::Result {
    write!(f, "{x:.16e}")
}

impl fmt::Display for KernelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelExpr::Base { kind, params } => {
                write!(f, "{}{{", kind.token())?;
                for (i, p) in params.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write_num(f, *p)?;
                }
                f.write_str("}")
            }
            KernelExpr::Node { op, children } => match op {
                Operator::Sum => write!(f, "({} + {})", children[0], children[1]),
                Operator::Product => write!(f, "({} * {})", children[0], children[1]),
                Operator::ChangePoint([loc, width]) => {
                    f.write_str("CP{")?;
                    write_num(f, *loc)?;
                    f.write_str(",")?;
                    write_num(f, *width)?;
                    write!(f, "}}({}; {})", children[0], children[1])
                }
            },
        }
    }
}

/// Parses the text form produced by `Display`.
pub fn parse(text: &str) -> Result<KernelExpr> {
    let mut p = Parser { src: text, pos: 0 };
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.syntax("trailing input"));
    }
    Ok(expr)
}

impl std::str::FromStr for KernelExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            position: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<()> {
        if self.eat(tok) {
            Ok(())
        } else if self.pos >= self.src.len() {
            Err(self.syntax(format!("expected `{tok}`, found end of input")))
        } else {
            Err(self.syntax(format!("expected `{tok}`")))
        }
    }

    fn expr(&mut self) -> Result<KernelExpr> {
        self.skip_ws();
        if self.eat("(") {
            let left = self.expr()?;
            let op = if self.eat("+") {
                Operator::Sum
            } else if self.eat("*") {
                Operator::Product
            } else {
                return Err(self.syntax("expected `+` or `*`"));
            };
            let right = self.expr()?;
            self.expect(")")?;
            return Ok(KernelExpr::node(op, left, right));
        }
        if self.eat("CP") {
            let [loc, width] = self.params::<2>(|i| Operator::ChangePoint([0.0; 2]).domain(i))?;
            self.expect("(")?;
            let left = self.expr()?;
            self.expect(";")?;
            let right = self.expr()?;
            self.expect(")")?;
            return Ok(KernelExpr::change_point(loc, width, left, right));
        }
        for kind in BaseKind::ALL {
            if self.eat(kind.token()) {
                let params = self.params::<3>(|i| kind.domain(i))?;
                return Ok(KernelExpr::base(kind, params));
            }
        }
        if self.pos >= self.src.len() {
            Err(self.syntax("unexpected end of input"))
        } else {
            Err(self.syntax("expected a kernel expression"))
        }
    }

    fn params<const N: usize>(&mut self, domain: impl Fn(usize) -> ParamDomain) -> Result<[f64; N]> {
        self.expect("{")?;
        let mut out = [0.0; N];
        for (i, slot) in out.iter_mut().enumerate() {
            if i > 0 {
                self.expect(",")?;
            }
            self.skip_ws();
            let start = self.pos;
            let len = self
                .rest()
                .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+')))
                .unwrap_or(self.rest().len());
            let token = &self.src[start..start + len];
            let value: f64 = token
                .parse()
                .map_err(|_| self.syntax(format!("invalid number `{token}`")))?;
            if !domain(i).contains(value) {
                return Err(Error::ParameterRange {
                    position: start,
                    message: format!("parameter {} = {value} is out of range", i + 1),
                });
            }
            self.pos += len;
            *slot = value;
        }
        self.expect("}")?;
        Ok(out)
    }
}
