//! Tools callable from ReAct loops. Ships with one: a safe arithmetic
//! evaluator over `+ - * /`, parentheses and decimal literals.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::canonical::format_real;

pub trait Tool: Send + Sync {
    fn call(&self, argument: &str) -> Result<String, String>;
}

#[derive(Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
}

impl ToolRegistry {
    pub fn empty() -> Self {
        Self {
            tools: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tool: Arc<dyn Tool>) {
        self.tools.insert(name.into(), tool);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }
}

impl Default for ToolRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("eval", Arc::new(Calculator));
        r
    }
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

/// Find the first `Action: name(argument)` line in a model reply.
pub fn parse_action(reply: &str) -> Option<(String, String)> {
    reply.lines().find_map(|line| {
        let rest = line.trim().strip_prefix("Action:")?.trim();
        let open = rest.find('(')?;
        let close = rest.rfind(')')?;
        (close > open).then(|| {
            (
                rest[..open].trim().to_string(),
                rest[open + 1..close].to_string(),
            )
        })
    })
}

pub struct Calculator;

impl Tool for Calculator {
    fn call(&self, argument: &str) -> Result<String, String> {
        let v = eval_arithmetic(argument)?;
        Ok(if v.fract() == 0.0 && v.abs() < 1e15 {
            format!("{}", v as i64)
        } else {
            format_real(v)
        })
    }
}

/// Evaluate an arithmetic expression. Nothing but numbers, operators and
/// parentheses is accepted.
pub fn eval_arithmetic(expr: &str) -> Result<f64, String> {
    let mut p = Parser {
        s: expr.as_bytes(),
        i: 0,
        depth: 0,
    };
    let v = p.expr()?;
    p.ws();
    if p.i != p.s.len() {
        return Err(format!("unexpected input at offset {}", p.i));
    }
    if !v.is_finite() {
        return Err("result is not finite".into());
    }
    Ok(v)
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
    depth: u32,
}

impl Parser<'_> {
    fn ws(&mut self) {
        while self.s.get(self.i).is_some_and(u8::is_ascii_whitespace) {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.i).copied()
    }

    fn expr(&mut self) -> Result<f64, String> {
        let mut v = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.i += 1;
            let r = self.term()?;
            v = if op == b'+' { v + r } else { v - r };
        }
        Ok(v)
    }

    fn term(&mut self) -> Result<f64, String> {
        let mut v = self.factor()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.i += 1;
            let r = self.factor()?;
            if op == b'/' && r == 0.0 {
                return Err("division by zero".into());
            }
            v = if op == b'*' { v * r } else { v / r };
        }
        Ok(v)
    }

    fn factor(&mut self) -> Result<f64, String> {
        self.depth += 1;
        if self.depth > 200 {
            return Err("expression nested too deeply".into());
        }
        let v = match self.peek() {
            Some(b'-') => {
                self.i += 1;
                -self.factor()?
            }
            Some(b'+') => {
                self.i += 1;
                self.factor()?
            }
            Some(b'(') => {
                self.i += 1;
                let v = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err("missing ')'".into());
                }
                self.i += 1;
                v
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.i;
                while self
                    .s
                    .get(self.i)
                    .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
                {
                    self.i += 1;
                }
                let lit = std::str::from_utf8(&self.s[start..self.i]).expect("ascii");
                lit.parse::<f64>()
                    .map_err(|_| format!("bad number {lit:?}"))?
            }
            Some(c) => return Err(format!("unexpected character {:?}", c as char)),
            None => return Err("unexpected end of expression".into()),
        };
        self.depth -= 1;
        Ok(v)
    }
}
