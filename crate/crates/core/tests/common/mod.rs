//! Shared generators and oracles for the property tests.

#![allow(dead_code)]

use proptest::prelude::*;

pub const VARS: [&str; 3] = ["x", "y", "z"];

/// Functions the generator draws from: all Lipschitz on bounded inputs, so
/// round-off stays proportional to the magnitudes involved.
const FUNCS: [&str; 7] = ["sin", "cos", "tanh", "abs", "sq", "sig", "hardsig"];

/// Well-formed infix expressions over `x`, `y`, `z`, built by splicing
/// smaller expressions together, so precedence decides their structure.
pub fn infix_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        3 => prop::sample::select(&VARS[..]).prop_map(str::to_string),
        1 => prop::sample::select(&["1", "2", "3", "0.5", "2.25", "10"][..]).prop_map(str::to_string),
    ];
    leaf.prop_recursive(5, 24, 2, |inner| {
        prop_oneof![
            4 => (inner.clone(), prop::sample::select(&["+", "-", "*", "/"][..]), inner.clone(), any::<bool>())
                .prop_map(|(a, op, b, spaced)| if spaced { format!("{a} {op} {b}") } else { format!("{a}{op}{b}") }),
            1 => (inner.clone(), prop::sample::select(&["2", "3"][..])).prop_map(|(a, k)| format!("{a}^{k}")),
            1 => inner.clone().prop_map(|a| format!("-{a}")),
            2 => (prop::sample::select(&FUNCS[..]), inner.clone()).prop_map(|(f, a)| format!("{f}({a})")),
            1 => inner.prop_map(|a| format!("({a})")),
        ]
    })
}

pub fn assignment() -> impl Strategy<Value = [f64; 3]> {
    [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]
}

/// Value of an infix expression by recursive descent, with the largest
/// magnitude met along the way; `None` on a domain error.
pub fn reference_eval(src: &str, vals: &[f64; 3]) -> Option<(f64, f64)> {
    let mut p = Parser { s: src.chars().filter(|c| !c.is_whitespace()).collect(), i: 0, vals, scale: 1.0 };
    let v = p.expr()?;
    (p.i == p.s.len() && v.is_finite()).then_some((v, p.scale))
}

struct Parser<'a> {
    s: Vec<char>,
    i: usize,
    vals: &'a [f64; 3],
    scale: f64,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.s.get(self.i).copied()
    }

    fn note(&mut self, v: f64) -> Option<f64> {
        if !v.is_finite() {
            return None;
        }
        self.scale = self.scale.max(v.abs());
        Some(v)
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Option<f64> {
        let mut v = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.i += 1;
            let r = self.term()?;
            v = self.note(if c == '+' { v + r } else { v - r })?;
        }
        Some(v)
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Option<f64> {
        let mut v = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek() {
            self.i += 1;
            let r = self.unary()?;
            if c == '/' && r == 0.0 {
                return None;
            }
            v = self.note(if c == '*' { v * r } else { v / r })?;
        }
        Some(v)
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Option<f64> {
        if self.peek() == Some('-') {
            self.i += 1;
            let v = self.unary()?;
            return Some(-v);
        }
        self.power()
    }

    // power := atom ('^' unary)?
    fn power(&mut self) -> Option<f64> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.i += 1;
            let e = self.unary()?;
            return self.note(base.powf(e));
        }
        Some(base)
    }

    fn atom(&mut self) -> Option<f64> {
        let c = self.peek()?;
        if c == '(' {
            self.i += 1;
            let v = self.expr()?;
            return (self.peek() == Some(')')).then(|| {
                self.i += 1;
                v
            });
        }
        if c.is_ascii_digit() || c == '.' {
            let start = self.i;
            while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
                self.i += 1;
            }
            return self.s[start..self.i].iter().collect::<String>().parse().ok();
        }
        let start = self.i;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.i += 1;
        }
        let name: String = self.s[start..self.i].iter().collect();
        if let Some(k) = VARS.iter().position(|v| *v == name) {
            return Some(self.vals[k]);
        }
        if self.peek() != Some('(') {
            return None;
        }
        let a = self.atom()?;
        let v = match name.as_str() {
            "sin" => a.sin(),
            "cos" => a.cos(),
            "tanh" => a.tanh(),
            "abs" => a.abs(),
            "sq" => a * a,
            "sig" => 1.0 / (1.0 + (-a).exp()),
            "hardsig" => (0.2 * a + 0.5).clamp(0.0, 1.0),
            _ => return None,
        };
        self.note(v)
    }
}

/// `|got − want| ≤ 1e-12 · max(1, scale)`, where `scale` bounds the
/// magnitudes that round-off is relative to.
pub fn close(got: f64, want: f64, scale: f64) -> bool {
    (got - want).abs() <= 1e-12 * scale.max(1.0).max(want.abs())
}
