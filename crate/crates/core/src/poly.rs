//! Polynomial scalar fields in ambient coordinates and their text syntax.
//!
//! Expressions like `0.1*x1`, `x1^2 - x2^2`, `|z1|^2` or `3*(x1 + y2)^2` are
//! parsed against the ambient variable names of a model and expanded into a
//! sparse coefficient map. Chart jets are obtained by composing with the
//! chart's embedding jets, so derivatives of every order are exact.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{CrError, Result};
use crate::jet::Jet;

const MAX_DEGREE: usize = 24;
const MAX_TERMS: usize = 4096;

/// A real polynomial in the ambient coordinates of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFieldSpec {
    nvars: usize,
    terms: BTreeMap<Vec<u8>, f64>,
}

impl ScalarFieldSpec {
    pub fn zero(nvars: usize) -> Self {
        ScalarFieldSpec { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    pub fn variable(nvars: usize, var: usize) -> Self {
        Self::monomial(nvars, &[(var, 1)], 1.0)
    }

    /// `coef * Π x_var^power`.
    pub fn monomial(nvars: usize, powers: &[(usize, u8)], coef: f64) -> Self {
        let mut e = vec![0u8; nvars];
        for &(v, k) in powers {
            e[v] += k;
        }
        let mut p = Self::zero(nvars);
        if coef != 0.0 {
            p.terms.insert(e, coef);
        }
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Vec<u8>, f64)>) -> Self {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            assert_eq!(e.len(), nvars);
            *p.terms.entry(e).or_insert(0.0) += c;
        }
        p.prune();
        p
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u8], f64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|e| e.iter().map(|&k| k as usize).sum()).max().unwrap_or(0)
    }

    /// Indices of the variables that appear with a nonzero exponent.
    pub fn variables_used(&self) -> Vec<usize> {
        (0..self.nvars).filter(|&v| self.terms.keys().any(|e| e[v] > 0)).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut p = self.clone();
        for c in p.terms.values_mut() {
            *c *= s;
        }
        p.prune();
        p
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut p = self.clone();
        for (e, c) in &other.terms {
            *p.terms.entry(e.clone()).or_insert(0.0) += c;
        }
        p.prune();
        p
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut p = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u8> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *p.terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        p.prune();
        p
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Composes the polynomial with ambient-coordinate jets.
    pub fn jet(&self, ambient: &[Jet]) -> Jet {
        assert_eq!(ambient.len(), self.nvars, "ambient dimension mismatch");
        let sp = ambient[0].space();
        let order = ambient.iter().map(Jet::order).min().unwrap_or(0);
        let mut out = sp.zero(order);
        if self.terms.is_empty() {
            return out;
        }
        let mut maxpow = vec![0u8; self.nvars];
        for e in self.terms.keys() {
            for (m, &k) in maxpow.iter_mut().zip(e) {
                *m = (*m).max(k);
            }
        }
        let powers: Vec<Vec<Jet>> = ambient
            .iter()
            .zip(&maxpow)
            .map(|(x, &m)| {
                let mut v = vec![sp.constant(1.0, order)];
                for k in 1..=m as usize {
                    let next = &v[k - 1] * x;
                    v.push(next);
                }
                v
            })
            .collect();
        for (e, &c) in &self.terms {
            let mut term: Option<Jet> = None;
            for (v, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let pw = &powers[v][k as usize];
                term = Some(match term {
                    None => pw.clone(),
                    Some(t) => &t * pw,
                });
            }
            match term {
                None => out.axpy(c, &sp.constant(1.0, order)),
                Some(t) => out.axpy(c, &t),
            }
        }
        out
    }

    /// Parses an expression over the given variable names.
    pub fn parse(src: &str, names: &[String]) -> Result<Self> {
        let mut p = Parser { chars: src.chars().collect(), pos: 0, names };
        let value = p.expr()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(value)
    }

    pub fn display(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut parts = Vec::new();
        for (e, c) in self.terms.iter().rev() {
            let mut factors = vec![format!("{c}")];
            for (v, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => factors.push(names[v].clone()),
                    _ => factors.push(format!("{}^{}", names[v], k)),
                }
            }
            parts.push(factors.join("*"));
        }
        parts.join(" + ")
    }
}

impl fmt::Display for ScalarFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (0..self.nvars).map(|i| format!("v{i}")).collect();
        write!(f, "{}", self.display(&names))
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> CrError {
        CrError::Parse(format!("{msg} at offset {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn check(&self, p: ScalarFieldSpec) -> Result<ScalarFieldSpec> {
        if p.degree() > MAX_DEGREE || p.terms.len() > MAX_TERMS {
            return Err(self.error("polynomial too large"));
        }
        if p.terms.values().any(|c| !c.is_finite()) {
            return Err(self.error("non-finite coefficient"));
        }
        Ok(p)
    }

    fn expr(&mut self) -> Result<ScalarFieldSpec> {
        let mut acc = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                '+' => {
                    self.pos += 1;
                    let t = self.term()?;
                    acc = self.check(acc.add(&t))?;
                }
                '-' => {
                    self.pos += 1;
                    let t = self.term()?;
                    acc = self.check(acc.sub(&t))?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<ScalarFieldSpec> {
        let mut acc = self.unary()?;
        while self.peek() == Some('*') {
            self.pos += 1;
            let u = self.unary()?;
            acc = self.check(acc.mul(&u))?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<ScalarFieldSpec> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(self.unary()?.scale(-1.0))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<ScalarFieldSpec> {
        let (base, modulus) = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let digits: String = self.chars[start..self.pos].iter().collect();
            let k: usize = digits.parse().map_err(|_| self.error("expected integer exponent"))?;
            if k > MAX_DEGREE {
                return Err(self.error("exponent too large"));
            }
            if modulus {
                if k % 2 != 0 {
                    return Err(self.error("|z|^k needs an even exponent"));
                }
                return self.pow(&base, k / 2);
            }
            return self.pow(&base, k);
        }
        if modulus {
            return Err(self.error("|z| must be raised to an even power"));
        }
        Ok(base)
    }

    fn pow(&self, base: &ScalarFieldSpec, k: usize) -> Result<ScalarFieldSpec> {
        let mut acc = ScalarFieldSpec::constant(base.nvars, 1.0);
        for _ in 0..k {
            acc = self.check(acc.mul(base))?;
        }
        Ok(acc)
    }

    // returns (value, is |z|^2 placeholder)
    fn atom(&mut self) -> Result<(ScalarFieldSpec, bool)> {
        let nvars = self.names.len();
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok((e, false))
            }
            Some('|') => {
                self.pos += 1;
                self.skip_ws();
                let name = self.ident();
                let k = name
                    .strip_prefix('z')
                    .ok_or_else(|| self.error("expected zK inside |..|"))?;
                let x = self.lookup(&format!("x{k}"))?;
                let y = self.lookup(&format!("y{k}"))?;
                if self.peek() != Some('|') {
                    return Err(self.error("expected closing '|'"));
                }
                self.pos += 1;
                let m = ScalarFieldSpec::monomial(nvars, &[(x, 2)], 1.0)
                    .add(&ScalarFieldSpec::monomial(nvars, &[(y, 2)], 1.0));
                Ok((m, true))
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while self.pos < self.chars.len() {
                    let ch = self.chars[self.pos];
                    let exp_sign = (ch == '-' || ch == '+')
                        && self.pos > start
                        && matches!(self.chars[self.pos - 1], 'e' | 'E');
                    if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                let v: f64 = text.parse().map_err(|_| self.error("malformed number"))?;
                if !v.is_finite() {
                    return Err(self.error("non-finite number"));
                }
                Ok((ScalarFieldSpec::constant(nvars, v), false))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.ident();
                let v = self.lookup(&name)?;
                Ok((ScalarFieldSpec::variable(nvars, v), false))
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn lookup(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CrError::Parse(format!("unknown variable '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::JetSpace;

    fn names() -> Vec<String> {
        ["x1", "y1", "x2", "y2", "x3", "y3"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_and_expands() {
        let p = ScalarFieldSpec::parse("(x1 + 2*y1)^2 - 4*x1*y1", &names()).unwrap();
        let q = ScalarFieldSpec::parse("x1^2 + 4*y1^2", &names()).unwrap();
        assert_eq!(p, q);
        let m = ScalarFieldSpec::parse("|z2|^2", &names()).unwrap();
        assert_eq!(m.eval(&[0.0, 0.0, 0.6, 0.8, 0.0, 0.0]), 1.0);
        let u = ScalarFieldSpec::parse("0.1*x1", &names()).unwrap();
        assert_eq!(u.variables_used(), vec![0]);
        assert!(ScalarFieldSpec::parse("1e-3 * x3 - 2.5E+1", &names()).is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["x4", "x1 +", "(x1", "x1^", "|x1|^2", "|z1|", "|z1|^3", "x1 $", "x1^99", "1e999"] {
            assert!(ScalarFieldSpec::parse(bad, &names()).is_err(), "{bad}");
        }
    }

    #[test]
    fn jet_derivatives_exact() {
        // x1^2 composed with the identity embedding: 4th derivatives vanish, 2nd is 2.
        let sp = JetSpace::get(2, 4);
        let amb = vec![sp.variable(0, 0.3, 4), sp.variable(1, -0.2, 4)];
        let nm = vec!["x1".to_string(), "y1".to_string()];
        let p = ScalarFieldSpec::parse("x1^2 + x1*y1^3", &nm).unwrap();
        let j = p.jet(&amb);
        assert!((j.value() - p.eval(&[0.3, -0.2])).abs() < 1e-15);
        assert_eq!(j.partial(&[2, 0]), 2.0);
        assert!((j.partial(&[1, 3]) - 6.0).abs() < 1e-14);
        assert!((j.partial(&[0, 3]) - 6.0 * 0.3).abs() < 1e-14);
        assert_eq!(j.partial(&[4, 0]), 0.0);
    }
}
