//! Exact sparse multivariate polynomials and polynomial maps.
//!
//! Coefficients are exact rationals; all symbolic work (expansion,
//! differentiation, the Milnor determinant) happens in exact arithmetic and is
//! converted to `f64` only at the numeric boundary. Terms are kept in graded
//! lexicographic order, which fixes the canonical printed form and makes
//! floating-point evaluation deterministic.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exponent vector of one term, ordered graded-lexicographically.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn constant(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn variable(nvars: usize, idx: usize) -> Self {
        let mut e = vec![0; nvars];
        e[idx] = 1;
        Monomial(e)
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse polynomial with exact rational coefficients over a fixed ordered
/// variable list. Zero coefficients are never stored.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Polynomial {
    vars: Arc<Vec<String>>,
    terms: BTreeMap<Monomial, BigRational>,
}

impl Polynomial {
    pub fn zero(vars: Arc<Vec<String>>) -> Self {
        Polynomial {
            vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: Arc<Vec<String>>, c: BigRational) -> Self {
        let mut p = Polynomial::zero(vars);
        if !c.is_zero() {
            let n = p.vars.len();
            p.terms.insert(Monomial::constant(n), c);
        }
        p
    }

    pub fn variable(vars: Arc<Vec<String>>, idx: usize) -> Self {
        let n = vars.len();
        let mut p = Polynomial::zero(vars);
        p.terms.insert(Monomial::variable(n, idx), BigRational::one());
        p
    }

    pub fn variables(&self) -> &Arc<Vec<String>> {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(Monomial::total_degree)
            .max()
            .unwrap_or(0)
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    fn insert_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get() + c;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        debug_assert_eq!(self.vars, other.vars);
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.insert_term(m.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Polynomial {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -c.clone();
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        debug_assert_eq!(self.vars, other.vars);
        let mut out = Polynomial::zero(self.vars.clone());
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.insert_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.vars.clone(), BigRational::one());
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Exact partial derivative with respect to variable `idx`.
    pub fn diff(&self, idx: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.vars.clone());
        for (m, c) in &self.terms {
            let e = m.0[idx];
            if e == 0 {
                continue;
            }
            let mut me = m.clone();
            me.0[idx] = e - 1;
            out.insert_term(me, c * BigRational::from_integer(BigInt::from(e)));
        }
        out
    }

    /// Exact evaluation at a rational point.
    pub fn eval_rational(&self, point: &[BigRational]) -> BigRational {
        assert_eq!(point.len(), self.num_vars());
        let mut acc = BigRational::zero();
        for (m, c) in self.terms.iter().rev() {
            let mut term = c.clone();
            for (e, x) in m.0.iter().zip(point) {
                for _ in 0..*e {
                    term *= x;
                }
            }
            acc += term;
        }
        acc
    }

    /// Lossy conversion of every coefficient to `f64`, preserving term order.
    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly {
            terms: self
                .terms
                .iter()
                .rev()
                .map(|(m, c)| (m.0.clone(), rational_to_f64(c)))
                .collect(),
        }
    }
}

fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Fall back to separate conversion of numerator and denominator.
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Exact decimal representation when the denominator is of the form 2^a 5^b.
fn decimal_string(r: &BigRational) -> Option<String> {
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut d = r.denom().abs();
    let mut a = 0u32;
    let mut b = 0u32;
    while (&d % &two).is_zero() {
        d /= &two;
        a += 1;
    }
    while (&d % &five).is_zero() {
        d /= &five;
        b += 1;
    }
    if !d.is_one() {
        return None;
    }
    let k = a.max(b);
    // value = n / (2^a 5^b); scale by 10^k / (2^a 5^b) = 2^(k-a) 5^(k-b)
    let mut m = r.numer().abs();
    for _ in 0..(k - a) {
        m *= &two;
    }
    for _ in 0..(k - b) {
        m *= &five;
    }
    let digits = m.to_string();
    let s = if k == 0 {
        digits
    } else {
        let k = k as usize;
        let padded = if digits.len() <= k {
            format!("{}{}", "0".repeat(k + 1 - digits.len()), digits)
        } else {
            digits
        };
        let split = padded.len() - k;
        format!("{}.{}", &padded[..split], &padded[split..])
    };
    Some(if r.is_negative() { format!("-{s}") } else { s })
}

fn coeff_string(c: &BigRational) -> String {
    decimal_string(c).unwrap_or_else(|| format!("{}/{}", c.numer(), c.denom()))
}

impl fmt::Display for Polynomial {
    /// Canonical form: descending graded-lex order, explicit `*` and `^`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            if i == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let abs = c.abs();
            let mut factors: Vec<String> = Vec::new();
            if !abs.is_one() || m.total_degree() == 0 {
                factors.push(coeff_string(&abs));
            }
            for (idx, e) in m.0.iter().enumerate() {
                match e {
                    0 => {}
                    1 => factors.push(self.vars[idx].clone()),
                    _ => factors.push(format!("{}^{}", self.vars[idx], e)),
                }
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

/// Term list with `f64` coefficients in a fixed order; the numeric workhorse.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    terms: Vec<(Vec<u32>, f64)>,
}

impl CompiledPoly {
    pub fn eval(&self, point: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (exps, c) in &self.terms {
            let mut term = *c;
            for (e, x) in exps.iter().zip(point) {
                for _ in 0..*e {
                    term *= *x;
                }
            }
            acc += term;
        }
        acc
    }

    /// Value together with the term-magnitude sum, which bounds the
    /// cancellation scale of the evaluation.
    pub fn eval_with_magnitude(&self, point: &[f64]) -> (f64, f64) {
        let mut acc = 0.0;
        let mut mag = 0.0;
        for (exps, c) in &self.terms {
            let mut term = *c;
            for (e, x) in exps.iter().zip(point) {
                for _ in 0..*e {
                    term *= *x;
                }
            }
            acc += term;
            mag += term.abs();
        }
        (acc, mag)
    }

    /// Smallest residual magnitude distinguishable from rounding noise when
    /// evaluating at `point`.
    pub fn noise_floor(&self, point: &[f64]) -> f64 {
        8.0 * f64::EPSILON * self.eval_with_magnitude(point).1
    }
}

/// Jacobian matrix of a map evaluated at one point.
#[derive(Clone, Debug)]
pub struct JacobianEval {
    pub point: DVector<f64>,
    /// `(n-1) x n`; entry `(i, j)` is the partial of component `i` in variable `j`.
    pub matrix: DMatrix<f64>,
}

/// Polynomial map `F: R^n -> R^(n-1)` with shared variable ordering.
#[derive(Clone, Debug)]
pub struct PolynomialMap {
    vars: Arc<Vec<String>>,
    components: Vec<Polynomial>,
    compiled: Vec<CompiledPoly>,
    jacobian_sym: Vec<Vec<Polynomial>>,
    jacobian_compiled: Vec<Vec<CompiledPoly>>,
}

impl PolynomialMap {
    /// Builds a map from already-expanded components over a common variable
    /// list. The number of components must be one less than the number of
    /// variables.
    pub fn from_components(components: Vec<Polynomial>) -> Result<Self, ParseError> {
        let vars = components
            .first()
            .map(|p| p.vars.clone())
            .ok_or(ParseError::WrongComponentCount {
                expected: 1,
                found: 0,
            })?;
        let n = vars.len();
        if components.len() != n - 1 {
            return Err(ParseError::WrongComponentCount {
                expected: n - 1,
                found: components.len(),
            });
        }
        let compiled = components.iter().map(Polynomial::compile).collect();
        let jacobian_sym: Vec<Vec<Polynomial>> = components
            .iter()
            .map(|p| (0..n).map(|j| p.diff(j)).collect())
            .collect();
        let jacobian_compiled = jacobian_sym
            .iter()
            .map(|row| row.iter().map(Polynomial::compile).collect())
            .collect();
        Ok(PolynomialMap {
            vars,
            components,
            compiled,
            jacobian_sym,
            jacobian_compiled,
        })
    }

    /// Parses a semicolon-separated component list; see the module docs for
    /// the accepted grammar.
    pub fn parse(text: &str, variables: &[&str]) -> Result<Self, ParseError> {
        let vars = Arc::new(variables.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        let components = parse_components(text, &vars)?;
        if components.len() != vars.len() - 1 {
            return Err(ParseError::WrongComponentCount {
                expected: vars.len() - 1,
                found: components.len(),
            });
        }
        Self::from_components(components)
    }

    /// Wraps a single polynomial in `k+1` variables as a map `R^(k+1) -> R^k`
    /// is not possible in general; this helper is for the planar case where a
    /// scalar polynomial acts as a map `R^2 -> R`.
    pub fn from_polynomial(p: Polynomial) -> Result<Self, ParseError> {
        Self::from_components(vec![p])
    }

    pub fn domain_dim(&self) -> usize {
        self.vars.len()
    }

    pub fn target_dim(&self) -> usize {
        self.components.len()
    }

    pub fn variables(&self) -> &Arc<Vec<String>> {
        &self.vars
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn total_degree(&self) -> u32 {
        self.components
            .iter()
            .map(Polynomial::total_degree)
            .max()
            .unwrap_or(0)
    }

    pub fn evaluate(&self, point: &DVector<f64>) -> DVector<f64> {
        assert_eq!(
            point.len(),
            self.domain_dim(),
            "point dimension mismatch: expected {}, got {}",
            self.domain_dim(),
            point.len()
        );
        DVector::from_iterator(
            self.target_dim(),
            self.compiled.iter().map(|p| p.eval(point.as_slice())),
        )
    }

    /// `F(x) - t`, the residual against a target value.
    pub fn residual(&self, point: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
        self.evaluate(point) - target
    }

    /// Smallest residual magnitude distinguishable from rounding noise when
    /// evaluating any component at `point`; Newton tolerances below this are
    /// unreachable.
    pub fn noise_floor(&self, point: &DVector<f64>) -> f64 {
        self.compiled
            .iter()
            .map(|p| p.noise_floor(point.as_slice()))
            .fold(0.0, f64::max)
    }

    pub fn jacobian_matrix(&self, point: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(point.len(), self.domain_dim(), "point dimension mismatch");
        let n = self.domain_dim();
        let m = self.target_dim();
        DMatrix::from_fn(m, n, |i, j| self.jacobian_compiled[i][j].eval(point.as_slice()))
    }

    pub fn jacobian(&self, point: &DVector<f64>) -> JacobianEval {
        JacobianEval {
            matrix: self.jacobian_matrix(point),
            point: point.clone(),
        }
    }

    pub fn jacobian_symbolic(&self) -> &[Vec<Polynomial>] {
        &self.jacobian_sym
    }

    /// Determinant polynomial whose zero set is the Milnor set of the map for
    /// the distance function centred at `center`: the critical set of
    /// `x -> (F(x), |x - center|^2)`. Rows are the symbolic Jacobian of `F`
    /// followed by `(x_1 - c_1, ..., x_n - c_n)`, expanded exactly.
    pub fn milnor_polynomial(&self, center: &[f64]) -> Polynomial {
        assert_eq!(center.len(), self.domain_dim(), "center dimension mismatch");
        let n = self.domain_dim();
        let mut rows: Vec<Vec<Polynomial>> = self.jacobian_sym.clone();
        let last: Vec<Polynomial> = (0..n)
            .map(|j| {
                let x = Polynomial::variable(self.vars.clone(), j);
                let c = Polynomial::constant(
                    self.vars.clone(),
                    BigRational::from_float(center[j]).expect("finite center coordinate"),
                );
                x.sub(&c)
            })
            .collect();
        rows.push(last);
        determinant(&rows, self.vars.clone())
    }
}

impl fmt::Display for PolynomialMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.components.iter().map(|p| p.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Laplace expansion along the first row; exact and fine for the small
/// matrices that arise here.
fn determinant(rows: &[Vec<Polynomial>], vars: Arc<Vec<String>>) -> Polynomial {
    let n = rows.len();
    if n == 1 {
        return rows[0][0].clone();
    }
    let mut acc = Polynomial::zero(vars.clone());
    for (j, entry) in rows[0].iter().enumerate() {
        if entry.is_zero() {
            continue;
        }
        let minor: Vec<Vec<Polynomial>> = rows[1..]
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, p)| p.clone())
                    .collect()
            })
            .collect();
        let cofactor = entry.mul(&determinant(&minor, vars.clone()));
        if j % 2 == 0 {
            acc = acc.add(&cofactor);
        } else {
            acc = acc.sub(&cofactor);
        }
    }
    acc
}

/// Errors produced while parsing a map expression.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: unexpected {found}")]
    Syntax { offset: usize, found: String },
    #[error("unknown variable `{name}` at offset {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("exponent at offset {offset} must be a nonnegative integer")]
    BadExponent { offset: usize },
    #[error("expected {expected} map component(s), found {found}")]
    WrongComponentCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigRational),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    Slash,
    LParen,
    RParen,
    Semi,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b';' => {
                toks.push((Tok::Semi, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                let mut seen_dot = false;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || (bytes[i] == b'.' && !seen_dot)) {
                    if bytes[i] == b'.' {
                        seen_dot = true;
                    }
                    i += 1;
                }
                let s = &text[start..i];
                let r = parse_number(s).ok_or(ParseError::Syntax {
                    offset: start,
                    found: format!("`{s}`"),
                })?;
                toks.push((Tok::Num(r), start));
            }
            _ if b.is_ascii_alphabetic() || b == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(ParseError::Syntax {
                    offset: i,
                    found: format!("`{}`", &text[i..i + 1]),
                })
            }
        }
    }
    Ok(toks)
}

fn parse_number(s: &str) -> Option<BigRational> {
    if let Some(dot) = s.find('.') {
        let int_part = &s[..dot];
        let frac_part = &s[dot + 1..];
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: BigInt = digits.parse().ok()?;
        let denom = BigInt::from(10).pow(frac_part.len() as u32);
        Some(BigRational::new(numer, denom))
    } else {
        let n: BigInt = s.parse().ok()?;
        Some(BigRational::from_integer(n))
    }
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    vars: &'a Arc<Vec<String>>,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.pos)
    }

    fn next_offset(&self) -> usize {
        self.peek().map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<&(Tok, usize)> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn syntax_err(&self) -> ParseError {
        match self.peek() {
            Some((t, o)) => ParseError::Syntax {
                offset: *o,
                found: format!("{t:?}"),
            },
            None => ParseError::Syntax {
                offset: self.end,
                found: "end of input".into(),
            },
        }
    }

    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = match self.peek() {
            Some((Tok::Minus, _)) => {
                self.bump();
                self.term()?.neg()
            }
            Some((Tok::Plus, _)) => {
                self.bump();
                self.term()?
            }
            _ => self.term()?,
        };
        loop {
            match self.peek() {
                Some((Tok::Plus, _)) => {
                    self.bump();
                    acc = acc.add(&self.term()?);
                }
                Some((Tok::Minus, _)) => {
                    self.bump();
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some((Tok::Star, _)) => {
                    self.bump();
                    acc = acc.mul(&self.factor()?);
                }
                Some((Tok::Slash, o)) => {
                    // Constant division only, so that any exact rational
                    // coefficient can be printed and re-read.
                    let off = *o;
                    self.bump();
                    let rhs = self.factor()?;
                    let c = rhs
                        .terms
                        .iter()
                        .next()
                        .filter(|_| rhs.terms.len() == 1)
                        .filter(|(m, _)| m.total_degree() == 0)
                        .map(|(_, c)| c.clone())
                        .ok_or(ParseError::Syntax {
                            offset: off,
                            found: "non-constant divisor".into(),
                        })?;
                    if c.is_zero() {
                        return Err(ParseError::Syntax {
                            offset: off,
                            found: "division by zero".into(),
                        });
                    }
                    let inv = Polynomial::constant(self.vars.clone(), c.recip());
                    acc = acc.mul(&inv);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Polynomial, ParseError> {
        let base = self.base()?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.bump();
            let off = self.next_offset();
            match self.bump() {
                Some((Tok::Num(r), _)) => {
                    if !r.is_integer() || r.is_negative() {
                        return Err(ParseError::BadExponent { offset: off });
                    }
                    let e = r.to_integer().to_u32().ok_or(ParseError::BadExponent { offset: off })?;
                    Ok(base.pow(e))
                }
                Some((Tok::Minus, _)) => Err(ParseError::BadExponent { offset: off }),
                _ => Err(ParseError::Syntax {
                    offset: off,
                    found: "missing exponent".into(),
                }),
            }
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek().cloned() {
            Some((Tok::Num(r), _)) => {
                self.bump();
                Ok(Polynomial::constant(self.vars.clone(), r))
            }
            Some((Tok::Ident(name), off)) => {
                self.bump();
                let idx = self
                    .vars
                    .iter()
                    .position(|v| *v == name)
                    .ok_or(ParseError::UnknownVariable { name, offset: off })?;
                Ok(Polynomial::variable(self.vars.clone(), idx))
            }
            Some((Tok::LParen, _)) => {
                self.bump();
                let inner = self.expr()?;
                match self.bump() {
                    Some((Tok::RParen, _)) => Ok(inner),
                    _ => Err(self.syntax_err()),
                }
            }
            Some((Tok::Minus, _)) => {
                self.bump();
                Ok(self.factor()?.neg())
            }
            _ => Err(self.syntax_err()),
        }
    }
}

fn parse_components(text: &str, vars: &Arc<Vec<String>>) -> Result<Vec<Polynomial>, ParseError> {
    let toks = lex(text)?;
    let mut parser = Parser {
        toks: &toks,
        pos: 0,
        vars,
        end: text.len(),
    };
    let mut out = Vec::new();
    loop {
        out.push(parser.expr()?);
        match parser.peek() {
            Some((Tok::Semi, _)) => {
                parser.bump();
            }
            None => return Ok(out),
            Some(_) => return Err(parser.syntax_err()),
        }
    }
}

/// Parses a single polynomial expression over the named variables.
pub fn parse_polynomial(text: &str, variables: &[&str]) -> Result<Polynomial, ParseError> {
    let vars = Arc::new(variables.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let comps = parse_components(text, &vars)?;
    if comps.len() != 1 {
        return Err(ParseError::WrongComponentCount {
            expected: 1,
            found: comps.len(),
        });
    }
    Ok(comps.into_iter().next().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(text: &str, vars: &[&str]) -> PolynomialMap {
        PolynomialMap::parse(text, vars).unwrap()
    }

    fn poly(text: &str, vars: &[&str]) -> Polynomial {
        parse_polynomial(text, vars).unwrap()
    }

    #[test]
    fn parse_and_expand() {
        let f = map("x + x^2*y", &["x", "y"]);
        assert_eq!(f.target_dim(), 1);
        assert_eq!(f.total_degree(), 3);

        let g = map("y*(x^2+1)", &["x", "y"]);
        assert_eq!(g.components()[0], poly("x^2*y + y", &["x", "y"]));
    }

    #[test]
    fn parse_errors() {
        let err = PolynomialMap::parse("x +* y", &["x", "y"]).unwrap_err();
        assert_eq!(
            err,
            ParseError::Syntax {
                offset: 3,
                found: "Star".into()
            }
        );
        assert!(matches!(
            PolynomialMap::parse("x + z", &["x", "y"]).unwrap_err(),
            ParseError::UnknownVariable { offset: 4, .. }
        ));
        assert!(matches!(
            PolynomialMap::parse("x^-2", &["x", "y"]).unwrap_err(),
            ParseError::BadExponent { .. }
        ));
        assert!(matches!(
            PolynomialMap::parse("x^1.5", &["x", "y"]).unwrap_err(),
            ParseError::BadExponent { .. }
        ));
        assert!(matches!(
            PolynomialMap::parse("x; y", &["x", "y"]).unwrap_err(),
            ParseError::WrongComponentCount {
                expected: 1,
                found: 2
            }
        ));
    }

    #[test]
    fn evaluation_fixtures() {
        let f = map("x + x^2*y", &["x", "y"]);
        assert_eq!(f.evaluate(&DVector::from_vec(vec![1.0, 1.0]))[0], 2.0);

        let g = map("y*(x^2+1)", &["x", "y"]);
        for t in [-2.0, 0.0, 0.5, 3.25] {
            assert_eq!(g.evaluate(&DVector::from_vec(vec![0.0, t]))[0], t);
        }

        let h = map("y*(2*x^2*y^2 - 9*x*y + 12)", &["x", "y"]);
        assert_eq!(h.evaluate(&DVector::from_vec(vec![0.0, 1.0]))[0], 12.0);
    }

    #[test]
    fn jacobian_fixtures() {
        let f = map("x + x^2*y", &["x", "y"]);
        let j = f.jacobian(&DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(j.matrix[(0, 0)], 1.0);
        assert_eq!(j.matrix[(0, 1)], 0.0);

        let g = map("y*(x^2+1)", &["x", "y"]);
        let j = g.jacobian(&DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(j.matrix[(0, 0)], 0.0);
        assert_eq!(j.matrix[(0, 1)], 1.0);
    }

    /// Central finite differences, the independent check on the symbolic
    /// derivative path.
    fn fd_jacobian(map: &PolynomialMap, x: &DVector<f64>) -> DMatrix<f64> {
        let n = map.domain_dim();
        let m = map.target_dim();
        let h = 1e-6 * x.norm().max(1.0);
        DMatrix::from_fn(m, n, |i, j| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (map.evaluate(&xp)[i] - map.evaluate(&xm)[i]) / (2.0 * h)
        })
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let maps = [
            map("x + x^2*y", &["x", "y"]),
            map("y*(2*x^2*y^2 - 9*x*y + 12)", &["x", "y"]),
            map("z; x + x^2*y", &["x", "y", "z"]),
        ];
        for m in &maps {
            for _ in 0..100 {
                let x = DVector::from_iterator(
                    m.domain_dim(),
                    (0..m.domain_dim()).map(|_| rng.gen_range(-10.0..10.0)),
                );
                let sym = m.jacobian_matrix(&x);
                let fd = fd_jacobian(m, &x);
                for i in 0..m.target_dim() {
                    for j in 0..m.domain_dim() {
                        let denom = sym[(i, j)].abs().max(1.0);
                        assert!(
                            (sym[(i, j)] - fd[(i, j)]).abs() / denom <= 1e-6,
                            "row {i} col {j}: sym {} fd {}",
                            sym[(i, j)],
                            fd[(i, j)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn milnor_polynomial_fixtures() {
        let f = map("x + x^2*y", &["x", "y"]);
        let m = f.milnor_polynomial(&[0.0, 0.0]);
        assert_eq!(m, poly("y + 2*x*y^2 - x^3", &["x", "y"]));

        let line = map("x", &["x", "y"]);
        assert_eq!(line.milnor_polynomial(&[0.0, 0.0]), poly("y", &["x", "y"]));

        let g = map("y*(x^2+1)", &["x", "y"]);
        assert_eq!(
            g.milnor_polynomial(&[0.0, 0.0]),
            poly("2*x*y^2 - x^3 - x", &["x", "y"])
        );

        let h = map("y*(2*x^2*y^2 - 9*x*y + 12)", &["x", "y"]);
        assert_eq!(
            h.milnor_polynomial(&[0.0, 0.0]),
            poly("4*x*y^4 - 9*y^3 - 6*x^3*y^2 + 18*x^2*y - 12*x", &["x", "y"])
        );
    }

    /// For planar maps the determinant must equal
    /// `df/dx * (y - c2) - df/dy * (x - c1)` exactly; this pins the global
    /// sign fixed by the row-order convention.
    #[test]
    fn milnor_planar_formula() {
        let fixtures = ["x + x^2*y", "y*(x^2+1)", "y*(2*x^2*y^2 - 9*x*y + 12)", "x^2 + y^2"];
        let centers = [[0.0, 0.0], [0.5, -1.25], [2.0, 3.0]];
        for text in fixtures {
            let f = map(text, &["x", "y"]);
            let p = &f.components()[0];
            let vars = p.variables().clone();
            for c in centers {
                let m = f.milnor_polynomial(&c);
                let cx = Polynomial::constant(vars.clone(), BigRational::from_float(c[0]).unwrap());
                let cy = Polynomial::constant(vars.clone(), BigRational::from_float(c[1]).unwrap());
                let x = Polynomial::variable(vars.clone(), 0);
                let y = Polynomial::variable(vars.clone(), 1);
                let expected = p.diff(0).mul(&y.sub(&cy)).sub(&p.diff(1).mul(&x.sub(&cx)));
                assert_eq!(m, expected, "fixture {text} center {c:?}");
            }
        }
    }

    /// Numeric spot check of the symbolic determinant against an LU
    /// determinant of the assembled matrix, on a 3-variable map.
    #[test]
    fn milnor_matches_numeric_determinant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let f = map("z; x + x^2*y", &["x", "y", "z"]);
        let center = [0.25, -1.0, 0.5];
        let m = f.milnor_polynomial(&center).compile();
        for _ in 0..50 {
            let x = DVector::from_iterator(3, (0..3).map(|_| rng.gen_range(-3.0..3.0)));
            let mut rows = f.jacobian_matrix(&x);
            rows = rows.insert_row(2, 0.0);
            for j in 0..3 {
                rows[(2, j)] = x[j] - center[j];
            }
            let lu_det = rows.lu().determinant();
            let sym = m.eval(x.as_slice());
            assert!(
                (lu_det - sym).abs() <= 1e-9 * lu_det.abs().max(1.0),
                "lu {lu_det} sym {sym}"
            );
        }
    }

    #[test]
    fn print_round_trip_fixtures() {
        for text in [
            "x + x^2*y",
            "y*(x^2+1)",
            "0.5*x^2 - 0.125*y + 3",
            "y*(2*x^2*y^2 - 9*x*y + 12)",
        ] {
            let p = poly(text, &["x", "y"]);
            let reparsed = poly(&p.to_string(), &["x", "y"]);
            assert_eq!(p, reparsed, "round trip of {text} via {p}");
        }
        // A coefficient with no finite decimal expansion survives printing too.
        let p = poly("(1/3)*x + 2", &["x", "y"]);
        assert_eq!(p, poly(&p.to_string(), &["x", "y"]));
    }

    #[test]
    fn canonical_print_is_graded_lex_descending() {
        let p = poly("y + x + x^2*y + 1", &["x", "y"]);
        assert_eq!(p.to_string(), "x^2*y + x + y + 1");
    }
}
