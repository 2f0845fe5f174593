//! Truncated multivariate Taylor series ("jets") in chart coordinates.
//!
//! A [`Jet`] stores the Taylor coefficients `c_α` of a smooth function around
//! a base point, `f(p + δ) = Σ_α c_α δ^α`, for all multi-indices with
//! `|α| ≤ order`. Coefficients are kept in graded order, so truncating to a
//! lower order is a prefix slice. Arithmetic propagates exact derivatives,
//! which is how the geometry pipeline obtains chart derivatives of the frame,
//! the connection coefficients and curvature without finite differencing.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::{Mutex, OnceLock};

/// Monomial layout and multiplication tables for a fixed number of variables
/// and maximal order.
pub struct JetSpace {
    nvars: usize,
    max_order: usize,
    exps: Vec<Vec<u8>>,
    size_upto: Vec<usize>,
    // (ia, ib) with both factors non-constant, grouped by the product index;
    // the pairs for output ic are inner[starts[ic]..starts[ic + 1]]
    inner: Vec<(u16, u16)>,
    starts: Vec<u32>,
    // deriv[var][idx] = (index of α + e_var, factor α_var + 1)
    deriv: Vec<Vec<(u32, f64)>>,
    index: HashMap<Vec<u8>, usize>,
}

impl fmt::Debug for JetSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetSpace")
            .field("nvars", &self.nvars)
            .field("max_order", &self.max_order)
            .finish()
    }
}

fn enumerate(nvars: usize, degree: usize) -> Vec<Vec<u8>> {
    // monomials of exact degree, lexicographically descending in the first var
    fn rec(nvars: usize, rem: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() + 1 == nvars {
            prefix.push(rem as u8);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=rem).rev() {
            prefix.push(k as u8);
            rec(nvars, rem - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if nvars == 0 {
        if degree == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(nvars, degree, &mut Vec::new(), &mut out);
    out
}

impl JetSpace {
    fn build(nvars: usize, max_order: usize) -> Self {
        let mut exps = Vec::new();
        let mut size_upto = Vec::new();
        for d in 0..=max_order {
            exps.extend(enumerate(nvars, d));
            size_upto.push(exps.len());
        }
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let deg = |e: &Vec<u8>| e.iter().map(|&x| x as usize).sum::<usize>();
        let mut pairs = Vec::new();
        for (ia, ea) in exps.iter().enumerate() {
            for (ib, eb) in exps.iter().enumerate() {
                if deg(ea) + deg(eb) > max_order {
                    continue;
                }
                let ec: Vec<u8> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                pairs.push((ia as u32, ib as u32, index[&ec] as u32, deg(&ec)));
            }
        }
        pairs.retain(|p| p.0 != 0 && p.1 != 0);
        pairs.sort_by_key(|p| (p.2, p.0));
        let mut starts = vec![0u32; exps.len() + 1];
        for p in &pairs {
            starts[p.2 as usize + 1] += 1;
        }
        for i in 0..exps.len() {
            starts[i + 1] += starts[i];
        }
        let inner = pairs.iter().map(|p| (p.0 as u16, p.1 as u16)).collect();
        let mut deriv = vec![Vec::new(); nvars];
        for (v, dv) in deriv.iter_mut().enumerate() {
            for e in &exps {
                if deg(e) == max_order {
                    dv.push((0, 0.0));
                    continue;
                }
                let mut up = e.clone();
                up[v] += 1;
                dv.push((index[&up] as u32, (e[v] + 1) as f64));
            }
        }
        JetSpace { nvars, max_order, exps, size_upto, inner, starts, deriv, index }
    }

    /// Shared space for `nvars` variables up to `max_order`.
    pub fn get(nvars: usize, max_order: usize) -> &'static JetSpace {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), &'static JetSpace>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet space cache poisoned");
        guard
            .entry((nvars, max_order))
            .or_insert_with(|| Box::leak(Box::new(JetSpace::build(nvars, max_order))))
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Number of coefficients of a jet of the given order.
    pub fn size(&self, order: usize) -> usize {
        self.size_upto[order]
    }

    pub fn exponent(&self, idx: usize) -> &[u8] {
        &self.exps[idx]
    }

    pub fn index_of(&self, exponent: &[u8]) -> Option<usize> {
        self.index.get(exponent).copied()
    }

    pub fn constant(&'static self, value: f64, order: usize) -> Jet {
        let mut c = vec![0.0; self.size(order)];
        c[0] = value;
        Jet { sp: self, order: order as u8, c }
    }

    pub fn zero(&'static self, order: usize) -> Jet {
        self.constant(0.0, order)
    }

    /// The coordinate function `p_var + δ_var`.
    pub fn variable(&'static self, var: usize, value: f64, order: usize) -> Jet {
        let mut j = self.constant(value, order);
        if order >= 1 {
            let mut e = vec![0u8; self.nvars];
            e[var] = 1;
            j.c[self.index[&e]] = 1.0;
        }
        j
    }

    pub fn from_coeffs(&'static self, order: usize, c: Vec<f64>) -> Jet {
        assert_eq!(c.len(), self.size(order), "coefficient count does not match order");
        Jet { sp: self, order: order as u8, c }
    }
}

// out[..] += s * x * y over the first `len` coefficients; all slices hold at least `len`.
#[inline]
fn mul_acc(sp: &JetSpace, order: usize, s: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
    let len = sp.size_upto[order];
    let (x, y, out) = (&x[..len], &y[..len], &mut out[..len]);
    let (x0, y0) = (s * x[0], s * y[0]);
    for k in 0..len {
        out[k] += x0 * y[k] + y0 * x[k];
    }
    out[0] -= x0 * y[0];
    for ic in 1..len {
        let group = &sp.inner[sp.starts[ic] as usize..sp.starts[ic + 1] as usize];
        let mut acc = 0.0;
        for &(ia, ib) in group {
            // SAFETY: factors of a coefficient below len have indices below len
            acc += unsafe { x.get_unchecked(ia as usize) * y.get_unchecked(ib as usize) };
        }
        out[ic] += s * acc;
    }
}

/// Truncated Taylor series in the variables of its [`JetSpace`].
#[derive(Clone)]
pub struct Jet {
    sp: &'static JetSpace,
    order: u8,
    c: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Jet(order={}, {:?})", self.order, self.c)
    }
}

impl Jet {
    pub fn space(&self) -> &'static JetSpace {
        self.sp
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Taylor coefficient for an exponent, or 0 beyond the stored order.
    pub fn coeff(&self, exponent: &[u8]) -> f64 {
        match self.sp.index_of(exponent) {
            Some(i) if i < self.c.len() => self.c[i],
            _ => 0.0,
        }
    }

    /// Partial derivative `∂^α f(p)` (coefficient times α!).
    pub fn partial(&self, exponent: &[u8]) -> f64 {
        let fact: f64 = exponent.iter().map(|&k| (1..=k as u32).product::<u32>() as f64).product();
        self.coeff(exponent) * fact
    }

    pub fn truncate(&self, order: usize) -> Jet {
        let order = order.min(self.order());
        Jet { sp: self.sp, order: order as u8, c: self.c[..self.sp.size(order)].to_vec() }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { sp: self.sp, order: self.order, c: self.c.iter().map(|x| x * s).collect() }
    }

    pub fn add_constant(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.c[0] += s;
        out
    }

    /// `self += s * other`, truncating to the lower order.
    pub fn axpy(&mut self, s: f64, other: &Jet) {
        if other.order < self.order {
            self.order = other.order;
            self.c.truncate(other.c.len());
        }
        for (a, b) in self.c.iter_mut().zip(&other.c) {
            *a += s * b;
        }
    }

    /// `self += s * a * b`, truncating to the lowest order involved.
    pub fn fma(&mut self, s: f64, a: &Jet, b: &Jet) {
        let order = self.order.min(a.order).min(b.order);
        if order < self.order {
            self.order = order;
            self.c.truncate(self.sp.size(order as usize));
        }
        mul_acc(self.sp, order as usize, s, &a.c, &b.c, &mut self.c);
    }

    /// `Σ_i v_i ∂f/∂x_i`, one order below `f` and at most the order of `v`.
    pub fn directional(v: &[Jet], f: &Jet) -> Jet {
        let sp = f.sp;
        if f.order == 0 {
            return Jet { sp, order: 0, c: vec![f64::NAN] };
        }
        let order = v.iter().map(|x| x.order).min().unwrap_or(0).min(f.order - 1) as usize;
        let size = sp.size(order);
        let mut out = vec![0.0; size];
        let mut df = vec![0.0; size];
        for (var, vi) in v.iter().enumerate() {
            let table = &sp.deriv[var];
            for (k, d) in df.iter_mut().enumerate() {
                let (src, fac) = table[k];
                *d = f.c[src as usize] * fac;
            }
            mul_acc(sp, order, 1.0, &vi.c, &df, &mut out);
        }
        Jet { sp, order: order as u8, c: out }
    }

    /// Value of `Σ_i v_i ∂f/∂x_i` at the base point.
    pub fn directional_value(v: &[Jet], f: &Jet) -> f64 {
        if f.order == 0 {
            return f64::NAN;
        }
        v.iter().enumerate().map(|(i, vi)| vi.c[0] * f.c[1 + i]).sum()
    }

    /// `∂f/∂x_var`; the result has one order less.
    pub fn deriv(&self, var: usize) -> Jet {
        if self.order == 0 {
            return Jet { sp: self.sp, order: 0, c: vec![f64::NAN] };
        }
        let order = self.order() - 1;
        let n = self.sp.size(order);
        let table = &self.sp.deriv[var];
        let c = (0..n)
            .map(|i| {
                let (src, fac) = table[i];
                self.c[src as usize] * fac
            })
            .collect();
        Jet { sp: self.sp, order: order as u8, c }
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|x| x.is_finite())
    }

    /// Applies a univariate function given its derivatives at the value:
    /// `g(f) = Σ g^(k)(f0)/k! (f - f0)^k`.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        let order = self.order();
        let mut dx = self.clone();
        dx.c[0] = 0.0;
        let mut out = self.sp.constant(derivs[0], order);
        let mut pow = self.sp.constant(1.0, order);
        let mut fact = 1.0;
        for (k, dk) in derivs.iter().enumerate().skip(1).take(order) {
            pow = &pow * &dx;
            fact *= k as f64;
            out.axpy(dk / fact, &pow);
        }
        out
    }

    pub fn recip(&self) -> Jet {
        let x = self.value();
        let mut d = Vec::with_capacity(self.order() + 1);
        let mut v = 1.0 / x;
        let mut coef = 1.0;
        for k in 0..=self.order() {
            d.push(coef * v);
            v /= x;
            coef *= -((k + 1) as f64);
        }
        self.compose(&d)
    }

    pub fn sqrt(&self) -> Jet {
        let x = self.value();
        let mut d = Vec::with_capacity(self.order() + 1);
        let mut coef = 1.0;
        let mut pw = 0.5;
        for _ in 0..=self.order() {
            d.push(coef * x.powf(pw));
            coef *= pw;
            pw -= 1.0;
        }
        self.compose(&d)
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose(&vec![e; self.order() + 1])
    }

    pub fn powi(&self, k: u32) -> Jet {
        let mut out = self.sp.constant(1.0, self.order());
        for _ in 0..k {
            out = &out * self;
        }
        out
    }
}

impl<'a> Mul for &'a Jet {
    type Output = Jet;
    fn mul(self, rhs: &'a Jet) -> Jet {
        debug_assert!(std::ptr::eq(self.sp, rhs.sp), "jets from different spaces");
        let order = self.order.min(rhs.order) as usize;
        let sp = self.sp;
        let mut c = vec![0.0; sp.size(order)];
        mul_acc(sp, order, 1.0, &self.c, &rhs.c, &mut c);
        Jet { sp, order: order as u8, c }
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl<'a> Add for &'a Jet {
    type Output = Jet;
    fn add(self, rhs: &'a Jet) -> Jet {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl<'a> Sub for &'a Jet {
    type Output = Jet;
    fn sub(self, rhs: &'a Jet) -> Jet {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&Jet> for Jet {
    fn sub_assign(&mut self, rhs: &Jet) {
        self.axpy(-1.0, rhs);
    }
}

/// Sum of products `Σ a_k b_k`.
pub fn dot(a: &[Jet], b: &[Jet]) -> Jet {
    let mut acc = &a[0] * &b[0];
    for (x, y) in a.iter().zip(b).skip(1) {
        acc.fma(1.0, x, y);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_sizes() {
        let sp = JetSpace::get(5, 3);
        assert_eq!(sp.size(0), 1);
        assert_eq!(sp.size(1), 6);
        assert_eq!(sp.size(3), 56);
        assert_eq!(JetSpace::get(5, 4).size(4), 126);
    }

    #[test]
    fn product_matches_closed_form() {
        // f = (1 + x + 2y)^3 around (x, y) = (0.3, -0.1)
        let sp = JetSpace::get(2, 4);
        let x = sp.variable(0, 0.3, 4);
        let y = sp.variable(1, -0.1, 4);
        let base = (&x + &y.scale(2.0)).add_constant(1.0);
        let f = base.powi(3);
        let v: f64 = 1.0 + 0.3 - 0.2;
        assert!((f.value() - v.powi(3)).abs() < 1e-14);
        assert!((f.partial(&[1, 0]) - 3.0 * v * v).abs() < 1e-13);
        assert!((f.partial(&[0, 2]) - 24.0 * v).abs() < 1e-12);
        assert!((f.partial(&[1, 2]) - 24.0).abs() < 1e-12);
        assert_eq!(f.partial(&[2, 2]), 0.0);
    }

    #[test]
    fn fourth_derivative_of_square_is_exact() {
        let sp = JetSpace::get(3, 4);
        let x = sp.variable(0, 0.7, 4);
        let f = (&x * &x).powi(2); // x^4
        assert_eq!(f.partial(&[4, 0, 0]), 24.0);
        assert_eq!(f.partial(&[3, 0, 0]), 24.0 * 0.7);
    }

    #[test]
    fn transcendental_compositions() {
        let sp = JetSpace::get(1, 4);
        let x = sp.variable(0, 0.4, 4);
        let e = x.exp();
        for k in 0..=4u8 {
            assert!((e.partial(&[k]) - 0.4f64.exp()).abs() < 1e-13);
        }
        let r = x.recip();
        // d^3/dx^3 1/x = -6/x^4
        assert!((r.partial(&[3]) + 6.0 / 0.4f64.powi(4)).abs() < 1e-9);
        let s = x.sqrt();
        // d^2/dx^2 sqrt x = -1/4 x^{-3/2}
        assert!((s.partial(&[2]) + 0.25 * 0.4f64.powf(-1.5)).abs() < 1e-12);
        let one = &r * &x;
        assert!((one.value() - 1.0).abs() < 1e-15);
        for k in 1..=4u8 {
            assert!(one.partial(&[k]).abs() < 1e-11);
        }
    }

    #[test]
    fn derivative_lowers_order() {
        let sp = JetSpace::get(2, 3);
        let x = sp.variable(0, 1.5, 3);
        let y = sp.variable(1, 2.0, 3);
        let f = &(&x * &x) * &y;
        let fx = f.deriv(0);
        assert_eq!(fx.order(), 2);
        assert!((fx.value() - 2.0 * 1.5 * 2.0).abs() < 1e-14);
        assert!((fx.partial(&[1, 1]) - 2.0).abs() < 1e-14);
    }
}
