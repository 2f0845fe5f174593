//! Covariant derivatives of scalar fields in the adapted frame, the Hessian
//! decomposition, the CR-Paneitz one-form and operator, and pointwise
//! residuals of the Ricci, Bochner and divergence identities.
//!
//! Conventions: `∇²f(X,Y) = X(Yf) - (∇_X Y)f` and
//! `∇³f(X,Y,Z) = X(∇²f(Y,Z)) - ∇²f(∇_X Y, Z) - ∇²f(Y, ∇_X Z)`.

use crate::connection::{j_image, omega, xi_index, PointGeometry};
use crate::error::{CrError, Result};
use crate::jet::Jet;
use crate::poly::ScalarFieldSpec;

/// Covariant derivatives of `f` at a point, as jets where later stages need
/// to differentiate them again.
#[derive(Clone, Debug)]
pub struct ScalarJet {
    pub n: usize,
    /// `f` as a chart jet.
    pub f: Jet,
    /// `df(e_A)`, `A ∈ 0..=2n` with `ξ` last.
    pub df: Vec<Jet>,
    /// `∇²f(e_A, e_B)` over all slots.
    pub hess: Vec<Vec<Jet>>,
    /// `∇³f(e_a, e_b, e_c)` flattened as `(a*2n+b)*2n+c`; present when the
    /// Hessian has order >= 1.
    pub third: Option<Vec<Jet>>,
    /// `P_f(e_a)` when third derivatives are available.
    pub pform: Option<Vec<Jet>>,
    /// `Cf` when `P_f` has order >= 1.
    pub cf: Option<f64>,
}

impl ScalarJet {
    fn m(&self) -> usize {
        2 * self.n
    }

    pub fn value(&self) -> f64 {
        self.f.value()
    }

    /// Horizontal differential `df(e_a)`.
    pub fn grad(&self) -> Vec<f64> {
        self.df[..self.m()].iter().map(Jet::value).collect()
    }

    /// `df(ξ)`.
    pub fn df0(&self) -> f64 {
        self.df[xi_index(self.n)].value()
    }

    /// Horizontal Hessian `∇²f(e_a, e_b)`.
    pub fn hess_h(&self) -> Vec<Vec<f64>> {
        let m = self.m();
        (0..m).map(|a| (0..m).map(|b| self.hess[a][b].value()).collect()).collect()
    }

    /// `∇²f(ξ, e_a)`.
    pub fn hess_0a(&self) -> Vec<f64> {
        let xi = xi_index(self.n);
        (0..self.m()).map(|a| self.hess[xi][a].value()).collect()
    }

    /// `∇²f(e_a, ξ)`.
    pub fn hess_a0(&self) -> Vec<f64> {
        let xi = xi_index(self.n);
        (0..self.m()).map(|a| self.hess[a][xi].value()).collect()
    }

    /// `Δf = -Σ ∇²f(e_a, e_a)`.
    pub fn lap(&self) -> f64 {
        -(0..self.m()).map(|a| self.hess[a][a].value()).sum::<f64>()
    }

    pub fn grad_norm2(&self) -> f64 {
        self.grad().iter().map(|x| x * x).sum()
    }

    /// `∇³f(e_a, e_b, e_c)`.
    pub fn third_at(&self, a: usize, b: usize, c: usize) -> f64 {
        let m = self.m();
        self.third.as_ref().expect("third derivatives not computed")[(a * m + b) * m + c].value()
    }

    pub fn paneitz_p(&self) -> Option<Vec<f64>> {
        self.pform.as_ref().map(|p| p.iter().map(Jet::value).collect())
    }

    /// `J∇f` in frame components.
    pub fn j_grad(&self) -> Vec<f64> {
        let g = self.grad();
        let mut out = vec![0.0; self.m()];
        for (a, ga) in g.iter().enumerate() {
            let (ja, s) = j_image(self.n, a);
            out[ja] += s * ga;
        }
        out
    }
}

/// Differentiates `f` through the geometry; the depth reached follows the
/// frame order (`1`: Hessian, `2`: third derivatives and `P_f`, `3`: `Cf`).
pub fn covariant_jet(g: &PointGeometry, f: &ScalarFieldSpec) -> Result<ScalarJet> {
    let fj = f.jet(&g.frame.model.ambient);
    scalar_jet_from(g, fj)
}

/// As [`covariant_jet`] for a field given directly as a chart jet of order
/// `frame order + 1`.
pub fn scalar_jet_from(g: &PointGeometry, fj: Jet) -> Result<ScalarJet> {
    let n = g.n();
    let m = 2 * n;
    let xi = xi_index(n);
    if fj.order() < 2 {
        return Err(CrError::Config("scalar jet needs order >= 2".into()));
    }
    let fp = &g.frame;
    let gam = &g.conn.gamma;
    let df: Vec<Jet> = (0..=xi).map(|a| fp.apply(a, &fj)).collect();
    let ho = df[0].order() - 1;
    let dft: Vec<Jet> = df.iter().map(|x| x.truncate(ho)).collect();
    let hess: Vec<Vec<Jet>> = (0..=xi)
        .map(|a| {
            (0..=xi)
                .map(|b| {
                    let mut h = fp.apply(a, &df[b]);
                    if b < m {
                        for c in 0..m {
                            h.fma(-1.0, &gam[a][b][c], &dft[c]);
                        }
                    }
                    h
                })
                .collect()
        })
        .collect();
    let mut sj = ScalarJet { n, f: fj, df, hess, third: None, pform: None, cf: None };
    if ho >= 1 {
        let to = ho - 1;
        let ht: Vec<Vec<Jet>> = sj.hess.iter().map(|r| r.iter().map(|x| x.truncate(to)).collect()).collect();
        let mut third = Vec::with_capacity(m * m * m);
        for a in 0..m {
            let dh: Vec<Vec<Jet>> = (0..m).map(|b| (0..m).map(|c| fp.apply(a, &sj.hess[b][c])).collect()).collect();
            let ga: Vec<Vec<Jet>> = (0..m).map(|b| (0..m).map(|d| gam[a][b][d].truncate(to)).collect()).collect();
            for b in 0..m {
                for c in 0..m {
                    let mut t = dh[b][c].clone();
                    for d in 0..m {
                        t.fma(-1.0, &ga[b][d], &ht[d][c]);
                        t.fma(-1.0, &ga[c][d], &ht[b][d]);
                    }
                    third.push(t);
                }
            }
        }
        sj.third = Some(third);
        sj.pform = Some(paneitz_from(g, &sj));
        let po = to;
        if po >= 1 {
            let p = sj.pform.as_ref().expect("set above");
            let mut cf = 0.0;
            for a in 0..m {
                cf += fp.apply(a, &p[a]).value();
                for (b, pb) in p.iter().enumerate() {
                    cf -= gam[a][a][b].value() * pb.value();
                }
            }
            sj.cf = Some(cf);
        }
    }
    Ok(sj)
}

fn paneitz_from(g: &PointGeometry, sj: &ScalarJet) -> Vec<Jet> {
    let n = sj.n;
    let m = 2 * n;
    let t3 = sj.third.as_ref().expect("third derivatives");
    let to = t3[0].order();
    let a_t: Vec<Vec<Jet>> = g.conn.torsion.iter().map(|r| r.iter().map(|x| x.truncate(to)).collect()).collect();
    let df: Vec<Jet> = sj.df[..m].iter().map(|x| x.truncate(to)).collect();
    let idx = |a: usize, b: usize, c: usize| (a * m + b) * m + c;
    (0..m)
        .map(|x| {
            let (jx, sx) = j_image(n, x);
            let mut p = t3[idx(x, 0, 0)].clone();
            for b in 1..m {
                p += &t3[idx(x, b, b)];
            }
            for b in 0..m {
                let (jb, sb) = j_image(n, b);
                p.axpy(sx * sb, &t3[idx(jx, b, jb)]);
            }
            // 4n A(X, J∇f), J∇f = Σ_b df_b s_b e_{jb}
            for b in 0..m {
                let (jb, sb) = j_image(n, b);
                p.fma(4.0 * n as f64 * sb, &a_t[x][jb], &df[b]);
            }
            p
        })
        .collect()
}

/// Point values of the derivatives entering the integral identities. Only
/// the traced third derivatives are formed: since `∇g = ∇ω = 0`,
/// `Σ_b ∇³f(X,e_b,e_b) = X(Σ_b ∇²f(e_b,e_b))` and likewise for the `ω`-trace.
#[derive(Clone, Debug)]
pub struct ScalarValues {
    pub n: usize,
    pub f: f64,
    /// `df(e_A)` with `ξ` last.
    pub df: Vec<f64>,
    /// `∇²f(e_A, e_B)`.
    pub hess: Vec<Vec<f64>>,
    /// `P_f(e_a)`; empty below frame order 2.
    pub p: Vec<f64>,
    /// `Cf`, from frame order 3.
    pub cf: Option<f64>,
}

impl ScalarValues {
    pub fn grad(&self) -> &[f64] {
        &self.df[..2 * self.n]
    }

    pub fn df0(&self) -> f64 {
        self.df[xi_index(self.n)]
    }

    pub fn hess_h(&self) -> Vec<Vec<f64>> {
        let m = 2 * self.n;
        self.hess[..m].iter().map(|r| r[..m].to_vec()).collect()
    }

    pub fn lap(&self) -> f64 {
        -(0..2 * self.n).map(|a| self.hess[a][a]).sum::<f64>()
    }

    pub fn j_grad(&self) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.n];
        for (a, ga) in self.grad().iter().enumerate() {
            let (ja, s) = j_image(self.n, a);
            out[ja] += s * ga;
        }
        out
    }

    pub fn split(&self) -> HessianSplit {
        split_tensor(self.n, &self.hess_h(), self.lap(), self.df0())
    }

    /// `P_f(∇f)`.
    pub fn p_grad(&self) -> f64 {
        self.p.iter().zip(self.grad()).map(|(p, d)| p * d).sum()
    }
}

/// [`ScalarValues`] for a chart jet of order `frame order + 1`.
pub fn scalar_values(g: &PointGeometry, fj: &Jet) -> Result<ScalarValues> {
    let n = g.n();
    let m = 2 * n;
    let xi = xi_index(n);
    if fj.order() < 2 {
        return Err(CrError::Config("scalar jet needs order >= 2".into()));
    }
    let fp = &g.frame;
    let gam = &g.conn.gamma;
    let df: Vec<Jet> = (0..=xi).map(|a| fp.apply(a, fj)).collect();
    let dfv: Vec<f64> = df.iter().map(Jet::value).collect();
    let hess: Vec<Vec<f64>> = (0..=xi)
        .map(|a| {
            (0..=xi)
                .map(|b| {
                    let mut h = Jet::directional_value(&fp.frame[a], &df[b]);
                    if b < m {
                        for c in 0..m {
                            h -= gam[a][b][c].value() * dfv[c];
                        }
                    }
                    h
                })
                .collect()
        })
        .collect();
    let mut out = ScalarValues { n, f: fj.value(), df: dfv, hess, p: Vec::new(), cf: None };
    let ho = df[0].order() - 1;
    if ho == 0 {
        return Ok(out);
    }
    let dft: Vec<Jet> = df.iter().map(|x| x.truncate(ho)).collect();
    let sp = fj.space();
    // tr = Σ_b ∇²f(e_b,e_b), om = Σ_b ∇²f(e_b,Je_b)
    let mut tr = sp.zero(ho);
    let mut om = sp.zero(ho);
    for b in 0..m {
        let (jb, sb) = j_image(n, b);
        tr += &fp.apply(b, &df[b]);
        om.axpy(sb, &fp.apply(b, &df[jb]));
        for c in 0..m {
            tr.fma(-1.0, &gam[b][b][c], &dft[c]);
            om.fma(-sb, &gam[b][jb][c], &dft[c]);
        }
    }
    let to = ho - 1;
    let dfo: Vec<Jet> = df[..m].iter().map(|x| x.truncate(to)).collect();
    let a_t = &g.conn.torsion;
    let p: Vec<Jet> = (0..m)
        .map(|x| {
            let (jx, sx) = j_image(n, x);
            let mut p = fp.apply(x, &tr);
            p.axpy(sx, &fp.apply(jx, &om));
            for b in 0..m {
                let (jb, sb) = j_image(n, b);
                p.fma(4.0 * n as f64 * sb, &a_t[x][jb], &dfo[b]);
            }
            p
        })
        .collect();
    out.p = p.iter().map(Jet::value).collect();
    if to >= 1 {
        let mut cf = 0.0;
        for a in 0..m {
            cf += Jet::directional_value(&fp.frame[a], &p[a]);
            for (b, pb) in out.p.iter().enumerate() {
                cf -= gam[a][a][b].value() * pb;
            }
        }
        out.cf = Some(cf);
    }
    Ok(out)
}

/// The three invariant pieces of a horizontal Hessian.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianSplit {
    pub part_1: Vec<Vec<f64>>,
    pub part_m1: Vec<Vec<f64>>,
    pub part_10: Vec<Vec<f64>>,
}

/// `Ψ(JX, JY)` for `X = e_a`, `Y = e_b`.
pub fn upsilon(n: usize, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = 2 * n;
    (0..m)
        .map(|a| {
            let (ja, sa) = j_image(n, a);
            (0..m)
                .map(|b| {
                    let (jb, sb) = j_image(n, b);
                    sa * sb * h[ja][jb]
                })
                .collect()
        })
        .collect()
}

/// Splits a horizontal 2-tensor into `[1]`, `[-1]` and trace-free `[1]`
/// parts, given `Δf` and `df(ξ)` for the trace removal.
pub fn split_tensor(n: usize, h: &[Vec<f64>], lap: f64, df0: f64) -> HessianSplit {
    let m = 2 * n;
    let u = upsilon(n, h);
    let part_1: Vec<Vec<f64>> = (0..m).map(|a| (0..m).map(|b| 0.5 * (h[a][b] + u[a][b])).collect()).collect();
    let part_m1: Vec<Vec<f64>> = (0..m).map(|a| (0..m).map(|b| 0.5 * (h[a][b] - u[a][b])).collect()).collect();
    let part_10 = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| {
                    let d = if a == b { 1.0 } else { 0.0 };
                    part_1[a][b] + lap / (2.0 * n as f64) * d + df0 * omega(n, a, b)
                })
                .collect()
        })
        .collect();
    HessianSplit { part_1, part_m1, part_10 }
}

pub fn split_hessian(jet: &ScalarJet) -> HessianSplit {
    split_tensor(jet.n, &jet.hess_h(), jet.lap(), jet.df0())
}

pub fn norm2(t: &[Vec<f64>]) -> f64 {
    t.iter().flatten().map(|x| x * x).sum()
}

pub fn inner(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| x * y).sum()
}

/// `|part_10|² - |part_1|² + (Δf)²/2n + 2n df(ξ)²`.
pub fn hes10_residual(jet: &ScalarJet) -> f64 {
    let s = split_hessian(jet);
    let nf = jet.n as f64;
    (norm2(&s.part_10) - norm2(&s.part_1) + jet.lap().powi(2) / (2.0 * nf) + 2.0 * nf * jet.df0().powi(2)).abs()
}

/// `Σ ∇²f(e_a, J e_a) + 2n df(ξ)`.
pub fn xi1_residual(jet: &ScalarJet) -> f64 {
    let n = jet.n;
    let mut s = 0.0;
    for a in 0..2 * n {
        let (ja, sa) = j_image(n, a);
        s += sa * jet.hess[a][ja].value();
    }
    (s + 2.0 * n as f64 * jet.df0()).abs()
}

/// Maximal residuals of the four Ricci identities over frame slots.
pub fn ricci_identity_residuals(g: &PointGeometry, jet: &ScalarJet) -> [f64; 4] {
    let n = jet.n;
    let m = 2 * n;
    let xi = xi_index(n);
    let h = |a: usize, b: usize| jet.hess[a][b].value();
    let grad = jet.grad();
    let at = |a: usize, b: usize| g.conn.torsion[a][b].value();
    let a_grad = |x: usize| (0..m).map(|c| at(x, c) * grad[c]).sum::<f64>();
    let mut r = [0.0f64; 4];
    for a in 0..m {
        for b in 0..m {
            r[0] = r[0].max((h(a, b) - h(b, a) + 2.0 * omega(n, a, b) * jet.df0()).abs());
        }
        r[1] = r[1].max((h(a, xi) - h(xi, a) - a_grad(a)).abs());
    }
    if jet.third.is_some() {
        let riem = &g.curv().riem;
        let rg = |x: usize, y: usize, z: usize| (0..m).map(|d| riem[x][y][z][d].value() * grad[d]).sum::<f64>();
        for x in 0..m {
            for y in 0..m {
                for z in 0..m {
                    let t = |a, b, c| jet.third_at(a, b, c);
                    let r3 = t(x, y, z) - t(y, x, z) + rg(x, y, z) + 2.0 * omega(n, x, y) * h(xi, z);
                    let rhs4 = -rg(x, y, z) - rg(y, z, x) - 2.0 * omega(n, x, y) * h(xi, z)
                        - 2.0 * omega(n, y, z) * h(xi, x)
                        + 2.0 * omega(n, z, x) * h(xi, y)
                        + 2.0 * omega(n, z, x) * a_grad(y);
                    let r4 = t(x, y, z) - t(z, y, x) - rhs4;
                    r[2] = r[2].max(r3.abs());
                    r[3] = r[3].max(r4.abs());
                }
            }
        }
    }
    r
}

/// `P_f(e_a)`.
pub fn paneitz_oneform(g: &PointGeometry, f: &ScalarFieldSpec) -> Result<Vec<f64>> {
    let jet = covariant_jet(g, f)?;
    jet.paneitz_p().ok_or_else(|| CrError::Config("P_f needs frame order >= 2".into()))
}

/// `Cf` as the divergence of `P_f`.
pub fn paneitz_operator(g: &PointGeometry, f: &ScalarFieldSpec) -> Result<f64> {
    let jet = covariant_jet(g, f)?;
    jet.cf.ok_or_else(|| CrError::Config("Cf needs frame order 3".into()))
}

/// `Cf` assembled from fourth covariant derivatives and torsion terms:
/// `∇⁴f(e_a,e_a,e_b,e_b) + ∇⁴f(e_a,Je_a,e_b,Je_b) - 4n ∇*A(J∇f) - 4n g(∇²f, JA)`
/// with `∇*A(X) = -Σ(∇_{e_a}A)(e_a,X)` and `JA(X,Y) = -A(X,JY)`.
pub fn paneitz_operator_expanded(g: &PointGeometry, jet: &ScalarJet) -> Result<f64> {
    let n = jet.n;
    let m = 2 * n;
    let t3 = jet.third.as_ref().ok_or_else(|| CrError::Config("needs third derivatives".into()))?;
    if t3[0].order() < 1 {
        return Err(CrError::Config("Cf needs frame order 3".into()));
    }
    let fp = &g.frame;
    let gam = &g.conn.gamma;
    let idx = |a: usize, b: usize, c: usize| (a * m + b) * m + c;
    let t = |a, b, c| t3[idx(a, b, c)].value();
    let nabla4 = |a: usize, x: usize, y: usize, z: usize| {
        let mut v = fp.apply(a, &t3[idx(x, y, z)]).value();
        for d in 0..m {
            v -= gam[a][x][d].value() * t(d, y, z)
                + gam[a][y][d].value() * t(x, d, z)
                + gam[a][z][d].value() * t(x, y, d);
        }
        v
    };
    let mut c = 0.0;
    for a in 0..m {
        let (ja, sa) = j_image(n, a);
        for b in 0..m {
            let (jb, sb) = j_image(n, b);
            c += nabla4(a, a, b, b) + sa * sb * nabla4(a, ja, b, jb);
        }
    }
    let nf = n as f64;
    let jg = jet.j_grad();
    let mut div_a = vec![0.0; m];
    for a in 0..m {
        let da = g.cov_deriv2(a, &g.conn.torsion);
        for x in 0..m {
            div_a[x] += da[a][x].value();
        }
    }
    let nabla_star_a: f64 = (0..m).map(|x| -div_a[x] * jg[x]).sum();
    let hh = jet.hess_h();
    let mut gja = 0.0;
    for a in 0..m {
        for b in 0..m {
            let (jb, sb) = j_image(n, b);
            gja += hh[a][b] * (-sb * g.conn.torsion[a][jb].value());
        }
    }
    c += -4.0 * nf * nabla_star_a - 4.0 * nf * gja;
    Ok(c)
}

/// Residual of the pointwise Bochner formula; `gn2` is the jet of `|∇f|²`
/// built by [`grad_norm2_jet`].
pub fn bochner_terms(g: &PointGeometry, jet: &ScalarJet) -> Result<(f64, f64)> {
    let n = jet.n;
    let m = 2 * n;
    let xi = xi_index(n);
    if jet.hess[0][0].order() < 1 {
        return Err(CrError::Config("Bochner residual needs frame order >= 2".into()));
    }
    let fp = &g.frame;
    let gn2 = grad_norm2_jet(jet);
    let gj = scalar_jet_from(g, gn2)?;
    let lhs = -0.5 * gj.lap();
    let grad = jet.grad();
    let mut lapj = jet.hess[0][0].scale(-1.0);
    for a in 1..m {
        lapj -= &jet.hess[a][a];
    }
    let dlap: f64 = (0..m).map(|b| fp.apply(b, &lapj).value() * grad[b]).sum();
    let ric = &g.curv().ric;
    let jg = jet.j_grad();
    let mut rhs = -dlap + inner_vec(&grad, &grad, |a, b| ric[a][b].value());
    rhs += 2.0 * inner_vec(&jg, &grad, |a, b| g.conn.torsion[a][b].value());
    rhs += norm2(&jet.hess_h());
    rhs += 4.0 * (0..m).map(|b| jet.hess[xi][b].value() * jg[b]).sum::<f64>();
    Ok((lhs, rhs))
}

fn inner_vec(x: &[f64], y: &[f64], t: impl Fn(usize, usize) -> f64) -> f64 {
    let mut s = 0.0;
    for (a, xa) in x.iter().enumerate() {
        for (b, yb) in y.iter().enumerate() {
            s += xa * t(a, b) * yb;
        }
    }
    s
}

/// `|∇f|² = Σ df(e_a)²` as a chart jet, one order below `df`.
pub fn grad_norm2_jet(jet: &ScalarJet) -> Jet {
    let m = 2 * jet.n;
    let mut s = &jet.df[0] * &jet.df[0];
    for a in 1..m {
        s.fma(1.0, &jet.df[a], &jet.df[a]);
    }
    s
}

pub fn bochner_residual(g: &PointGeometry, f: &ScalarFieldSpec) -> Result<f64> {
    let jet = covariant_jet(g, f)?;
    let (l, r) = bochner_terms(g, &jet)?;
    Ok((l - r).abs())
}

/// Max over `Z = e_b` of `|∇²f(ξ,Z) - (1/2n)∇³f(Z,Je_a,e_a) + A(Z,∇f)|`.
pub fn grn3_residual_jet(g: &PointGeometry, jet: &ScalarJet) -> f64 {
    let n = jet.n;
    let m = 2 * n;
    let xi = xi_index(n);
    let grad = jet.grad();
    (0..m)
        .map(|z| {
            let mut t = 0.0;
            for a in 0..m {
                let (ja, sa) = j_image(n, a);
                t += sa * jet.third_at(z, ja, a);
            }
            let az: f64 = (0..m).map(|c| g.conn.torsion[z][c].value() * grad[c]).sum();
            (jet.hess[xi][z].value() - t / (2.0 * n as f64) + az).abs()
        })
        .fold(0.0, f64::max)
}

pub fn grn3_residual(g: &PointGeometry, f: &ScalarFieldSpec) -> Result<f64> {
    let jet = covariant_jet(g, f)?;
    if jet.third.is_none() {
        return Err(CrError::Config("needs frame order >= 2".into()));
    }
    Ok(grn3_residual_jet(g, &jet))
}

/// Divergence `Σ_a (∇_{e_a} B)(e_a, e_x)` of the trace-free `[1]` Hessian.
pub fn div_part10(g: &PointGeometry, jet: &ScalarJet) -> Vec<f64> {
    let n = jet.n;
    let m = 2 * n;
    let xi = xi_index(n);
    let nf = n as f64;
    let mut lapj = jet.hess[0][0].scale(-1.0);
    for a in 1..m {
        lapj -= &jet.hess[a][a];
    }
    let df0 = &jet.df[xi].truncate(lapj.order());
    let b: Vec<Vec<Jet>> = (0..m)
        .map(|a| {
            let (ja, sa) = j_image(n, a);
            (0..m)
                .map(|c| {
                    let (jc, sc) = j_image(n, c);
                    let mut v = (&jet.hess[a][c] + &jet.hess[ja][jc].scale(sa * sc)).scale(0.5);
                    if a == c {
                        v.axpy(1.0 / (2.0 * nf), &lapj);
                    }
                    let w = omega(n, a, c);
                    if w != 0.0 {
                        v.axpy(w, df0);
                    }
                    v
                })
                .collect()
        })
        .collect();
    let mut div = vec![0.0; m];
    for a in 0..m {
        let d = g.cov_deriv2(a, &b);
        for x in 0..m {
            div[x] += d[a][x].value();
        }
    }
    div
}

pub fn panz_residual_jet(g: &PointGeometry, jet: &ScalarJet) -> f64 {
    let n = jet.n as f64;
    let div = div_part10(g, jet);
    let p = jet.paneitz_p().expect("P_f needs frame order >= 2");
    div.iter().zip(&p).map(|(d, p)| (d - (n - 1.0) / (2.0 * n) * p).abs()).fold(0.0, f64::max)
}

pub fn panz_residual(g: &PointGeometry, f: &ScalarFieldSpec) -> Result<f64> {
    let jet = covariant_jet(g, f)?;
    if jet.third.is_none() {
        return Err(CrError::Config("needs frame order >= 2".into()));
    }
    Ok(panz_residual_jet(g, &jet))
}

/// Divergence of `D(X) = df(JX) df(ξ)` minus its closed form.
pub fn vert2_residual(g: &PointGeometry, jet: &ScalarJet) -> f64 {
    let n = jet.n;
    let m = 2 * n;
    let xi = xi_index(n);
    let o = jet.hess[0][0].order();
    let df0 = jet.df[xi].truncate(o);
    let d: Vec<Jet> = (0..m)
        .map(|x| {
            let (jx, s) = j_image(n, x);
            (&jet.df[jx].truncate(o) * &df0).scale(s)
        })
        .collect();
    let div = g.divergence1(&d).value();
    let jg = jet.j_grad();
    let grad = jet.grad();
    let mut trj = 0.0;
    for a in 0..m {
        let (ja, sa) = j_image(n, a);
        trj += sa * jet.hess[a][ja].value();
    }
    let hx: f64 = (0..m).map(|b| jet.hess[xi][b].value() * jg[b]).sum();
    let aj = inner_vec(&jg, &grad, |a, b| g.conn.torsion[a][b].value());
    (div - (trj * jet.df0() - hx - aj)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::Scheme;
    use crate::manifold::{make_conformal, make_heisenberg, make_sphere, ChartPoint, ManifoldModel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conformal_s5() -> ManifoldModel {
        let s5 = make_sphere(2).unwrap();
        make_conformal(&s5, &s5.field("0.1*x1").unwrap())
    }

    fn pt() -> ChartPoint {
        ChartPoint { chart: 0, coords: vec![0.25, -0.1, 0.3, 0.15, -0.35] }
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let m = conformal_s5();
        let g = PointGeometry::compute(&m, &pt(), 3, Scheme::Exact).unwrap();
        let j = covariant_jet(&g, &m.field("1").unwrap()).unwrap();
        assert!(j.df.iter().all(|x| x.value() == 0.0));
        assert!(j.hess.iter().flatten().all(|x| x.value() == 0.0));
        assert_eq!(j.lap(), 0.0);
        assert!(j.paneitz_p().unwrap().iter().all(|x| *x == 0.0));
        assert_eq!(j.cf, Some(0.0));
        assert_eq!(bochner_residual(&g, &m.field("1").unwrap()).unwrap(), 0.0);
        assert_eq!(grn3_residual(&g, &m.field("1").unwrap()).unwrap(), 0.0);
        assert_eq!(panz_residual(&g, &m.field("1").unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn heisenberg_laplacian_at_origin() {
        let h = make_heisenberg(1).unwrap();
        let g = PointGeometry::compute(&h, &ChartPoint { chart: 0, coords: vec![0.0; 3] }, 2, Scheme::Exact).unwrap();
        let j = covariant_jet(&g, &h.field("x1^2 + y1^2").unwrap()).unwrap();
        // frame at the origin is (∂x, ∂y) with unit Levi norm
        assert!((j.lap() + 4.0).abs() < 1e-12);
    }

    #[test]
    fn ricci_identities_and_xi1_on_battery() {
        let s5 = make_sphere(2).unwrap();
        let c = conformal_s5();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for m in [&s5, &c] {
            for p in m.sample_points(6, &mut rng) {
                let g = PointGeometry::compute(m, &p, 3, Scheme::Exact).unwrap();
                for e in ["x1", "x1*x2", "x1*x3", "x1^2-x2^2", "|z1|^2"] {
                    let j = covariant_jet(&g, &m.field(e).unwrap()).unwrap();
                    let r = ricci_identity_residuals(&g, &j);
                    assert!(r.iter().all(|x| *x < 1e-9), "{e}: {r:?}");
                    assert!(xi1_residual(&j) < 1e-9);
                    assert!(hes10_residual(&j) < 1e-9);
                    assert!(grn3_residual_jet(&g, &j) < 1e-9, "{e}");
                    assert!(panz_residual_jet(&g, &j) < 1e-9, "{e}: {}", panz_residual_jet(&g, &j));
                    assert!(vert2_residual(&g, &j) < 1e-9, "{e}");
                    let (l, r) = bochner_terms(&g, &j).unwrap();
                    assert!((l - r).abs() < 1e-9, "{e}: {l} {r}");
                    let cf = j.cf.unwrap();
                    let alt = paneitz_operator_expanded(&g, &j).unwrap();
                    assert!((cf - alt).abs() < 1e-8 * (1.0 + cf.abs()), "{e}: {cf} {alt}");
                }
            }
        }
    }

    #[test]
    fn traced_values_match_full_jets() {
        let c = conformal_s5();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for p in c.sample_points(5, &mut rng) {
            let g = PointGeometry::compute(&c, &p, 3, Scheme::Exact).unwrap();
            for e in ["x1", "x1*x2", "x1*x3+y2", "|z1|^2", "x1^3*y2"] {
                let f = c.field(e).unwrap();
                let full = covariant_jet(&g, &f).unwrap();
                let v = scalar_values(&g, &f.jet(&g.frame.model.ambient)).unwrap();
                for (a, b) in full.hess.iter().flatten().zip(v.hess.iter().flatten()) {
                    assert!((a.value() - b).abs() < 1e-12);
                }
                for (a, b) in full.paneitz_p().unwrap().iter().zip(&v.p) {
                    assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{e}: {a} {b}");
                }
                let (a, b) = (full.cf.unwrap(), v.cf.unwrap());
                assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{e}: {a} {b}");
                assert!((full.lap() - v.lap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pluriharmonic_kernel_on_round_sphere() {
        let s5 = make_sphere(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut big = 0.0f64;
        for p in s5.sample_points(10, &mut rng) {
            let g = PointGeometry::compute(&s5, &p, 3, Scheme::Exact).unwrap();
            let j = covariant_jet(&g, &s5.field("x1").unwrap()).unwrap();
            assert!(j.paneitz_p().unwrap().iter().all(|x| x.abs() < 1e-9));
            assert!(j.cf.unwrap().abs() < 1e-9);
            let q = covariant_jet(&g, &s5.field("|z1|^2").unwrap()).unwrap();
            big = big.max(q.paneitz_p().unwrap().iter().fold(0.0, |a, x| a.max(x.abs())));
        }
        assert!(big > 1e-3);
    }

    #[test]
    fn finite_difference_route_matches() {
        let c = conformal_s5();
        let e = PointGeometry::compute(&c, &pt(), 2, Scheme::Exact).unwrap();
        let f = c.field("x1*x2").unwrap();
        let a = covariant_jet(&e, &f).unwrap();
        let fd = PointGeometry::compute(&c, &pt(), 2, Scheme::Central4 { h: 1e-3 }).unwrap();
        let b = covariant_jet(&fd, &f).unwrap();
        let (pa, pb) = (a.paneitz_p().unwrap(), b.paneitz_p().unwrap());
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-7);
        }
        assert!(bochner_residual(&fd, &f).unwrap() < 1e-6);
    }

    #[test]
    fn fd_ricci_and_bochner_residuals_converge() {
        let c = conformal_s5();
        let f = c.field("x1").unwrap();
        let res = |h: f64| {
            let g = PointGeometry::compute(&c, &pt(), 2, Scheme::Central4 { h }).unwrap();
            let j = covariant_jet(&g, &f).unwrap();
            let r = ricci_identity_residuals(&g, &j);
            [r[2], r[3], grn3_residual_jet(&g, &j), bochner_terms(&g, &j).map(|(l, r)| (l - r).abs()).unwrap()]
        };
        let steps = [4e-3, 2e-3, 1e-3];
        let errs: Vec<[f64; 4]> = steps.iter().map(|&h| res(h)).collect();
        for k in 0..4 {
            let study = crate::connection::ConvergenceStudy::new(
                steps.to_vec(),
                errs.iter().map(|e| e[k]).collect(),
                1e-10,
            );
            assert!(study.passes(3.5), "{k}: {study:?}");
            assert!(errs[2][k] < 1e-6);
        }
    }

    #[test]
    fn hessian_split_examples() {
        let n = 2;
        let id: Vec<Vec<f64>> = (0..4).map(|a| (0..4).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect();
        let s = split_tensor(n, &id, -4.0, 0.0);
        assert!(norm2(&s.part_m1) == 0.0 && norm2(&s.part_10) == 0.0);
        let w: Vec<Vec<f64>> = (0..4).map(|a| (0..4).map(|b| omega(n, a, b)).collect()).collect();
        assert!(norm2(&split_tensor(n, &w, 0.0, 1.0).part_m1) == 0.0);
    }

    proptest! {
        #[test]
        fn split_is_orthogonal(v in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let n = 2;
            let h: Vec<Vec<f64>> = (0..4).map(|a| (0..4).map(|b| v[a * 4 + b] + v[b * 4 + a]).collect()).collect();
            let s = split_tensor(n, &h, 0.3, -0.2);
            prop_assert!((norm2(&s.part_1) + norm2(&s.part_m1) - norm2(&h)).abs() < 1e-12 * (1.0 + norm2(&h)));
            prop_assert!(inner(&s.part_1, &s.part_m1).abs() < 1e-12 * (1.0 + norm2(&h)));
            let u1 = upsilon(n, &s.part_1);
            let um = upsilon(n, &s.part_m1);
            for a in 0..4 {
                for b in 0..4 {
                    prop_assert!((s.part_1[a][b] + s.part_m1[a][b] - h[a][b]).abs() < 1e-12);
                    prop_assert_eq!(u1[a][b], s.part_1[a][b]);
                    prop_assert_eq!(um[a][b], -s.part_m1[a][b]);
                }
            }
        }

        #[test]
        fn laplacian_and_paneitz_are_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let m = conformal_s5();
            let g = PointGeometry::compute(&m, &pt(), 2, Scheme::Exact).unwrap();
            let f = m.field("x1*x2 + y1").unwrap();
            let h = m.field("|z1|^2 - x3").unwrap();
            let comb = f.scale(alpha).add(&h.scale(beta));
            let (jf, jh, jc) = (covariant_jet(&g, &f).unwrap(), covariant_jet(&g, &h).unwrap(), covariant_jet(&g, &comb).unwrap());
            prop_assert!((jc.lap() - alpha * jf.lap() - beta * jh.lap()).abs() < 1e-12 * (1.0 + jc.lap().abs()) * 10.0);
            let pf = covariant_jet(&g, &f.scale(alpha)).unwrap().paneitz_p().unwrap();
            for (x, y) in pf.iter().zip(jf.paneitz_p().unwrap()) {
                prop_assert!((x - alpha * y).abs() < 1e-12 * (1.0 + x.abs()) * 10.0);
            }
        }
    }
}
