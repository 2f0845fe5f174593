//! Charted strictly pseudoconvex pseudohermitian models.
//!
//! Every model exposes, on each chart, jets of the ambient embedding, of the
//! contact form `θ`, of `dθ`, and of the complex structure `J` (as a chart
//! matrix valid on `H = ker θ`). Everything downstream is computed from these.

use rand::Rng;
use rand_distr_normal::standard_normal;

use crate::error::{CrError, Result};
use crate::jet::{Jet, JetSpace};
use crate::poly::ScalarFieldSpec;

/// Highest jet order any pipeline stage requests.
pub const MAX_JET_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseKind {
    /// `S^{2n+1} ⊂ C^{n+1}` with `θ = Σ (x_j dy_j - y_j dx_j)`.
    Sphere,
    /// Heisenberg group with `θ = dt + Σ (x_j dy_j - y_j dx_j)`.
    Heisenberg,
}

#[derive(Clone, Debug)]
pub struct Chart {
    pub name: String,
    /// Nominal coordinate box; sampling stays well inside it.
    pub domain: Vec<(f64, f64)>,
}

/// A point given by chart index and chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    pub chart: usize,
    pub coords: Vec<f64>,
}

/// Jets of the model data at a chart point. `ambient` carries one order more
/// than the form data.
#[derive(Clone, Debug)]
pub struct ModelJets {
    pub ambient: Vec<Jet>,
    pub theta: Vec<Jet>,
    pub dtheta: Vec<Vec<Jet>>,
    /// `(Jv)^i = Σ_k jmat[i][k] v^k` for horizontal `v`.
    pub jmat: Vec<Vec<Jet>>,
}

#[derive(Clone, Debug)]
pub struct ManifoldModel {
    n: usize,
    base: BaseKind,
    label: String,
    compact: bool,
    charts: Vec<Chart>,
    ambient_names: Vec<String>,
    conformal: Option<ScalarFieldSpec>,
}

pub fn make_sphere(n: usize) -> Result<ManifoldModel> {
    if n == 0 {
        return Err(CrError::Dimension("sphere needs n >= 1".into()));
    }
    let dim = 2 * n + 1;
    let charts = ["north", "south"]
        .iter()
        .map(|s| Chart { name: format!("stereographic-{s}"), domain: vec![(-3.0, 3.0); dim] })
        .collect();
    let ambient_names = (1..=n + 1).flat_map(|j| [format!("x{j}"), format!("y{j}")]).collect();
    Ok(ManifoldModel {
        n,
        base: BaseKind::Sphere,
        label: format!("sphere(n={n})"),
        compact: true,
        charts,
        ambient_names,
        conformal: None,
    })
}

pub fn make_heisenberg(n: usize) -> Result<ManifoldModel> {
    if n == 0 {
        return Err(CrError::Dimension("heisenberg needs n >= 1".into()));
    }
    let dim = 2 * n + 1;
    let mut ambient_names: Vec<String> =
        (1..=n).flat_map(|j| [format!("x{j}"), format!("y{j}")]).collect();
    ambient_names.push("t".into());
    Ok(ManifoldModel {
        n,
        base: BaseKind::Heisenberg,
        label: format!("heisenberg(n={n})"),
        compact: false,
        charts: vec![Chart { name: "global".into(), domain: vec![(-2.0, 2.0); dim] }],
        ambient_names,
        conformal: None,
    })
}

/// Pseudo-conformal rescaling `θ̄ = e^{2u} θ`; `H` and `J` are unchanged.
pub fn make_conformal(base: &ManifoldModel, u: &ScalarFieldSpec) -> ManifoldModel {
    assert_eq!(u.nvars(), base.ambient_dim(), "u must be a polynomial in the ambient coordinates");
    let mut m = base.clone();
    let total = match &base.conformal {
        Some(prev) => prev.add(u),
        None => u.clone(),
    };
    m.label = format!("conformal[{}]({})", total.display(&base.ambient_names), label_root(base));
    m.conformal = Some(total);
    m
}

fn label_root(m: &ManifoldModel) -> String {
    match m.base {
        BaseKind::Sphere => format!("sphere(n={})", m.n),
        BaseKind::Heisenberg => format!("heisenberg(n={})", m.n),
    }
}

impl ManifoldModel {
    /// CR dimension (real dimension is `2n+1`).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_names.len()
    }

    pub fn ambient_names(&self) -> &[String] {
        &self.ambient_names
    }

    pub fn base(&self) -> BaseKind {
        self.base
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_compact(&self) -> bool {
        self.compact
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn conformal_factor(&self) -> Option<&ScalarFieldSpec> {
        self.conformal.as_ref()
    }

    /// Parses a polynomial in this model's ambient coordinates.
    pub fn field(&self, expr: &str) -> Result<ScalarFieldSpec> {
        ScalarFieldSpec::parse(expr, &self.ambient_names)
    }

    pub fn jet_space(&self) -> &'static JetSpace {
        JetSpace::get(self.dim(), MAX_JET_ORDER)
    }

    /// Ambient coordinates of a chart point.
    pub fn ambient_point(&self, p: &ChartPoint) -> Vec<f64> {
        match self.base {
            BaseKind::Heisenberg => p.coords.clone(),
            BaseKind::Sphere => {
                let s: f64 = p.coords.iter().map(|t| t * t).sum();
                let mut x: Vec<f64> = p.coords.iter().map(|t| 2.0 * t / (1.0 + s)).collect();
                let last = (s - 1.0) / (1.0 + s);
                x.push(if p.chart == 0 { last } else { -last });
                x
            }
        }
    }

    /// Chart point for an ambient point, picking the chart whose pole is
    /// farther away (so that `|t| <= 1` on spheres).
    pub fn to_chart(&self, x: &[f64]) -> ChartPoint {
        match self.base {
            BaseKind::Heisenberg => ChartPoint { chart: 0, coords: x.to_vec() },
            BaseKind::Sphere => {
                let last = *x.last().expect("empty ambient point");
                let (chart, denom) = if last <= 0.0 { (0, 1.0 - last) } else { (1, 1.0 + last) };
                ChartPoint { chart, coords: x[..x.len() - 1].iter().map(|v| v / denom).collect() }
            }
        }
    }

    /// Differential of the chart map `x ↦ t` at an ambient point, as a
    /// `dim × ambient_dim` matrix (row-major).
    pub fn chart_differential(&self, x: &[f64], chart: usize) -> Vec<Vec<f64>> {
        let dim = self.dim();
        match self.base {
            BaseKind::Heisenberg => (0..dim)
                .map(|i| (0..dim).map(|k| if i == k { 1.0 } else { 0.0 }).collect())
                .collect(),
            BaseKind::Sphere => {
                let last = x[dim];
                let sign = if chart == 0 { -1.0 } else { 1.0 };
                let denom = 1.0 + sign * last;
                (0..dim)
                    .map(|i| {
                        let mut row = vec![0.0; dim + 1];
                        row[i] = 1.0 / denom;
                        row[dim] = -x[i] * sign / (denom * denom);
                        row
                    })
                    .collect()
            }
        }
    }

    /// Samples `count` points spread over the model.
    pub fn sample_points<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<ChartPoint> {
        (0..count)
            .map(|_| match self.base {
                BaseKind::Sphere => {
                    let mut x: Vec<f64> = (0..self.ambient_dim()).map(|_| standard_normal(rng)).collect();
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    x.iter_mut().for_each(|v| *v /= r);
                    self.to_chart(&x)
                }
                BaseKind::Heisenberg => {
                    ChartPoint { chart: 0, coords: (0..self.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect() }
                }
            })
            .collect()
    }

    /// Model jets of order `k` (ambient of order `k + 1`) at `p`.
    pub fn eval_jets(&self, p: &ChartPoint, k: usize) -> ModelJets {
        assert!(k < MAX_JET_ORDER, "requested jet order {k} too high");
        let sp = self.jet_space();
        let dim = self.dim();
        let t: Vec<Jet> = (0..dim).map(|i| sp.variable(i, p.coords[i], k + 1)).collect();
        let mut mj = match self.base {
            BaseKind::Sphere => sphere_jets(&t, p.chart, k),
            BaseKind::Heisenberg => heisenberg_jets(&t, self.n, k),
        };
        if let Some(u) = &self.conformal {
            apply_conformal(&mut mj, u, k);
        }
        mj
    }
}

fn sphere_jets(t: &[Jet], chart: usize, k: usize) -> ModelJets {
    let dim = t.len();
    let sp = t[0].space();
    let mut s = sp.zero(k + 1);
    for ti in t {
        s += &(ti * ti);
    }
    let inv = s.add_constant(1.0).recip();
    let mut ambient: Vec<Jet> = t.iter().map(|ti| (ti * &inv).scale(2.0)).collect();
    let last = &s.add_constant(-1.0) * &inv;
    ambient.push(if chart == 0 { last } else { last.scale(-1.0) });
    let nc = ambient.len() / 2;
    // d[m][i] = ∂_i X^m
    let d: Vec<Vec<Jet>> = ambient.iter().map(|xm| (0..dim).map(|i| xm.deriv(i)).collect()).collect();
    let theta: Vec<Jet> = (0..dim)
        .map(|i| {
            let mut acc = sp.zero(k);
            for j in 0..nc {
                acc.fma(1.0, &ambient[2 * j], &d[2 * j + 1][i]);
                acc.fma(-1.0, &ambient[2 * j + 1], &d[2 * j][i]);
            }
            acc
        })
        .collect();
    let mut dtheta = vec![vec![sp.zero(k); dim]; dim];
    for i in 0..dim {
        for l in (i + 1)..dim {
            let mut acc = sp.zero(k);
            for j in 0..nc {
                acc.fma(1.0, &d[2 * j][i], &d[2 * j + 1][l]);
                acc.fma(-1.0, &d[2 * j][l], &d[2 * j + 1][i]);
            }
            let acc = acc.scale(2.0);
            dtheta[l][i] = acc.scale(-1.0);
            dtheta[i][l] = acc;
        }
    }
    let mut lam2 = sp.zero(k);
    for dm in &d {
        lam2.fma(1.0, &dm[0], &dm[0]);
    }
    let c = lam2.recip().scale(-0.5);
    let jmat = dtheta.iter().map(|row| row.iter().map(|e| e * &c).collect()).collect();
    ModelJets { ambient, theta, dtheta, jmat }
}

fn heisenberg_jets(t: &[Jet], n: usize, k: usize) -> ModelJets {
    let dim = t.len();
    let sp = t[0].space();
    let ambient = t.to_vec();
    let tk: Vec<Jet> = t.iter().map(|x| x.truncate(k)).collect();
    let mut theta = vec![sp.zero(k); dim];
    let mut dtheta = vec![vec![sp.zero(k); dim]; dim];
    let mut jmat = vec![vec![sp.zero(k); dim]; dim];
    let tt = dim - 1;
    theta[tt] = sp.constant(1.0, k);
    for j in 0..n {
        let (xj, yj) = (2 * j, 2 * j + 1);
        theta[xj] = tk[yj].scale(-1.0);
        theta[yj] = tk[xj].clone();
        dtheta[xj][yj] = sp.constant(2.0, k);
        dtheta[yj][xj] = sp.constant(-2.0, k);
        // J ∂x = ∂y - x ∂t ;  J ∂y = -∂x - y ∂t
        jmat[yj][xj] = sp.constant(1.0, k);
        jmat[tt][xj] = tk[xj].scale(-1.0);
        jmat[xj][yj] = sp.constant(-1.0, k);
        jmat[tt][yj] = tk[yj].scale(-1.0);
    }
    ModelJets { ambient, theta, dtheta, jmat }
}

fn apply_conformal(mj: &mut ModelJets, u: &ScalarFieldSpec, k: usize) {
    if u.is_zero() {
        return;
    }
    let dim = mj.theta.len();
    let uj = u.jet(&mj.ambient);
    let du: Vec<Jet> = (0..dim).map(|i| uj.deriv(i)).collect();
    let e = uj.truncate(k).scale(2.0).exp();
    let mut dth = mj.dtheta.clone();
    for i in 0..dim {
        for l in 0..dim {
            let mut w = mj.dtheta[i][l].clone();
            w.fma(2.0, &du[i], &mj.theta[l]);
            w.fma(-2.0, &du[l], &mj.theta[i]);
            dth[i][l] = &e * &w;
        }
    }
    mj.dtheta = dth;
    mj.theta = mj.theta.iter().map(|th| &e * th).collect();
}

/// Box–Muller normal deviates without pulling in a distributions crate.
mod rand_distr_normal {
    use rand::Rng;

    pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
        loop {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            if u1 > f64::MIN_POSITIVE {
                return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            }
        }
    }
}

/// Orthonormal (chart-Euclidean) basis of `ker θ` at the point.
fn horizontal_basis(theta: &[f64]) -> Vec<Vec<f64>> {
    let dim = theta.len();
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nrm: Vec<f64> = theta.iter().map(|v| v / norm).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..dim {
        let mut v: Vec<f64> = (0..dim).map(|k| if k == i { 1.0 } else { 0.0 }).collect();
        for _ in 0..2 {
            let d: f64 = v.iter().zip(&nrm).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(&nrm).for_each(|(a, b)| *a -= d * b);
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= d * c);
            }
        }
        let l = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if l > 0.3 && basis.len() < dim - 1 {
            v.iter_mut().for_each(|a| *a /= l);
            basis.push(v);
        }
    }
    basis
}

fn values(m: &[Vec<Jet>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(Jet::value).collect()).collect()
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Pointwise structural diagnostics of the model data.
#[derive(Clone, Debug)]
pub struct StructureDiagnostics {
    /// max |θ(Jv)| over a basis of H.
    pub theta_of_jh: f64,
    /// max |J(Jv) + v| over a basis of H.
    pub j_square: f64,
    /// Smallest eigenvalue of the Levi form on an orthonormal basis of H.
    pub levi_min_eig: f64,
    /// Asymmetry of the Levi form.
    pub levi_asym: f64,
}

pub fn structure_diagnostics(m: &ManifoldModel, p: &ChartPoint) -> StructureDiagnostics {
    let mj = m.eval_jets(p, 0);
    let theta: Vec<f64> = mj.theta.iter().map(Jet::value).collect();
    let dth = values(&mj.dtheta);
    let jm = values(&mj.jmat);
    let basis = horizontal_basis(&theta);
    let mut theta_of_jh = 0.0f64;
    let mut j_square = 0.0f64;
    for v in &basis {
        let jv = matvec(&jm, v);
        let th: f64 = jv.iter().zip(&theta).map(|(a, b)| a * b).sum();
        theta_of_jh = theta_of_jh.max(th.abs());
        let jjv = matvec(&jm, &jv);
        let r = jjv.iter().zip(v).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
        j_square = j_square.max(r);
    }
    let k = basis.len();
    let mut levi = nalgebra::DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        let ja = matvec(&jm, &basis[a]);
        for b in 0..k {
            let dv = matvec(&dth, &basis[b]);
            levi[(a, b)] = -0.5 * ja.iter().zip(&dv).map(|(x, y)| x * y).sum::<f64>();
        }
    }
    let levi_asym = (&levi - levi.transpose()).amax();
    let sym = (&levi + levi.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let levi_min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    StructureDiagnostics { theta_of_jh, j_square, levi_min_eig, levi_asym }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_bookkeeping() {
        let s = make_sphere(1).unwrap();
        assert_eq!(s.dim(), 3);
        assert_eq!(s.charts().len(), 2);
        assert!(s.is_compact());
        assert!(make_sphere(0).is_err());
        assert!(make_heisenberg(0).is_err());
        assert!(!make_heisenberg(1).unwrap().is_compact());
    }

    #[test]
    fn chart_roundtrip() {
        let s = make_sphere(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in s.sample_points(20, &mut rng) {
            let x = s.ambient_point(&p);
            let r: f64 = x.iter().map(|v| v * v).sum();
            assert!((r - 1.0).abs() < 1e-14);
            let q = s.to_chart(&x);
            assert_eq!(q.chart, p.chart);
            for (a, b) in q.coords.iter().zip(&p.coords) {
                assert!((a - b).abs() < 1e-13);
            }
            assert!(p.coords.iter().map(|t| t * t).sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn levi_form_positive_and_j_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s5 = make_sphere(2).unwrap();
        let conf = make_conformal(&make_sphere(1).unwrap(), &make_sphere(1).unwrap().field("0.05*x2").unwrap());
        let h = make_heisenberg(2).unwrap();
        for (m, count) in [(&s5, 100), (&conf, 50), (&h, 30)] {
            for p in m.sample_points(count, &mut rng) {
                let d = structure_diagnostics(m, &p);
                assert!(d.levi_min_eig > 0.0, "{}: {:?}", m.label(), d);
                assert!(d.j_square < 1e-10, "{}: {:?}", m.label(), d);
                assert!(d.theta_of_jh < 1e-10);
                assert!(d.levi_asym < 1e-10);
            }
        }
    }

    #[test]
    fn round_sphere_levi_form_at_pole() {
        // stereographic factor is exactly 2 at the chart origin
        let s5 = make_sphere(2).unwrap();
        let d = structure_diagnostics(&s5, &ChartPoint { chart: 0, coords: vec![0.0; 5] });
        assert!((d.levi_min_eig - 4.0).abs() < 1e-12);
    }

    #[test]
    fn conformal_zero_is_identical() {
        let s5 = make_sphere(2).unwrap();
        let c = make_conformal(&s5, &ScalarFieldSpec::zero(6));
        let p = ChartPoint { chart: 1, coords: vec![0.1, -0.2, 0.3, 0.05, -0.4] };
        let a = s5.eval_jets(&p, 3);
        let b = c.eval_jets(&p, 3);
        for (x, y) in a.theta.iter().zip(&b.theta) {
            assert_eq!(x.coeffs(), y.coeffs());
        }
        for (r, s) in a.dtheta.iter().zip(&b.dtheta) {
            for (x, y) in r.iter().zip(s) {
                assert_eq!(x.coeffs(), y.coeffs());
            }
        }
    }

    #[test]
    fn theta_matches_closed_form_on_ambient_vectors() {
        // at the north-chart origin the point is (0,...,0,-1) = z_{n+1} = -i;
        // the chart vector ∂_{x_{n+1}} maps to 2 e_{x_{n+1}}, so θ = 2·(x dy - y dx) = 2·(-y) = 2.
        let s3 = make_sphere(1).unwrap();
        let mj = s3.eval_jets(&ChartPoint { chart: 0, coords: vec![0.0; 3] }, 0);
        assert!((mj.theta[2].value() - 2.0).abs() < 1e-15);
        assert!(mj.theta[0].value().abs() < 1e-15);
    }
}
