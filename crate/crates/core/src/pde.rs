//! Galerkin discretization of the sub-Laplacian on polynomial bases: the
//! potential equation `Δφ = S - S̄`, `∫φ = 0`, and the first nonzero
//! eigenvalue.
//!
//! Bases are restrictions of ambient polynomials in a chosen set of
//! variables, orthonormalized against the grid inner product. One pass over
//! the grid accumulates the raw moments `⟨Δm_k, m_l⟩`, `⟨Δm_k, Δm_l⟩` and the
//! scalar-curvature moments; everything else is linear algebra on them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::calculus::covariant_jet;
use crate::connection::{PointGeometry, Scheme};
use crate::error::{CrError, Result};
use crate::integrate::{reduce, QuadratureGrid, TOL_INT};
use crate::jet::Jet;
use crate::manifold::ManifoldModel;
use crate::poly::ScalarFieldSpec;

/// Relative pivot below which a monomial is dropped as dependent.
const DROP_TOL: f64 = 1e-11;
/// Relative eigenvalue floor on the mean-zero subspace.
const RANK_TOL: f64 = 1e-12;
pub const TOL_SYMMETRY: f64 = 1e-8;

/// Ambient variables the conformal factor depends on, closed under
/// `x_j ↔ y_j`; `x1, y1` when there are none.
pub fn default_vars(m: &ManifoldModel) -> Vec<usize> {
    let used = m.conformal_factor().map(|u| u.variables_used()).unwrap_or_default();
    if used.is_empty() {
        return vec![0, 1];
    }
    let mut v: Vec<usize> = used.iter().flat_map(|&i| [i & !1, i | 1]).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn exponents(nv: usize, degree: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; nv]];
    for d in 1..=degree {
        let mut level = Vec::new();
        fn rec(nv: usize, rem: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
            if cur.len() + 1 == nv {
                cur.push(rem as u8);
                out.push(cur.clone());
                cur.pop();
                return;
            }
            for k in (0..=rem).rev() {
                cur.push(k as u8);
                rec(nv, rem - k, cur, out);
                cur.pop();
            }
        }
        rec(nv, d, &mut Vec::new(), &mut level);
        out.extend(level);
    }
    out
}

#[derive(Clone, Debug)]
pub struct GalerkinBasis {
    pub nvars: usize,
    pub vars: Vec<usize>,
    pub degree: usize,
    /// Exponents over `vars`, constant first.
    pub monomials: Vec<Vec<u8>>,
    /// Row `i` holds the monomial coefficients of basis function `b_i`.
    pub transform: DMatrix<f64>,
    /// `max |⟨b_i, b_j⟩ - δ_ij|` on the grid.
    pub gram_residual: f64,
    /// Monomials discarded as linearly dependent on the model.
    pub dropped: usize,
    pub volume: f64,
}

fn mono_values(x: &[f64], vars: &[usize], monos: &[Vec<u8>]) -> Vec<f64> {
    monos
        .iter()
        .map(|e| e.iter().zip(vars).map(|(&k, &v)| x[v].powi(k as i32)).product())
        .collect()
}

impl GalerkinBasis {
    /// Orthonormal basis from the monomials of degree `<= degree` in `vars`
    /// (indices into the model's ambient coordinates).
    pub fn build(m: &ManifoldModel, grid: &QuadratureGrid, vars: &[usize], degree: usize) -> Result<Self> {
        let nvars = m.ambient_names().len();
        if vars.is_empty() || vars.iter().any(|&v| v >= nvars) {
            return Err(CrError::DegenerateBasis(format!("invalid variable set {vars:?}")));
        }
        let all = exponents(vars.len(), degree);
        let k = all.len();
        let (sums, _) = reduce(grid, k * k, 0, |node, s, _| {
            let v = mono_values(&m.ambient_point(&node.point), vars, &all);
            for i in 0..k {
                for j in 0..k {
                    s[i * k + j] = v[i] * v[j];
                }
            }
            Ok(())
        })?;
        let g = DMatrix::from_row_slice(k, k, &sums);
        // Gram–Schmidt in the G inner product, twice per vector
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut kept = Vec::new();
        for i in 0..k {
            let mut v = DVector::from_fn(k, |r, _| if r == i { 1.0 } else { 0.0 });
            let n0 = g[(i, i)];
            for _ in 0..2 {
                for q in &rows {
                    let d = (q.transpose() * &g * &v)[(0, 0)];
                    v -= q * d;
                }
            }
            let nrm2 = (v.transpose() * &g * &v)[(0, 0)];
            if nrm2 <= DROP_TOL * n0 {
                if i == 0 {
                    return Err(CrError::DegenerateBasis("constant function has zero norm".into()));
                }
                continue;
            }
            rows.push(v / nrm2.sqrt());
            kept.push(i);
        }
        let nb = rows.len();
        let mut t = DMatrix::zeros(nb, k);
        for (r, v) in rows.iter().enumerate() {
            t.set_row(r, &v.transpose());
        }
        let gram = &t * &g * t.transpose();
        let gram_residual = (gram - DMatrix::identity(nb, nb)).abs().max();
        Ok(GalerkinBasis {
            nvars,
            vars: vars.to_vec(),
            degree,
            monomials: all,
            transform: t,
            gram_residual,
            dropped: k - nb,
            volume: g[(0, 0)],
        })
    }

    pub fn len(&self) -> usize {
        self.transform.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn monomial_field(&self, k: usize) -> ScalarFieldSpec {
        let mut e = vec![0u8; self.nvars];
        for (&p, &v) in self.monomials[k].iter().zip(&self.vars) {
            e[v] = p;
        }
        ScalarFieldSpec::from_terms(self.nvars, [(e, 1.0)])
    }

    /// `Σ c_i b_i` as a polynomial field.
    pub fn combination(&self, c: &[f64]) -> ScalarFieldSpec {
        let coef = self.transform.transpose() * DVector::from_column_slice(c);
        let mut out = ScalarFieldSpec::zero(self.nvars);
        for (k, &v) in coef.iter().enumerate() {
            if v != 0.0 {
                out = out.add(&self.monomial_field(k).scale(v));
            }
        }
        out
    }

    pub fn field(&self, i: usize) -> ScalarFieldSpec {
        let mut c = vec![0.0; self.len()];
        c[i] = 1.0;
        self.combination(&c)
    }
}

fn monomial_jets(amb: &[Jet], vars: &[usize], monos: &[Vec<u8>]) -> Vec<Jet> {
    let sp = amb[0].space();
    let order = amb[0].order();
    let maxd = monos.iter().flat_map(|e| e.iter().copied()).max().unwrap_or(0) as usize;
    let powers: Vec<Vec<Jet>> = vars
        .iter()
        .map(|&v| {
            let mut p = vec![sp.constant(1.0, order)];
            for k in 1..=maxd {
                let next = &p[k - 1] * &amb[v];
                p.push(next);
            }
            p
        })
        .collect();
    monos
        .iter()
        .map(|e| {
            let mut acc = sp.constant(1.0, order);
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    acc = &acc * &powers[i][k as usize];
                }
            }
            acc
        })
        .collect()
}

/// `Δu` at the point from a chart jet of order >= 2.
pub fn laplacian_value(g: &PointGeometry, u: &Jet) -> f64 {
    let m = 2 * g.n();
    let d: Vec<Jet> = (0..m).map(|a| g.frame.apply(a, u)).collect();
    let mut s = 0.0;
    for a in 0..m {
        s += Jet::directional_value(&g.frame.frame[a], &d[a]);
        for (c, dc) in d.iter().enumerate() {
            s -= g.conn.gamma[a][a][c].value() * dc.value();
        }
    }
    -s
}

/// Assembled operator and right-hand-side moments in an orthonormal basis.
#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    pub basis: GalerkinBasis,
    /// `L_ij = ⟨Δb_i, b_j⟩`.
    pub lap: DMatrix<f64>,
    /// `⟨Δb_i, Δb_j⟩`.
    pub lap2: DMatrix<f64>,
    pub symmetry_defect: f64,
    /// Scalar-curvature data, when assembled with `with_scalar`.
    pub scalar: Option<ScalarMoments>,
}

#[derive(Clone, Debug)]
pub struct ScalarMoments {
    /// `S̄ = ∫S / ∫1`.
    pub mean: f64,
    /// `∫(S - S̄)²`.
    pub variance: f64,
    /// `⟨S - S̄, b_j⟩`.
    pub rhs: DVector<f64>,
    /// `⟨S - S̄, Δb_j⟩`.
    pub rhs_lap: DVector<f64>,
}

impl GalerkinSystem {
    /// One grid pass; frame order 2 when `with_scalar` (for `S`), else 1.
    pub fn assemble(m: &ManifoldModel, grid: &QuadratureGrid, basis: GalerkinBasis, with_scalar: bool) -> Result<Self> {
        let monos = &basis.monomials;
        let vars = &basis.vars;
        let k = monos.len();
        let order = if with_scalar { 2 } else { 1 };
        let s_ref = if with_scalar {
            PointGeometry::compute(m, &grid.nodes[0].point, 2, Scheme::Exact)?.curv().scalar.value()
        } else {
            0.0
        };
        let width = 3 * k * k + 2 * k + 3;
        let (sums, _) = reduce(grid, width, 0, |node, s, _| {
            let g = PointGeometry::compute(m, &node.point, order, Scheme::Exact)?;
            let amb: Vec<Jet> = g.frame.model.ambient.iter().map(|x| x.truncate(2)).collect();
            let mj = monomial_jets(&amb, vars, monos);
            let v: Vec<f64> = mj.iter().map(Jet::value).collect();
            let lv: Vec<f64> = mj.iter().map(|u| laplacian_value(&g, u)).collect();
            let sc = if with_scalar { g.curv().scalar.value() - s_ref } else { 0.0 };
            for i in 0..k {
                for j in 0..k {
                    s[i * k + j] = lv[i] * v[j];
                    s[k * k + i * k + j] = lv[i] * lv[j];
                    s[2 * k * k + i * k + j] = v[i] * v[j];
                }
                s[3 * k * k + i] = lv[i] * sc;
                s[3 * k * k + k + i] = v[i] * sc;
            }
            s[width - 3] = sc;
            s[width - 2] = sc * sc;
            s[width - 1] = 1.0;
            Ok(())
        })?;
        let t = &basis.transform;
        let block = |o: usize| DMatrix::from_row_slice(k, k, &sums[o..o + k * k]);
        let lap = t * block(0) * t.transpose();
        let lap2 = t * block(k * k) * t.transpose();
        let gram_raw = block(2 * k * k);
        let symmetry_defect = (&lap - lap.transpose()).abs().max();
        let scalar = if with_scalar {
            let vol = sums[width - 1];
            let shift = sums[width - 3] / vol;
            let mean = s_ref + shift;
            let variance = sums[width - 2] - vol * shift * shift;
            let lap_s = DVector::from_column_slice(&sums[3 * k * k..3 * k * k + k]);
            let val_s = DVector::from_column_slice(&sums[3 * k * k + k..3 * k * k + 2 * k]);
            // ⟨m_k, 1⟩ and ⟨Δm_k, 1⟩ from the first monomial (the constant)
            let ones = gram_raw.column(0).into_owned();
            let lap_ones = block(0).column(0).into_owned();
            let rhs = t * (val_s - ones * shift);
            let rhs_lap = t * (lap_s - lap_ones * shift);
            Some(ScalarMoments { mean, variance, rhs, rhs_lap })
        } else {
            None
        };
        Ok(GalerkinSystem { basis, lap, lap2, symmetry_defect, scalar })
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetry_defect <= TOL_SYMMETRY * (1.0 + self.lap.abs().max())
    }

    fn deflated(&self) -> DMatrix<f64> {
        let s = (&self.lap + self.lap.transpose()) * 0.5;
        let nb = s.nrows();
        s.view((1, 1), (nb - 1, nb - 1)).into_owned()
    }

    /// Solves `⟨Δφ, b_j⟩ = rhs_j` for `φ = Σ c_i b_i` on the span of
    /// `b_1..` (constant mode deflated).
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let nb = self.basis.len();
        if nb < 2 {
            return Err(CrError::DegenerateBasis("basis has no mean-zero functions".into()));
        }
        let lt = self.lap.transpose().view((1, 1), (nb - 1, nb - 1)).into_owned();
        let svd = lt.svd(true, true);
        let top = svd.singular_values.max();
        let low = svd.singular_values.min();
        if low <= RANK_TOL * top {
            return Err(CrError::DegenerateBasis(format!("rank deficient sub-Laplacian (singular value {low:e})")));
        }
        let r = rhs.rows(1, nb - 1).into_owned();
        let x = svd.solve(&r, 0.0).map_err(|e| CrError::DegenerateBasis(e.into()))?;
        let mut c = DVector::zeros(nb);
        c.rows_mut(1, nb - 1).copy_from(&x);
        Ok(c)
    }

    /// Eigenvalues of `L` on the mean-zero subspace, ascending.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(self.deflated()).eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

#[derive(Clone, Debug)]
pub struct SchurPotential {
    pub coeffs: Vec<f64>,
    pub phi: ScalarFieldSpec,
    /// `‖Δφ - (S - S̄)‖` in the grid norm.
    pub residual_norm: f64,
    /// `‖S - S̄‖`.
    pub rhs_norm: f64,
    /// `∫φ dVol_θ`.
    pub mean: f64,
    pub s_mean: f64,
    pub volume: f64,
    pub system: GalerkinSystem,
}

/// Builds the basis, assembles with `S` and solves for `φ`.
pub fn solve_schur_potential(m: &ManifoldModel, grid: &QuadratureGrid, degree: usize) -> Result<SchurPotential> {
    let basis = GalerkinBasis::build(m, grid, &default_vars(m), degree)?;
    let sys = GalerkinSystem::assemble(m, grid, basis, true)?;
    potential_from(sys)
}

pub fn potential_from(sys: GalerkinSystem) -> Result<SchurPotential> {
    let sm = sys.scalar.as_ref().ok_or_else(|| CrError::Config("system assembled without S".into()))?;
    let c = sys.solve(&sm.rhs)?;
    // ∫(Δφ - σ)² = cᵀ L₂ c - 2 c·⟨σ, Δb⟩ + ∫σ²
    let r2 = (c.transpose() * &sys.lap2 * &c)[(0, 0)] - 2.0 * c.dot(&sm.rhs_lap) + sm.variance;
    let volume = sys.basis.volume;
    // b_0 = 1/√V, and ⟨b_i, 1⟩ = √V δ_i0
    let mean = c[0] * volume.sqrt();
    let phi = sys.basis.combination(c.as_slice());
    Ok(SchurPotential {
        coeffs: c.iter().copied().collect(),
        phi,
        residual_norm: r2.max(0.0).sqrt(),
        rhs_norm: sm.variance.max(0.0).sqrt(),
        mean,
        s_mean: sm.mean,
        volume,
        system: sys,
    })
}

impl SchurPotential {
    /// `|∫φ| <= tol_int`.
    pub fn mean_ok(&self) -> bool {
        self.mean.abs() <= TOL_INT
    }
}

/// `L_ij = ⟨Δb_i, b_j⟩`.
pub fn assemble_sublaplacian(m: &ManifoldModel, grid: &QuadratureGrid, basis: &GalerkinBasis) -> Result<GalerkinSystem> {
    GalerkinSystem::assemble(m, grid, basis.clone(), false)
}

/// Smallest nonzero eigenvalue of the Galerkin sub-Laplacian.
pub fn first_eigenvalue(m: &ManifoldModel, grid: &QuadratureGrid, degree: usize) -> Result<f64> {
    let basis = GalerkinBasis::build(m, grid, &default_vars(m), degree)?;
    let sys = GalerkinSystem::assemble(m, grid, basis, false)?;
    sys.spectrum().first().copied().ok_or_else(|| CrError::DegenerateBasis("empty spectrum".into()))
}

/// Grid-norm error of the Galerkin solution for `Δφ = Δψ`, with `ψ`
/// centred and the right-hand side formed through the jet pipeline.
pub fn manufactured_error(
    m: &ManifoldModel,
    grid: &QuadratureGrid,
    vars: &[usize],
    degree: usize,
    psi0: &ScalarFieldSpec,
) -> Result<f64> {
    let basis = GalerkinBasis::build(m, grid, vars, degree)?;
    let sys = assemble_sublaplacian(m, grid, &basis)?;
    let mean = crate::integrate::integrate_field(grid, m, psi0)? / grid.total_volume;
    let psi = psi0.sub(&ScalarFieldSpec::constant(psi0.nvars(), mean));
    let nb = basis.len();
    let fields: Vec<ScalarFieldSpec> = (0..nb).map(|i| basis.field(i)).collect();
    let (rhs, _) = reduce(grid, nb, 0, |node, s, _| {
        let g = PointGeometry::compute(m, &node.point, 1, Scheme::Exact)?;
        let l = covariant_jet(&g, &psi)?.lap();
        let x = m.ambient_point(&node.point);
        for (si, b) in s.iter_mut().zip(&fields) {
            *si = l * b.eval(&x);
        }
        Ok(())
    })?;
    let sol = sys.solve(&DVector::from_vec(rhs))?;
    let (err, _) = reduce(grid, 1, 0, |node, s, _| {
        let x = m.ambient_point(&node.point);
        let phi: f64 = sol.iter().zip(&fields).map(|(ci, b)| ci * b.eval(&x)).sum();
        s[0] = (phi - psi.eval(&x)).powi(2);
        Ok(())
    })?;
    Ok(err[0].max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::build_grid;
    use crate::manifold::{make_conformal, make_sphere};

    #[test]
    fn exponent_counts() {
        assert_eq!(exponents(2, 6).len(), 28);
        assert_eq!(exponents(6, 1).len(), 7);
        assert_eq!(exponents(1, 4), vec![vec![0], vec![1], vec![2], vec![3], vec![4]]);
    }

    #[test]
    fn round_sphere_linear_block() {
        let s5 = make_sphere(2).unwrap();
        let grid = build_grid(&s5, 6).unwrap();
        let basis = GalerkinBasis::build(&s5, &grid, &[0, 1, 2, 3, 4, 5], 1).unwrap();
        assert_eq!(basis.len(), 7);
        assert!(basis.gram_residual < 1e-10);
        let sys = assemble_sublaplacian(&s5, &grid, &basis).unwrap();
        assert!(sys.symmetry_defect < 1e-8, "{}", sys.symmetry_defect);
        assert!(sys.lap.row(0).abs().max() < 1e-9 && sys.lap.column(0).abs().max() < 1e-9);
        let lam = sys.lap[(1, 1)];
        assert!(lam > 0.0);
        let block = sys.lap.view((1, 1), (6, 6)).into_owned();
        assert!((block - DMatrix::identity(6, 6) * lam).abs().max() < 1e-6);
        // the larger nested basis keeps the same first eigenvalue
        let l1 = first_eigenvalue(&s5, &grid, 2).unwrap();
        assert!((l1 - lam).abs() < 1e-6, "{l1} {lam}");
    }

    #[test]
    fn round_sphere_potential_vanishes() {
        let s5 = make_sphere(2).unwrap();
        let grid = build_grid(&s5, 5).unwrap();
        let p = solve_schur_potential(&s5, &grid, 3).unwrap();
        assert!(p.residual_norm <= 1e-10, "{}", p.residual_norm);
        assert!(p.coeffs.iter().all(|c| c.abs() < 1e-10));
        assert!(p.mean_ok());
    }

    fn manufactured(m: &ManifoldModel, r: usize, degree: usize, expr: &str) -> f64 {
        let grid = build_grid(m, r).unwrap();
        manufactured_error(m, &grid, &[0, 1], degree, &m.field(expr).unwrap()).unwrap()
    }

    #[test]
    fn manufactured_solution_recovered() {
        let s3 = make_sphere(1).unwrap();
        let c3 = make_conformal(&s3, &s3.field("0.2*x1").unwrap());
        let e = manufactured(&c3, 12, 4, "x1*y1 + 0.3*x1^3 - 0.2*y1^2");
        assert!(e < 1e-8, "{e}");
        let s5 = make_sphere(2).unwrap();
        let c5 = make_conformal(&s5, &s5.field("0.1*x1").unwrap());
        let e = manufactured(&c5, 6, 3, "x1*y1 + 0.3*x1^3 - 0.2*y1^2");
        assert!(e < 1e-8, "{e}");
    }

    #[test]
    fn conformal_potential() {
        let s5 = make_sphere(2).unwrap();
        let c = make_conformal(&s5, &s5.field("0.1*x1").unwrap());
        assert_eq!(default_vars(&c), vec![0, 1]);
        let grid = build_grid(&c, 8).unwrap();
        let p = solve_schur_potential(&c, &grid, 4).unwrap();
        assert!(p.rhs_norm > 1e-2);
        assert!(p.residual_norm <= 1e-3 * p.rhs_norm, "{} {}", p.residual_norm, p.rhs_norm);
        assert!(p.mean_ok(), "{}", p.mean);
        let sys = &p.system;
        for i in 0..sys.lap.nrows() {
            assert!(sys.lap[(i, i)] >= -1e-8);
        }
    }

    #[test]
    fn spectrum_monotone_in_degree() {
        let s3 = make_sphere(1).unwrap();
        let c = make_conformal(&s3, &s3.field("0.2*x1").unwrap());
        let grid = build_grid(&c, 12).unwrap();
        let l = |d: usize| {
            let b = GalerkinBasis::build(&c, &grid, &[0, 1], d).unwrap();
            assemble_sublaplacian(&c, &grid, &b).unwrap().spectrum()[0]
        };
        let (l2, l4, l6) = (l(2), l(4), l(6));
        assert!(l4 <= l2 + 1e-9 && l6 <= l4 + 1e-9, "{l2} {l4} {l6}");
    }
}
