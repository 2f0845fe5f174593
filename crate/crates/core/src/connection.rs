//! Adapted frames, the Tanaka–Webster connection, torsion and curvature.
//!
//! Frame indices: horizontal `a = 0..2n` with `e_{a+n} = J e_a` for `a < n`,
//! and the Reeb field at index [`xi_index`]`(n) = 2n`. In frame indices `J`
//! is the block matrix `[0 -I; I 0]` (see [`jf`]).
//!
//! The connection is obtained by solving the defining axioms (metric,
//! `∇J = 0`, `∇ξ = 0`, purely vertical horizontal torsion, symmetric
//! `T(ξ,·)`) as a constant-coefficient least-squares system in the structure
//! functions of the frame. Chart derivatives of everything come either from
//! exact jets ([`Scheme::Exact`]) or from 4th-order central differences of
//! the connection coefficients ([`Scheme::Central4`]).

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{CrError, Result};
use crate::jet::Jet;
use crate::manifold::{ChartPoint, ManifoldModel, ModelJets};

pub fn xi_index(n: usize) -> usize {
    2 * n
}

/// Frame matrix of `J`: `J e_b = Σ_c jf(n, c, b) e_c`.
pub fn jf(n: usize, c: usize, b: usize) -> f64 {
    if b < n && c == b + n {
        1.0
    } else if b >= n && b < 2 * n && c + n == b {
        -1.0
    } else {
        0.0
    }
}

/// The single nonzero entry of column `b` of [`jf`]: `J e_b = s e_j`.
pub fn j_image(n: usize, b: usize) -> (usize, f64) {
    if b < n {
        (b + n, 1.0)
    } else {
        (b - n, -1.0)
    }
}

/// `ω(e_a, e_b) = g(J e_a, e_b)`.
pub fn omega(n: usize, a: usize, b: usize) -> f64 {
    jf(n, b, a)
}

/// How chart derivatives of the connection are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scheme {
    Exact,
    /// 4th-order central differences with chart step `h`.
    Central4 { h: f64 },
}

/// Reeb field, adapted horizontal frame, coframe and structure functions as
/// chart jets at a point.
#[derive(Clone, Debug)]
pub struct AdaptedFramePack {
    pub n: usize,
    pub point: ChartPoint,
    pub order: usize,
    pub model: ModelJets,
    /// `frame[A][i]`: chart components of `e_A`.
    pub frame: Vec<Vec<Jet>>,
    /// `coframe[A][i]`: chart components of the dual coframe.
    pub coframe: Vec<Vec<Jet>>,
    /// `structure[A][B][C]` with `[e_A, e_B] = c_{AB}^C e_C`; order `order - 1`.
    pub structure: Vec<Vec<Vec<Jet>>>,
    /// Chart directions seeding the Gram–Schmidt steps.
    pub seeds: Vec<usize>,
}

impl AdaptedFramePack {
    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    /// `e_A(F) = Σ_i e_A^i ∂_i F`.
    pub fn apply(&self, a: usize, f: &Jet) -> Jet {
        Jet::directional(&self.frame[a], f)
    }
}

fn mat_vec(m: &[Vec<Jet>], v: &[Jet]) -> Vec<Jet> {
    m.iter().map(|row| crate::jet::dot(row, v)).collect()
}

/// Solves `B x = y` by Gaussian elimination with partial pivoting on values.
fn solve_jets(mut b: Vec<Vec<Jet>>, mut y: Vec<Jet>) -> Result<Vec<Jet>> {
    let n = y.len();
    let scale = b.iter().flatten().map(|j| j.value().abs()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| b[r][col].value().abs().total_cmp(&b[s][col].value().abs()))
            .expect("nonempty");
        let pv = b[piv][col].value().abs();
        if !(pv > 1e-12 * scale) {
            return Err(CrError::SingularLevi(pv));
        }
        b.swap(col, piv);
        y.swap(col, piv);
        let inv = b[col][col].recip();
        for r in (col + 1)..n {
            let f = &b[r][col] * &inv;
            for c in col..n {
                let t = &f * &b[col][c];
                b[r][c] -= &t;
            }
            let t = &f * &y[col];
            y[r] -= &t;
        }
    }
    let mut x = vec![y[0].space().zero(y[0].order()); n];
    for r in (0..n).rev() {
        let mut acc = y[r].clone();
        for c in (r + 1)..n {
            acc.fma(-1.0, &b[r][c], &x[c]);
        }
        x[r] = &acc * &b[r][r].recip();
    }
    Ok(x)
}

/// Builds the adapted frame with jets of the given order. `rotation`, when
/// given, is a `2n × 2n` orthogonal matrix commuting with `J` applied as
/// `e'_b = Σ_a Q[a][b] e_a`.
pub fn adapted_frame_with(
    m: &ManifoldModel,
    p: &ChartPoint,
    order: usize,
    rotation: Option<&[Vec<f64>]>,
) -> Result<AdaptedFramePack> {
    adapted_frame_seeded(m, p, order, rotation, None)
}

/// As [`adapted_frame_with`], optionally forcing the Gram–Schmidt seeds so
/// that nearby points share one smooth frame.
pub fn adapted_frame_seeded(
    m: &ManifoldModel,
    p: &ChartPoint,
    order: usize,
    rotation: Option<&[Vec<f64>]>,
    seeds: Option<&[usize]>,
) -> Result<AdaptedFramePack> {
    let n = m.n();
    let dim = m.dim();
    let mj = m.eval_jets(p, order);
    let sp = m.jet_space();
    // Reeb field: (dθ + θ⊗θ) ξ = θ.
    let b: Vec<Vec<Jet>> = (0..dim)
        .map(|k| (0..dim).map(|i| &mj.dtheta[k][i] + &(&mj.theta[k] * &mj.theta[i])).collect())
        .collect();
    let xi = solve_jets(b, mj.theta.clone())?;
    // J-invariant Gram–Schmidt on horizontal projections of chart vectors.
    // Seeds are chosen on values; jets follow the chosen seeds.
    let val = |v: &[Jet]| v.iter().map(Jet::value).collect::<Vec<f64>>();
    let th_v = val(&mj.theta);
    let xi_v = val(&xi);
    let dth_v: Vec<Vec<f64>> = mj.dtheta.iter().map(|r| val(r)).collect();
    let jm_v: Vec<Vec<f64>> = mj.jmat.iter().map(|r| val(r)).collect();
    let mv = |mat: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        mat.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    };
    let levi_v = |v: &[f64], w: &[f64]| -> f64 {
        let jv = mv(&jm_v, v);
        let dw = mv(&dth_v, w);
        -0.5 * jv.iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut lower: Vec<Vec<Jet>> = Vec::with_capacity(n);
    let mut upper: Vec<Vec<Jet>> = Vec::with_capacity(n);
    // covectors g(e, ·) of the frame built so far, in the order lower, upper
    let mut cov_lower: Vec<Vec<Jet>> = Vec::with_capacity(n);
    let mut cov_upper: Vec<Vec<Jet>> = Vec::with_capacity(n);
    let mut taken = vec![false; dim];
    let mut chosen = Vec::with_capacity(n);
    let candidate = |i: usize| -> Vec<f64> {
        (0..dim).map(|k| if k == i { 1.0 } else { 0.0 } - th_v[i] * xi_v[k]).collect()
    };
    while lower.len() < n {
        let prev: Vec<Vec<f64>> = lower.iter().chain(upper.iter()).map(|e| val(e)).collect();
        let mut best: Option<(usize, f64)> = None;
        for i in 0..dim {
            if taken[i] || seeds.is_some_and(|s| s[lower.len()] != i) {
                continue;
            }
            let w = candidate(i);
            let mut v = w.clone();
            for e in &prev {
                let c = levi_v(&w, e);
                for (vk, ek) in v.iter_mut().zip(e) {
                    *vk -= c * ek;
                }
            }
            let ratio = levi_v(&v, &v) / levi_v(&w, &w);
            if ratio > 0.05 {
                best = Some((i, ratio));
                break;
            }
            if best.map_or(true, |b| ratio > b.1) {
                best = Some((i, ratio));
            }
        }
        let (i, ratio) = best.ok_or(CrError::SingularLevi(0.0))?;
        if !(ratio > 1e-12) {
            return Err(CrError::SingularLevi(ratio));
        }
        taken[i] = true;
        chosen.push(i);
        let w: Vec<Jet> = (0..dim)
            .map(|k| {
                let mut x = (&mj.theta[i] * &xi[k]).scale(-1.0);
                if k == i {
                    x = x.add_constant(1.0);
                }
                x
            })
            .collect();
        let mut v = w.clone();
        for (e, ce) in lower.iter().zip(&cov_lower).chain(upper.iter().zip(&cov_upper)) {
            let c = crate::jet::dot(ce, &w);
            for (vk, ek) in v.iter_mut().zip(e) {
                vk.fma(-1.0, &c, ek);
            }
        }
        let jv = mat_vec(&mj.jmat, &v);
        let dv = mat_vec(&mj.dtheta, &v);
        let nv = crate::jet::dot(&jv, &dv).scale(-0.5);
        if !(nv.value() > 0.0) {
            return Err(CrError::SingularLevi(nv.value()));
        }
        let norm = nv.sqrt().recip();
        let e: Vec<Jet> = v.iter().map(|x| x * &norm).collect();
        let je: Vec<Jet> = jv.iter().map(|x| x * &norm).collect();
        // g(e, ·) = -½ dθ(Je, ·) = ½ (dθ Je);  g(Je, ·) = ½ dθ(e, ·) = -½ (dθ e)
        let ce: Vec<Jet> = mat_vec(&mj.dtheta, &je).iter().map(|x| x.scale(0.5)).collect();
        let cje: Vec<Jet> = dv.iter().map(|x| (x * &norm).scale(-0.5)).collect();
        lower.push(e);
        upper.push(je);
        cov_lower.push(ce);
        cov_upper.push(cje);
    }
    let mut horiz = lower;
    horiz.extend(upper);
    let mut coframe: Vec<Vec<Jet>> = cov_lower;
    coframe.extend(cov_upper);
    if let Some(q) = rotation {
        let rot = |src: &[Vec<Jet>]| -> Vec<Vec<Jet>> {
            (0..2 * n)
                .map(|bb| {
                    (0..dim)
                        .map(|k| {
                            let mut acc = sp.zero(order);
                            for (a, ea) in src.iter().enumerate() {
                                if q[a][bb] != 0.0 {
                                    acc.axpy(q[a][bb], &ea[k]);
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        };
        horiz = rot(&horiz);
        coframe = rot(&coframe);
    }
    let mut frame = horiz;
    frame.push(xi);
    coframe.push(mj.theta.clone());
    let structure = if order >= 1 { structure_functions(&frame, &coframe, dim) } else { Vec::new() };
    Ok(AdaptedFramePack { n, point: p.clone(), order, model: mj, frame, coframe, structure, seeds: chosen })
}

fn structure_functions(frame: &[Vec<Jet>], coframe: &[Vec<Jet>], dim: usize) -> Vec<Vec<Vec<Jet>>> {
    let sp = frame[0][0].space();
    let order = frame[0][0].order() - 1;
    let dframe: Vec<Vec<Vec<Jet>>> =
        frame.iter().map(|e| e.iter().map(|ei| (0..dim).map(|j| ei.deriv(j)).collect()).collect()).collect();
    let eb: Vec<Vec<Jet>> = frame.iter().map(|e| e.iter().map(|x| x.truncate(order)).collect()).collect();
    let cof: Vec<Vec<Jet>> = coframe.iter().map(|e| e.iter().map(|x| x.truncate(order)).collect()).collect();
    let mut c = vec![vec![vec![sp.zero(order); dim]; dim]; dim];
    for a in 0..dim {
        for b in (a + 1)..dim {
            let br: Vec<Jet> = (0..dim)
                .map(|i| {
                    let mut acc = sp.zero(order);
                    for j in 0..dim {
                        acc.fma(1.0, &eb[a][j], &dframe[b][i][j]);
                        acc.fma(-1.0, &eb[b][j], &dframe[a][i][j]);
                    }
                    acc
                })
                .collect();
            for cc in 0..dim {
                let v = crate::jet::dot(&cof[cc], &br);
                c[b][a][cc] = v.scale(-1.0);
                c[a][b][cc] = v;
            }
        }
    }
    c
}

pub fn adapted_frame(m: &ManifoldModel, p: &ChartPoint) -> Result<AdaptedFramePack> {
    adapted_frame_with(m, p, 1, None)
}

/// Constant least-squares maps from structure functions to connection
/// coefficients, assembled once per `n`.
#[derive(Debug)]
pub struct AxiomSystem {
    pub n: usize,
    /// `Γ_{abc}` (flattened `(a*m+b)*m+c`) = `horiz_map · c_{ab}^c` (pairs `a<b`).
    horiz_map: Vec<Vec<(usize, f64)>>,
    horiz_resid: DMatrix<f64>,
    /// `Γ_{ξbc}` = `xi_map · c_{ξb}^c`.
    xi_map: Vec<Vec<(usize, f64)>>,
    xi_resid: DMatrix<f64>,
    horiz_b: DMatrix<f64>,
    horiz_rhs: DMatrix<f64>,
    xi_b: DMatrix<f64>,
    xi_rhs: DMatrix<f64>,
    /// Smallest singular values of the two axiom matrices.
    pub min_singular: (f64, f64),
}

fn pinv(b: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let svd = b.clone().svd(true, true);
    let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let pi = svd.pseudo_inverse(1e-12).expect("svd computed with u and v");
    (pi, min_sv)
}

fn sparse_rows(m: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).filter(|&c| m[(r, c)].abs() > 1e-14).map(|c| (c, m[(r, c)])).collect())
        .collect()
}

impl AxiomSystem {
    fn build(n: usize) -> Self {
        let m = 2 * n;
        let idx3 = |a: usize, b: usize, c: usize| (a * m + b) * m + c;
        // horizontal block
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut rhs_cols: Vec<Option<usize>> = Vec::new();
        for a in 0..m {
            for b in 0..m {
                for c in b..m {
                    rows.push(vec![(idx3(a, b, c), 1.0), (idx3(a, c, b), 1.0)]);
                    rhs_cols.push(None);
                }
            }
        }
        for a in 0..m {
            for b in 0..m {
                for d in 0..m {
                    let mut r = Vec::new();
                    for c in 0..m {
                        let x = jf(n, c, b);
                        if x != 0.0 {
                            r.push((idx3(a, c, d), x));
                        }
                        let y = jf(n, d, c);
                        if y != 0.0 {
                            r.push((idx3(a, b, c), -y));
                        }
                    }
                    rows.push(r);
                    rhs_cols.push(None);
                }
            }
        }
        let pair_index = |a: usize, b: usize| -> usize {
            // index of (a<b) in lexicographic enumeration
            let mut k = 0;
            for i in 0..m {
                for j in (i + 1)..m {
                    if (i, j) == (a, b) {
                        return k;
                    }
                    k += 1;
                }
            }
            unreachable!()
        };
        let npairs = m * (m - 1) / 2;
        for a in 0..m {
            for b in (a + 1)..m {
                for c in 0..m {
                    rows.push(vec![(idx3(a, b, c), 1.0), (idx3(b, a, c), -1.0)]);
                    rhs_cols.push(Some(pair_index(a, b) * m + c));
                }
            }
        }
        let nrow = rows.len();
        let mut bm = DMatrix::<f64>::zeros(nrow, m * m * m);
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                bm[(r, c)] += v;
            }
        }
        let mut rmat = DMatrix::<f64>::zeros(nrow, npairs * m);
        for (r, col) in rhs_cols.iter().enumerate() {
            if let Some(c) = col {
                rmat[(r, *c)] = 1.0;
            }
        }
        let (bp, sv_h) = pinv(&bm);
        let horiz = &bp * &rmat;
        let horiz_resid = &bm * &horiz - &rmat;
        let (horiz_b, horiz_rhs) = (bm, rmat);

        // ξ block: unknowns Γ_{ξbc}, inputs M_bc = c_{ξb}^c
        let idx2 = |b: usize, c: usize| b * m + c;
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut rrows: Vec<Vec<(usize, f64)>> = Vec::new();
        for b in 0..m {
            for c in b..m {
                rows.push(vec![(idx2(b, c), 1.0), (idx2(c, b), 1.0)]);
                rrows.push(vec![]);
            }
        }
        for b in 0..m {
            for d in 0..m {
                let mut r = Vec::new();
                for c in 0..m {
                    let x = jf(n, c, b);
                    if x != 0.0 {
                        r.push((idx2(c, d), x));
                    }
                    let y = jf(n, d, c);
                    if y != 0.0 {
                        r.push((idx2(b, c), -y));
                    }
                }
                rows.push(r);
                rrows.push(vec![]);
            }
        }
        for b in 0..m {
            for c in (b + 1)..m {
                rows.push(vec![(idx2(b, c), 1.0), (idx2(c, b), -1.0)]);
                rrows.push(vec![(idx2(b, c), 1.0), (idx2(c, b), -1.0)]);
            }
        }
        for b in 0..m {
            for c in 0..m {
                let mut r = vec![(idx2(b, c), 1.0)];
                let (pb, sb) = j_image(n, b);
                let (qc, sc) = j_image(n, c);
                r.push((idx2(pb, qc), sb * sc));
                rows.push(r.clone());
                rrows.push(r);
            }
        }
        let nrow = rows.len();
        let mut bm = DMatrix::<f64>::zeros(nrow, m * m);
        let mut rmat = DMatrix::<f64>::zeros(nrow, m * m);
        for (r, (row, rrow)) in rows.iter().zip(&rrows).enumerate() {
            for &(c, v) in row {
                bm[(r, c)] += v;
            }
            for &(c, v) in rrow {
                rmat[(r, c)] += v;
            }
        }
        let (bp, sv_x) = pinv(&bm);
        let xi = &bp * &rmat;
        let xi_resid = &bm * &xi - &rmat;
        AxiomSystem {
            n,
            horiz_map: sparse_rows(&horiz),
            horiz_resid,
            xi_map: sparse_rows(&xi),
            xi_resid,
            horiz_b,
            horiz_rhs,
            xi_b: bm,
            xi_rhs: rmat,
            min_singular: (sv_h, sv_x),
        }
    }

    /// Solves the horizontal and ξ systems by Gauss–Newton from the starting
    /// guesses `x0` (length `8n³`) and `y0` (length `4n²`), using QR instead of
    /// the cached pseudo-inverse. Returns the two solution vectors.
    pub fn solve_from(&self, c_h: &[f64], c_xi: &[f64], x0: &[f64], y0: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let refine = |b: &DMatrix<f64>, rhs: nalgebra::DVector<f64>, x0: &[f64]| {
            let mut x = nalgebra::DVector::from_column_slice(x0);
            let bt = b.transpose();
            let normal = &bt * b;
            let qr = normal.qr();
            for _ in 0..3 {
                let r = &rhs - b * &x;
                let dx = qr.solve(&(&bt * r)).expect("full-rank axiom system");
                x += dx;
            }
            x.iter().cloned().collect::<Vec<_>>()
        };
        let rh = &self.horiz_rhs * nalgebra::DVector::from_column_slice(c_h);
        let rx = &self.xi_rhs * nalgebra::DVector::from_column_slice(c_xi);
        (refine(&self.horiz_b, rh, x0), refine(&self.xi_b, rx, y0))
    }

    pub fn get(n: usize) -> &'static AxiomSystem {
        static CACHE: OnceLock<Mutex<HashMap<usize, &'static AxiomSystem>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut g = cache.lock().expect("axiom cache poisoned");
        g.entry(n).or_insert_with(|| Box::leak(Box::new(AxiomSystem::build(n))))
    }
}

/// Tanaka–Webster connection coefficients `Γ_{Abc} = g(∇_{e_A} e_b, e_c)` and
/// torsion `A(e_b, e_c)` as chart jets.
#[derive(Clone, Debug)]
pub struct ConnectionPack {
    pub n: usize,
    /// `gamma[A][b][c]`, `A ∈ 0..=2n`.
    pub gamma: Vec<Vec<Vec<Jet>>>,
    pub torsion: Vec<Vec<Jet>>,
    /// Least-squares residual of the full axiom system (values).
    pub axiom_residual: f64,
}

impl ConnectionPack {
    pub fn order(&self) -> usize {
        self.torsion[0][0].order()
    }
}

/// Solves the connection axioms from the frame's structure functions.
pub fn connection_from_frame(fp: &AdaptedFramePack) -> Result<ConnectionPack> {
    let n = fp.n;
    let m = 2 * n;
    let xi = xi_index(n);
    let sys = AxiomSystem::get(n);
    let c = &fp.structure;
    let sp = c[0][1][0].space();
    let order = c[0][1][0].order();
    let mut cvec = Vec::with_capacity(m * (m - 1) / 2 * m);
    for a in 0..m {
        for b in (a + 1)..m {
            for cc in 0..m {
                cvec.push(&c[a][b][cc]);
            }
        }
    }
    let combine = |row: &[(usize, f64)], src: &[&Jet]| {
        let mut acc = sp.zero(order);
        for &(k, v) in row {
            acc.axpy(v, src[k]);
        }
        acc
    };
    let mut gamma = vec![vec![vec![sp.zero(order); m]; m]; m + 1];
    for a in 0..m {
        for b in 0..m {
            for cc in 0..m {
                gamma[a][b][cc] = combine(&sys.horiz_map[(a * m + b) * m + cc], &cvec);
            }
        }
    }
    let mvec: Vec<&Jet> = (0..m).flat_map(|b| (0..m).map(move |cc| (b, cc))).map(|(b, cc)| &c[xi][b][cc]).collect();
    for b in 0..m {
        for cc in 0..m {
            gamma[xi][b][cc] = combine(&sys.xi_map[b * m + cc], &mvec);
        }
    }
    let torsion: Vec<Vec<Jet>> =
        (0..m).map(|b| (0..m).map(|cc| &gamma[xi][b][cc] - &c[xi][b][cc]).collect()).collect();
    let cv = nalgebra::DVector::from_iterator(cvec.len(), cvec.iter().map(|j| j.value()));
    let mv = nalgebra::DVector::from_iterator(mvec.len(), mvec.iter().map(|j| j.value()));
    let res = (&sys.horiz_resid * cv).norm().max((&sys.xi_resid * mv).norm());
    Ok(ConnectionPack { n, gamma, torsion, axiom_residual: res })
}

pub const TOL_FRAME: f64 = 1e-10;
pub const TOL_STRUCT: f64 = 1e-9;

/// Connection at a point with the exact-jet scheme and a first-order frame.
pub fn tw_connection(m: &ManifoldModel, p: &ChartPoint) -> Result<ConnectionPack> {
    let fp = adapted_frame(m, p)?;
    let cp = connection_from_frame(&fp)?;
    let scale = 1.0 + max_abs3(&fp.structure);
    if cp.axiom_residual > TOL_STRUCT * scale {
        return Err(CrError::AxiomResidual(cp.axiom_residual));
    }
    Ok(cp)
}

fn max_abs3(t: &[Vec<Vec<Jet>>]) -> f64 {
    t.iter().flatten().flatten().map(|j| j.value().abs()).fold(0.0, f64::max)
}

/// Curvature package: `R_{abcd} = R(e_a,e_b,e_c,e_d)`, `Ric`, `ρ`, `Rc`, `Rc₀`, `S`.
#[derive(Clone, Debug)]
pub struct CurvaturePack {
    pub n: usize,
    pub riem: Vec<Vec<Vec<Vec<Jet>>>>,
    pub ric: Vec<Vec<Jet>>,
    pub rho: Vec<Vec<Jet>>,
    pub rc: Vec<Vec<Jet>>,
    pub rc0: Vec<Vec<Jet>>,
    pub scalar: Jet,
}

/// Everything the calculus layer needs at one point.
#[derive(Clone, Debug)]
pub struct PointGeometry {
    pub frame: AdaptedFramePack,
    pub conn: ConnectionPack,
    pub curv: Option<CurvaturePack>,
}

impl PointGeometry {
    /// `frame_order` = 1 (connection values), 2 (curvature values), 3
    /// (curvature first derivatives, fourth covariant derivatives).
    pub fn compute(m: &ManifoldModel, p: &ChartPoint, frame_order: usize, scheme: Scheme) -> Result<Self> {
        Self::compute_rotated(m, p, frame_order, scheme, None)
    }

    pub fn compute_rotated(
        m: &ManifoldModel,
        p: &ChartPoint,
        frame_order: usize,
        scheme: Scheme,
        rotation: Option<&[Vec<f64>]>,
    ) -> Result<Self> {
        let frame = adapted_frame_with(m, p, frame_order, rotation)?;
        let conn = match scheme {
            Scheme::Exact => connection_from_frame(&frame)?,
            Scheme::Central4 { h } => fd_connection(m, &frame, frame_order - 1, h, rotation)?,
        };
        let curv = if conn.order() >= 1 { Some(curvature_from(&frame, &conn)) } else { None };
        Ok(PointGeometry { frame, conn, curv })
    }

    pub fn n(&self) -> usize {
        self.frame.n
    }

    pub fn curv(&self) -> &CurvaturePack {
        self.curv.as_ref().expect("curvature requires frame order >= 2")
    }

    /// `(∇_{e_A} T)(e_b, e_c)` for a horizontal 2-tensor field.
    pub fn cov_deriv2(&self, a: usize, t: &[Vec<Jet>]) -> Vec<Vec<Jet>> {
        let mm = t.len();
        let g = &self.conn.gamma[a];
        let dt: Vec<Vec<Jet>> = t.iter().map(|r| r.iter().map(|x| self.frame.apply(a, x)).collect()).collect();
        (0..mm)
            .map(|b| {
                (0..mm)
                    .map(|c| {
                        let mut acc = dt[b][c].clone();
                        for d in 0..mm {
                            acc.fma(-1.0, &g[b][d], &t[d][c]);
                            acc.fma(-1.0, &g[c][d], &t[b][d]);
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// `(∇_{e_A} σ)(e_b)` for a horizontal one-form.
    pub fn cov_deriv1(&self, a: usize, s: &[Jet]) -> Vec<Jet> {
        let g = &self.conn.gamma[a];
        (0..s.len())
            .map(|b| {
                let mut acc = self.frame.apply(a, &s[b]);
                for (d, sd) in s.iter().enumerate() {
                    acc.fma(-1.0, &g[b][d], sd);
                }
                acc
            })
            .collect()
    }

    /// Horizontal divergence `Σ_a (∇_{e_a} σ)(e_a)`.
    pub fn divergence1(&self, s: &[Jet]) -> Jet {
        let m = s.len();
        let mut acc: Option<Jet> = None;
        for a in 0..m {
            let mut v = self.frame.apply(a, &s[a]);
            for (d, sd) in s.iter().enumerate() {
                v.fma(-1.0, &self.conn.gamma[a][a][d], sd);
            }
            acc = Some(match acc {
                None => v,
                Some(x) => &x + &v,
            });
        }
        acc.expect("n >= 1")
    }
}

/// Curvature from connection jets; result has one order less than `Γ`.
pub fn curvature_from(fp: &AdaptedFramePack, cp: &ConnectionPack) -> CurvaturePack {
    let n = fp.n;
    let m = 2 * n;
    let xi = xi_index(n);
    let g = &cp.gamma;
    let order = cp.order() - 1;
    let sp = g[0][0][0].space();
    let gt: Vec<Vec<Vec<Jet>>> =
        g.iter().map(|x| x.iter().map(|y| y.iter().map(|z| z.truncate(order)).collect()).collect()).collect();
    // eg[A][B][c][d] = e_A(Γ_{Bcd}) for horizontal A and all B
    let eg: Vec<Vec<Vec<Vec<Jet>>>> = (0..m)
        .map(|a| g.iter().map(|gb| gb.iter().map(|r| r.iter().map(|x| fp.apply(a, x)).collect()).collect()).collect())
        .collect();
    let ct: Vec<Vec<Vec<Jet>>> = fp
        .structure
        .iter()
        .map(|x| x.iter().map(|y| y.iter().map(|z| z.truncate(order)).collect()).collect())
        .collect();
    let mut riem = vec![vec![vec![vec![sp.zero(order); m]; m]; m]; m];
    for a in 0..m {
        for b in (a + 1)..m {
            for c in 0..m {
                for d in 0..m {
                    let mut r = &eg[a][b][c][d] - &eg[b][a][c][d];
                    for e in 0..m {
                        r.fma(1.0, &gt[b][c][e], &gt[a][e][d]);
                        r.fma(-1.0, &gt[a][c][e], &gt[b][e][d]);
                    }
                    for dd in 0..=xi {
                        r.fma(-1.0, &ct[a][b][dd], &gt[dd][c][d]);
                    }
                    riem[b][a][c][d] = r.scale(-1.0);
                    riem[a][b][c][d] = r;
                }
            }
        }
    }
    let mut ric = vec![vec![sp.zero(order); m]; m];
    let mut rho = vec![vec![sp.zero(order); m]; m];
    for b in 0..m {
        for c in 0..m {
            for a in 0..m {
                ric[b][c] += &riem[a][b][c][a];
                let (ja, s) = j_image(n, a);
                rho[b][c].axpy(0.5 * s, &riem[b][c][a][ja]);
            }
        }
    }
    // Rc(X,Y) = ρ(JX,Y)
    let rc: Vec<Vec<Jet>> = (0..m)
        .map(|b| {
            let (jb, s) = j_image(n, b);
            (0..m).map(|c| rho[jb][c].scale(s)).collect()
        })
        .collect();
    let mut scalar = sp.zero(order);
    for a in 0..m {
        scalar += &ric[a][a];
    }
    let rc0 = (0..m)
        .map(|b| {
            (0..m)
                .map(|c| {
                    let mut v = rc[b][c].clone();
                    if b == c {
                        v.axpy(-1.0 / m as f64, &scalar);
                    }
                    v
                })
                .collect()
        })
        .collect();
    CurvaturePack { n, riem, ric, rho, rc, rc0, scalar }
}

const FD_W: [(f64, f64); 4] = [(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)];
const FD_W2: [(f64, f64); 5] =
    [(-2.0, -1.0 / 12.0), (-1.0, 16.0 / 12.0), (0.0, -30.0 / 12.0), (1.0, 16.0 / 12.0), (2.0, -1.0 / 12.0)];

/// Connection values at chart point `q` (order-1 frame).
fn connection_values(
    m: &ManifoldModel,
    q: &ChartPoint,
    rotation: Option<&[Vec<f64>]>,
    seeds: &[usize],
) -> Result<Vec<f64>> {
    let fp = adapted_frame_seeded(m, q, 1, rotation, Some(seeds))?;
    let cp = connection_from_frame(&fp)?;
    let mut v = Vec::new();
    v.extend(cp.gamma.iter().flatten().flatten().map(Jet::value));
    v.extend(cp.torsion.iter().flatten().map(Jet::value));
    v.extend(fp.structure.iter().flatten().flatten().map(Jet::value));
    Ok(v)
}

/// Connection jets of order `target` built from central differences of the
/// connection values around the frame's point.
fn fd_connection(
    m: &ManifoldModel,
    fp: &AdaptedFramePack,
    target: usize,
    h: f64,
    rotation: Option<&[Vec<f64>]>,
) -> Result<ConnectionPack> {
    assert!(target <= 2, "finite differences supported up to second derivatives");
    let n = fp.n;
    let mm = 2 * n;
    let dim = fp.dim();
    let sp = m.jet_space();
    let p = &fp.point;
    let shifted = |offs: &[(usize, f64)]| -> Result<Vec<f64>> {
        let mut q = p.clone();
        for &(i, s) in offs {
            q.coords[i] += s * h;
        }
        connection_values(m, &q, rotation, &fp.seeds)
    };
    let center = shifted(&[])?;
    let nv = center.len();
    let size = sp.size(target);
    let mut coeffs = vec![vec![0.0; size]; nv];
    for (k, c) in center.iter().enumerate() {
        coeffs[k][0] = *c;
    }
    let mut e = vec![0u8; dim];
    if target >= 1 {
        for i in 0..dim {
            let mut d1 = vec![0.0; nv];
            for &(s, w) in &FD_W {
                let v = shifted(&[(i, s)])?;
                for k in 0..nv {
                    d1[k] += w * v[k] / h;
                }
            }
            e.iter_mut().for_each(|x| *x = 0);
            e[i] = 1;
            let idx = sp.index_of(&e).expect("monomial");
            for k in 0..nv {
                coeffs[k][idx] = d1[k];
            }
            if target >= 2 {
                let mut d2 = vec![0.0; nv];
                for &(s, w) in &FD_W2 {
                    let v = if s == 0.0 { center.clone() } else { shifted(&[(i, s)])? };
                    for k in 0..nv {
                        d2[k] += w * v[k] / (h * h);
                    }
                }
                e[i] = 2;
                let idx = sp.index_of(&e).expect("monomial");
                for k in 0..nv {
                    coeffs[k][idx] = 0.5 * d2[k];
                }
            }
        }
    }
    if target >= 2 {
        for i in 0..dim {
            for j in (i + 1)..dim {
                let mut d2 = vec![0.0; nv];
                for &(s, w) in &FD_W {
                    for &(t, u) in &FD_W {
                        let v = shifted(&[(i, s), (j, t)])?;
                        for k in 0..nv {
                            d2[k] += w * u * v[k] / (h * h);
                        }
                    }
                }
                e.iter_mut().for_each(|x| *x = 0);
                e[i] = 1;
                e[j] = 1;
                let idx = sp.index_of(&e).expect("monomial");
                for k in 0..nv {
                    coeffs[k][idx] = d2[k];
                }
            }
        }
    }
    let mut it = coeffs.into_iter().map(|c| sp.from_coeffs(target, c));
    let gamma = (0..=mm)
        .map(|_| (0..mm).map(|_| (0..mm).map(|_| it.next().expect("gamma")).collect()).collect())
        .collect();
    let torsion = (0..mm).map(|_| (0..mm).map(|_| it.next().expect("torsion")).collect()).collect();
    let base = connection_from_frame(fp)?;
    Ok(ConnectionPack { n, gamma, torsion, axiom_residual: base.axiom_residual })
}

/// Curvature at a point (pack has order 0 values unless a higher frame order
/// is requested through [`PointGeometry`]).
pub fn curvature(m: &ManifoldModel, p: &ChartPoint, scheme: Scheme) -> Result<CurvaturePack> {
    let g = PointGeometry::compute(m, p, 2, scheme)?;
    Ok(g.curv.expect("frame order 2 yields curvature"))
}

/// Residuals of the frame invariants.
#[derive(Clone, Debug, Default)]
pub struct FrameResiduals {
    pub theta_xi: f64,
    pub xi_dtheta: f64,
    pub gram: f64,
    pub theta_horizontal: f64,
    pub j_adapted: f64,
    pub contact: f64,
}

impl FrameResiduals {
    pub fn max(&self) -> f64 {
        [self.theta_xi, self.xi_dtheta, self.gram, self.theta_horizontal, self.j_adapted, self.contact]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn frame_residuals(fp: &AdaptedFramePack) -> FrameResiduals {
    let n = fp.n;
    let m = 2 * n;
    let dim = fp.dim();
    let xi = xi_index(n);
    let mj = &fp.model;
    let v = |j: &Jet| j.value();
    let e: Vec<Vec<f64>> = fp.frame.iter().map(|r| r.iter().map(v).collect()).collect();
    let th: Vec<f64> = mj.theta.iter().map(v).collect();
    let dth: Vec<Vec<f64>> = mj.dtheta.iter().map(|r| r.iter().map(v).collect()).collect();
    let jm: Vec<Vec<f64>> = mj.jmat.iter().map(|r| r.iter().map(v).collect()).collect();
    let dotv = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mv = |mat: &[Vec<f64>], x: &[f64]| -> Vec<f64> { mat.iter().map(|r| dotv(r, x)).collect() };
    let g = |a: &[f64], b: &[f64]| -0.5 * dotv(&mv(&jm, a), &mv(&dth, b));
    let mut r = FrameResiduals { theta_xi: (dotv(&th, &e[xi]) - 1.0).abs(), ..Default::default() };
    let dxi = mv(&dth, &e[xi]);
    r.xi_dtheta = dxi.iter().map(|x| x * x).sum::<f64>().sqrt();
    for a in 0..m {
        r.theta_horizontal = r.theta_horizontal.max(dotv(&th, &e[a]).abs());
        for b in 0..m {
            let d = if a == b { 1.0 } else { 0.0 };
            r.gram = r.gram.max((g(&e[a], &e[b]) - d).abs());
        }
        let (ja, s) = j_image(n, a);
        let je = mv(&jm, &e[a]);
        for k in 0..dim {
            r.j_adapted = r.j_adapted.max((je[k] - s * e[ja][k]).abs());
        }
        if fp.order >= 1 {
            for b in 0..m {
                let c0 = fp.structure[a][b][xi].value();
                r.contact = r.contact.max((c0 + 2.0 * omega(n, a, b)).abs());
            }
        }
    }
    r
}

/// Residuals of the connection and torsion invariants (values).
#[derive(Clone, Debug, Default)]
pub struct ConnectionResiduals {
    pub metric: f64,
    pub j_parallel: f64,
    pub torsion_sym: f64,
    pub torsion_trace: f64,
    pub torsion_anti_j: f64,
    pub horizontal_torsion: f64,
    pub axiom: f64,
}

impl ConnectionResiduals {
    pub fn max(&self) -> f64 {
        [
            self.metric,
            self.j_parallel,
            self.torsion_sym,
            self.torsion_trace,
            self.torsion_anti_j,
            self.horizontal_torsion,
            self.axiom,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn connection_residuals(fp: &AdaptedFramePack, cp: &ConnectionPack) -> ConnectionResiduals {
    let n = fp.n;
    let m = 2 * n;
    let g = |a: usize, b: usize, c: usize| cp.gamma[a][b][c].value();
    let t = |a: usize, b: usize| cp.torsion[a][b].value();
    let mut r = ConnectionResiduals { axiom: cp.axiom_residual, ..Default::default() };
    for a in 0..=m {
        for b in 0..m {
            for c in 0..m {
                r.metric = r.metric.max((g(a, b, c) + g(a, c, b)).abs());
                let (jb, sb) = j_image(n, b);
                let (jc, sc) = j_image(n, c);
                r.j_parallel = r.j_parallel.max((sb * sc * g(a, jb, jc) - g(a, b, c)).abs());
            }
        }
    }
    let mut tr = 0.0;
    let mut trj = 0.0;
    for b in 0..m {
        tr += t(b, b);
        let (jb, s) = j_image(n, b);
        trj += s * t(b, jb);
        for c in 0..m {
            r.torsion_sym = r.torsion_sym.max((t(b, c) - t(c, b)).abs());
            let (jb, sb) = j_image(n, b);
            let (jc, sc) = j_image(n, c);
            r.torsion_anti_j = r.torsion_anti_j.max((sb * sc * t(jb, jc) + t(b, c)).abs());
        }
    }
    r.torsion_trace = tr.abs().max(trj.abs());
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                let v = g(a, b, c) - g(b, a, c) - fp.structure[a][b][c].value();
                r.horizontal_torsion = r.horizontal_torsion.max(v.abs());
            }
        }
    }
    r
}

/// Residuals of the curvature identities (values).
#[derive(Clone, Debug, Default)]
pub struct CurvatureResiduals {
    pub ric_sym: f64,
    pub torric: f64,
    pub rho: f64,
    pub rho_riem: f64,
    pub rid: f64,
    pub wric: f64,
    pub trace: f64,
    pub rc0_trace: f64,
}

impl CurvatureResiduals {
    pub fn max(&self) -> f64 {
        [self.ric_sym, self.torric, self.rho, self.rho_riem, self.rid, self.wric, self.trace, self.rc0_trace]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn curvature_residuals(cp: &ConnectionPack, k: &CurvaturePack) -> CurvatureResiduals {
    let n = k.n;
    let m = 2 * n;
    let nf = n as f64;
    let v = |t: &[Vec<Jet>], a: usize, b: usize| t[a][b].value();
    let a_ = |a: usize, b: usize| cp.torsion[a][b].value();
    // T(JX, Y) with X = e_a: s * T(e_ja, Y)
    let jl = |t: &dyn Fn(usize, usize) -> f64, a: usize, b: usize| {
        let (ja, s) = j_image(n, a);
        s * t(ja, b)
    };
    let jr = |t: &dyn Fn(usize, usize) -> f64, a: usize, b: usize| {
        let (jb, s) = j_image(n, b);
        s * t(a, jb)
    };
    let ric = |a: usize, b: usize| v(&k.ric, a, b);
    let rho = |a: usize, b: usize| v(&k.rho, a, b);
    let rc = |a: usize, b: usize| v(&k.rc, a, b);
    let mut r = CurvatureResiduals::default();
    let mut tr_rc = 0.0;
    let mut tr_rc0 = 0.0;
    for a in 0..m {
        tr_rc += rc(a, a);
        tr_rc0 += v(&k.rc0, a, a);
        for b in 0..m {
            r.ric_sym = r.ric_sym.max((ric(a, b) - ric(b, a)).abs());
            let ric_jj = jl(&|x, y| jr(&ric, x, y), a, b);
            // Ric(X,Y) - Ric(JX,JY) = 4(n-1) A(X,JY)
            r.torric = r.torric.max((ric(a, b) - ric_jj - 4.0 * (nf - 1.0) * jr(&a_, a, b)).abs());
            // 2ρ(X,JY) = -Ric(X,Y) - Ric(JX,JY)
            r.rho = r.rho.max((2.0 * jr(&rho, a, b) + ric(a, b) + ric_jj).abs());
            // ... = R(e_c, J e_c, X, JY)
            let mut rr = 0.0;
            for c in 0..m {
                let (jc, s) = j_image(n, c);
                let (jb, sb) = j_image(n, b);
                rr += s * sb * k.riem[c][jc][a][jb].value();
            }
            r.rho_riem = r.rho_riem.max((rr + ric(a, b) + ric_jj).abs());
            // Ric(X,Y) = ρ(JX,Y) + 2(n-1) A(JX,Y)
            r.rid = r.rid.max((ric(a, b) - jl(&rho, a, b) - 2.0 * (nf - 1.0) * jl(&a_, a, b)).abs());
            let rc_jj = jl(&|x, y| jr(&rc, x, y), a, b);
            r.wric = r.wric.max((rc(a, b) - rc_jj).abs()).max((rc(a, b) - rc(b, a)).abs());
        }
    }
    r.trace = (tr_rc - k.scalar.value()).abs();
    r.rc0_trace = tr_rc0.abs();
    r
}

/// Residuals of the contracted second Bianchi identity and of its
/// `Rc₀`/torsion form. The second needs `n >= 2`.
pub fn bianchi_residual(g: &PointGeometry) -> Result<(f64, Option<f64>)> {
    let n = g.n();
    let m = 2 * n;
    let k = g.curv();
    if k.scalar.order() < 1 {
        return Err(CrError::Config("Bianchi residuals need frame order 3".into()));
    }
    let ds: Vec<f64> = (0..m).map(|x| g.frame.apply(x, &k.scalar).value()).collect();
    let mut div_ric = vec![0.0; m];
    let mut div_rc0 = vec![0.0; m];
    let mut div_a = vec![0.0; m];
    for a in 0..m {
        let dr = g.cov_deriv2(a, &k.ric);
        let d0 = g.cov_deriv2(a, &k.rc0);
        let da = g.cov_deriv2(a, &g.conn.torsion);
        for x in 0..m {
            div_ric[x] += dr[a][x].value();
            div_rc0[x] += d0[a][x].value();
            let (jx, s) = j_image(n, x);
            div_a[x] += s * da[a][jx].value();
        }
    }
    let r_div = (0..m).map(|x| (2.0 * div_ric[x] - ds[x]).abs()).fold(0.0, f64::max);
    let r_bi2w = if n >= 2 {
        let nf = n as f64;
        Some(
            (0..m)
                .map(|x| (ds[x] - 2.0 * nf / (nf - 1.0) * div_rc0[x] - 4.0 * nf * div_a[x]).abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    Ok((r_div, r_bi2w))
}

/// Residuals of the Bianchi identities at a point; `n = 1` cannot evaluate
/// the `Rc₀` form.
pub fn bianchi_residuals_at(m: &ManifoldModel, p: &ChartPoint, scheme: Scheme) -> Result<(f64, f64)> {
    if m.n() < 2 {
        return Err(CrError::UnsupportedDimension(m.n()));
    }
    let g = PointGeometry::compute(m, p, 3, scheme)?;
    let (a, b) = bianchi_residual(&g)?;
    Ok((a, b.expect("n >= 2")))
}

/// `|N^J(X, Y)|` for horizontal chart vectors, computed from chart-level
/// commutators of the fields `π_H X`, `π_H Y` (constant chart components
/// projected to `H`).
pub fn nijenhuis_residual(m: &ManifoldModel, p: &ChartPoint, x: &[f64], y: &[f64]) -> Result<f64> {
    let fp = adapted_frame_with(m, p, 1, None)?;
    let dim = fp.dim();
    let xi = xi_index(fp.n);
    let sp = m.jet_space();
    let th: Vec<f64> = fp.model.theta.iter().map(Jet::value).collect();
    let scale = th.iter().map(|t| t * t).sum::<f64>().sqrt();
    for v in [x, y] {
        let t: f64 = th.iter().zip(v).map(|(a, b)| a * b).sum();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if t.abs() > 1e-9 * scale * nv.max(1e-300) {
            return Err(CrError::NotHorizontal(t));
        }
    }
    let project = |v: &[f64]| -> Vec<Jet> {
        let mut tv = sp.zero(1);
        for (i, vi) in v.iter().enumerate() {
            tv.axpy(*vi, &fp.model.theta[i]);
        }
        (0..dim).map(|k| &sp.constant(v[k], 1) - &(&tv * &fp.frame[xi][k])).collect()
    };
    let jmul = |v: &[Jet]| -> Vec<Jet> { mat_vec(&fp.model.jmat, v) };
    let bracket = |u: &[Jet], w: &[Jet]| -> Vec<f64> {
        (0..dim)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..dim {
                    acc += u[j].value() * w[i].deriv(j).value() - w[j].value() * u[i].deriv(j).value();
                }
                acc
            })
            .collect()
    };
    let xf = project(x);
    let yf = project(y);
    let jx = jmul(&xf);
    let jy = jmul(&yf);
    let b1 = bracket(&jx, &jy);
    let b2 = bracket(&xf, &yf);
    let b3 = bracket(&jx, &yf);
    let b4 = bracket(&xf, &jy);
    let sum: Vec<f64> = b3.iter().zip(&b4).map(|(a, b)| a + b).collect();
    let tsum: f64 = th.iter().zip(&sum).map(|(a, b)| a * b).sum();
    let xiv: Vec<f64> = fp.frame[xi].iter().map(Jet::value).collect();
    let hs: Vec<f64> = sum.iter().zip(&xiv).map(|(s, x)| s - tsum * x).collect();
    let jm: Vec<Vec<f64>> = fp.model.jmat.iter().map(|r| r.iter().map(Jet::value).collect()).collect();
    let jhs: Vec<f64> = jm.iter().map(|r| r.iter().zip(&hs).map(|(a, b)| a * b).sum()).collect();
    let nvec: Vec<f64> = (0..dim).map(|i| b1[i] - b2[i] - jhs[i]).collect();
    Ok(nvec.iter().map(|v| v * v).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{make_conformal, make_heisenberg, make_sphere};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn axiom_system_full_rank() {
        for n in 1..=3 {
            let s = AxiomSystem::get(n);
            assert!(s.min_singular.0 > 1e-6 && s.min_singular.1 > 1e-6, "{n}: {:?}", s.min_singular);
        }
    }

    #[test]
    fn heisenberg_flat_at_origin() {
        let h = make_heisenberg(2).unwrap();
        let g = PointGeometry::compute(&h, &ChartPoint { chart: 0, coords: vec![0.0; 5] }, 2, Scheme::Exact).unwrap();
        // hand check: X_j = ∂x_j + y_j∂t, Y_j = ∂y_j - x_j∂t, [X_j,Y_j] = -2∂t, all other brackets zero
        let fr = frame_residuals(&g.frame);
        assert!(fr.max() < 1e-12, "{fr:?}");
        for x in g.conn.gamma.iter().flatten().flatten() {
            assert!(x.value().abs() < 1e-12);
        }
        for x in g.conn.torsion.iter().flatten() {
            assert!(x.value().abs() < 1e-12);
        }
        for x in g.curv().riem.iter().flatten().flatten().flatten() {
            assert!(x.value().abs() < 1e-12);
        }
        assert!((g.frame.structure[0][2][4].value() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn round_sphere_frame_and_sasakian() {
        let s5 = make_sphere(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in s5.sample_points(20, &mut rng) {
            let g = PointGeometry::compute(&s5, &p, 2, Scheme::Exact).unwrap();
            assert!(frame_residuals(&g.frame).max() < 1e-12);
            let cr = connection_residuals(&g.frame, &g.conn);
            assert!(cr.max() < 1e-10, "{cr:?}");
            for x in g.conn.torsion.iter().flatten() {
                assert!(x.value().abs() < 1e-10);
            }
            let kr = curvature_residuals(&g.conn, g.curv());
            assert!(kr.max() < 1e-9, "{kr:?}");
        }
    }

    #[test]
    fn conformal_sphere_has_torsion() {
        let s5 = make_sphere(2).unwrap();
        let c = make_conformal(&s5, &s5.field("0.1*x1").unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut max_a = 0.0f64;
        for p in c.sample_points(30, &mut rng) {
            let g = PointGeometry::compute(&c, &p, 2, Scheme::Exact).unwrap();
            let cr = connection_residuals(&g.frame, &g.conn);
            assert!(cr.max() < 1e-9, "{cr:?}");
            let kr = curvature_residuals(&g.conn, g.curv());
            assert!(kr.max() < 1e-9, "{kr:?}");
            for x in g.conn.torsion.iter().flatten() {
                max_a = max_a.max(x.value().abs());
            }
        }
        assert!(max_a > 1e-4, "max |A| = {max_a}");
    }

    #[test]
    fn nijenhuis_vanishes_and_rejects_vertical() {
        let s5 = make_sphere(2).unwrap();
        let c = make_conformal(&s5, &s5.field("0.1*x1").unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in [&s5, &c] {
            for p in m.sample_points(10, &mut rng) {
                let fp = adapted_frame(m, &p).unwrap();
                let e: Vec<Vec<f64>> = fp.frame.iter().map(|r| r.iter().map(Jet::value).collect()).collect();
                let x: Vec<f64> = (0..5).map(|k| e[0][k] + 0.3 * e[3][k]).collect();
                let y: Vec<f64> = (0..5).map(|k| e[1][k] - 0.7 * e[2][k]).collect();
                assert!(nijenhuis_residual(m, &p, &x, &y).unwrap() < 1e-10);
                assert_eq!(nijenhuis_residual(m, &p, &x, &x).unwrap(), 0.0);
                assert!(nijenhuis_residual(m, &p, &e[4], &y).is_err());
            }
        }
    }

    #[test]
    fn bianchi_n1_rejected() {
        let s3 = make_sphere(1).unwrap();
        let p = ChartPoint { chart: 0, coords: vec![0.1, 0.2, 0.3] };
        assert!(matches!(bianchi_residuals_at(&s3, &p, Scheme::Exact), Err(CrError::UnsupportedDimension(1))));
    }
}


/// Flattened structure-function inputs of the axiom system:
/// `c_{ab}^c` for `a<b` and `c_{ξb}^c` (values).
pub fn axiom_inputs(fp: &AdaptedFramePack) -> (Vec<f64>, Vec<f64>) {
    let m = 2 * fp.n;
    let xi = xi_index(fp.n);
    let c = &fp.structure;
    let mut h = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            for cc in 0..m {
                h.push(c[a][b][cc].value());
            }
        }
    }
    let x = (0..m).flat_map(|b| (0..m).map(move |cc| c[xi][b][cc].value())).collect();
    (h, x)
}

/// A `2n × 2n` orthogonal matrix commuting with the frame `J`, built from a
/// unitary `U = P + iW` as `[P -W; W P]`.
pub fn unitary_rotation(n: usize, p: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; 2 * n]; 2 * n];
    for a in 0..n {
        for b in 0..n {
            q[a][b] = p[a][b];
            q[a + n][b + n] = p[a][b];
            q[a + n][b] = w[a][b];
            q[a][b + n] = -w[a][b];
        }
    }
    q
}

/// Random unitary matrix (Gram–Schmidt on complex Gaussian columns) as a
/// J-commuting rotation.
pub fn random_unitary_rotation<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<(f64, f64)>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        for u in &cols {
            // <u, v> = Σ conj(u) v
            let (mut re, mut im) = (0.0, 0.0);
            for (a, b) in u.iter().zip(&v) {
                re += a.0 * b.0 + a.1 * b.1;
                im += a.0 * b.1 - a.1 * b.0;
            }
            for (a, b) in u.iter().zip(v.iter_mut()) {
                b.0 -= re * a.0 - im * a.1;
                b.1 -= re * a.1 + im * a.0;
            }
        }
        let nv = v.iter().map(|z| z.0 * z.0 + z.1 * z.1).sum::<f64>().sqrt();
        if nv > 1e-3 {
            cols.push(v.into_iter().map(|z| (z.0 / nv, z.1 / nv)).collect());
        }
    }
    let p: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| cols[b][a].0).collect()).collect();
    let w: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| cols[b][a].1).collect()).collect();
    unitary_rotation(n, &p, &w)
}

/// Errors of a quantity at a sequence of halving steps and the observed
/// orders between consecutive steps.
#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
    /// Errors below this are treated as converged (roundoff floor).
    pub floor: f64,
}

impl ConvergenceStudy {
    pub fn new(steps: Vec<f64>, errors: Vec<f64>, floor: f64) -> Self {
        let orders = errors
            .windows(2)
            .zip(steps.windows(2))
            .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            .collect();
        ConvergenceStudy { steps, errors, orders, floor }
    }

    /// Every consecutive pair either reaches `min_order` or the finer error
    /// is at the roundoff floor.
    pub fn passes(&self, min_order: f64) -> bool {
        let last = *self.errors.last().unwrap_or(&0.0);
        if !(last.is_finite()) {
            return false;
        }
        self.orders
            .iter()
            .zip(self.errors.iter().skip(1))
            .all(|(o, e)| *e <= self.floor || *o >= min_order)
    }

    pub fn min_order(&self) -> f64 {
        self.orders.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub const DEFAULT_STEPS: [f64; 3] = [4e-3, 2e-3, 1e-3];
pub const ROUNDOFF_FLOOR: f64 = 1e-10;

fn max_diff<'a>(a: impl Iterator<Item = &'a Jet>, b: impl Iterator<Item = &'a Jet>) -> f64 {
    a.zip(b).map(|(x, y)| (x.value() - y.value()).abs()).fold(0.0, f64::max)
}

/// Convergence of the finite-difference curvature towards the exact-jet
/// curvature at `p`, measured on all components of `R`.
pub fn curvature_convergence(m: &ManifoldModel, p: &ChartPoint, steps: &[f64]) -> Result<ConvergenceStudy> {
    let exact = PointGeometry::compute(m, p, 2, Scheme::Exact)?;
    let mut errs = Vec::new();
    for &h in steps {
        let fd = PointGeometry::compute(m, p, 2, Scheme::Central4 { h })?;
        errs.push(max_diff(
            exact.curv().riem.iter().flatten().flatten().flatten(),
            fd.curv().riem.iter().flatten().flatten().flatten(),
        ));
    }
    Ok(ConvergenceStudy::new(steps.to_vec(), errs, ROUNDOFF_FLOOR))
}

/// Curvature by finite differences with a convergence check; fails when the
/// observed order at `p` is below 3.5.
pub fn curvature_checked(m: &ManifoldModel, p: &ChartPoint, h: f64) -> Result<CurvaturePack> {
    let study = curvature_convergence(m, p, &[4.0 * h, 2.0 * h, h])?;
    if !study.passes(3.5) {
        return Err(CrError::Convergence { order: study.min_order(), required: 3.5 });
    }
    curvature(m, p, Scheme::Central4 { h })
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::manifold::{make_conformal, make_heisenberg, make_sphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conformal_s5() -> ManifoldModel {
        let s5 = make_sphere(2).unwrap();
        make_conformal(&s5, &s5.field("0.1*x1").unwrap())
    }

    #[test]
    fn conformal_reeb_field_differs() {
        let s5 = make_sphere(2).unwrap();
        let c = conformal_s5();
        let p = ChartPoint { chart: 0, coords: vec![0.3, -0.1, 0.2, 0.4, -0.2] };
        let a = adapted_frame(&s5, &p).unwrap();
        let b = adapted_frame(&c, &p).unwrap();
        let d: f64 = a.frame[4].iter().zip(&b.frame[4]).map(|(x, y)| (x.value() - y.value()).powi(2)).sum();
        assert!(d.sqrt() > 1e-3);
        assert!(frame_residuals(&b).max() < 1e-12);
    }

    #[test]
    fn heisenberg_flat_everywhere() {
        let h = make_heisenberg(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in h.sample_points(20, &mut rng) {
            let g = PointGeometry::compute(&h, &p, 2, Scheme::Central4 { h: 1e-3 }).unwrap();
            let r = g.curv().riem.iter().flatten().flatten().flatten().map(|x| x.value().abs()).fold(0.0, f64::max);
            assert!(r < 1e-8, "{r}");
            for x in g.conn.torsion.iter().flatten() {
                assert!(x.value().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn round_sphere_homogeneous_and_pseudo_einstein() {
        let s5 = make_sphere(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut svals = Vec::new();
        for p in s5.sample_points(50, &mut rng) {
            let k = curvature(&s5, &p, Scheme::Central4 { h: 1e-3 }).unwrap();
            svals.push(k.scalar.value());
            for x in k.rc0.iter().flatten() {
                assert!(x.value().abs() < 1e-6, "{} at {:?}", x.value(), p);
            }
        }
        let mean = svals.iter().sum::<f64>() / svals.len() as f64;
        assert!(svals.iter().all(|s| (s - mean).abs() < 1e-6));
        let p = ChartPoint { chart: 1, coords: vec![0.1, 0.2, -0.3, 0.0, 0.25] };
        let (a, b) = bianchi_residuals_at(&s5, &p, Scheme::Central4 { h: 1e-3 }).unwrap();
        assert!(a < 1e-6 && b < 1e-6);
    }

    #[test]
    fn curvature_identities_converge_on_conformal_sphere() {
        let c = conformal_s5();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in c.sample_points(5, &mut rng) {
            let study = curvature_convergence(&c, &p, &DEFAULT_STEPS).unwrap();
            assert!(study.passes(3.5), "{study:?}");
            let g = PointGeometry::compute(&c, &p, 2, Scheme::Central4 { h: 1e-3 }).unwrap();
            let kr = curvature_residuals(&g.conn, g.curv());
            assert!(kr.max() < 1e-8, "{kr:?}");
            let cr = connection_residuals(&g.frame, &g.conn);
            assert!(cr.torsion_sym.max(cr.torsion_trace).max(cr.torsion_anti_j) < 1e-9);
        }
    }

    #[test]
    fn bianchi_residuals_shrink_with_h() {
        let c = conformal_s5();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in c.sample_points(20, &mut rng) {
            let r: Vec<(f64, f64)> = [4e-3, 2e-3]
                .iter()
                .map(|&h| bianchi_residuals_at(&c, &p, Scheme::Central4 { h }).unwrap())
                .collect();
            let exact = bianchi_residuals_at(&c, &p, Scheme::Exact).unwrap();
            assert!(exact.0 < 1e-9 && exact.1 < 1e-9, "{exact:?}");
            for k in 0..2 {
                let (coarse, fine) = if k == 0 { (r[0].0, r[1].0) } else { (r[0].1, r[1].1) };
                assert!(fine < 1e-4 && (fine < 1e-8 || coarse / fine >= 10.0), "{coarse} {fine}");
            }
        }
    }

    #[test]
    fn axiom_solution_independent_of_start() {
        let c = conformal_s5();
        let p = ChartPoint { chart: 0, coords: vec![0.2, 0.1, -0.3, 0.05, 0.4] };
        let fp = adapted_frame(&c, &p).unwrap();
        let cp = connection_from_frame(&fp).unwrap();
        let (ch, cx) = axiom_inputs(&fp);
        let sys = AxiomSystem::get(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let x0: Vec<f64> = (0..64).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y0: Vec<f64> = (0..16).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let (x, y) = sys.solve_from(&ch, &cx, &x0, &y0);
            for a in 0..4 {
                for b in 0..4 {
                    for d in 0..4 {
                        assert!((x[(a * 4 + b) * 4 + d] - cp.gamma[a][b][d].value()).abs() < 1e-12);
                    }
                    assert!((y[a * 4 + b] - cp.gamma[4][a][b].value()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn curvature_covariant_under_unitary_frame_change() {
        let c = conformal_s5();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = random_unitary_rotation(2, &mut rng);
        for p in c.sample_points(5, &mut rng) {
            let a = PointGeometry::compute(&c, &p, 2, Scheme::Exact).unwrap();
            let b = PointGeometry::compute_rotated(&c, &p, 2, Scheme::Exact, Some(&q)).unwrap();
            let (ka, kb) = (a.curv(), b.curv());
            assert!((ka.scalar.value() - kb.scalar.value()).abs() < 1e-9);
            for (x, y) in [(&ka.ric, &kb.ric), (&ka.rc0, &kb.rc0), (&a.conn.torsion, &b.conn.torsion)] {
                for i in 0..4 {
                    for j in 0..4 {
                        let mut t = 0.0;
                        for k in 0..4 {
                            for l in 0..4 {
                                t += q[k][i] * q[l][j] * x[k][l].value();
                            }
                        }
                        assert!((t - y[i][j].value()).abs() < 1e-9);
                    }
                }
            }
            let n2 = |t: &[Vec<Jet>]| t.iter().flatten().map(|x| x.value().powi(2)).sum::<f64>();
            assert!((n2(&ka.rc0) - n2(&kb.rc0)).abs() < 1e-9);
        }
    }

    #[test]
    fn convergence_study_orders() {
        let s = ConvergenceStudy::new(vec![4e-3, 2e-3, 1e-3], vec![1.6e-6, 1e-7, 6.25e-9], 1e-12);
        assert!((s.min_order() - 4.0).abs() < 1e-9);
        assert!(s.passes(3.5));
        let s = ConvergenceStudy::new(vec![4e-3, 2e-3, 1e-3], vec![1e-6, 2.5e-7, 6.25e-8], 1e-12);
        assert!(!s.passes(3.5));
    }
}
