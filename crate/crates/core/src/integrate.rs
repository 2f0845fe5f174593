//! Quadrature on compact models in generalized Hopf coordinates
//! `z_j = r_j(t) e^{iφ_j}`: Gauss–Legendre in the latitude variables
//! `t_j = cos² α_j`, uniform nodes in the periodic angles `φ`. Node weights carry the density
//! of `Vol_θ = θ ∧ ω^n` with respect to the angular coordinates.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::calculus::covariant_jet;
use crate::connection::{xi_index, PointGeometry, Scheme};
use crate::error::{CrError, Result};
use crate::jet::Jet;
use crate::manifold::{ChartPoint, ManifoldModel};
use crate::poly::ScalarFieldSpec;

pub const TOL_INT: f64 = 1e-6;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    for i in 0..(k + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=k {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 0 { 1.0 } else if k == 1 { z } else { p1 };
            let pkm1 = if k == 1 { 1.0 } else { p0 };
            dp = k as f64 * (z * pk - pkm1) / (z * z - 1.0);
            let dz = pk / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[k - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[k - 1 - i] = wi;
    }
    (x, w)
}

#[derive(Clone, Debug)]
pub struct GridNode {
    pub point: ChartPoint,
    /// Quadrature weight times the `Vol_θ` density.
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub n: usize,
    pub resolution: usize,
    pub nodes: Vec<GridNode>,
    pub total_volume: f64,
}

/// Rayon pool honouring `CRGEOM_THREADS`.
pub fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = std::env::var("CRGEOM_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
            b = b.num_threads(t.max(1));
        }
        b.build().expect("thread pool")
    })
}

/// Ambient point and its Jacobian `∂x/∂(t, φ)` (columns), with
/// `|z_j|² = t_j Π_{i<j} (1 - t_i)` for `j < n` and `|z_n|² = Π (1 - t_i)`.
/// In these variables the sphere's measure is polynomial, so Gauss–Legendre
/// in `t` is exact for polynomial integrands.
fn hopf(n: usize, t: &[f64], phi: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = n + 1;
    let mut r = vec![0.0; k];
    let mut dr = vec![vec![0.0; n]; k];
    let mut prefix = 1.0;
    for j in 0..k {
        let s2 = if j < n { prefix * t[j] } else { prefix };
        r[j] = s2.sqrt();
        for i in 0..n.min(j + 1) {
            dr[j][i] = if i < j { -0.5 * r[j] / (1.0 - t[i]) } else { 0.5 * r[j] / t[j] };
        }
        if j < n {
            prefix *= 1.0 - t[j];
        }
    }
    let dim = 2 * n + 1;
    let mut x = vec![0.0; 2 * k];
    let mut jac = vec![vec![0.0; dim]; 2 * k];
    for j in 0..k {
        let (s, c) = phi[j].sin_cos();
        x[2 * j] = r[j] * c;
        x[2 * j + 1] = r[j] * s;
        for i in 0..n {
            jac[2 * j][i] = dr[j][i] * c;
            jac[2 * j + 1][i] = dr[j][i] * s;
        }
        jac[2 * j][n + j] = -r[j] * s;
        jac[2 * j + 1][n + j] = r[j] * c;
    }
    (x, jac)
}

fn det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).expect("nonempty");
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            d = -d;
        }
        d *= a[c][c];
        for r in (c + 1)..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    d
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `Vol_θ` density per unit chart volume at `p`: `n! / |det E|` where the
/// columns of `E` are the adapted frame.
pub fn chart_density(g: &PointGeometry) -> f64 {
    let e: Vec<Vec<f64>> = g.frame.frame.iter().map(|r| r.iter().map(Jet::value).collect()).collect();
    factorial(g.n()) / det(e).abs()
}

/// `Vol_θ` density per unit chart volume from `θ` and `dθ` alone:
/// `|θ ∧ (dθ)^n| = n! |Pf [[dθ, θ], [-θ, 0]]|` and `ω = ½ dθ` on `H`.
pub fn volume_density(m: &ManifoldModel, p: &ChartPoint) -> f64 {
    let mj = m.eval_jets(p, 0);
    let dim = m.dim();
    let mut a = vec![vec![0.0; dim + 1]; dim + 1];
    for i in 0..dim {
        for l in 0..dim {
            a[i][l] = mj.dtheta[i][l].value();
        }
        a[i][dim] = mj.theta[i].value();
        a[dim][i] = -mj.theta[i].value();
    }
    let n = m.n();
    factorial(n) / 2f64.powi(n as i32) * det(a).abs().sqrt()
}

struct Layout {
    n: usize,
    r: usize,
    a_nodes: Vec<f64>,
    a_w: Vec<f64>,
    dphi: f64,
    count: usize,
}

impl Layout {
    fn new(m: &ManifoldModel, r: usize) -> Result<Self> {
        if !m.is_compact() {
            return Err(CrError::NotCompact);
        }
        if r < 4 {
            return Err(CrError::Resolution(r));
        }
        let (gx, gw) = gauss_legendre(r);
        Ok(Layout {
            n: m.n(),
            r,
            a_nodes: gx.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            a_w: gw.iter().map(|w| 0.5 * w).collect(),
            dphi: 2.0 * std::f64::consts::PI / r as f64,
            count: r.pow(m.dim() as u32),
        })
    }

    // latitude digits are the least significant, then the periodic ones
    fn node(&self, m: &ManifoldModel, idx: usize) -> GridNode {
        let (n, r) = (self.n, self.r);
        let dim = 2 * n + 1;
        let mut rest = idx;
        let mut lat = vec![0.0; n];
        let mut phi = vec![0.0; n + 1];
        let mut w = self.dphi.powi(n as i32 + 1);
        for a in lat.iter_mut() {
            let k = rest % r;
            rest /= r;
            *a = self.a_nodes[k];
            w *= self.a_w[k];
        }
        for p in phi.iter_mut() {
            let k = rest % r;
            rest /= r;
            *p = self.dphi * (k as f64 + 0.5);
        }
        let (x, jac) = hopf(n, &lat, &phi);
        let pt = m.to_chart(&x);
        let d = m.chart_differential(&x, pt.chart);
        let tj: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|c| (0..x.len()).map(|k| d[i][k] * jac[k][c]).sum()).collect())
            .collect();
        let weight = w * volume_density(m, &pt) * det(tj).abs();
        GridNode { point: pt, weight }
    }
}

pub fn build_grid(m: &ManifoldModel, r: usize) -> Result<QuadratureGrid> {
    let lay = Layout::new(m, r)?;
    let nodes: Vec<GridNode> = pool().install(|| (0..lay.count).into_par_iter().map(|i| lay.node(m, i)).collect());
    let total_volume = pairwise_sum(&nodes.iter().map(|n| n.weight).collect::<Vec<_>>());
    Ok(QuadratureGrid { n: lay.n, resolution: r, nodes, total_volume })
}

/// `∫ 1 dVol_θ` at resolution `r` without storing the nodes.
pub fn grid_volume(m: &ManifoldModel, r: usize) -> Result<f64> {
    let lay = Layout::new(m, r)?;
    let (sums, _) = reduce_indexed(lay.count, 1, 0, |i, s, _| {
        s[0] = lay.node(m, i).weight;
        Ok(())
    })?;
    Ok(sums[0])
}

const CHUNK: usize = 256;

fn pairwise_rows(buf: &[f64], width: usize, out: &mut [f64]) {
    let rows = buf.len() / width;
    if rows <= 8 {
        out.iter_mut().for_each(|o| *o = 0.0);
        for row in buf.chunks(width) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        return;
    }
    let mid = rows / 2;
    let mut right = vec![0.0; width];
    pairwise_rows(&buf[..mid * width], width, out);
    pairwise_rows(&buf[mid * width..], width, &mut right);
    out.iter_mut().zip(&right).for_each(|(o, v)| *o += v);
}

/// Deterministic reduction over `count` items: `f(i, sums, maxes)` fills one
/// row of summands and one row of maximands. Sums use a fixed tree over
/// fixed-size chunks, so results do not depend on the thread count.
pub fn reduce_indexed(
    count: usize,
    nsum: usize,
    nmax: usize,
    f: impl Fn(usize, &mut [f64], &mut [f64]) -> Result<()> + Sync,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let chunks = count.div_ceil(CHUNK);
    let parts: Result<Vec<(Vec<f64>, Vec<f64>)>> = pool().install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(count);
                let mut buf = vec![0.0; (hi - lo) * nsum];
                let mut mx = vec![f64::NEG_INFINITY; nmax];
                let mut row = vec![0.0; nmax];
                for i in lo..hi {
                    let s = &mut buf[(i - lo) * nsum..(i - lo + 1) * nsum];
                    row.iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
                    f(i, s, &mut row)?;
                    if let Some(v) = s.iter().find(|v| !v.is_finite()).or_else(|| row.iter().find(|v| v.is_nan())) {
                        return Err(CrError::NonFinite { node: i, value: *v });
                    }
                    mx.iter_mut().zip(&row).for_each(|(m, v)| *m = m.max(*v));
                }
                let mut out = vec![0.0; nsum];
                pairwise_rows(&buf, nsum.max(1), &mut out);
                Ok((out, mx))
            })
            .collect()
    });
    let parts = parts?;
    let mut sums = vec![0.0; nsum];
    if nsum > 0 {
        let flat: Vec<f64> = parts.iter().flat_map(|p| p.0.iter().copied()).collect();
        pairwise_rows(&flat, nsum, &mut sums);
    }
    let mut maxes = vec![f64::NEG_INFINITY; nmax];
    for p in &parts {
        maxes.iter_mut().zip(&p.1).for_each(|(m, v)| *m = m.max(*v));
    }
    Ok((sums, maxes))
}

/// Weighted sums `∫ s_k dVol_θ` and plain maxima over the grid nodes.
pub fn reduce(
    grid: &QuadratureGrid,
    nsum: usize,
    nmax: usize,
    f: impl Fn(&GridNode, &mut [f64], &mut [f64]) -> Result<()> + Sync,
) -> Result<(Vec<f64>, Vec<f64>)> {
    reduce_indexed(grid.nodes.len(), nsum, nmax, |i, s, m| {
        let node = &grid.nodes[i];
        f(node, s, m)?;
        s.iter_mut().for_each(|x| *x *= node.weight);
        Ok(())
    })
}

/// Sum in a fixed binary tree over the index range.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Evaluates `f` at every node in parallel, preserving node order.
pub fn map_nodes<T: Send>(grid: &QuadratureGrid, f: impl Fn(&GridNode) -> Result<T> + Sync) -> Result<Vec<T>> {
    pool().install(|| grid.nodes.par_iter().map(&f).collect())
}

/// `∫ v dVol_θ` for per-node values.
pub fn integrate(grid: &QuadratureGrid, values: &[f64]) -> Result<f64> {
    assert_eq!(values.len(), grid.nodes.len(), "one value per node");
    let mut prod = Vec::with_capacity(values.len());
    for (i, (v, node)) in values.iter().zip(&grid.nodes).enumerate() {
        if !v.is_finite() {
            return Err(CrError::NonFinite { node: i, value: *v });
        }
        prod.push(v * node.weight);
    }
    Ok(pairwise_sum(&prod))
}

/// `∫ f dVol_θ` for a pointwise evaluator.
pub fn integrate_fn(grid: &QuadratureGrid, f: impl Fn(&GridNode) -> Result<f64> + Sync) -> Result<f64> {
    let v = map_nodes(grid, f)?;
    integrate(grid, &v)
}

/// Horizontal one-forms for the divergence self-test.
#[derive(Clone, Debug)]
pub enum OneFormSpec {
    Zero,
    /// `σ = f · dg|_H`.
    FDg(ScalarFieldSpec, ScalarFieldSpec),
    /// `σ(X) = df(JX) df(ξ)`.
    Vertical(ScalarFieldSpec),
}

/// `∇*σ = -Σ (∇_{e_a} σ)(e_a)` at a point with frame order 1.
pub fn codifferential(g: &PointGeometry, s: &OneFormSpec) -> Result<f64> {
    let n = g.n();
    let m = 2 * n;
    let amb = &g.frame.model.ambient;
    let sigma: Vec<Jet> = match s {
        OneFormSpec::Zero => return Ok(0.0),
        OneFormSpec::FDg(f, h) => {
            let fj = f.jet(amb).truncate(1);
            let hj = h.jet(amb);
            (0..m).map(|a| &fj * &g.frame.apply(a, &hj)).collect()
        }
        OneFormSpec::Vertical(f) => {
            let fj = f.jet(amb);
            let df: Vec<Jet> = (0..=xi_index(n)).map(|a| g.frame.apply(a, &fj)).collect();
            (0..m)
                .map(|x| {
                    let (jx, sx) = crate::connection::j_image(n, x);
                    (&df[jx] * &df[xi_index(n)]).scale(sx)
                })
                .collect()
        }
    };
    Ok(-g.divergence1(&sigma).value())
}

/// `|∫ ∇*σ dVol_θ|` for each form.
pub fn divergence_residual(m: &ManifoldModel, grid: &QuadratureGrid, forms: &[OneFormSpec]) -> Result<Vec<f64>> {
    let vals = map_nodes(grid, |node| {
        let g = PointGeometry::compute(m, &node.point, 1, Scheme::Exact)?;
        forms.iter().map(|s| codifferential(&g, s)).collect::<Result<Vec<f64>>>()
    })?;
    (0..forms.len())
        .map(|k| integrate(grid, &vals.iter().map(|v| v[k]).collect::<Vec<_>>()).map(f64::abs))
        .collect()
}

/// `∫ f dVol_θ` for a polynomial field.
pub fn integrate_field(grid: &QuadratureGrid, m: &ManifoldModel, f: &ScalarFieldSpec) -> Result<f64> {
    integrate_fn(grid, |node| Ok(f.eval(&m.ambient_point(&node.point))))
}

/// Grid-based values of `covariant_jet` quantities; used by the suites.
pub fn field_values(
    grid: &QuadratureGrid,
    m: &ManifoldModel,
    f: &ScalarFieldSpec,
    q: impl Fn(&crate::calculus::ScalarJet) -> f64 + Sync,
) -> Result<Vec<f64>> {
    map_nodes(grid, |node| {
        let g = PointGeometry::compute(m, &node.point, 1, Scheme::Exact)?;
        Ok(q(&covariant_jet(&g, f)?))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{make_conformal, make_heisenberg, make_sphere};

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let (x, w) = gauss_legendre(6);
        for p in 0..12 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "{p}");
        }
    }

    #[test]
    fn grid_bookkeeping_and_volume() {
        let s3 = make_sphere(1).unwrap();
        let g = build_grid(&s3, 8).unwrap();
        assert_eq!(g.nodes.len(), 512);
        assert!(g.nodes.iter().all(|n| n.weight > 0.0));
        let v = 2.0 * std::f64::consts::PI.powi(2);
        assert!((g.total_volume - v).abs() < 1e-12 * v, "{}", g.total_volume);
        let ones = vec![1.0; g.nodes.len()];
        assert_eq!(integrate(&g, &ones).unwrap(), g.total_volume);
        assert!(matches!(build_grid(&s3, 3), Err(CrError::Resolution(3))));
        assert!(matches!(build_grid(&make_heisenberg(1).unwrap(), 8), Err(CrError::NotCompact)));
    }

    #[test]
    fn odd_field_integrates_to_zero_and_non_finite_reported() {
        let s5 = make_sphere(2).unwrap();
        let g = build_grid(&s5, 6).unwrap();
        assert!(integrate_field(&g, &s5, &s5.field("x1").unwrap()).unwrap().abs() < 1e-11);
        let mut v = vec![1.0; g.nodes.len()];
        v[7] = f64::NAN;
        assert!(matches!(integrate(&g, &v), Err(CrError::NonFinite { node: 7, .. })));
    }

    #[test]
    fn conformal_volume_differs() {
        let s3 = make_sphere(1).unwrap();
        let c = make_conformal(&s3, &s3.field("0.3*x1").unwrap());
        let (a, b) = (build_grid(&s3, 8).unwrap(), build_grid(&c, 8).unwrap());
        assert!((a.total_volume - b.total_volume).abs() > 1e-3);
        // density scales by e^{(2n+2)u}
        let f = s3.field("1").unwrap();
        let _ = f;
        let direct = integrate_fn(&a, |node| {
            let x = s3.ambient_point(&node.point);
            Ok((4.0 * 0.3 * x[0]).exp())
        })
        .unwrap();
        assert!((direct - b.total_volume).abs() < 1e-10 * direct);
    }

    #[test]
    fn pfaffian_density_matches_frame_density() {
        let s5 = make_sphere(2).unwrap();
        let c = make_conformal(&s5, &s5.field("0.1*x1 + 0.05*x2*y3").unwrap());
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for m in [&s5, &c] {
            for p in m.sample_points(10, &mut rng) {
                let g = PointGeometry::compute(m, &p, 1, Scheme::Exact).unwrap();
                let (a, b) = (chart_density(&g), volume_density(m, &p));
                assert!((a - b).abs() < 1e-12 * a, "{a} {b}");
            }
        }
    }

    #[test]
    fn streaming_volume_self_consistent() {
        let s3 = make_sphere(1).unwrap();
        let c = make_conformal(&s3, &s3.field("0.2*x1*x2").unwrap());
        for m in [&s3, &c] {
            let (a, b) = (grid_volume(m, 16).unwrap(), grid_volume(m, 24).unwrap());
            assert!((a - b).abs() < 1e-10 * a, "{a} {b}");
        }
        let g = build_grid(&c, 8).unwrap();
        let v = grid_volume(&c, 8).unwrap();
        assert!((g.total_volume - v).abs() < 1e-13 * v);
    }

    #[test]
    fn reduction_sums_and_maxes() {
        let (s, m) = reduce_indexed(1000, 2, 1, |i, s, m| {
            s[0] = i as f64;
            s[1] = 1.0;
            m[0] = -((i as f64) - 400.0).abs();
            Ok(())
        })
        .unwrap();
        assert_eq!(s, vec![499500.0, 1000.0]);
        assert_eq!(m, vec![0.0]);
        let e = reduce_indexed(600, 1, 0, |i, s, _| {
            s[0] = if i == 300 { f64::INFINITY } else { 0.0 };
            Ok(())
        });
        assert!(matches!(e, Err(CrError::NonFinite { node: 300, .. })));
    }
}
