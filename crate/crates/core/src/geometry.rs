//! Discrete Riemannian geometry on the periodic grid.
//!
//! Curvature uses the convention `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z`,
//! `R_ijkl = ⟨R(∂_i,∂_j)∂_k, ∂_l⟩`, so `R_ijji` is the sectional curvature and
//! `Ric_jk = g^il R_ijkl`. The covariant tensor is assembled from second
//! derivatives of `g` in a form whose index symmetries hold exactly.

use rayon::prelude::*;

use crate::deriv::Differentiator;
use crate::error::{Error, Result};
use crate::field::{MetricField, ScalarField, TensorField, Variance};
use crate::grid::Grid;

/// Curvature data of one metric, packed per node.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub grid: Grid,
    n: usize,
    stride: usize,
    packed: Vec<f64>,
    g: Vec<f64>,
}

// Offsets inside one node's packed block.
struct Layout {
    ginv: usize,
    sqrt_det: usize,
    dg: usize,
    gamma: usize,
    rm: usize,
    ric: usize,
    scalar: usize,
    stride: usize,
}

impl Layout {
    fn new(n: usize) -> Self {
        let nn = n * n;
        let n3 = nn * n;
        let ginv = 0;
        let sqrt_det = ginv + nn;
        let dg = sqrt_det + 1;
        let gamma = dg + n3;
        let rm = gamma + n3;
        let ric = rm + n3 * n;
        let scalar = ric + nn;
        Self {
            ginv,
            sqrt_det,
            dg,
            gamma,
            rm,
            ric,
            scalar,
            stride: scalar + 1,
        }
    }
}

/// Determinant and inverse of a small symmetric block; `None` if not positive definite.
pub(crate) fn spd_inverse(b: &[f64], n: usize) -> Option<(f64, [f64; 9])> {
    let mut inv = [0.0; 9];
    match n {
        2 => {
            let det = b[0] * b[3] - b[1] * b[2];
            if !(b[0] > 0.0 && det > 0.0) {
                return None;
            }
            inv[0] = b[3] / det;
            inv[1] = -b[1] / det;
            inv[2] = -b[2] / det;
            inv[3] = b[0] / det;
            Some((det, inv))
        }
        3 => {
            let m2 = b[0] * b[4] - b[1] * b[3];
            let c00 = b[4] * b[8] - b[5] * b[7];
            let c01 = b[5] * b[6] - b[3] * b[8];
            let c02 = b[3] * b[7] - b[4] * b[6];
            let det = b[0] * c00 + b[1] * c01 + b[2] * c02;
            if !(b[0] > 0.0 && m2 > 0.0 && det > 0.0) {
                return None;
            }
            inv[0] = c00 / det;
            inv[1] = (b[2] * b[7] - b[1] * b[8]) / det;
            inv[2] = (b[1] * b[5] - b[2] * b[4]) / det;
            inv[3] = c01 / det;
            inv[4] = (b[0] * b[8] - b[2] * b[6]) / det;
            inv[5] = (b[2] * b[3] - b[0] * b[5]) / det;
            inv[6] = c02 / det;
            inv[7] = (b[1] * b[6] - b[0] * b[7]) / det;
            inv[8] = (b[0] * b[4] - b[1] * b[3]) / det;
            Some((det, inv))
        }
        _ => None,
    }
}

fn check_spd(g: &MetricField) -> Result<()> {
    let n = g.dim();
    for p in 0..g.grid.len() {
        let b = g.at(p);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(g.degenerate(p, "non-finite component".into()));
        }
        if spd_inverse(b, n).is_none() {
            return Err(g.degenerate(p, "block is not positive definite".into()));
        }
    }
    Ok(())
}

impl Geometry {
    /// Inverse metric, volume density, Christoffel symbols and curvature.
    pub fn compute(g: &MetricField, d: &Differentiator) -> Result<Self> {
        if *d.grid() != g.grid {
            return Err(Error::GridMismatch);
        }
        check_spd(g)?;
        let n = g.dim();
        let nn = n * n;
        let lay = Layout::new(n);
        let dg_axis: Vec<Vec<f64>> = (0..n).map(|a| d.diff(&g.data, nn, a)).collect();
        // ddg[a * n + b] = D_a D_b g, filled for a <= b and mirrored.
        let mut ddg: Vec<Option<Vec<f64>>> = vec![None; nn];
        for a in 0..n {
            for b in a..n {
                ddg[a * n + b] = Some(d.diff(&dg_axis[b], nn, a));
            }
        }
        let dd = |a: usize, b: usize| -> &Vec<f64> {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            ddg[lo * n + hi].as_ref().unwrap()
        };
        let dd_refs: Vec<&Vec<f64>> = (0..nn).map(|ab| dd(ab / n, ab % n)).collect();

        let mut packed = vec![0.0; lay.stride * g.grid.len()];
        packed
            .par_chunks_mut(lay.stride)
            .with_min_len(64)
            .enumerate()
            .for_each(|(p, out)| {
                let gb = g.at(p);
                let (det, ginv) = spd_inverse(gb, n).expect("checked above");
                out[lay.ginv..lay.ginv + nn].copy_from_slice(&ginv[..nn]);
                out[lay.sqrt_det] = det.sqrt();
                // D_a g_ij
                let mut dgp = [0.0; 27];
                for a in 0..n {
                    dgp[a * nn..(a + 1) * nn].copy_from_slice(&dg_axis[a][p * nn..(p + 1) * nn]);
                }
                out[lay.dg..lay.dg + nn * n].copy_from_slice(&dgp[..nn * n]);
                // first kind: low[l][i][j] = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
                let mut low = [0.0; 27];
                for l in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            low[(l * n + i) * n + j] = 0.5
                                * (dgp[i * nn + j * n + l] + dgp[j * nn + i * n + l]
                                    - dgp[l * nn + i * n + j]);
                        }
                    }
                }
                let mut gam = [0.0; 27];
                for k in 0..n {
                    for ij in 0..nn {
                        let mut s = 0.0;
                        for l in 0..n {
                            s += ginv[k * n + l] * low[l * nn + ij];
                        }
                        gam[k * nn + ij] = s;
                    }
                }
                out[lay.gamma..lay.gamma + nn * n].copy_from_slice(&gam[..nn * n]);
                // second derivatives at this node: h(a,b,i,j)
                let h = |a: usize, b: usize, i: usize, j: usize| dd_refs[a * n + b][p * nn + i * n + j];
                // Γ^p_jk Γ_{p,il}
                let gg = |j: usize, k: usize, i: usize, l: usize| {
                    let mut s = 0.0;
                    for q in 0..n {
                        s += gam[q * nn + j * n + k] * low[q * nn + i * n + l];
                    }
                    s
                };
                // independent components (i<j, k<l, (i,j) <= (k,l)) filled by symmetry
                let rm = &mut out[lay.rm..lay.rm + nn * nn];
                rm.fill(0.0);
                let at = |i: usize, j: usize, k: usize, l: usize| ((i * n + j) * n + k) * n + l;
                for i in 0..n {
                    for j in (i + 1)..n {
                        for k in i..n {
                            for l in (k + 1)..n {
                                if (k, l) < (i, j) {
                                    continue;
                                }
                                let second = 0.5
                                    * (h(k, i, l, j) + h(l, j, k, i) - h(k, j, l, i) - h(l, i, k, j));
                                let v = second + gg(i, k, j, l) - gg(j, k, i, l);
                                for (a, b, c, e) in [(i, j, k, l), (k, l, i, j)] {
                                    rm[at(a, b, c, e)] = v;
                                    rm[at(b, a, c, e)] = -v;
                                    rm[at(a, b, e, c)] = -v;
                                    rm[at(b, a, e, c)] = v;
                                }
                            }
                        }
                    }
                }
                let mut ric = [0.0; 9];
                for j in 0..n {
                    for k in 0..n {
                        let mut s = 0.0;
                        for i in 0..n {
                            for l in 0..n {
                                s += ginv[i * n + l] * rm[((i * n + j) * n + k) * n + l];
                            }
                        }
                        ric[j * n + k] = s;
                    }
                }
                for j in 0..n {
                    for k in (j + 1)..n {
                        let s = 0.5 * (ric[j * n + k] + ric[k * n + j]);
                        ric[j * n + k] = s;
                        ric[k * n + j] = s;
                    }
                }
                let mut r = 0.0;
                for jk in 0..nn {
                    r += ginv[jk] * ric[jk];
                }
                out[lay.ric..lay.ric + nn].copy_from_slice(&ric[..nn]);
                out[lay.scalar] = r;
            });
        Ok(Self {
            grid: g.grid,
            n,
            stride: lay.stride,
            packed,
            g: g.data.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn block(&self, p: usize) -> &[f64] {
        &self.packed[p * self.stride..(p + 1) * self.stride]
    }

    pub fn metric_at(&self, p: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.g[p * nn..(p + 1) * nn]
    }

    pub fn metric(&self) -> MetricField {
        MetricField {
            grid: self.grid,
            data: self.g.clone(),
        }
    }

    pub fn ginv_at(&self, p: usize) -> &[f64] {
        let l = Layout::new(self.n);
        &self.block(p)[l.ginv..l.ginv + self.n * self.n]
    }

    pub fn sqrt_det_at(&self, p: usize) -> f64 {
        self.block(p)[Layout::new(self.n).sqrt_det]
    }

    /// `D_a g_ij` with index order `[a][i][j]`.
    pub fn dg_at(&self, p: usize) -> &[f64] {
        let l = Layout::new(self.n);
        &self.block(p)[l.dg..l.dg + self.n.pow(3)]
    }

    /// `Γ^k_ij` with index order `[k][i][j]`.
    pub fn gamma_at(&self, p: usize) -> &[f64] {
        let l = Layout::new(self.n);
        &self.block(p)[l.gamma..l.gamma + self.n.pow(3)]
    }

    pub fn riemann_at(&self, p: usize) -> &[f64] {
        let l = Layout::new(self.n);
        &self.block(p)[l.rm..l.rm + self.n.pow(4)]
    }

    pub fn ricci_at(&self, p: usize) -> &[f64] {
        let l = Layout::new(self.n);
        &self.block(p)[l.ric..l.ric + self.n * self.n]
    }

    pub fn scalar_at(&self, p: usize) -> f64 {
        self.block(p)[Layout::new(self.n).scalar]
    }

    fn gather(&self, sig: Vec<Variance>, f: impl Fn(usize) -> Vec<f64> + Sync) -> TensorField {
        let data: Vec<f64> = (0..self.grid.len()).flat_map(f).collect();
        TensorField {
            grid: self.grid,
            signature: sig,
            data,
        }
    }

    pub fn christoffel(&self) -> TensorField {
        use Variance::*;
        self.gather(vec![Contravariant, Covariant, Covariant], |p| {
            self.gamma_at(p).to_vec()
        })
    }

    pub fn riemann(&self) -> TensorField {
        self.gather(vec![Variance::Covariant; 4], |p| self.riemann_at(p).to_vec())
    }

    pub fn ricci(&self) -> TensorField {
        self.gather(vec![Variance::Covariant; 2], |p| self.ricci_at(p).to_vec())
    }

    pub fn scalar(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: (0..self.grid.len()).map(|p| self.scalar_at(p)).collect(),
        }
    }

    pub fn sqrt_det(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: (0..self.grid.len()).map(|p| self.sqrt_det_at(p)).collect(),
        }
    }

    /// `W^k = g^ij Γ^k_ij`, the DeTurck vector field against a flat background.
    pub fn deturck_vector(&self) -> Vec<f64> {
        let n = self.n;
        let nn = n * n;
        let mut w = vec![0.0; n * self.grid.len()];
        for p in 0..self.grid.len() {
            let gi = self.ginv_at(p);
            let gam = self.gamma_at(p);
            for k in 0..n {
                let mut s = 0.0;
                for ij in 0..nn {
                    s += gi[ij] * gam[k * nn + ij];
                }
                w[p * n + k] = s;
            }
        }
        w
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if *grid != self.grid {
            Err(Error::GridMismatch)
        } else {
            Ok(())
        }
    }

    /// Covariant Hessian `D_a D_b f − Γ^k_ab D_k f`, exactly symmetric.
    pub fn hessian(&self, d: &Differentiator, f: &ScalarField) -> Result<TensorField> {
        self.check_grid(&f.grid)?;
        let n = self.n;
        let df = d.gradient(&f.values);
        let dd: Vec<Vec<f64>> = (0..n).map(|a| d.diff(&df, n, a)).collect();
        let mut out = vec![0.0; n * n * self.grid.len()];
        for p in 0..self.grid.len() {
            let gam = self.gamma_at(p);
            for a in 0..n {
                for b in a..n {
                    let mut v = dd[a][p * n + b];
                    for k in 0..n {
                        v -= gam[k * n * n + a * n + b] * df[p * n + k];
                    }
                    out[p * n * n + a * n + b] = v;
                    out[p * n * n + b * n + a] = v;
                }
            }
        }
        TensorField::covariant(self.grid, 2, out)
    }

    /// `Ric + ∇²f`.
    pub fn weighted_ricci(&self, d: &Differentiator, f: &ScalarField) -> Result<TensorField> {
        self.hessian(d, f)?.add(&self.ricci())
    }

    /// `∇T` with the new derivative index placed first.
    pub fn covariant_derivative(&self, d: &Differentiator, t: &TensorField) -> Result<TensorField> {
        self.check_grid(&t.grid)?;
        let n = self.n;
        let nn = n * n;
        let k = t.rank();
        let comps = t.components();
        let partial: Vec<Vec<f64>> = (0..n).map(|a| d.diff(&t.data, comps, a)).collect();
        let out_comps = comps * n;
        let mut out = vec![0.0; out_comps * self.grid.len()];
        out.par_chunks_mut(out_comps)
            .with_min_len(64)
            .enumerate()
            .for_each(|(p, o)| {
                let gam = self.gamma_at(p);
                let tp = &t.data[p * comps..(p + 1) * comps];
                for a in 0..n {
                    for c in 0..comps {
                        let mut v = partial[a][p * comps + c];
                        for r in 0..k {
                            let s = n.pow((k - 1 - r) as u32);
                            let ir = (c / s) % n;
                            let base = c - ir * s;
                            for q in 0..n {
                                match t.signature[r] {
                                    // − Γ^q_{a i_r} T_{..q..}
                                    Variance::Covariant => {
                                        v -= gam[q * nn + a * n + ir] * tp[base + q * s];
                                    }
                                    // + Γ^{i_r}_{a q} T^{..q..}
                                    Variance::Contravariant => {
                                        v += gam[ir * nn + a * n + q] * tp[base + q * s];
                                    }
                                }
                            }
                        }
                        o[a * comps + c] = v;
                    }
                }
            });
        let mut sig = vec![Variance::Covariant];
        sig.extend_from_slice(&t.signature);
        TensorField::new(self.grid, sig, out)
    }

    /// `∇^k T` for `k <= 3`.
    pub fn covariant_derivative_iter(
        &self,
        d: &Differentiator,
        t: &TensorField,
        k: usize,
    ) -> Result<TensorField> {
        if k > 3 {
            return Err(Error::RankOverflow(k));
        }
        let mut cur = t.clone();
        for _ in 0..k {
            cur = self.covariant_derivative(d, &cur)?;
        }
        Ok(cur)
    }

    /// `|T|²_g` with every index contracted through the metric.
    pub fn norm_sq(&self, t: &TensorField) -> Result<ScalarField> {
        self.check_grid(&t.grid)?;
        let n = self.n;
        let k = t.rank();
        let comps = t.components();
        let values = (0..self.grid.len())
            .into_par_iter()
            .with_min_len(64)
            .map(|p| {
                let tp = &t.data[p * comps..(p + 1) * comps];
                let mut flipped = tp.to_vec();
                for r in 0..k {
                    let m = match t.signature[r] {
                        Variance::Covariant => self.ginv_at(p),
                        Variance::Contravariant => self.metric_at(p),
                    };
                    flipped = contract_index(&flipped, n, k, r, m);
                }
                tp.iter().zip(&flipped).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        Ok(ScalarField {
            grid: self.grid,
            values,
        })
    }

    pub fn norm(&self, t: &TensorField) -> Result<ScalarField> {
        Ok(self.norm_sq(t)?.map(|v| v.max(0.0).sqrt()))
    }

    /// `g^ij D_i f D_j f`.
    pub fn grad_norm_sq(&self, d: &Differentiator, f: &ScalarField) -> Result<ScalarField> {
        self.check_grid(&f.grid)?;
        let n = self.n;
        let df = d.gradient(&f.values);
        let values = (0..self.grid.len())
            .map(|p| quad(self.ginv_at(p), &df[p * n..(p + 1) * n], &df[p * n..(p + 1) * n], n))
            .collect();
        Ok(ScalarField {
            grid: self.grid,
            values,
        })
    }

    /// Divergence-form Laplacian `(1/√g) D_i(√g g^ij D_j u)`.
    pub fn laplacian(&self, d: &Differentiator, u: &ScalarField) -> Result<ScalarField> {
        self.check_grid(&u.grid)?;
        let w = self.sqrt_det();
        self.weighted_div_grad(d, &w.values, &u.values)
    }

    /// Drift Laplacian `Δu − ⟨∇f, ∇u⟩` in the weighted divergence form
    /// `(1/(√g e^{−f})) D_i(√g e^{−f} g^ij D_j u)`, which is self-adjoint
    /// under the discrete measure `e^{−f} dV`.
    pub fn drift_laplacian(
        &self,
        d: &Differentiator,
        f: &ScalarField,
        u: &ScalarField,
    ) -> Result<ScalarField> {
        self.check_grid(&f.grid)?;
        self.check_grid(&u.grid)?;
        let w: Vec<f64> = (0..self.grid.len())
            .map(|p| self.sqrt_det_at(p) * (-f.values[p]).exp())
            .collect();
        self.weighted_div_grad(d, &w, &u.values)
    }

    fn weighted_div_grad(&self, d: &Differentiator, w: &[f64], u: &[f64]) -> Result<ScalarField> {
        let n = self.n;
        let du = d.gradient(u);
        let mut flux = vec![0.0; n * self.grid.len()];
        for p in 0..self.grid.len() {
            let gi = self.ginv_at(p);
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += gi[i * n + j] * du[p * n + j];
                }
                flux[p * n + i] = w[p] * s;
            }
        }
        let mut values = vec![0.0; self.grid.len()];
        for i in 0..n {
            let di = d.diff(&flux, n, i);
            for p in 0..self.grid.len() {
                values[p] += di[p * n + i];
            }
        }
        for (v, wp) in values.iter_mut().zip(w) {
            *v /= wp;
        }
        Ok(ScalarField {
            grid: self.grid,
            values,
        })
    }

    /// `∫ φ dV_g`.
    pub fn integrate(&self, phi: &ScalarField) -> Result<f64> {
        self.check_grid(&phi.grid)?;
        let s: f64 = (0..self.grid.len())
            .map(|p| phi.values[p] * self.sqrt_det_at(p))
            .sum();
        Ok(s * self.grid.cell_volume())
    }

    /// `∫ φ e^{−f} dV_g`.
    pub fn weighted_integrate(&self, phi: &ScalarField, f: &ScalarField) -> Result<f64> {
        self.check_grid(&phi.grid)?;
        self.check_grid(&f.grid)?;
        let s: f64 = (0..self.grid.len())
            .map(|p| phi.values[p] * (-f.values[p]).exp() * self.sqrt_det_at(p))
            .sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn volume(&self) -> f64 {
        (0..self.grid.len()).map(|p| self.sqrt_det_at(p)).sum::<f64>() * self.grid.cell_volume()
    }

    /// `sup |Ric|_g`.
    pub fn sup_ricci(&self) -> f64 {
        self.norm(&self.ricci()).map(|s| s.max()).unwrap_or(f64::NAN)
    }

    /// `sup |Rm|_g`.
    pub fn sup_riemann(&self) -> f64 {
        self.norm(&self.riemann()).map(|s| s.max()).unwrap_or(f64::NAN)
    }
}

/// `Σ m_ij a_i b_j`.
#[inline]
pub(crate) fn quad(m: &[f64], a: &[f64], b: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += m[i * n + j] * a[i] * b[j];
        }
    }
    s
}

/// Applies `m` to index `r` of a rank-`k` component block.
pub(crate) fn contract_index(t: &[f64], n: usize, k: usize, r: usize, m: &[f64]) -> Vec<f64> {
    let s = n.pow((k - 1 - r) as u32);
    let mut out = vec![0.0; t.len()];
    for (c, o) in out.iter_mut().enumerate() {
        let q = (c / s) % n;
        let base = c - q * s;
        let mut v = 0.0;
        for pi in 0..n {
            v += m[q * n + pi] * t[base + pi * s];
        }
        *o = v;
    }
    out
}

pub fn christoffel(g: &MetricField, d: &Differentiator) -> Result<TensorField> {
    Ok(Geometry::compute(g, d)?.christoffel())
}

pub fn riemann(g: &MetricField, d: &Differentiator) -> Result<TensorField> {
    Ok(Geometry::compute(g, d)?.riemann())
}

pub fn ricci(g: &MetricField, d: &Differentiator) -> Result<TensorField> {
    Ok(Geometry::compute(g, d)?.ricci())
}

pub fn scalar_curvature(g: &MetricField, d: &Differentiator) -> Result<ScalarField> {
    Ok(Geometry::compute(g, d)?.scalar())
}

pub fn weighted_ricci(g: &MetricField, f: &ScalarField, d: &Differentiator) -> Result<TensorField> {
    Geometry::compute(g, d)?.weighted_ricci(d, f)
}

pub fn covariant_derivative(t: &TensorField, g: &MetricField, d: &Differentiator) -> Result<TensorField> {
    Geometry::compute(g, d)?.covariant_derivative(d, t)
}

pub fn tensor_norm(t: &TensorField, g: &MetricField, d: &Differentiator) -> Result<ScalarField> {
    Geometry::compute(g, d)?.norm(t)
}

pub fn drift_laplacian_apply(
    g: &MetricField,
    f: &ScalarField,
    u: &ScalarField,
    d: &Differentiator,
) -> Result<ScalarField> {
    Geometry::compute(g, d)?.drift_laplacian(d, f, u)
}

/// Volume density `√det g` without any derivatives.
pub fn volume_density(g: &MetricField) -> Result<Vec<f64>> {
    let n = g.dim();
    (0..g.grid.len())
        .map(|p| {
            spd_inverse(g.at(p), n)
                .map(|(det, _)| det.sqrt())
                .ok_or_else(|| g.degenerate(p, "block is not positive definite".into()))
        })
        .collect()
}

pub fn integrate(phi: &ScalarField, g: &MetricField) -> Result<f64> {
    if phi.grid != g.grid {
        return Err(Error::GridMismatch);
    }
    let w = volume_density(g)?;
    Ok(phi.values.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() * g.grid.cell_volume())
}

pub fn weighted_integrate(phi: &ScalarField, g: &MetricField, f: &ScalarField) -> Result<f64> {
    if phi.grid != g.grid || f.grid != g.grid {
        return Err(Error::GridMismatch);
    }
    let w = volume_density(g)?;
    Ok((0..g.grid.len())
        .map(|p| phi.values[p] * (-f.values[p]).exp() * w[p])
        .sum::<f64>()
        * g.grid.cell_volume())
}
