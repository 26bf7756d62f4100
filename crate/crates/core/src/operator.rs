//! Galerkin discretization of the projected problem: the ansatz `W_i = c_i PU_{δ_h,ξ_h}`,
//! error term `E`, linearized operator `L`, nonlinear term `N`, and the projections onto
//! `K = span{𝔢_h Pψ^ℓ_{δ_h,ξ_h}}` and its `H¹₀`-orthogonal complement.
//!
//! Every raw function is a pair `(f, v)` of a scalar profile and a constant component
//! vector `v ∈ ℝᵐ`.  Pairings use the exact Laplacians of the profiles:
//! `⟨f, g⟩_{H¹₀} = ∫(−Δf) g`, with `−ΔPU = U³` and `−ΔPψ = 3U²ψ`.

use crate::bubble::{Bubble, bubble_value, kernel_value};
use crate::coupling::{CouplingModel, SyncProfile};
use crate::domain::{DomainModel, Quadrature};
use crate::error::{Error, Result};
use crate::point::{self, Point};
use crate::ALPHA;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const DELTA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzState {
    pub lambda: Vec<f64>,
    pub d: Vec<f64>,
    pub xi: Vec<Point>,
    pub delta: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub eta: f64,
}

fn lambda_stars(lambda: &[f64], coupling: &CouplingModel) -> Vec<f64> {
    (0..coupling.q()).map(|h| coupling.group(h).map(|i| lambda[i]).fold(0.0, f64::max)).collect()
}

impl AnsatzState {
    /// State from rates: `δ_h = exp(−d_h/λ*_h)`, floored at [`DELTA_FLOOR`]; when the floor
    /// is active `d_h` is replaced by the rate consistent with the floored scale.
    pub fn new(lambda: Vec<f64>, d: Vec<f64>, xi: Vec<Point>, coupling: &CouplingModel, dom: &DomainModel) -> Result<Self> {
        let ls = lambda_stars(&lambda, coupling);
        if d.len() != coupling.q() {
            return Err(Error::InvalidState(format!("expected {} rates, got {}", coupling.q(), d.len())));
        }
        let mut dd = d.clone();
        let mut delta = Vec::with_capacity(d.len());
        for h in 0..d.len() {
            let mut dl = (-d[h] / ls[h]).exp();
            if dl < DELTA_FLOOR {
                dl = DELTA_FLOOR;
                dd[h] = -ls[h] * DELTA_FLOOR.ln();
            }
            delta.push(dl);
        }
        let s = AnsatzState { lambda, d: dd, xi, delta, lambda_star: ls, eta: dom.eta };
        s.validate(coupling, dom)?;
        Ok(s)
    }

    /// State from explicit scales, with `d_h = −λ*_h ln δ_h`.  Scale studies fix `δ` directly,
    /// so the rate window of `X_η` is not enforced; the centres must still lie in `X_η`.
    pub fn from_deltas(lambda: Vec<f64>, delta: Vec<f64>, xi: Vec<Point>, coupling: &CouplingModel, dom: &DomainModel) -> Result<Self> {
        let ls = lambda_stars(&lambda, coupling);
        if delta.len() != coupling.q() {
            return Err(Error::InvalidState(format!("expected {} scales, got {}", coupling.q(), delta.len())));
        }
        let d = (0..delta.len()).map(|h| -ls[h] * delta[h].ln()).collect();
        let s = AnsatzState { lambda, d, xi, delta, lambda_star: ls, eta: dom.eta };
        s.check(coupling, dom, false)?;
        Ok(s)
    }

    pub fn q(&self) -> usize {
        self.xi.len()
    }

    /// Membership in `X_η` plus the range conditions on `λ` and `δ`.
    pub fn validate(&self, coupling: &CouplingModel, dom: &DomainModel) -> Result<()> {
        self.check(coupling, dom, true)
    }

    fn check(&self, coupling: &CouplingModel, dom: &DomainModel, rates: bool) -> Result<()> {
        let q = coupling.q();
        if self.lambda.len() != coupling.m || self.xi.len() != q || self.delta.len() != q {
            return Err(Error::InvalidState("state dimensions do not match the coupling model".into()));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0 && *l < 1.0)) {
            return Err(Error::InvalidState(format!("lambda entries must lie in [0,1): {:?}", self.lambda)));
        }
        let eta = self.eta;
        for h in 0..q {
            if !(self.delta[h] > 0.0 && self.delta[h] < 1.0) {
                return Err(Error::InvalidState(format!("delta_{h} = {} outside (0,1)", self.delta[h])));
            }
            if rates && self.lambda_star[h] > 0.0 && !(self.d[h] > eta && self.d[h] < 1.0 / eta) {
                return Err(Error::ExitedXeta(format!("d_{h} = {} outside ({eta}, {})", self.d[h], 1.0 / eta)));
            }
            if !dom.contains(&self.xi[h]) || dom.dist_to_boundary(&self.xi[h]) < eta {
                return Err(Error::ExitedXeta(format!("xi_{h} = {:?} within {eta} of the boundary", self.xi[h])));
            }
            for k in 0..h {
                if point::dist(&self.xi[h], &self.xi[k]) < eta {
                    return Err(Error::ExitedXeta(format!("|xi_{h} - xi_{k}| < {eta}")));
                }
            }
        }
        Ok(())
    }

    fn fingerprint(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.delta.clone();
        v.extend(self.xi.iter().flat_map(|p| p.iter().copied()));
        v
    }
}

/// Bubble and projected-bubble values of every group at the quadrature nodes.
#[derive(Debug, Clone)]
pub struct FieldData {
    pub quad: Quadrature,
    pub u: Vec<Vec<f64>>,
    pub pu: Vec<Vec<f64>>,
    /// `H̃(x, ξ_k)` and `∇_ξ H̃(x, ξ_k)` per centre.
    pub ht: Vec<Vec<f64>>,
    pub ht_grad: Vec<Vec<Point>>,
}

impl FieldData {
    pub fn new(state: &AnsatzState, dom: &DomainModel, min_scale: f64) -> Result<Self> {
        Self::build(state, dom, min_scale, true)
    }

    /// Without the `∇_ξ H̃` cache (enough for norms and energies).
    pub fn values_only(state: &AnsatzState, dom: &DomainModel, min_scale: f64) -> Result<Self> {
        Self::build(state, dom, min_scale, false)
    }

    fn build(state: &AnsatzState, dom: &DomainModel, min_scale: f64, gradients: bool) -> Result<Self> {
        let quad = dom.quadrature_for(&state.xi, min_scale);
        let q = state.q();
        let n = quad.len();
        let mut u = vec![vec![0.0; n]; q];
        let mut pu = vec![vec![0.0; n]; q];
        let mut ht = vec![vec![0.0; n]; q];
        let mut ht_grad = vec![vec![[0.0; 4]; n]; q];
        for k in 0..q {
            let b = Bubble { delta: state.delta[k], xi: state.xi[k] };
            for (idx, x) in quad.points.iter().enumerate() {
                let (h, g) = if gradients { dom.h_tilde_grad(x, &b.xi)? } else { (dom.h_tilde(x, &b.xi)?, [0.0; 4]) };
                ht[k][idx] = h;
                ht_grad[k][idx] = g;
                u[k][idx] = bubble_value(&b, x);
                pu[k][idx] = u[k][idx] - ALPHA * b.delta * h;
            }
        }
        Ok(FieldData { quad, u, pu, ht, ht_grad })
    }

    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        // fixed-order chunked reduction
        let w = &self.quad.weights;
        let mut total = 0.0;
        for chunk in (0..w.len()).collect::<Vec<_>>().chunks(2048) {
            total += chunk.iter().map(|&i| w[i] * f(i)).sum::<f64>();
        }
        total
    }

    pub fn lp_norm(&self, p: f64, f: impl Fn(usize) -> f64) -> f64 {
        self.integrate(|i| f(i).abs().powf(p)).powf(1.0 / p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBreakdown {
    pub component: usize,
    pub proj_defect: f64,
    pub cross: f64,
    pub lambda_term: f64,
}

impl ErrorBreakdown {
    pub fn total(&self) -> f64 {
        self.proj_defect + self.cross + self.lambda_term
    }
}

/// `L^{4/3}` norms of the three pieces of the error term for every component.
pub fn error_term_norms(
    state: &AnsatzState,
    coupling: &CouplingModel,
    profiles: &[SyncProfile],
    dom: &DomainModel,
) -> Result<Vec<ErrorBreakdown>> {
    let min_scale = state.delta.iter().copied().fold(f64::INFINITY, f64::min);
    let fd = FieldData::values_only(state, dom, min_scale)?;
    error_term_norms_on(&fd, state, coupling, profiles)
}

pub fn error_term_norms_on(
    fd: &FieldData,
    state: &AnsatzState,
    coupling: &CouplingModel,
    profiles: &[SyncProfile],
) -> Result<Vec<ErrorBreakdown>> {
    let cs = component_coefficients(coupling, profiles)?;
    let p = 4.0 / 3.0;
    let mut out = Vec::with_capacity(coupling.m);
    for i in 0..coupling.m {
        let h = coupling.group_of(i);
        let ci = cs[i];
        let proj = ci * fd.lp_norm(p, |n| fd.pu[h][n].powi(3) - fd.u[h][n].powi(3));
        let mut cross = 0.0;
        for k in (0..coupling.q()).filter(|&k| k != h) {
            let wsum: f64 = coupling.group(k).map(|j| coupling.beta[(i, j)].abs() * cs[j] * cs[j]).sum();
            if wsum != 0.0 {
                cross += wsum * ci * fd.lp_norm(p, |n| fd.pu[h][n] * fd.pu[k][n] * fd.pu[k][n]);
            }
        }
        let lam = state.lambda[i] * ci * fd.lp_norm(p, |n| fd.pu[h][n]);
        out.push(ErrorBreakdown { component: i, proj_defect: proj, cross, lambda_term: lam });
    }
    Ok(out)
}

/// `c_i` of every component, read from its group's profile.
pub fn component_coefficients(coupling: &CouplingModel, profiles: &[SyncProfile]) -> Result<Vec<f64>> {
    if profiles.len() != coupling.q() {
        return Err(Error::BasisStateMismatch(format!("{} profiles for {} groups", profiles.len(), coupling.q())));
    }
    let mut c = vec![0.0; coupling.m];
    for (h, p) in profiles.iter().enumerate() {
        let g = coupling.group(h);
        if p.c.len() != g.len() {
            return Err(Error::BasisStateMismatch(format!("profile {h} has {} coefficients for {} components", p.c.len(), g.len())));
        }
        for (k, i) in g.enumerate() {
            c[i] = p.c[k];
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    PU,
    Psi(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFunction {
    pub profile: Profile,
    pub centre: usize,
    pub delta: f64,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisParams {
    /// PU profiles at scales `δ_k 2^j`, `|j| ≤ j_scales`.
    pub j_scales: i32,
    /// Pψ profiles at scales `δ_k 2^j`, `|j| ≤ j_harm`.
    pub j_harm: i32,
    /// Bulk functions are attached to every centre for every component when set,
    /// otherwise only to the centre of the component's own group.
    pub foreign: bool,
    pub drop_tol: f64,
    /// Auxiliary scales are kept only up to `scale_cap · dist(ξ_k, ∂Ω)`, where `PU ≈ U − αδH̃`
    /// remains an accurate projection.
    pub scale_cap: f64,
}

impl Default for BasisParams {
    fn default() -> Self {
        BasisParams { j_scales: 4, j_harm: 2, foreign: true, drop_tol: 1e-10, scale_cap: 0.25 }
    }
}

fn profile_values(p: Profile, b: &Bubble, x: &Point, ht: f64, hg: &Point) -> (f64, f64) {
    let u = bubble_value(b, x);
    match p {
        Profile::PU => (u - ALPHA * b.delta * ht, u * u * u),
        Profile::Psi(0) => {
            let psi = kernel_value(b, 0, x);
            (psi - ALPHA * ht, 3.0 * u * u * psi)
        }
        Profile::Psi(l) => {
            let psi = kernel_value(b, l, x);
            (psi - ALPHA * b.delta * hg[l - 1], 3.0 * u * u * psi)
        }
    }
}

/// Raw functions, their nodal values and `H¹₀` gram, for one state.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub state: AnsatzState,
    pub coupling: CouplingModel,
    pub profiles: Vec<SyncProfile>,
    pub c: Vec<f64>,
    pub fields: FieldData,
    pub funcs: Vec<RawFunction>,
    pub n_kernel: usize,
    /// nodes × functions, columns normalized to unit `H¹₀` norm
    pub f: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    /// per function, `v[a][i]` as column-scaling vectors `s_i`
    pub s: Vec<DVector<f64>>,
    pub norms: Vec<f64>,
}

impl Assembly {
    pub fn new(
        state: &AnsatzState,
        coupling: &CouplingModel,
        profiles: &[SyncProfile],
        dom: &DomainModel,
        params: &BasisParams,
    ) -> Result<Self> {
        if state.q() != coupling.q() || state.lambda.len() != coupling.m {
            return Err(Error::BasisStateMismatch("state does not match coupling model".into()));
        }
        let c = component_coefficients(coupling, profiles)?;
        let m = coupling.m;
        let q = coupling.q();
        let mut funcs = Vec::new();
        for h in 0..q {
            let mut v = vec![0.0; m];
            for (k, i) in coupling.group(h).enumerate() {
                v[i] = profiles[h].e[k];
            }
            for l in 0..5 {
                funcs.push(RawFunction { profile: Profile::Psi(l), centre: h, delta: state.delta[h], v: v.clone() });
            }
        }
        let n_kernel = funcs.len();
        for i in 0..m {
            for k in 0..q {
                if !params.foreign && coupling.group_of(i) != k {
                    continue;
                }
                let mut v = vec![0.0; m];
                v[i] = 1.0;
                let cap = params.scale_cap * dom.dist_to_boundary(&state.xi[k]);
                for j in -params.j_scales..=params.j_scales {
                    let dl = state.delta[k] * 2f64.powi(j);
                    if dl > cap {
                        continue;
                    }
                    funcs.push(RawFunction { profile: Profile::PU, centre: k, delta: dl, v: v.clone() });
                }
                for j in -params.j_harm..=params.j_harm {
                    let dl = state.delta[k] * 2f64.powi(j);
                    if dl > cap {
                        continue;
                    }
                    for l in 0..5 {
                        funcs.push(RawFunction { profile: Profile::Psi(l), centre: k, delta: dl, v: v.clone() });
                    }
                }
            }
        }
        let min_scale = funcs.iter().map(|f| f.delta).fold(f64::INFINITY, f64::min);
        let fields = FieldData::new(state, dom, min_scale)?;
        let nn = fields.quad.len();
        let ns = funcs.len();
        let mut f = DMatrix::zeros(nn, ns);
        let mut lf = DMatrix::zeros(nn, ns);
        for (a, rf) in funcs.iter().enumerate() {
            let b = Bubble { delta: rf.delta, xi: state.xi[rf.centre] };
            for n in 0..nn {
                let x = &fields.quad.points[n];
                let (val, lap) = profile_values(rf.profile, &b, x, fields.ht[rf.centre][n], &fields.ht_grad[rf.centre][n]);
                f[(n, a)] = val;
                lf[(n, a)] = lap * fields.quad.weights[n];
            }
        }
        // component overlap of the constant vectors enters the pairing
        let vmat = DMatrix::from_fn(ns, ns, |a, b| funcs[a].v.iter().zip(&funcs[b].v).map(|(x, y)| x * y).sum::<f64>());
        let raw = lf.transpose() * &f;
        let mut gram = raw.component_mul(&vmat);
        gram = 0.5 * (&gram + gram.transpose());
        // bulk functions the quadrature cannot resolve as positive in H¹₀ are discarded
        let keep: Vec<usize> = (0..ns).filter(|&a| a < n_kernel || gram[(a, a)] > 0.0).collect();
        if keep.len() < ns {
            f = f.select_columns(&keep);
            gram = gram.select_rows(&keep).select_columns(&keep);
            funcs = keep.iter().map(|&a| funcs[a].clone()).collect();
        }
        let ns = funcs.len();
        if (0..n_kernel).any(|a| !(gram[(a, a)] > 0.0)) {
            return Err(Error::BasisStateMismatch("kernel block has a non-positive gram diagonal".into()));
        }
        let norms: Vec<f64> = (0..ns).map(|a| gram[(a, a)].sqrt()).collect();
        for a in 0..ns {
            f.column_mut(a).scale_mut(1.0 / norms[a]);
        }
        let dinv = DVector::from_iterator(ns, norms.iter().map(|v| 1.0 / v));
        for a in 0..ns {
            for b in 0..ns {
                gram[(a, b)] *= dinv[a] * dinv[b];
            }
        }
        let s = (0..m).map(|i| DVector::from_iterator(ns, funcs.iter().map(|rf| rf.v[i]))).collect();
        Ok(Assembly {
            state: state.clone(),
            coupling: coupling.clone(),
            profiles: profiles.to_vec(),
            c,
            fields,
            funcs,
            n_kernel,
            f,
            gram,
            s,
            norms,
        })
    }

    pub fn ns(&self) -> usize {
        self.funcs.len()
    }

    /// `W_i` at node `n`.
    #[inline]
    pub fn w(&self, i: usize, n: usize) -> f64 {
        self.c[i] * self.fields.pu[self.coupling.group_of(i)][n]
    }

    fn w_all(&self) -> Vec<Vec<f64>> {
        (0..self.coupling.m)
            .map(|i| {
                let h = self.coupling.group_of(i);
                self.fields.pu[h].iter().map(|v| self.c[i] * v).collect()
            })
            .collect()
    }

    /// `Σ_i diag(s_i) Fᵀ (w ⊙ g_i)`, the weak pairing of a vector field against every raw function.
    pub fn pair(&self, g: &[Vec<f64>]) -> DVector<f64> {
        let ns = self.ns();
        let mut out = DVector::zeros(ns);
        for (i, gi) in g.iter().enumerate() {
            let wg = DVector::from_iterator(gi.len(), gi.iter().zip(&self.fields.quad.weights).map(|(a, b)| a * b));
            let t = self.f.tr_mul(&wg);
            out += t.component_mul(&self.s[i]);
        }
        out
    }

    /// Nodal values of the vector field with raw coefficients `cr`.
    pub fn field(&self, cr: &DVector<f64>) -> Vec<Vec<f64>> {
        (0..self.coupling.m)
            .map(|i| {
                let ci = cr.component_mul(&self.s[i]);
                (&self.f * ci).iter().copied().collect()
            })
            .collect()
    }

    /// `∫ Vᵀ(φ_a v_a)·(φ_b v_b)` for the linearized potential of `coupling`, restricted to
    /// the intra-group and/or inter-group entries of β, with the λ mass term optional.
    pub fn potential(&self, beta: &DMatrix<f64>, lambda: Option<&[f64]>, intra: bool, cross: bool) -> DMatrix<f64> {
        let m = self.coupling.m;
        let nn = self.fields.quad.len();
        let ns = self.ns();
        let w = self.w_all();
        let b = |i: usize, j: usize| {
            let same = self.coupling.group_of(i) == self.coupling.group_of(j);
            if (same && intra) || (!same && cross) { beta[(i, j)] } else { 0.0 }
        };
        let mut pot = DMatrix::zeros(ns, ns);
        for i in 0..m {
            let mut y = DMatrix::<f64>::zeros(nn, ns);
            let mut any = false;
            for ip in 0..m {
                // V_{i,i'} at every node
                let vals: Vec<f64> = (0..nn)
                    .map(|n| {
                        let v = if i == ip {
                            let mut s = 3.0 * b(i, i) * w[i][n] * w[i][n];
                            for j in (0..m).filter(|&j| j != i) {
                                s += b(i, j) * w[j][n] * w[j][n];
                            }
                            s + lambda.map_or(0.0, |l| l[i])
                        } else {
                            2.0 * b(i, ip) * w[i][n] * w[ip][n]
                        };
                        v * self.fields.quad.weights[n]
                    })
                    .collect();
                if vals.iter().all(|v| *v == 0.0) {
                    continue;
                }
                any = true;
                for a in 0..ns {
                    let sa = self.s[ip][a];
                    if sa == 0.0 {
                        continue;
                    }
                    let col = self.f.column(a);
                    let mut ycol = y.column_mut(a);
                    for n in 0..nn {
                        ycol[n] += vals[n] * sa * col[n];
                    }
                }
            }
            if !any {
                continue;
            }
            let mut t = self.f.tr_mul(&y);
            for a in 0..ns {
                t.row_mut(a).scale_mut(self.s[i][a]);
            }
            pot += t;
        }
        0.5 * (&pot + pot.transpose())
    }

    /// `L_raw = G − Pot` over the raw functions.
    pub fn l_raw(&self) -> DMatrix<f64> {
        &self.gram - self.potential(&self.coupling.beta, Some(&self.state.lambda), true, true)
    }

    /// L² mass matrix `Σ_i ∫ φ_a^i φ_b^i`.
    pub fn mass(&self) -> DMatrix<f64> {
        let m = self.coupling.m;
        let mut out = DMatrix::zeros(self.ns(), self.ns());
        for i in 0..m {
            let mut y = self.f.clone();
            for a in 0..self.ns() {
                let sa = self.s[i][a];
                for n in 0..self.f.nrows() {
                    y[(n, a)] *= sa * self.fields.quad.weights[n];
                }
            }
            let mut t = self.f.tr_mul(&y);
            for a in 0..self.ns() {
                t.row_mut(a).scale_mut(self.s[i][a]);
            }
            out += t;
        }
        0.5 * (&out + out.transpose())
    }

    /// Error source `e_i = c_i(PU_h³ − U_h³) + Σ_{k≠h} Σ_{j∈I_k} β_ij c_j² PU_k² c_i PU_h + λ_i c_i PU_h`.
    pub fn error_source(&self) -> Vec<Vec<f64>> {
        let cp = &self.coupling;
        let nn = self.fields.quad.len();
        (0..cp.m)
            .map(|i| {
                let h = cp.group_of(i);
                let ci = self.c[i];
                (0..nn)
                    .map(|n| {
                        let puh = self.fields.pu[h][n];
                        let uh = self.fields.u[h][n];
                        let mut e = ci * (puh.powi(3) - uh.powi(3)) + self.state.lambda[i] * ci * puh;
                        for k in (0..cp.q()).filter(|&k| k != h) {
                            let s: f64 = cp.group(k).map(|j| cp.beta[(i, j)] * self.c[j] * self.c[j]).sum();
                            e += s * self.fields.pu[k][n].powi(2) * ci * puh;
                        }
                        e
                    })
                    .collect()
            })
            .collect()
    }

    /// Nonlinear source `n_i = Σ_j β_ij (φ_j² W_i + 2 W_j φ_j φ_i + φ_j² φ_i)`, split as
    /// (quadratic, cubic).
    pub fn nonlinear_source(&self, phi: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let m = self.coupling.m;
        let nn = self.fields.quad.len();
        let w = self.w_all();
        let mut quad = vec![vec![0.0; nn]; m];
        let mut cubic = vec![vec![0.0; nn]; m];
        for i in 0..m {
            for j in 0..m {
                let b = self.coupling.beta[(i, j)];
                if b == 0.0 {
                    continue;
                }
                for n in 0..nn {
                    let pj2 = phi[j][n] * phi[j][n];
                    quad[i][n] += b * (pj2 * w[i][n] + 2.0 * w[j][n] * phi[j][n] * phi[i][n]);
                    cubic[i][n] += b * pj2 * phi[i][n];
                }
            }
        }
        (quad, cubic)
    }

    pub fn kernel_rows(&self) -> std::ops::Range<usize> {
        0..self.n_kernel
    }
}

#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    pub n_kernel: usize,
    pub ns: usize,
    pub gram: DMatrix<f64>,
    /// raw coefficients of a gram-orthonormal basis of `Π⊥(span)` (columns)
    pub q_bulk: DMatrix<f64>,
    /// raw coefficients of a gram-orthonormal basis of the whole span
    pub q_full: DMatrix<f64>,
    kernel_gram: DMatrix<f64>,
    fingerprint: Vec<f64>,
}

impl GalerkinBasis {
    pub fn new(asm: &Assembly, params: &BasisParams) -> Result<Self> {
        let ns = asm.ns();
        let nk = asm.n_kernel;
        let gram = asm.gram.clone();
        let kg = gram.view((0, 0), (nk, nk)).into_owned();
        let keig = SymmetricEigen::new(kg.clone()).eigenvalues;
        if keig.min() <= 1e-10 * keig.max() {
            return Err(Error::BasisStateMismatch(format!("kernel block not linearly independent (min gram eigenvalue {:.3e})", keig.min())));
        }
        let mut basis = GalerkinBasis {
            n_kernel: nk,
            ns,
            gram: gram.clone(),
            q_bulk: DMatrix::zeros(ns, 0),
            q_full: DMatrix::zeros(ns, 0),
            kernel_gram: kg,
            fingerprint: asm.state.fingerprint(),
        };
        let mut perp = DMatrix::zeros(ns, ns - nk);
        for (col, a) in (nk..ns).enumerate() {
            let mut e = DVector::zeros(ns);
            e[a] = 1.0;
            perp.set_column(col, &basis.project_k_perp(&e));
        }
        basis.q_bulk = orthonormalize(&perp, &gram, params.drop_tol);
        basis.q_full = orthonormalize(&DMatrix::identity(ns, ns), &gram, params.drop_tol);
        Ok(basis)
    }

    pub fn check(&self, asm: &Assembly) -> Result<()> {
        if asm.ns() != self.ns || asm.state.fingerprint() != self.fingerprint {
            return Err(Error::BasisStateMismatch("basis was built for a different state".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.q_bulk.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gram-orthogonal projection onto the kernel block, on raw coefficients.
    pub fn project_k(&self, v: &DVector<f64>) -> DVector<f64> {
        let nk = self.n_kernel;
        let gv = &self.gram * v;
        let rhs = gv.rows(0, nk).into_owned();
        let y = self.kernel_gram.clone().cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| {
            self.kernel_gram.clone().lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(nk))
        });
        let mut out = DVector::zeros(self.ns);
        out.rows_mut(0, nk).copy_from(&y);
        out
    }

    pub fn project_k_perp(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.project_k(v)
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.gram * b))
    }
}

pub fn project_k_perp(basis: &GalerkinBasis, v: &DVector<f64>) -> DVector<f64> {
    basis.project_k_perp(v)
}

/// Columns `X V Λ^{-1/2}` from the eigen-decomposition of `Xᵀ G X`, dropping directions
/// below `tol` relative to the largest eigenvalue.
fn orthonormalize(x: &DMatrix<f64>, g: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut sub = x.transpose() * g * x;
    sub = 0.5 * (&sub + sub.transpose());
    let eig = SymmetricEigen::new(sub);
    let max = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&k| eig.eigenvalues[k] > tol * max).collect();
    let mut out = DMatrix::zeros(x.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let v = x * eig.eigenvectors.column(k) / eig.eigenvalues[k].sqrt();
        out.set_column(c, &v);
    }
    out
}

/// `QᵀL_rawQ` on the bulk block.
pub fn assemble_l(asm: &Assembly, basis: &GalerkinBasis) -> Result<DMatrix<f64>> {
    basis.check(asm)?;
    let l = asm.l_raw();
    Ok(basis.q_bulk.transpose() * l * &basis.q_bulk)
}

/// `Qᵀ⟨N(φ), ·⟩` for bulk coefficients `phi`, returned with its quadratic and cubic parts.
pub fn assemble_n(asm: &Assembly, basis: &GalerkinBasis, phi: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    basis.check(asm)?;
    let cr = &basis.q_bulk * phi;
    let field = asm.field(&cr);
    let (q2, q3) = asm.nonlinear_source(&field);
    let qt = basis.q_bulk.transpose();
    Ok((&qt * asm.pair(&q2), &qt * asm.pair(&q3)))
}

pub fn assemble_e(asm: &Assembly, basis: &GalerkinBasis) -> Result<DVector<f64>> {
    basis.check(asm)?;
    Ok(basis.q_bulk.transpose() * asm.pair(&asm.error_source()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::all_profiles;
    use crate::domain::QuadParams;

    fn single() -> (CouplingModel, Vec<SyncProfile>) {
        let c = CouplingModel::from_rows(&[&[1.0]], vec![0, 1]).unwrap();
        let p = all_profiles(&c).unwrap();
        (c, p)
    }

    fn ball() -> DomainModel {
        DomainModel::unit_ball().with_eta(1e-3).unwrap().with_quad(QuadParams::coarse())
    }

    #[test]
    fn state_validation() {
        let (c, _) = single();
        let d = ball();
        let s = AnsatzState::new(vec![0.1], vec![0.5], vec![[0.0; 4]], &c, &d).unwrap();
        assert!((s.delta[0] - (-5.0f64).exp()).abs() < 1e-15);
        let floored = AnsatzState::new(vec![1e-3], vec![0.5], vec![[0.0; 4]], &c, &d).unwrap();
        assert_eq!(floored.delta[0], DELTA_FLOOR);
        assert!(AnsatzState::new(vec![0.1], vec![0.5], vec![[0.9995, 0.0, 0.0, 0.0]], &c, &d).is_err());
        let d2 = DomainModel::unit_ball();
        assert!(matches!(AnsatzState::new(vec![0.1], vec![0.1], vec![[0.0; 4]], &c, &d2), Err(Error::ExitedXeta(_))));
    }

    #[test]
    fn projection_properties() {
        let (c, p) = single();
        let d = ball();
        let s = AnsatzState::from_deltas(vec![0.0], vec![1e-2], vec![[0.0; 4]], &c, &d).unwrap();
        let bp = BasisParams { j_scales: 2, j_harm: 1, ..Default::default() };
        let asm = Assembly::new(&s, &c, &p, &d, &bp).unwrap();
        let basis = GalerkinBasis::new(&asm, &bp).unwrap();
        let ns = asm.ns();
        let mut k = DVector::zeros(ns);
        k[2] = 1.0;
        k[0] = -0.5;
        assert!(basis.project_k_perp(&k).norm() < 1e-12);
        let v = DVector::from_fn(ns, |i, _| ((i * 7919) % 13) as f64 / 13.0 - 0.5);
        let pv = basis.project_k_perp(&v);
        for a in 0..asm.n_kernel {
            let mut e = DVector::zeros(ns);
            e[a] = 1.0;
            assert!(basis.inner(&pv, &e).abs() < 1e-10);
        }
        let ppv = basis.project_k_perp(&pv);
        assert!((&ppv - &pv).norm() < 1e-10 * pv.norm());
        assert!(((basis.project_k(&v) + &pv) - &v).norm() <= 1e-14 * v.norm());
        // orthonormal bulk block
        let g = basis.q_bulk.transpose() * &basis.gram * &basis.q_bulk;
        assert!((g - DMatrix::identity(basis.len(), basis.len())).norm() < 1e-8);
    }

    #[test]
    fn lambda_enters_linearly() {
        let (c, p) = single();
        let d = ball();
        let bp = BasisParams { j_scales: 2, j_harm: 1, ..Default::default() };
        let s0 = AnsatzState::from_deltas(vec![0.0], vec![1e-2], vec![[0.0; 4]], &c, &d).unwrap();
        let mut s1 = s0.clone();
        s1.lambda = vec![0.05];
        let a0 = Assembly::new(&s0, &c, &p, &d, &bp).unwrap();
        let a1 = Assembly::new(&s1, &c, &p, &d, &bp).unwrap();
        let diff = a0.l_raw() - a1.l_raw();
        let mass = a0.mass() * 0.05;
        assert!((diff - &mass).norm() <= 1e-10 * mass.norm().max(1.0));
        let l = a0.l_raw();
        assert!((&l - l.transpose()).norm() <= 1e-12 * l.norm());
    }
}
