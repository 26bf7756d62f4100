//! Reduction to finitely many parameters: the remainder `φ(d,ξ)` is the fixed point of
//! `φ ↦ L⁻¹Π⊥(E + N(φ))`, the reduced energy is `J̃(d,ξ) = J(W + φ)`, and critical points of
//! `J̃` are located through its fitted expansion.

use crate::coupling::{CouplingModel, SyncProfile};
use crate::domain::{DomainModel, Shape};
use crate::error::{Error, Result};
use crate::operator::{assemble_e, assemble_l, assemble_n, AnsatzState, Assembly, BasisParams, GalerkinBasis};
use crate::point::{self, Point};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemainderParams {
    pub tol: f64,
    pub max_iter: usize,
    /// Replace `E` by zero.
    pub zero_error: bool,
    /// Smallest admissible `|eig(L)|` relative to the largest.
    pub singular_tol: f64,
}

impl Default for RemainderParams {
    fn default() -> Self {
        RemainderParams { tol: 1e-10, max_iter: 100, zero_error: false, singular_tol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct RemainderSolution {
    /// coefficients in the orthonormal bulk basis
    pub coeffs: DVector<f64>,
    /// coefficients on the raw functions
    pub raw: DVector<f64>,
    pub norm: f64,
    pub steps: Vec<f64>,
    pub contraction: f64,
    pub iterations: usize,
}

/// Fixed point of `φ = L_b⁻¹(E + N(φ))` on the bulk block, starting from `start` (zero if absent).
pub fn solve_remainder(
    asm: &Assembly,
    basis: &GalerkinBasis,
    params: &RemainderParams,
    start: Option<&DVector<f64>>,
) -> Result<RemainderSolution> {
    let l = assemble_l(asm, basis)?;
    solve_remainder_with(asm, basis, &l, params, start)
}

/// As [`solve_remainder`] with a precomputed bulk operator.
pub fn solve_remainder_with(
    asm: &Assembly,
    basis: &GalerkinBasis,
    l: &DMatrix<f64>,
    params: &RemainderParams,
    start: Option<&DVector<f64>>,
) -> Result<RemainderSolution> {
    let nb = basis.len();
    if nb == 0 {
        return Err(Error::LinearSolveFailed("empty bulk block".into()));
    }
    let eig = SymmetricEigen::new(l.clone()).eigenvalues;
    let big = eig.amax().max(1.0);
    let small = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !(small > params.singular_tol * big) {
        return Err(Error::LinearSolveFailed(format!("bulk operator singular: min |eig| = {small:.3e}, max = {big:.3e}")));
    }
    let lu = l.clone().lu();
    let e = if params.zero_error { DVector::zeros(nb) } else { assemble_e(asm, basis)? };
    let mut x = start.cloned().unwrap_or_else(|| DVector::zeros(nb));
    let mut steps = Vec::new();
    let mut ratio: f64 = 0.0;
    let mut growth = 0;
    for it in 1..=params.max_iter {
        let (n2, n3) = assemble_n(asm, basis, &x)?;
        let rhs = &e + n2 + n3;
        let next = lu.solve(&rhs).ok_or_else(|| Error::LinearSolveFailed("LU solve failed".into()))?;
        let step = (&next - &x).norm();
        if !step.is_finite() {
            return Err(Error::NoContraction { ratio: f64::INFINITY, iteration: it });
        }
        if let Some(prev) = steps.last().copied() {
            if prev > 0.0 {
                let rr: f64 = step / prev;
                ratio = ratio.max(rr);
                if rr >= 1.0 && step > params.tol {
                    growth += 1;
                    if growth >= 3 {
                        return Err(Error::NoContraction { ratio: rr, iteration: it });
                    }
                } else {
                    growth = 0;
                }
            }
        }
        x = next;
        steps.push(step);
        if step < params.tol * (1.0 + x.norm()) || step == 0.0 {
            let raw = &basis.q_bulk * &x;
            return Ok(RemainderSolution { norm: x.norm(), coeffs: x, raw, steps, contraction: ratio, iterations: it });
        }
    }
    let rr = if steps.len() >= 2 { steps[steps.len() - 1] / steps[steps.len() - 2] } else { 1.0 };
    Err(Error::NoContraction { ratio: rr, iteration: params.max_iter })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParts {
    pub gradient: f64,
    pub quartic: f64,
    pub mass: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        0.5 * self.gradient - 0.25 * self.quartic - 0.5 * self.mass
    }
}

/// `J(W + φ)` for the raw remainder coefficients `phi_raw` (`None` for `φ = 0`).
pub fn energy(asm: &Assembly, phi_raw: Option<&DVector<f64>>) -> EnergyParts {
    let m = asm.coupling.m;
    let nn = asm.fields.quad.len();
    let phi: Vec<Vec<f64>> = match phi_raw {
        Some(cr) => asm.field(cr),
        None => vec![vec![0.0; nn]; m],
    };
    let fd = &asm.fields;
    let mut gradient = 0.0;
    for i in 0..m {
        let h = asm.coupling.group_of(i);
        let ci = asm.c[i];
        // ∫∇W·∇W and ∫∇W·∇φ use −ΔPU = U³
        gradient += fd.integrate(|n| {
            let u3 = fd.u[h][n].powi(3);
            ci * ci * u3 * fd.pu[h][n] + 2.0 * ci * u3 * phi[i][n]
        });
    }
    if let Some(cr) = phi_raw {
        gradient += cr.dot(&(&asm.gram * cr));
    }
    let u: Vec<Vec<f64>> = (0..m).map(|i| (0..nn).map(|n| asm.w(i, n) + phi[i][n]).collect()).collect();
    let mut quartic = 0.0;
    for i in 0..m {
        for j in 0..m {
            let b = asm.coupling.beta[(i, j)];
            if b != 0.0 {
                quartic += b * fd.integrate(|n| u[i][n] * u[i][n] * u[j][n] * u[j][n]);
            }
        }
    }
    let mut mass = 0.0;
    for i in 0..m {
        if asm.state.lambda[i] != 0.0 {
            mass += asm.state.lambda[i] * fd.integrate(|n| u[i][n] * u[i][n]);
        }
    }
    EnergyParts { gradient, quartic, mass }
}

#[derive(Debug, Clone)]
pub struct ReducedEnergy {
    pub value: f64,
    pub without_remainder: f64,
    pub remainder: RemainderSolution,
}

/// `J̃ = J(W + φ(d,ξ))`.
pub fn reduced_energy(
    state: &AnsatzState,
    coupling: &CouplingModel,
    profiles: &[SyncProfile],
    dom: &DomainModel,
    bp: &BasisParams,
    rp: &RemainderParams,
) -> Result<ReducedEnergy> {
    let asm = Assembly::new(state, coupling, profiles, dom, bp)?;
    let basis = GalerkinBasis::new(&asm, bp)?;
    let rem = solve_remainder(&asm, &basis, rp, None)?;
    let value = energy(&asm, Some(&rem.raw)).total();
    let without_remainder = energy(&asm, None).total();
    Ok(ReducedEnergy { value, without_remainder, remainder: rem })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub delta: f64,
    pub lambda: f64,
    pub robin: f64,
    /// group factor `Σ c_i²`
    pub weight: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedEnergyModel {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub stderr: [f64; 3],
    /// `(J̃/Σc² − model)/δ²` per sample, in sample order
    pub scaled_residuals: Vec<f64>,
    /// rms residual relative to the rms of `J̃/Σc² − A0`
    pub relative_residual: f64,
    pub deltas: Vec<f64>,
    pub condition: f64,
}

pub const FIT_COND_LIMIT: f64 = 1e10;

/// Weighted least squares of `J̃/Σc²` against `[1, δ²r, −λδ²|ln δ|]`, rows scaled by `δ⁻²`.
/// The λ-regressor carries a minus sign so that `A2 > 0` (the λ term lowers the energy).
pub fn fit_expansion(samples: &[EnergySample]) -> Result<ReducedEnergyModel> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::IllConditionedFit { cond: f64::INFINITY });
    }
    let mut x = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    for (k, s) in samples.iter().enumerate() {
        let d2 = s.delta * s.delta;
        x[(k, 0)] = 1.0 / d2;
        x[(k, 1)] = s.robin;
        x[(k, 2)] = -s.lambda * s.delta.ln().abs();
        y[k] = s.energy / s.weight / d2;
    }
    let scale: Vec<f64> = (0..3).map(|c| x.column(c).norm()).collect();
    if scale.iter().any(|s| *s == 0.0 || !s.is_finite()) {
        return Err(Error::IllConditionedFit { cond: f64::INFINITY });
    }
    let mut xs = x.clone();
    for c in 0..3 {
        xs.column_mut(c).scale_mut(1.0 / scale[c]);
    }
    let svd = xs.clone().svd(true, true);
    let sv = &svd.singular_values;
    let cond = sv.max() / sv.min();
    if !(cond < FIT_COND_LIMIT) {
        return Err(Error::IllConditionedFit { cond });
    }
    let beta_s = svd.solve(&y, 1e-300).map_err(|e| Error::LinearSolveFailed(e.to_string()))?;
    let coef: Vec<f64> = (0..3).map(|c| beta_s[c] / scale[c]).collect();
    let resid = &y - &x * DVector::from_column_slice(&coef);
    let dof = (n as f64 - 3.0).max(1.0);
    let s2 = resid.norm_squared() / dof;
    let xtx = xs.transpose() * &xs;
    let cov = xtx.try_inverse().ok_or(Error::IllConditionedFit { cond })?;
    let stderr = [0, 1, 2].map(|c| (s2 * cov[(c, c)]).sqrt() / scale[c]);
    let dev: f64 = samples.iter().map(|s| (s.energy / s.weight - coef[0]) / (s.delta * s.delta)).map(|v| v * v).sum();
    let relative_residual = (resid.norm_squared() / dev.max(1e-300)).sqrt();
    let model = ReducedEnergyModel {
        a0: coef[0],
        a1: coef[1],
        a2: coef[2],
        stderr,
        scaled_residuals: resid.iter().copied().collect(),
        relative_residual,
        deltas: samples.iter().map(|s| s.delta).collect(),
        condition: cond,
    };
    if !(model.a1 > 0.0 && model.a2 > 0.0) {
        return Err(Error::InvalidModel(format!("fitted A1 = {:.6e}, A2 = {:.6e} must be positive", model.a1, model.a2)));
    }
    Ok(model)
}

/// Leading-order constants of the expansion, from the bubble integrals.  With
/// `∫U³ = 8√2π²δ` and `∫_{B_{1/δ}} U² ≈ 16π²δ²|ln δ|` one gets `A0 = 8π²/3`, `A1 = 64π⁴`,
/// `A2 = 8π²`.
pub fn leading_constants() -> (f64, f64, f64) {
    (8.0 * PI * PI / 3.0, 64.0 * PI.powi(4), 8.0 * PI * PI)
}

/// Pairwise interaction of groups `h` and `k` in the expansion:
/// `−Σ_{i∈I_h, j∈I_k} β_ij c_i² c_j²`.
pub fn interaction_weight(coupling: &CouplingModel, profiles: &[SyncProfile], h: usize, k: usize) -> f64 {
    let mut s = 0.0;
    for (a, i) in coupling.group(h).enumerate() {
        for (b, j) in coupling.group(k).enumerate() {
            s += coupling.beta[(i, j)] * profiles[h].c[a].powi(2) * profiles[k].c[b].powi(2);
        }
    }
    -s
}

/// Fitted reduced energy in `(d, ξ)`:
/// `Σ_h S_h[A0 + A1δ_h²r(ξ_h) − A2 d_hδ_h²] + Σ_{h<k} 64π² B̂_hk δ_h²δ_k² G̃(ξ_h,ξ_k)² (d_h/λ_h + d_k/λ_k)`
/// with `δ_h = e^{−d_h/λ_h}` and `G̃ = |x−y|⁻² − H̃`.
#[derive(Debug, Clone)]
pub struct ExpansionModel<'a> {
    pub fit: &'a ReducedEnergyModel,
    pub dom: &'a DomainModel,
    pub weights: Vec<f64>,
    pub interaction: DMatrix<f64>,
    /// natural log of an extra factor on every interaction (segregation runs use
    /// `|β*| = e^{d*/λ*}`, far beyond `f64` range)
    pub interaction_log_scale: f64,
    pub lambda_star: Vec<f64>,
}

impl ExpansionModel<'_> {
    pub fn q(&self) -> usize {
        self.weights.len()
    }

    fn log_delta(&self, d: &[f64], h: usize) -> f64 {
        -d[h] / self.lambda_star[h]
    }

    /// `T_hk` divided by `δ_h²`, and its gradient in `(d_h, ξ_h)`, computed in log space.
    fn scaled_interaction(&self, d: &[f64], xi: &[Point], h: usize) -> Result<(f64, f64, Point)> {
        let mut val = 0.0;
        let mut gd = 0.0;
        let mut gx = [0.0; 4];
        for k in (0..self.q()).filter(|&k| k != h) {
            let b = self.interaction[(h, k)];
            if b == 0.0 {
                continue;
            }
            let g = |p: &Point| -> Result<f64> {
                let r2 = point::norm2(&point::sub(p, &xi[k]));
                Ok(1.0 / r2 - self.dom.h_tilde(p, &xi[k])?)
            };
            let gv = g(&xi[h])?;
            let dk2 = (2.0 * self.log_delta(d, k) + self.interaction_log_scale).exp();
            let lg = d[h] / self.lambda_star[h] + d[k] / self.lambda_star[k];
            let pref = 64.0 * PI * PI * b * dk2;
            val += pref * gv * gv * lg;
            // ∂_{d_h}(δ_h² T̂)/δ_h² = −(2/λ_h)T̂ + pref G̃²/λ_h
            gd += pref * gv * gv * (1.0 - 2.0 * lg) / self.lambda_star[h];
            let s = 1e-6 * self.dom.diam();
            for (l, gl) in gx.iter_mut().enumerate() {
                let e = point::unit(l);
                let gp = g(&point::axpy(&xi[h], s, &e))?;
                let gm = g(&point::axpy(&xi[h], -s, &e))?;
                *gl += pref * lg * (gp * gp - gm * gm) / (2.0 * s);
            }
        }
        Ok((val, gd, gx))
    }

    /// Gradient of the model with the `(d_h, ξ_h)` block divided by `δ_h²`, and its Jacobian
    /// without the interaction part.
    pub fn scaled_gradient(&self, d: &[f64], xi: &[Point]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q = self.q();
        let (a1, a2) = (self.fit.a1, self.fit.a2);
        let mut g = DVector::zeros(5 * q);
        let mut jac = DMatrix::zeros(5 * q, 5 * q);
        for h in 0..q {
            let s = self.weights[h];
            let lam = self.lambda_star[h];
            let r = self.dom.robin_unchecked(&xi[h])?;
            let gr = self.dom.robin_gradient(&xi[h])?;
            let hr = self.dom.robin_hessian(&xi[h])?;
            let (_, td, tx) = self.scaled_interaction(d, xi, h)?;
            g[5 * h] = s * (-2.0 * a1 * r / lam - a2 + 2.0 * a2 * d[h] / lam) + td;
            for l in 0..4 {
                g[5 * h + 1 + l] = s * a1 * gr[l] + tx[l];
            }
            jac[(5 * h, 5 * h)] = s * 2.0 * a2 / lam;
            for l in 0..4 {
                jac[(5 * h, 5 * h + 1 + l)] = -s * 2.0 * a1 * gr[l] / lam;
                jac[(5 * h + 1 + l, 5 * h)] = 0.0;
                for l2 in 0..4 {
                    jac[(5 * h + 1 + l, 5 * h + 1 + l2)] = s * a1 * hr[(l, l2)];
                }
            }
        }
        Ok((g, jac))
    }

    /// `max_h ln δ_h`.
    pub fn log_delta_ref(&self, d: &[f64]) -> f64 {
        (0..self.q()).map(|h| self.log_delta(d, h)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Model value minus `Σ S_h A0`, divided by `e^{2 lref}`.
    pub fn scaled_value(&self, d: &[f64], xi: &[Point], lref: f64) -> Result<f64> {
        let q = self.q();
        let mut v = 0.0;
        for h in 0..q {
            let rel = (2.0 * (self.log_delta(d, h) - lref)).exp();
            let r = self.dom.robin_unchecked(&xi[h])?;
            let (t, _, _) = self.scaled_interaction(d, xi, h)?;
            v += rel * (self.weights[h] * (self.fit.a1 * r - self.fit.a2 * d[h]) + 0.5 * t);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub lambda_star: f64,
    pub d: Vec<f64>,
    pub xi: Vec<Point>,
    pub log_delta: Vec<f64>,
    pub gradient_norm: f64,
    pub on_boundary: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    /// Robin critical points matched to the groups by minimal total displacement.
    pub limit: Vec<Point>,
    pub used_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub max_iter: usize,
    /// on the scaled gradient
    pub tol: f64,
    /// on the step, relative to the domain diameter
    pub step_tol: f64,
    /// Relative fit residual above which the model is not trusted.
    pub residual_limit: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { max_iter: 200, tol: 1e-10, step_tol: 1e-8, residual_limit: 0.1 }
    }
}

/// Decreasing dyadic schedule `0.1·2^{−k}` down to `1e-3`, with `1e-2` and `1e-3` included.
pub fn default_schedule() -> Vec<f64> {
    let mut s: Vec<f64> = (0..).map(|k| 0.1 * 0.5f64.powi(k)).take_while(|v| *v > 1e-3).collect();
    s.push(1e-2);
    s.push(1e-3);
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    s
}

/// Projection onto `X_η` for the centres: stay `η` inside the domain, `η` apart.
fn project_centres(dom: &DomainModel, xi: &mut [Point]) -> bool {
    let eta = dom.eta;
    let mut moved = false;
    let margin = eta * (1.0 + 1e-9);
    for _ in 0..50 {
        let mut again = false;
        for p in xi.iter_mut() {
            match &dom.shape {
                Shape::Ball { center, radius } => {
                    let v = point::sub(p, center);
                    let r = point::norm(&v);
                    if r > radius - margin {
                        *p = point::axpy(center, (radius - margin) / r, &v);
                        moved = true;
                        again = true;
                    }
                }
                Shape::Box(b) => {
                    for l in 0..4 {
                        let lo = b.corner[l] + margin;
                        let hi = b.corner[l] + b.widths[l] - margin;
                        if p[l] < lo || p[l] > hi {
                            p[l] = p[l].clamp(lo, hi);
                            moved = true;
                            again = true;
                        }
                    }
                }
                Shape::Grid(_) => {
                    if dom.dist_to_boundary(p) < margin {
                        let c = dom.center();
                        let v = point::sub(p, &c);
                        *p = point::axpy(&c, 0.99, &v);
                        moved = true;
                        again = true;
                    }
                }
            }
        }
        for h in 0..xi.len() {
            for k in 0..h {
                let v = point::sub(&xi[h], &xi[k]);
                let r = point::norm(&v);
                if r < margin {
                    let u = if r > 0.0 { point::scale(&v, 1.0 / r) } else { point::unit(0) };
                    let mid = point::axpy(&xi[k], 0.5, &v);
                    xi[h] = point::axpy(&mid, 0.5 * margin, &u);
                    xi[k] = point::axpy(&mid, -0.5 * margin, &u);
                    moved = true;
                    again = true;
                }
            }
        }
        if !again {
            break;
        }
    }
    moved
}

/// Projected Newton on the scaled model gradient, for every `λ*` of the schedule (each
/// component of group `h` gets `λ*`).  Starts from `d = 1` and `xi0`, continuing along the
/// schedule.
pub fn find_critical_point(
    model: &ExpansionModel<'_>,
    xi0: &[Point],
    schedule: &[f64],
    robin_points: &[Point],
    params: &SearchParams,
) -> Result<Trajectory> {
    if model.fit.relative_residual > params.residual_limit {
        return Err(Error::NoCriticalPointFound);
    }
    let q = model.q();
    let eta = model.dom.eta;
    let step_tol = params.step_tol * model.dom.diam();
    let mut d = vec![1.0; q];
    let mut xi = xi0.to_vec();
    project_centres(model.dom, &mut xi);
    let mut points = Vec::new();
    for &lam in schedule {
        let mut m = model.clone();
        m.lambda_star = vec![lam; q];
        let mut on_boundary = false;
        let mut converged = false;
        let mut gnorm = f64::INFINITY;
        let mut iters = 0;
        for it in 0..params.max_iter {
            iters = it + 1;
            let (g, jac) = m.scaled_gradient(&d, &xi)?;
            let step = jac.clone().lu().solve(&(-&g)).ok_or(Error::NoCriticalPointFound)?;
            let mut t = 1.0;
            let mut accepted = false;
            let mut nd = d.clone();
            let mut nxi = xi.clone();
            let mut moved = false;
            let lref = m.log_delta_ref(&d);
            let f0 = m.scaled_value(&d, &xi, lref)?;
            for _ in 0..30 {
                for h in 0..q {
                    nd[h] = d[h] + t * step[5 * h];
                    for l in 0..4 {
                        nxi[h][l] = xi[h][l] + t * step[5 * h + 1 + l];
                    }
                }
                moved = project_centres(m.dom, &mut nxi);
                let disp: f64 = (0..q)
                    .map(|h| (nd[h] - d[h]).powi(2) + point::norm2(&point::sub(&nxi[h], &xi[h])))
                    .sum::<f64>()
                    .sqrt();
                if disp < step_tol {
                    // the projected step vanishes: a constrained critical point
                    accepted = true;
                    break;
                }
                let ok_d = nd.iter().all(|v| *v > eta && *v < 1.0 / eta);
                if ok_d {
                    // accept if the model does not increase (the critical points sought are minima in d and ξ)
                    let f1 = m.scaled_value(&nd, &nxi, lref)?;
                    if f1 <= f0 + 1e-10 * f0.abs().max(1.0) {
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                return Err(Error::ExitedXeta(format!("no admissible step at lambda* = {lam}")));
            }
            let dx: f64 = (0..q)
                .map(|h| (nd[h] - d[h]).powi(2) + point::norm2(&point::sub(&nxi[h], &xi[h])))
                .sum::<f64>()
                .sqrt();
            d = nd;
            xi = nxi;
            on_boundary = moved;
            let (g2, _) = m.scaled_gradient(&d, &xi)?;
            gnorm = g2.norm();
            if gnorm < params.tol || dx < step_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoCriticalPointFound);
        }
        for h in 0..q {
            if model.dom.dist_to_boundary(&xi[h]) < eta {
                return Err(Error::ExitedXeta(format!("xi_{h} left X_eta")));
            }
        }
        points.push(TrajectoryPoint {
            lambda_star: lam,
            d: d.clone(),
            xi: xi.clone(),
            log_delta: (0..q).map(|h| -d[h] / lam).collect(),
            gradient_norm: gnorm,
            on_boundary,
            iterations: iters,
        });
    }
    let limit = match_points(&xi, robin_points);
    Ok(Trajectory { points, limit, used_fallback: false })
}

/// Assignment of groups to Robin critical points by minimal total displacement.
pub fn match_points(xi: &[Point], targets: &[Point]) -> Vec<Point> {
    if targets.is_empty() {
        return Vec::new();
    }
    let q = xi.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    // exhaustive search over assignments (q is small); repeated targets allowed
    let nt = targets.len();
    let total = nt.pow(q as u32);
    for code in 0..total {
        let mut c = code;
        let mut assign = Vec::with_capacity(q);
        for _ in 0..q {
            assign.push(c % nt);
            c /= nt;
        }
        let cost: f64 = (0..q).map(|h| point::dist(&xi[h], &targets[assign[h]])).sum();
        if best.as_ref().map_or(true, |(b, _)| cost < *b) {
            best = Some((cost, assign));
        }
    }
    best.unwrap().1.into_iter().map(|k| targets[k]).collect()
}

/// Direct descent on `J̃` with central finite differences in `(d, ξ)`: used when the fitted
/// model is not trusted.  The step is scaled by the curvature estimate per coordinate.
pub fn direct_descent(
    f: &dyn Fn(&[f64], &[Point]) -> Result<f64>,
    dom: &DomainModel,
    d0: &[f64],
    xi0: &[Point],
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<Point>)> {
    let q = d0.len();
    let mut d = d0.to_vec();
    let mut xi = xi0.to_vec();
    let pack = |d: &[f64], xi: &[Point]| -> Vec<f64> {
        let mut z = Vec::with_capacity(5 * q);
        for h in 0..q {
            z.push(d[h]);
            z.extend_from_slice(&xi[h]);
        }
        z
    };
    let unpack = |z: &[f64]| -> (Vec<f64>, Vec<Point>) {
        let d = (0..q).map(|h| z[5 * h]).collect();
        let xi = (0..q).map(|h| [z[5 * h + 1], z[5 * h + 2], z[5 * h + 3], z[5 * h + 4]]).collect();
        (d, xi)
    };
    let s = 1e-3 * dom.diam();
    for _ in 0..max_iter {
        let z = pack(&d, &xi);
        let f0 = f(&d, &xi)?;
        let mut newz = z.clone();
        let mut dmax: f64 = 0.0;
        for c in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += s;
            zm[c] -= s;
            let (dp, xp) = unpack(&zp);
            let (dm, xm) = unpack(&zm);
            let fp = f(&dp, &xp)?;
            let fm = f(&dm, &xm)?;
            let g = (fp - fm) / (2.0 * s);
            let curv = (fp - 2.0 * f0 + fm) / (s * s);
            let step = if curv > 0.0 { -g / curv } else { -g.signum() * s };
            let step = step.clamp(-0.1 * dom.diam(), 0.1 * dom.diam());
            newz[c] += step;
            dmax = dmax.max(step.abs());
        }
        let (nd, mut nxi) = unpack(&newz);
        project_centres(dom, &mut nxi);
        d = nd.iter().map(|v| v.clamp(dom.eta * 1.001, 0.999 / dom.eta)).collect();
        xi = nxi;
        if dmax < tol {
            return Ok((d, xi));
        }
    }
    Err(Error::NoCriticalPointFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::all_profiles;
    use crate::domain::QuadParams;

    #[test]
    fn schedule_shape() {
        let s = default_schedule();
        assert_eq!(s[0], 0.1);
        assert!(s.contains(&1e-2) && s.contains(&1e-3));
        assert!(s.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn zero_error_gives_zero_remainder() {
        let c = CouplingModel::from_rows(&[&[1.0]], vec![0, 1]).unwrap();
        let p = all_profiles(&c).unwrap();
        let dom = DomainModel::unit_ball().with_eta(1e-3).unwrap().with_quad(QuadParams::coarse());
        let s = AnsatzState::from_deltas(vec![0.01], vec![1e-2], vec![[0.0; 4]], &c, &dom).unwrap();
        let bp = BasisParams { j_scales: 2, j_harm: 1, ..Default::default() };
        let asm = Assembly::new(&s, &c, &p, &dom, &bp).unwrap();
        let basis = GalerkinBasis::new(&asm, &bp).unwrap();
        let rp = RemainderParams { zero_error: true, ..Default::default() };
        let sol = solve_remainder(&asm, &basis, &rp, None).unwrap();
        assert_eq!(sol.norm, 0.0);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn fit_recovers_synthetic_constants() {
        let (a0, a1, a2) = (3.0, 50.0, 7.0);
        let samples: Vec<EnergySample> = (0..10)
            .map(|k| {
                let delta = 1e-2 * 0.5f64.powi(k);
                let lambda = 0.05 * 0.5f64.powf(k as f64 / 2.0);
                let r = 0.03;
                let j = 2.0 * (a0 + a1 * delta * delta * r - a2 * lambda * delta * delta * delta.ln().abs());
                EnergySample { delta, lambda, robin: r, weight: 2.0, energy: j }
            })
            .collect();
        let m = fit_expansion(&samples).unwrap();
        assert!((m.a0 - a0).abs() < 1e-9);
        assert!((m.a1 - a1).abs() < 1e-5 * a1);
        assert!((m.a2 - a2).abs() < 1e-5 * a2);
    }

    #[test]
    fn matching_minimizes_displacement() {
        let xi = vec![[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]];
        let t = vec![[-0.9, 0.0, 0.0, 0.0], [0.9, 0.0, 0.0, 0.0]];
        let m = match_points(&xi, &t);
        assert_eq!(m[0], t[1]);
        assert_eq!(m[1], t[0]);
    }
}
