//! Measurements shared by the scaling claims: kernel dimensions of the linearized group
//! system, coercivity of `L` on the bulk block, and log–log regressions.

use crate::coupling::{alpha_matrix, CouplingModel, SyncProfile};
use crate::error::{Error, Result};
use crate::operator::{Assembly, GalerkinBasis};
use crate::quadrature::gauss_legendre;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::fmt;

/// Truncation radius of the radial sector problems.
pub const RADIAL_CUTOFF: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SectorMode {
    /// eigenvalue of the α-matrix the mode is matched against
    pub target: f64,
    pub harmonic: usize,
    pub nu: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelDimension {
    pub radial: usize,
    pub angular: usize,
    pub total: usize,
    pub alpha_eigenvalues: Vec<f64>,
    pub modes: Vec<SectorMode>,
}

/// Eigenvalues `ν` of `−Δψ = ν U² ψ` restricted to the harmonic `ℓ`, in increasing order,
/// from linear elements on `[0, R]` with the decay-matched Robin condition `ψ' = −(ℓ+2)ψ/r`.
pub fn sector_eigenvalues(l: usize, n: usize, count: usize) -> Vec<f64> {
    let r = RADIAL_CUTOFF;
    let nodes: Vec<f64> = (0..=n).map(|i| r * (i as f64 / n as f64).powi(2)).collect();
    let ll = (l * (l + 2)) as f64;
    let (gx, gw) = gauss_legendre(4);
    let mut k = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    for e in 0..n {
        let (a, b) = (nodes[e], nodes[e + 1]);
        let hl = b - a;
        let stiff = (b.powi(4) - a.powi(4)) / 4.0 / (hl * hl);
        let idx = [e, e + 1];
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate() {
                let sign = if p == q { 1.0 } else { -1.0 };
                k[(i, j)] += sign * stiff;
                let (mut kl, mut ml) = (0.0, 0.0);
                for (x, w) in gx.iter().zip(&gw) {
                    let t = 0.5 * (x + 1.0);
                    let rr = a + t * hl;
                    let phi = [1.0 - t, t];
                    let wt = 0.5 * w * hl * phi[p] * phi[q];
                    kl += wt * rr;
                    ml += wt * 8.0 * rr.powi(3) / (1.0 + rr * rr).powi(2);
                }
                k[(i, j)] += ll * kl;
                m[(i, j)] += ml;
            }
        }
    }
    k[(n, n)] += (l as f64 + 2.0) * r * r;
    // ψ(0) = 0 for ℓ ≥ 1
    let start = if l == 0 { 0 } else { 1 };
    let dim = n + 1 - start;
    let k = k.view((start, start), (dim, dim)).into_owned();
    let m = m.view((start, start), (dim, dim)).into_owned();
    let chol = m.cholesky().expect("mass matrix is positive definite");
    let linv = chol.l().try_inverse().expect("triangular factor invertible");
    let c: DMatrix<f64> = &linv * k * linv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev.truncate(count);
    ev
}

/// Counts, per sector, the eigenvalues of the scalar problems `−Δψ = a U²ψ` (one per
/// eigenvalue `a` of the α-matrix) that coincide with `a`.  A mode counts when
/// `|ν − a| ≤ 10·err`, with `err = |ν(N) − ν(2N)|/3` the Richardson estimate.
pub fn kernel_dimension(profile: &SyncProfile, coupling: &CouplingModel, resolution: usize) -> Result<KernelDimension> {
    let a = alpha_matrix(profile, coupling);
    let alpha_eigenvalues: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    let count = 6;
    let mut modes = Vec::new();
    let mut dims = [0usize; 2];
    for l in 0..2 {
        let coarse = sector_eigenvalues(l, resolution, count);
        let fine = sector_eigenvalues(l, 2 * resolution, count);
        for &target in &alpha_eigenvalues {
            for (nc, nf) in coarse.iter().zip(&fine) {
                let err = (nc - nf).abs() / 3.0;
                let gap = (nf - target).abs();
                if gap <= 10.0 * err {
                    if err > 1e-2 * target.abs().max(1.0) {
                        return Err(Error::ResolutionTooCoarse { gap, err });
                    }
                    dims[l] += 1;
                    modes.push(SectorMode { target, harmonic: l, nu: *nf, err });
                } else if gap < 0.05 * target.abs().max(1.0) {
                    // close to the target yet outside the error band: refine
                    return Err(Error::ResolutionTooCoarse { gap, err });
                }
            }
        }
    }
    Ok(KernelDimension { radial: dims[0], angular: dims[1], total: dims[0] + 4 * dims[1], alpha_eigenvalues, modes })
}

fn min_abs_eigenvalue(m: &DMatrix<f64>) -> (f64, usize) {
    let s = 0.5 * (m + m.transpose());
    let ev = SymmetricEigen::new(s).eigenvalues;
    let small = ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    (small, ev.iter().filter(|v| **v < 0.0).count())
}

/// Smallest singular value of `L` on the bulk block (the matrix is symmetric).
pub fn coercivity_constant(asm: &Assembly, basis: &GalerkinBasis) -> Result<f64> {
    basis.check(asm)?;
    let l = basis.q_bulk.transpose() * asm.l_raw() * &basis.q_bulk;
    Ok(min_abs_eigenvalue(&l).0)
}

/// Same measurement with the kernel block included in the test space.
pub fn coercivity_unrestricted(asm: &Assembly, basis: &GalerkinBasis) -> Result<f64> {
    basis.check(asm)?;
    let l = basis.q_full.transpose() * asm.l_raw() * &basis.q_full;
    Ok(min_abs_eigenvalue(&l).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercivitySweep {
    pub betas: Vec<f64>,
    pub sigma: Vec<f64>,
    /// first cross coupling where σ_min drops below `threshold`
    pub crossing: Option<f64>,
    pub threshold: f64,
    /// σ_min non-increasing on the samples before the crossing
    pub monotone_before_crossing: bool,
}

/// σ_min of `L` on the bulk block with every inter-group entry of β set to `b`, for `b` in
/// `betas` (increasing).  The intra-group potential and λ mass are assembled once; the
/// inter-group potential is linear in `b`.
pub fn coercivity_sweep(asm: &Assembly, basis: &GalerkinBasis, betas: &[f64], threshold: f64) -> Result<CoercivitySweep> {
    basis.check(asm)?;
    let q = &basis.q_bulk;
    let cp = &asm.coupling;
    let base = q.transpose() * (&asm.gram - asm.potential(&cp.beta, Some(&asm.state.lambda), true, false)) * q;
    let unit = DMatrix::from_element(cp.m, cp.m, 1.0);
    let cross = q.transpose() * asm.potential(&unit, None, false, true) * q;
    let at = |b: f64| min_abs_eigenvalue(&(&base - &cross * b));
    let mut sigma = Vec::with_capacity(betas.len());
    let mut crossing = None;
    let mut prev: Option<(f64, usize)> = None;
    for &b in betas {
        let (s, neg) = at(b);
        if crossing.is_none() {
            if s < threshold {
                crossing = Some(b);
            } else if let Some((pb, pneg)) = prev {
                if neg != pneg {
                    // an eigenvalue passed through zero between samples
                    let (mut lo, mut hi) = (pb, b);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        let (sm, nm) = at(mid);
                        if sm < threshold {
                            hi = mid;
                            break;
                        }
                        if nm == pneg { lo = mid } else { hi = mid }
                    }
                    // first sub-threshold point above lo
                    let (mut a, mut c) = (lo, hi);
                    for _ in 0..60 {
                        let mid = 0.5 * (a + c);
                        if at(mid).0 < threshold { c = mid } else { a = mid }
                    }
                    crossing = Some(c);
                }
            }
        }
        prev = Some((b, neg));
        sigma.push(s);
    }
    let before: Vec<f64> = betas
        .iter()
        .zip(&sigma)
        .filter(|(b, _)| crossing.map_or(true, |c| **b < c))
        .map(|(_, s)| *s)
        .collect();
    let monotone_before_crossing = before.windows(2).all(|w| w[1] <= w[0] + 1e-8);
    Ok(CoercivitySweep { betas: betas.to_vec(), sigma, crossing, threshold, monotone_before_crossing })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slope {
    pub p: f64,
    pub stderr: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn slope_regression(points: &[(f64, f64)]) -> Result<Slope> {
    if points.len() < 3 {
        return Err(Error::DegenerateRegression(format!("{} points, need at least 3", points.len())));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::DegenerateRegression("non-positive data".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 {
        return Err(Error::DegenerateRegression("zero variance in x".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let p = sxy / sxx;
    let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - my - p * (x - mx)).powi(2)).sum();
    let stderr = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(Slope { p, stderr })
}

/// `ln y ≈ c + p₁ ln x₁ + p₂ ln x₂`.
pub fn joint_slope_regression(points: &[(f64, f64, f64)]) -> Result<[Slope; 2]> {
    if points.len() < 4 {
        return Err(Error::DegenerateRegression(format!("{} points, need at least 4", points.len())));
    }
    if points.iter().any(|(a, b, y)| !(*a > 0.0 && *b > 0.0 && *y > 0.0)) {
        return Err(Error::DegenerateRegression("non-positive data".into()));
    }
    let n = points.len();
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => points[i].0.ln(),
        _ => points[i].1.ln(),
    });
    let y = DVector::from_fn(n, |i, _| points[i].2.ln());
    let xtx = x.transpose() * &x;
    let inv = xtx.try_inverse().ok_or_else(|| Error::DegenerateRegression("collinear regressors".into()))?;
    let coef = &inv * x.transpose() * &y;
    let rss = (&y - &x * &coef).norm_squared();
    let s2 = if n > 3 { rss / (n - 3) as f64 } else { 0.0 };
    Ok([
        Slope { p: coef[1], stderr: (s2 * inv[(1, 1)]).sqrt() },
        Slope { p: coef[2], stderr: (s2 * inv[(2, 2)]).sqrt() },
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub claim: String,
    pub predicted: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub name: String,
    pub entries: Vec<ReportEntry>,
}

fn num(x: f64) -> String {
    if x == 0.0 || (1e-3..1e6).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl VerificationReport {
    pub fn new(name: impl Into<String>) -> Self {
        VerificationReport { name: name.into(), entries: Vec::new() }
    }

    /// `|measured − predicted| ≤ tol`.
    pub fn within(&mut self, claim: &str, predicted: f64, measured: f64, tol: f64) -> bool {
        let pass = (measured - predicted).abs() <= tol;
        self.push(claim, num(predicted), measured, tol, pass)
    }

    /// `measured ≥ bound`.
    pub fn at_least(&mut self, claim: &str, bound: f64, measured: f64) -> bool {
        self.push(claim, format!(">= {}", num(bound)), measured, 0.0, measured >= bound)
    }

    /// `measured ≤ bound`.
    pub fn at_most(&mut self, claim: &str, bound: f64, measured: f64) -> bool {
        self.push(claim, format!("<= {}", num(bound)), measured, 0.0, measured <= bound)
    }

    pub fn holds(&mut self, claim: &str, measured: f64, pass: bool) -> bool {
        self.push(claim, "true".to_string(), measured, 0.0, pass)
    }

    fn push(&mut self, claim: &str, predicted: String, measured: f64, tolerance: f64, pass: bool) -> bool {
        self.entries.push(ReportEntry { claim: claim.to_string(), predicted, measured, tolerance, pass });
        pass
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.entries.extend(other.entries);
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{}: predicted {}, measured {:.6e}, tolerance {:.3e}, {}",
                e.claim,
                e.predicted,
                e.measured,
                e.tolerance,
                if e.pass { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{all_profiles, complete_profile, SyncProfile};

    #[test]
    fn sector_spectrum() {
        let l0 = sector_eigenvalues(0, 400, 3);
        assert!((l0[0] - 1.0).abs() < 1e-3, "{l0:?}");
        assert!((l0[1] - 3.0).abs() < 1e-2, "{l0:?}");
        let l1 = sector_eigenvalues(1, 400, 2);
        assert!((l1[0] - 3.0).abs() < 1e-2, "{l1:?}");
    }

    #[test]
    fn singleton_kernel() {
        let c = CouplingModel::from_rows(&[&[1.0]], vec![0, 1]).unwrap();
        let p = all_profiles(&c).unwrap();
        let k = kernel_dimension(&p[0], &c, 200).unwrap();
        assert_eq!((k.radial, k.angular, k.total), (1, 1, 5));
    }

    #[test]
    fn degenerate_pair_has_extra_mode() {
        let c = CouplingModel::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]], vec![0, 2]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p = SyncProfile { h: 0, c: vec![s, s], e: vec![], eigenvalue_residual: 0.0 };
        let p = complete_profile(p, &c).unwrap();
        let k = kernel_dimension(&p, &c, 200).unwrap();
        assert_eq!(k.total, 6);
    }

    #[test]
    fn slopes() {
        let pts: Vec<(f64, f64)> = (0..6).map(|k| {
            let x = 0.5f64.powi(k);
            (x, x * x)
        }).collect();
        let s = slope_regression(&pts).unwrap();
        assert!((s.p - 2.0).abs() < 1e-12 && s.stderr < 1e-10);
        let flat: Vec<(f64, f64)> = pts.iter().map(|(x, _)| (*x, 3.0)).collect();
        assert!(slope_regression(&flat).unwrap().p.abs() < 1e-12);
        let wiggle: Vec<(f64, f64)> = pts.iter().map(|(x, _)| (*x, x * x * (1.0 + 0.1 * x.ln().sin()))).collect();
        assert!((slope_regression(&wiggle).unwrap().p - 2.0).abs() < 0.1);
        assert!(matches!(slope_regression(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]), Err(Error::DegenerateRegression(_))));
    }

    #[test]
    fn joint_slopes() {
        let mut pts = vec![];
        for a in 0..3 {
            for b in 0..3 {
                let (x, y) = (0.5f64.powi(a), 0.5f64.powi(b));
                pts.push((x, y, 2.0 * x * y * y));
            }
        }
        let s = joint_slope_regression(&pts).unwrap();
        assert!((s[0].p - 1.0).abs() < 1e-12 && (s[1].p - 2.0).abs() < 1e-12);
    }
}
