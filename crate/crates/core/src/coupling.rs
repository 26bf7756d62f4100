//! Group decomposition of the components and the finite-dimensional algebra of the
//! synchronized profiles.

use crate::bubble::{Bubble, bubble_value};
use crate::error::{Error, Result};
use crate::point::Point;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const EIGEN_THREE_TOL: f64 = 1e-8;
pub const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    pub m: usize,
    pub beta: DMatrix<f64>,
    pub decomposition: Vec<usize>,
}

impl CouplingModel {
    /// Checks the matrix invariants; the decomposition is checked by
    /// [`validate_decomposition`].
    pub fn new(beta: DMatrix<f64>, decomposition: Vec<usize>) -> Result<Self> {
        let m = beta.nrows();
        if beta.ncols() != m || m == 0 {
            return Err(Error::InvalidModel(format!("beta must be square and nonempty, got {}x{}", beta.nrows(), beta.ncols())));
        }
        for i in 0..m {
            if beta[(i, i)].is_nan() || beta[(i, i)] <= 0.0 {
                return Err(Error::InvalidModel(format!("beta[{i}][{i}] = {} must be positive", beta[(i, i)])));
            }
            for j in 0..i {
                if beta[(i, j)] != beta[(j, i)] {
                    return Err(Error::InvalidModel(format!("beta not symmetric at ({i},{j})")));
                }
            }
        }
        let model = CouplingModel { m, beta, decomposition };
        validate_decomposition(&model)?;
        Ok(model)
    }

    pub fn from_rows(rows: &[&[f64]], decomposition: Vec<usize>) -> Result<Self> {
        let m = rows.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        if flat.len() != m * m {
            return Err(Error::InvalidModel("beta rows have inconsistent length".into()));
        }
        Self::new(DMatrix::from_row_slice(m, m, &flat), decomposition)
    }

    pub fn q(&self) -> usize {
        self.decomposition.len() - 1
    }

    /// Zero-based component range of group `h` (zero-based).
    pub fn group(&self, h: usize) -> std::ops::Range<usize> {
        self.decomposition[h]..self.decomposition[h + 1]
    }

    pub fn group_of(&self, i: usize) -> usize {
        (0..self.q()).find(|&h| self.group(h).contains(&i)).expect("component index out of range")
    }

    pub fn group_matrix(&self, h: usize) -> DMatrix<f64> {
        let g = self.group(h);
        self.beta.view((g.start, g.start), (g.len(), g.len())).into_owned()
    }

    /// Replace every inter-group entry by `b`.
    pub fn with_cross_beta(&self, b: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.m {
            for j in 0..self.m {
                if self.group_of(i) != self.group_of(j) {
                    out.beta[(i, j)] = b;
                }
            }
        }
        out
    }
}

/// Returns the zero-based index sets `I_1 … I_q`.
pub fn validate_decomposition(model: &CouplingModel) -> Result<Vec<Vec<usize>>> {
    let d = &model.decomposition;
    if d.len() < 2 {
        return Err(Error::MalformedDecomposition(format!("{d:?}: need at least two entries")));
    }
    if d[0] != 0 {
        return Err(Error::MalformedDecomposition(format!("{d:?}: first entry must be 0")));
    }
    if *d.last().unwrap() != model.m {
        return Err(Error::MalformedDecomposition(format!("{d:?}: last entry must be m = {}", model.m)));
    }
    if d.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::MalformedDecomposition(format!("{d:?}: not strictly increasing")));
    }
    Ok(d.windows(2).map(|w| (w[0]..w[1]).collect()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncProfile {
    pub h: usize,
    pub c: Vec<f64>,
    pub e: Vec<f64>,
    pub eigenvalue_residual: f64,
}

impl SyncProfile {
    pub fn c_norm2(&self) -> f64 {
        self.c.iter().map(|c| c * c).sum()
    }
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 { f64::INFINITY } else { max / min }
}

/// Solves `Σ_{j∈I_h} β_ij c_j² = 1`, linear in `s = c²`.  The returned profile has
/// `e` empty until [`complete_profile`] fills it.
pub fn solve_sync_coefficients(model: &CouplingModel, h: usize) -> Result<SyncProfile> {
    if h >= model.q() {
        return Err(Error::MalformedDecomposition(format!("group {h} out of range")));
    }
    let b = model.group_matrix(h);
    let cond = condition_number(&b);
    let n = b.nrows();
    if !(cond < COND_LIMIT) {
        // An inconsistent singular system has no solution at all, in particular no
        // positive one; a consistent one has a continuum and is reported as singular.
        let ones = DVector::from_element(n, 1.0);
        let ls = b.clone().svd(true, true).solve(&ones, 1e-12 * b.norm()).ok();
        if let Some(s) = ls {
            if (&b * &s - &ones).norm() > 1e-8 {
                return Err(Error::NoPositiveSolution { group: h, s: s.iter().copied().collect() });
            }
        }
        return Err(Error::SingularGroupMatrix { group: h, cond });
    }
    let s = b
        .lu()
        .solve(&DVector::from_element(n, 1.0))
        .ok_or(Error::SingularGroupMatrix { group: h, cond })?;
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NoPositiveSolution { group: h, s: s.iter().copied().collect() });
    }
    Ok(SyncProfile { h, c: s.iter().map(|v| v.sqrt()).collect(), e: Vec::new(), eigenvalue_residual: f64::NAN })
}

#[derive(Debug, Clone, PartialEq)]
pub struct A2Diagnostic {
    pub holds: bool,
    pub condition_number: f64,
    pub min_entry: f64,
}

pub fn check_a2(model: &CouplingModel, h: usize) -> A2Diagnostic {
    let b = model.group_matrix(h);
    let cond = condition_number(&b);
    let min_entry = b.iter().copied().fold(f64::INFINITY, f64::min);
    A2Diagnostic { holds: cond < COND_LIMIT && min_entry > 0.0, condition_number: cond, min_entry }
}

/// `α_ii = 3μ_i c_i² + Σ_{j≠i} β_ij c_j²`, `α_ij = 2β_ij c_i c_j`.
pub fn alpha_matrix(profile: &SyncProfile, model: &CouplingModel) -> DMatrix<f64> {
    let g = model.group(profile.h);
    let n = g.len();
    let c = &profile.c;
    let beta = |a: usize, b: usize| model.beta[(g.start + a, g.start + b)];
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            3.0 * beta(i, i) * c[i] * c[i] + (0..n).filter(|&k| k != i).map(|k| beta(i, k) * c[k] * c[k]).sum::<f64>()
        } else {
            2.0 * beta(i, j) * c[i] * c[j]
        }
    })
}

/// Unit eigenvector for the eigenvalue closest to 3, sign-normalized so the first
/// nonzero entry is positive.
pub fn group_eigenvector(a: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let eig = SymmetricEigen::new(a.clone());
    let (k, closest) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| (x.1 - 3.0).abs().total_cmp(&(y.1 - 3.0).abs()))
        .map(|(k, v)| (k, *v))
        .unwrap();
    if (closest - 3.0).abs() > EIGEN_THREE_TOL {
        return Err(Error::EigenvalueThreeMissing { closest });
    }
    let mut e: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let nrm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    e.iter_mut().for_each(|v| *v /= nrm);
    if let Some(first) = e.iter().find(|v| v.abs() > 1e-14) {
        if *first < 0.0 {
            e.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let ev = DVector::from_vec(e.clone());
    let residual = (a * &ev - &ev * 3.0).norm();
    Ok((e, residual))
}

/// Coefficients, α-matrix eigenvector and residual for group `h`.
pub fn sync_profile(model: &CouplingModel, h: usize) -> Result<SyncProfile> {
    let p = solve_sync_coefficients(model, h)?;
    complete_profile(p, model)
}

pub fn complete_profile(mut p: SyncProfile, model: &CouplingModel) -> Result<SyncProfile> {
    let a = alpha_matrix(&p, model);
    let (e, res) = group_eigenvector(&a)?;
    p.e = e;
    p.eigenvalue_residual = res;
    Ok(p)
}

pub fn all_profiles(model: &CouplingModel) -> Result<Vec<SyncProfile>> {
    (0..model.q()).map(|h| sync_profile(model, h)).collect()
}

/// Row values `Σ_{j∈I_h} β_ij c_j²`; all equal 1 for a valid profile.
pub fn row_values(profile: &SyncProfile, model: &CouplingModel) -> Vec<f64> {
    let g = model.group(profile.h);
    (0..g.len())
        .map(|i| (0..g.len()).map(|j| model.beta[(g.start + i, g.start + j)] * profile.c[j] * profile.c[j]).sum())
        .collect()
}

/// `max_i |−Δ(c_i U)(x) − c_i U Σ_j β_ij (c_j U)²|` for `U = U_{1,0}`, using `−ΔU = U³`.
pub fn synchronized_residual(profile: &SyncProfile, model: &CouplingModel, x: &Point) -> f64 {
    let u = bubble_value(&Bubble::unit(), x);
    let u3 = u * u * u;
    let g = model.group(profile.h);
    (0..g.len())
        .map(|i| {
            let s: f64 = (0..g.len()).map(|j| model.beta[(g.start + i, g.start + j)] * profile.c[j] * profile.c[j]).sum();
            (profile.c[i] * u3 - profile.c[i] * u3 * s).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(b12: f64) -> CouplingModel {
        CouplingModel::from_rows(&[&[1.0, b12], &[b12, 1.0]], vec![0, 2]).unwrap()
    }

    #[test]
    fn decomposition_examples() {
        let m3 = CouplingModel::from_rows(&[&[1.0, -1.0, -1.0], &[-1.0, 1.0, 2.0], &[-1.0, 2.0, 1.0]], vec![0, 1, 3]).unwrap();
        assert_eq!(validate_decomposition(&m3).unwrap(), vec![vec![0], vec![1, 2]]);
        assert_eq!(validate_decomposition(&pair(2.0)).unwrap(), vec![vec![0, 1]]);
        let bad = CouplingModel::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]], vec![0, 2, 2]);
        assert!(matches!(bad, Err(Error::MalformedDecomposition(_))));
    }

    #[test]
    fn asymmetric_rejected() {
        let r = CouplingModel::from_rows(&[&[1.0, 2.0], &[2.5, 1.0]], vec![0, 2]);
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn sync_coefficients() {
        let s = CouplingModel::from_rows(&[&[1.0]], vec![0, 1]).unwrap();
        assert!((solve_sync_coefficients(&s, 0).unwrap().c[0] - 1.0).abs() < 1e-15);
        let p = solve_sync_coefficients(&pair(2.0), 0).unwrap();
        for c in &p.c {
            assert!((c - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        }
        assert!(matches!(solve_sync_coefficients(&pair(-1.0), 0), Err(Error::NoPositiveSolution { .. })));
        assert!(matches!(solve_sync_coefficients(&pair(1.0), 0), Err(Error::SingularGroupMatrix { .. })));
    }

    #[test]
    fn inconsistent_positive_failure() {
        // invertible, but one s_j is negative
        let m = CouplingModel::from_rows(&[&[1.0, 2.0], &[2.0, 5.0]], vec![0, 2]).unwrap();
        assert!(matches!(solve_sync_coefficients(&m, 0), Err(Error::NoPositiveSolution { .. })));
    }

    #[test]
    fn a2_examples() {
        let s = CouplingModel::from_rows(&[&[1.0]], vec![0, 1]).unwrap();
        assert!(check_a2(&s, 0).holds);
        assert!(!check_a2(&pair(1.0), 0).holds);
        assert!(check_a2(&pair(2.0), 0).holds);
    }

    #[test]
    fn alpha_and_eigen() {
        let m = pair(2.0);
        let p = sync_profile(&m, 0).unwrap();
        let a = alpha_matrix(&p, &m);
        assert!((a[(0, 0)] - 5.0 / 3.0).abs() < 1e-14);
        assert!((a[(0, 1)] - 4.0 / 3.0).abs() < 1e-14);
        assert_eq!(a, a.transpose());
        let h = 1.0 / 2f64.sqrt();
        assert!((p.e[0] - h).abs() < 1e-12 && (p.e[1] - h).abs() < 1e-12);
        assert!(p.eigenvalue_residual <= 1e-12);
        let eig = SymmetricEigen::new(a).eigenvalues;
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0 / 3.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
        let single = CouplingModel::from_rows(&[&[1.0]], vec![0, 1]).unwrap();
        let ps = sync_profile(&single, 0).unwrap();
        assert_eq!(ps.e, vec![1.0]);
        assert!(ps.eigenvalue_residual == 0.0);
        assert!(matches!(group_eigenvector(&DMatrix::identity(2, 2)), Err(Error::EigenvalueThreeMissing { .. })));
    }

    #[test]
    fn residual_examples() {
        let m = pair(2.0);
        let p = sync_profile(&m, 0).unwrap();
        assert!(synchronized_residual(&p, &m, &[0.0; 4]) <= 1e-10);
        let mut bad = p.clone();
        bad.c.iter_mut().for_each(|c| *c *= 1.1);
        let u0 = crate::ALPHA;
        let minc = bad.c.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(synchronized_residual(&bad, &m, &[0.0; 4]) > 0.1 * u0.powi(3) * minc);
        let far = synchronized_residual(&bad, &m, &[1e3, 0.0, 0.0, 0.0]);
        assert!(far < 1e-15);
    }
}
