//! Bounded domains of ℝ⁴: Dirichlet Green regular part, Robin function, its critical
//! points, and quadrature over Ω.
//!
//! `regular_part` returns `H` with `G(x,y) = Γ(x−y) − H(x,y)`, `Γ(z) = 1/(4π²|z|²)`, so
//! `H(·,y) = Γ(·−y)` on ∂Ω.  Bubble projections use the rescaled `H̃ = 4π²H`, which
//! equals `|x−y|⁻²` on ∂Ω.

pub mod boxgreen;
pub mod grid;
pub mod omega;

use crate::error::{Error, Result};
use crate::point::{self, Point};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

pub use boxgreen::BoxGreen;
pub use grid::GridDomain;
pub use omega::{QuadParams, Quadrature};

pub const FOUR_PI2: f64 = 4.0 * PI * PI;

#[derive(Debug, Clone)]
pub enum Shape {
    Ball { center: Point, radius: f64 },
    Box(BoxGreen),
    Grid(Arc<GridDomain>),
}

#[derive(Debug, Clone)]
pub struct DomainModel {
    pub shape: Shape,
    pub eta: f64,
    pub quad: QuadParams,
    pub quadrature: Quadrature,
}

impl DomainModel {
    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidState(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self::assemble(Shape::Ball { center, radius }))
    }

    pub fn unit_ball() -> Self {
        Self::ball([0.0; 4], 1.0).unwrap()
    }

    pub fn cuboid(corner: Point, widths: [f64; 4]) -> Result<Self> {
        if widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidState(format!("box widths must be positive, got {widths:?}")));
        }
        Ok(Self::assemble(Shape::Box(BoxGreen::new(corner, widths))))
    }

    pub fn grid(g: GridDomain) -> Self {
        Self::assemble(Shape::Grid(Arc::new(g)))
    }

    fn assemble(shape: Shape) -> Self {
        let mut d = DomainModel { shape, eta: 0.0, quad: QuadParams::default(), quadrature: Quadrature::default() };
        d.eta = 0.1 * d.diam();
        d.quadrature = d.quadrature_for(&[d.center()], 1e-4 * d.diam());
        d
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidState(format!("eta must lie in (0,1), got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn with_quad(mut self, quad: QuadParams) -> Self {
        self.quad = quad;
        self.quadrature = self.quadrature_for(&[self.center()], 1e-4 * self.diam());
        self
    }

    pub fn diam(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Box(b) => point::norm(&b.widths),
            Shape::Grid(g) => g.bounding_diam(),
        }
    }

    pub fn center(&self) -> Point {
        match &self.shape {
            Shape::Ball { center, .. } => *center,
            Shape::Box(b) => point::axpy(&b.corner, 0.5, &b.widths),
            Shape::Grid(g) => g.bounding_center(),
        }
    }

    pub fn volume(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => 0.5 * PI * PI * radius.powi(4),
            Shape::Box(b) => b.widths.iter().product(),
            Shape::Grid(g) => g.node_volume(),
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        match &self.shape {
            Shape::Ball { center, radius } => point::dist(x, center) < *radius,
            Shape::Box(b) => b.contains(x),
            Shape::Grid(g) => g.contains(x),
        }
    }

    pub fn dist_to_boundary(&self, x: &Point) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => radius - point::dist(x, center),
            Shape::Box(b) => b.dist_to_boundary(x),
            Shape::Grid(g) => g.dist_to_boundary(x),
        }
    }

    /// `H(x,y)` in the `Γ = 1/(4π²|z|²)` normalization.
    pub fn regular_part(&self, x: &Point, y: &Point) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::PointOutsideDomain(*x));
        }
        if !self.contains(y) {
            return Err(Error::PointOutsideDomain(*y));
        }
        match &self.shape {
            Shape::Ball { center, radius } => Ok(ball_h_tilde(center, *radius, x, y) / FOUR_PI2),
            Shape::Box(b) => b.regular_part(x, y),
            Shape::Grid(g) => g.regular_part(x, y),
        }
    }

    /// `H̃ = 4π²H`.
    pub fn h_tilde(&self, x: &Point, y: &Point) -> Result<f64> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                if !self.contains(x) {
                    return Err(Error::PointOutsideDomain(*x));
                }
                Ok(ball_h_tilde(center, *radius, x, y))
            }
            _ => Ok(FOUR_PI2 * self.regular_part(x, y)?),
        }
    }

    /// `(H̃(x,y), ∇_y H̃(x,y))`.
    pub fn h_tilde_grad(&self, x: &Point, y: &Point) -> Result<(f64, Point)> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                if !self.contains(x) {
                    return Err(Error::PointOutsideDomain(*x));
                }
                Ok(ball_h_tilde_grad(center, *radius, x, y))
            }
            _ => {
                let h0 = self.h_tilde(x, y)?;
                let s = 1e-5 * self.diam();
                let mut g = [0.0; 4];
                for (i, gi) in g.iter_mut().enumerate() {
                    let e = point::unit(i);
                    let hp = self.h_tilde(x, &point::axpy(y, s, &e))?;
                    let hm = self.h_tilde(x, &point::axpy(y, -s, &e))?;
                    *gi = (hp - hm) / (2.0 * s);
                }
                Ok((h0, g))
            }
        }
    }

    /// Robin function `r(x) = H(x,x)`.
    pub fn robin(&self, x: &Point) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::PointOutsideDomain(*x));
        }
        if self.dist_to_boundary(x) < self.eta {
            return Err(Error::TooCloseToBoundary { point: *x, eta: self.eta });
        }
        self.robin_unchecked(x)
    }

    /// `r(x)` without the `η` margin check.
    pub fn robin_unchecked(&self, x: &Point) -> Result<f64> {
        match &self.shape {
            Shape::Ball { center, radius } => Ok(ball_h_tilde(center, *radius, x, x) / FOUR_PI2),
            _ => self.regular_part(x, x),
        }
    }

    pub fn robin_gradient(&self, x: &Point) -> Result<Point> {
        let s = 1e-4 * self.diam();
        let mut g = [0.0; 4];
        for (i, gi) in g.iter_mut().enumerate() {
            let e = point::unit(i);
            *gi = (self.robin_unchecked(&point::axpy(x, s, &e))? - self.robin_unchecked(&point::axpy(x, -s, &e))?)
                / (2.0 * s);
        }
        Ok(g)
    }

    pub fn robin_hessian(&self, x: &Point) -> Result<DMatrix<f64>> {
        let s = 1e-4 * self.diam();
        let f0 = self.robin_unchecked(x)?;
        let mut hm = DMatrix::zeros(4, 4);
        for i in 0..4 {
            let ei = point::unit(i);
            let fp = self.robin_unchecked(&point::axpy(x, s, &ei))?;
            let fm = self.robin_unchecked(&point::axpy(x, -s, &ei))?;
            hm[(i, i)] = (fp - 2.0 * f0 + fm) / (s * s);
            for j in 0..i {
                let ej = point::unit(j);
                let pp = self.robin_unchecked(&point::axpy(&point::axpy(x, s, &ei), s, &ej))?;
                let pm = self.robin_unchecked(&point::axpy(&point::axpy(x, s, &ei), -s, &ej))?;
                let mp = self.robin_unchecked(&point::axpy(&point::axpy(x, -s, &ei), s, &ej))?;
                let mm = self.robin_unchecked(&point::axpy(&point::axpy(x, -s, &ei), -s, &ej))?;
                let v = (pp - pm - mp + mm) / (4.0 * s * s);
                hm[(i, j)] = v;
                hm[(j, i)] = v;
            }
        }
        Ok(hm)
    }

    /// Quadrature refined around the given centres down to scale `min_scale`.
    pub fn quadrature_for(&self, centres: &[Point], min_scale: f64) -> Quadrature {
        omega::build(self, centres, min_scale, &self.quad)
    }

    pub fn omega_quadrature<F: Fn(&Point) -> f64 + Sync>(&self, f: F) -> f64 {
        self.quadrature.integrate(&f)
    }

    /// Deterministic interior sample with margin `margin`.
    pub fn sample_interior(&self, rng: &mut ChaCha8Rng, margin: f64) -> Point {
        let c = self.center();
        let half = 0.5 * self.diam();
        loop {
            let p = [
                c[0] + half * (2.0 * rng.gen::<f64>() - 1.0),
                c[1] + half * (2.0 * rng.gen::<f64>() - 1.0),
                c[2] + half * (2.0 * rng.gen::<f64>() - 1.0),
                c[3] + half * (2.0 * rng.gen::<f64>() - 1.0),
            ];
            if self.contains(&p) && self.dist_to_boundary(&p) >= margin {
                return p;
            }
        }
    }
}

/// Ball closed form from the Kelvin image: `H̃(x,y) = 1/(|x'|²|y'|²/R² − 2x'·y' + R²)`
/// in coordinates centred at the ball centre.
pub fn ball_h_tilde(center: &Point, radius: f64, x: &Point, y: &Point) -> f64 {
    let xp = point::sub(x, center);
    let yp = point::sub(y, center);
    let d = point::norm2(&xp) * point::norm2(&yp) / (radius * radius) - 2.0 * point::dot(&xp, &yp) + radius * radius;
    1.0 / d
}

pub fn ball_h_tilde_grad(center: &Point, radius: f64, x: &Point, y: &Point) -> (f64, Point) {
    let xp = point::sub(x, center);
    let yp = point::sub(y, center);
    let x2 = point::norm2(&xp);
    let d = x2 * point::norm2(&yp) / (radius * radius) - 2.0 * point::dot(&xp, &yp) + radius * radius;
    let h = 1.0 / d;
    let mut g = [0.0; 4];
    for i in 0..4 {
        let dd = 2.0 * x2 * yp[i] / (radius * radius) - 2.0 * xp[i];
        g[i] = -dd * h * h;
    }
    (h, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    pub point: Point,
    pub value: f64,
    pub hessian_eigenvalues: Vec<f64>,
    pub degenerate: bool,
}

/// Multistart damped Newton on `∇r = 0` with finite-difference derivatives.  Runs that
/// leave `X_η` are discarded; survivors are deduplicated within `10⁻³·diam` and returned
/// in order of the seed that found them first.
pub fn robin_critical_points(dom: &DomainModel, starts: usize, seed: u64) -> Result<Vec<CriticalPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = vec![dom.center()];
    while seeds.len() < starts.max(1) {
        seeds.push(dom.sample_interior(&mut rng, dom.eta));
    }
    let results: Vec<Option<Point>> = {
        use rayon::prelude::*;
        seeds.par_iter().map(|s| newton_robin(dom, *s).ok()).collect()
    };
    let dedup = 1e-3 * dom.diam();
    let mut found: Vec<CriticalPoint> = Vec::new();
    for p in results.into_iter().flatten() {
        if found.iter().any(|c| point::dist(&c.point, &p) < dedup) {
            continue;
        }
        let hess = dom.robin_hessian(&p)?;
        let eig = SymmetricEigen::new(hess).eigenvalues;
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let scale = ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let degenerate = ev.iter().any(|v| v.abs() < 1e-4 * scale.max(1e-300));
        found.push(CriticalPoint { point: p, value: dom.robin_unchecked(&p)?, hessian_eigenvalues: ev, degenerate });
    }
    if found.is_empty() {
        return Err(Error::NoCriticalPointFound);
    }
    Ok(found)
}

fn newton_robin(dom: &DomainModel, start: Point) -> Result<Point> {
    let mut x = start;
    let mut g = dom.robin_gradient(&x)?;
    let scale = dom.robin_unchecked(&x)?.abs().max(1e-300) / dom.diam();
    for _ in 0..100 {
        let gn = point::norm(&g);
        if gn < 1e-9 * scale {
            return Ok(x);
        }
        let h = dom.robin_hessian(&x)?;
        let step = h
            .lu()
            .solve(&DVector::from_row_slice(&g))
            .map(|s| [-s[0], -s[1], -s[2], -s[3]])
            .unwrap_or([-g[0], -g[1], -g[2], -g[3]]);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xn = point::axpy(&x, t, &step);
            if dom.contains(&xn) && dom.dist_to_boundary(&xn) >= dom.eta {
                let gnew = dom.robin_gradient(&xn)?;
                if point::norm(&gnew) < gn {
                    x = xn;
                    g = gnew;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if point::norm(&g) < 1e-6 * scale {
        Ok(x)
    } else {
        Err(Error::NoCriticalPointFound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_regular_part_values() {
        let d = DomainModel::unit_ball();
        let h00 = d.regular_part(&[0.0; 4], &[0.0; 4]).unwrap();
        assert!((h00 - 1.0 / FOUR_PI2).abs() < 1e-15);
        let d2 = DomainModel::ball([0.0; 4], 2.0).unwrap();
        assert!((d2.regular_part(&[0.0; 4], &[0.0; 4]).unwrap() - 0.25 / FOUR_PI2).abs() < 1e-15);
        let r = d.robin(&[0.5, 0.0, 0.0, 0.0]).unwrap();
        assert!((r - 16.0 / (9.0 * FOUR_PI2)).abs() < 1e-14);
        assert!((r - 0.045032).abs() < 1e-6);
    }

    #[test]
    fn ball_boundary_data() {
        let x = [0.6, 0.8, 0.0, 0.0];
        let y = [0.1, -0.2, 0.3, 0.0];
        let h = ball_h_tilde(&[0.0; 4], 1.0, &x, &y);
        assert!((h - 1.0 / point::norm2(&point::sub(&x, &y))).abs() < 1e-12);
    }

    #[test]
    fn ball_gradient_matches_fd() {
        let x = [0.2, -0.1, 0.3, 0.05];
        let y = [0.1, 0.2, -0.3, 0.1];
        let (_, g) = ball_h_tilde_grad(&[0.0; 4], 1.0, &x, &y);
        for i in 0..4 {
            let e = point::unit(i);
            let s = 1e-6;
            let fd = (ball_h_tilde(&[0.0; 4], 1.0, &x, &point::axpy(&y, s, &e))
                - ball_h_tilde(&[0.0; 4], 1.0, &x, &point::axpy(&y, -s, &e)))
                / (2.0 * s);
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn robin_monotone_along_radius() {
        let d = DomainModel::unit_ball();
        let v: Vec<f64> = (0..10).map(|k| d.robin(&[0.07 * k as f64, 0.0, 0.0, 0.0]).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(d.robin(&[0.95, 0.0, 0.0, 0.0]), Err(Error::TooCloseToBoundary { .. })));
        assert!(matches!(d.regular_part(&[1.5, 0.0, 0.0, 0.0], &[0.0; 4]), Err(Error::PointOutsideDomain(_))));
    }

    #[test]
    fn critical_points_ball_and_translate() {
        let d = DomainModel::unit_ball();
        let cps = robin_critical_points(&d, 6, 7).unwrap();
        assert_eq!(cps.len(), 1);
        assert!(point::norm(&cps[0].point) < 1e-6);
        assert!(cps[0].hessian_eigenvalues.iter().all(|v| *v > 0.0));
        assert!(!cps[0].degenerate);
        let c = [0.3, -1.0, 2.0, 0.5];
        let t = DomainModel::ball(c, 1.0).unwrap();
        let cps = robin_critical_points(&t, 4, 7).unwrap();
        assert_eq!(cps.len(), 1);
        assert!(point::dist(&cps[0].point, &c) < 1e-6);
    }
}
