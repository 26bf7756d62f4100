//! Quadrature over Ω refined around bubble centres.
//!
//! Balls and boxes are convex, hence star-shaped from every centre.  Each centre `ξ_h`
//! integrates `χ_h f` over all of Ω in polar form, with the smooth partition of unity
//! `χ_h = |x−ξ_h|⁻⁴ / Σ_k |x−ξ_k|⁻⁴`, which vanishes to fourth order at the other
//! centres.  Rays carry the exact length `R(ω)`; geometric radial panels resolve every
//! scale from `min_scale·2⁻⁸` upward.  Balls use the S³ tensor rule; boxes use the face
//! pyramids, so `R(ω)` is smooth on each face.  Grid domains use the plain node sum.

use super::{DomainModel, Shape};
use crate::point::{self, Point};
use crate::quadrature::{Rule, SphereRule, geometric_panels};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams {
    pub na: usize,
    pub nb: usize,
    pub nc: usize,
    pub n_face: usize,
    pub n_radial: usize,
    pub ratio: f64,
    pub inner_factor: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams { na: 6, nb: 6, nc: 12, n_face: 4, n_radial: 8, ratio: 2.0, inner_factor: 2f64.powi(-8) }
    }
}

impl QuadParams {
    pub fn coarse() -> Self {
        QuadParams { na: 4, nb: 4, nc: 8, n_face: 3, n_radial: 6, ratio: 2.0, inner_factor: 2f64.powi(-6) }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Quadrature {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

const CHUNK: usize = 2048;

impl Quadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `Σ w_k f(x_k)` with a fixed-order chunked reduction.
    pub fn integrate<F: Fn(&Point) -> f64 + Sync>(&self, f: &F) -> f64 {
        let parts: Vec<f64> = self
            .points
            .par_chunks(CHUNK)
            .zip(self.weights.par_chunks(CHUNK))
            .map(|(p, w)| p.iter().zip(w).map(|(x, wi)| wi * f(x)).sum::<f64>())
            .collect();
        parts.iter().sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

struct Ray {
    dir: Point,
    w: f64,
    len: f64,
}

/// Distance from `p` along unit `w` to the ball boundary.
fn ball_exit(p: &Point, w: &Point, c: &Point, r: f64) -> f64 {
    let z = point::sub(p, c);
    let b = point::dot(&z, w);
    let cc = point::norm2(&z) - r * r;
    -b + (b * b - cc).max(0.0).sqrt()
}

pub fn build(dom: &DomainModel, centres: &[Point], min_scale: f64, qp: &QuadParams) -> Quadrature {
    if let Shape::Grid(g) = &dom.shape {
        let w = g.h.powi(4);
        let points: Vec<Point> = g.inside_nodes().map(|i| g.node(i)).collect();
        let weights = vec![w; points.len()];
        return Quadrature { points, weights };
    }
    let radial = Rule::gauss(qp.n_radial);
    let r0 = min_scale * qp.inner_factor;
    let sphere = SphereRule::new(qp.na, qp.nb, qp.nc);
    let mut out = Quadrature::default();
    for (h, c) in centres.iter().enumerate() {
        let rays: Vec<Ray> = match &dom.shape {
            Shape::Box(b) => face_rays(c, &b.corner, &point::add(&b.corner, &b.widths), qp.n_face),
            Shape::Ball { center, radius } => sphere
                .dirs
                .iter()
                .zip(&sphere.weights)
                .map(|(d, w)| Ray { dir: *d, w: *w, len: ball_exit(c, d, center, *radius) })
                .collect(),
            Shape::Grid(_) => unreachable!(),
        };
        for ray in rays {
            let (rn, rw) = geometric_panels(r0, ray.len, qp.ratio, &radial);
            for (r, w) in rn.iter().zip(&rw) {
                let x = point::axpy(c, *r, &ray.dir);
                let chi = partition_weight(&x, h, centres);
                if chi > 0.0 {
                    out.points.push(x);
                    out.weights.push(ray.w * w * r * r * r * chi);
                }
            }
        }
    }
    out
}

fn partition_weight(x: &Point, h: usize, centres: &[Point]) -> f64 {
    if centres.len() == 1 {
        return 1.0;
    }
    // χ_h = 1 / Σ_k (|x−ξ_h|/|x−ξ_k|)⁴
    let dh = point::norm2(&point::sub(x, &centres[h]));
    let mut s = 0.0;
    for c in centres {
        let dk = point::norm2(&point::sub(x, c));
        if dk == 0.0 {
            return if dh == 0.0 { 1.0 } else { 0.0 };
        }
        s += (dh / dk).powi(2);
    }
    1.0 / s
}

/// Pyramids from `c` over the eight faces of `[lo, hi]`: a face point `y` at height `h`
/// above its face carries solid-angle weight `h·dA/|y−c|⁴`.
fn face_rays(c: &Point, lo: &Point, hi: &Point, n: usize) -> Vec<Ray> {
    let rule = Rule::gauss(n);
    let mut rays = Vec::new();
    for d in 0..4 {
        let others: Vec<usize> = (0..4).filter(|&k| k != d).collect();
        let mut nodes: [Vec<f64>; 3] = Default::default();
        let mut weights: [Vec<f64>; 3] = Default::default();
        for (k, &o) in others.iter().enumerate() {
            rule.push_mapped(lo[o], hi[o], &mut nodes[k], &mut weights[k]);
        }
        for plane in [lo[d], hi[d]] {
            let height = (plane - c[d]).abs();
            for (i0, x0) in nodes[0].iter().enumerate() {
                for (i1, x1) in nodes[1].iter().enumerate() {
                    for (i2, x2) in nodes[2].iter().enumerate() {
                        let mut y = [0.0; 4];
                        y[d] = plane;
                        y[others[0]] = *x0;
                        y[others[1]] = *x1;
                        y[others[2]] = *x2;
                        let v = point::sub(&y, c);
                        let len = point::norm(&v);
                        let da = weights[0][i0] * weights[1][i1] * weights[2][i2];
                        rays.push(Ray { dir: point::scale(&v, 1.0 / len), w: height * da / len.powi(4), len });
                    }
                }
            }
        }
    }
    rays
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::{Bubble, bubble_value};
    use std::f64::consts::PI;

    #[test]
    fn volumes() {
        let b = DomainModel::unit_ball();
        assert!((b.quadrature.total_weight() - PI * PI / 2.0).abs() < 1e-6 * PI * PI / 2.0);
        let off = b.quadrature_for(&[[0.3, -0.2, 0.1, 0.0]], 1e-3);
        assert!((off.total_weight() - PI * PI / 2.0).abs() < 1e-6 * PI * PI / 2.0, "{}", off.total_weight());
        let bx = DomainModel::cuboid([0.0; 4], [1.0, 2.0, 1.5, 1.0]).unwrap();
        assert!((bx.quadrature.total_weight() - 3.0).abs() < 1e-6 * 3.0);
        let off = bx.quadrature_for(&[[0.2, 1.1, 0.4, 0.7]], 1e-3);
        assert!((off.total_weight() - 3.0).abs() < 1e-6 * 3.0);
        assert!(off.weights.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn bubble_mass_and_odd_cancellation() {
        let d = DomainModel::unit_ball();
        let b = Bubble { delta: 1e-2, xi: [0.0; 4] };
        let q = d.quadrature_for(&[b.xi], b.delta);
        let v = q.integrate(&|x: &Point| bubble_value(&b, x).powi(4));
        let exact = 32.0 * PI * PI / 3.0;
        assert!(((v - exact) / exact).abs() < 0.01);
        let odd = d.omega_quadrature(|x: &Point| x[0] * (1.0 + x[1] * x[1]));
        assert!(odd.abs() < 1e-10);
        let bx = DomainModel::cuboid([0.0; 4], [1.0; 4]).unwrap();
        let odd = bx.omega_quadrature(|x: &Point| (x[2] - 0.5).powi(3));
        assert!(odd.abs() < 1e-10);
    }

    #[test]
    fn two_centre_cells_partition() {
        let fine = QuadParams { na: 12, nb: 12, nc: 24, n_face: 10, ..Default::default() };
        let d = DomainModel::unit_ball().with_quad(fine);
        let q = d.quadrature_for(&[[-0.3, 0.0, 0.0, 0.0], [0.4, 0.1, 0.0, 0.0]], 1e-3);
        let v = q.total_weight();
        assert!((v - PI * PI / 2.0).abs() < 1e-6 * PI * PI / 2.0, "{v}");
        let bx = DomainModel::cuboid([0.0; 4], [2.0; 4]).unwrap().with_quad(fine);
        let q = bx.quadrature_for(&[[0.8, 1.0, 1.0, 1.0], [1.3, 1.0, 0.9, 1.0]], 1e-3);
        assert!((q.total_weight() - 16.0).abs() < 1e-6 * 16.0, "{}", q.total_weight());
    }
}
