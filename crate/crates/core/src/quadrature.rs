//! One-dimensional Gauss–Legendre rules, geometric-panel radial integration on
//! `[0, ∞)` and a tensor rule on the unit 3-sphere.

use crate::error::{Error, Result};
use crate::point::Point;
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A fixed rule on a reference interval, mapped on demand.
#[derive(Debug, Clone)]
pub struct Rule {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl Rule {
    pub fn gauss(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        Rule { x, w }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut s = 0.0;
        for (xi, wi) in self.x.iter().zip(&self.w) {
            s += wi * f(c + h * xi);
        }
        s * h
    }

    /// Nodes and weights mapped to `[a, b]`, appended to the output vectors.
    pub fn push_mapped(&self, a: f64, b: f64, nodes: &mut Vec<f64>, weights: &mut Vec<f64>) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        for (xi, wi) in self.x.iter().zip(&self.w) {
            nodes.push(c + h * xi);
            weights.push(h * wi);
        }
    }
}

/// Tensor-free radial node set on `[0, R]`: one Gauss panel on `[0, r0]` and
/// geometric panels `[r0 q^k, r0 q^{k+1}]` clipped at `R`.
pub fn geometric_panels(r0: f64, r_max: f64, ratio: f64, rule: &Rule) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    if r_max <= r0 {
        rule.push_mapped(0.0, r_max, &mut nodes, &mut weights);
        return (nodes, weights);
    }
    rule.push_mapped(0.0, r0, &mut nodes, &mut weights);
    let mut a = r0;
    while a < r_max {
        let mut b = a * ratio;
        // avoid a sliver as the last panel
        if b * 1.0001 >= r_max || r_max < b * (1.0 + 0.25 * (ratio - 1.0)) {
            b = r_max;
        }
        rule.push_mapped(a, b, &mut nodes, &mut weights);
        a = b;
    }
    (nodes, weights)
}

/// Adaptive integral over `[a, b]` by comparing Gauss rules of order n and 2n with
/// recursive bisection.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    let lo = Rule::gauss(10);
    let hi = Rule::gauss(20);
    let mut stack = vec![(a, b, 0usize)];
    let mut total = 0.0;
    let mut err = 0.0;
    let width = (b - a).abs();
    while let Some((l, r, depth)) = stack.pop() {
        let v1 = lo.integrate(f, l, r);
        let v2 = hi.integrate(f, l, r);
        let e = (v2 - v1).abs();
        let local_tol = tol * ((r - l).abs() / width).max(1e-6);
        if e <= local_tol || depth >= 40 {
            total += v2;
            err += e;
        } else {
            let m = 0.5 * (l + r);
            stack.push((m, r, depth + 1));
            stack.push((l, m, depth + 1));
        }
    }
    if err > 10.0 * tol {
        return Err(Error::QuadratureNotConverged { estimate: err, tol });
    }
    Ok((total, err))
}

/// Integral over `[0, ∞)` of an integrand decaying like a power: geometric panels of
/// ratio 2 starting at `scale·2⁻¹²`, truncated once the extrapolated geometric tail of the
/// panel contributions drops below `tol`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(f: &F, scale: f64, tol: f64) -> Result<(f64, f64)> {
    let r0 = scale * 2f64.powi(-12);
    let (mut total, mut err) = integrate_adaptive(f, 0.0, r0, tol * 1e-3)?;
    let mut a = r0;
    let mut prev: Option<f64> = None;
    for _ in 0..400 {
        let b = 2.0 * a;
        let (v, e) = integrate_adaptive(f, a, b, tol * 1e-3)?;
        total += v;
        err += e;
        if let Some(p) = prev {
            if b > 64.0 * scale && p != 0.0 {
                let ratio = (v / p).abs();
                if ratio < 1.0 {
                    let tail = v.abs() * ratio / (1.0 - ratio);
                    if tail < tol {
                        return Ok((total + v * ratio / (1.0 - ratio), err + tail));
                    }
                }
            } else if b > 64.0 * scale && v == 0.0 {
                return Ok((total, err));
            }
        }
        prev = Some(v);
        a = b;
    }
    Err(Error::QuadratureNotConverged { estimate: prev.unwrap_or(f64::NAN).abs(), tol })
}

/// Tensor rule on S³ in coordinates `ω = (u, √(1−u²) v, √(1−u²)√(1−v²) cos c, …sin c)`,
/// surface element `√(1−u²) du dv dc`: Gauss–Chebyshev (second kind) in `u`, Gauss–Legendre
/// in `v`, offset trapezoid in `c` with even `nc`.  Exact for polynomials in ω up to the
/// rule degrees, and invariant under every coordinate reflection.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dirs: Vec<Point>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub fn new(na: usize, nb: usize, nc: usize) -> Self {
        assert!(nc % 2 == 0, "nc must be even");
        let rb = Rule::gauss(nb);
        let mut dirs = Vec::with_capacity(na * nb * nc);
        let mut weights = Vec::with_capacity(na * nb * nc);
        for k in 1..=na {
            let t = k as f64 * PI / (na as f64 + 1.0);
            let u = t.cos();
            let su = t.sin();
            let wu = PI / (na as f64 + 1.0) * su * su;
            for (v, wv) in rb.x.iter().zip(&rb.w) {
                let sv = (1.0 - v * v).sqrt();
                for j in 0..nc {
                    let c = (j as f64 + 0.5) * 2.0 * PI / nc as f64;
                    let (sc, cc) = c.sin_cos();
                    dirs.push([u, su * v, su * sv * cc, su * sv * sc]);
                    weights.push(wu * wv * 2.0 * PI / nc as f64);
                }
            }
        }
        SphereRule { dirs, weights }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials() {
        let r = Rule::gauss(8);
        for p in 0..16 {
            let v = r.integrate(&|x: f64| x.powi(p), 0.0, 1.0);
            assert!((v - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "p={p} v={v}");
        }
    }

    #[test]
    fn gauss_weights_sum() {
        for n in [1, 2, 5, 16, 40] {
            let (_, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn sphere_area_and_moments() {
        let s = SphereRule::new(6, 6, 12);
        let area: f64 = s.weights.iter().sum();
        assert!((area - 2.0 * PI * PI).abs() < 1e-12);
        // ∫ ω_1² = area / 4
        for i in 0..4 {
            let m: f64 = s.dirs.iter().zip(&s.weights).map(|(d, w)| w * d[i] * d[i]).sum();
            assert!((m - PI * PI / 2.0).abs() < 1e-12, "i={i} m={m}");
            let odd: f64 = s.dirs.iter().zip(&s.weights).map(|(d, w)| w * d[i]).sum();
            assert!(odd.abs() < 1e-14);
        }
    }

    #[test]
    fn semi_infinite_power_law() {
        // ∫_0^∞ r³/(1+r²)^4 dr = 1/12
        let (v, _) = integrate_semi_infinite(&|r: f64| r.powi(3) / (1.0 + r * r).powi(4), 1.0, 1e-13).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-12, "{v}");
    }
}
