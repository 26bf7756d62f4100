//! Aubin–Talenti bubbles `U_{δ,ξ} = α δ / (δ² + |x−ξ|²)`, the kernel functions of the
//! linearized critical equation, their whole-space radial integrals, and projections
//! onto a bounded domain.

use crate::domain::DomainModel;
use crate::error::{Error, Result};
use crate::point::{self, Point};
use crate::quadrature::{integrate_adaptive, integrate_semi_infinite};
use crate::{ALPHA, S3_AREA};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bubble {
    pub delta: f64,
    pub xi: Point,
}

impl Bubble {
    pub fn new(delta: f64, xi: Point) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidState(format!("bubble scale must be positive, got {delta}")));
        }
        Ok(Bubble { delta, xi })
    }

    pub fn unit() -> Self {
        Bubble { delta: 1.0, xi: [0.0; 4] }
    }
}

#[inline]
pub fn bubble_value(b: &Bubble, x: &Point) -> f64 {
    let r2 = point::norm2(&point::sub(x, &b.xi));
    ALPHA * b.delta / (b.delta * b.delta + r2)
}

pub fn eval_bubble(b: &Bubble, x: &Point) -> f64 {
    bubble_value(b, x)
}

/// `|−Δ_h U(x) − U(x)³|` with the second-order 9-point Laplacian.
pub fn bubble_pde_residual(b: &Bubble, x: &Point, h: f64) -> f64 {
    let u0 = bubble_value(b, x);
    let mut lap = 0.0;
    for i in 0..4 {
        let e = point::unit(i);
        let up = bubble_value(b, &point::axpy(x, h, &e));
        let um = bubble_value(b, &point::axpy(x, -h, &e));
        lap += (up - 2.0 * u0 + um) / (h * h);
    }
    (-lap - u0 * u0 * u0).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelFunction {
    pub bubble: Bubble,
    pub l: usize,
}

impl KernelFunction {
    pub fn new(bubble: Bubble, l: usize) -> Result<Self> {
        if l > 4 {
            return Err(Error::InvalidState(format!("kernel index {l} out of range 0..=4")));
        }
        Ok(KernelFunction { bubble, l })
    }
}

/// `ψ⁰ = ∂_δ U = α(|x−ξ|²−δ²)/(δ²+|x−ξ|²)²`, `ψ^ℓ = ∂_{ξ_ℓ} U = 2αδ(x_ℓ−ξ_ℓ)/(δ²+|x−ξ|²)²`.
#[inline]
pub fn kernel_value(b: &Bubble, l: usize, x: &Point) -> f64 {
    let z = point::sub(x, &b.xi);
    let r2 = point::norm2(&z);
    let d2 = b.delta * b.delta;
    let den = (d2 + r2) * (d2 + r2);
    if l == 0 {
        ALPHA * (r2 - d2) / den
    } else {
        2.0 * ALPHA * b.delta * z[l - 1] / den
    }
}

pub fn eval_kernel(k: &KernelFunction, x: &Point) -> f64 {
    kernel_value(&k.bubble, k.l, x)
}

/// Radial profile integrals over ℝ⁴ for `U = U_{1,0}`, `ψ⁰ = ψ⁰_{1,0}`.
pub enum RadialKind<'a> {
    U4,
    GradU2,
    /// `∫_{B_R} U²`, divergent like `16π² ln R`.
    U2 { r_max: f64 },
    U2Psi0Sq,
    U2Weighted(&'a dyn Fn(f64) -> f64),
}

pub fn radial_u(r: f64) -> f64 {
    ALPHA / (1.0 + r * r)
}

pub fn radial_psi0(r: f64) -> f64 {
    let s = 1.0 + r * r;
    ALPHA * (r * r - 1.0) / (s * s)
}

pub fn radial_integral(kind: RadialKind<'_>) -> Result<f64> {
    const TOL: f64 = 1e-10;
    let (v, _) = match kind {
        RadialKind::U4 => integrate_semi_infinite(&|r: f64| r.powi(3) * radial_u(r).powi(4), 1.0, TOL)?,
        RadialKind::GradU2 => integrate_semi_infinite(
            &|r: f64| {
                let du = ALPHA * 2.0 * r / (1.0 + r * r).powi(2);
                r.powi(3) * du * du
            },
            1.0,
            TOL,
        )?,
        RadialKind::U2 { r_max } => {
            // geometric splitting keeps the log-scale integrand well resolved
            let mut total = 0.0;
            let mut a = 0.0;
            let mut b = 1.0f64.min(r_max);
            loop {
                total += integrate_adaptive(&|r: f64| r.powi(3) * radial_u(r).powi(2), a, b, TOL)?.0;
                if b >= r_max {
                    break;
                }
                a = b;
                b = (2.0 * b).min(r_max);
            }
            (total, 0.0)
        }
        RadialKind::U2Psi0Sq => {
            integrate_semi_infinite(&|r: f64| r.powi(3) * radial_u(r).powi(2) * radial_psi0(r).powi(2), 1.0, TOL)?
        }
        RadialKind::U2Weighted(w) => integrate_semi_infinite(&|r: f64| r.powi(3) * radial_u(r).powi(2) * w(r), 1.0, TOL)?,
    };
    Ok(S3_AREA * v)
}

/// `PU_{δ,ξ}(x)`.  Order 1 is `U − αδH̃(x,ξ)` with `H̃ = 4π²H` the regular part
/// normalized against `|x−y|⁻²`, clamped to `[0, U]`.  Order 3 also subtracts the
/// harmonic extension of the boundary defect `U − αδ|x−ξ|⁻² = O(δ³)`, solved on a grid.
pub fn projected_bubble(b: &Bubble, dom: &DomainModel, x: &Point, order: u8) -> Result<f64> {
    if !dom.contains(x) {
        return Err(Error::PointOutsideDomain(*x));
    }
    let u = bubble_value(b, x);
    let mut v = u - ALPHA * b.delta * dom.h_tilde(x, &b.xi)?;
    if order >= 3 {
        let defect = crate::domain::grid::ProjectionDefect::solve(b, dom, None)?;
        v -= defect.eval(x);
    }
    Ok(v.clamp(0.0, u))
}

/// `Pψ⁰ ≈ ψ⁰ − αH̃(x,ξ)`, `Pψ^ℓ ≈ ψ^ℓ − αδ ∂_{ξ_ℓ}H̃(x,ξ)`.
pub fn projected_kernel(k: &KernelFunction, dom: &DomainModel, x: &Point) -> Result<f64> {
    if !dom.contains(x) {
        return Err(Error::PointOutsideDomain(*x));
    }
    let b = &k.bubble;
    let psi = kernel_value(b, k.l, x);
    if k.l == 0 {
        Ok(psi - ALPHA * dom.h_tilde(x, &b.xi)?)
    } else {
        let (_, g) = dom.h_tilde_grad(x, &b.xi)?;
        Ok(psi - ALPHA * b.delta * g[k.l - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn bubble_values() {
        let b = Bubble::unit();
        assert!((bubble_value(&b, &[0.0; 4]) - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        assert!((bubble_value(&b, &[1.0, 0.0, 0.0, 0.0]) - 2f64.sqrt()).abs() < 1e-15);
        let b2 = Bubble::new(0.3, [0.1, 0.2, -0.1, 0.0]).unwrap();
        assert!((bubble_value(&b2, &b2.xi) - ALPHA / 0.3).abs() < 1e-13);
        assert!(Bubble::new(0.0, [0.0; 4]).is_err());
    }

    #[test]
    fn pde_residual_order_two() {
        let b = Bubble::unit();
        let x = [0.5, 0.0, 0.0, 0.0];
        assert!(bubble_pde_residual(&b, &x, 1e-3) <= 1e-4);
        let hs = [1e-2, 5e-3, 2.5e-3];
        let r: Vec<f64> = hs.iter().map(|&h| bubble_pde_residual(&b, &x, h)).collect();
        for w in r.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
        }
        assert!(bubble_pde_residual(&b, &[10.0, 0.0, 0.0, 0.0], 1e-3) <= 1e-6);
    }

    #[test]
    fn kernel_values() {
        let b = Bubble::unit();
        assert!((kernel_value(&b, 0, &[0.0; 4]) + ALPHA).abs() < 1e-15);
        assert!(kernel_value(&b, 0, &[0.0, 1.0, 0.0, 0.0]).abs() < 1e-15);
        let x = [1.0, 0.0, 0.0, 0.0];
        let h = 1e-5;
        for l in 1..=4 {
            let bp = Bubble { delta: 1.0, xi: point::scale(&point::unit(l - 1), h) };
            let bm = Bubble { delta: 1.0, xi: point::scale(&point::unit(l - 1), -h) };
            let fd = (bubble_value(&bp, &x) - bubble_value(&bm, &x)) / (2.0 * h);
            assert!((fd - kernel_value(&b, l, &x)).abs() < 1e-6);
        }
        let fd = (bubble_value(&Bubble { delta: 1.0 + h, xi: [0.0; 4] }, &x)
            - bubble_value(&Bubble { delta: 1.0 - h, xi: [0.0; 4] }, &x))
            / (2.0 * h);
        assert!((fd - kernel_value(&b, 0, &x)).abs() < 1e-6);
        let xm = [-1.0, 0.3, 0.0, 0.0];
        let xp = [1.0, 0.3, 0.0, 0.0];
        assert_eq!(kernel_value(&b, 1, &xm), -kernel_value(&b, 1, &xp));
    }

    #[test]
    fn kernel_delta_limit() {
        let xi = [0.0; 4];
        let x = [0.5, 0.1, 0.0, 0.0];
        let r2 = point::norm2(&x);
        let lim = ALPHA / r2;
        let v = kernel_value(&Bubble { delta: 1e-4, xi }, 0, &x);
        assert!((v - lim).abs() < 0.05 * lim);
    }

    #[test]
    fn whole_space_integrals() {
        let exact = 32.0 * PI * PI / 3.0;
        let u4 = radial_integral(RadialKind::U4).unwrap();
        let g = radial_integral(RadialKind::GradU2).unwrap();
        assert!(((u4 - exact) / exact).abs() < 1e-8, "{u4}");
        assert!(((g - exact) / exact).abs() < 1e-8, "{g}");
        let vals: Vec<f64> =
            [10.0, 100.0, 1000.0].iter().map(|&r| radial_integral(RadialKind::U2 { r_max: r }).unwrap()).collect();
        let slope1 = (vals[1] - vals[0]) / (16.0 * PI * PI * 10f64.ln());
        let slope2 = (vals[2] - vals[1]) / (16.0 * PI * PI * 10f64.ln());
        assert!((slope1 - 1.0).abs() < 0.01 && (slope2 - 1.0).abs() < 1e-3, "{slope1} {slope2}");
        let w = |r: f64| 1.0 / (1.0 + r * r);
        let uw = radial_integral(RadialKind::U2Weighted(&w)).unwrap();
        // ∫ 8/(1+r²)³ · 2π² r³ dr = 4π²
        assert!((uw - 4.0 * PI * PI).abs() < 1e-8);
        assert!(radial_integral(RadialKind::U2Psi0Sq).unwrap() > 0.0);
    }

    #[test]
    fn scale_covariance() {
        let b = Bubble::new(0.01, [0.1, 0.0, -0.2, 0.3]).unwrap();
        let y = [0.7, -1.2, 0.4, 2.0];
        let x = point::axpy(&b.xi, b.delta, &y);
        let lhs = bubble_value(&b, &x);
        let rhs = bubble_value(&Bubble::unit(), &y) / b.delta;
        assert!(((lhs - rhs) / rhs).abs() < 1e-12);
    }
}
