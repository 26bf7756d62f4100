//! Dirichlet Green regular part of a 4-D box, split Ewald-style: the plain image series
//! decays like the inverse square of the shell radius in four dimensions and is useless
//! on its own.
//!
//! With `Γ = Γ·e^{−a|z|²} + Γ·(1 − e^{−a|z|²})`, the screened part is summed over signed
//! images and the smooth part over the Dirichlet sine eigenbasis, where its coefficient
//! is `e^{−|k|²/4a}/|k|²`.

use crate::error::{Error, Result};
use crate::point::Point;
use std::f64::consts::PI;

const FOUR_PI2: f64 = 4.0 * PI * PI;
const SHELL_TOL: f64 = 1e-10;
const MAX_REAL_SHELLS: usize = 8;
const MAX_FOURIER_SHELLS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxGreen {
    pub corner: Point,
    pub widths: [f64; 4],
    pub a: f64,
}

impl BoxGreen {
    pub fn new(corner: Point, widths: [f64; 4]) -> Self {
        let wmax = widths.iter().copied().fold(0.0, f64::max);
        BoxGreen { corner, widths, a: 6.0 / (wmax * wmax) }
    }

    pub fn with_splitting(mut self, a: f64) -> Self {
        self.a = a;
        self
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..4).all(|i| x[i] > self.corner[i] && x[i] < self.corner[i] + self.widths[i])
    }

    pub fn dist_to_boundary(&self, x: &Point) -> f64 {
        (0..4)
            .map(|i| (x[i] - self.corner[i]).min(self.corner[i] + self.widths[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn regular_part(&self, x: &Point, y: &Point) -> Result<f64> {
        let a = self.a;
        let w = self.widths;
        let lx: Point = std::array::from_fn(|i| x[i] - self.corner[i]);
        let ly: Point = std::array::from_fn(|i| y[i] - self.corner[i]);

        // identity image, smooth remainder Γ(1 − e^{−ar²})
        let r2: f64 = (0..4).map(|i| (lx[i] - ly[i]).powi(2)).sum();
        let mut h = if a * r2 < 1e-12 { a * (1.0 - 0.5 * a * r2) / FOUR_PI2 } else { -(-a * r2).exp_m1() / (FOUR_PI2 * r2) };

        let mut converged = false;
        let mut bound = f64::INFINITY;
        for s in 0..=MAX_REAL_SHELLS as i64 {
            let (acc, abs) = real_shell(&lx, &ly, &w, a, s);
            h -= acc;
            bound = abs;
            if s >= 1 && abs < SHELL_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::SeriesNotConverged { bound });
        }

        // Fourier part, shells of max_i m_i = M
        let k: [Vec<f64>; 4] = std::array::from_fn(|i| (0..=MAX_FOURIER_SHELLS).map(|m| PI * m as f64 / w[i]).collect());
        let ss: [Vec<f64>; 4] =
            std::array::from_fn(|i| k[i].iter().map(|&ki| (ki * lx[i]).sin() * (ki * ly[i]).sin()).collect());
        let ee: [Vec<f64>; 4] = std::array::from_fn(|i| k[i].iter().map(|&ki| (-ki * ki / (4.0 * a)).exp()).collect());
        let pref = 16.0 / w.iter().product::<f64>();
        let mut fsum = 0.0;
        converged = false;
        for mm in 1..=MAX_FOURIER_SHELLS {
            let mut acc = 0.0;
            let mut abs = 0.0;
            for m0 in 1..=mm {
                for m1 in 1..=mm {
                    for m2 in 1..=mm {
                        for m3 in 1..=mm {
                            if m0 != mm && m1 != mm && m2 != mm && m3 != mm {
                                continue;
                            }
                            let k2 = k[0][m0].powi(2) + k[1][m1].powi(2) + k[2][m2].powi(2) + k[3][m3].powi(2);
                            let e = ee[0][m0] * ee[1][m1] * ee[2][m2] * ee[3][m3] / k2;
                            acc += e * ss[0][m0] * ss[1][m1] * ss[2][m2] * ss[3][m3];
                            abs += e;
                        }
                    }
                }
            }
            fsum += acc;
            bound = pref * abs;
            if bound < SHELL_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::SeriesNotConverged { bound });
        }
        Ok(h - pref * fsum)
    }
}

/// Signed screened images `2w n + σ·y` with `max |n_i| = s`, identity excluded.
fn real_shell(lx: &Point, ly: &Point, w: &[f64; 4], a: f64, s: i64) -> (f64, f64) {
    let mut acc = 0.0;
    let mut abs = 0.0;
    let range = -s..=s;
    for n0 in range.clone() {
        for n1 in range.clone() {
            for n2 in range.clone() {
                for n3 in range.clone() {
                    let n = [n0, n1, n2, n3];
                    if n.iter().map(|v| v.abs()).max().unwrap() != s {
                        continue;
                    }
                    for sig in 0..16u32 {
                        if s == 0 && sig == 0 {
                            continue;
                        }
                        let mut r2 = 0.0;
                        let mut sign = 1.0;
                        for i in 0..4 {
                            let si = if sig & (1 << i) != 0 { -1.0 } else { 1.0 };
                            sign *= si;
                            let p = 2.0 * w[i] * n[i] as f64 + si * ly[i];
                            r2 += (lx[i] - p).powi(2);
                        }
                        let t = (-a * r2).exp() / (FOUR_PI2 * r2);
                        acc += sign * t;
                        abs += t;
                    }
                }
            }
        }
    }
    (acc, abs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma(x: &Point, y: &Point) -> f64 {
        let r2: f64 = (0..4).map(|i| (x[i] - y[i]).powi(2)).sum();
        1.0 / (FOUR_PI2 * r2)
    }

    #[test]
    fn splitting_independent() {
        let b = BoxGreen::new([0.0; 4], [1.0; 4]);
        let x = [0.3, 0.5, 0.6, 0.45];
        let y = [0.55, 0.4, 0.3, 0.5];
        let h1 = b.regular_part(&x, &y).unwrap();
        let h2 = b.clone().with_splitting(12.0).regular_part(&x, &y).unwrap();
        let h3 = b.clone().with_splitting(3.0).regular_part(&x, &y).unwrap();
        assert!((h1 - h2).abs() < 1e-9 && (h1 - h3).abs() < 1e-9, "{h1} {h2} {h3}");
    }

    #[test]
    fn boundary_values_and_symmetry() {
        let b = BoxGreen::new([0.0; 4], [1.0, 1.5, 1.0, 2.0]);
        let y = [0.4, 0.7, 0.5, 1.1];
        for x in [[1e-13, 0.3, 0.6, 0.2], [0.5, 1.5 - 1e-13, 0.2, 1.7]] {
            let h = b.regular_part(&x, &y).unwrap();
            assert!((h - gamma(&x, &y)).abs() < 1e-8 * gamma(&x, &y), "{h} {}", gamma(&x, &y));
        }
        let x = [0.2, 0.3, 0.8, 0.4];
        let hxy = b.regular_part(&x, &y).unwrap();
        let hyx = b.regular_part(&y, &x).unwrap();
        assert!((hxy - hyx).abs() < 1e-12);
    }

    #[test]
    fn harmonic_in_x() {
        let b = BoxGreen::new([0.0; 4], [1.0; 4]);
        let x = [0.3, 0.5, 0.6, 0.45];
        let y = [0.7, 0.4, 0.3, 0.5];
        let s = 1e-3;
        let h0 = b.regular_part(&x, &y).unwrap();
        let mut lap = 0.0;
        for i in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += s;
            xm[i] -= s;
            lap += (b.regular_part(&xp, &y).unwrap() - 2.0 * h0 + b.regular_part(&xm, &y).unwrap()) / (s * s);
        }
        assert!(lap.abs() < 1e-3 * h0, "lap {lap} h0 {h0}");
    }
}
