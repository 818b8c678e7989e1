//! Faddeeva function w(z) = exp(-z^2) erfc(-iz) in the upper half plane.
//!
//! Uses Weideman's rational expansion (SIAM J. Numer. Anal. 31, 1497 (1994)) with
//! 32 terms, accurate to roughly 1e-13 for Im z >= 0.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

const TERMS: usize = 32;

struct Expansion {
    scale: f64,
    coeffs: [f64; TERMS],
}

fn expansion() -> &'static Expansion {
    static CELL: OnceLock<Expansion> = OnceLock::new();
    CELL.get_or_init(|| {
        let m = 2 * TERMS;
        let m2 = 2 * m;
        let scale = (TERMS as f64 / 2f64.sqrt()).sqrt();
        // Samples indexed by k = -m..m-1, already rotated so that k = 0 comes first.
        let sample = |k: i64| -> f64 {
            if k == -(m as i64) {
                return 0.0;
            }
            let theta = k as f64 * PI / m as f64;
            let t = scale * (0.5 * theta).tan();
            (-t * t).exp() * (scale * scale + t * t)
        };
        let mut coeffs = [0.0; TERMS];
        for (n, c) in coeffs.iter_mut().enumerate() {
            let n = n + 1;
            let mut acc = 0.0;
            for i in 0..m2 {
                let k = if i < m { i as i64 } else { i as i64 - m2 as i64 };
                acc += sample(k) * (2.0 * PI * (n * i) as f64 / m2 as f64).cos();
            }
            *c = acc / m2 as f64;
        }
        Expansion { scale, coeffs }
    })
}

/// Faddeeva function for `Im z >= 0`.
pub fn faddeeva(z: Complex64) -> Complex64 {
    debug_assert!(z.im >= 0.0);
    let e = expansion();
    let i = Complex64::i();
    let denom = e.scale - i * z;
    let zz = (e.scale + i * z) / denom;
    let mut p = Complex64::new(0.0, 0.0);
    for &c in e.coeffs.iter().rev() {
        p = p * zz + c;
    }
    2.0 * p / (denom * denom) + (1.0 / PI.sqrt()) / denom
}

/// Unit-area Voigt profile: Gaussian of standard deviation `sigma` convolved with a
/// Lorentzian of half width `gamma`.
pub fn voigt(x: f64, sigma: f64, gamma: f64) -> f64 {
    let s2 = sigma * std::f64::consts::SQRT_2;
    faddeeva(Complex64::new(x / s2, gamma / s2)).re / (sigma * (2.0 * PI).sqrt())
}
