//! Degenerate conic sections: classification, factorization into line pairs
//! with sign enumeration, and round-trip expansion.
//!
//! A conic `a x² + 2h xy + b y² + 2f x + 2g y + c = 0` factors into two lines
//! exactly when its 3×3 determinant Δ vanishes and the sub-determinant
//! Δ̂ = ab − h² is non-positive; the ± choices that survive the consistency
//! product give the factorizations.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub a: f64,
    pub h: f64,
    pub b: f64,
    pub f: f64,
    pub g: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicClass {
    TwoIntersectingLines,
    ParallelLinesOrSingle,
    SinglePoint,
    NonDegenerate,
}

impl Conic {
    pub fn new(a: f64, h: f64, b: f64, f: f64, g: f64, c: f64) -> Self {
        Self { a, h, b, f, g, c }
    }

    /// Determinant of `[[a,h,f],[h,b,g],[f,g,c]]`.
    pub fn delta(&self) -> f64 {
        self.a * self.b * self.c + 2.0 * self.f * self.g * self.h
            - self.a * self.g * self.g
            - self.b * self.f * self.f
            - self.c * self.h * self.h
    }

    pub fn delta_hat(&self) -> f64 {
        self.a * self.b - self.h * self.h
    }

    fn coeff_scale(&self) -> f64 {
        [self.a, self.h, self.b, self.f, self.g, self.c]
            .iter()
            .fold(1.0_f64, |m, v| m.max(v.abs()))
    }

    /// Evaluate the quadratic form at `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x * x
            + 2.0 * self.h * x * y
            + self.b * y * y
            + 2.0 * self.f * x
            + 2.0 * self.g * y
            + self.c
    }
}

/// Classification per the degeneracy conditions; `Δ` is compared against
/// `tol·max(1, coefficients)³`.
pub fn classify_with_tol(conic: &Conic, tol: f64) -> ConicClass {
    let scale = conic.coeff_scale();
    let delta_tol = tol * scale * scale * scale;
    let hat_tol = tol * scale * scale;
    if conic.delta().abs() > delta_tol {
        return ConicClass::NonDegenerate;
    }
    let hat = conic.delta_hat();
    if hat < -hat_tol {
        ConicClass::TwoIntersectingLines
    } else if hat > hat_tol {
        ConicClass::SinglePoint
    } else {
        ConicClass::ParallelLinesOrSingle
    }
}

pub fn classify(conic: &Conic) -> ConicClass {
    classify_with_tol(conic, DEFAULT_TOL)
}

/// Real-coefficient factorization exists iff `Δ=0 ∧ Δ̂<0`, or `Δ=0 ∧ Δ̂=0`
/// with `f²+g² ≥ c(a+b)`. In the parallel-line branch the equivalent test
/// `f² ≥ ac ∧ g² ≥ bc` is evaluated as a cross-check; a disagreement beyond
/// tolerance indicates inconsistent coefficients and is logged.
pub fn is_real_factorizable(conic: &Conic) -> bool {
    match classify(conic) {
        ConicClass::TwoIntersectingLines => true,
        ConicClass::ParallelLinesOrSingle => {
            let primary = conic.f * conic.f + conic.g * conic.g >= conic.c * (conic.a + conic.b);
            let lemma = conic.f * conic.f >= conic.a * conic.c
                && conic.g * conic.g >= conic.b * conic.c;
            if primary != lemma {
                // the forms are equivalent under Δ = Δ̂ = 0; near the boundary
                // rounding can split them
                let margin = (conic.f * conic.f + conic.g * conic.g
                    - conic.c * (conic.a + conic.b))
                    .abs();
                let scale = conic.coeff_scale();
                if margin > DEFAULT_TOL * scale * scale {
                    log::warn!("real-factorizability cross-check disagrees (margin {margin:.3e})");
                }
            }
            primary
        }
        _ => false,
    }
}

/// A factorization `ν (A x + B y + C)(D x + E y + F)` of a degenerate conic.
#[derive(Debug, Clone)]
pub struct LinePair {
    pub first: [Complex64; 3],
    pub second: [Complex64; 3],
    pub nu: Complex64,
    /// The (±₁, ±₂, ±₃) choice that produced this pair.
    pub signs: [i8; 3],
}

impl LinePair {
    /// Largest absolute imaginary part across both lines.
    pub fn imag_magnitude(&self) -> f64 {
        self.first
            .iter()
            .chain(self.second.iter())
            .fold(0.0_f64, |m, z| m.max(z.im.abs()))
    }
}

/// Expanded complex coefficients `(a, h, b, f, g, c)` of `ν·L1·L2`.
pub fn expand_complex(lp: &LinePair) -> [Complex64; 6] {
    let [a1, b1, c1] = lp.first;
    let [a2, b2, c2] = lp.second;
    [
        lp.nu * a1 * a2,
        lp.nu * (a1 * b2 + a2 * b1) * 0.5,
        lp.nu * b1 * b2,
        lp.nu * (a1 * c2 + a2 * c1) * 0.5,
        lp.nu * (b1 * c2 + b2 * c1) * 0.5,
        lp.nu * c1 * c2,
    ]
}

/// Expansion back to a real conic (valid for real or conjugate line pairs;
/// the imaginary parts are dropped).
pub fn expand(lp: &LinePair) -> Conic {
    let [a, h, b, f, g, c] = expand_complex(lp);
    Conic::new(a.re, h.re, b.re, f.re, g.re, c.re)
}

/// Factor a degenerate conic. Enumerates the 8 sign triples, keeps those
/// whose product `(h±₁√)(f±₂√)(g±₃√) = abc` holds within tolerance, and
/// checks that each returned pair expands back to the input within `1e-9`
/// relative. The first line is normalised so its largest coefficient is 1.
pub fn factor(conic: &Conic, tol: f64) -> Result<Vec<LinePair>> {
    let scale = conic.coeff_scale();
    let delta_tol = tol.max(f64::EPSILON) * scale * scale * scale;
    if conic.delta().abs() > delta_tol {
        return Err(Error::NotDegenerate {
            delta: conic.delta(),
            tol: delta_tol,
        });
    }

    // the closed form anchors on a ≠ 0; rotate coordinates when needed
    let a_small = conic.a.abs() <= tol * scale;
    let b_small = conic.b.abs() <= tol * scale;
    if a_small && !b_small {
        let swapped = Conic::new(conic.b, conic.h, conic.a, conic.g, conic.f, conic.c);
        let pairs = factor_anchored(&swapped, tol)?;
        return Ok(pairs
            .into_iter()
            .map(|lp| LinePair {
                first: [lp.first[1], lp.first[0], lp.first[2]],
                second: [lp.second[1], lp.second[0], lp.second[2]],
                nu: lp.nu,
                signs: lp.signs,
            })
            .filter_map(|lp| verify_roundtrip(conic, lp))
            .collect());
    }
    if a_small && b_small {
        return factor_bilinear(conic, tol);
    }
    Ok(factor_anchored(conic, tol)?
        .into_iter()
        .filter_map(|lp| verify_roundtrip(conic, lp))
        .collect())
}

fn factor_anchored(conic: &Conic, tol: f64) -> Result<Vec<LinePair>> {
    let scale = conic.coeff_scale();
    let (a, h, b, f, g, c) = (conic.a, conic.h, conic.b, conic.f, conic.g, conic.c);
    let sq1 = Complex64::new(h * h - a * b, 0.0).sqrt();
    let sq2 = Complex64::new(f * f - a * c, 0.0).sqrt();
    let sq3 = Complex64::new(g * g - b * c, 0.0).sqrt();
    let abc = Complex64::new(a * b * c, 0.0);

    let mut out = Vec::new();
    for signs in sign_triples() {
        let [s1, s2, s3] = signs.map(f64::from);
        let db = h + s1 * sq1;
        let af = f + s2 * sq2;
        let ec = g + s3 * sq3;
        let defect = (db * af * ec - abc).norm();
        let consistency_scale = [db.norm() * af.norm() * ec.norm(), abc.norm(), scale.powi(3)]
            .into_iter()
            .fold(f64::MIN_POSITIVE, f64::max);
        if defect > tol * consistency_scale {
            continue;
        }
        // lines from the solved factor form:
        // (a x + (h±₁√)y + f∓₂√) ((h±₁√)x + b y + g∓₃√)
        let dc = f - s2 * sq2;
        let bf = g - s3 * sq3;
        let first = [Complex64::from(a), db, dc];
        let second = [db, Complex64::from(b), bf];
        out.push(build_pair(conic, first, second, signs));
    }
    Ok(out)
}

/// Both square terms vanish: `2hxy + 2fx + 2gy + c`, degenerate when
/// `c·h = 2fg`; lines `(hx + g)` and `(2y + 2f/h)` up to scale.
fn factor_bilinear(conic: &Conic, tol: f64) -> Result<Vec<LinePair>> {
    let scale = conic.coeff_scale();
    let (h, f, g, c) = (conic.h, conic.f, conic.g, conic.c);
    if h.abs() <= tol * scale {
        // degree collapses to a single line times a constant
        let first = [Complex64::from(2.0 * f), Complex64::from(2.0 * g), Complex64::from(c)];
        let second = [Complex64::from(0.0), Complex64::from(0.0), Complex64::from(1.0)];
        let lp = build_pair(conic, first, second, [1, 1, 1]);
        return Ok(verify_roundtrip(conic, lp).into_iter().collect());
    }
    let first = [Complex64::from(h), Complex64::from(0.0), Complex64::from(g)];
    let second = [
        Complex64::from(0.0),
        Complex64::from(2.0),
        Complex64::from(2.0 * f / h),
    ];
    let lp = build_pair(conic, first, second, [1, 1, 1]);
    Ok(verify_roundtrip(conic, lp).into_iter().collect())
}

fn sign_triples() -> [[i8; 3]; 8] {
    [
        [1, 1, 1],
        [1, 1, -1],
        [1, -1, 1],
        [1, -1, -1],
        [-1, 1, 1],
        [-1, 1, -1],
        [-1, -1, 1],
        [-1, -1, -1],
    ]
}

/// Normalise the first line and fit ν by least squares over the six
/// coefficient comparisons.
fn build_pair(conic: &Conic, first: [Complex64; 3], second: [Complex64; 3], signs: [i8; 3]) -> LinePair {
    let gamma = first
        .iter()
        .copied()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))
        .unwrap();
    let (first, second) = if gamma.norm() > 0.0 {
        (first.map(|z| z / gamma), second.map(|z| z * gamma))
    } else {
        (first, second)
    };
    let mut lp = LinePair {
        first,
        second,
        nu: Complex64::from(1.0),
        signs,
    };
    let e = expand_complex(&lp);
    let target = [conic.a, conic.h, conic.b, conic.f, conic.g, conic.c];
    let num: Complex64 = e
        .iter()
        .zip(target.iter())
        .map(|(ei, &ti)| ei.conj() * ti)
        .sum();
    let den: f64 = e.iter().map(|ei| ei.norm_sqr()).sum();
    if den > 0.0 {
        lp.nu = num / den;
    }
    lp
}

fn verify_roundtrip(conic: &Conic, lp: LinePair) -> Option<LinePair> {
    let e = expand_complex(&lp);
    let target = [conic.a, conic.h, conic.b, conic.f, conic.g, conic.c];
    let norm_t: f64 = target.iter().map(|t| t * t).sum::<f64>().sqrt();
    let err: f64 = e
        .iter()
        .zip(target.iter())
        .map(|(ei, &ti)| (ei - Complex64::from(ti)).norm_sqr())
        .sum::<f64>()
        .sqrt();
    if err <= 1e-9 * norm_t.max(1e-30) {
        Some(lp)
    } else {
        log::debug!("discarding sign triple {:?}: expansion error {err:.3e}", lp.signs);
        None
    }
}
