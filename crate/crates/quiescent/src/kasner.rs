//! Kasner-scalar-field backgrounds: exponents, algebraic relations,
//! sub-criticality, and exact homogeneous background values.
//!
//! A background in spacetime dimension `n >= 4` is described by the n-1
//! exponents `q` (summing to 1), the scalar-field amplitude
//! `P = sqrt((1 - Σq²)/2)` and the conformal exponents
//!
//! ```text
//! r0 = (1/P)·sqrt(2(n-1)/(n-2)) - 2(n-1)/(n-2),
//! rA = (1/P)·sqrt(2(n-1)/(n-2))·qA - 2/(n-2),
//! ```
//!
//! which satisfy `Σ rA = r0` and `Σ rA² = (r0+2)² - 4`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REL_TOL: f64 = 1e-12;

/// A validated Kasner-scalar-field background.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KasnerData {
    /// Spacetime dimension (n >= 4).
    pub n: usize,
    /// Kasner exponents, length n-1, Σq = 1.
    pub q: Vec<f64>,
    /// Scalar-field amplitude, 0 < P <= sqrt((n-2)/(2(n-1))).
    pub p: f64,
    /// Conformal time exponent r0 >= 0.
    pub r0: f64,
    /// Conformal Kasner exponents, length n-1, Σr = r0.
    pub r: Vec<f64>,
}

impl KasnerData {
    /// Number of spatial dimensions n-1.
    pub fn dim(&self) -> usize {
        self.n - 1
    }

    /// Diagonal matrix r_AB (row-major (n-1)×(n-1)).
    pub fn r_matrix(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d * d];
        for a in 0..d {
            m[a * d + a] = self.r[a];
        }
        m
    }

    /// Background value of the Hubble-type scalar, r0 / (2(n-1)).
    pub fn h0(&self) -> f64 {
        self.r0 / (2.0 * (self.n as f64 - 1.0))
    }

    /// Background shear matrix S0_AB = r_AB/2 - h0·δ_AB (row-major).
    pub fn s0_matrix(&self) -> Vec<f64> {
        let d = self.dim();
        let h0 = self.h0();
        let mut m = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                m[a * d + b] = if a == b { 0.5 * self.r[a] - h0 } else { 0.0 };
            }
        }
        m
    }

    /// Residuals of the four algebraic relations, for reporting.
    pub fn relation_residuals(&self) -> [f64; 4] {
        let sq: f64 = self.q.iter().sum();
        let sq2: f64 = self.q.iter().map(|x| x * x).sum();
        let sr: f64 = self.r.iter().sum();
        let sr2: f64 = self.r.iter().map(|x| x * x).sum();
        [
            sq - 1.0,
            sq2 - (1.0 - 2.0 * self.p * self.p),
            sr - self.r0,
            sr2 - ((self.r0 + 2.0) * (self.r0 + 2.0) - 4.0),
        ]
    }

    /// Upper bound of the admissible P range, sqrt((n-2)/(2(n-1))).
    pub fn p_max(n: usize) -> f64 {
        ((n as f64 - 2.0) / (2.0 * (n as f64 - 1.0))).sqrt()
    }

    /// The isotropic (FLRW) background q = (1/(n-1), ..., 1/(n-1)).
    pub fn flrw(n: usize) -> Result<Self> {
        let d = n - 1;
        kasner_from_q(n, &vec![1.0 / d as f64; d])
    }
}

/// Builds a [`KasnerData`] from the dimension and the exponents `q`.
pub fn kasner_from_q(n: usize, q: &[f64]) -> Result<KasnerData> {
    if n < 4 {
        return Err(Error::ParameterRange {
            what: format!("spacetime dimension must satisfy n >= 4, got {n}"),
        });
    }
    let d = n - 1;
    if q.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: q.len(),
        });
    }
    let sq: f64 = q.iter().sum();
    if (sq - 1.0).abs() > REL_TOL {
        return Err(Error::KasnerRelation {
            relation: "Σ q_Λ = 1".into(),
            residual: sq - 1.0,
        });
    }
    let sq2: f64 = q.iter().map(|x| x * x).sum();
    let p2 = 0.5 * (1.0 - sq2);
    if p2 <= 0.0 {
        return Err(Error::KasnerRelation {
            relation: "P² = (1 - Σ q_Λ²)/2 > 0".into(),
            residual: p2,
        });
    }
    let p = p2.sqrt();
    let p_max = KasnerData::p_max(n);
    if p > p_max * (1.0 + 1e-12) {
        return Err(Error::ParameterRange {
            what: format!("P = {p} exceeds sqrt((n-2)/(2(n-1))) = {p_max}"),
        });
    }
    let nf = n as f64;
    let lam = (2.0 * (nf - 1.0) / (nf - 2.0)).sqrt();
    let r0 = lam / p - 2.0 * (nf - 1.0) / (nf - 2.0);
    let r: Vec<f64> = q.iter().map(|&qa| lam / p * qa - 2.0 / (nf - 2.0)).collect();
    let kd = KasnerData {
        n,
        q: q.to_vec(),
        p,
        r0,
        r,
    };
    // The conformal relations follow algebraically; verify anyway so that
    // floating-point edge cases are reported instead of propagated.
    let res = kd.relation_residuals();
    let scale = 1.0 + r0.abs();
    if res[2].abs() > 64.0 * REL_TOL * scale || res[3].abs() > 64.0 * REL_TOL * scale * scale {
        return Err(Error::KasnerRelation {
            relation: "conformal exponent relations".into(),
            residual: res[2].abs().max(res[3].abs()),
        });
    }
    Ok(kd)
}

/// Recovers `q` from the conformal exponents (inverse of the exponent map).
pub fn q_from_r(n: usize, r0: f64, r: &[f64]) -> Vec<f64> {
    let nf = n as f64;
    let lam = (2.0 * (nf - 1.0) / (nf - 2.0)).sqrt();
    let p = lam / (r0 + 2.0 * (nf - 1.0) / (nf - 2.0));
    r.iter().map(|&ra| (ra + 2.0 / (nf - 2.0)) * p / lam).collect()
}

/// Sub-criticality check: `max r_Ω + r_Λ − r_Γ < r0 + 2`.
///
/// With `gamma_distinct` (the default convention) the maximum runs over
/// triples with Ω < Λ and Γ ∉ {Ω, Λ}; the unrestricted variant allows
/// Γ ∈ {Ω, Λ} as well.
pub fn check_subcritical(kd: &KasnerData, gamma_distinct: bool) -> (bool, f64) {
    let d = kd.dim();
    let mut max = f64::NEG_INFINITY;
    for om in 0..d {
        for la in (om + 1)..d {
            for ga in 0..d {
                if gamma_distinct && (ga == om || ga == la) {
                    continue;
                }
                let v = kd.r[om] + kd.r[la] - kd.r[ga];
                if v > max {
                    max = v;
                }
            }
        }
    }
    let bound = kd.r0 + 2.0;
    (max < bound, bound - max)
}

/// Exact homogeneous background values of the rescaled variables at time `t`:
/// `alpha = t^{eps1 + r0/2}` and the diagonal frame entries
/// `e_A = t^{eps2 + r0/2 - rA/2}`; all other components vanish.
pub fn background_values(kd: &KasnerData, eps1: f64, eps2: f64, t: f64) -> Result<(f64, Vec<f64>)> {
    if t <= 0.0 {
        return Err(Error::NonPositiveTime(t));
    }
    check_gauge_exponents(kd, eps1, eps2)?;
    let alpha = t.powf(eps1 + 0.5 * kd.r0);
    let e: Vec<f64> = kd
        .r
        .iter()
        .map(|&ra| t.powf(eps2 + 0.5 * kd.r0 - 0.5 * ra))
        .collect();
    Ok((alpha, e))
}

/// Exact homogeneous background values of the frame variables at time `t`:
/// returns `(etilde_diag, alphatilde, htilde, sigmatilde_diag)`.
pub fn background_frame_values(kd: &KasnerData, t: f64) -> Result<(Vec<f64>, f64, f64, Vec<f64>)> {
    if t <= 0.0 {
        return Err(Error::NonPositiveTime(t));
    }
    let nf = kd.n as f64;
    let et: Vec<f64> = kd.r.iter().map(|&ra| t.powf(-0.5 * ra)).collect();
    let at = t.powf(0.5 * kd.r0);
    let pw = t.powf(-0.5 * kd.r0 - 1.0);
    let ht = kd.r0 / (2.0 * (nf - 1.0)) * pw;
    let st: Vec<f64> = kd
        .r
        .iter()
        .map(|&ra| (0.5 * ra - kd.r0 / (2.0 * (nf - 1.0))) * pw)
        .collect();
    Ok((et, at, ht, st))
}

/// Validates the rescaling-exponent conditions for this background:
/// `eps1 + r0/2 > 0`, `0 < eps2 < 1`, `eps2 + r0/2 - rA/2 > 0`.
pub fn check_gauge_exponents(kd: &KasnerData, eps1: f64, eps2: f64) -> Result<()> {
    if eps1 + 0.5 * kd.r0 <= 0.0 {
        return Err(Error::GaugeCondition {
            what: format!("eps1 + r0/2 = {} must be positive", eps1 + 0.5 * kd.r0),
        });
    }
    if !(0.0 < eps2 && eps2 < 1.0) {
        return Err(Error::GaugeCondition {
            what: format!("eps2 = {eps2} must lie in (0, 1)"),
        });
    }
    for (a, &ra) in kd.r.iter().enumerate() {
        let v = eps2 + 0.5 * kd.r0 - 0.5 * ra;
        if v <= 0.0 {
            return Err(Error::GaugeCondition {
                what: format!("eps2 + r0/2 - r_{}/2 = {v} must be positive", a + 1),
            });
        }
    }
    Ok(())
}

/// Rejection-samples a sub-critical background: `q` is drawn near the
/// isotropic point on the simplex and rejected until the sub-critical
/// condition holds. Deterministic for a fixed RNG state.
pub fn sample_subcritical<R: Rng>(n: usize, spread: f64, rng: &mut R) -> Result<KasnerData> {
    let d = n - 1;
    for _ in 0..10_000 {
        let mut q: Vec<f64> = (0..d)
            .map(|_| 1.0 / d as f64 + spread * (rng.gen::<f64>() - 0.5))
            .collect();
        let s: f64 = q.iter().sum();
        let shift = (s - 1.0) / d as f64;
        for qa in &mut q {
            *qa -= shift;
        }
        let Ok(kd) = kasner_from_q(n, &q) else {
            continue;
        };
        if check_subcritical(&kd, true).0 {
            return Ok(kd);
        }
    }
    Err(Error::SearchCap(
        "sub-critical rejection sampler exhausted 10000 draws".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flrw_n4_has_zero_conformal_exponents() {
        let kd = kasner_from_q(4, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert_abs_diff_eq!(kd.p * kd.p, 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(kd.r0, 0.0, epsilon = 1e-12);
        for &ra in &kd.r {
            assert_abs_diff_eq!(ra, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn anisotropic_n4_example() {
        let kd = kasner_from_q(4, &[0.5, 0.3, 0.2]).unwrap();
        assert_abs_diff_eq!(kd.p, 0.556776, epsilon = 1e-6);
        // frozen high-precision values (satisfy the conformal relations to 1e-12)
        assert_abs_diff_eq!(kd.r0, 0.11085508419127565, epsilon = 1e-12);
        assert_abs_diff_eq!(kd.r[0], 0.5554275420956378, epsilon = 1e-12);
        assert_abs_diff_eq!(kd.r[1], -0.06674347474261733, epsilon = 1e-12);
        assert_abs_diff_eq!(kd.r[2], -0.37782898316174485, epsilon = 1e-12);
        let sr: f64 = kd.r.iter().sum();
        assert_abs_diff_eq!(sr, kd.r0, epsilon = 1e-12);
        let sr2: f64 = kd.r.iter().map(|x| x * x).sum();
        assert_abs_diff_eq!(sr2, (kd.r0 + 2.0) * (kd.r0 + 2.0) - 4.0, epsilon = 1e-12);
    }

    #[test]
    fn isotropic_n5_reduces_to_flrw() {
        let kd = kasner_from_q(5, &[0.25; 4]).unwrap();
        assert_abs_diff_eq!(kd.r0, 0.0, epsilon = 1e-12);
        for &ra in &kd.r {
            assert_abs_diff_eq!(ra, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn subcritical_flrw_margin_is_two() {
        let kd = KasnerData::flrw(4).unwrap();
        let (ok, margin) = check_subcritical(&kd, true);
        assert!(ok);
        assert_abs_diff_eq!(margin, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn subcritical_anisotropic_example() {
        let kd = kasner_from_q(4, &[0.5, 0.3, 0.2]).unwrap();
        let (ok, margin) = check_subcritical(&kd, true);
        assert!(ok);
        // max over distinct triples is r1 + r2 - r3.
        let max = kd.r[0] + kd.r[1] - kd.r[2];
        assert_abs_diff_eq!(max, 0.8665130505147654, epsilon = 1e-12);
        assert_abs_diff_eq!(margin, kd.r0 + 2.0 - max, epsilon = 1e-12);
        assert_abs_diff_eq!(margin, 1.2443420336765103, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_data_fails_subcriticality() {
        // A negative exponent drives one of the r_Λ below -1, which for
        // n = 4 is exactly the failure mode of the distinct-triple test.
        let kd = kasner_from_q(4, &[0.9, 0.2, -0.1]).unwrap();
        let (ok, margin) = check_subcritical(&kd, true);
        assert!(!ok);
        assert!(margin < 0.0);
    }

    #[test]
    fn q_round_trip() {
        let kd = kasner_from_q(4, &[0.5, 0.3, 0.2]).unwrap();
        let q = q_from_r(4, kd.r0, &kd.r);
        for (a, &qa) in q.iter().enumerate() {
            assert_abs_diff_eq!(qa, kd.q[a], epsilon = 1e-12);
        }
    }

    #[test]
    fn conformal_square_sum_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [4usize, 5, 7, 11] {
            for _ in 0..20 {
                let kd = sample_subcritical(n, 0.2, &mut rng).unwrap();
                let res = kd.relation_residuals();
                assert!(res[3].abs() < 1e-11, "n={n}: residual {}", res[3]);
            }
        }
    }

    #[test]
    fn background_values_at_unit_time() {
        let kd = kasner_from_q(4, &[0.5, 0.3, 0.2]).unwrap();
        let (alpha, e) = background_values(&kd, 0.1, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(alpha, 1.0, epsilon = 1e-15);
        for &ea in &e {
            assert_abs_diff_eq!(ea, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn background_values_flrw_small_time() {
        let kd = KasnerData::flrw(4).unwrap();
        let (alpha, e) = background_values(&kd, 0.1, 0.5, 0.01).unwrap();
        assert_abs_diff_eq!(alpha, 0.01f64.powf(0.1), epsilon = 1e-15);
        for &ea in &e {
            assert_abs_diff_eq!(ea, 0.01f64.powf(0.5), epsilon = 1e-15);
        }
    }

    #[test]
    fn background_values_vanish_as_t_to_zero() {
        let kd = kasner_from_q(4, &[0.5, 0.3, 0.2]).unwrap();
        let mut prev = f64::INFINITY;
        for &t in &[0.5, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6] {
            let (alpha, e) = background_values(&kd, 0.2, 0.6, t).unwrap();
            let mag = alpha.max(e.iter().cloned().fold(0.0, f64::max));
            assert!(mag < prev);
            prev = mag;
        }
        assert!(prev < 5e-2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(kasner_from_q(4, &[0.5, 0.5]).is_err());
        assert!(kasner_from_q(4, &[0.6, 0.3, 0.2]).is_err());
        assert!(kasner_from_q(3, &[0.5, 0.5]).is_err());
        // Σq² = 1 leaves no room for the scalar field.
        assert!(kasner_from_q(4, &[1.0, 0.0, 0.0]).is_err());
        let kd = kasner_from_q(4, &[0.5, 0.3, 0.2]).unwrap();
        assert!(background_values(&kd, 0.1, 0.5, -1.0).is_err());
        assert!(background_values(&kd, -5.0, 0.5, 0.5).is_err());
        assert!(background_values(&kd, 0.1, 0.0, 0.5).is_err());
    }

    #[test]
    fn sampler_is_deterministic_and_subcritical() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let ka = sample_subcritical(4, 0.4, &mut a).unwrap();
        let kb = sample_subcritical(4, 0.4, &mut b).unwrap();
        assert_eq!(ka.q, kb.q);
        assert!(check_subcritical(&ka, true).0);
    }

    #[test]
    fn json_round_trip() {
        let kd = kasner_from_q(4, &[0.5, 0.3, 0.2]).unwrap();
        let s = serde_json::to_string(&kd).unwrap();
        let back: KasnerData = serde_json::from_str(&s).unwrap();
        assert_eq!(back.q, kd.q);
        assert_eq!(back.r, kd.r);
        assert_eq!(back.r0, kd.r0);
    }
}
