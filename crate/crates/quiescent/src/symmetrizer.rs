//! Block symmetrizer for the rescaled first-order system.
//!
//! The rescaled evolution equations have the quasilinear form
//! `∂_t W + t^{-ε₂} e_D^Λ A^D ∂_Λ W = F(t, W)`, where the composite state
//! `W = (e_A^Ω, α, C_{ABC}, U_A, ℋ, Σ_{AB})` has
//! `N = (n-1)² + 1 + (n-1)³ + (n-1) + 1 + (n-1)²` components per spatial
//! point. This module assembles the constant matrices that symmetrize the
//! principal part and control the energy hierarchy:
//!
//! * the principal matrices `E^D` (unmodified) and `A^D` (with the
//!   constraint-modification parameters μ, γ folded in);
//! * the lower-order matrix `𝒜` and the diagonal matrix `ℬ_c`;
//! * the change of variables `V`, the symmetrizer `𝒮`, and the products
//!   `B⁰ = 𝒮V`, `B^D = 𝒮A^D V`, and `ℬ_s(k) = kν B⁰ + 𝒮𝒜V`;
//! * the smallest derivative order `k` at which the projected symmetric
//!   part of `ℬ_s(k)` becomes positive definite ([`SymmetrizerSet::min_k`]).
//!
//! The projection `ℙ` keeps the `(e, α, C, U)` components and annihilates
//! `(ℋ, Σ)`; positivity is required only on the range of `ℙ`, because the
//! symmetric part of `𝒮𝒜V` is block diagonal across that splitting and its
//! `(ℋ, Σ)` block is exactly `kν diag(h, l)`, which vanishes at `k = 0`.
//!
//! Supporting material: [`appendix_identities`] verifies the Kronecker-delta
//! contraction identities used in the symmetrization in exact integer
//! arithmetic, and [`mc_pd_check`] analyses the positivity criterion for the
//! matrices `a δδδ + b Π` built from the antisymmetrized trace form. The
//! stated sufficient condition `a > |b|/2` is incorrect for `b < 0`; the
//! exact spectrum is `{a, a + b(n-2)/2}`, and [`mc_pd_check`] reports both
//! the stated and the corrected criterion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kasner::KasnerData;

/// Offsets of the field blocks inside the composite state vector.
///
/// Ordering: frame coefficients `e_A^Ω` (row-major, (n-1)² entries), lapse
/// `α` (1), connection coefficients `C_{ABC}` ((n-1)³, storage index
/// `(A(n-1)+B)(n-1)+C` with `B` the raised middle slot), `U_A` (n-1), mean
/// curvature `ℋ` (1), shear `Σ_{AB}` ((n-1)²).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldIndexMap {
    /// Spatial dimension d = n - 1.
    pub d: usize,
    pub off_e: usize,
    pub off_alpha: usize,
    pub off_c: usize,
    pub off_u: usize,
    pub off_h: usize,
    pub off_sigma: usize,
    /// Total number of components.
    pub n_total: usize,
}

impl FieldIndexMap {
    pub fn new(d: usize) -> Self {
        let ne = d * d;
        let nc = d * d * d;
        let off_e = 0;
        let off_alpha = ne;
        let off_c = off_alpha + 1;
        let off_u = off_c + nc;
        let off_h = off_u + d;
        let off_sigma = off_h + 1;
        FieldIndexMap {
            d,
            off_e,
            off_alpha,
            off_c,
            off_u,
            off_h,
            off_sigma,
            n_total: off_sigma + ne,
        }
    }

    /// Flat index of the matrix entry (a, b) within a d×d block.
    #[inline]
    pub fn midx(&self, a: usize, b: usize) -> usize {
        a * self.d + b
    }

    /// Flat index of the connection entry (a, m, b) within the d³ block.
    #[inline]
    pub fn cidx(&self, a: usize, m: usize, b: usize) -> usize {
        (a * self.d + m) * self.d + b
    }

    /// Number of components in the range of the projection ℙ
    /// (everything before the ℋ slot).
    #[inline]
    pub fn p_range(&self) -> usize {
        self.off_h
    }
}

/// Scalar parameters of the change of variables `V`, the symmetrizer `𝒮`,
/// and the constraint modification.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SymmetrizerParams {
    /// Constraint-modification coefficient feeding `𝔐` into the C equation.
    pub mu: f64,
    /// Constraint-modification coefficient feeding `𝔐` into the U equation.
    pub gamma: f64,
    /// `V` diagonal on the C block.
    pub a: f64,
    /// `V` coupling C ← U.
    pub b: f64,
    /// `V` coupling U ← C.
    pub c: f64,
    /// `V` diagonal on the U block.
    pub d: f64,
    /// `𝒮` diagonal on the C block.
    pub p: f64,
    /// `𝒮` coupling C ← U.
    pub q: f64,
    /// `𝒮` coupling U ← C.
    pub s: f64,
    /// `𝒮` diagonal on the U block.
    pub u: f64,
    /// `𝒮` diagonal on the ℋ slot.
    pub h: f64,
    /// `𝒮` diagonal on the Σ block.
    pub l: f64,
}

impl SymmetrizerParams {
    /// The fixed parameter choice used in production:
    /// `a = n-1, b = 2, c = n-1, d = 3/2, p = 1/2, q = 0,
    /// s = (2n-5)/(2n-2), u = (7-2n)/(2n-2), h = 1, l = 1/(n-1)`,
    /// with modification coefficients `μ = 0, γ = 2`.
    pub fn fixed(n: usize) -> Self {
        let nf = n as f64;
        SymmetrizerParams {
            mu: 0.0,
            gamma: 2.0,
            a: nf - 1.0,
            b: 2.0,
            c: nf - 1.0,
            d: 1.5,
            p: 0.5,
            q: 0.0,
            s: (2.0 * nf - 5.0) / (2.0 * nf - 2.0),
            u: (7.0 - 2.0 * nf) / (2.0 * nf - 2.0),
            h: 1.0,
            l: 1.0 / (nf - 1.0),
        }
    }

    /// Solve for `(p, q, s, u, a)` in terms of the free parameters
    /// `(μ, γ, b, c, d, h, l)` so that `B⁰` and the `B^D` are symmetric.
    pub fn solve(
        n: usize,
        mu: f64,
        gamma: f64,
        b: f64,
        c: f64,
        d: f64,
        h: f64,
        l: f64,
    ) -> Result<Self> {
        let nf = n as f64;
        let denom = 4.0 * h * gamma
            + l * (nf - 1.0) * (2.0 - 6.0 * gamma + nf * (2.0 * gamma - mu - 2.0) + mu);
        if denom.abs() < 1e-12 {
            return Err(Error::SingularDenominator {
                expr: "4hγ + l(n-1)(2 - 6γ + n(2γ-μ-2) + μ)".into(),
                value: denom,
            });
        }
        let denom_s = (nf - 1.0) * (nf - 1.0) * (2.0 + (nf - 2.0) * mu);
        if denom_s.abs() < 1e-12 {
            return Err(Error::SingularDenominator {
                expr: "(n-1)²(2 + (n-2)μ)".into(),
                value: denom_s,
            });
        }
        // Shorthand appearing throughout: 1 + n(γ-1) - 2γ.
        let w = 1.0 + nf * (gamma - 1.0) - 2.0 * gamma;
        let p = c * l * (l * (nf - 1.0) * w + h * gamma) / denom;
        let q = -c * l * (h * (mu - 2.0) + l * (nf - 1.0) * (2.0 + (nf - 2.0) * mu)) / denom;
        let s = (-2.0 * d * l * (nf - 1.0) * w - 2.0 * d * h * gamma
            + b * (l * (nf * nf - 4.0 * nf + 3.0) * w + 2.0 * h * (nf - 2.0) * gamma))
            / denom_s;
        let u = (-b * (nf - 2.0) * (2.0 * h + l * (nf * nf - 4.0 * nf + 3.0))
            + 2.0 * d * (h + l * (nf * nf - 3.0 * nf + 2.0)))
            / (2.0 * (nf - 1.0) * (nf - 1.0));
        let a = 2.0 * c * (l * (nf - 1.0) * w + h * gamma) / denom;
        Ok(SymmetrizerParams {
            mu,
            gamma,
            a,
            b,
            c,
            d,
            p,
            q,
            s,
            u,
            h,
            l,
        })
    }

    /// Residual of the off-diagonal symmetry condition `bp + dq = as + cu`
    /// for the C/U coupling of `B⁰`. Vanishes iff `γ = (n-2)μ/2 + 2`.
    pub fn coupling_residual(&self) -> f64 {
        self.b * self.p + self.d * self.q - self.a * self.s - self.c * self.u
    }
}

#[inline]
fn kd(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Symmetric trace-free projection `δ_x^{⟨P} δ_y^{Q⟩}` in d dimensions.
#[inline]
fn stf(d: usize, x: usize, y: usize, p: usize, q: usize) -> f64 {
    0.5 * (kd(x, p) * kd(y, q) + kd(x, q) * kd(y, p)) - kd(x, y) * kd(p, q) / d as f64
}

/// `(M₃)^D_{ABC}{}^{PQ} = δ_{[A}^D δ_{C]}^{⟨P} δ_B^{Q⟩}`.
#[inline]
fn m3(d: usize, dd: usize, a: usize, b: usize, c: usize, p: usize, q: usize) -> f64 {
    0.5 * (kd(a, dd) * stf(d, c, b, p, q) - kd(c, dd) * stf(d, a, b, p, q))
}

/// `(M₄)^D_{ABC}{}^{PQ} = δ^{D⟨P} δ_{[A}^{Q⟩} δ_{C]B}`.
#[inline]
fn m4(d: usize, dd: usize, a: usize, b: usize, c: usize, p: usize, q: usize) -> f64 {
    0.5 * (stf(d, dd, a, p, q) * kd(c, b) - stf(d, dd, c, p, q) * kd(a, b))
}

/// Adjoint `(M₃)^{DPQR}{}_{AB} = δ^{D[P} δ_{⟨A}^{R]} δ_{B⟩}^Q`.
#[inline]
fn m3_adj(d: usize, dd: usize, a: usize, b: usize, p: usize, q: usize, r: usize) -> f64 {
    0.5 * (kd(dd, p) * stf(d, r, q, a, b) - kd(dd, r) * stf(d, p, q, a, b))
}

/// Adjoint `(M₄)^{DPQR}{}_{AB} = δ_{⟨A}^D δ_{B⟩}^{[P} δ^{R]Q}`.
#[inline]
fn m4_adj(d: usize, dd: usize, a: usize, b: usize, p: usize, q: usize, r: usize) -> f64 {
    0.5 * (stf(d, dd, p, a, b) * kd(r, q) - stf(d, dd, r, a, b) * kd(p, q))
}

/// Complete set of symmetrizer matrices for a fixed background and gauge.
#[derive(Debug, Clone)]
pub struct SymmetrizerSet {
    pub n: usize,
    pub map: FieldIndexMap,
    pub params: SymmetrizerParams,
    pub nu: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Kasner exponent sum r₀.
    pub r0: f64,
    /// Kasner frame exponents r_A.
    pub r: Vec<f64>,
    /// Diagonal of ℬ_c.
    pub bc: DVector<f64>,
    /// Unmodified principal matrices E^D, one per spatial frame direction.
    pub e_mats: Vec<DMatrix<f64>>,
    /// Modified principal matrices A^D.
    pub a_mats: Vec<DMatrix<f64>>,
    /// Lower-order matrix 𝒜.
    pub acal: DMatrix<f64>,
    /// Change of variables V and its inverse.
    pub v: DMatrix<f64>,
    pub v_inv: DMatrix<f64>,
    /// Symmetrizer 𝒮.
    pub s_mat: DMatrix<f64>,
    /// B⁰ = 𝒮V.
    pub b0: DMatrix<f64>,
    /// B^D = 𝒮 A^D V.
    pub bd: Vec<DMatrix<f64>>,
    /// 𝒮𝒜V.
    pub sav: DMatrix<f64>,
}

/// Assemble the bracket matrix common to E^D and the modification terms:
/// rows C, U, ℋ, Σ; columns C, U, ℋ, Σ. `E^D = bracket(D, 0, 0)` and
/// `A^D = -bracket(D, μ, γ)`.
fn bracket(map: &FieldIndexMap, n: usize, dd: usize, mu: f64, gamma: f64) -> DMatrix<f64> {
    let d = map.d;
    let nf = n as f64;
    let mut m = DMatrix::zeros(map.n_total, map.n_total);
    // C rows.
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let row = map.off_c + map.cidx(a, b, c);
                m[(row, map.off_h)] = -(mu * nf - 2.0 * mu + 2.0)
                    * 0.5
                    * (kd(a, dd) * kd(c, b) - kd(c, dd) * kd(a, b));
                for p in 0..d {
                    for q in 0..d {
                        m[(row, map.off_sigma + map.midx(p, q))] =
                            -2.0 * m3(d, dd, a, b, c, p, q) + mu * m4(d, dd, a, b, c, p, q);
                    }
                }
            }
        }
    }
    // U rows.
    for a in 0..d {
        let row = map.off_u + a;
        m[(row, map.off_h)] = ((nf - 1.0) - gamma * (nf - 2.0)) * kd(a, dd);
        for p in 0..d {
            for q in 0..d {
                m[(row, map.off_sigma + map.midx(p, q))] = gamma * stf(d, dd, a, p, q);
            }
        }
    }
    // ℋ row.
    for p in 0..d {
        for q in 0..d {
            for r in 0..d {
                m[(map.off_h, map.off_c + map.cidx(p, q, r))] =
                    -2.0 / (nf - 1.0) * 0.5 * (kd(dd, p) * kd(r, q) - kd(dd, r) * kd(p, q));
            }
        }
        m[(map.off_h, map.off_u + p)] = kd(dd, p) / (nf - 1.0);
    }
    // Σ rows.
    for a in 0..d {
        for b in 0..d {
            let row = map.off_sigma + map.midx(a, b);
            for p in 0..d {
                for q in 0..d {
                    for r in 0..d {
                        m[(row, map.off_c + map.cidx(p, q, r))] =
                            -m3_adj(d, dd, a, b, p, q, r) - m4_adj(d, dd, a, b, p, q, r);
                    }
                }
            }
            for p in 0..d {
                m[(row, map.off_u + p)] = stf(d, dd, p, a, b);
            }
        }
    }
    m
}

/// Assemble a matrix of the shared V/𝒮 shape: identity-like with scalar
/// weights `cc` (C diagonal), `cu` (C←U), `uc` (U←C), `uu` (U diagonal),
/// `hh` (ℋ), `ll` (Σ diagonal); identity on the e and α blocks.
fn vs_matrix(
    map: &FieldIndexMap,
    cc: f64,
    cu: f64,
    uc: f64,
    uu: f64,
    hh: f64,
    ll: f64,
) -> DMatrix<f64> {
    let d = map.d;
    let mut m = DMatrix::identity(map.n_total, map.n_total);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let row = map.off_c + map.cidx(a, b, c);
                m[(row, row)] = cc;
                for p in 0..d {
                    m[(row, map.off_u + p)] =
                        cu * 0.5 * (kd(a, p) * kd(c, b) - kd(c, p) * kd(a, b));
                }
            }
        }
    }
    for a in 0..d {
        let row = map.off_u + a;
        for p in 0..d {
            for q in 0..d {
                for r in 0..d {
                    m[(row, map.off_c + map.cidx(p, q, r))] =
                        uc * 0.5 * (kd(a, p) * kd(r, q) - kd(a, r) * kd(p, q));
                }
            }
        }
        m[(row, row)] = uu;
    }
    m[(map.off_h, map.off_h)] = hh;
    for a in 0..d {
        for b in 0..d {
            let i = map.off_sigma + map.midx(a, b);
            m[(i, i)] = ll;
        }
    }
    m
}

/// Inverse of a matrix of the shared V/𝒮 shape.  On the C–U sector the
/// shape is the 2×2 block matrix [[cc·I, cu·K], [uc·Kᵀ, uu·I]] with
/// K_{(abc),p} = δ_{[a}^p δ_{c]b}; since KᵀK = ((d−1)/2)·I the Schur
/// complement is scalar and the inverse stays in the same family up to a
/// KKᵀ correction on the C block.
fn vs_inverse(
    map: &FieldIndexMap,
    cc: f64,
    cu: f64,
    uc: f64,
    uu: f64,
    hh: f64,
    ll: f64,
) -> Result<DMatrix<f64>> {
    let d = map.d;
    let schur = uu - uc * cu * (d as f64 - 1.0) / (2.0 * cc);
    if cc == 0.0 || hh == 0.0 || ll == 0.0 || schur == 0.0 {
        return Err(Error::Positivity {
            what: "change of variables V is singular".into(),
        });
    }
    let mut inv = vs_matrix(
        map,
        1.0 / cc,
        -cu / (cc * schur),
        -uc / (cc * schur),
        1.0 / schur,
        1.0 / hh,
        1.0 / ll,
    );
    // KKᵀ correction on the C block: A⁻¹B S⁻¹ C A⁻¹ with scalar S.
    let w = cu * uc / (cc * cc * schur);
    if w != 0.0 {
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    let row = map.off_c + map.cidx(a, b, c);
                    for p in 0..d {
                        for q in 0..d {
                            for r in 0..d {
                                let kkt = 0.25
                                    * (kd(a, p) * kd(c, b) * kd(r, q)
                                        - kd(a, r) * kd(c, b) * kd(p, q)
                                        - kd(c, p) * kd(a, b) * kd(r, q)
                                        + kd(c, r) * kd(a, b) * kd(p, q));
                                if kkt != 0.0 {
                                    inv[(row, map.off_c + map.cidx(p, q, r))] += w * kkt;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Product of two structurally sparse dense matrices.  Every matrix in the
/// set has O(d) nonzeros per row, so walking nonzero entries beats the dense
/// O(m³) product by orders of magnitude once n is large.
fn sparse_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, inner) = a.shape();
    let cols = b.ncols();
    let b_rows: Vec<Vec<(usize, f64)>> = (0..inner)
        .map(|k| {
            (0..cols)
                .filter_map(|j| {
                    let v = b[(k, j)];
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect();
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for k in 0..inner {
            let av = a[(i, k)];
            if av == 0.0 {
                continue;
            }
            for &(j, bv) in &b_rows[k] {
                out[(i, j)] += av * bv;
            }
        }
    }
    out
}

impl SymmetrizerSet {
    /// Build the full matrix set for the given Kasner background and gauge
    /// exponents.
    pub fn build(
        kasner: &KasnerData,
        eps1: f64,
        eps2: f64,
        nu: f64,
        params: &SymmetrizerParams,
    ) -> Result<Self> {
        let n = kasner.n;
        let d = n - 1;
        let map = FieldIndexMap::new(d);
        if !(nu > 0.0) {
            return Err(Error::ParameterRange {
                what: format!("ν must be positive, got {nu}"),
            });
        }
        if !(eps2 > 0.0 && eps2 < 1.0) {
            return Err(Error::ParameterRange {
                what: format!("ε₂ must lie in (0, 1), got {eps2}"),
            });
        }
        let r0 = kasner.r0;
        let r = kasner.r.clone();
        let kappa0 = 1.0 + r0 / 2.0;
        let kappa1 = eps1 + r0 / 2.0;
        let kappa2 = eps2 + r0 / 2.0;

        // Diagonal of ℬ_c.
        let mut bc = DVector::zeros(map.n_total);
        for a in 0..d {
            for om in 0..d {
                bc[map.off_e + map.midx(a, om)] = kappa2 - r[a] / 2.0;
            }
        }
        bc[map.off_alpha] = kappa1;
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    bc[map.off_c + map.cidx(a, b, c)] = kappa0 - (r[a] + r[c] - r[b]) / 2.0;
                }
            }
        }
        for a in 0..d {
            bc[map.off_u + a] = kappa0 - r[a] / 2.0;
        }
        bc[map.off_h] = kappa0;
        for i in 0..d * d {
            bc[map.off_sigma + i] = kappa0;
        }

        let e_mats: Vec<_> = (0..d).map(|dd| bracket(&map, n, dd, 0.0, 0.0)).collect();
        let a_mats: Vec<_> = (0..d)
            .map(|dd| -bracket(&map, n, dd, params.mu, params.gamma))
            .collect();

        let acal = build_acal(&map, n, &r, kappa0, kappa1, kappa2, params.mu, params.gamma);
        let v = vs_matrix(&map, params.a, params.b, params.c, params.d, 1.0, 1.0);
        let v_inv = vs_inverse(&map, params.a, params.b, params.c, params.d, 1.0, 1.0)?;
        let s_mat = vs_matrix(
            &map, params.p, params.q, params.s, params.u, params.h, params.l,
        );
        let b0 = sparse_mul(&s_mat, &v);
        let bd: Vec<_> = a_mats
            .iter()
            .map(|am| sparse_mul(&sparse_mul(&s_mat, am), &v))
            .collect();
        let sav = sparse_mul(&sparse_mul(&s_mat, &acal), &v);

        Ok(SymmetrizerSet {
            n,
            map,
            params: *params,
            nu,
            kappa0,
            kappa1,
            kappa2,
            r0,
            r,
            bc,
            e_mats,
            a_mats,
            acal,
            v,
            v_inv,
            s_mat,
            b0,
            bd,
            sav,
        })
    }

    /// `ℬ_s(k) = kν B⁰ + 𝒮𝒜V`, the lower-order matrix governing the energy
    /// estimate at derivative order k.
    pub fn bs(&self, k: usize) -> DMatrix<f64> {
        &self.b0 * (k as f64 * self.nu) + &self.sav
    }

    /// Smallest k for which the symmetric part of `ℬ_s(k)`, restricted to
    /// the range of ℙ, is positive definite. Checked by Cholesky
    /// factorization; errors out past `cap`.
    pub fn min_k(&self, cap: usize) -> Result<usize> {
        let pr = self.map.p_range();
        for k in 0..=cap {
            let m = self.bs(k);
            let sym = (&m + m.transpose()) * 0.5;
            let block = sym.view((0, 0), (pr, pr)).into_owned();
            if nalgebra::linalg::Cholesky::new(block).is_some() {
                return Ok(k);
            }
        }
        Err(Error::SearchCap(format!(
            "no positive-definite ℬ_s(k) projection found for k ≤ {cap}"
        )))
    }

    /// Smallest eigenvalue of the symmetric part of `ℬ_s(k)` restricted to
    /// the range of ℙ.
    pub fn bs_restricted_min_eig(&self, k: usize) -> f64 {
        let pr = self.map.p_range();
        let m = self.bs(k);
        let sym = (&m + m.transpose()) * 0.5;
        let block = sym.view((0, 0), (pr, pr)).into_owned();
        block
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, &e| acc.min(e))
    }

    /// Structural verification report.
    pub fn verify(&self) -> SymmetrizerReport {
        let n = self.n;
        let nf = n as f64;
        let sym_defect = |m: &DMatrix<f64>| {
            let diff = m - m.transpose();
            diff.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
        };
        let b0_sym_defect = sym_defect(&self.b0);
        let bd_sym_defect = self
            .bd
            .iter()
            .map(sym_defect)
            .fold(0.0f64, f64::max);

        let eigs = self.b0.symmetric_eigenvalues();
        let b0_eig_min = eigs.iter().fold(f64::INFINITY, |a, &e| a.min(e));
        let b0_eig_max = eigs.iter().fold(f64::NEG_INFINITY, |a, &e| a.max(e));
        let lower = 1.0 / (2.0 * nf * nf);
        let upper = 2.0 * nf;
        let b0_bounds_ok = b0_eig_min >= lower && b0_eig_max <= upper;

        let coupling_residual = self.params.coupling_residual();
        let gamma_mu_residual =
            self.params.gamma - ((nf - 2.0) * self.params.mu / 2.0 + 2.0);

        let id = DMatrix::identity(self.map.n_total, self.map.n_total);
        let v_inverse_defect = (&self.v * &self.v_inv - &id)
            .iter()
            .fold(0.0f64, |a, &x| a.max(x.abs()));

        let b0_closed_form_defect = {
            let reference = b0_fixed_reference(&self.map, n);
            (&self.b0 - reference)
                .iter()
                .fold(0.0f64, |a, &x| a.max(x.abs()))
        };
        let bd_closed_form_defect = (0..self.map.d)
            .map(|dd| {
                let reference = bd_fixed_reference(&self.map, n, dd);
                (&self.bd[dd] - reference)
                    .iter()
                    .fold(0.0f64, |a, &x| a.max(x.abs()))
            })
            .fold(0.0f64, f64::max);

        let bc_min = self.bc.iter().fold(f64::INFINITY, |a, &x| a.min(x));

        let pp = &self.params;
        let pos1 = (4.0 * pp.d * pp.d - 4.0 * pp.b * pp.d * (nf - 2.0)
            + pp.b * pp.b * (nf * nf - 3.0 * nf + 2.0))
            / (4.0 * (nf - 1.0));
        let pos2_lhs = pp.c * pp.c / (nf - 1.0);
        let pos2_rhs = (pp.b * pp.b * pp.c * pp.c
            / ((nf - 1.0)
                * (4.0 * pp.d * pp.d - 4.0 * pp.b * pp.d * (nf - 2.0)
                    + pp.b * pp.b * (nf - 1.0) * (nf - 2.0))))
            .abs();

        // M* = a δδδ - (bc/d) Π on the C block; its eigenvalues are
        // a and a - (bc/d)(n-2)/2.
        let mstar_coeff = -pp.b * pp.c / pp.d;
        let mstar_eig_other = pp.a + mstar_coeff * (nf - 2.0) / 2.0;
        let mstar_min_abs_eig = pp.a.abs().min(mstar_eig_other.abs());

        SymmetrizerReport {
            n,
            b0_sym_defect,
            bd_sym_defect,
            b0_eig_min,
            b0_eig_max,
            b0_bounds_ok,
            coupling_residual,
            gamma_mu_residual,
            v_inverse_defect,
            b0_closed_form_defect,
            bd_closed_form_defect,
            bc_min,
            pos1,
            pos2_margin: pos2_lhs - pos2_rhs,
            mstar_min_abs_eig,
        }
    }
}

/// Assemble the lower-order matrix 𝒜 (rows/columns ordered as the state).
#[allow(clippy::too_many_arguments)]
fn build_acal(
    map: &FieldIndexMap,
    n: usize,
    r: &[f64],
    kappa0: f64,
    kappa1: f64,
    kappa2: f64,
    mu: f64,
    gamma: f64,
) -> DMatrix<f64> {
    let d = map.d;
    let _ = n;
    let mut m = DMatrix::zeros(map.n_total, map.n_total);
    for a in 0..d {
        for om in 0..d {
            let i = map.off_e + map.midx(a, om);
            m[(i, i)] = kappa2 - 0.5 * r[a];
        }
    }
    m[(map.off_alpha, map.off_alpha)] = kappa1;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let row = map.off_c + map.cidx(a, b, c);
                for p in 0..d {
                    for q in 0..d {
                        for rr in 0..d {
                            let diag = kd(a, p) * kd(b, q) * kd(c, rr);
                            let val = kappa0 * diag
                                - 0.5
                                    * (r[a] * diag + r[c] * diag
                                        - r[b] * kd(b, q) * kd(a, p) * kd(c, rr))
                                - (mu / 2.0)
                                    * r[p]
                                    * kd(p, q)
                                    * 0.5
                                    * (kd(a, rr) * kd(c, b) - kd(c, rr) * kd(a, b))
                                - (mu / 2.0)
                                    * 0.5
                                    * (r[a] * kd(a, p) * kd(c, b) - r[c] * kd(c, p) * kd(a, b))
                                    * kd(q, rr);
                            m[(row, map.off_c + map.cidx(p, q, rr))] = val;
                        }
                    }
                }
                for p in 0..d {
                    m[(row, map.off_u + p)] = mu
                        * (kappa0 * 0.5 * (kd(a, p) * kd(c, b) - kd(c, p) * kd(a, b))
                            - 0.25 * (r[a] * kd(a, p) * kd(c, b) - r[c] * kd(c, p) * kd(a, b)));
                }
            }
        }
    }
    for a in 0..d {
        let row = map.off_u + a;
        for p in 0..d {
            for q in 0..d {
                for rr in 0..d {
                    m[(row, map.off_c + map.cidx(p, q, rr))] =
                        (gamma / 2.0) * r[q] * kd(q, rr) * kd(a, p)
                            - (gamma / 2.0) * r[a] * kd(a, p) * kd(q, rr);
                }
            }
        }
        m[(row, map.off_u + a)] = (gamma + 1.0) * (kappa0 - 0.5 * r[a]);
    }
    // ℋ and Σ rows and columns vanish.
    m
}

/// Closed-form B⁰ at the fixed parameter choice, used as an independent
/// cross-check of the assembled product 𝒮V.
fn b0_fixed_reference(map: &FieldIndexMap, n: usize) -> DMatrix<f64> {
    let d = map.d;
    let nf = n as f64;
    let mut m = DMatrix::zeros(map.n_total, map.n_total);
    for i in 0..d * d {
        m[(map.off_e + i, map.off_e + i)] = 1.0;
    }
    m[(map.off_alpha, map.off_alpha)] = 1.0;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let row = map.off_c + map.cidx(a, b, c);
                m[(row, row)] = (nf - 1.0) / 2.0;
                for p in 0..d {
                    let val = 0.5 * (kd(a, p) * kd(c, b) - kd(c, p) * kd(a, b));
                    m[(row, map.off_u + p)] = val;
                    m[(map.off_u + p, row)] = val;
                }
            }
        }
    }
    let uu = (4.0 * nf * nf - 24.0 * nf + 41.0) / (4.0 * nf - 4.0);
    for a in 0..d {
        m[(map.off_u + a, map.off_u + a)] = uu;
    }
    m[(map.off_h, map.off_h)] = 1.0;
    for i in 0..d * d {
        m[(map.off_sigma + i, map.off_sigma + i)] = 1.0 / (nf - 1.0);
    }
    m
}

/// Closed-form B^D at the fixed parameter choice.
fn bd_fixed_reference(map: &FieldIndexMap, n: usize, dd: usize) -> DMatrix<f64> {
    let d = map.d;
    let nf = n as f64;
    let mut m = DMatrix::zeros(map.n_total, map.n_total);
    let cu = (11.0 - 4.0 * nf) / (2.0 * nf - 2.0);
    let su = (9.0 - 2.0 * nf) / (2.0 * nf - 2.0);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let row = map.off_c + map.cidx(a, b, c);
                m[(row, map.off_h)] = -0.5 * (kd(a, dd) * kd(c, b) - kd(c, dd) * kd(a, b));
                for p in 0..d {
                    for q in 0..d {
                        m[(row, map.off_sigma + map.midx(p, q))] = -m3(d, dd, a, b, c, p, q);
                    }
                }
            }
        }
    }
    for a in 0..d {
        let row = map.off_u + a;
        m[(row, map.off_h)] = cu * kd(a, dd);
        for p in 0..d {
            for q in 0..d {
                m[(row, map.off_sigma + map.midx(p, q))] = su * stf(d, dd, a, p, q);
            }
        }
    }
    for p in 0..d {
        for q in 0..d {
            for rr in 0..d {
                m[(map.off_h, map.off_c + map.cidx(p, q, rr))] =
                    -0.5 * (kd(dd, p) * kd(rr, q) - kd(dd, rr) * kd(p, q));
            }
        }
        m[(map.off_h, map.off_u + p)] = cu * kd(dd, p);
    }
    for a in 0..d {
        for b in 0..d {
            let row = map.off_sigma + map.midx(a, b);
            for p in 0..d {
                for q in 0..d {
                    for rr in 0..d {
                        m[(row, map.off_c + map.cidx(p, q, rr))] =
                            -m3_adj(d, dd, a, b, p, q, rr);
                    }
                }
            }
            for p in 0..d {
                m[(row, map.off_u + p)] = su * stf(d, dd, p, a, b);
            }
        }
    }
    // The assembled 𝒮 A^D V carries an overall minus relative to the block
    // templates above.
    -m
}

/// Structural verification data produced by [`SymmetrizerSet::verify`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct SymmetrizerReport {
    pub n: usize,
    /// max |B⁰ - (B⁰)ᵀ|.
    pub b0_sym_defect: f64,
    /// max over D of max |B^D - (B^D)ᵀ|.
    pub bd_sym_defect: f64,
    pub b0_eig_min: f64,
    pub b0_eig_max: f64,
    /// Eigenvalues of B⁰ within [1/(2n²), 2n].
    pub b0_bounds_ok: bool,
    /// bp + dq - as - cu.
    pub coupling_residual: f64,
    /// γ - ((n-2)μ/2 + 2); zero is required for the coupling to close.
    pub gamma_mu_residual: f64,
    /// max |V V⁻¹ - I|.
    pub v_inverse_defect: f64,
    /// Deviation of the assembled B⁰ from its closed form (fixed params).
    pub b0_closed_form_defect: f64,
    /// Deviation of the assembled B^D from their closed forms (fixed params).
    pub bd_closed_form_defect: f64,
    /// Minimum entry of the diagonal matrix ℬ_c.
    pub bc_min: f64,
    /// Positivity margin (4d² - 4bd(n-2) + b²(n²-3n+2)) / (4(n-1)).
    pub pos1: f64,
    /// Margin of the second positivity condition (positive means satisfied).
    pub pos2_margin: f64,
    /// Minimum |eigenvalue| of M* = aδδδ - (bc/d)Π (invertibility margin).
    pub mstar_min_abs_eig: f64,
}

/// Analysis of the positivity criterion for `M = a δδδ + b Π` on the C
/// block, where `Π_{ABC,PQR} = Σ_D ½(δ_{AD}δ_{CB} - δ_{CD}δ_{AB})
/// ½(δ_{DP}δ_{RQ} - δ_{DR}δ_{PQ})`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct McPdReport {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    /// The stated sufficient condition `a > |b|/2`. Incorrect for b < 0.
    pub stated_sufficient: bool,
    /// The corrected, exact criterion: `a > 0` and `a + b(n-2)/2 > 0`.
    pub corrected_sufficient: bool,
    /// Exact minimum eigenvalue min(a, a + b(n-2)/2).
    pub analytic_min_eig: f64,
    /// Minimum eigenvalue of the densely assembled matrix (n ≤ 8 only).
    pub dense_min_eig: Option<f64>,
    /// Positive definiteness of the dense matrix (n ≤ 8 only).
    pub dense_pd: Option<bool>,
}

/// The composite form Π on the C block as a dense (n-1)³ × (n-1)³ matrix.
pub fn antisym_trace_form(d: usize) -> DMatrix<f64> {
    let nc = d * d * d;
    let ci = |a: usize, b: usize, c: usize| (a * d + b) * d + c;
    let mut m = DMatrix::zeros(nc, nc);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for p in 0..d {
                    for q in 0..d {
                        for rr in 0..d {
                            let mut v = 0.0;
                            for dd in 0..d {
                                v += 0.5 * (kd(a, dd) * kd(c, b) - kd(c, dd) * kd(a, b))
                                    * 0.5
                                    * (kd(dd, p) * kd(rr, q) - kd(dd, rr) * kd(p, q));
                            }
                            m[(ci(a, b, c), ci(p, q, rr))] = v;
                        }
                    }
                }
            }
        }
    }
    m
}

/// Check positivity of `a δδδ + b Π` against both the stated and the exact
/// criterion; densely verified for n ≤ 8.
pub fn mc_pd_check(n: usize, a: f64, b: f64) -> McPdReport {
    let nf = n as f64;
    let d = n - 1;
    let analytic_min_eig = a.min(a + b * (nf - 2.0) / 2.0);
    let (dense_min_eig, dense_pd) = if n <= 8 {
        let m = antisym_trace_form(d) * b + DMatrix::identity(d * d * d, d * d * d) * a;
        let eigs = m.symmetric_eigenvalues();
        let mn = eigs.iter().fold(f64::INFINITY, |acc, &e| acc.min(e));
        (Some(mn), Some(mn > 0.0))
    } else {
        (None, None)
    };
    McPdReport {
        n,
        a,
        b,
        stated_sufficient: a > b.abs() / 2.0,
        corrected_sufficient: a > 0.0 && a + b * (nf - 2.0) / 2.0 > 0.0,
        analytic_min_eig,
        dense_min_eig,
        dense_pd,
    }
}

// ---------------------------------------------------------------------------
// Exact integer verification of the contraction identities.
// ---------------------------------------------------------------------------

#[inline]
fn kdi(i: usize, j: usize) -> i64 {
    (i == j) as i64
}

/// `δ_x^{⟨P}δ_y^{Q⟩}` scaled by 2d (integer-exact).
#[inline]
fn stf_i(d: usize, x: usize, y: usize, p: usize, q: usize) -> i64 {
    d as i64 * (kdi(x, p) * kdi(y, q) + kdi(x, q) * kdi(y, p)) - 2 * kdi(x, y) * kdi(p, q)
}

/// `(M₃)^D_{ABC}{}^{PQ}` scaled by 4d.
#[inline]
fn m3_i(d: usize, dd: usize, a: usize, b: usize, c: usize, p: usize, q: usize) -> i64 {
    kdi(a, dd) * stf_i(d, c, b, p, q) - kdi(c, dd) * stf_i(d, a, b, p, q)
}

/// `(M₄)^D_{ABC}{}^{PQ}` scaled by 4d.
#[inline]
fn m4_i(d: usize, dd: usize, a: usize, b: usize, c: usize, p: usize, q: usize) -> i64 {
    stf_i(d, dd, a, p, q) * kdi(c, b) - stf_i(d, dd, c, p, q) * kdi(a, b)
}

/// `(M₃)^{DPQR}{}_{AB}` scaled by 4d.
#[inline]
fn m3_adj_i(d: usize, dd: usize, a: usize, b: usize, p: usize, q: usize, r: usize) -> i64 {
    kdi(dd, p) * stf_i(d, r, q, a, b) - kdi(dd, r) * stf_i(d, p, q, a, b)
}

/// `(M₄)^{DPQR}{}_{AB}` scaled by 4d.
#[inline]
fn m4_adj_i(d: usize, dd: usize, a: usize, b: usize, p: usize, q: usize, r: usize) -> i64 {
    stf_i(d, dd, p, a, b) * kdi(r, q) - stf_i(d, dd, r, a, b) * kdi(p, q)
}

/// Outcome of the exact contraction-identity checks for one dimension.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct AppendixReport {
    pub n: usize,
    /// `δ_A^{[E}δ^{G]F} δ_{[E}^P δ_{G]F} = (n-2)/2 δ_A^P`.
    pub trace_contraction: bool,
    /// The four-delta expansion of `δ_{[A}^E δ_{C]B} δ_E^{[P}δ^{R]Q}`.
    pub double_antisym: bool,
    /// `δ_A^{[I}δ^{K]J} M₃ = -½ δ^{D⟨P}δ_A^{Q⟩}`.
    pub m3_trace: bool,
    /// `δ_A^{[I}δ^{K]J} M₄ = (n-2)/2 δ^{D⟨P}δ_A^{Q⟩}`.
    pub m4_trace: bool,
    /// `δ_{[A}^E δ_{C]B} δ_E^{[I}δ^{K]J} M₃ = -½ M₄`.
    pub m3_double: bool,
    /// `δ_{[A}^E δ_{C]B} δ_E^{[I}δ^{K]J} M₄ = (n-2)/2 M₄`.
    pub m4_double: bool,
    /// Elementwise adjoint relation for M₃.
    pub m3_adjoint: bool,
    /// Elementwise adjoint relation for M₄.
    pub m4_adjoint: bool,
}

impl AppendixReport {
    pub fn all_hold(&self) -> bool {
        self.trace_contraction
            && self.double_antisym
            && self.m3_trace
            && self.m4_trace
            && self.m3_double
            && self.m4_double
            && self.m3_adjoint
            && self.m4_adjoint
    }
}

/// Verify the contraction identities behind the symmetrization in exact
/// integer arithmetic (every quantity is scaled by its common denominator).
pub fn appendix_identities(n: usize) -> AppendixReport {
    let d = n - 1;
    let nf = n as i64;

    // δ_A^{[E}δ^{G]F} δ_{[E}^P δ_{G]F} = (n-2)/2 δ_A^P, both sides × 4.
    let mut trace_contraction = true;
    'tc: for a in 0..d {
        for p in 0..d {
            let mut lhs = 0i64;
            for e in 0..d {
                for g in 0..d {
                    for f in 0..d {
                        lhs += (kdi(a, e) * kdi(g, f) - kdi(a, g) * kdi(e, f))
                            * (kdi(e, p) * kdi(g, f) - kdi(g, p) * kdi(e, f));
                    }
                }
            }
            if lhs != 2 * (nf - 2) * kdi(a, p) {
                trace_contraction = false;
                break 'tc;
            }
        }
    }

    // δ_{[A}^E δ_{C]B} δ_E^{[P}δ^{R]Q} expansion, both sides × 4.
    let mut double_antisym = true;
    'da: for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for p in 0..d {
                    for q in 0..d {
                        for r in 0..d {
                            let mut lhs = 0i64;
                            for e in 0..d {
                                lhs += (kdi(a, e) * kdi(c, b) - kdi(c, e) * kdi(a, b))
                                    * (kdi(e, p) * kdi(r, q) - kdi(e, r) * kdi(p, q));
                            }
                            let rhs = kdi(a, p) * kdi(b, c) * kdi(q, r)
                                - kdi(a, r) * kdi(b, c) * kdi(p, q)
                                - kdi(c, p) * kdi(a, b) * kdi(q, r)
                                + kdi(c, r) * kdi(a, b) * kdi(p, q);
                            if lhs != rhs {
                                double_antisym = false;
                                break 'da;
                            }
                        }
                    }
                }
            }
        }
    }

    // Trace contractions into M₃ and M₄, both sides × 8d.
    let mut m3_trace = true;
    let mut m4_trace = true;
    'mt: for dd in 0..d {
        for a in 0..d {
            for p in 0..d {
                for q in 0..d {
                    let mut lhs3 = 0i64;
                    let mut lhs4 = 0i64;
                    for i in 0..d {
                        for j in 0..d {
                            for k in 0..d {
                                let w = kdi(a, i) * kdi(k, j) - kdi(a, k) * kdi(i, j);
                                if w != 0 {
                                    lhs3 += w * m3_i(d, dd, i, j, k, p, q);
                                    lhs4 += w * m4_i(d, dd, i, j, k, p, q);
                                }
                            }
                        }
                    }
                    if lhs3 != -2 * stf_i(d, dd, a, p, q) {
                        m3_trace = false;
                        break 'mt;
                    }
                    if lhs4 != 2 * (nf - 2) * stf_i(d, dd, a, p, q) {
                        m4_trace = false;
                        break 'mt;
                    }
                }
            }
        }
    }

    // Double contractions, both sides × 16d. First collapse the inner
    // trace: Z_m[D][E][P][Q] = Σ_{IJK} (δ_E^{[I}δ^{K]J}) (M_m)^D_{IJK}^{PQ}.
    let zval = |mf: &dyn Fn(usize, usize, usize, usize, usize, usize, usize) -> i64,
                dd: usize,
                e: usize,
                p: usize,
                q: usize| {
        let mut acc = 0i64;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let w = kdi(e, i) * kdi(k, j) - kdi(e, k) * kdi(i, j);
                    if w != 0 {
                        acc += w * mf(d, dd, i, j, k, p, q);
                    }
                }
            }
        }
        acc
    };
    let mut m3_double = true;
    let mut m4_double = true;
    'md: for dd in 0..d {
        let mut z3 = vec![0i64; d * d * d];
        let mut z4 = vec![0i64; d * d * d];
        for e in 0..d {
            for p in 0..d {
                for q in 0..d {
                    z3[(e * d + p) * d + q] = zval(&m3_i, dd, e, p, q);
                    z4[(e * d + p) * d + q] = zval(&m4_i, dd, e, p, q);
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for p in 0..d {
                        for q in 0..d {
                            let lhs3 = kdi(c, b) * z3[(a * d + p) * d + q]
                                - kdi(a, b) * z3[(c * d + p) * d + q];
                            let lhs4 = kdi(c, b) * z4[(a * d + p) * d + q]
                                - kdi(a, b) * z4[(c * d + p) * d + q];
                            let m4v = m4_i(d, dd, a, b, c, p, q);
                            if lhs3 != -2 * m4v {
                                m3_double = false;
                                break 'md;
                            }
                            if lhs4 != 2 * (nf - 2) * m4v {
                                m4_double = false;
                                break 'md;
                            }
                        }
                    }
                }
            }
        }
    }

    // Adjoints: the adjoint matrices agree elementwise with the originals
    // read with swapped index groups (both already lie in the projected
    // subspaces, so this is exactly the adjoint property), both × 4d.
    let mut m3_adjoint = true;
    let mut m4_adjoint = true;
    'adj: for dd in 0..d {
        for a in 0..d {
            for b in 0..d {
                for p in 0..d {
                    for q in 0..d {
                        for r in 0..d {
                            if m3_adj_i(d, dd, a, b, p, q, r) != m3_i(d, dd, p, q, r, a, b) {
                                m3_adjoint = false;
                                break 'adj;
                            }
                            if m4_adj_i(d, dd, a, b, p, q, r) != m4_i(d, dd, p, q, r, a, b) {
                                m4_adjoint = false;
                                break 'adj;
                            }
                        }
                    }
                }
            }
        }
    }

    AppendixReport {
        n,
        trace_contraction,
        double_antisym,
        m3_trace,
        m4_trace,
        m3_double,
        m4_double,
        m3_adjoint,
        m4_adjoint,
    }
}
