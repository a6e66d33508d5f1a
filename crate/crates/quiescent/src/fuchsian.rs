//! Fuchsian (rescaled) formulation of the tetrad evolution system.
//!
//! The tetrad variables `W̃` are rescaled by Kasner-background powers of `t`
//! and the lapse so that the perturbation `W = (e_A^Ω, α, C_{ABC}, U_A, ℋ,
//! Σ_{AB})` stays bounded as `t → 0`:
//!
//! * `α = t^{ε₁} α̃`, `e_A^Ω = t^{ε₂} α̃ ẽ_A^Ω`,
//! * `C = t α̃ C̃`, `U = t α̃ Ũ`,
//! * `ℋ = t α̃ ℋ̃ − h₀`, `Σ_AB = t α̃ Σ̃_AB − S0_AB`,
//!
//! with `h₀ = r₀/(2(n−1))` and `S0_AB = r_AB/2 − h₀ δ_AB` the background
//! mean curvature and shear. This module provides the maps [`rescale`] /
//! [`unrescale`], the rescaled evolution right-hand sides [`rhs_base`] and
//! [`rhs_modified`] (the latter adds momentum-constraint multiples with
//! coefficients μ, γ), the rescaled constraint residuals
//! ([`rescaled_constraints`]), and the derivative hierarchy
//! ([`build_hierarchy`], [`hierarchy_rhs`]) used in verification mode.
//!
//! The right-hand sides are exact closed forms obtained by transforming the
//! tetrad system under the rescaling, using the lapse constraint to
//! eliminate `e_A(ln α)` in favor of `U_A`, and subtracting
//! `ℌ/((n−1)t)` from the ℋ equation so that no product of non-decaying
//! variables survives. Both choices are locked by cross-route tests against
//! the frame module.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{all_partials, stf_table, PointData};
use crate::grid::TorusGrid;
use crate::kasner::{background_values, check_gauge_exponents, KasnerData};
use crate::state::{Components, FrameState, RescaledState};
use crate::symmetrizer::{SymmetrizerParams, SymmetrizerSet};

/// Gauge and formulation parameters of the rescaled system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeParams {
    /// Lapse rescaling exponent ε₁.
    pub eps1: f64,
    /// Frame rescaling exponent ε₂.
    pub eps2: f64,
    /// Hierarchy weight ν.
    pub nu: f64,
    /// Hierarchy depth k.
    pub k_order: usize,
    /// Momentum-constraint coefficient added to the C equation.
    pub mu: f64,
    /// Momentum-constraint coefficient added to the U equation.
    pub gamma: f64,
    /// Symmetrizer parameters (a, b, c, d, p, q, s, u, h, l).
    pub sym: SymmetrizerParams,
    /// κ₀ = 1 + r₀/2.
    pub kappa0: f64,
    /// κ₁ = ε₁ + r₀/2.
    pub kappa1: f64,
    /// κ₂ = ε₂ + r₀/2.
    pub kappa2: f64,
}

impl GaugeParams {
    /// Build gauge parameters with explicit exponents, validating the
    /// exponent inequalities `ε₁ + r₀/2 > 0`, `0 < ε₂ < 1`,
    /// `ε₂ + r₀/2 − r_A/2 > 0` and `ε₂ + ν < 1`.
    pub fn with_exponents(
        kd: &KasnerData,
        eps1: f64,
        eps2: f64,
        nu: f64,
        k_order: usize,
    ) -> Result<Self> {
        check_gauge_exponents(kd, eps1, eps2)?;
        if !(nu > 0.0) {
            return Err(Error::ParameterRange {
                what: format!("ν must be positive, got {nu}"),
            });
        }
        if eps2 + nu >= 1.0 {
            return Err(Error::ParameterRange {
                what: format!("ε₂ + ν = {} must be below 1", eps2 + nu),
            });
        }
        Ok(GaugeParams {
            eps1,
            eps2,
            nu,
            k_order,
            mu: 0.0,
            gamma: 2.0,
            sym: SymmetrizerParams::fixed(kd.n),
            kappa0: 1.0 + 0.5 * kd.r0,
            kappa1: eps1 + 0.5 * kd.r0,
            kappa2: eps2 + 0.5 * kd.r0,
        })
    }

    /// Default gauge: exponents with uniform slack inside the admissible
    /// region, ν = (1 − ε₂)/2, hierarchy depth 1.
    pub fn defaults(kd: &KasnerData) -> Result<Self> {
        let (eps1, eps2, nu) = default_exponents(kd);
        Self::with_exponents(kd, eps1, eps2, nu, 1)
    }
}

/// Default exponents (ε₁, ε₂, ν) for a sub-critical background: each sits
/// 0.1 inside its constraint region, ε₂ capped at 0.9, ν = (1 − ε₂)/2.
pub fn default_exponents(kd: &KasnerData) -> (f64, f64, f64) {
    let eps1 = (0.0f64).max(-0.5 * kd.r0) + 0.1;
    let need = kd
        .r
        .iter()
        .map(|&ra| (0.0f64).max(0.5 * (ra - kd.r0)))
        .fold(0.0f64, f64::max);
    let eps2 = (need + 0.1).min(0.9);
    let nu = 0.5 * (1.0 - eps2);
    (eps1, eps2, nu)
}

/// Map a tetrad state to rescaled variables.
pub fn rescale(st: &FrameState, gp: &GaugeParams, kd: &KasnerData) -> Result<RescaledState> {
    let d = st.f.d;
    if kd.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: kd.dim(),
            got: d,
        });
    }
    let t = st.t;
    if t <= 0.0 {
        return Err(Error::NonPositiveTime(t));
    }
    let h0 = kd.h0();
    let s0 = kd.s0_matrix();
    let te1 = t.powf(gp.eps1);
    let te2 = t.powf(gp.eps2);
    let np = st.f.npoints();
    let mut f = Components::zeros(d, np);
    for p in 0..np {
        let at = st.f.alpha[p];
        let ta = t * at;
        f.alpha[p] = te1 * at;
        for i in 0..d * d {
            f.e[i][p] = te2 * at * st.f.e[i][p];
            f.sigma[i][p] = ta * st.f.sigma[i][p] - s0[i];
        }
        for i in 0..d * d * d {
            f.c[i][p] = ta * st.f.c[i][p];
        }
        for i in 0..d {
            f.u[i][p] = ta * st.f.u[i][p];
        }
        f.h[p] = ta * st.f.h[p] - h0;
    }
    Ok(RescaledState { t, f })
}

/// Map a rescaled state back to tetrad variables; requires `α > 0`.
pub fn unrescale(w: &RescaledState, gp: &GaugeParams, kd: &KasnerData) -> Result<FrameState> {
    let d = w.f.d;
    if kd.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: kd.dim(),
            got: d,
        });
    }
    let t = w.t;
    if t <= 0.0 {
        return Err(Error::NonPositiveTime(t));
    }
    w.check_positivity()?;
    let h0 = kd.h0();
    let s0 = kd.s0_matrix();
    let te1 = t.powf(-gp.eps1);
    let te2 = t.powf(-gp.eps2);
    let np = w.f.npoints();
    let mut f = Components::zeros(d, np);
    for p in 0..np {
        let at = te1 * w.f.alpha[p];
        let ta = t * at;
        f.alpha[p] = at;
        for i in 0..d * d {
            f.e[i][p] = te2 * w.f.e[i][p] / at;
            f.sigma[i][p] = (w.f.sigma[i][p] + s0[i]) / ta;
        }
        for i in 0..d * d * d {
            f.c[i][p] = w.f.c[i][p] / ta;
        }
        for i in 0..d {
            f.u[i][p] = w.f.u[i][p] / ta;
        }
        f.h[p] = (w.f.h[p] + h0) / ta;
    }
    Ok(FrameState { t, f })
}

/// Spatially constant rescaled Kasner background on `np` grid points:
/// `α = t^{ε₁ + r₀/2}`, `e_A^Ω = t^{ε₂ + r₀/2 − r_A/2} δ_A^Ω`, all
/// perturbation slots zero.
pub fn background_rescaled(
    kd: &KasnerData,
    gp: &GaugeParams,
    t: f64,
    np: usize,
) -> Result<RescaledState> {
    let d = kd.dim();
    let (alpha, e_diag) = background_values(kd, gp.eps1, gp.eps2, t)?;
    let mut f = Components::zeros(d, np);
    f.alpha = vec![alpha; np];
    for a in 0..d {
        f.e[a * d + a] = vec![e_diag[a]; np];
    }
    Ok(RescaledState { t, f })
}

/// Rescaled constraint residuals. Each equals the corresponding tetrad
/// residual times a `t`-power and `α̃²`: 𝔄f = t^{1+ε₂}α̃²𝔄̃,
/// 𝔇f = t^{1+ε₁}α̃²𝔇̃, and 𝔅f, ℭf, 𝔐f, ℌf carry t²α̃².
#[derive(Debug, Clone)]
pub struct RescaledConstraints {
    pub d: usize,
    /// Frame integrability 𝔄f_{AB}^Ω, index ((a·d+b)·d+om).
    pub frame: Vec<Vec<f64>>,
    /// Lapse-gradient curl 𝔅f_{AB}, index a·d+b.
    pub curl: Vec<Vec<f64>>,
    /// Jacobi ℭf_{ABC}^D, index (((a·d+b)·d+c)·d+dd).
    pub jacobi: Vec<Vec<f64>>,
    /// Lapse gradient 𝔇f_A.
    pub lapse: Vec<Vec<f64>>,
    /// Momentum 𝔐f_A.
    pub momentum: Vec<Vec<f64>>,
    /// Hamiltonian ℌf.
    pub hamiltonian: Vec<f64>,
}

impl RescaledConstraints {
    pub fn all_fields(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for f in self
            .frame
            .iter()
            .chain(self.curl.iter())
            .chain(self.jacobi.iter())
            .chain(self.lapse.iter())
            .chain(self.momentum.iter())
        {
            out.push(f);
        }
        out.push(&self.hamiltonian);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.all_fields()
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Momentum residual 𝔐f_A at a gathered point.
pub(crate) fn momentum_at(pt: &PointData, kd: &KasnerData, t1e: f64) -> Vec<f64> {
    let d = pt.d;
    let nf = (d + 1) as f64;
    let r0 = kd.r0;
    let mut out = vec![0.0; d];
    for a in 0..d {
        let mut v = -(nf - 2.0) * t1e * pt.dh(a)
            + (0.5 * r0 + 1.0 - 0.5 * kd.r[a]) * pt.u(a)
            + (nf - 2.0) * pt.h() * pt.u(a)
            - 0.5 * kd.r[a] * pt.tr23(a);
        for b in 0..d {
            v += t1e * pt.dsigma(b, a, b);
            v += 0.5 * kd.r[b] * pt.c(a, b, b);
            v -= pt.sigma(a, b) * pt.u(b);
            v -= pt.tr23(b) * pt.sigma(a, b);
            for c in 0..d {
                v += pt.c(a, b, c) * pt.sigma(b, c);
            }
        }
        out[a] = v;
    }
    out
}

/// Hamiltonian residual ℌf at a gathered point.
pub(crate) fn hamiltonian_at(pt: &PointData, kd: &KasnerData, t1e: f64) -> f64 {
    let d = pt.d;
    let nf = (d + 1) as f64;
    let hh = pt.h();
    let mut v = (nf - 1.0) * (nf - 2.0) * hh * hh
        + (nf - 2.0) * kd.r0 * hh
        + 2.0 * (nf - 1.0) * hh;
    for a in 0..d {
        v += 2.0 * t1e * pt.dtr23(a, a);
        v -= kd.r[a] * pt.sigma(a, a);
        v -= 2.0 * pt.u(a) * pt.tr23(a);
        v -= pt.tr23(a) * pt.tr23(a);
        for b in 0..d {
            v -= pt.sigma(a, b) * pt.sigma(a, b);
            for c in 0..d {
                v -= 0.25 * pt.c(a, b, c) * (pt.c(a, b, c) + pt.c(b, a, c) + pt.c(a, c, b));
            }
        }
    }
    v
}

/// Evaluate the rescaled constraints on a state.
pub fn rescaled_constraints(
    grid: &TorusGrid,
    w: &RescaledState,
    _gp: &GaugeParams,
    kd: &KasnerData,
) -> Result<RescaledConstraints> {
    let f = &w.f;
    let d = f.d;
    if kd.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: kd.dim(),
            got: d,
        });
    }
    let t = w.t;
    if t <= 0.0 {
        return Err(Error::NonPositiveTime(t));
    }
    let t1e = t.powf(1.0 - _gp.eps2);
    let np = f.npoints();
    let partials = all_partials(grid, f)?;

    let mut out = RescaledConstraints {
        d,
        frame: vec![vec![0.0; np]; d * d * d],
        curl: vec![vec![0.0; np]; d * d],
        jacobi: vec![vec![0.0; np]; d * d * d * d],
        lapse: vec![vec![0.0; np]; d],
        momentum: vec![vec![0.0; np]; d],
        hamiltonian: vec![0.0; np],
    };

    for p in 0..np {
        let pt = PointData::gather(f, &partials, p);

        // 𝔄f_{AB}^Ω = 2t^{1-ε₂} e_[A(e_B]^Ω) - 2U_[A e_B]^Ω - C_A{}^C{}_B e_C^Ω.
        for a in 0..d {
            for b in 0..d {
                for om in 0..d {
                    let mut v = t1e * (pt.de(a, b, om) - pt.de(b, a, om));
                    v -= pt.u(a) * pt.e(b, om) - pt.u(b) * pt.e(a, om);
                    for c in 0..d {
                        v -= pt.c(a, c, b) * pt.e(c, om);
                    }
                    out.frame[(a * d + b) * d + om][p] = v;
                }
            }
        }

        // 𝔅f_{AB} = 2t^{1-ε₂} e_[A(U_B]) - 2U_[A U_B] - C_A{}^C{}_B U_C
        // (the U∧U term vanishes identically).
        for a in 0..d {
            for b in 0..d {
                let mut v = t1e * (pt.du(a, b) - pt.du(b, a));
                for c in 0..d {
                    v -= pt.c(a, c, b) * pt.u(c);
                }
                out.curl[a * d + b][p] = v;
            }
        }

        // ℭf_{ABC}^D = t^{1-ε₂} cyclic(e_C(C_A{}^D{}_B)) - cyclic(U_C C_A{}^D{}_B)
        //              + cyclic(C_A{}^E{}_B C_C{}^D{}_E).
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for dd in 0..d {
                        let mut v = t1e
                            * (pt.dc(c, a, dd, b) + pt.dc(a, b, dd, c) + pt.dc(b, c, dd, a));
                        v -= pt.u(c) * pt.c(a, dd, b)
                            + pt.u(a) * pt.c(b, dd, c)
                            + pt.u(b) * pt.c(c, dd, a);
                        for e in 0..d {
                            v += pt.c(a, e, b) * pt.c(c, dd, e)
                                + pt.c(b, e, c) * pt.c(a, dd, e)
                                + pt.c(c, e, a) * pt.c(b, dd, e);
                        }
                        out.jacobi[((a * d + b) * d + c) * d + dd][p] = v;
                    }
                }
            }
        }

        // 𝔇f_A = α U_A - t^{1-ε₂} e_A(α).
        for a in 0..d {
            out.lapse[a][p] = pt.alpha() * pt.u(a) - t1e * pt.dalpha(a);
        }

        let mom = momentum_at(&pt, kd, t1e);
        for a in 0..d {
            out.momentum[a][p] = mom[a];
        }
        out.hamiltonian[p] = hamiltonian_at(&pt, kd, t1e);
    }
    Ok(out)
}

/// Shared right-hand side with explicit constraint-addition coefficients.
fn rhs_impl(
    grid: &TorusGrid,
    w: &RescaledState,
    gp: &GaugeParams,
    kd: &KasnerData,
    mu: f64,
    gamma: f64,
) -> Result<Components> {
    let f = &w.f;
    let d = f.d;
    if kd.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: kd.dim(),
            got: d,
        });
    }
    let n = d + 1;
    let nf = n as f64;
    let t = w.t;
    if t <= 0.0 {
        return Err(Error::NonPositiveTime(t));
    }
    let r0 = kd.r0;
    let h0 = kd.h0();
    let s0 = kd.s0_matrix();
    let te = t.powf(-gp.eps2);
    let t1e = t * te;
    let np = f.npoints();
    let partials = all_partials(grid, f)?;
    let mut rhs = Components::zeros(d, np);

    for p in 0..np {
        let pt = PointData::gather(f, &partials, p);
        let hh = pt.h();
        let th = hh + h0;
        let mom = momentum_at(&pt, kd, t1e);
        let ham = hamiltonian_at(&pt, kd, t1e);

        // Frame: ∂_t e_A^Ω = (1/t)[(ε₂ + r₀/2 - r_A/2 + (n-2)ℋ) δ_A^B
        //                            - Σ_A^B] e_B^Ω.
        for a in 0..d {
            for om in 0..d {
                let mut v = (gp.eps2 + 0.5 * r0 - 0.5 * kd.r[a] + (nf - 2.0) * hh)
                    * pt.e(a, om);
                for b in 0..d {
                    v -= pt.sigma(a, b) * pt.e(b, om);
                }
                rhs.e[a * d + om][p] = v / t;
            }
        }

        // Lapse: ∂_t α = (1/t)(ε₁ + r₀/2 + (n-1)ℋ) α.
        rhs.alpha[p] = (gp.eps1 + 0.5 * r0 + (nf - 1.0) * hh) * pt.alpha() / t;

        // Commutators.
        for a in 0..d {
            for m in 0..d {
                for b in 0..d {
                    let kd_bm = if b == m { 1.0 } else { 0.0 };
                    let kd_am = if a == m { 1.0 } else { 0.0 };
                    // -2t^{-ε₂} e_[A(ℋ) δ_B]^C - 2t^{-ε₂} e_[A(Σ_B]^C)
                    let mut v = -te
                        * (pt.dh(a) * kd_bm - pt.dh(b) * kd_am + pt.dsigma(a, b, m)
                            - pt.dsigma(b, a, m));
                    // (1/t)(1 + r₀/2 - (r_A + r_C - r_B)/2) C
                    v += (1.0 + 0.5 * r0 - 0.5 * (kd.r[a] + kd.r[b] - kd.r[m]))
                        * pt.c(a, m, b)
                        / t;
                    // (1/t)[(n-2)ℋ C + Σ∧C couplings]
                    let mut q = (nf - 2.0) * hh * pt.c(a, m, b);
                    for dd in 0..d {
                        q += pt.sigma(a, dd) * pt.c(b, m, dd)
                            - pt.sigma(b, dd) * pt.c(a, m, dd);
                        q += pt.c(a, dd, b) * pt.sigma(dd, m);
                    }
                    v += q / t;
                    // (μ/t) 𝔐_[A δ_C]B
                    v += 0.5 * mu * (mom[a] * kd_bm - mom[b] * kd_am) / t;
                    rhs.c[(a * d + m) * d + b][p] = v;
                }
            }
        }

        // Lapse gradient: ∂_t U_A = (n-1)t^{-ε₂} e_A(ℋ)
        //   + (1/t)(1 + r₀/2 - r_A/2 + (n-2)ℋ) U_A - (1/t) Σ_A^B U_B
        //   + (γ/t) 𝔐_A.
        for a in 0..d {
            let mut v = (nf - 1.0) * te * pt.dh(a)
                + (1.0 + 0.5 * r0 - 0.5 * kd.r[a] + (nf - 2.0) * hh) * pt.u(a) / t
                + gamma * mom[a] / t;
            for b in 0..d {
                v -= pt.sigma(a, b) * pt.u(b) / t;
            }
            rhs.u[a][p] = v;
        }

        // Mean curvature: ∂_t ℋ = (1/t)[2(ℋ+h₀) + (n-2)(ℋ+h₀)²]
        //   + t^{-ε₂} e_A(U^A)/(n-1)
        //   - (1/((n-1)t))[U·tr23 + |Σ+S0|²] - ℌf/((n-1)t).
        let mut v = (2.0 * th + (nf - 2.0) * th * th) / t;
        let mut ss = 0.0;
        for a in 0..d {
            v += te * pt.du(a, a) / (nf - 1.0);
            v -= pt.u(a) * pt.tr23(a) / ((nf - 1.0) * t);
            for b in 0..d {
                let s = pt.sigma(a, b) + s0[a * d + b];
                ss += s * s;
            }
        }
        v -= ss / ((nf - 1.0) * t);
        v -= ham / ((nf - 1.0) * t);
        rhs.h[p] = v;

        // Shear: every surviving term carries the ⟨AB⟩ projection; the
        // background-linear terms cancel exactly under the rescaling.
        let mut proj = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let mut wv = te * pt.du(a, b) - te * pt.dtr23(a, b);
                for c in 0..d {
                    wv -= te * pt.dc(c, c, a, b);
                    wv += pt.tr23(c) * pt.c(c, a, b) / t;
                }
                wv += pt.u(a) * pt.tr23(b) / t;
                let mut quint = 0.0;
                for c in 0..d {
                    for dd in 0..d {
                        quint += 2.0 * pt.c(c, dd, a) * pt.c(b, c, dd);
                        quint += 2.0 * pt.c(c, dd, a) * pt.c(b, dd, c);
                        quint -= pt.c(c, a, dd) * pt.c(b, c, dd);
                        quint += pt.c(c, dd, a) * pt.c(c, b, dd);
                        quint -= pt.c(c, a, dd) * pt.c(dd, b, c);
                    }
                }
                wv -= 0.25 * quint / t;
                proj[a * d + b] = wv;
            }
        }
        let proj = stf_table(d, &proj);
        for i in 0..d * d {
            rhs.sigma[i][p] = proj[i];
        }
    }
    Ok(rhs)
}

/// Right-hand side of the rescaled evolution system without momentum
/// additions (the ℋ equation always carries the −ℌf/((n−1)t) term).
pub fn rhs_base(
    grid: &TorusGrid,
    w: &RescaledState,
    gp: &GaugeParams,
    kd: &KasnerData,
) -> Result<Components> {
    rhs_impl(grid, w, gp, kd, 0.0, 0.0)
}

/// Right-hand side with the momentum residual fed into the C and U
/// equations: `rhs_base + (μ/t) 𝔐_[A δ_C]B` in the C slot and
/// `(γ/t) 𝔐_A` in the U slot.
pub fn rhs_modified(
    grid: &TorusGrid,
    w: &RescaledState,
    gp: &GaugeParams,
    kd: &KasnerData,
) -> Result<Components> {
    rhs_impl(grid, w, gp, kd, gp.mu, gp.gamma)
}

/// One level of the derivative hierarchy: `W_b = t^{|b|ν} ∂^b W`, with the
/// top level additionally transformed by V⁻¹.
#[derive(Debug, Clone)]
pub struct HierarchyLevel {
    /// Multi-index over the spatial axes.
    pub bidx: Vec<usize>,
    pub data: Components,
}

/// The derivative hierarchy up to depth `k_order`.
#[derive(Debug, Clone)]
pub struct HierarchyState {
    pub t: f64,
    pub k_order: usize,
    pub nu: f64,
    pub levels: Vec<HierarchyLevel>,
}

/// All multi-indices over `d` axes with total degree ≤ k, graded by degree,
/// lexicographic within a degree.
pub fn multi_indices(d: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, deg: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == d - 1 {
            prefix.push(deg);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=deg).rev() {
            prefix.push(first);
            rec(d, deg - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for deg in 0..=k {
        rec(d, deg, &mut Vec::new(), &mut out);
    }
    out
}

/// Apply a constant N×N matrix pointwise to a component set.
fn apply_matrix(m: &nalgebra::DMatrix<f64>, f: &Components) -> Components {
    let d = f.d;
    let np = f.npoints();
    let mut out = Components::zeros(d, np);
    for p in 0..np {
        let v = DVector::from_vec(f.pack_point(p));
        let r = m * v;
        out.unpack_point(p, r.as_slice());
    }
    out
}

/// Rescaled spatial derivative `t^{|b|ν} ∂^b` of every component field.
fn derived_components(
    grid: &TorusGrid,
    f: &Components,
    b: &[usize],
    scale: f64,
) -> Result<Components> {
    let d = f.d;
    let np = f.npoints();
    let mut out = Components::zeros(d, np);
    let src = f.all_fields();
    let mut dst = out.all_fields_mut();
    for (df, sf) in dst.iter_mut().zip(src) {
        let mut g = grid.multi_derivative(sf, b)?;
        for v in g.iter_mut() {
            *v *= scale;
        }
        **df = g;
    }
    Ok(out)
}

/// Build the full hierarchy from a rescaled state. The top level (|b| =
/// k_order) is transformed by V⁻¹ from the symmetrizer set.
pub fn build_hierarchy(
    grid: &TorusGrid,
    w: &RescaledState,
    gp: &GaugeParams,
    sym: &SymmetrizerSet,
) -> Result<HierarchyState> {
    let d = w.f.d;
    let t = w.t;
    let k = gp.k_order;
    let mut levels = Vec::new();
    for b in multi_indices(d, k) {
        let order: usize = b.iter().sum();
        let scale = t.powf(order as f64 * gp.nu);
        let mut data = derived_components(grid, &w.f, &b, scale)?;
        if order == k && k > 0 {
            data = apply_matrix(&sym.v_inv, &data);
        }
        levels.push(HierarchyLevel { bidx: b, data });
    }
    Ok(HierarchyState {
        t,
        k_order: k,
        nu: gp.nu,
        levels,
    })
}

/// Time derivative of every hierarchy level. Lower levels evolve by the
/// Leibniz transport `∂_t W_b = (|b|ν/t) W_b + t^{|b|ν} ∂^b(rhs_modified)`;
/// the top level carries the same structure conjugated by V⁻¹.
pub fn hierarchy_rhs(
    grid: &TorusGrid,
    hs: &HierarchyState,
    gp: &GaugeParams,
    kd: &KasnerData,
    sym: &SymmetrizerSet,
) -> Result<HierarchyState> {
    let level0 = hs
        .levels
        .iter()
        .find(|l| l.bidx.iter().all(|&x| x == 0))
        .ok_or_else(|| Error::Grid("hierarchy is missing level 0".into()))?;
    let w = RescaledState {
        t: hs.t,
        f: level0.data.clone(),
    };
    let t = hs.t;
    let frhs = rhs_modified(grid, &w, gp, kd)?;
    let mut levels = Vec::with_capacity(hs.levels.len());
    for level in &hs.levels {
        let order: usize = level.bidx.iter().sum();
        let scale = t.powf(order as f64 * gp.nu);
        let mut data = derived_components(grid, &frhs, &level.bidx, scale)?;
        if order == hs.k_order && hs.k_order > 0 {
            data = apply_matrix(&sym.v_inv, &data);
        }
        data.add_scaled(&level.data, order as f64 * gp.nu / t);
        levels.push(HierarchyLevel {
            bidx: level.bidx.clone(),
            data,
        });
    }
    Ok(HierarchyState {
        t,
        k_order: hs.k_order,
        nu: hs.nu,
        levels,
    })
}
