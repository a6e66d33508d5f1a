//! Orthonormal-frame (tetrad) formulation of the Einstein-scalar-field
//! equations in a constant-mean-curvature-adapted gauge.
//!
//! The evolved variables are `W̃ = (ẽ_A^Ω, α̃, C̃_{ABC}, Ũ_A, ℋ̃, Σ̃_{AB})`:
//! spatial frame coefficients, lapse, frame commutator coefficients, the
//! logarithmic spatial lapse gradient, the rescaled mean curvature, and the
//! trace-free conformal shear. This module provides
//!
//! * the right-hand side of the evolution system ([`frame_rhs`]);
//! * the full constraint set — frame integrability 𝔄, lapse-gradient curl 𝔅,
//!   commutator Jacobi ℭ, lapse gradient 𝔇, momentum 𝔐, and Hamiltonian ℌ
//!   ([`frame_constraints`]);
//! * the frame components of the Riemann tensor obtained from the connection
//!   coefficients ([`frame_curvature`]), the electric Weyl block derived from
//!   them ([`weyl_electric`]), and the Ricci blocks computed independently
//!   from the matter and gauge sources ([`ricci_from_matter`],
//!   [`ricci_from_curvature`]) for dual-route consistency checks.
//!
//! Index conventions: spatial frame indices run over 0..d with d = n−1 and
//! are raised/lowered with δ, so storage order `c[(A·d+M)·d+B]` holds
//! C̃_A{}^M{}_B ≡ C̃_{AMB}; frame index 0 is the timelike leg ẽ₀ = α̃⁻¹∂_t.

use crate::error::Result;
use crate::grid::TorusGrid;
use crate::state::{Components, FrameState};

/// Frame derivatives `ẽ_A(f) = Σ_Ω ẽ_A^Ω ∂_Ω f` for all A, given the frame
/// coefficient fields `e[a·d+om]`.
pub fn frame_deriv(
    grid: &TorusGrid,
    e: &[Vec<f64>],
    d: usize,
    field: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let np = field.len();
    let mut partials = Vec::with_capacity(d);
    for om in 0..d {
        partials.push(grid.spatial_derivative(field, om)?);
    }
    let mut out = vec![vec![0.0; np]; d];
    for a in 0..d {
        for om in 0..d {
            let ef = &e[a * d + om];
            let pf = &partials[om];
            let of = &mut out[a];
            for p in 0..np {
                of[p] += ef[p] * pf[p];
            }
        }
    }
    Ok(out)
}

/// Spatial partial derivatives of every component field, indexed
/// `[axis][component]` in the composite order of [`Components::all_fields`].
pub(crate) fn all_partials(grid: &TorusGrid, f: &Components) -> Result<Vec<Vec<Vec<f64>>>> {
    use rayon::prelude::*;
    let fields = f.all_fields();
    let d = f.d;
    let tasks: Vec<(usize, usize)> = (0..d)
        .flat_map(|om| (0..fields.len()).map(move |i| (om, i)))
        .collect();
    let flat: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(om, i)| grid.spatial_derivative(fields[i], om))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(d);
    let mut it = flat.into_iter();
    for _ in 0..d {
        out.push(it.by_ref().take(fields.len()).collect());
    }
    Ok(out)
}

/// Composite-order offsets within the per-point state vector.
pub(crate) struct Offsets {
    pub(crate) e: usize,
    pub(crate) alpha: usize,
    pub(crate) c: usize,
    pub(crate) u: usize,
    pub(crate) h: usize,
    pub(crate) sigma: usize,
}

pub(crate) fn offsets(d: usize) -> Offsets {
    Offsets {
        e: 0,
        alpha: d * d,
        c: d * d + 1,
        u: d * d + 1 + d * d * d,
        h: d * d + 1 + d * d * d + d,
        sigma: d * d + 1 + d * d * d + d + 1,
    }
}

/// Per-point scratch holding the state and its frame derivatives.
pub(crate) struct PointData {
    pub(crate) d: usize,
    /// State vector in composite order.
    pub(crate) w: Vec<f64>,
    /// Frame derivatives `dw[a][comp] = ẽ_a(W_comp)`.
    pub(crate) dw: Vec<Vec<f64>>,
    pub(crate) off: Offsets,
}

impl PointData {
    pub(crate) fn gather(f: &Components, partials: &[Vec<Vec<f64>>], p: usize) -> Self {
        let d = f.d;
        let w = f.pack_point(p);
        let ncomp = w.len();
        let off = offsets(d);
        let mut dw = vec![vec![0.0; ncomp]; d];
        for a in 0..d {
            for om in 0..d {
                let ev = w[off.e + a * d + om];
                for comp in 0..ncomp {
                    dw[a][comp] += ev * partials[om][comp][p];
                }
            }
        }
        PointData { d, w, dw, off }
    }

    #[inline]
    pub(crate) fn e(&self, a: usize, om: usize) -> f64 {
        self.w[self.off.e + a * self.d + om]
    }
    #[inline]
    pub(crate) fn alpha(&self) -> f64 {
        self.w[self.off.alpha]
    }
    #[inline]
    pub(crate) fn c(&self, a: usize, m: usize, b: usize) -> f64 {
        self.w[self.off.c + (a * self.d + m) * self.d + b]
    }
    #[inline]
    pub(crate) fn u(&self, a: usize) -> f64 {
        self.w[self.off.u + a]
    }
    #[inline]
    pub(crate) fn h(&self) -> f64 {
        self.w[self.off.h]
    }
    #[inline]
    pub(crate) fn sigma(&self, a: usize, b: usize) -> f64 {
        self.w[self.off.sigma + a * self.d + b]
    }
    #[inline]
    pub(crate) fn de(&self, dir: usize, a: usize, om: usize) -> f64 {
        self.dw[dir][self.off.e + a * self.d + om]
    }
    #[inline]
    pub(crate) fn dalpha(&self, dir: usize) -> f64 {
        self.dw[dir][self.off.alpha]
    }
    #[inline]
    pub(crate) fn dc(&self, dir: usize, a: usize, m: usize, b: usize) -> f64 {
        self.dw[dir][self.off.c + (a * self.d + m) * self.d + b]
    }
    #[inline]
    pub(crate) fn du(&self, dir: usize, a: usize) -> f64 {
        self.dw[dir][self.off.u + a]
    }
    #[inline]
    pub(crate) fn dh(&self, dir: usize) -> f64 {
        self.dw[dir][self.off.h]
    }
    #[inline]
    pub(crate) fn dsigma(&self, dir: usize, a: usize, b: usize) -> f64 {
        self.dw[dir][self.off.sigma + a * self.d + b]
    }
    /// tr23[a] = Σ_b C_a{}^b{}_b.
    pub(crate) fn tr23(&self, a: usize) -> f64 {
        (0..self.d).map(|b| self.c(a, b, b)).sum()
    }
    /// ẽ_dir(tr23[a]).
    pub(crate) fn dtr23(&self, dir: usize, a: usize) -> f64 {
        (0..self.d).map(|b| self.dc(dir, a, b, b)).sum()
    }
}

/// Symmetric trace-free part over the free pair of a d×d value table.
pub(crate) fn stf_table(d: usize, m: &[f64]) -> Vec<f64> {
    let tr: f64 = (0..d).map(|a| m[a * d + a]).sum();
    let mut out = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            out[a * d + b] = 0.5 * (m[a * d + b] + m[b * d + a]);
            if a == b {
                out[a * d + b] -= tr / d as f64;
            }
        }
    }
    out
}

/// Right-hand side of the tetrad evolution system at time `t`.
pub fn frame_rhs(grid: &TorusGrid, st: &FrameState) -> Result<Components> {
    let f = &st.f;
    let d = f.d;
    let n = d + 1;
    let nf = n as f64;
    let t = st.t;
    let np = f.npoints();
    let partials = all_partials(grid, f)?;
    let mut rhs = Components::zeros(d, np);

    for p in 0..np {
        let pt = PointData::gather(f, &partials, p);
        let al = pt.alpha();
        let hh = pt.h();

        // Frame coefficients: ∂_t ẽ_A^Ω = -α̃ (ℋ̃ δ_A^B + Σ̃_A^B) ẽ_B^Ω.
        for a in 0..d {
            for om in 0..d {
                let mut v = 0.0;
                for b in 0..d {
                    let coef = if a == b { hh } else { 0.0 } + pt.sigma(a, b);
                    v -= al * coef * pt.e(b, om);
                }
                rhs.e[a * d + om][p] = v;
            }
        }

        // Lapse: ∂_t α̃ = (n-1) ℋ̃ α̃².
        rhs.alpha[p] = (nf - 1.0) * hh * al * al;

        // Commutators.
        for a in 0..d {
            for m in 0..d {
                for b in 0..d {
                    let kd_bm = if b == m { 1.0 } else { 0.0 };
                    let kd_am = if a == m { 1.0 } else { 0.0 };
                    let mut v = 0.0;
                    // -2 α̃ ẽ_[A(ℋ̃) δ_B]^C
                    v -= al * (pt.dh(a) * kd_bm - pt.dh(b) * kd_am);
                    // -2 α̃ ẽ_[A(Σ̃_B]^C)
                    v -= al * (pt.dsigma(a, b, m) - pt.dsigma(b, a, m));
                    // -2 α̃ ℋ̃ Ũ_[A δ_B]^C
                    v -= al * hh * (pt.u(a) * kd_bm - pt.u(b) * kd_am);
                    // -2 α̃ Ũ_[A Σ̃_B]^C
                    v -= al * (pt.u(a) * pt.sigma(b, m) - pt.u(b) * pt.sigma(a, m));
                    // -α̃ ℋ̃ C̃_A{}^C{}_B
                    v -= al * hh * pt.c(a, m, b);
                    // +2 α̃ Σ̃_[A{}^D C̃_B]{}^C{}_D
                    for dd in 0..d {
                        v += al
                            * (pt.sigma(a, dd) * pt.c(b, m, dd)
                                - pt.sigma(b, dd) * pt.c(a, m, dd));
                    }
                    // +α̃ C̃_A{}^D{}_B Σ̃_D{}^C
                    for dd in 0..d {
                        v += al * pt.c(a, dd, b) * pt.sigma(dd, m);
                    }
                    rhs.c[(a * d + m) * d + b][p] = v;
                }
            }
        }

        // Mean curvature.
        let mut v = -al * hh * hh + hh / t;
        for a in 0..d {
            v += al / (nf - 1.0) * pt.du(a, a);
            v += al / (nf - 1.0) * pt.u(a) * (pt.u(a) - pt.tr23(a));
        }
        let mut ss = 0.0;
        for a in 0..d {
            for b in 0..d {
                ss += pt.sigma(a, b) * pt.sigma(a, b);
            }
        }
        v -= al / (nf - 1.0) * ss;
        rhs.h[p] = v;

        // Shear: assemble the un-projected table, then take ⟨AB⟩ of the
        // terms that carry the projection; the remaining terms are already
        // symmetric trace-free.
        let mut proj = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let mut w = 0.0;
                // α̃ ẽ_⟨A(Ũ_B⟩) + α̃ Ũ_⟨A Ũ_B⟩
                w += al * pt.du(a, b);
                w += al * pt.u(a) * pt.u(b);
                // -α̃ ẽ^C(C̃_{C⟨AB⟩}) - α̃ Ũ^C C̃_{C⟨AB⟩} + α̃ C̃_{CD}{}^D C̃^C{}_{⟨AB⟩}
                for c in 0..d {
                    w -= al * pt.dc(c, c, a, b);
                    w -= al * pt.u(c) * pt.c(c, a, b);
                    w += al * pt.tr23(c) * pt.c(c, a, b);
                }
                // -α̃ ẽ_⟨A(C̃_{B⟩C}{}^C)
                w -= al * pt.dtr23(a, b);
                // -(α̃/4) quintet of commutator quadratics
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
                w -= 0.25 * al * quint;
                proj[a * d + b] = w;
            }
        }
        let proj = stf_table(d, &proj);
        for a in 0..d {
            for b in 0..d {
                rhs.sigma[a * d + b][p] = proj[a * d + b]
                    - (nf - 1.0) * al * hh * pt.sigma(a, b)
                    - pt.sigma(a, b) / t;
            }
        }

        // Lapse gradient: ∂_t Ũ_A = (n-1) α̃ ẽ_A(ℋ̃) + (n-2) α̃ ℋ̃ Ũ_A
        //                          - α̃ Σ̃_A^B Ũ_B.
        for a in 0..d {
            let mut w = (nf - 1.0) * al * pt.dh(a) + (nf - 2.0) * al * hh * pt.u(a);
            for b in 0..d {
                w -= al * pt.sigma(a, b) * pt.u(b);
            }
            rhs.u[a][p] = w;
        }
    }
    Ok(rhs)
}

/// Full constraint set of the tetrad system evaluated on a state.
#[derive(Debug, Clone)]
pub struct FrameConstraints {
    pub d: usize,
    /// Frame integrability 𝔄_{AB}^Ω, index ((a·d+b)·d+om); antisymmetric in
    /// (a, b).
    pub frame: Vec<Vec<f64>>,
    /// Lapse-gradient curl 𝔅_{AB}, index a·d+b.
    pub curl: Vec<Vec<f64>>,
    /// Jacobi ℭ_{ABC}^D, index (((a·d+b)·d+c)·d+dd).
    pub jacobi: Vec<Vec<f64>>,
    /// Lapse gradient 𝔇_A.
    pub lapse: Vec<Vec<f64>>,
    /// Momentum 𝔐_A.
    pub momentum: Vec<Vec<f64>>,
    /// Hamiltonian ℌ.
    pub hamiltonian: Vec<f64>,
}

impl FrameConstraints {
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

/// Evaluate the tetrad constraints at time `t`.
pub fn frame_constraints(grid: &TorusGrid, st: &FrameState) -> Result<FrameConstraints> {
    let f = &st.f;
    let d = f.d;
    let n = d + 1;
    let nf = n as f64;
    let t = st.t;
    let np = f.npoints();
    let partials = all_partials(grid, f)?;

    let mut out = FrameConstraints {
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
        let al = pt.alpha();

        // 𝔄_{AB}^Ω = 2 ẽ_[A(ẽ_B]^Ω) - C̃_A{}^C{}_B ẽ_C^Ω.
        for a in 0..d {
            for b in 0..d {
                for om in 0..d {
                    let mut v = pt.de(a, b, om) - pt.de(b, a, om);
                    for c in 0..d {
                        v -= pt.c(a, c, b) * pt.e(c, om);
                    }
                    out.frame[(a * d + b) * d + om][p] = v;
                }
            }
        }

        // 𝔅_{AB} = 2 ẽ_[A(Ũ_B]) - C̃_A{}^C{}_B Ũ_C.
        for a in 0..d {
            for b in 0..d {
                let mut v = pt.du(a, b) - pt.du(b, a);
                for c in 0..d {
                    v -= pt.c(a, c, b) * pt.u(c);
                }
                out.curl[a * d + b][p] = v;
            }
        }

        // ℭ_{ABC}^D = cyclic(ẽ_C(C̃_A{}^D{}_B)) + cyclic(C̃_A{}^E{}_B C̃_C{}^D{}_E).
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for dd in 0..d {
                        let mut v =
                            pt.dc(c, a, dd, b) + pt.dc(a, b, dd, c) + pt.dc(b, c, dd, a);
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

        // 𝔇_A = ẽ_A(α̃) - α̃ Ũ_A.
        for a in 0..d {
            out.lapse[a][p] = pt.dalpha(a) - al * pt.u(a);
        }

        // 𝔐_A = ẽ_B(Σ̃_A^B) - (n-2) ẽ_A(ℋ̃) + C̃_{ABC} Σ̃^{BC}
        //        - C̃_{BC}{}^C Σ̃_A^B + Ũ_A/(α̃ t).
        for a in 0..d {
            let mut v = -(nf - 2.0) * pt.dh(a) + pt.u(a) / (al * t);
            for b in 0..d {
                v += pt.dsigma(b, a, b);
                v -= pt.tr23(b) * pt.sigma(a, b);
                for c in 0..d {
                    v += pt.c(a, b, c) * pt.sigma(b, c);
                }
            }
            out.momentum[a][p] = v;
        }

        // ℌ = 2 ẽ_A(C̃^A{}_B{}^B) + (n-1)(n-2) ℋ̃² - Σ̃·Σ̃ - C̃_{AB}{}^B C̃^A{}_C{}^C
        //     - ¼ C̃_{ABC}(C̃^{ABC} + C̃^{BAC} + C̃^{ACB}) + 2(n-1) ℋ̃/(α̃ t).
        let mut v = (nf - 1.0) * (nf - 2.0) * pt.h() * pt.h()
            + 2.0 * (nf - 1.0) * pt.h() / (al * t);
        for a in 0..d {
            v += 2.0 * pt.dtr23(a, a);
            v -= pt.tr23(a) * pt.tr23(a);
            for b in 0..d {
                v -= pt.sigma(a, b) * pt.sigma(a, b);
                for c in 0..d {
                    v -= 0.25
                        * pt.c(a, b, c)
                        * (pt.c(a, b, c) + pt.c(b, a, c) + pt.c(a, c, b));
                }
            }
        }
        out.hamiltonian[p] = v;
    }
    Ok(out)
}

/// Frame components of the Riemann tensor, `r[((a·nn+b)·nn+c)·nn+dd]` with
/// frame indices 0..nn (0 is the timelike leg), nn = n.
#[derive(Debug, Clone)]
pub struct FrameCurvature {
    pub nn: usize,
    pub r: Vec<Vec<f64>>,
}

impl FrameCurvature {
    #[inline]
    pub fn idx(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.nn + b) * self.nn + c) * self.nn + d
    }

    pub fn component(&self, a: usize, b: usize, c: usize, d: usize) -> &[f64] {
        &self.r[self.idx(a, b, c, d)]
    }
}

/// Connection coefficients ω_{abc} of the orthonormal frame, flat index
/// ((a·nn+b)·nn+c). Unlisted components vanish.
fn connection_fields(f: &Components, np: usize) -> Vec<Vec<f64>> {
    let d = f.d;
    let nn = d + 1;
    let mut w = vec![vec![0.0; np]; nn * nn * nn];
    let idx = |a: usize, b: usize, c: usize| (a * nn + b) * nn + c;
    for p in 0..np {
        for a in 0..d {
            // ω_{0A0} = Ũ_A, ω_{00A} = -Ũ_A.
            w[idx(0, a + 1, 0)][p] = f.u[a][p];
            w[idx(0, 0, a + 1)][p] = -f.u[a][p];
            for b in 0..d {
                // ω_{A0B} = -(ℋ̃ δ_AB + Σ̃_AB), ω_{AB0} the negative.
                let k = if a == b { f.h[p] } else { 0.0 } + f.sigma[a * d + b][p];
                w[idx(a + 1, 0, b + 1)][p] = -k;
                w[idx(a + 1, b + 1, 0)][p] = k;
                for c in 0..d {
                    // ω_{ABC} = ½(C̃_{BAC} - C̃_{CBA} - C̃_{ACB}).
                    w[idx(a + 1, b + 1, c + 1)][p] = 0.5
                        * (f.c[(b * d + a) * d + c][p]
                            - f.c[(c * d + b) * d + a][p]
                            - f.c[(a * d + c) * d + b][p]);
                }
            }
        }
    }
    w
}

/// Riemann tensor of the frame connection:
/// `R̃_{abcd} = ẽ_a(ω_{bcd}) - ẽ_b(ω_{acd})
///  + η^{ef}(ω_{bfc} ω_{aed} + ω_{bfa} ω_{ecd} - ω_{afc} ω_{bed} - ω_{afb} ω_{ecd})`
/// with η = diag(-1, 1, …, 1) and ẽ₀ = α̃⁻¹ ∂_t (the time derivative of ω is
/// evaluated through the evolution equations).
pub fn frame_curvature(grid: &TorusGrid, st: &FrameState) -> Result<FrameCurvature> {
    let f = &st.f;
    let d = f.d;
    let nn = d + 1;
    let np = f.npoints();
    let idx = |a: usize, b: usize, c: usize| (a * nn + b) * nn + c;

    let w = connection_fields(f, np);
    // ∂_t ω through the chain rule on the evolution right-hand side.
    let rhs = frame_rhs(grid, st)?;
    let wt = connection_fields(&rhs, np);
    // Spatial partials of every connection component.
    let mut wd = Vec::with_capacity(d);
    for om in 0..d {
        let mut per = Vec::with_capacity(w.len());
        for field in &w {
            per.push(grid.spatial_derivative(field, om)?);
        }
        wd.push(per);
    }
    // Frame derivative ẽ_a(ω_k) at a point: a = 0 is α̃⁻¹ ∂_t.
    let ederiv = |a: usize, k: usize, p: usize| -> f64 {
        if a == 0 {
            wt[k][p] / f.alpha[p]
        } else {
            let mut v = 0.0;
            for om in 0..d {
                v += f.e[(a - 1) * d + om][p] * wd[om][k][p];
            }
            v
        }
    };

    let eta = |e: usize| if e == 0 { -1.0 } else { 1.0 };
    let mut r = vec![vec![0.0; np]; nn * nn * nn * nn];
    for a in 0..nn {
        for b in 0..nn {
            for c in 0..nn {
                for dd in 0..nn {
                    let out = &mut r[((a * nn + b) * nn + c) * nn + dd];
                    for p in 0..np {
                        let mut v = ederiv(a, idx(b, c, dd), p) - ederiv(b, idx(a, c, dd), p);
                        for e in 0..nn {
                            v += eta(e)
                                * (w[idx(b, e, c)][p] * w[idx(a, e, dd)][p]
                                    + w[idx(b, e, a)][p] * w[idx(e, c, dd)][p]
                                    - w[idx(a, e, c)][p] * w[idx(b, e, dd)][p]
                                    - w[idx(a, e, b)][p] * w[idx(e, c, dd)][p]);
                        }
                        out[p] = v;
                    }
                }
            }
        }
    }
    Ok(FrameCurvature { nn, r })
}

/// Electric Weyl block `C̃_{A0B0}` assembled from the frame Riemann
/// components, index a·d+b with spatial a, b.
pub fn weyl_electric(curv: &FrameCurvature) -> Vec<Vec<f64>> {
    let nn = curv.nn;
    let d = nn - 1;
    let nf = nn as f64;
    let np = curv.r[0].len();
    let mut out = vec![vec![0.0; np]; d * d];
    for p in 0..np {
        // Traces δ^{CD} R̃_{C0D0} and the double spatial trace.
        let mut tr_t = 0.0;
        let mut tr_ss = 0.0;
        for c in 0..d {
            tr_t += curv.component(c + 1, 0, c + 1, 0)[p];
            for e in 0..d {
                tr_ss += curv.component(e + 1, c + 1, e + 1, c + 1)[p];
            }
        }
        for a in 0..d {
            for b in 0..d {
                let mut v = (nf - 3.0) / (nf - 2.0) * curv.component(a + 1, 0, b + 1, 0)[p];
                v -= (nf - 3.0) / ((nf - 1.0) * (nf - 2.0))
                    * if a == b { tr_t } else { 0.0 };
                let mut tr_s = 0.0;
                for c in 0..d {
                    tr_s += curv.component(a + 1, c + 1, b + 1, c + 1)[p];
                }
                v += tr_s / (nf - 2.0);
                v -= if a == b { tr_ss } else { 0.0 } / ((nf - 1.0) * (nf - 2.0));
                out[a * d + b][p] = v;
            }
        }
    }
    out
}

/// Ricci blocks split against the frame: R̃₀₀, R̃₀A, the spatial trace
/// δ^{AB} R̃_{AB}, and the symmetric trace-free spatial part.
#[derive(Debug, Clone)]
pub struct RicciBlocks {
    pub d: usize,
    pub r00: Vec<f64>,
    pub r0a: Vec<Vec<f64>>,
    pub trace: Vec<f64>,
    pub stf: Vec<Vec<f64>>,
}

impl RicciBlocks {
    /// Largest absolute difference of all blocks against another set.
    pub fn max_diff(&self, other: &RicciBlocks) -> f64 {
        let mut worst = 0.0f64;
        let cmp = |w: &mut f64, a: &[f64], b: &[f64]| {
            for (x, y) in a.iter().zip(b) {
                *w = w.max((x - y).abs());
            }
        };
        cmp(&mut worst, &self.r00, &other.r00);
        cmp(&mut worst, &self.trace, &other.trace);
        for (a, b) in self.r0a.iter().zip(&other.r0a) {
            cmp(&mut worst, a, b);
        }
        for (a, b) in self.stf.iter().zip(&other.stf) {
            cmp(&mut worst, a, b);
        }
        worst
    }
}

/// Ricci blocks from the matter and gauge sources: the scalar-field stress
/// tensor on the exact quiescent branch plus the gauge source Υ built from
/// (ℋ̃, Σ̃, Ũ). Purely algebraic in the state and the time.
pub fn ricci_from_matter(st: &FrameState) -> RicciBlocks {
    let f = &st.f;
    let d = f.d;
    let nf = (d + 1) as f64;
    let t = st.t;
    let np = f.npoints();
    let mut out = RicciBlocks {
        d,
        r00: vec![0.0; np],
        r0a: vec![vec![0.0; np]; d],
        trace: vec![0.0; np],
        stf: vec![vec![0.0; np]; d * d],
    };
    for p in 0..np {
        let al = f.alpha[p];
        let t00 = (nf - 1.0) / (2.0 * (nf - 2.0) * al * al * t * t);
        let ttr = (nf - 1.0) * (nf - 1.0) / (2.0 * (nf - 2.0) * al * al * t * t);
        let ups00 = -(nf - 1.0) * f.h[p] / (al * t) - (nf - 1.0) / ((nf - 2.0) * al * al * t * t);
        let upstr = -(nf - 1.0) * f.h[p] / (al * t);
        out.r00[p] = (nf - 3.0) / (nf - 2.0) * t00 + ttr / (nf - 2.0) + ups00;
        out.trace[p] = (nf - 1.0) / (nf - 2.0) * t00 - ttr / (nf - 2.0) + upstr;
        for a in 0..d {
            out.r0a[a][p] = -f.u[a][p] / (al * t);
            for b in 0..d {
                out.stf[a * d + b][p] = -f.sigma[a * d + b][p] / (al * t);
            }
        }
    }
    out
}

/// Ricci blocks by direct contraction of the frame Riemann tensor,
/// `R̃_{bd} = η^{ac} R̃_{abcd}`.
pub fn ricci_from_curvature(curv: &FrameCurvature) -> RicciBlocks {
    let nn = curv.nn;
    let d = nn - 1;
    let np = curv.r[0].len();
    let mut r00 = vec![0.0; np];
    let mut r0a = vec![vec![0.0; np]; d];
    let mut spatial = vec![vec![0.0; np]; d * d];
    for p in 0..np {
        let mut v = -curv.component(0, 0, 0, 0)[p];
        for a in 0..d {
            v += curv.component(a + 1, 0, a + 1, 0)[p];
        }
        r00[p] = v;
        for b in 0..d {
            let mut v = -curv.component(0, 0, 0, b + 1)[p];
            for a in 0..d {
                v += curv.component(a + 1, 0, a + 1, b + 1)[p];
            }
            r0a[b][p] = v;
        }
        for c in 0..d {
            for dd in 0..d {
                let mut v = -curv.component(0, c + 1, 0, dd + 1)[p];
                for a in 0..d {
                    v += curv.component(a + 1, c + 1, a + 1, dd + 1)[p];
                }
                spatial[c * d + dd][p] = v;
            }
        }
    }
    let mut trace = vec![0.0; np];
    let mut stf = vec![vec![0.0; np]; d * d];
    for p in 0..np {
        let table: Vec<f64> = (0..d * d).map(|i| spatial[i][p]).collect();
        trace[p] = (0..d).map(|a| table[a * d + a]).sum();
        let proj = stf_table(d, &table);
        for (i, field) in stf.iter_mut().enumerate() {
            field[p] = proj[i];
        }
    }
    RicciBlocks {
        d,
        r00,
        r0a,
        trace,
        stf,
    }
}
