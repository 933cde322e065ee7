//! Quantum information metric of the perturbed state
//! `|Ψ⟩ = e^{iHt} e^{iεQ} e^{-iHt} |ψ₀⟩`, its curvature and its geodesics.
//!
//! Coordinates are `x = (Ω_x, ξ_y, t)`. The metric is the real part of the
//! quantum geometric tensor,
//! `g_ij = Re[⟨∂_iΨ|∂_jΨ⟩ - ⟨∂_iΨ|Ψ⟩⟨Ψ|∂_jΨ⟩]`.
//!
//! At finite `j` the state derivatives are obtained spectrally: with
//! `H = V E Vᵀ`, the derivative of `f(H)` along `∂H` has eigenbasis entries
//! `(∂H)_mk (f(E_m) - f(E_k)) / (E_m - E_k)`, and eigenvectors move by first
//! order perturbation theory. One diagonalization per parameter point
//! suffices. A central-difference version is kept as an independent check.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::effective::Phase;
use crate::error::{Error, Result};
use crate::linalg::{real_mul_complex, real_tr_mul_complex, HermitianSpectrum, RealSpectrum};
use crate::spin_model::{
    build_hamiltonian, build_spin_ops, coherent_state, stationary_point, BlochPoint,
    CollectiveSpinOps, ModelParams, Spin,
};
use crate::Complex64;

/// A point `(Ω_x, ξ_y, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterPoint {
    pub omega_x: f64,
    pub xi_y: f64,
    pub t: f64,
}

impl ParameterPoint {
    pub fn new(omega_x: f64, xi_y: f64, t: f64) -> Self {
        Self { omega_x, xi_y, t }
    }

    pub fn params(&self, j: f64, epsilon: f64) -> Result<ModelParams> {
        ModelParams::new(self.omega_x, self.xi_y, j, epsilon)
    }

    pub fn coord(&self, k: usize) -> f64 {
        [self.omega_x, self.xi_y, self.t][k]
    }

    pub fn shifted(&self, k: usize, h: f64) -> Self {
        let mut c = [self.omega_x, self.xi_y, self.t];
        c[k] += h;
        Self::new(c[0], c[1], c[2])
    }

    /// `√(1+Ω_x²)/2`.
    pub fn critical_xi(&self) -> f64 {
        0.5 * (1.0 + self.omega_x * self.omega_x).sqrt()
    }
}

/// Terms of the metric proportional to `ε√j` from the quadratic theory
/// (symmetric and ground phases). The returned values already carry the
/// factor `ε`.
pub fn metric_first_order(
    phase: Phase,
    point: &ParameterPoint,
    j: f64,
    epsilon: f64,
) -> Result<Matrix3<f64>> {
    let p = point.params(j, epsilon)?;
    phase.check(&p)?;
    let s = p.root();
    let (ox, xi, t) = (point.omega_x, point.xi_y, point.t);
    let pre = epsilon * j.sqrt();
    let (g_oo, g_ox, g_ot) =
        match phase {
            Phase::Symmetric => {
                let gm = p.gamma_minus();
                let c = ((s * gm).sqrt() * t).cos();
                (
                    pre * ox * t * (2.0 * xi * xi - 3.0 * xi * s + s * s) * c
                        / (s.powf(3.5) * gm.powf(1.5)),
                    -pre * t * c / (2.0 * s.powf(1.5) * gm.sqrt()),
                    pre * gm.sqrt() * c / (2.0 * s.powf(1.5)),
                )
            }
            Phase::Ground => {
                let gp = p.gamma_plus();
                let (sn, c) = ((s * gp).sqrt() * t).sin_cos();
                (
                    pre * ox * t * (2.0 * xi * xi + 3.0 * xi * s + s * s) * c
                        / (s.powf(3.5) * gp.powf(1.5))
                        - pre * ox * xi * sn / (s.powi(4) * gp),
                    pre * t * c / (2.0 * s.powf(1.5) * gp.sqrt()) + pre * sn / (2.0 * s * s * gp),
                    pre * gp.sqrt() * c / (2.0 * s.powf(1.5)),
                )
            }
            Phase::Broken => return Err(Error::Domain(
                "no closed-form first-order metric in the broken phase; use the finite-j metric"
                    .into(),
            )),
        };
    Ok(Matrix3::new(
        g_oo, g_ox, g_ot, g_ox, 0.0, 0.0, g_ot, 0.0, 0.0,
    ))
}

/// Thermodynamic-limit metric of the unperturbed state (symmetric and
/// ground phases).
///
/// The state is a squeezed vacuum displaced to the stationary point. With
/// `Γ` the phase's gap factor and squeezing `r = -¼ ln(Γ/√(1+Ω_x²))`, the
/// displacement contributes `(j/2)(1+Ω_x²)^{-2} e^{2r} dΩ_x²` and the
/// squeezing `½ dr²`, so the `(Ω_x, ξ_y)` block is a hyperbolic plane with
/// `R = -4` exactly. Time components vanish.
pub fn metric_zeroth_order(phase: Phase, point: &ParameterPoint, j: f64) -> Result<Matrix3<f64>> {
    let p = point.params(j, 0.0)?;
    phase.check(&p)?;
    let s = p.root();
    let ox = point.omega_x;
    let (gap, gap_xi) =
        match phase {
            Phase::Symmetric => (p.gamma_minus(), -2.0),
            Phase::Ground => (p.gamma_plus(), 2.0),
            Phase::Broken => return Err(Error::Domain(
                "no closed-form unperturbed metric in the broken phase; use the finite-j metric"
                    .into(),
            )),
        };
    let r_o = -0.25 * (ox / (s * gap) - ox / (s * s));
    let r_x = -0.25 * gap_xi / gap;
    let disp = j / (2.0 * s.powi(4)) * (s / gap).sqrt();
    Ok(Matrix3::new(
        disp + 0.5 * r_o * r_o,
        0.5 * r_o * r_x,
        0.0,
        0.5 * r_o * r_x,
        0.5 * r_x * r_x,
        0.0,
        0.0,
        0.0,
        0.0,
    ))
}

/// Perturbed state and its three coordinate derivatives.
#[derive(Debug, Clone)]
pub struct StateJet {
    pub psi: DVector<Complex64>,
    pub d: [DVector<Complex64>; 3],
}

/// `Re[⟨∂_iΨ|∂_jΨ⟩ - ⟨∂_iΨ|Ψ⟩⟨Ψ|∂_jΨ⟩]`.
pub fn qgt_metric(jet: &StateJet) -> Matrix3<f64> {
    let mut g = Matrix3::zeros();
    let a: Vec<Complex64> = jet.d.iter().map(|d| d.dotc(&jet.psi)).collect();
    for i in 0..3 {
        for k in i..3 {
            let v = (jet.d[i].dotc(&jet.d[k]) - a[i] * a[k].conj()).re;
            g[(i, k)] = v;
            g[(k, i)] = v;
        }
    }
    g
}

/// Ambiguity threshold for eigenstate selection: the runner-up overlap must
/// stay below this fraction of the best.
pub const SELECTION_MARGIN: f64 = 0.95;

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Divided difference of `e^{iσEt}` between `a` and `b`.
#[inline]
fn exp_divided_difference(a: f64, b: f64, sigma: f64, t: f64) -> Complex64 {
    let mid = Complex64::from_polar(1.0, sigma * 0.5 * (a + b) * t);
    mid * Complex64::new(0.0, sigma * t * sinc(0.5 * sigma * (a - b) * t))
}

/// Orientation of the quadrature in the kick `e^{iεQ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuadratureFrame {
    /// `Q = J_x/√j`.
    Lab,
    /// `Q = ê·J/√j`, with `ê` the lab x-axis projected onto the plane
    /// tangent to the stationary-point direction: the position quadrature
    /// of the local oscillator expansion.
    Local,
}

impl QuadratureFrame {
    pub fn label(self) -> &'static str {
        match self {
            QuadratureFrame::Lab => "lab",
            QuadratureFrame::Local => "local",
        }
    }
}

/// Closed-form stationary-point angles with their `(Ω_x, ξ_y)` derivatives.
#[derive(Debug, Clone, Copy)]
struct Angles {
    theta: f64,
    phi: f64,
    dtheta: [f64; 2],
    dphi: [f64; 2],
}

fn stationary_angles(phase: Phase, p: &ModelParams) -> Angles {
    let (ox, xi) = (p.omega_x, p.xi_y);
    let s = p.root();
    let phi1 = if ox >= 0.0 { 0.0 } else { std::f64::consts::PI };
    let slope = |sign: f64, theta: f64| {
        let st = theta.sin();
        if st == 0.0 {
            0.0
        } else {
            sign * ox / (s * s * s * st)
        }
    };
    match phase {
        Phase::Symmetric => {
            let theta = (-1.0 / s).acos();
            Angles {
                theta,
                phi: phi1,
                dtheta: [slope(-1.0, theta), 0.0],
                dphi: [0.0; 2],
            }
        }
        Phase::Ground => {
            let theta = (1.0 / s).acos();
            Angles {
                theta,
                phi: std::f64::consts::PI - phi1,
                dtheta: [slope(1.0, theta), 0.0],
                dphi: [0.0; 2],
            }
        }
        Phase::Broken => {
            let q = 4.0 * xi * xi - 1.0;
            let theta = (-1.0 / (2.0 * xi)).acos();
            let phi = (ox / q.sqrt()).clamp(-1.0, 1.0).acos();
            let (st, sp) = (theta.sin(), phi.sin());
            Angles {
                theta,
                phi,
                dtheta: [0.0, -1.0 / (2.0 * xi * xi * st)],
                dphi: [-1.0 / (q.sqrt() * sp), 4.0 * xi * ox / (q.powf(1.5) * sp)],
            }
        }
    }
}

/// Local quadrature axis `ê` and its two parameter derivatives.
fn local_axis(a: &Angles) -> Result<(Vector3<f64>, [Vector3<f64>; 2])> {
    let (st, ct) = a.theta.sin_cos();
    let (sp, cp) = a.phi.sin_cos();
    let n = Vector3::new(st * cp, st * sp, -ct);
    let n_theta = Vector3::new(ct * cp, ct * sp, st);
    let n_phi = Vector3::new(-st * sp, st * cp, 0.0);
    let u = Vector3::x() - n * n.x;
    let len = u.norm();
    if len < 1e-8 {
        return Err(Error::Domain(
            "stationary direction is parallel to the x-axis; local quadrature undefined".into(),
        ));
    }
    let e = u / len;
    let mut de = [Vector3::zeros(); 2];
    for (i, d) in de.iter_mut().enumerate() {
        let dn = n_theta * a.dtheta[i] + n_phi * a.dphi[i];
        let du = -(n * dn.x) - dn * n.x;
        *d = (du - e * e.dot(&du)) / len;
    }
    Ok((e, de))
}

/// Hermitian tridiagonal matrix in the `|j,m⟩` basis.
#[derive(Debug, Clone)]
struct Tridiagonal {
    diag: Vec<Complex64>,
    /// `M[k][k+1]`; the subdiagonal is its conjugate.
    upper: Vec<Complex64>,
}

impl Tridiagonal {
    /// `v_x J_x + v_y J_y + v_z J_z`.
    fn along(ops: &CollectiveSpinOps, v: &Vector3<f64>) -> Self {
        let d = ops.jz.nrows();
        let diag = (0..d)
            .map(|k| Complex64::new(v.z * ops.jz[(k, k)], 0.0))
            .collect();
        let upper = (0..d.saturating_sub(1))
            .map(|k| ops.jy[(k, k + 1)] * v.y + Complex64::new(v.x * ops.jx[(k, k + 1)], 0.0))
            .collect();
        Self { diag, upper }
    }

    fn mul(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        let n = self.diag.len();
        DVector::from_fn(n, |k, _| {
            let mut acc = self.diag[k] * y[k];
            if k + 1 < n {
                acc += self.upper[k] * y[k + 1];
            }
            if k > 0 {
                acc += self.upper[k - 1].conj() * y[k - 1];
            }
            acc
        })
    }
}

/// The unitary `e^{iεQ}`, with the generators of its parameter dependence
/// when `Q` follows the stationary point.
#[derive(Debug, Clone)]
enum Kick {
    /// Diagonal in a fixed eigenbasis of `Q`.
    Spectral {
        vectors: DMatrix<Complex64>,
        phases: DVector<Complex64>,
    },
    /// Taylor series of `e^{iεQ}` for tridiagonal `Q`, in substeps of norm at
    /// most one half.
    Series {
        q: Tridiagonal,
        scale: f64,
        substeps: usize,
        /// `X_i` with `∂_i e^{iεQ} = -i[X_i, e^{iεQ}]`.
        rotation: [Tridiagonal; 2],
    },
}

impl Kick {
    fn spectral(spec: HermitianSpectrum, epsilon: f64, scale: f64) -> Self {
        let phases = spec
            .values
            .map(|q| Complex64::from_polar(1.0, epsilon * scale * q));
        Kick::Spectral {
            vectors: spec.vectors,
            phases,
        }
    }

    fn apply(&self, y: &DVector<Complex64>) -> DVector<Complex64> {
        match self {
            Kick::Spectral { vectors, phases } => vectors * vectors.ad_mul(y).component_mul(phases),
            Kick::Series {
                q, scale, substeps, ..
            } => {
                let step = Complex64::new(0.0, *scale / *substeps as f64);
                let mut out = y.clone();
                for _ in 0..*substeps {
                    let tol = 1e-18 * out.norm();
                    let mut term = out.clone();
                    for n in 1..64 {
                        term = q.mul(&term) * (step / n as f64);
                        out += &term;
                        if term.norm() <= tol {
                            break;
                        }
                    }
                }
                out
            }
        }
    }

    fn derivative(&self, i: usize, y: &DVector<Complex64>) -> Option<DVector<Complex64>> {
        let Kick::Series { rotation, .. } = self else {
            return None;
        };
        let x = &rotation[i];
        let commutator = x.mul(&self.apply(y)) - self.apply(&x.mul(y));
        Some(commutator * Complex64::new(0.0, -1.0))
    }
}

/// Spectral data of `H(Ω_x, ξ_y)` together with the unperturbed reference
/// state and its parameter derivatives.
struct Node {
    energies: DVector<f64>,
    vectors: DMatrix<f64>,
    /// `Vᵀ ∂H V` for `Ω_x` and `ξ_y`.
    dh: [DMatrix<f64>; 2],
    /// Reference state in eigen-coordinates, `Vᵀψ₀`.
    c: DVector<Complex64>,
    /// `Vᵀ ∂ψ₀` for `Ω_x` and `ξ_y`.
    dc: [DVector<Complex64>; 2],
    /// Point-dependent kick in the local frame.
    kick: Option<Kick>,
}

/// Finite-j construction of the perturbed state for one phase.
#[derive(Debug)]
pub struct FiniteGeometry {
    pub phase: Phase,
    pub spin: Spin,
    pub epsilon: f64,
    pub frame: QuadratureFrame,
    ops: CollectiveSpinOps,
    lab_kick: Kick,
}

impl FiniteGeometry {
    /// Uses the local quadrature frame.
    pub fn new(phase: Phase, j: f64, epsilon: f64) -> Result<Self> {
        Self::with_frame(phase, j, epsilon, QuadratureFrame::Local)
    }

    pub fn with_frame(phase: Phase, j: f64, epsilon: f64, frame: QuadratureFrame) -> Result<Self> {
        let spin = Spin::new(j)?;
        let ops = build_spin_ops(spin)?;
        let lab_kick = Kick::spectral(
            RealSpectrum::new(&ops.jx)?.to_complex(),
            epsilon,
            1.0 / j.sqrt(),
        );
        Ok(Self {
            phase,
            spin,
            epsilon,
            frame,
            ops,
            lab_kick,
        })
    }

    pub fn j(&self) -> f64 {
        self.spin.j()
    }

    fn params(&self, point: &ParameterPoint) -> Result<ModelParams> {
        let p = point.params(self.j(), self.epsilon.abs())?;
        self.phase.check(&p)?;
        Ok(p)
    }

    fn local_kick(&self, angles: &Angles) -> Result<Kick> {
        let (e, de) = local_axis(angles)?;
        // ‖Q‖ = √j exactly, since ê·J has eigenvalues m.
        let scale = self.epsilon / self.j().sqrt();
        let norm = self.epsilon.abs() * self.j().sqrt();
        Ok(Kick::Series {
            q: Tridiagonal::along(&self.ops, &e),
            scale,
            substeps: (2.0 * norm).ceil().max(1.0) as usize,
            rotation: [
                Tridiagonal::along(&self.ops, &e.cross(&de[0])),
                Tridiagonal::along(&self.ops, &e.cross(&de[1])),
            ],
        })
    }

    /// Coherent state at the phase's stationary point and its
    /// `(Ω_x, ξ_y)` derivatives (used only in the broken phase).
    fn reference_coherent(
        &self,
        p: &ModelParams,
        a: &Angles,
    ) -> Result<(DVector<Complex64>, [DVector<Complex64>; 2])> {
        let zero = DVector::from_element(self.spin.dim(), Complex64::new(0.0, 0.0));
        if self.phase != Phase::Broken {
            let b = stationary_point(p, self.phase.stationary_label())?.point;
            return Ok((coherent_state(self.spin, b), [zero.clone(), zero]));
        }
        let z = coherent_state(self.spin, BlochPoint::new(a.theta, a.phi)?);
        let n = self.spin.twice_j() as f64;
        let (cot, tan) = (1.0 / (0.5 * a.theta).tan(), (0.5 * a.theta).tan());
        let dz_theta = DVector::from_fn(z.len(), |k, _| {
            let kf = k as f64;
            z[k] * (0.5 * kf * cot - 0.5 * (n - kf) * tan)
        });
        let dz_phi = DVector::from_fn(z.len(), |k, _| z[k] * Complex64::new(0.0, -(k as f64)));
        let d = |i: usize| {
            &dz_theta * Complex64::new(a.dtheta[i], 0.0) + &dz_phi * Complex64::new(a.dphi[i], 0.0)
        };
        Ok((z, [d(0), d(1)]))
    }

    fn node(&self, p: &ModelParams) -> Result<Node> {
        let h = build_hamiltonian(p, &self.ops)?;
        let spec = RealSpectrum::new(&h)?;
        let (e, v) = (spec.values, spec.vectors);
        let dim = e.len();
        let jy2 = &self.ops.jy2 / self.j();
        let dh = [v.tr_mul(&(&self.ops.jx * &v)), v.tr_mul(&(jy2 * &v))];
        let angles = stationary_angles(self.phase, p);
        let (z, dz) = self.reference_coherent(p, &angles)?;
        let w = real_tr_mul_complex(&v, &z);
        let zero = Complex64::new(0.0, 0.0);
        let mut dc = [
            DVector::from_element(dim, zero),
            DVector::from_element(dim, zero),
        ];
        let c;
        match self.phase {
            Phase::Symmetric | Phase::Ground => {
                let mut order: Vec<usize> = (0..dim).collect();
                order.sort_by(|&a, &b| w[b].norm_sqr().total_cmp(&w[a].norm_sqr()));
                let (n, first, second) = (order[0], w[order[0]].norm_sqr(), w[order[1]].norm_sqr());
                if second >= SELECTION_MARGIN * first {
                    return Err(Error::Selection { first, second });
                }
                c = DVector::from_fn(dim, |k, _| {
                    if k == n {
                        Complex64::new(1.0, 0.0)
                    } else {
                        zero
                    }
                });
                for (i, dci) in dc.iter_mut().enumerate() {
                    for m in 0..dim {
                        if m != n {
                            dci[m] = Complex64::new(dh[i][(m, n)] / (e[n] - e[m]), 0.0);
                        }
                    }
                }
            }
            Phase::Broken => {
                // Projection of the coherent state onto the top doublet.
                let doublet = [dim - 1, dim - 2];
                let mut u = DVector::from_element(dim, zero);
                for &k in &doublet {
                    u[k] = w[k];
                }
                let norm = u.norm();
                if norm < 1e-8 {
                    return Err(Error::Numeric(
                        "coherent state has no weight on the top doublet".into(),
                    ));
                }
                let wz: [DVector<Complex64>; 2] = [
                    real_tr_mul_complex(&v, &dz[0]),
                    real_tr_mul_complex(&v, &dz[1]),
                ];
                for i in 0..2 {
                    let mut du = DVector::from_element(dim, zero);
                    for &k in &doublet {
                        let mut acc = wz[i][k];
                        for m in 0..dim {
                            if doublet.contains(&m) {
                                continue;
                            }
                            let b = dh[i][(m, k)] / (e[k] - e[m]);
                            du[m] += w[k] * b;
                            acc += w[m] * b;
                        }
                        du[k] += acc;
                    }
                    let radial = u.dotc(&du).re / (norm * norm);
                    dc[i] = (du - &u * Complex64::new(radial, 0.0)) / Complex64::new(norm, 0.0);
                }
                c = u / Complex64::new(norm, 0.0);
            }
        }
        let kick = match self.frame {
            QuadratureFrame::Local if self.epsilon != 0.0 => Some(self.local_kick(&angles)?),
            _ => None,
        };
        Ok(Node {
            energies: e,
            vectors: v,
            dh,
            c,
            dc,
            kick,
        })
    }

    fn kick<'a>(&'a self, node: &'a Node) -> &'a Kick {
        node.kick.as_ref().unwrap_or(&self.lab_kick)
    }

    /// `e^{iσEt}` applied to eigen-coordinates.
    fn phase(node: &Node, x: &DVector<Complex64>, sigma: f64, t: f64) -> DVector<Complex64> {
        DVector::from_fn(x.len(), |k, _| {
            x[k] * Complex64::from_polar(1.0, sigma * node.energies[k] * t)
        })
    }

    /// `[D ∘ A] x` with `D` the divided differences of `e^{iσEt}`.
    fn divided(
        node: &Node,
        a: &DMatrix<f64>,
        x: &DVector<Complex64>,
        sigma: f64,
        t: f64,
    ) -> DVector<Complex64> {
        let e = &node.energies;
        DVector::from_fn(x.len(), |m, _| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..x.len() {
                let amk = a[(m, k)];
                if amk != 0.0 {
                    acc += exp_divided_difference(e[m], e[k], sigma, t) * amk * x[k];
                }
            }
            acc
        })
    }

    /// `U† y` for `y` in the spin basis.
    fn back(node: &Node, y: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        real_mul_complex(
            &node.vectors,
            &Self::phase(node, &real_tr_mul_complex(&node.vectors, y), 1.0, t),
        )
    }

    /// `U† e^{iεQ} y` for `y` in eigen-coordinates of `H`, result in the spin basis.
    fn kick_back(&self, node: &Node, y_eig: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        let kicked = self
            .kick(node)
            .apply(&real_mul_complex(&node.vectors, y_eig));
        Self::back(node, &kicked, t)
    }

    pub fn state(&self, point: &ParameterPoint) -> Result<DVector<Complex64>> {
        let p = self.params(point)?;
        let node = self.node(&p)?;
        let x0 = Self::phase(&node, &node.c, -1.0, point.t);
        Ok(self.kick_back(&node, &x0, point.t))
    }

    /// Unperturbed reference state `ψ₀` in the spin basis.
    pub fn reference_state(&self, point: &ParameterPoint) -> Result<DVector<Complex64>> {
        let p = self.params(point)?;
        let node = self.node(&p)?;
        Ok(real_mul_complex(&node.vectors, &node.c))
    }

    pub fn jet(&self, point: &ParameterPoint) -> Result<StateJet> {
        let p = self.params(point)?;
        let node = self.node(&p)?;
        let t = point.t;
        let v = &node.vectors;
        if self.epsilon == 0.0 {
            let psi = real_mul_complex(v, &node.c);
            let zero = DVector::from_element(psi.len(), Complex64::new(0.0, 0.0));
            return Ok(StateJet {
                d: [
                    real_mul_complex(v, &node.dc[0]),
                    real_mul_complex(v, &node.dc[1]),
                    zero,
                ],
                psi,
            });
        }
        let kick = self.kick(&node);
        let x0 = Self::phase(&node, &node.c, -1.0, t);
        let y0 = real_mul_complex(v, &x0);
        let kicked = kick.apply(&y0);
        let kicked_eig = real_tr_mul_complex(v, &kicked);
        let psi_eig = Self::phase(&node, &kicked_eig, 1.0, t);
        let psi = real_mul_complex(v, &psi_eig);
        let mut d: Vec<DVector<Complex64>> = Vec::with_capacity(3);
        for i in 0..2 {
            let outer = Self::divided(&node, &node.dh[i], &kicked_eig, 1.0, t);
            let inner = Self::divided(&node, &node.dh[i], &node.c, -1.0, t)
                + Self::phase(&node, &node.dc[i], -1.0, t);
            let mut di = real_mul_complex(v, &outer) + self.kick_back(&node, &inner, t);
            if let Some(dk) = kick.derivative(i, &y0) {
                di += Self::back(&node, &dk, t);
            }
            d.push(di);
        }
        // ∂_t Ψ = i(HΨ - U† e^{iεQ} U Hψ₀)
        let h_psi = DVector::from_fn(psi_eig.len(), |k, _| psi_eig[k] * node.energies[k]);
        let h_c = DVector::from_fn(node.c.len(), |k, _| node.c[k] * node.energies[k]);
        let moved = self.kick_back(&node, &Self::phase(&node, &h_c, -1.0, t), t);
        d.push((real_mul_complex(v, &h_psi) - moved) * Complex64::new(0.0, 1.0));
        let [d0, d1, d2]: [DVector<Complex64>; 3] = d.try_into().expect("three derivatives");
        Ok(StateJet {
            psi,
            d: [d0, d1, d2],
        })
    }

    /// Metric from analytic state derivatives.
    pub fn metric(&self, point: &ParameterPoint) -> Result<Matrix3<f64>> {
        Ok(qgt_metric(&self.jet(point)?))
    }
}

/// Finite-difference metric and its step-consistency residual.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericalMetric {
    pub g: Matrix3<f64>,
    /// `max|g(h) - g(2h)| / max|g(h)|`.
    pub step_residual: f64,
}

/// Step-consistency residual above which the finite-difference metric is
/// rejected.
pub const STEP_RESIDUAL_TOL: f64 = 1e-2;

/// Metric by central differences of the finite-j perturbed state, with the
/// gauge of each displaced state fixed by a positive overlap with the state
/// at the center. Uses the local quadrature frame.
pub fn metric_numerical(
    phase: Phase,
    point: &ParameterPoint,
    j: f64,
    epsilon: f64,
    h: f64,
) -> Result<NumericalMetric> {
    FiniteGeometry::new(phase, j, epsilon)?.metric_numerical(point, h)
}

impl FiniteGeometry {
    pub fn metric_numerical(&self, point: &ParameterPoint, h: f64) -> Result<NumericalMetric> {
        finite_difference_metric(self, point, h)
    }
}

fn finite_difference_metric(
    geo: &FiniteGeometry,
    point: &ParameterPoint,
    h: f64,
) -> Result<NumericalMetric> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let psi = geo.state(point)?;
    let gauge = |s: DVector<Complex64>| {
        let o = psi.dotc(&s);
        let phase = if o.norm() > 0.0 {
            o.conj() / o.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        s * phase
    };
    let derivs = |step: f64| -> Result<[DVector<Complex64>; 3]> {
        let mut out = Vec::with_capacity(3);
        for k in 0..3 {
            let plus = gauge(geo.state(&point.shifted(k, step))?);
            let minus = gauge(geo.state(&point.shifted(k, -step))?);
            out.push((plus - minus) / Complex64::new(2.0 * step, 0.0));
        }
        Ok(out.try_into().expect("three derivatives"))
    };
    let (d1, d2) = (derivs(h)?, derivs(2.0 * h)?);
    let g = qgt_metric(&StateJet {
        psi: psi.clone(),
        d: d1,
    });
    let g2 = qgt_metric(&StateJet {
        psi: psi.clone(),
        d: d2,
    });
    let scale = g.abs().max().max(f64::MIN_POSITIVE);
    let step_residual = (g - g2).abs().max() / scale;
    if step_residual > STEP_RESIDUAL_TOL {
        return Err(Error::Numeric(format!(
            "finite-difference metric is step dependent (residual {step_residual:e} at h = {h:e})"
        )));
    }
    Ok(NumericalMetric { g, step_residual })
}

/// Normalization applied to the metric before curvature is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricConvention {
    Raw,
    /// Divide by `j`.
    JNormalized,
}

impl MetricConvention {
    pub fn label(self) -> &'static str {
        match self {
            MetricConvention::Raw => "raw",
            MetricConvention::JNormalized => "j-normalized",
        }
    }
}

/// How the total metric is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricSource {
    /// Closed-form thermodynamic-limit metric of the unperturbed state plus
    /// the closed-form first-order terms.
    Thermodynamic,
    /// Finite-j metric of the unperturbed state plus the closed-form
    /// first-order terms.
    Hybrid,
    /// Finite-j metric of the perturbed state at the given `ε`.
    Numerical,
}

/// Two-dimensional `(Ω_x, ξ_y)` metric at fixed `t`.
#[derive(Debug)]
pub struct MetricModel {
    pub phase: Phase,
    pub t: f64,
    pub epsilon: f64,
    pub source: MetricSource,
    pub convention: MetricConvention,
    geometry: FiniteGeometry,
}

impl MetricModel {
    pub fn new(
        phase: Phase,
        j: f64,
        epsilon: f64,
        t: f64,
        source: MetricSource,
        convention: MetricConvention,
    ) -> Result<Self> {
        if source != MetricSource::Numerical && phase == Phase::Broken {
            return Err(Error::Domain(
                "the broken phase has no closed-form metric".into(),
            ));
        }
        let state_eps = if source == MetricSource::Numerical {
            epsilon
        } else {
            0.0
        };
        Ok(Self {
            phase,
            t,
            epsilon,
            source,
            convention,
            geometry: FiniteGeometry::new(phase, j, state_eps)?,
        })
    }

    /// Default assembly used for curvature maps: closed forms where they
    /// exist, fully numerical in the broken phase.
    pub fn standard(
        phase: Phase,
        j: f64,
        epsilon: f64,
        t: f64,
        convention: MetricConvention,
    ) -> Result<Self> {
        let source = if phase == Phase::Broken {
            MetricSource::Numerical
        } else {
            MetricSource::Thermodynamic
        };
        Self::new(phase, j, epsilon, t, source, convention)
    }

    pub fn j(&self) -> f64 {
        self.geometry.j()
    }

    pub fn contains(&self, omega_x: f64, xi_y: f64) -> bool {
        ModelParams::new(omega_x, xi_y, self.j(), 0.0).is_ok_and(|p| self.phase.contains(&p))
    }

    pub fn metric(&self, omega_x: f64, xi_y: f64) -> Result<Matrix2<f64>> {
        let point = ParameterPoint::new(omega_x, xi_y, self.t);
        let g = match self.source {
            MetricSource::Numerical => self.geometry.metric(&point)?,
            MetricSource::Hybrid => {
                self.geometry.metric(&point)?
                    + metric_first_order(self.phase, &point, self.j(), self.epsilon)?
            }
            MetricSource::Thermodynamic => {
                metric_zeroth_order(self.phase, &point, self.j())?
                    + metric_first_order(self.phase, &point, self.j(), self.epsilon)?
            }
        };
        let block = g.fixed_view::<2, 2>(0, 0).into_owned();
        Ok(match self.convention {
            MetricConvention::Raw => block,
            MetricConvention::JNormalized => block / self.j(),
        })
    }
}

/// Metric sampled on a regular `(Ω_x, ξ_y)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    pub omega: Vec<f64>,
    pub xi: Vec<f64>,
    /// Row-major over `(omega, xi)`; `None` for masked nodes.
    pub nodes: Vec<Option<Matrix2<f64>>>,
    pub j: f64,
    pub epsilon: f64,
    pub t: f64,
    pub phase: Option<Phase>,
    pub convention: MetricConvention,
}

/// Uniform grid of `n` points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Largest number of grid nodes a field may hold.
pub const MAX_FIELD_NODES: usize = 1_000_000;

impl MetricField {
    /// Samples every node in parallel. Nodes outside the phase, with a
    /// failed state selection, or with a non positive-definite metric are
    /// masked.
    pub fn sample(model: &MetricModel, omega: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        Self::check_grid(&omega, &xi)?;
        let nodes = (0..omega.len() * xi.len())
            .into_par_iter()
            .map(|k| {
                let (a, b) = (omega[k / xi.len()], xi[k % xi.len()]);
                if !model.contains(a, b) {
                    return None;
                }
                model.metric(a, b).ok().filter(is_positive_definite)
            })
            .collect();
        Ok(Self {
            omega,
            xi,
            nodes,
            j: model.j(),
            epsilon: model.epsilon,
            t: model.t,
            phase: Some(model.phase),
            convention: model.convention,
        })
    }

    /// Field from an analytic metric function, for tests and self-checks.
    pub fn from_fn(
        omega: Vec<f64>,
        xi: Vec<f64>,
        f: impl Fn(f64, f64) -> Option<Matrix2<f64>>,
    ) -> Result<Self> {
        Self::check_grid(&omega, &xi)?;
        let mut nodes = Vec::with_capacity(omega.len() * xi.len());
        for &a in &omega {
            for &b in &xi {
                nodes.push(f(a, b).filter(is_positive_definite));
            }
        }
        Ok(Self {
            omega,
            xi,
            nodes,
            j: f64::NAN,
            epsilon: f64::NAN,
            t: f64::NAN,
            phase: None,
            convention: MetricConvention::Raw,
        })
    }

    fn check_grid(omega: &[f64], xi: &[f64]) -> Result<()> {
        if omega.len() < 3 || xi.len() < 3 {
            return Err(Error::Domain(
                "a curvature grid needs at least 3 nodes per axis".into(),
            ));
        }
        if omega.len() * xi.len() > MAX_FIELD_NODES {
            return Err(Error::Resource(format!(
                "{} grid nodes exceed the limit of {MAX_FIELD_NODES}",
                omega.len() * xi.len()
            )));
        }
        let uniform = |v: &[f64]| {
            let h = v[1] - v[0];
            h > 0.0
                && v.windows(2)
                    .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0))
        };
        if !uniform(omega) || !uniform(xi) {
            return Err(Error::Domain(
                "grid axes must be uniform and increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.omega.len(), self.xi.len())
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.omega[1] - self.omega[0], self.xi[1] - self.xi[0])
    }

    pub fn at(&self, a: usize, b: usize) -> Option<&Matrix2<f64>> {
        self.nodes[a * self.xi.len() + b].as_ref()
    }

    pub fn masked_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_none()).count()
    }

    /// `(g, ∂g, ∂∂g)` at an interior node from central differences, `None`
    /// if any of the 3×3 neighbours is masked.
    fn local_jet(&self, a: usize, b: usize) -> Option<MetricJet<2>> {
        let (na, nb) = self.shape();
        if a == 0 || b == 0 || a + 1 >= na || b + 1 >= nb {
            return None;
        }
        let mut s = [[Matrix2::zeros(); 3]; 3];
        for (da, row) in s.iter_mut().enumerate() {
            for (db, cell) in row.iter_mut().enumerate() {
                *cell = *self.at(a + da - 1, b + db - 1)?;
            }
        }
        let (ha, hb) = self.spacing();
        Some(stencil_jet(&s, ha, hb))
    }
}

fn is_positive_definite(g: &Matrix2<f64>) -> bool {
    g[(0, 0)] > 0.0 && g.determinant() > 0.0 && g.iter().all(|v| v.is_finite())
}

/// Metric, first and second partial derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricJet<const N: usize> {
    pub g: [[f64; N]; N],
    /// `dg[k][i][j] = ∂_k g_ij`.
    pub dg: [[[f64; N]; N]; N],
    /// `ddg[k][l][i][j] = ∂_k ∂_l g_ij`.
    pub ddg: [[[[f64; N]; N]; N]; N],
}

fn stencil_jet(s: &[[Matrix2<f64>; 3]; 3], ha: f64, hb: f64) -> MetricJet<2> {
    let mut jet = MetricJet {
        g: [[0.0; 2]; 2],
        dg: [[[0.0; 2]; 2]; 2],
        ddg: [[[[0.0; 2]; 2]; 2]; 2],
    };
    for i in 0..2 {
        for j in 0..2 {
            let f = |da: usize, db: usize| s[da][db][(i, j)];
            jet.g[i][j] = f(1, 1);
            jet.dg[0][i][j] = (f(2, 1) - f(0, 1)) / (2.0 * ha);
            jet.dg[1][i][j] = (f(1, 2) - f(1, 0)) / (2.0 * hb);
            jet.ddg[0][0][i][j] = (f(2, 1) - 2.0 * f(1, 1) + f(0, 1)) / (ha * ha);
            jet.ddg[1][1][i][j] = (f(1, 2) - 2.0 * f(1, 1) + f(1, 0)) / (hb * hb);
            let mixed = (f(2, 2) - f(2, 0) - f(0, 2) + f(0, 0)) / (4.0 * ha * hb);
            jet.ddg[0][1][i][j] = mixed;
            jet.ddg[1][0][i][j] = mixed;
        }
    }
    jet
}

fn invert<const N: usize>(g: &[[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let m = nalgebra::SMatrix::<f64, N, N>::from_fn(|r, c| g[r][c]);
    let inv = m.try_inverse()?;
    let mut out = [[0.0; N]; N];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = inv[(r, c)];
        }
    }
    Some(out)
}

/// `Γ^i_{jl} = ½ g^{im}(∂_j g_{ml} + ∂_l g_{mj} - ∂_m g_{jl})`.
pub fn christoffel_symbols<const N: usize>(
    g_inv: &[[f64; N]; N],
    dg: &[[[f64; N]; N]; N],
) -> [[[f64; N]; N]; N] {
    let mut out = [[[0.0; N]; N]; N];
    for i in 0..N {
        for j in 0..N {
            for l in j..N {
                let mut acc = 0.0;
                for m in 0..N {
                    acc += g_inv[i][m] * (dg[j][m][l] + dg[l][m][j] - dg[m][j][l]);
                }
                out[i][j][l] = 0.5 * acc;
                out[i][l][j] = 0.5 * acc;
            }
        }
    }
    out
}

/// Scalar curvature from the Riemann tensor
/// `R^i_{jkl} = ∂_k Γ^i_{lj} - ∂_l Γ^i_{kj} + Γ^i_{km}Γ^m_{lj} - Γ^i_{lm}Γ^m_{kj}`,
/// contracted as `R = g^{jl} R^i_{jil}` (the unit sphere has `R = 2`).
pub fn scalar_curvature<const N: usize>(jet: &MetricJet<N>) -> Option<f64> {
    let gi = invert(&jet.g)?;
    let gamma = christoffel_symbols(&gi, &jet.dg);
    // ∂_k g^{im} = -g^{ia} ∂_k g_{ab} g^{bm}
    let mut dgi = [[[0.0; N]; N]; N];
    for k in 0..N {
        for i in 0..N {
            for m in 0..N {
                let mut acc = 0.0;
                for a in 0..N {
                    for b in 0..N {
                        acc -= gi[i][a] * jet.dg[k][a][b] * gi[b][m];
                    }
                }
                dgi[k][i][m] = acc;
            }
        }
    }
    // dgamma[k][i][j][l] = ∂_k Γ^i_{jl}
    let mut dgamma = [[[[0.0; N]; N]; N]; N];
    for k in 0..N {
        for i in 0..N {
            for j in 0..N {
                for l in 0..N {
                    let mut acc = 0.0;
                    for m in 0..N {
                        let lower = 0.5 * (jet.dg[j][m][l] + jet.dg[l][m][j] - jet.dg[m][j][l]);
                        let dlower =
                            0.5 * (jet.ddg[k][j][m][l] + jet.ddg[k][l][m][j] - jet.ddg[k][m][j][l]);
                        acc += dgi[k][i][m] * lower + gi[i][m] * dlower;
                    }
                    dgamma[k][i][j][l] = acc;
                }
            }
        }
    }
    let mut r = 0.0;
    for j in 0..N {
        for l in 0..N {
            let mut ricci = 0.0;
            for i in 0..N {
                // R^i_{jil}
                let mut v = dgamma[i][i][l][j] - dgamma[l][i][i][j];
                for m in 0..N {
                    v += gamma[i][i][m] * gamma[m][l][j] - gamma[i][l][m] * gamma[m][i][j];
                }
                ricci += v;
            }
            r += gi[j][l] * ricci;
        }
    }
    r.is_finite().then_some(r)
}

/// Christoffel symbols and scalar curvature on the nodes of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField {
    pub omega: Vec<f64>,
    pub xi: Vec<f64>,
    pub christoffel: Vec<Option<[[[f64; 2]; 2]; 2]>>,
    pub ricci: Vec<Option<f64>>,
}

impl CurvatureField {
    pub fn at(&self, a: usize, b: usize) -> Option<f64> {
        self.ricci[a * self.xi.len() + b]
    }

    pub fn valid_count(&self) -> usize {
        self.ricci.iter().filter(|r| r.is_some()).count()
    }
}

/// Central-difference Christoffel symbols on every interior unmasked node.
pub fn christoffel(field: &MetricField) -> Vec<Option<[[[f64; 2]; 2]; 2]>> {
    let (na, nb) = field.shape();
    (0..na * nb)
        .map(|k| {
            let jet = field.local_jet(k / nb, k % nb)?;
            Some(christoffel_symbols(&invert(&jet.g)?, &jet.dg))
        })
        .collect()
}

pub fn ricci_scalar(field: &MetricField) -> CurvatureField {
    let (na, nb) = field.shape();
    let ricci = (0..na * nb)
        .map(|k| {
            field
                .local_jet(k / nb, k % nb)
                .and_then(|jet| scalar_curvature(&jet))
        })
        .collect();
    CurvatureField {
        omega: field.omega.clone(),
        xi: field.xi.clone(),
        christoffel: christoffel(field),
        ricci,
    }
}

/// Curvature-grid spacing: fine within 0.1 of the transition line.
pub fn curvature_spacing(distance_to_line: f64) -> f64 {
    if distance_to_line.abs() < 0.1 {
        0.005
    } else {
        0.02
    }
}

/// Scalar curvature at one point from a 3×3 metric stencil of spacing `h`.
pub fn ricci_at(model: &MetricModel, omega_x: f64, xi_y: f64, h: f64) -> Result<f64> {
    let cells: Vec<Matrix2<f64>> = (0..9)
        .into_par_iter()
        .map(|k| {
            model.metric(
                omega_x + (k / 3) as f64 * h - h,
                xi_y + (k % 3) as f64 * h - h,
            )
        })
        .collect::<Result<_>>()?;
    let mut s = [[Matrix2::zeros(); 3]; 3];
    for (k, g) in cells.into_iter().enumerate() {
        s[k / 3][k % 3] = g;
    }
    scalar_curvature(&stencil_jet(&s, h, h))
        .ok_or_else(|| Error::Numeric(format!("singular metric near ({omega_x}, {xi_y})")))
}

/// Scalar curvature at distance `distance` from the transition line,
/// evaluated in the chart `(Ω_x, u)` with `ξ_y = ξ_line(Ω_x) ± e^u`.
///
/// Near the line the squeezing part of the metric dominates `g_ΩΩ` through
/// `∂_Ω Γ`, leaving the `(Ω_x, ξ_y)` metric nearly singular and its finite
/// differences dominated by cancellation. In this chart the gap depends on
/// `u` alone, the pulled-back metric stays well conditioned, and a stencil of
/// fixed `h` in `u` has fixed relative resolution in the distance.
pub fn ricci_near_line(model: &MetricModel, omega_x: f64, distance: f64, h: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!(
            "distance to the line must be positive, got {distance}"
        )));
    }
    let (line_sign, side) = match model.phase {
        Phase::Symmetric => (1.0, -1.0),
        Phase::Broken => (1.0, 1.0),
        Phase::Ground => (-1.0, 1.0),
    };
    let u0 = distance.ln();
    let cells: Vec<Matrix2<f64>> = (0..9)
        .into_par_iter()
        .map(|k| {
            let om = omega_x + (k / 3) as f64 * h - h;
            let u = u0 + (k % 3) as f64 * h - h;
            let s = (1.0 + om * om).sqrt();
            let xi = line_sign * 0.5 * s + side * u.exp();
            let g = model.metric(om, xi)?;
            let jac = Matrix2::new(1.0, 0.0, line_sign * 0.5 * om / s, side * u.exp());
            Ok(jac.transpose() * g * jac)
        })
        .collect::<Result<_>>()?;
    let mut st = [[Matrix2::zeros(); 3]; 3];
    for (k, g) in cells.into_iter().enumerate() {
        st[k / 3][k % 3] = g;
    }
    scalar_curvature(&stencil_jet(&st, h, h)).ok_or_else(|| {
        Error::Numeric(format!(
            "singular metric at distance {distance} from the line"
        ))
    })
}

/// [`ricci_near_line`] at `h` and `h/2`.
pub fn halving_near_line(
    model: &MetricModel,
    omega_x: f64,
    distance: f64,
    h: f64,
) -> Result<HalvingReport> {
    let coarse = ricci_near_line(model, omega_x, distance, h)?;
    let fine = ricci_near_line(model, omega_x, distance, 0.5 * h)?;
    Ok(HalvingReport {
        coarse,
        fine,
        extrapolated: (4.0 * fine - coarse) / 3.0,
        relative_change: (fine - coarse).abs() / fine.abs().max(f64::MIN_POSITIVE),
    })
}

/// `R` at spacing `h` and `h/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalvingReport {
    pub coarse: f64,
    pub fine: f64,
    /// Richardson estimate `(4 fine - coarse) / 3`.
    pub extrapolated: f64,
    pub relative_change: f64,
}

pub fn grid_halving(model: &MetricModel, omega_x: f64, xi_y: f64, h: f64) -> Result<HalvingReport> {
    let coarse = ricci_at(model, omega_x, xi_y, h)?;
    let fine = ricci_at(model, omega_x, xi_y, 0.5 * h)?;
    Ok(HalvingReport {
        coarse,
        fine,
        extrapolated: (4.0 * fine - coarse) / 3.0,
        relative_change: (fine - coarse).abs() / fine.abs().max(f64::MIN_POSITIVE),
    })
}

/// Smooth interpolation of a 2D metric with first derivatives.
pub trait MetricInterpolant: Sync {
    /// `(g, [∂_Ω g, ∂_ξ g])` at `x`.
    fn metric_jet(
        &self,
        x: [f64; 2],
    ) -> std::result::Result<(Matrix2<f64>, [Matrix2<f64>; 2]), Stop>;

    /// Distance to the boundary where integration must stop, if any.
    fn boundary_distance(&self, _x: [f64; 2]) -> Option<f64> {
        None
    }
}

/// Why a geodesic stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stop {
    /// Within the requested distance of the transition line.
    PhaseBoundary,
    /// Left the sampled region.
    GridEdge,
    /// Entered masked nodes.
    MaskedRegion,
    TauMax,
}

impl Stop {
    pub fn label(self) -> &'static str {
        match self {
            Stop::PhaseBoundary => "phase-boundary",
            Stop::GridEdge => "grid-edge",
            Stop::MaskedRegion => "masked-region",
            Stop::TauMax => "tau-max",
        }
    }
}

/// Catmull-Rom weights and their derivatives at `u ∈ [0, 1)`.
fn catmull_rom(u: f64) -> ([f64; 4], [f64; 4]) {
    let (u2, u3) = (u * u, u * u * u);
    (
        [
            0.5 * (-u + 2.0 * u2 - u3),
            0.5 * (2.0 - 5.0 * u2 + 3.0 * u3),
            0.5 * (u + 4.0 * u2 - 3.0 * u3),
            0.5 * (-u2 + u3),
        ],
        [
            0.5 * (-1.0 + 4.0 * u - 3.0 * u2),
            0.5 * (-10.0 * u + 9.0 * u2),
            0.5 * (1.0 + 8.0 * u + -9.0 * u2),
            0.5 * (-2.0 * u + 3.0 * u2),
        ],
    )
}

/// Tensor-product Catmull-Rom interpolation of lattice values.
fn interpolate(
    x: [f64; 2],
    origin: [f64; 2],
    h: [f64; 2],
    node: impl Fn(i64, i64) -> std::result::Result<Matrix2<f64>, Stop>,
) -> std::result::Result<(Matrix2<f64>, [Matrix2<f64>; 2]), Stop> {
    let fa = (x[0] - origin[0]) / h[0];
    let fb = (x[1] - origin[1]) / h[1];
    let (ia, ib) = (fa.floor() as i64, fb.floor() as i64);
    let (wa, da) = catmull_rom(fa - ia as f64);
    let (wb, db) = catmull_rom(fb - ib as f64);
    let mut g = Matrix2::zeros();
    let mut ga = Matrix2::zeros();
    let mut gb = Matrix2::zeros();
    for p in 0..4 {
        for q in 0..4 {
            let v = node(ia + p as i64 - 1, ib + q as i64 - 1)?;
            g += v * (wa[p] * wb[q]);
            ga += v * (da[p] * wb[q] / h[0]);
            gb += v * (wa[p] * db[q] / h[1]);
        }
    }
    Ok((g, [ga, gb]))
}

/// Interpolant over a sampled [`MetricField`].
#[derive(Debug, Clone, Copy)]
pub struct FieldInterpolant<'a> {
    pub field: &'a MetricField,
    /// Stop within this distance of the transition line.
    pub boundary_delta: Option<f64>,
}

impl MetricInterpolant for FieldInterpolant<'_> {
    fn metric_jet(
        &self,
        x: [f64; 2],
    ) -> std::result::Result<(Matrix2<f64>, [Matrix2<f64>; 2]), Stop> {
        let f = self.field;
        let (na, nb) = f.shape();
        let (ha, hb) = f.spacing();
        interpolate(x, [f.omega[0], f.xi[0]], [ha, hb], |a, b| {
            if a < 0 || b < 0 || a as usize >= na || b as usize >= nb {
                return Err(Stop::GridEdge);
            }
            f.at(a as usize, b as usize)
                .copied()
                .ok_or(Stop::MaskedRegion)
        })
    }

    fn boundary_distance(&self, x: [f64; 2]) -> Option<f64> {
        self.boundary_delta?;
        Some((x[1] - 0.5 * (1.0 + x[0] * x[0]).sqrt()).abs())
    }
}

/// Lazily sampled lattice of a [`MetricModel`]: nodes are computed on first
/// use and memoized, so a geodesic only pays for the cells it visits.
#[derive(Debug)]
pub struct LatticeMetric<'a> {
    pub model: &'a MetricModel,
    pub h: f64,
    pub origin: [f64; 2],
    cache: Mutex<HashMap<(i64, i64), Option<Matrix2<f64>>>>, // lattice node -> metric, None outside the phase
}

impl<'a> LatticeMetric<'a> {
    pub fn new(model: &'a MetricModel, h: f64, origin: [f64; 2]) -> Self {
        Self {
            model,
            h,
            origin,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn evaluated_nodes(&self) -> usize {
        self.cache.lock().expect("lattice cache").len()
    }

    fn node(&self, a: i64, b: i64) -> std::result::Result<Matrix2<f64>, Stop> {
        if let Some(v) = self.cache.lock().expect("lattice cache").get(&(a, b)) {
            return v.ok_or(Stop::MaskedRegion);
        }
        let (om, xi) = (
            self.origin[0] + a as f64 * self.h,
            self.origin[1] + b as f64 * self.h,
        );
        let value = if self.model.contains(om, xi) {
            self.model.metric(om, xi).ok().filter(is_positive_definite)
        } else {
            None
        };
        self.cache
            .lock()
            .expect("lattice cache")
            .insert((a, b), value);
        value.ok_or(Stop::MaskedRegion)
    }
}

impl MetricInterpolant for LatticeMetric<'_> {
    fn metric_jet(
        &self,
        x: [f64; 2],
    ) -> std::result::Result<(Matrix2<f64>, [Matrix2<f64>; 2]), Stop> {
        interpolate(x, self.origin, [self.h, self.h], |a, b| self.node(a, b))
    }

    fn boundary_distance(&self, x: [f64; 2]) -> Option<f64> {
        Some((x[1] - 0.5 * (1.0 + x[0] * x[0]).sqrt()).abs())
    }
}

/// Constant metric, for sanity checks.
#[derive(Debug, Clone, Copy)]
pub struct ConstantMetric(pub Matrix2<f64>);

impl MetricInterpolant for ConstantMetric {
    fn metric_jet(
        &self,
        _x: [f64; 2],
    ) -> std::result::Result<(Matrix2<f64>, [Matrix2<f64>; 2]), Stop> {
        Ok((self.0, [Matrix2::zeros(); 2]))
    }
}

/// One sample along a geodesic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicSample {
    pub tau: f64,
    pub x: [f64; 2],
    pub v: [f64; 2],
    /// `g_ij ẋ^i ẋ^j - 1` before the velocity is renormalized.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicState {
    pub samples: Vec<GeodesicSample>,
    pub stop: Stop,
}

impl GeodesicState {
    pub fn max_residual(&self) -> f64 {
        self.samples
            .iter()
            .fold(0.0, |a, s| a.max(s.residual.abs()))
    }

    pub fn tau_extent(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.tau - a.tau,
            _ => 0.0,
        }
    }

    pub fn end(&self) -> [f64; 2] {
        self.samples.last().map_or([f64::NAN; 2], |s| s.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicOptions {
    pub tau_max: f64,
    /// Stop within this distance (in `ξ_y`) of the transition line.
    pub boundary_delta: f64,
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    /// Use the negative root for the initial `Ω̇_x`.
    pub negative_branch: bool,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self {
            tau_max: 200.0,
            boundary_delta: 0.02,
            rtol: 1e-10,
            atol: 1e-12,
            h_max: 0.05,
            negative_branch: false,
        }
    }
}

type Geo = [f64; 4];

fn geodesic_rhs(field: &dyn MetricInterpolant, s: &Geo) -> std::result::Result<Geo, Stop> {
    let (g, dg) = field.metric_jet([s[0], s[1]])?;
    let gi = g.try_inverse().ok_or(Stop::MaskedRegion)?;
    let gi = [[gi[(0, 0)], gi[(0, 1)]], [gi[(1, 0)], gi[(1, 1)]]];
    let dga = [
        [
            [dg[0][(0, 0)], dg[0][(0, 1)]],
            [dg[0][(1, 0)], dg[0][(1, 1)]],
        ],
        [
            [dg[1][(0, 0)], dg[1][(0, 1)]],
            [dg[1][(1, 0)], dg[1][(1, 1)]],
        ],
    ];
    let gamma = christoffel_symbols(&gi, &dga);
    let v = [s[2], s[3]];
    let mut acc = [0.0; 2];
    for (i, a) in acc.iter_mut().enumerate() {
        for j in 0..2 {
            for l in 0..2 {
                *a -= gamma[i][j][l] * v[j] * v[l];
            }
        }
    }
    Ok([v[0], v[1], acc[0], acc[1]])
}

fn norm_sq(g: &Matrix2<f64>, v: [f64; 2]) -> f64 {
    let v = Vector2::new(v[0], v[1]);
    (v.transpose() * g * v)[(0, 0)]
}

/// Integrates `ẍ^i + Γ^i_{jl} ẋ^j ẋ^l = 0` from `start` with `ξ̇_y = v0_xi`
/// and `Ω̇_x` fixed by `g_ij ẋ^i ẋ^j = 1`, using an adaptive Dormand-Prince
/// 5(4) pair on the interpolated connection. After every accepted step the
/// velocity is rescaled back onto the unit shell; the recorded residual is
/// the drift before that rescaling.
pub fn geodesic_integrate(
    field: &dyn MetricInterpolant,
    start: [f64; 2],
    v0_xi: f64,
    opts: &GeodesicOptions,
) -> Result<GeodesicState> {
    let (g0, _) = field
        .metric_jet(start)
        .map_err(|s| Error::Domain(format!("start point not interpolable ({})", s.label())))?;
    // g_oo a² + 2 g_ox v a + g_xx v² = 1
    let (goo, gox, gxx) = (g0[(0, 0)], g0[(0, 1)], g0[(1, 1)]);
    let disc = gox * gox * v0_xi * v0_xi - goo * (gxx * v0_xi * v0_xi - 1.0);
    if !(disc >= 0.0) || goo <= 0.0 {
        return Err(Error::Domain(format!(
            "no real initial Ω̇_x for ξ̇_y = {v0_xi} (discriminant {disc:e})"
        )));
    }
    let root = if opts.negative_branch {
        -disc.sqrt()
    } else {
        disc.sqrt()
    };
    let a0 = (-gox * v0_xi + root) / goo;
    let mut s: Geo = [start[0], start[1], a0, v0_xi];
    let mut tau = 0.0;
    let mut samples = vec![GeodesicSample {
        tau,
        x: start,
        v: [a0, v0_xi],
        residual: norm_sq(&g0, [a0, v0_xi]) - 1.0,
    }];
    if field
        .boundary_distance(start)
        .is_some_and(|d| d < opts.boundary_delta)
    {
        return Ok(GeodesicState {
            samples,
            stop: Stop::PhaseBoundary,
        });
    }

    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let _ = C;
    let mut h = opts.h_max.min(1e-3);
    let stop = loop {
        if tau >= opts.tau_max {
            break Stop::TauMax;
        }
        h = h.min(opts.tau_max - tau);
        let mut k = [[0.0; 4]; 7];
        let mut failed = None;
        for stage in 0..7 {
            let mut y = s;
            for (prev, a) in A[stage].iter().enumerate().take(stage) {
                for c in 0..4 {
                    y[c] += h * a * k[prev][c];
                }
            }
            match geodesic_rhs(field, &y) {
                Ok(d) => k[stage] = d,
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(reason) = failed {
            if h > 1e-6 {
                h *= 0.25;
                continue;
            }
            break reason;
        }
        let mut y5 = s;
        let mut err = 0.0f64;
        for c in 0..4 {
            let (mut d5, mut d4) = (0.0, 0.0);
            for st in 0..7 {
                d5 += B5[st] * k[st][c];
                d4 += B4[st] * k[st][c];
            }
            y5[c] += h * d5;
            let scale = opts.atol + opts.rtol * s[c].abs().max(y5[c].abs());
            err = err.max((h * (d5 - d4)).abs() / scale);
        }
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            continue;
        }
        let (g, _) = match field.metric_jet([y5[0], y5[1]]) {
            Ok(m) => m,
            Err(reason) => {
                if h > 1e-6 {
                    h *= 0.25;
                    continue;
                }
                break reason;
            }
        };
        tau += h;
        let v = [y5[2], y5[3]];
        let n2 = norm_sq(&g, v);
        let scale = 1.0 / n2.sqrt();
        s = [y5[0], y5[1], v[0] * scale, v[1] * scale];
        samples.push(GeodesicSample {
            tau,
            x: [s[0], s[1]],
            v: [s[2], s[3]],
            residual: n2 - 1.0,
        });
        if field
            .boundary_distance([s[0], s[1]])
            .is_some_and(|d| d < opts.boundary_delta)
        {
            break Stop::PhaseBoundary;
        }
        let grow = if err > 0.0 {
            (0.9 * err.powf(-0.2)).min(5.0)
        } else {
            5.0
        };
        h = (h * grow).min(opts.h_max);
    };
    Ok(GeodesicState { samples, stop })
}

/// Arc length of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FubiniStudyLength {
    /// `τ_final - τ_initial`, exact for a unit-speed path.
    pub affine: f64,
    /// Trapezoidal `∫√(g_ij ẋ^i ẋ^j) dτ` with the recorded pre-normalization speed.
    pub quadrature: f64,
}

pub fn fubini_study_length(path: &GeodesicState) -> FubiniStudyLength {
    let speed = |s: &GeodesicSample| (1.0 + s.residual).max(0.0).sqrt();
    let quadrature = path
        .samples
        .windows(2)
        .map(|w| 0.5 * (w[1].tau - w[0].tau) * (speed(&w[0]) + speed(&w[1])))
        .sum();
    FubiniStudyLength {
        affine: path.tau_extent(),
        quadrature,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_order_reference_values() {
        let g = metric_first_order(
            Phase::Symmetric,
            &ParameterPoint::new(4.0, 1.0, 0.0),
            100.0,
            0.01,
        )
        .unwrap();
        assert!((g[(0, 2)] - 0.008702).abs() < 1e-6);
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(0, 1)], 0.0);
        for (a, b) in [(1, 1), (1, 2), (2, 2)] {
            assert_eq!(g[(a, b)], 0.0);
        }
        let gg = metric_first_order(
            Phase::Ground,
            &ParameterPoint::new(4.0, 1.0, 0.0),
            100.0,
            0.01,
        )
        .unwrap();
        assert_eq!(gg[(0, 1)], 0.0);
        assert!(metric_first_order(
            Phase::Broken,
            &ParameterPoint::new(4.0, 3.0, 1.0),
            100.0,
            0.01
        )
        .is_err());
        assert!(metric_first_order(
            Phase::Symmetric,
            &ParameterPoint::new(4.0, 3.0, 1.0),
            100.0,
            0.01
        )
        .is_err());
    }

    #[test]
    fn thermodynamic_metric_matches_large_j() {
        for (phase, xi) in [(Phase::Symmetric, 1.0), (Phase::Ground, -1.0)] {
            let point = ParameterPoint::new(4.0, xi, 0.0);
            let geo = FiniteGeometry::new(phase, 400.0, 0.0).unwrap();
            let g = geo.metric(&point).unwrap();
            let tl = metric_zeroth_order(phase, &point, 400.0).unwrap();
            for (a, b) in [(0, 0), (0, 1), (1, 1)] {
                assert!(
                    (g[(a, b)] - tl[(a, b)]).abs() < 0.05 * tl[(a, b)].abs(),
                    "{phase} {a}{b}: {g} vs {tl}"
                );
            }
        }
    }

    #[test]
    fn thermodynamic_metric_is_hyperbolic() {
        let model = MetricModel::new(
            Phase::Symmetric,
            100.0,
            0.0,
            1.0,
            MetricSource::Thermodynamic,
            MetricConvention::Raw,
        )
        .unwrap();
        let r = ricci_at(&model, 4.0, 1.0, 1e-3).unwrap();
        assert!((r + 4.0).abs() < 1e-4, "{r}");
    }

    #[test]
    fn divided_difference_limit() {
        let a = exp_divided_difference(1.3, 1.3, -1.0, 2.0);
        let expect = Complex64::new(0.0, -2.0) * Complex64::from_polar(1.0, -2.6);
        assert!((a - expect).norm() < 1e-14);
        let b = exp_divided_difference(1.3, 0.4, 1.0, 2.0);
        let direct = (Complex64::from_polar(1.0, 2.6) - Complex64::from_polar(1.0, 0.8)) / 0.9;
        assert!((b - direct).norm() < 1e-14);
    }

    #[test]
    fn spectral_metric_matches_finite_differences() {
        for (phase, ox, xi) in [
            (Phase::Symmetric, 1.5, 0.4),
            (Phase::Ground, 1.0, -0.3),
            (Phase::Broken, 1.0, 1.3),
        ] {
            let point = ParameterPoint::new(ox, xi, 1.7);
            for frame in [QuadratureFrame::Lab, QuadratureFrame::Local] {
                let geo = FiniteGeometry::with_frame(phase, 10.0, 0.05, frame).unwrap();
                let g = geo.metric(&point).unwrap();
                let num = geo.metric_numerical(&point, 1e-4).unwrap();
                let scale = g.abs().max();
                assert!(
                    (g - num.g).abs().max() < 1e-6 * scale,
                    "{phase} {frame:?}: {g} vs {}",
                    num.g
                );
                assert!((g - g.transpose()).abs().max() == 0.0);
            }
        }
    }

    #[test]
    fn zero_epsilon_state_is_time_independent() {
        let geo = FiniteGeometry::new(Phase::Symmetric, 8.0, 0.0).unwrap();
        let g = geo.metric(&ParameterPoint::new(1.0, 0.2, 3.0)).unwrap();
        for k in 0..3 {
            assert_eq!(g[(2, k)], 0.0);
        }
        assert!(g[(0, 0)] > 0.0);
    }

    #[test]
    fn constant_field_has_no_connection() {
        let f = MetricField::from_fn(linspace(0.0, 1.0, 5), linspace(0.0, 1.0, 5), |_, _| {
            Some(Matrix2::new(2.0, 0.3, 0.3, 1.0))
        })
        .unwrap();
        let c = christoffel(&f);
        let inner = c[2 * 5 + 2].unwrap();
        assert!(inner.iter().flatten().flatten().all(|v| v.abs() < 1e-14));
        assert!(ricci_scalar(&f).at(2, 2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn polar_christoffel_symbols() {
        let h = 0.01;
        let f = MetricField::from_fn(linspace(1.0, 2.0, 101), linspace(0.0, 1.0, 101), |r, _| {
            Some(Matrix2::new(1.0, 0.0, 0.0, r * r))
        })
        .unwrap();
        let c = christoffel(&f);
        let (a, b) = (50, 50);
        let r = 1.5;
        let g = c[a * 101 + b].unwrap();
        assert!((g[0][1][1] + r).abs() < h * h);
        assert!((g[1][0][1] - 1.0 / r).abs() < h * h);
        assert!((g[1][1][0] - g[1][0][1]).abs() == 0.0);
        assert!(ricci_scalar(&f).at(a, b).unwrap().abs() < 1e-6);
    }

    #[test]
    fn sphere_curvature() {
        let radius = 2.0;
        let f = MetricField::from_fn(linspace(0.5, 2.5, 201), linspace(0.0, 1.0, 11), |th, _| {
            Some(Matrix2::new(
                radius * radius,
                0.0,
                0.0,
                (radius * th.sin()).powi(2),
            ))
        })
        .unwrap();
        let r = ricci_scalar(&f);
        for a in [20, 100, 180] {
            assert!((r.at(a, 5).unwrap() - 2.0 / (radius * radius)).abs() < 1e-4);
        }
        assert!(r.at(0, 5).is_none());
    }

    #[test]
    fn euclidean_geodesic_is_straight() {
        let field = ConstantMetric(Matrix2::identity());
        let opts = GeodesicOptions {
            tau_max: 5.0,
            ..Default::default()
        };
        let path = geodesic_integrate(&field, [0.0, 0.0], 0.8, &opts).unwrap();
        assert_eq!(path.stop, Stop::TauMax);
        let end = path.end();
        assert!((end[0] - 3.0).abs() < 1e-9 && (end[1] - 4.0).abs() < 1e-9);
        let len = fubini_study_length(&path);
        assert!((len.affine - 5.0).abs() < 1e-12);
        assert!((len.quadrature - 5.0).abs() < 1e-9);
        assert!(path.max_residual() < 1e-12);
    }

    #[test]
    fn geodesic_rejects_timelike_start() {
        let field = ConstantMetric(Matrix2::identity());
        assert!(matches!(
            geodesic_integrate(&field, [0.0, 0.0], 2.0, &GeodesicOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sphere_geodesic_follows_great_circle() {
        // Unit sphere in (θ, φ): start at the equator heading north-east.
        let f = MetricField::from_fn(
            linspace(0.2, 2.9, 271),
            linspace(-1.0, 3.0, 401),
            |th, _| Some(Matrix2::new(1.0, 0.0, 0.0, th.sin().powi(2))),
        )
        .unwrap();
        let field = FieldInterpolant {
            field: &f,
            boundary_delta: None,
        };
        let opts = GeodesicOptions {
            tau_max: 1.0,
            ..Default::default()
        };
        let path =
            geodesic_integrate(&field, [std::f64::consts::FRAC_PI_2, 0.0], 0.6, &opts).unwrap();
        assert!(path.max_residual() < 1e-6);
        // Great circle through the equator at inclination with cos i = 0.6:
        // cos θ = -sin i sin s.
        let end = path.end();
        let expect = (-(0.8f64) * 1.0f64.sin()).acos();
        assert!((end[0] - expect).abs() < 1e-5, "{end:?} vs {expect}");
    }
}
