//! Finite-j extended LMG model.
//!
//! The Hamiltonian is `H = J_z + Ω_x J_x + (ξ_y / j) J_y²` acting on the
//! maximal spin sector of dimension `2j + 1`. Matrices use the `|j, m⟩` basis
//! with `m = -j, ..., +j` ascending, so basis index `k` carries `m = k - j`.
//!
//! Coherent states are built as `(1+|z|²)^{-j} e^{z J_+} |j,-j⟩` with
//! `z = tan(θ/2) e^{-iφ}`. This construction gives the polarisation
//! `⟨J⟩ = j (sinθ cosφ, sinθ sinφ, -cosθ)`, and its energy per spin is exactly
//! [`classical_energy`].

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::Complex64;

/// Largest Hilbert-space dimension accepted by [`build_spin_ops`].
pub const MAX_DIM: usize = 4096;

/// Collective spin length `j`, stored as the integer `2j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Spin {
    twice: u32,
}

impl Spin {
    pub fn new(j: f64) -> Result<Self> {
        let twice = 2.0 * j;
        let rounded = twice.round();
        if !j.is_finite() || rounded < 1.0 || (twice - rounded).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "spin length must be a positive half-integer, got j = {j}"
            )));
        }
        Ok(Self {
            twice: rounded as u32,
        })
    }

    pub fn from_twice(twice: u32) -> Result<Self> {
        if twice == 0 {
            return Err(Error::Domain("spin length must be positive".into()));
        }
        Ok(Self { twice })
    }

    pub fn j(&self) -> f64 {
        f64::from(self.twice) / 2.0
    }

    pub fn twice_j(&self) -> u32 {
        self.twice
    }

    pub fn dim(&self) -> usize {
        self.twice as usize + 1
    }
}

/// A point of the model's parameter space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub omega_x: f64,
    pub xi_y: f64,
    pub spin: Spin,
    pub epsilon: f64,
    /// Two-level splitting, fixed to 1.
    pub omega: f64,
}

impl ModelParams {
    pub fn new(omega_x: f64, xi_y: f64, j: f64, epsilon: f64) -> Result<Self> {
        if !omega_x.is_finite() || !xi_y.is_finite() {
            return Err(Error::Domain("Ω_x and ξ_y must be finite".into()));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::Domain(format!(
                "perturbation strength must be finite and non-negative, got {epsilon}"
            )));
        }
        if epsilon > 0.1 {
            log::warn!("epsilon = {epsilon} is outside the small-perturbation regime (<= 0.1)");
        }
        Ok(Self {
            omega_x,
            xi_y,
            spin: Spin::new(j)?,
            epsilon,
            omega: 1.0,
        })
    }

    pub fn j(&self) -> f64 {
        self.spin.j()
    }

    pub fn with_xi(mut self, xi_y: f64) -> Self {
        self.xi_y = xi_y;
        self
    }

    pub fn with_omega_x(mut self, omega_x: f64) -> Self {
        self.omega_x = omega_x;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// `√(1 + Ω_x²)`.
    pub fn root(&self) -> f64 {
        (1.0 + self.omega_x * self.omega_x).sqrt()
    }

    /// `Γ_- = √(1+Ω_x²) - 2ξ_y`.
    pub fn gamma_minus(&self) -> f64 {
        self.root() - 2.0 * self.xi_y
    }

    /// `Γ_+ = √(1+Ω_x²) + 2ξ_y`.
    pub fn gamma_plus(&self) -> f64 {
        self.root() + 2.0 * self.xi_y
    }

    /// Position of the excited-state transition line, `√(1+Ω_x²)/2`.
    pub fn critical_xi(&self) -> f64 {
        0.5 * self.root()
    }

    pub fn qpt_lines(&self) -> QptLines {
        qpt_lines(self)
    }
}

/// Dense collective spin operators for one spin length.
#[derive(Debug, Clone)]
pub struct CollectiveSpinOps {
    pub spin: Spin,
    pub jx: DMatrix<f64>,
    /// `J_y` is purely imaginary in the `|j,m⟩` basis.
    pub jy: DMatrix<Complex64>,
    pub jz: DMatrix<f64>,
    pub j2: DMatrix<f64>,
    /// `J_y²`, real symmetric.
    pub jy2: DMatrix<f64>,
}

impl CollectiveSpinOps {
    pub fn dim(&self) -> usize {
        self.spin.dim()
    }

    pub fn jx_complex(&self) -> DMatrix<Complex64> {
        self.jx.map(|v| Complex64::new(v, 0.0))
    }

    pub fn jz_complex(&self) -> DMatrix<Complex64> {
        self.jz.map(|v| Complex64::new(v, 0.0))
    }

    /// Largest entry of `|[J_x, J_y] - i J_z|` and its cyclic partners.
    pub fn commutator_defect(&self) -> f64 {
        let jx = self.jx_complex();
        let jz = self.jz_complex();
        let jy = &self.jy;
        let i = Complex64::new(0.0, 1.0);
        let comm = |a: &DMatrix<Complex64>, b: &DMatrix<Complex64>| a * b - b * a;
        let d1 = comm(&jx, jy) - &jz * i;
        let d2 = comm(jy, &jz) - &jx * i;
        let d3 = comm(&jz, &jx) - jy * i;
        [d1, d2, d3]
            .iter()
            .map(|d| d.iter().map(|c| c.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

/// Ladder-operator construction of `J_x, J_y, J_z, J²`.
pub fn build_spin_ops(spin: Spin) -> Result<CollectiveSpinOps> {
    let d = spin.dim();
    if d > MAX_DIM {
        return Err(Error::Resource(format!(
            "dimension {d} exceeds the guard of {MAX_DIM}"
        )));
    }
    let j = spin.j();
    // (J_+)_{k+1,k} = √(j(j+1) - m(m+1)), m = k - j
    let ladder: Vec<f64> = (0..d.saturating_sub(1))
        .map(|k| {
            let m = k as f64 - j;
            (j * (j + 1.0) - m * (m + 1.0)).max(0.0).sqrt()
        })
        .collect();

    let mut jx = DMatrix::zeros(d, d);
    let mut jy = DMatrix::from_element(d, d, Complex64::new(0.0, 0.0));
    for (k, &a) in ladder.iter().enumerate() {
        jx[(k + 1, k)] = 0.5 * a;
        jx[(k, k + 1)] = 0.5 * a;
        jy[(k + 1, k)] = Complex64::new(0.0, -0.5 * a);
        jy[(k, k + 1)] = Complex64::new(0.0, 0.5 * a);
    }
    let jz = DMatrix::from_diagonal(&DVector::from_fn(d, |k, _| k as f64 - j));
    let j2 = DMatrix::identity(d, d) * (j * (j + 1.0));

    // J_y² = -(J_+ - J_-)²/4, assembled from the tridiagonal ladder directly.
    let mut jy2 = DMatrix::zeros(d, d);
    for k in 0..d {
        let up = if k + 1 < d { ladder[k] } else { 0.0 };
        let down = if k > 0 { ladder[k - 1] } else { 0.0 };
        jy2[(k, k)] = 0.25 * (up * up + down * down);
        if k + 2 < d {
            let v = -0.25 * ladder[k] * ladder[k + 1];
            jy2[(k + 2, k)] = v;
            jy2[(k, k + 2)] = v;
        }
    }

    Ok(CollectiveSpinOps {
        spin,
        jx,
        jy,
        jz,
        j2,
        jy2,
    })
}

/// `H = Ω J_z + Ω_x J_x + (ξ_y/j) J_y²`.
pub fn build_hamiltonian(p: &ModelParams, ops: &CollectiveSpinOps) -> Result<DMatrix<f64>> {
    if ops.spin != p.spin {
        return Err(Error::Contract(format!(
            "operators built for j = {} but parameters carry j = {}",
            ops.spin.j(),
            p.j()
        )));
    }
    Ok(&ops.jz * p.omega + &ops.jx * p.omega_x + &ops.jy2 * (p.xi_y / p.j()))
}

/// Point on the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochPoint {
    pub theta: f64,
    pub phi: f64,
}

impl BlochPoint {
    /// Validates `θ ∈ [0, π]` and wraps `φ` into `[0, 2π)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::Domain("Bloch angles must be finite".into()));
        }
        if !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(Error::Domain(format!("θ = {theta} outside [0, π]")));
        }
        Ok(Self {
            theta,
            phi: phi.rem_euclid(std::f64::consts::TAU),
        })
    }

    /// Canonical coordinates `(Q, P)`.
    pub fn canonical(&self) -> (f64, f64) {
        let r = (2.0 * (1.0 - self.theta.cos())).sqrt();
        (r * self.phi.cos(), -r * self.phi.sin())
    }
}

/// Bloch coherent state `(1+|z|²)^{-j} e^{z J_+}|j,-j⟩`, `z = tan(θ/2)e^{-iφ}`.
///
/// Amplitudes are `√C(2j,k) sin^k(θ/2) cos^{2j-k}(θ/2) e^{-ikφ}`, evaluated in
/// log space. At `θ = π` the closed-form limit `e^{-2ijφ}|j,+j⟩` is returned.
pub fn coherent_state(spin: Spin, b: BlochPoint) -> DVector<Complex64> {
    let d = spin.dim();
    let n = spin.twice_j() as usize;
    let (s, c) = (0.5 * b.theta).sin_cos();
    let mut out = DVector::from_element(d, Complex64::new(0.0, 0.0));
    if b.theta == 0.0 || s == 0.0 {
        out[0] = Complex64::new(1.0, 0.0);
        return out;
    }
    if b.theta == std::f64::consts::PI || c <= 0.0 {
        out[n] = Complex64::from_polar(1.0, -(n as f64) * b.phi);
        return out;
    }
    let (ls, lc) = (s.ln(), c.ln());
    let mut log_binom = 0.0;
    for k in 0..d {
        if k > 0 {
            log_binom += ((n - k + 1) as f64 / k as f64).ln();
        }
        let log_mag = 0.5 * log_binom + k as f64 * ls + (n - k) as f64 * lc;
        out[k] = Complex64::from_polar(log_mag.exp(), -(k as f64) * b.phi);
    }
    let norm = out.norm();
    out / Complex64::new(norm, 0.0)
}

/// `(⟨J_x⟩, ⟨J_y⟩, ⟨J_z⟩)` in a normalized state.
pub fn polarization(ops: &CollectiveSpinOps, psi: &DVector<Complex64>) -> [f64; 3] {
    let jx = ops.jx_complex();
    let jz = ops.jz_complex();
    let ex = |m: &DMatrix<Complex64>| psi.dotc(&(m * psi)).re;
    [ex(&jx), ex(&ops.jy), ex(&jz)]
}

/// Classical energy per spin `h(θ, φ) = -cosθ + Ω_x sinθ cosφ + ξ_y sin²θ sin²φ`.
pub fn classical_energy(p: &ModelParams, b: BlochPoint) -> f64 {
    let (st, ct) = b.theta.sin_cos();
    let (sp, cp) = b.phi.sin_cos();
    -p.omega * ct + p.omega_x * st * cp + p.xi_y * st * st * sp * sp
}

/// `(∂h/∂θ, ∂h/∂φ)`.
pub fn classical_gradient(p: &ModelParams, b: BlochPoint) -> Vector2<f64> {
    let (st, ct) = b.theta.sin_cos();
    let (sp, cp) = b.phi.sin_cos();
    Vector2::new(
        p.omega * st + p.omega_x * ct * cp + 2.0 * p.xi_y * st * ct * sp * sp,
        -p.omega_x * st * sp + 2.0 * p.xi_y * st * st * sp * cp,
    )
}

fn classical_hessian(p: &ModelParams, b: BlochPoint) -> Matrix2<f64> {
    let (st, ct) = b.theta.sin_cos();
    let (sp, cp) = b.phi.sin_cos();
    let (s2t, c2t) = (2.0 * b.theta).sin_cos();
    let (s2p, c2p) = (2.0 * b.phi).sin_cos();
    let tt = p.omega * ct - p.omega_x * st * cp + 2.0 * p.xi_y * c2t * sp * sp;
    let tp = -p.omega_x * ct * sp + p.xi_y * s2t * s2p;
    let pp = -p.omega_x * st * cp + 2.0 * p.xi_y * st * st * c2p;
    Matrix2::new(tt, tp, tp, pp)
}

/// Newton iteration on `∇h = 0` starting from `seed`.
///
/// Returns the refined point, or the seed when the Hessian is singular there
/// (poles of the sphere chart).
pub fn refine_stationary(p: &ModelParams, seed: BlochPoint) -> BlochPoint {
    let mut x = Vector2::new(seed.theta, seed.phi);
    for _ in 0..50 {
        let b = BlochPoint {
            theta: x[0],
            phi: x[1],
        };
        let g = classical_gradient(p, b);
        if g.norm() < 1e-15 {
            break;
        }
        let Some(inv) = classical_hessian(p, b).try_inverse() else {
            break;
        };
        let step = inv * g;
        x -= step;
        x[0] = x[0].clamp(0.0, std::f64::consts::PI);
        if step.norm() < 1e-16 {
            break;
        }
    }
    BlochPoint {
        theta: x[0],
        phi: x[1].rem_euclid(std::f64::consts::TAU),
    }
}

/// A classical stationary point and the parameter domain where it exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryPoint {
    pub label: u8,
    pub point: BlochPoint,
    pub energy: f64,
    /// Closed-form energy `e_n`.
    pub closed_form_energy: f64,
    pub valid: bool,
}

/// Stationary points 1-4 of the classical energy.
///
/// Points 1 and 2 have energies `±√(1+Ω_x²)`; point 1 sits at
/// `θ = arccos(-1/√(1+Ω_x²))` on `φ = 0`, point 2 at `θ = arccos(+1/√(1+Ω_x²))`
/// on `φ = π` (meridians swap for `Ω_x < 0`). Points 3 and 4 exist only beyond the
/// ground-state and excited-state transition lines respectively. Every valid
/// point is polished by Newton iteration on the analytic gradient.
pub fn stationary_points(p: &ModelParams) -> Vec<StationaryPoint> {
    use std::f64::consts::PI;
    let root = p.root();
    let xi = p.xi_y;
    let clamp_acos = |v: f64| v.clamp(-1.0, 1.0).acos();
    let e34 = if xi != 0.0 {
        (1.0 + p.omega_x * p.omega_x) / (4.0 * xi) + xi
    } else {
        f64::NAN
    };
    let q = 4.0 * xi * xi - 1.0;
    let theta34 = clamp_acos(-1.0 / (2.0 * xi));
    let phi_ratio = if q > 0.0 {
        p.omega_x / q.sqrt()
    } else {
        f64::NAN
    };
    let phi1 = if p.omega_x >= 0.0 { 0.0 } else { PI };

    let seeds = [
        (1, clamp_acos(-1.0 / root), phi1, root, true),
        (2, clamp_acos(1.0 / root), PI - phi1, -root, true),
        (3, theta34, clamp_acos(-phi_ratio), e34, xi <= -0.5 * root),
        (4, theta34, clamp_acos(phi_ratio), e34, xi >= 0.5 * root),
    ];
    seeds
        .into_iter()
        .map(|(label, theta, phi, closed, valid)| {
            let seed = BlochPoint {
                theta: if theta.is_finite() { theta } else { 0.0 },
                phi: if phi.is_finite() { phi } else { 0.0 },
            };
            let point = if valid {
                refine_stationary(p, seed)
            } else {
                seed
            };
            StationaryPoint {
                label,
                point,
                energy: classical_energy(p, point),
                closed_form_energy: closed,
                valid,
            }
        })
        .collect()
}

/// Returns stationary point `label` (1-4).
pub fn stationary_point(p: &ModelParams, label: u8) -> Result<StationaryPoint> {
    stationary_points(p)
        .into_iter()
        .find(|s| s.label == label)
        .ok_or_else(|| Error::Domain(format!("no stationary point with label {label}")))
}

/// Ground-state (`gs`) and excited-state (`es`) transition lines in `ξ_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QptLines {
    pub gs: f64,
    pub es: f64,
}

pub fn qpt_lines(p: &ModelParams) -> QptLines {
    let half = 0.5 * p.root();
    QptLines {
        gs: -half,
        es: half,
    }
}
