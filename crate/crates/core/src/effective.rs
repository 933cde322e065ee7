//! Large-j quadratic Hamiltonians around the stationary points and the
//! Gaussian dynamics they generate.
//!
//! A quadratic Hamiltonian `a P² + b Q² + c (QP + PQ)` moves the quadrature
//! vector `v = (Q, P)` as `v̇ = M v` with `M = [[2c, 2a], [-2b, -2c]]`, so the
//! Heisenberg-picture quadratures are the first row of `exp(M t)`. That matrix
//! exponential is the ground truth the closed forms here are diffed against.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::spin_model::ModelParams;
use crate::Complex64;

/// Phase of the collective model around which the quadratic expansion is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Highest-energy state, `ξ_y < √(1+Ω_x²)/2`.
    Symmetric,
    /// Highest-energy doublet, `ξ_y > √(1+Ω_x²)/2`.
    Broken,
    /// Ground state, `ξ_y > -√(1+Ω_x²)/2`.
    Ground,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Symmetric, Phase::Broken, Phase::Ground];

    pub fn label(self) -> &'static str {
        match self {
            Phase::Symmetric => "symmetric",
            Phase::Broken => "broken",
            Phase::Ground => "ground",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s.to_ascii_lowercase().as_str() {
            "symmetric" | "sym" | "s" => Some(Phase::Symmetric),
            "broken" | "b" => Some(Phase::Broken),
            "ground" | "g" => Some(Phase::Ground),
            _ => None,
        }
    }

    /// Classical stationary point the phase is expanded around.
    pub fn stationary_label(self) -> u8 {
        match self {
            Phase::Symmetric => 1,
            Phase::Broken => 4,
            Phase::Ground => 2,
        }
    }

    fn inequality(self) -> &'static str {
        match self {
            Phase::Symmetric => "xi_y < sqrt(1+omega_x^2)/2",
            Phase::Broken => "xi_y > sqrt(1+omega_x^2)/2",
            Phase::Ground => "xi_y > -sqrt(1+omega_x^2)/2",
        }
    }

    pub fn contains(self, p: &ModelParams) -> bool {
        let half = 0.5 * p.root();
        match self {
            Phase::Symmetric => p.xi_y < half,
            Phase::Broken => p.xi_y > half,
            Phase::Ground => p.xi_y > -half,
        }
    }

    pub fn check(self, p: &ModelParams) -> Result<()> {
        if self.contains(p) && p.omega_x.is_finite() && p.xi_y.is_finite() {
            Ok(())
        } else {
            Err(Error::PhaseDomain {
                phase: self.label(),
                inequality: self.inequality(),
                omega_x: p.omega_x,
                xi_y: p.xi_y,
            })
        }
    }

    /// Excited-state phase at `p`, `None` on the transition line.
    pub fn excited(p: &ModelParams) -> Option<Phase> {
        if Phase::Symmetric.contains(p) {
            Some(Phase::Symmetric)
        } else if Phase::Broken.contains(p) {
            Some(Phase::Broken)
        } else {
            None
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// `c0 j + c_pp P² + c_qq Q² + c_qp (QP + PQ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticHamiltonian {
    pub phase: Phase,
    /// Constant part per unit `j`.
    pub c0: f64,
    pub c_qq: f64,
    pub c_pp: f64,
    pub c_qp: f64,
    pub omega: f64,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
}

pub fn effective_hamiltonian(phase: Phase, p: &ModelParams) -> Result<QuadraticHamiltonian> {
    phase.check(p)?;
    let s = p.root();
    let xi = p.xi_y;
    let ox = p.omega_x;
    let gm = p.gamma_minus();
    let gp = p.gamma_plus();
    let (c0, c_pp, c_qq, c_qp, omega) = match phase {
        Phase::Symmetric => (s, -0.5 * gm, -0.5 * s, 0.0, s.sqrt() * gm.sqrt()),
        Phase::Ground => (-s, 0.5 * gp, 0.5 * s, 0.0, s.sqrt() * gp.sqrt()),
        Phase::Broken => {
            let q = 4.0 * xi * xi - 1.0;
            let w2 = 4.0 * xi * xi - s * s;
            let w = w2.sqrt();
            (
                (4.0 * xi * xi + ox * ox + 1.0) / (4.0 * xi),
                -xi * w2 / q,
                -(16.0 * xi.powi(4) - 8.0 * xi * xi + ox * ox + 1.0) / (4.0 * xi * q),
                ox * w / (2.0 * q),
                w,
            )
        }
    };
    Ok(QuadraticHamiltonian {
        phase,
        c0,
        c_qq,
        c_pp,
        c_qp,
        omega,
        gamma_minus: gm,
        gamma_plus: gp,
    })
}

impl QuadraticHamiltonian {
    /// Generator `M` of the quadrature flow `v̇ = M v`.
    pub fn flow_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(
            2.0 * self.c_qp,
            2.0 * self.c_pp,
            -2.0 * self.c_qq,
            -2.0 * self.c_qp,
        )
    }

    /// Oscillation frequency implied by the coefficients, `√det M`.
    pub fn flow_frequency(&self) -> f64 {
        self.flow_matrix().determinant().max(0.0).sqrt()
    }
}

/// Heisenberg-picture quadrature `Q(t) = 𝓕 Q + 𝓖 P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureEvolution {
    pub phase: Phase,
    pub t: f64,
    pub f: f64,
    pub g: f64,
}

/// Closed forms for `(𝓕, 𝓖)`.
pub fn heisenberg_quadratures(
    phase: Phase,
    p: &ModelParams,
    t: f64,
) -> Result<QuadratureEvolution> {
    let h = effective_hamiltonian(phase, p)?;
    let s = p.root();
    let (sn, cs) = (h.omega * t).sin_cos();
    let (f, g) = match phase {
        Phase::Symmetric => (cs, -(h.gamma_minus.sqrt() / s.sqrt()) * sn),
        Phase::Ground => (cs, (h.gamma_plus.sqrt() / s.sqrt()) * sn),
        Phase::Broken => {
            let q = 4.0 * p.xi_y * p.xi_y - 1.0;
            (cs + p.omega_x * sn / q, -2.0 * p.xi_y * h.omega * sn / q)
        }
    };
    Ok(QuadratureEvolution { phase, t, f, g })
}

/// `S(t) = exp(M t)`.
pub fn symplectic_oracle(phase: Phase, p: &ModelParams, t: f64) -> Result<Matrix2<f64>> {
    let h = effective_hamiltonian(phase, p)?;
    Ok((h.flow_matrix() * t).exp())
}

/// `(𝓕, 𝓖)` read off the first row of the oracle.
pub fn oracle_quadratures(phase: Phase, p: &ModelParams, t: f64) -> Result<QuadratureEvolution> {
    let s = symplectic_oracle(phase, p, t)?;
    Ok(QuadratureEvolution {
        phase,
        t,
        f: s[(0, 0)],
        g: s[(0, 1)],
    })
}

/// Largest deviation of the closed forms from the oracle over a time list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureDiscrepancy {
    pub phase: Phase,
    pub max_abs_f: f64,
    pub max_abs_g: f64,
    pub samples: usize,
}

impl QuadratureDiscrepancy {
    pub fn max(&self) -> f64 {
        self.max_abs_f.max(self.max_abs_g)
    }
}

pub fn quadrature_discrepancy(
    phase: Phase,
    p: &ModelParams,
    times: &[f64],
) -> Result<QuadratureDiscrepancy> {
    let mut out = QuadratureDiscrepancy {
        phase,
        max_abs_f: 0.0,
        max_abs_g: 0.0,
        samples: times.len(),
    };
    for &t in times {
        let a = heisenberg_quadratures(phase, p, t)?;
        let b = oracle_quadratures(phase, p, t)?;
        out.max_abs_f = out.max_abs_f.max((a.f - b.f).abs());
        out.max_abs_g = out.max_abs_g.max((a.g - b.g).abs());
    }
    Ok(out)
}

/// `Q = u_q γ† + u_q* γ`, `P = u_p γ† + u_p* γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BogoliubovTransform {
    pub phase: Phase,
    pub u_q: Complex64,
    pub u_p: Complex64,
}

impl BogoliubovTransform {
    /// `[Q, P] / i`, equal to `[γ, γ†]` for a canonical transform.
    pub fn commutator(&self) -> f64 {
        2.0 * (self.u_q.conj() * self.u_p).im
    }

    /// Symmetrized covariance of `(Q, P)` in the Bogoliubov vacuum.
    pub fn vacuum_covariance(&self) -> Matrix2<f64> {
        let off = (self.u_q.conj() * self.u_p).re;
        Matrix2::new(self.u_q.norm_sqr(), off, off, self.u_p.norm_sqr())
    }
}

pub fn bogoliubov(phase: Phase, p: &ModelParams) -> Result<BogoliubovTransform> {
    let h = effective_hamiltonian(phase, p)?;
    let s = p.root();
    let (u_q, u_p) = match phase {
        Phase::Symmetric | Phase::Ground => {
            let gamma = if phase == Phase::Symmetric {
                h.gamma_minus
            } else {
                h.gamma_plus
            };
            (
                Complex64::new((gamma / (4.0 * s)).powf(0.25), 0.0),
                Complex64::new(0.0, (s / (4.0 * gamma)).powf(0.25)),
            )
        }
        Phase::Broken => {
            let xi = p.xi_y;
            let q = 4.0 * xi * xi - 1.0;
            let w = h.omega;
            let v = Complex64::new(
                p.omega_x / (4.0 * xi * w * q).sqrt(),
                (q / (4.0 * xi * w)).sqrt(),
            );
            (Complex64::new((xi * w / q).sqrt(), 0.0), v)
        }
    };
    Ok(BogoliubovTransform { phase, u_q, u_p })
}

/// `𝓑(t) = u_q 𝓕(t) + u_p 𝓖(t)`, the `γ†` coefficient of `Q(t)`.
pub fn b_coefficient(phase: Phase, p: &ModelParams, t: f64) -> Result<Complex64> {
    let b = bogoliubov(phase, p)?;
    let q = oracle_quadratures(phase, p, t)?;
    Ok(b.u_q * q.f + b.u_p * q.g)
}

pub const DEFAULT_N_MAX: usize = 32;
pub const MIN_N_MAX: usize = 8;
/// Largest discarded Fock norm accepted by `perturbed_state`.
pub const TAIL_TOL: f64 = 1e-10;

/// `e^{iεQ(t)}|0⟩`, a coherent state of the Bogoliubov mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedGaussianState {
    pub phase: Phase,
    pub t: f64,
    pub epsilon: f64,
    pub b: Complex64,
    /// Fock amplitudes `c_0..c_{n_max}`.
    pub amplitudes: Vec<Complex64>,
    /// Norm not captured by the truncation.
    pub tail: f64,
    /// `(⟨Q⟩, ⟨P⟩)`.
    pub center: Vector2<f64>,
    pub covariance: Matrix2<f64>,
}

impl PerturbedGaussianState {
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `⟨γ†γ⟩`.
    pub fn mean_occupation(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(l, c)| l as f64 * c.norm_sqr())
            .sum()
    }
}

pub fn perturbed_state(
    phase: Phase,
    p: &ModelParams,
    t: f64,
    n_max: usize,
) -> Result<PerturbedGaussianState> {
    if n_max < MIN_N_MAX {
        return Err(Error::Domain(format!(
            "n_max = {n_max} is below {MIN_N_MAX}"
        )));
    }
    let b = b_coefficient(phase, p, t)?;
    let alpha = Complex64::new(0.0, p.epsilon) * b;
    let n = alpha.norm_sqr();
    let mut amplitudes = Vec::with_capacity(n_max + 1);
    let mut c = Complex64::new((-0.5 * n).exp(), 0.0);
    for l in 0..=n_max {
        if l > 0 {
            c *= alpha / (l as f64).sqrt();
        }
        amplitudes.push(c);
    }
    let kept: f64 = amplitudes.iter().map(|c| c.norm_sqr()).sum();
    let tail = (1.0 - kept).max(0.0);
    if tail > TAIL_TOL {
        return Err(Error::Truncation { n_max, tail });
    }
    let (center, covariance) = phase_space_snapshot(phase, p, t)?;
    Ok(PerturbedGaussianState {
        phase,
        t,
        epsilon: p.epsilon,
        b,
        amplitudes,
        tail,
        center,
        covariance,
    })
}

/// Center and covariance of `e^{iεQ(t)}|0⟩` in the `(Q, P)` plane.
///
/// `e^{-iεQ(t)} (Q, P) e^{iεQ(t)} = (Q - ε𝓖, P + ε𝓕)`, so the center is
/// `ε(-𝓖, 𝓕)` and the covariance is that of the vacuum.
pub fn phase_space_snapshot(
    phase: Phase,
    p: &ModelParams,
    t: f64,
) -> Result<(Vector2<f64>, Matrix2<f64>)> {
    let q = oracle_quadratures(phase, p, t)?;
    let cov = bogoliubov(phase, p)?.vacuum_covariance();
    Ok((Vector2::new(-p.epsilon * q.g, p.epsilon * q.f), cov))
}
