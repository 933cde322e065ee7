//! Exact finite-j time evolution and FOTOC-type observables.
//!
//! Every observable is evaluated in the eigenbasis of `H`, so a time grid of
//! any density costs one diagonalization plus one matrix-vector product per
//! sample.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    adjoint_mul_real, fingerprint, real_mul_complex, real_tr_mul_complex, HermitianSpectrum,
    RealSpectrum,
};
use crate::spin_model::{
    build_hamiltonian, build_spin_ops, coherent_state, BlochPoint, CollectiveSpinOps, ModelParams,
};
use crate::Complex64;

/// Spectral form of `e^{-iHt}` for a real symmetric `H`.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Hash of the bit pattern of the source Hamiltonian.
    pub fingerprint: u64,
}

pub fn make_propagator(h: &DMatrix<f64>) -> Result<Propagator> {
    let spectrum = RealSpectrum::new(h)?;
    Ok(Propagator {
        eigenvalues: spectrum.values,
        eigenvectors: spectrum.vectors,
        fingerprint: fingerprint(h),
    })
}

impl Propagator {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Coefficients `Vᵀψ` of a state in the eigenbasis.
    pub fn to_eigenbasis(&self, psi: &DVector<Complex64>) -> DVector<Complex64> {
        real_tr_mul_complex(&self.eigenvectors, psi)
    }

    pub fn from_eigenbasis(&self, c: &DVector<Complex64>) -> DVector<Complex64> {
        real_mul_complex(&self.eigenvectors, c)
    }

    /// Multiplies eigenbasis coefficients by `e^{-iλt}`.
    pub fn phase_eigenbasis(&self, c: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        DVector::from_fn(c.len(), |k, _| {
            c[k] * Complex64::from_polar(1.0, -self.eigenvalues[k] * t)
        })
    }

    /// `e^{-iHt}ψ`.
    pub fn evolve(&self, psi: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        let c = self.to_eigenbasis(psi);
        self.from_eigenbasis(&self.phase_eigenbasis(&c, t))
    }

    /// Dense `e^{-iHt}`.
    pub fn unitary(&self, t: f64) -> DMatrix<Complex64> {
        let v = self.eigenvectors.map(|x| Complex64::new(x, 0.0));
        let phases = DVector::from_fn(self.dim(), |k, _| {
            Complex64::from_polar(1.0, -self.eigenvalues[k] * t)
        });
        &v * DMatrix::from_diagonal(&phases) * v.transpose()
    }
}

/// A sampled scalar observable.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub label: String,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<Complex64>, label: impl Into<String>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Contract(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Contract("times must be strictly increasing".into()));
        }
        Ok(Self {
            times,
            values,
            label: label.into(),
        })
    }

    pub fn from_real(times: Vec<f64>, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let values = values.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        Self::new(times, values, label)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.re).collect()
    }

    /// Sample variance of the real part.
    pub fn variance_re(&self) -> f64 {
        let re = self.re();
        let n = re.len() as f64;
        let mean = re.iter().sum::<f64>() / n;
        re.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    /// Largest `|a_k - b_k|` against a series on the same grid.
    pub fn max_abs_diff(&self, other: &TimeSeries) -> Result<f64> {
        if self.times != other.times {
            return Err(Error::Contract(
                "series are sampled on different grids".into(),
            ));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

/// `[0, dt, 2dt, ..., t_max]`.
pub fn uniform_grid(t_max: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::Domain(format!(
            "invalid grid t_max = {t_max}, dt = {dt}"
        )));
    }
    let n = (t_max / dt + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| k as f64 * dt).collect())
}

/// Hermitian operator perturbing the state.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// `Q = J_x / √j`.
    Q,
    /// `P = -J_y / √j`.
    P,
    Jx,
    Jy,
    Jz,
    Custom(DMatrix<Complex64>),
}

impl Generator {
    pub fn label(&self) -> &'static str {
        match self {
            Generator::Q => "Q",
            Generator::P => "P",
            Generator::Jx => "Jx",
            Generator::Jy => "Jy",
            Generator::Jz => "Jz",
            Generator::Custom(_) => "custom",
        }
    }

    pub fn matrix(&self, ops: &CollectiveSpinOps) -> DMatrix<Complex64> {
        let inv_root = 1.0 / ops.spin.j().sqrt();
        match self {
            Generator::Q => ops.jx_complex() * Complex64::new(inv_root, 0.0),
            Generator::P => &ops.jy * Complex64::new(-inv_root, 0.0),
            Generator::Jx => ops.jx_complex(),
            Generator::Jy => ops.jy.clone(),
            Generator::Jz => ops.jz_complex(),
            Generator::Custom(m) => m.clone(),
        }
    }

    /// Real matrix form, when the generator is real in the `|j,m⟩` basis.
    pub fn real_matrix(&self, ops: &CollectiveSpinOps) -> Option<DMatrix<f64>> {
        let inv_root = 1.0 / ops.spin.j().sqrt();
        match self {
            Generator::Q => Some(&ops.jx * inv_root),
            Generator::Jx => Some(ops.jx.clone()),
            Generator::Jz => Some(ops.jz.clone()),
            Generator::Custom(m) if m.iter().all(|c| c.im == 0.0) => Some(m.map(|c| c.re)),
            _ => None,
        }
    }
}

/// Configuration of a FOTOC evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FotocSpec {
    pub generator: Generator,
    pub epsilon: f64,
    pub initial: BlochPoint,
    /// Replace `G` by `G t` at each sample time.
    pub rescale: bool,
}

impl FotocSpec {
    pub fn new(generator: Generator, epsilon: f64, initial: BlochPoint) -> Self {
        Self {
            generator,
            epsilon,
            initial,
            rescale: false,
        }
    }

    pub fn rescaled(mut self) -> Self {
        self.rescale = true;
        self
    }
}

/// Exact finite-j model: operators, Hamiltonian and its propagator.
#[derive(Debug)]
pub struct FiniteModel {
    pub params: ModelParams,
    pub ops: CollectiveSpinOps,
    pub hamiltonian: DMatrix<f64>,
    pub propagator: Propagator,
    jx_spectrum: OnceLock<RealSpectrum>,
}

impl FiniteModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        let ops = build_spin_ops(params.spin)?;
        let hamiltonian = build_hamiltonian(&params, &ops)?;
        let propagator = make_propagator(&hamiltonian)?;
        Ok(Self::from_parts(params, ops, hamiltonian, propagator))
    }

    /// Assembles a model from a previously computed propagator.
    pub fn from_parts(
        params: ModelParams,
        ops: CollectiveSpinOps,
        hamiltonian: DMatrix<f64>,
        propagator: Propagator,
    ) -> Self {
        Self {
            params,
            ops,
            hamiltonian,
            propagator,
            jx_spectrum: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.ops.dim()
    }

    pub fn coherent(&self, b: BlochPoint) -> DVector<Complex64> {
        coherent_state(self.params.spin, b)
    }

    fn jx_spectrum(&self) -> Result<&RealSpectrum> {
        if let Some(s) = self.jx_spectrum.get() {
            return Ok(s);
        }
        let s = RealSpectrum::new(&self.ops.jx)?;
        Ok(self.jx_spectrum.get_or_init(|| s))
    }

    /// Eigen-decomposition of a generator. `J_y` and `P` reuse the `J_x`
    /// eigenvectors through `J_y = e^{-iπJ_z/2} J_x e^{iπJ_z/2}`.
    pub fn generator_spectrum(&self, g: &Generator) -> Result<HermitianSpectrum> {
        let j = self.params.j();
        let inv_root = 1.0 / j.sqrt();
        let rotate_to_y = |s: &RealSpectrum, scale: f64| {
            let d = s.dim();
            let vectors = DMatrix::from_fn(d, d, |r, c| {
                let m = r as f64 - j;
                Complex64::from_polar(1.0, -0.5 * std::f64::consts::PI * m) * s.vectors[(r, c)]
            });
            HermitianSpectrum {
                values: &s.values * scale,
                vectors,
            }
        };
        Ok(match g {
            Generator::Jx => self.jx_spectrum()?.to_complex(),
            Generator::Q => {
                let mut s = self.jx_spectrum()?.to_complex();
                s.values *= inv_root;
                s
            }
            Generator::Jy => rotate_to_y(self.jx_spectrum()?, 1.0),
            Generator::P => rotate_to_y(self.jx_spectrum()?, -inv_root),
            Generator::Jz => {
                let d = self.dim();
                HermitianSpectrum {
                    values: DVector::from_fn(d, |k, _| k as f64 - j),
                    vectors: DMatrix::identity(d, d),
                }
            }
            Generator::Custom(m) => {
                if m.nrows() != self.dim() || m.ncols() != self.dim() {
                    return Err(Error::Contract(format!(
                        "custom generator is {}x{}, model dimension is {}",
                        m.nrows(),
                        m.ncols(),
                        self.dim()
                    )));
                }
                HermitianSpectrum::new(m)?
            }
        })
    }

    /// For each time, the amplitudes of `e^{-iHt}|z⟩` in the generator eigenbasis.
    fn generator_amplitudes<'a>(
        &'a self,
        g: &'a HermitianSpectrum,
        initial: BlochPoint,
    ) -> impl Fn(f64) -> DVector<Complex64> + Sync + 'a {
        let c = self.propagator.to_eigenbasis(&self.coherent(initial));
        let overlap = adjoint_mul_real(&g.vectors, &self.propagator.eigenvectors);
        move |t| &overlap * self.propagator.phase_eigenbasis(&c, t)
    }

    /// `F(t) = |⟨z|e^{iHt} e^{iεG} e^{-iHt}|z⟩|²`, with `G → Gt` when rescaled.
    pub fn fotoc(&self, spec: &FotocSpec, times: &[f64]) -> Result<TimeSeries> {
        let g = self.generator_spectrum(&spec.generator)?;
        let amps = self.generator_amplitudes(&g, spec.initial);
        let values: Vec<Complex64> = times
            .par_iter()
            .map(|&t| {
                let b = amps(t);
                let scale = if spec.rescale {
                    spec.epsilon * t
                } else {
                    spec.epsilon
                };
                if scale == 0.0 {
                    return Complex64::new(1.0, 0.0);
                }
                let w: Complex64 = b
                    .iter()
                    .zip(g.values.iter())
                    .map(|(bk, gk)| Complex64::from_polar(bk.norm_sqr(), scale * gk))
                    .sum();
                Complex64::new(w.norm_sqr(), 0.0)
            })
            .collect();
        let label = format!("fotoc_{}", spec.generator.label());
        TimeSeries::new(times.to_vec(), values, label)
    }

    /// `F_Q(t) + F_P(t)`.
    pub fn fotoc_sum_qp(
        &self,
        epsilon: f64,
        initial: BlochPoint,
        times: &[f64],
    ) -> Result<TimeSeries> {
        let fq = self.fotoc(&FotocSpec::new(Generator::Q, epsilon, initial), times)?;
        let fp = self.fotoc(&FotocSpec::new(Generator::P, epsilon, initial), times)?;
        let values = fq
            .values
            .iter()
            .zip(&fp.values)
            .map(|(a, b)| a + b)
            .collect();
        TimeSeries::new(times.to_vec(), values, "fotoc_Q+P")
    }

    /// `σ_G²(t)` of the Heisenberg-evolved generator in `|z⟩`.
    pub fn generator_variance(&self, spec: &FotocSpec, times: &[f64]) -> Result<TimeSeries> {
        let g = self.generator_spectrum(&spec.generator)?;
        let amps = self.generator_amplitudes(&g, spec.initial);
        let values: Vec<f64> = times
            .par_iter()
            .map(|&t| {
                let b = amps(t);
                let (m1, m2) =
                    b.iter()
                        .zip(g.values.iter())
                        .fold((0.0, 0.0), |(m1, m2), (bk, gk)| {
                            let w = bk.norm_sqr();
                            (m1 + w * gk, m2 + w * gk * gk)
                        });
                (m2 - m1 * m1).max(0.0)
            })
            .collect();
        TimeSeries::from_real(
            times.to_vec(),
            values,
            format!("variance_{}", spec.generator.label()),
        )
    }

    /// Second-order form `1 - ε²σ_G²(t)`.
    pub fn variance_fotoc(&self, spec: &FotocSpec, times: &[f64]) -> Result<TimeSeries> {
        let var = self.generator_variance(spec, times)?;
        let eps2 = spec.epsilon * spec.epsilon;
        let values = var.re().into_iter().map(|v| 1.0 - eps2 * v).collect();
        TimeSeries::from_real(
            times.to_vec(),
            values,
            format!("variance_fotoc_{}", spec.generator.label()),
        )
    }

    /// `𝓛(t) = |⟨z|e^{iHt} e^{-i(H-εG)t}|z⟩|²`.
    pub fn loschmidt_echo(&self, spec: &FotocSpec, times: &[f64]) -> Result<TimeSeries> {
        let z = self.coherent(spec.initial);
        let c = self.propagator.to_eigenbasis(&z);
        let eps = spec.epsilon;
        let (values_p, overlap, cp): (DVector<f64>, DMatrix<Complex64>, DVector<Complex64>) =
            match spec.generator.real_matrix(&self.ops) {
                Some(gr) => {
                    let perturbed = RealSpectrum::new(&(&self.hamiltonian - gr * eps))?;
                    let overlap = self
                        .propagator
                        .eigenvectors
                        .tr_mul(&perturbed.vectors)
                        .map(|v| Complex64::new(v, 0.0));
                    let cp = real_tr_mul_complex(&perturbed.vectors, &z);
                    (perturbed.values, overlap, cp)
                }
                None => {
                    let gm = spec.generator.matrix(&self.ops);
                    let h = self.hamiltonian.map(|v| Complex64::new(v, 0.0));
                    let perturbed = HermitianSpectrum::new(&(h - gm * Complex64::new(eps, 0.0)))?;
                    let overlap =
                        adjoint_mul_real(&perturbed.vectors, &self.propagator.eigenvectors)
                            .adjoint();
                    let cp = perturbed.vectors.adjoint() * &z;
                    (perturbed.values, overlap, cp)
                }
            };
        let values: Vec<Complex64> = times
            .par_iter()
            .map(|&t| {
                let forward = DVector::from_fn(cp.len(), |k, _| {
                    cp[k] * Complex64::from_polar(1.0, -values_p[k] * t)
                });
                let moved = &overlap * forward;
                let back = self.propagator.phase_eigenbasis(&c, t);
                Complex64::new(back.dotc(&moved).norm_sqr(), 0.0)
            })
            .collect();
        TimeSeries::new(
            times.to_vec(),
            values,
            format!("loschmidt_{}", spec.generator.label()),
        )
    }

    /// Log-log regression of `|F(G→Gt, t) - 𝓛(t)|` against `t`.
    pub fn le_fotoc_scaling(&self, spec: &FotocSpec, times: &[f64]) -> Result<ScalingReport> {
        let spec = spec.clone().rescaled();
        let f = self.fotoc(&spec, times)?;
        let l = self.loschmidt_echo(&spec, times)?;
        let differences: Vec<f64> = f
            .values
            .iter()
            .zip(&l.values)
            .map(|(a, b)| (a - b).norm())
            .collect();
        ScalingReport::fit(times.to_vec(), differences)
    }
}

/// Power-law fit `|Δ| ≈ A t^slope`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub times: Vec<f64>,
    pub differences: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// All differences at round-off level.
    pub exact_agreement: bool,
}

/// Differences below this are treated as exact agreement.
pub const EXACT_AGREEMENT_TOL: f64 = 1e-13;

impl ScalingReport {
    pub fn fit(times: Vec<f64>, differences: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.iter().any(|&t| t <= 0.0) {
            return Err(Error::Domain(
                "scaling fit needs at least two positive abscissae".into(),
            ));
        }
        let exact = differences.iter().all(|&d| d < EXACT_AGREEMENT_TOL);
        let (slope, intercept) = if exact {
            (f64::NAN, f64::NAN)
        } else {
            let xs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
            let ys: Vec<f64> = differences
                .iter()
                .map(|d| d.max(f64::MIN_POSITIVE).ln())
                .collect();
            linear_fit(&xs, &ys).0
        };
        Ok(Self {
            times,
            differences,
            slope,
            intercept,
            exact_agreement: exact,
        })
    }
}

/// Least-squares line `y = a x + b`; returns `((a, b), rms residual)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> ((f64, f64), f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - a * x - b).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    ((a, b), rms)
}

/// `λ_cl = √(√(1+Ω_x²)(2ξ_y - √(1+Ω_x²)))`, real only beyond the
/// excited-state line.
pub fn classical_lyapunov(p: &ModelParams) -> Option<f64> {
    let root = p.root();
    let arg = root * (2.0 * p.xi_y - root);
    (arg > 0.0).then(|| arg.sqrt())
}

/// Exponential fit of `1 - Re F(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovFit {
    pub lambda_q: f64,
    pub lambda_cl: Option<f64>,
    pub window: (f64, f64),
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    /// The log-linear fit is good enough to call the growth exponential.
    pub exponential: bool,
}

impl LyapunovFit {
    /// `λ_Q / (2 λ_cl)`.
    pub fn ratio_to_twice_classical(&self) -> Option<f64> {
        self.lambda_cl.map(|l| self.lambda_q / (2.0 * l))
    }
}

/// Lower and upper levels of `1 - Re F` bounding the default fit window.
pub const LYAPUNOV_FLOOR: f64 = 1e-4;
pub const LYAPUNOV_CEIL: f64 = 1e-1;
/// RMS log residual above which growth is flagged as non-exponential.
pub const EXPONENTIAL_RESIDUAL: f64 = 0.05;

/// Fits `log(1 - Re F)` linearly in `t`.
///
/// Without an explicit window the fit uses the first stretch where
/// `1 - Re F` rises monotonically through `[LYAPUNOV_FLOOR, LYAPUNOV_CEIL]`,
/// stopping at the first local maximum (saturation).
pub fn lyapunov_fit(
    p: &ModelParams,
    series: &TimeSeries,
    window: Option<(f64, f64)>,
) -> Result<LyapunovFit> {
    let y: Vec<f64> = series.values.iter().map(|c| 1.0 - c.re).collect();
    let t = &series.times;
    let (lo, hi) = match window {
        Some((a, b)) => {
            let lo = t.iter().position(|&x| x >= a).unwrap_or(t.len());
            let hi = t.iter().rposition(|&x| x <= b).map_or(0, |k| k + 1);
            (lo, hi)
        }
        None => {
            let lo = y.iter().position(|&v| v >= LYAPUNOV_FLOOR).ok_or_else(|| {
                Error::Window(format!("1 - Re F never reaches {LYAPUNOV_FLOOR:e}"))
            })?;
            let mut hi = lo;
            while hi + 1 < y.len() && y[hi + 1] > y[hi] && y[hi + 1] <= LYAPUNOV_CEIL {
                hi += 1;
            }
            (lo, hi + 1)
        }
    };
    if hi <= lo + 2 {
        return Err(Error::Window(format!(
            "fit window holds {} samples",
            hi.saturating_sub(lo)
        )));
    }
    if y[lo..hi].iter().any(|&v| v <= 0.0) {
        return Err(Error::Window(
            "non-positive 1 - Re F inside the window".into(),
        ));
    }
    let xs = &t[lo..hi];
    let ys: Vec<f64> = y[lo..hi].iter().map(|v| v.ln()).collect();
    let ((slope, _), residual) = linear_fit(xs, &ys);
    Ok(LyapunovFit {
        lambda_q: slope,
        lambda_cl: classical_lyapunov(p),
        window: (xs[0], xs[xs.len() - 1]),
        residual,
        exponential: residual < EXPONENTIAL_RESIDUAL && slope > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_c;
    use crate::spin_model::stationary_point;

    fn model(ox: f64, xi: f64, j: f64) -> FiniteModel {
        FiniteModel::new(ModelParams::new(ox, xi, j, 0.01).unwrap()).unwrap()
    }

    #[test]
    fn jz_propagator_is_diagonal_phases() {
        let m = model(0.0, 0.0, 2.0);
        let u = m.propagator.unitary(0.7);
        for k in 0..5 {
            let mval = k as f64 - 2.0;
            assert!((u[(k, k)] - Complex64::from_polar(1.0, -mval * 0.7)).norm() < 1e-14);
        }
    }

    #[test]
    fn propagator_group_law_and_unitarity() {
        let m = model(1.3, 0.7, 3.0);
        let u1 = m.propagator.unitary(0.4);
        let u2 = m.propagator.unitary(1.1);
        let u12 = m.propagator.unitary(1.5);
        assert!(max_abs_c(&(&u1 * &u2 - u12)) < 1e-10);
        let psi = m.coherent(BlochPoint::new(0.9, 0.2).unwrap());
        assert!((m.propagator.evolve(&psi, 10.0).norm() - 1.0).abs() < 1e-12);
        assert!((m.propagator.evolve(&psi, 0.0) - &psi).norm() < 1e-14);
    }

    #[test]
    fn propagator_reconstructs_hamiltonian() {
        let m = model(4.0, 1.0, 10.0);
        let v = &m.propagator.eigenvectors;
        let rec = v * DMatrix::from_diagonal(&m.propagator.eigenvalues) * v.transpose();
        let scale = crate::linalg::max_abs(&m.hamiltonian);
        assert!(crate::linalg::max_abs(&(rec - &m.hamiltonian)) <= 1e-10 * scale);
        let id = v.transpose() * v;
        assert!(crate::linalg::max_abs(&(id - DMatrix::identity(21, 21))) < 1e-10);
    }

    #[test]
    fn generator_spectra_reconstruct() {
        let m = model(1.0, 1.0, 3.5);
        for g in [
            Generator::Q,
            Generator::P,
            Generator::Jx,
            Generator::Jy,
            Generator::Jz,
        ] {
            let s = m.generator_spectrum(&g).unwrap();
            let vals = s.values.map(|v| Complex64::new(v, 0.0));
            let rec = &s.vectors * DMatrix::from_diagonal(&vals) * s.vectors.adjoint();
            assert!(
                max_abs_c(&(rec - g.matrix(&m.ops))) < 1e-12,
                "{}",
                g.label()
            );
        }
    }

    #[test]
    fn time_series_validation() {
        assert!(TimeSeries::from_real(vec![0.0, 1.0], vec![1.0], "x").is_err());
        assert!(TimeSeries::from_real(vec![0.0, 0.0], vec![1.0, 1.0], "x").is_err());
    }

    #[test]
    fn zero_epsilon_is_constant_one() {
        let m = model(4.0, 1.0, 20.0);
        let b = stationary_point(&m.params, 1).unwrap().point;
        let grid = uniform_grid(5.0, 0.5).unwrap();
        let spec = FotocSpec::new(Generator::Q, 0.0, b);
        for s in [
            m.fotoc(&spec, &grid).unwrap(),
            m.loschmidt_echo(&spec, &grid).unwrap(),
        ] {
            assert!(s.values.iter().all(|v| (v.re - 1.0).abs() < 1e-12));
        }
        let sum = m.fotoc_sum_qp(0.0, b, &grid).unwrap();
        assert!(sum.values.iter().all(|v| (v.re - 2.0).abs() < 1e-12));
    }

    #[test]
    fn fotoc_bounds_and_initial_value() {
        let m = model(4.0, 1.0, 20.0);
        let b = BlochPoint::new(1.2, 0.4).unwrap();
        let grid = uniform_grid(10.0, 0.25).unwrap();
        for g in [Generator::Q, Generator::P, Generator::Jy] {
            let spec = FotocSpec::new(g, 0.01, b);
            let f = m.fotoc(&spec, &grid).unwrap();
            assert!(f
                .values
                .iter()
                .all(|v| v.re >= -1e-10 && v.re <= 1.0 + 1e-10));
            let l = m.loschmidt_echo(&spec, &grid).unwrap();
            assert!(l
                .values
                .iter()
                .all(|v| v.re >= -1e-10 && v.re <= 1.0 + 1e-10));
            assert!((l.values[0].re - 1.0).abs() < 1e-12);
            let var = m.generator_variance(&spec, &grid).unwrap();
            assert!(var.re().iter().all(|&v| v >= 0.0));
            // t = 0: 1 - ε²σ² + O(ε⁴)
            let f0 = f.values[0].re;
            let e2s = 1e-4 * var.re()[0];
            assert!((f0 - (1.0 - e2s)).abs() < e2s * e2s);
        }
    }

    #[test]
    fn conserved_generator_has_constant_variance() {
        let m = model(0.0, 0.0, 4.0);
        let grid = uniform_grid(3.0, 0.5).unwrap();
        let spec = FotocSpec::new(Generator::Jz, 0.1, BlochPoint::new(1.0, 0.0).unwrap());
        let var = m.generator_variance(&spec, &grid).unwrap().re();
        assert!(var.iter().all(|v| (v - var[0]).abs() < 1e-12));
    }

    #[test]
    fn commuting_generator_gives_exact_agreement() {
        let m = model(1.5, 0.8, 5.0);
        let h = m.hamiltonian.map(|v| Complex64::new(v, 0.0));
        let spec = FotocSpec::new(
            Generator::Custom(h),
            0.01,
            BlochPoint::new(0.8, 0.3).unwrap(),
        );
        let report = m.le_fotoc_scaling(&spec, &[0.01, 0.03, 0.1]).unwrap();
        assert!(report.exact_agreement, "{:?}", report.differences);
    }

    #[test]
    fn custom_generator_dimension_checked() {
        let m = model(1.0, 1.0, 2.0);
        let bad = Generator::Custom(DMatrix::identity(3, 3));
        let spec = FotocSpec::new(bad, 0.01, BlochPoint::new(0.5, 0.0).unwrap());
        assert!(matches!(m.fotoc(&spec, &[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn classical_lyapunov_value() {
        let p = ModelParams::new(4.0, 3.0, 1.0, 0.0).unwrap();
        assert!((classical_lyapunov(&p).unwrap() - 2.7819).abs() < 1e-4);
        assert!(classical_lyapunov(&p.with_xi(1.0)).is_none());
    }

    #[test]
    fn lyapunov_window_errors() {
        let p = ModelParams::new(4.0, 1.0, 1.0, 0.0).unwrap();
        let s = TimeSeries::from_real(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0], "flat").unwrap();
        assert!(matches!(lyapunov_fit(&p, &s, None), Err(Error::Window(_))));
        assert!(matches!(
            lyapunov_fit(&p, &s, Some((0.0, 2.0))),
            Err(Error::Window(_))
        ));
    }

    #[test]
    fn lyapunov_recovers_synthetic_rate() {
        let p = ModelParams::new(4.0, 3.0, 1.0, 0.0).unwrap();
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.01).collect();
        let v: Vec<f64> = t.iter().map(|&x| 1.0 - 1e-5 * (3.0 * x).exp()).collect();
        let fit = lyapunov_fit(&p, &TimeSeries::from_real(t, v, "s").unwrap(), None).unwrap();
        assert!((fit.lambda_q - 3.0).abs() < 1e-9);
        assert!(fit.exponential);
    }

    /// `e^{-iAt}` by scaling and squaring a truncated Taylor series.
    fn expm_i(a: &DMatrix<Complex64>, t: f64) -> DMatrix<Complex64> {
        let d = a.nrows();
        let m = a * Complex64::new(0.0, -t);
        let squarings = (max_abs_c(&m).max(1.0).log2().ceil() as i32 + 4).max(0);
        let small = m / Complex64::new(2f64.powi(squarings), 0.0);
        let mut term = DMatrix::<Complex64>::identity(d, d);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &small / Complex64::new(k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
        m.map(|v| Complex64::new(v, 0.0))
    }

    #[test]
    fn matches_dense_exponentials_at_j2() {
        let m = model(1.7, 2.4, 2.0);
        let z = m.coherent(BlochPoint::new(1.1, -0.6).unwrap());
        let h = to_complex(&m.hamiltonian);
        let times = [0.0, 0.3, 1.7, 4.2];
        for g in [Generator::Q, Generator::P, Generator::Jx, Generator::Jz] {
            let gm = g.matrix(&m.ops);
            let eps = 0.05;
            let spec = FotocSpec::new(g.clone(), eps, BlochPoint::new(1.1, -0.6).unwrap());
            let f = m.fotoc(&spec, &times).unwrap();
            let l = m.loschmidt_echo(&spec, &times).unwrap();
            let kick = expm_i(&gm, -eps);
            let hp = &h - &gm * Complex64::new(eps, 0.0);
            for (k, &t) in times.iter().enumerate() {
                let u = expm_i(&h, t);
                let heis = u.adjoint() * &kick * &u;
                let fd = z.dotc(&(&heis * &z)).norm_sqr();
                let ld = z.dotc(&(u.adjoint() * expm_i(&hp, t) * &z)).norm_sqr();
                assert!(
                    (f.values[k].re - fd).abs() < 1e-11,
                    "{} t={t}: {} vs {fd}",
                    g.label(),
                    f.values[k].re
                );
                assert!(
                    (l.values[k].re - ld).abs() < 1e-11,
                    "{} t={t}: {} vs {ld}",
                    g.label(),
                    l.values[k].re
                );
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn fotoc_is_a_probability_and_even_in_eps(
                ox in 0.1f64..5.0,
                xi in 0.0f64..4.0,
                theta in 0.05f64..3.1,
                phi in -3.1f64..3.1,
                eps in 0.001f64..0.2,
                t in 0.0f64..8.0,
            ) {
                let m = model(ox, xi, 3.0);
                let b = BlochPoint::new(theta, phi).unwrap();
                let plus = m.fotoc(&FotocSpec::new(Generator::Q, eps, b), &[t]).unwrap().values[0].re;
                let minus = m.fotoc(&FotocSpec::new(Generator::Q, -eps, b), &[t]).unwrap().values[0].re;
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&plus));
                // The kicked operator at -ε is the adjoint of the one at ε.
                prop_assert!((plus - minus).abs() < 1e-10);
            }

            #[test]
            fn evolution_preserves_norm(
                ox in 0.0f64..5.0,
                xi in 0.0f64..4.0,
                t in -20.0f64..20.0,
            ) {
                let m = model(ox, xi, 4.5);
                let psi = m.coherent(BlochPoint::new(0.7, 0.4).unwrap());
                prop_assert!((m.propagator.evolve(&psi, t).norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
