//! Nielsen complexity of the evolved FOTOC operator `e^{iεQ(t)}` viewed as an
//! element of the Heisenberg group.
//!
//! Elements are upper unitriangular matrices `[[1, x1, x3], [0, 1, x2], [0, 0, 1]]`.
//! Under the right-invariant κ=2 cost the line element is
//! `dx1² + dx2² + (dx3 - x2 dx1)²`.

use crate::dynamics::{FiniteModel, FotocSpec, Generator, TimeSeries};
use crate::effective::{effective_hamiltonian, oracle_quadratures, Phase};
use crate::error::{Error, Result};
use crate::spin_model::{stationary_point, ModelParams};

/// Coordinates of an element of the Heisenberg group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeisenbergElement {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl HeisenbergElement {
    pub const IDENTITY: Self = Self {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
    };

    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            x1: self.x1 + other.x1,
            x2: self.x2 + other.x2,
            x3: self.x3 + other.x3 + self.x1 * other.x2,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            x1: -self.x1,
            x2: -self.x2,
            x3: self.x1 * self.x2 - self.x3,
        }
    }

    pub fn matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(1.0, self.x1, self.x3, 0.0, 1.0, self.x2, 0.0, 0.0, 1.0)
    }

    pub fn distance_max(&self, other: &Self) -> f64 {
        (self.x1 - other.x1)
            .abs()
            .max((self.x2 - other.x2).abs())
            .max((self.x3 - other.x3).abs())
    }
}

/// `(ε𝓕, ε𝓖, ε²𝓕𝓖/2)`.
pub fn fotoc_operator_element(phase: Phase, p: &ModelParams, t: f64) -> Result<HeisenbergElement> {
    let q = oracle_quadratures(phase, p, t)?;
    let e = p.epsilon;
    Ok(HeisenbergElement::new(
        e * q.f,
        e * q.g,
        0.5 * e * e * q.f * q.g,
    ))
}

/// `C = ε²(𝓕² + 𝓖²)`.
pub fn nielsen_complexity(phase: Phase, p: &ModelParams, t: f64) -> Result<f64> {
    let q = oracle_quadratures(phase, p, t)?;
    Ok(p.epsilon * p.epsilon * (q.f * q.f + q.g * q.g))
}

/// `(𝓕, 𝓖, ∂𝓕/∂ξ_y, ∂𝓖/∂ξ_y)` at fixed `Ω_x` and `t`.
fn quadratures_with_xi_derivative(phase: Phase, p: &ModelParams, t: f64) -> Result<[f64; 4]> {
    let h = effective_hamiltonian(phase, p)?;
    let s = p.root();
    let xi = p.xi_y;
    let w = h.omega;
    let (sn, cs) = (w * t).sin_cos();
    Ok(match phase {
        Phase::Symmetric | Phase::Ground => {
            // Γ = s ∓ 2ξ, ω = √(sΓ), 𝓖 = ∓k sin ωt with k = √(Γ/s).
            let (gamma, dgamma, sign) = if phase == Phase::Symmetric {
                (h.gamma_minus, -2.0, -1.0)
            } else {
                (h.gamma_plus, 2.0, 1.0)
            };
            let dw = s * dgamma / (2.0 * w);
            let k = (gamma / s).sqrt();
            let dk = dgamma / (2.0 * s * k);
            let f = cs;
            let df = -t * dw * sn;
            let g = sign * k * sn;
            let dg = sign * (dk * sn + k * t * dw * cs);
            [f, g, df, dg]
        }
        Phase::Broken => {
            let ox = p.omega_x;
            let q = 4.0 * xi * xi - 1.0;
            let dq = 8.0 * xi;
            let dw = 4.0 * xi / w;
            let a = ox / q;
            let da = -ox * dq / (q * q);
            let m = 2.0 * xi * w / q;
            let dm = (2.0 * w + 2.0 * xi * dw) / q - 2.0 * xi * w * dq / (q * q);
            let f = cs + a * sn;
            let df = -t * dw * sn + da * sn + a * t * dw * cs;
            let g = -m * sn;
            let dg = -dm * sn - m * t * dw * cs;
            [f, g, df, dg]
        }
    })
}

/// Analytic `∂C/∂ξ_y`. The transition line itself is outside every open phase
/// domain and is rejected.
pub fn nc_derivative(phase: Phase, p: &ModelParams, t: f64) -> Result<f64> {
    let [f, g, df, dg] = quadratures_with_xi_derivative(phase, p, t)?;
    Ok(2.0 * p.epsilon * p.epsilon * (f * df + g * dg))
}

/// One-sided estimate of `lim ∂C/∂ξ_y / ε²` at the excited-state line.
#[derive(Debug, Clone, PartialEq)]
pub struct QptLimit {
    pub phase: Phase,
    /// Offsets `|ξ_y - ξ_c|` that were sampled.
    pub offsets: Vec<f64>,
    /// `∂C/∂ξ_y / ε²` at each offset.
    pub values: Vec<f64>,
    /// Richardson-extrapolated value (symmetric side) or `None` when the
    /// sequence diverges.
    pub extrapolated: Option<f64>,
    /// `2t²√(1+Ω_x²)`.
    pub reference: f64,
}

/// Samples `∂C/∂ξ_y / ε²` on `ξ_c ∓ δ_k` for `δ_k = δ_0 2^{-k}` and
/// extrapolates. On the symmetric side the derivative is analytic in `Γ_-`,
/// so repeated Richardson elimination of the `O(δ^n)` terms converges.
pub fn nc_qpt_limit(
    phase: Phase,
    p: &ModelParams,
    t: f64,
    delta0: f64,
    levels: usize,
) -> Result<QptLimit> {
    if phase == Phase::Ground {
        return Err(Error::Domain(
            "the excited-state line bounds only the symmetric and broken phases".into(),
        ));
    }
    if levels < 2 || !(delta0 > 0.0) {
        return Err(Error::Domain(
            "need at least two levels and a positive offset".into(),
        ));
    }
    let xc = p.critical_xi();
    let sign = if phase == Phase::Symmetric { -1.0 } else { 1.0 };
    let at = |d: f64| nc_derivative(phase, &p.with_xi(xc + sign * d).with_epsilon(1.0), t);
    let offsets: Vec<f64> = (0..levels)
        .map(|k| delta0 * 0.5f64.powi(k as i32))
        .collect();
    let values = offsets.iter().map(|&d| at(d)).collect::<Result<Vec<_>>>()?;
    let extrapolated = (phase == Phase::Symmetric).then(|| richardson(&values));
    Ok(QptLimit {
        phase,
        offsets,
        values,
        extrapolated,
        reference: 2.0 * t * t * p.root(),
    })
}

/// Neville-style Richardson table for samples at `h, h/2, h/4, ...` with an
/// error expansion in integer powers of `h`.
fn richardson(values: &[f64]) -> f64 {
    let mut table = values.to_vec();
    let n = table.len();
    for level in 1..n {
        let factor = 2f64.powi(level as i32);
        for k in (level..n).rev() {
            table[k] = (factor * table[k] - table[k - 1]) / (factor - 1.0);
        }
    }
    table[n - 1]
}

/// Divergence scan of `|∂C_b/∂ξ_y|` approaching the line from the broken side.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceScan {
    /// `ξ_y - ξ_c`, decreasing.
    pub offsets: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// Largest `|∂C_b/∂ξ_y|` over the mid-phase window.
    pub mid_phase_scale: f64,
    pub monotone: bool,
}

impl DivergenceScan {
    /// Ratio of the last sample to the mid-phase scale.
    pub fn growth(&self) -> f64 {
        self.magnitudes.last().copied().unwrap_or(0.0) / self.mid_phase_scale
    }
}

/// Mid-phase window `ξ_c + [1, 2]` sampled on this many points.
pub const MID_PHASE_SAMPLES: usize = 401;

/// Scans `δ = 10^{-1} .. 10^{-decades}` with `per_decade` points per decade.
pub fn nc_divergence_scan(
    p: &ModelParams,
    t: f64,
    decades: u32,
    per_decade: usize,
) -> Result<DivergenceScan> {
    let xc = p.critical_xi();
    let unit = p.with_epsilon(1.0);
    let mut mid = 0.0f64;
    for k in 0..MID_PHASE_SAMPLES {
        let xi = xc + 1.0 + k as f64 / (MID_PHASE_SAMPLES - 1) as f64;
        mid = mid.max(nc_derivative(Phase::Broken, &unit.with_xi(xi), t)?.abs());
    }
    let n = decades as usize * per_decade;
    let offsets: Vec<f64> = (0..=n)
        .map(|k| 10f64.powf(-1.0 - k as f64 / per_decade as f64))
        .collect();
    let magnitudes = offsets
        .iter()
        .map(|&d| nc_derivative(Phase::Broken, &unit.with_xi(xc + d), t).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    // The oscillating part can dip within the first decade; monotonicity is
    // judged on the envelope-dominated tail.
    let tail_start = per_decade.min(magnitudes.len() - 1);
    let monotone = magnitudes[tail_start..].windows(2).all(|w| w[1] >= w[0]);
    Ok(DivergenceScan {
        offsets,
        magnitudes,
        mid_phase_scale: mid,
        monotone,
    })
}

/// Geodesic on the Heisenberg group joining the identity to a target.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    pub tau: Vec<f64>,
    pub x: Vec<[f64; 3]>,
    /// `Y^I = -Tr[(∂_τ U) U^{-1} M_Iᵀ] = -(ẋ1, ẋ2, ẋ3 - x2 ẋ1)`.
    pub controls: Vec<[f64; 3]>,
    /// `∫ Σ_I |Y^I|² dτ` by composite Simpson.
    pub cost: f64,
    /// Endpoint mismatch after the final shooting iteration.
    pub residual: f64,
    pub iterations: usize,
}

/// Number of RK4 steps across `τ ∈ [0, 1]`; even, as Simpson requires.
pub const GEODESIC_STEPS: usize = 1024;
const SHOOTING_TOL: f64 = 1e-14;
const SHOOTING_MAX_ITER: usize = 30;

type State = [f64; 6];

/// Euler-Lagrange equations of `ẋ1² + ẋ2² + (ẋ3 - x2 ẋ1)²`. With
/// `c = ẋ3 - x2 ẋ1` (conserved): `ẍ1 = c ẋ2`, `ẍ2 = -c ẋ1`,
/// `ẍ3 = ẋ1 ẋ2 + x2 c ẋ2`.
fn geodesic_rhs(s: &State) -> State {
    let [_, x2, _, v1, v2, v3] = *s;
    let c = v3 - x2 * v1;
    [v1, v2, v3, c * v2, -c * v1, v1 * v2 + x2 * c * v2]
}

/// Geodesic acceleration with the sign of the `ẋ1 ẋ3` term flipped. The
/// closed-form path does not satisfy it; kept to show the sign matters.
pub fn flipped_geodesic_acceleration(x: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let [_, x2, _] = x;
    let [v1, v2, v3] = v;
    [
        -v2 * (x2 * v1 - v3),
        -v1 * (-x2 * v1 - v3),
        -v2 * ((x2 * x2 - 1.0) * v1 - x2 * v3),
    ]
}

pub fn euler_lagrange_acceleration(x: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let d = geodesic_rhs(&[x[0], x[1], x[2], v[0], v[1], v[2]]);
    [d[3], d[4], d[5]]
}

fn rk4_path(v0: [f64; 3]) -> Vec<State> {
    let h = 1.0 / GEODESIC_STEPS as f64;
    let mut s: State = [0.0, 0.0, 0.0, v0[0], v0[1], v0[2]];
    let mut out = Vec::with_capacity(GEODESIC_STEPS + 1);
    out.push(s);
    let axpy = |a: &State, k: &State, f: f64| -> State {
        let mut r = *a;
        for i in 0..6 {
            r[i] += f * k[i];
        }
        r
    };
    for _ in 0..GEODESIC_STEPS {
        let k1 = geodesic_rhs(&s);
        let k2 = geodesic_rhs(&axpy(&s, &k1, 0.5 * h));
        let k3 = geodesic_rhs(&axpy(&s, &k2, 0.5 * h));
        let k4 = geodesic_rhs(&axpy(&s, &k3, h));
        for i in 0..6 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(s);
    }
    out
}

fn endpoint_mismatch(v0: [f64; 3], target: &HeisenbergElement) -> [f64; 3] {
    let end = *rk4_path(v0).last().expect("non-empty path");
    [end[0] - target.x1, end[1] - target.x2, end[2] - target.x3]
}

/// Composite Simpson rule on a uniform grid over `[0, 1]`.
pub fn simpson(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    assert!(
        n >= 2 && n.is_multiple_of(2),
        "Simpson needs an even number of intervals"
    );
    let h = 1.0 / n as f64;
    let inner: f64 = values[1..n]
        .iter()
        .enumerate()
        .map(|(k, v)| if k % 2 == 0 { 4.0 * v } else { 2.0 * v })
        .sum();
    h / 3.0 * (values[0] + values[n] + inner)
}

/// Shooting on the initial velocity, seeded by the straight-line guess
/// `(x1, x2, x3 - x1 x2/2)` (exact for every target of the form
/// `(a, b, ab/2)`), with Newton updates from a finite-difference Jacobian.
pub fn geodesic_solve(target: &HeisenbergElement) -> Result<GeodesicPath> {
    let scale = target.x1.abs().max(target.x2.abs()).max(target.x3.abs());
    let mut v = [
        target.x1,
        target.x2,
        target.x3 - 0.5 * target.x1 * target.x2,
    ];
    let mut iterations = 0;
    let mut r = endpoint_mismatch(v, target);
    let norm = |r: &[f64; 3]| r.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let tol = SHOOTING_TOL * scale.max(1e-300);
    while norm(&r) > tol && scale > 0.0 {
        if iterations == SHOOTING_MAX_ITER {
            return Err(Error::Numeric(format!(
                "geodesic shooting did not converge: residual {:e} after {iterations} iterations",
                norm(&r)
            )));
        }
        let h = 1e-7 * scale.max(1e-12);
        let mut jac = nalgebra::Matrix3::zeros();
        for c in 0..3 {
            let mut vp = v;
            let mut vm = v;
            vp[c] += h;
            vm[c] -= h;
            let rp = endpoint_mismatch(vp, target);
            let rm = endpoint_mismatch(vm, target);
            for row in 0..3 {
                jac[(row, c)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let step = jac
            .lu()
            .solve(&nalgebra::Vector3::new(r[0], r[1], r[2]))
            .ok_or_else(|| Error::Numeric("singular shooting Jacobian".into()))?;
        let before = norm(&r);
        for c in 0..3 {
            v[c] -= step[c];
        }
        r = endpoint_mismatch(v, target);
        iterations += 1;
        if norm(&r) >= before && norm(&r) <= 1e3 * tol {
            break;
        }
    }
    let states = rk4_path(v);
    let tau: Vec<f64> = (0..=GEODESIC_STEPS)
        .map(|k| k as f64 / GEODESIC_STEPS as f64)
        .collect();
    let x: Vec<[f64; 3]> = states.iter().map(|s| [s[0], s[1], s[2]]).collect();
    let controls: Vec<[f64; 3]> = states
        .iter()
        .map(|s| [-s[3], -s[4], -(s[5] - s[1] * s[3])])
        .collect();
    let integrand: Vec<f64> = controls
        .iter()
        .map(|y| y.iter().map(|c| c * c).sum())
        .collect();
    Ok(GeodesicPath {
        tau,
        x,
        controls,
        cost: simpson(&integrand),
        residual: norm(&r),
        iterations,
    })
}

/// κ=2 cost of an arbitrary path given as `τ ↦ (x, ẋ)`, by Simpson on
/// `GEODESIC_STEPS` intervals.
pub fn path_cost(path: impl Fn(f64) -> ([f64; 3], [f64; 3])) -> f64 {
    let integrand: Vec<f64> = (0..=GEODESIC_STEPS)
        .map(|k| {
            let (x, v) = path(k as f64 / GEODESIC_STEPS as f64);
            let c = v[2] - x[1] * v[0];
            v[0] * v[0] + v[1] * v[1] + c * c
        })
        .collect();
    simpson(&integrand)
}

/// The closed-form extremal `x1 = aτ, x2 = bτ, x3 = abτ²/2` towards `(a, b, ab/2)`.
pub fn closed_form_path(target: &HeisenbergElement, tau: f64) -> ([f64; 3], [f64; 3]) {
    let (a, b) = (target.x1, target.x2);
    (
        [a * tau, b * tau, 0.5 * a * b * tau * tau],
        [a, b, a * b * tau],
    )
}

/// Side-by-side `C(t)` and `-log F(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityFotocReport {
    pub times: Vec<f64>,
    pub complexity: Vec<f64>,
    pub neg_log_fotoc: Vec<f64>,
    /// Times where `F = 0` and the logarithm is undefined.
    pub excluded: Vec<f64>,
    pub max_discrepancy: f64,
    pub min_discrepancy: f64,
    /// `max(C, |log F|)` over the included samples.
    pub scale: f64,
    /// Both sides vanish identically (e.g. at `ε = 0`).
    pub degenerate: bool,
}

impl ComplexityFotocReport {
    /// `max |C + log F| > fraction · max(C, |log F|)`.
    pub fn relation_fails(&self, fraction: f64) -> bool {
        !self.degenerate && self.max_discrepancy > fraction * self.scale
    }
}

/// Tabulates `C(t)` from the quadratic theory of the excited-state phase at
/// `p` against `-log F_Q(t)` of the finite model started at that phase's
/// stationary point. On the transition line the symmetric-side limit
/// `C ≡ ε²` is used and the start is stationary point 1.
pub fn complexity_vs_neglog_fotoc(
    model: &FiniteModel,
    times: &[f64],
) -> Result<ComplexityFotocReport> {
    let p = &model.params;
    let phase = Phase::excited(p);
    let label = phase.map_or(1, Phase::stationary_label);
    let start = stationary_point(p, label)?.point;
    let spec = FotocSpec::new(Generator::Q, p.epsilon, start);
    let f: TimeSeries = model.fotoc(&spec, times)?;
    let mut report = ComplexityFotocReport {
        times: Vec::new(),
        complexity: Vec::new(),
        neg_log_fotoc: Vec::new(),
        excluded: Vec::new(),
        max_discrepancy: 0.0,
        min_discrepancy: f64::INFINITY,
        scale: 0.0,
        degenerate: false,
    };
    for (&t, v) in times.iter().zip(&f.values) {
        if v.re <= 0.0 {
            report.excluded.push(t);
            continue;
        }
        let c = match phase {
            Some(ph) => nielsen_complexity(ph, p, t)?,
            None => p.epsilon * p.epsilon,
        };
        let nl = -v.re.ln();
        let d = (c - nl).abs();
        report.max_discrepancy = report.max_discrepancy.max(d);
        report.min_discrepancy = report.min_discrepancy.min(d);
        report.scale = report.scale.max(c.max(nl.abs()));
        report.times.push(t);
        report.complexity.push(c);
        report.neg_log_fotoc.push(nl);
    }
    report.degenerate = report.scale < 1e-14;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(xi: f64) -> ModelParams {
        ModelParams::new(4.0, xi, 100.0, 0.01).unwrap()
    }

    #[test]
    fn group_law() {
        let a = HeisenbergElement::new(0.3, -1.2, 0.7);
        let b = HeisenbergElement::new(-0.4, 0.5, 2.0);
        let ab = a.compose(&b);
        assert!((ab.matrix() - a.matrix() * b.matrix()).abs().max() < 1e-15);
        assert!(
            a.compose(&a.inverse())
                .distance_max(&HeisenbergElement::IDENTITY)
                < 1e-15
        );
        assert!(
            a.inverse()
                .compose(&a)
                .distance_max(&HeisenbergElement::IDENTITY)
                < 1e-15
        );
    }

    #[test]
    fn element_and_complexity_at_zero() {
        for (phase, xi) in [
            (Phase::Symmetric, 1.0),
            (Phase::Broken, 3.0),
            (Phase::Ground, -1.0),
        ] {
            let p = params(xi);
            let e = fotoc_operator_element(phase, &p, 0.0).unwrap();
            assert!(e.distance_max(&HeisenbergElement::new(0.01, 0.0, 0.0)) < 1e-16);
            assert!((nielsen_complexity(phase, &p, 0.0).unwrap() - 1e-4).abs() < 1e-18);
            assert_eq!(nc_derivative(phase, &p, 0.0).unwrap(), 0.0);
        }
        let e = fotoc_operator_element(Phase::Symmetric, &params(1.0), 1.0).unwrap();
        assert!((e.x1 - 0.01 * 2.9587f64.cos()).abs() < 1e-6);
    }

    #[test]
    fn symmetric_complexity_bounds() {
        let p = params(1.0);
        let lo = 1e-4 * (p.gamma_minus() / p.root()).min(1.0);
        for k in 0..200 {
            let c = nielsen_complexity(Phase::Symmetric, &p, 0.05 * k as f64).unwrap();
            assert!(c >= lo - 1e-18 && c <= 1e-4 + 1e-18);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = 1e-6;
        for (phase, xi) in [
            (Phase::Symmetric, 1.0),
            (Phase::Broken, 3.0),
            (Phase::Ground, -1.0),
        ] {
            let p = params(xi);
            for t in [0.5, 3.0, 10.0] {
                let a = nc_derivative(phase, &p, t).unwrap();
                let fd = (nielsen_complexity(phase, &p.with_xi(xi + h), t).unwrap()
                    - nielsen_complexity(phase, &p.with_xi(xi - h), t).unwrap())
                    / (2.0 * h);
                assert!(
                    (a - fd).abs() <= 1e-6 * a.abs().max(1e-8),
                    "{phase} t={t}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn derivative_rejected_on_the_line() {
        let p = params(0.0);
        let on = p.with_xi(p.critical_xi());
        assert!(nc_derivative(Phase::Symmetric, &on, 10.0).is_err());
        assert!(nc_derivative(Phase::Broken, &on, 10.0).is_err());
    }

    #[test]
    fn symmetric_limit() {
        let lim = nc_qpt_limit(Phase::Symmetric, &params(0.0), 10.0, 1e-3, 8).unwrap();
        let v = lim.extrapolated.unwrap();
        assert!(
            (v - lim.reference).abs() < 1e-6 * lim.reference,
            "{v} vs {}",
            lim.reference
        );
        assert!((lim.reference - 824.62).abs() < 0.01);
    }

    #[test]
    fn straight_line_is_geodesic() {
        let target = HeisenbergElement::new(0.3, -0.2, -0.03);
        let path = geodesic_solve(&target).unwrap();
        assert!(path.iterations <= 1);
        for (k, x) in path.x.iter().enumerate() {
            let (exact, _) = closed_form_path(&target, path.tau[k]);
            for i in 0..3 {
                assert!((x[i] - exact[i]).abs() < 1e-12);
            }
        }
        assert!((path.cost - (0.09 + 0.04)).abs() < 1e-12);
    }

    #[test]
    fn generic_target_is_reached() {
        let target = HeisenbergElement::new(0.4, 0.7, -0.5);
        let path = geodesic_solve(&target).unwrap();
        let end = path.x.last().unwrap();
        assert!(
            (end[0] - 0.4).abs() < 1e-10
                && (end[1] - 0.7).abs() < 1e-10
                && (end[2] + 0.5).abs() < 1e-10
        );
        // Cost of a geodesic is at least the abelian lower bound.
        assert!(path.cost >= 0.4f64.powi(2) + 0.7f64.powi(2));
    }

    #[test]
    fn identity_target() {
        let path = geodesic_solve(&HeisenbergElement::IDENTITY).unwrap();
        assert_eq!(path.cost, 0.0);
        assert!(path.x.iter().all(|x| x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn flipped_sign_rejects_closed_form() {
        let target = HeisenbergElement::new(0.5, 0.4, 0.1);
        let (x, v) = closed_form_path(&target, 0.5);
        let el = euler_lagrange_acceleration(x, v);
        let flipped = flipped_geodesic_acceleration(x, v);
        // Closed form has ẍ = (0, 0, ab).
        assert!(el[0].abs() < 1e-15 && el[1].abs() < 1e-15 && (el[2] - 0.2).abs() < 1e-15);
        assert!((flipped[0] - el[0]).abs() < 1e-15 && (flipped[2] - el[2]).abs() < 1e-15);
        assert!(flipped[1].abs() > 0.01);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v: Vec<f64> = (0..=8).map(|k| (k as f64 / 8.0).powi(3)).collect();
        assert!((simpson(&v) - 0.25).abs() < 1e-15);
    }
}
