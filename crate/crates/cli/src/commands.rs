//! One function per subcommand. Each writes its tables into the output
//! directory and returns a JSON summary for the manifest.

use elmg_core::complexity::{nc_derivative, nc_divergence_scan, nc_qpt_limit, nielsen_complexity};
use elmg_core::dynamics::{lyapunov_fit, uniform_grid, FotocSpec};
use elmg_core::effective::{phase_space_snapshot, Phase};
use elmg_core::geometry::{
    curvature_spacing, fubini_study_length, geodesic_integrate, metric_first_order,
    metric_zeroth_order, ricci_near_line, ricci_scalar, FiniteGeometry, GeodesicOptions,
    LatticeMetric, MetricField, MetricModel, MetricSource, ParameterPoint, MAX_FIELD_NODES,
};
use elmg_core::spin_model::stationary_point;
use elmg_core::{BlochPoint, ModelParams};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::cache::EigenCache;
use crate::config::{Observable, PhaseChoice, RunConfig, SourceChoice, Start, Subcommand};
use crate::output::{Cell, OutputDir};
use crate::CliError;

const SERIES_HEADER: [&str; 4] = ["t", "value_re", "value_im", "label"];

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a mut OutputDir,
    pub cache: &'a EigenCache,
}

pub fn run(ctx: &mut Context) -> Result<Value, CliError> {
    match ctx.cfg.subcommand {
        Subcommand::Fotoc => fotoc(ctx),
        Subcommand::EchoCompare => echo_compare(ctx),
        Subcommand::Lyapunov => lyapunov(ctx),
        Subcommand::Complexity => complexity(ctx),
        Subcommand::Metric => metric(ctx),
        Subcommand::Curvature => curvature(ctx),
        Subcommand::Geodesic => geodesic(ctx),
        Subcommand::Sweep => sweep(ctx),
    }
}

fn params(cfg: &RunConfig) -> Result<ModelParams, CliError> {
    ModelParams::new(cfg.omega_x, cfg.xi_y, cfg.j, cfg.epsilon)
        .map_err(|e| CliError::Usage(e.to_string()))
}

/// Phase at `p`: the requested one if it contains `p`, otherwise the
/// excited-state phase.
fn phase_at(choice: PhaseChoice, p: &ModelParams) -> Result<Phase, CliError> {
    match choice {
        PhaseChoice::Fixed(ph) => ph
            .check(p)
            .map(|_| ph)
            .map_err(|e| CliError::Usage(e.to_string())),
        PhaseChoice::Auto => Phase::excited(p).ok_or_else(|| {
            CliError::Usage(format!(
                "({}, {}) lies on the excited-state transition line; pick a phase-interior point",
                p.omega_x, p.xi_y
            ))
        }),
    }
}

fn initial_state(cfg: &RunConfig, p: &ModelParams) -> Result<BlochPoint, CliError> {
    if let Some((theta, phi)) = cfg.initial_angles {
        return BlochPoint::new(theta, phi).map_err(|e| CliError::Usage(e.to_string()));
    }
    let s = stationary_point(p, cfg.point)?;
    if !s.valid {
        return Err(CliError::Usage(format!(
            "stationary point {} does not exist at omega_x = {}, xi_y = {}",
            cfg.point, p.omega_x, p.xi_y
        )));
    }
    Ok(s.point)
}

fn times(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    uniform_grid(cfg.t_max, cfg.dt).map_err(|e| CliError::Usage(e.to_string()))
}

fn series_rows(t: &[f64], values: &[elmg_core::Complex64], label: &str) -> Vec<Vec<Cell>> {
    t.iter()
        .zip(values)
        .map(|(&t, v)| vec![t.into(), v.re.into(), v.im.into(), label.into()])
        .collect()
}

fn fotoc(ctx: &mut Context) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let p = params(cfg)?;
    let init = initial_state(cfg, &p)?;
    let grid = times(cfg)?;
    let model = ctx.cache.model(p)?;
    let series = model.fotoc(
        &FotocSpec::new(cfg.generator.clone(), cfg.epsilon, init),
        &grid,
    )?;
    check_finite(&series.re())?;
    ctx.out.write_csv(
        "fotoc.csv",
        &SERIES_HEADER,
        &series_rows(&grid, &series.values, &series.label),
    )?;
    Ok(json!({
        "phase": Phase::excited(&p).map(Phase::label),
        "initial": { "theta": init.theta, "phi": init.phi },
        "variance_re": series.variance_re(),
        "min_re": series.re().into_iter().fold(f64::INFINITY, f64::min),
    }))
}

fn echo_compare(ctx: &mut Context) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let p = params(cfg)?;
    let init = initial_state(cfg, &p)?;
    let grid: Vec<f64> = times(cfg)?.into_iter().filter(|&t| t > 0.0).collect();
    let model = ctx.cache.model(p)?;
    let spec = FotocSpec::new(cfg.generator.clone(), cfg.epsilon, init).rescaled();
    let f = model.fotoc(&spec, &grid)?;
    let l = model.loschmidt_echo(&spec, &grid)?;
    let report = model.le_fotoc_scaling(&spec, &grid)?;
    check_finite(&f.re())?;
    check_finite(&l.re())?;
    let mut rows = series_rows(&grid, &f.values, &f.label);
    rows.extend(series_rows(&grid, &l.values, &l.label));
    rows.extend(
        grid.iter()
            .zip(&report.differences)
            .map(|(&t, &d)| vec![t.into(), d.into(), 0.0.into(), "abs_difference".into()]),
    );
    ctx.out.write_csv("echo.csv", &SERIES_HEADER, &rows)?;
    Ok(json!({
        "generator": cfg.generator.label(),
        "slope": finite_or_null(report.slope),
        "intercept": finite_or_null(report.intercept),
        "exact_agreement": report.exact_agreement,
        "difference_at_t_max": report.differences.last(),
    }))
}

fn lyapunov(ctx: &mut Context) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let p = params(cfg)?;
    let init = initial_state(cfg, &p)?;
    let grid = times(cfg)?;
    let model = ctx.cache.model(p)?;
    let series = model.fotoc(
        &FotocSpec::new(cfg.generator.clone(), cfg.epsilon, init),
        &grid,
    )?;
    check_finite(&series.re())?;
    ctx.out.write_csv(
        "lyapunov.csv",
        &SERIES_HEADER,
        &series_rows(&grid, &series.values, &series.label),
    )?;
    let fit = lyapunov_fit(&p, &series, None)?;
    Ok(json!({
        "lambda_q": fit.lambda_q,
        "lambda_cl": fit.lambda_cl,
        "ratio_to_twice_classical": fit.ratio_to_twice_classical(),
        "window": [fit.window.0, fit.window.1],
        "residual": fit.residual,
        "exponential": fit.exponential,
    }))
}

fn complexity(ctx: &mut Context) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let p = params(cfg)?.with_epsilon(1.0);
    let t = cfg.time;
    let mut rows = Vec::with_capacity(cfg.xi_range.count);
    for xi in cfg.xi_range.values() {
        let q = p.with_xi(xi);
        let side = |ph: Phase| -> Result<Cell, CliError> {
            Ok(if ph.contains(&q) {
                nc_derivative(ph, &q, t)?.into()
            } else {
                Cell::Empty
            })
        };
        rows.push(vec![
            xi.into(),
            side(Phase::Symmetric)?,
            side(Phase::Broken)?,
        ]);
    }
    ctx.out
        .write_csv("complexity.csv", &["xi_y", "dC_sym", "dC_broken"], &rows)?;
    let mut results =
        json!({ "normalization": "divided by epsilon^2", "time": t, "xi_c": p.critical_xi() });
    if t > 0.0 {
        let lim = nc_qpt_limit(Phase::Symmetric, &p, t, 1e-3, 8)?;
        let scan = nc_divergence_scan(&p, t, 7, 4)?;
        results["symmetric_limit"] = json!({
            "extrapolated": lim.extrapolated,
            "reference": lim.reference,
        });
        results["broken_divergence"] = json!({
            "mid_phase_scale": scan.mid_phase_scale,
            "growth": scan.growth(),
            "smallest_offset": scan.offsets.last(),
        });
    }
    Ok(results)
}

fn metric(ctx: &mut Context) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let p = params(cfg)?;
    let phase = phase_at(cfg.phase, &p)?;
    let grid = times(cfg)?;
    let geometry = FiniteGeometry::new(phase, cfg.j, cfg.epsilon)?;
    let header = [
        "t",
        "source",
        "g_omega_omega",
        "g_omega_xi",
        "g_xi_xi",
        "g_omega_t",
        "g_xi_t",
        "g_t_t",
    ];
    let computed: Vec<Vec<Vec<Cell>>> = grid
        .par_iter()
        .map(|&t| -> Result<Vec<Vec<Cell>>, CliError> {
            let point = ParameterPoint::new(cfg.omega_x, cfg.xi_y, t);
            let mut sets = vec![("finite", geometry.metric(&point)?)];
            if phase != Phase::Broken {
                sets.push((
                    "first-order",
                    metric_first_order(phase, &point, cfg.j, cfg.epsilon)?,
                ));
                sets.push(("zeroth-order", metric_zeroth_order(phase, &point, cfg.j)?));
            }
            Ok(sets
                .into_iter()
                .map(|(label, g)| {
                    vec![
                        t.into(),
                        label.into(),
                        g[(0, 0)].into(),
                        g[(0, 1)].into(),
                        g[(1, 1)].into(),
                        g[(0, 2)].into(),
                        g[(1, 2)].into(),
                        g[(2, 2)].into(),
                    ]
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<Cell>> = computed.into_iter().flatten().collect();
    ctx.out.write_csv("metric.csv", &header, &rows)?;
    let mut orbit = Vec::with_capacity(grid.len());
    for &t in &grid {
        let (c, s) = phase_space_snapshot(phase, &p, t)?;
        orbit.push(vec![
            t.into(),
            c[0].into(),
            c[1].into(),
            s[(0, 0)].into(),
            s[(0, 1)].into(),
            s[(1, 1)].into(),
        ]);
    }
    ctx.out
        .write_csv("orbit.csv", &["t", "qc", "pc", "sxx", "sxp", "spp"], &orbit)?;
    Ok(json!({ "phase": phase.label(), "frame": "local" }))
}

fn metric_model(cfg: &RunConfig, phase: Phase) -> Result<MetricModel, CliError> {
    let model = match cfg.source {
        SourceChoice::Standard => {
            MetricModel::standard(phase, cfg.j, cfg.epsilon, cfg.time, cfg.convention)
        }
        SourceChoice::Fixed(src) => {
            MetricModel::new(phase, cfg.j, cfg.epsilon, cfg.time, src, cfg.convention)
        }
    };
    model.map_err(|e| CliError::Usage(e.to_string()))
}

fn source_label(m: &MetricModel) -> &'static str {
    match m.source {
        MetricSource::Thermodynamic => "thermodynamic",
        MetricSource::Hybrid => "hybrid",
        MetricSource::Numerical => "numerical",
    }
}

fn curvature(ctx: &mut Context) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let omega = cfg.omega_range.values();
    let xi = cfg.xi_range.values();
    if omega.len() < 3 || xi.len() < 3 {
        return Err(CliError::Usage(
            "curvature needs at least 3 nodes along each axis".into(),
        ));
    }
    if omega.len() * xi.len() > MAX_FIELD_NODES {
        return Err(CliError::Resource(format!(
            "{} nodes exceed {MAX_FIELD_NODES}",
            omega.len() * xi.len()
        )));
    }
    let phases: Vec<Phase> = match cfg.phase {
        PhaseChoice::Auto => vec![Phase::Symmetric, Phase::Broken],
        PhaseChoice::Fixed(ph) => vec![ph],
    };
    let mut r: Vec<Option<f64>> = vec![None; omega.len() * xi.len()];
    let mut summary = serde_json::Map::new();
    for &ph in &phases {
        let model = metric_model(cfg, ph)?;
        let field = MetricField::sample(&model, omega.clone(), xi.clone())?;
        let curv = ricci_scalar(&field);
        for (k, v) in curv.ricci.iter().enumerate() {
            if let Some(v) = v {
                r[k] = Some(*v);
            }
        }
        let mut entry =
            json!({ "source": source_label(&model), "valid_nodes": curv.valid_count() });
        if ph != Phase::Broken && model.source != MetricSource::Numerical && cfg.time > 0.0 {
            let near: Vec<Value> = [1e-2, 1e-3, 1e-4]
                .iter()
                .map(|&d| {
                    let v = ricci_near_line(&model, cfg.omega_x, d, curvature_spacing(d)).ok();
                    json!({ "distance": d, "R": v })
                })
                .collect();
            entry["near_line"] = json!({ "omega_x": cfg.omega_x, "samples": near });
        }
        summary.insert(ph.label().to_string(), entry);
    }
    let rows: Vec<Vec<Cell>> = (0..omega.len() * xi.len())
        .map(|k| {
            let v = r[k];
            vec![
                omega[k / xi.len()].into(),
                xi[k % xi.len()].into(),
                v.into(),
                Cell::Num(if v.is_some() { 0.0 } else { 1.0 }),
            ]
        })
        .collect();
    ctx.out
        .write_csv("curvature.csv", &["omega_x", "xi_y", "R", "mask"], &rows)?;
    Ok(json!({ "time": cfg.time, "convention": cfg.convention.label(), "phases": summary }))
}

/// Initial conditions of the reference geodesic set at `t = 4`, `j = 100`.
pub const REFERENCE_STARTS: [(Phase, [f64; 2], f64); 6] = [
    (Phase::Broken, [-0.5, 0.65], -0.08),
    (Phase::Broken, [-0.5, 0.65], 0.0),
    (Phase::Broken, [-0.5, 0.65], 0.02),
    (Phase::Broken, [-0.5, 0.65], 0.03),
    (Phase::Symmetric, [0.7, 0.54], -0.12),
    (Phase::Symmetric, [0.7, 0.54], -0.02),
];

fn geodesic(ctx: &mut Context) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let runs: Vec<(Phase, [f64; 2], f64)> = match cfg.start {
        Start::Reference => REFERENCE_STARTS.to_vec(),
        Start::Custom(x) => {
            let p = ModelParams::new(x[0], x[1], cfg.j, cfg.epsilon)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let ph = phase_at(cfg.phase, &p)?;
            cfg.v_xi.iter().map(|&v| (ph, x, v)).collect()
        }
    };
    let opts = GeodesicOptions::default();
    let paths = runs
        .par_iter()
        .map(|&(ph, x, v)| -> Result<_, CliError> {
            let model = metric_model(cfg, ph)?;
            let lattice = LatticeMetric::new(&model, cfg.lattice_h, [0.0, 0.0]);
            let path = geodesic_integrate(&lattice, x, v, &opts)?;
            Ok((ph, x, v, source_label(&model), path))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = Vec::new();
    for (k, (ph, x, v, src, path)) in paths.iter().enumerate() {
        let name = format!("geodesic_{}.csv", k + 1);
        let rows: Vec<Vec<Cell>> = path
            .samples
            .iter()
            .map(|s| {
                vec![
                    s.tau.into(),
                    s.x[0].into(),
                    s.x[1].into(),
                    s.residual.into(),
                ]
            })
            .collect();
        ctx.out
            .write_csv(&name, &["tau", "omega_x", "xi_y", "residual"], &rows)?;
        let len = fubini_study_length(path);
        let end = path.end();
        let xc = 0.5 * (1.0 + end[0] * end[0]).sqrt();
        summary.push(json!({
            "file": name,
            "phase": ph.label(),
            "source": src,
            "start": x,
            "v_xi": v,
            "stop": path.stop.label(),
            "end": end,
            "distance_to_line": (end[1] - xc).abs(),
            "max_residual": path.max_residual(),
            "length_affine": len.affine,
            "length_quadrature": len.quadrature,
        }));
    }
    Ok(json!({ "time": cfg.time, "lattice_h": cfg.lattice_h, "geodesics": summary }))
}

fn sweep(ctx: &mut Context) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let nodes: Vec<(f64, f64)> = cfg
        .omega_range
        .values()
        .into_iter()
        .flat_map(|o| cfg.xi_range.values().into_iter().map(move |x| (o, x)))
        .collect();
    if nodes.len() > MAX_FIELD_NODES {
        return Err(CliError::Resource(format!(
            "{} sweep nodes exceed {MAX_FIELD_NODES}",
            nodes.len()
        )));
    }
    let grid = times(cfg)?;
    let cache = ctx.cache;
    let values = nodes
        .par_iter()
        .map(|&(o, x)| -> Result<(String, Cell), CliError> {
            let p = ModelParams::new(o, x, cfg.j, cfg.epsilon)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let phase = match cfg.phase {
                PhaseChoice::Fixed(ph) if ph.contains(&p) => Some(ph),
                PhaseChoice::Fixed(_) => None,
                PhaseChoice::Auto => Phase::excited(&p),
            };
            let label = phase.map_or("transition", Phase::label).to_string();
            let value = observe(cfg, cache, &p, phase, &grid)?;
            Ok((label, value.into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<Cell>> = nodes
        .iter()
        .zip(values)
        .map(|(&(o, x), (label, v))| vec![o.into(), x.into(), label.into(), v])
        .collect();
    ctx.out.write_csv(
        "sweep.csv",
        &["omega_x", "xi_y", "phase", cfg.observable.label()],
        &rows,
    )?;
    Ok(json!({ "observable": cfg.observable.label(), "nodes": nodes.len() }))
}

fn observe(
    cfg: &RunConfig,
    cache: &EigenCache,
    p: &ModelParams,
    phase: Option<Phase>,
    grid: &[f64],
) -> Result<Option<f64>, CliError> {
    if cfg.observable == Observable::Complexity {
        return Ok(match phase {
            Some(ph) => Some(nielsen_complexity(ph, p, cfg.time)?),
            None => None,
        });
    }
    debug_assert!(cfg.observable.needs_spectrum());
    let init = match cfg.initial_angles {
        Some(_) => initial_state(cfg, p)?,
        None => match stationary_point(p, cfg.point)? {
            s if s.valid => s.point,
            _ => return Ok(None),
        },
    };
    let model = cache.model(*p)?;
    let series = model.fotoc(
        &FotocSpec::new(cfg.generator.clone(), cfg.epsilon, init),
        grid,
    )?;
    Ok(match cfg.observable {
        Observable::FotocVariance => Some(series.variance_re()),
        Observable::FotocMin => series.re().into_iter().reduce(f64::min),
        Observable::Lyapunov => lyapunov_fit(p, &series, None).ok().map(|f| f.lambda_q),
        Observable::Complexity => unreachable!(),
    })
}

fn check_finite(values: &[f64]) -> Result<(), CliError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Numeric(
            "non-finite value in computed series".into(),
        ))
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}
