//! Run configuration: defaults, config file and command-line flags merged in
//! that order of increasing precedence, then validated into a [`RunConfig`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use elmg_core::dynamics::Generator;
use elmg_core::effective::Phase;
use elmg_core::geometry::{MetricConvention, MetricSource};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subcommand {
    Fotoc,
    EchoCompare,
    Lyapunov,
    Complexity,
    Metric,
    Curvature,
    Geodesic,
    Sweep,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Fotoc => "fotoc",
            Subcommand::EchoCompare => "echo-compare",
            Subcommand::Lyapunov => "lyapunov",
            Subcommand::Complexity => "complexity",
            Subcommand::Metric => "metric",
            Subcommand::Curvature => "curvature",
            Subcommand::Geodesic => "geodesic",
            Subcommand::Sweep => "sweep",
        }
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config file
/// and then to the subcommand defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Spin length j (integer or half-integer).
    #[arg(long)]
    pub j: Option<String>,
    /// Transverse field Ω_x.
    #[arg(long = "omega-x", allow_hyphen_values = true)]
    pub omega_x: Option<String>,
    /// Quadratic coupling ξ_y.
    #[arg(long = "xi-y", allow_hyphen_values = true)]
    pub xi_y: Option<String>,
    /// End of the time grid.
    #[arg(long = "t-max")]
    pub t_max: Option<String>,
    /// Time step of the grid.
    #[arg(long)]
    pub dt: Option<String>,
    /// Perturbation strength ε.
    #[arg(long)]
    pub epsilon: Option<String>,
    /// symmetric, broken, ground or auto.
    #[arg(long)]
    pub phase: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Flat key=value config file, or a previous run manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<String>,
    /// Bypass the eigendecomposition cache.
    #[arg(long = "no-cache")]
    pub no_cache: bool,
    /// Perturbing operator: Q, P, Jx, Jy or Jz.
    #[arg(long)]
    pub generator: Option<String>,
    /// Stationary point (1-4) used as the initial coherent state.
    #[arg(long)]
    pub point: Option<String>,
    /// Polar angle of the initial coherent state (overrides --point).
    #[arg(long)]
    pub theta: Option<String>,
    /// Azimuth of the initial coherent state (with --theta).
    #[arg(long, allow_hyphen_values = true)]
    pub phi: Option<String>,
    /// Evaluation time for complexity, metric maps and geodesics.
    #[arg(long)]
    pub time: Option<String>,
    /// Ω_x grid as start:stop:count.
    #[arg(long = "omega-range", allow_hyphen_values = true)]
    pub omega_range: Option<String>,
    /// ξ_y grid as start:stop:count.
    #[arg(long = "xi-range", allow_hyphen_values = true)]
    pub xi_range: Option<String>,
    /// Sweep observable: fotoc-variance, fotoc-min, lyapunov or complexity.
    #[arg(long)]
    pub observable: Option<String>,
    /// Metric source: standard, thermodynamic, hybrid or numerical.
    #[arg(long)]
    pub source: Option<String>,
    /// Metric convention: raw or j-normalized.
    #[arg(long)]
    pub convention: Option<String>,
    /// Geodesic start as omega,xi, or reference for the built-in set of six.
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    /// Comma-separated initial ξ̇_y values for a custom geodesic start.
    #[arg(long = "v-xi", allow_hyphen_values = true)]
    pub v_xi: Option<String>,
    /// Lattice spacing of the metric used by geodesics.
    #[arg(long = "lattice-h")]
    pub lattice_h: Option<String>,
}

impl Flags {
    fn entries(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("j", self.j.clone()),
            ("omega_x", self.omega_x.clone()),
            ("xi_y", self.xi_y.clone()),
            ("t_max", self.t_max.clone()),
            ("dt", self.dt.clone()),
            ("epsilon", self.epsilon.clone()),
            ("phase", self.phase.clone()),
            ("out", self.out.clone()),
            ("threads", self.threads.clone()),
            ("cache", self.no_cache.then(|| "false".to_string())),
            ("generator", self.generator.clone()),
            ("point", self.point.clone()),
            ("theta", self.theta.clone()),
            ("phi", self.phi.clone()),
            ("time", self.time.clone()),
            ("omega_range", self.omega_range.clone()),
            ("xi_range", self.xi_range.clone()),
            ("observable", self.observable.clone()),
            ("source", self.source.clone()),
            ("convention", self.convention.clone()),
            ("start", self.start.clone()),
            ("v_xi", self.v_xi.clone()),
            ("lattice_h", self.lattice_h.clone()),
        ]
    }
}

pub const KEYS: [&str; 23] = [
    "j",
    "omega_x",
    "xi_y",
    "t_max",
    "dt",
    "epsilon",
    "phase",
    "out",
    "threads",
    "cache",
    "generator",
    "point",
    "theta",
    "phi",
    "time",
    "omega_range",
    "xi_range",
    "observable",
    "source",
    "convention",
    "start",
    "v_xi",
    "lattice_h",
];

fn defaults(cmd: Subcommand) -> BTreeMap<&'static str, &'static str> {
    let mut d = BTreeMap::from([
        ("j", "100"),
        ("omega_x", "4"),
        ("xi_y", "1"),
        ("t_max", "10"),
        ("dt", "0.05"),
        ("epsilon", "0.01"),
        ("phase", "auto"),
        ("out", "elmg-out"),
        ("threads", "0"),
        ("cache", "true"),
        ("generator", "Q"),
        ("point", "1"),
        ("theta", ""),
        ("phi", ""),
        ("time", "4"),
        ("omega_range", "4:4:1"),
        ("xi_range", "0.5:3.5:13"),
        ("observable", "fotoc-variance"),
        ("source", "standard"),
        ("convention", "raw"),
        ("start", "reference"),
        ("v_xi", "0"),
        ("lattice_h", "0.005"),
    ]);
    let overrides: &[(&str, &str)] = match cmd {
        Subcommand::EchoCompare => &[("generator", "Jx"), ("t_max", "0.1"), ("dt", "0.01")],
        Subcommand::Lyapunov => &[("j", "400"), ("xi_y", "3"), ("t_max", "5"), ("dt", "0.01")],
        Subcommand::Complexity => &[("time", "10"), ("xi_range", "0.01:4:400")],
        Subcommand::Metric => &[("t_max", "4"), ("dt", "0.1")],
        Subcommand::Curvature => &[("omega_range", "-1:1:21"), ("xi_range", "-1.5:1.5:61")],
        _ => &[],
    };
    for (k, v) in overrides {
        d.insert(k, v);
    }
    d
}

/// Reads a flat `key = value` file. Blank lines and `#` comments are skipped;
/// dashes in keys are accepted as underscores.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!(
                "config line {}: unknown key '{key}'",
                n + 1
            )));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

/// Loads a config file, or the `config` object of a run manifest.
pub fn load_file(path: &Path) -> Result<(BTreeMap<String, String>, Option<String>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))?;
        let obj = v.get("config").and_then(|c| c.as_object()).ok_or_else(|| {
            CliError::Usage(format!("manifest {} has no config object", path.display()))
        })?;
        let mut map = BTreeMap::new();
        for (k, val) in obj {
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::Usage(format!(
                    "manifest key '{k}' is not a config key"
                )));
            }
            let s = val
                .as_str()
                .ok_or_else(|| CliError::Usage(format!("manifest key '{k}' is not a string")))?;
            map.insert(k.clone(), s.to_string());
        }
        let cmd = v
            .get("subcommand")
            .and_then(|s| s.as_str())
            .map(str::to_string);
        Ok((map, cmd))
    } else {
        Ok((parse_key_values(&text)?, None))
    }
}

/// `start:stop:count` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Range {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| self.start + k as f64 * step)
            .collect()
    }
}

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("range '{s}' is not start:stop:count"));
        }
        let start: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| format!("bad range start '{}'", parts[0]))?;
        let stop: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| format!("bad range stop '{}'", parts[1]))?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| format!("bad range count '{}'", parts[2]))?;
        if !start.is_finite() || !stop.is_finite() {
            return Err(format!("range '{s}' is not finite"));
        }
        if count == 0 {
            return Err(format!("range '{s}' is empty"));
        }
        if count == 1 && start != stop {
            return Err(format!("range '{s}' has one point but distinct endpoints"));
        }
        Ok(Range { start, stop, count })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseChoice {
    Auto,
    Fixed(Phase),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    FotocVariance,
    FotocMin,
    Lyapunov,
    Complexity,
}

impl Observable {
    pub fn label(self) -> &'static str {
        match self {
            Observable::FotocVariance => "fotoc-variance",
            Observable::FotocMin => "fotoc-min",
            Observable::Lyapunov => "lyapunov",
            Observable::Complexity => "complexity",
        }
    }

    pub fn needs_spectrum(self) -> bool {
        self != Observable::Complexity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceChoice {
    Standard,
    Fixed(MetricSource),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    Reference,
    Custom([f64; 2]),
}

/// Validated configuration of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub j: f64,
    pub omega_x: f64,
    pub xi_y: f64,
    pub t_max: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub phase: PhaseChoice,
    pub out: PathBuf,
    pub threads: usize,
    pub cache: bool,
    pub generator: Generator,
    pub point: u8,
    pub initial_angles: Option<(f64, f64)>,
    pub time: f64,
    pub omega_range: Range,
    pub xi_range: Range,
    pub observable: Observable,
    pub source: SourceChoice,
    pub convention: MetricConvention,
    pub start: Start,
    pub v_xi: Vec<f64>,
    pub lattice_h: f64,
    /// Resolved settings, echoed into the manifest.
    pub settings: BTreeMap<String, String>,
    pub config_file: Option<PathBuf>,
}

fn num<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, CliError> {
    let v = &map[key];
    v.parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse '{v}'")))
}

fn finite(map: &BTreeMap<String, String>, key: &str) -> Result<f64, CliError> {
    let x: f64 = num(map, key)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Usage(format!("{key} must be finite")))
    }
}

fn positive(map: &BTreeMap<String, String>, key: &str) -> Result<f64, CliError> {
    let x = finite(map, key)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(CliError::Usage(format!("{key} must be positive, got {x}")))
    }
}

impl RunConfig {
    pub fn resolve(cmd: Subcommand, flags: &Flags) -> Result<Self, CliError> {
        let mut map: BTreeMap<String, String> = defaults(cmd)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(path) = &flags.config {
            let (file, recorded) = load_file(path)?;
            if let Some(rec) = recorded {
                if rec != cmd.name() {
                    return Err(CliError::Usage(format!(
                        "manifest was written by '{rec}', not '{}'",
                        cmd.name()
                    )));
                }
            }
            map.extend(file);
        }
        for (k, v) in flags.entries() {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        Self::from_settings(cmd, map, flags.config.clone())
    }

    pub fn from_settings(
        cmd: Subcommand,
        map: BTreeMap<String, String>,
        config_file: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        let bad = |key: &str, msg: String| CliError::Usage(format!("{key}: {msg}"));
        let j = positive(&map, "j")?;
        if (2.0 * j).fract() != 0.0 {
            return Err(bad("j", format!("{j} is not a multiple of 1/2")));
        }
        let t_max = finite(&map, "t_max")?;
        if t_max < 0.0 {
            return Err(bad("t_max", "must be non-negative".into()));
        }
        let epsilon = finite(&map, "epsilon")?;
        if epsilon < 0.0 {
            return Err(bad("epsilon", "must be non-negative".into()));
        }
        let phase = match map["phase"].as_str() {
            "auto" => PhaseChoice::Auto,
            s => PhaseChoice::Fixed(
                Phase::parse(s).ok_or_else(|| bad("phase", format!("unknown phase '{s}'")))?,
            ),
        };
        let generator = match map["generator"].to_ascii_lowercase().as_str() {
            "q" => Generator::Q,
            "p" => Generator::P,
            "jx" => Generator::Jx,
            "jy" => Generator::Jy,
            "jz" => Generator::Jz,
            s => return Err(bad("generator", format!("unknown generator '{s}'"))),
        };
        let point: u8 = num(&map, "point")?;
        if !(1..=4).contains(&point) {
            return Err(bad("point", format!("{point} is not in 1..4")));
        }
        let initial_angles = match (map["theta"].as_str(), map["phi"].as_str()) {
            ("", "") => None,
            ("", _) | (_, "") => {
                return Err(bad("theta", "theta and phi must be given together".into()))
            }
            _ => Some((finite(&map, "theta")?, finite(&map, "phi")?)),
        };
        let range = |key: &str| -> Result<Range, CliError> {
            map[key].parse().map_err(|e: String| bad(key, e))
        };
        let observable = match map["observable"].as_str() {
            "fotoc-variance" => Observable::FotocVariance,
            "fotoc-min" => Observable::FotocMin,
            "lyapunov" => Observable::Lyapunov,
            "complexity" => Observable::Complexity,
            s => return Err(bad("observable", format!("unknown observable '{s}'"))),
        };
        let source = match map["source"].as_str() {
            "standard" => SourceChoice::Standard,
            "thermodynamic" => SourceChoice::Fixed(MetricSource::Thermodynamic),
            "hybrid" => SourceChoice::Fixed(MetricSource::Hybrid),
            "numerical" => SourceChoice::Fixed(MetricSource::Numerical),
            s => return Err(bad("source", format!("unknown metric source '{s}'"))),
        };
        let convention = match map["convention"].as_str() {
            "raw" => MetricConvention::Raw,
            "j-normalized" => MetricConvention::JNormalized,
            s => return Err(bad("convention", format!("unknown convention '{s}'"))),
        };
        let start = match map["start"].as_str() {
            "reference" => Start::Reference,
            s => {
                let xy: Vec<f64> = s
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("start", format!("'{s}' is not omega,xi")))?;
                if xy.len() != 2 || !xy.iter().all(|v| v.is_finite()) {
                    return Err(bad("start", format!("'{s}' is not omega,xi")));
                }
                Start::Custom([xy[0], xy[1]])
            }
        };
        let v_xi: Vec<f64> = map["v_xi"]
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| {
                bad(
                    "v_xi",
                    format!("'{}' is not a list of numbers", map["v_xi"]),
                )
            })?;
        let cache = match map["cache"].as_str() {
            "true" => true,
            "false" => false,
            s => return Err(bad("cache", format!("'{s}' is not true/false"))),
        };
        Ok(Self {
            subcommand: cmd,
            j,
            omega_x: finite(&map, "omega_x")?,
            xi_y: finite(&map, "xi_y")?,
            t_max,
            dt: positive(&map, "dt")?,
            epsilon,
            phase,
            out: PathBuf::from(&map["out"]),
            threads: num(&map, "threads")?,
            cache,
            generator,
            point,
            initial_angles,
            time: finite(&map, "time")?,
            omega_range: range("omega_range")?,
            xi_range: range("xi_range")?,
            observable,
            source,
            convention,
            start,
            v_xi,
            lattice_h: positive(&map, "lattice_h")?,
            settings: map,
            config_file,
        })
    }

    /// Settings that determine the numbers written, i.e. everything except
    /// where they go and how they are scheduled.
    pub fn numeric_settings(&self) -> BTreeMap<String, String> {
        self.settings
            .iter()
            .filter(|(k, _)| !matches!(k.as_str(), "out" | "threads" | "cache"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.settings {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_parsing() {
        let m = parse_key_values("# run\nj = 50\nomega-x=2 # inline\n\n").unwrap();
        assert_eq!(m["j"], "50");
        assert_eq!(m["omega_x"], "2");
        assert!(parse_key_values("bogus = 1").is_err());
        assert!(parse_key_values("j").is_err());
    }

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "j = 50\nxi_y = 2\n").unwrap();
        let flags = Flags {
            config: Some(path),
            xi_y: Some("0.5".into()),
            ..Flags::default()
        };
        let c = RunConfig::resolve(Subcommand::Fotoc, &flags).unwrap();
        assert_eq!(c.j, 50.0);
        assert_eq!(c.xi_y, 0.5);
        assert_eq!(c.omega_x, 4.0);
    }

    #[test]
    fn ranges() {
        let r: Range = "0:1:5".parse().unwrap();
        assert_eq!(r.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!("0:1:0".parse::<Range>().is_err());
        assert!("0:1".parse::<Range>().is_err());
        assert!("0:1:1".parse::<Range>().is_err());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        for (k, v) in [
            ("j", "0.3"),
            ("phase", "liquid"),
            ("dt", "0"),
            ("epsilon", "-1"),
            ("point", "7"),
        ] {
            let mut m: BTreeMap<String, String> = defaults(Subcommand::Fotoc)
                .into_iter()
                .map(|(a, b)| (a.into(), b.into()))
                .collect();
            m.insert(k.into(), v.into());
            assert!(matches!(
                RunConfig::from_settings(Subcommand::Fotoc, m, None),
                Err(CliError::Usage(_))
            ));
        }
    }
}
