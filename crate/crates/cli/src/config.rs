//! Run configuration: a TOML file with one section per subcommand.
//!
//! All physical quantities are in units of the fundamental frequency
//! `ω_f`. Unknown keys are rejected, and every violation is reported with
//! its key path rather than stopping at the first one.

use std::collections::BTreeSet;
use std::fmt;

use multifreq::dynamics::ScanAxis;
use multifreq::effective::PulseCondition;
use num_complex::Complex64 as C64;
use toml::{Table, Value};

/// A schema or unit-sanity violation at a key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// One field mode. Exactly one of `alpha` (coherent amplitude) or `rabi`
/// (strong-field Rabi frequency `Ω = 2gα`) is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpec {
    pub k: u32,
    pub alpha: Option<C64>,
    pub rabi: Option<C64>,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSection {
    pub epsilon: f64,
    pub window_sigmas: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSection {
    pub j: u32,
    pub depth: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub samples: usize,
    /// Seed shell for amplitude-defined modes; defaults to the mean.
    pub seed_n: Option<i64>,
    pub exact_ratios: bool,
    pub dump_basis: bool,
    /// Resonances whose avoided crossing is located and reported.
    pub crossings: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveSection {
    pub j: u32,
    pub q: i32,
    pub delta_min: f64,
    pub delta_max: f64,
    pub samples: usize,
    pub z: f64,
    pub pulse: PulseCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveSection {
    pub alpha: f64,
    pub omega0_field: u32,
    pub g_ratio: f64,
    pub n_modes: usize,
    pub spacing: u32,
    pub samples: usize,
    /// Trace length in units of `1/g₀`.
    pub extent: f64,
    pub dim_limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSection {
    pub x_axis: ScanAxis,
    pub x_values: Vec<f64>,
    pub y_axis: ScanAxis,
    pub y_values: Vec<f64>,
    pub alpha2: f64,
    pub mean_frequency: f64,
    pub g_ratio: f64,
    pub n_modes: usize,
    pub spacing: u32,
    pub samples: usize,
    pub contour_level: f64,
    pub dim_limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathologySection {
    /// Centre harmonic; modes are `j-1, j, j+1`.
    pub j: u32,
    /// Rabi frequency `2g√n` shared by the three modes.
    pub omega: f64,
    /// Seed occupation of every mode.
    pub n: u32,
    pub depth: usize,
    /// Spread above which a degenerate pair is flagged as broken.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub modes: Vec<ModeSpec>,
    pub gamma: GammaSection,
    pub spectrum: SpectrumSection,
    pub effective: EffectiveSection,
    pub evolve: EvolveSection,
    pub scan: ScanSection,
    pub pathology: PathologySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            modes: Vec::new(),
            gamma: GammaSection { epsilon: 1e-12, window_sigmas: 8.0 },
            spectrum: SpectrumSection {
                j: 10,
                depth: 12,
                delta_min: -2.5,
                delta_max: 2.5,
                samples: 401,
                seed_n: None,
                exact_ratios: false,
                dump_basis: false,
                crossings: Vec::new(),
            },
            effective: EffectiveSection {
                j: 10,
                q: 2,
                delta_min: -0.1,
                delta_max: 0.1,
                samples: 201,
                z: 0.0,
                pulse: PulseCondition::LocalPi,
            },
            evolve: EvolveSection {
                alpha: 2.0,
                omega0_field: 2,
                g_ratio: 0.1,
                n_modes: 2,
                spacing: 1,
                samples: 2048,
                extent: 1.0,
                dim_limit: 20_000,
            },
            scan: ScanSection {
                x_axis: ScanAxis::Alpha2,
                x_values: vec![0.5, 1.0, 2.0, 4.0],
                y_axis: ScanAxis::MeanFrequency,
                y_values: vec![2.5, 4.5, 6.5, 8.5],
                alpha2: 5.0,
                mean_frequency: 2.5,
                g_ratio: 0.1,
                n_modes: 2,
                spacing: 1,
                samples: 2048,
                contour_level: 1e-3,
                dim_limit: 20_000,
            },
            pathology: PathologySection { j: 10, omega: 0.2, n: 20, depth: 3, tolerance: 1e-9 },
        }
    }
}

/// Typed access to one table that remembers which keys were read.
struct Reader<'a> {
    table: &'a Table,
    path: String,
    seen: BTreeSet<&'static str>,
    errors: &'a mut Vec<ConfigError>,
}

impl<'a> Reader<'a> {
    fn new(table: &'a Table, path: impl Into<String>, errors: &'a mut Vec<ConfigError>) -> Self {
        Reader { table, path: path.into(), seen: BTreeSet::new(), errors }
    }

    fn key_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{}", self.path, key)
        }
    }

    fn error(&mut self, key: &str, message: impl Into<String>) {
        let path = self.key_path(key);
        self.errors.push(ConfigError { path, message: message.into() });
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.insert(key);
        self.table.get(key)
    }

    fn float(&mut self, key: &'static str, default: f64) -> f64 {
        match self.get(key) {
            None => default,
            Some(Value::Float(x)) if x.is_finite() => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => {
                self.error(key, "expected a finite number");
                default
            }
        }
    }

    fn positive(&mut self, key: &'static str, default: f64) -> f64 {
        let x = self.float(key, default);
        if !(x > 0.0) {
            self.error(key, format!("must be > 0, got {x}"));
        }
        x
    }

    fn nonnegative(&mut self, key: &'static str, default: f64) -> f64 {
        let x = self.float(key, default);
        if !(x >= 0.0) {
            self.error(key, format!("must be >= 0, got {x}"));
        }
        x
    }

    fn int(&mut self, key: &'static str, default: i64) -> i64 {
        match self.get(key) {
            None => default,
            Some(Value::Integer(i)) => *i,
            Some(_) => {
                self.error(key, "expected an integer");
                default
            }
        }
    }

    fn opt_int(&mut self, key: &'static str) -> Option<i64> {
        match self.get(key) {
            None => None,
            Some(Value::Integer(i)) => Some(*i),
            Some(_) => {
                self.error(key, "expected an integer");
                None
            }
        }
    }

    fn bounded(&mut self, key: &'static str, default: i64, lo: i64, hi: i64) -> i64 {
        let v = self.int(key, default);
        if v < lo || v > hi {
            self.error(key, format!("must lie in [{lo}, {hi}], got {v}"));
            return default;
        }
        v
    }

    fn boolean(&mut self, key: &'static str, default: bool) -> bool {
        match self.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.error(key, "expected true or false");
                default
            }
        }
    }

    fn string(&mut self, key: &'static str) -> Option<&'a str> {
        match self.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s.as_str()),
            Some(_) => {
                self.error(key, "expected a string");
                None
            }
        }
    }

    /// A real number, or `[re, im]` for a complex one.
    fn complex(&mut self, key: &'static str) -> Option<C64> {
        let v = self.get(key)?;
        let num = |v: &Value| match v {
            Value::Float(x) if x.is_finite() => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        };
        if let Some(x) = num(v) {
            return Some(C64::new(x, 0.0));
        }
        if let Value::Array(a) = v {
            if let [re, im] = a.as_slice() {
                if let (Some(re), Some(im)) = (num(re), num(im)) {
                    return Some(C64::new(re, im));
                }
            }
        }
        self.error(key, "expected a number or [re, im]");
        None
    }

    fn floats(&mut self, key: &'static str) -> Option<Vec<f64>> {
        let v = self.get(key)?;
        let parsed = match v {
            Value::Array(a) => a
                .iter()
                .map(|x| match x {
                    Value::Float(f) if f.is_finite() => Some(*f),
                    Value::Integer(i) => Some(*i as f64),
                    _ => None,
                })
                .collect::<Option<Vec<f64>>>(),
            _ => None,
        };
        if parsed.is_none() {
            self.error(key, "expected an array of numbers");
        }
        parsed
    }

    fn ints(&mut self, key: &'static str) -> Vec<i64> {
        let Some(v) = self.get(key) else {
            return Vec::new();
        };
        let parsed = match v {
            Value::Array(a) => a.iter().map(|x| x.as_integer()).collect::<Option<Vec<i64>>>(),
            _ => None,
        };
        parsed.unwrap_or_else(|| {
            self.error(key, "expected an array of integers");
            Vec::new()
        })
    }

    /// Report every key that no accessor asked for.
    fn finish(self) {
        for key in self.table.keys() {
            if !self.seen.contains(key.as_str()) {
                let path = if self.path.is_empty() { key.clone() } else { format!("{}.{}", self.path, key) };
                self.errors.push(ConfigError { path, message: "unknown key".into() });
            }
        }
    }
}

fn section<'a>(root: &'a Table, name: &'static str, errors: &mut Vec<ConfigError>) -> Option<&'a Table> {
    match root.get(name) {
        None => None,
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            errors.push(ConfigError { path: name.into(), message: "expected a table".into() });
            None
        }
    }
}

fn axis(r: &mut Reader, key: &'static str, default: ScanAxis) -> ScanAxis {
    match r.string(key) {
        None => default,
        Some(s) => ScanAxis::parse(s).unwrap_or_else(|| {
            r.error(key, format!("unknown axis {s:?}; expected alpha2, mean_frequency or g_ratio"));
            default
        }),
    }
}

/// Axis values from `<x>_values`, or from `<x>_min`, `<x>_max`, `<x>_count`
/// and optional `<x>_log`.
fn axis_values(r: &mut Reader, prefix: &'static str, default: &[f64]) -> Vec<f64> {
    let keys: [&'static str; 5] = match prefix {
        "x" => ["x_values", "x_min", "x_max", "x_count", "x_log"],
        _ => ["y_values", "y_min", "y_max", "y_count", "y_log"],
    };
    let explicit = r.floats(keys[0]);
    let has_range = [keys[1], keys[2], keys[3]].iter().any(|k| r.table.contains_key(*k));
    for k in [keys[1], keys[2], keys[3]] {
        r.get(k);
    }
    let log = r.boolean(keys[4], false);
    let values = match (explicit, has_range) {
        (Some(_), true) => {
            r.error(keys[0], format!("give either {} or a {prefix}_min/{prefix}_max/{prefix}_count range", keys[0]));
            default.to_vec()
        }
        (Some(v), false) => v,
        (None, true) => {
            let lo = r.float(keys[1], f64::NAN);
            let hi = r.float(keys[2], f64::NAN);
            let n = r.bounded(keys[3], 0, 1, 10_000) as usize;
            if !(lo.is_finite() && hi.is_finite()) || n == 0 {
                r.error(keys[3], "a range needs min, max and count");
                default.to_vec()
            } else if log && !(lo > 0.0 && hi > 0.0) {
                r.error(keys[4], "a logarithmic range needs positive bounds");
                default.to_vec()
            } else {
                (0..n)
                    .map(|i| {
                        let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                        if log {
                            (lo.ln() + t * (hi.ln() - lo.ln())).exp()
                        } else {
                            lo + t * (hi - lo)
                        }
                    })
                    .collect()
            }
        }
        (None, false) => default.to_vec(),
    };
    if values.is_empty() {
        r.error(keys[0], "needs at least one value");
    }
    values
}

fn parse_modes(root: &Table, errors: &mut Vec<ConfigError>) -> Vec<ModeSpec> {
    let Some(v) = root.get("modes") else {
        return Vec::new();
    };
    let Value::Array(items) = v else {
        errors.push(ConfigError { path: "modes".into(), message: "expected an array of tables ([[modes]])".into() });
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut ks = BTreeSet::new();
    for (i, item) in items.iter().enumerate() {
        let path = format!("modes[{i}]");
        let Value::Table(t) = item else {
            errors.push(ConfigError { path, message: "expected a table".into() });
            continue;
        };
        let mut r = Reader::new(t, path, errors);
        let k = match r.get("k") {
            Some(Value::Integer(k)) if *k >= 1 && *k <= u32::MAX as i64 => *k as u32,
            Some(_) => {
                r.error("k", "must be a positive integer harmonic index");
                1
            }
            None => {
                r.error("k", "missing harmonic index");
                1
            }
        };
        if !ks.insert(k) {
            r.error("k", format!("harmonic {k} appears twice"));
        }
        let alpha = r.complex("alpha");
        let rabi = r.complex("rabi");
        let g = r.nonnegative("g", 0.0);
        match (alpha, rabi) {
            (None, None) => r.error("alpha", "set alpha or rabi"),
            (Some(_), Some(_)) => r.error("rabi", "set only one of alpha and rabi"),
            _ => {}
        }
        if let Some(a) = rabi {
            if a.im == 0.0 && a.re < 0.0 {
                r.error("rabi", format!("Rabi frequency must be >= 0, got {}", a.re));
            }
        }
        if rabi.is_some() && t.contains_key("g") {
            r.error("g", "g is implied by rabi; remove it");
        }
        r.finish();
        out.push(ModeSpec { k, alpha, rabi, g });
    }
    if out.iter().any(|m| m.alpha.is_some()) && out.iter().any(|m| m.rabi.is_some()) {
        errors.push(ConfigError { path: "modes".into(), message: "all modes must use alpha or all must use rabi".into() });
    }
    out
}

/// Parse and validate a configuration, collecting every error.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let root: Table = match text.parse::<Table>() {
        Ok(t) => t,
        Err(e) => {
            let msg = e.message().to_string();
            let path = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "<document>".into());
            return Err(vec![ConfigError { path, message: msg }]);
        }
    };
    let d = RunConfig::default();
    let mut errors = Vec::new();
    let empty = Table::new();

    let modes = parse_modes(&root, &mut errors);

    let gamma = {
        let t = section(&root, "gamma", &mut errors).unwrap_or(&empty);
        let mut r = Reader::new(t, "gamma", &mut errors);
        let epsilon = r.positive("epsilon", d.gamma.epsilon);
        if epsilon >= 1.0 {
            r.error("epsilon", "must be < 1");
        }
        let window_sigmas = r.positive("window_sigmas", d.gamma.window_sigmas);
        r.finish();
        GammaSection { epsilon, window_sigmas }
    };

    let spectrum = {
        let s = &d.spectrum;
        let t = section(&root, "spectrum", &mut errors).unwrap_or(&empty);
        let mut r = Reader::new(t, "spectrum", &mut errors);
        let out = SpectrumSection {
            j: r.bounded("j", s.j as i64, 1, 100_000) as u32,
            depth: r.bounded("depth", s.depth as i64, 1, 200) as usize,
            delta_min: r.float("delta_min", s.delta_min),
            delta_max: r.float("delta_max", s.delta_max),
            samples: r.bounded("samples", s.samples as i64, 2, 1_000_000) as usize,
            seed_n: r.opt_int("seed_n"),
            exact_ratios: r.boolean("exact_ratios", s.exact_ratios),
            dump_basis: r.boolean("dump_basis", s.dump_basis),
            crossings: r.ints("crossings").into_iter().map(|q| q as i32).collect(),
        };
        if out.delta_min >= out.delta_max {
            r.error("delta_max", "must exceed delta_min");
        }
        r.finish();
        out
    };

    let effective = {
        let s = &d.effective;
        let t = section(&root, "effective", &mut errors).unwrap_or(&empty);
        let mut r = Reader::new(t, "effective", &mut errors);
        let pulse = match r.string("pulse") {
            None => s.pulse,
            Some("local_pi") => PulseCondition::LocalPi,
            Some("resonant_pi") => PulseCondition::ResonantPi,
            Some(other) => {
                r.error("pulse", format!("unknown pulse {other:?}; expected local_pi or resonant_pi"));
                s.pulse
            }
        };
        let out = EffectiveSection {
            j: r.bounded("j", s.j as i64, 1, 100_000) as u32,
            q: r.bounded("q", s.q as i64, -50, 50) as i32,
            delta_min: r.float("delta_min", s.delta_min),
            delta_max: r.float("delta_max", s.delta_max),
            samples: r.bounded("samples", s.samples as i64, 1, 1_000_000) as usize,
            z: r.float("z", s.z),
            pulse,
        };
        if out.delta_min > out.delta_max {
            r.error("delta_max", "must not be below delta_min");
        }
        r.finish();
        out
    };

    let evolve = {
        let s = &d.evolve;
        let t = section(&root, "evolve", &mut errors).unwrap_or(&empty);
        let mut r = Reader::new(t, "evolve", &mut errors);
        let out = EvolveSection {
            alpha: r.nonnegative("alpha", s.alpha),
            omega0_field: r.bounded("omega0_field", s.omega0_field as i64, 1, 10_000) as u32,
            g_ratio: r.positive("g_ratio", s.g_ratio),
            n_modes: r.bounded("n_modes", s.n_modes as i64, 1, 3) as usize,
            spacing: r.bounded("spacing", s.spacing as i64, 1, 10_000) as u32,
            samples: r.bounded("samples", s.samples as i64, 1000, 10_000_000) as usize,
            extent: r.float("extent", s.extent),
            dim_limit: r.bounded("dim_limit", s.dim_limit as i64, 2, 2_000_000) as usize,
        };
        if !(out.extent >= 1.0) {
            r.error("extent", format!("must be >= 1 (units of 1/g0), got {}", out.extent));
        }
        r.finish();
        out
    };

    let scan = {
        let s = &d.scan;
        let t = section(&root, "scan", &mut errors).unwrap_or(&empty);
        let mut r = Reader::new(t, "scan", &mut errors);
        let x_axis = axis(&mut r, "x_axis", s.x_axis);
        let y_axis = axis(&mut r, "y_axis", s.y_axis);
        if x_axis == y_axis {
            r.error("y_axis", "must differ from x_axis");
        }
        let out = ScanSection {
            x_axis,
            x_values: axis_values(&mut r, "x", &s.x_values),
            y_axis,
            y_values: axis_values(&mut r, "y", &s.y_values),
            alpha2: r.nonnegative("alpha2", s.alpha2),
            mean_frequency: r.positive("mean_frequency", s.mean_frequency),
            g_ratio: r.positive("g_ratio", s.g_ratio),
            n_modes: r.bounded("n_modes", s.n_modes as i64, 1, 3) as usize,
            spacing: r.bounded("spacing", s.spacing as i64, 1, 10_000) as u32,
            samples: r.bounded("samples", s.samples as i64, 1000, 10_000_000) as usize,
            contour_level: r.positive("contour_level", s.contour_level),
            dim_limit: r.bounded("dim_limit", s.dim_limit as i64, 2, 2_000_000) as usize,
        };
        r.finish();
        out
    };

    let pathology = {
        let s = &d.pathology;
        let t = section(&root, "pathology", &mut errors).unwrap_or(&empty);
        let mut r = Reader::new(t, "pathology", &mut errors);
        let out = PathologySection {
            j: r.bounded("j", s.j as i64, 2, 100_000) as u32,
            omega: r.nonnegative("omega", s.omega),
            n: r.bounded("n", s.n as i64, 1, 1_000_000) as u32,
            depth: r.bounded("depth", s.depth as i64, 1, 8) as usize,
            tolerance: r.positive("tolerance", s.tolerance),
        };
        r.finish();
        out
    };

    let seed = {
        let mut r = Reader::new(&root, "", &mut errors);
        let seed = r.int("seed", 0);
        if seed < 0 {
            r.error("seed", "must be >= 0");
        }
        for key in ["modes", "gamma", "spectrum", "effective", "evolve", "scan", "pathology"] {
            r.get(key);
        }
        r.finish();
        seed.max(0) as u64
    };

    if errors.is_empty() {
        Ok(RunConfig { seed, modes, gamma, spectrum, effective, evolve, scan, pathology })
    } else {
        Err(errors)
    }
}
