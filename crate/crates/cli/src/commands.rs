//! One function per subcommand. Each reads its config section, runs the
//! computation and writes its tables through the sink.

use std::collections::BTreeMap;
use std::fmt;

use multifreq::acceptance;
use multifreq::basis::{FockSpinState, Spin};
use multifreq::dynamics::{compare_regime, region_scan, EvolveOptions, RabiRegime, RegionFixed};
use multifreq::effective::{excitation_spectrum, write_spectrum_csv, RabiAmplitudes};
use multifreq::output::fmt_f64;
use multifreq::shell::{gamma_table_with_window, Mode, ModeSet};
use multifreq::spectra::{avoided_crossing, degenerate_basis_pathology, detuning_scan, ShellScanConfig};
use serde_json::json;

use crate::config::{ConfigError, ModeSpec, RunConfig};
use crate::sink::{LinePlot, Sink};

#[derive(Debug)]
pub enum CliError {
    Config(Vec<ConfigError>),
    Core(multifreq::Error),
    Io(std::io::Error),
    /// Acceptance criteria that did not pass.
    CriteriaFailed(Vec<u32>),
}

impl From<multifreq::Error> for CliError {
    fn from(e: multifreq::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(errs) => write!(f, "{} configuration error(s)", errs.len()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::CriteriaFailed(ids) => write!(f, "acceptance criteria failed: {ids:?}"),
        }
    }
}

impl CliError {
    /// 1 for bad input, 2 for numerical or I/O failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            _ => 2,
        }
    }

    /// One JSON object per error, for standard error.
    pub fn records(&self) -> Vec<serde_json::Value> {
        match self {
            CliError::Config(errs) => errs
                .iter()
                .map(|e| json!({"kind": "config", "path": e.path, "message": e.message}))
                .collect(),
            CliError::Core(e) => vec![json!({"kind": e.kind(), "message": e.to_string()})],
            CliError::Io(e) => vec![json!({"kind": "io", "message": e.to_string()})],
            CliError::CriteriaFailed(ids) => vec![json!({"kind": "acceptance", "failed": ids, "message": self.to_string()})],
        }
    }
}

fn config_error(path: &str, message: &str) -> CliError {
    CliError::Config(vec![ConfigError { path: path.into(), message: message.into() }])
}

fn sorted_modes(cfg: &RunConfig) -> Vec<ModeSpec> {
    let mut m = cfg.modes.clone();
    m.sort_by_key(|s| s.k);
    m
}

/// Mode set from amplitude-defined modes.
fn amplitude_modes(cfg: &RunConfig, needed_by: &str) -> Result<ModeSet, CliError> {
    let specs = sorted_modes(cfg);
    if specs.is_empty() {
        return Err(config_error("modes", &format!("{needed_by} needs at least one [[modes]] entry")));
    }
    if specs.iter().any(|m| m.alpha.is_none()) {
        return Err(config_error("modes", &format!("{needed_by} needs modes defined by alpha")));
    }
    Ok(ModeSet::new(specs.iter().map(|m| Mode::new(m.k, m.alpha.unwrap(), m.g)).collect())?)
}

pub fn gamma(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let modes = amplitude_modes(cfg, "gamma")?;
    let table = gamma_table_with_window(&modes, cfg.gamma.epsilon, cfg.gamma.window_sigmas)?;
    sink.table("gamma", |w| table.write_csv(w))?;
    let pts = table.entries().map(|(n, g)| (n as f64, g)).collect();
    sink.plot("gamma", &LinePlot::new("shell distribution", "N", "gamma_N^2").series("gamma^2", pts))?;
    println!(
        "shells {}..={} mass {} mean {} variance {}",
        table.n_min(),
        table.n_max(),
        fmt_f64(table.total_mass()),
        fmt_f64(table.mean()),
        fmt_f64(table.variance())
    );
    Ok(())
}

fn scan_config(cfg: &RunConfig) -> Result<ShellScanConfig, CliError> {
    let s = &cfg.spectrum;
    let specs = sorted_modes(cfg);
    if specs.is_empty() {
        return Err(config_error("modes", "spectrum needs at least one [[modes]] entry"));
    }
    if specs.iter().all(|m| m.rabi.is_some()) {
        let ks: Vec<u32> = specs.iter().map(|m| m.k).collect();
        let rabi: Vec<_> = specs.iter().map(|m| m.rabi.unwrap()).collect();
        let mut c = ShellScanConfig::strong_field(&ks, &rabi, s.j, s.depth)?;
        if let Some(n) = s.seed_n {
            c.seed_n = n;
        }
        return Ok(c);
    }
    let modes = amplitude_modes(cfg, "spectrum")?;
    let table = gamma_table_with_window(&modes, cfg.gamma.epsilon, cfg.gamma.window_sigmas)?;
    let k0 = table.k0() as i64;
    let seed_n = s.seed_n.unwrap_or_else(|| (table.mean() / k0 as f64).round() as i64 * k0);
    Ok(ShellScanConfig {
        modes,
        table: Some(table),
        j: s.j,
        seed_n,
        depth: s.depth,
        exact_ratios: s.exact_ratios,
        probe_qmax: 3,
    })
}

pub fn spectrum(cfg: &RunConfig, sink: &mut Sink, dump_basis: bool) -> Result<(), CliError> {
    let s = &cfg.spectrum;
    let sc = scan_config(cfg)?;
    let scan = detuning_scan(&sc, (s.delta_min, s.delta_max), s.samples)?;
    sink.table("spectrum", |w| scan.write_csv(w))?;
    if dump_basis || s.dump_basis {
        let basis = sc.basis()?;
        sink.table("basis", |w| basis.write_csv(w))?;
    }
    if !s.crossings.is_empty() {
        let reports = s.crossings.iter().map(|&q| avoided_crossing(&scan, q)).collect::<multifreq::Result<Vec<_>>>()?;
        sink.table("crossings", |w| {
            use std::io::Write;
            writeln!(w, "q,gap,position,shift")?;
            for r in &reports {
                writeln!(w, "{},{},{},{}", r.q, fmt_f64(r.gap), fmt_f64(r.position), fmt_f64(r.shift))?;
            }
            Ok(())
        })?;
        for r in &reports {
            println!("q = {}: gap {} at {}", r.q, fmt_f64(r.gap), fmt_f64(r.position));
        }
    }
    if sink.svg_enabled() {
        let pts = scan
            .delta_values
            .iter()
            .zip(&scan.levels)
            .flat_map(|(d, row)| row.iter().map(move |e| (*d, *e)))
            .collect();
        let mut plot = LinePlot::new("dressed energies", "detuning", "energy").series("levels", pts);
        plot.scatter = true;
        sink.plot("spectrum", &plot)?;
    }
    println!("{} samples, {} levels", scan.delta_values.len(), scan.levels.first().map_or(0, |r| r.len()));
    Ok(())
}

pub fn effective(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let e = &cfg.effective;
    let specs = sorted_modes(cfg);
    if specs.is_empty() || specs.iter().any(|m| m.rabi.is_none()) {
        return Err(config_error("modes", "effective needs [[modes]] defined by rabi"));
    }
    let omega: BTreeMap<u32, _> = specs.iter().map(|m| (m.k, m.rabi.unwrap())).collect();
    let amps = RabiAmplitudes::new(e.j, omega)?;
    let deltas: Vec<f64> = if e.samples == 1 {
        vec![e.delta_min]
    } else {
        (0..e.samples).map(|i| e.delta_min + (e.delta_max - e.delta_min) * i as f64 / (e.samples - 1) as f64).collect()
    };
    let points = excitation_spectrum(e.q, &amps, &deltas, e.z, e.pulse)?;
    sink.table("effective", |w| write_spectrum_csv(&points, w))?;
    let pts = points.iter().map(|p| (p.model.delta, p.probability)).collect();
    sink.plot("effective", &LinePlot::new("excitation spectrum", "detuning", "P").series(&format!("q = {}", e.q), pts))?;
    if let Some(peak) = points.iter().max_by(|a, b| a.probability.total_cmp(&b.probability)) {
        println!("peak {} at detuning {}", fmt_f64(peak.probability), fmt_f64(peak.model.delta));
    }
    Ok(())
}

pub fn evolve(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let e = &cfg.evolve;
    let regime = RabiRegime { alpha: e.alpha, omega0_field: e.omega0_field, g_ratio: e.g_ratio, n_modes: e.n_modes, spacing: e.spacing };
    regime.validate()?;
    // `samples` counts points per 1/g₀, so the L2 window keeps its density
    let total = ((e.samples - 1) as f64 * e.extent).round() as usize + 1;
    let c = compare_regime(&regime, total, e.extent, e.dim_limit, &EvolveOptions::default())?;
    sink.table("trace_fock", |w| c.fock.write_csv(w))?;
    sink.table("trace_shell", |w| c.shell.write_csv(w))?;
    sink.table("comparison", |w| {
        use std::io::Write;
        writeln!(w, "quantity,value")?;
        for (k, v) in [
            ("g0", regime.g0()),
            ("l2", c.l2),
            ("l2_short", c.l2_short),
            ("fock_dim", c.fock_dim as f64),
            ("shell_dim", c.shell_dim as f64),
            ("fock_deficit", c.fock_deficit),
            ("shell_deficit", c.shell_deficit),
            ("max_norm_drift", c.fock.max_norm_drift().max(c.shell.max_norm_drift())),
            ("max_energy_drift", c.fock.max_energy_drift().max(c.shell.max_energy_drift())),
        ] {
            writeln!(w, "{k},{}", fmt_f64(v))?;
        }
        Ok(())
    })?;
    let g0 = regime.g0();
    let scaled = |t: &multifreq::dynamics::EvolutionTrace| t.times.iter().zip(&t.inversion).map(|(t, x)| (t * g0, *x)).collect();
    let plot = LinePlot::new("population inversion", "g0 t", "inversion").series("fock", scaled(&c.fock)).series("shell", scaled(&c.shell));
    sink.plot("evolve", &plot)?;
    println!("L2 {} (short window {}), dims fock {} shell {}", fmt_f64(c.l2), fmt_f64(c.l2_short), c.fock_dim, c.shell_dim);
    Ok(())
}

pub fn scan(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let s = &cfg.scan;
    let fixed = RegionFixed {
        alpha2: s.alpha2,
        mean_frequency: s.mean_frequency,
        g_ratio: s.g_ratio,
        n_modes: s.n_modes,
        spacing: s.spacing,
        samples: s.samples,
        dim_limit: s.dim_limit,
        contour_level: s.contour_level,
    };
    let r = region_scan(s.x_axis, &s.x_values, s.y_axis, &s.y_values, &fixed)?;
    sink.table("scan", |w| r.write_csv(w))?;
    sink.table("contour", |w| r.write_contour_csv(w))?;
    if sink.svg_enabled() {
        let pts = r.contour.iter().flat_map(|seg| seg.iter().copied()).collect();
        let mut plot = LinePlot::new("L2 contour", s.x_axis.label(), s.y_axis.label()).series("contour", pts);
        plot.scatter = true;
        sink.plot("contour", &plot)?;
    }
    for (iy, ix, why) in &r.failures {
        eprintln!("{}", json!({"kind": "invalid_cell", "x": r.x_values[*ix], "y": r.y_values[*iy], "message": why}));
    }
    let cells = r.x_values.len() * r.y_values.len();
    println!("{} of {} cells valid, {} contour segments", cells - r.failures.len(), cells, r.contour.len());
    Ok(())
}

pub fn pathology(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let p = &cfg.pathology;
    let g = 0.5 * p.omega / (p.n as f64).sqrt();
    let modes = ModeSet::new((p.j - 1..=p.j + 1).map(|k| Mode::new(k, 0.0, g)).collect())?;
    let report = degenerate_basis_pathology(&modes, &FockSpinState::new(vec![p.n; 3], Spin::Down), p.depth)?;
    sink.table("pathology", |w| report.write_csv(w, p.tolerance))?;
    sink.table("doublets", |w| report.write_doublets_csv(w))?;
    if sink.svg_enabled() {
        let pts = report.fock_levels.iter().map(|(_, e0, e)| (*e0, *e)).collect();
        let mut plot = LinePlot::new("dressed against unperturbed energy", "unperturbed", "dressed").series("fock", pts);
        plot.scatter = true;
        sink.plot("pathology", &plot)?;
    }
    let broken = report.pairs.iter().filter(|q| q.spread > p.tolerance).count();
    println!("{} degenerate pairs, {} broken, max spread {}", report.pairs.len(), broken, fmt_f64(report.max_spread));
    Ok(())
}

pub fn selftest(sink: &mut Sink) -> Result<(), CliError> {
    let reports = acceptance::run_all();
    sink.table("selftest", |w| acceptance::write_csv(&reports, w))?;
    for r in &reports {
        println!("{}", r.summary_line());
    }
    let failed: Vec<u32> = reports.iter().filter(|r| !r.passed()).map(|r| r.id).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CriteriaFailed(failed))
    }
}
