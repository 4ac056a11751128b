//! Time evolution of the spin inversion on Fock and shell bases, the L2
//! discrepancy between them and the two-parameter region scan.
//!
//! Propagation uses the full eigendecomposition below a dimension
//! threshold and a Lanczos approximation of `exp(-iHτ)` above it.

use std::io::Write;

use faer::{Mat, Side};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::basis::{shell_basis_window, FockBasis, ShellBasis, Spin};
use crate::error::{Error, Result};
use crate::hamiltonian::{assemble_rabi_fock, assemble_rabi_shell, HermitianOperator, SpinFieldParams};
use crate::output::fmt_f64;
use crate::shell::{gamma_table_with_window, GammaTable, Mode, ModeSet};
use crate::spectra::eigensystem;
use crate::C64;

/// Largest renormalization deficit accepted for an initial state.
pub const MAX_DEFICIT: f64 = 1e-6;

/// Samples on `[0, 1/g₀]` used for the L2 measure.
pub const DEFAULT_SAMPLES: usize = 2048;

/// Minimum number of samples for a full-window L2 value.
pub const MIN_L2_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Fock,
    Shell,
}

impl BasisKind {
    pub fn label(self) -> &'static str {
        match self {
            BasisKind::Fock => "fock",
            BasisKind::Shell => "shell",
        }
    }
}

/// A basis whose states carry a definite spin.
pub trait SpinResolved {
    fn kind(&self) -> BasisKind;
    fn spins(&self) -> Vec<Spin>;
    fn fingerprint(&self) -> u64;
}

impl SpinResolved for FockBasis {
    fn kind(&self) -> BasisKind {
        BasisKind::Fock
    }

    fn spins(&self) -> Vec<Spin> {
        self.states().iter().map(|s| s.spin).collect()
    }

    fn fingerprint(&self) -> u64 {
        FockBasis::fingerprint(self)
    }
}

impl SpinResolved for ShellBasis {
    fn kind(&self) -> BasisKind {
        BasisKind::Shell
    }

    fn spins(&self) -> Vec<Spin> {
        self.states().iter().map(|s| s.spin).collect()
    }

    fn fingerprint(&self) -> u64 {
        ShellBasis::fingerprint(self)
    }
}

/// Normalized state vector and the probability lost to truncation.
#[derive(Debug, Clone)]
pub struct InitialState {
    pub psi: Vec<C64>,
    pub deficit: f64,
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `⟨n|α⟩ = e^{-|α|²/2} αⁿ/√n!`, evaluated in log space.
fn coherent_amplitude(alpha: C64, n: u32) -> C64 {
    if alpha.norm() == 0.0 {
        return if n == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
    }
    let r = alpha.norm();
    let ln_mag = -0.5 * r * r + n as f64 * r.ln() - 0.5 * ln_factorial(n);
    C64::from_polar(ln_mag.exp(), n as f64 * alpha.arg())
}

/// Poisson mass above `cap`, summed directly so tiny tails stay accurate.
fn poisson_tail(lambda: f64, cap: u32) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut n = cap + 1;
    loop {
        let p = (-lambda + n as f64 * lambda.ln() - ln_factorial(n)).exp();
        total += p;
        if (p < 1e-40 || p < total * 1e-18) && n as f64 > lambda {
            return total;
        }
        n += 1;
    }
}

fn finish_initial(mut psi: Vec<C64>, deficit: f64) -> Result<InitialState> {
    if deficit > MAX_DEFICIT {
        return Err(Error::TruncationTooTight { deficit });
    }
    let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::TruncationTooTight { deficit: 1.0 });
    }
    for c in &mut psi {
        *c /= norm;
    }
    Ok(InitialState { psi, deficit })
}

/// Product of coherent states on every mode with the given spin, on a
/// Fock-spin basis.
///
/// For a full cutoff grid the deficit is the exact product of Poisson
/// tails; otherwise it is one minus the captured probability.
pub fn initial_state_fock(basis: &FockBasis, modes: &ModeSet, spin: Spin) -> Result<InitialState> {
    if basis.harmonics() != modes.harmonics().as_slice() {
        return Err(Error::BasisMismatch("basis and modes have different harmonics".into()));
    }
    let psi: Vec<C64> = basis
        .states()
        .iter()
        .map(|s| {
            if s.spin != spin {
                return C64::new(0.0, 0.0);
            }
            s.occupations
                .iter()
                .zip(modes.modes())
                .map(|(&n, m)| coherent_amplitude(m.alpha, n))
                .product()
        })
        .collect();
    let caps: Vec<u32> = (0..modes.len())
        .map(|i| basis.states().iter().map(|s| s.occupations[i]).max().unwrap_or(0))
        .collect();
    let grid: usize = caps.iter().map(|&c| c as usize + 1).product::<usize>() * 2;
    let deficit = if grid == basis.len() {
        let ln_kept: f64 = caps
            .iter()
            .zip(modes.modes())
            .map(|(&c, m)| (-poisson_tail(m.mean_photons(), c)).ln_1p())
            .sum();
        -ln_kept.exp_m1()
    } else {
        (1.0 - psi.iter().map(|c| c.norm_sqr()).sum::<f64>()).max(0.0)
    };
    finish_initial(psi, deficit)
}

/// `Σ γ_N |N, spin⟩` restricted to the basis.
pub fn initial_state_shell(basis: &ShellBasis, table: &GammaTable, spin: Spin) -> Result<InitialState> {
    if basis.harmonics() != table.harmonics() {
        return Err(Error::BasisMismatch("basis and gamma table have different harmonics".into()));
    }
    let psi: Vec<C64> = basis
        .states()
        .iter()
        .map(|s| if s.spin == spin { C64::new(table.gamma(s.n), 0.0) } else { C64::new(0.0, 0.0) })
        .collect();
    let captured: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    finish_initial(psi, (1.0 - captured).max(0.0))
}

/// Propagator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Below this dimension the full eigendecomposition is used.
    pub dense_limit: usize,
    /// Target local error per Krylov step.
    pub tolerance: f64,
    pub max_krylov: usize,
    /// Minimum number of Krylov steps per output interval.
    pub substeps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { dense_limit: 512, tolerance: 1e-11, max_krylov: 40, substeps: 1 }
    }
}

impl EvolveOptions {
    /// Always use the Krylov propagator.
    pub fn krylov() -> Self {
        EvolveOptions { dense_limit: 0, ..Self::default() }
    }
}

/// Samples of `ρ_ee - ρ_gg`, the norm and `⟨H⟩` along a trajectory.
#[derive(Debug, Clone)]
pub struct EvolutionTrace {
    pub times: Vec<f64>,
    pub inversion: Vec<f64>,
    pub norm: Vec<f64>,
    pub energy: Vec<f64>,
    pub basis_kind: BasisKind,
}

impl EvolutionTrace {
    pub fn max_norm_drift(&self) -> f64 {
        self.norm.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest `|⟨H⟩(t) - ⟨H⟩(0)|` relative to `max(|⟨H⟩(0)|, 1)`.
    pub fn max_energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        let scale = e0.abs().max(1.0);
        self.energy.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
    }

    /// Rows `t,inversion,norm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,inversion,norm")?;
        for i in 0..self.times.len() {
            writeln!(w, "{},{},{}", fmt_f64(self.times[i]), fmt_f64(self.inversion[i]), fmt_f64(self.norm[i]))?;
        }
        Ok(())
    }
}

/// Uniform grid of `samples` points on `[0, t_max]`.
pub fn uniform_grid(t_max: f64, samples: usize) -> Vec<f64> {
    (0..samples).map(|i| t_max * i as f64 / (samples - 1) as f64).collect()
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Lanczos approximation of `exp(-i(H-σ)τ) v`. Fails with the error
/// estimate when `max_krylov` vectors do not reach the tolerance.
fn krylov_expm(op: &HermitianOperator, shift: f64, v: &[C64], tau: f64, opts: &EvolveOptions) -> std::result::Result<Vec<C64>, f64> {
    let beta0 = norm(v);
    if beta0 == 0.0 || tau == 0.0 {
        return Ok(v.to_vec());
    }
    let n = v.len();
    let scale = op.norm_bound().max(1.0);
    let mut basis: Vec<Vec<C64>> = vec![v.iter().map(|c| c / beta0).collect()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut last_err = f64::INFINITY;
    for k in 0..opts.max_krylov.min(n) {
        op.matvec_into(&basis[k], &mut w);
        for (wi, vi) in w.iter_mut().zip(&basis[k]) {
            *wi -= vi * shift;
        }
        if k > 0 {
            let b = betas[k - 1];
            for (wi, vi) in w.iter_mut().zip(&basis[k - 1]) {
                *wi -= vi * b;
            }
        }
        let a = dot(&basis[k], &w).re;
        for (wi, vi) in w.iter_mut().zip(&basis[k]) {
            *wi -= vi * a;
        }
        // full reorthogonalization, twice
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= qi * c;
                }
            }
        }
        alphas.push(a);
        let b = norm(&w);

        let m = k + 1;
        let t = Mat::<f64>::from_fn(m, m, |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j || j + 1 == i {
                betas[i.min(j)]
            } else {
                0.0
            }
        });
        let eig = t.self_adjoint_eigen(Side::Lower).map_err(|_| f64::NAN)?;
        let (vals, vecs) = (eig.S().column_vector(), eig.U());
        let y: Vec<C64> = (0..m)
            .map(|i| (0..m).map(|l| C64::from_polar(vecs[(0, l)] * vecs[(i, l)], -vals[l] * tau)).sum())
            .collect();
        let err = beta0 * b * y[m - 1].norm();
        let breakdown = b < 1e-14 * scale;
        if err <= opts.tolerance || breakdown {
            let mut out = vec![C64::new(0.0, 0.0); n];
            for (yi, q) in y.iter().zip(&basis) {
                for (o, qi) in out.iter_mut().zip(q) {
                    *o += qi * yi * beta0;
                }
            }
            return Ok(out);
        }
        last_err = err;
        betas.push(b);
        basis.push(w.iter().map(|c| c / b).collect());
    }
    Err(last_err)
}

/// Advance over one output interval, splitting it until every Krylov step
/// meets the tolerance.
fn krylov_interval(op: &HermitianOperator, shift: f64, v: &[C64], tau: f64, opts: &EvolveOptions) -> Result<Vec<C64>> {
    let mut pieces = opts.substeps.max(1);
    loop {
        let h = tau / pieces as f64;
        let mut cur = v.to_vec();
        let mut failed = None;
        for _ in 0..pieces {
            match krylov_expm(op, shift, &cur, h, opts) {
                Ok(next) => cur = next,
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        match failed {
            None => return Ok(cur),
            Some(e) if pieces >= 1 << 20 => return Err(Error::StepFailure { achieved: e }),
            Some(_) => pieces *= 2,
        }
    }
}

/// `ψ(t) = exp(-iHt) ψ₀` sampled on `times`, which must start at 0 and
/// increase strictly.
pub fn evolve<B: SpinResolved>(op: &HermitianOperator, basis: &B, psi0: &[C64], times: &[f64], opts: &EvolveOptions) -> Result<EvolutionTrace> {
    if op.basis_fingerprint() != basis.fingerprint() {
        return Err(Error::BasisMismatch("operator was assembled on a different basis".into()));
    }
    if psi0.len() != op.dim() {
        return Err(Error::BasisMismatch(format!("state has length {} for dimension {}", psi0.len(), op.dim())));
    }
    if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::GridMismatch("time grid must start at 0 and increase strictly".into()));
    }
    let signs: Vec<f64> = basis.spins().iter().map(|s| s.sign()).collect();
    let observe = |psi: &[C64]| {
        let inv = psi.iter().zip(&signs).map(|(c, s)| s * c.norm_sqr()).sum::<f64>();
        (inv, norm(psi), op.expectation(psi))
    };

    let samples: Vec<(f64, f64, f64)> = if op.dim() < opts.dense_limit {
        let eig = eigensystem(op)?;
        let vecs = &eig.vectors;
        let coeffs = vecs.adjoint() * DVector::from_column_slice(psi0);
        times
            .par_iter()
            .map(|&t| {
                let phased = DVector::from_iterator(
                    coeffs.len(),
                    coeffs.iter().zip(&eig.values).map(|(c, &l)| c * C64::from_polar(1.0, -l * t)),
                );
                let psi: DVector<C64> = vecs * phased;
                observe(psi.as_slice())
            })
            .collect()
    } else {
        let shift = op.expectation(psi0) / norm(psi0).powi(2).max(f64::MIN_POSITIVE);
        let mut out = Vec::with_capacity(times.len());
        let mut psi = psi0.to_vec();
        out.push(observe(&psi));
        for w in times.windows(2) {
            psi = krylov_interval(op, shift, &psi, w[1] - w[0], opts)?;
            out.push(observe(&psi));
        }
        out
    };
    Ok(EvolutionTrace {
        times: times.to_vec(),
        inversion: samples.iter().map(|s| s.0).collect(),
        norm: samples.iter().map(|s| s.1).collect(),
        energy: samples.iter().map(|s| s.2).collect(),
        basis_kind: basis.kind(),
    })
}

/// `g₀ ∫₀^{t_max} |f - g|² dt` by the trapezoidal rule over the shared
/// samples with `t <= t_max`.
pub fn l2_on_window(f: &EvolutionTrace, g: &EvolutionTrace, g0: f64, t_max: f64) -> Result<f64> {
    if f.times.len() != g.times.len() {
        return Err(Error::GridMismatch(format!("{} vs {} samples", f.times.len(), g.times.len())));
    }
    let scale = f.times.last().copied().unwrap_or(1.0).abs().max(1.0);
    if f.times.iter().zip(&g.times).any(|(a, b)| (a - b).abs() > 1e-12 * scale) {
        return Err(Error::GridMismatch("traces are sampled on different times".into()));
    }
    if !(g0 > 0.0) {
        return Err(Error::InvalidInput(format!("g0 must be positive, got {g0}")));
    }
    let last = *f.times.last().ok_or_else(|| Error::GridMismatch("empty traces".into()))?;
    if last < t_max * (1.0 - 1e-12) {
        return Err(Error::GridMismatch(format!("traces end at {last}, window needs {t_max}")));
    }
    let inside = f.times.iter().take_while(|&&t| t <= t_max * (1.0 + 1e-12)).count();
    if inside < 2 {
        return Err(Error::GridMismatch("fewer than two samples in the window".into()));
    }
    let d2: Vec<f64> = (0..inside).map(|i| (f.inversion[i] - g.inversion[i]).powi(2)).collect();
    let integral: f64 = (1..inside).map(|i| 0.5 * (d2[i] + d2[i - 1]) * (f.times[i] - f.times[i - 1])).sum();
    Ok(g0 * integral)
}

/// The L2 discrepancy on `[0, 1/g₀]`; needs at least 1000 samples there.
pub fn l2_discrepancy(f: &EvolutionTrace, g: &EvolutionTrace, g0: f64) -> Result<f64> {
    if !(g0 > 0.0) {
        return Err(Error::InvalidInput(format!("g0 must be positive, got {g0}")));
    }
    let t_max = 1.0 / g0;
    let inside = f.times.iter().filter(|&&t| t <= t_max * (1.0 + 1e-12)).count();
    if inside < MIN_L2_SAMPLES {
        return Err(Error::GridMismatch(format!("{inside} samples on [0, 1/g0], need {MIN_L2_SAMPLES}")));
    }
    l2_on_window(f, g, g0, t_max)
}

/// Equal real coherent amplitudes on modes `ω₀, ω₀+Δ, …` with the spin
/// resonant with the lowest mode and couplings `√(ω_i/ω₀) g₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiRegime {
    /// Coherent amplitude `|α|` shared by all modes.
    pub alpha: f64,
    /// Lowest mode frequency, in units of `ω_f`.
    pub omega0_field: u32,
    /// `g₀ / ω̄`.
    pub g_ratio: f64,
    pub n_modes: usize,
    /// Mode spacing `Δ` in units of `ω_f`.
    pub spacing: u32,
}

impl RabiRegime {
    pub fn two_mode(alpha: f64, omega0_field: u32, g_ratio: f64) -> Self {
        RabiRegime { alpha, omega0_field, g_ratio, n_modes: 2, spacing: 1 }
    }

    /// Regime with mean frequency `ω̄`; fails unless `ω̄ - (n-1)Δ/2` is a
    /// positive integer.
    pub fn from_mean_frequency(alpha: f64, mean_frequency: f64, g_ratio: f64, n_modes: usize, spacing: u32) -> Result<Self> {
        let w0 = mean_frequency - 0.5 * (n_modes as f64 - 1.0) * spacing as f64;
        if (w0 - w0.round()).abs() > 1e-9 || w0.round() < 1.0 {
            return Err(Error::InvalidInput(format!("mean frequency {mean_frequency} gives non-integer lowest mode {w0}")));
        }
        Ok(RabiRegime { alpha, omega0_field: w0.round() as u32, g_ratio, n_modes, spacing })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.omega0_field == 0 || self.spacing == 0 {
            return Err(Error::InvalidInput("mode frequencies must be positive".into()));
        }
        if !(self.g_ratio.is_finite() && self.g_ratio > 0.0) {
            return Err(Error::InvalidInput(format!("g0 / mean frequency must be > 0, got {}", self.g_ratio)));
        }
        if !(1..=3).contains(&self.n_modes) {
            return Err(Error::InvalidInput(format!("1 to 3 modes supported, got {}", self.n_modes)));
        }
        Ok(())
    }

    pub fn harmonics(&self) -> Vec<u32> {
        (0..self.n_modes as u32).map(|i| self.omega0_field + i * self.spacing).collect()
    }

    /// `ω̄ = ω₀ + (n-1)Δ/2`.
    pub fn mean_frequency(&self) -> f64 {
        self.omega0_field as f64 + 0.5 * (self.n_modes as f64 - 1.0) * self.spacing as f64
    }

    pub fn g0(&self) -> f64 {
        self.g_ratio * self.mean_frequency()
    }

    pub fn modes(&self) -> Result<ModeSet> {
        ModeSet::new(self.harmonics().into_iter().map(|k| Mode::new(k, self.alpha, 0.0)).collect())
    }

    /// Per-mode Fock cutoff `⌈|α|² + 8|α| + 10⌉`.
    pub fn fock_cap(&self) -> u32 {
        (self.alpha * self.alpha + 8.0 * self.alpha + 10.0).ceil() as u32
    }

    pub fn fock_dim(&self) -> usize {
        2 * (self.fock_cap() as usize + 1).pow(self.n_modes as u32)
    }
}

/// Fock and shell inversion traces for one regime.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub regime: RabiRegime,
    pub fock: EvolutionTrace,
    pub shell: EvolutionTrace,
    /// L2 on `[0, 1/g₀]`.
    pub l2: f64,
    /// L2 on `[0, 0.1/g₀]`.
    pub l2_short: f64,
    pub fock_dim: usize,
    pub shell_dim: usize,
    pub fock_deficit: f64,
    pub shell_deficit: f64,
}

/// Shell windows tried in turn, in standard deviations of `γ_N²`.
const WINDOW_LADDER: [f64; 4] = [8.0, 12.0, 16.0, 24.0];

/// Shell-side pieces of a regime: table, basis, operator, initial state.
/// The window is widened until the truncation deficit is acceptable.
pub fn shell_model(regime: &RabiRegime) -> Result<(GammaTable, ShellBasis, HermitianOperator, InitialState)> {
    regime.validate()?;
    let modes = regime.modes()?;
    // skewed weak-field distributions need a wider window than 8σ
    let mut last = None;
    for sigmas in WINDOW_LADDER {
        let table = gamma_table_with_window(&modes, 1e-12, sigmas)?;
        let basis = shell_basis_window(&table)?;
        match initial_state_shell(&basis, &table, Spin::Up) {
            Ok(psi) => {
                let op = assemble_rabi_shell(&basis, Some(&table), &modes, &SpinFieldParams::rabi(regime.omega0_field as f64), regime.g0())?;
                return Ok((table, basis, op, psi));
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("window ladder is not empty"))
}

/// Fock-side pieces of a regime on the oracle cutoff grid.
pub fn fock_model(regime: &RabiRegime, dim_limit: usize) -> Result<(FockBasis, HermitianOperator, InitialState)> {
    regime.validate()?;
    let modes = regime.modes()?;
    let caps = vec![regime.fock_cap(); regime.n_modes];
    let basis = crate::basis::fock_basis_cutoff_with_limit(&regime.harmonics(), &caps, dim_limit)?;
    let op = assemble_rabi_fock(&basis, &modes, &SpinFieldParams::rabi(regime.omega0_field as f64), regime.g0())?;
    let psi = initial_state_fock(&basis, &modes, Spin::Up)?;
    Ok((basis, op, psi))
}

/// Evolve both bases over `[0, extent/g₀]` and measure their discrepancy.
pub fn compare_regime(regime: &RabiRegime, samples: usize, extent: f64, dim_limit: usize, opts: &EvolveOptions) -> Result<Comparison> {
    if !(extent >= 1.0) {
        return Err(Error::InvalidInput(format!("time extent must be >= 1/g0, got {extent}")));
    }
    let g0 = regime.g0();
    let times = uniform_grid(extent / g0, samples);
    let (fb, fop, fpsi) = fock_model(regime, dim_limit)?;
    let (_, sb, sop, spsi) = shell_model(regime)?;
    let fock = evolve(&fop, &fb, &fpsi.psi, &times, opts)?;
    let shell = evolve(&sop, &sb, &spsi.psi, &times, opts)?;
    let l2 = l2_discrepancy(&fock, &shell, g0)?;
    let l2_short = l2_on_window(&fock, &shell, g0, 0.1 / g0)?;
    Ok(Comparison {
        regime: *regime,
        l2,
        l2_short,
        fock_dim: fb.len(),
        shell_dim: sb.len(),
        fock_deficit: fpsi.deficit,
        shell_deficit: spsi.deficit,
        fock,
        shell,
    })
}

/// Six regimes with two modes: three at `g₀/ω̄ = 0.1` with varying
/// amplitude and frequency, three at `|α|² = 5` with varying coupling.
/// The first two of each triple are the canonical region-I and region-II
/// examples.
pub fn reference_regimes() -> Vec<(&'static str, RabiRegime)> {
    let a5 = 5f64.sqrt();
    vec![
        ("alpha2_w2_g0.1", RabiRegime::two_mode(2.0, 2, 0.1)),
        ("alpha1_w11_g0.1", RabiRegime::two_mode(1.0, 11, 0.1)),
        ("alpha0.707_w3_g0.1", RabiRegime::two_mode(0.5f64.sqrt(), 3, 0.1)),
        ("n5_w2_g0.01", RabiRegime::two_mode(a5, 2, 0.01)),
        ("n5_w2_g3.16", RabiRegime::two_mode(a5, 2, 10f64.sqrt())),
        ("n5_w9_g3.16", RabiRegime::two_mode(a5, 9, 10f64.sqrt())),
    ]
}

/// Parameters that may label a region-scan axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanAxis {
    /// Mean photon number per mode `|α|²`.
    Alpha2,
    /// Mean field frequency `ω̄`.
    MeanFrequency,
    /// `g₀/ω̄`.
    CouplingRatio,
}

impl ScanAxis {
    pub fn label(self) -> &'static str {
        match self {
            ScanAxis::Alpha2 => "alpha2",
            ScanAxis::MeanFrequency => "mean_frequency",
            ScanAxis::CouplingRatio => "g_ratio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "alpha2" => Some(ScanAxis::Alpha2),
            "mean_frequency" => Some(ScanAxis::MeanFrequency),
            "g_ratio" => Some(ScanAxis::CouplingRatio),
            _ => None,
        }
    }
}

/// Values held fixed along a region scan, and the numerical settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionFixed {
    pub alpha2: f64,
    pub mean_frequency: f64,
    pub g_ratio: f64,
    pub n_modes: usize,
    pub spacing: u32,
    pub samples: usize,
    pub dim_limit: usize,
    pub contour_level: f64,
}

impl Default for RegionFixed {
    fn default() -> Self {
        RegionFixed {
            alpha2: 5.0,
            mean_frequency: 2.5,
            g_ratio: 0.1,
            n_modes: 2,
            spacing: 1,
            samples: DEFAULT_SAMPLES,
            dim_limit: 20_000,
            contour_level: 1e-3,
        }
    }
}

/// L2 over a grid of two parameters with the contour at `contour_level`.
#[derive(Debug, Clone)]
pub struct RegionScan {
    pub x_axis: ScanAxis,
    pub y_axis: ScanAxis,
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    /// `l2[iy][ix]`, `NaN` where the cell failed.
    pub l2: Vec<Vec<f64>>,
    /// Failure reason per invalid cell.
    pub failures: Vec<(usize, usize, String)>,
    pub contour_level: f64,
    /// Contour segments in axis coordinates.
    pub contour: Vec<[(f64, f64); 2]>,
}

fn regime_at(fixed: &RegionFixed, assign: &[(ScanAxis, f64)]) -> Result<RabiRegime> {
    let (mut a2, mut wbar, mut g) = (fixed.alpha2, fixed.mean_frequency, fixed.g_ratio);
    for &(axis, v) in assign {
        match axis {
            ScanAxis::Alpha2 => a2 = v,
            ScanAxis::MeanFrequency => wbar = v,
            ScanAxis::CouplingRatio => g = v,
        }
    }
    if !(a2 >= 0.0) {
        return Err(Error::InvalidInput(format!("|alpha|^2 must be >= 0, got {a2}")));
    }
    let r = RabiRegime::from_mean_frequency(a2.sqrt(), wbar, g, fixed.n_modes, fixed.spacing)?;
    r.validate()?;
    Ok(r)
}

/// Fock-versus-shell L2 on `[0, 1/g₀]` at every grid point. Cells whose
/// Fock oracle exceeds the dimension limit, or which fail numerically,
/// are recorded as invalid.
pub fn region_scan(x_axis: ScanAxis, x_values: &[f64], y_axis: ScanAxis, y_values: &[f64], fixed: &RegionFixed) -> Result<RegionScan> {
    if x_axis == y_axis {
        return Err(Error::InvalidInput("scan axes must differ".into()));
    }
    if x_values.is_empty() || y_values.is_empty() {
        return Err(Error::InvalidInput("scan axes need at least one value".into()));
    }
    if !(fixed.contour_level > 0.0) {
        return Err(Error::InvalidInput("contour level must be positive".into()));
    }
    let cells: Vec<(usize, usize)> = (0..y_values.len()).flat_map(|iy| (0..x_values.len()).map(move |ix| (iy, ix))).collect();
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(iy, ix)| {
            let regime = regime_at(fixed, &[(x_axis, x_values[ix]), (y_axis, y_values[iy])])?;
            if regime.fock_dim() > fixed.dim_limit {
                return Err(Error::DimensionLimit { dim: regime.fock_dim(), limit: fixed.dim_limit });
            }
            compare_regime(&regime, fixed.samples, 1.0, fixed.dim_limit, &EvolveOptions::default()).map(|c| c.l2)
        })
        .collect();
    let mut l2 = vec![vec![f64::NAN; x_values.len()]; y_values.len()];
    let mut failures = Vec::new();
    for (&(iy, ix), r) in cells.iter().zip(results) {
        match r {
            Ok(v) => l2[iy][ix] = v,
            Err(e) => failures.push((iy, ix, e.to_string())),
        }
    }
    let contour = marching_squares(x_values, y_values, &l2, fixed.contour_level);
    Ok(RegionScan {
        x_axis,
        y_axis,
        x_values: x_values.to_vec(),
        y_values: y_values.to_vec(),
        l2,
        failures,
        contour_level: fixed.contour_level,
        contour,
    })
}

/// Contour of `log10(field) = log10(level)` by marching squares with
/// linear interpolation along cell edges. Cells touching an invalid value
/// are skipped.
pub fn marching_squares(xs: &[f64], ys: &[f64], field: &[Vec<f64>], level: f64) -> Vec<[(f64, f64); 2]> {
    let lv = level.log10();
    let f = |iy: usize, ix: usize| field[iy][ix].max(f64::MIN_POSITIVE).log10() - lv;
    let mut segs = Vec::new();
    if xs.len() < 2 || ys.len() < 2 {
        return segs;
    }
    for iy in 0..ys.len() - 1 {
        for ix in 0..xs.len() - 1 {
            let corners = [(iy, ix), (iy, ix + 1), (iy + 1, ix + 1), (iy + 1, ix)];
            if corners.iter().any(|&(a, b)| !field[a][b].is_finite()) {
                continue;
            }
            let v: Vec<f64> = corners.iter().map(|&(a, b)| f(a, b)).collect();
            let p: Vec<(f64, f64)> = corners.iter().map(|&(a, b)| (xs[b], ys[a])).collect();
            let mut crossings = Vec::new();
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if (v[a] < 0.0) != (v[b] < 0.0) {
                    let t = v[a] / (v[a] - v[b]);
                    crossings.push((p[a].0 + t * (p[b].0 - p[a].0), p[a].1 + t * (p[b].1 - p[a].1)));
                }
            }
            match crossings.len() {
                2 => segs.push([crossings[0], crossings[1]]),
                4 => {
                    // saddle: pair by the cell-centre value
                    let centre = v.iter().sum::<f64>() / 4.0;
                    if (centre < 0.0) == (v[0] < 0.0) {
                        segs.push([crossings[0], crossings[3]]);
                        segs.push([crossings[1], crossings[2]]);
                    } else {
                        segs.push([crossings[0], crossings[1]]);
                        segs.push([crossings[2], crossings[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

impl RegionScan {
    /// Rows `x,y,l2,valid`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{},l2,valid", self.x_axis.label(), self.y_axis.label())?;
        for (iy, y) in self.y_values.iter().enumerate() {
            for (ix, x) in self.x_values.iter().enumerate() {
                let v = self.l2[iy][ix];
                let valid = v.is_finite();
                let shown = if valid { fmt_f64(v) } else { "nan".to_string() };
                writeln!(w, "{},{},{},{}", fmt_f64(*x), fmt_f64(*y), shown, valid)?;
            }
        }
        Ok(())
    }

    pub fn write_contour_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x0,y0,x1,y1")?;
        for [(x0, y0), (x1, y1)] in &self.contour {
            writeln!(w, "{},{},{},{}", fmt_f64(*x0), fmt_f64(*y0), fmt_f64(*x1), fmt_f64(*y1))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{fock_basis_connected, fock_basis_cutoff, Coupling, FockSpinState};
    use approx::assert_abs_diff_eq;

    #[test]
    fn vacuum_initial_state() {
        let modes = ModeSet::new(vec![Mode::new(1, 0.0, 0.0), Mode::new(2, 0.0, 0.0)]).unwrap();
        let basis = fock_basis_cutoff(&[1, 2], &[3, 3]).unwrap();
        let s = initial_state_fock(&basis, &modes, Spin::Up).unwrap();
        let i = basis.index_of(&FockSpinState::new(vec![0, 0], Spin::Up)).unwrap();
        assert_eq!(s.psi[i], C64::new(1.0, 0.0));
        assert_eq!(s.deficit, 0.0);
    }

    #[test]
    fn poisson_amplitudes_and_tiny_deficit() {
        let modes = ModeSet::new(vec![Mode::new(1, 1.0, 0.0)]).unwrap();
        let basis = fock_basis_cutoff(&[1], &[20]).unwrap();
        let s = initial_state_fock(&basis, &modes, Spin::Up).unwrap();
        assert!(s.deficit < 1e-18 && s.deficit > 0.0);
        for n in 0..=20u32 {
            let i = basis.index_of(&FockSpinState::new(vec![n], Spin::Up)).unwrap();
            let p = (-1.0f64).exp() / (1..=n).map(f64::from).product::<f64>();
            assert_abs_diff_eq!(s.psi[i].norm_sqr(), p, epsilon = 1e-15);
        }
    }

    #[test]
    fn tight_truncation_is_rejected() {
        let modes = ModeSet::new(vec![Mode::new(1, 3.0, 0.0)]).unwrap();
        let basis = fock_basis_cutoff(&[1], &[5]).unwrap();
        assert!(matches!(initial_state_fock(&basis, &modes, Spin::Up), Err(Error::TruncationTooTight { .. })));
    }

    #[test]
    fn complex_alpha_phases() {
        let a = C64::from_polar(1.3, 0.7);
        for n in 0..6 {
            let c = coherent_amplitude(a, n);
            assert_abs_diff_eq!(c.arg().rem_euclid(std::f64::consts::TAU), (0.7 * n as f64).rem_euclid(std::f64::consts::TAU), epsilon = 1e-12);
        }
    }

    #[test]
    fn shell_initial_state_is_gamma() {
        let regime = RabiRegime::two_mode(1.5, 3, 0.1);
        let (table, basis, _, s) = shell_model(&regime).unwrap();
        assert!(s.deficit < MAX_DEFICIT);
        let kept = 1.0 - s.deficit;
        for (i, st) in basis.states().iter().enumerate() {
            let want = if st.spin == Spin::Up { table.gamma_sq(st.n) / kept } else { 0.0 };
            assert_abs_diff_eq!(s.psi[i].norm_sqr(), want, epsilon = 1e-14);
        }
    }

    #[test]
    fn uncoupled_inversion_is_constant() {
        let regime = RabiRegime::two_mode(1.0, 3, 0.1);
        let (fb, _, fpsi) = fock_model(&regime, 100_000).unwrap();
        let modes = regime.modes().unwrap();
        let op = assemble_rabi_fock(&fb, &modes, &SpinFieldParams::rabi(3.0), 0.0).unwrap();
        let times = uniform_grid(10.0, 200);
        for opts in [EvolveOptions::default(), EvolveOptions::krylov()] {
            let tr = evolve(&op, &fb, &fpsi.psi, &times, &opts).unwrap();
            assert!(tr.inversion.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn dense_and_krylov_agree() {
        let regime = RabiRegime::two_mode(1.0, 2, 0.1);
        let (fb, op, psi) = fock_model(&regime, 100_000).unwrap();
        assert!(op.dim() < 2048);
        let times = uniform_grid(1.0 / regime.g0(), 300);
        let dense = evolve(&op, &fb, &psi.psi, &times, &EvolveOptions { dense_limit: 4096, ..Default::default() }).unwrap();
        let kry = evolve(&op, &fb, &psi.psi, &times, &EvolveOptions::krylov()).unwrap();
        for (a, b) in dense.inversion.iter().zip(&kry.inversion) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert!(kry.max_norm_drift() < 1e-8);
        assert!(kry.max_energy_drift() < 1e-8);
    }

    #[test]
    fn single_mode_collapse() {
        // resonant single-mode Rabi model with |α|² = 5: the inversion
        // amplitude collapses on the scale g t ~ 1
        let regime = RabiRegime { alpha: 5f64.sqrt(), omega0_field: 10, g_ratio: 0.01, n_modes: 1, spacing: 1 };
        let (fb, op, psi) = fock_model(&regime, 100_000).unwrap();
        let g = regime.g0();
        let times = uniform_grid(3.0 / g, 3000);
        let tr = evolve(&op, &fb, &psi.psi, &times, &EvolveOptions::default()).unwrap();
        let window = |a: f64, b: f64| {
            tr.times
                .iter()
                .zip(&tr.inversion)
                .filter(|(t, _)| **t * g >= a && **t * g <= b)
                .map(|(_, x)| x.abs())
                .fold(0.0, f64::max)
        };
        assert!(window(0.0, 0.3) > 0.9);
        assert!(window(1.5, 2.5) < 0.5);
    }

    #[test]
    fn l2_definitions() {
        let times = uniform_grid(2.0, 2001);
        let trace = |f: &dyn Fn(f64) -> f64| EvolutionTrace {
            inversion: times.iter().map(|&t| f(t)).collect(),
            norm: vec![1.0; times.len()],
            energy: vec![0.0; times.len()],
            times: times.clone(),
            basis_kind: BasisKind::Shell,
        };
        let a = trace(&|t| t.sin());
        let b = trace(&|t| t.sin() + 0.3);
        assert_eq!(l2_discrepancy(&a, &a, 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(l2_discrepancy(&a, &b, 0.5).unwrap(), 0.09, epsilon = 1e-12);
        let short = trace(&|t| t);
        let mut other = short.clone();
        other.times.truncate(10);
        other.inversion.truncate(10);
        assert!(matches!(l2_discrepancy(&short, &other, 0.5), Err(Error::GridMismatch(_))));
        assert!(matches!(l2_discrepancy(&a, &b, 0.1), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn mismatched_basis_is_rejected() {
        let modes = ModeSet::new(vec![Mode::new(1, 1.0, 0.1)]).unwrap();
        let a = fock_basis_cutoff(&[1], &[12]).unwrap();
        let b = fock_basis_connected(&[1], FockSpinState::new(vec![3], Spin::Up), 2, Coupling::Rabi).unwrap();
        let op = assemble_rabi_fock(&a, &modes, &SpinFieldParams::rabi(1.0), 0.1).unwrap();
        let psi = vec![C64::new(0.0, 0.0); b.len()];
        assert!(matches!(evolve(&op, &b, &psi, &[0.0, 1.0], &EvolveOptions::default()), Err(Error::BasisMismatch(_))));
    }

    #[test]
    fn weak_fields_widen_the_shell_window() {
        let regime = RabiRegime::two_mode(0.5, 2, 0.1);
        let (table, _, _, psi) = shell_model(&regime).unwrap();
        assert!(table.window_sigmas() > 8.0);
        assert!(psi.deficit <= MAX_DEFICIT);
    }

    #[test]
    fn mean_frequency_mapping() {
        let r = RabiRegime::from_mean_frequency(1.0, 2.5, 0.1, 2, 1).unwrap();
        assert_eq!(r.omega0_field, 2);
        assert_abs_diff_eq!(r.g0(), 0.25, epsilon = 1e-15);
        assert!(RabiRegime::from_mean_frequency(1.0, 3.0, 0.1, 2, 1).is_err());
        assert_eq!(RabiRegime::two_mode(2.0, 2, 0.1).fock_cap(), 30);
    }

    #[test]
    fn marching_squares_finds_straight_contour() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 1.0];
        // log10 field falls linearly in x, crossing -3 at x = 1.5
        let field: Vec<Vec<f64>> = ys.iter().map(|_| xs.iter().map(|x| 10f64.powf(-1.5 - x)).collect()).collect();
        let segs = marching_squares(&xs, &ys, &field, 1e-3);
        assert_eq!(segs.len(), 1);
        for p in segs[0] {
            assert_abs_diff_eq!(p.0, 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_cell_scan_is_one_comparison() {
        let fixed = RegionFixed { samples: 1200, ..RegionFixed::default() };
        let scan = region_scan(ScanAxis::Alpha2, &[1.0], ScanAxis::MeanFrequency, &[3.5], &fixed).unwrap();
        let direct = compare_regime(&RabiRegime::two_mode(1.0, 3, 0.1), 1200, 1.0, fixed.dim_limit, &EvolveOptions::default()).unwrap();
        assert_eq!(scan.l2[0][0], direct.l2);
        assert!(scan.failures.is_empty());
        assert!(scan.contour.is_empty());
    }

    #[test]
    fn invalid_cells_are_recorded() {
        let fixed = RegionFixed { samples: 1000, dim_limit: 1000, ..RegionFixed::default() };
        let scan = region_scan(ScanAxis::Alpha2, &[0.5, 50.0], ScanAxis::MeanFrequency, &[3.0, 3.5], &fixed).unwrap();
        assert!(scan.l2[0].iter().all(|v| v.is_nan()));
        assert!(scan.l2[1][0].is_finite());
        assert!(scan.l2[1][1].is_nan());
        assert_eq!(scan.failures.len(), 3);
    }
}
