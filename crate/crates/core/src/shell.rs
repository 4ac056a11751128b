//! Energy-shell description of a multimode coherent field.
//!
//! A product of coherent states over commensurate modes (mode `k` has
//! frequency `k·ω_f`) is expanded on normalized projections onto the
//! subspaces of fixed total field energy `N·ω_f`:
//!
//! ```text
//! |{α_k}⟩ = Σ_N γ_N |N⟩,    γ_N² = Σ_{Σ k n_k = N} Π_k e^{-|α_k|²} |α_k|^{2 n_k} / n_k!
//! ```
//!
//! The distribution `γ_N²` is the law of `Σ_k k·n_k` with independent
//! Poisson `n_k`, so it is computed by convolving each mode's Poisson
//! distribution stretched by `k` onto the energy axis.

use std::io::Write;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::output::fmt_f64;

/// Probability floor below which a shell is treated as unpopulated.
pub const SUPPORT_FLOOR: f64 = 1e-300;

/// Default half-width of the support window in units of `σ_N`.
pub const DEFAULT_WINDOW_SIGMAS: f64 = 8.0;

/// One field mode with frequency `k·ω_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// Harmonic index of the mode.
    pub k: u32,
    /// Coherent amplitude.
    pub alpha: C64,
    /// Spin-field coupling, in units of `ω_f`.
    pub g: f64,
}

impl Mode {
    pub fn new(k: u32, alpha: impl Into<C64>, g: f64) -> Self {
        Mode { k, alpha: alpha.into(), g }
    }

    /// Mean photon number `|α|²`.
    pub fn mean_photons(&self) -> f64 {
        self.alpha.norm_sqr()
    }
}

/// The field definition: a set of commensurate modes sorted by harmonic.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    modes: Vec<Mode>,
    omega_f: f64,
}

impl ModeSet {
    /// Build a mode set with `ω_f = 1`. Modes are sorted by `k`.
    pub fn new(modes: Vec<Mode>) -> Result<Self> {
        Self::with_fundamental(modes, 1.0)
    }

    pub fn with_fundamental(mut modes: Vec<Mode>, omega_f: f64) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidInput("mode set is empty".into()));
        }
        if !(omega_f.is_finite() && omega_f > 0.0) {
            return Err(Error::InvalidInput(format!("omega_f must be positive, got {omega_f}")));
        }
        modes.sort_by_key(|m| m.k);
        for (i, m) in modes.iter().enumerate() {
            if m.k == 0 {
                return Err(Error::InvalidInput("harmonic index k must be >= 1".into()));
            }
            if i > 0 && modes[i - 1].k == m.k {
                return Err(Error::InvalidInput(format!("duplicate harmonic k = {}", m.k)));
            }
            if !(m.alpha.re.is_finite() && m.alpha.im.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite alpha for k = {}", m.k)));
            }
            if !(m.g.is_finite() && m.g >= 0.0) {
                return Err(Error::InvalidInput(format!("coupling g must be finite and >= 0 for k = {}", m.k)));
            }
        }
        Ok(ModeSet { modes, omega_f })
    }

    /// Strong-field parameterization by Rabi frequencies: each mode gets
    /// `α = Ω/2` and `g = 1`, so the unit-ratio coupling element `g·α`
    /// equals `Ω/2`.
    pub fn from_rabi(harmonics: &[u32], rabi: &[C64]) -> Result<Self> {
        if harmonics.len() != rabi.len() {
            return Err(Error::InvalidInput("harmonics and Rabi frequencies differ in length".into()));
        }
        let modes = harmonics.iter().zip(rabi).map(|(&k, &om)| Mode::new(k, om * 0.5, 1.0)).collect();
        Self::new(modes)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn omega_f(&self) -> f64 {
        self.omega_f
    }

    pub fn harmonics(&self) -> Vec<u32> {
        self.modes.iter().map(|m| m.k).collect()
    }

    /// Position of harmonic `k` in the mode list.
    pub fn position(&self, k: u32) -> Option<usize> {
        self.modes.iter().position(|m| m.k == k)
    }

    /// `N̄ = Σ k |α_k|²`.
    pub fn mean_shell(&self) -> f64 {
        self.modes.iter().map(|m| m.k as f64 * m.mean_photons()).sum()
    }

    /// `σ_N² = Σ k² |α_k|²`.
    pub fn shell_variance(&self) -> f64 {
        self.modes.iter().map(|m| (m.k as f64).powi(2) * m.mean_photons()).sum()
    }

    /// Greatest common divisor of the harmonics.
    pub fn k0(&self) -> u32 {
        self.modes.iter().fold(0, |acc, m| gcd(acc, m.k))
    }

    /// Replace every coupling by `g_k = √(k / k_min) · g0`, the law for
    /// couplings growing with the square root of the mode frequency.
    pub fn with_sqrt_frequency_couplings(&self, g0: f64) -> ModeSet {
        let k_min = self.modes[0].k as f64;
        let modes = self
            .modes
            .iter()
            .map(|m| Mode { g: (m.k as f64 / k_min).sqrt() * g0, ..*m })
            .collect();
        ModeSet { modes, omega_f: self.omega_f }
    }
}

pub(crate) fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Distribution `γ_N²` over energy shells, stored on the `k₀` lattice.
#[derive(Debug, Clone)]
pub struct GammaTable {
    harmonics: Vec<u32>,
    n_min: i64,
    n_max: i64,
    k0: u32,
    gamma_sq: Vec<f64>,
    gamma: Vec<f64>,
    mean: f64,
    variance: f64,
    tail_mass: f64,
    epsilon: f64,
    window_sigmas: f64,
}

/// Tail-truncated Poisson distribution on `lo..=hi`.
struct TruncatedPoisson {
    lo: usize,
    pmf: Vec<f64>,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

fn truncated_poisson(lambda: f64, tail: f64) -> TruncatedPoisson {
    if lambda == 0.0 {
        return TruncatedPoisson { lo: 0, pmf: vec![1.0] };
    }
    let n_far = (lambda + 40.0 * lambda.sqrt() + 60.0).ceil() as usize;
    let lnf = ln_factorials(n_far);
    let ln_l = lambda.ln();
    let pmf: Vec<f64> = (0..=n_far).map(|n| (-lambda + n as f64 * ln_l - lnf[n]).exp()).collect();

    // largest lo with P(X < lo) < tail
    let mut lo = 0;
    let mut below = 0.0;
    while lo < n_far && below + pmf[lo] < tail {
        below += pmf[lo];
        lo += 1;
    }
    // smallest hi with P(X > hi) < tail
    let mut hi = n_far;
    let mut above = 0.0;
    while hi > lo && above + pmf[hi] < tail {
        above += pmf[hi];
        hi -= 1;
    }
    TruncatedPoisson { lo, pmf: pmf[lo..=hi].to_vec() }
}

/// Compute the shell distribution `γ_N²` of the coherent product state.
///
/// Each mode's Poisson distribution is truncated on both sides where its
/// tail mass drops below `epsilon / (2M)`, so the total discarded mass is
/// at most `epsilon`.
pub fn gamma_table(modes: &ModeSet, epsilon: f64) -> Result<GammaTable> {
    gamma_table_with_window(modes, epsilon, DEFAULT_WINDOW_SIGMAS)
}

pub fn gamma_table_with_window(modes: &ModeSet, epsilon: f64, window_sigmas: f64) -> Result<GammaTable> {
    if modes.is_empty() {
        return Err(Error::InvalidInput("gamma_table needs at least one mode".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(window_sigmas.is_finite() && window_sigmas > 0.0) {
        return Err(Error::InvalidInput(format!("window_sigmas must be positive, got {window_sigmas}")));
    }
    let per_side = epsilon / (2.0 * modes.len() as f64);

    let mut offset: usize = 0;
    let mut dist = vec![1.0];
    for m in modes.modes() {
        let k = m.k as usize;
        let p = truncated_poisson(m.mean_photons(), per_side);
        let mut next = vec![0.0; dist.len() + k * (p.pmf.len() - 1)];
        for (i, &d) in dist.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (s, &w) in p.pmf.iter().enumerate() {
                next[i + k * s] += d * w;
            }
        }
        offset += k * p.lo;
        dist = next;
    }

    let k0 = modes.k0();
    let n_min = offset as i64;
    let n_max = n_min + dist.len() as i64 - 1;
    let gamma_sq: Vec<f64> = dist.iter().step_by(k0 as usize).copied().collect();
    let gamma = gamma_sq.iter().map(|g| g.sqrt()).collect();
    let total: f64 = gamma_sq.iter().sum();

    Ok(GammaTable {
        harmonics: modes.harmonics(),
        n_min,
        n_max,
        k0,
        gamma_sq,
        gamma,
        mean: modes.mean_shell(),
        variance: modes.shell_variance(),
        tail_mass: (1.0 - total).max(0.0),
        epsilon,
        window_sigmas,
    })
}

impl GammaTable {
    pub fn harmonics(&self) -> &[u32] {
        &self.harmonics
    }

    pub fn n_min(&self) -> i64 {
        self.n_min
    }

    pub fn n_max(&self) -> i64 {
        self.n_max
    }

    pub fn k0(&self) -> u32 {
        self.k0
    }

    /// Closed-form mean `N̄ = Σ k|α_k|²`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Closed-form variance `σ_N² = Σ k²|α_k|²`.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn window_sigmas(&self) -> f64 {
        self.window_sigmas
    }

    fn slot(&self, n: i64) -> Option<usize> {
        if n < self.n_min || n > self.n_max || (n - self.n_min) % self.k0 as i64 != 0 {
            return None;
        }
        Some(((n - self.n_min) / self.k0 as i64) as usize)
    }

    /// `γ_N²`, zero outside the stored window and off the `k₀` lattice.
    pub fn gamma_sq(&self, n: i64) -> f64 {
        self.slot(n).map_or(0.0, |i| self.gamma_sq[i])
    }

    /// Nonnegative square root `γ_N`.
    pub fn gamma(&self, n: i64) -> f64 {
        self.slot(n).map_or(0.0, |i| self.gamma[i])
    }

    /// Shells `N` on the `k₀` lattice within the stored window, with `γ_N²`.
    pub fn entries(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.gamma_sq
            .iter()
            .enumerate()
            .map(move |(i, &g)| (self.n_min + (i as i64) * self.k0 as i64, g))
    }

    /// Whether shell `n` is populated enough for ladder ratios to be used.
    pub fn in_support(&self, n: i64) -> bool {
        let sigma = self.variance.sqrt();
        self.gamma_sq(n) > SUPPORT_FLOOR && (n as f64 - self.mean).abs() <= self.window_sigmas * sigma
    }

    /// Supported shells in ascending order.
    pub fn support(&self) -> Vec<i64> {
        self.entries().map(|(n, _)| n).filter(|&n| self.in_support(n)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.gamma_sq.iter().sum()
    }

    /// Mean of the stored distribution, normalized by its total mass.
    pub fn empirical_mean(&self) -> f64 {
        let total = self.total_mass();
        self.entries().map(|(n, g)| n as f64 * g).sum::<f64>() / total
    }

    pub fn empirical_variance(&self) -> f64 {
        let total = self.total_mass();
        let mean = self.empirical_mean();
        self.entries().map(|(n, g)| (n as f64 - mean).powi(2) * g).sum::<f64>() / total
    }

    /// Write `(N, gamma_sq)` rows for every lattice shell in the window.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "N,gamma_sq")?;
        for (n, g) in self.entries() {
            writeln!(w, "{},{}", n, fmt_f64(g))?;
        }
        Ok(())
    }
}

/// Gaussian approximation of `γ_N²` for highly excited modes.
pub fn gamma_gaussian(modes: &ModeSet, n: i64) -> Result<f64> {
    if n < 0 {
        return Err(Error::InvalidInput(format!("shell index must be >= 0, got {n}")));
    }
    let variance = modes.shell_variance();
    if variance == 0.0 {
        return Err(Error::InvalidInput("all coherent amplitudes vanish; Gaussian limit undefined".into()));
    }
    let k0 = modes.k0() as i64;
    if n % k0 != 0 {
        return Ok(0.0);
    }
    let sigma = variance.sqrt();
    let x = n as f64 - modes.mean_shell();
    Ok(k0 as f64 / ((2.0 * std::f64::consts::PI).sqrt() * sigma) * (-x * x / (2.0 * variance)).exp())
}

/// Matrix element `⟨N|a_j|N+k_j⟩ = α_j γ_N / γ_{N+k_j}` of the annihilation
/// operator of mode `j` (position in `modes`) between shell states.
///
/// Returns zero when shell `N` is unpopulated and fails when `N` is
/// populated but `N + k_j` is not.
pub fn ladder_element(table: &GammaTable, modes: &ModeSet, n: i64, j: usize) -> Result<C64> {
    let mode = modes
        .modes()
        .get(j)
        .ok_or_else(|| Error::InvalidInput(format!("mode index {j} out of range")))?;
    if table.harmonics() != modes.harmonics().as_slice() {
        return Err(Error::BasisMismatch("gamma table built for different harmonics".into()));
    }
    if !table.in_support(n) {
        return Ok(C64::new(0.0, 0.0));
    }
    let upper = n + mode.k as i64;
    if !table.in_support(upper) {
        return Err(Error::OutsideSupport { shell: upper });
    }
    Ok(mode.alpha * (table.gamma(n) / table.gamma(upper)))
}

/// Every occupation vector with `0 <= n_k <= n_cap` and `Σ k n_k = N`.
///
/// Ordered with the first mode's occupation descending, then the next,
/// and so on.
pub fn enumerate_shell(harmonics: &[u32], n: i64, n_cap: u32) -> Vec<Vec<u32>> {
    fn recurse(harmonics: &[u32], rest: u64, cap: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        match harmonics.split_first() {
            None => {
                if rest == 0 {
                    out.push(prefix.clone());
                }
            }
            Some((&k, tail)) => {
                let top = (rest / k as u64).min(cap as u64) as u32;
                for c in (0..=top).rev() {
                    prefix.push(c);
                    recurse(tail, rest - c as u64 * k as u64, cap, prefix, out);
                    prefix.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    if n < 0 {
        return out;
    }
    recurse(harmonics, n as u64, n_cap, &mut Vec::with_capacity(harmonics.len()), &mut out);
    out
}

/// Shell index `Σ k n_k` of an occupation vector, in exact integers.
pub fn shell_index(occupations: &[u32], harmonics: &[u32]) -> i64 {
    occupations.iter().zip(harmonics).map(|(&n, &k)| n as i64 * k as i64).sum()
}

/// A Fock product with an exactly tracked squared amplitude, for symbolic
/// checks of ladder-operator algebra.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolicFock {
    pub occupations: Vec<u32>,
    pub amp_sq: u128,
}

impl SymbolicFock {
    pub fn new(occupations: Vec<u32>) -> Self {
        SymbolicFock { occupations, amp_sq: 1 }
    }

    /// Apply `a_i`; `None` when the result vanishes.
    pub fn lower(mut self, i: usize) -> Option<Self> {
        let n = self.occupations[i];
        if n == 0 {
            return None;
        }
        self.amp_sq *= n as u128;
        self.occupations[i] -= 1;
        Some(self)
    }

    /// Apply `a_i†`.
    pub fn raise(mut self, i: usize) -> Self {
        self.occupations[i] += 1;
        self.amp_sq *= self.occupations[i] as u128;
        self
    }
}

/// Apply `H_F / ω_f = Σ k a_k† a_k` to a Fock product and return the
/// integer eigenvalue, checking that every term reproduces the product.
pub fn field_energy_action(occupations: &[u32], harmonics: &[u32]) -> Option<i64> {
    let mut total: i64 = 0;
    for (i, &k) in harmonics.iter().enumerate() {
        let start = SymbolicFock::new(occupations.to_vec());
        let Some(lowered) = start.clone().lower(i) else {
            continue;
        };
        let back = lowered.raise(i);
        if back.occupations != start.occupations {
            return None;
        }
        // a†a|n⟩ = √n·√n |n⟩: the squared amplitude must be a perfect square
        let n = isqrt(back.amp_sq);
        if n * n != back.amp_sq {
            return None;
        }
        total += k as i64 * n as i64;
    }
    Some(total)
}

fn isqrt(v: u128) -> u128 {
    if v < 2 {
        return v;
    }
    let mut x = (v as f64).sqrt() as u128;
    while x * x > v {
        x -= 1;
    }
    while (x + 1) * (x + 1) <= v {
        x += 1;
    }
    x
}
