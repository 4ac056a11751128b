//! Effective two-level Hamiltonians for the resonance `ω₀ ≈ (j+q)ω_f`.
//!
//! The resonant pair is `a = |N-(j+q),↑⟩` and `b = |N,↓⟩`, both at energy
//! `∓Δ_q/2` relative to their mean. Virtual transitions through the other
//! shell states give level shifts `R_aa`, `R_bb` and a multi-photon
//! coupling `R_ab`. Only the sidebands `j-1, j, j+1` enter the closed
//! forms. Energies, detunings and Rabi frequencies are in units of `ω_f`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::shell::{ladder_element, GammaTable, ModeSet};
use crate::C64;

/// Denominators smaller than this invalidate the two-level reduction.
pub const SMALL_DENOMINATOR: f64 = 1e-6;

/// Rabi frequencies `Ω_k` keyed by harmonic, with `Ω_k` twice the shell
/// coupling element of mode `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiAmplitudes {
    j: u32,
    omega: BTreeMap<u32, C64>,
}

impl RabiAmplitudes {
    pub fn new(j: u32, omega: BTreeMap<u32, C64>) -> Result<Self> {
        if omega.values().any(|w| !(w.re.is_finite() && w.im.is_finite())) {
            return Err(Error::InvalidInput("Rabi frequencies must be finite".into()));
        }
        if omega.contains_key(&0) {
            return Err(Error::InvalidInput("harmonic 0 is not a field mode".into()));
        }
        Ok(RabiAmplitudes { j, omega })
    }

    /// Sidebands `j-1, j, j+1`.
    pub fn three(j: u32, minus: C64, centre: C64, plus: C64) -> Result<Self> {
        if j < 2 {
            return Err(Error::InvalidInput("j must be at least 2 for three sidebands".into()));
        }
        Self::new(j, BTreeMap::from([(j - 1, minus), (j, centre), (j + 1, plus)]))
    }

    /// Three equal real sidebands.
    pub fn balanced(j: u32, omega: f64) -> Result<Self> {
        let w = C64::new(omega, 0.0);
        Self::three(j, w, w, w)
    }

    /// Read `Ω_k = 2 g_k ⟨N-k|a_k|N⟩` off the shell couplings of shell `n`.
    /// Without a table the ratio is one.
    pub fn from_shell(modes: &ModeSet, table: Option<&GammaTable>, n: i64, j: u32) -> Result<Self> {
        let mut omega = BTreeMap::new();
        for (i, m) in modes.modes().iter().enumerate() {
            let el = match table {
                Some(t) => ladder_element(t, modes, n - m.k as i64, i)?,
                None => m.alpha,
            };
            omega.insert(m.k, el * (2.0 * m.g));
        }
        Self::new(j, omega)
    }

    pub fn j(&self) -> u32 {
        self.j
    }

    /// `Ω_k`, zero for harmonics that are not field modes.
    pub fn get(&self, k: i64) -> C64 {
        u32::try_from(k).ok().and_then(|k| self.omega.get(&k).copied()).unwrap_or(C64::new(0.0, 0.0))
    }

    /// `Ω_{j+p}`.
    pub fn sideband(&self, p: i32) -> C64 {
        self.get(self.j as i64 + p as i64)
    }

    pub fn conj(&self) -> Self {
        RabiAmplitudes { j: self.j, omega: self.omega.iter().map(|(&k, w)| (k, w.conj())).collect() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        RabiAmplitudes { j: self.j, omega: self.omega.iter().map(|(&k, w)| (k, w * s)).collect() }
    }
}

/// 2×2 effective Hamiltonian of resonance `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveTwoLevel {
    pub q: i32,
    /// `Δ_q = ω₀ - (j+q)ω_f`.
    pub delta: f64,
    pub r_aa: f64,
    pub r_bb: f64,
    pub r_ab: C64,
    /// Highest power of the interaction included.
    pub order: u32,
    pub z: f64,
}

fn checked(den: f64, context: &str) -> Result<f64> {
    if den.abs() < SMALL_DENOMINATOR {
        return Err(Error::SmallDenominator { value: den, context: context.to_string() });
    }
    Ok(1.0 / den)
}

/// First-order coupling `Ω_{j+q}/2`; zero when `j+q` is not a mode.
pub fn first_order(q: i32, amps: &RabiAmplitudes, delta: f64) -> EffectiveTwoLevel {
    EffectiveTwoLevel { q, delta, r_aa: 0.0, r_bb: 0.0, r_ab: amps.sideband(q) * 0.5, order: 1, z: 0.0 }
}

/// Second-order level shifts from the sidebands `p ≠ q`, `|p| <= 1`:
///
/// `R_aa = Σ |Ω_{j+p}|²/4 / (z + Δ/2 + (q-p))`,
/// `R_bb = Σ |Ω_{j+p}|²/4 / (z - Δ/2 - (q-p))`.
pub fn second_order_shifts(q: i32, amps: &RabiAmplitudes, delta: f64, z: f64) -> Result<(f64, f64)> {
    let mut r_aa = 0.0;
    let mut r_bb = 0.0;
    for p in -1..=1 {
        if p == q {
            continue;
        }
        let w = amps.sideband(p).norm_sqr() / 4.0;
        if w == 0.0 {
            continue;
        }
        let qp = (q - p) as f64;
        r_aa += w * checked(z + delta / 2.0 + qp, "second-order shift of the upper-spin state")?;
        r_bb += w * checked(z - delta / 2.0 - qp, "second-order shift of the lower-spin state")?;
    }
    Ok((r_aa, r_bb))
}

/// Third-order correction to the `q = 0` coupling, through the two
/// intermediate pairs reached via the outer sidebands.
pub fn third_order_q0(amps: &RabiAmplitudes, delta: f64, z: f64) -> Result<C64> {
    let pre = amps.sideband(-1) * amps.sideband(0).conj() * amps.sideband(1) / 8.0;
    if pre == C64::new(0.0, 0.0) {
        return Ok(pre);
    }
    let h = delta / 2.0;
    let ctx = "third-order q = 0 coupling";
    let bracket = checked(z - 1.0 - h, ctx)? * checked(z - 1.0 + h, ctx)? + checked(z + 1.0 - h, ctx)? * checked(z + 1.0 + h, ctx)?;
    Ok(pre * bracket)
}

/// Outer sidebands ordered as (absorbed, emitted) for the sign of `q`.
fn outer(amps: &RabiAmplitudes, q: i32) -> (C64, C64) {
    if q > 0 {
        (amps.sideband(1), amps.sideband(-1))
    } else {
        (amps.sideband(-1), amps.sideband(1))
    }
}

/// Lowest-order coupling for odd `|q| >= 3`: absorb `(|q|+1)/2` photons of
/// the outer sideband on the side of `q`, emit `(|q|-1)/2` into the other.
pub fn odd_q_coupling(q: i32, amps: &RabiAmplitudes, delta: f64, z: f64) -> Result<C64> {
    if q.abs() < 3 || q % 2 == 0 {
        return Err(Error::InvalidInput(format!("odd-q coupling needs odd |q| >= 3, got {q}")));
    }
    let m = (q.abs() - 1) / 2;
    let s = q.signum() as f64;
    let (absorbed, emitted) = outer(amps, q);
    let mut r = (absorbed / 2.0).powi(m + 1) * (emitted.conj() / 2.0).powi(m);
    let ctx = format!("odd-q coupling at q = {q}");
    for n in 1..=m {
        let two_n = 2.0 * n as f64;
        r *= checked(z - delta / 2.0 - s * two_n, &ctx)? * checked(z + delta / 2.0 + s * two_n, &ctx)?;
    }
    Ok(r)
}

/// On-resonance closed form of [`odd_q_coupling`]:
/// `(Ω₊/2)^{m+1} (-Ω₋*/2)^m / ((2ω_f)^{|q|-1} m!²)`, `m = (|q|-1)/2`.
pub fn odd_q_on_resonance(q: i32, amps: &RabiAmplitudes) -> Result<C64> {
    if q.abs() < 3 || q % 2 == 0 {
        return Err(Error::InvalidInput(format!("odd-q coupling needs odd |q| >= 3, got {q}")));
    }
    let m = (q.abs() - 1) / 2;
    let (absorbed, emitted) = outer(amps, q);
    let fact: f64 = (1..=m).map(f64::from).product();
    Ok((absorbed / 2.0).powi(m + 1) * (-emitted.conj() / 2.0).powi(m) / (2f64.powi(q.abs() - 1) * fact * fact))
}

/// One virtual step from `b` toward `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    /// Absorb a photon of harmonic `j + p` while raising the spin.
    Absorb(i32),
    /// Emit a photon of harmonic `j + p` while lowering the spin.
    Emit(i32),
}

/// Amplitude of a path of steps from `b` to `a` with resolvent
/// denominators `1/(z - E)` at every intermediate state.
fn path_amplitude(steps: &[Step], q: i32, amps: &RabiAmplitudes, delta: f64, z: f64) -> Result<C64> {
    let mut amp = C64::new(1.0, 0.0);
    // Σp over absorptions minus Σp over emissions
    let mut net = 0i64;
    let ctx = format!("even-q coupling at q = {q}");
    for (i, step) in steps.iter().enumerate() {
        let energy = match *step {
            Step::Absorb(p) => {
                amp *= amps.sideband(p) / 2.0;
                net += p as i64;
                q as f64 - net as f64 + delta / 2.0
            }
            Step::Emit(p) => {
                amp *= amps.sideband(p).conj() / 2.0;
                net -= p as i64;
                -(net as f64) - delta / 2.0
            }
        };
        if i + 1 < steps.len() {
            amp *= checked(z - energy, &ctx)?;
        }
    }
    Ok(amp)
}

/// The `|q|+1` lowest-order paths for even `|q| >= 2`. Every step uses an
/// outer sideband except one, which uses the centre mode `j`.
fn even_q_paths(q: i32) -> Vec<Vec<Step>> {
    let m = (q.abs() / 2) as usize;
    let s = q.signum();
    let mut paths = Vec::with_capacity(2 * m + 1);
    for deficit in 0..=2 * m {
        let path = (0..=2 * m)
            .map(|i| {
                let centre = i == deficit;
                if i % 2 == 0 {
                    Step::Absorb(if centre { 0 } else { s })
                } else {
                    Step::Emit(if centre { 0 } else { -s })
                }
            })
            .collect();
        paths.push(path);
    }
    paths
}

/// Lowest-order coupling for even `|q| >= 2`: the sum over the `|q|+1`
/// paths in which a single absorbed or emitted photon comes from the
/// centre mode.
pub fn even_q_coupling(q: i32, amps: &RabiAmplitudes, delta: f64, z: f64) -> Result<C64> {
    if q == 0 || q % 2 != 0 {
        return Err(Error::InvalidInput(format!("even-q coupling needs even |q| >= 2, got {q}")));
    }
    even_q_paths(q)
        .iter()
        .try_fold(C64::new(0.0, 0.0), |acc, p| Ok(acc + path_amplitude(p, q, amps, delta, z)?))
}

/// Three-term form of the `q = 2` coupling, one term per path:
///
/// `Ω_{j+1}²Ω_j*/8 · u₁d₁ + Ω_jΩ_{j-1}*Ω_{j+1}/8 · (u₂d₁ + u₁d₂)`
///
/// with `u_n = 1/(z - n - Δ/2)` and `d_n = 1/(z + n + Δ/2)`.
pub fn q2_specialization(amps: &RabiAmplitudes, delta: f64, z: f64) -> Result<C64> {
    let (wm, w0, wp) = (amps.sideband(-1), amps.sideband(0), amps.sideband(1));
    let h = delta / 2.0;
    let ctx = "q = 2 coupling";
    let u1 = checked(z - 1.0 - h, ctx)?;
    let u2 = checked(z - 2.0 - h, ctx)?;
    let d1 = checked(z + 1.0 + h, ctx)?;
    let d2 = checked(z + 2.0 + h, ctx)?;
    // absorb j+1, emit j, absorb j+1
    let t1 = wp * wp * w0.conj() / 8.0 * u1 * d1;
    // absorb j, emit j-1, absorb j+1; then absorb j+1, emit j-1, absorb j
    let t2 = w0 * wm.conj() * wp / 8.0 * (u2 * d1 + u1 * d2);
    Ok(t1 + t2)
}

/// Effective model at the lowest order that couples `a` and `b`, with
/// second-order shifts.
pub fn effective_two_level(q: i32, amps: &RabiAmplitudes, delta: f64, z: f64) -> Result<EffectiveTwoLevel> {
    let (r_aa, r_bb) = second_order_shifts(q, amps, delta, z)?;
    let (r_ab, order) = match q.abs() {
        0 => (amps.sideband(0) * 0.5 + third_order_q0(amps, delta, z)?, 3),
        1 => (amps.sideband(q) * 0.5, 2),
        n if n % 2 == 1 => (odd_q_coupling(q, amps, delta, z)?, n as u32),
        n => (even_q_coupling(q, amps, delta, z)?, n as u32 + 1),
    };
    Ok(EffectiveTwoLevel { q, delta, r_aa, r_bb, r_ab, order, z })
}

/// `E± = ±½√([Δ - (R_bb - R_aa)]² + |2R_ab|²)` about the mean shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedEnergies {
    pub plus: f64,
    pub minus: f64,
    /// `(R_aa + R_bb)/2`, common to both levels.
    pub mean_shift: f64,
}

impl EffectiveTwoLevel {
    /// `Δ - (R_bb - R_aa)`: detuning from the shifted resonance.
    pub fn effective_detuning(&self) -> f64 {
        self.delta - (self.r_bb - self.r_aa)
    }

    /// `Ω_eff = 2|R_ab|`.
    pub fn omega_eff(&self) -> f64 {
        2.0 * self.r_ab.norm()
    }

    /// Generalized Rabi frequency `√(δ² + Ω_eff²)`.
    pub fn omega_tilde(&self) -> f64 {
        self.effective_detuning().hypot(self.omega_eff())
    }
}

pub fn dressed_energies(eff: &EffectiveTwoLevel) -> DressedEnergies {
    let half = 0.5 * eff.omega_tilde();
    DressedEnergies { plus: half, minus: -half, mean_shift: 0.5 * (eff.r_aa + eff.r_bb) }
}

/// Upper-state probability after time `t` starting from the lower state.
pub fn rabi_excitation(eff: &EffectiveTwoLevel, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("time must be >= 0, got {t}")));
    }
    let wt = eff.omega_tilde();
    if wt == 0.0 {
        return Ok(0.0);
    }
    Ok((eff.omega_eff() / wt).powi(2) * (0.5 * wt * t).sin().powi(2))
}

/// How the pulse length is chosen across an excitation spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PulseCondition {
    /// `Ω̃_eff t = π` at every detuning.
    #[default]
    LocalPi,
    /// One pulse length, a π pulse on the shifted resonance.
    ResonantPi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumPoint {
    pub model: EffectiveTwoLevel,
    pub energies: DressedEnergies,
    pub probability: f64,
}

/// Self-consistent resonance `Δ = R_bb(Δ) - R_aa(Δ)` by fixed-point
/// iteration from the unshifted point.
pub fn shifted_resonance(q: i32, amps: &RabiAmplitudes, z: f64) -> Result<f64> {
    let mut d = 0.0;
    for _ in 0..200 {
        let (r_aa, r_bb) = second_order_shifts(q, amps, d, z)?;
        let next = r_bb - r_aa;
        if (next - d).abs() < 1e-15 {
            return Ok(next);
        }
        d = next;
    }
    Err(Error::NoConvergence { residual: f64::NAN })
}

/// Excitation probability of the effective model over a detuning grid.
pub fn excitation_spectrum(q: i32, amps: &RabiAmplitudes, deltas: &[f64], z: f64, pulse: PulseCondition) -> Result<Vec<SpectrumPoint>> {
    let fixed_t = match pulse {
        PulseCondition::LocalPi => None,
        PulseCondition::ResonantPi => {
            let d = shifted_resonance(q, amps, z)?;
            let w = effective_two_level(q, amps, d, z)?.omega_eff();
            if w == 0.0 {
                return Err(Error::InvalidInput(format!("no coupling at q = {q}; a resonant pi pulse is undefined")));
            }
            Some(PI / w)
        }
    };
    deltas
        .iter()
        .map(|&d| {
            let model = effective_two_level(q, amps, d, z)?;
            let probability = match fixed_t {
                Some(t) => rabi_excitation(&model, t)?,
                None if model.omega_tilde() == 0.0 => 0.0,
                None => rabi_excitation(&model, PI / model.omega_tilde())?,
            };
            Ok(SpectrumPoint { model, energies: dressed_energies(&model), probability })
        })
        .collect()
}

/// Rows `q,delta,r_aa,r_bb,re_r_ab,im_r_ab,e_plus,e_minus,p_peak`.
pub fn write_spectrum_csv<W: Write>(points: &[SpectrumPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "q,delta,r_aa,r_bb,re_r_ab,im_r_ab,e_plus,e_minus,p_peak")?;
    for p in points {
        let m = &p.model;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            m.q,
            fmt_f64(m.delta),
            fmt_f64(m.r_aa),
            fmt_f64(m.r_bb),
            fmt_f64(m.r_ab.re),
            fmt_f64(m.r_ab.im),
            fmt_f64(p.energies.plus),
            fmt_f64(p.energies.minus),
            fmt_f64(p.probability)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Independent oracle: enumerate every alternating absorb/emit path of
    /// `len` steps over the three sidebands from `b` to `a`, skipping the
    /// resonant pair as intermediates. Returns (sum, path count).
    fn brute_force(q: i32, amps: &RabiAmplitudes, delta: f64, z: f64, len: usize) -> (C64, usize) {
        let j = amps.j() as i64;
        let target = j + q as i64;
        let mut total = c(0.0, 0.0);
        let mut count = 0;
        let choices = 3usize.pow(len as u32);
        for code in 0..choices {
            let mut x = code;
            let mut photons_out = 0i64; // net absorbed harmonic sum
            let mut amp = c(1.0, 0.0);
            let mut ok = true;
            for step in 0..len {
                let p = (x % 3) as i64 - 1;
                x /= 3;
                let k = j + p;
                let up = step % 2 == 0;
                if up {
                    photons_out += k;
                    amp *= amps.get(k) / 2.0;
                } else {
                    photons_out -= k;
                    amp *= amps.get(k).conj() / 2.0;
                }
                let last = step + 1 == len;
                if last {
                    ok &= up && photons_out == target;
                } else {
                    // energies relative to the pair mean, ω₀ = j+q+Δ
                    let e = if up {
                        (j + q as i64 - photons_out) as f64 + delta / 2.0
                    } else {
                        -(photons_out as f64) - delta / 2.0
                    };
                    let is_a = up && photons_out == target;
                    let is_b = !up && photons_out == 0;
                    ok &= !is_a && !is_b;
                    amp /= z - e;
                }
            }
            if ok {
                total += amp;
                count += 1;
            }
        }
        (total, count)
    }

    fn random_amps(rng: &mut ChaCha8Rng, j: u32) -> RabiAmplitudes {
        let mut w = || c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        RabiAmplitudes::three(j, w(), w(), w()).unwrap()
    }

    #[test]
    fn first_order_q0_eigenvalues() {
        let amps = RabiAmplitudes::balanced(5, 0.3).unwrap();
        let e = first_order(0, &amps, 0.0);
        let d = dressed_energies(&e);
        assert_relative_eq!(d.plus, 0.15, epsilon = 1e-15);
        assert_relative_eq!(d.minus, -0.15, epsilon = 1e-15);
        let e = first_order(0, &amps, 0.4);
        assert_relative_eq!(dressed_energies(&e).plus * 2.0, (0.4f64.powi(2) + 0.09).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn first_order_q2_has_no_coupling() {
        let amps = RabiAmplitudes::balanced(5, 0.3).unwrap();
        assert_eq!(first_order(2, &amps, 0.0).r_ab, c(0.0, 0.0));
        assert_eq!(first_order(1, &amps, 0.0).r_ab, c(0.15, 0.0));
    }

    #[test]
    fn balanced_q0_shifts_cancel() {
        let amps = RabiAmplitudes::balanced(10, 0.2).unwrap();
        let (a, b) = second_order_shifts(0, &amps, 0.0, 0.0).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(b, 0.0);
    }

    #[test]
    fn one_sided_q0_shifts() {
        let om = 0.2;
        let amps = RabiAmplitudes::three(10, c(om, 0.0), c(om, 0.0), c(0.0, 0.0)).unwrap();
        let (a, b) = second_order_shifts(0, &amps, 0.0, 0.0).unwrap();
        assert_relative_eq!(a, om * om / 4.0, epsilon = 1e-16);
        assert_relative_eq!(b, -om * om / 4.0, epsilon = 1e-16);
    }

    #[test]
    fn q1_resonance_moves_down() {
        let amps = RabiAmplitudes::balanced(10, 0.2).unwrap();
        let (a, b) = second_order_shifts(1, &amps, 0.0, 0.0).unwrap();
        assert!(b - a < 0.0);
        let (a, b) = second_order_shifts(-1, &amps, 0.0, 0.0).unwrap();
        assert!(b - a > 0.0);
    }

    #[test]
    fn small_denominator_is_reported() {
        let amps = RabiAmplitudes::balanced(10, 0.2).unwrap();
        assert!(matches!(second_order_shifts(0, &amps, 2.0, 0.0), Err(Error::SmallDenominator { .. })));
        assert!(matches!(odd_q_coupling(3, &amps, -4.0, 0.0), Err(Error::SmallDenominator { .. })));
    }

    #[test]
    fn third_order_q0_on_resonance() {
        let om = 0.3;
        let amps = RabiAmplitudes::balanced(10, om).unwrap();
        assert_relative_eq!(third_order_q0(&amps, 0.0, 0.0).unwrap().re, om.powi(3) / 4.0, epsilon = 1e-16);
        let one_sided = RabiAmplitudes::three(10, c(0.0, 0.0), c(om, 0.0), c(om, 0.0)).unwrap();
        assert_eq!(third_order_q0(&one_sided, 0.0, 0.0).unwrap(), c(0.0, 0.0));
        let flipped = RabiAmplitudes::three(10, c(-om, 0.0), c(om, 0.0), c(om, 0.0)).unwrap();
        assert_relative_eq!(third_order_q0(&flipped, 0.1, 0.0).unwrap().re, -third_order_q0(&amps, 0.1, 0.0).unwrap().re);
    }

    #[test]
    fn odd_q3_closed_form() {
        let om = 0.2;
        let amps = RabiAmplitudes::balanced(10, om).unwrap();
        let r = odd_q_on_resonance(3, &amps).unwrap();
        assert_relative_eq!(r.re, -om.powi(3) / 32.0, epsilon = 1e-17);
        let p = odd_q_coupling(3, &amps, 0.0, 0.0).unwrap();
        assert_relative_eq!(p.re, r.re, max_relative = 1e-12);
        let none = RabiAmplitudes::three(10, c(0.0, 0.0), c(om, 0.0), c(om, 0.0)).unwrap();
        assert_eq!(odd_q_coupling(3, &none, 0.0, 0.0).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn odd_q_product_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for q in [3, 5, 7, -3, -5] {
            for _ in 0..20 {
                let amps = random_amps(&mut rng, 12);
                let p = odd_q_coupling(q, &amps, 0.0, 0.0).unwrap();
                let cf = odd_q_on_resonance(q, &amps).unwrap();
                assert!((p - cf).norm() <= 1e-12 * cf.norm(), "q={q}");
            }
        }
    }

    #[test]
    fn odd_q_scaling_trend() {
        let ratio = |om: f64| {
            let amps = RabiAmplitudes::balanced(10, om).unwrap();
            (odd_q_on_resonance(5, &amps).unwrap() / odd_q_on_resonance(3, &amps).unwrap()).norm()
        };
        // |R⁽⁵⁾/R⁽³⁾| ∝ (Ω/2ω_f)²
        assert_relative_eq!(ratio(0.4) / ratio(0.2), 4.0, max_relative = 1e-12);
        assert!(ratio(0.2) < (0.1f64).powi(2));
    }

    #[test]
    fn q2_on_resonance_value() {
        let om = 0.4;
        let amps = RabiAmplitudes::balanced(10, om).unwrap();
        let r = even_q_coupling(2, &amps, 0.0, 0.0).unwrap();
        assert_relative_eq!(r.re, -om.powi(3) / 4.0, max_relative = 1e-14);
        assert_eq!(r.im, 0.0);
        // the centre mode or the absorbed sideband alone switch it off
        for zeroed in [1, 2] {
            let mut w = [c(om, 0.0); 3];
            w[zeroed] = c(0.0, 0.0);
            let amps = RabiAmplitudes::three(10, w[0], w[1], w[2]).unwrap();
            assert_eq!(even_q_coupling(2, &amps, 0.0, 0.0).unwrap(), c(0.0, 0.0));
        }
        // without the emitted sideband the path through j survives
        let amps = RabiAmplitudes::three(10, c(0.0, 0.0), c(om, 0.0), c(om, 0.0)).unwrap();
        assert_relative_eq!(even_q_coupling(2, &amps, 0.0, 0.0).unwrap().re, -om.powi(3) / 8.0, max_relative = 1e-14);
    }

    #[test]
    fn q2_without_lower_sideband_matches_numerics() {
        use crate::spectra::{locate_crossing, ShellScanConfig};
        let om = 0.1;
        let zero = c(0.0, 0.0);
        let w = c(om, 0.0);
        let cfg = ShellScanConfig::strong_field(&[9, 10, 11], &[zero, w, w], 10, 16).unwrap();
        let numeric = locate_crossing(&cfg, 2, 0.1).unwrap();
        let amps = RabiAmplitudes::three(10, zero, w, w).unwrap();
        let analytic = 2.0 * even_q_coupling(2, &amps, 0.0, 0.0).unwrap().norm();
        assert!((analytic / numeric.gap - 1.0).abs() < 0.01, "{analytic} vs {}", numeric.gap);
    }

    #[test]
    fn q2_general_equals_specialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let amps = random_amps(&mut rng, 9);
            let d = rng.gen_range(-0.5..0.5);
            let g = even_q_coupling(2, &amps, d, 0.0).unwrap();
            let s = q2_specialization(&amps, d, 0.0).unwrap();
            assert!((g - s).norm() <= 1e-12 * s.norm().max(1e-300));
        }
    }

    #[test]
    fn brute_force_agrees_and_counts_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let amps = random_amps(&mut rng, 15);
            let d = rng.gen_range(-0.3..0.3);
            let z = rng.gen_range(-0.05..0.05);
            for (q, len, count) in [(2, 3, 3), (-2, 3, 3), (4, 5, 5), (-4, 5, 5), (6, 7, 7)] {
                let (bf, n) = brute_force(q, &amps, d, z, len);
                assert_eq!(n, count, "q={q}");
                let r = even_q_coupling(q, &amps, d, z).unwrap();
                assert!((r - bf).norm() <= 1e-12 * bf.norm(), "q={q}");
            }
            for (q, len) in [(3, 3), (-3, 3), (5, 5), (-5, 5)] {
                let (bf, n) = brute_force(q, &amps, d, z, len);
                assert_eq!(n, 1);
                let r = odd_q_coupling(q, &amps, d, z).unwrap();
                assert!((r - bf).norm() <= 1e-12 * bf.norm(), "q={q}");
            }
            let (bf, n) = brute_force(0, &amps, d, z, 3);
            assert_eq!(n, 2);
            assert!((third_order_q0(&amps, d, z).unwrap() - bf).norm() <= 1e-12 * bf.norm());
        }
    }

    #[test]
    fn second_order_matches_brute_force() {
        // two-step paths from a back to a, and from b back to b
        let amps = RabiAmplitudes::three(10, c(0.13, 0.02), c(0.2, -0.1), c(0.07, 0.05)).unwrap();
        let (d, z) = (0.17, 0.01);
        for q in -3..=3 {
            let (r_aa, r_bb) = second_order_shifts(q, &amps, d, z).unwrap();
            let mut want_aa = 0.0;
            let mut want_bb = 0.0;
            for p in -1..=1 {
                if p == q {
                    continue;
                }
                let w = amps.sideband(p).norm_sqr() / 4.0;
                // a emits j+p: lower spin, (j+q)-(j+p) fewer photons absorbed
                let e_a = (p - q) as f64 - d / 2.0;
                want_aa += w / (z - e_a);
                // b absorbs j+p: upper spin
                let e_b = (q - p) as f64 + d / 2.0;
                want_bb += w / (z - e_b);
            }
            assert_relative_eq!(r_aa, want_aa, max_relative = 1e-14);
            assert_relative_eq!(r_bb, want_bb, max_relative = 1e-14);
        }
    }

    #[test]
    fn dressed_energy_limits() {
        let e = EffectiveTwoLevel { q: 0, delta: 0.3, r_aa: 0.0, r_bb: 0.0, r_ab: c(0.0, 0.0), order: 1, z: 0.0 };
        let d = dressed_energies(&e);
        assert_eq!((d.plus, d.minus), (0.15, -0.15));
        let e = EffectiveTwoLevel { delta: 0.02 - 0.05, r_aa: 0.05, r_bb: 0.02, r_ab: c(0.003, 0.004), ..e };
        assert_relative_eq!(dressed_energies(&e).plus, 0.005, epsilon = 1e-17);
        assert_relative_eq!(dressed_energies(&e).mean_shift, 0.035);
    }

    #[test]
    fn rabi_limits() {
        let e = EffectiveTwoLevel { q: 2, delta: 0.0, r_aa: 0.0, r_bb: 0.0, r_ab: c(0.01, 0.0), order: 3, z: 0.0 };
        assert_relative_eq!(rabi_excitation(&e, PI / e.omega_eff()).unwrap(), 1.0, epsilon = 1e-15);
        let far = EffectiveTwoLevel { delta: 2.0, ..e };
        let peak = (far.omega_eff() / far.omega_tilde()).powi(2);
        assert_relative_eq!(peak, far.omega_eff().powi(2) / 4.0, max_relative = 1e-3);
        let none = EffectiveTwoLevel { r_ab: c(0.0, 0.0), ..e };
        assert_eq!(rabi_excitation(&none, 3.0).unwrap(), 0.0);
        assert!(rabi_excitation(&e, -1.0).is_err());
    }

    fn peak_and_width(points: &[SpectrumPoint]) -> (f64, f64) {
        let i = (0..points.len()).max_by(|&a, &b| points[a].probability.total_cmp(&points[b].probability)).unwrap();
        let half = points[i].probability / 2.0;
        let above: Vec<f64> = points.iter().filter(|p| p.probability >= half).map(|p| p.model.delta).collect();
        (points[i].model.delta, above.last().unwrap() - above[0])
    }

    #[test]
    fn spectrum_peak_shifts_left_and_broadens() {
        let grid: Vec<f64> = (0..8001).map(|i| -0.3 + 0.35 * i as f64 / 8000.0).collect();
        let mut last = (f64::INFINITY, 0.0);
        for om in [0.2, 0.3, 0.4] {
            let amps = RabiAmplitudes::balanced(10, om).unwrap();
            let pts = excitation_spectrum(2, &amps, &grid, 0.0, PulseCondition::LocalPi).unwrap();
            let (pos, width) = peak_and_width(&pts);
            assert!(pos < last.0 && pos < 0.0);
            assert!(width > last.1);
            last = (pos, width);
            let res = excitation_spectrum(2, &amps, &grid, 0.0, PulseCondition::ResonantPi).unwrap();
            assert!(res.iter().all(|p| p.probability <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn shell_amplitudes_are_twice_the_element() {
        use crate::shell::Mode;
        let modes = ModeSet::new(vec![Mode::new(4, 0.25, 0.4), Mode::new(5, 0.5, 0.2)]).unwrap();
        let amps = RabiAmplitudes::from_shell(&modes, None, 0, 5).unwrap();
        assert_eq!(amps.get(4), c(0.2, 0.0));
        assert_eq!(amps.get(5), c(0.2, 0.0));
        assert_eq!(amps.get(6), c(0.0, 0.0));
    }

    proptest! {
        #[test]
        fn conjugation_symmetry(re in prop::array::uniform3(-0.4f64..0.4), im in prop::array::uniform3(-0.4f64..0.4),
                                d in -0.4f64..0.4, q in -5i32..=5) {
            let amps = RabiAmplitudes::three(12, c(re[0], im[0]), c(re[1], im[1]), c(re[2], im[2])).unwrap();
            let a = effective_two_level(q, &amps, d, 0.0).unwrap();
            let b = effective_two_level(q, &amps.conj(), d, 0.0).unwrap();
            prop_assert!((a.r_ab.conj() - b.r_ab).norm() <= 1e-15 * a.r_ab.norm().max(1e-300));
            prop_assert_eq!(a.r_aa, b.r_aa);
        }
    }
}
