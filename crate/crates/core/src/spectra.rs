//! Dressed-state spectra: diagonalization, detuning scans, avoided
//! crossings and the degenerate-basis pathology.

use std::collections::BTreeMap;
use std::io::Write;

use faer::{Mat, Side};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::basis::{fock_basis_connected, shell_basis, Coupling, FockSpinState, ShellBasis, ShellSpinState, Spin, StrongFieldLadder};
use crate::error::{Error, Result};
use crate::hamiltonian::{assemble_jcm_fock, assemble_jcm_shell, HermitianOperator, SpinFieldParams};
use crate::output::fmt_f64;
use crate::shell::{GammaTable, Mode, ModeSet};
use crate::C64;

/// Relative residual tolerated for an eigenpair.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Default scan resolution and range.
pub const DEFAULT_SAMPLES: usize = 401;
pub const DEFAULT_RANGE: (f64, f64) = (-2.5, 2.5);

/// Eigenvalues ascending with eigenvectors in matching columns.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

impl Eigensystem {
    /// `|⟨i|v_l⟩|²`.
    pub fn weight(&self, state: usize, level: usize) -> f64 {
        self.vectors[(state, level)].norm_sqr()
    }
}

/// Full diagonalization with residual check. Real operators take the real
/// symmetric path.
pub fn eigensystem(op: &HermitianOperator) -> Result<Eigensystem> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::EmptyBasis("operator has dimension 0".into()));
    }
    let (values, vectors) = if op.is_real() {
        let m = op.to_dense_real()?;
        let eig = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)])
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::NoConvergence { residual: f64::NAN })?;
        let values: Vec<f64> = (0..n).map(|i| eig.S().column_vector()[i]).collect();
        let u = eig.U();
        (values, DMatrix::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0)))
    } else {
        let m = op.to_dense()?;
        let eig = Mat::<C64>::from_fn(n, n, |i, j| m[(i, j)])
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::NoConvergence { residual: f64::NAN })?;
        let values: Vec<f64> = (0..n).map(|i| eig.S().column_vector()[i].re).collect();
        let u = eig.U();
        (values, DMatrix::from_fn(n, n, |i, j| u[(i, j)]))
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);

    let scale = op.norm_bound().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for (l, &lambda) in values.iter().enumerate() {
        let v: Vec<C64> = vectors.column(l).iter().copied().collect();
        let hv = op.matvec(&v);
        let r = hv.iter().zip(&v).map(|(h, x)| (h - x * lambda).norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(r / scale);
    }
    if worst > RESIDUAL_TOL {
        return Err(Error::NoConvergence { residual: worst });
    }
    Ok(Eigensystem { values, vectors })
}

/// A shell-basis Jaynes-Cummings model scanned against `Δ₀ = ω₀ - jω_f`.
#[derive(Debug, Clone)]
pub struct ShellScanConfig {
    pub modes: ModeSet,
    /// Shell distribution; `None` selects the strong-field ladder.
    pub table: Option<GammaTable>,
    /// Harmonic nearest the spin splitting.
    pub j: u32,
    pub seed_n: i64,
    pub depth: usize,
    pub exact_ratios: bool,
    /// Partner states `|seed - (j+q), ↑⟩` are probed for `|q| <= probe_qmax`.
    pub probe_qmax: i32,
}

impl ShellScanConfig {
    /// Strong-field ladder parameterized by Rabi frequencies, seeded at
    /// shell 0.
    pub fn strong_field(harmonics: &[u32], rabi: &[C64], j: u32, depth: usize) -> Result<Self> {
        Ok(ShellScanConfig {
            modes: ModeSet::from_rabi(harmonics, rabi)?,
            table: None,
            j,
            seed_n: 0,
            depth,
            exact_ratios: false,
            probe_qmax: 3,
        })
    }

    /// Three modes `j-1, j, j+1` sharing one real Rabi frequency.
    pub fn balanced(j: u32, omega: f64, depth: usize) -> Result<Self> {
        if j < 2 {
            return Err(Error::InvalidInput("j must be at least 2 for three sidebands".into()));
        }
        let om = C64::new(omega, 0.0);
        Self::strong_field(&[j - 1, j, j + 1], &[om, om, om], j, depth)
    }

    pub fn basis(&self) -> Result<ShellBasis> {
        match &self.table {
            Some(t) => shell_basis(t, self.seed_n, self.depth, Coupling::Rwa),
            None => shell_basis(&StrongFieldLadder::new(&self.modes.harmonics()), self.seed_n, self.depth, Coupling::Rwa),
        }
    }

    /// Spin parameters at `Δ₀`, with energies referenced so that the seed
    /// pair sits at `∓Δ₀/2`.
    pub fn params(&self, delta0: f64) -> SpinFieldParams {
        let wf = self.modes.omega_f();
        SpinFieldParams::jcm((self.j as f64 + delta0) * wf).with_offset(self.seed_n as f64 * wf - 0.5 * self.j as f64 * wf)
    }

    pub fn operator(&self, basis: &ShellBasis, delta0: f64) -> Result<HermitianOperator> {
        assemble_jcm_shell(basis, self.table.as_ref(), &self.modes, &self.params(delta0), self.exact_ratios)
    }

    /// The seed `|N,↓⟩`.
    pub fn seed_state(&self) -> ShellSpinState {
        ShellSpinState::new(self.seed_n, Spin::Down)
    }

    /// The resonance partner `|N-(j+q),↑⟩`.
    pub fn partner_state(&self, q: i32) -> ShellSpinState {
        ShellSpinState::new(self.seed_n - (self.j as i64 + q as i64), Spin::Up)
    }
}

/// Dressed energies against detuning.
#[derive(Debug, Clone)]
pub struct DetuningScan {
    pub delta_values: Vec<f64>,
    /// One ascending row per sample.
    pub levels: Vec<Vec<f64>>,
    /// `branch_tracks[s][l]` is the branch of level `l` at sample `s`.
    pub branch_tracks: Vec<Vec<usize>>,
    /// Smallest matched overlap between consecutive samples.
    pub min_tracking_overlap: f64,
    /// Probe labels: `None` for the seed, `Some(q)` for partner `q`.
    pub probes: Vec<Option<i32>>,
    /// `probe_weights[s][p][l] = |⟨probe p|level l⟩|²`.
    pub probe_weights: Vec<Vec<Vec<f64>>>,
}

/// Dressed energies of the seed resonance against `Δ₀`.
pub fn detuning_scan(config: &ShellScanConfig, delta_range: (f64, f64), samples: usize) -> Result<DetuningScan> {
    if samples < 2 {
        return Err(Error::InvalidInput("a detuning scan needs at least 2 samples".into()));
    }
    let (lo, hi) = delta_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!("invalid detuning range [{lo}, {hi}]")));
    }
    let basis = config.basis()?;
    let deltas: Vec<f64> = (0..samples).map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64).collect();

    let mut probes = vec![None];
    let mut probe_idx = vec![basis.index_of(&config.seed_state()).expect("seed is in its own closure")];
    for q in -config.probe_qmax..=config.probe_qmax {
        if let Some(i) = basis.index_of(&config.partner_state(q)) {
            probes.push(Some(q));
            probe_idx.push(i);
        }
    }

    let systems: Vec<Eigensystem> = deltas
        .par_iter()
        .map(|&d| config.operator(&basis, d).and_then(|h| eigensystem(&h)))
        .collect::<Result<_>>()?;

    let (branch_tracks, min_overlap) = track_branches(&systems);
    let levels = systems.iter().map(|e| e.values.clone()).collect();
    let probe_weights = systems
        .iter()
        .map(|e| probe_idx.iter().map(|&i| (0..e.values.len()).map(|l| e.weight(i, l)).collect()).collect())
        .collect();
    Ok(DetuningScan {
        delta_values: deltas,
        levels,
        branch_tracks,
        min_tracking_overlap: min_overlap,
        probes,
        probe_weights,
    })
}

/// Greedy maximal-overlap matching of eigenvectors between consecutive
/// samples. Always yields a permutation.
fn track_branches(systems: &[Eigensystem]) -> (Vec<Vec<usize>>, f64) {
    let Some(first) = systems.first() else {
        return (Vec::new(), 1.0);
    };
    let n = first.values.len();
    let mut tracks = vec![(0..n).collect::<Vec<_>>()];
    let mut min_overlap = 1.0f64;
    for w in systems.windows(2) {
        let overlap = w[0].vectors.adjoint() * &w[1].vectors;
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
        for p in 0..n {
            for c in 0..n {
                pairs.push((overlap[(p, c)].norm_sqr(), p, c));
            }
        }
        // stable order on ties keeps the result deterministic
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let prev = tracks.last().unwrap().clone();
        let mut next = vec![usize::MAX; n];
        let mut used_prev = vec![false; n];
        let mut left = n;
        for (o, p, c) in pairs {
            if left == 0 {
                break;
            }
            if used_prev[p] || next[c] != usize::MAX {
                continue;
            }
            used_prev[p] = true;
            next[c] = prev[p];
            min_overlap = min_overlap.min(o);
            left -= 1;
        }
        tracks.push(next);
    }
    (tracks, min_overlap)
}

/// Avoided-crossing summary for resonance `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingReport {
    pub q: i32,
    /// Minimal separation of the two branches, units of `ω_f`.
    pub gap: f64,
    /// `Δ₀` at the minimum.
    pub position: f64,
    /// `position - q`.
    pub shift: f64,
}

/// The two levels carrying the most weight on the resonant pair, with
/// the identification checked against the 0.5 threshold.
fn resonant_pair(weights_a: &[f64], weights_b: &[f64], q: i32) -> Result<(usize, usize)> {
    let mut order: Vec<usize> = (0..weights_a.len()).collect();
    let w = |l: usize| weights_a[l] + weights_b[l];
    order.sort_by(|&x, &y| w(y).total_cmp(&w(x)).then(x.cmp(&y)));
    let (l1, l2) = (order[0], order[1]);
    let weakest = w(l1).min(w(l2));
    if weakest < 0.5 {
        return Err(Error::AmbiguousBranch { q, overlap: weakest });
    }
    Ok((l1.min(l2), l1.max(l2)))
}

/// Vertex of the parabola through three points.
fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<(f64, f64)> {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if a <= 0.0 {
        return None;
    }
    let b = d1 - a * (x[0] + x[1]);
    let xv = -b / (2.0 * a);
    let yv = y[1] + d1 * (xv - x[1]) + a * (xv - x[0]) * (xv - x[1]);
    Some((xv, yv))
}

/// Minimal gap between the branches of `|N,↓⟩` and `|N-(j+q),↑⟩` within
/// `Δ₀ ∈ [q - 0.5, q + 0.5]`, refined by a parabola through the squared
/// gap.
pub fn avoided_crossing(scan: &DetuningScan, q: i32) -> Result<CrossingReport> {
    const HALF_WIDTH: f64 = 0.5;
    let (first, last) = (scan.delta_values[0], *scan.delta_values.last().unwrap());
    let have = (q as f64 - first).min(last - q as f64);
    if have < HALF_WIDTH - 1e-12 {
        return Err(Error::WindowTooNarrow { q, needed: HALF_WIDTH, have: have.max(0.0) });
    }
    let pa = scan.probes.iter().position(|p| *p == Some(q));
    let pb = scan.probes.iter().position(|p| p.is_none());
    let (Some(pa), Some(pb)) = (pa, pb) else {
        return Err(Error::InvalidInput(format!("partner state for q = {q} is not in the scanned basis")));
    };
    let mut xs = Vec::new();
    let mut gaps2 = Vec::new();
    for (s, &d) in scan.delta_values.iter().enumerate() {
        if (d - q as f64).abs() > HALF_WIDTH + 1e-12 {
            continue;
        }
        let w = &scan.probe_weights[s];
        let (l1, l2) = resonant_pair(&w[pa], &w[pb], q)?;
        let g = scan.levels[s][l2] - scan.levels[s][l1];
        xs.push(d);
        gaps2.push(g * g);
    }
    let i = (0..gaps2.len()).min_by(|&a, &b| gaps2[a].total_cmp(&gaps2[b])).expect("window is not empty");
    let (position, gap2) = if i > 0 && i + 1 < xs.len() {
        parabola_vertex([xs[i - 1], xs[i], xs[i + 1]], [gaps2[i - 1], gaps2[i], gaps2[i + 1]])
            .filter(|&(x, _)| x >= xs[i - 1] && x <= xs[i + 1])
            .unwrap_or((xs[i], gaps2[i]))
    } else {
        (xs[i], gaps2[i])
    };
    let gap = gap2.max(0.0).sqrt();
    Ok(CrossingReport { q, gap, position, shift: position - q as f64 })
}

/// Gap between the resonant branches at a single detuning.
pub fn resonant_gap(config: &ShellScanConfig, basis: &ShellBasis, q: i32, delta0: f64) -> Result<f64> {
    let ia = basis
        .index_of(&config.partner_state(q))
        .ok_or_else(|| Error::InvalidInput(format!("partner state for q = {q} is not in the basis")))?;
    let ib = basis.index_of(&config.seed_state()).expect("seed is in its own closure");
    let eig = eigensystem(&config.operator(basis, delta0)?)?;
    let n = eig.values.len();
    let wa: Vec<f64> = (0..n).map(|l| eig.weight(ia, l)).collect();
    let wb: Vec<f64> = (0..n).map(|l| eig.weight(ib, l)).collect();
    let (l1, l2) = resonant_pair(&wa, &wb, q)?;
    Ok(eig.values[l2] - eig.values[l1])
}

/// Precise crossing search: a coarse grid over `q ± half_width` followed by
/// golden-section refinement of the gap.
pub fn locate_crossing(config: &ShellScanConfig, q: i32, half_width: f64) -> Result<CrossingReport> {
    const COARSE: usize = 41;
    const TOL: f64 = 1e-10;
    let basis = config.basis()?;
    let lo = q as f64 - half_width;
    let step = 2.0 * half_width / (COARSE - 1) as f64;
    let coarse: Vec<f64> = (0..COARSE)
        .into_par_iter()
        .map(|i| resonant_gap(config, &basis, q, lo + step * i as f64))
        .collect::<Result<_>>()?;
    let i = (0..COARSE).min_by(|&a, &b| coarse[a].total_cmp(&coarse[b])).unwrap();
    let mut a = lo + step * i.saturating_sub(1) as f64;
    let mut b = lo + step * (i + 1).min(COARSE - 1) as f64;
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let f = |x: f64| resonant_gap(config, &basis, q, x);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d)?;
        }
    }
    let position = 0.5 * (a + b);
    let gap = f(position)?;
    Ok(CrossingReport { q, gap, position, shift: position - q as f64 })
}

impl DetuningScan {
    /// Rows `delta,level,energy,branch`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "delta,level,energy,branch")?;
        for (s, d) in self.delta_values.iter().enumerate() {
            for (l, e) in self.levels[s].iter().enumerate() {
                writeln!(w, "{},{},{},{}", fmt_f64(*d), l, fmt_f64(*e), self.branch_tracks[s][l])?;
            }
        }
        Ok(())
    }
}

/// Dressed energies of a pair of exactly degenerate unperturbed states.
#[derive(Debug, Clone, PartialEq)]
pub struct DegeneratePair {
    pub a: FockSpinState,
    pub b: FockSpinState,
    pub shell: i64,
    pub energy_a: f64,
    pub energy_b: f64,
    pub spread: f64,
}

/// A resonant doublet `|N+m,↓⟩, |N+m-j,↑⟩` in the shell basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Doublet {
    pub m: i64,
    pub lower: f64,
    pub upper: f64,
    pub splitting: f64,
    /// Midpoint minus the unperturbed ladder energy.
    pub asymmetry: f64,
}

/// Fock-basis level assignment and the shell-basis comparison.
#[derive(Debug, Clone)]
pub struct PathologyReport {
    /// Every unperturbed Fock state with its unperturbed and dressed energy.
    pub fock_levels: Vec<(FockSpinState, f64, f64)>,
    pub pairs: Vec<DegeneratePair>,
    pub max_spread: f64,
    pub shell_doublets: Vec<Doublet>,
}

fn three_sideband_j(modes: &ModeSet) -> Result<u32> {
    let ks = modes.harmonics();
    if ks.len() != 3 || ks[0] + 1 != ks[1] || ks[1] + 1 != ks[2] {
        return Err(Error::InvalidInput(format!("expected harmonics j-1, j, j+1, got {ks:?}")));
    }
    Ok(ks[1])
}

/// Dressed doublets of the shell basis grown from `|seed_n,↓⟩` with unit
/// ladder ratios, at `ω₀ = jω_f`. Each doublet is identified by the two
/// levels with the largest weight on its unperturbed pair.
pub fn shell_doublets(modes: &ModeSet, seed_n: i64, depth: usize) -> Result<Vec<Doublet>> {
    let j = three_sideband_j(modes)?;
    let wf = modes.omega_f();
    let ladder = StrongFieldLadder::new(&modes.harmonics());
    let basis = shell_basis(&ladder, seed_n, depth, Coupling::Rwa)?;
    let params = SpinFieldParams::jcm(j as f64 * wf).with_offset(seed_n as f64 * wf - 0.5 * j as f64 * wf);
    let eig = eigensystem(&assemble_jcm_shell(&basis, None, modes, &params, false)?)?;
    let n = eig.values.len();
    let mut out = Vec::new();
    for s in basis.states().iter().filter(|s| s.spin == Spin::Down) {
        let Some(ia) = basis.index_of(&ShellSpinState::new(s.n - j as i64, Spin::Up)) else {
            continue;
        };
        let ib = basis.index_of(s).unwrap();
        let m = s.n - seed_n;
        let wa: Vec<f64> = (0..n).map(|l| eig.weight(ia, l)).collect();
        let wb: Vec<f64> = (0..n).map(|l| eig.weight(ib, l)).collect();
        let Ok((l1, l2)) = resonant_pair(&wa, &wb, 0) else {
            continue;
        };
        let (lower, upper) = (eig.values[l1], eig.values[l2]);
        out.push(Doublet {
            m,
            lower,
            upper,
            splitting: upper - lower,
            asymmetry: 0.5 * (lower + upper) - m as f64 * wf,
        });
    }
    Ok(out)
}

/// Diagonalize the connected Fock basis around `seed` at `ω₀ = jω_f` and
/// report how far exactly degenerate unperturbed pairs are split.
///
/// Each unperturbed state is assigned the dressed energy of the
/// eigenvector carrying its largest weight. The shell-basis doublets at
/// the same depth are attached for comparison, with shell amplitudes
/// `α_i = √n_i` of the seed so the couplings match.
pub fn degenerate_basis_pathology(modes: &ModeSet, seed: &FockSpinState, depth: usize) -> Result<PathologyReport> {
    let j = three_sideband_j(modes)?;
    let wf = modes.omega_f();
    let harmonics = modes.harmonics();
    let basis = fock_basis_connected(&harmonics, seed.clone(), depth, Coupling::Rwa)?;
    let params = SpinFieldParams::jcm(j as f64 * wf);
    let h = assemble_jcm_fock(&basis, modes, &params)?;
    let eig = eigensystem(&h)?;
    let n = basis.len();
    let dressed: Vec<f64> = (0..n)
        .map(|i| {
            let l = (0..n).max_by(|&a, &b| eig.weight(i, a).total_cmp(&eig.weight(i, b))).unwrap();
            eig.values[l]
        })
        .collect();
    let fock_levels = (0..n)
        .map(|i| {
            let s = basis.state(i);
            let unperturbed = basis.shell_of(i) as f64 * wf + 0.5 * params.omega0 * s.spin.sign();
            (s.clone(), unperturbed, dressed[i])
        })
        .collect();

    let mut groups: BTreeMap<(i64, Spin), Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        groups.entry((basis.shell_of(i), basis.state(i).spin)).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for ((shell, _), members) in &groups {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                pairs.push(DegeneratePair {
                    a: basis.state(a).clone(),
                    b: basis.state(b).clone(),
                    shell: *shell,
                    energy_a: dressed[a],
                    energy_b: dressed[b],
                    spread: (dressed[a] - dressed[b]).abs(),
                });
            }
        }
    }
    let max_spread = pairs.iter().map(|p| p.spread).fold(0.0, f64::max);

    let shell_modes = ModeSet::with_fundamental(
        modes
            .modes()
            .iter()
            .zip(&seed.occupations)
            .map(|(m, &n)| Mode::new(m.k, (n as f64).sqrt(), m.g))
            .collect(),
        wf,
    )?;
    let seed_n = crate::shell::shell_index(&seed.occupations, &harmonics);
    let shell_doublets = shell_doublets(&shell_modes, seed_n, depth)?;
    Ok(PathologyReport { fock_levels, pairs, max_spread, shell_doublets })
}

impl PathologyReport {
    /// Level table: one row per Fock state, flagging members of split
    /// degenerate pairs.
    pub fn write_csv<W: Write>(&self, mut w: W, tol: f64) -> std::io::Result<()> {
        writeln!(w, "occupations,spin,unperturbed,dressed,broken_degeneracy")?;
        for (s, e0, e) in &self.fock_levels {
            let broken = self.pairs.iter().any(|p| p.spread > tol && (&p.a == s || &p.b == s));
            let occ: Vec<String> = s.occupations.iter().map(|n| n.to_string()).collect();
            writeln!(w, "{},{},{},{},{}", occ.join(" "), s.spin.label(), fmt_f64(*e0), fmt_f64(*e), broken)?;
        }
        Ok(())
    }

    pub fn write_doublets_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "m,lower,upper,splitting,asymmetry")?;
        for d in &self.shell_doublets {
            writeln!(w, "{},{},{},{},{}", d.m, fmt_f64(d.lower), fmt_f64(d.upper), fmt_f64(d.splitting), fmt_f64(d.asymmetry))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::OperatorBuilder;
    use approx::assert_abs_diff_eq;

    fn dense_op(rows: &[&[f64]]) -> HermitianOperator {
        let mut b = OperatorBuilder::new(rows.len());
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate().skip(i) {
                b.add(i, j, C64::new(v, 0.0));
            }
        }
        b.finish(0, 0.0).unwrap()
    }

    #[test]
    fn diagonal_input() {
        let h = dense_op(&[&[3.0, 0.0, 0.0], &[0.0, -1.0, 0.0], &[0.0, 0.0, 2.0]]);
        let e = eigensystem(&h).unwrap();
        assert_eq!(e.values, vec![-1.0, 2.0, 3.0]);
        assert_eq!(e.weight(1, 0), 1.0);
        assert_eq!(e.weight(0, 2), 1.0);
    }

    #[test]
    fn two_level_closed_form() {
        let (d, om) = (0.3, 0.4);
        let h = dense_op(&[&[d / 2.0, om / 2.0], &[om / 2.0, -d / 2.0]]);
        let e = eigensystem(&h).unwrap();
        let r = 0.5 * (d * d + om * om).sqrt();
        assert_abs_diff_eq!(e.values[0], -r, epsilon = 1e-15);
        assert_abs_diff_eq!(e.values[1], r, epsilon = 1e-15);
    }

    #[test]
    fn complex_hermitian_orthonormal() {
        let mut b = OperatorBuilder::new(4);
        for i in 0..4 {
            b.add_diagonal(i, i as f64);
            for j in i + 1..4 {
                b.add(i, j, C64::new(0.1 * (i + j) as f64, 0.05 * (j - i) as f64));
            }
        }
        let h = b.finish(0, 0.0).unwrap();
        let e = eigensystem(&h).unwrap();
        let gram = e.vectors.adjoint() * &e.vectors;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - C64::new(want, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn jcm_doublet_splitting() {
        let modes = ModeSet::new(vec![Mode::new(1, 0.0, 0.1)]).unwrap();
        let basis = fock_basis_connected(&[1], FockSpinState::new(vec![3], Spin::Down), 1, Coupling::Rwa).unwrap();
        let h = assemble_jcm_fock(&basis, &modes, &SpinFieldParams::jcm(1.0)).unwrap();
        let e = eigensystem(&h).unwrap();
        assert_abs_diff_eq!(e.values[1] - e.values[0], 0.2 * 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn uncoupled_scan_is_straight_lines() {
        let cfg = ShellScanConfig::balanced(10, 0.0, 4).unwrap();
        let scan = detuning_scan(&cfg, (-2.5, 2.5), 21).unwrap();
        let basis = cfg.basis().unwrap();
        for (s, &d) in scan.delta_values.iter().enumerate() {
            let mut want: Vec<f64> = basis
                .states()
                .iter()
                .map(|st| match st.spin {
                    Spin::Down => st.n as f64 - d / 2.0,
                    Spin::Up => (st.n + 10) as f64 + d / 2.0,
                })
                .collect();
            want.sort_by(f64::total_cmp);
            for (a, b) in scan.levels[s].iter().zip(&want) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
        // straight lines are followed through their exact crossings
        assert_eq!(scan.min_tracking_overlap, 1.0);
    }

    #[test]
    fn branch_tracks_are_permutations() {
        let cfg = ShellScanConfig::balanced(10, 0.5, 6).unwrap();
        let scan = detuning_scan(&cfg, (-2.5, 2.5), 101).unwrap();
        for row in &scan.branch_tracks {
            let mut r = row.clone();
            r.sort();
            assert_eq!(r, (0..row.len()).collect::<Vec<_>>());
        }
        assert!(scan.levels.iter().all(|r| r.windows(2).all(|w| w[0] <= w[1])));
    }

    #[test]
    fn parabola_recovers_synthetic_gap() {
        let g = 0.0123;
        let c = 0.0371;
        let deltas: Vec<f64> = (0..81).map(|i| -0.5 + i as f64 / 80.0).collect();
        let levels: Vec<Vec<f64>> = deltas
            .iter()
            .map(|d| {
                let r = 0.5 * ((d - c).powi(2) + g * g).sqrt();
                vec![-r, r]
            })
            .collect();
        let scan = DetuningScan {
            branch_tracks: vec![vec![0, 1]; deltas.len()],
            min_tracking_overlap: 1.0,
            probes: vec![None, Some(0)],
            probe_weights: vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]; deltas.len()],
            levels,
            delta_values: deltas,
        };
        let r = avoided_crossing(&scan, 0).unwrap();
        assert!((r.gap - g).abs() < 1e-6);
        assert!((r.position - c).abs() < 1e-6);
    }

    #[test]
    fn window_too_narrow() {
        let cfg = ShellScanConfig::balanced(10, 0.2, 4).unwrap();
        let scan = detuning_scan(&cfg, (-0.3, 0.3), 11).unwrap();
        assert!(matches!(avoided_crossing(&scan, 0), Err(Error::WindowTooNarrow { .. })));
    }

    #[test]
    fn first_order_gap_at_q0() {
        let om = 0.02;
        let cfg = ShellScanConfig::balanced(10, om, 8).unwrap();
        let r = locate_crossing(&cfg, 0, 0.1).unwrap();
        assert!((r.gap / om - 1.0).abs() < 1e-3);
        assert!(r.position.abs() < 1e-8);
    }

    #[test]
    fn balanced_q0_has_no_shift() {
        let cfg = ShellScanConfig::balanced(10, 0.2, 12).unwrap();
        let scan = detuning_scan(&cfg, (-2.5, 2.5), 401).unwrap();
        let r = avoided_crossing(&scan, 0).unwrap();
        assert!(r.position.abs() < 1e-3);
        for q in [-1, 1] {
            let r = avoided_crossing(&scan, q).unwrap();
            assert!(r.shift.abs() < 0.05);
            assert!(r.shift * (q as f64) < 0.0, "q={q} shift {}", r.shift);
        }
    }

    #[test]
    fn pathology_depth_three() {
        let n = 20u32;
        let g = 0.1 / (n as f64).sqrt();
        let modes = ModeSet::new(vec![Mode::new(9, 0.0, g), Mode::new(10, 0.0, g), Mode::new(11, 0.0, g)]).unwrap();
        let r = degenerate_basis_pathology(&modes, &FockSpinState::new(vec![n, n, n], Spin::Down), 3).unwrap();
        assert_eq!(r.pairs.len(), 7);
        assert!(r.max_spread > 0.01 * 0.2, "spread {}", r.max_spread);
        let mut buf = Vec::new();
        r.write_csv(&mut buf, 1e-9).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains(",true"));
    }

    #[test]
    fn pathology_vanishes_without_coupling() {
        let modes = ModeSet::new(vec![Mode::new(4, 0.0, 0.0), Mode::new(5, 0.0, 0.0), Mode::new(6, 0.0, 0.0)]).unwrap();
        let r = degenerate_basis_pathology(&modes, &FockSpinState::new(vec![5, 5, 5], Spin::Down), 3).unwrap();
        assert!(!r.pairs.is_empty());
        assert_eq!(r.max_spread, 0.0);
        assert!(r.shell_doublets.iter().all(|d| d.splitting == 0.0 && d.asymmetry == 0.0));
    }

    #[test]
    fn pathology_requires_three_sidebands() {
        let modes = ModeSet::new(vec![Mode::new(4, 0.0, 0.1), Mode::new(6, 0.0, 0.1)]).unwrap();
        assert!(degenerate_basis_pathology(&modes, &FockSpinState::new(vec![5, 5], Spin::Down), 3).is_err());
    }

    #[test]
    fn shell_doublets_are_symmetric_in_the_interior() {
        let om = C64::new(0.2, 0.0);
        let modes = ModeSet::from_rabi(&[9, 10, 11], &[om, om, om]).unwrap();
        let d5 = shell_doublets(&modes, 0, 5).unwrap();
        for d in d5.iter().filter(|d| d.m.abs() <= 1) {
            assert!(d.asymmetry.abs() < 1e-8, "m={} asym={}", d.m, d.asymmetry);
        }
        let d3 = shell_doublets(&modes, 0, 3).unwrap();
        for a in d3.iter().filter(|d| d.m.abs() <= 1) {
            let b = d5.iter().find(|d| d.m == a.m).unwrap();
            assert!((a.splitting - b.splitting).abs() < 1e-3);
        }
    }
}
