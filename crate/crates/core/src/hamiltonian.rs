//! Hermitian operators for the polychromatic Jaynes-Cummings model and the
//! multimode Rabi model, on Fock or shell bases.
//!
//! Energies are in units of `ω_f`. The spin term is `±½ω₀` with `+` for
//! spin up, and the field term is `Σ k_i n_i` in the Fock picture or `N`
//! in the shell picture.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;

use crate::basis::{FockBasis, FockSpinState, ShellBasis, ShellSpinState, Spin};
use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::shell::{GammaTable, ModeSet};
use crate::C64;

/// Largest dimension [`HermitianOperator::to_dense`] will materialize.
pub const DENSE_LIMIT: usize = 4096;

/// Sparse Hermitian matrix. Only the upper triangle is stored, so
/// Hermiticity holds by construction.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    dim: usize,
    /// Upper triangle `(row, col, value)` with `row <= col`, sorted.
    upper: Vec<(usize, usize, C64)>,
    /// Full pattern in compressed rows for products.
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    basis_fingerprint: u64,
    energy_offset: f64,
    dropped: usize,
}

/// Accumulates matrix entries before freezing them into an operator.
#[derive(Debug, Clone)]
pub struct OperatorBuilder {
    dim: usize,
    entries: BTreeMap<(usize, usize), C64>,
    dropped: usize,
}

impl OperatorBuilder {
    pub fn new(dim: usize) -> Self {
        OperatorBuilder { dim, entries: BTreeMap::new(), dropped: 0 }
    }

    /// Add `v` at `(i, j)`, and implicitly `v*` at `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        assert!(i < self.dim && j < self.dim, "entry ({i}, {j}) outside dimension {}", self.dim);
        let (key, v) = if i <= j { ((i, j), v) } else { ((j, i), v.conj()) };
        *self.entries.entry(key).or_insert(C64::new(0.0, 0.0)) += v;
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        self.add(i, i, C64::new(v, 0.0));
    }

    pub fn count_dropped(&mut self) {
        self.dropped += 1;
    }

    pub fn finish(self, basis_fingerprint: u64, energy_offset: f64) -> Result<HermitianOperator> {
        let mut upper = Vec::with_capacity(self.entries.len());
        for ((i, j), v) in self.entries {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite matrix entry at ({i}, {j})")));
            }
            if i != j && v == C64::new(0.0, 0.0) {
                continue;
            }
            // a diagonal must be real; drop any rounding residue
            let v = if i == j { C64::new(v.re, 0.0) } else { v };
            upper.push((i, j, v));
        }
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); self.dim];
        for &(i, j, v) in &upper {
            rows[i].push((j, v));
            if i != j {
                rows[j].push((i, v.conj()));
            }
        }
        let mut row_ptr = Vec::with_capacity(self.dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|&(c, _)| c);
            for (c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(HermitianOperator {
            dim: self.dim,
            upper,
            row_ptr,
            cols,
            vals,
            basis_fingerprint,
            energy_offset,
            dropped: self.dropped,
        })
    }
}

impl HermitianOperator {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry `(i, j)`; the lower triangle is the conjugate of the stored
    /// upper triangle.
    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (key, conj) = if i <= j { ((i, j), false) } else { ((j, i), true) };
        match self.upper.binary_search_by(|&(r, c, _)| (r, c).cmp(&key)) {
            Ok(p) if conj => self.upper[p].2.conj(),
            Ok(p) => self.upper[p].2,
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// Stored upper-triangle entries in row-major order.
    pub fn upper_entries(&self) -> &[(usize, usize, C64)] {
        &self.upper
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn basis_fingerprint(&self) -> u64 {
        self.basis_fingerprint
    }

    /// Reference energy subtracted from every diagonal entry.
    pub fn energy_offset(&self) -> f64 {
        self.energy_offset
    }

    /// Couplings whose partner state lies outside the basis.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i).re).collect()
    }

    /// True when every entry has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.upper.iter().all(|e| e.2.im == 0.0)
    }

    /// `y = H x`.
    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim];
        self.matvec_into(x, &mut y);
        y
    }

    /// `⟨x|H|x⟩`, real for a Hermitian operator.
    pub fn expectation(&self, x: &[C64]) -> f64 {
        let hx = self.matvec(x);
        x.iter().zip(&hx).map(|(a, b)| (a.conj() * b).re).sum()
    }

    /// Largest absolute row sum, an upper bound on the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim)
            .map(|i| (self.row_ptr[i]..self.row_ptr[i + 1]).map(|p| self.vals[p].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        if self.dim > DENSE_LIMIT {
            return Err(Error::DimensionLimit { dim: self.dim, limit: DENSE_LIMIT });
        }
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.upper {
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
        Ok(m)
    }

    /// Real part of the dense matrix; only meaningful when [`Self::is_real`].
    pub fn to_dense_real(&self) -> Result<DMatrix<f64>> {
        if self.dim > DENSE_LIMIT {
            return Err(Error::DimensionLimit { dim: self.dim, limit: DENSE_LIMIT });
        }
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.upper {
            m[(i, j)] = v.re;
            m[(j, i)] = v.re;
        }
        Ok(m)
    }

    /// Coordinate dump `row,col,re,im` of the full matrix, row-major.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,re,im")?;
        for i in 0..self.dim {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.vals[p];
                writeln!(w, "{},{},{},{}", i, self.cols[p], fmt_f64(v.re), fmt_f64(v.im))?;
            }
        }
        Ok(())
    }
}

/// Spin splitting and coupling family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinFieldParams {
    /// Spin splitting `ω₀` in units of `ω_f`.
    pub omega0: f64,
    /// Rotating-wave (Jaynes-Cummings) coupling when true, Rabi otherwise.
    pub rwa: bool,
    /// Reference energy subtracted from the diagonal.
    pub energy_offset: f64,
}

impl SpinFieldParams {
    pub fn jcm(omega0: f64) -> Self {
        SpinFieldParams { omega0, rwa: true, energy_offset: 0.0 }
    }

    pub fn rabi(omega0: f64) -> Self {
        SpinFieldParams { omega0, rwa: false, energy_offset: 0.0 }
    }

    /// Spin splitting for detuning `Δ_q` from harmonic `j + q`.
    pub fn at_detuning(j: u32, q: i32, delta: f64, omega_f: f64) -> Self {
        Self::jcm((j as i64 + q as i64) as f64 * omega_f + delta)
    }

    pub fn with_offset(self, energy_offset: f64) -> Self {
        SpinFieldParams { energy_offset, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !self.omega0.is_finite() || !self.energy_offset.is_finite() {
            return Err(Error::InvalidInput("spin splitting and energy offset must be finite".into()));
        }
        Ok(())
    }

    fn spin_energy(&self, spin: Spin) -> f64 {
        0.5 * self.omega0 * spin.sign()
    }
}

fn check_harmonics(basis_harmonics: &[u32], modes: &ModeSet) -> Result<()> {
    if basis_harmonics != modes.harmonics().as_slice() {
        return Err(Error::BasisMismatch(format!(
            "basis harmonics {:?} differ from mode harmonics {:?}",
            basis_harmonics,
            modes.harmonics()
        )));
    }
    Ok(())
}

fn fock_diagonal(b: &mut OperatorBuilder, basis: &FockBasis, modes: &ModeSet, params: &SpinFieldParams) {
    let wf = modes.omega_f();
    for (i, s) in basis.states().iter().enumerate() {
        let field: f64 = s
            .occupations
            .iter()
            .zip(modes.modes())
            .map(|(&n, m)| m.k as f64 * wf * n as f64)
            .sum();
        b.add_diagonal(i, params.spin_energy(s.spin) + field - params.energy_offset);
    }
}

/// Index of the state with mode `i` raised by one and the spin flipped.
fn fock_raised(basis: &FockBasis, s: &FockSpinState, i: usize) -> Option<usize> {
    let mut occ = s.occupations.clone();
    occ[i] += 1;
    basis.index_of(&FockSpinState::new(occ, s.spin.flip()))
}

fn fock_lowered_missing(basis: &FockBasis, s: &FockSpinState, i: usize) -> bool {
    if s.occupations[i] == 0 {
        return false;
    }
    let mut occ = s.occupations.clone();
    occ[i] -= 1;
    basis.index_of(&FockSpinState::new(occ, s.spin.flip())).is_none()
}

/// Jaynes-Cummings Hamiltonian on a Fock-spin basis. The coupling
/// `g_i √(n_i+1)` joins `|…n_i…,↑⟩` and `|…n_i+1…,↓⟩`.
pub fn assemble_jcm_fock(basis: &FockBasis, modes: &ModeSet, params: &SpinFieldParams) -> Result<HermitianOperator> {
    check_harmonics(basis.harmonics(), modes)?;
    params.validate()?;
    let mut b = OperatorBuilder::new(basis.len());
    fock_diagonal(&mut b, basis, modes, params);
    for (idx, s) in basis.states().iter().enumerate() {
        for (i, m) in modes.modes().iter().enumerate() {
            match s.spin {
                Spin::Up => match fock_raised(basis, s, i) {
                    Some(t) => b.add(idx, t, C64::new(m.g * ((s.occupations[i] + 1) as f64).sqrt(), 0.0)),
                    None => b.count_dropped(),
                },
                Spin::Down => {
                    if fock_lowered_missing(basis, s, i) {
                        b.count_dropped();
                    }
                }
            }
        }
    }
    b.finish(basis.fingerprint(), params.energy_offset)
}

/// Multimode Rabi Hamiltonian on a Fock-spin basis with `σ_x (a_i + a_i†)`
/// coupling and `g_i = √(k_i / k_min) · g0`.
pub fn assemble_rabi_fock(basis: &FockBasis, modes: &ModeSet, params: &SpinFieldParams, g0: f64) -> Result<HermitianOperator> {
    check_harmonics(basis.harmonics(), modes)?;
    params.validate()?;
    if params.rwa {
        return Err(Error::InvalidInput("Rabi assembly requires rwa = false".into()));
    }
    let modes = modes.with_sqrt_frequency_couplings(g0);
    let mut b = OperatorBuilder::new(basis.len());
    fock_diagonal(&mut b, basis, &modes, params);
    for (idx, s) in basis.states().iter().enumerate() {
        for (i, m) in modes.modes().iter().enumerate() {
            match fock_raised(basis, s, i) {
                Some(t) => b.add(idx, t, C64::new(m.g * ((s.occupations[i] + 1) as f64).sqrt(), 0.0)),
                None => b.count_dropped(),
            }
            if fock_lowered_missing(basis, s, i) {
                b.count_dropped();
            }
        }
    }
    b.finish(basis.fingerprint(), params.energy_offset)
}

/// `⟨N|a_i|N+k_i⟩` as used on the shell basis: the exact coherent-state
/// ratio when a table is given and `exact` is set, else the bare `α_i`.
fn shell_ladder(table: Option<&GammaTable>, modes: &ModeSet, n: i64, i: usize, exact: bool) -> Result<C64> {
    match table {
        Some(t) if exact => crate::shell::ladder_element(t, modes, n, i),
        _ => Ok(modes.modes()[i].alpha),
    }
}

fn shell_diagonal(b: &mut OperatorBuilder, basis: &ShellBasis, modes: &ModeSet, params: &SpinFieldParams) {
    let wf = modes.omega_f();
    for (i, s) in basis.states().iter().enumerate() {
        b.add_diagonal(i, params.spin_energy(s.spin) + s.n as f64 * wf - params.energy_offset);
    }
}

fn check_shell_support(basis: &ShellBasis, table: Option<&GammaTable>) -> Result<()> {
    if let Some(t) = table {
        if t.harmonics() != basis.harmonics() {
            return Err(Error::BasisMismatch("gamma table built for different harmonics".into()));
        }
        if let Some(s) = basis.states().iter().find(|s| !t.in_support(s.n)) {
            return Err(Error::OutsideSupport { shell: s.n });
        }
    }
    Ok(())
}

/// Jaynes-Cummings Hamiltonian on the shell basis. `|N+k_i,↓⟩` couples to
/// `|N,↑⟩` with `g_i α_i γ_N/γ_{N+k_i}` (exact) or `g_i α_i` (unit ratio).
///
/// Passing no table selects the strong-field ladder, where all ratios are
/// one and every shell is populated.
pub fn assemble_jcm_shell(
    basis: &ShellBasis,
    table: Option<&GammaTable>,
    modes: &ModeSet,
    params: &SpinFieldParams,
    exact_ratios: bool,
) -> Result<HermitianOperator> {
    check_harmonics(basis.harmonics(), modes)?;
    check_shell_support(basis, table)?;
    params.validate()?;
    let mut b = OperatorBuilder::new(basis.len());
    shell_diagonal(&mut b, basis, modes, params);
    for (idx, s) in basis.states().iter().enumerate() {
        for (i, m) in modes.modes().iter().enumerate() {
            let k = m.k as i64;
            match s.spin {
                Spin::Up => match basis.index_of(&ShellSpinState::new(s.n + k, Spin::Down)) {
                    Some(t) => {
                        let el = shell_ladder(table, modes, s.n, i, exact_ratios)? * m.g;
                        b.add(idx, t, el);
                    }
                    None => b.count_dropped(),
                },
                Spin::Down => {
                    if basis.index_of(&ShellSpinState::new(s.n - k, Spin::Up)).is_none() {
                        b.count_dropped();
                    }
                }
            }
        }
    }
    b.finish(basis.fingerprint(), params.energy_offset)
}

/// Multimode Rabi Hamiltonian on the shell basis: `a_i` takes `N → N-k_i`,
/// `a_i†` takes `N → N+k_i`, both flipping the spin.
pub fn assemble_rabi_shell(
    basis: &ShellBasis,
    table: Option<&GammaTable>,
    modes: &ModeSet,
    params: &SpinFieldParams,
    g0: f64,
) -> Result<HermitianOperator> {
    check_harmonics(basis.harmonics(), modes)?;
    check_shell_support(basis, table)?;
    params.validate()?;
    if params.rwa {
        return Err(Error::InvalidInput("Rabi assembly requires rwa = false".into()));
    }
    let modes = modes.with_sqrt_frequency_couplings(g0);
    let mut b = OperatorBuilder::new(basis.len());
    shell_diagonal(&mut b, basis, &modes, params);
    for (idx, s) in basis.states().iter().enumerate() {
        for (i, m) in modes.modes().iter().enumerate() {
            let k = m.k as i64;
            // ⟨N, s| g a_i σ_x |N+k, s̄⟩ with the ladder element of N
            match basis.index_of(&ShellSpinState::new(s.n + k, s.spin.flip())) {
                Some(t) => {
                    let el = shell_ladder(table, &modes, s.n, i, true)? * m.g;
                    b.add(idx, t, el);
                }
                None => b.count_dropped(),
            }
            let below = ShellSpinState::new(s.n - k, s.spin.flip());
            let populated = table.map_or(true, |t| t.in_support(below.n));
            if populated && basis.index_of(&below).is_none() {
                b.count_dropped();
            }
        }
    }
    b.finish(basis.fingerprint(), params.energy_offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{fock_basis_connected, fock_basis_cutoff, shell_basis, shell_basis_window, Coupling, StrongFieldLadder};
    use crate::shell::{gamma_table, Mode};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn builder_mirrors_lower_entries() {
        let mut b = OperatorBuilder::new(3);
        b.add(2, 0, C64::new(1.0, 2.0));
        b.add_diagonal(1, 5.0);
        let h = b.finish(0, 0.0).unwrap();
        assert_eq!(h.get(0, 2), C64::new(1.0, -2.0));
        assert_eq!(h.get(2, 0), C64::new(1.0, 2.0));
        assert_eq!(h.get(1, 1), c(5.0));
        assert_eq!(h.get(0, 1), c(0.0));
        let y = h.matvec(&[c(1.0), c(0.0), c(0.0)]);
        assert_eq!(y, vec![c(0.0), c(0.0), C64::new(1.0, 2.0)]);
    }

    #[test]
    fn builder_rejects_nan() {
        let mut b = OperatorBuilder::new(1);
        b.add_diagonal(0, f64::NAN);
        assert!(b.finish(0, 0.0).is_err());
    }

    #[test]
    fn single_mode_pair_element() {
        let modes = ModeSet::new(vec![Mode::new(1, 0.0, 0.3)]).unwrap();
        let n = 7;
        let basis = fock_basis_connected(&[1], FockSpinState::new(vec![n], Spin::Down), 1, Coupling::Rwa).unwrap();
        let h = assemble_jcm_fock(&basis, &modes, &SpinFieldParams::jcm(1.0)).unwrap();
        assert_eq!(h.dim(), 2);
        assert_abs_diff_eq!(h.get(0, 1).re, 0.3 * (n as f64).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(h.get(0, 0).re, n as f64 - 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(h.get(1, 1).re, (n - 1) as f64 + 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_coupling_is_diagonal() {
        let modes = ModeSet::new(vec![Mode::new(2, 1.0, 0.0), Mode::new(3, 1.0, 0.0)]).unwrap();
        let basis = fock_basis_cutoff(&[2, 3], &[3, 3]).unwrap();
        let p = SpinFieldParams::jcm(2.5);
        let h = assemble_jcm_fock(&basis, &modes, &p).unwrap();
        assert!(h.upper_entries().iter().all(|&(i, j, _)| i == j));
        for (i, s) in basis.states().iter().enumerate() {
            let e = 1.25 * s.spin.sign() + 2.0 * s.occupations[0] as f64 + 3.0 * s.occupations[1] as f64;
            assert_eq!(h.get(i, i).re, e);
        }
        let r = assemble_rabi_fock(&basis, &modes, &SpinFieldParams::rabi(2.5), 0.0).unwrap();
        assert!(r.upper_entries().iter().all(|&(i, j, _)| i == j));
    }

    #[test]
    fn mode_mismatch_is_reported() {
        let modes = ModeSet::new(vec![Mode::new(1, 1.0, 0.1)]).unwrap();
        let basis = fock_basis_cutoff(&[2], &[3]).unwrap();
        assert!(matches!(
            assemble_jcm_fock(&basis, &modes, &SpinFieldParams::jcm(1.0)),
            Err(Error::BasisMismatch(_))
        ));
    }

    #[test]
    fn shell_unit_ratio_elements() {
        let modes = ModeSet::new(vec![Mode::new(9, 1.5, 0.1), Mode::new(10, 2.0, 0.2), Mode::new(11, 0.5, 0.3)]).unwrap();
        let basis = shell_basis(&StrongFieldLadder::new(&[9, 10, 11]), 0, 4, Coupling::Rwa).unwrap();
        let h = assemble_jcm_shell(&basis, None, &modes, &SpinFieldParams::jcm(10.0), false).unwrap();
        for &(i, j, v) in h.upper_entries() {
            if i == j {
                continue;
            }
            let (si, sj) = (basis.state(i), basis.state(j));
            let (up, down) = if si.spin == Spin::Up { (si, sj) } else { (sj, si) };
            let k = (down.n - up.n) as u32;
            let m = modes.modes()[modes.position(k).unwrap()];
            assert_eq!(v, m.alpha * m.g);
        }
    }

    #[test]
    fn shell_matches_fock_for_one_mode() {
        // one mode: the shell state |N⟩ is the Fock state |N⟩ up to a phase,
        // and the exact ratio gives α γ_N/γ_{N+1} = √(N+1)
        let alpha = 3.0;
        let g = 0.05;
        let modes = ModeSet::new(vec![Mode::new(1, alpha, g)]).unwrap();
        let table = gamma_table(&modes, 1e-12).unwrap();
        let shell = shell_basis_window(&table).unwrap();
        let hs = assemble_jcm_shell(&shell, Some(&table), &modes, &SpinFieldParams::jcm(1.0), true).unwrap();
        let caps: Vec<u32> = vec![table.n_max() as u32];
        let fock = fock_basis_cutoff(&[1], &caps).unwrap();
        let hf = assemble_jcm_fock(&fock, &modes, &SpinFieldParams::jcm(1.0)).unwrap();
        for (i, s) in shell.states().iter().enumerate() {
            let fi = fock.index_of(&FockSpinState::new(vec![s.n as u32], s.spin)).unwrap();
            for (j, t) in shell.states().iter().enumerate() {
                let fj = fock.index_of(&FockSpinState::new(vec![t.n as u32], t.spin)).unwrap();
                assert_abs_diff_eq!(hs.get(i, j).re, hf.get(fi, fj).re, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exact_and_unit_ratios_agree_for_bright_fields() {
        let modes = ModeSet::new(vec![Mode::new(1, 10.0, 0.1), Mode::new(2, 10.0, 0.1)]).unwrap();
        let table = gamma_table(&modes, 1e-12).unwrap();
        let sigma = table.variance().sqrt();
        for (i, m) in modes.modes().iter().enumerate() {
            let lo = (table.mean() - sigma).ceil() as i64;
            let hi = (table.mean() + sigma).floor() as i64;
            for n in lo..=hi {
                let exact = crate::shell::ladder_element(&table, &modes, n, i).unwrap();
                assert!((exact.re / m.alpha.re - 1.0).abs() < 0.05, "n={n} k={}", m.k);
            }
        }
    }

    #[test]
    fn rabi_coupling_law() {
        let modes = ModeSet::new(vec![Mode::new(4, 1.0, 0.0), Mode::new(5, 1.0, 0.0)]).unwrap();
        let scaled = modes.with_sqrt_frequency_couplings(0.2);
        let r = scaled.modes()[1].g / scaled.modes()[0].g;
        assert_abs_diff_eq!(r, (5.0f64 / 4.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn rabi_fock_dimension_and_hermiticity() {
        let modes = ModeSet::new(vec![Mode::new(2, 1.0, 0.0), Mode::new(3, 1.0, 0.0)]).unwrap();
        let basis = fock_basis_cutoff(&[2, 3], &[19, 19]).unwrap();
        let h = assemble_rabi_fock(&basis, &modes, &SpinFieldParams::rabi(2.0), 0.25).unwrap();
        assert_eq!(h.dim(), 800);
        let d = h.to_dense().unwrap();
        assert_eq!(d.adjoint(), d);
        // only the truncation edge loses couplings
        assert_eq!(h.dropped(), 2 * 2 * 20);
    }

    #[test]
    fn rabi_shell_is_hermitian_and_couples_both_ways() {
        let modes = ModeSet::new(vec![Mode::new(2, 1.5, 0.0), Mode::new(3, 1.5, 0.0)]).unwrap();
        let table = gamma_table(&modes, 1e-12).unwrap();
        let basis = shell_basis_window(&table).unwrap();
        let h = assemble_rabi_shell(&basis, Some(&table), &modes, &SpinFieldParams::rabi(2.0), 0.1).unwrap();
        let d = h.to_dense().unwrap();
        assert_eq!(d.adjoint(), d);
        let n = (table.mean().round() as i64) / 1;
        let i = basis.index_of(&ShellSpinState::new(n, Spin::Up)).unwrap();
        let lo = basis.index_of(&ShellSpinState::new(n - 2, Spin::Down)).unwrap();
        let hi = basis.index_of(&ShellSpinState::new(n + 2, Spin::Down)).unwrap();
        assert!(h.get(i, lo).norm() > 0.0 && h.get(i, hi).norm() > 0.0);
        assert!(assemble_rabi_shell(&basis, Some(&table), &modes, &SpinFieldParams::jcm(2.0), 0.1).is_err());
    }

    #[test]
    fn no_dropped_couplings_inside_generous_caps() {
        let alpha = 2.0f64;
        let modes = ModeSet::new(vec![Mode::new(1, alpha, 0.1)]).unwrap();
        let seed = FockSpinState::new(vec![4], Spin::Down);
        let cap = (alpha * alpha + 8.0 * alpha + 10.0).ceil() as u32;
        let basis = fock_basis_cutoff(&[1], &[cap]).unwrap();
        let h = assemble_jcm_fock(&basis, &modes, &SpinFieldParams::jcm(1.0)).unwrap();
        // the only losses are at the top rung, far above N̄ + 8σ
        assert_eq!(h.dropped(), 1);
        assert!(basis.index_of(&seed).is_some());
    }

    #[test]
    fn offset_shifts_diagonal() {
        let modes = ModeSet::new(vec![Mode::new(1, 1.0, 0.1)]).unwrap();
        let basis = fock_basis_cutoff(&[1], &[2]).unwrap();
        let a = assemble_jcm_fock(&basis, &modes, &SpinFieldParams::jcm(1.0)).unwrap();
        let b = assemble_jcm_fock(&basis, &modes, &SpinFieldParams::jcm(1.0).with_offset(3.0)).unwrap();
        assert_eq!(b.energy_offset(), 3.0);
        for i in 0..basis.len() {
            assert_eq!(a.get(i, i).re - 3.0, b.get(i, i).re);
        }
    }

    #[test]
    fn coo_dump_is_full_matrix() {
        let modes = ModeSet::new(vec![Mode::new(1, 1.0, 0.5)]).unwrap();
        let basis = fock_basis_cutoff(&[1], &[1]).unwrap();
        let h = assemble_jcm_fock(&basis, &modes, &SpinFieldParams::jcm(1.0)).unwrap();
        let mut buf = Vec::new();
        h.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + h.nnz());
        assert!(text.starts_with("row,col,re,im\n"));
    }

    proptest! {
        #[test]
        fn hermitian_by_construction(entries in prop::collection::vec((0usize..6, 0usize..6, -1.0f64..1.0, -1.0f64..1.0), 0..30)) {
            let mut b = OperatorBuilder::new(6);
            for &(i, j, re, im) in &entries {
                if i == j { b.add_diagonal(i, re) } else { b.add(i, j, C64::new(re, im)) }
            }
            let h = b.finish(0, 0.0).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(h.get(i, j), h.get(j, i).conj());
                }
            }
            let x: Vec<C64> = (0..6).map(|i| C64::new(i as f64, 1.0 - i as f64)).collect();
            let dense = h.to_dense().unwrap() * nalgebra::DVector::from_vec(x.clone());
            let y = h.matvec(&x);
            for i in 0..6 {
                prop_assert!((dense[i] - y[i]).norm() < 1e-12);
            }
        }
    }
}
