//! Ordered spin-field bases.
//!
//! Three builders are provided: the Fock-spin basis grown from a seed by
//! repeated application of the interaction, the full per-mode-cutoff Fock
//! grid used as the brute-force oracle, and the shell-spin basis in which
//! every energy shell carries a single state.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::io::Write;

use crate::error::{Error, Result};
use crate::shell::{shell_index, GammaTable};

/// Default ceiling on the number of states in a cutoff Fock basis.
pub const DEFAULT_DIMENSION_LIMIT: usize = 2_000_000;

/// Spin projection of the two-level system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Spin {
    Down,
    Up,
}

impl Spin {
    /// Eigenvalue of `σ_z` (twice the projection `m`).
    pub fn sign(self) -> f64 {
        match self {
            Spin::Down => -1.0,
            Spin::Up => 1.0,
        }
    }

    pub fn flip(self) -> Spin {
        match self {
            Spin::Down => Spin::Up,
            Spin::Up => Spin::Down,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Spin::Down => "down",
            Spin::Up => "up",
        }
    }
}

/// Which spin-field interaction generates the basis closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Rotating-wave terms `a σ+` and `a† σ-` only.
    Rwa,
    /// Full `(a + a†) σ_x`: any photon change flips the spin.
    Rabi,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FockSpinState {
    pub occupations: Vec<u32>,
    pub spin: Spin,
}

impl FockSpinState {
    pub fn new(occupations: Vec<u32>, spin: Spin) -> Self {
        FockSpinState { occupations, spin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShellSpinState {
    pub n: i64,
    pub spin: Spin,
}

impl ShellSpinState {
    pub fn new(n: i64, spin: Spin) -> Self {
        ShellSpinState { n, spin }
    }
}

/// An ordered, duplicate-free list of basis labels with its inverse map.
#[derive(Debug, Clone)]
pub struct Basis<S> {
    harmonics: Vec<u32>,
    states: Vec<S>,
    index: HashMap<S, usize>,
    pruned: usize,
}

pub type FockBasis = Basis<FockSpinState>;
pub type ShellBasis = Basis<ShellSpinState>;

impl<S: Clone + Eq + Hash> Basis<S> {
    fn from_states(harmonics: Vec<u32>, states: Vec<S>, pruned: usize) -> Self {
        let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Basis { harmonics, states, index, pruned }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &S {
        &self.states[i]
    }

    pub fn index_of(&self, s: &S) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn harmonics(&self) -> &[u32] {
        &self.harmonics
    }

    /// Number of generator applications dropped at the vacuum boundary or
    /// outside the shell support.
    pub fn pruned(&self) -> usize {
        self.pruned
    }
}

impl<S: Hash> Basis<S> {
    /// Order-sensitive fingerprint of the labels, used to tie operators to
    /// the basis they were assembled on.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.harmonics.hash(&mut h);
        self.states.hash(&mut h);
        h.finish()
    }
}

/// Photon-changing moves from a Fock-spin state: `(mode position, +1 | -1)`
/// together with the resulting spin.
fn fock_moves(spin: Spin, modes: usize, coupling: Coupling) -> Vec<(usize, i32)> {
    let mut out = Vec::with_capacity(2 * modes);
    for i in 0..modes {
        match (coupling, spin) {
            (Coupling::Rwa, Spin::Down) => out.push((i, -1)),
            (Coupling::Rwa, Spin::Up) => out.push((i, 1)),
            (Coupling::Rabi, _) => {
                out.push((i, -1));
                out.push((i, 1));
            }
        }
    }
    out
}

/// Basis over an explicit list of states, kept in the given order.
pub fn fock_basis_from_states(harmonics: &[u32], states: Vec<FockSpinState>) -> Result<FockBasis> {
    if states.is_empty() {
        return Err(Error::EmptyBasis("no states given".into()));
    }
    if let Some(s) = states.iter().find(|s| s.occupations.len() != harmonics.len()) {
        return Err(Error::InvalidInput(format!("state has {} occupations for {} modes", s.occupations.len(), harmonics.len())));
    }
    let basis = Basis::from_states(harmonics.to_vec(), states, 0);
    if basis.index.len() != basis.states.len() {
        return Err(Error::InvalidInput("duplicate states".into()));
    }
    Ok(basis)
}

/// Breadth-first closure of `seed` under the interaction, up to `depth`
/// applications. Layers are kept in BFS order and sorted within a layer.
/// Branches that would take an occupation below zero are dropped and
/// counted in [`Basis::pruned`].
pub fn fock_basis_connected(harmonics: &[u32], seed: FockSpinState, depth: usize, coupling: Coupling) -> Result<FockBasis> {
    if seed.occupations.len() != harmonics.len() {
        return Err(Error::BasisMismatch(format!(
            "seed has {} occupations for {} modes",
            seed.occupations.len(),
            harmonics.len()
        )));
    }
    let mut seen: std::collections::HashSet<FockSpinState> = std::collections::HashSet::new();
    seen.insert(seed.clone());
    let mut states = vec![seed.clone()];
    let mut frontier = vec![seed];
    let mut pruned = 0;
    for _ in 0..depth {
        let mut layer = BTreeSet::new();
        for s in &frontier {
            for (i, step) in fock_moves(s.spin, harmonics.len(), coupling) {
                let mut occ = s.occupations.clone();
                if step < 0 {
                    if occ[i] == 0 {
                        pruned += 1;
                        continue;
                    }
                    occ[i] -= 1;
                } else {
                    occ[i] += 1;
                }
                let next = FockSpinState::new(occ, s.spin.flip());
                if !seen.contains(&next) {
                    layer.insert(next);
                }
            }
        }
        for s in &layer {
            seen.insert(s.clone());
        }
        frontier = layer.into_iter().collect();
        states.extend(frontier.iter().cloned());
    }
    Ok(Basis::from_states(harmonics.to_vec(), states, pruned))
}

/// Full tensor grid `0..=cap_i` per mode times both spins, spin innermost.
pub fn fock_basis_cutoff(harmonics: &[u32], caps: &[u32]) -> Result<FockBasis> {
    fock_basis_cutoff_with_limit(harmonics, caps, DEFAULT_DIMENSION_LIMIT)
}

pub fn fock_basis_cutoff_with_limit(harmonics: &[u32], caps: &[u32], limit: usize) -> Result<FockBasis> {
    if caps.len() != harmonics.len() {
        return Err(Error::BasisMismatch(format!("{} caps for {} modes", caps.len(), harmonics.len())));
    }
    let dim = caps
        .iter()
        .try_fold(2usize, |acc, &c| acc.checked_mul(c as usize + 1))
        .unwrap_or(usize::MAX);
    if dim > limit {
        return Err(Error::DimensionLimit { dim, limit });
    }
    let mut states = Vec::with_capacity(dim);
    let mut occ = vec![0u32; caps.len()];
    loop {
        states.push(FockSpinState::new(occ.clone(), Spin::Down));
        states.push(FockSpinState::new(occ.clone(), Spin::Up));
        // odometer increment, last mode fastest
        let mut i = caps.len();
        loop {
            if i == 0 {
                return Ok(Basis::from_states(harmonics.to_vec(), states, 0));
            }
            i -= 1;
            if occ[i] < caps[i] {
                occ[i] += 1;
                break;
            }
            occ[i] = 0;
        }
    }
}

/// Which shells may appear in a shell-spin basis.
pub trait ShellSupport {
    fn harmonics(&self) -> &[u32];
    fn in_support(&self, n: i64) -> bool;
}

impl ShellSupport for GammaTable {
    fn harmonics(&self) -> &[u32] {
        GammaTable::harmonics(self)
    }

    fn in_support(&self, n: i64) -> bool {
        GammaTable::in_support(self, n)
    }
}

/// Strong-field limit: every shell is populated and all ladder ratios are
/// unity. Shell labels are then relative and may be negative.
#[derive(Debug, Clone)]
pub struct StrongFieldLadder {
    harmonics: Vec<u32>,
}

impl StrongFieldLadder {
    pub fn new(harmonics: &[u32]) -> Self {
        StrongFieldLadder { harmonics: harmonics.to_vec() }
    }
}

impl ShellSupport for StrongFieldLadder {
    fn harmonics(&self) -> &[u32] {
        &self.harmonics
    }

    fn in_support(&self, _n: i64) -> bool {
        true
    }
}

/// Closure of `|seed_n, ↓⟩` under shell transitions `N → N ∓ k` with a spin
/// flip, up to `depth` steps, restricted to supported shells and ordered
/// by `(N, spin)`.
///
/// `resonant_k` records the harmonic whose partner `|N - k, ↑⟩` is resonant
/// with `|N, ↓⟩`; it does not affect the closure.
pub fn shell_basis<T: ShellSupport + ?Sized>(
    support: &T,
    seed_n: i64,
    depth: usize,
    coupling: Coupling,
) -> Result<ShellBasis> {
    if !support.in_support(seed_n) {
        return Err(Error::EmptyBasis(format!("seed shell {seed_n} is outside the support")));
    }
    let harmonics = support.harmonics().to_vec();
    let seed = ShellSpinState::new(seed_n, Spin::Down);
    let mut seen = BTreeSet::from([seed]);
    let mut frontier = vec![seed];
    let mut pruned = 0;
    for _ in 0..depth {
        let mut next = Vec::new();
        for s in &frontier {
            for &k in &harmonics {
                let k = k as i64;
                let targets: &[i64] = match (coupling, s.spin) {
                    (Coupling::Rwa, Spin::Down) => &[-k],
                    (Coupling::Rwa, Spin::Up) => &[k],
                    (Coupling::Rabi, _) => &[-k, k],
                };
                for &dn in targets {
                    let t = ShellSpinState::new(s.n + dn, s.spin.flip());
                    if !support.in_support(t.n) {
                        pruned += 1;
                        continue;
                    }
                    if seen.insert(t) {
                        next.push(t);
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(Basis::from_states(harmonics, seen.into_iter().collect(), pruned))
}

/// Every supported shell with both spins, ordered by `(N, spin)`.
pub fn shell_basis_window(table: &GammaTable) -> Result<ShellBasis> {
    let states: Vec<_> = table
        .support()
        .into_iter()
        .flat_map(|n| [ShellSpinState::new(n, Spin::Down), ShellSpinState::new(n, Spin::Up)])
        .collect();
    if states.is_empty() {
        return Err(Error::EmptyBasis("gamma table has no supported shells".into()));
    }
    Ok(Basis::from_states(table.harmonics().to_vec(), states, 0))
}

impl FockBasis {
    /// Shell index of state `i`.
    pub fn shell_of(&self, i: usize) -> i64 {
        shell_index(&self.states[i].occupations, &self.harmonics)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols: Vec<String> = self.harmonics.iter().map(|k| format!("n_k{k}")).collect();
        writeln!(w, "index,{},spin,shell", cols.join(","))?;
        for (i, s) in self.states.iter().enumerate() {
            let occ: Vec<String> = s.occupations.iter().map(|n| n.to_string()).collect();
            writeln!(w, "{},{},{},{}", i, occ.join(","), s.spin.label(), self.shell_of(i))?;
        }
        Ok(())
    }
}

impl ShellBasis {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,N,spin")?;
        for (i, s) in self.states.iter().enumerate() {
            writeln!(w, "{},{},{}", i, s.n, s.spin.label())?;
        }
        Ok(())
    }
}
