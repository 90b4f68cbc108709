//! State space of up to three three-level atoms, operators on it, and the
//! driven Hamiltonian.
//!
//! Basis ordering is fixed here and nowhere else: each atom has levels
//! `|0⟩ < |1⟩ < |r⟩` and composite indices are `9·i₁ + 3·i₂ + i₃` for the
//! three-atom space (atom 1 is the most significant digit). Subsystems with
//! fewer atoms use the same base-3 convention.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEVELS: usize = 3;
pub const FULL_DIM: usize = 27;

/// Single-atom level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Q0 = 0,
    Q1 = 1,
    Ryd = 2,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Q0, Level::Q1, Level::Ryd];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Level::ALL.get(i).copied()
    }

    fn symbol(self) -> char {
        match self {
            Level::Q0 => '0',
            Level::Q1 => '1',
            Level::Ryd => 'r',
        }
    }
}

/// Composite basis index of a product state (first atom most significant).
pub fn basis_index(levels: &[Level]) -> usize {
    levels.iter().fold(0, |acc, l| acc * LEVELS + l.index())
}

/// Inverse of [`basis_index`] for a space of `n_atoms` atoms.
pub fn levels_of(mut index: usize, n_atoms: usize) -> Vec<Level> {
    let mut out = vec![Level::Q0; n_atoms];
    for slot in out.iter_mut().rev() {
        *slot = Level::from_index(index % LEVELS).unwrap();
        index /= LEVELS;
    }
    out
}

/// Label such as `"01r"` for a basis index.
pub fn basis_label(index: usize, n_atoms: usize) -> String {
    levels_of(index, n_atoms).into_iter().map(Level::symbol).collect()
}

/// Dense square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<C64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Operator { dim, data: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "operator rows must be square");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Outer product `|a⟩⟨b|` of single-atom levels.
    pub fn ket_bra(a: Level, b: Level) -> Self {
        let mut m = Self::zeros(LEVELS);
        m[(a.index(), b.index())] = C64::new(1.0, 0.0);
        m
    }

    /// `σ⁺ = |r⟩⟨1|`.
    pub fn sigma_plus() -> Self {
        Self::ket_bra(Level::Ryd, Level::Q1)
    }

    /// `σ⁻ = |1⟩⟨r|`.
    pub fn sigma_minus() -> Self {
        Self::ket_bra(Level::Q1, Level::Ryd)
    }

    /// Rydberg projector `n = |r⟩⟨r|`.
    pub fn rydberg_number() -> Self {
        Self::ket_bra(Level::Ryd, Level::Ryd)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn kron(&self, other: &Operator) -> Operator {
        let n = self.dim * other.dim;
        let mut out = Operator::zeros(n);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let a = self[(i, j)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..other.dim {
                    for l in 0..other.dim {
                        out[(i * other.dim + k, j * other.dim + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Operator {
        let mut out = Operator::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Operator {
        Operator { dim: self.dim, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn add(&self, other: &Operator) -> Operator {
        assert_eq!(self.dim, other.dim);
        Operator {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn matmul(&self, other: &Operator) -> Operator {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Operator::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    /// `out = self · x`.
    #[inline]
    pub fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        let n = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let row = &self.data[i * n..(i + 1) * n];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        self.apply_into(x, &mut out);
        out
    }

    /// Largest entry-wise deviation `max |A − A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Operator {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for Operator {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Embed a single-atom operator at slot `atom` (1-based) of an `n_atoms` space.
pub fn embed_op(op: &Operator, atom: usize, n_atoms: usize) -> Result<Operator> {
    if atom == 0 || atom > n_atoms {
        return Err(Error::InvalidAtom(atom, n_atoms));
    }
    if op.dim() != LEVELS {
        return Err(Error::InvalidParameter(format!(
            "single-atom operator must be {LEVELS}x{LEVELS}, got {0}x{0}",
            op.dim()
        )));
    }
    let id = Operator::identity(LEVELS);
    let mut out = Operator::identity(1);
    for slot in 1..=n_atoms {
        out = out.kron(if slot == atom { op } else { &id });
    }
    Ok(out)
}

/// Embed a single-atom operator into the three-atom space.
pub fn embed_single_atom_op(op: &Operator, atom: usize) -> Result<Operator> {
    embed_op(op, atom, 3)
}

/// Normalized amplitude vector over a product of three-level atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    /// Wraps raw amplitudes; the length must be a power of three.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let mut n = amps.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty state".into()));
        }
        while n.is_multiple_of(LEVELS) {
            n /= LEVELS;
        }
        if n != 1 {
            return Err(Error::InvalidParameter(format!(
                "state length {} is not a power of three",
                amps.len()
            )));
        }
        Ok(StateVector { amps })
    }

    pub fn basis(levels: &[Level]) -> Self {
        let dim = LEVELS.pow(levels.len() as u32);
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[basis_index(levels)] = C64::new(1.0, 0.0);
        StateVector { amps }
    }

    /// `(|0⟩ + |1⟩)/√2` on one atom.
    pub fn plus() -> Self {
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        StateVector { amps: vec![a, a, C64::new(0.0, 0.0)] }
    }

    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        StateVector { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn n_atoms(&self) -> usize {
        let mut n = 0;
        let mut d = self.dim();
        while d > 1 {
            d /= LEVELS;
            n += 1;
        }
        n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn amp(&self, levels: &[Level]) -> C64 {
        self.amps[basis_index(levels)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        StateVector { amps: self.amps.iter().map(|a| a / n).collect() }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        assert_eq!(self.dim(), other.dim());
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.n_atoms();
        let mut first = true;
        for (i, a) in self.amps.iter().enumerate() {
            if a.norm() < 1e-12 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6}{:+.6}i)|{}⟩", a.re, a.im, basis_label(i, n))?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Physical constants of the three-atom system in natural units (ħ = 1).
///
/// Interaction strengths are angular frequencies in the same units as
/// `omega0`; with `omega0 = 1` they read directly as `V/ħΩ₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Peak Rabi frequency Ω₀.
    pub omega0: f64,
    /// Gate-pair interaction V₁₂.
    pub v12: f64,
    /// Spectator interactions V₁₃, V₂₃.
    pub v13: f64,
    pub v23: f64,
    /// Fraction of the addressing intensity reaching atom 3.
    pub epsilon: f64,
}

/// Operating point V₁₂/ħΩ₀ used throughout.
pub const V12_REFERENCE: f64 = 21.1;

impl SystemParams {
    /// Symmetric arrangement: all three pair interactions equal.
    pub fn symmetric(v: f64, epsilon: f64) -> Self {
        SystemParams { omega0: 1.0, v12: v, v13: v, v23: v, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega0 must be > 0, got {}", self.omega0)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        for (name, v) in [("v12", self.v12), ("v13", self.v13), ("v23", self.v23)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_spectator(mut self, v13: f64, v23: f64) -> Self {
        self.v13 = v13;
        self.v23 = v23;
        self
    }
}

/// Which atoms are present, how strongly each is driven, and how they
/// interact. Describes the full system and its gate-pair and spectator
/// subsystems alike.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomChain {
    /// Relative Rabi amplitude seen by each atom (1 for gate atoms, √ε for the spectator).
    pub drive_scales: Vec<f64>,
    /// `(i, j, V_ij)` with 0-based atom indices.
    pub interactions: Vec<(usize, usize, f64)>,
}

impl AtomChain {
    pub fn full(p: &SystemParams) -> Self {
        AtomChain {
            drive_scales: vec![1.0, 1.0, p.epsilon.sqrt()],
            interactions: vec![(0, 1, p.v12), (0, 2, p.v13), (1, 2, p.v23)],
        }
    }

    pub fn gate_pair(v12: f64) -> Self {
        AtomChain { drive_scales: vec![1.0, 1.0], interactions: vec![(0, 1, v12)] }
    }

    pub fn spectator(epsilon: f64) -> Self {
        AtomChain { drive_scales: vec![epsilon.sqrt()], interactions: vec![] }
    }

    pub fn n_atoms(&self) -> usize {
        self.drive_scales.len()
    }

    pub fn dim(&self) -> usize {
        LEVELS.pow(self.n_atoms() as u32)
    }
}

/// Time-independent pieces of the Hamiltonian, so that
/// `H(ω, Δ) = H_int + Re(ω)·X + Im(ω)·Y − Δ·N`.
#[derive(Clone, Debug)]
pub struct HamiltonianTerms {
    interaction: Operator,
    drive_re: Operator,
    drive_im: Operator,
    number: Operator,
}

impl HamiltonianTerms {
    pub fn new(chain: &AtomChain) -> Self {
        let n = chain.n_atoms();
        let dim = chain.dim();
        let sp = Operator::sigma_plus();
        let sm = Operator::sigma_minus();
        let nr = Operator::rydberg_number();
        let half = C64::new(0.5, 0.0);
        let i_half = C64::new(0.0, 0.5);

        let mut drive_re = Operator::zeros(dim);
        let mut drive_im = Operator::zeros(dim);
        let mut number = Operator::zeros(dim);
        let mut projectors = Vec::with_capacity(n);
        for (slot, &scale) in chain.drive_scales.iter().enumerate() {
            let sp_i = embed_op(&sp, slot + 1, n).unwrap();
            let sm_i = embed_op(&sm, slot + 1, n).unwrap();
            let n_i = embed_op(&nr, slot + 1, n).unwrap();
            let s = C64::new(scale, 0.0);
            // ω/2 σ⁺ + ω*/2 σ⁻ = Re ω (σ⁺+σ⁻)/2 + Im ω · i(σ⁺−σ⁻)/2
            drive_re = drive_re.add(&sp_i.add(&sm_i).scale(half * s));
            drive_im = drive_im.add(&sp_i.add(&sm_i.scale(C64::new(-1.0, 0.0))).scale(i_half * s));
            number = number.add(&n_i);
            projectors.push(n_i);
        }
        let mut interaction = Operator::zeros(dim);
        for &(i, j, v) in &chain.interactions {
            interaction = interaction.add(&projectors[i].matmul(&projectors[j]).scale(C64::new(v, 0.0)));
        }
        HamiltonianTerms { interaction, drive_re, drive_im, number }
    }

    pub fn dim(&self) -> usize {
        self.interaction.dim()
    }

    /// Assemble the dense Hamiltonian for complex Rabi amplitude `omega` and detuning `delta`.
    pub fn assemble(&self, omega: C64, delta: f64) -> Operator {
        let mut h = self.interaction.clone();
        self.assemble_into(omega, delta, &mut h);
        h
    }

    /// Same as [`assemble`](Self::assemble) but reuses `out`'s storage.
    #[inline]
    pub fn assemble_into(&self, omega: C64, delta: f64, out: &mut Operator) {
        let (a, b) = (omega.re, omega.im);
        for (k, o) in out.data.iter_mut().enumerate() {
            *o = self.interaction.data[k] + self.drive_re.data[k] * a + self.drive_im.data[k] * b
                - self.number.data[k] * delta;
        }
    }
}

/// Full three-atom Hamiltonian at one instant.
#[derive(Clone, Debug)]
pub struct HamiltonianSnapshot {
    pub matrix: Operator,
}

/// Build `H = H_cz + H₃ + H_int` for a given complex Rabi amplitude (already
/// scaled to physical units) and detuning.
pub fn build_hamiltonian(params: &SystemParams, omega_t: C64, delta_t: f64) -> HamiltonianSnapshot {
    let terms = HamiltonianTerms::new(&AtomChain::full(params));
    HamiltonianSnapshot { matrix: terms.assemble(omega_t, delta_t) }
}
