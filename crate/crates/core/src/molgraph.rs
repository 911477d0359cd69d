//! Molecular graph data model, JSONL ingestion, dense one-hot tensorisation
//! and a simplified valence check.
//!
//! A molecule is stored as atom types, formal charges, a dense symmetric
//! bond-category matrix and zero-centred 3D positions (Å).

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

/// Element vocabulary; indices into this table are atom types.
pub const ELEMENTS: [&str; 5] = ["H", "C", "N", "O", "F"];
/// Extra one-hot slot reserved for padding; never produced by parsing.
pub const PAD_SLOT: usize = ELEMENTS.len();
pub const TYPE_SLOTS: usize = ELEMENTS.len() + 1;
pub const CHARGES: [i8; 3] = [-1, 0, 1];
/// Width of a node feature row: type one-hot ⊕ charge one-hot.
pub const ATOM_FEATURES: usize = TYPE_SLOTS + CHARGES.len();
/// Bond categories: 0 none, 1 single, 2 double, 3 triple, 4 aromatic.
pub const BOND_TYPES: usize = 5;
pub const AROMATIC: u8 = 4;
pub const MAX_ATOMS: usize = 64;

/// Positions whose centroid is already this close to the origin are left untouched,
/// which keeps re-ingestion byte-stable.
const CENTERING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MolGraphError {
    #[error("malformed JSON record: {0}")]
    Json(String),
    #[error("unknown element {0:?} (vocabulary: H, C, N, O, F)")]
    UnknownElement(String),
    #[error("bond ({i},{j}) listed twice with different orders {first} and {second}")]
    AsymmetricBond { i: usize, j: usize, first: u8, second: u8 },
    #[error("bond ({i},{j}) references an atom outside 0..{n}")]
    BondIndexOutOfRange { i: i64, j: i64, n: usize },
    #[error("bond ({0},{0}) connects an atom to itself")]
    SelfBond(usize),
    #[error("bond ({i},{j}) has order {order}; expected 1..=4")]
    InvalidBondOrder { i: usize, j: usize, order: i64 },
    #[error("atom {atom} has formal charge {q}; expected -1, 0 or +1")]
    InvalidCharge { atom: usize, q: i64 },
    #[error("atom {0} has a non-finite coordinate")]
    NonFinitePosition(usize),
    #[error("molecule has {0} atoms; at most {MAX_ATOMS} are supported")]
    TooManyAtoms(usize),
    #[error("molecule has no atoms")]
    Empty,
    #[error("inconsistent field lengths: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct AtomRecord {
    el: String,
    q: i64,
    xyz: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct MoleculeRecord {
    atoms: Vec<AtomRecord>,
    #[serde(default)]
    bonds: Vec<[i64; 3]>,
}

/// A validated molecule with zero-centred positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeGraph {
    atom_types: Vec<u8>,
    charges: Vec<i8>,
    bonds: Vec<u8>,
    positions: Vec<[f64; 3]>,
}

pub fn element_index(symbol: &str) -> Option<u8> {
    ELEMENTS.iter().position(|e| *e == symbol).map(|i| i as u8)
}

fn charge_slot(q: i8) -> usize {
    CHARGES.iter().position(|&c| c == q).expect("charge validated at construction")
}

pub(crate) fn center(positions: &mut [[f64; 3]]) {
    if positions.is_empty() {
        return;
    }
    let n = positions.len() as f64;
    let mut c = [0.0; 3];
    for p in positions.iter() {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.iter_mut().for_each(|v| *v /= n);
    if c.iter().all(|v| v.abs() <= CENTERING_TOLERANCE) {
        return;
    }
    for p in positions.iter_mut() {
        for k in 0..3 {
            p[k] -= c[k];
        }
    }
}

impl MoleculeGraph {
    /// Validates the parts and zero-centres the positions.
    pub fn new(
        atom_types: Vec<u8>,
        charges: Vec<i8>,
        bonds: Vec<u8>,
        mut positions: Vec<[f64; 3]>,
    ) -> Result<Self, MolGraphError> {
        let n = atom_types.len();
        if n == 0 {
            return Err(MolGraphError::Empty);
        }
        if n > MAX_ATOMS {
            return Err(MolGraphError::TooManyAtoms(n));
        }
        if charges.len() != n || positions.len() != n || bonds.len() != n * n {
            return Err(MolGraphError::Inconsistent(format!(
                "{n} atom types, {} charges, {} positions, {} bond entries",
                charges.len(),
                positions.len(),
                bonds.len()
            )));
        }
        if let Some(&t) = atom_types.iter().find(|&&t| t as usize >= ELEMENTS.len()) {
            return Err(MolGraphError::UnknownElement(format!("index {t}")));
        }
        for (atom, &q) in charges.iter().enumerate() {
            if !CHARGES.contains(&q) {
                return Err(MolGraphError::InvalidCharge { atom, q: q as i64 });
            }
        }
        for i in 0..n {
            if bonds[i * n + i] != 0 {
                return Err(MolGraphError::SelfBond(i));
            }
            for j in 0..n {
                let (a, b) = (bonds[i * n + j], bonds[j * n + i]);
                if a as usize >= BOND_TYPES {
                    return Err(MolGraphError::InvalidBondOrder { i, j, order: a as i64 });
                }
                if a != b {
                    return Err(MolGraphError::AsymmetricBond { i, j, first: a, second: b });
                }
            }
        }
        if let Some(atom) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(MolGraphError::NonFinitePosition(atom));
        }
        center(&mut positions);
        Ok(Self { atom_types, charges, bonds, positions })
    }

    pub fn n(&self) -> usize {
        self.atom_types.len()
    }

    pub fn atom_types(&self) -> &[u8] {
        &self.atom_types
    }

    pub fn charges(&self) -> &[i8] {
        &self.charges
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn bond(&self, i: usize, j: usize) -> u8 {
        self.bonds[i * self.n() + j]
    }

    /// Row-major n×n bond categories.
    pub fn bond_matrix(&self) -> &[u8] {
        &self.bonds
    }

    pub fn element(&self, i: usize) -> &'static str {
        ELEMENTS[self.atom_types[i] as usize]
    }

    /// Bonded pairs `(i, j, category)` with `i < j`.
    pub fn bond_list(&self) -> Vec<(usize, usize, u8)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let b = self.bonds[i * n + j];
                if b != 0 {
                    out.push((i, j, b));
                }
            }
        }
        out
    }

    /// Same molecule with a new conformer (re-centred).
    pub fn with_positions(&self, positions: Vec<[f64; 3]>) -> Result<Self, MolGraphError> {
        Self::new(self.atom_types.clone(), self.charges.clone(), self.bonds.clone(), positions)
    }

    /// Atom `k` of the result is atom `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        assert_eq!(perm.len(), n, "permutation length");
        let mut bonds = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                bonds[a * n + b] = self.bonds[perm[a] * n + perm[b]];
            }
        }
        Self {
            atom_types: perm.iter().map(|&p| self.atom_types[p]).collect(),
            charges: perm.iter().map(|&p| self.charges[p]).collect(),
            bonds,
            positions: perm.iter().map(|&p| self.positions[p]).collect(),
        }
    }

    /// Root-mean-square distance of atoms from the centroid.
    pub fn radius_of_gyration(&self) -> f64 {
        let n = self.n() as f64;
        (self.positions.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n).sqrt()
    }

    /// Serialises to one JSONL record (no trailing newline).
    pub fn to_record_line(&self) -> String {
        let record = MoleculeRecord {
            atoms: (0..self.n())
                .map(|i| AtomRecord {
                    el: self.element(i).to_string(),
                    q: self.charges[i] as i64,
                    xyz: self.positions[i],
                })
                .collect(),
            bonds: self.bond_list().into_iter().map(|(i, j, b)| [i as i64, j as i64, b as i64]).collect(),
        };
        serde_json::to_string(&record).expect("molecule records always serialise")
    }

    /// One-hot relaxation: H (n×9), E (n×n×5, zero diagonal), P (n×3).
    pub fn to_dense(&self) -> DenseTensors {
        let n = self.n();
        let mut h = Tensor::zeros(&[n, ATOM_FEATURES]);
        let mut e = Tensor::zeros(&[n, n, BOND_TYPES]);
        for i in 0..n {
            h.set(&[i, self.atom_types[i] as usize], 1.0);
            h.set(&[i, TYPE_SLOTS + charge_slot(self.charges[i])], 1.0);
            for j in 0..n {
                if i != j {
                    e.set(&[i, j, self.bonds[i * n + j] as usize], 1.0);
                }
            }
        }
        let p = Tensor::new(vec![n, 3], self.positions.iter().flatten().copied().collect())
            .expect("n×3 positions");
        DenseTensors { h, e, p }
    }

    /// Simplified valence check against a fixed (element, charge) table.
    pub fn validate_valence(&self) -> ValenceReport {
        let n = self.n();
        let atoms: Vec<AtomValence> = (0..n)
            .map(|i| {
                let sum: f64 = (0..n)
                    .map(|j| match self.bonds[i * n + j] {
                        AROMATIC => 1.5,
                        b => b as f64,
                    })
                    .sum();
                let allowed = allowed_valences(self.atom_types[i], self.charges[i]);
                AtomValence {
                    atom: i,
                    element: self.element(i),
                    charge: self.charges[i],
                    bond_order_sum: sum,
                    allowed,
                    stable: allowed.iter().any(|&v| (v - sum).abs() < 1e-9),
                }
            })
            .collect();
        ValenceReport { stable: atoms.iter().all(|a| a.stable), atoms }
    }
}

/// Allowed bond-order sums for an (element, formal charge) pair.
pub fn allowed_valences(atom_type: u8, charge: i8) -> &'static [f64] {
    match (ELEMENTS[atom_type as usize], charge) {
        ("H", 0) => &[1.0],
        ("C", 0) => &[4.0],
        ("C", 1) | ("C", -1) => &[3.0],
        ("N", 0) => &[3.0],
        ("N", 1) => &[4.0],
        ("N", -1) => &[2.0],
        ("O", 0) => &[2.0],
        ("O", 1) => &[3.0],
        ("O", -1) => &[1.0],
        ("F", 0) => &[1.0],
        _ => &[],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomValence {
    pub atom: usize,
    pub element: &'static str,
    pub charge: i8,
    pub bond_order_sum: f64,
    pub allowed: &'static [f64],
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValenceReport {
    pub stable: bool,
    pub atoms: Vec<AtomValence>,
}

impl ValenceReport {
    pub fn unstable_atoms(&self) -> impl Iterator<Item = &AtomValence> {
        self.atoms.iter().filter(|a| !a.stable)
    }

    pub fn diagnostics(&self) -> Vec<String> {
        self.unstable_atoms()
            .map(|a| {
                format!(
                    "atom {} ({}{:+}): bond order sum {} not in {:?}",
                    a.atom, a.element, a.charge, a.bond_order_sum, a.allowed
                )
            })
            .collect()
    }
}

/// Parses one JSONL molecule record into a validated, zero-centred graph.
pub fn parse_molecule(record: &str) -> Result<MoleculeGraph, MolGraphError> {
    let rec: MoleculeRecord = serde_json::from_str(record).map_err(|e| MolGraphError::Json(e.to_string()))?;
    let n = rec.atoms.len();
    if n == 0 {
        return Err(MolGraphError::Empty);
    }
    if n > MAX_ATOMS {
        return Err(MolGraphError::TooManyAtoms(n));
    }
    let mut atom_types = Vec::with_capacity(n);
    let mut charges = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    for (i, a) in rec.atoms.iter().enumerate() {
        atom_types.push(element_index(&a.el).ok_or_else(|| MolGraphError::UnknownElement(a.el.clone()))?);
        if !(-1..=1).contains(&a.q) {
            return Err(MolGraphError::InvalidCharge { atom: i, q: a.q });
        }
        charges.push(a.q as i8);
        if a.xyz.iter().any(|v| !v.is_finite()) {
            return Err(MolGraphError::NonFinitePosition(i));
        }
        positions.push(a.xyz);
    }
    let mut bonds = vec![0u8; n * n];
    for &[i, j, order] in &rec.bonds {
        if i < 0 || j < 0 || i as usize >= n || j as usize >= n {
            return Err(MolGraphError::BondIndexOutOfRange { i, j, n });
        }
        let (i, j) = (i as usize, j as usize);
        if i == j {
            return Err(MolGraphError::SelfBond(i));
        }
        if !(1..=4).contains(&order) {
            return Err(MolGraphError::InvalidBondOrder { i, j, order });
        }
        let order = order as u8;
        let existing = bonds[i * n + j];
        if existing != 0 && existing != order {
            return Err(MolGraphError::AsymmetricBond { i, j, first: existing, second: order });
        }
        bonds[i * n + j] = order;
        bonds[j * n + i] = order;
    }
    MoleculeGraph::new(atom_types, charges, bonds, positions)
}

/// Dense relaxation of a molecule fed to the diffusion process.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensors {
    /// n × ATOM_FEATURES
    pub h: Tensor,
    /// n × n × BOND_TYPES
    pub e: Tensor,
    /// n × 3
    pub p: Tensor,
}

impl DenseTensors {
    pub fn n(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            h: Tensor::zeros(&[n, ATOM_FEATURES]),
            e: Tensor::zeros(&[n, n, BOND_TYPES]),
            p: Tensor::zeros(&[n, 3]),
        }
    }

    /// Row `k` of the result is row `perm[k]` of `self`, for every component.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { h: self.h.permute_rows(perm), e: self.e.permute_pairs(perm), p: self.p.permute_rows(perm) }
    }

    pub fn is_finite(&self) -> bool {
        self.h.is_finite() && self.e.is_finite() && self.p.is_finite()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.p.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
    }
}

/// Reads a JSONL file body: returns parsed graphs and `(line_number, error)` pairs.
pub fn parse_jsonl(text: &str) -> (Vec<MoleculeGraph>, Vec<(usize, MolGraphError)>) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_molecule(line) {
            Ok(g) => ok.push(g),
            Err(e) => bad.push((idx + 1, e)),
        }
    }
    (ok, bad)
}

pub fn to_jsonl(graphs: &[MoleculeGraph]) -> String {
    let mut s = String::new();
    for g in graphs {
        s.push_str(&g.to_record_line());
        s.push('\n');
    }
    s
}
