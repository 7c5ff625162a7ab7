//! SMILES parsing and atom featurization.
//!
//! Covers the organic subset plus bracket atoms, bonds `- = # :`, branches,
//! ring closures `1`-`9` and `%nn`, and aromatic lowercase atoms. Stereo bond
//! symbols `/` and `\` are accepted and treated as single bonds. Hydrogens
//! (implicit or explicit) are folded into the per-atom H count, so the graph
//! covers heavy atoms only.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum ChemError {
    #[error("empty SMILES input")]
    EmptyInput,
    #[error("unknown atom symbol {symbol:?} at position {pos}")]
    UnknownAtomSymbol { symbol: String, pos: usize },
    #[error("unbalanced parenthesis or bracket")]
    UnbalancedParen,
    #[error("ring-closure bond {0} opened but never closed")]
    UnmatchedRingBond(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    /// Integer code used by the fingerprint hash.
    pub fn code(self) -> u64 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chirality {
    None,
    Counterclockwise, // @
    Clockwise,        // @@
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomMeta {
    pub element: String,
    pub degree: usize,
    pub formal_charge: i32,
    pub h_count: usize,
    pub hybridization: Hybridization,
    pub aromatic: bool,
    pub in_ring: bool,
    pub chirality: Chirality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    pub atom_meta: Vec<AtomMeta>,
    /// Undirected atom-index pairs, each stored once with a < b.
    pub edges: Vec<(usize, usize)>,
    /// Bond order per edge, parallel to `edges`.
    pub bond_orders: Vec<BondOrder>,
    /// N x FEATURE_DIM one-hot matrix, row-major.
    pub node_features: Vec<f64>,
}

const ELEMENTS: &[&str] = &[
    "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "I", "H", "Se", "As", "Li", "Na", "K",
    "Mg", "Ca", "Fe", "Zn", "Cu", "Mn", "Co", "Ni", "Al", "Sn", "Sb", "Ag", "Au", "Pt", "Hg",
    "Pb", "Bi", "Gd", "Ti", "Cr", "Mo", "W", "V",
];

const MAX_DEGREE: usize = 6;
const MIN_CHARGE: i32 = -3;
const MAX_CHARGE: i32 = 3;
const MAX_H: usize = 4;

const ELEMENT_BLOCK: usize = ELEMENTS.len() + 1; // + other
const DEGREE_BLOCK: usize = MAX_DEGREE + 2; // 0..=6 + other
const CHARGE_BLOCK: usize = (MAX_CHARGE - MIN_CHARGE) as usize + 2; // -3..=3 + other
const H_BLOCK: usize = MAX_H + 2; // 0..=4 + other
const HYBRID_BLOCK: usize = 4;
const AROMATIC_BLOCK: usize = 2;
const RING_BLOCK: usize = 2;
const CHIRAL_BLOCK: usize = 3;

/// Total one-hot feature width (8 concatenated attribute blocks).
pub const FEATURE_DIM: usize = ELEMENT_BLOCK
    + DEGREE_BLOCK
    + CHARGE_BLOCK
    + H_BLOCK
    + HYBRID_BLOCK
    + AROMATIC_BLOCK
    + RING_BLOCK
    + CHIRAL_BLOCK;

/// One-hot featurize a single atom. Out-of-vocabulary values land in the
/// reserved "other" slot of their block.
pub fn featurize_atom(meta: &AtomMeta) -> Vec<f64> {
    let mut row = vec![0.0; FEATURE_DIM];
    let mut offset = 0;

    let e = ELEMENTS
        .iter()
        .position(|&s| s == meta.element)
        .unwrap_or(ELEMENTS.len());
    row[offset + e] = 1.0;
    offset += ELEMENT_BLOCK;

    let d = if meta.degree <= MAX_DEGREE { meta.degree } else { MAX_DEGREE + 1 };
    row[offset + d] = 1.0;
    offset += DEGREE_BLOCK;

    let c = if (MIN_CHARGE..=MAX_CHARGE).contains(&meta.formal_charge) {
        (meta.formal_charge - MIN_CHARGE) as usize
    } else {
        CHARGE_BLOCK - 1
    };
    row[offset + c] = 1.0;
    offset += CHARGE_BLOCK;

    let h = if meta.h_count <= MAX_H { meta.h_count } else { MAX_H + 1 };
    row[offset + h] = 1.0;
    offset += H_BLOCK;

    let hy = match meta.hybridization {
        Hybridization::Sp => 0,
        Hybridization::Sp2 => 1,
        Hybridization::Sp3 => 2,
        Hybridization::Other => 3,
    };
    row[offset + hy] = 1.0;
    offset += HYBRID_BLOCK;

    row[offset + meta.aromatic as usize] = 1.0;
    offset += AROMATIC_BLOCK;

    row[offset + meta.in_ring as usize] = 1.0;
    offset += RING_BLOCK;

    let ch = match meta.chirality {
        Chirality::None => 0,
        Chirality::Counterclockwise => 1,
        Chirality::Clockwise => 2,
    };
    row[offset + ch] = 1.0;

    row
}

/// Build the N x FEATURE_DIM one-hot matrix from atom metadata.
pub fn featurize(atoms: &[AtomMeta]) -> Vec<f64> {
    let mut out = Vec::with_capacity(atoms.len() * FEATURE_DIM);
    for a in atoms {
        out.extend(featurize_atom(a));
    }
    out
}

impl MolecularGraph {
    pub fn num_atoms(&self) -> usize {
        self.atom_meta.len()
    }

    pub fn features_tensor(&self) -> Tensor {
        Tensor::from_vec(self.num_atoms(), FEATURE_DIM, self.node_features.clone())
    }

    pub fn neighbors(&self, atom: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &(a, b) in &self.edges {
            if a == atom {
                out.push(b);
            } else if b == atom {
                out.push(a);
            }
        }
        out
    }

    /// Relabel atoms: new index of old atom i is perm[i].
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        let n = self.num_atoms();
        assert_eq!(perm.len(), n);
        let mut atom_meta = vec![self.atom_meta[0].clone(); n];
        for (old, &new) in perm.iter().enumerate() {
            atom_meta[new] = self.atom_meta[old].clone();
        }
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(self.edges.len());
        for &(a, b) in &self.edges {
            let (x, y) = (perm[a], perm[b]);
            edges.push((x.min(y), x.max(y)));
        }
        let node_features = featurize(&atom_meta);
        MolecularGraph {
            atom_meta,
            edges,
            bond_orders: self.bond_orders.clone(),
            node_features,
        }
    }
}

struct RawAtom {
    element: String,
    aromatic: bool,
    charge: i32,
    explicit_h: Option<usize>, // Some(..) for bracket atoms
    chirality: Chirality,
    folded_h: usize,
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn eat_digits(&mut self) -> Option<usize> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            Some(self.src[start..self.pos].parse().unwrap())
        }
    }

    fn unknown(&self, symbol: impl Into<String>, pos: usize) -> ChemError {
        ChemError::UnknownAtomSymbol { symbol: symbol.into(), pos }
    }

    /// Parse a bracket atom; the opening '[' has been consumed.
    fn bracket_atom(&mut self) -> Result<RawAtom, ChemError> {
        self.eat_digits(); // isotope, parsed and ignored
        let pos = self.pos;
        let symbol = match self.bump() {
            Some(c) if c.is_ascii_uppercase() => {
                let mut s = c.to_string();
                // two-letter symbols: take a lowercase continuation when the
                // pair forms a known element (e.g. Cl, Br, Na, Fe)
                if let Some(l) = self.peek() {
                    if l.is_ascii_lowercase() {
                        let cand = format!("{s}{l}");
                        if ELEMENTS.contains(&cand.as_str()) {
                            s = cand;
                            self.pos += 1;
                        }
                    }
                }
                (s, false)
            }
            Some(c) if c.is_ascii_lowercase() => {
                // aromatic atom in brackets: c n o p s se as b
                let mut s = c.to_string();
                if (s == "s" && self.peek() == Some('e')) || (s == "a" && self.peek() == Some('s')) {
                    s.push(self.bump().unwrap());
                }
                let upper = capitalize(&s);
                if !matches!(s.as_str(), "b" | "c" | "n" | "o" | "p" | "s" | "se" | "as") {
                    return Err(self.unknown(s, pos));
                }
                (upper, true)
            }
            Some('*') => ("*".to_string(), false),
            other => {
                return Err(self.unknown(other.map(String::from).unwrap_or_default(), pos))
            }
        };
        let (element, aromatic) = symbol;

        let mut chirality = Chirality::None;
        if self.peek() == Some('@') {
            self.pos += 1;
            if self.peek() == Some('@') {
                self.pos += 1;
                chirality = Chirality::Clockwise;
            } else {
                chirality = Chirality::Counterclockwise;
            }
        }

        let mut explicit_h = 0;
        if self.peek() == Some('H') {
            self.pos += 1;
            explicit_h = self.eat_digits().unwrap_or(1);
        }

        let mut charge = 0i32;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let sign = if c == '+' { 1 } else { -1 };
            if let Some(n) = self.eat_digits() {
                charge += sign * n as i32;
            } else {
                charge += sign;
            }
        }

        if self.peek() == Some(':') {
            self.pos += 1;
            self.eat_digits(); // atom class, ignored
        }

        if self.bump() != Some(']') {
            return Err(ChemError::UnbalancedParen);
        }
        Ok(RawAtom {
            element,
            aromatic,
            charge,
            explicit_h: Some(explicit_h),
            chirality,
            folded_h: 0,
        })
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Smallest standard valence that accommodates `bond_sum`, per element.
fn implicit_h(element: &str, bond_sum: f64) -> usize {
    let valences: &[usize] = match element {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => return 0,
    };
    let used = bond_sum.ceil() as usize;
    for &v in valences {
        if v >= used {
            return v - used;
        }
    }
    0
}

/// Mark atoms that lie on a cycle: an atom is in a ring iff it has an
/// incident non-bridge edge. Bridges found by one DFS (Tarjan low-link).
fn ring_atoms(n: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (neighbor, edge id)
    for (eid, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, eid));
        adj[b].push((a, eid));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut is_bridge = vec![false; edges.len()];
    let mut timer = 0usize;
    // iterative DFS to avoid recursion on long chains
    for start in 0..n {
        if disc[start] != usize::MAX {
            continue;
        }
        let mut stack: Vec<(usize, usize, usize)> = vec![(start, usize::MAX, 0)]; // (node, in-edge, next child idx)
        disc[start] = timer;
        low[start] = timer;
        timer += 1;
        while let Some(&mut (v, in_edge, ref mut ci)) = stack.last_mut() {
            if *ci < adj[v].len() {
                let (to, eid) = adj[v][*ci];
                *ci += 1;
                if eid == in_edge {
                    continue;
                }
                if disc[to] == usize::MAX {
                    disc[to] = timer;
                    low[to] = timer;
                    timer += 1;
                    stack.push((to, eid, 0));
                } else {
                    low[v] = low[v].min(disc[to]);
                }
            } else {
                stack.pop();
                if let Some(&mut (parent, _, _)) = stack.last_mut() {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > disc[parent] {
                        is_bridge[in_edge] = true;
                    }
                }
            }
        }
    }
    let mut in_ring = vec![false; n];
    for (eid, &(a, b)) in edges.iter().enumerate() {
        if !is_bridge[eid] {
            in_ring[a] = true;
            in_ring[b] = true;
        }
    }
    in_ring
}

/// Parse a SMILES string into a featurized molecular graph.
pub fn parse_smiles(s: &str) -> Result<MolecularGraph, ChemError> {
    let trimmed = s.trim();
    if trimmed.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    let mut p = Parser {
        chars: trimmed.chars().collect(),
        pos: 0,
        src: trimmed,
    };

    let mut atoms: Vec<RawAtom> = Vec::new();
    let mut bonds: Vec<(usize, usize, BondOrder)> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut branch_stack: Vec<Option<usize>> = Vec::new();
    let mut pending: Option<BondOrder> = None;
    let mut open_rings: std::collections::HashMap<u32, (usize, Option<BondOrder>)> =
        std::collections::HashMap::new();

    let link = |bonds: &mut Vec<(usize, usize, BondOrder)>,
                    atoms: &[RawAtom],
                    a: usize,
                    b: usize,
                    explicit: Option<BondOrder>| {
        let order = explicit.unwrap_or_else(|| {
            if atoms[a].aromatic && atoms[b].aromatic {
                BondOrder::Aromatic
            } else {
                BondOrder::Single
            }
        });
        bonds.push((a.min(b), a.max(b), order));
    };

    while let Some(c) = p.peek() {
        let pos = p.pos;
        match c {
            '[' => {
                p.pos += 1;
                let atom = p.bracket_atom()?;
                atoms.push(atom);
                let id = atoms.len() - 1;
                if let Some(pr) = prev {
                    link(&mut bonds, &atoms, pr, id, pending.take());
                }
                prev = Some(id);
            }
            'A'..='Z' => {
                p.pos += 1;
                let mut sym = c.to_string();
                if let Some(l) = p.peek() {
                    if (c == 'C' && l == 'l') || (c == 'B' && l == 'r') {
                        sym.push(l);
                        p.pos += 1;
                    }
                }
                if !matches!(sym.as_str(), "B" | "C" | "N" | "O" | "P" | "S" | "F" | "Cl" | "Br" | "I") {
                    return Err(p.unknown(sym, pos));
                }
                atoms.push(RawAtom {
                    element: sym,
                    aromatic: false,
                    charge: 0,
                    explicit_h: None,
                    chirality: Chirality::None,
                    folded_h: 0,
                });
                let id = atoms.len() - 1;
                if let Some(pr) = prev {
                    link(&mut bonds, &atoms, pr, id, pending.take());
                }
                prev = Some(id);
            }
            'b' | 'c' | 'n' | 'o' | 'p' | 's' => {
                p.pos += 1;
                atoms.push(RawAtom {
                    element: capitalize(&c.to_string()),
                    aromatic: true,
                    charge: 0,
                    explicit_h: None,
                    chirality: Chirality::None,
                    folded_h: 0,
                });
                let id = atoms.len() - 1;
                if let Some(pr) = prev {
                    link(&mut bonds, &atoms, pr, id, pending.take());
                }
                prev = Some(id);
            }
            '-' => {
                p.pos += 1;
                pending = Some(BondOrder::Single);
            }
            '=' => {
                p.pos += 1;
                pending = Some(BondOrder::Double);
            }
            '#' => {
                p.pos += 1;
                pending = Some(BondOrder::Triple);
            }
            ':' => {
                p.pos += 1;
                pending = Some(BondOrder::Aromatic);
            }
            '/' | '\\' => {
                // stereo bond direction: parsed, treated as single
                p.pos += 1;
                pending = Some(BondOrder::Single);
            }
            '(' => {
                p.pos += 1;
                branch_stack.push(prev);
            }
            ')' => {
                p.pos += 1;
                prev = branch_stack.pop().ok_or(ChemError::UnbalancedParen)?;
            }
            '.' => {
                p.pos += 1;
                prev = None;
                pending = None;
            }
            '0'..='9' | '%' => {
                let num = if c == '%' {
                    p.pos += 1;
                    let mut v = 0u32;
                    for _ in 0..2 {
                        match p.bump() {
                            Some(d) if d.is_ascii_digit() => v = v * 10 + d.to_digit(10).unwrap(),
                            _ => return Err(p.unknown("%", pos)),
                        }
                    }
                    v
                } else {
                    p.pos += 1;
                    c.to_digit(10).unwrap()
                };
                let cur = prev.ok_or_else(|| p.unknown(c.to_string(), pos))?;
                match open_rings.remove(&num) {
                    Some((other, opened_bond)) => {
                        if other == cur {
                            return Err(ChemError::UnmatchedRingBond(num));
                        }
                        let explicit = pending.take().or(opened_bond);
                        link(&mut bonds, &atoms, other, cur, explicit);
                    }
                    None => {
                        open_rings.insert(num, (cur, pending.take()));
                    }
                }
            }
            _ => return Err(p.unknown(c.to_string(), pos)),
        }
    }

    if !branch_stack.is_empty() {
        return Err(ChemError::UnbalancedParen);
    }
    if let Some(&digit) = open_rings.keys().next() {
        return Err(ChemError::UnmatchedRingBond(digit));
    }
    if atoms.is_empty() {
        return Err(ChemError::EmptyInput);
    }

    // fold explicit hydrogen atoms into their neighbor's H count
    let is_h: Vec<bool> = atoms.iter().map(|a| a.element == "H").collect();
    if is_h.iter().any(|&h| !h) {
        for &(a, b, _) in &bonds {
            if is_h[a] && !is_h[b] {
                atoms[b].folded_h += 1;
            } else if is_h[b] && !is_h[a] {
                atoms[a].folded_h += 1;
            }
        }
        let mut remap = vec![usize::MAX; atoms.len()];
        let mut kept = 0;
        for (i, &h) in is_h.iter().enumerate() {
            if !h {
                remap[i] = kept;
                kept += 1;
            }
        }
        atoms = atoms
            .into_iter()
            .zip(&is_h)
            .filter(|(_, &h)| !h)
            .map(|(a, _)| a)
            .collect();
        bonds = bonds
            .into_iter()
            .filter(|&(a, b, _)| !is_h[a] && !is_h[b])
            .map(|(a, b, o)| (remap[a], remap[b], o))
            .collect();
    }

    let n = atoms.len();
    let edges: Vec<(usize, usize)> = bonds.iter().map(|&(a, b, _)| (a, b)).collect();
    let bond_orders: Vec<BondOrder> = bonds.iter().map(|&(_, _, o)| o).collect();
    let in_ring = ring_atoms(n, &edges);

    let mut degree = vec![0usize; n];
    let mut bond_sum = vec![0.0f64; n];
    let mut n_double = vec![0usize; n];
    let mut n_triple = vec![0usize; n];
    for (&(a, b), &o) in edges.iter().zip(&bond_orders) {
        degree[a] += 1;
        degree[b] += 1;
        bond_sum[a] += o.valence();
        bond_sum[b] += o.valence();
        if o == BondOrder::Double {
            n_double[a] += 1;
            n_double[b] += 1;
        }
        if o == BondOrder::Triple {
            n_triple[a] += 1;
            n_triple[b] += 1;
        }
    }

    let atom_meta: Vec<AtomMeta> = atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let h_count = match a.explicit_h {
                Some(h) => h + a.folded_h,
                // folded explicit hydrogens still occupy valence slots
                None => implicit_h(&a.element, bond_sum[i] + a.folded_h as f64) + a.folded_h,
            };
            let hybridization = if n_triple[i] > 0 || n_double[i] >= 2 {
                Hybridization::Sp
            } else if a.aromatic || n_double[i] == 1 {
                Hybridization::Sp2
            } else {
                Hybridization::Sp3
            };
            AtomMeta {
                element: a.element.clone(),
                degree: degree[i],
                formal_charge: a.charge,
                h_count,
                hybridization,
                aromatic: a.aromatic,
                in_ring: in_ring[i],
                chirality: a.chirality,
            }
        })
        .collect();

    let node_features = featurize(&atom_meta);
    Ok(MolecularGraph {
        atom_meta,
        edges,
        bond_orders,
        node_features,
    })
}
