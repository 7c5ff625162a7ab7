//! ECFP fingerprints, Tanimoto similarity, and the inductive
//! nearest-neighbor replacement protocol.
//!
//! The neighborhood hash is FNV-1a over a fixed byte encoding, so absolute
//! bit positions (and therefore absolute Tanimoto values) are specific to
//! this implementation and will not match any external toolkit. The
//! protocol, not the constants, is the contract.

use thiserror::Error;

use crate::chem::MolecularGraph;
use crate::model::{forward_pair, Mode, ModelConfig};
use crate::params::ParamSet;
use crate::tensor::sigmoid_scalar;

#[derive(Debug, Error, PartialEq)]
pub enum FingerprintError {
    #[error("fingerprint width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("nearest-neighbor pool is empty")]
    EmptyPool,
}

pub const DEFAULT_WIDTH: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
    radius: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn hash_items(items: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(items.len() * 8);
    for v in items {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fnv1a(&bytes)
}

impl Fingerprint {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn set_bit(&mut self, idx: usize) {
        self.words[idx / 64] |= 1 << (idx % 64);
    }

    pub fn get_bit(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn to_hex(&self) -> String {
        self.words.iter().map(|w| format!("{w:016x}")).collect()
    }

    pub fn from_hex(s: &str, radius: usize) -> Option<Fingerprint> {
        if s.len() % 16 != 0 || s.is_empty() {
            return None;
        }
        let words: Option<Vec<u64>> = (0..s.len() / 16)
            .map(|i| u64::from_str_radix(&s[i * 16..(i + 1) * 16], 16).ok())
            .collect();
        let words = words?;
        let width = words.len() * 64;
        Some(Fingerprint { words, width, radius })
    }
}

/// Morgan-style iterative neighborhood hashing. The round-0 invariant covers
/// (element, degree, H count, charge, ring flag, aromatic flag); each later
/// round hashes the atom's own invariant with the sorted list of
/// (bond order, neighbor invariant) pairs. Every invariant from every round
/// sets bit `invariant mod width`. Isolated atoms keep their round-0
/// invariant, so later rounds add no new bits for them.
pub fn ecfp(graph: &MolecularGraph, radius: usize, width: usize) -> Fingerprint {
    assert!(width.is_power_of_two(), "fingerprint width must be a power of two");
    let n = graph.num_atoms();
    let mut fp = Fingerprint {
        words: vec![0; width / 64],
        width,
        radius,
    };

    let mut adj: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    for (&(a, b), &o) in graph.edges.iter().zip(&graph.bond_orders) {
        adj[a].push((b, o.code()));
        adj[b].push((a, o.code()));
    }

    let mut invariants: Vec<u64> = graph
        .atom_meta
        .iter()
        .map(|m| {
            let mut bytes = Vec::new();
            bytes.extend_from_slice(m.element.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(&(m.degree as u64).to_le_bytes());
            bytes.extend_from_slice(&(m.h_count as u64).to_le_bytes());
            bytes.extend_from_slice(&(m.formal_charge as i64).to_le_bytes());
            bytes.push(m.in_ring as u8);
            bytes.push(m.aromatic as u8);
            fnv1a(&bytes)
        })
        .collect();
    for &inv in &invariants {
        fp.set_bit((inv % width as u64) as usize);
    }

    for _ in 1..=radius {
        let mut next = invariants.clone();
        for v in 0..n {
            if adj[v].is_empty() {
                continue;
            }
            let mut items: Vec<u64> = adj[v]
                .iter()
                .map(|&(u, bond)| bond << 56 ^ invariants[u])
                .collect();
            items.sort_unstable();
            items.insert(0, invariants[v]);
            next[v] = hash_items(&items);
        }
        invariants = next;
        for &inv in &invariants {
            fp.set_bit((inv % width as u64) as usize);
        }
    }
    fp
}

/// |a AND b| / |a OR b|; two empty fingerprints are fully similar (1.0).
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.width != b.width {
        return Err(FingerprintError::WidthMismatch(a.width, b.width));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones() as u64;
        union += (x | y).count_ones() as u64;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// One drug of the known-drug pool (`G_old`).
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub id: String,
    pub graph: MolecularGraph,
    pub fp: Fingerprint,
}

impl PoolEntry {
    pub fn new(id: impl Into<String>, graph: MolecularGraph) -> PoolEntry {
        let fp = ecfp(&graph, DEFAULT_RADIUS, DEFAULT_WIDTH);
        PoolEntry { id: id.into(), graph, fp }
    }
}

/// Highest-Tanimoto pool entry; ties broken by lexicographically smallest id.
pub fn nearest_neighbor<'a>(
    fp: &Fingerprint,
    pool: &'a [PoolEntry],
) -> Result<&'a PoolEntry, FingerprintError> {
    if pool.is_empty() {
        return Err(FingerprintError::EmptyPool);
    }
    let mut best: Option<(&PoolEntry, f64)> = None;
    for e in pool {
        let sim = tanimoto(fp, &e.fp)?;
        let better = match best {
            None => true,
            Some((b, bs)) => sim > bs || (sim == bs && e.id < b.id),
        };
        if better {
            best = Some((e, sim));
        }
    }
    Ok(best.unwrap().0)
}

/// Inductive prediction: average the sigmoid scores of the original pair and
/// the pair with each drug replaced by its nearest neighbor in the pool.
/// A drug already present in the pool is its own nearest neighbor.
pub fn inductive_score(
    d1_id: &str,
    g1: &MolecularGraph,
    d2_id: &str,
    g2: &MolecularGraph,
    t: usize,
    cfg: &ModelConfig,
    params: &ParamSet,
    pool: &[PoolEntry],
) -> Result<f64, FingerprintError> {
    let replace = |id: &str, g: &MolecularGraph| -> Result<MolecularGraph, FingerprintError> {
        if pool.iter().any(|e| e.id == id) {
            return Ok(g.clone());
        }
        let fp = ecfp(g, DEFAULT_RADIUS, DEFAULT_WIDTH);
        Ok(nearest_neighbor(&fp, pool)?.graph.clone())
    };
    let r1 = replace(d1_id, g1)?;
    let r2 = replace(d2_id, g2)?;

    let p = params.bind_const();
    let mut rng = rand::rngs::mock::StepRng::new(0, 0); // eval mode draws nothing
    let original = forward_pair(g1, g2, t, cfg, params, &p, Mode::Eval, &mut rng)
        .expect("forward on valid graphs");
    let replaced = forward_pair(&r1, &r2, t, cfg, params, &p, Mode::Eval, &mut rng)
        .expect("forward on valid graphs");
    Ok(0.5 * (sigmoid_scalar(original.item()) + sigmoid_scalar(replaced.item())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn methane_single_bit() {
        let g = parse_smiles("C").unwrap();
        let fp = ecfp(&g, 2, 2048);
        // oracle: one atom, no neighbors, so every round repeats the round-0
        // invariant and exactly one bit is set
        assert_eq!(fp.count_ones(), 1);
    }

    #[test]
    fn isomorphic_relabeling_same_fingerprint() {
        let g = parse_smiles("CCO").unwrap();
        let perm = g.permuted(&[2, 0, 1]);
        assert_eq!(ecfp(&g, 2, 2048), ecfp(&perm, 2, 2048));
    }

    #[test]
    fn ethane_differs_from_methane() {
        // oracle by hand: methane C has degree 0 / 4 H, ethane C has degree
        // 1 / 3 H, so even the round-0 invariants differ
        let methane = ecfp(&parse_smiles("C").unwrap(), 2, 2048);
        let ethane = ecfp(&parse_smiles("CC").unwrap(), 2, 2048);
        assert_ne!(methane, ethane);
    }

    #[test]
    fn tanimoto_identity() {
        let fp = ecfp(&parse_smiles("CCO").unwrap(), 2, 2048);
        assert_eq!(tanimoto(&fp, &fp).unwrap(), 1.0);
    }

    #[test]
    fn tanimoto_disjoint_and_fraction() {
        let mut a = Fingerprint { words: vec![0; 4], width: 256, radius: 2 };
        let mut b = a.clone();
        a.set_bit(1);
        b.set_bit(2);
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.0);
        // |intersection| = 1, |union| = 3
        b.set_bit(1);
        a.set_bit(7);
        assert!((tanimoto(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tanimoto_width_mismatch() {
        let a = Fingerprint { words: vec![0; 4], width: 256, radius: 2 };
        let b = Fingerprint { words: vec![0; 2], width: 128, radius: 2 };
        assert_eq!(tanimoto(&a, &b), Err(FingerprintError::WidthMismatch(256, 128)));
    }

    #[test]
    fn nearest_neighbor_identical_molecule_wins() {
        let pool = vec![
            PoolEntry::new("a", parse_smiles("CCCC").unwrap()),
            PoolEntry::new("b", parse_smiles("CCO").unwrap()),
            PoolEntry::new("c", parse_smiles("c1ccccc1").unwrap()),
        ];
        let fp = ecfp(&parse_smiles("CCO").unwrap(), DEFAULT_RADIUS, DEFAULT_WIDTH);
        assert_eq!(nearest_neighbor(&fp, &pool).unwrap().id, "b");
    }

    #[test]
    fn nearest_neighbor_singleton_pool() {
        let pool = vec![PoolEntry::new("only", parse_smiles("CC").unwrap())];
        let fp = ecfp(&parse_smiles("CCCN").unwrap(), DEFAULT_RADIUS, DEFAULT_WIDTH);
        assert_eq!(nearest_neighbor(&fp, &pool).unwrap().id, "only");
    }

    #[test]
    fn nearest_neighbor_empty_pool() {
        let fp = ecfp(&parse_smiles("C").unwrap(), DEFAULT_RADIUS, DEFAULT_WIDTH);
        assert_eq!(
            nearest_neighbor(&fp, &[]).err(),
            Some(FingerprintError::EmptyPool)
        );
    }

    #[test]
    fn nearest_neighbor_matches_exhaustive_scan() {
        let smiles = ["C", "CC", "CCC", "CCO", "c1ccccc1"];
        let pool: Vec<PoolEntry> = smiles
            .iter()
            .enumerate()
            .map(|(i, s)| PoolEntry::new(format!("d{i}"), parse_smiles(s).unwrap()))
            .collect();
        let query = ecfp(&parse_smiles("CCCO").unwrap(), DEFAULT_RADIUS, DEFAULT_WIDTH);
        let fast = nearest_neighbor(&query, &pool).unwrap();
        let mut best_id = None;
        let mut best = f64::NEG_INFINITY;
        for e in &pool {
            let sim = tanimoto(&query, &e.fp).unwrap();
            if sim > best {
                best = sim;
                best_id = Some(e.id.clone());
            }
        }
        assert_eq!(fast.id, best_id.unwrap());
    }

    #[test]
    fn hex_round_trip() {
        let fp = ecfp(&parse_smiles("CCO").unwrap(), 2, 2048);
        let back = Fingerprint::from_hex(&fp.to_hex(), 2).unwrap();
        assert_eq!(fp, back);
    }
}
