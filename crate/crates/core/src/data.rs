//! Dataset ingestion, negative sampling, transductive/inductive splits,
//! and binary classification metrics.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{parse_smiles, ChemError, MolecularGraph};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row (expected {expected})")]
    MalformedRow {
        path: String,
        line: usize,
        expected: &'static str,
    },
    #[error("{path}:{line}: unknown drug id {id:?}")]
    UnknownDrugId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: invalid SMILES for {id:?}: {source}")]
    BadSmiles {
        path: String,
        line: usize,
        id: String,
        #[source]
        source: ChemError,
    },
    #[error("negative sampling exhausted (pool too small)")]
    SamplingExhausted,
}

/// One (drug1, drug2, type, label) tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DdiSample {
    pub drug1: String,
    pub drug2: String,
    pub ddi_type: usize,
    pub label: u8,
}

/// Drug id -> molecular graph, preserving file order.
#[derive(Debug, Clone)]
pub struct DrugVocab {
    entries: Vec<(String, MolecularGraph)>,
    index: HashMap<String, usize>,
}

impl DrugVocab {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&MolecularGraph> {
        self.index.get(id).map(|&i| &self.entries[i].1)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &MolecularGraph)> {
        self.entries.iter().map(|(id, g)| (id.as_str(), g))
    }

    pub fn from_entries(entries: Vec<(String, MolecularGraph)>) -> DrugVocab {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.clone(), i))
            .collect();
        DrugVocab { entries, index }
    }
}

/// DDI type labels in first-seen order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TypeVocab {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TypeVocab {
    pub fn from_names(names: Vec<String>) -> TypeVocab {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        TypeVocab { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(String::from).collect())
}

/// Load `drug_id,smiles` CSV into a vocabulary of parsed graphs.
pub fn load_drugs(path: &Path) -> Result<DrugVocab, DataError> {
    let lines = read_lines(path)?;
    let pstr = path.display().to_string();
    let mut entries = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if i == 0 && line.trim() == "drug_id,smiles" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, smiles) = line.split_once(',').ok_or(DataError::MalformedRow {
            path: pstr.clone(),
            line: i + 1,
            expected: "drug_id,smiles",
        })?;
        let graph = parse_smiles(smiles.trim()).map_err(|source| DataError::BadSmiles {
            path: pstr.clone(),
            line: i + 1,
            id: id.to_string(),
            source,
        })?;
        entries.push((id.trim().to_string(), graph));
    }
    Ok(DrugVocab::from_entries(entries))
}

/// Load `drug1_id,drug2_id,ddi_type` CSV; all rows become positives and the
/// DDI type vocabulary is built in first-seen order.
pub fn load_pairs(path: &Path, vocab: &DrugVocab) -> Result<(Vec<DdiSample>, TypeVocab), DataError> {
    let lines = read_lines(path)?;
    let pstr = path.display().to_string();
    let mut types = TypeVocab::default();
    let mut samples = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if i == 0 && line.trim() == "drug1_id,drug2_id,ddi_type" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(DataError::MalformedRow {
                path: pstr.clone(),
                line: i + 1,
                expected: "drug1_id,drug2_id,ddi_type",
            });
        }
        for id in &fields[..2] {
            if !vocab.contains(id) {
                return Err(DataError::UnknownDrugId {
                    path: pstr.clone(),
                    line: i + 1,
                    id: id.to_string(),
                });
            }
        }
        samples.push(DdiSample {
            drug1: fields[0].to_string(),
            drug2: fields[1].to_string(),
            ddi_type: types.intern(fields[2]),
            label: 1,
        });
    }
    Ok((samples, types))
}

fn unordered_key(s: &DdiSample) -> (String, String, usize) {
    let (a, b) = if s.drug1 <= s.drug2 {
        (s.drug1.clone(), s.drug2.clone())
    } else {
        (s.drug2.clone(), s.drug1.clone())
    };
    (a, b, s.ddi_type)
}

/// For each positive, corrupt one endpoint (coin flip) with a uniform random
/// drug so the corrupted tuple is not a positive (unordered match); resample
/// up to 100 times, then swap the endpoint choice. Deterministic under seed.
pub fn sample_negatives(
    positives: &[DdiSample],
    drug_ids: &[String],
    seed: u64,
) -> Result<Vec<DdiSample>, DataError> {
    assert!(!positives.is_empty(), "sample_negatives requires positives");
    let positive_set: HashSet<(String, String, usize)> =
        positives.iter().map(unordered_key).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut negatives = Vec::with_capacity(positives.len());
    for pos in positives {
        let first_endpoint = rng.gen_bool(0.5); // true: corrupt drug1
        let mut found = None;
        'endpoints: for swap in [false, true] {
            let corrupt_first = first_endpoint ^ swap;
            for _ in 0..100 {
                let candidate = drug_ids[rng.gen_range(0..drug_ids.len())].clone();
                let neg = if corrupt_first {
                    DdiSample { drug1: candidate, ..pos.clone() }
                } else {
                    DdiSample { drug2: candidate, ..pos.clone() }
                };
                if neg.drug1 != neg.drug2 && !positive_set.contains(&unordered_key(&neg)) {
                    found = Some(DdiSample { label: 0, ..neg });
                    break 'endpoints;
                }
            }
        }
        negatives.push(found.ok_or(DataError::SamplingExhausted)?);
    }
    Ok(negatives)
}

/// Stratified 6:2:2 split within every (ddi_type, label) stratum; rounding
/// remainders go to train.
pub fn split_transductive(
    samples: &[DdiSample],
    seed: u64,
) -> (Vec<DdiSample>, Vec<DdiSample>, Vec<DdiSample>) {
    let mut strata: HashMap<(usize, u8), Vec<DdiSample>> = HashMap::new();
    for s in samples {
        strata.entry((s.ddi_type, s.label)).or_default().push(s.clone());
    }
    let mut keys: Vec<(usize, u8)> = strata.keys().copied().collect();
    keys.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for key in keys {
        let mut stratum = strata.remove(&key).unwrap();
        stratum.shuffle(&mut rng);
        let n = stratum.len();
        let n_valid = n * 2 / 10;
        let n_test = n * 2 / 10;
        let n_train = n - n_valid - n_test;
        for (i, s) in stratum.into_iter().enumerate() {
            if i < n_train {
                train.push(s);
            } else if i < n_train + n_valid {
                valid.push(s);
            } else {
                test.push(s);
            }
        }
    }
    (train, valid, test)
}

#[derive(Debug, Clone)]
pub struct InductiveSplit {
    pub g_new: Vec<String>,
    pub g_old: Vec<String>,
    /// Both drugs in G_old.
    pub d_train: Vec<DdiSample>,
    /// Both drugs in G_new.
    pub d_s1: Vec<DdiSample>,
    /// Exactly one drug in G_new.
    pub d_s2: Vec<DdiSample>,
}

/// Split drugs 1:4 into G_new / G_old, then bucket every pair by how many of
/// its drugs are new. The three buckets partition the input pairs.
pub fn split_inductive(drug_ids: &[String], samples: &[DdiSample], seed: u64) -> InductiveSplit {
    let mut drugs = drug_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    drugs.shuffle(&mut rng);
    let n_new = drugs.len() / 5;
    let g_new: Vec<String> = drugs[..n_new].to_vec();
    let g_old: Vec<String> = drugs[n_new..].to_vec();
    let new_set: HashSet<&str> = g_new.iter().map(String::as_str).collect();
    let (mut d_train, mut d_s1, mut d_s2) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        let n1 = new_set.contains(s.drug1.as_str());
        let n2 = new_set.contains(s.drug2.as_str());
        match (n1, n2) {
            (false, false) => d_train.push(s.clone()),
            (true, true) => d_s1.push(s.clone()),
            _ => d_s2.push(s.clone()),
        }
    }
    InductiveSplit { g_new, g_old, d_train, d_s1, d_s2 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    /// Absent when only one class is present (AUC undefined).
    pub auc: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Threshold-0.5 ACC/F1/P/R plus rank-based AUC with half credit for ties.
pub fn metrics(scores: &[f64], labels: &[u8]) -> Metrics {
    assert_eq!(scores.len(), labels.len());
    assert!(!scores.is_empty(), "metrics require at least one sample");
    let (mut tp, mut fp, mut tn, mut fnc) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= 0.5;
        match (pred, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnc += 1,
        }
    }
    let acc = (tp + tn) as f64 / scores.len() as f64;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fnc > 0 { tp as f64 / (tp + fnc) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics { acc, auc: auc(scores, labels), f1, precision, recall }
}

/// Mann-Whitney AUC via average ranks; ties between scores get 0.5 credit.
/// None when a class is missing.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}
