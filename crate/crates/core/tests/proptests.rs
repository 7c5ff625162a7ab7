//! Property-based invariants: attention normalization, similarity bounds and
//! symmetry, permutation invariance, augmentation structure, and oracle
//! equivalence for AUC, nearest-neighbor search, and the split protocols.

use std::collections::HashSet;

use msan_core::chem::{parse_smiles, FEATURE_DIM};
use msan_core::data::{
    auc, sample_negatives, split_inductive, split_transductive, DdiSample,
};
use msan_core::fingerprint::{ecfp, nearest_neighbor, tanimoto, PoolEntry};
use msan_core::gnn::{Backbone, GnnConfig};
use msan_core::model::{
    forward_pair, init_model_params, sd_augment, se_extract, si_similarity, Mode, ModelConfig,
};
use msan_core::params::ParamSet;
use msan_core::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SMILES_POOL: &[&str] = &[
    "C",
    "CC",
    "CCO",
    "CCN",
    "CC(=O)O",
    "c1ccccc1",
    "c1ccncc1",
    "C1CCCCC1",
    "CC(C)C",
    "CCOC",
    "CC(=O)NC",
    "C=CC=C",
    "N#CC",
    "OCC(O)CO",
    "Clc1ccccc1",
    "CS(=O)(=O)N",
    "CC[O-]",
    "C1CC1",
    "c1ccc2ccccc2c1",
    "CCC(N)C(=O)O",
];

fn se_params(m: usize, d: usize, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    params.add_glorot("q0", m, d, &mut rng);
    params.add_glorot("w_q", d, d, &mut rng);
    params.add_glorot("w_k", d, d, &mut rng);
    params.add_glorot("w_v", d, d, &mut rng);
    params.add_glorot("w_o", d, d, &mut rng);
    params
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect())
}

fn random_perm(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

proptest! {
    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1_000_000, n in 1usize..9, m in 1usize..6) {
        let d = 4;
        let params = se_params(m, d, seed);
        let p = params.bind_const();
        let h = random_matrix(n, d, seed ^ 0x9e37);
        let se = se_extract(&h, &p).unwrap();
        for i in 0..m {
            let sum: f64 = (0..n).map(|j| se.attn.get(i, j)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn similarity_entries_bounded(seed in 0u64..1_000_000, m in 1usize..6, d in 1usize..6) {
        let mut o1 = random_matrix(m, d, seed);
        let o2 = random_matrix(m, d, seed ^ 0x51ed);
        // exercise the zero-row path too
        if seed % 3 == 0 && m > 0 {
            o1 = {
                let mut data = o1.data().to_vec();
                data[..d].fill(0.0);
                Tensor::from_vec(m, d, data)
            };
        }
        let s = si_similarity(&o1, &o2).unwrap();
        for &v in s.data() {
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v), "entry {v} out of bounds");
        }
    }

    #[test]
    fn similarity_transpose_symmetry(seed in 0u64..1_000_000, m in 1usize..6, d in 1usize..6) {
        let o1 = random_matrix(m, d, seed);
        let o2 = random_matrix(m, d, seed ^ 0xabcd);
        let s12 = si_similarity(&o1, &o2).unwrap();
        let s21 = si_similarity(&o2, &o1).unwrap();
        for i in 0..m {
            for j in 0..m {
                // bit-exact: same products, same accumulation order
                prop_assert_eq!(s12.get(i, j).to_bits(), s21.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn logit_invariant_to_atom_order(
        seed in 0u64..100_000,
        i1 in 0usize..SMILES_POOL.len(),
        i2 in 0usize..SMILES_POOL.len(),
        backbone_pick in 0usize..3,
    ) {
        let backbone = [Backbone::Gcn, Backbone::Gat, Backbone::Gin][backbone_pick];
        let cfg = ModelConfig {
            gnn: GnnConfig { backbone, layers: 2, dim: 6, heads: 2 },
            patterns: 3,
            num_types: 2,
            feat_dim: FEATURE_DIM,
            use_se_si: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_model_params(&cfg, &mut rng);
        let p = params.bind_const();
        let d1 = parse_smiles(SMILES_POOL[i1]).unwrap();
        let d2 = parse_smiles(SMILES_POOL[i2]).unwrap();
        let d1p = d1.permuted(&random_perm(d1.num_atoms(), seed ^ 1));
        let d2p = d2.permuted(&random_perm(d2.num_atoms(), seed ^ 2));
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let y = forward_pair(&d1, &d2, 1, &cfg, &params, &p, Mode::Eval, &mut r).unwrap().item();
        let yp = forward_pair(&d1p, &d2p, 1, &cfg, &params, &p, Mode::Eval, &mut r).unwrap().item();
        prop_assert!((y - yp).abs() <= 1e-9, "logit {y} vs permuted {yp}");
    }

    #[test]
    fn sd_zeroes_one_substructure_and_keeps_edges(
        seed in 0u64..1_000_000,
        idx in 0usize..SMILES_POOL.len(),
        m in 1usize..5,
    ) {
        let g = parse_smiles(SMILES_POOL[idx]).unwrap();
        let n = g.num_atoms();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assignment: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
        let (aug, chosen) = sd_augment(&g, &assignment, &mut rng);
        prop_assert!(assignment.contains(&chosen));
        prop_assert_eq!(&aug.edges, &g.edges);
        prop_assert_eq!(&aug.bond_orders, &g.bond_orders);
        prop_assert_eq!(aug.num_atoms(), n);
        for (atom, &pat) in assignment.iter().enumerate() {
            let row = &aug.node_features[atom * FEATURE_DIM..(atom + 1) * FEATURE_DIM];
            let orig = &g.node_features[atom * FEATURE_DIM..(atom + 1) * FEATURE_DIM];
            if pat == chosen {
                prop_assert!(row.iter().all(|&x| x == 0.0));
            } else {
                prop_assert_eq!(row, orig);
            }
        }
    }

    #[test]
    fn ecfp_invariant_to_atom_order(
        seed in 0u64..1_000_000,
        idx in 0usize..SMILES_POOL.len(),
    ) {
        let g = parse_smiles(SMILES_POOL[idx]).unwrap();
        let gp = g.permuted(&random_perm(g.num_atoms(), seed));
        prop_assert_eq!(ecfp(&g, 2, 2048), ecfp(&gp, 2, 2048));
    }

    #[test]
    fn auc_matches_bruteforce_oracle(
        scores in prop::collection::vec(0.0f64..1.0, 1..200),
        label_bits in prop::collection::vec(any::<bool>(), 1..200),
        quantize in any::<bool>(),
    ) {
        let n = scores.len().min(label_bits.len());
        // quantized scores exercise the tie path
        let scores: Vec<f64> = scores[..n]
            .iter()
            .map(|&s| if quantize { (s * 4.0).round() / 4.0 } else { s })
            .collect();
        let labels: Vec<u8> = label_bits[..n].iter().map(|&b| b as u8).collect();

        let mut correct = 0.0;
        let mut pairs = 0u64;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        correct += 1.0;
                    } else if scores[i] == scores[j] {
                        correct += 0.5;
                    }
                }
            }
        }
        let expected = if pairs == 0 { None } else { Some(correct / pairs as f64) };
        match (auc(&scores, &labels), expected) {
            (None, None) => {}
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12, "auc {a} vs oracle {b}"),
            (a, b) => prop_assert!(false, "auc {a:?} vs oracle {b:?}"),
        }
    }

    #[test]
    fn nearest_neighbor_matches_exhaustive_scan(
        picks in prop::collection::vec(0usize..SMILES_POOL.len(), 1..100),
        query_pick in 0usize..SMILES_POOL.len(),
    ) {
        let pool: Vec<PoolEntry> = picks
            .iter()
            .enumerate()
            .map(|(i, &pick)| {
                PoolEntry::new(format!("d{:03}", i), parse_smiles(SMILES_POOL[pick]).unwrap())
            })
            .collect();
        let query = ecfp(&parse_smiles(SMILES_POOL[query_pick]).unwrap(), 2, 2048);
        let got = nearest_neighbor(&query, &pool).unwrap();

        let mut best: Option<(&PoolEntry, f64)> = None;
        for e in &pool {
            let sim = tanimoto(&query, &e.fp).unwrap();
            let better = match best {
                None => true,
                Some((b, bs)) => sim > bs || (sim == bs && e.id < b.id),
            };
            if better {
                best = Some((e, sim));
            }
        }
        prop_assert_eq!(&got.id, &best.unwrap().0.id);
    }

    #[test]
    fn transductive_split_partitions_and_stratifies(
        seed in 0u64..1_000_000,
        sizes in prop::collection::vec(1usize..30, 1..5),
    ) {
        let mut samples = Vec::new();
        for (t, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                samples.push(DdiSample {
                    drug1: format!("a{t}_{i}"),
                    drug2: format!("b{t}_{i}"),
                    ddi_type: t,
                    label: (i % 2) as u8,
                });
            }
        }
        let (train, valid, test) = split_transductive(&samples, seed);
        prop_assert_eq!(train.len() + valid.len() + test.len(), samples.len());
        let mut seen: HashSet<&DdiSample> = HashSet::new();
        for s in train.iter().chain(&valid).chain(&test) {
            prop_assert!(seen.insert(s), "duplicate across splits");
        }
        for (t, _) in sizes.iter().enumerate() {
            for label in 0..2u8 {
                let count = |v: &[DdiSample]| {
                    v.iter().filter(|s| s.ddi_type == t && s.label == label).count()
                };
                let n = count(&samples);
                prop_assert_eq!(count(&valid), n * 2 / 10);
                prop_assert_eq!(count(&test), n * 2 / 10);
                prop_assert_eq!(count(&train), n - 2 * (n * 2 / 10));
            }
        }
        // reruns bit-identical
        let (t2, v2, s2) = split_transductive(&samples, seed);
        prop_assert_eq!((train, valid, test), (t2, v2, s2));
    }

    #[test]
    fn inductive_split_ratio_and_partition(
        seed in 0u64..1_000_000,
        n_drugs in 5usize..30,
        pair_density in 1usize..4,
    ) {
        let ids: Vec<String> = (0..n_drugs).map(|i| format!("d{i}")).collect();
        let mut samples = Vec::new();
        for i in 0..n_drugs {
            for j in (i + 1)..n_drugs {
                if (i * 7 + j) % pair_density == 0 {
                    samples.push(DdiSample {
                        drug1: ids[i].clone(),
                        drug2: ids[j].clone(),
                        ddi_type: 0,
                        label: 1,
                    });
                }
            }
        }
        let split = split_inductive(&ids, &samples, seed);
        prop_assert_eq!(split.g_new.len(), n_drugs / 5);
        prop_assert_eq!(split.g_new.len() + split.g_old.len(), n_drugs);
        prop_assert_eq!(
            split.d_train.len() + split.d_s1.len() + split.d_s2.len(),
            samples.len()
        );
        let new_set: HashSet<&str> = split.g_new.iter().map(String::as_str).collect();
        let news = |s: &DdiSample| {
            new_set.contains(s.drug1.as_str()) as usize + new_set.contains(s.drug2.as_str()) as usize
        };
        prop_assert!(split.d_train.iter().all(|s| news(s) == 0));
        prop_assert!(split.d_s1.iter().all(|s| news(s) == 2));
        prop_assert!(split.d_s2.iter().all(|s| news(s) == 1));
        // reruns bit-identical
        let again = split_inductive(&ids, &samples, seed);
        prop_assert_eq!(split.g_new, again.g_new);
        prop_assert_eq!(split.d_train, again.d_train);
    }

    #[test]
    fn negative_sampling_counts_and_determinism(
        seed in 0u64..1_000_000,
        n_drugs in 4usize..20,
    ) {
        let ids: Vec<String> = (0..n_drugs).map(|i| format!("d{i}")).collect();
        let mut positives = Vec::new();
        for i in 0..n_drugs {
            for j in (i + 1)..n_drugs {
                if (i + j) % 3 == 0 {
                    positives.push(DdiSample {
                        drug1: ids[i].clone(),
                        drug2: ids[j].clone(),
                        ddi_type: (i + j) % 2,
                        label: 1,
                    });
                }
            }
        }
        prop_assume!(!positives.is_empty());
        let negatives = sample_negatives(&positives, &ids, seed).unwrap();
        prop_assert_eq!(negatives.len(), positives.len());
        let key = |s: &DdiSample| {
            let (a, b) = if s.drug1 <= s.drug2 {
                (s.drug1.clone(), s.drug2.clone())
            } else {
                (s.drug2.clone(), s.drug1.clone())
            };
            (a, b, s.ddi_type)
        };
        let pos_keys: HashSet<_> = positives.iter().map(&key).collect();
        for n in &negatives {
            prop_assert_eq!(n.label, 0);
            prop_assert!(!pos_keys.contains(&key(n)), "negative collides with a positive");
            prop_assert_ne!(&n.drug1, &n.drug2);
        }
        prop_assert_eq!(&negatives, &sample_negatives(&positives, &ids, seed).unwrap());
    }
}
