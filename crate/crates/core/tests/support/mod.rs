//! Structural invariants shared by the property tests and the acceptance
//! target. Each check runs `cases` random cases and reports the first
//! counterexample.

use std::sync::Arc;

use mdd_core::corpus::{augment_corpus, shuffle_labels, Features, Utterance};
use mdd_core::encdec::{attend, encode, DecoderState};
use mdd_core::hybrid::hybrid_loss;
use mdd_core::numerics::{LstmState, Matrix};
use mdd_core::{InventoryMode, Model, ModelDims, PhoneInventory, SymbolId};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn phone_names(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set("[a-z]{1,3}", 1..=max).prop_map(|s| s.into_iter().collect())
}

fn tiny_model(phones: usize, seed: u64) -> Model {
    let names: Vec<String> = (0..phones).map(|i| format!("p{i}")).collect();
    let inv = PhoneInventory::build(&names, InventoryMode::PerPhoneAnti).unwrap();
    let dims = ModelDims {
        feat_dim: 3,
        enc_layers: 2,
        enc_hidden: 3,
        subsample_layers: 1,
        att_dim: 3,
        conv_filters: 2,
        conv_width: 3,
        dec_hidden: 3,
        embed_dim: 2,
    };
    Model::new(inv, dims, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn anti_cardinality(cases: u32) -> Result<(), String> {
    run(cases, phone_names(40), |phones| {
        let inv = PhoneInventory::build(&phones, InventoryMode::PerPhoneAnti).unwrap();
        prop_assert_eq!(inv.num_phones(), 2 * phones.len());
        prop_assert_eq!(inv.len(), 2 * phones.len() + 3);
        for p in &phones {
            let anti = inv.id_of(&format!("#{p}")).unwrap();
            prop_assert_eq!(inv.base_id(anti), Some(inv.id_of(p).unwrap()));
        }
        let unk = PhoneInventory::build(&phones, InventoryMode::SingleUnk).unwrap();
        prop_assert_eq!(unk.num_phones(), phones.len() + 1);
        Ok(())
    })
}

pub fn shuffle_exclusion(cases: u32) -> Result<(), String> {
    let strategy = (
        phone_names(10),
        prop::collection::vec(any::<prop::sample::Index>(), 0..30),
        0.0f64..=1.0,
        any::<u64>(),
    );
    run(cases, strategy, |(phones, picks, p, seed)| {
        let inv = PhoneInventory::build(&phones, InventoryMode::PerPhoneAnti).unwrap();
        let transcript: Vec<SymbolId> = picks
            .iter()
            .map(|i| SymbolId(i.index(phones.len()) as u32))
            .collect();
        let out = shuffle_labels(&transcript, p, &inv, seed).unwrap();
        prop_assert_eq!(out.len(), transcript.len());
        for (&src, &dst) in transcript.iter().zip(&out) {
            if dst != src {
                prop_assert!(inv.is_anti(dst));
                prop_assert_ne!(Some(dst), inv.anti_id_of(src).ok());
            }
        }
        Ok(())
    })
}

pub fn augment_doubling(cases: u32) -> Result<(), String> {
    let strategy = (
        prop::collection::vec(1usize..6, 0..12),
        0.0f64..=1.0,
        any::<u64>(),
    );
    run(cases, strategy, |(lengths, p, seed)| {
        let inv = PhoneInventory::build(&["aa", "iy", "s"], InventoryMode::PerPhoneAnti).unwrap();
        let utts: Vec<Utterance> = lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let data: Vec<f32> = (0..n * 2).map(|k| (i * 31 + k) as f32).collect();
                let f = Arc::new(Features::new(n, 2, data).unwrap());
                let canon = (0..n).map(|k| SymbolId((k % 3) as u32)).collect();
                Utterance::new(format!("u{i}"), "f", f, canon, None, &inv).unwrap()
            })
            .collect();
        let out = augment_corpus(&utts, p, &inv, seed).unwrap();
        prop_assert_eq!(out.len(), 2 * utts.len());
        for (i, u) in utts.iter().enumerate() {
            prop_assert_eq!(&out[i].target(), &u.target());
            let copy = &out[utts.len() + i];
            prop_assert!(Arc::ptr_eq(&copy.features, &u.features));
            prop_assert_eq!(copy.features.data(), u.features.data());
            prop_assert_eq!(copy.target().len(), u.canonical.len());
        }
        Ok(())
    })
}

pub fn attention_simplex(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 1usize..24, 1usize..5), |(seed, frames, phones)| {
        let model = tiny_model(phones, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let enc = encode(&Matrix::uniform(frames, 3, 3.0, &mut rng), &model).unwrap();
        let s = enc.len();
        let raw: Vec<f64> = Matrix::uniform(1, s, 1.0, &mut rng)
            .data()
            .iter()
            .map(|v| v.abs() + 1e-3)
            .collect();
        let total: f64 = raw.iter().sum();
        let state = DecoderState {
            lstm: LstmState {
                h: Matrix::uniform(1, 3, 1.0, &mut rng).into_data(),
                c: Matrix::uniform(1, 3, 1.0, &mut rng).into_data(),
            },
            attention: raw.iter().map(|v| v / total).collect(),
        };
        let (context, weights) = attend(&state, &enc, &model).unwrap();
        prop_assert_eq!(weights.len(), s);
        prop_assert!(weights.iter().all(|&w| w >= 0.0));
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(context.len(), model.dims.enc_dim());
        Ok(())
    })
}

pub fn hybrid_affinity(cases: u32) -> Result<(), String> {
    run(cases, (any::<u64>(), 0.0f64..=1.0, 1usize..4), |(seed, lambda, len)| {
        let model = tiny_model(3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let feats = Matrix::uniform(4 * len + 6, 3, 1.0, &mut rng);
        let target: Vec<SymbolId> = (0..len)
            .map(|k| SymbolId(((seed as usize + k) % 6) as u32))
            .collect();
        let ctc = hybrid_loss(&feats, &target, &model, 1.0).unwrap();
        let att = hybrid_loss(&feats, &target, &model, 0.0).unwrap();
        let mixed = hybrid_loss(&feats, &target, &model, lambda).unwrap();
        let expected = lambda * ctc + (1.0 - lambda) * att;
        prop_assert!(
            (mixed - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
            "lambda={} mixed={} expected={}",
            lambda,
            mixed,
            expected
        );
        Ok(())
    })
}
