//! Cross-module invariants checked against independent oracles.

use std::collections::BTreeSet;

use optinc::codec::{decode_pam4, encode_pam4, GradientWord, Pam4Frame, Quantizer, SystemConfig};
use optinc::dataset::{
    canonical_preimage, dataset_size, expected_outputs, generate_cascade_datasets, generate_dataset, preprocess,
    quantized_average, reconstruct_mean, GenerationMode,
};
use optinc::harness::preset;
use optinc::photonic::approx::{closest_orthogonal, fit_diagonal};
use optinc::photonic::mesh::haar_orthogonal;
use optinc::onn::{evaluate, Activation, OnnModel, OnnSpec};
use optinc::topo::{ring_reduce, CarryMode, CascadeTopology, OptIncUnit};
use optinc::trainer::{train, Stage};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn system() -> impl Strategy<Value = SystemConfig> {
    (prop::sample::select(vec![2u32, 4, 6, 8, 12, 16]), 1u64..=9, 1usize..=8).prop_filter_map("K must fit M", |(b, n, k)| {
        let m = b as usize / 2;
        (k <= m).then(|| SystemConfig::new(b, n, k, Quantizer::Floor).unwrap())
    })
}

fn words_for(cfg: SystemConfig) -> impl Strategy<Value = (SystemConfig, Vec<GradientWord>)> {
    prop::collection::vec(0..=cfg.max_code(), cfg.servers() as usize)
        .prop_map(move |w| (cfg, w.into_iter().map(GradientWord).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn linear_reconstruction_identity((cfg, words) in system().prop_flat_map(words_for)) {
        let frames: Vec<Pam4Frame> = words.iter().map(|&w| encode_pam4(w, &cfg).unwrap()).collect();
        let x = preprocess(&frames, &cfg).unwrap();
        let (num, den) = reconstruct_mean(&x, &cfg);
        let sum: u64 = words.iter().map(|w| w.0).sum();
        prop_assert_eq!(num as u128 * cfg.servers() as u128, sum as u128 * den as u128);
        // the same identity written out with the group place values
        let shift = 2 * cfg.group() as u32;
        let k = x.len() as u32;
        let direct: u128 = x.numerators.iter().enumerate().map(|(i, &v)| (v as u128) << (shift * (k - 1 - i as u32))).sum();
        prop_assert_eq!(direct, num as u128);
    }

    #[test]
    fn broadcast_is_consistent((cfg, words) in system().prop_flat_map(words_for)) {
        let unit = OptIncUnit::oracle(cfg, CarryMode::None).unwrap();
        let got = unit.aggregate_once(&words).unwrap();
        prop_assert_eq!(got.len(), cfg.servers() as usize);
        let want = quantized_average(&words, &cfg).unwrap();
        prop_assert!(got.iter().all(|&w| w == want));
    }

    #[test]
    fn integer_ring_is_exact(n in 2usize..=16, len in 1usize..40, seed in any::<u64>()) {
        let vectors: Vec<Vec<u64>> = (0..n)
            .map(|i| (0..len).map(|j| (seed.wrapping_mul(i as u64 + 1).wrapping_add(j as u64 * 7919)) % 65536).collect())
            .collect();
        let out = ring_reduce(&vectors).unwrap();
        prop_assert_eq!(out.rounds, 2 * (n - 1));
        for j in 0..len {
            let sum: u64 = vectors.iter().map(|v| v[j]).sum();
            prop_assert!(out.vectors.iter().all(|v| v[j] == sum));
        }
    }

    #[test]
    fn corrected_cascade_is_exact(n in 2u64..=4, b in prop::sample::select(vec![4u32, 6, 8]), seed in any::<u64>()) {
        let cfg = SystemConfig::new(b, n, b as usize / 2, Quantizer::Floor).unwrap();
        let topo = CascadeTopology::oracle(cfg).unwrap();
        let words: Vec<GradientWord> = (0..n * n)
            .map(|i| GradientWord(seed.rotate_left(i as u32 * 5).wrapping_mul(0x9e37_79b9) % (cfg.max_code() + 1)))
            .collect();
        let sum: u64 = words.iter().map(|w| w.0).sum();
        prop_assert_eq!(topo.aggregate(&words, true).unwrap().0, sum / (n * n));
    }
}

#[test]
fn oracle_consistency_on_every_grid_point() {
    for b in [2u32, 4, 6, 8] {
        for n in 1..=4u64 {
            for k in 1..=(b as usize / 2) {
                let cfg = SystemConfig::new(b, n, k, Quantizer::Floor).unwrap();
                let ds = generate_dataset(&cfg, GenerationMode::Exhaustive, 0, 1 << 20).unwrap();
                assert_eq!(ds.len() as u128, dataset_size(&cfg).unwrap(), "B={b} N={n} K={k}");
                for s in &ds.samples {
                    let words = canonical_preimage(&s.inputs, &cfg).unwrap();
                    let frames: Vec<Pam4Frame> = words.iter().map(|&w| encode_pam4(w, &cfg).unwrap()).collect();
                    assert_eq!(preprocess(&frames, &cfg).unwrap(), s.inputs);
                    let t = expected_outputs(&words, &cfg, false).unwrap();
                    let digits: Vec<u8> = t.units.iter().map(|&u| u as u8).collect();
                    let decoded = decode_pam4(&Pam4Frame::new(digits).unwrap(), &cfg).unwrap();
                    assert_eq!(decoded, quantized_average(&words, &cfg).unwrap());
                    assert_eq!(t, s.targets);
                }
            }
        }
    }
}

#[test]
fn carry_identity_on_level1_grid() {
    for (b, n) in [(4u32, 2u64), (4, 3), (6, 4), (8, 4)] {
        let cfg = SystemConfig::new(b, n, b as usize / 2, Quantizer::Floor).unwrap();
        let (l1, l2) = generate_cascade_datasets(&cfg, GenerationMode::Exhaustive, 0, 1 << 22).unwrap();
        for s in &l1.samples {
            let (num, den) = reconstruct_mean(&s.inputs, &cfg);
            assert_eq!(s.targets.den, den);
            assert_eq!(s.targets.word.0 * den + s.targets.carry_num, num);
        }
        for s in &l2.samples {
            let (num, den) = reconstruct_mean(&s.inputs, &cfg);
            assert_eq!(s.targets.word.0, num / den);
        }
    }
}

#[test]
fn model_invariants() {
    let cfg = SystemConfig::new(8, 4, 4, Quantizer::Floor).unwrap();
    let spec = OnnSpec::new(vec![4, 16, 8, 4], Activation::Gelu, [1, 2, 3].into_iter().collect(), &cfg).unwrap();
    let mut model = OnnModel::new(spec, 4).unwrap();
    let before = model.parameter_count();
    model.project().unwrap();
    assert!(model.parameter_count() <= before);
    assert_eq!(model.projection_residual().unwrap(), 0.0);
    for layer in &model.layers {
        for f in layer.factors.as_ref().unwrap() {
            assert!(f.orthogonality_defect() <= 1e-10);
        }
    }
    let mut ds = generate_dataset(&cfg, GenerationMode::Sampled { count: 500 }, 1, 1 << 20).unwrap();
    let a = model.forward(&ds.samples[3].inputs).unwrap();
    let b = model.forward(&ds.samples[3].inputs).unwrap();
    assert_eq!(a.levels.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.levels.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.levels.len(), 4);
    let r1 = evaluate(&model, &ds).unwrap();
    ds.samples.reverse();
    ds.samples.rotate_left(17);
    assert_eq!(evaluate(&model, &ds).unwrap(), r1);
}

#[test]
fn trained_toy_unit_equals_oracle() {
    let rc = preset("toy").unwrap();
    let cfg = rc.system_config().unwrap();
    let ds = generate_dataset(&cfg, GenerationMode::Exhaustive, 0, 1 << 20).unwrap();
    let tc = rc.train_config(&cfg).unwrap();
    let (model, report) = train(&rc.onn_spec(&cfg).unwrap(), &ds, &tc).unwrap();
    assert_eq!(report.final_accuracy, 1.0);

    // monotone sanity: stage-1 loss falls from the first tenth to the last
    let stage1: Vec<f64> = report.epochs.iter().filter(|e| e.stage == Stage::Symbols).map(|e| e.loss).collect();
    let tenth = stage1.len() / 10;
    let median = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(median(&stage1[stage1.len() - tenth..]) < median(&stage1[..tenth]));

    let unit = OptIncUnit::with_model(cfg, model, CarryMode::None).unwrap();
    let oracle = OptIncUnit::oracle(cfg, CarryMode::None).unwrap();
    let sets: Vec<Vec<GradientWord>> = (0..256u64).map(|i| vec![GradientWord(i / 16), GradientWord(i % 16)]).collect();
    assert_eq!(unit.aggregate_many(&sets).unwrap(), oracle.aggregate_many(&sets).unwrap());
    for set in sets.iter().step_by(37) {
        assert_eq!(unit.aggregate_once(set).unwrap(), vec![quantized_average(set, &cfg).unwrap(); 2]);
    }
}

#[test]
fn approximated_layer_sets_follow_presets() {
    let expect: [(&str, u32, u64, &str, BTreeSet<usize>); 4] = [
        ("table1-row1", 8, 4, "4-64-128-256-128-64-4", (1..=6).collect()),
        ("table1-row2", 8, 8, "4-64-128-256-512-256-128-64-4", (2..=7).collect()),
        ("table1-row3", 8, 16, "4-64-128-256-512-1024-512-256-128-64-4", (2..=9).collect()),
        ("table1-row4", 16, 4, "4-64-128-256-512-256-128-64-8", (4..=6).collect()),
    ];
    for (name, b, n, structure, approx) in expect {
        let rc = preset(name).unwrap();
        let cfg = rc.system_config().unwrap();
        let spec = rc.onn_spec(&cfg).unwrap();
        assert_eq!((cfg.bit_width(), cfg.servers()), (b, n), "{name}");
        assert_eq!(spec.structure(), structure);
        assert_eq!(spec.approx_layers, approx);
    }
}

/// With the row scales refit per competitor, Procrustes is not the exact
/// optimum: it maximizes `sum <w_i, q_i>`, while the refit residual rewards
/// `sum <w_i, q_i>^2`. Random competitors almost never win, and never by much.
#[test]
fn procrustes_with_refit_diagonal_is_nearly_optimal() {
    let scaled_residual = |w: &DMatrix<f64>, q: &DMatrix<f64>| {
        let d = fit_diagonal(w, q).unwrap();
        let mut r = w.clone();
        for (i, di) in d.iter().enumerate() {
            for j in 0..w.ncols() {
                r[(i, j)] -= di * q[(i, j)];
            }
        }
        r.norm()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(363);
    let (mut wins, mut worst_gain) = (0usize, 0.0f64);
    for _ in 0..100 {
        let w = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let own = scaled_residual(&w, &closest_orthogonal(&w).unwrap());
        for _ in 0..1000 {
            let r = scaled_residual(&w, &haar_orthogonal(4, &mut rng));
            if r + 1e-12 < own {
                wins += 1;
                worst_gain = worst_gain.max((own - r) / own);
            }
        }
    }
    eprintln!("refit competitors beating Procrustes: {wins}/100000, worst relative gain {worst_gain:.4}");
    assert!(wins <= 10);
    assert!(worst_gain < 0.01);
}
