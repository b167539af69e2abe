use alloc::vec::Vec;

use super::*;
use crate::geometry::pose::{distance, frobenius_diff};
use crate::lang::Vocabulary;
use crate::rng::rng_from_seed;
use crate::scenegen::{generate_example, GenConfig, ObjectLibrary};
use crate::tensor::{DropoutRng, ParamStore, Tape};

fn small(vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 32,
        d_obj: 16,
        d_pos: 8,
        d_type: 8,
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        pc_width: 8,
        pc_heads: 2,
        pc_layers: 1,
        ..ModelConfig::new(vocab)
    }
}

fn example(seed: u64) -> RearrangementExample {
    generate_example(seed, &GenConfig::default(), &ObjectLibrary::standard(), &Vocabulary::standard()).unwrap()
}

fn point_rows(enc: &PointEncoder, store: &ParamStore, clouds: &[Vec<[f64; POINT_FEATURES]>]) -> Vec<f64> {
    let mut tape = Tape::new();
    let refs: Vec<&[_]> = clouds.iter().map(|c| c.as_slice()).collect();
    let v = enc.forward(&mut tape, store, &refs).unwrap();
    tape.value(v).to_vec()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn point_encoder_ignores_order_and_duplication() {
    let ex = example(3);
    let input = featurize(&ex, &[0, 1]);
    let config = small(Vocabulary::standard().len());
    let mut store = ParamStore::new();
    let enc = PointEncoder::new(&mut store, "p", &config, &mut rng_from_seed(1));
    let base = point_rows(&enc, &store, &input.clouds);

    let mut shuffled = input.clouds.clone();
    shuffled[0].reverse();
    shuffled[1].rotate_left(5);
    assert!(max_abs_diff(&base, &point_rows(&enc, &store, &shuffled)) < 1e-9);

    let doubled: Vec<_> = input.clouds.iter().map(|c| c.iter().chain(c).copied().collect()).collect();
    assert!(max_abs_diff(&base, &point_rows(&enc, &store, &doubled)) < 1e-9);

    let mut moved = input.clouds.clone();
    for p in &mut moved[0] {
        p[0] += 0.2;
    }
    let out = point_rows(&enc, &store, &moved);
    let d = config.d_obj;
    assert!(max_abs_diff(&base[..d], &out[..d]) > 1e-6);
    assert!(max_abs_diff(&base[d..], &out[d..]) < 1e-12);
}

#[test]
fn sparse_cloud_is_rejected() {
    let config = small(Vocabulary::standard().len());
    let mut store = ParamStore::new();
    let enc = PointEncoder::new(&mut store, "p", &config, &mut rng_from_seed(1));
    let mut tape = Tape::new();
    let cloud = [[0.0; POINT_FEATURES]; MIN_POINTS - 1];
    assert!(enc.forward(&mut tape, &store, &[&cloud[..]]).is_err());
}

#[test]
fn untrained_selection_is_undecided() {
    let ex = example(4);
    let order: Vec<usize> = (0..ex.objects.len()).collect();
    let input = featurize(&ex, &order);
    let config = small(Vocabulary::standard().len());
    let mut store = ParamStore::new();
    let net = SelectionNet::new(&config, &mut store, &mut rng_from_seed(2)).unwrap();
    let out = net.predict(&store, &input).unwrap();
    assert_eq!(out.logits.len(), ex.objects.len());
    assert!(out.probabilities().iter().all(|&p| (p - 0.5).abs() < 1e-12));
}

#[test]
fn config_validation() {
    let mut c = small(10);
    assert!(c.validate().is_ok());
    c.d_obj += 1;
    assert!(c.validate().is_err());
    let mut c = small(10);
    c.dropout = 1.0;
    assert!(c.validate().is_err());
}

fn generator(variant: GeneratorVariant, seed: u64) -> (Generator, ParamStore) {
    let config = small(Vocabulary::standard().len());
    let mut store = ParamStore::new();
    let g = Generator::new(&config, variant, &mut store, &mut rng_from_seed(seed)).unwrap();
    (g, store)
}

#[test]
fn decoder_is_causal() {
    let ex = example(5);
    let (input, _, n) = generator_input(&ex);
    for variant in [GeneratorVariant::Full, GeneratorVariant::NoStructure] {
        let (g, store) = generator(variant, 7);
        let mut prev = generator_targets(&ex, variant, g.config.translation_scale).unwrap();
        let rows = variant.outputs(n);
        let run = |prev: &[[f64; DELTA_DIM]]| {
            let mut tape = Tape::new();
            let enc = g.encode(&mut tape, &store, &input, n, None).unwrap();
            let y = g.decode(&mut tape, &store, &enc, &prev[..rows - 1], rows, None).unwrap();
            tape.value(y).to_vec()
        };
        let before = run(&prev);
        prev[rows - 2][0] += 3.0;
        let after = run(&prev);
        let changed = (rows - 1) * DELTA_DIM;
        assert!(max_abs_diff(&before[..changed], &after[..changed]) == 0.0);
        assert!(max_abs_diff(&before[changed..], &after[changed..]) > 1e-9);
    }
}

#[test]
fn rollout_matches_teacher_forcing_on_its_own_outputs() {
    let ex = example(6);
    let (input, _, n) = generator_input(&ex);
    for variant in [GeneratorVariant::Full, GeneratorVariant::NoEncoder, GeneratorVariant::NoStructure] {
        let (g, store) = generator(variant, 8);
        let r = g.rollout(&store, &input, n, None).unwrap();
        assert_eq!(r.deltas.len(), variant.outputs(n));
        let mut tape = Tape::new();
        let y = g.teacher_forced(&mut tape, &store, &input, n, &r.fed, None).unwrap();
        let flat: Vec<f64> = r.raw.iter().flatten().copied().collect();
        assert!(max_abs_diff(tape.value(y), &flat) < 1e-9);
        for d in &r.deltas {
            let m = d.matrix().unwrap();
            assert!(crate::geometry::pose::check_rotation(&m, 1e-9).is_ok());
        }
    }
}

#[test]
fn sampling_without_dropout_is_deterministic() {
    let ex = example(9);
    let (input, _, n) = generator_input(&ex);
    let (g, store) = generator(GeneratorVariant::Full, 10);
    let s = sample_rearrangements(&g, &store, &input, n, 3, 0.0, 11).unwrap();
    assert!(s.iter().all(|x| x == &s[0]));
    let a = sample_rearrangements(&g, &store, &input, n, 3, 0.3, 11).unwrap();
    let b = sample_rearrangements(&g, &store, &input, n, 3, 0.3, 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
    let drop = DropoutRng::new(1, 0.3);
    assert!(g.rollout(&store, &input, n, Some(&drop)).is_ok());
}

#[test]
fn ground_truth_offsets_reproduce_goals() {
    let ex = example(12);
    let (_, order, n) = generator_input(&ex);
    let initial: Vec<_> = ex.objects.iter().map(|o| o.initial_pose).collect();
    let selected = &order[..n];
    for variant in [GeneratorVariant::Full, GeneratorVariant::NoStructure] {
        let targets = generator_targets(&ex, variant, 10.0).unwrap();
        let deltas: Vec<_> = targets
            .iter()
            .map(|f| {
                let mut f = *f;
                for v in &mut f[..3] {
                    *v /= 10.0;
                }
                crate::scenegen::PoseOffset::from_features(&f)
            })
            .collect();
        let goals = apply_prediction(&initial, selected, &deltas, variant).unwrap();
        for (i, o) in ex.objects.iter().enumerate() {
            let want = o.goal_pose.unwrap_or(o.initial_pose);
            assert!(distance(goals[i].t, want.t) < 1e-9, "{variant:?} object {i}");
            assert!(frobenius_diff(&goals[i].r, &want.r) < 1e-9);
        }
    }
}

#[test]
fn loss_is_finite_and_backpropagates() {
    let ex = example(13);
    let (input, _, n) = generator_input(&ex);
    let (g, mut store) = generator(GeneratorVariant::Full, 14);
    let targets = generator_targets(&ex, GeneratorVariant::Full, g.config.translation_scale).unwrap();
    let mut tape = Tape::new();
    let loss = g.loss(&mut tape, &store, &input, n, &targets, None).unwrap();
    assert!(tape.value(loss)[0].is_finite());
    tape.backward(loss).unwrap();
    tape.accumulate_param_grads(&mut store);
    let nonzero = store.iter().filter(|(_, t)| t.grad().is_some_and(|g| g.iter().any(|&x| x != 0.0))).count();
    assert!(nonzero > store.len() / 2);
}
