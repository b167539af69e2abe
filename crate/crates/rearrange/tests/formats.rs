mod common;

use proptest::prelude::*;
use rearrange::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
use rearrange::dataset::{generate_dataset, read_dataset, write_dataset, Dataset};
use rearrange::CliError;
use rearrange_core::lang::{StructureShape, Vocabulary};
use rearrange_core::rng::rng_from_seed;
use rearrange_core::scenegen::GenConfig;
use rearrange_core::tensor::ParamStore;
use rearrange_core::traineval::{train, Control, Network, Task, TrainConfig, TrainState};

fn data_error(e: CliError) -> String {
    match e {
        CliError::Data(m) => m,
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn dataset_round_trip() {
    let data = generate_dataset(3, 100, &GenConfig::default()).unwrap();
    assert_eq!(data.examples.len(), 100);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset(&path, &data).unwrap();
    let back = read_dataset(&path, Some(Vocabulary::standard().hash())).unwrap();
    assert_eq!(back, data);
    assert_eq!(back.to_jsonl().unwrap(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn truncated_file_names_line() {
    let text = generate_dataset(5, 8, &GenConfig::default()).unwrap().to_jsonl().unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // Cut record 5 (line 6) in half.
    let mut cut = lines[..5].join("\n");
    cut.push('\n');
    cut.push_str(&lines[5][..lines[5].len() / 2]);
    let msg = data_error(Dataset::from_jsonl(&cut, None).unwrap_err());
    assert!(msg.starts_with("line 6:"), "{msg}");
    // Dropping whole records breaks the promised count.
    let short = lines[..4].join("\n");
    assert!(data_error(Dataset::from_jsonl(&short, None).unwrap_err()).contains("promises 8"));
}

#[test]
fn wrong_vocabulary_refused() {
    let data = generate_dataset(5, 2, &GenConfig::default()).unwrap();
    let text = data.to_jsonl().unwrap();
    let msg = data_error(Dataset::from_jsonl(&text, Some("0000000000000000")).unwrap_err());
    assert!(msg.contains("line 1") && msg.contains("vocabulary"), "{msg}");
    let forged = text.replacen(&data.header.vocab_hash, "0123456789abcdef", 1);
    assert!(data_error(Dataset::from_jsonl(&forged, None).unwrap_err()).contains("hash"));
}

#[test]
fn structure_filter_and_determinism() {
    let config = GenConfig::default().with_structures(&[StructureShape::Circle, StructureShape::Line]);
    let a = generate_dataset(7, 30, &config).unwrap();
    assert!(a.examples.iter().all(|e| matches!(e.shape(), StructureShape::Circle | StructureShape::Line)));
    let b = generate_dataset(7, 30, &config).unwrap();
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn any_seed_round_trips(seed in any::<u64>()) {
        let data = generate_dataset(seed, 3, &GenConfig::default()).unwrap();
        let back = Dataset::from_jsonl(&data.to_jsonl().unwrap(), None).unwrap();
        prop_assert_eq!(back, data);
    }
}

fn tiny_run(task: Task, steps: u64) -> (Checkpoint, Vec<rearrange_core::scenegen::RearrangementExample>) {
    let data = generate_dataset(1, 12, &GenConfig::default()).unwrap().examples;
    let config = common::tiny_config();
    let mut store = ParamStore::new();
    let net = Network::build(task, &config, &mut store, &mut rng_from_seed(4)).unwrap();
    let tc = TrainConfig { epochs: 100, max_steps: Some(steps), batch_size: 5, lr: 1e-3, dropout: 0.1, seed: 9, ..TrainConfig::default() };
    let mut state = TrainState::new(tc.lr);
    train(&net, &mut store, &mut state, &data, &tc, |_, _, _| Control::Continue).unwrap();
    (Checkpoint { vocab: Vocabulary::standard(), train: tc, net, store, state }, data)
}

fn values(store: &ParamStore) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    store.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.data().to_vec())).collect()
}

#[test]
fn checkpoint_round_trip() {
    for task in Task::ALL {
        let (ck, _) = tiny_run(task, 2);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.task(), task);
        assert_eq!(values(&back.store), values(&ck.store));
        assert_eq!(back.state, ck.state);
        assert_eq!(back.train, ck.train);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}

#[test]
fn damaged_checkpoints_refused() {
    let (ck, _) = tiny_run(Task::Generator, 1);
    let bytes = ck.to_bytes().unwrap();
    for cut in [0, 3, 10, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CliError::Data(_))), "cut at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(data_error(Checkpoint::from_bytes(&extra).unwrap_err()).contains("trailing"));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(data_error(Checkpoint::from_bytes(&magic).unwrap_err()).contains("not a checkpoint"));

    // Same bytes claiming a different network.
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    header["task"] = "selection".into();
    let json = serde_json::to_vec(&header).unwrap();
    let mut forged = bytes[..8].to_vec();
    forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
    forged.extend_from_slice(&json);
    forged.extend_from_slice(&bytes[16 + len..]);
    assert!(data_error(Checkpoint::from_bytes(&forged).unwrap_err()).contains("parameter layout"));
}

#[test]
fn resume_through_file_matches_uninterrupted() {
    let (full, data) = tiny_run(Task::Generator, 6);
    let (half, _) = tiny_run(Task::Generator, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ck");
    save_checkpoint(&path, &half).unwrap();
    let mut ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.state.step, 3);
    let tc = TrainConfig { max_steps: Some(6), ..ck.train.clone() };
    train(&ck.net, &mut ck.store, &mut ck.state, &data, &tc, |_, _, _| Control::Continue).unwrap();
    assert_eq!(ck.state.step, 6);
    assert_eq!(values(&ck.store), values(&full.store));
    assert_eq!(ck.state, full.state);
}
