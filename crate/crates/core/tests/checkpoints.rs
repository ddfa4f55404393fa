use std::fs;

use diffmf::pipeline::{
    build_model, load_checkpoint, read_checkpoint, save_checkpoint, synthetic_pair, Checkpoint, ModelConfig, Trainer,
};
use diffmf::Error;

fn config() -> ModelConfig {
    ModelConfig { channels: 2, state: 4, crop: 12, batch: 1, lr: 1e-3, seed: 21, ..ModelConfig::tiny() }
}

fn trained(steps: u64) -> Trainer {
    let data = [synthetic_pair(12, 4)];
    let mut t = Trainer::new(build_model(&config()).unwrap());
    t.train(&data, steps, |_, _| Ok(())).unwrap();
    t
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let t = trained(3);
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&t.model, Some(&t.adam), &a).unwrap();
    let (model, adam) = load_checkpoint(&a).unwrap();
    assert_eq!(adam.as_ref(), Some(&t.adam));
    assert_eq!(model.config, t.model.config);
    save_checkpoint(&model, adam.as_ref(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    // Without optimizer state as well.
    save_checkpoint(&model, None, &a).unwrap();
    let (again, none) = load_checkpoint(&a).unwrap();
    assert!(none.is_none());
    save_checkpoint(&again, None, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn corruption_is_an_integrity_error() {
    let t = trained(1);
    let bytes = Checkpoint::capture(&t.model, Some(&t.adam)).to_bytes();

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Integrity(_))));

    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Integrity(_))));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Integrity(_))));

    let mut version = bytes;
    version[8] = 99;
    let msg = Checkpoint::from_bytes(&version).unwrap_err().to_string();
    assert!(msg.contains("version 99"), "{msg}");
}

#[test]
fn a_file_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("garbage.ckpt");
    fs::write(&p, b"not a checkpoint").unwrap();
    let msg = read_checkpoint(&p).unwrap_err().to_string();
    assert!(msg.contains("garbage.ckpt"), "{msg}");
}

#[test]
fn restoring_into_another_shape_names_the_parameter() {
    let t = trained(0);
    let ckpt = Checkpoint::capture(&t.model, None);
    let mut wider = build_model(&ModelConfig { channels: 3, ..config() }).unwrap();
    match ckpt.restore_into(&mut wider) {
        Err(Error::Shape(msg)) => assert!(msg.starts_with("parameter `"), "{msg}"),
        other => panic!("expected a shape error, got {other:?}"),
    }
}
