//! File formats and reproducibility through the public API.

use std::io::Write;

use mupp_core::algebra::preset;
use mupp_core::data::{encode_cifar10_records, load_cifar10_binary, Split};
use mupp_core::lab::{run_width_sweep, SweepConfig};
use mupp_core::net::checkpoint;
use mupp_core::net::{Activation, Dims, InitSpec, Network};

const RECORD: usize = 3073;

fn records(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for (r, &y) in labels.iter().enumerate() {
        out.push(y);
        out.extend((0..3072).map(|i| ((i * 7 + r * 31) % 256) as u8));
    }
    out
}

#[test]
fn cifar_files_decode_and_reencode_to_the_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = records(&[3, 9, 0]);
    let b = records(&[1]);
    let (pa, pb) = (dir.path().join("data_batch_1.bin"), dir.path().join("data_batch_2.bin"));
    std::fs::write(&pa, &a).unwrap();
    std::fs::write(&pb, &b).unwrap();
    let ds = load_cifar10_binary(&[&pa, &pb], Split::Train).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.labels, vec![3, 9, 0, 1]);
    assert_eq!(ds.d_in(), 3072);
    // Channel-major layout: entry 1024 is the first green pixel of record 0.
    assert_eq!(ds.inputs[[0, 1024]], a[1 + 1024] as f64 / 255.0);
    let mut both = a.clone();
    both.extend(&b);
    assert_eq!(encode_cifar10_records(&ds).unwrap(), both);
}

#[test]
fn truncated_or_empty_cifar_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.bin");
    let mut bytes = records(&[2, 4]);
    bytes.truncate(2 * RECORD - 5);
    std::fs::write(&p, &bytes).unwrap();
    assert!(load_cifar10_binary(&[&p], Split::Test).is_err());
    std::fs::File::create(&p).unwrap().flush().unwrap();
    assert!(load_cifar10_binary(&[&p], Split::Test).is_err());
    let mut bad = records(&[1]);
    bad[0] = 10;
    std::fs::write(&p, &bad).unwrap();
    assert!(load_cifar10_binary(&[&p], Split::Test).is_err());
}

#[test]
fn checkpoints_survive_a_file_round_trip() {
    let p = preset("a-mupp", 2).unwrap();
    let d = Dims::new(6, 24, 2, 3).unwrap();
    let net = Network::init(d, Activation::SigmaGelu(0.05), &InitSpec::bcd(&p, &d).unwrap(), 17).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    checkpoint::save(&net, std::fs::File::create(&path).unwrap()).unwrap();
    let back = checkpoint::load(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.weights(), net.weights());
    assert_eq!(back.multipliers(), net.multipliers());
    assert_eq!(back.activation(), net.activation());
    assert_eq!(checkpoint::encode(&back), checkpoint::encode(&net));
}

#[test]
fn sweep_csv_is_byte_identical_across_runs_and_worker_counts() {
    let cfg = SweepConfig {
        widths: vec![8, 16, 32],
        seeds: 2,
        steps: 4,
        preset: Some("mupp".into()),
        ..SweepConfig::default()
    };
    let csv = |jobs: usize| {
        let mut buf = Vec::new();
        run_width_sweep(&cfg, jobs).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    let first = csv(1);
    assert!(!first.is_empty());
    assert_eq!(first, csv(1));
    assert_eq!(first, csv(3));
}
