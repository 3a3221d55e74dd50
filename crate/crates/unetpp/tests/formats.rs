//! Binary tensor, checkpoint, PGM and dataset directory round trips.

use std::fs;
use std::path::Path;

use unetpp::codec::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_tensor, save_checkpoint, save_tensor};
use unetpp::pgm::{load_dataset, read_pgm, save_dataset, Pgm};
use unetpp::Error;
use unetpp_core::data::{extract_patches, gen_synthetic, SynthConfig};
use unetpp_core::train::{train, TrainConfig, Trainer};
use unetpp_core::{ArchSpec, Rng, Tensor, Variant};

fn small_synth(count: usize) -> SynthConfig {
    SynthConfig {
        count,
        height: 16,
        width: 16,
        radius_min: 2.0,
        radius_max: 5.0,
        ..SynthConfig::default()
    }
}

#[test]
fn tensor_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.nnt");
    let t = Tensor::from_vec(&[2, 1], vec![1.5, -0.0]).unwrap();
    save_tensor(&p, &t).unwrap();
    let bytes = fs::read(&p).unwrap();
    let mut expect = b"NNT1".to_vec();
    expect.extend(2u32.to_le_bytes());
    expect.extend(2u64.to_le_bytes());
    expect.extend(1u64.to_le_bytes());
    expect.extend(1.5f64.to_le_bytes());
    expect.extend((-0.0f64).to_le_bytes());
    assert_eq!(bytes, expect);
    let back = load_tensor(&p).unwrap();
    assert_eq!(back.shape(), t.shape());
    assert_eq!(back.data()[1].to_bits(), (-0.0f64).to_bits());
}

#[test]
fn tensor_errors_carry_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.nnt");
    fs::write(&p, b"NNT2").unwrap();
    let e = load_tensor(&p).unwrap_err().to_string();
    assert!(e.contains("byte 0") && e.contains("magic"), "{e}");

    let mut trunc = b"NNT1".to_vec();
    trunc.extend(1u32.to_le_bytes());
    trunc.extend(3u64.to_le_bytes());
    trunc.extend(1.0f64.to_le_bytes());
    fs::write(&p, &trunc).unwrap();
    let e = load_tensor(&p).unwrap_err().to_string();
    assert!(e.contains("byte 16"), "{e}");
}

#[test]
fn random_tensors_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(3);
    for k in 0..20 {
        let rank = 1 + k % 4;
        let shape: Vec<usize> = (0..rank).map(|_| rng.int_range(1, 4)).collect();
        let t = Tensor::randn(&shape, 0.0, 1e3, &mut rng).unwrap();
        let p = dir.path().join(format!("{k}.nnt"));
        save_tensor(&p, &t).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);
    }
}

#[test]
fn checkpoint_resume_is_bitwise() {
    let data = gen_synthetic(&small_synth(9)).unwrap();
    let spec = ArchSpec::new(Variant::UnetPP, 2).with_widths(&[3, 4, 5]).with_deep_supervision(true).with_input(1, 16, 16);
    let cfg = TrainConfig {
        batch_size: 3,
        max_epochs: 4,
        patience: 4,
        ..TrainConfig::default()
    };
    let (full, hist) = train(&spec, &data, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("mid.nnck");
    let mut t = Trainer::new(&spec, &cfg).unwrap();
    t.run_epoch(&data).unwrap();
    save_checkpoint(&p, &t.checkpoint()).unwrap();
    drop(t);
    let loaded = load_checkpoint(&p).unwrap();
    let mut t = Trainer::resume(&loaded, &cfg).unwrap();
    t.run(&data).unwrap();
    assert_eq!(t.history(), hist);
    assert_eq!(encode_checkpoint(&t.checkpoint()), encode_checkpoint(&full));
}

#[test]
fn checkpoint_rejects_corruption() {
    let spec = ArchSpec::new(Variant::Unet, 1).with_widths(&[2, 3]).with_input(1, 8, 8);
    let net = unetpp_core::Network::build(&spec, &Rng::new(0)).unwrap();
    let bytes = encode_checkpoint(&unetpp_core::train::Checkpoint::from_network(&net));
    let p = Path::new("ck");
    assert!(decode_checkpoint(p, &bytes).is_ok());
    assert!(matches!(decode_checkpoint(p, &bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
    let mut v = bytes.clone();
    v[4] = 9;
    assert!(decode_checkpoint(p, &v).unwrap_err().to_string().contains("version"));
    let mut extra = bytes;
    extra.push(0);
    assert!(decode_checkpoint(p, &extra).unwrap_err().to_string().contains("trailing"));
}

#[test]
fn hand_written_pgm_dequantizes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.pgm");
    let mut bytes = b"P5\n# two by two\n2 2\n65535\n".to_vec();
    for v in [0u16, 65535, 32768, 0] {
        bytes.extend(v.to_be_bytes());
    }
    fs::write(&p, bytes).unwrap();
    let got = read_pgm(&p).unwrap().to_unit();
    assert_eq!(got, vec![0.0, 1.0, 32768.0 / 65535.0, 0.0]);
    assert!((got[2] - 0.500_007_629_510_948).abs() < 1e-15);
}

#[test]
fn malformed_pgm_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.pgm");
    fs::write(&p, b"P5\n2 2\n65535\n\x00\x01\x02").unwrap();
    let e = read_pgm(&p).unwrap_err().to_string();
    assert!(e.contains("byte") && e.contains("expected 8 sample bytes"), "{e}");
    fs::write(&p, b"P2\n1 1\n1\n0").unwrap();
    assert!(read_pgm(&p).unwrap_err().to_string().contains("byte 0"));
    fs::write(&p, b"P5\n2 x\n").unwrap();
    assert!(read_pgm(&p).unwrap_err().to_string().contains("height"));
    // 8-bit files are accepted
    fs::write(&p, b"P5 2 1 255\n\x00\xff").unwrap();
    assert_eq!(read_pgm(&p).unwrap().to_unit(), vec![0.0, 1.0]);
}

#[test]
fn pgm_encode_decode() {
    let img = Pgm::from_unit(3, 2, &[0.0, 0.25, 0.5, 0.75, 1.0, 2.0]);
    assert_eq!(img.samples[5], 65535);
    assert_eq!(Pgm::decode(Path::new("x"), &img.encode()).unwrap(), img);
}

#[test]
fn dataset_round_trip() {
    let ds = gen_synthetic(&small_synth(12)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.split, b.split);
        assert_eq!(a.size_bucket, b.size_bucket);
        assert_eq!(a.mask, b.mask);
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }
    // patching commutes with persistence up to quantization
    let p1 = extract_patches(&ds, (8, 8), (4, 4)).unwrap();
    let p2 = extract_patches(&back, (8, 8), (4, 4)).unwrap();
    assert_eq!(p1.len(), p2.len());
    for (a, b) in p1.samples.iter().zip(&p2.samples) {
        assert_eq!((&a.id, a.split, &a.mask), (&b.id, b.split, &b.mask));
    }
}

#[test]
fn manifest_errors() {
    let ds = gen_synthetic(&small_synth(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let m = dir.path().join("manifest.tsv");
    let text = fs::read_to_string(&m).unwrap();
    let bad = text.replacen("\ttrain\t", "\ttraining\t", 1);
    fs::write(&m, &bad).unwrap();
    let e = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(e.contains("unknown split `training`") && e.contains("line"), "{e}");
    fs::write(&m, text.replacen("id\t", "name\t", 1)).unwrap();
    assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("line 1"));
}
