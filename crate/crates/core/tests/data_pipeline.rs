mod common;

use common::*;
use hlb::data::netpbm::{decode_mask, decode_ppm, decode_weight_map, encode_mask, encode_ppm, encode_weight_map};
use hlb::data::{
    apply_augmentation, augment, batch_iter, gen_synthetic_portrait, generate_dataset, load_image, load_mask,
    save_image, save_mask, Dataset, DatasetManifest, GenOptions, Provenance, Split, MAX_FOREGROUND,
    MIN_FOREGROUND,
};
use hlb::loss::{boundary_weight_map, miou, WeightMapMode};
use hlb::Error;
use std::path::Path;

#[test]
fn foreground_fraction_stays_in_range() {
    for seed in 0..1000 {
        let r = gen_synthetic_portrait(seed, 32).unwrap();
        let f = r.mask.foreground_fraction();
        assert!((MIN_FOREGROUND..=MAX_FOREGROUND).contains(&f), "seed {seed}: {f}");
    }
}

#[test]
fn generated_samples_meet_the_model_input_contract() {
    for seed in 0..20 {
        let r = gen_synthetic_portrait(seed, 64).unwrap();
        assert_eq!(r.image.shape(), [1, 3, 64, 64]);
        assert_eq!(r.mask.dims(), (64, 64));
        assert!(r.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(r.weights.weights(), boundary_weight_map(&r.mask).weights());
    }
    let a = gen_synthetic_portrait(77, 48).unwrap();
    let b = gen_synthetic_portrait(77, 48).unwrap();
    assert_eq!(a.image, b.image);
    assert!(matches!(gen_synthetic_portrait(0, 36), Err(Error::Config(_))));
}

#[test]
fn augmentation_is_equivariant_and_reproducible() {
    let base = gen_synthetic_portrait(5, 32).unwrap();
    let flip = Provenance { flipped: true, ..Provenance::identity() };
    let f = apply_augmentation(&base, flip);
    assert_eq!(boundary_weight_map(&f.mask).weights(), f.weights.weights());
    assert_eq!(miou(&[f.mask.clone()], &[f.mask.clone()], 2).unwrap(), 100.0);
    assert_eq!(apply_augmentation(&f, flip).image, base.image);

    let mut r1 = rng(1);
    let mut r2 = rng(1);
    for _ in 0..10 {
        let a = augment(&base, &mut r1);
        let b = augment(&base, &mut r2);
        assert_eq!(a.image, b.image);
        assert_eq!(a.provenance, b.provenance);
        assert_eq!(apply_augmentation(&base, a.provenance).image, a.image);
        // photometric jitter leaves the mask alone
        assert_eq!(a.mask, if a.provenance.flipped { base.mask.flip_horizontal() } else { base.mask.clone() });
    }
    let p = Provenance { flipped: false, contrast: 1.2, brightness: 0.8 };
    let j = apply_augmentation(&base, p);
    for (&v, &u) in j.image.data().iter().zip(base.image.data()) {
        assert!((v - (1.2 * (u - 0.5) + 0.5 - 0.2).clamp(0.0, 1.0)).abs() < 1e-15);
    }
}

#[test]
fn netpbm_round_trips_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let r = gen_synthetic_portrait(3, 40).unwrap();
    let (ip, mp) = (dir.path().join("a/i.ppm"), dir.path().join("a/m.pgm"));
    save_image(&ip, &r.image).unwrap();
    save_mask(&mp, &r.mask).unwrap();
    assert_eq!(load_mask(&mp).unwrap(), r.mask);
    assert!(load_image(&ip).unwrap().max_abs_diff(&r.image) <= 1.0 / 255.0);

    let p = Path::new("mem");
    let mut wide = b"P5\n2 2\n65535\n".to_vec();
    wide.extend([0u8; 8]);
    assert!(matches!(decode_mask(&wide, p), Err(Error::Format { .. })));
    let ppm = encode_ppm(&r.image).unwrap();
    assert!(decode_ppm(&ppm[..ppm.len() - 1], p).is_err());
    assert!(decode_ppm(&encode_mask(&r.mask), p).is_err());
    assert!(decode_mask(b"P5\n18446744073709551616 1\n255\n", p).is_err());
    assert!(decode_mask(b"P2\n1 1\n255\n0", p).is_err());
    let wm = encode_weight_map(&r.weights);
    assert!(decode_weight_map(&wm[..wm.len() - 4], p).is_err());
    assert!(matches!(load_mask(&dir.path().join("missing.pgm")), Err(Error::Io { .. })));
}

#[test]
fn dataset_layout_manifests_and_batches() {
    let dir = tempfile::tempdir().unwrap();
    let opts = GenOptions { seed: 4, size: 32, train: 10, test: 3 };
    let (train, test) = generate_dataset(dir.path(), &opts).unwrap();
    for id in &train.ids {
        assert!(dir.path().join("train/img").join(format!("{id}.ppm")).is_file());
        assert!(dir.path().join("train/mask").join(format!("{id}.pgm")).is_file());
        assert!(dir.path().join("train/wmap").join(format!("{id}.wmap")).is_file());
    }
    let text = std::fs::read_to_string(dir.path().join("train/manifest.txt")).unwrap();
    assert!(text.starts_with("# seed=4\n# size=32\n"));
    assert!(test.ids.iter().all(|id| !train.ids.contains(id)));

    let ds = Dataset::load(&train, WeightMapMode::Inverted).unwrap();
    let sizes: Vec<usize> = batch_iter(&ds, 4, Some(3), true).unwrap().map(|b| b.unwrap().len()).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    let order = |seed| -> Vec<String> { batch_iter(&ds, 4, Some(seed), true).unwrap().flat_map(|b| b.unwrap().ids).collect() };
    assert_eq!(order(3), order(3));
    let mut ids = order(3);
    ids.sort();
    let mut want = train.ids.clone();
    want.sort();
    assert_eq!(ids, want);
    // regenerating from the same seed reproduces the files exactly
    let again = tempfile::tempdir().unwrap();
    generate_dataset(again.path(), &opts).unwrap();
    for id in &train.ids {
        let rel = format!("train/img/{id}.ppm");
        assert_eq!(std::fs::read(dir.path().join(&rel)).unwrap(), std::fs::read(again.path().join(&rel)).unwrap());
    }
    // weight maps in other modes are recomputed from the masks
    let lit = Dataset::load(&train, WeightMapMode::Literal).unwrap();
    assert_ne!(lit.samples[0].weights.weights(), ds.samples[0].weights.weights());

    for id in &train.ids[2..4] {
        std::fs::remove_file(train.image_path(id)).unwrap();
    }
    match Dataset::load(&DatasetManifest::load(dir.path(), Split::Train).unwrap(), WeightMapMode::Inverted) {
        Err(Error::MissingSamples(m)) => assert_eq!(m, train.ids[2..4].to_vec()),
        other => panic!("expected missing samples, got {other:?}"),
    }
}

#[test]
fn reserved_resize_policy_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("test")).unwrap();
    std::fs::write(dir.path().join("test/manifest.txt"), "# resize=letterbox\na\n").unwrap();
    assert!(matches!(DatasetManifest::load(dir.path(), Split::Test), Err(Error::Config(_))));
}
