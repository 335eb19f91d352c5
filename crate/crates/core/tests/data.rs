mod common;

use std::collections::BTreeSet;

use common::fixtures;
use lungseg::data::{
    load_dataset, read_manifest, synth_dataset, write_dataset, write_manifest, DatasetKind, DatasetSpec,
    Splits,
};
use lungseg::Error;

const PINNED: &str = "688d29c62a0ddf8019d6dbb7d4ac72177757d850c40322396fb00b3dc7055a6a";

fn spec(kind: DatasetKind, root: &std::path::Path, seed: u64) -> DatasetSpec {
    DatasetSpec {
        root: Some(root.to_path_buf()),
        ..DatasetSpec::new(kind, 32, seed)
    }
}

fn ids(ds: &lungseg::data::Dataset) -> BTreeSet<String> {
    ds.samples.iter().map(|s| s.source_id.clone()).collect()
}

fn check_protocol(splits: &Splits, expected: (usize, usize, usize), m: usize) {
    assert_eq!(splits.sizes(), expected);
    let (a, b, c) = (ids(&splits.train), ids(&splits.val), ids(&splits.test));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    assert_eq!(a.len() + b.len() + c.len(), expected.0 + expected.1 + expected.2);
    for ds in [&splits.train, &splits.val, &splits.test] {
        for s in &ds.samples {
            assert_eq!(s.image.dim(), (m, m));
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
            if let Some(mask) = &s.mask {
                assert_eq!(mask.dim(), (m, m));
                assert!(mask.iter().all(|v| *v <= 1));
            }
            assert!(s.class_label.unwrap() < ds.n_classes());
        }
    }
}

fn class_total(splits: &Splits) -> Vec<usize> {
    let mut total = vec![0; splits.train.n_classes()];
    for ds in [&splits.train, &splits.val, &splits.test] {
        for (t, c) in total.iter_mut().zip(ds.class_counts()) {
            *t += c;
        }
    }
    total
}

#[test]
fn published_split_sizes_for_every_collection() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_all(dir.path());
    for (kind, sizes, totals) in [
        (DatasetKind::Mcx, (93, 10, 35), vec![80, 58]),
        (DatasetKind::Scx, (355, 40, 132), vec![248, 279]),
        (DatasetKind::Jcx, (166, 19, 62), vec![93, 154]),
        (DatasetKind::Ccx, (615, 69, 228), vec![421, 337, 154]),
    ] {
        let splits = load_dataset(&spec(kind, dir.path(), 0)).unwrap();
        check_protocol(&splits, sizes, 32);
        assert_eq!(class_total(&splits), totals, "{kind}");
        // a stratified split keeps each class near its share in every part
        let test_counts = splits.test.class_counts();
        for (c, t) in test_counts.iter().zip(&totals) {
            let share = *t as f64 * sizes.2 as f64 / totals.iter().sum::<usize>() as f64;
            assert!((*c as f64 - share).abs() <= 1.0, "{kind}: {test_counts:?}");
        }
    }
}

#[test]
fn left_and_right_masks_are_unioned() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_mcx(dir.path());
    let splits = load_dataset(&spec(DatasetKind::Mcx, dir.path(), 0)).unwrap();
    let mask = splits.train.samples[0].mask.as_ref().unwrap();
    let m = mask.ncols();
    let left: u32 = mask.column(m / 4).iter().map(|v| u32::from(*v)).sum();
    let right: u32 = mask.column(3 * m / 4).iter().map(|v| u32::from(*v)).sum();
    assert!(left > 0 && right > 0);
}

#[test]
fn splits_are_seeded() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_mcx(dir.path());
    let a = load_dataset(&spec(DatasetKind::Mcx, dir.path(), 3)).unwrap();
    let b = load_dataset(&spec(DatasetKind::Mcx, dir.path(), 3)).unwrap();
    let c = load_dataset(&spec(DatasetKind::Mcx, dir.path(), 4)).unwrap();
    assert_eq!(ids(&a.test), ids(&b.test));
    assert_ne!(ids(&a.test), ids(&c.test));
}

#[test]
fn scx_curation_only_keeps_nonempty_masks_and_honours_a_list() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_scx(dir.path());
    let splits = load_dataset(&spec(DatasetKind::Scx, dir.path(), 0)).unwrap();
    for ds in [&splits.train, &splits.val, &splits.test] {
        for s in &ds.samples {
            assert!(s.mask.as_ref().unwrap().iter().any(|v| *v == 1), "{}", s.source_id);
        }
    }
    let mut kept: Vec<String> = [&splits.train, &splits.val, &splits.test]
        .iter()
        .flat_map(|d| d.samples.iter().map(|s| s.source_id.clone()))
        .collect();
    kept.sort();
    let scx = dir.path().join("SCX");
    std::fs::write(scx.join("curated.txt"), kept.join("\n")).unwrap();
    let again = load_dataset(&spec(DatasetKind::Scx, dir.path(), 0)).unwrap();
    assert_eq!(ids(&again.test), ids(&splits.test));

    std::fs::write(scx.join("curated.txt"), kept[..500].join("\n")).unwrap();
    assert!(matches!(
        load_dataset(&spec(DatasetKind::Scx, dir.path(), 0)),
        Err(Error::Data(_))
    ));
}

#[test]
fn manifest_fixes_the_split() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_mcx(dir.path());
    let first = load_dataset(&spec(DatasetKind::Mcx, dir.path(), 1)).unwrap();
    let path = dir.path().join("MCX/manifest.txt");
    write_manifest(&path, &first).unwrap();
    let manifest = read_manifest(&path).unwrap();
    assert_eq!(manifest.len(), 138);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut sorted = lines.clone();
    sorted.sort();
    assert_eq!(lines, sorted);

    // another seed would split differently, the manifest wins
    let fixed = load_dataset(&spec(DatasetKind::Mcx, dir.path(), 99)).unwrap();
    assert_eq!(ids(&fixed.test), ids(&first.test));

    std::fs::write(&path, lines[1..].join("\n")).unwrap();
    assert!(matches!(
        load_dataset(&spec(DatasetKind::Mcx, dir.path(), 1)),
        Err(Error::Data(_))
    ));
}

#[test]
fn missing_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_dataset(&spec(DatasetKind::Mcx, dir.path(), 0)),
        Err(Error::Io { .. } | Error::Data(_))
    ));
    fixtures::write_mcx(dir.path());
    let masks = dir.path().join("MCX/masks");
    std::fs::remove_file(masks.join("left/MCUCXR_0005_0.png")).unwrap();
    std::fs::remove_file(masks.join("right/MCUCXR_0005_0.png")).unwrap();
    assert!(matches!(
        load_dataset(&spec(DatasetKind::Mcx, dir.path(), 0)),
        Err(Error::Data(_))
    ));
    let no_root = DatasetSpec {
        root: None,
        ..DatasetSpec::new(DatasetKind::Jcx, 32, 0)
    };
    assert!(load_dataset(&no_root).is_err());
}

#[test]
fn corrupt_image_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_mcx(dir.path());
    std::fs::write(dir.path().join("MCX/images/MCUCXR_0001_0.png"), b"not a png").unwrap();
    assert!(load_dataset(&spec(DatasetKind::Mcx, dir.path(), 0)).is_err());
}

#[test]
fn class_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fixtures::write_mcx(dir.path());
    std::fs::remove_file(dir.path().join("MCX/images/MCUCXR_0001_0.png")).unwrap();
    assert!(matches!(
        load_dataset(&spec(DatasetKind::Mcx, dir.path(), 0)),
        Err(Error::Data(_))
    ));
}

#[test]
fn synthetic_splits_and_hash_stability() {
    let s = DatasetSpec {
        synth_count: 200,
        ..DatasetSpec::new(DatasetKind::Synth, 32, 5)
    };
    let a = load_dataset(&s).unwrap();
    let b = load_dataset(&s).unwrap();
    check_protocol(&a, (135, 15, 50), 32);
    assert_eq!(a.train.content_hash(), b.train.content_hash());
    assert_eq!(a.test.content_hash(), b.test.content_hash());
    let other = load_dataset(&DatasetSpec { seed: 6, ..s }).unwrap();
    assert_ne!(a.train.content_hash(), other.train.content_hash());

    // pinned digest guards against silent generator changes
    assert_eq!(synth_dataset(4, 0, 32).unwrap().content_hash(), PINNED);
}

#[test]
fn synthetic_data_round_trips_through_the_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = synth_dataset(138, 2, 32).unwrap();
    // relabel to the MCX vocabulary and counts
    ds.class_names = vec!["normal".into(), "TB".into()];
    for (i, s) in ds.samples.iter_mut().enumerate() {
        s.class_label = Some(usize::from(i >= 80));
        s.source_id = format!("case{i:03}");
    }
    let mcx = dir.path().join("MCX");
    write_dataset(&ds, &mcx).unwrap();
    let splits = load_dataset(&spec(DatasetKind::Mcx, dir.path(), 0)).unwrap();
    check_protocol(&splits, (93, 10, 35), 32);
    let original: std::collections::BTreeMap<_, _> =
        ds.samples.iter().map(|s| (s.source_id.clone(), s)).collect();
    for s in &splits.test.samples {
        let o = original[&s.source_id];
        assert_eq!(s.mask, o.mask);
        assert_eq!(s.class_label, o.class_label);
    }
}
