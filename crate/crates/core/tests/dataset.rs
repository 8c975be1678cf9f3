use std::fs;
use std::path::Path;

use despeck::dataset::{
    build_crossval, build_dataset, load_pairs, verify_manifest, BuildOptions, CrossvalOptions, DatasetManifest,
    NoiseModel, NoisySource, Split, MANIFEST_FILE,
};
use despeck::speckle::NoiseSpec;
use despeck::{load_image, save_image, Error, Image, SeedSpec};

fn scene(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = SeedSpec::new(seed).derive(0, 0);
    Image::from_fn(w, h, |x, y| (0.3 + 0.4 * ((x + 2 * y) % 7) as f64 / 7.0 + 0.05 * rng.uniform()).min(1.0)).unwrap()
}

/// `cats` category folders holding `per` images each.
fn source_tree(root: &Path, cats: &[&str], per: usize) {
    for (c, name) in cats.iter().enumerate() {
        let d = root.join(name);
        fs::create_dir_all(&d).unwrap();
        for i in 0..per {
            save_image(&scene((c * 100 + i) as u64, 24, 20), d.join(format!("img{i}.png"))).unwrap();
        }
    }
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn opts(seed: u64, lo: f64, hi: f64) -> BuildOptions {
    BuildOptions {
        sigma_min: lo,
        sigma_max: hi,
        master_seed: seed,
        ..BuildOptions::default()
    }
}

#[test]
fn two_by_two_gets_endpoint_variances() {
    let dir = tempfile::tempdir().unwrap();
    source_tree(&dir.path().join("src"), &["beach", "airport"], 2);
    let out = dir.path().join("out");
    let m = build_dataset(&dir.path().join("src"), &out, &opts(7, 0.1, 0.9)).unwrap();
    assert_eq!(m.entries.len(), 4);
    let cats: Vec<&str> = m.entries.iter().map(|e| e.category.as_str()).collect();
    assert_eq!(cats, ["airport", "airport", "beach", "beach"]);
    for pair in m.entries.chunks(2) {
        assert_eq!(pair[0].noise, NoiseSpec::Uniform { variance: 0.1 });
        assert_eq!(pair[1].noise, NoiseSpec::Uniform { variance: 0.9 });
    }
    assert_eq!(m.entries[2].seed_triple, (7, 1, 0));
    assert_eq!(m.entries[1].clean_path, "airport/img1_clean.png");
    assert!(out.join("beach/img0_noisy.png").is_file());
    assert_eq!(DatasetManifest::load(out.join(MANIFEST_FILE)).unwrap(), m);
}

#[test]
fn gamma_model_assigns_looks() {
    let dir = tempfile::tempdir().unwrap();
    source_tree(&dir.path().join("src"), &["a"], 3);
    let o = BuildOptions {
        model: NoiseModel::Gamma,
        ..opts(1, 0.25, 0.9)
    };
    let m = build_dataset(&dir.path().join("src"), &dir.path().join("out"), &o).unwrap();
    let looks: Vec<NoiseSpec> = m.entries.iter().map(|e| e.noise).collect();
    assert_eq!(
        looks,
        [
            NoiseSpec::Gamma { looks: 4 },
            NoiseSpec::Gamma { looks: 2 },
            NoiseSpec::Gamma { looks: 1 }
        ]
    );
    assert!(verify_manifest(&m, &dir.path().join("out")).unwrap().is_verified());
}

#[test]
fn builds_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    source_tree(&src, &["c1", "c2", "c3"], 5);
    let mut trees = Vec::new();
    for (i, threads) in [1, 1, 8].into_iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = BuildOptions {
            threads,
            ..opts(42, 0.05, 0.9)
        };
        build_dataset(&src, &out, &o).unwrap();
        trees.push(tree_bytes(&out));
    }
    assert_eq!(trees[0].len(), 3 * 5 * 2 + 1);
    assert_eq!(trees[0], trees[1]);
    assert_eq!(trees[0], trees[2]);
}

#[test]
fn verify_detects_corruption_and_wrong_seed() {
    let dir = tempfile::tempdir().unwrap();
    source_tree(&dir.path().join("src"), &["x", "y"], 3);
    let out = dir.path().join("out");
    let m = build_dataset(&dir.path().join("src"), &out, &opts(3, 0.05, 0.5)).unwrap();
    let report = verify_manifest(&m, &out).unwrap();
    assert_eq!(report.checked, 6);
    assert!(report.is_verified());

    let victim = out.join(&m.entries[4].noisy_path);
    let mut bytes = fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&victim, bytes).unwrap();
    let report = verify_manifest(&m, &out).unwrap();
    assert_eq!(report.mismatches.len(), 1);
    assert_eq!(report.mismatches[0].id, m.entries[4].id());

    let mut altered = m.clone();
    altered.header.master_seed = 4;
    assert_eq!(verify_manifest(&altered, &out).unwrap().mismatches.len(), 6);

    fs::remove_file(out.join(&m.entries[0].clean_path)).unwrap();
    assert!(matches!(verify_manifest(&m, &out), Err(Error::NotFound { .. })));
}

#[test]
fn crossval_uses_one_variance() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("sipi");
    fs::create_dir_all(&src).unwrap();
    for i in 0..37 {
        save_image(&scene(i, 16, 16), src.join(format!("{i:02}.png"))).unwrap();
    }
    let out = dir.path().join("cv");
    let m = build_crossval(&src, &out, &CrossvalOptions::default()).unwrap();
    assert_eq!(m.entries.len(), 37);
    assert!(m.entries.iter().all(|e| e.split == Split::Val && e.noise == NoiseSpec::Uniform { variance: 0.05 }));
    assert!(m.entries.iter().all(|e| e.category == "sipi"));
    assert!(verify_manifest(&m, &out).unwrap().is_verified());

    let again = dir.path().join("cv2");
    build_crossval(&src, &again, &CrossvalOptions::default()).unwrap();
    assert_eq!(tree_bytes(&out), tree_bytes(&again));
}

#[test]
fn zero_variance_crossval_copies_clean() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("s");
    fs::create_dir_all(&src).unwrap();
    save_image(&scene(1, 20, 20), src.join("a.png")).unwrap();
    let out = dir.path().join("o");
    let o = CrossvalOptions {
        variance: 0.0,
        ..CrossvalOptions::default()
    };
    let m = build_crossval(&src, &out, &o).unwrap();
    let e = &m.entries[0];
    assert_eq!(
        fs::read(out.join(&e.clean_path)).unwrap(),
        fs::read(out.join(&e.noisy_path)).unwrap()
    );
}

#[test]
fn empty_and_unreadable_sources() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    fs::create_dir_all(src.join("empty")).unwrap();
    assert!(matches!(
        build_dataset(&src, &dir.path().join("o"), &opts(1, 0.1, 0.2)),
        Err(Error::EmptySource { .. })
    ));

    source_tree(&src, &["full"], 2);
    fs::write(src.join("full/broken.png"), b"not an image").unwrap();
    assert!(build_dataset(&src, &dir.path().join("o"), &opts(1, 0.1, 0.2)).is_err());
    let skip = BuildOptions {
        skip_unreadable: true,
        ..opts(1, 0.1, 0.2)
    };
    let m = build_dataset(&src, &dir.path().join("o"), &skip).unwrap();
    assert_eq!(m.entries.len(), 2);
}

#[test]
fn regenerated_pairs_are_unclamped() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src/bright");
    fs::create_dir_all(&src).unwrap();
    save_image(&Image::constant(16, 16, 1.0).unwrap(), src.join("w.png")).unwrap();
    let out = dir.path().join("out");
    let m = build_dataset(&dir.path().join("src"), &out, &opts(5, 0.3, 0.3)).unwrap();
    let regen = load_pairs(&m, &out, Split::Train, NoisySource::Regenerated).unwrap();
    let file = load_pairs(&m, &out, Split::Train, NoisySource::File).unwrap();
    assert!(regen[0].noisy.data().iter().any(|&v| v > 1.0));
    assert!(file[0].noisy.data().iter().all(|&v| v <= 1.0));
    assert_eq!(regen[0].noisy.quantized(), load_image(out.join(&m.entries[0].noisy_path)).unwrap());
    assert!(load_pairs(&m, &out, Split::Val, NoisySource::File).unwrap().is_empty());
}
