use despeck::dataset::Pair;
use despeck::net::{load_checkpoint, train, write_train_log, ConvNet, TrainConfig};
use despeck::scene::aerial_scene;
use despeck::speckle::{synthesize, NoiseSpec};
use despeck::{Error, SeedSpec};

fn pairs(seed: u64, n: u64, side: usize) -> Vec<Pair> {
    (0..n)
        .map(|i| {
            let clean = aerial_scene(side, side, &mut SeedSpec::new(seed).derive(0, i));
            let noisy = synthesize(&clean, &NoiseSpec::Uniform { variance: 0.05 }, &mut SeedSpec::new(seed).derive(1, i))
                .unwrap();
            Pair { clean, noisy }
        })
        .collect()
}

fn small(steps: usize) -> TrainConfig {
    TrainConfig {
        patch: 16,
        batch: 4,
        steps,
        val_interval: 20,
        master_seed: 9,
        checkpoint: None,
        depth: 3,
        width: 8,
        val_patches: 8,
    }
}

#[test]
fn best_validation_loss_beats_the_first_step() {
    let out = train(&pairs(1, 3, 48), &pairs(2, 2, 32), &small(120)).unwrap();
    assert!(out.best_val_mse < out.log[0].loss, "{} vs {}", out.best_val_mse, out.log[0].loss);
    assert!(out.best_val_psnr > out.noisy_val_psnr);
    assert_eq!(out.log.len(), 120);
    assert!(out.log.iter().all(|r| r.loss.is_finite()));
    let validated: Vec<usize> = out.log.iter().filter(|r| r.val_psnr.is_some()).map(|r| r.step).collect();
    assert_eq!(validated, [20, 40, 60, 80, 100, 120]);
    assert!(validated.contains(&out.best_step));
}

#[test]
fn training_is_reproducible() {
    let (tr, va) = (pairs(3, 2, 40), pairs(4, 1, 32));
    let a = train(&tr, &va, &small(15)).unwrap();
    let b = train(&tr, &va, &small(15)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.best.layers(), b.best.layers());
    let c = train(&tr, &va, &TrainConfig { master_seed: 10, ..small(15) }).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn checkpoint_holds_the_best_network() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.bin");
    let cfg = TrainConfig {
        checkpoint: Some(path.clone()),
        ..small(40)
    };
    let out = train(&pairs(5, 2, 40), &pairs(6, 1, 32), &cfg).unwrap();
    let saved: ConvNet<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(saved.layers(), out.best.layers());
}

#[test]
fn log_csv_leaves_missing_psnr_blank() {
    let out = train(&pairs(7, 1, 32), &pairs(8, 1, 32), &TrainConfig { val_interval: 2, ..small(3) }).unwrap();
    let mut buf = Vec::new();
    write_train_log(&out.log, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,loss,val_psnr");
    assert!(lines[1].starts_with("1,") && lines[1].ends_with(','));
    assert!(lines[2].starts_with("2,") && !lines[2].ends_with(','));
    assert!(lines[3].starts_with("3,") && !lines[3].ends_with(','));
}

#[test]
fn bad_configs_and_small_images_are_rejected() {
    let (tr, va) = (pairs(9, 1, 32), pairs(10, 1, 32));
    for cfg in [
        TrainConfig { patch: 10, ..small(5) },
        TrainConfig { steps: 0, ..small(5) },
        TrainConfig { batch: 0, ..small(5) },
        TrainConfig { depth: 0, ..small(5) },
    ] {
        assert!(matches!(train(&tr, &va, &cfg), Err(Error::InvalidParameter(_))), "{cfg:?}");
    }
    assert!(train(&pairs(11, 1, 12), &va, &small(5)).is_err());
    assert!(train(&[], &va, &small(5)).is_err());
}
