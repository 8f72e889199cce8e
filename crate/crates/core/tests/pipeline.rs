use nps_core::fit::{fit_shape, train_space, Checkpoint, FitConfig, SpaceConfig};
use nps_core::layout::PatchLayout;
use nps_core::mesher::mesh_checkpoint;
use nps_core::metrics::{checkpoint_continuity, evaluate};
use nps_core::synth::{ellipsoid_family, sphere_target, two_patch_flat};

fn small() -> FitConfig {
    FitConfig {
        iterations: 60,
        batch_points: 400,
        dim: 8,
        layers: 3,
        hidden: 32,
        warmup_iters: 20,
        fair_decay_start: 30,
        fair_decay_iters: 30,
        boundary_samples: 16,
        seed: 4,
        ..FitConfig::default()
    }
}

#[test]
fn sphere_fit_round_trips_and_meshes_closed() {
    let (layout, samples) = sphere_target(4000, 1);
    let ckpt = fit_shape(&small(), &layout, &samples).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sphere.nps");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes(), ckpt.to_bytes());

    let mesh = mesh_checkpoint(&back, None, 8, 0).unwrap();
    assert!(mesh.is_watertight());
    assert_eq!(mesh.euler_characteristic(), 2);
    assert_eq!(mesh.components(), 1);
    assert!(!mesh.has_nan());

    let gaps = checkpoint_continuity(&back, None, 16).unwrap();
    assert!(gaps.max_gap < 1e-9, "gap {}", gaps.max_gap);
    assert_eq!(gaps.smooth_arcs, 12);

    let m = evaluate(&back, None, &samples, 2000, 3).unwrap();
    assert!(m.p2s.is_finite() && m.hd >= m.p2s && m.nae_degrees <= 90.0);
}

#[test]
fn open_sheet_meshes_with_one_boundary_loop() {
    let (layout, samples) = two_patch_flat(2000, 2);
    let ckpt = fit_shape(&small(), &layout, &samples).unwrap();
    let mesh = mesh_checkpoint(&ckpt, None, 6, 0).unwrap();
    assert!(!mesh.is_watertight());
    assert_eq!(mesh.euler_characteristic(), 1);
    let gaps = checkpoint_continuity(&ckpt, None, 16).unwrap();
    assert!(gaps.max_gap < 1e-9);
}

#[test]
fn shape_space_decodes_every_training_shape() {
    let family = ellipsoid_family(3, 0.8, 1.2, 1500, 3);
    let shapes: Vec<(PatchLayout, _)> = family.iter().map(|(_, l, s)| (l.clone(), s.clone())).collect();
    let cfg = SpaceConfig {
        epochs: 2,
        batch_shapes: 2,
        points_per_shape: 200,
        steps_per_epoch: 4,
        warmup_steps: 3,
        code_dim: 3,
        decoder_hidden: 16,
        dim: 6,
        layers: 3,
        hidden: 16,
        boundary_samples: 8,
        ..SpaceConfig::default()
    };
    let space = train_space(&cfg, &shapes).unwrap();
    assert!(space.is_space());
    assert_eq!(space.codes().unwrap().len(), 3);
    for m in 0..3 {
        let mesh = mesh_checkpoint(&space, Some(m), 4, 0).unwrap();
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(checkpoint_continuity(&space, Some(m), 8).unwrap().max_gap < 1e-9);
    }
    assert!(mesh_checkpoint(&space, Some(3), 4, 0).is_err());
}
