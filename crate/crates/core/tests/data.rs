use idswap_core::data::{
    load_image, load_image_folder, render, render_with_geometry, save_image, DatasetSize,
    SyntheticDataset, MIN_RENDER_SIZE,
};
use idswap_core::seeded_rng;

fn small(seed: u64) -> SyntheticDataset {
    let size = DatasetSize {
        n_identities: 3,
        train_per_identity: 5,
        held_out_per_identity: 2,
    };
    SyntheticDataset::generate(&size, 32, seed).unwrap()
}

#[test]
fn generation_is_seed_deterministic() {
    assert_eq!(small(4), small(4));
    assert_ne!(small(4), small(5));
    let d = small(4);
    assert_eq!(
        (d.train.len(), d.held_out.len(), d.n_identities()),
        (15, 6, 3)
    );
}

#[test]
fn renders_stay_in_range() {
    let d = small(1);
    for spec in d.train.iter().chain(&d.held_out) {
        let img = d.render(spec).unwrap();
        assert_eq!((img.height(), img.width()), (32, 32));
        assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(img, d.render(spec).unwrap());
    }
    assert!(render(&d.train[0], MIN_RENDER_SIZE - 1).is_err());
}

#[test]
fn attributes_change_the_image_and_keep_the_head() {
    let d = small(2);
    let mut spec = d.train[0].clone();
    spec.pose_yaw = -30.0;
    let (left, geo) = render_with_geometry(&spec, 48).unwrap();
    spec.pose_yaw = 30.0;
    let right = render(&spec, 48).unwrap();
    assert!(left.mean_abs_diff(&right).unwrap() > 0.01);
    assert!(
        geo.features
            .iter()
            .zip(&geo.head)
            .filter(|(f, _)| **f)
            .count()
            > 0
    );
    assert!(geo.head.iter().filter(|h| **h).count() > 48 * 48 / 10);
}

#[test]
fn pairs_respect_the_identity_request() {
    let d = small(3);
    let mut rng = seeded_rng(0);
    for _ in 0..50 {
        let (s, t) = d.sample_pair_specs(true, &mut rng).unwrap();
        assert_eq!(s.identity_id, t.identity_id);
        assert_ne!(s, t);
        let (s, t) = d.sample_pair_specs(false, &mut rng).unwrap();
        assert_ne!(s.identity_id, t.identity_id);
    }
    let one = SyntheticDataset::generate(
        &DatasetSize {
            n_identities: 1,
            train_per_identity: 3,
            held_out_per_identity: 1,
        },
        32,
        0,
    )
    .unwrap();
    assert!(one.sample_pair_specs(false, &mut rng).is_err());
}

#[test]
fn png_round_trip_is_within_quantization() {
    let d = small(6);
    let img = d.render(&d.train[0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("face.png");
    save_image(&img, &path).unwrap();
    let back = load_image(&path, None).unwrap();
    let worst = img
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f32::max);
    assert!(worst <= 1.0 / 255.0 + 1e-6, "{worst}");
    let resized = load_image(&path, Some(16)).unwrap();
    assert_eq!((resized.height(), resized.width()), (16, 16));
}

#[test]
fn image_folder_skips_small_and_broken_files() {
    let d = small(7);
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in d.train.iter().take(6).enumerate() {
        let id_dir = dir.path().join(format!("person_{}", spec.identity_id));
        std::fs::create_dir_all(&id_dir).unwrap();
        save_image(&d.render(spec).unwrap(), &id_dir.join(format!("{i}.png"))).unwrap();
    }
    let tiny = render(&d.train[0], 16).unwrap();
    save_image(&tiny, &dir.path().join("person_0/tiny.png")).unwrap();
    std::fs::write(dir.path().join("person_0/notes.txt"), "not an image").unwrap();
    std::fs::create_dir_all(dir.path().join("empty")).unwrap();

    let folder = load_image_folder(dir.path(), 24, 20).unwrap();
    assert_eq!(folder.labels, ["person_0", "person_1"]);
    assert_eq!(folder.images.len(), 6);
    assert!(folder.images.iter().all(|i| i.image.height() == 24));
    assert!(folder.paths.iter().all(|p| p.extension().unwrap() == "png"));

    let manifest = dir.path().join("manifest.json");
    folder.write_manifest(&manifest).unwrap();
    let entries: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(manifest).unwrap()).unwrap();
    assert_eq!(entries.len(), 6);

    assert!(load_image_folder(&dir.path().join("empty"), 24, 20).is_err());
    assert!(load_image_folder(&dir.path().join("missing"), 24, 20).is_err());
}
