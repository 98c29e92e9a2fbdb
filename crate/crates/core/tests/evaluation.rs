#[macro_use]
mod common;

use idswap_core::data::{DatasetSize, SyntheticDataset};
use idswap_core::embedder::{load_external_embeddings, separability, write_embeddings};
use idswap_core::evaluation::{
    check_ordering, cross_pairs, fig7_protocol, format_table, id_retrieval, retrieve, AblationRow,
    Bypass,
};
use idswap_core::training::pretrain_for;
use idswap_core::{seeded_rng, Embedder, EmbedderArch, IdentityVector, Preset, TrainConfig};

/// Frozen after the first calibration run: intra 0.965, inter -0.116.
const SEPARABILITY_GATE: f64 = 0.2;

fn unit(v: &[f64]) -> IdentityVector {
    IdentityVector::normalized(v).unwrap()
}

pub fn retrieval_matches_brute_force_oracle() {
    for seed in 0..50 {
        let (generated, gallery) = common::tie_heavy_instance(seed);
        let (ids, pct) = common::retrieval_oracle(&generated, &gallery);
        let records = retrieve(&generated, &gallery).unwrap();
        assert_eq!(
            records.iter().map(|r| r.retrieved_id).collect::<Vec<_>>(),
            ids,
            "instance {seed}"
        );
        assert_eq!(
            id_retrieval(&generated, &gallery).unwrap(),
            pct,
            "instance {seed}"
        );
    }
}

#[test]
fn ties_go_to_the_first_gallery_entry() {
    let gallery = vec![
        (unit(&[1.0, 0.0]), 3),
        (unit(&[2.0, 0.0]), 1),
        (unit(&[0.0, 1.0]), 2),
    ];
    let generated = vec![
        (unit(&[1.0, 0.0]), 1),
        (unit(&[0.0, 5.0]), 2),
        (unit(&[1.0, 1.0]), 3),
    ];
    let records = retrieve(&generated, &gallery).unwrap();
    assert_eq!(
        records.iter().map(|r| r.retrieved_id).collect::<Vec<_>>(),
        [3, 2, 3]
    );
    assert!((id_retrieval(&generated, &gallery).unwrap() - 200.0 / 3.0).abs() < 1e-12);
}

#[test]
fn retrieval_rejects_bad_input() {
    let g = vec![(unit(&[1.0, 0.0]), 0)];
    assert!(retrieve(&g, &[]).is_err());
    assert!(id_retrieval(&[], &g).is_err());
    assert!(retrieve(&[(unit(&[1.0, 0.0, 0.0]), 0)], &g).is_err());
}

#[test]
fn embedding_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("e.bin");
    let records = vec![
        ("a/1".to_string(), unit(&[3.0, 4.0, 0.0])),
        ("b/1".to_string(), unit(&[0.0, 0.0, 1.0])),
    ];
    write_embeddings(&bin, &records).unwrap();
    let back = load_external_embeddings(&bin, Some(3)).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back["a/1"], records[0].1);
    assert!(load_external_embeddings(&bin, Some(4)).is_err());
    assert_eq!(load_external_embeddings(&bin, None).unwrap(), back);

    let csv = dir.path().join("e.csv");
    std::fs::write(&csv, "id,v0,v1\nx,3,4\ny,0,-2\n").unwrap();
    let back = load_external_embeddings(&csv, None).unwrap();
    assert_eq!(back["x"].as_slice(), [0.6, 0.8]);
    assert_eq!(back["y"].as_slice(), [0.0, -1.0]);

    for bad in [
        "id,v0,v1\nx,1\n",
        "id,v1\nx,1\n",
        "id,v0\nx,1\nx,2\n",
        "id,v0\nx,0\n",
        "id,v0\nx,abc\n",
        "",
    ] {
        std::fs::write(&csv, bad).unwrap();
        assert!(load_external_embeddings(&csv, None).is_err(), "{bad:?}");
    }
}

fn tiny_dataset() -> SyntheticDataset {
    let size = DatasetSize {
        n_identities: 3,
        train_per_identity: 2,
        held_out_per_identity: 4,
    };
    SyntheticDataset::generate(&size, 32, 5).unwrap()
}

#[test]
fn cross_pairs_mix_identities() {
    let d = tiny_dataset();
    let pairs = cross_pairs(&d.held_out, 40, &mut seeded_rng(1)).unwrap();
    assert_eq!(pairs.len(), 40);
    assert!(pairs
        .iter()
        .all(|&(s, t)| d.held_out[s].identity_id != d.held_out[t].identity_id));
    assert!(cross_pairs(&d.held_out[..4], 2, &mut seeded_rng(1)).is_err());
}

#[test]
fn bypass_swapper_reconstructs_exactly() {
    let d = tiny_dataset();
    let emb = Embedder::<f32>::new(EmbedderArch::new(8), &mut seeded_rng(2));
    let scores = fig7_protocol(&Bypass, &emb, &d, 6, &mut seeded_rng(3)).unwrap();
    assert_eq!(scores.self_recon_loss, 0.0);
    assert!(scores.cross_id_loss > 0.0);
    assert!(fig7_protocol(&Bypass, &emb, &d, 0, &mut seeded_rng(3)).is_err());
}

fn row(p: Preset, retrieval: f64, attr: f64, recon: f64) -> AblationRow {
    AblationRow {
        preset: p.name().into(),
        id_retrieval: retrieval,
        attr_error: attr,
        cross_id_loss: 0.5,
        self_recon_loss: recon,
    }
}

#[test]
fn ordering_check_uses_its_bands() {
    let rows = vec![
        row(Preset::OFm, 60.0, 1.0, 0.10),
        row(Preset::Full, 70.0, 1.2, 0.12),
        row(Preset::NFm, 80.0, 1.4, 0.20),
    ];
    assert!(check_ordering(&rows).unwrap().all());

    // Inside the bands.
    let rows = vec![
        row(Preset::OFm, 71.5, 1.24, 0.21),
        row(Preset::Full, 70.0, 1.2, 0.12),
        row(Preset::NFm, 80.0, 1.4, 0.20),
    ];
    assert!(check_ordering(&rows).unwrap().all());

    let rows = vec![
        row(Preset::OFm, 75.0, 1.3, 0.30),
        row(Preset::Full, 70.0, 1.2, 0.12),
        row(Preset::NFm, 80.0, 1.4, 0.20),
    ];
    let v = check_ordering(&rows).unwrap();
    assert!(!v.retrieval && !v.attr_error && !v.self_recon);
    assert!(check_ordering(&rows[..2]).is_none());

    let table = format_table(&rows);
    assert!(table.contains("oFM") && table.contains("75.00") && table.contains("self_recon_loss"));
}

#[test]
fn pretrained_embedder_separates_identities() {
    let cfg = TrainConfig::default();
    let d = SyntheticDataset::generate(&DatasetSize::default(), cfg.image_size, cfg.seed).unwrap();
    let (emb, report) = pretrain_for(&cfg, &d.labeled(&d.train).unwrap()).unwrap();
    let s = separability(&emb, &d.labeled(&d.held_out).unwrap()).unwrap();
    assert!(
        report.train_accuracy > 0.9,
        "train accuracy {}",
        report.train_accuracy
    );
    assert!(
        s.margin() >= SEPARABILITY_GATE,
        "intra {} inter {}",
        s.intra,
        s.inter
    );
}

register_tests!(retrieval_matches_brute_force_oracle,);
