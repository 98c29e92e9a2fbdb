use criterion::{criterion_group, criterion_main, Criterion};
use idswap_core::data::{DatasetSize, SyntheticDataset};
use idswap_core::training::{sample_batch, BatchKind};
use idswap_core::{seeded_rng, Embedder, EmbedderArch, TrainConfig, TrainState};

fn setup(image_size: usize, n_id_blocks: usize) -> (TrainState, SyntheticDataset) {
    let cfg = TrainConfig {
        image_size,
        n_id_blocks,
        ..TrainConfig::default()
    };
    let size = DatasetSize {
        n_identities: 4,
        train_per_identity: 8,
        held_out_per_identity: 1,
    };
    let data = SyntheticDataset::generate(&size, image_size, 0).unwrap();
    let embedder = Embedder::new(EmbedderArch::new(cfg.id_dim), &mut seeded_rng(1));
    (TrainState::new(cfg, embedder).unwrap(), data)
}

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (name, size, blocks) in [("32px 1 block", 32, 1), ("64px default", 64, 9)] {
        let (mut state, data) = setup(size, blocks);
        let batch = sample_batch(
            &data,
            state.cfg.batch_size,
            BatchKind::Different,
            &mut seeded_rng(2),
        )
        .unwrap();
        group.bench_function(name, |b| b.iter(|| state.step_on(&batch).unwrap()));
    }
    group.finish();
}

fn swap(c: &mut Criterion) {
    let (state, data) = setup(64, 9);
    let src = data.render(&data.train[0]).unwrap();
    let tgt = data.render(&data.train[9]).unwrap();
    c.bench_function("generate 64px", |b| {
        b.iter(|| {
            state
                .generator
                .generate(&state.embedder, &src, &tgt)
                .unwrap()
        })
    });
}

criterion_group!(benches, steps, swap);
criterion_main!(benches);
