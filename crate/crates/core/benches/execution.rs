use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tlsqkt_core::data::{generate_synthetic_literacy, window_sequences, Batch, SyntheticConfig};
use tlsqkt_core::model::{Model, ModelDims, VariantKind};
use tlsqkt_core::parallel::Execution;
use tlsqkt_core::train::{batch_gradients, evaluate};

fn setup(variant: VariantKind) -> (Model, Batch) {
    let data = generate_synthetic_literacy(&SyntheticConfig {
        n_students: 32,
        ..SyntheticConfig::default()
    });
    let windows = window_sequences(&data.sequences, 16);
    let rows: Vec<_> = windows.iter().collect();
    let batch = Batch::from_windows(&rows);
    let dims = ModelDims {
        n_questions: 16,
        n_kcs: 16,
        n_literacy: 6,
        embed_dim: 32,
        hidden_dim: 32,
        model_dim: 32,
        n_heads: 4,
        max_seq_len: 16,
    };
    let model = Model::new(variant, dims, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    (model, batch)
}

fn gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for variant in [VariantKind::Full, VariantKind::DktBaseline] {
        let (model, batch) = setup(variant);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let id = BenchmarkId::new(variant.as_str(), format!("{exec:?}").to_lowercase());
            group.bench_with_input(id, &exec, |b, &exec| {
                b.iter(|| black_box(batch_gradients(&model, &batch, 0.2, 8, (1, 1, 0), exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    let (model, batch) = setup(VariantKind::Full);
    let batches: Vec<Batch> = (0..4).map(|i| batch.rows(i * 8..(i + 1) * 8)).collect();
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}").to_lowercase()), &exec, |b, &exec| {
            b.iter(|| black_box(evaluate(&model, &batches, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, inference);
criterion_main!(benches);
