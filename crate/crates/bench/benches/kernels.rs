use coxvae_bench::{blob_dataset, random_scores, random_table};
use coxvae_core::autodiff::logsumexp;
use coxvae_core::model::cox_nll_with_grad;
use coxvae_core::network::CoxVaeNet;
use coxvae_core::survstats::{concordance_index, cox_nll_oracle};
use coxvae_core::training::{TrainConfig, Trainer};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_logsumexp(c: &mut Criterion) {
    let xs = random_scores(4096, 1);
    c.bench_function("logsumexp/4096", |b| b.iter(|| logsumexp(black_box(&xs)).unwrap()));
}

fn bench_cox(c: &mut Criterion) {
    let mut group = c.benchmark_group("cox_nll");
    for n in [64usize, 512, 4096] {
        let table = random_table(n, 0.17, 200, 2);
        let r = random_scores(n, 3);
        group.bench_with_input(BenchmarkId::new("sorted", n), &n, |b, _| {
            b.iter(|| cox_nll_with_grad(black_box(&r), &table).unwrap())
        });
        if n <= 512 {
            group.bench_with_input(BenchmarkId::new("pairwise", n), &n, |b, _| {
                b.iter(|| cox_nll_oracle(black_box(&r), &table))
            });
        }
    }
    group.finish();
}

fn bench_cindex(c: &mut Criterion) {
    let table = random_table(2000, 0.17, 500, 4);
    let r = random_scores(2000, 5);
    c.bench_function("concordance_index/2000", |b| {
        b.iter(|| concordance_index(&table, black_box(&r)).unwrap())
    });
}

fn bench_network(c: &mut Criterion) {
    let ds = blob_dataset(256);
    let cfg = TrainConfig::default();
    let net = CoxVaeNet::new(cfg.architecture(ds.images.shape()[1]), 0).unwrap();
    c.bench_function("encode_mean/256", |b| b.iter(|| net.encode_mean(black_box(&ds.images)).unwrap()));

    let (train, val) = (ds.subset(&(0..192).collect::<Vec<_>>()), ds.subset(&(192..256).collect::<Vec<_>>()));
    let mut trainer = Trainer::new(&cfg, &train, &val).unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    group.bench_function("batch16", |b| b.iter(|| trainer.train_step().unwrap()));
    group.finish();
}

criterion_group!(benches, bench_logsumexp, bench_cox, bench_cindex, bench_network);
criterion_main!(benches);
