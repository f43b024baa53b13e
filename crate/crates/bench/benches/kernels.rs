use criterion::{criterion_group, criterion_main, Criterion};
use detdiv_bench::{random_batch, random_tensor};
use detdiv_core::arch::{EnsembleModel, InputShape, Model};
use detdiv_core::diversity::{pooled_diversity_node, DiversityConfig, PoolKind};
use detdiv_core::nn::Parameters;
use detdiv_core::train::{forward_loss, OptimizerState, TrainConfig};
use detdiv_core::Graph;
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let x = random_tensor(&[32, 16, 8, 8], 1);
    let w = random_tensor(&[32, 16, 3, 3], 2);
    let b = random_tensor(&[32], 3);
    c.bench_function("conv2d 32x16x8x8 -> 32, forward + backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let xv = g.variable(x.clone());
            let wv = g.variable(w.clone());
            let bv = g.variable(b.clone());
            let y = g.conv2d(xv, wv, bv, 1, 1).unwrap();
            let s = g.sum(y).unwrap();
            g.backward(s).unwrap();
            black_box(g.grad(wv).unwrap()[0])
        })
    });
}

fn diversity(c: &mut Criterion) {
    let maps: Vec<_> = (0..3).map(|l| random_tensor(&[32, 32, 8, 8], 10 + l)).collect();
    for kind in [PoolKind::Spatial, PoolKind::Channel] {
        c.bench_function(&format!("diversity {kind:?}, 3 learners, batch 32"), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let vars: Vec<_> = maps.iter().map(|m| g.variable(m.clone())).collect();
                let d = pooled_diversity_node(&mut g, &vars, kind, &DiversityConfig::default()).unwrap();
                g.backward(d).unwrap();
                black_box(g.value(d).item())
            })
        });
    }
}

fn train_step(c: &mut Criterion) {
    let batch = random_batch(32, 8, 4);
    let mut m = EnsembleModel::new(InputShape::default(), 8, 3, true, 0).unwrap();
    m.add_branch().unwrap();
    m.add_branch().unwrap();
    let mut model = Model::Ensemble(m);
    let cfg = TrainConfig::default();
    let mut opt = OptimizerState::new(1e-4, 0.9).unwrap();
    c.bench_function("ensemble train step, 3 branches, batch 32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let terms = forward_loss(&model, &mut g, batch.images.clone(), &batch.labels, &cfg).unwrap();
            g.backward(terms.loss).unwrap();
            opt.step(&mut model.params_mut(), &g.param_grads()).unwrap();
            black_box(terms.breakdown.total)
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, diversity, train_step
}
criterion_main!(benches);
