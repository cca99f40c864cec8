use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ddgcn::Tape;
use ddgcn_bench::{cagc, features, small_model, stse};

fn bench_cagc(c: &mut Criterion) {
    let f = cagc(32);
    let x = features(16, 32);
    c.bench_function("cagc_forward_backward_t16_c32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let y = f.cagc.forward(&mut tape, &f.store, &f.graph, xv).unwrap();
            let s = tape.sum_all(y).unwrap();
            black_box(tape.backward(s).unwrap());
        })
    });
}

fn bench_stse(c: &mut Criterion) {
    let (store, layer) = stse(32);
    let x = features(16, 32);
    c.bench_function("stse_forward_backward_t16_c32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let y = layer.forward(&mut tape, &store, xv).unwrap();
            let s = tape.sum_all(y).unwrap();
            black_box(tape.backward(s).unwrap());
        })
    });
}

fn bench_model(c: &mut Criterion) {
    let model = small_model();
    let x = features(32, 3);
    c.bench_function("model_predict_t32", |b| {
        b.iter(|| black_box(model.predict(&x).unwrap()))
    });
    c.bench_function("model_loss_and_grad_t32", |b| {
        b.iter(|| black_box(model.loss_and_grad(&x, 7).unwrap()))
    });
}

criterion_group!(benches, bench_cagc, bench_stse, bench_model);
criterion_main!(benches);
