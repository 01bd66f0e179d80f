use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mupp_bench::{fixture, gaussian};
use mupp_core::net::{spectral_norm, Loss};
use mupp_core::opt::{sam_step_with, Batch, SamScratch};

const WIDTHS: [usize; 3] = [64, 256, 1024];

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_backward");
    for w in WIDTHS {
        let f = fixture(w, 32);
        g.bench_with_input(BenchmarkId::from_parameter(w), &f, |b, f| {
            b.iter(|| {
                let (out, cache) = f.net.forward(f.x.view()).unwrap();
                let le = Loss::Mse.evaluate(out.view(), f.y.view(), 1.0).unwrap();
                f.net.backward(&cache, le.grad.view()).unwrap()
            })
        });
    }
    g.finish();
}

fn spectral(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectral_norm");
    for n in [64, 256, 1024] {
        let m = gaussian(n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| b.iter(|| spectral_norm(m.view())));
    }
    g.finish();
}

fn sam(c: &mut Criterion) {
    let mut g = c.benchmark_group("sam_step");
    for w in WIDTHS {
        let mut f = fixture(w, 32);
        let mut scratch = SamScratch::default();
        g.bench_function(BenchmarkId::from_parameter(w), |b| {
            b.iter(|| {
                let batch = Batch { x: f.x.view(), y: f.y.view() };
                sam_step_with(&mut f.net, batch, batch, &f.cfg, &f.scales, &mut scratch).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward_backward, spectral, sam);
criterion_main!(benches);
