//! Reference-executor throughput: data-parallel pool vs a single thread.
//!
//! With the default `parallel` feature this compares the configured rayon
//! pool against a 1-thread pool on the same workload; built with
//! `--no-default-features` it benches the plain sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use xgir_core::exec::execute_reference;
use xgir_core::ops::Op;
use xgir_core::tensor::Tensor;
use xgir_core::{zoo, Graph};

/// A conv layer wide enough that splitting output planes across threads
/// pays; the toy zoo stays below the parallelism break-even on purpose.
fn wide_conv() -> Graph {
    Graph::builder()
        .input("x", vec![1, 8, 32, 32])
        .weight("w", Tensor::zeros(vec![32, 8, 3, 3]).unwrap())
        .node("conv", Op::Conv2D { stride: (1, 1), pad: (1, 1) }, &["x", "w"])
        .node("act", Op::Relu, &["conv"])
        .outputs(&["act"])
        .build()
}

fn bench_exec(c: &mut Criterion) {
    let cases = [
        ("cnn6_batch8", zoo::toy_cnn6(7), 8usize),
        ("wide_conv", wide_conv(), 2),
    ];
    let mut group = c.benchmark_group("execute_reference");

    for (name, model, batch) in cases {
        let feeds = zoo::random_inputs(&model, 7, batch);

        #[cfg(feature = "parallel")]
        {
            let single = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap();
            group.bench_function(BenchmarkId::new(name, "sequential"), |b| {
                b.iter(|| {
                    single.install(|| {
                        for feed in &feeds {
                            std::hint::black_box(execute_reference(&model, feed).unwrap());
                        }
                    })
                })
            });
            group.bench_function(BenchmarkId::new(name, "parallel"), |b| {
                b.iter(|| {
                    for feed in &feeds {
                        std::hint::black_box(execute_reference(&model, feed).unwrap());
                    }
                })
            });
        }

        #[cfg(not(feature = "parallel"))]
        group.bench_function(BenchmarkId::new(name, "sequential-fallback"), |b| {
            b.iter(|| {
                for feed in &feeds {
                    std::hint::black_box(execute_reference(&model, feed).unwrap());
                }
            })
        });
    }

    group.finish();
}

criterion_group!(benches, bench_exec);
criterion_main!(benches);
