use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dksh_bench::{graph, structure, walk_config};
use dksh_core::hashing::{select_landmarks, solve_hashing};
use dksh_core::linalg;
use dksh_core::similarity::SimilarityMatrix;
use dksh_core::svm::{train_kernel_svm, KernelSvmOptions};
use dksh_core::{build_structure_matrix, generate_walks, DeepKernelNet, ElementaryKernel};

fn walks_and_structure(c: &mut Criterion) {
    let mut group = c.benchmark_group("structure");
    for per_class in [50, 150] {
        let g = graph(4, per_class, 1);
        let cfg = walk_config();
        let walks = generate_walks(&g, &cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("walks", g.num_nodes()), &g, |b, g| {
            b.iter(|| generate_walks(black_box(g), &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("accumulate", g.num_nodes()), &walks, |b, w| {
            b.iter(|| build_structure_matrix(black_box(w), &cfg, g.num_nodes()).unwrap())
        });
    }
    group.finish();
}

fn deep_kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("deep_kernel");
    group.sample_size(10);
    for per_class in [50, 100] {
        let p = structure(&graph(4, per_class, 2));
        let n = p.n();
        for layers in [1, 3] {
            let net = DeepKernelNet::uniform(layers, ElementaryKernel::default_set()).unwrap();
            group.bench_function(BenchmarkId::new(format!("forward_L{layers}"), n), |b| {
                b.iter(|| net.forward(black_box(&p)).unwrap())
            });
        }
        let net = DeepKernelNet::uniform(2, ElementaryKernel::default_set()).unwrap();
        group.bench_function(BenchmarkId::new("backward_L2", n), |b| {
            let trace = net.forward_trace(&p).unwrap();
            let upstream = trace.output().clone();
            b.iter(|| trace.backward(&net, black_box(&upstream)).unwrap())
        });
    }
    group.finish();
}

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solvers");
    group.sample_size(10);
    let g = graph(4, 50, 3);
    let p = structure(&g);
    let n = p.n();
    let net = DeepKernelNet::uniform(2, ElementaryKernel::default_set()).unwrap();
    let k = net.forward(&p).unwrap();
    let (k_psd, _) = linalg::project_psd(&k);
    let y: Vec<f64> = (0..n).map(|i| if i < n / 4 { 1.0 } else { -1.0 }).collect();
    group.bench_function(BenchmarkId::new("smo", n), |b| {
        b.iter(|| train_kernel_svm(black_box(&k_psd), &y, &KernelSvmOptions::default()).unwrap())
    });

    let landmarks = select_landmarks(n, 64, 0).unwrap();
    let k_rn = linalg::select_rows(&k, &landmarks);
    let k_rr = linalg::select_columns(&k_rn, &landmarks);
    let mut trip = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i % 4 == j % 4 && (i + j) % 3 == 0 {
                trip.push((i, j, 0.5));
            }
        }
    }
    let s = SimilarityMatrix::from_triplets(n, trip).unwrap();
    group.bench_function(BenchmarkId::new("solve_hashing_R64", n), |b| {
        b.iter(|| solve_hashing(black_box(&k_rn), &k_rr, &s, 32, 1e-4).unwrap())
    });
    group.finish();
}

criterion_group!(benches, walks_and_structure, deep_kernel, solvers);
criterion_main!(benches);
