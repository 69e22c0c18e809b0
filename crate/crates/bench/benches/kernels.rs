use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lspd_core::data::{
    synth_multilabel_graphs, synth_shapes, SynthGraphConfig, SynthShapeConfig,
};
use lspd_core::{
    edge_union, knn_graph, lsp_loss, DgcnnSpec, GatSpec, GraphMode, Kernel, Model, ModelInput,
    ModelSpec, Tape, Tensor,
};
use std::hint::black_box;

fn cloud(points: usize, seed: u64) -> Tensor {
    let ds = synth_shapes(&SynthShapeConfig {
        seed,
        per_class: 1,
        points_per_cloud: points,
    })
    .unwrap();
    ds.clouds[0].points.clone()
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let a = Tensor::new(vec![n, n], (0..n * n).map(|i| (i % 7) as f32 * 0.1).collect()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let tape = Tape::new();
                let x = tape.param(a.clone());
                let y = x.matmul(&x).unwrap().sum();
                tape.backward(y).unwrap();
                black_box(y.item())
            })
        });
    }
    group.finish();
}

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_graph");
    for (n, k) in [(256, 10), (1024, 20)] {
        let pts = cloud(n, 1);
        group.bench_with_input(BenchmarkId::new(format!("k{k}"), n), &k, |b, &k| {
            b.iter(|| black_box(knn_graph(&pts, k).unwrap()))
        });
    }
    group.finish();
}

fn lsp(c: &mut Criterion) {
    let z_t = cloud(512, 2);
    let z_s = cloud(512, 3);
    let g_t = knn_graph(&z_t, 20).unwrap();
    let g_s = knn_graph(&z_s, 10).unwrap();
    c.bench_function("edge_union/512", |b| {
        b.iter(|| black_box(edge_union(&g_t, &g_s).unwrap()))
    });
    let mut group = c.benchmark_group("lsp_loss_backward");
    for kernel in Kernel::ALL {
        group.bench_function(kernel.short_name(), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let z = tape.param(z_s.clone());
                let loss = lsp_loss(z, &g_s, &z_t, &g_t, kernel, GraphMode::Union).unwrap();
                tape.backward(loss).unwrap();
                black_box(loss.item())
            })
        });
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let graphs = synth_multilabel_graphs(&SynthGraphConfig {
        seed: 0,
        n_graphs: 1,
        nodes_per_graph: 500,
        feature_dim: 50,
        label_dim: 121,
        communities: 4,
    })
    .unwrap();
    let sample = &graphs.graphs[0];
    let gat = Model::new(ModelSpec::Gat(GatSpec::ppi_student())).unwrap();
    let gat_params = gat.init(0);
    c.bench_function("gat_student_forward/500", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let bound = gat_params.bind(&tape, false);
            let input = ModelInput::Graph {
                features: &sample.features,
                graph: &sample.graph,
            };
            black_box(gat.forward(&bound, &input, None).unwrap().logits.to_tensor())
        })
    });

    let pts = cloud(256, 4);
    let sizes = [256];
    let dgcnn = Model::new(ModelSpec::Dgcnn(DgcnnSpec::modelnet_student(40))).unwrap();
    let dgcnn_params = dgcnn.init(0);
    c.bench_function("dgcnn_student_forward/256", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let bound = dgcnn_params.bind(&tape, false);
            let input = ModelInput::Points {
                points: &pts,
                cloud_sizes: &sizes,
            };
            black_box(dgcnn.forward(&bound, &input, None).unwrap().logits.to_tensor())
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, knn, lsp, forward
}
criterion_main!(benches);
