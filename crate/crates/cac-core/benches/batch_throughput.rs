//! Sequential vs rayon data-parallel batch gradients, and the two
//! inference paths, under criterion.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cac_core::batch::{map_ordered_par, map_ordered_seq};
use cac_core::config::RunConfig;
use cac_core::encoder::encode;
use cac_core::head::{forward_full, ForwardMode};
use cac_core::labels::LabelMap;
use cac_core::losses::total_loss;
use cac_core::model::{Architecture, Model};
use cac_core::synth::{generate, Dataset, SceneSpec};
use cac_core::tape::Tape;
use cac_core::tensor::Tensor;

struct Workload {
    model: Model,
    cfg: RunConfig,
    inputs: Vec<(Tensor, LabelMap)>,
    h: usize,
    w: usize,
}

fn workload(batch: usize) -> Workload {
    let spec = SceneSpec::default();
    let data: Dataset = generate(&spec, batch).expect("generate");
    let cfg = RunConfig::default();
    let arch = Architecture::resolve(&cfg, data.n_classes, data.d_in);
    let model = Model::init(&arch, 0);
    let inputs = (0..data.len())
        .map(|i| (data.features(i), data.label_map(i)))
        .collect();
    Workload {
        model,
        cfg,
        inputs,
        h: data.height,
        w: data.width,
    }
}

fn image_gradients(wl: &Workload, input: &(Tensor, LabelMap)) -> f64 {
    let tape = Tape::new();
    let mv = wl.model.bind(&tape);
    let x = tape.constant(input.0.clone());
    let f = encode(x, &mv.encoder, wl.h, wl.w).expect("encode");
    let out = forward_full(
        &f,
        ForwardMode::Train(&input.1),
        mv.classifier,
        &mv.theta_y,
        &mv.theta_p,
        &wl.cfg.head_config(),
    )
    .expect("forward");
    let terms = total_loss(&out, &input.1, &wl.cfg.loss).expect("loss");
    let grads = tape.backward(terms.total).expect("backward");
    // Touch one gradient so nothing is optimized away.
    grads.wrt(mv.classifier).data()[0]
}

fn bench_batch_gradients(c: &mut Criterion) {
    let wl = workload(16);
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);

    group.bench_function("sequential", |b| {
        b.iter(|| map_ordered_seq(&wl.inputs, |input| image_gradients(&wl, input)))
    });

    for threads in [2, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool");
        group.bench_with_input(
            BenchmarkId::new("rayon", threads),
            &threads,
            |b, _| {
                b.iter(|| {
                    pool.install(|| map_ordered_par(&wl.inputs, |input| image_gradients(&wl, input)))
                })
            },
        );
    }
    group.finish();
}

fn bench_inference_paths(c: &mut Criterion) {
    let wl = workload(8);
    let mut group = c.benchmark_group("inference_forward");

    group.bench_function("dot_only", |b| {
        b.iter(|| {
            let mut sink = 0.0;
            for input in &wl.inputs {
                let tape = Tape::new();
                let mv = wl.model.bind(&tape);
                let x = tape.constant(input.0.clone());
                let f = encode(x, &mv.encoder, wl.h, wl.w).expect("encode");
                let p = cac_core::head::dot_logits(&f, mv.classifier).expect("logits");
                sink += p.value().data()[0];
            }
            sink
        })
    });

    group.bench_function("context_aware", |b| {
        b.iter(|| {
            let mut sink = 0.0;
            for input in &wl.inputs {
                let tape = Tape::new();
                let mv = wl.model.bind(&tape);
                let x = tape.constant(input.0.clone());
                let f = encode(x, &mv.encoder, wl.h, wl.w).expect("encode");
                let out = forward_full(
                    &f,
                    ForwardMode::Inference,
                    mv.classifier,
                    &mv.theta_y,
                    &mv.theta_p,
                    &wl.cfg.head_config(),
                )
                .expect("forward");
                sink += out.p_p.value().data()[0];
            }
            sink
        })
    });
    group.finish();
}

criterion_group!(benches, bench_batch_gradients, bench_inference_paths);
criterion_main!(benches);
