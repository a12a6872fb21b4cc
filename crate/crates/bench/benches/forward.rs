use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use nslam::autodiff::Tape;
use nslam::env::{Action, EpisodeState, World};
use nslam::policy::{forward, AgentVariant, ModelConfig, ModelParams, ModelState};

fn forward_step(c: &mut Criterion) {
    let world = Arc::new(World::generate(16, 0.2, 1).unwrap());
    let (ep, obs) = EpisodeState::reset(world, 2);
    let mut group = c.benchmark_group("forward_step");
    group.throughput(Throughput::Elements(1));
    for variant in [AgentVariant::NeuralSlam, AgentVariant::A3cNav2] {
        let params = ModelParams::init(ModelConfig::new(variant), 3).unwrap();
        let state = ModelState::reset(params.config(), ep.pose()).unwrap();
        group.bench_function(variant.name(), |b| {
            b.iter(|| forward(black_box(&params), black_box(&state), black_box(&obs)).unwrap())
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let world = Arc::new(World::generate(8, 0.2, 1).unwrap());
    let (ep, obs) = EpisodeState::reset(world, 2);
    let params = ModelParams::init(ModelConfig::new(AgentVariant::NeuralSlam), 3).unwrap();
    let state = ModelState::reset(params.config(), ep.pose()).unwrap();
    c.bench_function("record_and_backward_step/neural-slam", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let ts = state.to_tape(&mut tape);
            let out = params.step(&mut tape, &bound, &ts, &obs).unwrap();
            let lp = tape.slice(out.log_probs, Action::GoStraight.id(), 1).unwrap();
            let lp = tape.reshape(lp, &[]).unwrap();
            let g = tape.backward(lp).unwrap();
            black_box(params.params().collect_grads(&g))
        })
    });
}

criterion_group!(benches, forward_step, training_step);
criterion_main!(benches);
