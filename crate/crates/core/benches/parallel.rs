//! Sequential vs rayon execution of the data-parallel loops.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use foglb_core::ddql::{train_batch, AgentNets, BatchScratch, ReplayBuffer, Transition};
use foglb_core::des::{run_episode, EpisodeSpec};
use foglb_core::nn::Adam;
use foglb_core::par::{self, Execution};
use foglb_core::policies::PolicyKind;
use foglb_core::rl_state::ParlState;
use foglb_core::topology::generate_topology;
use foglb_core::workload::{AppSpec, GenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn episodes(c: &mut Criterion) {
    let topo = generate_topology(20, 5, 0).unwrap();
    let apps = AppSpec::defaults();
    let gen = GenConfig::new(100.0);
    let mut group = c.benchmark_group("episode_batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 8), |b| {
            b.iter(|| {
                par::map(exec, (0..8u64).collect(), |seed| {
                    let spec = EpisodeSpec {
                        topology: &topo,
                        apps: &apps,
                        gen: &gen,
                        horizon: 5000.0,
                        seed,
                    };
                    let mut p = PolicyKind::RoundRobin.baseline(&topo, &apps, seed).unwrap();
                    run_episode(spec, &mut p).unwrap().generated
                })
            })
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let (actions, clusters) = (14, 5);
    let input = ParlState::dim(actions, clusters, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buffer = ReplayBuffer::new(5000);
    let state = |rng: &mut ChaCha8Rng| -> Arc<[f32]> {
        let mut v = vec![0.0f32; input];
        v[rng.random_range(0..clusters)] = 1.0;
        v[clusters + rng.random_range(0..3)] = 1.0;
        for _ in 0..6 {
            v[clusters + 3 + rng.random_range(0..input - clusters - 3)] = rng.random();
        }
        v.into()
    };
    for _ in 0..5000 {
        let t = Transition {
            state: state(&mut rng),
            action: rng.random_range(0..actions),
            reward: rng.random_range(-3.0..3.0),
            next_state: state(&mut rng),
        };
        buffer.push(t);
    }
    let mut group = c.benchmark_group("train_batch");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 50), |b| {
            let mut nets = AgentNets::new(&[input, 256, 128, 64, actions], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let mut adam = Adam::new(&nets.q);
            let mut scratch = BatchScratch::new(&nets.q);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            b.iter(|| {
                black_box(train_batch(&mut nets, &mut adam, &buffer, 50, 0.99, &mut rng, &mut scratch, exec).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, episodes, training);
criterion_main!(benches);
