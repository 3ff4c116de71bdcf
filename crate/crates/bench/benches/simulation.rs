//! Benchmarks for the hot paths: Monte Carlo outage drops, sub-band
//! allocation over large femtocell fields, WFQ queue churn, and a full
//! event-driven scenario run.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use femtosim_core::backhaul::default_weights;
use femtosim_core::radio::{outage_probability, DropConfig};
use femtosim_core::spectrum::allocate_proposed;
use femtosim_core::topology::{build_macro_cluster, place_faps, DeploymentType, Topology, DEFAULT_FAP_RADIUS_M};
use femtosim_core::{
    run_scenario, Packet, RadioParams, ScenarioConfig, ServiceClass, SplitMode, Strategy, WfqScheduler,
};

fn bench_outage_drops(c: &mut Criterion) {
    let cfg = DropConfig {
        fap_count: 50,
        ..DropConfig::default()
    };
    let params = RadioParams::default();
    c.bench_function("outage_monte_carlo_50faps_200drops", |b| {
        b.iter(|| outage_probability(black_box(&cfg), black_box(Strategy::Proposed), &params, 200, 7).unwrap())
    });
}

fn dense_topology(fap_count: usize) -> Topology {
    let macros = build_macro_cluster(500.0, 43.0).unwrap();
    let mut faps = Vec::new();
    for (i, m) in macros.iter().enumerate() {
        let placed = place_faps(m, fap_count / macros.len(), 40 + i as u64, faps.len() as u32);
        faps.extend(placed);
    }
    Topology {
        macros,
        faps,
        ues: Vec::new(),
        deployment_type: DeploymentType::TypeC,
        fap_radius_m: DEFAULT_FAP_RADIUS_M,
    }
}

fn bench_allocate_proposed(c: &mut Criterion) {
    let topology = dense_topology(999);
    c.bench_function("allocate_proposed_999faps", |b| {
        b.iter(|| allocate_proposed(black_box(&topology), 7, SplitMode::Balanced).unwrap())
    });
}

fn bench_wfq_churn(c: &mut Criterion) {
    let classes = [ServiceClass::Voice, ServiceClass::Video, ServiceClass::Data];
    c.bench_function("wfq_enqueue_dequeue_1000pkts", |b| {
        b.iter(|| {
            let mut wfq = WfqScheduler::new(8.0, default_weights(), 1 << 20).unwrap();
            let mut now = 0.0;
            for i in 0u32..1000 {
                let class = classes[(i % 3) as usize];
                wfq.enqueue(Packet {
                    flow: femtosim_core::FlowId(u64::from(i % 3)),
                    class,
                    size_bytes: 200 + 100 * (i % 12),
                    arrival_s: now,
                })
                .unwrap();
                if i % 2 == 1 {
                    if let Some(p) = wfq.dequeue(now) {
                        now += f64::from(p.size_bytes) * 8.0 / 8e6;
                    }
                }
            }
            while wfq.dequeue(now).is_some() {}
            black_box(now)
        })
    });
}

fn bench_run_scenario(c: &mut Criterion) {
    let cfg = ScenarioConfig {
        fap_count: 4,
        ue_count: 6,
        sim_duration_s: 30.0,
        n_drops: 50,
        strategies: vec![Strategy::Proposed],
        ..ScenarioConfig::default()
    };
    cfg.validate().unwrap();
    c.bench_function("run_scenario_30s_6ues", |b| {
        b.iter(|| run_scenario(black_box(&cfg)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_outage_drops,
    bench_allocate_proposed,
    bench_wfq_churn,
    bench_run_scenario
);
criterion_main!(benches);
