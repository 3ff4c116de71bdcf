//! WFQ vs fluid GPS: the packetized scheduler must track the fluid reference
//! within one maximum packet transmission time, and long-run backlogged
//! shares must follow the configured weights.

mod common;

use femtosim_core::backhaul::default_weights;
use femtosim_core::topology::ServiceClass;

#[test]
fn wfq_completions_track_fluid_gps_within_one_packet_time() {
    let weights = default_weights();
    let capacity_mbps = 8.0;
    let mut checked = 0usize;
    for seed in 0..150u64 {
        let packets = common::random_instance(seed, 50);
        let lmax_s = packets.iter().map(|p| p.size_bytes).max().unwrap() as f64 * 8.0 / (capacity_mbps * 1e6);
        let gps = common::fluid_gps_completions(&packets, &weights, capacity_mbps);
        let wfq = common::wfq_completions(&packets, &weights, capacity_mbps);
        assert_eq!(gps.keys().collect::<Vec<_>>(), wfq.keys().collect::<Vec<_>>());
        for (flow, gps_times) in &gps {
            let wfq_times = &wfq[flow];
            assert_eq!(gps_times.len(), wfq_times.len(), "flow {flow} packet count");
            for (k, (g, w)) in gps_times.iter().zip(wfq_times).enumerate() {
                assert!(
                    *w <= *g + lmax_s + 1e-9,
                    "seed {seed} flow {flow} packet {k}: wfq {w:.9} > gps {g:.9} + {lmax_s:.9}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 1000, "property exercised on only {checked} packets");
}

#[test]
fn gps_oracle_serves_single_flow_at_line_rate() {
    // With one flow the fluid system is a plain FIFO pipe; completions are
    // exact prefix sums over the capacity.
    let weights = default_weights();
    let packets = common::random_instance(9, 30)
        .into_iter()
        .map(|mut p| {
            p.flow = femtosim_core::FlowId(0);
            p.class = ServiceClass::Data;
            p.arrival_s = 0.0;
            p
        })
        .collect::<Vec<_>>();
    let gps = common::fluid_gps_completions(&packets, &weights, 8.0);
    let times = &gps[&femtosim_core::FlowId(0)];
    let mut acc = 0.0;
    for (p, t) in packets.iter().zip(times) {
        acc += f64::from(p.size_bytes) * 8.0 / (8.0 * 1e6);
        assert!((t - acc).abs() < 1e-9, "expected {acc}, got {t}");
    }
}

#[test]
fn backlogged_shares_converge_to_weights() {
    let weights = default_weights();
    let shares = common::backlogged_shares(&weights, 8.0, 10_000);
    let sum_w: f64 = weights.values().sum();
    for (class, w) in &weights {
        let expected = w / sum_w;
        let got = shares[class];
        let rel = (got - expected).abs() / expected;
        assert!(
            rel <= 0.02,
            "{class}: share {got:.4} vs expected {expected:.4} (rel {rel:.4})"
        );
    }
}
