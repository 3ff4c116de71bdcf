//! Shared test helpers: a fluid GPS reference scheduler and a serial
//! (non-preemptive) WFQ harness, used to cross-check the packet scheduler.

use std::collections::BTreeMap;

use femtosim_core::backhaul::{EnqueueOutcome, Packet, WfqScheduler};
use femtosim_core::topology::ServiceClass;
use femtosim_core::FlowId;

/// Completion times per flow, in service (= arrival) order.
pub type Completions = BTreeMap<FlowId, Vec<f64>>;

fn sorted_by_arrival(packets: &[Packet]) -> Vec<Packet> {
    let mut sorted: Vec<(usize, Packet)> = packets.iter().cloned().enumerate().map(|(i, p)| (i, p)).collect();
    sorted.sort_by(|a, b| a.1.arrival_s.total_cmp(&b.1.arrival_s).then(a.0.cmp(&b.0)));
    sorted.into_iter().map(|(_, p)| p).collect()
}

/// Exact event-driven fluid GPS: between events every backlogged flow is
/// served at rate `capacity * w_i / sum(w_j backlogged)`; packets inside a
/// flow finish in arrival order as the flow's cumulative service crosses
/// their size boundaries.
pub fn fluid_gps_completions(
    packets: &[Packet],
    weights: &BTreeMap<ServiceClass, f64>,
    capacity_mbps: f64,
) -> Completions {
    #[derive(Debug)]
    struct FlowQueue {
        weight: f64,
        // (remaining bytes, original size) per queued packet, FIFO.
        queue: std::collections::VecDeque<f64>,
        done: Vec<f64>,
    }
    let capacity_bytes = capacity_mbps * 1e6 / 8.0;
    let arrivals = sorted_by_arrival(packets);
    let mut flows: BTreeMap<FlowId, FlowQueue> = BTreeMap::new();
    let mut t = 0.0_f64;
    let mut i = 0usize;
    loop {
        while i < arrivals.len() && arrivals[i].arrival_s <= t + 1e-12 {
            let p = &arrivals[i];
            let w = *weights.get(&p.class).expect("weight for class");
            flows
                .entry(p.flow)
                .or_insert_with(|| FlowQueue {
                    weight: w,
                    queue: Default::default(),
                    done: Vec::new(),
                })
                .queue
                .push_back(f64::from(p.size_bytes));
            i += 1;
        }
        let active: Vec<FlowId> = flows
            .iter()
            .filter(|(_, f)| !f.queue.is_empty())
            .map(|(id, _)| *id)
            .collect();
        if active.is_empty() {
            if i >= arrivals.len() {
                break;
            }
            t = arrivals[i].arrival_s;
            continue;
        }
        let sum_w: f64 = active.iter().map(|id| flows[id].weight).sum();
        let per_weight = capacity_bytes / sum_w; // bytes/s per weight unit
        let mut dt = f64::INFINITY;
        for id in &active {
            let f = &flows[id];
            let backlog: f64 = f.queue.iter().sum();
            dt = dt.min(backlog / (f.weight * per_weight));
        }
        if i < arrivals.len() {
            dt = dt.min(arrivals[i].arrival_s - t);
        }
        assert!(dt > 0.0, "fluid simulation stalled at t={t}");
        for id in &active {
            let f = flows.get_mut(id).expect("active flow");
            let rate = f.weight * per_weight;
            let mut local_t = t;
            let mut left = dt;
            while let Some(head) = f.queue.front_mut() {
                let need = *head / rate;
                if need <= left + 1e-12 {
                    local_t += need;
                    left -= need;
                    f.done.push(local_t);
                    f.queue.pop_front();
                } else {
                    *head -= rate * left;
                    break;
                }
            }
        }
        t += dt;
    }
    flows.into_iter().map(|(id, f)| (id, f.done)).collect()
}

/// Serial, non-preemptive WFQ on one link: the scheduler picks the queued
/// packet with the least virtual finish time whenever the link goes idle.
pub fn wfq_completions(packets: &[Packet], weights: &BTreeMap<ServiceClass, f64>, capacity_mbps: f64) -> Completions {
    let mut sched = WfqScheduler::new(capacity_mbps, weights.clone(), 1 << 20).expect("valid scheduler");
    let arrivals = sorted_by_arrival(packets);
    let mut done: Completions = BTreeMap::new();
    let mut now = 0.0_f64;
    let mut i = 0usize;
    loop {
        while i < arrivals.len() && arrivals[i].arrival_s <= now + 1e-12 {
            let outcome = sched.enqueue(arrivals[i].clone()).expect("known class");
            assert_eq!(outcome, EnqueueOutcome::Queued, "oracle harness never drops");
            i += 1;
        }
        match sched.dequeue(now) {
            Some(p) => {
                let finish = now + f64::from(p.size_bytes) * 8.0 / (capacity_mbps * 1e6);
                done.entry(p.flow).or_default().push(finish);
                now = finish;
            }
            None => {
                if i >= arrivals.len() {
                    break;
                }
                now = arrivals[i].arrival_s;
            }
        }
    }
    done
}

/// Serves `n_serve` packets from three persistently backlogged flows (one
/// per class) and returns the byte share per class.
pub fn backlogged_shares(
    weights: &BTreeMap<ServiceClass, f64>,
    capacity_mbps: f64,
    n_serve: usize,
) -> BTreeMap<ServiceClass, f64> {
    let classes = [ServiceClass::Voice, ServiceClass::Video, ServiceClass::Data];
    let supply = n_serve; // enough that no flow drains mid-measurement
    let mut sched = WfqScheduler::new(capacity_mbps, weights.clone(), supply + 1).expect("valid scheduler");
    for _ in 0..supply {
        for (f, class) in classes.iter().enumerate() {
            sched
                .enqueue(Packet {
                    flow: FlowId(f as u64),
                    class: *class,
                    size_bytes: 1000,
                    arrival_s: 0.0,
                })
                .expect("known class");
        }
    }
    let mut now = 0.0;
    let mut bytes: BTreeMap<ServiceClass, f64> = BTreeMap::new();
    for _ in 0..n_serve {
        let p = sched.dequeue(now).expect("backlogged");
        now += f64::from(p.size_bytes) * 8.0 / (capacity_mbps * 1e6);
        *bytes.entry(p.class).or_insert(0.0) += f64::from(p.size_bytes);
    }
    let total: f64 = bytes.values().sum();
    bytes.into_iter().map(|(c, b)| (c, b / total)).collect()
}

/// Deterministic random WFQ/GPS instance: up to `max_packets` packets over a
/// few flows with stable per-flow classes.
pub fn random_instance(seed: u64, max_packets: usize) -> Vec<Packet> {
    use rand::Rng;
    let mut rng = femtosim_core::rng::substream(seed, "gps-instance", 0);
    let n_flows = rng.gen_range(1..=4usize);
    let classes = [ServiceClass::Voice, ServiceClass::Video, ServiceClass::Data];
    let flow_class: Vec<ServiceClass> = (0..n_flows).map(|_| classes[rng.gen_range(0..3)]).collect();
    let n = rng.gen_range(1..=max_packets);
    let mut packets = Vec::with_capacity(n);
    for _ in 0..n {
        let flow = rng.gen_range(0..n_flows);
        packets.push(Packet {
            flow: FlowId(flow as u64),
            class: flow_class[flow],
            size_bytes: rng.gen_range(100..=1500),
            arrival_s: rng.gen_range(0.0..0.05),
        });
    }
    packets
}
