//! xDSL backhaul model: a WFQ (PGPS) packet scheduler at the home gateway,
//! a FIFO scheduler for comparison, and the SLA / bandwidth-broker admission
//! framework with its append-only grant database.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::topology::{FapId, LinkId, ServiceClass};

#[derive(Debug, Error, PartialEq)]
pub enum BackhaulError {
    #[error("no weight configured for class {0}")]
    UnknownClass(ServiceClass),
    #[error("link {0} not registered with the broker")]
    UnknownLink(LinkId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A home xDSL uplink shared by the FAP flows and carrying the SLA.
#[derive(Debug, Clone, PartialEq)]
pub struct XdslLink {
    pub id: LinkId,
    pub capacity_mbps: f64,
    pub attached_faps: BTreeSet<FapId>,
}

/// One scheduled traffic flow (a UE/class pair in the engine).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u64);

impl std::fmt::Display for FlowId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "flow:{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub flow: FlowId,
    pub class: ServiceClass,
    pub size_bytes: u32,
    pub arrival_s: f64,
}

/// Default per-class WFQ weights: voice is prioritized, then video, then
/// best-effort data.
pub fn default_weights() -> BTreeMap<ServiceClass, f64> {
    [
        (ServiceClass::Voice, 4.0),
        (ServiceClass::Video, 2.0),
        (ServiceClass::Data, 1.0),
    ]
    .into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Queued,
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
struct QueuedPacket {
    packet: Packet,
    finish_vt: f64,
    seq: u64,
}

/// Weighted fair queuing via the classic virtual-finish-time emulation of
/// generalized processor sharing. Virtual time advances with the fluid GPS
/// system: it freezes when GPS is idle and grows at `C / Σ weights(active)`
/// otherwise, with flows leaving the active set as their last tag is passed.
#[derive(Debug, Clone, PartialEq)]
pub struct WfqScheduler {
    weights: BTreeMap<ServiceClass, f64>,
    capacity_mbps: f64,
    queue_limit_per_flow: usize,
    virtual_time: f64,
    clock_s: f64,
    last_finish: BTreeMap<FlowId, f64>,
    /// flow -> (weight, largest finish tag still ahead of virtual time).
    gps_backlog: BTreeMap<FlowId, (f64, f64)>,
    queue: Vec<QueuedPacket>,
    seq: u64,
}

impl WfqScheduler {
    pub fn new(
        capacity_mbps: f64,
        weights: BTreeMap<ServiceClass, f64>,
        queue_limit_per_flow: usize,
    ) -> Result<Self, BackhaulError> {
        if !(capacity_mbps > 0.0) {
            return Err(BackhaulError::InvalidParameter(format!(
                "link capacity must be positive, got {capacity_mbps}"
            )));
        }
        if let Some((class, w)) = weights.iter().find(|(_, w)| !(**w > 0.0)) {
            return Err(BackhaulError::InvalidParameter(format!(
                "weight for {class} must be positive, got {w}"
            )));
        }
        Ok(WfqScheduler {
            weights,
            capacity_mbps,
            queue_limit_per_flow,
            virtual_time: 0.0,
            clock_s: 0.0,
            last_finish: BTreeMap::new(),
            gps_backlog: BTreeMap::new(),
            queue: Vec::new(),
            seq: 0,
        })
    }

    pub fn virtual_time(&self) -> f64 {
        self.virtual_time
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn queued_for(&self, flow: FlowId) -> usize {
        self.queue.iter().filter(|q| q.packet.flow == flow).count()
    }

    fn bytes_per_s(&self) -> f64 {
        self.capacity_mbps * 1e6 / 8.0
    }

    /// Advances virtual time to wall-clock `now`, stepping through GPS
    /// active-set changes (a flow leaves when virtual time reaches its
    /// largest finish tag).
    fn advance_virtual_time(&mut self, now: f64) {
        if now <= self.clock_s {
            return;
        }
        let mut t = self.clock_s;
        loop {
            self.gps_backlog.retain(|_, (_, max_f)| *max_f > self.virtual_time);
            if self.gps_backlog.is_empty() {
                break;
            }
            let sum_w: f64 = self.gps_backlog.values().map(|(w, _)| *w).sum();
            let rate = self.bytes_per_s() / sum_w;
            let next_tag = self
                .gps_backlog
                .values()
                .map(|(_, max_f)| *max_f)
                .fold(f64::INFINITY, f64::min);
            let dt_to_tag = (next_tag - self.virtual_time) / rate;
            if t + dt_to_tag <= now {
                self.virtual_time = next_tag;
                t += dt_to_tag;
            } else {
                self.virtual_time += rate * (now - t);
                break;
            }
        }
        self.clock_s = now;
    }

    /// Queues a packet, stamping its virtual finish time
    /// `F = max(V, last_F(flow)) + size / weight(class)`. Per-flow queues are
    /// bounded; overflow drops the arriving packet.
    pub fn enqueue(&mut self, packet: Packet) -> Result<EnqueueOutcome, BackhaulError> {
        let weight = *self
            .weights
            .get(&packet.class)
            .ok_or(BackhaulError::UnknownClass(packet.class))?;
        self.advance_virtual_time(packet.arrival_s);
        if self.queued_for(packet.flow) >= self.queue_limit_per_flow {
            return Ok(EnqueueOutcome::Dropped);
        }
        let last = self.last_finish.get(&packet.flow).copied().unwrap_or(0.0);
        let finish_vt = self.virtual_time.max(last) + f64::from(packet.size_bytes) / weight;
        self.last_finish.insert(packet.flow, finish_vt);
        let entry = self.gps_backlog.entry(packet.flow).or_insert((weight, finish_vt));
        entry.1 = entry.1.max(finish_vt);
        self.queue.push(QueuedPacket {
            packet,
            finish_vt,
            seq: self.seq,
        });
        self.seq += 1;
        Ok(EnqueueOutcome::Queued)
    }

    /// Removes and returns the packet with the smallest virtual finish time
    /// (ties: earlier arrival, then smaller flow id).
    pub fn dequeue(&mut self, now: f64) -> Option<Packet> {
        self.advance_virtual_time(now);
        let best = self
            .queue
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.finish_vt
                    .total_cmp(&b.finish_vt)
                    .then(a.packet.arrival_s.total_cmp(&b.packet.arrival_s))
                    .then(a.packet.flow.cmp(&b.packet.flow))
                    .then(a.seq.cmp(&b.seq))
            })
            .map(|(i, _)| i)?;
        Some(self.queue.swap_remove(best).packet)
    }
}

/// First-in first-out scheduler used as the WFQ comparison baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FifoScheduler {
    queue_limit_per_flow: usize,
    queue: VecDeque<Packet>,
}

impl FifoScheduler {
    pub fn new(queue_limit_per_flow: usize) -> Self {
        FifoScheduler {
            queue_limit_per_flow,
            queue: VecDeque::new(),
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn enqueue(&mut self, packet: Packet) -> EnqueueOutcome {
        let backlog = self.queue.iter().filter(|p| p.flow == packet.flow).count();
        if backlog >= self.queue_limit_per_flow {
            return EnqueueOutcome::Dropped;
        }
        self.queue.push_back(packet);
        EnqueueOutcome::Queued
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        self.queue.pop_front()
    }
}

/// Scheduler selected per link by the scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkScheduler {
    Wfq(WfqScheduler),
    Fifo(FifoScheduler),
}

impl LinkScheduler {
    pub fn enqueue(&mut self, packet: Packet) -> Result<EnqueueOutcome, BackhaulError> {
        match self {
            LinkScheduler::Wfq(s) => s.enqueue(packet),
            LinkScheduler::Fifo(s) => Ok(s.enqueue(packet)),
        }
    }

    pub fn dequeue(&mut self, now: f64) -> Option<Packet> {
        match self {
            LinkScheduler::Wfq(s) => s.dequeue(now),
            LinkScheduler::Fifo(s) => s.dequeue(),
        }
    }

    pub fn queue_len(&self) -> usize {
        match self {
            LinkScheduler::Wfq(s) => s.queue_len(),
            LinkScheduler::Fifo(s) => s.queue_len(),
        }
    }
}

/// SLA terms between the femtocell operator and the ISP carrying the xDSL
/// uplink.
#[derive(Debug, Clone, PartialEq)]
pub struct Sla {
    pub femto_reserved_mbps: f64,
    pub class_weights: BTreeMap<ServiceClass, f64>,
    pub renegotiation_period_s: f64,
    pub monitor_window_s: f64,
}

impl Default for Sla {
    fn default() -> Self {
        Sla {
            femto_reserved_mbps: 2.0,
            class_weights: default_weights(),
            renegotiation_period_s: 60.0,
            monitor_window_s: 10.0,
        }
    }
}

/// Demand headroom applied when sizing the reservation from observations.
pub const RESERVATION_HEADROOM: f64 = 1.2;

/// Outcome of a bandwidth negotiation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grant {
    pub granted_mbps: f64,
    pub from_reserved_mbps: f64,
}

/// Append-only broker database records. Replaying them reconstructs the
/// broker's allocation state exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum BrokerRecord {
    LinkRegistered {
        time_s: f64,
        link: LinkId,
        capacity_mbps: f64,
    },
    Reservation {
        time_s: f64,
        link: LinkId,
        reserved_mbps: f64,
    },
    Grant {
        time_s: f64,
        link: LinkId,
        fap: FapId,
        class: ServiceClass,
        requested_mbps: f64,
        granted_mbps: f64,
        from_reserved_mbps: f64,
    },
    Release {
        time_s: f64,
        link: LinkId,
        fap: FapId,
        class: ServiceClass,
        granted_mbps: f64,
        from_reserved_mbps: f64,
    },
}

/// The bandwidth broker: configuration, monitoring, computation, and the
/// append-only database.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokerState {
    pub config: Sla,
    capacity: BTreeMap<LinkId, f64>,
    computed_reservation: BTreeMap<LinkId, f64>,
    granted_total: BTreeMap<LinkId, f64>,
    granted_from_reserved: BTreeMap<LinkId, f64>,
    monitoring: BTreeMap<(LinkId, FlowId), VecDeque<(f64, f64)>>,
    database: Vec<BrokerRecord>,
}

impl BrokerState {
    pub fn new(config: Sla) -> Self {
        BrokerState {
            config,
            capacity: BTreeMap::new(),
            computed_reservation: BTreeMap::new(),
            granted_total: BTreeMap::new(),
            granted_from_reserved: BTreeMap::new(),
            monitoring: BTreeMap::new(),
            database: Vec::new(),
        }
    }

    /// Registers a link and sets its initial reservation (the configured
    /// floor, clamped to capacity).
    pub fn register_link(&mut self, time_s: f64, link: LinkId, capacity_mbps: f64) -> Result<(), BackhaulError> {
        if !(capacity_mbps > 0.0) {
            return Err(BackhaulError::InvalidParameter(format!(
                "capacity for {link} must be positive, got {capacity_mbps}"
            )));
        }
        self.capacity.insert(link, capacity_mbps);
        self.granted_total.insert(link, 0.0);
        self.granted_from_reserved.insert(link, 0.0);
        self.database.push(BrokerRecord::LinkRegistered {
            time_s,
            link,
            capacity_mbps,
        });
        let reserved = self.config.femto_reserved_mbps.min(capacity_mbps);
        self.computed_reservation.insert(link, reserved);
        self.database.push(BrokerRecord::Reservation {
            time_s,
            link,
            reserved_mbps: reserved,
        });
        Ok(())
    }

    pub fn capacity(&self, link: LinkId) -> Option<f64> {
        self.capacity.get(&link).copied()
    }

    pub fn reservation(&self, link: LinkId) -> f64 {
        self.computed_reservation.get(&link).copied().unwrap_or(0.0)
    }

    pub fn granted_total(&self, link: LinkId) -> f64 {
        self.granted_total.get(&link).copied().unwrap_or(0.0)
    }

    pub fn database(&self) -> &[BrokerRecord] {
        &self.database
    }

    /// Negotiates bandwidth for a femto flow:
    /// `grant = min(rate, remaining reservation + unreserved spare)`, taken
    /// from the reservation first. A zero grant is a valid outcome.
    pub fn negotiate(
        &mut self,
        time_s: f64,
        link: LinkId,
        fap: FapId,
        class: ServiceClass,
        rate_mbps: f64,
    ) -> Result<Grant, BackhaulError> {
        if !(rate_mbps > 0.0) {
            return Err(BackhaulError::InvalidParameter(format!(
                "requested rate must be positive, got {rate_mbps}"
            )));
        }
        let capacity = *self.capacity.get(&link).ok_or(BackhaulError::UnknownLink(link))?;
        let reserved = self.reservation(link);
        let total = self.granted_total(link);
        let from_reserved_used = self.granted_from_reserved.get(&link).copied().unwrap_or(0.0);
        let remaining_reservation = (reserved - from_reserved_used).max(0.0);
        let unreserved_used = total - from_reserved_used;
        let unreserved_spare = (capacity - reserved.max(from_reserved_used) - unreserved_used).max(0.0);
        // The reservation may have been renegotiated upward past what is
        // actually free; conservation wins over the reservation promise.
        let available = (capacity - total).max(0.0);
        let granted = rate_mbps.min(remaining_reservation + unreserved_spare).min(available);
        let from_reserved = granted.min(remaining_reservation);
        *self.granted_total.get_mut(&link).unwrap() += granted;
        *self.granted_from_reserved.get_mut(&link).unwrap() += from_reserved;
        self.database.push(BrokerRecord::Grant {
            time_s,
            link,
            fap,
            class,
            requested_mbps: rate_mbps,
            granted_mbps: granted,
            from_reserved_mbps: from_reserved,
        });
        Ok(Grant {
            granted_mbps: granted,
            from_reserved_mbps: from_reserved,
        })
    }

    /// Returns a previously negotiated grant to the pool.
    pub fn release(
        &mut self,
        time_s: f64,
        link: LinkId,
        fap: FapId,
        class: ServiceClass,
        grant: Grant,
    ) -> Result<(), BackhaulError> {
        if !self.capacity.contains_key(&link) {
            return Err(BackhaulError::UnknownLink(link));
        }
        let total = self.granted_total.get_mut(&link).unwrap();
        *total = (*total - grant.granted_mbps).max(0.0);
        let reserved = self.granted_from_reserved.get_mut(&link).unwrap();
        *reserved = (*reserved - grant.from_reserved_mbps).max(0.0);
        self.database.push(BrokerRecord::Release {
            time_s,
            link,
            fap,
            class,
            granted_mbps: grant.granted_mbps,
            from_reserved_mbps: grant.from_reserved_mbps,
        });
        Ok(())
    }

    /// Records a rate observation for a flow; samples older than the monitor
    /// window are discarded.
    pub fn monitor(&mut self, link: LinkId, flow: FlowId, rate_sample_mbps: f64, now: f64) {
        let window = self.config.monitor_window_s;
        let samples = self.monitoring.entry((link, flow)).or_default();
        samples.push_back((now, rate_sample_mbps.max(0.0)));
        while samples.front().is_some_and(|(t, _)| *t < now - window) {
            samples.pop_front();
        }
    }

    /// Sliding-window mean of a flow's observed rate; 0 with no samples.
    pub fn window_mean(&self, link: LinkId, flow: FlowId, now: f64) -> f64 {
        let Some(samples) = self.monitoring.get(&(link, flow)) else {
            return 0.0;
        };
        let window = self.config.monitor_window_s;
        let recent: Vec<f64> = samples
            .iter()
            .filter(|(t, _)| *t >= now - window)
            .map(|(_, r)| *r)
            .collect();
        if recent.is_empty() {
            return 0.0;
        }
        recent.iter().sum::<f64>() / recent.len() as f64
    }

    /// Observed femto demand on a link: the sum of its flows' window means.
    pub fn observed_demand(&self, link: LinkId, now: f64) -> f64 {
        self.monitoring
            .keys()
            .filter(|(l, _)| *l == link)
            .map(|(_, flow)| self.window_mean(link, *flow, now))
            .sum()
    }

    /// Renegotiates the femto reservation from observations:
    /// `clamp(configured floor, demand x headroom, capacity)`. The result is
    /// stored and recorded.
    pub fn compute_reservation(&mut self, link: LinkId, now: f64) -> Result<f64, BackhaulError> {
        let capacity = *self.capacity.get(&link).ok_or(BackhaulError::UnknownLink(link))?;
        let demand = self.observed_demand(link, now);
        let reserved = self
            .config
            .femto_reserved_mbps
            .max(demand * RESERVATION_HEADROOM)
            .min(capacity);
        self.computed_reservation.insert(link, reserved);
        self.database.push(BrokerRecord::Reservation {
            time_s: now,
            link,
            reserved_mbps: reserved,
        });
        Ok(reserved)
    }

    /// CAC backhaul gate: admit iff the granted total plus the new need fits
    /// the link capacity.
    pub fn admit_flow(&self, link: LinkId, flow_need_mbps: f64) -> bool {
        match self.capacity.get(&link) {
            Some(capacity) => self.granted_total(link) + flow_need_mbps <= capacity + 1e-9,
            None => false,
        }
    }

    /// Spare capacity available to a new admission.
    pub fn free_mbps(&self, link: LinkId) -> f64 {
        match self.capacity.get(&link) {
            Some(capacity) => (capacity - self.granted_total(link)).max(0.0),
            None => 0.0,
        }
    }

    /// Rebuilds allocation state from an append-only record history.
    /// Monitoring windows are transient and start empty.
    pub fn replay(config: Sla, records: &[BrokerRecord]) -> BrokerState {
        let mut state = BrokerState::new(config);
        for record in records {
            match record {
                BrokerRecord::LinkRegistered {
                    link, capacity_mbps, ..
                } => {
                    state.capacity.insert(*link, *capacity_mbps);
                    state.granted_total.insert(*link, 0.0);
                    state.granted_from_reserved.insert(*link, 0.0);
                }
                BrokerRecord::Reservation {
                    link, reserved_mbps, ..
                } => {
                    state.computed_reservation.insert(*link, *reserved_mbps);
                }
                BrokerRecord::Grant {
                    link,
                    granted_mbps,
                    from_reserved_mbps,
                    ..
                } => {
                    *state.granted_total.entry(*link).or_insert(0.0) += granted_mbps;
                    *state.granted_from_reserved.entry(*link).or_insert(0.0) += from_reserved_mbps;
                }
                BrokerRecord::Release {
                    link,
                    granted_mbps,
                    from_reserved_mbps,
                    ..
                } => {
                    let total = state.granted_total.entry(*link).or_insert(0.0);
                    *total = (*total - granted_mbps).max(0.0);
                    let reserved = state.granted_from_reserved.entry(*link).or_insert(0.0);
                    *reserved = (*reserved - from_reserved_mbps).max(0.0);
                }
            }
            state.database.push(record.clone());
        }
        state
    }
}
