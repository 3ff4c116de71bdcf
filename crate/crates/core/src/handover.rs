//! The macrocell-to-femtocell handover call flow as an explicit state
//! machine, plus the registration database, scan reduction, target selection,
//! and threshold-based call admission control.
//!
//! Femto-to-macro and femto-to-femto transitions reuse the same machine with
//! the authorization-list steps (3, 4) skipped.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::mobility::estimate_dwell_time_s;
use crate::radio::{received_power_dbm, sinr_at, RadioParams, SinrSample};
use crate::spectrum::{FrequencyPlan, SubBand};
use crate::topology::{neighbors_within, Fap, FapId, Point2D, Station, Topology, Ue, UeId};

#[derive(Debug, Error, PartialEq)]
pub enum HandoverError {
    #[error("protocol violation: event {event} not legal in state {state}")]
    ProtocolViolation { state: FsmState, event: String },
    #[error("macro-to-macro reattachment does not use the handover FSM")]
    InvalidKind,
    #[error("invalid registration db: {0}")]
    InvalidDb(String),
}

/// Mirror of the operator-side registration database: FAP locations, the
/// neighbor relation, and per-UE authorized FAP lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistrationDb {
    pub fap_location: BTreeMap<FapId, Point2D>,
    pub neighbor_list: BTreeMap<FapId, BTreeSet<FapId>>,
    pub authorized: BTreeMap<UeId, BTreeSet<FapId>>,
}

impl RegistrationDb {
    /// Builds the database from the topology: neighbor lists from proximity
    /// (within `neighbor_range_m`), authorization by inverting CSG lists.
    pub fn from_topology(topology: &Topology, neighbor_range_m: f64) -> Self {
        let mut db = RegistrationDb::default();
        for f in &topology.faps {
            db.fap_location.insert(f.id, f.position);
            let neighbors: BTreeSet<FapId> = neighbors_within(topology, f.position, neighbor_range_m)
                .into_iter()
                .filter(|id| *id != f.id)
                .collect();
            db.neighbor_list.insert(f.id, neighbors);
            for ue in &f.csg_list {
                db.authorized.entry(*ue).or_default().insert(f.id);
            }
        }
        db
    }

    pub fn validate(&self, topology: &Topology) -> Result<(), HandoverError> {
        let exists = |id: &FapId| topology.fap(*id).is_some();
        for id in self.fap_location.keys() {
            if !exists(id) {
                return Err(HandoverError::InvalidDb(format!("located fap {id} not in topology")));
            }
        }
        for (id, neighbors) in &self.neighbor_list {
            for n in neighbors {
                if !exists(n) {
                    return Err(HandoverError::InvalidDb(format!(
                        "neighbor {n} of {id} not in topology"
                    )));
                }
                if !self.neighbor_list.get(n).is_some_and(|back| back.contains(id)) {
                    return Err(HandoverError::InvalidDb(format!(
                        "neighbor relation {id}->{n} not symmetric"
                    )));
                }
            }
        }
        for (ue, faps) in &self.authorized {
            for f in faps {
                if !exists(f) {
                    return Err(HandoverError::InvalidDb(format!(
                        "authorized fap {f} of ue {ue} not in topology"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The step-6(a) handover request payload.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoverRequest {
    pub target_fap: FapId,
    pub ebio_db: f64,
    pub scrambling_code: u32,
    pub ul_freq: SubBand,
    pub dl_freq: SubBand,
    pub location_code: u32,
    pub routing_code: u32,
    pub service_area_code: u32,
}

impl HandoverRequest {
    /// Fills the payload for a concrete target. Codes are deterministic
    /// functions of the FAP id; the model carries them for fidelity, not use.
    pub fn for_target(fap: &Fap, band: SubBand, sample: &SinrSample) -> Self {
        HandoverRequest {
            target_fap: fap.id,
            ebio_db: sample.ebio_db,
            scrambling_code: 9_000 + fap.id.0,
            ul_freq: band,
            dl_freq: band,
            location_code: 40_000 + fap.id.0,
            routing_code: 50_000 + fap.id.0,
            service_area_code: 60_000 + fap.id.0,
        }
    }
}

/// Handover scenario, by source and target tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HandoverKind {
    MacroToMacro,
    MacroToFemto,
    FemtoToMacro,
    FemtoToFemto,
}

impl std::fmt::Display for HandoverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            HandoverKind::MacroToMacro => "macro_to_macro",
            HandoverKind::MacroToFemto => "macro_to_femto",
            HandoverKind::FemtoToMacro => "femto_to_macro",
            HandoverKind::FemtoToFemto => "femto_to_femto",
        };
        write!(f, "{s}")
    }
}

/// Call-flow states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsmState {
    AttachedMacro,
    FapsDetected,
    AwaitingAuthList,
    Scanning,
    RequestSent,
    Admitted,
    PhyReconfig,
    LinkUp,
    Complete,
    Rejected,
}

impl std::fmt::Display for FsmState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FsmState::AttachedMacro => "ATTACHED_MACRO",
            FsmState::FapsDetected => "FAPS_DETECTED",
            FsmState::AwaitingAuthList => "AWAITING_AUTH_LIST",
            FsmState::Scanning => "SCANNING",
            FsmState::RequestSent => "REQUEST_SENT",
            FsmState::Admitted => "ADMITTED",
            FsmState::PhyReconfig => "PHY_RECONFIG",
            FsmState::LinkUp => "LINK_UP",
            FsmState::Complete => "COMPLETE",
            FsmState::Rejected => "REJECTED",
        };
        write!(f, "{s}")
    }
}

/// Call-flow step labels appended to the FSM log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepLabel {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6a,
    S6b,
    S6c,
    S6d,
    S6e,
    S7,
    S8,
    S9,
    S10,
    Reject,
}

impl std::fmt::Display for StepLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StepLabel::S1 => "1",
            StepLabel::S2 => "2",
            StepLabel::S3 => "3",
            StepLabel::S4 => "4",
            StepLabel::S5 => "5",
            StepLabel::S6a => "6a",
            StepLabel::S6b => "6b",
            StepLabel::S6c => "6c",
            StepLabel::S6d => "6d",
            StepLabel::S6e => "6e",
            StepLabel::S7 => "7",
            StepLabel::S8 => "8",
            StepLabel::S9 => "9",
            StepLabel::S10 => "10",
            StepLabel::Reject => "REJECT",
        };
        write!(f, "{s}")
    }
}

/// The golden macro-to-femto success sequence.
pub const GOLDEN_STEPS_MACRO_TO_FEMTO: [StepLabel; 14] = [
    StepLabel::S1,
    StepLabel::S2,
    StepLabel::S3,
    StepLabel::S4,
    StepLabel::S5,
    StepLabel::S6a,
    StepLabel::S6b,
    StepLabel::S6c,
    StepLabel::S6d,
    StepLabel::S6e,
    StepLabel::S7,
    StepLabel::S8,
    StepLabel::S9,
    StepLabel::S10,
];

/// Success sequence for femto-sourced handovers (steps 3-4 skipped).
pub const GOLDEN_STEPS_FEMTO_SOURCED: [StepLabel; 12] = [
    StepLabel::S1,
    StepLabel::S2,
    StepLabel::S5,
    StepLabel::S6a,
    StepLabel::S6b,
    StepLabel::S6c,
    StepLabel::S6d,
    StepLabel::S6e,
    StepLabel::S7,
    StepLabel::S8,
    StepLabel::S9,
    StepLabel::S10,
];

/// Relay hops carrying the handover request from the serving station to the
/// target FAP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayHop {
    BsToRnc,
    RncToCn,
    CnToFgw,
    FgwToFap,
}

impl RelayHop {
    pub const ORDER: [RelayHop; 4] = [
        RelayHop::BsToRnc,
        RelayHop::RncToCn,
        RelayHop::CnToFgw,
        RelayHop::FgwToFap,
    ];

    fn label(&self) -> StepLabel {
        match self {
            RelayHop::BsToRnc => StepLabel::S6b,
            RelayHop::RncToCn => StepLabel::S6c,
            RelayHop::CnToFgw => StepLabel::S6d,
            RelayHop::FgwToFap => StepLabel::S6e,
        }
    }
}

impl std::fmt::Display for RelayHop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RelayHop::BsToRnc => "BS -> RNC",
            RelayHop::RncToCn => "RNC -> CN",
            RelayHop::CnToFgw => "CN -> FGW",
            RelayHop::FgwToFap => "FGW -> FAP",
        };
        write!(f, "{s}")
    }
}

/// CAC thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacPolicy {
    pub threshold_time_s: f64,
    pub threshold_velocity_mps: f64,
    pub min_ebio_db: f64,
}

impl Default for CacPolicy {
    fn default() -> Self {
        CacPolicy {
            threshold_time_s: 5.0,
            threshold_velocity_mps: 10.0,
            min_ebio_db: 7.0,
        }
    }
}

/// Why CAC refused an admission, in fixed priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RejectReason {
    Radio,
    Backhaul,
    Velocity,
    Time,
    Ebio,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RejectReason::Radio => "radio",
            RejectReason::Backhaul => "backhaul",
            RejectReason::Velocity => "velocity",
            RejectReason::Time => "time",
            RejectReason::Ebio => "ebio",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacDecision {
    Admit,
    Reject(RejectReason),
}

/// Events driving the handover FSM.
#[derive(Debug, Clone, PartialEq)]
pub enum HandoverEvent {
    Detected { detected: Vec<FapId> },
    AuthListRequested,
    AuthListReceived { authorized: Vec<FapId> },
    TargetSelected { target: Station },
    ScanFailed,
    Relayed(RelayHop),
    CacDecided(CacDecision),
    PhyReconfigured,
    RadioLinkEstablished,
    OldLinkTornDown,
    Reset,
}

impl HandoverEvent {
    fn name(&self) -> &'static str {
        match self {
            HandoverEvent::Detected { .. } => "Detected",
            HandoverEvent::AuthListRequested => "AuthListRequested",
            HandoverEvent::AuthListReceived { .. } => "AuthListReceived",
            HandoverEvent::TargetSelected { .. } => "TargetSelected",
            HandoverEvent::ScanFailed => "ScanFailed",
            HandoverEvent::Relayed(_) => "Relayed",
            HandoverEvent::CacDecided(_) => "CacDecided",
            HandoverEvent::PhyReconfigured => "PhyReconfigured",
            HandoverEvent::RadioLinkEstablished => "RadioLinkEstablished",
            HandoverEvent::OldLinkTornDown => "OldLinkTornDown",
            HandoverEvent::Reset => "Reset",
        }
    }
}

/// One in-flight handover attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct HandoverFsm {
    pub ue: UeId,
    pub kind: HandoverKind,
    pub state: FsmState,
    pub target: Option<Station>,
    pub step_log: Vec<StepLabel>,
}

impl HandoverFsm {
    pub fn new(ue: UeId, kind: HandoverKind) -> Result<Self, HandoverError> {
        if kind == HandoverKind::MacroToMacro {
            return Err(HandoverError::InvalidKind);
        }
        Ok(HandoverFsm {
            ue,
            kind,
            state: FsmState::AttachedMacro,
            target: None,
            step_log: Vec::new(),
        })
    }

    /// Which relay hop the log expects next, if the request is in transit.
    fn expected_hop(&self) -> Option<RelayHop> {
        match self.step_log.last() {
            Some(StepLabel::S6a) => Some(RelayHop::BsToRnc),
            Some(StepLabel::S6b) => Some(RelayHop::RncToCn),
            Some(StepLabel::S6c) => Some(RelayHop::CnToFgw),
            Some(StepLabel::S6d) => Some(RelayHop::FgwToFap),
            _ => None,
        }
    }
}

/// Applies `event` to `fsm`, returning the successor machine with its step
/// log extended. Illegal (state, event) pairs are reported, never ignored.
pub fn fsm_transition(fsm: &HandoverFsm, event: &HandoverEvent) -> Result<HandoverFsm, HandoverError> {
    let violation = || HandoverError::ProtocolViolation {
        state: fsm.state,
        event: event.name().to_string(),
    };
    let femto_sourced = matches!(fsm.kind, HandoverKind::FemtoToMacro | HandoverKind::FemtoToFemto);
    let mut next = fsm.clone();
    match (fsm.state, event) {
        (FsmState::AttachedMacro, HandoverEvent::Detected { .. }) => {
            next.state = FsmState::FapsDetected;
            next.step_log.extend([StepLabel::S1, StepLabel::S2]);
        }
        (FsmState::FapsDetected, HandoverEvent::AuthListRequested) if fsm.kind == HandoverKind::MacroToFemto => {
            next.state = FsmState::AwaitingAuthList;
            next.step_log.push(StepLabel::S3);
        }
        (FsmState::AwaitingAuthList, HandoverEvent::AuthListReceived { authorized }) => {
            next.step_log.push(StepLabel::S4);
            if authorized.is_empty() {
                next.state = FsmState::Rejected;
                next.step_log.push(StepLabel::Reject);
            } else {
                next.state = FsmState::Scanning;
            }
        }
        (FsmState::Scanning, HandoverEvent::TargetSelected { target }) => {
            next.state = FsmState::RequestSent;
            next.target = Some(*target);
            next.step_log.extend([StepLabel::S5, StepLabel::S6a]);
        }
        (FsmState::FapsDetected, HandoverEvent::TargetSelected { target }) if femto_sourced => {
            next.state = FsmState::RequestSent;
            next.target = Some(*target);
            next.step_log.extend([StepLabel::S5, StepLabel::S6a]);
        }
        (FsmState::Scanning, HandoverEvent::ScanFailed) => {
            next.state = FsmState::Rejected;
            next.step_log.extend([StepLabel::S5, StepLabel::Reject]);
        }
        (FsmState::FapsDetected, HandoverEvent::ScanFailed) if femto_sourced => {
            next.state = FsmState::Rejected;
            next.step_log.extend([StepLabel::S5, StepLabel::Reject]);
        }
        (FsmState::RequestSent, HandoverEvent::Relayed(hop)) if fsm.expected_hop() == Some(*hop) => {
            next.step_log.push(hop.label());
        }
        (FsmState::RequestSent, HandoverEvent::CacDecided(decision))
            if fsm.step_log.last() == Some(&StepLabel::S6e) =>
        {
            next.step_log.push(StepLabel::S7);
            match decision {
                CacDecision::Admit => next.state = FsmState::Admitted,
                CacDecision::Reject(_) => {
                    next.state = FsmState::Rejected;
                    next.step_log.push(StepLabel::Reject);
                }
            }
        }
        (FsmState::Admitted, HandoverEvent::PhyReconfigured) => {
            next.state = FsmState::PhyReconfig;
            next.step_log.push(StepLabel::S8);
        }
        (FsmState::PhyReconfig, HandoverEvent::RadioLinkEstablished) => {
            next.state = FsmState::LinkUp;
            next.step_log.push(StepLabel::S9);
        }
        (FsmState::LinkUp, HandoverEvent::OldLinkTornDown) => {
            next.state = FsmState::Complete;
            next.step_log.push(StepLabel::S10);
        }
        (FsmState::Rejected, HandoverEvent::Reset) => {
            next.state = FsmState::AttachedMacro;
        }
        _ => return Err(violation()),
    }
    Ok(next)
}

/// FAPs audible at the UE: received power at or above `detect_floor_dbm`,
/// strongest first (ties by id). Detection is physical, so CSG membership is
/// not consulted.
pub fn detect_faps(ue: &Ue, topology: &Topology, params: &RadioParams, detect_floor_dbm: f64) -> Vec<FapId> {
    let mut heard: Vec<(f64, FapId)> = topology
        .faps
        .iter()
        .filter_map(|f| {
            let rx = received_power_dbm(Station::Fap(f.id), ue.position, ue.id.0 as u64, topology, params)
                .expect("fap exists");
            (rx >= detect_floor_dbm).then_some((rx, f.id))
        })
        .collect();
    heard.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite powers").then(a.1.cmp(&b.1)));
    heard.into_iter().map(|(_, id)| id).collect()
}

/// Filters `detected` down to the FAPs the UE is authorized on, preserving
/// order. A UE missing from the database has no authorizations.
pub fn authorized_neighbor_list(db: &RegistrationDb, ue: UeId, detected: &[FapId]) -> Vec<FapId> {
    match db.authorized.get(&ue) {
        Some(set) => detected.iter().copied().filter(|id| set.contains(id)).collect(),
        None => Vec::new(),
    }
}

/// Step-5 target selection: among the authorized FAPs, keep those with
/// E_b/I_0 at or above `policy.min_ebio_db` and predicted dwell at or above
/// `policy.threshold_time_s`, then pick the highest E_b/I_0 (ties favor the
/// smaller id).
pub fn scan_and_select(
    ue: &Ue,
    authorized: &[FapId],
    topology: &Topology,
    plan: &FrequencyPlan,
    params: &RadioParams,
    policy: &CacPolicy,
) -> Option<(FapId, SinrSample)> {
    let mut best: Option<(FapId, SinrSample)> = None;
    for &id in authorized {
        let Some(fap) = topology.fap(id) else { continue };
        let Ok(sample) = sinr_at(ue, Station::Fap(id), topology, plan, params) else {
            continue;
        };
        if sample.ebio_db < policy.min_ebio_db {
            continue;
        }
        if estimate_dwell_time_s(ue, fap, topology.fap_radius_m) < policy.threshold_time_s {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bid, bs)) => sample.ebio_db > bs.ebio_db || (sample.ebio_db == bs.ebio_db && id < *bid),
        };
        if better {
            best = Some((id, sample));
        }
    }
    best
}

/// Step-7 admission decision. Checks run in fixed order (radio, backhaul,
/// velocity, time, ebio) and the first failure is the reported reason.
pub fn cac_admit(
    fap: &Fap,
    request: &HandoverRequest,
    policy: &CacPolicy,
    ue_speed_mps: f64,
    dwell_s: f64,
    radio_load: u32,
    backhaul_free_mbps: f64,
    flow_need_mbps: f64,
) -> CacDecision {
    if radio_load >= fap.radio_capacity {
        return CacDecision::Reject(RejectReason::Radio);
    }
    if backhaul_free_mbps < flow_need_mbps {
        return CacDecision::Reject(RejectReason::Backhaul);
    }
    if ue_speed_mps > policy.threshold_velocity_mps {
        return CacDecision::Reject(RejectReason::Velocity);
    }
    if dwell_s < policy.threshold_time_s {
        return CacDecision::Reject(RejectReason::Time);
    }
    if request.ebio_db < policy.min_ebio_db {
        return CacDecision::Reject(RejectReason::Ebio);
    }
    CacDecision::Admit
}

/// Scan effort: number of FAPs the UE must measure in detail, with or
/// without the authorized-list optimization.
pub fn count_scans(with_auth_list: bool, detected: &[FapId], authorized: &[FapId]) -> usize {
    if with_auth_list {
        let set: BTreeSet<FapId> = authorized.iter().copied().collect();
        detected.iter().filter(|id| set.contains(id)).count()
    } else {
        detected.len()
    }
}
