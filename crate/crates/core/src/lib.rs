//! Deterministic discrete-event simulator of an integrated femtocell /
//! macrocell network: frequency allocation and outage comparison, the
//! macrocell-to-femtocell handover call flow with call admission control,
//! and SLA-brokered xDSL backhaul QoS.

pub mod backhaul;
pub mod engine;
pub mod handover;
pub mod mobility;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod spectrum;
pub mod topology;

pub use backhaul::{BrokerState, FlowId, LinkScheduler, Packet, Sla, WfqScheduler, XdslLink};
pub use engine::{
    merge_outputs, outage_csv, outage_sweep, run_replicates, run_scenario, write_outputs, MetricsReport, RunOutput,
};
pub use handover::{CacDecision, CacPolicy, HandoverFsm, HandoverKind, RegistrationDb, RejectReason};
pub use radio::{OutageResult, RadioParams, SinrSample};
pub use scenario::{load_scenario, parse_scenario_str, ScenarioConfig, ScenarioError, SchedulerKind};
pub use spectrum::{FrequencyPlan, SplitMode, Strategy, SubBand};
pub use topology::{
    CellId, DeploymentType, Fap, FapId, LinkId, MacroCell, Point2D, ServiceClass, Station, Topology, Ue, UeId, Vec2,
};
