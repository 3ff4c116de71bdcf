//! Propagation, SINR / E_b/I_0 measurement, and Monte Carlo outage
//! estimation.
//!
//! Path loss is deterministic and distance based (urban macro model outdoors,
//! indoor model for femtocells), with optional log-normal shadowing. All
//! interference accounting happens in the linear power domain.

use thiserror::Error;

use crate::rng;
use crate::spectrum::{allocate_dedicated, allocate_proposed, allocate_shared, FrequencyPlan, SplitMode, Strategy};
use crate::topology::{
    place_faps, Attachment, CellId, DeploymentType, FapId, MacroCell, Point2D, ServiceClass, Station, Topology, Ue,
    UeId, Vec2,
};

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("station not found: {0}")]
    StationNotFound(String),
    #[error("station {0} has no sub-band assignment in the plan")]
    Unassigned(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Log-normal shadowing configuration. Values are drawn per (station, UE)
/// link from a dedicated seed so they stay fixed for the whole run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shadowing {
    pub sigma_macro_db: f64,
    pub sigma_femto_db: f64,
    pub seed: u64,
}

/// Radio-layer constants for one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub macro_tx_dbm: f64,
    pub fap_tx_dbm: f64,
    pub noise_floor_dbm: f64,
    /// Penetration loss per wall, dB.
    pub wall_loss_db: f64,
    pub sinr_outage_threshold_db: f64,
    pub processing_gain_db: f64,
    pub shadowing: Option<Shadowing>,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            macro_tx_dbm: 43.0,
            fap_tx_dbm: 10.0,
            noise_floor_dbm: -104.0,
            wall_loss_db: 10.0,
            sinr_outage_threshold_db: 5.0,
            processing_gain_db: 21.0,
            shadowing: None,
        }
    }
}

/// One SINR measurement at a UE toward a serving station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrSample {
    pub ue: UeId,
    pub station: Station,
    pub sinr_db: f64,
    /// Always `sinr_db + processing_gain_db`.
    pub ebio_db: f64,
}

/// Monte Carlo outage estimate for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageResult {
    pub strategy: Strategy,
    pub p_out: f64,
    pub ci95_halfwidth: f64,
    pub n_samples: usize,
}

/// Outage split by which tier served the dropped UE.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageBreakdown {
    pub aggregate: OutageResult,
    pub macro_tier: Option<OutageResult>,
    pub femto_tier: Option<OutageResult>,
}

/// Geometry of one Monte Carlo outage drop: a single macrocell with a fresh
/// random femtocell field per drop.
#[derive(Debug, Clone, Copy)]
pub struct DropConfig {
    pub macro_radius_m: f64,
    pub fap_count: usize,
    pub fap_radius_m: f64,
    pub split: SplitMode,
}

impl Default for DropConfig {
    fn default() -> Self {
        DropConfig {
            macro_radius_m: 500.0,
            fap_count: 100,
            fap_radius_m: crate::topology::DEFAULT_FAP_RADIUS_M,
            split: SplitMode::Balanced,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Urban macro path loss, distances clamped below 1 m.
pub fn path_loss_macro_db(d_m: f64) -> f64 {
    let d = d_m.max(1.0);
    128.1 + 37.6 * (d / 1000.0).log10()
}

/// Indoor femtocell path loss, distances clamped below 0.1 m.
pub fn path_loss_femto_db(d_m: f64, walls: u32, params: &RadioParams) -> f64 {
    let d = d_m.max(0.1);
    38.46 + 20.0 * d.log10() + walls as f64 * params.wall_loss_db
}

fn station_code(station: Station) -> u64 {
    match station {
        Station::Macro(CellId(id)) => (1u64 << 40) | id as u64,
        Station::Fap(FapId(id)) => (2u64 << 40) | id as u64,
    }
}

fn shadow_db(station: Station, shadow_key: u64, sh: &Shadowing) -> f64 {
    let sigma = match station {
        Station::Macro(_) => sh.sigma_macro_db,
        Station::Fap(_) => sh.sigma_femto_db,
    };
    let stream = rng::mix(sh.seed, "shadow-link", shadow_key);
    let mut r = rng::substream(stream, "shadow", station_code(station));
    sigma * rng::standard_normal(&mut r)
}

/// Downlink received power at `pos` from `station`, in dBm.
///
/// `shadow_key` identifies the receiver (UE id or Monte Carlo drop index) so
/// shadowing stays constant per link.
pub fn received_power_dbm(
    station: Station,
    pos: Point2D,
    shadow_key: u64,
    topology: &Topology,
    params: &RadioParams,
) -> Result<f64, RadioError> {
    let mut rx = match station {
        Station::Macro(id) => {
            let m = topology
                .macro_cell(id)
                .ok_or_else(|| RadioError::StationNotFound(format!("macro:{id}")))?;
            m.tx_power_dbm - path_loss_macro_db(m.center.distance(pos))
        }
        Station::Fap(id) => {
            let f = topology
                .fap(id)
                .ok_or_else(|| RadioError::StationNotFound(format!("femto:{id}")))?;
            let d = f.position.distance(pos);
            let walls = if d <= topology.fap_radius_m { 0 } else { 1 };
            f.tx_power_dbm - path_loss_femto_db(d, walls, params)
        }
    };
    if let Some(sh) = &params.shadowing {
        rx += shadow_db(station, shadow_key, sh);
    }
    Ok(rx)
}

/// Strongest admitting station at `pos`, with its received power in dBm.
///
/// Macros admit everyone; FAPs admit only CSG members. `csg_ue = None` means
/// open access (every FAP is a candidate).
pub fn best_server(
    pos: Point2D,
    csg_ue: Option<UeId>,
    shadow_key: u64,
    topology: &Topology,
    params: &RadioParams,
) -> Option<(Station, f64)> {
    let mut best: Option<(Station, f64)> = None;
    let mut consider = |station: Station, rx: f64| {
        let better = match best {
            None => true,
            Some((bs, brx)) => rx > brx || (rx == brx && station < bs),
        };
        if better {
            best = Some((station, rx));
        }
    };
    for m in &topology.macros {
        let s = Station::Macro(m.id);
        let rx = received_power_dbm(s, pos, shadow_key, topology, params).expect("station exists");
        consider(s, rx);
    }
    for f in &topology.faps {
        if let Some(ue) = csg_ue {
            if !f.csg_list.contains(&ue) {
                continue;
            }
        }
        let s = Station::Fap(f.id);
        let rx = received_power_dbm(s, pos, shadow_key, topology, params).expect("station exists");
        consider(s, rx);
    }
    best
}

/// SINR of `ue` toward `serving`: S over (co-channel interference + noise),
/// summed in the linear domain. Interferers are exactly the stations sharing
/// the serving station's sub-band in `plan`.
pub fn sinr_at(
    ue: &Ue,
    serving: Station,
    topology: &Topology,
    plan: &FrequencyPlan,
    params: &RadioParams,
) -> Result<SinrSample, RadioError> {
    let band = plan
        .band_of(serving)
        .ok_or_else(|| RadioError::Unassigned(serving.to_string()))?;
    let shadow_key = ue.id.0 as u64;
    let s_dbm = received_power_dbm(serving, ue.position, shadow_key, topology, params)?;
    let mut interference = 0.0;
    for m in &topology.macros {
        let st = Station::Macro(m.id);
        if st != serving && plan.band_of(st) == Some(band) {
            interference += db_to_linear(received_power_dbm(st, ue.position, shadow_key, topology, params)?);
        }
    }
    for f in &topology.faps {
        let st = Station::Fap(f.id);
        if st != serving && plan.band_of(st) == Some(band) {
            interference += db_to_linear(received_power_dbm(st, ue.position, shadow_key, topology, params)?);
        }
    }
    let sinr_db = linear_to_db(db_to_linear(s_dbm) / (interference + db_to_linear(params.noise_floor_dbm)));
    Ok(SinrSample {
        ue: ue.id,
        station: serving,
        sinr_db,
        ebio_db: sinr_db + params.processing_gain_db,
    })
}

fn normal_ci95(successes: usize, n: usize) -> (f64, f64) {
    let p = successes as f64 / n as f64;
    (p, 1.96 * (p * (1.0 - p) / n as f64).sqrt())
}

/// Builds the single-macrocell drop topology for Monte Carlo drop `i`.
fn drop_topology(cfg: &DropConfig, params: &RadioParams, seed: u64, i: u64) -> (Topology, Point2D) {
    let cell = MacroCell {
        id: CellId(0),
        center: Point2D::new(0.0, 0.0),
        radius_m: cfg.macro_radius_m,
        subband: crate::spectrum::SubBand::A,
        tx_power_dbm: params.macro_tx_dbm,
    };
    let mut faps = place_faps(&cell, cfg.fap_count, rng::mix(seed, "drop-fap", i), 0);
    for f in &mut faps {
        f.tx_power_dbm = params.fap_tx_dbm;
    }
    let mut topo = Topology::empty(DeploymentType::TypeC);
    topo.fap_radius_m = cfg.fap_radius_m;
    topo.macros.push(cell);
    topo.faps = faps;
    let mut ue_rng = rng::substream(seed, "drop-ue", i);
    let ue_pos = crate::topology::sample_in_disc(&mut ue_rng, topo.macros[0].center, cfg.macro_radius_m);
    (topo, ue_pos)
}

fn plan_for(topology: &Topology, strategy: Strategy, split: SplitMode, seed: u64, i: u64) -> FrequencyPlan {
    match strategy {
        Strategy::Shared => allocate_shared(topology).expect("drop topology is TypeC"),
        Strategy::Dedicated => allocate_dedicated(topology).expect("drop topology is TypeC"),
        Strategy::Proposed => {
            allocate_proposed(topology, rng::mix(seed, "drop-plan", i), split).expect("drop topology is TypeC")
        }
    }
}

/// Monte Carlo outage probability with per-tier breakdown.
///
/// Each drop places a fresh femtocell field and one open-access UE uniformly
/// in the macrocell, attaches it to the strongest station, and counts an
/// outage when best-server SINR falls below the configured threshold. Drop
/// `i` depends only on `(seed, i)`, so results are independent of execution
/// order and identical across strategies sharing a seed.
pub fn outage_probability_detailed(
    cfg: &DropConfig,
    strategy: Strategy,
    params: &RadioParams,
    n_drops: usize,
    seed: u64,
) -> Result<OutageBreakdown, RadioError> {
    if n_drops == 0 {
        return Err(RadioError::InvalidParameter("n_drops must be >= 1".into()));
    }
    let mut outages = 0usize;
    let mut tier_n = [0usize; 2];
    let mut tier_out = [0usize; 2];
    for i in 0..n_drops as u64 {
        let (topology, ue_pos) = drop_topology(cfg, params, seed, i);
        let plan = plan_for(&topology, strategy, cfg.split, seed, i);
        let (serving, _) = best_server(ue_pos, None, i, &topology, params).expect("macro always present");
        let ue = Ue {
            id: UeId(i as u32),
            position: ue_pos,
            velocity_mps: Vec2::ZERO,
            attachment: Attachment::Detached,
            service_class: ServiceClass::Data,
        };
        let sample = sinr_at(&ue, serving, &topology, &plan, params)?;
        let tier = match serving {
            Station::Macro(_) => 0,
            Station::Fap(_) => 1,
        };
        tier_n[tier] += 1;
        if sample.sinr_db < params.sinr_outage_threshold_db {
            outages += 1;
            tier_out[tier] += 1;
        }
    }
    let (p, ci) = normal_ci95(outages, n_drops);
    let tier_result = |t: usize| {
        (tier_n[t] > 0).then(|| {
            let (p, ci) = normal_ci95(tier_out[t], tier_n[t]);
            OutageResult {
                strategy,
                p_out: p,
                ci95_halfwidth: ci,
                n_samples: tier_n[t],
            }
        })
    };
    Ok(OutageBreakdown {
        aggregate: OutageResult {
            strategy,
            p_out: p,
            ci95_halfwidth: ci,
            n_samples: n_drops,
        },
        macro_tier: tier_result(0),
        femto_tier: tier_result(1),
    })
}

/// Aggregate-only variant of [`outage_probability_detailed`].
pub fn outage_probability(
    cfg: &DropConfig,
    strategy: Strategy,
    params: &RadioParams,
    n_drops: usize,
    seed: u64,
) -> Result<OutageResult, RadioError> {
    Ok(outage_probability_detailed(cfg, strategy, params, n_drops, seed)?.aggregate)
}
