//! Frequency-plan construction for the three allocation strategies, plus the
//! SON-style reactions: sub-band reassignment when a FAP is installed and
//! neighbor power reduction when a UE reports excessive interference.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::radio::{received_power_dbm, sinr_at, RadioError, RadioParams};
use crate::rng::substream;
use crate::topology::{neighbors_within, CellId, DeploymentType, FapId, Station, Topology, UeId};

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("invalid deployment: {0}")]
    InvalidDeployment(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Radio(#[from] RadioError),
}

/// One third of the licensed band, or the whole-band labels used by the
/// shared and dedicated strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubBand {
    A,
    B,
    C,
    MacroAll,
    FemtoAll,
}

impl std::fmt::Display for SubBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SubBand::A => "A",
            SubBand::B => "B",
            SubBand::C => "C",
            SubBand::MacroAll => "MACRO_ALL",
            SubBand::FemtoAll => "FEMTO_ALL",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for SubBand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(SubBand::A),
            "B" => Ok(SubBand::B),
            "C" => Ok(SubBand::C),
            "MACRO_ALL" => Ok(SubBand::MacroAll),
            "FEMTO_ALL" => Ok(SubBand::FemtoAll),
            other => Err(format!("unknown sub-band {other:?}")),
        }
    }
}

/// Frequency allocation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Shared,
    Dedicated,
    Proposed,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Shared, Strategy::Dedicated, Strategy::Proposed];
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Shared => "shared",
            Strategy::Dedicated => "dedicated",
            Strategy::Proposed => "proposed",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(Strategy::Shared),
            "dedicated" => Ok(Strategy::Dedicated),
            "proposed" => Ok(Strategy::Proposed),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// How the proposed strategy splits FAPs between their two permitted
/// sub-bands: deterministically balanced (±1) or independently random.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Balanced,
    Random,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(SplitMode::Balanced),
            "random" => Ok(SplitMode::Random),
            other => Err(format!("unknown proposed_split mode {other:?}")),
        }
    }
}

/// A complete sub-band assignment for every station.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPlan {
    pub strategy: Strategy,
    pub macro_assign: BTreeMap<CellId, SubBand>,
    pub fap_assign: BTreeMap<FapId, SubBand>,
}

impl FrequencyPlan {
    pub fn empty(strategy: Strategy) -> Self {
        FrequencyPlan {
            strategy,
            macro_assign: BTreeMap::new(),
            fap_assign: BTreeMap::new(),
        }
    }

    pub fn band_of(&self, station: Station) -> Option<SubBand> {
        match station {
            Station::Macro(id) => self.macro_assign.get(&id).copied(),
            Station::Fap(id) => self.fap_assign.get(&id).copied(),
        }
    }

    /// True when every station in `topology` has an assignment.
    pub fn is_total(&self, topology: &Topology) -> bool {
        topology.macros.iter().all(|m| self.macro_assign.contains_key(&m.id))
            && topology.faps.iter().all(|f| self.fap_assign.contains_key(&f.id))
    }
}

fn require_type_c(topology: &Topology) -> Result<(), SpectrumError> {
    if topology.deployment_type != DeploymentType::TypeC {
        return Err(SpectrumError::InvalidDeployment(format!(
            "strategy allocation requires a TypeC deployment, got {:?}",
            topology.deployment_type
        )));
    }
    Ok(())
}

/// Shared allocation: one band for everything.
pub fn allocate_shared(topology: &Topology) -> Result<FrequencyPlan, SpectrumError> {
    require_type_c(topology)?;
    let mut plan = FrequencyPlan::empty(Strategy::Shared);
    for m in &topology.macros {
        plan.macro_assign.insert(m.id, SubBand::MacroAll);
    }
    for f in &topology.faps {
        plan.fap_assign.insert(f.id, SubBand::MacroAll);
    }
    Ok(plan)
}

/// Dedicated allocation: macros and femtos on disjoint bands.
pub fn allocate_dedicated(topology: &Topology) -> Result<FrequencyPlan, SpectrumError> {
    require_type_c(topology)?;
    let mut plan = FrequencyPlan::empty(Strategy::Dedicated);
    for m in &topology.macros {
        plan.macro_assign.insert(m.id, SubBand::MacroAll);
    }
    for f in &topology.faps {
        plan.fap_assign.insert(f.id, SubBand::FemtoAll);
    }
    Ok(plan)
}

/// The two sub-bands a FAP may use under `proposed`, in label order.
fn permitted_options(macro_band: SubBand) -> Result<[SubBand; 2], SpectrumError> {
    match macro_band {
        SubBand::A => Ok([SubBand::B, SubBand::C]),
        SubBand::B => Ok([SubBand::A, SubBand::C]),
        SubBand::C => Ok([SubBand::A, SubBand::B]),
        other => Err(SpectrumError::InvalidPlan(format!(
            "macro sub-band must be one of A/B/C for the proposed strategy, got {other}"
        ))),
    }
}

/// Proposed allocation: macros keep their re-use-3 sub-bands; each FAP uses
/// one of the two sub-bands its overlay macro does not, split roughly in half
/// per macrocell.
///
/// `SplitMode::Balanced` alternates over a seeded shuffle so the two counts
/// differ by at most 1; `SplitMode::Random` draws each FAP independently.
pub fn allocate_proposed(topology: &Topology, seed: u64, split: SplitMode) -> Result<FrequencyPlan, SpectrumError> {
    require_type_c(topology)?;
    let mut seen = BTreeMap::new();
    for m in &topology.macros {
        if let Some(prev) = seen.insert(m.subband, m.id) {
            return Err(SpectrumError::InvalidPlan(format!(
                "macros {prev} and {} share sub-band {}; re-use-3 assignment required",
                m.id, m.subband
            )));
        }
        permitted_options(m.subband)?;
    }
    let mut plan = FrequencyPlan::empty(Strategy::Proposed);
    for m in &topology.macros {
        plan.macro_assign.insert(m.id, m.subband);
    }
    for m in &topology.macros {
        let options = permitted_options(m.subband)?;
        let mut members: Vec<FapId> = topology
            .faps
            .iter()
            .filter(|f| f.overlay_macro == Some(m.id))
            .map(|f| f.id)
            .collect();
        let mut rng = substream(seed, "proposed-split", m.id.0 as u64);
        match split {
            SplitMode::Balanced => {
                members.shuffle(&mut rng);
                let start = rng.gen_range(0..2usize);
                for (i, id) in members.iter().enumerate() {
                    plan.fap_assign.insert(*id, options[(start + i) % 2]);
                }
            }
            SplitMode::Random => {
                for id in &members {
                    plan.fap_assign.insert(*id, options[rng.gen_range(0..2usize)]);
                }
            }
        }
    }
    for f in &topology.faps {
        if f.overlay_macro.is_none() {
            return Err(SpectrumError::InvalidPlan(format!(
                "fap {} has no overlay macro; proposed allocation undefined",
                f.id
            )));
        }
    }
    Ok(plan)
}

/// Sub-band choice for a newly installed FAP: of its two permitted bands,
/// pick the one with fewest co-channel neighbors within `neighbor_range_m`;
/// ties go to the globally less-used band, then label order. Existing
/// assignments are untouched.
pub fn son_reassign_on_install(
    plan: &FrequencyPlan,
    new_fap: FapId,
    topology: &Topology,
    neighbor_range_m: f64,
) -> Result<FrequencyPlan, SpectrumError> {
    if plan.strategy != Strategy::Proposed {
        return Err(SpectrumError::InvalidPlan(format!(
            "son_reassign_on_install applies to proposed plans, got {}",
            plan.strategy
        )));
    }
    let fap = topology
        .fap(new_fap)
        .ok_or_else(|| SpectrumError::NotFound(format!("fap {new_fap}")))?;
    let overlay = fap
        .overlay_macro
        .ok_or_else(|| SpectrumError::InvalidPlan(format!("fap {new_fap} has no overlay macro")))?;
    let macro_band = plan
        .band_of(Station::Macro(overlay))
        .ok_or_else(|| SpectrumError::InvalidPlan(format!("macro {overlay} missing from plan")))?;
    let options = permitted_options(macro_band)?;

    let neighbors = neighbors_within(topology, fap.position, neighbor_range_m);
    let neighbor_count = |band: SubBand| {
        neighbors
            .iter()
            .filter(|&&id| id != new_fap && plan.band_of(Station::Fap(id)) == Some(band))
            .count()
    };
    let global_count = |band: SubBand| {
        plan.fap_assign
            .iter()
            .filter(|&(id, b)| *id != new_fap && *b == band)
            .count()
    };

    let chosen = options
        .into_iter()
        .min_by_key(|&band| (neighbor_count(band), global_count(band), band))
        .expect("two options");
    let mut next = plan.clone();
    next.fap_assign.insert(new_fap, chosen);
    Ok(next)
}

/// Result of a power-reconfiguration request.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerReconfigOutcome {
    /// FAPs whose transmit power changed, with their new power in dBm.
    pub new_powers: BTreeMap<FapId, f64>,
    /// Whether the victim reached the target SINR.
    pub achieved: bool,
    pub final_sinr_db: f64,
}

/// Reduces co-channel neighbor FAP powers in 1 dB steps (strongest received
/// interferer first) until the victim UE's SINR toward `master` reaches
/// `target_sinr_db` or every neighbor sits at `floor_dbm`. The master's own
/// power is never modified; failure to reach the target is reported in the
/// outcome, not as an error.
pub fn son_power_reconfigure(
    master: FapId,
    victim: UeId,
    topology: &Topology,
    plan: &FrequencyPlan,
    params: &RadioParams,
    target_sinr_db: f64,
    floor_dbm: f64,
) -> Result<PowerReconfigOutcome, SpectrumError> {
    let ue = topology
        .ue(victim)
        .ok_or_else(|| SpectrumError::NotFound(format!("ue {victim}")))?
        .clone();
    let serving = Station::Fap(master);
    let band = plan
        .band_of(serving)
        .ok_or_else(|| SpectrumError::InvalidPlan(format!("fap {master} missing from plan")))?;
    topology
        .fap(master)
        .ok_or_else(|| SpectrumError::NotFound(format!("fap {master}")))?;

    let mut work = topology.clone();
    let mut sinr = sinr_at(&ue, serving, &work, plan, params)?.sinr_db;
    while sinr < target_sinr_db {
        // Strongest co-channel neighbor still above the floor.
        let mut strongest: Option<(f64, FapId)> = None;
        for f in &work.faps {
            if f.id == master || plan.band_of(Station::Fap(f.id)) != Some(band) {
                continue;
            }
            if f.tx_power_dbm <= floor_dbm {
                continue;
            }
            let rx = received_power_dbm(Station::Fap(f.id), ue.position, ue.id.0 as u64, &work, params)?;
            if strongest.map_or(true, |(best, _)| rx > best) {
                strongest = Some((rx, f.id));
            }
        }
        let Some((_, target)) = strongest else {
            break;
        };
        let f = work.fap_mut(target).expect("fap exists");
        f.tx_power_dbm = (f.tx_power_dbm - 1.0).max(floor_dbm);
        sinr = sinr_at(&ue, serving, &work, plan, params)?.sinr_db;
    }

    let mut new_powers = BTreeMap::new();
    for (orig, cur) in topology.faps.iter().zip(&work.faps) {
        if orig.tx_power_dbm != cur.tx_power_dbm {
            new_powers.insert(cur.id, cur.tx_power_dbm);
        }
    }
    Ok(PowerReconfigOutcome {
        new_powers,
        achieved: sinr >= target_sinr_db,
        final_sinr_db: sinr,
    })
}
