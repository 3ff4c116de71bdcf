//! Network geometry: the three-macrocell cluster, femto access point and UE
//! placement, and spatial queries.
//!
//! Cells are discs on a flat plane. All placement is driven by named RNG
//! sub-streams so a given (input, seed) pair always yields the same layout.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::rng::substream;
use crate::spectrum::SubBand;

/// Default FAP transmit power in dBm.
pub const DEFAULT_FAP_TX_DBM: f64 = 10.0;
/// Default macro transmit power in dBm.
pub const DEFAULT_MACRO_TX_DBM: f64 = 43.0;
/// Default number of simultaneous users a FAP can serve.
pub const DEFAULT_FAP_RADIO_CAPACITY: u32 = 4;
/// Default femtocell coverage disc radius in meters.
pub const DEFAULT_FAP_RADIUS_M: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

/// A point on the simulation plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Point2D { x, y }
    }

    pub fn distance(&self, other: Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A velocity vector in m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Magnitude in m/s.
    pub fn speed(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FapId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for FapId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for UeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for LinkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Deployment configurations: a single stand-alone femtocell (A), a field of
/// overlapping femtocells with no macro layer (B), or femtocells overlaid on
/// the macrocell cluster (C).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeploymentType {
    TypeA,
    TypeB,
    TypeC,
}

impl std::str::FromStr for DeploymentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        let norm = norm.strip_prefix("type").unwrap_or(&norm).trim_start_matches('_');
        match norm {
            "a" => Ok(DeploymentType::TypeA),
            "b" => Ok(DeploymentType::TypeB),
            "c" => Ok(DeploymentType::TypeC),
            _ => Err(format!("unknown deployment type {s:?}")),
        }
    }
}

/// Traffic class carried by a UE's flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ServiceClass {
    Voice,
    Video,
    Data,
}

impl ServiceClass {
    pub const ALL: [ServiceClass; 3] = [ServiceClass::Voice, ServiceClass::Video, ServiceClass::Data];
}

impl std::fmt::Display for ServiceClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ServiceClass::Voice => "voice",
            ServiceClass::Video => "video",
            ServiceClass::Data => "data",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for ServiceClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "voice" => Ok(ServiceClass::Voice),
            "video" => Ok(ServiceClass::Video),
            "data" => Ok(ServiceClass::Data),
            other => Err(format!("unknown service class {other:?}")),
        }
    }
}

/// One macrocell of the re-use-3 cluster.
#[derive(Debug, Clone)]
pub struct MacroCell {
    pub id: CellId,
    pub center: Point2D,
    pub radius_m: f64,
    pub subband: SubBand,
    pub tx_power_dbm: f64,
}

/// A femto access point and its home-gateway attachment.
#[derive(Debug, Clone)]
pub struct Fap {
    pub id: FapId,
    pub position: Point2D,
    pub overlay_macro: Option<CellId>,
    /// Assigned later by the spectrum module; `None` until planned.
    pub subband: Option<SubBand>,
    pub tx_power_dbm: f64,
    pub radio_capacity: u32,
    pub csg_list: BTreeSet<UeId>,
    pub backhaul_link: LinkId,
}

/// Which station a UE is currently served by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Attachment {
    Macro(CellId),
    Femto(FapId),
    Detached,
}

/// A station reference usable for both tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Station {
    Macro(CellId),
    Fap(FapId),
}

impl std::fmt::Display for Station {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Station::Macro(id) => write!(f, "macro:{id}"),
            Station::Fap(id) => write!(f, "femto:{id}"),
        }
    }
}

impl Attachment {
    pub fn station(&self) -> Option<Station> {
        match self {
            Attachment::Macro(id) => Some(Station::Macro(*id)),
            Attachment::Femto(id) => Some(Station::Fap(*id)),
            Attachment::Detached => None,
        }
    }
}

/// A mobile user.
#[derive(Debug, Clone)]
pub struct Ue {
    pub id: UeId,
    pub position: Point2D,
    pub velocity_mps: Vec2,
    pub attachment: Attachment,
    pub service_class: ServiceClass,
}

/// The complete static layout of one simulation.
#[derive(Debug, Clone)]
pub struct Topology {
    pub macros: Vec<MacroCell>,
    pub faps: Vec<Fap>,
    pub ues: Vec<Ue>,
    pub deployment_type: DeploymentType,
    /// Nominal femtocell coverage radius (shared by all FAPs).
    pub fap_radius_m: f64,
}

impl Topology {
    pub fn empty(deployment_type: DeploymentType) -> Self {
        Topology {
            macros: Vec::new(),
            faps: Vec::new(),
            ues: Vec::new(),
            deployment_type,
            fap_radius_m: DEFAULT_FAP_RADIUS_M,
        }
    }

    pub fn macro_cell(&self, id: CellId) -> Option<&MacroCell> {
        self.macros.iter().find(|m| m.id == id)
    }

    pub fn fap(&self, id: FapId) -> Option<&Fap> {
        self.faps.iter().find(|f| f.id == id)
    }

    pub fn fap_mut(&mut self, id: FapId) -> Option<&mut Fap> {
        self.faps.iter_mut().find(|f| f.id == id)
    }

    pub fn ue(&self, id: UeId) -> Option<&Ue> {
        self.ues.iter().find(|u| u.id == id)
    }

    /// Macrocell whose center is closest to `p`.
    pub fn nearest_macro(&self, p: Point2D) -> Option<CellId> {
        self.macros
            .iter()
            .map(|m| (m.center.distance(p), m.id))
            .min_by(|a, b| a.partial_cmp(b).expect("finite distances"))
            .map(|(_, id)| id)
    }

    /// Checks the deployment-type and per-station structural invariants.
    pub fn validate(&self) -> Result<(), TopologyError> {
        let bad = |msg: String| Err(TopologyError::InvalidTopology(msg));
        match self.deployment_type {
            DeploymentType::TypeA => {
                if self.faps.len() != 1 || !self.macros.is_empty() {
                    return bad(format!(
                        "TypeA requires exactly 1 FAP and 0 macros, got {} FAPs, {} macros",
                        self.faps.len(),
                        self.macros.len()
                    ));
                }
            }
            DeploymentType::TypeB => {
                if self.faps.len() < 2 || !self.macros.is_empty() {
                    return bad(format!(
                        "TypeB requires >=2 FAPs and 0 macros, got {} FAPs, {} macros",
                        self.faps.len(),
                        self.macros.len()
                    ));
                }
            }
            DeploymentType::TypeC => {
                if self.macros.is_empty() {
                    return bad("TypeC requires at least 1 macrocell".into());
                }
            }
        }
        if self.fap_radius_m <= 0.0 {
            return bad(format!("fap_radius_m must be positive, got {}", self.fap_radius_m));
        }
        for m in &self.macros {
            if m.radius_m <= 0.0 {
                return bad(format!("macro {} has non-positive radius", m.id));
            }
        }
        for f in &self.faps {
            if !(2..=6).contains(&f.radio_capacity) {
                return bad(format!(
                    "fap {} radio_capacity {} outside 2..=6",
                    f.id, f.radio_capacity
                ));
            }
            if let Some(cell) = f.overlay_macro {
                let m = self.macro_cell(cell).ok_or_else(|| {
                    TopologyError::InvalidTopology(format!("fap {} overlay macro {cell} missing", f.id))
                })?;
                if f.position.distance(m.center) > m.radius_m + 1e-9 {
                    return bad(format!("fap {} lies outside its overlay macrocell {cell}", f.id));
                }
            }
        }
        for u in &self.ues {
            match u.attachment {
                Attachment::Macro(c) if self.macro_cell(c).is_none() => {
                    return bad(format!("ue {} attached to missing macro {c}", u.id));
                }
                Attachment::Femto(f) if self.fap(f).is_none() => {
                    return bad(format!("ue {} attached to missing fap {f}", u.id));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Uniform point in the disc (center, radius) via the r = R·√u transform.
pub(crate) fn sample_in_disc<R: Rng>(rng: &mut R, center: Point2D, radius: f64) -> Point2D {
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    let r = radius * u.sqrt();
    let theta = std::f64::consts::TAU * v;
    Point2D::new(center.x + r * theta.cos(), center.y + r * theta.sin())
}

/// Builds the three-macrocell cluster with frequency re-use factor 3.
///
/// Cell 0 sits at the origin; the other two complete an equilateral triangle
/// with inter-site distance √3·radius. Sub-bands A, B, C are assigned in id
/// order.
pub fn build_macro_cluster(cluster_radius_m: f64, tx_power_dbm: f64) -> Result<Vec<MacroCell>, TopologyError> {
    if cluster_radius_m <= 0.0 {
        return Err(TopologyError::InvalidParameter(format!(
            "cluster radius must be positive, got {cluster_radius_m}"
        )));
    }
    let d = 3f64.sqrt() * cluster_radius_m;
    let centers = [
        Point2D::new(0.0, 0.0),
        Point2D::new(d, 0.0),
        Point2D::new(d / 2.0, d * 3f64.sqrt() / 2.0),
    ];
    let bands = [SubBand::A, SubBand::B, SubBand::C];
    Ok(centers
        .iter()
        .zip(bands)
        .enumerate()
        .map(|(i, (&center, subband))| MacroCell {
            id: CellId(i as u32),
            center,
            radius_m: cluster_radius_m,
            subband,
            tx_power_dbm,
        })
        .collect())
}

/// Places `count` FAPs uniformly over the macrocell disc.
///
/// Ids start at `first_id` and each FAP gets its own backhaul link with the
/// same numeric id. Sub-bands are left unassigned for the spectrum module.
pub fn place_faps(macro_cell: &MacroCell, count: usize, seed: u64, first_id: u32) -> Vec<Fap> {
    (0..count)
        .map(|i| {
            let id = first_id + i as u32;
            let stream = ((macro_cell.id.0 as u64) << 32) | id as u64;
            let mut rng = substream(seed, "fap-pos", stream);
            Fap {
                id: FapId(id),
                position: sample_in_disc(&mut rng, macro_cell.center, macro_cell.radius_m),
                overlay_macro: Some(macro_cell.id),
                subband: None,
                tx_power_dbm: DEFAULT_FAP_TX_DBM,
                radio_capacity: DEFAULT_FAP_RADIO_CAPACITY,
                csg_list: BTreeSet::new(),
                backhaul_link: LinkId(id),
            }
        })
        .collect()
}

/// Discs making up the UE placement region: macro discs for TypeC, FAP
/// coverage discs otherwise.
fn placement_discs(topology: &Topology) -> Vec<(Point2D, f64)> {
    match topology.deployment_type {
        DeploymentType::TypeC => topology.macros.iter().map(|m| (m.center, m.radius_m)).collect(),
        _ => topology
            .faps
            .iter()
            .map(|f| (f.position, topology.fap_radius_m))
            .collect(),
    }
}

/// Places `count` UEs uniformly over the union of the deployment's coverage
/// discs and attaches each to its strongest admitting station.
pub fn place_ues(
    topology: &Topology,
    count: usize,
    seed: u64,
    params: &crate::radio::RadioParams,
) -> Result<Vec<Ue>, TopologyError> {
    let discs = placement_discs(topology);
    if discs.is_empty() && count > 0 {
        return Err(TopologyError::InvalidTopology(
            "cannot place UEs: topology has no coverage discs".into(),
        ));
    }
    let (min_x, max_x, min_y, max_y) = discs.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(ax, bx, ay, by), (c, r)| (ax.min(c.x - r), bx.max(c.x + r), ay.min(c.y - r), by.max(c.y + r)),
    );
    let mut ues = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = substream(seed, "ue-pos", i as u64);
        // Rejection sampling over the bounding box keeps the distribution
        // uniform over the union even where discs overlap.
        let position = loop {
            let p = Point2D::new(rng.gen_range(min_x..=max_x), rng.gen_range(min_y..=max_y));
            if discs.iter().any(|(c, r)| c.distance(p) <= *r) {
                break p;
            }
        };
        let id = UeId(i as u32);
        let attachment = match crate::radio::best_server(position, Some(id), id.0 as u64, topology, params) {
            Some((Station::Macro(c), _)) => Attachment::Macro(c),
            Some((Station::Fap(f), _)) => Attachment::Femto(f),
            None => Attachment::Detached,
        };
        ues.push(Ue {
            id,
            position,
            velocity_mps: Vec2::ZERO,
            attachment,
            service_class: ServiceClass::Data,
        });
    }
    Ok(ues)
}

/// FAP ids within `range_m` of `p`, sorted by distance then id.
pub fn neighbors_within(topology: &Topology, p: Point2D, range_m: f64) -> Vec<FapId> {
    let mut hits: Vec<(f64, FapId)> = topology
        .faps
        .iter()
        .filter_map(|f| {
            let d = f.position.distance(p);
            (d <= range_m).then_some((d, f.id))
        })
        .collect();
    hits.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    hits.into_iter().map(|(_, id)| id).collect()
}
