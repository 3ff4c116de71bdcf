//! Scenario files: plain-text INI-style configuration for simulation runs.
//!
//! Section headers group keys for readability but every key name is global
//! and unique, so sweep overrides can address any knob as `key=value`.

use std::collections::BTreeMap;
use std::path::Path;

use ini::Ini;
use thiserror::Error;

use crate::backhaul::{default_weights, Sla};
use crate::handover::CacPolicy;
use crate::mobility::MobilityParams;
use crate::radio::{RadioParams, Shadowing};
use crate::spectrum::{SplitMode, Strategy};
use crate::topology::{DeploymentType, ServiceClass};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Which packet scheduler the home gateway runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    Wfq,
    Fifo,
}

impl std::str::FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wfq" => Ok(SchedulerKind::Wfq),
            "fifo" => Ok(SchedulerKind::Fifo),
            other => Err(format!("unknown scheduler '{other}' (expected wfq or fifo)")),
        }
    }
}

/// Complete run configuration with defaults for every key.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    // [topology]
    pub deployment_type: DeploymentType,
    pub macro_radius_m: f64,
    pub fap_count: u32,
    pub ue_count: u32,
    pub fap_radius_m: f64,
    pub radio_capacity: u32,
    pub seed: u64,
    /// Seed initial UE positions inside the waypoint field instead of the
    /// macro coverage discs, so femtocell encounters happen at a useful rate.
    pub ue_near_faps: bool,
    // [radio]
    pub macro_tx_dbm: f64,
    pub fap_tx_dbm: f64,
    pub noise_floor_dbm: f64,
    pub wall_loss_db: f64,
    pub sinr_threshold_db: f64,
    pub processing_gain_db: f64,
    pub shadowing_enabled: bool,
    pub shadowing_sigma_macro_db: f64,
    pub shadowing_sigma_femto_db: f64,
    // [spectrum]
    pub strategy: Strategy,
    pub proposed_split: SplitMode,
    // [mobility]
    pub v_min_mps: f64,
    pub v_max_mps: f64,
    pub pause_s: f64,
    // [handover]
    pub threshold_velocity_mps: f64,
    pub threshold_time_s: f64,
    pub min_ebio_db: f64,
    pub hop_latency_ms: f64,
    pub detect_floor_dbm: f64,
    pub scan_interval_s: f64,
    pub neighbor_range_m: f64,
    pub authorized_fraction: f64,
    // [backhaul]
    pub xdsl_capacity_mbps: f64,
    pub sla_femto_reserved_mbps: f64,
    pub wfq_weights: BTreeMap<ServiceClass, f64>,
    pub scheduler: SchedulerKind,
    pub queue_limit_packets: usize,
    pub renegotiation_period_s: f64,
    pub monitor_window_s: f64,
    pub background_data_mbps: f64,
    // [traffic]
    pub voice_fraction: f64,
    pub video_fraction: f64,
    // [engine]
    pub sim_duration_s: f64,
    pub snapshot_interval_s: f64,
    // [outage]
    pub n_drops: u32,
    pub strategies: Vec<Strategy>,
    /// FAP counts for the outage sweep; empty means "use fap_count".
    pub fap_counts: Vec<u32>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            deployment_type: DeploymentType::TypeC,
            macro_radius_m: 500.0,
            fap_count: 10,
            ue_count: 20,
            fap_radius_m: 20.0,
            radio_capacity: 4,
            seed: 1,
            ue_near_faps: true,
            macro_tx_dbm: 43.0,
            fap_tx_dbm: 10.0,
            noise_floor_dbm: -104.0,
            wall_loss_db: 10.0,
            sinr_threshold_db: 5.0,
            processing_gain_db: 21.0,
            shadowing_enabled: false,
            shadowing_sigma_macro_db: 8.0,
            shadowing_sigma_femto_db: 4.0,
            strategy: Strategy::Proposed,
            proposed_split: SplitMode::Balanced,
            v_min_mps: 0.5,
            v_max_mps: 1.5,
            pause_s: 5.0,
            threshold_velocity_mps: 10.0,
            threshold_time_s: 5.0,
            min_ebio_db: 7.0,
            hop_latency_ms: 10.0,
            detect_floor_dbm: -80.0,
            scan_interval_s: 1.0,
            neighbor_range_m: 100.0,
            authorized_fraction: 0.75,
            xdsl_capacity_mbps: 8.0,
            sla_femto_reserved_mbps: 2.0,
            wfq_weights: default_weights(),
            scheduler: SchedulerKind::Wfq,
            queue_limit_packets: 64,
            renegotiation_period_s: 60.0,
            monitor_window_s: 10.0,
            background_data_mbps: 0.0,
            voice_fraction: 0.4,
            video_fraction: 0.2,
            sim_duration_s: 300.0,
            snapshot_interval_s: 10.0,
            n_drops: 2000,
            strategies: vec![Strategy::Shared, Strategy::Dedicated, Strategy::Proposed],
            fap_counts: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    /// Radio parameter bundle for the propagation layer.
    pub fn radio_params(&self) -> RadioParams {
        RadioParams {
            macro_tx_dbm: self.macro_tx_dbm,
            fap_tx_dbm: self.fap_tx_dbm,
            noise_floor_dbm: self.noise_floor_dbm,
            wall_loss_db: self.wall_loss_db,
            sinr_outage_threshold_db: self.sinr_threshold_db,
            processing_gain_db: self.processing_gain_db,
            shadowing: self.shadowing_enabled.then_some(Shadowing {
                sigma_macro_db: self.shadowing_sigma_macro_db,
                sigma_femto_db: self.shadowing_sigma_femto_db,
                seed: self.seed,
            }),
        }
    }

    pub fn cac_policy(&self) -> CacPolicy {
        CacPolicy {
            threshold_time_s: self.threshold_time_s,
            threshold_velocity_mps: self.threshold_velocity_mps,
            min_ebio_db: self.min_ebio_db,
        }
    }

    pub fn mobility_params(&self) -> MobilityParams {
        MobilityParams {
            v_min_mps: self.v_min_mps,
            v_max_mps: self.v_max_mps,
            pause_s: self.pause_s,
        }
    }

    pub fn sla(&self) -> Sla {
        Sla {
            femto_reserved_mbps: self.sla_femto_reserved_mbps,
            class_weights: self.wfq_weights.clone(),
            renegotiation_period_s: self.renegotiation_period_s,
            monitor_window_s: self.monitor_window_s,
        }
    }

    /// FAP counts the outage sweep covers.
    pub fn outage_fap_counts(&self) -> Vec<u32> {
        if self.fap_counts.is_empty() {
            vec![self.fap_count]
        } else {
            self.fap_counts.clone()
        }
    }

    /// Sets one key from its string form. Unknown keys and malformed values
    /// are reported with the key name.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .trim()
                .parse::<T>()
                .map_err(|_| format!("{key}: cannot parse '{value}'"))
        }
        fn flag(key: &str, value: &str) -> Result<bool, String> {
            match value.trim().to_ascii_lowercase().as_str() {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                other => Err(format!("{key}: cannot parse '{other}' as a boolean")),
            }
        }
        match key {
            "deployment_type" => self.deployment_type = value.trim().parse().map_err(|e| format!("{key}: {e}"))?,
            "macro_radius_m" => self.macro_radius_m = num(key, value)?,
            "fap_count" => self.fap_count = num(key, value)?,
            "ue_count" => self.ue_count = num(key, value)?,
            "fap_radius_m" => self.fap_radius_m = num(key, value)?,
            "radio_capacity" => self.radio_capacity = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "ue_near_faps" => self.ue_near_faps = flag(key, value)?,
            "macro_tx_dbm" => self.macro_tx_dbm = num(key, value)?,
            "fap_tx_dbm" => self.fap_tx_dbm = num(key, value)?,
            "noise_floor_dbm" => self.noise_floor_dbm = num(key, value)?,
            "wall_loss_db" => self.wall_loss_db = num(key, value)?,
            "sinr_threshold_db" => self.sinr_threshold_db = num(key, value)?,
            "processing_gain_db" => self.processing_gain_db = num(key, value)?,
            "shadowing_enabled" => self.shadowing_enabled = flag(key, value)?,
            "shadowing_sigma_macro_db" => self.shadowing_sigma_macro_db = num(key, value)?,
            "shadowing_sigma_femto_db" => self.shadowing_sigma_femto_db = num(key, value)?,
            "strategy" => self.strategy = value.trim().parse().map_err(|e| format!("{key}: {e}"))?,
            "proposed_split" => self.proposed_split = value.trim().parse().map_err(|e| format!("{key}: {e}"))?,
            "v_min_mps" => self.v_min_mps = num(key, value)?,
            "v_max_mps" => self.v_max_mps = num(key, value)?,
            "pause_s" => self.pause_s = num(key, value)?,
            "threshold_velocity_mps" => self.threshold_velocity_mps = num(key, value)?,
            "threshold_time_s" => self.threshold_time_s = num(key, value)?,
            "min_ebio_db" => self.min_ebio_db = num(key, value)?,
            "hop_latency_ms" => self.hop_latency_ms = num(key, value)?,
            "detect_floor_dbm" => self.detect_floor_dbm = num(key, value)?,
            "scan_interval_s" => self.scan_interval_s = num(key, value)?,
            "neighbor_range_m" => self.neighbor_range_m = num(key, value)?,
            "authorized_fraction" => self.authorized_fraction = num(key, value)?,
            "xdsl_capacity_mbps" => self.xdsl_capacity_mbps = num(key, value)?,
            "sla_femto_reserved_mbps" => self.sla_femto_reserved_mbps = num(key, value)?,
            "wfq_weights" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(format!(
                        "wfq_weights: expected three comma-separated values (voice,video,data), got '{value}'"
                    ));
                }
                let mut weights = BTreeMap::new();
                for (class, part) in [ServiceClass::Voice, ServiceClass::Video, ServiceClass::Data]
                    .into_iter()
                    .zip(parts)
                {
                    weights.insert(class, num::<f64>(key, part)?);
                }
                self.wfq_weights = weights;
            }
            "scheduler" => self.scheduler = value.trim().parse().map_err(|e| format!("{key}: {e}"))?,
            "queue_limit_packets" => self.queue_limit_packets = num(key, value)?,
            "renegotiation_period_s" => self.renegotiation_period_s = num(key, value)?,
            "monitor_window_s" => self.monitor_window_s = num(key, value)?,
            "background_data_mbps" => self.background_data_mbps = num(key, value)?,
            "voice_fraction" => self.voice_fraction = num(key, value)?,
            "video_fraction" => self.video_fraction = num(key, value)?,
            "sim_duration_s" => self.sim_duration_s = num(key, value)?,
            "snapshot_interval_s" => self.snapshot_interval_s = num(key, value)?,
            "n_drops" => self.n_drops = num(key, value)?,
            "strategies" => {
                let mut strategies = Vec::new();
                for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    strategies.push(part.parse().map_err(|e| format!("{key}: {e}"))?);
                }
                self.strategies = strategies;
            }
            "fap_counts" => {
                let mut counts = Vec::new();
                for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    counts.push(num(key, part)?);
                }
                self.fap_counts = counts;
            }
            _ => return Err(format!("{key}: unknown scenario key")),
        }
        Ok(())
    }

    /// Full-config validation; collects every violation, each naming its key.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        check(
            self.macro_radius_m > 0.0,
            format!("macro_radius_m: must be > 0, got {}", self.macro_radius_m),
        );
        check(
            self.fap_radius_m > 0.0,
            format!("fap_radius_m: must be > 0, got {}", self.fap_radius_m),
        );
        check(
            (2..=6).contains(&self.radio_capacity),
            format!("radio_capacity: must be in 2..=6, got {}", self.radio_capacity),
        );
        match self.deployment_type {
            DeploymentType::TypeA => check(
                self.fap_count == 1,
                format!("fap_count: Type A means exactly one FAP, got {}", self.fap_count),
            ),
            DeploymentType::TypeB => check(
                self.fap_count >= 2,
                format!("fap_count: Type B needs at least two FAPs, got {}", self.fap_count),
            ),
            DeploymentType::TypeC => {}
        }
        check(
            self.v_min_mps >= 0.0 && self.v_min_mps <= self.v_max_mps,
            format!(
                "v_min_mps/v_max_mps: need 0 <= v_min <= v_max, got {} and {}",
                self.v_min_mps, self.v_max_mps
            ),
        );
        check(
            self.pause_s >= 0.0,
            format!("pause_s: must be >= 0, got {}", self.pause_s),
        );
        check(
            self.hop_latency_ms >= 0.0,
            format!("hop_latency_ms: must be >= 0, got {}", self.hop_latency_ms),
        );
        check(
            self.scan_interval_s > 0.0,
            format!("scan_interval_s: must be > 0, got {}", self.scan_interval_s),
        );
        check(
            self.neighbor_range_m >= 0.0,
            format!("neighbor_range_m: must be >= 0, got {}", self.neighbor_range_m),
        );
        check(
            (0.0..=1.0).contains(&self.authorized_fraction),
            format!(
                "authorized_fraction: must be in [0, 1], got {}",
                self.authorized_fraction
            ),
        );
        check(
            self.xdsl_capacity_mbps > 0.0,
            format!("xdsl_capacity_mbps: must be > 0, got {}", self.xdsl_capacity_mbps),
        );
        check(
            self.sla_femto_reserved_mbps >= 0.0 && self.sla_femto_reserved_mbps <= self.xdsl_capacity_mbps,
            format!(
                "sla_femto_reserved_mbps: must be in [0, xdsl_capacity_mbps], got {}",
                self.sla_femto_reserved_mbps
            ),
        );
        check(
            self.wfq_weights.values().all(|w| *w > 0.0),
            "wfq_weights: all weights must be > 0".to_string(),
        );
        check(
            self.queue_limit_packets > 0,
            format!("queue_limit_packets: must be > 0, got {}", self.queue_limit_packets),
        );
        check(
            self.renegotiation_period_s > 0.0,
            format!(
                "renegotiation_period_s: must be > 0, got {}",
                self.renegotiation_period_s
            ),
        );
        check(
            self.monitor_window_s > 0.0,
            format!("monitor_window_s: must be > 0, got {}", self.monitor_window_s),
        );
        check(
            self.background_data_mbps >= 0.0,
            format!("background_data_mbps: must be >= 0, got {}", self.background_data_mbps),
        );
        check(
            (0.0..=1.0).contains(&self.voice_fraction)
                && (0.0..=1.0).contains(&self.video_fraction)
                && self.voice_fraction + self.video_fraction <= 1.0 + 1e-12,
            format!(
                "voice_fraction/video_fraction: must be in [0, 1] and sum <= 1, got {} and {}",
                self.voice_fraction, self.video_fraction
            ),
        );
        check(
            self.sim_duration_s >= 0.0,
            format!("sim_duration_s: must be >= 0, got {}", self.sim_duration_s),
        );
        check(
            self.snapshot_interval_s > 0.0,
            format!("snapshot_interval_s: must be > 0, got {}", self.snapshot_interval_s),
        );
        check(
            self.n_drops >= 1,
            format!("n_drops: must be >= 1, got {}", self.n_drops),
        );
        check(!self.strategies.is_empty(), "strategies: must not be empty".to_string());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(problems))
        }
    }
}

/// Parses scenario text: defaults overlaid with `key = value` lines; `[...]`
/// section headers and `#`/`;` comments are cosmetic.
pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let ini = Ini::load_from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let mut cfg = ScenarioConfig::default();
    let mut problems = Vec::new();
    for (_, props) in ini.iter() {
        for (key, value) in props.iter() {
            if let Err(problem) = cfg.apply_key(key, value) {
                problems.push(problem);
            }
        }
    }
    if !problems.is_empty() {
        return Err(ScenarioError::Invalid(problems));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_sections_comments_and_types() {
        let text = "\
# demo scenario
[topology]
deployment_type = typec
fap_count = 25
seed = 99

[radio]
; semicolon comments too
sinr_threshold_db = 4.5
shadowing_enabled = yes

[spectrum]
strategy = dedicated

[backhaul]
wfq_weights = 8, 3, 1
scheduler = fifo

[outage]
strategies = shared, proposed
fap_counts = 10, 100, 1000
";
        let cfg = parse_scenario_str(text).unwrap();
        assert_eq!(cfg.fap_count, 25);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.sinr_threshold_db, 4.5);
        assert!(cfg.shadowing_enabled);
        assert_eq!(cfg.strategy, Strategy::Dedicated);
        assert_eq!(cfg.wfq_weights[&ServiceClass::Voice], 8.0);
        assert_eq!(cfg.wfq_weights[&ServiceClass::Data], 1.0);
        assert_eq!(cfg.scheduler, SchedulerKind::Fifo);
        assert_eq!(cfg.strategies, vec![Strategy::Shared, Strategy::Proposed]);
        assert_eq!(cfg.fap_counts, vec![10, 100, 1000]);
        // Untouched keys keep defaults.
        assert_eq!(cfg.ue_count, ScenarioConfig::default().ue_count);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_scenario_str("fap_countt = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fap_countt"), "{msg}");
    }

    #[test]
    fn bad_values_collect_all_offending_keys() {
        let err = parse_scenario_str("fap_count = many\nv_min_mps = fast\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fap_count"), "{msg}");
        assert!(msg.contains("v_min_mps"), "{msg}");
    }

    #[test]
    fn validation_names_keys() {
        let mut cfg = ScenarioConfig::default();
        cfg.v_min_mps = 5.0;
        cfg.v_max_mps = 1.0;
        cfg.sla_femto_reserved_mbps = 99.0;
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("v_min_mps"), "{msg}");
        assert!(msg.contains("sla_femto_reserved_mbps"), "{msg}");
    }

    #[test]
    fn deployment_type_constraints() {
        let mut cfg = ScenarioConfig::default();
        cfg.deployment_type = DeploymentType::TypeA;
        cfg.fap_count = 3;
        assert!(cfg.validate().is_err());
        cfg.fap_count = 1;
        cfg.validate().unwrap();
        cfg.deployment_type = DeploymentType::TypeB;
        assert!(cfg.validate().is_err());
        cfg.fap_count = 2;
        cfg.validate().unwrap();
    }

    #[test]
    fn apply_key_is_usable_for_sweeps() {
        let mut cfg = ScenarioConfig::default();
        cfg.apply_key("threshold_velocity_mps", "2.5").unwrap();
        assert_eq!(cfg.threshold_velocity_mps, 2.5);
        assert!(cfg.apply_key("threshold_velocity_mps", "slow").is_err());
        assert!(cfg.apply_key("no_such_key", "1").is_err());
    }

    #[test]
    fn wfq_weights_need_three_fields() {
        let mut cfg = ScenarioConfig::default();
        assert!(cfg.apply_key("wfq_weights", "4,2").is_err());
        cfg.apply_key("wfq_weights", "5,2,1").unwrap();
        assert_eq!(cfg.wfq_weights[&ServiceClass::Voice], 5.0);
    }

    #[test]
    fn missing_file_error_names_path() {
        let err = load_scenario(Path::new("/nonexistent/scenario.ini")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/scenario.ini"));
    }

    #[test]
    fn outage_fap_counts_fallback() {
        let mut cfg = ScenarioConfig::default();
        assert_eq!(cfg.outage_fap_counts(), vec![cfg.fap_count]);
        cfg.fap_counts = vec![5, 50];
        assert_eq!(cfg.outage_fap_counts(), vec![5, 50]);
    }
}
