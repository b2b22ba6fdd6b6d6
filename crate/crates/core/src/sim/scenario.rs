//! Scenario configuration (JSON on disk) and the built-in demand presets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Origin/destination zone: the two corridor terminals or a side street at intersection `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Zone {
    West,
    East,
    North(usize),
    South(usize),
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Zone::West => write!(f, "W"),
            Zone::East => write!(f, "E"),
            Zone::North(m) => write!(f, "N{m}"),
            Zone::South(m) => write!(f, "S{m}"),
        }
    }
}

impl FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown zone {s:?}"));
        match s {
            "W" => Ok(Zone::West),
            "E" => Ok(Zone::East),
            _ if s.len() > 1 => {
                let m: usize = s[1..].parse().map_err(|_| bad())?;
                match &s[..1] {
                    "N" => Ok(Zone::North(m)),
                    "S" => Ok(Zone::South(m)),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Zone {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Zone> for String {
    fn from(z: Zone) -> String {
        z.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdFlow {
    pub from: Zone,
    pub to: Zone,
    pub veh_per_hour: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub length_m: f64,
    pub free_flow_time_s: u64,
    pub lanes: u32,
    /// Jam spacing per vehicle; storage capacity is `lanes * length / spacing`.
    pub vehicle_spacing_m: f64,
}

impl LinkParams {
    pub fn storage_capacity(&self) -> usize {
        (self.lanes as f64 * self.length_m / self.vehicle_spacing_m).floor() as usize
    }
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            length_m: 500.0,
            free_flow_time_s: 36,
            lanes: 3,
            vehicle_spacing_m: 7.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub cycle_s: u32,
    pub left_phase_s: u32,
    pub yellow_s: u32,
    pub all_red_s: u32,
    pub initial_split_s: u32,
    pub split_min_s: u32,
    pub split_max_s: u32,
    /// Per-intersection offsets; empty means all zero.
    #[serde(default)]
    pub offsets_s: Vec<u32>,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self {
            cycle_s: 100,
            left_phase_s: 8,
            yellow_s: 2,
            all_red_s: 2,
            initial_split_s: 50,
            split_min_s: 30,
            split_max_s: 70,
            offsets_s: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    /// Discharge rate of a whole straight approach (both straight lanes).
    pub straight_veh_per_s: f64,
    /// Discharge rate of a single turn lane.
    pub turn_veh_per_s: f64,
}

impl Default for SaturationParams {
    fn default() -> Self {
        // 50 vehicles over the 42 s of straight green an approach gets at split 50.
        Self {
            straight_veh_per_s: 50.0 / 42.0,
            turn_veh_per_s: 0.5,
        }
    }
}

/// Link importance weights by travel direction of the main-line links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionWeights {
    pub eastbound: f64,
    pub westbound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub intersections: usize,
    #[serde(default)]
    pub link: LinkParams,
    #[serde(default)]
    pub signal: SignalParams,
    #[serde(default)]
    pub saturation: SaturationParams,
    pub demand: Vec<OdFlow>,
    pub warmup_s: u64,
    pub weights: DirectionWeights,
    pub seed: u64,
    /// Free-form record of how the demand was calibrated.
    #[serde(default)]
    pub calibration: String,
}

/// Main-line demand in veh/h for the two built-in patterns.
#[derive(Debug, Clone, Copy)]
pub struct CorridorDemand {
    pub eastbound: f64,
    pub westbound: f64,
    /// Each side zone to and from each terminal.
    pub side: f64,
}

impl CorridorDemand {
    pub fn od_flows(&self, intersections: usize) -> Vec<OdFlow> {
        let mut flows = vec![
            OdFlow {
                from: Zone::West,
                to: Zone::East,
                veh_per_hour: self.eastbound,
            },
            OdFlow {
                from: Zone::East,
                to: Zone::West,
                veh_per_hour: self.westbound,
            },
        ];
        for m in 0..intersections {
            for side in [Zone::North(m), Zone::South(m)] {
                for terminal in [Zone::West, Zone::East] {
                    flows.push(OdFlow {
                        from: side,
                        to: terminal,
                        veh_per_hour: self.side,
                    });
                    flows.push(OdFlow {
                        from: terminal,
                        to: side,
                        veh_per_hour: self.side,
                    });
                }
            }
        }
        flows
    }
}

pub const SCENARIO1_DEMAND: CorridorDemand = CorridorDemand {
    eastbound: 1300.0,
    westbound: 450.0,
    side: 50.0,
};

pub const SCENARIO2_DEMAND: CorridorDemand = CorridorDemand {
    eastbound: 1150.0,
    westbound: 1150.0,
    side: 50.0,
};

const CALIBRATION_NOTE: &str = "Main-line straight demand at each intersection is through flow + 2*side*(M-1). \
Chosen above the 26 s/cycle straight capacity at split 50 (~1114 veh/h) so the fixed-timing base case \
congests past 50 vehicles, and below the 46 s/cycle capacity at split 30 (~1971 veh/h) so control can clear it. \
Started from 1800/600/100 (scenario 1) and 1200/1200/100 (scenario 2); those exceed even split-30 capacity.";

impl ScenarioConfig {
    fn with_demand(name: &str, intersections: usize, demand: CorridorDemand, weights: DirectionWeights) -> Self {
        Self {
            name: name.to_string(),
            intersections,
            link: LinkParams::default(),
            signal: SignalParams::default(),
            saturation: SaturationParams::default(),
            demand: demand.od_flows(intersections),
            warmup_s: 1800,
            weights,
            seed: 0,
            calibration: CALIBRATION_NOTE.to_string(),
        }
    }

    /// West-to-east dominant demand; only eastbound links are rewarded.
    pub fn scenario1(intersections: usize) -> Self {
        Self::with_demand(
            "scenario1",
            intersections,
            SCENARIO1_DEMAND,
            DirectionWeights {
                eastbound: 1.0,
                westbound: 0.0,
            },
        )
    }

    /// Balanced east/west demand; both directions rewarded.
    pub fn scenario2(intersections: usize) -> Self {
        Self::with_demand(
            "scenario2",
            intersections,
            SCENARIO2_DEMAND,
            DirectionWeights {
                eastbound: 1.0,
                westbound: 1.0,
            },
        )
    }

    /// `1` or `2`, with the default five intersections.
    pub fn by_id(id: u8, intersections: usize) -> Result<Self> {
        match id {
            1 => Ok(Self::scenario1(intersections)),
            2 => Ok(Self::scenario2(intersections)),
            _ => Err(Error::InvalidConfig(format!("unknown scenario {id}"))),
        }
    }

    pub fn without_demand(mut self) -> Self {
        self.demand.clear();
        self.name.push_str("-zero");
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.intersections < 2 {
            return bad(format!("need at least 2 intersections, got {}", self.intersections));
        }
        let l = &self.link;
        if !(l.length_m > 0.0) || l.free_flow_time_s == 0 || l.lanes == 0 || !(l.vehicle_spacing_m > 0.0) {
            return bad(format!("invalid link parameters {l:?}"));
        }
        if l.storage_capacity() == 0 {
            return bad("link storage capacity is zero".into());
        }
        let s = &self.signal;
        let clearance = 4 * (s.yellow_s + s.all_red_s);
        if s.cycle_s <= clearance + 2 * s.left_phase_s || s.left_phase_s == 0 {
            return bad(format!("invalid signal timing {s:?}"));
        }
        let green = s.cycle_s - clearance;
        if s.split_min_s <= s.left_phase_s
            || s.split_max_s + s.left_phase_s >= green
            || s.split_min_s >= s.split_max_s
        {
            return bad(format!(
                "split bounds [{}, {}] leave a non-positive green time",
                s.split_min_s, s.split_max_s
            ));
        }
        if s.initial_split_s < s.split_min_s || s.initial_split_s > s.split_max_s {
            return bad(format!("initial split {} outside bounds", s.initial_split_s));
        }
        if !s.offsets_s.is_empty() && s.offsets_s.len() != self.intersections {
            return bad("offsets must list one value per intersection".into());
        }
        let sat = &self.saturation;
        if !(sat.straight_veh_per_s > 0.0) || !(sat.turn_veh_per_s > 0.0) {
            return bad("saturation rates must be positive".into());
        }
        for f in &self.demand {
            if !(f.veh_per_hour >= 0.0) || !f.veh_per_hour.is_finite() {
                return bad(format!("negative or non-finite flow {f:?}"));
            }
            for z in [f.from, f.to] {
                if let Zone::North(m) | Zone::South(m) = z {
                    if m >= self.intersections {
                        return bad(format!("zone {z} beyond corridor"));
                    }
                }
            }
            if f.from == f.to {
                return bad(format!("flow from {} to itself", f.from));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zone_names_roundtrip() {
        for z in [Zone::West, Zone::East, Zone::North(3), Zone::South(12)] {
            assert_eq!(z.to_string().parse::<Zone>().unwrap(), z);
        }
        assert!("X1".parse::<Zone>().is_err());
    }

    #[test]
    fn scenario2_is_balanced() {
        let cfg = ScenarioConfig::scenario2(5);
        let flow = |a, b| {
            cfg.demand
                .iter()
                .find(|f| f.from == a && f.to == b)
                .unwrap()
                .veh_per_hour
        };
        assert_eq!(flow(Zone::West, Zone::East), flow(Zone::East, Zone::West));
    }

    #[test]
    fn scenarios_differ_only_in_demand_and_weights() {
        let mut a = ScenarioConfig::scenario1(5);
        let b = ScenarioConfig::scenario2(5);
        a.demand = b.demand.clone();
        a.weights = b.weights;
        a.name = b.name.clone();
        assert_eq!(a, b);
    }

    #[test]
    fn json_roundtrip() {
        let cfg = ScenarioConfig::scenario1(3);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"N0\""));
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        assert!(ScenarioConfig::scenario1(1).validate().is_err());
        let mut cfg = ScenarioConfig::scenario1(3);
        cfg.link.length_m = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::scenario1(3);
        cfg.demand[0].veh_per_hour = -1.0;
        assert!(cfg.validate().is_err());
    }
}
