//! Mesoscopic signalized-corridor simulator.

mod geometry;
mod scenario;
mod signal;
mod state;

pub use geometry::{CorridorGeometry, Heading, Leg, Link, LinkId, Movement, Node, Route};
pub use scenario::{
    CorridorDemand, DirectionWeights, LinkParams, OdFlow, SaturationParams, ScenarioConfig,
    SignalParams, Zone, SCENARIO1_DEMAND, SCENARIO2_DEMAND,
};
pub use signal::{GreenTimes, Permitted, SignalController};
pub use state::{Counters, LinkState, SimState, Simulator, Vehicle};
