//! Point-queue corridor dynamics on a 1 s tick.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::geometry::{CorridorGeometry, Leg, LinkId, Movement, Route};
use super::scenario::{ScenarioConfig, Zone};
use super::signal::SignalController;
use crate::error::{Error, Result};

/// Slack when turning fractional discharge credit into whole vehicles.
const CREDIT_EPS: f64 = 1e-9;

/// A vehicle only needs to know which route it follows and how far along it is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vehicle {
    pub route: u32,
    pub leg: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    /// Stopped vehicles by movement (left, straight, right).
    pub queues: [VecDeque<Vehicle>; 3],
    /// `(arrival_time, vehicle)`, non-decreasing in arrival time.
    pub in_transit: VecDeque<(u64, Vehicle)>,
    /// Fractional discharge allowance per movement.
    pub credit: [f64; 3],
    /// Vehicles generated for this origin link but not yet admitted (link full).
    pub backlog: VecDeque<Vehicle>,
}

impl LinkState {
    fn new() -> Self {
        Self {
            queues: Default::default(),
            in_transit: VecDeque::new(),
            credit: [0.0; 3],
            backlog: VecDeque::new(),
        }
    }

    /// Vehicles physically on the link (queued or moving).
    pub fn occupancy(&self) -> usize {
        self.in_transit.len() + self.queues.iter().map(VecDeque::len).sum::<usize>()
    }

    pub fn queue(&self, m: Movement) -> usize {
        self.queues[m.index()].len()
    }
}

/// Cumulative vehicle counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    /// Generated by demand (including those still waiting off-network).
    pub generated: u64,
    /// Admitted onto the network.
    pub entered: u64,
    pub exited: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time: u64,
    pub links: Vec<LinkState>,
    pub controllers: Vec<SignalController>,
    pub counters: Counters,
    /// Discharged vehicles per link and movement since the start.
    pub discharged: Vec<[u64; 3]>,
    pub rng: ChaCha8Rng,
}

impl SimState {
    pub fn on_network(&self) -> u64 {
        self.links.iter().map(|l| l.occupancy() as u64).sum()
    }
}

#[derive(Debug, Clone)]
struct DemandStream {
    route: u32,
    origin: LinkId,
    /// Nominal arrivals per second.
    rate: f64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: ScenarioConfig,
    geometry: CorridorGeometry,
    routes: Vec<Route>,
    demand: Vec<DemandStream>,
    state: SimState,
}

impl Simulator {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let geometry = CorridorGeometry::build(cfg)?;
        let mut routes: Vec<Route> = Vec::new();
        let mut demand = Vec::new();
        for f in &cfg.demand {
            let route = Self::route_index(&geometry, &mut routes, f.from, f.to)?;
            demand.push(DemandStream {
                route,
                origin: routes[route as usize].legs[0].link,
                rate: f.veh_per_hour / 3600.0,
            });
        }
        let controllers = (0..cfg.intersections)
            .map(|m| {
                let offset = cfg.signal.offsets_s.get(m).copied().unwrap_or(0);
                SignalController::new(m, &cfg.signal, offset)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = geometry.links.len();
        let state = SimState {
            time: 0,
            links: (0..n).map(|_| LinkState::new()).collect(),
            controllers,
            counters: Counters::default(),
            discharged: vec![[0; 3]; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        Ok(Self {
            cfg: cfg.clone(),
            geometry,
            routes,
            demand,
            state,
        })
    }

    fn route_index(geometry: &CorridorGeometry, routes: &mut Vec<Route>, from: Zone, to: Zone) -> Result<u32> {
        if let Some(i) = routes.iter().position(|r| r.from == from && r.to == to) {
            return Ok(i as u32);
        }
        routes.push(geometry.route(from, to)?);
        Ok(routes.len() as u32 - 1)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &CorridorGeometry {
        &self.geometry
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn time(&self) -> u64 {
        self.state.time
    }

    pub fn counters(&self) -> Counters {
        self.state.counters
    }

    pub fn controllers(&self) -> &[SignalController] {
        &self.state.controllers
    }

    /// Splits currently in force.
    pub fn splits(&self) -> Vec<u32> {
        self.state.controllers.iter().map(|c| c.split()).collect()
    }

    /// Commands a split at intersection `m`; it latches at that controller's next cycle start.
    pub fn set_split(&mut self, m: usize, split: u32) -> Result<()> {
        let n = self.state.controllers.len();
        self.state
            .controllers
            .get_mut(m)
            .ok_or_else(|| Error::InvalidConfig(format!("intersection {m} out of range 0..{n}")))?
            .set_split(split)
    }

    /// Straight-movement queue at the downstream end of `link` (terminal links are always 0).
    pub fn queue_length(&self, link: LinkId) -> Result<usize> {
        self.state
            .links
            .get(link)
            .map(|l| l.queue(Movement::Straight))
            .ok_or(Error::UnknownLink(link))
    }

    /// Straight queues of all main-line links in observation order.
    pub fn main_queues(&self) -> Vec<usize> {
        self.geometry
            .main_links()
            .map(|l| self.state.links[l].queue(Movement::Straight))
            .collect()
    }

    pub fn discharged(&self, link: LinkId, movement: Movement) -> u64 {
        self.state.discharged[link][movement.index()]
    }

    /// Demand ramp factor at time `t`: 0 at `t = 0`, 1 from the end of warm-up on.
    pub fn ramp(&self, t: u64) -> f64 {
        let w = self.cfg.warmup_s;
        if w == 0 || t >= w {
            1.0
        } else {
            t as f64 / w as f64
        }
    }

    /// Expected vehicles generated network-wide during the tick starting at `t`.
    pub fn expected_arrivals(&self, t: u64) -> f64 {
        let r = self.ramp(t);
        self.demand.iter().map(|d| d.rate * r).sum()
    }

    /// Puts `n` vehicles for `from -> to` straight into the queue of their first link,
    /// as if they had just arrived there.
    pub fn force_queued(&mut self, from: Zone, to: Zone, n: usize) -> Result<()> {
        let route = Self::route_index(&self.geometry, &mut self.routes, from, to)?;
        let Leg { link, movement } = self.routes[route as usize].legs[0];
        let state = &mut self.state;
        for _ in 0..n {
            state.links[link].queues[movement.index()].push_back(Vehicle { route, leg: 0 });
        }
        state.counters.generated += n as u64;
        state.counters.entered += n as u64;
        Ok(())
    }

    /// Advances one second.
    pub fn tick(&mut self) -> Result<()> {
        let t = self.state.time;
        for c in &mut self.state.controllers {
            if c.is_cycle_start(t) {
                c.latch();
            }
        }
        self.inject_demand(t);
        self.admit_backlog(t);
        self.arrive(t)?;
        self.discharge(t);
        self.state.time = t + 1;
        self.check_conservation()
    }

    /// Ticks `seconds` times; splits only change at cycle starts inside the interval.
    pub fn run_interval(&mut self, seconds: u64) -> Result<()> {
        for _ in 0..seconds {
            self.tick()?;
        }
        Ok(())
    }

    fn inject_demand(&mut self, t: u64) {
        let r = self.ramp(t);
        if r == 0.0 {
            return;
        }
        let state = &mut self.state;
        for d in &self.demand {
            let lambda = d.rate * r;
            if lambda <= 0.0 {
                continue;
            }
            let n = Poisson::new(lambda)
                .expect("positive finite rate")
                .sample(&mut state.rng) as u64;
            let backlog = &mut state.links[d.origin].backlog;
            for _ in 0..n {
                backlog.push_back(Vehicle {
                    route: d.route,
                    leg: 0,
                });
            }
            state.counters.generated += n;
        }
    }

    fn admit_backlog(&mut self, t: u64) {
        let state = &mut self.state;
        for (id, link) in state.links.iter_mut().enumerate() {
            if link.backlog.is_empty() {
                continue;
            }
            let g = &self.geometry.links[id];
            while link.occupancy() < g.storage_capacity {
                let Some(v) = link.backlog.pop_front() else { break };
                link.in_transit.push_back((t + g.free_flow_time_s, v));
                state.counters.entered += 1;
            }
        }
    }

    fn arrive(&mut self, t: u64) -> Result<()> {
        let state = &mut self.state;
        for link in state.links.iter_mut() {
            while link.in_transit.front().is_some_and(|&(at, _)| at <= t) {
                let (_, v) = link.in_transit.pop_front().expect("front checked");
                let leg = self.routes[v.route as usize].legs[v.leg as usize];
                if self.geometry.links[leg.link].signal().is_none() {
                    state.counters.exited += 1;
                } else {
                    link.queues[leg.movement.index()].push_back(v);
                }
            }
        }
        Ok(())
    }

    fn discharge(&mut self, t: u64) {
        let sat = self.cfg.saturation;
        for id in 0..self.geometry.links.len() {
            let Some(m) = self.geometry.links[id].signal() else { continue };
            let heading = self.geometry.links[id].heading;
            let permitted = self.state.controllers[m].green_movements(t);
            for movement in Movement::ALL {
                if !permitted.allows(heading, movement) {
                    continue;
                }
                let rate = match movement {
                    Movement::Straight => sat.straight_veh_per_s,
                    Movement::Left | Movement::Right => sat.turn_veh_per_s,
                };
                let k = movement.index();
                if self.state.links[id].queues[k].is_empty() {
                    // No banking of green time while nobody is waiting.
                    self.state.links[id].credit[k] = 0.0;
                    continue;
                }
                self.state.links[id].credit[k] += rate;
                let mut limited = false;
                while self.state.links[id].credit[k] + CREDIT_EPS >= 1.0 {
                    let Some(&v) = self.state.links[id].queues[k].front() else {
                        limited = true;
                        break;
                    };
                    let next_leg = v.leg as usize + 1;
                    let route = &self.routes[v.route as usize];
                    if let Some(next) = route.legs.get(next_leg) {
                        let down = &self.geometry.links[next.link];
                        if self.state.links[next.link].occupancy() >= down.storage_capacity {
                            limited = true;
                            break;
                        }
                        let moved = Vehicle {
                            route: v.route,
                            leg: next_leg as u16,
                        };
                        self.state.links[next.link]
                            .in_transit
                            .push_back((t + down.free_flow_time_s, moved));
                    } else {
                        self.state.counters.exited += 1;
                    }
                    let link = &mut self.state.links[id];
                    link.queues[k].pop_front();
                    link.credit[k] -= 1.0;
                    self.state.discharged[id][k] += 1;
                }
                if limited {
                    self.state.links[id].credit[k] = 0.0;
                }
            }
        }
    }

    fn check_conservation(&self) -> Result<()> {
        let c = self.state.counters;
        let on = self.state.on_network();
        if c.entered != c.exited + on {
            return Err(Error::Conservation {
                time: self.state.time,
                entered: c.entered,
                exited: c.exited,
                on_network: on,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero(m: usize) -> Simulator {
        Simulator::new(&ScenarioConfig::scenario1(m).without_demand(), 1).unwrap()
    }

    #[test]
    fn empty_network_tick_only_advances_time() {
        let mut sim = zero(3);
        let before = sim.state().clone();
        sim.tick().unwrap();
        let mut expected = before;
        expected.time = 1;
        assert_eq!(sim.state(), &expected);
    }

    #[test]
    fn single_vehicle_discharges_to_downstream() {
        let mut sim = zero(3);
        // Eastbound straight first gets green at t = 58 (start of P3).
        sim.force_queued(Zone::West, Zone::East, 1).unwrap();
        sim.run_interval(58).unwrap();
        assert_eq!(sim.queue_length(sim.geometry().eastbound(0)).unwrap(), 1);
        sim.tick().unwrap();
        assert_eq!(sim.queue_length(sim.geometry().eastbound(0)).unwrap(), 0);
        let down = &sim.state().links[sim.geometry().eastbound(1)];
        assert_eq!(down.in_transit.len(), 1);
        assert_eq!(down.in_transit[0].0, 58 + 36);
    }

    #[test]
    fn full_downstream_leaves_upstream_queue_unchanged() {
        let mut sim = zero(2);
        let g = sim.geometry().clone();
        let eb1 = g.eastbound(1);
        let cap = g.links[eb1].storage_capacity;
        // Park vehicles in transit far in the future so EB1 stays full.
        for _ in 0..cap {
            sim.state.links[eb1]
                .in_transit
                .push_back((1_000_000, Vehicle { route: 0, leg: 1 }));
        }
        sim.state.counters.entered += cap as u64;
        sim.force_queued(Zone::West, Zone::East, 4).unwrap();
        sim.run_interval(100).unwrap();
        assert_eq!(sim.queue_length(g.eastbound(0)).unwrap(), 4);
        assert_eq!(sim.discharged(g.eastbound(0), Movement::Straight), 0);
    }

    #[test]
    fn red_arrivals_accumulate() {
        let mut sim = zero(3);
        let g = sim.geometry().clone();
        // North-south straight is red during P3 (t = 58..84).
        sim.run_interval(58).unwrap();
        sim.force_queued(Zone::North(0), Zone::South(0), 3).unwrap();
        sim.run_interval(10).unwrap();
        assert_eq!(sim.queue_length(g.north_approach(0)).unwrap(), 3);
    }

    #[test]
    fn saturated_approach_discharges_fifty_per_cycle() {
        let mut sim = zero(2);
        let g = sim.geometry().clone();
        sim.force_queued(Zone::North(0), Zone::South(0), 1000).unwrap();
        for cycle in 0..5 {
            let before = sim.discharged(g.north_approach(0), Movement::Straight);
            sim.run_interval(100).unwrap();
            let n = sim.discharged(g.north_approach(0), Movement::Straight) - before;
            assert!((49..=51).contains(&n), "cycle {cycle}: {n}");
        }
    }

    #[test]
    fn demand_ramp() {
        let mut cfg = ScenarioConfig::scenario1(2);
        cfg.demand = vec![crate::sim::OdFlow {
            from: Zone::West,
            to: Zone::East,
            veh_per_hour: 1800.0,
        }];
        let sim = Simulator::new(&cfg, 0).unwrap();
        assert_eq!(sim.expected_arrivals(0), 0.0);
        assert_eq!(sim.expected_arrivals(1800), 0.5);
        assert_eq!(sim.expected_arrivals(5000), 0.5);
        assert!((sim.expected_arrivals(900) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_never_generates() {
        let mut sim = zero(2);
        sim.run_interval(4000).unwrap();
        assert_eq!(sim.counters(), Counters::default());
    }

    #[test]
    fn composition_is_bit_identical() {
        let cfg = ScenarioConfig::scenario1(3);
        let mut a = Simulator::new(&cfg, 9).unwrap();
        let mut b = a.clone();
        a.run_interval(2000).unwrap();
        a.run_interval(0).unwrap();
        a.run_interval(50).unwrap();
        a.run_interval(50).unwrap();
        b.run_interval(2100).unwrap();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn split_latches_at_cycle_boundary() {
        let mut sim = zero(2);
        sim.run_interval(30).unwrap();
        sim.set_split(0, 70).unwrap();
        sim.run_interval(69).unwrap();
        assert_eq!(sim.splits(), vec![50, 50]);
        sim.tick().unwrap();
        sim.tick().unwrap();
        assert_eq!(sim.splits(), vec![70, 50]);
        assert!(sim.set_split(0, 29).is_err());
    }
}
