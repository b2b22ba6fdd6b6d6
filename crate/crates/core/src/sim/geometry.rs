//! Corridor topology: links, movements and static routes.

use serde::{Deserialize, Serialize};

use super::scenario::{ScenarioConfig, Zone};
use crate::error::{Error, Result};

pub type LinkId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Movement {
    Left,
    Straight,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Left, Movement::Straight, Movement::Right];

    pub fn index(self) -> usize {
        match self {
            Movement::Left => 0,
            Movement::Straight => 1,
            Movement::Right => 2,
        }
    }
}

/// Travel direction of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    Eastbound,
    Westbound,
    /// Side approach entering from the north zone.
    Southbound,
    /// Side approach entering from the south zone.
    Northbound,
}

impl Heading {
    pub fn is_main_line(self) -> bool {
        matches!(self, Heading::Eastbound | Heading::Westbound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    Zone(Zone),
    Intersection(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub name: String,
    pub heading: Heading,
    pub from: Node,
    pub to: Node,
    pub length_m: f64,
    pub free_flow_time_s: u64,
    pub storage_capacity: usize,
}

impl Link {
    /// Intersection at the downstream end, if the link is signalized.
    pub fn signal(&self) -> Option<usize> {
        match self.to {
            Node::Intersection(m) => Some(m),
            Node::Zone(_) => None,
        }
    }
}

/// One traversed link and the movement taken at its downstream end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Leg {
    pub link: LinkId,
    pub movement: Movement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub from: Zone,
    pub to: Zone,
    pub legs: Vec<Leg>,
}

/// Link layout for an `M`-intersection corridor.
///
/// Ids `0..=M` are the eastbound chain (`W -> I0 -> ... -> I(M-1) -> E`),
/// `M+1..=2M+1` the westbound chain (`E -> I(M-1) -> ... -> I0 -> W`), then
/// one north and one south approach per intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorGeometry {
    pub intersections: usize,
    pub links: Vec<Link>,
}

impl CorridorGeometry {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        let m = cfg.intersections;
        if m < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 intersections, got {m}"
            )));
        }
        let p = &cfg.link;
        let mut links = Vec::with_capacity(2 * (m + 1) + 2 * m);
        let mut push = |name: String, heading, from, to| {
            let id = links.len();
            links.push(Link {
                id,
                name,
                heading,
                from,
                to,
                length_m: p.length_m,
                free_flow_time_s: p.free_flow_time_s,
                storage_capacity: p.storage_capacity(),
            });
        };
        let node = |i: isize| -> Node {
            if i < 0 {
                Node::Zone(Zone::West)
            } else if i as usize >= m {
                Node::Zone(Zone::East)
            } else {
                Node::Intersection(i as usize)
            }
        };
        for k in 0..=m {
            let k = k as isize;
            push(format!("EB{k}"), Heading::Eastbound, node(k - 1), node(k));
        }
        for k in 0..=m {
            let from = m as isize - k as isize;
            push(format!("WB{k}"), Heading::Westbound, node(from), node(from - 1));
        }
        for j in 0..m {
            push(
                format!("N{j}"),
                Heading::Southbound,
                Node::Zone(Zone::North(j)),
                Node::Intersection(j),
            );
            push(
                format!("S{j}"),
                Heading::Northbound,
                Node::Zone(Zone::South(j)),
                Node::Intersection(j),
            );
        }
        Ok(Self {
            intersections: m,
            links,
        })
    }

    pub fn main_line_count(&self) -> usize {
        2 * (self.intersections + 1)
    }

    /// Main-line link ids in observation order: eastbound chain, then westbound chain.
    pub fn main_links(&self) -> std::ops::Range<LinkId> {
        0..self.main_line_count()
    }

    pub fn eastbound(&self, k: usize) -> LinkId {
        k
    }

    pub fn westbound(&self, k: usize) -> LinkId {
        self.intersections + 1 + k
    }

    pub fn north_approach(&self, j: usize) -> LinkId {
        self.main_line_count() + 2 * j
    }

    pub fn south_approach(&self, j: usize) -> LinkId {
        self.main_line_count() + 2 * j + 1
    }

    /// Eastbound link leaving intersection `i`.
    fn eastbound_from(&self, i: usize) -> LinkId {
        self.eastbound(i + 1)
    }

    /// Westbound link leaving intersection `i`.
    fn westbound_from(&self, i: usize) -> LinkId {
        self.westbound(self.intersections - i)
    }

    pub fn link(&self, id: LinkId) -> Result<&Link> {
        self.links.get(id).ok_or(Error::UnknownLink(id))
    }

    fn origin_link(&self, zone: Zone) -> LinkId {
        match zone {
            Zone::West => self.eastbound(0),
            Zone::East => self.westbound(0),
            Zone::North(j) => self.north_approach(j),
            Zone::South(j) => self.south_approach(j),
        }
    }

    /// Static route for an OD pair: straight along the main line, one turn on or off it.
    pub fn route(&self, from: Zone, to: Zone) -> Result<Route> {
        let invalid = || Error::InvalidConfig(format!("no route from {from} to {to}"));
        let m = self.intersections;
        for z in [from, to] {
            if let Zone::North(j) | Zone::South(j) = z {
                if j >= m {
                    return Err(invalid());
                }
            }
        }
        if from == to {
            return Err(invalid());
        }
        // Position along the corridor: W = -1, intersections 0..M, E = M.
        let pos = |z: Zone| -> isize {
            match z {
                Zone::West => -1,
                Zone::East => m as isize,
                Zone::North(j) | Zone::South(j) => j as isize,
            }
        };
        let target = pos(to);
        let mut legs = Vec::new();
        let mut link = self.origin_link(from);
        loop {
            let l = &self.links[link];
            let Some(i) = l.signal() else {
                // Terminal link: the vehicle leaves at the zone it ends in.
                if l.to != Node::Zone(to) {
                    return Err(invalid());
                }
                legs.push(Leg {
                    link,
                    movement: Movement::Straight,
                });
                break;
            };
            let here = i as isize;
            let (movement, next) = match l.heading {
                Heading::Eastbound => match to {
                    Zone::North(j) if j == i => (Movement::Left, None),
                    Zone::South(j) if j == i => (Movement::Right, None),
                    _ if target > here => (Movement::Straight, Some(self.eastbound_from(i))),
                    _ => return Err(invalid()),
                },
                Heading::Westbound => match to {
                    Zone::North(j) if j == i => (Movement::Right, None),
                    Zone::South(j) if j == i => (Movement::Left, None),
                    _ if target < here => (Movement::Straight, Some(self.westbound_from(i))),
                    _ => return Err(invalid()),
                },
                Heading::Southbound => match to {
                    Zone::South(j) if j == i => (Movement::Straight, None),
                    _ if target > here => (Movement::Left, Some(self.eastbound_from(i))),
                    _ if target < here => (Movement::Right, Some(self.westbound_from(i))),
                    _ => return Err(invalid()),
                },
                Heading::Northbound => match to {
                    Zone::North(j) if j == i => (Movement::Straight, None),
                    _ if target > here => (Movement::Right, Some(self.eastbound_from(i))),
                    _ if target < here => (Movement::Left, Some(self.westbound_from(i))),
                    _ => return Err(invalid()),
                },
            };
            legs.push(Leg { link, movement });
            match next {
                Some(n) => link = n,
                None => break,
            }
        }
        Ok(Route { from, to, legs })
    }
}
