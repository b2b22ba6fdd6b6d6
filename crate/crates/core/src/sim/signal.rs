//! Fixed-cycle four-phase signal controller with an adjustable north-south split.

use serde::{Deserialize, Serialize};

use super::geometry::{Heading, Movement};
use super::scenario::SignalParams;
use crate::error::{Error, Result};

/// Green durations (seconds) of the four phases within one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GreenTimes {
    /// P1: north-south straight and right.
    pub ns_through: u32,
    /// P2: north-south left.
    pub ns_left: u32,
    /// P3: east-west straight and right.
    pub ew_through: u32,
    /// P4: east-west left.
    pub ew_left: u32,
}

/// Movements released at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Permitted {
    pub ns_through: bool,
    pub ns_left: bool,
    pub ew_through: bool,
    pub ew_left: bool,
}

impl Permitted {
    pub fn is_empty(&self) -> bool {
        !(self.ns_through || self.ns_left || self.ew_through || self.ew_left)
    }

    pub fn allows(&self, heading: Heading, movement: Movement) -> bool {
        let (through, left) = if heading.is_main_line() {
            (self.ew_through, self.ew_left)
        } else {
            (self.ns_through, self.ns_left)
        };
        match movement {
            Movement::Left => left,
            Movement::Straight | Movement::Right => through,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalController {
    pub intersection: usize,
    cycle: u32,
    left: u32,
    clearance: u32,
    offset: u32,
    split: u32,
    pending: Option<u32>,
    split_min: u32,
    split_max: u32,
}

impl SignalController {
    pub fn new(intersection: usize, params: &SignalParams, offset: u32) -> Result<Self> {
        let c = Self {
            intersection,
            cycle: params.cycle_s,
            left: params.left_phase_s,
            clearance: params.yellow_s + params.all_red_s,
            offset,
            split: params.initial_split_s,
            pending: None,
            split_min: params.split_min_s,
            split_max: params.split_max_s,
        };
        c.check_split(c.split)?;
        Ok(c)
    }

    /// Split currently driving the phase clock.
    pub fn split(&self) -> u32 {
        self.split
    }

    /// Most recently commanded split (takes effect at the next cycle boundary).
    pub fn commanded_split(&self) -> u32 {
        self.pending.unwrap_or(self.split)
    }

    pub fn pending_split(&self) -> Option<u32> {
        self.pending
    }

    pub fn cycle(&self) -> u32 {
        self.cycle
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }

    fn check_split(&self, s: u32) -> Result<()> {
        if s < self.split_min || s > self.split_max {
            return Err(Error::SplitOutOfBounds {
                split: s as f64,
                lower: self.split_min as f64,
                upper: self.split_max as f64,
            });
        }
        Ok(())
    }

    /// Schedules a new split; it latches at the next cycle boundary.
    pub fn set_split(&mut self, split: u32) -> Result<()> {
        self.check_split(split)?;
        self.pending = (split != self.split).then_some(split);
        Ok(())
    }

    /// Applies a pending split. Called by the simulator at cycle boundaries.
    pub fn latch(&mut self) {
        if let Some(s) = self.pending.take() {
            self.split = s;
        }
    }

    pub fn is_cycle_start(&self, t: u64) -> bool {
        self.local_time(t) == 0
    }

    fn local_time(&self, t: u64) -> u32 {
        let c = self.cycle as u64;
        ((t + c - (self.offset as u64 % c)) % c) as u32
    }

    pub fn green_times(&self) -> GreenTimes {
        Self::green_times_for(self.split, self.cycle, self.left, self.clearance)
    }

    fn green_times_for(split: u32, cycle: u32, left: u32, clearance: u32) -> GreenTimes {
        let budget = cycle - 4 * clearance;
        GreenTimes {
            ns_through: split - left,
            ns_left: left,
            ew_through: budget - split - left,
            ew_left: left,
        }
    }

    /// Movements with green at second `t`; yellow and all-red intervals release nothing.
    pub fn green_movements(&self, t: u64) -> Permitted {
        let g = self.green_times();
        let mut tau = self.local_time(t);
        let phases = [g.ns_through, g.ns_left, g.ew_through, g.ew_left];
        for (i, &green) in phases.iter().enumerate() {
            if tau < green {
                let mut p = Permitted::default();
                match i {
                    0 => p.ns_through = true,
                    1 => p.ns_left = true,
                    2 => p.ew_through = true,
                    _ => p.ew_left = true,
                }
                return p;
            }
            tau -= green;
            if tau < self.clearance {
                return Permitted::default();
            }
            tau -= self.clearance;
        }
        Permitted::default()
    }
}
