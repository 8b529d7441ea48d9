//! Event streams, their on-disk formats, and the voxel/spike-input
//! representations fed to the network.

mod format;
mod voxel;

pub use format::{
    parse_bin_v1, parse_csv, parse_events, write_bin_v1, write_csv, EventFormat, BIN_V1_MAGIC,
};
pub use voxel::{chunk_to_spike_input, stack_batch, voxelize, SpikeInput, VoxelGrid};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    /// `+1` or `-1`.
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: i8) -> Self {
        Self { x, y, t, p }
    }
}

/// Time-ordered events from a `width × height` sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    width: u32,
    height: u32,
}

impl EventStream {
    /// Validates ordering, coordinates and polarity.
    pub fn new(events: Vec<Event>, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 || width > 1 << 16 || height > 1 << 16 {
            return Err(Error::Invalid(format!("sensor size {width}x{height}")));
        }
        for (i, e) in events.iter().enumerate() {
            if e.x as u32 >= width || e.y as u32 >= height {
                return Err(Error::Invalid(format!(
                    "event {i} at ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::Invalid(format!("event {i} has polarity {}", e.p)));
            }
            if i > 0 && e.t < events[i - 1].t {
                return Err(Error::Invalid(format!(
                    "event {i} timestamp {} precedes {}",
                    e.t,
                    events[i - 1].t
                )));
            }
        }
        Ok(Self {
            events,
            width,
            height,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// `(first, last)` timestamps, if any.
    pub fn time_span(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p as i64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_streams() {
        assert!(EventStream::new(vec![Event::new(4, 0, 0, 1)], 4, 4).is_err());
        assert!(EventStream::new(vec![Event::new(0, 0, 0, 0)], 4, 4).is_err());
        let ooo = vec![Event::new(0, 0, 10, 1), Event::new(0, 0, 9, 1)];
        assert!(EventStream::new(ooo, 4, 4).is_err());
        assert!(EventStream::new(vec![], 0, 4).is_err());
    }

    #[test]
    fn equal_timestamps_allowed() {
        let s = EventStream::new(vec![Event::new(0, 0, 5, 1), Event::new(1, 1, 5, -1)], 2, 2).unwrap();
        assert_eq!(s.time_span(), Some((5, 5)));
        assert_eq!(s.polarity_sum(), 0);
    }
}
