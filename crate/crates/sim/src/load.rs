//! Device occupancy, the request load ratio and the two-phase request cap.

use serde::{Deserialize, Serialize};

/// Piecewise-constant active-request counts per generation device over `[start, end]`.
///
/// Each device holds `(time, active)` change points in nondecreasing time order; the
/// count before a device's first change point is zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTrace {
    pub devices: Vec<Vec<(f64, u32)>>,
    pub start: f64,
    pub end: f64,
}

impl OccupancyTrace {
    pub fn new(devices: usize, start: f64) -> Self {
        Self { devices: vec![Vec::new(); devices], start, end: start }
    }

    pub fn record(&mut self, device: usize, time: f64, active: u32) {
        let points = &mut self.devices[device];
        match points.last_mut() {
            Some(last) if last.0 == time => last.1 = active,
            _ => points.push((time, active)),
        }
        self.end = self.end.max(time);
    }

    /// Integral of `active` over the window for one device.
    fn area(&self, device: usize) -> f64 {
        let points = &self.devices[device];
        let mut area = 0.0;
        let mut t = self.start;
        let mut level = 0u32;
        for &(at, active) in points {
            let at = at.clamp(self.start, self.end);
            area += f64::from(level) * (at - t);
            t = at;
            level = active;
        }
        area + f64::from(level) * (self.end - t)
    }
}

/// Time-weighted mean over devices of `active / capacity`, clamped to `[0, 1]`.
pub fn request_load_ratio(trace: &OccupancyTrace, capacity: u32) -> f64 {
    assert!(capacity > 0, "capacity must be positive");
    let span = trace.end - trace.start;
    if trace.devices.is_empty() || span <= 0.0 {
        return 0.0;
    }
    let total: f64 = (0..trace.devices.len()).map(|d| trace.area(d)).sum();
    (total / (f64::from(capacity) * span * trace.devices.len() as f64)).clamp(0.0, 1.0)
}

/// Per-device request cap: `initial_cap` strictly before the first load-balancing
/// event, `steady_cap` from that instant on.
pub fn two_phase_caps(sim_time: f64, first_balance_time: f64, initial_cap: u32, steady_cap: u32) -> u32 {
    if sim_time < first_balance_time {
        initial_cap
    } else {
        steady_cap
    }
}
