//! Wall-clock timer.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use edgegraph_core::timing::{Probe, Timer};

/// Times `work` with a monotonic clock and reports seconds, the unit of
/// tuning-record costs.
#[derive(Clone, Copy, Debug, Default)]
pub struct WallClock;

impl Timer for WallClock {
    fn time(&mut self, _probe: &Probe<'_>, work: &mut dyn FnMut()) -> f64 {
        let start = Instant::now();
        work();
        start.elapsed().as_secs_f64()
    }

    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}
