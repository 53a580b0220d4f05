//! Injectable timing sources.

use alloc::vec::Vec;

use crate::conv::ScheduleConfig;

/// What is being timed; lets synthetic timers model a cost surface.
#[derive(Clone, Copy, Debug)]
pub struct Probe<'a> {
    pub label: &'a str,
    pub config: Option<&'a ScheduleConfig>,
    pub repeat: usize,
}

pub trait Timer {
    /// Returns the cost of one run of `work` in seconds (or abstract units).
    /// Implementations may skip calling `work` when they model the cost.
    fn time(&mut self, probe: &Probe<'_>, work: &mut dyn FnMut()) -> f64;

    /// Timestamp stamped on produced records, in seconds since the Unix epoch.
    fn now(&self) -> u64 {
        0
    }
}

/// Replays a fixed list of samples, cycling when exhausted. Never runs the work.
#[derive(Clone, Debug)]
pub struct ScriptedTimer {
    samples: Vec<f64>,
    next: usize,
}

impl ScriptedTimer {
    pub fn new(samples: Vec<f64>) -> Self {
        assert!(!samples.is_empty(), "scripted timer needs at least one sample");
        ScriptedTimer { samples, next: 0 }
    }

    pub fn constant(v: f64) -> Self {
        Self::new(alloc::vec![v])
    }
}

impl Timer for ScriptedTimer {
    fn time(&mut self, _probe: &Probe<'_>, _work: &mut dyn FnMut()) -> f64 {
        let v = self.samples[self.next % self.samples.len()];
        self.next += 1;
        v
    }
}

/// Computes the cost from the probe alone, without running the work.
pub struct FnTimer<F>(pub F);

impl<F: FnMut(&Probe<'_>) -> f64> Timer for FnTimer<F> {
    fn time(&mut self, probe: &Probe<'_>, _work: &mut dyn FnMut()) -> f64 {
        (self.0)(probe)
    }
}

/// Median of the samples; mean of the two middle values for even counts.
pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Root-mean-square deviation of the samples around their median.
pub fn spread_about_median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let m = median(samples);
    let ss: f64 = samples.iter().map(|x| (x - m) * (x - m)).sum();
    libm::sqrt(ss / samples.len() as f64)
}
