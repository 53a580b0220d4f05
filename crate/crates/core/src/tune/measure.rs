//! Timed, verified measurement of one schedule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TuneError, TuningRecord};
use crate::conv::{conv2d_reference, conv2d_scheduled, ConvError, ConvWorkload, ScheduleConfig};
use crate::exec::Session;
use crate::tensor::Tensor;
use crate::timing::{median, spread_about_median, Probe, Timer};

/// Relative tolerance when checking a schedule against the reference.
const VERIFY_RTOL: f32 = 1e-4;

/// 64-bit FNV-1a, used to derive a fixed input seed from a workload key.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Operands {
    input: Tensor,
    weight: Tensor,
    reference: Tensor,
}

/// Runs measurements through an injectable timer. Inputs for a workload are
/// generated once from a seed derived from its key and reused.
pub struct Tuner<T: Timer> {
    timer: T,
    device_tag: String,
    repeats: usize,
    session: Session,
    operands: BTreeMap<String, Operands>,
}

impl<T: Timer> Tuner<T> {
    pub fn new(timer: T) -> Self {
        Tuner { timer, device_tag: "emu".into(), repeats: 3, session: Session::new(), operands: BTreeMap::new() }
    }

    pub fn with_device_tag(mut self, tag: impl Into<String>) -> Self {
        self.device_tag = tag.into();
        self
    }

    pub fn with_repeats(mut self, repeats: usize) -> Self {
        self.repeats = repeats;
        self
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    pub fn timer(&self) -> &T {
        &self.timer
    }

    pub fn timer_mut(&mut self) -> &mut T {
        &mut self.timer
    }

    fn operands(&mut self, wl: &ConvWorkload) -> Result<&Operands, TuneError> {
        let key = wl.key();
        if !self.operands.contains_key(&key) {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()));
            let mut fill = |shape: [usize; 4]| {
                let n = shape.iter().product();
                Tensor::from_f32(&shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            };
            let input = fill(wl.input_shape()).map_err(ConvError::from)?;
            let weight = fill(wl.weight_shape()).map_err(ConvError::from)?;
            let reference = conv2d_reference(&input, &weight, wl)?;
            self.operands.insert(key.clone(), Operands { input, weight, reference });
        }
        Ok(&self.operands[&key])
    }

    fn failure(&self, wl: &ConvWorkload, cfg: &ScheduleConfig, err: &ConvError) -> TuningRecord {
        TuningRecord {
            workload_key: wl.key(),
            config: *cfg,
            cost_mean: None,
            cost_std: None,
            repeats: 0,
            device_tag: self.device_tag.clone(),
            created_at: self.timer.now(),
            failed: true,
            error: Some(format!("{err}")),
        }
    }

    /// Verifies `cfg` once against the reference, then times `repeats` runs.
    /// Rejected schedules yield a failure-flagged record; a wrong result is
    /// a hard error.
    pub fn measure(&mut self, wl: &ConvWorkload, cfg: &ScheduleConfig) -> Result<TuningRecord, TuneError> {
        if self.repeats == 0 {
            return Err(TuneError::InvalidArgument("repeats must be at least 1".into()));
        }
        wl.validate()?;
        if let Err(e) = cfg.validate(wl) {
            return Ok(self.failure(wl, cfg, &e));
        }
        self.operands(wl)?;
        let key = wl.key();
        let ops = &self.operands[&key];
        let got = conv2d_scheduled(&mut self.session, &ops.input, &ops.weight, wl, cfg)?;
        let (g, e) = (got.as_f32().map_err(ConvError::from)?, ops.reference.as_f32().map_err(ConvError::from)?);
        // written so that a NaN in the output counts as a mismatch
        let within = |g: f32, e: f32| (g - e).abs() <= VERIFY_RTOL * e.abs().max(1.0);
        if let Some(i) = (0..e.len()).find(|&i| !within(g[i], e[i])) {
            return Err(TuneError::Mismatch { key, config: format!("{cfg}"), index: i, got: g[i], expected: e[i] });
        }

        let mut samples = Vec::with_capacity(self.repeats);
        let session = &mut self.session;
        for repeat in 0..self.repeats {
            let probe = Probe { label: &key, config: Some(cfg), repeat };
            let mut work = || {
                // only the timing matters here; correctness was checked above
                let _ = conv2d_scheduled(session, &ops.input, &ops.weight, wl, cfg);
            };
            samples.push(self.timer.time(&probe, &mut work));
        }
        Ok(TuningRecord {
            workload_key: key,
            config: *cfg,
            cost_mean: Some(median(&samples)),
            cost_std: Some(spread_about_median(&samples)),
            repeats: self.repeats,
            device_tag: self.device_tag.clone(),
            created_at: self.timer.now(),
            failed: false,
            error: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::ScriptedTimer;
    use alloc::vec;

    fn wl() -> ConvWorkload {
        ConvWorkload::simple(1, 2, 4, 4, 4, 3, 3).with_pad(1, 1)
    }

    #[test]
    fn constant_timer() {
        let mut t = Tuner::new(ScriptedTimer::constant(2.0));
        let r = t.measure(&wl(), &ScheduleConfig::default()).unwrap();
        assert_eq!((r.cost_mean, r.cost_std, r.repeats), (Some(2.0), Some(0.0), 3));
        assert!(r.is_ok());
    }

    #[test]
    fn median_of_five() {
        let mut t = Tuner::new(ScriptedTimer::new(vec![1.0, 2.0, 3.0, 4.0, 5.0])).with_repeats(5);
        let r = t.measure(&wl(), &ScheduleConfig::default()).unwrap();
        assert_eq!(r.cost_mean, Some(3.0));
        assert!((r.cost_std.unwrap() - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_is_flagged() {
        let mut t = Tuner::new(ScriptedTimer::constant(1.0));
        let r = t.measure(&wl(), &ScheduleConfig { oc_split: 3, ..Default::default() }).unwrap();
        assert!(r.failed && r.cost_mean.is_none() && r.error.is_some());
    }

    #[test]
    fn zero_repeats_rejected() {
        let mut t = Tuner::new(ScriptedTimer::constant(1.0)).with_repeats(0);
        assert!(matches!(t.measure(&wl(), &ScheduleConfig::default()), Err(TuneError::InvalidArgument(_))));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
