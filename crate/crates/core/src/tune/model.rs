//! Cost models over schedule features.

use alloc::vec::Vec;

use crate::conv::{ConvWorkload, ScheduleConfig};

/// Tag of the feature definition below, stored in records file headers.
pub const FEATURES_VERSION: &str = "v1";

fn log2(x: usize) -> f64 {
    libm::log2(x.max(1) as f64)
}

/// `v1` features: log2 of each split factor, the unroll flag, log2 of the
/// vector width, log2 of the parallel block count and log2 of the per-block
/// output tile volume.
pub fn features(wl: &ConvWorkload, cfg: &ScheduleConfig) -> Vec<f64> {
    let (oh, ow) = wl.out_hw();
    let tile = (wl.k / cfg.oc_split.max(1)) * (oh / cfg.h_split.max(1)) * (ow / cfg.w_tile.max(1));
    alloc::vec![
        log2(cfg.oc_split),
        log2(cfg.h_split),
        log2(cfg.w_tile),
        (cfg.unroll > 0) as u8 as f64,
        log2(cfg.vec),
        log2(cfg.oc_split * cfg.h_split),
        log2(tile),
    ]
}

pub trait CostModel {
    /// Replaces the training set.
    fn fit(&mut self, samples: &[(Vec<f64>, f64)]);
    fn predict(&self, features: &[f64]) -> f64;
}

/// Inverse-distance weighted k-nearest-neighbour regression.
#[derive(Clone, Debug)]
pub struct KnnModel {
    k: usize,
    samples: Vec<(Vec<f64>, f64)>,
}

impl KnnModel {
    pub fn new(k: usize) -> Self {
        KnnModel { k: k.max(1), samples: Vec::new() }
    }
}

impl Default for KnnModel {
    fn default() -> Self {
        Self::new(3)
    }
}

impl CostModel for KnnModel {
    fn fit(&mut self, samples: &[(Vec<f64>, f64)]) {
        self.samples = samples.to_vec();
    }

    fn predict(&self, x: &[f64]) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let mut dist: Vec<(f64, usize)> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, (f, _))| (libm::sqrt(f.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum()), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if dist[0].0 == 0.0 {
            return self.samples[dist[0].1].1;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &(d, i) in dist.iter().take(self.k) {
            let w = 1.0 / d;
            num += w * self.samples[i].1;
            den += w;
        }
        num / den
    }
}
