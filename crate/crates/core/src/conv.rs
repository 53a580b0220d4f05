//! Direct 2-D convolution: a naive reference and a tiled schedule template
//! executed through the emulator.
//!
//! A schedule splits output channels into `oc_split` groups and output rows
//! into `h_split` bands, one block per (group, band). Inside a block thread
//! `(lane, tile)` handles the group's channels congruent to `lane` modulo
//! `vec` over the `tile`-th contiguous run of `ow / w_tile` columns. The
//! reduction always runs `r`, then `s`, then input channel innermost, so
//! every schedule reproduces the reference bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{DType, Device, DeviceBuffer, ExecError, LaunchConfig, Session};
use crate::tensor::{LayoutTag, Tensor, TensorData, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvError {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("schedule rejected: {0}")]
    ScheduleRejected(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad workload key {0:?}")]
    BadKey(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvWorkload {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub r: usize,
    pub s: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl ConvWorkload {
    /// Unit stride and dilation, no padding, one group.
    pub fn simple(n: usize, c: usize, h: usize, w: usize, k: usize, r: usize, s: usize) -> Self {
        ConvWorkload { n, c, h, w, k, r, s, stride: (1, 1), pad: (0, 0), dilation: (1, 1), groups: 1 }
    }

    pub fn with_pad(mut self, ph: usize, pw: usize) -> Self {
        self.pad = (ph, pw);
        self
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn out_extent(len: usize, kernel: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
        let span = dil.checked_mul(kernel.checked_sub(1)?)?.checked_add(1)?;
        let padded = len.checked_add(pad.checked_mul(2)?)?;
        Some(padded.checked_sub(span)? / stride + 1)
    }

    /// Output height and width; only meaningful after `validate`.
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = Self::out_extent(self.h, self.r, self.stride.0, self.pad.0, self.dilation.0).unwrap_or(0);
        let ow = Self::out_extent(self.w, self.s, self.stride.1, self.pad.1, self.dilation.1).unwrap_or(0);
        (oh, ow)
    }

    pub fn validate(&self) -> Result<(), ConvError> {
        let extents = [
            self.n,
            self.c,
            self.h,
            self.w,
            self.k,
            self.r,
            self.s,
            self.stride.0,
            self.stride.1,
            self.dilation.0,
            self.dilation.1,
            self.groups,
        ];
        if extents.contains(&0) {
            return Err(ConvError::InvalidWorkload(format!("zero extent in {self}")));
        }
        if !self.c.is_multiple_of(self.groups) || !self.k.is_multiple_of(self.groups) {
            return Err(ConvError::InvalidWorkload(format!(
                "groups {} must divide c={} and k={}",
                self.groups, self.c, self.k
            )));
        }
        let oh = Self::out_extent(self.h, self.r, self.stride.0, self.pad.0, self.dilation.0);
        let ow = Self::out_extent(self.w, self.s, self.stride.1, self.pad.1, self.dilation.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(()),
            _ => Err(ConvError::InvalidWorkload(format!("kernel larger than padded input in {self}"))),
        }
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.k, self.c / self.groups.max(1), self.r, self.s]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        let (oh, ow) = self.out_hw();
        [self.n, self.k, oh, ow]
    }

    /// Reduction length per output element.
    pub fn reduction(&self) -> usize {
        self.r * self.s * (self.c / self.groups.max(1))
    }

    pub fn key(&self) -> String {
        format!("{self}")
    }
}

impl fmt::Display for ConvWorkload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "conv2d/{}-{}-{}-{}/{}-{}-{}/{}-{}/{}-{}/{}-{}/{}",
            self.n,
            self.c,
            self.h,
            self.w,
            self.k,
            self.r,
            self.s,
            self.stride.0,
            self.stride.1,
            self.pad.0,
            self.pad.1,
            self.dilation.0,
            self.dilation.1,
            self.groups
        )
    }
}

impl FromStr for ConvWorkload {
    type Err = ConvError;

    fn from_str(key: &str) -> Result<Self, ConvError> {
        let bad = || ConvError::BadKey(key.into());
        let parts: Vec<&str> = key.split('/').collect();
        if parts.len() != 7 || parts[0] != "conv2d" {
            return Err(bad());
        }
        let nums = |p: &str, want: usize| -> Result<Vec<usize>, ConvError> {
            let v: Vec<usize> = p
                .split('-')
                .map(|x| {
                    // reject signs and leading zeros so the key round-trips exactly
                    if x.is_empty() || (x.len() > 1 && x.starts_with('0')) || !x.bytes().all(|b| b.is_ascii_digit()) {
                        Err(bad())
                    } else {
                        x.parse().map_err(|_| bad())
                    }
                })
                .collect::<Result<_, _>>()?;
            if v.len() == want {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        let i = nums(parts[1], 4)?;
        let kk = nums(parts[2], 3)?;
        let st = nums(parts[3], 2)?;
        let pd = nums(parts[4], 2)?;
        let dl = nums(parts[5], 2)?;
        let g = nums(parts[6], 1)?;
        let wl = ConvWorkload {
            n: i[0],
            c: i[1],
            h: i[2],
            w: i[3],
            k: kk[0],
            r: kk[1],
            s: kk[2],
            stride: (st[0], st[1]),
            pad: (pd[0], pd[1]),
            dilation: (dl[0], dl[1]),
            groups: g[0],
        };
        wl.validate()?;
        Ok(wl)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub oc_split: usize,
    pub h_split: usize,
    pub w_tile: usize,
    pub unroll: usize,
    pub vec: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { oc_split: 1, h_split: 1, w_tile: 1, unroll: 0, vec: 1 }
    }
}

impl fmt::Display for ScheduleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "oc_split={} h_split={} w_tile={} unroll={} vec={}",
            self.oc_split, self.h_split, self.w_tile, self.unroll, self.vec
        )
    }
}

impl ScheduleConfig {
    pub fn validate(&self, wl: &ConvWorkload) -> Result<(), ConvError> {
        wl.validate()?;
        let (oh, ow) = wl.out_hw();
        let reject = |what: String| Err(ConvError::ScheduleRejected(format!("{what} ({self})")));
        let divides = |f: usize, n: usize| f >= 1 && n.is_multiple_of(f);
        if !divides(self.oc_split, wl.k) {
            return reject(format!("oc_split does not divide k={}", wl.k));
        }
        if !divides(self.h_split, oh) {
            return reject(format!("h_split does not divide oh={oh}"));
        }
        if !divides(self.w_tile, ow) {
            return reject(format!("w_tile does not divide ow={ow}"));
        }
        if !divides(self.vec, self.oc_split) {
            return reject(String::from("vec does not divide oc_split"));
        }
        if self.unroll != 0 && self.unroll != wl.reduction() {
            return reject(format!("unroll must be 0 or {}", wl.reduction()));
        }
        Ok(())
    }

    pub fn launch_config(&self) -> LaunchConfig {
        LaunchConfig::new(self.oc_split * self.h_split, self.vec * self.w_tile)
    }
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|&d| n.is_multiple_of(d)).collect()
}

/// Enumeration order: oc_split, h_split, w_tile, unroll, vec, each ascending.
pub fn schedule_space(wl: &ConvWorkload) -> Vec<ScheduleConfig> {
    if wl.validate().is_err() {
        return Vec::new();
    }
    let (oh, ow) = wl.out_hw();
    let mut space = Vec::new();
    for oc_split in divisors(wl.k) {
        for h_split in divisors(oh) {
            for w_tile in divisors(ow) {
                for unroll in [0, wl.reduction()] {
                    for vec in [1, 4, 8] {
                        let cfg = ScheduleConfig { oc_split, h_split, w_tile, unroll, vec };
                        if cfg.validate(wl).is_ok() {
                            space.push(cfg);
                        }
                    }
                }
            }
        }
    }
    space
}

fn check_operands(input: &Tensor, weight: &Tensor, wl: &ConvWorkload) -> Result<(), ConvError> {
    wl.validate()?;
    if input.shape() != wl.input_shape() || !input.layout().is_plain() {
        return Err(ConvError::Shape(format!("input {:?} vs workload {:?}", input.shape(), wl.input_shape())));
    }
    if weight.shape() != wl.weight_shape() || !weight.layout().is_plain() {
        return Err(ConvError::Shape(format!("weight {:?} vs workload {:?}", weight.shape(), wl.weight_shape())));
    }
    Ok(())
}

/// Flat input index for output position `(n, ko, y, x)` and tap `(r, s, ci)`,
/// or `None` when the tap falls in the zero padding.
#[inline]
#[allow(clippy::too_many_arguments)]
fn input_index(
    wl: &ConvWorkload,
    n: usize,
    ko: usize,
    y: usize,
    x: usize,
    r: usize,
    s: usize,
    ci: usize,
) -> Option<usize> {
    let iy = (y * wl.stride.0 + r * wl.dilation.0).checked_sub(wl.pad.0)?;
    let ix = (x * wl.stride.1 + s * wl.dilation.1).checked_sub(wl.pad.1)?;
    if iy >= wl.h || ix >= wl.w {
        return None;
    }
    let cpg = wl.c / wl.groups;
    let c = (ko / (wl.k / wl.groups)) * cpg + ci;
    Some(((n * wl.c + c) * wl.h + iy) * wl.w + ix)
}

#[inline]
fn weight_index(wl: &ConvWorkload, ko: usize, r: usize, s: usize, ci: usize) -> usize {
    ((ko * (wl.c / wl.groups) + ci) * wl.r + r) * wl.s + s
}

/// Textbook direct convolution with the fixed reduction order.
pub fn conv2d_reference(input: &Tensor, weight: &Tensor, wl: &ConvWorkload) -> Result<Tensor, ConvError> {
    check_operands(input, weight, wl)?;
    let (x, wt) = (input.as_f32()?, weight.as_f32()?);
    let (oh, ow) = wl.out_hw();
    let cpg = wl.c / wl.groups;
    let mut out = vec![0f32; wl.n * wl.k * oh * ow];
    for n in 0..wl.n {
        for ko in 0..wl.k {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0f32;
                    for r in 0..wl.r {
                        for s in 0..wl.s {
                            for ci in 0..cpg {
                                if let Some(i) = input_index(wl, n, ko, y, xo, r, s, ci) {
                                    acc += x[i] * wt[weight_index(wl, ko, r, s, ci)];
                                }
                            }
                        }
                    }
                    out[((n * wl.k + ko) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_f32(&wl.output_shape(), out)?)
}

/// Runs the schedule template as one launch on `session`.
pub fn conv2d_scheduled(
    session: &mut Session,
    input: &Tensor,
    weight: &Tensor,
    wl: &ConvWorkload,
    cfg: &ScheduleConfig,
) -> Result<Tensor, ConvError> {
    check_operands(input, weight, wl)?;
    cfg.validate(wl)?;
    let (oh, ow) = wl.out_hw();
    let cpg = wl.c / wl.groups;
    let group_channels = wl.k / cfg.oc_split;
    let rows = oh / cfg.h_split;
    let cols = ow / cfg.w_tile;
    let mut xb = input.data().clone().into_buffer(Device::Gpu);
    let mut wb = weight.data().clone().into_buffer(Device::Gpu);
    let mut ob = DeviceBuffer::zeroed(Device::Gpu, DType::F32, wl.n * wl.k * oh * ow);
    let (wl, cfg) = (*wl, *cfg);
    session.launch(
        |t| {
            let (g, band) = (t.block_id() / cfg.h_split, t.block_id() % cfg.h_split);
            let (lane, tile) = (t.thread_id() % cfg.vec, t.thread_id() / cfg.vec);
            for j in (lane..group_channels).step_by(cfg.vec) {
                let ko = g * group_channels + j;
                if cfg.unroll > 0 {
                    // stage the whole filter in registers once per channel
                    for r in 0..wl.r {
                        for s in 0..wl.s {
                            for ci in 0..cpg {
                                let v = t.ld_f32(1, weight_index(&wl, ko, r, s, ci))?;
                                t.set_reg_f32((r * wl.s + s) * cpg + ci, v);
                            }
                        }
                    }
                }
                for n in 0..wl.n {
                    for y in band * rows..(band + 1) * rows {
                        for x in tile * cols..(tile + 1) * cols {
                            let mut acc = 0f32;
                            for r in 0..wl.r {
                                for s in 0..wl.s {
                                    for ci in 0..cpg {
                                        if let Some(i) = input_index(&wl, n, ko, y, x, r, s, ci) {
                                            let w = if cfg.unroll > 0 {
                                                t.reg_f32((r * wl.s + s) * cpg + ci)
                                            } else {
                                                t.ld_f32(1, weight_index(&wl, ko, r, s, ci))?
                                            };
                                            acc += t.ld_f32(0, i)? * w;
                                        }
                                    }
                                }
                            }
                            t.st_f32(2, ((n * wl.k + ko) * oh + y) * ow + x, acc)?;
                            t.add_items(1);
                        }
                    }
                }
            }
            Ok(())
        },
        cfg.launch_config(),
        &mut [&mut xb, &mut wb, &mut ob],
    )?;
    let data = TensorData::from_buffer(ob).ok_or_else(|| ConvError::Shape("output buffer".into()))?;
    Ok(Tensor::new(wl.output_shape().to_vec(), LayoutTag::Nchw, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let wl = ConvWorkload::simple(1, 1, 3, 3, 1, 3, 3);
        let x = Tensor::from_f32(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = Tensor::from_f32(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        assert_eq!(conv2d_reference(&x, &w, &wl).unwrap().as_f32().unwrap(), [9.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let wl = ConvWorkload::simple(1, 1, 2, 3, 1, 1, 1);
        let data: Vec<f32> = (0..6).map(|v| v as f32 - 2.5).collect();
        let x = Tensor::from_f32(&[1, 1, 2, 3], data.clone()).unwrap();
        let w = Tensor::from_f32(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d_reference(&x, &w, &wl).unwrap().as_f32().unwrap(), data.as_slice());
    }

    #[test]
    fn key_round_trip() {
        let wl = ConvWorkload::simple(1, 8, 8, 8, 8, 3, 3).with_pad(1, 1);
        assert_eq!(wl.key(), "conv2d/1-8-8-8/8-3-3/1-1/1-1/1-1/1");
        assert_eq!(wl.key().parse::<ConvWorkload>().unwrap(), wl);
        for bad in [
            "conv2d/1-8-8/8-3-3/1-1/1-1/1-1/1",
            "conv2d/1-8-8-8/8-3-3/1-1/1-1/1-1/3",
            "conv2d/01-8-8-8/8-3-3/1-1/1-1/1-1/1",
            "pool/1-1-1-1/1-1-1/1-1/0-0/1-1/1",
        ] {
            assert!(bad.parse::<ConvWorkload>().is_err(), "{bad}");
        }
    }

    #[test]
    fn space_sizes() {
        let wl = ConvWorkload::simple(1, 8, 4, 4, 8, 1, 1);
        assert_eq!(schedule_space(&wl).len(), 126);
        let one = ConvWorkload::simple(1, 1, 1, 1, 1, 1, 1);
        let space = schedule_space(&one);
        assert_eq!(space.len(), 2);
        assert!(space.contains(&ScheduleConfig::default()));
    }

    #[test]
    fn indivisible_split_is_rejected() {
        let wl = ConvWorkload::simple(1, 8, 8, 8, 8, 3, 3);
        let cfg = ScheduleConfig { oc_split: 3, ..Default::default() };
        let x = Tensor::zeros(&wl.input_shape()).unwrap();
        let w = Tensor::zeros(&wl.weight_shape()).unwrap();
        let err = conv2d_scheduled(&mut Session::new(), &x, &w, &wl, &cfg).unwrap_err();
        assert!(matches!(err, ConvError::ScheduleRejected(_)));
    }

    #[test]
    fn every_schedule_is_bitwise_reference() {
        let wl = ConvWorkload::simple(2, 4, 5, 6, 4, 3, 2).with_pad(1, 0).with_stride(1, 2).with_groups(2);
        let x = Tensor::from_f32(&wl.input_shape(), (0..240).map(|i| ((i * 29) % 17) as f32 * 0.37 - 3.0).collect())
            .unwrap();
        let w = Tensor::from_f32(&wl.weight_shape(), (0..48).map(|i| ((i * 11) % 7) as f32 * 0.21 - 0.6).collect())
            .unwrap();
        let reference = conv2d_reference(&x, &w, &wl).unwrap();
        let mut s = Session::new().with_race_detection(true);
        for cfg in schedule_space(&wl) {
            let before = s.stats().launches;
            assert_eq!(conv2d_scheduled(&mut s, &x, &w, &wl, &cfg).unwrap(), reference, "{cfg}");
            let stats = s.stats();
            assert_eq!(stats.launches, before + 1);
            assert_eq!(stats.launch_log.last().unwrap().grid, cfg.oc_split * cfg.h_split);
        }
    }
}
