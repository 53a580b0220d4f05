//! Vision-specific operators as emulator kernels: segmented argsort,
//! three-stage prefix scan, stream compaction, box NMS, multibox detection
//! and ROIAlign. Each operator also has a sequential host implementation used
//! for CPU placement; both produce bit-identical results.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use thiserror::Error;

use crate::exec::{DType, Device, DeviceBuffer, ExecError, LaunchConfig, Session, ThreadCtx};
use crate::tensor::TensorError;

mod multibox;
mod nms;
mod roi_align;
mod scan;
mod sort;

pub use multibox::{decode_anchor, multibox_detection, multibox_detection_sequential, MultiboxParams};
pub use nms::{box_nms, box_nms_batch, box_nms_sequential, iou, BoxRow, BoxSet, NmsParams};
pub use roi_align::{roi_align, roi_align_sequential, RoiAlignParams};
pub use scan::{
    scan_chunked_sequential, scan_f32, scan_i32, scan_i32_sequential, ScanKind, ScanOutput, ScanPlan,
    DEFAULT_PROCESSORS as DEFAULT_SCAN_PROCESSORS,
};
pub use sort::{segmented_argsort, segmented_argsort_sequential, SegmentedArray, SortOrder, SortReport};

/// Threads per block for data-parallel kernels, one SIMD group wide.
pub const WARP: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VisionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid segment offsets: {0}")]
    InvalidSegments(String),
    #[error("i32 overflow in scan")]
    Overflow,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub(crate) fn invalid(msg: impl Into<String>) -> VisionError {
    VisionError::InvalidArgument(msg.into())
}

/// Splits `[0, n)` into `p` contiguous ranges of `ceil(n / p)` elements,
/// the last ones taking whatever remains (possibly nothing).
pub fn partition_chunks(n: usize, p: usize) -> Result<Vec<Range<usize>>, VisionError> {
    if p == 0 {
        return Err(invalid("processor count must be at least 1"));
    }
    let chunk = n.div_ceil(p);
    Ok((0..p)
        .map(|i| {
            let start = (i * chunk).min(n);
            start..((i + 1) * chunk).min(n)
        })
        .collect())
}

/// Element types movable through compaction.
pub trait Element: Copy + Default + 'static {
    const DTYPE: DType;
    fn to_buffer(values: &[Self]) -> DeviceBuffer;
    fn from_buffer(buf: &DeviceBuffer) -> Vec<Self>;
    fn load(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<Self, ExecError>;
    fn store(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: Self) -> Result<(), ExecError>;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    fn to_buffer(values: &[Self]) -> DeviceBuffer {
        DeviceBuffer::from_f32(Device::Gpu, values.to_vec())
    }
    fn from_buffer(buf: &DeviceBuffer) -> Vec<Self> {
        buf.as_f32().map(<[f32]>::to_vec).unwrap_or_default()
    }
    fn load(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<Self, ExecError> {
        t.ld_f32(buf, i)
    }
    fn store(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: Self) -> Result<(), ExecError> {
        t.st_f32(buf, i, v)
    }
}

impl Element for i32 {
    const DTYPE: DType = DType::I32;
    fn to_buffer(values: &[Self]) -> DeviceBuffer {
        DeviceBuffer::from_i32(Device::Gpu, values.to_vec())
    }
    fn from_buffer(buf: &DeviceBuffer) -> Vec<Self> {
        buf.as_i32().map(<[i32]>::to_vec).unwrap_or_default()
    }
    fn load(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<Self, ExecError> {
        t.ld_i32(buf, i)
    }
    fn store(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: Self) -> Result<(), ExecError> {
        t.st_i32(buf, i, v)
    }
}

/// Keeps `values[i]` where `keep[i]`, preserving order. Output slots come
/// from an exclusive scan of the keep flags followed by a scatter kernel.
pub fn compact<T: Element>(session: &mut Session, values: &[T], keep: &[bool]) -> Result<(Vec<T>, usize), VisionError> {
    if values.len() != keep.len() {
        return Err(VisionError::LengthMismatch { left: values.len(), right: keep.len() });
    }
    let n = values.len();
    if n == 0 {
        return Ok((Vec::new(), 0));
    }
    let flags: Vec<i32> = keep.iter().map(|&k| k as i32).collect();
    let slots = scan_i32(session, &flags, ScanKind::Exclusive, scan::DEFAULT_PROCESSORS)?.values;
    let kept = (slots[n - 1] + flags[n - 1]) as usize;
    let mut src = T::to_buffer(values);
    let mut flag_buf = DeviceBuffer::from_i32(Device::Gpu, flags);
    let mut slot_buf = DeviceBuffer::from_i32(Device::Gpu, slots);
    let mut out = DeviceBuffer::zeroed(Device::Gpu, T::DTYPE, kept.max(1));
    session.launch(
        |t| {
            let i = t.global_id();
            if !t.branch(i < n) {
                return Ok(());
            }
            let keep = t.ld_i32(1, i)? != 0;
            if t.branch(keep) {
                let v = T::load(t, 0, i)?;
                let dst = t.ld_i32(2, i)? as usize;
                t.add_items(1);
                T::store(t, 3, dst, v)?;
            }
            Ok(())
        },
        LaunchConfig::covering(n, WARP),
        &mut [&mut src, &mut flag_buf, &mut slot_buf, &mut out],
    )?;
    let mut result = T::from_buffer(&out);
    result.truncate(kept);
    Ok((result, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn chunks_follow_fixed_assignment() {
        let lens = |n, p| -> Vec<usize> { partition_chunks(n, p).unwrap().iter().map(|r| r.len()).collect() };
        assert_eq!(lens(18, 5), [4, 4, 4, 4, 2]);
        assert_eq!(lens(5, 5), [1, 1, 1, 1, 1]);
        assert_eq!(lens(0, 3), [0, 0, 0]);
        assert_eq!(lens(5, 4), [2, 2, 1, 0]);
        assert!(matches!(partition_chunks(3, 0), Err(VisionError::InvalidArgument(_))));
    }

    #[test]
    fn chunks_cover_range_contiguously() {
        for n in 0..40 {
            for p in 1..9 {
                let r = partition_chunks(n, p).unwrap();
                assert_eq!(r.len(), p);
                assert_eq!(r[0].start, 0);
                assert_eq!(r[p - 1].end, n);
                assert!(r.windows(2).all(|w| w[0].end == w[1].start));
            }
        }
    }

    #[test]
    fn compact_keep_all_and_none() {
        let mut s = Session::new();
        let v = vec![1.5f32, -2.0, 3.0];
        assert_eq!(compact(&mut s, &v, &[true; 3]).unwrap(), (v.clone(), 3));
        assert_eq!(compact(&mut s, &v, &[false; 3]).unwrap(), (vec![], 0));
        assert!(matches!(compact(&mut s, &v, &[true]), Err(VisionError::LengthMismatch { .. })));
    }

    #[test]
    fn compact_matches_filter() {
        let mut s = Session::new().with_race_detection(true);
        let v: Vec<i32> = (0..100).map(|i| i * 7 - 300).collect();
        let keep: Vec<bool> = (0..100).map(|i| (i * 13) % 5 < 2).collect();
        let expected: Vec<i32> = v.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect();
        let (got, n) = compact(&mut s, &v, &keep).unwrap();
        assert_eq!(n, expected.len());
        assert_eq!(got, expected);
    }
}
