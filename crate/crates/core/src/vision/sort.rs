//! Segmented argsort over a flattened array.
//!
//! The flat array is cut into equal blocks regardless of segment boundaries.
//! One launch sorts every block by `(segment, value, index)`; because the
//! segment id is the primary key, elements never cross segment boundaries.
//! Each following launch merges pairs of sorted runs, doubling the run width,
//! with all threads of a pair cooperating via merge-path partitioning. Only
//! the window around the interface between two runs is merged: left elements
//! below the first right key and right elements above the last left key are
//! already in place, and a pair whose runs are already ordered is copied
//! through untouched.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::scan::ceil_log2;
use super::{VisionError, WARP};
use crate::exec::{Device, DeviceBuffer, ExecError, LaunchConfig, Session, ThreadCtx};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SortOrder {
    Ascending,
    Descending,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedArray {
    values: Vec<f32>,
    offsets: Vec<usize>,
}

impl SegmentedArray {
    /// `offsets` holds each segment start plus the trailing sentinel `n`.
    pub fn new(values: Vec<f32>, offsets: Vec<usize>) -> Result<Self, VisionError> {
        check_offsets(&offsets, values.len())?;
        Ok(SegmentedArray { values, offsets })
    }

    pub fn from_lengths(values: Vec<f32>, lengths: &[usize]) -> Result<Self, VisionError> {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        for l in lengths {
            offsets.push(offsets.last().unwrap() + l);
        }
        Self::new(values, offsets)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }
}

pub(crate) fn check_offsets(offsets: &[usize], n: usize) -> Result<(), VisionError> {
    let bad = |m: alloc::string::String| Err(VisionError::InvalidSegments(m));
    match (offsets.first(), offsets.last()) {
        (Some(0), Some(&last)) if last == n => {}
        _ => return bad(format!("offsets must start at 0 and end at {n}")),
    }
    if let Some(w) = offsets.windows(2).find(|w| w[0] > w[1]) {
        return bad(format!("offsets decrease from {} to {}", w[0], w[1]));
    }
    if n > i32::MAX as usize {
        return bad(format!("{n} elements exceed the index range"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SortReport {
    /// Segment-relative argsort: for position `j` of segment `s`, the offset
    /// within `s` of the element that sorts to that position.
    pub ranks: Vec<u32>,
    pub num_blocks: usize,
    pub merge_passes: usize,
    pub skipped_pairs: usize,
}

#[derive(Clone, Copy)]
struct Key {
    seg: i32,
    value: f32,
    index: i32,
}

fn value_cmp(order: SortOrder, a: f32, b: f32) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => {
            let o = a.partial_cmp(&b).unwrap_or(Ordering::Equal);
            match order {
                SortOrder::Ascending => o,
                SortOrder::Descending => o.reverse(),
            }
        }
    }
}

fn key_cmp(order: SortOrder, a: &Key, b: &Key) -> Ordering {
    a.seg.cmp(&b.seg).then_with(|| value_cmp(order, a.value, b.value)).then_with(|| a.index.cmp(&b.index))
}

const VALUES: usize = 0;
const SEGS: usize = 1;

fn load_key(t: &mut ThreadCtx<'_, '_>, idx_buf: usize, pos: usize) -> Result<Key, ExecError> {
    let index = t.ld_i32(idx_buf, pos)?;
    let seg = t.ld_i32(SEGS, index as usize)?;
    let value = t.ld_f32(VALUES, index as usize)?;
    Ok(Key { seg, value, index })
}

/// Sorted global indices of `values` (already on the device) for the given
/// segmentation. Positions keep their segment; only order within changes.
pub(crate) fn argsort_device(
    session: &mut Session,
    values: &mut DeviceBuffer,
    offsets: &[usize],
    order: SortOrder,
    block: usize,
) -> Result<(Vec<i32>, usize, usize, usize), VisionError> {
    let n = values.len();
    if block == 0 {
        return Err(super::invalid("sort block size must be at least 1"));
    }
    check_offsets(offsets, n)?;
    if n == 0 {
        return Ok((Vec::new(), 0, 0, 0));
    }
    let num_blocks = n.div_ceil(block);
    let nseg = offsets.len() - 1;
    let mut offs = DeviceBuffer::from_i32(Device::Gpu, offsets.iter().map(|&o| o as i32).collect());
    let mut segs = DeviceBuffer::zeroed(Device::Gpu, crate::exec::DType::I32, n);
    let mut src = DeviceBuffer::zeroed(Device::Gpu, crate::exec::DType::I32, n);

    // block sort: each thread sorts one equal-size block
    session.launch(
        |t| {
            let g = t.global_id();
            if !t.branch(g < num_blocks) {
                return Ok(());
            }
            let (start, end) = (g * block, ((g + 1) * block).min(n));
            let mut keys = Vec::with_capacity(end - start);
            for j in start..end {
                // last segment whose start is <= j (empty segments skipped)
                let (mut lo, mut hi) = (0usize, nseg);
                while lo < hi {
                    let mid = (lo + hi).div_ceil(2);
                    if t.ld_i32(2, mid)? as usize <= j {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                t.st_i32(SEGS, j, lo as i32)?;
                let value = t.ld_f32(VALUES, j)?;
                keys.push(Key { seg: lo as i32, value, index: j as i32 });
            }
            keys.sort_by(|a, b| key_cmp(order, a, b));
            for (k, key) in keys.iter().enumerate() {
                t.st_i32(3, start + k, key.index)?;
            }
            t.add_items((end - start) as u64);
            Ok(())
        },
        LaunchConfig::covering(num_blocks, WARP),
        &mut [&mut *values, &mut segs, &mut offs, &mut src],
    )?;

    let mut dst = DeviceBuffer::zeroed(Device::Gpu, crate::exec::DType::I32, n);
    let mut width = block;
    let mut passes = 0;
    let mut skipped = 0;
    while width < n {
        let pairs = n.div_ceil(2 * width);
        let coop = 2 * width / block;
        let mut skip_flags = DeviceBuffer::zeroed(Device::Gpu, crate::exec::DType::I32, pairs);
        session.launch(
            |t| merge_pass(t, order, n, block, width),
            LaunchConfig::new(pairs, coop),
            &mut [&mut *values, &mut segs, &mut src, &mut dst, &mut skip_flags],
        )?;
        skipped += skip_flags.as_i32().unwrap_or(&[]).iter().filter(|&&f| f != 0).count();
        core::mem::swap(&mut src, &mut dst);
        width *= 2;
        passes += 1;
    }
    let sorted = src.as_i32().map(<[i32]>::to_vec).unwrap_or_default();
    Ok((sorted, num_blocks, passes, skipped))
}

/// Buffers: values, segment ids, source order, destination order, skip flags.
fn merge_pass(
    t: &mut ThreadCtx<'_, '_>,
    order: SortOrder,
    n: usize,
    block: usize,
    width: usize,
) -> Result<(), ExecError> {
    const SRC: usize = 2;
    const DST: usize = 3;
    let lo = t.block_id() * 2 * width;
    let mid = (lo + width).min(n);
    let hi = (lo + 2 * width).min(n);
    let s = (lo + t.thread_id() * block).min(hi);
    let e = (s + block).min(hi);
    if !t.branch(s < e) {
        return Ok(());
    }
    let copy = |t: &mut ThreadCtx<'_, '_>, range: core::ops::Range<usize>| -> Result<(), ExecError> {
        for q in range {
            let v = t.ld_i32(SRC, q)?;
            t.st_i32(DST, q, v)?;
        }
        Ok(())
    };
    if mid == hi {
        t.add_items((e - s) as u64);
        return copy(t, s..e);
    }
    let cmp = |a: &Key, b: &Key| key_cmp(order, a, b);

    // active window: left[a..] and right[..b] are the only elements that move
    let first_right = load_key(t, SRC, mid)?;
    let last_left = load_key(t, SRC, mid - 1)?;
    let (mut l, mut r) = (lo, mid);
    while l < r {
        let m = (l + r) / 2;
        if cmp(&load_key(t, SRC, m)?, &first_right) == Ordering::Less {
            l = m + 1;
        } else {
            r = m;
        }
    }
    let win_lo = l;
    let (mut l, mut r) = (mid, hi);
    while l < r {
        let m = (l + r) / 2;
        if cmp(&load_key(t, SRC, m)?, &last_left) == Ordering::Less {
            l = m + 1;
        } else {
            r = m;
        }
    }
    let win_hi = l;
    if win_lo == mid {
        if t.thread_id() == 0 {
            t.st_i32(4, t.block_id(), 1)?;
        }
        t.add_items((e - s) as u64);
        return copy(t, s..e);
    }

    copy(t, s..e.min(win_lo))?;
    copy(t, s.max(win_hi)..e)?;
    let (qs, qe) = (s.max(win_lo), e.min(win_hi));
    if qs < qe {
        let (left_len, right_len) = (mid - win_lo, win_hi - mid);
        let d = qs - win_lo;
        // merge-path co-rank: how many left elements precede output d
        let (mut a, mut b) = (d.saturating_sub(right_len), d.min(left_len));
        while a < b {
            let m = (a + b) / 2;
            let lk = load_key(t, SRC, win_lo + m)?;
            let rk = load_key(t, SRC, mid + d - m - 1)?;
            if cmp(&lk, &rk) == Ordering::Less {
                a = m + 1;
            } else {
                b = m;
            }
        }
        let (mut i, mut j) = (a, d - a);
        for q in qs..qe {
            let take_left = if i >= left_len {
                false
            } else if j >= right_len {
                true
            } else {
                let lk = load_key(t, SRC, win_lo + i)?;
                let rk = load_key(t, SRC, mid + j)?;
                cmp(&lk, &rk) == Ordering::Less
            };
            let v = if take_left {
                i += 1;
                t.ld_i32(SRC, win_lo + i - 1)?
            } else {
                j += 1;
                t.ld_i32(SRC, mid + j - 1)?
            };
            t.st_i32(DST, q, v)?;
        }
    }
    t.add_items((e - s) as u64);
    Ok(())
}

/// Segment-relative ranks from sorted global indices.
fn to_ranks(sorted: &[i32], offsets: &[usize]) -> Vec<u32> {
    let mut ranks = Vec::with_capacity(sorted.len());
    for w in offsets.windows(2) {
        for &g in &sorted[w[0]..w[1]] {
            ranks.push(g as u32 - w[0] as u32);
        }
    }
    ranks
}

/// Stable per-segment argsort; NaN sorts last in either order. Runs
/// `1 + ceil(log2(ceil(n / block)))` kernel launches.
pub fn segmented_argsort(
    session: &mut Session,
    a: &SegmentedArray,
    order: SortOrder,
    block: usize,
) -> Result<SortReport, VisionError> {
    let mut values = DeviceBuffer::from_f32(Device::Gpu, a.values.clone());
    let (sorted, num_blocks, merge_passes, skipped_pairs) =
        argsort_device(session, &mut values, &a.offsets, order, block)?;
    debug_assert_eq!(merge_passes, ceil_log2(num_blocks));
    Ok(SortReport { ranks: to_ranks(&sorted, &a.offsets), num_blocks, merge_passes, skipped_pairs })
}

/// Host implementation for CPU placement.
pub fn segmented_argsort_sequential(a: &SegmentedArray, order: SortOrder) -> Vec<u32> {
    let mut ranks = Vec::with_capacity(a.values.len());
    for w in a.offsets.windows(2) {
        let seg = &a.values[w[0]..w[1]];
        let mut idx: Vec<u32> = (0..seg.len() as u32).collect();
        idx.sort_by(|&x, &y| value_cmp(order, seg[x as usize], seg[y as usize]));
        ranks.extend(idx);
    }
    ranks
}

pub(crate) fn sorted_indices_sequential(values: &[f32], offsets: &[usize], order: SortOrder) -> Vec<i32> {
    let mut out = Vec::with_capacity(values.len());
    for w in offsets.windows(2) {
        let mut idx: Vec<i32> = (w[0] as i32..w[1] as i32).collect();
        idx.sort_by(|&x, &y| value_cmp(order, values[x as usize], values[y as usize]));
        out.extend(idx);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_segment_hand_case() {
        let mut s = Session::new();
        let a = SegmentedArray::new(vec![3.0, 1.0, 2.0], vec![0, 3]).unwrap();
        let r = segmented_argsort(&mut s, &a, SortOrder::Ascending, 1).unwrap();
        assert_eq!(r.ranks, [1, 2, 0]);
        let r = segmented_argsort(&mut s, &a, SortOrder::Descending, 2).unwrap();
        assert_eq!(r.ranks, [0, 2, 1]);
    }

    #[test]
    fn five_blocks_take_three_merge_passes() {
        let mut s = Session::new().with_race_detection(true);
        let values: Vec<f32> = (0..20).map(|i| ((i * 7) % 11) as f32).collect();
        let a = SegmentedArray::from_lengths(values, &[3, 9, 0, 8]).unwrap();
        let r = segmented_argsort(&mut s, &a, SortOrder::Ascending, 4).unwrap();
        assert_eq!((r.num_blocks, r.merge_passes), (5, 3));
        assert_eq!(s.stats().launches, 4);
        let coop: Vec<usize> = s.stats().launch_log[1..].iter().map(|l| l.block).collect();
        assert_eq!(coop, [2, 4, 8]);
        assert_eq!(r.ranks, segmented_argsort_sequential(&a, SortOrder::Ascending));
    }

    #[test]
    fn ties_and_nan_are_ordered_stably() {
        let mut s = Session::new();
        let a = SegmentedArray::new(vec![1.0, f32::NAN, 1.0, 0.0, -0.0, 2.0], vec![0, 6]).unwrap();
        let asc = segmented_argsort(&mut s, &a, SortOrder::Ascending, 2).unwrap();
        assert_eq!(asc.ranks, [3, 4, 0, 2, 5, 1]);
        let desc = segmented_argsort(&mut s, &a, SortOrder::Descending, 2).unwrap();
        assert_eq!(desc.ranks, [5, 0, 2, 3, 4, 1]);
    }

    #[test]
    fn ordered_segments_skip_merges() {
        let mut s = Session::new();
        // every segment fits in one block, so each pair is already ordered
        let a = SegmentedArray::from_lengths(vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.0, 9.0, 8.0], &[2, 2, 2, 2]).unwrap();
        let r = segmented_argsort(&mut s, &a, SortOrder::Ascending, 2).unwrap();
        assert_eq!(r.ranks, [1, 0, 1, 0, 1, 0, 1, 0]);
        assert_eq!(r.skipped_pairs, 3);
    }

    #[test]
    fn bad_offsets_are_rejected() {
        assert!(SegmentedArray::new(vec![1.0; 3], vec![0, 2]).is_err());
        assert!(SegmentedArray::new(vec![1.0; 3], vec![1, 3]).is_err());
        assert!(SegmentedArray::new(vec![1.0; 3], vec![0, 2, 1, 3]).is_err());
        let mut s = Session::new();
        let a = SegmentedArray::new(vec![1.0; 3], vec![0, 3]).unwrap();
        assert!(segmented_argsort(&mut s, &a, SortOrder::Ascending, 0).is_err());
    }

    #[test]
    fn empty_input() {
        let mut s = Session::new();
        let a = SegmentedArray::new(vec![], vec![0]).unwrap();
        assert!(segmented_argsort(&mut s, &a, SortOrder::Ascending, 4).unwrap().ranks.is_empty());
    }
}
