//! Greedy non-maximum suppression.
//!
//! Device pipeline: one launch initializes every output row to the invalid
//! marker and builds sort keys; a segmented argsort orders candidates by
//! descending score per batch; one block per batch then walks the candidates
//! in score order, its threads striding over the later candidates of the
//! same class and clearing those that overlap the current kept box; finally
//! kept rows are scattered to the front of the output via an exclusive scan.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::scan::{scan_i32, ScanKind, DEFAULT_PROCESSORS};
use super::sort::{argsort_device, sorted_indices_sequential, SortOrder};
use super::{VisionError, WARP};
use crate::exec::{DType, Device, DeviceBuffer, LaunchConfig, Session};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxRow {
    pub class_id: i32,
    pub score: f32,
    /// `x1, y1, x2, y2`.
    pub coords: [f32; 4],
}

impl BoxRow {
    pub const INVALID: BoxRow = BoxRow { class_id: -1, score: -1.0, coords: [-1.0; 4] };

    pub fn new(class_id: i32, score: f32, coords: [f32; 4]) -> Self {
        BoxRow { class_id, score, coords }
    }

    pub fn is_valid(&self) -> bool {
        self.class_id >= 0
    }

    pub fn to_array(&self) -> [f32; 6] {
        let c = self.coords;
        [self.class_id as f32, self.score, c[0], c[1], c[2], c[3]]
    }

    pub fn from_array(a: [f32; 6]) -> Self {
        BoxRow { class_id: a[0] as i32, score: a[1], coords: [a[2], a[3], a[4], a[5]] }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoxSet {
    pub rows: Vec<BoxRow>,
}

impl BoxSet {
    pub fn new(rows: Vec<BoxRow>) -> Self {
        BoxSet { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn valid_rows(&self) -> impl Iterator<Item = &BoxRow> {
        self.rows.iter().filter(|r| r.is_valid())
    }

    fn validate(&self) -> Result<(), VisionError> {
        for (i, r) in self.valid_rows().enumerate() {
            let [x1, y1, x2, y2] = r.coords;
            if !(x1 <= x2 && y1 <= y2) {
                return Err(super::invalid(format!("row {i} has inverted corners {:?}", r.coords)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmsParams {
    pub iou_threshold: f32,
    pub score_threshold: f32,
    pub top_k: Option<usize>,
    pub max_output: Option<usize>,
}

impl NmsParams {
    pub fn new(iou_threshold: f32, score_threshold: f32) -> Self {
        NmsParams { iou_threshold, score_threshold, top_k: None, max_output: None }
    }

    fn validate(&self) -> Result<(), VisionError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(super::invalid(format!("iou_threshold {} not in (0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

/// Corner-form intersection over union; zero when the union is empty.
pub fn iou(a: &[f32; 4], b: &[f32; 4]) -> f32 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn sort_key(row: &BoxRow, score_threshold: f32) -> f32 {
    if row.is_valid() && row.score >= score_threshold {
        row.score
    } else {
        f32::NAN
    }
}

pub fn box_nms(session: &mut Session, b: &BoxSet, params: &NmsParams) -> Result<BoxSet, VisionError> {
    let mut out = box_nms_batch(session, core::slice::from_ref(b), params)?;
    Ok(out.pop().unwrap_or_default())
}

/// Suppresses each batch element independently; every output set has the
/// capacity of its input, kept rows first in score order, the rest invalid.
pub fn box_nms_batch(session: &mut Session, sets: &[BoxSet], params: &NmsParams) -> Result<Vec<BoxSet>, VisionError> {
    params.validate()?;
    for s in sets {
        s.validate()?;
    }
    let mut offsets = vec![0usize];
    for s in sets {
        offsets.push(offsets.last().unwrap() + s.len());
    }
    let total = *offsets.last().unwrap();
    if total == 0 {
        return Ok(sets.iter().map(|_| BoxSet::default()).collect());
    }
    let rows: Vec<&BoxRow> = sets.iter().flat_map(|s| s.rows.iter()).collect();
    let mut cls = DeviceBuffer::from_i32(Device::Gpu, rows.iter().map(|r| r.class_id).collect());
    let mut score = DeviceBuffer::from_f32(Device::Gpu, rows.iter().map(|r| r.score).collect());
    let mut coords = DeviceBuffer::from_f32(Device::Gpu, rows.iter().flat_map(|r| r.coords.iter().copied()).collect());
    let mut out_cls = DeviceBuffer::zeroed(Device::Gpu, DType::I32, total);
    let mut out_score = DeviceBuffer::zeroed(Device::Gpu, DType::F32, total);
    let mut out_coords = DeviceBuffer::zeroed(Device::Gpu, DType::F32, 4 * total);
    let mut keys = DeviceBuffer::zeroed(Device::Gpu, DType::F32, total);
    let thr = params.score_threshold;

    // all output invalid up front; sort keys push non-candidates to the end
    session.launch(
        |t| {
            let i = t.global_id();
            if !t.branch(i < total) {
                return Ok(());
            }
            t.st_i32(3, i, -1)?;
            t.st_f32(4, i, -1.0)?;
            for k in 0..4 {
                t.st_f32(5, 4 * i + k, -1.0)?;
            }
            let c = t.ld_i32(0, i)?;
            let s = t.ld_f32(1, i)?;
            let key = sort_key(&BoxRow::new(c, s, [0.0; 4]), thr);
            t.st_f32(2, i, key)
        },
        LaunchConfig::covering(total, WARP),
        &mut [&mut cls, &mut score, &mut keys, &mut out_cls, &mut out_score, &mut out_coords],
    )?;

    let (sorted, ..) = argsort_device(session, &mut keys, &offsets, SortOrder::Descending, WARP)?;
    let mut sorted_buf = DeviceBuffer::from_i32(Device::Gpu, sorted);
    let mut offs = DeviceBuffer::from_i32(Device::Gpu, offsets.iter().map(|&o| o as i32).collect());
    let mut keep = DeviceBuffer::zeroed(Device::Gpu, DType::I32, total);
    let cap = sets.iter().map(BoxSet::len).max().unwrap_or(0);
    let top_k = params.top_k.unwrap_or(usize::MAX);
    let iou_thr = params.iou_threshold;
    let limit_slot = cap;

    // buffers: keys, sorted, class, coords, offsets, keep
    session.launch(
        |t| {
            let b = t.block_id();
            let (off, end) = (t.ld_i32(4, b)? as usize, t.ld_i32(4, b + 1)? as usize);
            let n = end - off;
            let (tid, bd) = (t.thread_id(), t.block_dim());
            match t.phase() {
                0 => {
                    for j in (tid..n).step_by(bd) {
                        let idx = t.ld_i32(1, off + j)? as usize;
                        let cand = !t.ld_f32(0, idx)?.is_nan() && j < top_k;
                        t.set_shared_bits(j, cand as u64)?;
                    }
                    t.barrier()
                }
                1 => {
                    if tid == 0 {
                        let mut limit = 0;
                        while limit < n && t.shared_bits(limit)? != 0 {
                            limit += 1;
                        }
                        t.set_shared_bits(limit_slot, limit as u64)?;
                    }
                    t.barrier()
                }
                phase => {
                    let i = phase - 2;
                    let limit = t.shared_bits(limit_slot)? as usize;
                    if i >= limit {
                        for j in (tid..n).step_by(bd) {
                            let k = t.shared_bits(j)? as i32;
                            t.st_i32(5, off + j, k)?;
                        }
                        return Ok(());
                    }
                    let live = t.shared_bits(i)? != 0;
                    if t.branch(live) {
                        let bi = t.ld_i32(1, off + i)? as usize;
                        let ci = t.ld_i32(2, bi)?;
                        let boxi = load_box(t, 3, bi)?;
                        let first = i + 1 + (bd + tid - (i + 1) % bd) % bd;
                        for j in (first..limit).step_by(bd) {
                            if t.shared_bits(j)? == 0 {
                                continue;
                            }
                            let bj = t.ld_i32(1, off + j)? as usize;
                            t.add_items(1);
                            if t.ld_i32(2, bj)? == ci && iou(&boxi, &load_box(t, 3, bj)?) >= iou_thr {
                                t.set_shared_bits(j, 0)?;
                            }
                        }
                    }
                    t.barrier()
                }
            }
        },
        LaunchConfig::new(sets.len(), cap.clamp(1, WARP)).with_shared(cap + 1),
        &mut [&mut keys, &mut sorted_buf, &mut cls, &mut coords, &mut offs, &mut keep],
    )?;

    let flags = keep.as_i32().map(<[i32]>::to_vec).unwrap_or_default();
    let slots = scan_i32(session, &flags, ScanKind::Exclusive, DEFAULT_PROCESSORS)?.values;
    let mut slot_buf = DeviceBuffer::from_i32(Device::Gpu, slots);
    let seg_of: Vec<i32> =
        offsets.windows(2).enumerate().flat_map(|(b, w)| core::iter::repeat_n(b as i32, w[1] - w[0])).collect();
    let mut seg_buf = DeviceBuffer::from_i32(Device::Gpu, seg_of);
    let max_output = params.max_output.unwrap_or(usize::MAX);

    // buffers: sorted, keep, slots, segment of position, offsets, class,
    // score, coords, out class, out score, out coords
    session.launch(
        |t| {
            let g = t.global_id();
            if !t.branch(g < total) {
                return Ok(());
            }
            let kept = t.ld_i32(1, g)? != 0;
            if !t.branch(kept) {
                return Ok(());
            }
            let b = t.ld_i32(3, g)? as usize;
            let off = t.ld_i32(4, b)? as usize;
            let rank = (t.ld_i32(2, g)? - t.ld_i32(2, off)?) as usize;
            if rank >= max_output {
                return Ok(());
            }
            let src = t.ld_i32(0, g)? as usize;
            let dst = off + rank;
            let c = t.ld_i32(5, src)?;
            let s = t.ld_f32(6, src)?;
            t.st_i32(8, dst, c)?;
            t.st_f32(9, dst, s)?;
            for k in 0..4 {
                let v = t.ld_f32(7, 4 * src + k)?;
                t.st_f32(10, 4 * dst + k, v)?;
            }
            t.add_items(1);
            Ok(())
        },
        LaunchConfig::covering(total, WARP),
        &mut [
            &mut sorted_buf,
            &mut keep,
            &mut slot_buf,
            &mut seg_buf,
            &mut offs,
            &mut cls,
            &mut score,
            &mut coords,
            &mut out_cls,
            &mut out_score,
            &mut out_coords,
        ],
    )?;

    let oc = out_cls.as_i32().unwrap_or(&[]);
    let os = out_score.as_f32().unwrap_or(&[]);
    let ob = out_coords.as_f32().unwrap_or(&[]);
    Ok(offsets
        .windows(2)
        .map(|w| {
            BoxSet::new(
                (w[0]..w[1])
                    .map(|i| BoxRow::new(oc[i], os[i], [ob[4 * i], ob[4 * i + 1], ob[4 * i + 2], ob[4 * i + 3]]))
                    .collect(),
            )
        })
        .collect())
}

fn load_box(t: &mut crate::exec::ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<[f32; 4], crate::exec::ExecError> {
    Ok([t.ld_f32(buf, 4 * i)?, t.ld_f32(buf, 4 * i + 1)?, t.ld_f32(buf, 4 * i + 2)?, t.ld_f32(buf, 4 * i + 3)?])
}

/// Host implementation for CPU placement.
pub fn box_nms_sequential(sets: &[BoxSet], params: &NmsParams) -> Result<Vec<BoxSet>, VisionError> {
    params.validate()?;
    let mut result = Vec::with_capacity(sets.len());
    for set in sets {
        set.validate()?;
        let keys: Vec<f32> = set.rows.iter().map(|r| sort_key(r, params.score_threshold)).collect();
        let order = sorted_indices_sequential(&keys, &[0, keys.len()], SortOrder::Descending);
        let top_k = params.top_k.unwrap_or(usize::MAX);
        let cands: Vec<usize> =
            order.iter().map(|&i| i as usize).take_while(|&i| !keys[i].is_nan()).take(top_k).collect();
        let mut kept: Vec<usize> = Vec::new();
        for &i in &cands {
            let r = &set.rows[i];
            let suppressed = kept.iter().any(|&k| {
                let q = &set.rows[k];
                q.class_id == r.class_id && iou(&q.coords, &r.coords) >= params.iou_threshold
            });
            if !suppressed {
                kept.push(i);
            }
        }
        let mut rows = vec![BoxRow::INVALID; set.len()];
        for (slot, &i) in kept.iter().take(params.max_output.unwrap_or(usize::MAX)).enumerate() {
            rows[slot] = set.rows[i];
        }
        result.push(BoxSet::new(rows));
    }
    Ok(result)
}
