//! SSD-style detection output: per-anchor class selection, offset decoding
//! and per-batch non-maximum suppression.

use alloc::format;
use alloc::vec::Vec;

use super::nms::{box_nms_batch, box_nms_sequential, BoxRow, BoxSet, NmsParams};
use super::{VisionError, WARP};
use crate::exec::{DType, Device, DeviceBuffer, LaunchConfig, Session};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiboxParams {
    pub variances: [f32; 4],
    pub score_threshold: f32,
    pub iou_threshold: f32,
    pub top_k: Option<usize>,
}

impl Default for MultiboxParams {
    fn default() -> Self {
        MultiboxParams { variances: [0.1, 0.1, 0.2, 0.2], score_threshold: 0.01, iou_threshold: 0.5, top_k: None }
    }
}

impl MultiboxParams {
    fn nms(&self) -> NmsParams {
        NmsParams {
            iou_threshold: self.iou_threshold,
            score_threshold: self.score_threshold,
            top_k: self.top_k,
            max_output: None,
        }
    }
}

/// Decodes center-form offsets `loc = (dx, dy, dw, dh)` against a corner-form
/// anchor, returning a corner-form box clipped to `[0, 1]`.
pub fn decode_anchor(anchor: [f32; 4], loc: [f32; 4], var: [f32; 4]) -> [f32; 4] {
    let aw = anchor[2] - anchor[0];
    let ah = anchor[3] - anchor[1];
    let ax = (anchor[0] + anchor[2]) * 0.5;
    let ay = (anchor[1] + anchor[3]) * 0.5;
    let cx = ax + loc[0] * var[0] * aw;
    let cy = ay + loc[1] * var[1] * ah;
    let w = aw * libm::expf(loc[2] * var[2]);
    let h = ah * libm::expf(loc[3] * var[3]);
    let clip = |v: f32| v.clamp(0.0, 1.0);
    [clip(cx - w * 0.5), clip(cy - h * 0.5), clip(cx + w * 0.5), clip(cy + h * 0.5)]
}

struct Dims {
    batch: usize,
    classes: usize,
    anchors: usize,
}

fn check_shapes(probs: &Tensor, loc: &Tensor, anchors: &Tensor) -> Result<Dims, VisionError> {
    let ps = probs.shape();
    if ps.len() < 3 {
        return Err(VisionError::Shape(format!("class_probs must be [batch, classes, anchors], got {ps:?}")));
    }
    let (batch, classes) = (ps[0], ps[1]);
    let a: usize = ps[2..].iter().product();
    if classes < 2 {
        return Err(VisionError::Shape(format!("need a background and at least one class, got {classes}")));
    }
    if anchors.shape() != [1, a, 4] {
        return Err(VisionError::Shape(format!("anchors must be [1, {a}, 4], got {:?}", anchors.shape())));
    }
    if loc.shape().first() != Some(&batch) || loc.numel() != batch * a * 4 {
        return Err(VisionError::Shape(format!("loc_preds must be [{batch}, {}], got {:?}", a * 4, loc.shape())));
    }
    Ok(Dims { batch, classes, anchors: a })
}

/// Best non-background class by first strict maximum. Anchors whose best
/// foreground probability is not positive produce no candidate.
fn select_class(mut prob: impl FnMut(usize) -> f32, classes: usize) -> (i32, f32) {
    let (mut best, mut score) = (0usize, prob(1));
    for c in 2..classes {
        let p = prob(c);
        if p > score {
            best = c - 1;
            score = p;
        }
    }
    if score > 0.0 {
        (best as i32, score)
    } else {
        (-1, -1.0)
    }
}

pub fn multibox_detection(
    session: &mut Session,
    class_probs: &Tensor,
    loc_preds: &Tensor,
    anchors: &Tensor,
    params: &MultiboxParams,
) -> Result<Vec<BoxSet>, VisionError> {
    let d = check_shapes(class_probs, loc_preds, anchors)?;
    let total = d.batch * d.anchors;
    if total == 0 {
        return box_nms_batch(session, &alloc::vec![BoxSet::default(); d.batch], &params.nms());
    }
    let mut probs = DeviceBuffer::from_f32(Device::Gpu, class_probs.as_f32()?.to_vec());
    let mut loc = DeviceBuffer::from_f32(Device::Gpu, loc_preds.as_f32()?.to_vec());
    let mut anc = DeviceBuffer::from_f32(Device::Gpu, anchors.as_f32()?.to_vec());
    let mut out_cls = DeviceBuffer::zeroed(Device::Gpu, DType::I32, total);
    let mut out_score = DeviceBuffer::zeroed(Device::Gpu, DType::F32, total);
    let mut out_box = DeviceBuffer::zeroed(Device::Gpu, DType::F32, 4 * total);
    let (classes, a, var) = (d.classes, d.anchors, params.variances);
    session.launch(
        |t| {
            let g = t.global_id();
            if !t.branch(g < total) {
                return Ok(());
            }
            let (b, i) = (g / a, g % a);
            let mut probs_seen = Vec::with_capacity(classes);
            for c in 0..classes {
                probs_seen.push(t.ld_f32(0, (b * classes + c) * a + i)?);
            }
            let (cls, score) = select_class(|c| probs_seen[c], classes);
            let mut l = [0f32; 4];
            let mut an = [0f32; 4];
            for k in 0..4 {
                l[k] = t.ld_f32(1, (b * a + i) * 4 + k)?;
                an[k] = t.ld_f32(2, i * 4 + k)?;
            }
            let bx = decode_anchor(an, l, var);
            t.st_i32(3, g, cls)?;
            t.st_f32(4, g, score)?;
            for (k, v) in bx.iter().enumerate() {
                t.st_f32(5, 4 * g + k, *v)?;
            }
            t.add_items(1);
            Ok(())
        },
        LaunchConfig::covering(total, WARP),
        &mut [&mut probs, &mut loc, &mut anc, &mut out_cls, &mut out_score, &mut out_box],
    )?;
    let (oc, os, ob) =
        (out_cls.as_i32().unwrap_or(&[]), out_score.as_f32().unwrap_or(&[]), out_box.as_f32().unwrap_or(&[]));
    let sets: Vec<BoxSet> = (0..d.batch)
        .map(|b| {
            BoxSet::new(
                (b * a..(b + 1) * a)
                    .map(|g| {
                        if oc[g] < 0 {
                            BoxRow::INVALID
                        } else {
                            BoxRow::new(oc[g], os[g], [ob[4 * g], ob[4 * g + 1], ob[4 * g + 2], ob[4 * g + 3]])
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    box_nms_batch(session, &sets, &params.nms())
}

/// Host implementation for CPU placement.
pub fn multibox_detection_sequential(
    class_probs: &Tensor,
    loc_preds: &Tensor,
    anchors: &Tensor,
    params: &MultiboxParams,
) -> Result<Vec<BoxSet>, VisionError> {
    let d = check_shapes(class_probs, loc_preds, anchors)?;
    let (p, l, an) = (class_probs.as_f32()?, loc_preds.as_f32()?, anchors.as_f32()?);
    let a = d.anchors;
    let sets: Vec<BoxSet> = (0..d.batch)
        .map(|b| {
            BoxSet::new(
                (0..a)
                    .map(|i| {
                        let (cls, score) = select_class(|c| p[(b * d.classes + c) * a + i], d.classes);
                        if cls < 0 {
                            return BoxRow::INVALID;
                        }
                        let o = (b * a + i) * 4;
                        let bx = decode_anchor(
                            [an[4 * i], an[4 * i + 1], an[4 * i + 2], an[4 * i + 3]],
                            [l[o], l[o + 1], l[o + 2], l[o + 3]],
                            params.variances,
                        );
                        BoxRow::new(cls, score, bx)
                    })
                    .collect(),
            )
        })
        .collect();
    box_nms_sequential(&sets, &params.nms())
}
