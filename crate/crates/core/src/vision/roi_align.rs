//! ROIAlign: average-pooled bilinear sampling over a regular grid in each
//! output bin. Coordinates use the pixel-center convention, so a sample at
//! `(y, x)` reads pixel `(floor(y), floor(x))` exactly when both are integers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::VisionError;
use crate::exec::{DType, Device, DeviceBuffer, LaunchConfig, Session};
use crate::tensor::{Tensor, TensorData};

const MAX_BLOCK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoiAlignParams {
    pub output_size: (usize, usize),
    pub sampling_ratio: usize,
}

impl RoiAlignParams {
    pub fn new(ph: usize, pw: usize, sampling_ratio: usize) -> Self {
        RoiAlignParams { output_size: (ph, pw), sampling_ratio }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    sr: usize,
}

fn check(features: &Tensor, params: &RoiAlignParams) -> Result<Geometry, VisionError> {
    let s = features.shape();
    if s.len() != 4 || s[0] != 1 || !features.layout().is_plain() {
        return Err(VisionError::Shape(format!("features must be plain [1, C, H, W], got {s:?}")));
    }
    let (ph, pw) = params.output_size;
    if ph == 0 || pw == 0 {
        return Err(super::invalid("output size must be at least 1x1"));
    }
    if params.sampling_ratio == 0 {
        return Err(super::invalid("sampling_ratio must be at least 1"));
    }
    Ok(Geometry { c: s[1], h: s[2], w: s[3], ph, pw, sr: params.sampling_ratio })
}

/// Clamps a ROI to the feature map and widens empty extents to one pixel.
fn clamp_roi(roi: [f32; 4], g: &Geometry) -> [f32; 4] {
    let (wf, hf) = (g.w as f32, g.h as f32);
    let x1 = roi[0].clamp(0.0, wf);
    let y1 = roi[1].clamp(0.0, hf);
    let x2 = roi[2].clamp(x1, wf);
    let y2 = roi[3].clamp(y1, hf);
    let bw = if x2 > x1 { x2 - x1 } else { 1.0 };
    let bh = if y2 > y1 { y2 - y1 } else { 1.0 };
    [x1, y1, bw, bh]
}

fn bilinear<E>(
    read: &mut impl FnMut(usize) -> Result<f32, E>,
    plane: usize,
    g: &Geometry,
    mut y: f32,
    mut x: f32,
) -> Result<f32, E> {
    let (hf, wf) = (g.h as f32, g.w as f32);
    if y < -1.0 || y > hf || x < -1.0 || x > wf {
        return Ok(0.0);
    }
    y = y.max(0.0);
    x = x.max(0.0);
    let (mut y0, mut x0) = (y as usize, x as usize);
    let (y1, x1);
    if y0 >= g.h - 1 {
        y0 = g.h - 1;
        y1 = y0;
        y = y0 as f32;
    } else {
        y1 = y0 + 1;
    }
    if x0 >= g.w - 1 {
        x0 = g.w - 1;
        x1 = x0;
        x = x0 as f32;
    } else {
        x1 = x0 + 1;
    }
    let (ly, lx) = (y - y0 as f32, x - x0 as f32);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    let v00 = read(plane + y0 * g.w + x0)?;
    let v01 = read(plane + y0 * g.w + x1)?;
    let v10 = read(plane + y1 * g.w + x0)?;
    let v11 = read(plane + y1 * g.w + x1)?;
    Ok(hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11)
}

/// One output cell `(channel, py, px)` of one clamped ROI.
fn cell<E>(read: &mut impl FnMut(usize) -> Result<f32, E>, g: &Geometry, roi: [f32; 4], cell: usize) -> Result<f32, E> {
    let (ch, py, px) = (cell / (g.ph * g.pw), (cell / g.pw) % g.ph, cell % g.pw);
    let [x1, y1, rw, rh] = roi;
    let (bin_h, bin_w) = (rh / g.ph as f32, rw / g.pw as f32);
    let plane = ch * g.h * g.w;
    let mut sum = 0.0f32;
    for iy in 0..g.sr {
        let y = y1 + py as f32 * bin_h + (iy as f32 + 0.5) * bin_h / g.sr as f32 - 0.5;
        for ix in 0..g.sr {
            let x = x1 + px as f32 * bin_w + (ix as f32 + 0.5) * bin_w / g.sr as f32 - 0.5;
            sum += bilinear(read, plane, g, y, x)?;
        }
    }
    Ok(sum / (g.sr * g.sr) as f32)
}

/// Returns `[rois, C, ph, pw]`; one block per ROI, threads striding over cells.
pub fn roi_align(
    session: &mut Session,
    features: &Tensor,
    rois: &[[f32; 4]],
    params: &RoiAlignParams,
) -> Result<Tensor, VisionError> {
    let g = check(features, params)?;
    let cells = g.c * g.ph * g.pw;
    let shape = [rois.len(), g.c, g.ph, g.pw];
    if rois.is_empty() || cells == 0 || g.h == 0 || g.w == 0 {
        return Ok(Tensor::zeros(&shape)?);
    }
    let clamped: Vec<f32> = rois.iter().flat_map(|r| clamp_roi(*r, &g)).collect();
    let mut feat = features.data().clone().into_buffer(Device::Gpu);
    let mut roi_buf = DeviceBuffer::from_f32(Device::Gpu, clamped);
    let mut out = DeviceBuffer::zeroed(Device::Gpu, DType::F32, rois.len() * cells);
    session.launch(
        |t| {
            let r = t.block_id();
            let roi = [t.ld_f32(1, 4 * r)?, t.ld_f32(1, 4 * r + 1)?, t.ld_f32(1, 4 * r + 2)?, t.ld_f32(1, 4 * r + 3)?];
            for k in (t.thread_id()..cells).step_by(t.block_dim()) {
                let v = cell(&mut |i| t.ld_f32(0, i), &g, roi, k)?;
                t.st_f32(2, r * cells + k, v)?;
                t.add_items(1);
            }
            Ok(())
        },
        LaunchConfig::new(rois.len(), cells.min(MAX_BLOCK)),
        &mut [&mut feat, &mut roi_buf, &mut out],
    )?;
    let data = TensorData::from_buffer(out).ok_or_else(|| super::invalid("roi_align output buffer"))?;
    Ok(Tensor::new(shape.to_vec(), crate::tensor::LayoutTag::Nchw, data)?)
}

/// Host implementation for CPU placement.
pub fn roi_align_sequential(
    features: &Tensor,
    rois: &[[f32; 4]],
    params: &RoiAlignParams,
) -> Result<Tensor, VisionError> {
    let g = check(features, params)?;
    let cells = g.c * g.ph * g.pw;
    let shape = [rois.len(), g.c, g.ph, g.pw];
    if rois.is_empty() || cells == 0 || g.h == 0 || g.w == 0 {
        return Ok(Tensor::zeros(&shape)?);
    }
    let f = features.as_f32()?;
    let mut out = vec![0f32; rois.len() * cells];
    for (r, roi) in rois.iter().enumerate() {
        let roi = clamp_roi(*roi, &g);
        for k in 0..cells {
            out[r * cells + k] = cell(&mut |i| Ok::<f32, VisionError>(f[i]), &g, roi, k)?;
        }
    }
    Ok(Tensor::from_f32(&shape, out)?)
}
