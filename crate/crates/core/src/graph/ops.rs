//! Operator kinds and their evaluation on either device. GPU-placed nodes
//! run through emulator kernels, CPU-placed nodes through the sequential
//! implementations; both produce identical bits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttrValue, GraphError, Node, OpError};
use crate::conv::{conv2d_reference, conv2d_scheduled, ConvWorkload};
use crate::exec::{DType, Device, DeviceBuffer, LaunchConfig, Session};
use crate::tensor::{layout_transform, layout_transform_on, LayoutTag, Tensor, TensorData};
use crate::vision::{
    box_nms_batch, box_nms_sequential, multibox_detection, multibox_detection_sequential, roi_align,
    roi_align_sequential, scan_chunked_sequential, scan_f32, scan_i32, segmented_argsort, segmented_argsort_sequential,
    BoxRow, BoxSet, MultiboxParams, NmsParams, RoiAlignParams, ScanKind, SegmentedArray, SortOrder, WARP,
};

macro_rules! op_kinds {
    ($($variant:ident => $name:literal, $arity:expr;)*) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum OpKind {
            $($variant,)*
        }

        impl OpKind {
            pub const ALL: &'static [OpKind] = &[$(OpKind::$variant,)*];

            pub fn name(&self) -> &'static str {
                match self {
                    $(OpKind::$variant => $name,)*
                }
            }

            /// Accepted input counts, inclusive.
            fn arity(&self) -> (usize, usize) {
                match self {
                    $(OpKind::$variant => $arity,)*
                }
            }
        }

        impl FromStr for OpKind {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok(OpKind::$variant),)*
                    _ => Err(format!("unknown op `{s}`")),
                }
            }
        }
    };
}

op_kinds! {
    Conv2d => "conv2d", (2, 2);
    Relu => "relu", (1, 1);
    Add => "add", (2, 2);
    Pool => "pool", (1, 1);
    Softmax => "softmax", (1, 1);
    Reshape => "reshape", (1, 1);
    Const => "const", (0, 0);
    Identity => "identity", (1, 1);
    BoxNms => "box_nms", (1, 1);
    MultiboxDetection => "multibox_detection", (3, 3);
    MultiboxPrior => "multibox_prior", (1, 1);
    RoiAlign => "roi_align", (2, 2);
    Argsort => "argsort", (1, 1);
    Scan => "scan", (1, 1);
    Copy => "copy", (1, 1);
    LayoutTransform => "layout_transform", (1, 1);
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl OpKind {
    pub(crate) fn check_arity(&self, node: &str, n: usize) -> Result<(), GraphError> {
        let (lo, hi) = self.arity();
        if n < lo || n > hi {
            let want = if lo == hi { format!("{lo}") } else { format!("{lo}..={hi}") };
            return Err(GraphError::at(node, format!("{self} takes {want} inputs, got {n}")));
        }
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> OpError {
    OpError::Invalid(msg.into())
}

struct AttrReader<'a>(&'a Node);

impl AttrReader<'_> {
    fn get(&self, key: &str) -> Option<&AttrValue> {
        self.0.attrs.get(key)
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64, OpError> {
        self.get(key)
            .map_or(Ok(default), |v| v.as_f64().ok_or_else(|| invalid(format!("attr `{key}` must be a number"))))
    }

    fn int(&self, key: &str, default: i64) -> Result<i64, OpError> {
        self.get(key)
            .map_or(Ok(default), |v| v.as_int().ok_or_else(|| invalid(format!("attr `{key}` must be an integer"))))
    }

    fn opt_count(&self, key: &str) -> Result<Option<usize>, OpError> {
        let v = self.int(key, -1)?;
        Ok(if v < 0 { None } else { Some(v as usize) })
    }

    fn bool(&self, key: &str, default: bool) -> Result<bool, OpError> {
        match self.get(key) {
            None => Ok(default),
            Some(AttrValue::Bool(b)) => Ok(*b),
            Some(AttrValue::Int(i)) => Ok(*i != 0),
            Some(_) => Err(invalid(format!("attr `{key}` must be a boolean"))),
        }
    }

    fn pair(&self, key: &str, default: (usize, usize)) -> Result<(usize, usize), OpError> {
        let Some(v) = self.get(key) else { return Ok(default) };
        let ints = v.as_ints().ok_or_else(|| invalid(format!("attr `{key}` must be integers")))?;
        match ints.as_slice() {
            [a] if *a >= 0 => Ok((*a as usize, *a as usize)),
            [a, b] if *a >= 0 && *b >= 0 => Ok((*a as usize, *b as usize)),
            _ => Err(invalid(format!("attr `{key}` must hold one or two non-negative integers"))),
        }
    }

    fn floats(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, OpError> {
        self.get(key).map_or(Ok(default.to_vec()), |v| {
            v.as_floats().ok_or_else(|| invalid(format!("attr `{key}` must be a list of numbers")))
        })
    }

    fn str(&self, key: &str) -> Result<Option<&str>, OpError> {
        match self.get(key) {
            None => Ok(None),
            Some(AttrValue::Str(s)) => Ok(Some(s)),
            Some(_) => Err(invalid(format!("attr `{key}` must be a string"))),
        }
    }
}

fn plain(t: &Tensor) -> Result<Tensor, OpError> {
    Ok(if t.layout().is_plain() { t.clone() } else { t.to_plain()? })
}

fn gpu_f32(t: &Tensor) -> Result<DeviceBuffer, OpError> {
    Ok(DeviceBuffer::from_f32(Device::Gpu, t.as_f32()?.to_vec()))
}

fn out_tensor(shape: &[usize], buf: DeviceBuffer) -> Result<Tensor, OpError> {
    let data = TensorData::from_buffer(buf).ok_or_else(|| invalid("scratch buffer as output"))?;
    Ok(Tensor::new(shape.to_vec(), LayoutTag::Nchw, data)?)
}

/// Applies `f` elementwise; one thread per element on the GPU.
fn unary(session: &mut Session, device: Device, x: &Tensor, f: fn(f32) -> f32) -> Result<Tensor, OpError> {
    let v = x.as_f32()?;
    if device == Device::Cpu {
        return Ok(Tensor::from_f32(x.shape(), v.iter().map(|&a| f(a)).collect())?);
    }
    let n = v.len();
    let mut src = gpu_f32(x)?;
    let mut dst = DeviceBuffer::zeroed(Device::Gpu, DType::F32, n);
    session.launch(
        |t| {
            let i = t.global_id();
            if t.branch(i < n) {
                let a = t.ld_f32(0, i)?;
                t.st_f32(1, i, f(a))?;
                t.add_items(1);
            }
            Ok(())
        },
        LaunchConfig::covering(n, WARP),
        &mut [&mut src, &mut dst],
    )?;
    out_tensor(x.shape(), dst)
}

fn add(session: &mut Session, device: Device, a: &Tensor, b: &Tensor) -> Result<Tensor, OpError> {
    if a.shape() != b.shape() {
        return Err(invalid(format!("add operands differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (x, y) = (a.as_f32()?, b.as_f32()?);
    if device == Device::Cpu {
        return Ok(Tensor::from_f32(a.shape(), x.iter().zip(y).map(|(p, q)| p + q).collect())?);
    }
    let n = x.len();
    let (mut xb, mut yb) = (gpu_f32(a)?, gpu_f32(b)?);
    let mut dst = DeviceBuffer::zeroed(Device::Gpu, DType::F32, n);
    session.launch(
        |t| {
            let i = t.global_id();
            if t.branch(i < n) {
                let v = t.ld_f32(0, i)? + t.ld_f32(1, i)?;
                t.st_f32(2, i, v)?;
            }
            Ok(())
        },
        LaunchConfig::covering(n, WARP),
        &mut [&mut xb, &mut yb, &mut dst],
    )?;
    out_tensor(a.shape(), dst)
}

/// Max pooling over `[N, C, H, W]` without padding.
fn pool(
    session: &mut Session,
    device: Device,
    x: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor, OpError> {
    let s = x.shape();
    if s.len() != 4
        || kernel.0 == 0
        || kernel.1 == 0
        || stride.0 == 0
        || stride.1 == 0
        || kernel.0 > s[2]
        || kernel.1 > s[3]
    {
        return Err(invalid(format!("pool {kernel:?}/{stride:?} does not fit input {s:?}")));
    }
    let (oh, ow) = ((s[2] - kernel.0) / stride.0 + 1, (s[3] - kernel.1) / stride.1 + 1);
    let out_shape = [s[0], s[1], oh, ow];
    let n = s[0] * s[1] * oh * ow;
    let (h, w) = (s[2], s[3]);
    let cell = |read: &mut dyn FnMut(usize) -> Result<f32, crate::exec::ExecError>, o: usize| {
        let (plane, y, xo) = (o / (oh * ow), (o / ow) % oh, o % ow);
        let mut m = f32::NEG_INFINITY;
        for dy in 0..kernel.0 {
            for dx in 0..kernel.1 {
                m = m.max(read((plane * h + y * stride.0 + dy) * w + xo * stride.1 + dx)?);
            }
        }
        Ok::<f32, crate::exec::ExecError>(m)
    };
    if device == Device::Cpu {
        let v = x.as_f32()?;
        let out: Result<Vec<f32>, _> = (0..n).map(|o| cell(&mut |i| Ok(v[i]), o)).collect();
        return Ok(Tensor::from_f32(&out_shape, out?)?);
    }
    let mut src = gpu_f32(x)?;
    let mut dst = DeviceBuffer::zeroed(Device::Gpu, DType::F32, n);
    session.launch(
        |t| {
            let o = t.global_id();
            if t.branch(o < n) {
                let m = cell(&mut |i| t.ld_f32(0, i), o)?;
                t.st_f32(1, o, m)?;
            }
            Ok(())
        },
        LaunchConfig::covering(n, WARP),
        &mut [&mut src, &mut dst],
    )?;
    out_tensor(&out_shape, dst)
}

/// Numerically stable softmax of one lane, in place.
fn softmax_lane(v: &mut [f32]) {
    let m = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0f32;
    for x in v.iter_mut() {
        *x = libm::expf(*x - m);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn softmax(session: &mut Session, device: Device, x: &Tensor, axis: i64) -> Result<Tensor, OpError> {
    let s = x.shape();
    let axis = if axis < 0 { axis + s.len() as i64 } else { axis };
    if axis < 0 || axis as usize >= s.len() {
        return Err(invalid(format!("softmax axis {axis} out of range for {s:?}")));
    }
    let axis = axis as usize;
    let (outer, len, inner) = (s[..axis].iter().product::<usize>(), s[axis], s[axis + 1..].iter().product::<usize>());
    let lanes = outer * inner;
    let at = move |lane: usize, k: usize| (lane / inner * len + k) * inner + lane % inner;
    if device == Device::Cpu {
        let mut out = x.as_f32()?.to_vec();
        let mut buf = vec![0f32; len];
        for lane in 0..lanes {
            for k in 0..len {
                buf[k] = out[at(lane, k)];
            }
            softmax_lane(&mut buf);
            for k in 0..len {
                out[at(lane, k)] = buf[k];
            }
        }
        return Ok(Tensor::from_f32(s, out)?);
    }
    let mut src = gpu_f32(x)?;
    let mut dst = DeviceBuffer::zeroed(Device::Gpu, DType::F32, x.numel());
    session.launch(
        |t| {
            let lane = t.global_id();
            if !t.branch(lane < lanes) {
                return Ok(());
            }
            let mut buf = Vec::with_capacity(len);
            for k in 0..len {
                buf.push(t.ld_f32(0, at(lane, k))?);
            }
            softmax_lane(&mut buf);
            for (k, v) in buf.into_iter().enumerate() {
                t.st_f32(1, at(lane, k), v)?;
            }
            t.add_items(len as u64);
            Ok(())
        },
        LaunchConfig::covering(lanes, WARP),
        &mut [&mut src, &mut dst],
    )?;
    out_tensor(s, dst)
}

fn reshape(x: &Tensor, target: &[i64]) -> Result<Tensor, OpError> {
    let known: usize = target.iter().filter(|&&d| d > 0).map(|&d| d as usize).product();
    let infer = target.iter().filter(|&&d| d == -1).count();
    if infer > 1 || target.iter().any(|&d| d == 0 || d < -1) || known == 0 {
        return Err(invalid(format!("bad reshape target {target:?}")));
    }
    let shape: Vec<usize> = target.iter().map(|&d| if d == -1 { x.numel() / known } else { d as usize }).collect();
    Ok(x.reshaped(&shape)?)
}

fn constant(a: &AttrReader<'_>) -> Result<Tensor, OpError> {
    let shape: Vec<usize> = a
        .get("shape")
        .and_then(AttrValue::as_ints)
        .ok_or_else(|| invalid("const needs an integer `shape` attr"))?
        .into_iter()
        .map(|d| usize::try_from(d).map_err(|_| invalid("negative const extent")))
        .collect::<Result<_, _>>()?;
    let n: usize = shape.iter().product();
    let data = if let Some(d) = a.get("data") {
        let v = d.as_floats().ok_or_else(|| invalid("const `data` must be numbers"))?;
        if v.len() == 1 && n != 1 {
            vec![v[0] as f32; n]
        } else {
            v.into_iter().map(|x| x as f32).collect()
        }
    } else {
        let seed = a.int("seed", 0)?;
        let scale = a.f64("scale", 1.0)? as f32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        (0..n).map(|_| rng.random_range(-1.0f32..1.0) * scale).collect()
    };
    Ok(Tensor::from_f32(&shape, data)?)
}

fn conv2d(session: &mut Session, device: Device, node: &Node, x: &Tensor, w: &Tensor) -> Result<Tensor, OpError> {
    let a = AttrReader(node);
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(invalid(format!("conv2d expects 4-d data and weight, got {xs:?} and {ws:?}")));
    }
    let groups = a.int("groups", 1)?;
    let groups = usize::try_from(groups).map_err(|_| invalid("groups must be positive"))?;
    let wl = ConvWorkload {
        n: xs[0],
        c: xs[1],
        h: xs[2],
        w: xs[3],
        k: ws[0],
        r: ws[2],
        s: ws[3],
        stride: a.pair("strides", (1, 1))?,
        pad: a.pair("pads", (0, 0))?,
        dilation: a.pair("dilation", (1, 1))?,
        groups,
    };
    Ok(match device {
        Device::Cpu => conv2d_reference(x, w, &wl)?,
        Device::Gpu => conv2d_scheduled(session, x, w, &wl, &node.schedule.unwrap_or_default())?,
    })
}

fn nms_params(a: &AttrReader<'_>) -> Result<NmsParams, OpError> {
    Ok(NmsParams {
        iou_threshold: a.f64("iou_threshold", 0.5)? as f32,
        score_threshold: a.f64("score_threshold", 0.0)? as f32,
        top_k: a.opt_count("top_k")?,
        max_output: a.opt_count("max_output")?,
    })
}

fn rows_to_tensor(sets: &[BoxSet], width: usize) -> Result<Tensor, OpError> {
    let mut data = Vec::with_capacity(sets.len() * width * 6);
    for s in sets {
        for r in &s.rows {
            data.extend_from_slice(&r.to_array());
        }
    }
    Ok(Tensor::from_f32(&[sets.len(), width, 6], data)?)
}

fn box_nms(session: &mut Session, device: Device, node: &Node, x: &Tensor) -> Result<Tensor, OpError> {
    let s = x.shape();
    let (batch, n) = match s {
        [n, 6] => (1, *n),
        [b, n, 6] => (*b, *n),
        _ => return Err(invalid(format!("box_nms expects [batch, boxes, 6], got {s:?}"))),
    };
    let v = x.as_f32()?;
    let sets: Vec<BoxSet> = (0..batch)
        .map(|b| {
            BoxSet::new(
                (0..n)
                    .map(|i| {
                        let o = (b * n + i) * 6;
                        BoxRow::from_array([v[o], v[o + 1], v[o + 2], v[o + 3], v[o + 4], v[o + 5]])
                    })
                    .collect(),
            )
        })
        .collect();
    let params = nms_params(&AttrReader(node))?;
    let out = match device {
        Device::Cpu => box_nms_sequential(&sets, &params)?,
        Device::Gpu => box_nms_batch(session, &sets, &params)?,
    };
    Ok(rows_to_tensor(&out, n)?.reshaped(s)?)
}

fn multibox_detection_op(
    session: &mut Session,
    device: Device,
    node: &Node,
    ins: &[Tensor],
) -> Result<Tensor, OpError> {
    let a = AttrReader(node);
    let var = a.floats("variances", &[0.1, 0.1, 0.2, 0.2])?;
    let variances: [f32; 4] = match var.as_slice() {
        [a, b, c, d] => [*a as f32, *b as f32, *c as f32, *d as f32],
        _ => return Err(invalid("variances needs four values")),
    };
    let params = MultiboxParams {
        variances,
        score_threshold: a.f64("score_threshold", 0.01)? as f32,
        iou_threshold: a.f64("iou_threshold", 0.5)? as f32,
        top_k: a.opt_count("top_k")?,
    };
    let (p, l, an) = (&ins[0], &ins[1], &ins[2]);
    let sets = match device {
        Device::Cpu => multibox_detection_sequential(p, l, an, &params)?,
        Device::Gpu => multibox_detection(session, p, l, an, &params)?,
    };
    let anchors = an.shape().get(1).copied().unwrap_or(0);
    rows_to_tensor(&sets, anchors)
}

/// Anchor `k` of the `per_cell` anchors centred on one feature-map cell.
fn prior_box(sizes: &[f32], ratios: &[f32], h: usize, w: usize, cell: usize, k: usize) -> [f32; 4] {
    let (y, x) = (cell / w, cell % w);
    let cy = (y as f32 + 0.5) / h as f32;
    let cx = (x as f32 + 0.5) / w as f32;
    let aspect = h as f32 / w as f32;
    let (bw, bh) = if k < sizes.len() {
        (sizes[k] * aspect / 2.0, sizes[k] / 2.0)
    } else {
        let r = libm::sqrtf(ratios[k - sizes.len() + 1]);
        (sizes[0] * aspect * r / 2.0, sizes[0] / r / 2.0)
    };
    [cx - bw, cy - bh, cx + bw, cy + bh]
}

fn multibox_prior(session: &mut Session, device: Device, node: &Node, x: &Tensor) -> Result<Tensor, OpError> {
    let a = AttrReader(node);
    let sizes: Vec<f32> = a.floats("sizes", &[1.0])?.into_iter().map(|v| v as f32).collect();
    let ratios: Vec<f32> = a.floats("ratios", &[1.0])?.into_iter().map(|v| v as f32).collect();
    let s = x.shape();
    if s.len() != 4 || sizes.is_empty() || ratios.is_empty() {
        return Err(invalid(format!("multibox_prior needs a 4-d input and non-empty sizes/ratios, got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let per_cell = sizes.len() + ratios.len() - 1;
    let total = h * w * per_cell;
    let shape = [1, total, 4];
    if device == Device::Cpu {
        let data: Vec<f32> =
            (0..total).flat_map(|i| prior_box(&sizes, &ratios, h, w, i / per_cell, i % per_cell)).collect();
        return Ok(Tensor::from_f32(&shape, data)?);
    }
    let mut dst = DeviceBuffer::zeroed(Device::Gpu, DType::F32, 4 * total);
    session.launch(
        |t| {
            let i = t.global_id();
            if t.branch(i < total) {
                let b = prior_box(&sizes, &ratios, h, w, i / per_cell, i % per_cell);
                for (k, v) in b.into_iter().enumerate() {
                    t.st_f32(0, 4 * i + k, v)?;
                }
            }
            Ok(())
        },
        LaunchConfig::covering(total, WARP),
        &mut [&mut dst],
    )?;
    out_tensor(&shape, dst)
}

fn roi_align_op(
    session: &mut Session,
    device: Device,
    node: &Node,
    f: &Tensor,
    rois: &Tensor,
) -> Result<Tensor, OpError> {
    let a = AttrReader(node);
    let (ph, pw) = a.pair("pooled_size", (1, 1))?;
    let sr = a.int("sampling_ratio", 2)?;
    let params =
        RoiAlignParams::new(ph, pw, usize::try_from(sr).map_err(|_| invalid("sampling_ratio must be positive"))?);
    let rs = rois.shape();
    if rs.len() != 2 || rs[1] != 4 {
        return Err(invalid(format!("rois must be [R, 4], got {rs:?}")));
    }
    let v = rois.as_f32()?;
    let boxes: Vec<[f32; 4]> = v.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    Ok(match device {
        Device::Cpu => roi_align_sequential(f, &boxes, &params)?,
        Device::Gpu => roi_align(session, f, &boxes, &params)?,
    })
}

/// Segment-relative argsort along the last axis.
fn argsort(session: &mut Session, device: Device, node: &Node, x: &Tensor) -> Result<Tensor, OpError> {
    let order = if AttrReader(node).bool("ascending", true)? { SortOrder::Ascending } else { SortOrder::Descending };
    let s = x.shape();
    let len = *s.last().unwrap_or(&1);
    let rows = x.numel() / len.max(1);
    let offsets: Vec<usize> = (0..=rows).map(|r| r * len).collect();
    let a = SegmentedArray::new(x.as_f32()?.to_vec(), offsets)?;
    let ranks = match device {
        Device::Cpu => segmented_argsort_sequential(&a, order),
        Device::Gpu => segmented_argsort(session, &a, order, WARP)?.ranks,
    };
    Ok(Tensor::from_i32(s, ranks.into_iter().map(|r| r as i32).collect())?)
}

/// Scan over the flattened tensor; the host path mirrors the device
/// summation order so both placements agree bitwise.
fn scan(session: &mut Session, device: Device, node: &Node, x: &Tensor) -> Result<Tensor, OpError> {
    let kind = if AttrReader(node).bool("exclusive", false)? { ScanKind::Exclusive } else { ScanKind::Inclusive };
    let p = crate::vision::DEFAULT_SCAN_PROCESSORS;
    match x.dtype() {
        DType::F32 => {
            let v = x.as_f32()?;
            let out = match device {
                Device::Cpu => scan_chunked_sequential(v, kind, p)?,
                Device::Gpu => scan_f32(session, v, kind, p)?.values,
            };
            Ok(Tensor::from_f32(x.shape(), out)?)
        }
        DType::I32 => {
            let v = x.as_i32()?;
            let out = match device {
                Device::Cpu => crate::vision::scan_i32_sequential(v, kind)?,
                Device::Gpu => scan_i32(session, v, kind, p)?.values,
            };
            Ok(Tensor::from_i32(x.shape(), out)?)
        }
        other => Err(invalid(format!("scan does not support {other}"))),
    }
}

/// Evaluates one node on `device`. Compute ops see plain-layout inputs; the
/// result is converted to the node's layout annotation when it is packed.
pub(crate) fn evaluate(session: &mut Session, device: Device, node: &Node, ins: &[Tensor]) -> Result<Tensor, OpError> {
    let a = AttrReader(node);
    let out = match node.op {
        OpKind::Identity | OpKind::Copy => return Ok(ins[0].clone()),
        OpKind::LayoutTransform => {
            let dst: LayoutTag =
                a.str("dst_layout")?.ok_or_else(|| invalid("layout_transform needs `dst_layout`"))?.parse()?;
            return Ok(match device {
                Device::Cpu => layout_transform(&ins[0], dst)?,
                Device::Gpu => layout_transform_on(session, &ins[0], dst)?,
            });
        }
        OpKind::Const => constant(&a)?,
        _ => {
            let ins: Vec<Tensor> = ins.iter().map(plain).collect::<Result<_, _>>()?;
            match node.op {
                OpKind::Conv2d => conv2d(session, device, node, &ins[0], &ins[1])?,
                OpKind::Relu => unary(session, device, &ins[0], |v| v.max(0.0))?,
                OpKind::Add => add(session, device, &ins[0], &ins[1])?,
                OpKind::Pool => {
                    let k = a.pair("kernel", (2, 2))?;
                    pool(session, device, &ins[0], k, a.pair("strides", k)?)?
                }
                OpKind::Softmax => softmax(session, device, &ins[0], a.int("axis", 1)?)?,
                OpKind::Reshape => {
                    let target =
                        a.get("shape").and_then(AttrValue::as_ints).ok_or_else(|| invalid("reshape needs `shape`"))?;
                    reshape(&ins[0], &target)?
                }
                OpKind::BoxNms => box_nms(session, device, node, &ins[0])?,
                OpKind::MultiboxDetection => multibox_detection_op(session, device, node, &ins)?,
                OpKind::MultiboxPrior => multibox_prior(session, device, node, &ins[0])?,
                OpKind::RoiAlign => roi_align_op(session, device, node, &ins[0], &ins[1])?,
                OpKind::Argsort => argsort(session, device, node, &ins[0])?,
                OpKind::Scan => scan(session, device, node, &ins[0])?,
                OpKind::Identity | OpKind::Copy | OpKind::LayoutTransform | OpKind::Const => unreachable!(),
            }
        }
    };
    if node.layout.is_plain() || out.layout() == node.layout {
        Ok(out)
    } else {
        Ok(layout_transform(&out, node.layout)?)
    }
}
