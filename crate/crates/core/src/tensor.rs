//! Dense tensors with explicit physical layouts.
//!
//! `shape` is always the logical shape (`N,C,H,W` for activations, `O,I,H,W`
//! for weights). The layout tag decides the physical order of `data`:
//! plain tags are row-major over the logical axes, tiled tags split one axis
//! into an outer block index and an innermost lane of `factor` elements.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::exec::{BufferData, DType, Device, DeviceBuffer, ExecError, LaunchConfig, Session};
use crate::timing::{median, Probe, Timer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayoutTag {
    Nchw,
    /// Channels split into blocks of `c` innermost lanes: `N, C/c, H, W, c`.
    NchwC(usize),
    Oihw,
    /// Output channels split into blocks of `o` innermost lanes: `O/o, I, H, W, o`.
    OihwO(usize),
}

impl LayoutTag {
    pub fn factor(&self) -> Option<usize> {
        match *self {
            LayoutTag::NchwC(f) | LayoutTag::OihwO(f) => Some(f),
            _ => None,
        }
    }

    /// Logical axis split by a tiled layout.
    pub fn packed_axis(&self) -> Option<usize> {
        match self {
            LayoutTag::NchwC(_) => Some(1),
            LayoutTag::OihwO(_) => Some(0),
            _ => None,
        }
    }

    pub fn is_plain(&self) -> bool {
        self.factor().is_none()
    }

    pub fn check(&self, shape: &[usize]) -> Result<(), TensorError> {
        let Some(f) = self.factor() else { return Ok(()) };
        let axis = self.packed_axis().unwrap_or(0);
        if f == 0 || shape.len() != 4 || !shape[axis].is_multiple_of(f) {
            return Err(TensorError::IncompatibleLayout { layout: *self, shape: shape.to_vec() });
        }
        Ok(())
    }

    /// Physical offset of a logical multi-index under this layout.
    pub fn offset(&self, shape: &[usize], index: &[usize]) -> usize {
        match *self {
            LayoutTag::Nchw | LayoutTag::Oihw => index.iter().zip(shape).fold(0, |acc, (&i, &d)| acc * d + i),
            LayoutTag::NchwC(f) => {
                let (c, h, w) = (shape[1], shape[2], shape[3]);
                let (n, ci, y, x) = (index[0], index[1], index[2], index[3]);
                (((n * (c / f) + ci / f) * h + y) * w + x) * f + ci % f
            }
            LayoutTag::OihwO(f) => {
                let (i, h, w) = (shape[1], shape[2], shape[3]);
                let (o, ii, y, x) = (index[0], index[1], index[2], index[3]);
                (((o / f * i + ii) * h + y) * w + x) * f + o % f
            }
        }
    }
}

impl fmt::Display for LayoutTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutTag::Nchw => f.write_str("NCHW"),
            LayoutTag::NchwC(c) => write!(f, "NCHW{c}c"),
            LayoutTag::Oihw => f.write_str("OIHW"),
            LayoutTag::OihwO(o) => write!(f, "OIHW{o}o"),
        }
    }
}

impl FromStr for LayoutTag {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TensorError::BadLayout(String::from(s));
        match s {
            "NCHW" => return Ok(LayoutTag::Nchw),
            "OIHW" => return Ok(LayoutTag::Oihw),
            _ => {}
        }
        let parse = |prefix: &str, suffix: char| -> Option<usize> {
            let f: usize = s.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok()?;
            (f >= 1).then_some(f)
        };
        if let Some(f) = parse("NCHW", 'c') {
            Ok(LayoutTag::NchwC(f))
        } else if let Some(f) = parse("OIHW", 'o') {
            Ok(LayoutTag::OihwO(f))
        } else {
            Err(bad())
        }
    }
}

impl Serialize for LayoutTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayoutTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("layout {layout} is incompatible with shape {shape:?}")]
    IncompatibleLayout { layout: LayoutTag, shape: Vec<usize> },
    #[error("unknown layout `{0}`")]
    BadLayout(String),
    #[error("data holds {found} elements, shape {shape:?} needs {expected}")]
    LengthMismatch { shape: Vec<usize>, expected: usize, found: usize },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("expected {expected} tensor, found {found}")]
    DtypeMismatch { expected: DType, found: DType },
    #[error("no transform cost entry for {from} -> {to}")]
    MissingCost { from: LayoutTag, to: LayoutTag },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
            TensorData::Bool(_) => DType::Bool,
        }
    }

    fn gather(&self, src: &[usize]) -> TensorData {
        match self {
            TensorData::F32(v) => TensorData::F32(src.iter().map(|&i| v[i]).collect()),
            TensorData::I32(v) => TensorData::I32(src.iter().map(|&i| v[i]).collect()),
            TensorData::Bool(v) => TensorData::Bool(src.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn into_buffer(self, device: Device) -> DeviceBuffer {
        DeviceBuffer::new(
            device,
            match self {
                TensorData::F32(v) => BufferData::F32(v),
                TensorData::I32(v) => BufferData::I32(v),
                TensorData::Bool(v) => BufferData::Bool(v),
            },
        )
    }

    pub fn from_buffer(buf: DeviceBuffer) -> Option<TensorData> {
        match buf.into_data() {
            BufferData::F32(v) => Some(TensorData::F32(v)),
            BufferData::I32(v) => Some(TensorData::I32(v)),
            BufferData::Bool(v) => Some(TensorData::Bool(v)),
            BufferData::I64(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    layout: LayoutTag,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, layout: LayoutTag, data: TensorData) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch { shape, expected, found: data.len() });
        }
        layout.check(&shape)?;
        Ok(Tensor { shape, layout, data })
    }

    /// Row-major f32 tensor.
    pub fn from_f32(shape: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), LayoutTag::Nchw, TensorData::F32(data))
    }

    pub fn from_i32(shape: &[usize], data: Vec<i32>) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), LayoutTag::Nchw, TensorData::I32(data))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::from_f32(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn layout(&self) -> LayoutTag {
        self.layout
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_f32(&self) -> Result<&[f32], TensorError> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(TensorError::DtypeMismatch { expected: DType::F32, found: other.dtype() }),
        }
    }

    pub fn as_i32(&self) -> Result<&[i32], TensorError> {
        match &self.data {
            TensorData::I32(v) => Ok(v),
            other => Err(TensorError::DtypeMismatch { expected: DType::I32, found: other.dtype() }),
        }
    }

    /// Same data under a new logical shape. Only valid for plain layouts.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let t = self.to_plain()?;
        Self::new(shape.to_vec(), LayoutTag::Nchw, t.data)
    }

    /// Logical element read.
    pub fn get_f32(&self, index: &[usize]) -> Result<f32, TensorError> {
        Ok(self.as_f32()?[self.layout.offset(&self.shape, index)])
    }

    /// Converts tiled layouts back to the row-major plain order.
    pub fn to_plain(&self) -> Result<Self, TensorError> {
        if self.layout.is_plain() {
            Ok(self.clone())
        } else {
            let target = if self.layout.packed_axis() == Some(0) { LayoutTag::Oihw } else { LayoutTag::Nchw };
            layout_transform(self, target)
        }
    }
}

/// For each physical position under `target`, the physical position in the
/// source tensor holding the same logical element.
fn source_positions(shape: &[usize], from: LayoutTag, to: LayoutTag) -> Vec<usize> {
    let numel: usize = shape.iter().product();
    let mut src = vec![0usize; numel];
    let mut index = vec![0usize; shape.len()];
    for _ in 0..numel {
        src[to.offset(shape, &index)] = from.offset(shape, &index);
        for axis in (0..shape.len()).rev() {
            index[axis] += 1;
            if index[axis] < shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    src
}

/// Reorders `t` into the `target` layout; logical values are unchanged.
pub fn layout_transform(t: &Tensor, target: LayoutTag) -> Result<Tensor, TensorError> {
    target.check(&t.shape)?;
    if target == t.layout {
        return Ok(t.clone());
    }
    let src = source_positions(&t.shape, t.layout, target);
    Ok(Tensor { shape: t.shape.clone(), layout: target, data: t.data.gather(&src) })
}

/// Same as [`layout_transform`], executed as one gather kernel on the emulator.
pub fn layout_transform_on(session: &mut Session, t: &Tensor, target: LayoutTag) -> Result<Tensor, TensorError> {
    target.check(&t.shape)?;
    let src = source_positions(&t.shape, t.layout, target);
    let n = src.len();
    let mut input = t.data.clone().into_buffer(Device::Gpu);
    let mut map = DeviceBuffer::from_i32(Device::Gpu, src.iter().map(|&i| i as i32).collect());
    let mut out = DeviceBuffer::zeroed(Device::Gpu, t.dtype(), n);
    let dtype = t.dtype();
    let cfg = LaunchConfig::covering(n, 64);
    session.launch(
        |th| {
            let i = th.global_id();
            if !th.branch(i < n) {
                return Ok(());
            }
            let s = th.ld_i32(1, i)? as usize;
            th.add_items(1);
            match dtype {
                DType::F32 => {
                    let v = th.ld_f32(0, s)?;
                    th.st_f32(2, i, v)
                }
                DType::Bool => {
                    let v = th.ld_bool(0, s)?;
                    th.st_bool(2, i, v)
                }
                _ => {
                    let v = th.ld_i32(0, s)?;
                    th.st_i32(2, i, v)
                }
            }
        },
        cfg,
        &mut [&mut input, &mut map, &mut out],
    )?;
    let data = TensorData::from_buffer(out).expect("tensor dtypes only");
    Ok(Tensor { shape: t.shape.clone(), layout: target, data })
}

/// Source of layout-transformation costs for the graph tuner.
#[derive(Clone, Debug, PartialEq)]
pub enum TransformCost {
    /// Explicit per-pair costs; a missing pair falls back to its reverse.
    Table(Vec<(LayoutTag, LayoutTag, f64)>),
    /// `per_element * numel` for any change of layout.
    PerElement(f64),
}

pub fn transform_cost(
    from: LayoutTag,
    to: LayoutTag,
    shape: &[usize],
    model: &TransformCost,
) -> Result<f64, TensorError> {
    from.check(shape)?;
    to.check(shape)?;
    model.lookup(from, to, shape.iter().product()).ok_or(TransformCost::missing(from, to))
}

impl TransformCost {
    /// Cost of converting `numel` elements without shape checks; `None` when
    /// a table has no entry for the pair in either direction.
    pub fn lookup(&self, from: LayoutTag, to: LayoutTag, numel: usize) -> Option<f64> {
        if from == to {
            return Some(0.0);
        }
        match self {
            TransformCost::Table(rows) => rows
                .iter()
                .find(|(a, b, _)| *a == from && *b == to)
                .or_else(|| rows.iter().find(|(a, b, _)| *a == to && *b == from))
                .map(|r| r.2),
            TransformCost::PerElement(c) => Some(c * numel as f64),
        }
    }

    fn missing(from: LayoutTag, to: LayoutTag) -> TensorError {
        TensorError::MissingCost { from, to }
    }
}

/// Median over `repeats` timed runs of the emulated transform kernel.
pub fn measure_transform_cost(
    from: LayoutTag,
    to: LayoutTag,
    shape: &[usize],
    timer: &mut dyn Timer,
    repeats: usize,
) -> Result<f64, TensorError> {
    from.check(shape)?;
    to.check(shape)?;
    if from == to {
        return Ok(0.0);
    }
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|i| (i % 251) as f32).collect();
    let src = Tensor::new(shape.to_vec(), from, TensorData::F32(data))?;
    let label = format!("layout/{from}->{to}");
    let mut samples = Vec::with_capacity(repeats.max(1));
    for repeat in 0..repeats.max(1) {
        let mut result = Ok(());
        let mut session = Session::new();
        let probe = Probe { label: &label, config: None, repeat };
        let t = timer.time(&probe, &mut || {
            result = layout_transform_on(&mut session, &src, to).map(|_| ());
        });
        result?;
        samples.push(t);
    }
    Ok(median(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::ScriptedTimer;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn iota(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_f32(shape, (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn nchw_to_nchw2c_order() {
        let t = layout_transform(&iota(&[1, 4, 1, 2]), LayoutTag::NchwC(2)).unwrap();
        assert_eq!(t.as_f32().unwrap(), &[0.0, 2.0, 1.0, 3.0, 4.0, 6.0, 5.0, 7.0]);
    }

    #[test]
    fn oihw_packing_order() {
        // O=4, I=1, H=1, W=2 packed by 2 output channels.
        let t = iota(&[4, 1, 1, 2]).reshaped(&[4, 1, 1, 2]).unwrap();
        let t = Tensor::new(t.shape().to_vec(), LayoutTag::Oihw, t.into_data()).unwrap();
        let p = layout_transform(&t, LayoutTag::OihwO(2)).unwrap();
        assert_eq!(p.as_f32().unwrap(), &[0.0, 2.0, 1.0, 3.0, 4.0, 6.0, 5.0, 7.0]);
    }

    #[test]
    fn non_divisible_factor_is_rejected() {
        let err = layout_transform(&iota(&[1, 3, 2, 2]), LayoutTag::NchwC(2)).unwrap_err();
        assert!(matches!(err, TensorError::IncompatibleLayout { .. }));
    }

    #[test]
    fn layout_strings_round_trip() {
        for l in [LayoutTag::Nchw, LayoutTag::NchwC(8), LayoutTag::Oihw, LayoutTag::OihwO(4)] {
            assert_eq!(l.to_string().parse::<LayoutTag>().unwrap(), l);
        }
        assert!("NCHW0c".parse::<LayoutTag>().is_err());
        assert!("NHWC".parse::<LayoutTag>().is_err());
    }

    #[test]
    fn device_transform_matches_host() {
        let t = iota(&[2, 8, 3, 5]);
        let mut s = Session::new().with_race_detection(true);
        let a = layout_transform_on(&mut s, &t, LayoutTag::NchwC(4)).unwrap();
        assert_eq!(a, layout_transform(&t, LayoutTag::NchwC(4)).unwrap());
        assert_eq!(s.stats().launches, 1);
    }

    #[test]
    fn transform_cost_modes() {
        let shape = [1, 64, 56, 56];
        let table = TransformCost::Table(vec![(LayoutTag::Nchw, LayoutTag::NchwC(8), 3.5)]);
        assert_eq!(transform_cost(LayoutTag::Nchw, LayoutTag::Nchw, &shape, &table).unwrap(), 0.0);
        assert_eq!(transform_cost(LayoutTag::Nchw, LayoutTag::NchwC(8), &shape, &table).unwrap(), 3.5);
        assert_eq!(transform_cost(LayoutTag::NchwC(8), LayoutTag::Nchw, &shape, &table).unwrap(), 3.5);
        assert!(transform_cost(LayoutTag::Nchw, LayoutTag::NchwC(4), &shape, &table).is_err());
        let lin = TransformCost::PerElement(0.5);
        let ab = transform_cost(LayoutTag::Nchw, LayoutTag::NchwC(8), &shape, &lin).unwrap();
        let ba = transform_cost(LayoutTag::NchwC(8), LayoutTag::Nchw, &shape, &lin).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab, 0.5 * (64 * 56 * 56) as f64);
        assert!(transform_cost(LayoutTag::Nchw, LayoutTag::NchwC(3), &shape, &lin).is_err());
    }

    #[test]
    fn measured_cost_uses_median() {
        let mut timer = ScriptedTimer::new(vec![3.0, 1.0, 2.0]);
        let c = measure_transform_cost(LayoutTag::Nchw, LayoutTag::NchwC(2), &[1, 4, 2, 2], &mut timer, 3).unwrap();
        assert_eq!(c, 2.0);
    }

    proptest! {
        #[test]
        fn transform_preserves_logical_elements(
            n in 1usize..3, cb in 1usize..4, f in 1usize..5, h in 1usize..4, w in 1usize..4,
        ) {
            let shape = [n, cb * f, h, w];
            let t = iota(&shape);
            let packed = layout_transform(&t, LayoutTag::NchwC(f)).unwrap();
            for a in 0..n { for c in 0..cb * f { for y in 0..h { for x in 0..w {
                let idx = [a, c, y, x];
                prop_assert_eq!(t.get_f32(&idx).unwrap(), packed.get_f32(&idx).unwrap());
            }}}}
            let back = layout_transform(&packed, LayoutTag::Nchw).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
