//! Three-stage prefix sum.
//!
//! 1. up-sweep: each processor scans its chunk sequentially and emits the
//!    chunk total (register blocking);
//! 2. scan: one block runs Hillis–Steele over the chunk totals, pass `d`
//!    adding element `i - 2^d` into element `i`;
//! 3. down-sweep: each processor adds the preceding totals back into its chunk.
//!
//! Integers accumulate in i64 and are range-checked when written out.

use alloc::vec;
use alloc::vec::Vec;

use super::{partition_chunks, VisionError, WARP};
use crate::exec::{DType, Device, DeviceBuffer, ExecError, LaunchConfig, Session, ThreadCtx};

pub const DEFAULT_PROCESSORS: usize = 4 * WARP;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanKind {
    Inclusive,
    Exclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanPlan {
    /// Processors that own at least one element.
    pub p: usize,
    pub chunk: usize,
    pub num_coop_passes: usize,
}

impl ScanPlan {
    /// Chunks of `ceil(n / p)`; processors left without elements are dropped
    /// so that `(p - 1) * chunk < n <= p * chunk`.
    pub fn new(n: usize, p: usize) -> Result<Self, VisionError> {
        if p == 0 {
            return Err(super::invalid("processor count must be at least 1"));
        }
        if n == 0 {
            return Ok(ScanPlan { p: 1, chunk: 0, num_coop_passes: 0 });
        }
        let chunk = n.div_ceil(p);
        let p = n.div_ceil(chunk);
        Ok(ScanPlan { p, chunk, num_coop_passes: ceil_log2(p) })
    }

    /// Uses every thread of the launch configuration as a processor.
    pub fn from_launch(n: usize, cfg: LaunchConfig) -> Result<Self, VisionError> {
        Self::new(n, cfg.total_threads().unwrap_or(0))
    }
}

pub(crate) fn ceil_log2(x: usize) -> usize {
    if x <= 1 {
        0
    } else {
        (usize::BITS - (x - 1).leading_zeros()) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOutput<T> {
    pub values: Vec<T>,
    pub plan: ScanPlan,
    /// Hillis–Steele passes actually executed by the cooperative stage.
    pub coop_passes: usize,
}

trait Lane: Copy {
    type Acc: Copy;
    const ACC: DType;
    const OUT: DType;
    fn zero() -> Self::Acc;
    fn add(a: Self::Acc, b: Self::Acc) -> Self::Acc;
    fn input(values: &[Self]) -> DeviceBuffer;
    fn load(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<Self::Acc, ExecError>;
    fn load_acc(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<Self::Acc, ExecError>;
    fn store_acc(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: Self::Acc) -> Result<(), ExecError>;
    fn store_out(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: Self::Acc) -> Result<(), ExecError>;
    fn get_shared(t: &mut ThreadCtx<'_, '_>, slot: usize) -> Result<Self::Acc, ExecError>;
    fn set_shared(t: &mut ThreadCtx<'_, '_>, slot: usize, v: Self::Acc) -> Result<(), ExecError>;
    fn to_bits(v: Self::Acc) -> u64;
    fn from_bits(b: u64) -> Self::Acc;
    fn output(buf: &DeviceBuffer) -> Vec<Self>;
}

impl Lane for f32 {
    type Acc = f32;
    const ACC: DType = DType::F32;
    const OUT: DType = DType::F32;
    fn zero() -> f32 {
        0.0
    }
    fn add(a: f32, b: f32) -> f32 {
        a + b
    }
    fn input(values: &[f32]) -> DeviceBuffer {
        DeviceBuffer::from_f32(Device::Gpu, values.to_vec())
    }
    fn load(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<f32, ExecError> {
        t.ld_f32(buf, i)
    }
    fn load_acc(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<f32, ExecError> {
        t.ld_f32(buf, i)
    }
    fn store_acc(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: f32) -> Result<(), ExecError> {
        t.st_f32(buf, i, v)
    }
    fn store_out(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: f32) -> Result<(), ExecError> {
        t.st_f32(buf, i, v)
    }
    fn get_shared(t: &mut ThreadCtx<'_, '_>, slot: usize) -> Result<f32, ExecError> {
        t.shared_f32(slot)
    }
    fn set_shared(t: &mut ThreadCtx<'_, '_>, slot: usize, v: f32) -> Result<(), ExecError> {
        t.set_shared_f32(slot, v)
    }
    fn to_bits(v: f32) -> u64 {
        v.to_bits() as u64
    }
    fn from_bits(b: u64) -> f32 {
        f32::from_bits(b as u32)
    }
    fn output(buf: &DeviceBuffer) -> Vec<f32> {
        buf.as_f32().map(<[f32]>::to_vec).unwrap_or_default()
    }
}

impl Lane for i32 {
    type Acc = i64;
    const ACC: DType = DType::I64;
    const OUT: DType = DType::I32;
    fn zero() -> i64 {
        0
    }
    fn add(a: i64, b: i64) -> i64 {
        a + b
    }
    fn input(values: &[i32]) -> DeviceBuffer {
        DeviceBuffer::from_i32(Device::Gpu, values.to_vec())
    }
    fn load(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<i64, ExecError> {
        t.ld_i32(buf, i).map(i64::from)
    }
    fn load_acc(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize) -> Result<i64, ExecError> {
        t.ld_i64(buf, i)
    }
    fn store_acc(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: i64) -> Result<(), ExecError> {
        t.st_i64(buf, i, v)
    }
    fn store_out(t: &mut ThreadCtx<'_, '_>, buf: usize, i: usize, v: i64) -> Result<(), ExecError> {
        let v = i32::try_from(v).map_err(|_| t.fault(OVERFLOW))?;
        t.st_i32(buf, i, v)
    }
    fn get_shared(t: &mut ThreadCtx<'_, '_>, slot: usize) -> Result<i64, ExecError> {
        t.shared_i64(slot)
    }
    fn set_shared(t: &mut ThreadCtx<'_, '_>, slot: usize, v: i64) -> Result<(), ExecError> {
        t.set_shared_i64(slot, v)
    }
    fn to_bits(v: i64) -> u64 {
        v as u64
    }
    fn from_bits(b: u64) -> i64 {
        b as i64
    }
    fn output(buf: &DeviceBuffer) -> Vec<i32> {
        buf.as_i32().map(<[i32]>::to_vec).unwrap_or_default()
    }
}

const OVERFLOW: &str = "i32 overflow";

fn map_err(e: ExecError) -> VisionError {
    match e {
        ExecError::Fault { message, .. } if message == OVERFLOW => VisionError::Overflow,
        e => VisionError::Exec(e),
    }
}

fn run<T: Lane>(session: &mut Session, values: &[T], kind: ScanKind, p: usize) -> Result<ScanOutput<T>, VisionError> {
    let n = values.len();
    let plan = ScanPlan::new(n, p)?;
    if n == 0 {
        return Ok(ScanOutput { values: Vec::new(), plan, coop_passes: 0 });
    }
    let (procs, chunk) = (plan.p, plan.chunk);
    let mut input = T::input(values);
    let mut local = DeviceBuffer::zeroed(Device::Gpu, T::ACC, n);
    let mut totals = DeviceBuffer::zeroed(Device::Gpu, T::ACC, procs);
    let mut out = DeviceBuffer::zeroed(Device::Gpu, T::OUT, n);
    let sweep = LaunchConfig::covering(procs, WARP);

    // up-sweep: sequential scan inside each chunk
    session
        .launch(
            |t| {
                let g = t.global_id();
                if !t.branch(g < procs) {
                    return Ok(());
                }
                let (start, end) = (g * chunk, ((g + 1) * chunk).min(n));
                let mut acc = T::zero();
                for j in start..end {
                    let v = T::load(t, 0, j)?;
                    match kind {
                        ScanKind::Inclusive => {
                            acc = T::add(acc, v);
                            T::store_acc(t, 1, j, acc)?;
                        }
                        ScanKind::Exclusive => {
                            T::store_acc(t, 1, j, acc)?;
                            acc = T::add(acc, v);
                        }
                    }
                }
                t.add_items((end - start) as u64);
                T::store_acc(t, 2, g, acc)
            },
            sweep,
            &mut [&mut input, &mut local, &mut totals],
        )
        .map_err(map_err)?;

    // cooperative inclusive scan of chunk totals inside one block
    let before = session.stats().barriers;
    session
        .launch(
            |t| {
                let i = t.thread_id();
                let phase = t.phase();
                if phase == 0 {
                    let v = T::load_acc(t, 0, i)?;
                    T::set_shared(t, i, v)?;
                    return t.barrier();
                }
                let step = (phase - 1) / 2;
                let stride = 1usize << step;
                if stride >= procs {
                    let v = T::get_shared(t, i)?;
                    return T::store_acc(t, 0, i, v);
                }
                if phase % 2 == 1 {
                    let mine = T::get_shared(t, i)?;
                    let sum = if t.branch(i >= stride) {
                        t.add_items(1);
                        T::add(T::get_shared(t, i - stride)?, mine)
                    } else {
                        mine
                    };
                    t.set_reg(0, T::to_bits(sum));
                } else {
                    let sum = T::from_bits(t.reg(0));
                    T::set_shared(t, i, sum)?;
                }
                t.barrier()
            },
            LaunchConfig::new(1, procs).with_shared(procs),
            &mut [&mut totals],
        )
        .map_err(map_err)?;
    let coop_barriers = (session.stats().barriers - before) as usize;
    let coop_passes = coop_barriers.saturating_sub(1) / 2;

    // down-sweep: add preceding totals back into each chunk
    session
        .launch(
            |t| {
                let g = t.global_id();
                if !t.branch(g < procs) {
                    return Ok(());
                }
                let (start, end) = (g * chunk, ((g + 1) * chunk).min(n));
                let offset = if g > 0 { Some(T::load_acc(t, 1, g - 1)?) } else { None };
                for j in start..end {
                    let v = T::load_acc(t, 0, j)?;
                    let v = match offset {
                        Some(o) => T::add(o, v),
                        None => v,
                    };
                    T::store_out(t, 2, j, v)?;
                }
                t.add_items((end - start) as u64);
                Ok(())
            },
            sweep,
            &mut [&mut local, &mut totals, &mut out],
        )
        .map_err(map_err)?;

    Ok(ScanOutput { values: T::output(&out), plan, coop_passes })
}

pub fn scan_f32(
    session: &mut Session,
    values: &[f32],
    kind: ScanKind,
    p: usize,
) -> Result<ScanOutput<f32>, VisionError> {
    run(session, values, kind, p)
}

pub fn scan_i32(
    session: &mut Session,
    values: &[i32],
    kind: ScanKind,
    p: usize,
) -> Result<ScanOutput<i32>, VisionError> {
    run(session, values, kind, p)
}

/// Host i32 scan with exact accumulation; errors when any output prefix
/// leaves the i32 range, like the kernels.
pub fn scan_i32_sequential(values: &[i32], kind: ScanKind) -> Result<Vec<i32>, VisionError> {
    let mut acc = 0i64;
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let before = acc;
        acc += v as i64;
        let emit = match kind {
            ScanKind::Inclusive => acc,
            ScanKind::Exclusive => before,
        };
        out.push(i32::try_from(emit).map_err(|_| VisionError::Overflow)?);
    }
    Ok(out)
}

/// Host implementation with the same summation order as the kernels, so
/// CPU-placed scans are bit-identical to device ones.
pub fn scan_chunked_sequential(values: &[f32], kind: ScanKind, p: usize) -> Result<Vec<f32>, VisionError> {
    let n = values.len();
    let plan = ScanPlan::new(n, p)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let chunks = partition_chunks(n, plan.p)?;
    let mut local = vec![0.0f32; n];
    let mut totals = vec![0.0f32; plan.p];
    for (g, r) in chunks.iter().enumerate() {
        let mut acc = 0.0f32;
        for j in r.clone() {
            match kind {
                ScanKind::Inclusive => {
                    acc += values[j];
                    local[j] = acc;
                }
                ScanKind::Exclusive => {
                    local[j] = acc;
                    acc += values[j];
                }
            }
        }
        totals[g] = acc;
    }
    let mut stride = 1;
    while stride < plan.p {
        let prev = totals.clone();
        for i in stride..plan.p {
            totals[i] = prev[i - stride] + prev[i];
        }
        stride *= 2;
    }
    for (g, r) in chunks.iter().enumerate().skip(1) {
        for j in r.clone() {
            local[j] += totals[g - 1];
        }
    }
    Ok(local)
}
