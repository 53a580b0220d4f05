//! Deterministic block/thread execution emulator.
//!
//! A kernel is a closure invoked once per `(block, thread, phase)`. A thread
//! ends its phase either by calling [`ThreadCtx::barrier`], which moves it to
//! the next phase, or by returning without one, which finishes it. Phase `k`
//! of every thread in a block runs to completion, in ascending thread id,
//! before any thread enters phase `k + 1`. Blocks run in ascending block id
//! and there is no synchronization between blocks inside a launch.
//!
//! Global buffers are zero-initialized. Block-shared storage and per-thread
//! registers are untyped 64-bit slots with typed accessors.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Device {
    Cpu,
    Gpu,
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Device::Cpu => "CPU",
            Device::Gpu => "GPU",
        })
    }
}

/// Element types a device buffer can hold. `I64` is scratch for exact
/// integer accumulation and never appears in tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    I32,
    I64,
    Bool,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::I32 => "i32",
            DType::I64 => "i64",
            DType::Bool => "bool",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BufferData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    Bool(Vec<bool>),
}

impl BufferData {
    pub fn len(&self) -> usize {
        match self {
            BufferData::F32(v) => v.len(),
            BufferData::I32(v) => v.len(),
            BufferData::I64(v) => v.len(),
            BufferData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            BufferData::F32(_) => DType::F32,
            BufferData::I32(_) => DType::I32,
            BufferData::I64(_) => DType::I64,
            BufferData::Bool(_) => DType::Bool,
        }
    }
}

/// A fixed-length global buffer tagged with the device it lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceBuffer {
    device: Device,
    data: BufferData,
}

impl DeviceBuffer {
    pub fn zeroed(device: Device, dtype: DType, len: usize) -> Self {
        let data = match dtype {
            DType::F32 => BufferData::F32(vec![0.0; len]),
            DType::I32 => BufferData::I32(vec![0; len]),
            DType::I64 => BufferData::I64(vec![0; len]),
            DType::Bool => BufferData::Bool(vec![false; len]),
        };
        DeviceBuffer { device, data }
    }

    pub fn new(device: Device, data: BufferData) -> Self {
        DeviceBuffer { device, data }
    }

    pub fn from_f32(device: Device, v: Vec<f32>) -> Self {
        Self::new(device, BufferData::F32(v))
    }

    pub fn from_i32(device: Device, v: Vec<i32>) -> Self {
        Self::new(device, BufferData::I32(v))
    }

    pub fn from_bool(device: Device, v: Vec<bool>) -> Self {
        Self::new(device, BufferData::Bool(v))
    }

    pub fn device(&self) -> Device {
        self.device
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &BufferData {
        &self.data
    }

    pub fn into_data(self) -> BufferData {
        self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            BufferData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            BufferData::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            BufferData::I64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<&[bool]> {
        match &self.data {
            BufferData::Bool(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaunchConfig {
    pub grid: usize,
    pub block: usize,
    pub shared_slots: usize,
}

impl LaunchConfig {
    pub fn new(grid: usize, block: usize) -> Self {
        LaunchConfig { grid, block, shared_slots: 0 }
    }

    pub fn with_shared(mut self, slots: usize) -> Self {
        self.shared_slots = slots;
        self
    }

    /// Smallest launch with at most `block_cap` threads per block covering
    /// `threads` logical threads.
    pub fn covering(threads: usize, block_cap: usize) -> Self {
        let threads = threads.max(1);
        let block = threads.min(block_cap.max(1));
        LaunchConfig::new(threads.div_ceil(block), block)
    }

    pub fn total_threads(&self) -> Option<usize> {
        self.grid.checked_mul(self.block)
    }

    fn validate(&self) -> Result<usize, ExecError> {
        if self.grid == 0 {
            return Err(ExecError::InvalidConfig("grid must be at least 1"));
        }
        if self.block == 0 {
            return Err(ExecError::InvalidConfig("block must be at least 1"));
        }
        match self.total_threads() {
            Some(t) if t <= u32::MAX as usize => Ok(t),
            _ => Err(ExecError::InvalidConfig("grid x block exceeds the addressable thread range")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("invalid launch config: {0}")]
    InvalidConfig(&'static str),
    #[error("block {block} thread {thread}: index {index} out of bounds for buffer {buffer} (len {len})")]
    OutOfBounds { block: usize, thread: usize, buffer: usize, index: usize, len: usize },
    #[error("block {block} thread {thread}: shared slot {index} out of bounds (slots {len})")]
    SharedOutOfBounds { block: usize, thread: usize, index: usize, len: usize },
    #[error("block {block} thread {thread}: buffer {buffer} was not passed to the launch")]
    UnknownBuffer { block: usize, thread: usize, buffer: usize },
    #[error("block {block} thread {thread}: buffer {buffer} holds {found}, accessed as {expected}")]
    DtypeMismatch { block: usize, thread: usize, buffer: usize, expected: DType, found: DType },
    #[error("divergent barrier in block {block} at phase {phase}: {reached} threads reached it, {finished} finished")]
    DivergentBarrier { block: usize, phase: usize, reached: usize, finished: usize },
    #[error("block {block} thread {thread}: memory access after barrier in the same phase")]
    AccessAfterBarrier { block: usize, thread: usize },
    #[error("race on {space} slot {index}: block {block} thread {thread} conflicts with block {other_block} thread {other_thread}")]
    Race { space: &'static str, index: usize, block: usize, thread: usize, other_block: usize, other_thread: usize },
    #[error("block {block} thread {thread}: {message}")]
    Fault { block: usize, thread: usize, message: &'static str },
}

/// Per-launch summary kept in the session log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaunchRecord {
    pub grid: usize,
    pub block: usize,
    /// Block-level barrier crossings during this launch, summed over blocks.
    pub barriers: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LaunchStats {
    pub launches: u64,
    pub barriers: u64,
    /// Work items reported per global thread id, summed over launches.
    pub per_thread_items: Vec<u64>,
    pub divergence_events: u64,
    pub launch_log: Vec<LaunchRecord>,
}

impl LaunchStats {
    pub fn load_imbalance(&self) -> f64 {
        load_imbalance(&self.per_thread_items)
    }
}

/// `(max - min) / mean` of the work-item counts; zero for empty or idle input.
pub fn load_imbalance(items: &[u64]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let max = *items.iter().max().unwrap_or(&0);
    let min = *items.iter().min().unwrap_or(&0);
    let sum: u64 = items.iter().sum();
    if sum == 0 {
        return 0.0;
    }
    let mean = sum as f64 / items.len() as f64;
    (max - min) as f64 / mean
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Access {
    One { block: u32, thread: u32, phase: u32 },
}

#[derive(Clone, Copy, Debug, Default)]
struct Shadow {
    writer: Option<Access>,
    reader: Option<Access>,
}

/// Shadow memory for the debug race detector. Global slots conflict when two
/// distinct threads touch them in the same launch with at least one write,
/// unless both are in the same block and separated by a barrier.
#[derive(Default)]
struct RaceTracker {
    global: BTreeMap<(usize, usize), Shadow>,
    shared: BTreeMap<usize, Shadow>,
}

impl RaceTracker {
    fn conflicts(a: Access, b: Access) -> bool {
        let Access::One { block: ab, thread: at, phase: ap } = a;
        let Access::One { block: bb, thread: bt, phase: bp } = b;
        if ab == bb && at == bt {
            return false;
        }
        ab != bb || ap == bp
    }

    fn check(shadow: &mut Shadow, me: Access, write: bool, space: &'static str, index: usize) -> Result<(), ExecError> {
        let race = |other: Access| {
            let Access::One { block, thread, .. } = me;
            let Access::One { block: ob, thread: ot, .. } = other;
            ExecError::Race {
                space,
                index,
                block: block as usize,
                thread: thread as usize,
                other_block: ob as usize,
                other_thread: ot as usize,
            }
        };
        if let Some(w) = shadow.writer {
            if Self::conflicts(w, me) {
                return Err(race(w));
            }
        }
        if write {
            if let Some(r) = shadow.reader {
                if Self::conflicts(r, me) {
                    return Err(race(r));
                }
            }
            shadow.writer = Some(me);
        } else {
            shadow.reader = Some(me);
        }
        Ok(())
    }
}

/// Execution context handed to each kernel invocation.
pub struct ThreadCtx<'a, 'b> {
    block_id: usize,
    thread_id: usize,
    grid: usize,
    block_dim: usize,
    phase: usize,
    buffers: &'a mut [&'b mut DeviceBuffer],
    shared: &'a mut [u64],
    regs: &'a mut Vec<u64>,
    race: Option<&'a mut RaceTracker>,
    barrier_called: bool,
    items: u64,
    branches: &'a mut Vec<bool>,
}

macro_rules! typed_access {
    ($load:ident, $store:ident, $variant:ident, $ty:ty, $dtype:expr) => {
        pub fn $load(&mut self, buffer: usize, index: usize) -> Result<$ty, ExecError> {
            self.touch_global(buffer, index, false)?;
            let (block, thread) = (self.block_id, self.thread_id);
            match &self.buffers[buffer].data {
                BufferData::$variant(v) => Ok(v[index]),
                other => {
                    Err(ExecError::DtypeMismatch { block, thread, buffer, expected: $dtype, found: other.dtype() })
                }
            }
        }

        pub fn $store(&mut self, buffer: usize, index: usize, value: $ty) -> Result<(), ExecError> {
            self.touch_global(buffer, index, true)?;
            let (block, thread) = (self.block_id, self.thread_id);
            match &mut self.buffers[buffer].data {
                BufferData::$variant(v) => {
                    v[index] = value;
                    Ok(())
                }
                other => {
                    Err(ExecError::DtypeMismatch { block, thread, buffer, expected: $dtype, found: other.dtype() })
                }
            }
        }
    };
}

impl ThreadCtx<'_, '_> {
    pub fn block_id(&self) -> usize {
        self.block_id
    }

    pub fn thread_id(&self) -> usize {
        self.thread_id
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn global_id(&self) -> usize {
        self.block_id * self.block_dim + self.thread_id
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn buffer_len(&self, buffer: usize) -> Result<usize, ExecError> {
        self.buffers.get(buffer).map(|b| b.len()).ok_or(ExecError::UnknownBuffer {
            block: self.block_id,
            thread: self.thread_id,
            buffer,
        })
    }

    /// Ends the current phase; the thread resumes at `phase() + 1` once every
    /// thread of the block has reached the barrier.
    pub fn barrier(&mut self) -> Result<(), ExecError> {
        if self.barrier_called {
            return Err(ExecError::AccessAfterBarrier { block: self.block_id, thread: self.thread_id });
        }
        self.barrier_called = true;
        Ok(())
    }

    /// Records a conditionally executed region. Threads that report `false`
    /// at a site some sibling reported `true` at count as divergence events.
    pub fn branch(&mut self, taken: bool) -> bool {
        self.branches.push(taken);
        taken
    }

    pub fn add_items(&mut self, n: u64) {
        self.items += n;
    }

    pub fn fault(&self, message: &'static str) -> ExecError {
        ExecError::Fault { block: self.block_id, thread: self.thread_id, message }
    }

    fn me(&self) -> Access {
        Access::One { block: self.block_id as u32, thread: self.thread_id as u32, phase: self.phase as u32 }
    }

    fn touch_global(&mut self, buffer: usize, index: usize, write: bool) -> Result<(), ExecError> {
        if self.barrier_called {
            return Err(ExecError::AccessAfterBarrier { block: self.block_id, thread: self.thread_id });
        }
        let len = self.buffer_len(buffer)?;
        if index >= len {
            return Err(ExecError::OutOfBounds { block: self.block_id, thread: self.thread_id, buffer, index, len });
        }
        let me = self.me();
        if let Some(race) = self.race.as_deref_mut() {
            let shadow = race.global.entry((buffer, index)).or_default();
            RaceTracker::check(shadow, me, write, "global", index)?;
        }
        Ok(())
    }

    fn touch_shared(&mut self, index: usize, write: bool) -> Result<(), ExecError> {
        if self.barrier_called {
            return Err(ExecError::AccessAfterBarrier { block: self.block_id, thread: self.thread_id });
        }
        if index >= self.shared.len() {
            return Err(ExecError::SharedOutOfBounds {
                block: self.block_id,
                thread: self.thread_id,
                index,
                len: self.shared.len(),
            });
        }
        let me = self.me();
        if let Some(race) = self.race.as_deref_mut() {
            let shadow = race.shared.entry(index).or_default();
            RaceTracker::check(shadow, me, write, "shared", index)?;
        }
        Ok(())
    }

    typed_access!(ld_f32, st_f32, F32, f32, DType::F32);
    typed_access!(ld_i32, st_i32, I32, i32, DType::I32);
    typed_access!(ld_i64, st_i64, I64, i64, DType::I64);
    typed_access!(ld_bool, st_bool, Bool, bool, DType::Bool);

    pub fn shared_bits(&mut self, index: usize) -> Result<u64, ExecError> {
        self.touch_shared(index, false)?;
        Ok(self.shared[index])
    }

    pub fn set_shared_bits(&mut self, index: usize, bits: u64) -> Result<(), ExecError> {
        self.touch_shared(index, true)?;
        self.shared[index] = bits;
        Ok(())
    }

    pub fn shared_f32(&mut self, index: usize) -> Result<f32, ExecError> {
        Ok(f32::from_bits(self.shared_bits(index)? as u32))
    }

    pub fn set_shared_f32(&mut self, index: usize, v: f32) -> Result<(), ExecError> {
        self.set_shared_bits(index, v.to_bits() as u64)
    }

    pub fn shared_i64(&mut self, index: usize) -> Result<i64, ExecError> {
        Ok(self.shared_bits(index)? as i64)
    }

    pub fn set_shared_i64(&mut self, index: usize, v: i64) -> Result<(), ExecError> {
        self.set_shared_bits(index, v as u64)
    }

    /// Per-thread registers survive barriers; unset registers read as zero.
    pub fn reg(&self, index: usize) -> u64 {
        self.regs.get(index).copied().unwrap_or(0)
    }

    pub fn set_reg(&mut self, index: usize, bits: u64) {
        if self.regs.len() <= index {
            self.regs.resize(index + 1, 0);
        }
        self.regs[index] = bits;
    }

    pub fn reg_f32(&self, index: usize) -> f32 {
        f32::from_bits(self.reg(index) as u32)
    }

    pub fn set_reg_f32(&mut self, index: usize, v: f32) {
        self.set_reg(index, v.to_bits() as u64)
    }

    pub fn reg_i64(&self, index: usize) -> i64 {
        self.reg(index) as i64
    }

    pub fn set_reg_i64(&mut self, index: usize, v: i64) {
        self.set_reg(index, v as u64)
    }
}

/// One emulator session: launches are totally ordered and counters only grow.
/// Not meant to be shared between callers.
#[derive(Default)]
pub struct Session {
    stats: LaunchStats,
    race_detection: bool,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    /// Debug mode: track the last reader and writer of every touched slot and
    /// reject unsynchronized conflicting accesses.
    pub fn with_race_detection(mut self, on: bool) -> Self {
        self.race_detection = on;
        self
    }

    pub fn stats(&self) -> LaunchStats {
        self.stats.clone()
    }

    pub fn launch<F>(
        &mut self,
        kernel: F,
        config: LaunchConfig,
        buffers: &mut [&mut DeviceBuffer],
    ) -> Result<(), ExecError>
    where
        F: Fn(&mut ThreadCtx<'_, '_>) -> Result<(), ExecError>,
    {
        let total = config.validate()?;
        let mut race = if self.race_detection { Some(RaceTracker::default()) } else { None };
        let mut items = vec![0u64; total];
        let mut barriers = 0u64;
        let mut divergence = 0u64;
        let mut shared = vec![0u64; config.shared_slots];
        let mut regs: Vec<Vec<u64>> = (0..config.block).map(|_| Vec::new()).collect();
        let mut branches: Vec<bool> = Vec::new();
        let mut tally: Vec<(u64, u64)> = Vec::new();

        for block_id in 0..config.grid {
            shared.iter_mut().for_each(|s| *s = 0);
            regs.iter_mut().for_each(Vec::clear);
            if let Some(r) = race.as_mut() {
                r.shared.clear();
            }
            let mut phase = 0usize;
            loop {
                let mut reached = 0usize;
                let mut finished = 0usize;
                tally.clear();
                for thread_id in 0..config.block {
                    branches.clear();
                    let mut ctx = ThreadCtx {
                        block_id,
                        thread_id,
                        grid: config.grid,
                        block_dim: config.block,
                        phase,
                        buffers: &mut *buffers,
                        shared: &mut shared,
                        regs: &mut regs[thread_id],
                        race: race.as_mut(),
                        barrier_called: false,
                        items: 0,
                        branches: &mut branches,
                    };
                    kernel(&mut ctx)?;
                    let (called, n) = (ctx.barrier_called, ctx.items);
                    items[block_id * config.block + thread_id] += n;
                    if called {
                        reached += 1;
                    } else {
                        finished += 1;
                    }
                    if tally.len() < branches.len() {
                        tally.resize(branches.len(), (0, 0));
                    }
                    for (site, &taken) in branches.iter().enumerate() {
                        if taken {
                            tally[site].0 += 1;
                        } else {
                            tally[site].1 += 1;
                        }
                    }
                }
                divergence += tally.iter().filter(|(t, _)| *t > 0).map(|(_, s)| *s).sum::<u64>();
                if reached == 0 {
                    break;
                }
                if finished > 0 {
                    return Err(ExecError::DivergentBarrier { block: block_id, phase, reached, finished });
                }
                barriers += 1;
                phase += 1;
            }
        }

        let stats = &mut self.stats;
        stats.launches += 1;
        stats.barriers += barriers;
        stats.divergence_events += divergence;
        if stats.per_thread_items.len() < total {
            stats.per_thread_items.resize(total, 0);
        }
        for (acc, n) in stats.per_thread_items.iter_mut().zip(&items) {
            *acc += n;
        }
        stats.launch_log.push(LaunchRecord { grid: config.grid, block: config.block, barriers });
        Ok(())
    }
}
