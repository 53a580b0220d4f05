//! Portable CNN-inference micro-runtime.
//!
//! Vision operators (segmented argsort, prefix scan, NMS, multibox detection,
//! ROIAlign) run as kernels on a deterministic block/thread emulator
//! ([`exec`]). Convolutions use a tunable tiled schedule template ([`conv`])
//! searched by random or cost-model-guided tuners, and a dynamic program picks
//! per-node data layouts ([`tune`]). Operator graphs are placed across CPU and
//! GPU with explicit copy nodes and executed by [`graph`].
//!
//! The crate is `no_std` and only needs `alloc`; file formats, wall-clock
//! timing and the command line live in the `edgegraph` crate.

#![no_std]

extern crate alloc;

pub mod conv;
pub mod exec;
pub mod graph;
pub mod tensor;
pub mod timing;
pub mod tune;
pub mod vision;

pub use exec::{DType, Device, DeviceBuffer, LaunchConfig, LaunchStats, Session};
pub use tensor::{LayoutTag, Tensor, TensorData};
