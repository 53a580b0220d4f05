//! File formats, wall-clock timing and report rendering around
//! `edgegraph-core`.

pub mod bench;
pub mod clock;
pub mod costs;
pub mod files;
pub mod records;

pub use files::FileError;
