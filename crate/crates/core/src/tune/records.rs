//! Tuning records and an append-only in-memory store. File IO lives in the
//! std companion crate; this module only defines the serialized shape.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conv::ScheduleConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// First line of a records file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordsHeader {
    pub schema: u32,
    pub features: String,
}

impl Default for RecordsHeader {
    fn default() -> Self {
        RecordsHeader { schema: SCHEMA_VERSION, features: super::FEATURES_VERSION.into() }
    }
}

/// One measurement. Failed configs carry `failed = true`, no cost, and the
/// reason in `error`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub workload_key: String,
    pub config: ScheduleConfig,
    pub cost_mean: Option<f64>,
    pub cost_std: Option<f64>,
    pub repeats: usize,
    pub device_tag: String,
    pub created_at: u64,
    #[serde(default)]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TuningRecord {
    pub fn is_ok(&self) -> bool {
        !self.failed && self.cost_mean.is_some()
    }

    /// Cost for ranking; failures rank last.
    pub fn cost(&self) -> f64 {
        if self.is_ok() {
            self.cost_mean.unwrap_or(f64::INFINITY)
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordStore {
    records: Vec<TuningRecord>,
}

impl RecordStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<TuningRecord>) -> Self {
        RecordStore { records }
    }

    pub fn push(&mut self, r: TuningRecord) {
        self.records.push(r);
    }

    pub fn extend(&mut self, rs: impl IntoIterator<Item = TuningRecord>) {
        self.records.extend(rs);
    }

    pub fn records(&self) -> &[TuningRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TuningRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Cheapest successful record ever stored for `key`; the earliest wins a
    /// tie. Appending can only lower the answer.
    pub fn best(&self, key: &str) -> Option<&TuningRecord> {
        let mut best: Option<&TuningRecord> = None;
        for r in self.records.iter().filter(|r| r.workload_key == key && r.is_ok()) {
            if best.is_none_or(|b| r.cost() < b.cost()) {
                best = Some(r);
            }
        }
        best
    }

    /// Newest record for one `(key, config)` pair.
    pub fn latest(&self, key: &str, config: &ScheduleConfig) -> Option<&TuningRecord> {
        self.records.iter().rev().find(|r| r.workload_key == key && r.config == *config)
    }
}
