//! Cost tables for graph-level layout tuning.
//!
//! ```json
//! {"node_costs": {"conv": {"NCHW": 10.0, "NCHW4c": 6.0}},
//!  "transform_costs": [["NCHW", "NCHW4c", 3.0]]}
//! ```
//!
//! A transform pair missing from the table falls back to its reverse.

use std::collections::BTreeMap;
use std::path::Path;

use edgegraph_core::graph::Graph;
use edgegraph_core::tensor::TransformCost;
use edgegraph_core::tune::{graph_tune_dp, TuneError};
use edgegraph_core::LayoutTag;
use serde::Deserialize;

use crate::files::{read_text, FileError};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
pub struct CostsFile {
    pub node_costs: BTreeMap<String, BTreeMap<LayoutTag, f64>>,
    #[serde(default)]
    pub transform_costs: Vec<(LayoutTag, LayoutTag, f64)>,
}

impl CostsFile {
    pub fn read(path: &Path) -> Result<Self, FileError> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| FileError::json(path, e))
    }

    /// Runs the layout DP over `g`; returns the layout per node and the
    /// total cost.
    pub fn tune(&self, g: &Graph) -> Result<(BTreeMap<String, LayoutTag>, f64), TuneError> {
        let candidates: BTreeMap<String, Vec<(LayoutTag, f64)>> =
            self.node_costs.iter().map(|(k, m)| (k.clone(), m.iter().map(|(l, c)| (*l, *c)).collect())).collect();
        let table = TransformCost::Table(self.transform_costs.clone());
        let nodes = g.nodes();
        graph_tune_dp(g, &candidates, |p, c, from, to| {
            table.lookup(*from, *to, 0).ok_or_else(|| {
                TuneError::TransformCost(format!(
                    "no cost for {from} -> {to} on edge {} -> {}",
                    nodes[p].id, nodes[c].id
                ))
            })
        })
    }
}
