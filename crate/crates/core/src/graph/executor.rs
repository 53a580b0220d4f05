//! Topological graph execution with per-node device dispatch.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::ops::evaluate;
use super::{Graph, GraphError, OpKind};
use crate::exec::{Device, Session};
use crate::tensor::Tensor;

/// What a run did, for reporting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    /// `(node id, device)` in execution order.
    pub executed: Vec<(String, Device)>,
    pub copies: usize,
    /// Elements moved by copy nodes.
    pub copied_elements: u64,
    /// Kernel launches issued on `session` during the run.
    pub launches: u64,
}

fn placement_of(g: &Graph) -> Result<Vec<Device>, GraphError> {
    let nodes = g.nodes();
    if nodes.iter().all(|n| n.device.is_none()) {
        return Ok(alloc::vec![Device::Cpu; nodes.len()]);
    }
    let devices: Vec<Device> =
        nodes.iter().map(|n| n.device.ok_or_else(|| GraphError::Unassigned(n.id.clone()))).collect::<Result<_, _>>()?;
    for (p, c, _) in g.edges() {
        let crosses = devices[p] != devices[c];
        if crosses && nodes[p].op != OpKind::Copy && nodes[c].op != OpKind::Copy {
            return Err(GraphError::MissingCopy { producer: nodes[p].id.clone(), consumer: nodes[c].id.clone() });
        }
    }
    Ok(devices)
}

/// Runs every node in topological order. A graph with no devices assigned
/// runs entirely on the CPU; a partially assigned graph is rejected, as is
/// a cross-device edge without a copy node.
pub fn run_graph(
    session: &mut Session,
    g: &Graph,
    inputs: &BTreeMap<String, Tensor>,
) -> Result<(BTreeMap<String, Tensor>, RunReport), GraphError> {
    let devices = placement_of(g)?;
    let mut values: BTreeMap<&str, Tensor> = BTreeMap::new();
    for (name, (shape, dtype)) in g.inputs() {
        let t = inputs.get(name).ok_or_else(|| GraphError::MissingInput(name.clone()))?;
        if t.shape() != shape.as_slice() || t.dtype() != *dtype {
            return Err(GraphError::InputMismatch {
                name: name.clone(),
                expected: shape.clone(),
                dtype: *dtype,
                found: t.shape().to_vec(),
                found_dtype: t.dtype(),
            });
        }
        values.insert(name.as_str(), t.clone());
    }
    let launches_before = session.stats().launches;
    let mut report = RunReport::default();
    for i in g.topo_order()? {
        let node = &g.nodes()[i];
        let ins: Vec<Tensor> = node
            .inputs
            .iter()
            .map(|src| values.get(src.as_str()).cloned().ok_or_else(|| GraphError::MissingInput(src.clone())))
            .collect::<Result<_, _>>()?;
        let out = evaluate(session, devices[i], node, &ins).map_err(|e| GraphError::at(&node.id, e))?;
        if node.op == OpKind::Copy {
            report.copies += 1;
            report.copied_elements += out.numel() as u64;
        }
        report.executed.push((node.id.clone(), devices[i]));
        values.insert(node.id.as_str(), out);
    }
    report.launches = session.stats().launches - launches_before;
    let outputs = g
        .outputs()
        .iter()
        .map(|o| {
            values.get(o.as_str()).cloned().map(|t| (o.clone(), t)).ok_or_else(|| GraphError::UnknownOutput(o.clone()))
        })
        .collect::<Result<_, _>>()?;
    Ok((outputs, report))
}
