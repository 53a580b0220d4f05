//! Two-pass placement: tag each node with a device from the supported-op
//! list, then put an explicit copy node on every edge that crosses devices.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{AttrValue, Graph, GraphError, Node, OpKind};
use crate::exec::Device;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopyDirection {
    HostToDevice,
    DeviceToHost,
}

impl CopyDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            CopyDirection::HostToDevice => "host_to_device",
            CopyDirection::DeviceToHost => "device_to_host",
        }
    }

    fn to(dst: Device) -> Self {
        match dst {
            Device::Gpu => CopyDirection::HostToDevice,
            Device::Cpu => CopyDirection::DeviceToHost,
        }
    }
}

/// First pass: GPU iff the node's op is in `gpu_ops`, otherwise CPU.
/// Copy nodes are left alone so the pass can be re-applied after pass two.
pub fn assign_devices(mut g: Graph, gpu_ops: &BTreeSet<OpKind>) -> Graph {
    for node in g.nodes_mut() {
        if node.op != OpKind::Copy {
            node.device = Some(if gpu_ops.contains(&node.op) { Device::Gpu } else { Device::Cpu });
        }
    }
    g
}

/// Edges between non-copy nodes whose devices differ.
pub fn count_cross_device_edges(g: &Graph) -> usize {
    let nodes = g.nodes();
    g.edges()
        .into_iter()
        .filter(|&(p, c, _)| {
            nodes[p].op != OpKind::Copy && nodes[c].op != OpKind::Copy && nodes[p].device != nodes[c].device
        })
        .count()
}

/// Second pass: one copy node per device-differing edge, tagged with its
/// direction and placed on the destination device. Edges that already touch
/// a copy node are skipped, which makes the pass idempotent.
pub fn insert_copies(g: Graph) -> Result<Graph, GraphError> {
    for n in g.nodes() {
        if n.device.is_none() {
            return Err(GraphError::Unassigned(n.id.clone()));
        }
    }
    let edges = g.edges();
    let mut nodes: Vec<Node> = Vec::with_capacity(g.len());
    let mut taken: BTreeSet<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
    taken.extend(g.inputs().keys().cloned());
    let mut rewired: Vec<Node> = g.nodes().to_vec();
    let mut inserted: Vec<(usize, Node)> = Vec::new();
    for (p, c, slot) in edges {
        let (prod, cons) = (&g.nodes()[p], &g.nodes()[c]);
        if prod.op == OpKind::Copy || cons.op == OpKind::Copy || prod.device == cons.device {
            continue;
        }
        let dst = cons.device.unwrap_or(Device::Cpu);
        let mut id = format!("copy_{}_{}_{}", prod.id, cons.id, slot);
        while taken.contains(&id) {
            id.push('_');
        }
        taken.insert(id.clone());
        let mut copy = Node::new(id.clone(), OpKind::Copy, &[prod.id.as_str()])
            .with_attr("direction", AttrValue::Str(CopyDirection::to(dst).as_str().into()));
        copy.device = Some(dst);
        copy.layout = prod.layout;
        rewired[c].inputs[slot] = id;
        inserted.push((c, copy));
    }
    // copies go right before their consumer to keep declaration order topological
    for (i, node) in rewired.into_iter().enumerate() {
        for (_, copy) in inserted.iter().filter(|(c, _)| *c == i) {
            nodes.push(copy.clone());
        }
        nodes.push(node);
    }
    Graph::new(nodes, g.inputs().clone(), g.outputs().to_vec())
}
