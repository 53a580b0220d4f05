//! Operator graphs: loading and validation, two-pass device placement with
//! copy insertion, and a topological executor.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::{ConvError, ScheduleConfig};
use crate::exec::{DType, Device, ExecError};
use crate::tensor::{LayoutTag, TensorError};
use crate::vision::VisionError;

mod executor;
mod ops;
mod placement;

pub use executor::{run_graph, RunReport};
pub use ops::OpKind;
pub use placement::{assign_devices, count_cross_device_edges, insert_copies, CopyDirection};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("node `{0}` is defined twice")]
    DuplicateNode(String),
    #[error("node `{node}` references unknown tensor `{missing}`")]
    Dangling { node: String, missing: String },
    #[error("node `{node}` has unknown op `{op}`")]
    UnknownOp { node: String, op: String },
    #[error("graph has a cycle through node `{0}`")]
    Cycle(String),
    #[error("node `{node}`: {message}")]
    Node { node: String, message: String },
    #[error("node `{0}` has no device assigned")]
    Unassigned(String),
    #[error("edge `{producer}` -> `{consumer}` crosses devices without a copy")]
    MissingCopy { producer: String, consumer: String },
    #[error("missing graph input `{0}`")]
    MissingInput(String),
    #[error("input `{name}`: expected shape {expected:?} {dtype}, got {found:?} {found_dtype}")]
    InputMismatch { name: String, expected: Vec<usize>, dtype: DType, found: Vec<usize>, found_dtype: DType },
    #[error("unknown output `{0}`")]
    UnknownOutput(String),
}

impl GraphError {
    pub(crate) fn at(node: &str, message: impl fmt::Display) -> Self {
        GraphError::Node { node: node.to_string(), message: message.to_string() }
    }
}

/// Attribute values as they appear in graph documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Ints(Vec<i64>),
    Floats(Vec<f64>),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Int(v) => Some(*v as f64),
            AttrValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Integer lists, accepting a single integer as a one-element list.
    pub fn as_ints(&self) -> Option<Vec<i64>> {
        match self {
            AttrValue::Int(v) => Some(alloc::vec![*v]),
            AttrValue::Ints(v) => Some(v.clone()),
            AttrValue::Floats(v) if v.is_empty() => Some(Vec::new()),
            _ => None,
        }
    }

    /// Float lists; integer lists are widened.
    pub fn as_floats(&self) -> Option<Vec<f64>> {
        match self {
            AttrValue::Int(v) => Some(alloc::vec![*v as f64]),
            AttrValue::Float(v) => Some(alloc::vec![*v]),
            AttrValue::Ints(v) => Some(v.iter().map(|&x| x as f64).collect()),
            AttrValue::Floats(v) => Some(v.clone()),
            _ => None,
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

/// Declared shape and dtype of a named graph input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub shape: Vec<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: String,
}

fn default_dtype() -> String {
    "f32".into()
}

pub(crate) fn parse_dtype(s: &str) -> Option<DType> {
    match s {
        "f32" | "float32" => Some(DType::F32),
        "i32" | "int32" => Some(DType::I32),
        "bool" => Some(DType::Bool),
        _ => None,
    }
}

/// One node as written in a graph document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub op: String,
    #[serde(default)]
    pub attrs: Attrs,
    #[serde(default)]
    pub inputs: Vec<String>,
}

/// Serializable graph document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub inputs: BTreeMap<String, InputSpec>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: OpKind,
    pub attrs: Attrs,
    pub inputs: Vec<String>,
    pub device: Option<Device>,
    pub layout: LayoutTag,
    pub schedule: Option<ScheduleConfig>,
}

impl Node {
    pub fn new(id: impl Into<String>, op: OpKind, inputs: &[&str]) -> Self {
        Node {
            id: id.into(),
            op,
            attrs: Attrs::new(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            device: None,
            layout: LayoutTag::Nchw,
            schedule: None,
        }
    }

    pub fn with_attr(mut self, key: &str, value: AttrValue) -> Self {
        self.attrs.insert(key.into(), value);
        self
    }
}

/// Validated operator DAG. Nodes keep declaration order; every node input
/// names either a graph input or another node.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, (Vec<usize>, DType)>,
    outputs: Vec<String>,
}

impl Graph {
    pub fn new(
        nodes: Vec<Node>,
        inputs: BTreeMap<String, (Vec<usize>, DType)>,
        outputs: Vec<String>,
    ) -> Result<Self, GraphError> {
        let g = Graph { nodes, inputs, outputs };
        g.validate()?;
        Ok(g)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn inputs(&self) -> &BTreeMap<String, (Vec<usize>, DType)> {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(producer, consumer, input slot)` for every node-to-node edge, in
    /// consumer declaration order.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let index = self.index();
        let mut edges = Vec::new();
        for (c, node) in self.nodes.iter().enumerate() {
            for (slot, src) in node.inputs.iter().enumerate() {
                if let Some(&p) = index.get(src.as_str()) {
                    edges.push((p, c, slot));
                }
            }
        }
        edges
    }

    pub fn copy_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.op == OpKind::Copy).count()
    }

    fn index(&self) -> BTreeMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect()
    }

    fn validate(&self) -> Result<(), GraphError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if self.inputs.contains_key(&n.id) || !seen.insert(n.id.as_str()) {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        for n in &self.nodes {
            for src in &n.inputs {
                if !seen.contains(src.as_str()) && !self.inputs.contains_key(src) {
                    return Err(GraphError::Dangling { node: n.id.clone(), missing: src.clone() });
                }
            }
            n.op.check_arity(&n.id, n.inputs.len())?;
        }
        for o in &self.outputs {
            if !seen.contains(o.as_str()) && !self.inputs.contains_key(o) {
                return Err(GraphError::UnknownOutput(o.clone()));
            }
        }
        self.topo_order().map(|_| ())
    }

    /// Kahn's algorithm, always releasing the lowest-declared ready node, so
    /// the order is stable and equals declaration order when that is valid.
    pub fn topo_order(&self) -> Result<Vec<usize>, GraphError> {
        let n = self.nodes.len();
        let mut indegree = alloc::vec![0usize; n];
        let mut consumers: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
        for (p, c, _) in self.edges() {
            indegree[c] += 1;
            consumers[p].push(c);
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(GraphError::Cycle(self.nodes[stuck].id.clone()));
        }
        Ok(order)
    }

    /// Converts back to a document; devices and schedules are not part of it.
    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.clone(),
                    op: n.op.to_string(),
                    attrs: n.attrs.clone(),
                    inputs: n.inputs.clone(),
                })
                .collect(),
            inputs: self
                .inputs
                .iter()
                .map(|(k, (shape, dt))| (k.clone(), InputSpec { shape: shape.clone(), dtype: dt.to_string() }))
                .collect(),
            outputs: self.outputs.clone(),
        }
    }
}

/// Builds a validated graph with every device unassigned.
pub fn load_graph(doc: &GraphDoc) -> Result<Graph, GraphError> {
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for nd in &doc.nodes {
        let op =
            OpKind::from_str(&nd.op).map_err(|_| GraphError::UnknownOp { node: nd.id.clone(), op: nd.op.clone() })?;
        let mut node = Node::new(nd.id.clone(), op, &[]);
        node.inputs = nd.inputs.clone();
        node.attrs = nd.attrs.clone();
        if let Some(AttrValue::Str(l)) = nd.attrs.get("layout") {
            node.layout = l.parse().map_err(|e: TensorError| GraphError::at(&nd.id, e))?;
        }
        nodes.push(node);
    }
    let mut inputs = BTreeMap::new();
    for (name, spec) in &doc.inputs {
        let dtype =
            parse_dtype(&spec.dtype).ok_or_else(|| GraphError::at(name, format!("unknown dtype `{}`", spec.dtype)))?;
        inputs.insert(name.clone(), (spec.shape.clone(), dtype));
    }
    Graph::new(nodes, inputs, doc.outputs.clone())
}

/// Failures raised while executing a node.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error("{0}")]
    Invalid(String),
}
