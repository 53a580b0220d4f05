use std::collections::{BTreeMap, BTreeSet};

use edgegraph_core::graph::{
    assign_devices, count_cross_device_edges, insert_copies, load_graph, run_graph, Graph, GraphDoc, GraphError, Node,
    OpKind,
};
use edgegraph_core::{DType, Device, Session, Tensor};
use proptest::prelude::*;

const SSD: &str = include_str!("../../../fixtures/ssd_like.json");
const SSD_INPUTS: &str = include_str!("../../../fixtures/ssd_like.inputs.json");

fn ssd() -> Graph {
    let doc: GraphDoc = serde_json::from_str(SSD).unwrap();
    load_graph(&doc).unwrap()
}

fn ssd_inputs() -> BTreeMap<String, Tensor> {
    let v: serde_json::Value = serde_json::from_str(SSD_INPUTS).unwrap();
    let img = &v["image"];
    let shape: Vec<usize> = img["shape"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap() as usize).collect();
    let data: Vec<f32> = img["data"].as_array().unwrap().iter().map(|d| d.as_f64().unwrap() as f32).collect();
    BTreeMap::from([("image".to_string(), Tensor::from_f32(&shape, data).unwrap())])
}

fn all_ops() -> BTreeSet<OpKind> {
    OpKind::ALL.iter().copied().filter(|&k| k != OpKind::Copy).collect()
}

fn without(op: OpKind) -> BTreeSet<OpKind> {
    let mut s = all_ops();
    s.remove(&op);
    s
}

fn place(g: Graph, gpu_ops: &BTreeSet<OpKind>) -> Graph {
    insert_copies(assign_devices(g, gpu_ops)).unwrap()
}

fn bits(outs: &BTreeMap<String, Tensor>) -> Vec<(String, Vec<u32>)> {
    outs.iter().map(|(k, t)| (k.clone(), t.as_f32().unwrap().iter().map(|v| v.to_bits()).collect())).collect()
}

/// Independent check: every input of a node is a graph input or a node that
/// appears earlier in `order`, and `order` is a permutation.
fn is_topological(g: &Graph, order: &[usize]) -> bool {
    let mut seen = BTreeSet::new();
    let mut pos = vec![usize::MAX; g.len()];
    for (i, &n) in order.iter().enumerate() {
        pos[n] = i;
        seen.insert(n);
    }
    let index: BTreeMap<&str, usize> = g.nodes().iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    seen.len() == g.len()
        && order.len() == g.len()
        && g.nodes().iter().enumerate().all(|(i, n)| {
            n.inputs.iter().all(|inp| match index.get(inp.as_str()) {
                Some(&p) => pos[p] < pos[i],
                None => g.inputs().contains_key(inp),
            })
        })
}

#[test]
fn ssd_fixture_loads_with_stable_order() {
    let g = ssd();
    assert_eq!(g.len(), 12);
    let order = g.topo_order().unwrap();
    assert!(is_topological(&g, &order));
    assert_eq!(order, ssd().topo_order().unwrap());
    assert!(g.nodes().iter().all(|n| n.device.is_none()));
}

#[test]
fn ssd_fallback_inserts_two_copies() {
    let g = assign_devices(ssd(), &without(OpKind::BoxNms));
    assert_eq!(g.node("nms").unwrap().device, Some(Device::Cpu));
    assert_eq!(count_cross_device_edges(&g), 2);
    let placed = insert_copies(g).unwrap();
    assert_eq!(placed.copy_count(), 2);
    assert_eq!(placed.len(), 14);
    let again = insert_copies(placed.clone()).unwrap();
    assert_eq!(again, placed);
    let reassigned = insert_copies(assign_devices(placed.clone(), &without(OpKind::BoxNms))).unwrap();
    assert_eq!(reassigned, placed);
    for n in placed.nodes().iter().filter(|n| n.op == OpKind::Copy) {
        assert_eq!(n.inputs.len(), 1);
        let src = placed.node(&n.inputs[0]).unwrap();
        assert_ne!(src.device, n.device);
    }
}

#[test]
fn ssd_outputs_independent_of_placement() {
    let inputs = ssd_inputs();
    let run = |g: &Graph| run_graph(&mut Session::new(), g, &inputs).unwrap();
    let (gpu, gpu_report) = run(&place(ssd(), &all_ops()));
    let (fallback, fb_report) = run(&place(ssd(), &without(OpKind::BoxNms)));
    let (cpu, cpu_report) = run(&ssd());
    assert_eq!(bits(&gpu), bits(&fallback));
    assert_eq!(bits(&gpu), bits(&cpu));
    assert_eq!((gpu_report.copies, fb_report.copies, cpu_report.copies), (0, 2, 0));
    assert_eq!(cpu_report.launches, 0);
    assert!(gpu_report.launches > 0);
    let boxes = gpu["boxes"].as_f32().unwrap();
    let detections = boxes.chunks(6).filter(|r| r[0] >= 0.0).count();
    assert!(detections > 0, "fixture should produce detections");
    let (_, report) = run(&place(ssd(), &without(OpKind::BoxNms)));
    let nms = report.executed.iter().find(|(id, _)| id == "nms").unwrap();
    assert_eq!(nms.1, Device::Cpu);
}

#[test]
fn conv_nms_conv_chain() {
    let mut inputs = BTreeMap::new();
    inputs.insert("x".to_string(), (vec![1, 4, 6], DType::F32));
    let g = Graph::new(
        vec![
            Node::new("a", OpKind::Relu, &["x"]),
            Node::new("b", OpKind::BoxNms, &["a"]),
            Node::new("c", OpKind::Relu, &["b"]),
        ],
        inputs,
        vec!["c".into()],
    )
    .unwrap();
    let g = assign_devices(g, &BTreeSet::from([OpKind::Relu]));
    let devices: Vec<_> = g.nodes().iter().map(|n| n.device.unwrap()).collect();
    assert_eq!(devices, vec![Device::Gpu, Device::Cpu, Device::Gpu]);
    assert_eq!(insert_copies(g).unwrap().copy_count(), 2);
}

#[test]
fn homogeneous_placements_insert_nothing() {
    for ops in [all_ops(), BTreeSet::new()] {
        let g = assign_devices(ssd(), &ops);
        let want = if ops.is_empty() { Device::Cpu } else { Device::Gpu };
        assert!(g.nodes().iter().all(|n| n.device == Some(want)));
        assert_eq!(insert_copies(g.clone()).unwrap(), g);
    }
}

#[test]
fn partial_assignment_is_rejected() {
    let mut g = assign_devices(ssd(), &all_ops());
    g.node_mut("nms").unwrap().device = None;
    assert_eq!(insert_copies(g.clone()).unwrap_err(), GraphError::Unassigned("nms".into()));
    assert!(matches!(run_graph(&mut Session::new(), &g, &ssd_inputs()), Err(GraphError::Unassigned(_))));
    let mut g = assign_devices(ssd(), &all_ops());
    g.node_mut("nms").unwrap().device = Some(Device::Cpu);
    assert!(matches!(run_graph(&mut Session::new(), &g, &ssd_inputs()), Err(GraphError::MissingCopy { .. })));
}

const ELEMENTWISE: [OpKind; 4] = [OpKind::Relu, OpKind::Add, OpKind::Identity, OpKind::Softmax];

fn random_graph() -> impl Strategy<Value = (Vec<(usize, usize, usize)>, BTreeSet<OpKind>)> {
    (
        prop::collection::vec((0usize..4, any::<prop::sample::Index>(), any::<prop::sample::Index>()), 1..14),
        prop::collection::btree_set(prop::sample::select(ELEMENTWISE.to_vec()), 0..=4),
    )
        .prop_map(|(spec, ops)| {
            let nodes = spec.iter().enumerate().map(|(i, (op, a, b))| (*op, a.index(i + 1), b.index(i + 1))).collect();
            (nodes, ops)
        })
}

fn build(spec: &[(usize, usize, usize)]) -> Graph {
    let name = |j: usize| if j == 0 { "x".to_string() } else { format!("n{}", j - 1) };
    let nodes: Vec<Node> = spec
        .iter()
        .enumerate()
        .map(|(i, &(op, a, b))| {
            let (an, bn) = (name(a), name(b));
            let op = ELEMENTWISE[op];
            let ins: Vec<&str> = if op == OpKind::Add { vec![&an, &bn] } else { vec![&an] };
            Node::new(format!("n{i}"), op, &ins)
        })
        .collect();
    let out = format!("n{}", spec.len() - 1);
    Graph::new(nodes, BTreeMap::from([("x".to_string(), (vec![1, 3, 2, 2], DType::F32))]), vec![out]).unwrap()
}

proptest! {
    #[test]
    fn placement_totality_and_transparency((spec, ops) in random_graph(), seed in 0u32..1000) {
        let g = build(&spec);
        let assigned = assign_devices(g.clone(), &ops);
        let cross = count_cross_device_edges(&assigned);
        let placed = insert_copies(assigned).unwrap();
        prop_assert_eq!(placed.copy_count(), cross);
        prop_assert_eq!(placed.len(), g.len() + cross);
        prop_assert_eq!(&insert_copies(placed.clone()).unwrap(), &placed);
        prop_assert!(is_topological(&placed, &placed.topo_order().unwrap()));
        let x: Vec<f32> = (0..12u32).map(|i| ((i.wrapping_mul(2654435761) ^ seed) % 97) as f32 / 13.0 - 3.0).collect();
        let inputs = BTreeMap::from([("x".to_string(), Tensor::from_f32(&[1, 3, 2, 2], x).unwrap())]);
        let (a, _) = run_graph(&mut Session::new(), &placed, &inputs).unwrap();
        let (b, _) = run_graph(&mut Session::new(), &g, &inputs).unwrap();
        prop_assert_eq!(bits(&a), bits(&b));
    }
}
