mod common;

use std::collections::BTreeMap;

use common::layout_brute_force;
use edgegraph_core::conv::{schedule_space, ConvWorkload, ScheduleConfig};
use edgegraph_core::graph::{load_graph, GraphDoc};
use edgegraph_core::timing::{FnTimer, Probe};
use edgegraph_core::tune::{
    graph_tune_dp, synthetic_surface, trials_to_reach, tune_layouts, tune_model, tune_random, LayoutProblem,
    RecordStore, TuneError, Tuner, TuningRecord,
};
use edgegraph_core::LayoutTag;
use proptest::prelude::*;

const LAYOUTS: [LayoutTag; 4] = [LayoutTag::Nchw, LayoutTag::NchwC(4), LayoutTag::NchwC(8), LayoutTag::NchwC(16)];

fn layout_index(l: &LayoutTag) -> usize {
    LAYOUTS.iter().position(|x| x == l).unwrap()
}

/// Node costs, a transform cost table indexed by [edge][from][to], and edges.
type Instance = (Vec<Vec<f64>>, Vec<[[f64; 4]; 4]>, Vec<(usize, usize)>);

fn costs(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((0u32..50).prop_map(f64::from), 1..=4), n)
}

fn tables(e: usize) -> impl Strategy<Value = Vec<[[f64; 4]; 4]>> {
    prop::collection::vec(prop::array::uniform4(prop::array::uniform4((0u32..20).prop_map(f64::from))), e)
}

fn chain() -> impl Strategy<Value = Instance> {
    (1usize..=10).prop_flat_map(|n| {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        (costs(n), tables(n - 1), Just(edges))
    })
}

fn tree() -> impl Strategy<Value = Instance> {
    (2usize..=8).prop_flat_map(|n| {
        let parents = prop::collection::vec((any::<prop::sample::Index>(), any::<bool>()), n - 1);
        (costs(n), tables(n - 1), parents).prop_map(move |(c, t, parents)| {
            let edges = parents
                .iter()
                .enumerate()
                .map(|(i, (p, down))| {
                    let (child, parent) = (i + 1, p.index(i + 1));
                    if *down {
                        (parent, child)
                    } else {
                        (child, parent)
                    }
                })
                .collect();
            (c, t, edges)
        })
    })
}

fn solve((costs, tables, edges): &Instance) -> (f64, f64, Vec<LayoutTag>) {
    let problem = LayoutProblem {
        names: (0..costs.len()).map(|i| format!("n{i}")).collect(),
        candidates: costs.iter().map(|c| c.iter().enumerate().map(|(j, &v)| (LAYOUTS[j], v)).collect()).collect(),
        edges: edges.clone(),
    };
    let edge_of = |p: usize, c: usize| edges.iter().position(|&e| e == (p, c)).unwrap();
    let a = tune_layouts(&problem, |p, c, from, to| Ok(tables[edge_of(p, c)][layout_index(from)][layout_index(to)]))
        .unwrap();
    let brute = layout_brute_force(costs, edges, &|p, c, i, j| tables[edge_of(p, c)][i][j]);
    (a.total, brute, a.layouts)
}

fn recompute((costs, tables, edges): &Instance, layouts: &[LayoutTag]) -> f64 {
    let idx: Vec<usize> = layouts.iter().map(layout_index).collect();
    let nodes: f64 = idx.iter().enumerate().map(|(i, &j)| costs[i][j]).sum();
    nodes + edges.iter().enumerate().map(|(e, &(p, c))| tables[e][idx[p]][idx[c]]).sum::<f64>()
}

proptest! {
    #[test]
    fn dp_equals_brute_force_on_chains(inst in chain()) {
        let (dp, brute, layouts) = solve(&inst);
        prop_assert_eq!(dp, brute);
        prop_assert_eq!(recompute(&inst, &layouts), dp);
    }

    #[test]
    fn dp_equals_brute_force_on_trees(inst in tree()) {
        let (dp, brute, layouts) = solve(&inst);
        prop_assert_eq!(dp, brute);
        prop_assert_eq!(recompute(&inst, &layouts), dp);
    }

    #[test]
    fn zero_transform_cost_gives_independent_minima(c in costs(6)) {
        let inst = (c.clone(), vec![[[0.0; 4]; 4]; 5], (1..6).map(|i| (i - 1, i)).collect());
        let (dp, _, _) = solve(&inst);
        let sum: f64 = c.iter().map(|v| v.iter().cloned().fold(f64::INFINITY, f64::min)).sum();
        prop_assert_eq!(dp, sum);
    }

    #[test]
    fn best_is_monotone_under_appends(costs in prop::collection::vec(prop::option::of(1u32..1000), 1..60)) {
        let mut store = RecordStore::new();
        let mut prev = f64::INFINITY;
        for (i, c) in costs.iter().enumerate() {
            store.push(record(i as u64, c.map(f64::from)));
            let best = store.best(KEY).map(|r| r.cost()).unwrap_or(f64::INFINITY);
            prop_assert!(best <= prev);
            let expected = costs[..=i].iter().flatten().map(|&v| f64::from(v)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(best, expected);
            prev = best;
        }
    }
}

const KEY: &str = "conv2d/1-2-4-4/8-1-1/1-1/0-0/1-1/1";

fn record(t: u64, cost: Option<f64>) -> TuningRecord {
    TuningRecord {
        workload_key: KEY.into(),
        config: ScheduleConfig { oc_split: 1 + (t as usize % 2), ..Default::default() },
        cost_mean: cost,
        cost_std: cost.map(|_| 0.0),
        repeats: if cost.is_some() { 3 } else { 0 },
        device_tag: "emu".into(),
        created_at: t,
        failed: cost.is_none(),
        error: cost.is_none().then(|| "rejected".into()),
    }
}

fn surface_tuner(wl: &ConvWorkload, seed: u64) -> Tuner<FnTimer<impl FnMut(&Probe<'_>) -> f64>> {
    let f = synthetic_surface(wl, seed);
    Tuner::new(FnTimer(move |p: &Probe<'_>| f(p.config.unwrap()))).with_repeats(1)
}

#[test]
fn full_budget_random_is_exhaustive_optimum() {
    for wl in [ConvWorkload::simple(1, 2, 4, 4, 8, 1, 1), ConvWorkload::simple(1, 3, 6, 6, 4, 3, 3).with_pad(1, 1)] {
        let space = schedule_space(&wl);
        let f = synthetic_surface(&wl, 11);
        let optimum = space.iter().map(&f).fold(f64::INFINITY, f64::min);
        let out = tune_random(&mut surface_tuner(&wl, 11), &wl, space.len(), 3).unwrap();
        assert_eq!(out.best.cost(), optimum);
        assert!(out.best.is_ok());
        assert!(out.trials.iter().all(|r| r.is_ok()));
    }
}

#[test]
fn model_beats_random_on_synthetic_surface() {
    let wl = ConvWorkload::simple(1, 2, 8, 8, 16, 1, 1);
    let n = schedule_space(&wl).len();
    let (mut model_total, mut random_total) = (0usize, 0usize);
    for seed in 0..10 {
        let m = tune_model(&mut surface_tuner(&wl, seed), &wl, n, 4, seed).unwrap();
        let r = tune_random(&mut surface_tuner(&wl, seed), &wl, n - 1, seed).unwrap();
        model_total += trials_to_reach(&m.trials, 1.0).unwrap();
        random_total += trials_to_reach(&r.trials, 1.0).unwrap_or(n);
        assert!(m.trials.iter().all(|t| t.is_ok()));
        assert_eq!(m.best.cost(), 1.0);
    }
    assert!(2 * model_total <= random_total, "model {model_total} vs random {random_total}");
}

#[test]
fn graph_dp_on_fixtures() {
    let doc: GraphDoc = serde_json::from_str(include_str!("../../../fixtures/conv_relu.json")).unwrap();
    let g = load_graph(&doc).unwrap();
    let mut node_costs = BTreeMap::new();
    node_costs.insert("w".to_string(), vec![(LayoutTag::Nchw, 0.0)]);
    node_costs.insert("conv".to_string(), vec![(LayoutTag::Nchw, 10.0), (LayoutTag::NchwC(2), 6.0)]);
    node_costs.insert("act".to_string(), vec![(LayoutTag::Nchw, 1.0), (LayoutTag::NchwC(2), 1.5)]);
    let tc = |_: usize, _: usize, a: &LayoutTag, b: &LayoutTag| Ok(if a == b { 0.0 } else { 3.0 });
    let (layouts, total) = graph_tune_dp(&g, &node_costs, tc).unwrap();
    // conv packed: 6 + 3 for converting w + 1.5; plain conv costs 10 + 1
    assert_eq!(total, 10.5);
    assert_eq!(layouts["conv"], LayoutTag::NchwC(2));
    assert_eq!(layouts["act"], LayoutTag::NchwC(2));

    node_costs.remove("act");
    assert_eq!(graph_tune_dp(&g, &node_costs, tc).unwrap_err(), TuneError::NoCandidates("act".into()));

    let doc: GraphDoc = serde_json::from_str(include_str!("../../../fixtures/ssd_like.json")).unwrap();
    let ssd = load_graph(&doc).unwrap();
    let all: BTreeMap<String, Vec<(LayoutTag, f64)>> =
        ssd.nodes().iter().map(|n| (n.id.clone(), vec![(LayoutTag::Nchw, 1.0)])).collect();
    assert!(matches!(graph_tune_dp(&ssd, &all, tc), Err(TuneError::UnsupportedShape(_))));
}
