//! Graph-level layout selection: choose one layout per node minimizing the
//! sum of node kernel costs plus layout-transform costs on every edge.
//! Exact for graphs whose undirected form is a forest.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::TuneError;
use crate::graph::Graph;
use crate::tensor::LayoutTag;

/// Candidate layouts with kernel costs per node, plus directed
/// producer-to-consumer edges between node indices.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutProblem {
    pub names: Vec<String>,
    pub candidates: Vec<Vec<(LayoutTag, f64)>>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutAssignment {
    /// Chosen layout per node index.
    pub layouts: Vec<LayoutTag>,
    pub total: f64,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Exact tree DP. `tc(producer, consumer, from, to)` prices converting the
/// producer's layout to the consumer's. Ties go to the earlier candidate.
pub fn tune_layouts<F>(p: &LayoutProblem, mut tc: F) -> Result<LayoutAssignment, TuneError>
where
    F: FnMut(usize, usize, &LayoutTag, &LayoutTag) -> Result<f64, TuneError>,
{
    let n = p.candidates.len();
    if p.names.len() != n {
        return Err(TuneError::InvalidArgument("names and candidates differ in length".into()));
    }
    if let Some(i) = (0..n).find(|&i| p.candidates[i].is_empty()) {
        return Err(TuneError::NoCandidates(p.names[i].clone()));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut adj: Vec<Vec<(usize, bool)>> = vec![Vec::new(); n];
    for &(a, b) in &p.edges {
        if a >= n || b >= n {
            return Err(TuneError::InvalidArgument(format!("edge ({a}, {b}) out of range")));
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return Err(TuneError::UnsupportedShape(format!(
                "edge {} -> {} closes an undirected cycle; only chains and trees are supported",
                p.names[a], p.names[b]
            )));
        }
        parent[ra] = rb;
        // `true` marks the neighbour as the consumer
        adj[a].push((b, true));
        adj[b].push((a, false));
    }

    // best[v][l]: cost of v's subtree with v in layout l; pick[v][l][j]: the
    // chosen layout of v's j-th child in that case
    let mut best: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut pick: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n];
    let mut children: Vec<Vec<(usize, bool)>> = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    let mut layouts = vec![LayoutTag::Nchw; n];
    let mut total = 0.0;

    for root in 0..n {
        if visited[root] {
            continue;
        }
        let mut order = Vec::new();
        let mut stack = vec![root];
        visited[root] = true;
        while let Some(v) = stack.pop() {
            order.push(v);
            for &(u, consumer) in &adj[v] {
                if !visited[u] {
                    visited[u] = true;
                    children[v].push((u, consumer));
                    stack.push(u);
                }
            }
        }
        for &v in order.iter().rev() {
            let cands = &p.candidates[v];
            best[v] = cands.iter().map(|c| c.1).collect();
            pick[v] = vec![Vec::with_capacity(children[v].len()); cands.len()];
            for &(c, c_consumes) in &children[v] {
                for (li, (lv, _)) in cands.iter().enumerate() {
                    let mut choice = (f64::INFINITY, 0usize);
                    for (lj, (lc, _)) in p.candidates[c].iter().enumerate() {
                        let edge = if c_consumes { tc(v, c, lv, lc)? } else { tc(c, v, lc, lv)? };
                        let cost = best[c][lj] + edge;
                        if cost < choice.0 {
                            choice = (cost, lj);
                        }
                    }
                    best[v][li] += choice.0;
                    pick[v][li].push(choice.1);
                }
            }
        }
        let mut root_pick = 0;
        for (li, &c) in best[root].iter().enumerate() {
            if c < best[root][root_pick] {
                root_pick = li;
            }
        }
        total += best[root][root_pick];
        let mut stack = vec![(root, root_pick)];
        while let Some((v, li)) = stack.pop() {
            layouts[v] = p.candidates[v][li].0;
            for (j, &(c, _)) in children[v].iter().enumerate() {
                stack.push((c, pick[v][li][j]));
            }
        }
    }
    Ok(LayoutAssignment { layouts, total })
}

/// Layout tuning over a graph. `node_costs` maps node ids to candidate
/// layouts with kernel costs; every node needs at least one.
pub fn graph_tune_dp<F>(
    g: &Graph,
    node_costs: &BTreeMap<String, Vec<(LayoutTag, f64)>>,
    tc: F,
) -> Result<(BTreeMap<String, LayoutTag>, f64), TuneError>
where
    F: FnMut(usize, usize, &LayoutTag, &LayoutTag) -> Result<f64, TuneError>,
{
    let names: Vec<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
    let candidates = names
        .iter()
        .map(|id| node_costs.get(id).cloned().ok_or_else(|| TuneError::NoCandidates(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let edges = g.edges().into_iter().map(|(p, c, _)| (p, c)).collect();
    let problem = LayoutProblem { names, candidates, edges };
    let a = tune_layouts(&problem, tc)?;
    Ok((problem.names.into_iter().zip(a.layouts).collect(), a.total))
}
