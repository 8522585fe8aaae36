//! Temporal neighbor sampling around seed nodes.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroTemporalGraph, NodeRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub hops: usize,
    /// Most in-neighbors kept per expanded node.
    pub neighbor_cap: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            neighbor_cap: 128,
        }
    }
}

/// Edge between local node ids of a [`Subgraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalEdge {
    pub src: usize,
    pub dst: usize,
    pub etype: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    /// Local node `0` is the seed.
    pub nodes: Vec<NodeRef>,
    pub edges: Vec<LocalEdge>,
    pub seed_time: Option<i64>,
}

/// A node is admissible when it has no timestamp or one at or before the cutoff.
pub fn admissible(graph: &HeteroTemporalGraph, node: NodeRef, seed_time: Option<i64>) -> bool {
    match (seed_time, graph.time(node)) {
        (Some(cut), Some(t)) => t <= cut,
        _ => true,
    }
}

/// Breadth-limited expansion over in-neighbors. Each expanded node keeps at
/// most `neighbor_cap` admissible in-neighbors, drawn uniformly without
/// replacement; nodes are expanded once.
pub fn sample_subgraph<R: Rng + ?Sized>(
    graph: &HeteroTemporalGraph,
    seed: NodeRef,
    seed_time: Option<i64>,
    config: &SamplerConfig,
    rng: &mut R,
) -> Subgraph {
    let mut nodes = vec![seed];
    let mut local: HashMap<NodeRef, usize> = HashMap::from([(seed, 0)]);
    let mut edges = Vec::new();
    let mut frontier = vec![0usize];
    for _ in 0..config.hops {
        let mut next = Vec::new();
        for &dst in &frontier {
            let candidates: Vec<(NodeRef, usize)> = graph
                .in_neighbors(nodes[dst])
                .iter()
                .copied()
                .filter(|(src, _)| admissible(graph, *src, seed_time))
                .collect();
            let chosen: Vec<(NodeRef, usize)> = if candidates.len() > config.neighbor_cap {
                let mut picks = index::sample(rng, candidates.len(), config.neighbor_cap).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|i| candidates[i]).collect()
            } else {
                candidates
            };
            for (src, etype) in chosen {
                let id = *local.entry(src).or_insert_with(|| {
                    nodes.push(src);
                    next.push(nodes.len() - 1);
                    nodes.len() - 1
                });
                edges.push(LocalEdge { src: id, dst, etype });
            }
        }
        frontier = next;
    }
    Subgraph {
        nodes,
        edges,
        seed_time,
    }
}

/// Fails if any node of `sub` lies after its seed time.
pub fn check_temporal(graph: &HeteroTemporalGraph, sub: &Subgraph) -> Result<()> {
    for e in &sub.edges {
        for id in [e.src, e.dst] {
            let n = sub.nodes[id];
            if id != 0 && !admissible(graph, n, sub.seed_time) {
                return Err(Error::TemporalLeak(format!(
                    "node {n:?} at time {:?} is after seed time {:?}",
                    graph.time(n),
                    sub.seed_time
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::schema::{CellValue, ColumnSpec, Modality, RelationalDatabase, SchemaManifest, Table, TableSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One hub user with `fan_out` orders placed at times `1..=fan_out`.
    fn hub(fan_out: usize) -> HeteroTemporalGraph {
        let users = TableSpec {
            name: "users".into(),
            time_column: None,
            columns: vec![ColumnSpec::new("id", Modality::PrimaryKey)],
        };
        let orders = TableSpec {
            name: "orders".into(),
            time_column: Some("t".into()),
            columns: vec![
                ColumnSpec::new("id", Modality::PrimaryKey),
                ColumnSpec::foreign_key("user", "users"),
                ColumnSpec::new("t", Modality::Timestamp),
            ],
        };
        let u = Table::new(users.clone(), vec![vec![CellValue::Category("u".into())]]).unwrap();
        let o = Table::new(
            orders.clone(),
            (0..fan_out)
                .map(|i| {
                    vec![
                        CellValue::Category(format!("o{i}")),
                        CellValue::Category("u".into()),
                        CellValue::Timestamp(i as i64 + 1),
                    ]
                })
                .collect(),
        )
        .unwrap();
        let db = RelationalDatabase::new(SchemaManifest { tables: vec![users, orders] }, vec![u, o]).unwrap();
        build_graph(&db)
    }

    const SEED: NodeRef = NodeRef { ntype: 0, row: 0 };

    #[test]
    fn cutoff_before_everything_keeps_only_seed() {
        let g = hub(10);
        let s = sample_subgraph(&g, SEED, Some(0), &SamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.nodes, vec![SEED]);
        assert!(s.edges.is_empty());
    }

    #[test]
    fn cutoff_filters_later_neighbors() {
        let g = hub(10);
        let s = sample_subgraph(&g, SEED, Some(4), &SamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.nodes.len(), 5);
        check_temporal(&g, &s).unwrap();
    }

    #[test]
    fn under_cap_keeps_all_deterministically() {
        let g = hub(3);
        let cfg = SamplerConfig::default();
        let a = sample_subgraph(&g, SEED, None, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_subgraph(&g, SEED, None, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        // the seed, three orders
        assert_eq!(a.nodes.len(), 4);
        assert_eq!(a.edges.len(), 3 + 3);
    }

    #[test]
    fn over_cap_keeps_exactly_cap() {
        let g = hub(500);
        let cfg = SamplerConfig { hops: 1, neighbor_cap: 128 };
        let s = sample_subgraph(&g, SEED, None, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s.nodes.len(), 129);
        assert_eq!(s.edges.len(), 128);
    }

    #[test]
    fn over_cap_sampling_is_uniform() {
        let g = hub(500);
        let cfg = SamplerConfig { hops: 1, neighbor_cap: 128 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trials = 10_000;
        let mut counts = vec![0usize; 500];
        for _ in 0..trials {
            let s = sample_subgraph(&g, SEED, None, &cfg, &mut rng);
            for n in &s.nodes[1..] {
                counts[n.row] += 1;
            }
        }
        let p = 128.0 / 500.0;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        let within3 = counts.iter().filter(|&&c| (c as f64 - mean).abs() <= 3.0 * sigma).count();
        // 3σ holds for 99.7% of neighbors in expectation; allow binomial slack.
        assert!(within3 >= 495, "{within3} of 500 within 3σ");
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() <= 5.0 * sigma));
    }

    #[test]
    fn two_hops_reach_siblings() {
        let g = hub(4);
        let order = NodeRef::new(1, 0);
        let s = sample_subgraph(&g, order, None, &SamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(5));
        // order → user → all four orders (the seed is already present)
        assert_eq!(s.nodes.len(), 1 + 1 + 3);
        let one_hop = SamplerConfig { hops: 1, ..SamplerConfig::default() };
        let s1 = sample_subgraph(&g, order, None, &one_hop, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(s1.nodes.len(), 2);
    }

    proptest::proptest! {
        #[test]
        fn samples_are_admissible_unique_and_capped(
            fan_out in 1usize..60,
            cap in 1usize..20,
            cutoff in proptest::option::of(0i64..70),
            seed in 0u64..1000,
        ) {
            let g = hub(fan_out);
            let cfg = SamplerConfig { hops: 2, neighbor_cap: cap };
            let s = sample_subgraph(&g, SEED, cutoff, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            check_temporal(&g, &s).unwrap();
            let mut seen = s.nodes.clone();
            seen.sort_by_key(|n| (n.ntype, n.row));
            seen.dedup();
            proptest::prop_assert_eq!(seen.len(), s.nodes.len());
            let admissible = (0..fan_out).filter(|&i| cutoff.is_none_or(|c| (i as i64) < c)).count();
            proptest::prop_assert_eq!(s.nodes.len(), 1 + admissible.min(cap));
        }
    }

    #[test]
    fn temporal_check_catches_violations() {
        let g = hub(5);
        let mut s = sample_subgraph(&g, SEED, None, &SamplerConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        check_temporal(&g, &s).unwrap();
        s.seed_time = Some(2);
        assert!(matches!(check_temporal(&g, &s), Err(Error::TemporalLeak(_))));
    }
}
