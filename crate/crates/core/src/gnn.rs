//! Typed mean-aggregation message passing over sampled subgraphs.
//!
//! Layer `l` maps `H` to `relu(H·W_self + b + Σ_t mean_t(H)·W_t) + H`, where
//! `mean_t` averages each node's in-neighbors along edge type `t`. A linear
//! head reads out the seed rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::NodeRef;
use crate::params::ParameterStore;
use crate::sampler::Subgraph;
use crate::tensor::DenseArray;

pub const HEAD_W: &str = "gnn.head.w";
pub const HEAD_B: &str = "gnn.head.b";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub layers: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self { layers: 2 }
    }
}

pub fn self_weight(layer: usize) -> String {
    format!("gnn.{layer}.self.w")
}

pub fn self_bias(layer: usize) -> String {
    format!("gnn.{layer}.self.b")
}

pub fn edge_weight(layer: usize, etype: usize) -> String {
    format!("gnn.{layer}.edge.{etype}")
}

impl GnnConfig {
    pub fn parameter_count(&self, channels: usize, edge_types: usize) -> usize {
        self.layers * (channels * channels * (1 + edge_types) + channels) + channels + 1
    }

    /// Registers the message-passing weights and a one-output head.
    pub fn register<R: Rng + ?Sized>(
        &self,
        store: &mut ParameterStore,
        channels: usize,
        edge_types: usize,
        rng: &mut R,
    ) -> Result<()> {
        if channels == 0 {
            return Err(Error::Config("GNN channels must be positive".into()));
        }
        for l in 0..self.layers {
            store.insert(self_weight(l), DenseArray::glorot(channels, channels, rng), true)?;
            store.insert(self_bias(l), DenseArray::zeros(&[1, channels]), true)?;
            for t in 0..edge_types {
                store.insert(edge_weight(l, t), DenseArray::glorot(channels, channels, rng), true)?;
            }
        }
        store.insert(HEAD_W, DenseArray::glorot(channels, 1, rng), true)?;
        store.insert(HEAD_B, DenseArray::zeros(&[1, 1]), true)?;
        Ok(())
    }
}

/// Disjoint union of sampled subgraphs with per-type in-neighbor lists.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGraph {
    pub nodes: Vec<NodeRef>,
    /// Local id of each subgraph's seed.
    pub seeds: Vec<usize>,
    /// `in_lists[t][v]` holds the local in-neighbors of `v` along type `t`.
    pub in_lists: Vec<Vec<Vec<usize>>>,
}

impl BatchGraph {
    pub fn from_subgraphs(subgraphs: &[Subgraph], edge_types: usize) -> Self {
        let total: usize = subgraphs.iter().map(|s| s.nodes.len()).sum();
        let mut nodes = Vec::with_capacity(total);
        let mut seeds = Vec::with_capacity(subgraphs.len());
        let mut in_lists = vec![vec![Vec::new(); total]; edge_types];
        for s in subgraphs {
            let offset = nodes.len();
            seeds.push(offset);
            nodes.extend_from_slice(&s.nodes);
            for e in &s.edges {
                in_lists[e.etype][offset + e.dst].push(offset + e.src);
            }
        }
        Self { nodes, seeds, in_lists }
    }
}

/// Runs every layer on `h0`, an `nodes × channels` matrix.
pub fn propagate(
    tape: &mut Tape,
    store: &ParameterStore,
    config: &GnnConfig,
    h0: Var,
    batch: &BatchGraph,
) -> Result<Var> {
    let rows = tape.value(h0).rows();
    if rows != batch.nodes.len() {
        return Err(Error::dim("gnn", &[rows], &[batch.nodes.len()]));
    }
    let mut h = h0;
    for l in 0..config.layers {
        let mut acc = tape.linear(store, h, &self_weight(l), Some(&self_bias(l)))?;
        for (t, lists) in batch.in_lists.iter().enumerate() {
            if lists.iter().all(Vec::is_empty) {
                continue;
            }
            let mean = tape.segment_mean(h, lists.clone())?;
            let msg = tape.linear(store, mean, &edge_weight(l, t), None)?;
            acc = tape.add(acc, msg)?;
        }
        let act = tape.relu(acc);
        h = tape.add(act, h)?;
    }
    Ok(h)
}

/// One output per seed: `h[seeds] · w + b`.
pub fn readout(tape: &mut Tape, store: &ParameterStore, h: Var, seeds: &[usize]) -> Result<Var> {
    let picked = tape.gather_rows(h, seeds)?;
    tape.linear(store, picked, HEAD_W, Some(HEAD_B))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::sampler::LocalEdge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matvec(x: &[f64], w: &DenseArray) -> Vec<f64> {
        let c = w.cols();
        (0..c).map(|j| (0..x.len()).map(|i| x[i] * w.get(i, j)).sum()).collect()
    }

    fn path() -> Subgraph {
        // 0 ← 1 ← 2 along type 0, plus 2 → 0 along type 1
        Subgraph {
            nodes: (0..3).map(|r| NodeRef::new(0, r)).collect(),
            edges: vec![
                LocalEdge { src: 1, dst: 0, etype: 0 },
                LocalEdge { src: 2, dst: 1, etype: 0 },
                LocalEdge { src: 2, dst: 0, etype: 1 },
            ],
            seed_time: None,
        }
    }

    fn setup(c: usize, layers: usize) -> (ParameterStore, GnnConfig, DenseArray) {
        let cfg = GnnConfig { layers };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParameterStore::new();
        cfg.register(&mut store, c, 2, &mut rng).unwrap();
        for l in 0..layers {
            store.set_value(&self_bias(l), DenseArray::randn(&[1, c], 0.3, &mut rng)).unwrap();
        }
        let h0 = DenseArray::randn(&[3, c], 1.0, &mut rng);
        (store, cfg, h0)
    }

    #[test]
    fn three_node_path_matches_oracle() {
        let c = 4;
        let (store, cfg, h0) = setup(c, 2);
        let batch = BatchGraph::from_subgraphs(&[path()], 2);
        let mut tape = Tape::no_grad();
        let h0v = tape.constant(h0.clone());
        let h = propagate(&mut tape, &store, &cfg, h0v, &batch).unwrap();
        let out = readout(&mut tape, &store, h, &batch.seeds).unwrap();

        let mut hs: Vec<Vec<f64>> = (0..3).map(|r| h0.row_slice(r).to_vec()).collect();
        let incoming = [[vec![1usize], vec![2], vec![]], [vec![2], vec![], vec![]]];
        for l in 0..2 {
            let ws = store.value(&self_weight(l)).unwrap();
            let b = store.value(&self_bias(l)).unwrap();
            let mut next = Vec::new();
            for v in 0..3 {
                let mut z: Vec<f64> = matvec(&hs[v], ws).iter().zip(b.data()).map(|(a, b)| a + b).collect();
                for (t, lists) in incoming.iter().enumerate() {
                    if lists[v].is_empty() {
                        continue;
                    }
                    let mut m = vec![0.0; c];
                    for &u in &lists[v] {
                        for j in 0..c {
                            m[j] += hs[u][j] / lists[v].len() as f64;
                        }
                    }
                    for (zj, mj) in z.iter_mut().zip(matvec(&m, store.value(&edge_weight(l, t)).unwrap())) {
                        *zj += mj;
                    }
                }
                next.push(z.iter().zip(&hs[v]).map(|(z, h)| z.max(0.0) + h).collect::<Vec<f64>>());
            }
            hs = next;
        }
        let expect = matvec(&hs[0], store.value(HEAD_W).unwrap())[0] + store.value(HEAD_B).unwrap().data()[0];
        assert!((tape.value(out).data()[0] - expect).abs() <= 1e-12);
    }

    #[test]
    fn disjoint_union_keeps_subgraphs_apart() {
        let c = 3;
        let (store, cfg, h0) = setup(c, 2);
        let single = BatchGraph::from_subgraphs(&[path()], 2);
        let double = BatchGraph::from_subgraphs(&[path(), path()], 2);
        assert_eq!(double.seeds, vec![0, 3]);
        let mut tape = Tape::no_grad();
        let a = tape.constant(h0.clone());
        let ha = propagate(&mut tape, &store, &cfg, a, &single).unwrap();
        let oa = readout(&mut tape, &store, ha, &single.seeds).unwrap();
        let stacked = DenseArray::matrix(6, c, [h0.data(), h0.data()].concat()).unwrap();
        let b = tape.constant(stacked);
        let hb = propagate(&mut tape, &store, &cfg, b, &double).unwrap();
        let ob = readout(&mut tape, &store, hb, &double.seeds).unwrap();
        let (va, vb) = (tape.value(oa).data()[0], tape.value(ob).data().to_vec());
        assert_eq!(vb, vec![va, va]);
    }

    #[test]
    fn row_count_mismatch_is_error() {
        let (store, cfg, _) = setup(2, 1);
        let batch = BatchGraph::from_subgraphs(&[path()], 2);
        let mut tape = Tape::no_grad();
        let h = tape.constant(DenseArray::zeros(&[2, 2]));
        assert!(matches!(propagate(&mut tape, &store, &cfg, h, &batch), Err(Error::Dimension { .. })));
    }

    #[test]
    fn parameter_count_closed_form() {
        let (store, cfg, _) = setup(5, 2);
        assert_eq!(store.total_count(), cfg.parameter_count(5, 2));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut store, cfg, h0) = setup(3, 2);
        let batch = BatchGraph::from_subgraphs(&[path(), path()], 2);
        let h0 = DenseArray::matrix(6, 3, [h0.data(), h0.map(|x| -x).data()].concat()).unwrap();
        let err = grad_check(
            |s, tape| {
                let x = tape.constant(h0.clone());
                let h = propagate(tape, s, &cfg, x, &batch)?;
                let out = readout(tape, s, h, &batch.seeds)?;
                tape.bce_with_logits(out, &[1.0, 0.0])
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }
}
