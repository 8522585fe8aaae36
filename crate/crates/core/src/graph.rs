//! Heterogeneous temporal graph built from foreign-key relations.
//!
//! One node per row, node types are tables. Each foreign-key column
//! `t.c → u` yields an edge type `"t.c→u"` from the referencing row to the
//! referenced row plus a mirrored type `"t.c→u~rev"`.

use serde::Serialize;

use crate::schema::{Modality, RelationalDatabase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeRef {
    pub ntype: usize,
    pub row: usize,
}

impl NodeRef {
    pub fn new(ntype: usize, row: usize) -> Self {
        Self { ntype, row }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub src: NodeRef,
    pub dst: NodeRef,
    pub etype: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EdgeType {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    pub reverse: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DanglingReport {
    pub table: String,
    pub column: String,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct HeteroTemporalGraph {
    pub node_types: Vec<String>,
    pub num_nodes: Vec<usize>,
    pub node_time: Vec<Vec<Option<i64>>>,
    pub edge_types: Vec<EdgeType>,
    pub edges: Vec<Edge>,
    pub dangling: Vec<DanglingReport>,
    in_adj: Vec<Vec<Vec<(NodeRef, usize)>>>,
}

impl HeteroTemporalGraph {
    pub fn total_nodes(&self) -> usize {
        self.num_nodes.iter().sum()
    }

    pub fn time(&self, n: NodeRef) -> Option<i64> {
        self.node_time[n.ntype][n.row]
    }

    /// In-neighbors of `n` as `(source, edge type)`, in edge-list order.
    pub fn in_neighbors(&self, n: NodeRef) -> &[(NodeRef, usize)] {
        &self.in_adj[n.ntype][n.row]
    }

    pub fn contains(&self, n: NodeRef) -> bool {
        n.ntype < self.num_nodes.len() && n.row < self.num_nodes[n.ntype]
    }

    pub fn edge_count_by_type(&self) -> Vec<(String, usize)> {
        let mut counts = vec![0usize; self.edge_types.len()];
        for e in &self.edges {
            counts[e.etype] += 1;
        }
        self.edge_types.iter().map(|t| t.name.clone()).zip(counts).collect()
    }

    pub fn dangling_total(&self) -> usize {
        self.dangling.iter().map(|d| d.count).sum()
    }
}

pub fn build_graph(db: &RelationalDatabase) -> HeteroTemporalGraph {
    let node_types: Vec<String> = db.tables.iter().map(|t| t.name().to_string()).collect();
    let num_nodes: Vec<usize> = db.tables.iter().map(|t| t.len()).collect();
    let node_time: Vec<Vec<Option<i64>>> = db
        .tables
        .iter()
        .map(|t| (0..t.len()).map(|r| t.row_time(r)).collect())
        .collect();

    let mut edge_types = Vec::new();
    let mut edges = Vec::new();
    let mut dangling = Vec::new();
    for (ti, table) in db.tables.iter().enumerate() {
        for (ci, col) in table.spec.columns.iter().enumerate() {
            if col.modality != Modality::ForeignKey {
                continue;
            }
            let target_name = col.fk_target.as_deref().expect("validated manifest");
            let target_idx = db.table_index(target_name).expect("validated manifest");
            let target = &db.tables[target_idx];
            let name = format!("{}.{}→{}", table.name(), col.name, target_name);
            let fwd = edge_types.len();
            edge_types.push(EdgeType {
                name: name.clone(),
                src_type: ti,
                dst_type: target_idx,
                reverse: false,
            });
            let rev = edge_types.len();
            edge_types.push(EdgeType {
                name: format!("{name}~rev"),
                src_type: target_idx,
                dst_type: ti,
                reverse: true,
            });

            let mut pairs = Vec::new();
            let mut missing_targets = 0;
            for (ri, row) in table.rows.iter().enumerate() {
                let Some(key) = row[ci].as_key() else { continue };
                match target.row_by_key(key) {
                    Some(tr) => pairs.push((NodeRef::new(ti, ri), NodeRef::new(target_idx, tr))),
                    None => missing_targets += 1,
                }
            }
            edges.extend(pairs.iter().map(|&(s, d)| Edge { src: s, dst: d, etype: fwd }));
            edges.extend(pairs.iter().map(|&(s, d)| Edge { src: d, dst: s, etype: rev }));
            dangling.push(DanglingReport {
                table: table.name().to_string(),
                column: col.name.clone(),
                count: missing_targets,
            });
        }
    }

    let mut in_adj: Vec<Vec<Vec<(NodeRef, usize)>>> =
        num_nodes.iter().map(|&n| vec![Vec::new(); n]).collect();
    for e in &edges {
        in_adj[e.dst.ntype][e.dst.row].push((e.src, e.etype));
    }

    HeteroTemporalGraph {
        node_types,
        num_nodes,
        node_time,
        edge_types,
        edges,
        dangling,
        in_adj,
    }
}
