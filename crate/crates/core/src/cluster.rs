//! Agglomerative hierarchical clustering with dendrogram export.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{ConceptSet, DissimilarityMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    /// UPGMA: mean of all cross-cluster distances.
    #[default]
    Average,
    Single,
    Complete,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            other => Err(Error::Parse(format!("unknown linkage `{other}`"))),
        }
    }
}

/// One agglomeration step. Node ids `0..n` are leaves; merge `m` creates node `n + m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct Dendrogram {
    concepts: Arc<ConceptSet>,
    merges: Vec<Merge>,
}

impl PartialEq for Dendrogram {
    fn eq(&self, other: &Self) -> bool {
        self.concepts.labels() == other.concepts.labels() && self.merges == other.merges
    }
}

impl Dendrogram {
    pub fn concepts(&self) -> &Arc<ConceptSet> {
        &self.concepts
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn n_leaves(&self) -> usize {
        self.concepts.len()
    }

    pub fn root(&self) -> usize {
        2 * self.n_leaves() - 2
    }

    fn height(&self, node: usize) -> f64 {
        if node < self.n_leaves() {
            0.0
        } else {
            self.merges[node - self.n_leaves()].height
        }
    }

    /// Leaves under `node`, in left-to-right order.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let n = self.n_leaves();
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v < n {
                out.push(v);
            } else {
                let m = &self.merges[v - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out
    }
}

/// Naive O(n³) agglomeration using Lance-Williams updates.
///
/// The merged cluster takes the lower of the two slots; ties between equal
/// distances go to the lexicographically smallest slot pair.
pub fn agglomerate(d: &DissimilarityMatrix, linkage: Linkage) -> Dendrogram {
    let n = d.len();
    let mut dist = d.values().clone();
    let mut node: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if node[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if node[j].is_none() {
                    continue;
                }
                if best.is_none_or(|(_, _, h)| dist[(i, j)] < h) {
                    best = Some((i, j, dist[(i, j)]));
                }
            }
        }
        let (i, j, h) = best.expect("at least two active clusters");
        let (si, sj) = (size[i], size[j]);
        for k in 0..n {
            if k == i || k == j || node[k].is_none() {
                continue;
            }
            let (dik, djk) = (dist[(i, k)], dist[(j, k)]);
            let v = match linkage {
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
                Linkage::Average => (si as f64 * dik + sj as f64 * djk) / (si + sj) as f64,
            };
            dist[(i, k)] = v;
            dist[(k, i)] = v;
        }
        merges.push(Merge {
            left: node[i].expect("active"),
            right: node[j].expect("active"),
            height: h,
            size: si + sj,
        });
        node[i] = Some(n + step);
        node[j] = None;
        size[i] = si + sj;
    }
    Dendrogram {
        concepts: Arc::clone(d.concepts()),
        merges,
    }
}

/// Flat clustering into exactly `k` groups by undoing the `k - 1` last merges.
///
/// Cluster ids are numbered by the order in which clusters first appear
/// when walking concepts in set order.
pub fn cut_clusters(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = dendrogram.n_leaves();
    if k == 0 || k > n {
        return Err(Error::OutOfRange(format!("k = {k} outside 1..={n}")));
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (m, merge) in dendrogram.merges.iter().take(n - k).enumerate() {
        let id = n + m;
        let (a, b) = (find(&mut parent, merge.left), find(&mut parent, merge.right));
        parent[a] = id;
        parent[b] = id;
    }
    let mut ids: Vec<Option<usize>> = vec![None; 2 * n - 1];
    let mut next = 0;
    Ok((0..n)
        .map(|leaf| {
            let root = find(&mut parent, leaf);
            *ids[root].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Newick,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "newick" => Ok(ExportFormat::Newick),
            other => Err(Error::Parse(format!("unknown dendrogram format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonNode {
    id: usize,
    height: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    children: Option<Vec<JsonNode>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    leaf: Option<String>,
}

fn json_node(t: &Dendrogram, node: usize) -> JsonNode {
    let n = t.n_leaves();
    if node < n {
        JsonNode {
            id: node,
            height: 0.0,
            children: None,
            leaf: Some(t.concepts.label(node).to_string()),
        }
    } else {
        let m = &t.merges[node - n];
        JsonNode {
            id: node,
            height: m.height,
            children: Some(vec![json_node(t, m.left), json_node(t, m.right)]),
            leaf: None,
        }
    }
}

fn newick_label(label: &str) -> String {
    if label.chars().any(|c| c.is_whitespace() || "()[]':;,".contains(c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

fn newick_node(t: &Dendrogram, node: usize, parent_height: f64, out: &mut String) {
    let n = t.n_leaves();
    if node < n {
        out.push_str(&newick_label(t.concepts.label(node)));
    } else {
        let m = &t.merges[node - n];
        out.push('(');
        newick_node(t, m.left, m.height, out);
        out.push(',');
        newick_node(t, m.right, m.height, out);
        out.push(')');
    }
    if node != t.root() {
        // node age is half the merge height, as in an ultrametric UPGMA tree
        let length = (parent_height - t.height(node)) / 2.0;
        write!(out, ":{length}").expect("writing to a String");
    }
}

pub fn export_dendrogram(dendrogram: &Dendrogram, format: ExportFormat) -> String {
    match format {
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&json_node(dendrogram, dendrogram.root()))
                .expect("dendrogram serializes");
            s.push('\n');
            s
        }
        ExportFormat::Newick => {
            let mut s = String::new();
            newick_node(dendrogram, dendrogram.root(), 0.0, &mut s);
            s.push_str(";\n");
            s
        }
    }
}

/// Parses the JSON export back into a dendrogram.
pub fn dendrogram_from_json(text: &str) -> Result<Dendrogram> {
    let root: JsonNode = serde_json::from_str(text)?;
    let mut leaves: Vec<(usize, String)> = Vec::new();
    let mut internal: Vec<(usize, Merge)> = Vec::new();
    fn walk(
        node: &JsonNode,
        leaves: &mut Vec<(usize, String)>,
        internal: &mut Vec<(usize, Merge)>,
    ) -> Result<usize> {
        match (&node.leaf, &node.children) {
            (Some(label), None) => {
                leaves.push((node.id, label.clone()));
                Ok(1)
            }
            (None, Some(children)) if children.len() == 2 => {
                let size = walk(&children[0], leaves, internal)? + walk(&children[1], leaves, internal)?;
                internal.push((
                    node.id,
                    Merge {
                        left: children[0].id,
                        right: children[1].id,
                        height: node.height,
                        size,
                    },
                ));
                Ok(size)
            }
            _ => Err(Error::Parse(format!(
                "node {} must be a leaf or have exactly two children",
                node.id
            ))),
        }
    }
    walk(&root, &mut leaves, &mut internal)?;
    leaves.sort_by_key(|(id, _)| *id);
    internal.sort_by_key(|(id, _)| *id);
    let n = leaves.len();
    if leaves.iter().enumerate().any(|(i, (id, _))| *id != i)
        || internal.iter().enumerate().any(|(m, (id, _))| *id != n + m)
    {
        return Err(Error::Parse("node ids are not the canonical 0..2n-1 numbering".into()));
    }
    let labels: Vec<String> = leaves.into_iter().map(|(_, l)| l).collect();
    let concepts = Arc::new(ConceptSet::new(labels, vec!["unknown".to_string(); n])?);
    Ok(Dendrogram {
        concepts,
        merges: internal.into_iter().map(|(_, m)| m).collect(),
    })
}
