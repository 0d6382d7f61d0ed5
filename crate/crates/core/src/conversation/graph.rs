use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Event;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Arcs point from a post to its replies.
    TopDown,
    /// Arcs point from a reply to the post it answers.
    BottomUp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StructureVariant {
    /// Parent-child and sibling edges, both ways.
    #[default]
    UndirectedFull,
    /// Parent-child edges only, both ways.
    UndirectedNoSibling,
    DirectedTree(Direction),
    /// Directed parent-child arcs plus symmetric sibling edges.
    DirectedTreeWithSibling(Direction),
}

impl StructureVariant {
    pub fn is_undirected(self) -> bool {
        matches!(
            self,
            StructureVariant::UndirectedFull | StructureVariant::UndirectedNoSibling
        )
    }

    pub fn all() -> [StructureVariant; 6] {
        use Direction::*;
        use StructureVariant::*;
        [
            UndirectedFull,
            UndirectedNoSibling,
            DirectedTree(BottomUp),
            DirectedTree(TopDown),
            DirectedTreeWithSibling(BottomUp),
            DirectedTreeWithSibling(TopDown),
        ]
    }
}

impl fmt::Display for StructureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Direction::*;
        f.write_str(match self {
            StructureVariant::UndirectedFull => "undirected",
            StructureVariant::UndirectedNoSibling => "undirected-nosib",
            StructureVariant::DirectedTree(BottomUp) => "directed",
            StructureVariant::DirectedTree(TopDown) => "directed-topdown",
            StructureVariant::DirectedTreeWithSibling(BottomUp) => "directed-sib",
            StructureVariant::DirectedTreeWithSibling(TopDown) => "directed-sib-topdown",
        })
    }
}

impl FromStr for StructureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StructureVariant::all()
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "structure",
                name: s.to_string(),
            })
    }
}

impl TryFrom<String> for StructureVariant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StructureVariant> for String {
    fn from(v: StructureVariant) -> String {
        v.to_string()
    }
}

/// Adjacency over an event's posts. Node 0 is the claim; the rest follow the
/// event's chronological response order. Self-edges are never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionGraph {
    node_order: Vec<String>,
    adjacency: Vec<bool>,
    variant: StructureVariant,
}

impl InteractionGraph {
    pub fn len(&self) -> usize {
        self.node_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_order.is_empty()
    }

    pub fn node_order(&self) -> &[String] {
        &self.node_order
    }

    pub fn variant(&self) -> StructureVariant {
        self.variant
    }

    /// Whether the arc `i → j` exists (j is an out-neighbor of i).
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.len() + j]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..n).all(|j| self.has_edge(i, j) == self.has_edge(j, i)))
    }

    /// Out-neighbors plus the node itself, ascending.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).filter(|&j| j == i || self.has_edge(i, j)).collect())
            .collect()
    }

    /// Row-major n×n membership mask of the neighborhoods.
    pub fn neighborhood_mask(&self) -> Vec<bool> {
        let n = self.len();
        let mut mask = self.adjacency.clone();
        for i in 0..n {
            mask[i * n + i] = true;
        }
        mask
    }
}

pub fn build_graph(event: &Event, variant: StructureVariant) -> InteractionGraph {
    let n = event.len();
    let parents = event.parent_indices();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(c);
        }
    }

    let mut adjacency = vec![false; n * n];
    let mut set = |i: usize, j: usize| adjacency[i * n + j] = true;
    let siblings = matches!(
        variant,
        StructureVariant::UndirectedFull | StructureVariant::DirectedTreeWithSibling(_)
    );
    for (p, kids) in children.iter().enumerate() {
        for &c in kids {
            match variant {
                StructureVariant::UndirectedFull | StructureVariant::UndirectedNoSibling => {
                    set(p, c);
                    set(c, p);
                }
                StructureVariant::DirectedTree(Direction::TopDown)
                | StructureVariant::DirectedTreeWithSibling(Direction::TopDown) => set(p, c),
                StructureVariant::DirectedTree(Direction::BottomUp)
                | StructureVariant::DirectedTreeWithSibling(Direction::BottomUp) => set(c, p),
            }
        }
        if siblings {
            for (a, &x) in kids.iter().enumerate() {
                for &y in &kids[a + 1..] {
                    set(x, y);
                    set(y, x);
                }
            }
        }
    }

    InteractionGraph {
        node_order: event.posts().map(|p| p.post_id.clone()).collect(),
        adjacency,
        variant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::{Label, Post};

    fn four_node() -> Event {
        Event::new(
            "e",
            Label::NonRumor,
            vec![
                Post::new("c", None, 0, ""),
                Post::new("x1", Some("c"), 1, ""),
                Post::new("x2", Some("c"), 2, ""),
                Post::new("x11", Some("x1"), 3, ""),
            ],
        )
        .unwrap()
    }

    fn undirected_edges(g: &InteractionGraph) -> Vec<(String, String)> {
        let ids = g.node_order();
        let mut out = Vec::new();
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                if g.has_edge(i, j) {
                    out.push((ids[i].clone(), ids[j].clone()));
                }
            }
        }
        out
    }

    #[test]
    fn full_graph_on_four_nodes() {
        let g = build_graph(&four_node(), StructureVariant::UndirectedFull);
        let s = |a: &str, b: &str| (a.to_string(), b.to_string());
        assert_eq!(
            undirected_edges(&g),
            vec![s("c", "x1"), s("c", "x2"), s("x1", "x2"), s("x1", "x11")]
        );
        assert!(g.is_symmetric());
        let g = build_graph(&four_node(), StructureVariant::UndirectedNoSibling);
        assert_eq!(
            undirected_edges(&g),
            vec![s("c", "x1"), s("c", "x2"), s("x1", "x11")]
        );
    }

    #[test]
    fn single_node_has_no_edges() {
        let e = Event::new("e", Label::Rumor, vec![Post::new("c", None, 0, "")]).unwrap();
        for v in StructureVariant::all() {
            let g = build_graph(&e, v);
            assert_eq!(g.edge_count(), 0);
            assert_eq!(g.neighborhoods(), vec![vec![0]]);
        }
    }

    #[test]
    fn neighborhoods_include_self() {
        let g = build_graph(&four_node(), StructureVariant::UndirectedFull);
        // x1 is node 1: neighbors c, x2, x11 plus itself
        assert_eq!(g.neighborhoods()[1], vec![0, 1, 2, 3]);
        let g = build_graph(&four_node(), StructureVariant::DirectedTree(Direction::BottomUp));
        // leaf x11 (node 3) points at its parent x1
        assert_eq!(g.neighborhoods()[3], vec![1, 3]);
        assert_eq!(g.neighborhoods()[0], vec![0]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in StructureVariant::all() {
            assert_eq!(v.to_string().parse::<StructureVariant>().unwrap(), v);
        }
        assert!("tree".parse::<StructureVariant>().is_err());
    }
}
