//! Semantic and prosody interaction graphs over a dialogue history.
//!
//! Both graphs share one topology. For a history of `J` utterances with word
//! counts `q₁…q_J`:
//!
//! * backbone node `i` holds utterance `i`'s utterance-level feature (text for
//!   the semantic graph, speech for the prosody graph);
//! * a terminal interaction node, zero-initialized, closes the backbone;
//! * each word of utterance `i` contributes a word-text and a word-speech node
//!   with a single out-edge to backbone position `i + 1` (the interaction node
//!   for `i = J`);
//! * backbone edges run `i → i + 1` and `J → interaction`.
//!
//! That gives `J + 1 + 2·Σqᵢ` nodes and `J + 2·Σqᵢ` edges.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::data::UtteranceRecord;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("history is empty; a graph needs at least one utterance")]
    EmptyHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Modality {
    Semantic,
    Prosody,
}

impl Modality {
    pub fn short_name(self) -> &'static str {
        match self {
            Modality::Semantic => "SIG",
            Modality::Prosody => "PIG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum NodeKind {
    WordText,
    WordSpeech,
    BackboneUtterance,
    InteractionNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EdgeKind {
    WordSemanticBranch,
    WordProsodyBranch,
    BackboneBranch,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 3] = [
        EdgeKind::BackboneBranch,
        EdgeKind::WordSemanticBranch,
        EdgeKind::WordProsodyBranch,
    ];

    /// Whether an edge of this kind may connect `src` to `dst`.
    pub fn allows(self, src: NodeKind, dst: NodeKind) -> bool {
        let dst_ok = matches!(dst, NodeKind::BackboneUtterance | NodeKind::InteractionNode);
        let src_ok = match self {
            EdgeKind::WordSemanticBranch => src == NodeKind::WordText,
            EdgeKind::WordProsodyBranch => src == NodeKind::WordSpeech,
            EdgeKind::BackboneBranch => src == NodeKind::BackboneUtterance,
        };
        src_ok && dst_ok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<'a> {
    pub id: usize,
    pub kind: NodeKind,
    /// Zero-based utterance position; the interaction node sits at `J`.
    pub utterance: usize,
    pub word: Option<usize>,
    /// Speaker of the utterance for backbone nodes.
    pub speaker: Option<usize>,
    pub feature: Cow<'a, [f64]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub kind: EdgeKind,
}

/// A typed DAG over one history. Node features borrow from the records.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph<'a> {
    pub modality: Modality,
    pub nodes: Vec<Node<'a>>,
    pub edges: Vec<Edge>,
    /// Backbone node ids in utterance order, ending with the interaction node.
    pub backbone_order: Vec<usize>,
    in_edges: Vec<Vec<usize>>,
    out_degree: Vec<usize>,
}

pub fn build_sig<'a>(history: &'a [UtteranceRecord]) -> Result<InteractionGraph<'a>, GraphError> {
    build(history, Modality::Semantic)
}

pub fn build_pig<'a>(history: &'a [UtteranceRecord]) -> Result<InteractionGraph<'a>, GraphError> {
    build(history, Modality::Prosody)
}

pub fn build<'a>(
    history: &'a [UtteranceRecord],
    modality: Modality,
) -> Result<InteractionGraph<'a>, GraphError> {
    let j = history.len();
    if j == 0 {
        return Err(GraphError::EmptyHistory);
    }
    let backbone_feat = |u: &'a UtteranceRecord| -> &'a [f64] {
        match modality {
            Modality::Semantic => u.utt_text_feat.as_slice(),
            Modality::Prosody => u.utt_speech_feat.as_slice(),
        }
    };
    let raw_dim = backbone_feat(&history[0]).len();
    let total_words: usize = history.iter().map(UtteranceRecord::word_count).sum();
    let mut nodes = Vec::with_capacity(j + 1 + 2 * total_words);
    let mut edges = Vec::with_capacity(j + 2 * total_words);

    for (i, u) in history.iter().enumerate() {
        nodes.push(Node {
            id: i,
            kind: NodeKind::BackboneUtterance,
            utterance: i,
            word: None,
            speaker: Some(u.speaker_id),
            feature: Cow::Borrowed(backbone_feat(u)),
        });
    }
    let interaction = j;
    nodes.push(Node {
        id: interaction,
        kind: NodeKind::InteractionNode,
        utterance: j,
        word: None,
        speaker: None,
        feature: Cow::Owned(vec![0.0; raw_dim]),
    });

    for (i, u) in history.iter().enumerate() {
        let next = i + 1; // backbone id i+1, or the interaction node when i+1 == J
        edges.push(Edge {
            source: i,
            target: next,
            kind: EdgeKind::BackboneBranch,
        });
        for (k, f) in u.word_text_feats.iter().enumerate() {
            let id = nodes.len();
            nodes.push(Node {
                id,
                kind: NodeKind::WordText,
                utterance: i,
                word: Some(k),
                speaker: None,
                feature: Cow::Borrowed(f.as_slice()),
            });
            edges.push(Edge {
                source: id,
                target: next,
                kind: EdgeKind::WordSemanticBranch,
            });
        }
        for (k, f) in u.word_speech_feats.iter().enumerate() {
            let id = nodes.len();
            nodes.push(Node {
                id,
                kind: NodeKind::WordSpeech,
                utterance: i,
                word: Some(k),
                speaker: None,
                feature: Cow::Borrowed(f.as_slice()),
            });
            edges.push(Edge {
                source: id,
                target: next,
                kind: EdgeKind::WordProsodyBranch,
            });
        }
    }

    let mut in_edges = vec![Vec::new(); nodes.len()];
    let mut out_degree = vec![0; nodes.len()];
    for (e_idx, e) in edges.iter().enumerate() {
        debug_assert!(e.kind.allows(nodes[e.source].kind, nodes[e.target].kind));
        in_edges[e.target].push(e_idx);
        out_degree[e.source] += 1;
    }

    Ok(InteractionGraph {
        modality,
        nodes,
        edges,
        backbone_order: (0..=j).collect(),
        in_edges,
        out_degree,
    })
}

impl<'a> InteractionGraph<'a> {
    /// History length `J`.
    pub fn history_len(&self) -> usize {
        self.backbone_order.len() - 1
    }

    pub fn interaction_node(&self) -> usize {
        *self.backbone_order.last().expect("backbone is never empty")
    }

    pub fn in_degree(&self, id: usize) -> usize {
        self.in_edges[id].len()
    }

    pub fn out_degree(&self, id: usize) -> usize {
        self.out_degree[id]
    }

    /// Incoming neighbors of `id` with the edge kind that connects them, in
    /// edge-insertion order.
    pub fn in_neighbors(&self, id: usize) -> impl Iterator<Item = (&Node<'a>, EdgeKind)> + '_ {
        self.in_edges[id].iter().map(move |&e| {
            let edge = &self.edges[e];
            (&self.nodes[edge.source], edge.kind)
        })
    }

    /// Nodes with no outgoing edges.
    pub fn sinks(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.out_degree[i] == 0).collect()
    }

    /// Kahn's algorithm; `None` if a cycle exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = (0..n).map(|i| self.in_degree(i)).collect();
        let mut outs = vec![Vec::new(); n];
        for e in &self.edges {
            outs[e.source].push(e.target);
        }
        let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for &t in &outs[v] {
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.push(t);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologyCounts {
    pub nodes: usize,
    pub edges: usize,
    pub per_node_kind: BTreeMap<NodeKind, usize>,
    pub per_edge_kind: BTreeMap<EdgeKind, usize>,
    /// in-degree → number of nodes with that in-degree
    pub in_degree_histogram: BTreeMap<usize, usize>,
}

/// Counts by traversing the node and edge lists.
pub fn topology_counts(graph: &InteractionGraph<'_>) -> TopologyCounts {
    let mut per_node_kind = BTreeMap::new();
    for n in &graph.nodes {
        *per_node_kind.entry(n.kind).or_insert(0) += 1;
    }
    let mut per_edge_kind = BTreeMap::new();
    let mut indeg = vec![0usize; graph.nodes.len()];
    for e in &graph.edges {
        *per_edge_kind.entry(e.kind).or_insert(0) += 1;
        indeg[e.target] += 1;
    }
    let mut in_degree_histogram = BTreeMap::new();
    for d in indeg {
        *in_degree_histogram.entry(d).or_insert(0) += 1;
    }
    TopologyCounts {
        nodes: graph.nodes.len(),
        edges: graph.edges.len(),
        per_node_kind,
        per_edge_kind,
        in_degree_histogram,
    }
}

fn node_label(n: &Node<'_>) -> String {
    match n.kind {
        NodeKind::BackboneUtterance => format!("F{} (spk {})", n.utterance + 1, n.speaker.unwrap_or(0)),
        NodeKind::InteractionNode => "I".to_string(),
        NodeKind::WordText => format!("Wt{},{}", n.utterance + 1, n.word.unwrap_or(0) + 1),
        NodeKind::WordSpeech => format!("Ws{},{}", n.utterance + 1, n.word.unwrap_or(0) + 1),
    }
}

/// Renders the graph in DOT. One edge statement per edge; node shapes and
/// edge styles encode the kinds.
pub fn export_dot(graph: &InteractionGraph<'_>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", graph.modality.short_name());
    out.push_str("  rankdir=LR;\n");
    for n in &graph.nodes {
        let shape = match n.kind {
            NodeKind::BackboneUtterance => "box",
            NodeKind::InteractionNode => "doublecircle",
            NodeKind::WordText => "ellipse",
            NodeKind::WordSpeech => "diamond",
        };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\", shape={}, kind=\"{:?}\"];",
            n.id,
            node_label(n),
            shape,
            n.kind
        );
    }
    for e in &graph.edges {
        let style = match e.kind {
            EdgeKind::BackboneBranch => "style=bold, color=black",
            EdgeKind::WordSemanticBranch => "style=dashed, color=blue",
            EdgeKind::WordProsodyBranch => "style=dotted, color=red",
        };
        let _ = writeln!(
            out,
            "  n{} -> n{} [{}, kind=\"{:?}\"];",
            e.source, e.target, style, e.kind
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureVector;

    pub(crate) fn history(qs: &[usize]) -> Vec<UtteranceRecord> {
        qs.iter()
            .enumerate()
            .map(|(i, &q)| UtteranceRecord {
                speaker_id: i % 2,
                words: (0..q).map(|k| format!("w{k}")).collect(),
                word_text_feats: (0..q).map(|k| FeatureVector(vec![k as f64, 1.0])).collect(),
                word_speech_feats: (0..q).map(|k| FeatureVector(vec![-(k as f64), 2.0])).collect(),
                utt_text_feat: FeatureVector(vec![i as f64, 3.0]),
                utt_speech_feat: FeatureVector(vec![i as f64, 4.0]),
                pitch_target: 0.0,
                energy_target: 0.0,
            })
            .collect()
    }

    #[test]
    fn sig_counts_for_2_3_1() {
        let h = history(&[2, 3, 1]);
        let g = build_sig(&h).unwrap();
        let c = topology_counts(&g);
        assert_eq!((c.nodes, c.edges), (16, 15));
        assert_eq!(c.per_node_kind[&NodeKind::WordText], 6);
        assert_eq!(c.per_node_kind[&NodeKind::WordSpeech], 6);
        assert_eq!(c.per_node_kind[&NodeKind::BackboneUtterance], 3);
        assert_eq!(c.per_node_kind[&NodeKind::InteractionNode], 1);
        assert_eq!(c.per_edge_kind[&EdgeKind::BackboneBranch], 3);
        // backbone 2 gets 1 + 2·2, backbone 3 gets 1 + 2·3, interaction 1 + 2·1
        assert_eq!(g.in_degree(1), 5);
        assert_eq!(g.in_degree(2), 7);
        assert_eq!(g.in_degree(3), 3);
        assert_eq!(g.in_degree(0), 0);
    }

    #[test]
    fn single_utterance_words_feed_interaction_node() {
        let h = history(&[2]);
        let g = build_sig(&h).unwrap();
        assert_eq!((g.nodes.len(), g.edges.len()), (6, 5));
        let i = g.interaction_node();
        assert!(g.edges.iter().all(|e| e.target == i));
        assert_eq!(g.in_degree(i), 5);
    }

    #[test]
    fn interaction_node_is_zero() {
        let h = history(&[1, 2]);
        for g in [build_sig(&h).unwrap(), build_pig(&h).unwrap()] {
            let n = &g.nodes[g.interaction_node()];
            assert_eq!(n.kind, NodeKind::InteractionNode);
            assert_eq!(&*n.feature, &[0.0, 0.0]);
        }
    }

    #[test]
    fn pig_differs_only_in_backbone_features() {
        let h = history(&[2, 3, 1]);
        let s = build_sig(&h).unwrap();
        let p = build_pig(&h).unwrap();
        assert_eq!(s.edges, p.edges);
        assert_eq!(p.modality, Modality::Prosody);
        for (a, b) in s.nodes.iter().zip(&p.nodes) {
            assert_eq!((a.id, a.kind, a.utterance, a.word), (b.id, b.kind, b.utterance, b.word));
            if a.kind == NodeKind::BackboneUtterance {
                assert_eq!(&*b.feature, h[a.utterance].utt_speech_feat.as_slice());
            } else {
                assert_eq!(a.feature, b.feature);
            }
        }
    }

    #[test]
    fn empty_history_is_an_error() {
        assert_eq!(build_sig(&[]).unwrap_err(), GraphError::EmptyHistory);
    }

    #[test]
    fn minimal_graph_counts_and_dot() {
        let h = history(&[1]);
        let g = build_pig(&h).unwrap();
        let c = topology_counts(&g);
        assert_eq!((c.nodes, c.edges), (4, 3));
        assert!(c.per_node_kind.values().all(|&v| v == 1));
        let dot = export_dot(&g);
        assert_eq!(dot.matches(" -> ").count(), 3);
        assert_eq!(dot, export_dot(&g));
        assert!(dot.starts_with("digraph PIG {"));
    }

    #[test]
    fn dag_with_unique_sink() {
        let h = history(&[3, 1, 2, 2]);
        let g = build_sig(&h).unwrap();
        let order = g.topological_order().unwrap();
        assert_eq!(g.sinks(), vec![g.interaction_node()]);
        let pos = |id: usize| order.iter().position(|&x| x == id).unwrap();
        for w in g.backbone_order.windows(2) {
            assert!(pos(w[0]) < pos(w[1]));
        }
    }
}
