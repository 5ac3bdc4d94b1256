//! Typed reasoning graph: the shared state that the controller scores and
//! the engine expands.
//!
//! The graph is a directed graph of typed nodes and typed weighted edges.
//! Model output is ingested through [`parse_graph`], which is deliberately
//! tolerant (code fences, surrounding prose, duplicate ids, dangling
//! edges), and repaired by the three post-initialization fixes:
//! [`ReasoningGraph::clamp_initial_confidence`],
//! [`ReasoningGraph::ensure_goal_node`] and
//! [`ReasoningGraph::enforce_connectivity`].
//!
//! Nodes and edges keep insertion order so every downstream consumer
//! (controller, trace, serialization) is deterministic.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a node, e.g. `node_001`. Ordered lexicographically; ids
/// emitted by the engine are zero-padded so lexical order matches numeric
/// order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Node type taxonomy. Models occasionally drift outside the four prompted
/// types (e.g. `calculation`); such tags are preserved verbatim in `Other`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeType {
    Fact,
    Subgoal,
    Constraint,
    Conclusion,
    Other(String),
}

impl NodeType {
    pub fn from_tag(tag: &str) -> Self {
        match tag.trim().to_ascii_lowercase().as_str() {
            "fact" => NodeType::Fact,
            "subgoal" => NodeType::Subgoal,
            "constraint" => NodeType::Constraint,
            "conclusion" => NodeType::Conclusion,
            _ => NodeType::Other(tag.trim().to_string()),
        }
    }

    pub fn as_tag(&self) -> &str {
        match self {
            NodeType::Fact => "fact",
            NodeType::Subgoal => "subgoal",
            NodeType::Constraint => "constraint",
            NodeType::Conclusion => "conclusion",
            NodeType::Other(tag) => tag,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_tag())
    }
}

impl Serialize for NodeType {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(self.as_tag())
    }
}

impl<'de> Deserialize<'de> for NodeType {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(de)?;
        Ok(NodeType::from_tag(&tag))
    }
}

/// Resolution status of a node. New nodes start unresolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    #[default]
    Unresolved,
    Resolved,
    Contradicted,
}

/// A typed reasoning unit with model-reported confidence in `[0, 1]`.
/// `value` holds the resolved result (e.g. an intermediate number) and is
/// only present once the node is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub content: String,
    pub confidence: f64,
    #[serde(default)]
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl Node {
    pub fn new(
        id: impl Into<String>,
        node_type: NodeType,
        content: impl Into<String>,
        confidence: f64,
    ) -> Self {
        Node {
            id: NodeId::new(id),
            node_type,
            content: content.into(),
            confidence: clamp_unit(confidence),
            status: NodeStatus::Unresolved,
            value: None,
        }
    }
}

/// Edge type taxonomy; unknown tags preserved verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EdgeType {
    DependsOn,
    Supports,
    Derives,
    Contradicts,
    Other(String),
}

impl EdgeType {
    pub fn from_tag(tag: &str) -> Self {
        match tag.trim().to_ascii_lowercase().as_str() {
            "depends_on" => EdgeType::DependsOn,
            "supports" => EdgeType::Supports,
            "derives" => EdgeType::Derives,
            "contradicts" => EdgeType::Contradicts,
            _ => EdgeType::Other(tag.trim().to_string()),
        }
    }

    pub fn as_tag(&self) -> &str {
        match self {
            EdgeType::DependsOn => "depends_on",
            EdgeType::Supports => "supports",
            EdgeType::Derives => "derives",
            EdgeType::Contradicts => "contradicts",
            EdgeType::Other(tag) => tag,
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_tag())
    }
}

impl Serialize for EdgeType {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(self.as_tag())
    }
}

impl<'de> Deserialize<'de> for EdgeType {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(de)?;
        Ok(EdgeType::from_tag(&tag))
    }
}

/// Directed typed edge. `source -> target` points in the direction of
/// information flow: a `depends_on` edge runs from the dependency to the
/// node that needs it, so conclusions sit downstream of facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    #[serde(rename = "type")]
    pub edge_type: EdgeType,
    pub weight: f64,
}

impl Edge {
    pub fn new(
        source: impl Into<String>,
        target: impl Into<String>,
        edge_type: EdgeType,
        weight: f64,
    ) -> Self {
        Edge {
            source: NodeId::new(source),
            target: NodeId::new(target),
            edge_type,
            weight: clamp_unit(weight),
        }
    }
}

/// Errors raised by graph operations.
#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("no JSON object with a \"nodes\" array at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("graph has no conclusion node")]
    NoConclusion,
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
}

/// Result of an expansion call: a confidence update for the target plus a
/// graph delta, applied through [`ReasoningGraph::apply_expansion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub target: NodeId,
    pub updated_confidence: f64,
    #[serde(default)]
    pub new_nodes: Vec<Node>,
    #[serde(default)]
    pub new_edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl ExpansionResult {
    /// A no-op update: confidence unchanged, nothing added. Used when an
    /// expansion response cannot be parsed so the run can continue.
    pub fn noop(target: NodeId, current_confidence: f64) -> Self {
        ExpansionResult {
            target,
            updated_confidence: current_confidence,
            new_nodes: Vec::new(),
            new_edges: Vec::new(),
            value: None,
        }
    }
}

/// Directed reasoning graph with insertion-ordered nodes and edges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.5
    } else {
        x.clamp(0.0, 1.0)
    }
}

impl ReasoningGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.node(id).is_some()
    }

    fn node_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| &n.id == id)
    }

    /// Appends a node; fails on a duplicate id.
    pub fn add_node(&mut self, node: Node) -> Result<(), GraphError> {
        if self.contains(&node.id) {
            return Err(GraphError::DuplicateNode(node.id));
        }
        self.nodes.push(node);
        Ok(())
    }

    /// Appends an edge after checking both endpoints exist. Self-loops are
    /// dropped. Weight is clamped to `[0, 1]`.
    pub fn add_edge(&mut self, edge: Edge) -> Result<(), GraphError> {
        if edge.source == edge.target {
            return Ok(());
        }
        if !self.contains(&edge.source) {
            return Err(GraphError::UnknownNode(edge.source));
        }
        if !self.contains(&edge.target) {
            return Err(GraphError::UnknownNode(edge.target));
        }
        self.edges.push(Edge {
            weight: clamp_unit(edge.weight),
            ..edge
        });
        Ok(())
    }

    /// Successor ids of `v` over outgoing edges of any type, deduplicated,
    /// in first-seen order.
    pub fn successors(&self, v: &NodeId) -> Vec<&NodeId> {
        let mut seen = HashSet::new();
        self.edges
            .iter()
            .filter(|e| &e.source == v)
            .filter(|e| seen.insert(&e.target))
            .map(|e| &e.target)
            .collect()
    }

    /// Predecessor ids of `v` over incoming edges of any type, deduplicated.
    pub fn predecessors(&self, v: &NodeId) -> Vec<&NodeId> {
        let mut seen = HashSet::new();
        self.edges
            .iter()
            .filter(|e| &e.target == v)
            .filter(|e| seen.insert(&e.source))
            .map(|e| &e.source)
            .collect()
    }

    pub fn out_degree(&self, v: &NodeId) -> usize {
        self.edges.iter().filter(|e| &e.source == v).count()
    }

    pub fn in_degree(&self, v: &NodeId) -> usize {
        self.edges.iter().filter(|e| &e.target == v).count()
    }

    /// Nodes of type `conclusion`, in insertion order.
    pub fn conclusions(&self) -> impl Iterator<Item = &Node> {
        self.nodes
            .iter()
            .filter(|n| n.node_type == NodeType::Conclusion)
    }

    /// The conclusion node with maximal confidence; ties broken by
    /// ascending id.
    pub fn best_conclusion(&self) -> Option<&Node> {
        let mut best: Option<&Node> = None;
        for n in self.conclusions() {
            best = match best {
                None => Some(n),
                Some(b) if n.confidence > b.confidence => Some(n),
                Some(b) if n.confidence == b.confidence && n.id < b.id => Some(n),
                Some(b) => Some(b),
            };
        }
        best
    }

    /// Post-initialization fix 1: cap every confidence at 0.5 so freshly
    /// initialized graphs cannot converge before any expansion happens.
    /// Idempotent.
    pub fn clamp_initial_confidence(&mut self) {
        for n in &mut self.nodes {
            if n.confidence > 0.5 {
                n.confidence = 0.5;
            }
        }
    }

    /// Post-initialization fix 2: guarantee at least one conclusion node.
    ///
    /// If one already exists the graph is unchanged. Otherwise a synthetic
    /// conclusion (confidence 0, unresolved) is appended with the given
    /// goal phrasing, and every sink node gains a `depends_on` edge into
    /// it. Returns whether a node was added.
    pub fn ensure_goal_node(&mut self, goal_content: &str) -> bool {
        if self.conclusions().next().is_some() {
            return false;
        }
        let goal_id = self.next_free_id();
        let sinks: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| self.out_degree(&n.id) == 0)
            .map(|n| n.id.clone())
            .collect();
        let goal = Node {
            id: goal_id.clone(),
            node_type: NodeType::Conclusion,
            content: goal_content.to_string(),
            confidence: 0.0,
            status: NodeStatus::Unresolved,
            value: None,
        };
        self.nodes.push(goal);
        for sink in sinks {
            self.edges.push(Edge {
                source: sink,
                target: goal_id.clone(),
                edge_type: EdgeType::DependsOn,
                weight: 0.5,
            });
        }
        true
    }

    /// Post-initialization fix 3: connect stray components.
    ///
    /// Treating edges as undirected, every component other than the one
    /// holding the best conclusion gets one bridge edge (`depends_on`,
    /// weight 0.5) from its highest-confidence node to that conclusion.
    /// Returns the number of bridges added. Idempotent.
    pub fn enforce_connectivity(&mut self) -> usize {
        if self.nodes.len() <= 1 {
            return 0;
        }
        let components = self.undirected_components();
        if components.len() <= 1 {
            return 0;
        }
        let anchor_id: NodeId = match self.best_conclusion() {
            Some(n) => n.id.clone(),
            None => self.nodes[0].id.clone(),
        };
        let anchor_component = components
            .iter()
            .position(|c| c.contains(&anchor_id))
            .unwrap_or(0);
        let mut bridges = 0;
        for (ci, comp) in components.iter().enumerate() {
            if ci == anchor_component {
                continue;
            }
            let mut best: Option<&Node> = None;
            for n in self.nodes.iter().filter(|n| comp.contains(&n.id)) {
                best = match best {
                    None => Some(n),
                    Some(b) if n.confidence > b.confidence => Some(n),
                    Some(b) if n.confidence == b.confidence && n.id < b.id => Some(n),
                    Some(b) => Some(b),
                };
            }
            if let Some(bn) = best {
                self.edges.push(Edge {
                    source: bn.id.clone(),
                    target: anchor_id.clone(),
                    edge_type: EdgeType::DependsOn,
                    weight: 0.5,
                });
                bridges += 1;
            }
        }
        bridges
    }

    /// Undirected connected components in node discovery order.
    pub fn undirected_components(&self) -> Vec<HashSet<NodeId>> {
        let index: HashMap<&NodeId, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (&n.id, i))
            .collect();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if let (Some(&s), Some(&t)) = (index.get(&e.source), index.get(&e.target)) {
                adj[s].push(t);
                adj[t].push(s);
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut components = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            let mut comp = HashSet::new();
            let mut queue = std::collections::VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                comp.insert(self.nodes[u].id.clone());
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            components.push(comp);
        }
        components
    }

    /// Smallest unused id of the form `node_NNN`.
    fn next_free_id(&self) -> NodeId {
        let mut max_n = 0u64;
        for n in &self.nodes {
            if let Some(rest) = n.id.as_str().strip_prefix("node_") {
                if let Ok(k) = rest.parse::<u64>() {
                    max_n = max_n.max(k);
                }
            }
        }
        let mut k = max_n + 1;
        loop {
            let candidate = NodeId::new(format!("node_{k:03}"));
            if !self.contains(&candidate) {
                return candidate;
            }
            k += 1;
        }
    }

    /// Applies one expansion result.
    ///
    /// The target's confidence becomes `updated_confidence` (clamped); when
    /// it reaches `theta` the target is marked resolved and takes the
    /// result's value. New nodes colliding with existing ids are renamed
    /// with a `_dupK` suffix and edges in the same result follow the
    /// rename.
    pub fn apply_expansion(
        &mut self,
        result: &ExpansionResult,
        theta: f64,
    ) -> Result<(), GraphError> {
        if !self.contains(&result.target) {
            return Err(GraphError::UnknownNode(result.target.clone()));
        }
        let conf = clamp_unit(result.updated_confidence);
        let resolved = conf >= theta;
        {
            let node = self.node_mut(&result.target).expect("target checked above");
            node.confidence = conf;
            if resolved {
                node.status = NodeStatus::Resolved;
                if result.value.is_some() {
                    node.value = result.value.clone();
                }
            }
        }
        let mut renames: HashMap<NodeId, NodeId> = HashMap::new();
        for new_node in &result.new_nodes {
            let mut node = new_node.clone();
            node.confidence = clamp_unit(node.confidence);
            if node.status != NodeStatus::Resolved {
                node.value = None;
            }
            if self.contains(&node.id) {
                let renamed = self.dup_id(&node.id);
                renames.insert(node.id.clone(), renamed.clone());
                node.id = renamed;
            }
            self.nodes.push(node);
        }
        for new_edge in &result.new_edges {
            let mut edge = new_edge.clone();
            if let Some(r) = renames.get(&edge.source) {
                edge.source = r.clone();
            }
            if let Some(r) = renames.get(&edge.target) {
                edge.target = r.clone();
            }
            // tolerate dangling edges from the model: drop them
            let _ = self.add_edge(edge);
        }
        Ok(())
    }

    fn dup_id(&self, base: &NodeId) -> NodeId {
        let mut k = 1;
        loop {
            let candidate = NodeId::new(format!("{}_dup{k}", base.as_str()));
            if !self.contains(&candidate) {
                return candidate;
            }
            k += 1;
        }
    }

    /// Merges expansion results produced concurrently against one snapshot.
    ///
    /// Results are applied in ascending target-id order, which makes the
    /// merge independent of arrival order. Targets are expected to be
    /// distinct (the controller never selects a node twice per step).
    pub fn merge_expansions(
        &mut self,
        mut results: Vec<ExpansionResult>,
        theta: f64,
    ) -> Result<(), GraphError> {
        results.sort_by(|a, b| a.target.cmp(&b.target));
        for r in &results {
            self.apply_expansion(r, theta)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// GraphViz DOT export: node color by type, edge style by type.
    /// `highlight` ids (e.g. betweenness hubs) are drawn with a thick
    /// border.
    pub fn to_dot(&self, highlight: &[NodeId]) -> String {
        let mut out = String::from(
            "digraph reasoning {\n  rankdir=TB;\n  node [style=filled, fontname=\"Helvetica\"];\n",
        );
        for n in &self.nodes {
            let color = match n.node_type {
                NodeType::Fact => "#6A9ECF",
                NodeType::Subgoal => "#D4A76A",
                NodeType::Constraint => "#B07EB0",
                NodeType::Conclusion => "#5BA66F",
                NodeType::Other(_) => "#BBBBBB",
            };
            let mut label = n.content.chars().take(40).collect::<String>();
            if n.content.chars().count() > 40 {
                label.push('…');
            }
            let pen = if highlight.contains(&n.id) {
                ", penwidth=3"
            } else {
                ""
            };
            out.push_str(&format!(
                "  \"{}\" [fillcolor=\"{}\", label=\"{}\\n{}\"{}];\n",
                n.id,
                color,
                n.id,
                label.replace('\\', "\\\\").replace('"', "\\\""),
                pen
            ));
        }
        for e in &self.edges {
            let style = match e.edge_type {
                EdgeType::DependsOn => "color=gray",
                EdgeType::Supports => "color=darkgreen",
                EdgeType::Derives => "color=blue",
                EdgeType::Contradicts => "color=red, style=dashed",
                EdgeType::Other(_) => "color=black",
            };
            out.push_str(&format!(
                "  \"{}\" -> \"{}\" [{}, label=\"{}\"];\n",
                e.source, e.target, style, e.edge_type
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Outcome of a tolerant parse: the graph plus bookkeeping about what had
/// to be dropped on the way in.
#[derive(Debug, Clone)]
pub struct ParsedGraph {
    pub graph: ReasoningGraph,
    /// Edges referencing unknown node ids, dropped.
    pub dropped_edges: usize,
    /// Nodes whose id duplicated an earlier node, dropped (first wins).
    pub duplicate_nodes: usize,
}

#[derive(Debug, Deserialize)]
struct RawNode {
    id: Option<serde_json::Value>,
    #[serde(rename = "type")]
    node_type: Option<String>,
    content: Option<String>,
    confidence: Option<f64>,
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    value: Option<String>,
    #[serde(default)]
    depends_on: Option<Vec<serde_json::Value>>,
}

#[derive(Debug, Deserialize)]
struct RawEdge {
    source: Option<serde_json::Value>,
    target: Option<serde_json::Value>,
    #[serde(rename = "type")]
    edge_type: Option<String>,
    weight: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawGraph {
    nodes: Vec<serde_json::Value>,
    #[serde(default)]
    edges: Vec<serde_json::Value>,
}

fn id_from_value(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Locates and decodes the first JSON object in `text` that satisfies
/// `accept`. Markdown fences and surrounding prose are skipped naturally
/// by scanning for `{` candidates. Returns the value and its byte offset.
pub(crate) fn locate_json_object(
    text: &str,
    accept: impl Fn(&serde_json::Value) -> bool,
) -> Result<(serde_json::Value, usize), GraphError> {
    let mut first_offset = None;
    let mut last_reason = String::from("no '{' found in text");
    for (offset, _) in text.match_indices('{') {
        if first_offset.is_none() {
            first_offset = Some(offset);
        }
        let mut stream =
            serde_json::Deserializer::from_str(&text[offset..]).into_iter::<serde_json::Value>();
        match stream.next() {
            Some(Ok(value)) => {
                if accept(&value) {
                    return Ok((value, offset));
                }
                last_reason =
                    "decoded a JSON value but it did not match the expected shape".to_string();
            }
            Some(Err(e)) => {
                last_reason = e.to_string();
            }
            None => {}
        }
    }
    Err(GraphError::Parse {
        offset: first_offset.unwrap_or(0),
        reason: last_reason,
    })
}

fn node_from_raw(raw: RawNode) -> Option<(Node, Vec<String>)> {
    let id = raw.id.as_ref().and_then(id_from_value)?;
    let status = match raw
        .status
        .as_deref()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("resolved") => NodeStatus::Resolved,
        Some("contradicted") => NodeStatus::Contradicted,
        _ => NodeStatus::Unresolved,
    };
    let mut node = Node {
        id: NodeId::new(id),
        node_type: NodeType::from_tag(raw.node_type.as_deref().unwrap_or("unknown")),
        content: raw.content.unwrap_or_default(),
        confidence: clamp_unit(raw.confidence.unwrap_or(0.5)),
        status,
        value: raw.value,
    };
    if node.status != NodeStatus::Resolved {
        node.value = None;
    }
    let deps = raw
        .depends_on
        .unwrap_or_default()
        .iter()
        .filter_map(id_from_value)
        .collect();
    Some((node, deps))
}

pub(crate) fn parse_raw_nodes(values: &[serde_json::Value]) -> Vec<(Node, Vec<String>)> {
    values
        .iter()
        .filter_map(|v| serde_json::from_value::<RawNode>(v.clone()).ok())
        .filter_map(node_from_raw)
        .collect()
}

pub(crate) fn parse_raw_edges(values: &[serde_json::Value]) -> Vec<Edge> {
    values
        .iter()
        .filter_map(|v| serde_json::from_value::<RawEdge>(v.clone()).ok())
        .filter_map(|raw| {
            let source = raw.source.as_ref().and_then(id_from_value)?;
            let target = raw.target.as_ref().and_then(id_from_value)?;
            Some(Edge {
                source: NodeId::new(source),
                target: NodeId::new(target),
                edge_type: EdgeType::from_tag(raw.edge_type.as_deref().unwrap_or("depends_on")),
                weight: clamp_unit(raw.weight.unwrap_or(0.5)),
            })
        })
        .collect()
}

/// Parses a raw model response into a [`ReasoningGraph`].
///
/// Tolerance rules: code fences and surrounding prose are skipped; missing
/// confidence defaults to 0.5; duplicate node ids keep the first
/// occurrence; edges referencing unknown ids are dropped and counted;
/// self-loops are dropped; a `depends_on` list inside a node is translated
/// into `depends_on` edges from each dependency to the node.
pub fn parse_graph(json_text: &str) -> Result<ParsedGraph, GraphError> {
    let (value, offset) = locate_json_object(json_text, |v| {
        v.get("nodes")
            .map(serde_json::Value::is_array)
            .unwrap_or(false)
    })?;
    let raw: RawGraph = serde_json::from_value(value).map_err(|e| GraphError::Parse {
        offset,
        reason: e.to_string(),
    })?;

    let mut graph = ReasoningGraph::new();
    let mut duplicate_nodes = 0;
    let mut dep_edges: Vec<Edge> = Vec::new();
    for (node, deps) in parse_raw_nodes(&raw.nodes) {
        if graph.contains(&node.id) {
            duplicate_nodes += 1;
            continue;
        }
        for dep in deps {
            dep_edges.push(Edge {
                source: NodeId::new(dep),
                target: node.id.clone(),
                edge_type: EdgeType::DependsOn,
                weight: 0.5,
            });
        }
        graph.nodes.push(node);
    }

    let mut dropped_edges = 0;
    let mut seen: HashSet<(NodeId, NodeId, String)> = HashSet::new();
    for edge in parse_raw_edges(&raw.edges).into_iter().chain(dep_edges) {
        if edge.source == edge.target {
            continue; // self-loop, dropped silently
        }
        if !graph.contains(&edge.source) || !graph.contains(&edge.target) {
            dropped_edges += 1;
            continue;
        }
        if !seen.insert((
            edge.source.clone(),
            edge.target.clone(),
            edge.edge_type.as_tag().to_string(),
        )) {
            continue; // same edge stated twice (edge list + depends_on list)
        }
        graph.edges.push(edge);
    }

    Ok(ParsedGraph {
        graph,
        dropped_edges,
        duplicate_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_payload() -> &'static str {
        r#"{"nodes":[{"id":"node_001","type":"fact","content":"x","confidence":0.4}],"edges":[]}"#
    }

    #[test]
    fn parses_minimal_graph() {
        let parsed = parse_graph(minimal_payload()).unwrap();
        assert_eq!(parsed.graph.nodes().len(), 1);
        assert_eq!(parsed.graph.edges().len(), 0);
        assert_eq!(parsed.dropped_edges, 0);
        let n = &parsed.graph.nodes()[0];
        assert_eq!(n.id.as_str(), "node_001");
        assert_eq!(n.node_type, NodeType::Fact);
        assert_eq!(n.confidence, 0.4);
        assert_eq!(n.status, NodeStatus::Unresolved);
    }

    #[test]
    fn fenced_payload_parses_identically() {
        let fenced = format!(
            "Here is the graph:\n```json\n{}\n```\nDone.",
            minimal_payload()
        );
        let a = parse_graph(minimal_payload()).unwrap();
        let b = parse_graph(&fenced).unwrap();
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn dangling_edge_dropped_and_counted() {
        let text = r#"{"nodes":[{"id":"node_001","type":"fact","content":"x","confidence":0.4}],
            "edges":[{"source":"node_001","target":"node_009","type":"supports","weight":0.9}]}"#;
        let parsed = parse_graph(text).unwrap();
        assert_eq!(parsed.graph.nodes().len(), 1);
        assert_eq!(parsed.graph.edges().len(), 0);
        assert_eq!(parsed.dropped_edges, 1);
    }

    #[test]
    fn missing_confidence_defaults_to_half() {
        let text = r#"{"nodes":[{"id":"a","type":"fact","content":"x"}]}"#;
        let parsed = parse_graph(text).unwrap();
        assert_eq!(parsed.graph.nodes()[0].confidence, 0.5);
    }

    #[test]
    fn duplicate_ids_keep_first() {
        let text = r#"{"nodes":[
            {"id":"a","type":"fact","content":"first","confidence":0.2},
            {"id":"a","type":"subgoal","content":"second","confidence":0.9}]}"#;
        let parsed = parse_graph(text).unwrap();
        assert_eq!(parsed.graph.nodes().len(), 1);
        assert_eq!(parsed.graph.nodes()[0].content, "first");
        assert_eq!(parsed.duplicate_nodes, 1);
    }

    #[test]
    fn self_loops_dropped_silently() {
        let text = r#"{"nodes":[{"id":"a","type":"fact","content":"x","confidence":0.2}],
            "edges":[{"source":"a","target":"a","type":"supports","weight":1.0}]}"#;
        let parsed = parse_graph(text).unwrap();
        assert_eq!(parsed.graph.edges().len(), 0);
        assert_eq!(parsed.dropped_edges, 0);
    }

    #[test]
    fn depends_on_list_becomes_edges() {
        let text = r#"{"nodes":[
            {"id":"a","type":"fact","content":"x","confidence":0.2},
            {"id":"b","type":"subgoal","content":"y","confidence":0.3,"depends_on":["a"]}]}"#;
        let parsed = parse_graph(text).unwrap();
        assert_eq!(parsed.graph.edges().len(), 1);
        let e = &parsed.graph.edges()[0];
        assert_eq!(e.source.as_str(), "a");
        assert_eq!(e.target.as_str(), "b");
        assert_eq!(e.edge_type, EdgeType::DependsOn);
    }

    #[test]
    fn duplicated_edge_statement_not_doubled() {
        let text = r#"{"nodes":[
            {"id":"a","type":"fact","content":"x","confidence":0.2},
            {"id":"b","type":"subgoal","content":"y","confidence":0.3,"depends_on":["a"]}],
            "edges":[{"source":"a","target":"b","type":"depends_on","weight":0.8}]}"#;
        let parsed = parse_graph(text).unwrap();
        assert_eq!(parsed.graph.edges().len(), 1);
        assert_eq!(parsed.graph.edges()[0].weight, 0.8); // explicit edge wins
    }

    #[test]
    fn no_json_is_a_parse_error_with_offset() {
        match parse_graph("I could not produce a graph, sorry.") {
            Err(GraphError::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn drift_types_preserved_verbatim() {
        let text = r#"{"nodes":[{"id":"a","type":"calculation","content":"x","confidence":0.2}]}"#;
        let parsed = parse_graph(text).unwrap();
        assert_eq!(
            parsed.graph.nodes()[0].node_type,
            NodeType::Other("calculation".into())
        );
        let json = parsed.graph.to_json();
        assert!(json.contains("\"calculation\""));
    }

    #[test]
    fn clamp_caps_at_half_and_is_idempotent() {
        let text = r#"{"nodes":[
            {"id":"a","type":"fact","content":"x","confidence":1.0},
            {"id":"b","type":"fact","content":"y","confidence":0.3}]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        g.clamp_initial_confidence();
        assert_eq!(g.node(&"a".into()).unwrap().confidence, 0.5);
        assert_eq!(g.node(&"b".into()).unwrap().confidence, 0.3);
        let snapshot = g.clone();
        g.clamp_initial_confidence();
        assert_eq!(g, snapshot);
    }

    #[test]
    fn clamp_on_empty_graph_is_identity() {
        let mut g = ReasoningGraph::new();
        g.clamp_initial_confidence();
        assert!(g.nodes().is_empty());
    }

    #[test]
    fn ensure_goal_noop_when_conclusion_exists() {
        let text = r#"{"nodes":[{"id":"a","type":"conclusion","content":"x","confidence":0.2}]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        let before = g.clone();
        assert!(!g.ensure_goal_node("goal"));
        assert_eq!(g, before);
    }

    #[test]
    fn ensure_goal_appends_conclusion_and_links_sinks() {
        // chain fact -> subgoal -> subgoal, no conclusion
        let text = r#"{"nodes":[
            {"id":"node_001","type":"fact","content":"f","confidence":0.2},
            {"id":"node_002","type":"subgoal","content":"s1","confidence":0.2},
            {"id":"node_003","type":"subgoal","content":"s2","confidence":0.2}],
            "edges":[
            {"source":"node_001","target":"node_002","type":"depends_on","weight":0.5},
            {"source":"node_002","target":"node_003","type":"depends_on","weight":0.5}]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        assert!(g.ensure_goal_node("reach the goal"));
        assert_eq!(g.nodes().len(), 4);
        let goal = g.conclusions().next().unwrap();
        assert_eq!(goal.id.as_str(), "node_004");
        assert_eq!(goal.confidence, 0.0);
        // only the terminal subgoal was a sink
        let incoming: Vec<_> = g.edges().iter().filter(|e| e.target == goal.id).collect();
        assert_eq!(incoming.len(), 1);
        assert_eq!(incoming[0].source.as_str(), "node_003");
        assert_eq!(incoming[0].edge_type, EdgeType::DependsOn);
    }

    #[test]
    fn ensure_goal_on_empty_graph() {
        let mut g = ReasoningGraph::new();
        assert!(g.ensure_goal_node("goal"));
        assert_eq!(g.nodes().len(), 1);
        assert!(g.edges().is_empty());
        assert_eq!(g.nodes()[0].node_type, NodeType::Conclusion);
    }

    #[test]
    fn connectivity_noop_when_connected() {
        let text = r#"{"nodes":[
            {"id":"a","type":"fact","content":"x","confidence":0.2},
            {"id":"b","type":"conclusion","content":"y","confidence":0.2}],
            "edges":[{"source":"a","target":"b","type":"depends_on","weight":0.5}]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        assert_eq!(g.enforce_connectivity(), 0);
        assert_eq!(g.undirected_components().len(), 1);
    }

    #[test]
    fn connectivity_bridges_two_components() {
        let text = r#"{"nodes":[
            {"id":"a","type":"fact","content":"x","confidence":0.2},
            {"id":"b","type":"conclusion","content":"y","confidence":0.2},
            {"id":"c","type":"fact","content":"z","confidence":0.4},
            {"id":"d","type":"fact","content":"w","confidence":0.1}],
            "edges":[
            {"source":"a","target":"b","type":"depends_on","weight":0.5},
            {"source":"c","target":"d","type":"supports","weight":0.5}]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        assert_eq!(g.enforce_connectivity(), 1);
        assert_eq!(g.undirected_components().len(), 1);
        // bridge runs from the stray component's highest-confidence node (c)
        let bridge = g.edges().last().unwrap();
        assert_eq!(bridge.source.as_str(), "c");
        assert_eq!(bridge.target.as_str(), "b");
        // idempotent
        assert_eq!(g.enforce_connectivity(), 0);
    }

    #[test]
    fn connectivity_three_components_two_bridges() {
        let text = r#"{"nodes":[
            {"id":"a","type":"conclusion","content":"x","confidence":0.2},
            {"id":"b","type":"fact","content":"y","confidence":0.2},
            {"id":"c","type":"fact","content":"z","confidence":0.2}],"edges":[]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        assert_eq!(g.enforce_connectivity(), 2);
        assert_eq!(g.undirected_components().len(), 1);
    }

    #[test]
    fn apply_expansion_resolves_at_threshold() {
        let text = r#"{"nodes":[{"id":"a","type":"subgoal","content":"x","confidence":0.4}]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        let r = ExpansionResult {
            target: "a".into(),
            updated_confidence: 0.9,
            new_nodes: vec![],
            new_edges: vec![],
            value: Some("42".into()),
        };
        g.apply_expansion(&r, 0.8).unwrap();
        let n = g.node(&"a".into()).unwrap();
        assert_eq!(n.confidence, 0.9);
        assert_eq!(n.status, NodeStatus::Resolved);
        assert_eq!(n.value.as_deref(), Some("42"));
    }

    #[test]
    fn apply_expansion_clamps_overrange_confidence() {
        let text = r#"{"nodes":[{"id":"a","type":"subgoal","content":"x","confidence":0.4}]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        let r = ExpansionResult {
            target: "a".into(),
            updated_confidence: 1.7,
            new_nodes: vec![],
            new_edges: vec![],
            value: None,
        };
        g.apply_expansion(&r, 0.8).unwrap();
        assert_eq!(g.node(&"a".into()).unwrap().confidence, 1.0);
    }

    #[test]
    fn apply_expansion_renames_colliding_ids() {
        let text = r#"{"nodes":[
            {"id":"node_003","type":"fact","content":"x","confidence":0.4},
            {"id":"node_004","type":"subgoal","content":"t","confidence":0.4}]}"#;
        let mut g = parse_graph(text).unwrap().graph;
        let r = ExpansionResult {
            target: "node_004".into(),
            updated_confidence: 0.5,
            new_nodes: vec![Node::new("node_003", NodeType::Fact, "new", 0.3)],
            new_edges: vec![Edge::new("node_003", "node_004", EdgeType::Supports, 0.5)],
            value: None,
        };
        g.apply_expansion(&r, 0.8).unwrap();
        assert!(g.contains(&"node_003_dup1".into()));
        // the result's own edge follows the rename
        let e = g.edges().last().unwrap();
        assert_eq!(e.source.as_str(), "node_003_dup1");
    }

    #[test]
    fn apply_expansion_unknown_target_errors() {
        let mut g = ReasoningGraph::new();
        let r = ExpansionResult::noop("ghost".into(), 0.4);
        assert!(matches!(
            g.apply_expansion(&r, 0.8),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn merge_is_permutation_invariant() {
        let text = r#"{"nodes":[
            {"id":"a","type":"subgoal","content":"x","confidence":0.4},
            {"id":"b","type":"subgoal","content":"y","confidence":0.4}]}"#;
        let base = parse_graph(text).unwrap().graph;
        let ra = ExpansionResult {
            target: "a".into(),
            updated_confidence: 0.9,
            new_nodes: vec![Node::new("n1", NodeType::Fact, "from a", 0.2)],
            new_edges: vec![],
            value: None,
        };
        let rb = ExpansionResult {
            target: "b".into(),
            updated_confidence: 0.7,
            new_nodes: vec![Node::new("n1", NodeType::Fact, "from b", 0.2)],
            new_edges: vec![],
            value: None,
        };
        let mut g1 = base.clone();
        g1.merge_expansions(vec![ra.clone(), rb.clone()], 0.8).unwrap();
        let mut g2 = base.clone();
        g2.merge_expansions(vec![rb, ra], 0.8).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(g1.nodes().len(), 4); // second n1 renamed, not merged
        assert!(g1.contains(&"n1_dup1".into()));
    }

    #[test]
    fn roundtrip_preserves_graph() {
        let text = r#"{"nodes":[
            {"id":"node_001","type":"fact","content":"f","confidence":0.25},
            {"id":"node_002","type":"calculation","content":"c","confidence":0.5}],
            "edges":[{"source":"node_001","target":"node_002","type":"derives","weight":0.75}]}"#;
        let g = parse_graph(text).unwrap().graph;
        let re = parse_graph(&g.to_json()).unwrap().graph;
        assert_eq!(g, re);
    }

    #[test]
    fn dot_export_carries_type_conventions() {
        let text = r#"{"nodes":[
            {"id":"a","type":"fact","content":"x","confidence":0.2},
            {"id":"b","type":"conclusion","content":"y","confidence":0.2}],
            "edges":[{"source":"a","target":"b","type":"contradicts","weight":0.5}]}"#;
        let g = parse_graph(text).unwrap().graph;
        let dot = g.to_dot(&[]);
        assert!(dot.contains("#6A9ECF")); // fact
        assert!(dot.contains("#5BA66F")); // conclusion
        assert!(dot.contains("style=dashed")); // contradicts
    }
}
