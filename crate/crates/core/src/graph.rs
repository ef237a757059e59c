//! Finite directed graphs over dense vertex indices.
//!
//! Vertices are `0..n` and their natural order is the total order used to
//! orient undirected input. Edges are kept as a sorted list of ordered pairs,
//! so iteration order is deterministic and every per-edge quantity (weight,
//! drift, edge signal) is a plain `Vec<f64>` aligned with [`DirectedGraph::edges`].

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Absolute tolerance used when checking that a drift is a gradient field.
pub const DEFAULT_GRADIENT_TOL: f64 = 1e-9;

pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n_vertices: usize,
    edges: Vec<Edge>,
}

impl DirectedGraph {
    /// Builds a graph from explicitly oriented edges.
    pub fn new(n_vertices: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if n_vertices == 0 {
            return Err(Error::EmptyVertexSet);
        }
        let mut edges: Vec<Edge> = edges.into_iter().collect();
        for &(i, j) in &edges {
            if i >= n_vertices || j >= n_vertices {
                return Err(Error::VertexOutOfRange(i, j, n_vertices));
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateEdge(w[0].0, w[0].1));
        }
        Ok(Self { n_vertices, edges })
    }

    /// Graph with `n_vertices` vertices and no edges.
    pub fn edgeless(n_vertices: usize) -> Result<Self> {
        Self::new(n_vertices, std::iter::empty())
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges in lexicographic order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Position of `edge` in [`Self::edges`].
    pub fn edge_index(&self, edge: Edge) -> Option<usize> {
        self.edges.binary_search(&edge).ok()
    }

    pub fn contains_edge(&self, edge: Edge) -> bool {
        self.edge_index(edge).is_some()
    }

    /// Number of edges touching each vertex, ignoring orientation.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_vertices];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Undirected adjacency: for each vertex the list of `(neighbour, edge index)`.
    pub fn undirected_adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            adj[i].push((j, e));
            adj[j].push((i, e));
        }
        adj
    }

    /// Whether every edge points from a smaller to a larger vertex index.
    pub fn respects_order(&self) -> bool {
        self.edges.iter().all(|&(i, j)| i < j)
    }
}

/// Orients each unordered pair `{i, j}` as `(min, max)`.
pub fn orient_by_order(
    n_vertices: usize,
    undirected_edges: impl IntoIterator<Item = (usize, usize)>,
) -> Result<DirectedGraph> {
    let oriented = undirected_edges
        .into_iter()
        .map(|(i, j)| if i <= j { (i, j) } else { (j, i) });
    DirectedGraph::new(n_vertices, oriented)
}

/// True iff the underlying undirected graph is connected.
pub fn is_weakly_connected(g: &DirectedGraph) -> bool {
    let n = g.n_vertices();
    let adj = g.undirected_adjacency();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(v) = queue.pop_front() {
        for &(u, _) in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                reached += 1;
                queue.push_back(u);
            }
        }
    }
    reached == n
}

/// Recovers a potential `φ` with `φ(0) = 0` and `a(i,j) = φ(j) − φ(i)` on every
/// edge, or `None` if some cycle closes with a defect above `tol`.
///
/// Values are assigned along a breadth-first spanning tree; every edge,
/// tree or not, is then checked.
pub fn potential_from_drift(g: &DirectedGraph, drift: &[f64], tol: f64) -> Result<Option<Vec<f64>>> {
    check_len("drift", g.n_edges(), drift.len())?;
    if !is_weakly_connected(g) {
        return Err(Error::Disconnected);
    }
    let adj = g.undirected_adjacency();
    let mut phi = vec![f64::NAN; g.n_vertices()];
    phi[0] = 0.0;
    let mut queue = VecDeque::from([0]);
    while let Some(v) = queue.pop_front() {
        for &(u, e) in &adj[v] {
            if phi[u].is_nan() {
                let (i, _) = g.edges()[e];
                phi[u] = if i == v { phi[v] + drift[e] } else { phi[v] - drift[e] };
                queue.push_back(u);
            }
        }
    }
    let consistent = g
        .edges()
        .iter()
        .zip(drift)
        .all(|(&(i, j), &a)| (a - (phi[j] - phi[i])).abs() <= tol);
    Ok(consistent.then_some(phi))
}

/// The drift `a(i,j) = φ(j) − φ(i)` generated by a potential.
pub fn gradient_field(g: &DirectedGraph, phi: &[f64]) -> Result<Vec<f64>> {
    check_len("potential", g.n_vertices(), phi.len())?;
    Ok(g.edges().iter().map(|&(i, j)| phi[j] - phi[i]).collect())
}

/// Weight `w > 0` and drift `a` on every edge, plus the potential when the
/// drift is a verified gradient field.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFields {
    weight: Vec<f64>,
    drift: Vec<f64>,
    potential: Option<Vec<f64>>,
}

impl EdgeFields {
    pub fn new(g: &DirectedGraph, weight: Vec<f64>, drift: Vec<f64>) -> Result<Self> {
        check_len("weight", g.n_edges(), weight.len())?;
        check_len("drift", g.n_edges(), drift.len())?;
        for (&(i, j), &w) in g.edges().iter().zip(&weight) {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::NonPositiveWeight(i, j, w));
            }
        }
        Ok(Self {
            weight,
            drift,
            potential: None,
        })
    }

    /// Unit weights and zero drift (the plain graph Laplacian).
    pub fn uniform(g: &DirectedGraph) -> Self {
        Self {
            weight: vec![1.0; g.n_edges()],
            drift: vec![0.0; g.n_edges()],
            potential: Some(vec![0.0; g.n_vertices()]),
        }
    }

    /// Fields whose drift is the gradient of `phi`; the potential is stored as given.
    pub fn from_potential(g: &DirectedGraph, weight: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let drift = gradient_field(g, &phi)?;
        let mut fields = Self::new(g, weight, drift)?;
        fields.potential = Some(phi);
        Ok(fields)
    }

    /// Attaches a potential recovered from the drift, if it is a gradient field.
    pub fn verify_gradient(mut self, g: &DirectedGraph, tol: f64) -> Result<Self> {
        self.potential = potential_from_drift(g, &self.drift, tol)?;
        Ok(self)
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn potential(&self) -> Option<&[f64]> {
        self.potential.as_deref()
    }
}

/// An edge subset `F` of a parent graph together with the graph it induces
/// on its endpoint set `∂F`, relabelled to `0..|∂F|` in increasing order.
#[derive(Debug, Clone)]
pub struct EdgeSubset<'g> {
    parent: &'g DirectedGraph,
    edges: Vec<Edge>,
    parent_edge_indices: Vec<usize>,
    boundary_vertices: Vec<usize>,
    local: DirectedGraph,
}

impl<'g> EdgeSubset<'g> {
    pub fn parent(&self) -> &'g DirectedGraph {
        self.parent
    }

    /// The edges of `F` in parent labels, sorted.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// `∂F` in increasing order; position in this slice is the local label.
    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary_vertices
    }

    /// The induced graph on `0..|∂F|`.
    pub fn local_graph(&self) -> &DirectedGraph {
        &self.local
    }

    pub fn local_index(&self, parent_vertex: usize) -> Option<usize> {
        self.boundary_vertices.binary_search(&parent_vertex).ok()
    }

    /// Restricts a vertex signal on the parent graph to `∂F`.
    pub fn restrict_signal(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len("signal", self.parent.n_vertices(), f.len())?;
        Ok(self.boundary_vertices.iter().map(|&v| f[v]).collect())
    }

    /// Restricts parent edge fields to `F`, and the potential (if any) to `∂F`.
    pub fn restrict_fields(&self, fields: &EdgeFields) -> Result<EdgeFields> {
        check_len("weight", self.parent.n_edges(), fields.weight.len())?;
        let pick = |v: &[f64]| self.parent_edge_indices.iter().map(|&e| v[e]).collect::<Vec<_>>();
        let potential = fields
            .potential
            .as_ref()
            .map(|phi| self.boundary_vertices.iter().map(|&v| phi[v]).collect());
        Ok(EdgeFields {
            weight: pick(&fields.weight),
            drift: pick(&fields.drift),
            potential,
        })
    }
}

/// Builds the subgraph induced by the edge subset `subset`.
pub fn induce_subgraph<'g>(g: &'g DirectedGraph, subset: &[Edge]) -> Result<EdgeSubset<'g>> {
    let mut edges = subset.to_vec();
    edges.sort_unstable();
    if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateEdge(w[0].0, w[0].1));
    }
    let parent_edge_indices = edges
        .iter()
        .map(|&(i, j)| g.edge_index((i, j)).ok_or(Error::EdgeNotInGraph(i, j)))
        .collect::<Result<Vec<_>>>()?;
    let mut boundary_vertices: Vec<usize> = edges.iter().flat_map(|&(i, j)| [i, j]).collect();
    boundary_vertices.sort_unstable();
    boundary_vertices.dedup();
    let relabel = |v: usize| boundary_vertices.binary_search(&v).expect("endpoint in boundary");
    let local_edges: Vec<Edge> = edges.iter().map(|&(i, j)| (relabel(i), relabel(j))).collect();
    // DirectedGraph needs at least one vertex, even for F = ∅.
    let local = DirectedGraph::new(boundary_vertices.len().max(1), local_edges)?;
    Ok(EdgeSubset {
        parent: g,
        edges,
        parent_edge_indices,
        boundary_vertices,
        local,
    })
}

/// An edge list read from text, with optional per-edge weight and drift
/// aligned with the sorted edges of `graph`.
#[derive(Debug, Clone)]
pub struct ParsedEdgeList {
    pub graph: DirectedGraph,
    pub fields: Option<EdgeFields>,
}

/// Parses the edge-list format: one edge per line, either `i j` or
/// `i j w a`; `#` starts a comment. The vertex count is `n_vertices` when
/// given, otherwise one past the largest index seen.
pub fn parse_edge_list(text: &str, n_vertices: Option<usize>) -> Result<ParsedEdgeList> {
    let mut rows: Vec<(Edge, Option<(f64, f64)>)> = Vec::new();
    let mut with_fields: Option<bool> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let has_fields = match tokens.len() {
            2 => false,
            4 => true,
            k => return Err(parse_err(format!("expected 2 or 4 fields, found {k}"))),
        };
        if *with_fields.get_or_insert(has_fields) != has_fields {
            return Err(parse_err("mixes 2-field and 4-field edges".into()));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_err(format!("bad vertex index {s:?}: {e}")))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(format!("bad number {s:?}: {e}")))
        };
        let edge = (idx(tokens[0])?, idx(tokens[1])?);
        let extra = if has_fields {
            Some((real(tokens[2])?, real(tokens[3])?))
        } else {
            None
        };
        rows.push((edge, extra));
    }
    let n = n_vertices.unwrap_or_else(|| {
        rows.iter()
            .map(|&((i, j), _)| i.max(j) + 1)
            .max()
            .unwrap_or(1)
    });
    let graph = DirectedGraph::new(n, rows.iter().map(|&(e, _)| e))?;
    let fields = if with_fields == Some(true) {
        rows.sort_unstable_by_key(|&(e, _)| e);
        let (weight, drift) = rows.iter().map(|&(_, x)| x.expect("4-field row")).unzip();
        Some(EdgeFields::new(&graph, weight, drift)?)
    } else {
        None
    };
    Ok(ParsedEdgeList { graph, fields })
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            actual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> DirectedGraph {
        DirectedGraph::new(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
    }

    #[test]
    fn orientation_follows_vertex_order() {
        let g = orient_by_order(3, [(0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        let g = orient_by_order(1, []).unwrap();
        assert_eq!(g.n_edges(), 0);
        let g = orient_by_order(2, [(1, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn orientation_rejects_self_loops() {
        assert!(matches!(orient_by_order(3, [(1, 1)]), Err(Error::SelfLoop(1))));
    }

    #[test]
    fn orientation_is_idempotent() {
        let g = orient_by_order(5, [(4, 0), (3, 1), (2, 3)]).unwrap();
        let again = orient_by_order(5, g.edges().iter().copied()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn construction_rejects_bad_edges() {
        assert!(matches!(
            DirectedGraph::new(2, [(0, 1), (0, 1)]),
            Err(Error::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            DirectedGraph::new(2, [(0, 2)]),
            Err(Error::VertexOutOfRange(0, 2, 2))
        ));
        assert!(matches!(DirectedGraph::new(0, []), Err(Error::EmptyVertexSet)));
    }

    #[test]
    fn connectivity() {
        assert!(is_weakly_connected(&path(3)));
        assert!(is_weakly_connected(&DirectedGraph::edgeless(1).unwrap()));
        assert!(!is_weakly_connected(&DirectedGraph::edgeless(2).unwrap()));
        // orientation is ignored
        assert!(is_weakly_connected(&DirectedGraph::new(3, [(1, 0), (1, 2)]).unwrap()));
    }

    #[test]
    fn long_path_with_isolated_vertex_is_disconnected() {
        let g = DirectedGraph::new(289, (0..287).map(|i| (i, i + 1))).unwrap();
        assert!(!is_weakly_connected(&g));
        assert!(is_weakly_connected(&path(288)));
    }

    #[test]
    fn potential_on_a_tree() {
        let phi = potential_from_drift(&path(3), &[0.5, -0.2], 1e-9).unwrap().unwrap();
        assert_eq!(phi[0], 0.0);
        assert!((phi[1] - 0.5).abs() < 1e-15);
        assert!((phi[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn potential_with_backward_edge() {
        let g = DirectedGraph::new(3, [(1, 0), (1, 2)]).unwrap();
        // a(1,0) = φ0 − φ1 = 0.4, a(1,2) = φ2 − φ1 = 1.0
        let phi = potential_from_drift(&g, &[0.4, 1.0], 1e-9).unwrap().unwrap();
        assert!((phi[1] + 0.4).abs() < 1e-15);
        assert!((phi[2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn cycle_obstruction() {
        let g = DirectedGraph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        // drift is aligned with sorted edges (0,1), (0,2), (1,2);
        // 0→1→2 and back along (0,2): 0.3 + 0.3 − 0.5 = 0.1
        assert!(potential_from_drift(&g, &[0.3, 0.5, 0.3], 1e-9).unwrap().is_none());
        assert!(potential_from_drift(&g, &[0.3, 0.6, 0.3], 1e-9).unwrap().is_some());
    }

    #[test]
    fn potential_requires_connectivity() {
        let g = DirectedGraph::new(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(potential_from_drift(&g, &[0.0, 0.0], 1e-9), Err(Error::Disconnected)));
    }

    #[test]
    fn induced_subgraph_boundary() {
        let g = path(3);
        let s = induce_subgraph(&g, &[(0, 1)]).unwrap();
        assert_eq!(s.boundary_vertices(), &[0, 1]);
        assert_eq!(s.local_graph().edges(), &[(0, 1)]);

        let g = DirectedGraph::new(5, [(0, 1), (1, 3)]).unwrap();
        let s = induce_subgraph(&g, g.edges()).unwrap();
        assert_eq!(s.boundary_vertices(), &[0, 1, 3]);
        assert_eq!(s.local_graph().edges(), &[(0, 1), (1, 2)]);
        assert_eq!(s.local_index(3), Some(2));
        assert_eq!(s.local_index(2), None);
        assert_eq!(s.restrict_signal(&[1., 2., 3., 4., 5.]).unwrap(), vec![1., 2., 4.]);
    }

    #[test]
    fn induced_subgraph_rejects_foreign_edges() {
        let g = path(3);
        assert!(matches!(induce_subgraph(&g, &[(0, 2)]), Err(Error::EdgeNotInGraph(0, 2))));
    }

    #[test]
    fn restricted_fields_follow_subset() {
        let g = path(4);
        let fields =
            EdgeFields::from_potential(&g, vec![1.0, 2.0, 3.0], vec![0.0, 0.1, 0.3, 0.6]).unwrap();
        let s = induce_subgraph(&g, &[(2, 3), (1, 2)]).unwrap();
        let local = s.restrict_fields(&fields).unwrap();
        assert_eq!(local.weight(), &[2.0, 3.0]);
        assert!((local.drift()[1] - 0.3).abs() < 1e-15);
        assert_eq!(local.potential().unwrap(), &[0.1, 0.3, 0.6]);
    }

    #[test]
    fn fields_reject_nonpositive_weight() {
        let g = path(2);
        assert!(matches!(
            EdgeFields::new(&g, vec![0.0], vec![0.0]),
            Err(Error::NonPositiveWeight(0, 1, _))
        ));
        assert!(EdgeFields::new(&g, vec![1.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn edge_list_parsing() {
        let text = "# toy graph\n2 1 0.5 0.1\n0 1 1.0 -0.2  # first\n\n";
        let parsed = parse_edge_list(text, None).unwrap();
        assert_eq!(parsed.graph.n_vertices(), 3);
        assert_eq!(parsed.graph.edges(), &[(0, 1), (2, 1)]);
        let fields = parsed.fields.unwrap();
        assert_eq!(fields.weight(), &[1.0, 0.5]);
        assert_eq!(fields.drift(), &[-0.2, 0.1]);

        let parsed = parse_edge_list("0 1\n1 2\n", Some(5)).unwrap();
        assert_eq!(parsed.graph.n_vertices(), 5);
        assert!(parsed.fields.is_none());
    }

    #[test]
    fn edge_list_errors_carry_line_numbers() {
        match parse_edge_list("0 1\n1 x\n", None) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_edge_list("0 1\n1 2 1.0 0.0\n", None) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
