//! Uniform quadrilateral grids on the unit square.
//!
//! Nodes and elements are numbered row-major from the bottom-left corner:
//! node `(i, j)` sits at `(i h, j h)` with index `j (n + 1) + i`, and element
//! `(row, col)` has index `row n + col`. Horizontal edges come first
//! (`j n + i`, from node `(i, j)` to `(i + 1, j)`), followed by vertical
//! edges (`n (n + 1) + j (n + 1) + i`, from node `(i, j)` to `(i, j + 1)`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SNAP_TOL: f64 = 1e-9;

/// A side of the unit square, or equivalently a side of a square element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Side::Left | Side::Right)
    }
}

/// One heat sink: a closed segment of a side of the square, `[center - length/2, center + length/2]`
/// measured along that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkSegment {
    pub side: Side,
    pub center: f64,
    pub length: f64,
}

impl SinkSegment {
    pub fn bounds(&self) -> (f64, f64) {
        (self.center - 0.5 * self.length, self.center + 0.5 * self.length)
    }

    fn snaps_to(&self, n: usize) -> bool {
        let (lo, hi) = self.bounds();
        let on_node = |t: f64| {
            let s = t * n as f64;
            (s - s.round()).abs() <= SNAP_TOL * n as f64
        };
        on_node(lo) && on_node(hi)
    }

    /// Does the boundary point with coordinate `t` along `side` lie on this segment?
    fn contains(&self, side: Side, t: f64) -> bool {
        let (lo, hi) = self.bounds();
        side == self.side && t >= lo - SNAP_TOL && t <= hi + SNAP_TOL
    }
}

/// Placement of the zero-temperature boundary Γ_u. Everything else on ∂Ω is adiabatic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub sinks: Vec<SinkSegment>,
}

impl Default for BoundarySpec {
    /// A single sink centred on the left edge. Its length, 3/16, is the closest value to 0.2 whose
    /// endpoints fall on grid nodes for every `n` that is a multiple of 32.
    fn default() -> Self {
        BoundarySpec {
            sinks: vec![SinkSegment {
                side: Side::Left,
                center: 0.5,
                length: 0.1875,
            }],
        }
    }
}

impl BoundarySpec {
    pub fn single(side: Side, center: f64, length: f64) -> Self {
        BoundarySpec {
            sinks: vec![SinkSegment {
                side,
                center,
                length,
            }],
        }
    }

    /// Checks segment ranges (grid-independent).
    pub fn validate(&self) -> Result<()> {
        if self.sinks.is_empty() {
            return Err(Error::InvalidBoundary(
                "at least one sink segment is required".into(),
            ));
        }
        for (i, s) in self.sinks.iter().enumerate() {
            let (lo, hi) = s.bounds();
            if !(s.length > 0.0 && s.length <= 1.0) {
                return Err(Error::InvalidBoundary(format!(
                    "segment #{i}: length {} outside (0, 1]",
                    s.length
                )));
            }
            if !(0.0..=1.0).contains(&s.center) || lo < -SNAP_TOL || hi > 1.0 + SNAP_TOL {
                return Err(Error::InvalidBoundary(format!(
                    "segment #{i}: [{lo}, {hi}] is not inside the side"
                )));
            }
        }
        Ok(())
    }

    /// Checks that every segment endpoint lands on a node of an `n x n` grid.
    pub fn check_snaps(&self, n: usize) -> Result<()> {
        for (index, s) in self.sinks.iter().enumerate() {
            if !s.snaps_to(n) {
                return Err(Error::NonSnappingSegment {
                    index,
                    side: s.side,
                    center: s.center,
                    length: s.length,
                    n,
                });
            }
        }
        Ok(())
    }

    /// Is the boundary point `(x, y)` on closed Γ_u? Points not on ∂Ω return false.
    pub fn is_dirichlet_point(&self, x: f64, y: f64) -> bool {
        let tol = SNAP_TOL;
        let mut hits = [
            (Side::Left, x.abs() <= tol, y),
            (Side::Right, (x - 1.0).abs() <= tol, y),
            (Side::Bottom, y.abs() <= tol, x),
            (Side::Top, (y - 1.0).abs() <= tol, x),
        ]
        .into_iter()
        .filter(|(_, on, _)| *on);
        hits.any(|(side, _, t)| self.sinks.iter().any(|s| s.contains(side, t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeTag {
    Interior,
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    /// Corner nodes, counterclockwise from the bottom-left corner.
    pub nodes: [usize; 4],
    /// Edges in `Side::ALL` order: bottom, right, top, left.
    pub edges: [usize; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub nodes: [usize; 2],
    /// Adjacent elements with the side of that element the edge occupies.
    /// Slot 0 is the element below / to the left, slot 1 the element above / to the right.
    pub elements: [Option<(usize, Side)>; 2],
    pub tag: EdgeTag,
}

impl Edge {
    pub fn adjacent(&self) -> impl Iterator<Item = (usize, Side)> + '_ {
        self.elements.iter().flatten().copied()
    }

    pub fn is_vertical(&self) -> bool {
        self.elements
            .iter()
            .flatten()
            .next()
            .map(|(_, s)| s.is_vertical())
            .unwrap_or(false)
    }
}

/// Uniform `n x n` quadrilateral mesh of the unit square with tagged boundary edges.
#[derive(Debug, Clone)]
pub struct StructuredGrid {
    n: usize,
    boundary: BoundarySpec,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Element>,
    edges: Vec<Edge>,
}

impl StructuredGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh size `1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn element_index(&self, row: usize, col: usize) -> usize {
        row * self.n + col
    }

    /// `(row, col)` of an element.
    pub fn element_rc(&self, e: usize) -> (usize, usize) {
        (e / self.n, e % self.n)
    }

    pub fn element_area(&self, _e: usize) -> f64 {
        self.h() * self.h()
    }

    pub fn edge_length(&self, edge: usize) -> f64 {
        let [a, b] = self.edges[edge].nodes;
        let (pa, pb) = (self.nodes[a], self.nodes[b]);
        ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt()
    }

    pub fn count_tag(&self, tag: EdgeTag) -> usize {
        self.edges.iter().filter(|e| e.tag == tag).count()
    }

    /// Total length of Γ_u.
    pub fn dirichlet_length(&self) -> f64 {
        (0..self.edges.len())
            .filter(|&e| self.edges[e].tag == EdgeTag::Dirichlet)
            .map(|e| self.edge_length(e))
            .sum()
    }
}

/// Builds the `n x n` grid, tagging boundary edges inside a sink segment as Dirichlet.
pub fn build_grid(n: usize, boundary: &BoundarySpec) -> Result<StructuredGrid> {
    if n == 0 {
        return Err(Error::GridMismatch("grid size must be at least 1".into()));
    }
    boundary.validate()?;
    boundary.check_snaps(n)?;

    let h = 1.0 / n as f64;
    let np = n + 1;
    let nodes: Vec<[f64; 2]> = (0..np)
        .flat_map(|j| (0..np).map(move |i| [i as f64 * h, j as f64 * h]))
        .collect();

    let n_horizontal = n * np;
    let h_edge = |i: usize, j: usize| j * n + i;
    let v_edge = |i: usize, j: usize| n_horizontal + j * np + i;

    let elements: Vec<Element> = (0..n)
        .flat_map(|row| (0..n).map(move |col| (row, col)))
        .map(|(row, col)| {
            let n0 = row * np + col;
            Element {
                nodes: [n0, n0 + 1, n0 + np + 1, n0 + np],
                edges: [
                    h_edge(col, row),
                    v_edge(col + 1, row),
                    h_edge(col, row + 1),
                    v_edge(col, row),
                ],
            }
        })
        .collect();

    let boundary_tag = |side: Side, t0: f64, t1: f64| {
        let inside = boundary.sinks.iter().any(|s| s.contains(side, t0) && s.contains(side, t1));
        if inside {
            EdgeTag::Dirichlet
        } else {
            EdgeTag::Neumann
        }
    };

    let mut edges = Vec::with_capacity(2 * n * np);
    for j in 0..np {
        for i in 0..n {
            let below = (j > 0).then(|| ((j - 1) * n + i, Side::Top));
            let above = (j < n).then(|| (j * n + i, Side::Bottom));
            let (t0, t1) = (i as f64 * h, (i + 1) as f64 * h);
            let tag = if j == 0 {
                boundary_tag(Side::Bottom, t0, t1)
            } else if j == n {
                boundary_tag(Side::Top, t0, t1)
            } else {
                EdgeTag::Interior
            };
            edges.push(Edge {
                nodes: [j * np + i, j * np + i + 1],
                elements: [below, above],
                tag,
            });
        }
    }
    for j in 0..n {
        for i in 0..np {
            let left = (i > 0).then(|| (j * n + i - 1, Side::Right));
            let right = (i < n).then(|| (j * n + i, Side::Left));
            let (t0, t1) = (j as f64 * h, (j + 1) as f64 * h);
            let tag = if i == 0 {
                boundary_tag(Side::Left, t0, t1)
            } else if i == n {
                boundary_tag(Side::Right, t0, t1)
            } else {
                EdgeTag::Interior
            };
            edges.push(Edge {
                nodes: [j * np + i, (j + 1) * np + i],
                elements: [left, right],
                tag,
            });
        }
    }

    Ok(StructuredGrid {
        n,
        boundary: boundary.clone(),
        nodes,
        elements,
        edges,
    })
}

/// Uniformly refines `grid` by `factor`; Γ_u keeps its geometry.
pub fn refine(grid: &StructuredGrid, factor: usize) -> Result<StructuredGrid> {
    if factor == 0 {
        return Err(Error::GridMismatch("refinement factor must be at least 1".into()));
    }
    build_grid(grid.n * factor, &grid.boundary)
}

/// The model grid M^H of ground cells together with the ratio of the nested computational grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGrid {
    /// Ground cells per side.
    pub cells: usize,
    /// Computational elements per ground cell side.
    pub ratio: usize,
}

impl ModelGrid {
    pub fn new(cells: usize, ratio: usize) -> Result<Self> {
        if cells == 0 || ratio == 0 {
            return Err(Error::GridMismatch(format!(
                "model grid needs positive size and ratio (got {cells}, {ratio})"
            )));
        }
        Ok(ModelGrid { cells, ratio })
    }

    /// Model grid matching a computational grid of size `n`, if `n` is a multiple of `cells`.
    pub fn nested(cells: usize, n: usize) -> Result<Self> {
        if cells == 0 || !n.is_multiple_of(cells) {
            return Err(Error::GridMismatch(format!(
                "computational grid {n} is not nested in model grid {cells}"
            )));
        }
        ModelGrid::new(cells, n / cells)
    }

    /// Computational grid size `r N`.
    pub fn computational_n(&self) -> usize {
        self.cells * self.ratio
    }

    /// Ground cell containing computational element `element`.
    pub fn cell_of_element(&self, element: usize) -> usize {
        let n = self.computational_n();
        let (row, col) = (element / n, element % n);
        (row / self.ratio) * self.cells + col / self.ratio
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn left_full() -> BoundarySpec {
        BoundarySpec::single(Side::Left, 0.5, 1.0)
    }

    #[test]
    fn smallest_grid() {
        let g = build_grid(1, &left_full()).unwrap();
        assert_eq!(g.elements().len(), 1);
        assert_eq!(g.nodes().len(), 4);
        assert_eq!(g.edges().len(), 4);
        assert_eq!(g.count_tag(EdgeTag::Dirichlet), 1);
        assert_eq!(g.count_tag(EdgeTag::Neumann), 3);
    }

    #[test]
    fn default_sink_on_64() {
        let g = build_grid(64, &BoundarySpec::default()).unwrap();
        assert_eq!(g.elements().len(), 4096);
        assert_eq!(g.nodes().len(), 4225);
        // [0.40625, 0.59375] * 64 = [26, 38]
        assert_eq!(g.count_tag(EdgeTag::Dirichlet), 12);
        let expected: Vec<usize> = (26..38).map(|j| 64 * 65 + j * 65).collect();
        let got: Vec<usize> = (0..g.edges().len())
            .filter(|&e| g.edges()[e].tag == EdgeTag::Dirichlet)
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn nonsnapping_segment_is_rejected() {
        let b = BoundarySpec::single(Side::Left, 0.5, 1.0 / 3.0);
        let err = build_grid(64, &b).unwrap_err();
        assert!(matches!(err, Error::NonSnappingSegment { index: 0, .. }));
        assert!(err.to_string().contains("#0"));
        // 0.2 centred at 0.5 does not snap either
        assert!(build_grid(64, &BoundarySpec::single(Side::Left, 0.5, 0.2)).is_err());
    }

    #[test]
    fn counts_and_incidence() {
        for n in [1, 2, 5, 16] {
            let g = build_grid(n, &BoundarySpec::single(Side::Bottom, 0.5, 1.0)).unwrap();
            assert_eq!(g.elements().len(), n * n);
            assert_eq!(g.nodes().len(), (n + 1) * (n + 1));
            for (ei, edge) in g.edges().iter().enumerate() {
                let adj = edge.adjacent().count();
                match edge.tag {
                    EdgeTag::Interior => assert_eq!(adj, 2),
                    _ => assert_eq!(adj, 1),
                }
                for (e, side) in edge.adjacent() {
                    let pos = Side::ALL.iter().position(|&s| s == side).unwrap();
                    assert_eq!(g.elements()[e].edges[pos], ei);
                }
                assert!((g.edge_length(ei) - g.h()).abs() < 1e-15);
            }
            for (e, el) in g.elements().iter().enumerate() {
                for &ed in &el.edges {
                    assert!(g.edges()[ed].adjacent().any(|(x, _)| x == e));
                }
            }
            let area: f64 = (0..n * n).map(|e| g.element_area(e)).sum();
            assert!((area - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn element_corners_are_counterclockwise() {
        let g = build_grid(3, &left_full()).unwrap();
        let el = g.elements()[g.element_index(1, 2)];
        let p: Vec<[f64; 2]> = el.nodes.iter().map(|&i| g.nodes()[i]).collect();
        let h = g.h();
        assert_eq!(p[0], [2.0 * h, h]);
        assert_eq!(p[1], [3.0 * h, h]);
        assert_eq!(p[2], [3.0 * h, 2.0 * h]);
        assert_eq!(p[3], [2.0 * h, 2.0 * h]);
    }

    #[test]
    fn refinement_keeps_sink_geometry() {
        let g = build_grid(64, &BoundarySpec::default()).unwrap();
        let same = refine(&g, 1).unwrap();
        assert_eq!(same.n(), 64);
        assert_eq!(same.edges(), g.edges());
        let fine = refine(&g, 8).unwrap();
        assert_eq!(fine.n(), 512);
        assert!((fine.dirichlet_length() - g.dirichlet_length()).abs() < 1e-14);
        assert!((g.dirichlet_length() - 0.1875).abs() < 1e-14);
    }

    #[test]
    fn sink_edges_are_nested() {
        let g = build_grid(8, &BoundarySpec::single(Side::Top, 0.25, 0.25)).unwrap();
        let chain = [refine(&g, 2).unwrap(), refine(&g, 4).unwrap()];
        let coarse = &g;
        for fine in &chain {
            for (i, e) in fine.edges().iter().enumerate() {
                if e.tag != EdgeTag::Dirichlet {
                    continue;
                }
                let [a, b] = e.nodes;
                let mid = [
                    0.5 * (fine.nodes()[a][0] + fine.nodes()[b][0]),
                    0.5 * (fine.nodes()[a][1] + fine.nodes()[b][1]),
                ];
                assert!(coarse.boundary().is_dirichlet_point(mid[0], mid[1]), "edge {i}");
            }
        }
    }

    #[test]
    fn cell_mapping() {
        let m = ModelGrid::new(5, 1).unwrap();
        for e in 0..25 {
            assert_eq!(m.cell_of_element(e), e);
        }
        let m = ModelGrid::new(2, 2).unwrap();
        // element (row 3, col 0) on the 4x4 grid
        assert_eq!(m.cell_of_element(3 * 4), 2);
        let m = ModelGrid::new(64, 8).unwrap();
        assert_eq!(m.cell_of_element(511 * 512 + 511), 63 * 64 + 63);
        assert!(ModelGrid::nested(64, 100).is_err());
    }
}
