//! Proximity graph over segments: nodes are segments, an undirected edge
//! joins two segments whose control points lie strictly closer than the
//! threshold. Control points are defined on the target geometry, so the graph
//! never changes while offsets move.

use crate::layout::Segment;

/// Default distance threshold for connecting two segments.
pub const PROXIMITY_THRESHOLD_NM: f64 = 250.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentGraph {
    node_count: usize,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl SegmentGraph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Unordered edge pairs (u < v), sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Plain-text edge list, one "u v" pair per line, for inspection.
    pub fn dump_edges(&self) -> String {
        let mut out = String::new();
        for (u, v) in &self.edges {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }
}

/// Connects segments whose control points are strictly closer than
/// `threshold_nm` (Euclidean). Segment ids index the canonical order.
pub fn build_graph(segments: &[Segment], threshold_nm: f64) -> SegmentGraph {
    let n = segments.len();
    let limit = threshold_nm * threshold_nm;
    let mut neighbors = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for u in 0..n {
        let (ux, uy) = segments[u].control_point;
        for v in u + 1..n {
            let (vx, vy) = segments[v].control_point;
            let d2 = (ux - vx) * (ux - vx) + (uy - vy) * (uy - vy);
            if d2 < limit {
                neighbors[u].push(v);
                neighbors[v].push(u);
                edges.push((u, v));
            }
        }
    }
    SegmentGraph {
        node_count: n,
        neighbors,
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{self, Axis, Layout, LayerKind, MaskState, Point};

    fn seg_at(id: usize, x: f64, y: f64) -> Segment {
        Segment {
            id,
            polygon: 0,
            axis: Axis::Horizontal,
            span: (Point::new(0, 0), Point::new(10, 0)),
            control_point: (x, y),
            outward: (0, -1),
            measure_point: None,
        }
    }

    #[test]
    fn threshold_is_strict() {
        let g = build_graph(
            &[seg_at(0, 0.0, 0.0), seg_at(1, 0.0, 249.0)],
            PROXIMITY_THRESHOLD_NM,
        );
        assert_eq!(g.edges(), &[(0, 1)]);

        let g = build_graph(
            &[seg_at(0, 0.0, 0.0), seg_at(1, 0.0, 250.0)],
            PROXIMITY_THRESHOLD_NM,
        );
        assert!(g.edges().is_empty());
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn single_segment_has_no_edges() {
        let g = build_graph(&[seg_at(0, 5.0, 5.0)], PROXIMITY_THRESHOLD_NM);
        assert!(g.edges().is_empty());
        assert!(g.neighbors(0).is_empty());
    }

    #[test]
    fn adjacency_is_symmetric_and_irreflexive() {
        let segs: Vec<Segment> = (0..6)
            .map(|i| seg_at(i, (i as f64) * 90.0, ((i % 2) as f64) * 40.0))
            .collect();
        let g = build_graph(&segs, PROXIMITY_THRESHOLD_NM);
        for u in 0..segs.len() {
            assert!(!g.neighbors(u).contains(&u));
            for &v in g.neighbors(u) {
                assert!(g.neighbors(v).contains(&u));
            }
        }
        for &(u, v) in g.edges() {
            assert!(u < v);
        }
    }

    fn two_via_layout() -> Layout {
        let mut l = Layout::new(2000, 2000, LayerKind::Via);
        l.targets = vec![layout::square(500, 500, 70), layout::square(700, 500, 70)];
        l
    }

    #[test]
    fn graph_survives_offset_updates() {
        let mut mask = MaskState::new(two_via_layout()).unwrap();
        let before = build_graph(mask.segments(), PROXIMITY_THRESHOLD_NM);
        mask.set_uniform_offset(3).unwrap();
        mask.nudge(0, -2);
        let after = build_graph(mask.segments(), PROXIMITY_THRESHOLD_NM);
        assert_eq!(before, after);
        // The two vias sit 200nm apart, so cross-polygon edges exist.
        assert!(before
            .edges()
            .iter()
            .any(|&(u, v)| mask.segments()[u].polygon != mask.segments()[v].polygon));
    }

    #[test]
    fn input_order_is_canonicalized_away() {
        let mut a = two_via_layout();
        let mut b = two_via_layout();
        b.targets.reverse();
        a.canonicalize();
        b.canonicalize();
        let ga = build_graph(MaskState::new(a).unwrap().segments(), PROXIMITY_THRESHOLD_NM);
        let gb = build_graph(MaskState::new(b).unwrap().segments(), PROXIMITY_THRESHOLD_NM);
        assert_eq!(ga, gb);
    }

    #[test]
    fn dump_lists_sorted_pairs() {
        let g = build_graph(
            &[
                seg_at(0, 0.0, 0.0),
                seg_at(1, 100.0, 0.0),
                seg_at(2, 600.0, 0.0),
                seg_at(3, 700.0, 0.0),
            ],
            PROXIMITY_THRESHOLD_NM,
        );
        assert_eq!(g.dump_edges(), "0 1\n2 3\n");
    }
}
