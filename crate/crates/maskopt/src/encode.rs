//! Squish-pattern encoding of control-point neighborhoods into fixed-size
//! feature tensors.
//!
//! Each segment's 500x500nm window is encoded losslessly as an occupancy
//! matrix plus scanline spacing vectors, then centered into a fixed canvas
//! (128 for via layers, 64 for metal) as three channels: occupancy, row
//! heights, column widths (spacings normalized by the window size, broadcast
//! over the occupied block). A second stack repeats the encoding with extra
//! scanlines at every target-pattern edge coordinate, highlighting how far
//! mask edges have moved; the concatenation is the 6-channel node feature.

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::layout::{LayerKind, LayoutError, MaskState, RectilinearPolygon};

/// Side of the square neighborhood window around a control point.
pub const WINDOW_NM: f64 = 500.0;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("{axis} scanline count {count} exceeds canvas capacity {capacity}")]
    Overflow {
        axis: &'static str,
        count: usize,
        capacity: usize,
    },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Axis-aligned rectangle in window-local coordinates. Coordinates are
/// half-integral at worst (windows are centered on segment midpoints), so
/// they stay exact in f64.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectf {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rectf {
    fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 < x && x < self.x1 && self.y0 < y && y < self.y1
    }
}

/// Lossless grid encoding of rectilinear geometry: scanlines at every edge
/// coordinate (plus the window borders) cut the window into cells, and
/// `occupancy` marks the cells covered by geometry. Row 0 is the bottom row.
#[derive(Debug, Clone, PartialEq)]
pub struct SquishEncoding {
    pub occupancy: Array2<bool>,
    pub delta_x: Vec<f64>,
    pub delta_y: Vec<f64>,
}

/// Canvas side for the adapted feature tensor of this layer kind.
pub fn canvas_for(layer: LayerKind) -> usize {
    match layer {
        LayerKind::Via => 128,
        LayerKind::Metal => 64,
    }
}

/// Clips the polygons to the window centered at `center` and returns the
/// covered area as rectangles in window-local coordinates.
pub fn clip_to_window(polys: &[RectilinearPolygon], center: (f64, f64)) -> Vec<Rectf> {
    let ox = center.0 - WINDOW_NM / 2.0;
    let oy = center.1 - WINDOW_NM / 2.0;
    let mut out = Vec::new();
    for poly in polys {
        for r in poly.decompose_rects() {
            let x0 = (r.x0 as f64 - ox).max(0.0);
            let y0 = (r.y0 as f64 - oy).max(0.0);
            let x1 = (r.x1 as f64 - ox).min(WINDOW_NM);
            let y1 = (r.y1 as f64 - oy).min(WINDOW_NM);
            if x0 < x1 && y0 < y1 {
                out.push(Rectf { x0, y0, x1, y1 });
            }
        }
    }
    out
}

fn scanlines(bounds: impl Iterator<Item = f64>, extra: &[f64]) -> Vec<f64> {
    let mut lines: Vec<f64> = bounds
        .chain(extra.iter().copied())
        .filter(|v| (0.0..=WINDOW_NM).contains(v))
        .chain([0.0, WINDOW_NM])
        .collect();
    lines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lines.dedup();
    lines
}

/// Encodes window-local geometry. `extra_x`/`extra_y` add scanlines beyond
/// the geometry's own edge coordinates; values outside the window are
/// ignored. Scanlines at every edge guarantee each cell is uniformly covered
/// or uncovered, which is what makes the encoding lossless.
pub fn squish(rects: &[Rectf], extra_x: &[f64], extra_y: &[f64]) -> SquishEncoding {
    let xs = scanlines(
        rects.iter().flat_map(|r| [r.x0, r.x1]),
        extra_x,
    );
    let ys = scanlines(
        rects.iter().flat_map(|r| [r.y0, r.y1]),
        extra_y,
    );
    let cols = xs.len() - 1;
    let rows = ys.len() - 1;
    let mut occupancy = Array2::from_elem((rows, cols), false);
    for r in 0..rows {
        let cy = (ys[r] + ys[r + 1]) / 2.0;
        for c in 0..cols {
            let cx = (xs[c] + xs[c + 1]) / 2.0;
            if rects.iter().any(|rect| rect.contains(cx, cy)) {
                occupancy[(r, c)] = true;
            }
        }
    }
    SquishEncoding {
        occupancy,
        delta_x: xs.windows(2).map(|w| w[1] - w[0]).collect(),
        delta_y: ys.windows(2).map(|w| w[1] - w[0]).collect(),
    }
}

/// Expands the encoding back into the rectangles of its occupied cells.
pub fn reconstruct(enc: &SquishEncoding) -> Vec<Rectf> {
    let mut xs = vec![0.0];
    for d in &enc.delta_x {
        xs.push(xs.last().unwrap() + d);
    }
    let mut ys = vec![0.0];
    for d in &enc.delta_y {
        ys.push(ys.last().unwrap() + d);
    }
    let mut out = Vec::new();
    for ((r, c), &on) in enc.occupancy.indexed_iter() {
        if on {
            out.push(Rectf {
                x0: xs[c],
                y0: ys[r],
                x1: xs[c + 1],
                y1: ys[r + 1],
            });
        }
    }
    out
}

/// Centers the encoding into a `dy x dx` canvas as three channels:
/// 0 occupancy, 1 normalized row height broadcast along its row, 2 normalized
/// column width broadcast along its column. Channels are zero outside the
/// occupied block.
pub fn adapt(enc: &SquishEncoding, dx: usize, dy: usize) -> Result<Array3<f64>, EncodeError> {
    let (rows, cols) = enc.occupancy.dim();
    if cols > dx {
        return Err(EncodeError::Overflow {
            axis: "x",
            count: cols,
            capacity: dx,
        });
    }
    if rows > dy {
        return Err(EncodeError::Overflow {
            axis: "y",
            count: rows,
            capacity: dy,
        });
    }
    let row_off = (dy - rows) / 2;
    let col_off = (dx - cols) / 2;
    let mut out = Array3::zeros((dy, dx, 3));
    for r in 0..rows {
        for c in 0..cols {
            let (rr, cc) = (row_off + r, col_off + c);
            if enc.occupancy[(r, c)] {
                out[(rr, cc, 0)] = 1.0;
            }
            out[(rr, cc, 1)] = enc.delta_y[r] / WINDOW_NM;
            out[(rr, cc, 2)] = enc.delta_x[c] / WINDOW_NM;
        }
    }
    Ok(out)
}

fn target_edge_scanlines(
    targets: &[RectilinearPolygon],
    center: (f64, f64),
) -> (Vec<f64>, Vec<f64>) {
    let ox = center.0 - WINDOW_NM / 2.0;
    let oy = center.1 - WINDOW_NM / 2.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for poly in targets {
        let ring = poly.vertices();
        let n = ring.len();
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            if a.x == b.x {
                xs.push(a.x as f64 - ox);
            } else {
                ys.push(a.y as f64 - oy);
            }
        }
    }
    (xs, ys)
}

/// Builds the 6-channel feature tensor for one segment: channels 0..3 encode
/// the current mask geometry (displaced targets plus SRAFs), channels 3..6
/// re-encode the same geometry with additional scanlines at every
/// target-pattern edge coordinate in both axes.
pub fn node_features(mask: &MaskState, segment: usize) -> Result<Array3<f64>, EncodeError> {
    let layout = mask.layout();
    let canvas = canvas_for(layout.layer);
    let center = mask.segments()[segment].control_point;
    let geometry = mask.full_mask()?;
    let rects = clip_to_window(&geometry, center);

    let plain = adapt(&squish(&rects, &[], &[]), canvas, canvas)?;
    let (tx, ty) = target_edge_scanlines(&layout.targets, center);
    let augmented = adapt(&squish(&rects, &tx, &ty), canvas, canvas)?;

    let mut out = Array3::zeros((canvas, canvas, 6));
    for r in 0..canvas {
        for c in 0..canvas {
            for ch in 0..3 {
                out[(r, c, ch)] = plain[(r, c, ch)];
                out[(r, c, ch + 3)] = augmented[(r, c, ch)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{self, Layout, MaskState};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Independent coverage comparison: overlay both rectangle sets on the
    // grid of all their coordinates and sum the area where membership
    // disagrees.
    fn symmetric_difference_area(a: &[Rectf], b: &[Rectf]) -> f64 {
        let mut xs: Vec<f64> = a
            .iter()
            .chain(b)
            .flat_map(|r| [r.x0, r.x1])
            .chain([0.0, WINDOW_NM])
            .collect();
        let mut ys: Vec<f64> = a
            .iter()
            .chain(b)
            .flat_map(|r| [r.y0, r.y1])
            .chain([0.0, WINDOW_NM])
            .collect();
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        xs.dedup();
        ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
        ys.dedup();
        let covered = |set: &[Rectf], x: f64, y: f64| set.iter().any(|r| r.contains(x, y));
        let mut area = 0.0;
        for w in ys.windows(2) {
            let cy = (w[0] + w[1]) / 2.0;
            for v in xs.windows(2) {
                let cx = (v[0] + v[1]) / 2.0;
                if covered(a, cx, cy) != covered(b, cx, cy) {
                    area += (v[1] - v[0]) * (w[1] - w[0]);
                }
            }
        }
        area
    }

    #[test]
    fn empty_window_is_a_single_dark_cell() {
        let enc = squish(&[], &[], &[]);
        assert_eq!(enc.delta_x, vec![WINDOW_NM]);
        assert_eq!(enc.delta_y, vec![WINDOW_NM]);
        assert_eq!(enc.occupancy.dim(), (1, 1));
        assert!(!enc.occupancy[(0, 0)]);
    }

    #[test]
    fn centered_square_produces_three_by_three() {
        let rect = Rectf {
            x0: 200.0,
            y0: 200.0,
            x1: 300.0,
            y1: 300.0,
        };
        let enc = squish(&[rect], &[], &[]);
        assert_eq!(enc.delta_x, vec![200.0, 100.0, 200.0]);
        assert_eq!(enc.delta_y, vec![200.0, 100.0, 200.0]);
        for ((r, c), &on) in enc.occupancy.indexed_iter() {
            assert_eq!(on, (r, c) == (1, 1));
        }
    }

    #[test]
    fn squish_roundtrip_on_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..200 {
            let n = rng.gen_range(0..8);
            let rects: Vec<Rectf> = (0..n)
                .map(|_| {
                    // Half-integral coordinates, matching what windows around
                    // segment midpoints produce.
                    let mut coord = || rng.gen_range(0..=998) as f64 / 2.0;
                    let (a, b) = (coord(), coord());
                    let (c, d) = (coord(), coord());
                    Rectf {
                        x0: a.min(b),
                        x1: (a.max(b)) + 1.0,
                        y0: c.min(d),
                        y1: (c.max(d)) + 1.0,
                    }
                })
                .map(|r| Rectf {
                    x1: r.x1.min(WINDOW_NM),
                    y1: r.y1.min(WINDOW_NM),
                    ..r
                })
                .collect();
            let enc = squish(&rects, &[], &[]);
            assert_eq!(enc.delta_x.iter().sum::<f64>(), WINDOW_NM);
            assert_eq!(enc.delta_y.iter().sum::<f64>(), WINDOW_NM);
            let back = reconstruct(&enc);
            assert_eq!(symmetric_difference_area(&rects, &back), 0.0);
        }
    }

    #[test]
    fn extra_scanlines_do_not_change_coverage() {
        let rect = Rectf {
            x0: 120.0,
            y0: 80.0,
            x1: 370.0,
            y1: 440.0,
        };
        let plain = squish(&[rect], &[], &[]);
        let refined = squish(&[rect], &[33.0, 250.0, 999.0], &[77.5]);
        assert_eq!(
            symmetric_difference_area(&reconstruct(&plain), &reconstruct(&refined)),
            0.0
        );
        // The out-of-window extra was dropped, the in-window ones add cells.
        assert_eq!(refined.delta_x.len(), plain.delta_x.len() + 2);
        assert_eq!(refined.delta_y.len(), plain.delta_y.len() + 1);
    }

    #[test]
    fn adapt_centers_the_block() {
        let rect = Rectf {
            x0: 200.0,
            y0: 200.0,
            x1: 300.0,
            y1: 300.0,
        };
        let enc = squish(&[rect], &[], &[]);
        let t = adapt(&enc, 64, 64).unwrap();
        assert_eq!(t.dim(), (64, 64, 3));
        assert_eq!(t[(31, 31, 0)], 1.0);
        for r in 0..64 {
            for c in 0..64 {
                let in_block = (30..33).contains(&r) && (30..33).contains(&c);
                if !in_block {
                    assert_eq!(t[(r, c, 0)], 0.0);
                    assert_eq!(t[(r, c, 1)], 0.0);
                    assert_eq!(t[(r, c, 2)], 0.0);
                }
            }
        }
        assert_eq!(t[(30, 30, 1)], 200.0 / 500.0);
        assert_eq!(t[(31, 30, 1)], 100.0 / 500.0);
        assert_eq!(t[(30, 31, 2)], 100.0 / 500.0);
        // Spacing channels sum to 1 along their axis within the block.
        for c in 30..33 {
            let sum: f64 = (30..33).map(|r| t[(r, c, 1)]).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        for r in 30..33 {
            let sum: f64 = (30..33).map(|c| t[(r, c, 2)]).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn adapt_reports_overflow() {
        let rects: Vec<Rectf> = (0..40)
            .map(|i| Rectf {
                x0: i as f64 * 12.0,
                y0: 0.0,
                x1: i as f64 * 12.0 + 6.0,
                y1: 500.0,
            })
            .collect();
        let enc = squish(&rects, &[], &[]);
        match adapt(&enc, 64, 64) {
            Err(EncodeError::Overflow { axis: "x", count, capacity: 64 }) => {
                assert!(count > 64);
            }
            other => panic!("expected x overflow, got {other:?}"),
        }
    }

    #[test]
    fn adapt_zero_occupancy_keeps_spans() {
        let enc = squish(&[], &[], &[]);
        let t = adapt(&enc, 64, 64).unwrap();
        assert!(t.slice(ndarray::s![.., .., 0]).iter().all(|&v| v == 0.0));
        assert_eq!(t[(31, 31, 1)], 1.0);
        assert_eq!(t[(31, 31, 2)], 1.0);
    }

    fn one_via_mask() -> MaskState {
        let mut l = Layout::new(2000, 2000, crate::layout::LayerKind::Via);
        l.targets = vec![layout::square(965, 965, 70)];
        MaskState::new(l).unwrap()
    }

    #[test]
    fn node_features_shapes_follow_layer() {
        let via = one_via_mask();
        assert_eq!(node_features(&via, 0).unwrap().dim(), (128, 128, 6));

        let mut l = Layout::new(1000, 1000, crate::layout::LayerKind::Metal);
        l.targets = vec![layout::rect_poly(200, 400, 800, 460)];
        let metal = MaskState::new(l).unwrap();
        assert_eq!(node_features(&metal, 0).unwrap().dim(), (64, 64, 6));
    }

    #[test]
    fn stacks_encode_identical_geometry_at_zero_offset() {
        let mask = one_via_mask();
        let center = mask.segments()[0].control_point;
        let geometry = mask.full_mask().unwrap();
        let rects = clip_to_window(&geometry, center);
        let (tx, ty) = target_edge_scanlines(&mask.layout().targets, center);
        let plain = squish(&rects, &[], &[]);
        let augmented = squish(&rects, &tx, &ty);
        assert_eq!(
            symmetric_difference_area(&reconstruct(&plain), &reconstruct(&augmented)),
            0.0
        );
    }

    #[test]
    fn moving_a_segment_changes_the_mask_stack_only() {
        let mut mask = one_via_mask();
        let before = node_features(&mask, 0).unwrap();
        mask.nudge(0, 2);
        let after = node_features(&mask, 0).unwrap();
        assert_ne!(before, after);

        // The target-edge scanlines persist in the augmented stack: the
        // target's own coordinates still bound occupancy transitions there.
        let center = mask.segments()[0].control_point;
        let (tx, _) = target_edge_scanlines(&mask.layout().targets, center);
        let rects = clip_to_window(&mask.full_mask().unwrap(), center);
        let aug = squish(&rects, &tx, &[]);
        let mut xs = vec![0.0];
        for d in &aug.delta_x {
            xs.push(xs.last().unwrap() + d);
        }
        for t in tx {
            assert!(xs.iter().any(|&x| x == t), "target scanline {t} missing");
        }
    }

    #[test]
    fn node_features_are_deterministic() {
        let mut mask = one_via_mask();
        mask.set_uniform_offset(3).unwrap();
        let a = node_features(&mask, 2).unwrap();
        let b = node_features(&mask, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_integral_control_points_stay_exact() {
        // A 181nm-tall bar: vertical edge splits give half-integral segment
        // midpoints, so the window origin is half-integral too.
        let mut l = Layout::new(1000, 1000, crate::layout::LayerKind::Metal);
        l.targets = vec![layout::rect_poly(400, 300, 460, 481)];
        let mask = MaskState::new(l).unwrap();
        let seg = mask
            .segments()
            .iter()
            .position(|s| s.control_point.1.fract() != 0.0)
            .expect("expected a half-integral midpoint");
        let center = mask.segments()[seg].control_point;
        let rects = clip_to_window(&mask.full_mask().unwrap(), center);
        let enc = squish(&rects, &[], &[]);
        assert_eq!(enc.delta_x.iter().sum::<f64>(), WINDOW_NM);
        assert_eq!(enc.delta_y.iter().sum::<f64>(), WINDOW_NM);
        let back = reconstruct(&enc);
        assert_eq!(symmetric_difference_area(&rects, &back), 0.0);
        assert!(node_features(&mask, seg).is_ok());
    }
}
