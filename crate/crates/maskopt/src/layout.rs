//! Clip geometry: rectilinear polygons, edge fragmentation, and mask
//! materialization.
//!
//! All geometry lives on an integer nanometer grid. A clip holds target
//! polygons (the shapes we want printed) plus optional SRAF polygons that are
//! carried through to the mask unchanged. Fragmentation cuts every target
//! edge into segments with a canonical ordering: polygons by index, then
//! clockwise boundary traversal starting from the leftmost-lowest vertex.
//! Each segment can later be displaced along its outward normal; materializing
//! those offsets rebuilds mask polygons, inserting jogs where adjacent
//! collinear segments disagree.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

/// Side length of a via target; via layers only contain squares of this size.
pub const VIA_SIDE_NM: i32 = 70;
/// Spacing of measure points along metal edges parallel to the primary
/// direction.
pub const MEASURE_PITCH_NM: i32 = 60;
/// Shortest polygon edge fragmentation accepts.
pub const MIN_EDGE_NM: i64 = 4;
/// Largest segment displacement a mask state will hold, in either direction.
pub const DEFAULT_OFFSET_BOUND_NM: i32 = 40;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown layer {value:?} (expected \"via\" or \"metal\")")]
    UnknownLayer { line: usize, value: String },
    #[error("non-rectilinear polygon at {place}")]
    NonRectilinear { place: String },
    #[error("out-of-bounds vertex at {place}")]
    OutOfBounds { place: String },
    #[error("polygon {polygon}: edge of length {length}nm is below the {MIN_EDGE_NM}nm minimum")]
    DegenerateEdge { polygon: usize, length: i64 },
    #[error("polygon {polygon}: offsets produce a self-intersecting outline")]
    SelfIntersection { polygon: usize },
    #[error("targets {a} and {b} overlap")]
    OverlappingTargets { a: usize, b: usize },
    #[error("polygon {polygon}: via targets must be {VIA_SIDE_NM}x{VIA_SIDE_NM} squares")]
    NotViaSquare { polygon: usize },
    #[error("segment {segment}: offset {offset}nm exceeds bound +-{bound}nm")]
    OffsetOutOfRange {
        segment: usize,
        offset: i32,
        bound: i32,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Integer nanometer point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub fn new(x: i32, y: i32) -> Self {
        Point { x, y }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Via,
    Metal,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Via => "via",
            LayerKind::Metal => "metal",
        }
    }
}

/// Axis-aligned rectangle with `x0 < x1` and `y0 < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Rect {
    pub fn area(&self) -> i64 {
        (self.x1 - self.x0) as i64 * (self.y1 - self.y0) as i64
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Simple rectilinear polygon stored as a counter-clockwise vertex ring
/// starting at the leftmost-lowest vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RectilinearPolygon {
    vertices: Vec<Point>,
}

impl RectilinearPolygon {
    /// Validates and canonicalizes a vertex ring. Either winding is accepted;
    /// the stored ring is CCW and starts at the leftmost-lowest vertex.
    pub fn new(vertices: Vec<Point>) -> Result<Self, LayoutError> {
        Self::with_place(vertices, "polygon")
    }

    fn with_place(mut vertices: Vec<Point>, place: &str) -> Result<Self, LayoutError> {
        let bad = |msg: &str| LayoutError::NonRectilinear {
            place: format!("{place}: {msg}"),
        };
        if vertices.len() < 4 || vertices.len() % 2 != 0 {
            return Err(bad("vertex count must be even and at least 4"));
        }
        let n = vertices.len();
        let mut axes = Vec::with_capacity(n);
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let axis = match (a.x == b.x, a.y == b.y) {
                (true, false) => Axis::Vertical,
                (false, true) => Axis::Horizontal,
                _ => return Err(bad(&format!("edge {a}->{b} is not axis-parallel"))),
            };
            axes.push(axis);
        }
        for i in 0..n {
            if axes[i] == axes[(i + 1) % n] {
                return Err(bad("consecutive edges share an axis (collinear vertex)"));
            }
        }
        if !ring_is_simple(&vertices) {
            return Err(bad("outline self-intersects"));
        }
        let area2 = shoelace2(&vertices);
        if area2 == 0 {
            return Err(bad("zero area"));
        }
        if area2 < 0 {
            vertices.reverse();
        }
        let start = lowest_leftmost_index(&vertices);
        vertices.rotate_left(start);
        Ok(RectilinearPolygon { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> i64 {
        shoelace2(&self.vertices) / 2
    }

    pub fn bbox(&self) -> Rect {
        let xs = self.vertices.iter().map(|p| p.x);
        let ys = self.vertices.iter().map(|p| p.y);
        Rect {
            x0: xs.clone().min().unwrap(),
            x1: xs.max().unwrap(),
            y0: ys.clone().min().unwrap(),
            y1: ys.max().unwrap(),
        }
    }

    /// Splits the polygon into disjoint rectangles by sweeping horizontal
    /// slabs between consecutive distinct vertex heights.
    pub fn decompose_rects(&self) -> Vec<Rect> {
        let n = self.vertices.len();
        let mut ys: Vec<i32> = self.vertices.iter().map(|p| p.y).collect();
        ys.sort_unstable();
        ys.dedup();

        let mut vedges = Vec::new();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if a.x == b.x {
                vedges.push((a.x, a.y.min(b.y), a.y.max(b.y)));
            }
        }

        let mut rects = Vec::new();
        for slab in ys.windows(2) {
            let (lo, hi) = (slab[0], slab[1]);
            let mut xs: Vec<i32> = vedges
                .iter()
                .filter(|&&(_, y0, y1)| y0 <= lo && y1 >= hi)
                .map(|&(x, _, _)| x)
                .collect();
            xs.sort_unstable();
            for pair in xs.chunks_exact(2) {
                rects.push(Rect {
                    x0: pair[0],
                    y0: lo,
                    x1: pair[1],
                    y1: hi,
                });
            }
        }
        rects
    }
}

fn shoelace2(ring: &[Point]) -> i64 {
    let n = ring.len();
    let mut acc = 0i64;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a.x as i64 * b.y as i64 - b.x as i64 * a.y as i64;
    }
    acc
}

fn lowest_leftmost_index(ring: &[Point]) -> usize {
    let mut best = 0;
    for (i, p) in ring.iter().enumerate() {
        let b = ring[best];
        if (p.x, p.y) < (b.x, b.y) {
            best = i;
        }
    }
    best
}

/// Checks that no two non-adjacent edges of the ring touch. Adjacent edges
/// are perpendicular by construction and meet exactly at their shared vertex.
fn ring_is_simple(ring: &[Point]) -> bool {
    #[derive(Clone, Copy)]
    struct Edge {
        axis: Axis,
        fixed: i32,
        lo: i32,
        hi: i32,
    }
    let n = ring.len();
    let edges: Vec<Edge> = (0..n)
        .map(|i| {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            if a.x == b.x {
                Edge {
                    axis: Axis::Vertical,
                    fixed: a.x,
                    lo: a.y.min(b.y),
                    hi: a.y.max(b.y),
                }
            } else {
                Edge {
                    axis: Axis::Horizontal,
                    fixed: a.y,
                    lo: a.x.min(b.x),
                    hi: a.x.max(b.x),
                }
            }
        })
        .collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (edges[i], edges[j]);
            let touch = match (a.axis, b.axis) {
                (Axis::Horizontal, Axis::Horizontal) | (Axis::Vertical, Axis::Vertical) => {
                    a.fixed == b.fixed && a.lo.max(b.lo) <= a.hi.min(b.hi)
                }
                (Axis::Horizontal, Axis::Vertical) => {
                    a.lo <= b.fixed && b.fixed <= a.hi && b.lo <= a.fixed && a.fixed <= b.hi
                }
                (Axis::Vertical, Axis::Horizontal) => {
                    b.lo <= a.fixed && a.fixed <= b.hi && a.lo <= b.fixed && b.fixed <= a.hi
                }
            };
            if touch {
                return false;
            }
        }
    }
    true
}

/// One clip: dimensions, layer kind, target polygons, and pass-through SRAFs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub width_nm: i32,
    pub height_nm: i32,
    pub layer: LayerKind,
    pub targets: Vec<RectilinearPolygon>,
    pub srafs: Vec<RectilinearPolygon>,
}

impl Layout {
    pub fn new(width_nm: i32, height_nm: i32, layer: LayerKind) -> Self {
        Layout {
            width_nm,
            height_nm,
            layer,
            targets: Vec::new(),
            srafs: Vec::new(),
        }
    }

    /// Full semantic validation, beyond the structural checks `read_layout`
    /// performs: in-bounds geometry, pairwise-disjoint polygons, and the
    /// via-square convention. Entry points that fragment a clip call this.
    pub fn validate(&self) -> Result<(), LayoutError> {
        if self.width_nm <= 0 || self.height_nm <= 0 {
            return Err(LayoutError::Parse {
                line: 0,
                msg: "clip dimensions must be positive".into(),
            });
        }
        for (kind, polys) in [("target", &self.targets), ("sraf", &self.srafs)] {
            for (i, poly) in polys.iter().enumerate() {
                let b = poly.bbox();
                if b.x0 < 0 || b.y0 < 0 || b.x1 > self.width_nm || b.y1 > self.height_nm {
                    return Err(LayoutError::OutOfBounds {
                        place: format!("{kind} {i}"),
                    });
                }
            }
        }
        if self.layer == LayerKind::Via {
            for (i, poly) in self.targets.iter().enumerate() {
                let b = poly.bbox();
                let square = poly.vertices().len() == 4
                    && b.x1 - b.x0 == VIA_SIDE_NM
                    && b.y1 - b.y0 == VIA_SIDE_NM;
                if !square {
                    return Err(LayoutError::NotViaSquare { polygon: i });
                }
            }
        }
        let all: Vec<Vec<Rect>> = self
            .targets
            .iter()
            .chain(self.srafs.iter())
            .map(|p| p.decompose_rects())
            .collect();
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                let clash = all[i]
                    .iter()
                    .any(|ra| all[j].iter().any(|rb| ra.overlaps(rb)));
                if clash {
                    return Err(LayoutError::OverlappingTargets { a: i, b: j });
                }
            }
        }
        Ok(())
    }

    /// Sorts polygons by their canonical start vertex so that two layouts
    /// listing the same shapes in different file order compare equal.
    pub fn canonicalize(&mut self) {
        let key = |p: &RectilinearPolygon| {
            let v = p.vertices()[0];
            (v.x, v.y)
        };
        self.targets.sort_by_key(key);
        self.srafs.sort_by_key(key);
    }
}

/// One movable piece of a target edge.
///
/// `span` runs in clockwise traversal order, so consecutive segments of a
/// polygon share endpoints. The control point is the exact span midpoint
/// (half-integral for odd lengths) and `outward` is the unit normal pointing
/// away from the polygon interior. Segments on metal edges perpendicular to
/// the primary direction carry no measure point.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: usize,
    pub polygon: usize,
    pub axis: Axis,
    pub span: (Point, Point),
    pub control_point: (f64, f64),
    pub outward: (i32, i32),
    pub measure_point: Option<(f64, f64)>,
}

impl Segment {
    pub fn len_nm(&self) -> i64 {
        let (a, b) = self.span;
        ((b.x - a.x).abs() + (b.y - a.y).abs()) as i64
    }
}

fn midpoint(a: Point, b: Point) -> (f64, f64) {
    (
        (a.x as f64 + b.x as f64) / 2.0,
        (a.y as f64 + b.y as f64) / 2.0,
    )
}

/// Measure point offsets from the lower/left end of an edge of length `len`.
///
/// `n = floor(len / pitch)` points (one when shorter than the pitch) sit at
/// the pitch spacing, symmetric about the edge midpoint; odd remainders shift
/// the pattern half a nanometer so everything stays on the integer grid, with
/// the extra nanometer going to the lower/left end segment.
fn measure_offsets(len: i64, pitch: i64) -> Vec<i64> {
    let n = (len / pitch).max(1);
    let first = (len - pitch * (n - 1) + 1) / 2;
    (0..n).map(|i| first + pitch * i).collect()
}

/// Segment boundary offsets matching [`measure_offsets`]: interior segments
/// are one pitch long and centered on their measure point, the two end
/// segments absorb the remainder.
fn segment_bounds(len: i64, pitch: i64) -> Vec<i64> {
    let marks = measure_offsets(len, pitch);
    let mut bounds = Vec::with_capacity(marks.len() + 1);
    bounds.push(0);
    for pair in marks.windows(2) {
        bounds.push((pair[0] + pair[1]) / 2);
    }
    bounds.push(len);
    bounds
}

/// Cuts every target edge of the layout into segments, in canonical order.
pub fn fragment(layout: &Layout) -> Result<Vec<Segment>, LayoutError> {
    layout.validate()?;
    let mut segments = Vec::new();
    for (poly_idx, poly) in layout.targets.iter().enumerate() {
        let ring = poly.vertices();
        let n = ring.len();
        let bbox = poly.bbox();
        let primary = if bbox.x1 - bbox.x0 >= bbox.y1 - bbox.y0 {
            Axis::Horizontal
        } else {
            Axis::Vertical
        };

        // Clockwise traversal of a CCW ring that starts at the canonical
        // vertex: first edge runs from vertices[0] to vertices[n-1].
        for step in 0..n {
            let a = ring[(n - step) % n];
            let b = ring[n - step - 1];
            let axis = if a.x == b.x {
                Axis::Vertical
            } else {
                Axis::Horizontal
            };
            let len = ((b.x - a.x).abs() + (b.y - a.y).abs()) as i64;
            if len < MIN_EDGE_NM {
                return Err(LayoutError::DegenerateEdge {
                    polygon: poly_idx,
                    length: len,
                });
            }
            // Clockwise travel keeps the interior on the left, so the
            // outward normal is the travel direction rotated left.
            let (ex, ey) = (b.x - a.x, b.y - a.y);
            let outward = ((-ey).signum(), ex.signum());

            let make = |span: (Point, Point), mp: Option<(f64, f64)>, id: usize| Segment {
                id,
                polygon: poly_idx,
                axis,
                span,
                control_point: midpoint(span.0, span.1),
                outward,
                measure_point: mp,
            };

            let whole_edge = layout.layer == LayerKind::Via
                || (layout.layer == LayerKind::Metal && axis != primary);
            if whole_edge {
                let mp = (layout.layer == LayerKind::Via).then(|| midpoint(a, b));
                segments.push(make((a, b), mp, segments.len()));
                continue;
            }

            // Metal edge parallel to the primary direction: measure-point
            // driven split, parameterized from the lower/left end.
            let marks = measure_offsets(len, MEASURE_PITCH_NM as i64);
            let bounds = segment_bounds(len, MEASURE_PITCH_NM as i64);
            let forward = b.x > a.x || b.y > a.y;
            let at = |t: i64| -> Point {
                let t = if forward { t } else { len - t };
                match axis {
                    Axis::Horizontal => Point::new(a.x.min(b.x) + t as i32, a.y),
                    Axis::Vertical => Point::new(a.x, a.y.min(b.y) + t as i32),
                }
            };
            let mp_at = |t: i64| -> (f64, f64) {
                match axis {
                    Axis::Horizontal => ((a.x.min(b.x) + t as i32) as f64, a.y as f64),
                    Axis::Vertical => (a.x as f64, (a.y.min(b.y) + t as i32) as f64),
                }
            };
            let count = marks.len();
            for k in 0..count {
                // Emit in traversal direction; `piece` indexes from the
                // lower/left end regardless.
                let piece = if forward { k } else { count - 1 - k };
                let span = if forward {
                    (at(bounds[piece]), at(bounds[piece + 1]))
                } else {
                    (at(len - bounds[piece + 1]), at(len - bounds[piece]))
                };
                segments.push(make(span, Some(mp_at(marks[piece])), segments.len()));
            }
        }
    }
    Ok(segments)
}

/// Target fragmentation plus a displacement per segment.
///
/// Offsets move segments along their outward normal and always stay within
/// the signed bound; the segment list and layout are shared and immutable.
#[derive(Debug, Clone)]
pub struct MaskState {
    layout: Arc<Layout>,
    segments: Arc<[Segment]>,
    offsets: Vec<i32>,
    bound: i32,
}

impl MaskState {
    pub fn new(layout: Layout) -> Result<Self, LayoutError> {
        Self::with_bound(layout, DEFAULT_OFFSET_BOUND_NM)
    }

    pub fn with_bound(layout: Layout, bound: i32) -> Result<Self, LayoutError> {
        let segments: Arc<[Segment]> = fragment(&layout)?.into();
        let offsets = vec![0; segments.len()];
        Ok(MaskState {
            layout: Arc::new(layout),
            segments,
            offsets,
            bound,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn offsets(&self) -> &[i32] {
        &self.offsets
    }

    pub fn offset_bound(&self) -> i32 {
        self.bound
    }

    pub fn set_offset(&mut self, segment: usize, offset: i32) -> Result<(), LayoutError> {
        if offset.abs() > self.bound {
            return Err(LayoutError::OffsetOutOfRange {
                segment,
                offset,
                bound: self.bound,
            });
        }
        self.offsets[segment] = offset;
        Ok(())
    }

    pub fn set_uniform_offset(&mut self, offset: i32) -> Result<(), LayoutError> {
        for i in 0..self.offsets.len() {
            self.set_offset(i, offset)?;
        }
        Ok(())
    }

    /// Adds `delta` to one offset, clamping at the bound.
    pub fn nudge(&mut self, segment: usize, delta: i32) {
        let v = (self.offsets[segment] + delta).clamp(-self.bound, self.bound);
        self.offsets[segment] = v;
    }

    /// Mask polygons as seen by the simulator: displaced targets plus SRAFs.
    pub fn full_mask(&self) -> Result<Vec<RectilinearPolygon>, LayoutError> {
        let mut polys = materialize(self)?;
        polys.extend(self.layout.srafs.iter().cloned());
        Ok(polys)
    }
}

/// Rebuilds the displaced outline of every target polygon. The output count
/// equals the target count; SRAFs are not included here.
pub fn materialize(mask: &MaskState) -> Result<Vec<RectilinearPolygon>, LayoutError> {
    let mut out = Vec::with_capacity(mask.layout().targets.len());
    let segments = mask.segments();
    let mut start = 0;
    for poly_idx in 0..mask.layout().targets.len() {
        let end = segments[start..]
            .iter()
            .position(|s| s.polygon != poly_idx)
            .map(|off| start + off)
            .unwrap_or(segments.len());
        out.push(materialize_polygon(
            poly_idx,
            &segments[start..end],
            &mask.offsets()[start..end],
        )?);
        start = end;
    }
    Ok(out)
}

fn materialize_polygon(
    poly_idx: usize,
    segments: &[Segment],
    offsets: &[i32],
) -> Result<RectilinearPolygon, LayoutError> {
    let m = segments.len();
    let displaced: Vec<(Point, Point)> = segments
        .iter()
        .zip(offsets)
        .map(|(s, &off)| {
            let d = Point::new(s.outward.0 * off, s.outward.1 * off);
            (
                Point::new(s.span.0.x + d.x, s.span.0.y + d.y),
                Point::new(s.span.1.x + d.x, s.span.1.y + d.y),
            )
        })
        .collect();

    let mut ring: Vec<Point> = Vec::with_capacity(m + 4);
    for i in 0..m {
        let j = (i + 1) % m;
        let (si, sj) = (&segments[i], &segments[j]);
        if si.axis != sj.axis {
            // Corner: the displaced edge lines cross at exactly one point.
            let v = match si.axis {
                Axis::Horizontal => Point::new(displaced[j].0.x, displaced[i].0.y),
                Axis::Vertical => Point::new(displaced[i].0.x, displaced[j].0.y),
            };
            ring.push(v);
        } else {
            // Collinear neighbors: a jog connects them when offsets differ.
            ring.push(displaced[i].1);
            if offsets[i] != offsets[j] {
                ring.push(displaced[j].0);
            }
        }
    }

    // Drop coincident and collinear intermediate vertices left by equal
    // offsets on neighboring segments.
    loop {
        let before = ring.len();
        ring.dedup();
        if ring.len() > 1 && ring[0] == ring[ring.len() - 1] {
            ring.pop();
        }
        let n = ring.len();
        if n >= 3 {
            let mut keep = Vec::with_capacity(n);
            for i in 0..n {
                let p = ring[(i + n - 1) % n];
                let q = ring[i];
                let r = ring[(i + 1) % n];
                let collinear = (p.x == q.x && q.x == r.x) || (p.y == q.y && q.y == r.y);
                if !collinear {
                    keep.push(q);
                }
            }
            ring = keep;
        }
        if ring.len() == before {
            break;
        }
    }

    // The clockwise walk must stay clockwise; a sign flip means opposite
    // edges crossed and the outline turned inside out.
    if ring.len() >= 4 && shoelace2(&ring) >= 0 {
        return Err(LayoutError::SelfIntersection { polygon: poly_idx });
    }
    RectilinearPolygon::new(ring).map_err(|_| LayoutError::SelfIntersection { polygon: poly_idx })
}

const FMT_WIDTH: &str = "width_nm";
const FMT_HEIGHT: &str = "height_nm";
const FMT_LAYER: &str = "layer";
const FMT_TARGET: &str = "target";
const FMT_SRAF: &str = "sraf";

/// Parses the clip text format.
///
/// Structural problems (malformed lines, unknown layer, diagonal edges,
/// out-of-range vertices) are reported with their line number. Semantic
/// conventions such as via squares are checked separately by
/// [`Layout::validate`], so mask files written by the optimizer read back.
pub fn read_layout_str(text: &str) -> Result<Layout, LayoutError> {
    let mut width: Option<i32> = None;
    let mut height: Option<i32> = None;
    let mut layer: Option<LayerKind> = None;
    let mut targets = Vec::new();
    let mut srafs = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| LayoutError::Parse { line, msg };
        let mut tokens = raw.split_ascii_whitespace();
        let Some(key) = tokens.next() else {
            return Err(err("blank line".into()));
        };
        match key {
            FMT_WIDTH | FMT_HEIGHT => {
                let value: i32 = tokens
                    .next()
                    .ok_or_else(|| err(format!("{key} needs a value")))?
                    .parse()
                    .map_err(|_| err(format!("{key} value is not an integer")))?;
                if value <= 0 {
                    return Err(err(format!("{key} must be positive")));
                }
                if tokens.next().is_some() {
                    return Err(err(format!("trailing tokens after {key}")));
                }
                let slot = if key == FMT_WIDTH {
                    &mut width
                } else {
                    &mut height
                };
                if slot.replace(value).is_some() {
                    return Err(err(format!("duplicate {key}")));
                }
            }
            FMT_LAYER => {
                let value = tokens.next().ok_or_else(|| err("layer needs a value".into()))?;
                let kind = match value {
                    "via" => LayerKind::Via,
                    "metal" => LayerKind::Metal,
                    other => {
                        return Err(LayoutError::UnknownLayer {
                            line,
                            value: other.to_string(),
                        })
                    }
                };
                if tokens.next().is_some() {
                    return Err(err("trailing tokens after layer".into()));
                }
                if layer.replace(kind).is_some() {
                    return Err(err("duplicate layer".into()));
                }
            }
            FMT_TARGET | FMT_SRAF => {
                let (w, h) = match (width, height) {
                    (Some(w), Some(h)) => (w, h),
                    _ => return Err(err("polygon before clip dimensions".into())),
                };
                let coords: Vec<i32> = tokens
                    .map(|t| {
                        t.parse::<i32>()
                            .map_err(|_| err(format!("coordinate {t:?} is not an integer")))
                    })
                    .collect::<Result<_, _>>()?;
                if coords.len() % 2 != 0 || coords.len() < 8 {
                    return Err(err("polygon needs at least four x y pairs".into()));
                }
                let points: Vec<Point> = coords
                    .chunks_exact(2)
                    .map(|c| Point::new(c[0], c[1]))
                    .collect();
                for p in &points {
                    if p.x < 0 || p.y < 0 || p.x > w || p.y > h {
                        return Err(LayoutError::OutOfBounds {
                            place: format!("line {line}, vertex {p}"),
                        });
                    }
                }
                let poly = RectilinearPolygon::with_place(points, &format!("line {line}"))?;
                if key == FMT_TARGET {
                    targets.push(poly);
                } else {
                    srafs.push(poly);
                }
            }
            other => return Err(err(format!("unknown field {other:?}"))),
        }
    }

    let total = text.lines().count() + 1;
    let missing = |what: &str| LayoutError::Parse {
        line: total,
        msg: format!("missing {what}"),
    };
    Ok(Layout {
        width_nm: width.ok_or_else(|| missing(FMT_WIDTH))?,
        height_nm: height.ok_or_else(|| missing(FMT_HEIGHT))?,
        layer: layer.ok_or_else(|| missing(FMT_LAYER))?,
        targets,
        srafs,
    })
}

pub fn read_layout(path: &Path) -> Result<Layout, LayoutError> {
    read_layout_str(&std::fs::read_to_string(path)?)
}

/// Canonical text form; `read_layout_str(write_layout_str(l))` is lossless
/// and byte-identical for already-canonical input.
pub fn write_layout_str(layout: &Layout) -> String {
    let mut out = String::new();
    out.push_str(&format!("{FMT_WIDTH} {}\n", layout.width_nm));
    out.push_str(&format!("{FMT_HEIGHT} {}\n", layout.height_nm));
    out.push_str(&format!("{FMT_LAYER} {}\n", layout.layer.as_str()));
    for (key, polys) in [(FMT_TARGET, &layout.targets), (FMT_SRAF, &layout.srafs)] {
        for poly in polys.iter() {
            out.push_str(key);
            for v in poly.vertices() {
                out.push_str(&format!(" {} {}", v.x, v.y));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_layout(layout: &Layout, path: &Path) -> Result<(), LayoutError> {
    std::fs::write(path, write_layout_str(layout))?;
    Ok(())
}

/// Builds a square polygon, handy for vias and tests.
pub fn square(x0: i32, y0: i32, side: i32) -> RectilinearPolygon {
    rect_poly(x0, y0, x0 + side, y0 + side)
}

pub fn rect_poly(x0: i32, y0: i32, x1: i32, y1: i32) -> RectilinearPolygon {
    RectilinearPolygon::new(vec![
        Point::new(x0, y0),
        Point::new(x1, y0),
        Point::new(x1, y1),
        Point::new(x0, y1),
    ])
    .expect("axis-aligned rectangle is always valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn via_layout(positions: &[(i32, i32)]) -> Layout {
        let mut l = Layout::new(2000, 2000, LayerKind::Via);
        l.targets = positions
            .iter()
            .map(|&(x, y)| square(x, y, VIA_SIDE_NM))
            .collect();
        l
    }

    fn wire_layout(x0: i32, y0: i32, x1: i32, y1: i32) -> Layout {
        let mut l = Layout::new(1500, 1500, LayerKind::Metal);
        l.targets = vec![rect_poly(x0, y0, x1, y1)];
        l
    }

    #[test]
    fn polygon_canonicalizes_winding_and_start() {
        let cw = RectilinearPolygon::new(vec![
            Point::new(10, 40),
            Point::new(40, 40),
            Point::new(40, 10),
            Point::new(10, 10),
        ])
        .unwrap();
        assert_eq!(
            cw.vertices(),
            &[
                Point::new(10, 10),
                Point::new(40, 10),
                Point::new(40, 40),
                Point::new(10, 40),
            ]
        );
        assert_eq!(cw.area(), 900);
    }

    #[test]
    fn polygon_rejects_bad_rings() {
        let diagonal = RectilinearPolygon::new(vec![
            Point::new(0, 0),
            Point::new(10, 5),
            Point::new(10, 10),
            Point::new(0, 10),
        ]);
        assert!(matches!(diagonal, Err(LayoutError::NonRectilinear { .. })));

        let odd = RectilinearPolygon::new(vec![
            Point::new(0, 0),
            Point::new(10, 0),
            Point::new(10, 10),
        ]);
        assert!(odd.is_err());

        let collinear = RectilinearPolygon::new(vec![
            Point::new(0, 0),
            Point::new(5, 0),
            Point::new(10, 0),
            Point::new(10, 10),
            Point::new(5, 10),
            Point::new(0, 10),
        ]);
        assert!(collinear.is_err());

        // Bowtie-like crossing outline.
        let crossing = RectilinearPolygon::new(vec![
            Point::new(0, 0),
            Point::new(10, 0),
            Point::new(10, 20),
            Point::new(20, 20),
            Point::new(20, 10),
            Point::new(0, 10),
        ]);
        assert!(crossing.is_err());
    }

    #[test]
    fn decompose_matches_shoelace_area() {
        let shapes = vec![
            rect_poly(0, 0, 70, 70),
            // L
            RectilinearPolygon::new(vec![
                Point::new(0, 0),
                Point::new(100, 0),
                Point::new(100, 30),
                Point::new(30, 30),
                Point::new(30, 90),
                Point::new(0, 90),
            ])
            .unwrap(),
            // T
            RectilinearPolygon::new(vec![
                Point::new(30, 0),
                Point::new(60, 0),
                Point::new(60, 60),
                Point::new(90, 60),
                Point::new(90, 90),
                Point::new(0, 90),
                Point::new(0, 60),
                Point::new(30, 60),
            ])
            .unwrap(),
            // Staircase
            RectilinearPolygon::new(vec![
                Point::new(0, 0),
                Point::new(40, 0),
                Point::new(40, 20),
                Point::new(80, 20),
                Point::new(80, 50),
                Point::new(120, 50),
                Point::new(120, 80),
                Point::new(0, 80),
            ])
            .unwrap(),
        ];
        for poly in shapes {
            let rects = poly.decompose_rects();
            let sum: i64 = rects.iter().map(Rect::area).sum();
            assert_eq!(sum, poly.area());
            for i in 0..rects.len() {
                for j in (i + 1)..rects.len() {
                    assert!(!rects[i].overlaps(&rects[j]));
                }
            }
        }
    }

    #[test]
    fn fragment_via_gives_four_edge_segments() {
        let layout = via_layout(&[(100, 100)]);
        let segs = fragment(&layout).unwrap();
        assert_eq!(segs.len(), 4);
        // Clockwise from (100,100): left, top, right, bottom.
        let outwards: Vec<_> = segs.iter().map(|s| s.outward).collect();
        assert_eq!(outwards, vec![(-1, 0), (0, 1), (1, 0), (0, -1)]);
        let mps: Vec<_> = segs.iter().map(|s| s.measure_point.unwrap()).collect();
        assert_eq!(
            mps,
            vec![
                (100.0, 135.0),
                (135.0, 170.0),
                (170.0, 135.0),
                (135.0, 100.0),
            ]
        );
        for s in &segs {
            assert_eq!(s.control_point, s.measure_point.unwrap());
            assert_eq!(s.len_nm(), VIA_SIDE_NM as i64);
        }
    }

    #[test]
    fn fragment_metal_splits_at_measure_pitch() {
        // 180nm edges parallel to the primary direction split into
        // [0,60][60,120][120,180] with measure points at 30/90/150.
        let layout = wire_layout(0, 0, 180, 60);
        let segs = fragment(&layout).unwrap();
        assert_eq!(segs.len(), 8);

        let bottom: Vec<_> = segs
            .iter()
            .filter(|s| s.axis == Axis::Horizontal && s.span.0.y == 0)
            .collect();
        assert_eq!(bottom.len(), 3);
        let mut mxs: Vec<f64> = bottom
            .iter()
            .map(|s| s.measure_point.unwrap().0)
            .collect();
        mxs.sort_by(f64::total_cmp);
        assert_eq!(mxs, vec![30.0, 90.0, 150.0]);
        let mut spans: Vec<(i32, i32)> = bottom
            .iter()
            .map(|s| (s.span.0.x.min(s.span.1.x), s.span.0.x.max(s.span.1.x)))
            .collect();
        spans.sort();
        assert_eq!(spans, vec![(0, 60), (60, 120), (120, 180)]);

        // Vertical line ends are perpendicular to the primary direction:
        // one segment each, no measure point.
        let ends: Vec<_> = segs.iter().filter(|s| s.axis == Axis::Vertical).collect();
        assert_eq!(ends.len(), 2);
        assert!(ends.iter().all(|s| s.measure_point.is_none()));
    }

    #[test]
    fn fragment_short_parallel_edge_gets_midpoint_measure() {
        let layout = wire_layout(0, 0, 50, 40);
        let segs = fragment(&layout).unwrap();
        let bottom = segs
            .iter()
            .find(|s| s.axis == Axis::Horizontal && s.span.0.y == 0)
            .unwrap();
        assert_eq!(bottom.measure_point.unwrap(), (25.0, 0.0));
        assert_eq!(bottom.len_nm(), 50);
    }

    #[test]
    fn fragment_odd_length_favors_lower_end() {
        assert_eq!(measure_offsets(181, 60), vec![31, 91, 151]);
        assert_eq!(segment_bounds(181, 60), vec![0, 61, 121, 181]);
        assert_eq!(measure_offsets(180, 60), vec![30, 90, 150]);
        assert_eq!(segment_bounds(180, 60), vec![0, 60, 120, 180]);
        assert_eq!(measure_offsets(130, 60), vec![35, 95]);
        assert_eq!(segment_bounds(130, 60), vec![0, 65, 130]);
        assert_eq!(measure_offsets(50, 60), vec![25]);
        assert_eq!(segment_bounds(50, 60), vec![0, 50]);
        assert_eq!(measure_offsets(51, 60), vec![26]);
    }

    #[test]
    fn fragment_covers_edges_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let w = rng.gen_range(50..=70);
            let len = rng.gen_range(80..=1300);
            let horiz: bool = rng.gen();
            let layout = if horiz {
                wire_layout(10, 10, 10 + len, 10 + w)
            } else {
                wire_layout(10, 10, 10 + w, 10 + len)
            };
            let segs = fragment(&layout).unwrap();
            let per_edge: i64 = segs
                .iter()
                .filter(|s| s.measure_point.is_some())
                .map(|s| s.len_nm())
                .sum();
            // Two parallel edges of `len` each, fully covered.
            assert_eq!(per_edge, 2 * len as i64);
            for s in &segs {
                let (a, b) = s.span;
                let mid = midpoint(a, b);
                assert_eq!(s.control_point, mid);
            }
        }
    }

    #[test]
    fn fragment_empty_layout_is_empty() {
        let layout = Layout::new(500, 500, LayerKind::Via);
        assert!(fragment(&layout).unwrap().is_empty());
    }

    #[test]
    fn fragment_rejects_tiny_edges() {
        let mut l = Layout::new(500, 500, LayerKind::Metal);
        l.targets = vec![RectilinearPolygon::new(vec![
            Point::new(0, 0),
            Point::new(100, 0),
            Point::new(100, 2),
            Point::new(50, 2),
            Point::new(50, 60),
            Point::new(0, 60),
        ])
        .unwrap()];
        assert!(matches!(
            fragment(&l),
            Err(LayoutError::DegenerateEdge { length: 2, .. })
        ));
    }

    #[test]
    fn validate_flags_via_shape_and_overlap() {
        let mut l = via_layout(&[(100, 100)]);
        l.targets.push(rect_poly(300, 300, 380, 370));
        assert!(matches!(
            l.validate(),
            Err(LayoutError::NotViaSquare { polygon: 1 })
        ));

        let l2 = via_layout(&[(100, 100), (130, 130)]);
        assert!(matches!(
            l2.validate(),
            Err(LayoutError::OverlappingTargets { a: 0, b: 1 })
        ));

        let l3 = via_layout(&[(1960, 100)]);
        assert!(matches!(l3.validate(), Err(LayoutError::OutOfBounds { .. })));
    }

    #[test]
    fn materialize_zero_offsets_is_identity() {
        for layout in [via_layout(&[(100, 100), (400, 700)]), wire_layout(0, 0, 347, 61)] {
            let mask = MaskState::new(layout.clone()).unwrap();
            let polys = materialize(&mask).unwrap();
            assert_eq!(polys, layout.targets);
        }
    }

    #[test]
    fn materialize_uniform_outward_grows_square() {
        let mask = {
            let mut m = MaskState::new(via_layout(&[(100, 100)])).unwrap();
            m.set_uniform_offset(3).unwrap();
            m
        };
        let polys = materialize(&mask).unwrap();
        assert_eq!(polys, vec![square(97, 97, 76)]);
    }

    #[test]
    fn materialize_inserts_single_jog() {
        let layout = wire_layout(0, 0, 200, 60);
        let mut mask = MaskState::new(layout).unwrap();
        // Bottom edge is traversed right to left; its first segment covers
        // x in [130, 200]. Push it 2nm outward (downward).
        let segs = mask.segments().to_vec();
        let id = segs
            .iter()
            .find(|s| {
                s.axis == Axis::Horizontal && s.span.0.y == 0 && s.span.0.x.max(s.span.1.x) == 200
            })
            .unwrap()
            .id;
        mask.set_offset(id, 2).unwrap();
        let poly = materialize(&mask).unwrap().remove(0);
        assert_eq!(
            poly.vertices(),
            &[
                Point::new(0, 0),
                Point::new(130, 0),
                Point::new(130, -2),
                Point::new(200, -2),
                Point::new(200, 60),
                Point::new(0, 60),
            ]
        );
        assert_eq!(poly.area(), 200 * 60 + 70 * 2);
    }

    #[test]
    fn materialize_equal_offsets_merge_without_jog() {
        let layout = wire_layout(0, 0, 200, 60);
        let mut mask = MaskState::new(layout).unwrap();
        for s in mask.segments().to_vec() {
            if s.axis == Axis::Horizontal && s.span.0.y == 60 {
                mask.set_offset(s.id, 5).unwrap();
            }
        }
        let poly = materialize(&mask).unwrap().remove(0);
        assert_eq!(poly, rect_poly(0, 0, 200, 65));
    }

    #[test]
    fn materialize_detects_collapse() {
        let layout = wire_layout(0, 0, 200, 50);
        let mut mask = MaskState::new(layout).unwrap();
        for s in mask.segments().to_vec() {
            if s.axis == Axis::Horizontal {
                mask.set_offset(s.id, -40).unwrap();
            }
        }
        assert!(matches!(
            materialize(&mask),
            Err(LayoutError::SelfIntersection { polygon: 0 })
        ));
    }

    #[test]
    fn materialize_area_grows_with_outward_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layouts = [via_layout(&[(500, 500)]), wire_layout(100, 100, 600, 160)];
        for layout in layouts {
            let base: i64 = layout.targets.iter().map(|p| p.area()).sum();
            for _ in 0..50 {
                let mut mask = MaskState::new(layout.clone()).unwrap();
                for i in 0..mask.segments().len() {
                    mask.set_offset(i, rng.gen_range(0..=5)).unwrap();
                }
                let area: i64 = materialize(&mask).unwrap().iter().map(|p| p.area()).sum();
                assert!(area >= base);
            }
        }
    }

    #[test]
    fn offsets_respect_bound() {
        let mut mask = MaskState::new(via_layout(&[(100, 100)])).unwrap();
        assert!(mask.set_offset(0, 41).is_err());
        assert!(mask.set_offset(0, -41).is_err());
        mask.set_offset(0, 40).unwrap();
        mask.nudge(0, 2);
        assert_eq!(mask.offsets()[0], 40);
        mask.nudge(0, -2);
        assert_eq!(mask.offsets()[0], 38);
    }

    #[test]
    fn layout_roundtrip_is_byte_identical() {
        let mut layout = via_layout(&[(100, 100), (400, 700)]);
        layout.srafs = vec![rect_poly(600, 100, 640, 120)];
        let text = write_layout_str(&layout);
        let back = read_layout_str(&text).unwrap();
        assert_eq!(back, layout);
        assert_eq!(write_layout_str(&back), text);
    }

    #[test]
    fn layout_parse_errors_carry_line_numbers() {
        let missing = read_layout_str("width_nm 100\nheight_nm 100\n");
        assert!(matches!(missing, Err(LayoutError::Parse { line: 3, .. })));

        let bad_layer = read_layout_str("width_nm 100\nheight_nm 100\nlayer poly\n");
        match bad_layer {
            Err(LayoutError::UnknownLayer { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, "poly");
            }
            other => panic!("expected unknown layer, got {other:?}"),
        }

        let bad_coord =
            read_layout_str("width_nm 100\nheight_nm 100\nlayer via\ntarget 0 0 10 zz 10 10 0 10\n");
        assert!(matches!(bad_coord, Err(LayoutError::Parse { line: 4, .. })));

        let diagonal = read_layout_str(
            "width_nm 100\nheight_nm 100\nlayer via\ntarget 0 0 10 5 10 10 0 10\n",
        );
        assert!(matches!(
            diagonal,
            Err(LayoutError::NonRectilinear { .. })
        ));

        let oob = read_layout_str(
            "width_nm 100\nheight_nm 100\nlayer via\ntarget 0 0 170 0 170 170 0 170\n",
        );
        assert!(matches!(oob, Err(LayoutError::OutOfBounds { .. })));
    }

    #[test]
    fn canonicalize_orders_polygons() {
        let mut a = via_layout(&[(400, 700), (100, 100)]);
        let mut b = via_layout(&[(100, 100), (400, 700)]);
        a.canonicalize();
        b.canonicalize();
        assert_eq!(a, b);
    }
}
