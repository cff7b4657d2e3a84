//! Parametric 2D waveguide domains: a truncated strip of unit height with an
//! optional left-end resonator, a dissipative inclusion, an appended lateral
//! branch (optionally through a thin ligament), plus half-guide and shifted
//! variants used by the absorber design loop.
//!
//! Coordinates are (z, y): z runs along the guide axis, y across it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Transverse height of the guide; the whole toolkit assumes it is 1.
pub const STRIP_HEIGHT: f64 = 1.0;

/// Branch width for which a depth sweep produces quarter-wavelength
/// resonances, π/√λ.
pub fn quarter_wavelength(lambda: f64) -> f64 {
    std::f64::consts::PI / lambda.sqrt()
}

/// A point of the (z, y) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub z: f64,
    pub y: f64,
}

impl Point {
    pub fn new(z: f64, y: f64) -> Self {
        Self { z, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        ((self.z - other.z).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Inclusion outline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disk { center: Point, radius: f64 },
    Rect { corner: Point, width: f64, height: f64 },
    Ellipse { center: Point, semi_z: f64, semi_y: f64 },
}

impl Shape {
    pub fn area(&self) -> f64 {
        match *self {
            Shape::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
            Shape::Rect { width, height, .. } => width * height,
            Shape::Ellipse { semi_z, semi_y, .. } => std::f64::consts::PI * semi_z * semi_y,
        }
    }

    /// Axis-aligned bounding box (z_min, z_max, y_min, y_max).
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Disk { center, radius } => (
                center.z - radius,
                center.z + radius,
                center.y - radius,
                center.y + radius,
            ),
            Shape::Rect { corner, width, height } => {
                (corner.z, corner.z + width, corner.y, corner.y + height)
            }
            Shape::Ellipse { center, semi_z, semi_y } => (
                center.z - semi_z,
                center.z + semi_z,
                center.y - semi_y,
                center.y + semi_y,
            ),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Shape::Disk { center, radius } => p.dist(center) <= radius,
            Shape::Rect { corner, width, height } => {
                p.z >= corner.z
                    && p.z <= corner.z + width
                    && p.y >= corner.y
                    && p.y <= corner.y + height
            }
            Shape::Ellipse { center, semi_z, semi_y } => {
                let dz = (p.z - center.z) / semi_z;
                let dy = (p.y - center.y) / semi_y;
                dz * dz + dy * dy <= 1.0
            }
        }
    }

    /// True for outlines that are genuinely curved (and therefore need curved
    /// element edges); rectangles are piecewise straight.
    pub fn is_curved(&self) -> bool {
        !matches!(self, Shape::Rect { .. })
    }

    /// Radius of the largest inscribed disk.
    pub fn inradius(&self) -> f64 {
        match *self {
            Shape::Disk { radius, .. } => radius,
            Shape::Rect { width, height, .. } => 0.5 * width.min(height),
            Shape::Ellipse { semi_z, semi_y, .. } => semi_z.min(semi_y),
        }
    }

    /// Nearest point of the outline to `p`. Exact for disks and rectangles;
    /// for ellipses a sampled initial guess is polished by Newton iteration.
    pub fn closest_boundary_point(&self, p: Point) -> Point {
        match *self {
            Shape::Disk { center, radius } => {
                let d = p.dist(center);
                if d < 1e-14 {
                    return Point::new(center.z + radius, center.y);
                }
                Point::new(
                    center.z + radius * (p.z - center.z) / d,
                    center.y + radius * (p.y - center.y) / d,
                )
            }
            Shape::Rect { corner, width, height } => {
                let (z0, z1) = (corner.z, corner.z + width);
                let (y0, y1) = (corner.y, corner.y + height);
                let zc = p.z.clamp(z0, z1);
                let yc = p.y.clamp(y0, y1);
                if p.z > z0 && p.z < z1 && p.y > y0 && p.y < y1 {
                    // Interior: project to the nearest side.
                    let gaps = [
                        (p.z - z0, Point::new(z0, p.y)),
                        (z1 - p.z, Point::new(z1, p.y)),
                        (p.y - y0, Point::new(p.z, y0)),
                        (y1 - p.y, Point::new(p.z, y1)),
                    ];
                    gaps.iter()
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .unwrap()
                        .1
                } else {
                    Point::new(zc, yc)
                }
            }
            Shape::Ellipse { center, semi_z, semi_y } => {
                let at = |t: f64| {
                    Point::new(center.z + semi_z * t.cos(), center.y + semi_y * t.sin())
                };
                let mut best_t = 0.0;
                let mut best_d = f64::INFINITY;
                for i in 0..128 {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / 128.0;
                    let d = p.dist(at(t));
                    if d < best_d {
                        best_d = d;
                        best_t = t;
                    }
                }
                // Newton on g(t) = (q(t) − p)·q′(t).
                let mut t = best_t;
                for _ in 0..40 {
                    let (ct, st) = (t.cos(), t.sin());
                    let qz = center.z + semi_z * ct - p.z;
                    let qy = center.y + semi_y * st - p.y;
                    let dqz = -semi_z * st;
                    let dqy = semi_y * ct;
                    let g = qz * dqz + qy * dqy;
                    let dg = qz * (-semi_z * ct) + qy * (-semi_y * st) + dqz * dqz + dqy * dqy;
                    if dg.abs() < 1e-300 {
                        break;
                    }
                    let step = g / dg;
                    t -= step;
                    if step.abs() < 1e-15 {
                        break;
                    }
                }
                at(t)
            }
        }
    }

    /// Closed chain of outline points with spacing ≈ `h`, corners included
    /// exactly for rectangles. The last point connects back to the first.
    pub fn perimeter_nodes(&self, h: f64) -> Vec<Point> {
        assert!(h > 0.0);
        match *self {
            Shape::Disk { center, radius } => {
                let n = ((2.0 * std::f64::consts::PI * radius / h).ceil() as usize).max(8);
                (0..n)
                    .map(|i| {
                        let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                        Point::new(center.z + radius * t.cos(), center.y + radius * t.sin())
                    })
                    .collect()
            }
            Shape::Rect { corner, width, height } => {
                let corners = [
                    corner,
                    Point::new(corner.z + width, corner.y),
                    Point::new(corner.z + width, corner.y + height),
                    Point::new(corner.z, corner.y + height),
                ];
                let mut pts = Vec::new();
                for i in 0..4 {
                    let a = corners[i];
                    let b = corners[(i + 1) % 4];
                    let len = a.dist(b);
                    let n = ((len / h).ceil() as usize).max(1);
                    for k in 0..n {
                        let s = k as f64 / n as f64;
                        if k == 0 {
                            pts.push(a); // corner kept bit-exact
                        } else {
                            pts.push(Point::new(a.z + s * (b.z - a.z), a.y + s * (b.y - a.y)));
                        }
                    }
                }
                pts
            }
            Shape::Ellipse { center, semi_z, semi_y } => {
                // Equal arc-length sampling via a fine cumulative table.
                let fine = 4096;
                let at = |t: f64| {
                    Point::new(center.z + semi_z * t.cos(), center.y + semi_y * t.sin())
                };
                let mut cum = Vec::with_capacity(fine + 1);
                cum.push(0.0);
                let mut prev = at(0.0);
                for i in 1..=fine {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / fine as f64;
                    let q = at(t);
                    cum.push(cum[i - 1] + prev.dist(q));
                    prev = q;
                }
                let total = *cum.last().unwrap();
                let n = ((total / h).ceil() as usize).max(8);
                let mut pts = Vec::with_capacity(n);
                let mut j = 0;
                for i in 0..n {
                    let target = total * i as f64 / n as f64;
                    while cum[j + 1] < target {
                        j += 1;
                    }
                    let frac = if cum[j + 1] > cum[j] {
                        (target - cum[j]) / (cum[j + 1] - cum[j])
                    } else {
                        0.0
                    };
                    let t = 2.0 * std::f64::consts::PI * (j as f64 + frac) / fine as f64;
                    pts.push(at(t));
                }
                pts
            }
        }
    }
}

/// Dissipation level on the inclusion: constant, or a smooth positive profile
/// evaluated pointwise (used at quadrature points).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BProfile {
    Constant { value: f64 },
    /// value + grad_z·(z − z₀) + grad_y·(y − y₀), anchored at the inclusion
    /// reference point (z₀, y₀).
    Affine { value: f64, grad_z: f64, grad_y: f64, anchor: Point },
}

impl BProfile {
    pub fn eval(&self, p: Point) -> f64 {
        match *self {
            BProfile::Constant { value } => value,
            BProfile::Affine { value, grad_z, grad_y, anchor } => {
                value + grad_z * (p.z - anchor.z) + grad_y * (p.y - anchor.y)
            }
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match *self {
            BProfile::Constant { value } => Some(value),
            BProfile::Affine { value, grad_z, grad_y, .. } => {
                (grad_z == 0.0 && grad_y == 0.0).then_some(value)
            }
        }
    }

    /// Minimum over the closed shape. Affine profiles attain it on the
    /// outline, which is sampled densely alongside the exact corner/extremal
    /// candidates.
    pub fn min_on(&self, shape: &Shape) -> f64 {
        match *self {
            BProfile::Constant { value } => value,
            BProfile::Affine { .. } => shape
                .perimeter_nodes(1e-3 * shape.area().sqrt().max(1e-6))
                .into_iter()
                .map(|p| self.eval(p))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// The dissipative obstacle: outline plus dissipation profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub shape: Shape,
    pub b: BProfile,
}

/// Lateral rectangle appended on the top wall. `width = None` selects the
/// quarter-wavelength default π/√λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub attach_z0: f64,
    pub width: Option<f64>,
    pub depth: f64,
}

/// Thin neck joining the top wall to the branch (or standing alone).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LigamentSpec {
    pub attach_z0: f64,
    pub width: f64,
    pub length: f64,
}

/// User-facing description of a computational domain.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GeometrySpec {
    /// Right end of the computational window; `None` picks
    /// extent + 8/√(λ_next − λ) so evanescent residue at the port is < e⁻⁸.
    pub truncation_z: Option<f64>,
    /// Wall chain replacing the left end, running from (0, 1) to (0, 0)
    /// through z ≤ 0.
    pub resonator: Option<Vec<Point>>,
    pub inclusion: Option<Inclusion>,
    pub branch: Option<BranchSpec>,
    pub ligament: Option<LigamentSpec>,
}

/// Which boundary-value problem the domain is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    FullGuide,
    HalfGuideNeumann,
    HalfGuideMixed,
}

/// Boundary classification carried through meshing into assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Wall,
    /// Truncation line of port `p`.
    Truncation(usize),
    SymmetryLine,
}

/// One straight piece of the outer boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    pub tag: BoundaryTag,
}

/// Modal port: the truncation line where radiation conditions are imposed
/// and scattering coefficients extracted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Port {
    pub id: usize,
    /// z-coordinate of the truncation line.
    pub z: f64,
    /// +1 if outgoing waves travel towards +z through this port, −1 otherwise.
    pub dir: f64,
    /// Distance from the phase-reference plane z = 0 to the port.
    pub dist_from_anchor: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("inclusion must lie strictly inside the domain (z in (0, {z_t}), clearance violated)")]
    InclusionOutsideDomain { z_t: f64 },
    #[error("features overlap: {0}")]
    FeatureOverlap(String),
    #[error("branch window ({lo}, {hi}) exits the computational window (0, {z_t})")]
    BranchOutsideWindow { lo: f64, hi: f64, z_t: f64 },
    #[error("outer height L must exceed the strip height 1, got {0}")]
    BadOuterHeight(f64),
    #[error("outline self-intersects near segment pair ({0}, {1})")]
    SelfIntersectingOutline(usize, usize),
}

/// A validated computational domain.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub kind: DomainKind,
    pub lambda: f64,
    /// Closed counter-clockwise chain of straight boundary pieces.
    pub outline: Vec<Segment>,
    pub inclusion: Option<Inclusion>,
    pub ports: Vec<Port>,
    pub truncation_z: f64,
    /// Absolute z-interval of the branch opening on the top wall.
    pub branch_window: Option<(f64, f64)>,
    /// Stored branch width (for the quarter-wavelength default check).
    pub branch_width: Option<f64>,
    pub ligament_window: Option<(f64, f64)>,
}

impl Geometry {
    /// Analytic area of the whole computational domain.
    pub fn domain_area(&self) -> f64 {
        // The outline is polygonal, so the shoelace value is exact up to
        // rounding.
        let mut twice = 0.0;
        for s in &self.outline {
            twice += s.a.z * s.b.y - s.b.z * s.a.y;
        }
        0.5 * twice
    }

    /// (exterior, inclusion) region areas.
    pub fn region_areas(&self) -> (f64, f64) {
        let inc = self.inclusion.as_ref().map_or(0.0, |i| i.shape.area());
        (self.domain_area() - inc, inc)
    }

    /// Number of distinct boundary-tag kinds, counting the inclusion
    /// interface as one when an inclusion is present.
    pub fn tag_kinds(&self) -> usize {
        let mut wall = false;
        let mut trunc = false;
        let mut sym = false;
        for s in &self.outline {
            match s.tag {
                BoundaryTag::Wall => wall = true,
                BoundaryTag::Truncation(_) => trunc = true,
                BoundaryTag::SymmetryLine => sym = true,
            }
        }
        wall as usize + trunc as usize + sym as usize + self.inclusion.is_some() as usize
    }

    /// Point-in-domain test by winding over the polygonal outline.
    pub fn contains(&self, p: Point) -> bool {
        let mut winding = 0i32;
        for s in &self.outline {
            if s.a.y <= p.y {
                if s.b.y > p.y && cross(s.a, s.b, p) > 0.0 {
                    winding += 1;
                }
            } else if s.b.y <= p.y && cross(s.a, s.b, p) < 0.0 {
                winding -= 1;
            }
        }
        winding != 0
    }

    /// Number of regions (exterior plus inclusion when present).
    pub fn region_count(&self) -> usize {
        1 + self.inclusion.is_some() as usize
    }
}

fn cross(a: Point, b: Point, p: Point) -> f64 {
    (b.z - a.z) * (p.y - a.y) - (p.z - a.z) * (b.y - a.y)
}

/// Default truncation abscissa: clearance 8 e-folds of the slowest evanescent
/// mode past the rightmost feature.
fn default_truncation(lambda: f64, feature_extent: f64) -> f64 {
    let j_prop = crate::modes::propagating_count(lambda);
    let next_cutoff = (j_prop as f64 * std::f64::consts::PI).powi(2);
    feature_extent.max(STRIP_HEIGHT) + 8.0 / (next_cutoff - lambda).sqrt()
}

fn validate_positive(name: &str, v: f64) -> Result<(), GeometryError> {
    if !(v > 0.0) {
        return Err(GeometryError::BadParameter(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn segments_properly_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn check_simple(outline: &[Segment]) -> Result<(), GeometryError> {
    for i in 0..outline.len() {
        for j in i + 1..outline.len() {
            if segments_properly_intersect(outline[i].a, outline[i].b, outline[j].a, outline[j].b)
            {
                return Err(GeometryError::SelfIntersectingOutline(i, j));
            }
        }
    }
    Ok(())
}

fn validate_inclusion(
    inclusion: &Inclusion,
    z_t: f64,
    branch_window: Option<(f64, f64)>,
    has_resonator: bool,
) -> Result<(), GeometryError> {
    let (z0, z1, y0, y1) = inclusion.shape.bbox();
    if !(z0 > 0.0) && !has_resonator {
        return Err(GeometryError::InclusionOutsideDomain { z_t });
    }
    if !(z1 < z_t) {
        return Err(GeometryError::InclusionOutsideDomain { z_t });
    }
    let lateral_ok = match inclusion.shape {
        // Full-width slabs are allowed to touch the walls (the 1D reference
        // configuration); anything else must stay strictly inside.
        Shape::Rect { .. } => y0 >= 0.0 && y1 <= STRIP_HEIGHT,
        _ => y0 > 0.0 && y1 < STRIP_HEIGHT,
    };
    if !lateral_ok || !(z0 > 0.0 || has_resonator) {
        return Err(GeometryError::InclusionOutsideDomain { z_t });
    }
    if let Some((bl, bh)) = branch_window {
        if y1 >= STRIP_HEIGHT && z1 > bl && z0 < bh {
            return Err(GeometryError::FeatureOverlap(
                "inclusion reaches the branch opening".into(),
            ));
        }
    }
    let bmin = inclusion.b.min_on(&inclusion.shape);
    if !(bmin > 0.0) {
        return Err(GeometryError::BadParameter(format!(
            "dissipation profile must stay positive on the inclusion (min {bmin})"
        )));
    }
    Ok(())
}

/// Build the truncated guide domain for the direct scattering problem.
pub fn build_waveguide(spec: &GeometrySpec, lambda: f64) -> Result<Geometry, GeometryError> {
    validate_positive("lambda", lambda)?;
    let ell = quarter_wavelength(lambda);

    // Resolve the stacked top-wall features first: optional ligament, then
    // optional branch sitting either on the wall or on the ligament.
    let mut top_openings: Vec<(f64, f64)> = Vec::new(); // on y = 1
    let mut extent: f64 = 0.0;
    let lig = if let Some(l) = spec.ligament {
        validate_positive("ligament width", l.width)?;
        validate_positive("ligament length", l.length)?;
        top_openings.push((l.attach_z0, l.attach_z0 + l.width));
        extent = extent.max(l.attach_z0 + l.width);
        Some(l)
    } else {
        None
    };
    let branch = if let Some(b) = spec.branch {
        let w = b.width.unwrap_or(ell);
        validate_positive("branch width", w)?;
        validate_positive("branch depth", b.depth)?;
        if lig.is_none() {
            top_openings.push((b.attach_z0, b.attach_z0 + w));
        } else {
            // Stacked on the ligament: the branch must cover the neck.
            let l = lig.unwrap();
            if b.attach_z0 > l.attach_z0 || b.attach_z0 + w < l.attach_z0 + l.width {
                return Err(GeometryError::FeatureOverlap(
                    "branch does not cover the ligament neck".into(),
                ));
            }
        }
        extent = extent.max(b.attach_z0 + w);
        Some((b, w))
    } else {
        None
    };
    if let Some(inc) = &spec.inclusion {
        extent = extent.max(inc.shape.bbox().1);
    }

    let z_t = match spec.truncation_z {
        Some(z) => {
            validate_positive("truncation_z", z)?;
            z
        }
        None => default_truncation(lambda, extent),
    };
    for &(lo, hi) in &top_openings {
        if !(lo > 0.0 && hi < z_t) {
            return Err(GeometryError::BranchOutsideWindow { lo, hi, z_t });
        }
    }
    let branch_window = branch.map(|(b, w)| (b.attach_z0, b.attach_z0 + w));
    let wall_opening = if let Some(l) = lig {
        Some((l.attach_z0, l.attach_z0 + l.width))
    } else {
        branch_window
    };
    if let Some(inc) = &spec.inclusion {
        validate_inclusion(inc, z_t, wall_opening, spec.resonator.is_some())?;
    }

    // Counter-clockwise outline: bottom wall, truncation, top wall with the
    // lateral feature carved in, then the left end (straight or resonator).
    let mut outline = Vec::new();
    let mut push = |a: Point, b: Point, tag: BoundaryTag| {
        if a.dist(b) > 1e-14 {
            outline.push(Segment { a, b, tag });
        }
    };
    push(Point::new(0.0, 0.0), Point::new(z_t, 0.0), BoundaryTag::Wall);
    push(
        Point::new(z_t, 0.0),
        Point::new(z_t, STRIP_HEIGHT),
        BoundaryTag::Truncation(0),
    );
    if let Some((lo, hi)) = wall_opening {
        push(
            Point::new(z_t, STRIP_HEIGHT),
            Point::new(hi, STRIP_HEIGHT),
            BoundaryTag::Wall,
        );
        // Walk up and around the lateral feature.
        let top = if let Some(l) = lig {
            let neck_top = STRIP_HEIGHT + l.length;
            push(Point::new(hi, STRIP_HEIGHT), Point::new(hi, neck_top), BoundaryTag::Wall);
            if let Some((b, w)) = branch {
                let (bl, bh) = (b.attach_z0, b.attach_z0 + w);
                let box_top = neck_top + b.depth;
                push(Point::new(hi, neck_top), Point::new(bh, neck_top), BoundaryTag::Wall);
                push(Point::new(bh, neck_top), Point::new(bh, box_top), BoundaryTag::Wall);
                push(Point::new(bh, box_top), Point::new(bl, box_top), BoundaryTag::Wall);
                push(Point::new(bl, box_top), Point::new(bl, neck_top), BoundaryTag::Wall);
                push(Point::new(bl, neck_top), Point::new(lo, neck_top), BoundaryTag::Wall);
            } else {
                push(Point::new(hi, neck_top), Point::new(lo, neck_top), BoundaryTag::Wall);
            }
            neck_top
        } else {
            let (b, _) = branch.unwrap();
            let box_top = STRIP_HEIGHT + b.depth;
            push(Point::new(hi, STRIP_HEIGHT), Point::new(hi, box_top), BoundaryTag::Wall);
            push(Point::new(hi, box_top), Point::new(lo, box_top), BoundaryTag::Wall);
            box_top
        };
        push(Point::new(lo, top), Point::new(lo, STRIP_HEIGHT), BoundaryTag::Wall);
        push(
            Point::new(lo, STRIP_HEIGHT),
            Point::new(0.0, STRIP_HEIGHT),
            BoundaryTag::Wall,
        );
    } else {
        push(
            Point::new(z_t, STRIP_HEIGHT),
            Point::new(0.0, STRIP_HEIGHT),
            BoundaryTag::Wall,
        );
    }
    if let Some(chain) = &spec.resonator {
        let mut prev = Point::new(0.0, STRIP_HEIGHT);
        for &v in chain {
            if v.z > 0.0 {
                return Err(GeometryError::BadParameter(format!(
                    "resonator vertices must satisfy z <= 0, got z = {}",
                    v.z
                )));
            }
            push(prev, v, BoundaryTag::Wall);
            prev = v;
        }
        push(prev, Point::new(0.0, 0.0), BoundaryTag::Wall);
    } else {
        push(
            Point::new(0.0, STRIP_HEIGHT),
            Point::new(0.0, 0.0),
            BoundaryTag::Wall,
        );
    }
    check_simple(&outline)?;

    let geometry = Geometry {
        kind: DomainKind::FullGuide,
        lambda,
        outline,
        inclusion: spec.inclusion.clone(),
        ports: vec![Port { id: 0, z: z_t, dir: 1.0, dist_from_anchor: z_t }],
        truncation_z: z_t,
        branch_window,
        branch_width: branch.map(|(_, w)| w),
        ligament_window: lig.map(|l| (l.attach_z0, l.attach_z0 + l.width)),
    };
    debug_assert!(geometry.domain_area() > 0.0);
    Ok(geometry)
}

/// Guide with the quarter-wavelength branch placed at shift σ and period
/// index κ: opening centred at 2κπ/√λ + σ on the top wall, depth L − 1.
pub fn build_absorber_domain(
    spec: &GeometrySpec,
    lambda: f64,
    sigma: f64,
    kappa: usize,
    outer_height: f64,
) -> Result<Geometry, GeometryError> {
    validate_positive("lambda", lambda)?;
    if !(outer_height > STRIP_HEIGHT) {
        return Err(GeometryError::BadOuterHeight(outer_height));
    }
    let ell = quarter_wavelength(lambda);
    let center = 2.0 * kappa as f64 * ell + sigma;
    let mut with_branch = spec.clone();
    with_branch.branch = Some(BranchSpec {
        attach_z0: center - 0.5 * ell,
        width: Some(ell),
        depth: outer_height - STRIP_HEIGHT,
    });
    build_waveguide(&with_branch, lambda)
}

/// Half of the branch guide, cut along its symmetry line (placed at z = 0):
/// strip (0, z_T)×(0, 1) plus the half-branch (0, ℓ/2)×(1, L).
pub fn build_half_guide(
    outer_height: f64,
    lambda: f64,
    kind: DomainKind,
) -> Result<Geometry, GeometryError> {
    validate_positive("lambda", lambda)?;
    if !(outer_height > STRIP_HEIGHT) {
        return Err(GeometryError::BadOuterHeight(outer_height));
    }
    if kind == DomainKind::FullGuide {
        return Err(GeometryError::BadParameter(
            "half-guide builder needs a half-guide kind".into(),
        ));
    }
    let half_w = 0.5 * quarter_wavelength(lambda);
    let z_t = default_truncation(lambda, half_w);
    let mut outline = Vec::new();
    let mut push = |a: Point, b: Point, tag: BoundaryTag| {
        outline.push(Segment { a, b, tag });
    };
    push(Point::new(0.0, 0.0), Point::new(z_t, 0.0), BoundaryTag::Wall);
    push(
        Point::new(z_t, 0.0),
        Point::new(z_t, STRIP_HEIGHT),
        BoundaryTag::Truncation(0),
    );
    push(
        Point::new(z_t, STRIP_HEIGHT),
        Point::new(half_w, STRIP_HEIGHT),
        BoundaryTag::Wall,
    );
    push(
        Point::new(half_w, STRIP_HEIGHT),
        Point::new(half_w, outer_height),
        BoundaryTag::Wall,
    );
    push(
        Point::new(half_w, outer_height),
        Point::new(0.0, outer_height),
        BoundaryTag::Wall,
    );
    push(
        Point::new(0.0, outer_height),
        Point::new(0.0, 0.0),
        BoundaryTag::SymmetryLine,
    );
    Ok(Geometry {
        kind,
        lambda,
        outline,
        inclusion: None,
        ports: vec![Port { id: 0, z: z_t, dir: 1.0, dist_from_anchor: z_t }],
        truncation_z: z_t,
        branch_window: Some((0.0, half_w)),
        branch_width: Some(half_w),
        ligament_window: None,
    })
}

/// Two-port guide with the full branch, centred at z = `shift`, on
/// (−z_T, z_T)×(0, 1) ∪ (shift − ℓ/2, shift + ℓ/2)×(1, L).
pub fn build_full_branch_guide(
    outer_height: f64,
    lambda: f64,
    shift: f64,
) -> Result<Geometry, GeometryError> {
    validate_positive("lambda", lambda)?;
    if !(outer_height > STRIP_HEIGHT) {
        return Err(GeometryError::BadOuterHeight(outer_height));
    }
    let ell = quarter_wavelength(lambda);
    let (lo, hi) = (shift - 0.5 * ell, shift + 0.5 * ell);
    let z_t = default_truncation(lambda, hi.abs().max(lo.abs()));
    if !(lo > -z_t && hi < z_t) {
        return Err(GeometryError::BranchOutsideWindow { lo, hi, z_t });
    }
    let top = outer_height;
    let mut outline = Vec::new();
    let mut push = |a: Point, b: Point, tag: BoundaryTag| {
        outline.push(Segment { a, b, tag });
    };
    push(Point::new(-z_t, 0.0), Point::new(z_t, 0.0), BoundaryTag::Wall);
    push(
        Point::new(z_t, 0.0),
        Point::new(z_t, STRIP_HEIGHT),
        BoundaryTag::Truncation(0),
    );
    push(Point::new(z_t, STRIP_HEIGHT), Point::new(hi, STRIP_HEIGHT), BoundaryTag::Wall);
    push(Point::new(hi, STRIP_HEIGHT), Point::new(hi, top), BoundaryTag::Wall);
    push(Point::new(hi, top), Point::new(lo, top), BoundaryTag::Wall);
    push(Point::new(lo, top), Point::new(lo, STRIP_HEIGHT), BoundaryTag::Wall);
    push(Point::new(lo, STRIP_HEIGHT), Point::new(-z_t, STRIP_HEIGHT), BoundaryTag::Wall);
    push(
        Point::new(-z_t, STRIP_HEIGHT),
        Point::new(-z_t, 0.0),
        BoundaryTag::Truncation(1),
    );
    Ok(Geometry {
        kind: DomainKind::FullGuide,
        lambda,
        outline,
        inclusion: None,
        ports: vec![
            Port { id: 0, z: z_t, dir: 1.0, dist_from_anchor: z_t },
            Port { id: 1, z: -z_t, dir: -1.0, dist_from_anchor: z_t },
        ],
        truncation_z: z_t,
        branch_window: Some((lo, hi)),
        branch_width: Some(ell),
        ligament_window: None,
    })
}
