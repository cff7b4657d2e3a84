//! Conforming P2-ready triangulations of waveguide geometries: constrained
//! Delaunay over boundary chains plus a hexagonal background lattice,
//! geometric boundary tagging, curved-edge midpoints on the inclusion
//! outline, and boundary-layer grading by marked-edge bisection.

use std::collections::HashMap;

use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};
use thiserror::Error;

use crate::geometry::{BProfile, BoundaryTag, DomainKind, Geometry, Point, Port, Shape};

/// Decay length of the dissipative boundary layer, √2/√(λ b₀ η).
pub fn skin_depth(lambda: f64, eta: f64, b0: f64) -> f64 {
    (2.0 / (lambda * b0 * eta)).sqrt()
}

/// Edge classification carried by the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeTag {
    Wall,
    Truncation(usize),
    SymmetryLine,
    InclusionInterface,
}

impl EdgeTag {
    /// Stable integer code used by the text dump format.
    pub fn code(self) -> usize {
        match self {
            EdgeTag::Wall => 1,
            EdgeTag::SymmetryLine => 4,
            EdgeTag::InclusionInterface => 5,
            EdgeTag::Truncation(p) => 10 + p,
        }
    }

    pub fn from_code(code: usize) -> Option<Self> {
        match code {
            1 => Some(EdgeTag::Wall),
            4 => Some(EdgeTag::SymmetryLine),
            5 => Some(EdgeTag::InclusionInterface),
            c if c >= 10 => Some(EdgeTag::Truncation(c - 10)),
            _ => None,
        }
    }
}

/// Exterior region code.
pub const REGION_EXTERIOR: u8 = 0;
/// Inclusion region code.
pub const REGION_INCLUSION: u8 = 1;

/// One triangle: vertex indices in counter-clockwise order plus region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tri {
    pub v: [usize; 3],
    pub region: u8,
}

/// One tagged edge (outer boundary or inclusion interface).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedEdge {
    pub v: [usize; 2],
    pub tag: EdgeTag,
}

/// Boundary-layer grading bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grading {
    pub skin_layers: usize,
    pub min_h: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("feature of width {width} is thinner than 2·target_h = {limit}")]
    FeatureTooThin { width: f64, limit: f64 },
    #[error("target_h must be positive, got {0}")]
    BadTargetH(f64),
    #[error("triangulation failed: {0}")]
    Kernel(String),
    #[error("mesh invariant violated: {0}")]
    Invariant(String),
    #[error("mesh file malformed: {0}")]
    BadFile(String),
}

/// A conforming triangulation of a [`Geometry`].
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<Tri>,
    /// Outer-boundary and interface edges with their tags.
    pub boundary_edges: Vec<TaggedEdge>,
    pub target_h: f64,
    pub grading: Grading,
    /// Set when grading hit the `min_h` floor before resolving the layer.
    pub layer_unresolved: bool,
    /// Curved midpoints for interface edges keyed by sorted vertex pair;
    /// P2 elements bend these edges onto the analytic outline.
    pub curved_midpoints: HashMap<(usize, usize), Point>,
    /// Inclusion outline, kept for grading and curved refinement.
    pub interface: Option<Shape>,
    /// Dissipation profile of the inclusion, carried for assembly.
    pub inclusion_b: Option<BProfile>,
    pub ports: Vec<Port>,
    pub kind: DomainKind,
    pub lambda: f64,
}

fn dist_point_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dz, dy) = (b.z - a.z, b.y - a.y);
    let len2 = dz * dz + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p.z - a.z) * dz + (p.y - a.y) * dy) / len2;
    let t = t.clamp(0.0, 1.0);
    p.dist(Point::new(a.z + t * dz, a.y + t * dy))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.z - a.z) * (c.y - a.y) - (c.z - a.z) * (b.y - a.y)
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Triangulate `geometry` with target edge length `target_h`.
pub fn triangulate(geometry: &Geometry, target_h: f64) -> Result<Mesh, MeshError> {
    if !(target_h > 0.0) {
        return Err(MeshError::BadTargetH(target_h));
    }
    let limit = 2.0 * target_h;
    let mut thinnest: Option<f64> = None;
    let mut feed = |w: f64| {
        thinnest = Some(thinnest.map_or(w, |t: f64| t.min(w)));
    };
    if let Some((lo, hi)) = geometry.ligament_window {
        feed(hi - lo);
    }
    if let Some(w) = geometry.branch_width {
        feed(w);
    }
    if let Some(inc) = &geometry.inclusion {
        let (z0, z1, y0, y1) = inc.shape.bbox();
        feed((z1 - z0).min(y1 - y0));
    }
    if let Some(w) = thinnest {
        if w < limit {
            return Err(MeshError::FeatureTooThin { width: w, limit });
        }
    }

    // Boundary chains: each outline segment sampled at spacing ≤ target_h,
    // endpoints kept exactly so corner coordinates survive.
    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::new();
    let mut handle_of: HashMap<(u64, u64), spade::handles::FixedVertexHandle> = HashMap::new();
    let mut insert = |cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>,
                      p: Point|
     -> Result<spade::handles::FixedVertexHandle, MeshError> {
        let key = (p.z.to_bits(), p.y.to_bits());
        if let Some(&h) = handle_of.get(&key) {
            return Ok(h);
        }
        let h = cdt
            .insert(Point2::new(p.z, p.y))
            .map_err(|e| MeshError::Kernel(format!("{e:?}")))?;
        handle_of.insert(key, h);
        Ok(h)
    };

    // An inclusion may share part of its outline with the walls (a slab
    // spanning the full strip height). Such chain nodes become forced
    // stations of the wall sampling, and chain subsegments that run along
    // the outer boundary are left to the wall constraints alone.
    let touch_tol = 1e-12;
    let chain: Vec<Point> = geometry
        .inclusion
        .as_ref()
        .map(|inc| inc.shape.perimeter_nodes(target_h))
        .unwrap_or_default();
    let on_outer =
        |p: Point| geometry.outline.iter().any(|s| dist_point_segment(p, s.a, s.b) < touch_tol);

    for seg in &geometry.outline {
        let len = seg.a.dist(seg.b);
        // Forced stations: chain nodes lying on this segment keep their
        // exact coordinates so they fuse with the interface chain.
        let mut stations: Vec<(f64, Point)> = chain
            .iter()
            .filter(|&&p| dist_point_segment(p, seg.a, seg.b) < touch_tol)
            .map(|&p| {
                let (dz, dy) = (seg.b.z - seg.a.z, seg.b.y - seg.a.y);
                let t = ((p.z - seg.a.z) * dz + (p.y - seg.a.y) * dy) / (len * len);
                (t, p)
            })
            .filter(|&(t, _)| t > touch_tol && t < 1.0 - touch_tol)
            .collect();
        stations.push((0.0, seg.a));
        stations.push((1.0, seg.b));
        stations.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        stations.dedup_by(|a, b| (a.0 - b.0).abs() < touch_tol);

        let mut prev = insert(&mut cdt, seg.a)?;
        for w in stations.windows(2) {
            let ((t0, _), (t1, p1)) = (w[0], w[1]);
            let n = (((t1 - t0) * len / target_h).ceil() as usize).max(1);
            for k in 1..=n {
                let p = if k == n {
                    p1
                } else {
                    let t = t0 + (t1 - t0) * k as f64 / n as f64;
                    Point::new(
                        seg.a.z + t * (seg.b.z - seg.a.z),
                        seg.a.y + t * (seg.b.y - seg.a.y),
                    )
                };
                let h = insert(&mut cdt, p)?;
                if h != prev {
                    cdt.add_constraint(prev, h);
                }
                prev = h;
            }
        }
    }
    if !chain.is_empty() {
        let handles: Vec<_> = chain
            .iter()
            .map(|&p| insert(&mut cdt, p))
            .collect::<Result<_, _>>()?;
        for i in 0..handles.len() {
            let j = (i + 1) % handles.len();
            let (a, b) = (handles[i], handles[j]);
            if a == b {
                continue;
            }
            let mid = Point::new(
                0.5 * (chain[i].z + chain[j].z),
                0.5 * (chain[i].y + chain[j].y),
            );
            // Wall-coincident runs already belong to the outer constraints.
            if on_outer(chain[i]) && on_outer(chain[j]) && on_outer(mid) {
                continue;
            }
            cdt.add_constraint(a, b);
        }
    }

    // Hexagonal background lattice, kept clear of all constrained curves.
    let (mut zmin, mut zmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in &geometry.outline {
        for p in [s.a, s.b] {
            zmin = zmin.min(p.z);
            zmax = zmax.max(p.z);
            ymin = ymin.min(p.y);
            ymax = ymax.max(p.y);
        }
    }
    let row_dy = target_h * 3f64.sqrt() / 2.0;
    let clearance = 0.6 * target_h;
    let n_rows = ((ymax - ymin) / row_dy).ceil() as usize;
    let n_cols = ((zmax - zmin) / target_h).ceil() as usize + 1;
    for row in 0..=n_rows {
        let y = ymin + row as f64 * row_dy;
        let offset = if row % 2 == 0 { 0.0 } else { 0.5 * target_h };
        for col in 0..=n_cols {
            let p = Point::new(zmin + offset + col as f64 * target_h, y);
            if !geometry.contains(p) {
                continue;
            }
            let mut clear = true;
            for s in &geometry.outline {
                if dist_point_segment(p, s.a, s.b) < clearance {
                    clear = false;
                    break;
                }
            }
            if clear {
                if let Some(inc) = &geometry.inclusion {
                    if p.dist(inc.shape.closest_boundary_point(p)) < clearance {
                        clear = false;
                    }
                }
            }
            if clear {
                insert(&mut cdt, p)?;
            }
        }
    }

    // Harvest: vertices in handle order, triangles kept by centroid winding.
    let vertices: Vec<Point> = cdt
        .vertices()
        .map(|v| {
            let q = v.position();
            Point::new(q.x, q.y)
        })
        .collect();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let vs = face.vertices();
        let idx = [vs[0].index(), vs[1].index(), vs[2].index()];
        let pts = [vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]];
        let centroid = Point::new(
            (pts[0].z + pts[1].z + pts[2].z) / 3.0,
            (pts[0].y + pts[1].y + pts[2].y) / 3.0,
        );
        if !geometry.contains(centroid) {
            continue;
        }
        let region = match &geometry.inclusion {
            Some(inc) if inc.shape.contains(centroid) => REGION_INCLUSION,
            _ => REGION_EXTERIOR,
        };
        let v = if orient(pts[0], pts[1], pts[2]) > 0.0 {
            idx
        } else {
            [idx[0], idx[2], idx[1]]
        };
        triangles.push(Tri { v, region });
    }

    let mut mesh = Mesh {
        vertices,
        triangles,
        boundary_edges: Vec::new(),
        target_h,
        grading: Grading { skin_layers: 4, min_h: target_h / 64.0 },
        layer_unresolved: false,
        curved_midpoints: HashMap::new(),
        interface: geometry.inclusion.as_ref().map(|i| i.shape),
        inclusion_b: geometry.inclusion.as_ref().map(|i| i.b),
        ports: geometry.ports.clone(),
        kind: geometry.kind,
        lambda: geometry.lambda,
    };
    mesh.drop_unused_vertices();
    mesh.rebuild_tagged_edges(&geometry.outline)?;
    mesh.rebuild_curved_midpoints();
    Ok(mesh)
}

impl Mesh {
    fn drop_unused_vertices(&mut self) {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in &t.v {
                used[v] = true;
            }
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::with_capacity(self.vertices.len());
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = kept.len();
                kept.push(self.vertices[i]);
            }
        }
        self.vertices = kept;
        for t in &mut self.triangles {
            for v in &mut t.v {
                *v = remap[*v];
            }
        }
    }

    /// Classify boundary and interface edges geometrically from scratch.
    fn rebuild_tagged_edges(
        &mut self,
        outline: &[crate::geometry::Segment],
    ) -> Result<(), MeshError> {
        let mut incidence: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                incidence
                    .entry(edge_key(t.v[e], t.v[(e + 1) % 3]))
                    .or_default()
                    .push(ti);
            }
        }
        let tol = 1e-9 * (1.0 + self.target_h);
        let mut edges = Vec::new();
        for (&(a, b), tris) in &incidence {
            match tris.len() {
                1 => {
                    let (pa, pb) = (self.vertices[a], self.vertices[b]);
                    let seg = outline.iter().find(|s| {
                        dist_point_segment(pa, s.a, s.b) < tol
                            && dist_point_segment(pb, s.a, s.b) < tol
                    });
                    let seg = seg.ok_or_else(|| {
                        MeshError::Invariant(format!(
                            "untagged boundary edge ({:?}, {:?})",
                            pa, pb
                        ))
                    })?;
                    let tag = match seg.tag {
                        BoundaryTag::Wall => EdgeTag::Wall,
                        BoundaryTag::Truncation(p) => EdgeTag::Truncation(p),
                        BoundaryTag::SymmetryLine => EdgeTag::SymmetryLine,
                    };
                    edges.push(TaggedEdge { v: [a, b], tag });
                }
                2 => {
                    if self.triangles[tris[0]].region != self.triangles[tris[1]].region {
                        edges.push(TaggedEdge { v: [a, b], tag: EdgeTag::InclusionInterface });
                    }
                }
                n => {
                    return Err(MeshError::Invariant(format!(
                        "edge shared by {n} triangles"
                    )))
                }
            }
        }
        // Deterministic order regardless of hash iteration.
        edges.sort_by_key(|e| (e.v[0], e.v[1]));
        self.boundary_edges = edges;
        Ok(())
    }

    /// Recompute curved midpoints for all interface edges of a curved shape.
    fn rebuild_curved_midpoints(&mut self) {
        self.curved_midpoints.clear();
        let Some(shape) = self.interface else { return };
        if !shape.is_curved() {
            return;
        }
        for e in &self.boundary_edges {
            if e.tag != EdgeTag::InclusionInterface {
                continue;
            }
            let (a, b) = (self.vertices[e.v[0]], self.vertices[e.v[1]]);
            let chord_mid = Point::new(0.5 * (a.z + b.z), 0.5 * (a.y + b.y));
            let on_curve = shape.closest_boundary_point(chord_mid);
            self.curved_midpoints
                .insert(edge_key(e.v[0], e.v[1]), on_curve);
        }
    }

    pub fn triangle_points(&self, t: &Tri) -> [Point; 3] {
        [
            self.vertices[t.v[0]],
            self.vertices[t.v[1]],
            self.vertices[t.v[2]],
        ]
    }

    /// Longest edge length in the whole mesh.
    pub fn max_edge(&self) -> f64 {
        let mut m = 0.0f64;
        for t in &self.triangles {
            let p = self.triangle_points(t);
            for e in 0..3 {
                m = m.max(p[e].dist(p[(e + 1) % 3]));
            }
        }
        m
    }

    /// Structural invariants: conformity, orientation, interface separation.
    pub fn check_invariants(&self) -> Result<(), MeshError> {
        let mut incidence: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            let p = self.triangle_points(t);
            if orient(p[0], p[1], p[2]) <= 0.0 {
                return Err(MeshError::Invariant(format!(
                    "triangle {ti} is not positively oriented"
                )));
            }
            for e in 0..3 {
                incidence
                    .entry(edge_key(t.v[e], t.v[(e + 1) % 3]))
                    .or_default()
                    .push(ti);
            }
        }
        let tagged: HashMap<(usize, usize), EdgeTag> = self
            .boundary_edges
            .iter()
            .map(|e| (edge_key(e.v[0], e.v[1]), e.tag))
            .collect();
        for (key, tris) in &incidence {
            match (tris.len(), tagged.get(key)) {
                (1, Some(tag)) if *tag != EdgeTag::InclusionInterface => {}
                (1, _) => {
                    return Err(MeshError::Invariant(
                        "outer boundary edge lacks a boundary tag".into(),
                    ))
                }
                (2, Some(EdgeTag::InclusionInterface)) => {
                    let (r0, r1) = (
                        self.triangles[tris[0]].region,
                        self.triangles[tris[1]].region,
                    );
                    if r0 == r1 {
                        return Err(MeshError::Invariant(
                            "interface edge does not separate regions".into(),
                        ));
                    }
                }
                (2, Some(_)) => {
                    return Err(MeshError::Invariant(
                        "internal edge carries an outer-boundary tag".into(),
                    ))
                }
                (2, None) => {
                    if self.triangles[tris[0]].region != self.triangles[tris[1]].region {
                        return Err(MeshError::Invariant(
                            "region-separating edge lacks the interface tag".into(),
                        ));
                    }
                }
                (n, _) => {
                    return Err(MeshError::Invariant(format!("edge shared by {n} triangles")))
                }
            }
        }
        for e in &self.boundary_edges {
            if !incidence.contains_key(&edge_key(e.v[0], e.v[1])) {
                return Err(MeshError::Invariant("tagged edge not in mesh".into()));
            }
        }
        Ok(())
    }

    /// Sum of triangle areas per region (exterior, inclusion), with curved
    /// interface edges still counted by their straight chords.
    pub fn region_areas(&self) -> (f64, f64) {
        let mut ext = 0.0;
        let mut inc = 0.0;
        for t in &self.triangles {
            let p = self.triangle_points(t);
            let a = 0.5 * orient(p[0], p[1], p[2]);
            if t.region == REGION_INCLUSION {
                inc += a;
            } else {
                ext += a;
            }
        }
        (ext, inc)
    }
}

/// Refine until every edge within `d_skin` of the inclusion outline is at
/// most d_skin/layers_per_skin (floored at `mesh.grading.min_h`, setting the
/// unresolved flag). Pure refinement: no existing vertex moves, no element
/// grows.
pub fn grade_near_interface(mesh: &Mesh, eta: f64, b0: f64, layers_per_skin: usize) -> Mesh {
    assert!(eta > 0.0 && b0 > 0.0 && layers_per_skin > 0);
    let mut out = mesh.clone();
    let Some(shape) = mesh.interface else { return out };
    let d_skin = skin_depth(mesh.lambda, eta, b0);
    let wanted = d_skin / layers_per_skin as f64;
    let local_h = wanted.max(mesh.grading.min_h);
    out.layer_unresolved = wanted < mesh.grading.min_h;
    out.grading.skin_layers = layers_per_skin;

    let near = |vertices: &[Point], v: &[usize; 3]| -> bool {
        v.iter().any(|&i| {
            let p = vertices[i];
            p.dist(shape.closest_boundary_point(p)) <= d_skin
        })
    };

    loop {
        // Mark longest edges of violating triangles, then close so that every
        // marked edge is the longest edge of each triangle containing it.
        let mut marked: std::collections::HashSet<(usize, usize)> = Default::default();
        let longest = |t: &Tri, vs: &[Point]| -> ((usize, usize), f64) {
            let mut best = ((0, 0), -1.0);
            for e in 0..3 {
                let (a, b) = (t.v[e], t.v[(e + 1) % 3]);
                let len = vs[a].dist(vs[b]);
                if len > best.1 {
                    best = (edge_key(a, b), len);
                }
            }
            best
        };
        for t in &out.triangles {
            let (key, len) = longest(t, &out.vertices);
            if len > local_h && near(&out.vertices, &t.v) {
                marked.insert(key);
            }
        }
        if marked.is_empty() {
            break;
        }
        loop {
            let mut grew = false;
            for t in &out.triangles {
                let has_marked = (0..3).any(|e| {
                    marked.contains(&edge_key(t.v[e], t.v[(e + 1) % 3]))
                });
                if has_marked {
                    let (key, _) = longest(t, &out.vertices);
                    if marked.insert(key) {
                        grew = true;
                    }
                }
            }
            if !grew {
                break;
            }
        }

        // Create midpoints (snapped onto the analytic curve for interface
        // edges) and split every triangle according to its marked edges.
        let tagged: HashMap<(usize, usize), EdgeTag> = out
            .boundary_edges
            .iter()
            .map(|e| (edge_key(e.v[0], e.v[1]), e.tag))
            .collect();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        for &key in &marked {
            let (a, b) = (out.vertices[key.0], out.vertices[key.1]);
            let mut mid = Point::new(0.5 * (a.z + b.z), 0.5 * (a.y + b.y));
            if tagged.get(&key) == Some(&EdgeTag::InclusionInterface) && shape.is_curved() {
                mid = shape.closest_boundary_point(mid);
            }
            midpoint.insert(key, out.vertices.len());
            out.vertices.push(mid);
        }
        let mut new_tris = Vec::with_capacity(out.triangles.len() * 2);
        for t in &out.triangles {
            let keys = [
                edge_key(t.v[0], t.v[1]),
                edge_key(t.v[1], t.v[2]),
                edge_key(t.v[2], t.v[0]),
            ];
            let mids: Vec<Option<usize>> =
                keys.iter().map(|k| midpoint.get(k).copied()).collect();
            let n_marked = mids.iter().flatten().count();
            let [a, b, c] = t.v;
            match n_marked {
                0 => new_tris.push(*t),
                3 => {
                    let (mab, mbc, mca) =
                        (mids[0].unwrap(), mids[1].unwrap(), mids[2].unwrap());
                    for v in [[a, mab, mca], [mab, b, mbc], [mca, mbc, c], [mab, mbc, mca]] {
                        new_tris.push(Tri { v, region: t.region });
                    }
                }
                _ => {
                    // Rotate so the first edge is marked; handles 1 and 2.
                    let (mut vv, mut mm) = (t.v, [mids[0], mids[1], mids[2]]);
                    while mm[0].is_none() {
                        vv = [vv[1], vv[2], vv[0]];
                        mm = [mm[1], mm[2], mm[0]];
                    }
                    let [a, b, c] = vv;
                    let p = mm[0].unwrap();
                    match (mm[1], mm[2]) {
                        (None, None) => {
                            new_tris.push(Tri { v: [a, p, c], region: t.region });
                            new_tris.push(Tri { v: [p, b, c], region: t.region });
                        }
                        (Some(q), None) => {
                            new_tris.push(Tri { v: [a, p, q], region: t.region });
                            new_tris.push(Tri { v: [a, q, c], region: t.region });
                            new_tris.push(Tri { v: [p, b, q], region: t.region });
                        }
                        (None, Some(r)) => {
                            new_tris.push(Tri { v: [a, p, r], region: t.region });
                            new_tris.push(Tri { v: [p, b, r], region: t.region });
                            new_tris.push(Tri { v: [r, b, c], region: t.region });
                        }
                        (Some(_), Some(_)) => unreachable!("rotation handles 3 marks above"),
                    }
                }
            }
        }
        out.triangles = new_tris;

        // Split tagged edges alongside their triangles.
        let mut new_edges = Vec::with_capacity(out.boundary_edges.len() + marked.len());
        for e in &out.boundary_edges {
            let key = edge_key(e.v[0], e.v[1]);
            if let Some(&m) = midpoint.get(&key) {
                new_edges.push(TaggedEdge { v: [e.v[0], m], tag: e.tag });
                new_edges.push(TaggedEdge { v: [m, e.v[1]], tag: e.tag });
            } else {
                new_edges.push(*e);
            }
        }
        out.boundary_edges = new_edges;
    }

    // Snapped interface vertices can only have improved the chord geometry;
    // re-derive the curved midpoints for the final edge set.
    out.boundary_edges.sort_by_key(|e| (edge_key(e.v[0], e.v[1]), e.tag.code()));
    out.rebuild_curved_midpoints();
    out
}

/// Serialize to the text dump format: header `nv nt nbe`, vertex lines
/// `z y`, triangle lines `v1 v2 v3 region`, edge lines `v1 v2 tag`,
/// 1-based indices, 17 significant digits.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{} {} {}\n",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.boundary_edges.len()
    ));
    for v in &mesh.vertices {
        s.push_str(&format!("{:.16e} {:.16e}\n", v.z, v.y));
    }
    for t in &mesh.triangles {
        s.push_str(&format!(
            "{} {} {} {}\n",
            t.v[0] + 1,
            t.v[1] + 1,
            t.v[2] + 1,
            t.region
        ));
    }
    for e in &mesh.boundary_edges {
        s.push_str(&format!("{} {} {}\n", e.v[0] + 1, e.v[1] + 1, e.tag.code()));
    }
    s
}

/// Parse the text dump format back into a bare mesh (no curvature map, no
/// port/grading metadata — geometry-independent consumers only).
pub fn read_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| MeshError::BadFile("empty file".into()))?;
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| MeshError::BadFile(format!("bad header {header}"))))
        .collect::<Result<_, _>>()?;
    let [nv, nt, nbe] = counts[..] else {
        return Err(MeshError::BadFile("header must be `nv nt nbe`".into()));
    };
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines
            .next()
            .ok_or_else(|| MeshError::BadFile("truncated vertex block".into()))?;
        let mut it = line.split_whitespace();
        let z: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| MeshError::BadFile(format!("bad vertex line {line}")))?;
        let y: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| MeshError::BadFile(format!("bad vertex line {line}")))?;
        vertices.push(Point::new(z, y));
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let line = lines
            .next()
            .ok_or_else(|| MeshError::BadFile("truncated triangle block".into()))?;
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| MeshError::BadFile(format!("bad triangle {line}"))))
            .collect::<Result<_, _>>()?;
        let [v1, v2, v3, region] = nums[..] else {
            return Err(MeshError::BadFile(format!("bad triangle line {line}")));
        };
        triangles.push(Tri { v: [v1 - 1, v2 - 1, v3 - 1], region: region as u8 });
    }
    let mut boundary_edges = Vec::with_capacity(nbe);
    for _ in 0..nbe {
        let line = lines
            .next()
            .ok_or_else(|| MeshError::BadFile("truncated edge block".into()))?;
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| MeshError::BadFile(format!("bad edge {line}"))))
            .collect::<Result<_, _>>()?;
        let [v1, v2, code] = nums[..] else {
            return Err(MeshError::BadFile(format!("bad edge line {line}")));
        };
        let tag = EdgeTag::from_code(code)
            .ok_or_else(|| MeshError::BadFile(format!("unknown edge tag {code}")))?;
        boundary_edges.push(TaggedEdge { v: [v1 - 1, v2 - 1], tag });
    }
    Ok(Mesh {
        vertices,
        triangles,
        boundary_edges,
        target_h: 0.0,
        grading: Grading { skin_layers: 4, min_h: 0.0 },
        layer_unresolved: false,
        curved_midpoints: HashMap::new(),
        interface: None,
        inclusion_b: None,
        ports: Vec::new(),
        kind: DomainKind::FullGuide,
        lambda: 0.0,
    })
}
