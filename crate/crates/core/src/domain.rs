//! Box and ball domains, their boundary meshes, spheres inside them, the
//! tubular projection onto the boundary and shrunken domains `Ω_ε`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cross, dist, norm};
use crate::quadrature::Quadrature;

/// Default tube width as a fraction of the radius (ball) or shortest side (box).
pub const DEFAULT_TUBE_FRACTION: f64 = 0.1;
pub const MIN_RESOLUTION: usize = 8;
pub const MIN_BOUNDARY_RESOLUTION: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    shape: Shape,
    resolution: usize,
    #[serde(default = "default_tube_fraction")]
    tube_fraction: f64,
}

fn default_tube_fraction() -> f64 {
    DEFAULT_TUBE_FRACTION
}

/// Builds a domain after validating its extent and resolution.
pub fn make_domain(shape: Shape, resolution: usize) -> Result<Domain> {
    Domain::new(shape, resolution)
}

impl Domain {
    pub fn new(shape: Shape, resolution: usize) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::Config(format!(
                "grid resolution {resolution} is below the minimum {MIN_RESOLUTION}"
            )));
        }
        match &shape {
            Shape::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.len() < 2 {
                    return Err(Error::Config("box corners must share a dimension ≥ 2".into()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::Config(format!("degenerate box {lo:?}..{hi:?}")));
                }
            }
            Shape::Ball { center, radius } => {
                if center.len() < 2 {
                    return Err(Error::Config("ball dimension must be ≥ 2".into()));
                }
                if !(*radius > 0.0) || !radius.is_finite() || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config(format!("degenerate ball radius {radius}")));
                }
            }
        }
        Ok(Domain {
            shape,
            resolution,
            tube_fraction: DEFAULT_TUBE_FRACTION,
        })
    }

    pub fn ball(center: &[f64], radius: f64, resolution: usize) -> Result<Self> {
        Self::new(
            Shape::Ball {
                center: center.to_vec(),
                radius,
            },
            resolution,
        )
    }

    pub fn unit_disk(resolution: usize) -> Result<Self> {
        Self::ball(&[0.0, 0.0], 1.0, resolution)
    }

    pub fn boxed(lo: &[f64], hi: &[f64], resolution: usize) -> Result<Self> {
        Self::new(
            Shape::Box {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
            resolution,
        )
    }

    pub fn with_tube_fraction(mut self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 0.5) {
            return Err(Error::Config(format!("tube fraction {fraction} outside (0, 0.5)")));
        }
        self.tube_fraction = fraction;
        Ok(self)
    }

    pub fn with_resolution(&self, resolution: usize) -> Result<Self> {
        let mut d = Self::new(self.shape.clone(), resolution)?;
        d.tube_fraction = self.tube_fraction;
        Ok(d)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Box { lo, .. } => lo.len(),
            Shape::Ball { center, .. } => center.len(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Box { lo, hi } => (lo.clone(), hi.clone()),
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Quadrature cell size per axis.
    pub fn cell_size(&self) -> Vec<f64> {
        let (lo, hi) = self.bounding_box();
        lo.iter()
            .zip(&hi)
            .map(|(a, b)| (b - a) / self.resolution as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_size().iter().product()
    }

    /// Largest cell size over the axes.
    pub fn spacing(&self) -> f64 {
        self.cell_size().into_iter().fold(0.0, f64::max)
    }

    /// Radius of a ball, shortest side of a box.
    pub fn feature_size(&self) -> f64 {
        match &self.shape {
            Shape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| b - a)
                .fold(f64::INFINITY, f64::min),
            Shape::Ball { radius, .. } => *radius,
        }
    }

    pub fn tube_width(&self) -> f64 {
        self.tube_fraction * self.feature_size()
    }

    /// Signed distance to Γ, negative inside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => dist(x, center) - radius,
            Shape::Box { lo, hi } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for a in 0..lo.len() {
                    let d = (lo[a] - x[a]).max(x[a] - hi[a]);
                    if d > 0.0 {
                        outside += d * d;
                    }
                    inside = inside.max(d);
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) < 0.0
    }

    /// Distance to Γ for points inside, zero outside.
    pub fn clearance(&self, x: &[f64]) -> f64 {
        (-self.signed_distance(x)).max(0.0)
    }

    pub fn contains_ball(&self, center: &[f64], radius: f64) -> bool {
        self.signed_distance(center) <= -radius
    }

    pub fn volume(&self) -> f64 {
        match &self.shape {
            Shape::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Shape::Ball { radius, .. } => unit_ball_volume(self.dim()) * radius.powi(self.dim() as i32),
        }
    }

    /// Midpoint rule over Ω at the domain resolution; every node lies
    /// strictly inside Ω.
    pub fn quadrature(&self) -> Quadrature {
        let (lo, hi) = self.bounding_box();
        Quadrature::cells(&lo, &hi, self.resolution, |x| self.signed_distance(x))
    }

    /// `∫_Ω f` with the rule of [`Domain::quadrature`], streamed.
    pub fn integrate<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> f64 {
        let (lo, hi) = self.bounding_box();
        crate::quadrature::integrate_streamed(&lo, &hi, self.resolution, |x| self.signed_distance(x), f)
    }

    /// Midpoint rule over `B_r(center) ∩ Ω` with `cells_across` cells along
    /// a diameter.
    pub fn ball_quadrature(&self, center: &[f64], radius: f64, cells_across: usize) -> Quadrature {
        let clip = |x: &[f64]| self.signed_distance(x);
        Quadrature::ball(center, radius, cells_across, Some(&clip))
    }

    pub fn boundary_mesh(&self, boundary_resolution: usize) -> Result<BoundaryMesh> {
        if boundary_resolution < MIN_BOUNDARY_RESOLUTION {
            return Err(Error::Config(format!(
                "boundary resolution {boundary_resolution} is below {MIN_BOUNDARY_RESOLUTION}"
            )));
        }
        match (&self.shape, self.dim()) {
            (Shape::Ball { center, radius }, 2) => Ok(BoundaryMesh::circle(center, *radius, boundary_resolution)),
            (Shape::Ball { center, radius }, 3) => Ok(BoundaryMesh::sphere(center, *radius, boundary_resolution)),
            (Shape::Box { lo, hi }, 2) => Ok(BoundaryMesh::rectangle(lo, hi, boundary_resolution)),
            (Shape::Box { lo, hi }, 3) => Ok(BoundaryMesh::cuboid(lo, hi, boundary_resolution)),
            (_, n) => Err(Error::Config(format!("boundary meshes are only built for n ∈ {{2, 3}}, got {n}"))),
        }
    }

    /// Mesh of `S_r(center)`; the closed ball must lie inside Ω.
    pub fn sphere_mesh(&self, center: &[f64], radius: f64, resolution: usize) -> Result<BoundaryMesh> {
        if center.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: center.len(),
            });
        }
        if !(radius > 0.0) {
            return Err(Error::Config(format!("sphere radius {radius} must be positive")));
        }
        let clearance = -self.signed_distance(center);
        if radius >= clearance {
            return Err(Error::BallOutsideDomain {
                center: center.to_vec(),
                radius,
                clearance,
            });
        }
        sphere_mesh(center, radius, resolution)
    }

    /// Nearest boundary point, signed distance and reflection `2P(x) − x`.
    pub fn tubular_project(&self, x: &[f64]) -> Result<TubularPoint> {
        let sd = self.signed_distance(x);
        let width = self.tube_width();
        if sd.abs() > width {
            return Err(Error::OutsideTube {
                point: x.to_vec(),
                distance: sd,
                width,
            });
        }
        let projection = match &self.shape {
            Shape::Ball { center, radius } => {
                let r = dist(x, center);
                x.iter()
                    .zip(center)
                    .map(|(xi, ci)| ci + radius * (xi - ci) / r)
                    .collect::<Vec<f64>>()
            }
            Shape::Box { lo, hi } => {
                if sd >= 0.0 {
                    x.iter()
                        .enumerate()
                        .map(|(a, xi)| xi.clamp(lo[a], hi[a]))
                        .collect()
                } else {
                    // Inside: move to the nearest face.
                    let mut best = (f64::INFINITY, 0usize, 0.0);
                    for a in 0..lo.len() {
                        let dl = x[a] - lo[a];
                        let dh = hi[a] - x[a];
                        if dl < best.0 {
                            best = (dl, a, lo[a]);
                        }
                        if dh < best.0 {
                            best = (dh, a, hi[a]);
                        }
                    }
                    let mut p = x.to_vec();
                    p[best.1] = best.2;
                    p
                }
            }
        };
        let reflection = projection.iter().zip(x).map(|(p, xi)| 2.0 * p - xi).collect();
        Ok(TubularPoint {
            projection,
            signed_distance: sd,
            reflection,
        })
    }

    /// `Ω_ε = {x ∈ Ω : dist(x, Γ) > ε}` with the same resolution.
    pub fn inner_domain(&self, eps: f64) -> Result<Domain> {
        let limit = match &self.shape {
            Shape::Ball { radius, .. } => *radius,
            Shape::Box { .. } => 0.5 * self.feature_size(),
        };
        if !(eps > 0.0) || eps >= limit {
            return Err(Error::EmptyDomain { eps, limit });
        }
        let shape = match &self.shape {
            Shape::Ball { center, radius } => Shape::Ball {
                center: center.clone(),
                radius: radius - eps,
            },
            Shape::Box { lo, hi } => Shape::Box {
                lo: lo.iter().map(|v| v + eps).collect(),
                hi: hi.iter().map(|v| v - eps).collect(),
            },
        };
        let mut d = Domain::new(shape, self.resolution)?;
        d.tube_fraction = self.tube_fraction;
        Ok(d)
    }
}

/// Projection data for a point in the tubular neighborhood of Γ.
#[derive(Clone, Debug, PartialEq)]
pub struct TubularPoint {
    pub projection: Vec<f64>,
    /// Negative inside Ω.
    pub signed_distance: f64,
    pub reflection: Vec<f64>,
}

pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

/// Surface area of the unit sphere `S^{n−1}`.
pub fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Mesh of a sphere without a containing domain check.
pub fn sphere_mesh(center: &[f64], radius: f64, resolution: usize) -> Result<BoundaryMesh> {
    if resolution < MIN_BOUNDARY_RESOLUTION {
        return Err(Error::Config(format!(
            "sphere resolution {resolution} is below {MIN_BOUNDARY_RESOLUTION}"
        )));
    }
    match center.len() {
        2 => Ok(BoundaryMesh::circle(center, radius, resolution)),
        3 => Ok(BoundaryMesh::sphere(center, radius, resolution)),
        n => Err(Error::Config(format!("sphere meshes are only built for n ∈ {{2, 3}}, got {n}"))),
    }
}

/// Closed boundary discretization: a counter-clockwise polygon (n = 2) or an
/// outward-oriented watertight triangle mesh (n = 3).
#[derive(Clone, Debug)]
pub struct BoundaryMesh {
    dim: usize,
    vertices: Vec<f64>,
    /// `dim` vertex indices per element.
    elements: Vec<usize>,
    measures: Vec<f64>,
}

impl BoundaryMesh {
    fn from_parts(dim: usize, vertices: Vec<f64>, elements: Vec<usize>) -> Self {
        let mut mesh = BoundaryMesh {
            dim,
            vertices,
            elements,
            measures: Vec::new(),
        };
        mesh.measures = (0..mesh.element_count()).map(|e| mesh.compute_measure(e)).collect();
        mesh
    }

    fn circle(center: &[f64], radius: f64, count: usize) -> Self {
        let mut vertices = Vec::with_capacity(2 * count);
        for i in 0..count {
            let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            vertices.push(center[0] + radius * t.cos());
            vertices.push(center[1] + radius * t.sin());
        }
        let elements = (0..count).flat_map(|i| [i, (i + 1) % count]).collect();
        Self::from_parts(2, vertices, elements)
    }

    fn rectangle(lo: &[f64], hi: &[f64], count: usize) -> Self {
        let w = hi[0] - lo[0];
        let h = hi[1] - lo[1];
        let per = 2.0 * (w + h);
        let nw = ((count as f64 * w / per).round() as usize).max(1);
        let nh = ((count as f64 * h / per).round() as usize).max(1);
        let mut vertices = Vec::new();
        // Counter-clockwise from the lower-left corner.
        for i in 0..nw {
            vertices.extend_from_slice(&[lo[0] + w * i as f64 / nw as f64, lo[1]]);
        }
        for i in 0..nh {
            vertices.extend_from_slice(&[hi[0], lo[1] + h * i as f64 / nh as f64]);
        }
        for i in 0..nw {
            vertices.extend_from_slice(&[hi[0] - w * i as f64 / nw as f64, hi[1]]);
        }
        for i in 0..nh {
            vertices.extend_from_slice(&[lo[0], hi[1] - h * i as f64 / nh as f64]);
        }
        let count = vertices.len() / 2;
        let elements = (0..count).flat_map(|i| [i, (i + 1) % count]).collect();
        Self::from_parts(2, vertices, elements)
    }

    /// Cube-sphere: the surface of a `k×k×k` lattice cube mapped onto the
    /// sphere with the equal-angle projection, `k = resolution / 4`.
    fn sphere(center: &[f64], radius: f64, resolution: usize) -> Self {
        let k = (resolution / 4).max(2);
        let counts = [k, k, k];
        let c = center.to_vec();
        Self::lattice_surface(counts, c.clone(), move |idx| {
            let mut p = [0.0; 3];
            for a in 0..3 {
                let u = 2.0 * idx[a] as f64 / k as f64 - 1.0;
                p[a] = (FRAC_PI_4 * u).tan();
            }
            let r = norm(&p);
            [
                c[0] + radius * p[0] / r,
                c[1] + radius * p[1] / r,
                c[2] + radius * p[2] / r,
            ]
        })
    }

    fn cuboid(lo: &[f64], hi: &[f64], resolution: usize) -> Self {
        let sides: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
        let longest = sides.iter().cloned().fold(0.0, f64::max);
        let base = (resolution / 4).max(2) as f64;
        let counts = [0, 1, 2].map(|a| ((base * sides[a] / longest).round() as usize).max(1));
        let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let (lo, sides2) = (lo.to_vec(), sides.clone());
        Self::lattice_surface(counts, center, move |idx| {
            [0, 1, 2].map(|a| lo[a] + sides2[a] * idx[a] as f64 / counts[a] as f64)
        })
    }

    /// Triangulates the six faces of the lattice box `[0,counts]`, sharing
    /// vertices along edges, and orients every triangle away from `center`.
    fn lattice_surface<F>(counts: [usize; 3], center: Vec<f64>, position: F) -> Self
    where
        F: Fn([usize; 3]) -> [f64; 3],
    {
        let mut index: HashMap<[usize; 3], usize> = HashMap::new();
        let mut vertices: Vec<f64> = Vec::new();
        let mut elements: Vec<usize> = Vec::new();
        let mut vid = |key: [usize; 3], vertices: &mut Vec<f64>| -> usize {
            *index.entry(key).or_insert_with(|| {
                let p = position(key);
                vertices.extend_from_slice(&p);
                vertices.len() / 3 - 1
            })
        };
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in [0, counts[axis]] {
                for i in 0..counts[u] {
                    for j in 0..counts[v] {
                        let mut corners = [[0usize; 3]; 4];
                        for (c, (di, dj)) in [(0, 0), (1, 0), (1, 1), (0, 1)].iter().enumerate() {
                            corners[c][axis] = side;
                            corners[c][u] = i + di;
                            corners[c][v] = j + dj;
                        }
                        let ids = corners.map(|c| vid(c, &mut vertices));
                        // Split along the diagonal nearer the face center for symmetry.
                        let flip = (i + j) % 2 == 1;
                        let tris = if flip {
                            [[ids[0], ids[1], ids[3]], [ids[1], ids[2], ids[3]]]
                        } else {
                            [[ids[0], ids[1], ids[2]], [ids[0], ids[2], ids[3]]]
                        };
                        for t in tris {
                            elements.extend_from_slice(&t);
                        }
                    }
                }
            }
        }
        // Orient outward.
        for t in elements.chunks_exact_mut(3) {
            let p = |i: usize| [vertices[3 * i], vertices[3 * i + 1], vertices[3 * i + 2]];
            let (a, b, c) = (p(t[0]), p(t[1]), p(t[2]));
            let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let nrm = cross(&e1, &e2);
            let centroid = [0, 1, 2].map(|k| (a[k] + b[k] + c[k]) / 3.0 - center[k]);
            if nrm[0] * centroid[0] + nrm[1] * centroid[1] + nrm[2] * centroid[2] < 0.0 {
                t.swap(1, 2);
            }
        }
        Self::from_parts(3, vertices, elements)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len() / self.dim
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vertices(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.vertices.chunks_exact(self.dim)
    }

    pub fn element_count(&self) -> usize {
        self.elements.len() / self.dim
    }

    /// Vertex indices of element `e` (2 for segments, 3 for triangles).
    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e * self.dim..(e + 1) * self.dim]
    }

    pub fn measure(&self, e: usize) -> f64 {
        self.measures[e]
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }

    pub fn centroid(&self, e: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for &v in self.element(e) {
            for (ci, xi) in c.iter_mut().zip(self.vertex(v)) {
                *ci += xi / self.dim as f64;
            }
        }
        c
    }

    /// Outward unit normal of element `e`.
    pub fn normal(&self, e: usize) -> Vec<f64> {
        let el = self.element(e);
        match self.dim {
            2 => {
                let (a, b) = (self.vertex(el[0]), self.vertex(el[1]));
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let l = (dx * dx + dy * dy).sqrt();
                vec![dy / l, -dx / l]
            }
            _ => {
                let (a, b, c) = (self.vertex(el[0]), self.vertex(el[1]), self.vertex(el[2]));
                let e1: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
                let e2: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
                let n = cross(&e1, &e2);
                let l = norm(&n);
                n.iter().map(|v| v / l).collect()
            }
        }
    }

    fn compute_measure(&self, e: usize) -> f64 {
        let el = self.element(e);
        match self.dim {
            2 => dist(self.vertex(el[0]), self.vertex(el[1])),
            _ => {
                let (a, b, c) = (self.vertex(el[0]), self.vertex(el[1]), self.vertex(el[2]));
                let e1: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
                let e2: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
                0.5 * norm(&cross(&e1, &e2))
            }
        }
    }

    /// Largest element diameter.
    pub fn max_edge(&self) -> f64 {
        (0..self.element_count())
            .map(|e| {
                let el = self.element(e);
                let mut m: f64 = 0.0;
                for i in 0..el.len() {
                    for j in i + 1..el.len() {
                        m = m.max(dist(self.vertex(el[i]), self.vertex(el[j])));
                    }
                }
                m
            })
            .fold(0.0, f64::max)
    }

    /// Polygon: a single closed loop. Triangles: every directed edge appears
    /// once and its reverse once (watertight and consistently oriented).
    pub fn is_closed(&self) -> bool {
        if self.dim == 2 {
            let mut next = vec![usize::MAX; self.vertex_count()];
            for e in 0..self.element_count() {
                let el = self.element(e);
                if next[el[0]] != usize::MAX {
                    return false;
                }
                next[el[0]] = el[1];
            }
            let mut v = 0;
            for _ in 0..self.vertex_count() {
                v = next[v];
                if v == usize::MAX {
                    return false;
                }
            }
            return v == 0 && self.element_count() == self.vertex_count();
        }
        let mut count: HashMap<(usize, usize), i32> = HashMap::new();
        for e in 0..self.element_count() {
            let el = self.element(e);
            for i in 0..3 {
                *count.entry((el[i], el[(i + 1) % 3])).or_default() += 1;
            }
        }
        count
            .iter()
            .all(|(&(a, b), &c)| c == 1 && count.get(&(b, a)) == Some(&1))
    }

    /// `∫_Γ f dσ` by element-centroid quadrature.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        (0..self.element_count())
            .map(|e| f(&self.centroid(e)) * self.measure(e))
            .sum()
    }

    /// `∫_Γ v·ν dσ` by element-centroid quadrature.
    pub fn flux<F: Fn(&[f64]) -> Vec<f64>>(&self, v: F) -> f64 {
        (0..self.element_count())
            .map(|e| {
                let val = v(&self.centroid(e));
                crate::linalg::dot(&val, &self.normal(e)) * self.measure(e)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn disk_domain_cell_volume() {
        let d = make_domain(
            Shape::Ball {
                center: vec![0.0, 0.0],
                radius: 1.0,
            },
            128,
        )
        .unwrap();
        assert!((d.cell_volume() - (2.0f64 / 128.0).powi(2)).abs() < 1e-15);
        let q = d.quadrature();
        assert!(q.iter().all(|(p, _)| d.contains(p)));
    }

    #[test]
    fn unit_square_grid() {
        let d = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 64).unwrap();
        let q = d.quadrature();
        assert_eq!(q.len(), 64 * 64);
        assert!((q.measure() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_extents_are_rejected() {
        assert!(Domain::ball(&[0.0, 0.0], 0.0, 128).is_err());
        assert!(Domain::boxed(&[0.0, 0.0], &[1.0, 0.0], 64).is_err());
        assert!(Domain::unit_disk(4).is_err());
    }

    #[test]
    fn circle_and_square_perimeters() {
        let disk = Domain::unit_disk(64).unwrap().boundary_mesh(1024).unwrap();
        assert!((disk.total_measure() - 2.0 * PI).abs() < 1e-4);
        assert!(disk.is_closed());
        let sq = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 64)
            .unwrap()
            .boundary_mesh(400)
            .unwrap();
        assert!((sq.total_measure() - 4.0).abs() < 1e-12);
        assert!(sq.is_closed());
    }

    #[test]
    fn sphere_area_converges() {
        let ball = Domain::ball(&[0.0, 0.0, 0.0], 1.0, 32).unwrap();
        let mesh = ball.boundary_mesh(512).unwrap();
        assert!(mesh.is_closed());
        assert!((mesh.total_measure() - 4.0 * PI).abs() < 1e-3, "{}", mesh.total_measure());
        let small = ball.sphere_mesh(&[0.0, 0.0, 0.0], 0.3, 128).unwrap();
        assert!((small.total_measure() - 4.0 * PI * 0.09).abs() < 1e-3);
    }

    #[test]
    fn circle_inside_domain() {
        let d = Domain::unit_disk(64).unwrap();
        let m = d.sphere_mesh(&[0.0, 0.0], 0.5, 1024).unwrap();
        assert!((m.total_measure() - PI).abs() < 1e-4);
        assert!(matches!(
            d.sphere_mesh(&[0.6, 0.0], 0.5, 64),
            Err(Error::BallOutsideDomain { .. })
        ));
    }

    #[test]
    fn divergence_theorem_on_meshes() {
        let cases = [
            Domain::unit_disk(32).unwrap(),
            Domain::boxed(&[0.0, 0.0], &[1.0, 2.0], 32).unwrap(),
            Domain::ball(&[0.0, 0.0, 0.0], 1.0, 16).unwrap(),
            Domain::boxed(&[0.0, 0.0, 0.0], &[1.0, 1.0, 2.0], 16).unwrap(),
        ];
        for d in cases {
            let mesh = d.boundary_mesh(256).unwrap();
            let flux = mesh.flux(|x| x.to_vec());
            let expect = d.dim() as f64 * d.volume();
            assert!(((flux - expect) / expect).abs() < 1e-3, "{flux} vs {expect}");
        }
    }

    #[test]
    fn tubular_projection_examples() {
        let sq = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 64).unwrap();
        let t = sq.tubular_project(&[0.5, 1.02]).unwrap();
        assert!(dist(&t.projection, &[0.5, 1.0]) < 1e-15);
        assert!(dist(&t.reflection, &[0.5, 0.98]) < 1e-12);
        let corner = sq.tubular_project(&[1.02, 1.02]).unwrap();
        assert!(dist(&corner.projection, &[1.0, 1.0]) < 1e-15);
        assert!(dist(&corner.reflection, &[0.98, 0.98]) < 1e-12);
        let disk = Domain::unit_disk(64).unwrap();
        let t = disk.tubular_project(&[1.05, 0.0]).unwrap();
        assert!(dist(&t.projection, &[1.0, 0.0]) < 1e-15);
        assert!(dist(&t.reflection, &[0.95, 0.0]) < 1e-12);
        assert!(matches!(disk.tubular_project(&[1.5, 0.0]), Err(Error::OutsideTube { .. })));
    }

    #[test]
    fn inner_domains() {
        let disk = Domain::unit_disk(64).unwrap();
        match disk.inner_domain(0.1).unwrap().shape() {
            Shape::Ball { radius, .. } => assert!((radius - 0.9).abs() < 1e-15),
            _ => unreachable!(),
        }
        let sq = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 64).unwrap();
        assert_eq!(
            sq.inner_domain(0.25).unwrap().shape(),
            &Shape::Box {
                lo: vec![0.25, 0.25],
                hi: vec![0.75, 0.75]
            }
        );
        assert!(matches!(disk.inner_domain(1.0), Err(Error::EmptyDomain { .. })));
    }
}
