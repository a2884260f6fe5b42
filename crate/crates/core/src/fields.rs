//! Maps `Ω ⊂ ℝⁿ → ℝᵐ` and the calculus built on them: Jacobians and
//! adjugates, quadrature, Sobolev energies, sphere traces and ball averages.
//!
//! Gradients are stored row-major with one row per target component, and
//! `|∇f|` is always the Frobenius norm.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{BoundaryMesh, Domain};
use crate::error::{Error, Result};
use crate::kernel::Bump;
use crate::linalg::{adjugate, det, dist, dot, frobenius};
use crate::quadrature::Quadrature;

pub type ValueFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Cells along a diameter for ball quadratures (averages, local energies).
pub const BALL_CELLS: usize = 32;

#[derive(Clone)]
pub enum Backing {
    Analytic {
        value: Arc<ValueFn>,
        gradient: Option<Arc<ValueFn>>,
    },
    Grid(Arc<GridMap>),
}

#[derive(Clone)]
pub struct MapField {
    name: String,
    source_dim: usize,
    target_dim: usize,
    backing: Backing,
    support: Option<Domain>,
    fd_step: f64,
}

impl fmt::Debug for MapField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapField")
            .field("name", &self.name)
            .field("n", &self.source_dim)
            .field("m", &self.target_dim)
            .field("grid", &matches!(self.backing, Backing::Grid(_)))
            .field("exact_gradient", &self.has_exact_gradient())
            .finish()
    }
}

impl MapField {
    pub fn analytic<F>(name: impl Into<String>, n: usize, m: usize, value: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        MapField {
            name: name.into(),
            source_dim: n,
            target_dim: m,
            backing: Backing::Analytic {
                value: Arc::new(value),
                gradient: None,
            },
            support: None,
            fd_step: 1e-5,
        }
    }

    /// Attaches an exact gradient (row-major `m×n`).
    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if let Backing::Analytic { value, .. } = &self.backing {
            self.backing = Backing::Analytic {
                value: value.clone(),
                gradient: Some(Arc::new(gradient)),
            };
        }
        self
    }

    /// Drops an exact gradient so that Jacobians come from central
    /// differences with step `h`.
    pub fn without_gradient(mut self, h: f64) -> Self {
        if let Backing::Analytic { value, .. } = &self.backing {
            self.backing = Backing::Analytic {
                value: value.clone(),
                gradient: None,
            };
        }
        self.fd_step = h;
        self
    }

    pub fn with_support(mut self, domain: Domain) -> Self {
        self.support = Some(domain);
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn from_grid(grid: GridMap) -> Self {
        let h = 0.5 * grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
        MapField {
            name: grid.header.name.clone(),
            source_dim: grid.header.n,
            target_dim: grid.header.m,
            support: Some(grid.header.domain.clone()),
            backing: Backing::Grid(Arc::new(grid)),
            fd_step: h,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn support(&self) -> Option<&Domain> {
        self.support.as_ref()
    }

    pub fn backing(&self) -> &Backing {
        &self.backing
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn has_exact_gradient(&self) -> bool {
        matches!(
            self.backing,
            Backing::Analytic {
                gradient: Some(_),
                ..
            }
        )
    }

    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match &self.backing {
            Backing::Analytic { value, .. } => value(x, out),
            Backing::Grid(g) => g.interpolate(x, out),
        }
    }

    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.target_dim];
        self.eval(x, &mut out);
        out
    }

    /// Jacobian into `out` (row-major `m×n`): exact when available, central
    /// differences with the field's own step otherwise.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        match &self.backing {
            Backing::Analytic {
                gradient: Some(g), ..
            } => g(x, out),
            Backing::Analytic { .. } => self.central_difference(x, self.fd_step, out),
            Backing::Grid(g) => g.gradient(x, out),
        }
    }

    pub fn central_difference(&self, x: &[f64], h: f64, out: &mut [f64]) {
        let (n, m) = (self.source_dim, self.target_dim);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; m];
        let mut fm = vec![0.0; m];
        for j in 0..n {
            xp[j] = x[j] + h;
            self.eval(&xp, &mut fp);
            xp[j] = x[j] - h;
            self.eval(&xp, &mut fm);
            xp[j] = x[j];
            for k in 0..m {
                out[k * n + j] = (fp[k] - fm[k]) / (2.0 * h);
            }
        }
    }

    pub fn jacobian_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.source_dim * self.target_dim];
        self.jacobian(x, &mut out);
        out
    }

    /// `det ∇f(x)` for square maps.
    pub fn jacobian_det(&self, x: &[f64]) -> f64 {
        det(&self.jacobian_vec(x), self.source_dim)
    }

    /// Samples the field on `resolution` vertices per axis over the bounding
    /// box of `domain`.
    pub fn sample_grid(&self, domain: &Domain, resolution: usize, order: Interpolation) -> Result<GridMap> {
        GridMap::sample(self, domain, resolution, order)
    }

    /// Composition `outer ∘ self`.
    pub fn then(&self, outer: &MapField) -> MapField {
        let (inner, outer2) = (self.clone(), outer.clone());
        let (mid, n, m) = (self.target_dim, self.source_dim, outer.target_dim);
        let value = move |x: &[f64], out: &mut [f64]| {
            let mut y = vec![0.0; mid];
            inner.eval(x, &mut y);
            outer2.eval(&y, out);
        };
        let (inner, outer2) = (self.clone(), outer.clone());
        let gradient = move |x: &[f64], out: &mut [f64]| {
            let mut y = vec![0.0; mid];
            inner.eval(x, &mut y);
            let ji = inner.jacobian_vec(x);
            let jo = outer2.jacobian_vec(&y);
            for k in 0..m {
                for j in 0..n {
                    out[k * n + j] = (0..mid).map(|l| jo[k * mid + l] * ji[l * n + j]).sum();
                }
            }
        };
        MapField::analytic(format!("{}∘{}", outer.name, self.name), n, m, value).with_gradient(gradient)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    /// Multilinear.
    Linear,
    /// Tensor-product Catmull–Rom.
    Cubic,
}

impl Interpolation {
    pub fn order(self) -> u8 {
        match self {
            Interpolation::Linear => 1,
            Interpolation::Cubic => 3,
        }
    }

    pub fn from_order(order: u8) -> Result<Self> {
        match order {
            1 => Ok(Interpolation::Linear),
            3 => Ok(Interpolation::Cubic),
            o => Err(Error::Parse(format!("interpolation order {o} is not 1 or 3"))),
        }
    }
}

/// Header line of a grid map file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub domain: Domain,
    /// Vertices per axis spanning the domain's bounding box.
    pub resolution: usize,
    pub order: u8,
}

/// Vertex samples on a regular grid with interpolation.
///
/// Samples are row-major with the last axis varying fastest; each vertex
/// stores `m` consecutive values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    header: GridHeader,
    lo: Vec<f64>,
    hi: Vec<f64>,
    samples: Vec<f64>,
}

impl GridMap {
    pub fn new(header: GridHeader, samples: Vec<f64>) -> Result<Self> {
        let count = header.resolution.pow(header.n as u32);
        if header.resolution < 2 {
            return Err(Error::Config("grid maps need at least 2 vertices per axis".into()));
        }
        if header.domain.dim() != header.n {
            return Err(Error::Dimension {
                expected: header.n,
                found: header.domain.dim(),
            });
        }
        if samples.len() != count * header.m {
            return Err(Error::Parse(format!(
                "expected {} samples, found {}",
                count * header.m,
                samples.len()
            )));
        }
        Interpolation::from_order(header.order)?;
        let (lo, hi) = header.domain.bounding_box();
        Ok(GridMap {
            header,
            lo,
            hi,
            samples,
        })
    }

    fn sample(map: &MapField, domain: &Domain, resolution: usize, order: Interpolation) -> Result<Self> {
        if domain.dim() != map.source_dim() {
            return Err(Error::Dimension {
                expected: map.source_dim(),
                found: domain.dim(),
            });
        }
        let (lo, hi) = domain.bounding_box();
        let n = lo.len();
        let m = map.target_dim();
        let mut samples = Vec::with_capacity(resolution.pow(n as u32) * m);
        let mut x = vec![0.0; n];
        let mut buf = vec![0.0; m];
        crate::quadrature::for_each_index(n, resolution, |idx| {
            for a in 0..n {
                x[a] = lo[a] + (hi[a] - lo[a]) * idx[a] as f64 / (resolution - 1) as f64;
            }
            map.eval(&x, &mut buf);
            samples.extend_from_slice(&buf);
        });
        GridMap::new(
            GridHeader {
                name: map.name().to_string(),
                n,
                m,
                domain: domain.clone(),
                resolution,
                order: order.order(),
            },
            samples,
        )
    }

    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn spacing(&self) -> Vec<f64> {
        let r = (self.header.resolution - 1) as f64;
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) / r).collect()
    }

    /// Coordinates of the vertex with multi-index `idx`.
    pub fn vertex(&self, idx: &[usize]) -> Vec<f64> {
        let h = self.spacing();
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.lo[a] + h[a] * i as f64)
            .collect()
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.header.resolution + i)
    }

    /// Largest jump between edge-adjacent vertex samples.
    pub fn max_adjacent_jump(&self) -> f64 {
        self.adjacent_jumps().into_iter().fold(0.0, f64::max)
    }

    /// Per-vertex largest jump to a forward neighbour.
    pub fn adjacent_jumps(&self) -> Vec<f64> {
        let (n, m, r) = (self.header.n, self.header.m, self.header.resolution);
        let mut out = Vec::with_capacity(r.pow(n as u32));
        crate::quadrature::for_each_index(n, r, |idx| {
            let base = self.linear_index(idx) * m;
            let mut best: f64 = 0.0;
            let mut stride = 1;
            for a in (0..n).rev() {
                if idx[a] + 1 < r {
                    let other = base + stride * m;
                    best = best.max(dist(&self.samples[base..base + m], &self.samples[other..other + m]));
                }
                stride *= r;
            }
            out.push(best);
        });
        out
    }

    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) {
        let n = self.header.n;
        let m = self.header.m;
        let r = self.header.resolution;
        let taps = if self.header.order == 3 && r >= 4 { 4 } else { 2 };
        let mut idx = [[0usize; 4]; 8];
        let mut wts = [[0.0f64; 4]; 8];
        for a in 0..n {
            let h = (self.hi[a] - self.lo[a]) / (r - 1) as f64;
            let t = ((x[a] - self.lo[a]) / h).clamp(0.0, (r - 1) as f64);
            let i = (t.floor() as usize).min(r - 2);
            let f = t - i as f64;
            if taps == 2 {
                idx[a][0] = i;
                idx[a][1] = i + 1;
                wts[a][0] = 1.0 - f;
                wts[a][1] = f;
            } else {
                let f2 = f * f;
                let f3 = f2 * f;
                let w = [
                    0.5 * (-f3 + 2.0 * f2 - f),
                    0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
                    0.5 * (-3.0 * f3 + 4.0 * f2 + f),
                    0.5 * (f3 - f2),
                ];
                // Ghost nodes past the edge are linear extrapolations.
                let mut ws = [w[0], w[1], w[2], w[3]];
                if i == 0 {
                    ws[1] += 2.0 * ws[0];
                    ws[2] -= ws[0];
                    ws[0] = 0.0;
                }
                if i + 2 == r {
                    ws[2] += 2.0 * ws[3];
                    ws[1] -= ws[3];
                    ws[3] = 0.0;
                }
                for k in 0..4 {
                    let j = i as isize + k as isize - 1;
                    idx[a][k] = j.clamp(0, r as isize - 1) as usize;
                    wts[a][k] = ws[k];
                }
            }
        }
        out[..m].fill(0.0);
        let mut corner = [0usize; 8];
        loop {
            let mut w = 1.0;
            let mut lin = 0;
            for a in 0..n {
                w *= wts[a][corner[a]];
                lin = lin * r + idx[a][corner[a]];
            }
            if w != 0.0 {
                let s = &self.samples[lin * m..lin * m + m];
                for k in 0..m {
                    out[k] += w * s[k];
                }
            }
            let mut a = n;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                corner[a] += 1;
                if corner[a] < taps {
                    break;
                }
                corner[a] = 0;
            }
        }
    }

    /// Central differences of the interpolant with half-spacing steps,
    /// one-sided at the edges of the grid.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (n, m) = (self.header.n, self.header.m);
        let h = self.spacing();
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; m];
        let mut fm = vec![0.0; m];
        for j in 0..n {
            let step = 0.5 * h[j];
            let up = (x[j] + step).min(self.hi[j]);
            let down = (x[j] - step).max(self.lo[j]);
            xp[j] = up;
            self.interpolate(&xp, &mut fp);
            xp[j] = down;
            self.interpolate(&xp, &mut fm);
            xp[j] = x[j];
            let span = (up - down).max(f64::MIN_POSITIVE);
            for k in 0..m {
                out[k * n + j] = (fp[k] - fm[k]) / span;
            }
        }
    }

    /// Writes the JSON header line followed by one CSV row per vertex.
    /// Values use the shortest representation that parses back exactly.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_string(&self.header).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w, "{header}")?;
        for row in self.samples.chunks_exact(self.header.m) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Parse("empty grid file".into()))??;
        let header: GridHeader =
            serde_json::from_str(&header_line).map_err(|e| Error::Parse(format!("grid header: {e}")))?;
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = samples.len();
            for tok in line.split(',') {
                let v: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
                samples.push(v);
            }
            if samples.len() - before != header.m {
                return Err(Error::Parse(format!(
                    "row {} has {} columns, expected {}",
                    i + 1,
                    samples.len() - before,
                    header.m
                )));
            }
        }
        GridMap::new(header, samples)
    }
}

/// Gradient, determinant and adjugate at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianSample {
    pub point: Vec<f64>,
    pub m: usize,
    pub n: usize,
    /// Row-major `m×n`.
    pub gradient: Vec<f64>,
    pub det: Option<f64>,
    /// Row-major `n×n` with `adj·∇f = det·I`.
    pub adjugate: Option<Vec<f64>>,
}

impl JacobianSample {
    pub fn from_gradient(point: &[f64], m: usize, n: usize, gradient: Vec<f64>) -> Self {
        let (d, adj) = if m == n {
            (Some(det(&gradient, n)), Some(adjugate(&gradient, n)))
        } else {
            (None, None)
        };
        JacobianSample {
            point: point.to_vec(),
            m,
            n,
            gradient,
            det: d,
            adjugate: adj,
        }
    }

    pub fn entry(&self, k: usize, j: usize) -> f64 {
        self.gradient[k * self.n + j]
    }

    pub fn frobenius(&self) -> f64 {
        frobenius(&self.gradient)
    }

    /// Largest entry of `|adj·∇f − det·I|`, or `None` for non-square maps.
    pub fn adjugate_defect(&self) -> Option<f64> {
        let (d, adj) = (self.det?, self.adjugate.as_ref()?);
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| adj[i * n + k] * self.gradient[k * n + j]).sum();
                let expect = if i == j { d } else { 0.0 };
                worst = worst.max((v - expect).abs());
            }
        }
        Some(worst)
    }
}

/// Jacobian at `point`: exact if the map carries a gradient, else central
/// differences with step `h`. For maps with a support domain the point must
/// lie at least `h` inside it.
pub fn gradient(map: &MapField, point: &[f64], h: f64) -> Result<JacobianSample> {
    if point.len() != map.source_dim() {
        return Err(Error::Dimension {
            expected: map.source_dim(),
            found: point.len(),
        });
    }
    if let Some(support) = map.support() {
        if support.signed_distance(point) > -h {
            return Err(Error::Margin {
                point: point.to_vec(),
                margin: h,
            });
        }
    }
    let (n, m) = (map.source_dim(), map.target_dim());
    let mut g = vec![0.0; n * m];
    if map.has_exact_gradient() {
        map.jacobian(point, &mut g);
    } else {
        map.central_difference(point, h, &mut g);
    }
    Ok(JacobianSample::from_gradient(point, m, n, g))
}

/// Integration region for [`integrate`].
pub enum Region<'a> {
    Cells(&'a Quadrature),
    Mesh(&'a BoundaryMesh),
}

/// Midpoint quadrature over cells or element-centroid quadrature over a
/// boundary mesh.
pub fn integrate<F>(field: F, region: Region<'_>) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    match region {
        Region::Cells(q) => q.integrate(field),
        Region::Mesh(mesh) => mesh.integrate(field),
    }
}

/// `∫ |∇f|^p` with the Frobenius norm.
pub fn sobolev_energy(map: &MapField, region: &Quadrature, p: f64) -> f64 {
    let nm = map.source_dim() * map.target_dim();
    region.integrate(|x| {
        let mut g = vec![0.0; nm];
        map.jacobian(x, &mut g);
        frobenius(&g).powf(p)
    })
}

/// Restriction of a map to a sphere mesh with per-element tangential
/// differential magnitudes `|df_ρ|`.
#[derive(Clone, Debug)]
pub struct SphereTrace {
    pub center: Vec<f64>,
    pub radius: f64,
    pub mesh: BoundaryMesh,
    pub m: usize,
    /// `m` values per mesh vertex.
    pub values: Vec<f64>,
    /// `|df_ρ|` per element.
    pub tangential: Vec<f64>,
}

impl SphereTrace {
    pub fn value(&self, v: usize) -> &[f64] {
        &self.values[v * self.m..(v + 1) * self.m]
    }

    /// `osc_{S_r} f`: diameter of the vertex values.
    pub fn oscillation(&self) -> f64 {
        diameter(&self.values, self.m)
    }

    /// `∫_{S_r} |df_ρ|^p dσ`.
    pub fn energy(&self, p: f64) -> f64 {
        self.tangential
            .iter()
            .zip(self.mesh.measures())
            .map(|(t, w)| t.powf(p) * w)
            .sum()
    }
}

/// Trace of `map` on a mesh (typically from `sphere_mesh` or
/// `boundary_mesh`). Pointwise restriction: meaningful for continuous
/// representatives only.
pub fn trace_on_mesh(map: &MapField, mesh: &BoundaryMesh) -> SphereTrace {
    let m = map.target_dim();
    let mut values = vec![0.0; mesh.vertex_count() * m];
    for (v, chunk) in values.chunks_exact_mut(m).enumerate() {
        map.eval(mesh.vertex(v), chunk);
    }
    let tangential = (0..mesh.element_count())
        .map(|e| {
            let el = mesh.element(e);
            let val = |v: usize| &values[v * m..(v + 1) * m];
            if mesh.dim() == 2 {
                dist(val(el[1]), val(el[0])) / mesh.measure(e)
            } else {
                // P1 tangential differential on the triangle.
                let (a, b, c) = (mesh.vertex(el[0]), mesh.vertex(el[1]), mesh.vertex(el[2]));
                let e1: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
                let e2: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
                let (g11, g12, g22) = (dot(&e1, &e1), dot(&e1, &e2), dot(&e2, &e2));
                let gdet = g11 * g22 - g12 * g12;
                let (i11, i12, i22) = (g22 / gdet, -g12 / gdet, g11 / gdet);
                let mut s = 0.0;
                for k in 0..m {
                    let d1 = val(el[1])[k] - val(el[0])[k];
                    let d2 = val(el[2])[k] - val(el[0])[k];
                    s += d1 * d1 * i11 + 2.0 * d1 * d2 * i12 + d2 * d2 * i22;
                }
                s.max(0.0).sqrt()
            }
        })
        .collect();
    let (center, radius) = mesh_center_radius(mesh);
    SphereTrace {
        center,
        radius,
        mesh: mesh.clone(),
        m,
        values,
        tangential,
    }
}

fn mesh_center_radius(mesh: &BoundaryMesh) -> (Vec<f64>, f64) {
    let n = mesh.dim();
    let mut c = vec![0.0; n];
    for v in mesh.vertices() {
        for a in 0..n {
            c[a] += v[a];
        }
    }
    let count = mesh.vertex_count() as f64;
    c.iter_mut().for_each(|x| *x /= count);
    let r = mesh.vertices().map(|v| dist(v, &c)).sum::<f64>() / count;
    (c, r)
}

/// Trace of `map` on `S_r(center) ⊂ Ω`.
pub fn sphere_trace(
    map: &MapField,
    domain: &Domain,
    center: &[f64],
    radius: f64,
    resolution: usize,
) -> Result<SphereTrace> {
    let mesh = domain.sphere_mesh(center, radius, resolution)?;
    let mut t = trace_on_mesh(map, &mesh);
    t.center = center.to_vec();
    t.radius = radius;
    Ok(t)
}

/// Default sphere mesh resolution for a dimension.
pub fn default_sphere_resolution(n: usize) -> usize {
    if n == 2 {
        256
    } else {
        64
    }
}

/// Diameter of a point cloud stored as consecutive `m`-vectors.
pub fn diameter(points: &[f64], m: usize) -> f64 {
    let count = points.len() / m;
    let mut best: f64 = 0.0;
    for i in 0..count {
        let p = &points[i * m..(i + 1) * m];
        for j in i + 1..count {
            let q = &points[j * m..(j + 1) * m];
            let mut d = 0.0;
            for k in 0..m {
                d += (p[k] - q[k]) * (p[k] - q[k]);
            }
            best = best.max(d);
        }
    }
    best.sqrt()
}

/// Both sides of `∫₀^r ∫_{S_ρ}|df_ρ|ⁿ dσ dρ ≤ ∫_{B_r}|∇f|ⁿ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoareaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Slack factor for inequality checks against discretization error.
pub const DISCRETIZATION_SLACK: f64 = 1.05;

pub fn coarea_check(
    map: &MapField,
    domain: &Domain,
    center: &[f64],
    radius: f64,
    radial_samples: usize,
) -> Result<CoareaCheck> {
    let n = map.source_dim();
    if !domain.contains_ball(center, radius) {
        return Err(Error::BallOutsideDomain {
            center: center.to_vec(),
            radius,
            clearance: domain.clearance(center),
        });
    }
    let samples = radial_samples.max(1);
    let dr = radius / samples as f64;
    let mut lhs = 0.0;
    for i in 0..samples {
        let rho = (i as f64 + 0.5) * dr;
        let t = sphere_trace(map, domain, center, rho, default_sphere_resolution(n))?;
        lhs += t.energy(n as f64) * dr;
    }
    let q = Quadrature::ball(center, radius, 4 * BALL_CELLS, None);
    let rhs = sobolev_energy(map, &q, n as f64);
    Ok(CoareaCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * DISCRETIZATION_SLACK,
    })
}

/// Mean of `map` over `B_ρ(x) ∩ Ω`.
pub fn lebesgue_average(map: &MapField, domain: &Domain, x: &[f64], rho: f64) -> Result<Vec<f64>> {
    lebesgue_average_with(map, domain, x, rho, BALL_CELLS)
}

pub fn lebesgue_average_with(
    map: &MapField,
    domain: &Domain,
    x: &[f64],
    rho: f64,
    cells_across: usize,
) -> Result<Vec<f64>> {
    let q = domain.ball_quadrature(x, rho, cells_across);
    ball_mean(map, &q).ok_or_else(|| Error::EmptyRegion(format!("B_{rho}({x:?}) ∩ Ω")))
}

/// Weighted mean over a quadrature rule, `None` when it is empty.
pub(crate) fn ball_mean(map: &MapField, q: &Quadrature) -> Option<Vec<f64>> {
    let total = q.measure();
    if q.is_empty() || total <= 0.0 {
        return None;
    }
    let m = map.target_dim();
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for (p, w) in q.iter() {
        map.eval(p, &mut buf);
        for k in 0..m {
            acc[k] += w * buf[k];
        }
    }
    Some(acc.into_iter().map(|v| v / total).collect())
}

/// Compactly supported vector test field `η^k(x) = c_k·φ(|x − a|/R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestField {
    pub bump: Bump,
    pub coefficients: Vec<f64>,
}

impl TestField {
    pub fn new(center: &[f64], radius: f64, coefficients: &[f64]) -> Self {
        TestField {
            bump: Bump::new(center, radius),
            coefficients: coefficients.to_vec(),
        }
    }

    /// A few bumps well inside the domain with distinct coefficients.
    pub fn standard_set(domain: &Domain) -> Vec<TestField> {
        let n = domain.dim();
        let (lo, hi) = domain.bounding_box();
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let reach = 0.5 * domain.feature_size();
        let mut out = Vec::new();
        let offsets: [f64; 3] = [0.0, 0.35, -0.3];
        for (i, off) in offsets.iter().enumerate() {
            let mut c = mid.clone();
            c[0] += off * reach;
            if n > 1 {
                c[1] += 0.5 * off * reach;
            }
            let radius = reach * (0.9 - 0.2 * i as f64);
            let radius = radius.min(0.95 * domain.clearance(&c));
            let coeffs: Vec<f64> = (0..n).map(|k| 1.0 + 0.5 * k as f64 - 0.3 * i as f64).collect();
            out.push(TestField::new(&c, radius, &coeffs));
        }
        out
    }
}

/// `|∫ η^k_{,j} (adj∇f)^j_k dx|` over the support of `η`, on the domain
/// lattice refined twice.
pub fn adjugate_identity_check(map: &MapField, domain: &Domain, field: &TestField) -> f64 {
    let n = map.source_dim();
    assert_eq!(n, map.target_dim(), "adjugate identity needs a square map");
    let c = &field.bump.center;
    let r = field.bump.radius;
    let (dlo, dhi) = domain.bounding_box();
    let cells = 2 * domain.resolution();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    let mut counts = vec![0; n];
    for a in 0..n {
        let h = (dhi[a] - dlo[a]) / cells as f64;
        let first = ((c[a] - r - dlo[a]) / h).floor();
        let last = ((c[a] + r - dlo[a]) / h).ceil();
        lo[a] = dlo[a] + first * h;
        hi[a] = dlo[a] + last * h;
        counts[a] = (last - first).max(1.0) as usize;
    }
    let q = Quadrature::cells_counts(&lo, &hi, &counts, |x| domain.signed_distance(x));
    let v = q.integrate(|x| {
        if !field.bump.support_contains(x) {
            return 0.0;
        }
        let mut grad_phi = vec![0.0; n];
        field.bump.gradient(x, &mut grad_phi);
        let g = map.jacobian_vec(x);
        let adj = adjugate(&g, n);
        let mut s = 0.0;
        for k in 0..n {
            for j in 0..n {
                s += field.coefficients[k] * grad_phi[j] * adj[j * n + k];
            }
        }
        s
    });
    v.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn identity2() -> MapField {
        MapField::analytic("identity", 2, 2, |x, o| o.copy_from_slice(x))
            .with_gradient(|_, g| g.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]))
    }

    fn zsq() -> MapField {
        MapField::analytic("z2", 2, 2, |x, o| {
            o[0] = x[0] * x[0] - x[1] * x[1];
            o[1] = 2.0 * x[0] * x[1];
        })
    }

    #[test]
    fn gradient_examples() {
        let g = gradient(&identity2(), &[0.3, 0.1], 1e-3).unwrap();
        assert_eq!(g.gradient, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.det, Some(1.0));
        let lin = MapField::analytic("A", 2, 2, |x, o| {
            o[0] = 2.0 * x[0];
            o[1] = 3.0 * x[1];
        });
        let g = gradient(&lin, &[0.2, 0.4], 1e-3).unwrap();
        assert!((g.det.unwrap() - 6.0).abs() < 1e-9);
        // z²: symbolic ∂(x²−y², 2xy) = [[2x, −2y], [2y, 2x]] = 2I at (1, 0).
        let g = gradient(&zsq(), &[1.0, 0.0], 1e-4).unwrap();
        for (a, b) in g.gradient.iter().zip([2.0, 0.0, 0.0, 2.0]) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((g.det.unwrap() - 4.0).abs() < 1e-7);
    }

    #[test]
    fn gradient_margin_error_for_supported_maps() {
        let d = Domain::unit_disk(64).unwrap();
        let m = identity2().with_support(d);
        assert!(matches!(gradient(&m, &[0.999, 0.0], 0.01), Err(Error::Margin { .. })));
    }

    #[test]
    fn integration_examples() {
        let disk = Domain::unit_disk(256).unwrap();
        let q = disk.quadrature();
        assert!((integrate(|_| 1.0, Region::Cells(&q)) - PI).abs() < 1e-3);
        assert!((integrate(|x| x[0] * x[0], Region::Cells(&q)) - PI / 4.0).abs() < 1e-3);
        let mesh = disk.boundary_mesh(1024).unwrap();
        assert!((integrate(|_| 1.0, Region::Mesh(&mesh)) - 2.0 * PI).abs() < 1e-4);
    }

    #[test]
    fn sphere_trace_examples() {
        let disk = Domain::unit_disk(64).unwrap();
        let t = sphere_trace(&identity2(), &disk, &[0.0, 0.0], 0.5, 512).unwrap();
        assert!(t.tangential.iter().all(|v| (v - 1.0).abs() < 1e-6));
        let c = MapField::analytic("c", 2, 2, |_, o| o.copy_from_slice(&[0.3, 0.2]));
        let t = sphere_trace(&c, &disk, &[0.0, 0.0], 0.5, 64).unwrap();
        assert!(t.tangential.iter().all(|v| *v == 0.0));
        let t = sphere_trace(&zsq(), &disk, &[0.0, 0.0], 0.5, 512).unwrap();
        assert!(t.tangential.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn sobolev_energy_examples() {
        let sq = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 64).unwrap();
        let e = sobolev_energy(&identity2(), &sq.quadrature(), 2.0);
        assert!((e - 2.0).abs() < 1e-6);
        let c = MapField::analytic("c", 2, 2, |_, o| o.copy_from_slice(&[1.0, 1.0]));
        assert_eq!(sobolev_energy(&c, &sq.quadrature(), 2.0), 0.0);
    }

    #[test]
    fn lebesgue_average_examples() {
        let disk = Domain::unit_disk(64).unwrap();
        let lin = MapField::analytic("lin", 2, 2, |x, o| {
            o[0] = 2.0 * x[0] + x[1];
            o[1] = -x[0] + 0.5 * x[1];
        });
        let x = [0.2, -0.1];
        let avg = lebesgue_average(&lin, &disk, &x, 0.3).unwrap();
        let fx = lin.value(&x);
        assert!(dist(&avg, &fx) < 1e-12);
        let angle = MapField::analytic("angle", 2, 2, |x, o| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if r < 1e-12 {
                o.copy_from_slice(&[1.0, 0.0]);
            } else {
                o[0] = x[0] / r;
                o[1] = x[1] / r;
            }
        });
        let avg = lebesgue_average(&angle, &disk, &[0.0, 0.0], 0.4).unwrap();
        assert!(crate::linalg::norm(&avg) < 1e-3);
        assert!(matches!(
            lebesgue_average(&angle, &disk, &[3.0, 0.0], 0.4),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn adjugate_identity_for_affine_maps() {
        let disk = Domain::unit_disk(128).unwrap();
        let lin = MapField::analytic("lin", 2, 2, |x, o| {
            o[0] = 2.0 * x[0] + x[1];
            o[1] = -x[0] + 0.5 * x[1];
        })
        .with_gradient(|_, g| g.copy_from_slice(&[2.0, 1.0, -1.0, 0.5]));
        for tf in TestField::standard_set(&disk) {
            assert!(adjugate_identity_check(&identity2(), &disk, &tf) < 1e-3);
            let r = adjugate_identity_check(&lin, &disk, &tf); assert!(r < 1e-6, "{r} {:?}", tf.bump);
        }
    }

    #[test]
    fn grid_file_round_trip_is_bit_exact() {
        let disk = Domain::unit_disk(16).unwrap();
        let grid = zsq().sample_grid(&disk, 9, Interpolation::Cubic).unwrap();
        let mut buf = Vec::new();
        grid.write(&mut buf).unwrap();
        let back = GridMap::read(&buf[..]).unwrap();
        assert_eq!(back, grid);
        let mut buf2 = Vec::new();
        back.write(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn grid_interpolation_reproduces_vertices_and_affine_maps() {
        let sq = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 16).unwrap();
        let lin = MapField::analytic("lin", 2, 2, |x, o| {
            o[0] = 2.0 * x[0] + x[1];
            o[1] = -x[0] + 0.5 * x[1];
        });
        for order in [Interpolation::Linear, Interpolation::Cubic] {
            let g = MapField::from_grid(lin.sample_grid(&sq, 17, order).unwrap());
            for x in [[0.13, 0.71], [0.5, 0.5], [0.02, 0.98]] {
                assert!(dist(&g.value(&x), &lin.value(&x)) < 1e-12, "{order:?}");
            }
            let j = g.jacobian_vec(&[0.4, 0.6]);
            for (a, b) in j.iter().zip([2.0, 1.0, -1.0, 0.5]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn malformed_grid_files_are_rejected() {
        let bad = "{\"name\":\"x\",\"n\":2,\"m\":1,\"domain\":{\"shape\":{\"kind\":\"box\",\"lo\":[0,0],\"hi\":[1,1]},\"resolution\":8},\"resolution\":2,\"order\":1}\n1\n2\n3\n";
        assert!(matches!(GridMap::read(bad.as_bytes()), Err(Error::Parse(_))));
        let bad_order = bad.replace("\"order\":1", "\"order\":2").replace("1\n2\n3\n", "1\n2\n3\n4\n");
        assert!(GridMap::read(bad_order.as_bytes()).is_err());
    }
}
