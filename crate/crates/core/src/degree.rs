//! Brouwer degree `deg(f, Ω, y)` by signed preimage counting, by the
//! change-of-variables integral, and by pulling back the Newtonian
//! `(n−1)`-form to the boundary; plus the winding number and a harness
//! checking the degree axioms on probe sets.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{BoundaryMesh, Domain, Shape};
use crate::error::{Error, Result};
use crate::fields::MapField;
use crate::kernel::Bump;
use crate::linalg::{cross, dist, dot, frobenius, norm, solve};
use crate::quadrature::{for_each_index, Quadrature};

pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOL: f64 = 1e-10;
pub const DEFAULT_BUMP_RADIUS: f64 = 0.1;
/// `τ_regular = TAU_FACTOR · (mean |∇f| over the grid)`.
pub const TAU_FACTOR: f64 = 1e-8;
/// Probe perturbations tried when a preimage is not regular.
pub const MAX_PERTURBATIONS: usize = 4;
/// Cells across the bump support when evaluating the Newtonian field.
pub const BUMP_CELLS_2D: usize = 32;
pub const BUMP_CELLS_3D: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Counting,
    Integral,
    Boundary,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Counting, Method::Integral, Method::Boundary];
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counting" => Ok(Method::Counting),
            "integral" => Ok(Method::Integral),
            "boundary" => Ok(Method::Boundary),
            other => Err(Error::Parse(format!("unknown degree method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Preimage {
    pub point: Vec<f64>,
    pub det: f64,
    pub sign: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub resolution: usize,
    pub boundary_resolution: usize,
    pub bump_radius: Option<f64>,
    /// `dist(y, f(Γ))` measured on the boundary image.
    pub boundary_distance: f64,
    pub clearance: f64,
    pub tau_regular: Option<f64>,
    pub perturbations: usize,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegreeReport {
    pub y: Vec<f64>,
    /// Differs from `y` only after a Sard perturbation.
    pub y_used: Vec<f64>,
    pub method: Method,
    pub value: i64,
    pub raw: f64,
    pub residual: f64,
    pub inconclusive: bool,
    pub preimages: Vec<Preimage>,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct DegreeOptions {
    /// Boundary mesh resolution; `None` picks [`default_boundary_resolution`].
    pub boundary_resolution: Option<usize>,
    /// Required `dist(y, f(Γ))`; `None` means twice the longest image edge.
    pub clearance: Option<f64>,
    pub tol: f64,
    pub tau_regular: Option<f64>,
    pub bump_radius: f64,
}

impl Default for DegreeOptions {
    fn default() -> Self {
        DegreeOptions {
            boundary_resolution: None,
            clearance: None,
            tol: NEWTON_TOL,
            tau_regular: None,
            bump_radius: DEFAULT_BUMP_RADIUS,
        }
    }
}

pub fn default_boundary_resolution(domain: &Domain) -> usize {
    if domain.dim() == 2 {
        4 * domain.resolution()
    } else {
        domain.resolution().max(64)
    }
}

/// Image `f(Γ)` of a boundary mesh: the polygon (n=2) or triangulated
/// surface (n=3) through the images of the mesh vertices.
#[derive(Clone, Debug)]
pub struct BoundaryImage {
    pub mesh: BoundaryMesh,
    pub values: Vec<f64>,
    pub m: usize,
}

impl BoundaryImage {
    pub fn new(map: &MapField, mesh: BoundaryMesh) -> Self {
        let m = map.target_dim();
        let mut values = vec![0.0; mesh.vertex_count() * m];
        values
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(v, out)| map.eval(mesh.vertex(v), out));
        BoundaryImage { mesh, values, m }
    }

    pub fn of_domain(map: &MapField, domain: &Domain, boundary_resolution: usize) -> Result<Self> {
        Ok(Self::new(map, domain.boundary_mesh(boundary_resolution)?))
    }

    pub fn value(&self, v: usize) -> &[f64] {
        &self.values[v * self.m..(v + 1) * self.m]
    }

    /// Longest image edge.
    pub fn max_edge(&self) -> f64 {
        let mut best: f64 = 0.0;
        for e in 0..self.mesh.element_count() {
            let el = self.mesh.element(e);
            for i in 0..el.len() {
                let j = (i + 1) % el.len();
                best = best.max(dist(self.value(el[i]), self.value(el[j])));
            }
        }
        best
    }

    /// Bounding box of the image.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.m];
        let mut hi = vec![f64::NEG_INFINITY; self.m];
        for v in self.values.chunks_exact(self.m) {
            for k in 0..self.m {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Distance from `y` to the image polygon or surface.
    pub fn distance(&self, y: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for e in 0..self.mesh.element_count() {
            let el = self.mesh.element(e);
            let d = match el.len() {
                2 => segment_distance(y, self.value(el[0]), self.value(el[1])),
                _ => triangle_distance(y, self.value(el[0]), self.value(el[1]), self.value(el[2])),
            };
            best = best.min(d);
        }
        best
    }

    /// Topological degree of the image about `y`: the crossing-number
    /// winding (n=2) or the total solid angle over 4π (n=3).
    pub fn degree_at(&self, y: &[f64]) -> i64 {
        if self.m == 2 {
            let mut w = 0i64;
            for e in 0..self.mesh.element_count() {
                let el = self.mesh.element(e);
                w += crossing(self.value(el[0]), self.value(el[1]), y);
            }
            w
        } else {
            (self.solid_angle(y) / (4.0 * PI)).round() as i64
        }
    }

    /// Sum of signed turning angles over 2π (n=2 only).
    pub fn turning_number(&self, y: &[f64]) -> f64 {
        let mut total = 0.0;
        for e in 0..self.mesh.element_count() {
            let el = self.mesh.element(e);
            total += turning_angle(self.value(el[0]), self.value(el[1]), y);
        }
        total / (2.0 * PI)
    }

    /// Total signed solid angle subtended at `y` (n=3 only).
    pub fn solid_angle(&self, y: &[f64]) -> f64 {
        let mut total = 0.0;
        for e in 0..self.mesh.element_count() {
            let el = self.mesh.element(e);
            total += triangle_solid_angle(self.value(el[0]), self.value(el[1]), self.value(el[2]), y);
        }
        total
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let l2 = dot(&ab, &ab);
    let t = if l2 > 0.0 { (dot(&ap, &ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let mut d2 = 0.0;
    for k in 0..p.len() {
        let q = a[k] + t * ab[k] - p[k];
        d2 += q * q;
    }
    d2.sqrt()
}

/// Distance from `p` to the triangle `abc` in ℝ³.
pub fn triangle_distance(p: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return dist(p, a);
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return dist(p, b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return segment_distance(p, a, b);
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return dist(p, c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return segment_distance(p, a, c);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return segment_distance(p, b, c);
    }
    let n = cross(&ab, &ac);
    let l = norm(&n);
    if l == 0.0 {
        return segment_distance(p, a, b).min(segment_distance(p, a, c)).min(segment_distance(p, b, c));
    }
    (dot(&ap, &n) / l).abs()
}

/// Signed contribution of the directed edge `a → b` to the crossing-number
/// winding about `y`.
fn crossing(a: &[f64], b: &[f64], y: &[f64]) -> i64 {
    let left = (b[0] - a[0]) * (y[1] - a[1]) - (y[0] - a[0]) * (b[1] - a[1]);
    if a[1] <= y[1] {
        if b[1] > y[1] && left > 0.0 {
            return 1;
        }
    } else if b[1] <= y[1] && left < 0.0 {
        return -1;
    }
    0
}

fn turning_angle(a: &[f64], b: &[f64], y: &[f64]) -> f64 {
    let (ux, uy) = (a[0] - y[0], a[1] - y[1]);
    let (vx, vy) = (b[0] - y[0], b[1] - y[1]);
    (ux * vy - uy * vx).atan2(ux * vx + uy * vy)
}

/// Van Oosterom–Strackee solid angle of the oriented triangle `abc` seen
/// from `y`.
fn triangle_solid_angle(a: &[f64], b: &[f64], c: &[f64], y: &[f64]) -> f64 {
    let (ra, rb, rc) = (sub(a, y), sub(b, y), sub(c, y));
    let (la, lb, lc) = (norm(&ra), norm(&rb), norm(&rc));
    let num = dot(&ra, &cross(&rb, &rc));
    let den = la * lb * lc + dot(&ra, &rb) * lc + dot(&ra, &rc) * lb + dot(&rb, &rc) * la;
    2.0 * num.atan2(den)
}

/// Winding number of the closed polygon through `trace` (closing edge
/// implied) about `y`, by accumulated turning angle.
pub fn winding_number(trace: &[[f64; 2]], y: [f64; 2]) -> Result<i64> {
    if trace.len() < 2 {
        return Err(Error::Degenerate("a closed trace needs at least two vertices".into()));
    }
    if let Some(v) = trace.iter().find(|v| (v[0] - y[0]).hypot(v[1] - y[1]) <= 1e-12) {
        return Err(Error::Degenerate(format!("trace vertex {v:?} coincides with y")));
    }
    let total: f64 = (0..trace.len())
        .map(|i| turning_angle(&trace[i], &trace[(i + 1) % trace.len()], &y))
        .sum();
    Ok((total / (2.0 * PI)).round() as i64)
}

/// Crossing-number winding of the same polygon; no trigonometry, exact for
/// any `y` off the polygon.
pub fn winding_number_crossing(trace: &[[f64; 2]], y: [f64; 2]) -> i64 {
    (0..trace.len())
        .map(|i| crossing(&trace[i], &trace[(i + 1) % trace.len()], &y))
        .sum()
}

/// Shared state for repeated degree queries of one map on one domain.
pub struct DegreeSolver<'a> {
    map: &'a MapField,
    domain: &'a Domain,
    options: DegreeOptions,
    image: BoundaryImage,
    clearance: f64,
    boundary_resolution: usize,
    tau: Option<f64>,
}

impl<'a> DegreeSolver<'a> {
    pub fn new(map: &'a MapField, domain: &'a Domain, options: DegreeOptions) -> Result<Self> {
        let n = domain.dim();
        if map.source_dim() != n || map.target_dim() != n {
            return Err(Error::Dimension {
                expected: n,
                found: if map.source_dim() != n { map.source_dim() } else { map.target_dim() },
            });
        }
        if !(options.bump_radius > 0.0) || !(options.tol > 0.0) {
            return Err(Error::Config("bump radius and tolerance must be positive".into()));
        }
        let boundary_resolution = options
            .boundary_resolution
            .unwrap_or_else(|| default_boundary_resolution(domain));
        let image = BoundaryImage::of_domain(map, domain, boundary_resolution)?;
        let clearance = options.clearance.unwrap_or_else(|| 2.0 * image.max_edge());
        Ok(DegreeSolver {
            map,
            domain,
            options,
            image,
            clearance,
            boundary_resolution,
            tau: None,
        })
    }

    pub fn image(&self) -> &BoundaryImage {
        &self.image
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    pub fn options(&self) -> &DegreeOptions {
        &self.options
    }

    pub fn set_bump_radius(&mut self, radius: f64) {
        self.options.bump_radius = radius;
    }

    pub fn set_clearance(&mut self, clearance: f64) {
        self.clearance = clearance;
    }

    fn diagnostics(&self, boundary_distance: f64, bump: Option<f64>) -> Diagnostics {
        Diagnostics {
            resolution: self.domain.resolution(),
            boundary_resolution: self.boundary_resolution,
            bump_radius: bump,
            boundary_distance,
            clearance: self.clearance,
            tau_regular: None,
            perturbations: 0,
            note: None,
        }
    }

    fn check_clearance(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.domain.dim() {
            return Err(Error::Dimension {
                expected: self.domain.dim(),
                found: y.len(),
            });
        }
        let d = self.image.distance(y);
        if d <= self.clearance {
            return Err(Error::BoundaryProximity {
                y: y.to_vec(),
                distance: d,
                clearance: self.clearance,
            });
        }
        Ok(d)
    }

    fn check_support(&self, y: &[f64]) -> Result<f64> {
        let d = self.check_clearance(y)?;
        if d <= self.options.bump_radius {
            return Err(Error::Support {
                y: y.to_vec(),
                radius: self.options.bump_radius,
                distance: d,
            });
        }
        Ok(d)
    }

    /// `τ_regular`, from the option or `1e-8 ·` the mean Frobenius norm of
    /// `∇f` over the domain grid.
    pub fn tau_regular(&mut self) -> f64 {
        if let Some(t) = self.options.tau_regular {
            return t;
        }
        if let Some(t) = self.tau {
            return t;
        }
        let map = self.map;
        let total = self.domain.integrate(|x| frobenius(&map.jacobian_vec(x)));
        let t = TAU_FACTOR * total / self.domain.volume();
        self.tau = Some(t);
        t
    }

    /// Signed preimage count.
    pub fn counting(&mut self, y: &[f64]) -> Result<DegreeReport> {
        self.check_clearance(y)?;
        let tau = self.tau_regular();
        let step: Vec<f64> = self.domain.cell_size();
        let mut y_used = y.to_vec();
        let mut perturbations = 0;
        loop {
            let scan = self.scan(&y_used);
            let singular = scan.roots.iter().any(|p| p.det.abs() <= tau);
            if !singular || perturbations == MAX_PERTURBATIONS {
                let value: i64 = scan.roots.iter().map(|p| p.sign as i64).sum();
                let mut diag = self.diagnostics(self.image.distance(&y_used), None);
                diag.tau_regular = Some(tau);
                diag.perturbations = perturbations;
                let inconclusive = singular || scan.failed > 0;
                if singular {
                    diag.note = Some("preimage with |det| ≤ τ after perturbation".into());
                } else if scan.failed > 0 {
                    diag.note = Some(format!("{} Newton runs did not converge", scan.failed));
                }
                return Ok(DegreeReport {
                    y: y.to_vec(),
                    y_used,
                    method: Method::Counting,
                    value,
                    raw: value as f64,
                    residual: 0.0,
                    inconclusive,
                    preimages: scan.roots,
                    diagnostics: diag,
                });
            }
            perturbations += 1;
            // Alternate the diagonal direction so repeated moves do not drift.
            for (k, (v, h)) in y_used.iter_mut().zip(&step).enumerate() {
                let s = if (perturbations + k) % 2 == 0 { 1.0 } else { -1.0 };
                *v += s * h;
            }
            self.check_clearance(&y_used)?;
        }
    }

    fn scan(&self, y: &[f64]) -> Scan {
        let n = self.domain.dim();
        let res = self.domain.resolution();
        let (lo, _) = self.domain.bounding_box();
        let h = self.domain.cell_size();
        let half_diag = 0.5 * norm(&h);
        let map = self.map;
        let domain = self.domain;
        let tol = self.options.tol;

        // Candidate cells: y inside the (widened) bounding box of the values
        // at the cell corners and center.
        let rows: Vec<Vec<(Vec<f64>, bool)>> = (0..res)
            .into_par_iter()
            .map(|i0| {
                let mut out = Vec::new();
                let mut fv = vec![0.0; n];
                let mut corner = vec![0.0; n];
                let mut center = vec![0.0; n];
                for_each_index(n - 1, res, |rest| {
                    center[0] = lo[0] + (i0 as f64 + 0.5) * h[0];
                    for a in 1..n {
                        center[a] = lo[a] + (rest[a - 1] as f64 + 0.5) * h[a];
                    }
                    if domain.signed_distance(&center) > half_diag {
                        return;
                    }
                    let mut vlo = vec![f64::INFINITY; n];
                    let mut vhi = vec![f64::NEG_INFINITY; n];
                    let mut add = |v: &[f64]| {
                        for k in 0..n {
                            vlo[k] = vlo[k].min(v[k]);
                            vhi[k] = vhi[k].max(v[k]);
                        }
                    };
                    map.eval(&center, &mut fv);
                    add(&fv);
                    for_each_index(n, 2, |c| {
                        for a in 0..n {
                            corner[a] = center[a] + (c[a] as f64 - 0.5) * h[a];
                        }
                        map.eval(&corner, &mut fv);
                        add(&fv);
                    });
                    let strict = (0..n).all(|k| vlo[k] <= y[k] && y[k] <= vhi[k]);
                    let loose = (0..n).all(|k| {
                        let w = 0.5 * (vhi[k] - vlo[k]) + 1e-12;
                        vlo[k] - w <= y[k] && y[k] <= vhi[k] + w
                    });
                    if loose {
                        out.push((center.clone(), strict));
                    }
                });
                out
            })
            .collect();
        let candidates: Vec<(Vec<f64>, bool)> = rows.into_iter().flatten().collect();
        let max_step = 4.0 * half_diag;
        let results: Vec<(Option<Vec<f64>>, bool)> = candidates
            .par_iter()
            .map(|(c, strict)| (newton(map, y, c, tol, max_step), *strict))
            .collect();

        let dedup = (1e-4 * half_diag).max(1e-9);
        let mut roots: Vec<Preimage> = Vec::new();
        let mut failed = 0;
        for (r, strict) in results {
            match r {
                Some(z) if domain.contains(&z) => {
                    if roots.iter().all(|p| dist(&p.point, &z) > dedup) {
                        let d = map.jacobian_det(&z);
                        roots.push(Preimage {
                            sign: if d > 0.0 { 1 } else if d < 0.0 { -1 } else { 0 },
                            det: d,
                            point: z,
                        });
                    }
                }
                Some(_) => {}
                None => {
                    if strict {
                        failed += 1;
                    }
                }
            }
        }
        Scan { roots, failed }
    }

    /// `∫_Ω g(f(x)) det∇f(x) dx / ∫g` with `g` the bump of the configured
    /// radius at `y`.
    pub fn integral(&mut self, y: &[f64]) -> Result<DegreeReport> {
        let d = self.check_support(y)?;
        let r = self.options.bump_radius;
        let bump = Bump::new(y, r);
        let map = self.map;
        let n = self.domain.dim();
        let num = self.domain.integrate(|x| {
            let mut fx = [0.0; 8];
            let fx = &mut fx[..n];
            map.eval(x, fx);
            if !bump.support_contains(fx) {
                return 0.0;
            }
            bump.eval(fx) * map.jacobian_det(x)
        });
        let raw = num / bump.integral();
        Ok(self.rounded(y, Method::Integral, raw, d))
    }

    fn rounded(&self, y: &[f64], method: Method, raw: f64, d: f64) -> DegreeReport {
        let value = raw.round();
        let residual = (raw - value).abs();
        let inconclusive = !(residual < 0.5);
        let mut diag = self.diagnostics(d, Some(self.options.bump_radius));
        if inconclusive {
            diag.note = Some(format!("residual {residual} ≥ 0.5"));
        }
        DegreeReport {
            y: y.to_vec(),
            y_used: y.to_vec(),
            method,
            value: value as i64,
            raw,
            residual,
            inconclusive,
            preimages: Vec::new(),
            diagnostics: diag,
        }
    }

    /// `∫_Γ f*(β) / ∫g` where `β = ι_v(dw¹∧…∧dwⁿ)` and `v` is the Newtonian
    /// field of the bump at `y`.
    pub fn boundary(&mut self, y: &[f64]) -> Result<DegreeReport> {
        let n = self.domain.dim();
        if !(2..=3).contains(&n) {
            return Err(Error::Config(format!("boundary pull-back needs n ∈ {{2, 3}}, got {n}")));
        }
        let d = self.check_support(y)?;
        let r = self.options.bump_radius;
        let field = NewtonField::new(y, r);
        let image = &self.image;
        let mesh = &image.mesh;
        let flux: f64 = (0..mesh.element_count())
            .into_par_iter()
            .map(|e| {
                let el = mesh.element(e);
                if n == 2 {
                    let (a, b) = (image.value(el[0]), image.value(el[1]));
                    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                    let v = field.eval(&mid);
                    v[0] * (b[1] - a[1]) - v[1] * (b[0] - a[0])
                } else {
                    let (a, b, c) = (image.value(el[0]), image.value(el[1]), image.value(el[2]));
                    let mid: Vec<f64> = (0..3).map(|k| (a[k] + b[k] + c[k]) / 3.0).collect();
                    let area = cross(&sub(b, a), &sub(c, a));
                    let v = field.eval(&mid);
                    0.5 * dot(&v, &area)
                }
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        Ok(self.rounded(y, Method::Boundary, flux, d))
    }

    /// Crossing-number (n=2) or solid-angle (n=3) degree of the boundary
    /// image; exact for the polygonal image.
    pub fn topological(&self, y: &[f64]) -> Result<i64> {
        self.check_clearance(y)?;
        Ok(self.image.degree_at(y))
    }

    pub fn run(&mut self, y: &[f64], method: Method) -> Result<DegreeReport> {
        match method {
            Method::Counting => self.counting(y),
            Method::Integral => self.integral(y),
            Method::Boundary => self.boundary(y),
        }
    }
}

struct Scan {
    roots: Vec<Preimage>,
    failed: usize,
}

/// `v(w) = c_n ∫ (w − z)/|w − z|ⁿ g(z) dz / ∫g` with `c_n = 1/|S^{n−1}|`,
/// by bump quadrature.
struct NewtonField {
    points: Vec<f64>,
    weights: Vec<f64>,
    n: usize,
}

impl NewtonField {
    fn new(y: &[f64], r: f64) -> Self {
        let n = y.len();
        let cells = if n == 2 { BUMP_CELLS_2D } else { BUMP_CELLS_3D };
        let bump = Bump::new(y, r);
        // g vanishes to infinite order at the rim, so plain cells suffice.
        let lo: Vec<f64> = y.iter().map(|c| c - r).collect();
        let hi: Vec<f64> = y.iter().map(|c| c + r).collect();
        let q = Quadrature::cells(&lo, &hi, cells, |_| -1.0);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (z, w) in q.iter() {
            let g = bump.eval(z);
            if g > 0.0 {
                points.extend_from_slice(z);
                weights.push(w * g);
            }
        }
        let mass: f64 = weights.iter().sum();
        let c = crate::domain::unit_sphere_area(n);
        for w in weights.iter_mut() {
            *w /= mass * c;
        }
        NewtonField { points, weights, n }
    }

    fn eval(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut v = vec![0.0; n];
        for (z, wt) in self.points.chunks_exact(n).zip(&self.weights) {
            let mut r2 = 0.0;
            for k in 0..n {
                r2 += (w[k] - z[k]) * (w[k] - z[k]);
            }
            let s = wt / r2.powf(n as f64 / 2.0);
            for k in 0..n {
                v[k] += s * (w[k] - z[k]);
            }
        }
        v
    }
}

/// Damped Newton for `f(z) = y` from `start`. Returns the root when
/// `|f(z) − y| < tol` within [`NEWTON_MAX_ITER`] iterations.
pub fn newton(map: &MapField, y: &[f64], start: &[f64], tol: f64, max_step: f64) -> Option<Vec<f64>> {
    let n = start.len();
    let mut z = start.to_vec();
    let mut fz = vec![0.0; n];
    let mut g = vec![0.0; n * n];
    let residual = |z: &[f64], fz: &mut [f64]| {
        map.eval(z, fz);
        let mut s = 0.0;
        for k in 0..n {
            fz[k] -= y[k];
            s += fz[k] * fz[k];
        }
        s.sqrt()
    };
    let mut res = residual(&z, &mut fz);
    let mut trial = vec![0.0; n];
    let mut ft = vec![0.0; n];
    for _ in 0..NEWTON_MAX_ITER {
        if res < tol {
            return Some(z);
        }
        map.jacobian(&z, &mut g);
        let step = solve(&g, &fz, n)?;
        let len = norm(&step);
        if !len.is_finite() {
            return None;
        }
        let mut t = if len > max_step { max_step / len } else { 1.0 };
        loop {
            for k in 0..n {
                trial[k] = z[k] - t * step[k];
            }
            let rt = residual(&trial, &mut ft);
            if rt < res || t < 1.0 / 1024.0 {
                z.copy_from_slice(&trial);
                fz.copy_from_slice(&ft);
                res = rt;
                break;
            }
            t *= 0.5;
        }
    }
    (res < tol).then_some(z)
}

pub fn degree_by_counting(map: &MapField, domain: &Domain, y: &[f64], options: &DegreeOptions) -> Result<DegreeReport> {
    DegreeSolver::new(map, domain, options.clone())?.counting(y)
}

pub fn degree_by_integral(map: &MapField, domain: &Domain, y: &[f64], options: &DegreeOptions) -> Result<DegreeReport> {
    DegreeSolver::new(map, domain, options.clone())?.integral(y)
}

pub fn boundary_pullback_degree(
    map: &MapField,
    domain: &Domain,
    y: &[f64],
    options: &DegreeOptions,
) -> Result<DegreeReport> {
    DegreeSolver::new(map, domain, options.clone())?.boundary(y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    /// Nonzero degree ⇒ `y ∈ f(Ω)`.
    Existence,
    /// Constant along paths avoiding `f(Γ)`.
    LocalConstancy,
    /// Unchanged under perturbations smaller than `dist(y, f(Γ))`.
    Stability,
    /// Unchanged along `(1−t)f + tg` when `f = g` on `Γ`.
    Homotopy,
    /// `deg(f, Ω, y) = deg(f, Ω′, y)` when `y ∉ f(Ω∖Ω′)`.
    Excision,
    /// Injective maps have degree `±1` on their image.
    Injective,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomCheck {
    pub axiom: Axiom,
    pub probe: Vec<f64>,
    pub passed: bool,
    pub skipped: bool,
    pub witness: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomReport {
    pub checks: Vec<AxiomCheck>,
    pub passed: bool,
}

impl AxiomReport {
    pub fn failures(&self) -> impl Iterator<Item = &AxiomCheck> {
        self.checks.iter().filter(|c| !c.passed && !c.skipped)
    }

    pub fn count(&self, axiom: Axiom) -> usize {
        self.checks.iter().filter(|c| c.axiom == axiom && !c.skipped).count()
    }
}

#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub probes: Vec<Vec<f64>>,
    /// Declared injectivity of the map.
    pub injective: bool,
    /// `Ω′ ⊂ Ω` for excision; defaults to `Ω_ε` with `ε = 0.1·feature size`.
    pub excision: Option<Domain>,
}

impl ProbeSet {
    pub fn new(probes: Vec<Vec<f64>>) -> Self {
        ProbeSet {
            probes,
            injective: false,
            excision: None,
        }
    }

    pub fn injective(mut self, yes: bool) -> Self {
        self.injective = yes;
        self
    }

    pub fn excision(mut self, sub: Domain) -> Self {
        self.excision = Some(sub);
        self
    }
}

/// Smooth weight positive in `Ω` and vanishing on `Γ`.
fn vanishing_weight(domain: &Domain, x: &[f64], grad: &mut [f64]) -> f64 {
    match domain.shape() {
        Shape::Ball { center, radius } => {
            let r2 = radius * radius;
            let mut q = 0.0;
            for k in 0..x.len() {
                let d = x[k] - center[k];
                q += d * d;
                grad[k] = -2.0 * d / r2;
            }
            1.0 - q / r2
        }
        Shape::Box { lo, hi } => {
            let n = x.len();
            let f: Vec<f64> = (0..n)
                .map(|a| 4.0 * (x[a] - lo[a]) * (hi[a] - x[a]) / ((hi[a] - lo[a]) * (hi[a] - lo[a])))
                .collect();
            let df: Vec<f64> = (0..n)
                .map(|a| 4.0 * (hi[a] + lo[a] - 2.0 * x[a]) / ((hi[a] - lo[a]) * (hi[a] - lo[a])))
                .collect();
            for a in 0..n {
                grad[a] = df[a] * (0..n).filter(|&b| b != a).map(|b| f[b]).product::<f64>();
            }
            f.iter().product()
        }
    }
}

/// Adds `amplitude · p(x)` to `map`, with `p` a bounded smooth field of
/// sup norm at most 1.
fn perturbed(map: &MapField, amplitude: f64) -> MapField {
    let n = map.source_dim();
    let s = amplitude / (n as f64).sqrt();
    let (f, g) = (map.clone(), map.clone());
    MapField::analytic(format!("{}+perturbation", map.name()), n, n, move |x, o| {
        f.eval(x, o);
        for k in 0..n {
            o[k] += s * (3.0 * x[(k + 1) % n] + 0.5 + k as f64).sin();
        }
    })
    .with_gradient(move |x, o| {
        g.jacobian(x, o);
        for k in 0..n {
            let j = (k + 1) % n;
            o[k * n + j] += 3.0 * s * (3.0 * x[j] + 0.5 + k as f64).cos();
        }
    })
}

/// `f + t·a·w(x)·e₁` with `w` vanishing on `Γ`: equal traces for every `t`.
fn homotopic(map: &MapField, domain: &Domain, amplitude: f64) -> MapField {
    let n = map.source_dim();
    let (f, g) = (map.clone(), map.clone());
    let (d1, d2) = (domain.clone(), domain.clone());
    MapField::analytic(format!("{}+interior", map.name()), n, n, move |x, o| {
        f.eval(x, o);
        let mut gw = vec![0.0; n];
        o[0] += amplitude * vanishing_weight(&d1, x, &mut gw);
    })
    .with_gradient(move |x, o| {
        g.jacobian(x, o);
        let mut gw = vec![0.0; n];
        vanishing_weight(&d2, x, &mut gw);
        for j in 0..n {
            o[j] += amplitude * gw[j];
        }
    })
}

/// Checks the degree axioms on a probe set. Violations are reported with a
/// witness; checks whose hypotheses fail at a probe are marked skipped.
pub fn degree_axiom_harness(
    map: &MapField,
    domain: &Domain,
    probes: &ProbeSet,
    options: &DegreeOptions,
) -> Result<AxiomReport> {
    let mut solver = DegreeSolver::new(map, domain, options.clone())?;
    let mut checks = Vec::new();
    let mut push = |axiom, probe: &[f64], passed: bool, skipped: bool, witness: String| {
        checks.push(AxiomCheck {
            axiom,
            probe: probe.to_vec(),
            passed,
            skipped,
            witness,
        })
    };
    let sub = match &probes.excision {
        Some(d) => d.clone(),
        None => domain.inner_domain(0.1 * domain.feature_size())?,
    };
    let mut degrees: Vec<Option<i64>> = Vec::new();

    for y in &probes.probes {
        let count = match solver.counting(y) {
            Ok(r) => r,
            Err(Error::BoundaryProximity { .. }) => {
                degrees.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        let topo = solver.image.degree_at(y);
        degrees.push(Some(topo));
        let clearance = count.diagnostics.boundary_distance;

        // (i) existence
        push(
            Axiom::Existence,
            y,
            topo == 0 || !count.preimages.is_empty(),
            false,
            format!("boundary degree {topo}, {} preimages", count.preimages.len()),
        );

        // (iii) stability
        let eps = 0.25 * clearance;
        let g = perturbed(map, eps);
        match degree_by_counting(&g, domain, y, options) {
            Ok(r) => push(
                Axiom::Stability,
                y,
                r.value == count.value,
                false,
                format!("‖f−g‖ ≤ {eps:.3e}: deg f = {}, deg g = {}", count.value, r.value),
            ),
            Err(Error::BoundaryProximity { .. }) => push(Axiom::Stability, y, true, true, "perturbed image too close".into()),
            Err(e) => return Err(e),
        }

        // (iv) homotopy with an equal-trace partner
        let mut values = Vec::new();
        for t in [0.5, 1.0] {
            let ht = homotopic(map, domain, t * 0.5 * clearance);
            values.push(degree_by_counting(&ht, domain, y, options)?.value);
        }
        push(
            Axiom::Homotopy,
            y,
            values.iter().all(|&v| v == count.value),
            false,
            format!("deg along t ∈ {{0, 0.5, 1}}: {} {:?}", count.value, values),
        );

        // (v) excision
        let margin = norm(&domain.cell_size());
        let inside = count.preimages.iter().all(|p| sub.signed_distance(&p.point) < -margin);
        if inside {
            match degree_by_counting(map, &sub, y, options) {
                Ok(r) => push(
                    Axiom::Excision,
                    y,
                    r.value == count.value,
                    false,
                    format!("deg on Ω = {}, on Ω′ = {}", count.value, r.value),
                ),
                Err(Error::BoundaryProximity { .. }) => {
                    push(Axiom::Excision, y, true, true, "y too close to f(∂Ω′)".into())
                }
                Err(e) => return Err(e),
            }
        } else {
            push(Axiom::Excision, y, true, true, "preimage outside Ω′".into());
        }

        // (vi) injectivity
        if probes.injective {
            let ok = count.value.abs() <= 1 && (count.preimages.is_empty() || count.value.abs() == 1);
            push(
                Axiom::Injective,
                y,
                ok,
                false,
                format!("degree {} with {} preimages", count.value, count.preimages.len()),
            );
        }
    }

    // (ii) local constancy along straight paths between consecutive probes
    const PATH_SAMPLES: usize = 32;
    for (i, w) in probes.probes.windows(2).enumerate() {
        let (Some(da), Some(db)) = (degrees[i], degrees[i + 1]) else {
            continue;
        };
        let (a, b) = (&w[0], &w[1]);
        let mut clear = true;
        let mut along = Vec::new();
        for s in 0..=PATH_SAMPLES {
            let t = s as f64 / PATH_SAMPLES as f64;
            let p: Vec<f64> = a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect();
            if solver.image.distance(&p) <= solver.clearance {
                clear = false;
                break;
            }
            along.push(solver.image.degree_at(&p));
        }
        if clear {
            push(
                Axiom::LocalConstancy,
                b,
                da == db && along.iter().all(|&v| v == da),
                false,
                format!("path {a:?} → {b:?}: endpoints {da}, {db}"),
            );
        } else {
            push(Axiom::LocalConstancy, b, true, true, "path meets f(Γ)".into());
        }
    }

    let passed = checks.iter().all(|c| c.passed || c.skipped);
    Ok(AxiomReport { checks, passed })
}

/// Solves `f(z) = y` for all preimages and returns their determinant signs;
/// for diagnostics that do not need a full report.
pub fn signed_preimages(map: &MapField, domain: &Domain, y: &[f64]) -> Result<Vec<Preimage>> {
    Ok(degree_by_counting(map, domain, y, &DegreeOptions::default())?.preimages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapzoo::preset;

    fn disk() -> Domain {
        Domain::unit_disk(128).unwrap()
    }

    #[test]
    fn counting_examples() {
        let d = disk();
        let o = DegreeOptions::default();
        let id = preset("identity", &[]).unwrap().map;
        let r = degree_by_counting(&id, &d, &[0.0, 0.0], &o).unwrap();
        assert_eq!(r.value, 1);
        assert_eq!(r.preimages.len(), 1);
        assert!(norm(&r.preimages[0].point) < 1e-10);
        assert_eq!(r.preimages[0].sign, 1);
        assert_eq!(degree_by_counting(&id, &d, &[2.0, 0.0], &o).unwrap().value, 0);

        let z2 = preset("zpow", &[2.0]).unwrap().map;
        let r = degree_by_counting(&z2, &d, &[0.25, 0.0], &o).unwrap();
        assert_eq!(r.value, 2);
        let mut xs: Vec<f64> = r.preimages.iter().map(|p| p.point[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 0.5).abs() < 1e-9 && (xs[1] - 0.5).abs() < 1e-9);
        assert!(r.preimages.iter().all(|p| p.sign == 1));

        let refl = preset("linear", &[1.0, 0.0, 0.0, -1.0]).unwrap().map;
        assert_eq!(degree_by_counting(&refl, &d, &[0.1, 0.1], &o).unwrap().value, -1);
    }

    #[test]
    fn integral_examples() {
        let d = Domain::unit_disk(256).unwrap();
        let id = preset("identity", &[]).unwrap().map;
        let o = DegreeOptions {
            bump_radius: 0.2,
            ..Default::default()
        };
        let r = degree_by_integral(&id, &d, &[0.0, 0.0], &o).unwrap();
        assert_eq!(r.value, 1);
        assert!((r.raw - 1.0).abs() < 0.02);
        let o = DegreeOptions::default();
        let z2 = preset("zpow", &[2.0]).unwrap().map;
        assert_eq!(degree_by_integral(&z2, &d, &[0.25, 0.0], &o).unwrap().value, 2);
        let refl = preset("linear", &[1.0, 0.0, 0.0, -1.0]).unwrap().map;
        assert_eq!(degree_by_integral(&refl, &d, &[0.1, 0.1], &o).unwrap().value, -1);
    }

    #[test]
    fn support_and_proximity_errors() {
        let d = disk();
        let id = preset("identity", &[]).unwrap().map;
        let o = DegreeOptions {
            bump_radius: 0.2,
            ..Default::default()
        };
        assert!(matches!(
            degree_by_integral(&id, &d, &[0.9, 0.0], &o),
            Err(Error::Support { .. })
        ));
        assert!(matches!(
            degree_by_counting(&id, &d, &[1.0, 0.0], &o),
            Err(Error::BoundaryProximity { .. })
        ));
    }

    #[test]
    fn winding_examples() {
        let circle = |k: f64, n: usize| -> Vec<[f64; 2]> {
            (0..n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    [(k * t).cos(), (k * t).sin()]
                })
                .collect()
        };
        assert_eq!(winding_number(&circle(1.0, 64), [0.0, 0.0]).unwrap(), 1);
        assert_eq!(winding_number(&circle(3.0, 300), [0.0, 0.0]).unwrap(), 3);
        assert_eq!(winding_number(&circle(1.0, 64), [2.0, 0.0]).unwrap(), 0);
        assert_eq!(winding_number_crossing(&circle(3.0, 300), [0.1, 0.05]), 3);
        let mut rev = circle(1.0, 64);
        rev.reverse();
        assert_eq!(winding_number(&rev, [0.0, 0.0]).unwrap(), -1);
        assert!(matches!(winding_number(&circle(1.0, 64), [1.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn boundary_examples() {
        let d = Domain::unit_disk(64).unwrap();
        let id = preset("identity", &[]).unwrap().map;
        let o = DegreeOptions::default();
        let r = boundary_pullback_degree(&id, &d, &[0.0, 0.0], &o).unwrap();
        assert!((r.raw - 1.0).abs() < 0.05);
        let z2 = preset("zpow", &[2.0]).unwrap().map;
        assert_eq!(boundary_pullback_degree(&z2, &d, &[0.25, 0.0], &o).unwrap().value, 2);
        let ball = Domain::ball(&[0.0, 0.0, 0.0], 1.0, 16).unwrap();
        let id3 = preset("identity", &[3.0]).unwrap().map;
        let r = boundary_pullback_degree(&id3, &ball, &[0.0, 0.0, 0.0], &o).unwrap();
        assert_eq!(r.value, 1);
        assert!((r.raw - 1.0).abs() < 0.05, "{}", r.raw);
    }

    #[test]
    fn triangle_distance_cases() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert!((triangle_distance(&[0.2, 0.2, 0.5], &a, &b, &c) - 0.5).abs() < 1e-15);
        assert!((triangle_distance(&[-1.0, -1.0, 0.0], &a, &b, &c) - 2f64.sqrt()).abs() < 1e-15);
        assert!((triangle_distance(&[0.5, -1.0, 0.0], &a, &b, &c) - 1.0).abs() < 1e-15);
        assert!((triangle_distance(&[1.0, 1.0, 0.0], &a, &b, &c) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn axiom_examples() {
        let d = disk();
        let o = DegreeOptions::default();
        let rot = preset("rotation", &[0.4]).unwrap().map;
        let probes = ProbeSet::new(vec![vec![0.0, 0.0], vec![0.3, -0.2], vec![-0.4, 0.1]]).injective(true);
        let rep = degree_axiom_harness(&rot, &d, &probes, &o).unwrap();
        assert!(rep.passed, "{:?}", rep.failures().collect::<Vec<_>>());
        assert!(rep.count(Axiom::Injective) == 3);

        let z2 = preset("zpow", &[2.0]).unwrap().map;
        let sub = Domain::ball(&[0.0, 0.0], 0.9, 128).unwrap();
        let rep = degree_axiom_harness(&z2, &d, &ProbeSet::new(vec![vec![0.25, 0.0]]).excision(sub), &o).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.count(Axiom::Excision), 1);
    }
}
