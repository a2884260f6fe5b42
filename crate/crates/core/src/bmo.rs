//! Mean oscillation, BMO/VMO estimates, mollification and the VMO degree.
//!
//! Ball averages use a fixed midpoint rule on the unit ball scaled to each
//! ball, so a ball's statistics scale exactly with its radius.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degree::{
    default_boundary_resolution, segment_distance, triangle_distance, BoundaryImage, DegreeOptions, DegreeSolver,
    DEFAULT_BUMP_RADIUS,
};
use crate::domain::{unit_ball_volume, BoundaryMesh, Domain, Shape};
use crate::error::{Error, Result};
use crate::fields::{Interpolation, MapField};
use crate::kernel::{profile, Bump};
use crate::linalg::{adjugate, dist, frobenius, norm};
use crate::quadrature::Quadrature;
use crate::report::{echo_lines, float};

pub const MEAN_OSC_CELLS_2D: usize = 64;
pub const MEAN_OSC_CELLS_3D: usize = 20;
pub const AVERAGE_CELLS_2D: usize = 32;
pub const AVERAGE_CELLS_3D: usize = 8;
/// Odd, so the kernel has a node at its center.
pub const MOLLIFY_CELLS_2D: usize = 17;
pub const MOLLIFY_CELLS_3D: usize = 9;
pub const DEFAULT_SEED: u64 = 0x5eb;
pub const MIN_PLAN_BALLS: usize = 100;
pub const MIN_PLAN_SCALES: usize = 4;
pub const DEFAULT_CENTERS_PER_SCALE: usize = 32;
pub const ESSENTIAL_BINS: usize = 32;
pub const DEFAULT_MASS_CUTOFF: f64 = 1e-3;
pub const DEFAULT_MARGIN_FLOOR: f64 = 1e-2;
pub const STABLE_TAIL: usize = 3;
pub const SCHEDULE_LEVELS: usize = 5;
pub const SCHEDULE_START: f64 = 0.2;
pub const MARGIN_MAX_VERTICES: usize = 2048;
/// Depths `0.2·2^{-k}`, as fractions of the feature size.
pub const MARGIN_DEPTH_LEVELS: usize = 8;
pub const MARGIN_CELLS_2D: usize = 16;
pub const MARGIN_CELLS_3D: usize = 8;
/// Boundary resolution for `Ω_ε` in 3D when none is configured.
pub const LEVEL_BOUNDARY_RESOLUTION_3D: usize = 64;

/// Node offsets on the unit ball with weights summing to one.
#[derive(Clone, Debug)]
pub struct UnitBallRule {
    pub dim: usize,
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl UnitBallRule {
    pub fn new(dim: usize, cells_across: usize) -> Self {
        let q = Quadrature::ball(&vec![0.0; dim], 1.0, cells_across, None);
        let total = q.measure();
        let offsets = q.iter().flat_map(|(p, _)| p.to_vec()).collect();
        let weights = q.weights().iter().map(|w| w / total).collect();
        UnitBallRule { dim, offsets, weights }
    }

    pub fn for_dim(dim: usize, cells_2d: usize, cells_3d: usize) -> Self {
        Self::new(dim, if dim <= 2 { cells_2d } else { cells_3d })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offset(&self, i: usize) -> &[f64] {
        &self.offsets[i * self.dim..(i + 1) * self.dim]
    }

    /// Values of `map` at `x + ε·u_i`, flattened.
    pub fn sample(&self, map: &MapField, x: &[f64], eps: f64) -> Vec<f64> {
        let m = map.target_dim();
        let mut out = vec![0.0; self.len() * m];
        let mut z = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (a, (zi, u)) in z.iter_mut().zip(self.offset(i)).enumerate() {
                *zi = x[a] + eps * u;
            }
            map.eval(&z, &mut out[i * m..(i + 1) * m]);
        }
        out
    }

    /// Weighted mean, accumulated relative to the first value so constant
    /// data reproduce exactly.
    pub fn mean(&self, values: &[f64], m: usize) -> Vec<f64> {
        if values.is_empty() {
            return vec![0.0; m];
        }
        let base = &values[..m];
        let mut acc = vec![0.0; m];
        for (w, v) in self.weights.iter().zip(values.chunks_exact(m)) {
            for k in 0..m {
                acc[k] += w * (v[k] - base[k]);
            }
        }
        acc.iter().zip(base).map(|(a, b)| a + b).collect()
    }

    /// `Σ w_i |v_i − c|`.
    pub fn mean_distance(&self, values: &[f64], m: usize, c: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(values.chunks_exact(m))
            .map(|(w, v)| w * dist(v, c))
            .sum()
    }
}

fn check_admissible(domain: &Domain, x: &[f64], eps: f64) -> Result<()> {
    let clearance = domain.clearance(x);
    if !(eps > 0.0) || eps >= clearance {
        return Err(Error::Inadmissible {
            center: x.to_vec(),
            radius: eps,
            clearance,
        });
    }
    Ok(())
}

fn mean_osc_with(rule: &UnitBallRule, map: &MapField, x: &[f64], eps: f64) -> f64 {
    let m = map.target_dim();
    let values = rule.sample(map, x, eps);
    let mean = rule.mean(&values, m);
    rule.mean_distance(&values, m, &mean)
}

fn mean_osc_rule(dim: usize) -> UnitBallRule {
    UnitBallRule::for_dim(dim, MEAN_OSC_CELLS_2D, MEAN_OSC_CELLS_3D)
}

/// `∮_{B_ε(x)} |f − f̄_ε(x)|` for an admissible ball `ε < dist(x, Γ)`.
pub fn mean_oscillation(map: &MapField, domain: &Domain, x: &[f64], eps: f64) -> Result<f64> {
    check_admissible(domain, x, eps)?;
    Ok(mean_osc_with(&mean_osc_rule(domain.dim()), map, x, eps))
}

/// Dyadic scale ladder crossed with a jittered center lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmoPlan {
    pub seed: u64,
    pub scales: Vec<f64>,
    pub centers_per_scale: usize,
    pub include_center: bool,
}

impl BmoPlan {
    /// `levels` scales `0.2·feature·2^{-k}`.
    pub fn dyadic(domain: &Domain, levels: usize, centers_per_scale: usize, seed: u64) -> Self {
        let top = SCHEDULE_START * domain.feature_size();
        BmoPlan {
            seed,
            scales: (0..levels).map(|k| top * 0.5f64.powi(k as i32)).collect(),
            centers_per_scale,
            include_center: true,
        }
    }

    pub fn default_for(domain: &Domain) -> Self {
        Self::dyadic(domain, SCHEDULE_LEVELS, DEFAULT_CENTERS_PER_SCALE, DEFAULT_SEED)
    }
}

fn domain_center(domain: &Domain) -> Vec<f64> {
    match domain.shape() {
        Shape::Ball { center, .. } => center.clone(),
        Shape::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
    }
}

/// Jittered lattice of about `count` cells over the bounding box of
/// `Ω_ε`, keeping centers with `ε < dist(x, Γ)`.
pub fn jittered_centers(domain: &Domain, eps: f64, count: usize, include_center: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = domain.dim();
    let (lo, hi) = domain.bounding_box();
    let k = ((count.max(1) as f64).powf(1.0 / n as f64).ceil() as usize).max(1);
    let lo: Vec<f64> = lo.iter().map(|v| v + eps).collect();
    let hi: Vec<f64> = hi.iter().map(|v| v - eps).collect();
    let mut out = Vec::new();
    if include_center {
        let c = domain_center(domain);
        if eps < domain.clearance(&c) {
            out.push(c);
        }
    }
    if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
        return out;
    }
    crate::quadrature::for_each_index(n, k, |idx| {
        let x: Vec<f64> = (0..n)
            .map(|a| {
                let h = (hi[a] - lo[a]) / k as f64;
                let jitter: f64 = rng.gen_range(-0.25..0.25);
                lo[a] + (idx[a] as f64 + 0.5 + jitter) * h
            })
            .collect();
        if eps < domain.clearance(&x) {
            out.push(x);
        }
    });
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallRecord {
    pub center: Vec<f64>,
    pub eps: f64,
    pub mean_osc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub eps: f64,
    pub omega: f64,
    pub balls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmoProfile {
    pub map: String,
    pub plan: BmoPlan,
    pub seminorm: f64,
    pub modulus: Vec<ScaleRecord>,
    pub balls: Vec<BallRecord>,
}

impl BmoProfile {
    pub fn omega(&self, eps: f64) -> Option<f64> {
        self.modulus.iter().find(|s| s.eps == eps).map(|s| s.omega)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, echo: Option<&str>) -> Result<()> {
        w.write_all(echo_lines(echo).as_bytes())?;
        let scales: Vec<String> = self.plan.scales.iter().map(|s| float(*s)).collect();
        writeln!(
            w,
            "# plan seed={} centers_per_scale={} include_center={} scales={}",
            self.plan.seed,
            self.plan.centers_per_scale,
            self.plan.include_center,
            scales.join(";")
        )?;
        writeln!(w, "# map {} seminorm {}", self.map, float(self.seminorm))?;
        writeln!(w, "eps,omega,balls")?;
        for s in &self.modulus {
            writeln!(w, "{},{},{}", float(s.eps), float(s.omega), s.balls)?;
        }
        Ok(())
    }
}

fn scale_table(map: &MapField, domain: &Domain, scales: &[f64], centers: &[Vec<Vec<f64>>]) -> Vec<BallRecord> {
    let rule = mean_osc_rule(domain.dim());
    let jobs: Vec<(f64, &Vec<f64>)> = scales
        .iter()
        .zip(centers)
        .flat_map(|(e, cs)| cs.iter().map(move |c| (*e, c)))
        .collect();
    jobs.par_iter()
        .map(|(eps, c)| BallRecord {
            center: (*c).clone(),
            eps: *eps,
            mean_osc: mean_osc_with(&rule, map, c, *eps),
        })
        .collect()
}

fn summarize(scales: &[f64], balls: &[BallRecord]) -> Vec<ScaleRecord> {
    scales
        .iter()
        .map(|&eps| {
            let at: Vec<f64> = balls.iter().filter(|b| b.eps == eps).map(|b| b.mean_osc).collect();
            ScaleRecord {
                eps,
                omega: at.iter().copied().fold(0.0, f64::max),
                balls: at.len(),
            }
        })
        .collect()
}

/// Sup of the mean oscillation over the balls of `plan`.
pub fn bmo_seminorm(map: &MapField, domain: &Domain, plan: &BmoPlan) -> Result<BmoProfile> {
    if plan.scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("plan scales must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let centers: Vec<Vec<Vec<f64>>> = plan
        .scales
        .iter()
        .map(|&e| jittered_centers(domain, e, plan.centers_per_scale, plan.include_center, &mut rng))
        .collect();
    let total: usize = centers.iter().map(Vec::len).sum();
    let used = centers.iter().filter(|c| !c.is_empty()).count();
    if total == 0 {
        return Err(Error::EmptyRegion("the sampling plan has no admissible ball".into()));
    }
    if total < MIN_PLAN_BALLS || used < MIN_PLAN_SCALES {
        return Err(Error::Config(format!(
            "plan has {total} admissible balls over {used} scales; need {MIN_PLAN_BALLS} over {MIN_PLAN_SCALES}"
        )));
    }
    let balls = scale_table(map, domain, &plan.scales, &centers);
    let modulus = summarize(&plan.scales, &balls);
    let seminorm = balls.iter().map(|b| b.mean_osc).fold(0.0, f64::max);
    Ok(BmoProfile {
        map: map.name().to_string(),
        plan: plan.clone(),
        seminorm,
        modulus,
        balls,
    })
}

/// `ω(ε)` over one jittered center set, admissible at the largest `ε`, shared
/// by every scale. `eps` must be descending.
pub fn vmo_modulus(map: &MapField, domain: &Domain, eps: &[f64], seed: u64) -> Result<Vec<ScaleRecord>> {
    if eps.is_empty() || eps.windows(2).any(|w| !(w[0] > w[1])) || !(eps[eps.len() - 1] > 0.0) {
        return Err(Error::Config("ε list must be positive and strictly descending".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = jittered_centers(domain, eps[0], DEFAULT_CENTERS_PER_SCALE, true, &mut rng);
    if centers.is_empty() {
        return Err(Error::EmptyRegion(format!("no center admits ε = {}", eps[0])));
    }
    let sets = vec![centers; eps.len()];
    let balls = scale_table(map, domain, eps, &sets);
    Ok(summarize(eps, &balls))
}

/// Fraction of consecutive pairs where `ω` increases as `ε` shrinks.
pub fn modulus_inversions(table: &[ScaleRecord]) -> usize {
    table.windows(2).filter(|w| w[1].omega > w[0].omega).count()
}

/// The radial bump `η`, normalized to unit mass on its node set.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub dim: usize,
    pub eps: f64,
    offsets: Vec<f64>,
    weights: Vec<f64>,
    center_weight: f64,
}

impl Mollifier {
    pub fn new(dim: usize, eps: f64) -> Self {
        let cells = if dim <= 2 { MOLLIFY_CELLS_2D } else { MOLLIFY_CELLS_3D };
        let h = 2.0 / cells as f64;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let mut center_weight = 0.0;
        crate::quadrature::for_each_index(dim, cells, |idx| {
            let u: Vec<f64> = idx.iter().map(|&i| -1.0 + (i as f64 + 0.5) * h).collect();
            let q: f64 = u.iter().map(|v| v * v).sum();
            let w = profile(q);
            if w > 0.0 {
                if q < 1e-24 {
                    center_weight = w;
                }
                offsets.extend(u.iter().map(|v| eps * v));
                weights.push(w);
            }
        });
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Mollifier {
            dim,
            eps,
            offsets,
            weights,
            center_weight: center_weight / total,
        }
    }

    /// Share of the total mass carried by the center node.
    pub fn center_weight(&self) -> f64 {
        self.center_weight
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `Σ w_i f(x − z_i)`.
    pub fn apply<F: Fn(&[f64], &mut [f64])>(&self, f: F, m: usize, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut z = vec![0.0; self.dim];
        let mut v = vec![0.0; m];
        for (i, w) in self.weights.iter().enumerate() {
            for a in 0..self.dim {
                z[a] = x[a] - self.offsets[i * self.dim + a];
            }
            f(&z, &mut v);
            for k in 0..m {
                out[k] += w * v[k];
            }
        }
    }
}

/// `f_T`: `f` on Ω and `f(2P(x) − x)` in the tube.
#[derive(Clone, Debug)]
pub struct ExtendedField {
    map: MapField,
    domain: Domain,
}

impl ExtendedField {
    pub fn try_eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if self.domain.signed_distance(x) <= 0.0 {
            self.map.eval(x, out);
            return Ok(());
        }
        let t = self.domain.tubular_project(x)?;
        self.map.eval(&t.reflection, out);
        Ok(())
    }

    pub fn try_value(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.map.target_dim()];
        self.try_eval(x, &mut out)?;
        Ok(out)
    }

    /// As a field on ℝⁿ; beyond the tube the value at the nearest point of
    /// Ω̄ is used.
    pub fn into_field(self) -> MapField {
        let (n, m) = (self.map.source_dim(), self.map.target_dim());
        let name = format!("{}_T", self.map.name());
        let h = self.map.fd_step();
        MapField::analytic(name, n, m, move |x, o| {
            if self.try_eval(x, o).is_err() {
                self.map.eval(&clamp_to_domain(&self.domain, x), o);
            }
        })
        .with_fd_step(h)
    }
}

pub fn reflect_extend(map: &MapField, domain: &Domain) -> Result<ExtendedField> {
    if map.source_dim() != domain.dim() {
        return Err(Error::Dimension {
            expected: domain.dim(),
            found: map.source_dim(),
        });
    }
    Ok(ExtendedField {
        map: map.clone(),
        domain: domain.clone(),
    })
}

/// Nearest point of Ω̄ (nudged inside for balls).
pub fn clamp_to_domain(domain: &Domain, x: &[f64]) -> Vec<f64> {
    if domain.signed_distance(x) <= 0.0 {
        return x.to_vec();
    }
    match domain.shape() {
        Shape::Ball { center, radius } => {
            let r = dist(x, center);
            let s = radius * (1.0 - 1e-12) / r;
            x.iter().zip(center).map(|(xi, ci)| ci + s * (xi - ci)).collect()
        }
        Shape::Box { lo, hi } => x.iter().enumerate().map(|(a, v)| v.clamp(lo[a], hi[a])).collect(),
    }
}

/// `f_T * η_ε`, sampled once on the vertex grid of the domain's bounding box
/// and interpolated. Vertices outside Ω take the value at their nearest
/// point of Ω̄.
pub fn mollify(map: &MapField, domain: &Domain, eps: f64) -> Result<MapField> {
    if !(eps > 0.0) || eps >= domain.tube_width() {
        return Err(Error::OutsideTube {
            point: domain_center(domain),
            distance: eps,
            width: domain.tube_width(),
        });
    }
    let direct = mollify_direct(map, domain, eps)?;
    let grid = direct.sample_grid(domain, domain.resolution() + 1, Interpolation::Cubic)?;
    Ok(MapField::from_grid(grid).with_name(format!("{}*η[{}]", map.name(), eps)))
}

/// `f_T * η_ε` evaluated by direct convolution at every call.
pub fn mollify_direct(map: &MapField, domain: &Domain, eps: f64) -> Result<MapField> {
    if !(eps > 0.0) || eps >= domain.tube_width() {
        return Err(Error::OutsideTube {
            point: domain_center(domain),
            distance: eps,
            width: domain.tube_width(),
        });
    }
    let ext = reflect_extend(map, domain)?.into_field();
    let kernel = Mollifier::new(domain.dim(), eps);
    let d = domain.clone();
    let (n, m) = (map.source_dim(), map.target_dim());
    let h = 2.0 * eps / if n <= 2 { MOLLIFY_CELLS_2D } else { MOLLIFY_CELLS_3D } as f64;
    Ok(MapField::analytic(format!("{}*η[{}]", map.name(), eps), n, m, move |x, o| {
        let x = clamp_to_domain(&d, x);
        kernel.apply(|z, v| ext.eval(z, v), m, &x, o);
    })
    .with_fd_step(h))
}

/// `x ↦ ∮_{B_ε(x)} f`, meaningful on `Ω_ε`.
pub fn average_field(map: &MapField, domain: &Domain, eps: f64) -> Result<MapField> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("averaging radius {eps} must be positive")));
    }
    let n = domain.dim();
    let rule = UnitBallRule::for_dim(n, AVERAGE_CELLS_2D, AVERAGE_CELLS_3D);
    let cells = if n <= 2 { AVERAGE_CELLS_2D } else { AVERAGE_CELLS_3D };
    let m = map.target_dim();
    let inner = map.clone();
    let field = MapField::analytic(format!("avg[{}]_{}", map.name(), eps), n, m, move |x, o| {
        let values = rule.sample(&inner, x, eps);
        o.copy_from_slice(&rule.mean(&values, m));
    })
    .with_fd_step(2.0 * eps / cells as f64);
    Ok(match domain.inner_domain(eps) {
        Ok(d) => field.with_support(d),
        Err(_) => field,
    })
}

/// Boundary trace values kept after discarding histogram bins of negligible
/// boundary mass.
#[derive(Clone, Debug)]
pub struct EssentialRange {
    pub m: usize,
    pub bin_width: f64,
    pub cutoff: f64,
    pub total_measure: f64,
    pub excluded_elements: usize,
    kept: Vec<Vec<Vec<f64>>>,
}

impl EssentialRange {
    /// `values` holds the trace at each mesh vertex, `m` entries each.
    pub fn new(mesh: &BoundaryMesh, values: &[f64], m: usize, cutoff: f64) -> Self {
        let nv = values.len() / m;
        let value = |v: usize| &values[v * m..(v + 1) * m];
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for v in 0..nv {
            for k in 0..m {
                lo[k] = lo[k].min(value(v)[k]);
                hi[k] = hi[k].max(value(v)[k]);
            }
        }
        let diam = dist(&lo, &hi);
        let bin_width = if diam > 0.0 { diam / ESSENTIAL_BINS as f64 } else { 1.0 };
        let key = |e: usize| -> Vec<i64> {
            let el = mesh.element(e);
            (0..m)
                .map(|k| {
                    let c = el.iter().map(|&v| value(v)[k]).sum::<f64>() / el.len() as f64;
                    ((c - lo[k]) / bin_width).floor() as i64
                })
                .collect()
        };
        let keys: Vec<Vec<i64>> = (0..mesh.element_count()).map(key).collect();
        let mut mass: HashMap<&[i64], f64> = HashMap::new();
        for (e, k) in keys.iter().enumerate() {
            *mass.entry(k.as_slice()).or_insert(0.0) += mesh.measure(e);
        }
        let total_measure = mesh.total_measure();
        let mut kept = Vec::new();
        let mut excluded_elements = 0;
        for (e, k) in keys.iter().enumerate() {
            if mass[k.as_slice()] > cutoff * total_measure {
                kept.push(mesh.element(e).iter().map(|&v| value(v).to_vec()).collect());
            } else {
                excluded_elements += 1;
            }
        }
        EssentialRange {
            m,
            bin_width,
            cutoff,
            total_measure,
            excluded_elements,
            kept,
        }
    }

    pub fn from_image(image: &BoundaryImage, cutoff: f64) -> Self {
        Self::new(&image.mesh, &image.values, image.m, cutoff)
    }

    pub fn kept_elements(&self) -> usize {
        self.kept.len()
    }

    /// Distance from `p` to the kept boundary elements.
    pub fn distance(&self, p: &[f64]) -> f64 {
        self.kept
            .iter()
            .map(|el| match (el.len(), self.m) {
                (2, 2) => segment_distance(p, &el[0], &el[1]),
                (3, 3) => triangle_distance(p, &el[0], &el[1], &el[2]),
                _ => el.iter().map(|v| dist(p, v)).fold(f64::INFINITY, f64::min),
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn essential_range_distance(image: &BoundaryImage, p: &[f64], cutoff: f64) -> f64 {
    EssentialRange::from_image(image, cutoff).distance(p)
}

/// Balls touching Γ from inside: centers at dyadic depths below boundary
/// vertices, radius just under the clearance.
pub fn boundary_adjacent_balls(domain: &Domain) -> Result<Vec<(Vec<f64>, f64)>> {
    let mesh = domain.boundary_mesh(default_boundary_resolution(domain))?;
    let c = domain_center(domain);
    let nv = mesh.vertex_count();
    let count = MARGIN_MAX_VERTICES.min(nv);
    let mut balls = Vec::new();
    for i in 0..count {
        let v = mesh.vertex(i * nv / count);
        let dir: Vec<f64> = c.iter().zip(v).map(|(a, b)| a - b).collect();
        let l = norm(&dir);
        if l == 0.0 {
            continue;
        }
        for k in 0..MARGIN_DEPTH_LEVELS {
            let s = SCHEDULE_START * 0.5f64.powi(k as i32) * domain.feature_size();
            let x: Vec<f64> = v.iter().zip(&dir).map(|(vi, di)| vi + s * di / l).collect();
            let r = 0.999 * domain.clearance(&x);
            if r > 0.0 {
                balls.push((x, r));
            }
        }
    }
    Ok(balls)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    pub margin: f64,
    pub balls: usize,
    pub worst_center: Vec<f64>,
    pub worst_radius: f64,
}

/// `inf ∮_B |f − p|` over [`boundary_adjacent_balls`].
pub fn boundary_margin(map: &MapField, domain: &Domain, p: &[f64]) -> Result<MarginEstimate> {
    let balls = boundary_adjacent_balls(domain)?;
    let rule = UnitBallRule::for_dim(domain.dim(), MARGIN_CELLS_2D, MARGIN_CELLS_3D);
    let m = map.target_dim();
    let means: Vec<f64> = balls
        .par_iter()
        .map(|(x, r)| rule.mean_distance(&rule.sample(map, x, *r), m, p))
        .collect();
    let (i, margin) = means
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if balls.is_empty() {
        return Err(Error::EmptyRegion("no boundary-adjacent ball".into()));
    }
    Ok(MarginEstimate {
        margin,
        balls: balls.len(),
        worst_center: balls[i].0.clone(),
        worst_radius: balls[i].1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persistence {
    pub d0: f64,
    pub d1: f64,
    pub margins: Vec<(f64, f64)>,
    pub holds: bool,
}

/// Margins of the mollified iterates `f_T * η_ε` against `d₁ = d₀/4`.
pub fn margin_persistence(map: &MapField, domain: &Domain, p: &[f64], eps: &[f64]) -> Result<Persistence> {
    let d0 = boundary_margin(map, domain, p)?.margin;
    let d1 = 0.25 * d0;
    let margins = eps
        .iter()
        .map(|&e| Ok((e, boundary_margin(&mollify(map, domain, e)?, domain, p)?.margin)))
        .collect::<Result<Vec<_>>>()?;
    let holds = margins.iter().all(|(_, v)| *v > d1);
    Ok(Persistence { d0, d1, margins, holds })
}

pub fn default_schedule(domain: &Domain) -> Vec<f64> {
    let top = SCHEDULE_START * domain.feature_size();
    (0..SCHEDULE_LEVELS).map(|k| top * 0.5f64.powi(k as i32)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmoDegreeOptions {
    pub margin_floor: f64,
    pub boundary_resolution: Option<usize>,
}

impl Default for VmoDegreeOptions {
    fn default() -> Self {
        VmoDegreeOptions {
            margin_floor: DEFAULT_MARGIN_FLOOR,
            boundary_resolution: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub eps: f64,
    pub degree: Option<i64>,
    pub raw: Option<f64>,
    pub topological: Option<i64>,
    pub boundary_distance: f64,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmoDegreeReport {
    pub map: String,
    pub p: Vec<f64>,
    pub schedule: Vec<f64>,
    pub levels: Vec<LevelRecord>,
    pub stabilized: Option<i64>,
    pub margin: MarginEstimate,
    pub margin_floor: f64,
}

impl VmoDegreeReport {
    pub fn write_csv<W: Write>(&self, mut w: W, echo: Option<&str>) -> Result<()> {
        w.write_all(echo_lines(echo).as_bytes())?;
        let schedule: Vec<String> = self.schedule.iter().map(|s| float(*s)).collect();
        let p: Vec<String> = self.p.iter().map(|v| float(*v)).collect();
        writeln!(w, "# map {} p {} schedule {}", self.map, p.join(";"), schedule.join(";"))?;
        writeln!(
            w,
            "# margin {} floor {} stabilized {}",
            float(self.margin.margin),
            float(self.margin_floor),
            self.stabilized.map_or("none".to_string(), |v| v.to_string())
        )?;
        writeln!(w, "eps,degree,raw,topological,boundary_distance,note")?;
        for l in &self.levels {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                float(l.eps),
                l.degree.map_or(String::new(), |v| v.to_string()),
                l.raw.map_or(String::new(), float),
                l.topological.map_or(String::new(), |v| v.to_string()),
                float(l.boundary_distance),
                l.note.as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }
}

fn level_degree(map: &MapField, domain: &Domain, p: &[f64], eps: f64, opts: &VmoDegreeOptions) -> Result<LevelRecord> {
    let inner = domain.inner_domain(eps)?;
    let avg = average_field(map, domain, eps)?;
    let bres = opts.boundary_resolution.unwrap_or_else(|| {
        let d = default_boundary_resolution(&inner);
        if inner.dim() >= 3 {
            d.min(LEVEL_BOUNDARY_RESOLUTION_3D)
        } else {
            d
        }
    });
    let options = DegreeOptions {
        boundary_resolution: Some(bres),
        ..DegreeOptions::default()
    };
    let mut solver = DegreeSolver::new(&avg, &inner, options)?;
    let d = solver.image().distance(p);
    let mut record = LevelRecord {
        eps,
        degree: None,
        raw: None,
        topological: None,
        boundary_distance: d,
        note: None,
    };
    if d <= solver.clearance() {
        record.note = Some(format!("p is within the clearance {} of f̄_ε(∂Ω_ε)", solver.clearance()));
        return Ok(record);
    }
    solver.set_bump_radius(DEFAULT_BUMP_RADIUS.min(0.5 * d));
    let top = solver.topological(p)?;
    let report = solver.boundary(p)?;
    record.topological = Some(top);
    record.raw = Some(report.raw);
    if report.inconclusive {
        record.note = report.diagnostics.note;
    } else if report.value != top {
        record.note = Some(format!("pull-back {} disagrees with winding {}", report.value, top));
    } else {
        record.degree = Some(top);
    }
    Ok(record)
}

/// Degree of the ball averages `f̄_ε` on `Ω_ε` along `schedule`; the value
/// is stabilized when the last three levels agree.
pub fn vmo_degree(
    map: &MapField,
    domain: &Domain,
    p: &[f64],
    schedule: &[f64],
    opts: &VmoDegreeOptions,
) -> Result<VmoDegreeReport> {
    let n = domain.dim();
    if p.len() != n || map.source_dim() != n || map.target_dim() != n {
        return Err(Error::Dimension {
            expected: n,
            found: if p.len() != n { p.len() } else { map.target_dim() },
        });
    }
    if schedule.is_empty() {
        return Err(Error::Config("empty ε schedule".into()));
    }
    let margin = boundary_margin(map, domain, p)?;
    if !(margin.margin > opts.margin_floor) {
        return Err(Error::NoDegree {
            p: p.to_vec(),
            margin: margin.margin,
            floor: opts.margin_floor,
        });
    }
    let levels = schedule
        .iter()
        .map(|&e| level_degree(map, domain, p, e, opts))
        .collect::<Result<Vec<_>>>()?;
    let stabilized = if levels.len() >= STABLE_TAIL {
        let tail = &levels[levels.len() - STABLE_TAIL..];
        match tail[0].degree {
            Some(v) if tail.iter().all(|l| l.degree == Some(v)) => Some(v),
            _ => None,
        }
    } else {
        None
    };
    Ok(VmoDegreeReport {
        map: map.name().to_string(),
        p: p.to_vec(),
        schedule: schedule.to_vec(),
        levels,
        stabilized,
        margin,
        margin_floor: opts.margin_floor,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub degree: i64,
    pub bump_center: Vec<f64>,
    pub bump_radius: f64,
    pub eim_distance: f64,
}

/// `∫_Ω g(f)·det∇f` against `deg(f, Ω, p)·∫g` with the VMO degree at the
/// bump center.
pub fn vmo_change_of_variables_check(
    map: &MapField,
    domain: &Domain,
    bump: &Bump,
    schedule: &[f64],
    opts: &VmoDegreeOptions,
) -> Result<CovCheck> {
    let bres = opts
        .boundary_resolution
        .unwrap_or_else(|| default_boundary_resolution(domain));
    let image = BoundaryImage::of_domain(map, domain, bres)?;
    let d = essential_range_distance(&image, &bump.center, DEFAULT_MASS_CUTOFF);
    if d <= bump.radius {
        return Err(Error::Support {
            y: bump.center.clone(),
            radius: bump.radius,
            distance: d,
        });
    }
    let vmo = vmo_degree(map, domain, &bump.center, schedule, opts)?;
    let degree = vmo
        .stabilized
        .ok_or_else(|| Error::Degenerate(format!("VMO degree at {:?} did not stabilize", bump.center)))?;
    let n = domain.dim();
    let lhs = domain.integrate(|x| {
        let mut fx = [0.0; 8];
        let fx = &mut fx[..n];
        map.eval(x, fx);
        if !bump.support_contains(fx) {
            return 0.0;
        }
        bump.eval(fx) * map.jacobian_det(x)
    });
    let mass = bump.integral();
    let rhs = degree as f64 * mass;
    Ok(CovCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs() / mass,
        degree,
        bump_center: bump.center.clone(),
        bump_radius: bump.radius,
        eim_distance: d,
    })
}

/// `(|ḡ_A − ḡ_B|, (μB/μA)·∮_B|g − ḡ_B|)` for weighted samples of `g` on
/// `B` with `A` given as a mask.
pub fn lemma_ab(g: &[f64], weights: &[f64], in_a: &[bool]) -> (f64, f64) {
    let mu_b: f64 = weights.iter().sum();
    let mu_a: f64 = weights.iter().zip(in_a).filter(|(_, a)| **a).map(|(w, _)| w).sum();
    let mean_b = g.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / mu_b;
    let mean_a = g
        .iter()
        .zip(weights)
        .zip(in_a)
        .filter(|(_, a)| **a)
        .map(|((v, w), _)| v * w)
        .sum::<f64>()
        / mu_a;
    let osc_b = g.iter().zip(weights).map(|(v, w)| w * (v - mean_b).abs()).sum::<f64>() / mu_b;
    ((mean_a - mean_b).abs(), mu_b / mu_a * osc_b)
}

/// `|∮_{B_ε(x)} f(z)·ψ((x − z)/ε) dz|` with `ψ = 1 − ω_n·η`, `η` the unit-mass
/// bump; `ψ` is made exactly mean-zero on the rule.
pub fn null_kernel(map: &MapField, x: &[f64], eps: f64) -> f64 {
    let n = x.len();
    let rule = UnitBallRule::for_dim(n, AVERAGE_CELLS_2D, AVERAGE_CELLS_3D);
    let eta: Vec<f64> = (0..rule.len())
        .map(|i| profile(rule.offset(i).iter().map(|u| u * u).sum()))
        .collect();
    let mean_eta: f64 = rule.weights.iter().zip(&eta).map(|(w, e)| w * e).sum();
    let m = map.target_dim();
    let values = rule.sample(map, x, eps);
    let mut acc = vec![0.0; m];
    for i in 0..rule.len() {
        let psi = 1.0 - eta[i] / mean_eta;
        for k in 0..m {
            acc[k] += rule.weights[i] * psi * values[i * m + k];
        }
    }
    debug_assert!(unit_ball_volume(n) > 0.0);
    norm(&acc)
}

/// `sup_x` of [`null_kernel`] over the given centers.
pub fn null_kernel_sup(map: &MapField, centers: &[Vec<f64>], eps: f64) -> f64 {
    centers
        .par_iter()
        .map(|x| null_kernel(map, x, eps))
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// `∫_Ω |adj∇f − adj∇g|_F`.
pub fn adjugate_l1_distance(f: &MapField, g: &MapField, domain: &Domain) -> f64 {
    let n = domain.dim();
    domain.integrate(|x| {
        let a = adjugate(&f.jacobian_vec(x), n);
        let b = adjugate(&g.jacobian_vec(x), n);
        let d: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u - v).collect();
        frobenius(&d)
    })
}

/// `sup ∮_{B_ε(x) ∩ Ω} |f|` over balls centered on boundary vertices.
pub fn boundary_mean_abs(map: &MapField, domain: &Domain, eps: f64) -> Result<f64> {
    let mesh = domain.boundary_mesh(default_boundary_resolution(domain))?;
    let nv = mesh.vertex_count();
    let count = MARGIN_MAX_VERTICES.min(nv);
    let cells = if domain.dim() <= 2 { AVERAGE_CELLS_2D } else { AVERAGE_CELLS_3D };
    let m = map.target_dim();
    let vals: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| {
            let q = domain.ball_quadrature(mesh.vertex(i * nv / count), eps, cells);
            let total = q.measure();
            if total <= 0.0 {
                return 0.0;
            }
            let mut buf = vec![0.0; m];
            q.iter()
                .map(|(z, w)| {
                    map.eval(z, &mut buf);
                    w * norm(&buf)
                })
                .sum::<f64>()
                / total
        })
        .collect();
    Ok(vals.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapzoo::{preset, tilde_domain, tilde_f, SurfaceMap};

    fn disk(res: usize) -> Domain {
        Domain::unit_disk(res).unwrap()
    }

    fn constant() -> MapField {
        MapField::analytic("const", 2, 2, |_, o| o.copy_from_slice(&[0.3, -0.7]))
            .with_gradient(|_, g| g.fill(0.0))
    }

    fn linear() -> MapField {
        MapField::analytic("lin", 2, 2, |x, o| {
            o[0] = 2.0 * x[0] - x[1] + 0.5;
            o[1] = 0.3 * x[0] + 1.5 * x[1] - 0.2;
        })
        .with_gradient(|_, g| g.copy_from_slice(&[2.0, -1.0, 0.3, 1.5]))
    }

    #[test]
    fn mean_oscillation_examples() {
        let d = disk(64);
        let id = preset("identity", &[]).unwrap().map;
        assert_eq!(mean_oscillation(&constant(), &d, &[0.1, 0.1], 0.2).unwrap(), 0.0);
        for eps in [0.4, 0.2, 0.05] {
            let v = mean_oscillation(&id, &d, &[0.1, -0.2], eps).unwrap();
            assert!((v - 2.0 / 3.0 * eps).abs() < 1e-3, "{v}");
        }
        let angle = preset("angle", &[]).unwrap().map;
        let a = mean_oscillation(&angle, &d, &[0.0, 0.0], 0.4).unwrap();
        let b = mean_oscillation(&angle, &d, &[0.0, 0.0], 0.2).unwrap();
        assert!((a - b).abs() < 0.01 * a);
        assert!(matches!(
            mean_oscillation(&id, &d, &[0.9, 0.0], 0.2),
            Err(Error::Inadmissible { .. })
        ));
    }

    #[test]
    fn seminorm_examples() {
        let d = disk(64);
        let plan = BmoPlan::default_for(&d);
        let c = bmo_seminorm(&constant(), &d, &plan).unwrap();
        assert_eq!(c.seminorm, 0.0);
        assert!(c.balls.len() >= MIN_PLAN_BALLS);
        for b in &c.balls {
            assert!(b.eps < d.clearance(&b.center));
        }
        let angle = preset("angle", &[]).unwrap().map;
        let prof = bmo_seminorm(&angle, &d, &plan).unwrap();
        let origin = mean_oscillation(&angle, &d, &[0.0, 0.0], 0.1).unwrap();
        assert!((prof.seminorm - origin).abs() < 0.05 * origin);
        assert!(prof.seminorm <= 2.0 * 1.01);
        for s in &prof.modulus {
            assert!(s.omega <= prof.seminorm);
        }
        let thin = BmoPlan::dyadic(&d, 2, 8, 1);
        assert!(bmo_seminorm(&angle, &d, &thin).is_err());
    }

    #[test]
    fn modulus_examples() {
        let d = disk(64);
        let eps = [0.2, 0.1, 0.05, 0.025];
        let rot = preset("rotation", &[0.5]).unwrap().map;
        let t = vmo_modulus(&rot, &d, &[0.2, 0.1, 0.05, 0.025, 0.01], 3).unwrap();
        assert_eq!(modulus_inversions(&t), 0);
        assert!(t.last().unwrap().omega < 0.01);
        let angle = preset("angle", &[]).unwrap().map;
        let t = vmo_modulus(&angle, &d, &eps, 3).unwrap();
        let (lo, hi) = t
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(s.omega), b.max(s.omega)));
        assert!(lo > 0.5 && hi - lo < 0.05 * hi);
        assert!(vmo_modulus(&angle, &d, &[0.1, 0.2], 3).is_err());
    }

    #[test]
    fn mollify_examples() {
        let sq = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 64).unwrap();
        let c = mollify(&constant(), &sq, 0.05).unwrap();
        assert!(dist(&c.value(&[0.3, 0.6]), &[0.3, -0.7]) < 1e-12);
        let lin = linear();
        let ml = mollify(&lin, &sq, 0.05).unwrap();
        for x in [[0.3, 0.6], [0.5, 0.5], [0.123, 0.877], [0.9, 0.2]] {
            assert!(dist(&ml.value(&x), &lin.value(&x)) < 1e-6);
        }
        assert!(mollify(&lin, &sq, 0.2).is_err());
        let d = disk(64);
        let spike = preset("spike", &[]).unwrap().map;
        let k = Mollifier::new(2, 0.05);
        let direct = mollify_direct(&spike, &d, 0.05).unwrap();
        let peak = direct.value(&[0.0, 0.0])[0];
        assert!(peak > 0.0 && peak <= 10.0 * k.center_weight() * (1.0 + 1e-9));
        assert!(k.center_weight() < 0.05);
    }

    #[test]
    fn average_examples() {
        let d = disk(64);
        let avg = average_field(&constant(), &d, 0.1).unwrap();
        assert!(dist(&avg.value(&[0.2, 0.2]), &[0.3, -0.7]) < 1e-12);
        let avg = average_field(&linear(), &d, 0.1).unwrap();
        assert!(dist(&avg.value(&[0.2, 0.3]), &linear().value(&[0.2, 0.3])) < 1e-12);
        let angle = preset("angle", &[]).unwrap().map;
        let avg = average_field(&angle, &d, 0.1).unwrap();
        assert!(norm(&avg.value(&[0.0, 0.0])) < 1e-12);
    }

    #[test]
    fn reflection_examples() {
        let sq = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 64).unwrap();
        let id = preset("identity", &[]).unwrap().map;
        let ext = reflect_extend(&id, &sq).unwrap();
        assert!(dist(&ext.try_value(&[0.5, 1.01]).unwrap(), &[0.5, 0.99]) < 1e-12);
        assert_eq!(ext.try_value(&[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
        assert!(matches!(ext.try_value(&[0.5, 1.5]), Err(Error::OutsideTube { .. })));
    }

    #[test]
    fn essential_range_examples() {
        let d = disk(64);
        let id = preset("identity", &[]).unwrap().map;
        let image = BoundaryImage::of_domain(&id, &d, 1024).unwrap();
        assert!((essential_range_distance(&image, &[0.0, 0.0], DEFAULT_MASS_CUTOFF) - 1.0).abs() < 1e-4);
        assert!((essential_range_distance(&image, &[2.0, 0.0], DEFAULT_MASS_CUTOFF) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vmo_degree_examples() {
        let d = disk(64);
        let id = preset("identity", &[]).unwrap().map;
        let r = vmo_degree(&id, &d, &[0.0, 0.0], &[0.2, 0.1, 0.05, 0.025], &VmoDegreeOptions::default()).unwrap();
        assert!(r.levels.iter().all(|l| l.degree == Some(1)));
        assert_eq!(r.stabilized, Some(1));
        let z2 = preset("zpow", &[2.0]).unwrap().map;
        let r = vmo_degree(&z2, &d, &[0.25, 0.0], &default_schedule(&d), &VmoDegreeOptions::default()).unwrap();
        assert_eq!(r.stabilized, Some(2));
        assert!(matches!(
            vmo_degree(&id, &d, &[1.0, 0.0], &default_schedule(&d), &VmoDegreeOptions::default()),
            Err(Error::NoDegree { .. })
        ));
    }

    #[test]
    fn flat_sheet_vmo_degree() {
        let base = Domain::boxed(&[-1.0, -1.0], &[1.0, 1.0], 16).unwrap();
        let dom = tilde_domain(&base, 0.5).unwrap();
        let f = tilde_f(&SurfaceMap::flat_sheet(), 0.5).unwrap();
        let r = vmo_degree(&f, &dom, &[0.1, -0.2, 0.05], &[0.1, 0.05, 0.025], &VmoDegreeOptions::default()).unwrap();
        assert_eq!(r.stabilized, Some(1), "{r:#?}");
    }

    #[test]
    fn lemma_ab_holds_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(4..64);
            let g: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let w: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..1.0)).collect();
            let mut a: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.4)).collect();
            a[0] = true;
            let (lhs, rhs) = lemma_ab(&g, &w, &a);
            assert!(lhs <= rhs + 1e-9);
        }
    }
}
