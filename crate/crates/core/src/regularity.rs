//! `E(f, Ω)` rasters, `F(a)` sets, essential oscillation, the sphere
//! oscillation inequalities and the continuity classifier.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::degree::{default_boundary_resolution, segment_distance, triangle_distance, BoundaryImage};
use crate::domain::{unit_sphere_area, Domain};
use crate::error::{Error, Result};
use crate::fields::{default_sphere_resolution, diameter, sphere_trace, Backing, MapField};
use crate::linalg::{det, dist, dot, frobenius, solve};
use crate::quadrature::for_each_index;
use crate::report::{echo_lines, float, opt_float};

pub const DEFAULT_TRIM: f64 = 1e-3;
pub const MIN_SAMPLES: usize = 8;
/// Lattice nodes per radius for ball samples.
pub const SAMPLES_PER_RADIUS_2D: usize = 16;
pub const SAMPLES_PER_RADIUS_3D: usize = 8;
/// Slack factor for `eosc ≤ 2·osc`.
pub const EOSC_SLACK: f64 = 1.05;
/// `tol_abs = TOL_FACTOR · grid modulus`.
pub const TOL_FACTOR: f64 = 10.0;
pub const ENERGY_CELLS: usize = 32;

/// Degree raster over a y-window. Cells are cubes of side `cell`, stored
/// row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ESetRaster {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub cell: f64,
    pub counts: Vec<usize>,
    pub degrees: Vec<i64>,
    /// Cells within `flag_distance` of the boundary image.
    pub boundary: Vec<bool>,
    pub flag_distance: f64,
}

impl ESetRaster {
    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn multi_index(&self, i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        let mut rest = i;
        for a in (0..self.dim).rev() {
            idx[a] = rest % self.counts[a];
            rest /= self.counts[a];
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (i, c)| acc * c + i)
    }

    pub fn center(&self, i: usize) -> Vec<f64> {
        self.multi_index(i)
            .iter()
            .zip(&self.lo)
            .map(|(&k, lo)| lo + (k as f64 + 0.5) * self.cell)
            .collect()
    }

    /// Cell containing `y`, if inside the window.
    pub fn locate(&self, y: &[f64]) -> Option<usize> {
        let mut idx = vec![0; self.dim];
        for a in 0..self.dim {
            let t = ((y[a] - self.lo[a]) / self.cell).floor();
            if t < 0.0 || t >= self.counts[a] as f64 {
                return None;
            }
            idx[a] = t as usize;
        }
        Some(self.linear_index(&idx))
    }

    pub fn in_e(&self, i: usize) -> bool {
        self.boundary[i] || self.degrees[i] >= 1
    }

    /// `E = f(Γ) ∪ {deg ≥ 1}` as a cell mask.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.in_e(i)).collect()
    }

    pub fn e_diameter(&self) -> f64 {
        self.mask_diameter(&self.mask())
    }

    /// Largest distance between centers of masked cells.
    pub fn mask_diameter(&self, mask: &[bool]) -> f64 {
        // Extreme pairs lie on the rim of the mask.
        let mut rim = Vec::new();
        for i in 0..self.len() {
            if !mask[i] {
                continue;
            }
            let idx = self.multi_index(i);
            let mut interior = true;
            'axes: for a in 0..self.dim {
                for s in [-1isize, 1] {
                    let k = idx[a] as isize + s;
                    if k < 0 || k >= self.counts[a] as isize {
                        interior = false;
                        break 'axes;
                    }
                    let mut nb = idx.clone();
                    nb[a] = k as usize;
                    if !mask[self.linear_index(&nb)] {
                        interior = false;
                        break 'axes;
                    }
                }
            }
            if !interior {
                rim.extend(self.center(i));
            }
        }
        if self.dim == 2 {
            let hull = convex_hull(&rim);
            diameter(&hull, 2)
        } else {
            diameter(&rim, self.dim)
        }
    }

    /// Number of masked cells of `self` farther than `slack` cells
    /// (Chebyshev) from every masked cell of `other`. Both rasters must share
    /// a grid.
    pub fn containment_violations(&self, other: &ESetRaster, slack: usize) -> Result<usize> {
        if self.counts != other.counts || self.lo != other.lo || self.cell != other.cell {
            return Err(Error::Config("rasters do not share a grid".into()));
        }
        let a = self.mask();
        let b = dilate(other, &other.mask(), slack);
        Ok(a.iter().zip(&b).filter(|(x, y)| **x && !**y).count())
    }

    /// Binary PGM (2D only): degree + 128 clamped to [0, 254], boundary 255.
    /// Rows run from the top of the window (largest second coordinate).
    pub fn write_pgm<W: Write>(&self, mut w: W, echo: Option<&str>) -> Result<()> {
        if self.dim != 2 {
            return Err(Error::Config("PGM export needs a 2D raster".into()));
        }
        let (nx, ny) = (self.counts[0], self.counts[1]);
        let mut out = format!("P5\n{}{} {}\n255\n", echo_lines(echo), nx, ny).into_bytes();
        for j in (0..ny).rev() {
            for i in 0..nx {
                let c = i * ny + j;
                out.push(if self.boundary[c] {
                    255
                } else {
                    (self.degrees[c] + 128).clamp(0, 254) as u8
                });
            }
        }
        w.write_all(&out)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W, echo: Option<&str>) -> Result<()> {
        let mut s = echo_lines(echo);
        let axes: Vec<String> = (1..=self.dim).map(|a| format!("y{a}")).collect();
        s.push_str(&format!("{},degree,boundary,in_e\n", axes.join(",")));
        for i in 0..self.len() {
            for c in self.center(i) {
                s.push_str(&float(c));
                s.push(',');
            }
            s.push_str(&format!("{},{},{}\n", self.degrees[i], self.boundary[i] as u8, self.in_e(i) as u8));
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }
}

fn dilate(r: &ESetRaster, mask: &[bool], slack: usize) -> Vec<bool> {
    if slack == 0 {
        return mask.to_vec();
    }
    let mut out = vec![false; mask.len()];
    let width = 2 * slack + 1;
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let idx = r.multi_index(i);
        for_each_index(r.dim, width, |off| {
            let mut nb = vec![0; r.dim];
            for a in 0..r.dim {
                let k = idx[a] as isize + off[a] as isize - slack as isize;
                if k < 0 || k >= r.counts[a] as isize {
                    return;
                }
                nb[a] = k as usize;
            }
            out[r.linear_index(&nb)] = true;
        });
    }
    out
}

/// Monotone-chain convex hull of 2D points (flat pairs).
fn convex_hull(points: &[f64]) -> Vec<f64> {
    let mut pts: Vec<[f64; 2]> = points.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
    if pts.len() < 3 {
        return points.to_vec();
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let turn = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull.into_iter().flatten().collect()
}

/// Rasterizes the degree of a boundary image on the given grid.
pub fn rasterize(image: &BoundaryImage, lo: &[f64], cell: f64, counts: &[usize]) -> ESetRaster {
    let n = image.m;
    let total: usize = counts.iter().product();
    let flag_distance = image.max_edge().max(0.5 * cell * (n as f64).sqrt());
    let mut r = ESetRaster {
        dim: n,
        lo: lo.to_vec(),
        cell,
        counts: counts.to_vec(),
        degrees: vec![0; total],
        boundary: vec![false; total],
        flag_distance,
    };

    let mesh = &image.mesh;
    for e in 0..mesh.element_count() {
        let el = mesh.element(e);
        let mut range = Vec::with_capacity(n);
        for a in 0..n {
            let vmin = el.iter().map(|&v| image.value(v)[a]).fold(f64::INFINITY, f64::min) - flag_distance;
            let vmax = el.iter().map(|&v| image.value(v)[a]).fold(f64::NEG_INFINITY, f64::max) + flag_distance;
            let k0 = ((vmin - lo[a]) / cell - 0.5).floor().max(0.0) as usize;
            let k1 = (((vmax - lo[a]) / cell - 0.5).ceil().max(-1.0) as isize).min(counts[a] as isize - 1);
            if k1 < k0 as isize {
                range.clear();
                break;
            }
            range.push((k0, k1 as usize));
        }
        if range.len() != n {
            continue;
        }
        let width: Vec<usize> = range.iter().map(|(a, b)| b - a + 1).collect();
        let mut idx = vec![0; n];
        let cells: usize = width.iter().product();
        for c in 0..cells {
            let mut rest = c;
            for a in (0..n).rev() {
                idx[a] = range[a].0 + rest % width[a];
                rest /= width[a];
            }
            let i = r.linear_index(&idx);
            if r.boundary[i] {
                continue;
            }
            let y = r.center(i);
            let d = if el.len() == 2 {
                segment_distance(&y, image.value(el[0]), image.value(el[1]))
            } else {
                triangle_distance(&y, image.value(el[0]), image.value(el[1]), image.value(el[2]))
            };
            if d <= flag_distance {
                r.boundary[i] = true;
            }
        }
    }

    if n == 2 {
        // Scanline crossing count: a ray to +∞ along the first axis.
        let (nx, ny) = (counts[0], counts[1]);
        let columns: Vec<Vec<i64>> = (0..ny)
            .into_par_iter()
            .map(|j| {
                let yy = lo[1] + (j as f64 + 0.5) * cell;
                let mut xs: Vec<(f64, i64)> = Vec::new();
                for e in 0..mesh.element_count() {
                    let el = mesh.element(e);
                    let (a, b) = (image.value(el[0]), image.value(el[1]));
                    let s = if a[1] <= yy && b[1] > yy {
                        1
                    } else if b[1] <= yy && a[1] > yy {
                        -1
                    } else {
                        continue;
                    };
                    let xc = a[0] + (yy - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                    xs.push((xc, s));
                }
                xs.sort_by(|p, q| p.0.total_cmp(&q.0));
                let mut remaining: i64 = xs.iter().map(|p| p.1).sum();
                let mut k = 0;
                (0..nx)
                    .map(|i| {
                        let x = lo[0] + (i as f64 + 0.5) * cell;
                        while k < xs.len() && xs[k].0 <= x {
                            remaining -= xs[k].1;
                            k += 1;
                        }
                        remaining
                    })
                    .collect()
            })
            .collect();
        for (j, col) in columns.iter().enumerate() {
            for (i, d) in col.iter().enumerate() {
                r.degrees[i * ny + j] = *d;
            }
        }
    } else {
        let centers: Vec<usize> = (0..total).filter(|&i| !r.boundary[i]).collect();
        let values: Vec<i64> = centers.par_iter().map(|&i| image.degree_at(&r.center(i))).collect();
        for (i, v) in centers.into_iter().zip(values) {
            r.degrees[i] = v;
        }
    }
    r
}

/// Grid covering `[lo, hi]` padded by `pad`, with `resolution` cells along
/// the longest side.
fn window_grid(lo: &[f64], hi: &[f64], pad: f64, resolution: usize) -> (Vec<f64>, f64, Vec<usize>) {
    let extent = lo.iter().zip(hi).map(|(a, b)| b - a + 2.0 * pad).fold(0.0, f64::max).max(1e-12);
    let cell = extent / resolution as f64;
    let counts = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| (((b - a + 2.0 * pad) / cell).ceil() as usize).max(1))
        .collect();
    (lo.iter().map(|a| a - pad).collect(), cell, counts)
}

/// `E(f, Ω)` over `window` (expanded to cover the boundary image) with
/// `y_resolution` cells along its longest side.
pub fn degree_region(
    map: &MapField,
    domain: &Domain,
    window: Option<(Vec<f64>, Vec<f64>)>,
    y_resolution: usize,
    boundary_resolution: Option<usize>,
) -> Result<ESetRaster> {
    let n = domain.dim();
    if map.source_dim() != n || map.target_dim() != n {
        return Err(Error::Dimension {
            expected: n,
            found: map.target_dim(),
        });
    }
    if y_resolution < crate::domain::MIN_RESOLUTION {
        return Err(Error::Config(format!("y resolution {y_resolution} below the minimum")));
    }
    let image = BoundaryImage::of_domain(
        map,
        domain,
        boundary_resolution.unwrap_or_else(|| default_boundary_resolution(domain)),
    )?;
    let (mut lo, mut hi) = image.bounding_box();
    if let Some((wlo, whi)) = window {
        for a in 0..n {
            lo[a] = lo[a].min(wlo[a]);
            hi[a] = hi[a].max(whi[a]);
        }
    }
    let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let pad = image.max_edge() + 2.0 * extent / y_resolution as f64;
    let (lo, cell, counts) = window_grid(&lo, &hi, pad, y_resolution);
    Ok(rasterize(&image, &lo, cell, &counts))
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct FSetOptions {
    pub y_resolution: usize,
    /// Sphere mesh resolution; `None` picks 1024 (n=2) or 64 (n=3).
    pub sphere_resolution: Option<usize>,
    pub slack_cells: usize,
}

impl Default for FSetOptions {
    fn default() -> Self {
        FSetOptions {
            y_resolution: 256,
            sphere_resolution: None,
            slack_cells: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadiusRecord {
    pub radius: f64,
    pub osc_sphere: f64,
    pub diam_e: f64,
    /// Cells of this raster outside the previous (larger) one.
    pub nest_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FSetReport {
    pub a: Vec<f64>,
    pub radii: Vec<f64>,
    pub per_radius: Vec<RadiusRecord>,
    pub cell: f64,
    pub diam_f: f64,
    pub empty: bool,
    #[serde(skip)]
    pub rasters: Vec<ESetRaster>,
    #[serde(skip)]
    pub intersection: Vec<bool>,
}

impl FSetReport {
    pub fn nest_violations(&self) -> usize {
        self.per_radius.iter().map(|r| r.nest_violations).sum()
    }
}

fn check_radii(domain: &Domain, a: &[f64], radii: &[f64]) -> Result<()> {
    if radii.is_empty() {
        return Err(Error::Config("radius list is empty".into()));
    }
    if radii.windows(2).any(|w| !(w[0] > w[1])) || !(radii[radii.len() - 1] > 0.0) {
        return Err(Error::Config(format!("radii {radii:?} must be positive and strictly descending")));
    }
    let clearance = domain.clearance(a);
    if radii[0] >= clearance {
        return Err(Error::BallOutsideDomain {
            center: a.to_vec(),
            radius: radii[0],
            clearance,
        });
    }
    Ok(())
}

/// `F(a) = ⋂_ρ E(f, B_ρ(a))` on a common y-grid.
pub fn f_set(map: &MapField, domain: &Domain, a: &[f64], radii: &[f64], options: &FSetOptions) -> Result<FSetReport> {
    check_radii(domain, a, radii)?;
    let n = domain.dim();
    let sres = options
        .sphere_resolution
        .unwrap_or(if n == 2 { 1024 } else { 64 });
    let images: Vec<BoundaryImage> = radii
        .iter()
        .map(|&r| Ok(BoundaryImage::new(map, domain.sphere_mesh(a, r, sres)?)))
        .collect::<Result<_>>()?;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut edge: f64 = 0.0;
    for im in &images {
        let (l, h) = im.bounding_box();
        for k in 0..n {
            lo[k] = lo[k].min(l[k]);
            hi[k] = hi[k].max(h[k]);
        }
        edge = edge.max(im.max_edge());
    }
    let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max).max(1e-9);
    let pad = edge + 2.0 * extent / options.y_resolution as f64;
    let (glo, cell, counts) = window_grid(&lo, &hi, pad, options.y_resolution);
    let rasters: Vec<ESetRaster> = images.iter().map(|im| rasterize(im, &glo, cell, &counts)).collect();

    let mut intersection = rasters[0].mask();
    for r in &rasters[1..] {
        for (x, y) in intersection.iter_mut().zip(r.mask()) {
            *x &= y;
        }
    }
    let mut per_radius = Vec::new();
    for (k, (r, im)) in rasters.iter().zip(&images).enumerate() {
        let nest = if k == 0 {
            0
        } else {
            r.containment_violations(&rasters[k - 1], options.slack_cells)?
        };
        per_radius.push(RadiusRecord {
            radius: radii[k],
            osc_sphere: diameter(&im.values, n),
            diam_e: r.e_diameter(),
            nest_violations: nest,
        });
    }
    let empty = !intersection.iter().any(|&b| b);
    let diam_f = if empty { 0.0 } else { rasters[0].mask_diameter(&intersection) };
    Ok(FSetReport {
        a: a.to_vec(),
        radii: radii.to_vec(),
        per_radius,
        cell,
        diam_f,
        empty,
        rasters,
        intersection,
    })
}

/// Values of `map` at lattice nodes `center + h·k` inside `B_r(center) ∩ Ω`,
/// center included. Returns `(points, values)` flattened.
pub fn ball_samples(map: &MapField, domain: &Domain, center: &[f64], r: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = center.len();
    let per = if n == 2 { SAMPLES_PER_RADIUS_2D } else { SAMPLES_PER_RADIUS_3D };
    let h = r / per as f64;
    let m = map.target_dim();
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut x = vec![0.0; n];
    let mut v = vec![0.0; m];
    for_each_index(n, 2 * per + 1, |k| {
        for a in 0..n {
            x[a] = center[a] + h * (k[a] as f64 - per as f64);
        }
        if dist(&x, center) < r && domain.contains(&x) {
            map.eval(&x, &mut v);
            points.extend_from_slice(&x);
            values.extend_from_slice(&v);
        }
    });
    if values.len() / m < MIN_SAMPLES {
        return Err(Error::Resolution(format!(
            "{} samples in B_{r}({center:?}) ∩ Ω, need {MIN_SAMPLES}",
            values.len() / m
        )));
    }
    Ok((points, values))
}

/// Diameter after greedily removing `ceil(δ·N)` points, each time dropping
/// the endpoint of the current diameter pair whose removal shrinks the
/// diameter more.
pub fn trimmed_diameter(values: &[f64], m: usize, delta: f64) -> f64 {
    let count = values.len() / m;
    let k = (delta * count as f64).ceil() as usize;
    let mut alive: Vec<bool> = vec![true; count];
    let pt = |i: usize| &values[i * m..(i + 1) * m];
    let farthest = |alive: &[bool]| -> (f64, usize, usize) {
        let mut best = (-1.0, 0, 0);
        for i in 0..count {
            if !alive[i] {
                continue;
            }
            for j in i + 1..count {
                if alive[j] {
                    let d = dist(pt(i), pt(j));
                    if d > best.0 {
                        best = (d, i, j);
                    }
                }
            }
        }
        best
    };
    for _ in 0..k.min(count.saturating_sub(2)) {
        let (_, i, j) = farthest(&alive);
        alive[i] = false;
        let without_i = farthest(&alive).0;
        alive[i] = true;
        alive[j] = false;
        let without_j = farthest(&alive).0;
        alive[j] = true;
        alive[if without_i <= without_j { i } else { j }] = false;
    }
    farthest(&alive).0.max(0.0)
}

/// `eosc_{B_r(x)} f`, approximated by the `δ`-trimmed sample diameter.
pub fn essential_oscillation(map: &MapField, domain: &Domain, center: &[f64], r: f64, delta: f64) -> Result<f64> {
    if !(0.0..0.1).contains(&delta) {
        return Err(Error::Config(format!("trim fraction {delta} not in [0, 0.1)")));
    }
    let (_, values) = ball_samples(map, domain, center, r)?;
    Ok(trimmed_diameter(&values, map.target_dim(), delta))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EoscBound {
    pub eosc: f64,
    pub osc_sphere: f64,
    pub holds: bool,
    pub samples: usize,
    /// Ball samples with `det ∇f < 0`.
    pub negative_det: usize,
}

/// `eosc_{B_r} f ≤ 2·osc_{S_r} f` (with [`EOSC_SLACK`]).
pub fn eosc_bound_check(map: &MapField, domain: &Domain, x: &[f64], r: f64, delta: f64) -> Result<EoscBound> {
    let n = domain.dim();
    let (points, values) = ball_samples(map, domain, x, r)?;
    let eosc = trimmed_diameter(&values, map.target_dim(), delta);
    let trace = sphere_trace(map, domain, x, r, default_sphere_resolution(n))?;
    let osc_sphere = trace.oscillation();
    let negative_det = negative_det_count(map, &points, n);
    Ok(EoscBound {
        eosc,
        osc_sphere,
        holds: eosc <= 2.0 * osc_sphere * EOSC_SLACK,
        samples: points.len() / n,
        negative_det,
    })
}

fn negative_det_count(map: &MapField, points: &[f64], n: usize) -> usize {
    if map.target_dim() != n {
        return 0;
    }
    points
        .chunks_exact(n)
        .filter(|p| det(&map.jacobian_vec(p), n) < -1e-12)
        .count()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MorreyCheck {
    pub osc_n: f64,
    pub rhs: f64,
    /// `osc_n / rhs`, 0 when both vanish.
    pub ratio: f64,
}

/// `(osc_{S_r} f)ⁿ` against `r·∫_{S_r}|df|ⁿ dσ`.
pub fn morrey_sphere_check(map: &MapField, domain: &Domain, a: &[f64], r: f64) -> Result<MorreyCheck> {
    let n = domain.dim();
    let trace = sphere_trace(map, domain, a, r, default_sphere_resolution(n))?;
    let osc_n = trace.oscillation().powi(n as i32);
    let rhs = r * trace.energy(n as f64);
    let ratio = if rhs > 0.0 {
        osc_n / rhs
    } else if osc_n == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MorreyCheck { osc_n, rhs, ratio })
}

/// Smallest enclosing ball of a point cloud (Welzl, move-to-front).
pub fn enclosing_ball(points: &[f64], m: usize) -> (Vec<f64>, f64) {
    let mut pts: Vec<Vec<f64>> = points.chunks_exact(m).map(|p| p.to_vec()).collect();
    if pts.is_empty() {
        return (vec![0.0; m], 0.0);
    }
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(0x5eb));
    let end = pts.len();
    let mut support = Vec::new();
    let (c, r2) = mtf(&mut pts, end, &mut support, m);
    (c, r2.max(0.0).sqrt())
}

fn inside(c: &[f64], r2: f64, p: &[f64]) -> bool {
    if r2 < 0.0 {
        return false;
    }
    let d2: f64 = c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    d2 <= r2 * (1.0 + 1e-12) + 1e-30
}

fn mtf(pts: &mut Vec<Vec<f64>>, end: usize, support: &mut Vec<Vec<f64>>, m: usize) -> (Vec<f64>, f64) {
    let mut ball = circumball(support, m);
    if support.len() == m + 1 {
        return ball;
    }
    let mut i = 0;
    while i < end {
        if !inside(&ball.0, ball.1, &pts[i]) {
            support.push(pts[i].clone());
            ball = mtf(pts, i, support, m);
            support.pop();
            let p = pts.remove(i);
            pts.insert(0, p);
        }
        i += 1;
    }
    ball
}

/// Smallest ball with all support points on its boundary; squared radius
/// is negative for an empty support.
fn circumball(support: &[Vec<f64>], m: usize) -> (Vec<f64>, f64) {
    match support.len() {
        0 => (vec![0.0; m], -1.0),
        1 => (support[0].clone(), 0.0),
        k => {
            let p0 = &support[0];
            let diffs: Vec<Vec<f64>> = support[1..]
                .iter()
                .map(|p| p.iter().zip(p0).map(|(a, b)| a - b).collect())
                .collect();
            let mut a = vec![0.0; (k - 1) * (k - 1)];
            let mut b = vec![0.0; k - 1];
            for i in 0..k - 1 {
                for j in 0..k - 1 {
                    a[i * (k - 1) + j] = 2.0 * dot(&diffs[i], &diffs[j]);
                }
                b[i] = dot(&diffs[i], &diffs[i]);
            }
            match solve(&a, &b, k - 1) {
                Some(l) => {
                    let mut c = p0.clone();
                    for (li, d) in l.iter().zip(&diffs) {
                        for t in 0..m {
                            c[t] += li * d[t];
                        }
                    }
                    let r2 = c.iter().zip(p0).map(|(x, y)| (x - y) * (x - y)).sum();
                    (c, r2)
                }
                None => {
                    // Degenerate support: ball on the farthest pair.
                    let mut best = (0.0, 0, 0);
                    for i in 0..k {
                        for j in i + 1..k {
                            let d = dist(&support[i], &support[j]);
                            if d > best.0 {
                                best = (d, i, j);
                            }
                        }
                    }
                    let c = support[best.1]
                        .iter()
                        .zip(&support[best.2])
                        .map(|(x, y)| 0.5 * (x + y))
                        .collect();
                    (c, 0.25 * best.0 * best.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetractReport {
    pub fraction: f64,
    pub hull_center: Vec<f64>,
    pub hull_radius: f64,
    pub samples: usize,
    pub negative_det: usize,
    pub note: Option<String>,
}

/// Fraction of ball samples mapped outside the smallest ball containing
/// `f(S_r(x))`.
pub fn retract_violation_measure(map: &MapField, domain: &Domain, x: &[f64], r: f64) -> Result<RetractReport> {
    let n = domain.dim();
    let m = map.target_dim();
    let trace = sphere_trace(map, domain, x, r, default_sphere_resolution(n))?;
    let (c, radius) = enclosing_ball(&trace.values, m);
    let (points, values) = ball_samples(map, domain, x, r)?;
    let count = values.len() / m;
    let scale = radius.max(1e-300);
    let outside = values
        .chunks_exact(m)
        .filter(|v| dist(v, &c) > radius + 1e-9 * scale)
        .count();
    let negative_det = negative_det_count(map, &points, n);
    Ok(RetractReport {
        fraction: outside as f64 / count as f64,
        hull_center: c,
        hull_radius: radius,
        samples: count,
        negative_det,
        note: (negative_det > 0).then(|| format!("det ∇f < 0 at {negative_det} of {count} samples")),
    })
}

/// Median jump between axis-adjacent samples: the grid's own samples for
/// grid maps, otherwise values at the domain's cell centers.
pub fn grid_modulus(map: &MapField, domain: &Domain) -> f64 {
    let mut jumps = match map.backing() {
        Backing::Grid(g) => g.adjacent_jumps(),
        Backing::Analytic { .. } => {
            let n = domain.dim();
            let res = domain.resolution();
            let (lo, _) = domain.bounding_box();
            let h = domain.cell_size();
            let total = res.pow(n as u32);
            let values: Vec<Option<Vec<f64>>> = (0..total)
                .into_par_iter()
                .map(|i| {
                    let mut x = vec![0.0; n];
                    let mut rest = i;
                    for a in (0..n).rev() {
                        x[a] = lo[a] + ((rest % res) as f64 + 0.5) * h[a];
                        rest /= res;
                    }
                    domain.contains(&x).then(|| map.value(&x))
                })
                .collect();
            let mut jumps = Vec::new();
            let mut stride = 1;
            for _ in 0..n {
                for i in 0..total {
                    if (i / stride) % res == res - 1 {
                        continue;
                    }
                    if let (Some(a), Some(b)) = (&values[i], &values[i + stride]) {
                        jumps.push(dist(a, b));
                    }
                }
                stride *= res;
            }
            jumps
        }
    };
    if jumps.is_empty() {
        return 0.0;
    }
    jumps.sort_by(f64::total_cmp);
    jumps[jumps.len() / 2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Continuous,
    Suspect,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ContinuityOptions {
    /// Descending geometric schedule, at least 4 levels.
    pub radii: Vec<f64>,
    pub trim: f64,
    /// `None` means `TOL_FACTOR ×` [`grid_modulus`].
    pub tol_abs: Option<f64>,
    /// Also compute `diam F(x)` per point.
    pub f_set: Option<FSetOptions>,
}

impl Default for ContinuityOptions {
    fn default() -> Self {
        ContinuityOptions {
            radii: vec![0.08, 0.04, 0.02, 0.01],
            trim: DEFAULT_TRIM,
            tol_abs: None,
            f_set: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointRecord {
    pub x: Vec<f64>,
    /// `None` where the sphere leaves the domain.
    pub osc_sphere: Vec<Option<f64>>,
    pub eosc: Vec<f64>,
    /// `∫_{B_{2r}(x) ∩ Ω} |∇f|ⁿ`.
    pub energy: Vec<f64>,
    pub diam_f: Option<f64>,
    pub classification: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OscillationProfile {
    pub radii: Vec<f64>,
    pub trim: f64,
    pub grid_modulus: f64,
    pub tol_abs: f64,
    pub rule: String,
    pub records: Vec<PointRecord>,
}

pub const CONTINUITY_RULE: &str =
    "continuous iff eosc(r_min) < tol_abs, energy(r_min) <= energy(r_max)*r_min/r_max and diam F < tol_abs when computed";

impl OscillationProfile {
    pub fn suspects(&self) -> impl Iterator<Item = &PointRecord> {
        self.records
            .iter()
            .filter(|r| r.classification == Classification::Suspect)
    }

    /// One row per point × radius.
    pub fn write_csv<W: Write>(&self, mut w: W, echo: Option<&str>) -> Result<()> {
        let mut s = echo_lines(echo);
        s.push_str(&format!(
            "# grid_modulus={} tol_abs={} trim={}\n# {}\n",
            float(self.grid_modulus),
            float(self.tol_abs),
            float(self.trim),
            self.rule
        ));
        let n = self.records.first().map_or(2, |r| r.x.len());
        let axes: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
        s.push_str(&format!(
            "point,{},radius,osc_sphere,eosc,energy,diam_f,classification\n",
            axes.join(",")
        ));
        for (p, rec) in self.records.iter().enumerate() {
            for (k, r) in self.radii.iter().enumerate() {
                let xs: Vec<String> = rec.x.iter().map(|v| float(*v)).collect();
                s.push_str(&format!(
                    "{p},{},{},{},{},{},{},{}\n",
                    xs.join(","),
                    float(*r),
                    opt_float(rec.osc_sphere[k]),
                    float(rec.eosc[k]),
                    float(rec.energy[k]),
                    opt_float(rec.diam_f),
                    match rec.classification {
                        Classification::Continuous => "continuous",
                        Classification::Suspect => "suspect",
                    }
                ));
            }
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Classifies each sample point as continuous or suspect from its
/// oscillation and energy decay across the radius schedule.
pub fn continuity_scan(
    map: &MapField,
    domain: &Domain,
    points: &[Vec<f64>],
    options: &ContinuityOptions,
) -> Result<OscillationProfile> {
    let radii = &options.radii;
    if radii.len() < 4 {
        return Err(Error::Config("the radius schedule needs at least 4 levels".into()));
    }
    if radii.windows(2).any(|w| !(w[0] > w[1])) || !(radii[radii.len() - 1] > 0.0) {
        return Err(Error::Config(format!("radii {radii:?} must be positive and strictly descending")));
    }
    let n = domain.dim();
    let modulus = grid_modulus(map, domain);
    let tol_abs = options.tol_abs.unwrap_or(TOL_FACTOR * modulus);
    let records: Vec<PointRecord> = points
        .par_iter()
        .map(|x| -> Result<PointRecord> {
            let mut osc = Vec::new();
            let mut eosc = Vec::new();
            let mut energy = Vec::new();
            for &r in radii {
                osc.push(
                    sphere_trace(map, domain, x, r, default_sphere_resolution(n))
                        .ok()
                        .map(|t| t.oscillation()),
                );
                eosc.push(essential_oscillation(map, domain, x, r, options.trim)?);
                let q = domain.ball_quadrature(x, 2.0 * r, ENERGY_CELLS);
                energy.push(q.integrate(|p| frobenius(&map.jacobian_vec(p)).powi(n as i32)));
            }
            let diam_f = match &options.f_set {
                Some(fo) if domain.clearance(x) > radii[0] => Some(f_set(map, domain, x, radii, fo)?.diam_f),
                _ => None,
            };
            let last = radii.len() - 1;
            let decays = energy[last] <= energy[0] * radii[last] / radii[0] + 1e-300;
            let small = eosc[last] < tol_abs && diam_f.is_none_or(|d| d < tol_abs);
            Ok(PointRecord {
                x: x.clone(),
                osc_sphere: osc,
                eosc,
                energy,
                diam_f,
                classification: if small && decays {
                    Classification::Continuous
                } else {
                    Classification::Suspect
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(OscillationProfile {
        radii: radii.clone(),
        trim: options.trim,
        grid_modulus: modulus,
        tol_abs,
        rule: CONTINUITY_RULE.to_string(),
        records,
    })
}

pub const ANNULUS_RADIAL_STEPS: usize = 256;
pub const ANNULUS_ANGLES: usize = 1024;

/// `∫_{r_in < |x−c| < r_out} |∇f|^p` with log-radial midpoint steps and a
/// uniform angular rule (n=2) or the centroids of a unit sphere mesh (n=3).
pub fn annulus_energy(map: &MapField, center: &[f64], r_in: f64, r_out: f64, p: f64) -> Result<f64> {
    let n = center.len();
    if !(0.0 < r_in && r_in < r_out) {
        return Err(Error::Config(format!("annulus radii {r_in}, {r_out} out of order")));
    }
    let directions: Vec<(Vec<f64>, f64)> = if n == 2 {
        let w = 2.0 * std::f64::consts::PI / ANNULUS_ANGLES as f64;
        (0..ANNULUS_ANGLES)
            .map(|k| {
                let t = (k as f64 + 0.5) * w;
                (vec![t.cos(), t.sin()], w)
            })
            .collect()
    } else {
        let mesh = crate::domain::sphere_mesh(&vec![0.0; n], 1.0, 64)?;
        let scale = unit_sphere_area(n) / mesh.total_measure();
        (0..mesh.element_count())
            .map(|e| {
                let c = mesh.centroid(e);
                let l = crate::linalg::norm(&c);
                (c.iter().map(|v| v / l).collect(), mesh.measure(e) * scale)
            })
            .collect()
    };
    let (s0, s1) = (r_in.ln(), r_out.ln());
    let ds = (s1 - s0) / ANNULUS_RADIAL_STEPS as f64;
    let shells: Vec<f64> = (0..ANNULUS_RADIAL_STEPS)
        .into_par_iter()
        .map(|i| {
            let r = (s0 + (i as f64 + 0.5) * ds).exp();
            let jac = r.powi(n as i32) * ds;
            let mut x = vec![0.0; n];
            directions
                .iter()
                .map(|(u, w)| {
                    for a in 0..n {
                        x[a] = center[a] + r * u[a];
                    }
                    w * frobenius(&map.jacobian_vec(&x)).powf(p)
                })
                .sum::<f64>()
                * jac
        })
        .collect();
    Ok(shells.iter().sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares `energy ≈ slope·ln(1/δ) + intercept`.
pub fn log_fit(deltas: &[f64], energies: &[f64]) -> LogFit {
    let xs: Vec<f64> = deltas.iter().map(|d| (1.0 / d).ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = energies.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(energies).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(energies)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let ss_tot: f64 = energies.iter().map(|y| (y - my).powi(2)).sum();
    LogFit {
        slope,
        intercept,
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapzoo::preset;
    use std::f64::consts::PI;

    fn disk(res: usize) -> Domain {
        Domain::unit_disk(res).unwrap()
    }

    fn constant() -> MapField {
        MapField::analytic("const", 2, 2, |_, o| o.copy_from_slice(&[0.3, -0.2])).with_gradient(|_, g| g.fill(0.0))
    }

    #[test]
    fn e_raster_of_identity_is_the_disk() {
        let id = preset("identity", &[]).unwrap().map;
        let r = degree_region(&id, &disk(64), None, 128, None).unwrap();
        assert_eq!(r.degrees[r.locate(&[0.0, 0.0]).unwrap()], 1);
        assert_eq!(r.degrees[r.locate(&[0.5, -0.5]).unwrap()], 1);
        assert!(!r.in_e(r.locate(&[1.05, 0.0]).unwrap()));
        assert!((r.e_diameter() - 2.0).abs() < 0.05, "{}", r.e_diameter());
        let t = preset("translate", &[2.0, 0.0]).unwrap().map;
        let r = degree_region(&t, &disk(64), None, 128, None).unwrap();
        assert_eq!(r.degrees[r.locate(&[2.0, 0.0]).unwrap()], 1);
        assert_eq!(r.locate(&[0.0, 0.0]), None);
    }

    #[test]
    fn e_raster_of_z_squared_matches_counting() {
        let d = disk(64);
        let z2 = preset("zpow", &[2.0]).unwrap().map;
        let r = degree_region(&z2, &d, None, 128, None).unwrap();
        for y in [[0.25, 0.0], [-0.3, 0.2], [0.0, -0.6], [0.1, 0.1], [0.5, 0.5]] {
            let count = crate::degree::degree_by_counting(&z2, &d, &y, &Default::default()).unwrap();
            assert_eq!(r.degrees[r.locate(&y).unwrap()], count.value);
        }
    }

    #[test]
    fn pgm_and_csv_exports() {
        let id = preset("identity", &[]).unwrap().map;
        let r = degree_region(&id, &disk(32), None, 16, Some(64)).unwrap();
        let mut pgm = Vec::new();
        r.write_pgm(&mut pgm, Some("{\"cmd\":\"escan\"}")).unwrap();
        let header = String::from_utf8_lossy(&pgm[..40]).to_string();
        assert!(header.starts_with("P5\n# topodeg"));
        assert_eq!(pgm.len() - pgm.iter().rposition(|&b| b == b'\n').unwrap() - 1, r.len());
        let mut csv = Vec::new();
        r.write_csv(&mut csv, None).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), r.len() + 1);
    }

    #[test]
    fn f_set_examples() {
        let d = disk(64);
        let id = preset("identity", &[]).unwrap().map;
        let o = FSetOptions::default();
        let rep = f_set(&id, &d, &[0.2, 0.1], &[0.2, 0.1, 0.05, 0.025], &o).unwrap();
        assert!(!rep.empty);
        assert!(rep.diam_f <= 0.05 + 2.0 * rep.cell + 2.0 * rep.rasters[0].flag_distance, "{}", rep.diam_f);
        assert_eq!(rep.nest_violations(), 0);

        let angle = preset("angle", &[]).unwrap().map;
        let rep = f_set(&angle, &d, &[0.0, 0.0], &[0.4, 0.2, 0.1, 0.05], &o).unwrap();
        assert!((rep.diam_f - 2.0).abs() < 0.05, "{}", rep.diam_f);
        assert!(matches!(
            f_set(&id, &d, &[0.9, 0.0], &[0.2, 0.1], &o),
            Err(Error::BallOutsideDomain { .. })
        ));
        assert!(matches!(f_set(&id, &d, &[0.0, 0.0], &[0.1, 0.2], &o), Err(Error::Config(_))));
    }

    #[test]
    fn essential_oscillation_examples() {
        let d = disk(64);
        assert_eq!(essential_oscillation(&constant(), &d, &[0.1, 0.1], 0.2, 0.0).unwrap(), 0.0);
        let id = preset("identity", &[]).unwrap().map;
        let r = 0.3;
        let h = r / SAMPLES_PER_RADIUS_2D as f64;
        let e = essential_oscillation(&id, &d, &[0.0, 0.0], r, 0.0).unwrap();
        assert!((e - 2.0 * r).abs() <= h, "{e}");
        let spike = preset("spike", &[0.1, -0.1, 10.0, 1e-6]).unwrap().map;
        let raw = essential_oscillation(&spike, &d, &[0.1, -0.1], r, 0.0).unwrap();
        assert!(raw > 9.5, "{raw}");
        let trimmed = essential_oscillation(&spike, &d, &[0.1, -0.1], r, 1e-3).unwrap();
        assert!((trimmed - 2.0 * r).abs() <= h, "{trimmed}");
        assert!(matches!(
            essential_oscillation(&id, &d, &[0.0, 0.0], 1e-3, 0.0).map(|_| ()),
            Ok(())
        ));
        let tiny = Domain::boxed(&[0.0, 0.0], &[1.0, 1.0], 8).unwrap();
        assert!(matches!(
            essential_oscillation(&id, &tiny, &[-0.2, -0.2], 0.21, 0.0),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn eosc_bound_examples() {
        let d = disk(64);
        let id = preset("identity", &[]).unwrap().map;
        let b = eosc_bound_check(&id, &d, &[0.1, 0.0], 0.3, DEFAULT_TRIM).unwrap();
        assert!(b.holds);
        assert!((b.osc_sphere - 0.6).abs() < 1e-12);
        let z2 = preset("zpow", &[2.0]).unwrap().map;
        assert!(eosc_bound_check(&z2, &d, &[0.0, 0.0], 0.5, DEFAULT_TRIM).unwrap().holds);
        let c = eosc_bound_check(&constant(), &d, &[0.0, 0.0], 0.5, 0.0).unwrap();
        assert_eq!((c.eosc, c.osc_sphere, c.holds), (0.0, 0.0, true));
    }

    #[test]
    fn morrey_examples() {
        let d = disk(64);
        let id = preset("identity", &[]).unwrap().map;
        let m = morrey_sphere_check(&id, &d, &[0.0, 0.0], 0.5).unwrap();
        assert!((m.osc_n - 1.0).abs() < 1e-12);
        assert!((m.rhs - PI / 2.0).abs() < 1e-4, "{}", m.rhs);
        assert!((m.ratio - 2.0 / PI).abs() < 1e-4);
        assert_eq!(morrey_sphere_check(&constant(), &d, &[0.0, 0.0], 0.5).unwrap().ratio, 0.0);
    }

    #[test]
    fn enclosing_ball_cases() {
        let pts = [0.0, 0.0, 2.0, 0.0, 1.0, 0.5, 1.0, -0.2];
        let (c, r) = enclosing_ball(&pts, 2);
        assert!(dist(&c, &[1.0, 0.0]) < 1e-12 && (r - 1.0).abs() < 1e-12);
        let tri = [0.0, 0.0, 2.0, 0.0, 1.0, 1.5];
        let (c, r) = enclosing_ball(&tri, 2);
        for p in tri.chunks(2) {
            assert!((dist(p, &c) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn retract_examples() {
        let d = disk(64);
        let id = preset("identity", &[]).unwrap().map;
        assert_eq!(retract_violation_measure(&id, &d, &[0.1, 0.1], 0.3).unwrap().fraction, 0.0);
        let z2 = preset("zpow", &[2.0]).unwrap().map;
        assert_eq!(retract_violation_measure(&z2, &d, &[0.0, 0.0], 0.5).unwrap().fraction, 0.0);
        let bubble = preset("bubble", &[0.0, 0.0, 0.12, 0.8]).unwrap().map;
        let rep = retract_violation_measure(&bubble, &d, &[0.0, 0.0], 0.3).unwrap();
        assert!(rep.fraction > 0.0);
        assert!(rep.negative_det > 0 && rep.note.is_some());
    }

    #[test]
    fn continuity_examples() {
        let d = disk(128);
        let pts = vec![vec![0.0, 0.0], vec![0.02, 0.01], vec![0.5, 0.3], vec![-0.4, -0.4]];
        let o = ContinuityOptions::default();
        let diffeo = preset("diffeo1", &[]).unwrap().map;
        let p = continuity_scan(&diffeo, &d, &pts, &o).unwrap();
        assert_eq!(p.suspects().count(), 0);
        let angle = preset("angle", &[]).unwrap().map;
        let p = continuity_scan(&angle, &d, &pts, &o).unwrap();
        let s: Vec<_> = p.records.iter().map(|r| r.classification).collect();
        assert_eq!(
            s,
            vec![
                Classification::Suspect,
                Classification::Suspect,
                Classification::Continuous,
                Classification::Continuous
            ]
        );
        let mut csv = Vec::new();
        p.write_csv(&mut csv, None).unwrap();
        let rows = String::from_utf8(csv).unwrap().lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, 1 + pts.len() * o.radii.len());
    }

    #[test]
    fn annulus_energy_matches_polar_oracle() {
        let cav = preset("cavitation", &[]).unwrap().map;
        for delta in [0.1, 0.0125] {
            let e = annulus_energy(&cav, &[0.0, 0.0], delta, 1.0, 2.0).unwrap();
            let oracle = 2.0 * PI * ((1.0 / delta).ln() + 3.0 - 2.0 * delta - delta * delta);
            assert!((e - oracle).abs() < 1e-4 * oracle, "{e} vs {oracle}");
        }
        let fit = log_fit(&[0.1, 0.01, 0.001], &[1.0 + 2.0 * 10f64.ln(), 1.0 + 4.0 * 10f64.ln(), 1.0 + 6.0 * 10f64.ln()]);
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }
}
