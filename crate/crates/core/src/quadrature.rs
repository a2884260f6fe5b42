//! Midpoint cell quadrature over regions described by a signed distance.
//!
//! Cells fully inside contribute their center with full volume. Cells cut by
//! the boundary are split into `REFINE^n` sub-cells (`REFINE_3D^n` in 3D)
//! and only the sub-cell centers inside the region are kept. Node order is
//! row-major (last axis fastest) so every sum over a rule is reproducible.

use rayon::prelude::*;

/// Sub-division factor for cells that straddle the region boundary, per
/// dimension 2 and 3 (and above).
pub const REFINE: usize = 8;
pub const REFINE_3D: usize = 4;

fn refine_factor(dim: usize) -> usize {
    if dim <= 2 {
        REFINE
    } else {
        REFINE_3D
    }
}

const CHUNK: usize = 4096;

#[derive(Clone, Debug)]
pub struct Quadrature {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn from_parts(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Self {
        assert_eq!(points.len(), weights.len() * dim);
        Quadrature {
            dim,
            points,
            weights,
        }
    }

    /// Builds the rule on the box `[lo, hi]` with `cells` cells per axis,
    /// keeping the part where `sd < 0`.
    pub fn cells<F>(lo: &[f64], hi: &[f64], cells: usize, sd: F) -> Self
    where
        F: Fn(&[f64]) -> f64,
    {
        Self::cells_counts(lo, hi, &vec![cells; lo.len()], sd)
    }

    /// As [`Quadrature::cells`] with a separate cell count per axis.
    pub fn cells_counts<F>(lo: &[f64], hi: &[f64], counts: &[usize], sd: F) -> Self
    where
        F: Fn(&[f64]) -> f64,
    {
        let dim = lo.len();
        let h: Vec<f64> = (0..dim).map(|a| (hi[a] - lo[a]) / counts[a] as f64).collect();
        let vol: f64 = h.iter().product();
        let half_diag = 0.5 * h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let refine = refine_factor(dim);
        let sub_h: Vec<f64> = h.iter().map(|v| v / refine as f64).collect();
        let full = refine.pow(dim as u32);
        let sub_vol = vol / full as f64;

        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut center = vec![0.0; dim];
        let mut sub = vec![0.0; dim];
        for_each_index_counts(counts, |idx| {
            for a in 0..dim {
                center[a] = lo[a] + (idx[a] as f64 + 0.5) * h[a];
            }
            let d = sd(&center);
            if d < -half_diag {
                points.extend_from_slice(&center);
                weights.push(vol);
            } else if d <= half_diag {
                let start = weights.len();
                for_each_index(dim, refine, |sidx| {
                    for a in 0..dim {
                        sub[a] = center[a] - 0.5 * h[a] + (sidx[a] as f64 + 0.5) * sub_h[a];
                    }
                    if sd(&sub) < 0.0 {
                        points.extend_from_slice(&sub);
                        weights.push(sub_vol);
                    }
                });
                if weights.len() - start == full && sd(&center) < 0.0 {
                    // Uncut after all: keep the plain midpoint node.
                    weights.truncate(start);
                    points.truncate(start * dim);
                    points.extend_from_slice(&center);
                    weights.push(vol);
                }
            }
        });
        Quadrature {
            dim,
            points,
            weights,
        }
    }

    /// Rule over `B_r(center)` with `cells_across` cells along a diameter,
    /// optionally intersected with a second region given by its signed
    /// distance.
    pub fn ball(center: &[f64], radius: f64, cells_across: usize, clip: Option<&dyn Fn(&[f64]) -> f64>) -> Self {
        let lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
        let hi: Vec<f64> = center.iter().map(|c| c + radius).collect();
        let ball_sd = |x: &[f64]| crate::linalg::dist(x, center) - radius;
        match clip {
            None => Self::cells(&lo, &hi, cells_across, ball_sd),
            Some(other) => Self::cells(&lo, &hi, cells_across, |x| ball_sd(x).max(other(x))),
        }
    }

    /// Rule over the shell `r_in < |x − center| < r_out`.
    pub fn shell(center: &[f64], r_in: f64, r_out: f64, cells_across: usize) -> Self {
        let lo: Vec<f64> = center.iter().map(|c| c - r_out).collect();
        let hi: Vec<f64> = center.iter().map(|c| c + r_out).collect();
        Self::cells(&lo, &hi, cells_across, |x| {
            let r = crate::linalg::dist(x, center);
            (r - r_out).max(r_in - r)
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ w_i·f(x_i)`, evaluated in parallel with a reduction order that
    /// does not depend on the number of worker threads.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let partials: Vec<f64> = self
            .weights
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, ws)| {
                let base = c * CHUNK;
                ws.iter()
                    .enumerate()
                    .map(|(i, w)| w * f(self.point(base + i)))
                    .sum::<f64>()
            })
            .collect();
        partials.iter().sum()
    }

    /// Vector-valued version of [`Quadrature::integrate`].
    pub fn integrate_vec<F>(&self, m: usize, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let partials: Vec<Vec<f64>> = self
            .weights
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, ws)| {
                let base = c * CHUNK;
                let mut acc = vec![0.0; m];
                let mut buf = vec![0.0; m];
                for (i, w) in ws.iter().enumerate() {
                    f(self.point(base + i), &mut buf);
                    for k in 0..m {
                        acc[k] += w * buf[k];
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; m];
        for p in partials {
            for k in 0..m {
                out[k] += p[k];
            }
        }
        out
    }
}

/// Visits every multi-index in `[0, count)^dim`, last axis fastest.
/// `∫ f` over `{sd < 0} ∩ [lo, hi]` with the rule of [`Quadrature::cells`],
/// built one slab along the first axis at a time so the full node set is
/// never stored. Agrees with `Quadrature::cells(..).integrate(f)` up to
/// summation order.
pub fn integrate_streamed<S, F>(lo: &[f64], hi: &[f64], cells: usize, sd: S, f: F) -> f64
where
    S: Fn(&[f64]) -> f64 + Sync,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = lo.len();
    let h0 = (hi[0] - lo[0]) / cells as f64;
    let mut counts = vec![cells; dim];
    counts[0] = 1;
    let partials: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i| {
            let mut slo = lo.to_vec();
            let mut shi = hi.to_vec();
            slo[0] = lo[0] + i as f64 * h0;
            shi[0] = lo[0] + (i + 1) as f64 * h0;
            let q = Quadrature::cells_counts(&slo, &shi, &counts, &sd);
            q.iter().map(|(x, w)| w * f(x)).sum::<f64>()
        })
        .collect();
    partials.iter().sum()
}

pub(crate) fn for_each_index<F: FnMut(&[usize])>(dim: usize, count: usize, f: F) {
    for_each_index_counts(&vec![count; dim], f)
}

pub(crate) fn for_each_index_counts<F: FnMut(&[usize])>(counts: &[usize], mut f: F) {
    let dim = counts.len();
    if counts.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; dim];
    loop {
        f(&idx);
        let mut axis = dim;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < counts[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}
