//! Analytic preset maps with exact gradients, constructed fixtures, the
//! codimension-one lift `F̃(x,t) = f(x) + t·ν_f(x)` and the elastic and
//! immersion energies.
//!
//! Every preset carries the properties the test suites use as oracles,
//! each with a note saying where the expectation comes from.

use std::f64::consts::PI;

use serde::Serialize;

use crate::domain::{Domain, Shape};
use crate::error::{Error, Result};
use crate::fields::MapField;
use crate::linalg::{cross, det, dist_to_rotations, norm, singular_values};

/// Radius below which punctured maps return their puncture value.
pub const PUNCTURE_RADIUS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetSign {
    Positive,
    Negative,
    NonNegative,
    /// Zero almost everywhere.
    Zero,
    Mixed,
}

impl DetSign {
    /// Whether a sampled determinant is compatible with the declared sign.
    pub fn admits(self, det: f64, tol: f64) -> bool {
        match self {
            DetSign::Positive => det > 0.0,
            DetSign::Negative => det < 0.0,
            DetSign::NonNegative => det >= -tol,
            DetSign::Zero => det.abs() <= tol,
            DetSign::Mixed => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaggedDegree {
    pub y: Vec<f64>,
    pub degree: i64,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaggedContinuity {
    pub point: Vec<f64>,
    pub continuous: bool,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZooProperties {
    pub det_sign: DetSign,
    pub det_sign_provenance: String,
    pub injective: bool,
    /// Whether the map is in `W^{1,n}` of the unit disk.
    pub sobolev_critical: bool,
    /// `sup |f|` over the closed unit disk, when bounded.
    pub sup_norm: Option<f64>,
    pub expected_degrees: Vec<TaggedDegree>,
    pub continuity: Vec<TaggedContinuity>,
}

#[derive(Clone, Debug)]
pub struct ZooEntry {
    pub name: String,
    pub params: Vec<f64>,
    pub map: MapField,
    pub properties: ZooProperties,
}

/// JSON-friendly summary used by `zoo list`.
#[derive(Clone, Debug, Serialize)]
pub struct ZooRecord<'a> {
    pub name: &'a str,
    pub params: &'a [f64],
    pub n: usize,
    pub m: usize,
    pub exact_gradient: bool,
    #[serde(flatten)]
    pub properties: &'a ZooProperties,
}

impl ZooEntry {
    pub fn record(&self) -> ZooRecord<'_> {
        ZooRecord {
            name: &self.name,
            params: &self.params,
            n: self.map.source_dim(),
            m: self.map.target_dim(),
            exact_gradient: self.map.has_exact_gradient(),
            properties: &self.properties,
        }
    }
}

/// Names accepted by [`preset`] with their default parameters.
pub const CATALOGUE: &[(&str, &[f64])] = &[
    ("identity", &[]),
    ("translate", &[2.0, 0.0]),
    ("linear", &[1.0, 0.0, 0.0, -1.0]),
    ("rotation", &[PI / 3.0]),
    ("zpow", &[2.0]),
    ("winding_boundary", &[3.0]),
    ("angle", &[]),
    ("cavitation", &[]),
    ("diffeo1", &[]),
    ("fold", &[0.05]),
    ("spike", &[0.0, 0.0, 10.0, 1e-6]),
    ("bubble", &[0.0, 0.0, 0.12, 0.8]),
];

/// Builds the catalogue entries with default parameters.
pub fn catalogue() -> Vec<ZooEntry> {
    CATALOGUE
        .iter()
        .map(|(name, params)| preset(name, params).expect("catalogue presets are valid"))
        .collect()
}

/// Parses `name` or `name:p1,p2,...`.
pub fn parse_preset(spec: &str) -> Result<ZooEntry> {
    let (name, params) = match spec.split_once(':') {
        Some((n, p)) => {
            let params = p
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("preset parameter `{s}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            (n, params)
        }
        None => (spec, Vec::new()),
    };
    preset(name, &params)
}

fn note(s: &str) -> String {
    s.to_string()
}

fn degree_tag(y: &[f64], degree: i64, provenance: &str) -> TaggedDegree {
    TaggedDegree {
        y: y.to_vec(),
        degree,
        provenance: provenance.to_string(),
    }
}

fn continuity_tag(point: &[f64], continuous: bool, provenance: &str) -> TaggedContinuity {
    TaggedContinuity {
        point: point.to_vec(),
        continuous,
        provenance: provenance.to_string(),
    }
}

fn param(params: &[f64], i: usize, default: f64) -> f64 {
    params.get(i).copied().unwrap_or(default)
}

/// Builds a preset. Planar presets live on ℝ²; `identity` and `diffeo1`
/// accept an optional leading dimension parameter for the 3D versions
/// (`identity:3`, `diffeo1:3`).
pub fn preset(name: &str, params: &[f64]) -> Result<ZooEntry> {
    let smooth = |p: &[f64]| vec![continuity_tag(p, true, "[TRIVIAL] smooth map")];
    let (map, properties) = match name {
        "identity" => {
            let n = param(params, 0, 2.0) as usize;
            if !(2..=3).contains(&n) {
                return Err(Error::Config(format!("identity dimension {n} not in {{2, 3}}")));
            }
            let map = MapField::analytic("identity", n, n, |x, o| o.copy_from_slice(x)).with_gradient(move |_, g| {
                g.fill(0.0);
                for i in 0..n {
                    g[i * n + i] = 1.0;
                }
            });
            let origin = vec![0.0; n];
            let mut far = vec![0.0; n];
            far[0] = 2.0;
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Positive,
                    det_sign_provenance: note("[TRIVIAL] det = 1"),
                    injective: true,
                    sobolev_critical: true,
                    sup_norm: Some(1.0),
                    expected_degrees: vec![
                        degree_tag(&origin, 1, "[TRIVIAL] single preimage, det = 1"),
                        degree_tag(&far, 0, "[TRIVIAL] y outside f(Ω̄)"),
                    ],
                    continuity: smooth(&origin),
                },
            )
        }
        "translate" => {
            let v = [param(params, 0, 2.0), param(params, 1, 0.0)];
            let map = MapField::analytic("translate", 2, 2, move |x, o| {
                o[0] = x[0] + v[0];
                o[1] = x[1] + v[1];
            })
            .with_gradient(|_, g| g.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]));
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Positive,
                    det_sign_provenance: note("[TRIVIAL] det = 1"),
                    injective: true,
                    sobolev_critical: true,
                    sup_norm: Some((v[0] * v[0] + v[1] * v[1]).sqrt() + 1.0),
                    expected_degrees: vec![
                        degree_tag(&v, 1, "[TRIVIAL] preimage at the origin"),
                        degree_tag(&[0.0, 0.0], if v[0].hypot(v[1]) < 1.0 { 1 } else { 0 }, "[TRIVIAL] translated disk"),
                    ],
                    continuity: smooth(&[0.0, 0.0]),
                },
            )
        }
        "linear" => {
            if params.len() != 4 {
                return Err(Error::Config("linear expects 4 row-major entries".into()));
            }
            let a = [params[0], params[1], params[2], params[3]];
            let d = det(&a, 2);
            if d == 0.0 {
                return Err(Error::Config("linear map must be invertible".into()));
            }
            let map = MapField::analytic("linear", 2, 2, move |x, o| {
                o[0] = a[0] * x[0] + a[1] * x[1];
                o[1] = a[2] * x[0] + a[3] * x[1];
            })
            .with_gradient(move |_, g| g.copy_from_slice(&a));
            let sup = singular_values(&a, 2, 2)[0];
            (
                map,
                ZooProperties {
                    det_sign: if d > 0.0 { DetSign::Positive } else { DetSign::Negative },
                    det_sign_provenance: note("[TRIVIAL] constant determinant"),
                    injective: true,
                    sobolev_critical: true,
                    sup_norm: Some(sup),
                    expected_degrees: vec![degree_tag(
                        &[0.0, 0.0],
                        d.signum() as i64,
                        "[TRIVIAL] single preimage with sign det A",
                    )],
                    continuity: smooth(&[0.0, 0.0]),
                },
            )
        }
        "rotation" => {
            let theta = param(params, 0, PI / 3.0);
            let (c, s) = (theta.cos(), theta.sin());
            let map = MapField::analytic("rotation", 2, 2, move |x, o| {
                o[0] = c * x[0] - s * x[1];
                o[1] = s * x[0] + c * x[1];
            })
            .with_gradient(move |_, g| g.copy_from_slice(&[c, -s, s, c]));
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Positive,
                    det_sign_provenance: note("[TRIVIAL] det = 1"),
                    injective: true,
                    sobolev_critical: true,
                    sup_norm: Some(1.0),
                    expected_degrees: vec![
                        degree_tag(&[0.0, 0.0], 1, "[TRIVIAL] injective orientation preserving"),
                        degree_tag(&[0.3, -0.2], 1, "[TRIVIAL] injective orientation preserving"),
                    ],
                    continuity: smooth(&[0.0, 0.0]),
                },
            )
        }
        "zpow" => {
            let k = param(params, 0, 2.0);
            if k < 1.0 || k.fract() != 0.0 {
                return Err(Error::Config(format!("zpow exponent {k} must be a positive integer")));
            }
            let k = k as i32;
            let map = MapField::analytic(format!("zpow{k}"), 2, 2, move |x, o| {
                let (re, im) = complex_pow(x[0], x[1], k);
                o[0] = re;
                o[1] = im;
            })
            .with_gradient(move |x, g| {
                // f'(z) = k·z^{k−1} = a + ib  ⇒  ∇f = [[a, −b], [b, a]].
                let (a, b) = complex_pow(x[0], x[1], k - 1);
                let (a, b) = (k as f64 * a, k as f64 * b);
                g.copy_from_slice(&[a, -b, b, a]);
            });
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Positive,
                    det_sign_provenance: note("[DERIVED] det = |k z^{k−1}|² > 0 away from 0"),
                    injective: k == 1,
                    sobolev_critical: true,
                    sup_norm: Some(1.0),
                    expected_degrees: vec![
                        degree_tag(&[0.25, 0.0], k as i64, "[DERIVED] k analytic preimages, each det > 0"),
                        degree_tag(&[2.0, 0.0], 0, "[TRIVIAL] |y| > 1 is not attained"),
                    ],
                    continuity: smooth(&[0.0, 0.0]),
                },
            )
        }
        "winding_boundary" => {
            let k = param(params, 0, 3.0);
            if k.fract() != 0.0 || k == 0.0 {
                return Err(Error::Config(format!("winding_boundary index {k} must be a nonzero integer")));
            }
            let kk = k;
            let map = MapField::analytic(format!("winding{k}"), 2, 2, move |x, o| {
                let r = x[0].hypot(x[1]);
                let t = x[1].atan2(x[0]);
                o[0] = r * (kk * t).cos();
                o[1] = r * (kk * t).sin();
            })
            .with_gradient(move |x, g| {
                let r = x[0].hypot(x[1]);
                if r < PUNCTURE_RADIUS {
                    g.copy_from_slice(&[1.0, 0.0, 0.0, kk]);
                    return;
                }
                let t = x[1].atan2(x[0]);
                let (c, s) = ((kk * t).cos(), (kk * t).sin());
                let (ux, uy) = (x[0] / r, x[1] / r);
                // ∂f = e^{ikθ}·∂r + i·k·e^{ikθ}·r∂θ
                g[0] = c * ux - kk * s * (-uy);
                g[2] = s * ux + kk * c * (-uy);
                g[1] = c * uy - kk * s * ux;
                g[3] = s * uy + kk * c * ux;
            });
            (
                map,
                ZooProperties {
                    det_sign: if k > 0.0 { DetSign::Positive } else { DetSign::Negative },
                    det_sign_provenance: note("[DERIVED] det = k in polar coordinates"),
                    injective: k.abs() == 1.0,
                    sobolev_critical: true,
                    sup_norm: Some(1.0),
                    expected_degrees: vec![degree_tag(
                        &[0.2, 0.1],
                        k as i64,
                        "[DERIVED] boundary trace (cos kθ, sin kθ) winds k times",
                    )],
                    continuity: smooth(&[0.3, 0.0]),
                },
            )
        }
        "angle" => {
            let map = MapField::analytic("angle", 2, 2, |x, o| {
                let r = x[0].hypot(x[1]);
                if r < PUNCTURE_RADIUS {
                    o.copy_from_slice(&[1.0, 0.0]);
                } else {
                    o[0] = x[0] / r;
                    o[1] = x[1] / r;
                }
            })
            .with_gradient(|x, g| {
                let r = x[0].hypot(x[1]);
                if r < PUNCTURE_RADIUS {
                    g.fill(0.0);
                    return;
                }
                let (u, v) = (x[0] / r, x[1] / r);
                g.copy_from_slice(&[(1.0 - u * u) / r, -u * v / r, -u * v / r, (1.0 - v * v) / r]);
            });
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Zero,
                    det_sign_provenance: note("[DERIVED] image is S¹, rank ∇f = 1"),
                    injective: false,
                    sobolev_critical: false,
                    sup_norm: Some(1.0),
                    expected_degrees: vec![degree_tag(&[0.2, 0.1], 1, "[DERIVED] boundary trace is the unit circle")],
                    continuity: vec![
                        continuity_tag(&[0.0, 0.0], false, "[DERIVED] every S_ρ(0) maps onto S¹"),
                        continuity_tag(&[0.5, 0.3], true, "[TRIVIAL] smooth away from 0"),
                    ],
                },
            )
        }
        "cavitation" => {
            let map = MapField::analytic("cavitation", 2, 2, |x, o| {
                let r = x[0].hypot(x[1]);
                if r < PUNCTURE_RADIUS {
                    o.copy_from_slice(&[1.0, 0.0]);
                } else {
                    let s = (1.0 + r) / r;
                    o[0] = s * x[0];
                    o[1] = s * x[1];
                }
            })
            .with_gradient(|x, g| {
                let r = x[0].hypot(x[1]);
                if r < PUNCTURE_RADIUS {
                    g.fill(0.0);
                    return;
                }
                let (u, v) = (x[0] / r, x[1] / r);
                let t = (1.0 + r) / r;
                // x̂x̂ᵀ + ((1+r)/r)(I − x̂x̂ᵀ)
                g.copy_from_slice(&[u * u + t * (1.0 - u * u), u * v * (1.0 - t), u * v * (1.0 - t), v * v + t * (1.0 - v * v)]);
            });
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Positive,
                    det_sign_provenance: note("[DERIVED] det = (1+r)/r > 0"),
                    injective: true,
                    sobolev_critical: false,
                    sup_norm: Some(2.0),
                    expected_degrees: vec![degree_tag(&[0.0, 1.5], 1, "[DERIVED] boundary trace is the circle of radius 2")],
                    continuity: vec![
                        continuity_tag(&[0.0, 0.0], false, "[DERIVED] a hole of radius 1 opens at 0"),
                        continuity_tag(&[0.5, -0.3], true, "[TRIVIAL] smooth away from 0"),
                    ],
                },
            )
        }
        "diffeo1" => {
            let n = param(params, 0, 2.0) as usize;
            if !(2..=3).contains(&n) {
                return Err(Error::Config(format!("diffeo1 dimension {n} not in {{2, 3}}")));
            }
            let map = MapField::analytic("diffeo1", n, n, move |x, o| {
                for i in 0..n {
                    o[i] = x[i] + DIFFEO_AMPLITUDE * (DIFFEO_FREQ * x[(i + 1) % n]).sin();
                }
            })
            .with_gradient(move |x, g| {
                g.fill(0.0);
                for i in 0..n {
                    let j = (i + 1) % n;
                    g[i * n + i] = 1.0;
                    g[i * n + j] += DIFFEO_AMPLITUDE * DIFFEO_FREQ * (DIFFEO_FREQ * x[j]).cos();
                }
            });
            let origin = vec![0.0; n];
            let mut probe = vec![0.0; n];
            probe[0] = 0.2;
            probe[1] = -0.1;
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Positive,
                    det_sign_provenance: note(
                        "[DERIVED] identity plus a perturbation with Lipschitz constant 0.45 < 1",
                    ),
                    injective: true,
                    sobolev_critical: true,
                    sup_norm: Some(1.0 + DIFFEO_AMPLITUDE * (n as f64).sqrt()),
                    expected_degrees: vec![degree_tag(&probe, 1, "[DERIVED] injective with det > 0")],
                    continuity: smooth(&origin),
                },
            )
        }
        "fold" => {
            let s = param(params, 0, 0.05);
            if !(s > 0.0) {
                return Err(Error::Config("fold smoothing must be positive".into()));
            }
            let map = MapField::analytic("fold", 2, 2, move |x, o| {
                o[0] = x[0];
                o[1] = (x[1] * x[1] + s * s).sqrt() - s;
            })
            .with_gradient(move |x, g| {
                let q = (x[1] * x[1] + s * s).sqrt();
                g.copy_from_slice(&[1.0, 0.0, 0.0, x[1] / q]);
            });
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Mixed,
                    det_sign_provenance: note("[TRIVIAL] det = y/√(y²+s²) changes sign across y = 0"),
                    injective: false,
                    sobolev_critical: true,
                    sup_norm: Some((1.0 + s * s).sqrt()),
                    expected_degrees: vec![degree_tag(&[0.0, 0.3], 0, "[DERIVED] two preimages with opposite signs")],
                    continuity: smooth(&[0.0, 0.0]),
                },
            )
        }
        "spike" => {
            // Identity plus a spike of the given amplitude confined to a tiny
            // ball, so that at most one lattice sample sees it.
            let c = [param(params, 0, 0.0), param(params, 1, 0.0)];
            let amp = param(params, 2, 10.0);
            let width = param(params, 3, 1e-6);
            let map = MapField::analytic("spike", 2, 2, move |x, o| {
                o[0] = x[0];
                o[1] = x[1];
                if (x[0] - c[0]).hypot(x[1] - c[1]) < width {
                    o[0] += amp;
                }
            })
            .with_gradient(|_, g| g.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]));
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Positive,
                    det_sign_provenance: note("[TRIVIAL] identity almost everywhere"),
                    injective: false,
                    sobolev_critical: true,
                    sup_norm: Some(1.0 + amp.abs()),
                    expected_degrees: vec![degree_tag(&[0.3, 0.3], 1, "[TRIVIAL] equals the identity off a null set")],
                    continuity: vec![continuity_tag(&[0.5, 0.0], true, "[TRIVIAL] identity away from the spike")],
                },
            )
        }
        "bubble" => {
            // Identity plus a radial push centered at c: points near c are
            // pushed outward along e₁ far enough to fold (negative det).
            let c = [param(params, 0, 0.0), param(params, 1, 0.0)];
            let w = param(params, 2, 0.12);
            let amp = param(params, 3, 0.8);
            let bump = crate::kernel::Bump::new(&c, w);
            let bump2 = bump.clone();
            let map = MapField::analytic("bubble", 2, 2, move |x, o| {
                o[0] = x[0] + amp * bump.eval(x) / (-1.0f64).exp();
                o[1] = x[1];
            })
            .with_gradient(move |x, g| {
                let mut gb = [0.0; 2];
                bump2.gradient(x, &mut gb);
                let s = amp / (-1.0f64).exp();
                g.copy_from_slice(&[1.0 + s * gb[0], s * gb[1], 0.0, 1.0]);
            });
            (
                map,
                ZooProperties {
                    det_sign: DetSign::Mixed,
                    det_sign_provenance: note("[DERIVED] ∂₁f¹ = 1 + amp·∂₁φ/φ(0) < 0 on the trailing flank"),
                    injective: false,
                    sobolev_critical: true,
                    sup_norm: Some(1.0 + amp),
                    expected_degrees: vec![degree_tag(&[0.5, 0.5], 1, "[TRIVIAL] identity near the boundary")],
                    continuity: smooth(&[0.0, 0.0]),
                },
            )
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(ZooEntry {
        name: name.to_string(),
        params: params.to_vec(),
        map,
        properties,
    })
}

pub const DIFFEO_AMPLITUDE: f64 = 0.3;
pub const DIFFEO_FREQ: f64 = 1.5;

/// `(x + iy)^k` for `k ≥ 0`.
fn complex_pow(x: f64, y: f64, k: i32) -> (f64, f64) {
    let (mut re, mut im) = (1.0, 0.0);
    for _ in 0..k {
        let t = re * x - im * y;
        im = re * y + im * x;
        re = t;
    }
    (re, im)
}

/// Parametrised surface `f: Ω ⊂ ℝⁿ → ℝⁿ⁺¹` with its unit normal field.
#[derive(Clone, Debug)]
pub struct SurfaceMap {
    pub f: MapField,
    pub normal: MapField,
}

/// Unit normal `ν_f = ∂₁f × ∂₂f / |∂₁f × ∂₂f|` (right-handed in the
/// parameter order). Fails if `∇f` is rank deficient at any probe.
pub fn normal_field(f: &MapField, probes: &[Vec<f64>]) -> Result<MapField> {
    if f.source_dim() != 2 || f.target_dim() != 3 {
        return Err(Error::Config(format!(
            "normal fields need surfaces ℝ² → ℝ³, got ℝ{} → ℝ{}",
            f.source_dim(),
            f.target_dim()
        )));
    }
    for p in probes {
        let g = f.jacobian_vec(p);
        let n = cross(&[g[0], g[2], g[4]], &[g[1], g[3], g[5]]);
        if norm(&n) <= 1e-12 {
            return Err(Error::Degenerate(format!("∇f is rank deficient at {p:?}")));
        }
    }
    let surface = f.clone();
    Ok(MapField::analytic(format!("normal[{}]", f.name()), 2, 3, move |x, o| {
        let g = surface.jacobian_vec(x);
        let n = cross(&[g[0], g[2], g[4]], &[g[1], g[3], g[5]]);
        let l = norm(&n);
        if l > 0.0 {
            for k in 0..3 {
                o[k] = n[k] / l;
            }
        } else {
            o.fill(0.0);
        }
    })
    .with_fd_step(1e-5))
}

impl SurfaceMap {
    pub fn new(f: MapField) -> Result<Self> {
        let normal = normal_field(&f, &[])?;
        Ok(SurfaceMap { f, normal })
    }

    pub fn with_normal(f: MapField, normal: MapField) -> Self {
        SurfaceMap { f, normal }
    }

    /// `f(x₁, x₂) = (x₁, x₂, 0)` with `ν = (0, 0, 1)`.
    pub fn flat_sheet() -> Self {
        Self::stretched_sheet(1.0)
    }

    /// `f(x) = (s·x₁, s·x₂, 0)`.
    pub fn stretched_sheet(s: f64) -> Self {
        let f = MapField::analytic("sheet", 2, 3, move |x, o| {
            o[0] = s * x[0];
            o[1] = s * x[1];
            o[2] = 0.0;
        })
        .with_gradient(move |_, g| g.copy_from_slice(&[s, 0.0, 0.0, s, 0.0, 0.0]));
        let normal = MapField::analytic("sheet-normal", 2, 3, |_, o| o.copy_from_slice(&[0.0, 0.0, 1.0]))
            .with_gradient(|_, g| g.fill(0.0));
        SurfaceMap { f, normal }
    }

    /// `f(x₁, x₂) = (x₁, x₂, √(1 − |x|²))` with the outward normal `ν = f`.
    pub fn hemisphere() -> Self {
        let f = MapField::analytic("hemisphere", 2, 3, |x, o| {
            o[0] = x[0];
            o[1] = x[1];
            o[2] = (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0).sqrt();
        })
        .with_gradient(|x, g| {
            let z = (1.0 - x[0] * x[0] - x[1] * x[1]).max(1e-300).sqrt();
            g.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, -x[0] / z, -x[1] / z]);
        });
        let normal = f.clone().with_name("hemisphere-normal");
        SurfaceMap { f, normal }
    }

    /// Graph `(x₁, x₂, x₁² + x₂²)`.
    pub fn paraboloid() -> Result<Self> {
        let f = MapField::analytic("paraboloid", 2, 3, |x, o| {
            o[0] = x[0];
            o[1] = x[1];
            o[2] = x[0] * x[0] + x[1] * x[1];
        })
        .with_gradient(|x, g| g.copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 2.0 * x[0], 2.0 * x[1]]));
        Self::new(f)
    }
}

/// Product domain `Ω × (−d, d)` for a box `Ω`.
pub fn tilde_domain(base: &Domain, d: f64) -> Result<Domain> {
    check_thickness(d)?;
    match base.shape() {
        Shape::Box { lo, hi } => {
            let mut lo = lo.clone();
            let mut hi = hi.clone();
            lo.push(-d);
            hi.push(d);
            Domain::boxed(&lo, &hi, base.resolution())
        }
        Shape::Ball { .. } => Err(Error::Config("F̃ product domains need a box base domain".into())),
    }
}

fn check_thickness(d: f64) -> Result<()> {
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::Config(format!("half-thickness {d} must lie in (0, 1)")));
    }
    Ok(())
}

/// `F̃(x, t) = f(x) + t·ν_f(x)` on `Ω × (−d, d)` with gradient
/// `(∇f + t∇ν_f | ν_f)`.
pub fn tilde_f(surface: &SurfaceMap, d: f64) -> Result<MapField> {
    check_thickness(d)?;
    let n = surface.f.source_dim();
    let m = surface.f.target_dim();
    if m != n + 1 || surface.normal.target_dim() != m {
        return Err(Error::Config("F̃ needs a surface ℝⁿ → ℝⁿ⁺¹ with its normal".into()));
    }
    let (f, nu) = (surface.f.clone(), surface.normal.clone());
    let value = move |x: &[f64], o: &mut [f64]| {
        let (p, t) = (&x[..n], x[n]);
        let mut v = vec![0.0; m];
        f.eval(p, o);
        nu.eval(p, &mut v);
        for k in 0..m {
            o[k] += t * v[k];
        }
    };
    let (f, nu) = (surface.f.clone(), surface.normal.clone());
    let gradient = move |x: &[f64], g: &mut [f64]| {
        let (p, t) = (&x[..n], x[n]);
        let gf = f.jacobian_vec(p);
        let gn = nu.jacobian_vec(p);
        let v = nu.value(p);
        let cols = n + 1;
        for k in 0..m {
            for j in 0..n {
                g[k * cols + j] = gf[k * n + j] + t * gn[k * n + j];
            }
            g[k * cols + n] = v[k];
        }
    };
    Ok(MapField::analytic(format!("tildeF[{}]", surface.f.name()), n + 1, m, value).with_gradient(gradient))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Barrier {
    /// `Θ(t) = −log t` for `t > 0`, `+∞` otherwise.
    LogBarrier,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergySpec {
    pub barrier: Barrier,
    pub exponent: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Energy {
    Finite { value: f64 },
    /// The barrier was hit on `cells` quadrature nodes.
    Infinite { cells: usize },
}

impl Energy {
    pub fn value(&self) -> Option<f64> {
        match self {
            Energy::Finite { value } => Some(*value),
            Energy::Infinite { .. } => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Energy::Infinite { .. })
    }
}

/// `∫_Ω distⁿ(∇f, SO(n)) + Θ(det ∇f)`.
pub fn elastic_energy(map: &MapField, domain: &Domain, spec: EnergySpec) -> Result<Energy> {
    let n = map.source_dim();
    if map.target_dim() != n {
        return Err(Error::Config("elastic energy needs a square map".into()));
    }
    let q = domain.quadrature();
    let mut value = 0.0;
    let mut bad = 0usize;
    let mut g = vec![0.0; n * n];
    for (x, w) in q.iter() {
        map.jacobian(x, &mut g);
        value += w * dist_to_rotations(&g, n).powf(spec.exponent);
        if spec.barrier == Barrier::LogBarrier {
            let d = det(&g, n);
            if d <= 0.0 {
                bad += 1;
            } else {
                value -= w * d.ln();
            }
        }
    }
    Ok(if bad > 0 {
        Energy::Infinite { cells: bad }
    } else {
        Energy::Finite { value }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImmersionEnergy {
    /// `∫ (Σ(σᵢ − 1)²)^{n/2}`.
    pub stretch: f64,
    /// `∫ |∇ν_f|ⁿ` (Frobenius).
    pub bending: f64,
    pub total: f64,
}

/// `∫_Ω distⁿ(df, O(n, n+1)) + |∇ν_f|ⁿ`.
pub fn immersion_energy(surface: &SurfaceMap, domain: &Domain) -> ImmersionEnergy {
    let n = surface.f.source_dim();
    let m = surface.f.target_dim();
    let q = domain.quadrature();
    let half = n as f64 / 2.0;
    let stretch = q.integrate(|x| {
        let g = surface.f.jacobian_vec(x);
        let s = singular_values(&g, m, n);
        s.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>().powf(half)
    });
    let bending = q.integrate(|x| norm(&surface.normal.jacobian_vec(x)).powi(n as i32));
    ImmersionEnergy {
        stretch,
        bending,
        total: stretch + bending,
    }
}
