//! The standard `C^∞` bump `exp(−1/(1−|u|²))` on the unit ball, used as the
//! test density `g` for degree integrals, as the mollifier `η`, and inside
//! the compactly supported test fields.

use crate::domain::unit_sphere_area;
use crate::linalg::dist;

/// Profile as a function of `q = |u|²`.
#[inline]
pub fn profile(q: f64) -> f64 {
    if q < 1.0 {
        (-1.0 / (1.0 - q)).exp()
    } else {
        0.0
    }
}

/// `∫_{B_1} exp(−1/(1−|u|²)) du` in dimension `n`, by composite Simpson on
/// the radial integral.
pub fn unit_mass(n: usize) -> f64 {
    const STEPS: usize = 4000;
    let h = 1.0 / STEPS as f64;
    let f = |s: f64| profile(s * s) * s.powi(n as i32 - 1);
    let mut acc = f(0.0) + f(1.0);
    for i in 1..STEPS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    unit_sphere_area(n) * acc * h / 3.0
}

/// Scaled bump `g(z) = φ(|z − center| / radius)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
    unit_mass: f64,
}

impl Bump {
    pub fn new(center: &[f64], radius: f64) -> Self {
        Bump {
            center: center.to_vec(),
            radius,
            unit_mass: unit_mass(center.len()),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut q = 0.0;
        for (zi, ci) in z.iter().zip(&self.center) {
            let d = (zi - ci) / self.radius;
            q += d * d;
        }
        profile(q)
    }

    /// Gradient with respect to `z`.
    pub fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let mut q = 0.0;
        for (zi, ci) in z.iter().zip(&self.center) {
            let d = (zi - ci) / self.radius;
            q += d * d;
        }
        if q >= 1.0 {
            out.fill(0.0);
            return;
        }
        let phi = profile(q);
        let dq = -phi / ((1.0 - q) * (1.0 - q));
        for (o, (zi, ci)) in out.iter_mut().zip(z.iter().zip(&self.center)) {
            *o = dq * 2.0 * (zi - ci) / (self.radius * self.radius);
        }
    }

    /// `∫ g` over ℝⁿ.
    pub fn integral(&self) -> f64 {
        self.unit_mass * self.radius.powi(self.dim() as i32)
    }

    pub fn support_contains(&self, z: &[f64]) -> bool {
        dist(z, &self.center) < self.radius
    }
}
