//! Acceptance suite. Each test prints one `criterion N ...: PASS|FAIL` line
//! before asserting.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topodeg::bmo::*;
use topodeg::degree::*;
use topodeg::fields::{adjugate_identity_check, TestField};
use topodeg::kernel::Bump;
use topodeg::mapzoo::*;
use topodeg::quadrature::Quadrature;
use topodeg::regularity::*;
use topodeg::{Domain, MapField};

const ROUNDOFF: f64 = 1e-12;

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn disk(res: usize) -> Domain {
    Domain::unit_disk(res).unwrap()
}

fn zoo(name: &str, params: &[f64]) -> MapField {
    preset(name, params).unwrap().map
}

fn smooth_presets() -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("identity", vec![]),
        ("translate", vec![2.0, 0.0]),
        ("linear", vec![1.0, 0.0, 0.0, -1.0]),
        ("rotation", vec![PI / 3.0]),
        ("zpow", vec![2.0]),
        ("zpow", vec![3.0]),
        ("diffeo1", vec![]),
    ]
}

fn two_dim_catalogue() -> Vec<ZooEntry> {
    catalogue().into_iter().filter(|e| e.map.source_dim() == 2).collect()
}

#[test]
fn criterion_01_cross_method_agreement() {
    let start = Instant::now();
    let d = disk(256);
    let maps = [
        ("identity", vec![]),
        ("rotation", vec![PI / 3.0]),
        ("linear", vec![1.0, 0.0, 0.0, -1.0]),
        ("zpow", vec![2.0]),
        ("zpow", vec![3.0]),
        ("diffeo1", vec![]),
    ];
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut worst_residual: f64 = 0.0;
    for (name, params) in &maps {
        let map = zoo(name, params);
        let mut solver = DegreeSolver::new(&map, &d, DegreeOptions::default()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let y = [-0.5 + 0.25 * i as f64, -0.5 + 0.25 * j as f64];
                let gap = solver.image().distance(&y);
                if gap <= solver.clearance().max(DEFAULT_BUMP_RADIUS) {
                    continue;
                }
                checked += 1;
                let c = solver.counting(&y).unwrap();
                let w = solver.topological(&y).unwrap();
                let g = solver.integral(&y).unwrap();
                let b = solver.boundary(&y).unwrap();
                worst_residual = worst_residual.max(g.residual);
                let agree = !c.inconclusive
                    && !g.inconclusive
                    && !b.inconclusive
                    && c.value == w
                    && g.value == w
                    && b.value == w
                    && g.residual < 0.05;
                if !agree {
                    failures.push(format!("{name}{params:?} y={y:?}: {} {w} {} {}", c.value, g.value, b.value));
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        1,
        "cross-method degree agreement",
        failures.is_empty() && checked >= 100 && elapsed < 60.0,
        format!(
            "{checked} probes, worst integral residual {worst_residual:.2e}, {elapsed:.1} s, failures {failures:?}"
        ),
    );
}

/// Roots of `z^k = y` inside the unit disk, each with `det = k²|z|^{2(k−1)} > 0`.
fn zpow_oracle(k: u32, y: [f64; 2]) -> i64 {
    let (r, t) = (y[0].hypot(y[1]), y[1].atan2(y[0]));
    (0..k)
        .map(|j| {
            let rho = r.powf(1.0 / k as f64);
            let phi = (t + 2.0 * PI * j as f64) / k as f64;
            (rho * phi.cos(), rho * phi.sin())
        })
        .filter(|(a, b)| a.hypot(*b) < 1.0)
        .count() as i64
}

#[test]
fn criterion_02_zpow_degree() {
    let d = disk(256);
    let mut failures = Vec::new();
    let mut checked = 0;
    for k in 1..=3u32 {
        let map = zoo("zpow", &[k as f64]);
        let mut solver = DegreeSolver::new(&map, &d, DegreeOptions::default()).unwrap();
        for r in [0.1, 0.3, 0.5] {
            for a in 0..6 {
                let t = 0.4 + a as f64 * PI / 3.0;
                let y = [r * t.cos(), r * t.sin()];
                let oracle = zpow_oracle(k, y);
                checked += 1;
                let values = [
                    solver.counting(&y).unwrap().value,
                    solver.integral(&y).unwrap().value,
                    solver.boundary(&y).unwrap().value,
                    solver.topological(&y).unwrap(),
                ];
                if oracle != k as i64 || values.iter().any(|v| *v != oracle) {
                    failures.push(format!("k={k} y={y:?} oracle {oracle} got {values:?}"));
                }
            }
        }
    }
    verdict(
        2,
        "deg(zpow:k) = k",
        failures.is_empty(),
        format!("{checked} probes, failures {failures:?}"),
    );
}

#[test]
fn criterion_03_change_of_variables() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, params, y) in [("diffeo1", vec![], [0.1, 0.2]), ("zpow", vec![2.0], [0.25, 0.0])] {
        let map = zoo(name, &params);
        let residual = |res: usize| {
            let d = disk(res);
            let mut solver = DegreeSolver::new(&map, &d, DegreeOptions::default()).unwrap();
            let deg = solver.counting(&y).unwrap().value as f64;
            (solver.integral(&y).unwrap().raw - deg).abs() / deg.abs()
        };
        let (coarse, fine) = (residual(128), residual(256));
        let ok = fine < 1e-2 && coarse / fine >= 1.8;
        pass &= ok;
        lines.push(format!("{name}: {coarse:.2e} -> {fine:.2e}"));
    }
    verdict(3, "change-of-variables residual", pass, lines.join(", "));
}

#[test]
fn criterion_04_adjugate_identity() {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for entry in two_dim_catalogue().into_iter().filter(|e| e.properties.sobolev_critical) {
        let fields = TestField::standard_set(&disk(128));
        for (i, field) in fields.iter().enumerate() {
            let coarse = adjugate_identity_check(&entry.map, &disk(128), field);
            let fine = adjugate_identity_check(&entry.map, &disk(256), field);
            worst = worst.max(fine);
            let ok = fine < 1e-2 && (fine <= coarse || fine < ROUNDOFF);
            if !ok {
                notes.push(format!("{} field {i}: {coarse:.2e} -> {fine:.2e}", entry.name));
            }
            pass &= ok;
        }
    }
    verdict(
        4,
        "adjugate null-Lagrangian identity",
        pass,
        format!("worst residual {worst:.2e}, failures {notes:?}"),
    );
}

#[test]
fn criterion_05_eosc_bound() {
    let d = disk(128);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = Vec::new();
    let mut checked = 0;
    for entry in two_dim_catalogue()
        .into_iter()
        .filter(|e| matches!(e.properties.det_sign, DetSign::Positive | DetSign::NonNegative))
    {
        for _ in 0..20 {
            let (x, r) = loop {
                let x = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
                let c = d.clearance(&x);
                if c > 0.05 {
                    break (x, rng.gen_range(0.02..c.min(0.4)));
                }
            };
            checked += 1;
            let b = eosc_bound_check(&entry.map, &d, &x, r, DEFAULT_TRIM).unwrap();
            if !b.holds {
                violations.push(format!("{} x={x:?} r={r:.3}: {} > 2·{}", entry.name, b.eosc, b.osc_sphere));
            }
        }
    }
    verdict(
        5,
        "eosc <= 2 osc on spheres",
        violations.is_empty(),
        format!("{checked} balls, violations {violations:?}"),
    );
}

#[test]
fn criterion_06_morrey_ratio() {
    let d = disk(128);
    let a = [0.1, 0.05];
    let radii: Vec<f64> = (0..10).map(|k| 0.4 * 0.6f64.powi(k)).collect();
    let smooth: Vec<String> = smooth_presets().iter().map(|(n, _)| n.to_string()).collect();
    let mut pass = true;
    let mut notes = Vec::new();
    for entry in two_dim_catalogue() {
        let ratios: Vec<f64> = radii
            .iter()
            .map(|&r| morrey_sphere_check(&entry.map, &d, &a, r).unwrap().ratio)
            .collect();
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        pass &= max.is_finite();
        if smooth.contains(&entry.name) {
            let spread = max / min;
            pass &= spread < 10.0;
            notes.push(format!("{}: {spread:.2}", entry.name));
        }
    }
    verdict(6, "Morrey sphere ratio", pass, format!("max/min over radii {notes:?}"));
}

#[test]
fn criterion_07_e_and_f_sets() {
    let d = disk(128);
    let radii = [0.2, 0.1, 0.05, 0.025];
    let angle = zoo("angle", &[]);
    let at_origin = f_set(&angle, &d, &[0.0, 0.0], &radii, &FSetOptions::default()).unwrap();
    let diffeo = zoo("diffeo1", &[]);
    let modulus = grid_modulus(&diffeo, &d);
    let mut nest = at_origin.nest_violations();
    let mut worst_f: f64 = 0.0;
    for i in -1..=1 {
        for j in -1..=1 {
            let a = [0.3 * i as f64, 0.3 * j as f64];
            let r = f_set(&diffeo, &d, &a, &radii, &FSetOptions::default()).unwrap();
            nest += r.nest_violations();
            worst_f = worst_f.max(r.diam_f);
        }
    }
    let pass = nest == 0 && (at_origin.diam_f - 2.0).abs() <= 0.05 && worst_f < 10.0 * modulus;
    verdict(
        7,
        "E/F machinery",
        pass,
        format!(
            "nest violations {nest}, diam F(0) angle {:.4}, max diam F diffeo1 {worst_f:.2e} vs 10·modulus {:.2e}",
            at_origin.diam_f,
            10.0 * modulus
        ),
    );
}

#[test]
fn criterion_08_continuity_classification() {
    let d = disk(128);
    let lattice: Vec<Vec<f64>> = (0..100)
        .map(|k| vec![-0.6 + 1.2 * ((k % 10) as f64 + 0.5) / 10.0, -0.6 + 1.2 * ((k / 10) as f64 + 0.5) / 10.0])
        .collect();
    let opts = ContinuityOptions::default();
    let diffeo = continuity_scan(&zoo("diffeo1", &[]), &d, &lattice, &opts).unwrap();
    let diffeo_suspects = diffeo.suspects().count();
    let near_origin = vec![vec![0.0, 0.0], vec![0.004, 0.003]];
    let mut punctured = Vec::new();
    for name in ["angle", "cavitation"] {
        let p = continuity_scan(&zoo(name, &[]), &d, &near_origin, &opts).unwrap();
        punctured.push(p.suspects().count() == near_origin.len());
    }
    let cav = zoo("cavitation", &[]);
    let deltas = [0.1, 0.05, 0.025, 0.0125];
    let energies: Vec<f64> = deltas
        .iter()
        .map(|&delta| annulus_energy(&cav, &[0.0, 0.0], delta, 1.0, 2.0).unwrap())
        .collect();
    let oracle = |delta: f64| 2.0 * PI * ((1.0 / delta).ln() + 3.0 - 2.0 * delta - delta * delta);
    let oracle_err = deltas
        .iter()
        .zip(&energies)
        .map(|(dl, e)| (e - oracle(*dl)).abs() / oracle(*dl))
        .fold(0.0, f64::max);
    let fit = log_fit(&deltas, &energies);
    let slope_ok = (fit.slope - 2.0 * PI).abs() <= 0.1 * 2.0 * PI;
    let pass = diffeo_suspects == 0 && punctured.iter().all(|b| *b) && fit.r_squared > 0.99 && slope_ok && oracle_err < 0.1;
    verdict(
        8,
        "continuity classification",
        pass,
        format!(
            "diffeo1 suspects {diffeo_suspects}/100, punctured flagged {punctured:?}, slope {:.4} vs 2π, R² {:.5}, oracle rel err {oracle_err:.2e}",
            fit.slope, fit.r_squared
        ),
    );
}

#[test]
fn criterion_09_bmo_vmo() {
    let d = disk(128);
    let plan = BmoPlan::default_for(&d);
    let constant = MapField::analytic("const", 2, 2, |_, o| o.copy_from_slice(&[0.4, -0.1]));
    let c = bmo_seminorm(&constant, &d, &plan).unwrap().seminorm;
    let mut pass = c == 0.0;
    let mut notes = vec![format!("constant {c}")];
    for entry in two_dim_catalogue() {
        if let Some(sup) = entry.properties.sup_norm {
            let s = bmo_seminorm(&entry.map, &d, &plan).unwrap().seminorm;
            if s > 2.0 * sup * 1.01 {
                pass = false;
                notes.push(format!("{} seminorm {s} > 2·{sup}", entry.name));
            }
        }
    }
    let eps = [0.2, 0.1, 0.05, 0.025];
    let angle = vmo_modulus(&zoo("angle", &[]), &d, &eps, DEFAULT_SEED).unwrap();
    let (lo, hi) = angle
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(s.omega), b.max(s.omega)));
    let spread = (hi - lo) / hi;
    pass &= spread < 0.05;
    notes.push(format!("angle ω spread {spread:.2e}"));
    for entry in two_dim_catalogue().into_iter().filter(|e| e.properties.sobolev_critical) {
        let t = vmo_modulus(&entry.map, &d, &eps, DEFAULT_SEED).unwrap();
        let inv = modulus_inversions(&t);
        if inv > 1 {
            pass = false;
            notes.push(format!("{} has {inv} inversions", entry.name));
        }
    }
    verdict(9, "BMO/VMO estimates", pass, notes.join(", "));
}

#[test]
fn criterion_10_lemma_ab() {
    let q = Quadrature::ball(&[0.0, 0.0], 1.0, 24, None);
    let weights = q.weights().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..1000 {
        let coef: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let noise = rng.gen_range(0.0..2.0);
        let g: Vec<f64> = q
            .iter()
            .map(|(x, _)| coef[0] + coef[1] * x[0] + coef[2] * x[1] * x[1] + coef[3] * (5.0 * x[0]).sin() + noise * rng.gen_range(-1.0..1.0))
            .collect();
        let center = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let radius = rng.gen_range(0.1..0.5);
        let in_a: Vec<bool> = q
            .iter()
            .map(|(x, _)| (x[0] - center[0]).hypot(x[1] - center[1]) < radius)
            .collect();
        if !in_a.iter().any(|b| *b) {
            continue;
        }
        let (lhs, rhs) = lemma_ab(&g, &weights, &in_a);
        tightest = tightest.min(rhs - lhs);
        if lhs > rhs + 1e-9 {
            violations += 1;
        }
    }
    verdict(
        10,
        "Lemma A-B inequality",
        violations == 0,
        format!("1000 trials, {violations} violations, smallest slack {tightest:.3e}"),
    );
}

#[test]
fn criterion_11_vmo_degree() {
    let opts = VmoDegreeOptions::default();
    let d = disk(128);
    let z2 = zoo("zpow", &[2.0]);
    let p = [0.25, 0.0];
    let classical = DegreeSolver::new(&z2, &d, DegreeOptions::default()).unwrap().counting(&p).unwrap().value;
    let r = vmo_degree(&z2, &d, &p, &default_schedule(&d), &opts).unwrap();
    let moll: Vec<f64> = default_schedule(&d).into_iter().filter(|e| *e < d.tube_width()).collect();
    let persist = margin_persistence(&z2, &d, &p, &moll).unwrap();

    let base = Domain::boxed(&[-1.0, -1.0], &[1.0, 1.0], 32).unwrap();
    let slab = tilde_domain(&base, 0.5).unwrap();
    let f = tilde_f(&SurfaceMap::flat_sheet(), 0.5).unwrap();
    let q = [0.1, -0.2, 0.05];
    let flat_classical = DegreeSolver::new(&f, &slab, DegreeOptions::default()).unwrap().topological(&q).unwrap();
    let schedule = [0.1, 0.05, 0.025];
    let rf = vmo_degree(&f, &slab, &q, &schedule, &opts).unwrap();
    let moll_f: Vec<f64> = schedule.iter().copied().filter(|e| *e < slab.tube_width()).collect();
    let persist_f = margin_persistence(&f, &slab, &q, &moll_f).unwrap();

    let pass = r.stabilized == Some(classical)
        && classical == 2
        && rf.stabilized == Some(flat_classical)
        && flat_classical == 1
        && r.margin.margin > 0.0
        && rf.margin.margin > 0.0
        && persist.holds
        && persist_f.holds;
    verdict(
        11,
        "VMO degree stabilization",
        pass,
        format!(
            "zpow:2 {:?} (classical {classical}), d0 {:.3e}, persistence {:?}; flat {:?} (classical {flat_classical}), d0 {:.3e}, persistence {:?}",
            r.stabilized, r.margin.margin, persist.margins, rf.stabilized, rf.margin.margin, persist_f.margins
        ),
    );
}

#[test]
fn criterion_12_vmo_change_of_variables() {
    let opts = VmoDegreeOptions::default();
    let d = disk(256);
    let z2 = zoo("zpow", &[2.0]);
    let a = vmo_change_of_variables_check(&z2, &d, &Bump::new(&[0.25, 0.0], 0.1), &default_schedule(&d), &opts).unwrap();
    let base = Domain::boxed(&[-1.0, -1.0], &[1.0, 1.0], 256).unwrap();
    let slab = tilde_domain(&base, 0.5).unwrap();
    let f = tilde_f(&SurfaceMap::flat_sheet(), 0.5).unwrap();
    let b = vmo_change_of_variables_check(&f, &slab, &Bump::new(&[0.1, -0.2, 0.05], 0.1), &[0.1, 0.05, 0.025], &opts)
        .unwrap();
    verdict(
        12,
        "VMO change-of-variables residual",
        a.residual < 2e-2 && b.residual < 2e-2,
        format!("zpow:2 {:.2e} (deg {}), flat sheet {:.2e} (deg {})", a.residual, a.degree, b.residual, b.degree),
    );
}

fn pipeline_bytes() -> Vec<u8> {
    let d = disk(64);
    let echo = Some("config determinism");
    let mut bytes = Vec::new();
    let angle = zoo("angle", &[]);
    let plan = BmoPlan::default_for(&d);
    bmo_seminorm(&angle, &d, &plan).unwrap().write_csv(&mut bytes, echo).unwrap();
    let z2 = zoo("zpow", &[2.0]);
    let raster = degree_region(&z2, &d, None, 128, None).unwrap();
    raster.write_pgm(&mut bytes, echo).unwrap();
    raster.write_csv(&mut bytes, echo).unwrap();
    vmo_degree(&z2, &d, &[0.25, 0.0], &default_schedule(&d), &VmoDegreeOptions::default())
        .unwrap()
        .write_csv(&mut bytes, echo)
        .unwrap();
    let pts: Vec<Vec<f64>> = (0..10).map(|k| vec![-0.5 + 0.1 * k as f64, 0.07]).collect();
    continuity_scan(&zoo("diffeo1", &[]), &d, &pts, &ContinuityOptions::default())
        .unwrap()
        .write_csv(&mut bytes, echo)
        .unwrap();
    let mut solver = DegreeSolver::new(&z2, &d, DegreeOptions::default()).unwrap();
    for m in Method::ALL {
        let r = solver.run(&[0.25, 0.0], m).unwrap();
        bytes.extend(format!("{} {:?}\n", topodeg::report::float(r.raw), r.value).bytes());
    }
    bytes
}

#[test]
fn criterion_13_determinism() {
    let runs: Vec<Vec<u8>> = [1usize, 3, 1]
        .iter()
        .map(|&threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(pipeline_bytes)
        })
        .collect();
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        13,
        "determinism",
        same,
        format!("3 runs (1, 3, 1 threads), {} bytes each", runs[0].len()),
    );
}
