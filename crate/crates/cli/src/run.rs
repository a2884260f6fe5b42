//! Dispatch of a [`RunConfig`] to the library and output writing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use topodeg::bmo::{bmo_seminorm, vmo_change_of_variables_check, vmo_degree, BmoPlan, VmoDegreeOptions};
use topodeg::degree::{DegreeOptions, DegreeSolver};
use topodeg::kernel::Bump;
use topodeg::mapzoo::{catalogue, elastic_energy, immersion_energy, Barrier, EnergySpec};
use topodeg::regularity::{continuity_scan, degree_region, f_set, ContinuityOptions, FSetOptions};
use topodeg::{Domain, Error, VERSION};

use crate::config::{Command, RunConfig};
use crate::spec::{parse_domain, parse_map, MapSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INCONCLUSIVE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Exit code for a library error that aborts the run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::Parse(_) | Error::UnknownPreset(_) | Error::Dimension { .. } => EXIT_USAGE,
        _ => EXIT_INCONCLUSIVE,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::EmptyDomain { .. } => "empty_domain",
        Error::BallOutsideDomain { .. } => "ball_outside_domain",
        Error::OutsideTube { .. } => "outside_tube",
        Error::Margin { .. } => "margin",
        Error::BoundaryProximity { .. } => "boundary_proximity",
        Error::Support { .. } => "support",
        Error::Degenerate(_) => "degenerate",
        Error::EmptyRegion(_) => "empty_region",
        Error::Resolution(_) => "resolution",
        Error::Inadmissible { .. } => "inadmissible",
        Error::UnknownPreset(_) => "unknown_preset",
        Error::NoDegree { .. } => "no_degree",
        Error::Dimension { .. } => "dimension",
        Error::Parse(_) => "parse",
        Error::Io(_) => "io",
    }
}

fn error_record(query: &[f64], e: &Error) -> serde_json::Value {
    json!({ "query": query, "error": error_kind(e), "message": e.to_string() })
}

struct Outputs {
    prefix: PathBuf,
    echo: String,
}

impl Outputs {
    fn path(&self, ext: &str) -> PathBuf {
        let mut s = self.prefix.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    }

    fn create(&self, ext: &str) -> Result<(PathBuf, BufWriter<File>), Error> {
        let path = self.path(ext);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        let f = File::create(&path).map_err(|e| io_error(&path, e))?;
        Ok((path, BufWriter::new(f)))
    }

    /// Newline-delimited JSON; the first record carries the version and
    /// configuration.
    fn jsonl<T: Serialize>(&self, cfg: &RunConfig, records: &[T]) -> Result<PathBuf, Error> {
        let (path, mut w) = self.create("jsonl")?;
        let head = json!({ "topodeg": VERSION, "config": cfg });
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "{head}")?;
            for r in records {
                writeln!(w, "{}", serde_json::to_string(r).map_err(std::io::Error::other)?)?;
            }
            w.flush()
        };
        write().map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    fn with_file<F>(&self, ext: &str, f: F) -> Result<PathBuf, Error>
    where
        F: FnOnce(&mut BufWriter<File>, &str) -> Result<(), Error>,
    {
        let (path, mut w) = self.create(ext)?;
        f(&mut w, &self.echo)?;
        w.flush().map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Runs `cfg`, writing artifacts and one summary line per query to
/// `stdout`. Returns the process exit code.
pub fn run<W: Write>(cfg: &RunConfig, stdout: &mut W) -> i32 {
    match dispatch(cfg, stdout) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(stdout, "error: {e}");
            code
        }
    }
}

fn dispatch<W: Write>(cfg: &RunConfig, out: &mut W) -> Result<i32, Error> {
    let outputs = Outputs {
        prefix: cfg.prefix(),
        echo: format!("config {}", cfg.to_json()),
    };
    if cfg.command == Command::Zoo {
        return zoo(cfg, &outputs, out);
    }
    let domain = parse_domain(&cfg.domain, cfg.res)?;
    let map = parse_map(cfg.map.as_deref().unwrap_or_default())?;
    let code = match cfg.command {
        Command::Zoo => unreachable!(),
        Command::Degree => degree(cfg, &outputs, &map.field()?, &domain, out)?,
        Command::Escan => escan(cfg, &outputs, &map.field()?, &domain, out)?,
        Command::Fscan => fscan(cfg, &outputs, &map.field()?, &domain, out)?,
        Command::Bmo => bmo(cfg, &outputs, &map.field()?, &domain, out)?,
        Command::Vmodegree => vmodegree(cfg, &outputs, &map.field()?, &domain, out)?,
        Command::Cov => cov(cfg, &outputs, &map.field()?, &domain, out)?,
        Command::Energy => energy(cfg, &outputs, map, &domain, out)?,
        Command::Scan => scan(cfg, &outputs, &map.field()?, &domain, out)?,
    };
    Ok(code)
}

fn say<W: Write>(out: &mut W, line: String) -> Result<(), Error> {
    writeln!(out, "{line}").map_err(|e| Error::Io(e.to_string()))
}

fn zoo<W: Write>(cfg: &RunConfig, outputs: &Outputs, out: &mut W) -> Result<i32, Error> {
    let entries = catalogue();
    let records: Vec<_> = entries.iter().map(|e| e.record()).collect();
    for r in &records {
        say(out, serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?)?;
    }
    if cfg.out.is_some() {
        outputs.jsonl(cfg, &records)?;
    }
    Ok(EXIT_OK)
}

fn degree<W: Write>(
    cfg: &RunConfig,
    outputs: &Outputs,
    map: &topodeg::MapField,
    domain: &Domain,
    out: &mut W,
) -> Result<i32, Error> {
    let options = DegreeOptions {
        boundary_resolution: cfg.bres,
        bump_radius: cfg.bump_radius,
        ..DegreeOptions::default()
    };
    let mut solver = DegreeSolver::new(map, domain, options)?;
    let mut records = Vec::new();
    let mut code = EXIT_OK;
    for y in &cfg.y {
        let mut parts = vec![format!("y={}", fmt_point(y))];
        let mut values = Vec::new();
        for &m in &cfg.methods {
            let name = serde_json::to_value(m).map_err(|e| Error::Parse(e.to_string()))?;
            let name = name.as_str().unwrap_or_default().to_string();
            match solver.run(y, m) {
                Ok(r) => {
                    if r.inconclusive {
                        code = EXIT_INCONCLUSIVE;
                        parts.push(format!("{name}=inconclusive"));
                    } else {
                        values.push(r.value);
                        parts.push(format!("{name}={}", r.value));
                    }
                    records.push(serde_json::to_value(&r).map_err(|e| Error::Parse(e.to_string()))?);
                }
                Err(e) => {
                    code = code.max(exit_code(&e).min(EXIT_INCONCLUSIVE));
                    parts.push(format!("{name}=error({})", error_kind(&e)));
                    let mut rec = error_record(y, &e);
                    rec["method"] = json!(name);
                    records.push(rec);
                }
            }
        }
        if values.windows(2).any(|w| w[0] != w[1]) {
            code = EXIT_INCONCLUSIVE;
            parts.push("disagree".into());
        }
        say(out, parts.join(" "))?;
    }
    outputs.jsonl(cfg, &records)?;
    Ok(code)
}

fn escan<W: Write>(
    cfg: &RunConfig,
    outputs: &Outputs,
    map: &topodeg::MapField,
    domain: &Domain,
    out: &mut W,
) -> Result<i32, Error> {
    let raster = degree_region(map, domain, None, cfg.y_res, cfg.bres)?;
    outputs.with_file("csv", |w, echo| raster.write_csv(w, Some(echo)))?;
    if raster.dim == 2 {
        outputs.with_file("pgm", |w, echo| raster.write_pgm(w, Some(echo)))?;
    }
    let cells = raster.mask().iter().filter(|b| **b).count();
    say(out, format!("E cells={cells} diam={}", raster.e_diameter()))?;
    Ok(EXIT_OK)
}

fn fscan<W: Write>(
    cfg: &RunConfig,
    outputs: &Outputs,
    map: &topodeg::MapField,
    domain: &Domain,
    out: &mut W,
) -> Result<i32, Error> {
    let opts = FSetOptions {
        y_resolution: cfg.y_res,
        ..FSetOptions::default()
    };
    let mut records = Vec::new();
    let mut code = EXIT_OK;
    for a in &cfg.y {
        match f_set(map, domain, a, &cfg.radii, &opts) {
            Ok(r) => {
                say(
                    out,
                    format!(
                        "a={} diam_F={} empty={} nest_violations={}",
                        fmt_point(a),
                        r.diam_f,
                        r.empty,
                        r.nest_violations()
                    ),
                )?;
                records.push(serde_json::to_value(&r).map_err(|e| Error::Parse(e.to_string()))?);
            }
            Err(e) => {
                code = EXIT_INCONCLUSIVE.max(exit_code(&e));
                say(out, format!("a={} error={}", fmt_point(a), error_kind(&e)))?;
                records.push(error_record(a, &e));
            }
        }
    }
    outputs.jsonl(cfg, &records)?;
    Ok(code)
}

fn bmo<W: Write>(
    cfg: &RunConfig,
    outputs: &Outputs,
    map: &topodeg::MapField,
    domain: &Domain,
    out: &mut W,
) -> Result<i32, Error> {
    let plan = BmoPlan {
        seed: cfg.seed,
        scales: cfg.schedule.clone(),
        centers_per_scale: cfg.centers_per_scale,
        include_center: true,
    };
    let profile = bmo_seminorm(map, domain, &plan)?;
    outputs.with_file("csv", |w, echo| profile.write_csv(w, Some(echo)))?;
    outputs.jsonl(cfg, std::slice::from_ref(&profile))?;
    say(out, format!("seminorm={} balls={}", profile.seminorm, profile.balls.len()))?;
    Ok(EXIT_OK)
}

fn vmo_options(cfg: &RunConfig) -> VmoDegreeOptions {
    VmoDegreeOptions {
        boundary_resolution: cfg.bres,
        ..VmoDegreeOptions::default()
    }
}

fn vmodegree<W: Write>(
    cfg: &RunConfig,
    outputs: &Outputs,
    map: &topodeg::MapField,
    domain: &Domain,
    out: &mut W,
) -> Result<i32, Error> {
    let mut records = Vec::new();
    let mut reports = Vec::new();
    let mut code = EXIT_OK;
    for p in &cfg.y {
        match vmo_degree(map, domain, p, &cfg.schedule, &vmo_options(cfg)) {
            Ok(r) => {
                let degrees: Vec<String> = r
                    .levels
                    .iter()
                    .map(|l| l.degree.map_or("?".into(), |d| d.to_string()))
                    .collect();
                let stable = r.stabilized.map_or("none".into(), |d| d.to_string());
                if r.stabilized.is_none() {
                    code = EXIT_INCONCLUSIVE;
                }
                say(
                    out,
                    format!("p={} degree={stable} levels={} margin={}", fmt_point(p), degrees.join(","), r.margin.margin),
                )?;
                records.push(serde_json::to_value(&r).map_err(|e| Error::Parse(e.to_string()))?);
                reports.push(r);
            }
            Err(e) => {
                code = EXIT_INCONCLUSIVE.max(exit_code(&e));
                say(out, format!("p={} error={}", fmt_point(p), error_kind(&e)))?;
                records.push(error_record(p, &e));
            }
        }
    }
    outputs.jsonl(cfg, &records)?;
    if !reports.is_empty() {
        outputs.with_file("csv", |w, echo| {
            for (i, r) in reports.iter().enumerate() {
                r.write_csv(&mut *w, (i == 0).then_some(echo))?;
            }
            Ok(())
        })?;
    }
    Ok(code)
}

fn cov<W: Write>(
    cfg: &RunConfig,
    outputs: &Outputs,
    map: &topodeg::MapField,
    domain: &Domain,
    out: &mut W,
) -> Result<i32, Error> {
    let mut records = Vec::new();
    let mut code = EXIT_OK;
    for y in &cfg.y {
        let bump = Bump::new(y, cfg.bump_radius);
        match vmo_change_of_variables_check(map, domain, &bump, &cfg.schedule, &vmo_options(cfg)) {
            Ok(r) => {
                say(
                    out,
                    format!(
                        "y={} lhs={} rhs={} residual={} degree={}",
                        fmt_point(y),
                        r.lhs,
                        r.rhs,
                        r.residual,
                        r.degree
                    ),
                )?;
                records.push(serde_json::to_value(&r).map_err(|e| Error::Parse(e.to_string()))?);
            }
            Err(e) => {
                code = EXIT_INCONCLUSIVE.max(exit_code(&e));
                say(out, format!("y={} error={}", fmt_point(y), error_kind(&e)))?;
                records.push(error_record(y, &e));
            }
        }
    }
    outputs.jsonl(cfg, &records)?;
    Ok(code)
}

fn energy<W: Write>(cfg: &RunConfig, outputs: &Outputs, map: MapSpec, domain: &Domain, out: &mut W) -> Result<i32, Error> {
    let record = match map {
        MapSpec::Surface(s) => {
            let e = immersion_energy(&s, domain);
            say(out, format!("stretch={} bending={} total={}", e.stretch, e.bending, e.total))?;
            serde_json::to_value(e)
        }
        MapSpec::Field(f) => {
            let spec = EnergySpec {
                barrier: if cfg.barrier == "none" { Barrier::None } else { Barrier::LogBarrier },
                exponent: cfg.exponent.unwrap_or(domain.dim() as f64),
            };
            let e = elastic_energy(&f, domain, spec)?;
            say(out, format!("energy={}", serde_json::to_string(&e).unwrap_or_default()))?;
            serde_json::to_value(e)
        }
    }
    .map_err(|e| Error::Parse(e.to_string()))?;
    outputs.jsonl(cfg, &[record])?;
    Ok(EXIT_OK)
}

/// Cell centers of a `k^n` lattice over the bounding box that lie in Ω.
fn default_points(domain: &Domain) -> Vec<Vec<f64>> {
    let n = domain.dim();
    let k: usize = if n == 2 { 10 } else { 5 };
    let (lo, hi) = domain.bounding_box();
    let mut pts = Vec::new();
    let total = k.pow(n as u32);
    for i in 0..total {
        let mut rem = i;
        let mut x = vec![0.0; n];
        for a in (0..n).rev() {
            x[a] = lo[a] + ((rem % k) as f64 + 0.5) * (hi[a] - lo[a]) / k as f64;
            rem /= k;
        }
        if domain.contains(&x) {
            pts.push(x);
        }
    }
    pts
}

fn scan<W: Write>(
    cfg: &RunConfig,
    outputs: &Outputs,
    map: &topodeg::MapField,
    domain: &Domain,
    out: &mut W,
) -> Result<i32, Error> {
    let points = if cfg.points.is_empty() { default_points(domain) } else { cfg.points.clone() };
    let opts = ContinuityOptions {
        radii: cfg.radii.clone(),
        trim: cfg.trim,
        ..ContinuityOptions::default()
    };
    let profile = continuity_scan(map, domain, &points, &opts)?;
    outputs.with_file("csv", |w, echo| profile.write_csv(w, Some(echo)))?;
    let suspects = profile.suspects().count();
    say(out, format!("points={} suspect={suspects}", profile.records.len()))?;
    Ok(EXIT_OK)
}
