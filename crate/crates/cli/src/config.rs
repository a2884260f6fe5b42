//! Run configuration: command-line parsing, validation and JSON round-trip.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use topodeg::degree::Method;
use topodeg::domain::MIN_RESOLUTION;

use crate::spec::{parse_domain, parse_point};

pub const DEFAULT_SEED: u64 = topodeg::bmo::DEFAULT_SEED;
pub const DEFAULT_RES: usize = 128;
pub const DEFAULT_Y_RES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Zoo,
    Degree,
    Escan,
    Fscan,
    Bmo,
    Vmodegree,
    Cov,
    Energy,
    Scan,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Zoo => "zoo",
            Command::Degree => "degree",
            Command::Escan => "escan",
            Command::Fscan => "fscan",
            Command::Bmo => "bmo",
            Command::Vmodegree => "vmodegree",
            Command::Cov => "cov",
            Command::Energy => "energy",
            Command::Scan => "scan",
        }
    }

    fn needs_map(self) -> bool {
        self != Command::Zoo
    }
}

/// Everything a run depends on. A run is reproducible from this record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    /// Zoo preset `name:p1,p2`, `tilde:<surface>:<d>`, `surface:<name>` or
    /// `grid:<path>`.
    pub map: Option<String>,
    pub domain: String,
    pub res: usize,
    pub bres: Option<usize>,
    pub seed: u64,
    pub jobs: Option<usize>,
    /// Output path prefix.
    pub out: Option<PathBuf>,
    /// Query points: degree probes, the VMO probe, the bump center, or `a`.
    pub y: Vec<Vec<f64>>,
    pub methods: Vec<Method>,
    pub radii: Vec<f64>,
    pub schedule: Vec<f64>,
    pub bump_radius: f64,
    pub y_res: usize,
    pub points: Vec<Vec<f64>>,
    pub trim: f64,
    pub barrier: String,
    pub exponent: Option<f64>,
    pub centers_per_scale: usize,
}

#[derive(Debug)]
pub enum ConfigError {
    /// Bad flag or value, exit code 2.
    Usage(String),
    /// Help or version output requested.
    Display(String),
    Io(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Usage(s) | ConfigError::Display(s) | ConfigError::Io(s) => f.write_str(s),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "topodeg", version, about = "Brouwer degree and regularity diagnostics")]
struct Cli {
    /// Load the whole run configuration from a JSON file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path prefix.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Domain grid resolution (cells per axis, at least 8).
    #[arg(long, global = true)]
    res: Option<usize>,
    /// Boundary mesh resolution.
    #[arg(long, global = true)]
    bres: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Zoo catalogue.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Degree at query points.
    Degree {
        #[command(flatten)]
        common: Common,
        /// `counting`, `integral`, `boundary` or `all`; repeatable.
        #[arg(long, default_value = "all")]
        method: Vec<String>,
        #[arg(long)]
        bump_radius: Option<f64>,
    },
    /// Raster of E(f, Ω).
    Escan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        y_res: Option<usize>,
    },
    /// F(a) over a radius ladder.
    Fscan {
        #[command(flatten)]
        common: Common,
        /// Comma-separated radii, descending.
        #[arg(long)]
        radii: Option<String>,
        #[arg(long)]
        y_res: Option<usize>,
    },
    /// BMO seminorm and VMO modulus.
    Bmo {
        #[command(flatten)]
        common: Common,
        /// Comma-separated dyadic scales.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        centers: Option<usize>,
    },
    /// Mollified VMO degree.
    Vmodegree {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        schedule: Option<String>,
    },
    /// VMO change-of-variables identity for a bump at `--y`.
    Cov {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        bump_radius: Option<f64>,
    },
    /// Elastic or immersion energy.
    Energy {
        #[command(flatten)]
        common: Common,
        /// `log` or `none`.
        #[arg(long, default_value = "log")]
        barrier: String,
        #[arg(long)]
        exponent: Option<f64>,
    },
    /// Continuity classification at sample points.
    Scan {
        #[command(flatten)]
        common: Common,
        /// Sample point `x1,x2[,x3]`; repeatable. Defaults to a 10×10 lattice.
        #[arg(long = "point")]
        points: Vec<String>,
        #[arg(long)]
        radii: Option<String>,
        #[arg(long)]
        trim: Option<f64>,
    },
}

#[derive(Subcommand, Debug)]
enum ZooAction {
    List,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    map: String,
    /// `disk:R[:c]`, `ball:R[:c]`, `box:lo:hi` or `tilde:d`.
    #[arg(long, default_value = "disk:1")]
    domain: String,
    /// Query point `y1,y2[,y3]`; repeatable.
    #[arg(long = "y", allow_hyphen_values = true)]
    y: Vec<String>,
}

fn usage(msg: impl Into<String>) -> ConfigError {
    ConfigError::Usage(msg.into())
}

fn list(s: &str) -> Result<Vec<f64>, ConfigError> {
    parse_point(s).map_err(|e| usage(e.to_string()))
}

fn methods(raw: &[String]) -> Result<Vec<Method>, ConfigError> {
    let mut out = Vec::new();
    for m in raw.iter().flat_map(|s| s.split(',')) {
        if m == "all" {
            out.extend(Method::ALL);
        } else {
            out.push(m.parse().map_err(|e: topodeg::Error| usage(e.to_string()))?);
        }
    }
    out.dedup();
    Ok(out)
}

impl RunConfig {
    fn blank(command: Command) -> Self {
        RunConfig {
            command,
            map: None,
            domain: "disk:1".into(),
            res: DEFAULT_RES,
            bres: None,
            seed: DEFAULT_SEED,
            jobs: None,
            out: None,
            y: Vec::new(),
            methods: Vec::new(),
            radii: Vec::new(),
            schedule: Vec::new(),
            bump_radius: topodeg::degree::DEFAULT_BUMP_RADIUS,
            y_res: DEFAULT_Y_RES,
            points: Vec::new(),
            trim: topodeg::regularity::DEFAULT_TRIM,
            barrier: "log".into(),
            exponent: None,
            centers_per_scale: topodeg::bmo::DEFAULT_CENTERS_PER_SCALE,
        }
    }

    /// Parses `argv` (including the program name), fills defaults and
    /// validates.
    pub fn from_args<I, T>(argv: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                ConfigError::Display(e.to_string())
            }
            _ => usage(e.to_string()),
        })?;
        let mut cfg = match (&cli.config, cli.command) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
                Self::from_json(&text)?
            }
            (None, None) => return Err(usage("a subcommand or --config is required")),
            (None, Some(cmd)) => Self::from_command(cmd)?,
        };
        if let Some(v) = cli.out {
            cfg.out = Some(v);
        }
        if let Some(v) = cli.seed {
            cfg.seed = v;
        }
        if let Some(v) = cli.res {
            cfg.res = v;
        }
        if let Some(v) = cli.bres {
            cfg.bres = Some(v);
        }
        if let Some(v) = cli.jobs {
            cfg.jobs = Some(v);
        }
        cfg.fill_defaults()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_command(cmd: Cmd) -> Result<Self, ConfigError> {
        let schedule = |s: Option<String>| s.map(|v| list(&v)).transpose().map(Option::unwrap_or_default);
        let (mut cfg, common) = match cmd {
            Cmd::Zoo { action: ZooAction::List } => (Self::blank(Command::Zoo), None),
            Cmd::Degree {
                common,
                method,
                bump_radius,
            } => {
                let mut c = Self::blank(Command::Degree);
                c.methods = methods(&method)?;
                if let Some(r) = bump_radius {
                    c.bump_radius = r;
                }
                (c, Some(common))
            }
            Cmd::Escan { common, y_res } => {
                let mut c = Self::blank(Command::Escan);
                c.y_res = y_res.unwrap_or(DEFAULT_Y_RES);
                (c, Some(common))
            }
            Cmd::Fscan { common, radii, y_res } => {
                let mut c = Self::blank(Command::Fscan);
                c.radii = schedule(radii)?;
                c.y_res = y_res.unwrap_or(DEFAULT_Y_RES);
                (c, Some(common))
            }
            Cmd::Bmo {
                common,
                schedule: s,
                centers,
            } => {
                let mut c = Self::blank(Command::Bmo);
                c.schedule = schedule(s)?;
                if let Some(k) = centers {
                    c.centers_per_scale = k;
                }
                (c, Some(common))
            }
            Cmd::Vmodegree { common, schedule: s } => {
                let mut c = Self::blank(Command::Vmodegree);
                c.schedule = schedule(s)?;
                (c, Some(common))
            }
            Cmd::Cov {
                common,
                schedule: s,
                bump_radius,
            } => {
                let mut c = Self::blank(Command::Cov);
                c.schedule = schedule(s)?;
                if let Some(r) = bump_radius {
                    c.bump_radius = r;
                }
                (c, Some(common))
            }
            Cmd::Energy {
                common,
                barrier,
                exponent,
            } => {
                let mut c = Self::blank(Command::Energy);
                c.barrier = barrier;
                c.exponent = exponent;
                (c, Some(common))
            }
            Cmd::Scan {
                common,
                points,
                radii,
                trim,
            } => {
                let mut c = Self::blank(Command::Scan);
                c.points = points.iter().map(|p| list(p)).collect::<Result<_, _>>()?;
                c.radii = schedule(radii)?;
                if let Some(t) = trim {
                    c.trim = t;
                }
                (c, Some(common))
            }
        };
        if let Some(common) = common {
            cfg.map = Some(common.map);
            cfg.domain = common.domain;
            cfg.y = common.y.iter().map(|p| list(p)).collect::<Result<_, _>>()?;
        }
        Ok(cfg)
    }

    fn fill_defaults(&mut self) -> Result<(), ConfigError> {
        if self.command == Command::Zoo {
            return Ok(());
        }
        let domain = parse_domain(&self.domain, self.res.max(MIN_RESOLUTION)).map_err(|e| usage(e.to_string()))?;
        let n = domain.dim();
        match self.command {
            Command::Degree if self.methods.is_empty() => self.methods = Method::ALL.to_vec(),
            Command::Fscan | Command::Scan if self.radii.is_empty() => {
                let f = domain.feature_size();
                self.radii = [0.08, 0.04, 0.02, 0.01].iter().map(|r| r * f).collect();
            }
            Command::Bmo | Command::Vmodegree | Command::Cov if self.schedule.is_empty() => {
                self.schedule = topodeg::bmo::default_schedule(&domain);
            }
            _ => {}
        }
        let needs_y = matches!(
            self.command,
            Command::Degree | Command::Fscan | Command::Vmodegree | Command::Cov
        );
        if needs_y && self.y.is_empty() {
            self.y.push(domain_center(&domain));
        }
        if self.command == Command::Energy && self.exponent.is_none() {
            self.exponent = Some(n as f64);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.res < MIN_RESOLUTION {
            return Err(usage(format!("--res {} is below the minimum {MIN_RESOLUTION}", self.res)));
        }
        if let Some(b) = self.bres {
            if b < topodeg::domain::MIN_BOUNDARY_RESOLUTION {
                return Err(usage(format!(
                    "--bres {b} is below the minimum {}",
                    topodeg::domain::MIN_BOUNDARY_RESOLUTION
                )));
            }
        }
        if self.jobs == Some(0) {
            return Err(usage("--jobs must be positive"));
        }
        if self.command.needs_map() && self.map.is_none() {
            return Err(usage(format!("`{}` needs --map", self.command.name())));
        }
        if self.command != Command::Zoo {
            let domain = parse_domain(&self.domain, self.res).map_err(|e| usage(e.to_string()))?;
            for p in self.y.iter().chain(&self.points) {
                if p.len() != domain.dim() {
                    return Err(usage(format!("point {p:?} does not match the domain dimension {}", domain.dim())));
                }
            }
        }
        if !(self.bump_radius > 0.0) {
            return Err(usage("--bump-radius must be positive"));
        }
        if self.y_res < MIN_RESOLUTION {
            return Err(usage(format!("--y-res {} is below the minimum {MIN_RESOLUTION}", self.y_res)));
        }
        if !matches!(self.barrier.as_str(), "log" | "none") {
            return Err(usage(format!("unknown barrier `{}`", self.barrier)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run configurations serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| usage(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Output prefix, defaulting to the command name.
    pub fn prefix(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(self.command.name()))
    }
}

fn domain_center(domain: &topodeg::Domain) -> Vec<f64> {
    let (lo, hi) = domain.bounding_box();
    lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
}
