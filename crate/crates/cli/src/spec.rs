//! Parsing of map, domain and point specifications.

use std::fs::File;
use std::io::BufReader;

use topodeg::fields::GridMap;
use topodeg::mapzoo::{parse_preset, tilde_domain, tilde_f, SurfaceMap};
use topodeg::{Domain, Error, MapField, Result};

pub fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("number `{v}`: {e}")))
        })
        .collect()
}

/// `disk:R[:cx,cy]`, `ball:R[:cx,cy,cz]`, `box:lo:hi` or `tilde:d`
/// (`[−1,1]² × (−d, d)`).
pub fn parse_domain(spec: &str, res: usize) -> Result<Domain> {
    let parts: Vec<&str> = spec.split(':').collect();
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("domain `{spec}`: {e}")))
    };
    match parts.as_slice() {
        ["disk", r] => Domain::ball(&[0.0, 0.0], number(r)?, res),
        ["disk", r, c] | ["ball", r, c] => Domain::ball(&parse_point(c)?, number(r)?, res),
        ["ball", r] => Domain::ball(&[0.0, 0.0, 0.0], number(r)?, res),
        ["box", lo, hi] => Domain::boxed(&parse_point(lo)?, &parse_point(hi)?, res),
        ["tilde", d] => tilde_domain(&Domain::boxed(&[-1.0, -1.0], &[1.0, 1.0], res)?, number(d)?),
        _ => Err(Error::Parse(format!("unrecognized domain `{spec}`"))),
    }
}

pub enum MapSpec {
    Field(MapField),
    Surface(SurfaceMap),
}

impl MapSpec {
    pub fn field(self) -> Result<MapField> {
        match self {
            MapSpec::Field(f) => Ok(f),
            MapSpec::Surface(_) => Err(Error::Config("this command needs a map ℝⁿ → ℝⁿ, not a surface".into())),
        }
    }
}

fn surface(name: &str) -> Result<SurfaceMap> {
    let (name, param) = match name.split_once(',') {
        Some((n, p)) => (n, Some(p)),
        None => (name, None),
    };
    match name {
        "flat" => Ok(SurfaceMap::flat_sheet()),
        "stretched" => {
            let s = param.map(|p| p.parse::<f64>()).transpose().map_err(|e| Error::Parse(e.to_string()))?;
            Ok(SurfaceMap::stretched_sheet(s.unwrap_or(2.0)))
        }
        "hemisphere" => Ok(SurfaceMap::hemisphere()),
        "paraboloid" => SurfaceMap::paraboloid(),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Zoo preset `name[:p1,p2]`, `tilde:<surface>:<d>`, `surface:<name>` or
/// `grid:<path>`. Surfaces are `flat`, `stretched[,s]`, `hemisphere` and
/// `paraboloid`.
pub fn parse_map(spec: &str) -> Result<MapSpec> {
    if let Some(path) = spec.strip_prefix("grid:") {
        let file = File::open(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
        return Ok(MapSpec::Field(MapField::from_grid(GridMap::read(BufReader::new(file))?)));
    }
    if let Some(rest) = spec.strip_prefix("tilde:") {
        let (name, d) = rest
            .rsplit_once(':')
            .ok_or_else(|| Error::Parse(format!("`{spec}` needs the form tilde:<surface>:<d>")))?;
        let d = d.parse::<f64>().map_err(|e| Error::Parse(format!("half-thickness `{d}`: {e}")))?;
        return Ok(MapSpec::Field(tilde_f(&surface(name)?, d)?));
    }
    if let Some(name) = spec.strip_prefix("surface:") {
        return Ok(MapSpec::Surface(surface(name)?));
    }
    Ok(MapSpec::Field(parse_preset(spec)?.map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domains() {
        assert_eq!(parse_domain("disk:1", 16).unwrap().dim(), 2);
        assert_eq!(parse_domain("ball:0.5:0,0,1", 16).unwrap().dim(), 3);
        assert_eq!(parse_domain("box:0,0:1,2", 16).unwrap().feature_size(), 1.0);
        assert_eq!(parse_domain("tilde:0.5", 16).unwrap().dim(), 3);
        assert!(parse_domain("square:1", 16).is_err());
    }

    #[test]
    fn maps() {
        assert!(matches!(parse_map("zpow:2").unwrap(), MapSpec::Field(_)));
        assert!(matches!(parse_map("surface:hemisphere").unwrap(), MapSpec::Surface(_)));
        let f = parse_map("tilde:flat:0.5").unwrap().field().unwrap();
        assert_eq!(f.value(&[0.1, 0.2, 0.3]), vec![0.1, 0.2, 0.3]);
        assert!(matches!(parse_map("nope"), Err(Error::UnknownPreset(_))));
    }
}
