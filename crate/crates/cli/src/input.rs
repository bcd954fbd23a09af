use std::path::Path;

use anyhow::{bail, Context, Result};
use innerconvex::{fixtures, SemialgebraicSet};

pub struct LoadedSet {
    pub set: SemialgebraicSet,
    /// Fixture name when the set was given by name.
    pub fixture: Option<String>,
}

/// A fixture name, or a path to a set JSON file.
pub fn load_set(arg: &str, ball: Option<f64>) -> Result<LoadedSet> {
    let (mut set, fixture) = match fixtures::by_name(arg) {
        Some(s) => (s, Some(arg.to_string())),
        None => {
            let path = Path::new(arg);
            if !path.exists() {
                bail!(
                    "'{arg}' is neither a file nor a fixture (fixtures: {})",
                    fixtures::NAMES.join(", ")
                );
            }
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
            let set: SemialgebraicSet = serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))?;
            (set, None)
        }
    };
    if let Some(r) = ball {
        set = set.with_ball(r);
    }
    set.validate().with_context(|| format!("invalid set {arg}"))?;
    Ok(LoadedSet { set, fixture })
}

/// `lo1,hi1,lo2,hi2[,...]`.
pub fn parse_bbox(s: &str) -> Result<Vec<[f64; 2]>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad bounding box '{s}'"))?;
    if v.is_empty() || v.len() % 2 != 0 {
        bail!("bounding box needs lo,hi pairs, got '{s}'");
    }
    let b: Vec<[f64; 2]> = v.chunks(2).map(|c| [c[0], c[1]]).collect();
    if b.iter().any(|[lo, hi]| !(lo < hi)) {
        bail!("bounding box '{s}' has an empty interval");
    }
    Ok(b)
}

pub fn bbox_for(loaded: &LoadedSet, given: Option<&str>) -> Result<Vec<[f64; 2]>> {
    let b = match (given, &loaded.fixture) {
        (Some(s), _) => parse_bbox(s)?,
        (None, Some(name)) => fixtures::plot_box(name).expect("every fixture has a plot box"),
        (None, None) => bail!("--bbox is required for sets read from a file"),
    };
    if b.len() != loaded.set.n {
        bail!("bounding box has {} intervals for a set in {} variables", b.len(), loaded.set.n);
    }
    Ok(b)
}

pub fn parse_point(s: &str) -> Result<[f64; 2]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad point '{s}'"))?;
    match v.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => bail!("expected two coordinates, got '{s}'"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_parsing() {
        assert_eq!(parse_bbox("-1,1,0,2").unwrap(), vec![[-1.0, 1.0], [0.0, 2.0]]);
        assert!(parse_bbox("1,0").is_err());
        assert!(parse_bbox("0,1,2").is_err());
        assert!(parse_bbox("a,b").is_err());
    }

    #[test]
    fn fixture_or_file() {
        assert!(load_set("egg", None).unwrap().fixture.is_some());
        assert!(load_set("no-such-thing", None).is_err());
        let s = load_set("hyperbola", Some(5.0)).unwrap();
        assert_eq!(s.set.ball_radius, Some(5.0));
    }
}
