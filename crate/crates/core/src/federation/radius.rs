use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the server turns client radii into a step budget. Written as
/// `min`, `max`, `median` or `fixed:<steps>`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RadiusStrategy {
    #[default]
    Min,
    Max,
    /// Lower median.
    Median,
    /// A fixed number of steps with no radius constraint.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Radius(f64),
    Steps(usize),
}

impl FromStr for RadiusStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "min" => Ok(Self::Min),
            "max" => Ok(Self::Max),
            "median" => Ok(Self::Median),
            other => {
                let n = other
                    .strip_prefix("fixed:")
                    .and_then(|n| n.trim().parse::<usize>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown radius strategy {s:?} (expected min, max, median or fixed:<steps >= 1>)"
                        ))
                    })?;
                Ok(Self::Fixed(n))
            }
        }
    }
}

impl TryFrom<String> for RadiusStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RadiusStrategy> for String {
    fn from(s: RadiusStrategy) -> String {
        s.to_string()
    }
}

impl fmt::Display for RadiusStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Min => f.write_str("min"),
            Self::Max => f.write_str("max"),
            Self::Median => f.write_str("median"),
            Self::Fixed(n) => write!(f, "fixed:{n}"),
        }
    }
}

pub fn select_radius(strategy: RadiusStrategy, radii: &[f64]) -> Result<Budget> {
    if let RadiusStrategy::Fixed(n) = strategy {
        return Ok(Budget::Steps(n));
    }
    if radii.is_empty() {
        return Err(Error::Config("no client radii to select from".into()));
    }
    if radii.iter().any(|r| r.is_nan()) {
        return Err(Error::NonFinite("client radius".into()));
    }
    let r = match strategy {
        RadiusStrategy::Min => radii.iter().copied().fold(f64::INFINITY, f64::min),
        RadiusStrategy::Max => radii.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        RadiusStrategy::Median => {
            let mut v = radii.to_vec();
            v.sort_by(f64::total_cmp);
            v[(v.len() - 1) / 2]
        }
        RadiusStrategy::Fixed(_) => unreachable!(),
    };
    Ok(Budget::Radius(r))
}
