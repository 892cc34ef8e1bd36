//! Flag value parsers.

use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use fdecomp::Interval;

/// `name` or `name=[lo,hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarSpec {
    pub name: String,
    pub domain: Option<Interval>,
}

impl FromStr for VarSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, domain) = match s.split_once('=') {
            None => (s.trim(), None),
            Some((name, dom)) => (name.trim(), Some(parse_interval(dom)?)),
        };
        if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            bail!("invalid variable name `{name}`");
        }
        Ok(VarSpec { name: name.to_string(), domain })
    }
}

fn parse_interval(s: &str) -> anyhow::Result<Interval> {
    let inner =
        s.trim().strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(|| anyhow!("domain `{s}` must look like [lo,hi]"))?;
    let (lo, hi) = inner.split_once(',').ok_or_else(|| anyhow!("domain `{s}` needs two bounds"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("lower bound in `{s}`"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("upper bound in `{s}`"))?;
    if !lo.is_finite() || !hi.is_finite() {
        bail!("domain `{s}` must be finite");
    }
    Interval::new(lo, hi).map_err(|e| anyhow!("{e}"))
}

/// `primitive=eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TolSpec {
    pub primitive: String,
    pub tol: f64,
}

impl FromStr for TolSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (f, eps) = s.split_once('=').ok_or_else(|| anyhow!("tolerance `{s}` must look like sin=0.1"))?;
        let tol: f64 = eps.trim().parse().with_context(|| format!("tolerance in `{s}`"))?;
        if !(tol.is_finite() && tol > 0.0) {
            bail!("tolerance in `{s}` must be positive");
        }
        Ok(TolSpec { primitive: f.trim().to_string(), tol })
    }
}
