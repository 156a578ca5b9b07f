//! `n,prob` CSV with a trailing `# tail_bound=<value>` comment.

use super::{PhotonNumberDistribution, StatsError};
use std::fmt::Write as _;

pub fn distribution_to_csv(dist: &PhotonNumberDistribution) -> String {
    let mut out = String::from("n,prob\n");
    for (n, p) in dist.probs.iter().enumerate() {
        let _ = writeln!(out, "{n},{p:e}");
    }
    let _ = writeln!(out, "# tail_bound={:e}", dist.tail_bound);
    out
}

pub fn distribution_from_csv(text: &str) -> Result<PhotonNumberDistribution, StatsError> {
    let bad = |msg: String| StatsError::Csv(msg);
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("n,prob") {
        return Err(bad("missing `n,prob` header".into()));
    }
    let mut probs = Vec::new();
    let mut tail = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("tail_bound=") {
                tail = Some(v.parse::<f64>().map_err(|_| bad(format!("bad tail bound {v:?}")))?);
            }
            continue;
        }
        let (n, p) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("malformed row {line:?}")))?;
        let n: usize = n.parse().map_err(|_| bad(format!("bad n in {line:?}")))?;
        if n != probs.len() {
            return Err(bad(format!("expected n = {}, found {n}", probs.len())));
        }
        probs.push(p.parse().map_err(|_| bad(format!("bad prob in {line:?}")))?);
    }
    let tail = tail.ok_or_else(|| bad("missing `# tail_bound=` line".into()))?;
    PhotonNumberDistribution::new(probs, tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statistics::pn_tmsv;

    #[test]
    fn round_trip_is_exact() {
        let d = pn_tmsv(0.33, 25).unwrap();
        let text = distribution_to_csv(&d);
        assert!(text.trim_end().ends_with(&format!("# tail_bound={:e}", d.tail_bound)));
        assert_eq!(distribution_from_csv(&text).unwrap(), d);
    }

    #[test]
    fn missing_tail_is_an_error() {
        assert!(distribution_from_csv("n,prob\n0,1\n").is_err());
        assert!(distribution_from_csv("n,prob\n1,1\n# tail_bound=0\n").is_err());
    }
}
