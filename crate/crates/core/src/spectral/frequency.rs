use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the mixer's frequency heads are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyStrategy {
    /// Fixed ranking measured offline, highest-ranked first.
    #[serde(alias = "pp")]
    PretrainedPriors,
    /// DC plus uniformly drawn frequencies under a seed.
    #[serde(alias = "rs")]
    RandomSelection,
    /// Highest weights of a learned importance map, recomputed per pass.
    #[serde(alias = "da")]
    DynamicAssignment,
}

impl std::str::FromStr for FrequencyStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained_priors" | "pp" => Ok(Self::PretrainedPriors),
            "random_selection" | "rs" => Ok(Self::RandomSelection),
            "dynamic_assignment" | "da" => Ok(Self::DynamicAssignment),
            other => Err(Error::config(format!("unknown frequency strategy {other:?}"))),
        }
    }
}

/// Ordered frequency indices selected for the mixer heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencySpec {
    pub strategy: FrequencyStrategy,
    pub p: usize,
    pub indices: Vec<(usize, usize)>,
    pub seed: Option<u64>,
}

impl FrequencySpec {
    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::config("frequency spec selects no frequencies"));
        }
        for (i, &(u, v)) in self.indices.iter().enumerate() {
            if u >= self.p || v >= self.p {
                return Err(Error::config(format!(
                    "frequency ({u}, {v}) outside the {0}x{0} grid",
                    self.p
                )));
            }
            if self.indices[..i].contains(&(u, v)) {
                return Err(Error::config(format!("frequency ({u}, {v}) selected twice")));
            }
        }
        if self.strategy == FrequencyStrategy::RandomSelection && !self.indices.contains(&(0, 0)) {
            return Err(Error::config("random selection must keep the DC frequency"));
        }
        Ok(())
    }
}

const BUILTIN_PRIORS: &str = include_str!("../../data/frequency_priors.txt");

/// Parse "u v" rows; blank lines and `#` comments are skipped.
pub fn parse_priority_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [u, v] => u.parse::<usize>().ok().zip(v.parse::<usize>().ok()),
            _ => None,
        };
        let pair = parsed.ok_or_else(|| {
            Error::config(format!("priority list line {}: expected \"u v\", got {line:?}", lineno + 1))
        })?;
        out.push(pair);
    }
    Ok(out)
}

pub fn load_priority_file(path: &Path) -> Result<Vec<(usize, usize)>> {
    parse_priority_list(&std::fs::read_to_string(path)?)
}

pub fn builtin_priorities() -> Vec<(usize, usize)> {
    parse_priority_list(BUILTIN_PRIORS).expect("bundled priority list parses")
}

/// All `p × p` frequencies in zigzag order from DC outward.
pub fn zigzag(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(p * p);
    for s in 0..(2 * p).saturating_sub(1) {
        let lo = s.saturating_sub(p - 1);
        let hi = s.min(p - 1);
        if s % 2 == 0 {
            out.extend((lo..=hi).rev().map(|u| (u, s - u)));
        } else {
            out.extend((lo..=hi).map(|u| (u, s - u)));
        }
    }
    out
}

/// Full priority order on a `p × p` grid: the in-range entries of `list`
/// followed by the remaining frequencies in zigzag order.
pub fn priority_order(p: usize, list: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(p * p);
    for &(u, v) in list.iter().chain(zigzag(p).iter()) {
        if u < p && v < p && !out.contains(&(u, v)) {
            out.push((u, v));
        }
    }
    out
}

/// Top `m` cells of a row-major `p × p` importance map, heaviest first with
/// ties broken by lexicographic `(u, v)`.
pub fn top_frequencies(importance: &[f64], p: usize, m: usize) -> Result<Vec<(usize, usize)>> {
    if importance.len() != p * p {
        return Err(Error::dims("importance map", &[p, p], &[importance.len()]));
    }
    if importance.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("importance map holds a non-finite weight".into()));
    }
    let mut cells: Vec<usize> = (0..p * p).collect();
    cells.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    Ok(cells.into_iter().take(m).map(|i| (i / p, i % p)).collect())
}

/// Choose `m` frequencies on a `p × p` grid.
///
/// `priorities` overrides the bundled ranking for the pretrained-priors
/// strategy; `importance` is required for dynamic assignment.
pub fn select_frequencies(
    strategy: FrequencyStrategy,
    m: usize,
    p: usize,
    seed: Option<u64>,
    importance: Option<&[f64]>,
    priorities: Option<&[(usize, usize)]>,
) -> Result<FrequencySpec> {
    if p == 0 || m == 0 || m > p * p {
        return Err(Error::config(format!(
            "cannot select {m} frequencies from a {p}x{p} grid"
        )));
    }
    let (indices, seed) = match strategy {
        FrequencyStrategy::PretrainedPriors => {
            let builtin;
            let list = match priorities {
                Some(l) => l,
                None => {
                    builtin = builtin_priorities();
                    &builtin
                }
            };
            (priority_order(p, list).into_iter().take(m).collect(), None)
        }
        FrequencyStrategy::RandomSelection => {
            let seed = seed.unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rest: Vec<(usize, usize)> = (0..p * p).skip(1).map(|i| (i / p, i % p)).collect();
            let mut picked = vec![(0, 0)];
            picked.extend(
                rand::seq::index::sample(&mut rng, rest.len(), m - 1)
                    .into_iter()
                    .map(|i| rest[i]),
            );
            (picked, Some(seed))
        }
        FrequencyStrategy::DynamicAssignment => {
            let map = importance.ok_or_else(|| {
                Error::usage("dynamic assignment needs an importance map")
            })?;
            (top_frequencies(map, p, m)?, None)
        }
    };
    let spec = FrequencySpec { strategy, p, indices, seed };
    spec.validate()?;
    Ok(spec)
}
