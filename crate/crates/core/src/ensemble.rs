//! Easy-ensemble training: fog-free rows are dealt into disjoint shards, each
//! shard is joined by the fog rows and rebalanced, one boosted model is
//! trained per shard, and probabilities are averaged.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::gbdt::{self, check_manifest, BoostedModel, GbdtConfig};
use crate::objectives::Objective;

pub const ENSEMBLE_FORMAT: &str = "seafog-ensemble";
pub const ENSEMBLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    None,
    Undersample,
    Oversample,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::None => "none",
            Strategy::Undersample => "undersample",
            Strategy::Oversample => "oversample",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Strategy::None),
            "undersample" => Ok(Strategy::Undersample),
            "oversample" => Ok(Strategy::Oversample),
            _ => Err(Error::Config(format!("unknown strategy {s:?}; expected none, undersample or oversample"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub members: usize,
    pub strategy: Strategy,
    /// Target fog fraction of each rebalanced subset.
    pub ratio: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { members: 10, strategy: Strategy::Undersample, ratio: 0.1, threshold: 0.5, seed: 0 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("fog ratio must be in (0, 1], got {}", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn member_seed(&self, k: usize) -> u64 {
        self.seed ^ k as u64
    }
}

/// Row indices (sorted, repeats allowed) of one member's training subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subset {
    pub rows: Vec<usize>,
}

impl Subset {
    /// First 16 bytes of SHA-256 over the row indices as little-endian u64, hex.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for &r in &self.rows {
            h.update((r as u64).to_le_bytes());
        }
        h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Fog-free rows needed beside `fog` fog rows for fog fraction `ratio`.
fn fog_free_needed(fog: usize, ratio: f64) -> usize {
    (fog as f64 * (1.0 - ratio) / ratio + 1e-9).floor() as usize
}

/// Fog rows needed beside `fog_free` fog-free rows, rounded up.
fn fog_needed(fog_free: usize, ratio: f64) -> usize {
    if ratio >= 1.0 {
        return usize::MAX;
    }
    (ratio * fog_free as f64 / (1.0 - ratio) - 1e-9).ceil() as usize
}

pub fn partition_resample(matrix: &FeatureMatrix, cfg: &EnsembleConfig) -> Result<Vec<Subset>> {
    cfg.validate()?;
    let labels = matrix.labels();
    let fog: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let free: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if fog.is_empty() {
        return Err(Error::Training("no fog rows; the target fog ratio is unreachable".into()));
    }
    let n = cfg.members;
    // round-robin deal: shard sizes differ by at most one row
    let mut shards: Vec<Vec<usize>> = vec![Vec::with_capacity(free.len() / n + 1); n];
    for (j, &r) in free.iter().enumerate() {
        shards[j % n].push(r);
    }
    let mut out = Vec::with_capacity(n);
    for (k, shard) in shards.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.member_seed(k));
        let mut rows: Vec<usize> = fog.clone();
        match cfg.strategy {
            Strategy::None => rows.extend_from_slice(&shard),
            Strategy::Undersample => {
                let keep = fog_free_needed(fog.len(), cfg.ratio);
                if shard.len() <= keep {
                    rows.extend_from_slice(&shard);
                } else {
                    rows.extend(sample(&mut rng, shard.len(), keep).into_iter().map(|i| shard[i]));
                }
            }
            Strategy::Oversample => {
                let want = fog_needed(shard.len(), cfg.ratio);
                if cfg.ratio >= 1.0 && !shard.is_empty() {
                    return Err(Error::Training("fog ratio 1 is unreachable by oversampling".into()));
                }
                if want > fog.len() {
                    for _ in 0..want - fog.len() {
                        rows.push(fog[rng.gen_range(0..fog.len())]);
                    }
                }
                rows.extend_from_slice(&shard);
            }
        }
        rows.sort_unstable();
        out.push(Subset { rows });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub config: EnsembleConfig,
    pub members: Vec<BoostedModel>,
    pub fingerprints: Vec<String>,
}

/// Validation rows reweighted so fog carries `ratio` of the total weight,
/// matching the members' resampled class balance. `None` when the
/// validation set lacks a class.
pub fn rebalance_weights(val: &FeatureMatrix, ratio: f64) -> Result<Option<FeatureMatrix>> {
    let w = val.weights();
    let (mut fog, mut free) = (0.0f64, 0.0f64);
    for (&y, &wi) in val.labels().iter().zip(w) {
        if y == 1 {
            fog += f64::from(wi);
        } else {
            free += f64::from(wi);
        }
    }
    if fog == 0.0 || free == 0.0 || ratio >= 1.0 {
        return Ok(None);
    }
    let scale = (ratio * free / ((1.0 - ratio) * fog)) as f32;
    let weights = val.labels().iter().zip(w).map(|(&y, &wi)| if y == 1 { wi * scale } else { wi }).collect();
    val.with_weights(weights).map(Some)
}

/// Trains one model per subset, concurrently. Member `k` trains with seed
/// `seed ⊕ k`.
pub fn train_ensemble(
    matrix: &FeatureMatrix,
    subsets: &[Subset],
    val: Option<&FeatureMatrix>,
    objective: &Objective,
    gbdt_cfg: &GbdtConfig,
    cfg: &EnsembleConfig,
) -> Result<EnsembleModel> {
    if subsets.is_empty() {
        return Err(Error::Training("no training subsets".into()));
    }
    let rebalanced = match (val, cfg.strategy) {
        (Some(v), Strategy::Undersample | Strategy::Oversample) => rebalance_weights(v, cfg.ratio)?,
        _ => None,
    };
    let val = rebalanced.as_ref().or(val);
    let members = subsets
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let data = matrix.select_rows(&s.rows);
            let mc = GbdtConfig { seed: cfg.member_seed(k), ..*gbdt_cfg };
            gbdt::train(&data, val, objective, &mc)
                .map(|(m, _)| m)
                .map_err(|e| Error::Member { member: k, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        config: EnsembleConfig { members: subsets.len(), ..*cfg },
        members,
        fingerprints: subsets.iter().map(Subset::fingerprint).collect(),
    })
}

/// Partition, resample and train in one step.
pub fn fit(
    matrix: &FeatureMatrix,
    val: Option<&FeatureMatrix>,
    objective: &Objective,
    gbdt_cfg: &GbdtConfig,
    cfg: &EnsembleConfig,
) -> Result<EnsembleModel> {
    let subsets = partition_resample(matrix, cfg)?;
    train_ensemble(matrix, &subsets, val, objective, gbdt_cfg, cfg)
}

/// Mean of member probabilities, kept inside the members' range.
pub fn mean_probability(ps: &[f64]) -> f64 {
    let mut m = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, &p) in ps.iter().enumerate() {
        m += (p - m) / (k + 1) as f64;
        lo = lo.min(p);
        hi = hi.max(p);
    }
    m.clamp(lo, hi)
}

pub fn classify(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

impl EnsembleModel {
    pub fn manifest(&self) -> &[String] {
        &self.members[0].manifest
    }

    pub fn predict_proba(&self, row: &[f32]) -> Result<f64> {
        let ps = self.members.iter().map(|m| m.predict_proba(row)).collect::<Result<Vec<_>>>()?;
        Ok(mean_probability(&ps))
    }

    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        check_manifest(self.manifest(), m.manifest())?;
        let per: Vec<Vec<f64>> = self.members.iter().map(|mm| mm.predict_matrix(m)).collect::<Result<_>>()?;
        Ok((0..m.n_rows()).map(|r| mean_probability(&per.iter().map(|p| p[r]).collect::<Vec<_>>())).collect())
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        writeln!(w, "{ENSEMBLE_FORMAT} {ENSEMBLE_VERSION}")?;
        writeln!(w, "members {}", self.members.len())?;
        writeln!(w, "strategy {}", c.strategy)?;
        writeln!(w, "ratio {}", c.ratio)?;
        writeln!(w, "threshold {}", c.threshold)?;
        writeln!(w, "seed {}", c.seed)?;
        for (k, f) in self.fingerprints.iter().enumerate() {
            writeln!(w, "fingerprint {k} {f}")?;
        }
        for (k, m) in self.members.iter().enumerate() {
            let mut buf = Vec::new();
            gbdt::save_model(m, &mut buf)?;
            writeln!(w, "member {k} {}", buf.len())?;
            w.write_all(&buf)?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0, line: 0 };
        let head = cur.line()?;
        match head.split_once(' ') {
            Some((ENSEMBLE_FORMAT, v)) => {
                if v != ENSEMBLE_VERSION.to_string() {
                    return Err(Error::Version { found: v.to_string(), expected: ENSEMBLE_VERSION.to_string() });
                }
            }
            _ => return Err(Error::Format(format!("not a {ENSEMBLE_FORMAT} file"))),
        }
        let n: usize = cur.value("members")?;
        let strategy: Strategy = cur.field("strategy")?.parse()?;
        let ratio: f64 = cur.value("ratio")?;
        let threshold: f64 = cur.value("threshold")?;
        let seed: u64 = cur.value("seed")?;
        let config = EnsembleConfig { members: n, strategy, ratio, threshold, seed };
        config.validate()?;
        let mut fingerprints = Vec::with_capacity(n);
        for k in 0..n {
            let rest = cur.field("fingerprint")?;
            match rest.split_once(' ') {
                Some((i, f)) if i == k.to_string() => fingerprints.push(f.to_string()),
                _ => return Err(Error::parse(cur.line, format!("bad fingerprint record {rest:?}"))),
            }
        }
        let mut members = Vec::with_capacity(n);
        for k in 0..n {
            let rest = cur.field("member")?;
            let len: usize = match rest.split_once(' ') {
                Some((i, l)) if i == k.to_string() => {
                    l.parse().map_err(|_| Error::parse(cur.line, "bad member length"))?
                }
                _ => return Err(Error::parse(cur.line, format!("bad member record {rest:?}"))),
            };
            let block = cur.take(len)?;
            members.push(gbdt::load_model(block).map_err(|e| Error::Member { member: k, source: Box::new(e) })?);
        }
        if cur.line()? != "end" {
            return Err(Error::Format("missing end record".into()));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after end record".into()));
        }
        if members.is_empty() {
            return Err(Error::Format("ensemble has no members".into()));
        }
        for m in &members[1..] {
            check_manifest(&members[0].manifest, &m.manifest)?;
        }
        Ok(EnsembleModel { config, members, fingerprints })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: u64,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end =
            rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("ensemble file truncated".into()))?;
        self.pos += end + 1;
        self.line += 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("ensemble header is not UTF-8".into()))
    }

    fn field(&mut self, keyword: &str) -> Result<&'a str> {
        let l = self.line()?;
        match l.split_once(' ') {
            Some((k, rest)) if k == keyword => Ok(rest),
            _ => Err(Error::parse(self.line, format!("expected `{keyword}`, found {l:?}"))),
        }
    }

    fn value<T: FromStr>(&mut self, keyword: &str) -> Result<T> {
        let v = self.field(keyword)?;
        v.parse().map_err(|_| Error::parse(self.line, format!("bad {keyword} {v:?}")))
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Format("ensemble member block truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}
