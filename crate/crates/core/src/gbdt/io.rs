//! Line-oriented text model format.
//!
//! ```text
//! seafog-gbdt 1
//! objective focal:0.2:4
//! base -2.1972245773362196
//! seed 7
//! config rounds=200 learning_rate=0.05 …
//! features 2
//! feature R_H_GDS3_HTGL_lag3
//! feature lead_hour
//! bins 3 0.5 1 2.5
//! bins 0
//! trees 1
//! tree 3
//! split 0 1 L
//! leaf -0.01
//! leaf 0.02
//! end
//! ```
//!
//! Trees are written in pre-order; a `split` record is followed by its left
//! subtree, then its right subtree. Floats use shortest round-trip decimal.

use std::io::{BufRead, BufReader, Read, Write};

use super::tree::{Node, Tree};
use super::{BoostedModel, GbdtConfig};
use crate::error::{Error, Result};
use crate::objectives::{Numerics, Objective};

pub const MODEL_FORMAT: &str = "seafog-gbdt";
pub const MODEL_VERSION: u32 = 1;

fn config_line(c: &GbdtConfig) -> String {
    format!(
        "rounds={} learning_rate={} max_leaves={} max_bins={} min_samples_leaf={} min_hessian_leaf={} lambda={} patience={} row_subsample={} prob_clamp={} hess_floor={}",
        c.rounds,
        c.learning_rate,
        c.max_leaves,
        c.max_bins,
        c.min_samples_leaf,
        c.min_hessian_leaf,
        c.lambda,
        c.patience.map_or_else(|| "none".to_string(), |p| p.to_string()),
        c.row_subsample,
        c.numerics.prob_clamp,
        c.numerics.hess_floor,
    )
}

fn write_tree<W: Write>(t: &Tree, i: usize, w: &mut W) -> std::io::Result<()> {
    match t.nodes[i] {
        Node::Leaf { value } => writeln!(w, "leaf {value}"),
        Node::Split { feature, threshold, missing_left, left, right } => {
            writeln!(w, "split {feature} {threshold} {}", if missing_left { "L" } else { "R" })?;
            write_tree(t, left, w)?;
            write_tree(t, right, w)
        }
    }
}

pub fn save_model<W: Write>(m: &BoostedModel, mut w: W) -> Result<()> {
    writeln!(w, "{MODEL_FORMAT} {MODEL_VERSION}")?;
    writeln!(w, "objective {}", m.objective)?;
    writeln!(w, "base {}", m.base_score)?;
    writeln!(w, "seed {}", m.config.seed)?;
    writeln!(w, "config {}", config_line(&m.config))?;
    writeln!(w, "features {}", m.manifest.len())?;
    for name in &m.manifest {
        writeln!(w, "feature {name}")?;
    }
    for u in &m.bin_uppers {
        write!(w, "bins {}", u.len())?;
        for v in u {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "trees {}", m.trees.len())?;
    for t in &m.trees {
        writeln!(w, "tree {}", t.nodes.len())?;
        write_tree(t, 0, &mut w)?;
    }
    writeln!(w, "end")?;
    Ok(())
}

struct Lines<R> {
    inner: R,
    line: u64,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<&str> {
        self.buf.clear();
        self.line += 1;
        if self.inner.read_line(&mut self.buf)? == 0 {
            return Err(Error::Format(format!("model file truncated at line {}", self.line)));
        }
        Ok(self.buf.trim_end_matches(['\n', '\r']))
    }

    /// Next line split as `keyword rest`, requiring `keyword`.
    fn field(&mut self, keyword: &str) -> Result<String> {
        let line = self.line + 1;
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, rest)) if k == keyword => Ok(rest.to_string()),
            _ if l == keyword => Ok(String::new()),
            _ => Err(Error::parse(line, format!("expected `{keyword}`, found {l:?}"))),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.line, msg)
    }
}

fn num<T: std::str::FromStr>(s: &str, what: &str, line: u64) -> Result<T> {
    s.trim().parse().map_err(|_| Error::parse(line, format!("bad {what} {s:?}")))
}

fn parse_config(s: &str, seed: u64, line: u64) -> Result<GbdtConfig> {
    let mut c = GbdtConfig { seed, ..GbdtConfig::default() };
    let mut numerics = Numerics::default();
    for kv in s.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::parse(line, format!("bad config entry {kv:?}")))?;
        match k {
            "rounds" => c.rounds = num(v, k, line)?,
            "learning_rate" => c.learning_rate = num(v, k, line)?,
            "max_leaves" => c.max_leaves = num(v, k, line)?,
            "max_bins" => c.max_bins = num(v, k, line)?,
            "min_samples_leaf" => c.min_samples_leaf = num(v, k, line)?,
            "min_hessian_leaf" => c.min_hessian_leaf = num(v, k, line)?,
            "lambda" => c.lambda = num(v, k, line)?,
            "patience" => c.patience = if v == "none" { None } else { Some(num(v, k, line)?) },
            "row_subsample" => c.row_subsample = num(v, k, line)?,
            "prob_clamp" => numerics.prob_clamp = num(v, k, line)?,
            "hess_floor" => numerics.hess_floor = num(v, k, line)?,
            _ => return Err(Error::parse(line, format!("unknown config key {k:?}"))),
        }
    }
    c.numerics = numerics;
    Ok(c)
}

fn read_tree<R: BufRead>(r: &mut Lines<R>, n_nodes: usize, n_features: usize) -> Result<Tree> {
    let mut nodes: Vec<Node> = Vec::with_capacity(n_nodes);
    // indices of split nodes still waiting for a left or right child
    let mut pending: Vec<(usize, bool)> = Vec::new();
    loop {
        let l = r.next()?.to_string();
        let idx = nodes.len();
        let parts: Vec<&str> = l.split(' ').collect();
        let node = match parts.as_slice() {
            ["leaf", v] => Node::Leaf { value: num(v, "leaf value", r.line)? },
            ["split", f, thr, dir] => {
                let feature: usize = num(f, "feature", r.line)?;
                if feature >= n_features {
                    return Err(r.err(format!("feature index {feature} out of range")));
                }
                let missing_left = match *dir {
                    "L" => true,
                    "R" => false,
                    _ => return Err(r.err(format!("bad missing direction {dir:?}"))),
                };
                Node::Split { feature, threshold: num(thr, "threshold", r.line)?, missing_left, left: 0, right: 0 }
            }
            _ => return Err(r.err(format!("expected a tree node, found {l:?}"))),
        };
        if let Some(&(parent, filled_left)) = pending.last() {
            if let Node::Split { left, right, .. } = &mut nodes[parent] {
                if filled_left {
                    *right = idx;
                    pending.pop();
                } else {
                    *left = idx;
                    pending.last_mut().unwrap().1 = true;
                }
            }
        } else if idx != 0 {
            return Err(r.err("tree has more nodes than its structure allows"));
        }
        let is_split = matches!(node, Node::Split { .. });
        nodes.push(node);
        if is_split {
            pending.push((idx, false));
        }
        if nodes.len() > n_nodes {
            return Err(r.err("tree node count exceeds its header"));
        }
        if pending.is_empty() {
            break;
        }
    }
    if nodes.len() != n_nodes {
        return Err(r.err(format!("tree header says {n_nodes} nodes, found {}", nodes.len())));
    }
    Ok(Tree { nodes })
}

pub fn load_model<R: Read>(source: R) -> Result<BoostedModel> {
    let mut r = Lines { inner: BufReader::new(source), line: 0, buf: String::new() };
    let head = r.next()?.to_string();
    match head.split_once(' ') {
        Some((MODEL_FORMAT, v)) => {
            let v: u32 = num(v, "version", 1)?;
            if v != MODEL_VERSION {
                return Err(Error::Version { found: v.to_string(), expected: MODEL_VERSION.to_string() });
            }
        }
        _ => return Err(Error::Format(format!("not a {MODEL_FORMAT} model file"))),
    }
    let objective: Objective = r.field("objective")?.parse()?;
    let base_score: f64 = num(&r.field("base")?, "base", r.line)?;
    let seed: u64 = num(&r.field("seed")?, "seed", r.line)?;
    let config = parse_config(&r.field("config")?, seed, r.line)?;
    let n_features: usize = num(&r.field("features")?, "feature count", r.line)?;
    let mut manifest = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        manifest.push(r.field("feature")?);
    }
    let mut bin_uppers = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        let rest = r.field("bins")?;
        let mut it = rest.split_whitespace();
        let k: usize = num(it.next().unwrap_or(""), "bin count", r.line)?;
        let u: Vec<f32> = it.map(|v| num(v, "bin upper", r.line)).collect::<Result<_>>()?;
        if u.len() != k {
            return Err(r.err(format!("expected {k} bin uppers, found {}", u.len())));
        }
        bin_uppers.push(u);
    }
    let n_trees: usize = num(&r.field("trees")?, "tree count", r.line)?;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes: usize = num(&r.field("tree")?, "node count", r.line)?;
        trees.push(read_tree(&mut r, n_nodes, n_features)?);
    }
    r.field("end")?;
    Ok(BoostedModel { manifest, objective, base_score, config, bin_uppers, trees })
}
