//! Regression trees on gradient statistics: histogram split search and
//! leaf-wise growth.

use rayon::prelude::*;

use super::binning::{BinnedMatrix, MISSING_BIN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `value ≤ threshold` go left.
        threshold: f32,
        missing_left: bool,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![Node::Leaf { value }] }
    }

    pub fn predict(&self, row: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, missing_left, left, right } => {
                    let x = row[feature];
                    let go_left = if x.is_nan() { missing_left } else { x <= threshold };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    /// Same tree with nodes renumbered in pre-order (the file layout).
    pub fn preorder(&self) -> Tree {
        fn walk(src: &[Node], i: usize, out: &mut Vec<Node>) -> usize {
            let at = out.len();
            out.push(src[i]);
            if let Node::Split { left, right, .. } = src[i] {
                let l = walk(src, left, out);
                let r = walk(src, right, out);
                if let Node::Split { left, right, .. } = &mut out[at] {
                    *left = l;
                    *right = r;
                }
            }
            at
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(&self.nodes, 0, &mut out);
        Tree { nodes: out }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { value } => Some(*value),
                Node::Split { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinStat {
    pub g: f64,
    pub h: f64,
    pub n: u32,
}

impl BinStat {
    fn add(&mut self, o: &BinStat) {
        self.g += o.g;
        self.h += o.h;
        self.n += o.n;
    }

    fn sub(&self, o: &BinStat) -> BinStat {
        BinStat { g: self.g - o.g, h: self.h - o.h, n: self.n - o.n }
    }
}

/// One 256-slot histogram per feature; slot 255 is the missing bin.
pub type Histogram = Vec<[BinStat; 256]>;

pub fn build_histogram(binned: &BinnedMatrix, rows: &[u32], g: &[f64], h: &[f64]) -> Histogram {
    (0..binned.n_features())
        .into_par_iter()
        .map(|f| {
            let col = binned.column(f);
            let mut hist = [BinStat::default(); 256];
            for &r in rows {
                let r = r as usize;
                let s = &mut hist[col[r] as usize];
                s.g += g[r];
                s.h += h[r];
                s.n += 1;
            }
            hist
        })
        .collect()
}

fn subtract(parent: &Histogram, child: &Histogram) -> Histogram {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| {
            let mut out = [BinStat::default(); 256];
            for i in 0..256 {
                out[i] = p[i].sub(&c[i]);
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub lambda: f64,
    pub min_samples_leaf: u32,
    pub min_hessian_leaf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    /// Left side holds bins `0..=bin`.
    pub bin: usize,
    pub threshold: f32,
    pub missing_left: bool,
    pub gain: f64,
    pub left: BinStat,
    pub right: BinStat,
}

fn score(s: &BinStat, lambda: f64) -> f64 {
    s.g * s.g / (s.h + lambda)
}

fn feature_best(f: usize, hist: &[BinStat; 256], uppers: &[f32], p: &SplitParams) -> Option<SplitCandidate> {
    let nb = uppers.len();
    if nb < 2 {
        return None;
    }
    let miss = hist[MISSING_BIN as usize];
    let mut total = miss;
    for s in &hist[..nb] {
        total.add(s);
    }
    let parent = score(&total, p.lambda);
    let min_n = p.min_samples_leaf.max(1);
    let mut best: Option<SplitCandidate> = None;
    let mut acc = BinStat::default();
    // the last value bin can never be a threshold: its right side would
    // hold no values
    for (b, s) in hist[..nb - 1].iter().enumerate() {
        acc.add(s);
        for missing_left in [true, false] {
            let left =
                if missing_left { BinStat { g: acc.g + miss.g, h: acc.h + miss.h, n: acc.n + miss.n } } else { acc };
            let right = total.sub(&left);
            if left.n < min_n || right.n < min_n || left.h < p.min_hessian_leaf || right.h < p.min_hessian_leaf {
                continue;
            }
            let gain = score(&left, p.lambda) + score(&right, p.lambda) - parent;
            if gain > 0.0 && best.is_none_or(|c| gain > c.gain) {
                best =
                    Some(SplitCandidate { feature: f, bin: b, threshold: uppers[b], missing_left, gain, left, right });
            }
        }
    }
    best
}

/// Highest-gain split over all features; ties go to the lowest feature,
/// then the lowest bin, then missing-left.
pub fn best_split(hist: &Histogram, binned: &BinnedMatrix, p: &SplitParams) -> Option<SplitCandidate> {
    let per_feature: Vec<Option<SplitCandidate>> =
        hist.par_iter().enumerate().map(|(f, h)| feature_best(f, h, &binned.uppers[f], p)).collect();
    let mut best: Option<SplitCandidate> = None;
    for c in per_feature.into_iter().flatten() {
        if best.is_none_or(|b| c.gain > b.gain) {
            best = Some(c);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowParams {
    pub split: SplitParams,
    pub max_leaves: usize,
    pub learning_rate: f64,
}

struct OpenLeaf {
    node: usize,
    start: usize,
    end: usize,
    hist: Histogram,
    stat: BinStat,
    split: Option<SplitCandidate>,
}

fn total_stat(hist: &Histogram) -> BinStat {
    let mut s = BinStat::default();
    if let Some(h) = hist.first() {
        for b in h.iter() {
            s.add(b);
        }
    }
    s
}

/// Grows one tree leaf-wise over `rows`, splitting the open leaf with the
/// highest gain (earliest-created leaf on ties) until `max_leaves`.
pub fn grow_tree(binned: &BinnedMatrix, rows: &[u32], g: &[f64], h: &[f64], p: &GrowParams) -> Tree {
    let lambda = p.split.lambda;
    let leaf_value = |s: &BinStat| -s.g / (s.h + lambda) * p.learning_rate;
    let mut order: Vec<u32> = rows.to_vec();
    let root_hist = build_histogram(binned, &order, g, h);
    let root_stat = if binned.n_features() == 0 {
        let mut s = BinStat::default();
        for &r in rows {
            s.add(&BinStat { g: g[r as usize], h: h[r as usize], n: 1 });
        }
        s
    } else {
        total_stat(&root_hist)
    };
    let mut nodes = vec![Node::Leaf { value: leaf_value(&root_stat) }];
    let root_split = best_split(&root_hist, binned, &p.split);
    let mut open =
        vec![OpenLeaf { node: 0, start: 0, end: order.len(), hist: root_hist, stat: root_stat, split: root_split }];
    let mut n_leaves = 1;
    let mut scratch: Vec<u32> = Vec::with_capacity(order.len());
    while n_leaves < p.max_leaves {
        let mut pick: Option<usize> = None;
        for (i, l) in open.iter().enumerate() {
            if let Some(s) = l.split {
                if pick.is_none_or(|j| s.gain > open[j].split.unwrap().gain) {
                    pick = Some(i);
                }
            }
        }
        let Some(i) = pick else { break };
        let leaf = open.remove(i);
        let s = leaf.split.unwrap();
        // stable partition of the leaf's rows
        let col = binned.column(s.feature);
        scratch.clear();
        let seg = &mut order[leaf.start..leaf.end];
        let mut w = 0;
        for k in 0..seg.len() {
            let r = seg[k];
            let b = col[r as usize];
            let left = if b == MISSING_BIN { s.missing_left } else { usize::from(b) <= s.bin };
            if left {
                seg[w] = r;
                w += 1;
            } else {
                scratch.push(r);
            }
        }
        seg[w..].copy_from_slice(&scratch);
        let mid = leaf.start + w;
        let (ls, rs) = ((leaf.start, mid), (mid, leaf.end));
        let small_left = mid - leaf.start <= leaf.end - mid;
        let small = if small_left { ls } else { rs };
        let small_hist = build_histogram(binned, &order[small.0..small.1], g, h);
        let large_hist = subtract(&leaf.hist, &small_hist);
        let (lh, rh) = if small_left { (small_hist, large_hist) } else { (large_hist, small_hist) };
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes[leaf.node] = Node::Split {
            feature: s.feature,
            threshold: s.threshold,
            missing_left: s.missing_left,
            left: li,
            right: ri,
        };
        nodes.push(Node::Leaf { value: leaf_value(&s.left) });
        nodes.push(Node::Leaf { value: leaf_value(&s.right) });
        n_leaves += 1;
        let lsplit = best_split(&lh, binned, &p.split);
        let rsplit = best_split(&rh, binned, &p.split);
        open.push(OpenLeaf { node: li, start: ls.0, end: ls.1, hist: lh, stat: s.left, split: lsplit });
        open.push(OpenLeaf { node: ri, start: rs.0, end: rs.1, hist: rh, stat: s.right, split: rsplit });
    }
    debug_assert!(open.iter().all(|l| l.stat.n as usize == l.end - l.start));
    Tree { nodes }.preorder()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{FeatureMatrix, RowProvenance};
    use crate::time::UtcTime;
    use proptest::prelude::*;

    fn matrix(cols: usize, values: Vec<f32>) -> FeatureMatrix {
        let n = values.len() / cols;
        FeatureMatrix::new(
            (0..cols).map(|i| format!("f{i}")).collect(),
            values,
            vec![0; n],
            vec![1.0; n],
            (0..n)
                .map(|i| RowProvenance { station_id: "S".into(), launch: UtcTime(i as i64 * 3600), lead: 1 })
                .collect(),
        )
        .unwrap()
    }

    /// Exhaustive search over thresholds between consecutive distinct values,
    /// summing gradients directly from rows.
    fn exhaustive(fm: &FeatureMatrix, g: &[f64], h: &[f64], p: &SplitParams) -> Option<(usize, f32, bool, f64)> {
        let n = fm.n_rows();
        let mut best: Option<(usize, f32, bool, f64)> = None;
        let tot_g: f64 = g.iter().sum();
        let tot_h: f64 = h.iter().sum();
        let parent = tot_g * tot_g / (tot_h + p.lambda);
        for f in 0..fm.n_cols() {
            let mut vals: Vec<f32> = (0..n).map(|r| fm.row(r)[f]).filter(|v| !v.is_nan()).collect();
            vals.sort_by(f32::total_cmp);
            vals.dedup();
            for &thr in vals.iter().take(vals.len().saturating_sub(1)) {
                for ml in [true, false] {
                    let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
                    for r in 0..n {
                        let x = fm.row(r)[f];
                        if (x.is_nan() && ml) || (!x.is_nan() && x <= thr) {
                            gl += g[r];
                            hl += h[r];
                            nl += 1;
                        }
                    }
                    let (gr, hr, nr) = (tot_g - gl, tot_h - hl, n as u32 - nl);
                    if nl < p.min_samples_leaf.max(1)
                        || nr < p.min_samples_leaf.max(1)
                        || hl < p.min_hessian_leaf
                        || hr < p.min_hessian_leaf
                    {
                        continue;
                    }
                    let gain = gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - parent;
                    if gain > 0.0 && best.is_none_or(|b| gain > b.3) {
                        best = Some((f, thr, ml, gain));
                    }
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn histogram_matches_exhaustive(
            raw in proptest::collection::vec((0u8..40, 0u8..12, 0u8..6), 20..120),
            grads in proptest::collection::vec((-64i32..64, 1i32..32), 120),
            miss in proptest::collection::vec(0u8..8, 120),
        ) {
            let mut values = Vec::new();
            for (i, &(a, b, c)) in raw.iter().enumerate() {
                values.push(if miss[i] == 0 { f32::NAN } else { f32::from(a) * 0.25 });
                values.push(f32::from(b));
                values.push(f32::from(c) - 2.0);
            }
            let fm = matrix(3, values);
            let n = fm.n_rows();
            // dyadic statistics keep every partial sum exact
            let g: Vec<f64> = grads[..n].iter().map(|&(a, _)| f64::from(a) / 64.0).collect();
            let h: Vec<f64> = grads[..n].iter().map(|&(_, b)| f64::from(b) / 64.0).collect();
            let p = SplitParams { lambda: 1.0, min_samples_leaf: 3, min_hessian_leaf: 1e-3 };
            let binned = BinnedMatrix::fit(&fm, 255);
            let rows: Vec<u32> = (0..n as u32).collect();
            let hist = build_histogram(&binned, &rows, &g, &h);
            let got = best_split(&hist, &binned, &p).map(|c| (c.feature, c.threshold, c.missing_left, c.gain));
            prop_assert_eq!(got, exhaustive(&fm, &g, &h, &p));
        }
    }

    #[test]
    fn separable_feature_splits_at_zero() {
        let values: Vec<f32> = (0..40).map(|i| if i < 20 { -1.0 - i as f32 } else { 1.0 + i as f32 }).collect();
        let fm = matrix(1, values);
        let g: Vec<f64> = (0..40).map(|i| if i < 20 { 0.5 } else { -0.5 }).collect();
        let h = vec![0.25; 40];
        let binned = BinnedMatrix::fit(&fm, 255);
        let rows: Vec<u32> = (0..40).collect();
        let gp = GrowParams {
            split: SplitParams { lambda: 1.0, min_samples_leaf: 5, min_hessian_leaf: 1e-3 },
            max_leaves: 2,
            learning_rate: 0.1,
        };
        let t = grow_tree(&binned, &rows, &g, &h, &gp);
        match t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, -1.0),
            _ => panic!("expected a split"),
        }
        let v = t.leaf_values();
        assert!(v[0] < 0.0 && v[1] > 0.0);
    }

    #[test]
    fn constant_feature_has_no_split() {
        let fm = matrix(1, vec![2.0; 30]);
        let g: Vec<f64> = (0..30).map(|i| if i % 3 == 0 { -0.9 } else { 0.1 }).collect();
        let h = vec![0.09; 30];
        let binned = BinnedMatrix::fit(&fm, 255);
        let rows: Vec<u32> = (0..30).collect();
        let gp = GrowParams {
            split: SplitParams { lambda: 1.0, min_samples_leaf: 1, min_hessian_leaf: 0.0 },
            max_leaves: 31,
            learning_rate: 1.0,
        };
        assert_eq!(grow_tree(&binned, &rows, &g, &h, &gp).nodes.len(), 1);
    }

    #[test]
    fn leaf_budget_is_respected() {
        let values: Vec<f32> = (0..500).map(|i| ((i * 37) % 101) as f32).collect();
        let fm = matrix(1, values.clone());
        let g: Vec<f64> = values.iter().map(|v| (f64::from(*v) * 0.7).sin()).collect();
        let h = vec![1.0; 500];
        let binned = BinnedMatrix::fit(&fm, 255);
        let rows: Vec<u32> = (0..500).collect();
        let gp = GrowParams {
            split: SplitParams { lambda: 1.0, min_samples_leaf: 1, min_hessian_leaf: 0.0 },
            max_leaves: 7,
            learning_rate: 1.0,
        };
        let t = grow_tree(&binned, &rows, &g, &h, &gp);
        assert_eq!(t.n_leaves(), 7);
    }
}
