//! Newton-boosted histogram trees for binary classification.

mod binning;
mod io;
mod tree;

pub use binning::{bin_of, bin_uppers, BinnedMatrix, MISSING_BIN};
pub use io::{load_model, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use tree::{best_split, build_histogram, grow_tree, BinStat, GrowParams, Node, SplitCandidate, SplitParams, Tree};

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::objectives::{logit, sigmoid, Numerics, Objective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub max_bins: usize,
    pub min_samples_leaf: u32,
    pub min_hessian_leaf: f64,
    pub lambda: f64,
    /// Stop after this many rounds without validation improvement.
    pub patience: Option<usize>,
    /// Fraction of rows drawn (per round, from `seed`) for each tree.
    pub row_subsample: f64,
    pub seed: u64,
    pub numerics: Numerics,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 200,
            learning_rate: 0.05,
            max_leaves: 31,
            max_bins: 255,
            min_samples_leaf: 20,
            min_hessian_leaf: 1e-3,
            lambda: 1.0,
            patience: Some(20),
            row_subsample: 1.0,
            seed: 0,
            numerics: Numerics::default(),
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be ≥ 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be > 0");
        }
        if self.max_leaves < 2 {
            return bad("max leaves must be ≥ 2");
        }
        if !(2..=binning::MAX_VALUE_BINS).contains(&self.max_bins) {
            return bad("max bins must be in 2..=255");
        }
        if !(self.min_hessian_leaf >= 0.0) || !(self.lambda >= 0.0) {
            return bad("min hessian and lambda must be ≥ 0");
        }
        if self.patience == Some(0) {
            return bad("patience must be ≥ 1");
        }
        if !(self.row_subsample > 0.0 && self.row_subsample <= 1.0) {
            return bad("row subsample must be in (0, 1]");
        }
        if !(self.numerics.prob_clamp > 0.0 && self.numerics.prob_clamp < 0.5) || !(self.numerics.hess_floor > 0.0) {
            return bad("probability clamp must be in (0, 0.5) and Hessian floor > 0");
        }
        Ok(())
    }

    fn grow_params(&self) -> GrowParams {
        GrowParams {
            split: SplitParams {
                lambda: self.lambda,
                min_samples_leaf: self.min_samples_leaf,
                min_hessian_leaf: self.min_hessian_leaf,
            },
            max_leaves: self.max_leaves,
            learning_rate: self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub manifest: Vec<String>,
    pub objective: Objective,
    pub base_score: f64,
    pub config: GbdtConfig,
    /// Training bin uppers per feature; split thresholds are drawn from these.
    pub bin_uppers: Vec<Vec<f32>>,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss after each round; index 0 is the base score alone.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Trees kept (the best validation round when early stopping is active).
    pub best_rounds: usize,
    pub stopped_early: bool,
}

pub(crate) fn check_manifest(expected: &[String], got: &[String]) -> Result<()> {
    if expected != got {
        let first = expected.iter().zip(got).position(|(a, b)| a != b).unwrap_or(expected.len().min(got.len()));
        return Err(Error::ManifestMismatch(format!(
            "model expects {} features, got {}; first difference at column {first}",
            expected.len(),
            got.len()
        )));
    }
    Ok(())
}

fn mean_loss(obj: &Objective, labels: &[u8], weights: &[f32], scores: &[f64], eps: f64) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&y, &w), &z) in labels.iter().zip(weights).zip(scores) {
        num += f64::from(w) * obj.loss(y, sigmoid(z), eps)?;
        den += f64::from(w);
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

pub fn train(
    train_set: &FeatureMatrix,
    val_set: Option<&FeatureMatrix>,
    objective: &Objective,
    cfg: &GbdtConfig,
) -> Result<(BoostedModel, TrainReport)> {
    cfg.validate()?;
    let n = train_set.n_rows();
    if n == 0 {
        return Err(Error::Training("training set is empty".into()));
    }
    let pos = train_set.n_positive();
    if pos == 0 || pos == n {
        return Err(Error::Training("training set holds a single class".into()));
    }
    if let Some(v) = val_set {
        check_manifest(train_set.manifest(), v.manifest())?;
    }
    let labels = train_set.labels();
    let weights = train_set.weights();
    let wsum: f64 = weights.iter().map(|&w| f64::from(w)).sum();
    let wpos: f64 = labels.iter().zip(weights).filter(|(&y, _)| y == 1).map(|(_, &w)| f64::from(w)).sum();
    if !(wpos > 0.0 && wpos < wsum) {
        return Err(Error::Training("weighted positive rate must lie strictly between 0 and 1".into()));
    }
    let base = logit(wpos / wsum);
    let binned = BinnedMatrix::fit(train_set, cfg.max_bins);
    let eps = cfg.numerics.prob_clamp;

    let mut scores = vec![base; n];
    let mut val_scores = val_set.map(|v| vec![base; v.n_rows()]);
    let mut report = TrainReport::default();
    report.train_loss.push(mean_loss(objective, labels, weights, &scores, eps)?);
    if let (Some(v), Some(vs)) = (val_set, &val_scores) {
        report.val_loss.push(mean_loss(objective, v.labels(), v.weights(), vs, eps)?);
    }
    let mut best = (report.val_loss.first().copied().unwrap_or(f64::INFINITY), 0usize);

    let mut trees = Vec::new();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let all_rows: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gp = cfg.grow_params();
    for round in 0..cfg.rounds {
        for r in 0..n {
            let (gr, hr) = objective.grad_hess(labels[r], scores[r], cfg.numerics.hess_floor);
            let w = f64::from(weights[r]);
            g[r] = gr * w;
            h[r] = hr * w;
        }
        let rows: Vec<u32> = if cfg.row_subsample < 1.0 {
            all_rows.iter().copied().filter(|_| rng.gen::<f64>() < cfg.row_subsample).collect()
        } else {
            all_rows.clone()
        };
        let tree = grow_tree(&binned, &rows, &g, &h, &gp);
        for (r, s) in scores.iter_mut().enumerate() {
            *s += tree.predict(train_set.row(r));
        }
        report.train_loss.push(mean_loss(objective, labels, weights, &scores, eps)?);
        if let (Some(v), Some(vs)) = (val_set, val_scores.as_mut()) {
            for (r, s) in vs.iter_mut().enumerate() {
                *s += tree.predict(v.row(r));
            }
            let vl = mean_loss(objective, v.labels(), v.weights(), vs, eps)?;
            report.val_loss.push(vl);
            if vl < best.0 {
                best = (vl, round + 1);
            }
        }
        trees.push(tree);
        if let (Some(p), true) = (cfg.patience, val_set.is_some()) {
            if round + 1 - best.1 >= p {
                report.stopped_early = true;
                debug!("early stop at round {}, best {}", round + 1, best.1);
                break;
            }
        }
    }
    if val_set.is_some() && cfg.patience.is_some() {
        trees.truncate(best.1);
    }
    report.best_rounds = trees.len();
    let model = BoostedModel {
        manifest: train_set.manifest().to_vec(),
        objective: *objective,
        base_score: base,
        config: *cfg,
        bin_uppers: binned.uppers,
        trees,
    };
    Ok((model, report))
}

impl BoostedModel {
    pub fn raw_score(&self, row: &[f32]) -> f64 {
        self.trees.iter().fold(self.base_score, |z, t| z + t.predict(row))
    }

    /// Probability for one row laid out per [`manifest`](Self::manifest).
    pub fn predict_proba(&self, row: &[f32]) -> Result<f64> {
        if row.len() != self.manifest.len() {
            return Err(Error::ManifestMismatch(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.manifest.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| v.is_infinite()) {
            return Err(Error::Input(format!("non-finite feature value {v}")));
        }
        Ok(sigmoid(self.raw_score(row)))
    }

    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        check_manifest(&self.manifest, m.manifest())?;
        Ok((0..m.n_rows()).map(|r| sigmoid(self.raw_score(m.row(r)))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::RowProvenance;
    use crate::objectives::{FocalForm, FocalParams};
    use crate::time::UtcTime;

    fn matrix(cols: usize, values: Vec<f32>, labels: Vec<u8>) -> FeatureMatrix {
        let n = labels.len();
        FeatureMatrix::new(
            (0..cols).map(|i| format!("f{i}")).collect(),
            values,
            labels,
            vec![1.0; n],
            (0..n)
                .map(|i| RowProvenance { station_id: "S".into(), launch: UtcTime(i as i64 * 3600), lead: 1 })
                .collect(),
        )
        .unwrap()
    }

    fn separable() -> FeatureMatrix {
        let xs: Vec<f32> = (0..200).map(|i| (i as f32 - 99.5) / 10.0).collect();
        let ys: Vec<u8> = xs.iter().map(|&x| u8::from(x > 0.0)).collect();
        matrix(1, xs, ys)
    }

    #[test]
    fn separable_loss_decreases() {
        let cfg = GbdtConfig { rounds: 30, ..GbdtConfig::default() };
        let (m, rep) = train(&separable(), None, &Objective::CrossEntropy, &cfg).unwrap();
        assert_eq!(m.trees.len(), 30);
        assert!(rep.train_loss.windows(2).all(|w| w[1] < w[0]));
        match m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert!(threshold.abs() < 0.1, "{threshold}"),
            _ => panic!("no split"),
        }
        let v = m.trees[0].leaf_values();
        assert!(v[0] < 0.0 && v[1] > 0.0);
    }

    #[test]
    fn focal_loss_non_increasing() {
        let obj = Objective::Focal(FocalParams::new(0.2, 4.0, FocalForm::Standard).unwrap());
        let xs: Vec<f32> = (0..400).map(|i| ((i * 37) % 101) as f32).collect();
        let ys: Vec<u8> = xs.iter().enumerate().map(|(i, &x)| u8::from(x > 80.0 || i % 29 == 0)).collect();
        let cfg = GbdtConfig { rounds: 50, ..GbdtConfig::default() };
        let (_, rep) = train(&matrix(1, xs, ys), None, &obj, &cfg).unwrap();
        assert!(rep.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn constant_features_give_the_prior() {
        let ys: Vec<u8> = (0..100).map(|i| u8::from(i % 10 == 0)).collect();
        let (m, _) =
            train(&matrix(2, vec![1.0; 200], ys), None, &Objective::CrossEntropy, &GbdtConfig::default()).unwrap();
        for t in &m.trees {
            assert_eq!(t.nodes.len(), 1);
        }
        let p = m.predict_proba(&[1.0, 1.0]).unwrap();
        // each single-leaf tree adds −G/(H+λ)·lr with G = 0 at the prior
        assert!((p - 0.1).abs() < 1e-12, "{p}");
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            train(
                &matrix(1, vec![1.0, 2.0, 3.0], vec![0, 0, 0]),
                None,
                &Objective::CrossEntropy,
                &GbdtConfig::default()
            ),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn learning_rate_scales_first_round() {
        let fm = separable();
        let a = GbdtConfig { rounds: 1, ..GbdtConfig::default() };
        let b = GbdtConfig { rounds: 1, learning_rate: 0.15, ..GbdtConfig::default() };
        let (ma, _) = train(&fm, None, &Objective::CrossEntropy, &a).unwrap();
        let (mb, _) = train(&fm, None, &Objective::CrossEntropy, &b).unwrap();
        for (x, y) in ma.trees[0].leaf_values().iter().zip(mb.trees[0].leaf_values()) {
            assert!((y - 3.0 * x).abs() <= 1e-15 * y.abs().max(1.0), "{x} {y}");
        }
    }

    #[test]
    fn missing_rows_still_predict() {
        let (m, _) =
            train(&separable(), None, &Objective::CrossEntropy, &GbdtConfig { rounds: 10, ..GbdtConfig::default() })
                .unwrap();
        let p = m.predict_proba(&[f32::NAN]).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(m.predict_proba(&[1.0, 2.0]).is_err());
        assert!(m.predict_proba(&[f32::INFINITY]).is_err());
    }

    #[test]
    fn early_stopping_truncates() {
        let xs: Vec<f32> = (0..300).map(|i| ((i * 13) % 17) as f32).collect();
        let ys: Vec<u8> = (0..300).map(|i| u8::from((i * 7) % 5 == 0)).collect();
        let tr = matrix(1, xs.clone(), ys.clone());
        let va = matrix(1, xs.iter().rev().copied().collect(), ys);
        let cfg = GbdtConfig {
            rounds: 200,
            patience: Some(5),
            min_samples_leaf: 1,
            learning_rate: 0.5,
            ..GbdtConfig::default()
        };
        let (m, rep) = train(&tr, Some(&va), &Objective::CrossEntropy, &cfg).unwrap();
        assert!(rep.stopped_early);
        assert_eq!(m.trees.len(), rep.best_rounds);
        let best = rep.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(rep.val_loss[rep.best_rounds], best);
    }
}
