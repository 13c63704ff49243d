//! Per-feature quantile bins. Bin `b` holds values in `(upper[b−1], upper[b]]`;
//! values above the last upper fall into the last bin and missing values into
//! [`MISSING_BIN`].

use crate::featurize::FeatureMatrix;

pub const MISSING_BIN: u8 = u8::MAX;

/// Largest number of non-missing bins a feature may use.
pub const MAX_VALUE_BINS: usize = MISSING_BIN as usize;

/// Bin uppers for one feature: distinct training values when there are at
/// most `max_bins`, otherwise count quantiles of the sorted values.
pub fn bin_uppers(values: &[f32], max_bins: usize) -> Vec<f32> {
    let max_bins = max_bins.clamp(1, MAX_VALUE_BINS);
    let mut v: Vec<f32> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Vec::new();
    }
    v.sort_by(f32::total_cmp);
    let mut distinct: Vec<(f32, usize)> = Vec::new();
    for x in v.iter().copied() {
        match distinct.last_mut() {
            // -0.0 and 0.0 compare equal and share a bin
            Some((d, c)) if *d == x => *c += 1,
            _ => distinct.push((x, 1)),
        }
    }
    if distinct.len() <= max_bins {
        return distinct.into_iter().map(|(d, _)| d).collect();
    }
    let n = v.len() as f64;
    let mut uppers = Vec::with_capacity(max_bins);
    let mut cum = 0usize;
    for (i, &(d, c)) in distinct.iter().enumerate() {
        cum += c;
        let k = uppers.len() + 1;
        let last = i + 1 == distinct.len();
        if last || cum as f64 >= n * k as f64 / max_bins as f64 {
            uppers.push(d);
            if uppers.len() == max_bins - 1 {
                uppers.push(distinct.last().unwrap().0);
                break;
            }
        }
    }
    uppers.dedup();
    uppers
}

pub fn bin_of(uppers: &[f32], x: f32) -> u8 {
    if x.is_nan() {
        return MISSING_BIN;
    }
    let i = uppers.partition_point(|&u| u < x);
    i.min(uppers.len().saturating_sub(1)) as u8
}

/// Column-major bin indices for a feature matrix.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub n_rows: usize,
    pub uppers: Vec<Vec<f32>>,
    /// `bins[f * n_rows + r]`
    pub bins: Vec<u8>,
}

impl BinnedMatrix {
    pub fn fit(matrix: &FeatureMatrix, max_bins: usize) -> Self {
        let (n, c) = (matrix.n_rows(), matrix.n_cols());
        let vals = matrix.values();
        let mut uppers = Vec::with_capacity(c);
        let mut bins = vec![MISSING_BIN; n * c];
        let mut col = vec![0f32; n];
        for f in 0..c {
            for (r, slot) in col.iter_mut().enumerate() {
                *slot = vals[r * c + f];
            }
            let u = bin_uppers(&col, max_bins);
            for (r, &x) in col.iter().enumerate() {
                bins[f * n + r] = bin_of(&u, x);
            }
            uppers.push(u);
        }
        BinnedMatrix { n_rows: n, uppers, bins }
    }

    pub fn n_features(&self) -> usize {
        self.uppers.len()
    }

    pub fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_rows..(f + 1) * self.n_rows]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_values_become_uppers() {
        let u = bin_uppers(&[3.0, 1.0, f32::NAN, 2.0, 1.0], 255);
        assert_eq!(u, [1.0, 2.0, 3.0]);
        assert_eq!(bin_of(&u, 1.0), 0);
        assert_eq!(bin_of(&u, 1.5), 1);
        assert_eq!(bin_of(&u, 9.0), 2);
        assert_eq!(bin_of(&u, f32::NAN), MISSING_BIN);
    }

    #[test]
    fn quantile_bins_are_bounded() {
        let vals: Vec<f32> = (0..10_000).map(|i| ((i * 7919) % 10_007) as f32).collect();
        let u = bin_uppers(&vals, 255);
        assert!(u.len() <= 255 && u.len() > 200);
        assert!(u.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*u.last().unwrap(), 10_006.0);
        let mut counts = vec![0usize; u.len()];
        for &v in &vals {
            counts[bin_of(&u, v) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c <= 2 * 10_000 / 255 + 1), "{counts:?}");
    }

    #[test]
    fn all_missing_feature() {
        let u = bin_uppers(&[f32::NAN; 4], 255);
        assert!(u.is_empty());
        assert_eq!(bin_of(&u, f32::NAN), MISSING_BIN);
    }
}
