//! Input preprocessing: z-score standardization, EWMA feature expansion and
//! causal windowing for the sequence models.

use serde::{Deserialize, Serialize};

use crate::dataio::{INPUT_NAMES, N_INPUTS};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// EWMA spans in seconds. Strictly increasing, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct SpanSet(Vec<u32>);

impl SpanSet {
    /// Ladder from 10 s to about 45 min.
    pub const DEFAULT: [u32; 8] = [10, 30, 60, 120, 300, 600, 1300, 2600];

    pub fn new(spans: Vec<u32>) -> Result<Self> {
        if spans.iter().any(|&s| s < 1) {
            return Err(Error::Config("EWMA spans must be at least 1 s".into()));
        }
        if spans.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("EWMA spans must be strictly increasing: {spans:?}")));
        }
        Ok(Self(spans))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Columns produced by [`expand`] for this span set.
    pub fn n_features(&self) -> usize {
        N_INPUTS * (1 + self.0.len())
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = INPUT_NAMES.iter().map(|s| s.to_string()).collect();
        for input in INPUT_NAMES {
            names.extend(self.0.iter().map(|s| format!("ewma_{s}({input})")));
        }
        names
    }
}

impl Default for SpanSet {
    fn default() -> Self {
        Self(Self::DEFAULT.to_vec())
    }
}

impl TryFrom<Vec<u32>> for SpanSet {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SpanSet> for Vec<u32> {
    fn from(s: SpanSet) -> Self {
        s.0
    }
}

/// Causal exponentially weighted moving average with `alpha = 2 / (span + 1)`,
/// seeded with the first sample.
pub fn ewma(series: &[f64], span: u32) -> Result<Vec<f64>> {
    if span < 1 {
        return Err(Error::InvalidInput("EWMA span must be at least 1".into()));
    }
    let Some(&first) = series.first() else {
        return Err(Error::InvalidInput("EWMA of an empty series".into()));
    };
    if span == 1 {
        // alpha = 1; the update form below would not be exact.
        return Ok(series.to_vec());
    }
    let alpha = 2.0 / (f64::from(span) + 1.0);
    let mut out = Vec::with_capacity(series.len());
    let mut y = first;
    out.push(y);
    for &x in &series[1..] {
        y += alpha * (x - y);
        out.push(y);
    }
    Ok(out)
}

/// Per-column affine scaling to zero mean and unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns that were constant during fitting. Their `std` is 1.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(matrix: &Matrix) -> Result<Self> {
        let (n, p) = matrix.shape();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "standardizer needs at least 2 rows, got {n}"
            )));
        }
        let mut mean = vec![0.0; p];
        for row in matrix.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for row in matrix.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let mut std = Vec::with_capacity(p);
        let mut constant = Vec::with_capacity(p);
        for (s, m) in var.iter().zip(&mean) {
            let sd = (s / n as f64).sqrt();
            // Identical values still leave rounding noise in the mean.
            let is_const = sd <= 1e-12 * m.abs().max(1.0);
            constant.push(is_const);
            std.push(if is_const { 1.0 } else { sd });
        }
        Ok(Self { mean, std, constant })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            std: vec![1.0; p],
            constant: vec![false; p],
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} columns, got {cols}",
                self.mean.len()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, matrix: &Matrix) -> Result<Matrix> {
        let mut out = matrix.clone();
        self.transform_in_place(&mut out)?;
        Ok(out)
    }

    pub fn transform_in_place(&self, matrix: &mut Matrix) -> Result<()> {
        self.check(matrix.cols())?;
        let p = matrix.cols();
        for row in matrix.as_mut_slice().chunks_exact_mut(p.max(1)) {
            self.transform_row(row);
        }
        Ok(())
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn inverse_transform(&self, matrix: &Matrix) -> Result<Matrix> {
        self.check(matrix.cols())?;
        let mut out = matrix.clone();
        let p = out.cols();
        for row in out.as_mut_slice().chunks_exact_mut(p.max(1)) {
            self.inverse_row(row);
        }
        Ok(out)
    }

    pub fn inverse_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }
}

/// Standardized inputs plus their EWMA expansions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub column_names: Vec<String>,
}

/// How [`expand`] scales the raw expanded matrix.
#[derive(Debug, Clone, Copy)]
pub enum Scaling<'a> {
    /// Fit a new standardizer on these rows.
    Fit,
    /// Reuse statistics fitted elsewhere (e.g. on the training profiles).
    Apply(&'a Standardizer),
}

/// Raw (unscaled) expanded matrix: the inputs followed by one EWMA column per
/// (input, span) pair, spans varying fastest.
pub fn expand_raw(inputs: &[&[f64]], spans: &SpanSet) -> Result<Matrix> {
    let len = inputs.first().map_or(0, |s| s.len());
    if inputs.iter().any(|s| s.len() != len) {
        return Err(Error::Shape("input series have different lengths".into()));
    }
    if len == 0 {
        return Err(Error::InvalidInput("empty input series".into()));
    }
    let mut columns: Vec<Vec<f64>> = inputs.iter().map(|s| s.to_vec()).collect();
    for series in inputs {
        for &span in spans.as_slice() {
            columns.push(ewma(series, span)?);
        }
    }
    let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    Matrix::from_columns(&refs)
}

/// Expands `(n_m, I_m, T_ref)` with EWMA columns computed on the raw signals,
/// then standardizes the full matrix.
pub fn expand(inputs: &[&[f64]], spans: &SpanSet, scaling: Scaling<'_>) -> Result<(FeatureMatrix, Standardizer)> {
    if inputs.len() != N_INPUTS {
        return Err(Error::Shape(format!(
            "expected {N_INPUTS} input series, got {}",
            inputs.len()
        )));
    }
    let raw = expand_raw(inputs, spans)?;
    let standardizer = match scaling {
        Scaling::Fit => Standardizer::fit(&raw)?,
        Scaling::Apply(s) => s.clone(),
    };
    let values = standardizer.transform(&raw)?;
    Ok((
        FeatureMatrix {
            values,
            column_names: spans.column_names(),
        },
        standardizer,
    ))
}

/// Fixed-length windows over one or more contiguous segments (profiles).
/// Windows never straddle a segment boundary. Each window's target is the
/// target row at the window's last index.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    seq_len: usize,
    segments: Vec<Segment>,
    index: Vec<(u32, u32)>,
}

#[derive(Debug, Clone)]
struct Segment {
    features: Matrix,
    targets: Matrix,
}

/// Builds the windows `[k * stride, k * stride + seq_len)` over one segment.
pub fn make_windows(features: Matrix, targets: Matrix, seq_len: usize, stride: usize) -> Result<WindowSet> {
    if seq_len == 0 || stride == 0 {
        return Err(Error::InvalidInput("seq_len and stride must be positive".into()));
    }
    if features.rows() != targets.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} target rows",
            features.rows(),
            targets.rows()
        )));
    }
    if seq_len > features.rows() {
        return Err(Error::InvalidInput(format!(
            "sequence length {seq_len} exceeds {} rows",
            features.rows()
        )));
    }
    let count = (features.rows() - seq_len) / stride + 1;
    let index = (0..count).map(|k| (0u32, (k * stride) as u32)).collect();
    Ok(WindowSet {
        seq_len,
        segments: vec![Segment { features, targets }],
        index,
    })
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn n_features(&self) -> usize {
        self.segments.first().map_or(0, |s| s.features.cols())
    }

    pub fn n_targets(&self) -> usize {
        self.segments.first().map_or(0, |s| s.targets.cols())
    }

    /// `(seq_len, n_features)` of every window.
    pub fn window_shape(&self) -> (usize, usize) {
        (self.seq_len, self.n_features())
    }

    /// Window `k` as a `seq_len × n_features` row-major slice.
    pub fn window(&self, k: usize) -> &[f64] {
        let (seg, start) = self.index[k];
        self.segments[seg as usize]
            .features
            .row_block(start as usize, self.seq_len)
    }

    pub fn target(&self, k: usize) -> &[f64] {
        let (seg, row) = self.end_index(k);
        self.segments[seg].targets.row(row)
    }

    /// `(segment, row)` of the last row covered by window `k`.
    pub fn end_index(&self, k: usize) -> (usize, usize) {
        let (seg, start) = self.index[k];
        (seg as usize, start as usize + self.seq_len - 1)
    }

    /// Concatenates window sets sharing a sequence length and feature width.
    pub fn concat(sets: Vec<WindowSet>) -> Result<WindowSet> {
        let mut out = WindowSet::default();
        for set in sets {
            if set.segments.is_empty() {
                continue;
            }
            if out.segments.is_empty() {
                out.seq_len = set.seq_len;
            } else if set.seq_len != out.seq_len || set.n_features() != out.n_features() {
                return Err(Error::Shape("cannot concatenate window sets of different shapes".into()));
            }
            let offset = out.segments.len() as u32;
            out.index
                .extend(set.index.iter().map(|&(s, start)| (s + offset, start)));
            out.segments.extend(set.segments);
        }
        Ok(out)
    }

    /// Keeps every `step`-th window (deterministic thinning).
    pub fn thin(&mut self, step: usize) {
        if step > 1 {
            self.index = self.index.iter().step_by(step).copied().collect();
        }
    }

    /// The given windows and their targets as slice pairs.
    pub fn batch(&self, ids: &[usize]) -> (Vec<&[f64]>, Vec<&[f64]>) {
        ids.iter().map(|&k| (self.window(k), self.target(k))).unzip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ewma_hand_recursion() {
        assert_eq!(ewma(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn ewma_fixed_point_and_identity() {
        assert_eq!(ewma(&[4.0; 5], 60).unwrap(), vec![4.0; 5]);
        let x = [1.0, -2.0, 3.5, 0.25];
        assert_eq!(ewma(&x, 1).unwrap(), x.to_vec());
    }

    #[test]
    fn ewma_rejects_bad_input() {
        assert!(ewma(&[1.0], 0).is_err());
        assert!(ewma(&[], 3).is_err());
    }

    #[test]
    fn standardizer_hand_values() {
        let m = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let s = Standardizer::fit(&m).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![1.0]);
        assert!(Standardizer::fit(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn constant_column_flagged() {
        let m = Matrix::from_rows(&[vec![0.1, 1.0], vec![0.1, 2.0], vec![0.1, 4.0]]).unwrap();
        let s = Standardizer::fit(&m).unwrap();
        assert_eq!(s.constant, vec![true, false]);
        assert_eq!(s.std[0], 1.0);
        let t = s.transform(&m).unwrap();
        assert!(t.column(0).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn transform_of_mean_is_zero_and_column_mismatch_errors() {
        let m = Matrix::from_rows(&[vec![1.0, 10.0], vec![3.0, 30.0]]).unwrap();
        let s = Standardizer::fit(&m).unwrap();
        let z = s
            .transform(&Matrix::from_rows(&[s.mean.clone()]).unwrap())
            .unwrap();
        assert_eq!(z.row(0), &[0.0, 0.0]);
        assert!(s.transform(&Matrix::zeros(2, 3)).is_err());
        assert!(s.inverse_transform(&Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn test_rows_use_training_statistics() {
        let train = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let test = Matrix::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        let s = Standardizer::fit(&train).unwrap();
        let t = s.transform(&test).unwrap();
        assert_eq!(t.column(0), vec![4.0, 6.0]);
    }

    #[test]
    fn expand_column_counts() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = (0..20).map(|i| f64::from(i * i)).collect();
        let z: Vec<f64> = (0..20).map(|i| f64::from(i).sin()).collect();
        let (fm, _) = expand(&[&x, &y, &z], &SpanSet::default(), Scaling::Fit).unwrap();
        assert_eq!(fm.values.cols(), 27);
        assert_eq!(fm.column_names.len(), 27);
        assert_eq!(fm.column_names[3], "ewma_10(n_m)");
        let (fm, _) = expand(&[&x, &y, &z], &SpanSet::empty(), Scaling::Fit).unwrap();
        assert_eq!(fm.values.cols(), 3);
        assert!(expand(&[&x, &y[..5], &z], &SpanSet::empty(), Scaling::Fit).is_err());
    }

    #[test]
    fn constant_inputs_give_equal_raw_ewma_columns() {
        let c = vec![3.0; 50];
        let raw = expand_raw(&[&c, &c, &c], &SpanSet::default()).unwrap();
        for row in raw.row_iter() {
            assert!(row.iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn span_set_validation() {
        assert!(SpanSet::new(vec![10, 10]).is_err());
        assert!(SpanSet::new(vec![0, 10]).is_err());
        assert!(SpanSet::new(vec![1, 2, 3]).is_ok());
        let parsed: std::result::Result<SpanSet, _> = serde_json::from_str("[5, 3]");
        assert!(parsed.is_err());
    }

    fn seq(rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn window_counts() {
        let w = make_windows(seq(100, 27), seq(100, 3), 100, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.window_shape(), (100, 27));
        let w = make_windows(seq(150, 27), seq(150, 3), 100, 1).unwrap();
        assert_eq!(w.len(), 51);
        let w = make_windows(seq(150, 2), seq(150, 3), 100, 10).unwrap();
        assert_eq!(w.len(), 6);
        assert!(make_windows(seq(50, 2), seq(50, 3), 100, 1).is_err());
    }

    #[test]
    fn windows_align_target_with_last_row() {
        let w = make_windows(seq(30, 2), seq(30, 1), 7, 3).unwrap();
        for k in 0..w.len() {
            let win = w.window(k);
            let last_row_first_col = win[(7 - 1) * 2];
            let (_, end) = w.end_index(k);
            assert_eq!(end, k * 3 + 6);
            assert_eq!(last_row_first_col, (end * 2) as f64);
            assert_eq!(w.target(k)[0], end as f64);
        }
    }

    #[test]
    fn concatenated_windows_stay_inside_segments() {
        let a = make_windows(seq(10, 2), seq(10, 1), 4, 1).unwrap();
        let b = make_windows(seq(6, 2), seq(6, 1), 4, 1).unwrap();
        let all = WindowSet::concat(vec![a, b]).unwrap();
        assert_eq!(all.len(), 7 + 3);
        assert_eq!(all.end_index(7), (1, 3));
        assert_eq!(all.window(7)[0], 0.0);
    }
}
