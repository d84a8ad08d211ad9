use ndarray::Array2;

use crate::error::{Error, Result};

/// Centered moving average with the window clipped at the sequence edges;
/// each output is the mean over the frames actually inside the window.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "smoothing window {window} must be odd and positive"
        )));
    }
    if window == 1 {
        return Ok(values.to_vec());
    }
    let half = window / 2;
    let n = values.len();
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

/// Smooths each class column of a frames x classes matrix with its own window.
pub fn smooth_columns(probs: &Array2<f64>, windows: &[usize]) -> Result<Array2<f64>> {
    if windows.len() != probs.ncols() {
        return Err(Error::Shape(format!(
            "{} windows for {} classes",
            windows.len(),
            probs.ncols()
        )));
    }
    let mut out = probs.clone();
    for (c, &w) in windows.iter().enumerate() {
        if w == 1 {
            continue;
        }
        let col: Vec<f64> = probs.column(c).to_vec();
        for (dst, v) in out.column_mut(c).iter_mut().zip(moving_average(&col, w)?) {
            *dst = v;
        }
    }
    Ok(out)
}
