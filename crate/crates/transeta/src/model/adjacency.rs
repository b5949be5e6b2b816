//! Adjacency-matrix construction: segment-to-segment correlation from the
//! feature matrix, thresholding, the alpha blend with physical connectivity,
//! and degree normalization for graph convolution.

use ndarray::Array2;

use crate::error::{Error, Result};

fn check_symmetric(a: &Array2<f64>, _name: &str) -> Result<()> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "adjacency must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    for i in 0..n {
        for j in i + 1..n {
            if a[(i, j)] != a[(j, i)] {
                return Err(Error::AsymmetricMatrix {
                    i,
                    j,
                    a: a[(i, j)],
                    b: a[(j, i)],
                });
            }
        }
    }
    Ok(())
}

/// Pearson correlation between every pair of segment rows, computed across
/// the time slots. Constant rows correlate 0 with everything; the diagonal
/// is always 1.
pub fn correlation_matrix(values: &Array2<f64>) -> Array2<f64> {
    let n = values.nrows();
    let p = values.ncols() as f64;

    let means: Vec<f64> = (0..n).map(|i| values.row(i).sum() / p).collect();
    let devs: Vec<Vec<f64>> = (0..n)
        .map(|i| values.row(i).iter().map(|v| v - means[i]).collect())
        .collect();
    let norms: Vec<f64> = devs
        .iter()
        .map(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    let mut corr = Array2::zeros((n, n));
    for i in 0..n {
        corr[(i, i)] = 1.0;
        for j in i + 1..n {
            let c = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = devs[i].iter().zip(&devs[j]).map(|(a, b)| a * b).sum();
                dot / (norms[i] * norms[j])
            };
            corr[(i, j)] = c;
            corr[(j, i)] = c;
        }
    }
    corr
}

/// Zeroes every entry below `k`, which removes all negative correlations;
/// entries at or above the threshold are kept as-is.
pub fn threshold_correlation(corr: &Array2<f64>, k: f64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::OutOfRange {
            context: "correlation threshold K",
            value: k,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(corr.mapv(|v| if v < k { 0.0 } else { v }))
}

/// Blends physical connectivity with thresholded correlation:
/// alpha * phys + (1 - alpha) * corr, elementwise. The endpoints return the
/// inputs bit-for-bit.
pub fn augment_adjacency(
    phys: &Array2<f64>,
    corr: &Array2<f64>,
    alpha: f64,
) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange {
            context: "blend weight alpha",
            value: alpha,
            lo: 0.0,
            hi: 1.0,
        });
    }
    if phys.dim() != corr.dim() {
        return Err(Error::ShapeMismatch(format!(
            "phys {:?} vs corr {:?}",
            phys.dim(),
            corr.dim()
        )));
    }
    check_symmetric(phys, "physical connectivity")?;
    check_symmetric(corr, "correlation")?;
    if alpha == 1.0 {
        return Ok(phys.clone());
    }
    if alpha == 0.0 {
        return Ok(corr.clone());
    }
    Ok(alpha * phys + (1.0 - alpha) * corr)
}

/// Symmetric degree normalization with self-loops:
/// D^{-1/2} (A + I) D^{-1/2} where D is the degree of A + I.
pub fn normalize_adjacency(a: &Array2<f64>) -> Result<Array2<f64>> {
    check_symmetric(a, "adjacency")?;
    if a.iter().any(|&v| v < 0.0) {
        return Err(Error::Malformed(
            "normalize_adjacency expects non-negative entries".into(),
        ));
    }
    let n = a.nrows();
    let mut with_loops = a.clone();
    for i in 0..n {
        with_loops[(i, i)] += 1.0;
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| 1.0 / with_loops.row(i).sum().sqrt())
        .collect();
    let mut out = with_loops;
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    Ok(out)
}
