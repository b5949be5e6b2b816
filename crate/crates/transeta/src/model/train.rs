//! Training, evaluation, and the alpha/K hyperparameter search, plus the
//! model file format.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::adjacency::{augment_adjacency, normalize_adjacency, threshold_correlation};
use super::net::{forward, loss_and_grads, DelayModelParams, NetShape};
use crate::error::{Error, Result};
use crate::ingest::FeatureMatrix;

/// One supervised example: H consecutive slots in, the following slot out.
/// Values are raw dwell seconds; standardization happens inside the model.
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub input: Array2<f64>,
    pub target: Array1<f64>,
    /// True where the target cell was actually observed.
    pub target_mask: Vec<bool>,
}

/// Slides a length-H window over the slots of a feature matrix.
pub fn windows_from_matrix(fm: &FeatureMatrix, history: usize) -> Vec<TrainingWindow> {
    let (n, p) = (fm.n_segments(), fm.n_slots());
    if history == 0 || p <= history {
        return Vec::new();
    }
    (0..p - history)
        .map(|j| {
            let input = fm.values.slice(ndarray::s![.., j..j + history]).to_owned();
            let target = fm.values.column(j + history).to_owned();
            let target_mask = (0..n).map(|i| fm.mask[(i, j + history)]).collect();
            TrainingWindow {
                input,
                target,
                target_mask,
            }
        })
        .collect()
}

/// Per-segment z-score transform fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Fits per-segment mean and population standard deviation over the
    /// slots of the training matrix. Constant rows get unit scale.
    pub fn fit(values: &Array2<f64>) -> Self {
        let (n, p) = values.dim();
        let mut mean = Array1::zeros(n);
        let mut std = Array1::zeros(n);
        for i in 0..n {
            let m = values.row(i).sum() / p as f64;
            let var = values.row(i).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / p as f64;
            mean[i] = m;
            std[i] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Standardizer { mean, std }
    }

    pub fn standardize_window(&self, w: &TrainingWindow) -> (Array2<f64>, Array1<f64>, Vec<bool>) {
        let mut input = w.input.clone();
        for (i, mut row) in input.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| (v - self.mean[i]) / self.std[i]);
        }
        let target = Array1::from_shape_fn(w.target.len(), |i| {
            (w.target[i] - self.mean[i]) / self.std[i]
        });
        (input, target, w.target_mask.clone())
    }

    pub fn destandardize(&self, pred_std: &Array1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(pred_std.len(), |i| pred_std[i] * self.std[i] + self.mean[i])
    }
}

/// Training configuration. Defaults: full-batch gradient descent, learning
/// rate 0.01, no momentum.
#[derive(Debug, Clone, Copy)]
pub struct Hyperparams {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shape: NetShape,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 0.01,
            epochs: 1000,
            seed: 42,
            shape: NetShape::default(),
        }
    }
}

/// A trained model: parameters plus the standardizer they were fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    pub params: DelayModelParams,
    pub standardizer: Standardizer,
}

impl DelayModel {
    /// Raw-seconds prediction for one window input.
    pub fn predict(&self, a_hat: &Array2<f64>, input: &Array2<f64>) -> Result<Array1<f64>> {
        let mut std_input = input.clone();
        for (i, mut row) in std_input.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| (v - self.standardizer.mean[i]) / self.standardizer.std[i]);
        }
        let pred_std = forward(&self.params, a_hat, &std_input)?;
        Ok(self.standardizer.destandardize(&pred_std))
    }
}

/// Full-batch gradient descent on the masked mean squared error. Returns the
/// trained model together with the per-epoch loss history (standardized
/// units). Zero epochs returns the seeded initialization unchanged.
pub fn train(
    windows: &[TrainingWindow],
    a_hat: &Array2<f64>,
    standardizer: &Standardizer,
    hyper: &Hyperparams,
) -> Result<(DelayModel, Vec<f64>)> {
    if windows.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let std_windows: Vec<_> = windows
        .iter()
        .map(|w| standardizer.standardize_window(w))
        .collect();

    let mut params = DelayModelParams::init(hyper.shape, hyper.seed);
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let (loss, grads) = loss_and_grads(&params, a_hat, &std_windows)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
        params.step(&grads, hyper.lr);
    }
    Ok((
        DelayModel {
            params,
            standardizer: standardizer.clone(),
        },
        history,
    ))
}

/// Root mean squared error in seconds over all observed (segment, window)
/// target cells. Errors on an empty or fully masked test set.
pub fn evaluate_rmse(
    model: &DelayModel,
    a_hat: &Array2<f64>,
    windows: &[TrainingWindow],
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for w in windows {
        let pred = model.predict(a_hat, &w.input)?;
        for i in 0..pred.len() {
            if w.target_mask[i] {
                let e = pred[i] - w.target[i];
                sq_sum += e * e;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok((sq_sum / count as f64).sqrt())
}

/// One evaluated cell of the search grid.
#[derive(Debug, Clone, Copy)]
pub struct SearchCell {
    pub alpha: f64,
    pub k: f64,
    pub rmse_s: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub table: Vec<SearchCell>,
    pub best_alpha: f64,
    pub best_k: f64,
}

/// Exhaustive grid search over (alpha, K): every cell trains from the same
/// seed and is evaluated on the held-out windows. Ties prefer the larger
/// alpha, then the larger K.
#[allow(clippy::too_many_arguments)]
pub fn hyperparameter_search(
    alpha_grid: &[f64],
    k_grid: &[f64],
    phys: &Array2<f64>,
    correlation: &Array2<f64>,
    train_windows: &[TrainingWindow],
    test_windows: &[TrainingWindow],
    standardizer: &Standardizer,
    hyper: &Hyperparams,
) -> Result<SearchResult> {
    if alpha_grid.is_empty() || k_grid.is_empty() {
        return Err(Error::Malformed("empty search grid".into()));
    }
    let mut table = Vec::with_capacity(alpha_grid.len() * k_grid.len());
    let mut best: Option<SearchCell> = None;
    for &alpha in alpha_grid {
        for &k in k_grid {
            let thresholded = threshold_correlation(correlation, k)?;
            let augmented = augment_adjacency(phys, &thresholded, alpha)?;
            let a_hat = normalize_adjacency(&augmented)?;
            let (model, _) = train(train_windows, &a_hat, standardizer, hyper)?;
            let rmse_s = evaluate_rmse(&model, &a_hat, test_windows)?;
            let cell = SearchCell { alpha, k, rmse_s };
            table.push(cell);
            best = Some(match best {
                None => cell,
                Some(b)
                    if cell.rmse_s < b.rmse_s
                        || (cell.rmse_s == b.rmse_s
                            && (cell.alpha > b.alpha
                                || (cell.alpha == b.alpha && cell.k > b.k))) =>
                {
                    cell
                }
                Some(b) => b,
            });
        }
    }
    let best = best.unwrap();
    Ok(SearchResult {
        table,
        best_alpha: best.alpha,
        best_k: best.k,
    })
}

// ---------------------------------------------------------------------------
// Model file format: versioned text, shape header, one tensor per block.
// Floats are written with Rust's shortest round-trip formatting, so load
// restores them bit for bit.
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &str = "transeta-model v1";

pub fn write_model<W: Write>(model: &DelayModel, mut w: W) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<model>", e);
    let shape = model.params.shape();
    writeln!(w, "{MODEL_MAGIC}").map_err(io_err)?;
    writeln!(
        w,
        "shape n={} gcn_hidden={} lstm_hidden={}",
        model.standardizer.mean.len(),
        shape.gcn_hidden,
        shape.lstm_hidden
    )
    .map_err(io_err)?;

    let write_vec = |w: &mut W, name: &str, vals: &[f64]| -> Result<()> {
        write!(w, "{name} {}", vals.len()).map_err(io_err)?;
        writeln!(w).map_err(io_err)?;
        for chunk in vals.chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io_err)?;
        }
        Ok(())
    };
    write_vec(&mut w, "params", &model.params.to_flat())?;
    write_vec(&mut w, "mean", model.standardizer.mean.as_slice().unwrap())?;
    write_vec(&mut w, "std", model.standardizer.std.as_slice().unwrap())?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<DelayModel> {
    let mut lines = BufReader::new(r).lines();
    let mut next_line = || -> Result<String> {
        lines
            .next()
            .transpose()
            .map_err(|e| Error::io("<model>", e))?
            .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))
    };

    let magic = next_line()?;
    if magic.trim() != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!("bad header {magic:?}")));
    }
    let shape_line = next_line()?;
    let mut n = 0usize;
    let mut gcn_hidden = 0usize;
    let mut lstm_hidden = 0usize;
    for tok in shape_line.split_whitespace().skip(1) {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| Error::ModelFormat(format!("bad shape token {tok:?}")))?;
        let val: usize = val
            .parse()
            .map_err(|_| Error::ModelFormat(format!("bad shape value {tok:?}")))?;
        match key {
            "n" => n = val,
            "gcn_hidden" => gcn_hidden = val,
            "lstm_hidden" => lstm_hidden = val,
            _ => return Err(Error::ModelFormat(format!("unknown shape key {key:?}"))),
        }
    }
    if n == 0 || gcn_hidden == 0 || lstm_hidden == 0 {
        return Err(Error::ModelFormat("incomplete shape header".into()));
    }

    let mut read_vec = |expected_name: &str| -> Result<Vec<f64>> {
        let head = next_line()?;
        let mut parts = head.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::ModelFormat("missing block name".into()))?;
        if name != expected_name {
            return Err(Error::ModelFormat(format!(
                "expected block {expected_name:?}, found {name:?}"
            )));
        }
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ModelFormat(format!("bad count in block {name:?}")))?;
        let mut vals = Vec::with_capacity(count);
        while vals.len() < count {
            let line = next_line()?;
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::ModelFormat(format!("bad float {tok:?}")))?;
                vals.push(v);
            }
        }
        if vals.len() != count {
            return Err(Error::ModelFormat(format!(
                "block {name:?}: expected {count} values, got {}",
                vals.len()
            )));
        }
        Ok(vals)
    };

    let flat = read_vec("params")?;
    let mean = read_vec("mean")?;
    let std = read_vec("std")?;
    if mean.len() != n || std.len() != n {
        return Err(Error::ModelFormat("standardizer size mismatch".into()));
    }
    let template = DelayModelParams::init(
        NetShape {
            gcn_hidden,
            lstm_hidden,
        },
        0,
    );
    let params = template
        .from_flat(&flat)
        .map_err(|_| Error::ModelFormat("parameter count mismatch".into()))?;
    Ok(DelayModel {
        params,
        standardizer: Standardizer {
            mean: Array1::from_vec(mean),
            std: Array1::from_vec(std),
        },
    })
}

pub fn write_model_file(model: &DelayModel, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_model(model, std::io::BufWriter::new(f))
}

pub fn read_model_file(path: &Path) -> Result<DelayModel> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_model(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_matrix(n: usize, p: usize, seed: u64) -> FeatureMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((n, p), |(i, j)| {
            60.0 + 10.0 * i as f64 + 20.0 * ((j as f64 / 3.0).sin() + rng.gen_range(-0.2..0.2))
        });
        FeatureMatrix {
            values,
            mask: Array2::from_elem((n, p), true),
            segment_ids: (0..n).map(|i| format!("s{i}")).collect(),
            slot_labels: (0..p).map(|j| format!("h{j:02}")).collect(),
        }
    }

    fn chain_a_hat(n: usize) -> Array2<f64> {
        let mut a = Array2::zeros((n, n));
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
            a[(i + 1, i)] = 1.0;
        }
        super::super::normalize_adjacency(&a).unwrap()
    }

    #[test]
    fn windows_slide_correctly() {
        let fm = toy_matrix(3, 12, 1);
        let ws = windows_from_matrix(&fm, 4);
        assert_eq!(ws.len(), 8);
        assert_eq!(ws[0].input.dim(), (3, 4));
        assert_eq!(ws[0].target, fm.values.column(4).to_owned());
        assert_eq!(ws[7].target, fm.values.column(11).to_owned());
    }

    #[test]
    fn standardizer_round_trip() {
        let fm = toy_matrix(4, 12, 2);
        let s = Standardizer::fit(&fm.values);
        let ws = windows_from_matrix(&fm, 4);
        let (_, target_std, _) = s.standardize_window(&ws[0]);
        let back = s.destandardize(&target_std);
        for (a, b) in back.iter().zip(ws[0].target.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_epoch_train_returns_initialization() {
        let fm = toy_matrix(4, 12, 3);
        let s = Standardizer::fit(&fm.values);
        let ws = windows_from_matrix(&fm, 4);
        let a_hat = chain_a_hat(4);
        let hyper = Hyperparams {
            epochs: 0,
            ..Default::default()
        };
        let (model, history) = train(&ws, &a_hat, &s, &hyper).unwrap();
        assert!(history.is_empty());
        assert_eq!(model.params, DelayModelParams::init(hyper.shape, hyper.seed));
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let fm = toy_matrix(5, 12, 4);
        let s = Standardizer::fit(&fm.values);
        let ws = windows_from_matrix(&fm, 4);
        let a_hat = chain_a_hat(5);
        let hyper = Hyperparams {
            epochs: 40,
            ..Default::default()
        };
        let (_, h1) = train(&ws, &a_hat, &s, &hyper).unwrap();
        let (_, h2) = train(&ws, &a_hat, &s, &hyper).unwrap();
        let bits1: Vec<u64> = h1.iter().map(|v| v.to_bits()).collect();
        let bits2: Vec<u64> = h2.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits1, bits2);
    }

    #[test]
    fn constant_target_converges_to_bias() {
        // All dwell values equal: a bias-only solution exists, so the loss
        // must collapse quickly.
        let n = 3;
        let values = Array2::from_elem((n, 12), 120.0);
        let fm = FeatureMatrix {
            values,
            mask: Array2::from_elem((n, 12), true),
            segment_ids: (0..n).map(|i| format!("s{i}")).collect(),
            slot_labels: (0..12).map(|j| format!("h{j:02}")).collect(),
        };
        let s = Standardizer::fit(&fm.values);
        let ws = windows_from_matrix(&fm, 4);
        let a_hat = chain_a_hat(n);
        let hyper = Hyperparams {
            lr: 0.05,
            epochs: 2000,
            ..Default::default()
        };
        let (model, _) = train(&ws, &a_hat, &s, &hyper).unwrap();
        let rmse = evaluate_rmse(&model, &a_hat, &ws).unwrap();
        assert!(rmse < 1.0, "rmse {rmse}");
    }

    #[test]
    fn rmse_of_constant_offset() {
        let fm = toy_matrix(3, 12, 6);
        let s = Standardizer::fit(&fm.values);
        let ws = windows_from_matrix(&fm, 4);
        let a_hat = chain_a_hat(3);
        let (model, _) = train(
            &ws,
            &a_hat,
            &s,
            &Hyperparams {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        // perfect predictor: rmse 0 when targets equal predictions
        let preds: Vec<Array1<f64>> = ws
            .iter()
            .map(|w| model.predict(&a_hat, &w.input).unwrap())
            .collect();
        let mut perfect = ws.clone();
        for (w, p) in perfect.iter_mut().zip(&preds) {
            w.target = p.clone();
        }
        assert!(evaluate_rmse(&model, &a_hat, &perfect).unwrap() < 1e-9);

        // constant +10 s error everywhere: rmse exactly 10
        let mut shifted = perfect;
        for w in shifted.iter_mut() {
            w.target.mapv_inplace(|v| v + 10.0);
        }
        let rmse = evaluate_rmse(&model, &a_hat, &shifted).unwrap();
        assert!((rmse - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rmse_matches_hand_built_case() {
        // 2 windows x 2 segments, errors +3 and -4 in one, +0 and 0 in the
        // other: rmse = sqrt((9 + 16) / 4) = 2.5
        let s = Standardizer {
            mean: array![0.0, 0.0],
            std: array![1.0, 1.0],
        };
        let params = DelayModelParams::init(NetShape::default(), 0).zeros_like();
        let model = DelayModel {
            params,
            standardizer: s,
        };
        let a_hat = Array2::eye(2);
        // zero params predict 0 everywhere
        let mk = |t0: f64, t1: f64| TrainingWindow {
            input: Array2::zeros((2, 4)),
            target: array![t0, t1],
            target_mask: vec![true, true],
        };
        let ws = vec![mk(-3.0, 4.0), mk(0.0, 0.0)];
        let rmse = evaluate_rmse(&model, &a_hat, &ws).unwrap();
        assert!((rmse - 2.5).abs() < 1e-12);
    }

    #[test]
    fn rmse_excludes_masked_cells() {
        let s = Standardizer {
            mean: array![0.0, 0.0],
            std: array![1.0, 1.0],
        };
        let model = DelayModel {
            params: DelayModelParams::init(NetShape::default(), 0).zeros_like(),
            standardizer: s,
        };
        let a_hat = Array2::eye(2);
        let w = TrainingWindow {
            input: Array2::zeros((2, 4)),
            target: array![100.0, 2.0],
            target_mask: vec![false, true],
        };
        let rmse = evaluate_rmse(&model, &a_hat, &[w]).unwrap();
        assert!((rmse - 2.0).abs() < 1e-12);

        // fully masked set errors out
        let w2 = TrainingWindow {
            input: Array2::zeros((2, 4)),
            target: array![1.0, 2.0],
            target_mask: vec![false, false],
        };
        assert!(evaluate_rmse(&model, &a_hat, &[w2]).is_err());
        assert!(evaluate_rmse(&model, &a_hat, &[]).is_err());
    }

    #[test]
    fn search_single_cell_and_rescan() {
        let fm = toy_matrix(4, 12, 7);
        let s = Standardizer::fit(&fm.values);
        let ws = windows_from_matrix(&fm, 4);
        let (train_ws, test_ws) = ws.split_at(6);
        let phys = {
            let mut a = Array2::zeros((4, 4));
            for i in 0..3 {
                a[(i, i + 1)] = 1.0;
                a[(i + 1, i)] = 1.0;
            }
            a
        };
        let corr = super::super::correlation_matrix(&fm.values);
        let hyper = Hyperparams {
            epochs: 30,
            ..Default::default()
        };

        let single = hyperparameter_search(
            &[0.85],
            &[0.65],
            &phys,
            &corr,
            train_ws,
            test_ws,
            &s,
            &hyper,
        )
        .unwrap();
        assert_eq!(single.table.len(), 1);
        assert_eq!((single.best_alpha, single.best_k), (0.85, 0.65));

        let multi = hyperparameter_search(
            &[1.0, 0.85],
            &[0.65, 0.9],
            &phys,
            &corr,
            train_ws,
            test_ws,
            &s,
            &hyper,
        )
        .unwrap();
        assert_eq!(multi.table.len(), 4);
        // the alpha = 1 baseline row is present
        assert!(multi.table.iter().any(|c| c.alpha == 1.0));
        // argmin matches an independent scan of the returned table
        let mut best = multi.table[0];
        for c in &multi.table {
            if c.rmse_s < best.rmse_s
                || (c.rmse_s == best.rmse_s
                    && (c.alpha > best.alpha || (c.alpha == best.alpha && c.k > best.k)))
            {
                best = *c;
            }
        }
        assert_eq!((multi.best_alpha, multi.best_k), (best.alpha, best.k));
    }

    #[test]
    fn model_file_round_trip_is_bitwise() {
        let fm = toy_matrix(4, 12, 8);
        let s = Standardizer::fit(&fm.values);
        let ws = windows_from_matrix(&fm, 4);
        let a_hat = chain_a_hat(4);
        let (model, _) = train(
            &ws,
            &a_hat,
            &s,
            &Hyperparams {
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn model_file_rejects_bad_header() {
        let text = "not-a-model v9\n";
        assert!(read_model(text.as_bytes()).is_err());
    }
}
