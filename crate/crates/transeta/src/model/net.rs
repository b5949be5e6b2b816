//! The delay predictor: two graph-convolution layers with ReLU applied per
//! input slot, an LSTM cell shared across segments run over the H slots, and
//! a linear projection to one dwell value per segment. Forward and backward
//! passes are written out by hand so training stays bitwise deterministic.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Network shape: input is one feature per segment per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub gcn_hidden: usize,
    pub lstm_hidden: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            gcn_hidden: 16,
            lstm_hidden: 32,
        }
    }
}

/// One gate of the LSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    /// input weights, gcn_hidden x lstm_hidden
    pub wx: Array2<f64>,
    /// recurrent weights, lstm_hidden x lstm_hidden
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModelParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub cell_gate: Gate,
    pub output_gate: Gate,
    /// lstm_hidden x 1
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

fn uniform(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl DelayModelParams {
    /// Seeded initialization; the forget gate bias starts at 1.
    pub fn init(shape: NetShape, seed: u64) -> Self {
        let (g, r) = (shape.gcn_hidden, shape.lstm_hidden);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut gate = |rng: &mut ChaCha20Rng, bias: f64| Gate {
            wx: uniform(rng, g, r),
            wh: uniform(rng, r, r),
            b: Array1::from_elem(r, bias),
        };
        DelayModelParams {
            w1: uniform(&mut rng, 1, g),
            b1: Array1::zeros(g),
            w2: uniform(&mut rng, g, g),
            b2: Array1::zeros(g),
            input_gate: gate(&mut rng, 0.0),
            forget_gate: gate(&mut rng, 1.0),
            cell_gate: gate(&mut rng, 0.0),
            output_gate: gate(&mut rng, 0.0),
            w_out: uniform(&mut rng, r, 1),
            b_out: Array1::zeros(1),
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            gcn_hidden: self.w1.ncols(),
            lstm_hidden: self.w_out.nrows(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        for b in z.biases_mut() {
            b.fill(0.0);
        }
        z
    }

    fn tensors(&self) -> [&Array2<f64>; 10] {
        [
            &self.w1,
            &self.w2,
            &self.input_gate.wx,
            &self.input_gate.wh,
            &self.forget_gate.wx,
            &self.forget_gate.wh,
            &self.cell_gate.wx,
            &self.cell_gate.wh,
            &self.output_gate.wx,
            &self.output_gate.wh,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Array2<f64>; 10] {
        [
            &mut self.w1,
            &mut self.w2,
            &mut self.input_gate.wx,
            &mut self.input_gate.wh,
            &mut self.forget_gate.wx,
            &mut self.forget_gate.wh,
            &mut self.cell_gate.wx,
            &mut self.cell_gate.wh,
            &mut self.output_gate.wx,
            &mut self.output_gate.wh,
        ]
    }

    fn biases(&self) -> [&Array1<f64>; 6] {
        [
            &self.b1,
            &self.b2,
            &self.input_gate.b,
            &self.forget_gate.b,
            &self.cell_gate.b,
            &self.output_gate.b,
        ]
    }

    fn biases_mut(&mut self) -> [&mut Array1<f64>; 6] {
        [
            &mut self.b1,
            &mut self.b2,
            &mut self.input_gate.b,
            &mut self.forget_gate.b,
            &mut self.cell_gate.b,
            &mut self.output_gate.b,
        ]
    }

    /// Flattened view of every parameter, in a fixed order shared with
    /// `from_flat`. The projection tensors come last.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in self.tensors() {
            out.extend(t.iter());
        }
        for b in self.biases() {
            out.extend(b.iter());
        }
        out.extend(self.w_out.iter());
        out.extend(self.b_out.iter());
        out
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        let mut it = flat.iter();
        {
            let mut pull = |dst: &mut f64| -> Result<()> {
                *dst = *it
                    .next()
                    .ok_or_else(|| Error::ShapeMismatch("flat vector too short".into()))?;
                Ok(())
            };
            for t in p.tensors_mut() {
                for v in t.iter_mut() {
                    pull(v)?;
                }
            }
            for b in p.biases_mut() {
                for v in b.iter_mut() {
                    pull(v)?;
                }
            }
            for v in p.w_out.iter_mut() {
                pull(v)?;
            }
            for v in p.b_out.iter_mut() {
                pull(v)?;
            }
        }
        if it.next().is_some() {
            return Err(Error::ShapeMismatch("flat vector too long".into()));
        }
        Ok(p)
    }

    pub fn n_params(&self) -> usize {
        self.to_flat().len()
    }

    /// params -= lr * grads
    pub fn step(&mut self, grads: &DelayModelParams, lr: f64) {
        for (t, g) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            t.zip_mut_with(g, |a, b| *a -= lr * b);
        }
        for (t, g) in self.biases_mut().into_iter().zip(grads.biases()) {
            t.zip_mut_with(g, |a, b| *a -= lr * b);
        }
        self.w_out.zip_mut_with(&grads.w_out, |a, b| *a -= lr * b);
        self.b_out.zip_mut_with(&grads.b_out, |a, b| *a -= lr * b);
    }
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn sigmoid(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

fn add_row(x: &mut Array2<f64>, b: &Array1<f64>) {
    for mut row in x.rows_mut() {
        row += b;
    }
}

/// One graph-convolution layer: relu(A_hat . x . w + b).
pub fn gcn_forward(
    a_hat: &Array2<f64>,
    features: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<Array2<f64>> {
    if a_hat.ncols() != features.nrows() || features.ncols() != w.nrows() || w.ncols() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "gcn_forward: A {:?}, X {:?}, W {:?}, b {}",
            a_hat.dim(),
            features.dim(),
            w.dim(),
            b.len()
        )));
    }
    let mut z = a_hat.dot(features).dot(w);
    add_row(&mut z, b);
    Ok(relu(&z))
}

/// Everything the backward pass needs from one forward step.
struct StepCache {
    ax: Array2<f64>,  // A_hat . x           (n x 1)
    a1: Array2<f64>,  // relu output, layer 1 (n x g)
    az1: Array2<f64>, // A_hat . a1           (n x g)
    a2: Array2<f64>,  // relu output, layer 2 (n x g)
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    c_prev: Array2<f64>,
    h_prev: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// Forward pass over one window (N x H standardized dwell inputs), returning
/// the standardized prediction for slot H+1.
pub fn forward(
    params: &DelayModelParams,
    a_hat: &Array2<f64>,
    input: &Array2<f64>,
) -> Result<Array1<f64>> {
    let (pred, _) = forward_cached(params, a_hat, input)?;
    Ok(pred)
}

/// Runs the shared LSTM cell over a sequence of spatial encodings (one
/// N x gcn_hidden matrix per slot) and projects the final hidden state to
/// one value per segment.
pub fn recurrent_forward(
    params: &DelayModelParams,
    encodings: &[Array2<f64>],
) -> Result<Array1<f64>> {
    let first = encodings
        .first()
        .ok_or_else(|| Error::ShapeMismatch("recurrent_forward needs at least one step".into()))?;
    let n = first.nrows();
    let r = params.shape().lstm_hidden;
    let mut h_state = Array2::zeros((n, r));
    let mut c_state: Array2<f64> = Array2::zeros((n, r));

    for enc in encodings {
        if enc.nrows() != n || enc.ncols() != params.shape().gcn_hidden {
            return Err(Error::ShapeMismatch(format!(
                "encoding {:?} vs expected ({n}, {})",
                enc.dim(),
                params.shape().gcn_hidden
            )));
        }
        let gate_pre = |gate: &Gate| {
            let mut z = enc.dot(&gate.wx) + h_state.dot(&gate.wh);
            add_row(&mut z, &gate.b);
            z
        };
        let i = sigmoid(&gate_pre(&params.input_gate));
        let f = sigmoid(&gate_pre(&params.forget_gate));
        let g = gate_pre(&params.cell_gate).mapv(f64::tanh);
        let o = sigmoid(&gate_pre(&params.output_gate));
        c_state = &f * &c_state + &i * &g;
        h_state = &o * &c_state.mapv(f64::tanh);
    }
    Ok(h_state.dot(&params.w_out).column(0).to_owned() + params.b_out[0])
}

fn forward_cached(
    params: &DelayModelParams,
    a_hat: &Array2<f64>,
    input: &Array2<f64>,
) -> Result<(Array1<f64>, Vec<StepCache>)> {
    let n = input.nrows();
    let h_steps = input.ncols();
    if h_steps == 0 {
        return Err(Error::ShapeMismatch("window has no input slots".into()));
    }
    if a_hat.nrows() != n || a_hat.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "adjacency {:?} vs {} segments",
            a_hat.dim(),
            n
        )));
    }
    let shape = params.shape();
    let r = shape.lstm_hidden;

    let mut h_state = Array2::zeros((n, r));
    let mut c_state = Array2::zeros((n, r));
    let mut caches = Vec::with_capacity(h_steps);

    for t in 0..h_steps {
        let x = input.column(t).insert_axis(Axis(1)).to_owned();
        let ax = a_hat.dot(&x);
        let mut pre1 = ax.dot(&params.w1);
        add_row(&mut pre1, &params.b1);
        let a1 = relu(&pre1);
        let az1 = a_hat.dot(&a1);
        let mut pre2 = az1.dot(&params.w2);
        add_row(&mut pre2, &params.b2);
        let a2 = relu(&pre2);

        let gate_pre = |gate: &Gate| {
            let mut z = a2.dot(&gate.wx) + h_state.dot(&gate.wh);
            add_row(&mut z, &gate.b);
            z
        };
        let i = sigmoid(&gate_pre(&params.input_gate));
        let f = sigmoid(&gate_pre(&params.forget_gate));
        let g = gate_pre(&params.cell_gate).mapv(f64::tanh);
        let o = sigmoid(&gate_pre(&params.output_gate));

        let c_prev = c_state.clone();
        let h_prev = h_state.clone();
        c_state = &f * &c_prev + &i * &g;
        let tanh_c = c_state.mapv(f64::tanh);
        h_state = &o * &tanh_c;

        caches.push(StepCache {
            ax,
            a1,
            az1,
            a2,
            i,
            f,
            g,
            o,
            c_prev,
            h_prev,
            tanh_c,
        });
    }

    let pred = h_state.dot(&params.w_out).column(0).to_owned() + params.b_out[0];
    Ok((pred, caches))
}

/// Loss and gradients for a batch of windows: mean squared error over the
/// observed target cells, on the standardized scale.
///
/// `windows` supplies (input N x H, target N, mask N). Returns the loss and
/// a gradient for every parameter, both averaged over the total number of
/// observed cells.
pub fn loss_and_grads(
    params: &DelayModelParams,
    a_hat: &Array2<f64>,
    windows: &[(Array2<f64>, Array1<f64>, Vec<bool>)],
) -> Result<(f64, DelayModelParams)> {
    let mut grads = params.zeros_like();
    let total_obs: usize = windows
        .iter()
        .map(|(_, _, m)| m.iter().filter(|&&b| b).count())
        .sum();
    if total_obs == 0 {
        return Err(Error::EmptyTestSet);
    }
    let scale = 1.0 / total_obs as f64;
    let mut loss = 0.0;

    for (input, target, mask) in windows {
        let n = input.nrows();
        let (pred, caches) = forward_cached(params, a_hat, input)?;

        // d loss / d pred
        let mut dpred = Array1::zeros(n);
        for k in 0..n {
            if mask[k] {
                let e = pred[k] - target[k];
                loss += scale * e * e;
                dpred[k] = 2.0 * scale * e;
            }
        }

        // projection backward
        let h_last = &caches.last().unwrap().o * &caches.last().unwrap().tanh_c;
        let dpred2 = dpred.insert_axis(Axis(1));
        grads.w_out += &h_last.t().dot(&dpred2);
        grads.b_out[0] += dpred2.sum();
        let mut dh = dpred2.dot(&params.w_out.t());
        let mut dc = Array2::zeros(dh.dim());

        // backward through time
        for cache in caches.iter().rev() {
            let done = &dh * &cache.tanh_c;
            dc = &dc + &(&dh * &cache.o * &cache.tanh_c.mapv(|v| 1.0 - v * v));

            let di = &dc * &cache.g;
            let df = &dc * &cache.c_prev;
            let dg = &dc * &cache.i;

            let dpre_i = &di * &cache.i * &cache.i.mapv(|v| 1.0 - v);
            let dpre_f = &df * &cache.f * &cache.f.mapv(|v| 1.0 - v);
            let dpre_g = &dg * &cache.g.mapv(|v| 1.0 - v * v);
            let dpre_o = &done * &cache.o * &cache.o.mapv(|v| 1.0 - v);

            let mut da2 = Array2::zeros(cache.a2.dim());
            let mut dh_prev = Array2::zeros(dh.dim());
            for (gate, grad_gate, dpre) in [
                (&params.input_gate, &mut grads.input_gate, &dpre_i),
                (&params.forget_gate, &mut grads.forget_gate, &dpre_f),
                (&params.cell_gate, &mut grads.cell_gate, &dpre_g),
                (&params.output_gate, &mut grads.output_gate, &dpre_o),
            ] {
                grad_gate.wx += &cache.a2.t().dot(dpre);
                grad_gate.wh += &cache.h_prev.t().dot(dpre);
                grad_gate.b += &dpre.sum_axis(Axis(0));
                da2 = da2 + dpre.dot(&gate.wx.t());
                dh_prev = dh_prev + dpre.dot(&gate.wh.t());
            }

            // GCN layer 2 backward (A_hat is symmetric)
            let dpre2 = &da2 * &cache.a2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            grads.w2 += &cache.az1.t().dot(&dpre2);
            grads.b2 += &dpre2.sum_axis(Axis(0));
            let da1 = a_hat.dot(&dpre2.dot(&params.w2.t()));

            // GCN layer 1 backward
            let dpre1 = &da1 * &cache.a1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            grads.w1 += &cache.ax.t().dot(&dpre1);
            grads.b1 += &dpre1.sum_axis(Axis(0));

            dh = dh_prev;
            dc = &dc * &cache.f;
        }
    }

    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gcn_identity_passthrough() {
        // A = I, W = I, b = 0, non-negative input: output equals input
        let a = Array2::eye(3);
        let x = array![[1.0, 2.0], [0.0, 0.5], [3.0, 0.0]];
        let w = Array2::eye(2);
        let b = Array1::zeros(2);
        let y = gcn_forward(&a, &x, &w, &b).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn gcn_zero_input_broadcasts_bias() {
        let a = Array2::eye(2);
        let x = Array2::zeros((2, 3));
        let w = Array2::from_elem((3, 2), 0.7);
        let b = array![0.5, -0.25];
        let y = gcn_forward(&a, &x, &w, &b).unwrap();
        for row in y.rows() {
            assert_eq!(row[0], 0.5);
            assert_eq!(row[1], 0.0); // relu clips the negative bias
        }
    }

    #[test]
    fn gcn_matches_triple_loop_oracle() {
        let a = array![[0.5, 0.3, 0.0], [0.3, 0.4, 0.2], [0.0, 0.2, 0.9]];
        let x = array![[1.0, -2.0], [0.3, 0.7], [-1.0, 0.4]];
        let w = array![[0.2, -0.5, 1.0], [0.8, 0.1, -0.3]];
        let b = array![0.05, -0.02, 0.0];
        let y = gcn_forward(&a, &x, &w, &b).unwrap();

        let (n, fin, fout) = (3, 2, 3);
        for i in 0..n {
            for k in 0..fout {
                let mut acc = b[k];
                for j in 0..n {
                    for f in 0..fin {
                        acc += a[(i, j)] * x[(j, f)] * w[(f, k)];
                    }
                }
                let expect = acc.max(0.0);
                assert!((y[(i, k)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gcn_shape_mismatch_rejected() {
        let a = Array2::eye(3);
        let x = Array2::zeros((2, 2));
        let w = Array2::eye(2);
        let b = Array1::zeros(2);
        assert!(gcn_forward(&a, &x, &w, &b).is_err());
    }

    #[test]
    fn zero_params_zero_input_predicts_zero() {
        let shape = NetShape::default();
        let params = DelayModelParams::init(shape, 1).zeros_like();
        let a_hat = Array2::eye(4);
        let input = Array2::zeros((4, 4));
        let pred = forward(&params, &a_hat, &input).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_is_n_for_any_n() {
        let params = DelayModelParams::init(NetShape::default(), 2);
        for n in [1usize, 3, 7] {
            let a_hat = Array2::eye(n);
            let input = Array2::from_elem((n, 4), 0.5);
            let pred = forward(&params, &a_hat, &input).unwrap();
            assert_eq!(pred.len(), n);
        }
    }

    #[test]
    fn single_segment_cell_matches_hand_rolled_gates() {
        // 1 segment, gcn hidden 1, lstm hidden 1, two steps, every weight
        // pinned by hand; compare against scalar gate arithmetic.
        let shape = NetShape { gcn_hidden: 1, lstm_hidden: 1 };
        let mut p = DelayModelParams::init(shape, 0).zeros_like();
        p.w1[(0, 0)] = 1.0; // identity spatial encoder on 1 node
        p.w2[(0, 0)] = 1.0;
        p.input_gate.wx[(0, 0)] = 0.6;
        p.input_gate.wh[(0, 0)] = -0.2;
        p.input_gate.b[0] = 0.1;
        p.forget_gate.wx[(0, 0)] = -0.4;
        p.forget_gate.wh[(0, 0)] = 0.3;
        p.forget_gate.b[0] = 0.9;
        p.cell_gate.wx[(0, 0)] = 1.1;
        p.cell_gate.wh[(0, 0)] = 0.5;
        p.cell_gate.b[0] = -0.05;
        p.output_gate.wx[(0, 0)] = 0.7;
        p.output_gate.wh[(0, 0)] = 0.2;
        p.output_gate.b[0] = 0.0;
        p.w_out[(0, 0)] = 1.3;
        p.b_out[0] = 0.25;

        let a_hat = Array2::eye(1);
        let input = array![[0.8, -0.3]];
        let pred = forward(&p, &a_hat, &input).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for &x_raw in &[0.8, -0.3] {
            let x = (x_raw as f64).max(0.0); // two identity relu layers
            let i = sig(0.6 * x - 0.2 * h + 0.1);
            let f = sig(-0.4 * x + 0.3 * h + 0.9);
            let g = (1.1 * x + 0.5 * h - 0.05).tanh();
            let o = sig(0.7 * x + 0.2 * h);
            c = f * c + i * g;
            h = o * c.tanh();
        }
        let expect = 1.3 * h + 0.25;
        assert!((pred[0] - expect).abs() < 1e-12, "{} vs {expect}", pred[0]);
    }

    #[test]
    fn recurrent_rejects_empty_sequence() {
        let params = DelayModelParams::init(NetShape::default(), 1);
        assert!(recurrent_forward(&params, &[]).is_err());
    }

    #[test]
    fn recurrent_zero_everything_gives_zero() {
        let params = DelayModelParams::init(NetShape::default(), 1).zeros_like();
        let enc = vec![Array2::zeros((5, 16)); 4];
        let pred = recurrent_forward(&params, &enc).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
        assert_eq!(pred.len(), 5);
    }

    #[test]
    fn forward_composes_gcn_and_recurrent() {
        use rand::Rng;
        let params = DelayModelParams::init(NetShape::default(), 5);
        let n = 4;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(19);
        let mut sym = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(0.0..1.0);
                sym[(i, j)] = v;
                sym[(j, i)] = v;
            }
        }
        let a_hat = crate::model::normalize_adjacency(&sym).unwrap();
        let input = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-1.0..1.0));

        // Independent route: run the two GCN layers per slot, then the cell.
        let encodings: Vec<Array2<f64>> = (0..4)
            .map(|t| {
                let x = input.column(t).insert_axis(Axis(1)).to_owned();
                let a1 = gcn_forward(&a_hat, &x, &params.w1, &params.b1).unwrap();
                gcn_forward(&a_hat, &a1, &params.w2, &params.b2).unwrap()
            })
            .collect();
        let via_ops = recurrent_forward(&params, &encodings).unwrap();
        let direct = forward(&params, &a_hat, &input).unwrap();
        for (a, b) in direct.iter().zip(via_ops.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = DelayModelParams::init(NetShape::default(), 9);
        let flat = p.to_flat();
        let q = p.from_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(p.from_flat(&flat[..flat.len() - 1]).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        use rand::Rng;
        let shape = NetShape { gcn_hidden: 3, lstm_hidden: 4 };
        let params = DelayModelParams::init(shape, 7);
        let n = 5;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(42);
        let mut sym = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(0.0..1.0);
                sym[(i, j)] = v;
                sym[(j, i)] = v;
            }
        }
        let a_hat = crate::model::normalize_adjacency(&sym).unwrap();
        let windows: Vec<(Array2<f64>, Array1<f64>, Vec<bool>)> = (0..3)
            .map(|_| {
                let input = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-1.0..1.0));
                let target = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
                let mask = (0..n).map(|k| k != 2).collect();
                (input, target, mask)
            })
            .collect();

        let (_, grads) = loss_and_grads(&params, &a_hat, &windows).unwrap();
        let flat = params.to_flat();
        let gflat = grads.to_flat();

        let h = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..flat.len() {
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let (lp, _) = loss_and_grads(&params.from_flat(&plus).unwrap(), &a_hat, &windows).unwrap();
            let (lm, _) = loss_and_grads(&params.from_flat(&minus).unwrap(), &a_hat, &windows).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (gflat[k] - fd).abs() / gflat[k].abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn permutation_equivariance() {
        use rand::Rng;
        let params = DelayModelParams::init(NetShape::default(), 3);
        let n = 6;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let mut sym = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(0.0..1.0);
                sym[(i, j)] = v;
                sym[(j, i)] = v;
            }
        }
        let a_hat = crate::model::normalize_adjacency(&sym).unwrap();
        let input = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-1.0..1.0));
        let pred = forward(&params, &a_hat, &input).unwrap();

        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let mut a_p = Array2::zeros((n, n));
        let mut x_p = Array2::zeros((n, 4));
        for i in 0..n {
            for j in 0..n {
                a_p[(i, j)] = a_hat[(perm[i], perm[j])];
            }
            for t in 0..4 {
                x_p[(i, t)] = input[(perm[i], t)];
            }
        }
        let pred_p = forward(&params, &a_p, &x_p).unwrap();
        for i in 0..n {
            assert!((pred_p[i] - pred[perm[i]]).abs() < 1e-10);
        }
    }
}
