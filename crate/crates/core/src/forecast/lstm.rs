//! Single-layer LSTM regressor with a dense output head.
//!
//! Parameters live in one flat vector so that local updates, aggregation and
//! the optimizer all operate on the same layout:
//!
//! ```text
//! [ w_gates (4H x (I+H)) | b_gates (4H) | w_out (O x H) | b_out (O) ]
//! ```
//!
//! Gate blocks inside `w_gates`/`b_gates` are ordered input, forget, cell,
//! output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ForecastError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    Linear,
    /// Softmax over the outputs; for probability-style targets only.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub input_size: usize,
    pub hidden_size: usize,
    pub output_size: usize,
    pub head: OutputHead,
}

impl LstmShape {
    pub fn new(input_size: usize, hidden_size: usize, output_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            output_size,
            head: OutputHead::Linear,
        }
    }

    fn concat(&self) -> usize {
        self.input_size + self.hidden_size
    }

    pub fn w_gates_len(&self) -> usize {
        4 * self.hidden_size * self.concat()
    }

    pub fn b_gates_len(&self) -> usize {
        4 * self.hidden_size
    }

    pub fn w_out_len(&self) -> usize {
        self.output_size * self.hidden_size
    }

    pub fn param_count(&self) -> usize {
        self.w_gates_len() + self.b_gates_len() + self.w_out_len() + self.output_size
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b_gates = self.w_gates_len();
        let w_out = b_gates + self.b_gates_len();
        let b_out = w_out + self.w_out_len();
        (b_gates, w_out, b_out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    shape: LstmShape,
    values: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(shape: LstmShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.param_count()],
        }
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) initialization with forget-gate bias 1.
    pub fn init(shape: LstmShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (shape.hidden_size.max(1) as f64).sqrt();
        let mut values: Vec<f64> = (0..shape.param_count()).map(|_| rng.gen_range(-bound..bound)).collect();
        let (b_gates, _, b_out) = shape.offsets();
        let h = shape.hidden_size;
        for (k, v) in values[b_gates..b_gates + 4 * h].iter_mut().enumerate() {
            *v = if (h..2 * h).contains(&k) { 1.0 } else { 0.0 };
        }
        for v in &mut values[b_out..] {
            *v = 0.0;
        }
        Self { shape, values }
    }

    pub fn from_flat(shape: LstmShape, values: Vec<f64>) -> Result<Self, ForecastError> {
        if values.len() != shape.param_count() {
            return Err(ForecastError::DimensionMismatch {
                expected: shape.param_count(),
                got: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> LstmShape {
        self.shape
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn w_gates(&self) -> &[f64] {
        &self.values[..self.shape.w_gates_len()]
    }

    pub fn b_gates(&self) -> &[f64] {
        let (b, w, _) = self.shape.offsets();
        &self.values[b..w]
    }

    pub fn w_out(&self) -> &[f64] {
        let (_, w, b) = self.shape.offsets();
        &self.values[w..b]
    }

    pub fn b_out(&self) -> &[f64] {
        let (_, _, b) = self.shape.offsets();
        &self.values[b..]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Per-step activations kept for backpropagation.
struct StepCache {
    z: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct ForwardCache {
    steps: Vec<StepCache>,
    h_last: Vec<f64>,
    output: Vec<f64>,
}

fn check_window<R: AsRef<[f64]>>(params: &LstmParams, window: &[R]) -> Result<(), ForecastError> {
    for row in window {
        if row.as_ref().len() != params.shape.input_size {
            return Err(ForecastError::DimensionMismatch {
                expected: params.shape.input_size,
                got: row.as_ref().len(),
            });
        }
    }
    Ok(())
}

fn forward_cached<R: AsRef<[f64]>>(params: &LstmParams, window: &[R], keep: bool) -> ForwardCache {
    let s = params.shape;
    let (hid, inp, cat) = (s.hidden_size, s.input_size, s.concat());
    let w = params.w_gates();
    let b = params.b_gates();
    let mut h = vec![0.0; hid];
    let mut c = vec![0.0; hid];
    let mut steps = Vec::with_capacity(if keep { window.len() } else { 0 });
    let mut z = vec![0.0; cat];
    let mut a = vec![0.0; 4 * hid];
    for row in window {
        z[..inp].copy_from_slice(row.as_ref());
        z[inp..].copy_from_slice(&h);
        for (r, out) in a.iter_mut().enumerate() {
            let wrow = &w[r * cat..(r + 1) * cat];
            *out = b[r] + wrow.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>();
        }
        for k in 0..hid {
            a[k] = sigmoid(a[k]);
            a[hid + k] = sigmoid(a[hid + k]);
            a[2 * hid + k] = a[2 * hid + k].tanh();
            a[3 * hid + k] = sigmoid(a[3 * hid + k]);
        }
        let c_prev = if keep { c.clone() } else { Vec::new() };
        let mut tanh_c = vec![0.0; hid];
        for k in 0..hid {
            c[k] = a[hid + k] * c[k] + a[k] * a[2 * hid + k];
            tanh_c[k] = c[k].tanh();
            h[k] = a[3 * hid + k] * tanh_c[k];
        }
        if keep {
            steps.push(StepCache {
                z: z.clone(),
                gates: a.clone(),
                c_prev,
                tanh_c,
            });
        }
    }
    let w_out = params.w_out();
    let mut output: Vec<f64> = params.b_out().to_vec();
    for (o, y) in output.iter_mut().enumerate() {
        *y += w_out[o * hid..(o + 1) * hid].iter().zip(&h).map(|(x, v)| x * v).sum::<f64>();
    }
    if s.head == OutputHead::Softmax {
        softmax_in_place(&mut output);
    }
    ForwardCache {
        steps,
        h_last: h,
        output,
    }
}

/// Stateless inference: hidden and cell state start at zero every call.
pub fn lstm_forward<R: AsRef<[f64]>>(params: &LstmParams, window: &[R]) -> Result<Vec<f64>, ForecastError> {
    check_window(params, window)?;
    Ok(forward_cached(params, window, false).output)
}

/// A batch of (window, target) pairs borrowed from a dataset.
pub type Batch<'a, R> = [(&'a [R], &'a [f64])];

/// Mean squared error over every output of every sample.
pub fn batch_loss<R: AsRef<[f64]>>(params: &LstmParams, batch: &Batch<'_, R>) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let o = params.shape.output_size as f64;
    let total: f64 = batch
        .iter()
        .map(|(window, target)| {
            let y = forward_cached(params, window, false).output;
            y.iter().zip(target.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / o
        })
        .sum();
    total / batch.len() as f64
}

/// Loss and its gradient over the flat parameter vector (backpropagation
/// through time).
pub fn loss_and_gradient<R: AsRef<[f64]>>(params: &LstmParams, batch: &Batch<'_, R>) -> (f64, Vec<f64>) {
    let s = params.shape;
    let (hid, inp, cat, outs) = (s.hidden_size, s.input_size, s.concat(), s.output_size);
    let (off_bg, off_wo, off_bo) = s.offsets();
    let mut grad = vec![0.0; s.param_count()];
    if batch.is_empty() {
        return (0.0, grad);
    }
    let n = batch.len() as f64;
    let w = params.w_gates();
    let w_out = params.w_out();
    let mut total = 0.0;

    let mut dh = vec![0.0; hid];
    let mut dc = vec![0.0; hid];
    let mut da = vec![0.0; 4 * hid];
    for (window, target) in batch {
        let cache = forward_cached(params, window, true);
        let y = &cache.output;
        let mut dy: Vec<f64> = y
            .iter()
            .zip(target.iter())
            .map(|(p, t)| 2.0 * (p - t) / (outs as f64 * n))
            .collect();
        total += y.iter().zip(target.iter()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / outs as f64;
        if s.head == OutputHead::Softmax {
            let dot: f64 = dy.iter().zip(y).map(|(d, v)| d * v).sum();
            for (d, v) in dy.iter_mut().zip(y) {
                *d = v * (*d - dot);
            }
        }
        dh.iter_mut().for_each(|v| *v = 0.0);
        dc.iter_mut().for_each(|v| *v = 0.0);
        for (o, d) in dy.iter().enumerate() {
            grad[off_bo + o] += d;
            for k in 0..hid {
                grad[off_wo + o * hid + k] += d * cache.h_last[k];
                dh[k] += d * w_out[o * hid + k];
            }
        }
        for step in cache.steps.iter().rev() {
            let g = &step.gates;
            for k in 0..hid {
                let (gi, gf, gg, go) = (g[k], g[hid + k], g[2 * hid + k], g[3 * hid + k]);
                let tc = step.tanh_c[k];
                let d_o = dh[k] * tc;
                let dck = dc[k] + dh[k] * go * (1.0 - tc * tc);
                da[k] = dck * gg * gi * (1.0 - gi);
                da[hid + k] = dck * step.c_prev[k] * gf * (1.0 - gf);
                da[2 * hid + k] = dck * gi * (1.0 - gg * gg);
                da[3 * hid + k] = d_o * go * (1.0 - go);
                dc[k] = dck * gf;
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (r, dar) in da.iter().enumerate() {
                if *dar == 0.0 {
                    continue;
                }
                grad[off_bg + r] += dar;
                let grow = &mut grad[r * cat..(r + 1) * cat];
                for (gv, zv) in grow.iter_mut().zip(&step.z) {
                    *gv += dar * zv;
                }
                let wrow = &w[r * cat + inp..(r + 1) * cat];
                for (k, wv) in wrow.iter().enumerate() {
                    dh[k] += dar * wv;
                }
            }
        }
    }
    (total / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(len: usize, inp: usize) -> Vec<Vec<f64>> {
        (0..len).map(|t| (0..inp).map(|i| ((t * 7 + i * 3) % 11) as f64 / 11.0).collect()).collect()
    }

    #[test]
    fn zero_params_output_bias_image() {
        let shape = LstmShape::new(3, 4, 2);
        let mut p = LstmParams::zeros(shape);
        let (_, _, b_out) = shape.offsets();
        p.as_flat_mut()[b_out] = 0.25;
        p.as_flat_mut()[b_out + 1] = -1.5;
        let y = lstm_forward(&p, &window(12, 3)).unwrap();
        assert_eq!(y, vec![0.25, -1.5]);
    }

    #[test]
    fn output_length_is_horizon() {
        let p = LstmParams::init(LstmShape::new(3, 5, 4), 1);
        assert_eq!(lstm_forward(&p, &window(12, 3)).unwrap().len(), 4);
    }

    #[test]
    fn forward_is_deterministic_and_stateless() {
        let p = LstmParams::init(LstmShape::new(3, 5, 1), 2);
        let w = window(12, 3);
        let a = lstm_forward(&p, &w).unwrap();
        let _ = lstm_forward(&p, &window(5, 3)).unwrap();
        assert_eq!(a, lstm_forward(&p, &w).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn input_dimension_checked() {
        let p = LstmParams::init(LstmShape::new(3, 5, 1), 2);
        assert!(matches!(
            lstm_forward(&p, &window(4, 2)),
            Err(ForecastError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn softmax_head_sums_to_one() {
        let mut shape = LstmShape::new(3, 4, 3);
        shape.head = OutputHead::Softmax;
        let p = LstmParams::init(shape, 5);
        let y = lstm_forward(&p, &window(6, 3)).unwrap();
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn param_layout_round_trips() {
        let shape = LstmShape::new(3, 2, 1);
        assert_eq!(shape.param_count(), 4 * 2 * 5 + 8 + 2 + 1);
        let p = LstmParams::init(shape, 3);
        let q = LstmParams::from_flat(shape, p.as_flat().to_vec()).unwrap();
        assert_eq!(p, q);
        assert!(LstmParams::from_flat(shape, vec![0.0; 3]).is_err());
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let p = LstmParams::init(LstmShape::new(3, 2, 1), 3);
        assert_eq!(p.b_gates(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
