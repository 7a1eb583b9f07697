//! A small dense regression network with manual backpropagation and the
//! Adam optimizer. Hidden layers are rectified, the scalar output is
//! linear. Gradients are available with respect to the parameters (for
//! training) and the inputs (for saliency).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    /// Layer widths from input to output; the output width is one.
    sizes: Vec<usize>,
    /// Row-major `out x in` weight matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl DenseNet {
    /// He-initialized network with the given input width and hidden
    /// widths; the output layer has a single linear unit.
    pub fn new(input: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            sizes,
            weights,
            biases,
        }
    }

    /// All-zero parameters; predicts zero everywhere.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let weights = (0..sizes.len() - 1)
            .map(|l| vec![0.0; sizes[l] * sizes[l + 1]])
            .collect();
        let biases = (0..sizes.len() - 1).map(|l| vec![0.0; sizes[l + 1]]).collect();
        Self {
            sizes,
            weights,
            biases,
        }
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer_forward(&self, l: usize, input: &[f64], out: &mut Vec<f64>) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        out.clear();
        let w = &self.weights[l];
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let mut acc = self.biases[l][o];
            for (ri, xi) in row.iter().zip(input) {
                acc += ri * xi;
            }
            out.push(acc);
        }
        if l + 1 < self.sizes.len() - 1 {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// Post-activation values of every layer, input first.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        debug_assert_eq!(x.len(), self.input_width());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.layer_count() {
            let mut out = Vec::new();
            self.layer_forward(l, &acts[l], &mut out);
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.activations(x).last().unwrap()[0]
    }

    pub fn predict_batch(&self, rows: &ndarray::Array2<f64>) -> Vec<f64> {
        (0..rows.nrows())
            .map(|i| self.forward(rows.row(i).as_slice().expect("contiguous row")))
            .collect()
    }

    /// Gradient of the scalar output with respect to the input.
    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.activations(x);
        let mut delta = vec![1.0];
        for l in (0..self.layer_count()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[l];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (p, &ri) in prev.iter_mut().zip(row) {
                    *p += d * ri;
                }
            }
            if l > 0 {
                // rectifier mask of the producing layer
                for (p, &a) in prev.iter_mut().zip(&acts[l]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Mean squared error over a batch.
    pub fn batch_mse(&self, xs: &[&[f64]], ys: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let d = self.forward(x) - y;
            acc += d * d;
        }
        acc / xs.len() as f64
    }

    /// Gradients of the batch mean squared error with respect to every
    /// parameter and to the inputs.
    pub fn backward_mse(&self, xs: &[&[f64]], ys: &[f64]) -> Gradients {
        assert_eq!(xs.len(), ys.len());
        let b = xs.len() as f64;
        let mut grads = Gradients::zeros_like(self);
        for (x, &y) in xs.iter().zip(ys) {
            let acts = self.activations(x);
            let pred = acts.last().unwrap()[0];
            let mut delta = vec![2.0 * (pred - y) / b];
            for l in (0..self.layer_count()).rev() {
                let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
                let w = &self.weights[l];
                let gw = &mut grads.weights[l];
                let input = &acts[l];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    grads.biases[l][o] += d;
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for i in 0..fan_in {
                        grow[i] += d * input[i];
                        prev[i] += d * row[i];
                    }
                }
                if l > 0 {
                    for (p, &a) in prev.iter_mut().zip(&acts[l]) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                delta = prev;
            }
            grads.inputs.push(delta);
        }
        grads
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetDocument {
            schema: NET_SCHEMA.into(),
            sizes: self.sizes.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: NetDocument = serde_json::from_str(json)?;
        if doc.schema != NET_SCHEMA {
            return Err(Error::SchemaMismatch(format!(
                "unexpected checkpoint schema {}",
                doc.schema
            )));
        }
        for l in 0..doc.sizes.len().saturating_sub(1) {
            if doc.weights.get(l).map(Vec::len) != Some(doc.sizes[l] * doc.sizes[l + 1])
                || doc.biases.get(l).map(Vec::len) != Some(doc.sizes[l + 1])
            {
                return Err(Error::SchemaMismatch("checkpoint shape mismatch".into()));
            }
        }
        Ok(Self {
            sizes: doc.sizes,
            weights: doc.weights,
            biases: doc.biases,
        })
    }
}

const NET_SCHEMA: &str = "losaw-net-v1";

#[derive(Serialize, Deserialize)]
struct NetDocument {
    schema: String,
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Parameter and input gradients of one batch.
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Per-sample gradient of the loss with respect to the input row.
    pub inputs: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            inputs: Vec::new(),
        }
    }
}

/// Adam with the conventional moment coefficients and bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, net: &DenseNet) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        let update = |params: &mut [f64], gs: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..params.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gs[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gs[i] * gs[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        };
        for l in 0..net.weights.len() {
            update(
                &mut net.weights[l],
                &grads.weights[l],
                &mut self.m_weights[l],
                &mut self.v_weights[l],
            );
            update(
                &mut net.biases[l],
                &grads.biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rng(i: u64) -> rand_chacha::ChaCha8Rng {
        crate::rng::substream(101, "net-test", i)
    }

    #[test]
    fn zero_net_predicts_zero_with_closed_form_last_layer_gradient() {
        let net = DenseNet::zeros(3, &[4]);
        let x = [1.0, -2.0, 0.5];
        assert_eq!(net.forward(&x), 0.0);
        // with y = 2: dL/d(output bias) = 2(0 - 2) = -4
        let grads = net.backward_mse(&[&x], &[2.0]);
        assert_abs_diff_eq!(grads.biases[1][0], -4.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_net_gradient_is_least_squares_gradient() {
        // no hidden layers: f(x) = w.x + b, so the MSE gradient matches
        // the ordinary least-squares gradient
        let mut r = rng(0);
        let net = DenseNet::new(2, &[], &mut r);
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![r.sample(StandardNormal), r.sample(StandardNormal)])
            .collect();
        let ys: Vec<f64> = (0..10).map(|_| r.sample(StandardNormal)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let grads = net.backward_mse(&refs, &ys);
        let b = xs.len() as f64;
        for j in 0..2 {
            let expect: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, &y)| 2.0 * (net.forward(x) - y) * x[j] / b)
                .sum();
            assert_abs_diff_eq!(grads.weights[0][j], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut r = rng(1);
        let mut net = DenseNet::new(4, &[6, 3], &mut r);
        let xs: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let ys: Vec<f64> = (0..8).map(|_| r.sample(StandardNormal)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let grads = net.backward_mse(&refs, &ys);
        let h = 1e-5;
        for l in 0..net.layer_count() {
            for i in (0..net.weights[l].len()).step_by(5) {
                let orig = net.weights[l][i];
                net.weights[l][i] = orig + h;
                let up = net.batch_mse(&refs, &ys);
                net.weights[l][i] = orig - h;
                let down = net.batch_mse(&refs, &ys);
                net.weights[l][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = grads.weights[l][i];
                let denom = fd.abs().max(g.abs()).max(1e-8);
                assert!(
                    (fd - g).abs() / denom < 1e-4,
                    "layer {l} weight {i}: fd {fd} vs grad {g}"
                );
            }
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut r = rng(2);
        let net = DenseNet::new(5, &[8, 4], &mut r);
        let x: Vec<f64> = (0..5).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let grad = net.input_gradient(&x);
        let h = 1e-5;
        for j in 0..5 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (net.forward(&xp) - net.forward(&xm)) / (2.0 * h);
            let denom = fd.abs().max(grad[j].abs()).max(1e-8);
            assert!(
                (fd - grad[j]).abs() / denom < 1e-4,
                "input {j}: fd {fd} vs grad {}",
                grad[j]
            );
        }
    }

    #[test]
    fn adam_first_step_has_unit_scale() {
        // after one step the update is lr * g / (|g| + eps) regardless of
        // the gradient magnitude
        let mut net = DenseNet::zeros(2, &[]);
        let mut adam = Adam::new(0.01, &net);
        let grads = Gradients {
            weights: vec![vec![5.0, -0.003]],
            biases: vec![vec![0.0]],
            inputs: vec![],
        };
        adam.step(&mut net, &grads);
        for (w, g) in net.weights[0].iter().zip([5.0f64, -0.003]) {
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert_abs_diff_eq!(*w, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut r = rng(3);
        let net = DenseNet::new(3, &[4, 2], &mut r);
        let json = net.to_json().unwrap();
        assert_eq!(DenseNet::from_json(&json).unwrap(), net);
        assert!(DenseNet::from_json(&json.replace("losaw-net-v1", "x")).is_err());
    }
}
