use super::env::{NUM_ACTIONS, STATE_DIM};
use crate::error::{Error, Result};
use crate::numeric::{Parameters, Rng};

/// Layer widths from state to Q-values.
pub const QNET_WIDTHS: [usize; 5] = [STATE_DIM, 64, 64, 32, NUM_ACTIONS];
/// Output bias at initialization; keeps early Q-values inside the log domain of the loss.
pub const OUTPUT_BIAS_INIT: f64 = 1.0;

/// Fully connected layer stored input-major: `w[i * n_out + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.b);
        for (xi, row) in x.iter().zip(self.w.chunks_exact(self.n_out)) {
            for (yo, wo) in y.iter_mut().zip(row) {
                *yo += xi * wo;
            }
        }
    }
}

/// Four dense layers, tanh on the hidden ones, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    pub layers: Vec<Dense>,
}

/// Activations of one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(net: &QNet) -> Self {
        let mut acts = vec![vec![0.0; net.layers[0].n_in]];
        acts.extend(net.layers.iter().map(|l| vec![0.0; l.n_out]));
        let deltas = acts.clone();
        Workspace { acts, deltas }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

// four independent accumulators so the reduction vectorizes
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

impl QNet {
    pub fn zeros() -> Self {
        QNet {
            layers: QNET_WIDTHS
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        }
    }

    /// Uniform ±1/√fan_in weights, zero hidden biases, output bias [`OUTPUT_BIAS_INIT`].
    pub fn random(rng: &mut Rng) -> Self {
        let mut net = Self::zeros();
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            layer.w.iter_mut().for_each(|v| *v = rng.uniform_range(-bound, bound));
        }
        net.layers.last_mut().expect("layers").b.fill(OUTPUT_BIAS_INIT);
        net
    }

    pub fn num_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn forward_into(&self, state: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(state);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let y = &mut after[0];
            layer.forward(&before[l], y);
            if l < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != QNET_WIDTHS[0] {
            return Err(Error::shape(QNET_WIDTHS[0], state.len()));
        }
        let mut ws = Workspace::new(self);
        self.forward_into(state, &mut ws);
        for (l, a) in ws.acts.iter().enumerate().skip(1) {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("Q-network layer {l} output")));
            }
        }
        Ok(ws.output().to_vec())
    }

    /// Adds the gradient of `Σ dout·output` into `grad`, using the activations in `ws`.
    pub fn backward(&self, ws: &mut Workspace, dout: &[f64], grad: &mut QNet) {
        let n = self.layers.len();
        ws.deltas[n].copy_from_slice(dout);
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            let (lower, upper) = ws.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            let x = &ws.acts[l];
            for (gb, d) in g.b.iter_mut().zip(delta.iter()) {
                *gb += d;
            }
            for (xi, grow) in x.iter().zip(g.w.chunks_exact_mut(layer.n_out)) {
                for (gw, d) in grow.iter_mut().zip(delta.iter()) {
                    *gw += xi * d;
                }
            }
            if l > 0 {
                // back through tanh of the layer below
                let below = &mut lower[l];
                for ((dx, row), a) in below.iter_mut().zip(layer.w.chunks_exact(layer.n_out)).zip(x) {
                    *dx = dot4(row, delta) * (1.0 - a * a);
                }
            }
        }
    }

    /// Gradient of output `action` at `state` with respect to every parameter.
    pub fn output_gradient(&self, state: &[f64], action: usize) -> Result<QNet> {
        if action >= self.num_outputs() {
            return Err(Error::invalid(format!("action {action} out of range")));
        }
        let mut ws = Workspace::new(self);
        self.forward_into(state, &mut ws);
        let mut dout = vec![0.0; self.num_outputs()];
        dout[action] = 1.0;
        let mut grad = QNet::zeros();
        self.backward(&mut ws, &dout, &mut grad);
        Ok(grad)
    }

    /// `p ← p − lr·g` over every tensor.
    pub fn apply_gradient(&mut self, grad: &QNet, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (p, d) in layer.w.iter_mut().zip(&g.w) {
                *p -= lr * d;
            }
            for (p, d) in layer.b.iter_mut().zip(&g.b) {
                *p -= lr * d;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

impl Parameters for QNet {
    fn visit(&self, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        for (l, layer) in self.layers.iter().enumerate() {
            f(&format!("dense{}.w", l + 1), layer.n_in, layer.n_out, &layer.w);
            f(&format!("dense{}.b", l + 1), 1, layer.n_out, &layer.b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, usize, usize, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("dense{}.w", l + 1), layer.n_in, layer.n_out, &mut layer.w);
            f(&format!("dense{}.b", l + 1), 1, layer.n_out, &mut layer.b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_difference_gradient, max_relative_error, FD_STEP, GRAD_TOLERANCE};

    fn random_state(rng: &mut Rng) -> Vec<f64> {
        (0..STATE_DIM).map(|_| rng.uniform()).collect()
    }

    #[test]
    fn zero_net_outputs_zero() {
        assert_eq!(QNet::zeros().forward(&[0.3, 0.1, 0.9, 0.5]).unwrap(), vec![0.0; NUM_ACTIONS]);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = Rng::new(1);
        let net = QNet::random(&mut rng);
        let s = random_state(&mut rng);
        assert_eq!(net.forward(&s).unwrap(), net.forward(&s.clone()).unwrap());
        assert!(net.forward(&[0.0; 3]).is_err());
    }

    #[test]
    fn output_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = Rng::new(seed);
            let net = QNet::random(&mut rng);
            let s = random_state(&mut rng);
            let action = rng.below(NUM_ACTIONS);
            let analytic = net.output_gradient(&s, action).unwrap().flatten();
            let numeric = finite_difference_gradient(
                |p| {
                    let mut n = net.clone();
                    n.assign(p).unwrap();
                    n.forward(&s).unwrap()[action]
                },
                &net.flatten(),
                FD_STEP,
            )
            .unwrap();
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < GRAD_TOLERANCE, "seed {seed}: {err}");
        }
    }

    #[test]
    fn output_bias_shift_keeps_argmax() {
        let mut rng = Rng::new(4);
        let net = QNet::random(&mut rng);
        let s = random_state(&mut rng);
        let mut shifted = net.clone();
        shifted.layers.last_mut().unwrap().b.iter_mut().for_each(|b| *b += 3.7);
        assert_eq!(
            super::super::argmax(&net.forward(&s).unwrap()),
            super::super::argmax(&shifted.forward(&s).unwrap())
        );
    }
}
