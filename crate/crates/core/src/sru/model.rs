use super::layer::{LayerTrace, SruLayer};
use crate::data::NUM_FEATURES;
use crate::error::{Error, Result};
use crate::numeric::{dot, ensure_finite, init_uniform, init_uniform_vec, softmax, Matrix, Parameters, Rng};

pub const HIDDEN_DIM: usize = 10;
/// Sequence length the attention-free head is fixed to.
pub const FIXED_LEN: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SruConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub use_attention: bool,
    pub fixed_len: usize,
}

impl SruConfig {
    pub fn new(use_attention: bool) -> Self {
        SruConfig {
            input_dim: NUM_FEATURES,
            hidden_dim: HIDDEN_DIM,
            use_attention,
            fixed_len: FIXED_LEN,
        }
    }

    pub fn dense_input_dim(&self) -> usize {
        if self.use_attention {
            self.hidden_dim
        } else {
            self.hidden_dim * self.fixed_len
        }
    }
}

/// Additive scorer `score_t = uᵀ tanh(P h_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub u: Vec<f64>,
    pub p: Matrix,
}

impl AttentionParams {
    fn transformed(&self, h: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.p.rows()];
        self.p.matvec_into(h, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        z
    }

    pub fn score(&self, h: &[f64]) -> f64 {
        dot(&self.u, &self.transformed(h))
    }
}

/// Softmax weights of each timestep under the additive scorer.
pub fn attention_weights(hidden: &[Vec<f64>], params: &AttentionParams) -> Result<Vec<f64>> {
    if hidden.is_empty() {
        return Err(Error::invalid("attention over an empty sequence"));
    }
    let scores: Vec<f64> = hidden.iter().map(|h| params.score(h)).collect();
    Ok(softmax(&scores))
}

/// `Σ_t w_t h_t`.
pub fn weighted_context(hidden: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if hidden.is_empty() {
        return Err(Error::invalid("context of an empty sequence"));
    }
    if hidden.len() != weights.len() {
        return Err(Error::shape(hidden.len(), weights.len()));
    }
    let mut ctx = vec![0.0; hidden[0].len()];
    for (h, &w) in hidden.iter().zip(weights) {
        for (c, v) in ctx.iter_mut().zip(h) {
            *c += w * v;
        }
    }
    Ok(ctx)
}

/// Context vector of a hidden-state sequence; accepts any length ≥ 1.
pub fn attention_context(hidden: &[Vec<f64>], params: &AttentionParams) -> Result<Vec<f64>> {
    let weights = attention_weights(hidden, params)?;
    weighted_context(hidden, &weights)
}

/// Single-output linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub w: Vec<f64>,
    pub b: [f64; 1],
}

/// One training/evaluation example: predict the scaled target from the prefix `[0..=end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefixTarget {
    pub end: usize,
    pub target: f64,
}

/// Demand predictor: two stacked SRU layers, optional attention, one dense unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SruModel {
    pub config: SruConfig,
    pub layer1: SruLayer,
    pub layer2: SruLayer,
    pub attention: Option<AttentionParams>,
    pub dense: DenseHead,
}

struct ForwardTrace {
    l1: LayerTrace,
    l2: LayerTrace,
    /// `tanh(P h_t)` per step (attention only).
    z: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

impl SruModel {
    pub fn zeros(config: SruConfig) -> Result<Self> {
        let h = config.hidden_dim;
        Ok(SruModel {
            config,
            layer1: SruLayer::zeros(config.input_dim, h)?,
            layer2: SruLayer::zeros(h, h)?,
            attention: config.use_attention.then(|| AttentionParams {
                u: vec![0.0; h],
                p: Matrix::zeros(h, h),
            }),
            dense: DenseHead {
                w: vec![0.0; config.dense_input_dim()],
                b: [0.0],
            },
        })
    }

    pub fn random(config: SruConfig, rng: &mut Rng) -> Result<Self> {
        let h = config.hidden_dim;
        let mut model = Self::zeros(config)?;
        model.layer1 = SruLayer::random(config.input_dim, h, rng)?;
        model.layer2 = SruLayer::random(h, h, rng)?;
        if let Some(att) = model.attention.as_mut() {
            att.u = init_uniform_vec(h, h, rng);
            att.p = init_uniform(h, h, h, rng);
        }
        let n = config.dense_input_dim();
        model.dense.w = init_uniform_vec(n, n, rng);
        Ok(model)
    }

    fn run(&self, xs: &[[f64; NUM_FEATURES]]) -> Result<ForwardTrace> {
        if xs.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        let inputs: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();
        let l1 = self.layer1.forward_sequence(&inputs)?;
        check_steps(&l1.h, "SRU layer 1")?;
        let l2 = self.layer2.forward_sequence(&l1.h)?;
        check_steps(&l2.h, "SRU layer 2")?;
        let (z, scores) = match &self.attention {
            Some(att) => {
                let z: Vec<Vec<f64>> = l2.h.iter().map(|h| att.transformed(h)).collect();
                let scores: Vec<f64> = z.iter().map(|z| dot(&att.u, z)).collect();
                ensure_finite(&scores, "attention scores")?;
                (z, scores)
            }
            None => (Vec::new(), Vec::new()),
        };
        Ok(ForwardTrace { l1, l2, z, scores })
    }

    fn window_start(&self, end: usize) -> usize {
        (end + 1).saturating_sub(self.config.fixed_len)
    }

    /// Head output for the prefix ending at `end`; also returns the attention
    /// weights (empty without attention).
    fn head(&self, trace: &ForwardTrace, end: usize) -> (f64, Vec<f64>) {
        let h2 = &trace.l2.h;
        let hd = self.config.hidden_dim;
        if self.attention.is_some() {
            let alpha = softmax(&trace.scores[..=end]);
            let mut pred = self.dense.b[0];
            for (k, a) in alpha.iter().enumerate() {
                pred += a * dot(&self.dense.w, &h2[k]);
            }
            (pred, alpha)
        } else {
            // trailing zero padding contributes nothing, so only real steps are summed
            let start = self.window_start(end);
            let mut pred = self.dense.b[0];
            for k in start..=end {
                let slot = (k - start) * hd;
                pred += dot(&self.dense.w[slot..slot + hd], &h2[k]);
            }
            (pred, Vec::new())
        }
    }

    /// Scaled demand predicted from the whole input segment.
    pub fn predict(&self, xs: &[[f64; NUM_FEATURES]]) -> Result<f64> {
        let trace = self.run(xs)?;
        let (pred, _) = self.head(&trace, xs.len() - 1);
        if !pred.is_finite() {
            return Err(Error::NonFinite("dense output".into()));
        }
        Ok(pred)
    }

    /// Predictions for several prefixes of one sequence, sharing the recurrent pass.
    pub fn predict_prefixes(&self, xs: &[[f64; NUM_FEATURES]], ends: &[usize]) -> Result<Vec<f64>> {
        if let Some(&bad) = ends.iter().find(|&&e| e >= xs.len()) {
            return Err(Error::invalid(format!("prefix end {bad} beyond sequence length {}", xs.len())));
        }
        let trace = self.run(xs)?;
        let preds: Vec<f64> = ends.iter().map(|&e| self.head(&trace, e).0).collect();
        ensure_finite(&preds, "dense output")?;
        Ok(preds)
    }

    /// `Σ weight·(pred − target)²` over `pairs`. When `grad` is given the
    /// parameter gradient is added into it; when `dx` is given it receives the
    /// gradient w.r.t. every input step.
    pub fn loss_and_grad(
        &self,
        xs: &[[f64; NUM_FEATURES]],
        pairs: &[PrefixTarget],
        weight: f64,
        grad: Option<&mut SruModel>,
        dx: Option<&mut Vec<[f64; NUM_FEATURES]>>,
    ) -> Result<f64> {
        if let Some(bad) = pairs.iter().find(|p| p.end >= xs.len()) {
            return Err(Error::invalid(format!("prefix end {} beyond sequence length {}", bad.end, xs.len())));
        }
        let trace = self.run(xs)?;
        let hd = self.config.hidden_dim;
        let steps = xs.len();
        let h2 = &trace.l2.h;

        let mut loss = 0.0;
        let want_grad = grad.is_some() || dx.is_some();
        let mut scratch = if want_grad { Some(SruModel::zeros(self.config)?) } else { None };
        let mut dh2 = vec![vec![0.0; hd]; if want_grad { steps } else { 0 }];
        let mut dscore = vec![0.0; if want_grad { steps } else { 0 }];

        for pair in pairs {
            let (pred, alpha) = self.head(&trace, pair.end);
            if !pred.is_finite() {
                return Err(Error::NonFinite("dense output".into()));
            }
            let err = pred - pair.target;
            loss += weight * err * err;
            let Some(g) = scratch.as_mut() else { continue };
            let dpred = 2.0 * weight * err;
            g.dense.b[0] += dpred;
            if self.attention.is_some() {
                // ctx = Σ α_k h_k ; pred = w·ctx + b
                let mut ctx = vec![0.0; hd];
                for (k, a) in alpha.iter().enumerate() {
                    for i in 0..hd {
                        ctx[i] += a * h2[k][i];
                    }
                }
                for i in 0..hd {
                    g.dense.w[i] += dpred * ctx[i];
                }
                let dctx: Vec<f64> = self.dense.w.iter().map(|w| dpred * w).collect();
                let dctx_ctx = dot(&dctx, &ctx);
                for (k, a) in alpha.iter().enumerate() {
                    for i in 0..hd {
                        dh2[k][i] += a * dctx[i];
                    }
                    dscore[k] += a * (dot(&dctx, &h2[k]) - dctx_ctx);
                }
            } else {
                let start = self.window_start(pair.end);
                for k in start..=pair.end {
                    let slot = (k - start) * hd;
                    for i in 0..hd {
                        g.dense.w[slot + i] += dpred * h2[k][i];
                        dh2[k][i] += dpred * self.dense.w[slot + i];
                    }
                }
            }
        }

        let Some(mut g) = scratch else { return Ok(loss) };
        if let Some(att) = &self.attention {
            let ga = g.attention.as_mut().expect("gradient shares config");
            for k in 0..steps {
                let ds = dscore[k];
                if ds == 0.0 {
                    continue;
                }
                let z = &trace.z[k];
                let mut dpre = vec![0.0; hd];
                for i in 0..hd {
                    ga.u[i] += ds * z[i];
                    dpre[i] = ds * att.u[i] * (1.0 - z[i] * z[i]);
                }
                ga.p.add_outer(&dpre, &h2[k], 1.0);
                att.p.matvec_t_acc(&dpre, &mut dh2[k]);
            }
        }
        let dh1 = self.layer2.backward_sequence(&trace.l2, &dh2, &mut g.layer2);
        let dinput = self.layer1.backward_sequence(&trace.l1, &dh1, &mut g.layer1);

        if let Some(dx) = dx {
            *dx = dinput
                .into_iter()
                .map(|v| v.try_into().expect("input width"))
                .collect();
        }
        if let Some(grad) = grad {
            let mut acc = grad.flatten();
            for (a, v) in acc.iter_mut().zip(g.flatten()) {
                *a += v;
            }
            grad.assign(&acc)?;
        }
        Ok(loss)
    }
}

fn check_steps(hs: &[Vec<f64>], what: &str) -> Result<()> {
    for (t, h) in hs.iter().enumerate() {
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what} output at step {t}")));
        }
    }
    Ok(())
}

impl Parameters for SruModel {
    fn visit(&self, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        self.layer1.visit("layer1", f);
        self.layer2.visit("layer2", f);
        if let Some(att) = &self.attention {
            f("attention.u", att.u.len(), 1, &att.u);
            f("attention.p", att.p.rows(), att.p.cols(), att.p.as_slice());
        }
        f("dense.w", 1, self.dense.w.len(), &self.dense.w);
        f("dense.b", 1, 1, &self.dense.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, usize, usize, &mut [f64])) {
        self.layer1.visit_mut("layer1", f);
        self.layer2.visit_mut("layer2", f);
        if let Some(att) = self.attention.as_mut() {
            f("attention.u", att.u.len(), 1, &mut att.u);
            let (r, c) = (att.p.rows(), att.p.cols());
            f("attention.p", r, c, att.p.as_mut_slice());
        }
        let n = self.dense.w.len();
        f("dense.w", 1, n, &mut self.dense.w);
        f("dense.b", 1, 1, &mut self.dense.b);
    }
}
