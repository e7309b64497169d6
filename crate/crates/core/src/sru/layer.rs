use crate::error::{Error, Result};
use crate::numeric::{init_uniform, init_uniform_vec, sigmoid, Matrix, Rng};

/// One SRU layer: `W`, `W_f`, `W_r` (hidden × input) and the elementwise
/// recurrence vectors/biases `v_f`, `v_r`, `b_f`, `b_r` (hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct SruLayer {
    pub w: Matrix,
    pub wf: Matrix,
    pub wr: Matrix,
    pub vf: Vec<f64>,
    pub vr: Vec<f64>,
    pub bf: Vec<f64>,
    pub br: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutput {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub f: Vec<f64>,
    pub r: Vec<f64>,
}

/// Per-timestep values kept for backpropagation through a whole sequence.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub xs: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// `c[t]` is the state after step `t`.
    pub c: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

impl SruLayer {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim > hidden_dim {
            return Err(Error::invalid(format!(
                "SRU highway path needs input_dim <= hidden_dim, got {input_dim} > {hidden_dim}"
            )));
        }
        Ok(SruLayer {
            w: Matrix::zeros(hidden_dim, input_dim),
            wf: Matrix::zeros(hidden_dim, input_dim),
            wr: Matrix::zeros(hidden_dim, input_dim),
            vf: vec![0.0; hidden_dim],
            vr: vec![0.0; hidden_dim],
            bf: vec![0.0; hidden_dim],
            br: vec![0.0; hidden_dim],
        })
    }

    pub fn random(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut layer = Self::zeros(input_dim, hidden_dim)?;
        layer.w = init_uniform(hidden_dim, input_dim, input_dim, rng);
        layer.wf = init_uniform(hidden_dim, input_dim, input_dim, rng);
        layer.wr = init_uniform(hidden_dim, input_dim, input_dim, rng);
        layer.vf = init_uniform_vec(hidden_dim, hidden_dim, rng);
        layer.vr = init_uniform_vec(hidden_dim, hidden_dim, rng);
        Ok(layer)
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                format!("input of length {}", self.input_dim()),
                x.len(),
            ));
        }
        Ok(())
    }

    /// Input-dependent parts of one step: `(W x, W_f x + b_f, W_r x + b_r)`.
    /// They don't touch the recurrent state, so a whole sequence can be done at once.
    fn project(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let mut u = vec![0.0; hd];
        let mut pf = vec![0.0; hd];
        let mut pr = vec![0.0; hd];
        self.w.matvec_into(x, &mut u);
        self.wf.matvec_into(x, &mut pf);
        self.wr.matvec_into(x, &mut pr);
        for i in 0..hd {
            pf[i] += self.bf[i];
            pr[i] += self.br[i];
        }
        (u, pf, pr)
    }

    /// Elementwise recurrence given the projections of one step.
    fn recur(&self, x: &[f64], c_prev: &[f64], u: &[f64], pf: &[f64], pr: &[f64]) -> CellOutput {
        let hd = self.hidden_dim();
        let mut out = CellOutput {
            h: vec![0.0; hd],
            c: vec![0.0; hd],
            f: vec![0.0; hd],
            r: vec![0.0; hd],
        };
        for i in 0..hd {
            let f = sigmoid(pf[i] + self.vf[i] * c_prev[i]);
            let c = f * c_prev[i] + (1.0 - f) * u[i];
            let r = sigmoid(pr[i] + self.vr[i] * c_prev[i]);
            // x is zero-padded up to the hidden width on the highway path
            let xi = x.get(i).copied().unwrap_or(0.0);
            out.h[i] = r * c + (1.0 - r) * xi;
            out.c[i] = c;
            out.f[i] = f;
            out.r[i] = r;
        }
        out
    }

    /// A single SRU step from `c_prev`.
    pub fn cell_forward(&self, x: &[f64], c_prev: &[f64]) -> Result<CellOutput> {
        self.check_input(x)?;
        if c_prev.len() != self.hidden_dim() {
            return Err(Error::shape(self.hidden_dim(), c_prev.len()));
        }
        let (u, pf, pr) = self.project(x);
        Ok(self.recur(x, c_prev, &u, &pf, &pr))
    }

    /// Runs the layer over a sequence from a zero cell state. All projections are
    /// computed first; only the elementwise recurrence is sequential.
    pub fn forward_sequence(&self, xs: &[Vec<f64>]) -> Result<LayerTrace> {
        for x in xs {
            self.check_input(x)?;
        }
        let projections: Vec<_> = xs.iter().map(|x| self.project(x)).collect();
        let hd = self.hidden_dim();
        let mut trace = LayerTrace {
            xs: xs.to_vec(),
            u: Vec::with_capacity(xs.len()),
            f: Vec::with_capacity(xs.len()),
            r: Vec::with_capacity(xs.len()),
            c: Vec::with_capacity(xs.len()),
            h: Vec::with_capacity(xs.len()),
        };
        let mut c_prev = vec![0.0; hd];
        for (x, (u, pf, pr)) in xs.iter().zip(projections) {
            let out = self.recur(x, &c_prev, &u, &pf, &pr);
            c_prev.clone_from(&out.c);
            trace.u.push(u);
            trace.f.push(out.f);
            trace.r.push(out.r);
            trace.c.push(out.c);
            trace.h.push(out.h);
        }
        Ok(trace)
    }

    /// Backpropagation through time. `dh[t]` is the loss gradient w.r.t. `h[t]`;
    /// parameter gradients are added into `grad`, and the gradient w.r.t. each
    /// input `x[t]` is returned.
    pub fn backward_sequence(
        &self,
        trace: &LayerTrace,
        dh: &[Vec<f64>],
        grad: &mut SruLayer,
    ) -> Vec<Vec<f64>> {
        let hd = self.hidden_dim();
        let n_in = self.input_dim();
        let steps = trace.h.len();
        let zeros = vec![0.0; hd];
        let mut dx = vec![vec![0.0; n_in]; steps];
        let mut dc_next = vec![0.0; hd];
        let mut du = vec![0.0; hd];
        let mut daf = vec![0.0; hd];
        let mut dar = vec![0.0; hd];

        for t in (0..steps).rev() {
            let c_prev = if t == 0 { &zeros } else { &trace.c[t - 1] };
            let (f, r, c, u, x) = (&trace.f[t], &trace.r[t], &trace.c[t], &trace.u[t], &trace.xs[t]);
            let mut dc_prev = vec![0.0; hd];
            for i in 0..hd {
                let xi = x.get(i).copied().unwrap_or(0.0);
                let dhi = dh[t][i];
                let dc = dhi * r[i] + dc_next[i];
                let dr = dhi * (c[i] - xi);
                dar[i] = dr * r[i] * (1.0 - r[i]);
                let df = dc * (c_prev[i] - u[i]);
                daf[i] = df * f[i] * (1.0 - f[i]);
                du[i] = dc * (1.0 - f[i]);
                dc_prev[i] = dc * f[i] + daf[i] * self.vf[i] + dar[i] * self.vr[i];

                grad.vf[i] += daf[i] * c_prev[i];
                grad.vr[i] += dar[i] * c_prev[i];
                grad.bf[i] += daf[i];
                grad.br[i] += dar[i];
                if i < n_in {
                    dx[t][i] += dhi * (1.0 - r[i]);
                }
            }
            grad.w.add_outer(&du, x, 1.0);
            grad.wf.add_outer(&daf, x, 1.0);
            grad.wr.add_outer(&dar, x, 1.0);
            self.w.matvec_t_acc(&du, &mut dx[t]);
            self.wf.matvec_t_acc(&daf, &mut dx[t]);
            self.wr.matvec_t_acc(&dar, &mut dx[t]);
            dc_next = dc_prev;
        }
        dx
    }

    pub(crate) fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        f(&format!("{prefix}.w"), h, i, self.w.as_slice());
        f(&format!("{prefix}.wf"), h, i, self.wf.as_slice());
        f(&format!("{prefix}.wr"), h, i, self.wr.as_slice());
        f(&format!("{prefix}.vf"), h, 1, &self.vf);
        f(&format!("{prefix}.vr"), h, 1, &self.vr);
        f(&format!("{prefix}.bf"), h, 1, &self.bf);
        f(&format!("{prefix}.br"), h, 1, &self.br);
    }

    pub(crate) fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, usize, usize, &mut [f64]),
    ) {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        f(&format!("{prefix}.w"), h, i, self.w.as_mut_slice());
        f(&format!("{prefix}.wf"), h, i, self.wf.as_mut_slice());
        f(&format!("{prefix}.wr"), h, i, self.wr.as_mut_slice());
        f(&format!("{prefix}.vf"), h, 1, &mut self.vf);
        f(&format!("{prefix}.vr"), h, 1, &mut self.vr);
        f(&format!("{prefix}.bf"), h, 1, &mut self.bf);
        f(&format!("{prefix}.br"), h, 1, &mut self.br);
    }
}

/// Functional form of one SRU step.
pub fn sru_cell_forward(x: &[f64], c_prev: &[f64], params: &SruLayer) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = params.cell_forward(x, c_prev)?;
    Ok((out.h, out.c))
}
