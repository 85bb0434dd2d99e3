use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{AdamW, Graph, Linear, ParamStore, Tensor, Var};
use crate::rng::{self, Rng};

/// Bound on each coupling's log-scale: `s = S * tanh(raw / S)`.
pub const SCALE_BOUND: f64 = 5.0;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Affine coupling: one half of the vector conditions a scale and shift of
/// the other half.
#[derive(Clone, Debug)]
struct Coupling {
    /// Whether the first half is the conditioner.
    first_conditions: bool,
    hidden1: Linear,
    hidden2: Linear,
    scale: Linear,
    shift: Linear,
}

/// Stack of affine couplings with alternating halves over a standard normal
/// base. Parameters live in a caller-owned [`ParamStore`].
#[derive(Clone, Debug)]
pub struct FlowPrior {
    dim: usize,
    couplings: Vec<Coupling>,
}

impl FlowPrior {
    /// Final layers of every scale and shift network start at zero, so a new
    /// flow is the identity.
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, layers: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("flow dimension must be at least 2, got {dim}")));
        }
        if layers == 0 || hidden == 0 {
            return Err(Error::invalid("flow needs at least one coupling and a positive hidden width"));
        }
        let mut couplings = Vec::with_capacity(layers);
        for k in 0..layers {
            let first_conditions = k % 2 == 0;
            let (cond, out) = halves(dim, first_conditions);
            let p = format!("{name}.coupling{k}");
            couplings.push(Coupling {
                first_conditions,
                hidden1: Linear::new(store, &format!("{p}.hidden1"), cond.1, hidden, rng)?,
                hidden2: Linear::new(store, &format!("{p}.hidden2"), hidden, hidden, rng)?,
                scale: Linear::zeroed(store, &format!("{p}.scale"), hidden, out.1)?,
                shift: Linear::zeroed(store, &format!("{p}.shift"), hidden, out.1)?,
            });
        }
        Ok(Self { dim, couplings })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> usize {
        self.couplings.len()
    }

    fn check_input(&self, g: &Graph, x: Var, op: &'static str) -> Result<usize> {
        match *g.shape(x) {
            [b, d] if d == self.dim => Ok(b),
            ref s => Err(Error::shape(op, format!("expected [batch, {}], got {s:?}", self.dim))),
        }
    }

    fn scale_shift(&self, g: &mut Graph, store: &ParamStore, c: &Coupling, cond: Var) -> Result<(Var, Var)> {
        let h = c.hidden1.forward(g, store, cond)?;
        let h = g.tanh(h);
        let h = c.hidden2.forward(g, store, h)?;
        let h = g.tanh(h);
        let raw = c.scale.forward(g, store, h)?;
        let s = g.scale(raw, 1.0 / SCALE_BOUND);
        let s = g.tanh(s);
        let s = g.scale(s, SCALE_BOUND);
        let t = c.shift.forward(g, store, h)?;
        Ok((s, t))
    }

    fn split(&self, g: &mut Graph, x: Var, c: &Coupling) -> Result<(Var, Var)> {
        let (cond, out) = halves(self.dim, c.first_conditions);
        Ok((g.slice_last(x, cond.0, cond.1)?, g.slice_last(x, out.0, out.1)?))
    }

    fn join(&self, g: &mut Graph, cond: Var, out: Var, c: &Coupling) -> Result<Var> {
        if c.first_conditions {
            g.concat_last(&[cond, out])
        } else {
            g.concat_last(&[out, cond])
        }
    }

    fn check_layer(g: &Graph, v: Var, layer: usize) -> Result<()> {
        if g.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                op: format!("flow coupling {layer}"),
            })
        }
    }

    /// `w -> z = F(w)` for `[B, d]` rows, with per-row `log |det dF/dw|` of
    /// shape `[B]`.
    pub fn forward_graph(&self, g: &mut Graph, store: &ParamStore, w: Var) -> Result<(Var, Var)> {
        let b = self.check_input(g, w, "flow_forward")?;
        let mut x = w;
        let mut log_det = g.constant(Tensor::zeros(&[b]));
        for (k, c) in self.couplings.iter().enumerate() {
            let (cond, out) = self.split(g, x, c)?;
            let (s, t) = self.scale_shift(g, store, c, cond)?;
            let e = g.exp(s);
            let y = g.mul(out, e)?;
            let y = g.add(y, t)?;
            x = self.join(g, cond, y, c)?;
            Self::check_layer(g, x, k)?;
            let ld = g.sum_last(s);
            log_det = g.add(log_det, ld)?;
        }
        Ok((x, log_det))
    }

    /// `z -> w = F^-1(z)` with per-row `log |det dF^-1/dz|`.
    pub fn inverse_graph(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<(Var, Var)> {
        let b = self.check_input(g, z, "flow_inverse")?;
        let mut x = z;
        let mut log_det = g.constant(Tensor::zeros(&[b]));
        for (k, c) in self.couplings.iter().enumerate().rev() {
            let (cond, out) = self.split(g, x, c)?;
            let (s, t) = self.scale_shift(g, store, c, cond)?;
            let y = g.sub(out, t)?;
            let neg = g.scale(s, -1.0);
            let e = g.exp(neg);
            let y = g.mul(y, e)?;
            x = self.join(g, cond, y, c)?;
            Self::check_layer(g, x, k)?;
            let ld = g.sum_last(neg);
            log_det = g.add(log_det, ld)?;
        }
        Ok((x, log_det))
    }

    /// Per-row `log p(z) = log N(F^-1(z); 0, I) + log |det dF^-1/dz|`.
    pub fn log_prob_graph(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let (w, log_det) = self.inverse_graph(g, store, z)?;
        let sq = g.square(w);
        let sq = g.sum_last(sq);
        let base = g.scale(sq, -0.5);
        let base = g.add_scalar(base, -(self.dim as f64) * HALF_LOG_TWO_PI);
        g.add(base, log_det)
    }

    /// Batch mean of `-log p(z)`.
    pub fn nll_graph(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        let lp = self.log_prob_graph(g, store, z)?;
        let m = g.mean(lp);
        Ok(g.scale(m, -1.0))
    }

    pub fn forward(&self, store: &ParamStore, w: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let x = g.constant(w.clone());
        let (z, ld) = self.forward_graph(&mut g, store, x)?;
        Ok((g.value(z).clone(), g.value(ld).data().to_vec()))
    }

    pub fn inverse(&self, store: &ParamStore, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let x = g.constant(z.clone());
        let (w, ld) = self.inverse_graph(&mut g, store, x)?;
        Ok((g.value(w).clone(), g.value(ld).data().to_vec()))
    }

    pub fn log_prob(&self, store: &ParamStore, z: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(z.clone());
        let lp = self.log_prob_graph(&mut g, store, x)?;
        Ok(g.value(lp).data().to_vec())
    }

    /// Mean negative log-likelihood of the rows of `z`.
    pub fn prior_loss(&self, store: &ParamStore, z: &Tensor) -> Result<f64> {
        let lp = self.log_prob(store, z)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// `n` draws `F(w)` with `w ~ N(0, I)`.
    pub fn sample(&self, store: &ParamStore, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let w: Vec<f64> = (0..n * self.dim).map(|_| rng::standard_normal(rng)).collect();
        Ok(self.forward(store, &Tensor::new(alloc::vec![n, self.dim], w)?)?.0)
    }
}

/// `((start, len) of the conditioning half, (start, len) of the transformed half)`.
fn halves(dim: usize, first_conditions: bool) -> ((usize, usize), (usize, usize)) {
    let first = (0, dim / 2);
    let second = (dim / 2, dim - dim / 2);
    if first_conditions {
        (first, second)
    } else {
        (second, first)
    }
}

/// Settings of [`fit_flow`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowFit {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

/// Maximum-likelihood fit of a flow to fixed samples `[n, d]` by minibatch
/// AdamW. Returns the per-iteration batch NLL.
pub fn fit_flow(flow: &FlowPrior, store: &mut ParamStore, samples: &Tensor, fit: &FlowFit, rng: &mut Rng) -> Result<Vec<f64>> {
    if samples.shape().len() != 2 || samples.last_dim() != flow.dim {
        return Err(Error::shape("fit_flow", format!("samples must be [n, {}]", flow.dim)));
    }
    let n = samples.rows();
    if n == 0 {
        return Err(Error::Empty("flow samples"));
    }
    if fit.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut opt = AdamW::with_lr(fit.learning_rate, fit.weight_decay)?;
    let mut log = Vec::with_capacity(fit.iterations);
    for _ in 0..fit.iterations {
        let mut data = Vec::with_capacity(fit.batch_size * flow.dim);
        for _ in 0..fit.batch_size {
            data.extend_from_slice(samples.row(rng::uniform_index(rng, n)));
        }
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(alloc::vec![fit.batch_size, flow.dim], data)?);
        let loss = flow.nll_graph(&mut g, store, z)?;
        g.backward(loss, store)?;
        opt.step(store)?;
        log.push(g.value(loss).item());
    }
    Ok(log)
}

/// Closed-form `log N(x; 0, I)` of one vector.
pub fn standard_normal_log_density(x: &[f64]) -> f64 {
    -0.5 * x.iter().map(|v| v * v).sum::<f64>() - x.len() as f64 * HALF_LOG_TWO_PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;

    #[test]
    fn half_log_two_pi() {
        assert!((HALF_LOG_TWO_PI - 0.5 * math::ln(2.0 * core::f64::consts::PI)).abs() < 1e-15);
    }
}
