//! Dense dueling Q-network with manual backpropagation.
//!
//! A network is a shared trunk followed by a value stream (one output) and an advantage
//! stream (`n_actions` outputs), combined into Q-values. All arithmetic is `f64`.
//! Batched products go through `matrixmultiply::dgemm`.

mod adam;
mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuelingCombine {
    /// `Q = V + (A - mean A)`.
    #[default]
    MeanCentered,
    /// `Q = V + A`.
    Literal,
}

/// Layer widths of a dueling network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub n_actions: usize,
    pub trunk: Vec<usize>,
    /// Hidden widths of each stream; the value and advantage streams share them.
    pub stream: Vec<usize>,
}

impl NetworkSpec {
    /// Trunk 256/192/128 and two 128-unit layers per stream.
    pub fn full(input_dim: usize, n_actions: usize) -> Self {
        NetworkSpec {
            input_dim,
            n_actions,
            trunk: vec![256, 192, 128],
            stream: vec![128, 128],
        }
    }

    /// A narrower network of the same shape for quick experiments.
    pub fn compact(input_dim: usize, n_actions: usize) -> Self {
        NetworkSpec {
            input_dim,
            n_actions,
            trunk: vec![64, 64, 64],
            stream: vec![32, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_actions == 0 {
            return Err(Error::Config(
                "network input_dim and n_actions must be positive".into(),
            ));
        }
        if self.trunk.iter().chain(&self.stream).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn trunk_out(&self) -> usize {
        self.trunk.last().copied().unwrap_or(self.input_dim)
    }

    /// `(inputs, outputs)` of trunk, value and advantage layers in storage order.
    fn layer_shapes(
        &self,
    ) -> (
        Vec<(usize, usize)>,
        Vec<(usize, usize)>,
        Vec<(usize, usize)>,
    ) {
        let chain = |start: usize, widths: &[usize], last: Option<usize>| {
            let mut dims = vec![start];
            dims.extend_from_slice(widths);
            dims.extend(last);
            dims.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        };
        let t = self.trunk_out();
        (
            chain(self.input_dim, &self.trunk, None),
            chain(t, &self.stream, Some(1)),
            chain(t, &self.stream, Some(self.n_actions)),
        )
    }

    pub fn parameter_count(&self) -> usize {
        let (a, b, c) = self.layer_shapes();
        a.iter().chain(&b).chain(&c).map(|(i, o)| i * o + o).sum()
    }
}

/// Fully connected layer; `weights` is `inputs × outputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect(),
            biases: vec![0.0; outputs],
        }
    }

    /// `batch × outputs` pre-activations for a `batch × inputs` input.
    fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            y.extend_from_slice(&self.biases);
        }
        gemm(
            batch,
            self.inputs,
            self.outputs,
            x,
            (self.inputs, 1),
            &self.weights,
            (self.outputs, 1),
            1.0,
            &mut y,
        );
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        batch: usize,
        grad: &mut Dense,
        want_dx: bool,
    ) -> Vec<f64> {
        gemm(
            self.inputs,
            batch,
            self.outputs,
            x,
            (1, self.inputs),
            dy,
            (self.outputs, 1),
            1.0,
            &mut grad.weights,
        );
        for row in dy.chunks_exact(self.outputs) {
            for (g, d) in grad.biases.iter_mut().zip(row) {
                *g += d;
            }
        }
        if !want_dx {
            return Vec::new();
        }
        let mut dx = vec![0.0; batch * self.inputs];
        gemm(
            batch,
            self.outputs,
            self.inputs,
            dy,
            (self.outputs, 1),
            &self.weights,
            (1, self.outputs),
            0.0,
            &mut dx,
        );
        dx
    }
}

/// `c = a·b + beta·c` for row-major `c` (`m × n`); `a` and `b` are given with explicit
/// `(row, column)` strides so transposes cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(a.len() > last(m, k, rsa, csa), "gemm: lhs too short");
        assert!(b.len() > last(k, n, rsb, csb), "gemm: rhs too short");
    }
    assert!(c.len() >= m * n, "gemm: output too short");
    // SAFETY: the assertions above bound every index dgemm touches in `a`, `b` and `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Network parameters. `layers` holds trunk, value stream and advantage stream in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub combine: DuelingCombine,
    pub layers: Vec<Dense>,
}

/// Parameter gradients share the parameter layout.
pub type Gradients = NetworkParams;

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    /// Input to every layer, indexed like `NetworkParams::layers`.
    inputs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub q: Vec<f64>,
}

impl ForwardCache {
    /// Which hidden units are active, over every hidden layer and batch row.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.inputs[1..]
            .iter()
            .flatten()
            .map(|&a| a > 0.0)
            .collect()
    }
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        combine: DuelingCombine,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let (t, v, a) = spec.layer_shapes();
        let layers = t
            .iter()
            .chain(&v)
            .chain(&a)
            .map(|&(i, o)| Dense::glorot(i, o, rng))
            .collect();
        Ok(NetworkParams {
            spec: spec.clone(),
            combine,
            layers,
        })
    }

    /// All-zero parameters shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        NetworkParams {
            spec: self.spec.clone(),
            combine: self.combine,
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn counts(&self) -> (usize, usize) {
        let t = self.spec.trunk.len();
        let s = self.spec.stream.len() + 1;
        (t, s)
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.layers[..self.counts().0]
    }

    pub fn value_stream(&self) -> &[Dense] {
        let (t, s) = self.counts();
        &self.layers[t..t + s]
    }

    pub fn advantage_stream(&self) -> &[Dense] {
        let (t, s) = self.counts();
        &self.layers[t + s..]
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Weight and bias slices in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }

    /// Checks that layer shapes chain as the spec requires.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let (t, v, a) = self.spec.layer_shapes();
        let expected: Vec<_> = t.into_iter().chain(v).chain(a).collect();
        let actual: Vec<_> = self.layers.iter().map(|l| (l.inputs, l.outputs)).collect();
        if expected != actual {
            return Err(Error::Checkpoint(format!(
                "layer shapes {actual:?} do not match spec {expected:?}"
            )));
        }
        for l in &self.layers {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::Checkpoint(
                    "layer array lengths do not match shapes".into(),
                ));
            }
        }
        if !self.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Q-values for one observation.
    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(obs, 1)?.q)
    }

    /// Forward pass over `batch` observations stored row-major in `x`.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<ForwardCache> {
        if x.len() != batch * self.spec.input_dim {
            return Err(Error::Contract(format!(
                "input has {} values, expected {} × {}",
                x.len(),
                batch,
                self.spec.input_dim
            )));
        }
        let (nt, ns) = self.counts();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers[..nt] {
            let mut y = layer.forward(&h, batch);
            relu_in_place(&mut y);
            inputs.push(std::mem::replace(&mut h, y));
        }
        let trunk_out = h;
        let run_stream = |layers: &[Dense], inputs: &mut Vec<Vec<f64>>| {
            let mut h = trunk_out.clone();
            for (i, layer) in layers.iter().enumerate() {
                let mut y = layer.forward(&h, batch);
                if i + 1 < layers.len() {
                    relu_in_place(&mut y);
                }
                inputs.push(std::mem::replace(&mut h, y));
            }
            h
        };
        let values = run_stream(&self.layers[nt..nt + ns], &mut inputs);
        let advantages = run_stream(&self.layers[nt + ns..], &mut inputs);
        let n = self.spec.n_actions;
        let mut q = Vec::with_capacity(batch * n);
        for (v, adv) in values.iter().zip(advantages.chunks_exact(n)) {
            let shift = match self.combine {
                DuelingCombine::MeanCentered => adv.iter().sum::<f64>() / n as f64,
                DuelingCombine::Literal => 0.0,
            };
            q.extend(adv.iter().map(|a| v + a - shift));
        }
        Ok(ForwardCache {
            batch,
            inputs,
            values,
            advantages,
            q,
        })
    }

    /// Gradients of a scalar loss given `dq`, its derivative with respect to every Q output.
    pub fn backward(&self, cache: &ForwardCache, dq: &[f64]) -> Result<Gradients> {
        let n = self.spec.n_actions;
        let batch = cache.batch;
        if dq.len() != batch * n {
            return Err(Error::Contract(format!(
                "dq has {} values, expected {} × {}",
                dq.len(),
                batch,
                n
            )));
        }
        let mut dv = Vec::with_capacity(batch);
        let mut da = Vec::with_capacity(batch * n);
        for row in dq.chunks_exact(n) {
            let total: f64 = row.iter().sum();
            dv.push(total);
            match self.combine {
                DuelingCombine::MeanCentered => da.extend(row.iter().map(|d| d - total / n as f64)),
                DuelingCombine::Literal => da.extend_from_slice(row),
            }
        }

        let (nt, ns) = self.counts();
        let mut grads = self.zeros_like();
        // A hidden layer's post-ReLU output is stored as the input of the layer after it.
        let backprop = |range: std::ops::Range<usize>, mut dy: Vec<f64>, grads: &mut Gradients| {
            for li in range.clone().rev() {
                if li + 1 != range.end {
                    mask_relu(&mut dy, &cache.inputs[li + 1]);
                }
                dy = self.layers[li].backward(
                    &cache.inputs[li],
                    &dy,
                    batch,
                    &mut grads.layers[li],
                    true,
                );
            }
            dy
        };
        let dv_trunk = backprop(nt..nt + ns, dv, &mut grads);
        let da_trunk = backprop(nt + ns..nt + 2 * ns, da, &mut grads);
        let mut dy: Vec<f64> = dv_trunk.iter().zip(&da_trunk).map(|(a, b)| a + b).collect();
        for li in (0..nt).rev() {
            mask_relu(&mut dy, &cache.inputs[li + 1]);
            dy = self.layers[li].backward(
                &cache.inputs[li],
                &dy,
                batch,
                &mut grads.layers[li],
                li > 0,
            );
        }
        Ok(grads)
    }

    /// Copies all parameter values from `other`, keeping allocations.
    pub fn copy_from(&mut self, other: &NetworkParams) {
        self.clone_from(other);
    }
}

fn mask_relu(dy: &mut [f64], out: &[f64]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Huber loss with unit threshold and its derivative with respect to `pred`.
pub fn huber_loss(pred: f64, target: f64) -> (f64, f64) {
    let e = pred - target;
    if e.abs() <= 1.0 {
        (0.5 * e * e, e)
    } else {
        (e.abs() - 0.5, e.signum())
    }
}
