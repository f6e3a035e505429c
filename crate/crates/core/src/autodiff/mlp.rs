//! Fully connected networks with a recorded forward tape and reverse-mode backward pass.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! `[in, out]` row-major followed by its bias `[out]`.

use rand::Rng;

use super::tensor::{gemm, DenseTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            c => Err(Error::Checkpoint(format!("unknown activation code {c}"))),
        }
    }

    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }

    /// Multiplies `grad` by the activation derivative, given the activation's output.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => grad.iter_mut().zip(out).for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, &y)| *g *= 1.0 - y * y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    output: Activation,
}

/// Activations recorded by [`Mlp::forward`]; consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    sizes: Vec<usize>,
    batch: usize,
    /// Input to each layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.layer_inputs.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: DenseTensor,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Zero-initialized network; rectifier on hidden layers.
    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
            output,
        })
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offsets of (weight, bias) for layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let before: usize = param_count(&self.sizes[..=l]);
        let w = before;
        (w, w + self.sizes[l] * self.sizes[l + 1])
    }

    fn check_input(&self, x: &DenseTensor) -> Result<()> {
        if x.last_dim() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects input width {}, got shape {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &DenseTensor, mut record: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
        let batch = x.rows();
        let layers = self.sizes.len() - 1;
        let mut h = x.data().to_vec();
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut out = vec![0.0; batch * fan_out];
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(b);
            }
            gemm(batch, fan_in, fan_out, &h, false, w, false, &mut out, true);
            if l + 1 < layers {
                Activation::Relu.apply(&mut out);
            } else {
                self.output.apply(&mut out);
            }
            let input = std::mem::replace(&mut h, out);
            if let Some(rec) = record.as_deref_mut() {
                rec.push(input);
            }
        }
        h
    }

    /// Inference without a tape.
    pub fn predict(&self, x: &DenseTensor) -> Result<DenseTensor> {
        self.check_input(x)?;
        let out = self.run(x, None);
        let y = DenseTensor::matrix(x.rows(), self.output_dim(), out)?;
        y.ensure_finite("network output")?;
        Ok(y)
    }

    /// Forward pass that records the tape needed by [`Mlp::backward`].
    pub fn forward(&self, x: &DenseTensor) -> Result<(DenseTensor, Tape)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.sizes.len() - 1);
        let out = self.run(x, Some(&mut inputs));
        let y = DenseTensor::matrix(x.rows(), self.output_dim(), out.clone())?;
        y.ensure_finite("network output")?;
        let tape = Tape {
            sizes: self.sizes.clone(),
            batch: x.rows(),
            layer_inputs: inputs,
            output: out,
        };
        Ok((y, tape))
    }

    /// Reverse pass: gradients for all parameters and for the input.
    pub fn backward(&self, tape: &Tape, upstream: &DenseTensor) -> Result<Gradients> {
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(tape, upstream, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Like [`Mlp::backward`] but accumulates parameter gradients into `grad`.
    pub fn backward_into(
        &self,
        tape: &Tape,
        upstream: &DenseTensor,
        grad: &mut [f64],
    ) -> Result<DenseTensor> {
        self.backprop(tape, upstream, Some(grad))
    }

    /// Gradient with respect to the input only; parameter gradients are skipped.
    pub fn input_gradient(&self, tape: &Tape, upstream: &DenseTensor) -> Result<DenseTensor> {
        self.backprop(tape, upstream, None)
    }

    fn backprop(
        &self,
        tape: &Tape,
        upstream: &DenseTensor,
        mut grad: Option<&mut [f64]>,
    ) -> Result<DenseTensor> {
        if tape.is_empty() {
            return Err(Error::MissingTape("tape is empty".into()));
        }
        if tape.sizes != self.sizes {
            return Err(Error::MissingTape(format!(
                "tape recorded for sizes {:?}, network has {:?}",
                tape.sizes, self.sizes
            )));
        }
        if grad.as_ref().is_some_and(|g| g.len() != self.params.len()) {
            return Err(Error::shape("gradient buffer length mismatch"));
        }
        let batch = tape.batch;
        if upstream.rows() != batch || upstream.last_dim() != self.output_dim() {
            return Err(Error::shape(format!(
                "upstream gradient shape {:?} does not match output [{batch}, {}]",
                upstream.shape(),
                self.output_dim()
            )));
        }
        upstream.ensure_finite("upstream gradient")?;

        let layers = self.sizes.len() - 1;
        let mut delta = upstream.data().to_vec();
        self.output.backprop(&tape.output, &mut delta);
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let x = &tape.layer_inputs[l];
            if let Some(grad) = grad.as_deref_mut() {
                // dW += xᵀ δ ; db += Σ_rows δ
                gemm(
                    fan_in,
                    batch,
                    fan_out,
                    x,
                    true,
                    &delta,
                    false,
                    &mut grad[w_off..b_off],
                    true,
                );
                let gb = &mut grad[b_off..b_off + fan_out];
                for row in delta.chunks_exact(fan_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            // dx = δ Wᵀ
            let w = &self.params[w_off..b_off];
            let mut dx = vec![0.0; batch * fan_in];
            gemm(batch, fan_out, fan_in, &delta, false, w, true, &mut dx, false);
            if l > 0 {
                // x is the rectified output of the previous layer
                Activation::Relu.backprop(x, &mut dx);
            }
            delta = dx;
        }
        let input = DenseTensor::matrix(batch, self.sizes[0], delta)?;
        if grad.is_some_and(|g| g.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok(input)
    }

    /// Serialized fragment: activation code, layer count, sizes, parameter count, parameters.
    pub fn write_fragment(&self, out: &mut Vec<u8>) {
        out.push(self.output.code());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }

    pub fn read_fragment(bytes: &mut &[u8]) -> Result<Self> {
        let code = crate::checkpoint::take_u8(bytes)?;
        let output = Activation::from_code(code)?;
        let n = crate::checkpoint::take_u32(bytes)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            sizes.push(crate::checkpoint::take_u64(bytes)? as usize);
        }
        let mut net = Mlp::zeros(&sizes, output)
            .map_err(|e| Error::Checkpoint(format!("bad fragment: {e}")))?;
        let count = crate::checkpoint::take_u64(bytes)? as usize;
        if count != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "fragment has {count} parameters, sizes imply {}",
                net.params.len()
            )));
        }
        for p in net.params.iter_mut() {
            *p = crate::checkpoint::take_f64(bytes)?;
        }
        Ok(net)
    }
}
