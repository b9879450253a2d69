use std::sync::Arc;

use rand::Rng;

use crate::config::Activation;
use crate::error::{Error, Result};

/// Fully connected network: hidden layers use the configured activation,
/// the last layer is linear.
///
/// Parameters are stored as one flat `f32` buffer, layer by layer, each
/// layer as its row-major `out x in` weight followed by its bias. All
/// arithmetic runs in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f32>,
}

/// Activations recorded by [`Mlp::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Vec<usize>,
    // inputs[l] is the input to layer l; pre[l] its pre-activation output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Immutable, versioned copy of a network's parameters.
#[derive(Debug, Clone)]
pub struct ParamSnapshot {
    pub version: u64,
    pub net: Arc<Mlp>,
}

impl Mlp {
    /// All-zero network with layer widths `dims` (input first, output last).
    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least an input and an output width");
        assert!(dims.iter().all(|&d| d > 0), "layer widths must be positive");
        let n = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp {
            dims: dims.to_vec(),
            activation,
            params: vec![0.0; n],
        }
    }

    /// Uniform fan-in initialization: `±sqrt(6 / fan_in)` for hidden layers,
    /// `±sqrt(1 / fan_in)` for the output layer; biases start at zero.
    pub fn init(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(dims, activation);
        let layers = net.num_layers();
        for l in 0..layers {
            let fan_in = net.dims[l] as f64;
            let bound = if l + 1 == layers {
                (1.0 / fan_in).sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            let (w, _) = net.layer_ranges(l);
            for p in &mut net.params[w] {
                *p = rng.gen_range(-bound..bound) as f32;
            }
        }
        net
    }

    /// Widths `[input, hidden.., output]`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replaces all parameters. Lengths must match.
    pub fn set_params(&mut self, params: &[f32]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Index ranges of layer `l`'s weight and bias inside the flat buffer.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut off = 0;
        for w in self.dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        (off..off + i * o, off + i * o..off + i * o + o)
    }

    /// Named tensors with shapes, in parameter order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>, std::ops::Range<usize>)> {
        (0..self.num_layers())
            .flat_map(|l| {
                let (w, b) = self.layer_ranges(l);
                [
                    (format!("layer{l}.weight"), vec![self.dims[l + 1], self.dims[l]], w),
                    (format!("layer{l}.bias"), vec![self.dims[l + 1]], b),
                ]
            })
            .collect()
    }

    fn act(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn act_grad(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn affine(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (w, b) = self.layer_ranges(l);
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let weights = &self.params[w];
        let bias = &self.params[b];
        out.clear();
        out.extend((0..n_out).map(|o| {
            let row = &weights[o * n_in..(o + 1) * n_in];
            let dot: f64 = row.iter().zip(x).map(|(&wi, &xi)| f64::from(wi) * xi).sum();
            dot + f64::from(bias[o])
        }));
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims[0] {
            return Err(Error::DimensionMismatch {
                expected: self.dims[0],
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in 0..self.num_layers() {
            self.affine(l, &cur, &mut next);
            if l + 1 < self.num_layers() {
                next.iter_mut().for_each(|z| *z = self.act(*z));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut cur = x.to_vec();
        for l in 0..layers {
            let mut z = Vec::new();
            self.affine(l, &cur, &mut z);
            let next = if l + 1 < layers {
                z.iter().map(|&v| self.act(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        Ok((
            cur,
            ForwardCache {
                dims: self.dims.clone(),
                inputs,
                pre,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward_into(&self, cache: &ForwardCache, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if cache.dims != self.dims || grads.len() != self.params.len() {
            return Err(Error::StaleCache);
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                found: upstream.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (w, b) = self.layer_ranges(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let input = &cache.inputs[l];
            let weights = &self.params[w.clone()];
            {
                let gw = &mut grads[w];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        row.iter_mut().zip(input).for_each(|(g, &xi)| *g += d * xi);
                    }
                }
            }
            grads[b].iter_mut().zip(&delta).for_each(|(g, &d)| *g += d);

            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    prev.iter_mut().zip(row).for_each(|(p, &wi)| *p += f64::from(wi) * d);
                }
            }
            if l > 0 {
                let z = &cache.pre[l - 1];
                prev.iter_mut().zip(z).for_each(|(p, &zi)| *p *= self.act_grad(zi));
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Parameter gradients and input gradient for one upstream gradient.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter-wise.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if online.dims != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: online.params.len(),
            });
        }
        if tau == 1.0 {
            self.params.copy_from_slice(&online.params);
            return Ok(());
        }
        for (t, &o) in self.params.iter_mut().zip(&online.params) {
            *t = (tau * f64::from(o) + (1.0 - tau) * f64::from(*t)) as f32;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 4, 2], Activation::Relu);
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn unit_chain_is_identity_on_positive_inputs() {
        let mut net = Mlp::zeros(&[1, 1, 1, 1, 1], Activation::Relu);
        for l in 0..net.num_layers() {
            let (w, _) = net.layer_ranges(l);
            net.params_mut()[w].fill(1.0);
        }
        assert_eq!(net.predict(&[2.5]).unwrap(), vec![2.5]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::zeros(&[3, 2], Activation::Relu);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn stale_cache_rejected() {
        let a = Mlp::zeros(&[3, 2, 2], Activation::Relu);
        let b = Mlp::zeros(&[3, 4, 2], Activation::Relu);
        let (_, cache) = a.forward(&[0.0; 3]).unwrap();
        assert!(matches!(b.backward(&cache, &[1.0, 1.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = Mlp::init(&[4, 6, 5, 3], Activation::Relu, &mut stream(1, Stream::PolicyInit));
        let (_, cache) = net.forward(&[0.3, -0.1, 0.8, 0.2]).unwrap();
        let (g, gi) = net.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(gi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scalar_linear_weight_gradient_is_input() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu);
        net.params_mut()[0] = 0.7;
        let (y, cache) = net.forward(&[3.0]).unwrap();
        assert!((y[0] - 2.1).abs() < 1e-6);
        let (g, gi) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g[0], 3.0);
        assert_eq!(g[1], 1.0);
        assert!((gi[0] - 0.7).abs() < 1e-7);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let net = Mlp::init(&[5, 8, 8, 4, 2], Activation::Relu, &mut stream(9, Stream::PolicyInit));
        let x = [0.1, 0.2, -0.3, 0.4, 1.0];
        let a = net.predict(&x).unwrap();
        let (b, _) = net.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn soft_update_extremes() {
        let mut rng = stream(2, Stream::CriticInit);
        let online = Mlp::init(&[3, 4, 2], Activation::Relu, &mut rng);
        let mut target = Mlp::init(&[3, 4, 2], Activation::Relu, &mut rng);
        let before = target.clone();
        target.soft_update_from(&online, 0.0).unwrap();
        assert_eq!(target, before);
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target, online);
    }

    #[test]
    fn soft_update_halves_twice() {
        let mut online = Mlp::zeros(&[1, 1], Activation::Relu);
        online.params_mut().fill(1.0);
        let mut target = Mlp::zeros(&[1, 1], Activation::Relu);
        target.soft_update_from(&online, 0.5).unwrap();
        target.soft_update_from(&online, 0.5).unwrap();
        assert_eq!(target.params(), &[0.75, 0.75]);
    }
}
