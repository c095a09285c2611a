use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::tensor::{dot, Matrix};

/// Elementwise activation applied after a dense layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// Final layer producing logits. `forward` returns the raw logits; the
    /// softmax and cross-entropy are applied by [`DenseNetwork::loss_and_grad`].
    SoftmaxCrossEntropy,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity | Activation::SoftmaxCrossEntropy => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity | Activation::SoftmaxCrossEntropy => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            "softmax" | "softmax_ce" => Ok(Activation::SoftmaxCrossEntropy),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// One affine layer `act(W x + b)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        ensure!(
            bias.len() == weight.rows(),
            Shape,
            "bias length {} does not match {} output rows",
            bias.len(),
            weight.rows()
        );
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer.
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::cols)
    }

    /// Output of the final layer.
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("cache of an empty network")
    }
}

/// Per-layer gradient arrays congruent with a [`DenseNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGradient {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ParameterGradient {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weight: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in the same order as [`DenseNetwork::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Rebuilds a gradient shaped like `net` from a flat vector.
    pub fn from_flat(net: &DenseNetwork, flat: &[f64]) -> Result<Self> {
        ensure!(
            flat.len() == net.parameter_count(),
            Shape,
            "flat gradient has {} entries, network has {} parameters",
            flat.len(),
            net.parameter_count()
        );
        let mut grad = Self::zeros_like(net);
        let mut offset = 0;
        for l in &mut grad.layers {
            let n = l.weight.as_slice().len();
            l.weight
                .as_mut_slice()
                .copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            let m = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + m]);
            offset += m;
        }
        Ok(grad)
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weight.scale(alpha);
            l.bias.iter_mut().for_each(|b| *b *= alpha);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                crate::tensor::squared_norm(l.weight.as_slice())
                    + crate::tensor::squared_norm(&l.bias)
            })
            .sum()
    }
}

/// A stack of dense layers evaluated column-wise over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
}

impl DenseNetwork {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        ensure!(
            !layers.is_empty(),
            Shape,
            "a network needs at least one layer"
        );
        for (k, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].output_dim() == pair[1].input_dim(),
                Shape,
                "layer {k} outputs {} values but layer {} expects {}",
                pair[0].output_dim(),
                k + 1,
                pair[1].input_dim()
            );
        }
        if let Some(pos) = layers[..layers.len() - 1]
            .iter()
            .position(|l| l.activation == Activation::SoftmaxCrossEntropy)
        {
            return Err(Error::Shape(format!(
                "softmax-crossentropy head must be the final layer, found at layer {pos}"
            )));
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform initialisation: weights in `[-a, a]` with
    /// `a = sqrt(6 / (in + out))`, biases zero.
    ///
    /// `sizes` lists layer widths including the input, so `sizes.len()` must
    /// be `activations.len() + 1`.
    pub fn glorot<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(
            sizes.len() == activations.len() + 1 && !activations.is_empty(),
            Shape,
            "{} sizes cannot describe {} layers",
            sizes.len(),
            activations.len()
        );
        ensure!(
            sizes.iter().all(|&s| s > 0),
            Shape,
            "layer widths must be positive: {sizes:?}"
        );
        let mut layers = Vec::with_capacity(activations.len());
        for (k, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            let weight = Matrix::from_col_major(fan_out, fan_in, data)?;
            layers.push(DenseLayer::new(weight, vec![0.0; fan_out], act)?);
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    pub fn has_softmax_head(&self) -> bool {
        self.layers[self.layers.len() - 1].activation == Activation::SoftmaxCrossEntropy
    }

    /// Flattened parameters: per layer, the weight matrix column-major, then the bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(
            flat.len() == self.parameter_count(),
            Shape,
            "expected {} parameters, got {}",
            self.parameter_count(),
            flat.len()
        );
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.weight.as_slice().len();
            l.weight
                .as_mut_slice()
                .copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            let m = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + m]);
            offset += m;
        }
        Ok(())
    }

    /// Plain SGD step: `params -= lr * grad`.
    pub fn apply_gradient(&mut self, grad: &ParameterGradient, lr: f64) -> Result<()> {
        self.check_gradient(grad)?;
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, gw) in l.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
                *w -= lr * gw;
            }
            for (b, gb) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        Ok(())
    }

    pub fn check_gradient(&self, grad: &ParameterGradient) -> Result<()> {
        ensure!(
            grad.layers.len() == self.layers.len()
                && grad.layers.iter().zip(&self.layers).all(|(g, l)| {
                    g.weight.shape() == l.weight.shape() && g.bias.len() == l.bias.len()
                }),
            Shape,
            "gradient is not congruent with the network"
        );
        Ok(())
    }

    /// Stacks `other` after `self`, producing the unsplit network.
    pub fn concat(&self, other: &DenseNetwork) -> Result<Self> {
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        Self::from_layers(layers)
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        ensure!(
            inputs.cols() >= 1,
            Shape,
            "batch must contain at least one column"
        );
        ensure!(
            inputs.rows() == self.input_dim(),
            Shape,
            "input has {} rows but the network expects {}",
            inputs.rows(),
            self.input_dim()
        );
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut current = inputs.clone();
        for layer in &self.layers {
            let pre = affine(layer, &current);
            let out = pre.map(|x| layer.activation.apply(x));
            cache.inputs.push(current);
            cache.pre_activations.push(pre);
            current = out.clone();
            cache.outputs.push(out);
        }
        Ok((current, cache))
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        ensure!(
            inputs.rows() == self.input_dim() && inputs.cols() >= 1,
            Shape,
            "input shape {:?} incompatible with input dim {}",
            inputs.shape(),
            self.input_dim()
        );
        let mut current = inputs.clone();
        for layer in &self.layers {
            let act = layer.activation;
            current = affine(layer, &current).map(|x| act.apply(x));
        }
        Ok(current)
    }

    /// Vector-Jacobian product through the cached forward pass.
    ///
    /// Returns the gradients of `sum_j <upstream_j, output_j>` with respect to
    /// the parameters and to the inputs. Gradients are summed over the batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Matrix,
    ) -> Result<(ParameterGradient, Matrix)> {
        self.check_cache(cache)?;
        let batch = cache.batch_size();
        ensure!(
            upstream.shape() == (self.output_dim(), batch),
            Shape,
            "upstream shape {:?} does not match output shape {:?}",
            upstream.shape(),
            (self.output_dim(), batch)
        );

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[k];
            let out = &cache.outputs[k];
            let input = &cache.inputs[k];
            // delta <- d(loss)/d(pre-activation)
            for ((d, &p), &o) in delta
                .as_mut_slice()
                .iter_mut()
                .zip(pre.as_slice())
                .zip(out.as_slice())
            {
                *d *= layer.activation.derivative(p, o);
            }

            let (rows, cols) = layer.weight.shape();
            let mut gw = Matrix::zeros(rows, cols);
            let mut gb = vec![0.0; rows];
            for j in 0..batch {
                let dj = delta.column(j);
                let xj = input.column(j);
                for (i, &x) in xj.iter().enumerate() {
                    for (g, &d) in gw.column_mut(i).iter_mut().zip(dj) {
                        *g += d * x;
                    }
                }
                for (g, &d) in gb.iter_mut().zip(dj) {
                    *g += d;
                }
            }

            let mut next = Matrix::zeros(cols, batch);
            for j in 0..batch {
                let dj = delta.column(j).to_vec();
                let col = next.column_mut(j);
                for (i, slot) in col.iter_mut().enumerate() {
                    *slot = dot(layer.weight.column(i), &dj);
                }
            }
            grads.push(LayerGradient {
                weight: gw,
                bias: gb,
            });
            delta = next;
        }
        grads.reverse();
        Ok((ParameterGradient { layers: grads }, delta))
    }

    /// Mean softmax cross-entropy over the batch and its gradients.
    pub fn loss_and_grad(
        &self,
        inputs: &Matrix,
        labels: &[usize],
    ) -> Result<(f64, ParameterGradient, Matrix)> {
        ensure!(
            self.has_softmax_head(),
            Contract,
            "loss_and_grad requires a softmax-crossentropy head as the final layer"
        );
        ensure!(
            labels.len() == inputs.cols(),
            Shape,
            "{} labels for a batch of {}",
            labels.len(),
            inputs.cols()
        );
        let (logits, cache) = self.forward(inputs)?;
        let (losses, mut upstream) = super::softmax_cross_entropy(&logits, labels)?;
        let batch = labels.len() as f64;
        upstream.scale(1.0 / batch);
        let (pg, ig) = self.backward(&cache, &upstream)?;
        Ok((losses.iter().sum::<f64>() / batch, pg, ig))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.inputs.len() == self.layers.len()
            && cache.batch_size() >= 1
            && self.layers.iter().enumerate().all(|(k, l)| {
                cache.inputs[k].rows() == l.input_dim()
                    && cache.pre_activations[k].rows() == l.output_dim()
                    && cache.outputs[k].rows() == l.output_dim()
            });
        ensure!(
            ok,
            Contract,
            "forward cache does not belong to this network"
        );
        Ok(())
    }
}

fn affine(layer: &DenseLayer, input: &Matrix) -> Matrix {
    let (rows, cols) = layer.weight.shape();
    let batch = input.cols();
    let mut out = Matrix::zeros(rows, batch);
    for j in 0..batch {
        let x = input.column(j);
        let y = out.column_mut(j);
        y.copy_from_slice(&layer.bias);
        for (i, &xi) in x.iter().enumerate().take(cols) {
            for (yo, &w) in y.iter_mut().zip(layer.weight.column(i)) {
                *yo += w * xi;
            }
        }
    }
    out
}
