//! The fully convolutional instance classifier.
//!
//! A stack of valid convolutions with ReLU between them, ending in a 1×1
//! convolution whose channels are split into one softmax group per task.
//! Every cell of the output grid is one instance: the receptive field of that
//! cell in the input image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::nn::activation::{instance_softmax, instance_softmax_backward, relu_backward};
use crate::nn::conv::{conv2d_backward_impl, conv2d_forward, ConvLayer};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

/// Architecture without weights. The last layer's channel count is implied by
/// `task_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub in_channels: usize,
    /// Hidden layers, each followed by a ReLU.
    pub hidden: Vec<LayerSpec>,
    pub task_classes: Vec<usize>,
}

impl ModelSpec {
    /// 7×7/2 → ReLU → 3×3/2 → ReLU → 1×1 to the class channels.
    /// Downsample factor 4, receptive field 11.
    pub fn desk_scale(task_classes: Vec<usize>) -> Self {
        Self::with_widths(task_classes, 8, 16)
    }

    pub fn with_widths(task_classes: Vec<usize>, conv1: usize, conv2: usize) -> Self {
        Self {
            in_channels: 3,
            hidden: vec![
                LayerSpec {
                    kernel: 7,
                    stride: 2,
                    out_channels: conv1,
                },
                LayerSpec {
                    kernel: 3,
                    stride: 2,
                    out_channels: conv2,
                },
            ],
            task_classes,
        }
    }

    pub fn total_classes(&self) -> usize {
        self.task_classes.iter().sum()
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = self.hidden.clone();
        layers.push(LayerSpec {
            kernel: 1,
            stride: 1,
            out_channels: self.total_classes(),
        });
        layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.task_classes.is_empty() || self.task_classes.iter().any(|&c| c < 2) {
            return Err(invalid(format!(
                "every task needs at least two classes, got {:?}",
                self.task_classes
            )));
        }
        if self.in_channels == 0
            || self
                .hidden
                .iter()
                .any(|l| l.kernel == 0 || l.stride == 0 || l.out_channels == 0)
        {
            return Err(invalid("layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Glorot-uniform draw: `U(−b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    let [kh, kw, cin, cout] = shape;
    let bound = (6.0 / ((kh * kw * cin + kh * kw * cout) as f64)).sqrt();
    Tensor::from_fn(&shape, |_| T::of(rng.gen_range(-bound..bound)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcnModel<T = f32> {
    pub layers: Vec<ConvLayer<T>>,
    pub task_classes: Vec<usize>,
}

/// Activations kept from the forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input of each layer; entries after the first are post-ReLU.
    inputs: Vec<Tensor<T>>,
    /// Per-task instance probabilities, `w_d × w_d × C_t`.
    pub probs: Vec<Tensor<T>>,
}

impl<T: Scalar> FcnModel<T> {
    /// Glorot-uniform kernels and zero biases, deterministic in `seed`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = spec.in_channels;
        let mut layers = Vec::new();
        for l in spec.layers() {
            let kernel = glorot_uniform([l.kernel, l.kernel, cin, l.out_channels], &mut rng);
            layers.push(ConvLayer::new(kernel, Tensor::zeros(&[l.out_channels]), l.stride)?);
            cin = l.out_channels;
        }
        Self::from_layers(layers, spec.task_classes.clone())
    }

    pub fn from_layers(layers: Vec<ConvLayer<T>>, task_classes: Vec<usize>) -> Result<Self> {
        let last = layers.last().ok_or_else(|| invalid("model has no layers"))?;
        if last.out_channels() != task_classes.iter().sum::<usize>() {
            return Err(invalid(format!(
                "final layer has {} channels, tasks need {:?}",
                last.out_channels(),
                task_classes
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return Err(invalid("adjacent layer channel counts disagree"));
            }
        }
        Ok(Self {
            layers,
            task_classes,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    /// Product of strides.
    pub fn downsample(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn receptive_field(&self) -> usize {
        let mut field = 1;
        let mut jump = 1;
        for l in &self.layers {
            field += (l.kernel_size().0 - 1) * jump;
            jump *= l.stride;
        }
        field
    }

    /// Output grid side for an input side `w`, `floor((w − r)/d) + 1`.
    pub fn grid_side(&self, w: usize) -> Result<usize> {
        let r = self.receptive_field();
        if w < r {
            return Err(invalid(format!("input side {w} below receptive field {r}")));
        }
        Ok((w - r) / self.downsample() + 1)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.kernel, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.kernel, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("conv{i}.kernel"), format!("conv{i}.bias")])
            .collect()
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<ForwardCache<T>> {
        let mut inputs = vec![image.clone()];
        let last = self.layers.len() - 1;
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = conv2d_forward(&inputs[i], layer)?;
            if i == last {
                logits = Some(out);
            } else {
                inputs.push(out.relu()?);
            }
        }
        let logits = logits.expect("at least one layer");
        let probs = split_channels(&logits, &self.task_classes)?
            .iter()
            .map(instance_softmax)
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardCache { inputs, probs })
    }

    /// Parameter gradients, in [`FcnModel::params`] order, given the loss
    /// gradient with respect to each task's instance probabilities.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_probs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if grad_probs.len() != cache.probs.len() {
            return Err(invalid("one probability gradient per task expected"));
        }
        let grad_logits = cache
            .probs
            .iter()
            .zip(grad_probs)
            .map(|(p, g)| instance_softmax_backward(p, g))
            .collect::<Result<Vec<_>>>()?;
        let mut grad = concat_channels(&grad_logits)?;
        let mut grads = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let (gk, gb, gx) = conv2d_backward_impl(&cache.inputs[i], &self.layers[i], &grad, i > 0)?;
            grads[i] = Some([gk, gb]);
            if let Some(gx) = gx {
                grad = relu_backward(&cache.inputs[i], &gx)?;
            }
        }
        Ok(grads.into_iter().flat_map(|g| g.expect("filled")).collect())
    }
}

/// Splits `H × W × ΣC` into per-group `H × W × C_t` tensors.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, groups: &[usize]) -> Result<Vec<Tensor<T>>> {
    let shape = t.shape();
    let total: usize = groups.iter().sum();
    if t.rank() != 3 || shape[2] != total {
        return Err(Error::ShapeMismatch {
            op: "split_channels",
            left: shape.to_vec(),
            right: groups.to_vec(),
        });
    }
    let mut outs: Vec<Vec<T>> = groups
        .iter()
        .map(|&c| Vec::with_capacity(shape[0] * shape[1] * c))
        .collect();
    for px in t.data().chunks_exact(total) {
        let mut start = 0;
        for (out, &c) in outs.iter_mut().zip(groups) {
            out.extend_from_slice(&px[start..start + c]);
            start += c;
        }
    }
    outs.into_iter()
        .zip(groups)
        .map(|(data, &c)| Tensor::new(&[shape[0], shape[1], c], data))
        .collect()
}

pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
    let (h, w) = (first.shape()[0], first.shape()[1]);
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[2]).collect();
    if parts.iter().any(|p| p.rank() != 3 || p.shape()[..2] != [h, w]) {
        return Err(invalid("concat_channels: spatial shapes differ"));
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(h * w * total);
    for px in 0..h * w {
        for (p, &c) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[px * c..(px + 1) * c]);
        }
    }
    Tensor::new(&[h, w, total], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{central_difference, random_tensor};

    #[test]
    fn desk_scale_geometry() {
        let m = FcnModel::<f32>::init(&ModelSpec::desk_scale(vec![3, 2]), 0).unwrap();
        assert_eq!(m.downsample(), 4);
        assert_eq!(m.receptive_field(), 11);
        assert_eq!(m.grid_side(64).unwrap(), 14);
        assert_eq!(m.grid_side(11).unwrap(), 1);
        assert!(m.grid_side(10).is_err());
        for w in 11..80 {
            let img = Tensor::<f32>::full(&[w, w, 3], 0.5);
            let out = m.forward(&img).unwrap();
            let side = m.grid_side(w).unwrap();
            assert_eq!(out.probs[0].shape(), &[side, side, 3]);
            assert_eq!(out.probs[1].shape(), &[side, side, 2]);
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let spec = ModelSpec::desk_scale(vec![2]);
        let a = FcnModel::<f32>::init(&spec, 5).unwrap();
        assert_eq!(a, FcnModel::init(&spec, 5).unwrap());
        assert_ne!(a, FcnModel::init(&spec, 6).unwrap());
        assert!(a.layers.iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn glorot_draws_are_centered_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t: Tensor<f64> = glorot_uniform([10, 10, 10, 10], &mut rng);
        let bound = (6.0f64 / 2000.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        let n = t.len() as f64;
        let mean = t.sum() / n;
        // Var of U(−b, b) is b²/3.
        let stderr = (bound * bound / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn split_and_concat_are_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&[2, 3, 5], &mut rng);
        let parts = split_channels(&t, &[3, 2]).unwrap();
        assert_eq!(parts[1].at(&[1, 2, 0]), t.at(&[1, 2, 3]));
        assert_eq!(concat_channels(&parts).unwrap(), t);
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let spec = ModelSpec {
            in_channels: 2,
            hidden: vec![
                LayerSpec { kernel: 3, stride: 2, out_channels: 3 },
                LayerSpec { kernel: 2, stride: 1, out_channels: 3 },
            ],
            task_classes: vec![2, 3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = FcnModel::<f64>::init(&spec, 1).unwrap();
        let image = random_tensor(&[9, 9, 2], &mut rng);
        let cache = model.forward(&image).unwrap();
        let ups: Vec<Tensor<f64>> = cache.probs.iter().map(|p| random_tensor(p.shape(), &mut rng)).collect();
        let loss = |m: &FcnModel<f64>| -> f64 {
            m.forward(&image)
                .unwrap()
                .probs
                .iter()
                .zip(&ups)
                .map(|(p, u)| p.data().iter().zip(u.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let grads = model.backward(&cache, &ups).unwrap();
        for (i, g) in grads.iter().enumerate() {
            let fd = central_difference(model.params()[i], |p| {
                let mut m = model.clone();
                *m.params_mut()[i] = p.clone();
                loss(&m)
            });
            assert!(fd.max_abs_diff(g).unwrap() < 1e-6, "param {i}");
        }
    }
}
