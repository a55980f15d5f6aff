//! Valid (unpadded) strided 2-D cross-correlation over channel-last tensors.

use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Kernel is `kh × kw × c_in × c_out`, bias is `c_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, stride: usize) -> Result<Self> {
        if kernel.rank() != 4 {
            return Err(invalid(format!("kernel must be rank 4, got {:?}", kernel.shape())));
        }
        if bias.shape() != [kernel.shape()[3]] {
            return Err(Error::ShapeMismatch {
                op: "conv bias",
                left: kernel.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(invalid("stride must be positive"));
        }
        kernel.ensure_finite("conv kernel")?;
        Ok(Self {
            kernel,
            bias,
            stride,
        })
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.shape()[0], self.kernel.shape()[1])
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    /// `floor((in - k) / stride) + 1` per axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel_size();
        if h < kh || w < kw {
            return Err(invalid(format!(
                "input {h}×{w} smaller than kernel {kh}×{kw}"
            )));
        }
        Ok(((h - kh) / self.stride + 1, (w - kw) / self.stride + 1))
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize)> {
        if input.rank() != 3 || input.shape()[2] != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv2d input",
                left: input.shape().to_vec(),
                right: self.kernel.shape().to_vec(),
            });
        }
        Ok((input.shape()[0], input.shape()[1]))
    }
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let (h, w) = layer.check_input(input)?;
    let (oh, ow) = layer.output_size(h, w)?;
    let (kh, kw) = layer.kernel_size();
    let (cin, cout, s) = (layer.in_channels(), layer.out_channels(), layer.stride);
    let x = input.data();
    let k = layer.kernel.data();
    let row_len = kw * cin;
    let mut out = Vec::with_capacity(oh * ow * cout);
    for oy in 0..oh {
        for ox in 0..ow {
            let start = out.len();
            out.extend_from_slice(layer.bias.data());
            let px = &mut out[start..];
            for ky in 0..kh {
                // kw consecutive pixels are contiguous in channel-last layout,
                // and so are the matching kernel rows.
                let in_row = &x[((oy * s + ky) * w + ox * s) * cin..][..row_len];
                let k_rows = &k[ky * row_len * cout..][..row_len * cout];
                for (&xv, k_row) in in_row.iter().zip(k_rows.chunks_exact(cout)) {
                    if xv == T::zero() {
                        continue;
                    }
                    for (o, &kv) in px.iter_mut().zip(k_row) {
                        *o += xv * kv;
                    }
                }
            }
        }
    }
    let out = Tensor::new(&[oh, ow, cout], out)?;
    out.ensure_finite("conv2d_forward")?;
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (kernel, bias, grad_in) = conv2d_backward_impl(input, layer, grad_out, true)?;
    Ok(ConvGrads {
        input: grad_in.expect("requested"),
        kernel,
        bias,
    })
}

/// Parameter gradients, plus the input gradient when `want_input` is set.
pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let (h, w) = layer.check_input(input)?;
    let (oh, ow) = layer.output_size(h, w)?;
    let (kh, kw) = layer.kernel_size();
    let (cin, cout, s) = (layer.in_channels(), layer.out_channels(), layer.stride);
    if grad_out.shape() != [oh, ow, cout] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: vec![oh, ow, cout],
            right: grad_out.shape().to_vec(),
        });
    }
    let x = input.data();
    let k = layer.kernel.data();
    let g = grad_out.data();
    let row_len = kw * cin;
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); cout];
    let mut gx = if want_input {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    for oy in 0..oh {
        for ox in 0..ow {
            let g_px = &g[(oy * ow + ox) * cout..][..cout];
            for (b, &gv) in gb.iter_mut().zip(g_px) {
                *b += gv;
            }
            for ky in 0..kh {
                let base = ((oy * s + ky) * w + ox * s) * cin;
                let in_row = &x[base..][..row_len];
                let k_off = ky * row_len * cout;
                let gk_rows = &mut gk[k_off..][..row_len * cout];
                for (&xv, gk_row) in in_row.iter().zip(gk_rows.chunks_exact_mut(cout)) {
                    if xv == T::zero() {
                        continue;
                    }
                    for (o, &gv) in gk_row.iter_mut().zip(g_px) {
                        *o += xv * gv;
                    }
                }
                if want_input {
                    let k_rows = &k[k_off..][..row_len * cout];
                    let gx_row = &mut gx[base..][..row_len];
                    for (gxv, k_row) in gx_row.iter_mut().zip(k_rows.chunks_exact(cout)) {
                        let mut acc = T::zero();
                        for (&kv, &gv) in k_row.iter().zip(g_px) {
                            acc += kv * gv;
                        }
                        *gxv += acc;
                    }
                }
            }
        }
    }
    let gk = Tensor::new(layer.kernel.shape(), gk)?;
    let gb = Tensor::new(&[cout], gb)?;
    let gx = if want_input {
        Some(Tensor::new(input.shape(), gx)?)
    } else {
        None
    };
    Ok((gk, gb, gx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{central_difference, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(input: &Tensor<f64>, layer: &ConvLayer<f64>) -> Tensor<f64> {
        let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (kh, kw, _, cout) = {
            let s = layer.kernel.shape();
            (s[0], s[1], s[2], s[3])
        };
        let s = layer.stride;
        let (oh, ow) = ((h - kh) / s + 1, (w - kw) / s + 1);
        let mut out = Tensor::zeros(&[oh, ow, cout]);
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = layer.bias.at(&[co]);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..cin {
                                acc += input.at(&[oy * s + ky, ox * s + kx, ci])
                                    * layer.kernel.at(&[ky, kx, ci, co]);
                            }
                        }
                    }
                    let o = out.offset(&[oy, ox, co]);
                    out.data_mut()[o] = acc;
                }
            }
        }
        out
    }

    fn layer(kh: usize, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> ConvLayer<f64> {
        ConvLayer::new(
            random_tensor(&[kh, kh, cin, cout], rng),
            random_tensor(&[cout], rng),
            stride,
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(&[4, 5, 2], &mut rng);
        let id = ConvLayer::new(
            Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
            1,
        )
        .unwrap();
        assert_eq!(conv2d_forward(&input, &id).unwrap(), input);
        let g = random_tensor(&[4, 5, 2], &mut rng);
        assert_eq!(conv2d_backward(&input, &id, &g).unwrap().input, g);
    }

    #[test]
    fn constant_input() {
        let ones = ConvLayer::new(Tensor::full(&[3, 3, 1, 1], 1.0), Tensor::full(&[1], 0.5), 1).unwrap();
        let out = conv2d_forward(&Tensor::full(&[5, 5, 1], 1.0), &ones).unwrap();
        assert_eq!(out.shape(), &[3, 3, 1]);
        assert!(out.data().iter().all(|&v| v == 9.5));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_tensor(&[6, 6, 2], &mut rng);
        let l = layer(3, 2, 3, 2, &mut rng);
        let out = conv2d_forward(&input, &l).unwrap();
        assert_eq!(out.shape(), &[2, 2, 3]);
        assert!(out.max_abs_diff(&naive_conv(&input, &l)).unwrap() < 1e-5);
    }

    #[test]
    fn too_small_input_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = layer(3, 1, 1, 1, &mut rng);
        assert!(conv2d_forward(&Tensor::zeros(&[2, 5, 1]), &l).is_err());
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_tensor(&[5, 5, 2], &mut rng);
        let l = layer(3, 2, 2, 1, &mut rng);
        let g = conv2d_backward(&input, &l, &Tensor::zeros(&[3, 3, 2])).unwrap();
        assert!(g.input.data().iter().chain(g.kernel.data()).chain(g.bias.data()).all(|&v| v == 0.0));
        assert!(conv2d_backward(&input, &l, &Tensor::zeros(&[2, 3, 2])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..20 {
            let stride = 1 + case % 2;
            let input = random_tensor(&[5 + case % 3, 6, 2], &mut rng);
            let l = layer(2 + case % 2, 2, 3, stride, &mut rng);
            let out_shape = conv2d_forward(&input, &l).unwrap().shape().to_vec();
            let upstream = random_tensor(&out_shape, &mut rng);
            let loss = |x: &Tensor<f64>, l: &ConvLayer<f64>| -> f64 {
                conv2d_forward(x, l)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let g = conv2d_backward(&input, &l, &upstream).unwrap();
            let fd_x = central_difference(&input, |x| loss(x, &l));
            assert!(fd_x.max_abs_diff(&g.input).unwrap() < 1e-6);
            let fd_k = central_difference(&l.kernel, |k| {
                loss(&input, &ConvLayer { kernel: k.clone(), ..l.clone() })
            });
            assert!(fd_k.max_abs_diff(&g.kernel).unwrap() < 1e-6);
            let fd_b = central_difference(&l.bias, |b| {
                loss(&input, &ConvLayer { bias: b.clone(), ..l.clone() })
            });
            assert!(fd_b.max_abs_diff(&g.bias).unwrap() < 1e-6);
        }
    }
}
