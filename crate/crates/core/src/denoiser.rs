//! Convolutional residual estimators for the image- and k-space regularizers.
//!
//! A [`DenoiserNet`] maps a stack of complex channels to a stack of the same
//! shape through `conv -> leaky ReLU -> ... -> conv` with 3x3 same-size
//! kernels. The network output is the residual `N u`; the denoised estimate
//! used by the reconstruction is `D u = u - N u`. With the final layer zeroed
//! at initialization, `N = 0` and `D` is the identity.

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::{ComplexTensor, RealTensor, RngStream};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// One 3x3 convolution, weights laid out `[out_ch, in_ch, 3, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weights: vec![0.0; out_ch * in_ch * TAPS],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn from_parts(in_ch: usize, out_ch: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != out_ch * in_ch * TAPS || bias.len() != out_ch {
            return Err(shape_err(format!(
                "conv layer {in_ch}->{out_ch} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_ch,
            out_ch,
            weights,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// Layer count, hidden width and activation slope of a denoiser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetShape {
    /// Complex channels in (and out).
    pub channels: usize,
    pub hidden: usize,
    /// Number of convolutions, at least 1.
    pub depth: usize,
    pub alpha: f64,
}

impl NetShape {
    pub fn real_channels(&self) -> usize {
        2 * self.channels
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let c = self.real_channels();
        (0..self.depth)
            .map(|l| {
                let i = if l == 0 { c } else { self.hidden };
                let o = if l + 1 == self.depth { c } else { self.hidden };
                (i, o)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    layers: Vec<ConvLayer>,
    alpha: f64,
    revision: u64,
}

/// Parameter gradients, congruent with a [`DenoiserNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl NetGradients {
    pub fn zeros_like(net: &DenoiserNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &NetGradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Layer-major flattening, weights before bias within a layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Activations retained by [`net_forward`] for [`net_backward`].
#[derive(Clone, Debug)]
pub struct NetTape {
    revision: u64,
    ny: usize,
    nx: usize,
    input: RealTensor,
    /// Pre-activation outputs of every hidden layer.
    pre: Vec<RealTensor>,
}

impl DenoiserNet {
    pub fn from_layers(layers: Vec<ConvLayer>, alpha: f64) -> Result<Self> {
        let first = layers.first().ok_or_else(|| invalid("denoiser needs at least one layer"))?;
        for pair in layers.windows(2) {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(shape_err(format!(
                    "layer emits {} channels, next expects {}",
                    pair[0].out_ch, pair[1].in_ch
                )));
            }
        }
        let last = layers.last().unwrap();
        if first.in_ch != last.out_ch || first.in_ch % 2 != 0 {
            return Err(shape_err(format!(
                "denoiser maps {} channels to {}; needs an even, matching count",
                first.in_ch, last.out_ch
            )));
        }
        Ok(Self {
            layers,
            alpha,
            revision: 0,
        })
    }

    /// Fan-in scaled Gaussian hidden layers (variance `2 / (9 in_ch)`), zero final layer.
    pub fn init(shape: &NetShape, rng: &mut RngStream) -> Result<Self> {
        if shape.depth == 0 || shape.channels == 0 || (shape.depth > 1 && shape.hidden == 0) {
            return Err(invalid(format!("degenerate denoiser shape {:?}", shape)));
        }
        let dims = shape.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| {
                let mut layer = ConvLayer::zeros(i, o);
                if l != last {
                    let std = (2.0 / (TAPS * i) as f64).sqrt();
                    let normal = Normal::new(0.0, std).unwrap();
                    for w in &mut layer.weights {
                        *w = normal.sample(rng);
                    }
                }
                layer
            })
            .collect();
        Self::from_layers(layers, shape.alpha)
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Complex channels consumed and produced.
    pub fn channels(&self) -> usize {
        self.layers[0].in_ch / 2
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            channels: self.channels(),
            hidden: if self.layers.len() > 1 { self.layers[0].out_ch } else { 0 },
            depth: self.layers.len(),
            alpha: self.alpha,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Same ordering as [`NetGradients::flatten`].
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(shape_err(format!(
                "{} parameters for a net with {}",
                params.len(),
                self.parameter_count()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        self.revision += 1;
        Ok(())
    }

    /// Mutable access to one layer; invalidates outstanding tapes.
    pub fn layer_mut(&mut self, index: usize) -> &mut ConvLayer {
        self.revision += 1;
        &mut self.layers[index]
    }
}

/// Complex `[ch, ny, nx]` to real `[2 ch, ny, nx]`, channels ordered re0, im0, re1, im1, ...
pub fn channels_from_complex(u: &ComplexTensor) -> RealTensor {
    let s = u.shape();
    let plane: usize = s[1..].iter().product();
    let mut shape = s.to_vec();
    shape[0] *= 2;
    let mut out = RealTensor::zeros(&shape);
    for c in 0..s[0] {
        let src = u.slab(c);
        let data = out.data_mut();
        for (p, v) in src.iter().enumerate() {
            data[2 * c * plane + p] = v.re;
            data[(2 * c + 1) * plane + p] = v.im;
        }
    }
    out
}

/// Inverse of [`channels_from_complex`].
pub fn complex_from_channels(v: &RealTensor) -> Result<ComplexTensor> {
    let s = v.shape();
    if s.is_empty() || s[0] % 2 != 0 {
        return Err(shape_err(format!("need an even channel count, got {:?}", s)));
    }
    let plane: usize = s[1..].iter().product();
    let ch = s[0] / 2;
    let mut data = Vec::with_capacity(ch * plane);
    for c in 0..ch {
        let re = v.slab(2 * c);
        let im = v.slab(2 * c + 1);
        data.extend(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)));
    }
    let mut shape = s.to_vec();
    shape[0] = ch;
    ComplexTensor::from_vec(&shape, data)
}

pub fn leaky_relu(v: &RealTensor, alpha: f64) -> RealTensor {
    let data = v.data().iter().map(|&x| if x >= 0.0 { x } else { alpha * x }).collect();
    RealTensor::from_vec(v.shape(), data).unwrap()
}

fn im2col(input: &[f64], ch: usize, ny: usize, nx: usize) -> Vec<f64> {
    let plane = ny * nx;
    let mut col = vec![0.0; ch * TAPS * plane];
    for c in 0..ch {
        let src = &input[c * plane..(c + 1) * plane];
        for t in 0..TAPS {
            let (dy, dx) = ((t / KERNEL) as isize - 1, (t % KERNEL) as isize - 1);
            let dst = &mut col[(c * TAPS + t) * plane..(c * TAPS + t + 1) * plane];
            for y in 0..ny {
                let sy = y as isize + dy;
                if sy < 0 || sy >= ny as isize {
                    continue;
                }
                let (x0, x1) = ((-dx).max(0) as usize, (nx as isize - dx.max(0)) as usize);
                let srow = sy as usize * nx;
                for x in x0..x1 {
                    dst[y * nx + x] = src[srow + (x as isize + dx) as usize];
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], ch: usize, ny: usize, nx: usize) -> Vec<f64> {
    let plane = ny * nx;
    let mut out = vec![0.0; ch * plane];
    for c in 0..ch {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for t in 0..TAPS {
            let (dy, dx) = ((t / KERNEL) as isize - 1, (t % KERNEL) as isize - 1);
            let src = &col[(c * TAPS + t) * plane..(c * TAPS + t + 1) * plane];
            for y in 0..ny {
                let sy = y as isize + dy;
                if sy < 0 || sy >= ny as isize {
                    continue;
                }
                let (x0, x1) = ((-dx).max(0) as usize, (nx as isize - dx.max(0)) as usize);
                let srow = sy as usize * nx;
                for x in x0..x1 {
                    dst[srow + (x as isize + dx) as usize] += src[y * nx + x];
                }
            }
        }
    }
    out
}

/// Row-major `c = a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    // SAFETY: every index touched is < m*k, k*n, m*n for the stated strides,
    // which the callers derive from the buffers' own layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same-size 3x3 cross-correlation with zero padding, plus per-channel bias.
pub fn conv_forward(input: &RealTensor, layer: &ConvLayer) -> Result<RealTensor> {
    let s = input.shape();
    if s.len() != 3 || s[0] != layer.in_ch {
        return Err(shape_err(format!(
            "conv expects [{}, ny, nx], got {:?}",
            layer.in_ch, s
        )));
    }
    let (ny, nx) = (s[1], s[2]);
    let plane = ny * nx;
    let col = im2col(input.data(), layer.in_ch, ny, nx);
    let kk = layer.in_ch * TAPS;
    let mut out = vec![0.0; layer.out_ch * plane];
    for (o, chunk) in out.chunks_exact_mut(plane).enumerate() {
        chunk.fill(layer.bias[o]);
    }
    gemm(
        layer.out_ch,
        kk,
        plane,
        &layer.weights,
        (kk as isize, 1),
        &col,
        (plane as isize, 1),
        1.0,
        &mut out,
    );
    RealTensor::from_vec(&[layer.out_ch, ny, nx], out)
}

/// Gradients of one convolution given its input and the output upstream.
fn conv_backward(
    input: &RealTensor,
    upstream: &[f64],
    layer: &ConvLayer,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let (ny, nx) = (input.shape()[1], input.shape()[2]);
    let plane = ny * nx;
    let kk = layer.in_ch * TAPS;
    let col = im2col(input.data(), layer.in_ch, ny, nx);
    for (o, g) in grad_b.iter_mut().enumerate() {
        *g += upstream[o * plane..(o + 1) * plane].iter().sum::<f64>();
    }
    // dW += dOut * col^T
    gemm(
        layer.out_ch,
        plane,
        kk,
        upstream,
        (plane as isize, 1),
        &col,
        (1, plane as isize),
        1.0,
        grad_w,
    );
    // dCol = W^T * dOut
    let mut dcol = vec![0.0; kk * plane];
    gemm(
        kk,
        layer.out_ch,
        plane,
        &layer.weights,
        (1, kk as isize),
        upstream,
        (plane as isize, 1),
        0.0,
        &mut dcol,
    );
    col2im(&dcol, layer.in_ch, ny, nx)
}

/// Runs the network on `[channels, ny, nx]` complex input, returning the residual estimate.
pub fn net_forward(u: &ComplexTensor, net: &DenoiserNet) -> Result<(ComplexTensor, NetTape)> {
    let s = u.shape();
    if s.len() != 3 || 2 * s[0] != net.layers[0].in_ch {
        return Err(shape_err(format!(
            "denoiser expects [{}, ny, nx] complex input, got {:?}",
            net.channels(),
            s
        )));
    }
    let input = channels_from_complex(u);
    let mut pre = Vec::with_capacity(net.layers.len() - 1);
    let mut h = conv_forward(&input, &net.layers[0])?;
    for layer in &net.layers[1..] {
        let act = leaky_relu(&h, net.alpha);
        pre.push(h);
        h = conv_forward(&act, layer)?;
    }
    let out = complex_from_channels(&h)?;
    Ok((
        out,
        NetTape {
            revision: net.revision,
            ny: s[1],
            nx: s[2],
            input,
            pre,
        },
    ))
}

/// Reverse pass: input gradient and parameter gradients of `Re<upstream, N(u)>`.
pub fn net_backward(
    upstream: &ComplexTensor,
    tape: &NetTape,
    net: &DenoiserNet,
) -> Result<(ComplexTensor, NetGradients)> {
    if tape.revision != net.revision || tape.pre.len() + 1 != net.layers.len() {
        return Err(Error::StaleTape(format!(
            "tape from revision {} used with revision {}",
            tape.revision, net.revision
        )));
    }
    if upstream.shape() != [net.channels(), tape.ny, tape.nx] {
        return Err(shape_err(format!(
            "upstream {:?} does not match tape [{}, {}, {}]",
            upstream.shape(),
            net.channels(),
            tape.ny,
            tape.nx
        )));
    }
    let mut grads = NetGradients::zeros_like(net);
    let mut g = channels_from_complex(upstream).into_data();
    for l in (0..net.layers.len()).rev() {
        let layer_input = if l == 0 {
            tape.input.clone()
        } else {
            leaky_relu(&tape.pre[l - 1], net.alpha)
        };
        let dinput = conv_backward(
            &layer_input,
            &g,
            &net.layers[l],
            &mut grads.weights[l],
            &mut grads.bias[l],
        );
        g = if l == 0 {
            dinput
        } else {
            dinput
                .iter()
                .zip(tape.pre[l - 1].data())
                .map(|(&d, &p)| if p >= 0.0 { d } else { net.alpha * d })
                .collect()
        };
    }
    let g = RealTensor::from_vec(tape.input.shape(), g)?;
    Ok((complex_from_channels(&g)?, grads))
}
