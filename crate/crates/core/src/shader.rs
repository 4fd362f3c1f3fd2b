//! The small network mapping BRDF features, illumination features and the
//! encoded view direction to a specular colour, and the diffuse + specular
//! composition.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoding::{FOURIER_DIM, IDE_DIM};
use crate::error::{Error, Result};
use crate::gaussian::BRDF_DIM;
use crate::scalar::{sigmoid, Real};

pub const HIDDEN_WIDTH: usize = 64;
pub const OUTPUT_BIAS_INIT: f64 = -2.0;

/// Which shading inputs the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShadingVariant {
    /// BRDF features, illumination and the roughness-attenuated IDE.
    #[default]
    Full,
    /// Illumination and IDE only: specular colour is a function of position
    /// and direction, independent of the per-Gaussian BRDF features.
    OutgoingRadiance,
    /// Fourier encoding of the view direction in place of IDE; roughness is
    /// unused.
    NoIde,
}

impl ShadingVariant {
    pub fn uses_brdf(self) -> bool {
        !matches!(self, ShadingVariant::OutgoingRadiance)
    }

    pub fn uses_roughness(self) -> bool {
        !matches!(self, ShadingVariant::NoIde)
    }

    pub fn encoding_dim(self) -> usize {
        match self {
            ShadingVariant::NoIde => FOURIER_DIM,
            _ => IDE_DIM,
        }
    }

    pub fn input_dim(self, feature_dim: usize) -> usize {
        let brdf = if self.uses_brdf() { BRDF_DIM } else { 0 };
        brdf + feature_dim + self.encoding_dim()
    }

    pub fn tag(self) -> u8 {
        match self {
            ShadingVariant::Full => 0,
            ShadingVariant::OutgoingRadiance => 1,
            ShadingVariant::NoIde => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ShadingVariant::Full),
            1 => Some(ShadingVariant::OutgoingRadiance),
            2 => Some(ShadingVariant::NoIde),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShadingVariant::Full => "full",
            ShadingVariant::OutgoingRadiance => "outgoing-radiance",
            ShadingVariant::NoIde => "no-ide",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [ShadingVariant::Full, ShadingVariant::OutgoingRadiance, ShadingVariant::NoIde]
            .into_iter()
            .find(|v| v.name() == name)
    }
}

/// Fully connected layer, `weight` is `outputs x inputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    pub fn forward(&self, x: &[T], y: &mut [T]) {
        for (o, out) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            *out = acc;
        }
    }

    /// Accumulates parameter gradients and writes `dL/dx` into `dx`.
    fn backward(&self, x: &[T], dy: &[T], grad: &mut Dense<T>, dx: &mut [T]) {
        dx.fill(T::zero());
        for (o, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias[o] += g;
            let base = o * self.inputs;
            let row = &self.weight[base..base + self.inputs];
            let grow = &mut grad.weight[base..base + self.inputs];
            for i in 0..self.inputs {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }
}

/// Two ReLU hidden layers and a sigmoid output of three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralShader<T> {
    pub variant: ShadingVariant,
    pub feature_dim: usize,
    pub layers: [Dense<T>; 3],
}

/// Activations saved by [`NeuralShader::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ShaderTape<T> {
    pub input: Vec<T>,
    pub hidden1: Vec<T>,
    pub hidden2: Vec<T>,
    /// `sigmoid(network output)` before the tint product.
    pub raw: [T; 3],
}

/// Gradients of [`NeuralShader::specular_color`] with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ShaderInputGrad<T> {
    pub brdf: Vec<T>,
    pub light: Vec<T>,
    pub encoding: Vec<T>,
    pub tint: [T; 3],
}

impl<T: Real> NeuralShader<T> {
    pub fn zeros(variant: ShadingVariant, feature_dim: usize) -> Self {
        let input = variant.input_dim(feature_dim);
        Self {
            variant,
            feature_dim,
            layers: [
                Dense::zeros(input, HIDDEN_WIDTH),
                Dense::zeros(HIDDEN_WIDTH, HIDDEN_WIDTH),
                Dense::zeros(HIDDEN_WIDTH, 3),
            ],
        }
    }

    /// Kaiming-style uniform init scaled by fan-in; the output bias starts at
    /// [`OUTPUT_BIAS_INIT`] so the initial specular term is small.
    pub fn random<R: Rng + ?Sized>(variant: ShadingVariant, feature_dim: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(variant, feature_dim);
        for (li, layer) in s.layers.iter_mut().enumerate() {
            let gain = if li < 2 { 6.0 } else { 3.0 };
            let bound = libm_sqrt(gain / layer.inputs as f64);
            for w in &mut layer.weight {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
            if li == 2 {
                layer.bias.fill(T::lit(OUTPUT_BIAS_INIT));
            }
        }
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn slices(&self) -> [&[T]; 6] {
        let [a, b, c] = &self.layers;
        [&a.weight, &a.bias, &b.weight, &b.bias, &c.weight, &c.bias]
    }

    pub fn slices_mut(&mut self) -> [&mut [T]; 6] {
        let [a, b, c] = &mut self.layers;
        [&mut a.weight, &mut a.bias, &mut b.weight, &mut b.bias, &mut c.weight, &mut c.bias]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.variant, self.feature_dim)
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.fill(T::zero());
        }
    }

    /// Adds `other` element-wise (gradient accumulation).
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn check_inputs(&self, brdf: &[T], light: &[T], enc: &[T]) -> Result<()> {
        let want_brdf = if self.variant.uses_brdf() { BRDF_DIM } else { 0 };
        // the outgoing-radiance variant ignores whatever BRDF slice it is given
        if self.variant.uses_brdf() && brdf.len() != want_brdf {
            return Err(Error::DimensionMismatch { what: "brdf features", expected: want_brdf, got: brdf.len() });
        }
        if light.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "illumination features",
                expected: self.feature_dim,
                got: light.len(),
            });
        }
        let e = self.variant.encoding_dim();
        if enc.len() != e {
            return Err(Error::DimensionMismatch { what: "direction encoding", expected: e, got: enc.len() });
        }
        Ok(())
    }

    /// `tint ⊙ sigmoid(MLP(ρ ‖ L ‖ enc))`, with ρ omitted for the
    /// outgoing-radiance variant.
    pub fn specular_color(&self, brdf: &[T], light: &[T], enc: &[T], tint: [T; 3]) -> Result<[T; 3]> {
        let mut tape = ShaderTape::default();
        self.forward(brdf, light, enc, tint, &mut tape)
    }

    pub fn forward(
        &self,
        brdf: &[T],
        light: &[T],
        enc: &[T],
        tint: [T; 3],
        tape: &mut ShaderTape<T>,
    ) -> Result<[T; 3]> {
        self.check_inputs(brdf, light, enc)?;
        tape.input.clear();
        if self.variant.uses_brdf() {
            tape.input.extend_from_slice(brdf);
        }
        tape.input.extend_from_slice(light);
        tape.input.extend_from_slice(enc);
        tape.hidden1.resize(HIDDEN_WIDTH, T::zero());
        tape.hidden2.resize(HIDDEN_WIDTH, T::zero());
        let [l1, l2, l3] = &self.layers;
        l1.forward(&tape.input, &mut tape.hidden1);
        relu(&mut tape.hidden1);
        l2.forward(&tape.hidden1, &mut tape.hidden2);
        relu(&mut tape.hidden2);
        let mut out = [T::zero(); 3];
        l3.forward(&tape.hidden2, &mut out);
        tape.raw = out.map(sigmoid);
        Ok([tape.raw[0] * tint[0], tape.raw[1] * tint[1], tape.raw[2] * tint[2]])
    }

    /// Backpropagates `upstream = dL/dc_s`; parameter gradients are
    /// accumulated into `grad`.
    pub fn backward(
        &self,
        tape: &ShaderTape<T>,
        tint: [T; 3],
        upstream: [T; 3],
        grad: &mut NeuralShader<T>,
    ) -> ShaderInputGrad<T> {
        let one = T::one();
        let tint_grad = core::array::from_fn(|c| upstream[c] * tape.raw[c]);
        let d_out: [T; 3] = core::array::from_fn(|c| upstream[c] * tint[c] * tape.raw[c] * (one - tape.raw[c]));
        let [l1, l2, l3] = &self.layers;
        let [g1, g2, g3] = &mut grad.layers;
        let mut d_h2 = vec![T::zero(); HIDDEN_WIDTH];
        l3.backward(&tape.hidden2, &d_out, g3, &mut d_h2);
        relu_backward(&tape.hidden2, &mut d_h2);
        let mut d_h1 = vec![T::zero(); HIDDEN_WIDTH];
        l2.backward(&tape.hidden1, &d_h2, g2, &mut d_h1);
        relu_backward(&tape.hidden1, &mut d_h1);
        let mut d_in = vec![T::zero(); l1.inputs];
        l1.backward(&tape.input, &d_h1, g1, &mut d_in);

        let nb = if self.variant.uses_brdf() { BRDF_DIM } else { 0 };
        let brdf = if nb > 0 { d_in[..nb].to_vec() } else { vec![T::zero(); BRDF_DIM] };
        let light = d_in[nb..nb + self.feature_dim].to_vec();
        let encoding = d_in[nb + self.feature_dim..].to_vec();
        ShaderInputGrad { brdf, light, encoding, tint: tint_grad }
    }
}

fn libm_sqrt(v: f64) -> f64 {
    num_traits::Float::sqrt(v)
}

fn relu<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

fn relu_backward<T: Real>(activated: &[T], d: &mut [T]) {
    for (a, g) in activated.iter().zip(d.iter_mut()) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Diffuse, specular and final colour of one Gaussian for one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadianceSample<T> {
    pub diffuse: [T; 3],
    pub specular: [T; 3],
    pub color: [T; 3],
}

/// `c = clamp(sigmoid(c_d_raw) + c_s, 0, 1)`; with `specular_on == false`
/// (diffuse warm-up) the specular term is forced to zero.
pub fn shade<T: Real>(diffuse_raw: [T; 3], specular: [T; 3], specular_on: bool) -> RadianceSample<T> {
    let diffuse = diffuse_raw.map(sigmoid);
    let specular = if specular_on { specular } else { [T::zero(); 3] };
    let color = core::array::from_fn(|c| (diffuse[c] + specular[c]).max(T::zero()).min(T::one()));
    RadianceSample { diffuse, specular, color }
}

/// Backward of [`shade`]: returns `(dL/dc_d_raw, dL/dc_s)`. Clamped channels
/// pass no gradient.
pub fn shade_backward<T: Real>(sample: &RadianceSample<T>, grad_color: [T; 3]) -> ([T; 3], [T; 3]) {
    let one = T::one();
    let mut d_raw = [T::zero(); 3];
    let mut d_spec = [T::zero(); 3];
    for c in 0..3 {
        let sum = sample.diffuse[c] + sample.specular[c];
        if sum > T::zero() && sum < one {
            d_spec[c] = grad_color[c];
            d_raw[c] = grad_color[c] * sample.diffuse[c] * (one - sample.diffuse[c]);
        }
    }
    (d_raw, d_spec)
}
