//! Reference H-Reducer: a channel-preserving strided convolution that merges
//! horizontally adjacent patch features, followed by a linear projection into
//! the decoder embedding space.
//!
//! Patch features are an `H × W × D` grid. With the default `(1, 4)` merge
//! each output feature mixes four horizontally adjacent patches of one row,
//! so a 32 × 32 patch grid becomes 256 features. Everything is `f64` and
//! sized for desk-scale verification, with an analytic backward pass that is
//! checked against central finite differences.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeding::rng;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("shape {shape:?} has a zero dimension")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Entries drawn uniformly from `[lo, hi]` with a seeded generator.
    pub fn random_uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| r.gen_range(lo..=hi)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Learned weights of the reducer.
#[derive(Debug, Clone, PartialEq)]
pub struct HReducerParams {
    /// `[D, D, kh, kw]`: output channel, input channel, kernel row, kernel column.
    pub conv_kernel: Tensor,
    /// `[D]`
    pub conv_bias: Tensor,
    /// `[D_lm, D]`
    pub proj_weight: Tensor,
    /// `[D_lm]`
    pub proj_bias: Tensor,
    /// Kernel size and stride, `(kh, kw)`.
    pub merge: (usize, usize),
}

pub const DEFAULT_MERGE: (usize, usize) = (1, 4);

impl HReducerParams {
    pub fn new(
        conv_kernel: Tensor,
        conv_bias: Tensor,
        proj_weight: Tensor,
        proj_bias: Tensor,
    ) -> Result<Self> {
        let [d_out, d_in, kh, kw] = conv_kernel.shape() else {
            return Err(Error::Shape(format!(
                "conv kernel must be 4-D, got {:?}",
                conv_kernel.shape()
            )));
        };
        if d_out != d_in {
            return Err(Error::Shape(format!(
                "conv output channels {d_out} must equal input channels {d_in}"
            )));
        }
        let d = *d_in;
        if conv_bias.shape() != [d] {
            return Err(Error::Shape(format!("conv bias must be [{d}], got {:?}", conv_bias.shape())));
        }
        let [d_lm, d_proj] = proj_weight.shape() else {
            return Err(Error::Shape(format!(
                "projection weight must be 2-D, got {:?}",
                proj_weight.shape()
            )));
        };
        if *d_proj != d {
            return Err(Error::Shape(format!(
                "projection weight expects {d_proj} channels, conv produces {d}"
            )));
        }
        if proj_bias.shape() != [*d_lm] {
            return Err(Error::Shape(format!(
                "projection bias must be [{d_lm}], got {:?}",
                proj_bias.shape()
            )));
        }
        let merge = (*kh, *kw);
        Ok(Self {
            conv_kernel,
            conv_bias,
            proj_weight,
            proj_bias,
            merge,
        })
    }

    /// Parameters drawn uniformly from `[-0.1, 0.1]`.
    pub fn random(d: usize, d_lm: usize, merge: (usize, usize), seed: u64) -> Self {
        let (kh, kw) = merge;
        Self::new(
            Tensor::random_uniform(&[d, d, kh, kw], -0.1, 0.1, seed),
            Tensor::random_uniform(&[d], -0.1, 0.1, seed.wrapping_add(1)),
            Tensor::random_uniform(&[d_lm, d], -0.1, 0.1, seed.wrapping_add(2)),
            Tensor::random_uniform(&[d_lm], -0.1, 0.1, seed.wrapping_add(3)),
        )
        .expect("shapes are consistent by construction")
    }

    pub fn channels(&self) -> usize {
        self.conv_bias.len()
    }

    pub fn lm_dim(&self) -> usize {
        self.proj_bias.len()
    }

    fn with_zero_biases(&self) -> Self {
        let mut p = self.clone();
        p.conv_bias.data_mut().fill(0.0);
        p.proj_bias.data_mut().fill(0.0);
        p
    }
}

fn grid_dims(v: &Tensor, p: &HReducerParams) -> Result<(usize, usize, usize)> {
    let [h, w, d] = v.shape() else {
        return Err(Error::Shape(format!("input must be [H, W, D], got {:?}", v.shape())));
    };
    let (kh, kw) = p.merge;
    if *d != p.channels() {
        return Err(Error::Shape(format!(
            "input has {d} channels, parameters expect {}",
            p.channels()
        )));
    }
    if h % kh != 0 {
        return Err(Error::Shape(format!("height {h} is not divisible by kernel height {kh}")));
    }
    if w % kw != 0 {
        return Err(Error::Shape(format!("width {w} is not divisible by kernel width {kw}")));
    }
    Ok((*h, *w, *d))
}

/// Strided merge: `out[r, j, o] = bias[o] + Σ kernel[o, i, a, b] · v[r·kh + a, j·kw + b, i]`.
pub fn conv_merge(v: &Tensor, p: &HReducerParams) -> Result<Tensor> {
    let (h, w, d) = grid_dims(v, p)?;
    let (kh, kw) = p.merge;
    let (ho, wo) = (h / kh, w / kw);
    let k = p.conv_kernel.data();
    let x = v.data();
    let mut out = vec![0.0; ho * wo * d];
    for r in 0..ho {
        for j in 0..wo {
            let base = (r * wo + j) * d;
            out[base..base + d].copy_from_slice(p.conv_bias.data());
            for a in 0..kh {
                for b in 0..kw {
                    let px = ((r * kh + a) * w + j * kw + b) * d;
                    let patch = &x[px..px + d];
                    for o in 0..d {
                        let mut acc = 0.0;
                        for (i, xi) in patch.iter().enumerate() {
                            acc += k[((o * d + i) * kh + a) * kw + b] * xi;
                        }
                        out[base + o] += acc;
                    }
                }
            }
        }
    }
    Tensor::new(vec![ho, wo, d], out)
}

/// Affine map along the last dimension.
pub fn project(v: &Tensor, p: &HReducerParams) -> Result<Tensor> {
    let d = p.channels();
    let d_lm = p.lm_dim();
    let Some((&last, lead)) = v.shape().split_last() else {
        return Err(Error::Shape("cannot project a 0-D tensor".into()));
    };
    if last != d {
        return Err(Error::Shape(format!("last dimension {last} does not match projection input {d}")));
    }
    let rows = v.len() / d;
    let wt = p.proj_weight.data();
    let mut out = Vec::with_capacity(rows * d_lm);
    for row in v.data().chunks_exact(d) {
        for k in 0..d_lm {
            let wk = &wt[k * d..(k + 1) * d];
            out.push(p.proj_bias.data()[k] + wk.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    let mut shape = lead.to_vec();
    shape.push(d_lm);
    Tensor::new(shape, out)
}

/// Merge, project, and flatten to `[(H·W)/(kh·kw), D_lm]` in row-major patch order.
pub fn hreducer_forward(v: &Tensor, p: &HReducerParams) -> Result<Tensor> {
    let merged = conv_merge(v, p)?;
    let n = merged.shape()[0] * merged.shape()[1];
    let flat = merged.reshape(vec![n, p.channels()])?;
    project(&flat, p)
}

/// Gradients of a scalar loss with respect to every parameter and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct HReducerGrads {
    pub conv_kernel: Tensor,
    pub conv_bias: Tensor,
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
    pub input: Tensor,
}

/// Backpropagates `d_out` (shaped like the forward output) through the reducer.
pub fn hreducer_backward(v: &Tensor, p: &HReducerParams, d_out: &Tensor) -> Result<HReducerGrads> {
    let (h, w, d) = grid_dims(v, p)?;
    let (kh, kw) = p.merge;
    let (ho, wo) = (h / kh, w / kw);
    let n = ho * wo;
    let d_lm = p.lm_dim();
    if d_out.shape() != [n, d_lm] {
        return Err(Error::Shape(format!(
            "output gradient must be [{n}, {d_lm}], got {:?}",
            d_out.shape()
        )));
    }

    let z = conv_merge(v, p)?;
    let z = z.data();
    let dy = d_out.data();
    let wt = p.proj_weight.data();

    let mut d_proj_w = vec![0.0; d_lm * d];
    let mut d_proj_b = vec![0.0; d_lm];
    let mut dz = vec![0.0; n * d];
    for row in 0..n {
        for k in 0..d_lm {
            let g = dy[row * d_lm + k];
            d_proj_b[k] += g;
            for c in 0..d {
                d_proj_w[k * d + c] += g * z[row * d + c];
                dz[row * d + c] += g * wt[k * d + c];
            }
        }
    }

    let x = v.data();
    let kern = p.conv_kernel.data();
    let mut d_kernel = vec![0.0; kern.len()];
    let mut d_conv_b = vec![0.0; d];
    let mut d_input = vec![0.0; x.len()];
    for r in 0..ho {
        for j in 0..wo {
            let gz = &dz[(r * wo + j) * d..(r * wo + j + 1) * d];
            for (o, g) in gz.iter().enumerate() {
                d_conv_b[o] += g;
            }
            for a in 0..kh {
                for b in 0..kw {
                    let px = ((r * kh + a) * w + j * kw + b) * d;
                    for (o, g) in gz.iter().enumerate() {
                        for i in 0..d {
                            let ki = ((o * d + i) * kh + a) * kw + b;
                            d_kernel[ki] += g * x[px + i];
                            d_input[px + i] += g * kern[ki];
                        }
                    }
                }
            }
        }
    }

    let grads = HReducerGrads {
        conv_kernel: Tensor::new(p.conv_kernel.shape().to_vec(), d_kernel)?,
        conv_bias: Tensor::new(vec![d], d_conv_b)?,
        proj_weight: Tensor::new(vec![d_lm, d], d_proj_w)?,
        proj_bias: Tensor::new(vec![d_lm], d_proj_b)?,
        input: Tensor::new(v.shape().to_vec(), d_input)?,
    };
    Ok(grads)
}

/// Scalar objective over the reducer output.
pub trait Loss {
    fn value(&self, out: &Tensor) -> f64;
    fn grad(&self, out: &Tensor) -> Tensor;
}

/// Sum of all outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct SumLoss;

impl Loss for SumLoss {
    fn value(&self, out: &Tensor) -> f64 {
        out.data().iter().sum()
    }

    fn grad(&self, out: &Tensor) -> Tensor {
        Tensor::filled(out.shape(), 1.0)
    }
}

/// `Σ sin(w_i · y_i)`, smooth with nonzero third derivatives.
#[derive(Debug, Clone)]
pub struct SineLoss {
    pub weights: Tensor,
}

impl SineLoss {
    /// Weights in `[0.5, 2]` for an output of `shape`.
    pub fn random(shape: &[usize], seed: u64) -> Self {
        Self {
            weights: Tensor::random_uniform(shape, 0.5, 2.0, seed),
        }
    }
}

impl Loss for SineLoss {
    fn value(&self, out: &Tensor) -> f64 {
        out.data()
            .iter()
            .zip(self.weights.data())
            .map(|(y, w)| (w * y).sin())
            .sum()
    }

    fn grad(&self, out: &Tensor) -> Tensor {
        let data = out
            .data()
            .iter()
            .zip(self.weights.data())
            .map(|(y, w)| w * (w * y).cos())
            .collect();
        Tensor {
            shape: out.shape().to_vec(),
            data,
        }
    }
}

/// Loss value and analytic gradients at `(p, v)`.
pub fn loss_and_grads(p: &HReducerParams, v: &Tensor, loss: &dyn Loss) -> Result<(f64, HReducerGrads)> {
    let out = hreducer_forward(v, p)?;
    let grads = hreducer_backward(v, p, &loss.grad(&out))?;
    Ok((loss.value(&out), grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Kernel,
    ConvBias,
    ProjWeight,
    ProjBias,
    Input,
}

const SLOTS: [Slot; 5] = [Slot::Kernel, Slot::ConvBias, Slot::ProjWeight, Slot::ProjBias, Slot::Input];

fn slot_mut<'a>(p: &'a mut HReducerParams, v: &'a mut Tensor, s: Slot) -> &'a mut Tensor {
    match s {
        Slot::Kernel => &mut p.conv_kernel,
        Slot::ConvBias => &mut p.conv_bias,
        Slot::ProjWeight => &mut p.proj_weight,
        Slot::ProjBias => &mut p.proj_bias,
        Slot::Input => v,
    }
}

fn slot_grad(g: &HReducerGrads, s: Slot) -> &Tensor {
    match s {
        Slot::Kernel => &g.conv_kernel,
        Slot::ConvBias => &g.conv_bias,
        Slot::ProjWeight => &g.proj_weight,
        Slot::ProjBias => &g.proj_bias,
        Slot::Input => &g.input,
    }
}

/// Largest dimension accepted by the finite-difference checks.
pub const MAX_CHECK_DIM: usize = 16;

/// Pairs of (analytic, central-difference) derivatives over every parameter
/// and input entry.
fn derivative_pairs(p: &HReducerParams, v: &Tensor, loss: &dyn Loss, eps: f64) -> Result<Vec<(f64, f64)>> {
    let too_big = v
        .shape()
        .iter()
        .chain(p.proj_weight.shape())
        .chain(p.conv_kernel.shape())
        .any(|&d| d > MAX_CHECK_DIM);
    if too_big {
        return Err(Error::Precondition(format!(
            "finite-difference checks are limited to dimensions <= {MAX_CHECK_DIM}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Numeric(format!("step {eps} must be positive and finite")));
    }

    let (_, grads) = loss_and_grads(p, v, loss)?;
    let mut p = p.clone();
    let mut v = v.clone();
    let mut pairs = Vec::new();
    for slot in SLOTS {
        let analytic = slot_grad(&grads, slot).data().to_vec();
        for (idx, &a) in analytic.iter().enumerate() {
            let orig = slot_mut(&mut p, &mut v, slot).data()[idx];
            slot_mut(&mut p, &mut v, slot).data_mut()[idx] = orig + eps;
            let plus = loss.value(&hreducer_forward(&v, &p)?);
            slot_mut(&mut p, &mut v, slot).data_mut()[idx] = orig - eps;
            let minus = loss.value(&hreducer_forward(&v, &p)?);
            slot_mut(&mut p, &mut v, slot).data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            if !a.is_finite() || !fd.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite derivative in {slot:?}[{idx}]: analytic {a}, numeric {fd}"
                )));
            }
            pairs.push((a, fd));
        }
    }
    Ok(pairs)
}

/// Max over all parameters and inputs of
/// `|analytic − central difference| / max(1, |central difference|)`.
pub fn grad_check(p: &HReducerParams, v: &Tensor, loss: &dyn Loss, eps: f64) -> Result<f64> {
    Ok(derivative_pairs(p, v, loss, eps)?
        .into_iter()
        .map(|(a, fd)| (a - fd).abs() / fd.abs().max(1.0))
        .fold(0.0, f64::max))
}

/// Max absolute gap between analytic and central-difference derivatives.
pub fn max_fd_abs_error(p: &HReducerParams, v: &Tensor, loss: &dyn Loss, eps: f64) -> Result<f64> {
    Ok(derivative_pairs(p, v, loss, eps)?
        .into_iter()
        .map(|(a, fd)| (a - fd).abs())
        .fold(0.0, f64::max))
}

/// One line of the self-check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Merge shapes compared in the reducer ablation.
pub const ABLATION_MERGES: [(usize, usize); 5] = [(1, 4), (2, 2), (2, 4), (1, 8), (2, 8)];

/// Patch grid of one 448-px crop under a 14-px ViT patch.
pub const CROP_PATCH_GRID: usize = 32;

/// Shape, locality and gradient suites, as run by `hreducer-check`.
pub fn self_check(seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();

    for merge in ABLATION_MERGES {
        let p = HReducerParams::random(4, 6, merge, seed);
        let v = Tensor::random_uniform(&[CROP_PATCH_GRID, CROP_PATCH_GRID, 4], -1.0, 1.0, seed ^ 0x5eed);
        let out = hreducer_forward(&v, &p)?;
        let expect = CROP_PATCH_GRID * CROP_PATCH_GRID / (merge.0 * merge.1);
        results.push(CheckResult {
            name: format!("shape {}x{}", merge.0, merge.1),
            passed: out.shape() == [expect, 6],
            detail: format!("1024 patches -> {} features (expected {expect})", out.shape()[0]),
        });
    }

    let locality = horizontal_locality_error(seed)?;
    results.push(CheckResult {
        name: "horizontal locality".into(),
        passed: locality == 0.0,
        detail: format!("max change outside the perturbed column block: {locality:e}"),
    });

    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let s = seed.wrapping_mul(1000).wrapping_add(i);
        let (p, v) = random_instance(s);
        let out_shape = hreducer_forward(&v, &p)?.shape().to_vec();
        worst = worst.max(grad_check(&p, &v, &SineLoss::random(&out_shape, s), 1e-5)?);
    }
    results.push(CheckResult {
        name: "gradient".into(),
        passed: worst < 1e-4,
        detail: format!("max relative error over 20 instances: {worst:e}"),
    });
    Ok(results)
}

/// A random desk-scale instance (all dimensions at most 8).
pub fn random_instance(seed: u64) -> (HReducerParams, Tensor) {
    let mut r = rng(seed);
    let merge = ABLATION_MERGES[r.gen_range(0..ABLATION_MERGES.len())];
    let rows = merge.0 * r.gen_range(1..=2);
    let cols = merge.1 * r.gen_range(1..=2);
    let d = r.gen_range(1..=4);
    let d_lm = r.gen_range(1..=4);
    let p = HReducerParams::random(d, d_lm, merge, r.gen());
    let v = Tensor::random_uniform(&[rows, cols, d], -1.0, 1.0, r.gen());
    (p, v)
}

/// Perturbs one `(1, 4)` column block and reports the largest change seen in
/// any other output column.
pub fn horizontal_locality_error(seed: u64) -> Result<f64> {
    let (h, w, d) = (3, 16, 3);
    let p = HReducerParams::random(d, 2, DEFAULT_MERGE, seed);
    let v = Tensor::random_uniform(&[h, w, d], -1.0, 1.0, seed ^ 0xb10c);
    let base = conv_merge(&v, &p)?;
    let wo = w / DEFAULT_MERGE.1;
    let mut worst: f64 = 0.0;
    for block in 0..wo {
        let mut u = v.clone();
        for r in 0..h {
            for c in block * 4..block * 4 + 4 {
                for i in 0..d {
                    u.data_mut()[(r * w + c) * d + i] += 0.5;
                }
            }
        }
        let out = conv_merge(&u, &p)?;
        for r in 0..h {
            for j in (0..wo).filter(|&j| j != block) {
                for o in 0..d {
                    let k = (r * wo + j) * d + o;
                    worst = worst.max((out.data()[k] - base.data()[k]).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// `forward(αu + βv) − (α·forward(u) + β·forward(v))` with biases zeroed.
pub fn linearity_error(p: &HReducerParams, u: &Tensor, v: &Tensor, alpha: f64, beta: f64) -> Result<f64> {
    let p0 = p.with_zero_biases();
    let lhs = hreducer_forward(&u.scaled(alpha).add(&v.scaled(beta))?, &p0)?;
    let rhs = hreducer_forward(u, &p0)?
        .scaled(alpha)
        .add(&hreducer_forward(v, &p0)?.scaled(beta))?;
    Ok(lhs.max_abs_diff(&rhs))
}
