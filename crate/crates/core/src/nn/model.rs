use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use super::layers::{self, Activation, LayerSpec, Scalar, Shape};
use super::NnError;
use crate::dataset::EmotionLabel;
use crate::dsp::FeatureVector;

pub const DEFAULT_INPUT_LENGTH: usize = 259;
pub const DEFAULT_DROPOUT: f64 = 0.2;

/// Conv(64,10) → Conv(128,10) → Pool(6) → Drop → Conv(128,10) → Pool(6) → Drop
/// → Flatten → Dense(256) → Drop → Dense(6, softmax).
pub fn default_architecture(dropout: f64) -> Vec<LayerSpec> {
    use Activation::{Relu, Softmax};
    vec![
        LayerSpec::Conv1d { filters: 64, kernel: 10, activation: Relu },
        LayerSpec::Conv1d { filters: 128, kernel: 10, activation: Relu },
        LayerSpec::MaxPool1d { pool: 6 },
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Conv1d { filters: 128, kernel: 10, activation: Relu },
        LayerSpec::MaxPool1d { pool: 6 },
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 256, activation: Relu },
        LayerSpec::Dropout { rate: dropout },
        LayerSpec::Dense { units: EmotionLabel::COUNT, activation: Softmax },
    ]
}

/// Weights of one trainable layer. Conv kernels are stored unrolled as
/// `(kernel·in_channels) × filters`; dense kernels as `inputs × units`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub kernel: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Params<T> {
    pub fn len(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn zeros_like(&self) -> Self {
        Params { kernel: Array2::zeros(self.kernel.raw_dim()), bias: Array1::zeros(self.bias.len()) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    pub name: String,
    pub spec: LayerSpec,
    pub output_shape: Shape,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    params: Vec<Option<Params<T>>>,
    input_length: usize,
    /// Free-form annotations persisted with the weights (pipeline config, epoch, ...).
    pub metadata: Map<String, Value>,
}

pub type Gradients<T> = Vec<Option<Params<T>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Train,
    Eval,
}

/// Forward mode. Training needs a randomness source for the dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn kind(&self) -> ModeKind {
        match self {
            Mode::Eval => ModeKind::Eval,
            Mode::Train(_) => ModeKind::Train,
        }
    }
}

/// Checks that `layers` chain from `input_length × 1` to a softmax over
/// `n_classes`, returning every layer's output shape.
pub fn shape_chain(input_length: usize, n_classes: usize, layers: &[LayerSpec]) -> Result<Vec<Shape>, NnError> {
    let fail = |layer: usize, reason: String| Err(NnError::ShapeChain { layer, reason });
    if input_length == 0 {
        return fail(0, "input length is zero".into());
    }
    let mut shape = Shape::Seq { len: input_length, channels: 1 };
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, spec) in layers.iter().enumerate() {
        shape = match (*spec, shape) {
            (LayerSpec::Conv1d { filters, kernel, activation }, Shape::Seq { len, .. }) => {
                if filters == 0 || kernel == 0 {
                    return fail(i, "conv needs positive filters and kernel".into());
                }
                if activation == Activation::Softmax {
                    return fail(i, "softmax is only allowed on the final dense layer".into());
                }
                if len < kernel {
                    return fail(i, format!("kernel {kernel} longer than input length {len}"));
                }
                Shape::Seq { len: len - kernel + 1, channels: filters }
            }
            (LayerSpec::MaxPool1d { pool }, Shape::Seq { len, channels }) => {
                if pool == 0 || len / pool == 0 {
                    return fail(i, format!("pool {pool} over length {len} leaves nothing"));
                }
                Shape::Seq { len: len / pool, channels }
            }
            (LayerSpec::Dropout { rate }, s) => {
                if !(0.0..1.0).contains(&rate) {
                    return fail(i, format!("dropout rate {rate} outside [0, 1)"));
                }
                s
            }
            (LayerSpec::Flatten, Shape::Seq { len, channels }) => Shape::Flat(len * channels),
            (LayerSpec::Dense { units, activation }, Shape::Flat(_)) => {
                if units == 0 {
                    return fail(i, "dense needs at least one unit".into());
                }
                if activation == Activation::Softmax && i + 1 != layers.len() {
                    return fail(i, "softmax is only allowed on the final dense layer".into());
                }
                Shape::Flat(units)
            }
            (spec, s) => return fail(i, format!("{} cannot follow output shape {s}", spec.kind_name())),
        };
        shapes.push(shape);
    }
    match layers.last() {
        Some(LayerSpec::Dense { units, activation: Activation::Softmax }) if *units == n_classes => Ok(shapes),
        _ => fail(layers.len(), format!("architecture must end in a {n_classes}-unit softmax dense layer")),
    }
}

/// Builds a model with fan-in scaled uniform weights, `U(±sqrt(6 / fan_in))`,
/// and zero biases.
pub fn build_model<T: Scalar>(
    input_length: usize,
    n_classes: usize,
    layers: &[LayerSpec],
    seed: u64,
) -> Result<Model<T>, NnError> {
    let shapes = shape_chain(input_length, n_classes, layers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = Shape::Seq { len: input_length, channels: 1 };
    let mut params = Vec::with_capacity(layers.len());
    for (spec, &shape) in layers.iter().zip(&shapes) {
        let dims = match (*spec, prev) {
            (LayerSpec::Conv1d { filters, kernel, .. }, Shape::Seq { channels, .. }) => Some((kernel * channels, filters)),
            (LayerSpec::Dense { units, .. }, Shape::Flat(n)) => Some((n, units)),
            _ => None,
        };
        params.push(dims.map(|(fan_in, out)| {
            let limit = (6.0 / fan_in as f64).sqrt();
            Params {
                kernel: Array2::from_shape_simple_fn((fan_in, out), || {
                    T::from_f64(rng.gen_range(-limit..limit)).expect("finite weight")
                }),
                bias: Array1::zeros(out),
            }
        }));
        prev = shape;
    }
    Ok(Model { layers: layers.to_vec(), shapes, params, input_length, metadata: Map::new() })
}

/// Per-layer state recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
enum Trace<T> {
    /// Unrolled windows and the post-activation output.
    Conv { cols: Array2<T>, out: Array2<T> },
    Pool { argmax: Vec<u32>, in_width: usize },
    Dropout { mask: Option<Array2<T>> },
    Flatten,
    Dense { input: Array2<T>, out: Array2<T> },
}

/// Output of a recorded forward pass. Gradients can only be taken through
/// one of these, so `backward` always has the activations it needs.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    trace: Vec<Trace<T>>,
    probs: Array2<T>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn probabilities(&self) -> &Array2<T> {
        &self.probs
    }

    /// Exact gradients of the mean cross-entropy against `labels`, given the
    /// dropout masks sampled during the forward pass.
    pub fn backward(&self, model: &Model<T>, labels: &[usize]) -> Result<Gradients<T>, NnError> {
        let batch = self.probs.nrows();
        if labels.len() != batch {
            return Err(NnError::LengthMismatch { expected: batch, actual: labels.len() });
        }
        let n_classes = self.probs.ncols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(NnError::InvalidLabel { label: bad, n_classes });
        }
        let scale = T::from_usize(batch).expect("batch size").recip();
        // Softmax and cross-entropy together: dL/dz = (p - y) / B.
        let mut grad = self.probs.clone();
        for (mut row, &l) in grad.rows_mut().into_iter().zip(labels) {
            row[l] = row[l] - T::one();
        }
        grad.mapv_inplace(|g| g * scale);

        let mut grads: Gradients<T> = vec![None; model.layers.len()];
        for i in (0..model.layers.len()).rev() {
            let needs_input_grad = i > 0;
            grad = match (&self.trace[i], model.layers[i]) {
                (Trace::Conv { cols, out }, LayerSpec::Conv1d { kernel, .. }) => {
                    layers::relu_backward(&mut grad, out);
                    let p = model.params[i].as_ref().expect("conv params");
                    let filters = p.kernel.ncols();
                    let dz = grad.into_shape_with_order((cols.nrows(), filters)).expect("contiguous");
                    grads[i] = Some(Params { kernel: cols.t().dot(&dz), bias: layers::sum_rows(&dz) });
                    if !needs_input_grad {
                        break;
                    }
                    let Shape::Seq { len, channels } = model.input_shape(i) else { unreachable!() };
                    layers::col2im(&dz.dot(&p.kernel.t()), batch, len, channels, kernel)
                }
                (Trace::Pool { argmax, in_width }, _) => layers::maxpool_backward(&grad, argmax, *in_width),
                (Trace::Dropout { mask }, _) => match mask {
                    Some(m) => grad * m,
                    None => grad,
                },
                (Trace::Flatten, _) => grad,
                (Trace::Dense { input, out }, LayerSpec::Dense { activation, .. }) => {
                    if activation == Activation::Relu {
                        layers::relu_backward(&mut grad, out);
                    }
                    let p = model.params[i].as_ref().expect("dense params");
                    grads[i] = Some(Params { kernel: input.t().dot(&grad), bias: layers::sum_rows(&grad) });
                    if !needs_input_grad {
                        break;
                    }
                    grad.dot(&p.kernel.t())
                }
                _ => unreachable!("trace matches layer kinds"),
            };
        }
        Ok(grads)
    }
}

impl<T: Scalar> Model<T> {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn n_classes(&self) -> usize {
        self.shapes.last().map(Shape::leading).unwrap_or(0)
    }

    /// Output shape of every layer.
    pub fn output_shapes(&self) -> &[Shape] {
        &self.shapes
    }

    fn input_shape(&self, layer: usize) -> Shape {
        if layer == 0 {
            Shape::Seq { len: self.input_length, channels: 1 }
        } else {
            self.shapes[layer - 1]
        }
    }

    pub fn params(&self) -> &[Option<Params<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Params<T>>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Params::len).sum()
    }

    /// Parameter counts of the trainable layers, in order.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.params.iter().flatten().map(Params::len).collect()
    }

    pub fn summary(&self) -> Vec<LayerSummary> {
        let mut seen = std::collections::HashMap::new();
        self.layers
            .iter()
            .zip(&self.shapes)
            .zip(&self.params)
            .map(|((spec, &shape), p)| {
                let n = seen.entry(spec.kind_name()).or_insert(0usize);
                let name = if *n == 0 { spec.kind_name().to_string() } else { format!("{}_{}", spec.kind_name(), n) };
                *n += 1;
                LayerSummary { name, spec: *spec, output_shape: shape, params: p.as_ref().map_or(0, Params::len) }
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().flatten().all(|p| p.kernel.iter().chain(p.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_batch(&self, batch: &ArrayView2<T>) -> Result<(), NnError> {
        if batch.ncols() != self.input_length {
            return Err(NnError::LengthMismatch { expected: self.input_length, actual: batch.ncols() });
        }
        if batch.nrows() == 0 {
            return Err(NnError::EmptyBatch);
        }
        Ok(())
    }

    fn run(&self, batch: ArrayView2<T>, mut rng: Option<&mut dyn RngCore>, record: bool) -> (Array2<T>, Vec<Trace<T>>) {
        let n = batch.nrows();
        let mut x = batch.to_owned();
        let mut trace = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        for (i, spec) in self.layers.iter().enumerate() {
            let in_shape = self.input_shape(i);
            x = match (*spec, in_shape) {
                (LayerSpec::Conv1d { kernel, activation, .. }, Shape::Seq { channels, .. }) => {
                    let p = self.params[i].as_ref().expect("conv params");
                    let out_len = self.shapes[i].leading();
                    let cols = layers::im2col(x.view(), channels, kernel, out_len);
                    let mut z = cols.dot(&p.kernel);
                    layers::add_bias(&mut z, &p.bias);
                    if activation == Activation::Relu {
                        layers::relu_inplace(&mut z);
                    }
                    let width = z.len() / n;
                    let out = z.into_shape_with_order((n, width)).expect("contiguous");
                    if record {
                        trace.push(Trace::Conv { cols, out: out.clone() });
                    }
                    out
                }
                (LayerSpec::MaxPool1d { pool }, Shape::Seq { len, channels }) => {
                    let (out, argmax) = layers::maxpool_forward(x.view(), len, channels, pool);
                    if record {
                        trace.push(Trace::Pool { argmax, in_width: len * channels });
                    }
                    out
                }
                (LayerSpec::Dropout { rate }, _) => {
                    let mask = match rng.as_deref_mut() {
                        Some(r) if rate > 0.0 => Some(layers::dropout_mask::<T>(n, x.ncols(), rate, r)),
                        _ => None,
                    };
                    let out = match &mask {
                        Some(m) => x * m,
                        None => x,
                    };
                    if record {
                        trace.push(Trace::Dropout { mask });
                    }
                    out
                }
                (LayerSpec::Flatten, _) => {
                    if record {
                        trace.push(Trace::Flatten);
                    }
                    x
                }
                (LayerSpec::Dense { activation, .. }, _) => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let mut z = x.dot(&p.kernel);
                    layers::add_bias(&mut z, &p.bias);
                    match activation {
                        Activation::Relu => layers::relu_inplace(&mut z),
                        Activation::Softmax => layers::softmax_rows(&mut z),
                    }
                    if record {
                        trace.push(Trace::Dense { input: x, out: z.clone() });
                    }
                    z
                }
                _ => unreachable!("shape chain validated at build time"),
            };
        }
        (x, trace)
    }

    /// Class probabilities, one row per example. Dropout is applied only in
    /// training mode; evaluation is deterministic.
    pub fn forward(&self, batch: ArrayView2<T>, mode: Mode<'_>) -> Result<Array2<T>, NnError> {
        self.check_batch(&batch)?;
        let rng = match mode {
            Mode::Eval => None,
            Mode::Train(r) => Some(r),
        };
        Ok(self.run(batch, rng, false).0)
    }

    /// Training-mode forward pass that records what `backward` needs.
    pub fn forward_train(&self, batch: ArrayView2<T>, rng: &mut dyn RngCore) -> Result<ForwardPass<T>, NnError> {
        self.check_batch(&batch)?;
        let (probs, trace) = self.run(batch, Some(rng), true);
        Ok(ForwardPass { trace, probs })
    }

    /// Records an eval-mode pass (no dropout) so gradients are deterministic.
    pub fn forward_recorded(&self, batch: ArrayView2<T>) -> Result<ForwardPass<T>, NnError> {
        self.check_batch(&batch)?;
        let (probs, trace) = self.run(batch, None, true);
        Ok(ForwardPass { trace, probs })
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.params.iter().map(|p| p.as_ref().map(Params::zeros_like)).collect()
    }
}

/// Mean of `-ln(p_true + 1e-12)` over the batch, each term floored at zero.
pub fn cross_entropy<T: Scalar>(probs: ArrayView2<T>, labels: &[usize]) -> Result<f64, NnError> {
    if probs.nrows() != labels.len() {
        return Err(NnError::LengthMismatch { expected: probs.nrows(), actual: labels.len() });
    }
    if labels.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut total = 0.0;
    for (row, &l) in probs.axis_iter(Axis(0)).zip(labels) {
        let p = row.get(l).ok_or(NnError::InvalidLabel { label: l, n_classes: probs.ncols() })?;
        let term = -(p.to_f64().unwrap_or(f64::NAN) + 1e-12).ln();
        // p = 1 would give -ln(1 + 1e-12) < 0; NaN must pass through.
        total += if term < 0.0 { 0.0 } else { term };
    }
    Ok(total / labels.len() as f64)
}

/// Six-way class distribution with its argmax label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: EmotionLabel,
    pub probabilities: [f32; EmotionLabel::COUNT],
}

impl Prediction {
    /// Picks the most likely class; ties go to the lowest class index.
    pub fn from_probabilities(probabilities: [f32; EmotionLabel::COUNT]) -> Self {
        let mut best = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[best] {
                best = i;
            }
        }
        Prediction { label: EmotionLabel::from_index(best).expect("index below COUNT"), probabilities }
    }

    pub fn confidence(&self) -> f32 {
        self.probabilities[self.label.index()]
    }
}

impl Model<f32> {
    /// Eval-mode prediction for each row of `batch`.
    pub fn predict_batch(&self, batch: ArrayView2<f32>) -> Result<Vec<Prediction>, NnError> {
        if self.n_classes() != EmotionLabel::COUNT {
            return Err(NnError::ShapeChain {
                layer: self.layers.len(),
                reason: format!("prediction needs {} classes", EmotionLabel::COUNT),
            });
        }
        let probs = self.forward(batch, Mode::Eval)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut p = [0f32; EmotionLabel::COUNT];
                p.iter_mut().zip(row.iter()).for_each(|(d, &s)| *d = s);
                Prediction::from_probabilities(p)
            })
            .collect())
    }
}

pub fn predict(model: &Model<f32>, fv: &FeatureVector) -> Result<Prediction, NnError> {
    let batch = ArrayView2::from_shape((1, fv.len()), fv.values()).expect("row vector");
    Ok(model.predict_batch(batch)?.remove(0))
}

/// Rebuilds the weight-free parts of a model, used by the loader.
pub(crate) fn assemble<T: Scalar>(
    input_length: usize,
    layers: Vec<LayerSpec>,
    params: Vec<Option<Params<T>>>,
    metadata: Map<String, Value>,
) -> Result<Model<T>, NnError> {
    let n_classes = match layers.last() {
        Some(LayerSpec::Dense { units, .. }) => *units,
        _ => 0,
    };
    let shapes = shape_chain(input_length, n_classes, &layers)?;
    let template: Model<T> = build_model(input_length, n_classes, &layers, 0)?;
    for (i, (want, got)) in template.params.iter().zip(&params).enumerate() {
        let ok = match (want, got) {
            (Some(w), Some(g)) => w.kernel.dim() == g.kernel.dim() && w.bias.len() == g.bias.len(),
            (None, None) => true,
            _ => false,
        };
        if !ok {
            return Err(NnError::ShapeChain { layer: i, reason: "stored tensor shape does not match layer".into() });
        }
    }
    Ok(Model { layers, shapes, params, input_length, metadata })
}
