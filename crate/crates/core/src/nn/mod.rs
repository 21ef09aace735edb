//! Minimal differentiable network stack.
//!
//! A model is split into a feature generator and a classification head that
//! ends in a softmax. Only fully connected layers, ReLU and dropout are
//! supported; gradients are computed by explicit reverse passes rather than a
//! recorded graph.

pub mod loss;
pub mod optim;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use loss::{cross_entropy, idd_loss, softmax};
pub use optim::{lr_schedule, HyperParams, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Linear { inputs: usize, outputs: usize },
    Relu,
    Dropout { rate: f64 },
}

/// Architecture descriptor. The head is implicitly terminated by a softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub generator: Vec<Layer>,
    pub head: Vec<Layer>,
}

impl LayerSpec {
    /// Generator FC(d,64)+ReLU, FC(64,32)+ReLU; head FC(32,K).
    pub fn reference(input_dim: usize, classes: usize) -> Self {
        Self::mlp(input_dim, &[64, 32], &[], classes)
    }

    /// Generator of ReLU-activated hidden layers followed by a head of
    /// ReLU-activated hidden layers and a final linear map to `classes`.
    pub fn mlp(input_dim: usize, generator_widths: &[usize], head_widths: &[usize], classes: usize) -> Self {
        let mut generator = Vec::new();
        let mut prev = input_dim;
        for &w in generator_widths {
            generator.push(Layer::Linear { inputs: prev, outputs: w });
            generator.push(Layer::Relu);
            prev = w;
        }
        let mut head = Vec::new();
        for &w in head_widths {
            head.push(Layer::Linear { inputs: prev, outputs: w });
            head.push(Layer::Relu);
            prev = w;
        }
        head.push(Layer::Linear {
            inputs: prev,
            outputs: classes,
        });
        LayerSpec {
            input_dim,
            generator,
            head,
        }
    }

    fn stack_out(layers: &[Layer], input: usize, name: &str) -> Result<usize> {
        let mut dim = input;
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                Layer::Linear { inputs, outputs } => {
                    if inputs != dim {
                        return Err(Error::dim(
                            format!("{name}[{i}]"),
                            format!("linear expects {inputs} inputs, previous layer yields {dim}"),
                        ));
                    }
                    if outputs == 0 {
                        return Err(Error::dim(format!("{name}[{i}]"), "linear layer with zero outputs"));
                    }
                    dim = outputs;
                }
                Layer::Relu => {}
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(Error::Config(format!("{name}[{i}]: dropout rate {rate} outside [0,1)")));
                    }
                }
            }
        }
        Ok(dim)
    }

    /// Width of the latent representation between generator and head.
    pub fn latent_dim(&self) -> Result<usize> {
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        Self::stack_out(&self.generator, self.input_dim, "generator")
    }

    pub fn num_classes(&self) -> Result<usize> {
        let latent = self.latent_dim()?;
        let k = Self::stack_out(&self.head, latent, "head")?;
        if !self.head.iter().any(|l| matches!(l, Layer::Linear { .. })) {
            return Err(Error::Config("head needs at least one linear layer".into()));
        }
        if k < 2 {
            return Err(Error::Config(format!("head must produce at least 2 classes, got {k}")));
        }
        Ok(k)
    }
}

/// Which parameter partitions an operation touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partitions {
    Generator,
    Head,
    Both,
}

impl Partitions {
    pub fn generator(self) -> bool {
        matches!(self, Partitions::Generator | Partitions::Both)
    }

    pub fn head(self) -> bool {
        matches!(self, Partitions::Head | Partitions::Both)
    }
}

/// Generator and head parameters: `[weight, bias]` per linear layer, weights
/// stored as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: LayerSpec,
    pub generator: Vec<Tensor>,
    pub head: Vec<Tensor>,
}

/// Same partition and shape structure as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub generator: Vec<Tensor>,
    pub head: Vec<Tensor>,
}

fn stack_shapes(layers: &[Layer]) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for layer in layers {
        if let Layer::Linear { inputs, outputs } = *layer {
            shapes.push(vec![outputs, inputs]);
            shapes.push(vec![outputs]);
        }
    }
    shapes
}

impl ModelParams {
    pub fn zeros(spec: &LayerSpec) -> Result<Self> {
        spec.num_classes()?;
        let mk = |layers: &[Layer]| stack_shapes(layers).iter().map(|s| Tensor::zeros(s)).collect();
        Ok(ModelParams {
            generator: mk(&spec.generator),
            head: mk(&spec.head),
            spec: spec.clone(),
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(spec: &LayerSpec, rng: &mut Rng) -> Result<Self> {
        let mut params = Self::zeros(spec)?;
        for t in params.generator.iter_mut().chain(params.head.iter_mut()) {
            if let [out, inp] = *t.shape() {
                let bound = (6.0 / (inp + out) as f64).sqrt();
                for v in t.values_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(params)
    }

    pub fn partition(&self, which: Partition) -> &[Tensor] {
        match which {
            Partition::Generator => &self.generator,
            Partition::Head => &self.head,
        }
    }

    pub fn num_params(&self) -> usize {
        self.generator.iter().chain(&self.head).map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.generator.iter().chain(&self.head).all(Tensor::is_finite)
    }

    pub fn generator_hash(&self) -> u64 {
        partition_hash(&self.generator)
    }

    pub fn head_hash(&self) -> u64 {
        partition_hash(&self.head)
    }

    /// Bitwise equality, distinguishing signed zeros.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.spec == other.spec && partition_bit_eq(&self.generator, &other.generator) && partition_bit_eq(&self.head, &other.head)
    }

    /// All parameters flattened generator-first.
    pub fn flat(&self) -> Vec<f64> {
        self.generator
            .iter()
            .chain(&self.head)
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.generator.iter_mut().chain(self.head.iter_mut()) {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

fn check_congruent(name: &str, tensors: &[Tensor], layers: &[Layer]) -> Result<()> {
    let shapes = stack_shapes(layers);
    if shapes.len() != tensors.len() {
        return Err(Error::dim(
            name,
            format!("expected {} tensors, got {}", shapes.len(), tensors.len()),
        ));
    }
    for (i, (s, t)) in shapes.iter().zip(tensors).enumerate() {
        if s.as_slice() != t.shape() {
            return Err(Error::dim(
                format!("{name}[{i}]"),
                format!("expected shape {s:?}, got {:?}", t.shape()),
            ));
        }
    }
    Ok(())
}

impl ModelParams {
    /// Checks every tensor against the shapes implied by `spec`.
    pub fn validate(&self) -> Result<()> {
        self.spec.num_classes()?;
        check_congruent("generator", &self.generator, &self.spec.generator)?;
        check_congruent("head", &self.head, &self.spec.head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Generator,
    Head,
}

pub fn partition_hash(tensors: &[Tensor]) -> u64 {
    tensors.iter().fold(0u64, |acc, t| acc.rotate_left(7) ^ t.bit_hash())
}

pub fn partition_bit_eq(a: &[Tensor], b: &[Tensor]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.shape() == y.shape() && x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            generator: params.generator.iter().map(Tensor::zeros_like).collect(),
            head: params.head.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.generator
            .iter()
            .chain(&self.head)
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.generator.iter().chain(&self.head).all(Tensor::is_finite)
    }
}

/// Forward mode. Dropout draws its masks from the rng in training mode and is
/// the identity in evaluation mode.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

/// Saved activations of one stack, consumed by the reverse pass.
struct StackTrace {
    /// Input to each layer.
    inputs: Vec<Tensor>,
    /// Scaled keep-masks of dropout layers, indexed like `inputs`.
    masks: Vec<Option<Vec<f64>>>,
}

fn stack_forward(layers: &[Layer], params: &[Tensor], x: Tensor, mode: &mut Mode<'_>, name: &str) -> Result<(Tensor, StackTrace)> {
    let mut trace = StackTrace {
        inputs: Vec::with_capacity(layers.len()),
        masks: Vec::with_capacity(layers.len()),
    };
    let mut h = x;
    let mut p = 0;
    for (i, layer) in layers.iter().enumerate() {
        let next = match *layer {
            Layer::Linear { inputs, outputs } => {
                if h.shape().len() != 2 || h.cols() != inputs {
                    return Err(Error::dim(
                        format!("{name}[{i}]"),
                        format!("linear({inputs}->{outputs}) got input of shape {:?}", h.shape()),
                    ));
                }
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                let mut y = Tensor::matmul(&h, false, w, true);
                y.add_row(b.values());
                trace.masks.push(None);
                y
            }
            Layer::Relu => {
                let mut y = h.clone();
                for v in y.values_mut() {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                }
                trace.masks.push(None);
                y
            }
            Layer::Dropout { rate } => match mode {
                Mode::Train(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..h.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
                    let mut y = h.clone();
                    for (v, m) in y.values_mut().iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    trace.masks.push(Some(mask));
                    y
                }
                _ => {
                    trace.masks.push(None);
                    h.clone()
                }
            },
        };
        trace.inputs.push(h);
        h = next;
    }
    Ok((h, trace))
}

/// Reverse pass through one stack. Returns parameter gradients (when asked)
/// and the gradient with respect to the stack input (when asked).
fn stack_backward(
    layers: &[Layer],
    params: &[Tensor],
    trace: &StackTrace,
    grad_out: Tensor,
    want_params: bool,
    want_input: bool,
) -> (Option<Vec<Tensor>>, Option<Tensor>) {
    let mut grads: Vec<Tensor> = if want_params {
        params.iter().map(Tensor::zeros_like).collect()
    } else {
        Vec::new()
    };
    let mut p = params.len();
    let mut g = grad_out;
    // Lowest layer that still needs a gradient flowing into it.
    let stop = if want_input {
        0
    } else if want_params {
        layers
            .iter()
            .position(|l| matches!(l, Layer::Linear { .. }))
            .unwrap_or(layers.len())
    } else {
        layers.len()
    };
    for i in (stop..layers.len()).rev() {
        let input = &trace.inputs[i];
        match layers[i] {
            Layer::Linear { .. } => {
                p -= 2;
                if want_params {
                    grads[p] = Tensor::matmul(&g, true, input, false);
                    let db = g.sum_rows();
                    grads[p + 1].values_mut().copy_from_slice(&db);
                }
                if i > stop || want_input {
                    g = Tensor::matmul(&g, false, &params[p], false);
                }
            }
            Layer::Relu => {
                for (gv, &x) in g.values_mut().iter_mut().zip(input.values()) {
                    if x <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            Layer::Dropout { .. } => {
                if let Some(mask) = &trace.masks[i] {
                    for (gv, m) in g.values_mut().iter_mut().zip(mask) {
                        *gv *= m;
                    }
                }
            }
        }
    }
    (want_params.then_some(grads), want_input.then_some(g))
}

fn check_input(spec: &LayerSpec, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != spec.input_dim {
        return Err(Error::dim(
            "input",
            format!("expected batch x {} features, got shape {:?}", spec.input_dim, x.shape()),
        ));
    }
    Ok(())
}

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub latent: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

/// Runs generator, head and the terminal softmax on a batch.
pub fn forward(params: &ModelParams, x: &Tensor, mut mode: Mode<'_>) -> Result<Forward> {
    check_input(&params.spec, x)?;
    params.validate()?;
    let (latent, _) = stack_forward(&params.spec.generator, &params.generator, x.clone(), &mut mode, "generator")?;
    let (logits, _) = stack_forward(&params.spec.head, &params.head, latent.clone(), &mut mode, "head")?;
    let probs = softmax(&logits);
    Ok(Forward { latent, logits, probs })
}

/// Class probabilities of a head applied to a precomputed latent batch.
pub fn head_probs(spec: &LayerSpec, head: &[Tensor], latent: &Tensor) -> Result<Tensor> {
    let (logits, _) = stack_forward(&spec.head, head, latent.clone(), &mut Mode::Eval, "head")?;
    Ok(softmax(&logits))
}

pub fn generator_forward(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    check_input(&params.spec, x)?;
    Ok(stack_forward(&params.spec.generator, &params.generator, x.clone(), &mut Mode::Eval, "generator")?.0)
}

/// Loss whose gradient [`backward`] computes.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Mean cross-entropy of the model's own head against `labels`.
    CrossEntropy { labels: &'a [usize] },
    /// Inter-domain distance between the model's head and `other_head`, both
    /// applied to the shared generator output. `other_head` never receives
    /// gradients.
    Idd { other_head: &'a [Tensor] },
}

#[derive(Debug, Clone, Copy)]
pub struct GradTarget<'a> {
    pub objective: Objective<'a>,
    pub partitions: Partitions,
}

/// Loss value and gradients for a batch. Partitions excluded by
/// `target.partitions` are returned as exact zeros.
pub fn backward(params: &ModelParams, x: &Tensor, target: GradTarget<'_>, mut mode: Mode<'_>) -> Result<(f64, Gradients)> {
    check_input(&params.spec, x)?;
    params.validate()?;
    let spec = &params.spec;
    let batch = x.rows();
    let want_g = target.partitions.generator();
    let want_f = target.partitions.head();

    let (latent, g_trace) = stack_forward(&spec.generator, &params.generator, x.clone(), &mut mode, "generator")?;
    let (logits, f_trace) = stack_forward(&spec.head, &params.head, latent.clone(), &mut mode, "head")?;
    let probs = softmax(&logits);

    let (loss, d_logits, d_latent_other) = match target.objective {
        Objective::CrossEntropy { labels } => {
            let loss = loss::cross_entropy_from_logits(&logits, labels)?;
            let mut d = probs.clone();
            let k = d.cols();
            let scale = 1.0 / batch as f64;
            for (i, &y) in labels.iter().enumerate() {
                d.values_mut()[i * k + y] -= 1.0;
            }
            for v in d.values_mut() {
                *v *= scale;
            }
            (loss, d, None)
        }
        Objective::Idd { other_head } => {
            check_congruent("other_head", other_head, &spec.head)?;
            let (logits2, f2_trace) = stack_forward(&spec.head, other_head, latent.clone(), &mut mode, "other_head")?;
            let probs2 = softmax(&logits2);
            let loss = idd_loss(&probs, &probs2)?;
            let (g1, g2) = loss::idd_prob_grads(&probs, &probs2);
            let d1 = loss::softmax_backward(&probs, &g1);
            let d_other = if want_g {
                let d2 = loss::softmax_backward(&probs2, &g2);
                stack_backward(&spec.head, other_head, &f2_trace, d2, false, true).1
            } else {
                None
            };
            (loss, d1, d_other)
        }
    };

    let (head_grads, d_latent) = stack_backward(&spec.head, &params.head, &f_trace, d_logits, want_f, want_g);
    let mut grads = Gradients::zeros_like(params);
    if let Some(hg) = head_grads {
        grads.head = hg;
    }
    if let Some(mut dl) = d_latent {
        if let Some(other) = d_latent_other {
            for (a, b) in dl.values_mut().iter_mut().zip(other.values()) {
                *a += b;
            }
        }
        if let (Some(gg), _) = stack_backward(&spec.generator, &params.generator, &g_trace, dl, true, false) {
            grads.generator = gg;
        }
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny_spec() -> LayerSpec {
        LayerSpec::mlp(2, &[3], &[], 2)
    }

    #[test]
    fn zero_model_gives_uniform_probs() {
        let spec = LayerSpec {
            input_dim: 4,
            generator: vec![],
            head: vec![Layer::Linear { inputs: 4, outputs: 10 }],
        };
        let params = ModelParams::zeros(&spec).unwrap();
        let x = Tensor::new(vec![3, 4], vec![0.3, -1.0, 2.0, 5.0, 1.0, 1.0, 1.0, 1.0, -7.0, 0.0, 0.5, 9.0]).unwrap();
        let out = forward(&params, &x, Mode::Eval).unwrap();
        for r in 0..3 {
            let row = out.probs.row(r);
            assert!(row.iter().all(|&p| (p - 0.1).abs() < 1e-15));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let params = ModelParams::zeros(&tiny_spec()).unwrap();
        let x = Tensor::zeros(&[2, 5]);
        let err = forward(&params, &x, Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::Dimension { ref layer, .. } if layer == "input"), "{err}");

        let mut bad = LayerSpec::reference(2, 3);
        bad.head[0] = Layer::Linear { inputs: 31, outputs: 3 };
        let err = ModelParams::zeros(&bad).unwrap_err();
        assert!(matches!(err, Error::Dimension { ref layer, .. } if layer == "head[0]"), "{err}");
    }

    #[test]
    fn reference_architecture_shapes() {
        let spec = LayerSpec::reference(2, 3);
        assert_eq!(spec.latent_dim().unwrap(), 32);
        assert_eq!(spec.num_classes().unwrap(), 3);
        let p = ModelParams::init(&spec, &mut seeded(1)).unwrap();
        assert_eq!(p.num_params(), 2 * 64 + 64 + 64 * 32 + 32 + 32 * 3 + 3);
    }

    #[test]
    fn init_bounds() {
        let spec = LayerSpec::reference(2, 3);
        let p = ModelParams::init(&spec, &mut seeded(9)).unwrap();
        let bound = (6.0f64 / 66.0).sqrt();
        assert!(p.generator[0].values().iter().all(|v| v.abs() < bound));
        assert!(p.generator[1].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn excluded_partitions_are_zero() {
        let spec = tiny_spec();
        let params = ModelParams::init(&spec, &mut seeded(3)).unwrap();
        let x = Tensor::new(vec![2, 2], vec![0.5, -0.2, 1.0, 0.3]).unwrap();
        let labels = [0, 1];
        let target = GradTarget {
            objective: Objective::CrossEntropy { labels: &labels },
            partitions: Partitions::Generator,
        };
        let (_, g) = backward(&params, &x, target, Mode::Eval).unwrap();
        assert!(g.head.iter().all(|t| t.values().iter().all(|v| v.to_bits() == 0)));
        assert!(g.generator.iter().any(|t| t.values().iter().any(|&v| v != 0.0)));

        let target = GradTarget {
            objective: Objective::CrossEntropy { labels: &labels },
            partitions: Partitions::Head,
        };
        let (_, g) = backward(&params, &x, target, Mode::Eval).unwrap();
        assert!(g.generator.iter().all(|t| t.values().iter().all(|v| v.to_bits() == 0)));
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let spec = LayerSpec {
            input_dim: 3,
            generator: vec![Layer::Dropout { rate: 0.5 }],
            head: vec![Layer::Linear { inputs: 3, outputs: 2 }],
        };
        let params = ModelParams::init(&spec, &mut seeded(4)).unwrap();
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let out = forward(&params, &x, Mode::Eval).unwrap();
        assert_eq!(out.latent, x);
        let mut rng = seeded(5);
        let out = forward(&params, &x, Mode::Train(&mut rng)).unwrap();
        assert!(out.latent.values().iter().zip(x.values()).all(|(&l, &v)| l == 0.0 || l == 2.0 * v));
    }
}
