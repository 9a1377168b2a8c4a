//! U-Net backbone and the up-scaling extension as an immutable layer graph.
//!
//! A [`ModelGraph`] is a topologically ordered list of layers. Node 0 is the
//! network input and node `k + 1` is the output of layer `k`. The graph also
//! owns its named parameters and records which nodes are prediction taps:
//! tap 0 is the backbone prediction at input resolution and tap `i` is the
//! output of up-scaling stage `i − 1`, at `2^i` times the input resolution.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Width of the first encoder level; each deeper level doubles it.
    pub base_channels: usize,
    /// Number of down-samplings.
    pub depth: usize,
    pub num_classes: usize,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("backbone depth must be at least 1".into()));
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "backbone channel counts must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            in_channels: 1,
            base_channels: 64,
            depth: 4,
            num_classes: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpscaleStackConfig {
    /// Number of ×2 up-scaling stages `m`.
    pub num_stages: usize,
    pub num_classes: usize,
    pub use_skips: bool,
    /// Stages that never take a skip input (0-based).
    pub skip_exempt_stages: BTreeSet<usize>,
    /// Put a ReLU between each stage's transposed conv and its conv.
    ///
    /// Off by default: with `N_c` channels the stage carries raw logits, and a
    /// ReLU there throws away one sign of the logit at every sub-pixel. For
    /// `N_c = 1` that stalls training completely.
    pub stage_relu: bool,
}

impl UpscaleStackConfig {
    pub fn new(num_stages: usize, num_classes: usize) -> Self {
        UpscaleStackConfig {
            num_stages,
            num_classes,
            use_skips: false,
            skip_exempt_stages: BTreeSet::from([1]),
            stage_relu: false,
        }
    }

    pub fn with_skips(mut self) -> Self {
        self.use_skips = true;
        self
    }

    /// Whether stage `i` receives a stretched skip input.
    ///
    /// Stage `i ≥ 2` takes tap `i − 2` (for `i = 2` that is the backbone
    /// prediction, for `i = 3` the output of stage 0, and so on) stretched by
    /// two transposed convolutions onto its own input resolution.
    pub fn stage_has_skip(&self, stage: usize) -> bool {
        self.use_skips && stage >= SKIP_SPAN && !self.skip_exempt_stages.contains(&stage)
    }
}

/// Number of ×2 stretching steps a skip chain spans.
pub const SKIP_SPAN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Concat,
}

impl LayerKind {
    /// Trainable scalars: `(K_h·K_w·c_in + 1)·c_out` for both convolution kinds.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Conv2d {
                c_in, c_out, kernel, ..
            }
            | LayerKind::ConvTranspose2d {
                c_in, c_out, kernel, ..
            } => (kernel * kernel * c_in + 1) * c_out,
            _ => 0,
        }
    }
}

/// Which part of the model a layer belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Backbone,
    Upscale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const INPUT: NodeId = NodeId(0);

    fn of_layer(layer: usize) -> NodeId {
        NodeId(layer + 1)
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
    pub section: Section,
    /// Indices into the graph's parameter list (weight, bias).
    params: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ModelGraph<T> {
    in_channels: usize,
    num_classes: usize,
    divisor: usize,
    layers: Vec<Layer>,
    params: Vec<Parameter<T>>,
    taps: Vec<NodeId>,
}

/// Incremental graph construction with seeded Kaiming-uniform init.
struct Builder<'g, T> {
    graph: &'g mut ModelGraph<T>,
    rng: ChaCha8Rng,
    section: Section,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, kind: LayerKind, inputs: Vec<NodeId>) -> NodeId {
        let params = match kind {
            LayerKind::Conv2d {
                c_in, c_out, kernel, ..
            } => Some(self.init_params(&name, vec![c_out, c_in, kernel, kernel], c_out, c_in * kernel * kernel)),
            LayerKind::ConvTranspose2d {
                c_in, c_out, kernel, ..
            } => Some(self.init_params(&name, vec![c_in, c_out, kernel, kernel], c_out, c_in * kernel * kernel)),
            _ => None,
        };
        self.graph.layers.push(Layer {
            name,
            kind,
            inputs,
            section: self.section,
            params,
        });
        NodeId::of_layer(self.graph.layers.len() - 1)
    }

    fn init_params(&mut self, name: &str, shape: Vec<usize>, c_out: usize, fan_in: usize) -> (usize, usize) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<T> = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.random_range(-bound..bound)))
            .collect();
        let weight = Parameter {
            name: format!("{name}.weight"),
            tensor: Tensor::new(shape, values).expect("shape matches count"),
        };
        let bias = Parameter {
            name: format!("{name}.bias"),
            tensor: Tensor::zeros(&[c_out]),
        };
        let params = &mut self.graph.params;
        params.push(weight);
        params.push(bias);
        (params.len() - 2, params.len() - 1)
    }

    fn conv(&mut self, name: String, input: NodeId, c_in: usize, c_out: usize, kernel: usize) -> NodeId {
        let kind = LayerKind::Conv2d {
            c_in,
            c_out,
            kernel,
            stride: 1,
            padding: kernel / 2,
        };
        self.add(name, kind, vec![input])
    }

    fn tconv(&mut self, name: String, input: NodeId, c_in: usize, c_out: usize) -> NodeId {
        let kind = LayerKind::ConvTranspose2d {
            c_in,
            c_out,
            kernel: 2,
            stride: 2,
        };
        self.add(name, kind, vec![input])
    }

    fn relu(&mut self, name: String, input: NodeId) -> NodeId {
        self.add(name, LayerKind::Relu, vec![input])
    }

    /// conv3×3 → relu → conv3×3 → relu
    fn double_conv(&mut self, prefix: &str, input: NodeId, c_in: usize, c_out: usize) -> NodeId {
        let a = self.conv(format!("{prefix}.conv1"), input, c_in, c_out, 3);
        let a = self.relu(format!("{prefix}.relu1"), a);
        let b = self.conv(format!("{prefix}.conv2"), a, c_out, c_out, 3);
        self.relu(format!("{prefix}.relu2"), b)
    }
}

/// Builds a classic U-Net: `depth` encoder levels of two 3×3 convs with relu
/// separated by 2×2 max pooling, a bottleneck, a symmetric decoder using
/// 2×2-stride-2 transposed convs and skip concatenation, and a final 1×1
/// conv producing `num_classes` logit channels at input resolution.
pub fn build_unet<T: Scalar>(cfg: &BackboneConfig, seed: u64) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    let mut graph = ModelGraph {
        in_channels: cfg.in_channels,
        num_classes: cfg.num_classes,
        divisor: 1 << cfg.depth,
        layers: Vec::new(),
        params: Vec::new(),
        taps: Vec::new(),
    };
    let mut b = Builder {
        graph: &mut graph,
        rng: ChaCha8Rng::seed_from_u64(seed),
        section: Section::Backbone,
    };

    let mut skips = Vec::with_capacity(cfg.depth);
    let mut x = NodeId::INPUT;
    let mut c_prev = cfg.in_channels;
    for level in 0..cfg.depth {
        let c = cfg.level_channels(level);
        x = b.double_conv(&format!("enc.{level}"), x, c_prev, c);
        skips.push(x);
        x = b.add(
            format!("enc.{level}.pool"),
            LayerKind::MaxPool { window: 2, stride: 2 },
            vec![x],
        );
        c_prev = c;
    }
    let c_bottom = cfg.level_channels(cfg.depth);
    x = b.double_conv("bottleneck", x, c_prev, c_bottom);
    c_prev = c_bottom;
    for level in (0..cfg.depth).rev() {
        let c = cfg.level_channels(level);
        let up = b.tconv(format!("dec.{level}.up"), x, c_prev, c);
        let cat = b.add(format!("dec.{level}.cat"), LayerKind::Concat, vec![skips[level], up]);
        x = b.double_conv(&format!("dec.{level}"), cat, 2 * c, c);
        c_prev = c;
    }
    let head = b.conv("head".into(), x, c_prev, cfg.num_classes, 1);
    graph.taps.push(head);
    Ok(graph)
}

/// Appends `m` up-scaling stages to a copy of `base`.
///
/// Stage `i` is ConvTranspose2d(2×2, stride 2, N_c→N_c) →
/// Conv2d(3×3, pad 1, N_c→N_c); its output is tap `i + 1`. With skips
/// enabled, eligible stages (see [`UpscaleStackConfig::stage_has_skip`])
/// concatenate a stretched earlier tap to their input, so their transposed
/// conv reads `2·N_c` channels. The stretch chain is two transposed convs
/// and one 3×3 conv. With `stage_relu`, every transposed conv in the stack
/// is followed by a relu. The base graph's layers and
/// parameter values are copied unchanged; new parameters draw from `seed`.
pub fn build_upscale_stack<T: Scalar>(
    base: &ModelGraph<T>,
    cfg: &UpscaleStackConfig,
    seed: u64,
) -> Result<ModelGraph<T>> {
    let nc = cfg.num_classes;
    if base.num_classes != nc {
        return Err(Error::Config(format!(
            "up-scale stack expects {nc} classes but the base predicts {}",
            base.num_classes
        )));
    }
    let mut graph = base.clone();
    let mut b = Builder {
        graph: &mut graph,
        rng: ChaCha8Rng::seed_from_u64(seed),
        section: Section::Upscale,
    };
    let mut taps = base.taps.clone();
    for stage in 0..cfg.num_stages {
        let prev = *taps.last().expect("base has a tap");
        let (input, c_in) = if cfg.stage_has_skip(stage) {
            let mut s = taps[stage - SKIP_SPAN];
            for j in 0..SKIP_SPAN {
                s = b.tconv(format!("skip.{stage}.tconv{j}"), s, nc, nc);
                if cfg.stage_relu {
                    s = b.relu(format!("skip.{stage}.relu{j}"), s);
                }
            }
            let s = b.conv(format!("skip.{stage}.conv"), s, nc, nc, 3);
            let cat = b.add(format!("up.{stage}.cat"), LayerKind::Concat, vec![prev, s]);
            (cat, 2 * nc)
        } else {
            (prev, nc)
        };
        let t = b.tconv(format!("up.{stage}.tconv"), input, c_in, nc);
        let t = if cfg.stage_relu {
            b.relu(format!("up.{stage}.relu"), t)
        } else {
            t
        };
        let out = b.conv(format!("up.{stage}.conv"), t, nc, nc, 3);
        taps.push(out);
    }
    graph.taps = taps;
    Ok(graph)
}

/// Sum of parameter scalars by enumeration of the stored tensors.
pub fn count_parameters<T: Scalar>(graph: &ModelGraph<T>) -> usize {
    graph.params.iter().map(|p| p.tensor.numel()).sum()
}

/// Closed-form parameter count of a skip-free stack: `m·(13·N_c² + 2·N_c)`.
pub fn analytic_upscale_params(num_classes: usize, num_stages: usize) -> usize {
    num_stages * (13 * num_classes * num_classes + 2 * num_classes)
}

impl<T: Scalar> ModelGraph<T> {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn taps(&self) -> &[NodeId] {
        &self.taps
    }

    /// Number of up-scaling stages `m`.
    pub fn num_stages(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Input extents must be divisible by this.
    pub fn input_divisor(&self) -> usize {
        self.divisor
    }

    /// Layer parameter tensors as `(weight, bias)` indices.
    pub fn layer_params(&self, layer: usize) -> Option<(&Parameter<T>, &Parameter<T>)> {
        self.layers[layer]
            .params
            .map(|(w, b)| (&self.params[w], &self.params[b]))
    }

    /// Sum of `(K_h·K_w·c_in + 1)·c_out` over the layers, from layer kinds alone.
    pub fn analytic_param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind.param_count()).sum()
    }

    pub fn param_count_in(&self, section: Section) -> usize {
        self.layers
            .iter()
            .filter(|l| l.section == section)
            .filter_map(|l| l.params)
            .map(|(w, b)| self.params[w].tensor.numel() + self.params[b].tensor.numel())
            .sum()
    }

    /// Replaces parameter values; names and shapes must match exactly.
    pub fn load_params(&mut self, values: Vec<Parameter<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (cur, new) in self.params.iter().zip(&values) {
            if cur.name != new.name || cur.tensor.shape() != new.tensor.shape() {
                return Err(Error::Usage(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    new.name,
                    new.tensor.shape(),
                    cur.name,
                    cur.tensor.shape()
                )));
            }
        }
        self.params = values;
        Ok(())
    }

    fn check_input_shape(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let [n, c, h, w] = shape[..] else {
            return Err(shape_err!("expected N×C×H×W input, got {shape:?}"));
        };
        if c != self.in_channels {
            return Err(shape_err!(
                "model expects {} input channels, got {c}",
                self.in_channels
            ));
        }
        if h % self.divisor != 0 || w % self.divisor != 0 {
            return Err(shape_err!(
                "input extents {h}×{w} are not divisible by {}",
                self.divisor
            ));
        }
        Ok((n, h, w))
    }

    /// Output shape of every node (index 0 is the input) for a given input shape.
    pub fn node_shapes(&self, input_shape: &[usize]) -> Result<Vec<[usize; 4]>> {
        let (n, h, w) = self.check_input_shape(input_shape)?;
        let mut shapes = vec![[n, self.in_channels, h, w]];
        for layer in &self.layers {
            let [n, c, h, w] = shapes[layer.inputs[0].0];
            let out = match layer.kind {
                LayerKind::Conv2d {
                    c_in,
                    c_out,
                    kernel,
                    stride,
                    padding,
                } => {
                    if c != c_in {
                        return Err(shape_err!("{}: expected {c_in} channels, got {c}", layer.name));
                    }
                    [
                        n,
                        c_out,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ]
                }
                LayerKind::ConvTranspose2d {
                    c_in,
                    c_out,
                    kernel,
                    stride,
                } => {
                    if c != c_in {
                        return Err(shape_err!("{}: expected {c_in} channels, got {c}", layer.name));
                    }
                    [n, c_out, (h - 1) * stride + kernel, (w - 1) * stride + kernel]
                }
                LayerKind::Relu => [n, c, h, w],
                LayerKind::MaxPool { window, stride } => {
                    [n, c, (h - window) / stride + 1, (w - window) / stride + 1]
                }
                LayerKind::Concat => {
                    let mut total = 0;
                    for id in &layer.inputs {
                        let s = shapes[id.0];
                        if (s[0], s[2], s[3]) != (n, h, w) {
                            return Err(shape_err!("{}: concat extent mismatch", layer.name));
                        }
                        total += s[1];
                    }
                    [n, total, h, w]
                }
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    /// Registers every parameter on `tape` as a trainable leaf, in order.
    pub fn bind_params(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.tensor.clone())).collect()
    }

    /// Records a forward pass on `tape` and returns the tap nodes `Ŷ_0..Ŷ_m`.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, input: Var, params: &[Var]) -> Result<Vec<Var>> {
        self.check_input_shape(tape.value(input).shape())?;
        let mut nodes = Vec::with_capacity(self.layers.len() + 1);
        nodes.push(input);
        for layer in &self.layers {
            let x = nodes[layer.inputs[0].0];
            let out = match layer.kind {
                LayerKind::Conv2d { stride, padding, .. } => {
                    let (w, b) = layer.params.expect("conv has params");
                    tape.conv2d(x, params[w], params[b], stride, padding)?
                }
                LayerKind::ConvTranspose2d { stride, .. } => {
                    let (w, b) = layer.params.expect("conv has params");
                    tape.conv_transpose2d(x, params[w], params[b], stride)?
                }
                LayerKind::Relu => tape.relu(x)?,
                LayerKind::MaxPool { window, stride } => tape.maxpool2d(x, window, stride)?,
                LayerKind::Concat => {
                    let ins: Vec<Var> = layer.inputs.iter().map(|id| nodes[id.0]).collect();
                    tape.concat_channels(&ins)?
                }
            };
            nodes.push(out);
        }
        Ok(self.taps.iter().map(|id| nodes[id.0]).collect())
    }

    /// Inference forward returning every tap `Ŷ_0..Ŷ_m` as logits.
    pub fn forward_all_taps(&self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(p.tensor.clone()))
            .collect();
        let x = tape.constant(input.clone());
        let taps = self.forward_on_tape(&mut tape, x, &params)?;
        Ok(taps.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Full-resolution prediction `Ŷ_m`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_all_taps(input)?.pop().expect("at least one tap"))
    }
}
