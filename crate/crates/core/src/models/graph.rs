use std::collections::HashMap;
use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Activation, ConvSpec, Padding};
use crate::tensor::{self, rng_stream, BinaryOp, Scalar, Shape, Tensor};

/// Where a layer takes one of its inputs from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Src {
    Input,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        groups: usize,
        activation: Option<Activation>,
    },
    /// Stride-2 transposed convolution; weight is `(in, out, k, k)`.
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Option<Activation>,
    },
    PixelShuffle {
        factor: usize,
    },
    GlobalAvgPool,
    MaxPool2,
    BilinearUp2,
    Add,
    /// Elementwise product; the second input may be a per-channel gate.
    Mul,
    Concat,
    Activation(Activation),
}

impl LayerKind {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, activation: Option<Activation>) -> Self {
        LayerKind::Conv {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation: 1,
            groups: 1,
            activation,
        }
    }

    /// Short operation name used in reports.
    pub fn op_name(&self) -> &'static str {
        match self {
            LayerKind::Conv { groups, .. } if *groups > 1 => "conv2d_grouped",
            LayerKind::Conv { .. } => "conv2d",
            LayerKind::ConvTranspose { .. } => "conv2d_transposed",
            LayerKind::PixelShuffle { .. } => "pixel_shuffle",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::MaxPool2 => "max_pool2",
            LayerKind::BilinearUp2 => "bilinear_up2",
            LayerKind::Add => "add",
            LayerKind::Mul => "mul",
            LayerKind::Concat => "concat",
            LayerKind::Activation(_) => "activation",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::ConvTranspose { .. })
    }

    /// Shapes of `(weight, bias)` for layers that carry parameters.
    pub fn param_shapes(&self) -> Option<(Shape, Shape)> {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                groups,
                ..
            } => Some((
                Shape::new(out_channels, in_channels / groups.max(1), kernel, kernel),
                Shape::new(1, out_channels, 1, 1),
            )),
            LayerKind::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                Shape::new(in_channels, out_channels, kernel, kernel),
                Shape::new(1, out_channels, 1, 1),
            )),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().map_or(0, |(w, b)| w.len() + b.len())
    }

    fn conv_spec(&self) -> ConvSpec {
        match *self {
            LayerKind::Conv {
                stride,
                dilation,
                groups,
                ..
            } => ConvSpec {
                stride: (stride, stride),
                dilation: (dilation, dilation),
                groups,
                padding: Padding::Same,
            },
            _ => ConvSpec::default().stride(2),
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match *self {
            LayerKind::Conv { activation, .. } | LayerKind::ConvTranspose { activation, .. } => activation,
            LayerKind::Activation(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<Src>,
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind, inputs: Vec<Src>) -> Self {
        Layer {
            name: name.into(),
            kind,
            inputs,
        }
    }
}

/// Channel count and whether the spatial extent has been pooled to 1x1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Port {
    channels: usize,
    pooled: bool,
}

/// A validated layer graph with its named parameters.
///
/// Layers are stored in execution order; each reads from the graph input or
/// from earlier layers, and the last layer is the output.
#[derive(Clone)]
pub struct ModelGraph {
    name: String,
    in_channels: usize,
    out_channels: usize,
    /// Input height and width must be multiples of this.
    spatial_multiple: usize,
    layers: Vec<Layer>,
    params: Vec<(String, Tensor)>,
    /// Per-layer `(weight, bias)` indices into `params`.
    param_slots: Vec<Option<(usize, usize)>>,
}

impl fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelGraph")
            .field("name", &self.name)
            .field("layers", &self.layers.len())
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

fn graph_err(layer: &Layer, msg: impl Into<String>) -> Error {
    Error::Graph {
        layer: layer.name.clone(),
        msg: msg.into(),
    }
}

fn validate(in_channels: usize, layers: &[Layer]) -> Result<Vec<Port>> {
    if layers.is_empty() {
        return Err(Error::invalid("graph has no layers"));
    }
    let mut ports: Vec<Port> = Vec::with_capacity(layers.len());
    let mut names = std::collections::HashSet::new();
    for (i, layer) in layers.iter().enumerate() {
        if !names.insert(layer.name.as_str()) {
            return Err(graph_err(layer, "duplicate layer name"));
        }
        let ins = layer
            .inputs
            .iter()
            .map(|s| match *s {
                Src::Input => Ok(Port {
                    channels: in_channels,
                    pooled: false,
                }),
                Src::Layer(j) if j < i => Ok(ports[j]),
                Src::Layer(j) => Err(graph_err(
                    layer,
                    format!("input refers to layer {j}, not an earlier one"),
                )),
            })
            .collect::<Result<Vec<Port>>>()?;
        let arity = |n: usize| -> Result<()> {
            if (n == 0 && ins.len() < 2) || (n > 0 && ins.len() != n) {
                Err(graph_err(layer, format!("wrong number of inputs ({})", ins.len())))
            } else {
                Ok(())
            }
        };
        let port = match layer.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                dilation,
                groups,
                ..
            } => {
                arity(1)?;
                if ins[0].channels != in_channels {
                    return Err(graph_err(
                        layer,
                        format!("declares {in_channels} input channels but receives {}", ins[0].channels),
                    ));
                }
                if kernel == 0 || stride == 0 || dilation == 0 || groups == 0 || out_channels == 0 {
                    return Err(graph_err(layer, "zero-sized hyperparameter"));
                }
                if in_channels % groups != 0 || out_channels % groups != 0 {
                    return Err(graph_err(layer, "channels not divisible by groups"));
                }
                Port {
                    channels: out_channels,
                    pooled: ins[0].pooled,
                }
            }
            LayerKind::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                arity(1)?;
                if ins[0].channels != in_channels {
                    return Err(graph_err(
                        layer,
                        format!("declares {in_channels} input channels but receives {}", ins[0].channels),
                    ));
                }
                if kernel == 0 || out_channels == 0 {
                    return Err(graph_err(layer, "zero-sized hyperparameter"));
                }
                Port {
                    channels: out_channels,
                    pooled: false,
                }
            }
            LayerKind::PixelShuffle { factor } => {
                arity(1)?;
                if factor == 0 || ins[0].channels % (factor * factor) != 0 {
                    return Err(graph_err(
                        layer,
                        format!("{} channels not divisible by {factor}²", ins[0].channels),
                    ));
                }
                Port {
                    channels: ins[0].channels / (factor * factor),
                    pooled: false,
                }
            }
            LayerKind::GlobalAvgPool => {
                arity(1)?;
                Port {
                    channels: ins[0].channels,
                    pooled: true,
                }
            }
            LayerKind::MaxPool2 | LayerKind::BilinearUp2 | LayerKind::Activation(_) => {
                arity(1)?;
                ins[0]
            }
            LayerKind::Add => {
                arity(2)?;
                if ins[0] != ins[1] {
                    return Err(graph_err(
                        layer,
                        format!("adds {} and {} channels", ins[0].channels, ins[1].channels),
                    ));
                }
                ins[0]
            }
            LayerKind::Mul => {
                arity(2)?;
                if ins[0].channels != ins[1].channels || (ins[0].pooled && !ins[1].pooled) {
                    return Err(graph_err(
                        layer,
                        format!("multiplies {} and {} channels", ins[0].channels, ins[1].channels),
                    ));
                }
                ins[0]
            }
            LayerKind::Concat => {
                arity(0)?;
                if ins.iter().any(|p| p.pooled != ins[0].pooled) {
                    return Err(graph_err(layer, "concatenates pooled and full-resolution maps"));
                }
                Port {
                    channels: ins.iter().map(|p| p.channels).sum(),
                    pooled: ins[0].pooled,
                }
            }
        };
        ports.push(port);
    }
    Ok(ports)
}

/// Kaiming-uniform fan-in initialisation: weights in `±sqrt(6 / fan_in)`,
/// biases zero. Parameter `k` draws from stream `k` of `seed`.
fn init_params(layers: &[Layer], seed: u64) -> Vec<(String, Tensor)> {
    let mut params = Vec::new();
    for layer in layers {
        let Some((ws, bs)) = layer.kind.param_shapes() else {
            continue;
        };
        let fan_in = match layer.kind {
            // each output pixel of a stride-2 transpose sees (k/2)² taps per input channel
            LayerKind::ConvTranspose {
                in_channels, kernel, ..
            } => in_channels * (kernel / 2).max(1).pow(2),
            _ => ws.c() * ws.h() * ws.w(),
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = rng_stream(seed, params.len() as u64);
        let data = (0..ws.len()).map(|_| rng.random_range(-bound..bound) as f32).collect();
        params.push((format!("{}.weight", layer.name), Tensor::from_parts(ws, data)));
        params.push((format!("{}.bias", layer.name), Tensor::zeros(bs)));
    }
    params
}

impl ModelGraph {
    /// Validates `layers` and initialises parameters from `seed`.
    pub fn new(name: impl Into<String>, in_channels: usize, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let ports = validate(in_channels, &layers)?;
        let last = *ports.last().expect("validated non-empty");
        if last.pooled {
            return Err(Error::invalid("graph output is spatially pooled"));
        }
        let params = init_params(&layers, seed);
        let mut slots = Vec::with_capacity(layers.len());
        let mut next = 0;
        for l in &layers {
            if l.kind.param_shapes().is_some() {
                slots.push(Some((next, next + 1)));
                next += 2;
            } else {
                slots.push(None);
            }
        }
        Ok(ModelGraph {
            name: name.into(),
            in_channels,
            out_channels: last.channels,
            spatial_multiple: 1,
            layers,
            params,
            param_slots: slots,
        })
    }

    pub(crate) fn with_spatial_multiple(mut self, m: usize) -> Self {
        self.spatial_multiple = m.max(1);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn spatial_multiple(&self) -> usize {
        self.spatial_multiple
    }
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Number of scalar parameters actually stored.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Parameter count derived from the layer hyperparameters alone.
    pub fn analytic_parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind.param_count()).sum()
    }

    /// Serialized parameter payload in bytes (32-bit floats).
    pub fn parameter_bytes(&self) -> usize {
        self.parameter_count() * std::mem::size_of::<f32>()
    }

    /// Replaces a parameter, checking its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .param_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                left: slot.shape(),
                right: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        if s.c() != self.in_channels {
            return Err(Error::shape(
                "forward",
                format!(
                    "model `{}` expects {} input channels, got {s}",
                    self.name, self.in_channels
                ),
            ));
        }
        let m = self.spatial_multiple;
        if s.h() == 0 || s.w() == 0 || s.h() % m != 0 || s.w() % m != 0 {
            return Err(Error::shape(
                "forward",
                format!("model `{}` needs spatial extents divisible by {m}, got {s}", self.name),
            ));
        }
        Ok(())
    }

    /// Raw network output (no clamping).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_timed(x, |_, _| {})
    }

    /// Output clamped to `[0, 1]`, as used for evaluation.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Forward pass that reports the wall time of every layer.
    pub fn forward_timed(&self, x: &Tensor, mut on_layer: impl FnMut(usize, Duration)) -> Result<Tensor> {
        self.check_input(x.shape())?;
        // Free each intermediate after its last consumer.
        let n = self.layers.len();
        let mut last_use = vec![0usize; n];
        for (i, l) in self.layers.iter().enumerate() {
            for s in &l.inputs {
                if let Src::Layer(j) = *s {
                    last_use[j] = i;
                }
            }
        }
        let mut values: Vec<Option<Tensor>> = vec![None; n];
        for (i, layer) in self.layers.iter().enumerate() {
            let start = Instant::now();
            let inputs: Vec<&Tensor> = layer
                .inputs
                .iter()
                .map(|s| match *s {
                    Src::Input => x,
                    Src::Layer(j) => values[j].as_ref().expect("live intermediate"),
                })
                .collect();
            let params = self.param_slots[i].map(|(w, b)| (&self.params[w].1, &self.params[b].1));
            let y = eval_layer(&layer.kind, &inputs, params)?;
            values[i] = Some(y);
            on_layer(i, start.elapsed());
            for s in &layer.inputs {
                if let Src::Layer(j) = *s {
                    if last_use[j] == i && j + 1 != n {
                        values[j] = None;
                    }
                }
            }
        }
        Ok(values.pop().flatten().expect("output"))
    }

    /// Places all parameters on `tape` as leaves, converted to `T`.
    pub fn params_on_tape<T: Scalar>(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| tape.leaf(t.cast(), requires_grad))
            .collect()
    }

    /// Records the forward pass on `tape`; `params` come from
    /// [`ModelGraph::params_on_tape`].
    pub fn forward_tape<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        let trace = self.forward_tape_trace(tape, x, params)?;
        Ok(trace.last().expect("non-empty graph").1)
    }

    /// Like [`ModelGraph::forward_tape`] but returns `(pre_activation, output)`
    /// for every layer; the two coincide for layers without an activation.
    pub fn forward_tape_trace<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Vec<(Var, Var)>> {
        self.check_input(tape.value(x).shape())?;
        let mut trace: Vec<(Var, Var)> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let ins: Vec<Var> = layer
                .inputs
                .iter()
                .map(|s| match *s {
                    Src::Input => x,
                    Src::Layer(j) => trace[j].1,
                })
                .collect();
            let slot = self.param_slots[i].map(|(w, b)| (params[w], params[b]));
            let y = match &layer.kind {
                LayerKind::Conv { .. } => {
                    let (w, b) = slot.expect("conv params");
                    tape.conv2d(ins[0], w, Some(b), layer.kind.conv_spec())?
                }
                LayerKind::ConvTranspose { .. } => {
                    let (w, b) = slot.expect("conv params");
                    tape.conv2d_transposed(ins[0], w, Some(b), layer.kind.conv_spec())?
                }
                LayerKind::PixelShuffle { factor } => tape.pixel_shuffle(ins[0], *factor)?,
                LayerKind::GlobalAvgPool => tape.global_avg_pool(ins[0])?,
                LayerKind::MaxPool2 => tape.max_pool2(ins[0])?,
                LayerKind::BilinearUp2 => tape.bilinear_up2(ins[0])?,
                LayerKind::Add => tape.add(ins[0], ins[1])?,
                LayerKind::Mul => tape.mul(ins[0], ins[1])?,
                LayerKind::Concat => tape.concat(&ins)?,
                LayerKind::Activation(_) => ins[0],
            };
            let out = match layer.kind.activation() {
                Some(a) => tape.activation(y, a)?,
                None => y,
            };
            trace.push((y, out));
        }
        Ok(trace)
    }

    /// Index lookup from parameter name to position in [`ModelGraph::params`].
    pub fn param_index(&self) -> HashMap<&str, usize> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.as_str(), i))
            .collect()
    }

    /// Human-readable layer table.
    pub fn summary(&self) -> String {
        let mut out = format!("model: {}\n", self.name);
        out.push_str(&format!(
            "{:>3}  {:<18} {:<18} {:<14} {:>10}\n",
            "#", "layer", "op", "inputs", "params"
        ));
        for (i, l) in self.layers.iter().enumerate() {
            let ins: Vec<String> = l
                .inputs
                .iter()
                .map(|s| match s {
                    Src::Input => "in".to_string(),
                    Src::Layer(j) => j.to_string(),
                })
                .collect();
            let op = match l.kind.activation() {
                Some(a) if l.kind.is_conv() => format!("{}+{}", l.kind.op_name(), a.name()),
                Some(a) => a.name().to_string(),
                None => l.kind.op_name().to_string(),
            };
            out.push_str(&format!(
                "{:>3}  {:<18} {:<18} {:<14} {:>10}\n",
                i,
                l.name,
                op,
                ins.join(","),
                l.kind.param_count()
            ));
        }
        out.push_str(&format!("parameters: {}\n", self.parameter_count()));
        out.push_str(&format!("size: {:.1} KB\n", self.parameter_bytes() as f64 / 1024.0));
        out
    }
}

fn eval_layer<T: Scalar>(
    kind: &LayerKind,
    inputs: &[&Tensor<T>],
    params: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<Tensor<T>> {
    let y = match kind {
        LayerKind::Conv { .. } => {
            let (w, b) = params.expect("conv params");
            nn::conv2d_with(inputs[0], w, Some(b), &kind.conv_spec())?
        }
        LayerKind::ConvTranspose { .. } => {
            let (w, b) = params.expect("conv params");
            nn::conv2d_transposed_with(inputs[0], w, Some(b), &kind.conv_spec())?
        }
        LayerKind::PixelShuffle { factor } => nn::pixel_shuffle(inputs[0], *factor)?,
        LayerKind::GlobalAvgPool => nn::global_avg_pool(inputs[0])?,
        LayerKind::MaxPool2 => nn::max_pool2(inputs[0])?.0,
        LayerKind::BilinearUp2 => nn::bilinear_up2(inputs[0])?,
        LayerKind::Add => tensor::elementwise(BinaryOp::Add, inputs[0], inputs[1])?,
        LayerKind::Mul => tensor::elementwise(BinaryOp::Mul, inputs[0], inputs[1])?,
        LayerKind::Concat => tensor::concat_channels(inputs)?,
        LayerKind::Activation(_) => inputs[0].clone(),
    };
    match kind.activation() {
        Some(a) => nn::activation(&y, a),
        None => Ok(y),
    }
}

/// Incrementally assembles a [`ModelGraph`].
pub struct GraphBuilder {
    layers: Vec<Layer>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: Vec<Src>) -> Src {
        self.layers.push(Layer::new(name, kind, inputs));
        Src::Layer(self.layers.len() - 1)
    }

    pub fn conv(
        &mut self,
        name: impl Into<String>,
        src: Src,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Option<Activation>,
    ) -> Src {
        self.push(
            name,
            LayerKind::conv(in_channels, out_channels, kernel, activation),
            vec![src],
        )
    }

    pub fn finish(self, name: impl Into<String>, in_channels: usize, seed: u64) -> Result<ModelGraph> {
        ModelGraph::new(name, in_channels, self.layers, seed)
    }
}
