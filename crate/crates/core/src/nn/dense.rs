use std::fmt;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Self::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Self::Tanh => z.mapv_inplace(f64::tanh),
            Self::Linear => {}
        }
    }

    /// Multiplies `delta` by the derivative, given pre-activation `z` and
    /// post-activation `a`.
    fn backprop(self, delta: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Self::Relu => delta.zip_mut_with(z, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            }),
            Self::Tanh => delta.zip_mut_with(a, |d, &a| *d *= 1.0 - a * a),
            Self::Linear => {}
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Linear => "linear",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::Parse(format!("unknown activation {s:?}"))),
        }
    }
}

/// How the last layer's output is exposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One output unit.
    Scalar,
    Vector,
    /// Probabilities from softmax over the last layer's outputs.
    Softmax,
}

impl Head {
    fn name(self) -> &'static str {
        match self {
            Self::Scalar => "scalar",
            Self::Vector => "vector",
            Self::Softmax => "softmax",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(Self::Scalar),
            "vector" => Ok(Self::Vector),
            "softmax" => Ok(Self::Softmax),
            _ => Err(Error::Parse(format!("unknown head {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

/// Activations recorded by [`DenseNet::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of every layer followed by the last layer's activation.
    activations: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Last layer outputs before the head (the logits of a softmax head).
    pub fn logits(&self) -> &Array2<f64> {
        self.activations.last().expect("nonempty cache")
    }
}

/// Parameter gradients laid out like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            *w *= c;
            *b *= c;
        }
    }

    /// Parameter-ordered slices `[W0, b0, W1, b1, ...]`.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    head: Head,
}

impl DenseNet {
    /// Builds a net with layer sizes `sizes` (input first), `hidden` on every
    /// hidden layer and `output` on the last, initialized uniformly in
    /// `+-1/sqrt(fan_in)`.
    pub fn new(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        head: Head,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    w: Array2::from_shape_fn((fan_out, fan_in), |_| {
                        rng.random_range(-bound..bound)
                    }),
                    b: Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound)),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self::from_layers(layers, head)
    }

    /// Input, `hidden` units per hidden layer, output.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        out_activation: Activation,
        head: Head,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(&sizes, Activation::Relu, out_activation, head, rng)
    }

    pub fn from_layers(layers: Vec<Layer>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed input {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        if layers.iter().any(|l| l.b.len() != l.outputs()) {
            return Err(Error::Shape(
                "bias length differs from layer outputs".into(),
            ));
        }
        let last = layers.last().expect("nonempty");
        if head == Head::Scalar && last.outputs() != 1 {
            return Err(Error::Shape("scalar head needs one output unit".into()));
        }
        if head == Head::Softmax && last.activation != Activation::Linear {
            return Err(Error::Shape("softmax head needs linear logits".into()));
        }
        let net = Self { layers, head };
        if !net.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Parameter-ordered slices `[W0, b0, W1, b1, ...]`.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w.as_slice().expect("standard layout"),
                    l.b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} but the network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass (one row per sample).
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            let mut next = z.clone();
            layer.activation.apply(&mut next);
            activations.push(a);
            pre.push(z);
            a = next;
        }
        let output = self.apply_head(&a);
        activations.push(a);
        Ok((
            output.clone(),
            ForwardCache {
                activations,
                pre,
                output,
            },
        ))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            layer.activation.apply(&mut z);
            a = z;
        }
        Ok(self.apply_head(&a))
    }

    /// Single-sample convenience wrapper around [`DenseNet::predict`].
    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.predict(&input)?.into_raw_vec_and_offset().0)
    }

    fn apply_head(&self, a: &Array2<f64>) -> Array2<f64> {
        match self.head {
            Head::Softmax => softmax_rows(a),
            Head::Scalar | Head::Vector => a.clone(),
        }
    }

    /// Gradients of a scalar loss given `dL/d(output)`; also returns
    /// `dL/d(input)`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if grad_out.raw_dim() != cache.output.raw_dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                cache.output.shape()
            )));
        }
        match self.head {
            Head::Softmax => {
                let p = &cache.output;
                let dot = (p * grad_out).sum_axis(Axis(1)).insert_axis(Axis(1));
                let grad_logits = p * &(grad_out - &dot);
                self.backward_from_logits(cache, &grad_logits)
            }
            Head::Scalar | Head::Vector => self.backward_from_logits(cache, grad_out),
        }
    }

    /// Like [`DenseNet::backward`] but starting from the gradient with
    /// respect to the last layer's activation (the logits of a softmax
    /// head).
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache,
        grad_logits: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if cache.pre.len() != self.layers.len() || grad_logits.raw_dim() != cache.logits().raw_dim()
        {
            return Err(Error::Shape("cache does not belong to this network".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut delta = grad_logits.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer
                .activation
                .backprop(&mut delta, &cache.pre[i], &cache.activations[i + 1]);
            let dw = delta
                .t()
                .dot(&cache.activations[i])
                .as_standard_layout()
                .into_owned();
            let db = delta.sum_axis(Axis(0));
            layers.push((dw, db));
            delta = delta.dot(&layer.w);
        }
        layers.reverse();
        Ok((Gradients { layers }, delta))
    }

    /// Text dump: a shape manifest followed by the parameters in Rust's
    /// shortest round-trip float formatting.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "densenet v1")?;
        writeln!(out, "head {}", self.head.name())?;
        writeln!(out, "layers {}", self.layers.len())?;
        for l in &self.layers {
            writeln!(
                out,
                "layer {} {} {}",
                l.outputs(),
                l.inputs(),
                l.activation.name()
            )?;
            writeln!(out, "w {}", join(l.w.iter()))?;
            writeln!(out, "b {}", join(l.b.iter()))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Parse(format!("missing {what} line")))
        };
        if next("header")?.trim() != "densenet v1" {
            return Err(Error::Parse("not a densenet v1 dump".into()));
        }
        let head = Head::parse(field(&next("head")?, "head")?)?;
        let n: usize = parse_num(field(&next("layers")?, "layers")?)?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let spec = next("layer")?;
            let parts: Vec<&str> = spec.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(Error::Parse(format!("bad layer line {spec:?}")));
            }
            let (rows, cols): (usize, usize) = (parse_num(parts[1])?, parse_num(parts[2])?);
            let activation = Activation::parse(parts[3])?;
            let w = values(&next("w")?, "w", rows * cols)?;
            let b = values(&next("b")?, "b", rows)?;
            layers.push(Layer {
                w: Array2::from_shape_vec((rows, cols), w)
                    .map_err(|e| Error::Shape(e.to_string()))?,
                b: Array1::from(b),
                activation,
            });
        }
        Self::from_layers(layers, head)
    }
}

impl fmt::Display for DenseNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input_dim())?;
        for l in &self.layers {
            write!(f, " -> {}({})", l.outputs(), l.activation.name())?;
        }
        write!(f, " [{}]", self.head.name())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| Error::Parse(format!("expected {key:?}, got {line:?}")))
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad number {s:?}")))
}

fn values(line: &str, key: &str, expected: usize) -> Result<Vec<f64>> {
    let v = field(line, key)?
        .split_whitespace()
        .map(parse_num::<f64>)
        .collect::<Result<Vec<_>>>()?;
    if v.len() != expected {
        return Err(Error::Parse(format!(
            "{key}: {} values, manifest says {expected}",
            v.len()
        )));
    }
    Ok(v)
}
