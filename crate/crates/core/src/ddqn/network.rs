use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::sim_env::ACTION_COUNT;

/// Floating-point type the network can run in.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("finite f64 converts")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputShape {
    Flat(usize),
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat(n) => n,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dims(&self) -> (usize, usize, usize) {
        match *self {
            InputShape::Flat(n) => (n, 1, 1),
            InputShape::Image { channels, height, width } => (channels, height, width),
        }
    }
}

/// One layer; every layer but the last is followed by a ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize },
    Dense { width: usize, bias: bool },
}

impl LayerSpec {
    pub fn dense(width: usize) -> Self {
        LayerSpec::Dense { width, bias: true }
    }

    pub fn conv(out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv { out_channels, kernel, stride }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

impl Topology {
    /// conv(16, 8×8, /4) → conv(32, 4×4, /2) → fc(256) → fc(27).
    pub fn frame_default(channels: usize, height: usize, width: usize) -> Self {
        Self {
            input: InputShape::Image { channels, height, width },
            layers: vec![
                LayerSpec::conv(16, 8, 4),
                LayerSpec::conv(32, 4, 2),
                LayerSpec::dense(256),
                LayerSpec::dense(ACTION_COUNT),
            ],
        }
    }

    pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut layers: Vec<_> = hidden.iter().map(|&w| LayerSpec::dense(w)).collect();
        layers.push(LayerSpec::dense(outputs));
        Self { input: InputShape::Flat(inputs), layers }
    }

    /// A single bias-free linear map; with one-hot inputs this is a Q-table.
    pub fn tabular(states: usize, actions: usize) -> Self {
        Self {
            input: InputShape::Flat(states),
            layers: vec![LayerSpec::Dense { width: actions, bias: false }],
        }
    }

    pub fn output_width(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { width, .. }) => *width,
            Some(LayerSpec::Conv { .. }) | None => 0,
        }
    }

    pub(crate) fn plan(&self) -> Result<Vec<LayerPlan>, NetError> {
        let invalid = |m: String| Err(NetError::InvalidTopology(m));
        if self.layers.is_empty() {
            return invalid("no layers".into());
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Dense { .. })) {
            return invalid("output layer must be fully connected".into());
        }
        if self.input.is_empty() {
            return invalid("empty input".into());
        }
        let mut shape = self.input.dims();
        let mut offset = 0;
        let mut plan = Vec::with_capacity(self.layers.len());
        let mut flattened = matches!(self.input, InputShape::Flat(_));
        for (i, spec) in self.layers.iter().enumerate() {
            let (c, h, w) = shape;
            let (out, w_len, b_len) = match *spec {
                LayerSpec::Conv { out_channels, kernel, stride } => {
                    if flattened {
                        return invalid(format!("layer {i}: convolution after a flat input"));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 || kernel > h || kernel > w {
                        return invalid(format!("layer {i}: convolution does not fit {c}x{h}x{w}"));
                    }
                    let out = (out_channels, (h - kernel) / stride + 1, (w - kernel) / stride + 1);
                    (out, out_channels * c * kernel * kernel, out_channels)
                }
                LayerSpec::Dense { width, bias } => {
                    if width == 0 {
                        return invalid(format!("layer {i}: zero width"));
                    }
                    flattened = true;
                    ((width, 1, 1), width * c * h * w, if bias { width } else { 0 })
                }
            };
            plan.push(LayerPlan { spec: *spec, input: shape, output: out, w_off: offset, w_len, b_len });
            offset += w_len + b_len;
            shape = out;
        }
        Ok(plan)
    }

    pub fn param_count(&self) -> Result<usize, NetError> {
        Ok(self.plan()?.iter().map(|l| l.w_len + l.b_len).sum())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerPlan {
    spec: LayerSpec,
    input: (usize, usize, usize),
    output: (usize, usize, usize),
    w_off: usize,
    w_len: usize,
    b_len: usize,
}

impl LayerPlan {
    fn b_off(&self) -> usize {
        self.w_off + self.w_len
    }

    fn fan_in(&self) -> usize {
        match self.spec {
            LayerSpec::Conv { kernel, .. } => self.input.0 * kernel * kernel,
            LayerSpec::Dense { .. } => self.input.0 * self.input.1 * self.input.2,
        }
    }

    fn forward<F: Scalar>(&self, params: &[F], x: &[F], out: &mut Vec<F>) {
        let weights = &params[self.w_off..self.w_off + self.w_len];
        let bias = &params[self.b_off()..self.b_off() + self.b_len];
        let (oc, oh, ow) = self.output;
        out.clear();
        out.resize(oc * oh * ow, F::zero());
        match self.spec {
            LayerSpec::Dense { .. } => {
                let n = x.len();
                for (o, y) in out.iter_mut().enumerate() {
                    let row = &weights[o * n..(o + 1) * n];
                    let mut acc = bias.get(o).copied().unwrap_or_else(F::zero);
                    for (w, v) in row.iter().zip(x) {
                        acc += *w * *v;
                    }
                    *y = acc;
                }
            }
            LayerSpec::Conv { kernel: k, stride: s, .. } => {
                let (ic, ih, iw) = self.input;
                for o in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[o];
                            for c in 0..ic {
                                let wbase = (o * ic + c) * k * k;
                                let xbase = c * ih * iw;
                                for ky in 0..k {
                                    let xrow = xbase + (oy * s + ky) * iw + ox * s;
                                    let wrow = wbase + ky * k;
                                    for kx in 0..k {
                                        acc += weights[wrow + kx] * x[xrow + kx];
                                    }
                                }
                            }
                            out[(o * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients for upstream `delta` and, when
    /// `dx` is given, writes the gradient with respect to the layer input.
    fn backward<F: Scalar>(&self, params: &[F], x: &[F], delta: &[F], grad: &mut [F], dx: Option<&mut Vec<F>>) {
        let weights = &params[self.w_off..self.w_off + self.w_len];
        let (gw, gb) = grad[self.w_off..self.b_off() + self.b_len].split_at_mut(self.w_len);
        let mut dx = dx.map(|v| {
            v.clear();
            v.resize(x.len(), F::zero());
            v
        });
        match self.spec {
            LayerSpec::Dense { .. } => {
                let n = x.len();
                for (o, &d) in delta.iter().enumerate() {
                    if d == F::zero() {
                        continue;
                    }
                    if let Some(b) = gb.get_mut(o) {
                        *b += d;
                    }
                    for (g, v) in gw[o * n..(o + 1) * n].iter_mut().zip(x) {
                        *g += d * *v;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        for (t, w) in dx.iter_mut().zip(&weights[o * n..(o + 1) * n]) {
                            *t += d * *w;
                        }
                    }
                }
            }
            LayerSpec::Conv { kernel: k, stride: s, .. } => {
                let (ic, ih, iw) = self.input;
                let (oc, oh, ow) = self.output;
                for o in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let d = delta[(o * oh + oy) * ow + ox];
                            if d == F::zero() {
                                continue;
                            }
                            gb[o] += d;
                            for c in 0..ic {
                                let wbase = (o * ic + c) * k * k;
                                let xbase = c * ih * iw;
                                for ky in 0..k {
                                    let xrow = xbase + (oy * s + ky) * iw + ox * s;
                                    let wrow = wbase + ky * k;
                                    for kx in 0..k {
                                        gw[wrow + kx] += d * x[xrow + kx];
                                        if let Some(dx) = dx.as_deref_mut() {
                                            dx[xrow + kx] += d * weights[wrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct Trace<F> {
    /// `inputs[i]` is what layer `i` consumed.
    inputs: Vec<Vec<F>>,
    /// Pre-activation output of each layer; the last is the network output.
    pre: Vec<Vec<F>>,
}

impl<F: Scalar> Trace<F> {
    pub fn output(&self) -> &[F] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Feed-forward Q-network with a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork<F: Scalar = f32> {
    topology: Topology,
    plan: Vec<LayerPlan>,
    params: Vec<F>,
}

impl<F: Scalar> QNetwork<F> {
    pub fn zeros(topology: Topology) -> Result<Self, NetError> {
        let plan = topology.plan()?;
        let n = plan.iter().map(|l| l.w_len + l.b_len).sum();
        Ok(Self { topology, plan, params: vec![F::zero(); n] })
    }

    /// Weights and biases drawn uniformly from ±1/√fan_in.
    pub fn seeded(topology: Topology, seed: u64) -> Result<Self, NetError> {
        let mut net = Self::zeros(topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &net.plan {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for p in &mut net.params[layer.w_off..layer.b_off() + layer.b_len] {
                *p = cast(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn from_params(topology: Topology, params: Vec<F>) -> Result<Self, NetError> {
        let mut net = Self::zeros(topology)?;
        if params.len() != net.params.len() {
            return Err(NetError::ShapeMismatch { expected: net.params.len(), got: params.len() });
        }
        net.params = params;
        Ok(net)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.topology.input.len()
    }

    pub fn output_width(&self) -> usize {
        self.topology.output_width()
    }

    /// Copies parameters from a network of identical topology.
    pub fn copy_from(&mut self, other: &QNetwork<F>) -> Result<(), NetError> {
        if self.topology != other.topology {
            return Err(NetError::ShapeMismatch { expected: self.params.len(), got: other.params.len() });
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    fn check_input(&self, input: &[F]) -> Result<(), NetError> {
        if input.len() != self.input_len() {
            return Err(NetError::ShapeMismatch { expected: self.input_len(), got: input.len() });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[F]) -> Result<Vec<F>, NetError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        let last = self.plan.len() - 1;
        for (i, layer) in self.plan.iter().enumerate() {
            layer.forward(&self.params, &x, &mut y);
            if i != last {
                relu_in_place(&mut y);
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[F]) -> Result<Trace<F>, NetError> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.plan.len());
        let mut pre = Vec::with_capacity(self.plan.len());
        let mut x = input.to_vec();
        for layer in &self.plan {
            let mut y = Vec::new();
            layer.forward(&self.params, &x, &mut y);
            inputs.push(x);
            x = y.clone();
            relu_in_place(&mut x);
            pre.push(y);
        }
        Ok(Trace { inputs, pre })
    }

    /// Backpropagates `d_output` through `trace`, adding into `grad`.
    pub fn backward(&self, trace: &Trace<F>, d_output: &[F], grad: &mut [F]) -> Result<(), NetError> {
        if grad.len() != self.params.len() {
            return Err(NetError::ShapeMismatch { expected: self.params.len(), got: grad.len() });
        }
        if d_output.len() != self.output_width() {
            return Err(NetError::ShapeMismatch { expected: self.output_width(), got: d_output.len() });
        }
        let mut delta = d_output.to_vec();
        let mut next = Vec::new();
        for i in (0..self.plan.len()).rev() {
            if i != self.plan.len() - 1 {
                for (d, p) in delta.iter_mut().zip(&trace.pre[i]) {
                    if *p <= F::zero() {
                        *d = F::zero();
                    }
                }
            }
            let dx = (i > 0).then_some(&mut next);
            self.plan[i].backward(&self.params, &trace.inputs[i], &delta, grad, dx);
            if i > 0 {
                std::mem::swap(&mut delta, &mut next);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Converts every parameter to another float type.
    pub fn cast<G: Scalar>(&self) -> QNetwork<G> {
        QNetwork {
            topology: self.topology.clone(),
            plan: self.plan.clone(),
            params: self.params.iter().map(|p| cast(p.to_f64().unwrap_or(0.0))).collect(),
        }
    }
}

fn relu_in_place<F: Scalar>(v: &mut [F]) {
    for x in v {
        if *x < F::zero() {
            *x = F::zero();
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_linear_net() {
        let topo = Topology::mlp(2, &[], 2);
        let net = QNetwork::<f64>::from_params(topo, vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn zero_final_layer_outputs_its_bias() {
        let mut net = QNetwork::<f32>::seeded(Topology::mlp(6, &[16], ACTION_COUNT), 3).unwrap();
        let plan = net.plan[1].clone();
        for p in &mut net.params[plan.w_off..plan.b_off()] {
            *p = 0.0;
        }
        let bias = net.params[plan.b_off()..plan.b_off() + plan.b_len].to_vec();
        let out = net.forward(&[0.3, -1.0, 2.0, 0.1, 0.0, 1.0]).unwrap();
        assert_eq!(out.len(), ACTION_COUNT);
        assert_eq!(out, bias);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = QNetwork::<f32>::seeded(Topology::frame_default(4, 32, 32), 9).unwrap();
        let x: Vec<f32> = (0..net.input_len()).map(|i| (i % 7) as f32 / 7.0).collect();
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        assert!(net.forward(&x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_frame_topology_shapes() {
        let topo = Topology::frame_default(4, 84, 84);
        let plan = topo.plan().unwrap();
        assert_eq!(plan[0].output, (16, 20, 20));
        assert_eq!(plan[1].output, (32, 9, 9));
        assert_eq!(plan[2].output, (256, 1, 1));
        assert_eq!(topo.output_width(), 27);
    }

    #[test]
    fn input_shape_checked() {
        let net = QNetwork::<f32>::zeros(Topology::mlp(3, &[], 2)).unwrap();
        assert_eq!(net.forward(&[1.0]), Err(NetError::ShapeMismatch { expected: 3, got: 1 }));
    }

    #[test]
    fn invalid_topologies_rejected() {
        let t = Topology { input: InputShape::Flat(4), layers: vec![LayerSpec::conv(2, 2, 1), LayerSpec::dense(2)] };
        assert!(t.plan().is_err());
        let t = Topology {
            input: InputShape::Image { channels: 1, height: 3, width: 3 },
            layers: vec![LayerSpec::conv(2, 4, 1), LayerSpec::dense(2)],
        };
        assert!(t.plan().is_err());
        let t = Topology { input: InputShape::Flat(4), layers: vec![] };
        assert!(t.plan().is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0, 3.0, 1.0, 3.0]), 1);
        assert_eq!(argmax(&[5.0f32]), 0);
    }

    #[test]
    fn tabular_layer_has_no_bias() {
        let t = Topology::tabular(5, 3);
        assert_eq!(t.param_count().unwrap(), 15);
    }
}
