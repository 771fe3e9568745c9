//! CNN and hybrid quantum (HQNN) detectors/classifiers sharing one
//! convolutional front end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Graph, Var};
use crate::dataset::LabeledExample;
use crate::error::{ensure_param, Error, Result};
use crate::layers::{self, DEFAULT_LEAKY_SLOPE, DEFAULT_NORM_EPS};
use crate::vqc::{self, VqcConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Hqnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Hqnn => "hqnn",
        }
    }
}

/// `conv(k×k, pad) → instance norm → leaky ReLU`, optionally followed by 2×2 pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub pool: bool,
}

/// Parallel quantum dense layers fed by the last hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumSpec {
    pub circuits: usize,
    pub qubits: usize,
    pub depth: usize,
    /// Dropout after every pooling stage.
    pub dropout: f64,
}

impl Default for QuantumSpec {
    fn default() -> Self {
        Self { circuits: 4, qubits: 4, depth: 2, dropout: 0.3 }
    }
}

impl QuantumSpec {
    pub fn vqc_config(&self) -> Result<VqcConfig> {
        VqcConfig::new(self.qubits, self.depth)
    }

    /// `qubits · 3·depth · circuits`.
    pub fn weight_count(&self) -> usize {
        self.qubits * 3 * self.depth * self.circuits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub kind: ModelKind,
    pub classes: usize,
    /// `[channels, bins, frames]`.
    pub input: [usize; 3],
    pub conv: Vec<ConvStage>,
    /// Widths of the hidden fully connected layers before the head.
    pub hidden: Vec<usize>,
    pub quantum: Option<QuantumSpec>,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

pub const SPECTROGRAM_INPUT: [usize; 3] = [2, 16, 249];

fn default_conv() -> Vec<ConvStage> {
    vec![
        ConvStage { out_channels: 16, kernel: 3, padding: 1, pool: false },
        ConvStage { out_channels: 32, kernel: 3, padding: 1, pool: true },
        ConvStage { out_channels: 64, kernel: 3, padding: 1, pool: true },
    ]
}

impl ArchitectureSpec {
    /// Conv 16/32/64 with two pools, then dense 128 → 64 → K.
    pub fn cnn(classes: usize) -> Self {
        Self {
            kind: ModelKind::Cnn,
            classes,
            input: SPECTROGRAM_INPUT,
            conv: default_conv(),
            hidden: vec![128, 64],
            quantum: None,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            norm_eps: DEFAULT_NORM_EPS,
        }
    }

    /// Same front end with dropout, dense 128 → 16, four 4-qubit depth-2
    /// circuits, leaky ReLU and a 16 → K head.
    pub fn hqnn(classes: usize) -> Self {
        Self::hqnn_with(classes, QuantumSpec::default())
    }

    pub fn hqnn_with(classes: usize, quantum: QuantumSpec) -> Self {
        Self {
            kind: ModelKind::Hqnn,
            classes,
            input: SPECTROGRAM_INPUT,
            conv: default_conv(),
            hidden: vec![128, quantum.circuits * quantum.qubits],
            quantum: Some(quantum),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            norm_eps: DEFAULT_NORM_EPS,
        }
    }

    pub fn for_kind(kind: ModelKind, classes: usize) -> Self {
        match kind {
            ModelKind::Cnn => Self::cnn(classes),
            ModelKind::Hqnn => Self::hqnn(classes),
        }
    }

    pub fn with_input(mut self, input: [usize; 3]) -> Self {
        self.input = input;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_param!(
            self.classes == 2 || self.classes == 5,
            "head width must be 2 (detector) or 5 (classifier), got {}",
            self.classes
        );
        ensure_param!(!self.conv.is_empty(), "at least one convolution stage is required");
        ensure_param!(!self.hidden.is_empty(), "at least one hidden layer is required");
        ensure_param!(self.hidden.iter().all(|&w| w > 0), "hidden widths must be positive");
        for stage in &self.conv {
            ensure_param!(stage.out_channels > 0 && stage.kernel > 0, "invalid conv stage {stage:?}");
        }
        match (self.kind, &self.quantum) {
            (ModelKind::Cnn, None) => {}
            (ModelKind::Hqnn, Some(q)) => {
                q.vqc_config()?;
                ensure_param!(q.circuits >= 1, "need at least one quantum circuit");
                let m = *self.hidden.last().unwrap();
                ensure_param!(
                    m % q.circuits == 0 && m / q.circuits == q.qubits,
                    "pre-quantum width {m} must equal circuits ({}) x qubits ({})",
                    q.circuits,
                    q.qubits
                );
                ensure_param!((0.0..1.0).contains(&q.dropout), "dropout must be in [0, 1)");
            }
            (kind, _) => return Err(Error::Parameter(format!("{kind:?} model with inconsistent quantum section"))),
        }
        self.spatial_trace()?;
        Ok(())
    }

    /// Spatial size after each conv stage, starting with the input.
    pub fn spatial_trace(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.input[1], self.input[2]);
        let mut trace = vec![(h, w)];
        for stage in &self.conv {
            let (ph, pw) = (h + 2 * stage.padding, w + 2 * stage.padding);
            ensure_param!(ph >= stage.kernel && pw >= stage.kernel, "kernel larger than feature map {h}x{w}");
            h = ph - stage.kernel + 1;
            w = pw - stage.kernel + 1;
            if stage.pool {
                h /= 2;
                w /= 2;
            }
            ensure_param!(h > 0 && w > 0, "feature map vanishes after {stage:?}");
            trace.push((h, w));
        }
        Ok(trace)
    }

    pub fn flatten_len(&self) -> Result<usize> {
        let (h, w) = *self.spatial_trace()?.last().unwrap();
        Ok(self.conv.last().unwrap().out_channels * h * w)
    }

    /// `(name, shape)` of every parameter, in storage order.
    pub fn parameter_layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut layout = Vec::new();
        let mut channels = self.input[0];
        for (i, stage) in self.conv.iter().enumerate() {
            layout.push((format!("conv{i}.weight"), vec![stage.out_channels, channels, stage.kernel, stage.kernel]));
            layout.push((format!("conv{i}.bias"), vec![stage.out_channels]));
            channels = stage.out_channels;
        }
        let mut width = self.flatten_len()?;
        for (i, &h) in self.hidden.iter().enumerate() {
            layout.push((format!("fc{i}.weight"), vec![h, width]));
            layout.push((format!("fc{i}.bias"), vec![h]));
            width = h;
        }
        if let Some(q) = &self.quantum {
            for c in 0..q.circuits {
                layout.push((format!("vqc{c}.angles"), vec![q.depth, q.qubits, 3]));
            }
        }
        layout.push(("head.weight".into(), vec![self.classes, width]));
        layout.push(("head.bias".into(), vec![self.classes]));
        Ok(layout)
    }
}

/// Named parameter arrays in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Array>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }
}

/// Execution mode of a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn rand::RngCore),
}

/// Result of recording a forward pass.
pub struct ForwardPass {
    pub logits: Var,
    /// One graph leaf per parameter, in [`ParamStore`] order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ArchitectureSpec,
    pub params: ParamStore,
}

impl Network {
    /// Kaiming-uniform weights, zero biases, quantum angles uniform in `[0, 2π)`.
    pub fn build(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let layout = spec.parameter_layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(layout.len());
        let mut values = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let value = if name.ends_with(".bias") {
                Array::zeros(&shape)
            } else if name.ends_with(".angles") {
                let n: usize = shape.iter().product();
                Array::new(shape, (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect())?
            } else {
                let fan_in = shape[1..].iter().product();
                layers::kaiming_uniform(&shape, fan_in, &mut rng)
            };
            names.push(name);
            values.push(value);
        }
        Ok(Self { spec, params: ParamStore { names, values } })
    }

    pub fn from_parts(spec: ArchitectureSpec, params: ParamStore) -> Result<Self> {
        let layout = spec.parameter_layout()?;
        if layout.len() != params.len() {
            return Err(Error::Mismatch(format!("expected {} parameter arrays, got {}", layout.len(), params.len())));
        }
        for ((name, shape), (have_name, value)) in layout.iter().zip(params.names.iter().zip(&params.values)) {
            if name != have_name || shape.as_slice() != value.shape() {
                return Err(Error::Mismatch(format!(
                    "parameter {have_name} {:?} does not match expected {name} {shape:?}",
                    value.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn quantum_parameter_count(&self) -> usize {
        self.params.names.iter().zip(&self.params.values).filter(|(n, _)| n.ends_with(".angles")).map(|(_, v)| v.len()).sum()
    }

    /// Records the forward pass of `input` (`[N, C, H, W]`) on `g`.
    pub fn forward(&self, g: &mut Graph, input: Var, mode: Mode<'_>) -> Result<ForwardPass> {
        let spec = &self.spec;
        let shape = g.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1..] != spec.input {
            return Err(Error::Shape(format!("model expects [N, {:?}], got {shape:?}", spec.input)));
        }
        let (training, mut rng) = match mode {
            Mode::Eval => (false, None),
            Mode::Train(rng) => (true, Some(rng)),
        };
        let params: Vec<Var> = self.params.values.iter().map(|v| g.param(v.clone())).collect();
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("layout covers every layer");
        let dropout = spec.quantum.map(|q| q.dropout).unwrap_or(0.0);

        let mut x = input;
        for stage in &spec.conv {
            let (w, b) = (take(), take());
            x = layers::conv2d(g, x, w, b, 1, stage.padding)?;
            x = layers::instance_norm(g, x, spec.norm_eps)?;
            x = layers::leaky_relu(g, x, spec.leaky_slope)?;
            if stage.pool {
                x = layers::max_pool2d(g, x)?;
                if let Some(rng) = rng.as_mut() {
                    x = layers::dropout(g, x, dropout, training, &mut **rng)?;
                }
            }
        }
        x = g.flatten(x)?;
        for _ in &spec.hidden {
            let (w, b) = (take(), take());
            x = layers::dense(g, x, w, b)?;
            x = layers::leaky_relu(g, x, spec.leaky_slope)?;
        }
        if let Some(q) = &spec.quantum {
            let config = q.vqc_config()?;
            let parts = g.split_last(x, q.circuits)?;
            let outputs = parts
                .into_iter()
                .map(|part| {
                    let angles = take();
                    vqc::quantum_dense(g, part, angles, config)
                })
                .collect::<Result<Vec<_>>>()?;
            x = g.concat_last(&outputs)?;
            x = layers::leaky_relu(g, x, spec.leaky_slope)?;
        }
        let (w, b) = (take(), take());
        let logits = layers::dense(g, x, w, b)?;
        Ok(ForwardPass { logits, params })
    }

    /// Evaluation-mode logits for a `[N, C, H, W]` batch.
    pub fn logits(&self, batch: &Array) -> Result<Array> {
        let mut g = Graph::new();
        let input = g.constant(batch.clone());
        let pass = self.forward(&mut g, input, Mode::Eval)?;
        Ok(g.value(pass.logits).clone())
    }

    pub fn probabilities(&self, batch: &Array) -> Result<Array> {
        Ok(layers::softmax_rows(&self.logits(batch)?))
    }

    pub fn predict(&self, batch: &Array) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(batch)?))
    }

    /// Mean cross-entropy of a batch and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &Array,
        labels: &[usize],
        mode: Mode<'_>,
    ) -> Result<(f64, Vec<Array>, Array)> {
        let mut g = Graph::new();
        let input = g.constant(batch.clone());
        let pass = self.forward(&mut g, input, mode)?;
        let loss = layers::softmax_cross_entropy(&mut g, pass.logits, labels)?;
        let grads = g.backward(loss)?;
        let param_grads = pass
            .params
            .iter()
            .zip(&self.params.values)
            .map(|(var, value)| grads.get_or_zeros(*var, value))
            .collect();
        Ok((g.value(loss).item(), param_grads, g.value(pass.logits).clone()))
    }
}

/// Index of the largest entry of each row; ties go to the lower index.
pub fn argmax_rows(logits: &Array) -> Vec<usize> {
    let k = logits.last_dim();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Stacks examples into a `[N, C, H, W]` batch.
pub fn batch_array(examples: &[&LabeledExample], shape: [usize; 3]) -> Result<Array> {
    let per: usize = shape.iter().product();
    let mut data = Vec::with_capacity(per * examples.len());
    for ex in examples {
        if ex.features.len() != per {
            return Err(Error::Shape(format!("example has {} features, model expects {per}", ex.features.len())));
        }
        data.extend(ex.features.iter().map(|v| f64::from(*v)));
    }
    Array::new(vec![examples.len(), shape[0], shape[1], shape[2]], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spatial_trace() {
        let spec = ArchitectureSpec::cnn(2);
        assert_eq!(spec.spatial_trace().unwrap(), vec![(16, 249), (16, 249), (8, 124), (4, 62)]);
        assert_eq!(spec.flatten_len().unwrap(), 15872);
    }

    #[test]
    fn head_width_is_checked() {
        assert!(ArchitectureSpec::cnn(3).validate().is_err());
        assert!(ArchitectureSpec::hqnn(4).validate().is_err());
        assert!(ArchitectureSpec::cnn(5).validate().is_ok());
        let mut bad = ArchitectureSpec::hqnn(2);
        bad.hidden = vec![128, 15];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hqnn_quantum_weight_count() {
        let net = Network::build(ArchitectureSpec::hqnn(2), 1).unwrap();
        assert_eq!(net.quantum_parameter_count(), 96);
        assert_eq!(net.spec.quantum.unwrap().weight_count(), 96);
    }

    #[test]
    fn argmax_ties_to_lower_index() {
        let a = Array::new(vec![2, 3], vec![1.0, 3.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(argmax_rows(&a), vec![1, 0]);
    }

    #[test]
    fn mismatched_parameters_rejected() {
        let net = Network::build(ArchitectureSpec::cnn(2).with_input([2, 8, 16]), 3).unwrap();
        let other = ArchitectureSpec::cnn(5).with_input([2, 8, 16]);
        assert!(matches!(Network::from_parts(other, net.params.clone()), Err(Error::Mismatch(_))));
    }
}
