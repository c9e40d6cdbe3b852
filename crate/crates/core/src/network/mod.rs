//! Student backbone + classifier, projector/predictor heads and EMA teachers.
//!
//! The backbone is a stack of dense layers with ReLU after every layer; its
//! final activation is the sample's feature vector (absolute location). The
//! classifier is a single linear map from features to logits.

mod checkpoint;
mod heads;

pub use checkpoint::Checkpoint;
pub use heads::{head_dims, heads_backward, heads_forward, HeadParams, HeadsCache, HeadsOutput, Mlp2};

use crate::datagen::perturb;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, Rng};

/// Read/write access to every trainable matrix in a fixed order.
pub trait Parameters {
    fn named_params(&self) -> Vec<(String, &Matrix)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.len()).sum()
    }

    /// All parameters concatenated into a 1×n row.
    fn flatten(&self) -> Matrix {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, m) in self.named_params() {
            out.extend_from_slice(m.as_slice());
        }
        Matrix::row_vector(&out)
    }

    fn load_flat(&mut self, flat: &Matrix) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(shape_err(format!(
                "flat parameter vector of {} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for (_, m) in self.named_params_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat.as_slice()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Affine map `x·W + b` with `W` stored fan_in × fan_out.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Matrix,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut d = Self::zeros(fan_in, fan_out);
        for w in d.weights.as_mut_slice() {
            *w = rng.uniform_range(-limit, limit);
        }
        d
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weights)?;
        y.add_row_broadcast(&self.bias)?;
        Ok(y)
    }

    /// Gradients of `x·W + b` given the upstream gradient `dy`. Returns (grads, dx).
    pub fn backward(&self, x: &Matrix, dy: &Matrix) -> Result<(Dense, Matrix)> {
        let grads = Dense {
            weights: x.t_matmul(dy)?,
            bias: dy.sum_rows(),
        };
        let dx = dy.matmul_t(&self.weights)?;
        Ok((grads, dx))
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.weights"), &self.weights));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn push_named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix)>) {
        out.push((format!("{prefix}.weights"), &mut self.weights));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

pub(crate) fn relu(m: &Matrix) -> Matrix {
    m.map(|x| x.max(0.0))
}

/// `dy ⊙ 1[pre > 0]`
pub(crate) fn relu_backward(pre: &Matrix, dy: &Matrix) -> Matrix {
    let mut out = dy.clone();
    for (o, &p) in out.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

/// Backbone layers plus the classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Dense>,
    pub classifier: Dense,
}

impl NetworkParams {
    pub fn new(layers: Vec<Dense>, classifier: Dense) -> Result<Self> {
        let net = Self { layers, classifier };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(shape_err("backbone needs at least one layer"));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(shape_err(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (i, l) in self.layers.iter().chain([&self.classifier]).enumerate() {
            if l.bias.shape() != (1, l.fan_out()) {
                return Err(shape_err(format!("bias shape of layer {i}")));
            }
        }
        if self.classifier.fan_in() != self.feature_dim() {
            return Err(shape_err(format!(
                "classifier expects {} features, backbone produces {}",
                self.classifier.fan_in(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    pub fn class_count(&self) -> usize {
        self.classifier.fan_out()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .named_params()
                .iter()
                .zip(other.named_params())
                .all(|((_, a), (_, b))| a.shape() == b.shape())
    }
}

impl Parameters for NetworkParams {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.push_named(&format!("backbone.{i}"), &mut out);
        }
        self.classifier.push_named("classifier", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.push_named_mut(&format!("backbone.{i}"), &mut out);
        }
        self.classifier.push_named_mut("classifier", &mut out);
        out
    }
}

/// Intermediates retained by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each backbone layer; entry 0 is the (perturbed) network input.
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    features: Matrix,
}

impl ForwardCache {
    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub cache: ForwardCache,
    /// Post-ReLU output of the last backbone layer (batch × feature_dim).
    pub features: Matrix,
    pub logits: Matrix,
}

/// Forward pass on `x` with additive Gaussian input noise of std `noise_std`.
pub fn forward(params: &NetworkParams, x: &Matrix, noise_std: f64, rng: &mut Rng) -> Result<ForwardOutput> {
    let noisy = perturb(x, noise_std, rng)?;
    forward_exact(params, noisy)
}

/// Noise-free forward pass.
pub fn forward_clean(params: &NetworkParams, x: &Matrix) -> Result<ForwardOutput> {
    forward_exact(params, x.clone())
}

fn forward_exact(params: &NetworkParams, x: Matrix) -> Result<ForwardOutput> {
    if x.cols() != params.input_dim() {
        return Err(shape_err(format!(
            "input has {} columns, network expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut h = x;
    for layer in &params.layers {
        let z = layer.forward(&h)?;
        let a = relu(&z);
        inputs.push(h);
        pre_activations.push(z);
        h = a;
    }
    h.ensure_finite("backbone activations")?;
    let logits = params.classifier.forward(&h)?;
    logits.ensure_finite("logits")?;
    Ok(ForwardOutput {
        cache: ForwardCache {
            inputs,
            pre_activations,
            features: h.clone(),
        },
        features: h,
        logits,
    })
}

/// Backward pass for gradients arriving at the features and at the logits.
///
/// Either gradient may be all zeros. Returns parameter gradients and `dx`
/// (gradient with respect to the perturbed input).
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    d_features: &Matrix,
    d_logits: &Matrix,
) -> Result<(NetworkParams, Matrix)> {
    let batch = cache.features.rows();
    if d_features.shape() != cache.features.shape() {
        return Err(shape_err(format!(
            "feature gradient {:?} for features {:?}",
            d_features.shape(),
            cache.features.shape()
        )));
    }
    if d_logits.shape() != (batch, params.class_count()) {
        return Err(shape_err(format!(
            "logit gradient {:?}, expected ({batch}, {})",
            d_logits.shape(),
            params.class_count()
        )));
    }
    if cache.pre_activations.len() != params.layers.len() {
        return Err(shape_err("cache was produced by a different architecture"));
    }

    let (classifier, d_from_logits) = params.classifier.backward(&cache.features, d_logits)?;
    let mut dh = d_features.add(&d_from_logits)?;

    let mut layers = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate().rev() {
        let dz = relu_backward(&cache.pre_activations[i], &dh);
        let (g, dx) = layer.backward(&cache.inputs[i], &dz)?;
        layers.push(g);
        dh = dx;
    }
    layers.reverse();
    Ok((NetworkParams { layers, classifier }, dh))
}

/// Student network together with its projector/predictor heads.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    pub net: NetworkParams,
    pub heads: HeadParams,
}

impl StudentModel {
    pub fn zeros_like(&self) -> Self {
        Self {
            net: self.net.zeros_like(),
            heads: self.heads.zeros_like(),
        }
    }
}

impl Parameters for StudentModel {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.net.named_params();
        out.extend(self.heads.named_params());
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = self.net.named_params_mut();
        out.extend(self.heads.named_params_mut());
        out
    }
}

/// Glorot-initialised student. `layer_dims` = [input, hidden…, feature].
pub fn init_params(layer_dims: &[usize], class_count: usize, rng: &mut Rng) -> Result<StudentModel> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) || class_count == 0 {
        return Err(Error::InvalidArgument(format!(
            "layer dims {layer_dims:?} / class count {class_count} must be positive with >= 1 layer"
        )));
    }
    let mut rng = rng.split("init");
    let layers = layer_dims
        .windows(2)
        .map(|w| Dense::glorot(w[0], w[1], &mut rng))
        .collect();
    let feature_dim = *layer_dims.last().unwrap();
    let classifier = Dense::glorot(feature_dim, class_count, &mut rng);
    let net = NetworkParams::new(layers, classifier)?;
    let heads = HeadParams::init(feature_dim, &mut rng);
    Ok(StudentModel { net, heads })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeacherRole {
    SampleConsistency,
    SampleScatter,
}

/// EMA copy of the student. Only the scatter teacher carries a projector.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherState {
    pub role: TeacherRole,
    pub decay: f64,
    pub net: NetworkParams,
    pub projector: Option<Mlp2>,
}

impl TeacherState {
    pub fn from_student(student: &StudentModel, role: TeacherRole, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("EMA decay {decay} outside [0, 1]")));
        }
        let projector = match role {
            TeacherRole::SampleScatter => Some(student.heads.projector.clone()),
            TeacherRole::SampleConsistency => None,
        };
        Ok(Self {
            role,
            decay,
            net: student.net.clone(),
            projector,
        })
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = self.net.named_params_mut();
        if let Some(p) = self.projector.as_mut() {
            out.extend(p.named_params_mut_prefixed("projector"));
        }
        out
    }
}

/// `θ_t ← ε·θ_t + (1 − ε)·θ_s` for every teacher parameter.
pub fn ema_update(teacher: &mut TeacherState, student: &StudentModel) -> Result<()> {
    if !teacher.net.same_shape(&student.net) {
        return Err(shape_err("teacher and student backbones differ"));
    }
    let eps = teacher.decay;
    let mut sources: Vec<&Matrix> = student.net.named_params().into_iter().map(|(_, m)| m).collect();
    if teacher.projector.is_some() {
        sources.extend(
            student
                .heads
                .projector
                .named_params_prefixed("projector")
                .into_iter()
                .map(|(_, m)| m),
        );
    }
    let targets = teacher.params_mut();
    if targets.len() != sources.len() {
        return Err(shape_err("teacher and student parameter lists differ"));
    }
    for ((_, t), s) in targets.into_iter().zip(sources) {
        if t.shape() != s.shape() {
            return Err(shape_err("teacher and student projector shapes differ"));
        }
        for (a, &b) in t.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *a = eps * *a + (1.0 - eps) * b;
        }
    }
    Ok(())
}
