//! Builders and prediction wrappers for the six methods.
//!
//! - m1: linear regression over the 256-dim mel summary
//! - m2: fully convolutional CNN over the raw mel-spectrogram (128×4 and
//!   1×4 early kernels, three late 1×1 kernels, no dense layers)
//! - m3: inception variant of m2 with parallel 132×8 and 140×16 early
//!   kernels over zero-padded input
//! - m4: linear regression over 50 tag activations
//! - m5/m6: joint blends `w·f1 + (1−w)·f2` of (m2,m4) and (m3,m4), with
//!   `w` trainable
//!
//! Feature-map counts default to 32 early maps and a 64 → 64 → 1 late
//! stack; all are configurable through [`ModelSpec`].

pub mod checkpoint;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{FeatureVector, MelSpectrogram};
use crate::nn::{Batch, Graph, GraphBuilder, Mode, NnError, NodeId, Tensor};
use crate::tags::{TagVector, TAG_DIM};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("missing required input '{0}' for this method")]
    MissingFeature(&'static str),
    #[error("model spec error: {0}")]
    Spec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// The six prediction methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::M1,
        Method::M2,
        Method::M3,
        Method::M4,
        Method::M5,
        Method::M6,
    ];

    /// Input kinds this method consumes.
    pub fn required_inputs(self) -> &'static [&'static str] {
        match self {
            Method::M1 => &[INPUT_SUMMARY],
            Method::M2 | Method::M3 => &[INPUT_MEL],
            Method::M4 => &[INPUT_TAGS],
            Method::M5 | Method::M6 => &[INPUT_MEL, INPUT_TAGS],
        }
    }

    pub fn is_joint(self) -> bool {
        matches!(self, Method::M5 | Method::M6)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::M1 => "m1",
            Method::M2 => "m2",
            Method::M3 => "m3",
            Method::M4 => "m4",
            Method::M5 => "m5",
            Method::M6 => "m6",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Method {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m1" => Ok(Method::M1),
            "m2" => Ok(Method::M2),
            "m3" => Ok(Method::M3),
            "m4" => Ok(Method::M4),
            "m5" => Ok(Method::M5),
            "m6" => Ok(Method::M6),
            other => Err(ModelError::Spec(format!("unknown method '{other}'"))),
        }
    }
}

pub const INPUT_SUMMARY: &str = "summary";
pub const INPUT_MEL: &str = "mel";
pub const INPUT_TAGS: &str = "tags";

/// Feature-map counts for the convolutional methods. The paper left these
/// to validation-set tuning; these are the working defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps {
    /// Maps per early convolution (each inception branch uses this count).
    pub early: usize,
    /// Maps of the hidden late 1×1 convolutions; the final 1×1 always has
    /// exactly one map.
    pub late_hidden: Vec<usize>,
}

impl Default for FeatureMaps {
    fn default() -> Self {
        FeatureMaps {
            early: 32,
            late_hidden: vec![64, 64],
        }
    }
}

/// Everything needed to build one model's graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub method: Method,
    pub feature_maps: FeatureMaps,
    /// Initial blend weight for the joint methods.
    pub w_init: f64,
    pub dropout_rate: f64,
    pub n_mels: usize,
    /// Time frames of the spectrogram input (646 at reference settings).
    pub n_frames: usize,
}

impl ModelSpec {
    pub fn new(method: Method) -> Self {
        ModelSpec {
            method,
            feature_maps: FeatureMaps::default(),
            w_init: 0.5,
            dropout_rate: 0.25,
            n_mels: 128,
            n_frames: 646,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.feature_maps.early == 0 || self.feature_maps.late_hidden.iter().any(|&m| m == 0) {
            return Err(ModelError::Spec("feature map counts must be positive".into()));
        }
        if self.n_mels == 0 || self.n_frames == 0 {
            return Err(ModelError::Spec("n_mels and n_frames must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Spec("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A built model: its spec plus the parameterized graph.
#[derive(Debug, Clone)]
pub struct HitModel {
    pub spec: ModelSpec,
    pub graph: Graph,
}

impl HitModel {
    pub fn method(&self) -> Method {
        self.spec.method
    }

    /// Current blend weight, for the joint methods.
    pub fn joint_weight(&self) -> Option<f64> {
        self.graph.param("blend.weight").map(|t| t.data()[0])
    }

    pub fn set_joint_weight(&mut self, w: f64) -> Result<(), ModelError> {
        self.graph.set_param("blend.weight", Tensor::vector(&[w]))?;
        Ok(())
    }
}

/// Dispatch on `spec.method`. The joint methods come out cold-started
/// (freshly initialized branches); [`build_joint`] composes pre-trained
/// branches instead.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<HitModel, ModelError> {
    spec.validate()?;
    match spec.method {
        Method::M1 => build_m1(spec, seed),
        Method::M2 => build_m2(spec, seed),
        Method::M3 => build_m3(spec, seed),
        Method::M4 => build_m4(spec, seed),
        Method::M5 | Method::M6 => {
            let audio_method = if spec.method == Method::M5 { Method::M2 } else { Method::M3 };
            let audio = build(&ModelSpec { method: audio_method, ..spec.clone() }, seed)?;
            let tag_lr = build(&ModelSpec { method: Method::M4, ..spec.clone() }, seed ^ 0x9e37_79b9)?;
            let mut joint = build_joint(&audio, &tag_lr, spec.w_init)?;
            joint.spec = spec.clone();
            Ok(joint)
        }
    }
}

/// m1: a single 2·n_mels → 1 dense layer over the summary vector. No
/// nonlinearity, no dropout — effectively linear regression.
pub fn build_m1(spec: &ModelSpec, seed: u64) -> Result<HitModel, ModelError> {
    let mut b = GraphBuilder::new();
    let x = b.input(INPUT_SUMMARY, &[2 * spec.n_mels])?;
    let out = b.dense("lr", x, 1)?;
    Ok(HitModel {
        spec: spec.clone(),
        graph: b.finish(out, seed)?,
    })
}

/// m4: a single 50 → 1 dense layer over tag activations.
pub fn build_m4(spec: &ModelSpec, seed: u64) -> Result<HitModel, ModelError> {
    let mut b = GraphBuilder::new();
    let x = b.input(INPUT_TAGS, &[TAG_DIM])?;
    let out = b.dense("lr", x, 1)?;
    Ok(HitModel {
        spec: spec.clone(),
        graph: b.finish(out, seed)?,
    })
}

/// The shared fully-convolutional tail: 1×4 convolution, the late 1×1
/// stack (ReLU on hidden layers, linear single-map output, dropout after
/// each late conv), global average pooling over time.
fn fc_tail(
    b: &mut GraphBuilder,
    input: NodeId,
    spec: &ModelSpec,
) -> Result<NodeId, ModelError> {
    let maps = &spec.feature_maps;
    let c2 = b.conv2d("conv_time", input, maps.early, (1, 4), (0, 0))?;
    let mut cur = b.relu("conv_time_relu", c2)?;
    for (i, &units) in maps.late_hidden.iter().enumerate() {
        let c = b.conv2d(&format!("late{}", i + 1), cur, units, (1, 1), (0, 0))?;
        let r = b.relu(&format!("late{}_relu", i + 1), c)?;
        cur = b.dropout(&format!("late{}_drop", i + 1), r, spec.dropout_rate)?;
    }
    let head = b.conv2d("late_out", cur, 1, (1, 1), (0, 0))?;
    let head = b.dropout("late_out_drop", head, spec.dropout_rate)?;
    Ok(b.global_avg_pool_time("pool", head)?)
}

/// m2: 128×4 then 1×4 early convolutions, late 1×1 stack, global average
/// pool. Fully convolutional — no dense layers anywhere.
pub fn build_m2(spec: &ModelSpec, seed: u64) -> Result<HitModel, ModelError> {
    let mut b = GraphBuilder::new();
    let x = b.input(INPUT_MEL, &[1, spec.n_mels, spec.n_frames])?;
    let c1 = b.conv2d("conv1", x, spec.feature_maps.early, (spec.n_mels, 4), (0, 0))?;
    let r1 = b.relu("conv1_relu", c1)?;
    let out = fc_tail(&mut b, r1, spec)?;
    Ok(HitModel {
        spec: spec.clone(),
        graph: b.finish(out, seed)?,
    })
}

/// m3: three parallel early convolutions at different scales — 128×4 on
/// the raw input, 132×8 and 140×16 on zero-padded input (2 and 6 rows and
/// columns per side respectively, so every branch emits height 1 and time
/// length T−3) — concatenated channel-wise, then the m2 tail.
pub fn build_m3(spec: &ModelSpec, seed: u64) -> Result<HitModel, ModelError> {
    let mut b = GraphBuilder::new();
    let x = b.input(INPUT_MEL, &[1, spec.n_mels, spec.n_frames])?;
    let maps = spec.feature_maps.early;
    let c1 = b.conv2d("branch_a", x, maps, (spec.n_mels, 4), (0, 0))?;
    let r1 = b.relu("branch_a_relu", c1)?;
    let c2 = b.conv2d("branch_b", x, maps, (spec.n_mels + 4, 8), (2, 2))?;
    let r2 = b.relu("branch_b_relu", c2)?;
    let c3 = b.conv2d("branch_c", x, maps, (spec.n_mels + 12, 16), (6, 6))?;
    let r3 = b.relu("branch_c_relu", c3)?;
    let cat = b.concat_channels("inception", &[r1, r2, r3])?;
    let out = fc_tail(&mut b, cat, spec)?;
    Ok(HitModel {
        spec: spec.clone(),
        graph: b.finish(out, seed)?,
    })
}

/// Compose two scalar-output branches into the joint model
/// `w·f1 + (1−w)·f2`, keeping their trained parameters. `f1` is the audio
/// branch (m2 or m3), `f2` the tag-LR branch (m4).
pub fn build_joint(audio: &HitModel, tag_lr: &HitModel, w_init: f64) -> Result<HitModel, ModelError> {
    let method = match audio.method() {
        Method::M2 => Method::M5,
        Method::M3 => Method::M6,
        other => {
            return Err(ModelError::Spec(format!(
                "joint audio branch must be m2 or m3, got {other}"
            )))
        }
    };
    if tag_lr.method() != Method::M4 {
        return Err(ModelError::Spec(format!(
            "joint tag branch must be m4, got {}",
            tag_lr.method()
        )));
    }
    let mut b = GraphBuilder::new();
    let f1 = b.absorb(&audio.graph, "f1.")?;
    let f2 = b.absorb(&tag_lr.graph, "f2.")?;
    let out = b.blend("blend", f1, f2, w_init)?;
    let graph = b.finish(out, 0)?;
    let mut spec = audio.spec.clone();
    spec.method = method;
    spec.w_init = w_init;
    Ok(HitModel { spec, graph })
}

/// Features available for one song; each model picks what it needs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelInputs<'a> {
    pub summary: Option<&'a FeatureVector>,
    pub mel: Option<&'a MelSpectrogram>,
    pub tags: Option<&'a TagVector>,
}

impl<'a> ModelInputs<'a> {
    /// Per-example tensors for the named graph inputs.
    pub fn example_tensors(
        &self,
        required: &[&'static str],
    ) -> Result<Vec<(String, Tensor)>, ModelError> {
        let mut out = Vec::with_capacity(required.len());
        for &name in required {
            let tensor = match name {
                INPUT_SUMMARY => {
                    let f = self.summary.ok_or(ModelError::MissingFeature(INPUT_SUMMARY))?;
                    Tensor::vector(&f.values)
                }
                INPUT_MEL => {
                    let m = self.mel.ok_or(ModelError::MissingFeature(INPUT_MEL))?;
                    Tensor::from_vec(&[1, m.n_mels(), m.n_frames()], m.data().to_vec())
                        .expect("spectrogram data matches its declared shape")
                }
                INPUT_TAGS => {
                    let t = self.tags.ok_or(ModelError::MissingFeature(INPUT_TAGS))?;
                    Tensor::vector(t.values())
                }
                other => return Err(ModelError::Spec(format!("unknown input kind '{other}'"))),
            };
            out.push((name.to_string(), tensor));
        }
        Ok(out)
    }
}

/// Deterministic eval-mode prediction for one song.
pub fn predict(model: &HitModel, inputs: &ModelInputs) -> Result<f64, ModelError> {
    let tensors = inputs.example_tensors(model.method().required_inputs())?;
    let mut batch = Batch::new();
    for (name, t) in tensors {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        batch.insert(&name, Tensor::from_vec(&shape, t.into_data()).expect("shape product unchanged"));
    }
    let pass = model.graph.forward(&batch, Mode::Eval, None)?;
    Ok(pass.predictions()[0])
}
