//! The nine classifier architectures.
//!
//! Every model maps `[B, 12, l]` to raw logits `[B, k]`. Heads are registered
//! under the `head.` prefix so they can be swapped and frozen by name.

mod cnn;
mod eegnet;
mod resnet;
mod sequence;

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, ParamKind, ParamStore, Var};
use crate::error::{Error, Result};
use crate::labels::Task;
use crate::nn::{Builder, Ctx, Linear};
use crate::signal::LEADS;
use crate::tensor::Tensor;

pub use cnn::{AlexNet1d, Vgg11Bn1d};
pub use eegnet::EegNet2d;
pub use resnet::{BasicBlock, ResNet18Backbone, ResNet18_1d};
pub use sequence::{AttResNet, Crnn, ResTransformer, TransformerEnc};

/// Name prefix of every head parameter.
pub const HEAD_PREFIX: &str = "head.";

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "alexnet1d")]
    AlexNet1D,
    #[serde(rename = "vgg11bn1d")]
    VGG11bn1D,
    #[serde(rename = "resnet18_1d")]
    ResNet18_1D,
    #[serde(rename = "eegnet2d")]
    EEGNet2D,
    #[serde(rename = "crnn_lstm")]
    CRNN_LSTM,
    #[serde(rename = "crnn_gru")]
    CRNN_GRU,
    #[serde(rename = "attresnet")]
    AttResNet,
    #[serde(rename = "transformer_enc")]
    TransformerEnc,
    #[serde(rename = "restransformer")]
    ResTransformer,
}

impl Architecture {
    pub const ALL: [Architecture; 9] = [
        Architecture::AlexNet1D,
        Architecture::VGG11bn1D,
        Architecture::ResNet18_1D,
        Architecture::EEGNet2D,
        Architecture::CRNN_LSTM,
        Architecture::CRNN_GRU,
        Architecture::AttResNet,
        Architecture::TransformerEnc,
        Architecture::ResTransformer,
    ];

    /// Config-file name, e.g. `crnn_gru`.
    pub fn key(self) -> &'static str {
        match self {
            Architecture::AlexNet1D => "alexnet1d",
            Architecture::VGG11bn1D => "vgg11bn1d",
            Architecture::ResNet18_1D => "resnet18_1d",
            Architecture::EEGNet2D => "eegnet2d",
            Architecture::CRNN_LSTM => "crnn_lstm",
            Architecture::CRNN_GRU => "crnn_gru",
            Architecture::AttResNet => "attresnet",
            Architecture::TransformerEnc => "transformer_enc",
            Architecture::ResTransformer => "restransformer",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.key() == key)
            .ok_or_else(|| {
                let known: Vec<&str> = Architecture::ALL.iter().map(|a| a.key()).collect();
                Error::invalid(format!("unknown architecture `{key}`; known: {}", known.join(", ")))
            })
    }

    /// Dropout used when the spec leaves it unset.
    pub fn default_dropout(self) -> f64 {
        match self {
            Architecture::AlexNet1D | Architecture::VGG11bn1D => 0.5,
            Architecture::EEGNet2D => 0.25,
            Architecture::ResNet18_1D => 0.0,
            _ => 0.1,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Task head: output count follows the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub task: Task,
}

impl HeadSpec {
    pub fn outputs(&self) -> usize {
        self.task.classes()
    }
}

/// Hyperparameters shared by all architectures; each uses the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Channels of the first convolution stage.
    pub width: usize,
    /// Basic blocks per ResNet stage.
    pub blocks: [usize; 4],
    /// Recurrent hidden size.
    pub hidden: usize,
    pub rnn_layers: usize,
    pub embed: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub ff_dim: usize,
    /// Width of the AlexNet/VGG fully connected layers.
    pub fc_hidden: usize,
    /// `None` picks [`Architecture::default_dropout`].
    pub dropout: Option<f64>,
    /// Transformer stem kernel and stride.
    pub patch: usize,
    pub max_positions: usize,
    pub eegnet_f1: usize,
    pub eegnet_d: usize,
    pub eegnet_f2: usize,
    /// `fs / 2` at 500 Hz.
    pub temporal_kernel: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            width: 64,
            blocks: [2, 2, 2, 2],
            hidden: 256,
            rnn_layers: 2,
            embed: 512,
            heads: 4,
            encoder_layers: 4,
            ff_dim: 1024,
            fc_hidden: 1024,
            dropout: None,
            patch: 16,
            max_positions: 512,
            eegnet_f1: 8,
            eegnet_d: 2,
            eegnet_f2: 16,
            temporal_kernel: 250,
        }
    }
}

impl HyperParams {
    /// Small widths for tests and gradient checks.
    pub fn tiny() -> Self {
        HyperParams {
            width: 4,
            blocks: [1, 1, 1, 1],
            hidden: 8,
            rnn_layers: 1,
            embed: 8,
            heads: 2,
            encoder_layers: 1,
            ff_dim: 16,
            fc_hidden: 8,
            dropout: Some(0.0),
            patch: 16,
            max_positions: 256,
            eegnet_f1: 2,
            eegnet_d: 2,
            eegnet_f2: 4,
            temporal_kernel: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub head: HeadSpec,
    #[serde(default)]
    pub hyper: HyperParams,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, task: Task) -> Self {
        ModelSpec {
            architecture,
            head: HeadSpec { task },
            hyper: HyperParams::default(),
        }
    }

    pub fn tiny(architecture: Architecture, task: Task) -> Self {
        ModelSpec {
            hyper: HyperParams::tiny(),
            ..Self::new(architecture, task)
        }
    }

    pub fn dropout(&self) -> f64 {
        self.hyper.dropout.unwrap_or(self.architecture.default_dropout())
    }

    pub fn validate(&self) -> Result<()> {
        self.head.task.validate()?;
        let h = &self.hyper;
        let positive = [
            ("width", h.width),
            ("hidden", h.hidden),
            ("rnn_layers", h.rnn_layers),
            ("embed", h.embed),
            ("heads", h.heads),
            ("ff_dim", h.ff_dim),
            ("fc_hidden", h.fc_hidden),
            ("patch", h.patch),
            ("max_positions", h.max_positions),
            ("eegnet_f1", h.eegnet_f1),
            ("eegnet_d", h.eegnet_d),
            ("eegnet_f2", h.eegnet_f2),
            ("temporal_kernel", h.temporal_kernel),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("hyperparameter `{name}` must be positive")));
        }
        if h.blocks.contains(&0) {
            return Err(Error::invalid("every ResNet stage needs at least one block"));
        }
        if h.embed % h.heads != 0 {
            return Err(Error::invalid(format!("embed {} is not divisible by {} heads", h.embed, h.heads)));
        }
        let p = self.dropout();
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout {p} must lie in [0, 1)")));
        }
        Ok(())
    }

    /// Canonical JSON; every field is always present so the text is stable.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("model spec serializes")
    }

    /// SHA-256 of [`ModelSpec::canonical_json`], hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Convolution output length, requiring the input to cover the whole kernel
/// so that no window sees padding alone.
pub(crate) fn valid_len(conv: &crate::nn::Conv1d, t: usize) -> Option<usize> {
    if t < conv.kernel {
        return None;
    }
    conv.out_len(t)
}

pub(crate) fn pool_len(t: usize, p: crate::autodiff::PoolGeometry) -> Option<usize> {
    if t < p.kernel {
        return None;
    }
    crate::autodiff::window_len(t, p.kernel, p.stride, p.padding)
}

/// Architecture-specific forward pass.
pub(crate) trait Network: fmt::Debug + Send + Sync {
    /// `[B, 12, l]` to `[B, features]` before the head.
    fn features(&self, cx: &mut Ctx<'_>, x: Var) -> Result<Var>;
    /// Length of the final feature sequence for input length `l`, `None` if too short.
    fn feature_len(&self, l: usize) -> Option<usize>;
    /// Longest supported input, if bounded.
    fn max_len(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
    pub trainable: bool,
}

/// Per-tensor listing in registration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    /// Weights only; batchnorm running statistics are listed in `buffers`.
    pub rows: Vec<SummaryRow>,
    pub buffers: Vec<SummaryRow>,
    pub total: usize,
}

impl fmt::Display for ParameterSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        writeln!(f, "{:<w$}  {:<20}  {:>10}", "name", "shape", "count")?;
        for r in &self.rows {
            writeln!(f, "{:<w$}  {:<20}  {:>10}", r.name, format!("{:?}", r.shape), r.count)?;
        }
        write!(f, "total trainable parameters: {}", self.total)
    }
}

/// A built network together with its parameters.
#[derive(Debug)]
pub struct Model {
    spec: ModelSpec,
    seed: u64,
    pub store: ParamStore,
    net: Box<dyn Network>,
    head: Linear,
    min_len: usize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        let mut m = build(&self.spec, self.seed).expect("a built spec rebuilds");
        m.store = self.store.clone();
        m
    }
}

/// Builds `spec` with parameters initialized from `seed`.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let (net, feat): (Box<dyn Network>, usize) = {
        let mut b = Builder::new(&mut store, seed);
        let h = &spec.hyper;
        let p = spec.dropout();
        match spec.architecture {
            Architecture::AlexNet1D => {
                let n = AlexNet1d::new(&mut b, h, p)?;
                let d = n.out_features();
                (Box::new(n), d)
            }
            Architecture::VGG11bn1D => {
                let n = Vgg11Bn1d::new(&mut b, h, p)?;
                let d = n.out_features();
                (Box::new(n), d)
            }
            Architecture::ResNet18_1D => {
                let n = ResNet18_1d::new(&mut b, h)?;
                let d = n.out_features();
                (Box::new(n), d)
            }
            Architecture::EEGNet2D => {
                let n = EegNet2d::new(&mut b, h, p)?;
                let d = n.out_features();
                (Box::new(n), d)
            }
            Architecture::CRNN_LSTM | Architecture::CRNN_GRU => {
                let kind = if spec.architecture == Architecture::CRNN_LSTM {
                    crate::nn::RnnKind::Lstm
                } else {
                    crate::nn::RnnKind::Gru
                };
                let n = Crnn::new(&mut b, h, kind, p)?;
                let d = n.out_features();
                (Box::new(n), d)
            }
            Architecture::AttResNet => {
                let n = AttResNet::new(&mut b, h, p)?;
                let d = n.out_features();
                (Box::new(n), d)
            }
            Architecture::TransformerEnc => {
                let n = TransformerEnc::new(&mut b, h, p)?;
                let d = n.out_features();
                (Box::new(n), d)
            }
            Architecture::ResTransformer => {
                let n = ResTransformer::new(&mut b, h, p)?;
                let d = n.out_features();
                (Box::new(n), d)
            }
        }
    };
    let head = {
        let mut b = Builder::new(&mut store, seed);
        Linear::xavier(&mut b, "head", feat, spec.head.outputs())?
    };
    let min_len = (1..=1 << 20)
        .find(|&l| net.feature_len(l).is_some_and(|n| n >= 1))
        .ok_or_else(|| Error::invalid("architecture accepts no input length"))?;
    Ok(Model {
        spec: spec.clone(),
        seed,
        store,
        net,
        head,
        min_len,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> String {
        self.spec.fingerprint()
    }

    pub fn outputs(&self) -> usize {
        self.spec.head.outputs()
    }

    /// Shortest input length the architecture accepts.
    pub fn min_length(&self) -> usize {
        self.min_len
    }

    pub fn max_length(&self) -> Option<usize> {
        self.net.max_len()
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with(HEAD_PREFIX)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != LEADS {
            return Err(Error::shape("model", format!("expected [B, {LEADS}, l], got {shape:?}")));
        }
        if shape[0] == 0 {
            return Err(Error::shape("model", "empty batch"));
        }
        if shape[2] < self.min_len {
            return Err(Error::shape(
                "model",
                format!("{} needs at least {} samples, got {}", self.spec.architecture, self.min_len, shape[2]),
            ));
        }
        if let Some(max) = self.net.max_len() {
            if shape[2] > max {
                return Err(Error::shape(
                    "model",
                    format!("{} accepts at most {max} samples, got {}", self.spec.architecture, shape[2]),
                ));
            }
        }
        Ok(())
    }

    /// Logits `[B, k]` recorded on `g`. `train` enables dropout and batch statistics.
    pub fn forward(&mut self, g: &Graph, x: Var, train: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
        let mut store = std::mem::take(&mut self.store);
        let out = self.forward_with(&mut store, g, x, train, rng);
        self.store = store;
        out
    }

    /// Forward pass reading parameters from `store`, which must share this model's layout.
    pub fn forward_with(&self, store: &mut ParamStore, g: &Graph, x: Var, train: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
        self.check_input(&g.shape(x))?;
        let mut cx = Ctx { g, store, train, rng };
        let f = self.net.features(&mut cx, x)?;
        self.head.forward(&mut cx, f)
    }

    /// Eval-mode logits without recording gradients.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::no_grad();
        let xv = g.constant(x.clone());
        let mut rng = crate::rng::substream(0, "predict", 0);
        let y = self.forward(&g, xv, false, &mut rng)?;
        Ok((*g.value(y)).clone())
    }

    pub fn summary(&self) -> ParameterSummary {
        let row = |p: &crate::autodiff::Parameter| SummaryRow {
            name: p.name().to_string(),
            shape: p.value().shape().to_vec(),
            count: p.value().len(),
            trainable: p.trainable(),
        };
        let rows: Vec<SummaryRow> = self.store.iter().filter(|(_, p)| p.kind() == ParamKind::Weight).map(|(_, p)| row(p)).collect();
        let buffers = self.store.iter().filter(|(_, p)| p.kind() == ParamKind::Buffer).map(|(_, p)| row(p)).collect();
        let total = rows.iter().map(|r| r.count).sum();
        ParameterSummary { rows, buffers, total }
    }
}
