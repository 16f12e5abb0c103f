//! The full prediction model: both graph encoders plus a two-layer head that
//! maps `[I′ₛ ; I′ₚ ; projected current-utterance text]` to
//! `(pitch, energy)`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureDims, TrainingSample};
use crate::encoder::{
    encode_backward, encode_traced, EncoderOptions, EncoderTrace, Linear, ModelError,
    ProjectionParams, SageParams,
};
use crate::graph::{build, Modality};
use crate::linalg::{self, Matrix};

pub const MODEL_FORMAT: &str = "ficg-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum AblationMode {
    #[default]
    Full,
    NoSIG,
    NoPIG,
    NoBoth,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Full,
        AblationMode::NoSIG,
        AblationMode::NoPIG,
        AblationMode::NoBoth,
    ];

    pub fn uses_sig(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoPIG)
    }

    pub fn uses_pig(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::NoSIG)
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "Full",
            AblationMode::NoSIG => "NoSIG",
            AblationMode::NoPIG => "NoPIG",
            AblationMode::NoBoth => "NoBoth",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "full" => Ok(AblationMode::Full),
            "nosig" => Ok(AblationMode::NoSIG),
            "nopig" => Ok(AblationMode::NoPIG),
            "noboth" => Ok(AblationMode::NoBoth),
            _ => Err(format!("unknown ablation mode {s:?} (Full, NoSIG, NoPIG, NoBoth)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `3·d_model × d_hidden`, ReLU after.
    pub hidden: Linear,
    /// `d_hidden × 2`: pitch, energy.
    pub output: Linear,
}

/// All trainable parameters plus the encoder options they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub options: EncoderOptions,
    pub projection: ProjectionParams,
    pub sage_semantic: SageParams,
    pub sage_prosody: SageParams,
    pub head: HeadParams,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    /// Uniform(±1/√fan_in) weights, zero biases, zero speaker embeddings.
    /// Draw order is fixed so initialization is reproducible from a seed.
    pub fn init<R: Rng + ?Sized>(
        dims: &FeatureDims,
        n_speakers: usize,
        d_model: usize,
        d_hidden: usize,
        options: EncoderOptions,
        rng: &mut R,
    ) -> Self {
        let projection = ProjectionParams {
            word_text: Linear::init(dims.word_text, d_model, rng),
            word_speech: Linear::init(dims.word_speech, d_model, rng),
            utt_text: Linear::init(dims.utt_text, d_model, rng),
            utt_speech: Linear::init(dims.utt_speech, d_model, rng),
            speaker: Matrix::zeros(n_speakers, d_model),
        };
        let sage_semantic = SageParams::init(d_model, rng);
        let sage_prosody = SageParams::init(d_model, rng);
        let head = HeadParams {
            hidden: Linear::init(3 * d_model, d_hidden, rng),
            output: Linear::init(d_hidden, 2, rng),
        };
        Self {
            options,
            projection,
            sage_semantic,
            sage_prosody,
            head,
        }
    }

    pub fn d_model(&self) -> usize {
        self.projection.d_model()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Every trainable tensor, in a fixed order matching [`Self::tensor_names`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let p = &self.projection;
        let mut out: Vec<&[f64]> = Vec::with_capacity(24);
        for lin in [&p.word_text, &p.word_speech, &p.utt_text, &p.utt_speech] {
            out.push(&lin.weight.data);
            out.push(&lin.bias);
        }
        out.push(&p.speaker.data);
        for s in [&self.sage_semantic, &self.sage_prosody] {
            out.extend([
                &s.w_self.data[..],
                &s.w_backbone.data,
                &s.w_word_text.data,
                &s.w_word_speech.data,
                &s.bias,
            ]);
        }
        for lin in [&self.head.hidden, &self.head.output] {
            out.push(&lin.weight.data);
            out.push(&lin.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let p = &mut self.projection;
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(24);
        for lin in [&mut p.word_text, &mut p.word_speech, &mut p.utt_text, &mut p.utt_speech] {
            out.push(&mut lin.weight.data);
            out.push(&mut lin.bias);
        }
        out.push(&mut p.speaker.data);
        for s in [&mut self.sage_semantic, &mut self.sage_prosody] {
            out.push(&mut s.w_self.data);
            out.push(&mut s.w_backbone.data);
            out.push(&mut s.w_word_text.data);
            out.push(&mut s.w_word_speech.data);
            out.push(&mut s.bias);
        }
        for lin in [&mut self.head.hidden, &mut self.head.output] {
            out.push(&mut lin.weight.data);
            out.push(&mut lin.bias);
        }
        out
    }

    pub fn tensor_names() -> Vec<String> {
        let mut names = Vec::new();
        for src in ["word_text", "word_speech", "utt_text", "utt_speech"] {
            names.push(format!("projection.{src}.weight"));
            names.push(format!("projection.{src}.bias"));
        }
        names.push("projection.speaker".into());
        for g in ["sage_semantic", "sage_prosody"] {
            for t in ["w_self", "w_backbone", "w_word_text", "w_word_speech", "bias"] {
                names.push(format!("{g}.{t}"));
            }
        }
        for l in ["hidden", "output"] {
            names.push(format!("head.{l}.weight"));
            names.push(format!("head.{l}.bias"));
        }
        names
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: AblationMode,
    history_shape: Vec<usize>,
    sig: Option<EncoderTrace>,
    pig: Option<EncoderTrace>,
    head_input: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    current_raw: Vec<f64>,
    pub pitch_hat: f64,
    pub energy_hat: f64,
}

impl ForwardCache {
    pub fn prediction(&self) -> (f64, f64) {
        (self.pitch_hat, self.energy_hat)
    }

    /// `[I′ₛ ; I′ₚ ; current]` as fed to the head.
    pub fn head_input(&self) -> &[f64] {
        &self.head_input
    }
}

fn history_shape(sample: &TrainingSample<'_>) -> Vec<usize> {
    sample.history.iter().map(|u| u.word_count()).collect()
}

/// Projected current-utterance text feature.
pub fn current_representation(sample: &TrainingSample<'_>, params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let raw = sample.current.utt_text_feat.as_slice();
    let lin = &params.projection.utt_text;
    if raw.len() != lin.d_in() {
        return Err(ModelError::DimensionMismatch {
            what: "current utt_text",
            expected: lin.d_in(),
            found: raw.len(),
        });
    }
    Ok(lin.apply(raw))
}

/// Head forward on explicit inputs. Returns `(pre-activation, hidden, output)`.
pub fn head_forward(
    head: &HeadParams,
    interaction_semantic: &[f64],
    interaction_prosody: &[f64],
    current: &[f64],
) -> (Vec<f64>, Vec<f64>, [f64; 2]) {
    let mut x = Vec::with_capacity(interaction_semantic.len() * 3);
    x.extend_from_slice(interaction_semantic);
    x.extend_from_slice(interaction_prosody);
    x.extend_from_slice(current);
    let pre = head.hidden.apply(&x);
    let mut hidden = pre.clone();
    linalg::relu_in_place(&mut hidden);
    let y = head.output.apply(&hidden);
    (pre, hidden, [y[0], y[1]])
}

/// Predicts `(pitch, energy)` for one sample. Graphs disabled by `mode`
/// contribute a zero vector of the same width.
pub fn forward(
    sample: &TrainingSample<'_>,
    params: &ModelParams,
    mode: AblationMode,
) -> Result<ForwardCache, ModelError> {
    let d = params.d_model();
    let encode_graph = |modality: Modality, sage: &SageParams| -> Result<(Vec<f64>, EncoderTrace), ModelError> {
        let graph = build(sample.history, modality)?;
        let (out, trace) = encode_traced(&graph, &params.projection, sage, &params.options)?;
        Ok((out.pooled, trace))
    };
    let (i_s, sig) = if mode.uses_sig() {
        let (v, t) = encode_graph(Modality::Semantic, &params.sage_semantic)?;
        (v, Some(t))
    } else {
        (vec![0.0; d], None)
    };
    let (i_p, pig) = if mode.uses_pig() {
        let (v, t) = encode_graph(Modality::Prosody, &params.sage_prosody)?;
        (v, Some(t))
    } else {
        (vec![0.0; d], None)
    };
    let current = current_representation(sample, params)?;
    let expected = params.head.hidden.d_in();
    if 3 * d != expected {
        return Err(ModelError::DimensionMismatch {
            what: "head input",
            expected,
            found: 3 * d,
        });
    }
    let (hidden_pre, hidden, [pitch_hat, energy_hat]) = head_forward(&params.head, &i_s, &i_p, &current);
    let mut head_input = i_s;
    head_input.extend(i_p);
    head_input.extend(current);
    Ok(ForwardCache {
        mode,
        history_shape: history_shape(sample),
        sig,
        pig,
        head_input,
        hidden_pre,
        hidden,
        current_raw: sample.current.utt_text_feat.0.clone(),
        pitch_hat,
        energy_hat,
    })
}

/// Per-sample loss `((p̂−p)² + (ê−e)²) / 2`.
pub fn sample_loss(cache: &ForwardCache, sample: &TrainingSample<'_>) -> f64 {
    let dp = cache.pitch_hat - sample.current.pitch_target;
    let de = cache.energy_hat - sample.current.energy_target;
    (dp * dp + de * de) / 2.0
}

/// Mean over samples of `((p̂−p)² + (ê−e)²) / 2`.
pub fn mse_loss(predictions: &[(f64, f64)], targets: &[(f64, f64)]) -> Result<f64, ModelError> {
    if predictions.is_empty() {
        return Err(ModelError::EmptyPool);
    }
    if predictions.len() != targets.len() {
        return Err(ModelError::DimensionMismatch {
            what: "mse_loss batch",
            expected: predictions.len(),
            found: targets.len(),
        });
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|((p, e), (tp, te))| ((p - tp).powi(2) + (e - te).powi(2)) / 2.0)
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Gradient of the single-sample loss.
pub fn backward(
    sample: &TrainingSample<'_>,
    params: &ModelParams,
    mode: AblationMode,
    cache: &ForwardCache,
) -> Result<Gradients, ModelError> {
    let mut grads = params.zeros_like();
    backward_into(sample, params, mode, cache, 1.0, &mut grads)?;
    Ok(grads)
}

/// Adds `scale ·` the single-sample loss gradient into `grads`.
pub fn backward_into(
    sample: &TrainingSample<'_>,
    params: &ModelParams,
    mode: AblationMode,
    cache: &ForwardCache,
    scale: f64,
    grads: &mut Gradients,
) -> Result<(), ModelError> {
    if cache.mode != mode {
        return Err(ModelError::StaleCache("ablation mode differs"));
    }
    if cache.history_shape != history_shape(sample) || cache.current_raw != sample.current.utt_text_feat.0 {
        return Err(ModelError::StaleCache("sample differs"));
    }
    let d = params.d_model();
    let d_out = [
        scale * (cache.pitch_hat - sample.current.pitch_target),
        scale * (cache.energy_hat - sample.current.energy_target),
    ];

    let head = &params.head;
    grads.head.output.accumulate_grad(&cache.hidden, &d_out);
    let mut d_hidden = vec![0.0; head.output.d_in()];
    head.output.weight.vec_mul_t_add(&d_out, &mut d_hidden);
    for (g, &p) in d_hidden.iter_mut().zip(&cache.hidden_pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    grads.head.hidden.accumulate_grad(&cache.head_input, &d_hidden);
    let mut d_input = vec![0.0; 3 * d];
    head.hidden.weight.vec_mul_t_add(&d_hidden, &mut d_input);

    let (d_is, rest) = d_input.split_at(d);
    let (d_ip, d_cur) = rest.split_at(d);
    grads.projection.utt_text.accumulate_grad(&cache.current_raw, d_cur);

    if let Some(trace) = &cache.sig {
        encode_backward(
            trace,
            d_is,
            &params.sage_semantic,
            &params.options,
            &mut grads.projection,
            &mut grads.sage_semantic,
        );
    }
    if let Some(trace) = &cache.pig {
        encode_backward(
            trace,
            d_ip,
            &params.sage_prosody,
            &params.options,
            &mut grads.projection,
            &mut grads.sage_prosody,
        );
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint parameters are inconsistent: {0}")]
    Shape(String),
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    params: ModelParams,
}

/// Serializes parameters. Floats use the shortest round-trip representation,
/// so reloading is bit-exact.
pub fn params_to_string(params: &ModelParams) -> String {
    let file = CheckpointFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        params: params.clone(),
    };
    let mut s = serde_json::to_string(&file).expect("params serialize");
    s.push('\n');
    s
}

pub fn params_from_str(text: &str) -> Result<ModelParams, CheckpointError> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != MODEL_FORMAT {
        return Err(CheckpointError::Header(format!("format {:?}", file.format)));
    }
    if file.version != MODEL_VERSION {
        return Err(CheckpointError::Header(format!("version {}", file.version)));
    }
    check_shapes(&file.params).map_err(CheckpointError::Shape)?;
    Ok(file.params)
}

fn check_shapes(p: &ModelParams) -> Result<(), String> {
    let d = p.d_model();
    let lin_ok = |l: &Linear| l.weight.data.len() == l.weight.rows * l.weight.cols && l.bias.len() == l.weight.cols;
    let pr = &p.projection;
    for (name, l) in [
        ("word_text", &pr.word_text),
        ("word_speech", &pr.word_speech),
        ("utt_text", &pr.utt_text),
        ("utt_speech", &pr.utt_speech),
    ] {
        if !lin_ok(l) || l.d_out() != d {
            return Err(format!("projection {name}"));
        }
    }
    if pr.speaker.cols != d || pr.speaker.data.len() != pr.speaker.rows * d {
        return Err("speaker table".into());
    }
    for s in [&p.sage_semantic, &p.sage_prosody] {
        for m in [&s.w_self, &s.w_backbone, &s.w_word_text, &s.w_word_speech] {
            if m.rows != d || m.cols != d || m.data.len() != d * d {
                return Err("sage weights".into());
            }
        }
        if s.bias.len() != d {
            return Err("sage bias".into());
        }
    }
    if !lin_ok(&p.head.hidden) || p.head.hidden.d_in() != 3 * d {
        return Err("head hidden layer".into());
    }
    if !lin_ok(&p.head.output) || p.head.output.d_in() != p.head.hidden.d_out() || p.head.output.d_out() != 2 {
        return Err("head output layer".into());
    }
    if !p.is_finite() {
        return Err("non-finite parameter".into());
    }
    Ok(())
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, params_to_string(params)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams, CheckpointError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    params_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (crate::data::Dataset, ModelParams) {
        let ds = generate_synthetic(&SynthConfig {
            n_dialogues: 2,
            turns_per_dialogue: 4,
            words_per_utterance: 3,
            feature_dims: FeatureDims::uniform(4),
            seed: 1,
            ..SynthConfig::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ModelParams::init(&ds.dims, 2, 6, 5, EncoderOptions::default(), &mut rng);
        params.projection.speaker = Matrix::uniform_fan_in(2, 6, &mut rng);
        (ds, params)
    }

    #[test]
    fn no_sig_equals_full_with_zeroed_semantic_input() {
        let (ds, params) = setup();
        for s in ds.samples(None) {
            let full = forward(&s, &params, AblationMode::Full).unwrap();
            let nosig = forward(&s, &params, AblationMode::NoSIG).unwrap();
            let d = params.d_model();
            let x = full.head_input();
            let (_, _, y) = head_forward(&params.head, &vec![0.0; d], &x[d..2 * d], &x[2 * d..]);
            assert_eq!(y, [nosig.pitch_hat, nosig.energy_hat]);
        }
    }

    #[test]
    fn zero_head_outputs_bias() {
        let (ds, mut params) = setup();
        params.head.hidden = Linear::zeros(params.head.hidden.d_in(), params.head.hidden.d_out());
        params.head.output.weight = Matrix::zeros(params.head.output.d_in(), 2);
        params.head.output.bias = vec![0.25, -1.5];
        for s in ds.samples(None) {
            assert_eq!(forward(&s, &params, AblationMode::Full).unwrap().prediction(), (0.25, -1.5));
        }
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse_loss(&[(1.0, 2.0)], &[(1.0, 2.0)]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[(1.0, 2.0)], &[(0.0, 2.0)]).unwrap(), 0.5);
        assert!(mse_loss(&[], &[]).is_err());
        assert!(mse_loss(&[(0.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn output_bias_gradient_is_residual() {
        let (ds, params) = setup();
        let s = ds.samples(None)[2];
        let c = forward(&s, &params, AblationMode::Full).unwrap();
        let g = backward(&s, &params, AblationMode::Full, &c).unwrap();
        assert_eq!(
            g.head.output.bias,
            vec![c.pitch_hat - s.current.pitch_target, c.energy_hat - s.current.energy_target]
        );
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let (ds, params) = setup();
        let s = ds.samples(None)[1];
        let c = forward(&s, &params, AblationMode::Full).unwrap();
        let mut current = s.current.clone();
        current.pitch_target = c.pitch_hat;
        current.energy_target = c.energy_hat;
        let s2 = TrainingSample {
            history: s.history,
            current: &current,
        };
        let g = backward(&s2, &params, AblationMode::Full, &c).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn ablated_graph_gets_no_gradient() {
        let (ds, params) = setup();
        let s = ds.samples(None)[3];
        let c = forward(&s, &params, AblationMode::NoSIG).unwrap();
        let g = backward(&s, &params, AblationMode::NoSIG, &c).unwrap();
        assert!(g.sage_semantic.w_self.data.iter().all(|&v| v == 0.0));
        assert!(g.projection.speaker.data.iter().all(|&v| v == 0.0));
        assert!(g.sage_prosody.w_backbone.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let (ds, params) = setup();
        let samples = ds.samples(None);
        let c = forward(&samples[0], &params, AblationMode::Full).unwrap();
        assert!(matches!(
            backward(&samples[0], &params, AblationMode::NoPIG, &c),
            Err(ModelError::StaleCache(_))
        ));
        assert!(matches!(
            backward(&samples[1], &params, AblationMode::Full, &c),
            Err(ModelError::StaleCache(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (_, params) = setup();
        let text = params_to_string(&params);
        let back = params_from_str(&text).unwrap();
        assert_eq!(back, params);
        assert_eq!(params_to_string(&back), text);
    }

    #[test]
    fn checkpoint_rejects_bad_shapes() {
        let (_, mut params) = setup();
        params.sage_prosody.bias.pop();
        assert!(matches!(
            params_from_str(&params_to_string(&params)),
            Err(CheckpointError::Shape(_))
        ));
    }

    #[test]
    fn tensor_names_cover_all_tensors() {
        let (_, params) = setup();
        assert_eq!(ModelParams::tensor_names().len(), params.tensors().len());
    }

    #[test]
    fn mode_parsing() {
        for m in AblationMode::ALL {
            assert_eq!(m.name().parse::<AblationMode>().unwrap(), m);
        }
        assert_eq!("no-sig".parse::<AblationMode>().unwrap(), AblationMode::NoSIG);
        assert!("none".parse::<AblationMode>().is_err());
    }
}
