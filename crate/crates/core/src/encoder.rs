//! Relational mean-aggregator encoder for interaction graphs.
//!
//! Backbone positions are updated in dialogue order. Position `i + 1` (or the
//! interaction node after position `J`) receives
//!
//! ```text
//! h = ReLU(W_self·self + W_backbone·F_i + W_wordtext·mean(Wt_i) + W_wordspeech·mean(Ws_i) + b)
//! ```
//!
//! where `F_i` is already updated when `i ≥ 2`, and the pooled output is the
//! mean of all `J + 1` backbone states with `F_1` left as projected.
//! Word nodes are static sources.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeKind, GraphError, InteractionGraph, Modality, NodeKind};
use crate::linalg::{self, Matrix};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("speaker id {speaker} outside embedding table of {n_speakers}")]
    SpeakerOutOfRange { speaker: usize, n_speakers: usize },
    #[error("update target has no neighbors")]
    NoNeighbors,
    #[error("cannot pool an empty set of vectors")]
    EmptyPool,
    #[error("forward cache does not match the inputs passed to backward: {0}")]
    StaleCache(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Affine map `x·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_in, d_out),
            bias: vec![0.0; d_out],
        }
    }

    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Matrix::uniform_fan_in(d_in, d_out, rng),
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        self.weight.vec_mul_add(x, &mut out);
        out
    }

    /// Accumulates parameter gradients for input `x` and output gradient `g`.
    pub fn accumulate_grad(&mut self, x: &[f64], g: &[f64]) {
        self.weight.add_outer(x, g);
        linalg::add_assign(&mut self.bias, g);
    }
}

/// Input projections from raw extractor dims to `d_model`, plus speaker
/// embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub word_text: Linear,
    pub word_speech: Linear,
    pub utt_text: Linear,
    pub utt_speech: Linear,
    /// `n_speakers × d_model`.
    pub speaker: Matrix,
}

impl ProjectionParams {
    pub fn d_model(&self) -> usize {
        self.word_text.d_out()
    }
}

/// Weights of one graph's relational SAGE update, shared across all backbone
/// steps of that graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageParams {
    pub w_self: Matrix,
    pub w_backbone: Matrix,
    pub w_word_text: Matrix,
    pub w_word_speech: Matrix,
    pub bias: Vec<f64>,
}

impl SageParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            w_self: Matrix::zeros(d, d),
            w_backbone: Matrix::zeros(d, d),
            w_word_text: Matrix::zeros(d, d),
            w_word_speech: Matrix::zeros(d, d),
            bias: vec![0.0; d],
        }
    }

    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self {
            w_self: Matrix::uniform_fan_in(d, d, rng),
            w_backbone: Matrix::uniform_fan_in(d, d, rng),
            w_word_text: Matrix::uniform_fan_in(d, d, rng),
            w_word_speech: Matrix::uniform_fan_in(d, d, rng),
            bias: vec![0.0; d],
        }
    }

    pub fn d_model(&self) -> usize {
        self.bias.len()
    }

    fn relation(&self, kind: EdgeKind) -> &Matrix {
        match kind {
            EdgeKind::BackboneBranch => &self.w_backbone,
            EdgeKind::WordSemanticBranch => &self.w_word_text,
            EdgeKind::WordProsodyBranch => &self.w_word_speech,
        }
    }

    fn relation_mut(&mut self, kind: EdgeKind) -> &mut Matrix {
        match kind {
            EdgeKind::BackboneBranch => &mut self.w_backbone,
            EdgeKind::WordSemanticBranch => &mut self.w_word_text,
            EdgeKind::WordProsodyBranch => &mut self.w_word_speech,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderOptions {
    /// Number of left-to-right sweeps along the backbone.
    pub passes: usize,
    /// L2-normalize each updated state.
    pub normalize: bool,
    /// Also add speaker embeddings to prosody-graph backbone nodes.
    pub speaker_on_prosody: bool,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        Self {
            passes: 1,
            normalize: false,
            speaker_on_prosody: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// Mean of `backbone_states`: I′ₛ or I′ₚ.
    pub pooled: Vec<f64>,
    /// Final `F_1 … F_J` followed by the interaction node.
    pub backbone_states: Vec<Vec<f64>>,
}

/// Projects every node's raw feature into model space, indexed by node id.
/// The interaction node stays zero.
pub fn project_inputs(
    graph: &InteractionGraph<'_>,
    params: &ProjectionParams,
    options: &EncoderOptions,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let d = params.d_model();
    graph
        .nodes
        .iter()
        .map(|n| match n.kind {
            NodeKind::InteractionNode => Ok(vec![0.0; d]),
            NodeKind::WordText => project(&params.word_text, &n.feature, "word_text"),
            NodeKind::WordSpeech => project(&params.word_speech, &n.feature, "word_speech"),
            NodeKind::BackboneUtterance => {
                project_backbone(graph.modality, params, options, &n.feature, n.speaker.unwrap_or(0))
            }
        })
        .collect()
}

fn project(lin: &Linear, x: &[f64], what: &'static str) -> Result<Vec<f64>, ModelError> {
    check_dim(what, lin.d_in(), x.len())?;
    Ok(lin.apply(x))
}

fn adds_speaker(modality: Modality, options: &EncoderOptions) -> bool {
    modality == Modality::Semantic || options.speaker_on_prosody
}

fn project_backbone(
    modality: Modality,
    params: &ProjectionParams,
    options: &EncoderOptions,
    raw: &[f64],
    speaker: usize,
) -> Result<Vec<f64>, ModelError> {
    let mut f = match modality {
        Modality::Semantic => project(&params.utt_text, raw, "utt_text")?,
        Modality::Prosody => project(&params.utt_speech, raw, "utt_speech")?,
    };
    if adds_speaker(modality, options) {
        if speaker >= params.speaker.rows {
            return Err(ModelError::SpeakerOutOfRange {
                speaker,
                n_speakers: params.speaker.rows,
            });
        }
        linalg::add_assign(&mut f, params.speaker.row(speaker));
    }
    Ok(f)
}

/// Arithmetic mean, left-to-right summation.
pub fn average_pool(vectors: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
    let first = vectors.first().ok_or(ModelError::EmptyPool)?;
    let d = first.len();
    for v in vectors {
        check_dim("average_pool", d, v.len())?;
    }
    Ok(linalg::mean_of(vectors.iter().map(Vec::as_slice), d))
}

/// One relational SAGE update. Edge kinds with no neighbors contribute
/// nothing; at least one kind must be present.
pub fn sage_update(
    self_feat: &[f64],
    neighbors: &BTreeMap<EdgeKind, Vec<Vec<f64>>>,
    params: &SageParams,
    normalize: bool,
) -> Result<Vec<f64>, ModelError> {
    let d = params.d_model();
    check_dim("sage self feature", d, self_feat.len())?;
    let mut means: [Option<Vec<f64>>; 3] = [None, None, None];
    for (slot, kind) in EdgeKind::ALL.iter().enumerate() {
        if let Some(group) = neighbors.get(kind).filter(|g| !g.is_empty()) {
            means[slot] = Some(average_pool(group)?);
            check_dim("sage neighbor", d, group[0].len())?;
        }
    }
    if means.iter().all(Option::is_none) {
        return Err(ModelError::NoNeighbors);
    }
    let step = sage_step(self_feat, [means[0].as_deref(), means[1].as_deref(), means[2].as_deref()], params, normalize);
    Ok(step.out)
}

struct Step {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

/// `means` is ordered as [`EdgeKind::ALL`].
fn sage_step(self_feat: &[f64], means: [Option<&[f64]>; 3], params: &SageParams, normalize: bool) -> Step {
    let mut pre = params.bias.clone();
    params.w_self.vec_mul_add(self_feat, &mut pre);
    for (kind, m) in EdgeKind::ALL.iter().zip(means) {
        if let Some(m) = m {
            params.relation(*kind).vec_mul_add(m, &mut pre);
        }
    }
    let mut hidden = pre.clone();
    linalg::relu_in_place(&mut hidden);
    let out = if normalize {
        let norm = linalg::dot(&hidden, &hidden).sqrt().max(NORM_FLOOR);
        linalg::scale(&hidden, 1.0 / norm)
    } else {
        hidden.clone()
    };
    Step { pre, hidden, out }
}

/// Everything backward needs to differentiate one `encode` call.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    modality: Modality,
    /// Raw backbone features and speakers, per position `0..J`.
    backbone_raw: Vec<Vec<f64>>,
    speakers: Vec<usize>,
    /// Raw and projected word means feeding target `t` (index `t - 1`).
    word_raw_means: Vec<[Vec<f64>; 2]>,
    word_proj_means: Vec<[Vec<f64>; 2]>,
    updates: Vec<UpdateRecord>,
    n_states: usize,
}

#[derive(Debug, Clone)]
struct UpdateRecord {
    target: usize,
    self_in: Vec<f64>,
    backbone_in: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl EncoderTrace {
    pub fn history_len(&self) -> usize {
        self.n_states - 1
    }
}

/// Encodes a graph; see the module docs for the update order.
pub fn encode(
    graph: &InteractionGraph<'_>,
    proj: &ProjectionParams,
    sage: &SageParams,
    options: &EncoderOptions,
) -> Result<EncoderOutput, ModelError> {
    encode_traced(graph, proj, sage, options).map(|(out, _)| out)
}

pub fn encode_traced(
    graph: &InteractionGraph<'_>,
    proj: &ProjectionParams,
    sage: &SageParams,
    options: &EncoderOptions,
) -> Result<(EncoderOutput, EncoderTrace), ModelError> {
    let d = proj.d_model();
    check_dim("sage d_model", d, sage.d_model())?;
    let j = graph.history_len();
    let order = &graph.backbone_order;

    let mut states = Vec::with_capacity(j + 1);
    let mut backbone_raw = Vec::with_capacity(j);
    let mut speakers = Vec::with_capacity(j);
    for &id in &order[..j] {
        let node = &graph.nodes[id];
        let speaker = node.speaker.unwrap_or(0);
        states.push(project_backbone(graph.modality, proj, options, &node.feature, speaker)?);
        backbone_raw.push(node.feature.to_vec());
        speakers.push(speaker);
    }
    states.push(vec![0.0; d]);

    // Word groups are static, so their projected means are computed once.
    // mean(x·W + b) == mean(x)·W + b.
    let mut word_raw_means = Vec::with_capacity(j);
    let mut word_proj_means = Vec::with_capacity(j);
    for &target in &order[1..] {
        let mut text: Vec<&[f64]> = Vec::new();
        let mut speech: Vec<&[f64]> = Vec::new();
        for (node, kind) in graph.in_neighbors(target) {
            match kind {
                EdgeKind::WordSemanticBranch => text.push(&node.feature),
                EdgeKind::WordProsodyBranch => speech.push(&node.feature),
                EdgeKind::BackboneBranch => {}
            }
        }
        let raw_t = raw_mean(&text, proj.word_text.d_in(), "word_text")?;
        let raw_s = raw_mean(&speech, proj.word_speech.d_in(), "word_speech")?;
        word_proj_means.push([proj.word_text.apply(&raw_t), proj.word_speech.apply(&raw_s)]);
        word_raw_means.push([raw_t, raw_s]);
    }

    let mut updates = Vec::with_capacity(j * options.passes.max(1));
    for _ in 0..options.passes.max(1) {
        for t in 1..=j {
            let [mt, ms] = &word_proj_means[t - 1];
            let step = sage_step(
                &states[t],
                [Some(&states[t - 1]), Some(mt), Some(ms)],
                sage,
                options.normalize,
            );
            updates.push(UpdateRecord {
                target: t,
                self_in: std::mem::replace(&mut states[t], step.out.clone()),
                backbone_in: states[t - 1].clone(),
                pre: step.pre,
                hidden: step.hidden,
                out: step.out,
            });
        }
    }

    let pooled = average_pool(&states)?;
    Ok((
        EncoderOutput {
            pooled,
            backbone_states: states,
        },
        EncoderTrace {
            modality: graph.modality,
            backbone_raw,
            speakers,
            word_raw_means,
            word_proj_means,
            updates,
            n_states: j + 1,
        },
    ))
}

fn raw_mean(group: &[&[f64]], dim: usize, what: &'static str) -> Result<Vec<f64>, ModelError> {
    if group.is_empty() {
        // Every backbone target has at least one word of each modality.
        return Err(ModelError::NoNeighbors);
    }
    for v in group {
        check_dim(what, dim, v.len())?;
    }
    Ok(linalg::mean_of(group.iter().copied(), dim))
}

/// Back-propagates `d_pooled` through one traced encode, accumulating into
/// `proj_grad` and `sage_grad`.
pub fn encode_backward(
    trace: &EncoderTrace,
    d_pooled: &[f64],
    sage: &SageParams,
    options: &EncoderOptions,
    proj_grad: &mut ProjectionParams,
    sage_grad: &mut SageParams,
) {
    let n = trace.n_states;
    let d = d_pooled.len();
    let share = 1.0 / n as f64;
    let mut d_states: Vec<Vec<f64>> = (0..n).map(|_| linalg::scale(d_pooled, share)).collect();
    let mut d_word: Vec<[Vec<f64>; 2]> = (0..n - 1).map(|_| [vec![0.0; d], vec![0.0; d]]).collect();

    for u in trace.updates.iter().rev() {
        let t = u.target;
        let g_out = std::mem::replace(&mut d_states[t], vec![0.0; d]);
        let mut g = if options.normalize {
            let norm = linalg::dot(&u.hidden, &u.hidden).sqrt().max(NORM_FLOOR);
            let proj_len = linalg::dot(&u.out, &g_out);
            g_out
                .iter()
                .zip(&u.out)
                .map(|(gv, ov)| (gv - ov * proj_len) / norm)
                .collect()
        } else {
            g_out
        };
        for (gv, &p) in g.iter_mut().zip(&u.pre) {
            if p <= 0.0 {
                *gv = 0.0;
            }
        }
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let [mt, ms] = &trace.word_proj_means[t - 1];
        sage_grad.w_self.add_outer(&u.self_in, &g);
        sage_grad.relation_mut(EdgeKind::BackboneBranch).add_outer(&u.backbone_in, &g);
        sage_grad.relation_mut(EdgeKind::WordSemanticBranch).add_outer(mt, &g);
        sage_grad.relation_mut(EdgeKind::WordProsodyBranch).add_outer(ms, &g);
        linalg::add_assign(&mut sage_grad.bias, &g);

        sage.w_self.vec_mul_t_add(&g, &mut d_states[t]);
        sage.w_backbone.vec_mul_t_add(&g, &mut d_states[t - 1]);
        let [dt, ds] = &mut d_word[t - 1];
        sage.w_word_text.vec_mul_t_add(&g, dt);
        sage.w_word_speech.vec_mul_t_add(&g, ds);
    }

    for (p, g) in d_states.iter().take(n - 1).enumerate() {
        let raw = &trace.backbone_raw[p];
        match trace.modality {
            Modality::Semantic => proj_grad.utt_text.accumulate_grad(raw, g),
            Modality::Prosody => proj_grad.utt_speech.accumulate_grad(raw, g),
        }
        if adds_speaker(trace.modality, options) {
            let s = trace.speakers[p];
            let row = &mut proj_grad.speaker.data[s * d..(s + 1) * d];
            linalg::add_assign(row, g);
        }
    }
    for (k, [gt, gs]) in d_word.iter().enumerate() {
        let [rt, rs] = &trace.word_raw_means[k];
        proj_grad.word_text.accumulate_grad(rt, gt);
        proj_grad.word_speech.accumulate_grad(rs, gs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureVector, UtteranceRecord};
    use crate::graph::{build_pig, build_sig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn history(rng: &mut ChaCha8Rng, qs: &[usize], d: usize) -> Vec<UtteranceRecord> {
        qs.iter()
            .enumerate()
            .map(|(i, &q)| UtteranceRecord {
                speaker_id: i % 2,
                words: vec!["w".into(); q],
                word_text_feats: (0..q).map(|_| FeatureVector(rand_vec(rng, d))).collect(),
                word_speech_feats: (0..q).map(|_| FeatureVector(rand_vec(rng, d))).collect(),
                utt_text_feat: FeatureVector(rand_vec(rng, d)),
                utt_speech_feat: FeatureVector(rand_vec(rng, d)),
                pitch_target: 0.0,
                energy_target: 0.0,
            })
            .collect()
    }

    fn identity_proj(d: usize, n_speakers: usize) -> ProjectionParams {
        let id = Linear {
            weight: Matrix::identity(d),
            bias: vec![0.0; d],
        };
        ProjectionParams {
            word_text: id.clone(),
            word_speech: id.clone(),
            utt_text: id.clone(),
            utt_speech: id,
            speaker: Matrix::zeros(n_speakers, d),
        }
    }

    fn random_proj(rng: &mut ChaCha8Rng, d_raw: usize, d: usize) -> ProjectionParams {
        let lin = |rng: &mut ChaCha8Rng| Linear {
            weight: Matrix::uniform_fan_in(d_raw, d, rng),
            bias: rand_vec(rng, d),
        };
        ProjectionParams {
            word_text: lin(rng),
            word_speech: lin(rng),
            utt_text: lin(rng),
            utt_speech: lin(rng),
            speaker: Matrix::uniform_fan_in(2, d, rng),
        }
    }

    #[test]
    fn identity_projection_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = history(&mut rng, &[2, 1], 3);
        let g = build_sig(&h).unwrap();
        let p = project_inputs(&g, &identity_proj(3, 2), &EncoderOptions::default()).unwrap();
        for (n, f) in g.nodes.iter().zip(&p) {
            assert_eq!(&*n.feature, f.as_slice());
        }
    }

    #[test]
    fn zero_backbone_feature_yields_speaker_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut h = history(&mut rng, &[1, 1], 3);
        h[1].utt_text_feat = FeatureVector::zeros(3);
        let mut proj = identity_proj(3, 2);
        proj.speaker = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 2.0, 0.5]]);
        let g = build_sig(&h).unwrap();
        let p = project_inputs(&g, &proj, &EncoderOptions::default()).unwrap();
        assert_eq!(p[1], vec![-1.0, 2.0, 0.5]);
        // prosody graph gets no speaker embedding by default
        let g = build_pig(&h).unwrap();
        let p = project_inputs(&g, &proj, &EncoderOptions::default()).unwrap();
        assert_eq!(p[0], h[0].utt_speech_feat.0);
    }

    #[test]
    fn projection_matches_hand_product() {
        let mut h = history(&mut ChaCha8Rng::seed_from_u64(0), &[1], 3);
        h[0].word_text_feats[0] = FeatureVector(vec![1.0, -2.0, 0.5]);
        let mut proj = identity_proj(3, 2);
        proj.word_text = Linear {
            weight: Matrix::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.2], vec![-0.4, 0.9]]),
            bias: vec![0.05, -0.05],
        };
        proj.word_speech = Linear::zeros(3, 2);
        proj.utt_text = Linear::zeros(3, 2);
        proj.utt_speech = Linear::zeros(3, 2);
        proj.speaker = Matrix::zeros(2, 2);
        let g = build_sig(&h).unwrap();
        let p = project_inputs(&g, &proj, &EncoderOptions::default()).unwrap();
        let word = g.nodes.iter().position(|n| n.kind == NodeKind::WordText).unwrap();
        let expect = [
            1.0 * 0.3 + -2.0 * 1.1 + 0.5 * -0.4 + 0.05,
            1.0 * -0.7 + -2.0 * 0.2 + 0.5 * 0.9 - 0.05,
        ];
        for (a, b) in p[word].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h = history(&mut rng, &[1], 3);
        let g = build_sig(&h).unwrap();
        let proj = identity_proj(4, 2);
        assert!(matches!(
            project_inputs(&g, &proj, &EncoderOptions::default()),
            Err(ModelError::DimensionMismatch { .. })
        ));
        h[0].speaker_id = 5;
        let g = build_sig(&h).unwrap();
        assert_eq!(
            project_inputs(&g, &identity_proj(3, 2), &EncoderOptions::default()),
            Err(ModelError::SpeakerOutOfRange {
                speaker: 5,
                n_speakers: 2
            })
        );
    }

    #[test]
    fn sage_zero_in_zero_out() {
        let p = SageParams::zeros(3);
        let mut nb = BTreeMap::new();
        nb.insert(EdgeKind::BackboneBranch, vec![vec![0.0; 3]]);
        assert_eq!(sage_update(&[0.0; 3], &nb, &p, false).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn sage_identity_adds_self_and_backbone() {
        let p = SageParams {
            w_self: Matrix::identity(2),
            w_backbone: Matrix::identity(2),
            w_word_text: Matrix::identity(2),
            w_word_speech: Matrix::identity(2),
            bias: vec![0.0; 2],
        };
        let mut nb = BTreeMap::new();
        nb.insert(EdgeKind::BackboneBranch, vec![vec![0.5, 2.0]]);
        assert_eq!(sage_update(&[1.0, 0.25], &nb, &p, false).unwrap(), vec![1.5, 2.25]);
    }

    #[test]
    fn sage_requires_a_neighbor() {
        let p = SageParams::zeros(2);
        assert_eq!(
            sage_update(&[0.0; 2], &BTreeMap::new(), &p, false),
            Err(ModelError::NoNeighbors)
        );
    }

    #[test]
    fn sage_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = SageParams {
            w_self: Matrix::uniform_fan_in(2, 2, &mut rng),
            w_backbone: Matrix::uniform_fan_in(2, 2, &mut rng),
            w_word_text: Matrix::uniform_fan_in(2, 2, &mut rng),
            w_word_speech: Matrix::uniform_fan_in(2, 2, &mut rng),
            bias: rand_vec(&mut rng, 2),
        };
        let s = rand_vec(&mut rng, 2);
        let b = rand_vec(&mut rng, 2);
        let wt = rand_vec(&mut rng, 2);
        let ws = rand_vec(&mut rng, 2);
        let mut nb = BTreeMap::new();
        nb.insert(EdgeKind::BackboneBranch, vec![b.clone()]);
        nb.insert(EdgeKind::WordSemanticBranch, vec![wt.clone()]);
        nb.insert(EdgeKind::WordProsodyBranch, vec![ws.clone()]);
        let got = sage_update(&s, &nb, &p, false).unwrap();
        for (c, g) in got.iter().enumerate() {
            let m = |w: &Matrix, x: &[f64]| x[0] * w.get(0, c) + x[1] * w.get(1, c);
            let pre = m(&p.w_self, &s) + m(&p.w_backbone, &b) + m(&p.w_word_text, &wt) + m(&p.w_word_speech, &ws) + p.bias[c];
            assert!((g - pre.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_cases() {
        let v = vec![1.0, -2.0, 3.5];
        assert_eq!(average_pool(std::slice::from_ref(&v)).unwrap(), v);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(average_pool(&[v.clone(), neg]).unwrap(), vec![0.0; 3]);
        assert_eq!(average_pool(&[]), Err(ModelError::EmptyPool));
    }

    #[test]
    fn pool_matches_independent_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, 4)).collect();
        let got = average_pool(&vs).unwrap();
        for c in 0..4 {
            let m = (vs[0][c] + vs[1][c] + vs[2][c]) / 3.0;
            assert!((got[c] - m).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_j2() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = history(&mut rng, &[2, 3], 3);
        let proj = random_proj(&mut rng, 3, 4);
        let g = build_sig(&h).unwrap();
        let out = encode(&g, &proj, &SageParams::zeros(4), &EncoderOptions::default()).unwrap();
        let f1 = &project_inputs(&g, &proj, &EncoderOptions::default()).unwrap()[0];
        assert_eq!(out.backbone_states[1], vec![0.0; 4]);
        assert_eq!(out.backbone_states[2], vec![0.0; 4]);
        let expect: Vec<f64> = f1.iter().map(|v| v / 3.0).collect();
        assert_eq!(out.pooled, expect);
    }

    #[test]
    fn single_utterance_runs_only_interaction_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = history(&mut rng, &[2], 3);
        let proj = random_proj(&mut rng, 3, 4);
        let sage = SageParams::init(4, &mut rng);
        let g = build_pig(&h).unwrap();
        let (out, trace) = encode_traced(&g, &proj, &sage, &EncoderOptions::default()).unwrap();
        assert_eq!(trace.updates.len(), 1);
        assert_eq!(out.backbone_states.len(), 2);
        let mean: Vec<f64> = out.backbone_states[0]
            .iter()
            .zip(&out.backbone_states[1])
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        assert_eq!(out.pooled, mean);
    }

    #[test]
    fn output_shapes_follow_d_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = history(&mut rng, &[1, 2, 1], 3);
        for d in [4, 8] {
            let proj = random_proj(&mut rng, 3, d);
            let sage = SageParams::init(d, &mut rng);
            let out = encode(&build_sig(&h).unwrap(), &proj, &sage, &EncoderOptions::default()).unwrap();
            assert_eq!(out.pooled.len(), d);
            assert_eq!(out.backbone_states.len(), 4);
        }
    }

    #[test]
    fn encode_matches_node_level_oracle() {
        // Projects each word node separately and calls the public sage_update,
        // instead of projecting word means.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = history(&mut rng, &[2, 3, 1], 3);
        let proj = random_proj(&mut rng, 3, 4);
        let mut sage = SageParams::init(4, &mut rng);
        sage.bias = vec![0.3; 4];
        let opts = EncoderOptions::default();
        for g in [build_sig(&h).unwrap(), build_pig(&h).unwrap()] {
            let projected = project_inputs(&g, &proj, &opts).unwrap();
            let mut states: Vec<Vec<f64>> = g.backbone_order.iter().map(|&id| projected[id].clone()).collect();
            for t in 1..states.len() {
                let target = g.backbone_order[t];
                let mut nb: BTreeMap<EdgeKind, Vec<Vec<f64>>> = BTreeMap::new();
                for (node, kind) in g.in_neighbors(target) {
                    let f = if kind == EdgeKind::BackboneBranch {
                        states[t - 1].clone()
                    } else {
                        projected[node.id].clone()
                    };
                    nb.entry(kind).or_default().push(f);
                }
                states[t] = sage_update(&states[t], &nb, &sage, false).unwrap();
            }
            let expect = average_pool(&states).unwrap();
            let got = encode(&g, &proj, &sage, &opts).unwrap();
            for (a, b) in got.pooled.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
