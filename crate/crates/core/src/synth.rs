//! Synthetic dialogues with a known causal path from word-level features to
//! the next utterance's prosody.
//!
//! Each utterance carries one keyword. Its word-speech coordinate 0 holds a
//! keyword intensity `κ ∈ [0, 1]` and its word-text coordinate 0 holds a
//! keyword identity scalar in `[-1, 1]`; every other word coordinate is small
//! noise. Utterance-level features are word means plus noise, so a single
//! keyword is diluted by `1/q` at utterance level. Coordinates 0 and 1 of
//! `utt_speech_feat` are overwritten with the utterance's pitch and energy
//! levels (its "prosody scalars").
//!
//! For utterance `i + 1`:
//!
//! ```text
//! level(i+1)  = a·κ_i + b·mean(stored level(1..=i))
//! target(i+1) = level(i+1) + ε,   ε ~ Normal(0, noise_stddev)
//! ```
//!
//! The first utterance's level is `a·u` for a latent `u ~ Uniform(0, 1)` that
//! is not stored anywhere. All stored values are quantized to the dataset
//! file precision before they feed later utterances, so a saved dataset
//! reloads field-for-field and the formula can be recomputed exactly from the
//! file.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{quantize, Dataset, DialogueRecord, FeatureDims, FeatureVector, UtteranceRecord};

/// Standard deviation of non-keyword word feature noise.
pub const WORD_NOISE: f64 = 0.05;
/// Standard deviation of the noise added to utterance-level feature means.
pub const UTTERANCE_NOISE: f64 = 0.05;
/// Speakers alternate turns.
pub const N_SPEAKERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_dialogues: usize,
    pub turns_per_dialogue: usize,
    pub words_per_utterance: usize,
    /// Weight of the previous utterance's keyword intensity.
    pub keyword_coefficient: f64,
    /// Weight of the running mean of earlier prosody scalars.
    pub chain_coefficient: f64,
    pub noise_stddev: f64,
    pub feature_dims: FeatureDims,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_dialogues: 1000,
            turns_per_dialogue: 6,
            words_per_utterance: 8,
            keyword_coefficient: 1.0,
            chain_coefficient: 0.5,
            noise_stddev: 0.05,
            feature_dims: FeatureDims::uniform(16),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let d = &self.feature_dims;
        if self.n_dialogues == 0 || self.turns_per_dialogue == 0 || self.words_per_utterance == 0 {
            return Err("all counts must be >= 1".into());
        }
        if [d.word_text, d.word_speech, d.utt_text, d.utt_speech]
            .iter()
            .any(|&x| x < 2)
        {
            return Err("all feature dims must be >= 2".into());
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err("noise_stddev must be finite and >= 0".into());
        }
        if !self.keyword_coefficient.is_finite() || !self.chain_coefficient.is_finite() {
            return Err("coefficients must be finite".into());
        }
        Ok(())
    }
}

/// Generates the dataset described in the module docs. Deterministic in
/// `config.seed`.
///
/// Panics if the config fails [`SynthConfig::validate`].
pub fn generate_synthetic(config: &SynthConfig) -> Dataset {
    if let Err(e) = config.validate() {
        panic!("invalid synthetic config: {e}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dialogues = (0..config.n_dialogues)
        .map(|n| generate_dialogue(config, format!("syn{n:05}"), &mut rng))
        .collect();
    Dataset::new(config.feature_dims, N_SPEAKERS, dialogues)
}

fn generate_dialogue(config: &SynthConfig, dialogue_id: String, rng: &mut ChaCha8Rng) -> DialogueRecord {
    let dims = config.feature_dims;
    let q = config.words_per_utterance;
    let a = config.keyword_coefficient;
    let b = config.chain_coefficient;
    let word_noise = Normal::new(0.0, WORD_NOISE).unwrap();
    let utt_noise = Normal::new(0.0, UTTERANCE_NOISE).unwrap();
    let target_noise = Normal::new(0.0, config.noise_stddev).unwrap();

    let latent: f64 = rng.gen_range(0.0..=1.0);
    let mut utterances: Vec<UtteranceRecord> = Vec::with_capacity(config.turns_per_dialogue);
    let mut prev_kappa = 0.0;
    let mut pitch_levels = Vec::new();
    let mut energy_levels = Vec::new();

    for i in 0..config.turns_per_dialogue {
        let (pitch_level, energy_level) = if i == 0 {
            (quantize(a * latent), quantize(a * latent))
        } else {
            (
                quantize(a * prev_kappa + b * mean(&pitch_levels)),
                quantize(a * prev_kappa + b * mean(&energy_levels)),
            )
        };

        let keyword_pos = rng.gen_range(0..q);
        let kappa = quantize(rng.gen_range(0.0..=1.0));
        let identity = quantize(rng.gen_range(-1.0..=1.0));

        let mut noise_vec = |d: usize| -> Vec<f64> { (0..d).map(|_| word_noise.sample(rng)).collect() };
        let mut word_text_feats = Vec::with_capacity(q);
        let mut word_speech_feats = Vec::with_capacity(q);
        let mut words = Vec::with_capacity(q);
        for k in 0..q {
            let mut wt = noise_vec(dims.word_text);
            let mut ws = noise_vec(dims.word_speech);
            if k == keyword_pos {
                wt[0] = identity;
                ws[0] = kappa;
                words.push(format!("kw{}", ((identity + 1.0) * 50.0) as u32));
            } else {
                words.push(format!("w{k}"));
            }
            word_text_feats.push(quantized(wt));
            word_speech_feats.push(quantized(ws));
        }

        let mut utt_text = word_mean(&word_text_feats, dims.word_text, dims.utt_text);
        utt_text.iter_mut().for_each(|v| *v += utt_noise.sample(rng));
        let mut utt_speech = word_mean(&word_speech_feats, dims.word_speech, dims.utt_speech);
        utt_speech.iter_mut().for_each(|v| *v += utt_noise.sample(rng));
        utt_speech[0] = pitch_level;
        utt_speech[1] = energy_level;

        let pitch_target = quantize(pitch_level + target_noise.sample(rng));
        let energy_target = quantize(energy_level + target_noise.sample(rng));

        utterances.push(UtteranceRecord {
            speaker_id: i % N_SPEAKERS,
            words,
            word_text_feats,
            word_speech_feats,
            utt_text_feat: quantized(utt_text),
            utt_speech_feat: quantized(utt_speech),
            pitch_target,
            energy_target,
        });
        pitch_levels.push(pitch_level);
        energy_levels.push(energy_level);
        prev_kappa = kappa;
    }
    DialogueRecord {
        dialogue_id,
        utterances,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn quantized(v: Vec<f64>) -> FeatureVector {
    FeatureVector(v.into_iter().map(quantize).collect())
}

/// Mean of word vectors, truncated or zero-padded to `out_dim`.
fn word_mean(words: &[FeatureVector], in_dim: usize, out_dim: usize) -> Vec<f64> {
    let m = crate::linalg::mean_of(words.iter().map(FeatureVector::as_slice), in_dim);
    (0..out_dim).map(|j| m.get(j).copied().unwrap_or(0.0)).collect()
}

/// Keyword intensity of a generated utterance: word-speech coordinate 0 of
/// the word tagged `kw*`.
pub fn keyword_intensity(utt: &UtteranceRecord) -> Option<f64> {
    let k = utt.words.iter().position(|w| w.starts_with("kw"))?;
    Some(utt.word_speech_feats[k].0[0])
}
