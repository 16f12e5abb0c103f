#![allow(dead_code)]

use ficg::data::{FeatureDims, FeatureVector, UtteranceRecord};
use ficg::model::ModelParams;
use ficg::EncoderOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RAW: usize = 3;

pub fn random_utterance(rng: &mut impl Rng, q: usize, speakers: usize) -> UtteranceRecord {
    let mut fv = |n: usize| FeatureVector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let word_text_feats = (0..q).map(|_| fv(RAW)).collect();
    let word_speech_feats = (0..q).map(|_| fv(RAW)).collect();
    let utt_text_feat = fv(RAW);
    let utt_speech_feat = fv(RAW);
    UtteranceRecord {
        speaker_id: rng.gen_range(0..speakers),
        words: (0..q).map(|k| format!("w{k}")).collect(),
        word_text_feats,
        word_speech_feats,
        utt_text_feat,
        utt_speech_feat,
        pitch_target: rng.gen_range(-1.0..1.0),
        energy_target: rng.gen_range(-1.0..1.0),
    }
}

pub fn history(seed: u64, word_counts: &[usize]) -> Vec<UtteranceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    word_counts.iter().map(|&q| random_utterance(&mut rng, q, 2)).collect()
}

/// Initialized parameters with every tensor (biases, speaker table) jittered.
pub fn params(seed: u64, d_model: usize, options: EncoderOptions) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(&FeatureDims::uniform(RAW), 2, d_model, d_model, options, &mut rng);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    p
}
