//! Central finite-difference verification of the hand-written gradients.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use twofloat::TwoFloat;

use crate::data::{FeatureDims, FeatureVector, TrainingSample, UtteranceRecord};
use crate::encoder::{EncoderOptions, ModelError};
use crate::linalg::Matrix;
use crate::model::{backward, forward, AblationMode, ModelParams};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares every parameter's analytic gradient with a central difference of
/// step `eps`.
///
/// The difference quotient is taken over [`reference_prediction`] evaluated
/// in double-double arithmetic. In plain `f64` the cancellation in
/// `L(θ+ε) − L(θ−ε)` leaves ~1e-11 of absolute noise, which swamps the
/// relative error of gradients below ~1e-5.
pub fn check_gradients(
    sample: &TrainingSample<'_>,
    params: &ModelParams,
    mode: AblationMode,
    eps: f64,
) -> Result<GradCheckReport, ModelError> {
    let cache = forward(sample, params, mode)?;
    let analytic = backward(sample, params, mode, &cache)?;
    let names = ModelParams::tensor_names();
    let mut lifted: Vec<Vec<TwoFloat>> = params
        .tensors()
        .iter()
        .map(|t| t.iter().map(|&v| TwoFloat::from(v)).collect())
        .collect();
    let mut report = GradCheckReport {
        n_checked: 0,
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let step = TwoFloat::from(eps);
    for (t, grad) in analytic.tensors().into_iter().enumerate() {
        for (k, &a) in grad.iter().enumerate() {
            let original = lifted[t][k];
            lifted[t][k] = original + step;
            let plus = loss_of(sample, &lifted, &params.options, mode);
            lifted[t][k] = original - step;
            let minus = loss_of(sample, &lifted, &params.options, mode);
            lifted[t][k] = original;
            let numeric = ((plus - minus) / (step * 2.0)).hi();
            let err = relative_error(a, numeric);
            report.n_checked += 1;
            if err > report.max_rel_error || report.worst_tensor.is_empty() {
                report.max_rel_error = err;
                report.worst_tensor = names[t].clone();
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Straight-line `(pitch, energy)` prediction in any float type.
///
/// Shares no code with [`forward`]: it reads records directly, projects each
/// word before averaging, and walks the backbone with plain loops. Inputs are
/// assumed valid (run [`forward`] first to validate them).
pub fn reference_prediction<T: Float>(sample: &TrainingSample<'_>, params: &ModelParams, mode: AblationMode) -> [T; 2] {
    let lifted: Vec<Vec<T>> = params.tensors().iter().map(|t| lift(t)).collect();
    predict(sample, &lifted, &params.options, mode)
}

fn lift<T: Float>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from(x).expect("finite f64")).collect()
}

// Tensor indices, in `ModelParams::tensors` order.
const WORD_TEXT: usize = 0;
const WORD_SPEECH: usize = 2;
const UTT_TEXT: usize = 4;
const UTT_SPEECH: usize = 6;
const SPEAKER: usize = 8;
const SAGE_SEMANTIC: usize = 9;
const SAGE_PROSODY: usize = 14;
const HEAD_HIDDEN: usize = 19;
const HEAD_OUTPUT: usize = 21;

/// `x·W + b` with `W` stored row-major as `len(x) × len(b)`.
fn affine<T: Float>(x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let cols = b.len();
    (0..cols)
        .map(|c| {
            let mut acc = b[c];
            for (r, &xv) in x.iter().enumerate() {
                acc = acc + xv * w[r * cols + c];
            }
            acc
        })
        .collect()
}

fn mean<T: Float>(vs: &[Vec<T>]) -> Vec<T> {
    let n = T::from(vs.len()).unwrap();
    (0..vs[0].len())
        .map(|c| div(vs.iter().fold(T::zero(), |acc, v| acc + v[c]), n))
        .collect()
}

/// `a / b` with one residual correction.
fn div<T: Float>(a: T, b: T) -> T {
    let q = a / b;
    q + (a - q * b) / b
}

fn pooled<T: Float>(history: &[UtteranceRecord], p: &[Vec<T>], options: &EncoderOptions, semantic: bool) -> Vec<T> {
    let d = p[WORD_TEXT + 1].len();
    let (utt, sage) = if semantic {
        (UTT_TEXT, SAGE_SEMANTIC)
    } else {
        (UTT_SPEECH, SAGE_PROSODY)
    };
    let with_speaker = semantic || options.speaker_on_prosody;
    let mut states: Vec<Vec<T>> = history
        .iter()
        .map(|u| {
            let raw = if semantic { &u.utt_text_feat } else { &u.utt_speech_feat };
            let mut f = affine(&lift(raw.as_slice()), &p[utt], &p[utt + 1]);
            if with_speaker {
                for (c, v) in f.iter_mut().enumerate() {
                    *v = *v + p[SPEAKER][u.speaker_id * d + c];
                }
            }
            f
        })
        .collect();
    states.push(vec![T::zero(); d]);
    let words: Vec<[Vec<T>; 2]> = history
        .iter()
        .map(|u| {
            let proj = |feats: &[FeatureVector], at: usize| {
                let each: Vec<Vec<T>> = feats.iter().map(|f| affine(&lift(f.as_slice()), &p[at], &p[at + 1])).collect();
                mean(&each)
            };
            [proj(&u.word_text_feats, WORD_TEXT), proj(&u.word_speech_feats, WORD_SPEECH)]
        })
        .collect();
    let zero_bias = vec![T::zero(); d];
    for _ in 0..options.passes.max(1) {
        for i in 1..states.len() {
            let mut h = p[sage + 4].clone();
            let inputs = [&states[i], &states[i - 1], &words[i - 1][0], &words[i - 1][1]];
            for (slot, x) in inputs.into_iter().enumerate() {
                for (a, b) in h.iter_mut().zip(affine(x, &p[sage + slot], &zero_bias)) {
                    *a = *a + b;
                }
            }
            for v in h.iter_mut() {
                *v = v.max(T::zero());
            }
            if options.normalize {
                let sq = h.iter().fold(T::zero(), |acc, &v| acc + v * v);
                // twofloat's sqrt and division stop short of full double-double
                // precision; one refinement step each recovers it.
                let root = sq.sqrt();
                let norm = if root > T::zero() { (root + div(sq, root)) / T::from(2.0).unwrap() } else { root };
                let norm = norm.max(T::from(1e-12).unwrap());
                h.iter_mut().for_each(|v| *v = div(*v, norm));
            }
            states[i] = h;
        }
    }
    mean(&states)
}

fn predict<T: Float>(sample: &TrainingSample<'_>, p: &[Vec<T>], options: &EncoderOptions, mode: AblationMode) -> [T; 2] {
    let d = p[WORD_TEXT + 1].len();
    let mut x = Vec::with_capacity(3 * d);
    for (on, semantic) in [(mode.uses_sig(), true), (mode.uses_pig(), false)] {
        if on {
            x.extend(pooled(sample.history, p, options, semantic));
        } else {
            x.extend(vec![T::zero(); d]);
        }
    }
    x.extend(affine(&lift(sample.current.utt_text_feat.as_slice()), &p[UTT_TEXT], &p[UTT_TEXT + 1]));
    let mut hidden = affine(&x, &p[HEAD_HIDDEN], &p[HEAD_HIDDEN + 1]);
    hidden.iter_mut().for_each(|v| *v = v.max(T::zero()));
    let y = affine(&hidden, &p[HEAD_OUTPUT], &p[HEAD_OUTPUT + 1]);
    [y[0], y[1]]
}

fn loss_of<T: Float>(sample: &TrainingSample<'_>, p: &[Vec<T>], options: &EncoderOptions, mode: AblationMode) -> T {
    let [ph, eh] = predict(sample, p, options, mode);
    let dp = ph - T::from(sample.current.pitch_target).unwrap();
    let de = eh - T::from(sample.current.energy_target).unwrap();
    (dp * dp + de * de) / T::from(2.0).unwrap()
}

/// A random history/target pair with random parameters.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub history: Vec<UtteranceRecord>,
    pub current: UtteranceRecord,
    pub params: ModelParams,
}

impl GradCheckInstance {
    pub fn sample(&self) -> TrainingSample<'_> {
        TrainingSample {
            history: &self.history,
            current: &self.current,
        }
    }
}

/// `J ∈ [1, max_history]`, `qᵢ ∈ [1, max_words]`, raw dims 5, all
/// parameters (biases and speaker embeddings included) randomized.
pub fn random_instance(
    seed: u64,
    d_model: usize,
    max_history: usize,
    max_words: usize,
    options: EncoderOptions,
) -> GradCheckInstance {
    const RAW: usize = 5;
    const SPEAKERS: usize = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utt = |rng: &mut ChaCha8Rng, q: usize| {
        let fv = |rng: &mut ChaCha8Rng| FeatureVector((0..RAW).map(|_| rng.gen_range(-1.0..1.0)).collect());
        UtteranceRecord {
            speaker_id: rng.gen_range(0..SPEAKERS),
            words: vec!["w".into(); q],
            word_text_feats: (0..q).map(|_| fv(rng)).collect(),
            word_speech_feats: (0..q).map(|_| fv(rng)).collect(),
            utt_text_feat: fv(rng),
            utt_speech_feat: fv(rng),
            pitch_target: rng.gen_range(-1.0..1.0),
            energy_target: rng.gen_range(-1.0..1.0),
        }
    };
    let j = rng.gen_range(1..=max_history.max(1));
    let history = (0..j)
        .map(|_| {
            let q = rng.gen_range(1..=max_words.max(1));
            utt(&mut rng, q)
        })
        .collect();
    let current = utt(&mut rng, 1);
    let mut params = ModelParams::init(&FeatureDims::uniform(RAW), SPEAKERS, d_model, 2 * d_model, options, &mut rng);
    params.projection.speaker = Matrix::uniform_fan_in(SPEAKERS, d_model, &mut rng);
    for t in params.tensors_mut() {
        // biases start at zero; randomize everything so each path is exercised
        for v in t.iter_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    GradCheckInstance {
        history,
        current,
        params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn reference_matches_forward() {
        for (k, mode) in AblationMode::ALL.into_iter().enumerate() {
            let inst = random_instance(40 + k as u64, 6, 4, 3, EncoderOptions { passes: 2, normalize: true, speaker_on_prosody: true });
            let c = forward(&inst.sample(), &inst.params, mode).unwrap();
            let [p, e] = reference_prediction::<f64>(&inst.sample(), &inst.params, mode);
            assert!((p - c.pitch_hat).abs() < 1e-12 && (e - c.energy_hat).abs() < 1e-12);
        }
    }

    fn check(options: EncoderOptions, mode: AblationMode, seed: u64) {
        let inst = random_instance(seed, 4, 3, 3, options);
        let r = check_gradients(&inst.sample(), &inst.params, mode, DEFAULT_STEP).unwrap();
        assert_eq!(r.n_checked, inst.params.n_parameters());
        assert!(r.passes(DEFAULT_TOLERANCE), "{options:?} {mode}: {r:?}");
    }

    #[test]
    fn every_mode_checks() {
        for (k, mode) in AblationMode::ALL.into_iter().enumerate() {
            check(EncoderOptions::default(), mode, 100 + k as u64);
        }
    }

    #[test]
    fn option_variants_check() {
        check(
            EncoderOptions {
                passes: 2,
                normalize: false,
                speaker_on_prosody: true,
            },
            AblationMode::Full,
            7,
        );
        check(
            EncoderOptions {
                passes: 1,
                normalize: true,
                speaker_on_prosody: false,
            },
            AblationMode::Full,
            8,
        );
    }
}
