mod common;

use ficg::data::{FeatureDims, TrainingSample};
use ficg::encoder::Linear;
use ficg::linalg::Matrix;
use ficg::synth::{generate_synthetic, SynthConfig};
use ficg::train::{train_with, AblationRun, TrainConfig};
use ficg::{evaluate, forward, load_dataset, save_dataset, AblationMode, EncoderOptions, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn affine(x: &[f64], lin: &Linear) -> Vec<f64> {
    (0..lin.bias.len())
        .map(|c| lin.bias[c] + (0..x.len()).map(|r| x[r] * lin.weight.get(r, c)).sum::<f64>())
        .collect()
}

fn times(x: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.cols).map(|c| (0..x.len()).map(|r| x[r] * w.get(r, c)).sum()).collect()
}

#[test]
fn two_dim_single_word_pipeline_matches_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let history = vec![common::random_utterance(&mut rng, 1, 2)];
    let current = common::random_utterance(&mut rng, 1, 2);
    let mut p = ModelParams::init(&FeatureDims::uniform(common::RAW), 2, 2, 3, EncoderOptions::default(), &mut rng);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
    }
    let u = &history[0];
    let interaction = |f1: Vec<f64>, sage: &ficg::SageParams| -> Vec<f64> {
        let wt = affine(&u.word_text_feats[0].0, &p.projection.word_text);
        let ws = affine(&u.word_speech_feats[0].0, &p.projection.word_speech);
        let parts = [times(&f1, &sage.w_backbone), times(&wt, &sage.w_word_text), times(&ws, &sage.w_word_speech)];
        let i: Vec<f64> = (0..2)
            .map(|c| (sage.bias[c] + parts[0][c] + parts[1][c] + parts[2][c]).max(0.0))
            .collect();
        vec![(f1[0] + i[0]) / 2.0, (f1[1] + i[1]) / 2.0]
    };
    let spk = p.projection.speaker.row(u.speaker_id).to_vec();
    let f1_s: Vec<f64> = affine(&u.utt_text_feat.0, &p.projection.utt_text).iter().zip(&spk).map(|(a, b)| a + b).collect();
    let f1_p = affine(&u.utt_speech_feat.0, &p.projection.utt_speech);
    let is = interaction(f1_s, &p.sage_semantic);
    let ip = interaction(f1_p, &p.sage_prosody);
    let cur = affine(&current.utt_text_feat.0, &p.projection.utt_text);
    let x: Vec<f64> = is.iter().chain(&ip).chain(&cur).copied().collect();
    let hidden: Vec<f64> = affine(&x, &p.head.hidden).into_iter().map(|v| v.max(0.0)).collect();
    let y = affine(&hidden, &p.head.output);

    let got = forward(&TrainingSample { history: &history, current: &current }, &p, AblationMode::Full).unwrap();
    assert!((got.pitch_hat - y[0]).abs() < 1e-12, "{} vs {}", got.pitch_hat, y[0]);
    assert!((got.energy_hat - y[1]).abs() < 1e-12, "{} vs {}", got.energy_hat, y[1]);
}

#[test]
fn constant_predictor_mae_is_its_offset() {
    let mut data = generate_synthetic(&SynthConfig {
        n_dialogues: 5,
        turns_per_dialogue: 3,
        words_per_utterance: 2,
        feature_dims: FeatureDims::uniform(4),
        ..SynthConfig::default()
    });
    for u in data.dialogues.iter_mut().flat_map(|d| d.utterances.iter_mut()) {
        u.pitch_target = 0.0;
        u.energy_target = 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = ModelParams::init(&data.dims, 2, 4, 4, EncoderOptions::default(), &mut rng);
    p.head.output.weight = Matrix::zeros(4, 2);
    p.head.output.bias = vec![-0.75, 0.25];
    let r = evaluate(&p, AblationMode::Full, &data.samples(None)).unwrap();
    assert_eq!((r.mae_pitch, r.mae_energy), (0.75, 0.25));
}

#[test]
fn generated_dataset_survives_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let data = generate_synthetic(&SynthConfig {
        n_dialogues: 30,
        ..SynthConfig::default()
    });
    save_dataset(&data, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, data);
    let again = dir.path().join("e.jsonl");
    save_dataset(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn noiseless_training_cuts_loss_tenfold() {
    for seed in 0..3 {
        let data = generate_synthetic(&SynthConfig {
            n_dialogues: 40,
            turns_per_dialogue: 4,
            words_per_utterance: 4,
            noise_stddev: 0.0,
            feature_dims: FeatureDims::uniform(6),
            seed,
            ..SynthConfig::default()
        });
        let run = AblationRun::from_dataset(seed, &data);
        let config = TrainConfig {
            d_model: 8,
            d_hidden: 8,
            seed,
            ..TrainConfig::default()
        };
        let out = train_with(&config, &run.train, &run.val, |_| {}).unwrap();
        let first = out.history[0].train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < 0.1 * first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn same_seed_same_parameters() {
    let data = generate_synthetic(&SynthConfig {
        n_dialogues: 20,
        turns_per_dialogue: 3,
        words_per_utterance: 3,
        feature_dims: FeatureDims::uniform(4),
        ..SynthConfig::default()
    });
    let run = AblationRun::from_dataset(0, &data);
    let config = TrainConfig {
        epochs: 3,
        d_model: 4,
        d_hidden: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train_with(&config, &run.train, &run.val, |_| {}).unwrap();
    let b = train_with(&config, &run.train, &run.val, |_| {}).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
}
