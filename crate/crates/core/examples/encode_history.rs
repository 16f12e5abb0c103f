//! Encodes one history with freshly initialized weights and shows how the
//! pooled interaction vector is assembled from the backbone states.

use ficg::data::FeatureDims;
use ficg::synth::{generate_synthetic, SynthConfig};
use ficg::{build_pig, build_sig, encode, EncoderOptions, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let data = generate_synthetic(&SynthConfig {
        n_dialogues: 1,
        turns_per_dialogue: 4,
        words_per_utterance: 3,
        feature_dims: FeatureDims::uniform(6),
        ..SynthConfig::default()
    });
    let history = &data.dialogues[0].utterances[..3];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = ModelParams::init(&data.dims, data.n_speakers, 4, 8, EncoderOptions::default(), &mut rng);

    for (name, graph, sage) in [
        ("SIG", build_sig(history).unwrap(), &params.sage_semantic),
        ("PIG", build_pig(history).unwrap(), &params.sage_prosody),
    ] {
        let out = encode(&graph, &params.projection, sage, &params.options).unwrap();
        println!("{name}");
        for (i, s) in out.backbone_states.iter().enumerate() {
            let label = if i + 1 == out.backbone_states.len() { "I".to_string() } else { format!("F{}", i + 1) };
            println!("  {label:<3} {}", fmt(s));
        }
        println!("  pool {}", fmt(&out.pooled));
    }
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:+.4}")).collect::<Vec<_>>().join(" ")
}
