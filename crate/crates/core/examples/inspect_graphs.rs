//! Builds the SIG and PIG of one history and prints counts and DOT.
//!
//! ```bash
//! cargo run -p ficg --example inspect_graphs | dot -Tsvg > sig.svg
//! ```

use ficg::data::{FeatureVector, UtteranceRecord};
use ficg::{build_pig, build_sig, export_dot, topology_counts};

fn utterance(speaker: usize, words: &[&str]) -> UtteranceRecord {
    let q = words.len();
    UtteranceRecord {
        speaker_id: speaker,
        words: words.iter().map(|w| w.to_string()).collect(),
        word_text_feats: vec![FeatureVector::zeros(4); q],
        word_speech_feats: vec![FeatureVector::zeros(4); q],
        utt_text_feat: FeatureVector::zeros(4),
        utt_speech_feat: FeatureVector::zeros(4),
        pitch_target: 0.0,
        energy_target: 0.0,
    }
}

fn main() {
    let history = vec![
        utterance(0, &["hi", "there"]),
        utterance(1, &["how", "are", "you"]),
        utterance(0, &["great"]),
    ];
    let sig = build_sig(&history).unwrap();
    let pig = build_pig(&history).unwrap();
    for g in [&sig, &pig] {
        let c = topology_counts(g);
        eprintln!("{:?}: nodes={} edges={} sinks={:?}", g.modality, c.nodes, c.edges, g.sinks());
    }
    print!("{}", export_dot(&sig));
}
