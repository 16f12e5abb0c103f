//! Writes a small synthetic dataset, reloads it and checks the round trip.
//!
//! ```bash
//! cargo run -p ficg --example generate_dataset -- /tmp/dialogues.jsonl
//! ```

use ficg::synth::{generate_synthetic, keyword_intensity, SynthConfig};
use ficg::{load_dataset, save_dataset};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("ficg_dialogues.jsonl").display().to_string());
    let config = SynthConfig {
        n_dialogues: 50,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&config);
    save_dataset(&data, &path).expect("dataset writes");
    let back = load_dataset(&path).expect("dataset reloads");
    assert_eq!(back, data);
    println!("{} dialogues, dims {:?}, written to {path}", back.len(), back.dims);

    let first = &back.dialogues[0];
    println!("{}:", first.dialogue_id);
    for (i, u) in first.utterances.iter().enumerate() {
        println!(
            "  utt {} spk {}  words {}  keyword κ {:.3}  pitch {:+.3}  energy {:+.3}",
            i + 1,
            u.speaker_id,
            u.word_count(),
            keyword_intensity(u).unwrap_or(f64::NAN),
            u.pitch_target,
            u.energy_target
        );
    }
}
