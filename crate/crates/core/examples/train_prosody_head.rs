//! Trains the full model on synthetic dialogues, saves a checkpoint and
//! evaluates it on the held-out split.
//!
//! ```bash
//! cargo run --release -p ficg --example train_prosody_head
//! ```

use ficg::model::{load_params, save_params};
use ficg::synth::{generate_synthetic, SynthConfig};
use ficg::train::{train_with, AblationRun, TrainConfig};
use ficg::{evaluate, AblationMode};

fn main() {
    let data = generate_synthetic(&SynthConfig {
        n_dialogues: 300,
        ..SynthConfig::default()
    });
    let run = AblationRun::from_dataset(0, &data);
    let config = TrainConfig {
        epochs: 20,
        d_model: 16,
        d_hidden: 16,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let outcome = train_with(&config, &run.train, &run.val, |e| {
        println!("epoch {:>3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss);
    })
    .expect("training succeeds");
    println!("best epoch {}", outcome.best_epoch);

    let path = std::env::temp_dir().join("ficg_model.json");
    save_params(&outcome.params, &path).unwrap();
    let params = load_params(&path).unwrap();
    assert_eq!(params, outcome.params);
    let report = evaluate(&params, AblationMode::Full, &run.test.samples(None)).unwrap();
    println!("{report}");
}
