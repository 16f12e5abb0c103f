//! Full / NoSIG / NoPIG / NoBoth on synthetic dialogues, averaged over seeds.
//!
//! ```bash
//! cargo run --release -p ficg --example ablation_suite -- --seeds 3 --epochs 30
//! ```
//!
//! `--keyword-coefficient 0` runs the control: with no word-level signal the
//! graphs should stop helping.

use clap::Parser;
use ficg::synth::{generate_synthetic, SynthConfig};
use ficg::train::{run_ablation_suite, AblationRun, TrainConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 1000)]
    dialogues: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    d_model: usize,
    #[arg(long, default_value_t = 16)]
    d_hidden: usize,
    #[arg(long, default_value_t = 3e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    keyword_coefficient: f64,
}

fn main() {
    let args = Args::parse();
    let runs: Vec<AblationRun> = (0..args.seeds)
        .map(|seed| {
            let data = generate_synthetic(&SynthConfig {
                n_dialogues: args.dialogues,
                keyword_coefficient: args.keyword_coefficient,
                seed,
                ..SynthConfig::default()
            });
            AblationRun::from_dataset(seed, &data)
        })
        .collect();
    let config = TrainConfig {
        epochs: args.epochs,
        d_model: args.d_model,
        d_hidden: args.d_hidden,
        learning_rate: args.learning_rate,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let table = run_ablation_suite(&config, &runs).expect("synthetic data trains");
    print!("{table}");
    for row in &table.rows {
        let per: Vec<String> = row.per_seed.iter().map(|s| format!("{:.4}", s.mae_pitch)).collect();
        println!("{:<8} per-seed MAE-P {}", row.mode.name(), per.join(" "));
    }
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
}
