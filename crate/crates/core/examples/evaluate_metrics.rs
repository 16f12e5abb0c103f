//! MAE-P / MAE-E of an untrained model versus a constant-mean baseline,
//! evaluated serially and across threads.

use ficg::data::FeatureDims;
use ficg::metrics::{evaluate_parallel, mae};
use ficg::synth::{generate_synthetic, SynthConfig};
use ficg::{AblationMode, EncoderOptions, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let data = generate_synthetic(&SynthConfig {
        n_dialogues: 40,
        feature_dims: FeatureDims::uniform(8),
        ..SynthConfig::default()
    });
    let samples = data.samples(None);
    let targets: Vec<f64> = samples.iter().map(|s| s.current.pitch_target).collect();
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    println!("constant-mean MAE-P {:.5}", mae(&vec![mean; targets.len()], &targets).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ModelParams::init(&data.dims, data.n_speakers, 8, 8, EncoderOptions::default(), &mut rng);
    let serial = evaluate_parallel(&params, AblationMode::Full, &samples, 1).unwrap();
    let threaded = evaluate_parallel(&params, AblationMode::Full, &samples, 4).unwrap();
    assert_eq!(serial, threaded);
    println!("untrained model\n{serial}");
}
