//! Fine-grained dialogue interaction graphs for conversational prosody
//! prediction.
//!
//! A dialogue history is turned into two heterogeneous DAGs: a semantic
//! interaction graph (SIG) whose backbone chains utterance-level text
//! features, and a prosody interaction graph (PIG) whose backbone chains
//! utterance-level speech features. In both, each word's text and speech
//! features feed the *next* utterance's backbone node, and a zero-initialized
//! interaction node closes the chain. A relational mean-aggregator encoder
//! sweeps each backbone in dialogue order and average-pools the states into
//! one interaction vector per graph; a small head turns both vectors plus
//! the current utterance's text feature into pitch and energy predictions.
//!
//! Modules, bottom-up:
//!
//! * [`data`]: records, dataset file format, training-sample windowing
//! * [`synth`]: synthetic dialogues with a known word-level causal path
//! * [`graph`]: SIG/PIG construction, topology counts, DOT export
//! * [`encoder`]: projections, relational SAGE updates, pooling, backprop
//! * [`model`]: prediction head, forward/backward, checkpoints
//! * [`train`]: seeded training and the ablation harness
//! * [`metrics`]: MAE of pitch and energy
//! * [`gradcheck`]: finite-difference gradient verification
//! * [`cli`]: the `ficg` command line

pub mod cli;
pub mod data;
pub mod encoder;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

pub use data::{load_dataset, make_training_samples, save_dataset, Dataset, DialogueRecord, FeatureVector, TrainingSample, UtteranceRecord};
pub use encoder::{average_pool, encode, project_inputs, sage_update, EncoderOptions, EncoderOutput, ModelError, ProjectionParams, SageParams};
pub use graph::{build_pig, build_sig, export_dot, topology_counts, EdgeKind, InteractionGraph, Modality, NodeKind};
pub use metrics::{evaluate, mae, MetricReport};
pub use model::{backward, forward, mse_loss, AblationMode, ModelParams};
pub use synth::{generate_synthetic, SynthConfig};
pub use train::{run_ablation_suite, train, AblationRun, AblationTable, TrainConfig};
