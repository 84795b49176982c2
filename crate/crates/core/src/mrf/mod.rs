//! Surrogate MRF data: signal model, noise, dataset files and error metrics.

pub mod dataset;
pub mod metrics;
pub mod signal;

pub use dataset::{
    generate_dataset, generate_sample, read_dataset, write_dataset, Dataset, DatasetReader,
    DatasetSpec, TrainSample,
};
pub use metrics::{comparison_table, evaluate, MetricsReport, ParamMetrics};
pub use signal::{add_noise, signal_model, to_real_imag, SignalModel};
