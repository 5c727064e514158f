//! Daily tensor files, dataset manifests, splits, normalization, bi-weekly
//! targets and a synthetic field generator.

mod dataset;
mod manifest;
mod stats;
mod synth;
mod targets;
mod tensor_io;

pub use dataset::SplitData;
pub use manifest::{
    import_directory, DatasetManifest, DateRange, DayRecord, Split, SplitSpec, CLIMATOLOGY_FILE, MANIFEST_FILE,
    TENSOR_LAYOUT,
};
pub use stats::{
    check_stats, compute_stats, denormalize, denormalize_values, normalize, normalize_values, TrainStatistics,
    VarStats,
};
pub use synth::{
    default_start, synth_generate, synth_generate_with, write_synthetic_dataset, SynthConfig, SynthRecipe,
    ZonalWave, CYCLE_DAYS, DEFAULT_NOISE, WAVES_PER_VAR,
};
pub use targets::{build_targets, mean_field, Sample, SAMPLE_SPAN_DAYS, WEEKS34_OFFSETS, WEEKS56_OFFSETS};
pub use tensor_io::{load_tensor, read_tensor_shape, save_tensor, HEADER_LEN, TENSOR_MAGIC, TENSOR_VERSION};
