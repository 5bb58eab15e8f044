//! Training and evaluation orchestration: configuration, the training
//! steps and loop, the interpolation evaluation protocol and grid rendering.

pub mod config;
pub mod eval;
pub mod grid;
pub mod train;

pub use config::{Setting, TrainConfig};
pub use eval::{run_interpolation_eval, EvalParams, EvalReport};
pub use grid::{intra_domain_grid, render_interpolation_grid, InterpolationGrid};
pub use train::{train_loop, LossRecord, TrainData, TrainState};

use std::path::Path;

use crate::data::{
    generate_synthetic, load_folder_dataset, load_manifest_images, Dataset, DatasetManifest, SyntheticDomainSpec,
};
use crate::error::Result;

/// Materializes the dataset a configuration refers to: `synthetic`, a
/// manifest file (paths relative to its directory) or a directory with one
/// subdirectory per domain. Folder datasets have no test split.
pub fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let size = cfg.image_size as usize;
    if cfg.dataset == "synthetic" {
        let specs = SyntheticDomainSpec::defaults(cfg.num_domains as usize)?;
        let per_domain = cfg.synth_train_per_domain + cfg.synth_test_per_domain;
        let set =
            generate_synthetic(&specs, per_domain, size, cfg.synth_seed)?.with_test_split(cfg.synth_test_per_domain)?;
        return Ok(set.data);
    }
    let path = Path::new(&cfg.dataset);
    if path.is_dir() {
        load_folder_dataset(path, size as u32)
    } else {
        let base = path.parent().unwrap_or(Path::new("."));
        load_manifest_images(DatasetManifest::read(path)?, base, size as u32)
    }
}
