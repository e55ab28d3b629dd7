//! File formats: depth rasters, trajectories, CSV tables, PPM images, PLY
//! meshes, bundle directories, and the JSON configuration document. All
//! formats are dependency-free and documented field by field in
//! `docs/FORMATS.md`; binary values are little-endian throughout.

pub mod bundle_dir;
pub mod config;
pub mod csv;
pub mod dmap;
pub mod ply;
pub mod ppm;
pub mod trajectory;

pub use bundle_dir::{load_bundle, save_bundle, DEFAULT_STD_FRACTION};
pub use config::{Config, SynthConfig};
pub use csv::{read_matches_csv, read_sparse_csv, write_matches_csv, write_sparse_csv};
pub use dmap::{read_dmap, read_masked_grid, write_dmap, write_masked_grid};
pub use ply::{read_ply, write_ply};
pub use ppm::{read_ppm, write_ppm};
pub use trajectory::{read_trajectory, write_trajectory};
