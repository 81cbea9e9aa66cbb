//! Procedural phantom slices with injectable synthetic anomalies, external
//! image-folder ingestion and deterministic stratified splits.

mod dataset;
mod folder;
mod phantom;

pub use dataset::{build_dataset, slice_id, stratified_split, Dataset, DatasetSplit, ScanSlice, VAL_FRACTION};
pub use folder::{image_to_gray, load_dataset_dir, load_image_folder, mask_to_gray, read_split, write_dataset};
pub(crate) use folder::{decode, save_png};
pub use phantom::{
    augment_blob, augment_blob_with, gaussian_blob, generate_phantom_background, inject_anomaly, BlobWarp,
    PhantomConfig,
};
