//! Data model, CSV ingestion and the synthetic phenology generator.

pub mod dataset;
pub mod observation;
pub mod pixel;
pub mod synth;

pub use dataset::{
    read_dataset, series_from_files, write_dataset, Dataset, Sample, SchemaTag, SpeciesLabel,
};
pub use observation::{
    ingest_csv, read_labels, read_statics, write_labels, write_observations, write_statics,
    IngestConfig, Ingested, Observation, RowRejection, StaticRecord,
};
pub use pixel::{
    assemble_from_composites, assemble_pixel, unit_sphere, GeoLocation, PixelTimeSeries,
    StaticAttributes, Terrain, DW_CLASSES, DYNAMIC_CHANNELS, MONTHS, TREE_CLASS,
};
pub use synth::{synth_generate, synth_observations, ClassPhenology, SynthConfig};
