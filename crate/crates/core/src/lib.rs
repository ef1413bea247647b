//! Core domain logic for a river-basin hydro-meteorological information system:
//! daily series, ingestion and export, analytics, gap filling, geodata and
//! the metadata catalogue. Nothing here does I/O beyond byte buffers.

pub mod analysis;
pub mod catalogue;
pub mod correction;
pub mod fixture;
pub mod geodata;
pub mod ingest;
pub mod model;
