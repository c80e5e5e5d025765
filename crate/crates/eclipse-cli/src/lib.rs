//! IO companion to `eclipse-core`: the model container and key file
//! formats, seeded fixtures, report serialization, and timing helpers used
//! by the `eclipse` binary.

pub mod container;
pub mod fixtures;
pub mod keyfile;
pub mod report;
