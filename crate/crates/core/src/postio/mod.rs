//! Configuration, diagnostics and file output.

pub mod biomarkers;
pub mod checkpoint;
pub mod config;
pub mod output;
pub mod stress;
pub mod vtk;

pub use biomarkers::{Biomarkers, ShapeMeasure, WallGauge};
pub use config::{CrossFiberPreset, RunConfig};
pub use output::{read_csv, read_report, write_report, CsvLog, CsvTable};
pub use stress::{axial_stress, AxialStresses};
