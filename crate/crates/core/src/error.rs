//! Crate-level error with a stable machine-readable class and exit code.

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::emission::EmissionError;
use crate::features::FeatureError;
use crate::geo::GeoError;
use crate::ingest::IngestError;
use crate::neural::NeuralError;
use crate::pipeline::PipelineError;
use crate::recommend::RecommendError;
use crate::synthcity::SynthError;

pub const EXIT_IO: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum ClvError {
    #[error("{path}: no such file")]
    Missing { path: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Ingest { path: String, source: IngestError },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Emission(#[from] EmissionError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error(transparent)]
    Synth(SynthError),
}

impl ClvError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        let path = path.display().to_string();
        if source.kind() == io::ErrorKind::NotFound {
            ClvError::Missing { path }
        } else {
            ClvError::Io { path, source }
        }
    }

    pub fn ingest(path: &Path, e: IngestError) -> Self {
        match e {
            IngestError::Io(source) => ClvError::io(path, source),
            source => ClvError::Ingest { path: path.display().to_string(), source },
        }
    }

    /// Dotted error class, e.g. `io.missing`.
    pub fn class(&self) -> &'static str {
        match self {
            ClvError::Missing { .. } => "io.missing",
            ClvError::Io { .. } => "io.error",
            ClvError::Config(_) => "config.invalid",
            ClvError::Ingest { source, .. } => match source {
                IngestError::CorruptInput { .. } => "input.corrupt",
                IngestError::Io(_) => "io.error",
                IngestError::Format(_) | IngestError::Csv(_) => "input.format",
            },
            ClvError::Geo(_) => "geo.invalid",
            ClvError::Feature(FeatureError::File(_)) => "input.format",
            ClvError::Feature(_) => "features.invalid",
            ClvError::Emission(_) => "emission.invalid",
            ClvError::Neural(e) => neural_class(e),
            ClvError::Pipeline(e) => match e {
                PipelineError::Feature(_) => "features.invalid",
                PipelineError::Emission(_) => "emission.invalid",
                PipelineError::Neural(e) => neural_class(e),
                PipelineError::Geo(_) => "geo.invalid",
                PipelineError::Recommend(_) => "recommend.invalid",
                PipelineError::Synth(SynthError::Config(_)) => "config.invalid",
                PipelineError::Synth(_) => "io.error",
                PipelineError::Split(_) => "split.invalid",
                PipelineError::Inference(_) => "inference.invalid",
                PipelineError::File(_) => "input.format",
            },
            ClvError::Recommend(_) => "recommend.invalid",
            ClvError::Synth(SynthError::Config(_)) => "config.invalid",
            ClvError::Synth(_) => "io.error",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            c if c.starts_with("io.") => EXIT_IO,
            "train.divergence" => EXIT_DIVERGENCE,
            _ => EXIT_VALIDATION,
        }
    }

    /// `class: message` on one line.
    pub fn report_line(&self) -> String {
        let msg: String = self.to_string().chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }).collect();
        format!("{}: {msg}", self.class())
    }
}

fn neural_class(e: &NeuralError) -> &'static str {
    match e {
        NeuralError::Divergence { .. } => "train.divergence",
        NeuralError::Checkpoint(_) => "model.invalid",
        NeuralError::Config(_) => "config.invalid",
        NeuralError::Shape(_) | NeuralError::Label { .. } => "model.shape",
    }
}

impl From<SynthError> for ClvError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(source) => ClvError::Io { path: "data_dir".into(), source },
            other => ClvError::Synth(other),
        }
    }
}
