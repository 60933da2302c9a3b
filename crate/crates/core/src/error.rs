use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: image decode/encode failed: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A scene manifest or one of its referenced files failed validation.
    #[error("{file}: field `{field}`: {message}")]
    Scene {
        file: PathBuf,
        field: String,
        message: String,
    },

    #[error("dimension mismatch for {what}: expected {expected:?}, got {actual:?}")]
    Dimensions {
        what: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("degenerate plane: {0}")]
    DegeneratePlane(String),

    #[error("rectification failed: {0}")]
    Rectification(String),

    #[error("invalid inpaint request: {0}")]
    InvalidRequest(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("no valid source patch placement ({0})")]
    NoValidPatch(String),

    #[error("backend `{backend}` failed: {cause}")]
    Backend { backend: String, cause: String },

    #[error("unknown instance id `{id}` (valid ids: {})", valid.join(", "))]
    UnknownInstance { id: String, valid: Vec<String> },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("{stage}{}: {source}", plane.as_ref().map(|p| format!(" (plane `{p}`)")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        plane: Option<String>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn scene(
        file: impl Into<PathBuf>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Scene {
            file: file.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, plane: Option<&str>) -> Self {
        Error::Stage {
            stage,
            plane: plane.map(str::to_owned),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input (as opposed to runtime failures).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Scene { .. }
            | Error::Dimensions { .. }
            | Error::DegeneratePlane(_)
            | Error::InvalidRequest(_)
            | Error::InvalidParam(_)
            | Error::UnknownInstance { .. }
            | Error::Json { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
