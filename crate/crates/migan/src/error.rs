use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] migan_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: malformed JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("{path}: not a valid {expected} file: {message}")]
    Format { path: PathBuf, expected: &'static str, message: String },
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, expected: &'static str, message: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), expected, message: message.into() }
    }

    /// Process exit status: 2 data, 3 configuration, 4 checkpoint or
    /// weights files, 5 numerical divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use migan_core::Error as E;
        match self {
            Error::Core(e) => match e {
                E::ShapeMismatch(_)
                | E::MissingPair(_)
                | E::InsufficientData(_)
                | E::DegenerateInput(_)
                | E::SingleClass(_)
                | E::NoPositive(_) => 2,
                E::Spec(_) | E::Mode(_) | E::Config(_) | E::StructureMismatch(_) | E::Domain(_) => 3,
                E::WeightsFormat(_) | E::Checksum(_) => 4,
                E::NonFiniteLoss(_) => 5,
            },
            Error::Image { .. } => 2,
            Error::ConfigFile { .. } => 3,
            Error::Format { .. } | Error::Json { .. } => 4,
            Error::Io { .. } => 1,
        }
    }
}
