use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid camera manifest: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("{path}: cannot decode image: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("{path}: image is {got:?}, expected {expected:?}")]
    ImageSize { path: PathBuf, expected: (u32, u32), got: (u32, u32) },
    #[error("{path}: frame {frame}: camera transform is not rigid")]
    NonRigid { path: PathBuf, frame: usize },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error(transparent)]
    Core(#[from] illumsplat_core::Error),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| IoError::Io { path, source }
    }
}
