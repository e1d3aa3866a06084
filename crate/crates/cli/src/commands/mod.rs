pub mod export;
pub mod gradcheck;
pub mod optimize;
pub mod reconstruct;
pub mod replay;
pub mod simulate;
pub mod toy;

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;

/// Strips `ext` from an output path to get the file prefix.
pub(crate) fn strip_extension(path: &Path, ext: &str) -> PathBuf {
    match path.extension() {
        Some(e) if e == ext => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn enabled(self) -> bool {
        self == OnOff::On
    }
}
