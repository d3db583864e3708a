pub mod audit;
pub mod augment;
pub mod bench;
pub mod cluster;
pub mod evaluate;

use crate::error::{read_file, CliError};
use cayk_core::graph::NetConfig;
use cayk_core::voc::ClassList;
use std::path::Path;

/// Loads a network config file, or the improved defaults when absent.
pub fn load_net_config(path: Option<&Path>) -> Result<NetConfig, CliError> {
    match path {
        Some(p) => NetConfig::parse_toml(&read_file(p)?)
            .map_err(|e| CliError::io_config(format!("{}: {e}", p.display()))),
        None => Ok(NetConfig::improved()),
    }
}

/// Loads a class vocabulary file, or the default three-class list.
pub fn load_classes(path: Option<&Path>) -> Result<ClassList, CliError> {
    match path {
        Some(p) => ClassList::parse(&read_file(p)?)
            .map_err(|e| CliError::io_config(format!("{}: {e}", p.display()))),
        None => Ok(ClassList::default()),
    }
}
