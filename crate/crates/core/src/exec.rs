use serde::{Deserialize, Serialize};

/// How the map/reduce stages of an objective evaluation are executed.
///
/// Both modes produce identical integer results. Floating-point reductions in
/// parallel mode use fixed-size chunks merged left to right, so they are
/// reproducible run to run and agree with the serial path to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Work items per parallel task. Also fixes the reduction tree shape.
pub(crate) const CHUNK: usize = 4096;
