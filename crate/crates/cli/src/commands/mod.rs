pub mod impact;
pub mod repartition;
pub mod report;
pub mod schedule;
pub mod simulate;

use std::path::Path;

use mixsched::{read_trace, GradientTrace};

use crate::error::{CliError, CliResult};
use crate::output::open_input;

pub(crate) fn load_trace(path: &Path) -> CliResult<GradientTrace> {
    read_trace(open_input(path, "trace")?).map_err(|e| CliError::input(path, e))
}
