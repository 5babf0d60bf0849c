mod calibrate;
mod coverage;
mod extract;
mod refine;
mod sdcd;
mod simulate;
mod sweep_noise;

use std::path::Path;

use confgap::persistence::{self, ArtifactEnvelope, Payload};
use serde_json::Value;

use crate::failure::{CliResult, OutputContext};

pub use calibrate::{run as calibrate, CalibrateArgs};
pub use coverage::{run as coverage, CoverageArgs};
pub use extract::{run as extract, ExtractArgs};
pub use refine::{run as refine, RefineArgs};
pub use sdcd::{run as sdcd, SdcdArgs};
pub use simulate::{run as simulate, SimulateArgs};
pub use sweep_noise::{run as sweep_noise, SweepNoiseArgs};

pub(crate) fn save_artifact<P: Payload>(
    data: &P,
    config: Value,
    path: &Path,
) -> CliResult<ArtifactEnvelope> {
    let env = persistence::save_payload(data, Some(config), path)
        .output(&format!("writing {}", path.display()))?;
    log(&format!(
        "wrote {} ({})",
        path.display(),
        &env.content_hash[..16]
    ));
    Ok(env)
}

pub(crate) fn log(msg: &str) {
    eprintln!("confgap: {msg}");
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}
