//! Parameter bundles that regenerate the data behind each published figure.

use std::path::Path;

use crate::config::{parse_text, RunConfig};
use crate::error::CliError;

pub const FIGURES: [&str; 5] = ["fig2-left", "fig2-right", "fig3", "fig4a", "fig4b"];

/// `(sub-directory, key=value text)` for each run of a figure.
fn bundle(name: &str) -> Option<Vec<(&'static str, &'static str)>> {
    Some(match name {
        // thermal entropy per site: ED curves plus the large-N curve
        "fig2-left" => vec![
            ("ed", "experiment=entropy\nN=8,10,12,14\nT=log:0.01:100:41\nrealizations=20\n"),
            ("large-n", "experiment=sd\nT=log:0.005:100:41\n"),
        ],
        // ground-state entanglement against subsystem size
        "fig2-right" => vec![("ed", "experiment=see\nN=8,10,12,14\nrealizations=20\n")],
        // Im G^R(ω) at zero temperature; the large-N side is imaginary time only
        "fig3" => vec![
            ("ed", "experiment=green\nN=8,10,12\ntemperature=0\nomega_grid=lin:-1:1:801\nrealizations=20\n"),
            ("large-n", "experiment=sd\nT=0.001\n"),
        ],
        // level populations during charging, one disorder realization at N = 16
        "fig4a" => vec![("ed", "experiment=battery\nN=16\nvariant=fermionic\ntau=lin:0:10:201\nrealizations=1\n")],
        "fig4b" => vec![("ed", "experiment=battery\nN=16\nvariant=bosonic\ntau=lin:0:10:201\nrealizations=1\n")],
        _ => return None,
    })
}

/// Configs of figure `name`, each writing to `<base>/<sub-directory>`.
pub fn figure_configs(name: &str, base: &Path) -> Result<Vec<(String, RunConfig)>, CliError> {
    let parts = bundle(name).ok_or_else(|| CliError::Config {
        key: "figure".into(),
        message: format!("unknown figure '{name}' (one of {})", FIGURES.join(", ")),
    })?;
    parts
        .into_iter()
        .map(|(sub, text)| {
            let mut c = RunConfig::default();
            c.apply(&parse_text(text, &format!("figure {name}"))?)?;
            c.out = base.join(sub);
            Ok((sub.to_string(), c))
        })
        .collect()
}
