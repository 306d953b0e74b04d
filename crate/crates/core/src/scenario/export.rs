use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::runner::{CurvePoint, RunReport};
use crate::error::{Error, Result};

/// Per-curve quantities that `export` can write.
pub const TAGS: [&str; 6] = [
    "sum-rate",
    "min-sinr",
    "tracked-sinr",
    "mc-sum-rate",
    "complexity-analytic",
    "complexity-measured",
];

fn value(tag: &str, c: &CurvePoint) -> Option<f64> {
    match tag {
        "sum-rate" => c.mean_sum_rate,
        "min-sinr" => c.mean_min_sinr_db,
        "tracked-sinr" => c.mean_tracked_sinr_db,
        "mc-sum-rate" => c.mean_mc_sum_rate,
        "complexity-analytic" => c.multiply_count_analytic.map(|v| v as f64),
        "complexity-measured" => c.multiply_count_measured.map(|v| v as f64),
        _ => None,
    }
}

/// Writes one `x y` file per family (`<tag>_<family>.dat`, x = SNR in dB)
/// and a `<tag>_manifest.txt` listing them. Points without a value are
/// skipped.
pub fn export(report: &RunReport, tag: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if !TAGS.contains(&tag) {
        return Err(Error::config(
            "tag",
            format!("unknown tag `{tag}`, expected one of {}", TAGS.join(", ")),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut manifest = format!("# {} seed={} trials={}\n", report.name, report.seed, report.trials);
    for &family in &report.families {
        let mut body = String::new();
        let mut points = 0;
        for c in report.curve(family) {
            if let Some(y) = value(tag, c) {
                writeln!(body, "{} {}", c.snr_db, y).expect("string write");
                points += 1;
            }
        }
        let name = format!("{tag}_{family}.dat");
        let path = out_dir.join(&name);
        std::fs::write(&path, body)?;
        writeln!(manifest, "{family} {name} {points}").expect("string write");
        written.push(path);
    }
    let path = out_dir.join(format!("{tag}_manifest.txt"));
    std::fs::write(&path, manifest)?;
    written.push(path);
    Ok(written)
}
