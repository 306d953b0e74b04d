use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nearfield_design::{
    evaluate_design, sample_bands, sca_design, BandExtrema, BandSpec, DesignProfile, GridDensity, PointClass,
    ScaOptions, ScaState,
};
use crate::spatial_filter::{save_filter, FirFilter};

/// Oversampling of the verification grid relative to the design grid.
pub const VERIFY_REFINEMENT: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub n_elements: usize,
    pub filter_len: usize,
    pub design_points: usize,
    pub verify_points: usize,
    pub sca: ScaState,
    pub verify: BandExtrema,
    pub passband_ripple_db: f64,
    pub gap_db: f64,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct DesignOutputs {
    pub filter: PathBuf,
    pub report: PathBuf,
    pub profile: PathBuf,
    pub trajectory: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    r_m: f64,
    omega_pi: f64,
    class: String,
    norm: f64,
}

fn class_name(c: PointClass) -> &'static str {
    match c {
        PointClass::Passband => "passband",
        PointClass::Transition => "transition",
        PointClass::Guard => "guard",
        PointClass::Stopband => "stopband",
    }
}

/// Designs the filter for `spec` and checks it on a grid refined by
/// [`VERIFY_REFINEMENT`].
pub fn design_filter(
    spec: &BandSpec,
    opts: &ScaOptions,
) -> Result<(FirFilter, DesignReport, DesignProfile)> {
    let density = GridDensity::for_spec(spec);
    let grid = sample_bands(spec, &density)?;
    let (filter, sca) = sca_design(spec, &grid, None, opts)?;
    let fine = sample_bands(spec, &density.refined(VERIFY_REFINEMENT))?;
    let profile = evaluate_design(spec, filter.taps(), &fine);
    let report = DesignReport {
        n_elements: spec.n_elements,
        filter_len: spec.filter_len,
        design_points: grid.len(),
        verify_points: fine.len(),
        sca,
        verify: profile.extrema,
        passband_ripple_db: profile.passband_ripple_db,
        gap_db: profile.gap_db,
        violations: profile.violations,
    };
    Ok((filter, report, profile))
}

/// Loads a band spec, designs the filter and writes `<stem>.filter`,
/// `<stem>_design.json`, `<stem>_profile.csv` and `<stem>_trajectory.dat`.
pub fn run_filter_design(spec_path: &Path, out_dir: &Path) -> Result<(DesignReport, DesignOutputs)> {
    let spec = BandSpec::load(spec_path)?;
    let (filter, report, profile) = design_filter(&spec, &ScaOptions::default())?;
    let stem = spec_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("filter")
        .to_string();
    std::fs::create_dir_all(out_dir)?;
    let outputs = DesignOutputs {
        filter: out_dir.join(format!("{stem}.filter")),
        report: out_dir.join(format!("{stem}_design.json")),
        profile: out_dir.join(format!("{stem}_profile.csv")),
        trajectory: out_dir.join(format!("{stem}_trajectory.dat")),
    };
    save_filter(&outputs.filter, &filter)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&outputs.report, json)?;
    let mut w = csv::Writer::from_path(&outputs.profile)
        .map_err(|e| Error::Parse(e.to_string()))?;
    for p in &profile.points {
        w.serialize(ProfileRow {
            r_m: p.r,
            omega_pi: p.omega / PI,
            class: class_name(p.class).to_string(),
            norm: p.norm,
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    let traj: String = report
        .sca
        .trajectory
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{i} {t:e}\n"))
        .collect();
    std::fs::write(&outputs.trajectory, traj)?;
    Ok((report, outputs))
}
