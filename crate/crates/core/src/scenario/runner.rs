use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Placement, ScenarioConfig};
use crate::array_model::{
    assemble_channel, build_one_ring, simulate_uplink, ArrayGeometry, ChannelMatrix, UserLocation,
    SPEED_OF_LIGHT,
};
use crate::beamformers::{
    bank_segments, cbs_mmse_bank, cbs_mrc_bank, cbs_nearfield, mmse, mrc, select_passband, zf,
    Beamformer, CbsMmseOptions, Family, NearfieldFamily, PassbandSelection, PowerProfile,
};
use crate::error::{Error, Result};
use crate::metrics::{
    complexity_counts, powers_for_receive_snr, sample_sinr, to_db, ComplexityInputs,
    MetricsReport, MultiplyCounter,
};
use crate::nearfield_design::{sample_bands, sca_design, BandSpec, GridDensity, ScaOptions};
use crate::spatial_filter::{
    build_filter_bank_with, build_operator, load_filter, CbsOperator, FilterBank, FirFilter,
};

const STREAM_CHANNEL: u64 = 1;
const STREAM_MONTE_CARLO: u64 = 2;

/// Independent generator for one purpose within a trial. The stream id packs
/// `(purpose, family, snr index)` so no two draws share a keystream.
pub fn substream(trial_seed: u64, purpose: u64, family: usize, snr: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream((purpose << 56) | ((family as u64 & 0xff) << 48) | (snr as u64 & 0xffff_ffff_ffff));
    rng
}

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub seed: u64,
    pub family: Family,
    pub snr_db: f64,
    pub sum_rate: Option<f64>,
    pub min_sinr_db: Option<f64>,
    pub multiply_count_analytic: Option<u64>,
    pub multiply_count_measured: Option<u64>,
    pub tracked_user_sinr_db: Option<f64>,
    pub mc_sum_rate: Option<f64>,
    pub status: String,
}

/// Trial averages for one (family, SNR) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub family: Family,
    pub snr_db: f64,
    pub mean_sum_rate: Option<f64>,
    pub mean_min_sinr_db: Option<f64>,
    pub mean_tracked_sinr_db: Option<f64>,
    pub mean_mc_sum_rate: Option<f64>,
    pub multiply_count_analytic: Option<u64>,
    pub multiply_count_measured: Option<u64>,
    pub ok: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub len: usize,
    pub omega_c1: f64,
    pub omega_c2: f64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub trials: usize,
    pub n_elements: usize,
    pub n_users: usize,
    pub families: Vec<Family>,
    pub snr_db: Vec<f64>,
    pub nearfield_filter: Option<FilterSummary>,
    pub warnings: Vec<String>,
    pub rows: Vec<Row>,
    pub curves: Vec<CurvePoint>,
}

impl RunReport {
    pub fn curve(&self, family: Family) -> Vec<&CurvePoint> {
        self.curves.iter().filter(|c| c.family == family).collect()
    }

    pub fn point(&self, family: Family, snr_db: f64) -> Option<&CurvePoint> {
        self.curves
            .iter()
            .find(|c| c.family == family && c.snr_db == snr_db)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.status != "ok")
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "seed",
                "family",
                "snr_db",
                "sum_rate",
                "min_sinr_db",
                "multiply_count_analytic",
                "multiply_count_measured",
                "tracked_user_sinr_db",
                "mc_sum_rate",
                "status",
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("run report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the master seed of the config.
    pub seed: Option<u64>,
    /// Directory that relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

struct NearfieldSetup {
    op: CbsOperator,
    band: (f64, f64),
    mirrored: bool,
}

struct Setup<'a> {
    cfg: &'a ScenarioConfig,
    geom: ArrayGeometry,
    bank: Option<FilterBank>,
    nearfield: Option<NearfieldSetup>,
}

/// Loads or designs the near-field filter named by the config.
pub fn nearfield_filter(cfg: &ScenarioConfig, base_dir: &Path) -> Result<Option<FirFilter>> {
    let Some(nf) = &cfg.nearfield else {
        return Ok(None);
    };
    let filter = if let Some(path) = &nf.filter_file {
        load_filter(&base_dir.join(path))?
    } else {
        let path = base_dir.join(nf.band_spec.as_ref().expect("validated"));
        let spec = BandSpec::load(&path)?;
        if spec.n_elements != cfg.array.n_elements {
            return Err(Error::config(
                "nearfield.band_spec",
                format!(
                    "spec is for N = {}, scenario has N = {}",
                    spec.n_elements, cfg.array.n_elements
                ),
            ));
        }
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec))?;
        sca_design(&spec, &grid, None, &ScaOptions::default())?.0
    };
    if filter.len() > cfg.array.n_elements {
        return Err(Error::config(
            "nearfield.filter_file",
            format!("filter has {} taps for N = {}", filter.len(), cfg.array.n_elements),
        ));
    }
    Ok(Some(filter))
}

pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let geom = geometry(cfg)?;
    let bank = cfg
        .filter
        .as_ref()
        .map(|f| build_filter_bank_with(f.bank_size, f.length, f.taper))
        .transpose()
        .map_err(|e| Error::config("filter", e.to_string()))?;
    let nf_filter = nearfield_filter(cfg, &opts.base_dir)?;
    let nearfield = match (&nf_filter, &cfg.nearfield) {
        (Some(f), Some(nf)) => Some(NearfieldSetup {
            op: build_operator(f, cfg.array.n_elements)?,
            band: nf
                .select_omega_pi
                .map(|[a, b]| (a * PI, b * PI))
                .unwrap_or((f.omega_c1(), f.omega_c2())),
            mirrored: nf.mirrored,
        }),
        _ => None,
    };
    let setup = Setup {
        cfg,
        geom,
        bank,
        nearfield,
    };

    let mut warnings = Vec::new();
    let trials: Vec<(Vec<Row>, Vec<String>)> = if cfg.users.count == 0 {
        warnings.push("scenario has no users; nothing to evaluate".to_string());
        Vec::new()
    } else {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(&setup, trial_seed(seed, t)))
            .collect::<Result<Vec<_>>>()?
    };
    let mut rows = Vec::new();
    for (r, w) in trials {
        rows.extend(r);
        for msg in w {
            if !warnings.contains(&msg) {
                warnings.push(msg);
            }
        }
    }
    let curves = summarize(cfg, &rows);
    Ok(RunReport {
        name: cfg.name.clone(),
        config: cfg.clone(),
        seed,
        trials: cfg.trials,
        n_elements: cfg.array.n_elements,
        n_users: cfg.users.count,
        families: cfg.receivers.families.clone(),
        snr_db: cfg.sweep.snr_db.clone(),
        nearfield_filter: nf_filter.map(|f| FilterSummary {
            len: f.len(),
            omega_c1: f.omega_c1(),
            omega_c2: f.omega_c2(),
            method: f.method().to_string(),
        }),
        warnings,
        rows,
        curves,
    })
}

pub fn geometry(cfg: &ScenarioConfig) -> Result<ArrayGeometry> {
    let a = &cfg.array;
    let g = match a.spacing_m {
        Some(d) => ArrayGeometry::new(a.n_elements, d, SPEED_OF_LIGHT / a.carrier_hz),
        None => ArrayGeometry::from_carrier(a.n_elements, a.carrier_hz),
    };
    g.map_err(|e| Error::config("array", e.to_string()))
}

fn place_users(
    cfg: &ScenarioConfig,
    geom: &ArrayGeometry,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UserLocation>> {
    let u = &cfg.users;
    (0..u.count)
        .map(|i| {
            let spread: f64 = rng.random();
            let base = u.distances_m.get(i).copied().unwrap_or(u.distance_m);
            let r = match u.distance_max_m {
                Some(max) => base + spread * (max - u.distance_m),
                None => base,
            };
            let draw: f64 = rng.random();
            let pinned = if i == 0 { u.tracked_omega_pi } else { None };
            if let Some(w) = pinned {
                return UserLocation::from_spatial_freq(geom, w * PI, r);
            }
            match u.placement {
                Placement::UniformOmega => {
                    UserLocation::from_spatial_freq(geom, (2.0 * draw - 1.0) * PI, r)
                }
                Placement::UniformAngle => UserLocation::new(r, (draw - 0.5) * PI),
                Placement::Explicit => UserLocation::from_spatial_freq(geom, u.omega_pi[i] * PI, r),
            }
        })
        .collect()
}

fn draw_channel(setup: &Setup, seed: u64) -> Result<ChannelMatrix> {
    let cfg = setup.cfg;
    let mut rng = substream(seed, STREAM_CHANNEL, 0, 0);
    let users = place_users(cfg, &setup.geom, &mut rng)?;
    let ring = if cfg.multipath.enabled {
        Some(build_one_ring(
            &users,
            cfg.multipath.scatterers_per_user,
            cfg.multipath.ring_radius_m,
            &mut rng,
        )?)
    } else {
        None
    };
    assemble_channel(
        &setup.geom,
        &users,
        cfg.channel.model,
        ring.as_ref(),
        cfg.channel.beta0,
    )
}

fn nearfield_selection(nf: &NearfieldSetup, ch: &ChannelMatrix) -> PassbandSelection {
    let omegas: Vec<f64> = ch
        .spatial_freqs()
        .into_iter()
        .map(|w| if nf.mirrored { w.abs() } else { w })
        .collect();
    // inclusive upper edge so a band ending at π keeps users at |ω| = π
    select_passband(&omegas, nf.band.0, nf.band.1 + 1e-12)
}

fn snr_independent(f: Family) -> bool {
    matches!(
        f,
        Family::Mrc | Family::Zf | Family::CbsMrc | Family::CbsMrcWhitened | Family::NfCbsMrc
    )
}

fn build(
    setup: &Setup,
    family: Family,
    ch: &ChannelMatrix,
    powers: &PowerProfile,
    selection: Option<&PassbandSelection>,
) -> Result<Beamformer> {
    let bank = || setup.bank.as_ref().expect("validated");
    let dec = &setup.cfg.decimation;
    let opts = |decimate: bool, whiten: bool| CbsMmseOptions {
        decimation: decimate.then_some((dec.interval, dec.offset)),
        whiten,
    };
    let nf = |kind| {
        let nf = setup.nearfield.as_ref().expect("validated");
        cbs_nearfield(&nf.op, ch, powers, selection.expect("near-field selection"), kind)
    };
    match family {
        Family::Mrc => mrc(ch),
        Family::Zf => zf(ch),
        Family::Mmse => mmse(ch, powers),
        Family::CbsMrc => cbs_mrc_bank(bank(), ch, false),
        Family::CbsMrcWhitened => cbs_mrc_bank(bank(), ch, true),
        Family::CbsMmse => cbs_mmse_bank(bank(), ch, powers, opts(false, false)),
        Family::CbsMmseDecimated => cbs_mmse_bank(bank(), ch, powers, opts(true, false)),
        Family::CbsMmseWhitened => cbs_mmse_bank(bank(), ch, powers, opts(false, true)),
        Family::NfCbsMrc => nf(NearfieldFamily::Mrc),
        Family::NfCbsMmse => nf(NearfieldFamily::Mmse),
    }
}

fn analytic_count(
    setup: &Setup,
    family: Family,
    ch: &ChannelMatrix,
    selection: Option<&PassbandSelection>,
) -> Option<u64> {
    let n = ch.n_elements() as u64;
    let k = ch.n_users() as u64;
    let inputs = match family {
        Family::Mrc | Family::Zf | Family::Mmse => ComplexityInputs::uniform(n, k, 1, 1, 1),
        Family::NfCbsMrc | Family::NfCbsMmse => {
            let kp = selection?.len() as u64;
            let l = setup.nearfield.as_ref()?.op.filter_len() as u64;
            ComplexityInputs {
                n,
                k: kp,
                l,
                segment_users: vec![kp],
                m: 1,
                nd: 1,
            }
        }
        _ => {
            let bank = setup.bank.as_ref()?;
            let segment_users: Vec<u64> = bank_segments(bank, ch)
                .iter()
                .map(|s| s.len() as u64)
                .collect();
            ComplexityInputs {
                n,
                k: segment_users.iter().sum(),
                l: setup.cfg.filter.as_ref()?.length as u64,
                segment_users,
                m: bank.len() as u64,
                nd: setup.cfg.decimation.interval as u64,
            }
        }
    };
    complexity_counts(&inputs).ok().map(|t| t.analytic(family))
}

fn measured_count(bf: &Beamformer, n: usize) -> Result<u64> {
    let counter = MultiplyCounter::new();
    bf.combine(&DVector::from_element(n, Complex64::new(0.0, 0.0)), &counter)?;
    Ok(counter.get())
}

fn family_index(f: Family) -> usize {
    Family::ALL.iter().position(|g| *g == f).expect("listed family")
}

fn failed_row(seed: u64, family: Family, snr_db: f64, e: &Error) -> Row {
    Row {
        seed,
        family,
        snr_db,
        sum_rate: None,
        min_sinr_db: None,
        multiply_count_analytic: None,
        multiply_count_measured: None,
        tracked_user_sinr_db: None,
        mc_sum_rate: None,
        status: format!("failed: {e}"),
    }
}

fn evaluate(
    setup: &Setup,
    bf: &Beamformer,
    ch: &ChannelMatrix,
    powers: &[f64],
    seed: u64,
    snr_index: usize,
    analytic: Option<u64>,
) -> Result<Row> {
    let cfg = setup.cfg;
    let report = MetricsReport::evaluate(bf, ch, powers, cfg.channel.noise_model)?;
    let min = report.min_sinr_db();
    let mc_sum_rate = if cfg.monte_carlo.symbols > 0 {
        let mut rng = substream(seed, STREAM_MONTE_CARLO, family_index(bf.family()), snr_index);
        let block = simulate_uplink(
            ch,
            powers,
            1.0,
            cfg.monte_carlo.symbols,
            cfg.monte_carlo.alphabet,
            &mut rng,
        )?;
        let g = sample_sinr(bf, &block)?;
        Some(g.iter().map(|g| (1.0 + g).log2()).sum())
    } else {
        None
    };
    Ok(Row {
        seed,
        family: bf.family(),
        snr_db: cfg.sweep.snr_db[snr_index],
        sum_rate: Some(report.sum_rate),
        min_sinr_db: min.is_finite().then_some(min),
        multiply_count_analytic: analytic,
        multiply_count_measured: Some(measured_count(bf, ch.n_elements())?),
        tracked_user_sinr_db: cfg
            .tracked_user()
            .and_then(|u| report.sinr_of(u))
            .map(to_db),
        mc_sum_rate,
        status: "ok".to_string(),
    })
}

/// All (SNR, family) rows of one trial. Only a failure to draw the channel
/// aborts the run; receiver failures become rows.
fn run_trial(setup: &Setup, seed: u64) -> Result<(Vec<Row>, Vec<String>)> {
    let cfg = setup.cfg;
    let ch = draw_channel(setup, seed)?;
    let selection = setup.nearfield.as_ref().map(|nf| nearfield_selection(nf, &ch));
    let snrs = &cfg.sweep.snr_db;
    let families = &cfg.receivers.families;
    let mut warnings = Vec::new();
    let mut fixed: Vec<Option<Result<Beamformer>>> = families.iter().map(|_| None).collect();
    let mut rows = Vec::with_capacity(snrs.len() * families.len());
    for (si, &snr) in snrs.iter().enumerate() {
        let powers = powers_for_receive_snr(
            ch.users(),
            snr,
            cfg.channel.beta0,
            cfg.channel.snr_convention,
        );
        let profile = PowerProfile::finite(powers.clone())?;
        for (fi, &family) in families.iter().enumerate() {
            let fresh;
            let bf = if snr_independent(family) {
                fixed[fi].get_or_insert_with(|| build(setup, family, &ch, &profile, selection.as_ref()))
            } else {
                fresh = build(setup, family, &ch, &profile, selection.as_ref());
                &fresh
            };
            let analytic = analytic_count(setup, family, &ch, selection.as_ref());
            let row = match bf {
                Ok(bf) => {
                    for w in bf.warnings() {
                        warnings.push(format!("{family}: {w}"));
                    }
                    evaluate(setup, bf, &ch, &powers, seed, si, analytic)
                        .unwrap_or_else(|e| failed_row(seed, family, snr, &e))
                }
                Err(e) => failed_row(seed, family, snr, e),
            };
            rows.push(row);
        }
    }
    Ok((rows, warnings))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn summarize(cfg: &ScenarioConfig, rows: &[Row]) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for &family in &cfg.receivers.families {
        for &snr in &cfg.sweep.snr_db {
            let sel: Vec<&Row> = rows
                .iter()
                .filter(|r| r.family == family && r.snr_db == snr)
                .collect();
            let ok: Vec<&&Row> = sel.iter().filter(|r| r.status == "ok").collect();
            let first = ok.first();
            out.push(CurvePoint {
                family,
                snr_db: snr,
                mean_sum_rate: mean(ok.iter().filter_map(|r| r.sum_rate)),
                mean_min_sinr_db: mean(ok.iter().filter_map(|r| r.min_sinr_db)),
                mean_tracked_sinr_db: mean(ok.iter().filter_map(|r| r.tracked_user_sinr_db)),
                mean_mc_sum_rate: mean(ok.iter().filter_map(|r| r.mc_sum_rate)),
                multiply_count_analytic: first.and_then(|r| r.multiply_count_analytic),
                multiply_count_measured: first.and_then(|r| r.multiply_count_measured),
                ok: ok.len(),
                failed: sel.len() - ok.len(),
            });
        }
    }
    out
}

/// Runs a config file and writes the CSV and JSON report into `out_dir`.
pub fn run_config_file(
    path: &Path,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<(RunReport, PathBuf, PathBuf)> {
    let cfg = ScenarioConfig::load(path)?;
    let opts = RunOptions {
        seed,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let report = run_scenario(&cfg, &opts)?;
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(cfg.csv_name());
    let json_path = out_dir.join(cfg.report_name());
    report.write_csv(std::io::BufWriter::new(std::fs::File::create(&csv_path)?))?;
    std::fs::write(&json_path, report.to_json()?)?;
    Ok((report, csv_path, json_path))
}
