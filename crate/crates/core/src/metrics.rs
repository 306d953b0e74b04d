//! SINR and sum rate, beam patterns, near-field correlation maps and
//! multiply-count accounting.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::{
    steering_farfield, steering_usw2, ArrayGeometry, ChannelMatrix, UplinkRealization, UserLocation,
};
use crate::beamformers::{Beamformer, Family};
use crate::error::{Error, Result};
use crate::spatial_filter::CbsOperator;

/// Thread-safe tally of complex multiplications on an instrumented path.
#[derive(Debug, Default)]
pub struct MultiplyCounter(AtomicU64);

impl MultiplyCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) -> u64 {
        self.0.swap(0, Ordering::Relaxed)
    }
}

/// Noise term used in the SINR denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `‖v‖²`: noise treated as white in the combiner's own space.
    White,
    /// `‖T^H v‖²` with `T` the full front-end chain (e.g. `vᴴH_cH_cᴴv`).
    #[default]
    PostCbs,
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// SINR of every served user, in the order of `bf.combiners()`.
pub fn sinr(
    bf: &Beamformer,
    channel: &ChannelMatrix,
    powers: &[f64],
    noise: NoiseModel,
) -> Result<Vec<f64>> {
    let a = channel.matrix();
    if powers.len() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "SINR powers",
            expected: a.ncols(),
            got: powers.len(),
        });
    }
    bf.combiners()
        .iter()
        .map(|c| {
            if c.vector.len() != bf.fronts()[c.front].out_dim() {
                return Err(Error::DimensionMismatch {
                    what: "combining vector",
                    expected: bf.fronts()[c.front].out_dim(),
                    got: c.vector.len(),
                });
            }
            let e = bf.equivalent_combiner(c)?;
            let gains = a.adjoint() * &e;
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (i, g) in gains.iter().enumerate() {
                let p = powers[i] * g.norm_sqr();
                if i == c.user {
                    signal = p;
                } else {
                    interference += p;
                }
            }
            let noise_power = match noise {
                NoiseModel::White => c.vector.norm_squared(),
                NoiseModel::PostCbs => e.norm_squared(),
            };
            Ok(signal / (interference + noise_power))
        })
        .collect()
}

/// `Σ log2(1 + γ_k)`.
pub fn sum_rate(sinrs: &[f64]) -> Result<f64> {
    if let Some(bad) = sinrs.iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "SINR must be non-negative, got {bad}"
        )));
    }
    Ok(sinrs.iter().map(|g| (1.0 + g).log2()).sum())
}

/// How a receive-SNR axis value maps to transmit SNR `P̄_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrConvention {
    /// Per-element received SNR `β₀P̄_i/r_i²`.
    #[default]
    PerElement,
    /// `β₀P̄` without the distance term.
    Raw,
}

pub fn powers_for_receive_snr(
    users: &[UserLocation],
    receive_snr_db: f64,
    beta0: f64,
    convention: SnrConvention,
) -> Vec<f64> {
    let snr = from_db(receive_snr_db);
    users
        .iter()
        .map(|u| match convention {
            SnrConvention::PerElement => snr * u.distance_m().powi(2) / beta0,
            SnrConvention::Raw => snr / beta0,
        })
        .collect()
}

/// Per-family SINR/sum-rate summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub family: Family,
    pub users: Vec<usize>,
    pub sinr: Vec<f64>,
    pub sinr_db: Vec<f64>,
    pub sum_rate: f64,
}

impl MetricsReport {
    pub fn from_sinr(family: Family, users: Vec<usize>, sinr: Vec<f64>) -> Result<Self> {
        let sum_rate = sum_rate(&sinr)?;
        let sinr_db = sinr.iter().map(|g| to_db(*g)).collect();
        Ok(Self {
            family,
            users,
            sinr,
            sinr_db,
            sum_rate,
        })
    }

    pub fn evaluate(
        bf: &Beamformer,
        channel: &ChannelMatrix,
        powers: &[f64],
        noise: NoiseModel,
    ) -> Result<Self> {
        let s = sinr(bf, channel, powers, noise)?;
        Self::from_sinr(bf.family(), bf.served_users(), s)
    }

    pub fn min_sinr_db(&self) -> f64 {
        self.sinr_db.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sinr_of(&self, user: usize) -> Option<f64> {
        self.users
            .iter()
            .position(|&u| u == user)
            .map(|i| self.sinr[i])
    }
}

/// Monte-Carlo SINR from a simulated block: the desired-symbol gain is
/// estimated by least squares against the known symbols and everything
/// else in the output counts as interference plus noise.
pub fn sample_sinr(bf: &Beamformer, realization: &UplinkRealization) -> Result<Vec<f64>> {
    let y = &realization.received;
    let x = &realization.symbols;
    let t = y.ncols();
    if t == 0 {
        return Err(Error::InvalidArgument("empty realization".into()));
    }
    let outs = bf
        .fronts()
        .iter()
        .map(|f| f.forward_matrix(y))
        .collect::<Result<Vec<_>>>()?;
    Ok(bf
        .combiners()
        .iter()
        .map(|c| {
            let z = (c.vector.adjoint() * &outs[c.front]).transpose();
            let xs = x.row(c.user);
            let mut cross = Complex64::new(0.0, 0.0);
            let mut energy = 0.0;
            for s in 0..t {
                cross += z[s].conj() * xs[s];
                energy += xs[s].norm_sqr();
            }
            // z ≈ g·x + r, with g = <x, z>/<x, x>
            let g = cross.conj() / energy;
            let residual: f64 = (0..t).map(|s| (z[s] - g * xs[s]).norm_sqr()).sum();
            g.norm_sqr() * energy / residual
        })
        .collect())
}

/// `|vᴴa(ω)| / ‖a(ω)‖` over a spatial-frequency grid (far-field steering).
pub fn beam_pattern_mrc(v: &DVector<Complex64>, geom: &ArrayGeometry, omegas: &[f64]) -> Result<Vec<f64>> {
    if v.len() != geom.n_elements() {
        return Err(Error::DimensionMismatch {
            what: "beam pattern vector",
            expected: geom.n_elements(),
            got: v.len(),
        });
    }
    let vn = v.norm();
    omegas
        .iter()
        .map(|&w| {
            let a = steering_farfield(geom, w, 1.0, 1.0)?;
            Ok(v.dotc(&a).norm() / (vn * a.norm()))
        })
        .collect()
}

/// Same pattern over near-field points using the second-order model.
pub fn beam_pattern_mrc_nearfield(
    v: &DVector<Complex64>,
    geom: &ArrayGeometry,
    points: &[UserLocation],
) -> Result<Vec<f64>> {
    let vn = v.norm();
    points
        .iter()
        .map(|u| {
            let a = steering_usw2(geom, u, 1.0)?;
            Ok(v.dotc(&a).norm() / (vn * a.norm()))
        })
        .collect()
}

/// Equivalent CBS-MRC pattern and its two factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CbsPattern {
    pub pattern: Vec<f64>,
    /// `|a_{N−L+1}(ω_k)ᴴ a_{N−L+1}(ω)| / (N−L+1)`.
    pub array_factor: Vec<f64>,
    /// `|H(e^{jω}) / H(e^{jω_k})|`.
    pub filter_factor: Vec<f64>,
}

pub fn beam_pattern_cbs(op: &CbsOperator, omega_k: f64, omegas: &[f64]) -> Result<CbsPattern> {
    let m = op.n_out();
    // only the relative phase progression matters
    let steer = |w: f64| -> DVector<Complex64> {
        DVector::from_fn(m, |i, _| Complex64::from_polar(1.0, i as f64 * w))
    };
    let ak = steer(omega_k);
    let hk = op.filter().freq_response(omega_k).norm();
    if hk == 0.0 {
        return Err(Error::ZeroColumn { user: 0 });
    }
    let mut pattern = Vec::with_capacity(omegas.len());
    let mut array_factor = Vec::with_capacity(omegas.len());
    let mut filter_factor = Vec::with_capacity(omegas.len());
    for &w in omegas {
        let af = ak.dotc(&steer(w)).norm() / m as f64;
        let ff = op.filter().freq_response(w).norm() / hk;
        array_factor.push(af);
        filter_factor.push(ff);
        pattern.push(af * ff);
    }
    Ok(CbsPattern {
        pattern,
        array_factor,
        filter_factor,
    })
}

/// `Γ(r, θ) = |a(r_e, θ_e)ᴴ a(r, θ)|²` under the second-order model; rows
/// follow `distances`, columns follow `angles`.
pub fn correlation_map(
    geom: &ArrayGeometry,
    reference: &UserLocation,
    distances: &[f64],
    angles: &[f64],
    beta0: f64,
    normalize: bool,
) -> Result<DMatrix<f64>> {
    let ar = steering_usw2(geom, reference, beta0)?;
    let peak = ar.norm_squared().powi(2);
    let mut out = DMatrix::zeros(distances.len(), angles.len());
    for (i, &r) in distances.iter().enumerate() {
        for (j, &th) in angles.iter().enumerate() {
            let u = UserLocation::new(r, th)?;
            let a = steering_usw2(geom, &u, beta0)?;
            let g = ar.dotc(&a).norm_sqr();
            out[(i, j)] = if normalize { g / peak } else { g };
        }
    }
    Ok(out)
}

/// Dimensions entering the closed-form complexity expressions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityInputs {
    pub n: u64,
    pub k: u64,
    pub l: u64,
    /// Users per occupied segment `K_m` (sums to `K`).
    pub segment_users: Vec<u64>,
    /// Number of segments `M` (occupied or not).
    pub m: u64,
    /// Decimation interval `N_d`.
    pub nd: u64,
}

impl ComplexityInputs {
    /// Even split of `k` users over `m` segments (first segments get the remainder).
    pub fn uniform(n: u64, k: u64, l: u64, m: u64, nd: u64) -> Self {
        let segment_users = (0..m).map(|i| k / m + u64::from(i < k % m)).collect();
        Self {
            n,
            k,
            l,
            segment_users,
            m,
            nd,
        }
    }
}

/// Analytic multiply counts (exact integer evaluations) plus the
/// uniform `K/M` approximations of the CBS-MMSE rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityTable {
    pub mrc: u64,
    pub zf: u64,
    pub mmse: u64,
    pub cbs_mrc: u64,
    pub cbs_mmse: u64,
    pub cbs_mmse_decimated: u64,
    pub whitening_overhead: u64,
    pub cbs_mmse_uniform: f64,
    pub cbs_mmse_decimated_uniform: f64,
}

impl ComplexityTable {
    pub fn analytic(&self, family: Family) -> u64 {
        match family {
            Family::Mrc => self.mrc,
            Family::Zf => self.zf,
            Family::Mmse => self.mmse,
            Family::CbsMrc | Family::NfCbsMrc => self.cbs_mrc,
            Family::CbsMrcWhitened => self.cbs_mrc + self.whitening_overhead,
            Family::CbsMmse | Family::NfCbsMmse => self.cbs_mmse,
            Family::CbsMmseDecimated => self.cbs_mmse_decimated,
            Family::CbsMmseWhitened => self.cbs_mmse + self.whitening_overhead,
        }
    }
}

pub fn complexity_counts(d: &ComplexityInputs) -> Result<ComplexityTable> {
    if d.l == 0 || d.l > d.n {
        return Err(Error::InvalidArgument(format!(
            "filter length {} must lie in [1, N = {}]",
            d.l, d.n
        )));
    }
    if d.nd == 0 || d.m == 0 {
        return Err(Error::InvalidArgument("M and N_d must be >= 1".into()));
    }
    if d.segment_users.iter().sum::<u64>() != d.k {
        return Err(Error::InvalidArgument(format!(
            "segment user counts sum to {}, expected K = {}",
            d.segment_users.iter().sum::<u64>(),
            d.k
        )));
    }
    let (n, k, l) = (d.n, d.k, d.l);
    let p = n - l + 1;
    let j = p.div_ceil(d.nd);
    let full = k * k * n + k * k * k + k * n + k * k;
    let seg = |dim: u64| -> u64 {
        d.segment_users
            .iter()
            .map(|&km| km * km * dim + km * km * km + km * dim + km * km)
            .sum()
    };
    let km = k as f64 / d.m as f64;
    let seg_uniform =
        |dim: f64| -> f64 { d.m as f64 * (km * km * dim + km.powi(3) + km * dim + km * km) };
    let pf = p as f64;
    Ok(ComplexityTable {
        mrc: k * n,
        zf: full,
        mmse: full,
        cbs_mrc: (k + l) * p,
        cbs_mmse: l * p + seg(p),
        cbs_mmse_decimated: l * p + seg(j),
        whitening_overhead: l * (l + 1) / 2 + p * p,
        cbs_mmse_uniform: (l * p) as f64 + seg_uniform(pf),
        cbs_mmse_decimated_uniform: (l * p) as f64 + seg_uniform(pf / d.nd as f64),
    })
}

/// Spatial frequencies spread evenly over `[−π, π]` (endpoints excluded).
pub fn uniform_omega_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| -PI + 2.0 * PI * (i as f64 + 0.5) / points as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::{
        assemble_channel, build_one_ring, simulate_uplink, ChannelModel, SymbolAlphabet,
    };
    use crate::beamformers::{
        cbs_mmse, cbs_mrc, mmse, mrc, zf, CbsMmseOptions, PassbandSelection, PowerProfile,
    };
    use crate::spatial_filter::{build_operator, design_window_bandpass, FirFilter};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_channel(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ChannelMatrix {
        let g = ArrayGeometry::half_wavelength(n, 0.1).unwrap();
        let a = DMatrix::from_fn(n, k, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let users = (0..k)
            .map(|_| UserLocation::new(30.0, rng.random::<f64>() * 2.0 - 1.0).unwrap())
            .collect();
        ChannelMatrix::from_parts(g, a, users, ChannelModel::ExactSpherical, true, 1.0).unwrap()
    }

    /// Brute-force SINR for a full-array combiner.
    fn sinr_oracle(e: &DVector<Complex64>, a: &DMatrix<Complex64>, p: &[f64], k: usize, noise: f64) -> f64 {
        let mut s = 0.0;
        let mut i_plus_n = noise;
        for i in 0..a.ncols() {
            let mut ip = Complex64::new(0.0, 0.0);
            for r in 0..a.nrows() {
                ip += e[r].conj() * a[(r, i)];
            }
            if i == k {
                s = p[i] * ip.norm_sqr();
            } else {
                i_plus_n += p[i] * ip.norm_sqr();
            }
        }
        s / i_plus_n
    }

    #[test]
    fn counter_accumulates() {
        let c = MultiplyCounter::new();
        c.add(5);
        c.add(7);
        assert_eq!(c.get(), 12);
        assert_eq!(c.reset(), 12);
        assert_eq!(c.get(), 0);
    }

    #[test]
    fn single_user_matched_filter_gain() {
        let g = ArrayGeometry::half_wavelength(33, 0.1).unwrap();
        let users = vec![UserLocation::new(20.0, 0.3).unwrap()];
        let beta0 = 0.5;
        let ch = assemble_channel(&g, &users, ChannelModel::FarFieldUpw, None, beta0).unwrap();
        let bf = mrc(&ch).unwrap();
        let p = 7.0;
        let s = sinr(&bf, &ch, &[p], NoiseModel::White).unwrap();
        assert_relative_eq!(s[0], p * 33.0 * beta0 / 400.0, max_relative = 1e-12);
    }

    #[test]
    fn orthogonal_users_see_no_interference() {
        let n = 17;
        let g = ArrayGeometry::half_wavelength(n, 0.1).unwrap();
        let w1 = 0.2;
        let w2 = w1 + 2.0 * PI * 3.0 / n as f64;
        let users = vec![
            UserLocation::from_spatial_freq(&g, w1, 20.0).unwrap(),
            UserLocation::from_spatial_freq(&g, w2, 20.0).unwrap(),
        ];
        let ch = assemble_channel(&g, &users, ChannelModel::FarFieldUpw, None, 1.0).unwrap();
        let bf = mrc(&ch).unwrap();
        let s = sinr(&bf, &ch, &[3.0, 5.0], NoiseModel::White).unwrap();
        assert_relative_eq!(s[0], 3.0 * n as f64 / 400.0, max_relative = 1e-9);
        assert_relative_eq!(s[1], 5.0 * n as f64 / 400.0, max_relative = 1e-9);
    }

    #[test]
    fn sinr_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = random_channel(&mut rng, 17, 5);
        let p: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 10.0 + 0.1).collect();
        for bf in [mrc(&ch).unwrap(), mmse(&ch, &PowerProfile::finite(p.clone()).unwrap()).unwrap()] {
            let s = sinr(&bf, &ch, &p, NoiseModel::White).unwrap();
            for (c, got) in bf.combiners().iter().zip(&s) {
                let want = sinr_oracle(&c.vector, ch.matrix(), &p, c.user, 1.0);
                assert_relative_eq!(*got, want, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn cbs_sinr_matches_post_filter_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ch = random_channel(&mut rng, 41, 6);
        let f = design_window_bandpass(9, 0.2 * PI, 0.6 * PI).unwrap();
        let op = build_operator(&f, 41).unwrap();
        let bf = cbs_mrc(&op, &ch).unwrap();
        let p: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 10.0 + 0.1).collect();
        let post = sinr(&bf, &ch, &p, NoiseModel::PostCbs).unwrap();
        let white = sinr(&bf, &ch, &p, NoiseModel::White).unwrap();
        let hc = op.dense();
        let u = &hc * ch.matrix();
        for (idx, c) in bf.combiners().iter().enumerate() {
            let v = &c.vector;
            let noise = (v.adjoint() * &hc * hc.adjoint() * v)[(0, 0)].re;
            assert_relative_eq!(post[idx], sinr_oracle(v, &u, &p, c.user, noise), max_relative = 1e-10);
            assert_relative_eq!(white[idx], sinr_oracle(v, &u, &p, c.user, 1.0), max_relative = 1e-10);
        }
    }

    #[test]
    fn identity_filter_noise_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = random_channel(&mut rng, 15, 4);
        let op = build_operator(&FirFilter::identity(), 15).unwrap();
        let bf = cbs_mrc(&op, &ch).unwrap();
        let p = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            sinr(&bf, &ch, &p, NoiseModel::White).unwrap(),
            sinr(&bf, &ch, &p, NoiseModel::PostCbs).unwrap()
        );
    }

    #[test]
    fn post_cbs_equals_white_on_prewhitened_system() {
        // CBS-MRC through H_c with coloured noise equals a white-noise
        // evaluation on the system y' = G^{-1/2} H_c y with combiner G^{1/2} v.
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let ch = random_channel(&mut rng, 31, 4);
            let f = design_window_bandpass(7, 0.1 * PI, 0.5 * PI).unwrap();
            let op = build_operator(&f, 31).unwrap();
            let w = crate::spatial_filter::build_whitener(&op).unwrap();
            let bf = cbs_mrc(&op, &ch).unwrap();
            let p: Vec<f64> = (0..4).map(|_| 0.5 + rng.random::<f64>()).collect();
            let post = sinr(&bf, &ch, &p, NoiseModel::PostCbs).unwrap();
            let aw = w.matrix() * op.dense() * ch.matrix();
            for (idx, c) in bf.combiners().iter().enumerate() {
                let vw = w.inverse() * &c.vector;
                let white = sinr_oracle(&vw, &aw, &p, c.user, vw.norm_squared());
                assert_relative_eq!(post[idx], white, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn sum_rate_values() {
        assert_eq!(sum_rate(&[0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(sum_rate(&[1.0, 3.0]).unwrap(), 3.0, epsilon = 1e-15);
        assert!(sum_rate(&[-0.1]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 100.0).collect();
        let mut want = 0.0;
        for x in &g {
            want += (1.0 + x).ln() / std::f64::consts::LN_2;
        }
        assert_relative_eq!(sum_rate(&g).unwrap(), want, max_relative = 1e-12);
        let rep = MetricsReport::from_sinr(Family::Mrc, (0..50).collect(), g.clone()).unwrap();
        assert!((rep.sum_rate - sum_rate(&rep.sinr).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn mmse_dominates_zf_and_mrc() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 9 + 2 * rng.random_range(0..28);
            let k = 1 + rng.random_range(0..10usize.min(n));
            let ch = random_channel(&mut rng, n, k);
            let p: Vec<f64> = (0..k).map(|_| 0.1 + 50.0 * rng.random::<f64>()).collect();
            let sm = sinr(&mmse(&ch, &PowerProfile::finite(p.clone()).unwrap()).unwrap(), &ch, &p, NoiseModel::White).unwrap();
            let sz = sinr(&zf(&ch).unwrap(), &ch, &p, NoiseModel::White).unwrap();
            let sr = sinr(&mrc(&ch).unwrap(), &ch, &p, NoiseModel::White).unwrap();
            for i in 0..k {
                assert!(sm[i] >= sz[i] - 1e-9, "seed {seed} user {i}");
                assert!(sm[i] >= sr[i] - 1e-9, "seed {seed} user {i}");
            }
        }
    }

    #[test]
    fn mmse_sum_rate_nondecreasing_in_snr() {
        let g = ArrayGeometry::half_wavelength(33, 0.1).unwrap();
        let users: Vec<UserLocation> = (0..6)
            .map(|i| UserLocation::new(100.0, -1.0 + 0.4 * i as f64).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sc = build_one_ring(&users, 3, 5.0, &mut rng).unwrap();
        let ch = assemble_channel(&g, &users, ChannelModel::ExactSpherical, Some(&sc), 1.0).unwrap();
        let mut last = 0.0;
        for step in 0..10 {
            let p = powers_for_receive_snr(&users, -10.0 + 4.0 * step as f64, 1.0, SnrConvention::PerElement);
            let bf = mmse(&ch, &PowerProfile::finite(p.clone()).unwrap()).unwrap();
            let r = sum_rate(&sinr(&bf, &ch, &p, NoiseModel::White).unwrap()).unwrap();
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn monte_carlo_matches_analytic() {
        let g = ArrayGeometry::half_wavelength(17, 0.1).unwrap();
        let users: Vec<UserLocation> = (0..4)
            .map(|i| UserLocation::new(30.0, -0.9 + 0.5 * i as f64).unwrap())
            .collect();
        let ch = assemble_channel(&g, &users, ChannelModel::ExactSpherical, None, 1.0).unwrap();
        let p = powers_for_receive_snr(&users, 0.0, 1.0, SnrConvention::PerElement);
        let bf = mrc(&ch).unwrap();
        let analytic = sinr(&bf, &ch, &p, NoiseModel::PostCbs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let real = simulate_uplink(&ch, &p, 1.0, 100_000, SymbolAlphabet::Gaussian, &mut rng).unwrap();
        let sampled = sample_sinr(&bf, &real).unwrap();
        for (a, s) in analytic.iter().zip(&sampled) {
            assert!((a - s).abs() / a < 0.03, "{a} vs {s}");
        }
    }

    #[test]
    fn mrc_pattern_peak_and_dirichlet() {
        let n = 21;
        let g = ArrayGeometry::half_wavelength(n, 0.1).unwrap();
        let wk = 0.7;
        let v = steering_farfield(&g, wk, 1.0, 1.0).unwrap().normalize();
        let grid: Vec<f64> = (0..200).map(|i| -PI + 2.0 * PI * i as f64 / 200.0).collect();
        let f = beam_pattern_mrc(&v, &g, &grid).unwrap();
        assert_relative_eq!(beam_pattern_mrc(&v, &g, &[wk]).unwrap()[0], 1.0, epsilon = 1e-12);
        for (w, val) in grid.iter().zip(&f) {
            let x = (w - wk) / 2.0;
            let dir = if x.sin().abs() < 1e-12 {
                1.0
            } else {
                ((n as f64 * x).sin() / (n as f64 * x.sin())).abs()
            };
            assert!((val - dir).abs() < 1e-10);
        }
    }

    #[test]
    fn cbs_pattern_factors() {
        let n = 65;
        let f = design_window_bandpass(30, 0.4 * PI, 0.6 * PI).unwrap();
        let op = build_operator(&f, n).unwrap();
        let g = ArrayGeometry::half_wavelength(n, 0.1).unwrap();
        let wk = 0.5 * PI;
        let grid: Vec<f64> = (0..301).map(|i| -PI + 2.0 * PI * i as f64 / 300.0).collect();
        let pat = beam_pattern_cbs(&op, wk, &grid).unwrap();
        assert_relative_eq!(beam_pattern_cbs(&op, wk, &[wk]).unwrap().pattern[0], 1.0, epsilon = 1e-12);
        // direct route: |vᴴ H_c a_N(ω)| / |vᴴ H_c a_N(ω_k)| with v = H_c a_N(ω_k)
        let ak = steering_farfield(&g, wk, 1.0, 1.0).unwrap();
        let v = op.apply(&ak).unwrap();
        let peak = v.dotc(&op.apply(&ak).unwrap()).norm();
        for (i, &w) in grid.iter().enumerate() {
            let a = steering_farfield(&g, w, 1.0, 1.0).unwrap();
            let direct = v.dotc(&op.apply(&a).unwrap()).norm() / peak;
            assert!((pat.pattern[i] - direct).abs() < 1e-12);
            assert!((pat.pattern[i] - pat.array_factor[i] * pat.filter_factor[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn cbs_pattern_tracks_filter_when_l_near_n() {
        let n = 65;
        let wk = 0.5 * PI;
        let grid: Vec<f64> = (0..=400).map(|i| PI * i as f64 / 400.0).collect();
        for (l, tol) in [(65, 1e-12), (64, 0.05)] {
            let f = design_window_bandpass(l, 0.4 * PI, 0.6 * PI).unwrap();
            let op = build_operator(&f, n).unwrap();
            let pat = beam_pattern_cbs(&op, wk, &grid).unwrap();
            for ((p, f), w) in pat.pattern.iter().zip(&pat.filter_factor).zip(&grid) {
                assert!((p - f).abs() <= tol, "L = {l}, w = {w}");
            }
        }
    }

    #[test]
    fn correlation_map_properties() {
        let g = ArrayGeometry::from_carrier(513, 3e9).unwrap();
        let reference = UserLocation::new(40.0, PI / 6.0).unwrap();
        let beta0: f64 = 1.0;
        let raw = correlation_map(&g, &reference, &[40.0], &[PI / 6.0], beta0, false).unwrap();
        assert_relative_eq!(raw[(0, 0)], (513.0 * beta0 / 1600.0f64).powi(2), max_relative = 1e-12);
        let r: Vec<f64> = (0..61).map(|i| 10.0 + i as f64).collect();
        let th: Vec<f64> = (0..61).map(|i| PI / 6.0 - 0.03 + 0.001 * i as f64).collect();
        let map = correlation_map(&g, &reference, &r, &th, beta0, true).unwrap();
        assert_relative_eq!(map[(30, 30)], 1.0, epsilon = 1e-12);
        // finite -3 dB extent along both axes
        assert!(map.column(30).iter().any(|v| *v < 0.5));
        assert!(map.row(30).iter().any(|v| *v < 0.5));
        assert!(map.iter().all(|v| *v <= 1.0 + 1e-9));
    }

    #[test]
    fn complexity_closed_forms() {
        let d = ComplexityInputs::uniform(513, 200, 110, 9, 1);
        let t = complexity_counts(&d).unwrap();
        assert_eq!(t.mrc, 200 * 513);
        assert_eq!(t.cbs_mrc, (200 + 110) * 404);
        let full = 200 * 200 * 513 + 200u64.pow(3) + 200 * 513 + 200 * 200;
        assert_eq!(t.mmse, full);
        assert_eq!(t.zf, full);
        assert_eq!(t.cbs_mmse, t.cbs_mmse_decimated);
        assert_eq!(t.whitening_overhead, 110 * 111 / 2 + 404 * 404);
        // integer split of 200 over 9 segments: two segments of 23, seven of 22
        let seg = |km: u64| km * km * 404 + km.pow(3) + km * 404 + km * km;
        assert_eq!(t.cbs_mmse, 110 * 404 + 2 * seg(23) + 7 * seg(22));
        assert!(t.mmse >= 10 * t.cbs_mmse);
        let km: f64 = 200.0 / 9.0;
        let uni = 110.0 * 404.0 + 9.0 * (km * km * 404.0 + km.powi(3) + km * 404.0 + km * km);
        assert_relative_eq!(t.cbs_mmse_uniform, uni, max_relative = 1e-12);
        let dec = complexity_counts(&ComplexityInputs::uniform(513, 200, 110, 9, 8)).unwrap();
        assert_eq!(dec.cbs_mmse_decimated, 110 * 404 + 2 * (23 * 23 * 51 + 23u64.pow(3) + 23 * 51 + 23 * 23) + 7 * (22 * 22 * 51 + 22u64.pow(3) + 22 * 51 + 22 * 22));
        assert!(dec.cbs_mmse_decimated < dec.cbs_mmse);
        assert!(complexity_counts(&ComplexityInputs { k: 5, ..d.clone() }).is_err());
    }

    #[test]
    fn measured_cbs_mrc_count_matches_table() {
        let n = 129;
        let l = 30;
        let g = ArrayGeometry::half_wavelength(n, 0.1).unwrap();
        let users: Vec<UserLocation> = (0..10)
            .map(|i| UserLocation::new(50.0, 0.9 + 0.02 * i as f64).unwrap())
            .collect();
        let ch = assemble_channel(&g, &users, ChannelModel::FarFieldUpw, None, 1.0).unwrap();
        let f = design_window_bandpass(l, 0.6 * PI, 0.8 * PI).unwrap();
        let op = build_operator(&f, n).unwrap();
        let bf = cbs_mrc(&op, &ch).unwrap();
        let counter = MultiplyCounter::new();
        bf.combine(&DVector::zeros(n), &counter).unwrap();
        let t = complexity_counts(&ComplexityInputs::uniform(n as u64, 10, l as u64, 1, 1)).unwrap();
        assert_eq!(counter.get(), t.cbs_mrc);
        let counter = MultiplyCounter::new();
        mrc(&ch).unwrap().combine(&DVector::zeros(n), &counter).unwrap();
        assert_eq!(counter.get(), t.mrc);
        let p = PowerProfile::uniform(10, 1.0).unwrap();
        let dec = cbs_mmse(&op, &ch, &p, &PassbandSelection::all(10), CbsMmseOptions { decimation: Some((4, 0)), whiten: false }).unwrap();
        let counter = MultiplyCounter::new();
        dec.combine(&DVector::zeros(n), &counter).unwrap();
        assert_eq!(counter.get(), (l * (n - l + 1) + 10 * (n - l + 1).div_ceil(4)) as u64);
    }
}
