//! Near-field CBS filter synthesis: band sampling in (r, ω), post-CBS
//! vectors under the second-order spherical model, and the min-max design
//! solved by successive convex approximation.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::{ArrayGeometry, UserLocation};
use crate::error::{ConstraintClass, Error, Result};
use crate::socp_solver::{
    self, lift_complex_vector, unlift_vector, ConeBlock, ConeBound, ConeProblem, IdentityBlock,
    SolveStatus, SolverSettings,
};
use crate::spatial_filter::{design_window_bandpass, FilterMethod, FirFilter};

/// Response model used inside the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DesignModel {
    #[default]
    Usw2,
    /// Drops the quadratic phase (`ψ = 0`).
    FarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandSpec {
    pub n_elements: usize,
    pub filter_len: usize,
    pub carrier_hz: f64,
    pub beta0: f64,
    pub eps_pass: f64,
    pub eps_trans: f64,
    pub omega_c: (f64, f64),
    pub omega_s: (f64, f64),
    pub r_c: (f64, f64),
    pub r_s: (f64, f64),
    /// Bands apply to `|ω|`.
    pub mirrored: bool,
    /// Fraction of each transition gap, measured from the passband edge,
    /// left unconstrained.
    pub transition_guard: f64,
    pub real_taps: bool,
    pub model: DesignModel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandSpecFile {
    n_elements: usize,
    filter_len: usize,
    #[serde(default = "default_carrier")]
    carrier_hz: f64,
    #[serde(default = "default_beta0")]
    beta0: f64,
    eps_pass: f64,
    eps_trans: f64,
    omega_c_pi: [f64; 2],
    omega_s_pi: [f64; 2],
    r0_m: Option<f64>,
    r_c_m: Option<[f64; 2]>,
    r_s_m: Option<[f64; 2]>,
    #[serde(default = "default_true")]
    mirrored: bool,
    #[serde(default = "default_guard")]
    transition_guard: f64,
    #[serde(default)]
    real_taps: bool,
    #[serde(default)]
    model: DesignModel,
}

fn default_carrier() -> f64 {
    3.0e9
}

fn default_beta0() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_guard() -> f64 {
    0.5
}

impl BandSpec {
    /// Fixed-distance spec at `r0`.
    #[allow(clippy::too_many_arguments)]
    pub fn fixed_distance(
        n_elements: usize,
        filter_len: usize,
        carrier_hz: f64,
        r0: f64,
        omega_c: (f64, f64),
        omega_s: (f64, f64),
        eps_pass: f64,
        eps_trans: f64,
    ) -> Result<Self> {
        let spec = Self {
            n_elements,
            filter_len,
            carrier_hz,
            beta0: 1.0,
            eps_pass,
            eps_trans,
            omega_c,
            omega_s,
            r_c: (r0, r0),
            r_s: (r0, r0),
            mirrored: true,
            transition_guard: 0.5,
            real_taps: false,
            model: DesignModel::Usw2,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.n_elements.is_multiple_of(2) || self.n_elements == 0 {
            return bad("n_elements", format!("must be a positive odd integer, got {}", self.n_elements));
        }
        if self.filter_len == 0 || self.filter_len > self.n_elements {
            return bad(
                "filter_len",
                format!("must lie in [1, {}], got {}", self.n_elements, self.filter_len),
            );
        }
        if !(self.carrier_hz > 0.0) {
            return bad("carrier_hz", "must be positive".into());
        }
        if !(self.beta0 > 0.0) {
            return bad("beta0", "must be positive".into());
        }
        if !(self.eps_pass > self.eps_trans && self.eps_trans > 0.0) {
            return bad(
                "eps_pass",
                format!("need eps_pass > eps_trans > 0, got {} and {}", self.eps_pass, self.eps_trans),
            );
        }
        let (wc1, wc2) = self.omega_c;
        let (ws1, ws2) = self.omega_s;
        let lo = if self.mirrored { 0.0 } else { -PI };
        if !(lo <= ws1 && ws1 <= wc1 && wc1 < wc2 && wc2 <= ws2 && ws2 <= PI + 1e-12) {
            return bad(
                "omega_s_pi",
                format!(
                    "need w_s1 <= w_c1 < w_c2 <= w_s2 within the angular range, got s=({:.4}pi, {:.4}pi) c=({:.4}pi, {:.4}pi)",
                    ws1 / PI,
                    ws2 / PI,
                    wc1 / PI,
                    wc2 / PI
                ),
            );
        }
        let (rc1, rc2) = self.r_c;
        let (rs1, rs2) = self.r_s;
        if !(0.0 < rs1 && rs1 <= rc1 && rc1 <= rc2 && rc2 <= rs2) {
            return bad(
                "r_s_m",
                format!("need 0 < r_s1 <= r_c1 <= r_c2 <= r_s2, got s=({rs1}, {rs2}) c=({rc1}, {rc2})"),
            );
        }
        if !(0.0..1.0).contains(&self.transition_guard) {
            return bad("transition_guard", "must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: BandSpecFile =
            toml::from_str(text).map_err(|e| Error::config("band spec", e.to_string()))?;
        let (r_c, r_s) = match (raw.r0_m, raw.r_c_m, raw.r_s_m) {
            (Some(r0), None, None) => ((r0, r0), (r0, r0)),
            (None, Some(c), Some(s)) => ((c[0], c[1]), (s[0], s[1])),
            (None, Some(c), None) => ((c[0], c[1]), (c[0], c[1])),
            _ => {
                return Err(Error::config(
                    "r0_m",
                    "give either r0_m or r_c_m (with optional r_s_m)",
                ))
            }
        };
        let spec = Self {
            n_elements: raw.n_elements,
            filter_len: raw.filter_len,
            carrier_hz: raw.carrier_hz,
            beta0: raw.beta0,
            eps_pass: raw.eps_pass,
            eps_trans: raw.eps_trans,
            omega_c: (raw.omega_c_pi[0] * PI, raw.omega_c_pi[1] * PI),
            omega_s: (raw.omega_s_pi[0] * PI, raw.omega_s_pi[1] * PI),
            r_c,
            r_s,
            mirrored: raw.mirrored,
            transition_guard: raw.transition_guard,
            real_taps: raw.real_taps,
            model: raw.model,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { path: field, message } => Error::Config {
                path: format!("{}: {field}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        let mut out = format!(
            "n_elements = {}\nfilter_len = {}\ncarrier_hz = {:e}\nbeta0 = {}\neps_pass = {}\neps_trans = {}\nomega_c_pi = [{}, {}]\nomega_s_pi = [{}, {}]\n",
            self.n_elements,
            self.filter_len,
            self.carrier_hz,
            self.beta0,
            self.eps_pass,
            self.eps_trans,
            self.omega_c.0 / PI,
            self.omega_c.1 / PI,
            self.omega_s.0 / PI,
            self.omega_s.1 / PI,
        );
        if self.is_fixed_distance() {
            out += &format!("r0_m = {}\n", self.r_c.0);
        } else {
            out += &format!(
                "r_c_m = [{}, {}]\nr_s_m = [{}, {}]\n",
                self.r_c.0, self.r_c.1, self.r_s.0, self.r_s.1
            );
        }
        out += &format!(
            "mirrored = {}\ntransition_guard = {}\nreal_taps = {}\nmodel = \"{}\"\n",
            self.mirrored,
            self.transition_guard,
            self.real_taps,
            match self.model {
                DesignModel::Usw2 => "usw2",
                DesignModel::FarField => "far-field",
            }
        );
        out
    }

    pub fn is_fixed_distance(&self) -> bool {
        self.r_c.0 == self.r_c.1 && self.r_s.0 == self.r_c.0 && self.r_s.1 == self.r_c.1
    }

    pub fn reference_distance(&self) -> f64 {
        0.5 * (self.r_c.0 + self.r_c.1)
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::from_carrier(self.n_elements, self.carrier_hz)
    }

    pub fn n_out(&self) -> usize {
        self.n_elements - self.filter_len + 1
    }

    fn band_omega(&self, omega: f64) -> f64 {
        if self.mirrored {
            omega.abs()
        } else {
            omega
        }
    }

    /// Band membership of a point.
    pub fn classify(&self, r: f64, omega: f64) -> PointClass {
        let w = self.band_omega(omega);
        let (wc1, wc2) = self.omega_c;
        let (ws1, ws2) = self.omega_s;
        let (rc1, rc2) = self.r_c;
        let (rs1, rs2) = self.r_s;
        let in_w_pass = wc1 <= w && w <= wc2;
        let in_r_pass = rc1 <= r && r <= rc2;
        if in_w_pass && in_r_pass {
            return PointClass::Passband;
        }
        let in_w_trans = ws1 <= w && w <= ws2;
        let in_r_trans = rs1 <= r && r <= rs2;
        if !(in_w_trans && in_r_trans) {
            return PointClass::Stopband;
        }
        // position inside the gap, 0 at the outer edge and 1 at the passband
        let g = self.transition_guard;
        let depth = |x: f64, s1: f64, c1: f64, c2: f64, s2: f64| -> f64 {
            if x < c1 {
                if c1 > s1 {
                    (x - s1) / (c1 - s1)
                } else {
                    1.0
                }
            } else if x > c2 {
                if s2 > c2 {
                    (s2 - x) / (s2 - c2)
                } else {
                    1.0
                }
            } else {
                0.0
            }
        };
        let d = depth(w, ws1, wc1, wc2, ws2).max(depth(r, rs1, rc1, rc2, rs2));
        if d > 1.0 - g {
            PointClass::Guard
        } else {
            PointClass::Transition
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointClass {
    Passband,
    Transition,
    /// Inner part of a transition gap, left unconstrained.
    Guard,
    Stopband,
}

/// One sample location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub r: f64,
    pub omega: f64,
    pub psi: f64,
}

impl GridPoint {
    pub fn new(spec: &BandSpec, geom: &ArrayGeometry, r: f64, omega: f64) -> Self {
        let psi = match spec.model {
            DesignModel::Usw2 => {
                let sin = (omega / PI).clamp(-1.0, 1.0);
                PI * geom.spacing_m().powi(2) * (1.0 - sin * sin) / (geom.wavelength_m() * r)
            }
            DesignModel::FarField => 0.0,
        };
        Self { r, omega, psi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDensity {
    pub bulk_step: f64,
    pub edge_step: f64,
    pub edge_window: f64,
    /// Divisions of the transition shell in `r`.
    pub r_divisions: usize,
    /// Log-spaced distances on each side of the shell.
    pub r_outer: usize,
}

impl GridDensity {
    pub fn for_spec(spec: &BandSpec) -> Self {
        let n = spec.n_elements as f64;
        Self {
            bulk_step: PI / n,
            edge_step: PI / (4.0 * n),
            edge_window: 0.1 * PI,
            r_divisions: 32,
            r_outer: 6,
        }
    }

    /// Grid `factor` times denser in every direction.
    pub fn refined(&self, factor: usize) -> Self {
        let f = factor.max(1);
        Self {
            bulk_step: self.bulk_step / f as f64,
            edge_step: self.edge_step / f as f64,
            edge_window: self.edge_window,
            r_divisions: self.r_divisions * f,
            r_outer: self.r_outer * f,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintGrid {
    pub passband: Vec<GridPoint>,
    pub transition: Vec<GridPoint>,
    pub guard: Vec<GridPoint>,
    pub stopband: Vec<GridPoint>,
}

impl ConstraintGrid {
    pub fn len(&self) -> usize {
        self.passband.len() + self.transition.len() + self.guard.len() + self.stopband.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> impl Iterator<Item = (PointClass, &GridPoint)> {
        self.passband
            .iter()
            .map(|p| (PointClass::Passband, p))
            .chain(self.transition.iter().map(|p| (PointClass::Transition, p)))
            .chain(self.guard.iter().map(|p| (PointClass::Guard, p)))
            .chain(self.stopband.iter().map(|p| (PointClass::Stopband, p)))
    }
}

/// Sorted samples of `[lo, hi]`, dense near `edges`, with every edge
/// inside the range included exactly.
fn omega_samples(lo: f64, hi: f64, edges: &[f64], d: &GridDensity) -> Vec<f64> {
    let near = |w: f64| edges.iter().any(|e| (w - e).abs() <= d.edge_window);
    let mut out = Vec::new();
    let mut w = lo;
    while w <= hi + 1e-12 {
        out.push(w.min(hi));
        w += if near(w) { d.edge_step } else { d.bulk_step };
    }
    if *out.last().unwrap() < hi - 1e-12 {
        out.push(hi);
    }
    out.extend(edges.iter().copied().filter(|e| (lo..=hi).contains(e)));
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    out
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 || a == b {
        return vec![a];
    }
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1).max(1) as f64).exp()).collect()
}

/// Distances at which the bands are sampled.
fn r_samples(spec: &BandSpec, geom: &ArrayGeometry, d: &GridDensity) -> Vec<f64> {
    if spec.is_fixed_distance() {
        return vec![spec.r_c.0];
    }
    let (rs1, rs2) = spec.r_s;
    let mut out = linspace(rs1, rs2, d.r_divisions);
    out.extend([spec.r_c.0, spec.r_c.1]);
    let n = d.r_outer + 1;
    out.extend(geomspace(0.5 * rs1, rs1, n).into_iter().take(n - 1));
    out.extend(geomspace(rs2, 4.0 * rs2, n).into_iter().skip(1));
    out.push(10.0 * geom.rayleigh_distance_m().max(4.0 * rs2));
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs());
    out
}

/// Samples every band of `spec`; the stopband covers `|ω| ≤ π` over a
/// truncated distance range (or `r0` alone for fixed-distance specs).
pub fn sample_bands(spec: &BandSpec, density: &GridDensity) -> Result<ConstraintGrid> {
    if !(density.bulk_step > 0.0 && density.edge_step > 0.0) {
        return Err(Error::InvalidArgument("grid steps must be positive".into()));
    }
    spec.validate()?;
    let geom = spec.geometry()?;
    let edges = [spec.omega_s.0, spec.omega_c.0, spec.omega_c.1, spec.omega_s.1];
    let omegas: Vec<f64> = if spec.mirrored {
        let half = omega_samples(0.0, PI, &edges, density);
        let mut all: Vec<f64> = half.iter().rev().filter(|w| **w > 0.0 && **w < PI).map(|w| -w).collect();
        all.extend(half);
        all
    } else {
        omega_samples(-PI, PI, &edges, density)
    };
    let rs = r_samples(spec, &geom, density);
    let mut grid = ConstraintGrid {
        passband: Vec::new(),
        transition: Vec::new(),
        guard: Vec::new(),
        stopband: Vec::new(),
    };
    for &r in &rs {
        for &w in &omegas {
            let p = GridPoint::new(spec, &geom, r, w);
            match spec.classify(r, w) {
                PointClass::Passband => grid.passband.push(p),
                PointClass::Transition => grid.transition.push(p),
                PointClass::Guard => grid.guard.push(p),
                PointClass::Stopband => grid.stopband.push(p),
            }
        }
    }
    if grid.passband.is_empty() {
        return Err(Error::EmptyPassband);
    }
    Ok(grid)
}

/// `w_{i,p}` with `w_l = e^{−j(m_p − l)ω + j(m_p − l)²ψ}`, `m_p = −Ñ + p + L − 1`.
pub fn constraint_vector(
    geom: &ArrayGeometry,
    user: &UserLocation,
    filter_len: usize,
    p: usize,
) -> Result<DVector<Complex64>> {
    let n = geom.n_elements();
    if filter_len == 0 || filter_len > n || p > n - filter_len {
        return Err(Error::InvalidArgument(format!(
            "row {p} out of range for N = {n}, L = {filter_len}"
        )));
    }
    let omega = user.spatial_freq(geom);
    let psi = user.curvature(geom);
    let m = -geom.half_span() + p as i64 + filter_len as i64 - 1;
    Ok(DVector::from_fn(filter_len, |l, _| {
        let k = (m - l as i64) as f64;
        Complex64::from_polar(1.0, -k * omega + k * k * psi)
    }))
}

/// Post-CBS vector `s = H_c a_N(r, θ)` of the second-order model, built
/// element by element.
pub fn post_cbs_vector(
    taps: &[Complex64],
    geom: &ArrayGeometry,
    user: &UserLocation,
    beta0: f64,
) -> Result<DVector<Complex64>> {
    if !geom.is_half_wavelength() {
        return Err(Error::InvalidGeometry(
            "second-order spherical model requires half-wavelength spacing".into(),
        ));
    }
    let n = geom.n_elements();
    let l = taps.len();
    if l == 0 || l > n {
        return Err(Error::InvalidArgument(format!("filter length {l} not in [1, {n}]")));
    }
    let r = user.distance_m();
    let lead = Complex64::from_polar(beta0.sqrt() / r, -2.0 * PI * r / geom.wavelength_m());
    let mut s = DVector::zeros(n - l + 1);
    for p in 0..s.len() {
        let w = constraint_vector(geom, user, l, p)?;
        let inner: Complex64 = w.iter().zip(taps).map(|(wl, h)| wl.conj() * h).sum();
        s[p] = lead * inner;
    }
    Ok(s)
}

/// Matrix-free cone block `h ↦ S h` for one grid point, with
/// `S[p, l] = (√β₀/r) e^{j(kω − k²ψ)}`, `k = c₀ + p − l`, `c₀ = −Ñ + L − 1`.
/// The common phase `e^{−j2πr/λ}` is dropped since only norms matter.
#[derive(Debug, Clone)]
pub struct NearfieldBlock {
    amp: f64,
    taps: usize,
    n_out: usize,
    real_taps: bool,
    /// `e^{j(kω − k²ψ)}` for `k = c₀ − (L−1) .. c₀ + n_out − 1`.
    phases: Vec<Complex64>,
    /// `e^{jψl²}`.
    q: Vec<Complex64>,
    /// `E[δ + L − 1] = e^{jδ(ω − 2ψc₀)} Σ_p e^{−j2ψδp}`.
    kernel: Vec<Complex64>,
}

impl NearfieldBlock {
    pub fn new(spec: &BandSpec, point: &GridPoint) -> Self {
        let l = spec.filter_len;
        let n_out = spec.n_out();
        let c0 = -((spec.n_elements as i64 - 1) / 2) + l as i64 - 1;
        let (omega, psi) = (point.omega, point.psi);
        let k0 = c0 - (l as i64 - 1);
        let phases = (0..(n_out + l - 1))
            .map(|i| {
                let k = (k0 + i as i64) as f64;
                Complex64::from_polar(1.0, k * omega - k * k * psi)
            })
            .collect();
        let q = (0..l)
            .map(|i| Complex64::from_polar(1.0, psi * (i * i) as f64))
            .collect();
        let kernel = (0..(2 * l - 1))
            .map(|i| {
                let delta = i as f64 - (l as f64 - 1.0);
                let sum: Complex64 = (0..n_out)
                    .map(|p| Complex64::from_polar(1.0, -2.0 * psi * delta * p as f64))
                    .sum();
                sum * Complex64::from_polar(1.0, delta * (omega - 2.0 * psi * c0 as f64))
            })
            .collect();
        Self {
            amp: spec.beta0.sqrt() / point.r,
            taps: l,
            n_out,
            real_taps: spec.real_taps,
            phases,
            q,
            kernel,
        }
    }

    #[inline]
    fn entry(&self, p: usize, l: usize) -> Complex64 {
        // k − k0 = p − l + L − 1
        self.phases[p + self.taps - 1 - l]
    }

    /// `S h` for complex taps.
    pub fn apply_complex(&self, h: &[Complex64]) -> DVector<Complex64> {
        DVector::from_fn(self.n_out, |p, _| {
            let acc: Complex64 = h.iter().enumerate().map(|(l, hl)| self.entry(p, l) * hl).sum();
            acc * self.amp
        })
    }

    /// Dense complex `S`.
    pub fn dense_complex(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n_out, self.taps, |p, l| self.entry(p, l) * self.amp)
    }

    /// `SᴴS` from the closed form `amp² · q_l q̄_l' · E[l − l']`.
    pub fn gram_complex(&self) -> DMatrix<Complex64> {
        let mut g = DMatrix::zeros(self.taps, self.taps);
        self.add_complex_gram(1.0, &mut g);
        g
    }
}

impl ConeBlock for NearfieldBlock {
    fn rows(&self) -> usize {
        2 * self.n_out
    }

    fn cols(&self) -> usize {
        if self.real_taps {
            self.taps
        } else {
            2 * self.taps
        }
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let l = self.taps;
        for p in 0..self.n_out {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..l {
                let h = if self.real_taps {
                    Complex64::new(z[i], 0.0)
                } else {
                    Complex64::new(z[i], z[l + i])
                };
                acc += self.entry(p, i) * h;
            }
            acc *= self.amp;
            out[p] = acc.re;
            out[self.n_out + p] = acc.im;
        }
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        let l = self.taps;
        for i in 0..l {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in 0..self.n_out {
                acc += self.entry(p, i).conj() * Complex64::new(u[p], u[self.n_out + p]);
            }
            acc *= self.amp;
            out[i] = acc.re;
            if !self.real_taps {
                out[l + i] = acc.im;
            }
        }
    }

    fn add_gram(&self, scale: f64, h: &mut DMatrix<f64>) {
        let l = self.taps;
        let a2 = scale * self.amp * self.amp;
        for j in 0..l {
            for i in 0..l {
                let g = self.q[i] * self.q[j].conj() * self.kernel[i + l - 1 - j] * a2;
                h[(i, j)] += g.re;
                if !self.real_taps {
                    h[(i, j + l)] -= g.im;
                    h[(i + l, j)] += g.im;
                    h[(i + l, j + l)] += g.re;
                }
            }
        }
    }

    fn complex_cols(&self) -> Option<usize> {
        if self.real_taps {
            None
        } else {
            Some(self.taps)
        }
    }

    fn add_complex_gram(&self, scale: f64, g: &mut DMatrix<Complex64>) {
        let l = self.taps;
        let a2 = scale * self.amp * self.amp;
        for j in 0..l {
            let qj = self.q[j].conj() * a2;
            for i in 0..=j {
                let v = self.q[i] * qj * self.kernel[i + l - 1 - j];
                g[(i, j)] += v;
                if i != j {
                    g[(j, i)] += v.conj();
                }
            }
        }
    }
}

/// `‖s‖` at a grid point.
pub fn point_norm(spec: &BandSpec, point: &GridPoint, taps: &[Complex64]) -> f64 {
    NearfieldBlock::new(spec, point).apply_complex(taps).norm()
}

/// Radius of the tap-norm ball relative to the current iterate.
const TRUST_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Allowed increase of `t` between accepted iterations.
    pub monotone_slack: f64,
    pub solver: SolverSettings,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 50,
            monotone_slack: 1e-9,
            solver: SolverSettings {
                gap_abs: 1e-10,
                gap_rel: 1e-8,
                ..SolverSettings::default()
            },
        }
    }
}

/// Band extrema of `‖s‖` for a set of taps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandExtrema {
    pub passband_min: f64,
    pub passband_max: f64,
    pub transition_max: f64,
    pub stopband_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaState {
    #[serde(skip)]
    pub h: DVector<Complex64>,
    /// `t` at every accepted feasible iterate, starting from the first one.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// The initial taps needed a feasibility phase.
    pub feasibility_phase: bool,
    /// A subproblem made no progress within solver accuracy; the previous
    /// iterate was kept.
    pub stalled: bool,
    pub newton_steps: usize,
    pub extrema: BandExtrema,
    /// Largest violation of the original constraints over all iterates.
    pub max_violation: f64,
}

fn extrema(spec: &BandSpec, grid: &ConstraintGrid, taps: &[Complex64]) -> BandExtrema {
    let norms = |pts: &[GridPoint]| -> Vec<f64> {
        pts.par_iter().map(|p| point_norm(spec, p, taps)).collect()
    };
    let pass = norms(&grid.passband);
    let fold_max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    BandExtrema {
        passband_min: pass.iter().copied().fold(f64::INFINITY, f64::min),
        passband_max: pass.iter().copied().fold(0.0, f64::max),
        transition_max: fold_max(norms(&grid.transition)),
        stopband_max: fold_max(norms(&grid.stopband)),
    }
}

fn violation(spec: &BandSpec, e: &BandExtrema) -> f64 {
    let t = if e.transition_max.is_finite() { e.transition_max - spec.eps_trans } else { 0.0 };
    (spec.eps_pass - e.passband_min).max(t).max(0.0)
}

/// Window-method start scaled so the weakest passband point sits 3 dB above
/// the floor.
pub fn initial_taps(spec: &BandSpec, grid: &ConstraintGrid) -> Result<Vec<Complex64>> {
    let (c1, c2) = if spec.mirrored {
        spec.omega_c
    } else {
        // one-sided band: modulate a low-pass prototype to the band center
        let half = 0.5 * (spec.omega_c.1 - spec.omega_c.0);
        (0.0, half)
    };
    let proto = design_window_bandpass(spec.filter_len, c1, c2)?;
    let mut taps: Vec<Complex64> = proto.taps().to_vec();
    if !spec.mirrored {
        let center = 0.5 * (spec.omega_c.0 + spec.omega_c.1);
        // H(e^{jω}) = Σ h(l) e^{−jωl}, so a shift by +center needs e^{+jcl}
        for (l, t) in taps.iter_mut().enumerate() {
            *t *= Complex64::from_polar(1.0, center * l as f64);
        }
    }
    let min = grid
        .passband
        .iter()
        .map(|p| point_norm(spec, p, &taps))
        .fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Solver("initial filter vanishes on the passband".into()));
    }
    let scale = spec.eps_pass * 2f64.sqrt() / min;
    Ok(taps.into_iter().map(|t| t * scale).collect())
}

struct Blocks {
    pass: Vec<Arc<NearfieldBlock>>,
    problem_base: ConeProblem,
}

fn build_blocks(spec: &BandSpec, grid: &ConstraintGrid) -> Result<Blocks> {
    let mk = |pts: &[GridPoint]| -> Vec<Arc<NearfieldBlock>> {
        pts.par_iter().map(|p| Arc::new(NearfieldBlock::new(spec, p))).collect()
    };
    let n = if spec.real_taps { spec.filter_len } else { 2 * spec.filter_len };
    let mut base = ConeProblem::new(n);
    for b in mk(&grid.stopband) {
        base.add_soc(b, ConeBound::Slack, ConstraintClass::Stopband)?;
    }
    for b in mk(&grid.transition) {
        base.add_soc(b, ConeBound::Constant(spec.eps_trans), ConstraintClass::Transition)?;
    }
    Ok(Blocks {
        pass: mk(&grid.passband),
        problem_base: base,
    })
}

/// Subproblem with the passband constraints linearized at `z` and the taps
/// confined to the ball of radius `radius`.
fn linearized(spec: &BandSpec, blocks: &Blocks, z: &[f64], radius: f64) -> Result<ConeProblem> {
    let mut p = blocks.problem_base.clone();
    let n = p.n_vars();
    p.add_soc(
        Arc::new(IdentityBlock::new(n, !spec.real_taps)),
        ConeBound::Constant(radius),
        ConstraintClass::TapNorm,
    )?;
    let rows: Vec<(DVector<f64>, f64)> = blocks
        .pass
        .par_iter()
        .map(|b| {
            let mut u = vec![0.0; b.rows()];
            b.apply(z, &mut u);
            let mut g = vec![0.0; n];
            b.apply_t(&u, &mut g);
            let row = DVector::from_vec(g) * 2.0;
            let rhs = spec.eps_pass * spec.eps_pass + u.iter().map(|v| v * v).sum::<f64>();
            let scale = row.norm().max(1e-300);
            (row / scale, rhs / scale)
        })
        .collect();
    for (row, rhs) in rows {
        p.add_linear(row, rhs, ConstraintClass::Passband)?;
    }
    Ok(p)
}

fn infeasible(sol: &socp_solver::ConeSolution) -> Error {
    let worst = sol
        .certificate
        .iter()
        .max_by(|a, b| a.amount.total_cmp(&b.amount));
    match worst {
        Some(v) => Error::Infeasible {
            class: v.class,
            violation: v.amount,
        },
        None => Error::Solver("subproblem reported infeasible without a certificate".into()),
    }
}

/// Min-max design by successive convex approximation.
pub fn sca_design(
    spec: &BandSpec,
    grid: &ConstraintGrid,
    init: Option<&[Complex64]>,
    opts: &ScaOptions,
) -> Result<(FirFilter, ScaState)> {
    spec.validate()?;
    let l = spec.filter_len;
    let h0: Vec<Complex64> = match init {
        Some(h) if h.len() == l => h.to_vec(),
        Some(h) => {
            return Err(Error::DimensionMismatch {
                what: "initial taps",
                expected: l,
                got: h.len(),
            })
        }
        None => initial_taps(spec, grid)?,
    };
    let h0: Vec<Complex64> = if spec.real_taps {
        h0.into_iter().map(|t| Complex64::new(t.re, 0.0)).collect()
    } else {
        h0
    };
    let blocks = build_blocks(spec, grid)?;
    let mut z = lift_complex_vector(&DVector::from_vec(h0.clone()), spec.real_taps);

    let z_norm0 = z.norm();
    let radius = |z: &DVector<f64>| TRUST_FACTOR * z.norm().max(z_norm0);
    let e0 = extrema(spec, grid, &h0);
    let start_feasible = violation(spec, &e0) == 0.0;
    let mut state = ScaState {
        h: DVector::from_vec(h0),
        trajectory: Vec::new(),
        iterations: 0,
        converged: false,
        feasibility_phase: !start_feasible,
        stalled: false,
        newton_steps: 0,
        extrema: e0,
        max_violation: 0.0,
    };
    if !start_feasible {
        // drive the linearized constraint set toward a strictly feasible point
        let mut found = false;
        let mut last = f64::INFINITY;
        for _ in 0..opts.max_iter {
            let problem = linearized(spec, &blocks, z.as_slice(), radius(&z))?;
            let ph = socp_solver::phase_one(&problem, z.as_slice(), &opts.solver)?;
            state.newton_steps += ph.steps;
            z = ph.z;
            if ph.s < 0.0 {
                found = true;
                break;
            }
            if ph.converged && (last - ph.s).abs() <= 1e-9 * ph.s.abs().max(1e-9) {
                break;
            }
            last = ph.s;
        }
        if !found {
            let problem = linearized(spec, &blocks, z.as_slice(), radius(&z))?;
            let viol = problem.violations(z.as_slice(), f64::INFINITY);
            let worst = viol.iter().max_by(|a, b| a.amount.total_cmp(&b.amount));
            return Err(match worst {
                Some(v) => Error::Infeasible {
                    class: v.class,
                    violation: v.amount,
                },
                None => Error::Solver("feasibility phase stalled on the constraint boundary".into()),
            });
        }
    }
    let mut t_prev = if start_feasible {
        state.trajectory.push(e0.stopband_max);
        Some(e0.stopband_max)
    } else {
        None
    };

    for it in 0..opts.max_iter {
        let problem = linearized(spec, &blocks, z.as_slice(), radius(&z))?;
        let sol = socp_solver::solve(&problem, z.as_slice(), &opts.solver)?;
        state.newton_steps += sol.newton_steps;
        state.iterations = it + 1;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Err(infeasible(&sol)),
            SolveStatus::MaxIter => {
                return Err(Error::Solver(format!(
                    "subproblem {} hit the Newton budget (gap {:e})",
                    it + 1,
                    sol.gap
                )))
            }
        }
        let h = unlift_vector(sol.z.as_slice(), l);
        let e = extrema(spec, grid, h.as_slice());
        let viol = violation(spec, &e);
        if viol > 1e-9 * spec.eps_pass {
            return Err(Error::Solver(format!(
                "iterate {} violates the original constraints by {viol:e}",
                it + 1
            )));
        }
        let t_new = e.stopband_max;
        if let Some(tp) = t_prev {
            if t_new > tp + opts.monotone_slack {
                if t_new - tp <= sol.gap + opts.monotone_slack {
                    state.stalled = true;
                    state.converged = true;
                    break;
                }
                return Err(Error::NonMonotone {
                    iteration: it + 1,
                    previous: tp,
                    current: t_new,
                });
            }
        }
        state.max_violation = state.max_violation.max(viol);
        state.trajectory.push(t_new);
        state.h = h;
        state.extrema = e;
        z = sol.z;
        if let Some(tp) = t_prev {
            if (t_new - tp).abs() <= opts.tol * tp.abs().max(1.0) {
                state.converged = true;
                break;
            }
        }
        t_prev = Some(t_new);
    }
    let filter = FirFilter::new(
        state.h.iter().copied().collect(),
        spec.omega_c.0,
        spec.omega_c.1,
        FilterMethod::NearfieldOptimized,
    )?;
    Ok((filter, state))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProfilePoint {
    pub r: f64,
    pub omega: f64,
    pub class: PointClass,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignProfile {
    pub points: Vec<ProfilePoint>,
    pub extrema: BandExtrema,
    /// `20 log10(max/min)` over the passband.
    pub passband_ripple_db: f64,
    /// `20 log10(passband_min / stopband_max)`.
    pub gap_db: f64,
    /// Passband points below `ε₁` and transition points above `ε₂`.
    pub violations: usize,
}

/// `‖s(r, ω)‖` over `grid` with band-wise summaries.
pub fn evaluate_design(spec: &BandSpec, taps: &[Complex64], grid: &ConstraintGrid) -> DesignProfile {
    let points: Vec<ProfilePoint> = grid
        .points()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(class, p)| ProfilePoint {
            r: p.r,
            omega: p.omega,
            class: *class,
            norm: point_norm(spec, p, taps),
        })
        .collect();
    let band = |c: PointClass| points.iter().filter(move |p| p.class == c).map(|p| p.norm);
    let extrema = BandExtrema {
        passband_min: band(PointClass::Passband).fold(f64::INFINITY, f64::min),
        passband_max: band(PointClass::Passband).fold(0.0, f64::max),
        transition_max: band(PointClass::Transition).fold(0.0, f64::max),
        stopband_max: band(PointClass::Stopband).fold(0.0, f64::max),
    };
    let violations = band(PointClass::Passband)
        .filter(|v| *v < spec.eps_pass)
        .count()
        + band(PointClass::Transition)
            .filter(|v| *v > spec.eps_trans)
            .count();
    DesignProfile {
        passband_ripple_db: 20.0 * (extrema.passband_max / extrema.passband_min).log10(),
        gap_db: 20.0 * (extrema.passband_min / extrema.stopband_max).log10(),
        points,
        extrema,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::steering_usw2;
    use crate::socp_solver::{lift_complex, DenseBlock};
    use crate::spatial_filter::build_operator;
    use proptest::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_spec() -> BandSpec {
        BandSpec::fixed_distance(
            65,
            48,
            3.0e9,
            10.0,
            (0.4 * PI, 0.6 * PI),
            (0.3 * PI, 0.7 * PI),
            1.0,
            0.1,
        )
        .unwrap()
    }

    fn random_taps(rng: &mut ChaCha8Rng, l: usize) -> Vec<Complex64> {
        (0..l)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn identity_filter_norm() {
        let geom = ArrayGeometry::from_carrier(129, 3.0e9).unwrap();
        let user = UserLocation::new(30.0, 0.4).unwrap();
        let s = post_cbs_vector(&[Complex64::new(1.0, 0.0)], &geom, &user, 2.0).unwrap();
        assert_eq!(s.len(), 129);
        assert!((s.norm() - (129f64).sqrt() * 2f64.sqrt() / 30.0).abs() < 1e-12);
    }

    #[test]
    fn constraint_vectors_are_pure_phase_and_reproduce_rows() {
        let geom = ArrayGeometry::from_carrier(65, 3.0e9).unwrap();
        let user = UserLocation::new(12.0, -0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_taps(&mut rng, 20);
        let s = post_cbs_vector(&h, &geom, &user, 1.0).unwrap();
        let lead = Complex64::from_polar(1.0 / 12.0, -2.0 * PI * 12.0 / geom.wavelength_m());
        for p in 0..s.len() {
            let w = constraint_vector(&geom, &user, 20, p).unwrap();
            assert!(w.iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
            let hv = DVector::from_vec(h.clone());
            assert!((lead * w.dotc(&hv) - s[p]).norm() < 1e-13);
        }
    }

    #[test]
    fn zero_curvature_vector_is_geometric() {
        let geom = ArrayGeometry::from_carrier(33, 3.0e9).unwrap();
        // broadside-free endfire angle gives cos θ = 0 and ψ = 0
        let user = UserLocation::new(10.0, PI / 2.0).unwrap();
        let w = constraint_vector(&geom, &user, 8, 3).unwrap();
        let ratio = w[1] / w[0];
        for l in 1..8 {
            assert!((w[l] / w[l - 1] - ratio).norm() < 1e-12);
        }
    }

    #[test]
    fn far_field_limit_matches_factorization() {
        let geom = ArrayGeometry::from_carrier(65, 3.0e9).unwrap();
        let f = design_window_bandpass(16, 0.3 * PI, 0.6 * PI).unwrap();
        let user = UserLocation::new(1e9, 0.5).unwrap();
        let s = post_cbs_vector(f.taps(), &geom, &user, 1.0).unwrap();
        let omega = user.spatial_freq(&geom);
        let expect = f.freq_response(omega).norm() * (50f64).sqrt() / 1e9;
        assert!((s.norm() - expect).abs() <= 1e-6 * expect);
    }

    proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(100))]
        #[test]
        fn two_route_equality(r in 3.0f64..80.0, theta in -1.4f64..1.4, l in 1usize..40, seed in 0u64..1000) {
            let geom = ArrayGeometry::from_carrier(41, 3.0e9).unwrap();
            let user = UserLocation::new(r, theta).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_taps(&mut rng, l);
            let f = FirFilter::new(h.clone(), 0.0, PI, FilterMethod::NearfieldOptimized).unwrap();
            let op = build_operator(&f, 41).unwrap();
            let a = steering_usw2(&geom, &user, 1.0).unwrap();
            let via_op = op.apply(&a).unwrap();
            let direct = post_cbs_vector(&h, &geom, &user, 1.0).unwrap();
            prop_assert!((via_op - direct).norm() <= 1e-12 * (1.0 + h.iter().map(|v| v.norm()).sum::<f64>() / r));
        }

        #[test]
        fn scale_covariance(c in 0.01f64..100.0, seed in 0u64..1000) {
            let spec = desk_spec();
            let geom = spec.geometry().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_taps(&mut rng, 48);
            let p = GridPoint::new(&spec, &geom, 10.0, rng.random::<f64>() * PI);
            let a = point_norm(&spec, &p, &h);
            let hc: Vec<Complex64> = h.iter().map(|v| v * c).collect();
            prop_assert!((point_norm(&spec, &p, &hc) - c * a).abs() <= 1e-12 * c * a.max(1e-300));
        }
    }

    #[test]
    fn block_matches_post_cbs_vector_and_dense_gram() {
        let spec = desk_spec();
        let geom = spec.geometry().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_taps(&mut rng, 48);
        for &w in &[-0.9 * PI, -0.2, 0.0, 0.45 * PI, 0.99 * PI] {
            let p = GridPoint::new(&spec, &geom, 10.0, w);
            let b = NearfieldBlock::new(&spec, &p);
            let user = UserLocation::from_spatial_freq(&geom, w, 10.0).unwrap();
            let s = post_cbs_vector(&h, &geom, &user, 1.0).unwrap();
            assert!((b.apply_complex(&h).norm() - s.norm()).abs() < 1e-12);
            let dense = b.dense_complex();
            let g = dense.adjoint() * &dense;
            assert!((b.gram_complex() - &g).norm() <= 1e-10 * g.norm());
            // lifted real Gram and matrix-vector products
            let lifted = lift_complex(&dense, false);
            let mut h_real = DMatrix::zeros(96, 96);
            b.add_gram(1.0, &mut h_real);
            let mut h_dense = DMatrix::zeros(96, 96);
            lifted.add_gram(1.0, &mut h_dense);
            assert!((&h_real - &h_dense).norm() <= 1e-10 * h_dense.norm());
            let z = lift_complex_vector(&DVector::from_vec(h.clone()), false);
            let (mut u1, mut u2) = (vec![0.0; 36], vec![0.0; 36]);
            b.apply(z.as_slice(), &mut u1);
            lifted.apply(z.as_slice(), &mut u2);
            assert!(u1.iter().zip(&u2).all(|(a, c)| (a - c).abs() < 1e-12));
            let (mut g1, mut g2) = (vec![0.0; 96], vec![0.0; 96]);
            b.apply_t(&u1, &mut g1);
            lifted.apply_t(&u1, &mut g2);
            assert!(g1.iter().zip(&g2).all(|(a, c)| (a - c).abs() < 1e-11));
        }
    }

    #[test]
    fn table_filter_one_passband_is_an_omega_sweep() {
        let spec = BandSpec::from_toml(
            "n_elements = 513\nfilter_len = 470\neps_pass = 1.0\neps_trans = 0.1\nomega_c_pi = [0.4, 0.6]\nomega_s_pi = [0.38, 0.62]\nr0_m = 40.0\n",
        )
        .unwrap();
        assert_eq!(spec.beta0, 1.0);
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec)).unwrap();
        assert!(grid.passband.iter().all(|p| p.r == 40.0));
        let mut w: Vec<f64> = grid.passband.iter().map(|p| p.omega.abs()).collect();
        w.sort_by(f64::total_cmp);
        assert!((w[0] - 0.4 * PI).abs() < 1e-12);
        assert!((w[w.len() - 1] - 0.6 * PI).abs() < 1e-12);
        // the bands partition the samples
        for (c, p) in grid.points() {
            assert_eq!(spec.classify(p.r, p.omega), c);
        }
    }

    #[test]
    fn grid_counts_follow_density() {
        let spec = desk_spec();
        let d = GridDensity::for_spec(&spec);
        let grid = sample_bands(&spec, &d).unwrap();
        // passband width 0.2π sampled at π/(4N) on each side plus edges
        let per_side = (0.2 * PI / d.edge_step).round() as usize + 1;
        assert!((grid.passband.len() as i64 - 2 * per_side as i64).abs() <= 4);
        let fine = sample_bands(&spec, &d.refined(4)).unwrap();
        let ratio = fine.passband.len() as f64 / grid.passband.len() as f64;
        assert!((ratio - 4.0).abs() < 0.2);
    }

    #[test]
    fn range_spec_samples_distances() {
        let mut spec = desk_spec();
        spec.r_c = (8.0, 12.0);
        spec.r_s = (6.0, 16.0);
        let geom = spec.geometry().unwrap();
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec)).unwrap();
        assert!(grid.passband.iter().all(|p| (8.0..=12.0).contains(&p.r)));
        let rmax = grid.stopband.iter().map(|p| p.r).fold(0.0, f64::max);
        assert!((rmax - 10.0 * geom.rayleigh_distance_m().max(64.0)).abs() < 1e-9);
        let rmin = grid.stopband.iter().map(|p| p.r).fold(f64::INFINITY, f64::min);
        assert!((rmin - 3.0).abs() < 1e-9);
        for p in &grid.stopband {
            assert_eq!(spec.classify(p.r, p.omega), PointClass::Stopband);
        }
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = desk_spec();
        s.omega_s = (0.3 * PI, 0.5 * PI);
        assert!(matches!(s.validate(), Err(Error::Config { .. })));
        let mut s = desk_spec();
        s.eps_trans = 2.0;
        assert!(s.validate().is_err());
        assert!(BandSpec::from_toml("n_elements = 5").is_err());
        let text = desk_spec().to_toml();
        assert_eq!(BandSpec::from_toml(&text).unwrap(), desk_spec());
    }

    #[test]
    fn empty_stopband_gives_zero_objective() {
        let mut spec = desk_spec();
        spec.omega_s = (0.0, PI);
        spec.filter_len = 16;
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec)).unwrap();
        assert!(grid.stopband.is_empty());
        let (_, st) = sca_design(&spec, &grid, None, &ScaOptions::default()).unwrap();
        assert!(st.trajectory.iter().all(|t| *t == 0.0));
        assert!(st.extrema.passband_min >= spec.eps_pass);
    }

    /// Small spec used for the optimizer checks.
    fn small_spec() -> BandSpec {
        BandSpec::fixed_distance(
            33,
            24,
            3.0e9,
            6.0,
            (0.4 * PI, 0.6 * PI),
            (0.25 * PI, 0.75 * PI),
            1.0,
            0.3,
        )
        .unwrap()
    }

    #[test]
    fn sca_is_monotone_and_feasible() {
        let spec = small_spec();
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec)).unwrap();
        let (f, st) = sca_design(&spec, &grid, None, &ScaOptions::default()).unwrap();
        assert!(st.trajectory.len() >= 2);
        for w in st.trajectory.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", st.trajectory);
        }
        // independent re-evaluation through the element-wise route
        let geom = spec.geometry().unwrap();
        for p in &grid.passband {
            let u = UserLocation::from_spatial_freq(&geom, p.omega, p.r).unwrap();
            let s = post_cbs_vector(f.taps(), &geom, &u, spec.beta0).unwrap();
            assert!(s.norm() >= spec.eps_pass * (1.0 - 1e-9));
        }
        for p in &grid.transition {
            let u = UserLocation::from_spatial_freq(&geom, p.omega, p.r).unwrap();
            let s = post_cbs_vector(f.taps(), &geom, &u, spec.beta0).unwrap();
            assert!(s.norm() <= spec.eps_trans * (1.0 + 1e-9));
        }
        let t_last = *st.trajectory.last().unwrap();
        assert!((st.extrema.stopband_max - t_last).abs() < 1e-12);
        assert!(t_last < spec.eps_trans);
    }

    #[test]
    fn closed_form_blocks_match_dense_blocks_in_solver() {
        let spec = small_spec();
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec)).unwrap();
        let blocks = build_blocks(&spec, &grid).unwrap();
        let h0 = initial_taps(&spec, &grid).unwrap();
        let z0 = lift_complex_vector(&DVector::from_vec(h0), false);
        let fast = linearized(&spec, &blocks, z0.as_slice(), 2.0 * z0.norm()).unwrap();
        let mut dense = ConeProblem::new(fast.n_vars());
        for s in fast.socs() {
            dense
                .add_soc(Arc::new(DenseBlock::new(s.block.to_dense())), s.bound, s.class)
                .unwrap();
        }
        for r in fast.linear() {
            dense.add_linear(r.row.clone(), r.rhs, r.class).unwrap();
        }
        let settings = ScaOptions::default().solver;
        let a = socp_solver::solve(&fast, z0.as_slice(), &settings).unwrap();
        let b = socp_solver::solve(&dense, z0.as_slice(), &settings).unwrap();
        assert_eq!(a.status, SolveStatus::Optimal);
        assert_eq!(b.status, SolveStatus::Optimal);
        assert!((a.t - b.t).abs() <= 1e-7 * a.t.max(1e-3), "{} vs {}", a.t, b.t);
    }

    #[test]
    fn mirrored_real_design_is_even() {
        let mut spec = small_spec();
        spec.model = DesignModel::FarField;
        spec.real_taps = true;
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec)).unwrap();
        let (f, _) = sca_design(&spec, &grid, None, &ScaOptions::default()).unwrap();
        let profile = evaluate_design(&spec, f.taps(), &grid);
        let geom = spec.geometry().unwrap();
        for p in profile.points.iter().filter(|p| p.omega > 0.0) {
            let q = GridPoint::new(&spec, &geom, p.r, -p.omega);
            let mirror = point_norm(&spec, &q, f.taps());
            assert!((mirror - p.norm).abs() <= 1e-6 * p.norm.max(1e-3));
        }
    }

    #[test]
    fn infeasible_spec_reports_class() {
        let mut spec = small_spec();
        spec.omega_s = (0.39 * PI, 0.61 * PI);
        spec.transition_guard = 0.0;
        spec.eps_trans = 0.01;
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec)).unwrap();
        match sca_design(&spec, &grid, None, &ScaOptions::default()) {
            Err(Error::Infeasible { class, violation }) => {
                assert!(violation > 0.0);
                assert!(matches!(class, ConstraintClass::Passband | ConstraintClass::Transition));
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn identity_profile_is_flat() {
        let mut spec = desk_spec();
        spec.filter_len = 1;
        let grid = sample_bands(&spec, &GridDensity::for_spec(&spec)).unwrap();
        let prof = evaluate_design(&spec, &[Complex64::new(1.0, 0.0)], &grid);
        let expect = (65f64).sqrt() / 10.0;
        assert!(prof.points.iter().all(|p| (p.norm - expect).abs() < 1e-12));
    }
}
