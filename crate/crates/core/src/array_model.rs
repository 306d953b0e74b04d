//! Uniform linear array geometry, user/scatterer placement and the three
//! array-response models (exact spherical, far-field plane wave and the
//! second-order spherical approximation).
//!
//! The array lies on the y-axis, centered at the origin, with element `n`
//! at `(0, n·d)` for `n ∈ {−(N−1)/2, …, (N−1)/2}`. A user at distance `r` and
//! angle `θ` sits at `(r·cosθ, r·sinθ)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light used to turn carrier frequencies into wavelengths.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const HALF_WAVELENGTH_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    n_elements: usize,
    spacing_m: f64,
    wavelength_m: f64,
}

impl ArrayGeometry {
    pub fn new(n_elements: usize, spacing_m: f64, wavelength_m: f64) -> Result<Self> {
        if n_elements == 0 || n_elements.is_multiple_of(2) {
            return Err(Error::InvalidGeometry(format!(
                "element count must be a positive odd integer, got {n_elements}"
            )));
        }
        if !(spacing_m > 0.0 && spacing_m.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "element spacing must be positive, got {spacing_m}"
            )));
        }
        if !(wavelength_m > 0.0 && wavelength_m.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "wavelength must be positive, got {wavelength_m}"
            )));
        }
        Ok(Self {
            n_elements,
            spacing_m,
            wavelength_m,
        })
    }

    /// Half-wavelength spaced array.
    pub fn half_wavelength(n_elements: usize, wavelength_m: f64) -> Result<Self> {
        Self::new(n_elements, wavelength_m / 2.0, wavelength_m)
    }

    /// Half-wavelength spaced array for a carrier frequency in Hz.
    pub fn from_carrier(n_elements: usize, carrier_hz: f64) -> Result<Self> {
        if !(carrier_hz > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "carrier frequency must be positive, got {carrier_hz}"
            )));
        }
        Self::half_wavelength(n_elements, SPEED_OF_LIGHT / carrier_hz)
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn spacing_m(&self) -> f64 {
        self.spacing_m
    }

    pub fn wavelength_m(&self) -> f64 {
        self.wavelength_m
    }

    /// `(N−1)/2`, the largest element index.
    pub fn half_span(&self) -> i64 {
        ((self.n_elements - 1) / 2) as i64
    }

    /// Signed element index of the `i`-th stored element (row `i` of a steering vector).
    pub fn element_index(&self, i: usize) -> i64 {
        i as i64 - self.half_span()
    }

    pub fn element_indices(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.n_elements).map(|i| self.element_index(i))
    }

    pub fn element_position(&self, n: i64) -> [f64; 2] {
        [0.0, n as f64 * self.spacing_m]
    }

    pub fn is_half_wavelength(&self) -> bool {
        let half = self.wavelength_m / 2.0;
        (self.spacing_m - half).abs() <= HALF_WAVELENGTH_RTOL * half
    }

    pub fn aperture_m(&self) -> f64 {
        self.n_elements as f64 * self.spacing_m
    }

    /// Conventional far-field boundary `2 (N d)² / λ`.
    pub fn rayleigh_distance_m(&self) -> f64 {
        2.0 * self.aperture_m().powi(2) / self.wavelength_m
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_m
    }

    /// Spatial frequency `ω = (2π/λ)·d·sinθ` for an angle.
    pub fn spatial_freq(&self, angle_rad: f64) -> f64 {
        self.wavenumber() * self.spacing_m * angle_rad.sin()
    }

    /// Inverse of [`spatial_freq`](Self::spatial_freq); `None` when `ω` maps outside `[−π/2, π/2]`.
    pub fn angle_for_spatial_freq(&self, omega: f64) -> Option<f64> {
        let s = omega / (self.wavenumber() * self.spacing_m);
        if s.abs() > 1.0 + 1e-12 {
            None
        } else {
            Some(s.clamp(-1.0, 1.0).asin())
        }
    }

    fn check_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.n_elements {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.n_elements,
                got: len,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserLocation {
    distance_m: f64,
    angle_rad: f64,
}

impl UserLocation {
    pub fn new(distance_m: f64, angle_rad: f64) -> Result<Self> {
        if !(distance_m > 0.0 && distance_m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "user distance must be positive, got {distance_m}"
            )));
        }
        if !(angle_rad.abs() <= PI / 2.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "user angle must lie in [-pi/2, pi/2], got {angle_rad}"
            )));
        }
        Ok(Self {
            distance_m,
            angle_rad: angle_rad.clamp(-PI / 2.0, PI / 2.0),
        })
    }

    /// Place a user by spatial frequency instead of angle.
    pub fn from_spatial_freq(geom: &ArrayGeometry, omega: f64, distance_m: f64) -> Result<Self> {
        let angle = geom.angle_for_spatial_freq(omega).ok_or_else(|| {
            Error::InvalidArgument(format!("spatial frequency {omega} is not visible"))
        })?;
        Self::new(distance_m, angle)
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }

    pub fn angle_rad(&self) -> f64 {
        self.angle_rad
    }

    pub fn position(&self) -> [f64; 2] {
        [
            self.distance_m * self.angle_rad.cos(),
            self.distance_m * self.angle_rad.sin(),
        ]
    }

    pub fn spatial_freq(&self, geom: &ArrayGeometry) -> f64 {
        geom.spatial_freq(self.angle_rad)
    }

    /// Quadratic phase coefficient `ψ = π d² cos²θ / (λ r)`, which equals
    /// `πλcos²θ/(4r)` under half-wavelength spacing.
    pub fn curvature(&self, geom: &ArrayGeometry) -> f64 {
        PI * geom.spacing_m().powi(2) * self.angle_rad.cos().powi(2)
            / (geom.wavelength_m() * self.distance_m)
    }

    /// `ε = d / r`.
    pub fn epsilon(&self, geom: &ArrayGeometry) -> f64 {
        geom.spacing_m() / self.distance_m
    }
}

/// Which response model builds the channel columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModel {
    ExactSpherical,
    FarFieldUpw,
    UswSecondOrder,
}

impl ChannelModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelModel::ExactSpherical => "exact-spherical",
            ChannelModel::FarFieldUpw => "far-field-upw",
            ChannelModel::UswSecondOrder => "usw-second-order",
        }
    }
}

fn common_factor(geom: &ArrayGeometry, r: f64, beta0: f64) -> Complex64 {
    Complex64::from_polar(beta0.sqrt() / r, -geom.wavenumber() * r)
}

/// Exact spherical response at an arbitrary polar point; no range guard.
fn exact_response(geom: &ArrayGeometry, r: f64, theta: f64, beta0: f64) -> DVector<Complex64> {
    let eps = geom.spacing_m() / r;
    let s = theta.sin();
    let k = geom.wavenumber();
    DVector::from_iterator(
        geom.n_elements(),
        geom.element_indices().map(|n| {
            let n = n as f64;
            let rn = r * (1.0 - 2.0 * n * eps * s + n * n * eps * eps).sqrt();
            Complex64::from_polar(beta0.sqrt() / rn, -k * rn)
        }),
    )
}

fn farfield_response(geom: &ArrayGeometry, omega: f64, r: f64, beta0: f64) -> DVector<Complex64> {
    let c = common_factor(geom, r, beta0);
    DVector::from_iterator(
        geom.n_elements(),
        geom.element_indices()
            .map(|n| c * Complex64::from_polar(1.0, n as f64 * omega)),
    )
}

fn usw2_response(
    geom: &ArrayGeometry,
    omega: f64,
    psi: f64,
    r: f64,
    beta0: f64,
) -> DVector<Complex64> {
    let c = common_factor(geom, r, beta0);
    DVector::from_iterator(
        geom.n_elements(),
        geom.element_indices().map(|n| {
            let n = n as f64;
            c * Complex64::from_polar(1.0, n * omega - n * n * psi)
        }),
    )
}

/// Exact spherical-wave response `√β₀/r_n · exp(−j2πr_n/λ)`.
pub fn steering_exact(
    geom: &ArrayGeometry,
    user: &UserLocation,
    beta0: f64,
) -> Result<DVector<Complex64>> {
    if user.distance_m() <= 10.0 * geom.spacing_m() {
        return Err(Error::InvalidArgument(format!(
            "distance {} m is too close to the array (need > 10·d = {} m)",
            user.distance_m(),
            10.0 * geom.spacing_m()
        )));
    }
    Ok(exact_response(
        geom,
        user.distance_m(),
        user.angle_rad(),
        beta0,
    ))
}

/// Far-field (uniform plane wave) response at spatial frequency `ω`.
pub fn steering_farfield(
    geom: &ArrayGeometry,
    omega: f64,
    r: f64,
    beta0: f64,
) -> Result<DVector<Complex64>> {
    if geom.is_half_wavelength() && omega.abs() > PI + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "spatial frequency {omega} outside [-pi, pi]"
        )));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance must be positive, got {r}"
        )));
    }
    Ok(farfield_response(geom, omega, r, beta0))
}

/// Second-order (USW) response `√β₀/r · e^{−j2πr/λ} · e^{j(nω − n²ψ)}`.
pub fn steering_usw2(
    geom: &ArrayGeometry,
    user: &UserLocation,
    beta0: f64,
) -> Result<DVector<Complex64>> {
    if !geom.is_half_wavelength() {
        return Err(Error::InvalidGeometry(
            "second-order spherical model requires half-wavelength spacing".into(),
        ));
    }
    Ok(usw2_response(
        geom,
        user.spatial_freq(geom),
        user.curvature(geom),
        user.distance_m(),
        beta0,
    ))
}

/// Response of `model` for a user.
pub fn steering(
    model: ChannelModel,
    geom: &ArrayGeometry,
    user: &UserLocation,
    beta0: f64,
) -> Result<DVector<Complex64>> {
    match model {
        ChannelModel::ExactSpherical => steering_exact(geom, user, beta0),
        ChannelModel::FarFieldUpw => {
            steering_farfield(geom, user.spatial_freq(geom), user.distance_m(), beta0)
        }
        ChannelModel::UswSecondOrder => steering_usw2(geom, user, beta0),
    }
}

/// Response of `model` at a scatterer position, which may lie outside the
/// user angle range (e.g. behind the array plane).
fn scatterer_response(
    model: ChannelModel,
    geom: &ArrayGeometry,
    s: &Scatterer,
    beta0: f64,
) -> DVector<Complex64> {
    let (r, theta) = (s.distance_m, s.angle_rad);
    match model {
        ChannelModel::ExactSpherical => exact_response(geom, r, theta, beta0),
        ChannelModel::FarFieldUpw => farfield_response(geom, geom.spatial_freq(theta), r, beta0),
        ChannelModel::UswSecondOrder => {
            let psi = PI * geom.spacing_m().powi(2) * theta.cos().powi(2)
                / (geom.wavelength_m() * r);
            usw2_response(geom, geom.spatial_freq(theta), psi, r, beta0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub distance_m: f64,
    pub angle_rad: f64,
}

impl Scatterer {
    pub fn from_position(p: [f64; 2]) -> Self {
        Self {
            distance_m: p[0].hypot(p[1]),
            angle_rad: p[1].atan2(p[0]),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [
            self.distance_m * self.angle_rad.cos(),
            self.distance_m * self.angle_rad.sin(),
        ]
    }
}

/// Scatterer positions plus the `Q × K` complex gain array `β_{q,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererSet {
    scatterers: Vec<Scatterer>,
    gains: DMatrix<Complex64>,
}

impl ScattererSet {
    pub fn new(scatterers: Vec<Scatterer>, gains: DMatrix<Complex64>) -> Result<Self> {
        if let Some(bad) = scatterers.iter().find(|s| !(s.distance_m > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "scatterer distance must be positive, got {}",
                bad.distance_m
            )));
        }
        if gains.nrows() != scatterers.len() {
            return Err(Error::DimensionMismatch {
                what: "scatterer gain rows",
                expected: scatterers.len(),
                got: gains.nrows(),
            });
        }
        Ok(Self { scatterers, gains })
    }

    pub fn scatterers(&self) -> &[Scatterer] {
        &self.scatterers
    }

    /// `Q × K` gains.
    pub fn gains(&self) -> &DMatrix<Complex64> {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.gains.ncols()
    }
}

/// Draws a circularly-symmetric complex Gaussian with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// One-ring scatterer placement: `q_per_user` scatterers on a circle of
/// `ring_radius_m` around each user, uniformly distributed in angle, with
/// gains `CN(0, 1/q_per_user)` on the owning user's column only.
pub fn build_one_ring<R: Rng + ?Sized>(
    users: &[UserLocation],
    q_per_user: usize,
    ring_radius_m: f64,
    rng: &mut R,
) -> Result<ScattererSet> {
    if q_per_user == 0 {
        return Err(Error::InvalidArgument(
            "one-ring model needs at least one scatterer per user".into(),
        ));
    }
    if !(ring_radius_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ring radius must be positive, got {ring_radius_m}"
        )));
    }
    let k = users.len();
    let total = k * q_per_user;
    let mut scatterers = Vec::with_capacity(total);
    let mut gains = DMatrix::zeros(total, k);
    let var = 1.0 / q_per_user as f64;
    for (i, user) in users.iter().enumerate() {
        let [ux, uy] = user.position();
        for q in 0..q_per_user {
            let phi = rng.random::<f64>() * 2.0 * PI;
            let p = [ux + ring_radius_m * phi.cos(), uy + ring_radius_m * phi.sin()];
            scatterers.push(Scatterer::from_position(p));
            gains[(i * q_per_user + q, i)] = complex_gaussian(rng, var);
        }
    }
    ScattererSet::new(scatterers, gains)
}

/// Complex `N × K` channel `A = A_LoS + ξ·A_NLoS` with its user metadata.
#[derive(Debug, Clone)]
pub struct ChannelMatrix {
    matrix: DMatrix<Complex64>,
    users: Vec<UserLocation>,
    model: ChannelModel,
    nlos: bool,
    beta0: f64,
    geometry: ArrayGeometry,
}

impl ChannelMatrix {
    /// Wraps an externally built matrix (e.g. for tests or imported channels).
    pub fn from_parts(
        geometry: ArrayGeometry,
        matrix: DMatrix<Complex64>,
        users: Vec<UserLocation>,
        model: ChannelModel,
        nlos: bool,
        beta0: f64,
    ) -> Result<Self> {
        geometry.check_len("channel rows", matrix.nrows())?;
        if matrix.ncols() != users.len() {
            return Err(Error::DimensionMismatch {
                what: "channel columns",
                expected: users.len(),
                got: matrix.ncols(),
            });
        }
        Ok(Self {
            matrix,
            users,
            model,
            nlos,
            beta0,
            geometry,
        })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn column(&self, k: usize) -> DVector<Complex64> {
        self.matrix.column(k).into_owned()
    }

    pub fn users(&self) -> &[UserLocation] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_elements(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn model(&self) -> ChannelModel {
        self.model
    }

    pub fn has_nlos(&self) -> bool {
        self.nlos
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    /// Spatial frequencies of the users' line-of-sight directions.
    pub fn spatial_freqs(&self) -> Vec<f64> {
        self.users
            .iter()
            .map(|u| u.spatial_freq(&self.geometry))
            .collect()
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.matrix.nrows(), idx.len(), |r, c| {
            self.matrix[(r, idx[c])]
        })
    }
}

/// Line-of-sight matrix for `users` under `model`.
pub fn los_matrix(
    geom: &ArrayGeometry,
    users: &[UserLocation],
    model: ChannelModel,
    beta0: f64,
) -> Result<DMatrix<Complex64>> {
    let mut a = DMatrix::zeros(geom.n_elements(), users.len());
    for (i, u) in users.iter().enumerate() {
        a.set_column(i, &steering(model, geom, u, beta0)?);
    }
    Ok(a)
}

/// Pure NLoS matrix: column `i` is `Σ_q β_{q,i} b_N(p_q) e^{−j2π‖p_q − q_i‖/λ}`.
pub fn nlos_matrix(
    geom: &ArrayGeometry,
    users: &[UserLocation],
    model: ChannelModel,
    scatterers: &ScattererSet,
    beta0: f64,
) -> Result<DMatrix<Complex64>> {
    if scatterers.n_users() != users.len() {
        return Err(Error::DimensionMismatch {
            what: "scatterer gain columns",
            expected: users.len(),
            got: scatterers.n_users(),
        });
    }
    if model == ChannelModel::UswSecondOrder && !geom.is_half_wavelength() {
        return Err(Error::InvalidGeometry(
            "second-order spherical model requires half-wavelength spacing".into(),
        ));
    }
    let k_wave = geom.wavenumber();
    let responses: Vec<DVector<Complex64>> = scatterers
        .scatterers()
        .iter()
        .map(|s| scatterer_response(model, geom, s, beta0))
        .collect();
    let mut a = DMatrix::zeros(geom.n_elements(), users.len());
    for (i, u) in users.iter().enumerate() {
        let [ux, uy] = u.position();
        let mut col = DVector::zeros(geom.n_elements());
        for (q, (s, b)) in scatterers.scatterers().iter().zip(&responses).enumerate() {
            let gain = scatterers.gains()[(q, i)];
            if gain == Complex64::new(0.0, 0.0) {
                continue;
            }
            let [px, py] = s.position();
            let hop = (px - ux).hypot(py - uy);
            col.axpy(gain * Complex64::from_polar(1.0, -k_wave * hop), b, Complex64::new(1.0, 0.0));
        }
        a.set_column(i, &col);
    }
    Ok(a)
}

/// Builds `A = A_LoS + ξ·A_NLoS` (`ξ = 1` iff `nlos` is supplied).
pub fn assemble_channel(
    geom: &ArrayGeometry,
    users: &[UserLocation],
    model: ChannelModel,
    nlos: Option<&ScattererSet>,
    beta0: f64,
) -> Result<ChannelMatrix> {
    let mut a = los_matrix(geom, users, model, beta0)?;
    if let Some(set) = nlos {
        a += nlos_matrix(geom, users, model, set, beta0)?;
    }
    ChannelMatrix::from_parts(*geom, a, users.to_vec(), model, nlos.is_some(), beta0)
}

/// Transmit symbol alphabet for Monte-Carlo realizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolAlphabet {
    #[default]
    Gaussian,
    Qpsk,
}

/// One Monte-Carlo block: received samples (`N × T`) and the unit-power
/// transmit symbols (`K × T`) that produced them.
#[derive(Debug, Clone)]
pub struct UplinkRealization {
    pub received: DMatrix<Complex64>,
    pub symbols: DMatrix<Complex64>,
    pub noise: DMatrix<Complex64>,
}

/// `y = A·diag(√P)·x + n` for `n_symbols` snapshots.
pub fn simulate_uplink<R: Rng + ?Sized>(
    channel: &ChannelMatrix,
    powers: &[f64],
    noise_var: f64,
    n_symbols: usize,
    alphabet: SymbolAlphabet,
    rng: &mut R,
) -> Result<UplinkRealization> {
    let k = channel.n_users();
    if powers.len() != k {
        return Err(Error::DimensionMismatch {
            what: "transmit powers",
            expected: k,
            got: powers.len(),
        });
    }
    if powers.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidArgument("transmit powers must be >= 0".into()));
    }
    if !(noise_var > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    let qpsk = std::f64::consts::FRAC_1_SQRT_2;
    let mut symbols = DMatrix::zeros(k, n_symbols);
    for t in 0..n_symbols {
        for i in 0..k {
            symbols[(i, t)] = match alphabet {
                SymbolAlphabet::Gaussian => complex_gaussian(rng, 1.0),
                SymbolAlphabet::Qpsk => {
                    let re = if rng.random::<bool>() { qpsk } else { -qpsk };
                    let im = if rng.random::<bool>() { qpsk } else { -qpsk };
                    Complex64::new(re, im)
                }
            };
        }
    }
    let n = channel.n_elements();
    let noise = DMatrix::from_fn(n, n_symbols, |_, _| complex_gaussian(rng, noise_var));
    let scaled = DMatrix::from_fn(n, k, |r, c| {
        channel.matrix()[(r, c)] * powers[c].sqrt()
    });
    let received = &scaled * &symbols + &noise;
    Ok(UplinkRealization {
        received,
        symbols,
        noise,
    })
}
