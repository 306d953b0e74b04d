//! Spatial FIR filters, the banded-Toeplitz CBS operator `H_c`, its
//! autocorrelation `G_c = H_c H_cᴴ` and the whitening operator `G_c^{-1/2}`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MultiplyCounter;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative threshold below which a `G_c` eigenvalue counts as zero.
pub const EIGEN_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMethod {
    Window,
    NearfieldOptimized,
}

impl fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMethod::Window => "window",
            FilterMethod::NearfieldOptimized => "nearfield-optimized",
        })
    }
}

impl FromStr for FilterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(FilterMethod::Window),
            "nearfield-optimized" => Ok(FilterMethod::NearfieldOptimized),
            other => Err(Error::Parse(format!("unknown filter method `{other}`"))),
        }
    }
}

/// Optional taper applied on top of the truncated ideal response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowTaper {
    #[default]
    Rectangular,
    Hamming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<Complex64>,
    omega_c1: f64,
    omega_c2: f64,
    method: FilterMethod,
}

impl FirFilter {
    pub fn new(
        taps: Vec<Complex64>,
        omega_c1: f64,
        omega_c2: f64,
        method: FilterMethod,
    ) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidArgument("filter needs at least one tap".into()));
        }
        if taps.iter().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
            return Err(Error::InvalidArgument("filter taps must be finite".into()));
        }
        Ok(Self {
            taps,
            omega_c1,
            omega_c2,
            method,
        })
    }

    /// The length-1 all-pass filter `h = [1]`.
    pub fn identity() -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0)],
            omega_c1: 0.0,
            omega_c2: PI,
            method: FilterMethod::Window,
        }
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn omega_c1(&self) -> f64 {
        self.omega_c1
    }

    pub fn omega_c2(&self) -> f64 {
        self.omega_c2
    }

    pub fn method(&self) -> FilterMethod {
        self.method
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_sqr()).sum()
    }

    /// `H(e^{jω}) = Σ_l h(l) e^{−jωl}`.
    pub fn freq_response(&self, omega: f64) -> Complex64 {
        freq_response(self, omega)
    }
}

/// Windowed-sinc band-pass design. Even lengths use the fractional center
/// `(L−1)/2`, which keeps the taps real and symmetric.
pub fn design_window_bandpass(l: usize, omega_c1: f64, omega_c2: f64) -> Result<FirFilter> {
    design_window_bandpass_with(l, omega_c1, omega_c2, WindowTaper::Rectangular)
}

pub fn design_window_bandpass_with(
    l: usize,
    omega_c1: f64,
    omega_c2: f64,
    taper: WindowTaper,
) -> Result<FirFilter> {
    if l == 0 {
        return Err(Error::InvalidArgument("filter length must be >= 1".into()));
    }
    if !(0.0 <= omega_c1 && omega_c1 < omega_c2 && omega_c2 <= PI + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "cutoffs must satisfy 0 <= w_c1 < w_c2 <= pi, got ({omega_c1}, {omega_c2})"
        )));
    }
    let center = (l as f64 - 1.0) / 2.0;
    let taps = (0..l)
        .map(|i| {
            // fold around the center so mirrored taps are bit-identical
            let j = i.min(l - 1 - i);
            let x = j as f64 - center;
            let ideal = if x == 0.0 {
                (omega_c2 - omega_c1) / PI
            } else {
                ((omega_c2 * x).sin() - (omega_c1 * x).sin()) / (PI * x)
            };
            let w = match taper {
                WindowTaper::Rectangular => 1.0,
                WindowTaper::Hamming if l == 1 => 1.0,
                WindowTaper::Hamming => {
                    0.54 - 0.46 * (2.0 * PI * j as f64 / (l as f64 - 1.0)).cos()
                }
            };
            Complex64::new(ideal * w, 0.0)
        })
        .collect();
    FirFilter::new(taps, omega_c1, omega_c2, FilterMethod::Window)
}

pub fn freq_response(filter: &FirFilter, omega: f64) -> Complex64 {
    filter
        .taps
        .iter()
        .enumerate()
        .map(|(l, h)| h * Complex64::from_polar(1.0, -omega * l as f64))
        .sum()
}

/// `H_c` for a fixed filter and array size; applied matrix-free.
#[derive(Debug, Clone, PartialEq)]
pub struct CbsOperator {
    filter: FirFilter,
    n: usize,
}

pub fn build_operator(filter: &FirFilter, n: usize) -> Result<CbsOperator> {
    if filter.len() > n {
        return Err(Error::InvalidArgument(format!(
            "filter length {} exceeds array size {n}",
            filter.len()
        )));
    }
    Ok(CbsOperator {
        filter: filter.clone(),
        n,
    })
}

impl CbsOperator {
    pub fn filter(&self) -> &FirFilter {
        &self.filter
    }

    pub fn n_in(&self) -> usize {
        self.n
    }

    /// `N − L + 1`.
    pub fn n_out(&self) -> usize {
        self.n - self.filter.len() + 1
    }

    pub fn filter_len(&self) -> usize {
        self.filter.len()
    }

    /// Complex multiplies spent by one application.
    pub fn multiplies_per_apply(&self) -> u64 {
        (self.filter_len() * self.n_out()) as u64
    }

    fn check_in(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                what: "CBS input",
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }

    fn apply_slice(&self, y: &[Complex64], out: &mut [Complex64]) {
        let h = self.filter.taps();
        let l = h.len();
        for (p, o) in out.iter_mut().enumerate() {
            let window = &y[p..p + l];
            let mut acc = ZERO;
            for (k, yk) in window.iter().enumerate() {
                acc += h[l - 1 - k] * yk;
            }
            *o = acc;
        }
    }

    /// `H_c y` (valid-region convolution).
    pub fn apply(&self, y: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        self.check_in(y.len())?;
        let mut out = DVector::zeros(self.n_out());
        self.apply_slice(y.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// [`apply`](Self::apply) with the multiplies recorded on `counter`.
    pub fn apply_counted(
        &self,
        y: &DVector<Complex64>,
        counter: &MultiplyCounter,
    ) -> Result<DVector<Complex64>> {
        let out = self.apply(y)?;
        counter.add(self.multiplies_per_apply());
        Ok(out)
    }

    /// `H_cᴴ x`.
    pub fn apply_adjoint(&self, x: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if x.len() != self.n_out() {
            return Err(Error::DimensionMismatch {
                what: "CBS adjoint input",
                expected: self.n_out(),
                got: x.len(),
            });
        }
        let h = self.filter.taps();
        let l = h.len();
        let mut out = DVector::zeros(self.n);
        for (p, xp) in x.iter().enumerate() {
            for k in 0..l {
                out[p + k] += h[l - 1 - k].conj() * xp;
            }
        }
        Ok(out)
    }

    /// `H_c A`, column by column.
    pub fn apply_matrix(&self, a: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        self.check_in(a.nrows())?;
        let mut out = DMatrix::zeros(self.n_out(), a.ncols());
        for c in 0..a.ncols() {
            let col = a.column(c);
            let mut dst = out.column_mut(c);
            let h = self.filter.taps();
            let l = h.len();
            for p in 0..self.n_out() {
                let mut acc = ZERO;
                for k in 0..l {
                    acc += h[l - 1 - k] * col[p + k];
                }
                dst[p] = acc;
            }
        }
        Ok(out)
    }

    /// Dense `(N−L+1) × N` realization.
    pub fn dense(&self) -> DMatrix<Complex64> {
        let h = self.filter.taps();
        let l = h.len();
        DMatrix::from_fn(self.n_out(), self.n, |p, c| {
            if c >= p && c - p < l {
                h[l - 1 - (c - p)]
            } else {
                ZERO
            }
        })
    }
}

/// `g(j) = Σ_l h(l) h*(l−j)` for `0 ≤ j ≤ N−L`; `G_c[p, q] = g(p − q)` for `p ≥ q`.
pub fn autocorr_first_row(filter: &FirFilter, n: usize) -> Result<Vec<Complex64>> {
    let l = filter.len();
    if l > n {
        return Err(Error::InvalidArgument(format!(
            "filter length {l} exceeds array size {n}"
        )));
    }
    let h = filter.taps();
    Ok((0..=n - l)
        .map(|j| {
            if j >= l {
                ZERO
            } else {
                (j..l).map(|i| h[i] * h[i - j].conj()).sum()
            }
        })
        .collect())
}

/// Dense Hermitian Toeplitz `G_c`.
pub fn autocorr_matrix(filter: &FirFilter, n: usize) -> Result<DMatrix<Complex64>> {
    let g = autocorr_first_row(filter, n)?;
    let m = g.len();
    Ok(DMatrix::from_fn(m, m, |p, q| {
        if p >= q {
            g[p - q]
        } else {
            g[q - p].conj()
        }
    }))
}

/// `W_c = G_c^{−1/2}` kept in eigen-factored form.
#[derive(Debug, Clone)]
pub struct WhiteningOperator {
    w: DMatrix<Complex64>,
    w_inv: DMatrix<Complex64>,
    eigenvalues: DVector<f64>,
}

impl WhiteningOperator {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.w
    }

    /// `W_c^{−1} = G_c^{1/2}`.
    pub fn inverse(&self) -> &DMatrix<Complex64> {
        &self.w_inv
    }

    /// Eigenvalues of `G_c` in ascending order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.eigenvalues.max();
        let min = self.eigenvalues.min();
        max / min
    }

    pub fn apply(&self, x: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "whitener input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(&self.w * x)
    }
}

pub fn build_whitener(op: &CbsOperator) -> Result<WhiteningOperator> {
    let g = autocorr_matrix(op.filter(), op.n_in())?;
    let eig = g.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return Err(Error::IllConditioned {
            clamped: eig.eigenvalues.len(),
            threshold: EIGEN_CLAMP,
        });
    }
    let floor = EIGEN_CLAMP * lmax;
    let clamped = eig.eigenvalues.iter().filter(|&&v| v < floor).count();
    if clamped > 0 {
        return Err(Error::IllConditioned {
            clamped,
            threshold: EIGEN_CLAMP,
        });
    }
    let q = &eig.eigenvectors;
    let scaled = |f: &dyn Fn(f64) -> f64| {
        let mut m = q.clone();
        for (c, &v) in eig.eigenvalues.iter().enumerate() {
            m.column_mut(c).scale_mut(f(v));
        }
        &m * q.adjoint()
    };
    let w = scaled(&|v| 1.0 / v.sqrt());
    let w_inv = scaled(&|v| v.sqrt());
    let mut eigenvalues = eig.eigenvalues.clone();
    eigenvalues.as_mut_slice().sort_by(f64::total_cmp);
    Ok(WhiteningOperator {
        w,
        w_inv,
        eigenvalues,
    })
}

/// `M` window filters of equal width tiling `[0, π]`.
#[derive(Debug, Clone)]
pub struct FilterBank {
    filters: Vec<FirFilter>,
    delta: f64,
}

/// Frequencies this close to a segment edge are treated as sitting on it.
const EDGE_TOL: f64 = 1e-12;

pub fn build_filter_bank(m: usize, l: usize) -> Result<FilterBank> {
    build_filter_bank_with(m, l, WindowTaper::Rectangular)
}

pub fn build_filter_bank_with(m: usize, l: usize, taper: WindowTaper) -> Result<FilterBank> {
    if m == 0 {
        return Err(Error::InvalidArgument("filter bank needs M >= 1".into()));
    }
    let filters = (0..m)
        .map(|i| {
            let (lo, hi) = segment_edges(m, i);
            design_window_bandpass_with(l, lo, hi, taper)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterBank {
        filters,
        delta: PI / m as f64,
    })
}

fn segment_edges(m: usize, i: usize) -> (f64, f64) {
    let edge = |k: usize| if k == m { PI } else { PI * k as f64 / m as f64 };
    (edge(i), edge(i + 1))
}

impl FilterBank {
    pub fn filters(&self) -> &[FirFilter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `[ω_c1^m, ω_c2^m]` of segment `m` (0-based).
    pub fn segment(&self, m: usize) -> (f64, f64) {
        segment_edges(self.filters.len(), m)
    }

    /// Segment owning `|ω|`: inclusive low, exclusive high, last segment closed at π.
    pub fn segment_of(&self, omega: f64) -> Option<usize> {
        let w = omega.abs();
        if !(w <= PI + EDGE_TOL) {
            return None;
        }
        let m = self.filters.len();
        (0..m).find(|&i| {
            let (lo, hi) = self.segment(i);
            w >= lo - EDGE_TOL && (w < hi - EDGE_TOL || i == m - 1)
        })
    }
}

/// Writes `L ω_c1 ω_c2 method` followed by one `re im` line per tap.
pub fn write_filter<W: Write>(mut out: W, filter: &FirFilter) -> Result<()> {
    writeln!(
        out,
        "{} {} {} {}",
        filter.len(),
        filter.omega_c1(),
        filter.omega_c2(),
        filter.method()
    )?;
    for t in filter.taps() {
        writeln!(out, "{} {}", t.re, t.im)?;
    }
    Ok(())
}

pub fn read_filter<R: BufRead>(input: R) -> Result<FirFilter> {
    let mut lines = input
        .lines()
        .map(|l| l.map_err(Error::from))
        .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty filter file".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(Error::Parse(format!(
            "filter header needs `L w_c1 w_c2 method`, got `{header}`"
        )));
    }
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Parse(format!("bad {what} `{s}`: {e}")))
    };
    let l: usize = fields[0]
        .parse()
        .map_err(|e| Error::Parse(format!("bad filter length `{}`: {e}", fields[0])))?;
    let c1 = num(fields[1], "w_c1")?;
    let c2 = num(fields[2], "w_c2")?;
    let method: FilterMethod = fields[3].parse()?;
    let mut taps = Vec::with_capacity(l);
    for line in lines {
        let line = line?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Parse(format!("tap line needs `re im`, got `{line}`")));
        }
        taps.push(Complex64::new(num(parts[0], "tap")?, num(parts[1], "tap")?));
    }
    if taps.len() != l {
        return Err(Error::Parse(format!(
            "header declares {l} taps, found {}",
            taps.len()
        )));
    }
    FirFilter::new(taps, c1, c2, method)
}

pub fn save_filter(path: &Path, filter: &FirFilter) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_filter(&mut f, filter)?;
    f.flush()?;
    Ok(())
}

pub fn load_filter(path: &Path) -> Result<FirFilter> {
    read_filter(BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::{steering_farfield, ArrayGeometry};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<Complex64> {
        DVector::from_fn(n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn random_filter(rng: &mut ChaCha8Rng, l: usize) -> FirFilter {
        let taps = random_vec(rng, l).iter().copied().collect();
        FirFilter::new(taps, 0.0, PI, FilterMethod::NearfieldOptimized).unwrap()
    }

    #[test]
    fn window_center_tap_is_sinc_limit() {
        let f = design_window_bandpass(5, 0.4 * PI, 0.6 * PI).unwrap();
        assert_relative_eq!(f.taps()[2].re, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn window_taps_match_formula() {
        let f = design_window_bandpass(7, 0.1 * PI, 0.35 * PI).unwrap();
        for (l, t) in f.taps().iter().enumerate() {
            let x = l as f64 - 3.0;
            let want = if x == 0.0 {
                0.25
            } else {
                ((0.35 * PI * x).sin() - (0.1 * PI * x).sin()) / (PI * x)
            };
            assert_relative_eq!(t.re, want, epsilon = 1e-15);
            assert_eq!(t.im, 0.0);
        }
    }

    #[test]
    fn window_rejects_bad_cutoffs() {
        assert!(design_window_bandpass(5, 0.6 * PI, 0.4 * PI).is_err());
        assert!(design_window_bandpass(5, -0.1, 0.4).is_err());
        assert!(design_window_bandpass(5, 0.1, 3.5).is_err());
    }

    #[test]
    fn even_length_band_center_response() {
        // L = 110, passband [0, π/9]: DTFT at π/18 against a frequency-sampling
        // oracle (zero-padded DFT on a grid that contains π/18).
        let f = design_window_bandpass(110, 0.0, PI / 9.0).unwrap();
        let w0 = PI / 18.0;
        let direct = f.freq_response(w0);
        let grid = 36 * 64;
        let k = grid / 36;
        let mut dft = ZERO;
        for (l, h) in f.taps().iter().enumerate() {
            let idx = (k * l) % grid;
            dft += h * Complex64::from_polar(1.0, -2.0 * PI * idx as f64 / grid as f64);
        }
        assert!((direct - dft).norm() < 1e-12);
        // the response is real up to the linear-phase factor and close to unity
        let zero_phase = direct * Complex64::from_polar(1.0, w0 * 109.0 / 2.0);
        assert!(zero_phase.im.abs() < 1e-12);
        assert!((zero_phase.re - 1.0).abs() < 0.05, "{}", zero_phase.re);
    }

    #[test]
    fn identity_and_dc_response() {
        let id = FirFilter::identity();
        for w in [-2.0, 0.0, 0.7, PI] {
            assert_relative_eq!((id.freq_response(w) - c(1.0)).norm(), 0.0);
        }
        let f = design_window_bandpass(9, 0.0, 0.3 * PI).unwrap();
        let sum: Complex64 = f.taps().iter().sum();
        assert!((f.freq_response(0.0) - sum).norm() < 1e-15);
    }

    #[test]
    fn freq_response_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_filter(&mut rng, 7);
        let w = 0.3 * PI;
        let mut naive = ZERO;
        for l in 0..7 {
            let ang = -w * l as f64;
            naive += f.taps()[l] * Complex64::new(ang.cos(), ang.sin());
        }
        assert!((f.freq_response(w) - naive).norm() < 1e-14);
    }

    #[test]
    fn operator_layout() {
        let f = FirFilter::new(vec![c(1.0), c(2.0)], 0.0, PI, FilterMethod::Window).unwrap();
        let op = build_operator(&f, 4).unwrap();
        let want = DMatrix::from_row_slice(
            3,
            4,
            &[2.0, 1.0, 0.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 2.0, 1.0],
        )
        .map(c);
        assert_eq!(op.dense(), want);
        assert!(build_operator(&f, 1).is_err());
    }

    #[test]
    fn identity_operator() {
        let op = build_operator(&FirFilter::identity(), 6).unwrap();
        assert_eq!(op.dense(), DMatrix::identity(6, 6));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_vec(&mut rng, 6);
        assert_eq!(op.apply(&y).unwrap(), y);
    }

    #[test]
    fn matrix_free_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_filter(&mut rng, 9);
        let op = build_operator(&f, 40).unwrap();
        let d = op.dense();
        for _ in 0..50 {
            let y = random_vec(&mut rng, 40);
            assert!((op.apply(&y).unwrap() - &d * &y).norm() < 1e-12);
            let x = random_vec(&mut rng, 32);
            assert!((op.apply_adjoint(&x).unwrap() - d.adjoint() * &x).norm() < 1e-12);
        }
        let a = DMatrix::from_fn(40, 3, |_, _| Complex64::new(rng.random(), rng.random()));
        assert!((op.apply_matrix(&a).unwrap() - &d * &a).norm() < 1e-12);
        assert!(op.apply(&random_vec(&mut rng, 39)).is_err());
    }

    #[test]
    fn apply_counted_records_multiplies() {
        let f = design_window_bandpass(11, 0.2, 0.9).unwrap();
        let op = build_operator(&f, 65).unwrap();
        let counter = MultiplyCounter::new();
        op.apply_counted(&DVector::zeros(65), &counter).unwrap();
        op.apply_counted(&DVector::zeros(65), &counter).unwrap();
        assert_eq!(counter.get(), 2 * 11 * 55);
    }

    #[test]
    fn impulse_recovers_reversed_taps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_filter(&mut rng, 5);
        let op = build_operator(&f, 12).unwrap();
        let pos = 6;
        let mut e = DVector::zeros(12);
        e[pos] = c(1.0);
        let out = op.apply(&e).unwrap();
        for p in 0..op.n_out() {
            let want = if pos >= p && pos - p < 5 {
                f.taps()[4 - (pos - p)]
            } else {
                ZERO
            };
            assert_eq!(out[p], want);
        }
    }

    #[test]
    fn factorization_on_steering_vectors() {
        for (n, l) in [(65, 14), (33, 33), (129, 48), (21, 1)] {
            let g = ArrayGeometry::half_wavelength(n, 0.1).unwrap();
            let f = design_window_bandpass(l, 0.25 * PI, 0.5 * PI).unwrap();
            let op = build_operator(&f, n).unwrap();
            for i in 0..1024 {
                let w = -PI + 2.0 * PI * i as f64 / 1024.0;
                let a = steering_farfield(&g, w, 10.0, 1.0).unwrap();
                // a_{N−L+1}(ω): the leading N−L+1 entries of a_N(ω)
                let small = a.rows(0, n - l + 1).into_owned();
                let lhs = op.apply(&a).unwrap();
                let k = Complex64::from_polar(1.0, (l as f64 - 1.0) * w) * f.freq_response(w);
                let err = (lhs - small.clone() * k).norm() / small.norm();
                assert!(err <= 1e-10, "N={n} L={l} w={w}: {err}");
            }
        }
    }

    #[test]
    fn autocorrelation_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_filter(&mut rng, 6);
        let g = autocorr_first_row(&f, 30).unwrap();
        assert_eq!(g.len(), 25);
        assert_relative_eq!(g[0].re, f.energy(), epsilon = 1e-14);
        assert_eq!(g[0].im, 0.0);
        assert!(g[6..].iter().all(|v| *v == ZERO));
        let op = build_operator(&f, 30).unwrap();
        let dense = op.dense();
        let direct = &dense * dense.adjoint();
        assert!((autocorr_matrix(&f, 30).unwrap() - direct).norm() < 1e-12);
    }

    #[test]
    fn whitener_identity_filter() {
        let op = build_operator(&FirFilter::identity(), 7).unwrap();
        let w = build_whitener(&op).unwrap();
        assert!((w.matrix() - DMatrix::<Complex64>::identity(7, 7)).norm() < 1e-12);
    }

    #[test]
    fn whitener_full_scale_window_filter() {
        let f = design_window_bandpass(110, 0.0, PI / 9.0).unwrap();
        let op = build_operator(&f, 513).unwrap();
        let w = build_whitener(&op).unwrap();
        let t = w.matrix() * op.dense();
        let prod = &t * t.adjoint();
        let eye = DMatrix::<Complex64>::identity(404, 404);
        assert!((prod - &eye).norm() / eye.norm() < 1e-8);
        assert!((w.matrix() - w.matrix().adjoint()).norm() <= 1e-10 * w.matrix().norm());
        assert!(w.eigenvalues().min() > 0.0);
        assert!((w.matrix() * w.inverse() - &eye).norm() < 1e-6);
    }

    #[test]
    fn whitener_rejects_rank_deficient() {
        let f = FirFilter::new(vec![ZERO, ZERO], 0.0, PI, FilterMethod::Window).unwrap();
        let op = build_operator(&f, 8).unwrap();
        assert!(matches!(build_whitener(&op), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn whitened_noise_is_white() {
        let f = design_window_bandpass(6, 0.2 * PI, 0.5 * PI).unwrap();
        let op = build_operator(&f, 16).unwrap();
        let w = build_whitener(&op).unwrap();
        let t = w.matrix() * op.dense();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sigma2 = 2.0;
        let draws = 100_000;
        let noise = DMatrix::from_fn(16, draws, |_, _| {
            crate::array_model::complex_gaussian(&mut rng, sigma2)
        });
        let out = &t * noise;
        let cov = &out * out.adjoint() / c(draws as f64);
        let target = DMatrix::<Complex64>::identity(11, 11) * c(sigma2);
        assert!((cov - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn bank_tiles_spectrum() {
        let bank = build_filter_bank(9, 110).unwrap();
        assert_eq!(bank.len(), 9);
        assert_relative_eq!(bank.delta(), PI / 9.0);
        for m in 0..9 {
            let (lo, hi) = bank.segment(m);
            assert_eq!(bank.filters()[m].omega_c1(), lo);
            assert_eq!(bank.filters()[m].omega_c2(), hi);
            if m > 0 {
                assert_eq!(bank.segment(m - 1).1, lo);
            }
        }
        assert_eq!(bank.segment(0).0, 0.0);
        assert_eq!(bank.segment(8).1, PI);
        let single = build_filter_bank(1, 11).unwrap();
        assert_eq!(single.segment(0), (0.0, PI));
        assert_eq!(single.segment_of(PI), Some(0));
    }

    #[test]
    fn bank_segment_assignment() {
        let bank = build_filter_bank(5, 9).unwrap();
        assert_eq!(bank.segment_of(0.0), Some(0));
        assert_eq!(bank.segment_of(0.6 * PI), Some(3));
        assert_eq!(bank.segment_of(0.59 * PI), Some(2));
        assert_eq!(bank.segment_of(-0.5 * PI), Some(2));
        assert_eq!(bank.segment_of(PI), Some(4));
        assert_eq!(bank.segment_of(3.5), None);
    }

    #[test]
    fn window_stopband_is_attenuated() {
        let f = design_window_bandpass(30, 0.4 * PI, 0.6 * PI).unwrap();
        let center = f.freq_response(0.5 * PI).norm();
        assert!(center >= 10.0 * f.freq_response(0.3 * PI).norm());
        assert!(center >= 10.0 * f.freq_response(0.7 * PI).norm());
    }

    #[test]
    fn filter_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_filter(&mut rng, 13);
        let mut buf = Vec::new();
        write_filter(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("13 0 3.141592653589793 nearfield-optimized\n"));
        let back = read_filter(buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert!(read_filter("3 0 1 window\n1 0\n".as_bytes()).is_err());
        assert!(read_filter("1 0 1 fancy\n1 0\n".as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn window_taps_symmetric(l in 1usize..200, a in 0.0f64..0.99, b in 0.01f64..1.0) {
                let (lo, hi) = if a < b { (a, b) } else { (b * 0.5, a.max(b)) };
                prop_assume!(lo < hi);
                let f = design_window_bandpass(l, lo * PI, hi * PI).unwrap();
                for i in 0..l {
                    prop_assert!((f.taps()[i] - f.taps()[l - 1 - i]).norm() <= 1e-12);
                }
            }

            #[test]
            fn operator_rows_have_l_nonzeros(l in 1usize..12, extra in 0usize..20, seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random_filter(&mut rng, l);
                let op = build_operator(&f, l + extra).unwrap();
                let d = op.dense();
                for p in 0..op.n_out() {
                    let nz = d.row(p).iter().filter(|v| **v != ZERO).count();
                    prop_assert_eq!(nz, l);
                }
            }

            #[test]
            fn whitener_whitens(l in 1usize..16, extra in 0usize..24, lo in 0.0f64..0.5, width in 0.1f64..0.5) {
                let f = design_window_bandpass(l, lo * PI, (lo + width) * PI).unwrap();
                let op = build_operator(&f, l + extra).unwrap();
                let w = build_whitener(&op).unwrap();
                let g = autocorr_matrix(&f, l + extra).unwrap();
                let eye = DMatrix::<Complex64>::identity(op.n_out(), op.n_out());
                let res = (w.matrix() * g * w.matrix().adjoint() - &eye).norm() / eye.norm();
                prop_assert!(res <= 1e-8);
            }
        }
    }
}
