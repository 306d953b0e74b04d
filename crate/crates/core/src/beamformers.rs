//! Linear receive combiners: MRC, ZF, MMSE and their CBS counterparts
//! (filter-bank segments, Woodbury-form MMSE, array decimation, noise
//! whitening and near-field filters).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::ChannelMatrix;
use crate::error::{Error, Result};
use crate::metrics::MultiplyCounter;
use crate::spatial_filter::{build_operator, build_whitener, CbsOperator, FilterBank, WhiteningOperator};

/// Relative eigenvalue floor under which `AᴴA` counts as rank deficient.
const ZF_RANK_TOL: f64 = 1e-12;

/// Columns whose post-processing norm falls below this fraction of the
/// input norm are treated as nulled by the filter.
const NULL_COLUMN_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Mrc,
    Zf,
    Mmse,
    CbsMrc,
    CbsMrcWhitened,
    CbsMmse,
    CbsMmseDecimated,
    CbsMmseWhitened,
    NfCbsMrc,
    NfCbsMmse,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Mrc,
        Family::Zf,
        Family::Mmse,
        Family::CbsMrc,
        Family::CbsMrcWhitened,
        Family::CbsMmse,
        Family::CbsMmseDecimated,
        Family::CbsMmseWhitened,
        Family::NfCbsMrc,
        Family::NfCbsMmse,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Mrc => "mrc",
            Family::Zf => "zf",
            Family::Mmse => "mmse",
            Family::CbsMrc => "cbs-mrc",
            Family::CbsMrcWhitened => "cbs-mrc-whitened",
            Family::CbsMmse => "cbs-mmse",
            Family::CbsMmseDecimated => "cbs-mmse-decimated",
            Family::CbsMmseWhitened => "cbs-mmse-whitened",
            Family::NfCbsMrc => "nf-cbs-mrc",
            Family::NfCbsMmse => "nf-cbs-mmse",
        }
    }

    pub fn uses_cbs(&self) -> bool {
        !matches!(self, Family::Mrc | Family::Zf | Family::Mmse)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown receiver family `{s}`")))
    }
}

/// Per-user transmit SNR `P̄_i = P_i/σ²`, or the ZF limit `P̄ → ∞`.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerProfile {
    Finite(Vec<f64>),
    Infinite,
}

impl PowerProfile {
    pub fn finite(snr: Vec<f64>) -> Result<Self> {
        if snr.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(
                "transmit SNRs must be positive and finite".into(),
            ));
        }
        Ok(PowerProfile::Finite(snr))
    }

    pub fn uniform(k: usize, snr: f64) -> Result<Self> {
        Self::finite(vec![snr; k])
    }

    fn check(&self, k: usize) -> Result<()> {
        match self {
            PowerProfile::Finite(v) if v.len() != k => Err(Error::DimensionMismatch {
                what: "power profile",
                expected: k,
                got: v.len(),
            }),
            _ => Ok(()),
        }
    }

    /// `P̄_i^{-1}`, zero in the infinite-power limit.
    fn inverse(&self, i: usize) -> f64 {
        match self {
            PowerProfile::Finite(v) => 1.0 / v[i],
            PowerProfile::Infinite => 0.0,
        }
    }
}

/// Index set `Λ_p` of users assigned to one passband.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassbandSelection {
    indices: Vec<usize>,
    n_users: usize,
    segment: Option<usize>,
}

impl PassbandSelection {
    pub fn new(mut indices: Vec<usize>, n_users: usize, segment: Option<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_users) {
            return Err(Error::InvalidArgument(format!(
                "selected user {bad} out of range for {n_users} users"
            )));
        }
        Ok(Self {
            indices,
            n_users,
            segment,
        })
    }

    pub fn all(n_users: usize) -> Self {
        Self {
            indices: (0..n_users).collect(),
            n_users,
            segment: None,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn segment(&self) -> Option<usize> {
        self.segment
    }

    /// Selection matrix `Φ_p ∈ {0,1}^{K×K_p}`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(self.n_users, self.indices.len());
        for (c, &i) in self.indices.iter().enumerate() {
            phi[(i, c)] = 1.0;
        }
        phi
    }
}

/// Users with `ω_lo ≤ ω < ω_hi`.
pub fn select_passband(omegas: &[f64], lo: f64, hi: f64) -> PassbandSelection {
    let indices = omegas
        .iter()
        .enumerate()
        .filter(|(_, &w)| w >= lo && w < hi)
        .map(|(i, _)| i)
        .collect();
    PassbandSelection {
        indices,
        n_users: omegas.len(),
        segment: None,
    }
}

/// Users whose `|ω|` falls in segment `m` of `bank`.
pub fn select_segment(bank: &FilterBank, omegas: &[f64], m: usize) -> PassbandSelection {
    let indices = omegas
        .iter()
        .enumerate()
        .filter(|(_, &w)| bank.segment_of(w) == Some(m))
        .map(|(i, _)| i)
        .collect();
    PassbandSelection {
        indices,
        n_users: omegas.len(),
        segment: Some(m),
    }
}

/// Row subsampling `D_μ` keeping rows `μ, μ+N_d, …` of a length-`len` vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecimationPlan {
    input_len: usize,
    interval: usize,
    offset: usize,
}

impl DecimationPlan {
    pub fn new(input_len: usize, interval: usize, offset: usize) -> Result<Self> {
        if interval == 0 {
            return Err(Error::InvalidArgument("decimation interval must be >= 1".into()));
        }
        if offset >= interval || offset >= input_len {
            return Err(Error::InvalidArgument(format!(
                "decimation offset {offset} must be below interval {interval} and length {input_len}"
            )));
        }
        Ok(Self {
            input_len,
            interval,
            offset,
        })
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    /// Number of kept rows `J`.
    pub fn output_len(&self) -> usize {
        (self.input_len - self.offset).div_ceil(self.interval)
    }

    fn rows(&self) -> impl Iterator<Item = usize> {
        (self.offset..self.input_len).step_by(self.interval)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.output_len(), self.input_len);
        for (j, r) in self.rows().enumerate() {
            d[(j, r)] = 1.0;
        }
        d
    }

    pub fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        DVector::from_iterator(self.output_len(), self.rows().map(|r| x[r]))
    }

    pub fn apply_matrix(&self, a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let rows: Vec<usize> = self.rows().collect();
        a.select_rows(rows.iter())
    }

    pub fn adjoint(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.input_len);
        for (j, r) in self.rows().enumerate() {
            out[r] = x[j];
        }
        out
    }
}

/// `y ↦ D·W·H_c·y`, with whitening and decimation optional.
#[derive(Debug, Clone)]
pub struct CbsChain {
    op: CbsOperator,
    whitener: Option<WhiteningOperator>,
    decimation: Option<DecimationPlan>,
}

impl CbsChain {
    pub fn new(
        op: CbsOperator,
        whitener: Option<WhiteningOperator>,
        decimation: Option<DecimationPlan>,
    ) -> Result<Self> {
        if let Some(w) = &whitener {
            if w.dim() != op.n_out() {
                return Err(Error::DimensionMismatch {
                    what: "whitener",
                    expected: op.n_out(),
                    got: w.dim(),
                });
            }
        }
        if let Some(d) = &decimation {
            if d.input_len() != op.n_out() {
                return Err(Error::DimensionMismatch {
                    what: "decimation input",
                    expected: op.n_out(),
                    got: d.input_len(),
                });
            }
        }
        Ok(Self {
            op,
            whitener,
            decimation,
        })
    }

    pub fn operator(&self) -> &CbsOperator {
        &self.op
    }

    pub fn whitener(&self) -> Option<&WhiteningOperator> {
        self.whitener.as_ref()
    }

    pub fn decimation(&self) -> Option<&DecimationPlan> {
        self.decimation.as_ref()
    }

    pub fn out_dim(&self) -> usize {
        self.decimation
            .map(|d| d.output_len())
            .unwrap_or_else(|| self.op.n_out())
    }

    pub fn forward(&self, y: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        let mut x = self.op.apply(y)?;
        if let Some(w) = &self.whitener {
            x = w.apply(&x)?;
        }
        if let Some(d) = &self.decimation {
            x = d.apply(&x);
        }
        Ok(x)
    }

    fn forward_counted(
        &self,
        y: &DVector<Complex64>,
        counter: &MultiplyCounter,
    ) -> Result<DVector<Complex64>> {
        let mut x = self.op.apply_counted(y, counter)?;
        if let Some(w) = &self.whitener {
            x = w.apply(&x)?;
            counter.add((w.dim() * w.dim()) as u64);
        }
        if let Some(d) = &self.decimation {
            x = d.apply(&x);
        }
        Ok(x)
    }

    pub fn forward_matrix(&self, a: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        let mut x = self.op.apply_matrix(a)?;
        if let Some(w) = &self.whitener {
            x = w.matrix() * x;
        }
        if let Some(d) = &self.decimation {
            x = d.apply_matrix(&x);
        }
        Ok(x)
    }

    /// `H_cᴴ Wᴴ Dᴴ v`: the equivalent full-array combiner.
    pub fn adjoint(&self, v: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        let mut x = match &self.decimation {
            Some(d) => d.adjoint(v),
            None => v.clone(),
        };
        if let Some(w) = &self.whitener {
            x = w.matrix().adjoint() * x;
        }
        self.op.apply_adjoint(&x)
    }
}

/// Observation space a combining vector lives in.
#[derive(Debug, Clone)]
pub enum FrontEnd {
    Direct { n: usize },
    Cbs(Box<CbsChain>),
}

impl FrontEnd {
    pub fn out_dim(&self) -> usize {
        match self {
            FrontEnd::Direct { n } => *n,
            FrontEnd::Cbs(c) => c.out_dim(),
        }
    }

    pub fn forward(&self, y: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        match self {
            FrontEnd::Direct { .. } => Ok(y.clone()),
            FrontEnd::Cbs(c) => c.forward(y),
        }
    }

    pub fn forward_counted(
        &self,
        y: &DVector<Complex64>,
        counter: &MultiplyCounter,
    ) -> Result<DVector<Complex64>> {
        match self {
            FrontEnd::Direct { .. } => Ok(y.clone()),
            FrontEnd::Cbs(c) => c.forward_counted(y, counter),
        }
    }

    pub fn forward_matrix(&self, a: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        match self {
            FrontEnd::Direct { .. } => Ok(a.clone()),
            FrontEnd::Cbs(c) => c.forward_matrix(a),
        }
    }

    pub fn adjoint(&self, v: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        match self {
            FrontEnd::Direct { .. } => Ok(v.clone()),
            FrontEnd::Cbs(c) => c.adjoint(v),
        }
    }

    pub fn cbs(&self) -> Option<&CbsChain> {
        match self {
            FrontEnd::Direct { .. } => None,
            FrontEnd::Cbs(c) => Some(c),
        }
    }
}

/// Unit-norm combining vector for one user, in the space of `fronts[front]`.
#[derive(Debug, Clone)]
pub struct UserCombiner {
    pub user: usize,
    pub front: usize,
    pub vector: DVector<Complex64>,
}

#[derive(Debug, Clone)]
pub struct Beamformer {
    family: Family,
    fronts: Vec<FrontEnd>,
    combiners: Vec<UserCombiner>,
    warnings: Vec<String>,
}

impl Beamformer {
    fn single(family: Family, front: FrontEnd, combiners: Vec<(usize, DVector<Complex64>)>) -> Self {
        Self {
            family,
            fronts: vec![front],
            combiners: combiners
                .into_iter()
                .map(|(user, vector)| UserCombiner {
                    user,
                    front: 0,
                    vector,
                })
                .collect(),
            warnings: Vec::new(),
        }
    }

    /// Concatenates per-segment beamformers of the same family.
    pub fn merge(family: Family, parts: Vec<Beamformer>) -> Self {
        let mut fronts = Vec::new();
        let mut combiners = Vec::new();
        let mut warnings = Vec::new();
        for part in parts {
            let base = fronts.len();
            fronts.extend(part.fronts);
            combiners.extend(part.combiners.into_iter().map(|mut c| {
                c.front += base;
                c
            }));
            warnings.extend(part.warnings);
        }
        combiners.sort_by_key(|c| c.user);
        Self {
            family,
            fronts,
            combiners,
            warnings,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn fronts(&self) -> &[FrontEnd] {
        &self.fronts
    }

    pub fn combiners(&self) -> &[UserCombiner] {
        &self.combiners
    }

    pub fn combiner_for(&self, user: usize) -> Option<&UserCombiner> {
        self.combiners.iter().find(|c| c.user == user)
    }

    pub fn served_users(&self) -> Vec<usize> {
        self.combiners.iter().map(|c| c.user).collect()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Full-array combiner `e` such that the output is `eᴴy`.
    pub fn equivalent_combiner(&self, c: &UserCombiner) -> Result<DVector<Complex64>> {
        self.fronts[c.front].adjoint(&c.vector)
    }

    /// Per-user outputs `v_kᴴ (front·y)` for one snapshot; multiplies in the
    /// front ends and the inner products go to `counter`.
    pub fn combine(
        &self,
        y: &DVector<Complex64>,
        counter: &MultiplyCounter,
    ) -> Result<Vec<(usize, Complex64)>> {
        let outs = self
            .fronts
            .iter()
            .map(|f| f.forward_counted(y, counter))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .combiners
            .iter()
            .map(|c| {
                counter.add(c.vector.len() as u64);
                (c.user, c.vector.dotc(&outs[c.front]))
            })
            .collect())
    }
}

fn normalize(v: DVector<Complex64>, user: usize, reference: f64) -> Result<DVector<Complex64>> {
    let n = v.norm();
    if !(n > NULL_COLUMN_TOL * reference) || !n.is_finite() {
        return Err(Error::ZeroColumn { user });
    }
    Ok(v / Complex64::new(n, 0.0))
}

fn check_columns(a: &DMatrix<Complex64>) -> Result<()> {
    for (k, col) in a.column_iter().enumerate() {
        if col.norm() == 0.0 {
            return Err(Error::ZeroColumn { user: k });
        }
    }
    Ok(())
}

pub fn mrc(channel: &ChannelMatrix) -> Result<Beamformer> {
    let a = channel.matrix();
    check_columns(a)?;
    let combiners = (0..a.ncols())
        .map(|k| {
            let col = a.column(k).into_owned();
            let r = col.norm();
            Ok((k, normalize(col, k, r)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Beamformer::single(
        Family::Mrc,
        FrontEnd::Direct { n: a.nrows() },
        combiners,
    ))
}

/// `B = (UᴴU + P̄^{-1})^{-1} Uᴴ` for the columns `cols` of `u`; returns the
/// normalized rows as column vectors.
fn regularized_rows(
    u: &DMatrix<Complex64>,
    users: &[usize],
    powers: &PowerProfile,
) -> Result<Vec<DVector<Complex64>>> {
    let k = u.ncols();
    let mut gram = u.adjoint() * u;
    for (c, &user) in users.iter().enumerate() {
        gram[(c, c)] += Complex64::new(powers.inverse(user), 0.0);
    }
    if matches!(powers, PowerProfile::Infinite) {
        let eig = gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || min <= ZF_RANK_TOL * max {
            return Err(Error::Singular(format!(
                "channel Gram matrix is rank deficient (eigenvalue ratio {:e})",
                if max > 0.0 { min / max } else { 0.0 }
            )));
        }
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Singular("regularized Gram matrix is not positive definite".into())
    })?;
    let b = chol.solve(&u.adjoint());
    (0..k)
        .map(|c| {
            let row = b.row(c).adjoint();
            let r = u.column(c).norm();
            normalize(row, users[c], r)
        })
        .collect()
}

pub fn mmse(channel: &ChannelMatrix, powers: &PowerProfile) -> Result<Beamformer> {
    let a = channel.matrix();
    powers.check(a.ncols())?;
    check_columns(a)?;
    let users: Vec<usize> = (0..a.ncols()).collect();
    let rows = regularized_rows(a, &users, powers)?;
    let family = match powers {
        PowerProfile::Finite(_) => Family::Mmse,
        PowerProfile::Infinite => Family::Zf,
    };
    Ok(Beamformer::single(
        family,
        FrontEnd::Direct { n: a.nrows() },
        users.into_iter().zip(rows).collect(),
    ))
}

pub fn zf(channel: &ChannelMatrix) -> Result<Beamformer> {
    let a = channel.matrix();
    if a.ncols() > a.nrows() {
        return Err(Error::Singular(format!(
            "ZF needs K <= N, got K = {} and N = {}",
            a.ncols(),
            a.nrows()
        )));
    }
    mmse(channel, &PowerProfile::Infinite)
}

/// `C^{-1} x` with `C = Σ_i P̄_i u_i u_iᴴ + I` evaluated through the
/// matrix-inversion lemma on the `others` columns.
pub fn woodbury_apply(
    others: &DMatrix<Complex64>,
    inv_powers: &[f64],
    x: &DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    if others.ncols() == 0 {
        return Ok(x.clone());
    }
    if inv_powers.len() != others.ncols() {
        return Err(Error::DimensionMismatch {
            what: "Woodbury powers",
            expected: others.ncols(),
            got: inv_powers.len(),
        });
    }
    let mut inner = others.adjoint() * others;
    for (c, p) in inv_powers.iter().enumerate() {
        inner[(c, c)] += Complex64::new(*p, 0.0);
    }
    let rhs = others.adjoint() * x;
    let sol = match inner.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => inner
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("Woodbury inner system is singular".into()))?,
    };
    Ok(x - others * sol)
}

fn cbs_mrc_chain(
    family: Family,
    chain: CbsChain,
    channel: &ChannelMatrix,
    users: &[usize],
) -> Result<Beamformer> {
    let a = channel.matrix();
    let sub = channel.select_columns(users);
    // whitened chains combine on the whitened effective channel
    let u = chain.forward_matrix(&sub)?;
    let combiners = users
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let reference = a.column(k).norm();
            Ok((k, normalize(u.column(c).into_owned(), k, reference)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Beamformer::single(
        family,
        FrontEnd::Cbs(Box::new(chain)),
        combiners,
    ))
}

/// CBS-MRC with one filter for every user: `v_k ∝ H_c a_k`.
pub fn cbs_mrc(op: &CbsOperator, channel: &ChannelMatrix) -> Result<Beamformer> {
    check_columns(channel.matrix())?;
    let chain = CbsChain::new(op.clone(), None, None)?;
    let users: Vec<usize> = (0..channel.n_users()).collect();
    cbs_mrc_chain(Family::CbsMrc, chain, channel, &users)
}

/// Whitened CBS-MRC: matched filtering of the whitened effective column
/// `W_c H_c a_k`, applied to `y_w = W_c H_c y`.
pub fn cbs_mrc_whitened(
    op: &CbsOperator,
    whitener: &WhiteningOperator,
    channel: &ChannelMatrix,
) -> Result<Beamformer> {
    check_columns(channel.matrix())?;
    let chain = CbsChain::new(op.clone(), Some(whitener.clone()), None)?;
    let users: Vec<usize> = (0..channel.n_users()).collect();
    cbs_mrc_chain(Family::CbsMrcWhitened, chain, channel, &users)
}

/// Options for the CBS-MMSE family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CbsMmseOptions {
    /// `(N_d, μ)`; `None` keeps every output row.
    pub decimation: Option<(usize, usize)>,
    pub whiten: bool,
}

impl CbsMmseOptions {
    fn family(&self) -> Family {
        if self.whiten {
            Family::CbsMmseWhitened
        } else if self.decimation.is_some() {
            Family::CbsMmseDecimated
        } else {
            Family::CbsMmse
        }
    }
}

fn cbs_mmse_chain(
    family: Family,
    chain: CbsChain,
    channel: &ChannelMatrix,
    powers: &PowerProfile,
    selection: &PassbandSelection,
    woodbury: bool,
) -> Result<Beamformer> {
    if selection.is_empty() {
        return Err(Error::EmptyPassband);
    }
    let a = channel.matrix();
    let users = selection.indices();
    let u = chain.forward_matrix(&channel.select_columns(users))?;
    let mut warnings = Vec::new();
    if u.nrows() < users.len() {
        let msg = format!(
            "segment {:?}: {} observations for {} users, interference suppression is under-determined",
            selection.segment(),
            u.nrows(),
            users.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let vectors: Vec<DVector<Complex64>> = if woodbury {
        users
            .iter()
            .enumerate()
            .map(|(c, &k)| {
                let other_cols: Vec<usize> = (0..users.len()).filter(|&j| j != c).collect();
                let others = u.select_columns(other_cols.iter());
                let inv: Vec<f64> = other_cols.iter().map(|&j| powers.inverse(users[j])).collect();
                let v = woodbury_apply(&others, &inv, &u.column(c).into_owned())?;
                normalize(v, k, a.column(k).norm())
            })
            .collect::<Result<_>>()?
    } else {
        regularized_rows(&u, users, powers)?
    };
    let mut bf = Beamformer::single(
        family,
        FrontEnd::Cbs(Box::new(chain)),
        users.iter().copied().zip(vectors).collect(),
    );
    bf.warnings = warnings;
    Ok(bf)
}

/// CBS-MMSE over the users of one passband. The unwhitened forms use the
/// per-user Woodbury expression; the whitened form normalizes the rows of
/// `(U_wᴴU_w + P̄^{-1})^{-1}U_wᴴ`.
pub fn cbs_mmse(
    op: &CbsOperator,
    channel: &ChannelMatrix,
    powers: &PowerProfile,
    selection: &PassbandSelection,
    options: CbsMmseOptions,
) -> Result<Beamformer> {
    powers.check(channel.n_users())?;
    let whitener = if options.whiten {
        Some(build_whitener(op)?)
    } else {
        None
    };
    let decimation = options
        .decimation
        .map(|(nd, mu)| DecimationPlan::new(op.n_out(), nd, mu))
        .transpose()?;
    let chain = CbsChain::new(op.clone(), whitener, decimation)?;
    cbs_mmse_chain(
        options.family(),
        chain,
        channel,
        powers,
        selection,
        !options.whiten,
    )
}

/// Segments of `bank` that own at least one user, with their selections.
pub fn bank_segments(bank: &FilterBank, channel: &ChannelMatrix) -> Vec<PassbandSelection> {
    let omegas = channel.spatial_freqs();
    (0..bank.len())
        .map(|m| select_segment(bank, &omegas, m))
        .filter(|s| !s.is_empty())
        .collect()
}

/// CBS-MRC where each user is filtered by its own segment of the bank.
pub fn cbs_mrc_bank(bank: &FilterBank, channel: &ChannelMatrix, whiten: bool) -> Result<Beamformer> {
    check_columns(channel.matrix())?;
    let family = if whiten {
        Family::CbsMrcWhitened
    } else {
        Family::CbsMrc
    };
    let parts = bank_segments(bank, channel)
        .into_iter()
        .map(|sel| {
            let m = sel.segment().unwrap_or(0);
            let op = build_operator(&bank.filters()[m], channel.n_elements())?;
            let w = if whiten { Some(build_whitener(&op)?) } else { None };
            let chain = CbsChain::new(op, w, None)?;
            cbs_mrc_chain(family, chain, channel, sel.indices())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Beamformer::merge(family, parts))
}

/// CBS-MMSE run independently on every occupied segment of the bank.
pub fn cbs_mmse_bank(
    bank: &FilterBank,
    channel: &ChannelMatrix,
    powers: &PowerProfile,
    options: CbsMmseOptions,
) -> Result<Beamformer> {
    let parts = bank_segments(bank, channel)
        .into_iter()
        .map(|sel| {
            let m = sel.segment().unwrap_or(0);
            let op = build_operator(&bank.filters()[m], channel.n_elements())?;
            cbs_mmse(&op, channel, powers, &sel, options)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Beamformer::merge(options.family(), parts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NearfieldFamily {
    Mrc,
    Mmse,
}

/// Near-field CBS combining for the users in `selection`, using the
/// (near-field) columns of `channel` as effective steering vectors.
pub fn cbs_nearfield(
    op: &CbsOperator,
    channel: &ChannelMatrix,
    powers: &PowerProfile,
    selection: &PassbandSelection,
    family: NearfieldFamily,
) -> Result<Beamformer> {
    powers.check(channel.n_users())?;
    if selection.is_empty() {
        return Err(Error::EmptyPassband);
    }
    let chain = CbsChain::new(op.clone(), None, None)?;
    match family {
        NearfieldFamily::Mrc => {
            cbs_mrc_chain(Family::NfCbsMrc, chain, channel, selection.indices())
        }
        NearfieldFamily::Mmse => {
            cbs_mmse_chain(Family::NfCbsMmse, chain, channel, powers, selection, true)
        }
    }
}
