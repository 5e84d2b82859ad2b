//! Tools for the action step: channel generation, zero-forcing beamforming
//! rate caps, and handover execution.
//!
//! Channels follow `h = sqrt(PL(d)) * g` with `PL(d) = (max(d, d0) / d0)^-alpha`
//! and `g` i.i.d. standard complex normal. The precoder is the textbook
//! pseudo-inverse `W = H^H (H H^H)^-1` with every column rescaled to power `p`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::domain::{DomainError, Mbps, NetworkState, Position, SliceKind, UserId};
use crate::perception::RawRequest;
use crate::planning::HandoverPlan;

/// Cap on a user's rate imposed by the channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateCap {
    Unbounded,
    Limit(Mbps),
}

impl RateCap {
    pub fn allows(self, rate: Mbps) -> bool {
        match self {
            RateCap::Unbounded => true,
            RateCap::Limit(c) => rate <= c,
        }
    }
}

impl fmt::Display for RateCap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateCap::Unbounded => f.write_str("unbounded"),
            RateCap::Limit(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelModel {
    pub antennas: usize,
    pub pathloss_exponent: f64,
    pub reference_distance: f64,
    pub noise_power: f64,
    pub tx_power: f64,
    /// Mb/s per bit/s/Hz of spectral efficiency.
    pub bandwidth_factor: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            antennas: 4,
            pathloss_exponent: 3.5,
            reference_distance: 1.0,
            noise_power: 1e-9,
            tx_power: 1.0,
            bandwidth_factor: 40.0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), ToolError> {
        let ok = self.antennas >= 1
            && self.pathloss_exponent > 2.0
            && self.noise_power > 0.0
            && self.reference_distance > 0.0
            && self.tx_power > 0.0
            && self.bandwidth_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ToolError::InvalidModel)
        }
    }

    pub fn pathloss(&self, distance: f64) -> f64 {
        let d = distance.max(self.reference_distance);
        libm::pow(d / self.reference_distance, -self.pathloss_exponent)
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ToolError {
    #[error("{users} users exceed {antennas} antennas")]
    TooManyUsers { users: usize, antennas: usize },
    #[error("channel matrix is rank deficient or ill-conditioned")]
    RankDeficient,
    #[error("channel matrix is empty or ragged")]
    BadShape,
    #[error("invalid channel model parameters")]
    InvalidModel,
    #[error("stale handover plan: {0}")]
    StalePlan(String),
    #[error("{0}")]
    CapacityExceeded(DomainError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelVector(pub Vec<Complex64>);

impl ChannelVector {
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(Complex64::norm_sqr).sum()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Channel of a user at `pos` towards the base station at `bs`; a pure function of `(pos, seed)`.
pub fn gen_channel(pos: Position, bs: Position, model: &ChannelModel, seed: u64) -> ChannelVector {
    let stream = splitmix(seed ^ splitmix(pos.x.to_bits() ^ splitmix(pos.y.to_bits())));
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let amp = libm::sqrt(model.pathloss(pos.distance(&bs)));
    let half = core::f64::consts::FRAC_1_SQRT_2;
    ChannelVector(
        (0..model.antennas)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re * half, im * half) * amp
            })
            .collect(),
    )
}

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Stacks channel vectors as rows (one row per user).
    pub fn from_rows(rows: &[ChannelVector]) -> Result<Self, ToolError> {
        let cols = rows.first().map(|r| r.0.len()).ok_or(ToolError::BadShape)?;
        if cols == 0 || rows.iter().any(|r| r.0.len() != cols) {
            return Err(ToolError::BadShape);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.0.iter().copied()).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn mul(&self, rhs: &CMatrix) -> Self {
        assert_eq!(self.cols, rhs.rows, "dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.data.iter().map(Complex64::norm_sqr).sum())
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        libm::sqrt((0..self.rows).map(|i| self[(i, j)].norm_sqr()).sum())
    }

    /// Gauss-Jordan inverse with partial pivoting.
    fn inverse(&self) -> Option<Self> {
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.frobenius();
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a[(x, col)].norm().total_cmp(&a[(y, col)].norm()))?;
            if a[(pivot, col)].norm() <= f64::EPSILON * scale * n as f64 {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    let (p, c) = (pivot * n + j, col * n + j);
                    a.data.swap(p, c);
                    inv.data.swap(p, c);
                }
            }
            let d = a[(col, col)].inv();
            for j in 0..n {
                a[(col, j)] *= d;
                inv[(col, j)] *= d;
            }
            for i in 0..n {
                if i != col {
                    let f = a[(i, col)];
                    if f != Complex64::new(0.0, 0.0) {
                        for j in 0..n {
                            let (av, iv) = (a[(col, j)], inv[(col, j)]);
                            a[(i, j)] -= f * av;
                            inv[(i, j)] -= f * iv;
                        }
                    }
                }
            }
        }
        Some(inv)
    }
}

impl core::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Gram matrices with a (Frobenius) condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e8;

/// Zero-forcing precoder for the `S x M` channel `h`; columns carry power `tx_power`.
pub fn zf_precoder(h: &CMatrix, tx_power: f64) -> Result<CMatrix, ToolError> {
    if h.rows() == 0 {
        return Err(ToolError::BadShape);
    }
    if h.rows() > h.cols() {
        return Err(ToolError::TooManyUsers {
            users: h.rows(),
            antennas: h.cols(),
        });
    }
    let hh = h.conj_transpose();
    let gram = h.mul(&hh);
    let gram_inv = gram.inverse().ok_or(ToolError::RankDeficient)?;
    let cond = gram.frobenius() * gram_inv.frobenius();
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(ToolError::RankDeficient);
    }
    let mut w = hh.mul(&gram_inv);
    let amp = libm::sqrt(tx_power);
    for j in 0..w.cols() {
        let norm = w.column_norm(j);
        if norm == 0.0 || !norm.is_finite() {
            return Err(ToolError::RankDeficient);
        }
        for i in 0..w.rows() {
            w[(i, j)] *= amp / norm;
        }
    }
    Ok(w)
}

/// `floor(B * log2(1 + sinr))` Mb/s.
pub fn shannon_cap(sinr: f64, bandwidth_factor: f64) -> Mbps {
    let rate = libm::floor(bandwidth_factor * libm::log2(1.0 + sinr.max(0.0)));
    Mbps(if rate >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        rate as u32
    })
}

/// Per-user `B * log2(1 + sinr)` before flooring. Interference is the
/// off-diagonal of `H W`, zero under ZF, and is left out.
pub fn achievable_rates(h: &CMatrix, w: &CMatrix, model: &ChannelModel) -> Vec<f64> {
    let hw = h.mul(w);
    (0..h.rows())
        .map(|u| {
            let sinr = hw[(u, u)].norm_sqr() / model.noise_power;
            model.bandwidth_factor * libm::log2(1.0 + sinr)
        })
        .collect()
}

/// Per-user caps for channel `h` and precoder `w`, floored to whole Mb/s.
pub fn rate_cap(h: &CMatrix, w: &CMatrix, model: &ChannelModel) -> Vec<RateCap> {
    let hw = h.mul(w);
    (0..h.rows())
        .map(|u| {
            let sinr = hw[(u, u)].norm_sqr() / model.noise_power;
            RateCap::Limit(shannon_cap(sinr, model.bandwidth_factor))
        })
        .collect()
}

/// Supplies the channel cap for an arriving user on a slice.
pub trait CapProvider {
    fn cap(&mut self, req: &RawRequest, slice: SliceKind, state: &NetworkState) -> RateCap;
}

/// Ideal channel: caps never bind.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdealChannel;

impl CapProvider for IdealChannel {
    fn cap(&mut self, _req: &RawRequest, _slice: SliceKind, _state: &NetworkState) -> RateCap {
        RateCap::Unbounded
    }
}

/// ZF caps: the arriving user is co-beamformed with up to `M - 1` users of
/// the same slice nearest to it.
#[derive(Clone, Debug)]
pub struct ZfChannel {
    pub model: ChannelModel,
    pub seed: u64,
    pub bs: Position,
    positions: BTreeMap<UserId, Position>,
}

impl ZfChannel {
    pub fn new(model: ChannelModel, seed: u64, bs: Position) -> Self {
        Self {
            model,
            seed,
            bs,
            positions: BTreeMap::new(),
        }
    }

    pub fn set_position(&mut self, user: UserId, pos: Position) {
        self.positions.insert(user, pos);
    }

    fn group_cap(&self, group: &[Position]) -> Result<RateCap, ToolError> {
        let rows: Vec<ChannelVector> = group
            .iter()
            .map(|p| gen_channel(*p, self.bs, &self.model, self.seed))
            .collect();
        let h = CMatrix::from_rows(&rows)?;
        let w = zf_precoder(&h, self.model.tx_power)?;
        Ok(rate_cap(&h, &w, &self.model)[0])
    }
}

impl CapProvider for ZfChannel {
    fn cap(&mut self, req: &RawRequest, slice: SliceKind, state: &NetworkState) -> RateCap {
        self.positions.insert(req.user, req.position);
        let mut peers: Vec<(f64, UserId, Position)> = state
            .ledger(slice)
            .map(|l| {
                l.allocations()
                    .keys()
                    .filter(|&&u| u != req.user)
                    .filter_map(|u| self.positions.get(u).map(|p| (p.distance(&req.position), *u, *p)))
                    .collect()
            })
            .unwrap_or_default();
        peers.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut group = alloc::vec![req.position];
        group.extend(peers.iter().take(self.model.antennas.saturating_sub(1)).map(|p| p.2));
        // an ill-conditioned group falls back to serving the user alone
        self.group_cap(&group)
            .or_else(|_| self.group_cap(&group[..1]))
            .unwrap_or(RateCap::Limit(Mbps(0)))
    }
}

/// Executes a handover plan move by move, each as release-then-admit at the
/// same rate. The plan is re-validated against the live state; on any error
/// the state is left untouched.
pub fn apply_handover(state: &mut NetworkState, plan: &HandoverPlan) -> Result<(), ToolError> {
    let mut staged = state.clone();
    for m in &plan.moves {
        let current = staged
            .ledger(m.from)
            .ok()
            .and_then(|l| l.get(m.user))
            .ok_or_else(|| ToolError::StalePlan(alloc::format!("user {} not in {}", m.user, m.from)))?;
        if current.rate != m.rate {
            return Err(ToolError::StalePlan(alloc::format!(
                "user {} now holds {} Mb/s, plan says {}",
                m.user,
                current.rate,
                m.rate
            )));
        }
        let dest = staged.ledger(m.to).map_err(ToolError::CapacityExceeded)?;
        if !dest.config().decision_range.contains(m.rate) {
            return Err(ToolError::StalePlan(alloc::format!(
                "rate {} outside {} range",
                m.rate,
                m.to
            )));
        }
        staged.release(m.user).map_err(ToolError::CapacityExceeded)?;
        staged
            .admit(m.user, m.to, m.rate)
            .map_err(ToolError::CapacityExceeded)?;
        debug_assert!(staged.check_invariants().is_ok());
    }
    *state = staged;
    Ok(())
}
