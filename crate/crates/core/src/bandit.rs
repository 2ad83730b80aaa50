//! Utility-driven link selection: link utilities, the importance-weighted
//! utility estimate, exponential weights, capped probability assignment and
//! dependent rounding.
//!
//! The selector works over abstract arms `0..n`. When it drives the
//! inter-edge topology, arm `a` is link `all_links(N)[a]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::{all_links, LinkId, TopologyMatrix};
use crate::energy::LinkCosts;
use crate::math::softmax;
use crate::rng::SimRng;

/// Selection probabilities below this are floored before dividing in the
/// utility estimate.
pub const P_MIN: f64 = 1e-3;

/// Lower bound on weights after the max-rescale.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Probabilities within this distance of 0 or 1 are treated as settled.
pub const SETTLE_TOL: f64 = 1e-9;

/// Relative weights are snapped to multiples of `2^-RATIO_GRID_BITS` before
/// probabilities are assigned, so rescaling all weights by a common factor
/// gives bit-identical probabilities.
pub const RATIO_GRID_BITS: i32 = 22;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BanditError {
    #[error("eta must lie in (0,1], got {0}")]
    InvalidEta(f64),
    #[error("weight of arm {0} is not positive and finite")]
    BadWeight(usize),
    #[error("link budget {m} exceeds the {n} available arms")]
    BudgetExceedsArms { m: usize, n: usize },
    #[error("probability of arm {0} is outside [0,1]")]
    ProbabilityOutOfRange(usize),
    #[error("arm {0} was selected with probability 0")]
    SelectedWithZeroProbability(usize),
    #[error("utility {u} of arm {arm} is outside [0,1]")]
    UtilityOutOfRange { arm: usize, u: f64 },
    #[error("non-finite utility input for link {0:?}")]
    NonFiniteInput(LinkId),
    #[error("arm {0} was selected last round but no utility was observed")]
    MissingUtility(usize),
    #[error("arm {0} was not selected last round")]
    NotSelected(usize),
    #[error("weight overflow after rescale")]
    Overflow,
}

/// Per-round information reported to the coordinator.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityInputs {
    /// Accuracy `P_k` of every server after this round.
    pub acc_now: Vec<f64>,
    /// Accuracy `P_{k-1}` of every server.
    pub acc_prev: Vec<f64>,
    pub e_dt: Vec<f64>,
    pub e_cp: Vec<f64>,
    /// Model transmission cost per link.
    pub e_mt: LinkCosts,
}

/// Utility of every selected link: `alpha * S^p + (1 - alpha) * S^c` with
/// `S^c = 1 - softmax(cost)` and `S^p = softmax(accuracy gain of the
/// receiver)`, both softmaxes taken over the selected links.
pub fn compute_utilities(
    inputs: &UtilityInputs,
    selected: &[LinkId],
    alpha: f64,
) -> Result<Vec<(LinkId, f64)>, BanditError> {
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let mut costs = Vec::with_capacity(selected.len());
    let mut gains = Vec::with_capacity(selected.len());
    for &l in selected {
        let (i, j) = (l.dst, l.src);
        let cost = inputs.e_dt[j] + inputs.e_cp[j] + inputs.e_mt.get(l);
        let gain = inputs.acc_now[i] - inputs.acc_prev[i];
        if !cost.is_finite() || !gain.is_finite() {
            return Err(BanditError::NonFiniteInput(l));
        }
        costs.push(cost);
        gains.push(gain);
    }
    let cost_norm = softmax(&costs);
    let gain_norm = softmax(&gains);
    Ok(selected
        .iter()
        .zip(cost_norm.iter().zip(&gain_norm))
        .map(|(l, (c, g))| {
            let s_c = 1.0 - c;
            let u = alpha * g + (1.0 - alpha) * s_c;
            (*l, u.clamp(0.0, 1.0))
        })
        .collect())
}

/// `1 - 1{selected} (1 - u) / p`. Unselected arms always estimate to 1.
/// Selected probabilities below [`P_MIN`] are floored.
pub fn importance_weighted_estimate(selected: bool, p: f64, u: f64) -> f64 {
    if !selected {
        return 1.0;
    }
    1.0 - (1.0 - u) / p.max(P_MIN)
}

/// One multiplicative step `w * exp(eta * u_hat)`.
pub fn exp_weight_step(w: f64, u_hat: f64, eta: f64) -> f64 {
    w * libm::exp(eta * u_hat)
}

/// Applies [`exp_weight_step`] to every weight and divides by the largest
/// result; probabilities derived from the weights are unchanged by the
/// rescale.
pub fn update_weights(weights: &mut [f64], estimates: &[f64], eta: f64) -> Result<(), BanditError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(BanditError::InvalidEta(eta));
    }
    assert_eq!(weights.len(), estimates.len());
    for (a, w) in weights.iter().enumerate() {
        if !(*w > 0.0 && w.is_finite()) {
            return Err(BanditError::BadWeight(a));
        }
    }
    // log space, so a round where every weight would underflow still keeps
    // the relative order
    let logs: Vec<f64> = weights.iter().zip(estimates).map(|(w, u)| libm::log(*w) + eta * u).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(BanditError::Overflow);
    }
    for (w, l) in weights.iter_mut().zip(&logs) {
        *w = libm::exp(l - max).max(WEIGHT_FLOOR);
    }
    Ok(())
}

fn snap_ratio(r: f64) -> f64 {
    let scale = libm::ldexp(1.0, RATIO_GRID_BITS);
    libm::round(r * scale).max(1.0) / scale
}

/// Capped proportional assignment with water-filling: arms whose share
/// reaches 1 are fixed at 1 and the remaining budget is re-spread over the
/// rest until no new arm saturates. The result sums to `m`.
pub fn assign_probabilities(weights: &[f64], m: usize) -> Result<Vec<f64>, BanditError> {
    let n = weights.len();
    if m > n {
        return Err(BanditError::BudgetExceedsArms { m, n });
    }
    for (a, w) in weights.iter().enumerate() {
        if !(*w > 0.0 && w.is_finite()) {
            return Err(BanditError::BadWeight(a));
        }
    }
    let mut p = vec![0.0; n];
    if m == 0 {
        return Ok(p);
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    let ratios: Vec<f64> = weights.iter().map(|w| snap_ratio(w / max)).collect();

    let mut saturated = vec![false; n];
    let mut n_saturated = 0;
    loop {
        let budget = (m - n_saturated) as f64;
        let total: f64 = ratios
            .iter()
            .zip(&saturated)
            .filter(|(_, s)| !**s)
            .map(|(r, _)| *r)
            .sum();
        if n_saturated == n || total <= 0.0 {
            break;
        }
        let mut newly = 0;
        for a in 0..n {
            if saturated[a] {
                continue;
            }
            let share = budget * ratios[a] / total;
            if share >= 1.0 {
                saturated[a] = true;
                newly += 1;
            } else {
                p[a] = share;
            }
        }
        if newly == 0 {
            break;
        }
        n_saturated += newly;
    }
    for a in 0..n {
        if saturated[a] {
            p[a] = 1.0;
        }
    }
    Ok(p)
}

fn settle(x: f64) -> f64 {
    if x <= SETTLE_TOL {
        0.0
    } else if x >= 1.0 - SETTLE_TOL {
        1.0
    } else {
        x
    }
}

fn is_fractional(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Dependent rounding: repeatedly picks two fractional entries at random
/// and moves mass between them so that one reaches a bound, keeping both
/// marginals and the sum. A lone fractional entry is rounded at 0.5.
/// Returns the selected arms in increasing order.
pub fn dependent_rounding(probs: &[f64], rng: &mut SimRng) -> Result<Vec<usize>, BanditError> {
    let mut p = Vec::with_capacity(probs.len());
    for (a, x) in probs.iter().enumerate() {
        if !(x.is_finite() && *x >= -SETTLE_TOL && *x <= 1.0 + SETTLE_TOL) {
            return Err(BanditError::ProbabilityOutOfRange(a));
        }
        p.push(settle(*x));
    }
    let mut frac: Vec<usize> = (0..p.len()).filter(|a| is_fractional(p[*a])).collect();
    while !frac.is_empty() {
        if frac.len() == 1 {
            let a = frac[0];
            log::debug!("dependent rounding: lone fractional entry {} rounded at 0.5", p[a]);
            p[a] = if p[a] < 0.5 { 0.0 } else { 1.0 };
        } else {
            let x = rng.random_range(0..frac.len());
            let mut y = rng.random_range(0..frac.len() - 1);
            if y >= x {
                y += 1;
            }
            let (i, j) = (frac[x], frac[y]);
            let (pi, pj) = (p[i], p[j]);
            let theta = (1.0 - pi).min(pj);
            let delta = pi.min(1.0 - pj);
            debug_assert!(theta + delta > 0.0, "both picked entries already settled");
            if rng.random::<f64>() < delta / (theta + delta) {
                p[i] = pi + theta;
                p[j] = pj - theta;
            } else {
                p[i] = pi - delta;
                p[j] = pj + delta;
            }
            p[i] = settle(p[i]);
            p[j] = settle(p[j]);
        }
        frac.retain(|a| is_fractional(p[*a]));
    }
    Ok((0..p.len()).filter(|a| p[*a] == 1.0).collect())
}

/// Coordinator-owned selector state.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    weights: Vec<f64>,
    probs: Vec<f64>,
    last_selected: Vec<bool>,
    last_utilities: Vec<Option<f64>>,
    round: usize,
}

impl BanditState {
    /// Unit weights, unit probabilities and an empty previous selection,
    /// so the first round's estimates are all 1 and its selection uniform.
    pub fn new(n_arms: usize) -> Self {
        Self {
            weights: vec![1.0; n_arms],
            probs: vec![1.0; n_arms],
            last_selected: vec![false; n_arms],
            last_utilities: vec![None; n_arms],
            round: 0,
        }
    }

    /// State for the N(N-1) inter-edge links.
    pub fn for_servers(n_servers: usize) -> Self {
        Self::new(n_servers * n_servers.saturating_sub(1))
    }

    pub fn n_arms(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn last_selected(&self) -> Vec<usize> {
        (0..self.n_arms()).filter(|a| self.last_selected[*a]).collect()
    }

    pub fn last_utility(&self, arm: usize) -> Option<f64> {
        self.last_utilities[arm]
    }

    /// Records observed utilities of last round's selected arms.
    pub fn observe(&mut self, utilities: &[(usize, f64)]) -> Result<(), BanditError> {
        for &(arm, u) in utilities {
            if !self.last_selected[arm] {
                return Err(BanditError::NotSelected(arm));
            }
            if !(0.0..=1.0).contains(&u) {
                return Err(BanditError::UtilityOutOfRange { arm, u });
            }
            self.last_utilities[arm] = Some(u);
        }
        Ok(())
    }

    /// Importance-weighted estimate of `arm`'s last-round utility.
    pub fn estimate_utility(&self, arm: usize) -> Result<f64, BanditError> {
        if !self.last_selected[arm] {
            return Ok(1.0);
        }
        let p = self.probs[arm];
        if p <= 0.0 {
            return Err(BanditError::SelectedWithZeroProbability(arm));
        }
        let u = self.last_utilities[arm].ok_or(BanditError::MissingUtility(arm))?;
        if p < P_MIN {
            log::debug!("arm {arm}: selection probability {p} floored to {P_MIN}");
        }
        Ok(importance_weighted_estimate(true, p, u))
    }

    /// Estimates, weight update, probability assignment and rounding for
    /// the next round. Returns the selected arms.
    pub fn step(&mut self, eta: f64, m: usize, rng: &mut SimRng) -> Result<Vec<usize>, BanditError> {
        let estimates = (0..self.n_arms())
            .map(|a| self.estimate_utility(a))
            .collect::<Result<Vec<_>, _>>()?;
        let mut weights = self.weights.clone();
        update_weights(&mut weights, &estimates, eta)?;
        let probs = assign_probabilities(&weights, m)?;
        let selected = dependent_rounding(&probs, rng)?;
        self.weights = weights;
        self.probs = probs;
        self.last_selected.iter_mut().for_each(|s| *s = false);
        for &a in &selected {
            self.last_selected[a] = true;
        }
        self.last_utilities.iter_mut().for_each(|u| *u = None);
        self.round += 1;
        Ok(selected)
    }
}

/// Selector hyperparameters for one topology decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorParams {
    pub alpha: f64,
    pub eta: f64,
    pub m: usize,
}

/// One coordinator round: scores last round's links from `inputs` (absent
/// before the first round), then advances the selector and returns the new
/// topology.
pub fn construct_topology(
    state: &mut BanditState,
    n_servers: usize,
    inputs: Option<&UtilityInputs>,
    params: SelectorParams,
    rng: &mut SimRng,
) -> Result<(TopologyMatrix, Vec<(LinkId, f64)>), BanditError> {
    let links = all_links(n_servers);
    assert_eq!(links.len(), state.n_arms(), "bandit state does not match server count");
    let mut scored = Vec::new();
    if let Some(inputs) = inputs {
        let prev: Vec<LinkId> = state.last_selected().into_iter().map(|a| links[a]).collect();
        scored = compute_utilities(inputs, &prev, params.alpha)?;
        let observed: Vec<(usize, f64)> = state
            .last_selected()
            .into_iter()
            .zip(&scored)
            .map(|(a, (_, u))| (a, *u))
            .collect();
        state.observe(&observed)?;
    }
    let selected = state.step(params.eta, params.m, rng)?;
    let chosen: Vec<LinkId> = selected.into_iter().map(|a| links[a]).collect();
    Ok((TopologyMatrix::from_links(n_servers, &chosen), scored))
}
