//! Brute-force and Monte Carlo references: unit-weight knapsack, per-round
//! hindsight optimum, synthetic bandit environments and empirical regret.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::index;

use crate::bandit::{BanditError, BanditState};
use crate::rng::SimRng;

/// Largest item count `knapsack_bruteforce` will enumerate.
pub const KNAPSACK_MAX_ITEMS: usize = 25;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("knapsack enumeration limited to {KNAPSACK_MAX_ITEMS} items, got {0}")]
    TooManyItems(usize),
    #[error("utility table row {row}, column {col}: {value} outside [0,1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
    #[error("utility table row {row} has {got} columns, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("utility table is empty")]
    Empty,
    #[error("budget {m} exceeds {n_links} links")]
    BudgetTooLarge { m: usize, n_links: usize },
    #[error("adversarial swap needs 2m <= n_links (m = {m}, n_links = {n_links})")]
    SwapTooNarrow { m: usize, n_links: usize },
    #[error(transparent)]
    Bandit(#[from] BanditError),
}

/// Exact best subset of at most `capacity` unit-weight items.
/// Ties keep the subset found first in mask order.
pub fn knapsack_bruteforce(values: &[f64], capacity: usize) -> Result<(Vec<usize>, f64), OracleError> {
    let n = values.len();
    if n > KNAPSACK_MAX_ITEMS {
        return Err(OracleError::TooManyItems(n));
    }
    let mut best_mask = 0u32;
    let mut best = 0.0;
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize > capacity {
            continue;
        }
        let mut total = 0.0;
        let mut bits = mask;
        while bits != 0 {
            total += values[bits.trailing_zeros() as usize];
            bits &= bits - 1;
        }
        if total > best {
            best = total;
            best_mask = mask;
        }
    }
    let subset = (0..n).filter(|i| best_mask & (1 << i) != 0).collect();
    Ok((subset, best))
}

/// Sum of the `m` largest entries.
pub fn top_m_sum(row: &[f64], m: usize) -> f64 {
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.iter().take(m).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorSpec {
    /// A fixed random `m`-subset pays `hi`, every other link `lo`.
    FixedGap { hi: f64, lo: f64 },
    /// Fixed-gap base plus a per-link sinusoid; `amplitude < (hi - lo) / 2`
    /// keeps the best subset fixed while the values move.
    Drifting { hi: f64, lo: f64, amplitude: f64, period: f64 },
    /// Two disjoint `m`-subsets take turns paying `hi`, switching every
    /// quarter of the horizon.
    AdversarialSwap { hi: f64, lo: f64 },
}

impl GeneratorSpec {
    pub const FIXED_GAP: GeneratorSpec = GeneratorSpec::FixedGap { hi: 0.6, lo: 0.5 };
    pub const DRIFTING: GeneratorSpec = GeneratorSpec::Drifting {
        hi: 0.8,
        lo: 0.2,
        amplitude: 0.15,
        period: 100.0,
    };
    pub const ADVERSARIAL_SWAP: GeneratorSpec = GeneratorSpec::AdversarialSwap { hi: 0.9, lo: 0.1 };

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::FixedGap { .. } => "fixed-gap",
            GeneratorSpec::Drifting { .. } => "drifting",
            GeneratorSpec::AdversarialSwap { .. } => "adversarial-swap",
        }
    }

    /// Default parameters for a generator name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "fixed-gap" => Some(Self::FIXED_GAP),
            "drifting" => Some(Self::DRIFTING),
            "adversarial-swap" => Some(Self::ADVERSARIAL_SWAP),
            _ => None,
        }
    }
}

/// `K x n_links` utility table with entries in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBanditEnv {
    table: Vec<Vec<f64>>,
    n_links: usize,
    generator: Option<GeneratorSpec>,
}

impl SyntheticBanditEnv {
    pub fn from_table(table: Vec<Vec<f64>>) -> Result<Self, OracleError> {
        let n_links = table.first().map(|r| r.len()).ok_or(OracleError::Empty)?;
        if n_links == 0 {
            return Err(OracleError::Empty);
        }
        for (row, r) in table.iter().enumerate() {
            if r.len() != n_links {
                return Err(OracleError::Ragged {
                    row,
                    got: r.len(),
                    expected: n_links,
                });
            }
            for (col, &value) in r.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(OracleError::OutOfRange { row, col, value });
                }
            }
        }
        Ok(Self {
            table,
            n_links,
            generator: None,
        })
    }

    pub fn generate(spec: GeneratorSpec, n_links: usize, m: usize, k: usize, rng: &mut SimRng) -> Result<Self, OracleError> {
        if m > n_links {
            return Err(OracleError::BudgetTooLarge { m, n_links });
        }
        if k == 0 || n_links == 0 {
            return Err(OracleError::Empty);
        }
        let perm: Vec<usize> = index::sample(rng, n_links, n_links).into_vec();
        let mut in_a = vec![false; n_links];
        let mut in_b = vec![false; n_links];
        for &a in &perm[..m] {
            in_a[a] = true;
        }
        if let GeneratorSpec::AdversarialSwap { .. } = spec {
            if 2 * m > n_links {
                return Err(OracleError::SwapTooNarrow { m, n_links });
            }
            for &a in &perm[m..2 * m] {
                in_b[a] = true;
            }
        }
        let quarter = (k / 4).max(1);
        let table = (0..k)
            .map(|round| {
                (0..n_links)
                    .map(|a| {
                        let u = match spec {
                            GeneratorSpec::FixedGap { hi, lo } => {
                                if in_a[a] {
                                    hi
                                } else {
                                    lo
                                }
                            }
                            GeneratorSpec::Drifting {
                                hi,
                                lo,
                                amplitude,
                                period,
                            } => {
                                let base = if in_a[a] { hi } else { lo };
                                let phase = 2.0 * PI * a as f64 / n_links as f64;
                                base + amplitude * libm::sin(2.0 * PI * round as f64 / period + phase)
                            }
                            GeneratorSpec::AdversarialSwap { hi, lo } => {
                                let best = if (round / quarter) % 2 == 0 { &in_a } else { &in_b };
                                if best[a] {
                                    hi
                                } else {
                                    lo
                                }
                            }
                        };
                        u.clamp(0.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            table,
            n_links,
            generator: Some(spec),
        })
    }

    pub fn rounds(&self) -> usize {
        self.table.len()
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn generator(&self) -> Option<GeneratorSpec> {
        self.generator
    }

    pub fn row(&self, round: usize) -> &[f64] {
        &self.table[round]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }
}

/// `G*_K`: per-round top-`m` utility summed over the horizon.
pub fn hindsight_optimal(env: &SyntheticBanditEnv, m: usize) -> Result<f64, OracleError> {
    if m > env.n_links() {
        return Err(OracleError::BudgetTooLarge { m, n_links: env.n_links() });
    }
    Ok(env.table().iter().map(|r| top_m_sum(r, m)).sum())
}

/// Server count `N` whose `N(N-1)` directed links number `n_links`
/// (real-valued when `n_links` is not of that form).
pub fn servers_for_links(n_links: usize) -> f64 {
    (1.0 + libm::sqrt(1.0 + 4.0 * n_links as f64)) / 2.0
}

/// `3 N sqrt(K ln N)`.
pub fn regret_bound(n_servers: f64, k: usize) -> f64 {
    3.0 * n_servers * libm::sqrt(k as f64 * libm::log(n_servers))
}

/// `sqrt(K ln N) / (N K)`.
pub fn tuned_eta(n_servers: f64, k: usize) -> f64 {
    libm::sqrt(k as f64 * libm::log(n_servers)) / (n_servers * k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub selected: Vec<Vec<usize>>,
    /// Selector utility per round.
    pub selector_utility: Vec<f64>,
    /// Top-`m` utility per round.
    pub oracle_utility: Vec<f64>,
    /// Cumulative regret after each round.
    pub cumulative_regret: Vec<f64>,
    pub regret: f64,
    /// Regret accrued over rounds `1..=K/2`.
    pub first_half: f64,
    /// Regret accrued over rounds `K/2+1..=K`.
    pub second_half: f64,
    pub bound: f64,
}

/// Drives a fresh selector against `env` with bandit feedback: only the
/// selected links' utilities are revealed each round.
pub fn empirical_regret(env: &SyntheticBanditEnv, m: usize, eta: f64, rng: &mut SimRng) -> Result<RegretReport, OracleError> {
    if m > env.n_links() {
        return Err(OracleError::BudgetTooLarge { m, n_links: env.n_links() });
    }
    let k = env.rounds();
    let mut state = BanditState::new(env.n_links());
    let mut report = RegretReport {
        selected: Vec::with_capacity(k),
        selector_utility: Vec::with_capacity(k),
        oracle_utility: Vec::with_capacity(k),
        cumulative_regret: Vec::with_capacity(k),
        regret: 0.0,
        first_half: 0.0,
        second_half: 0.0,
        bound: regret_bound(servers_for_links(env.n_links()), k),
    };
    let mut cumulative = 0.0;
    for round in 0..k {
        let row = env.row(round);
        let selected = state.step(eta, m, rng)?;
        let feedback: Vec<(usize, f64)> = selected.iter().map(|&a| (a, row[a])).collect();
        state.observe(&feedback)?;
        let got: f64 = feedback.iter().map(|(_, u)| u).sum();
        let best = top_m_sum(row, m);
        let r = best - got;
        cumulative += r;
        if round < k / 2 {
            report.first_half += r;
        } else {
            report.second_half += r;
        }
        report.selected.push(selected);
        report.selector_utility.push(got);
        report.oracle_utility.push(best);
        report.cumulative_regret.push(cumulative);
    }
    report.regret = cumulative;
    Ok(report)
}
