//! Per-round energy accounting: device upload, local computation and model
//! transmission, plus cumulative totals.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{LinkId, TopologyMatrix};
use crate::data::DeviceConnectivity;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnergyError {
    #[error("link {0:?} is a self-link or out of range")]
    InvalidLink(LinkId),
    #[error("round {round}: missing {component} for server {server}")]
    MissingServerComponent {
        round: usize,
        server: usize,
        component: &'static str,
    },
    #[error("round {round}: selected link {link:?} has no model transmission cost recorded")]
    MissingLinkCost { round: usize, link: LinkId },
    #[error("round {0} is not open in the ledger")]
    UnknownRound(usize),
    #[error("round {0} was already totalled")]
    AlreadyClosed(usize),
    #[error("negative or non-finite energy {0}")]
    BadValue(f64),
}

/// `E^dt`: unit device cost times the number of connected devices.
pub fn data_transmission_cost(server: usize, conn: &DeviceConnectivity, psi: f64) -> f64 {
    psi * conn.connected_count(server) as f64
}

/// `E^cp`: samples processed times the server's per-sample cost.
pub fn computation_cost(dataset_size: usize, tau: f64) -> f64 {
    dataset_size as f64 * tau
}

/// Unit model transmission costs `sigma[i][j]` for `j -> i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkCosts {
    n: usize,
    sigma: Vec<f64>,
}

impl LinkCosts {
    pub fn new(n: usize) -> Self {
        Self { n, sigma: vec![0.0; n * n] }
    }

    pub fn n_servers(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, link: LinkId, cost: f64) {
        assert!(link.is_valid(self.n));
        self.sigma[link.dst * self.n + link.src] = cost;
    }

    pub fn get(&self, link: LinkId) -> f64 {
        self.sigma[link.dst * self.n + link.src]
    }
}

/// `E^mt` for one selected link.
pub fn model_transmission_cost(link: LinkId, sigma: &LinkCosts) -> Result<f64, EnergyError> {
    if !link.is_valid(sigma.n_servers()) {
        return Err(EnergyError::InvalidLink(link));
    }
    Ok(sigma.get(link))
}

/// Round total as the three sums: `sum E^dt + sum E^cp + sum E^mt * A`.
pub fn round_total_of(e_dt: &[f64], e_cp: &[f64], e_mt: &[(LinkId, f64)], topology: &TopologyMatrix) -> f64 {
    let dt: f64 = e_dt.iter().sum();
    let cp: f64 = e_cp.iter().sum();
    dt + cp + charged_mt(e_mt, topology)
}

fn charged_mt(e_mt: &[(LinkId, f64)], topology: &TopologyMatrix) -> f64 {
    e_mt.iter()
        .filter(|(l, _)| topology.contains(*l))
        .map(|(_, e)| *e)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundEnergy {
    pub round: usize,
    pub e_dt: Vec<Option<f64>>,
    pub e_cp: Vec<Option<f64>>,
    pub e_mt: Vec<(LinkId, f64)>,
    pub total: Option<f64>,
    pub mt_total: Option<f64>,
}

/// Cumulative ledger; the orchestrator is its single writer.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    n_servers: usize,
    rounds: Vec<RoundEnergy>,
    tot_cost: f64,
    mt_cost: f64,
}

fn check(e: f64) -> Result<f64, EnergyError> {
    if e >= 0.0 && e.is_finite() {
        Ok(e)
    } else {
        Err(EnergyError::BadValue(e))
    }
}

impl EnergyLedger {
    pub fn new(n_servers: usize) -> Self {
        Self {
            n_servers,
            rounds: Vec::new(),
            tot_cost: 0.0,
            mt_cost: 0.0,
        }
    }

    pub fn open_round(&mut self, round: usize) {
        self.rounds.push(RoundEnergy {
            round,
            e_dt: vec![None; self.n_servers],
            e_cp: vec![None; self.n_servers],
            e_mt: Vec::new(),
            total: None,
            mt_total: None,
        });
    }

    fn round_mut(&mut self, round: usize) -> Result<&mut RoundEnergy, EnergyError> {
        self.rounds
            .iter_mut()
            .rev()
            .find(|r| r.round == round)
            .ok_or(EnergyError::UnknownRound(round))
    }

    pub fn record_server(&mut self, round: usize, server: usize, e_dt: f64, e_cp: f64) -> Result<(), EnergyError> {
        let (e_dt, e_cp) = (check(e_dt)?, check(e_cp)?);
        let r = self.round_mut(round)?;
        r.e_dt[server] = Some(e_dt);
        r.e_cp[server] = Some(e_cp);
        Ok(())
    }

    pub fn record_link(&mut self, round: usize, link: LinkId, e_mt: f64) -> Result<(), EnergyError> {
        if !link.is_valid(self.n_servers) {
            return Err(EnergyError::InvalidLink(link));
        }
        let e_mt = check(e_mt)?;
        let r = self.round_mut(round)?;
        r.e_mt.push((link, e_mt));
        Ok(())
    }

    /// Closes `round`: sums its components per the round-total formula and
    /// adds the result to the cumulative totals.
    pub fn round_total(&mut self, round: usize, topology: &TopologyMatrix) -> Result<f64, EnergyError> {
        let r = self.round_mut(round)?;
        if r.total.is_some() {
            return Err(EnergyError::AlreadyClosed(round));
        }
        let mut e_dt = Vec::with_capacity(r.e_dt.len());
        let mut e_cp = Vec::with_capacity(r.e_cp.len());
        for (server, (dt, cp)) in r.e_dt.iter().zip(&r.e_cp).enumerate() {
            e_dt.push(dt.ok_or(EnergyError::MissingServerComponent {
                round,
                server,
                component: "e_dt",
            })?);
            e_cp.push(cp.ok_or(EnergyError::MissingServerComponent {
                round,
                server,
                component: "e_cp",
            })?);
        }
        for link in topology.links() {
            if !r.e_mt.iter().any(|(l, _)| *l == link) {
                return Err(EnergyError::MissingLinkCost { round, link });
            }
        }
        let total = round_total_of(&e_dt, &e_cp, &r.e_mt, topology);
        let mt = charged_mt(&r.e_mt, topology);
        r.total = Some(total);
        r.mt_total = Some(mt);
        self.tot_cost += total;
        self.mt_cost += mt;
        Ok(total)
    }

    pub fn rounds(&self) -> &[RoundEnergy] {
        &self.rounds
    }

    /// Cumulative total energy in joules.
    pub fn tot_cost(&self) -> f64 {
        self.tot_cost
    }

    /// Cumulative model transmission energy in joules.
    pub fn mt_cost(&self) -> f64 {
        self.mt_cost
    }

    /// Re-sums the closed round totals in order; equals [`Self::tot_cost`].
    pub fn resummed_total(&self) -> f64 {
        self.rounds.iter().filter_map(|r| r.total).fold(0.0, |acc, t| acc + t)
    }
}

pub fn joules_to_mj(j: f64) -> f64 {
    j / 1e6
}
