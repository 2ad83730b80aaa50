//! Experiment configuration, link identities, topology matrices and the
//! derivation of unit energy costs from energy-efficiency constants.
//!
//! Units are fixed across the crate: energies in joules, payloads in bits,
//! energy efficiency in Kbit/J.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("energy efficiency must be positive, got {0}")]
    NonPositiveEfficiency(f64),
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// All hyperparameters, cost constants and the root seed of one experiment.
///
/// The serialized field names are the keys of the structured-text config
/// file; unknown keys are rejected and omitted keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_servers: usize,
    pub devices_per_server: usize,
    pub n_rounds: usize,
    /// Utility trade-off between the performance and cost factors.
    pub alpha: f64,
    /// Aggregation trade-off between loss-probe importance and dataset size.
    pub beta: f64,
    /// Exponential-weight learning rate of the link selector.
    pub eta: f64,
    /// Fraction of the N(N-1) directed links selected each round.
    pub gamma: f64,
    /// Device-to-edge connection success probability.
    pub rho: f64,
    /// Dirichlet concentration of the label split across servers.
    pub lambda_dir: f64,
    /// Samples uploaded by one connected device per round.
    pub n_tr: u64,
    pub sample_bits: u64,
    pub model_bits: u64,
    /// Device-to-edge energy efficiency, Kbit/J.
    pub ee_device: f64,
    /// Inter-edge link energy efficiency range `[lo, hi]`, Kbit/J.
    pub ee_link_range: [f64; 2],
    /// Pool of per-sample computation costs (J/sample); one is drawn per server.
    pub tau_choices: Vec<f64>,
    /// Size `B` of the loss probe used for aggregation importance.
    pub batch_sample_size: usize,
    pub seed: u64,

    // Desk-scale learning task.
    pub n_classes: usize,
    pub feature_dim: usize,
    /// Distance scale between synthetic class means (cluster spread is 1).
    pub class_separation: f64,
    pub hidden_units: usize,
    pub samples_per_server: usize,
    pub round_pool_size: usize,
    pub n_subsets: usize,
    pub test_per_class: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub local_batch: usize,
    /// Link fraction used by the random baseline; `None` reuses `gamma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rnd_link_fraction: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_servers: 5,
            devices_per_server: 30,
            n_rounds: 200,
            alpha: 0.6,
            beta: 0.4,
            eta: tuned_eta(5, 200),
            gamma: 0.3,
            rho: 0.5,
            lambda_dir: 0.3,
            n_tr: 2,
            sample_bits: 28 * 28 * 8,
            model_bits: 47_200_000,
            ee_device: 1.0,
            ee_link_range: [20.0, 50.0],
            tau_choices: vec![4.0, 16.0],
            batch_sample_size: 16,
            seed: 1,
            n_classes: 10,
            feature_dim: 16,
            class_separation: 1.0,
            hidden_units: 0,
            samples_per_server: 800,
            round_pool_size: 60,
            n_subsets: 30,
            test_per_class: 100,
            learning_rate: 0.1,
            local_epochs: 2,
            local_batch: 10,
            rnd_link_fraction: None,
        }
    }
}

impl SimConfig {
    /// Number of directed inter-edge links, N(N-1).
    pub fn n_links(&self) -> usize {
        self.n_servers * self.n_servers.saturating_sub(1)
    }

    /// Per-round link budget `round(gamma * N(N-1))`, rounding halves up.
    pub fn link_budget(&self) -> usize {
        link_budget(self.gamma, self.n_servers)
    }

    /// Link budget of the random baseline.
    pub fn rnd_link_budget(&self) -> usize {
        link_budget(self.rnd_link_fraction.unwrap_or(self.gamma), self.n_servers)
    }

    /// Unit device-to-edge transmission cost `psi`.
    pub fn device_cost(&self) -> Result<f64, ConfigError> {
        derive_device_cost(self.n_tr, self.sample_bits, self.ee_device)
    }

    /// Returns every violated invariant; empty means the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let half_open = |x: f64| x > 0.0 && x <= 1.0;
        if self.n_servers < 2 {
            v.push(format!("n_servers must be at least 2, got {}", self.n_servers));
        }
        if self.n_rounds == 0 {
            v.push(String::from("n_rounds must be at least 1"));
        }
        if !unit(self.alpha) {
            v.push(String::from("alpha out of [0,1]"));
        }
        if !unit(self.beta) {
            v.push(String::from("beta out of [0,1]"));
        }
        if !half_open(self.eta) {
            v.push(String::from("eta out of (0,1]"));
        }
        if !half_open(self.gamma) {
            v.push(String::from("gamma out of (0,1]"));
        } else if self.n_servers >= 2 && self.link_budget() < 1 {
            v.push(String::from("round(gamma * N(N-1)) must be at least 1"));
        }
        if let Some(f) = self.rnd_link_fraction {
            if !half_open(f) || link_budget(f, self.n_servers) < 1 {
                v.push(String::from("rnd_link_fraction out of (0,1] or selects no link"));
            }
        }
        if !unit(self.rho) {
            v.push(String::from("rho out of [0,1]"));
        }
        if !(self.lambda_dir > 0.0 && self.lambda_dir.is_finite()) {
            v.push(String::from("lambda_dir must be positive"));
        }
        if self.n_tr == 0 {
            v.push(String::from("n_tr must be positive"));
        }
        if self.sample_bits == 0 {
            v.push(String::from("sample_bits must be positive"));
        }
        if self.model_bits == 0 {
            v.push(String::from("model_bits must be positive"));
        }
        if !(self.ee_device > 0.0 && self.ee_device.is_finite()) {
            v.push(String::from("ee_device must be positive"));
        }
        let [lo, hi] = self.ee_link_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            v.push(String::from("ee_link_range must satisfy 0 < lo <= hi"));
        }
        if self.tau_choices.is_empty() {
            v.push(String::from("tau_choices must not be empty"));
        } else if self.tau_choices.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            v.push(String::from("tau_choices must all be positive"));
        }
        if self.batch_sample_size == 0 {
            v.push(String::from("batch_sample_size must be at least 1"));
        }
        if self.n_classes == 0 || self.feature_dim == 0 {
            v.push(String::from("n_classes and feature_dim must be at least 1"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            v.push(String::from("class_separation must be positive"));
        }
        if self.samples_per_server == 0 || self.round_pool_size == 0 {
            v.push(String::from("samples_per_server and round_pool_size must be at least 1"));
        }
        if self.n_subsets == 0 {
            v.push(String::from("n_subsets must be at least 1"));
        }
        if self.test_per_class == 0 {
            v.push(String::from("test_per_class must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(String::from("learning_rate must be positive"));
        }
        if self.local_batch == 0 {
            v.push(String::from("local_batch must be at least 1"));
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}

/// Exploration rate `sqrt(K ln N) / (N K)` for `N` servers and `K` rounds.
pub fn tuned_eta(n_servers: usize, n_rounds: usize) -> f64 {
    let (n, k) = (n_servers as f64, n_rounds as f64);
    libm::sqrt(k * libm::log(n)) / (n * k)
}

/// `round(fraction * N(N-1))` with halves rounded up.
pub fn link_budget(fraction: f64, n_servers: usize) -> usize {
    let links = (n_servers * n_servers.saturating_sub(1)) as f64;
    let m = libm::floor(fraction * links + 0.5);
    if m <= 0.0 {
        0
    } else {
        m as usize
    }
}

/// Energy to ship one model over a link: `(model_bits / 1000) / ee_link` J.
pub fn derive_link_cost(ee_link: f64, model_bits: u64) -> Result<f64, ConfigError> {
    if !(ee_link > 0.0) {
        return Err(ConfigError::NonPositiveEfficiency(ee_link));
    }
    Ok(math::kbits(model_bits) / ee_link)
}

/// Energy for one device to upload its round data:
/// `(n_tr * sample_bits / 1000) / ee_device` J.
pub fn derive_device_cost(n_tr: u64, sample_bits: u64, ee_device: f64) -> Result<f64, ConfigError> {
    if !(ee_device > 0.0) {
        return Err(ConfigError::NonPositiveEfficiency(ee_device));
    }
    Ok(math::kbits(n_tr * sample_bits) / ee_device)
}

/// A directed inter-edge link: `src` sends its model to `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId {
    pub src: usize,
    pub dst: usize,
}

impl LinkId {
    pub fn new(src: usize, dst: usize) -> Self {
        Self { src, dst }
    }

    pub fn is_valid(&self, n_servers: usize) -> bool {
        self.src != self.dst && self.src < n_servers && self.dst < n_servers
    }
}

/// All N(N-1) directed links in canonical order (receiver-major).
pub fn all_links(n_servers: usize) -> Vec<LinkId> {
    let mut out = Vec::with_capacity(n_servers * n_servers.saturating_sub(1));
    for dst in 0..n_servers {
        for src in 0..n_servers {
            if src != dst {
                out.push(LinkId { src, dst });
            }
        }
    }
    out
}

/// Position of `link` in [`all_links`] order.
pub fn link_index(link: LinkId, n_servers: usize) -> usize {
    debug_assert!(link.is_valid(n_servers));
    let col = if link.src < link.dst { link.src } else { link.src - 1 };
    link.dst * (n_servers - 1) + col
}

/// Binary N x N inter-edge adjacency for one round. Entry `(i, j) = 1`
/// means server `j` sends its model to server `i`; the diagonal is zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopologyMatrix {
    n: usize,
    entries: Vec<u8>,
}

impl TopologyMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            entries: vec![0; n * n],
        }
    }

    pub fn from_links(n: usize, links: &[LinkId]) -> Self {
        let mut t = Self::empty(n);
        for l in links {
            t.set(*l, true);
        }
        t
    }

    pub fn n_servers(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, link: LinkId, on: bool) {
        assert!(link.is_valid(self.n), "invalid link {:?}", link);
        self.entries[link.dst * self.n + link.src] = on as u8;
    }

    pub fn contains(&self, link: LinkId) -> bool {
        link.is_valid(self.n) && self.entries[link.dst * self.n + link.src] == 1
    }

    /// Raw entry `A(receiver, sender)`.
    pub fn get(&self, receiver: usize, sender: usize) -> u8 {
        self.entries[receiver * self.n + sender]
    }

    pub fn link_count(&self) -> usize {
        self.entries.iter().filter(|e| **e == 1).count()
    }

    /// Selected links in canonical order.
    pub fn links(&self) -> Vec<LinkId> {
        all_links(self.n).into_iter().filter(|l| self.contains(*l)).collect()
    }

    pub fn in_neighbors(&self, receiver: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.get(receiver, j) == 1).collect()
    }

    pub fn out_neighbors(&self, sender: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.get(i, sender) == 1).collect()
    }

    /// Checks the zero diagonal and binary entries.
    pub fn is_well_formed(&self) -> bool {
        self.entries.len() == self.n * self.n
            && self.entries.iter().all(|e| *e <= 1)
            && (0..self.n).all(|i| self.get(i, i) == 0)
    }
}
