//! Desk-scale classification data, Dirichlet non-IID partitioning across
//! servers, and per-round device connectivity that makes each server's
//! training set vary over time.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::rng::SimRng;

/// Floor applied to Gamma draws so tiny concentrations never produce an
/// all-zero ratio vector.
pub const GAMMA_FLOOR: f64 = 1e-300;

/// Mean separation used by [`gen_synthetic_dataset`].
pub const DEFAULT_SEPARATION: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("dataset too small: need {needed} samples for the partition, have {available} (deficit {})", needed - available)]
    TooSmall { needed: usize, available: usize },
    #[error("invalid dataset: {0}")]
    Invalid(&'static str),
    #[error("rho must lie in [0,1], got {0}")]
    BadProbability(f64),
    #[error("lambda_dir must be positive, got {0}")]
    BadConcentration(f64),
}

/// Labelled feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_classes: usize, dim: usize) -> Result<Self, DataError> {
        if dim == 0 || n_classes == 0 {
            return Err(DataError::Invalid("dim and n_classes must be positive"));
        }
        if labels.is_empty() {
            return Err(DataError::Invalid("dataset must not be empty"));
        }
        if features.len() != labels.len() * dim {
            return Err(DataError::Invalid("feature length does not match labels x dim"));
        }
        if labels.iter().any(|l| *l >= n_classes) {
            return Err(DataError::Invalid("label out of range"));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.n_classes];
        for (i, l) in self.labels.iter().enumerate() {
            by_class[*l].push(i);
        }
        by_class
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Isotropic Gaussian class clusters with unit spread.
#[derive(Debug, Clone)]
pub struct ClassClusters {
    means: Vec<Vec<f64>>,
    dim: usize,
}

impl ClassClusters {
    /// Draws one mean per class with coordinates `~ N(0, separation^2)`.
    pub fn new(n_classes: usize, dim: usize, separation: f64, rng: &mut SimRng) -> Self {
        let means = (0..n_classes)
            .map(|_| {
                (0..dim)
                    .map(|_| separation * Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect::<Vec<f64>>()
            })
            .collect();
        Self { means, dim }
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    /// `n_per_class` samples of every class, grouped by class.
    pub fn sample(&self, n_per_class: usize, rng: &mut SimRng) -> Dataset {
        let n = n_per_class * self.means.len();
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for (class, mean) in self.means.iter().enumerate() {
            for _ in 0..n_per_class {
                for m in mean {
                    let z: f64 = StandardNormal.sample(rng);
                    features.push(m + z);
                }
                labels.push(class);
            }
        }
        Dataset {
            features,
            labels,
            n_classes: self.means.len(),
            dim: self.dim,
        }
    }
}

/// Gaussian class clusters with distinct means and a shared isotropic spread.
pub fn gen_synthetic_dataset(n_classes: usize, dim: usize, n_per_class: usize, rng: &mut SimRng) -> Dataset {
    ClassClusters::new(n_classes, dim, DEFAULT_SEPARATION, rng).sample(n_per_class, rng)
}

/// Per-server label ratios and the sample indices assigned to each server.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub per_server_indices: Vec<Vec<usize>>,
    pub per_server_ratios: Vec<Vec<f64>>,
}

/// One Dirichlet(lambda, ..., lambda) draw via normalized Gamma variates.
pub fn dirichlet_ratios(lambda: f64, n_classes: usize, rng: &mut SimRng) -> Result<Vec<f64>, DataError> {
    let gamma = Gamma::new(lambda, 1.0).map_err(|_| DataError::BadConcentration(lambda))?;
    let draws: Vec<f64> = (0..n_classes)
        .map(|_| gamma.sample(rng).max(GAMMA_FLOOR))
        .collect();
    let total: f64 = draws.iter().sum();
    Ok(draws.into_iter().map(|g| g / total).collect())
}

/// Integer counts summing to `total` that follow `ratios`, by the
/// largest-remainder method (ties go to the lower class index).
pub fn largest_remainder(ratios: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - libm::floor(quotas[a]);
        let rb = quotas[b] - libm::floor(quotas[b]);
        rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

/// Splits `ds` into `n_servers` disjoint shards of `per_server_size`
/// samples whose label mix follows a Dirichlet(`lambda_dir`) draw.
///
/// When a class runs out, the shortfall is taken from the nearest class
/// (by index distance) that still has samples.
pub fn dirichlet_partition(
    ds: &Dataset,
    lambda_dir: f64,
    n_servers: usize,
    per_server_size: usize,
    rng: &mut SimRng,
) -> Result<Partition, DataError> {
    if !(lambda_dir > 0.0) {
        return Err(DataError::BadConcentration(lambda_dir));
    }
    let needed = n_servers * per_server_size;
    if needed > ds.len() {
        return Err(DataError::TooSmall {
            needed,
            available: ds.len(),
        });
    }
    let n_classes = ds.n_classes();
    let mut pools = ds.class_indices();
    for pool in pools.iter_mut() {
        pool.shuffle(rng);
    }

    let mut per_server_indices = Vec::with_capacity(n_servers);
    let mut per_server_ratios = Vec::with_capacity(n_servers);
    for server in 0..n_servers {
        let ratios = dirichlet_ratios(lambda_dir, n_classes, rng)?;
        let counts = largest_remainder(&ratios, per_server_size);
        let mut shard = Vec::with_capacity(per_server_size);
        for (class, &want) in counts.iter().enumerate() {
            let mut missing = want;
            while missing > 0 {
                let source = match nearest_nonempty(&pools, class) {
                    Some(s) => s,
                    None => break,
                };
                if source != class {
                    log::debug!("server {server}: class {class} exhausted, filling {missing} from class {source}");
                }
                let take = missing.min(pools[source].len());
                let at = pools[source].len() - take;
                shard.extend(pools[source].drain(at..));
                missing -= take;
            }
        }
        per_server_indices.push(shard);
        per_server_ratios.push(ratios);
    }
    Ok(Partition {
        per_server_indices,
        per_server_ratios,
    })
}

fn nearest_nonempty(pools: &[Vec<usize>], class: usize) -> Option<usize> {
    (0..pools.len())
        .filter(|c| !pools[*c].is_empty())
        .min_by_key(|c| (c.abs_diff(class), *c))
}

/// Device-to-edge connectivity for one round: an N x M binary matrix where
/// server `i` manages the contiguous device block
/// `[i * devices_per_server, (i + 1) * devices_per_server)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceConnectivity {
    n_servers: usize,
    devices_per_server: usize,
    entries: Vec<u8>,
}

impl DeviceConnectivity {
    pub fn new(n_servers: usize, devices_per_server: usize) -> Self {
        Self {
            n_servers,
            devices_per_server,
            entries: vec![0; n_servers * n_servers * devices_per_server],
        }
    }

    pub fn n_devices(&self) -> usize {
        self.n_servers * self.devices_per_server
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn manages(&self, server: usize, device: usize) -> bool {
        device / self.devices_per_server == server
    }

    pub fn get(&self, server: usize, device: usize) -> u8 {
        self.entries[server * self.n_devices() + device]
    }

    /// Marks a managed device as connected.
    pub fn connect(&mut self, server: usize, device: usize) {
        assert!(self.manages(server, device), "device {device} is not managed by server {server}");
        let m = self.n_devices();
        self.entries[server * m + device] = 1;
    }

    pub fn connected_count(&self, server: usize) -> usize {
        let m = self.n_devices();
        self.entries[server * m..(server + 1) * m]
            .iter()
            .map(|e| *e as usize)
            .sum()
    }
}

/// Each managed (server, device) pair connects independently with
/// probability `rho`.
pub fn sample_device_connectivity(
    rho: f64,
    n_servers: usize,
    devices_per_server: usize,
    rng: &mut SimRng,
) -> Result<DeviceConnectivity, DataError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(DataError::BadProbability(rho));
    }
    let mut conn = DeviceConnectivity::new(n_servers, devices_per_server);
    for server in 0..n_servers {
        for d in 0..devices_per_server {
            if rng.random_bool(rho) {
                conn.connect(server, server * devices_per_server + d);
            }
        }
    }
    Ok(conn)
}

/// Shapes the per-round training pool of a server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundPoolSpec {
    /// Samples drawn from the server's shard each round.
    pub pool_size: usize,
    /// Number of subsets the pool is split into; one per connected device.
    pub n_subsets: usize,
}

/// The training samples a server holds in one round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RoundDataset {
    pub indices: Vec<usize>,
}

impl RoundDataset {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// Draws the server's round pool from its shard, splits it into
/// `n_subsets` random subsets and keeps one subset per connected device.
pub fn build_round_dataset(
    server: usize,
    partition: &Partition,
    conn: &DeviceConnectivity,
    spec: RoundPoolSpec,
    rng: &mut SimRng,
) -> RoundDataset {
    let shard = &partition.per_server_indices[server];
    let mut connected = conn.connected_count(server);
    if connected > spec.n_subsets {
        log::warn!("server {server}: {connected} devices connected but only {} subsets; clamping", spec.n_subsets);
        connected = spec.n_subsets;
    }
    if connected == 0 || shard.is_empty() {
        return RoundDataset::default();
    }
    let pool_size = spec.pool_size.min(shard.len());
    let pool: Vec<usize> = index::sample(rng, shard.len(), pool_size)
        .into_iter()
        .map(|i| shard[i])
        .collect();
    let subsets = split_even(&pool, spec.n_subsets);
    let mut chosen: Vec<usize> = index::sample(rng, spec.n_subsets, connected).into_vec();
    chosen.sort_unstable();
    let indices = chosen.into_iter().flat_map(|s| subsets[s].iter().copied()).collect();
    RoundDataset { indices }
}

/// Splits into `parts` contiguous chunks whose sizes differ by at most one.
fn split_even(items: &[usize], parts: usize) -> Vec<&[usize]> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(&items[start..start + len]);
        start += len;
    }
    out
}
