//! End-to-end simulation: per round, the coordinator picks the inter-edge
//! topology, then every server collects data, trains, exchanges models and
//! aggregates. Also hosts the random and ring baselines.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::index;
use rand::Rng;

use crate::aggregation::{dcmu_round, uniform_average, AggregationError, AggregationRecord, InboundModel};
use crate::bandit::{construct_topology, BanditError, BanditState, SelectorParams, UtilityInputs};
use crate::config::{all_links, derive_link_cost, ConfigError, LinkId, SimConfig, TopologyMatrix};
use crate::data::{
    build_round_dataset, dirichlet_partition, sample_device_connectivity, ClassClusters, DataError, Dataset, Partition,
    RoundDataset, RoundPoolSpec,
};
use crate::energy::{computation_cost, data_transmission_cost, joules_to_mj, model_transmission_cost, EnergyError, EnergyLedger, LinkCosts};
use crate::learner::{evaluate_accuracy, local_train, LearnerError, ModelParams, ModelShape, TrainOptions};
use crate::math::{mean, variance};
use crate::rng::{stream, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    HatDfed,
    Rnd,
    Ring,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::HatDfed, Strategy::Rnd, Strategy::Ring];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::HatDfed => "hat_dfed",
            Strategy::Rnd => "rnd",
            Strategy::Ring => "ring",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How each round's inter-edge topology is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyRule {
    Utility,
    Random,
    Ring,
}

/// How a server combines its own and received models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationRule {
    Importance,
    Uniform,
}

impl Strategy {
    pub fn rules(&self) -> (TopologyRule, AggregationRule) {
        match self {
            Strategy::HatDfed => (TopologyRule::Utility, AggregationRule::Importance),
            Strategy::Rnd => (TopologyRule::Random, AggregationRule::Uniform),
            Strategy::Ring => (TopologyRule::Ring, AggregationRule::Uniform),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported strategy '{0}'; supported: hat_dfed, rnd, ring")]
pub struct UnknownStrategy(pub String);

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hat_dfed" | "hat-dfed" => Ok(Strategy::HatDfed),
            "rnd" => Ok(Strategy::Rnd),
            "ring" => Ok(Strategy::Ring),
            other => Err(UnknownStrategy(String::from(other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setup failed: {0}")]
    Setup(#[from] DataError),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: StepError,
    },
    #[error("cannot summarize an empty round series")]
    EmptySeries,
}

fn at_round<E: Into<StepError>>(round: usize) -> impl Fn(E) -> SimError {
    move |e| SimError::Round {
        round,
        source: e.into(),
    }
}

/// Runs independent per-server work items. Implementations may run them
/// concurrently; results must come back in index order.
pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs work items one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Everything drawn once before the first round.
#[derive(Debug, Clone)]
pub struct Environment {
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    /// Per-sample computation cost of each server.
    pub tau: Vec<f64>,
    /// Energy efficiency of each link, Kbit/J.
    pub ee_links: LinkCosts,
    /// Model transmission cost of each link, J.
    pub sigma: LinkCosts,
    /// Device upload cost, J.
    pub psi: f64,
    pub init_model: ModelParams,
    pub shape: ModelShape,
}

impl Environment {
    pub fn build(cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let n = cfg.n_servers;
        let mut data_rng = stream(cfg.seed, Stream::Data, 0, 0);
        let clusters = ClassClusters::new(cfg.n_classes, cfg.feature_dim, cfg.class_separation, &mut data_rng);
        // Twice the even share per class leaves room for skewed draws.
        let needed = n * cfg.samples_per_server;
        let train_per_class = (2 * needed).div_ceil(cfg.n_classes);
        let train = clusters.sample(train_per_class, &mut data_rng);
        let test = clusters.sample(cfg.test_per_class, &mut data_rng);
        let partition = dirichlet_partition(
            &train,
            cfg.lambda_dir,
            n,
            cfg.samples_per_server,
            &mut stream(cfg.seed, Stream::Data, 0, 1),
        )?;

        let mut setup = stream(cfg.seed, Stream::Setup, 0, 0);
        let tau: Vec<f64> = (0..n)
            .map(|_| cfg.tau_choices[setup.random_range(0..cfg.tau_choices.len())])
            .collect();
        let [lo, hi] = cfg.ee_link_range;
        let mut ee_links = LinkCosts::new(n);
        let mut sigma = LinkCosts::new(n);
        for l in all_links(n) {
            let ee = if lo == hi { lo } else { setup.random_range(lo..=hi) };
            ee_links.set(l, ee);
            sigma.set(l, derive_link_cost(ee, cfg.model_bits)?);
        }
        log::info!("per-server tau draws (J/sample): {:?}", tau);
        let psi = cfg.device_cost()?;
        let shape = ModelShape::new(cfg.feature_dim, cfg.hidden_units, cfg.n_classes);
        let init_model = ModelParams::xavier(shape, &mut stream(cfg.seed, Stream::Setup, 0, 1));
        Ok(Self {
            train,
            test,
            partition,
            tau,
            ee_links,
            sigma,
            psi,
            init_model,
            shape,
        })
    }
}

/// Uniformly random `m`-subset of the directed links.
pub fn random_topology(n_servers: usize, m: usize, rng: &mut SimRng) -> TopologyMatrix {
    let links = all_links(n_servers);
    let chosen: Vec<LinkId> = index::sample(rng, links.len(), m.min(links.len()))
        .into_iter()
        .map(|a| links[a])
        .collect();
    TopologyMatrix::from_links(n_servers, &chosen)
}

/// `s_0 -> s_1 -> ... -> s_{N-1} -> s_0`.
pub fn ring_topology(n_servers: usize) -> TopologyMatrix {
    let ring: Vec<LinkId> = (0..n_servers).map(|i| LinkId::new(i, (i + 1) % n_servers)).collect();
    TopologyMatrix::from_links(n_servers, &ring)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported baseline '{0}'; supported: rnd, ring")]
pub struct UnknownBaseline(pub String);

/// Topology of a named baseline for one round.
pub fn baseline_topology(name: &str, cfg: &SimConfig, rng: &mut SimRng) -> Result<TopologyMatrix, UnknownBaseline> {
    match name {
        "rnd" => Ok(random_topology(cfg.n_servers, cfg.rnd_link_budget(), rng)),
        "ring" => Ok(ring_topology(cfg.n_servers)),
        other => Err(UnknownBaseline(String::from(other))),
    }
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: Vec<f64>,
    pub dataset_size: Vec<usize>,
    pub connected_devices: Vec<usize>,
    pub topology: TopologyMatrix,
    pub e_dt: Vec<f64>,
    pub e_cp: Vec<f64>,
    /// Model transmission cost of each selected link, in canonical order.
    pub e_mt: Vec<(LinkId, f64)>,
    pub round_total: f64,
    /// Utilities of the previous round's links, scored at the start of
    /// this round (selector strategy only).
    pub utilities: Vec<(LinkId, f64)>,
    pub aggregation: Vec<AggregationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub avg_acc: f64,
    pub var_acc: f64,
    pub best_acc: f64,
    pub worst_acc: f64,
    pub tot_cost_mj: f64,
    pub mt_cost_mj: f64,
    /// Mean accuracy across servers after each round.
    pub avg_acc_series: Vec<f64>,
    /// Cumulative total cost after each round, MJ.
    pub tot_cost_series_mj: Vec<f64>,
}

/// Model exchange that actually fed an aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub round: usize,
    pub receiver: usize,
    pub sender: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rules: (TopologyRule, AggregationRule),
    pub summary: RunSummary,
    pub rounds: Vec<RoundMetrics>,
    pub ledger: EnergyLedger,
    pub audit: Vec<Interaction>,
    pub tau: Vec<f64>,
    pub initial_accuracy: Vec<f64>,
}

struct Trained {
    model: ModelParams,
    probe: Vec<usize>,
}

/// Runs the full simulation with `strategy` on the calling thread.
pub fn run_simulation(cfg: &SimConfig, strategy: Strategy) -> Result<RunOutput, SimError> {
    run_simulation_with(cfg, strategy, &Sequential)
}

/// Runs the full simulation, handing per-server work to `exec`.
pub fn run_simulation_with<E: Executor>(cfg: &SimConfig, strategy: Strategy, exec: &E) -> Result<RunOutput, SimError> {
    run_with_rules(cfg, strategy.rules(), exec)
}

/// Runs the full simulation with an arbitrary pairing of topology and
/// aggregation rules (ablations).
pub fn run_with_rules<E: Executor>(
    cfg: &SimConfig,
    rules: (TopologyRule, AggregationRule),
    exec: &E,
) -> Result<RunOutput, SimError> {
    let (topology_rule, aggregation_rule) = rules;
    let env = Environment::build(cfg)?;
    let n = cfg.n_servers;
    let seed = cfg.seed;
    let opts = TrainOptions {
        lr: cfg.learning_rate,
        epochs: cfg.local_epochs,
        batch: cfg.local_batch,
    };
    let spec = RoundPoolSpec {
        pool_size: cfg.round_pool_size,
        n_subsets: cfg.n_subsets,
    };
    let selector = SelectorParams {
        alpha: cfg.alpha,
        eta: cfg.eta,
        m: cfg.link_budget(),
    };

    let mut models: Vec<ModelParams> = (0..n).map(|_| env.init_model.clone()).collect();
    let initial = evaluate_accuracy(&env.init_model, &env.test).map_err(at_round(0))?;
    let initial_accuracy = alloc::vec![initial; n];
    let mut acc_prev = initial_accuracy.clone();
    let mut pending: Option<UtilityInputs> = None;
    let mut bandit = BanditState::for_servers(n);
    let mut bandit_rng = stream(seed, Stream::Bandit, 0, 0);
    let mut ledger = EnergyLedger::new(n);
    let mut rounds = Vec::with_capacity(cfg.n_rounds);
    let mut audit = Vec::new();

    for k in 1..=cfg.n_rounds {
        let err = at_round::<StepError>(k);
        let conn = sample_device_connectivity(cfg.rho, n, cfg.devices_per_server, &mut stream(seed, Stream::Connectivity, k, 0))
            .map_err(|e| err(e.into()))?;
        let round_data: Vec<RoundDataset> = (0..n)
            .map(|i| build_round_dataset(i, &env.partition, &conn, spec, &mut stream(seed, Stream::Data, k, i)))
            .collect();
        let dataset_size: Vec<usize> = round_data.iter().map(|d| d.size()).collect();
        let connected_devices: Vec<usize> = (0..n).map(|i| conn.connected_count(i)).collect();
        let e_dt: Vec<f64> = (0..n).map(|i| data_transmission_cost(i, &conn, env.psi)).collect();
        let e_cp: Vec<f64> = (0..n).map(|i| computation_cost(dataset_size[i], env.tau[i])).collect();
        ledger.open_round(k);
        for i in 0..n {
            ledger.record_server(k, i, e_dt[i], e_cp[i]).map_err(|e| err(e.into()))?;
        }

        // Phase I
        let (topology, utilities) = match topology_rule {
            TopologyRule::Utility => construct_topology(&mut bandit, n, pending.as_ref(), selector, &mut bandit_rng)
                .map_err(|e| err(e.into()))?,
            TopologyRule::Random => (
                random_topology(n, cfg.rnd_link_budget(), &mut stream(seed, Stream::Baseline, k, 0)),
                Vec::new(),
            ),
            TopologyRule::Ring => (ring_topology(n), Vec::new()),
        };

        // Phase II: local training and probe sampling
        let trained: Vec<Result<Trained, StepError>> = exec.map(n, |i| {
            let idx = &round_data[i].indices;
            let report = local_train(&models[i], &env.train, idx, opts, &mut stream(seed, Stream::Learner, k, i))?;
            let b = cfg.batch_sample_size.min(idx.len());
            let probe = index::sample(&mut stream(seed, Stream::Probe, k, i), idx.len(), b)
                .into_iter()
                .map(|p| idx[p])
                .collect();
            Ok(Trained {
                model: report.params_out,
                probe,
            })
        });
        let trained = trained.into_iter().collect::<Result<Vec<_>, _>>().map_err(&err)?;

        let mut e_mt = Vec::new();
        for link in topology.links() {
            let cost = model_transmission_cost(link, &env.sigma).map_err(|e| err(e.into()))?;
            ledger.record_link(k, link, cost).map_err(|e| err(e.into()))?;
            e_mt.push((link, cost));
        }

        // Phase II: exchange and aggregation
        let outcomes = exec.map(n, |i| {
            let own = InboundModel {
                sender: i,
                params: trained[i].model.clone(),
                train_size: dataset_size[i],
            };
            let inbound: Vec<InboundModel> = topology
                .in_neighbors(i)
                .into_iter()
                .map(|j| InboundModel {
                    sender: j,
                    params: trained[j].model.clone(),
                    train_size: dataset_size[j],
                })
                .collect();
            match aggregation_rule {
                AggregationRule::Importance => dcmu_round(i, &own, &inbound, &env.train, &trained[i].probe, cfg.beta),
                AggregationRule::Uniform => uniform_average(i, &own, &inbound),
            }
        });
        let mut aggregation = Vec::new();
        for (i, out) in outcomes.into_iter().enumerate() {
            let out = out.map_err(|e| err(e.into()))?;
            for r in &out.records {
                if r.sender != r.receiver {
                    audit.push(Interaction {
                        round: k,
                        receiver: r.receiver,
                        sender: r.sender,
                    });
                }
            }
            aggregation.extend(out.records);
            models[i] = out.params;
        }

        let accuracy = exec
            .map(n, |i| evaluate_accuracy(&models[i], &env.test))
            .into_iter()
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| err(e.into()))?;
        let round_total = ledger.round_total(k, &topology).map_err(|e| err(e.into()))?;

        pending = Some(UtilityInputs {
            acc_now: accuracy.clone(),
            acc_prev: core::mem::replace(&mut acc_prev, accuracy.clone()),
            e_dt: e_dt.clone(),
            e_cp: e_cp.clone(),
            e_mt: env.sigma.clone(),
        });
        rounds.push(RoundMetrics {
            round: k,
            accuracy,
            dataset_size,
            connected_devices,
            topology,
            e_dt,
            e_cp,
            e_mt,
            round_total,
            utilities,
            aggregation,
        });
    }

    let summary = collect_summary(&rounds)?;
    Ok(RunOutput {
        rules,
        summary,
        rounds,
        ledger,
        audit,
        tau: env.tau,
        initial_accuracy,
    })
}

/// Final-round accuracy statistics across servers and cumulative costs.
pub fn collect_summary(series: &[RoundMetrics]) -> Result<RunSummary, SimError> {
    let last = series.last().ok_or(SimError::EmptySeries)?;
    let acc = &last.accuracy;
    let mut tot = 0.0;
    let mut mt = 0.0;
    let mut tot_series = Vec::with_capacity(series.len());
    for r in series {
        tot += r.round_total;
        mt += r.e_mt.iter().map(|(_, e)| *e).sum::<f64>();
        tot_series.push(joules_to_mj(tot));
    }
    Ok(RunSummary {
        avg_acc: mean(acc),
        var_acc: variance(acc),
        best_acc: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst_acc: acc.iter().copied().fold(f64::INFINITY, f64::min),
        tot_cost_mj: joules_to_mj(tot),
        mt_cost_mj: joules_to_mj(mt),
        avg_acc_series: series.iter().map(|r| mean(&r.accuracy)).collect(),
        tot_cost_series_mj: tot_series,
    })
}

impl RunOutput {
    /// Checks every recorded exchange against the round's topology.
    pub fn audit_violations(&self) -> Vec<String> {
        self.audit
            .iter()
            .filter(|it| !self.rounds[it.round - 1].topology.contains(LinkId::new(it.sender, it.receiver)))
            .map(|it| format!("round {}: {} -> {} not in topology", it.round, it.sender, it.receiver))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_cfg() -> SimConfig {
        SimConfig {
            n_rounds: 3,
            n_classes: 4,
            feature_dim: 4,
            samples_per_server: 100,
            test_per_class: 20,
            ..SimConfig::default()
        }
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("rnd".parse::<Strategy>(), Ok(Strategy::Rnd));
        assert_eq!("hat_dfed".parse::<Strategy>(), Ok(Strategy::HatDfed));
        let err = "sgp".parse::<Strategy>().unwrap_err();
        assert!(format!("{err}").contains("hat_dfed, rnd, ring"));
    }

    #[test]
    fn ring_shape() {
        let t = ring_topology(5);
        assert_eq!(t.link_count(), 5);
        for i in 0..5 {
            assert_eq!(t.in_neighbors(i).len(), 1);
            assert_eq!(t.out_neighbors(i).len(), 1);
        }
        let two = ring_topology(2);
        assert!(two.contains(LinkId::new(0, 1)) && two.contains(LinkId::new(1, 0)));
    }

    #[test]
    fn rnd_shape_and_reproducibility() {
        let a = random_topology(5, 6, &mut stream(3, Stream::Baseline, 1, 0));
        let b = random_topology(5, 6, &mut stream(3, Stream::Baseline, 1, 0));
        assert_eq!(a, b);
        assert_eq!(a.link_count(), 6);
        assert!(a.is_well_formed());
    }

    #[test]
    fn baseline_by_name() {
        let cfg = SimConfig::default();
        let mut rng = stream(3, Stream::Baseline, 1, 0);
        assert_eq!(baseline_topology("rnd", &cfg, &mut rng).unwrap().link_count(), 6);
        assert_eq!(baseline_topology("ring", &cfg, &mut rng).unwrap(), ring_topology(5));
        let err = baseline_topology("sgp", &cfg, &mut rng).unwrap_err();
        assert!(format!("{err}").contains("rnd, ring"));
    }

    #[test]
    fn summary_examples() {
        let mk = |acc: Vec<f64>| RoundMetrics {
            round: 1,
            accuracy: acc,
            dataset_size: Vec::new(),
            connected_devices: Vec::new(),
            topology: TopologyMatrix::empty(2),
            e_dt: Vec::new(),
            e_cp: Vec::new(),
            e_mt: Vec::new(),
            round_total: 0.0,
            utilities: Vec::new(),
            aggregation: Vec::new(),
        };
        let s = collect_summary(&[mk(alloc::vec![0.8; 3])]).unwrap();
        assert_eq!((s.avg_acc, s.var_acc, s.best_acc, s.worst_acc), (0.8, 0.0, 0.8, 0.8));
        let s = collect_summary(&[mk(alloc::vec![0.8, 0.9])]).unwrap();
        assert!((s.avg_acc - 0.85).abs() < 1e-15);
        assert!((s.var_acc - 0.0025).abs() < 1e-15);
        assert_eq!((s.best_acc, s.worst_acc), (0.9, 0.8));
        assert_eq!(collect_summary(&[]), Err(SimError::EmptySeries));
    }

    #[test]
    fn two_server_ring_charges_both_links() {
        let cfg = SimConfig {
            n_servers: 2,
            n_rounds: 1,
            ..small_cfg()
        };
        let out = run_simulation(&cfg, Strategy::Ring).unwrap();
        let r = &out.rounds[0];
        assert_eq!(r.topology.link_count(), 2);
        assert_eq!(r.e_mt.len(), 2);
    }

    #[test]
    fn first_selector_round_uses_budget() {
        let out = run_simulation(&small_cfg(), Strategy::HatDfed).unwrap();
        for r in &out.rounds {
            assert_eq!(r.topology.link_count(), 6);
        }
        assert!(out.rounds[0].utilities.is_empty());
        assert_eq!(out.rounds[1].utilities.len(), 6);
        assert!(out.audit_violations().is_empty());
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_simulation(&small_cfg(), Strategy::HatDfed).unwrap();
        let b = run_simulation(&small_cfg(), Strategy::HatDfed).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.rounds, b.rounds);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SimConfig { gamma: 0.0, ..small_cfg() };
        assert!(matches!(run_simulation(&cfg, Strategy::Rnd), Err(SimError::Config(_))));
    }
}
