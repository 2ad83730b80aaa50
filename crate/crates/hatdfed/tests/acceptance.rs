//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every tolerance is pinned below.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use hatdfed::output::{self, WriteOptions};
use hatdfed::presets::{self, PRESET_NAMES};
use hatdfed::RayonExecutor;
use hatdfed_core::aggregation::{aggregate_models, assign_aggregation_weights};
use hatdfed_core::bandit::{assign_probabilities, dependent_rounding, importance_weighted_estimate};
use hatdfed_core::config::{LinkId, TopologyMatrix};
use hatdfed_core::data::gen_synthetic_dataset;
use hatdfed_core::energy::{joules_to_mj, EnergyLedger};
use hatdfed_core::learner::{ModelParams, ModelShape};
use hatdfed_core::oracles::{
    empirical_regret, knapsack_bruteforce, regret_bound, tuned_eta, GeneratorSpec, SyntheticBanditEnv,
};
use hatdfed_core::rng::{stream, SimRng, Stream};
use hatdfed_core::{run_simulation, run_simulation_with, SimConfig, Strategy};
use rand::Rng;

// 1. estimator
const EST_U: [f64; 3] = [0.1, 0.5, 0.9];
const EST_P: [f64; 3] = [0.2, 0.5, 1.0];
const EST_TRIALS: usize = 50_000;
const EST_SE: f64 = 3.0;
const EST_EXACT_TOL: f64 = 1e-12;
const EST_LIMIT: Duration = Duration::from_secs(5);
// 2. dependent rounding
const ROUND_TRIALS: usize = 100_000;
const MARGINAL_TOL: f64 = 0.005;
const ROUND_LIMIT: Duration = Duration::from_secs(30);
// 3. regret
const REGRET_N: f64 = 5.0;
const REGRET_LINKS: usize = 20;
const REGRET_M: usize = 6;
const REGRET_K: usize = 1000;
const REGRET_SEEDS: u64 = 20;
// 4. capped assignment
const ASSIGN_INSTANCES: usize = 1000;
const ASSIGN_MAX_N: usize = 50;
const SUM_TOL: f64 = 1e-9;
const SCALES: [f64; 3] = [1e-6, 1.0, 1e6];
// 5. aggregation
const AGG_INSTANCES: usize = 1000;
const UNIFORM_TOL: f64 = 1e-12;
// 7. gradients
const GRAD_INSTANCES: usize = 10;
const GRAD_COORDS: usize = 50;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
// 8. trends
const TREND_SEEDS: u64 = 5;
const TREND_GAMMAS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
/// A drop in mean accuracy between neighbouring gamma values counts as
/// noise when it is within this many standard errors of the per-seed
/// paired differences.
const TREND_NOISE_SE: f64 = 2.0;
const TREND_LIMIT: Duration = Duration::from_secs(600);
// 10. knapsack
const KNAP_INSTANCES: usize = 100;
const KNAP_MAX_N: usize = 12;
const KNAP_TOL: f64 = 1e-12;

struct Outcome {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn rng(tag: u64) -> SimRng {
    stream(0xacce_97a0 + tag, Stream::Probe, 0, 0)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

fn estimator_unbiased() -> (bool, String) {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst_z: f64 = 0.0;
    let mut ok = true;
    for u in EST_U {
        for p in EST_P {
            let samples: Vec<f64> = (0..EST_TRIALS)
                .map(|_| importance_weighted_estimate(r.random::<f64>() < p, p, u))
                .collect();
            let (m, sd) = mean_sd(&samples);
            if p >= 1.0 {
                // always selected: the estimate is u itself, up to rounding
                ok &= samples.iter().all(|x| (x - u).abs() <= EST_EXACT_TOL);
            } else {
                let z = (m - u).abs() / (sd / (EST_TRIALS as f64).sqrt());
                worst_z = worst_z.max(z);
                ok &= z <= EST_SE;
            }
        }
    }
    let t = start.elapsed();
    ok &= t < EST_LIMIT;
    (ok, format!("worst |mean - u| = {worst_z:.2} SE (limit {EST_SE}), {:.2}s", t.as_secs_f64()))
}

fn rounding_marginals() -> (bool, String) {
    let start = Instant::now();
    let mut r = rng(2);
    let mut vectors: Vec<Vec<f64>> = vec![vec![0.7, 0.3, 0.5, 0.5], vec![0.5, 0.5], vec![0.3; 20]];
    let w: Vec<f64> = (0..12).map(|_| r.random_range(-2.0f64..2.0).exp()).collect();
    vectors.push(assign_probabilities(&w, 5).unwrap());
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut bad_card = 0usize;
    for p in &vectors {
        let m = p.iter().sum::<f64>().round() as usize;
        let mut hits = vec![0usize; p.len()];
        for _ in 0..ROUND_TRIALS {
            let sel = dependent_rounding(p, &mut r).unwrap();
            if sel.len() != m {
                bad_card += 1;
            }
            for a in sel {
                hits[a] += 1;
            }
        }
        for (h, pi) in hits.iter().zip(p) {
            worst = worst.max((*h as f64 / ROUND_TRIALS as f64 - pi).abs());
        }
    }
    ok &= bad_card == 0 && worst <= MARGINAL_TOL;
    let t = start.elapsed();
    ok &= t < ROUND_LIMIT;
    (
        ok,
        format!(
            "{} vectors, wrong cardinality {bad_card}/{}, worst marginal error {worst:.4} (limit {MARGINAL_TOL}), {:.2}s",
            vectors.len(),
            vectors.len() * ROUND_TRIALS,
            t.as_secs_f64()
        ),
    )
}

fn regret_bound_and_sublinearity() -> (bool, String) {
    let eta = tuned_eta(REGRET_N, REGRET_K);
    let bound = regret_bound(REGRET_N, REGRET_K);
    let mut ok = true;
    let mut parts = Vec::new();
    for spec in [GeneratorSpec::FIXED_GAP, GeneratorSpec::DRIFTING, GeneratorSpec::ADVERSARIAL_SWAP] {
        let (mut total, mut first, mut second) = (0.0, 0.0, 0.0);
        for seed in 0..REGRET_SEEDS {
            let env = SyntheticBanditEnv::generate(spec, REGRET_LINKS, REGRET_M, REGRET_K, &mut stream(seed, Stream::Setup, 0, 0)).unwrap();
            let rep = empirical_regret(&env, REGRET_M, eta, &mut stream(seed, Stream::Bandit, 0, 0)).unwrap();
            total += rep.regret;
            first += rep.first_half;
            second += rep.second_half;
        }
        let s = REGRET_SEEDS as f64;
        let (total, first, second) = (total / s, first / s, second / s);
        let sub = second < first;
        ok &= sub;
        if let GeneratorSpec::FixedGap { .. } = spec {
            ok &= total <= bound;
            parts.push(format!("{}: mean R_K {total:.1} <= {bound:.1}", spec.name()));
        }
        parts.push(format!("{}: halves {first:.1} -> {second:.1}", spec.name()));
    }
    (ok, format!("eta {eta:.6}; {}", parts.join("; ")))
}

fn capped_assignment() -> (bool, String) {
    let mut r = rng(4);
    let mut worst_sum: f64 = 0.0;
    let mut range_ok = true;
    let mut scale_ok = true;
    for _ in 0..ASSIGN_INSTANCES {
        let n = r.random_range(1..=ASSIGN_MAX_N);
        let m = r.random_range(1..=n);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(-20.0f64..20.0).exp()).collect();
        let p = assign_probabilities(&w, m).unwrap();
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - m as f64).abs());
        range_ok &= p.iter().all(|x| (0.0..=1.0).contains(x));
        for c in SCALES {
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            let q = assign_probabilities(&scaled, m).unwrap();
            scale_ok &= q.iter().zip(&p).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }
    (
        worst_sum <= SUM_TOL && range_ok && scale_ok,
        format!("worst |sum p - m| = {worst_sum:.1e}, p in [0,1]: {range_ok}, bit-identical under scaling: {scale_ok}"),
    )
}

fn aggregation_simplex() -> (bool, String) {
    let mut r = rng(5);
    let mut worst_sum: f64 = 0.0;
    let mut positive = true;
    let mut inside = true;
    for _ in 0..AGG_INSTANCES {
        let k = r.random_range(1..=6);
        let dim = r.random_range(1..=20);
        let beta = r.random::<f64>();
        let mut l = BTreeMap::new();
        let mut sizes = BTreeMap::new();
        for s in 0..k {
            // probe of 16 samples with losses up to 5
            l.insert(s, 16.0 * r.random_range(0.0..5.0));
            sizes.insert(s, r.random_range(0..=120usize));
        }
        let q = assign_aggregation_weights(&l, &sizes, beta).unwrap();
        worst_sum = worst_sum.max((q.values().sum::<f64>() - 1.0).abs());
        positive &= q.values().all(|x| *x > 0.0);
        let models: Vec<ModelParams> = (0..k)
            .map(|_| ModelParams::from_values(ModelShape::new(dim, 0, 1), (0..dim + 1).map(|_| r.random_range(-10.0..10.0)).collect()).unwrap())
            .collect();
        let weighted: Vec<(&ModelParams, f64)> = models.iter().zip(q.values()).map(|(m, w)| (m, *w)).collect();
        let agg = aggregate_models(&weighted).unwrap();
        for c in 0..dim + 1 {
            let lo = models.iter().map(|m| m.values()[c]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m.values()[c]).fold(f64::NEG_INFINITY, f64::max);
            inside &= lo <= agg.values()[c] && agg.values()[c] <= hi;
        }
    }
    let mut worst_uniform: f64 = 0.0;
    for count in 1..=12 {
        let l: BTreeMap<usize, f64> = (0..count).map(|s| (s, 7.5)).collect();
        let sizes: BTreeMap<usize, usize> = (0..count).map(|s| (s, 60)).collect();
        for beta in [0.0, 0.4, 1.0] {
            let q = assign_aggregation_weights(&l, &sizes, beta).unwrap();
            for w in q.values() {
                worst_uniform = worst_uniform.max((w - 1.0 / count as f64).abs());
            }
        }
    }
    (
        worst_sum <= SUM_TOL && positive && inside && worst_uniform <= UNIFORM_TOL,
        format!("worst |sum q - 1| = {worst_sum:.1e}, q > 0: {positive}, within envelope: {inside}, uniform error {worst_uniform:.1e}"),
    )
}

fn energy_ledger() -> (bool, String) {
    // Hand-computed: round 1 = 1 + 2 + 3 + 4 + 5 = 15,
    // round 2 = 0.5 + 0.25 + 0.125 + 1 + 6 + 5 = 12.875.
    let (a, b) = (LinkId::new(1, 0), LinkId::new(0, 1));
    let mut ledger = EnergyLedger::new(2);
    ledger.open_round(1);
    ledger.record_server(1, 0, 1.0, 3.0).unwrap();
    ledger.record_server(1, 1, 2.0, 4.0).unwrap();
    ledger.record_link(1, a, 5.0).unwrap();
    let r1 = ledger.round_total(1, &TopologyMatrix::from_links(2, &[a])).unwrap();
    ledger.open_round(2);
    ledger.record_server(2, 0, 0.5, 0.125).unwrap();
    ledger.record_server(2, 1, 0.25, 1.0).unwrap();
    ledger.record_link(2, b, 6.0).unwrap();
    ledger.record_link(2, a, 5.0).unwrap();
    let r2 = ledger.round_total(2, &TopologyMatrix::from_links(2, &[a, b])).unwrap();
    let hand = r1 == 15.0 && r2 == 12.875 && ledger.tot_cost() == 27.875 && ledger.mt_cost() == 16.0;

    let cfg = presets::preset("table1-desk").unwrap();
    let mut conserved = true;
    let mut mt_le_tot = true;
    let mut worst_rel: f64 = 0.0;
    for s in Strategy::ALL {
        let out = run_simulation(&cfg, s).unwrap();
        let l = &out.ledger;
        conserved &= l.resummed_total() == l.tot_cost() && out.summary.tot_cost_mj == joules_to_mj(l.tot_cost());
        let mut tot = 0.0;
        let mut mt = 0.0;
        for r in &out.rounds {
            let dt: f64 = r.e_dt.iter().sum();
            let cp: f64 = r.e_cp.iter().sum();
            let m: f64 = r.topology.links().iter().map(|link| r.e_mt.iter().find(|(x, _)| x == link).unwrap().1).sum();
            tot += dt + cp + m;
            mt += m;
            mt_le_tot &= mt <= tot;
        }
        worst_rel = worst_rel.max(((tot - l.tot_cost()) / tot).abs());
        mt_le_tot &= out.summary.mt_cost_mj <= out.summary.tot_cost_mj;
    }
    (
        hand && conserved && mt_le_tot && worst_rel <= 1e-12,
        format!("hand scenario exact: {hand}, ledger re-sum exact: {conserved}, independent re-sum rel. error {worst_rel:.1e}, mt <= tot: {mt_le_tot}"),
    )
}

fn gradients() -> (bool, String) {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for i in 0..GRAD_INSTANCES {
        let classes = r.random_range(2..=6);
        let dim = r.random_range(2..=10);
        let hidden = if i % 2 == 0 { 0 } else { r.random_range(2..=8) };
        let ds = gen_synthetic_dataset(classes, dim, 10, &mut r);
        let idx: Vec<usize> = (0..ds.len()).collect();
        let params = ModelParams::xavier(ModelShape::new(dim, hidden, classes), &mut r);
        let (_, analytic) = params.loss_and_grad(&ds, &idx);
        let n = params.values().len();
        for _ in 0..GRAD_COORDS {
            let c = r.random_range(0..n);
            let mut probe = params.clone();
            probe.values_mut()[c] += GRAD_EPS;
            let up = probe.mean_loss(&ds, &idx);
            probe.values_mut()[c] -= 2.0 * GRAD_EPS;
            let down = probe.mean_loss(&ds, &idx);
            let numeric = (up - down) / (2.0 * GRAD_EPS);
            let denom = numeric.abs().max(analytic[c].abs()).max(1e-8);
            worst = worst.max((numeric - analytic[c]).abs() / denom);
        }
    }
    (worst <= GRAD_TOL, format!("worst relative error {worst:.2e} (limit {GRAD_TOL:e})"))
}

fn trends() -> (bool, String) {
    let start = Instant::now();
    let base = presets::preset("table1-desk").unwrap();
    let runs = |strategy: Strategy, gamma: f64| -> Vec<(f64, f64, f64)> {
        (1..=TREND_SEEDS)
            .map(|seed| {
                let cfg = SimConfig { seed, gamma, ..base.clone() };
                let s = run_simulation(&cfg, strategy).unwrap().summary;
                (s.avg_acc, s.mt_cost_mj, s.tot_cost_mj)
            })
            .collect()
    };
    let mean = |xs: &[(f64, f64, f64)], f: fn(&(f64, f64, f64)) -> f64| xs.iter().map(f).sum::<f64>() / xs.len() as f64;
    let hat = runs(Strategy::HatDfed, base.gamma);
    let rnd = runs(Strategy::Rnd, base.gamma);
    let (hat_acc, rnd_acc) = (mean(&hat, |r| r.0), mean(&rnd, |r| r.0));
    let (hat_mt, rnd_mt) = (mean(&hat, |r| r.1), mean(&rnd, |r| r.1));
    let a = hat_acc >= rnd_acc;
    let b = hat_mt <= rnd_mt;

    let sweep: Vec<Vec<(f64, f64, f64)>> = TREND_GAMMAS.iter().map(|&g| runs(Strategy::HatDfed, g)).collect();
    let mut acc_ok = true;
    let mut cost_ok = true;
    let mut steps = Vec::new();
    for w in sweep.windows(2) {
        let diffs: Vec<f64> = w[1].iter().zip(&w[0]).map(|(x, y)| x.0 - y.0).collect();
        let (d, sd) = mean_sd(&diffs);
        let tol = TREND_NOISE_SE * sd / (diffs.len() as f64).sqrt();
        acc_ok &= d >= -tol;
        cost_ok &= mean(&w[1], |r| r.2) > mean(&w[0], |r| r.2);
        steps.push(format!("{d:+.4}(+-{tol:.4})"));
    }
    let costs: Vec<String> = sweep.iter().map(|s| format!("{:.3}", mean(s, |r| r.2))).collect();
    let t = start.elapsed();
    let ok = a && b && acc_ok && cost_ok && t < TREND_LIMIT;
    (
        ok,
        format!(
            "(a) acc hat {hat_acc:.4} vs rnd {rnd_acc:.4}: {a}; (b) mt hat {hat_mt:.3} vs rnd {rnd_mt:.3} MJ: {b}; \
             (c) acc steps {}: {acc_ok}, tot MJ {}: {cost_ok}; {:.1}s",
            steps.join(" "),
            costs.join(" < "),
            t.as_secs_f64()
        ),
    )
}

fn files_equal(a: &Path, b: &Path) -> bool {
    let names = |d: &Path| -> Vec<_> {
        let mut v: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    let (na, nb) = (names(a), names(b));
    na == nb && na.iter().all(|n| fs::read(a.join(n)).unwrap() == fs::read(b.join(n)).unwrap())
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let opts = WriteOptions {
        aggregation_debug: true,
        chart: true,
    };
    let mut compared = 0;
    let mut ok = true;
    for name in PRESET_NAMES {
        let cfg = presets::preset(name).unwrap();
        for s in Strategy::ALL {
            let dirs: Vec<_> = (0..3).map(|i| tmp.path().join(format!("{name}-{s}-{i}"))).collect();
            let first = run_simulation(&cfg, s).unwrap();
            let second = run_simulation(&cfg, s).unwrap();
            let threaded = run_simulation_with(&cfg, s, &RayonExecutor).unwrap();
            for (dir, out) in dirs.iter().zip([&first, &second, &threaded]) {
                output::write_run(dir, s.name(), &cfg, out, opts).unwrap();
            }
            ok &= files_equal(&dirs[0], &dirs[1]) && files_equal(&dirs[0], &dirs[2]);
            compared += 1;
        }
    }
    (ok, format!("{compared} preset/strategy pairs, repeated and thread-pool runs byte-identical: {ok}"))
}

fn knapsack_agreement() -> (bool, String) {
    let mut r = rng(10);
    let mut agree = 0;
    for _ in 0..KNAP_INSTANCES {
        let n = r.random_range(1..=KNAP_MAX_N);
        let m = r.random_range(0..=n);
        let values: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let (subset, total) = knapsack_bruteforce(&values, m).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| values[*b].total_cmp(&values[*a]));
        let mut top: Vec<usize> = order[..m].to_vec();
        top.sort();
        let top_total: f64 = top.iter().map(|i| values[*i]).sum();
        if subset == top && (total - top_total).abs() <= KNAP_TOL {
            agree += 1;
        }
    }
    (agree == KNAP_INSTANCES, format!("{agree}/{KNAP_INSTANCES} instances agree with top-m"))
}

fn main() {
    let criteria: [(u8, &'static str, fn() -> (bool, String)); 10] = [
        (1, "estimator unbiasedness", estimator_unbiased),
        (2, "dependent rounding marginals and cardinality", rounding_marginals),
        (3, "regret bound and sublinearity", regret_bound_and_sublinearity),
        (4, "capped probability assignment", capped_assignment),
        (5, "aggregation simplex and envelope", aggregation_simplex),
        (6, "energy ledger", energy_ledger),
        (7, "gradient correctness", gradients),
        (8, "trend reproduction", trends),
        (9, "determinism", determinism),
        (10, "knapsack oracle agreement", knapsack_agreement),
    ];
    let mut outcomes = Vec::new();
    for (id, title, f) in criteria {
        let start = Instant::now();
        let (pass, detail) = f();
        let o = Outcome {
            id,
            title,
            pass,
            detail,
            elapsed: start.elapsed(),
        };
        println!(
            "{} criterion {:>2} {}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail,
            o.elapsed.as_secs_f64()
        );
        outcomes.push(o);
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("acceptance: {}/{} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
