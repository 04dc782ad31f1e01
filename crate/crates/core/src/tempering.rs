//! Parallel tempering with a swap manager.
//!
//! Each replica runs on its own thread and owns its chain state and random
//! stream. Every `swap_interval` steps all replicas hand their state to the
//! manager, which proposes swaps for the adjacent pairs `(0,1), (1,2), …` in
//! one sequential pass using its own stream, then hands the states back.
//! Swap rounds are barriers, so results do not depend on thread scheduling.
//!
//! After `switch_fraction` of the per-replica budget every temperature drops
//! to 1 and the ensemble continues as plain MCMC; only those later steps are
//! retained as posterior samples.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::ChainStore;
use crate::proposals::{mh_accept, propose_lg, propose_rw, AdamMoments, ProposalConfig};
use crate::target::{Evaluation, LogTarget, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    pub temps: Vec<f64>,
}

impl Ladder {
    /// `temps[i] = tmax^(i/(M−1))`, or `[1]` for a single replica.
    pub fn geometric(replicas: usize, tmax: f64) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::invalid("need at least one replica"));
        }
        if !(tmax >= 1.0 && tmax.is_finite()) {
            return Err(Error::invalid(format!("maximum temperature must be >= 1, got {tmax}")));
        }
        if replicas == 1 {
            return Ok(Ladder { temps: vec![1.0] });
        }
        let last = (replicas - 1) as f64;
        let mut temps: Vec<f64> = (0..replicas).map(|i| tmax.powf(i as f64 / last)).collect();
        temps[0] = 1.0;
        temps[replicas - 1] = tmax;
        Ok(Ladder { temps })
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }
}

pub fn build_ladder(replicas: usize, tmax: f64) -> Result<Ladder> {
    Ladder::geometric(replicas, tmax)
}

/// Log swap acceptance `min{0, (1/tᵢ − 1/tⱼ)(ℓⱼ − ℓᵢ)}` for exchanging the
/// states of replicas `i` and `j`. Priors cancel.
pub fn swap_log_prob(log_lik_i: f64, log_lik_j: f64, t_i: f64, t_j: f64) -> f64 {
    let v = (1.0 / t_i - 1.0 / t_j) * (log_lik_j - log_lik_i);
    if v.is_nan() {
        // Equal temperatures with infinite likelihoods: the exchange is neutral.
        return 0.0;
    }
    v.min(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub proposals: u64,
    pub accepted: u64,
    pub gradient_proposals: u64,
    pub gradient_accepted: u64,
    pub swaps_attempted: u64,
    pub swaps_accepted: u64,
}

impl Counters {
    pub fn merge(&mut self, other: &Counters) {
        self.proposals += other.proposals;
        self.accepted += other.accepted;
        self.gradient_proposals += other.gradient_proposals;
        self.gradient_accepted += other.gradient_accepted;
        self.swaps_attempted += other.swaps_attempted;
        self.swaps_accepted += other.swaps_accepted;
    }
}

/// The part of a replica that moves between ladder positions on a swap.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub moments: AdamMoments,
    pub eval: Evaluation,
    /// Gradient at `theta`, kept once computed.
    pub grad: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ReplicaState {
    /// Ladder position.
    pub id: usize,
    pub temperature: f64,
    pub chain: ChainState,
    pub rng: StreamRng,
    pub counters: Counters,
}

impl ReplicaState {
    pub fn new<T: LogTarget + ?Sized>(id: usize, temperature: f64, target: &T, mut rng: StreamRng) -> Result<Self> {
        let theta = target.initial_position(&mut rng);
        let eval = target.evaluate(&theta)?;
        Ok(ReplicaState {
            id,
            temperature,
            chain: ChainState {
                moments: AdamMoments::new(theta.len()),
                theta,
                eval,
                grad: None,
            },
            rng,
            counters: Counters::default(),
        })
    }

    /// One proposal plus accept/reject at the current temperature.
    pub fn step<T: LogTarget + ?Sized>(&mut self, target: &T, cfg: &ProposalConfig) -> Result<bool> {
        let use_gradient = self.rng.random::<f64>() < cfg.gradient_rate();
        let chain = &mut self.chain;
        self.counters.proposals += 1;
        let accepted = if use_gradient {
            self.counters.gradient_proposals += 1;
            let grad = match chain.grad.take() {
                Some(g) => g,
                None => target.evaluate_with_gradient(&chain.theta)?.1,
            };
            let lp = propose_lg(
                &chain.theta,
                &grad,
                |t| target.evaluate_with_gradient(t),
                cfg,
                &chain.moments,
                &mut self.rng,
            )?;
            chain.moments = lp.moments;
            let star = lp.at_proposal;
            let accept = mh_accept(
                star.log_lik,
                chain.eval.log_lik,
                star.log_prior,
                chain.eval.log_prior,
                lp.proposal.log_q_ratio(),
                self.temperature,
                &mut self.rng,
            )?;
            if accept {
                chain.theta = lp.proposal.theta;
                chain.eval = star;
                chain.grad = Some(lp.grad_at_proposal);
                self.counters.gradient_accepted += 1;
            } else {
                chain.grad = Some(grad);
            }
            accept
        } else {
            let p = propose_rw(&chain.theta, cfg, &mut self.rng);
            let star = target.evaluate(&p.theta)?;
            let accept = mh_accept(
                star.log_lik,
                chain.eval.log_lik,
                star.log_prior,
                chain.eval.log_prior,
                p.log_q_ratio(),
                self.temperature,
                &mut self.rng,
            )?;
            if accept {
                chain.theta = p.theta;
                chain.eval = star;
                chain.grad = None;
            }
            accept
        };
        if accepted {
            self.counters.accepted += 1;
        }
        Ok(accepted)
    }
}

/// Proposes exchanging the chain states of two adjacent replicas. The
/// temperatures stay with the ladder positions.
pub fn swap_event(a: &mut ReplicaState, b: &mut ReplicaState, rng: &mut impl Rng) -> bool {
    let log_beta = swap_log_prob(a.chain.eval.log_lik, b.chain.eval.log_lik, a.temperature, b.temperature);
    let u: f64 = rng.random();
    let accept = u.ln() < log_beta;
    a.counters.swaps_attempted += 1;
    b.counters.swaps_attempted += 1;
    if accept {
        std::mem::swap(&mut a.chain, &mut b.chain);
        a.counters.swaps_accepted += 1;
        b.counters.swaps_accepted += 1;
    }
    accept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub replicas: usize,
    /// Total sample budget, split evenly across replicas.
    pub max_samples: usize,
    pub tmax: f64,
    pub swap_interval: usize,
    pub switch_fraction: f64,
    pub proposal: ProposalConfig,
    pub seed: u64,
    /// Keep every `thin`-th post-switch parameter vector.
    pub thin: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::invalid("replicas must be at least 1"));
        }
        if self.swap_interval == 0 {
            return Err(Error::invalid("swap interval must be at least 1"));
        }
        if !(self.switch_fraction > 0.0 && self.switch_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "switch fraction must lie in (0, 1), got {}",
                self.switch_fraction
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thinning stride must be at least 1"));
        }
        Ladder::geometric(self.replicas, self.tmax)?;
        self.proposal.validate()
    }

    pub fn per_replica_budget(&self) -> usize {
        self.max_samples / self.replicas
    }

    /// Samples lost to the floor division of the budget.
    pub fn dropped_samples(&self) -> usize {
        self.max_samples - self.per_replica_budget() * self.replicas
    }

    /// First step index that runs untempered.
    pub fn switch_index(&self) -> usize {
        fraction_index(self.per_replica_budget(), self.switch_fraction)
    }

    /// Number of barrier rounds each replica takes part in.
    pub fn swap_rounds(&self) -> usize {
        let budget = self.per_replica_budget();
        if self.replicas < 2 || budget == 0 {
            0
        } else {
            (budget - 1) / self.swap_interval
        }
    }
}

/// `⌈fraction · n⌉`, tolerant of representation error in `fraction`.
pub fn fraction_index(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Independent stream `stream` derived from the master seed. Stream 0 is the
/// swap manager; replica `i` uses stream `i + 1`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The worker side of the swap protocol.
pub struct ManagerLink {
    pub to_manager: Sender<ReplicaState>,
    pub from_manager: Receiver<ReplicaState>,
}

/// Runs one replica for its whole budget. `link` is `None` for a single
/// chain; otherwise the replica blocks at every swap round until the manager
/// returns its (possibly exchanged) state.
pub fn run_replica<T: LogTarget + ?Sized>(
    mut state: ReplicaState,
    target: &T,
    config: &RunConfig,
    link: Option<&ManagerLink>,
) -> Result<(ChainStore, ReplicaState)> {
    let budget = config.per_replica_budget();
    let switch = config.switch_index();
    let mut store = ChainStore::new(state.id, budget, switch, config.thin);
    for step in 0..budget {
        if step == switch {
            state.temperature = 1.0;
        }
        state.step(target, &config.proposal)?;
        store.record(step, &state.chain.theta, &state.chain.eval);
        let barrier = link.filter(|_| (step + 1) % config.swap_interval == 0 && step + 1 < budget);
        if let Some(link) = barrier {
            link.to_manager
                .send(state)
                .map_err(|_| Error::Coordination("manager hung up".into()))?;
            state = link
                .from_manager
                .recv()
                .map_err(|_| Error::Coordination("manager hung up".into()))?;
        }
    }
    store.counters = state.counters;
    Ok((store, state))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapStats {
    pub rounds: u64,
    pub attempted: u64,
    pub accepted: u64,
}

struct ManagerEnd {
    from_worker: Receiver<ReplicaState>,
    to_worker: Sender<ReplicaState>,
}

fn manage(ends: &[ManagerEnd], rounds: usize, mut rng: StreamRng) -> Result<SwapStats> {
    let mut stats = SwapStats::default();
    for round in 0..rounds {
        let mut states = Vec::with_capacity(ends.len());
        for (i, end) in ends.iter().enumerate() {
            let s = end
                .from_worker
                .recv()
                .map_err(|_| Error::Coordination(format!("replica {i} stopped before swap round {round}")))?;
            states.push(s);
        }
        for i in 0..states.len() - 1 {
            let (lo, hi) = states.split_at_mut(i + 1);
            stats.attempted += 1;
            if swap_event(&mut lo[i], &mut hi[0], &mut rng) {
                stats.accepted += 1;
            }
        }
        for (end, s) in ends.iter().zip(states) {
            end.to_worker
                .send(s)
                .map_err(|_| Error::Coordination("replica hung up".into()))?;
        }
        stats.rounds += 1;
    }
    Ok(stats)
}

/// Result of a full tempered run.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub ladder: Ladder,
    /// One store per ladder position.
    pub chains: Vec<ChainStore>,
    pub swaps: SwapStats,
    pub final_states: Vec<ReplicaState>,
}

impl EnsembleRun {
    pub fn counters(&self) -> Counters {
        let mut total = Counters::default();
        for c in &self.chains {
            total.merge(&c.counters);
        }
        total
    }

    /// Percentage of proposals accepted across all replicas and steps.
    pub fn acceptance_pct(&self) -> f64 {
        let c = self.counters();
        if c.proposals == 0 {
            0.0
        } else {
            100.0 * c.accepted as f64 / c.proposals as f64
        }
    }

    /// Accepted swaps over attempted swaps, in percent.
    pub fn swap_pct_of_attempts(&self) -> f64 {
        if self.swaps.attempted == 0 {
            0.0
        } else {
            100.0 * self.swaps.accepted as f64 / self.swaps.attempted as f64
        }
    }

    /// Accepted swaps over total samples, in percent.
    pub fn swap_pct_of_samples(&self) -> f64 {
        let samples: usize = self.chains.iter().map(|c| c.budget).sum();
        if samples == 0 {
            0.0
        } else {
            100.0 * self.swaps.accepted as f64 / samples as f64
        }
    }
}

/// Launches one worker per replica plus the swap manager and waits for all
/// budgets to be exhausted.
pub fn coordinate<T: LogTarget + ?Sized>(target: &T, config: &RunConfig) -> Result<EnsembleRun> {
    config.validate()?;
    let ladder = Ladder::geometric(config.replicas, config.tmax)?;
    let mut states = Vec::with_capacity(ladder.len());
    for (i, &t) in ladder.temps.iter().enumerate() {
        states.push(ReplicaState::new(i, t, target, stream_rng(config.seed, i as u64 + 1))?);
    }
    let manager_rng = stream_rng(config.seed, 0);

    if states.len() == 1 {
        let state = states.pop().expect("one replica");
        let (store, state) = run_replica(state, target, config, None)?;
        return Ok(EnsembleRun {
            ladder,
            chains: vec![store],
            swaps: SwapStats::default(),
            final_states: vec![state],
        });
    }

    let mut links = Vec::with_capacity(states.len());
    let mut ends = Vec::with_capacity(states.len());
    for _ in 0..states.len() {
        let (to_manager, from_worker) = channel();
        let (to_worker, from_manager) = channel();
        links.push(ManagerLink {
            to_manager,
            from_manager,
        });
        ends.push(ManagerEnd { from_worker, to_worker });
    }
    let rounds = config.swap_rounds();

    let (results, swaps) = thread::scope(|scope| {
        let workers: Vec<_> = states
            .into_iter()
            .zip(links)
            .map(|(state, link)| scope.spawn(move || run_replica(state, target, config, Some(&link))))
            .collect();
        let swaps = manage(&ends, rounds, manager_rng);
        drop(ends);
        let results: Vec<Result<(ChainStore, ReplicaState)>> = workers
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Coordination(format!("replica {i} panicked"))))
            })
            .collect();
        (results, swaps)
    });

    // Report the root cause rather than the hang-ups it triggered.
    let mut first_coordination = None;
    let mut chains = Vec::with_capacity(results.len());
    let mut final_states = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok((store, state)) => {
                chains.push(store);
                final_states.push(state);
            }
            Err(Error::Coordination(msg)) => {
                first_coordination.get_or_insert(Error::Coordination(msg));
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(e) = first_coordination {
        return Err(e);
    }
    let swaps = swaps?;
    Ok(EnsembleRun {
        ladder,
        chains,
        swaps,
        final_states,
    })
}
