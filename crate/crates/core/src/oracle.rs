//! Finite-MDP tools: value iteration, potential shaping, the invariance check
//! and the baseline-centering ranking diagnostic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Greedy-set membership tolerance.
pub const TIE_TOL: f64 = 1e-9;

/// Finite MDP with dense `P[s][a][s']` and `R[s][a][s']` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>, r: Vec<f64>, gamma: f64) -> Result<Self> {
        let m = TabularMdp {
            n_states,
            n_actions,
            p,
            r,
            gamma,
        };
        m.validate()?;
        Ok(m)
    }

    #[inline]
    pub fn idx(&self, s: usize, a: usize, s2: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + s2
    }

    pub fn prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.p[self.idx(s, a, s2)]
    }

    pub fn reward(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.r[self.idx(s, a, s2)]
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.n_states * self.n_actions * self.n_states;
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::Mdp("MDP needs at least one state and one action".into()));
        }
        if self.p.len() != len || self.r.len() != len {
            return Err(Error::Mdp(format!(
                "tensor sizes {} / {} do not match {} states x {} actions",
                self.p.len(),
                self.r.len(),
                self.n_states,
                self.n_actions
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Mdp(format!("discount {} outside (0, 1)", self.gamma)));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = &self.p[self.idx(s, a, 0)..self.idx(s, a, 0) + self.n_states];
                if row.iter().any(|&q| !(q >= 0.0)) {
                    return Err(Error::Mdp(format!("negative probability in P[{s}][{a}]")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Mdp(format!("P[{s}][{a}] sums to {total}")));
                }
            }
        }
        if self.r.iter().any(|x| !x.is_finite()) {
            return Err(Error::Mdp("non-finite reward".into()));
        }
        Ok(())
    }

    /// Expected one-step reward of `(s, a)`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        (0..self.n_states).map(|s2| self.prob(s, a, s2) * self.reward(s, a, s2)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialVector(pub Vec<f64>);

impl PotentialVector {
    pub fn validate(&self, n_states: usize) -> Result<()> {
        if self.0.len() != n_states {
            return Err(Error::Mdp(format!(
                "potential has {} entries, MDP has {n_states} states",
                self.0.len()
            )));
        }
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Mdp("potential must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueIterationResult {
    /// `Q[s * n_actions + a]`.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Greedy action set per state.
    pub policy: Vec<Vec<usize>>,
    /// Sup-norm change of `V` after each sweep.
    pub residuals: Vec<f64>,
}

impl ValueIterationResult {
    pub fn q(&self, n_actions: usize, s: usize, a: usize) -> f64 {
        self.q[s * n_actions + a]
    }
}

fn greedy_sets(q: &[f64], n_states: usize, n_actions: usize) -> Vec<Vec<usize>> {
    (0..n_states)
        .map(|s| {
            let row = &q[s * n_actions..(s + 1) * n_actions];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (0..n_actions).filter(|&a| row[a] >= best - TIE_TOL).collect()
        })
        .collect()
}

fn bellman_q(m: &TabularMdp, v: &[f64], q: &mut [f64]) {
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            let base = m.idx(s, a, 0);
            let mut acc = 0.0;
            for s2 in 0..m.n_states {
                acc += m.p[base + s2] * (m.r[base + s2] + m.gamma * v[s2]);
            }
            q[s * m.n_actions + a] = acc;
        }
    }
}

/// Iterates the Bellman optimality operator until the sup-norm change drops
/// below `tol * (1 - gamma) / gamma`.
pub fn value_iteration(m: &TabularMdp, tol: f64) -> Result<ValueIterationResult> {
    m.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Mdp("tolerance must be > 0".into()));
    }
    let threshold = tol * (1.0 - m.gamma) / m.gamma;
    let mut v = vec![0.0; m.n_states];
    let mut q = vec![0.0; m.n_states * m.n_actions];
    let mut residuals = Vec::new();
    loop {
        bellman_q(m, &v, &mut q);
        let mut delta: f64 = 0.0;
        for s in 0..m.n_states {
            let best = q[s * m.n_actions..(s + 1) * m.n_actions]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        residuals.push(delta);
        if delta < threshold {
            break;
        }
        if residuals.len() > 1_000_000 {
            return Err(Error::Mdp("value iteration failed to converge".into()));
        }
    }
    // One more evaluation so Q is consistent with the final V.
    bellman_q(m, &v, &mut q);
    let policy = greedy_sets(&q, m.n_states, m.n_actions);
    Ok(ValueIterationResult { q, v, policy, residuals })
}

/// Adds `gamma * phi[s'] - phi[s]` to every reward entry.
pub fn shape_with_trd(m: &TabularMdp, phi: &PotentialVector) -> Result<TabularMdp> {
    phi.validate(m.n_states)?;
    let mut shaped = m.clone();
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            for s2 in 0..m.n_states {
                let i = m.idx(s, a, s2);
                shaped.r[i] += m.gamma * phi.0[s2] - phi.0[s];
            }
        }
    }
    Ok(shaped)
}

/// Adds an arbitrary state-action bonus `b[s * n_actions + a]` to rewards.
pub fn shape_with_bonus(m: &TabularMdp, bonus: &[f64]) -> Result<TabularMdp> {
    if bonus.len() != m.n_states * m.n_actions {
        return Err(Error::Mdp("bonus dimension mismatch".into()));
    }
    let mut shaped = m.clone();
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            for s2 in 0..m.n_states {
                let i = m.idx(s, a, s2);
                shaped.r[i] += bonus[s * m.n_actions + a];
            }
        }
    }
    Ok(shaped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub policy_sets_equal: bool,
    /// `max |Q'(s, a) - (Q(s, a) - phi(s))|`.
    pub max_q_shift_error: f64,
}

pub fn verify_invariance(m: &TabularMdp, phi: &PotentialVector, tol: f64) -> Result<InvarianceReport> {
    let shaped = shape_with_trd(m, phi)?;
    let base = value_iteration(m, tol)?;
    let sh = value_iteration(&shaped, tol)?;
    let mut max_err: f64 = 0.0;
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            let i = s * m.n_actions + a;
            max_err = max_err.max((sh.q[i] - (base.q[i] - phi.0[s])).abs());
        }
    }
    Ok(InvarianceReport {
        policy_sets_equal: base.policy == sh.policy,
        max_q_shift_error: max_err,
    })
}

/// Random MDP: Dirichlet(1) transition rows and Uniform(-1, 1) rewards.
pub fn random_mdp<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<TabularMdp> {
    let len = n_states * n_actions * n_states;
    let mut p = Vec::with_capacity(len);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| rng.sample::<f64, _>(Exp1) + 1e-300).collect();
        let total: f64 = row.iter().sum();
        let mut normalised: Vec<f64> = row.iter().map(|x| x / total).collect();
        // Push the rounding residue onto the largest entry.
        let residue = 1.0 - normalised.iter().sum::<f64>();
        let k = (0..n_states)
            .max_by(|&i, &j| normalised[i].total_cmp(&normalised[j]))
            .unwrap_or(0);
        normalised[k] += residue;
        p.extend(normalised);
    }
    let r = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    TabularMdp::new(n_states, n_actions, p, r, gamma)
}

/// Uniform(0, 1) potential.
pub fn random_potential<R: Rng + ?Sized>(n_states: usize, rng: &mut R) -> PotentialVector {
    PotentialVector((0..n_states).map(|_| rng.random_range(0.0..1.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub attempts: usize,
    pub found: bool,
    pub bonus: Vec<f64>,
    pub original_policy: Vec<Vec<usize>>,
    pub bonus_policy: Vec<Vec<usize>>,
}

/// Three-state deterministic ring: action 0 stays, action 1 advances.
/// Only the step into state 2 pays.
pub fn three_state_mdp(gamma: f64) -> Result<TabularMdp> {
    let (n, k) = (3, 2);
    let mut p = vec![0.0; n * k * n];
    let mut r = vec![0.0; n * k * n];
    for s in 0..n {
        let stay = (s * k) * n + s;
        p[stay] = 1.0;
        let next = (s + 1) % n;
        let adv = (s * k + 1) * n + next;
        p[adv] = 1.0;
        if next == 2 {
            r[adv] = 1.0;
        }
    }
    TabularMdp::new(n, k, p, r, gamma)
}

/// Draws Uniform(-1, 1) state-action bonuses until one changes the greedy
/// policy set of the three-state MDP.
pub fn non_potential_counterexample(seed: u64, max_attempts: usize) -> Result<CounterexampleReport> {
    let m = three_state_mdp(0.9)?;
    let original = value_iteration(&m, 1e-12)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bonus = Vec::new();
    let mut bonus_policy = original.policy.clone();
    for attempt in 1..=max_attempts {
        bonus = (0..m.n_states * m.n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shaped = shape_with_bonus(&m, &bonus)?;
        bonus_policy = value_iteration(&shaped, 1e-12)?.policy;
        if bonus_policy != original.policy {
            return Ok(CounterexampleReport {
                attempts: attempt,
                found: true,
                bonus,
                original_policy: original.policy,
                bonus_policy,
            });
        }
    }
    Ok(CounterexampleReport {
        attempts: max_attempts,
        found: false,
        bonus,
        original_policy: original.policy,
        bonus_policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringReport {
    pub beta: f64,
    pub states_checked: usize,
    pub divergent_states: usize,
    pub diverged: bool,
}

/// Pairwise order signs with a tie band.
fn ranking(values: &[f64]) -> Vec<i8> {
    let mut out = Vec::with_capacity(values.len() * values.len());
    for a in values {
        for b in values {
            let d = a - b;
            out.push(if d > TIE_TOL {
                1
            } else if d < -TIE_TOL {
                -1
            } else {
                0
            });
        }
    }
    out
}

/// Two-step lookahead action values from `s`: the first action, then the
/// best second action. With `centered`, each reward has the running
/// baseline subtracted and the baseline absorbs it before the next step.
fn lookahead_values(m: &TabularMdp, s: usize, rho: f64, beta: f64, centered: bool) -> Vec<f64> {
    (0..m.n_actions)
        .map(|a| {
            let mut total = 0.0;
            for s2 in 0..m.n_states {
                let p = m.prob(s, a, s2);
                if p == 0.0 {
                    continue;
                }
                let r1 = m.reward(s, a, s2);
                let (c1, rho2) = if centered {
                    (r1 - rho, rho + beta * (r1 - rho))
                } else {
                    (r1, rho)
                };
                let mut best2 = f64::NEG_INFINITY;
                for a2 in 0..m.n_actions {
                    let mut v2 = 0.0;
                    for s3 in 0..m.n_states {
                        let r2 = m.reward(s2, a2, s3);
                        v2 += m.prob(s2, a2, s3) * if centered { r2 - rho2 } else { r2 };
                    }
                    best2 = best2.max(v2);
                }
                total += p * (c1 + m.gamma * best2);
            }
            total
        })
        .collect()
}

/// Compares lookahead action rankings under potential-shaped rewards with
/// and without an EMA baseline updated inside the episode. Trajectories
/// start in state 0 and follow uniformly random actions.
pub fn centering_conflict_demo(
    m: &TabularMdp,
    phi: &PotentialVector,
    beta: f64,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<CenteringReport> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Mdp(format!("beta {beta} outside [0, 1]")));
    }
    let shaped = shape_with_trd(m, phi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut divergent = 0;
    for _ in 0..episodes {
        let mut s = 0usize;
        let mut rho = 0.0;
        for _ in 0..horizon {
            let plain = ranking(&lookahead_values(&shaped, s, rho, beta, false));
            let centered = ranking(&lookahead_values(&shaped, s, rho, beta, true));
            checked += 1;
            if plain != centered {
                divergent += 1;
            }
            let a = rng.random_range(0..shaped.n_actions);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut s2 = shaped.n_states - 1;
            for k in 0..shaped.n_states {
                acc += shaped.prob(s, a, k);
                if u < acc {
                    s2 = k;
                    break;
                }
            }
            let r = shaped.reward(s, a, s2);
            rho += beta * (r - rho);
            s = s2;
        }
    }
    Ok(CenteringReport {
        beta,
        states_checked: checked,
        divergent_states: divergent,
        diverged: divergent > 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub instance: usize,
    pub policy_sets_equal: bool,
    pub max_q_shift_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub rows: Vec<SuiteRow>,
    pub max_q_shift_error: f64,
    pub counterexample: CounterexampleReport,
    pub centering: Vec<CenteringReport>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub instances: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub deviation_tol: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            instances: 50,
            n_states: 20,
            n_actions: 4,
            gamma: 0.9,
            deviation_tol: 1e-8,
        }
    }
}

/// Runs the invariance check on seeded random instances, the non-potential
/// counterexample search and the centering diagnostic.
pub fn run_suite(seed: u64, cfg: &SuiteConfig) -> Result<SuiteReport> {
    let rows: Vec<SuiteRow> = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            let m = random_mdp(cfg.n_states, cfg.n_actions, cfg.gamma, &mut rng)?;
            let phi = random_potential(cfg.n_states, &mut rng);
            let rep = verify_invariance(&m, &phi, 1e-12)?;
            Ok(SuiteRow {
                instance: i,
                policy_sets_equal: rep.policy_sets_equal,
                max_q_shift_error: rep.max_q_shift_error,
                passed: rep.policy_sets_equal && rep.max_q_shift_error < cfg.deviation_tol,
            })
        })
        .collect::<Result<_>>()?;
    let max_err = rows.iter().map(|r| r.max_q_shift_error).fold(0.0, f64::max);
    let counterexample = non_potential_counterexample(seed, 10_000)?;
    let demo_mdp = three_state_mdp(0.9)?;
    let demo_phi = PotentialVector(vec![0.0, 0.5, 1.0]);
    let centering = [0.0, 0.01, 1.0]
        .iter()
        .map(|&beta| centering_conflict_demo(&demo_mdp, &demo_phi, beta, 20, 30, seed))
        .collect::<Result<Vec<_>>>()?;
    let passed = rows.iter().all(|r| r.passed) && counterexample.found && !centering[0].diverged;
    Ok(SuiteReport {
        seed,
        rows,
        max_q_shift_error: max_err,
        counterexample,
        centering,
        passed,
    })
}
