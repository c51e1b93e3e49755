use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite SSDP over joint states.
///
/// Each joint state carries one value per named component. The decision
/// maker sees only the `observed` components, so a policy is a map from
/// observed tuples to actions. Folding in another component (see
/// [`augment`]) refines that map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSsdp {
    pub horizon: usize,
    /// Continuous value of each action level, ascending.
    pub action_values: Vec<f64>,
    pub component_names: Vec<String>,
    /// `labels[s][c]`: value of component `c` in joint state `s`.
    pub labels: Vec<Vec<f64>>,
    pub observed: Vec<usize>,
    /// Row `s * n_actions + a`: `(next state, probability)`.
    pub kernel: Vec<Vec<(usize, f64)>>,
    /// Entry `s * n_actions + a`.
    pub reward: Vec<f64>,
    pub initial: Vec<(usize, f64)>,
}

/// An SSDP with one more component folded into the observation.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSsdp {
    pub base: DiscreteSsdp,
    pub folded: Vec<usize>,
    pub problem: DiscreteSsdp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    /// Backward induction on a fully observed problem.
    BackwardInduction,
    /// Backward induction over observations when hidden components never
    /// influence observed transitions or rewards.
    QuotientInduction,
    /// Exact search over observation-measurable deterministic policies.
    MemorylessSearch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub j_star: f64,
    /// `values[k][s]` under the returned policy, `k in 0..=horizon`.
    pub values: Vec<Vec<f64>>,
    /// `policy[k][o]` for observation id `o`.
    pub policy: Vec<Vec<usize>>,
    pub method: SolveMethod,
}

/// Upper bound on policy-table evaluations in the memoryless search.
pub const SEARCH_LIMIT: u64 = 5_000_000;

const NORMALIZATION_TOL: f64 = 1e-9;

impl DiscreteSsdp {
    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_values.len()
    }

    pub fn row(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.kernel[s * self.n_actions() + a]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions() + a]
    }

    pub fn component(&self, name: &str) -> Option<usize> {
        self.component_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, na) = (self.n_states(), self.n_actions());
        if self.horizon == 0 || n == 0 || na == 0 {
            return Err(Error::Config("SSDP needs a horizon, states and actions".into()));
        }
        if self.kernel.len() != n * na || self.reward.len() != n * na {
            return Err(Error::Dimension {
                what: "kernel rows",
                expected: n * na,
                got: self.kernel.len().min(self.reward.len()),
            });
        }
        if self.labels.iter().any(|l| l.len() != self.component_names.len()) {
            return Err(Error::Config("every label needs one value per component".into()));
        }
        if self.observed.iter().any(|&c| c >= self.component_names.len()) {
            return Err(Error::Config("observed component out of range".into()));
        }
        for s in 0..n {
            for a in 0..na {
                let row = self.row(s, a);
                if row.iter().any(|&(t, p)| t >= n || !(p >= 0.0)) {
                    return Err(Error::InvalidInput(format!("bad kernel entry at state {s}, action {a}")));
                }
                let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                if (sum - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::KernelNotNormalized { state: s, action: a, sum });
                }
            }
        }
        let init: f64 = self.initial.iter().map(|&(_, p)| p).sum();
        if (init - 1.0).abs() > NORMALIZATION_TOL || self.initial.iter().any(|&(s, _)| s >= n) {
            return Err(Error::InvalidInput(format!("initial distribution sums to {init}")));
        }
        Ok(())
    }

    /// Observation id of every joint state, ids assigned in state order.
    pub fn observation_ids(&self) -> (Vec<usize>, usize) {
        let mut ids: HashMap<Vec<u64>, usize> = HashMap::new();
        let obs = self
            .labels
            .iter()
            .map(|l| {
                let key: Vec<u64> = self.observed.iter().map(|&c| l[c].to_bits()).collect();
                let next = ids.len();
                *ids.entry(key).or_insert(next)
            })
            .collect();
        (obs, ids.len())
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observation_ids().1 == self.n_states()
    }

    /// Optimal return and policy for the decision maker's information.
    pub fn solve(&self) -> Result<Solution> {
        self.validate()?;
        if self.is_fully_observed() {
            Ok(self.backward_induction())
        } else if let Some(lumped) = self.lumped() {
            self.quotient_induction(&lumped)
        } else {
            self.memoryless_search()
        }
    }

    fn q(&self, next: &[f64], s: usize, a: usize) -> f64 {
        self.r(s, a) + self.row(s, a).iter().map(|&(t, p)| p * next[t]).sum::<f64>()
    }

    fn initial_value(&self, v0: &[f64]) -> f64 {
        self.initial.iter().map(|&(s, p)| p * v0[s]).sum()
    }

    /// Optimal values when every component is visible.
    pub fn backward_induction(&self) -> Solution {
        let (n, na, k_max) = (self.n_states(), self.n_actions(), self.horizon);
        let (obs, n_obs) = self.observation_ids();
        let mut values = vec![vec![0.0; n]; k_max + 1];
        let mut policy = vec![vec![0usize; n_obs]; k_max];
        for k in (0..k_max).rev() {
            let (head, tail) = values.split_at_mut(k + 1);
            let next = &tail[0];
            for s in 0..n {
                let mut best = (f64::NEG_INFINITY, 0);
                for a in 0..na {
                    let q = self.q(next, s, a);
                    if q > best.0 {
                        best = (q, a);
                    }
                }
                head[k][s] = best.0;
                policy[k][obs[s]] = best.1;
            }
        }
        Solution {
            j_star: self.initial_value(&values[0]),
            values,
            policy,
            method: SolveMethod::BackwardInduction,
        }
    }

    /// Per-observation reward and next-observation rows, when every joint
    /// state of an observation shares them.
    fn lumped(&self) -> Option<Vec<Vec<(f64, Vec<(usize, f64)>)>>> {
        let (obs, n_obs) = self.observation_ids();
        let na = self.n_actions();
        let mut rows: Vec<Option<Vec<(f64, Vec<(usize, f64)>)>>> = vec![None; n_obs];
        for s in self.decision_states() {
            let mine: Vec<(f64, Vec<(usize, f64)>)> = (0..na)
                .map(|a| {
                    let mut next: Vec<(usize, f64)> = Vec::new();
                    for &(t, p) in self.row(s, a) {
                        match next.iter_mut().find(|(o, _)| *o == obs[t]) {
                            Some(e) => e.1 += p,
                            None => next.push((obs[t], p)),
                        }
                    }
                    next.sort_by_key(|&(o, _)| o);
                    (self.r(s, a), next)
                })
                .collect();
            match &rows[obs[s]] {
                None => rows[obs[s]] = Some(mine),
                Some(existing) => {
                    let same = existing.iter().zip(&mine).all(|((r1, n1), (r2, n2))| {
                        (r1 - r2).abs() <= 1e-12
                            && n1.len() == n2.len()
                            && n1.iter().zip(n2).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= 1e-12)
                    });
                    if !same {
                        return None;
                    }
                }
            }
        }
        // Observations never decided on get inert rows.
        Some(
            rows.into_iter()
                .enumerate()
                .map(|(o, r)| r.unwrap_or_else(|| vec![(0.0, vec![(o, 1.0)]); na]))
                .collect(),
        )
    }

    /// Joint states reachable at some step `k < horizon` under any actions.
    pub fn decision_states(&self) -> Vec<usize> {
        let n = self.n_states();
        let mut seen = vec![false; n];
        let mut frontier: Vec<usize> = self.initial.iter().map(|&(s, _)| s).collect();
        for &s in &frontier {
            seen[s] = true;
        }
        for _ in 1..self.horizon {
            let mut next = Vec::new();
            for &s in &frontier {
                for a in 0..self.n_actions() {
                    for &(t, p) in self.row(s, a) {
                        if p > 0.0 && !seen[t] {
                            seen[t] = true;
                            next.push(t);
                        }
                    }
                }
            }
            frontier = next;
        }
        (0..n).filter(|&s| seen[s]).collect()
    }

    fn quotient_induction(&self, lumped: &[Vec<(f64, Vec<(usize, f64)>)>]) -> Result<Solution> {
        let n_obs = lumped.len();
        let mut v = vec![0.0; n_obs];
        let mut policy = vec![vec![0usize; n_obs]; self.horizon];
        for k in (0..self.horizon).rev() {
            let mut nv = vec![0.0; n_obs];
            for o in 0..n_obs {
                let q: Vec<f64> = lumped[o]
                    .iter()
                    .map(|(r, next)| r + next.iter().map(|&(t, p)| p * v[t]).sum::<f64>())
                    .collect();
                let (a, best) = argmax(&q);
                policy[k][o] = a;
                nv[o] = best;
            }
            v = nv;
        }
        let (j_star, values) = self.evaluate_policy(&policy)?;
        Ok(Solution {
            j_star,
            values,
            policy,
            method: SolveMethod::QuotientInduction,
        })
    }

    /// Values of an observation-measurable policy.
    pub fn evaluate_policy(&self, policy: &[Vec<usize>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (obs, n_obs) = self.observation_ids();
        if policy.len() != self.horizon || policy.iter().any(|p| p.len() != n_obs) {
            return Err(Error::Dimension {
                what: "policy table",
                expected: self.horizon * n_obs,
                got: policy.iter().map(Vec::len).sum(),
            });
        }
        let n = self.n_states();
        let mut values = vec![vec![0.0; n]; self.horizon + 1];
        for k in (0..self.horizon).rev() {
            let (head, tail) = values.split_at_mut(k + 1);
            for s in 0..n {
                head[k][s] = self.q(&tail[0], s, policy[k][obs[s]]);
            }
        }
        Ok((self.initial_value(&values[0]), values))
    }

    /// Probability of every joint state at every step under `policy`.
    pub fn state_distributions(&self, policy: &[Vec<usize>]) -> Vec<Vec<f64>> {
        let (obs, _) = self.observation_ids();
        let n = self.n_states();
        let mut out = Vec::with_capacity(self.horizon);
        let mut d = vec![0.0; n];
        for &(s, p) in &self.initial {
            d[s] += p;
        }
        for k in 0..self.horizon {
            let mut next = vec![0.0; n];
            for s in (0..n).filter(|&s| d[s] > 0.0) {
                for &(t, p) in self.row(s, policy[k][obs[s]]) {
                    next[t] += d[s] * p;
                }
            }
            out.push(std::mem::replace(&mut d, next));
        }
        out
    }

    /// Exact optimum over deterministic policies `a_k = mu_k(observation)`.
    ///
    /// Enumerates the actions of the observations reachable at each step;
    /// the last step is chosen greedily, which is exact given the state
    /// distribution reaching it.
    pub fn memoryless_search(&self) -> Result<Solution> {
        let (obs, n_obs) = self.observation_ids();
        let mut search = Search {
            ssdp: self,
            obs: &obs,
            n_obs,
            work: 0,
        };
        let mut d = vec![0.0; self.n_states()];
        for &(s, p) in &self.initial {
            d[s] += p;
        }
        let support: Vec<(usize, f64)> = d.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, &p)| (s, p)).collect();
        let (_, choices) = search.run(0, &support)?;
        // Unreached observations keep the full-information greedy action.
        let mut policy = self.backward_induction().policy;
        for (k, choice) in choices.into_iter().enumerate() {
            for (o, a) in choice {
                policy[k][o] = a;
            }
        }
        let (j_star, values) = self.evaluate_policy(&policy)?;
        Ok(Solution {
            j_star,
            values,
            policy,
            method: SolveMethod::MemorylessSearch,
        })
    }

    /// Expectimax over the full tree of states and actions, no memoization.
    pub fn brute_force(&self, node_limit: u64) -> Result<f64> {
        fn go(m: &DiscreteSsdp, k: usize, s: usize, nodes: &mut u64, limit: u64) -> Result<f64> {
            *nodes += 1;
            if *nodes > limit {
                return Err(Error::TooLarge(format!("expectimax tree exceeds {limit} nodes")));
            }
            if k == m.horizon {
                return Ok(0.0);
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..m.n_actions() {
                let mut q = m.r(s, a);
                for &(t, p) in m.row(s, a) {
                    q += p * go(m, k + 1, t, nodes, limit)?;
                }
                best = best.max(q);
            }
            Ok(best)
        }
        let mut nodes = 0;
        let mut total = 0.0;
        for &(s, p) in &self.initial {
            total += p * go(self, 0, s, &mut nodes, node_limit)?;
        }
        Ok(total)
    }

    /// Best return over every observation-measurable policy table.
    pub fn brute_force_memoryless(&self, table_limit: u64) -> Result<f64> {
        let (_, n_obs) = self.observation_ids();
        let slots = n_obs * self.horizon;
        let na = self.n_actions();
        let count = (na as f64).powi(slots as i32);
        if count > table_limit as f64 {
            return Err(Error::TooLarge(format!("{count} policy tables")));
        }
        let mut digits = vec![0usize; slots];
        let mut best = f64::NEG_INFINITY;
        loop {
            let policy: Vec<Vec<usize>> = digits.chunks(n_obs).map(<[usize]>::to_vec).collect();
            best = best.max(self.evaluate_policy(&policy)?.0);
            if !odometer(&mut digits, na) {
                break;
            }
        }
        Ok(best)
    }
}

fn odometer(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

struct Search<'a> {
    ssdp: &'a DiscreteSsdp,
    obs: &'a [usize],
    n_obs: usize,
    work: u64,
}

type StepChoice = Vec<(usize, usize)>;

impl Search<'_> {
    fn run(&mut self, k: usize, dist: &[(usize, f64)]) -> Result<(f64, Vec<StepChoice>)> {
        let m = self.ssdp;
        let na = m.n_actions();
        let mut reached: Vec<usize> = dist.iter().map(|&(s, _)| self.obs[s]).collect();
        reached.sort_unstable();
        reached.dedup();
        let mut slot = vec![usize::MAX; self.n_obs];
        for (i, &o) in reached.iter().enumerate() {
            slot[o] = i;
        }
        if k + 1 == m.horizon {
            let mut gain = vec![vec![0.0; na]; reached.len()];
            for &(s, p) in dist {
                for (a, g) in gain[slot[self.obs[s]]].iter_mut().enumerate() {
                    *g += p * m.r(s, a);
                }
            }
            let mut total = 0.0;
            let mut choice = Vec::with_capacity(reached.len());
            for (i, g) in gain.iter().enumerate() {
                let (a, v) = argmax(g);
                total += v;
                choice.push((reached[i], a));
            }
            return Ok((total, vec![choice]));
        }
        let assignments = (na as f64).powi(reached.len() as i32);
        if self.work as f64 + assignments > SEARCH_LIMIT as f64 {
            return Err(Error::TooLarge(format!(
                "memoryless search needs more than {SEARCH_LIMIT} policy evaluations"
            )));
        }
        let mut digits = vec![0usize; reached.len()];
        let mut best: Option<(f64, Vec<StepChoice>)> = None;
        let mut next = vec![0.0; m.n_states()];
        loop {
            self.work += 1;
            let mut immediate = 0.0;
            let mut touched = Vec::new();
            for &(s, p) in dist {
                let a = digits[slot[self.obs[s]]];
                immediate += p * m.r(s, a);
                for &(t, q) in m.row(s, a) {
                    if next[t] == 0.0 {
                        touched.push(t);
                    }
                    next[t] += p * q;
                }
            }
            touched.sort_unstable();
            touched.dedup();
            let child: Vec<(usize, f64)> = touched.iter().map(|&t| (t, next[t])).filter(|&(_, p)| p > 0.0).collect();
            for &t in &touched {
                next[t] = 0.0;
            }
            let (future, mut tail) = self.run(k + 1, &child)?;
            let value = immediate + future;
            if best.as_ref().map_or(true, |(b, _)| value > *b) {
                let choice = reached.iter().zip(&digits).map(|(&o, &a)| (o, a)).collect();
                tail.insert(0, choice);
                best = Some((value, tail));
            }
            if !odometer(&mut digits, na) {
                break;
            }
        }
        Ok(best.expect("at least one assignment"))
    }
}

fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
}

/// Folds the named components into the observation.
pub fn augment(ssdp: &DiscreteSsdp, components: &[&str]) -> Result<AugmentedSsdp> {
    let mut folded = Vec::new();
    for name in components {
        let c = ssdp
            .component(name)
            .ok_or_else(|| Error::InvalidInput(format!("no exogenous component named {name:?}")))?;
        if ssdp.observed.contains(&c) {
            return Err(Error::InvalidInput(format!("component {name:?} is already part of the state")));
        }
        folded.push(c);
    }
    let mut problem = ssdp.clone();
    problem.observed.extend(&folded);
    Ok(AugmentedSsdp {
        base: ssdp.clone(),
        folded,
        problem,
    })
}

/// `E[max_a r] - max_a E[r]` at the terminal step, per observation of the
/// original problem, summed. Never negative.
pub fn terminal_jensen_gap(ssdp: &DiscreteSsdp, terminal_dist: &[f64]) -> f64 {
    let (obs, n_obs) = ssdp.observation_ids();
    let na = ssdp.n_actions();
    let mut pooled = vec![vec![0.0; na]; n_obs];
    let mut inner = 0.0;
    for (s, &p) in terminal_dist.iter().enumerate().filter(|(_, &p)| p > 0.0) {
        let mut best = f64::NEG_INFINITY;
        for a in 0..na {
            let r = ssdp.r(s, a);
            pooled[obs[s]][a] += p * r;
            best = best.max(r);
        }
        inner += p * best;
    }
    let outer: f64 = pooled.iter().filter(|g| g.iter().any(|&v| v != 0.0)).map(|g| argmax(g).1).sum();
    inner - outer
}
