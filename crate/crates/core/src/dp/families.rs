use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::ssdp::{augment, terminal_jensen_gap, DiscreteSsdp};
use crate::dynamics::{euler_step_follower, euler_step_leader, LeaderState, LocalState, VehicleParams};
use crate::error::{Error, Result};
use crate::problems::{reward, RewardParams};
use crate::rng::{self, StreamRng};

/// Evenly spaced points with nearest-point snapping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    pub const fn new(lo: f64, hi: f64, points: usize) -> Self {
        Self { lo, hi, points }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.lo + self.step() * i as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.value(i)).collect()
    }

    pub fn index(&self, v: f64) -> usize {
        let i = ((v.clamp(self.lo, self.hi) - self.lo) / self.step()).round();
        (i as usize).min(self.points - 1)
    }

    pub fn snap(&self, v: f64) -> f64 {
        self.value(self.index(v))
    }
}

/// Grids used to discretize the vehicle problems.
pub const ERROR_GRID: Grid = Grid::new(-3.0, 3.0, 13);
pub const ACC_GRID: Grid = Grid::new(-2.6, 2.6, 7);
pub const ACTION_GRID: Grid = Grid::new(-2.6, 2.6, 7);

/// Three-point approximation of a centred Gaussian with standard
/// deviation `std` (matches the first five moments).
pub fn three_point(std: f64) -> [(f64, f64); 3] {
    let c = 3f64.sqrt() * std;
    [(-c, 1.0 / 6.0), (0.0, 2.0 / 3.0), (c, 1.0 / 6.0)]
}

/// Builds a tabulated SSDP from a generative model by exploring every state
/// reachable within the horizon. States first met at step `horizon` are
/// never decided on; they get a zero-reward self loop.
pub fn build_reachable<F, R>(
    component_names: &[&str],
    observed: &[&str],
    action_values: Vec<f64>,
    horizon: usize,
    initial: Vec<(Vec<f64>, f64)>,
    mut step: F,
    mut reward_fn: R,
) -> Result<DiscreteSsdp>
where
    F: FnMut(&[f64], f64) -> Vec<(Vec<f64>, f64)>,
    R: FnMut(&[f64], f64) -> f64,
{
    let key = |l: &[f64]| l.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut labels: Vec<Vec<f64>> = Vec::new();
    let mut intern = |l: Vec<f64>, labels: &mut Vec<Vec<f64>>| -> usize {
        let k = key(&l);
        if let Some(&i) = index.get(&k) {
            return i;
        }
        index.insert(k, labels.len());
        labels.push(l);
        labels.len() - 1
    };
    let mut init = Vec::new();
    for (l, p) in initial {
        let s = intern(l, &mut labels);
        init.push((s, p));
    }
    let mut kernel: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rewards = Vec::new();
    // States are interned in discovery order, so each depth's new states
    // form one contiguous index range.
    let mut expanded = 0usize;
    for depth in 0..=horizon {
        let upto = labels.len();
        for s in expanded..upto {
            for &a in &action_values {
                if depth == horizon {
                    kernel.push(vec![(s, 1.0)]);
                    rewards.push(0.0);
                    continue;
                }
                let label = labels[s].clone();
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (nl, p) in step(&label, a) {
                    let t = intern(nl, &mut labels);
                    match row.iter_mut().find(|(u, _)| *u == t) {
                        Some(e) => e.1 += p,
                        None => row.push((t, p)),
                    }
                }
                kernel.push(row);
                rewards.push(reward_fn(&label, a));
            }
        }
        expanded = upto;
    }
    let names: Vec<String> = component_names.iter().map(|s| s.to_string()).collect();
    let observed = observed
        .iter()
        .map(|o| names.iter().position(|n| n == o).ok_or_else(|| Error::InvalidInput(format!("unknown component {o}"))))
        .collect::<Result<Vec<_>>>()?;
    let ssdp = DiscreteSsdp {
        horizon,
        action_values,
        component_names: names,
        labels,
        observed,
        kernel,
        reward: rewards,
        initial: init,
    };
    ssdp.validate()?;
    Ok(ssdp)
}

/// Families of instance pairs `(original, augmented)` for the theorem checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Hidden `W` with `W' = f(S, W, xi)`; random tables.
    Theorem1,
    /// `W' = f(S', xi)`; random tables.
    Theorem2,
    /// `W` enters neither transition nor reward; random tables.
    Theorem3,
    /// Two-vehicle P1 against P2 (predecessor acceleration folded in).
    Lemma1a,
    /// Two-vehicle P2 against P3 (predecessor input folded in).
    Lemma1b,
    /// Three-vehicle P4 against P5.
    Lemma2,
    /// P5 against P6 with one follower behind the ego.
    Lemma3,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Theorem1,
        Family::Theorem2,
        Family::Theorem3,
        Family::Lemma1a,
        Family::Lemma1b,
        Family::Lemma2,
        Family::Lemma3,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Family::Theorem1 => "theorem1",
            Family::Theorem2 => "theorem2",
            Family::Theorem3 => "theorem3",
            Family::Lemma1a => "lemma1a",
            Family::Lemma1b => "lemma1b",
            Family::Lemma2 => "lemma2",
            Family::Lemma3 => "lemma3",
        }
    }

    /// Claim checked on this family.
    pub fn relation(self) -> Relation {
        match self {
            Family::Theorem3 | Family::Lemma3 => Relation::Equal,
            _ => Relation::AtLeast,
        }
    }

    /// Theorem whose hypothesis the family satisfies.
    pub fn theorem(self) -> &'static str {
        match self {
            Family::Theorem1 | Family::Lemma1a | Family::Lemma2 => "theorem 1",
            Family::Theorem2 | Family::Lemma1b => "theorem 2",
            Family::Theorem3 | Family::Lemma3 => "theorem 3",
        }
    }

    pub fn generate(self, rng: &mut StreamRng) -> Result<InstancePair> {
        match self {
            Family::Theorem1 | Family::Theorem2 | Family::Theorem3 => random_tables(self, rng),
            Family::Lemma1a => lemma1a(rng),
            Family::Lemma1b => lemma1b(rng),
            Family::Lemma2 | Family::Lemma3 => platoon_chain(self, rng),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown instance family {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    /// `J(augmented) >= J(original)`.
    AtLeast,
    /// `J(augmented) == J(original)`.
    Equal,
}

#[derive(Clone, Debug)]
pub struct InstancePair {
    pub original: DiscreteSsdp,
    pub augmented: DiscreteSsdp,
}

fn random_distribution(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn random_tables(family: Family, rng: &mut StreamRng) -> Result<InstancePair> {
    let ns = rng.gen_range(2..=3usize);
    let nw = rng.gen_range(2..=3usize);
    let na = rng.gen_range(2..=3usize);
    let horizon = rng.gen_range(2..=3usize);
    // Next S for (s, a, w); Theorem 3 ignores w.
    let f: Vec<usize> = (0..ns * na * nw).map(|_| rng.gen_range(0..ns)).collect();
    let f3: Vec<usize> = (0..ns * na).map(|_| rng.gen_range(0..ns)).collect();
    let r: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // W' | (s, w) for theorems 1 and 3, W' | s' for theorem 2.
    let pw: Vec<Vec<f64>> = (0..ns * nw).map(|_| random_distribution(rng, nw)).collect();
    let ps: Vec<Vec<f64>> = (0..ns).map(|_| random_distribution(rng, nw)).collect();
    let init_s = random_distribution(rng, ns);
    let init_joint = random_distribution(rng, ns * nw);
    let initial: Vec<(Vec<f64>, f64)> = (0..ns)
        .flat_map(|s| (0..nw).map(move |w| (s, w)))
        .map(|(s, w)| {
            let p = match family {
                Family::Theorem2 => init_s[s] * ps[s][w],
                _ => init_joint[s * nw + w],
            };
            (vec![s as f64, w as f64], p)
        })
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let step = |l: &[f64], a: f64| -> Vec<(Vec<f64>, f64)> {
        let (s, w, a) = (l[0] as usize, l[1] as usize, a as usize);
        let (s_next, dist) = match family {
            Family::Theorem1 => (f[(s * na + a) * nw + w], &pw[s * nw + w]),
            Family::Theorem2 => {
                let t = f[(s * na + a) * nw + w];
                (t, &ps[t])
            }
            _ => (f3[s * na + a], &pw[s * nw + w]),
        };
        dist.iter().enumerate().map(|(w2, &p)| (vec![s_next as f64, w2 as f64], p)).collect()
    };
    let reward_fn = |l: &[f64], a: f64| r[l[0] as usize * na + a as usize];
    let actions: Vec<f64> = (0..na).map(|a| a as f64).collect();
    let original = build_reachable(&["s", "w"], &["s"], actions, horizon, initial, step, reward_fn)?;
    let augmented = augment(&original, &["w"])?.problem;
    Ok(InstancePair { original, augmented })
}

/// Randomized physical parameters shared by the vehicle families.
struct VehicleDraw {
    dt: f64,
    std: f64,
    taus: [f64; 4],
    horizon: usize,
}

impl VehicleDraw {
    fn new(rng: &mut StreamRng, horizon: usize) -> Self {
        // Coarse steps so that moves cross grid cells.
        Self {
            dt: rng.gen_range(0.3..0.8),
            std: rng.gen_range(0.3..1.5),
            taus: [0.0; 4].map(|_| rng.gen_range(0.2..0.6)),
            horizon,
        }
    }

    fn params(&self, j: usize) -> VehicleParams<f64> {
        VehicleParams::with_tau(self.taus[j])
    }
}

fn snap_local(x: LocalState<f64>) -> [f64; 3] {
    [ERROR_GRID.snap(x.e_p), ERROR_GRID.snap(x.e_v), ACC_GRID.snap(x.acc)]
}

fn grid_start(rng: &mut StreamRng) -> [f64; 2] {
    let pick = |rng: &mut StreamRng| ERROR_GRID.value(rng.gen_range(3..=9));
    [pick(rng), pick(rng)]
}

fn follower_next(l: &[f64], u: f64, acc_pred: f64, p: &VehicleParams<f64>, dt: f64) -> [f64; 3] {
    let x = LocalState::new(l[0], l[1], l[2]);
    snap_local(euler_step_follower(&x, u, acc_pred, p, dt).expect("grid values are finite"))
}

fn leader_next(acc: f64, u: f64, p: &VehicleParams<f64>, dt: f64) -> f64 {
    ACC_GRID.snap(euler_step_leader(&LeaderState { acc }, u, p, dt).expect("grid values are finite").acc)
}

fn eq13(l: &[f64], u: f64) -> f64 {
    reward(l[0], l[1], u, &RewardParams::default())
}

fn lemma1a(rng: &mut StreamRng) -> Result<InstancePair> {
    let v = VehicleDraw::new(rng, 3);
    let [e_p, e_v] = grid_start(rng);
    let (ego, pred) = (v.params(1), v.params(0));
    let exo = three_point(v.std);
    let step = |l: &[f64], u: f64| -> Vec<(Vec<f64>, f64)> {
        let x = follower_next(l, u, l[3], &ego, v.dt);
        exo.iter()
            .map(|&(u0, p)| (vec![x[0], x[1], x[2], leader_next(l[3], u0, &pred, v.dt)], p))
            .collect()
    };
    let original = build_reachable(
        &["e_p[1]", "e_v[1]", "acc[1]", "acc[0]"],
        &["e_p[1]", "e_v[1]", "acc[1]"],
        ACTION_GRID.values(),
        v.horizon,
        // The predecessor's initial acceleration is not known to P1.
        [(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]
            .iter()
            .map(|&(i, p)| (vec![e_p, e_v, 0.0, i * ACC_GRID.step()], p))
            .collect(),
        step,
        eq13,
    )?;
    let augmented = augment(&original, &["acc[0]"])?.problem;
    Ok(InstancePair { original, augmented })
}

fn lemma1b(rng: &mut StreamRng) -> Result<InstancePair> {
    let v = VehicleDraw::new(rng, 3);
    let [e_p, e_v] = grid_start(rng);
    let (ego, pred) = (v.params(1), v.params(0));
    let exo = three_point(v.std);
    let step = |l: &[f64], u: f64| -> Vec<(Vec<f64>, f64)> {
        let x = follower_next(l, u, l[3], &ego, v.dt);
        let acc0 = leader_next(l[3], l[4], &pred, v.dt);
        exo.iter().map(|&(u0, p)| (vec![x[0], x[1], x[2], acc0, u0], p)).collect()
    };
    let initial = exo.iter().map(|&(u0, p)| (vec![e_p, e_v, 0.0, 0.0, u0], p)).collect();
    let original = build_reachable(
        &["e_p[1]", "e_v[1]", "acc[1]", "acc[0]", "u[0]"],
        &["e_p[1]", "e_v[1]", "acc[1]", "acc[0]"],
        ACTION_GRID.values(),
        v.horizon,
        initial,
        step,
        eq13,
    )?;
    let augmented = augment(&original, &["u[0]"])?.problem;
    Ok(InstancePair { original, augmented })
}

/// Fixed linear feedback used by the non-ego followers, on the action grid.
fn frozen_follower(e_p: f64, e_v: f64, acc: f64) -> f64 {
    ACTION_GRID.snap(0.6 * e_p + 1.0 * e_v - 0.2 * acc)
}

/// Action levels of the chain families; coarser than [`ACTION_GRID`] so the
/// memoryless search over P4 stays exact at five steps.
pub const CHAIN_ACTIONS: Grid = Grid::new(-2.6, 2.6, 5);

fn platoon_chain(family: Family, rng: &mut StreamRng) -> Result<InstancePair> {
    // The ego sees u[1] when it starts to matter, so what P5 adds is one
    // step of preview; that needs five steps to show up in the return.
    let v = VehicleDraw::new(rng, 5);
    let [e_p2, e_v2] = grid_start(rng);
    let [e_p1, e_v1] = grid_start(rng);
    let [e_p3, e_v3] = grid_start(rng);
    let exo = [(-v.std, 0.5), (v.std, 0.5)];
    let with_rear = family == Family::Lemma3;
    // Ego 2 state, its V2X view of vehicle 1, then the hidden part.
    let mut names = vec!["e_p[2]", "e_v[2]", "acc[2]", "acc[1]", "u[1]", "e_p[1]", "e_v[1]", "acc[0]", "u[0]"];
    if with_rear {
        names.extend(["e_p[3]", "e_v[3]", "acc[3]"]);
    }
    let p4 = &names[..5];
    let p5 = &names[..9];
    let step = |l: &[f64], u: f64| -> Vec<(Vec<f64>, f64)> {
        let ego = follower_next(&l[0..3], u, l[3], &v.params(2), v.dt);
        let v1 = follower_next(&[l[5], l[6], l[3]], l[4], l[7], &v.params(1), v.dt);
        let acc0 = leader_next(l[7], l[8], &v.params(0), v.dt);
        let u1 = frozen_follower(v1[0], v1[1], v1[2]);
        let rear = with_rear.then(|| {
            let u3 = frozen_follower(l[9], l[10], l[11]);
            follower_next(&l[9..12], u3, l[2], &v.params(3), v.dt)
        });
        exo.iter()
            .map(|&(u0, p)| {
                let mut n = vec![ego[0], ego[1], ego[2], v1[2], u1, v1[0], v1[1], acc0, u0];
                if let Some(r) = rear {
                    n.extend(r);
                }
                (n, p)
            })
            .collect()
    };
    let initial = exo
        .iter()
        .map(|&(u0, p)| {
            let mut l = vec![e_p2, e_v2, 0.0, 0.0, frozen_follower(e_p1, e_v1, 0.0), e_p1, e_v1, 0.0, u0];
            if with_rear {
                l.extend([e_p3, e_v3, 0.0]);
            }
            (l, p)
        })
        .collect();
    let observed = if with_rear { p5 } else { p4 };
    let original = build_reachable(&names, observed, CHAIN_ACTIONS.values(), v.horizon, initial, step, eq13)?;
    let extra: Vec<&str> = names[observed.len()..].to_vec();
    let augmented = augment(&original, &extra)?.problem;
    Ok(InstancePair { original, augmented })
}

/// One-dimensional tracking toy: `x' = snap(x + a + w)`, reward
/// `-(x^2 + 0.1 a^2)`, noise on three points.
pub fn toy_tracking(horizon: usize) -> Result<DiscreteSsdp> {
    let grid = Grid::new(-3.0, 3.0, 13);
    let actions = Grid::new(-1.5, 1.5, 5).values();
    let noise = [(-0.5, 0.25), (0.0, 0.5), (0.5, 0.25)];
    build_reachable(
        &["x"],
        &["x"],
        actions,
        horizon,
        vec![(vec![2.5], 1.0)],
        |l, a| noise.iter().map(|&(w, p)| (vec![grid.snap(l[0] + a + w)], p)).collect(),
        |l, a| -(l[0] * l[0] + 0.1 * a * a),
    )
}

/// Outcome of checking one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremRow {
    pub family: Family,
    pub theorem: String,
    pub relation: Relation,
    pub instances: usize,
    pub violations: usize,
    /// Largest `J(augmented) - J(original)`.
    pub max_gap: f64,
    /// Smallest `J(augmented) - J(original)`.
    pub min_gap: f64,
    /// Instances with `J(augmented) > J(original) + 0.01`.
    pub strict_witnesses: usize,
    /// Terminal-step `E[max] < max E` occurrences beyond round-off.
    pub jensen_violations: usize,
}

impl TheoremRow {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.jensen_violations == 0
    }
}

pub const ORDER_TOL: f64 = 1e-9;
pub const STRICT_MARGIN: f64 = 0.01;

/// Solves `count` random instances of `family` and tallies the claims.
pub fn check_theorems(family: Family, count: usize, seed: u64) -> Result<TheoremRow> {
    if count == 0 {
        return Err(Error::InvalidInput("count must be at least 1".into()));
    }
    let mut rng = rng::stream(rng::derive_seed(seed, family as u64), rng::streams::INSTANCES);
    let mut row = TheoremRow {
        family,
        theorem: family.theorem().to_string(),
        relation: family.relation(),
        instances: count,
        violations: 0,
        max_gap: f64::NEG_INFINITY,
        min_gap: f64::INFINITY,
        strict_witnesses: 0,
        jensen_violations: 0,
    };
    for _ in 0..count {
        let pair = family.generate(&mut rng)?;
        let base = pair.original.solve()?;
        let aug = pair.augmented.solve()?;
        let gap = aug.j_star - base.j_star;
        row.max_gap = row.max_gap.max(gap);
        row.min_gap = row.min_gap.min(gap);
        let violated = match row.relation {
            Relation::AtLeast => gap < -ORDER_TOL,
            Relation::Equal => gap.abs() > ORDER_TOL,
        };
        row.violations += usize::from(violated);
        row.strict_witnesses += usize::from(gap > STRICT_MARGIN);
        let dists = pair.original.state_distributions(&base.policy);
        let terminal = dists.last().expect("horizon >= 1");
        if terminal_jensen_gap(&pair.original, terminal) < -ORDER_TOL {
            row.jensen_violations += 1;
        }
    }
    Ok(row)
}

