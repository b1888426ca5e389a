//! Continual-learning divergence simulation.
//!
//! A sequential learner sees tasks one at a time while a reference learner
//! takes the same number of steps on the pooled objective. Their parameter
//! distance grows by at most a factor of `1 + eta * beta` per step, with
//! `beta` the gradient smoothness of the task objectives. Routing splits the
//! classes into expert groups that only step when the current task puts mass
//! on them, and each group is compared against a reference restricted to the
//! same classes. When task supports align with the groups, the restricted
//! task and pooled objectives coincide and the routed divergence vanishes.

use super::{Result, TheoryError};
use crate::numerics::{init_rng, Array2};
use serde::{Deserialize, Serialize};

/// Objective family for the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimModel {
    /// Softmax regression; the cross-entropy objective is convex in the
    /// weights, which the divergence analysis relies on.
    MultinomialLogistic,
    /// A non-convex objective, present to show the analysis refuses it.
    TwoLayerTanh,
}

/// Configuration for [`cl_simulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CLSimConfig {
    pub model: SimModel,
    pub n_features: usize,
    /// Pool size per class; pools are shared by every trajectory.
    pub samples_per_class: usize,
    /// One class mixture per task. Rows need not be normalized but must be
    /// nonnegative with positive mass.
    pub tasks: Vec<Vec<f64>>,
    /// Class to expert-group assignment, one entry per class.
    pub groups: Vec<usize>,
    pub steps_per_task: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for CLSimConfig {
    fn default() -> Self {
        CLSimConfig {
            model: SimModel::MultinomialLogistic,
            n_features: 8,
            samples_per_class: 12,
            tasks: vec![vec![0.6, 0.4, 0.0, 0.0], vec![0.0, 0.0, 0.5, 0.5]],
            groups: vec![0, 0, 1, 1],
            steps_per_task: 40,
            eta: 0.1,
            seed: 0,
        }
    }
}

impl CLSimConfig {
    pub fn n_classes(&self) -> usize {
        self.tasks.first().map(|t| t.len()).unwrap_or(0)
    }

    pub fn n_groups(&self) -> usize {
        self.groups.iter().map(|&g| g + 1).max().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        let c = self.n_classes();
        if self.tasks.is_empty() || c < 2 {
            return Err(TheoryError::InvalidConfig(
                "need at least one task over at least two classes".into(),
            ));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.len() != c {
                return Err(TheoryError::InvalidConfig(format!(
                    "task {i} has {} mixture entries, expected {c}",
                    t.len()
                )));
            }
            if t.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(TheoryError::InvalidConfig(format!(
                    "task {i} has a negative or non-finite mixture entry"
                )));
            }
            if t.iter().sum::<f64>() <= 0.0 {
                return Err(TheoryError::InvalidConfig(format!("task {i} has no mass")));
            }
        }
        if self.groups.len() != c {
            return Err(TheoryError::InvalidConfig(format!(
                "got {} group assignments for {c} classes",
                self.groups.len()
            )));
        }
        if self.n_features == 0 || self.samples_per_class == 0 || self.steps_per_task == 0 {
            return Err(TheoryError::InvalidConfig(
                "need positive n_features, samples_per_class, and steps_per_task".into(),
            ));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(TheoryError::InvalidConfig(format!(
                "need a finite eta >= 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Divergence traces and the observed smoothness constant.
#[derive(Debug, Clone, Serialize)]
pub struct CLSimReport {
    /// `||w_task - w_ref||_F` after each step, starting at step 0.
    pub standard: Vec<f64>,
    /// Root sum of squared per-group distances, same step grid.
    pub routed: Vec<f64>,
    /// Largest observed `||grad F(w_task) - grad F(w_ref)|| / ||w_task - w_ref||`
    /// along the standard run, with F the current task objective.
    pub beta: f64,
    /// Per-step growth factor implied by `beta`.
    pub eta_beta_plus_one: f64,
    pub final_standard: f64,
    pub final_routed: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Softmax over `w`'s rows applied to one sample, max-shifted.
fn softmax_probs(w: &Array2, x: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = (0..w.rows()).map(|k| dot(w.row(k), x)).collect();
    let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in p.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in p.iter_mut() {
        *v /= z;
    }
    p
}

/// Gradient of the class-weighted mean cross-entropy, restricted to the
/// given classes. Row `k` of `w` scores `classes[k]` and the softmax runs
/// over exactly those rows.
fn mixture_grad(w: &Array2, classes: &[usize], weights: &[f64], pools: &[Array2]) -> Array2 {
    let (k_n, f) = w.shape();
    let mut grad = Array2::zeros(k_n, f);
    for (label, (&c, &wt)) in classes.iter().zip(weights).enumerate() {
        if wt == 0.0 {
            continue;
        }
        let pool = &pools[c];
        let scale = wt / pool.rows() as f64;
        for s in 0..pool.rows() {
            let x = pool.row(s).to_vec();
            let probs = softmax_probs(w, &x);
            for k in 0..k_n {
                let coef = scale * (probs[k] - if k == label { 1.0 } else { 0.0 });
                let row = grad.row_mut(k);
                for (g, &xv) in row.iter_mut().zip(&x) {
                    *g += coef * xv;
                }
            }
        }
    }
    grad
}

/// Mixture mass on `classes` and the renormalized weights, or `None` when
/// the mixture puts nothing on them.
fn renorm(mix: &[f64], classes: &[usize]) -> Option<Vec<f64>> {
    let mass: f64 = classes.iter().map(|&c| mix[c]).sum();
    if mass <= 0.0 {
        return None;
    }
    Some(classes.iter().map(|&c| mix[c] / mass).collect())
}

/// Runs the sequential-vs-pooled comparison once for the whole model and
/// once per expert group. Sample pools, task order, and step counts are
/// identical across the two comparisons; only the parameter partition and
/// the induced objectives differ.
pub fn cl_simulate(cfg: &CLSimConfig) -> Result<CLSimReport> {
    cfg.validate()?;
    if cfg.model == SimModel::TwoLayerTanh {
        return Err(TheoryError::Contract(
            "the two-layer tanh objective is not convex, so the divergence \
             analysis does not apply; use the multinomial logistic model"
                .into(),
        ));
    }
    let c = cfg.n_classes();
    let f = cfg.n_features;
    let mut rng = init_rng(cfg.seed);

    // Shared pools: class means at radius 2 with unit-variance samples.
    let pools: Vec<Array2> = (0..c)
        .map(|_| {
            let mu = Array2::randn(1, f, &mut rng).scale(2.0);
            let mut pool = Array2::randn(cfg.samples_per_class, f, &mut rng);
            for s in 0..cfg.samples_per_class {
                for j in 0..f {
                    pool.set(s, j, pool.at(s, j) + mu.at(0, j));
                }
            }
            pool
        })
        .collect();

    let n_tasks = cfg.tasks.len() as f64;
    let global: Vec<f64> = (0..c)
        .map(|j| cfg.tasks.iter().map(|t| t[j]).sum::<f64>() / n_tasks)
        .collect();

    let all_classes: Vec<usize> = (0..c).collect();
    let group_classes: Vec<Vec<usize>> = (0..cfg.n_groups())
        .map(|g| {
            (0..c)
                .filter(|&cls| cfg.groups[cls] == g)
                .collect::<Vec<usize>>()
        })
        .collect();

    let mut w_task = Array2::zeros(c, f);
    let mut w_ref = Array2::zeros(c, f);
    let mut pairs: Vec<(Array2, Array2)> = group_classes
        .iter()
        .map(|g| (Array2::zeros(g.len(), f), Array2::zeros(g.len(), f)))
        .collect();

    let total = cfg.tasks.len() * cfg.steps_per_task;
    let mut standard = Vec::with_capacity(total + 1);
    let mut routed = Vec::with_capacity(total + 1);
    standard.push(0.0);
    routed.push(0.0);
    let mut beta = 0.0f64;

    for task_mix in &cfg.tasks {
        let task_w = renorm(task_mix, &all_classes).expect("validated positive mass");
        let global_w = renorm(&global, &all_classes).expect("validated positive mass");
        for _ in 0..cfg.steps_per_task {
            let g_task = mixture_grad(&w_task, &all_classes, &task_w, &pools);
            let gap = w_task.sub(&w_ref)?.frob_norm();
            if gap >= 1e-12 {
                let g_at_ref = mixture_grad(&w_ref, &all_classes, &task_w, &pools);
                beta = beta.max(g_task.sub(&g_at_ref)?.frob_norm() / gap);
            }
            let g_ref = mixture_grad(&w_ref, &all_classes, &global_w, &pools);
            w_task.add_assign_scaled(&g_task, -cfg.eta)?;
            w_ref.add_assign_scaled(&g_ref, -cfg.eta)?;
            standard.push(w_task.sub(&w_ref)?.frob_norm());

            for (pair, classes) in pairs.iter_mut().zip(&group_classes) {
                // An expert only steps when the current task routes mass to
                // it, and its reference pauses alongside it so the pair
                // stays aligned step for step.
                let Some(tw) = renorm(task_mix, classes) else {
                    continue;
                };
                let gw = renorm(&global, classes)
                    .expect("pooled mixture covers every class a task touches");
                let gt = mixture_grad(&pair.0, classes, &tw, &pools);
                let gr = mixture_grad(&pair.1, classes, &gw, &pools);
                pair.0.add_assign_scaled(&gt, -cfg.eta)?;
                pair.1.add_assign_scaled(&gr, -cfg.eta)?;
            }
            let div = pairs
                .iter()
                .map(|(a, b)| {
                    let d = a.sub(b).expect("paired shapes match").frob_norm();
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            routed.push(div);
        }
    }

    Ok(CLSimReport {
        final_standard: *standard.last().expect("trace is never empty"),
        final_routed: *routed.last().expect("trace is never empty"),
        standard,
        routed,
        beta,
        eta_beta_plus_one: cfg.eta * beta + 1.0,
    })
}
