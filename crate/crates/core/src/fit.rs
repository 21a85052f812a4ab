//! Penalized maximum likelihood for the semi-parallel model.
//!
//! Outer iterations are proximal Newton steps: the loss is replaced by its
//! second-order expansion, the exact elastic-net penalty is kept, and the
//! requirement that every training row keep ordered linear predictors enters
//! as linear constraints. The subproblem is solved exactly by an active-set
//! method and the step is backtracked until the penalized objective drops
//! enough. A cyclic coordinate sweep (one safeguarded proximal step per
//! coefficient, never increasing the objective) stands in when a Newton
//! step fails and confirms convergence at the end.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::OrdinalDataset;
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::model::{check_monotone, logit, row_loss, row_loss_value, CoefficientSet};
use crate::penalty::{penalty_value, soft_threshold, HyperParams};

/// Smallest gap kept between consecutive thresholds.
pub const THRESHOLD_GAP: f64 = 1e-8;

/// Coefficient magnitude treated as a sign of separation in unpenalized fits.
pub const SEPARATION_LIMIT: f64 = 30.0;

/// Fallback penalty for unpenalized fits that hit separation.
pub const SEPARATION_RIDGE: HyperParams = HyperParams {
    lambda: 1e-8,
    alpha: 0.0,
    rho: 1.0,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    None,
    /// `B = 0`: covariate effects shared across margins.
    Parallel,
    /// `beta = 0`: margin-specific effects only.
    NonParallel,
}

impl std::str::FromStr for Restriction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "semi-parallel" => Ok(Restriction::None),
            "parallel" => Ok(Restriction::Parallel),
            "nonparallel" | "non-parallel" => Ok(Restriction::NonParallel),
            other => Err(Error::Config(format!("unknown restriction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_outer_iterations: usize,
    /// Relative change of the objective over a sweep below which the fit stops.
    pub objective_tolerance: f64,
    /// Largest coefficient move over a sweep below which the fit stops.
    pub coordinate_tolerance: f64,
    pub step_halving_max: usize,
    pub restriction: Restriction,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_outer_iterations: 200,
            objective_tolerance: 1e-8,
            coordinate_tolerance: 1e-12,
            step_halving_max: 30,
            restriction: Restriction::None,
        }
    }
}

impl FitOptions {
    pub fn with_restriction(mut self, restriction: Restriction) -> Self {
        self.restriction = restriction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations < 1 || self.step_halving_max < 1 {
            return Err(Error::Config("iteration caps must be >= 1".into()));
        }
        if !(self.objective_tolerance > 0.0) || !(self.coordinate_tolerance > 0.0) {
            return Err(Error::Config("tolerances must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub coefs: CoefficientSet,
    pub hyper: HyperParams,
    pub restriction: Restriction,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    /// Set when an unpenalized fit diverged and was refit with a tiny ridge.
    #[serde(default)]
    pub separation: bool,
    #[serde(default)]
    pub warm_started: bool,
}

impl ModelFit {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::INFINITY)
    }
}

/// Thresholds of the intercept-only maximum likelihood fit:
/// `c_j = logit(weighted cumulative proportion of categories <= j)`.
/// Empty extreme categories are clamped so the result stays finite and
/// strictly increasing.
pub fn intercept_only_thresholds(data: &OrdinalDataset) -> Vec<f64> {
    let p = data.class_proportions();
    let j = p.len() - 1;
    let mut c = Vec::with_capacity(j);
    let mut cum = 0.0;
    for k in 0..j {
        cum += p[k];
        let value = logit(cum.clamp(1e-10, 1.0 - 1e-10));
        let floor = c.last().map(|&prev: &f64| prev + 1e-6).unwrap_or(f64::NEG_INFINITY);
        c.push(value.max(floor));
    }
    c
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Threshold(usize),
    Shared(usize),
    Specific(usize, usize),
}

/// Column-wise sparse copy of the design plus the cached linear predictors
/// and per-row losses.
struct Workspace<'a> {
    columns: Vec<(Vec<usize>, Vec<f64>)>,
    y: &'a [usize],
    /// `w_i / n`.
    w: Vec<f64>,
    n: usize,
    j: usize,
    eta: Vec<f64>,
    /// Row loss at the cached `eta`; infinite outside the valid region.
    losses: Vec<f64>,
    /// Row-wise copy of the nonzero design entries.
    rows: Vec<Vec<(usize, f64)>>,
}

impl<'a> Workspace<'a> {
    fn new(data: &'a OrdinalDataset, design: &DesignMatrix, coefs: &CoefficientSet) -> Self {
        let n = data.len();
        let j = coefs.n_margins();
        let columns = design
            .values
            .columns()
            .into_iter()
            .map(|col| {
                let mut idx = Vec::new();
                let mut val = Vec::new();
                for (i, &v) in col.iter().enumerate() {
                    if v != 0.0 {
                        idx.push(i);
                        val.push(v);
                    }
                }
                (idx, val)
            })
            .collect::<Vec<(Vec<usize>, Vec<f64>)>>();
        let mut rows = vec![Vec::new(); n];
        for (p, (idx, val)) in columns.iter().enumerate() {
            for (&i, &x) in idx.iter().zip(val) {
                rows[i].push((p, x));
            }
        }
        let w = data.weights().iter().map(|w| w / n as f64).collect();
        let mut ws = Self {
            rows,
            columns,
            y: data.responses(),
            w,
            n,
            j,
            eta: vec![0.0; n * j],
            losses: vec![0.0; n],
        };
        ws.reset_eta(coefs);
        ws
    }

    fn reset_eta(&mut self, coefs: &CoefficientSet) {
        let j = self.j;
        for i in 0..self.n {
            self.eta[i * j..(i + 1) * j].copy_from_slice(&coefs.thresholds);
        }
        for (p, (idx, val)) in self.columns.iter().enumerate() {
            for (&i, &x) in idx.iter().zip(val) {
                for m in 0..j {
                    self.eta[i * j + m] += x * (coefs.shared[p] + coefs.specific[[p, m]]);
                }
            }
        }
        for i in 0..self.n {
            let eta = &self.eta[i * j..(i + 1) * j];
            self.losses[i] = match check_monotone(eta) {
                Ok(()) => row_loss_value(eta, self.y[i]).unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            };
        }
    }

    fn eta_row(&self, i: usize) -> &[f64] {
        &self.eta[i * self.j..(i + 1) * self.j]
    }

    /// Mean weighted loss; `None` outside the valid region.
    fn loss(&self) -> Option<f64> {
        let mut total = 0.0;
        for i in 0..self.n {
            let l = self.losses[i];
            if !l.is_finite() {
                return None;
            }
            total += self.w[i] * l;
        }
        Some(total)
    }
}

struct Solver<'a> {
    ws: Workspace<'a>,
    coefs: CoefficientSet,
    hyper: HyperParams,
    options: FitOptions,
    /// Group indicator columns when every row has exactly one of them set,
    /// so that the block is collinear with the thresholds.
    one_hot_group: Vec<usize>,
    /// Trial row losses from the last [`Solver::loss_change`].
    trial_losses: Vec<(usize, f64)>,
    /// Ordering-constraint multipliers of the last Newton subproblem.
    multipliers: Vec<(usize, f64)>,
}

/// Step-size floor below which halving gives up.
const MIN_STEP: f64 = 1e-15;
/// Coordinate-descent passes over the quadratic model per Newton step.
const INNER_SWEEPS: usize = 500;
/// Largest curvature-scaled coordinate move that ends the inner loop.
const INNER_TOLERANCE: f64 = 1e-10;
/// Fraction of the predicted decrease a Newton step must achieve.
const ARMIJO: f64 = 1e-4;
/// Augmented-Lagrangian rounds for the ordering constraints of a Newton step.
const ALM_ROUNDS: usize = 40;
/// Penalty parameter of those rounds relative to the largest curvature.
const ALM_SCALE: f64 = 10.0;
/// Constraint violation accepted before the threshold lift takes over.
const FEASIBILITY: f64 = 1e-10;
/// Gap left between ordered row predictors after the lift, against rounding.
const ORDER_MARGIN: f64 = 1e-11;

/// Role of a flat parameter in the active-set subproblem solver.
#[derive(Debug, Clone, Copy)]
enum Coord {
    /// Excluded by the restriction; stays at its current value.
    Fixed,
    /// Held at zero.
    Zero,
    /// Optimized with the given sign imposed (0 for an unpenalized one).
    Free(f64),
}

/// Ordering constraint `gap + a . (v - theta) >= 0` of the Newton
/// subproblem with its multiplier estimate `y`.
struct Ordering {
    key: usize,
    a: Vec<(usize, f64)>,
    gap: f64,
    y: f64,
    value: f64,
}

impl Solver<'_> {
    fn value(&self, target: Target) -> f64 {
        match target {
            Target::Threshold(m) => self.coefs.thresholds[m],
            Target::Shared(p) => self.coefs.shared[p],
            Target::Specific(p, m) => self.coefs.specific[[p, m]],
        }
    }

    fn set_value(&mut self, target: Target, v: f64) {
        match target {
            Target::Threshold(m) => self.coefs.thresholds[m] = v,
            Target::Shared(p) => self.coefs.shared[p] = v,
            Target::Specific(p, m) => self.coefs.specific[[p, m]] = v,
        }
    }

    fn penalty_weight(&self, target: Target) -> f64 {
        match target {
            Target::Threshold(_) => 0.0,
            Target::Shared(_) => self.hyper.rho,
            Target::Specific(..) => 1.0,
        }
    }

    fn penalty_at(&self, target: Target, v: f64) -> f64 {
        let (l1, l2) = self.hyper.coordinate_penalty(self.penalty_weight(target));
        l1 * v.abs() + 0.5 * l2 * v * v
    }

    /// Rows touched by `target` with their design values.
    fn rows(&self, target: Target) -> RowIter<'_> {
        match target {
            Target::Threshold(_) => RowIter::All(0, self.ws.n),
            Target::Shared(p) | Target::Specific(p, _) => {
                let (idx, val) = &self.ws.columns[p];
                RowIter::Sparse(idx, val, 0)
            }
        }
    }

    /// First and second derivative of the mean loss along `target`.
    fn derivatives(&self, target: Target) -> (f64, f64) {
        let mut g = 0.0;
        let mut h = 0.0;
        for (i, x) in self.rows(target) {
            let k = self.ws.y[i];
            let (d, hh) = match target {
                Target::Shared(_) => {
                    let rl = row_loss(self.ws.eta_row(i), k).expect("iterate stays valid");
                    (rl.d_upper + rl.d_lower, rl.h_upper + rl.h_lower + 2.0 * rl.h_cross)
                }
                Target::Threshold(m) | Target::Specific(_, m) => {
                    if k != m && k != m + 1 {
                        continue;
                    }
                    let rl = row_loss(self.ws.eta_row(i), k).expect("iterate stays valid");
                    if k == m {
                        (rl.d_upper, rl.h_upper)
                    } else {
                        (rl.d_lower, rl.h_lower)
                    }
                }
            };
            let w = self.ws.w[i];
            g += w * x * d;
            h += w * x * x * hh;
        }
        (g, h)
    }

    /// Change in mean loss from moving `target` by `delta`; `None` if any
    /// touched row leaves the valid region. The trial row losses are kept
    /// for [`Solver::apply`].
    fn loss_change(&mut self, target: Target, delta: f64) -> Option<f64> {
        let j = self.ws.j;
        let mut trial_losses = std::mem::take(&mut self.trial_losses);
        trial_losses.clear();
        let mut change = 0.0;
        let mut trial = vec![0.0; j];
        let mut valid = true;
        for (i, x) in self.rows(target) {
            let eta = self.ws.eta_row(i);
            let k = self.ws.y[i];
            match target {
                Target::Shared(_) => {
                    trial.iter_mut().zip(eta).for_each(|(t, e)| *t = e + x * delta);
                }
                Target::Threshold(m) | Target::Specific(_, m) => {
                    let moved = eta[m] + x * delta;
                    if (m > 0 && moved < eta[m - 1]) || (m + 1 < j && moved > eta[m + 1]) || !moved.is_finite() {
                        valid = false;
                        break;
                    }
                    if k != m && k != m + 1 {
                        continue;
                    }
                    trial.copy_from_slice(eta);
                    trial[m] = moved;
                }
            }
            let Some(new) = row_loss_value(&trial, k) else {
                valid = false;
                break;
            };
            change += self.ws.w[i] * (new - self.ws.losses[i]);
            trial_losses.push((i, new));
        }
        self.trial_losses = trial_losses;
        valid.then_some(change)
    }

    /// Moves `target` by `delta`, which must be the argument of the latest
    /// successful [`Solver::loss_change`].
    fn apply(&mut self, target: Target, delta: f64) {
        let j = self.ws.j;
        match target {
            Target::Threshold(m) => {
                for i in 0..self.ws.n {
                    self.ws.eta[i * j + m] += delta;
                }
            }
            Target::Shared(p) | Target::Specific(p, _) => {
                let (idx, val) = &self.ws.columns[p];
                for (&i, &x) in idx.iter().zip(val) {
                    match target {
                        Target::Specific(_, m) => self.ws.eta[i * j + m] += x * delta,
                        _ => {
                            for e in &mut self.ws.eta[i * j..(i + 1) * j] {
                                *e += x * delta;
                            }
                        }
                    }
                }
            }
        }
        for &(i, l) in &self.trial_losses {
            self.ws.losses[i] = l;
        }
        let v = self.value(target);
        self.set_value(target, v + delta);
    }

    /// One safeguarded proximal Newton step on `target`; returns the move.
    fn update(&mut self, target: Target) -> f64 {
        let (g, h) = self.derivatives(target);
        let current = self.value(target);
        let proposal = match target {
            Target::Threshold(m) => {
                if !(h > 0.0) {
                    return 0.0;
                }
                let c = &self.coefs.thresholds;
                let lo = if m > 0 { c[m - 1] + THRESHOLD_GAP } else { f64::NEG_INFINITY };
                let hi = if m + 1 < c.len() { c[m + 1] - THRESHOLD_GAP } else { f64::INFINITY };
                (current - g / h).clamp(lo.min(current), hi.max(current))
            }
            _ => {
                let (l1, l2) = self.hyper.coordinate_penalty(self.penalty_weight(target));
                let denom = h + l2;
                if !(denom > 0.0) {
                    return 0.0;
                }
                soft_threshold(h * current - g, l1) / denom
            }
        };
        let full = proposal - current;
        if full == 0.0 || !full.is_finite() {
            return 0.0;
        }
        let old_pen = self.penalty_at(target, current);
        let mut step = full;
        for _ in 0..self.options.step_halving_max {
            if step.abs() < MIN_STEP * current.abs().max(1.0) {
                break;
            }
            if let Some(dl) = self.loss_change(target, step) {
                let dp = self.penalty_at(target, current + step) - old_pen;
                if dl + dp <= 0.0 {
                    self.apply(target, step);
                    return step;
                }
            }
            step *= 0.5;
        }
        0.0
    }

    /// Moves along directions that leave every linear predictor unchanged
    /// and lower the penalty: trading `beta_p` against the row `B_p.`, and
    /// trading a one-hot group block against the thresholds. Coordinate
    /// steps alone crawl along these flat valleys of the loss.
    fn rebalance(&mut self) -> f64 {
        if self.hyper.lambda == 0.0 {
            return 0.0;
        }
        let (alpha, rho) = (self.hyper.alpha, self.hyper.rho);
        let j = self.ws.j;
        let mut max_move: f64 = 0.0;
        let mut terms = Vec::new();
        if self.options.restriction == Restriction::None {
            for p in 0..self.ws.columns.len() {
                terms.clear();
                terms.push((self.coefs.shared[p], 1.0, rho));
                terms.extend((0..j).map(|m| (self.coefs.specific[[p, m]], -1.0, 1.0)));
                let d = penalty_line_min(&terms, alpha, f64::NEG_INFINITY, f64::INFINITY);
                if d != 0.0 {
                    self.coefs.shared[p] += d;
                    for m in 0..j {
                        self.coefs.specific[[p, m]] -= d;
                    }
                    max_move = max_move.max(d.abs());
                }
            }
        }
        if self.one_hot_group.is_empty() {
            return max_move;
        }
        let group = self.one_hot_group.clone();
        if self.options.restriction != Restriction::NonParallel {
            terms.clear();
            terms.extend(group.iter().map(|&l| (self.coefs.shared[l], 1.0, rho)));
            let d = penalty_line_min(&terms, alpha, f64::NEG_INFINITY, f64::INFINITY);
            if d != 0.0 {
                group.iter().for_each(|&l| self.coefs.shared[l] += d);
                self.coefs.thresholds.iter_mut().for_each(|c| *c -= d);
                max_move = max_move.max(d.abs());
            }
        }
        if self.options.restriction != Restriction::Parallel {
            for m in 0..j {
                let c = &self.coefs.thresholds;
                // Keep the thresholds ordered: c_m - d stays within its neighbours.
                let lo = if m + 1 < j { (c[m] - c[m + 1] + THRESHOLD_GAP).min(0.0) } else { f64::NEG_INFINITY };
                let hi = if m > 0 { (c[m] - c[m - 1] - THRESHOLD_GAP).max(0.0) } else { f64::INFINITY };
                terms.clear();
                terms.extend(group.iter().map(|&l| (self.coefs.specific[[l, m]], 1.0, 1.0)));
                let d = penalty_line_min(&terms, alpha, lo, hi);
                if d != 0.0 {
                    group.iter().for_each(|&l| self.coefs.specific[[l, m]] += d);
                    self.coefs.thresholds[m] -= d;
                    max_move = max_move.max(d.abs());
                }
            }
        }
        max_move
    }

    fn free(&self, q: usize) -> bool {
        let (j, p) = (self.ws.j, self.ws.columns.len());
        if q < j {
            true
        } else if q < j + p {
            self.options.restriction != Restriction::NonParallel
        } else {
            self.options.restriction != Restriction::Parallel
        }
    }

    fn unflatten(&self, v: &[f64]) -> CoefficientSet {
        let (j, p) = (self.ws.j, self.ws.columns.len());
        let mut c = self.coefs.clone();
        c.thresholds.copy_from_slice(&v[..j]);
        c.shared.iter_mut().zip(&v[j..j + p]).for_each(|(a, b)| *a = *b);
        c.specific.iter_mut().zip(&v[j + p..]).for_each(|(a, b)| *a = *b);
        c
    }

    /// Sparse gradient of `eta_{i,m}` with respect to the flat parameters.
    fn margin_vector(&self, i: usize, m: usize, out: &mut Vec<(usize, f64)>) {
        let (j, p) = (self.ws.j, self.ws.columns.len());
        out.clear();
        out.push((m, 1.0));
        let shared = self.options.restriction != Restriction::NonParallel;
        let specific = self.options.restriction != Restriction::Parallel;
        for &(col, x) in &self.ws.rows[i] {
            if shared {
                out.push((j + col, x));
            }
            if specific {
                out.push((j + p + col * j + m, x));
            }
        }
    }

    /// Gradient and dense Hessian of the mean loss in the flat parameters.
    fn second_order(&self) -> (Vec<f64>, Vec<f64>) {
        let j = self.ws.j;
        let q = j + self.ws.columns.len() * (j + 1);
        let mut g = vec![0.0; q];
        let mut h = vec![0.0; q * q];
        let (mut ua, mut ub) = (Vec::new(), Vec::new());
        let outer = |h: &mut [f64], a: &[(usize, f64)], b: &[(usize, f64)], s: f64| {
            for &(r, x) in a {
                let row = &mut h[r * q..(r + 1) * q];
                let sx = s * x;
                for &(c, y) in b {
                    row[c] += sx * y;
                }
            }
        };
        for i in 0..self.ws.n {
            let k = self.ws.y[i];
            let w = self.ws.w[i];
            let rl = row_loss(self.ws.eta_row(i), k).expect("iterate stays valid");
            if k < j {
                self.margin_vector(i, k, &mut ua);
                ua.iter().for_each(|&(r, x)| g[r] += w * rl.d_upper * x);
                outer(&mut h, &ua, &ua, w * rl.h_upper);
            }
            if k > 0 {
                self.margin_vector(i, k - 1, &mut ub);
                ub.iter().for_each(|&(r, x)| g[r] += w * rl.d_lower * x);
                outer(&mut h, &ub, &ub, w * rl.h_lower);
                if k < j {
                    outer(&mut h, &ua, &ub, w * rl.h_cross);
                    outer(&mut h, &ub, &ua, w * rl.h_cross);
                }
            }
        }
        (g, h)
    }

    /// Penalty weight of flat parameter `q`.
    fn flat_weight(&self, q: usize) -> f64 {
        let (j, p) = (self.ws.j, self.ws.columns.len());
        if q < j {
            0.0
        } else if q < j + p {
            self.hyper.rho
        } else {
            1.0
        }
    }

    /// Gap of every ordering constraint after moving the flat parameters by
    /// `dir`: `eta_{i,m+1} - eta_{i,m}` for each row and pair (row-major),
    /// then `c_{m+1} - c_m - THRESHOLD_GAP` for the thresholds.
    fn ordering_gaps(&self, dir: &[f64]) -> Vec<f64> {
        let j = self.ws.j;
        let delta = self.eta_direction(dir);
        let moved = |k: usize| self.ws.eta[k] + delta[k];
        let mut out = Vec::with_capacity((self.ws.n + 1) * j.saturating_sub(1));
        for i in 0..self.ws.n {
            out.extend((0..j.saturating_sub(1)).map(|m| moved(i * j + m + 1) - moved(i * j + m)));
        }
        let c = &self.coefs.thresholds;
        out.extend((0..j.saturating_sub(1)).map(|m| (c[m + 1] + dir[m + 1]) - (c[m] + dir[m]) - THRESHOLD_GAP));
        out
    }

    /// Coefficients of ordering constraint `key` (indexed as in
    /// [`Solver::ordering_gaps`]) in the flat parameters. Shared effects cancel.
    fn ordering_vector(&self, key: usize) -> Vec<(usize, f64)> {
        let (j, p) = (self.ws.j, self.ws.columns.len());
        let (i, m) = (key / (j - 1), key % (j - 1));
        let mut a = vec![(m + 1, 1.0), (m, -1.0)];
        if i < self.ws.n && self.options.restriction != Restriction::Parallel {
            for &(col, x) in &self.ws.rows[i] {
                a.push((j + p + col * j + m + 1, x));
                a.push((j + p + col * j + m, -x));
            }
        }
        a
    }

    /// Change of every ordering gap (indexed as in [`Solver::ordering_gaps`])
    /// per unit move along `dir`.
    fn ordering_change(&self, dir: &[f64]) -> Vec<f64> {
        let j = self.ws.j;
        let delta = self.eta_direction(dir);
        let mut out = Vec::with_capacity((self.ws.n + 1) * j.saturating_sub(1));
        for row in delta.chunks(j) {
            out.extend(row.windows(2).map(|w| w[1] - w[0]));
        }
        out.extend(dir[..j].windows(2).map(|w| w[1] - w[0]));
        out
    }

    /// Exact minimizer of the Newton subproblem by a primal active-set
    /// method. Each penalized coordinate is either held at zero or keeps a
    /// fixed sign, and each ordering constraint is either inactive or held
    /// with equality. A pass solves the resulting equality-constrained
    /// quadratic directly and steps toward it as far as the signs and the
    /// inactive constraints allow; at the reduced optimum the most violated
    /// optimality condition is released. Returns `None` if a reduced system
    /// is singular or the pass limit is reached.
    fn active_set_target(&mut self, g: &[f64], h: &[f64], theta: &[f64], gaps0: &[f64]) -> Option<Vec<f64>> {
        let q = g.len();
        let pen: Vec<(f64, f64)> = (0..q).map(|r| self.hyper.coordinate_penalty(self.flat_weight(r))).collect();
        // Gaps within rounding of zero count as tight; the lift restores them.
        let base: Vec<f64> = gaps0.iter().map(|&x| if x < 10.0 * ORDER_MARGIN { 0.0 } else { x }).collect();
        let mut values = base.clone();
        let mut state: Vec<Coord> = (0..q)
            .map(|r| {
                if !self.free(r) {
                    Coord::Fixed
                } else if pen[r].0 == 0.0 {
                    Coord::Free(0.0)
                } else if theta[r] == 0.0 {
                    Coord::Zero
                } else {
                    Coord::Free(theta[r].signum())
                }
            })
            .collect();
        let mut v = theta.to_vec();
        let mut in_working = vec![false; values.len()];
        let mut working: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        for &(key, _) in &self.multipliers {
            if values[key] == 0.0 && !in_working[key] {
                in_working[key] = true;
                working.push((key, self.ordering_vector(key)));
            }
        }
        let mut pos = vec![usize::MAX; q];
        for _ in 0..4 * q + 20 {
            let free: Vec<usize> = (0..q).filter(|&r| matches!(state[r], Coord::Free(_))).collect();
            pos.iter_mut().for_each(|x| *x = usize::MAX);
            free.iter().enumerate().for_each(|(a, &r)| pos[r] = a);
            let (nf, nw) = (free.len(), working.len());
            let mut kkt = DMatrix::<f64>::zeros(nf + nw, nf + nw);
            let mut rhs = DVector::<f64>::zeros(nf + nw);
            for (a, &r) in free.iter().enumerate() {
                let hr = &h[r * q..(r + 1) * q];
                let Coord::Free(sign) = state[r] else { unreachable!() };
                let mut lin = g[r] + pen[r].0 * sign;
                for c in 0..q {
                    lin -= hr[c] * theta[c];
                    match pos[c] {
                        usize::MAX => lin += hr[c] * v[c],
                        b => kkt[(a, b)] = hr[c],
                    }
                }
                kkt[(a, a)] += pen[r].1;
                rhs[a] = -lin;
            }
            for (w, (key, vec)) in working.iter().enumerate() {
                let mut b = -base[*key];
                for &(c, x) in vec {
                    b += x * theta[c];
                    match pos[c] {
                        usize::MAX => b -= x * v[c],
                        a => {
                            kkt[(nf + w, a)] = x;
                            kkt[(a, nf + w)] = x;
                        }
                    }
                }
                rhs[nf + w] = b;
            }
            let x = kkt.clone().lu().solve(&rhs)?;
            let scale = rhs.amax() + kkt.amax() * x.amax();
            if !((&kkt * &x - &rhs).amax() <= 1e-9 * scale) {
                return None;
            }
            let mut step = vec![0.0; q];
            free.iter().enumerate().for_each(|(a, &r)| step[r] = x[a] - v[r]);
            let change = self.ordering_change(&step);
            let mut alpha = 1.0;
            let mut block = None;
            for &r in &free {
                if let Coord::Free(sign) = state[r] {
                    if sign * (v[r] + step[r]) < 0.0 {
                        let a = v[r] / -step[r];
                        if a < alpha {
                            (alpha, block) = (a, Some(Err(r)));
                        }
                    }
                }
            }
            for (key, (&value, &dv)) in values.iter().zip(&change).enumerate() {
                if !in_working[key] && dv < 0.0 && value + dv < 0.0 {
                    let a = (value / -dv).max(0.0);
                    if a < alpha {
                        (alpha, block) = (a, Some(Ok(key)));
                    }
                }
            }
            free.iter().for_each(|&r| v[r] += alpha * step[r]);
            values.iter_mut().zip(&change).for_each(|(value, dv)| *value += alpha * dv);
            match block {
                Some(Err(r)) => {
                    v[r] = 0.0;
                    state[r] = Coord::Zero;
                    continue;
                }
                Some(Ok(key)) => {
                    values[key] = 0.0;
                    in_working[key] = true;
                    working.push((key, self.ordering_vector(key)));
                    continue;
                }
                None => {}
            }
            // Reduced optimum: release the worst held coordinate or constraint.
            let lambda: Vec<f64> = (0..nw).map(|w| -x[nf + w]).collect();
            let mut worst = (1e-12, None);
            for r in 0..q {
                if !matches!(state[r], Coord::Zero) {
                    continue;
                }
                let hr = &h[r * q..(r + 1) * q];
                let mut grad = g[r] + hr.iter().zip(v.iter().zip(theta)).map(|(hh, (a, b))| hh * (a - b)).sum::<f64>();
                for ((_, vec), &l) in working.iter().zip(&lambda) {
                    grad -= l * vec.iter().find(|e| e.0 == r).map_or(0.0, |e| e.1);
                }
                let excess = grad.abs() - pen[r].0;
                if excess > worst.0 * (1.0 + pen[r].0) {
                    worst = (excess, Some(Err((r, -grad.signum()))));
                }
            }
            for (w, &l) in lambda.iter().enumerate() {
                if -l > worst.0 {
                    worst = (-l, Some(Ok(w)));
                }
            }
            match worst.1 {
                Some(Err((r, sign))) => state[r] = Coord::Free(sign),
                Some(Ok(w)) => {
                    let (key, _) = working.swap_remove(w);
                    in_working[key] = false;
                }
                None => {
                    self.multipliers = working.iter().zip(&lambda).map(|((key, _), &l)| (*key, l)).collect();
                    return Some(v);
                }
            }
        }
        None
    }

    /// Minimizes the quadratic model `g.d + d'Hd/2` plus the exact penalty
    /// subject to every row staying ordered. Any violation left by the
    /// solver is absorbed by raising the upper thresholds, which moves only
    /// the offending gap. Returns the new flat parameters.
    fn newton_target(&mut self, g: &[f64], h: &[f64], theta: &[f64]) -> Vec<f64> {
        let j = self.ws.j;
        let gaps0 = self.ordering_gaps(&vec![0.0; g.len()]);
        let mut v = match self.active_set_target(g, h, theta, &gaps0) {
            Some(v) => v,
            None => self.augmented_target(g, h, theta, &gaps0),
        };
        if j > 1 {
            let dir: Vec<f64> = v.iter().zip(theta).map(|(a, b)| a - b).collect();
            let gaps = self.ordering_gaps(&dir);
            let mut lift = vec![0.0; j - 1];
            for (key, &gap) in gaps.iter().enumerate() {
                let m = key % (j - 1);
                let margin = if key / (j - 1) < self.ws.n { ORDER_MARGIN } else { 0.0 };
                lift[m] = f64::max(lift[m], margin - gap);
            }
            let mut shift = 0.0;
            for m in 0..j - 1 {
                shift += lift[m];
                v[m + 1] += shift;
            }
        }
        v
    }

    /// Fallback for [`Solver::active_set_target`]: coordinate descent on an
    /// augmented Lagrangian over the constraints found violated so far.
    fn augmented_target(&mut self, g: &[f64], h: &[f64], theta: &[f64], gaps0: &[f64]) -> Vec<f64> {
        let q = g.len();
        let mut v = theta.to_vec();
        // Gradient of the quadratic model at v: g + H (v - theta).
        let mut grad = g.to_vec();
        let weights: Vec<f64> = (0..q).map(|r| self.flat_weight(r)).collect();
        let free: Vec<bool> = (0..q).map(|r| self.free(r) && h[r * q + r] > 0.0).collect();
        let mu = ALM_SCALE * (0..q).map(|r| h[r * q + r]).fold(0.0, f64::max);
        let mut tracked = vec![false; gaps0.len()];
        let mut cons: Vec<Ordering> = Vec::new();
        let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); q];
        // Multipliers of the previous step are a close starting guess.
        for (key, y) in std::mem::take(&mut self.multipliers) {
            tracked[key] = true;
            let a = self.ordering_vector(key);
            for &(r, x) in &a {
                lists[r].push((cons.len(), x));
            }
            cons.push(Ordering { key, a, gap: gaps0[key], y, value: gaps0[key] });
        }
        for _ in 0..ALM_ROUNDS {
            for _ in 0..INNER_SWEEPS {
                for c in &mut cons {
                    c.value = c.gap + c.a.iter().map(|&(r, x)| x * (v[r] - theta[r])).sum::<f64>();
                }
                let active: Vec<bool> = cons.iter().map(|c| c.y - mu * c.value > 0.0).collect();
                let mut max_move: f64 = 0.0;
                for r in 0..q {
                    if !free[r] {
                        continue;
                    }
                    let (mut hrr, mut gr) = (h[r * q + r], grad[r]);
                    for &(t, x) in &lists[r] {
                        if active[t] {
                            hrr += mu * x * x;
                            gr -= x * (cons[t].y - mu * cons[t].value);
                        }
                    }
                    let (l1, l2) = self.hyper.coordinate_penalty(weights[r]);
                    let new = soft_threshold(hrr * v[r] - gr, l1) / (hrr + l2);
                    let d = new - v[r];
                    if d != 0.0 {
                        v[r] = new;
                        let col = &h[r * q..(r + 1) * q];
                        grad.iter_mut().zip(col).for_each(|(gg, hh)| *gg += d * hh);
                        for &(t, x) in &lists[r] {
                            cons[t].value += x * d;
                        }
                        max_move = max_move.max(d.abs() * hrr.sqrt());
                    }
                }
                // The flat directions leave the quadratic model and the row
                // constraints unchanged too.
                let inner = self.unflatten(&v);
                let outer = std::mem::replace(&mut self.coefs, inner);
                let moved = self.rebalance();
                let inner = std::mem::replace(&mut self.coefs, outer);
                if moved > 0.0 {
                    v = flatten(&inner);
                    for r in 0..q {
                        let row = &h[r * q..(r + 1) * q];
                        grad[r] = g[r] + row.iter().zip(v.iter().zip(theta)).map(|(hh, (a, b))| hh * (a - b)).sum::<f64>();
                    }
                }
                if max_move <= INNER_TOLERANCE {
                    break;
                }
            }
            let dir: Vec<f64> = v.iter().zip(theta).map(|(a, b)| a - b).collect();
            let gaps = self.ordering_gaps(&dir);
            let mut added = false;
            let mut worst: f64 = 0.0;
            for (key, &gap) in gaps.iter().enumerate() {
                if gap < 0.0 {
                    worst = worst.max(-gap);
                    if !tracked[key] {
                        tracked[key] = true;
                        added = true;
                        let a = self.ordering_vector(key);
                        for &(r, x) in &a {
                            lists[r].push((cons.len(), x));
                        }
                        cons.push(Ordering { key, a, gap: gaps0[key], y: 0.0, value: gap });
                    }
                }
            }
            // Multiplier update; its size measures the complementarity residual.
            let mut residual: f64 = 0.0;
            for c in &mut cons {
                c.value = gaps[c.key];
                let y = (c.y - mu * c.value).max(0.0);
                residual = residual.max((y - c.y).abs() / mu);
                c.y = y;
            }
            if !added && worst <= FEASIBILITY && residual <= FEASIBILITY {
                break;
            }
        }
        self.multipliers = cons.iter().filter(|c| c.y > 0.0).map(|c| (c.key, c.y)).collect();
        v
    }

    /// Proximal Newton step along [`Solver::newton_target`] with Armijo
    /// backtracking. Returns the largest accepted coordinate move, or `None`
    /// if no step lowered the objective.
    fn newton_step(&mut self, current: f64) -> Option<f64> {
        let (g, h) = self.second_order();
        let theta = flatten(&self.coefs);
        let v = self.newton_target(&g, &h, &theta);
        let dir: Vec<f64> = v.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let max_dir = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if max_dir == 0.0 || !max_dir.is_finite() {
            return None;
        }
        let pen0 = penalty_value(&self.coefs, &self.hyper);
        let model_gain = g.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>()
            + penalty_value(&self.unflatten(&v), &self.hyper)
            - pen0;
        if !(model_gain < 0.0) {
            return None;
        }
        let delta_eta = self.eta_direction(&dir);
        let mut t = 1.0;
        for _ in 0..self.options.step_halving_max {
            let trial_theta: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let trial = self.unflatten(&trial_theta);
            let ordered = trial.thresholds.windows(2).all(|w| w[1] > w[0]);
            if ordered {
                if let Some(loss) = self.trial_loss(&delta_eta, t) {
                    let value = loss + penalty_value(&trial, &self.hyper);
                    if value <= current + ARMIJO * t * model_gain {
                        self.coefs = trial;
                        self.ws.reset_eta(&self.coefs);
                        if self.ws.loss().is_some() {
                            return Some(t * max_dir);
                        }
                        // Rounding pushed a row out of the valid region: undo.
                        self.coefs = self.unflatten(&theta);
                        self.ws.reset_eta(&self.coefs);
                        return None;
                    }
                }
            }
            t *= 0.5;
        }
        None
    }

    /// Change of every cached `eta` per unit move along the flat direction `dir`.
    fn eta_direction(&self, dir: &[f64]) -> Vec<f64> {
        let (j, p) = (self.ws.j, self.ws.columns.len());
        let mut out = vec![0.0; self.ws.n * j];
        for i in 0..self.ws.n {
            out[i * j..(i + 1) * j].copy_from_slice(&dir[..j]);
        }
        for (col, (idx, val)) in self.ws.columns.iter().enumerate() {
            for (&i, &x) in idx.iter().zip(val) {
                for m in 0..j {
                    out[i * j + m] += x * (dir[j + col] + dir[j + p + col * j + m]);
                }
            }
        }
        out
    }

    /// Mean loss at `eta + t * delta`; `None` outside the valid region.
    fn trial_loss(&self, delta: &[f64], t: f64) -> Option<f64> {
        let j = self.ws.j;
        let mut row = vec![0.0; j];
        let mut total = 0.0;
        for i in 0..self.ws.n {
            for m in 0..j {
                row[m] = self.ws.eta[i * j + m] + t * delta[i * j + m];
            }
            check_monotone(&row).ok()?;
            total += self.ws.w[i] * row_loss_value(&row, self.ws.y[i])?;
        }
        Some(total)
    }

    /// One cyclic pass of proximal coordinate updates.
    fn sweep(&mut self, targets: &[Target]) -> f64 {
        let mut max_move: f64 = 0.0;
        for &t in targets {
            max_move = max_move.max(self.update(t).abs());
        }
        max_move.max(self.rebalance())
    }

    fn targets(&self) -> Vec<Target> {
        let j = self.ws.j;
        let p = self.ws.columns.len();
        let mut t: Vec<Target> = (0..j).map(Target::Threshold).collect();
        for col in 0..p {
            if self.options.restriction != Restriction::NonParallel {
                t.push(Target::Shared(col));
            }
            if self.options.restriction != Restriction::Parallel {
                for m in 0..j {
                    t.push(Target::Specific(col, m));
                }
            }
        }
        t
    }

    fn objective(&self) -> f64 {
        match self.ws.loss() {
            Some(l) => l + penalty_value(&self.coefs, &self.hyper),
            None => f64::INFINITY,
        }
    }

    fn max_slope(&self) -> f64 {
        self.coefs
            .shared
            .iter()
            .chain(self.coefs.specific.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Returns `(trace, converged, iterations, diverged)`.
    ///
    /// Outer iterations are proximal Newton steps. Convergence is declared
    /// only once a plain coordinate sweep also meets the tolerance; a sweep
    /// stands in whenever the Newton step makes no progress.
    fn run(&mut self, watch_separation: bool) -> (Vec<f64>, bool, usize, bool) {
        let targets = self.targets();
        let mut trace = vec![self.objective()];
        let mut confirming = false;
        for iter in 1..=self.options.max_outer_iterations {
            let prev = *trace.last().unwrap();
            let saved = self.coefs.clone();
            let (mut max_move, was_sweep) = match (!confirming).then(|| self.newton_step(prev)).flatten() {
                Some(m) => (m.max(self.rebalance()), false),
                None => (self.sweep(&targets), true),
            };
            let mut now = self.objective();
            if now > prev {
                // Only rounding can get here; keep the trace monotone.
                self.coefs = saved;
                self.ws.reset_eta(&self.coefs);
                now = prev;
                max_move = 0.0;
            }
            trace.push(now);
            if watch_separation && self.max_slope() > SEPARATION_LIMIT {
                return (trace, false, iter, true);
            }
            let rel = (prev - now).abs() / prev.abs().max(1e-12);
            let small = rel <= self.options.objective_tolerance || max_move <= self.options.coordinate_tolerance;
            if small && was_sweep {
                return (trace, true, iter, false);
            }
            confirming = small;
        }
        let n = self.options.max_outer_iterations;
        (trace, false, n, false)
    }
}

/// Flat parameter vector `(c, beta, B row-major)`.
fn flatten(coefs: &CoefficientSet) -> Vec<f64> {
    let mut v = coefs.thresholds.clone();
    v.extend(coefs.shared.iter());
    v.extend(coefs.specific.iter());
    v
}

/// Minimizer over `[lo, hi]` (which must contain 0) of
/// `sum_i w_i e(a_i + s_i d)` with the elastic-net term `e`. Returns 0 unless
/// some `d` strictly lowers the sum.
fn penalty_line_min(terms: &[(f64, f64, f64)], alpha: f64, lo: f64, hi: f64) -> f64 {
    let f = |d: f64| -> f64 {
        terms
            .iter()
            .map(|&(a, s, w)| {
                let x = a + s * d;
                w * (alpha * x.abs() + 0.5 * (1.0 - alpha) * x * x)
            })
            .sum()
    };
    let mut kinks: Vec<f64> = terms.iter().filter(|t| t.1 != 0.0).map(|&(a, s, _)| -a / s).collect();
    kinks.sort_by(f64::total_cmp);
    let mut candidates = kinks.clone();
    if alpha < 1.0 {
        // Stationary point of the quadratic piece on each interval between kinks.
        let mut bounds = vec![f64::NEG_INFINITY];
        bounds.extend(&kinks);
        bounds.push(f64::INFINITY);
        for win in bounds.windows(2) {
            let mid = match (win[0].is_finite(), win[1].is_finite()) {
                (true, true) => 0.5 * (win[0] + win[1]),
                (true, false) => win[0] + 1.0,
                (false, true) => win[1] - 1.0,
                (false, false) => 0.0,
            };
            let (mut num, mut den) = (0.0, 0.0);
            for &(a, s, w) in terms {
                let sign = (a + s * mid).signum();
                num += w * (alpha * sign * s + (1.0 - alpha) * s * a);
                den += w * (1.0 - alpha) * s * s;
            }
            if den > 0.0 {
                candidates.push((-num / den).clamp(win[0], win[1]));
            }
        }
    }
    let f0 = f(0.0);
    let mut best = (0.0, f0);
    for d in candidates.into_iter().chain([lo, hi]) {
        let d = d.clamp(lo, hi);
        if !d.is_finite() {
            continue;
        }
        let v = f(d);
        if v < best.1 {
            best = (d, v);
        }
    }
    // Ignore moves whose gain is lost in rounding.
    if f0 - best.1 <= 1e-15 * f0.abs().max(1e-300) {
        0.0
    } else {
        best.0
    }
}

enum RowIter<'a> {
    All(usize, usize),
    Sparse(&'a [usize], &'a [f64], usize),
}

impl Iterator for RowIter<'_> {
    type Item = (usize, f64);
    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            RowIter::All(i, n) => {
                if *i < *n {
                    *i += 1;
                    Some((*i - 1, 1.0))
                } else {
                    None
                }
            }
            RowIter::Sparse(idx, val, pos) => {
                let out = idx.get(*pos).map(|&i| (i, val[*pos]));
                *pos += 1;
                out
            }
        }
    }
}

fn check_inputs(data: &OrdinalDataset, design: &DesignMatrix, hyper: &HyperParams, options: &FitOptions) -> Result<()> {
    hyper.validate()?;
    options.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data".into()));
    }
    if design.n_rows() != data.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, dataset has {}",
            design.n_rows(),
            data.len()
        )));
    }
    Ok(())
}

/// Group columns of `design` if each row has exactly one of them equal to 1
/// and the rest 0; empty otherwise.
fn one_hot_group(design: &DesignMatrix) -> Vec<usize> {
    let group = design.group_columns();
    if group.is_empty() {
        return group;
    }
    let one_hot = design.values.rows().into_iter().all(|row| {
        let mut ones = 0;
        for &l in &group {
            if row[l] == 1.0 {
                ones += 1;
            } else if row[l] != 0.0 {
                return false;
            }
        }
        ones == 1
    });
    if one_hot {
        group
    } else {
        Vec::new()
    }
}

fn enforce_restriction(coefs: &mut CoefficientSet, restriction: Restriction) {
    match restriction {
        Restriction::None => {}
        Restriction::Parallel => coefs.specific.fill(0.0),
        Restriction::NonParallel => coefs.shared.fill(0.0),
    }
}

fn solve(
    data: &OrdinalDataset,
    design: &DesignMatrix,
    hyper: HyperParams,
    options: &FitOptions,
    start: Option<&CoefficientSet>,
    watch_separation: bool,
) -> Result<(ModelFit, bool)> {
    let j = data.n_categories() - 1;
    let p = design.n_columns();
    let default_start = || CoefficientSet::intercept_only(intercept_only_thresholds(data), p);
    let mut warm = false;
    let mut coefs = match start {
        Some(s) if s.n_columns() == p && s.n_margins() == j => {
            warm = true;
            s.clone()
        }
        Some(_) => return Err(Error::Dimension("warm start does not match the design".into())),
        None => default_start(),
    };
    enforce_restriction(&mut coefs, options.restriction);
    let mut solver = Solver {
        ws: Workspace::new(data, design, &coefs),
        coefs,
        hyper,
        options: options.clone(),
        one_hot_group: one_hot_group(design),
        trial_losses: Vec::new(),
        multipliers: Vec::new(),
    };
    if warm && (solver.ws.loss().is_none() || !crate::model::validate_coefficients(&solver.coefs).is_empty()) {
        warm = false;
        solver.coefs = default_start();
        solver.ws.reset_eta(&solver.coefs);
    }
    let (trace, converged, n_iterations, diverged) = solver.run(watch_separation);
    Ok((
        ModelFit {
            coefs: solver.coefs,
            hyper,
            restriction: options.restriction,
            objective_trace: trace,
            converged,
            n_iterations,
            separation: false,
            warm_started: warm,
        },
        diverged,
    ))
}

/// Penalized semi-parallel fit. Requires `lambda > 0` unless a restriction
/// is set, in which case this delegates to [`fit_restricted`].
pub fn fit(data: &OrdinalDataset, design: &DesignMatrix, hyper: &HyperParams, options: &FitOptions) -> Result<ModelFit> {
    fit_from(data, design, hyper, options, None)
}

/// [`fit`] started from `start` instead of the intercept-only solution.
/// An infeasible start falls back to the default initialization.
pub fn fit_from(
    data: &OrdinalDataset,
    design: &DesignMatrix,
    hyper: &HyperParams,
    options: &FitOptions,
    start: Option<&CoefficientSet>,
) -> Result<ModelFit> {
    check_inputs(data, design, hyper, options)?;
    if options.restriction != Restriction::None {
        return fit_restricted_from(data, design, hyper, options, start);
    }
    if hyper.lambda == 0.0 {
        return Err(Error::Config(
            "the unrestricted semi-parallel model is not identifiable at lambda = 0".into(),
        ));
    }
    Ok(solve(data, design, *hyper, options, start, false)?.0)
}

/// Parallel (`B = 0`) or non-parallel (`beta = 0`) fit; `lambda = 0` is
/// allowed. An unpenalized fit whose slopes exceed [`SEPARATION_LIMIT`] is
/// refit with [`SEPARATION_RIDGE`] and flagged.
pub fn fit_restricted(
    data: &OrdinalDataset,
    design: &DesignMatrix,
    hyper: &HyperParams,
    options: &FitOptions,
) -> Result<ModelFit> {
    fit_restricted_from(data, design, hyper, options, None)
}

pub fn fit_restricted_from(
    data: &OrdinalDataset,
    design: &DesignMatrix,
    hyper: &HyperParams,
    options: &FitOptions,
    start: Option<&CoefficientSet>,
) -> Result<ModelFit> {
    check_inputs(data, design, hyper, options)?;
    if options.restriction == Restriction::None {
        return fit_from(data, design, hyper, options, start);
    }
    let unpenalized = hyper.lambda == 0.0;
    let (fit, diverged) = solve(data, design, *hyper, options, start, unpenalized)?;
    if !diverged {
        return Ok(fit);
    }
    let ridge = HyperParams {
        rho: hyper.rho.max(1.0),
        ..SEPARATION_RIDGE
    };
    let (mut refit, _) = solve(data, design, ridge, options, None, false)?;
    refit.separation = true;
    Ok(refit)
}

/// Largest violation of the elastic-net optimality conditions over all free
/// coordinates of `fit`: gradient stationarity for nonzero coefficients,
/// subgradient containment for zeros, plain stationarity for thresholds.
pub fn optimality_violation(data: &OrdinalDataset, design: &DesignMatrix, fit: &ModelFit) -> Result<f64> {
    let grad = crate::model::gradient(data, design, &fit.coefs)?;
    let mut worst: f64 = grad.thresholds.iter().fold(0.0, |m, g| m.max(g.abs()));
    let check = |theta: f64, g_loglik: f64, weight: f64| {
        let (l1, l2) = fit.hyper.coordinate_penalty(weight);
        let r = -g_loglik + l2 * theta;
        if theta != 0.0 {
            (r + l1 * theta.signum()).abs()
        } else {
            (r.abs() - l1).max(0.0)
        }
    };
    if fit.restriction != Restriction::NonParallel {
        for (t, g) in fit.coefs.shared.iter().zip(grad.shared.iter()) {
            worst = worst.max(check(*t, *g, fit.hyper.rho));
        }
    }
    if fit.restriction != Restriction::Parallel {
        for (t, g) in fit.coefs.specific.iter().zip(grad.specific.iter()) {
            worst = worst.max(check(*t, *g, 1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::objective;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, p: usize) -> (OrdinalDataset, DesignMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let y = (0..n)
            .map(|i| {
                let s: f64 = x.row(i).sum() + rng.random_range(-1.5..1.5);
                if s < -0.5 {
                    0
                } else if s < 0.5 {
                    1
                } else {
                    2
                }
            })
            .collect();
        let data = OrdinalDataset::from_responses(3, y, None).unwrap();
        (data, DesignMatrix::from_values(x))
    }

    #[test]
    fn intercept_only_matches_cumulative_logits() {
        let data = OrdinalDataset::from_responses(3, vec![0, 1, 1, 2, 2, 2, 1, 0, 2, 2], None).unwrap();
        let c = intercept_only_thresholds(&data);
        assert!((c[0] - logit(0.2)).abs() < 1e-15);
        assert!((c[1] - logit(0.5)).abs() < 1e-15);
    }

    #[test]
    fn lambda_zero_unrestricted_is_rejected() {
        let (data, design) = random_problem(1, 30, 2);
        let h = HyperParams::new(0.0, 0.5, 1.0).unwrap();
        assert!(matches!(fit(&data, &design, &h, &FitOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn trace_is_monotone_and_thresholds_ordered() {
        let (data, design) = random_problem(2, 80, 3);
        let h = HyperParams::new(0.01, 0.5, 1.0).unwrap();
        let f = fit(&data, &design, &h, &FitOptions::default()).unwrap();
        assert!(f.converged);
        for w in f.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!(crate::model::validate_coefficients(&f.coefs).is_empty());
        let recomputed = objective(&data, &design, &f.coefs, &h).unwrap();
        assert!((recomputed - f.final_objective()).abs() < 1e-12);
    }

    #[test]
    fn restrictions_zero_the_right_block() {
        let (data, design) = random_problem(3, 60, 2);
        let h = HyperParams::new(0.0, 0.5, 1.0).unwrap();
        let par = fit_restricted(&data, &design, &h, &FitOptions::default().with_restriction(Restriction::Parallel)).unwrap();
        assert!(par.coefs.specific.iter().all(|&v| v == 0.0));
        assert!(par.coefs.shared.iter().any(|&v| v != 0.0));
        let np =
            fit_restricted(&data, &design, &h, &FitOptions::default().with_restriction(Restriction::NonParallel)).unwrap();
        assert!(np.coefs.shared.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separation_triggers_ridge_refit() {
        // Every unit with x = 1 sits in the top category.
        let x = Array2::from_shape_vec((9, 1), vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let data = OrdinalDataset::from_responses(3, vec![0, 0, 1, 1, 2, 2, 2, 2, 2], None).unwrap();
        let design = DesignMatrix::from_values(x);
        let h = HyperParams::new(0.0, 0.5, 1.0).unwrap();
        let opts = FitOptions {
            max_outer_iterations: 5000,
            objective_tolerance: 1e-300,
            coordinate_tolerance: 1e-300,
            ..FitOptions::default().with_restriction(Restriction::Parallel)
        };
        let f = fit_restricted(&data, &design, &h, &opts).unwrap();
        assert!(f.separation);
        assert_eq!(f.hyper.lambda, SEPARATION_RIDGE.lambda);
    }

    #[test]
    fn huge_lambda_collapses_to_intercepts() {
        let (data, design) = random_problem(4, 100, 3);
        let h = HyperParams::new(1e6, 0.5, 1.0).unwrap();
        let f = fit(&data, &design, &h, &FitOptions::default()).unwrap();
        assert!(f.coefs.shared.iter().chain(f.coefs.specific.iter()).all(|&v| v == 0.0));
        let c = intercept_only_thresholds(&data);
        for (a, b) in c.iter().zip(&f.coefs.thresholds) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn warm_start_is_used_when_feasible() {
        let (data, design) = random_problem(5, 60, 2);
        let h = HyperParams::new(0.05, 0.5, 1.0).unwrap();
        let cold = fit(&data, &design, &h, &FitOptions::default()).unwrap();
        let warm = fit_from(&data, &design, &h, &FitOptions::default(), Some(&cold.coefs)).unwrap();
        assert!(warm.warm_started);
        assert!(warm.n_iterations <= cold.n_iterations);
    }

    #[test]
    fn line_minimizer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let alpha = [0.0, 0.5, 1.0][rng.random_range(0..3)];
            let terms: Vec<(f64, f64, f64)> = (0..rng.random_range(1..5))
                .map(|_| {
                    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    (rng.random_range(-2.0..2.0), s, rng.random_range(0.5..2.0))
                })
                .collect();
            let f = |d: f64| -> f64 {
                terms
                    .iter()
                    .map(|&(a, s, w)| {
                        let x = a + s * d;
                        w * (alpha * x.abs() + 0.5 * (1.0 - alpha) * x * x)
                    })
                    .sum()
            };
            let (lo, hi) = (-rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            let d = penalty_line_min(&terms, alpha, lo, hi);
            assert!((lo..=hi).contains(&d));
            let brute = (0..=6000).map(|k| lo + (hi - lo) * k as f64 / 6000.0).map(f).fold(f(0.0), f64::min);
            assert!(f(d) <= brute + 1e-12, "{} > {}", f(d), brute);
        }
    }

    #[test]
    fn one_hot_group_block_is_detected() {
        let x = Array2::from_shape_vec((3, 3), vec![0.5, 1.0, 0.0, -1.0, 0.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
        let mut design = DesignMatrix::from_values(x);
        assert!(one_hot_group(&design).is_empty());
        design.columns[1].role = crate::design::ColumnRole::Group;
        design.columns[2].role = crate::design::ColumnRole::Group;
        assert_eq!(one_hot_group(&design), vec![1, 2]);
        design.values[[0, 2]] = 1.0;
        assert!(one_hot_group(&design).is_empty());
    }

    #[test]
    fn semi_parallel_fit_satisfies_optimality() {
        for seed in 0..5 {
            let (data, design) = random_problem(20 + seed, 80, 3);
            let h = HyperParams::new(0.01, 0.5, 1.0).unwrap();
            let f = fit(&data, &design, &h, &FitOptions::default()).unwrap();
            assert!(f.converged);
            assert!(optimality_violation(&data, &design, &f).unwrap() < 1e-4);
        }
    }
}
