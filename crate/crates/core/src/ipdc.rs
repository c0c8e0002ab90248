//! Majorized inexact proximal DC iterations.
//!
//! For `theta = g + p - q` with `g` smooth, `p` and `q` convex, each step
//! linearizes `q` at `x_k` through a subgradient `xi_k`, majorizes `g` by a
//! quadratic with operator `G`, adds a proximal term with operator `T`, and
//! solves the resulting convex problem approximately. Whenever `G + 2T` is
//! positive semidefinite the objective then drops by at least
//! `(1/2) ||x_{k+1} - x_k||^2_{G + 2T}`. The loop checks this inequality at
//! every step and tightens the subproblem accuracy when it fails.

use crate::error::Result;

/// One problem instance of the engine.
pub trait DcModel {
    type Point: Clone;
    type Subgradient;

    /// `theta(x)`.
    fn objective(&self, x: &Self::Point) -> f64;

    /// A subgradient of the concave part's negation `q` at `x`.
    fn concave_subgradient(&mut self, x: &Self::Point) -> Result<Self::Subgradient>;

    /// Approximate minimizer of the majorized subproblem at `x` with
    /// linearization `xi`. Smaller `accuracy` asks for a more exact solve.
    fn solve_majorized(&mut self, x: &Self::Point, xi: &Self::Subgradient, accuracy: f64) -> Result<Self::Point>;

    /// Guaranteed objective decrease between consecutive iterates.
    fn guaranteed_decrease(&self, from: &Self::Point, to: &Self::Point) -> f64;

    /// Norm used by the stopping rule.
    fn step_norm(&self, from: &Self::Point, to: &Self::Point) -> f64;

    /// Called with each accepted iterate.
    fn accepted(&mut self, _x: &Self::Point) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpdcOptions {
    /// Stop once the step norm is at most this.
    pub eta: f64,
    pub max_iter: usize,
    /// Allowed excess over the guaranteed decrease, absorbing inexact solves.
    pub slack: f64,
    /// Subproblem accuracy at the first iteration.
    pub accuracy_start: f64,
    /// Floor of the geometric accuracy schedule.
    pub accuracy_end: f64,
    pub accuracy_factor: f64,
    /// Re-solves with tenfold tighter accuracy after a failed descent check.
    pub retries: usize,
}

impl Default for IpdcOptions {
    fn default() -> Self {
        Self {
            eta: 1e-5,
            max_iter: 200,
            slack: 1e-6,
            accuracy_start: 1e-4,
            accuracy_end: 1e-7,
            accuracy_factor: 0.1,
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The step vanished exactly: the iterate is a critical point.
    FixedPoint,
    /// The step norm fell to `eta`.
    SmallStep,
    MaxIter,
    /// No step passed the descent check even at the tightest accuracy.
    DescentStall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpdcRecord {
    /// Objective after the step.
    pub objective: f64,
    pub step_norm: f64,
    /// Actual decrease `theta(x_k) - theta(x_{k+1})`.
    pub decrease: f64,
    /// The guaranteed decrease for this step.
    pub required: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct IpdcOutcome<P> {
    pub x: P,
    pub initial_objective: f64,
    pub records: Vec<IpdcRecord>,
    pub stop: StopReason,
}

/// Runs the iterations from `x0`. Only steps passing the descent check are accepted.
pub fn ipdc<M: DcModel>(model: &mut M, x0: M::Point, opts: &IpdcOptions) -> Result<IpdcOutcome<M::Point>> {
    let mut x = x0;
    let mut obj = model.objective(&x);
    let initial_objective = obj;
    let mut records = Vec::new();
    let mut accuracy = opts.accuracy_start;
    let mut stop = StopReason::MaxIter;

    for _ in 0..opts.max_iter {
        let xi = model.concave_subgradient(&x)?;
        let mut acc = accuracy;
        let mut accepted = None;
        for attempt in 0..=opts.retries {
            let cand = model.solve_majorized(&x, &xi, acc)?;
            let cand_obj = model.objective(&cand);
            let required = model.guaranteed_decrease(&x, &cand);
            if cand_obj <= obj - required + opts.slack {
                accepted = Some((cand, cand_obj, required));
                break;
            }
            if attempt < opts.retries {
                acc *= 0.1;
            }
        }
        let Some((next, next_obj, required)) = accepted else {
            stop = StopReason::DescentStall;
            break;
        };
        let step = model.step_norm(&x, &next);
        model.accepted(&next);
        records.push(IpdcRecord {
            objective: next_obj,
            step_norm: step,
            decrease: obj - next_obj,
            required,
            accuracy: acc,
        });
        x = next;
        obj = next_obj;
        accuracy = (accuracy * opts.accuracy_factor).max(opts.accuracy_end);
        if step == 0.0 {
            stop = StopReason::FixedPoint;
            break;
        }
        if step <= opts.eta {
            stop = StopReason::SmallStep;
            break;
        }
    }
    Ok(IpdcOutcome { x, initial_objective, records, stop })
}

/// Upper bound on the number of iterations needed to reach a step of `eta`
/// when each step decreases the objective by at least `(a/2) ||step||^2`:
/// `ceil(2 (theta_0 - theta_min) / (a eta^2)) + 1`.
pub fn iteration_bound(initial: f64, best: f64, a: f64, eta: f64) -> f64 {
    (2.0 * (initial - best).max(0.0) / (a * eta * eta)).ceil() + 1.0
}
