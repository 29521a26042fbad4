//! Quasi-Newton minimization with a strong Wolfe line search.
//!
//! [`minimize_fn`] works on any smooth objective `x -> (f, g)`; an `Err` from
//! the objective marks the point infeasible, which the line search treats as
//! `f = +inf` and backs away from. [`train`] wires the DC loss into it.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dc::{DcParameters, Provenance};
use crate::error::{Error, Result};
use crate::loss::{Evaluator, LossValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Lbfgs,
    Bfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    GradTol,
    MaxIter,
    LineSearchFail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    /// Stop when the infinity norm of the gradient is at most this.
    pub grad_tolerance: f64,
    pub max_iterations: usize,
    pub lbfgs_memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::Lbfgs,
            grad_tolerance: 1e-6,
            max_iterations: 200_000,
            lbfgs_memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidArgument("line search needs 0 < c1 < c2 < 1".into()));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::InvalidArgument("gradient tolerance must be positive".into()));
        }
        if self.lbfgs_memory == 0 || self.max_line_search == 0 {
            return Err(Error::InvalidArgument("memory and line-search trials must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub n_evaluations: usize,
    /// `(iteration, f)` at the start point and at every accepted iterate.
    pub trajectory: Vec<(usize, f64)>,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Counter<F> {
    f: F,
    evals: usize,
}

/// A trial point. `g` is empty when the objective rejected the point.
struct Trial {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Counter<F> {
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.evals += 1;
        match (self.f)(x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Some((f, g)),
            Ok(_) => None,
            Err(e) => {
                log::debug!("trial point rejected: {e}");
                None
            }
        }
    }

    fn trial(&mut self, x: &[f64], d: &[f64], alpha: f64) -> Trial {
        let xt: Vec<f64> = x.iter().zip(d).map(|(x, d)| x + alpha * d).collect();
        match self.eval(&xt) {
            Some((f, g)) => {
                let dg = dot(&g, d);
                Trial { alpha, f, g, dg }
            }
            None => Trial { alpha, f: f64::INFINITY, g: Vec::new(), dg: f64::NAN },
        }
    }
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, or `None`
/// when it does not exist.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Strong Wolfe line search along `d` from `x` (bracketing then zoom).
fn line_search<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>>(
    obj: &mut Counter<F>,
    x: &[f64],
    f0: f64,
    dg0: f64,
    d: &[f64],
    alpha0: f64,
    cfg: &OptimizerConfig,
) -> Option<Trial> {
    let armijo = |t: &Trial| t.f <= f0 + cfg.c1 * t.alpha * dg0;
    let curvature = |t: &Trial| t.dg.abs() <= -cfg.c2 * dg0;
    let mut prev = Trial { alpha: 0.0, f: f0, g: Vec::new(), dg: dg0 };
    let mut alpha = alpha0;
    let mut trials = 0;
    let (mut lo, mut hi);
    loop {
        if trials == cfg.max_line_search {
            return None;
        }
        trials += 1;
        let t = obj.trial(x, d, alpha);
        if !armijo(&t) || (trials > 1 && t.f >= prev.f) {
            lo = prev;
            hi = t;
            break;
        }
        if curvature(&t) {
            return Some(t);
        }
        if t.dg >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        alpha = 2.0 * t.alpha;
        prev = t;
    }
    // zoom: lo always satisfies Armijo and has the lowest f seen
    loop {
        if trials == cfg.max_line_search {
            return (lo.alpha > 0.0).then_some(lo);
        }
        trials += 1;
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        let guess = if hi.f.is_finite() && hi.dg.is_finite() {
            cubic_min(lo.alpha, lo.f, lo.dg, hi.alpha, hi.f, hi.dg)
        } else {
            None
        };
        // keep the new point well inside the bracket
        let alpha = match guess {
            Some(t) if t > a + 0.1 * width && t < b - 0.1 * width => t,
            _ if hi.f.is_finite() => 0.5 * (a + b),
            // infeasible end: back off sharply towards lo
            _ => lo.alpha + 0.1 * (hi.alpha - lo.alpha),
        };
        if width <= f64::EPSILON * b.max(1.0) {
            return (lo.alpha > 0.0).then_some(lo);
        }
        let t = obj.trial(x, d, alpha);
        if !armijo(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Some(t);
            }
            if t.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient, or an error
/// for points outside its domain.
pub fn minimize_fn<F>(x0: &[f64], f: F, cfg: &OptimizerConfig) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut obj = Counter { f, evals: 0 };
    obj.evals += 1;
    let (mut fx, mut g) = (obj.f)(x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("objective is not finite at the start point".into()));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut trajectory = vec![(0, fx)];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.lbfgs_memory);
    let mut h_inv: Vec<f64> = match cfg.method {
        Method::Bfgs => (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect(),
        Method::Lbfgs => Vec::new(),
    };
    let mut bfgs_scaled = false;
    let mut iterations = 0;

    let termination = loop {
        if inf_norm(&g) <= cfg.grad_tolerance {
            break Termination::GradTol;
        }
        if iterations >= cfg.max_iterations {
            break Termination::MaxIter;
        }
        let mut d = match cfg.method {
            Method::Lbfgs => two_loop(&g, &memory),
            Method::Bfgs => (0..n).map(|i| -dot(&h_inv[i * n..(i + 1) * n], &g)).collect(),
        };
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            // curvature information went bad: restart from steepest descent
            memory.clear();
            if cfg.method == Method::Bfgs {
                for (k, v) in h_inv.iter_mut().enumerate() {
                    *v = if k % (n + 1) == 0 { 1.0 } else { 0.0 };
                }
                bfgs_scaled = false;
            }
            d = g.iter().map(|v| -v).collect();
            dg = dot(&d, &g);
        }
        let first = memory.is_empty() && (cfg.method == Method::Lbfgs || !bfgs_scaled);
        let alpha0 = if first { (1.0 / dot(&d, &d).sqrt()).min(1.0) } else { 1.0 };
        let Some(step) = line_search(&mut obj, &x, fx, dg, &d, alpha0, cfg) else {
            break Termination::LineSearchFail;
        };
        let s: Vec<f64> = d.iter().map(|v| step.alpha * v).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        fx = step.f;
        g = step.g;
        iterations += 1;
        trajectory.push((iterations, fx));

        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            match cfg.method {
                Method::Lbfgs => {
                    if memory.len() == cfg.lbfgs_memory {
                        memory.pop_front();
                    }
                    memory.push_back((s, y, 1.0 / sy));
                }
                Method::Bfgs => {
                    if !bfgs_scaled {
                        let scale = sy / dot(&y, &y);
                        h_inv.iter_mut().for_each(|v| *v *= scale);
                        bfgs_scaled = true;
                    }
                    bfgs_update(&mut h_inv, &s, &y, sy);
                }
            }
        }
    };
    Ok(MinimizeResult {
        grad_inf_norm: inf_norm(&g),
        x,
        f: fx,
        iterations,
        n_evaluations: obj.evals,
        trajectory,
        termination,
    })
}

/// L-BFGS search direction `-H g`.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; memory.len()];
    for (k, (s, y, rho)) in memory.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    if let Some((s, y, _)) = memory.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for (k, (s, y, rho)) in memory.iter().enumerate() {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alphas[k] - beta) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`, row-major.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub method: Method,
    pub config: OptimizerConfig,
    pub initial_provenance: Provenance,
    pub initial_train: LossValue,
    pub loss_trajectory: Vec<TrajectoryPoint>,
    pub final_train: LossValue,
    pub final_test: Option<LossValue>,
    pub iterations: usize,
    pub function_evaluations: usize,
    pub gradient_evaluations: usize,
    pub final_grad_inf_norm: f64,
    pub wall_time_s: f64,
    pub termination: Termination,
    #[serde(skip)]
    pub params: Option<DcParameters>,
}

impl TrainingReport {
    pub fn params(&self) -> &DcParameters {
        self.params.as_ref().expect("report produced by train")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_trajectory_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "iteration,train_loss")?;
        for p in &self.loss_trajectory {
            writeln!(w, "{},{:e}", p.iteration, p.train_loss)?;
        }
        Ok(())
    }
}

/// Fits `init` to the training scenarios of `train`. The optimizer runs on
/// the compressed form of `train` (see [`Evaluator::compress`]); reported
/// losses are computed on the full scenario set.
pub fn train(
    init: &DcParameters,
    train: &Evaluator,
    test: Option<&Evaluator>,
    cfg: &OptimizerConfig,
    provenance: Provenance,
) -> Result<TrainingReport> {
    let started = Instant::now();
    let initial_train = train.loss(init)?;
    let fit = train.compress();
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (l, g) = fit.loss_and_gradient(&init.with_vector(x, provenance))?;
        Ok((l.sq_two_norm, g.to_vector()))
    };
    let res = minimize_fn(&init.to_vector(), objective, cfg)?;
    let params = init.with_vector(&res.x, provenance);
    let final_train = train.loss(&params)?;
    let final_test = test.map(|t| t.loss(&params)).transpose()?;
    log::info!(
        "{:?}: {} iterations, train loss {:.6e} -> {:.6e} ({:?})",
        cfg.method,
        res.iterations,
        initial_train.sq_two_norm,
        final_train.sq_two_norm,
        res.termination
    );
    Ok(TrainingReport {
        method: cfg.method,
        config: *cfg,
        initial_provenance: init.provenance,
        initial_train,
        loss_trajectory: res
            .trajectory
            .iter()
            .map(|&(iteration, train_loss)| TrajectoryPoint { iteration, train_loss })
            .collect(),
        final_train,
        final_test,
        iterations: res.iterations,
        function_evaluations: res.n_evaluations,
        gradient_evaluations: res.n_evaluations,
        final_grad_inf_norm: res.grad_inf_norm,
        wall_time_s: started.elapsed().as_secs_f64(),
        termination: res.termination,
        params: Some(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(target: Vec<f64>, weights: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let mut f = 0.0;
            let g = x
                .iter()
                .zip(&target)
                .zip(&weights)
                .map(|((x, t), w)| {
                    f += w * (x - t) * (x - t);
                    2.0 * w * (x - t)
                })
                .collect();
            Ok((f, g))
        }
    }

    #[test]
    fn quadratic_self_test_both_methods() {
        let target: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        for method in [Method::Lbfgs, Method::Bfgs] {
            let cfg = OptimizerConfig { method, grad_tolerance: 1e-10, ..Default::default() };
            let res = minimize_fn(&vec![0.0; 12], quadratic(target.clone(), vec![1.0; 12]), &cfg).unwrap();
            assert_eq!(res.termination, Termination::GradTol);
            assert!(res.iterations <= 24);
            for (x, t) in res.x.iter().zip(&target) {
                assert!((x - t).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn ill_scaled_quadratic() {
        let target = vec![1.0, -2.0, 3.0, 0.5];
        let w = vec![1.0, 100.0, 0.01, 10.0];
        for method in [Method::Lbfgs, Method::Bfgs] {
            let cfg = OptimizerConfig { method, grad_tolerance: 1e-12, ..Default::default() };
            let res = minimize_fn(&[0.0; 4], quadratic(target.clone(), w.clone()), &cfg).unwrap();
            assert_eq!(res.termination, Termination::GradTol, "{method:?}");
            for (x, t) in res.x.iter().zip(&target) {
                assert!((x - t).abs() <= 1e-8, "{method:?} {x} {t}");
            }
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((v, g))
        };
        let res = minimize_fn(&[-1.2, 1.0], f, &OptimizerConfig::default()).unwrap();
        assert_eq!(res.termination, Termination::GradTol);
        assert!((res.x[0] - 1.0).abs() < 1e-5 && (res.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn stationary_start_takes_no_steps() {
        let res = minimize_fn(&[2.0, 3.0], quadratic(vec![2.0, 3.0], vec![1.0, 1.0]), &Default::default())
            .unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.x, vec![2.0, 3.0]);
        assert_eq!(res.termination, Termination::GradTol);
    }

    #[test]
    fn accepted_iterates_never_increase() {
        let target: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let w: Vec<f64> = (0..8).map(|i| 1.0 + i as f64 * 5.0).collect();
        let res = minimize_fn(&[0.0; 8], quadratic(target, w), &Default::default()).unwrap();
        assert!(res.trajectory.windows(2).all(|p| p[1].1 <= p[0].1));
    }

    #[test]
    fn infeasible_region_is_backed_away_from() {
        // the unit first step from 1.5 lands at 0.5, outside the domain
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] <= 0.95 {
                return Err(Error::InvalidArgument("outside domain".into()));
            }
            Ok(((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)]))
        };
        let res = minimize_fn(&[1.5], f, &OptimizerConfig::default()).unwrap();
        assert_eq!(res.termination, Termination::GradTol);
        assert!((res.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap() {
        let cfg = OptimizerConfig { max_iterations: 1, grad_tolerance: 1e-14, ..Default::default() };
        let w: Vec<f64> = (0..5).map(|i| 10f64.powi(i)).collect();
        let res = minimize_fn(&[1.0; 5], quadratic(vec![0.0; 5], w), &cfg).unwrap();
        assert_eq!(res.termination, Termination::MaxIter);
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = OptimizerConfig { c1: 0.95, ..Default::default() };
        assert!(minimize_fn(&[0.0], quadratic(vec![0.0], vec![1.0]), &cfg).is_err());
    }
}
