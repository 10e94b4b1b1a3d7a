//! Self-contained No-U-Turn sampler: leapfrog integration, iterative
//! multinomial tree doubling with the generalized U-turn criterion,
//! dual-averaging step-size adaptation, and windowed diagonal mass-matrix
//! estimation.
//!
//! Tree building is iterative: leaves are generated left to right in the
//! integration direction and completed subtrees are merged from an explicit
//! stack, checking the U-turn condition at every merge. Proposals are drawn
//! multinomially (weight `exp(-energy error)`) within subtrees and with the
//! progressive biased rule across doublings.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DsemError, Result};

/// Energy error beyond which a leaf is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Log-density with gradient, evaluated on the unconstrained space.
/// Implementations may return negative infinity for impossible states.
pub trait Target {
    fn dim(&self) -> usize;
    /// Write the gradient into `grad` and return the log density.
    fn logp_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

/// Position, momentum, and cached density information.
#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    /// Hamiltonian with a diagonal (inverse) mass matrix.
    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        let kinetic: f64 =
            self.p.iter().zip(inv_mass).map(|(&p, &im)| 0.5 * p * p * im).sum();
        -self.logp + kinetic
    }
}

/// One leapfrog step of size `eps` (sign gives the direction).
pub fn leapfrog<T: Target + ?Sized>(
    target: &T,
    point: &PhasePoint,
    eps: f64,
    inv_mass: &[f64],
) -> PhasePoint {
    let dim = point.q.len();
    let mut p_half = vec![0.0; dim];
    for k in 0..dim {
        p_half[k] = point.p[k] + 0.5 * eps * point.grad[k];
    }
    let mut q = vec![0.0; dim];
    for k in 0..dim {
        q[k] = point.q[k] + eps * inv_mass[k] * p_half[k];
    }
    let mut grad = vec![0.0; dim];
    let logp = target.logp_grad(&q, &mut grad);
    let mut p = p_half;
    for k in 0..dim {
        p[k] += 0.5 * eps * grad[k];
    }
    PhasePoint { q, p, grad, logp }
}

/// Outcome of one NUTS transition.
#[derive(Debug, Clone)]
pub struct TransitionInfo {
    pub accept_stat: f64,
    pub depth: usize,
    pub divergent: bool,
    pub n_leapfrog: usize,
    pub energy: f64,
    pub step_size: f64,
}

/// Sampler options.
#[derive(Debug, Clone)]
pub struct NutsOptions {
    pub max_depth: usize,
    pub target_accept: f64,
    /// Diagonal inverse mass supplied by the caller; adaptation then only
    /// tunes the step size.
    pub fixed_inv_mass: Option<Vec<f64>>,
}

impl Default for NutsOptions {
    fn default() -> Self {
        NutsOptions { max_depth: 10, target_accept: 0.8, fixed_inv_mass: None }
    }
}

/// Warmup window schedule: a fast interval adapting only the step size,
/// doubling slow windows estimating the mass matrix, and a terminal fast
/// interval. Frozen afterwards.
#[derive(Debug, Clone)]
pub struct WarmupSchedule {
    pub total: usize,
    pub init_buffer: usize,
    pub term_buffer: usize,
    pub base_window: usize,
}

impl WarmupSchedule {
    pub fn new(total: usize) -> Result<Self> {
        if total < 150 {
            return Err(DsemError::config(format!(
                "warmup length {total} is too short; at least 150 iterations are required"
            )));
        }
        Ok(WarmupSchedule { total, init_buffer: 75, term_buffer: 50, base_window: 25 })
    }

    fn in_slow_phase(&self, iter: usize) -> bool {
        iter >= self.init_buffer && iter < self.total - self.term_buffer
    }

    /// Whether `iter` (0-based) closes a slow window.
    fn closes_window(&self, iter: usize) -> bool {
        if !self.in_slow_phase(iter) {
            return false;
        }
        let slow_end = self.total - self.term_buffer;
        let mut start = self.init_buffer;
        let mut size = self.base_window;
        loop {
            let mut end = start + size;
            // The last window swallows the remainder of the slow phase.
            if end + 2 * size > slow_end {
                end = slow_end;
            }
            if iter + 1 == end {
                return true;
            }
            if iter + 1 < end {
                return false;
            }
            start = end;
            size *= 2;
        }
    }
}

/// Dual-averaging accumulators and the running mass-matrix estimate.
#[derive(Debug, Clone)]
pub struct AdaptState {
    pub step_size: f64,
    log_eps_bar: f64,
    h_bar: f64,
    da_count: u64,
    mu: f64,
    pub inv_mass: Vec<f64>,
    welford_n: u64,
    welford_mean: Vec<f64>,
    welford_m2: Vec<f64>,
    pub schedule: WarmupSchedule,
    pub frozen: bool,
    target_accept: f64,
    adapt_mass: bool,
}

const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;

impl AdaptState {
    pub fn new(
        dim: usize,
        step_size: f64,
        options: &NutsOptions,
        schedule: WarmupSchedule,
    ) -> Result<Self> {
        if step_size <= 0.0 {
            return Err(DsemError::config("step size must be positive"));
        }
        let (inv_mass, adapt_mass) = match &options.fixed_inv_mass {
            Some(m) => {
                if m.len() != dim || m.iter().any(|&v| !(v > 0.0)) {
                    return Err(DsemError::config(
                        "fixed inverse mass must be positive with one entry per dimension",
                    ));
                }
                (m.clone(), false)
            }
            None => (vec![1.0; dim], true),
        };
        Ok(AdaptState {
            step_size,
            log_eps_bar: step_size.ln(),
            h_bar: 0.0,
            da_count: 0,
            mu: (10.0 * step_size).ln(),
            inv_mass,
            welford_n: 0,
            welford_mean: vec![0.0; dim],
            welford_m2: vec![0.0; dim],
            schedule,
            frozen: false,
            target_accept: options.target_accept,
            adapt_mass,
        })
    }

    fn restart_step_size(&mut self, step_size: f64) {
        self.step_size = step_size;
        self.log_eps_bar = step_size.ln();
        self.h_bar = 0.0;
        self.da_count = 0;
        self.mu = (10.0 * step_size).ln();
    }

    fn dual_averaging_update(&mut self, accept_stat: f64) {
        self.da_count += 1;
        let m = self.da_count as f64;
        let eta_h = 1.0 / (m + DA_T0);
        self.h_bar = (1.0 - eta_h) * self.h_bar + eta_h * (self.target_accept - accept_stat);
        let log_eps = self.mu - m.sqrt() / DA_GAMMA * self.h_bar;
        let eta = m.powf(-DA_KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        self.step_size = log_eps.exp();
    }

    fn welford_update(&mut self, q: &[f64]) {
        self.welford_n += 1;
        let n = self.welford_n as f64;
        for k in 0..q.len() {
            let delta = q[k] - self.welford_mean[k];
            self.welford_mean[k] += delta / n;
            self.welford_m2[k] += delta * (q[k] - self.welford_mean[k]);
        }
    }

    fn finish_window(&mut self) -> bool {
        if !self.adapt_mass || self.welford_n < 5 {
            self.welford_n = 0;
            self.welford_mean.fill(0.0);
            self.welford_m2.fill(0.0);
            return false;
        }
        let n = self.welford_n as f64;
        for k in 0..self.inv_mass.len() {
            let var = self.welford_m2[k] / (n - 1.0);
            // Shrink towards a unit scale for stability in short windows.
            self.inv_mass[k] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
        }
        self.welford_n = 0;
        self.welford_mean.fill(0.0);
        self.welford_m2.fill(0.0);
        true
    }

    /// Freeze adaptation at the averaged step size.
    fn freeze(&mut self) {
        self.step_size = self.log_eps_bar.exp();
        self.frozen = true;
    }
}

/// A completed subtree on the merge stack.
struct Subtree {
    depth: usize,
    // Endpoints in trajectory order (inner = closer to the start).
    inner: PhasePoint,
    outer: PhasePoint,
    log_weight: f64,
    proposal_q: Vec<f64>,
    proposal_logp: f64,
    proposal_grad: Vec<f64>,
}

enum SubtreeResult {
    Valid(Subtree),
    Divergent,
    Turning,
}

fn is_uturn(inner: &PhasePoint, outer: &PhasePoint, inv_mass: &[f64], direction: f64) -> bool {
    // Span from inner to outer along the integration direction.
    let mut dot_inner = 0.0;
    let mut dot_outer = 0.0;
    for k in 0..inner.q.len() {
        let dq = direction * (outer.q[k] - inner.q[k]);
        dot_inner += dq * inv_mass[k] * inner.p[k];
        dot_outer += dq * inv_mass[k] * outer.p[k];
    }
    !(dot_inner.is_finite() && dot_outer.is_finite()) || dot_inner < 0.0 || dot_outer < 0.0
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

/// Accumulators shared across the whole transition.
struct TransitionStats {
    sum_metro: f64,
    n_leaves: usize,
    n_leapfrog: usize,
}

/// Build a subtree of `2^depth` leaves starting one step beyond `from`,
/// merging completed subtrees from an explicit stack and checking the
/// U-turn condition at every merge.
#[allow(clippy::too_many_arguments)]
fn build_subtree<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    from: &PhasePoint,
    depth: usize,
    direction: f64,
    eps: f64,
    inv_mass: &[f64],
    h0: f64,
    stats: &mut TransitionStats,
    rng: &mut R,
) -> SubtreeResult {
    let n_leaves = 1usize << depth;
    let mut stack: Vec<Subtree> = Vec::with_capacity(depth + 1);
    let mut current = from.clone();

    for _ in 0..n_leaves {
        let next = leapfrog(target, &current, direction * eps, inv_mass);
        stats.n_leapfrog += 1;
        let h = next.hamiltonian(inv_mass);
        let energy_error = h - h0;
        let metro = if energy_error.is_finite() { (-energy_error).exp().min(1.0) } else { 0.0 };
        stats.sum_metro += metro;
        stats.n_leaves += 1;
        if !energy_error.is_finite() || energy_error > DIVERGENCE_THRESHOLD {
            return SubtreeResult::Divergent;
        }
        current = next.clone();
        let leaf = Subtree {
            depth: 0,
            inner: next.clone(),
            outer: next.clone(),
            log_weight: -energy_error,
            proposal_q: next.q,
            proposal_logp: next.logp,
            proposal_grad: next.grad,
        };
        stack.push(leaf);
        // Merge equal-depth neighbors.
        while stack.len() >= 2 && stack[stack.len() - 1].depth == stack[stack.len() - 2].depth {
            let hi = stack.pop().expect("stack has two entries");
            let mut lo = stack.pop().expect("stack has two entries");
            let log_weight = log_sum_exp(lo.log_weight, hi.log_weight);
            // Multinomial selection between the two halves.
            let p_hi = (hi.log_weight - log_weight).exp();
            if rng.gen::<f64>() < p_hi {
                lo.proposal_q = hi.proposal_q;
                lo.proposal_logp = hi.proposal_logp;
                lo.proposal_grad = hi.proposal_grad;
            }
            lo.outer = hi.outer;
            lo.log_weight = log_weight;
            lo.depth += 1;
            if is_uturn(&lo.inner, &lo.outer, inv_mass, direction) {
                return SubtreeResult::Turning;
            }
            stack.push(lo);
        }
    }
    debug_assert_eq!(stack.len(), 1);
    SubtreeResult::Valid(stack.pop().expect("one merged subtree remains"))
}

/// One multinomial-NUTS transition from `point` (which must carry a valid
/// cached density). Returns the new point and transition statistics.
pub fn nuts_transition<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    point: &PhasePoint,
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut R,
) -> (PhasePoint, TransitionInfo) {
    let dim = point.q.len();
    let mut start = point.clone();
    for k in 0..dim {
        let z: f64 = rng.sample(StandardNormal);
        start.p[k] = z / inv_mass[k].sqrt();
    }
    let h0 = start.hamiltonian(inv_mass);

    // Trajectory endpoints: backward (direction -1) and forward (+1).
    let mut backward = start.clone();
    let mut forward = start.clone();
    let mut proposal_q = start.q.clone();
    let mut proposal_logp = start.logp;
    let mut proposal_grad = start.grad.clone();
    let mut log_weight_total = 0.0_f64; // weight exp(-(H-H0)) = 1 at the start
    let mut stats = TransitionStats { sum_metro: 0.0, n_leaves: 0, n_leapfrog: 0 };
    let mut divergent = false;
    let mut depth = 0;

    while depth < max_depth {
        let direction: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let from = if direction > 0.0 { forward.clone() } else { backward.clone() };
        match build_subtree(
            target, &from, depth, direction, eps, inv_mass, h0, &mut stats, rng,
        ) {
            SubtreeResult::Divergent => {
                divergent = true;
                break;
            }
            SubtreeResult::Turning => break,
            SubtreeResult::Valid(tree) => {
                // Progressive biased sampling across doublings.
                let log_ratio = tree.log_weight - log_weight_total;
                if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
                    proposal_q = tree.proposal_q.clone();
                    proposal_logp = tree.proposal_logp;
                    proposal_grad = tree.proposal_grad.clone();
                }
                log_weight_total = log_sum_exp(log_weight_total, tree.log_weight);
                if direction > 0.0 {
                    forward = tree.outer.clone();
                } else {
                    backward = tree.outer.clone();
                }
                depth += 1;
                // U-turn check across the whole trajectory (backward endpoint
                // to forward endpoint along +1).
                if is_uturn(&backward, &forward, inv_mass, 1.0) {
                    break;
                }
            }
        }
    }

    let accept_stat =
        if stats.n_leaves > 0 { stats.sum_metro / stats.n_leaves as f64 } else { 0.0 };
    let new_point = PhasePoint {
        q: proposal_q,
        p: vec![0.0; dim],
        grad: proposal_grad,
        logp: proposal_logp,
    };
    let energy = -new_point.logp;
    (
        new_point,
        TransitionInfo {
            accept_stat,
            depth,
            divergent,
            n_leapfrog: stats.n_leapfrog,
            energy,
            step_size: eps,
        },
    )
}

/// Step-size search: double or halve until the one-step acceptance crosses
/// one half.
pub fn find_initial_step_size<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    point: &PhasePoint,
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let dim = point.q.len();
    let mut start = point.clone();
    for k in 0..dim {
        let z: f64 = rng.sample(StandardNormal);
        start.p[k] = z / inv_mass[k].sqrt();
    }
    let h0 = start.hamiltonian(inv_mass);
    let mut eps = 1.0_f64;
    let step = leapfrog(target, &start, eps, inv_mass);
    let mut delta = h0 - step.hamiltonian(inv_mass);
    if !delta.is_finite() {
        delta = f64::NEG_INFINITY;
    }
    let dir: f64 = if delta > (0.5_f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..64 {
        let step = leapfrog(target, &start, eps, inv_mass);
        let mut delta = h0 - step.hamiltonian(inv_mass);
        if !delta.is_finite() {
            delta = f64::NEG_INFINITY;
        }
        if dir * delta <= dir * (0.5_f64).ln() {
            break;
        }
        eps *= 2.0_f64.powf(dir);
        if !(1e-10..=1e6).contains(&eps) {
            break;
        }
    }
    eps
}

/// One chain's NUTS state: current position plus adaptation.
pub struct NutsChain {
    pub point: PhasePoint,
    pub adapt: AdaptState,
    pub options: NutsOptions,
}

impl NutsChain {
    /// Initialize at `q0`, choosing a starting step size by the doubling
    /// heuristic.
    pub fn new<T: Target + ?Sized, R: Rng + ?Sized>(
        target: &T,
        q0: Vec<f64>,
        options: NutsOptions,
        warmup: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = q0.len();
        if dim != target.dim() {
            return Err(DsemError::config("initial point does not match the target dimension"));
        }
        let mut grad = vec![0.0; dim];
        let logp = target.logp_grad(&q0, &mut grad);
        if !logp.is_finite() {
            return Err(DsemError::numerical(
                "log density is not finite at the initial point",
            ));
        }
        let point = PhasePoint { q: q0, p: vec![0.0; dim], grad, logp };
        let schedule = WarmupSchedule::new(warmup)?;
        let mut adapt = AdaptState::new(dim, 1.0, &options, schedule)?;
        let eps = find_initial_step_size(target, &point, &adapt.inv_mass, rng);
        adapt.restart_step_size(eps);
        Ok(NutsChain { point, adapt, options })
    }

    /// Run one transition. `iter` counts all iterations from zero; warmup
    /// adaptation applies while `iter < warmup`, after which the step size
    /// freezes at its averaged value.
    ///
    /// The target may change between calls (the hybrid sampler refreshes the
    /// pseudo-data each sweep); the cached density is re-evaluated.
    pub fn step<T: Target + ?Sized, R: Rng + ?Sized>(
        &mut self,
        target: &T,
        iter: usize,
        rng: &mut R,
    ) -> Result<TransitionInfo> {
        self.point.logp = target.logp_grad(&self.point.q, &mut self.point.grad);
        if !self.point.logp.is_finite() {
            return Err(DsemError::numerical(format!(
                "log density became non-finite at the current state (iteration {iter})"
            )));
        }
        let (new_point, info) = nuts_transition(
            target,
            &self.point,
            self.adapt.step_size,
            &self.adapt.inv_mass,
            self.options.max_depth,
            rng,
        );
        self.point = new_point;

        let warmup = self.adapt.schedule.total;
        if iter < warmup {
            self.adapt.dual_averaging_update(info.accept_stat);
            if self.adapt.schedule.in_slow_phase(iter) {
                self.adapt.welford_update(&self.point.q);
                if self.adapt.schedule.closes_window(iter) && self.adapt.finish_window() {
                    // Restart dual averaging around the current step size;
                    // it is a good guess under the refreshed mass matrix.
                    let eps = self.adapt.step_size;
                    self.adapt.restart_step_size(eps);
                }
            }
            if iter + 1 == warmup {
                self.adapt.freeze();
            }
        }
        Ok(info)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    /// Standard normal in `dim` dimensions.
    struct StdNormal {
        dim: usize,
    }

    impl Target for StdNormal {
        fn dim(&self) -> usize {
            self.dim
        }
        fn logp_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for k in 0..self.dim {
                lp += -0.5 * q[k] * q[k];
                grad[k] = -q[k];
            }
            lp
        }
    }

    /// Independent normal with given variances.
    struct DiagNormal {
        var: Vec<f64>,
    }

    impl Target for DiagNormal {
        fn dim(&self) -> usize {
            self.var.len()
        }
        fn logp_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for k in 0..q.len() {
                lp += -0.5 * q[k] * q[k] / self.var[k];
                grad[k] = -q[k] / self.var[k];
            }
            lp
        }
    }

    struct Flat {
        dim: usize,
    }

    impl Target for Flat {
        fn dim(&self) -> usize {
            self.dim
        }
        fn logp_grad(&self, _q: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            0.0
        }
    }

    fn point_at<T: Target>(target: &T, q: Vec<f64>, p: Vec<f64>) -> PhasePoint {
        let mut grad = vec![0.0; q.len()];
        let logp = target.logp_grad(&q, &mut grad);
        PhasePoint { q, p, grad, logp }
    }

    #[test]
    fn leapfrog_is_time_reversible() {
        let target = StdNormal { dim: 3 };
        let inv_mass = vec![1.0, 0.5, 2.0];
        let start = point_at(&target, vec![0.3, -1.1, 0.7], vec![0.5, 0.2, -0.9]);
        let mut fwd = start.clone();
        for _ in 0..25 {
            fwd = leapfrog(&target, &fwd, 0.1, &inv_mass);
        }
        // Negate momentum and integrate back.
        let mut back = fwd.clone();
        for p in back.p.iter_mut() {
            *p = -*p;
        }
        for _ in 0..25 {
            back = leapfrog(&target, &back, 0.1, &inv_mass);
        }
        for k in 0..3 {
            assert!((back.q[k] - start.q[k]).abs() < 1e-12);
            assert!((back.p[k] + start.p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn leapfrog_energy_error_scales_second_order() {
        let target = StdNormal { dim: 1 };
        let inv_mass = vec![1.0];
        // Sub-unit-energy start: the leapfrog energy wobble for the harmonic
        // oscillator is eps^2/4 times the energy.
        let error_for = |eps: f64| -> f64 {
            let mut point = point_at(&target, vec![0.8], vec![0.3]);
            let h0 = point.hamiltonian(&inv_mass);
            let mut worst = 0.0_f64;
            let steps = (10.0 / eps).round() as usize;
            for _ in 0..steps {
                point = leapfrog(&target, &point, eps, &inv_mass);
                worst = worst.max((point.hamiltonian(&inv_mass) - h0).abs());
            }
            worst
        };
        let e1 = error_for(0.1);
        let e2 = error_for(0.025);
        assert!(e1 < 1e-3, "energy error at eps=0.1 was {e1}");
        let ratio = e1 / e2;
        assert!((10.0..26.0).contains(&ratio), "O(eps^2) scaling violated: ratio {ratio}");
    }

    #[test]
    fn zero_gradient_gives_pure_drift() {
        let target = Flat { dim: 2 };
        let inv_mass = vec![2.0, 0.5];
        let start = point_at(&target, vec![1.0, -1.0], vec![0.3, 0.8]);
        let next = leapfrog(&target, &start, 0.7, &inv_mass);
        assert!((next.q[0] - (1.0 + 0.7 * 2.0 * 0.3)).abs() < 1e-15);
        assert!((next.q[1] - (-1.0 + 0.7 * 0.5 * 0.8)).abs() < 1e-15);
        assert_eq!(next.p, start.p);
    }

    #[test]
    fn leapfrog_preserves_phase_space_volume() {
        // The leapfrog map for a Gaussian target is linear, so finite
        // differences recover its Jacobian exactly.
        let target = StdNormal { dim: 2 };
        let inv_mass = vec![1.0, 0.7];
        let eps = 0.37;
        let f = |x: &[f64]| -> Vec<f64> {
            let point = point_at(&target, vec![x[0], x[1]], vec![x[2], x[3]]);
            let out = leapfrog(&target, &point, eps, &inv_mass);
            vec![out.q[0], out.q[1], out.p[0], out.p[1]]
        };
        let x0 = vec![0.2, -0.4, 0.9, 0.1];
        let h = 1e-5;
        let mut jac = nalgebra::DMatrix::zeros(4, 4);
        for c in 0..4 {
            let mut xp = x0.clone();
            xp[c] += h;
            let mut xm = x0.clone();
            xm[c] -= h;
            let fp = f(&xp);
            let fm = f(&xm);
            for r in 0..4 {
                jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let det: f64 = jac.determinant();
        assert!((det - 1.0).abs() < 1e-10, "volume not preserved: det {det}");
    }

    #[test]
    fn transitions_are_bit_reproducible() {
        let target = StdNormal { dim: 4 };
        let run = || -> Vec<f64> {
            let mut rng = substream(5, &[0]);
            let mut chain =
                NutsChain::new(&target, vec![0.1; 4], NutsOptions::default(), 200, &mut rng)
                    .unwrap();
            for iter in 0..300 {
                let mut r = substream(5, &[iter as u64 + 1]);
                chain.step(&target, iter, &mut r).unwrap();
            }
            chain.point.q.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn standard_normal_moments_and_acceptance() {
        let target = StdNormal { dim: 5 };
        let mut rng = substream(6, &[0]);
        let warmup = 500;
        let keep = 4000;
        let mut chain =
            NutsChain::new(&target, vec![0.5; 5], NutsOptions::default(), warmup, &mut rng)
                .unwrap();
        let mut draws: Vec<Vec<f64>> = Vec::with_capacity(keep);
        let mut accept_sum = 0.0;
        let mut divergences = 0usize;
        for iter in 0..warmup + keep {
            let mut r = substream(6, &[iter as u64 + 1]);
            let info = chain.step(&target, iter, &mut r).unwrap();
            if iter >= warmup {
                draws.push(chain.point.q.clone());
                accept_sum += info.accept_stat;
                divergences += usize::from(info.divergent);
            }
        }
        let accept = accept_sum / keep as f64;
        assert!((accept - 0.8).abs() < 0.05, "realized acceptance {accept}");
        assert!(
            (divergences as f64) < 0.001 * keep as f64,
            "divergence rate too high: {divergences}/{keep}"
        );
        for k in 0..5 {
            let xs: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            let m = crate::testutil::mean(&xs);
            let v = crate::testutil::variance(&xs);
            assert!(m.abs() < 0.08, "mean[{k}] = {m}");
            assert!((v - 1.0).abs() < 0.12, "var[{k}] = {v}");
        }
    }

    #[test]
    fn normal_target_passes_chi_squared_gof() {
        let target = StdNormal { dim: 1 };
        let mut rng = substream(7, &[0]);
        let warmup = 300;
        let keep = 10_000;
        let mut chain =
            NutsChain::new(&target, vec![0.0], NutsOptions::default(), warmup, &mut rng).unwrap();
        let mut draws = Vec::with_capacity(keep);
        for iter in 0..warmup + keep {
            let mut r = substream(7, &[iter as u64 + 1]);
            chain.step(&target, iter, &mut r).unwrap();
            if iter >= warmup {
                draws.push(chain.point.q[0]);
            }
        }
        // 20 equiprobable bins.
        let bins = 20usize;
        let mut counts = vec![0usize; bins];
        for &x in &draws {
            let u = crate::linalg::norm_cdf(x);
            let b = ((u * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let expected = keep as f64 / bins as f64;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // MCMC draws are autocorrelated, which inflates chi-squared; a very
        // loose ceiling still catches distributional bugs. The p > 0.001
        // cutoff for 19 dof is 43.8.
        assert!(chi2 < 150.0, "chi-squared statistic {chi2}");
    }

    #[test]
    fn mass_adaptation_recovers_scales() {
        let target = DiagNormal { var: vec![1.0, 100.0] };
        let mut rng = substream(8, &[0]);
        let warmup = 1000;
        let mut chain =
            NutsChain::new(&target, vec![0.1, 0.1], NutsOptions::default(), warmup, &mut rng)
                .unwrap();
        for iter in 0..warmup {
            let mut r = substream(8, &[iter as u64 + 1]);
            chain.step(&target, iter, &mut r).unwrap();
        }
        let m = &chain.adapt.inv_mass;
        assert!(m[0] > 0.5 && m[0] < 2.0, "inv mass[0] = {}", m[0]);
        assert!(m[1] > 50.0 && m[1] < 200.0, "inv mass[1] = {}", m[1]);
    }

    #[test]
    fn fixed_mass_is_left_untouched() {
        let target = DiagNormal { var: vec![1.0, 25.0] };
        let mut rng = substream(9, &[0]);
        let options = NutsOptions {
            fixed_inv_mass: Some(vec![1.0, 25.0]),
            ..NutsOptions::default()
        };
        let mut chain =
            NutsChain::new(&target, vec![0.0, 0.0], options, 400, &mut rng).unwrap();
        for iter in 0..400 {
            let mut r = substream(9, &[iter as u64 + 1]);
            chain.step(&target, iter, &mut r).unwrap();
        }
        assert_eq!(chain.adapt.inv_mass, vec![1.0, 25.0]);
        assert!(chain.adapt.frozen);
        assert!(chain.adapt.step_size > 0.0);
    }

    #[test]
    fn warmup_shorter_than_minimum_is_rejected() {
        assert!(WarmupSchedule::new(149).is_err());
        assert!(WarmupSchedule::new(150).is_ok());
    }

    #[test]
    fn higher_target_acceptance_is_honored() {
        let target = StdNormal { dim: 3 };
        let mut rng = substream(10, &[0]);
        let options = NutsOptions { target_accept: 0.95, ..NutsOptions::default() };
        let warmup = 600;
        let keep = 2000;
        let mut chain =
            NutsChain::new(&target, vec![0.2; 3], options, warmup, &mut rng).unwrap();
        let mut accept_sum = 0.0;
        for iter in 0..warmup + keep {
            let mut r = substream(10, &[iter as u64 + 1]);
            let info = chain.step(&target, iter, &mut r).unwrap();
            if iter >= warmup {
                accept_sum += info.accept_stat;
            }
        }
        let accept = accept_sum / keep as f64;
        assert!((accept - 0.95).abs() < 0.04, "realized acceptance {accept}");
    }
}
