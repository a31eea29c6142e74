//! No-U-turn sampler with multinomial trajectory sampling and a diagonal
//! Euclidean metric.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::scalar::{log_sum_exp, Scalar};

/// Energy error beyond which a trajectory is declared divergent.
const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point<T> {
    pub q: Vec<T>,
    pub p: Vec<T>,
    pub grad: Vec<T>,
    pub logp: T,
}

impl<T: Scalar> Point<T> {
    pub(crate) fn new<D: LogDensity<T> + ?Sized>(target: &D, q: Vec<T>) -> Self {
        let mut grad = vec![T::zero(); q.len()];
        let logp = target.logp_and_grad(&q, &mut grad);
        Self {
            p: vec![T::zero(); q.len()],
            q,
            grad,
            logp,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Transition<T> {
    pub point: Point<T>,
    pub accept_stat: f64,
    pub divergent: bool,
    pub depth: u32,
    pub n_leapfrog: u32,
    pub energy: f64,
}

pub(crate) struct Nuts<'a, T, D: ?Sized> {
    target: &'a D,
    pub inv_metric: Vec<T>,
    pub step_size: T,
    max_depth: u32,
    rng: ChaCha8Rng,
    divergent: bool,
}

fn criterion<T: Scalar>(p_sharp_minus: &[T], p_sharp_plus: &[T], rho: &[T]) -> bool {
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y);
    dot(p_sharp_plus, rho) > T::zero() && dot(p_sharp_minus, rho) > T::zero()
}

fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

impl<'a, T: Scalar, D: LogDensity<T> + ?Sized> Nuts<'a, T, D> {
    pub(crate) fn new(target: &'a D, max_depth: u32, rng: ChaCha8Rng) -> Self {
        Self {
            target,
            inv_metric: vec![T::one(); target.dim()],
            step_size: T::one(),
            max_depth,
            rng,
            divergent: false,
        }
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn hamiltonian(&self, z: &Point<T>) -> T {
        let kinetic = z
            .p
            .iter()
            .zip(&self.inv_metric)
            .fold(T::zero(), |s, (p, m)| s + *p * *p * *m);
        let h = -z.logp + T::lit(0.5) * kinetic;
        if h.is_nan() {
            T::infinity()
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[T]) -> Vec<T> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| *p * *m).collect()
    }

    fn sample_momentum(&mut self, z: &mut Point<T>) {
        for i in 0..z.p.len() {
            let n: f64 = self.rng.sample(StandardNormal);
            z.p[i] = T::lit(n) / self.inv_metric[i].sqrt();
        }
    }

    fn leapfrog(&self, z: &mut Point<T>, eps: T) {
        let half = eps * T::lit(0.5);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * *g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * *m * *p;
        }
        z.logp = self.target.logp_and_grad(&z.q, &mut z.grad);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * *g;
        }
    }

    /// Doubles or halves the step size until a single leapfrog step crosses
    /// an acceptance probability of 0.8.
    pub(crate) fn init_step_size(&mut self, z: &Point<T>) {
        let threshold = T::lit(0.8f64.ln());
        let trial = |this: &mut Self| {
            let mut w = z.clone();
            this.sample_momentum(&mut w);
            let h0 = this.hamiltonian(&w);
            this.leapfrog(&mut w, this.step_size);
            h0 - this.hamiltonian(&w)
        };
        let direction_up = trial(self) > threshold;
        loop {
            let delta_h = trial(self);
            if direction_up && !(delta_h > threshold) || !direction_up && !(delta_h < threshold) {
                break;
            }
            self.step_size = if direction_up {
                self.step_size * T::lit(2.0)
            } else {
                self.step_size * T::lit(0.5)
            };
            if self.step_size > T::lit(1e7) || self.step_size == T::zero() {
                log::warn!(
                    "step size search stopped at {}; the target may be improper or degenerate",
                    self.step_size
                );
                self.step_size = self.step_size.max(T::min_positive_value()).min(T::lit(1e7));
                break;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: u32,
        z: &mut Point<T>,
        z_propose: &mut Point<T>,
        p_sharp_beg: &mut Vec<T>,
        p_sharp_end: &mut Vec<T>,
        rho: &mut [T],
        p_beg: &mut Vec<T>,
        p_end: &mut Vec<T>,
        h0: T,
        eps: T,
        n_leapfrog: &mut u32,
        log_sum_weight: &mut T,
        sum_metro_prob: &mut T,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, eps);
            *n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > T::lit(MAX_DELTA_H) {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            *sum_metro_prob += if h0 - h > T::zero() { T::one() } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += *p;
            }
            p_beg.clone_from(&z.p);
            p_end.clone_from(&z.p);
            return !self.divergent;
        }

        let n = z.q.len();
        let mut lsw_init = T::neg_infinity();
        let mut p_init_end = vec![T::zero(); n];
        let mut p_sharp_init_end = vec![T::zero(); n];
        let mut rho_init = vec![T::zero(); n];
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            eps,
            n_leapfrog,
            &mut lsw_init,
            sum_metro_prob,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut lsw_final = T::neg_infinity();
        let mut p_final_beg = vec![T::zero(); n];
        let mut p_sharp_final_beg = vec![T::zero(); n];
        let mut rho_final = vec![T::zero(); n];
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            eps,
            n_leapfrog,
            &mut lsw_final,
            sum_metro_prob,
        ) {
            return false;
        }

        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp().as_f64();
            if self.uniform() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += *s;
        }
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &add(&rho_init, &p_final_beg));
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &add(&rho_final, &p_init_end));
        persist
    }

    /// One NUTS transition from `z` (position, gradient and log density are
    /// used; momentum is resampled).
    pub(crate) fn transition(&mut self, mut z: Point<T>) -> Transition<T> {
        self.divergent = false;
        self.sample_momentum(&mut z);
        let n = z.q.len();

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let mut p_fwd_fwd = z.p.clone();
        let mut p_sharp_fwd_fwd = self.p_sharp(&z.p);
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp_fwd_fwd.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp_fwd_fwd.clone();
        let mut p_bck_bck = z.p.clone();
        let mut p_sharp_bck_bck = p_sharp_fwd_fwd.clone();

        let mut rho = z.p.clone();
        let mut log_sum_weight = T::zero();
        let h0 = self.hamiltonian(&z);
        let mut n_leapfrog = 0u32;
        let mut sum_metro_prob = T::zero();
        let mut depth = 0u32;

        while depth < self.max_depth {
            let mut rho_fwd = vec![T::zero(); n];
            let mut rho_bck = vec![T::zero(); n];
            let mut lsw_subtree = T::neg_infinity();
            let valid = if self.uniform() > 0.5 {
                let mut w = z_fwd.clone();
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let valid = self.build_tree(
                    depth,
                    &mut w,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    self.step_size,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro_prob,
                );
                z_fwd = w;
                valid
            } else {
                let mut w = z_bck.clone();
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                let valid = self.build_tree(
                    depth,
                    &mut w,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -self.step_size,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro_prob,
                );
                z_bck = w;
                valid
            };
            if !valid {
                break;
            }
            depth += 1;

            if lsw_subtree > log_sum_weight {
                z_sample.clone_from(&z_propose);
            } else {
                let accept = (lsw_subtree - log_sum_weight).exp().as_f64();
                if self.uniform() < accept {
                    z_sample.clone_from(&z_propose);
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }

        let accept_stat = if n_leapfrog > 0 {
            (sum_metro_prob / T::from_u32(n_leapfrog).unwrap()).as_f64()
        } else {
            0.0
        };
        let energy = self.hamiltonian(&z_sample).as_f64();
        Transition {
            point: z_sample,
            accept_stat,
            divergent: self.divergent,
            depth,
            n_leapfrog,
            energy,
        }
    }
}
