//! Anderson mixing for fixed-point iterations `x ← g(x)`.
//!
//! With memory `m` the next iterate combines the last `m` residual
//! differences so as to minimize the linearized residual. The history is
//! dropped whenever the residual grows, which falls back to a plain step.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::linalg::lu_solve;
use crate::real::Real;

pub(crate) struct Anderson<T: Real> {
    memory: usize,
    dx: VecDeque<DVector<T>>,
    dr: VecDeque<DVector<T>>,
    last: Option<(DVector<T>, DVector<T>, T)>,
}

impl<T: Real> Anderson<T> {
    pub(crate) fn new(memory: usize) -> Self {
        Anderson {
            memory,
            dx: VecDeque::with_capacity(memory + 1),
            dr: VecDeque::with_capacity(memory + 1),
            last: None,
        }
    }

    /// Next iterate from the current one and its residual `r = g(x) − x`.
    pub(crate) fn next(&mut self, x: &DVector<T>, r: &DVector<T>) -> DVector<T> {
        if self.memory == 0 {
            return x + r;
        }
        let norm = r.dot(r);
        if let Some((xp, rp, np)) = self.last.take() {
            if norm > np {
                self.dx.clear();
                self.dr.clear();
            } else {
                self.dx.push_back(x - xp);
                self.dr.push_back(r - rp);
                if self.dx.len() > self.memory {
                    self.dx.pop_front();
                    self.dr.pop_front();
                }
            }
        }
        self.last = Some((x.clone(), r.clone(), norm));
        if self.dr.is_empty() {
            return x + r;
        }
        match self.coefficients(r) {
            Some(gamma) => {
                let mut out = x + r;
                for (g, (dx, dr)) in gamma.iter().zip(self.dx.iter().zip(&self.dr)) {
                    out -= (dx + dr) * *g;
                }
                out
            }
            None => {
                self.dx.clear();
                self.dr.clear();
                x + r
            }
        }
    }

    // Least-squares γ minimizing ‖r − ΔR γ‖ through the (lightly damped)
    // normal equations.
    fn coefficients(&self, r: &DVector<T>) -> Option<DVector<T>> {
        let m = self.dr.len();
        let mut a = DMatrix::from_fn(m, m, |i, j| self.dr[i].dot(&self.dr[j]));
        let b = DMatrix::from_fn(m, 1, |i, _| self.dr[i].dot(r));
        let damping = T::from_f64(1e-12);
        for i in 0..m {
            a[(i, i)] = a[(i, i)] * (T::one() + damping);
        }
        let gamma = lu_solve(&a, &b).ok()?;
        gamma.iter().all(|g| g.is_finite()).then(|| gamma.column(0).into_owned())
    }
}
