//! Continuous plant under zero-order hold, integrated with the
//! Bogacki–Shampine 3(2) embedded pair.

use serde::{Deserialize, Serialize};

use crate::dynamics::{HamiltonianState, MechanicalModel};
use crate::error::IntegrationError;
use crate::linalg::vec;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantTolerances<T> {
    pub rtol: T,
    pub atol: T,
}

impl<T: Scalar> Default for PlantTolerances<T> {
    fn default() -> Self {
        Self {
            rtol: T::c(1e-6),
            atol: T::c(1e-9),
        }
    }
}

impl<T: Scalar> PlantTolerances<T> {
    pub fn new(rtol: T, atol: T) -> Self {
        Self { rtol, atol }
    }
}

/// Right-hand side of `q̇ = M⁻¹p`, `ṗ = −∇_q H + u` on the stacked state.
pub fn plant_rhs<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    y: &[T],
    u: &[T],
) -> Result<Vec<T>, IntegrationError> {
    let n = model.dof();
    let (q, p) = y.split_at(n);
    let mass = model.mass_matrix(q);
    let a = mass.solve(p)?;
    let mut out = Vec::with_capacity(2 * n);
    out.extend_from_slice(&a);
    let grad_v = model.potential_gradient(q);
    let half = T::c(0.5);
    for i in 0..n {
        let kinetic = if model.has_constant_mass() {
            T::zero()
        } else {
            -half * model.mass_matrix_partial(q, i).quad_form(&a, &a)
        };
        out.push(u[i] - grad_v[i] - kinetic);
    }
    Ok(out)
}

/// Adaptive propagator that remembers its last accepted step between calls.
#[derive(Clone, Debug)]
pub struct PlantPropagator<T> {
    pub tol: PlantTolerances<T>,
    next_step: Option<T>,
    steps_taken: usize,
    steps_rejected: usize,
}

impl<T: Scalar> PlantPropagator<T> {
    pub fn new(tol: PlantTolerances<T>) -> Self {
        Self {
            tol,
            next_step: None,
            steps_taken: 0,
            steps_rejected: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn steps_rejected(&self) -> usize {
        self.steps_rejected
    }

    /// Integrates from `state.t` to exactly `state.t + h` with `u` held.
    pub fn advance<M: MechanicalModel<T> + ?Sized>(
        &mut self,
        model: &M,
        state: &HamiltonianState<T>,
        u: &[T],
        h: T,
    ) -> Result<HamiltonianState<T>, IntegrationError> {
        let y = self.advance_ode(
            |y: &[T], _t: T| plant_rhs(model, y, u),
            &state.to_vector(),
            state.t,
            h,
        )?;
        Ok(HamiltonianState::from_vector(&y, state.t + h))
    }

    /// Integrates `ẏ = f(y, t)` from `t` to exactly `t + h`.
    pub fn advance_ode<F>(
        &mut self,
        mut f: F,
        y0: &[T],
        t0: T,
        h: T,
    ) -> Result<Vec<T>, IntegrationError>
    where
        F: FnMut(&[T], T) -> Result<Vec<T>, IntegrationError>,
    {
        assert!(h > T::zero(), "interval must be positive");
        let dim = y0.len();
        let t_end = t0 + h;
        let min_step = T::c(1e-14) * h;
        let mut t = t0;
        let mut y = y0.to_vec();
        let mut dt = self.next_step.unwrap_or(h).min(h);
        let mut k1 = f(&y, t)?;

        let (c2, c3) = (T::c(0.5), T::c(0.75));
        let (b1, b2, b3) = (T::c(2.0 / 9.0), T::c(1.0 / 3.0), T::c(4.0 / 9.0));
        let (e1, e2, e3, e4) = (
            T::c(-5.0 / 72.0),
            T::c(1.0 / 12.0),
            T::c(1.0 / 9.0),
            T::c(-1.0 / 8.0),
        );
        let safety = T::c(0.9);
        let (shrink_min, grow_max) = (T::c(0.2), T::c(5.0));
        let third = T::c(1.0 / 3.0);

        loop {
            let remaining = t_end - t;
            if remaining <= T::zero() {
                break;
            }
            let last = dt >= remaining * (T::one() - T::c(1e-12));
            let step = if last { remaining } else { dt };

            let y2 = vec::axpy(&y, c2 * step, &k1);
            let k2 = f(&y2, t + c2 * step)?;
            let y3 = vec::axpy(&y, c3 * step, &k2);
            let k3 = f(&y3, t + c3 * step)?;
            let y_new: Vec<T> = (0..dim)
                .map(|i| y[i] + step * (b1 * k1[i] + b2 * k2[i] + b3 * k3[i]))
                .collect();
            if !vec::is_finite(&y_new) {
                return Err(IntegrationError::NonFinite {
                    t: t.to_f64_lossy(),
                });
            }
            let t_new = if last { t_end } else { t + step };
            let k4 = f(&y_new, t_new)?;

            let mut err = T::zero();
            for i in 0..dim {
                let e = step * (e1 * k1[i] + e2 * k2[i] + e3 * k3[i] + e4 * k4[i]);
                let scale = self.tol.atol + self.tol.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max(e.abs() / scale);
            }

            let factor = if err == T::zero() {
                grow_max
            } else {
                (safety * err.powf(-third)).max(shrink_min).min(grow_max)
            };
            if err <= T::one() {
                t = t_new;
                y = y_new;
                k1 = k4;
                self.steps_taken += 1;
                if !last {
                    dt = step * factor;
                } else {
                    // keep the unclipped estimate for the next interval
                    dt = dt.max(step * factor).min(dt * grow_max);
                }
            } else {
                self.steps_rejected += 1;
                dt = step * factor;
                if dt < min_step {
                    return Err(IntegrationError::StepSizeUnderflow {
                        t: t.to_f64_lossy(),
                        step: dt.to_f64_lossy(),
                        min: min_step.to_f64_lossy(),
                    });
                }
            }
        }
        self.next_step = Some(dt);
        Ok(y)
    }
}

/// Advances the continuous plant over one sampling interval with `u_held`
/// constant, at relative tolerance 1e-6 and absolute tolerance 1e-9.
pub fn propagate_plant<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    state: &HamiltonianState<T>,
    u_held: &[T],
    h: T,
) -> Result<HamiltonianState<T>, IntegrationError> {
    PlantPropagator::new(PlantTolerances::default()).advance(model, state, u_held, h)
}

/// Same as [`propagate_plant`] with explicit tolerances.
pub fn propagate_plant_with<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    state: &HamiltonianState<T>,
    u_held: &[T],
    h: T,
    tol: PlantTolerances<T>,
) -> Result<HamiltonianState<T>, IntegrationError> {
    PlantPropagator::new(tol).advance(model, state, u_held, h)
}

/// One implicit-midpoint step of the plant with `u` held: the discrete
/// sampling model, as opposed to the continuous plant.
pub fn midpoint_sampling_step<T: Scalar, M: MechanicalModel<T> + ?Sized>(
    model: &M,
    state: &HamiltonianState<T>,
    u: &[T],
    h: T,
    cfg: &crate::integrators::NewtonConfig<T>,
) -> Result<HamiltonianState<T>, IntegrationError> {
    let n = model.dof();
    let rhs = |y: &[T], _t: T| plant_rhs(model, y, u).unwrap_or_else(|_| vec![T::nan(); 2 * n]);
    let x = state.to_vector();
    let (next, _) = crate::integrators::implicit_midpoint_step(
        rhs,
        None::<fn(&[T], T) -> crate::linalg::Matrix<T>>,
        &x,
        state.t,
        h,
        cfg,
        None,
    )?;
    Ok(HamiltonianState::from_vector(&next, state.t + h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{mass_spring_model, two_link_model, MassSpringParams, TwoLinkParams};

    #[test]
    fn harmonic_oscillator_period() {
        // m = 1, k = 4: period π, exact solution cos 2t
        let model = mass_spring_model(MassSpringParams::new(1.0, 4.0).unwrap());
        let mut prop = PlantPropagator::new(PlantTolerances::new(1e-9, 1e-12));
        let mut s = HamiltonianState::new(vec![1.0], vec![0.0], 0.0);
        for _ in 0..10 {
            s = prop
                .advance(&model, &s, &[0.0], std::f64::consts::PI / 10.0)
                .unwrap();
        }
        assert!((s.q[0] - 1.0).abs() < 1e-5 && s.p[0].abs() < 1e-5, "{s:?}");
        assert!((s.t - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_held() {
        // hanging arm with zero input stays put
        let model = two_link_model(TwoLinkParams::<f64>::benchmark());
        let s = HamiltonianState::at_rest(vec![std::f64::consts::PI, 0.0], 0.0);
        let next =
            propagate_plant_with(&model, &s, &[0.0, 0.0], 1.0, PlantTolerances::default()).unwrap();
        assert!(vec::norm_inf(&vec::sub(&next.to_vector(), &s.to_vector())) < 1e-9);
    }

    #[test]
    fn matches_fine_rk4() {
        let model = two_link_model(TwoLinkParams::<f64>::benchmark());
        let u = [0.05, -0.02];
        let y0 = [2.0, 0.5, 0.01, -0.003];
        let rk4_step = |y: &[f64], dt: f64| {
            let f = |z: &[f64]| plant_rhs(&model, z, &u).unwrap();
            let k1 = f(y);
            let k2 = f(&vec::axpy(y, dt / 2.0, &k1));
            let k3 = f(&vec::axpy(y, dt / 2.0, &k2));
            let k4 = f(&vec::axpy(y, dt, &k3));
            (0..y.len())
                .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect::<Vec<_>>()
        };
        let mut y = y0.to_vec();
        for _ in 0..20_000 {
            y = rk4_step(&y, 1e-4);
        }
        let s = HamiltonianState::from_vector(&y0, 0.0);
        let got =
            propagate_plant_with(&model, &s, &u, 2.0, PlantTolerances::new(1e-10, 1e-12)).unwrap();
        assert!(vec::norm_inf(&vec::sub(&got.to_vector(), &y)) < 1e-7);
    }

    #[test]
    fn sampling_step_is_second_order_accurate() {
        let model = mass_spring_model(MassSpringParams::new(1.0, 1.0).unwrap());
        let s = HamiltonianState::new(vec![1.0], vec![0.0], 0.0);
        let cfg = crate::integrators::NewtonConfig {
            abs_tol: 1e-14,
            ..Default::default()
        };
        let err = |h: f64| {
            let m = midpoint_sampling_step(&model, &s, &[0.0], h, &cfg).unwrap();
            // the p error h³/12 dominates; q is off by h⁴/12 from rest
            (m.q[0] - h.cos()).abs().max((m.p[0] + h.sin()).abs())
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio.log2() - 3.0).abs() < 0.1, "{ratio}");
    }
}
