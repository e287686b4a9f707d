//! Fixed-step classical Runge-Kutta.

use nalgebra::DVector;

use crate::error::Result;

/// One RK4 step of `ẋ = f(t, x)`. The derivative may fail (singular
/// configurations), in which case the error is propagated unchanged.
pub fn rk4_step<F>(t: f64, x: &DVector<f64>, dt: f64, mut f: F) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let half = 0.5 * dt;
    let k1 = f(t, x)?;
    let k2 = f(t + half, &(x + &k1 * half))?;
    let k3 = f(t + half, &(x + &k2 * half))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
}
