//! Classical fourth-order Runge–Kutta over a flat state vector.

/// Reusable stage buffers for one state dimension.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
        }
    }

    /// Advances `x` from `t` to `t + h` under `ẋ = f(t, x)`.
    pub fn step<F>(&mut self, mut f: F, t: f64, h: f64, x: &mut [f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let Rk4 { k1, k2, k3, k4, stage } = self;
        f(t, x, k1);
        for i in 0..x.len() {
            stage[i] = x[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, stage, k2);
        for i in 0..x.len() {
            stage[i] = x[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, stage, k3);
        for i in 0..x.len() {
            stage[i] = x[i] + h * k3[i];
        }
        f(t + h, stage, k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fourth_order() {
        let solve = |h: f64| {
            let mut rk = Rk4::new(1);
            let mut x = [1.0];
            let n = (1.0 / h).round() as usize;
            for s in 0..n {
                rk.step(|_, x, dx| dx[0] = -x[0], s as f64 * h, h, &mut x);
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = solve(0.1) / solve(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn time_dependent_rhs_is_exact_for_cubics() {
        // ẋ = 3t² integrates exactly
        let mut rk = Rk4::new(1);
        let mut x = [0.0];
        rk.step(|t, _, dx| dx[0] = 3.0 * t * t, 0.0, 2.0, &mut x);
        assert!((x[0] - 8.0).abs() < 1e-12);
    }
}
