//! Classical fixed-step fourth-order Runge-Kutta.

/// Reusable RK4 workspace for systems of a fixed size.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            stage: vec![0.0; len],
        }
    }

    /// Advances `y` from `t` to `t + h` in place. `rhs(t, y, dy)` writes the
    /// derivative into `dy`.
    pub fn step<F>(&mut self, rhs: &mut F, t: f64, y: &mut [f64], h: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        debug_assert_eq!(n, self.k1.len());
        rhs(t, y, &mut self.k1);
        for i in 0..n {
            self.stage[i] = y[i] + 0.5 * h * self.k1[i];
        }
        rhs(t + 0.5 * h, &self.stage, &mut self.k2);
        for i in 0..n {
            self.stage[i] = y[i] + 0.5 * h * self.k2[i];
        }
        rhs(t + 0.5 * h, &self.stage, &mut self.k3);
        for i in 0..n {
            self.stage[i] = y[i] + h * self.k3[i];
        }
        rhs(t + h, &self.stage, &mut self.k4);
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
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
            let mut y = [1.0];
            let steps = (1.0 / h).round() as usize;
            for i in 0..steps {
                rk.step(&mut |_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0], i as f64 * h, &mut y, h);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = solve(0.1) / solve(0.05);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn harmonic_oscillator_keeps_energy() {
        let mut rk = Rk4::new(2);
        let mut y = [1.0, 0.0];
        let h = 1e-3;
        for i in 0..10_000 {
            rk.step(&mut |_, y: &[f64], dy: &mut [f64]| { dy[0] = y[1]; dy[1] = -y[0]; }, i as f64 * h, &mut y, h);
        }
        assert!((y[0] * y[0] + y[1] * y[1] - 1.0).abs() < 1e-12);
        assert!((y[0] - 10f64.cos()).abs() < 1e-10);
    }
}
