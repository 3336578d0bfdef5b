//! Planar grid of point masses coupled by spring-damper elements.
//!
//! Nodes are numbered row-major from 1; node 1 is the top-left mass in the
//! wall column. The state of node `n` (0-based) occupies
//! `x[4n..4n + 4] = [q_x, q_y, qdot_x, qdot_y]`, positions measured from
//! equilibrium.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsdGrid {
    pub rows: usize,
    pub cols: usize,
    pub mass: f64,
    pub wall_kx: f64,
    pub wall_ky: f64,
    pub wall_dx: f64,
    pub wall_dy: f64,
    /// Linear neighbour spring, both axes.
    pub spring_k: f64,
    /// Coefficient of the cubic vertical neighbour spring term.
    pub spring_cubic_y: f64,
    pub damper: f64,
    /// Diagonal force magnitude `diag_k * tanh(r)`.
    pub diag_k: f64,
    /// Diagonal damping magnitude `diag_d * sin(rdot)`.
    pub diag_d: f64,
    /// 1-based node receiving the input force.
    pub input_node: usize,
    /// 1-based node whose position is the output.
    pub output_node: usize,
}

impl Default for MsdGrid {
    fn default() -> Self {
        Self {
            rows: 2,
            cols: 3,
            mass: 0.5,
            wall_kx: 1.0,
            wall_ky: 2.0,
            wall_dx: 1.0,
            wall_dy: 1.0,
            spring_k: 1.0,
            spring_cubic_y: 1.0,
            damper: 1.0,
            diag_k: 5.0,
            diag_d: 0.5,
            input_node: 1,
            output_node: 6,
        }
    }
}

impl MsdGrid {
    /// The grid with every nonlinear term removed.
    pub fn linearized(&self) -> Self {
        Self {
            spring_cubic_y: 0.0,
            diag_k: 0.0,
            diag_d: 0.0,
            ..self.clone()
        }
    }

    pub fn nodes(&self) -> usize {
        self.rows * self.cols
    }

    pub fn state_dim(&self) -> usize {
        4 * self.nodes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("grid must have at least one node".into()));
        }
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::Config(format!("mass must be positive, got {}", self.mass)));
        }
        let n = self.nodes();
        if !(1..=n).contains(&self.input_node) || !(1..=n).contains(&self.output_node) {
            return Err(Error::Config(format!("input/output nodes must lie in 1..={n}")));
        }
        Ok(())
    }

    fn node(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    /// Cartesian neighbour pairs `(i, j)`, each listed once.
    pub fn cartesian_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c + 1 < self.cols {
                    out.push((self.node(r, c), self.node(r, c + 1)));
                }
                if r + 1 < self.rows {
                    out.push((self.node(r, c), self.node(r + 1, c)));
                }
            }
        }
        out
    }

    /// Diagonal neighbour pairs, each listed once.
    pub fn diagonal_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows.saturating_sub(1) {
            for c in 0..self.cols {
                if c + 1 < self.cols {
                    out.push((self.node(r, c), self.node(r + 1, c + 1)));
                }
                if c > 0 {
                    out.push((self.node(r, c), self.node(r + 1, c - 1)));
                }
            }
        }
        out
    }

    /// Force on node `i` exerted by the Cartesian element joining it to `j`.
    pub fn cartesian_force(&self, x: &[f64], i: usize, j: usize) -> [f64; 2] {
        let (dq, dv) = relative(x, i, j);
        [
            self.spring_k * dq[0] + self.damper * dv[0],
            self.spring_k * dq[1] + self.spring_cubic_y * dq[1].powi(3) + self.damper * dv[1],
        ]
    }

    /// Force on node `i` exerted by the diagonal element joining it to `j`,
    /// directed along the current relative displacement.
    pub fn diagonal_force(&self, x: &[f64], i: usize, j: usize) -> [f64; 2] {
        let (dq, dv) = relative(x, i, j);
        let r = dq[0].hypot(dq[1]);
        if r == 0.0 {
            return [0.0, 0.0];
        }
        let r_dot = (dq[0] * dv[0] + dq[1] * dv[1]) / r;
        let mag = self.diag_k * r.tanh() + self.diag_d * r_dot.sin();
        [mag * dq[0] / r, mag * dq[1] / r]
    }

    /// Restoring force of the wall elements on a first-column node.
    pub fn wall_force(&self, x: &[f64], i: usize) -> [f64; 2] {
        let s = &x[4 * i..4 * i + 4];
        [-(self.wall_kx * s[0] + self.wall_dx * s[2]), -(self.wall_ky * s[1] + self.wall_dy * s[3])]
    }

    /// Continuous-time state derivative with input force `u = [u_x, u_y]`.
    pub fn dynamics_into(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let n = self.nodes();
        let mut force = vec![[0.0f64; 2]; n];
        for r in 0..self.rows {
            let i = self.node(r, 0);
            let f = self.wall_force(x, i);
            force[i][0] += f[0];
            force[i][1] += f[1];
        }
        for (i, j) in self.cartesian_pairs() {
            let f = self.cartesian_force(x, i, j);
            force[i][0] += f[0];
            force[i][1] += f[1];
            force[j][0] -= f[0];
            force[j][1] -= f[1];
        }
        if self.diag_k != 0.0 || self.diag_d != 0.0 {
            for (i, j) in self.diagonal_pairs() {
                let f = self.diagonal_force(x, i, j);
                force[i][0] += f[0];
                force[i][1] += f[1];
                force[j][0] -= f[0];
                force[j][1] -= f[1];
            }
        }
        let inp = self.input_node - 1;
        force[inp][0] += u[0];
        force[inp][1] += u[1];
        for (i, f) in force.iter().enumerate() {
            dx[4 * i] = x[4 * i + 2];
            dx[4 * i + 1] = x[4 * i + 3];
            dx[4 * i + 2] = f[0] / self.mass;
            dx[4 * i + 3] = f[1] / self.mass;
        }
    }

    /// Position of the output node.
    pub fn output(&self, x: &[f64]) -> [f64; 2] {
        let o = self.output_node - 1;
        [x[4 * o], x[4 * o + 1]]
    }

    /// Mechanical energy of the linear part (springs and kinetic).
    pub fn linear_energy(&self, x: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.nodes() {
            e += 0.5 * self.mass * (x[4 * i + 2].powi(2) + x[4 * i + 3].powi(2));
        }
        for r in 0..self.rows {
            let i = self.node(r, 0);
            e += 0.5 * (self.wall_kx * x[4 * i].powi(2) + self.wall_ky * x[4 * i + 1].powi(2));
        }
        for (i, j) in self.cartesian_pairs() {
            let (dq, _) = relative(x, i, j);
            e += 0.5 * self.spring_k * (dq[0].powi(2) + dq[1].powi(2));
        }
        e
    }
}

fn relative(x: &[f64], i: usize, j: usize) -> ([f64; 2], [f64; 2]) {
    let (a, b) = (&x[4 * i..4 * i + 4], &x[4 * j..4 * j + 4]);
    ([b[0] - a[0], b[1] - a[1]], [b[2] - a[2], b[3] - a[3]])
}

/// Continuous-time derivative of the grid state.
pub fn msd_dynamics(grid: &MsdGrid, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_dim("grid state", grid.state_dim(), x.len())?;
    check_dim("grid input", 2, u.len())?;
    let mut dx = vec![0.0; x.len()];
    grid.dynamics_into(x, u, &mut dx);
    Ok(dx)
}

/// Classical fourth-order Runge-Kutta step with `u` held over the interval.
pub fn rk4_step<F>(dynamics: F, x: &[f64], u: &[f64], ts: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {ts}")));
    }
    let n = x.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let stage = |k: &[f64]| k.iter().all(|v| v.is_finite());
    dynamics(x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * ts * k1[i];
    }
    dynamics(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * ts * k2[i];
    }
    dynamics(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + ts * k3[i];
    }
    dynamics(&tmp, u, &mut k4);
    if !(stage(&k1) && stage(&k2) && stage(&k3) && stage(&k4)) {
        return Err(Error::NonFiniteStage);
    }
    Ok((0..n).map(|i| x[i] + ts / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(grid: &MsdGrid, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..grid.state_dim()).map(f).collect()
    }

    fn pseudo(i: usize) -> f64 {
        ((i as f64 * 12.9898).sin() * 43758.5453).fract() - 0.5
    }

    #[test]
    fn equilibrium_is_at_rest() {
        let g = MsdGrid::default();
        assert_eq!(g.state_dim(), 24);
        let dx = msd_dynamics(&g, &[0.0; 24], &[0.0, 0.0]).unwrap();
        assert!(dx.iter().all(|v| *v == 0.0));
        let next = rk4_step(|x, u, d| g.dynamics_into(x, u, d), &[0.0; 24], &[0.0, 0.0], 0.05).unwrap();
        assert!(next.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn couplings_obey_action_reaction() {
        let g = MsdGrid::default();
        let x = state_with(&g, pseudo);
        for (i, j) in g.cartesian_pairs() {
            let (a, b) = (g.cartesian_force(&x, i, j), g.cartesian_force(&x, j, i));
            assert!((a[0] + b[0]).abs() < 1e-14 && (a[1] + b[1]).abs() < 1e-14);
        }
        for (i, j) in g.diagonal_pairs() {
            let (a, b) = (g.diagonal_force(&x, i, j), g.diagonal_force(&x, j, i));
            assert!((a[0] + b[0]).abs() < 1e-14 && (a[1] + b[1]).abs() < 1e-14);
        }
        // total internal force vanishes: only wall and input remain
        let dx = msd_dynamics(&g, &x, &[0.0, 0.0]).unwrap();
        let mut total = [0.0, 0.0];
        for i in 0..g.nodes() {
            total[0] += g.mass * dx[4 * i + 2];
            total[1] += g.mass * dx[4 * i + 3];
        }
        let mut wall = [0.0, 0.0];
        for i in [0, 3] {
            let w = g.wall_force(&x, i);
            wall[0] += w[0];
            wall[1] += w[1];
        }
        assert!((total[0] - wall[0]).abs() < 1e-12 && (total[1] - wall[1]).abs() < 1e-12);
    }

    #[test]
    fn grid_topology() {
        let g = MsdGrid::default();
        assert_eq!(g.cartesian_pairs(), vec![(0, 1), (0, 3), (1, 2), (1, 4), (2, 5), (3, 4), (4, 5)]);
        assert_eq!(g.diagonal_pairs(), vec![(0, 4), (1, 5), (1, 3), (2, 4)]);
    }

    #[test]
    fn displaced_node_linear_forces_by_hand() {
        let g = MsdGrid::default().linearized();
        // node 2 (index 1): top middle, neighbours 1, 3 and 5; no wall
        let mut x = vec![0.0; 24];
        x[4] = 0.3;
        x[5] = -0.2;
        x[7] = 0.1;
        let dx = msd_dynamics(&g, &x, &[0.0, 0.0]).unwrap();
        // three linear springs pull back, three dampers oppose the velocity
        let fx = -3.0 * 0.3;
        let fy = -3.0 * -0.2 - 3.0 * 0.1;
        assert!((dx[6] - fx / 0.5).abs() < 1e-12);
        assert!((dx[7] - fy / 0.5).abs() < 1e-12);
        // reaction on node 1 (wall column): +spring +damper from node 2
        assert!((dx[2] - 0.3 / 0.5).abs() < 1e-12);
        assert!((dx[3] - (-0.2 + 0.1) / 0.5).abs() < 1e-12);
        assert_eq!(dx[4], 0.0);
        assert_eq!(dx[5], 0.1);
    }

    #[test]
    fn diagonal_singularity_is_removed() {
        let g = MsdGrid::default();
        let mut x = vec![0.0; 24];
        x[2] = 1.0;
        x[4 * 4 + 2] = 1.0;
        assert_eq!(g.diagonal_force(&x, 0, 4), [0.0, 0.0]);
        assert!(msd_dynamics(&g, &x, &[0.0, 0.0]).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn input_drives_node_one() {
        let g = MsdGrid::default();
        let dx = msd_dynamics(&g, &[0.0; 24], &[1.0, -2.0]).unwrap();
        assert_eq!(&dx[2..4], &[2.0, -4.0]);
        assert!(dx[4..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rk4_of_zero_dynamics_is_identity() {
        let x = [1.0, -2.0, 3.0];
        let next = rk4_step(|_, _, d| d.iter_mut().for_each(|v| *v = 0.0), &x, &[], 0.1).unwrap();
        assert_eq!(next, x.to_vec());
    }

    #[test]
    fn rk4_matches_taylor_polynomial() {
        let next = rk4_step(|x, _, d| d[0] = -x[0], &[1.0], &[], 0.1).unwrap();
        let h: f64 = 0.1;
        let poly = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((next[0] - poly).abs() < 1e-15);
        assert!((next[0] - (1.0 - 0.1 + 0.005 - 0.000_166_666_666_666_666_7 + 0.000_004_166_666_666_666_667)).abs() < 1e-15);
    }

    #[test]
    fn rk4_global_order_on_nonlinear_grid() {
        let g = MsdGrid::default();
        let x0 = state_with(&g, |i| 0.5 * pseudo(i));
        let horizon = 2.0;
        let integrate = |ts: f64| {
            let steps = (horizon / ts).round() as usize;
            let mut x = x0.clone();
            for _ in 0..steps {
                x = rk4_step(|x, u, d| g.dynamics_into(x, u, d), &x, &[0.3, -0.1], ts).unwrap();
            }
            x
        };
        let reference = integrate(0.05 / 64.0);
        let err = |ts: f64| {
            let x = integrate(ts);
            x.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.05), err(0.025));
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
        assert!((3.5..=4.5).contains(&ratio.log2()));
    }

    #[test]
    fn linear_grid_energy_decreases() {
        let g = MsdGrid::default().linearized();
        let mut x = state_with(&g, pseudo);
        let mut e = g.linear_energy(&x);
        for _ in 0..500 {
            x = rk4_step(|x, u, d| g.dynamics_into(x, u, d), &x, &[0.0, 0.0], 0.05).unwrap();
            let next = g.linear_energy(&x);
            assert!(next <= e);
            e = next;
        }
    }

    #[test]
    fn non_finite_stage_is_reported() {
        let r = rk4_step(|x, _, d| d[0] = 1.0 / (x[0] - 1.0), &[1.0], &[], 0.1);
        assert!(matches!(r, Err(Error::NonFiniteStage)));
    }
}
