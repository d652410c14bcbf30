//! Lossless Westervelt residual on a single-channel pressure track, the mean
//! squared residual loss over a latent trajectory, and its exact gradients.
//!
//! The pressure track is produced per time step by a two-layer tanh operator
//! `p_t = w2 · tanh(W1 h_t + b1) + b2`. Spatial structure is unavailable from
//! one channel, so the Laplacian term is taken as zero (plane-wave surrogate)
//! and the residual keeps the two temporal terms:
//!
//! ```text
//! r_t = -(1/c0²) ∂²p/∂t² + β/(ρ0 c0⁴) ∂²(p²)/∂t²
//! ```
//!
//! Second derivatives use central differences on interior points only.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("series of length {0} is too short; at least 3 points are required")]
    SeriesTooShort(usize),
    #[error("invalid acoustic constants: {0}")]
    InvalidConstants(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad operator parameter file: {0}")]
    BadParameterFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticConstants<T> {
    pub c0: T,
    pub rho0: T,
    pub beta: T,
    pub dt: T,
}

impl<T: Scalar> Default for AcousticConstants<T> {
    /// Normalized units; β is of the order of air's coefficient.
    fn default() -> Self {
        Self {
            c0: T::one(),
            rho0: T::one(),
            beta: T::lit(1.2),
            dt: T::one(),
        }
    }
}

impl<T: Scalar> AcousticConstants<T> {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let ok = |x: T| x.is_finite() && x > T::zero();
        if !ok(self.c0) || !ok(self.rho0) || !ok(self.dt) {
            return Err(PhysicsError::InvalidConstants(
                "c0, rho0 and dt must be positive".into(),
            ));
        }
        if !self.beta.is_finite() || self.beta < T::zero() {
            return Err(PhysicsError::InvalidConstants("beta must be >= 0".into()));
        }
        Ok(())
    }

    /// Coefficient of ∂²p/∂t².
    fn linear_coef(&self) -> T {
        -T::one() / (self.c0 * self.c0)
    }

    /// Coefficient of ∂²(p²)/∂t².
    fn nonlinear_coef(&self) -> T {
        let c2 = self.c0 * self.c0;
        self.beta / (self.rho0 * c2 * c2)
    }
}

/// Time-major latent states, `t_len` rows of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory<T> {
    pub h: Vec<T>,
    pub t_len: usize,
    pub dim: usize,
}

impl<T: Scalar> LatentTrajectory<T> {
    pub fn new(h: Vec<T>, t_len: usize, dim: usize) -> Result<Self, PhysicsError> {
        if h.len() != t_len * dim {
            return Err(PhysicsError::ShapeMismatch(format!(
                "{} values for {t_len}x{dim} trajectory",
                h.len()
            )));
        }
        Ok(Self { h, t_len, dim })
    }

    pub fn row(&self, t: usize) -> &[T] {
        &self.h[t * self.dim..(t + 1) * self.dim]
    }
}

/// Shallow latent → pressure map `p = w2 · tanh(W1 h + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureOperator<T> {
    pub dim: usize,
    pub hidden: usize,
    /// `hidden × dim`, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Scalar> PressureOperator<T> {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            w1: vec![T::zero(); dim * hidden],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden],
            b2: T::zero(),
        }
    }

    /// Uniform(-scale, scale) weights, Glorot-scaled first layer.
    pub fn random<R: Rng + ?Sized>(dim: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let mut u = |s: f64| T::lit(rng.random_range(-s..s));
        let s1 = scale * (6.0 / (dim + hidden) as f64).sqrt();
        let s2 = scale * (6.0 / (hidden + 1) as f64).sqrt();
        Self {
            dim,
            hidden,
            w1: (0..dim * hidden).map(|_| u(s1)).collect(),
            b1: (0..hidden).map(|_| u(scale * 0.5)).collect(),
            w2: (0..hidden).map(|_| u(s2)).collect(),
            b2: u(scale * 0.1),
        }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<(), PhysicsError> {
        if p.len() != self.n_params() {
            return Err(PhysicsError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.hidden);
        let (c, d) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
        Ok(())
    }

    fn hidden_act(&self, h: &[T], out: &mut [T]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.w1[j * self.dim..(j + 1) * self.dim];
            let z = row.iter().zip(h).fold(self.b1[j], |acc, (&w, &x)| acc + w * x);
            *o = z.tanh();
        }
    }

    pub fn apply(&self, h: &[T]) -> T {
        let mut a = vec![T::zero(); self.hidden];
        self.hidden_act(h, &mut a);
        a.iter().zip(&self.w2).fold(self.b2, |acc, (&ai, &w)| acc + ai * w)
    }

    pub fn pressure(&self, traj: &LatentTrajectory<T>) -> Result<Vec<T>, PhysicsError> {
        if traj.dim != self.dim {
            return Err(PhysicsError::ShapeMismatch(format!(
                "trajectory width {} vs operator input {}",
                traj.dim, self.dim
            )));
        }
        Ok((0..traj.t_len).map(|t| self.apply(traj.row(t))).collect())
    }

    /// Accumulates `∂p/∂θ · gp` into `grad` and returns `∂p/∂h · gp`.
    pub fn backward(&self, h: &[T], gp: T, grad: &mut OperatorGrad<T>) -> Vec<T> {
        let mut a = vec![T::zero(); self.hidden];
        self.hidden_act(h, &mut a);
        let mut dh = vec![T::zero(); self.dim];
        grad.b2 += gp;
        for j in 0..self.hidden {
            grad.w2[j] += gp * a[j];
            let dz = gp * self.w2[j] * (T::one() - a[j] * a[j]);
            grad.b1[j] += dz;
            let row = &self.w1[j * self.dim..(j + 1) * self.dim];
            let grow = &mut grad.w1[j * self.dim..(j + 1) * self.dim];
            for k in 0..self.dim {
                grow[k] += dz * h[k];
                dh[k] += dz * row[k];
            }
        }
        dh
    }

    const MAGIC: &'static [u8; 4] = b"PRSO";
    const VERSION: u32 = 1;

    /// Header `PRSO`, version, D, H as little-endian u32, then the
    /// parameters as little-endian f64 in [`PressureOperator::params`] order.
    pub fn write_params<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        for v in [Self::VERSION, self.dim as u32, self.hidden as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for p in self.params() {
            w.write_all(&p.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_params<R: Read>(mut r: R) -> Result<Self, PhysicsError> {
        let bad = |m: &str| PhysicsError::BadParameterFile(m.to_string());
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != Self::MAGIC {
            return Err(bad("magic"));
        }
        let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
        if word(4) != Self::VERSION {
            return Err(bad("unsupported version"));
        }
        let mut op = Self::zeros(word(8) as usize, word(12) as usize);
        let mut vals = Vec::with_capacity(op.n_params());
        let mut buf = [0u8; 8];
        for _ in 0..op.n_params() {
            r.read_exact(&mut buf).map_err(|_| bad("truncated parameters"))?;
            vals.push(T::lit(f64::from_le_bytes(buf)));
        }
        op.set_params(&vals)?;
        Ok(op)
    }
}

/// Gradient with the same layout as [`PressureOperator`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorGrad<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Scalar> OperatorGrad<T> {
    pub fn zeros_like(op: &PressureOperator<T>) -> Self {
        Self {
            w1: vec![T::zero(); op.w1.len()],
            b1: vec![T::zero(); op.hidden],
            w2: vec![T::zero(); op.hidden],
            b2: T::zero(),
        }
    }

    pub fn flat(&self) -> Vec<T> {
        let mut v = self.w1.clone();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }
}

/// `(s[t+1] − 2 s[t] + s[t−1]) / dt²` for interior `t`; length `T − 2`.
pub fn second_time_derivative<T: Scalar>(series: &[T], dt: T) -> Result<Vec<T>, PhysicsError> {
    if series.len() < 3 {
        return Err(PhysicsError::SeriesTooShort(series.len()));
    }
    let inv = T::one() / (dt * dt);
    Ok(series
        .windows(3)
        .map(|w| (w[2] - w[1] - w[1] + w[0]) * inv)
        .collect())
}

/// Interior-point residual of the lossless plane-wave Westervelt equation.
pub fn westervelt_residual<T: Scalar>(
    p: &[T],
    k: &AcousticConstants<T>,
) -> Result<Vec<T>, PhysicsError> {
    k.validate()?;
    let p2: Vec<T> = p.iter().map(|&x| x * x).collect();
    let d_p = second_time_derivative(p, k.dt)?;
    let d_p2 = second_time_derivative(&p2, k.dt)?;
    let (a, b) = (k.linear_coef(), k.nonlinear_coef());
    Ok(d_p.into_iter().zip(d_p2).map(|(x, y)| a * x + b * y).collect())
}

/// Mean squared residual of a pressure track and its gradient w.r.t. `p`.
pub fn pressure_loss_grad<T: Scalar>(
    p: &[T],
    k: &AcousticConstants<T>,
) -> Result<(T, Vec<T>), PhysicsError> {
    let r = westervelt_residual(p, k)?;
    let m = T::from_count(r.len());
    let loss = r.iter().map(|&x| x * x).sum::<T>() / m;

    // dL/dr, then through the (self-adjoint) stencil, then the local factor.
    let two = T::lit(2.0);
    let dr: Vec<T> = r.iter().map(|&x| two * x / m).collect();
    let inv = T::one() / (k.dt * k.dt);
    let n = p.len();
    let at = |t: isize| -> T {
        // dr is indexed by interior point t = 1..n-2
        if t >= 1 && (t as usize) <= n - 2 {
            dr[t as usize - 1]
        } else {
            T::zero()
        }
    };
    let (a, b) = (k.linear_coef(), k.nonlinear_coef());
    let gp = (0..n)
        .map(|s| {
            let s = s as isize;
            let st = (at(s - 1) - two * at(s) + at(s + 1)) * inv;
            (a + two * b * p[s as usize]) * st
        })
        .collect();
    Ok((loss, gp))
}

pub fn phys_loss<T: Scalar>(
    traj: &LatentTrajectory<T>,
    op: &PressureOperator<T>,
    k: &AcousticConstants<T>,
) -> Result<T, PhysicsError> {
    if traj.t_len < 3 {
        return Err(PhysicsError::SeriesTooShort(traj.t_len));
    }
    let p = op.pressure(traj)?;
    let r = westervelt_residual(&p, k)?;
    Ok(r.iter().map(|&x| x * x).sum::<T>() / T::from_count(r.len()))
}

/// `L_task + λ · L_phys`.
pub fn total_loss<T: Scalar>(task_loss: T, phys_loss: T, lambda: T) -> T {
    task_loss + lambda * phys_loss
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysGrad<T> {
    pub loss: T,
    pub op: OperatorGrad<T>,
    /// Same layout as [`LatentTrajectory::h`].
    pub h: Vec<T>,
}

/// Reverse-mode gradient of [`phys_loss`] w.r.t. operator parameters and latents.
pub fn grad_phys_loss<T: Scalar>(
    traj: &LatentTrajectory<T>,
    op: &PressureOperator<T>,
    k: &AcousticConstants<T>,
) -> Result<PhysGrad<T>, PhysicsError> {
    if traj.t_len < 3 {
        return Err(PhysicsError::SeriesTooShort(traj.t_len));
    }
    let p = op.pressure(traj)?;
    let (loss, gp) = pressure_loss_grad(&p, k)?;
    let mut g = OperatorGrad::zeros_like(op);
    let mut gh = Vec::with_capacity(traj.h.len());
    for (t, &gpt) in gp.iter().enumerate() {
        gh.extend(op.backward(traj.row(t), gpt, &mut g));
    }
    Ok(PhysGrad { loss, op: g, h: gh })
}

/// Finite-difference comparison for [`grad_phys_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck<T> {
    /// `max |a − n| / max(|a|, |n|)` within a block, maximized over the
    /// operator-parameter block and the latent block.
    pub max_rel_err: T,
    /// Per-coordinate `|a − n| / max(|a|, |n|)`, maximized. Dominated by
    /// round-off on coordinates whose gradient is tiny next to the loss.
    pub max_coord_rel_err: T,
}

fn compare<T: Scalar>(analytic: &[T], numeric: &[T]) -> GradCheck<T> {
    let floor = T::lit(1e-300);
    let mut diff = T::zero();
    let mut scale = T::zero();
    let mut coord = T::zero();
    for (&a, &n) in analytic.iter().zip(numeric) {
        let d = (a - n).abs();
        let m = a.abs().max(n.abs());
        diff = diff.max(d);
        scale = scale.max(m);
        coord = coord.max(d / m.max(T::lit(1e-12)));
    }
    GradCheck {
        max_rel_err: diff / scale.max(floor),
        max_coord_rel_err: coord,
    }
}

/// Compares [`grad_phys_loss`] against symmetric finite differences over
/// all operator parameters and latents.
pub fn finite_diff_check<T: Scalar>(
    traj: &LatentTrajectory<T>,
    op: &PressureOperator<T>,
    k: &AcousticConstants<T>,
    step: T,
) -> Result<GradCheck<T>, PhysicsError> {
    let g = grad_phys_loss(traj, op, k)?;
    let two_h = step + step;

    let theta = op.params();
    let mut probe = op.clone();
    let mut th = theta.clone();
    let mut num_op = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        th[i] = theta[i] + step;
        probe.set_params(&th)?;
        let up = phys_loss(traj, &probe, k)?;
        th[i] = theta[i] - step;
        probe.set_params(&th)?;
        let dn = phys_loss(traj, &probe, k)?;
        th[i] = theta[i];
        num_op.push((up - dn) / two_h);
    }

    let mut tr = traj.clone();
    let mut num_h = Vec::with_capacity(traj.h.len());
    for i in 0..traj.h.len() {
        tr.h[i] = traj.h[i] + step;
        let up = phys_loss(&tr, op, k)?;
        tr.h[i] = traj.h[i] - step;
        let dn = phys_loss(&tr, op, k)?;
        tr.h[i] = traj.h[i];
        num_h.push((up - dn) / two_h);
    }
    let a = compare(&g.op.flat(), &num_op);
    let b = compare(&g.h, &num_h);
    Ok(GradCheck {
        max_rel_err: a.max_rel_err.max(b.max_rel_err),
        max_coord_rel_err: a.max_coord_rel_err.max(b.max_coord_rel_err),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> AcousticConstants<f64> {
        AcousticConstants::default()
    }

    fn ramp_traj(t_len: usize) -> LatentTrajectory<f64> {
        LatentTrajectory::new((0..t_len).map(|t| t as f64).collect(), t_len, 1).unwrap()
    }

    #[test]
    fn second_derivative_examples() {
        assert_eq!(second_time_derivative(&[3.0, 3.0, 3.0, 3.0], 0.1).unwrap(), vec![0.0, 0.0]);
        let ramp: Vec<f64> = (0..6).map(|t| t as f64 * 0.25).collect();
        assert!(second_time_derivative(&ramp, 0.25).unwrap().iter().all(|v| v.abs() < 1e-12));
        let quad: Vec<f64> = (0..6).map(|t| (t as f64 * 0.5).powi(2)).collect();
        for v in second_time_derivative(&quad, 0.5).unwrap() {
            assert!((v - 2.0).abs() < 1e-12);
        }
        assert_eq!(
            second_time_derivative(&[1.0, 2.0], 1.0),
            Err(PhysicsError::SeriesTooShort(2))
        );
    }

    #[test]
    fn residual_examples() {
        let k = unit();
        assert!(westervelt_residual(&[0.7; 5], &k).unwrap().iter().all(|&r| r == 0.0));
        let ramp: Vec<f64> = (0..8).map(|t| t as f64).collect();
        for r in westervelt_residual(&ramp, &k).unwrap() {
            assert!((r - 2.4).abs() < 1e-12);
        }
        let k0 = AcousticConstants { beta: 0.0, c0: 2.0, ..k };
        let p = [0.1, 0.5, -0.3, 0.2, 0.9];
        let d = second_time_derivative(&p, 1.0).unwrap();
        for (r, d) in westervelt_residual(&p, &k0).unwrap().iter().zip(d) {
            assert!((r - (-d / 4.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_constants() {
        let k = AcousticConstants { c0: 0.0, ..unit() };
        assert!(matches!(westervelt_residual(&[1.0; 3], &k), Err(PhysicsError::InvalidConstants(_))));
        let k = AcousticConstants { beta: -1.0, ..unit() };
        assert!(k.validate().is_err());
    }

    #[test]
    fn stencil_translation_identity() {
        let p = [0.3, -0.2, 0.8, 0.1, 0.5, -0.7];
        let c = 0.37;
        let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
        let shifted: Vec<f64> = p.iter().map(|x| x + c).collect();
        let lhs = second_time_derivative(&sq(&shifted), 1.0).unwrap();
        let a = second_time_derivative(&sq(&p), 1.0).unwrap();
        let b = second_time_derivative(&p, 1.0).unwrap();
        for i in 0..lhs.len() {
            assert!((lhs[i] - (a[i] + 2.0 * c * b[i])).abs() < 1e-12);
        }
        // the linear part of the residual is unchanged by the shift
        let k = AcousticConstants { beta: 0.0, ..unit() };
        assert_eq!(
            westervelt_residual(&p, &k).unwrap().len(),
            westervelt_residual(&shifted, &k).unwrap().len()
        );
    }

    #[test]
    fn zero_output_operator_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut op = PressureOperator::<f64>::random(3, 4, 1.0, &mut rng);
        op.w2.iter_mut().for_each(|w| *w = 0.0);
        let traj = LatentTrajectory::new((0..24).map(|i| (i as f64 * 0.37).sin()).collect(), 8, 3).unwrap();
        let g = grad_phys_loss(&traj, &op, &unit()).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.op.flat().iter().all(|&x| x == 0.0));
        assert!(g.h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ramp_pressure_loss() {
        // h_t = atanh(0.1 t) through W1 = 1, w2 = 10 yields p_t = t.
        let traj = LatentTrajectory::new((0..8).map(|t| (0.1 * t as f64).atanh()).collect(), 8, 1).unwrap();
        let op = PressureOperator { dim: 1, hidden: 1, w1: vec![1.0], b1: vec![0.0], w2: vec![10.0], b2: 0.0 };
        let loss = phys_loss(&traj, &op, &unit()).unwrap();
        assert!((loss - 5.76).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn linear_term_is_quadratically_homogeneous() {
        let k = AcousticConstants { beta: 0.0, ..unit() };
        let p = [0.1, 0.5, -0.3, 0.2, 0.9, 0.4];
        let p2: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let (l1, _) = pressure_loss_grad(&p, &k).unwrap();
        let (l2, _) = pressure_loss_grad(&p2, &k).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12 * l2);
    }

    #[test]
    fn linear_map_gradcheck_is_near_exact() {
        // Identity latent -> pressure map with beta = 0: the loss is quadratic in h.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = AcousticConstants { beta: 0.0, ..unit() };
        let h: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = pressure_loss_grad(&h, &k).unwrap();
        let step = 1e-5;
        let num: Vec<f64> = (0..h.len())
            .map(|i| {
                let mut up = h.clone();
                up[i] += step;
                let mut dn = h.clone();
                dn[i] -= step;
                (pressure_loss_grad(&up, &k).unwrap().0 - pressure_loss_grad(&dn, &k).unwrap().0) / (2.0 * step)
            })
            .collect();
        let c = compare(&g, &num);
        assert!(c.max_coord_rel_err < 1e-8, "{c:?}");
    }

    #[test]
    fn small_amplitude_operator_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let op = PressureOperator::<f64>::random(3, 4, 0.5, &mut rng);
        let traj = LatentTrajectory::new((0..24).map(|_| rng.random_range(-1.0..1.0)).collect(), 8, 3).unwrap();
        let err = finite_diff_check(&traj, &op, &unit(), 1e-5).unwrap().max_coord_rel_err;
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(1.0, 5.76, 0.01) - 1.0576f64).abs() < 1e-15);
        assert_eq!(total_loss(0.4, 9.0, 0.0), 0.4);
        assert_eq!(total_loss(0.0, 9.0, 1.0), 9.0);
    }

    #[test]
    fn scaled_error_is_bounded_by_coordinatewise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let op = PressureOperator::<f64>::random(2, 3, 1.0, &mut rng);
            let traj = LatentTrajectory::new((0..12).map(|_| rng.random_range(-1.0..1.0)).collect(), 6, 2).unwrap();
            let c = finite_diff_check(&traj, &op, &unit(), 1e-5).unwrap();
            assert!(c.max_rel_err <= c.max_coord_rel_err);
            assert!(c.max_rel_err < 1e-6);
        }
    }

    #[test]
    fn gradcheck_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = PressureOperator::<f64>::random(3, 4, 1.0, &mut rng);
        let traj = LatentTrajectory::new((0..24).map(|_| rng.random_range(-1.0..1.0)).collect(), 8, 3).unwrap();
        let err = finite_diff_check(&traj, &op, &unit(), 1e-5).unwrap().max_coord_rel_err;
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn step_size_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = PressureOperator::<f64>::random(3, 4, 2.0, &mut rng);
        let traj = LatentTrajectory::new((0..24).map(|_| rng.random_range(-1.0..1.0)).collect(), 8, 3).unwrap();
        let coarse = finite_diff_check(&traj, &op, &unit(), 1e-1).unwrap().max_rel_err;
        let fine = finite_diff_check(&traj, &op, &unit(), 1e-5).unwrap().max_rel_err;
        assert!(coarse > fine);
    }

    #[test]
    fn unread_latent_dimensions_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut op = PressureOperator::<f64>::random(3, 4, 1.0, &mut rng);
        for j in 0..4 {
            op.w1[j * 3 + 2] = 0.0;
        }
        let mut traj = LatentTrajectory::new((0..24).map(|_| rng.random_range(-1.0..1.0)).collect(), 8, 3).unwrap();
        let before = phys_loss(&traj, &op, &unit()).unwrap();
        for t in 0..8 {
            traj.h[t * 3 + 2] = rng.random_range(-5.0..5.0);
        }
        assert_eq!(before, phys_loss(&traj, &op, &unit()).unwrap());
    }

    #[test]
    fn parameter_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let op = PressureOperator::<f64>::random(5, 7, 1.0, &mut rng);
        let mut buf = Vec::new();
        op.write_params(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 8 * op.n_params());
        assert_eq!(&buf[..4], b"PRSO");
        let back = PressureOperator::<f64>::read_params(&buf[..]).unwrap();
        assert_eq!(back, op);
        assert!(PressureOperator::<f64>::read_params(&buf[..20]).is_err());
    }

    #[test]
    fn too_short_trajectory() {
        let op = PressureOperator::<f64>::zeros(1, 2);
        let traj = ramp_traj(2);
        assert_eq!(phys_loss(&traj, &op, &unit()), Err(PhysicsError::SeriesTooShort(2)));
    }

    #[test]
    fn works_in_f32() {
        let p: Vec<f32> = (0..5).map(|t| t as f32).collect();
        let r = westervelt_residual(&p, &AcousticConstants::default()).unwrap();
        assert!(r.iter().all(|&x| (x - 2.4f32).abs() < 1e-5));
    }
}
