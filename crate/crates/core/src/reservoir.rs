//! Random sparse reservoirs, the (optionally leaky) tanh update and the ridge
//! readout.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::models::Trajectory;
use crate::seeds;
use crate::sparse::{spectral_radius, CsrMatrix};

/// Below this estimate a drawn internal matrix is treated as nilpotent.
const ZERO_RADIUS: f64 = 1e-12;
const MAX_RESAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Reservoir {
    /// Internal coupling `A`, `M × M`.
    pub internal: CsrMatrix,
    /// Input coupling `W_in`, `M × d_in`.
    pub input: DMatrix<f64>,
    pub leak: f64,
    pub state: Vec<f64>,
    /// Seed the accepted draw came from (after any resampling).
    pub seed: u64,
    pub resamples: usize,
    pre: Vec<f64>,
}

/// Draws a reservoir of size `size` for `input_dim` inputs. Each entry of `A`
/// is nonzero with probability `density`, uniform in `[-0.5, 0.5]`, and `A` is
/// rescaled to `spectral_radius_target`. `W_in` entries are uniform in
/// `[-input_scale, input_scale]`. A draw with zero spectral radius is
/// redrawn from `seed + 1`, `seed + 2`, ….
pub fn build_reservoir(
    size: usize,
    input_dim: usize,
    density: f64,
    spectral_radius_target: f64,
    input_scale: f64,
    leak: f64,
    seed: u64,
) -> Result<Reservoir> {
    if size == 0 {
        return Err(Error::invalid("size", "reservoir needs at least one node"));
    }
    if !(density > 0.0 && density <= 1.0) || density * (size as f64) < 1.0 - 1e-12 {
        return Err(Error::invalid(
            "density",
            format!("density {density} must lie in (0, 1] with density·M ≥ 1 (M = {size})"),
        ));
    }
    if !(spectral_radius_target > 0.0) {
        return Err(Error::invalid("spectral_radius", "target must be positive"));
    }
    if !(input_scale >= 0.0) {
        return Err(Error::invalid("input_scale", "must be nonnegative"));
    }
    if !(0.0..=1.0).contains(&leak) {
        return Err(Error::invalid("leak", format!("{leak} not in [0, 1]")));
    }

    for attempt in 0..=MAX_RESAMPLES {
        let draw_seed = seed.wrapping_add(attempt as u64);
        let mut rng = seeds::rng(draw_seed);
        let mut internal = draw_internal(size, density, &mut rng)?;
        let input = DMatrix::from_fn(size, input_dim, |_, _| {
            if input_scale == 0.0 {
                0.0
            } else {
                rng.random_range(-input_scale..=input_scale)
            }
        });
        let rho = spectral_radius(&internal)?;
        if rho < ZERO_RADIUS {
            log::warn!("reservoir draw with seed {draw_seed} has zero spectral radius; resampling");
            continue;
        }
        internal.scale(spectral_radius_target / rho);
        return Ok(Reservoir {
            internal,
            input,
            leak,
            state: vec![0.0; size],
            seed: draw_seed,
            resamples: attempt,
            pre: vec![0.0; size],
        });
    }
    Err(Error::RetryBudgetExhausted {
        budget: MAX_RESAMPLES,
        diagnostics: format!("every reservoir draw of size {size} at density {density} was nilpotent"),
    })
}

fn draw_internal(size: usize, density: f64, rng: &mut impl Rng) -> Result<CsrMatrix> {
    let per_row = Binomial::new(size as u64, density).map_err(|e| Error::invalid("density", e.to_string()))?;
    let mut row_ptr = Vec::with_capacity(size + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for _ in 0..size {
        let k = per_row.sample(rng) as usize;
        let mut cols = rand::seq::index::sample(rng, size, k).into_vec();
        cols.sort_unstable();
        for c in cols {
            col_idx.push(c);
            values.push(rng.random_range(-0.5..=0.5));
        }
        row_ptr.push(col_idx.len());
    }
    Ok(CsrMatrix {
        n_rows: size,
        n_cols: size,
        row_ptr,
        col_idx,
        values,
    })
}

impl Reservoir {
    /// Assembles a reservoir from explicit matrices.
    pub fn from_parts(internal: CsrMatrix, input: DMatrix<f64>, leak: f64) -> Result<Self> {
        let m = internal.n_rows;
        if internal.n_cols != m || input.nrows() != m {
            return Err(Error::DimensionMismatch {
                context: "reservoir matrices",
                expected: m,
                got: input.nrows(),
            });
        }
        if !(0.0..=1.0).contains(&leak) {
            return Err(Error::invalid("leak", format!("{leak} not in [0, 1]")));
        }
        Ok(Reservoir {
            internal,
            input,
            leak,
            state: vec![0.0; m],
            seed: 0,
            resamples: 0,
            pre: vec![0.0; m],
        })
    }

    pub fn size(&self) -> usize {
        self.state.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
        self.pre.fill(0.0);
    }

    /// `r ← a·r + (1 − a)·tanh(A r + W_in x + 1)`
    pub fn step(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.input_dim());
        self.internal.mul_vec_into(&self.state, &mut self.pre);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (p, w) in self.pre.iter_mut().zip(self.input.column(j).iter()) {
                    *p += w * xj;
                }
            }
        }
        if self.leak == 0.0 {
            for (r, p) in self.state.iter_mut().zip(&self.pre) {
                *r = (p + 1.0).tanh();
            }
        } else {
            let a = self.leak;
            for (r, p) in self.state.iter_mut().zip(&self.pre) {
                *r = a * *r + (1.0 - a) * (p + 1.0).tanh();
            }
        }
    }

    /// Steps through every row of `inputs`, handing each new state to `visit`
    /// together with the row index it was computed from.
    pub fn drive_with(&mut self, inputs: &Trajectory, mut visit: impl FnMut(usize, &[f64])) -> Result<()> {
        if inputs.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "reservoir input row",
                expected: self.input_dim(),
                got: inputs.dim(),
            });
        }
        for (k, row) in inputs.rows().enumerate() {
            self.step(row);
            visit(k, &self.state);
        }
        Ok(())
    }

    /// Drives the reservoir from its current state. Column `k` of the result
    /// is the state computed from input row `k`.
    pub fn drive(&mut self, inputs: &Trajectory, washout: usize) -> Result<StateHistory> {
        let m = self.size();
        let mut data = Vec::with_capacity(m * inputs.len());
        self.drive_with(inputs, |_, r| data.extend_from_slice(r))?;
        Ok(StateHistory {
            states: DMatrix::from_vec(m, inputs.len(), data),
            washout: washout.min(inputs.len()),
        })
    }
}

/// Reservoir states, one column per input step, with the first `washout`
/// columns excluded from training.
#[derive(Clone, Debug, PartialEq)]
pub struct StateHistory {
    pub states: DMatrix<f64>,
    pub washout: usize,
}

impl StateHistory {
    pub fn steps(&self) -> usize {
        self.states.ncols()
    }

    pub fn retained(&self) -> usize {
        self.steps() - self.washout
    }

    pub fn retained_states(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.states.columns(self.washout, self.retained())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    /// `d_out × M`
    pub w_out: DMatrix<f64>,
    pub lambda: f64,
    pub washout: usize,
}

impl Readout {
    pub fn outputs(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn apply_into(&self, state: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.w_out.row(i).iter().zip(state).map(|(w, r)| w * r).sum();
        }
    }
}

/// Streaming accumulator for the ridge normal equations `R Rᵀ` and `Y Rᵀ`.
pub struct RidgeAccumulator {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    state_buf: DMatrix<f64>,
    target_buf: DMatrix<f64>,
    filled: usize,
    count: usize,
}

const CHUNK: usize = 256;

impl RidgeAccumulator {
    pub fn new(state_dim: usize, target_dim: usize) -> Self {
        RidgeAccumulator {
            gram: DMatrix::zeros(state_dim, state_dim),
            cross: DMatrix::zeros(target_dim, state_dim),
            state_buf: DMatrix::zeros(state_dim, CHUNK),
            target_buf: DMatrix::zeros(target_dim, CHUNK),
            filled: 0,
            count: 0,
        }
    }

    pub fn push(&mut self, state: &[f64], target: &[f64]) {
        self.state_buf.column_mut(self.filled).copy_from_slice(state);
        self.target_buf.column_mut(self.filled).copy_from_slice(target);
        self.filled += 1;
        self.count += 1;
        if self.filled == CHUNK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.filled == 0 {
            return;
        }
        let s = self.state_buf.columns(0, self.filled);
        let y = self.target_buf.columns(0, self.filled);
        let st = s.transpose();
        self.gram.gemm(1.0, &s, &st, 1.0);
        self.cross.gemm(1.0, &y, &st, 1.0);
        self.filled = 0;
    }

    pub fn samples(&self) -> usize {
        self.count
    }

    /// Solves `W_out (R Rᵀ + λ I) = Y Rᵀ` by Cholesky factorization.
    pub fn solve(mut self, lambda: f64) -> Result<DMatrix<f64>> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid("lambda", format!("{lambda} must be nonnegative")));
        }
        self.flush();
        let mut a = self.gram;
        for i in 0..a.nrows() {
            a[(i, i)] += lambda;
        }
        let chol = a.cholesky().ok_or(Error::SingularRidge { lambda })?;
        if lambda == 0.0 {
            let diag = chol.l_dirty().diagonal();
            let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if !(min > max * 1e-7) {
                return Err(Error::SingularRidge { lambda });
            }
        }
        Ok(chol.solve(&self.cross.transpose()).transpose())
    }
}

/// Fits `W_out` to `targets` (one column per history step, `d_out` rows),
/// discarding the history's washout columns from both.
pub fn train_readout(history: &StateHistory, targets: &DMatrix<f64>, lambda: f64) -> Result<Readout> {
    if targets.ncols() != history.steps() {
        return Err(Error::DimensionMismatch {
            context: "readout targets vs states",
            expected: history.steps(),
            got: targets.ncols(),
        });
    }
    let mut acc = RidgeAccumulator::new(history.states.nrows(), targets.nrows());
    for k in history.washout..history.steps() {
        acc.push(history.states.column(k).as_slice(), targets.column(k).as_slice());
    }
    Ok(Readout {
        w_out: acc.solve(lambda)?,
        lambda,
        washout: history.washout,
    })
}

/// `U = W_out R` over the retained columns.
pub fn readout_apply(readout: &Readout, history: &StateHistory) -> Result<DMatrix<f64>> {
    if readout.w_out.ncols() != history.states.nrows() {
        return Err(Error::DimensionMismatch {
            context: "readout width vs reservoir size",
            expected: history.states.nrows(),
            got: readout.w_out.ncols(),
        });
    }
    Ok(&readout.w_out * history.retained_states())
}

/// `Σ_k ‖y_k − W r_k‖² + λ Tr(W Wᵀ)` over the retained columns.
pub fn ridge_cost(w_out: &DMatrix<f64>, history: &StateHistory, targets: &DMatrix<f64>, lambda: f64) -> f64 {
    let r = history.retained_states();
    let y = targets.columns(history.washout, history.retained());
    let resid = y - w_out * r;
    resid.norm_squared() + lambda * w_out.norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(rows: usize, dim: usize, seed: u64) -> Trajectory {
        let mut rng = seeds::rng(seed);
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Trajectory::from_rows(0.0, 1.0, &data).unwrap()
    }

    #[test]
    fn one_by_one_reservoir_keeps_sign() {
        for seed in 0..10 {
            let r = build_reservoir(1, 1, 1.0, 1.2, 0.01, 0.0, seed).unwrap();
            let a = r.internal.values[0];
            assert!((a.abs() - 1.2).abs() < 1e-12, "{a}");
        }
    }

    #[test]
    fn build_validates() {
        assert!(build_reservoir(0, 1, 1.0, 1.2, 0.01, 0.0, 0).is_err());
        assert!(build_reservoir(100, 1, 0.001, 1.2, 0.01, 0.0, 0).is_err());
        assert!(build_reservoir(10, 1, 0.5, 0.0, 0.01, 0.0, 0).is_err());
        assert!(build_reservoir(10, 1, 0.5, 1.2, 0.01, 1.5, 0).is_err());
    }

    #[test]
    fn radius_and_input_scale() {
        let r = build_reservoir(200, 3, 6.0 / 200.0, 1.2, 0.01, 0.0, 5).unwrap();
        let rho = crate::sparse::dense_spectral_radius(&r.internal.to_dense()).unwrap();
        assert!((rho - 1.2).abs() < 1e-9, "{rho}");
        assert!(r.input.iter().all(|w| w.abs() <= 0.01));
        assert!(r.state.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn full_leak_freezes_state() {
        let mut r = build_reservoir(20, 2, 0.3, 1.2, 0.5, 1.0, 1).unwrap();
        r.state = (0..20).map(|i| i as f64 * 0.01).collect();
        let before = r.state.clone();
        let h = r.drive(&inputs(30, 2, 2), 0).unwrap();
        for k in 0..30 {
            assert_eq!(h.states.column(k).as_slice(), before.as_slice());
        }
    }

    #[test]
    fn zero_couplings_give_tanh_one() {
        let mut r = Reservoir::from_parts(CsrMatrix::zeros(4, 4), DMatrix::zeros(4, 2), 0.0).unwrap();
        let h = r.drive(&inputs(3, 2, 0), 0).unwrap();
        assert!(h.states.iter().all(|v| *v == 1f64.tanh()));
    }

    #[test]
    fn two_node_recurrence_matches_scalar_iteration() {
        // A = [[0, 0.5], [-0.3, 0]], zero input: iterate the pair by hand.
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 0.5), (1, 0, -0.3)]).unwrap();
        let mut r = Reservoir::from_parts(a, DMatrix::zeros(2, 1), 0.0).unwrap();
        let h = r.drive(&Trajectory::from_rows(0.0, 1.0, &vec![vec![0.0]; 6]).unwrap(), 0).unwrap();
        let (mut p, mut q) = (0.0f64, 0.0f64);
        for k in 0..6 {
            let np = (0.5 * q + 1.0).tanh();
            let nq = (-0.3 * p + 1.0).tanh();
            p = np;
            q = nq;
            assert_eq!(h.states[(0, k)], p);
            assert_eq!(h.states[(1, k)], q);
        }
    }

    #[test]
    fn leak_zero_is_bit_identical_to_plain_update() {
        let mut r = build_reservoir(50, 3, 0.12, 1.2, 0.1, 0.0, 4).unwrap();
        let a = r.internal.clone();
        let w = r.input.clone();
        let u = inputs(100, 3, 8);
        let h = r.drive(&u, 0).unwrap();
        let mut state = vec![0.0; 50];
        let mut tmp = vec![0.0; 50];
        for (k, x) in u.rows().enumerate() {
            a.mul_vec_into(&state, &mut tmp);
            for j in 0..3 {
                for i in 0..50 {
                    tmp[i] += w[(i, j)] * x[j];
                }
            }
            for i in 0..50 {
                state[i] = (tmp[i] + 1.0).tanh();
            }
            assert_eq!(h.states.column(k).as_slice(), state.as_slice());
        }
    }

    #[test]
    fn zero_targets_give_zero_readout() {
        let mut r = build_reservoir(30, 2, 0.2, 1.2, 0.1, 0.0, 3).unwrap();
        let h = r.drive(&inputs(200, 2, 1), 20).unwrap();
        let ro = train_readout(&h, &DMatrix::zeros(2, 200), 1e-6).unwrap();
        assert!(ro.w_out.iter().all(|v| *v == 0.0));
        let u = readout_apply(&ro, &h).unwrap();
        assert!(u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exact_interpolation_at_zero_lambda() {
        let mut rng = seeds::rng(17);
        let m = 12;
        let states = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let targets = DMatrix::from_fn(3, m, |_, _| rng.random_range(-1.0..1.0));
        let h = StateHistory { states, washout: 0 };
        let ro = train_readout(&h, &targets, 0.0).unwrap();
        let resid = (&targets - &ro.w_out * &h.states).norm();
        assert!(resid <= 1e-8 * targets.norm(), "{resid}");
    }

    #[test]
    fn singular_at_zero_lambda_is_reported() {
        let states = DMatrix::from_fn(4, 10, |i, k| if i < 2 { (k as f64).sin() } else { 0.0 });
        let h = StateHistory { states, washout: 0 };
        let err = train_readout(&h, &DMatrix::zeros(1, 10), 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularRidge { .. }));
        assert!(train_readout(&h, &DMatrix::zeros(1, 10), 1e-6).is_ok());
    }

    #[test]
    fn identity_readout_returns_states() {
        let mut r = build_reservoir(5, 1, 0.4, 1.2, 0.1, 0.0, 2).unwrap();
        let h = r.drive(&inputs(10, 1, 3), 2).unwrap();
        let ro = Readout {
            w_out: DMatrix::identity(5, 5),
            lambda: 0.0,
            washout: 2,
        };
        assert_eq!(readout_apply(&ro, &h).unwrap(), h.retained_states().into_owned());
    }

    #[test]
    fn trained_readout_is_first_order_optimal() {
        let mut r = build_reservoir(40, 2, 0.15, 1.2, 0.3, 0.0, 9).unwrap();
        let u = inputs(400, 2, 4);
        let h = r.drive(&u, 40).unwrap();
        let targets = DMatrix::from_fn(2, 400, |i, k| u.row(k)[i] + 0.5 * u.row(k.saturating_sub(1))[1 - i]);
        let lambda = 1e-4;
        let ro = train_readout(&h, &targets, lambda).unwrap();
        let base = ridge_cost(&ro.w_out, &h, &targets, lambda);
        let mut rng = seeds::rng(1);
        for _ in 0..20 {
            let (i, j) = (rng.random_range(0..2), rng.random_range(0..40));
            for delta in [1e-4, -1e-4] {
                let mut w = ro.w_out.clone();
                w[(i, j)] += delta;
                assert!(ridge_cost(&w, &h, &targets, lambda) >= base - 1e-12 * base);
            }
        }
    }

    #[test]
    fn regularization_penalty_decreases_with_lambda() {
        let mut r = build_reservoir(40, 2, 0.15, 1.2, 0.3, 0.0, 10).unwrap();
        let u = inputs(300, 2, 5);
        let h = r.drive(&u, 30).unwrap();
        let targets = DMatrix::from_fn(1, 300, |_, k| (0.1 * k as f64).sin());
        let penalty = |lambda: f64| {
            let ro = train_readout(&h, &targets, lambda).unwrap();
            ro.w_out.norm_squared()
        };
        let (a, b, c) = (penalty(1e-8), penalty(1e-6), penalty(1e-4));
        assert!(a >= b && b >= c, "{a} {b} {c}");
    }

    #[test]
    fn echo_states_forget_initial_condition() {
        let mut r = build_reservoir(300, 3, 6.0 / 300.0, 1.2, 0.01, 0.0, 12).unwrap();
        let u = inputs(400, 3, 6);
        let a = r.drive(&u, 0).unwrap();
        r.state = (0..300).map(|i| ((i * 7) % 13) as f64 / 13.0 - 0.5).collect();
        let b = r.drive(&u, 0).unwrap();
        let washout = 100;
        for k in washout..400 {
            let d = (a.states.column(k) - b.states.column(k)).amax();
            assert!(d < 1e-10, "step {k}: {d}");
        }
    }
}
