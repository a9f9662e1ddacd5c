//! Random generalized Lotka-Volterra systems with a stable coexistence point
//! for the scaling study.
//!
//! The interaction graph has exactly `2N` undirected edges (mean degree four)
//! and minimum degree two: a random Hamiltonian cycle is laid down first, then
//! `N` further edges are placed uniformly among the remaining pairs. For each
//! edge `i < j`, `P_ij > 0` and `P_ji` is positive or negative with equal
//! probability; magnitudes are uniform in `[2/N, 4/N]`. Growth rates are
//! uniform in `[2, 4]` and capacities in `[1, 2]`. Draws whose coexistence
//! point has a component below one, or is linearly unstable, are rejected and
//! redrawn from the next seed.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::LotkaVolterraParams;
use crate::seeds;

pub const DEFAULT_RETRY_BUDGET: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSystem {
    pub params: LotkaVolterraParams,
    pub equilibrium: Vec<f64>,
    /// Seed the caller asked for.
    pub requested_seed: u64,
    /// Seed of the accepted draw.
    pub seed: u64,
    pub rejections: usize,
    pub leading_real_part: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stability {
    pub stable: bool,
    pub leading_real_part: f64,
}

/// Undirected edge list `(i, j)` with `i < j`.
pub fn interaction_graph(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut edges = BTreeSet::new();
    for k in 0..n {
        let (a, b) = (order[k], order[(k + 1) % n]);
        edges.insert((a.min(b), a.max(b)));
    }
    let target = (2 * n).min(n * (n - 1) / 2);
    while edges.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    edges.into_iter().collect()
}

pub fn degrees(params: &LotkaVolterraParams) -> Vec<usize> {
    params.neighbors().iter().map(Vec::len).collect()
}

/// Jacobian of the undisturbed Lotka-Volterra field at an arbitrary state.
pub fn lv_jacobian(params: &LotkaVolterraParams, x: &[f64]) -> DMatrix<f64> {
    let n = params.species();
    let p = &params.interactions;
    DMatrix::from_fn(n, n, |i, j| {
        let mut v = x[i] * p[i][j];
        if i == j {
            let bracket: f64 = params.growth[i] - x[i] / params.capacity[i]
                + (0..n).map(|k| p[i][k] * x[k]).sum::<f64>();
            v += bracket - x[i] / params.capacity[i];
        }
        v
    })
}

/// Solves `(diag(1/K) − P) x = e` for the coexistence point.
pub fn solve_equilibrium(params: &LotkaVolterraParams) -> Result<Vec<f64>> {
    let n = params.species();
    let a = coexistence_matrix(params);
    let e = DVector::from_column_slice(&params.growth);
    let lu = a.clone().lu();
    let mut x = lu.solve(&e).ok_or(Error::SingularEquilibrium)?;
    // one round of iterative refinement
    let r = &e - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    debug_assert_eq!(x.len(), n);
    Ok(x.as_slice().to_vec())
}

fn coexistence_matrix(params: &LotkaVolterraParams) -> DMatrix<f64> {
    let n = params.species();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { 1.0 / params.capacity[i] } else { 0.0 };
        diag - params.interactions[i][j]
    })
}

/// Max-norm residual of the coexistence equations at `x`.
pub fn equilibrium_residual(params: &LotkaVolterraParams, x: &[f64]) -> f64 {
    let a = coexistence_matrix(params);
    let r = DVector::from_column_slice(&params.growth) - a * DVector::from_column_slice(x);
    r.amax()
}

/// Linear stability of the undisturbed system at `x`.
pub fn stability_check(params: &LotkaVolterraParams, x: &[f64]) -> Result<Stability> {
    let j = lv_jacobian(params, x);
    let schur = nalgebra::Schur::try_new(j, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Eigensolver("Jacobian Schur iteration did not converge".into()))?;
    let leading = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Stability {
        stable: leading < 0.0,
        leading_real_part: leading,
    })
}

fn draw(n: usize, seed: u64) -> LotkaVolterraParams {
    let mut rng = seeds::rng(seed);
    let edges = interaction_graph(n, &mut rng);
    let nf = n as f64;
    let (lo, hi) = (2.0 / nf, 4.0 / nf);
    let mut p = vec![vec![0.0; n]; n];
    for (i, j) in edges {
        p[i][j] = rng.random_range(lo..=hi);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        p[j][i] = sign * rng.random_range(lo..=hi);
    }
    let growth = (0..n).map(|_| rng.random_range(2.0..=4.0)).collect();
    let capacity = (0..n).map(|_| rng.random_range(1.0..=2.0)).collect();
    LotkaVolterraParams {
        growth,
        capacity,
        interactions: p,
    }
}

pub fn generate(n: usize, seed: u64) -> Result<GeneratedSystem> {
    generate_with_budget(n, seed, DEFAULT_RETRY_BUDGET)
}

pub fn generate_with_budget(n: usize, seed: u64, budget: usize) -> Result<GeneratedSystem> {
    if n < 5 {
        return Err(Error::invalid("n", format!("need at least 5 species, got {n}")));
    }
    let mut below_one = 0usize;
    let mut unstable = 0usize;
    let mut singular = 0usize;
    for attempt in 0..budget {
        let s = seed.wrapping_add(attempt as u64);
        let params = draw(n, s);
        let x = match solve_equilibrium(&params) {
            Ok(x) => x,
            Err(_) => {
                singular += 1;
                continue;
            }
        };
        if x.iter().any(|v| !(*v >= 1.0)) {
            below_one += 1;
            continue;
        }
        let stab = stability_check(&params, &x)?;
        if !stab.stable {
            unstable += 1;
            continue;
        }
        return Ok(GeneratedSystem {
            params,
            equilibrium: x,
            requested_seed: seed,
            seed: s,
            rejections: attempt,
            leading_real_part: stab.leading_real_part,
        });
    }
    Err(Error::RetryBudgetExhausted {
        budget,
        diagnostics: format!(
            "N = {n}, seed {seed}: {below_one} draws had x* < 1, {unstable} were unstable, {singular} singular"
        ),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    n: usize,
    requested_seed: u64,
    seed: u64,
    rejections: usize,
    leading_real_part: f64,
    growth: Vec<f64>,
    capacity: Vec<f64>,
    equilibrium: Vec<f64>,
    /// `[row, col, value]` triplets of the nonzero interactions.
    interactions: Vec<(usize, usize, f64)>,
}

impl GeneratedSystem {
    pub fn to_toml(&self) -> Result<String> {
        let n = self.params.species();
        let mut interactions = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = self.params.interactions[i][j];
                if v != 0.0 {
                    interactions.push((i, j, v));
                }
            }
        }
        let doc = SystemDoc {
            n,
            requested_seed: self.requested_seed,
            seed: self.seed,
            rejections: self.rejections,
            leading_real_part: self.leading_real_part,
            growth: self.params.growth.clone(),
            capacity: self.params.capacity.clone(),
            equilibrium: self.equilibrium.clone(),
            interactions,
        };
        toml::to_string(&doc).map_err(|e| Error::Serialize {
            what: "generated system".into(),
            message: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: SystemDoc = toml::from_str(text).map_err(|e| Error::Parse {
            what: "generated system".into(),
            message: e.to_string(),
        })?;
        let mut p = vec![vec![0.0; doc.n]; doc.n];
        for (i, j, v) in doc.interactions {
            if i >= doc.n || j >= doc.n {
                return Err(Error::invalid("interactions", format!("({i}, {j}) out of range")));
            }
            p[i][j] = v;
        }
        let params = LotkaVolterraParams {
            growth: doc.growth,
            capacity: doc.capacity,
            interactions: p,
        };
        params.validate()?;
        Ok(GeneratedSystem {
            params,
            equilibrium: doc.equilibrium,
            requested_seed: doc.requested_seed,
            seed: doc.seed,
            rejections: doc.rejections,
            leading_real_part: doc.leading_real_part,
        })
    }
}
