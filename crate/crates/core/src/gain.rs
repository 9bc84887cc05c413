//! Observer gain synthesis and the covariance/threshold bound chain.
//!
//! Gains are diagonal within each CAV block, `K_i[c,c] = g(c) / d_i[c]`,
//! where `d_i[c]` counts the rows in `N(i)` that measure coordinate `c` and
//! `g` is a scalar (shared) or one scalar per state component. The scalars
//! are picked by a uniform grid followed by golden-section refinement. Every
//! returned design carries two certificates: `ρ(Â) < 1` and an isolation
//! ratio no larger than `ε`.
//!
//! With `A = I_N ⊗ Ã` and diagonal `K` and `D_C`, `Â` is permutation-similar
//! to a direct sum of per-HDV blocks `(I − diag(K D)_h)(W ⊗ Ã)`, so `ρ` and
//! `‖Â‖₂` are maxima over those blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::linalg::{block_diag, kronecker, spectral_radius, two_norm};
use crate::matstat::{Matrix, Vector};
use crate::topology::{
    check_network_observability, hdv_subsystem, CavNetwork, SharedObservation,
};

/// Denominators of the isolation ratio below this are degenerate.
pub const RATIO_DENOM_TOL: f64 = 1e-12;

/// Above this many states the observability certificate uses the per-HDV
/// route.
pub const DENSE_OBSERVABILITY_LIMIT: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainFamily {
    Shared,
    PerComponent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Minimize `ρ(Â)`.
    SpectralRadius,
    /// Minimize the variance bound `Θ`; requires `‖Â‖₂ < 1`.
    VarianceBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub g_min: f64,
    pub g_max: f64,
    pub points: usize,
    pub refine_iters: usize,
    /// Coordinate-descent passes for the per-component family.
    pub sweeps: usize,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            g_min: 0.02,
            g_max: 1.0,
            points: 50,
            refine_iters: 40,
            sweeps: 3,
        }
    }
}

/// Noise data the variance-bound objective needs.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLevels {
    pub g_norm: f64,
    /// Measurement noise variance of each CAV's sensor.
    pub r: Vec<f64>,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainDesign {
    pub family: GainFamily,
    pub objective: Objective,
    pub params: Vec<f64>,
    /// Diagonal of each `K_i`.
    pub k_diag: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub rho: f64,
    pub beta: f64,
    pub ratio: f64,
}

impl GainDesign {
    pub fn k_blocks(&self) -> Vec<Matrix> {
        self.k_diag
            .iter()
            .map(|d| Matrix::from_diagonal(&Vector::from_column_slice(d)))
            .collect()
    }

    pub fn k_dense(&self) -> Matrix {
        block_diag(&self.k_blocks())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundChain {
    /// Bound on `‖Q‖₂`: `α₁ n ‖G‖₂ + α₂ ‖R̄‖₂`.
    pub q_norm_bound: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub rbar_norm: f64,
    pub g_norm: f64,
    pub beta: f64,
    pub theta: f64,
    /// Residual scale `Φ_i = cΘ + R_i` per CAV.
    pub phi: Vec<f64>,
    pub c: f64,
}

/// `Â = W⊗A − K D_C (W⊗A)`.
pub fn closed_loop(w: &Matrix, a: &Matrix, k: &Matrix, d_c: &Matrix) -> Result<Matrix> {
    let f = kronecker(w, a);
    if k.shape() != f.shape() || d_c.shape() != f.shape() {
        return Err(Error::Dimension(format!(
            "W⊗A is {:?}, K is {:?}, D_C is {:?}",
            f.shape(),
            k.shape(),
            d_c.shape()
        )));
    }
    Ok(&f - k * d_c * &f)
}

/// Per-HDV blocks of `Â` for diagonal gains.
pub fn closed_loop_blocks(
    w: &Matrix,
    block: &Matrix,
    k_diag: &[Vec<f64>],
    counts: &[Vec<f64>],
) -> Vec<Matrix> {
    let m = block.nrows();
    let n_hdv = counts[0].len() / m;
    (0..n_hdv)
        .map(|h| {
            let (mut f, d) = hdv_subsystem(w, block, counts, h);
            for r in 0..f.nrows() {
                let (i, c) = (r / m, h * m + r % m);
                let s = 1.0 - k_diag[i][c] * d[r];
                f.row_mut(r).scale_mut(s);
            }
            f
        })
        .collect()
}

/// `(ρ(Â), ‖Â‖₂)` from the per-HDV blocks.
pub fn certify(
    w: &Matrix,
    block: &Matrix,
    k_diag: &[Vec<f64>],
    counts: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let mut rho: f64 = 0.0;
    let mut beta: f64 = 0.0;
    for b in closed_loop_blocks(w, block, k_diag, counts) {
        rho = rho.max(spectral_radius(&b)?);
        beta = beta.max(two_norm(&b));
    }
    Ok((rho, beta))
}

/// `max |C_iᵀ K_i C_j| / |C_j K_j C_jᵀ − 1|` over `i ≠ j ∈ N(i)` and all
/// channel pairs, with selector rows reducing each term to a matrix entry.
pub fn isolation_ratio(
    k: &[Matrix],
    selectors: &[Vec<usize>],
    neighborhoods: &[Vec<usize>],
) -> Result<f64> {
    if k.len() != selectors.len() || k.len() != neighborhoods.len() {
        return Err(Error::Dimension("gain, selectors and neighborhoods disagree".into()));
    }
    let mut worst: f64 = 0.0;
    for (i, nb) in neighborhoods.iter().enumerate() {
        for &j in nb.iter().filter(|&&j| j != i) {
            for (a, &ca) in selectors[j].iter().enumerate() {
                let denom = (k[j][(ca, ca)] - 1.0).abs();
                if denom < RATIO_DENOM_TOL {
                    return Err(Error::DegenerateGain { cav: j, channel: a });
                }
                for &cb in &selectors[i] {
                    worst = worst.max(k[i][(cb, ca)].abs() / denom);
                }
            }
        }
    }
    Ok(worst)
}

fn isolation_ratio_diag(
    k_diag: &[Vec<f64>],
    selectors: &[Vec<usize>],
    neighborhoods: &[Vec<usize>],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, nb) in neighborhoods.iter().enumerate() {
        for &j in nb.iter().filter(|&&j| j != i) {
            for (a, &ca) in selectors[j].iter().enumerate() {
                let denom = (k_diag[j][ca] - 1.0).abs();
                if denom < RATIO_DENOM_TOL {
                    return Err(Error::DegenerateGain { cav: j, channel: a });
                }
                if selectors[i].contains(&ca) {
                    worst = worst.max(k_diag[i][ca].abs() / denom);
                }
            }
        }
    }
    Ok(worst)
}

/// Diagonal gains for the given family parameters.
pub fn gain_from_params(family: GainFamily, params: &[f64], counts: &[Vec<f64>], m: usize) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|d| {
            d.iter()
                .enumerate()
                .map(|(c, &cnt)| {
                    if cnt == 0.0 {
                        return 0.0;
                    }
                    let g = match family {
                        GainFamily::Shared => params[0],
                        GainFamily::PerComponent => params[c % m],
                    };
                    g / cnt
                })
                .collect()
        })
        .collect()
}

/// Bound chain from the diagonal gain, the per-CAV noise variances and the
/// shared observation structure.
pub fn bound_chain(
    design: &GainDesign,
    noise: &NoiseLevels,
    shared: &SharedObservation,
) -> Result<BoundChain> {
    bound_chain_parts(&design.k_diag, design.beta, noise, shared)
}

fn bound_chain_parts(
    k_diag: &[Vec<f64>],
    beta: f64,
    noise: &NoiseLevels,
    shared: &SharedObservation,
) -> Result<BoundChain> {
    if !(beta < 1.0) {
        return Err(Error::Unbounded { beta });
    }
    let n = shared.n();
    if noise.r.len() != n {
        return Err(Error::Dimension(format!("{} noise variances for {n} CAVs", noise.r.len())));
    }
    let mut alpha1: f64 = 0.0;
    let mut alpha2: f64 = 0.0;
    let mut rbar: f64 = 0.0;
    for i in 0..n {
        let mut rdiag = vec![0.0; shared.nm];
        for &j in &shared.neighborhoods[i] {
            for &c in &shared.selectors[j] {
                rdiag[c] += noise.r[j];
            }
        }
        for c in 0..shared.nm {
            let k = k_diag[i][c];
            alpha1 = alpha1.max((1.0 - k * shared.counts[i][c]).powi(2));
            alpha2 = alpha2.max(k * k);
            rbar = rbar.max(rdiag[c]);
        }
    }
    let nf = n as f64;
    let q = alpha1 * nf * noise.g_norm + alpha2 * rbar;
    let theta = q / (nf * (1.0 - beta * beta));
    Ok(BoundChain {
        q_norm_bound: q,
        alpha1,
        alpha2,
        rbar_norm: rbar,
        g_norm: noise.g_norm,
        beta,
        theta,
        phi: noise.r.iter().map(|r| noise.c * theta + r).collect(),
        c: noise.c,
    })
}

struct Problem<'a> {
    network: &'a CavNetwork,
    block: &'a Matrix,
    shared: &'a SharedObservation,
    family: GainFamily,
    objective: Objective,
    epsilon: f64,
    noise: &'a NoiseLevels,
}

impl Problem<'_> {
    fn m(&self) -> usize {
        self.block.nrows()
    }

    /// Objective value, `+∞` when a certificate fails.
    fn score(&self, params: &[f64]) -> f64 {
        let k = gain_from_params(self.family, params, &self.shared.counts, self.m());
        let Ok((rho, beta)) = certify(&self.network.w, self.block, &k, &self.shared.counts) else {
            return f64::INFINITY;
        };
        if !(rho < 1.0) {
            return f64::INFINITY;
        }
        match isolation_ratio_diag(&k, &self.shared.selectors, &self.shared.neighborhoods) {
            Ok(r) if r <= self.epsilon => {}
            _ => return f64::INFINITY,
        }
        match self.objective {
            Objective::SpectralRadius => rho,
            Objective::VarianceBound => bound_chain_parts(&k, beta, self.noise, self.shared)
                .map_or(f64::INFINITY, |b| b.theta),
        }
    }

    /// Grid plus golden-section search over one coordinate of `params`.
    fn line_search(&self, params: &mut [f64], idx: usize, grid: &SearchGrid) -> f64 {
        let n = grid.points.max(2);
        let step = (grid.g_max - grid.g_min) / (n - 1) as f64;
        let eval = |g: f64, p: &mut [f64]| {
            p[idx] = g;
            self.score(p)
        };
        let mut p = params.to_vec();
        let mut best = (f64::INFINITY, params[idx], usize::MAX);
        for t in 0..n {
            let g = grid.g_min + step * t as f64;
            let s = eval(g, &mut p);
            if s < best.0 {
                best = (s, g, t);
            }
        }
        if best.2 == usize::MAX {
            params[idx] = best.1;
            return f64::INFINITY;
        }
        let lo = grid.g_min + step * best.2.saturating_sub(1) as f64;
        let hi = (grid.g_min + step * (best.2 + 1) as f64).min(grid.g_max);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - phi * (b - a);
        let mut x2 = a + phi * (b - a);
        let mut f1 = eval(x1, &mut p);
        let mut f2 = eval(x2, &mut p);
        for _ in 0..grid.refine_iters {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - phi * (b - a);
                f1 = eval(x1, &mut p);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + phi * (b - a);
                f2 = eval(x2, &mut p);
            }
        }
        let (fr, xr) = if f1 <= f2 { (f1, x1) } else { (f2, x2) };
        if fr < best.0 {
            best = (fr, xr, best.2);
        }
        params[idx] = best.1;
        best.0
    }
}

/// Search the gain family for the design minimizing `objective`, subject to
/// `ρ(Â) < 1` and isolation ratio `≤ ε`. Observability of `(W⊗A, D_C)` is
/// checked first.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_gain(
    network: &CavNetwork,
    block: &Matrix,
    shared: &SharedObservation,
    epsilon: f64,
    family: GainFamily,
    objective: Objective,
    grid: &SearchGrid,
    noise: &NoiseLevels,
) -> Result<GainDesign> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(grid.g_min > 0.0 && grid.g_max >= grid.g_min) {
        return Err(Error::Domain("search grid must satisfy 0 < g_min <= g_max".into()));
    }
    let obs = check_network_observability(network, block, shared, DENSE_OBSERVABILITY_LIMIT)?;
    if !obs.observable {
        return Err(Error::NotObservable {
            rank: obs.rank,
            dim: obs.dim,
        });
    }
    let problem = Problem {
        network,
        block,
        shared,
        family,
        objective,
        epsilon,
        noise,
    };
    let mut shared_g = [grid.g_min];
    let mut best = problem.line_search(&mut shared_g, 0, grid);
    if !best.is_finite() {
        return Err(Error::GainSearch(format!(
            "no g in [{}, {}] gives rho < 1 with ratio <= {epsilon}",
            grid.g_min, grid.g_max
        )));
    }
    let params = match family {
        GainFamily::Shared => shared_g.to_vec(),
        GainFamily::PerComponent => {
            let mut p = vec![shared_g[0]; block.nrows()];
            for _ in 0..grid.sweeps {
                let before = best;
                for c in 0..p.len() {
                    let mut trial = p.clone();
                    let s = problem.line_search(&mut trial, c, grid);
                    if s < best {
                        best = s;
                        p = trial;
                    }
                }
                if !(best < before) {
                    break;
                }
            }
            p
        }
    };
    let k_diag = gain_from_params(family, &params, &shared.counts, block.nrows());
    let (rho, beta) = certify(&network.w, block, &k_diag, &shared.counts)?;
    let ratio = isolation_ratio_diag(&k_diag, &shared.selectors, &shared.neighborhoods)?;
    debug_assert!(rho < 1.0 && ratio <= epsilon);
    Ok(GainDesign {
        family,
        objective,
        params,
        k_diag,
        epsilon,
        rho,
        beta,
        ratio,
    })
}

/// Per-CAV 2-norm of the sample covariance of `e^i` over the rows of
/// `errors` (`errors[t][i]` is CAV `i`'s error at sample `t`).
pub fn empirical_error_cov(errors: &[Vec<Vector>]) -> Result<Vec<f64>> {
    if errors.len() < 50 {
        return Err(Error::Domain(format!(
            "covariance window has {} samples, need at least 50",
            errors.len()
        )));
    }
    let n = errors[0].len();
    let t = errors.len() as f64;
    (0..n)
        .map(|i| {
            let dim = errors[0][i].len();
            let mut mean = Vector::zeros(dim);
            for row in errors {
                mean += &row[i];
            }
            mean /= t;
            let mut cov = Matrix::zeros(dim, dim);
            for row in errors {
                let d = &row[i] - &mean;
                cov += &d * d.transpose();
            }
            cov /= t - 1.0;
            Ok(crate::matstat::linalg::sym_two_norm(&cov))
        })
        .collect()
}

/// `‖P̂‖₂ / n` for the stacked network error, the quantity `Θ` bounds. The
/// norm is taken on the smaller of the two Gram matrices of the centered
/// samples.
pub fn empirical_network_cov(errors: &[Vec<Vector>]) -> Result<f64> {
    if errors.len() < 50 {
        return Err(Error::Domain(format!(
            "covariance window has {} samples, need at least 50",
            errors.len()
        )));
    }
    let n = errors[0].len();
    let t = errors.len();
    let dim: usize = errors[0].iter().map(|e| e.len()).sum();
    let mut data = Matrix::zeros(t, dim);
    for (r, row) in errors.iter().enumerate() {
        let mut c = 0;
        for e in row {
            data.view_mut((r, c), (1, e.len())).copy_from(&e.transpose());
            c += e.len();
        }
    }
    for mut col in data.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let gram = if t <= dim {
        &data * data.transpose()
    } else {
        data.transpose() * &data
    };
    Ok(crate::matstat::linalg::sym_two_norm(&gram) / (t as f64 - 1.0) / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ncv_block;
    use crate::topology::{build_shared_observation, ConsensusRule};

    fn fig1() -> (CavNetwork, Matrix, SharedObservation) {
        let mut adj = vec![vec![false; 4]; 4];
        for i in 0..4 {
            adj[i][(i + 1) % 4] = true;
            adj[i][(i + 3) % 4] = true;
        }
        let net = CavNetwork::from_adjacency(&adj, &ConsensusRule::Uniform).unwrap();
        let sel: Vec<Vec<usize>> = (0..4).map(|i| vec![2 * i, 2 * i + 1]).collect();
        let shared = build_shared_observation(&sel, &net.neighborhoods, 8).unwrap();
        (net, ncv_block(0.05).unwrap(), shared)
    }

    fn noise(n: usize) -> NoiseLevels {
        NoiseLevels { g_norm: 0.1, r: vec![0.15; n], c: 1.0 }
    }

    #[test]
    fn zero_gain_is_open_loop() {
        let (net, block, shared) = fig1();
        let a = kronecker(&Matrix::identity(4, 4), &block);
        let k = Matrix::zeros(32, 32);
        let ah = closed_loop(&net.w, &a, &k, &shared.d_c()).unwrap();
        assert_eq!(ah, kronecker(&net.w, &a));
    }

    #[test]
    fn blocks_agree_with_dense() {
        let (net, block, shared) = fig1();
        let k = gain_from_params(GainFamily::PerComponent, &[0.6, 0.3], &shared.counts, 2);
        let design_k = block_diag(
            &k.iter()
                .map(|d| Matrix::from_diagonal(&Vector::from_column_slice(d)))
                .collect::<Vec<_>>(),
        );
        let a = kronecker(&Matrix::identity(4, 4), &block);
        let dense = closed_loop(&net.w, &a, &design_k, &shared.d_c()).unwrap();
        let (rho, beta) = certify(&net.w, &block, &k, &shared.counts).unwrap();
        assert!((rho - spectral_radius(&dense).unwrap()).abs() < 1e-9);
        assert!((beta - two_norm(&dense)).abs() < 1e-9);
    }

    #[test]
    fn deadbeat_full_measurement() {
        let net = CavNetwork::from_adjacency(&[vec![true]], &ConsensusRule::Uniform).unwrap();
        let shared = build_shared_observation(&[vec![0, 1]], &net.neighborhoods, 2).unwrap();
        let block = ncv_block(0.1).unwrap();
        let d = synthesize_gain(
            &net,
            &block,
            &shared,
            0.5,
            GainFamily::Shared,
            Objective::SpectralRadius,
            &SearchGrid::default(),
            &noise(1),
        )
        .unwrap();
        assert_eq!(d.params, vec![1.0]);
        assert!(d.rho < 1e-12);
        assert_eq!(d.ratio, 0.0);
    }

    #[test]
    fn ratio_zero_for_disjoint_selectors() {
        let (net, block, shared) = fig1();
        for obj in [Objective::SpectralRadius, Objective::VarianceBound] {
            let d = synthesize_gain(
                &net,
                &block,
                &shared,
                0.5,
                GainFamily::Shared,
                obj,
                &SearchGrid::default(),
                &noise(4),
            )
            .unwrap();
            assert!(d.rho < 1.0);
            assert_eq!(d.ratio, 0.0);
            assert!(d.params[0] > 0.0 && d.params[0] <= 1.0);
        }
    }

    #[test]
    fn degenerate_denominator_errors() {
        let k = vec![Matrix::identity(2, 2) * 0.3, Matrix::identity(2, 2)];
        let sel = vec![vec![0], vec![1]];
        let nb = vec![vec![0, 1], vec![0, 1]];
        assert_eq!(
            isolation_ratio(&k, &sel, &nb).unwrap_err(),
            Error::DegenerateGain { cav: 1, channel: 0 }
        );
    }

    #[test]
    fn dense_ratio_by_hand() {
        let k0 = Matrix::from_row_slice(2, 2, &[0.2, 0.3, -0.4, 0.1]);
        let k1 = Matrix::from_row_slice(2, 2, &[0.5, 0.6, 0.7, 0.25]);
        let sel = vec![vec![0], vec![1]];
        let nb = vec![vec![0, 1], vec![0, 1]];
        // i=0,j=1: |K0[0,1]| / |K1[1,1]-1| = 0.3/0.75 ; i=1,j=0: |K1[1,0]| / |K0[0,0]-1| = 0.7/0.8
        let r = isolation_ratio(&[k0, k1], &sel, &nb).unwrap();
        assert!((r - 0.875).abs() < 1e-15);
    }

    #[test]
    fn bound_chain_collapses_at_zero_gain() {
        let (_, _, shared) = fig1();
        let k = vec![vec![0.0; 8]; 4];
        let b = bound_chain_parts(&k, 0.6, &noise(4), &shared).unwrap();
        assert_eq!(b.alpha1, 1.0);
        assert_eq!(b.alpha2, 0.0);
        assert!((b.theta - 0.1 / (1.0 - 0.36)).abs() < 1e-15);
        let zero = NoiseLevels { g_norm: 0.0, r: vec![0.0; 4], c: 1.0 };
        let b = bound_chain_parts(&k, 0.6, &zero, &shared).unwrap();
        assert_eq!((b.theta, b.phi[0]), (0.0, 0.0));
        assert!(matches!(
            bound_chain_parts(&k, 1.0, &zero, &shared),
            Err(Error::Unbounded { .. })
        ));
    }

    #[test]
    fn short_covariance_window_rejected() {
        let rows = vec![vec![Vector::zeros(2)]; 49];
        assert!(empirical_error_cov(&rows).is_err());
        let rows = vec![vec![Vector::zeros(2)]; 50];
        assert_eq!(empirical_error_cov(&rows).unwrap(), vec![0.0]);
        assert_eq!(empirical_network_cov(&rows).unwrap(), 0.0);
    }
}
