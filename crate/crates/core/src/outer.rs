//! Outer problem: for a gain field `g`,
//!
//! ```text
//! maximize  P(ρ) = ∫ g ρ − τ TV(ρ)   over 0 ≤ ρ ≤ 1, ∫ ρ = V.
//! ```
//!
//! The relaxed problem is solved by the Chambolle–Pock primal-dual method
//! with one dual vector per cell for the TV term. The primal step projects
//! onto the box intersected with the volume hyperplane, which reduces to a
//! scalar search for the multiplier `λ` in `clip(x + λ, 0, 1)`. Any dual
//! iterate `y` with `|y_c| ≤ τ` certifies the upper bound
//! `P* ≤ max_ρ ∫ (g − ∇⁺ᵀy) ρ`, a bathtub problem, so the returned
//! bracket `[lower, upper]` is rigorous.
//!
//! Binary mode thresholds the relaxed solution at the level that meets the
//! volume and then improves it by single fluid/air cell swaps.

use std::cmp::Ordering;

use thiserror::Error;

use crate::error::Error;
use crate::grid::{
    forward_difference, forward_difference_adjoint, forward_difference_norm_sq_bound, local_tv_density,
    total_variation_raw, DensityField, DomainSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterMode {
    Relaxed,
    Binary,
}

impl std::str::FromStr for OuterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "relaxed" => Ok(Self::Relaxed),
            "binary" => Ok(Self::Binary),
            other => Err(Error::InvalidParameter(format!("unknown outer mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for OuterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Relaxed => "relaxed",
            Self::Binary => "binary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterOptions {
    /// Stop once `upper − lower ≤ tol·(1 + |lower|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub mode: OuterMode,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 20_000, mode: OuterMode::Binary }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterReport {
    pub iterations: usize,
    /// `P` at the returned relaxed density.
    pub relaxed_value: f64,
    /// `P` at the binarized density (binary mode only).
    pub binary_value: Option<f64>,
    /// Certified upper bound on the relaxed maximum.
    pub upper_bound: f64,
    /// `|∫ρ − V|` of the returned relaxed density.
    pub volume_error: f64,
    /// `upper_bound − relaxed_value`.
    pub gap: f64,
    /// Whether the binary density was found by exhaustive enumeration.
    pub binary_exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterSolution {
    /// Relaxed maximizer.
    pub relaxed: DensityField,
    /// Binarized maximizer in binary mode, otherwise a copy of `relaxed`.
    pub density: DensityField,
    pub report: OuterReport,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OuterError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("outer solve stopped after {} iterations with gap {}", .0.report.iterations, .0.report.gap)]
    NonConvergence(Box<OuterSolution>),
}

impl OuterError {
    /// The best available solution, if the solve got far enough to have one.
    pub fn into_solution(self) -> Option<OuterSolution> {
        match self {
            Self::NonConvergence(s) => Some(*s),
            Self::Invalid(_) => None,
        }
    }
}

/// Primal-dual state carried between related solves.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterWarmStart {
    rho: Vec<f64>,
    dual: Vec<f64>,
    lambda: f64,
}

/// `∫ g ρ − τ TV(ρ)`.
pub fn outer_objective(spec: &DomainSpec, g: &[f64], tau: f64, rho: &[f64]) -> f64 {
    let lin: f64 = g.iter().zip(rho).map(|(a, b)| a * b).sum();
    let tv = if tau > 0.0 { total_variation_raw(spec, rho) } else { 0.0 };
    lin * spec.cell_measure() - tau * tv
}

/// Number of full cells a binary field of volume `volume` occupies.
pub fn binary_cell_count(spec: &DomainSpec, volume: f64) -> usize {
    (volume / spec.cell_measure()).round() as usize
}

fn check_volume(spec: &DomainSpec, volume: f64) -> Result<(), Error> {
    let max = spec.domain_measure();
    if !(volume > 0.0 && volume < max) {
        return Err(Error::InfeasibleVolume { volume, max });
    }
    Ok(())
}

/// Cell order by decreasing gain, ties by increasing index.
fn order_by_gain(g: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| g[b].partial_cmp(&g[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Exact maximizer of `∫ g ρ` over `0 ≤ ρ ≤ 1`, `∫ρ = V`: fills the cells of
/// largest gain, ties broken by lowest cell index, with at most one
/// fractional cell.
pub fn bathtub_oracle(spec: &DomainSpec, g: &[f64], volume: f64) -> Result<DensityField, Error> {
    spec.check_len(spec.n_cells(), g.len())?;
    check_volume(spec, volume)?;
    let mut cells_left = volume / spec.cell_measure();
    let mut rho = vec![0.0; g.len()];
    for c in order_by_gain(g) {
        if cells_left <= 0.0 {
            break;
        }
        let take = cells_left.min(1.0);
        rho[c] = take;
        cells_left -= take;
    }
    DensityField::from_values(rho)
}

/// `max Σ w_c ρ_c` over `0 ≤ ρ ≤ 1`, `Σ ρ = count` (count may be fractional).
fn bathtub_value(w: &[f64], count: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(w);
    let whole = (count.floor() as usize).min(w.len());
    let frac = count - whole as f64;
    let desc = |a: &f64, b: &f64| b.partial_cmp(a).unwrap_or(Ordering::Equal);
    let mut total = 0.0;
    if whole < scratch.len() {
        let (top, nth, _) = scratch.select_nth_unstable_by(whole, desc);
        total += top.iter().sum::<f64>();
        total += frac * *nth;
    } else {
        total += scratch.iter().sum::<f64>();
    }
    total
}

/// Euclidean projection of `x` onto `{0 ≤ ρ ≤ 1, Σρ = count}`: `ρ = clip(x + λ)`
/// where `λ` solves the monotone scalar equation `Σ clip(x + λ) = count`.
/// Safeguarded Newton from the warm start `lambda`, bisection as fallback.
fn project_box_volume(x: &[f64], count: f64, lambda: &mut f64, out: &mut [f64]) {
    let eval = |l: f64| {
        let mut s = 0.0;
        let mut active = 0usize;
        for &v in x {
            let t = v + l;
            if t >= 1.0 {
                s += 1.0;
            } else if t > 0.0 {
                s += t;
                active += 1;
            }
        }
        (s - count, active)
    };
    let (mut lo, mut hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    // f(−max x) = −count < 0 and f(1 − min x) = n − count > 0.
    (lo, hi) = (-hi, 1.0 - lo);
    let tol = 1e-13 * count.max(1.0);
    let mut l = lambda.clamp(lo, hi);
    for _ in 0..200 {
        let (f, active) = eval(l);
        if f.abs() <= tol {
            break;
        }
        if f < 0.0 {
            lo = l;
        } else {
            hi = l;
        }
        let newton = if active > 0 { l - f / active as f64 } else { f64::NAN };
        l = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-16 * (1.0 + l.abs()) {
            break;
        }
    }
    *lambda = l;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v + l).clamp(0.0, 1.0);
    }
}

/// Solves the relaxed problem, then binarizes in binary mode.
pub fn solve_outer(
    spec: &DomainSpec,
    g: &[f64],
    tau: f64,
    volume: f64,
    options: &OuterOptions,
) -> Result<OuterSolution, OuterError> {
    solve_outer_warm(spec, g, tau, volume, options, None).map(|(s, _)| s).map_err(|(e, _)| e)
}

/// [`solve_outer`] with a primal-dual warm start; returns the final state for
/// the next related solve, also on non-convergence.
#[allow(clippy::type_complexity)]
pub fn solve_outer_warm(
    spec: &DomainSpec,
    g: &[f64],
    tau: f64,
    volume: f64,
    options: &OuterOptions,
    warm: Option<OuterWarmStart>,
) -> Result<(OuterSolution, OuterWarmStart), (OuterError, Option<OuterWarmStart>)> {
    spec.check_len(spec.n_cells(), g.len()).map_err(|e| (e.into(), None))?;
    check_volume(spec, volume).map_err(|e| (e.into(), None))?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err((Error::InvalidParameter(format!("tau = {tau} must be nonnegative")).into(), None));
    }
    if !(options.tol > 0.0) {
        return Err((Error::InvalidParameter("outer tolerance must be positive".into()).into(), None));
    }
    let n = spec.n_cells();
    let dim = spec.dim();
    let m = spec.cell_measure();
    let count = volume / m;

    let (relaxed, state, iterations, lower, upper, converged) = if tau == 0.0 {
        let rho = bathtub_oracle(spec, g, volume).map_err(|e| (e.into(), None))?.into_vec();
        let value = outer_objective(spec, g, 0.0, &rho);
        let state = OuterWarmStart { rho: rho.clone(), dual: vec![0.0; n * dim], lambda: 0.0 };
        (rho, state, 0, value, value, true)
    } else {
        pdhg(spec, g, tau, count, options, warm)
    };

    let volume_error = (relaxed.iter().sum::<f64>() * m - volume).abs();
    let relaxed_field = DensityField::from_raw(relaxed);
    let mut binary_exact = false;
    let (density, binary_value) = match options.mode {
        OuterMode::Relaxed => (relaxed_field.clone(), None),
        OuterMode::Binary => {
            let (chi, value, exact) = best_binary(spec, g, tau, relaxed_field.as_slice(), volume);
            binary_exact = exact;
            (DensityField::from_raw(chi), Some(value))
        }
    };
    let solution = OuterSolution {
        relaxed: relaxed_field,
        density,
        report: OuterReport {
            iterations,
            relaxed_value: lower,
            binary_value,
            upper_bound: upper,
            volume_error,
            gap: upper - lower,
            binary_exact,
        },
    };
    if converged {
        Ok((solution, state))
    } else {
        Err((OuterError::NonConvergence(Box::new(solution)), Some(state)))
    }
}

/// Returns `(best relaxed ρ, final state, iterations, lower, upper, converged)`.
fn pdhg(
    spec: &DomainSpec,
    g: &[f64],
    tau: f64,
    count: f64,
    options: &OuterOptions,
    warm: Option<OuterWarmStart>,
) -> (Vec<f64>, OuterWarmStart, usize, f64, f64, bool) {
    let n = spec.n_cells();
    let dim = spec.dim();
    let m = spec.cell_measure();
    let l2 = forward_difference_norm_sq_bound(spec);
    // Balance the steps to the ranges of the variables: ρ ∈ [0, 1], |y| ≤ τ.
    let step_primal = (0.99 / (l2 * tau)).sqrt();
    let step_dual = (0.99 * tau / l2).sqrt();

    let (mut rho, mut y, mut lambda) = match warm {
        Some(w) if w.rho.len() == n && w.dual.len() == n * dim => {
            // Rescale the dual ball in case τ changed.
            let mut y = w.dual;
            project_dual(&mut y, dim, tau);
            let mut rho = vec![0.0; n];
            let mut lambda = w.lambda;
            project_box_volume(&w.rho, count, &mut lambda, &mut rho);
            (rho, y, lambda)
        }
        _ => {
            let start = bathtub_oracle(spec, g, count * m).map(|r| r.into_vec()).unwrap_or_else(|_| vec![0.0; n]);
            (start, vec![0.0; n * dim], 0.0)
        }
    };
    let mut rho_bar = rho.clone();
    let mut kx = vec![0.0; n * dim];
    let mut kty = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut rho_new = vec![0.0; n];
    let mut scratch = Vec::with_capacity(n);
    let mut w = vec![0.0; n];

    let mut best_rho = rho.clone();
    let mut lower = outer_objective(spec, g, tau, &rho);
    let mut upper = f64::INFINITY;
    let check_every = 20;
    let mut it = 0;
    let mut converged = false;
    loop {
        if it % check_every == 0 {
            forward_difference_adjoint(spec, &y, &mut kty);
            for c in 0..n {
                w[c] = g[c] - kty[c];
            }
            upper = upper.min(m * bathtub_value(&w, count, &mut scratch));
            let value = outer_objective(spec, g, tau, &rho);
            if value > lower {
                lower = value;
                best_rho.copy_from_slice(&rho);
            }
            if upper - lower <= options.tol * (1.0 + lower.abs()) {
                converged = true;
                break;
            }
            if it >= options.max_iter {
                break;
            }
        }
        forward_difference(spec, &rho_bar, &mut kx);
        for (yi, ki) in y.iter_mut().zip(&kx) {
            *yi += step_dual * ki;
        }
        project_dual(&mut y, dim, tau);
        forward_difference_adjoint(spec, &y, &mut kty);
        for c in 0..n {
            x[c] = rho[c] - step_primal * (kty[c] - g[c]);
        }
        project_box_volume(&x, count, &mut lambda, &mut rho_new);
        for c in 0..n {
            rho_bar[c] = 2.0 * rho_new[c] - rho[c];
        }
        std::mem::swap(&mut rho, &mut rho_new);
        it += 1;
    }
    let state = OuterWarmStart { rho, dual: y, lambda };
    (best_rho, state, it, lower, upper, converged)
}

fn project_dual(y: &mut [f64], dim: usize, tau: f64) {
    for v in y.chunks_exact_mut(dim) {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > tau {
            let s = tau / norm;
            v.iter_mut().for_each(|a| *a *= s);
        }
    }
}

/// Binary field of the cells with the largest `ρ`, as many as the volume
/// allows. Ties go to the lowest cell first, then to the lowest index.
pub fn binarize(spec: &DomainSpec, rho: &DensityField, volume: f64) -> Result<DensityField, Error> {
    spec.check_len(spec.n_cells(), rho.len())?;
    check_volume(spec, volume)?;
    Ok(DensityField::from_raw(binarize_raw(spec, rho.as_slice(), volume)))
}

fn binarize_raw(spec: &DomainSpec, rho: &[f64], volume: f64) -> Vec<f64> {
    let k = binary_cell_count(spec, volume);
    let mut idx: Vec<usize> = (0..rho.len()).collect();
    idx.sort_by(|&a, &b| {
        rho[b]
            .partial_cmp(&rho[a])
            .unwrap_or(Ordering::Equal)
            .then(spec.layer(a).cmp(&spec.layer(b)))
            .then(a.cmp(&b))
    });
    let mut chi = vec![0.0; rho.len()];
    for &c in idx.iter().take(k) {
        chi[c] = 1.0;
    }
    chi
}

/// Search spaces up to this many binary fields are enumerated exhaustively.
pub const EXACT_BINARY_LIMIT: u64 = 250_000;

pub(crate) fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut b: u64 = 1;
    for i in 0..k as u64 {
        b = match b.checked_mul(n as u64 - i) {
            Some(v) => v / (i + 1),
            None => return u64::MAX,
        };
    }
    b
}

/// Binary maximizer candidates: the thresholded relaxed solution and the
/// bathtub fill of `g`, each polished by swaps. Tiny search spaces are
/// enumerated instead, since swap local search can stall in a local optimum.
/// Returns `(χ, P(χ), exact)`.
fn best_binary(spec: &DomainSpec, g: &[f64], tau: f64, relaxed: &[f64], volume: f64) -> (Vec<f64>, f64, bool) {
    let n = g.len();
    let k = binary_cell_count(spec, volume);
    if n <= 64 && k > 0 && k < n && binomial(n, k) <= EXACT_BINARY_LIMIT {
        return enumerate_binary(spec, g, tau, k);
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in [binarize_raw(spec, relaxed, volume), binarize_raw(spec, g, volume)] {
        let chi = polish_binary(spec, g, tau, &start);
        let value = outer_objective(spec, g, tau, &chi);
        if best.as_ref().map_or(true, |(_, v)| value > *v) {
            best = Some((chi, value));
        }
    }
    let (chi, value) = best.expect("at least one candidate");
    (chi, value, false)
}

/// Visits every `k`-subset of cells in increasing bit order (Gosper's hack);
/// the first maximizer wins ties.
pub(crate) fn enumerate_binary(spec: &DomainSpec, g: &[f64], tau: f64, k: usize) -> (Vec<f64>, f64, bool) {
    let n = g.len();
    let mut chi = vec![0.0; n];
    let mut best_mask = 0u64;
    let mut best = f64::NEG_INFINITY;
    let mut mask: u64 = (1u64 << k) - 1;
    let limit: u64 = if n == 64 { u64::MAX } else { 1u64 << n };
    while mask < limit && mask != 0 {
        for (c, x) in chi.iter_mut().enumerate() {
            *x = (mask >> c & 1) as f64;
        }
        let value = outer_objective(spec, g, tau, &chi);
        if value > best {
            best = value;
            best_mask = mask;
        }
        let low = mask & mask.wrapping_neg();
        let ripple = mask.wrapping_add(low);
        if ripple == 0 {
            break;
        }
        mask = (((ripple ^ mask) >> 2) / low) | ripple;
    }
    for (c, x) in chi.iter_mut().enumerate() {
        *x = (best_mask >> c & 1) as f64;
    }
    (chi, best, true)
}

/// Cells whose forward-difference norm depends on the value at `cell`.
fn tv_stencil(spec: &DomainSpec, cell: usize, out: &mut Vec<usize>) {
    out.clear();
    out.push(cell);
    let idx = spec.cell_multi_index(cell);
    for a in 0..spec.dim() {
        if idx[a] > 0 {
            out.push(cell - spec.cell_strides()[a]);
        }
    }
}

fn local_tv_sum(spec: &DomainSpec, chi: &[f64], cells: &[usize]) -> f64 {
    cells.iter().map(|&c| local_tv_density(spec, chi, c, &spec.cell_multi_index(c))).sum()
}

/// Change of `P` when the cells in `flip` change phase.
pub(crate) fn flip_delta(spec: &DomainSpec, g: &[f64], tau: f64, chi: &mut [f64], flip: &[usize], stencil: &mut Vec<usize>) -> f64 {
    let m = spec.cell_measure();
    let mut cells = Vec::with_capacity(8);
    for &c in flip {
        tv_stencil(spec, c, stencil);
        for &s in stencil.iter() {
            if !cells.contains(&s) {
                cells.push(s);
            }
        }
    }
    let before = local_tv_sum(spec, chi, &cells);
    let mut lin = 0.0;
    for &c in flip {
        lin += if chi[c] == 1.0 { -g[c] } else { g[c] };
        chi[c] = 1.0 - chi[c];
    }
    let after = local_tv_sum(spec, chi, &cells);
    for &c in flip {
        chi[c] = 1.0 - chi[c];
    }
    m * (lin - tau * (after - before))
}

/// Best-improvement single swaps (one fluid cell out, one air cell in) until
/// none improves `P`. On small grids every pair is examined; otherwise the
/// most promising cells on each side.
fn polish_binary(spec: &DomainSpec, g: &[f64], tau: f64, chi: &[f64]) -> Vec<f64> {
    let n = chi.len();
    let mut chi = chi.to_vec();
    let shortlist = if n <= 256 { n } else { 48 };
    let mut stencil = Vec::with_capacity(4);
    let scale = 1.0 + outer_objective(spec, g, tau, &chi).abs();
    for _ in 0..(10 * n) {
        let mut ones = Vec::new();
        let mut zeros = Vec::new();
        for c in 0..n {
            let d = flip_delta(spec, g, tau, &mut chi, &[c], &mut stencil);
            if chi[c] == 1.0 {
                ones.push((d, c));
            } else {
                zeros.push((d, c));
            }
        }
        let by_gain = |a: &(f64, usize), b: &(f64, usize)| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
        ones.sort_by(by_gain);
        zeros.sort_by(by_gain);
        ones.truncate(shortlist);
        zeros.truncate(shortlist);
        let mut best: Option<(f64, usize, usize)> = None;
        for &(_, i) in &ones {
            for &(_, j) in &zeros {
                let d = flip_delta(spec, g, tau, &mut chi, &[i, j], &mut stencil);
                if d > 1e-13 * scale && best.map_or(true, |(bd, _, _)| d > bd) {
                    best = Some((d, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                chi[i] = 0.0;
                chi[j] = 1.0;
            }
            None => break,
        }
    }
    chi
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bathtub_fills_by_gain() {
        let spec = DomainSpec::two_d(1.0, 2, 4).unwrap();
        let up: Vec<f64> = (0..spec.n_cells()).map(|c| spec.cell_z(c)).collect();
        let top = bathtub_oracle(&spec, &up, 1.0).unwrap();
        assert_eq!(top, DensityField::indicator(&spec, |c| spec.cell_z(c) > 0.0));
        let down: Vec<f64> = up.iter().map(|v| -v).collect();
        assert_eq!(bathtub_oracle(&spec, &down, 1.0).unwrap(), DensityField::flat_layer(&spec));
        let flat = vec![0.0; spec.n_cells()];
        let tied = bathtub_oracle(&spec, &flat, 1.0).unwrap();
        assert_eq!(tied, DensityField::indicator(&spec, |c| c < 4));
    }

    #[test]
    fn bathtub_has_one_fractional_cell() {
        let spec = DomainSpec::two_d(1.0, 3, 3).unwrap();
        let g: Vec<f64> = (0..9).map(|c| c as f64).collect();
        let rho = bathtub_oracle(&spec, &g, 1.0).unwrap();
        // V / m = 4.5 cells.
        assert_eq!(rho.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn infeasible_volumes_are_rejected() {
        let spec = DomainSpec::two_d(1.0, 2, 2).unwrap();
        let g = vec![0.0; 4];
        assert!(matches!(bathtub_oracle(&spec, &g, 0.0), Err(Error::InfeasibleVolume { .. })));
        assert!(matches!(
            solve_outer(&spec, &g, 0.1, 2.0, &OuterOptions::default()),
            Err(OuterError::Invalid(Error::InfeasibleVolume { .. }))
        ));
    }

    #[test]
    fn projection_meets_volume_and_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.gen_range(2..200);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let count = rng.gen_range(0.1..(n as f64 - 0.1));
            let mut lambda = rng.gen_range(-5.0..5.0);
            let mut out = vec![0.0; n];
            project_box_volume(&x, count, &mut lambda, &mut out);
            assert!((out.iter().sum::<f64>() - count).abs() < 1e-10);
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn volume_map_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let vol = |l: f64| x.iter().map(|v| (v + l).clamp(0.0, 1.0)).sum::<f64>();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..400 {
            let v = vol(-3.0 + i as f64 * 0.015);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn binarize_keeps_binary_fields_and_breaks_ties_low() {
        let spec = DomainSpec::two_d(1.0, 4, 6).unwrap();
        let chi = DensityField::indicator(&spec, |c| (c * 7) % 2 == 0);
        assert_eq!(binarize(&spec, &chi, 1.0).unwrap(), chi);
        let half = DensityField::constant(&spec, 0.5).unwrap();
        assert_eq!(binarize(&spec, &half, 1.0).unwrap(), DensityField::flat_layer(&spec));
        // ρ decreasing in z: a layer at the volume quantile.
        let lin = DensityField::from_fn(&spec, |x| 0.5 - 0.4 * x[1]).unwrap();
        let chi = binarize(&spec, &lin, 4.0 * spec.cell_measure()).unwrap();
        assert_eq!(chi, DensityField::indicator(&spec, |c| spec.cell_z(c) < -0.5));
    }

    #[test]
    fn relaxed_solution_certifies_its_gap() {
        let spec = DomainSpec::two_d(1.0, 12, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<f64> = (0..spec.n_cells()).map(|c| -spec.cell_z(c) + 0.3 * rng.gen_range(-1.0..1.0)).collect();
        let opts = OuterOptions { tol: 1e-7, max_iter: 200_000, mode: OuterMode::Relaxed };
        let sol = solve_outer(&spec, &g, 0.05, 1.0, &opts).unwrap();
        let r = &sol.report;
        assert!(r.gap <= 1e-7 * (1.0 + r.relaxed_value.abs()));
        assert!(r.volume_error <= 1e-10);
        // No random feasible density beats the certified bound.
        for _ in 0..100 {
            let raw: Vec<f64> = (0..spec.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut lambda = 0.0;
            let mut probe = vec![0.0; raw.len()];
            project_box_volume(&raw, 1.0 / spec.cell_measure(), &mut lambda, &mut probe);
            assert!(outer_objective(&spec, &g, 0.05, &probe) <= r.relaxed_value + 1e-7 * (1.0 + r.relaxed_value.abs()));
        }
    }

    #[test]
    fn zero_tension_matches_bathtub() {
        let spec = DomainSpec::two_d(1.0, 5, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g: Vec<f64> = (0..spec.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sol = solve_outer(&spec, &g, 0.0, 1.0, &OuterOptions::default()).unwrap();
            assert_eq!(sol.density, bathtub_oracle(&spec, &g, 1.0).unwrap());
        }
    }

    #[test]
    fn swap_deltas_match_full_evaluation() {
        let spec = DomainSpec::new(&[1.0, 1.0], &[3, 3], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g: Vec<f64> = (0..spec.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut chi: Vec<f64> = (0..spec.n_cells()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mut stencil = Vec::new();
        let base = outer_objective(&spec, &g, 0.3, &chi);
        for i in 0..spec.n_cells() {
            for j in 0..spec.n_cells() {
                let flip: Vec<usize> = if i == j { vec![i] } else { vec![i, j] };
                let d = flip_delta(&spec, &g, 0.3, &mut chi, &flip, &mut stencil);
                let mut other = chi.clone();
                for &c in &flip {
                    other[c] = 1.0 - other[c];
                }
                assert!((d - (outer_objective(&spec, &g, 0.3, &other) - base)).abs() < 1e-12);
            }
        }
    }

    fn brute_force(spec: &DomainSpec, g: &[f64], tau: f64, k: usize) -> f64 {
        let n = spec.n_cells();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let chi: Vec<f64> = (0..n).map(|c| if mask >> c & 1 == 1 { 1.0 } else { 0.0 }).collect();
            best = best.max(outer_objective(spec, g, tau, &chi));
        }
        best
    }

    #[test]
    fn binary_mode_matches_enumeration_on_three_by_four() {
        let spec = DomainSpec::two_d(1.0, 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let opts = OuterOptions { tol: 1e-9, max_iter: 100_000, mode: OuterMode::Binary };
        let k = binary_cell_count(&spec, 1.0);
        let mut misses = 0;
        for tau in [0.0, 0.05, 0.5] {
            for _ in 0..30 {
                let g: Vec<f64> = (0..spec.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let sol = solve_outer(&spec, &g, tau, 1.0, &opts).unwrap();
                let v = sol.report.binary_value.unwrap();
                let best = brute_force(&spec, &g, tau, k);
                if (v - best).abs() > 1e-9 {
                    misses += 1;
                    eprintln!("tau {tau}: {v} vs {best}");
                }
            }
        }
        assert_eq!(misses, 0);
    }

    #[test]
    fn swap_polish_is_a_local_optimum() {
        let spec = DomainSpec::two_d(1.0, 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for tau in [0.05, 0.5] {
            let g: Vec<f64> = (0..spec.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let start = binarize_raw(&spec, &g, 1.0);
            let chi = polish_binary(&spec, &g, tau, &start);
            let value = outer_objective(&spec, &g, tau, &chi);
            assert!(value >= outer_objective(&spec, &g, tau, &start));
            let mut stencil = Vec::new();
            let mut probe = chi.clone();
            for i in (0..chi.len()).filter(|&i| chi[i] == 1.0) {
                for j in (0..chi.len()).filter(|&j| chi[j] == 0.0) {
                    assert!(flip_delta(&spec, &g, tau, &mut probe, &[i, j], &mut stencil) <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(12, 6), 924);
        assert_eq!(binomial(16, 8), 12870);
        assert!(binomial(64, 32) > EXACT_BINARY_LIMIT);
    }
}
