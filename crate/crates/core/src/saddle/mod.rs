//! Damped alternating saddle iteration with computable bounds.
//!
//! Each sweep solves the inner problem at the current density `ρ_k` (giving
//! `u_k`), binarizes `ρ_k` to `χ_k`, and evaluates
//!
//! * the lower bound `ℓ_k = min_u J(u, χ_k)`, a max-min value, and
//! * the upper value `m_k = max_χ J(u_k, χ)`, a min-max value.
//!
//! Any `ℓ_j` lies below any `m_i`, so the run keeps the largest lower and the
//! smallest upper value seen and certifies their difference. The density then
//! moves toward the outer maximizer `ρ*_k`, `ρ_{k+1} = (1 − θ)ρ_k + θρ*_k`,
//! with `θ ∈ [0, θ_max]` maximizing `min_u J(u, ρ_{k+1})` along the segment.
//! That function is concave in `ρ`, so the search is a golden-section search
//! and `J(u_k, ρ_k)` never decreases.

mod verify;

pub use verify::{
    bubble_count, check_saddle, energy_indicator_probe, free_surface_residual, nontriviality_check, verify_bottom_distance, verify_duality_linear,
    verify_norm_bound, CheckResult, FreeSurfaceResidual, VerifyReport,
};

use std::time::Instant;

use thiserror::Error;

use crate::error::Error;
use crate::functional::{air_energy_raw, gain_raw, j_raw, PhysicalParams};
use crate::grid::{gradient, total_variation_raw, DensityField, DomainSpec, PotentialField};
use crate::inner::{solve_inner, InnerError, InnerOptions};
use crate::maglaw::MagnetizationLaw;
use crate::outer::{binarize, flip_delta, outer_objective, solve_outer_warm, OuterMode, OuterOptions, OuterWarmStart};

/// Window over which the per-sweep gap is expected to be nonincreasing.
const MONOTONE_WINDOW: usize = 10;
/// Golden-section evaluations per line search.
const LINE_SEARCH_STEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleOptions {
    pub inner: InnerOptions,
    pub outer: OuterOptions,
    /// Stop once the certified gap is at most `tol_gap·(1 + |m|)`.
    pub tol_gap: f64,
    pub max_sweeps: usize,
    /// Largest averaging weight, in `(0, 1]`.
    pub theta: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            inner: InnerOptions::default(),
            outer: OuterOptions::default(),
            tol_gap: 1e-4,
            max_sweeps: 200,
            theta: 0.5,
        }
    }
}

/// Bounds and diagnostics of one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    /// `ℓ_k = min_u J(u, χ_k)`.
    pub lower: f64,
    /// `m_k = max_χ J(u_k, χ)`.
    pub upper: f64,
    /// `min_u J(u, ρ_k)` with the perimeter of `ρ_k` replaced by the averaged
    /// perimeter of the indicators it mixes.
    pub mixed_lower: f64,
    /// Certified upper bound on `max_ρ J(u_k, ρ)` over relaxed densities.
    pub certified_upper: f64,
    /// Best upper minus best lower value so far.
    pub gap: f64,
    /// `‖∇u_k‖_{L²}`.
    pub u_norm: f64,
    /// `∫ ρ_k`.
    pub volume: f64,
    /// Step taken after this sweep.
    pub theta: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Whether every sub-solve of the sweep met its tolerance.
    pub subsolves_converged: bool,
}

impl SweepRecord {
    /// `m_k − ℓ_k`.
    pub fn sweep_gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Result of a saddle run.
///
/// `u` and `chi` form the reported pair: `u` from the min-max side (the
/// potential with the smallest outer maximum `upper`) and `chi` from the
/// max-min side (the indicator with the largest inner minimum `lower`). The
/// opposite pairing is kept in `u_of_chi` and `chi_of_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleState {
    pub u: PotentialField,
    /// Density of the sweep that produced `u`.
    pub rho: DensityField,
    pub chi: DensityField,
    /// Minimizer of `J(·, chi)`.
    pub u_of_chi: PotentialField,
    /// Outer maximizer at `u`.
    pub chi_of_u: DensityField,
    pub lower: f64,
    pub upper: f64,
    /// Certified upper bound on the relaxed outer maximum at `u`.
    pub certified_upper: f64,
    pub gap: f64,
    /// Sweeps at which `u` and `chi` were found.
    pub upper_sweep: usize,
    pub lower_sweep: usize,
    pub converged: bool,
    /// False if `m_k − ℓ_k` rose within the last ten sweeps.
    pub gap_monotone: bool,
    /// False if an inner or outer solve stopped at its iteration cap.
    pub subsolves_converged: bool,
    pub history: Vec<SweepRecord>,
    pub wallclock: f64,
}

impl SaddleState {
    /// `J(u, chi)`.
    pub fn value(&self, spec: &DomainSpec, law: &MagnetizationLaw, params: &PhysicalParams) -> f64 {
        j_raw(spec, law, params, self.u.as_slice(), self.chi.as_slice())
    }

    /// `gap / (1 + |upper|)`.
    pub fn relative_gap(&self) -> f64 {
        self.gap / (1.0 + self.upper.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SaddleError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("saddle iteration stopped after {} sweeps with gap {}", .0.history.len(), .0.gap)]
    NonConvergence(Box<SaddleState>),
}

impl SaddleError {
    pub fn state(&self) -> Option<&SaddleState> {
        match self {
            Self::NonConvergence(s) => Some(s),
            Self::Invalid(_) => None,
        }
    }
}

/// `‖∇u‖_{L²(D)}`.
pub fn potential_norm(spec: &DomainSpec, u: &PotentialField) -> Result<f64, Error> {
    let g = gradient(spec, u)?;
    Ok((g.as_slice().iter().map(|v| v * v).sum::<f64>() * spec.cell_measure()).sqrt())
}

/// Flat layer of volume `|Ω|`: binary for even `n_z`, with a half-filled
/// middle layer otherwise.
pub fn initial_density(spec: &DomainSpec) -> DensityField {
    let hz = spec.h_z();
    DensityField::from_raw(
        (0..spec.n_cells())
            .map(|c| ((0.0 - (spec.cell_z(c) - 0.5 * hz)) / hz).clamp(0.0, 1.0))
            .collect(),
    )
}

struct InnerRun {
    u: PotentialField,
    value: f64,
    iterations: usize,
    converged: bool,
}

fn inner_or_best(
    spec: &DomainSpec,
    law: &MagnetizationLaw,
    params: &PhysicalParams,
    rho: &DensityField,
    options: &InnerOptions,
    warm: Option<&PotentialField>,
) -> Result<InnerRun, Error> {
    let (u, iterations, converged) = match solve_inner(spec, law, params, rho, options, warm) {
        Ok((u, r)) => (u, r.iterations, true),
        Err(InnerError::NonConvergence { best, report }) => (best, report.iterations, false),
        Err(InnerError::Invalid(e)) => return Err(e),
    };
    let value = j_raw(spec, law, params, u.as_slice(), rho.as_slice());
    Ok(InnerRun { u, value, iterations, converged })
}

/// A density together with the averaged perimeter of the indicators it
/// mixes. For a single indicator the two perimeters agree.
#[derive(Clone)]
struct Mixture {
    rho: DensityField,
    perimeter: f64,
}

impl Mixture {
    fn blend(&self, vertex: &Mixture, t: f64) -> Mixture {
        Mixture { rho: self.rho.blend(&vertex.rho, t), perimeter: (1.0 - t) * self.perimeter + t * vertex.perimeter }
    }

    /// `min_u E[J(u, χ)]` over the mixture, from the inner solution at `rho`.
    fn value(&self, spec: &DomainSpec, params: &PhysicalParams, run: &InnerRun) -> f64 {
        run.value + params.tau * (total_variation_raw(spec, self.rho.as_slice()) - self.perimeter)
    }
}

/// Maximizes the mixture value along `[current, vertex]` for weights in
/// `[0, theta_max]` by golden-section search; the value is concave in the
/// weight. Returns the weight, the inner solution there and its value.
#[allow(clippy::too_many_arguments)]
fn line_search(
    spec: &DomainSpec,
    law: &MagnetizationLaw,
    params: &PhysicalParams,
    options: &InnerOptions,
    mixture: &Mixture,
    vertex: &Mixture,
    theta_max: f64,
    current: InnerRun,
) -> Result<(f64, InnerRun, f64), Error> {
    let eval = |t: f64, warm: &PotentialField| -> Result<(InnerRun, f64), Error> {
        let m = mixture.blend(vertex, t);
        let run = inner_or_best(spec, law, params, &m.rho, options, Some(warm))?;
        let v = m.value(spec, params, &run);
        Ok((run, v))
    };
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, theta_max);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = eval(x1, &current.u)?;
    let mut f2 = eval(x2, &f1.0.u)?;
    for _ in 2..LINE_SEARCH_STEPS {
        if f1.1 >= f2.1 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = eval(x1, &f2.0.u)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = eval(x2, &f1.0.u)?;
        }
    }
    let end = eval(theta_max, &f2.0.u)?;
    let start_value = mixture.value(spec, params, &current);
    let mut best = (0.0, current, start_value);
    for (t, (run, v)) in [(x1, f1), (x2, f2), (theta_max, end)] {
        if v > best.2 {
            best = (t, run, v);
        }
    }
    Ok(best)
}

/// Candidates per side in the swap search of [`polish_lower`].
const POLISH_SHORTLIST: usize = 32;
/// Exact evaluations per round before the search gives up.
const POLISH_TRIES: usize = 12;
/// Exact evaluations per call.
const POLISH_BUDGET: usize = 400;

/// Improves a max-min lower bound by single swaps. Since
/// `min_u J(u, χ') ≤ J(u_χ, χ')`, the outer change at `g(u_χ)` bounds the
/// gain of a swap from above; only swaps with a positive bound are tried,
/// best first, each with an exact inner solve.
fn polish_lower(
    spec: &DomainSpec,
    law: &MagnetizationLaw,
    params: &PhysicalParams,
    options: &InnerOptions,
    chi: &DensityField,
    start: InnerRun,
) -> Result<(DensityField, InnerRun), Error> {
    let n = chi.len();
    let mut x = chi.as_slice().to_vec();
    let mut best = start;
    let mut stencil = Vec::with_capacity(4);
    let mut evals = 0;
    let by_gain = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    'rounds: while evals < POLISH_BUDGET {
        let g = gain_raw(spec, law, params, best.u.as_slice());
        let mut ones = Vec::new();
        let mut zeros = Vec::new();
        for c in 0..n {
            let d = flip_delta(spec, &g, params.tau, &mut x, &[c], &mut stencil);
            if x[c] == 1.0 {
                ones.push((d, c));
            } else {
                zeros.push((d, c));
            }
        }
        ones.sort_by(by_gain);
        zeros.sort_by(by_gain);
        ones.truncate(POLISH_SHORTLIST);
        zeros.truncate(POLISH_SHORTLIST);
        let floor = 1e-14 * (1.0 + best.value.abs());
        let mut pairs = Vec::new();
        for &(_, i) in &ones {
            for &(_, j) in &zeros {
                let d = flip_delta(spec, &g, params.tau, &mut x, &[i, j], &mut stencil);
                if d > floor {
                    pairs.push((d, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for &(_, i, j) in pairs.iter().take(POLISH_TRIES) {
            if evals == POLISH_BUDGET {
                break 'rounds;
            }
            x[i] = 0.0;
            x[j] = 1.0;
            let candidate = DensityField::from_raw(x.clone());
            let run = inner_or_best(spec, law, params, &candidate, options, Some(&best.u))?;
            evals += 1;
            if run.value > best.value + floor {
                best = run;
                continue 'rounds;
            }
            x[i] = 1.0;
            x[j] = 0.0;
        }
        break;
    }
    Ok((DensityField::from_raw(x), best))
}

/// Inner solutions at recently seen indicators.
struct InnerCache {
    entries: Vec<(DensityField, InnerRun)>,
}

impl InnerCache {
    const CAPACITY: usize = 4;

    fn solve(
        &mut self,
        spec: &DomainSpec,
        law: &MagnetizationLaw,
        params: &PhysicalParams,
        options: &InnerOptions,
        chi: &DensityField,
        warm: &PotentialField,
    ) -> Result<(f64, PotentialField, bool), Error> {
        if let Some((_, run)) = self.entries.iter().find(|(c, _)| c == chi) {
            return Ok((run.value, run.u.clone(), run.converged));
        }
        let run = inner_or_best(spec, law, params, chi, options, Some(warm))?;
        let out = (run.value, run.u.clone(), run.converged);
        if self.entries.len() == Self::CAPACITY {
            self.entries.remove(0);
        }
        self.entries.push((chi.clone(), run));
        Ok(out)
    }
}

/// Runs the damped alternating iteration from the flat layer.
pub fn run_saddle(
    spec: &DomainSpec,
    law: &MagnetizationLaw,
    params: &PhysicalParams,
    options: &SaddleOptions,
) -> Result<SaddleState, SaddleError> {
    let start = Instant::now();
    if !(options.theta > 0.0 && options.theta <= 1.0) {
        return Err(Error::InvalidParameter(format!("theta = {} must be in (0, 1]", options.theta)).into());
    }
    if !(options.tol_gap > 0.0) || options.max_sweeps == 0 {
        return Err(Error::InvalidParameter("saddle tolerance and sweep cap must be positive".into()).into());
    }
    let volume = spec.omega_measure();
    let rho0 = initial_density(spec);
    let mut mixture = Mixture { perimeter: total_variation_raw(spec, rho0.as_slice()), rho: rho0 };
    let mut current = inner_or_best(spec, law, params, &mixture.rho, &options.inner, None)?;
    let mut mixed_value = mixture.value(spec, params, &current);
    let mut history: Vec<SweepRecord> = Vec::new();
    let mut cache = InnerCache { entries: Vec::new() };
    let mut warm: Option<OuterWarmStart> = None;
    let mut all_converged = true;

    // (lower, chi, u_of_chi, sweep) and (upper, certified, u, rho, chi_of_u, sweep).
    let mut best_lower: Option<(f64, DensityField, PotentialField, usize)> = None;
    let mut best_upper: Option<(f64, f64, PotentialField, DensityField, DensityField, usize)> = None;
    let mut converged = false;

    for sweep in 0..options.max_sweeps {
        let u = &current.u;

        // Min-max side: the outer maximum at u_k.
        let g = gain_raw(spec, law, params, u.as_slice());
        let base = air_energy_raw(spec, params, u.as_slice());
        let (solution, outer_ok, next_warm) =
            match solve_outer_warm(spec, &g, params.tau, volume, &options.outer, warm.take()) {
                Ok((s, w)) => (s, true, Some(w)),
                Err((e, w)) => match e.into_solution() {
                    Some(s) => (s, false, w),
                    None => unreachable!("outer inputs were validated"),
                },
            };
        warm = next_warm;
        let chi = binarize(spec, &mixture.rho, volume)?;
        let own = outer_objective(spec, &g, params.tau, chi.as_slice());
        let found = match options.outer.mode {
            OuterMode::Binary => solution.report.binary_value.unwrap_or(f64::NEG_INFINITY),
            OuterMode::Relaxed => solution.report.relaxed_value,
        };
        // χ_k is itself feasible, which keeps ℓ_k ≤ m_k when the binary search
        // settles below the true maximum.
        let (upper, response) = if own > found { (base + own, chi.clone()) } else { (base + found, solution.density.clone()) };
        let certified_upper = base + solution.report.upper_bound;

        // Max-min side: the inner minimum at χ_k, and at the best response
        // when that is binary and different.
        let (mut lower, mut lower_chi, mut lower_u, mut inner_ok) = {
            let (v, uc, ok) = cache.solve(spec, law, params, &options.inner, &chi, u)?;
            (v, chi.clone(), uc, ok)
        };
        if response.is_binary() && response != chi {
            let (v, uc, ok) = cache.solve(spec, law, params, &options.inner, &response, u)?;
            inner_ok &= ok;
            if v > lower {
                (lower, lower_chi, lower_u) = (v, response.clone(), uc);
            }
        }
        let sweep_ok = current.converged && inner_ok && outer_ok;
        all_converged &= sweep_ok;

        if best_lower.as_ref().map_or(true, |b| lower > b.0) {
            best_lower = Some((lower, lower_chi, lower_u, sweep));
        }
        if best_upper.as_ref().map_or(true, |b| upper < b.0) {
            best_upper = Some((upper, certified_upper, u.clone(), mixture.rho.clone(), response.clone(), sweep));
        }
        let hi = best_upper.as_ref().unwrap().0;
        let tolerance = options.tol_gap * (1.0 + hi.abs());
        let mut gap = hi - best_lower.as_ref().unwrap().0;
        // Once the mixed problem is resolved well below the current gap, what
        // remains is the distance from the best mixture to a single indicator.
        let mut stalled = false;
        if gap > tolerance && upper - mixed_value <= 0.1 * gap {
            let (value, chi_best, u_best, _) = best_lower.clone().unwrap();
            let start = InnerRun { u: u_best, value, iterations: 0, converged: true };
            let (polished, run) = polish_lower(spec, law, params, &options.inner, &chi_best, start)?;
            if run.value > value {
                all_converged &= run.converged;
                best_lower = Some((run.value, polished, run.u, sweep));
                gap = hi - best_lower.as_ref().unwrap().0;
            } else {
                stalled = true;
            }
        }
        converged = gap <= tolerance;

        let mut record = SweepRecord {
            sweep,
            lower,
            upper,
            mixed_lower: mixed_value,
            certified_upper,
            gap,
            u_norm: potential_norm(spec, u)?,
            volume: crate::grid::volume(spec, &mixture.rho)?,
            theta: 0.0,
            inner_iterations: current.iterations,
            outer_iterations: solution.report.iterations,
            subsolves_converged: sweep_ok,
        };
        if converged || stalled || sweep + 1 == options.max_sweeps {
            history.push(record);
            break;
        }

        let vertex = Mixture { perimeter: total_variation_raw(spec, response.as_slice()), rho: response };
        let (theta, next, value) =
            line_search(spec, law, params, &options.inner, &mixture, &vertex, options.theta, current)?;
        record.theta = theta;
        history.push(record);
        if theta > 0.0 {
            mixture = mixture.blend(&vertex, theta);
        }
        mixed_value = value;
        current = next;
    }

    let (lower, chi, u_of_chi, lower_sweep) = best_lower.expect("at least one sweep ran");
    let (upper, certified_upper, u, rho, chi_of_u, upper_sweep) = best_upper.expect("at least one sweep ran");
    let tail = &history[history.len().saturating_sub(MONOTONE_WINDOW)..];
    let state = SaddleState {
        u,
        rho,
        chi,
        u_of_chi,
        chi_of_u,
        lower,
        upper,
        certified_upper,
        gap: upper - lower,
        upper_sweep,
        lower_sweep,
        converged,
        gap_monotone: tail.windows(2).all(|w| w[1].sweep_gap() <= w[0].sweep_gap()),
        subsolves_converged: all_converged,
        history,
        wallclock: start.elapsed().as_secs_f64(),
    };
    if state.converged {
        Ok(state)
    } else {
        Err(SaddleError::NonConvergence(Box::new(state)))
    }
}
