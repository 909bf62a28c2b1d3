//! Inner problem `min_u J(u, ρ)` for a fixed density.
//!
//! For a linear law this is the symmetric positive definite transmission
//! problem `∫ (μρ + 1 − ρ) ∇u·∇v = ∫ μ_d ∂_z v`, solved matrix-free by
//! Jacobi-preconditioned conjugate gradients. Nonlinear laws use damped
//! Newton with an Armijo backtracking line search; each Newton system is
//! solved by the same PCG.

use std::time::Instant;

use thiserror::Error;

use crate::error::Error;
use crate::functional::PhysicalParams;
use crate::grid::{for_each_cell, gradient_from_base, scatter_gradient_transpose, DensityField, DomainSpec, PotentialField};
use crate::maglaw::MagnetizationLaw;

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    /// Stop once `‖∇_u J‖ ≤ tol·(1 + ‖b‖)` where `b` is the drive load vector.
    pub tol: f64,
    /// Conjugate-gradient iterations for a linear law, Newton steps otherwise.
    pub max_iter: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerReport {
    /// CG iterations (linear law) or Newton steps.
    pub iterations: usize,
    /// Total CG iterations, including those inside Newton steps.
    pub cg_iterations: usize,
    /// Final `‖∇_u J‖` over the free nodes.
    pub residual: f64,
    /// The threshold the residual was held to.
    pub threshold: f64,
    /// `J(u, ρ)` at the returned potential.
    pub objective: f64,
    pub wallclock: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InnerError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error("inner solve stopped after {} iterations with residual {} > {}", .report.iterations, .report.residual, .report.threshold)]
    NonConvergence { best: PotentialField, report: InnerReport },
}

/// Per-cell coefficient data shared by operator applications.
struct Operator<'a> {
    spec: &'a DomainSpec,
    free: Vec<bool>,
    /// Symmetric `dim × dim` tensor per cell, already scaled by the cell measure.
    tensors: Vec<[f64; 6]>,
    isotropic: bool,
}

/// Packed upper triangle: (0,0) (0,1) (0,2) (1,1) (1,2) (2,2).
#[inline]
fn tensor_apply(t: &[f64; 6], v: &[f64; 3]) -> [f64; 3] {
    [
        t[0] * v[0] + t[1] * v[1] + t[2] * v[2],
        t[1] * v[0] + t[3] * v[1] + t[4] * v[2],
        t[2] * v[0] + t[4] * v[1] + t[5] * v[2],
    ]
}

const DIAG: [usize; 3] = [0, 3, 5];

impl<'a> Operator<'a> {
    fn new(spec: &'a DomainSpec, tensors: Vec<[f64; 6]>, isotropic: bool) -> Self {
        Self { spec, free: spec.lateral_mask().iter().map(|m| !m).collect(), tensors, isotropic }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut g = [0.0; 3];
        for_each_cell(self.spec, |c, base| {
            gradient_from_base(self.spec, base, v, &mut g);
            let t = &self.tensors[c];
            let w = if self.isotropic { [t[0] * g[0], t[0] * g[1], t[0] * g[2]] } else { tensor_apply(t, &g) };
            scatter_gradient_transpose(self.spec, base, &w, out);
        });
        for (o, f) in out.iter_mut().zip(&self.free) {
            if !f {
                *o = 0.0;
            }
        }
    }

    /// Inverse diagonal; 1 on pinned nodes.
    fn jacobi(&self) -> Vec<f64> {
        let spec = self.spec;
        let dim = spec.dim();
        let corners_per_edge = (1usize << (dim - 1)) as f64;
        let inv: Vec<f64> = spec.spacing().iter().map(|h| 1.0 / (corners_per_edge * h)).collect();
        let mut diag = vec![0.0; spec.n_nodes()];
        for_each_cell(spec, |c, base| {
            let t = &self.tensors[c];
            for (b, off) in spec.corner_offsets().iter().enumerate() {
                // Column n of G_c is (±inv_a)_a; its quadratic form with T.
                let mut col = [0.0; 3];
                for a in 0..dim {
                    col[a] = if crate::grid::corner_bit(b, a) { inv[a] } else { -inv[a] };
                }
                let tc = tensor_apply(t, &col);
                diag[base + off] += (0..dim).map(|a| col[a] * tc[a]).sum::<f64>();
            }
        });
        diag.iter()
            .zip(&self.free)
            .map(|(d, f)| if *f && *d > 0.0 { 1.0 / d } else { 1.0 })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct CgOutcome {
    iterations: usize,
    residual: f64,
}

/// Solves `A x = rhs` from the initial `x`; `rhs` and `x` vanish on pinned nodes.
fn pcg(op: &Operator, rhs: &[f64], x: &mut [f64], threshold: f64, max_iter: usize) -> CgOutcome {
    let n = rhs.len();
    let minv = op.jacobi();
    let mut ax = vec![0.0; n];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm(&r);
    let mut it = 0;
    while res > threshold && it < max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        // Recompute the true residual now and then to stop drift.
        if it % 200 == 0 {
            op.apply(x, &mut ax);
            for i in 0..n {
                r[i] = rhs[i] - ax[i];
            }
        }
        res = norm(&r);
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    op.apply(x, &mut ax);
    let true_res = norm(&rhs.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>());
    CgOutcome { iterations: it, residual: true_res }
}

/// Solves `Σ_c m k_c G_cᵀ G_c s = load` on the free nodes (the load is
/// zeroed on the lateral wall). Returns the solution and the final residual.
pub(crate) fn solve_weighted_laplace(spec: &DomainSpec, k: &[f64], load: &[f64], threshold: f64) -> (Vec<f64>, f64) {
    let m = spec.cell_measure();
    let tensors = k.iter().map(|x| [x * m, 0.0, 0.0, 0.0, 0.0, 0.0]).collect();
    let op = Operator::new(spec, tensors, true);
    let rhs: Vec<f64> = load
        .iter()
        .enumerate()
        .map(|(n, v)| if spec.is_lateral_node(n) { 0.0 } else { *v })
        .collect();
    let mut x = vec![0.0; rhs.len()];
    let out = pcg(&op, &rhs, &mut x, threshold, 20 * rhs.len() + 100);
    (x, out.residual)
}

/// Load vector `Σ_c m μ_d G_cᵀ e_z`, zero on pinned nodes.
fn drive_load(spec: &DomainSpec, params: &PhysicalParams) -> Vec<f64> {
    let mut out = vec![0.0; spec.n_nodes()];
    let mut w = [0.0; 3];
    w[spec.dim() - 1] = params.mu_drive * spec.cell_measure();
    for_each_cell(spec, |_, base| scatter_gradient_transpose(spec, base, &w, &mut out));
    for (n, o) in out.iter_mut().enumerate() {
        if spec.is_lateral_node(n) {
            *o = 0.0;
        }
    }
    out
}

fn validate(spec: &DomainSpec, rho: &DensityField, options: &InnerOptions) -> Result<(), Error> {
    spec.check_len(spec.n_cells(), rho.len())?;
    if let Some((cell, &value)) = rho.as_slice().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::IllPosed { cell, value });
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("inner tolerance {} must be positive", options.tol)));
    }
    Ok(())
}

/// `(Σ m [ρM + ½(1−ρ)|∇u|² − μ_d ∂_z u], ∇_u of that)`: the `u`-dependent part
/// of `J` and its gradient, zero on pinned nodes.
fn smooth_part(
    spec: &DomainSpec,
    law: &MagnetizationLaw,
    params: &PhysicalParams,
    rho: &[f64],
    u: &[f64],
    grad: Option<&mut [f64]>,
) -> f64 {
    let m = spec.cell_measure();
    let zdir = spec.dim() - 1;
    let mut value = 0.0;
    let mut g = [0.0; 3];
    match grad {
        None => {
            for_each_cell(spec, |c, base| {
                gradient_from_base(spec, base, u, &mut g);
                let s2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                let r = rho[c];
                value += r * law.primitive(s2.sqrt()) + 0.5 * (1.0 - r) * s2 - params.mu_drive * g[zdir];
            });
        }
        Some(out) => {
            out.iter_mut().for_each(|o| *o = 0.0);
            for_each_cell(spec, |c, base| {
                gradient_from_base(spec, base, u, &mut g);
                let s2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                let s = s2.sqrt();
                let r = rho[c];
                value += r * law.primitive(s) + 0.5 * (1.0 - r) * s2 - params.mu_drive * g[zdir];
                // ∇_ξ [ρM(|ξ|) + ½(1−ρ)|ξ|²] = (ρμ(|ξ|) + 1 − ρ) ξ.
                let k = (r * law.mu(s) + 1.0 - r) * m;
                let mut w = [k * g[0], k * g[1], k * g[2]];
                w[zdir] -= params.mu_drive * m;
                scatter_gradient_transpose(spec, base, &w, out);
            });
            for (n, o) in out.iter_mut().enumerate() {
                if spec.is_lateral_node(n) {
                    *o = 0.0;
                }
            }
        }
    }
    value * m
}

/// `J(u, ρ)` and its gradient with respect to the nodal values of `u`.
/// The gradient vanishes on the lateral wall.
pub fn objective_and_gradient(
    spec: &DomainSpec,
    law: &MagnetizationLaw,
    params: &PhysicalParams,
    rho: &DensityField,
    u: &PotentialField,
) -> Result<(f64, Vec<f64>), Error> {
    spec.check_len(spec.n_cells(), rho.len())?;
    spec.check_len(spec.n_nodes(), u.len())?;
    let mut grad = vec![0.0; spec.n_nodes()];
    let smooth = smooth_part(spec, law, params, rho.as_slice(), u.as_slice(), Some(&mut grad));
    Ok((smooth - crate::functional::j2_raw(spec, params, rho.as_slice()), grad))
}

/// Minimizes `J(·, ρ)`, starting from `initial` or zero.
pub fn solve_inner(
    spec: &DomainSpec,
    law: &MagnetizationLaw,
    params: &PhysicalParams,
    rho: &DensityField,
    options: &InnerOptions,
    initial: Option<&PotentialField>,
) -> Result<(PotentialField, InnerReport), InnerError> {
    let start = Instant::now();
    validate(spec, rho, options)?;
    let mut u = match initial {
        Some(u0) => {
            spec.check_len(spec.n_nodes(), u0.len())?;
            u0.as_slice().to_vec()
        }
        None => vec![0.0; spec.n_nodes()],
    };
    let load = drive_load(spec, params);
    let threshold = options.tol * (1.0 + norm(&load));
    let j2 = crate::functional::j2_raw(spec, params, rho.as_slice());
    let r = rho.as_slice();

    let (iterations, cg_iterations, residual) = match *law {
        MagnetizationLaw::Linear { mu } => {
            let m = spec.cell_measure();
            let tensors = r.iter().map(|x| [(mu * x + 1.0 - x) * m, 0.0, 0.0, 0.0, 0.0, 0.0]).collect();
            let op = Operator::new(spec, tensors, true);
            let out = pcg(&op, &load, &mut u, threshold, options.max_iter);
            (out.iterations, out.iterations, out.residual)
        }
        MagnetizationLaw::Langevin { .. } => newton(spec, law, params, r, &mut u, threshold, options.max_iter),
    };

    let mut grad = vec![0.0; spec.n_nodes()];
    let objective = smooth_part(spec, law, params, r, &u, Some(&mut grad)) - j2;
    let report = InnerReport {
        iterations,
        cg_iterations,
        residual,
        threshold,
        objective,
        wallclock: start.elapsed().as_secs_f64(),
    };
    let field = PotentialField::from_raw(u);
    if residual <= threshold {
        Ok((field, report))
    } else {
        Err(InnerError::NonConvergence { best: field, report })
    }
}

/// Returns `(newton steps, cg iterations, final residual)`.
fn newton(
    spec: &DomainSpec,
    law: &MagnetizationLaw,
    params: &PhysicalParams,
    rho: &[f64],
    u: &mut Vec<f64>,
    threshold: f64,
    max_iter: usize,
) -> (usize, usize, f64) {
    let n = u.len();
    let m = spec.cell_measure();
    let dim = spec.dim();
    let cg_cap = 2 * n + 100;
    let mut grad = vec![0.0; n];
    let mut value = smooth_part(spec, law, params, rho, u, Some(&mut grad));
    let mut res = norm(&grad);
    let mut steps = 0;
    let mut cg_total = 0;
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    while res > threshold && steps < max_iter {
        let tensors = hessian_tensors(spec, law, rho, u, m, dim);
        let op = Operator::new(spec, tensors, false);
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut dir = vec![0.0; n];
        // Inexact Newton forcing term; tightens as the residual falls.
        let forcing = (0.5f64).min(res.sqrt()) * res;
        let out = pcg(&op, &rhs, &mut dir, forcing.max(0.1 * threshold), cg_cap);
        cg_total += out.iterations;
        let slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial[i] = u[i] + alpha * dir[i];
            }
            let tv = smooth_part(spec, law, params, rho, &trial, None);
            // Allow for roundoff in the objective once the decrease is at machine precision.
            let slack = 8.0 * f64::EPSILON * value.abs();
            if tv <= value + ARMIJO_C * alpha * slope + slack {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        let tv = smooth_part(spec, law, params, rho, &trial, Some(&mut trial_grad));
        let tres = norm(&trial_grad);
        if tv > value && tres >= res {
            // Roundoff-level step that improves nothing.
            break;
        }
        std::mem::swap(u, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = tv;
        res = tres;
        steps += 1;
    }
    (steps, cg_total, res)
}

/// `m·[ρ(M''(s) ĝĝᵀ + μ(s)(I − ĝĝᵀ)) + (1 − ρ)I]` per cell.
fn hessian_tensors(spec: &DomainSpec, law: &MagnetizationLaw, rho: &[f64], u: &[f64], m: f64, dim: usize) -> Vec<[f64; 6]> {
    let mut out = vec![[0.0; 6]; spec.n_cells()];
    let mut g = [0.0; 3];
    for_each_cell(spec, |c, base| {
        gradient_from_base(spec, base, u, &mut g);
        let s = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let r = rho[c];
        let mu = law.mu(s);
        let along = law.primitive_second_derivative(s);
        let mut t = [0.0; 6];
        let iso = (r * mu + 1.0 - r) * m;
        for a in 0..dim {
            t[DIAG[a]] = iso;
        }
        if s > 0.0 {
            let e = [g[0] / s, g[1] / s, g[2] / s];
            let extra = r * (along - mu) * m;
            let idx = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
            for a in 0..dim {
                for b in a..dim {
                    t[idx[a][b]] += extra * e[a] * e[b];
                }
            }
        }
        out[c] = t;
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::eval_j;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(mu_drive: f64) -> PhysicalParams {
        PhysicalParams::new(1.0, 0.1, mu_drive, 1.0).unwrap()
    }

    fn random_u(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> PotentialField {
        PotentialField::from_values(
            spec,
            (0..spec.n_nodes())
                .map(|n| if spec.is_lateral_node(n) { 0.0 } else { rng.gen_range(-1.0..1.0) })
                .collect(),
        )
        .unwrap()
    }

    fn tight() -> InnerOptions {
        InnerOptions { tol: 1e-12, max_iter: 10_000 }
    }

    #[test]
    fn zero_drive_gives_zero_potential() {
        let spec = DomainSpec::two_d(1.0, 6, 8).unwrap();
        let rho = DensityField::flat_layer(&spec);
        for law in [MagnetizationLaw::linear(2.0).unwrap(), MagnetizationLaw::langevin(1.0, 1.0).unwrap()] {
            let (u, _) = solve_inner(&spec, &law, &params(0.0), &rho, &tight(), None).unwrap();
            assert_eq!(u.max_abs(), 0.0);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = DomainSpec::two_d(1.0, 4, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = DensityField::from_values((0..spec.n_cells()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        for law in [MagnetizationLaw::linear(2.0).unwrap(), MagnetizationLaw::langevin(3.0, 2.0).unwrap()] {
            let u = random_u(&spec, &mut rng);
            let (j, grad) = objective_and_gradient(&spec, &law, &params(2.0), &rho, &u).unwrap();
            for _ in 0..10 {
                let v = random_u(&spec, &mut rng);
                let eps = 1e-6;
                let shift = |t: f64| {
                    PotentialField::from_values(
                        &spec,
                        u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a + t * b).collect(),
                    )
                    .unwrap()
                };
                let jp = eval_j(&spec, &law, &params(2.0), &shift(eps), &rho).unwrap();
                let jm = eval_j(&spec, &law, &params(2.0), &shift(-eps), &rho).unwrap();
                let fd = (jp - jm) / (2.0 * eps);
                let an = dot(&grad, v.as_slice());
                assert!((fd - an).abs() < 1e-6 * (1.0 + j.abs()), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn solution_is_stationary_and_unique() {
        let spec = DomainSpec::two_d(1.0, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = DensityField::flat_layer(&spec);
        for law in [MagnetizationLaw::linear(2.0).unwrap(), MagnetizationLaw::langevin(1.0, 2.0).unwrap()] {
            let opts = InnerOptions { tol: 1e-11, max_iter: 10_000 };
            let a = random_u(&spec, &mut rng);
            let b = random_u(&spec, &mut rng);
            let (u1, r1) = solve_inner(&spec, &law, &params(2.0), &rho, &opts, Some(&a)).unwrap();
            let (u2, _) = solve_inner(&spec, &law, &params(2.0), &rho, &opts, Some(&b)).unwrap();
            assert!(r1.residual <= r1.threshold);
            let diff = u1.as_slice().iter().zip(u2.as_slice()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(diff <= 1e-8, "{diff}");
            assert!(u1.as_slice().iter().enumerate().all(|(n, v)| !spec.is_lateral_node(n) || *v == 0.0));
        }
    }

    #[test]
    fn stronger_law_gives_higher_minimum() {
        // M(s) ≥ s²/2 pointwise, so the Langevin minimum dominates the μ = 1 one.
        let spec = DomainSpec::two_d(1.0, 4, 4).unwrap();
        let rho = DensityField::flat_layer(&spec);
        let p = params(2.0);
        let (_, lang) =
            solve_inner(&spec, &MagnetizationLaw::langevin(1.0, 1.0).unwrap(), &p, &rho, &tight(), None).unwrap();
        let (_, unit) = solve_inner(&spec, &MagnetizationLaw::Linear { mu: 1.0 }, &p, &rho, &tight(), None).unwrap();
        assert!(lang.objective >= unit.objective - 1e-12, "{} < {}", lang.objective, unit.objective);
    }

    #[test]
    fn reports_non_convergence_with_best_iterate() {
        let spec = DomainSpec::two_d(1.0, 16, 16).unwrap();
        let rho = DensityField::flat_layer(&spec);
        let opts = InnerOptions { tol: 1e-14, max_iter: 3 };
        match solve_inner(&spec, &MagnetizationLaw::linear(2.0).unwrap(), &params(2.0), &rho, &opts, None) {
            Err(InnerError::NonConvergence { best, report }) => {
                assert_eq!(report.iterations, 3);
                assert!(best.max_abs() > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_range_density() {
        let spec = DomainSpec::two_d(1.0, 3, 3).unwrap();
        let law = MagnetizationLaw::linear(2.0).unwrap();
        let bad = DensityField::from_raw_unchecked_for_tests(vec![1.5; spec.n_cells()]);
        assert!(matches!(
            solve_inner(&spec, &law, &params(1.0), &bad, &tight(), None),
            Err(InnerError::Invalid(Error::IllPosed { .. }))
        ));
    }

    #[test]
    fn norm_bound_at_optimum() {
        let spec = DomainSpec::two_d(1.0, 8, 16).unwrap();
        let p = params(2.0);
        for law in [MagnetizationLaw::linear(5.0).unwrap(), MagnetizationLaw::langevin(3.0, 2.0).unwrap()] {
            let (u, _) = solve_inner(&spec, &law, &p, &DensityField::flat_layer(&spec), &tight(), None).unwrap();
            let g = crate::grid::gradient(&spec, &u).unwrap();
            let n = (g.as_slice().iter().map(|v| v * v).sum::<f64>() * spec.cell_measure()).sqrt();
            assert!(n <= 2.0 * p.mu_drive * spec.domain_measure().sqrt());
        }
    }
}
