//! Two-objective min-norm problem: the smallest vector in the convex hull of
//! the multimodal and unimodal gradients of one encoder.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::numerics::{dot, l2_norm, RealVec};

/// Relative tolerance for declaring a min-norm point zero.
pub const EPS_STAT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoSolution {
    pub alpha_m: f64,
    pub alpha_u: f64,
    pub min_norm_vec: RealVec,
    pub min_norm: f64,
    pub is_stationary: bool,
}

impl ParetoSolution {
    fn build(alpha_m: f64, g_m: &RealVec, g_u: &RealVec, scale: f64) -> Result<Self> {
        let alpha_u = 1.0 - alpha_m;
        let min_norm_vec = RealVec::combine(alpha_m, g_m, alpha_u, g_u)?;
        let min_norm = l2_norm(&min_norm_vec)?;
        Ok(Self {
            alpha_m,
            alpha_u,
            min_norm_vec,
            min_norm,
            is_stationary: min_norm <= EPS_STAT * scale,
        })
    }
}

fn validate(g_m: &RealVec, g_u: &RealVec) -> Result<()> {
    check_len(g_m.len(), g_u.len())?;
    if g_m.is_empty() {
        return Err(Error::Empty);
    }
    Ok(())
}

/// Closed-form minimizer of `||a g_m + (1 - a) g_u||` over `a` in `[0, 1]`.
///
/// When one gradient lies "behind" the other (`cos >= |small| / |large|`),
/// the hull's min-norm point is the smaller vector itself. Otherwise the
/// interior weight is `(g_u - g_m)·g_u / ||g_m - g_u||^2`.
pub fn solve_closed_form(g_m: &RealVec, g_u: &RealVec) -> Result<ParetoSolution> {
    validate(g_m, g_u)?;
    let norm_m = l2_norm(g_m)?;
    let norm_u = l2_norm(g_u)?;
    let scale = norm_m.max(norm_u).max(1.0);

    if norm_m == 0.0 && norm_u == 0.0 {
        return ParetoSolution::build(0.5, g_m, g_u, scale);
    }
    if norm_m == 0.0 {
        return ParetoSolution::build(1.0, g_m, g_u, scale);
    }
    if norm_u == 0.0 {
        return ParetoSolution::build(0.0, g_m, g_u, scale);
    }

    let diff = g_m.sub(g_u)?;
    let diff_sq = dot(&diff, &diff)?;
    if diff_sq == 0.0 {
        // identical vectors: objective is constant in alpha
        return ParetoSolution::build(0.5, g_m, g_u, scale);
    }

    let cos_beta = (dot(g_m, g_u)? / (norm_m * norm_u)).clamp(-1.0, 1.0);
    if norm_m < norm_u && cos_beta >= norm_m / norm_u {
        return ParetoSolution::build(1.0, g_m, g_u, scale);
    }
    if norm_u < norm_m && cos_beta >= norm_u / norm_m {
        return ParetoSolution::build(0.0, g_m, g_u, scale);
    }
    if norm_u == norm_m && cos_beta >= 1.0 {
        return ParetoSolution::build(0.5, g_m, g_u, scale);
    }

    // (g_u - g_m)·g_u = -diff·g_u
    let alpha_m = (-dot(&diff, g_u)? / diff_sq).clamp(0.0, 1.0);
    ParetoSolution::build(alpha_m, g_m, g_u, scale)
}

/// Uniform-grid search over `alpha` in `[0, 1]`; the first grid minimum wins.
///
/// Evaluates the objective through the three inner products of the pair, so
/// each grid point costs O(1) after an O(n) setup. Test oracle only.
pub fn solve_brute_force(g_m: &RealVec, g_u: &RealVec, grid_points: usize) -> Result<ParetoSolution> {
    validate(g_m, g_u)?;
    if grid_points < 2 {
        return Err(Error::Precondition(format!(
            "grid_points must be at least 2, got {grid_points}"
        )));
    }
    let mm = dot(g_m, g_m)?;
    let uu = dot(g_u, g_u)?;
    let mu = dot(g_m, g_u)?;
    let objective = |a: f64| a * a * mm + 2.0 * a * (1.0 - a) * mu + (1.0 - a) * (1.0 - a) * uu;

    let last = (grid_points - 1) as f64;
    let (mut best_a, mut best_f) = (0.0, objective(0.0));
    for i in 1..grid_points {
        let a = i as f64 / last;
        let f = objective(a);
        if f < best_f {
            best_a = a;
            best_f = f;
        }
    }
    ParetoSolution::build(best_a, g_m, g_u, mm.sqrt().max(uu.sqrt()).max(1.0))
}

/// Grid search followed by `rounds` of re-gridding the bracket around the
/// incumbent, each round evaluating the norm of the combined vector
/// directly. Shrinks the grid-spacing error far below what a single grid
/// can reach when the gradients are large.
pub fn solve_brute_force_refined(
    g_m: &RealVec,
    g_u: &RealVec,
    grid_points: usize,
    rounds: usize,
) -> Result<ParetoSolution> {
    let coarse = solve_brute_force(g_m, g_u, grid_points)?;
    let eval = |a: f64| -> f64 {
        g_m.iter()
            .zip(g_u.iter())
            .map(|(m, u)| {
                let v = a * m + (1.0 - a) * u;
                v * v
            })
            .sum()
    };
    let mut best_a = coarse.alpha_m;
    let mut best_f = eval(best_a);
    let mut half_width = 1.0 / (grid_points - 1) as f64;
    const LOCAL_POINTS: usize = 201;
    for _ in 0..rounds {
        let lo = (best_a - half_width).max(0.0);
        let hi = (best_a + half_width).min(1.0);
        let step = (hi - lo) / (LOCAL_POINTS - 1) as f64;
        for i in 0..LOCAL_POINTS {
            let a = if i == LOCAL_POINTS - 1 { hi } else { lo + step * i as f64 };
            let f = eval(a);
            if f < best_f {
                best_a = a;
                best_f = f;
            }
        }
        half_width = step;
    }
    let scale = l2_norm(g_m)?.max(l2_norm(g_u)?).max(1.0);
    ParetoSolution::build(best_a, g_m, g_u, scale)
}

/// Checks that the closed-form weights favour the smaller-magnitude
/// multimodal gradient. Requires `||g_m|| < ||g_u||`.
pub fn weight_ordering_check(g_m: &RealVec, g_u: &RealVec) -> Result<bool> {
    validate(g_m, g_u)?;
    let norm_m = l2_norm(g_m)?;
    let norm_u = l2_norm(g_u)?;
    if !(norm_m < norm_u) {
        return Err(Error::Precondition(format!(
            "weight ordering needs ||g_m|| < ||g_u||, got {norm_m} and {norm_u}"
        )));
    }
    let sol = solve_closed_form(g_m, g_u)?;
    Ok(sol.alpha_m > sol.alpha_u)
}
