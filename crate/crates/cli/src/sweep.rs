//! Robustness sweep over the bath parameters and its fidelity contour.

use catchain::io::SweepPoint;
use catchain::open_system::{BathSpec, OpenSystem};
use catchain::propagate::ControlSet;
use rayon::prelude::*;

use crate::experiment::Experiment;
use crate::Result;

/// Final open-system fidelity on every `(lambda, gamma)` pair, sorted by
/// `(lambda, gamma)`. The `lambda = 0` row reuses the closed-system value.
/// Failed points are reported as NaN with a warning.
pub fn sweep_fidelities(
    exp: &Experiment,
    controls: &ControlSet<f64>,
    lambdas: &[f64],
    gammas: &[f64],
    jobs: usize,
) -> Result<Vec<SweepPoint<f64>>> {
    let closed = exp.closed_run(controls)?.final_fidelity();
    let system = exp.open_system()?;
    let tasks: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| gammas.iter().map(move |&g| (l, g))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| crate::CliError::Input(format!("cannot start worker pool: {e}")))?;
    let mut points: Vec<SweepPoint<f64>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(lambda, gamma)| SweepPoint { lambda, gamma, final_fidelity: point(exp, &system, controls, lambda, gamma, closed) })
            .collect()
    });
    points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.gamma.total_cmp(&b.gamma)));
    Ok(points)
}

fn point(exp: &Experiment, system: &OpenSystem<f64>, controls: &ControlSet<f64>, lambda: f64, gamma: f64, closed: f64) -> f64 {
    if lambda == 0.0 {
        return closed;
    }
    let run = BathSpec::new(lambda, gamma)
        .map_err(crate::CliError::from)
        .and_then(|bath| exp.open_run(system, controls, bath, &[]));
    match run {
        Ok(r) => {
            log::info!("sweep point lambda = {lambda}, gamma = {gamma}: F = {:.6}", r.final_fidelity());
            r.final_fidelity()
        }
        Err(e) => {
            log::warn!("sweep point lambda = {lambda}, gamma = {gamma} failed: {e}");
            f64::NAN
        }
    }
}

/// Level crossing of one `gamma` column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourPoint {
    pub gamma: f64,
    /// First crossing in increasing `lambda`, linearly interpolated; NaN when
    /// the column never crosses the level.
    pub lambda: f64,
    pub crossings: usize,
}

/// Locates `F = level` along `lambda` in each `gamma` column of sorted
/// sweep points. A column crossing more than once makes the contour
/// multi-valued.
pub fn fidelity_contour(points: &[SweepPoint<f64>], level: f64) -> Vec<ContourPoint> {
    let mut gammas: Vec<f64> = points.iter().map(|p| p.gamma).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    gammas
        .into_iter()
        .map(|gamma| {
            let mut column: Vec<&SweepPoint<f64>> = points.iter().filter(|p| p.gamma == gamma).collect();
            column.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
            let mut lambda = f64::NAN;
            let mut crossings = 0;
            for w in column.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (da, db) = (a.final_fidelity - level, b.final_fidelity - level);
                if (da >= 0.0 && db < 0.0) || (da < 0.0 && db >= 0.0) {
                    crossings += 1;
                    if crossings == 1 {
                        lambda = a.lambda + (level - a.final_fidelity) * (b.lambda - a.lambda) / (b.final_fidelity - a.final_fidelity);
                    }
                }
            }
            ContourPoint { gamma, lambda, crossings }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(f: impl Fn(f64, f64) -> f64) -> Vec<SweepPoint<f64>> {
        let mut v = Vec::new();
        for &lambda in &[0.0, 0.1, 0.2, 0.3] {
            for &gamma in &[1.0, 2.0] {
                v.push(SweepPoint { lambda, gamma, final_fidelity: f(lambda, gamma) });
            }
        }
        v
    }

    #[test]
    fn contour_interpolates_linearly() {
        let pts = grid(|l, g| 1.0 - l * g);
        let c = fidelity_contour(&pts, 0.9);
        assert_eq!(c.len(), 2);
        assert!((c[0].lambda - 0.1).abs() < 1e-12);
        assert!((c[1].lambda - 0.05).abs() < 1e-12);
        assert!(c.iter().all(|p| p.crossings == 1));
    }

    #[test]
    fn contour_reports_missing_and_repeated_crossings() {
        let pts = grid(|l, g| if g < 1.5 { 1.0 - 0.01 * l } else if (0.05..0.25).contains(&l) { 0.8 } else { 0.95 });
        let c = fidelity_contour(&pts, 0.9);
        assert!(c[0].lambda.is_nan() && c[0].crossings == 0);
        assert_eq!(c[1].crossings, 2);
    }
}
