//! Central finite-difference gradient verification.

use std::fmt;

pub const FD_STEP: f64 = 1e-5;

/// Result of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub label: String,
    /// Largest element error, relative to `max(|analytic|, |numeric|, 1e-3 * scale)`
    /// where `scale` is the largest numeric gradient magnitude in the checked set.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max rel err {:.3e} at {} over {} entries (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.label,
            self.max_rel_error,
            self.worst_index,
            self.checked,
            self.tolerance
        )
    }
}

/// Compares `analytic` with central differences of `f` around `x`.
///
/// `probe` restricts the check to a subset of indices; `None` checks all.
/// `f` receives the perturbed point and must be a pure function of it.
pub fn check_gradient(
    label: impl Into<String>,
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    probe: Option<&[usize]>,
    tolerance: f64,
) -> GradReport {
    assert_eq!(x.len(), analytic.len(), "gradient length must match input");
    let all: Vec<usize>;
    let indices = match probe {
        Some(p) => p,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut point = x.to_vec();
    let numeric: Vec<f64> = indices
        .iter()
        .map(|&i| {
            let orig = point[i];
            point[i] = orig + FD_STEP;
            let up = f(&point);
            point[i] = orig - FD_STEP;
            let down = f(&point);
            point[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect();
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let mut max_rel_error = 0.0;
    let mut worst_index = indices.first().copied().unwrap_or(0);
    for (&i, &num) in indices.iter().zip(&numeric) {
        let a = analytic[i];
        let denom = a.abs().max(num.abs()).max(floor);
        let err = (a - num).abs() / denom;
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
    }
    GradReport {
        label: label.into(),
        max_rel_error,
        worst_index,
        checked: indices.len(),
        tolerance,
    }
}
