//! Central finite differences for checking tape gradients.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Agreement summary between analytic and numeric gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub failures: usize,
    /// Coordinates skipped because both magnitudes are below the floor.
    pub negligible: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn merge(&mut self, other: &GradReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.negligible += other.negligible;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            return 1.0;
        }
        1.0 - self.failures as f64 / self.checked as f64
    }
}

/// Relative error `|a − n| / max(|a|, |n|)` per coordinate; coordinates
/// where both magnitudes fall below `floor` count as negligible.
pub fn compare(analytic: &[f64], numeric: &[f64], rel_tol: f64, floor: f64) -> GradReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut report = GradReport::default();
    for (&a, &n) in analytic.iter().zip(numeric) {
        report.checked += 1;
        let scale = a.abs().max(n.abs());
        if scale < floor {
            report.negligible += 1;
            continue;
        }
        let rel = (a - n).abs() / scale;
        report.max_rel_error = report.max_rel_error.max(rel);
        if !(rel <= rel_tol) {
            report.failures += 1;
        }
    }
    report
}
