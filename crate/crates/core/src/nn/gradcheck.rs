//! Central finite-difference gradient checks in double precision.

/// Worst disagreement between analytic and numeric partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates left out because both derivatives were below the floor.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `x`.
///
/// The step for coordinate `i` is `1e-5 * max(1, |x_i|)`. `coords` restricts
/// the check to a subset of coordinates; `None` checks all of them.
pub fn check_gradient(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
) -> GradCheckReport {
    check_gradient_above(f, x, analytic, coords, 0.0)
}

/// Like [`check_gradient`], but skips coordinates where both the analytic and
/// the numeric derivative have magnitude below `floor`.
///
/// Rounding in a loss of order one leaves about `1e-11` of noise in each
/// numeric derivative, which swamps the relative error of derivatives that
/// are themselves that small. A wrong analytic value is still caught as long
/// as either derivative is above the floor.
pub fn check_gradient_above(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    floor: f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut point = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    for &i in coords {
        let h = 1e-5 * x[i].abs().max(1.0);
        point[i] = x[i] + h;
        let up = f(&point);
        point[i] = x[i] - h;
        let down = f(&point);
        point[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        if analytic[i].abs() < floor && numeric.abs() < floor {
            report.skipped += 1;
            continue;
        }
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let c = [0.5, -3.0, 2.0, 7.25];
        let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let r = check_gradient(f, &[1.0, 2.0, -4.0, 0.1], &c, None);
        assert!(r.max_rel_error <= 1e-10, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let f = |x: &[f64]| x[0].powi(3) + x[1].sin();
        let x = [1.3f64, 0.4];
        let good = [3.0 * x[0] * x[0], x[1].cos()];
        assert!(check_gradient(f, &x, &good, None).passes(1e-6));
        let bad: Vec<f64> = good.iter().map(|g| g * 1.01).collect();
        assert!(check_gradient(f, &x, &bad, None).max_rel_error >= 1e-3);
    }

    #[test]
    fn floor_skips_only_tiny_pairs() {
        // d/dx0 = 1e-9, d/dx1 = 2
        let f = |x: &[f64]| 1e-9 * x[0] + x[1] * x[1];
        let r = check_gradient_above(f, &[0.3, 1.0], &[0.0, 2.0], None, 1e-6);
        assert_eq!((r.checked, r.skipped), (1, 1));
        assert!(r.passes(1e-8));
        // A missing derivative of real size is still reported.
        let r = check_gradient_above(f, &[0.3, 1.0], &[0.0, 0.0], None, 1e-6);
        assert_eq!(r.skipped, 1);
        assert!(r.max_rel_error > 0.99);
    }
}
