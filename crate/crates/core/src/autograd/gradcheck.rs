use super::{AutogradError, Graph, Tensor, Var};

/// Worst element of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|)`, with magnitudes below 1e-6 measured absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central-difference check of `build` (a scalar-valued graph of one input)
/// over every element of `input`.
pub fn grad_check<F>(build: F, input: &Tensor<f64>, step: f64) -> Result<GradCheckReport, AutogradError>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var, AutogradError>,
{
    let coords: Vec<usize> = (0..input.numel()).collect();
    grad_check_coords(build, input, step, &coords)
}

/// Like [`grad_check`] but only perturbs the listed coordinates.
pub fn grad_check_coords<F>(
    build: F,
    input: &Tensor<f64>,
    step: f64,
    coords: &[usize],
) -> Result<GradCheckReport, AutogradError>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var, AutogradError>,
{
    let mut g = Graph::new();
    let x = g.parameter(input.clone());
    let loss = build(&mut g, x)?;
    g.backward(loss)?;
    let analytic = g.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()]);

    let eval = |t: &Tensor<f64>| -> Result<f64, AutogradError> {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let loss = build(&mut g, x)?;
        Ok(g.value(loss).data()[0])
    };
    compare_gradient(eval, input, &analytic, step, coords)
}

/// Compares a supplied gradient against central differences of `eval`.
pub fn compare_gradient<E>(
    eval: E,
    input: &Tensor<f64>,
    analytic: &[f64],
    step: f64,
    coords: &[usize],
) -> Result<GradCheckReport, AutogradError>
where
    E: Fn(&Tensor<f64>) -> Result<f64, AutogradError>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = input.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || i == coords[0] {
            report = GradCheckReport {
                max_rel_error: err.max(report.max_rel_error),
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new(vec![5], vec![0.3, -1.2, 2.0, 0.0, 4.5]).unwrap();
        let r = grad_check(
            |g, x| {
                let y = g.scale(x, 3.0);
                g.sum_all(y)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let eval = |t: &Tensor<f64>| Ok(t.data().iter().map(|v| v * v).sum::<f64>());
        // true gradient is 2x; supply x
        let wrong: Vec<f64> = x.data().to_vec();
        let r = compare_gradient(eval, &x, &wrong, 1e-4, &[0, 1, 2]).unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
        let right: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
        let r = compare_gradient(eval, &x, &right, 1e-4, &[0, 1, 2]).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }
}
