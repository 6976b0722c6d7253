/// A scalar loss over an ordered list of parameter slices.
pub trait Objective {
    fn param_shapes(&self) -> Vec<usize>;
    fn param_mut(&mut self, slice: usize, index: usize) -> &mut f64;
    fn loss(&self) -> f64;
    /// Analytic gradient, one buffer per parameter slice.
    fn gradient(&self) -> Vec<Vec<f64>>;

    /// `(L(θ + eps) - L(θ - eps)) / 2 eps` along one coordinate. Objectives
    /// may override this with a more precise evaluation of the loss.
    fn central_difference(&mut self, slice: usize, index: usize, eps: f64) -> f64 {
        let orig = *self.param_mut(slice, index);
        *self.param_mut(slice, index) = orig + eps;
        let up = self.loss();
        *self.param_mut(slice, index) = orig - eps;
        let down = self.loss();
        *self.param_mut(slice, index) = orig;
        (up - down) / (2.0 * eps)
    }
}

/// Max relative error between `analytic` and central finite differences.
///
/// Per component: `|a - n| / max(|a|, |n|, 1e-8)`. A model without
/// parameters scores 0.
pub fn compare_gradient<O: Objective + ?Sized>(
    objective: &mut O,
    analytic: &[Vec<f64>],
    eps: f64,
) -> f64 {
    let shapes = objective.param_shapes();
    assert_eq!(shapes.len(), analytic.len(), "gradient slice count");
    let mut worst = 0.0f64;
    for (k, &len) in shapes.iter().enumerate() {
        assert_eq!(analytic[k].len(), len, "gradient slice {k} length");
        for (i, &a) in analytic[k].iter().enumerate() {
            let numeric = objective.central_difference(k, i, eps);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// [`compare_gradient`] against the objective's own analytic gradient.
pub fn grad_check<O: Objective + ?Sized>(objective: &mut O, eps: f64) -> f64 {
    let analytic = objective.gradient();
    compare_gradient(objective, &analytic, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `sum_i c_i x_i^2`
    struct Quadratic {
        x: Vec<f64>,
        c: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn param_shapes(&self) -> Vec<usize> {
            vec![self.x.len()]
        }
        fn param_mut(&mut self, _slice: usize, index: usize) -> &mut f64 {
            &mut self.x[index]
        }
        fn loss(&self) -> f64 {
            self.x.iter().zip(&self.c).map(|(x, c)| c * x * x).sum()
        }
        fn gradient(&self) -> Vec<Vec<f64>> {
            vec![self
                .x
                .iter()
                .zip(&self.c)
                .map(|(x, c)| 2.0 * c * x)
                .collect()]
        }
    }

    #[test]
    fn correct_gradient_passes() {
        let mut q = Quadratic {
            x: vec![0.5, -1.5, 2.0],
            c: vec![1.0, 3.0, 0.25],
        };
        assert!(grad_check(&mut q, 1e-5) < 1e-8);
    }

    #[test]
    fn corrupted_component_is_caught() {
        let mut q = Quadratic {
            x: vec![0.5, -1.5, 2.0],
            c: vec![1.0, 3.0, 0.25],
        };
        let mut g = q.gradient();
        g[0][1] *= 2.0;
        assert!(compare_gradient(&mut q, &g, 1e-5) > 0.1);
    }

    #[test]
    fn empty_model_scores_zero() {
        let mut q = Quadratic {
            x: vec![],
            c: vec![],
        };
        assert_eq!(grad_check(&mut q, 1e-5), 0.0);
    }
}
