use super::{Tape, Tensor, TensorError, Var};

/// Relative error used by the gradient checks.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function of several tensors
/// with central differences, returning the maximum relative error over all
/// elements of all points.
pub fn finite_difference_check_many<F>(f: F, points: &[Tensor<f64>], epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |pts: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out)
            .item()
            .ok_or_else(|| TensorError::NotScalar(tape.shape(out).to_vec()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work = points.to_vec();
    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(points[k].shape()));
        for i in 0..points[k].len() {
            let orig = points[k].data()[i];
            work[k].data_mut()[i] = orig + epsilon;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - epsilon;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Single-input form of [`finite_difference_check_many`].
pub fn finite_difference_check<F>(f: F, point: &Tensor<f64>, epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
{
    finite_difference_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let p = Tensor::from_f64(vec![3], &[1.0, 2.0, 3.0]).unwrap();
        let err = finite_difference_check(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                let m = tape.mean(sq, None)?;
                tape.scale(m, 3.0)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function() {
        let p = Tensor::from_f64(vec![2], &[1.0, -4.0]).unwrap();
        let err = finite_difference_check(|tape, _| Ok(tape.constant(Tensor::scalar(7.0))), &p, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }
}
