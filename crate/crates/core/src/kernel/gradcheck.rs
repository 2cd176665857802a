use super::{KernelError, Tape, Tensor2, Var};

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Denominator floor for [`relative_error`]. Central differences at
/// `eps = 1e-5` carry roundoff near `1e-11 * |f|`, so coordinates whose true
/// gradient is below this floor are effectively compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(RELATIVE_ERROR_FLOOR, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the tape gradient of a scalar function against central finite
/// differences, coordinate by coordinate, and returns the worst relative
/// error.
///
/// `f` receives a fresh tape and the leaf holding `x`; it must return a
/// `1 × 1` node.
pub fn finite_difference_check<F>(f: F, x: &Tensor2, eps: f64) -> Result<f64, KernelError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, KernelError>,
{
    let eval = |point: &Tensor2| -> Result<f64, KernelError> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone());
        let out = f(&mut tape, leaf)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    let grads = tape.backward(out);
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor2::zeros(x.rows(), x.cols()));

    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor2::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.5]]);
        let err = finite_difference_check(|t, v| Ok(t.sum(v)), &x, DEFAULT_FD_EPS).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sum_of_squares_at_ones() {
        let x = Tensor2::filled(1, 4, 1.0);
        let f = |t: &mut Tape, v: Var| {
            let sq = t.mul(v, v)?;
            Ok(t.sum(sq))
        };
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let out = f(&mut tape, leaf).unwrap();
        let g = tape.backward(out);
        assert_eq!(g.get(leaf).unwrap().data(), &[2.0; 4]);
        assert!(finite_difference_check(f, &x, DEFAULT_FD_EPS).unwrap() < 1e-9);
    }
}
