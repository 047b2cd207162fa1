use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Max relative error between backprop and central differences for a scalar `f(x)`.
///
/// Relative error per coordinate is `|a - n| / max(1e-8, |a| + |n|)`.
/// Fails with [`Error::NearKink`] if the base evaluation passes within `10·h`
/// of a max/min switch point.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_many<F>(f: F, xs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut worst = 0.0f64;
    for (a, n) in gradients(f, xs, h)? {
        for (&a, &n) in a.data().iter().zip(n.data()) {
            worst = worst.max((a - n).abs() / (a.abs() + n.abs()).max(1e-8));
        }
    }
    Ok(worst)
}

/// Per-input relative error `‖a - n‖₂ / max(1e-8, ‖a‖₂ + ‖n‖₂)` between the
/// backprop gradient `a` and the central-difference gradient `n` of each input.
///
/// Unlike the coordinatewise [`grad_check_many`], coordinates whose gradient
/// sits at the finite-difference round-off level cannot dominate the result.
pub fn grad_check_per_input<F>(f: F, xs: &[Tensor<f64>], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    Ok(gradients(f, xs, h)?
        .into_iter()
        .map(|(a, n)| {
            let diff = norm(&mut a.data().iter().zip(n.data()).map(|(x, y)| x - y));
            let scale = norm(&mut a.data().iter().copied()) + norm(&mut n.data().iter().copied());
            diff / scale.max(1e-8)
        })
        .collect())
}

/// Backprop and central-difference gradients for each input.
fn gradients<F>(f: F, xs: &[Tensor<f64>], h: f64) -> Result<Vec<(Tensor<f64>, Tensor<f64>)>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = xs
        .iter()
        .map(|x| tape.param(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let required = 10.0 * h;
    if tape.kink_margin() < required {
        return Err(Error::NearKink {
            margin: tape.kink_margin(),
            required,
        });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get(&tape, v)).collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        t.set_check_finite(false);
        let vs = inputs
            .iter()
            .map(|x| t.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).item())
    };

    let mut inputs = xs.to_vec();
    let mut out = Vec::with_capacity(xs.len());
    for (which, a) in analytic.into_iter().enumerate() {
        let mut numeric = a.clone();
        for i in 0..inputs[which].numel() {
            let orig = inputs[which].data()[i];
            inputs[which].data_mut()[i] = orig + h;
            let plus = eval(&inputs)?;
            inputs[which].data_mut()[i] = orig - h;
            let minus = eval(&inputs)?;
            inputs[which].data_mut()[i] = orig;
            let n = (plus - minus) / (2.0 * h);
            if !n.is_finite() || !a.data()[i].is_finite() {
                return Err(Error::GradCheckNonFinite {
                    input: which,
                    coordinate: i,
                });
            }
            numeric.data_mut()[i] = n;
        }
        out.push((a, numeric));
    }
    Ok(out)
}
