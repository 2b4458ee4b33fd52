//! Central-difference gradient oracle.

use super::{Tape, Tensor, TensorError, Var};

/// Central-difference estimate of ∂f/∂x for every coordinate of `x`.
pub fn finite_difference_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64) -> Tensor {
    let mut grad = Vec::with_capacity(x.numel());
    let mut probe = x.data().to_vec();
    for i in 0..x.numel() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&Tensor::from_shape(x.shape().clone(), probe.clone()).expect("same shape"));
        probe[i] = orig - step;
        let minus = f(&Tensor::from_shape(x.shape().clone(), probe.clone()).expect("same shape"));
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Tensor::from_shape(x.shape().clone(), grad).expect("same shape")
}

/// Norm-wise relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Relative error per input, in input order.
    pub errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `build` records the function on a fresh tape given one leaf per input.
pub fn check_gradients<F, E>(build: F, inputs: &[Tensor], step: f64) -> std::result::Result<GradCheck, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<TensorError> + std::fmt::Debug,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &leaves)?;
    let grads = tape.backward(root)?;

    let eval = |values: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let ls: Vec<Var> = values.iter().map(|v| t.constant(v.clone())).collect();
        let r = build(&mut t, &ls).expect("function evaluable near the check point");
        t.value(r).data()[0]
    };

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, leaf) in leaves.iter().enumerate() {
        let numeric = finite_difference_gradient(
            |x| {
                let mut probe = inputs.to_vec();
                probe[i] = x.clone();
                eval(&probe)
            },
            &inputs[i],
            step,
        );
        errors.push(relative_error(&grads.get_or_zeros(*leaf), &numeric));
    }
    Ok(GradCheck { errors })
}
