//! Central-difference validation of tape gradients.

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorId};

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::Parameter(format!(
            "gradient_check epsilon {epsilon:e} outside [1e-7, 1e-4]"
        )));
    }
    Ok(())
}

fn scalar_output(tape: &Tape, out: TensorId) -> Result<f64> {
    let t = tape.value(out);
    if t.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient_check target must be scalar, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

fn rel_err(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / central.abs().max(1.0)
}

/// Max relative error between tape gradients and central differences,
/// taken over every element of every input. `f` must produce a scalar.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    check_epsilon(epsilon)?;

    let run = |tensors: &[Tensor]| -> Result<(Tape, Vec<TensorId>, TensorId)> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = tensors
            .iter()
            .map(|t| tape.input(t.clone().with_grad()))
            .collect();
        let out = f(&mut tape, &ids)?;
        Ok((tape, ids, out))
    };

    // analytic gradients
    let (mut tape, ids, out) = run(inputs)?;
    scalar_output(&tape, out)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let (tape, _, out) = run(tensors)?;
        scalar_output(&tape, out)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + epsilon;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - epsilon;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let central = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(rel_err(analytic[i][e], central));
        }
    }
    Ok(worst)
}

/// Like [`gradient_check`], but also perturbs the listed store parameters,
/// validating d(out)/d(param) for composite blocks that bind their weights
/// through a [`ParamStore`].
pub fn gradient_check_params<F>(
    store: &mut ParamStore,
    param_ids: &[ParamId],
    inputs: &[Tensor],
    f: F,
    epsilon: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore, &[TensorId]) -> Result<TensorId>,
{
    check_epsilon(epsilon)?;

    let run = |store: &ParamStore, tensors: &[Tensor]| -> Result<(Tape, Vec<TensorId>, TensorId)> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = tensors
            .iter()
            .map(|t| tape.input(t.clone().with_grad()))
            .collect();
        let out = f(&mut tape, store, &ids)?;
        Ok((tape, ids, out))
    };

    let (mut tape, ids, out) = run(store, inputs)?;
    scalar_output(&tape, out)?;
    tape.backward(out)?;
    let analytic_inputs: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let analytic_params: Vec<Vec<f64>> = param_ids
        .iter()
        .map(|&pid| {
            let numel = store.get(pid).numel();
            tape.param_node(pid)
                .and_then(|tid| tape.grad(tid).map(|g| g.to_vec()))
                .unwrap_or_else(|| vec![0.0; numel])
        })
        .collect();

    let eval = |store: &ParamStore, tensors: &[Tensor]| -> Result<f64> {
        let (tape, _, out) = run(store, tensors)?;
        scalar_output(&tape, out)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + epsilon;
            let plus = eval(store, &work)?;
            work[i].data_mut()[e] = orig - epsilon;
            let minus = eval(store, &work)?;
            work[i].data_mut()[e] = orig;
            let central = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(rel_err(analytic_inputs[i][e], central));
        }
    }
    for (pi, &pid) in param_ids.iter().enumerate() {
        for e in 0..store.get(pid).numel() {
            let orig = store.get(pid).data()[e];
            store.get_mut(pid).data_mut()[e] = orig + epsilon;
            let plus = eval(store, &work)?;
            store.get_mut(pid).data_mut()[e] = orig - epsilon;
            let minus = eval(store, &work)?;
            store.get_mut(pid).data_mut()[e] = orig;
            let central = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(rel_err(analytic_params[pi][e], central));
        }
    }
    Ok(worst)
}
