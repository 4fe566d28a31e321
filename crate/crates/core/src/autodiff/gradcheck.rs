use super::tape::{Tape, Var};
use super::tensor::{Dense, TensorError};

/// Analytic vs. central-difference gradients of a scalar tape function.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub max_rel_error: f64,
}

/// Relative error used by the check: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn run<F>(f: &F, inputs: &[Dense<f64>], dropout_seed: Option<u64>, track: bool) -> Result<(Tape<f64>, Vec<Var>, Var), TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = match dropout_seed {
        Some(seed) => Tape::training(seed),
        None => Tape::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|d| tape.leaf(d.clone(), track)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(TensorError::NonScalarLoss(tape.value(out).shape.clone()));
    }
    Ok((tape, vars, out))
}

fn check<F>(f: F, inputs: &[Dense<f64>], eps: f64, dropout_seed: Option<u64>) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let (mut tape, vars, out) = run(&f, inputs, dropout_seed, true)?;
    let analytic: Vec<Vec<f64>> = if tape.requires_grad(out) {
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, d)| grads.get(*v).map_or_else(|| vec![0.0; d.numel()], |g| g.to_vec()))
            .collect()
    } else {
        inputs.iter().map(|d| vec![0.0; d.numel()]).collect()
    };

    let eval = |probe: &[Dense<f64>]| -> Result<f64, TensorError> {
        let (tape, _, out) = run(&f, probe, dropout_seed, false)?;
        Ok(tape.value(out).data[0])
    };
    let mut probe = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut max_rel_error = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut col = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let x0 = input.data[i];
            probe[k].data[i] = x0 + eps;
            let up = eval(&probe)?;
            probe[k].data[i] = x0 - eps;
            let down = eval(&probe)?;
            probe[k].data[i] = x0;
            let n = (up - down) / (2.0 * eps);
            max_rel_error = max_rel_error.max(relative_error(analytic[k][i], n));
            col.push(n);
        }
        numeric.push(col);
    }
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_error,
    })
}

/// Compares tape gradients of `f` against central differences with step
/// `eps`, in 64-bit eval mode.
pub fn grad_check<F>(f: F, inputs: &[Dense<f64>], eps: f64) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    check(f, inputs, eps, None)
}

/// As [`grad_check`] but on training tapes that all share one dropout seed,
/// so every evaluation sees the same mask.
pub fn grad_check_training<F>(f: F, inputs: &[Dense<f64>], eps: f64, dropout_seed: u64) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    check(f, inputs, eps, Some(dropout_seed))
}
