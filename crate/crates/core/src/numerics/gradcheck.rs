use super::{ParamId, ParameterStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error between an analytic and a numeric derivative. The floor
/// keeps entries whose true derivative is ~0 from dividing noise by noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare tape gradients of `f` with central differences of step `h` over
/// every parameter entry (or every `stride`-th entry when `stride > 1`).
///
/// `f` records a scalar loss on the tape it is handed and must be a pure
/// function of the store.
pub fn grad_check<F>(store: &mut ParameterStore<f64>, f: F, h: f64, tol: f64, stride: usize) -> Result<GradCheckReport>
where
    F: for<'s> Fn(&mut Tape<'s, f64>) -> Result<Var>,
{
    let eval = |store: &ParameterStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.scalar(loss)
    };

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        let grads = tape.backward(loss)?;
        store
            .ids()
            .map(|id| {
                grads
                    .param(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; store.get(id).len()])
            })
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance: tol,
        passed: true,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let stride = stride.max(1);
    let mut counter = 0usize;
    for id in ids {
        for k in 0..store.get(id).len() {
            counter += 1;
            if (counter - 1) % stride != 0 {
                continue;
            }
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[id.0][k], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_owned(), k));
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}

/// Same comparison for a function of free inputs rather than parameters.
/// `store`, when given, supplies fixed parameters the function may read.
pub fn grad_check_inputs<F>(
    store: Option<&ParameterStore<f64>>,
    inputs: &[Vec<f64>],
    f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: for<'s> Fn(&mut Tape<'s, f64>, &[Var]) -> Result<Var>,
{
    let run = |vals: &[Vec<f64>], with_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = match store {
            Some(s) => Tape::new(s),
            None => Tape::detached(),
        };
        let vars = vals
            .iter()
            .map(|v| {
                if with_grad {
                    tape.input_with_grad(vec![v.len()], v.clone())
                } else {
                    tape.input(vec![v.len()], v.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        let value = tape.scalar(loss)?;
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(vals)
            .map(|(&v, x)| g.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]))
            .collect();
        Ok((value, grads))
    };
    let (_, analytic) = run(inputs, true)?;
    let mut vals = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tolerance: tol,
        passed: true,
    };
    for i in 0..vals.len() {
        for k in 0..vals[i].len() {
            let orig = vals[i][k];
            vals[i][k] = orig + h;
            let plus = run(&vals, false)?.0;
            vals[i][k] = orig - h;
            let minus = run(&vals, false)?.0;
            vals[i][k] = orig;
            let err = relative_error(analytic[i][k], (plus - minus) / (2.0 * h));
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((format!("input{i}"), k));
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
