use super::layers::Parameterized;
use crate::error::{Error, Result};

/// Largest parameter count [`grad_check`] accepts; every parameter costs two
/// extra forward passes.
pub const MAX_GRADCHECK_PARAMS: usize = 10_000;

/// A scalar function of the parameters with a fixed input baked in.
pub trait Differentiable: Parameterized {
    fn loss(&self) -> Result<f64>;

    /// Returns the loss and accumulates its gradient into the grad buffers.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub n_params: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn set_param(net: &mut dyn Differentiable, tensor: usize, elem: usize, value: f64) -> f64 {
    let mut idx = 0;
    let mut old = 0.0;
    net.visit_params_mut(&mut |_, v, _| {
        if idx == tensor {
            old = v.data()[elem];
            v.data_mut()[elem] = value;
        }
        idx += 1;
    });
    old
}

/// Compares reverse-mode gradients with central differences of step `h`
/// for every parameter.
pub fn grad_check(net: &mut dyn Differentiable, h: f64) -> Result<GradCheckReport> {
    let n_params = net.param_count();
    if n_params > MAX_GRADCHECK_PARAMS {
        return Err(Error::InvalidConfig(format!(
            "gradient check limited to {MAX_GRADCHECK_PARAMS} parameters, network has {n_params}"
        )));
    }
    net.zero_grads();
    net.loss_and_grad()?;
    let mut tensors: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    net.visit_params(&mut |name, v, g| tensors.push((name.to_string(), v.data().to_vec(), g.data().to_vec())));

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        n_params,
    };
    for (t, (name, values, grads)) in tensors.iter().enumerate() {
        for (e, (&x, &analytic)) in values.iter().zip(grads).enumerate() {
            set_param(net, t, e, x + h);
            let plus = net.loss()?;
            set_param(net, t, e, x - h);
            let minus = net.loss()?;
            set_param(net, t, e, x);
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            if err > report.max_relative_error || report.worst.is_none() && err.is_nan() {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), e));
            }
        }
    }
    net.zero_grads();
    Ok(report)
}
