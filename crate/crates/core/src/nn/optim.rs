use ndarray::{Array1, Array2};

use super::{Gradients, NetworkParams};
use crate::{Error, Result};

/// Momentum buffers, one per layer parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    weight: Vec<Array2<f64>>,
    bias: Vec<Array1<f64>>,
}

impl Velocity {
    pub fn zeros(params: &NetworkParams) -> Self {
        Self {
            weight: params
                .layers()
                .iter()
                .map(|l| Array2::zeros(l.weight.dim()))
                .collect(),
            bias: params
                .layers()
                .iter()
                .map(|l| Array1::zeros(l.bias.len()))
                .collect(),
        }
    }
}

/// `v ← μv + g; θ ← θ − αv`.
///
/// The step is all-or-nothing: a shape mismatch or a non-finite gradient
/// entry leaves both `params` and `velocity` untouched.
pub fn sgd_momentum_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    velocity: &mut Velocity,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1)")));
    }
    let layers = params.layers();
    if grads.layers.len() != layers.len() || velocity.weight.len() != layers.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} layers, {} gradients, {} velocity buffers",
            layers.len(),
            grads.layers.len(),
            velocity.weight.len()
        )));
    }
    for (i, (l, g)) in layers.iter().zip(&grads.layers).enumerate() {
        if g.weight.dim() != l.weight.dim()
            || g.bias.len() != l.bias.len()
            || velocity.weight[i].dim() != l.weight.dim()
            || velocity.bias[i].len() != l.bias.len()
        {
            return Err(Error::DimensionMismatch(format!("layer {i} shape mismatch")));
        }
        if g.weight.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::GradientBlowup { layer: i });
        }
    }
    for (i, layer) in params.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[i];
        let (vw, vb) = (&mut velocity.weight[i], &mut velocity.bias[i]);
        vw.zip_mut_with(&g.weight, |v, &gi| *v = momentum * *v + gi);
        vb.zip_mut_with(&g.bias, |v, &gi| *v = momentum * *v + gi);
        layer.weight.scaled_add(-lr, vw);
        layer.bias.scaled_add(-lr, vb);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, LayerGrad};
    use ndarray::array;

    fn net() -> NetworkParams {
        NetworkParams::new(vec![Layer::new(
            array![[1.0, -2.0]],
            array![0.5],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn grad(w: [f64; 2], b: f64) -> Gradients {
        Gradients {
            layers: vec![LayerGrad {
                weight: array![[w[0], w[1]]],
                bias: array![b],
            }],
            input: Array2::zeros((0, 2)),
        }
    }

    #[test]
    fn zero_momentum_is_gradient_descent() {
        let mut p = net();
        let mut v = Velocity::zeros(&p);
        sgd_momentum_step(&mut p, &grad([1.0, 2.0], -1.0), &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p.layers()[0].weight, array![[0.9, -2.2]]);
        assert_eq!(p.layers()[0].bias, array![0.6]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = net();
        let before = p.clone();
        let mut v = Velocity::zeros(&p);
        sgd_momentum_step(&mut p, &grad([0.0, 0.0], 0.0), &mut v, 0.5, 0.9).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_accumulates() {
        let mut p = net();
        let start = p.layers()[0].weight.clone();
        let mut v = Velocity::zeros(&p);
        let g = grad([1.0, -4.0], 2.0);
        for _ in 0..2 {
            sgd_momentum_step(&mut p, &g, &mut v, 1.0, 0.5).unwrap();
        }
        let moved = &start - &p.layers()[0].weight;
        assert_eq!(moved, array![[2.5, -10.0]]);
    }

    #[test]
    fn non_finite_gradient_names_layer_and_changes_nothing() {
        let mut p = net();
        let before = p.clone();
        let mut v = Velocity::zeros(&p);
        let err = sgd_momentum_step(&mut p, &grad([f64::NAN, 0.0], 0.0), &mut v, 0.1, 0.5)
            .unwrap_err();
        assert!(matches!(err, Error::GradientBlowup { layer: 0 }));
        assert_eq!(p, before);
        assert_eq!(v, Velocity::zeros(&p));
    }
}
