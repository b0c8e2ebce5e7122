use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::layer::{backward_layer, check_input, forward_layer, LayerRecord, LayerSpec};
use crate::tensor::params::{Param, ParameterSet};

/// A feed-forward stack of [`LayerSpec`]s. The architecture is separate from
/// the weights so the same network can be evaluated against perturbed or
/// frozen parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: String,
    layers: Vec<LayerSpec>,
}

/// Activations recorded by [`Network::forward`], consumed by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    batch: usize,
    records: Vec<LayerRecord>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Network {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let name = name.into();
        if layers.is_empty() {
            return Err(Error::InvalidArgument(format!("network {name} has no layers")));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    format!("{name}[{}] {}", i + 1, pair[1].kind),
                    pair[1].input_dim(),
                    pair[0].output_dim(),
                ));
            }
        }
        Ok(Network { name, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn label(&self, i: usize) -> String {
        format!("{}[{}] {}", self.name, i, self.layers[i].kind)
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterSet {
        let mut set = ParameterSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let [w, b] = layer.init_params(rng);
            set.push(Param::new(format!("{}.{i}.weight", self.name), w));
            set.push(Param::new(format!("{}.{i}.bias", self.name), b));
        }
        set
    }

    fn check_params(&self, params: &ParameterSet) -> Result<()> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::shape(
                format!("{} parameters", self.name),
                2 * self.layers.len(),
                params.len(),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for (j, shape) in layer.param_shapes().iter().enumerate() {
                let got = params.get(2 * i + j).value.shape();
                if got != shape.as_slice() {
                    return Err(Error::shape(self.label(i), format!("{shape:?}"), format!("{got:?}")));
                }
            }
        }
        Ok(())
    }

    /// Forward pass over `batch` rows, recording what backward needs.
    pub fn forward(&self, params: &ParameterSet, input: &[f64], batch: usize) -> Result<(Vec<f64>, Tape)> {
        self.run(params, input, batch, true)
    }

    /// Forward pass without a tape.
    pub fn infer(&self, params: &ParameterSet, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.run(params, input, batch, false).map(|(out, _)| out)
    }

    /// Inference through layers `start..`, feeding `input` to layer `start`.
    pub fn infer_from(&self, params: &ParameterSet, start: usize, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        if start >= self.layers.len() {
            return Err(Error::InvalidArgument(format!("{} has no layer {start}", self.name)));
        }
        self.check_params(params)?;
        check_input(&self.label(start), &self.layers[start], input, batch)?;
        let mut current = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            let w = params.get(2 * i).value.data();
            let b = params.get(2 * i + 1).value.data();
            current = forward_layer(layer, [w, b], &current, batch, false).0;
        }
        Ok(current)
    }

    fn run(&self, params: &ParameterSet, input: &[f64], batch: usize, keep: bool) -> Result<(Vec<f64>, Tape)> {
        self.check_params(params)?;
        check_input(&self.label(0), &self.layers[0], input, batch)?;
        let mut tape = Tape {
            batch,
            records: Vec::with_capacity(if keep { self.layers.len() } else { 0 }),
        };
        let mut current = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = params.get(2 * i).value.data();
            let b = params.get(2 * i + 1).value.data();
            let (out, saved) = forward_layer(layer, [w, b], &current, batch, keep);
            if keep {
                tape.records.push(LayerRecord {
                    saved_input: saved.expect("kept"),
                    output: out.clone(),
                });
            }
            current = out;
        }
        Ok((current, tape))
    }

    /// Accumulates `dL/dparams` into `params` given `dL/doutput`; returns
    /// `dL/dinput` when `want_input_grad` is set.
    pub fn backward(
        &self,
        params: &mut ParameterSet,
        tape: &Tape,
        grad_output: &[f64],
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        if tape.records.len() != self.layers.len() {
            return Err(Error::NoForwardRecord);
        }
        if let Some(i) = self.layers.iter().position(|l| !l.is_trainable()) {
            return Err(Error::FixedLayer(self.label(i)));
        }
        let batch = tape.batch;
        if grad_output.len() != batch * self.output_dim() {
            return Err(Error::shape(
                format!("{} output gradient", self.name),
                batch * self.output_dim(),
                grad_output.len(),
            ));
        }
        let mut grad = grad_output.to_vec();
        for i in (0..self.layers.len()).rev() {
            let need_input = want_input_grad || i > 0;
            let weight = params.get(2 * i).value.data().to_vec();
            let (w_param, b_param) = pair_mut(params, 2 * i);
            let next = backward_layer(
                &self.layers[i],
                &weight,
                [w_param.grad.data_mut(), b_param.grad.data_mut()],
                &tape.records[i],
                &grad,
                batch,
                need_input,
            );
            match next {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }
}

fn pair_mut(params: &mut ParameterSet, first: usize) -> (&mut Param, &mut Param) {
    let mut iter = params.iter_mut().skip(first);
    let a = iter.next().expect("weight present");
    let b = iter.next().expect("bias present");
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::layer::Activation;
    use crate::tensor::Tensor;

    #[test]
    fn linear_identity_gradient_is_input() {
        let net = Network::new("lin", vec![LayerSpec::dense(3, 3, Activation::Linear)]).unwrap();
        let mut params = ParameterSet::new();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        params.push(Param::new("w", Tensor::from_vec(&[3, 3], eye).unwrap()));
        params.push(Param::new("b", Tensor::zeros(&[3])));
        let x = [0.5, -1.5, 2.0];
        let (_, tape) = net.forward(&params, &x, 1).unwrap();
        net.backward(&mut params, &tape, &[1.0; 3], false).unwrap();
        let gw = params.get(0).grad.data();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(gw[i * 3 + j], x[i]);
            }
        }
        assert_eq!(params.get(1).grad.data(), &[1.0; 3]);
    }

    #[test]
    fn backward_without_forward_is_rejected() {
        let net = Network::new("lin", vec![LayerSpec::dense(2, 1, Activation::Linear)]).unwrap();
        let mut rng = rand::rng();
        let mut params = net.init_params(&mut rng);
        let err = net.backward(&mut params, &Tape::default(), &[1.0], false).unwrap_err();
        assert!(matches!(err, Error::NoForwardRecord));
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let err = Network::new(
            "bad",
            vec![
                LayerSpec::dense(4, 3, Activation::Relu),
                LayerSpec::dense(5, 1, Activation::Linear),
            ],
        )
        .unwrap_err();
        assert!(err.to_string().contains("bad[1]"));
    }

    #[test]
    fn wrong_input_length_names_layer() {
        let net = Network::new("E_y", vec![LayerSpec::dense(32, 16, Activation::Linear)]).unwrap();
        let mut rng = rand::rng();
        let params = net.init_params(&mut rng);
        let err = net.infer(&params, &[0.0; 31], 1).unwrap_err();
        assert!(err.to_string().contains("E_y[0]"), "{err}");
    }
}
