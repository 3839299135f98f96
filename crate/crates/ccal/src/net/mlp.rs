//! Dense towers: affine layers with ELU on hidden layers and a linear output
//! layer, plus plain backprop.

use crate::error::{Error, Result};
use crate::mat::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layer widths from input to embedding: `[d_in, hidden.., k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TowerSpec {
    widths: Vec<usize>,
}

impl TowerSpec {
    pub fn new(widths: Vec<usize>) -> Result<TowerSpec> {
        if widths.len() < 2 {
            return Err(Error::contract(
                "a tower needs at least an input and an output width",
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::contract("tower widths must be >= 1"));
        }
        Ok(TowerSpec { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// One affine layer; `weights` is `in x out`, applied as `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Mat,
    pub bias: Vec<f64>,
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    layers: Vec<DenseLayer>,
}

impl Tower {
    /// Glorot-uniform weights (`+-sqrt(6 / (fan_in + fan_out))`), zero
    /// biases; each layer draws from its own seeded stream.
    pub fn init(spec: &TowerSpec, seed: u64) -> Tower {
        let mut layers = Vec::with_capacity(spec.num_layers());
        for l in 0..spec.num_layers() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(seed, l as u64));
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(DenseLayer {
                weights: Mat::from_raw(fan_in, fan_out, data),
                bias: vec![0.0; fan_out],
            });
        }
        Tower { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Tower> {
        if layers.is_empty() {
            return Err(Error::contract("a tower needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].weights.cols() != w[1].weights.rows() {
                return Err(Error::contract("tower layer widths do not chain"));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.cols() {
                return Err(Error::contract("bias length does not match layer width"));
            }
        }
        Ok(Tower { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn spec(&self) -> TowerSpec {
        let mut widths = vec![self.layers[0].weights.rows()];
        widths.extend(self.layers.iter().map(|l| l.weights.cols()));
        TowerSpec { widths }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.cols()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp() - 1.0
    }
}

fn elu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Per-layer pre-activations and inputs recorded during a forward pass.
#[derive(Debug)]
pub struct MlpTape {
    /// Input to each layer (first entry is the batch itself).
    inputs: Vec<Mat>,
    /// Pre-activation of each layer.
    preacts: Vec<Mat>,
}

fn affine(layer: &DenseLayer, input: &Mat) -> Mat {
    let mut z = input.mul(&layer.weights);
    for i in 0..z.rows() {
        for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

/// Forward pass through a tower, keeping the tape for backprop. Hidden
/// layers apply ELU; the final layer is linear.
pub fn mlp_forward(tower: &Tower, input: &Mat) -> Result<(Mat, MlpTape)> {
    if input.cols() != tower.input_dim() {
        return Err(Error::contract(format!(
            "tower expects {} input columns, got {}",
            tower.input_dim(),
            input.cols()
        )));
    }
    let n_layers = tower.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut preacts = Vec::with_capacity(n_layers);
    let mut current = input.clone();
    for (l, layer) in tower.layers.iter().enumerate() {
        let z = affine(layer, &current);
        inputs.push(current);
        let out = if l + 1 < n_layers {
            let mut h = z.clone();
            for v in h.data_mut() {
                *v = elu(*v);
            }
            h
        } else {
            z.clone()
        };
        preacts.push(z);
        current = out;
    }
    Ok((current, MlpTape { inputs, preacts }))
}

/// Forward pass without a tape, for evaluation.
pub fn mlp_output(tower: &Tower, input: &Mat) -> Result<Mat> {
    Ok(mlp_forward(tower, input)?.0)
}

/// Parameter gradients of a tower, shaped like the tower itself.
#[derive(Debug, Clone)]
pub struct TowerGrads {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl TowerGrads {
    pub fn zeros_like(tower: &Tower) -> TowerGrads {
        TowerGrads {
            weights: tower
                .layers
                .iter()
                .map(|l| Mat::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            biases: tower.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

/// Backprop through a tower: given adjoints of the output batch, return
/// parameter gradients and the adjoint of the input batch. The tape must
/// come from a forward pass of the same tower on the same batch.
pub fn mlp_backward(tower: &Tower, tape: &MlpTape, out_adj: &Mat) -> Result<(TowerGrads, Mat)> {
    let n_layers = tower.layers.len();
    if tape.inputs.len() != n_layers || tape.preacts.len() != n_layers {
        return Err(Error::contract(
            "stale tape: layer count does not match the tower",
        ));
    }
    for (l, layer) in tower.layers.iter().enumerate() {
        if tape.inputs[l].cols() != layer.weights.rows()
            || tape.preacts[l].cols() != layer.weights.cols()
            || tape.inputs[l].rows() != tape.preacts[l].rows()
        {
            return Err(Error::contract(format!(
                "stale tape: layer {l} shapes do not match the tower"
            )));
        }
    }
    let m = tape.inputs[0].rows();
    if out_adj.shape() != (m, tower.output_dim()) {
        return Err(Error::contract(format!(
            "output adjoint must be {}x{}, got {:?}",
            m,
            tower.output_dim(),
            out_adj.shape()
        )));
    }

    let mut grads = TowerGrads::zeros_like(tower);
    let mut delta = out_adj.clone();
    for l in (0..n_layers).rev() {
        if l + 1 < n_layers {
            // Chain through the ELU of this hidden layer.
            let z = &tape.preacts[l];
            for i in 0..delta.rows() {
                let zr = z.row(i);
                for (j, d) in delta.row_mut(i).iter_mut().enumerate() {
                    *d *= elu_prime(zr[j]);
                }
            }
        }
        grads.weights[l] = tape.inputs[l].tn_mul(&delta);
        let bias = &mut grads.biases[l];
        for i in 0..delta.rows() {
            for (b, d) in bias.iter_mut().zip(delta.row(i)) {
                *b += d;
            }
        }
        delta = delta.nt_mul(&tower.layers[l].weights);
    }
    Ok((grads, delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_tower() -> Tower {
        Tower::init(&TowerSpec::new(vec![2, 3, 2]).unwrap(), 7)
    }

    #[test]
    fn zero_tower_outputs_zero() {
        let mut t = tiny_tower();
        for l in t.layers_mut() {
            for v in l.weights.data_mut() {
                *v = 0.0;
            }
        }
        let x = Mat::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]).unwrap();
        let (out, _) = mlp_forward(&t, &x).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let w = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let t = Tower::from_layers(vec![DenseLayer {
            weights: w.clone(),
            bias: vec![0.5, -0.5],
        }])
        .unwrap();
        let x = Mat::from_rows(&[&[1.0, 1.0]]).unwrap();
        let out = mlp_output(&t, &x).unwrap();
        assert_eq!(out.row(0), &[1.0 + 3.0 + 0.5, 2.0 + 4.0 - 0.5]);
    }

    #[test]
    fn elu_values() {
        assert!((elu(-1.0) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((elu(-1.0) + 0.6321).abs() < 1e-4);
        assert_eq!(elu(2.0), 2.0);
    }

    #[test]
    fn zero_adjoint_gives_zero_grads() {
        let t = tiny_tower();
        let x = Mat::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]).unwrap();
        let (_, tape) = mlp_forward(&t, &x).unwrap();
        let (grads, gx) = mlp_backward(&t, &tape, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        for g in &grads.weights {
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn linear_layer_weight_grad_is_input_outer_adjoint() {
        let w = Mat::from_rows(&[&[0.2, -0.4], &[1.0, 0.3]]).unwrap();
        let t = Tower::from_layers(vec![DenseLayer {
            weights: w,
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        let x = Mat::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5]]).unwrap();
        let (_, tape) = mlp_forward(&t, &x).unwrap();
        let adj = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]).unwrap();
        let (grads, _) = mlp_backward(&t, &tape, &adj).unwrap();
        let expected = x.tn_mul(&adj);
        assert!(grads.weights[0].sub(&expected).max_abs() <= 1e-15);
    }

    #[test]
    fn width_mismatch_is_contract_error() {
        let t = tiny_tower();
        let x = Mat::zeros(2, 5);
        assert!(matches!(mlp_forward(&t, &x), Err(Error::Contract(_))));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = TowerSpec::new(vec![4, 8, 3]).unwrap();
        assert_eq!(Tower::init(&spec, 5), Tower::init(&spec, 5));
        assert_ne!(Tower::init(&spec, 5), Tower::init(&spec, 6));
    }
}
