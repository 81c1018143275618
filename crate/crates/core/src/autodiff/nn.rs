use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Affine layer `y = x W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers `<name>.w` and `<name>.b`. Weights are drawn from
    /// `N(0, gain² / in_dim)`, biases start at zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = gain / (in_dim.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::Domain(e.to_string()))?;
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        let weight = store.add(format!("{name}.w"), Tensor::matrix(in_dim, out_dim, w)?)?;
        let bias = store.add(format!("{name}.b"), Tensor::vector(vec![0.0; out_dim]))?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_bias(xw, b)
    }
}

/// Stack of linear layers with `tanh` between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply `tanh` after the final layer as well.
    pub activate_output: bool,
}

impl Mlp {
    /// `sizes` lists every width including input and output, e.g. `[4, 64, 64]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        activate_output: bool,
        output_gain: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config(name, "an MLP needs at least input and output sizes"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { 1.0 };
                Linear::new(store, &format!("{name}.{i}"), sizes[i], sizes[i + 1], gain, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers, activate_output })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < n || self.activate_output {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }
}

/// Runs an MLP on a plain tensor without keeping the tape around.
pub fn mlp_forward(mlp: &Mlp, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = mlp.forward(&mut tape, store, xv)?;
    let mut out = tape.value(y).clone();
    out.tape_id = None;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "f", &[3, 5, 2], false, 1.0, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap();
        let y = mlp_forward(&mlp, &store, &x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_layer_is_matmul_plus_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "f", &[2, 3], false, 1.0, &mut rng).unwrap();
        store.get_mut(mlp.layers[0].bias).data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let w = store.get(mlp.layers[0].weight).data().to_vec();
        let x = [0.3, -0.7];
        let y = mlp_forward(&mlp, &store, &Tensor::matrix(1, 2, x.to_vec()).unwrap()).unwrap();
        for c in 0..3 {
            let expect = x[0] * w[c] + x[1] * w[3 + c] + [0.5, -1.0, 2.0][c];
            assert!((y.data()[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_input_width_is_a_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "f", &[4, 2], false, 1.0, &mut rng).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(mlp_forward(&mlp, &store, &x), Err(Error::Dimension { .. })));
    }
}
