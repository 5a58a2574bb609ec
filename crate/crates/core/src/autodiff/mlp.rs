use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

/// Multilayer perceptron: tanh on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    widths: Vec<usize>,
    layers: Vec<Layer>,
}

impl MlpNet {
    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                let bias = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, weight),
                    bias: Tensor::vector(bias),
                }
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    /// All parameters zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    /// Builds a net from explicit layers, checking that shapes compose.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let mut widths = Vec::with_capacity(layers.len() + 1);
        for (i, l) in layers.iter().enumerate() {
            let (fi, fo) = (l.weight.rows(), l.weight.cols());
            if l.weight.shape().len() != 2 || l.bias.len() != fo {
                return Err(Error::ShapeMismatch {
                    op: "MlpNet::from_layers",
                    expected: format!("layer {i}: bias of length {fo}"),
                    got: format!("{:?}", l.bias.shape()),
                });
            }
            match widths.last() {
                None => widths.push(fi),
                Some(&prev) if prev != fi => {
                    return Err(Error::ShapeMismatch {
                        op: "MlpNet::from_layers",
                        expected: format!("layer {i} fan-in {prev}"),
                        got: format!("{fi}"),
                    })
                }
                _ => {}
            }
            widths.push(fo);
        }
        Self::check_widths(&widths)?;
        Ok(Self { widths, layers })
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!(
                "layer widths must be at least two positive sizes, got {widths:?}"
            )));
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in layer order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Forward pass without recording.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.shape())?;
        let mut h = input.matmul(&self.layers[0].weight)?.add_row(&self.layers[0].bias)?;
        for layer in &self.layers[1..] {
            h.data_mut().iter_mut().for_each(|v| *v = super::tape::tanh(*v));
            h = h.matmul(&layer.weight)?.add_row(&layer.bias)?;
        }
        Ok(h)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "MlpNet::forward",
                expected: format!("[batch, {}]", self.in_dim()),
                got: format!("{shape:?}"),
            });
        }
        Ok(())
    }

    /// Places the parameters on `tape`, trainable or frozen.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundMlp {
            in_dim: self.in_dim(),
            params: self
                .layers
                .iter()
                .map(|l| (leaf(&l.weight), leaf(&l.bias)))
                .collect(),
        }
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn polyak_from(&mut self, online: &MlpNet, tau: f64) -> Result<()> {
        if self.widths != online.widths {
            return Err(Error::ShapeMismatch {
                op: "polyak_update",
                expected: format!("{:?}", self.widths),
                got: format!("{:?}", online.widths),
            });
        }
        let mut target = self.params_mut();
        polyak_update(&mut target, &online.params(), tau)
    }
}

/// Soft target update over matching parameter lists.
pub fn polyak_update(target: &mut [&mut Tensor], online: &[&Tensor], tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("polyak tau must be in (0, 1], got {tau}")));
    }
    if target.len() != online.len()
        || target.iter().zip(online).any(|(t, o)| t.shape() != o.shape())
    {
        return Err(Error::ShapeMismatch {
            op: "polyak_update",
            expected: "matching parameter shapes".into(),
            got: "different shapes".into(),
        });
    }
    for (t, o) in target.iter_mut().zip(online) {
        if tau == 1.0 {
            t.data_mut().copy_from_slice(o.data());
        } else {
            for (tv, ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
    }
    Ok(())
}

/// An [`MlpNet`] whose parameters live on a tape.
pub struct BoundMlp<'t> {
    in_dim: usize,
    params: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::ShapeMismatch {
                op: "BoundMlp::forward",
                expected: format!("[batch, {}]", self.in_dim),
                got: format!("{shape:?}"),
            });
        }
        let mut h = x;
        for (i, &(w, b)) in self.params.iter().enumerate() {
            if i > 0 {
                h = h.tanh();
            }
            h = h.matmul(w).add_row(b);
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        self.params.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Gradients in [`MlpNet::params`] order.
    pub fn grads(&self, g: &Gradients) -> Vec<Tensor> {
        self.vars().into_iter().map(|v| g.get_or_zeros(v)).collect()
    }
}
