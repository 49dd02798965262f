//! Small fully connected ReLU network with a scalar linear output.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-style uniform init scaled by fan-in; zero bias.
    pub fn he_uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let bound = (6.0 / inputs as f64).sqrt();
        for w in &mut d.weights {
            *w = rng.gen_range(-bound..=bound);
        }
        d
    }

    #[inline]
    fn forward(&self, x: &[f64], out: &mut [f64], relu: bool) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.bias)) {
            let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
            *o = if relu { z.max(0.0) } else { z };
        }
    }
}

/// Layer stack `input -> hidden.. -> 1`, ReLU on hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }
}

/// Per-layer activations from the latest forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    out_delta: Vec<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths.windows(2).map(|w| Dense::he_uniform(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let chained = self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs);
        let shaped = self
            .layers
            .iter()
            .all(|l| l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs);
        match self.layers.last() {
            Some(last) if chained && shaped && last.outputs == 1 => Ok(()),
            _ => Err(Error::Shape("MLP layers do not chain to a scalar output".into())),
        }
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &[f64], cache: &mut MlpCache) -> f64 {
        let n = self.layers.len();
        if cache.acts.len() != n + 1 {
            cache.acts = std::iter::once(self.input_width())
                .chain(self.layers.iter().map(|l| l.outputs))
                .map(|w| vec![0.0; w])
                .collect();
            cache.delta = self.layers.iter().map(|l| vec![0.0; l.inputs]).collect();
        }
        cache.acts[0].copy_from_slice(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = cache.acts.split_at_mut(i + 1);
            layer.forward(&head[i], &mut tail[0], i + 1 < n);
        }
        cache.acts[n][0]
    }

    /// Accumulates parameter gradients for `upstream * d(out)/d(params)` and
    /// returns `d(out)/d(input) * upstream` as a slice of the cache.
    pub fn backward<'c>(&self, cache: &'c mut MlpCache, upstream: f64, grads: &mut MlpGrads) -> &'c [f64] {
        let n = self.layers.len();
        let mut out_delta = std::mem::take(&mut cache.out_delta);
        out_delta.clear();
        out_delta.push(upstream);
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            let x = &cache.acts[i];
            let in_delta = &mut cache.delta[i];
            in_delta.fill(0.0);
            for (o, &d) in out_delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.inputs;
                let grow = &mut g.weights[row..row + layer.inputs];
                let wrow = &layer.weights[row..row + layer.inputs];
                for ((gw, &xv), (&w, id)) in grow.iter_mut().zip(x).zip(wrow.iter().zip(in_delta.iter_mut())) {
                    *gw += d * xv;
                    *id += d * w;
                }
            }
            if i > 0 {
                // ReLU: the cached post-activation is positive exactly where the gate is open
                out_delta.clear();
                out_delta.extend(in_delta.iter().zip(x).map(|(&d, &a)| if a > 0.0 { d } else { 0.0 }));
            }
        }
        cache.out_delta = out_delta;
        &cache.delta[0]
    }

    /// Flat parameter views in the fixed order weights, bias per layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl MlpGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }
}
