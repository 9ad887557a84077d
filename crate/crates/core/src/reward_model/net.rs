//! Feedforward reward network with a shared trunk and separate mean and
//! log-variance branches. Every timestep is evaluated independently.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::TrajectorySegment;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activated value `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = libm::sqrt(6.0 / (inputs + outputs) as f64);
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::dim(format!(
                "layer {}->{} has {} weights and {} biases",
                self.inputs,
                self.outputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|x| !x.is_finite()) {
            return Err(Error::InvalidData("layer parameters must be finite".into()));
        }
        Ok(())
    }
}

/// A stack of dense layers. The activation follows every hidden layer, and
/// the last one too when `activate_output` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub activate_output: bool,
}

/// Post-activation values of every layer, input first.
struct MlpTrace {
    values: Vec<Vec<f64>>,
}

impl Mlp {
    fn new(sizes: &[usize], activation: Activation, activate_output: bool, rng: Option<&mut ChaCha8Rng>) -> Self {
        let layers = match rng {
            Some(rng) => sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect(),
            None => sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        };
        Mlp {
            layers,
            activation,
            activate_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }

    fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::arg("an MLP needs at least one layer"));
        }
        for (k, l) in self.layers.iter().enumerate() {
            l.check()?;
            if k > 0 && self.layers[k - 1].outputs != l.inputs {
                return Err(Error::dim(format!("layer {k} expects {} inputs", l.inputs)));
            }
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if self.activated(k) {
                h.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
        h
    }

    fn forward_traced(&self, x: &[f64]) -> MlpTrace {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(values.last().unwrap());
            if self.activated(k) {
                h.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            values.push(h);
        }
        MlpTrace { values }
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    fn backward(&self, trace: &MlpTrace, grad_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let out = &trace.values[k + 1];
            let inp = &trace.values[k];
            if self.activated(k) {
                for (gi, &y) in g.iter_mut().zip(out) {
                    *gi *= self.activation.derivative_from_output(y);
                }
            }
            let gl = &mut grads.layers[k];
            let mut grad_in = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                gl.bias[o] += go;
                let row = o * layer.inputs;
                for i in 0..layer.inputs {
                    gl.weights[row + i] += go * inp[i];
                    grad_in[i] += go * layer.weights[row + i];
                }
            }
            g = grad_in;
        }
        g
    }

    fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            activation: self.activation,
            activate_output: self.activate_output,
        }
    }
}

/// Architecture knobs for [`RewardNet::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Hidden widths of the trunk; the trunk ends in the embedding layer.
    pub trunk_hidden: Vec<usize>,
    /// Embedding width `E`; must be even.
    pub embed_dim: usize,
    /// Hidden width of each two-layer branch.
    pub branch_hidden: usize,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            trunk_hidden: vec![32],
            embed_dim: 16,
            branch_hidden: 16,
            activation: Activation::Tanh,
        }
    }
}

/// Per-timestep Gaussian reward predictions for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRewardSeq {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNet {
    pub trunk: Mlp,
    pub mean_branch: Mlp,
    pub var_branch: Mlp,
}

pub(crate) struct StepTrace {
    trunk: MlpTrace,
    mean: MlpTrace,
    var: MlpTrace,
    pub(crate) mean_out: f64,
    pub(crate) logvar_raw: f64,
}

pub(crate) fn clamp_logvar(lv: f64) -> f64 {
    lv.clamp(LOGVAR_MIN, LOGVAR_MAX)
}

impl RewardNet {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(input_dim: usize, cfg: &NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(input_dim, cfg, Some(&mut rng))
    }

    /// All parameters zero: every step predicts mean 0 and variance 1.
    pub fn zeros(input_dim: usize, cfg: &NetConfig) -> Result<Self> {
        Self::build(input_dim, cfg, None)
    }

    fn build(input_dim: usize, cfg: &NetConfig, mut rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::arg("input dimension must be positive"));
        }
        if cfg.embed_dim == 0 || cfg.embed_dim % 2 != 0 {
            return Err(Error::arg(format!("embedding dimension {} must be even and positive", cfg.embed_dim)));
        }
        if cfg.branch_hidden == 0 || cfg.trunk_hidden.contains(&0) {
            return Err(Error::arg("hidden widths must be positive"));
        }
        let mut trunk_sizes = vec![input_dim];
        trunk_sizes.extend_from_slice(&cfg.trunk_hidden);
        trunk_sizes.push(cfg.embed_dim);
        let half = cfg.embed_dim / 2;
        let branch_sizes = [half, cfg.branch_hidden, 1];
        let trunk = Mlp::new(&trunk_sizes, cfg.activation, true, rng.as_deref_mut());
        let mean_branch = Mlp::new(&branch_sizes, cfg.activation, false, rng.as_deref_mut());
        let var_branch = Mlp::new(&branch_sizes, cfg.activation, false, rng.as_deref_mut());
        Ok(RewardNet {
            trunk,
            mean_branch,
            var_branch,
        })
    }

    /// Assembles a network from explicit parts, checking that the shapes chain.
    pub fn from_parts(trunk: Mlp, mean_branch: Mlp, var_branch: Mlp) -> Result<Self> {
        let net = RewardNet {
            trunk,
            mean_branch,
            var_branch,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.check()?;
        self.mean_branch.check()?;
        self.var_branch.check()?;
        let e = self.embed_dim();
        if e % 2 != 0 {
            return Err(Error::dim(format!("embedding dimension {e} is odd")));
        }
        for (name, b) in [("mean", &self.mean_branch), ("variance", &self.var_branch)] {
            if b.input_dim() != e / 2 || b.output_dim() != 1 {
                return Err(Error::dim(format!(
                    "{name} branch maps {} -> {}, expected {} -> 1",
                    b.input_dim(),
                    b.output_dim(),
                    e / 2
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    /// `(mean, variance)` for one `(s, a)` input.
    pub fn step(&self, x: &[f64]) -> (f64, f64) {
        let emb = self.trunk.forward(x);
        let half = emb.len() / 2;
        let mean = self.mean_branch.forward(&emb[..half])[0];
        let lv = self.var_branch.forward(&emb[half..])[0];
        (mean, libm::exp(clamp_logvar(lv)))
    }

    pub(crate) fn step_traced(&self, x: &[f64]) -> StepTrace {
        let trunk = self.trunk.forward_traced(x);
        let emb = trunk.values.last().unwrap();
        let half = emb.len() / 2;
        let mean = self.mean_branch.forward_traced(&emb[..half]);
        let var = self.var_branch.forward_traced(&emb[half..]);
        let mean_out = mean.values.last().unwrap()[0];
        let logvar_raw = var.values.last().unwrap()[0];
        StepTrace {
            trunk,
            mean,
            var,
            mean_out,
            logvar_raw,
        }
    }

    /// Backpropagates `dL/d mean` and `dL/d raw logvar` for one traced step.
    pub(crate) fn step_backward(&self, trace: &StepTrace, d_mean: f64, d_logvar: f64, grads: &mut RewardNet) {
        let gm = self.mean_branch.backward(&trace.mean, &[d_mean], &mut grads.mean_branch);
        let gv = self.var_branch.backward(&trace.var, &[d_logvar], &mut grads.var_branch);
        let mut g_emb = gm;
        g_emb.extend(gv);
        self.trunk.backward(&trace.trunk, &g_emb, &mut grads.trunk);
    }

    pub fn check_input(&self, segment: &TrajectorySegment) -> Result<()> {
        let d = segment.state_dim() + segment.action_dim();
        if d != self.input_dim() {
            return Err(Error::dim(format!(
                "segment step has {d} features, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Mean and variance for every timestep of `segment`.
    pub fn forward(&self, segment: &TrajectorySegment) -> Result<GaussianRewardSeq> {
        self.check_input(segment)?;
        let (means, variances) = (0..segment.len()).map(|t| self.step(&segment.step_input(t))).unzip();
        Ok(GaussianRewardSeq { means, variances })
    }

    pub fn zeros_like(&self) -> RewardNet {
        RewardNet {
            trunk: self.trunk.zeros_like(),
            mean_branch: self.mean_branch.zeros_like(),
            var_branch: self.var_branch.zeros_like(),
        }
    }

    fn parts(&self) -> [(&'static str, &Mlp); 3] {
        [("trunk", &self.trunk), ("mean_branch", &self.mean_branch), ("var_branch", &self.var_branch)]
    }

    fn parts_mut(&mut self) -> [&mut Mlp; 3] {
        [&mut self.trunk, &mut self.mean_branch, &mut self.var_branch]
    }

    pub fn num_params(&self) -> usize {
        self.parts()
            .iter()
            .flat_map(|(_, m)| &m.layers)
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters in a fixed order: per part, per layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, m) in self.parts() {
            for l in &m.layers {
                out.extend_from_slice(&l.weights);
                out.extend_from_slice(&l.bias);
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut k = 0;
        for m in self.parts_mut() {
            for l in &mut m.layers {
                let nw = l.weights.len();
                l.weights.copy_from_slice(&flat[k..k + nw]);
                k += nw;
                let nb = l.bias.len();
                l.bias.copy_from_slice(&flat[k..k + nb]);
                k += nb;
            }
        }
        Ok(())
    }

    /// Human-readable location of flat parameter `index`, e.g. `trunk.0.weight[3]`.
    pub fn param_path(&self, mut index: usize) -> String {
        for (name, m) in self.parts() {
            for (li, l) in m.layers.iter().enumerate() {
                if index < l.weights.len() {
                    return format!("{name}.{li}.weight[{index}]");
                }
                index -= l.weights.len();
                if index < l.bias.len() {
                    return format!("{name}.{li}.bias[{index}]");
                }
                index -= l.bias.len();
            }
        }
        format!("<out of range {index}>")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn segment(steps: &[[f64; 2]]) -> TrajectorySegment {
        let s: Vec<Vec<f64>> = steps.iter().map(|x| vec![x[0]]).collect();
        let a: Vec<Vec<f64>> = steps.iter().map(|x| vec![x[1]]).collect();
        TrajectorySegment::from_rows(&s, &a).unwrap()
    }

    #[test]
    fn zero_net_predicts_unit_variance() {
        let net = RewardNet::zeros(2, &NetConfig::default()).unwrap();
        let out = net.forward(&segment(&[[1.0, 2.0], [-3.0, 0.5], [7.0, 7.0]])).unwrap();
        assert_eq!(out.means, vec![0.0; 3]);
        assert_eq!(out.variances, vec![1.0; 3]);
    }

    #[test]
    fn repeated_steps_give_repeated_outputs() {
        let net = RewardNet::new(2, &NetConfig::default(), 4).unwrap();
        let out = net.forward(&segment(&[[0.3, -0.2], [0.3, -0.2]])).unwrap();
        assert_eq!(out.means[0], out.means[1]);
        assert_eq!(out.variances[0], out.variances[1]);
    }

    #[test]
    fn hand_computed_forward() {
        // one-layer trunk 1 -> 2 with identity-like weights, E = 2
        let trunk = Mlp {
            layers: vec![Dense { inputs: 1, outputs: 2, weights: vec![1.0, 1.0], bias: vec![0.0, 0.0] }],
            activation: Activation::Tanh,
            activate_output: true,
        };
        let branch = |w1: f64, b2: f64| Mlp {
            layers: vec![
                Dense { inputs: 1, outputs: 1, weights: vec![w1], bias: vec![0.0] },
                Dense { inputs: 1, outputs: 1, weights: vec![2.0], bias: vec![b2] },
            ],
            activation: Activation::Tanh,
            activate_output: false,
        };
        let net = RewardNet::from_parts(trunk, branch(1.0, 0.5), branch(-1.0, 0.0)).unwrap();
        let x = 0.4f64;
        let e = x.tanh();
        let mean = 2.0 * e.tanh() + 0.5;
        let lv = 2.0 * (-e).tanh();
        let seg = TrajectorySegment::new(Matrix::filled(1, 1, x), Matrix::zeros(1, 0)).unwrap();
        let out = net.forward(&seg).unwrap();
        assert!((out.means[0] - mean).abs() < 1e-15);
        assert!((out.variances[0] - lv.exp()).abs() < 1e-15);
    }

    #[test]
    fn logvar_is_clamped() {
        let mut net = RewardNet::zeros(1, &NetConfig::default()).unwrap();
        net.var_branch.layers[1].bias[0] = 50.0;
        let seg = TrajectorySegment::new(Matrix::filled(1, 1, 0.0), Matrix::zeros(1, 0)).unwrap();
        let v = net.forward(&seg).unwrap().variances[0];
        assert!((v - LOGVAR_MAX.exp()).abs() <= 1e-12 * v);
        net.var_branch.layers[1].bias[0] = -50.0;
        let v = net.forward(&seg).unwrap().variances[0];
        assert!((v - LOGVAR_MIN.exp()).abs() <= 1e-12 * v);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = RewardNet::zeros(3, &NetConfig::default()).unwrap();
        assert!(matches!(net.forward(&segment(&[[0.0, 0.0]])), Err(Error::Dimension(_))));
    }

    #[test]
    fn odd_embedding_rejected() {
        let cfg = NetConfig { embed_dim: 5, ..NetConfig::default() };
        assert!(RewardNet::new(2, &cfg, 0).is_err());
    }

    #[test]
    fn params_round_trip_and_paths() {
        let mut net = RewardNet::new(2, &NetConfig::default(), 1).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.num_params());
        let shifted: Vec<f64> = p.iter().map(|x| x + 1.0).collect();
        net.set_params(&shifted).unwrap();
        assert_eq!(net.params(), shifted);
        assert_eq!(net.param_path(0), "trunk.0.weight[0]");
        assert_eq!(net.param_path(64), "trunk.0.bias[0]");
    }
}
