//! Drift and diffusion functions of the coupled hidden/weight system.
//!
//! * `f_h(t, h; w)`: hidden-state drift, an MLP whose parameters *are* the
//!   current weight state `w_t`.
//! * `f_q(t, w; θ)`: posterior weight drift (a hypernetwork over depth), or
//!   one of the closed-form toy drifts used for path visualisations.
//! * `f_p(t, w)`: Ornstein–Uhlenbeck prior drift `-λ w` on stochastic
//!   coordinates.
//! * `g_p`: constant `σ` on stochastic coordinates inside the stochastic
//!   window, zero elsewhere.

mod mlp;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::inference::ParamStore;

pub use mlp::{flatten, unflatten, Activation, BoundMlp, MlpLayers, MlpSpec, FLATTEN_ORDER_VERSION};

/// Split of the weight coordinates into stochastic (`S`) and deterministic
/// (`D`) index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    dim: usize,
    stochastic: Vec<usize>,
    deterministic: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    dim: usize,
    stochastic: Vec<usize>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        Partition::new(r.dim, r.stochastic)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr {
            dim: p.dim,
            stochastic: p.stochastic,
        }
    }
}

impl Partition {
    /// `stochastic` may be in any order; it is stored sorted.
    pub fn new(dim: usize, stochastic: Vec<usize>) -> Result<Self> {
        let set: BTreeSet<usize> = stochastic.iter().copied().collect();
        if set.len() != stochastic.len() {
            return Err(Error::Config("duplicate stochastic index".into()));
        }
        if let Some(&bad) = set.iter().find(|&&i| i >= dim) {
            return Err(Error::Config(format!(
                "stochastic index {bad} out of range for {dim} weights"
            )));
        }
        let deterministic = (0..dim).filter(|i| !set.contains(i)).collect();
        Ok(Partition {
            dim,
            stochastic: set.into_iter().collect(),
            deterministic,
        })
    }

    /// `S` = the first `m1` coordinates.
    pub fn leading(dim: usize, m1: usize) -> Result<Self> {
        if m1 > dim {
            return Err(Error::Config(format!("m1 = {m1} exceeds d_w = {dim}")));
        }
        Partition::new(dim, (0..m1).collect())
    }

    /// Every coordinate stochastic.
    pub fn all_stochastic(dim: usize) -> Self {
        Partition {
            dim,
            stochastic: (0..dim).collect(),
            deterministic: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stochastic(&self) -> &[usize] {
        &self.stochastic
    }

    pub fn deterministic(&self) -> &[usize] {
        &self.deterministic
    }

    pub fn is_full(&self) -> bool {
        self.deterministic.is_empty()
    }
}

/// A weight vector at depth `t`, optionally partitioned.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightState {
    pub w: Vec<f64>,
    pub partition: Option<Partition>,
    pub t: f64,
}

impl WeightState {
    pub fn new(w: Vec<f64>, partition: Option<Partition>, t: f64) -> Result<Self> {
        if let Some(p) = &partition {
            if p.dim() != w.len() {
                return Err(Error::Config(format!(
                    "partition over {} weights applied to {} weights",
                    p.dim(),
                    w.len()
                )));
            }
        }
        Ok(WeightState { w, partition, t })
    }

    pub fn partition_or_full(&self) -> Partition {
        self.partition
            .clone()
            .unwrap_or_else(|| Partition::all_stochastic(self.w.len()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
    pub t: f64,
}

/// `h₀ = [x; 0_{augment_dim}]`.
pub fn augment_input(x: &[f64], augment_dim: usize) -> HiddenState {
    let mut h = x.to_vec();
    h.extend(std::iter::repeat_n(0.0, augment_dim));
    HiddenState { h, t: 0.0 }
}

/// Batched augmentation on a tape: `[B, d_x] -> [B, d_x + augment_dim]`.
pub fn augment_batch(tape: &mut Tape, x: Var, augment_dim: usize) -> Result<Var> {
    if augment_dim == 0 {
        return Ok(x);
    }
    let (rows, _) = tape.value(x).dims2()?;
    let pad = tape.leaf(Tensor::zeros(&[rows, augment_dim]));
    tape.concat_cols(&[x, pad])
}

/// Constant diffusion `σ` on the stochastic coordinates inside the window.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSpec {
    pub sigma: f64,
    pub window: (f64, f64),
    pub partition: Partition,
}

impl DiffusionSpec {
    pub fn new(sigma: f64, window: (f64, f64), partition: Partition) -> Result<Self> {
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::Config(format!("diffusion σ must be a nonnegative finite number, got {sigma}")));
        }
        if window.0 < window.1 && sigma == 0.0 && !partition.stochastic().is_empty() {
            return Err(Error::Config(
                "σ = 0 with an active stochastic window leaves u_θ undefined".into(),
            ));
        }
        Ok(DiffusionSpec {
            sigma,
            window,
            partition,
        })
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.window.0 <= t && t < self.window.1
    }

    /// Diagonal of `g_p(t, ·)`.
    pub fn diagonal(&self, t: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.partition.dim()];
        if self.is_active(t) {
            for &i in self.partition.stochastic() {
                g[i] = self.sigma;
            }
        }
        g
    }
}

/// Ornstein–Uhlenbeck prior drift, mean-reverting to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuPrior {
    pub rate: f64,
}

impl Default for OuPrior {
    fn default() -> Self {
        OuPrior { rate: 1.0 }
    }
}

impl OuPrior {
    /// `-λ w` applied to a tensor holding only stochastic coordinates.
    pub fn drift_on(&self, tape: &mut Tape, w_s: Var) -> Result<Var> {
        tape.scale(w_s, -self.rate)
    }

    /// Full-length prior drift: `-λ w` on `S`, zero on `D`.
    pub fn eval(&self, state: &WeightState) -> Vec<f64> {
        let partition = state.partition_or_full();
        let mut out = vec![0.0; state.w.len()];
        for &i in partition.stochastic() {
            out[i] = -self.rate * state.w[i];
        }
        out
    }
}

/// Serializable description of the posterior weight drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    /// One network over the whole weight vector: `[w; t] -> dw/dt`.
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        /// Adds the prior drift to the network output, so a zero network
        /// reproduces the prior exactly.
        #[serde(default)]
        prior_residual: bool,
    },
    /// Separate networks for the stochastic and deterministic blocks, each
    /// seeing only its own coordinates.
    Split {
        hidden_s: Vec<usize>,
        hidden_d: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
    /// `cos(freq·t)` on every coordinate, zero for `t` in `[a, b)` when a
    /// quiet window is given.
    Cosine {
        freq: f64,
        #[serde(default)]
        quiet_window: Option<(f64, f64)>,
    },
    /// Two-coordinate toy with `S = {0}`, `D = {1}`:
    /// coupled `[-w_S, t + w_D + w_S]`, split `[-w_S, t + w_D]`.
    TwoBlock { coupled: bool },
    Zero,
}

/// Runtime weight drift with the dimensions resolved.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightDrift {
    Mlp {
        net: MlpSpec,
        residual: Option<(OuPrior, Partition)>,
    },
    Split {
        s: MlpSpec,
        d: MlpSpec,
        partition: Partition,
    },
    Cosine {
        dim: usize,
        freq: f64,
        quiet_window: Option<(f64, f64)>,
    },
    TwoBlock {
        coupled: bool,
    },
    Zero {
        dim: usize,
    },
}

/// Drift parameters bound onto a tape.
#[derive(Clone, Debug, Default)]
pub struct BoundDrift {
    nets: Vec<BoundMlp>,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl WeightDrift {
    pub fn from_spec(spec: &DriftSpec, d_w: usize, partition: &Partition, prior: OuPrior) -> Result<Self> {
        let net = |input: usize, hidden: &[usize], output: usize, activation: Activation| {
            let spec = MlpSpec {
                widths: widths(input, hidden, output),
                time_input: true,
                activation,
            };
            spec.validate().map(|_| spec)
        };
        Ok(match spec {
            DriftSpec::Mlp {
                hidden,
                activation,
                prior_residual,
            } => WeightDrift::Mlp {
                net: net(d_w, hidden, d_w, *activation)?,
                residual: prior_residual.then(|| (prior, partition.clone())),
            },
            DriftSpec::Split {
                hidden_s,
                hidden_d,
                activation,
            } => {
                let (m1, m2) = (partition.stochastic().len(), partition.deterministic().len());
                if m1 == 0 || m2 == 0 {
                    return Err(Error::Config(
                        "a split drift needs nonempty stochastic and deterministic blocks".into(),
                    ));
                }
                WeightDrift::Split {
                    s: net(m1, hidden_s, m1, *activation)?,
                    d: net(m2, hidden_d, m2, *activation)?,
                    partition: partition.clone(),
                }
            }
            DriftSpec::Cosine { freq, quiet_window } => WeightDrift::Cosine {
                dim: d_w,
                freq: *freq,
                quiet_window: *quiet_window,
            },
            DriftSpec::TwoBlock { coupled } => {
                if d_w != 2 || partition.stochastic() != [0] {
                    return Err(Error::Config(
                        "the two-block toy drift needs d_w = 2 with S = {0}, D = {1}".into(),
                    ));
                }
                WeightDrift::TwoBlock { coupled: *coupled }
            }
            DriftSpec::Zero => WeightDrift::Zero { dim: d_w },
        })
    }

    /// Names and sizes of the trainable drift parameters.
    pub fn param_shapes(&self) -> Vec<(&'static str, usize)> {
        match self {
            WeightDrift::Mlp { net, .. } => vec![("theta", net.param_count())],
            WeightDrift::Split { s, d, .. } => {
                vec![("theta_s", s.param_count()), ("theta_d", d.param_count())]
            }
            _ => Vec::new(),
        }
    }

    pub fn nets(&self) -> Vec<&MlpSpec> {
        match self {
            WeightDrift::Mlp { net, .. } => vec![net],
            WeightDrift::Split { s, d, .. } => vec![s, d],
            _ => Vec::new(),
        }
    }

    /// Binds parameter variables given in [`Self::param_shapes`] order.
    pub fn bind(&self, tape: &mut Tape, params: &[Var]) -> Result<BoundDrift> {
        let nets = self.nets();
        if nets.len() != params.len() {
            return Err(Error::Contract(format!(
                "drift expects {} parameter tensors, got {}",
                nets.len(),
                params.len()
            )));
        }
        let nets = nets
            .into_iter()
            .zip(params)
            .map(|(spec, &p)| BoundMlp::bind(tape, spec, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundDrift { nets })
    }

    /// `f_q(t, w; θ)` for `w` of shape `[1, d_w]`.
    pub fn eval(&self, tape: &mut Tape, t: f64, w: Var, bound: &BoundDrift) -> Result<Var> {
        let (_, d_w) = tape.value(w).dims2()?;
        match self {
            WeightDrift::Mlp { residual, .. } => {
                let out = bound.nets[0].forward(tape, w, t)?;
                match residual {
                    Some((prior, partition)) => {
                        let ws = tape.gather_cols(w, partition.stochastic())?;
                        let fp = prior.drift_on(tape, ws)?;
                        let fp = tape.scatter_cols(fp, partition.stochastic(), d_w)?;
                        tape.add(out, fp)
                    }
                    None => Ok(out),
                }
            }
            WeightDrift::Split { partition, .. } => {
                let ws = tape.gather_cols(w, partition.stochastic())?;
                let wd = tape.gather_cols(w, partition.deterministic())?;
                let fs = bound.nets[0].forward(tape, ws, t)?;
                let fd = bound.nets[1].forward(tape, wd, t)?;
                let fs = tape.scatter_cols(fs, partition.stochastic(), d_w)?;
                let fd = tape.scatter_cols(fd, partition.deterministic(), d_w)?;
                tape.add(fs, fd)
            }
            WeightDrift::Cosine {
                freq, quiet_window, ..
            } => {
                let quiet = quiet_window.is_some_and(|(a, b)| a <= t && t < b);
                let v = if quiet { 0.0 } else { (freq * t).cos() };
                Ok(tape.leaf(Tensor::filled(&[1, d_w], v)))
            }
            WeightDrift::TwoBlock { coupled } => {
                let ws = tape.slice_cols(w, 0, 1)?;
                let wd = tape.slice_cols(w, 1, 2)?;
                let fs = tape.scale(ws, -1.0)?;
                let time = tape.leaf(Tensor::row(vec![t]));
                let mut fd = tape.add(time, wd)?;
                if *coupled {
                    fd = tape.add(fd, ws)?;
                }
                tape.concat_cols(&[fs, fd])
            }
            WeightDrift::Zero { .. } => Ok(tape.leaf(Tensor::zeros(&[1, d_w]))),
        }
    }

    /// Plain-value evaluation; `theta` follows [`Self::param_shapes`] order.
    pub fn eval_value(&self, t: f64, w: &[f64], theta: &[Tensor]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let wv = tape.leaf(Tensor::row(w.to_vec()));
        let params: Vec<Var> = theta.iter().map(|p| tape.leaf(p.clone())).collect();
        let bound = self.bind(&mut tape, &params)?;
        let out = self.eval(&mut tape, t, wv, &bound)?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// `f_h`: an MLP over `[h; t]` whose flattened parameters are `w_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenNet {
    pub spec: MlpSpec,
}

impl HiddenNet {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        if spec.input_width() != spec.output_width() {
            return Err(Error::Config(format!(
                "hidden drift must map R^d_h to itself, got widths {:?}",
                spec.widths
            )));
        }
        Ok(HiddenNet { spec })
    }

    pub fn state_dim(&self) -> usize {
        self.spec.input_width()
    }

    pub fn weight_dim(&self) -> usize {
        self.spec.param_count()
    }

    /// `f_h(t, h; w)` for `h` of shape `[B, d_h]` and `w` of shape `[1, d_w]`.
    pub fn eval(&self, tape: &mut Tape, t: f64, h: Var, w: Var) -> Result<Var> {
        let net = BoundMlp::bind(tape, &self.spec, w)?;
        net.forward(tape, h, t)
    }

    pub fn eval_value(&self, t: f64, h: &HiddenState, w: &WeightState) -> Result<Vec<f64>> {
        if w.w.len() != self.weight_dim() {
            return Err(Error::Config(format!(
                "weight state has {} entries, hidden network needs {}",
                w.w.len(),
                self.weight_dim()
            )));
        }
        let mut tape = Tape::new();
        let hv = tape.leaf(Tensor::row(h.h.clone()));
        let wv = tape.leaf(Tensor::row(w.w.clone()));
        let out = self.eval(&mut tape, t, hv, wv)?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// Serializable description of the hidden-state network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenSpec {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

/// Architecture of the coupled system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    /// Input dimension `d_x`.
    pub input_dim: usize,
    #[serde(default)]
    pub augment_dim: usize,
    /// `None` for weight-only toy systems.
    #[serde(default)]
    pub hidden: Option<HiddenSpec>,
    pub drift: DriftSpec,
    #[serde(default)]
    pub prior: OuPrior,
    /// Required when there is no hidden network; otherwise must match the
    /// hidden network's parameter count if given.
    #[serde(default)]
    pub weight_dim: Option<usize>,
}

/// Resolved architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics {
    pub hidden: Option<HiddenNet>,
    pub drift: WeightDrift,
    pub prior: OuPrior,
    pub partition: Partition,
    pub input_dim: usize,
    pub augment_dim: usize,
}

impl DynamicsSpec {
    /// Weight dimension implied by the spec.
    pub fn resolve_weight_dim(&self) -> Result<usize> {
        let d_h = self.input_dim + self.augment_dim;
        match (&self.hidden, self.weight_dim) {
            (Some(h), given) => {
                let spec = MlpSpec {
                    widths: widths(d_h, &h.hidden, d_h),
                    time_input: true,
                    activation: h.activation,
                };
                spec.validate()?;
                let n = spec.param_count();
                match given {
                    Some(g) if g != n => Err(Error::Config(format!(
                        "weight_dim {g} does not match the hidden network's {n} parameters"
                    ))),
                    _ => Ok(n),
                }
            }
            (None, Some(n)) => Ok(n),
            (None, None) => Err(Error::Config(
                "weight_dim is required when there is no hidden network".into(),
            )),
        }
    }

    pub fn build(&self, partition: Option<Partition>) -> Result<Dynamics> {
        let d_w = self.resolve_weight_dim()?;
        let d_h = self.input_dim + self.augment_dim;
        let hidden = match &self.hidden {
            Some(h) => Some(HiddenNet::new(MlpSpec {
                widths: widths(d_h, &h.hidden, d_h),
                time_input: true,
                activation: h.activation,
            })?),
            None => None,
        };
        let partition = partition.unwrap_or_else(|| Partition::all_stochastic(d_w));
        if partition.dim() != d_w {
            return Err(Error::Config(format!(
                "partition covers {} weights but d_w = {d_w}",
                partition.dim()
            )));
        }
        if self.prior.rate < 0.0 {
            return Err(Error::Config("OU rate must be nonnegative".into()));
        }
        let drift = WeightDrift::from_spec(&self.drift, d_w, &partition, self.prior)?;
        Ok(Dynamics {
            hidden,
            drift,
            prior: self.prior,
            partition,
            input_dim: self.input_dim,
            augment_dim: self.augment_dim,
        })
    }
}

impl Dynamics {
    pub fn weight_dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn state_dim(&self) -> usize {
        self.hidden.as_ref().map_or(0, HiddenNet::state_dim)
    }

    /// `f_q` on plain values, with θ looked up by name in `params`.
    pub fn f_q_eval(&self, t: f64, w: &WeightState, params: &ParamStore) -> Result<Vec<f64>> {
        let theta = self
            .drift
            .param_shapes()
            .iter()
            .map(|(name, _)| {
                params
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.drift.eval_value(t, &w.w, &theta)
    }

    pub fn f_h_eval(&self, t: f64, h: &HiddenState, w: &WeightState) -> Result<Vec<f64>> {
        let net = self
            .hidden
            .as_ref()
            .ok_or_else(|| Error::Config("model has no hidden network".into()))?;
        net.eval_value(t, h, w)
    }

    pub fn f_p_eval(&self, w: &WeightState) -> Vec<f64> {
        self.prior.eval(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_drift_at_zero() {
        let p = Partition::all_stochastic(1);
        let d = WeightDrift::from_spec(
            &DriftSpec::Cosine {
                freq: 20.0,
                quiet_window: None,
            },
            1,
            &p,
            OuPrior::default(),
        )
        .unwrap();
        assert_eq!(d.eval_value(0.0, &[0.3], &[]).unwrap(), vec![1.0]);
    }

    #[test]
    fn coupled_two_block_drift() {
        let p = Partition::leading(2, 1).unwrap();
        let d = WeightDrift::from_spec(&DriftSpec::TwoBlock { coupled: true }, 2, &p, OuPrior::default()).unwrap();
        assert_eq!(d.eval_value(0.0, &[1.0, 0.0], &[]).unwrap(), vec![-1.0, 1.0]);
        let s = WeightDrift::from_spec(&DriftSpec::TwoBlock { coupled: false }, 2, &p, OuPrior::default()).unwrap();
        assert_eq!(s.eval_value(0.5, &[1.0, 2.0], &[]).unwrap(), vec![-1.0, 2.5]);
    }

    #[test]
    fn zero_final_layer_gives_zero_drift() {
        let p = Partition::all_stochastic(4);
        let d = WeightDrift::from_spec(
            &DriftSpec::Mlp {
                hidden: vec![3],
                activation: Activation::Softplus,
                prior_residual: false,
            },
            4,
            &p,
            OuPrior::default(),
        )
        .unwrap();
        let net = &d.nets()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = Tensor::row(net.init(&mut rng, true, 1.0));
        for t in [0.0, 0.4, 1.0] {
            let out = d.eval_value(t, &[1.0, -2.0, 3.0, 0.5], std::slice::from_ref(&theta)).unwrap();
            assert_eq!(out, vec![0.0; 4]);
        }
    }

    #[test]
    fn hidden_net_with_zero_weights() {
        // 2-3-2 softplus net, all parameters zero: the hidden layer is
        // softplus(0) = ln 2 everywhere, the output affine map is zero.
        let net = HiddenNet::new(MlpSpec::new(vec![2, 3, 2]).unwrap()).unwrap();
        let w = WeightState::new(vec![0.0; net.weight_dim()], None, 0.5).unwrap();
        let h = HiddenState { h: vec![1.0, -1.0], t: 0.5 };
        assert_eq!(net.eval_value(0.5, &h, &w).unwrap(), vec![0.0, 0.0]);

        // with only the output bias set, the output is that bias
        let mut flat = vec![0.0; net.weight_dim()];
        let n = flat.len();
        flat[n - 2] = 0.25;
        flat[n - 1] = -0.5;
        let w = WeightState::new(flat, None, 0.5).unwrap();
        assert_eq!(net.eval_value(0.5, &h, &w).unwrap(), vec![0.25, -0.5]);

        // with output weights = 1 from every hidden unit and zero first layer,
        // each output equals 3·ln 2
        let spec = &net.spec;
        let dims = spec.layer_dims();
        let first = dims[0].0 * dims[0].1 + dims[0].1;
        let mut flat = vec![0.0; net.weight_dim()];
        for v in &mut flat[first..first + dims[1].0 * dims[1].1] {
            *v = 1.0;
        }
        let w = WeightState::new(flat, None, 0.5).unwrap();
        let out = net.eval_value(0.5, &h, &w).unwrap();
        for v in out {
            assert!((v - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn affine_hidden_map_identity_case() {
        // A packs as rows of [in=3 (h1,h2,t), out=2]; time row zeroed.
        let net = HiddenNet::new(MlpSpec::affine(2, 2, true)).unwrap();
        assert_eq!(net.weight_dim(), 3 * 2 + 2);
        let flat = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let w = WeightState::new(flat, None, 0.0).unwrap();
        for t in [0.0, 0.37, 1.0] {
            let h = HiddenState { h: vec![1.0, 0.0], t };
            assert_eq!(net.eval_value(t, &h, &w).unwrap(), vec![1.0, 0.0]);
        }
    }

    #[test]
    fn hidden_weight_dim_mismatch_is_config_error() {
        let net = HiddenNet::new(MlpSpec::new(vec![2, 8, 2]).unwrap()).unwrap();
        assert_eq!(net.weight_dim(), 50);
        let w = WeightState::new(vec![0.0; 49], None, 0.0).unwrap();
        let h = HiddenState { h: vec![0.0, 0.0], t: 0.0 };
        assert!(matches!(net.eval_value(0.0, &h, &w), Err(Error::Config(_))));
    }

    #[test]
    fn ou_prior_examples() {
        let prior = OuPrior { rate: 1.0 };
        let w = WeightState::new(vec![2.0], None, 0.0).unwrap();
        assert_eq!(prior.eval(&w), vec![-2.0]);
        let w = WeightState::new(vec![0.0, 0.0], None, 0.0).unwrap();
        assert_eq!(prior.eval(&w), vec![0.0, 0.0]);
        let prior = OuPrior { rate: 0.5 };
        let w = WeightState::new(vec![1.0, -4.0], None, 0.0).unwrap();
        assert_eq!(prior.eval(&w), vec![-0.5, 2.0]);
        // deterministic coordinates get no prior drift
        let p = Partition::leading(2, 1).unwrap();
        let w = WeightState::new(vec![1.0, -4.0], Some(p), 0.0).unwrap();
        assert_eq!(prior.eval(&w), vec![-0.5, 0.0]);
    }

    #[test]
    fn augmentation() {
        assert_eq!(augment_input(&[1.0, 2.0], 2).h, vec![1.0, 2.0, 0.0, 0.0]);
        assert_eq!(augment_input(&[1.0, 2.0], 0).h, vec![1.0, 2.0]);
        assert_eq!(augment_input(&[], 3).h, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn partition_validation() {
        let p = Partition::new(5, vec![3, 0]).unwrap();
        assert_eq!(p.stochastic(), &[0, 3]);
        assert_eq!(p.deterministic(), &[1, 2, 4]);
        assert!(Partition::new(3, vec![1, 1]).is_err());
        assert!(Partition::new(3, vec![3]).is_err());
        let json = serde_json::to_string(&p).unwrap();
        let back: Partition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Partition>(r#"{"dim":2,"stochastic":[5]}"#).is_err());
    }

    #[test]
    fn diffusion_is_block_diagonal_inside_window() {
        let p = Partition::leading(3, 2).unwrap();
        let g = DiffusionSpec::new(0.2, (0.3, 0.6), p.clone()).unwrap();
        assert_eq!(g.diagonal(0.4), vec![0.2, 0.2, 0.0]);
        assert_eq!(g.diagonal(0.1), vec![0.0; 3]);
        assert_eq!(g.diagonal(0.6), vec![0.0; 3]);
        assert!(DiffusionSpec::new(0.0, (0.3, 0.6), p.clone()).is_err());
        assert!(DiffusionSpec::new(0.0, (0.6, 0.6), p).is_ok());
    }

    #[test]
    fn hidden_drift_is_finite_with_finite_jacobian_on_bounded_inputs() {
        let spec = DynamicsSpec {
            input_dim: 2,
            augment_dim: 1,
            hidden: Some(HiddenSpec { hidden: vec![6], activation: Activation::Softplus }),
            drift: DriftSpec::Zero,
            prior: OuPrior::default(),
            weight_dim: None,
        };
        let dynamics = spec.build(None).unwrap();
        let net = dynamics.hidden.as_ref().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Tensor::row(net.spec.init(&mut rng, false, 1.0));
        for scale in [0.0, 1.0, 5.77] {
            let mut tape = Tape::new();
            let h = tape.leaf(Tensor::row(vec![scale, -scale, scale]));
            let wv = tape.leaf(w.clone());
            let out = net.eval(&mut tape, 0.5, h, wv).unwrap();
            assert!(tape.value(out).all_finite());
            let loss = tape.sum(out);
            let g = tape.backward(loss).unwrap();
            let jac = g.wrt(&tape, h);
            assert!(jac.all_finite() && jac.sq_norm().sqrt() < 1e6);
        }
    }

    fn split_drift(seed: u64) -> (WeightDrift, Vec<Tensor>, usize) {
        let d_w = 7;
        let p = Partition::new(d_w, vec![1, 4, 5]).unwrap();
        let d = WeightDrift::from_spec(
            &DriftSpec::Split {
                hidden_s: vec![4],
                hidden_d: vec![5],
                activation: Activation::Softplus,
            },
            d_w,
            &p,
            OuPrior::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = d.nets().iter().map(|n| Tensor::row(n.init(&mut rng, false, 1.0))).collect();
        (d, theta, d_w)
    }

    proptest! {
        #[test]
        fn split_drift_deterministic_block_ignores_stochastic_coordinates(
            seed in 0u64..1000,
            w in proptest::collection::vec(-2.0f64..2.0, 7),
            bump in proptest::collection::vec(-3.0f64..3.0, 3),
            t in 0.0f64..1.0,
        ) {
            let (drift, theta, _) = split_drift(seed);
            let base = drift.eval_value(t, &w, &theta).unwrap();
            let mut moved = w.clone();
            for (&i, b) in [1usize, 4, 5].iter().zip(&bump) {
                moved[i] += b;
            }
            let out = drift.eval_value(t, &moved, &theta).unwrap();
            for i in [0usize, 2, 3, 6] {
                prop_assert_eq!(out[i].to_bits(), base[i].to_bits());
            }
        }
    }
}
