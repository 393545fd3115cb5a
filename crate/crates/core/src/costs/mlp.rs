//! Neural style cost: a per-step MLP whose squared output norms are summed.
//!
//! For each waypoint after the first the network sees
//! `[x[t], x[t-1], ee_position(x[t]), ee_pointing(x[t]), (t+1)/T]`
//! (zero-based `t`), i.e. `2D + 7` inputs. Layers are
//! `in -> 42 (tanh) -> 21 (tanh) -> 21 (linear)`; dropout follows each hidden
//! layer during training only. Weights are stored `in x out`, so a layer is
//! `u W + b` on row vectors.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng as _, RngCore as _};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{fk_jacobian, fk_unchecked, ArmModel};
use crate::rng::Rng;
use crate::trajectory::Trajectory;

pub const HIDDEN1: usize = 42;
pub const HIDDEN2: usize = 21;
pub const OUTPUT: usize = 21;
pub const ENCODING: &str = "raw+fk+t";
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// `tanh` through a single `exp`; libm's version goes through `expm1` and
/// dominates training time.
#[inline]
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub fn input_width(dof: usize) -> usize {
    2 * dof + 7
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights =
            Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit));
        Dense {
            weights,
            bias: Array1::zeros(fan_out),
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, u: &ArrayView2<f64>) -> Array2<f64> {
        u.dot(&self.weights) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct MlpCost {
    pub style: String,
    pub dropout: f64,
    layers: [Dense; 3],
}

#[derive(Serialize, Deserialize)]
struct DenseRepr {
    #[serde(rename = "W")]
    weights: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    style: String,
    dropout: f64,
    encoding: String,
    layers: Vec<DenseRepr>,
}

impl TryFrom<MlpRepr> for MlpCost {
    type Error = Error;

    fn try_from(r: MlpRepr) -> Result<Self> {
        if r.encoding != ENCODING {
            return Err(Error::invalid(format!(
                "unknown MLP encoding {:?}",
                r.encoding
            )));
        }
        if r.layers.len() != 3 {
            return Err(Error::dim("MLP layer count", 3, r.layers.len()));
        }
        let mut layers = Vec::with_capacity(3);
        for l in r.layers {
            let rows = l.weights.len();
            let cols = l.weights.first().map_or(0, Vec::len);
            if l.weights.iter().any(|row| row.len() != cols) {
                return Err(Error::invalid("ragged MLP weight matrix"));
            }
            let weights = Array2::from_shape_vec((rows, cols), l.weights.concat())
                .map_err(|e| Error::invalid(e.to_string()))?;
            layers.push(Dense {
                weights,
                bias: Array1::from(l.b),
            });
        }
        let layers: [Dense; 3] = layers.try_into().expect("three layers");
        let c = MlpCost {
            style: r.style,
            dropout: r.dropout,
            layers,
        };
        c.validate()?;
        Ok(c)
    }
}

impl From<MlpCost> for MlpRepr {
    fn from(c: MlpCost) -> Self {
        MlpRepr {
            style: c.style,
            dropout: c.dropout,
            encoding: ENCODING.to_owned(),
            layers: c
                .layers
                .into_iter()
                .map(|l| DenseRepr {
                    weights: l.weights.outer_iter().map(|r| r.to_vec()).collect(),
                    b: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGradient {
    layers: [Dense; 3],
}

impl MlpGradient {
    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Dense; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Dense::param_count).sum());
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// Intermediate activations of a batched forward pass.
pub(crate) struct Forward {
    h1: Array2<f64>,
    a1: Array2<f64>,
    h2: Array2<f64>,
    a2: Array2<f64>,
    pub(crate) y: Array2<f64>,
    masks: Option<(Array2<f64>, Array2<f64>)>,
}

impl MlpCost {
    /// Glorot-initialized network for a `dof`-joint arm.
    pub fn new(style: impl Into<String>, dof: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        let inw = input_width(dof);
        let c = MlpCost {
            style: style.into(),
            dropout,
            layers: [
                Dense::glorot(inw, HIDDEN1, rng),
                Dense::glorot(HIDDEN1, HIDDEN2, rng),
                Dense::glorot(HIDDEN2, OUTPUT, rng),
            ],
        };
        c.validate()?;
        Ok(c)
    }

    /// Network with every parameter zero (the cost is identically zero).
    pub fn zeros(style: impl Into<String>, dof: usize) -> Self {
        MlpCost {
            style: style.into(),
            dropout: DEFAULT_DROPOUT,
            layers: [
                Dense::zeros(input_width(dof), HIDDEN1),
                Dense::zeros(HIDDEN1, HIDDEN2),
                Dense::zeros(HIDDEN2, OUTPUT),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        let [l1, l2, l3] = &self.layers;
        let inw = l1.weights.nrows();
        if inw < 11 || (inw - 7) % 2 != 0 {
            return Err(Error::invalid(format!("MLP input width {inw} is not 2D+7")));
        }
        let shapes = [
            (l1, inw, HIDDEN1, "layer 1"),
            (l2, HIDDEN1, HIDDEN2, "layer 2"),
            (l3, HIDDEN2, OUTPUT, "layer 3"),
        ];
        for (l, fan_in, fan_out, what) in shapes {
            if l.weights.dim() != (fan_in, fan_out) {
                return Err(Error::dim(what, fan_in * fan_out, l.weights.len()));
            }
            if l.bias.len() != fan_out {
                return Err(Error::dim(what, fan_out, l.bias.len()));
            }
            if l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite("MLP parameters"));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    /// Joint count the input encoding was built for.
    pub fn dof(&self) -> usize {
        (self.input_width() - 7) / 2
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Flat parameter vector: `W1, b1, W2, b2, W3, b3`, weights row-major.
    pub fn params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dim(
                "MLP parameter vector",
                self.param_count(),
                flat.len(),
            ));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub(crate) fn check_arm(&self, arm: &ArmModel) -> Result<()> {
        if input_width(arm.dof) != self.input_width() {
            return Err(Error::dim(
                "MLP input width",
                self.input_width(),
                input_width(arm.dof),
            ));
        }
        Ok(())
    }

    /// Inverted-dropout masks for `rows` steps (entries 0 or `1/(1-p)`).
    pub(crate) fn dropout_masks(&self, rows: usize, rng: &mut Rng) -> (Array2<f64>, Array2<f64>) {
        let keep = 1.0 - self.dropout;
        let scale = 1.0 / keep;
        // keep a unit iff a uniform u32 falls below keep * 2^32
        let threshold = (keep * 4_294_967_296.0) as u64;
        let mut draw = |cols| {
            let v: Vec<f64> = (0..rows * cols)
                .map(|_| {
                    if u64::from(rng.next_u32()) < threshold {
                        scale
                    } else {
                        0.0
                    }
                })
                .collect();
            Array2::from_shape_vec((rows, cols), v).expect("mask shape")
        };
        let m1 = draw(HIDDEN1);
        let m2 = draw(HIDDEN2);
        (m1, m2)
    }

    pub(crate) fn forward(
        &self,
        u: ArrayView2<f64>,
        masks: Option<(Array2<f64>, Array2<f64>)>,
    ) -> Forward {
        let [l1, l2, l3] = &self.layers;
        let h1 = l1.apply(&u).mapv_into(tanh);
        let a1 = match &masks {
            Some((m1, _)) => &h1 * m1,
            None => h1.clone(),
        };
        let h2 = l2.apply(&a1.view()).mapv_into(tanh);
        let a2 = match &masks {
            Some((_, m2)) => &h2 * m2,
            None => h2.clone(),
        };
        let y = l3.apply(&a2.view());
        Forward {
            h1,
            a1,
            h2,
            a2,
            y,
            masks,
        }
    }

    /// Backpropagates `dy` (d loss / d y, one row per step) through the pass
    /// that consumed inputs `u`. Returns parameter gradients and, when
    /// `want_input` is set, d loss / d u.
    pub(crate) fn backward(
        &self,
        u: ArrayView2<f64>,
        fwd: &Forward,
        dy: &Array2<f64>,
        want_input: bool,
    ) -> (MlpGradient, Option<Array2<f64>>) {
        let [l1, l2, l3] = &self.layers;
        let g3 = Dense {
            weights: fwd.a2.t().dot(dy),
            bias: dy.sum_axis(Axis(0)),
        };
        let mut dz2 = dy.dot(&l3.weights.t());
        if let Some((_, m2)) = &fwd.masks {
            dz2 *= m2;
        }
        dz2.zip_mut_with(&fwd.h2, |d, &h| *d *= 1.0 - h * h);
        let g2 = Dense {
            weights: fwd.a1.t().dot(&dz2),
            bias: dz2.sum_axis(Axis(0)),
        };
        let mut dz1 = dz2.dot(&l2.weights.t());
        if let Some((m1, _)) = &fwd.masks {
            dz1 *= m1;
        }
        dz1.zip_mut_with(&fwd.h1, |d, &h| *d *= 1.0 - h * h);
        let g1 = Dense {
            weights: u.t().dot(&dz1),
            bias: dz1.sum_axis(Axis(0)),
        };
        let du = want_input.then(|| dz1.dot(&l1.weights.t()));
        (
            MlpGradient {
                layers: [g1, g2, g3],
            },
            du,
        )
    }
}

/// Network inputs for every step `t = 1..T` (zero-based), one row each.
pub fn encode_inputs(arm: &ArmModel, x: &Trajectory) -> Result<Array2<f64>> {
    x.check_arm(arm)?;
    let (len, dof) = (x.len(), x.dof());
    let width = input_width(dof);
    let mut u = Array2::zeros((len - 1, width));
    for t in 1..len {
        let mut row = u.row_mut(t - 1);
        let pose = fk_unchecked(arm, x.waypoint(t));
        for (j, &v) in x.waypoint(t).iter().enumerate() {
            row[j] = v;
        }
        for (j, &v) in x.waypoint(t - 1).iter().enumerate() {
            row[dof + j] = v;
        }
        for k in 0..3 {
            row[2 * dof + k] = pose.position[k];
            row[2 * dof + 3 + k] = pose.pointing[k];
        }
        row[width - 1] = (t + 1) as f64 / len as f64;
    }
    Ok(u)
}

/// Sum of squared norms of each row group of `rows_per` consecutive rows.
pub(crate) fn grouped_sq_norms(y: &Array2<f64>, rows_per: usize) -> Vec<f64> {
    y.axis_chunks_iter(Axis(0), rows_per)
        .map(|chunk| chunk.iter().map(|v| v * v).sum())
        .collect()
}

/// Cost and per-step outputs. With `training` set, dropout masks are drawn
/// from `rng`; otherwise `rng` is untouched.
pub fn mlp_forward(
    c: &MlpCost,
    arm: &ArmModel,
    x: &Trajectory,
    training: bool,
    rng: &mut Rng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    c.check_arm(arm)?;
    let u = encode_inputs(arm, x)?;
    let masks = training.then(|| c.dropout_masks(u.nrows(), rng));
    let fwd = c.forward(u.view(), masks);
    let cost = fwd.y.iter().map(|v| v * v).sum();
    let per_step = fwd.y.outer_iter().map(|r| r.to_vec()).collect();
    Ok((cost, per_step))
}

/// Deterministic evaluation (no dropout).
pub fn mlp_cost(c: &MlpCost, arm: &ArmModel, x: &Trajectory) -> Result<f64> {
    c.check_arm(arm)?;
    let fwd = c.forward(encode_inputs(arm, x)?.view(), None);
    Ok(fwd.y.iter().map(|v| v * v).sum())
}

/// Gradient of the (dropout-free) cost with respect to the parameters.
pub fn mlp_param_gradient(
    c: &MlpCost,
    arm: &ArmModel,
    x: &Trajectory,
) -> Result<(f64, MlpGradient)> {
    c.check_arm(arm)?;
    let u = encode_inputs(arm, x)?;
    let fwd = c.forward(u.view(), None);
    let cost = fwd.y.iter().map(|v| v * v).sum();
    let dy = &fwd.y * 2.0;
    let (g, _) = c.backward(u.view(), &fwd, &dy, false);
    Ok((cost, g))
}

/// Gradient of the (dropout-free) cost with respect to the trajectory,
/// chained through forward kinematics. Same layout as the trajectory.
pub(crate) fn mlp_trajectory_gradient(
    c: &MlpCost,
    arm: &ArmModel,
    x: &Trajectory,
) -> Result<Vec<f64>> {
    c.check_arm(arm)?;
    let u = encode_inputs(arm, x)?;
    let fwd = c.forward(u.view(), None);
    let dy = &fwd.y * 2.0;
    let (_, du) = c.backward(u.view(), &fwd, &dy, true);
    let du = du.expect("input gradient requested");
    let (len, dof) = (x.len(), x.dof());
    let mut g = vec![0.0; len * dof];
    for t in 1..len {
        let row = du.row(t - 1);
        let jac = fk_jacobian(arm, x.waypoint(t));
        for j in 0..dof {
            let mut v = row[j];
            for k in 0..3 {
                v += row[2 * dof + k] * jac.d_position[j][k];
                v += row[2 * dof + 3 + k] * jac.d_pointing[j][k];
            }
            g[t * dof + j] += v;
            g[(t - 1) * dof + j] += row[dof + j];
        }
    }
    Ok(g)
}
