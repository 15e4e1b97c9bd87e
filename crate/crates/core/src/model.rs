//! Softmax conditional models `P_θ(y|x)` over a finite alphabet.
//!
//! Two parameterizations share one flat parameter vector:
//!
//! * **tabular**: one free logit per `(x, y)`, clamped to `[−B, B]`. The box
//!   is the constraint set `Θ`, and it gives the uniform log-probability bound
//!   `|ln P_θ(y|x)| ≤ 2B + ln|Y|`.
//! * **low-rank**: logits are `U·Vᵀ` with `U: contexts×r`, `V: outputs×r`,
//!   stored as `U` then `V`, both row-major. No box is enforced.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::prob::{Alphabet, Categorical, ConditionalTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Tabular,
    LowRank { rank: usize },
}

/// Uniform bound on `|ln P_θ(y|x)|` over the constraint set, in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PenaltyConstant(f64);

impl PenaltyConstant {
    pub fn value(self) -> f64 {
        self.0
    }

    /// For tests and hand-built bounds; the model-derived value comes from
    /// [`LogitModel::penalty_constant`].
    pub fn from_value(c_p: f64) -> Result<Self> {
        if c_p > 0.0 && c_p.is_finite() {
            Ok(PenaltyConstant(c_p))
        } else {
            Err(Error::InvalidInput(format!(
                "penalty constant {c_p} must be positive"
            )))
        }
    }
}

/// Per-`(x, y)` weights `W` of a loss `−Σ W(x,y)·ln P_θ(y|x)`.
///
/// A sum of `scale·d(x)·mu(y|x)` terms; lets one pass evaluate penalized
/// objectives such as task loss plus `λ` times proxy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    contexts: usize,
    outputs: usize,
    w: Vec<f64>,
}

impl LossWeights {
    pub fn zeros(alphabet: Alphabet) -> Self {
        LossWeights {
            contexts: alphabet.contexts,
            outputs: alphabet.outputs,
            w: vec![0.0; alphabet.contexts * alphabet.outputs],
        }
    }

    pub fn single(d: &Categorical, mu: &ConditionalTable) -> Result<Self> {
        let alphabet = Alphabet {
            contexts: mu.contexts(),
            outputs: mu.outputs(),
        };
        let mut out = Self::zeros(alphabet);
        out.add(1.0, d, mu)?;
        Ok(out)
    }

    pub fn add(&mut self, scale: f64, d: &Categorical, mu: &ConditionalTable) -> Result<&mut Self> {
        check_dim(self.contexts, d.len())?;
        check_dim(self.contexts, mu.contexts())?;
        check_dim(self.outputs, mu.outputs())?;
        for (x, &dx) in d.probs().iter().enumerate() {
            if dx == 0.0 {
                continue;
            }
            let row = &mut self.w[x * self.outputs..(x + 1) * self.outputs];
            for (slot, &m) in row.iter_mut().zip(mu.row(x)) {
                *slot += scale * dx * m;
            }
        }
        Ok(self)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.w
    }

    /// Total weight on context `x`.
    pub fn context_mass(&self, x: usize) -> f64 {
        self.w[x * self.outputs..(x + 1) * self.outputs]
            .iter()
            .sum()
    }

    /// `−Σ W·ln q` for an explicit table `q`.
    pub fn loss_of_table(&self, q: &ConditionalTable) -> Result<f64> {
        check_dim(self.w.len(), q.as_flat().len())?;
        Ok(self
            .w
            .iter()
            .zip(q.as_flat())
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &p)| if p > 0.0 { -w * p.ln() } else { f64::INFINITY })
            .sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitModel {
    alphabet: Alphabet,
    box_bound: f64,
    variant: Variant,
    params: Vec<f64>,
}

fn check_box_bound(b: f64) -> Result<()> {
    if b >= 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "box bound {b} must be finite and nonnegative"
        )))
    }
}

fn check_finite(params: &[f64]) -> Result<()> {
    match params.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!("parameter {i} is not finite"))),
        None => Ok(()),
    }
}

/// In-place log-softmax of one row.
fn log_softmax(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|z| *z -= lse);
}

/// Smallest box half-width whose midrange-centred log rows realize `table`.
pub fn min_realizing_box(table: &ConditionalTable) -> f64 {
    table
        .rows()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            0.5 * (max.ln() - min.ln())
        })
        .fold(0.0, f64::max)
}

impl LogitModel {
    pub fn tabular(alphabet: Alphabet, box_bound: f64, logits: Vec<f64>) -> Result<Self> {
        check_box_bound(box_bound)?;
        check_dim(alphabet.contexts * alphabet.outputs, logits.len())?;
        check_finite(&logits)?;
        Ok(LogitModel {
            alphabet,
            box_bound,
            variant: Variant::Tabular,
            params: logits,
        })
    }

    pub fn zeros(alphabet: Alphabet, box_bound: f64) -> Result<Self> {
        Self::tabular(
            alphabet,
            box_bound,
            vec![0.0; alphabet.contexts * alphabet.outputs],
        )
    }

    /// Low-rank model from factors `u` (`contexts×rank`) and `v` (`outputs×rank`).
    pub fn low_rank(
        alphabet: Alphabet,
        rank: usize,
        box_bound: f64,
        u: Vec<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidInput("rank must be at least 1".into()));
        }
        check_box_bound(box_bound)?;
        check_dim(alphabet.contexts * rank, u.len())?;
        check_dim(alphabet.outputs * rank, v.len())?;
        let mut params = u;
        params.extend(v);
        check_finite(&params)?;
        Ok(LogitModel {
            alphabet,
            box_bound,
            variant: Variant::LowRank { rank },
            params,
        })
    }

    /// Tabular model reproducing `table` exactly: each row is `ln table(·|x)`
    /// shifted to midrange zero. Fails when that row does not fit `[−B, B]`.
    pub fn realizing(table: &ConditionalTable, box_bound: f64) -> Result<Self> {
        check_box_bound(box_bound)?;
        if table.min_entry() <= 0.0 {
            return Err(Error::InvalidInput(
                "table has zero entries; no finite logits realize it".into(),
            ));
        }
        let mut logits = Vec::with_capacity(table.as_flat().len());
        for (x, row) in table.rows().enumerate() {
            let logs: Vec<f64> = row.iter().map(|p| p.ln()).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = logs.iter().copied().fold(f64::INFINITY, f64::min);
            let mid = 0.5 * (max + min);
            if 0.5 * (max - min) > box_bound * (1.0 + 1e-12) {
                return Err(Error::InvalidInput(format!(
                    "row {x} needs box half-width {} > {box_bound}",
                    0.5 * (max - min)
                )));
            }
            logits.extend(logs.iter().map(|l| (l - mid).clamp(-box_bound, box_bound)));
        }
        let alphabet = Alphabet::new(table.contexts(), table.outputs())?;
        Self::tabular(alphabet, box_bound, logits)
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn box_bound(&self) -> f64 {
        self.box_bound
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_dim(&self) -> usize {
        self.params.len()
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        check_dim(self.params.len(), params.len())?;
        check_finite(&params)?;
        Ok(LogitModel {
            params,
            ..self.clone()
        })
    }

    pub(crate) fn set_params_unchecked(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    pub fn is_in_box(&self) -> bool {
        match self.variant {
            Variant::Tabular => self.params.iter().all(|z| z.abs() <= self.box_bound),
            Variant::LowRank { .. } => true,
        }
    }

    /// Full `contexts × outputs` logit matrix, row-major.
    pub fn logits(&self) -> Vec<f64> {
        let Alphabet { contexts, outputs } = self.alphabet;
        match self.variant {
            Variant::Tabular => self.params.clone(),
            Variant::LowRank { rank } => {
                let (u, v) = self.params.split_at(contexts * rank);
                let mut z = vec![0.0; contexts * outputs];
                for x in 0..contexts {
                    let ux = &u[x * rank..(x + 1) * rank];
                    for y in 0..outputs {
                        let vy = &v[y * rank..(y + 1) * rank];
                        z[x * outputs + y] = ux.iter().zip(vy).map(|(a, b)| a * b).sum();
                    }
                }
                z
            }
        }
    }

    /// Flat `ln P_θ(y|x)` for every pair.
    pub fn log_probs(&self) -> Vec<f64> {
        let mut z = self.logits();
        z.chunks_mut(self.alphabet.outputs).for_each(log_softmax);
        z
    }

    pub fn forward(&self, x: usize) -> Result<Vec<f64>> {
        if x >= self.alphabet.contexts {
            return Err(Error::InvalidInput(format!(
                "context {x} out of range {}",
                self.alphabet.contexts
            )));
        }
        let outputs = self.alphabet.outputs;
        let mut row = self.logits()[x * outputs..(x + 1) * outputs].to_vec();
        log_softmax(&mut row);
        row.iter_mut().for_each(|l| *l = l.exp());
        Ok(row)
    }

    pub fn probs_table(&self) -> ConditionalTable {
        let p: Vec<f64> = self.log_probs().into_iter().map(f64::exp).collect();
        let outputs = self.alphabet.outputs;
        let rows = p.chunks(outputs).map(<[f64]>::to_vec).collect();
        ConditionalTable::new(rows).expect("softmax rows are normalized")
    }

    pub fn expected_nll(&self, d: &Categorical, mu: &ConditionalTable) -> Result<f64> {
        self.check_alphabet(mu)?;
        Ok(self.weighted_loss(&LossWeights::single(d, mu)?))
    }

    pub fn nll_gradient(&self, d: &Categorical, mu: &ConditionalTable) -> Result<Vec<f64>> {
        self.check_alphabet(mu)?;
        Ok(self.weighted_loss_grad(&LossWeights::single(d, mu)?).1)
    }

    fn check_alphabet(&self, mu: &ConditionalTable) -> Result<()> {
        check_dim(self.alphabet.contexts, mu.contexts())?;
        check_dim(self.alphabet.outputs, mu.outputs())
    }

    /// `−Σ W(x,y)·ln P_θ(y|x)`.
    pub fn weighted_loss(&self, weights: &LossWeights) -> f64 {
        self.log_probs()
            .iter()
            .zip(weights.as_flat())
            .filter(|(_, &w)| w != 0.0)
            .map(|(lp, w)| -w * lp)
            .sum()
    }

    /// Loss and its gradient with respect to the flat parameter vector.
    pub fn weighted_loss_grad(&self, weights: &LossWeights) -> (f64, Vec<f64>) {
        let Alphabet { contexts, outputs } = self.alphabet;
        let log_p = self.log_probs();
        let w = weights.as_flat();
        let mut loss = 0.0;
        // d loss / d z(x,y) = (Σ_y' W(x,y'))·P(y|x) − W(x,y)
        let mut grad_z = vec![0.0; contexts * outputs];
        for x in 0..contexts {
            let span = x * outputs..(x + 1) * outputs;
            let mass: f64 = w[span.clone()].iter().sum();
            if mass == 0.0 {
                continue;
            }
            for i in span {
                if w[i] != 0.0 {
                    loss -= w[i] * log_p[i];
                }
                grad_z[i] = mass * log_p[i].exp() - w[i];
            }
        }
        let grad = match self.variant {
            Variant::Tabular => grad_z,
            Variant::LowRank { rank } => {
                let (u, v) = self.params.split_at(contexts * rank);
                let mut g = vec![0.0; self.params.len()];
                let (gu, gv) = g.split_at_mut(contexts * rank);
                for x in 0..contexts {
                    for y in 0..outputs {
                        let gz = grad_z[x * outputs + y];
                        if gz == 0.0 {
                            continue;
                        }
                        for k in 0..rank {
                            gu[x * rank + k] += gz * v[y * rank + k];
                            gv[y * rank + k] += gz * u[x * rank + k];
                        }
                    }
                }
                g
            }
        };
        (loss, grad)
    }

    /// Entrywise clamp to `[−B, B]`.
    pub fn project_box(&self) -> Result<Self> {
        match self.variant {
            Variant::Tabular => {
                let mut out = self.clone();
                clamp_in_place(&mut out.params, self.box_bound);
                Ok(out)
            }
            Variant::LowRank { .. } => Err(Error::Unsupported(
                "box projection is only defined for tabular models".into(),
            )),
        }
    }

    /// `C_p = 2B + ln|Y|`.
    pub fn penalty_constant(&self) -> Result<PenaltyConstant> {
        match self.variant {
            Variant::Tabular => Ok(PenaltyConstant(
                2.0 * self.box_bound + (self.alphabet.outputs as f64).ln(),
            )),
            Variant::LowRank { .. } => Err(Error::Unsupported(
                "low-rank models have no uniform log-probability bound".into(),
            )),
        }
    }
}

pub(crate) fn clamp_in_place(params: &mut [f64], bound: f64) {
    params.iter_mut().for_each(|z| *z = z.clamp(-bound, bound));
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    variant: String,
    #[serde(rename = "B")]
    box_bound: f64,
    shape: [usize; 2],
    params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
}

impl Serialize for LogitModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (variant, rank) = match self.variant {
            Variant::Tabular => ("tabular", None),
            Variant::LowRank { rank } => ("low_rank", Some(rank)),
        };
        ModelFile {
            variant: variant.into(),
            box_bound: self.box_bound,
            shape: [self.alphabet.contexts, self.alphabet.outputs],
            params: self.params.clone(),
            rank,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LogitModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let f = ModelFile::deserialize(d)?;
        let alphabet = Alphabet::new(f.shape[0], f.shape[1]).map_err(D::Error::custom)?;
        match (f.variant.as_str(), f.rank) {
            ("tabular", _) => LogitModel::tabular(alphabet, f.box_bound, f.params),
            ("low_rank", Some(rank)) => {
                let split = alphabet.contexts * rank;
                if f.params.len() < split {
                    return Err(D::Error::custom("low-rank params shorter than U factor"));
                }
                let mut u = f.params;
                let v = u.split_off(split);
                LogitModel::low_rank(alphabet, rank, f.box_bound, u, v)
            }
            ("low_rank", None) => return Err(D::Error::custom("low_rank model needs `rank`")),
            (other, _) => return Err(D::Error::custom(format!("unknown variant `{other}`"))),
        }
        .map_err(D::Error::custom)
    }
}
