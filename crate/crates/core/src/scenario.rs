//! Safety / proxy / task distribution triples.
//!
//! Generated layouts use contiguous context blocks: the task support is
//! `[0, k)` and the proxy (and safety) support is `[k − m, 2k − m)` with
//! `k = ⌈N/2⌉` and `m` the number of shared contexts. The proxy is a convex
//! mixture of the safety pair with an independent noise pair, so one
//! `similarity` knob moves it along a straight path toward the safety pair.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{min_realizing_box, LogitModel};
use crate::prob::{Alphabet, Categorical, ConditionalTable};

pub const DEFAULT_FLOOR: f64 = 1e-3;

/// An input distribution with its per-context output distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionPair {
    pub d: Categorical,
    pub mu: ConditionalTable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub alphabet: Alphabet,
    pub overlap_frac: f64,
    pub similarity: f64,
    pub floor: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            alphabet: Alphabet {
                contexts: 8,
                outputs: 4,
            },
            overlap_frac: 0.5,
            similarity: 1.0,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    alphabet: Alphabet,
    seed: u64,
    overlap_frac: f64,
    similarity: f64,
    floor: f64,
    safety: DistributionPair,
    proxy: DistributionPair,
    task: DistributionPair,
}

/// `|supp(a) ∩ supp(b)| / max(1, |supp(b)|)`.
fn support_overlap(proxy: &Categorical, task: &Categorical) -> f64 {
    let task_support = task.support();
    let shared = task_support
        .iter()
        .filter(|&&x| proxy.in_support(x))
        .count();
    shared as f64 / task_support.len().max(1) as f64
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")))
    }
}

impl Scenario {
    /// Assembles and validates a scenario. The overlap fraction is always
    /// recomputed from the supports.
    pub fn new(
        seed: u64,
        similarity: f64,
        floor: f64,
        safety: DistributionPair,
        proxy: DistributionPair,
        task: DistributionPair,
    ) -> Result<Self> {
        let alphabet = Alphabet::new(safety.mu.contexts(), safety.mu.outputs())?;
        check_unit("similarity", similarity)?;
        if !(floor > 0.0 && floor < 1.0 / alphabet.outputs as f64) {
            return Err(Error::validation(
                "floor",
                format!("{floor} must lie in (0, 1/{})", alphabet.outputs),
            ));
        }
        for (name, pair) in [("safety", &safety), ("proxy", &proxy), ("task", &task)] {
            if pair.d.len() != alphabet.contexts
                || pair.mu.contexts() != alphabet.contexts
                || pair.mu.outputs() != alphabet.outputs
            {
                return Err(Error::validation(
                    name,
                    format!(
                        "shape does not match {}×{}",
                        alphabet.contexts, alphabet.outputs
                    ),
                ));
            }
            for (x, row) in pair.mu.rows().enumerate() {
                if let Some(y) = row.iter().position(|&p| p < floor * (1.0 - 1e-12)) {
                    return Err(Error::validation(
                        format!("{name}.mu[{x}][{y}]"),
                        format!("entry {} below floor {floor}", row[y]),
                    ));
                }
            }
        }
        if similarity == 1.0 && proxy != safety {
            return Err(Error::validation(
                "proxy",
                "similarity 1 requires the proxy pair to equal the safety pair",
            ));
        }
        Ok(Scenario {
            alphabet,
            seed,
            overlap_frac: support_overlap(&proxy.d, &task.d),
            similarity,
            floor,
            safety,
            proxy,
            task,
        })
    }

    /// Deterministic synthetic scenario.
    pub fn generate(seed: u64, cfg: &ScenarioConfig) -> Result<Self> {
        let Alphabet {
            contexts: n,
            outputs,
        } = Alphabet::new(cfg.alphabet.contexts, cfg.alphabet.outputs)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        check_unit("overlap_frac", cfg.overlap_frac)?;
        check_unit("similarity", cfg.similarity)?;
        let delta = cfg.floor;
        if !(delta > 0.0 && delta < 1.0 / outputs as f64) {
            return Err(Error::InvalidConfig(format!(
                "floor {delta} must lie in (0, 1/{outputs})"
            )));
        }
        let k = n.div_ceil(2);
        let shared = (cfg.overlap_frac * k as f64).round() as usize;
        if 2 * k - shared > n {
            return Err(Error::InvalidConfig(format!(
                "overlap {} infeasible with {n} contexts: two blocks of {k} must share at least {}",
                cfg.overlap_frac,
                2 * k - n
            )));
        }
        let task_block = 0..k;
        let proxy_block = (k - shared)..(2 * k - shared);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_s = random_on_block(&mut rng, n, proxy_block.clone());
        let d_f = random_on_block(&mut rng, n, task_block);
        let d_noise = random_on_block(&mut rng, n, proxy_block);
        let mu_s = random_table(&mut rng, n, outputs, delta);
        let mu_f = random_table(&mut rng, n, outputs, delta);
        let mu_noise = random_table(&mut rng, n, outputs, delta);

        let safety = DistributionPair {
            d: Categorical::new(d_s)?,
            mu: ConditionalTable::new(mu_s)?,
        };
        let proxy = if cfg.similarity == 1.0 {
            safety.clone()
        } else {
            let s = cfg.similarity;
            let d_noise = Categorical::new(d_noise)?;
            let rows = safety
                .mu
                .rows()
                .zip(&mu_noise)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(p, q)| s * p + (1.0 - s) * q)
                        .collect()
                })
                .collect();
            DistributionPair {
                d: Categorical::mixture(&safety.d, &d_noise, s)?,
                mu: ConditionalTable::new(rows)?,
            }
        };
        let task = DistributionPair {
            d: Categorical::new(d_f)?,
            mu: ConditionalTable::new(mu_f)?,
        };
        Self::new(seed, cfg.similarity, delta, safety, proxy, task)
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn overlap_frac(&self) -> f64 {
        self.overlap_frac
    }

    pub fn similarity(&self) -> f64 {
        self.similarity
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn safety(&self) -> &DistributionPair {
        &self.safety
    }

    pub fn proxy(&self) -> &DistributionPair {
        &self.proxy
    }

    pub fn task(&self) -> &DistributionPair {
        &self.task
    }

    /// Contexts in `supp(D̂) ∩ supp(D_f)`.
    pub fn shared_contexts(&self) -> Vec<usize> {
        self.task
            .d
            .support()
            .into_iter()
            .filter(|&x| self.proxy.d.in_support(x))
            .collect()
    }

    /// Smallest box half-width under which every target table (and every
    /// mixture of them) is realizable by a tabular model.
    pub fn realizing_box_bound(&self) -> f64 {
        [&self.safety.mu, &self.proxy.mu, &self.task.mu]
            .into_iter()
            .map(min_realizing_box)
            .fold(0.0, f64::max)
    }

    /// The aligned starting point `θ_s`: a tabular model reproducing `μ_s`.
    pub fn aligned_model(&self, box_bound: f64) -> Result<LogitModel> {
        LogitModel::realizing(&self.safety.mu, box_bound)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::json::write_file(path, &ScenarioFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ScenarioFile = crate::json::read_file(path)?;
        file.into_scenario()
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&ScenarioFile::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_scenario()
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn random_on_block(rng: &mut ChaCha8Rng, n: usize, block: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let start = block.start;
    for (i, p) in random_simplex(rng, block.len()).into_iter().enumerate() {
        out[start + i] = p;
    }
    out
}

/// Random rows mixed with the uniform row so every entry is at least `delta`.
fn random_table(rng: &mut ChaCha8Rng, n: usize, outputs: usize, delta: f64) -> Vec<Vec<f64>> {
    let keep = 1.0 - outputs as f64 * delta;
    (0..n)
        .map(|_| {
            random_simplex(rng, outputs)
                .into_iter()
                .map(|p| delta + keep * p)
                .collect()
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct AlphabetFile {
    contexts: usize,
    outputs: usize,
}

#[derive(Serialize, Deserialize)]
struct PairFile {
    d: Vec<f64>,
    mu: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    alphabet: AlphabetFile,
    seed: u64,
    overlap_frac: f64,
    similarity: f64,
    floor: f64,
    safety: PairFile,
    proxy: PairFile,
    task: PairFile,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let pair = |p: &DistributionPair| PairFile {
            d: p.d.probs().to_vec(),
            mu: p.mu.to_rows(),
        };
        ScenarioFile {
            alphabet: AlphabetFile {
                contexts: s.alphabet.contexts,
                outputs: s.alphabet.outputs,
            },
            seed: s.seed,
            overlap_frac: s.overlap_frac,
            similarity: s.similarity,
            floor: s.floor,
            safety: pair(&s.safety),
            proxy: pair(&s.proxy),
            task: pair(&s.task),
        }
    }
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        let alphabet = Alphabet::new(self.alphabet.contexts, self.alphabet.outputs)
            .map_err(|e| Error::validation("alphabet", e.to_string()))?;
        let pair = |name: &str, p: PairFile| -> Result<DistributionPair> {
            check_dim(alphabet.contexts, p.d.len())
                .map_err(|e| Error::validation(format!("{name}.d"), e.to_string()))?;
            check_dim(alphabet.contexts, p.mu.len())
                .map_err(|e| Error::validation(format!("{name}.mu"), e.to_string()))?;
            Ok(DistributionPair {
                d: Categorical::with_path(p.d, &format!("{name}.d"))?,
                mu: ConditionalTable::with_path(p.mu, &format!("{name}.mu"))?,
            })
        };
        let safety = pair("safety", self.safety)?;
        let proxy = pair("proxy", self.proxy)?;
        let task = pair("task", self.task)?;
        if safety.mu.outputs() != alphabet.outputs {
            return Err(Error::validation(
                "safety.mu",
                format!(
                    "rows have {} outputs, alphabet says {}",
                    safety.mu.outputs(),
                    alphabet.outputs
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap_frac) {
            return Err(Error::validation("overlap_frac", "outside [0, 1]"));
        }
        Scenario::new(self.seed, self.similarity, self.floor, safety, proxy, task)
    }
}
