//! Exact probability primitives over finite alphabets.
//!
//! Every expectation here is a finite sum; nothing is sampled. Logarithms are
//! natural, so divergences and entropies are in nats. Total variation is half
//! the L1 distance.

use crate::error::{check_dim, Error, Result};

/// Tolerance on `|Σp − 1|` accepted by the constructors.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Sums this close to one are kept bit-for-bit; only larger drift (still
/// within [`NORMALIZATION_TOL`]) is divided out. Keeps save/load exact.
const KEEP_AS_IS_TOL: f64 = 1e-14;

/// Sizes of the context set X and output set Y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Alphabet {
    pub contexts: usize,
    pub outputs: usize,
}

impl Alphabet {
    pub fn new(contexts: usize, outputs: usize) -> Result<Self> {
        if contexts < 1 {
            return Err(Error::InvalidInput(
                "alphabet needs at least one context".into(),
            ));
        }
        if outputs < 2 {
            return Err(Error::InvalidInput(
                "alphabet needs at least two outputs".into(),
            ));
        }
        Ok(Alphabet { contexts, outputs })
    }
}

fn normalize(mut values: Vec<f64>, path: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::validation(path, "empty probability vector"));
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::validation(
                format!("{path}[{i}]"),
                format!("entry {v} is not a nonnegative finite number"),
            ));
        }
    }
    let sum: f64 = values.iter().sum();
    let drift = (sum - 1.0).abs();
    if drift > NORMALIZATION_TOL {
        return Err(Error::validation(
            path,
            format!("entries sum to {sum}, expected 1"),
        ));
    }
    if drift > KEEP_AS_IS_TOL {
        values.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(values)
}

/// A probability vector over a finite index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_path(probs, "probs")
    }

    pub(crate) fn with_path(probs: Vec<f64>, path: &str) -> Result<Self> {
        Ok(Categorical {
            probs: normalize(probs, path)?,
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("uniform over an empty set".into()));
        }
        Ok(Categorical {
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::InvalidInput(format!(
                "point mass index {at} out of range {n}"
            )));
        }
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Ok(Categorical { probs })
    }

    /// `w·a + (1−w)·b`.
    pub fn mixture(a: &Categorical, b: &Categorical, w: f64) -> Result<Self> {
        check_dim(a.len(), b.len())?;
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidInput(format!(
                "mixture weight {w} outside [0, 1]"
            )));
        }
        let probs = a
            .probs
            .iter()
            .zip(&b.probs)
            .map(|(x, y)| w * x + (1.0 - w) * y)
            .collect();
        Categorical::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Indices with strictly positive mass, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn in_support(&self, i: usize) -> bool {
        self.probs.get(i).is_some_and(|&p| p > 0.0)
    }
}

/// Row-stochastic matrix: one output distribution per context.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    contexts: usize,
    outputs: usize,
    data: Vec<f64>,
}

impl ConditionalTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_path(rows, "rows")
    }

    pub(crate) fn with_path(rows: Vec<Vec<f64>>, path: &str) -> Result<Self> {
        let contexts = rows.len();
        if contexts == 0 {
            return Err(Error::validation(path, "table has no rows"));
        }
        let outputs = rows[0].len();
        let mut data = Vec::with_capacity(contexts * outputs);
        for (x, row) in rows.into_iter().enumerate() {
            let row_path = format!("{path}[{x}]");
            if row.len() != outputs {
                return Err(Error::validation(
                    row_path,
                    format!("row has {} entries, expected {outputs}", row.len()),
                ));
            }
            data.extend(normalize(row, &row_path)?);
        }
        Ok(ConditionalTable {
            contexts,
            outputs,
            data,
        })
    }

    pub fn from_flat(contexts: usize, outputs: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(contexts * outputs, data.len())?;
        if outputs == 0 {
            return Err(Error::InvalidInput("table has no outputs".into()));
        }
        let rows = data.chunks(outputs).map(<[f64]>::to_vec).collect();
        Self::new(rows)
    }

    pub fn uniform(contexts: usize, outputs: usize) -> Result<Self> {
        if contexts == 0 || outputs == 0 {
            return Err(Error::InvalidInput(
                "uniform table needs nonzero shape".into(),
            ));
        }
        Ok(ConditionalTable {
            contexts,
            outputs,
            data: vec![1.0 / outputs as f64; contexts * outputs],
        })
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.outputs..(x + 1) * self.outputs]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.outputs)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Flat row-major view.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Half the L1 distance.
pub fn tv_distance(p: &Categorical, q: &Categorical) -> Result<f64> {
    tv_slices(p.probs(), q.probs())
}

pub fn tv_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `Σ p·ln(p/q)`, with `0·ln(0/q) = 0` and `+∞` when `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a / b).ln();
        }
    }
    // Rounding can leave a tiny negative sum for nearly equal inputs.
    Ok(total.max(0.0))
}

fn check_compatible(d: &Categorical, a: &ConditionalTable) -> Result<()> {
    check_dim(a.contexts(), d.len())
}

fn check_same_shape(a: &ConditionalTable, b: &ConditionalTable) -> Result<()> {
    check_dim(a.contexts(), b.contexts())?;
    check_dim(a.outputs(), b.outputs())
}

/// `Σ_x d(x)·TV(a(x), b(x))`.
pub fn expected_conditional_tv(
    d: &Categorical,
    a: &ConditionalTable,
    b: &ConditionalTable,
) -> Result<f64> {
    check_compatible(d, a)?;
    check_same_shape(a, b)?;
    let mut total = 0.0;
    for (x, &w) in d.probs().iter().enumerate() {
        if w > 0.0 {
            total += w * tv_slices(a.row(x), b.row(x))?;
        }
    }
    Ok(total)
}

/// `Σ_x d(x)·KL(a(x) ‖ b(x))`.
pub fn expected_conditional_kl(
    d: &Categorical,
    a: &ConditionalTable,
    b: &ConditionalTable,
) -> Result<f64> {
    check_compatible(d, a)?;
    check_same_shape(a, b)?;
    let mut total = 0.0;
    for (x, &w) in d.probs().iter().enumerate() {
        if w > 0.0 {
            total += w * kl_divergence(a.row(x), b.row(x))?;
        }
    }
    Ok(total)
}

fn neg_x_ln_y(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        if y <= 0.0 {
            f64::INFINITY
        } else {
            -x * y.ln()
        }
    } else {
        0.0
    }
}

/// `E_{x∼d, y∼mu(x)}[−ln mu(y|x)]`, the floor no model can go below.
pub fn conditional_entropy_loss(d: &Categorical, mu: &ConditionalTable) -> Result<f64> {
    expected_cross_entropy(d, mu, mu)
}

/// `E_{x∼d, y∼mu(x)}[−ln q(y|x)]`.
pub fn expected_cross_entropy(
    d: &Categorical,
    mu: &ConditionalTable,
    q: &ConditionalTable,
) -> Result<f64> {
    check_compatible(d, mu)?;
    check_same_shape(mu, q)?;
    let mut total = 0.0;
    for (x, &w) in d.probs().iter().enumerate() {
        if w > 0.0 {
            let row: f64 = mu
                .row(x)
                .iter()
                .zip(q.row(x))
                .map(|(&m, &p)| neg_x_ln_y(m, p))
                .sum();
            total += w * row;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cat(v: &[f64]) -> Categorical {
        Categorical::new(v.to_vec()).unwrap()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(
            tv_distance(&cat(&[1.0, 0.0]), &cat(&[0.0, 1.0])).unwrap(),
            1.0
        );
        let p = cat(&[0.2, 0.3, 0.5]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(
            tv_distance(&cat(&[0.5, 0.5]), &cat(&[0.9, 0.1])).unwrap(),
            0.4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn tv_rejects_mismatched_lengths() {
        let err = tv_distance(&cat(&[1.0]), &cat(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn kl_examples() {
        let p = [0.2, 0.8];
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
        // term by term: 0.1·ln(0.1/0.9) + 0.9·ln(0.9/0.1)
        let oracle = 0.1 * (0.1f64 / 0.9).ln() + 0.9 * (0.9f64 / 0.1).ln();
        assert_abs_diff_eq!(oracle, 0.8 * 9f64.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            kl_divergence(&[0.1, 0.9], &[0.9, 0.1]).unwrap(),
            oracle,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            kl_divergence(&[0.1, 0.9], &[0.9, 0.1]).unwrap(),
            1.757_779_661_8,
            epsilon = 1e-9
        );
    }

    #[test]
    fn kl_infinite_when_support_missing() {
        assert_eq!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap(),
            f64::INFINITY
        );
        assert!(kl_divergence(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn conditional_examples() {
        let a = ConditionalTable::new(vec![vec![1.0, 0.0], vec![0.3, 0.7]]).unwrap();
        let b = ConditionalTable::new(vec![vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let d0 = Categorical::point_mass(2, 0).unwrap();
        assert_eq!(expected_conditional_tv(&d0, &a, &a).unwrap(), 0.0);
        assert_eq!(expected_conditional_tv(&d0, &a, &b).unwrap(), 1.0);
        assert_eq!(expected_conditional_kl(&d0, &a, &a).unwrap(), 0.0);
        let half = ConditionalTable::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_abs_diff_eq!(
            expected_conditional_kl(&d0, &a, &half).unwrap(),
            2f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn entropy_examples() {
        let onehot = ConditionalTable::new(vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let d = Categorical::new(vec![0.4, 0.6]).unwrap();
        assert_eq!(conditional_entropy_loss(&d, &onehot).unwrap(), 0.0);
        let uni = ConditionalTable::uniform(2, 4).unwrap();
        assert_abs_diff_eq!(
            conditional_entropy_loss(&d, &uni).unwrap(),
            4f64.ln(),
            epsilon = 1e-15
        );
    }

    // Independent double-loop oracles for random 4×3 instances, written
    // without the library's helpers.
    fn oracle_instance(seed: u64) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut state = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) + 0.05
        };
        let mut norm = |n: usize| {
            let v: Vec<f64> = (0..n).map(|_| next()).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let d = norm(4);
        let a = (0..4).map(|_| norm(3)).collect();
        let b = (0..4).map(|_| norm(3)).collect();
        (d, a, b)
    }

    #[test]
    fn conditional_sums_match_double_loop_oracle() {
        for seed in 0..20 {
            let (d, a, b) = oracle_instance(seed);
            let mut tv = 0.0;
            let mut kl = 0.0;
            let mut h = 0.0;
            for x in 0..4 {
                let mut l1 = 0.0;
                for y in 0..3 {
                    l1 += (a[x][y] - b[x][y]).abs();
                    kl += d[x] * a[x][y] * (a[x][y] / b[x][y]).ln();
                    h -= d[x] * a[x][y] * a[x][y].ln();
                }
                tv += d[x] * 0.5 * l1;
            }
            let dc = Categorical::new(d).unwrap();
            let at = ConditionalTable::new(a).unwrap();
            let bt = ConditionalTable::new(b).unwrap();
            assert_abs_diff_eq!(
                expected_conditional_tv(&dc, &at, &bt).unwrap(),
                tv,
                epsilon = 1e-14
            );
            assert_abs_diff_eq!(
                expected_conditional_kl(&dc, &at, &bt).unwrap(),
                kl,
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(
                conditional_entropy_loss(&dc, &at).unwrap(),
                h,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn constructor_validation() {
        let err = ConditionalTable::new(vec![vec![0.5, 0.5], vec![0.25, 0.25]]).unwrap_err();
        assert!(err.to_string().contains("rows[1]"), "{err}");
        assert!(Categorical::new(vec![0.5, -0.1, 0.6]).is_err());
        assert!(Categorical::new(vec![f64::NAN, 1.0]).is_err());
        // within tolerance gets renormalized
        let c = Categorical::new(vec![0.5 + 4e-13, 0.5]).unwrap();
        assert_abs_diff_eq!(c.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_eq!(
            Categorical::new(vec![0.0, 0.3, 0.7]).unwrap().support(),
            vec![1, 2]
        );
        assert!(Alphabet::new(1, 1).is_err());
        assert!(Alphabet::new(0, 2).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-3).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    fn positive_simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_bounded_metric(p in simplex(5), q in simplex(5), r in simplex(5)) {
            let pq = tv_slices(&p, &q).unwrap();
            let qp = tv_slices(&q, &p).unwrap();
            let pr = tv_slices(&p, &r).unwrap();
            let rq = tv_slices(&r, &q).unwrap();
            prop_assert!((pq - qp).abs() <= 1e-12);
            prop_assert!(pq <= pr + rq + 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
            prop_assert_eq!(tv_slices(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn gibbs_and_pinsker(p in simplex(4), q in positive_simplex(4)) {
            let kl = kl_divergence(&p, &q).unwrap();
            let tv = tv_slices(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert!(kl + 1e-12 >= 2.0 * tv * tv);
            prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn expectations_are_linear_in_d(
            d1 in simplex(3), d2 in simplex(3), alpha in 0.0f64..1.0,
            a in prop::collection::vec(positive_simplex(2), 3),
            b in prop::collection::vec(positive_simplex(2), 3),
        ) {
            let at = ConditionalTable::new(a).unwrap();
            let bt = ConditionalTable::new(b).unwrap();
            let c1 = Categorical::new(d1).unwrap();
            let c2 = Categorical::new(d2).unwrap();
            let mix = Categorical::mixture(&c1, &c2, alpha).unwrap();
            for f in [expected_conditional_tv, expected_conditional_kl] {
                let lhs = f(&mix, &at, &bt).unwrap();
                let rhs = alpha * f(&c1, &at, &bt).unwrap() + (1.0 - alpha) * f(&c2, &at, &bt).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12);
            }
        }
    }
}
