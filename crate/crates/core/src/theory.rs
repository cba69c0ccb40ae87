//! Label-relevant token counting for 1D versus 2D patching.
//!
//! A series of length `k^2` is the concatenation of `k` segments, each equal
//! to one of two patterns `mu1` or `mu2` (the label-relevant one). 1D
//! patching turns every segment into one token. 2D patching reshapes the
//! series into a `k x k` matrix (one segment per row) and cuts it into `k`
//! square blocks of side `sqrt(k)`, each flattened row-major. A token is
//! label-relevant when it is at least as close to `mu2` as to `mu1`.
//!
//! Every routine here only needs ring operations and comparisons, so it is
//! generic over [`Exact`]: plug in `f64` for transcendental patterns or
//! [`Ratio`](num_rational::Ratio) for bit-exact integer ones.

use std::fmt;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::scalar::Exact;

pub type Fraction = Ratio<usize>;

/// Which pattern fills a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Arrangement(Vec<Segment>);

impl Arrangement {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self(segments)
    }

    /// Parses a string of `1`/`2` digits, e.g. `"121121121"`.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '1' => Ok(Segment::First),
                '2' => Ok(Segment::Second),
                other => Err(Error::InvalidArgument(format!(
                    "arrangement digits must be 1 or 2, found `{other}`"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// Bit `i` of `mask` set means segment `i` holds the second pattern.
    pub fn from_mask(k: usize, mask: u64) -> Self {
        Self(
            (0..k)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        Segment::Second
                    } else {
                        Segment::First
                    }
                })
                .collect(),
        )
    }

    /// Spreads `n_second` relevant segments across the row bands of the 2D
    /// grid, one band at a time, preferring rows near each band's center.
    pub fn spread(k: usize, n_second: usize) -> Result<Self> {
        let g = exact_sqrt(k)?;
        if n_second > k {
            return Err(Error::InvalidArgument(format!(
                "cannot place {n_second} segments among {k}"
            )));
        }
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by_key(|&r| ((2 * r).abs_diff(g - 1), r));
        let mut segs = vec![Segment::First; k];
        for slot in 0..n_second {
            let band = slot % g;
            let rank = slot / g;
            segs[band * g + order[rank]] = Segment::Second;
        }
        Ok(Self(segs))
    }

    pub fn segments(&self) -> &[Segment] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of segments holding the second pattern (n').
    pub fn n_second(&self) -> usize {
        self.0.iter().filter(|s| **s == Segment::Second).count()
    }
}

impl fmt::Display for Arrangement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            f.write_str(match s {
                Segment::First => "1",
                Segment::Second => "2",
            })?;
        }
        Ok(())
    }
}

pub fn exact_sqrt(k: usize) -> Result<usize> {
    let g = k.isqrt();
    if g * g != k || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "k = {k} is not a positive perfect square"
        )));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryInstance<T> {
    k: usize,
    mu1: Vec<T>,
    mu2: Vec<T>,
    arrangement: Arrangement,
}

impl<T: Exact> TheoryInstance<T> {
    pub fn new(mu1: Vec<T>, mu2: Vec<T>, arrangement: Arrangement) -> Result<Self> {
        let k = mu1.len();
        exact_sqrt(k)?;
        if mu2.len() != k || arrangement.len() != k {
            return Err(Error::Shape(format!(
                "patterns and arrangement must all have length k = {k} (got {}, {})",
                mu2.len(),
                arrangement.len()
            )));
        }
        if mu1 == mu2 {
            return Err(Error::InvalidArgument("the two patterns must differ".into()));
        }
        if arrangement.n_second() == 0 {
            return Err(Error::InvalidArgument(
                "at least one segment must hold the label-relevant pattern".into(),
            ));
        }
        Ok(Self {
            k,
            mu1,
            mu2,
            arrangement,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mu1(&self) -> &[T] {
        &self.mu1
    }

    pub fn mu2(&self) -> &[T] {
        &self.mu2
    }

    pub fn arrangement(&self) -> &Arrangement {
        &self.arrangement
    }

    pub fn n_second(&self) -> usize {
        self.arrangement.n_second()
    }

    /// Concatenation of the chosen segments, length `k^2`.
    pub fn build_series(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.k * self.k);
        for seg in self.arrangement.segments() {
            let src = match seg {
                Segment::First => &self.mu1,
                Segment::Second => &self.mu2,
            };
            out.extend(src.iter().cloned());
        }
        out
    }
}

fn check_series_len<T>(t: &[T], k: usize) -> Result<()> {
    if t.len() != k * k {
        return Err(Error::Shape(format!(
            "series length {} is not k^2 = {}",
            t.len(),
            k * k
        )));
    }
    Ok(())
}

/// `k` contiguous tokens of length `k`.
pub fn tokens_1d<T: Clone>(t: &[T], k: usize) -> Result<Vec<Vec<T>>> {
    check_series_len(t, k)?;
    Ok(t.chunks(k.max(1)).map(<[T]>::to_vec).collect())
}

/// `k` square blocks of the row-major `k x k` reshape, each flattened
/// row-major, emitted row-major over block positions.
pub fn tokens_2d<T: Clone>(t: &[T], k: usize) -> Result<Vec<Vec<T>>> {
    check_series_len(t, k)?;
    let g = exact_sqrt(k)?;
    let mut tokens = Vec::with_capacity(k);
    for bi in 0..g {
        for bj in 0..g {
            let mut tok = Vec::with_capacity(k);
            for r in bi * g..(bi + 1) * g {
                tok.extend_from_slice(&t[r * k + bj * g..r * k + (bj + 1) * g]);
            }
            tokens.push(tok);
        }
    }
    Ok(tokens)
}

/// Inverse of [`tokens_2d`].
pub fn untokenize_2d<T: Clone>(tokens: &[Vec<T>], k: usize) -> Result<Vec<T>> {
    let g = exact_sqrt(k)?;
    if tokens.len() != k || tokens.iter().any(|t| t.len() != k) {
        return Err(Error::Shape(format!("expected {k} tokens of length {k}")));
    }
    let mut slots: Vec<Option<T>> = vec![None; k * k];
    for (idx, tok) in tokens.iter().enumerate() {
        let (bi, bj) = (idx / g, idx % g);
        for (e, v) in tok.iter().enumerate() {
            let (r, c) = (bi * g + e / g, bj * g + e % g);
            slots[r * k + c] = Some(v.clone());
        }
    }
    Ok(slots.into_iter().map(|v| v.expect("every cell covered")).collect())
}

fn dot<T: Exact>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

fn sq_dist<T: Exact>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| {
        let d = x.clone() - y.clone();
        acc + d.clone() * d
    })
}

/// `||x - mu2|| <= ||x - mu1||`; ties count as relevant.
pub fn is_label_relevant<T: Exact>(x: &[T], mu1: &[T], mu2: &[T]) -> bool {
    sq_dist(x, mu2) <= sq_dist(x, mu1)
}

/// The expanded form `2 x.(mu1 - mu2) <= ||mu1||^2 - ||mu2||^2`.
pub fn satisfies_relevance_condition<T: Exact>(x: &[T], mu1: &[T], mu2: &[T]) -> bool {
    let diff: Vec<T> = mu1.iter().zip(mu2).map(|(a, b)| a.clone() - b.clone()).collect();
    let two = T::one() + T::one();
    two * dot(x, &diff) <= dot(mu1, mu1) - dot(mu2, mu2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceReport {
    pub alpha_1d: Fraction,
    pub alpha_2d: Fraction,
    /// The expanded relevance condition holds for every 2D token holding at
    /// least `sqrt(k)` elements of relevant segments.
    pub assumption_ok: bool,
    pub relevant_1d: Vec<bool>,
    pub relevant_2d: Vec<bool>,
    /// `n' mod sqrt(k) > 0`.
    pub strict_expected: bool,
}

impl RelevanceReport {
    /// Whether 2D patching does at least as well as 1D: `alpha_2d >= alpha_1d`
    /// (strictly when expected). Vacuously true without the assumption.
    pub fn consistent(&self) -> bool {
        if !self.assumption_ok {
            return true;
        }
        if self.strict_expected {
            self.alpha_2d > self.alpha_1d
        } else {
            self.alpha_2d >= self.alpha_1d
        }
    }
}

fn fraction_true(flags: &[bool]) -> Fraction {
    Fraction::new(flags.iter().filter(|&&f| f).count(), flags.len())
}

pub fn relevance_report<T: Exact>(inst: &TheoryInstance<T>) -> RelevanceReport {
    let k = inst.k;
    let g = exact_sqrt(k).expect("validated at construction");
    let series = inst.build_series();
    let t1 = tokens_1d(&series, k).expect("series has length k^2");
    let t2 = tokens_2d(&series, k).expect("series has length k^2");
    let relevant_1d: Vec<bool> = t1
        .iter()
        .map(|x| is_label_relevant(x, &inst.mu1, &inst.mu2))
        .collect();
    let relevant_2d: Vec<bool> = t2
        .iter()
        .map(|x| is_label_relevant(x, &inst.mu1, &inst.mu2))
        .collect();

    // Relevant-element count of a 2D token comes from the arrangement, not
    // from the values: each relevant row in the band contributes g elements.
    let segs = inst.arrangement.segments();
    let assumption_ok = t2.iter().enumerate().all(|(idx, tok)| {
        let band = idx / g;
        let from_second = segs[band * g..(band + 1) * g]
            .iter()
            .filter(|s| **s == Segment::Second)
            .count()
            * g;
        from_second < g || satisfies_relevance_condition(tok, &inst.mu1, &inst.mu2)
    });

    let n_second = inst.n_second();
    let alpha_1d = fraction_true(&relevant_1d);
    debug_assert_eq!(alpha_1d, Fraction::new(n_second, k));
    RelevanceReport {
        alpha_1d,
        alpha_2d: fraction_true(&relevant_2d),
        assumption_ok,
        relevant_1d,
        relevant_2d,
        strict_expected: !n_second.is_multiple_of(g),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrangementRow {
    pub arrangement: Arrangement,
    pub alpha_1d: Fraction,
    pub alpha_2d: Fraction,
    pub assumption_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceSummary {
    pub k: usize,
    pub n_second: usize,
    pub rows: Vec<ArrangementRow>,
    /// Arrangements for which the assumption holds.
    pub n_assumption_ok: usize,
    /// Extremes of `alpha_2d` over arrangements satisfying the assumption.
    pub min_alpha_2d: Option<Fraction>,
    pub max_alpha_2d: Option<Fraction>,
    pub counterexamples: Vec<Arrangement>,
}

impl BruteForceSummary {
    pub fn holds(&self) -> bool {
        self.counterexamples.is_empty()
    }

    pub fn verdict(&self) -> String {
        format!(
            "verdict: {} (k={}, n'={}, {} arrangements, {} satisfy the assumption, {} counterexamples)",
            if self.holds() { "HOLDS" } else { "VIOLATED" },
            self.k,
            self.n_second,
            self.rows.len(),
            self.n_assumption_ok,
            self.counterexamples.len()
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arrangement,alpha_1d,alpha_2d,assumption_ok\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.arrangement,
                fraction_to_f64(r.alpha_1d),
                fraction_to_f64(r.alpha_2d),
                r.assumption_ok
            ));
        }
        out
    }
}

pub fn fraction_to_f64(f: Fraction) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

/// Evaluates every placement of `n_second` relevant segments among `k`.
/// Counterexamples are collected, not raised.
pub fn brute_force_check<T: Exact>(
    k: usize,
    n_second: usize,
    mu1: &[T],
    mu2: &[T],
) -> Result<BruteForceSummary> {
    exact_sqrt(k)?;
    if k > 24 {
        return Err(Error::InvalidArgument(format!(
            "k = {k} is too large to enumerate"
        )));
    }
    if n_second == 0 || n_second > k {
        return Err(Error::InvalidArgument(format!(
            "n' must lie in 1..={k}, got {n_second}"
        )));
    }
    let mut rows = Vec::new();
    let mut counterexamples = Vec::new();
    let mut n_ok = 0;
    let mut min_a: Option<Fraction> = None;
    let mut max_a: Option<Fraction> = None;
    for mask in 0u64..(1u64 << k) {
        if mask.count_ones() as usize != n_second {
            continue;
        }
        let arrangement = Arrangement::from_mask(k, mask);
        let inst = TheoryInstance::new(mu1.to_vec(), mu2.to_vec(), arrangement.clone())?;
        let report = relevance_report(&inst);
        if report.assumption_ok {
            n_ok += 1;
            min_a = Some(min_a.map_or(report.alpha_2d, |m| m.min(report.alpha_2d)));
            max_a = Some(max_a.map_or(report.alpha_2d, |m| m.max(report.alpha_2d)));
        }
        if !report.consistent() {
            counterexamples.push(arrangement.clone());
        }
        rows.push(ArrangementRow {
            arrangement,
            alpha_1d: report.alpha_1d,
            alpha_2d: report.alpha_2d,
            assumption_ok: report.assumption_ok,
        });
    }
    Ok(BruteForceSummary {
        k,
        n_second,
        rows,
        n_assumption_ok: n_ok,
        min_alpha_2d: min_a,
        max_alpha_2d: max_a,
        counterexamples,
    })
}

/// Pattern pairs used by the examples and the CLI.
pub mod patterns {
    use super::*;

    /// `mu1 = +1`, `mu2 = -1` in any exact ring.
    pub fn constant<T: Exact>(k: usize) -> (Vec<T>, Vec<T>) {
        let one = T::one();
        let neg = T::zero() - T::one();
        (vec![one; k], vec![neg; k])
    }

    /// `mu1_j = sin(pi j / (k - 1))` sampled over `[0, pi]`, `mu2 = -mu1`.
    pub fn sine(k: usize) -> (Vec<f64>, Vec<f64>) {
        let denom = (k.max(2) - 1) as f64;
        let mu1: Vec<f64> = (0..k)
            .map(|j| (std::f64::consts::PI * j as f64 / denom).sin())
            .collect();
        let mu2 = mu1.iter().map(|v| -v).collect();
        (mu1, mu2)
    }

    /// `mu1_j = cos(pi j / (k - 1))`, `mu2 = 1`.
    pub fn cosine_vs_ones(k: usize) -> (Vec<f64>, Vec<f64>) {
        let denom = (k.max(2) - 1) as f64;
        let mu1 = (0..k)
            .map(|j| (std::f64::consts::PI * j as f64 / denom).cos())
            .collect();
        (mu1, vec![1.0; k])
    }

    /// `mu1_j = ln(1 + j)`, `mu2 = 1`.
    pub fn log_vs_ones(k: usize) -> (Vec<f64>, Vec<f64>) {
        let mu1 = (0..k).map(|j| (1.0 + j as f64).ln()).collect();
        (mu1, vec![1.0; k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    #[test]
    fn build_series_concatenates() {
        let (mu1, mu2) = patterns::constant::<i64>(4);
        let inst = TheoryInstance::new(mu1, mu2, Arrangement::parse("2111").unwrap()).unwrap();
        let t = inst.build_series();
        assert_eq!(&t[..4], &[-1, -1, -1, -1]);
        assert!(t[4..].iter().all(|&v| v == 1));
    }

    #[test]
    fn all_first_is_rejected_but_series_would_repeat() {
        let (mu1, mu2) = patterns::constant::<i64>(4);
        assert!(TheoryInstance::new(mu1, mu2, Arrangement::parse("1111").unwrap()).is_err());
    }

    #[test]
    fn invalid_instances() {
        let (mu1, mu2) = patterns::constant::<i64>(3);
        assert!(TheoryInstance::new(mu1, mu2, Arrangement::parse("211").unwrap()).is_err());
        let v = vec![1i64; 4];
        assert!(TheoryInstance::new(v.clone(), v, Arrangement::parse("2111").unwrap()).is_err());
    }

    #[test]
    fn tokens_2d_index_arithmetic() {
        let t: Vec<i32> = (1..=16).collect();
        let toks = tokens_2d(&t, 4).unwrap();
        assert_eq!(
            toks,
            vec![
                vec![1, 2, 5, 6],
                vec![3, 4, 7, 8],
                vec![9, 10, 13, 14],
                vec![11, 12, 15, 16]
            ]
        );
        assert_eq!(untokenize_2d(&toks, 4).unwrap(), t);
        assert_eq!(tokens_1d(&t, 4).unwrap()[1], vec![5, 6, 7, 8]);
    }

    #[test]
    fn k_one_degenerates() {
        let t = vec![7.0];
        assert_eq!(tokens_2d(&t, 1).unwrap(), tokens_1d(&t, 1).unwrap());
    }

    #[test]
    fn tokens_2d_requires_square_k() {
        let t = vec![0; 9 * 9];
        assert!(tokens_2d(&t, 3).is_err() || tokens_2d(&t[..9], 3).is_err());
        assert!(tokens_2d(&vec![0; 4], 2).is_err());
    }

    #[test]
    fn relevance_ties_and_identities() {
        let mu1 = [1.0, 2.0];
        let mu2 = [-1.0, 0.5];
        assert!(is_label_relevant(&mu2, &mu1, &mu2));
        assert!(!is_label_relevant(&mu1, &mu1, &mu2));
        let mid = [0.0, 1.25];
        assert!(is_label_relevant(&mid, &mu1, &mu2));
        assert!(satisfies_relevance_condition(&mid, &mu1, &mu2));
    }

    #[test]
    fn constant_k4_hand_enumeration() {
        let (mu1, mu2) = patterns::constant::<Q>(4);
        let inst = TheoryInstance::new(mu1, mu2, Arrangement::parse("2111").unwrap()).unwrap();
        let r = relevance_report(&inst);
        assert_eq!(r.alpha_1d, Fraction::new(1, 4));
        assert_eq!(r.alpha_2d, Fraction::new(1, 2));
        assert_eq!(r.relevant_2d, vec![true, true, false, false]);
        assert!(r.assumption_ok);
        assert!(r.strict_expected);
    }

    #[test]
    fn figure_instance() {
        let (mu1, mu2) = patterns::sine(9);
        let arr = Arrangement::spread(9, 3).unwrap();
        assert_eq!(arr.to_string(), "121121121");
        let inst = TheoryInstance::new(mu1, mu2, arr).unwrap();
        let r = relevance_report(&inst);
        assert_eq!(r.alpha_1d, Fraction::new(1, 3));
        assert_eq!(r.alpha_2d, Fraction::new(1, 1));
        assert!(r.assumption_ok);
    }

    #[test]
    fn every_segment_relevant() {
        let (mu1, mu2) = patterns::sine(9);
        let inst = TheoryInstance::new(mu1, mu2, Arrangement::parse("222222222").unwrap()).unwrap();
        let r = relevance_report(&inst);
        assert_eq!(r.alpha_1d, Fraction::new(1, 1));
        assert_eq!(r.alpha_2d, Fraction::new(1, 1));
    }

    #[test]
    fn brute_force_small() {
        let (mu1, mu2) = patterns::constant::<Q>(4);
        let s = brute_force_check(4, 1, &mu1, &mu2).unwrap();
        assert_eq!(s.rows.len(), 4);
        assert_eq!(s.min_alpha_2d, Some(Fraction::new(1, 2)));
        assert!(s.holds());

        let s = brute_force_check(4, 2, &mu1, &mu2).unwrap();
        assert_eq!(s.rows.len(), 6);
        assert!(s.holds());
        // two relevant rows in one band leave the other band irrelevant
        assert_eq!(s.min_alpha_2d, Some(Fraction::new(1, 2)));
    }

    #[test]
    fn spread_places_round_robin() {
        assert_eq!(Arrangement::spread(4, 1).unwrap().to_string(), "2111");
        assert_eq!(Arrangement::spread(16, 5).unwrap().n_second(), 5);
        assert!(Arrangement::spread(8, 1).is_err());
    }

    #[test]
    fn csv_and_verdict() {
        let (mu1, mu2) = patterns::constant::<i64>(4);
        let s = brute_force_check(4, 1, &mu1, &mu2).unwrap();
        let csv = s.to_csv();
        assert!(csv.starts_with("arrangement,alpha_1d,alpha_2d,assumption_ok\n"));
        assert!(csv.contains("2111,0.25,0.5,true"));
        assert!(s.verdict().starts_with("verdict: HOLDS"));
    }
}
