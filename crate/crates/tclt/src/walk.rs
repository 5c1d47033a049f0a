//! The rotation walk: Birkhoff sums of the cocycle, the tower coding of a
//! point, the centering data and the temporal experiment with its KS verdict.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::markov::{build_markov, chain_moments, MState, MarkovArray, MarkovError, Variant};
use crate::qfield::Surd;
use crate::renorm::ParamPair;
use crate::towers::{Letter, TowerError, TowerStack};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WalkError {
    #[error("start point must lie in [−1, α₀)")]
    Domain,
    #[error("fixed-point mode needs 96 ≤ frac_bits ≤ 128 and 48 ≤ guard_bits < frac_bits")]
    Precision,
    #[error("n = {n} needs renormalization level {needed}, stack depth is {have}")]
    Depth { n: u64, needed: usize, have: usize },
    #[error("σ_N = {0} is below the positivity threshold")]
    Degenerate(f64),
    #[error("step count must be positive")]
    Empty,
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    Exact,
    FixedPoint { frac_bits: u32, guard_bits: u32 },
}

#[derive(Clone, Debug)]
pub struct WalkConfig {
    pub params: ParamPair,
    pub x: Surd,
    pub steps: usize,
    pub mode: Mode,
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), WalkError> {
        let one = Surd::one();
        if self.x < -&one || self.x >= self.params.alpha0 {
            return Err(WalkError::Domain);
        }
        if self.steps == 0 {
            return Err(WalkError::Empty);
        }
        if let Mode::FixedPoint { frac_bits, guard_bits } = self.mode {
            if !(96..=128).contains(&frac_bits) || guard_bits < 48 || guard_bits >= frac_bits {
                return Err(WalkError::Precision);
            }
        }
        Ok(())
    }
}

/// φ(y) = 1_{[−1,β₀)}(y) − c.
pub fn cocycle(params: &ParamPair, y: &Surd) -> Surd {
    let c = params.drift();
    if *y < params.beta0 {
        &Surd::one() - &c
    } else {
        -c
    }
}

/// Birkhoff sums φ_0 … φ_{n−1}, stored as hit counts: φ_k = hits[k] − k·c.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub drift: Surd,
    pub hits: Vec<u32>,
    /// comparisons re-decided in exact arithmetic
    pub escapes: u64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn sum(&self, k: usize) -> Surd {
        &Surd::int(self.hits[k]) - &(&Surd::int(k as u64) * &self.drift)
    }

    pub fn sums_f64(&self, n: usize) -> Vec<f64> {
        let c = self.drift.to_f64();
        self.hits[..n].iter().enumerate().map(|(k, h)| *h as f64 - k as f64 * c).collect()
    }
}

/// `int + frac/2^128`, enough for positions in [0, 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Fx {
    int: u64,
    frac: u128,
}

impl Fx {
    fn from_surd(v: &Surd, bits: u32) -> Fx {
        let m = v.to_fixed(bits).mantissa;
        let int = (&m >> bits as usize).to_u64().expect("non-negative position");
        let low: BigInt = &m - (BigInt::from(int) << bits as usize);
        let frac = low.to_u128().unwrap() << (128 - bits);
        Fx { int, frac }
    }

    fn add(self, o: Fx) -> Fx {
        let (frac, carry) = self.frac.overflowing_add(o.frac);
        Fx { int: self.int + o.int + carry as u64, frac }
    }

    fn sub(self, o: Fx) -> Fx {
        let (frac, borrow) = self.frac.overflowing_sub(o.frac);
        Fx { int: self.int - o.int - borrow as u64, frac }
    }

    fn dist(self, o: Fx) -> Fx {
        if self >= o {
            self.sub(o)
        } else {
            o.sub(self)
        }
    }
}

pub fn birkhoff(config: &WalkConfig) -> Result<Trace, WalkError> {
    config.validate()?;
    match config.mode {
        Mode::Exact => Ok(exact_walk(config)),
        Mode::FixedPoint { frac_bits, guard_bits } => Ok(fixed_walk(config, frac_bits, guard_bits)),
    }
}

fn exact_walk(config: &WalkConfig) -> Trace {
    let pp = &config.params;
    let mut x = config.x.clone();
    let mut hits = Vec::with_capacity(config.steps);
    let mut h = 0u32;
    for k in 0..config.steps {
        hits.push(h);
        if k + 1 == config.steps {
            break;
        }
        if x < pp.beta0 {
            h += 1;
        }
        x = pp.rotate(&x);
    }
    Trace { drift: pp.drift(), hits, escapes: 0 }
}

// In u = x + 1 the map is u < 1 ↦ u + α₀, else u − 1; only α₀ is inexact.
fn fixed_walk(config: &WalkConfig, bits: u32, guard: u32) -> Trace {
    let pp = &config.params;
    let one = Surd::one();
    let u0 = &config.x + &one;
    let step = Fx::from_surd(&pp.alpha0, bits);
    let unit = Fx { int: 1, frac: 0 };
    let target = Fx::from_surd(&(&pp.beta0 + &one), bits);
    let tol = Fx { int: 0, frac: 1u128 << (128 - guard) };
    // error of u plus error of the β threshold, in units of 2^-bits
    let budget: u128 = 1u128 << (bits - guard - 1);
    let mut u = Fx::from_surd(&u0, bits);
    let mut err: u128 = 2;
    let (mut adds, mut subs) = (0u64, 0u64);
    let exact_at = |adds: u64, subs: u64| -> Surd {
        &(&u0 + &(&Surd::int(adds) * &pp.alpha0)) - &Surd::int(subs)
    };
    let mut hits = Vec::with_capacity(config.steps);
    let mut h = 0u32;
    let mut escapes = 0u64;
    for k in 0..config.steps {
        hits.push(h);
        if k + 1 == config.steps {
            break;
        }
        let mut exact: Option<Surd> = None;
        let below_target = if u.dist(target) <= tol {
            escapes += 1;
            let e = exact.get_or_insert_with(|| exact_at(adds, subs));
            *e < &pp.beta0 + &one
        } else {
            u < target
        };
        let below_one = if u.dist(unit) <= tol {
            escapes += 1;
            let e = exact.get_or_insert_with(|| exact_at(adds, subs));
            *e < one
        } else {
            u < unit
        };
        if below_target {
            h += 1;
        }
        if below_one {
            u = u.add(step);
            adds += 1;
            err += 1;
        } else {
            u = u.sub(unit);
            subs += 1;
        }
        if err >= budget {
            u = Fx::from_surd(&exact_at(adds, subs), bits);
            err = 2;
        }
    }
    Trace { drift: pp.drift(), hits, escapes }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coding {
    /// digits[k−1] = (J_k, j_k)
    pub digits: Vec<MState>,
    /// level-0 piece containing x
    pub piece: Letter,
    /// height of x above the base of its level-`depth` tower
    pub level: BigInt,
    /// T^{−level} x, a point of I_{J_depth}⁽ᵈᵉᵖᵗʰ⁾
    pub base: Surd,
    /// some intermediate point sat exactly on a partition endpoint
    pub boundary: bool,
}

/// Tower coordinates of x up to `depth`, built bottom-up by inverting the induced maps.
pub fn code_point(stack: &TowerStack, x: &Surd, depth: usize) -> Result<Coding, WalkError> {
    if depth >= stack.depth() {
        return Err(TowerError::Depth { wanted: depth + 1, have: stack.depth() }.into());
    }
    let on_edge = |g: &crate::towers::Geometry, y: &Surd| g.pieces.iter().any(|p| p.lo == *y);
    let g0 = &stack.geometry[0];
    let mut k_letter = g0.piece_of(x).ok_or(WalkError::Domain)?;
    let mut boundary = on_edge(g0, x);
    let mut y = x.clone();
    let mut level = BigInt::zero();
    let mut digits = Vec::with_capacity(depth);
    for k in 0..depth {
        let (here, next) = (&stack.geometry[k], &stack.geometry[k + 1]);
        let mut j = 0usize;
        while !next.whole.contains(&y) {
            y = here.induced_inv(&y);
            j += 1;
        }
        let top = next.piece_of(&y).expect("landing point lies in I⁽ᵏ⁺¹⁾");
        let word = stack.subs[k].word(top);
        assert_eq!(word[j], k_letter, "coding digit inconsistent at level {k}");
        for l in &word[..j] {
            level += stack.height(k, *l);
        }
        boundary |= on_edge(next, &y);
        digits.push((top, j));
        k_letter = top;
    }
    Ok(Coding { digits, piece: g0.piece_of(x).unwrap(), level, base: y, boundary })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Centering {
    pub big_n: usize,
    pub c: Surd,
    pub level: BigInt,
}

/// N(n) and c_n(x) = φ_{l}(x′), the Birkhoff sum from the base of x's level-N tower up to x.
pub fn centering(stack: &TowerStack, x: &Surd, n: u64) -> Result<Centering, WalkError> {
    let big_n = stack.level_for(n).filter(|&k| k < stack.depth()).ok_or(WalkError::Depth {
        n,
        needed: stack.level_for(n).unwrap_or(stack.heights.len()),
        have: stack.depth(),
    })?;
    let coding = code_point(stack, x, big_n)?;
    let mut c = Surd::zero();
    for (k, (top, j)) in coding.digits.iter().enumerate() {
        for l in &stack.subs[k].word(*top)[..*j] {
            c = &c + stack.special_sum(k, *l);
        }
    }
    Ok(Centering { big_n, c, level: coding.level })
}

/// c via the backward orbit: Σ_{i=1}^{l} φ(T^{−i} x).
pub fn centering_by_orbit(params: &ParamPair, x: &Surd, level: u64) -> (Surd, Surd) {
    let mut y = x.clone();
    let mut c = Surd::zero();
    for _ in 0..level {
        y = params.rotate_inv(&y);
        c = &c + &cocycle(params, &y);
    }
    (c, y)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// sup |F_n − Φ| over a sample; sorts in place.
pub fn ks_statistic(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let f = normal_cdf(*z);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub lo: i32,
    pub hi: i32,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(bins: usize) -> Histogram {
        Histogram { lo: -5, hi: 5, counts: vec![0; bins.max(1)], below: 0, above: 0 }
    }

    pub fn width(&self) -> f64 {
        f64::from(self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn add(&mut self, v: f64) {
        if v < f64::from(self.lo) {
            self.below += 1;
        } else if v >= f64::from(self.hi) {
            self.above += 1;
        } else {
            let last = self.counts.len() - 1;
            let i = ((v - f64::from(self.lo)) / self.width()) as usize;
            self.counts[i.min(last)] += 1;
        }
    }

    pub fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    /// Bins, then `-inf` and `+inf` outlier rows whose density column holds their mass fraction.
    pub fn to_csv(&self) -> String {
        let total = self.total().max(1) as f64;
        let w = self.width();
        let mut out = String::from("bin_left,bin_right,count,density\n");
        for (i, c) in self.counts.iter().enumerate() {
            let left = f64::from(self.lo) + i as f64 * w;
            out += &format!(
                "{},{},{},{}\n",
                sig12(left),
                sig12(left + w),
                c,
                sig12(*c as f64 / (total * w))
            );
        }
        out += &format!("-inf,{},{},{}\n", sig12(f64::from(self.lo)), self.below, sig12(self.below as f64 / total));
        out += &format!("{},+inf,{},{}\n", sig12(f64::from(self.hi)), self.above, sig12(self.above as f64 / total));
        out
    }
}

/// Decimal rendering with 12 significant digits.
pub fn sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.11e}", v);
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-6..15).contains(&exp) {
        return sci;
    }
    let decimals = (11 - exp).max(0) as usize;
    let s = format!("{:.*}", decimals, mant.parse::<f64>().unwrap() * 10f64.powi(exp));
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TemporalExperiment {
    pub n: usize,
    pub big_n: usize,
    #[serde(skip)]
    pub c_n_x: Surd,
    pub e_n: f64,
    pub sigma_n: f64,
    pub variant: Variant,
    #[serde(skip)]
    pub samples: Vec<f64>,
    pub histogram: Histogram,
    pub ks: f64,
}

/// Build the chain at level N(n) and normalize the first n Birkhoff sums of a trace.
pub fn experiment_on_trace(
    stack: &TowerStack,
    x: &Surd,
    trace: &Trace,
    n: usize,
    bins: usize,
    variant: Variant,
    exact_cap: usize,
) -> Result<TemporalExperiment, WalkError> {
    assert!(n >= 1 && n <= trace.len());
    let cent = centering(stack, x, n as u64)?;
    let (e, var) = if cent.big_n == 0 {
        // a single level-0 floor: no chain, φ₀ = 0 is the only value
        (0.0, 0.0)
    } else {
        let arr: MarkovArray = build_markov(stack, cent.big_n)?;
        let m = chain_moments(&arr, variant, exact_cap);
        (m.e, m.var)
    };
    let sigma = var.max(0.0).sqrt();
    if sigma.is_nan() || sigma <= 1e-9 {
        return Err(WalkError::Degenerate(sigma));
    }
    let c = cent.c.to_f64();
    let samples: Vec<f64> = trace.sums_f64(n).into_iter().map(|s| (s - c - e) / sigma).collect();
    let mut histogram = Histogram::new(bins);
    for v in &samples {
        histogram.add(*v);
    }
    let mut sorted = samples.clone();
    let ks = ks_statistic(&mut sorted);
    Ok(TemporalExperiment {
        n,
        big_n: cent.big_n,
        c_n_x: cent.c,
        e_n: e,
        sigma_n: sigma,
        variant,
        samples,
        histogram,
        ks,
    })
}

pub fn temporal_experiment(
    stack: &TowerStack,
    config: &WalkConfig,
    bins: usize,
    variant: Variant,
    exact_cap: usize,
) -> Result<TemporalExperiment, WalkError> {
    let trace = birkhoff(config)?;
    experiment_on_trace(stack, &config.x, &trace, config.steps, bins, variant, exact_cap)
}

/// Compare the Birkhoff sums up a level-n tower with the chain's ξ-sums under μ_n^J.
pub fn tower_distribution_check(stack: &TowerStack, arr: &MarkovArray, n: usize, j: Letter) -> bool {
    let pp = &stack.params;
    let h = stack.height(n, j).to_u64().expect("small tower");
    let mut counts: BTreeMap<Surd, u64> = BTreeMap::new();
    let mut y = stack.geometry[n].piece(j).lo.clone();
    let mut sum = Surd::zero();
    for _ in 0..h {
        sum = &sum + &cocycle(pp, &y);
        *counts.entry(sum.clone()).or_default() += 1;
        y = pp.rotate(&y);
    }
    let law = arr.sum_distribution(n, Variant::Tower(j));
    let hs = Surd::int(h);
    law.len() == counts.len()
        && law.iter().all(|(v, w)| counts.get(v).is_some_and(|c| Surd::int(*c) == w * &hs))
}
