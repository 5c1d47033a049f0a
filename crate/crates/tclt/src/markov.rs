//! The non-homogeneous Markov chain read off the tower stack.
//!
//! States at level k are pairs (J, j) with j < |τ_{k−1}(J)|. The chain starts at
//! level n and runs downward: p⁽ᵏ⁾ maps S_{k+1} to S_k.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::qfield::Surd;
use crate::renorm::max_bm_bp_run;
use crate::towers::{Letter, TowerStack};

pub type MState = (Letter, usize);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarkovError {
    #[error("chain level {wanted} needs a stack deeper than {have}")]
    Depth { wanted: usize, have: usize },
    #[error("matrix is not stochastic: {0}")]
    NonStochastic(String),
    #[error("block contraction {delta} ≥ 1 at block length {block_len} for bounded type {m}")]
    ContractionBound { delta: f64, block_len: usize, m: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(untagged)]
    Tower(Letter),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::Tower(j) => write!(f, "{j}"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Variant, String> {
        match s {
            "full" => Ok(Variant::Full),
            "L" => Ok(Variant::Tower(Letter::L)),
            "M" => Ok(Variant::Tower(Letter::M)),
            "S" => Ok(Variant::Tower(Letter::S)),
            _ => Err(format!("unknown variant `{s}` (full, L, M, S)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MarkovArray {
    pub stack: TowerStack,
    pub n: usize,
    /// `states[k]` is S_k; index 0 is unused
    states: Vec<Vec<MState>>,
    index: Vec<HashMap<MState, usize>>,
    /// `trans[k][row]` lists (column, p⁽ᵏ⁾) with rows in S_{k+1}, columns in S_k
    trans: Vec<Vec<Vec<(usize, Surd)>>>,
    trans_f: Vec<Vec<Vec<(usize, f64)>>>,
    xi: Vec<Vec<Surd>>,
    xi_f: Vec<Vec<f64>>,
}

pub fn build_markov(stack: &TowerStack, n: usize) -> Result<MarkovArray, MarkovError> {
    if n == 0 || n >= stack.depth() {
        return Err(MarkovError::Depth { wanted: n, have: stack.depth() });
    }
    let mut states = vec![Vec::new()];
    let mut index = vec![HashMap::new()];
    let mut xi = vec![Vec::new()];
    for k in 1..=n {
        let sub = &stack.subs[k - 1];
        let mut sk = Vec::new();
        let mut vals = Vec::new();
        for j in Letter::ALL {
            let w = sub.word(j);
            let mut acc = Surd::zero();
            for (i, l) in w.iter().enumerate() {
                let phi = stack.special_sum(k - 1, *l);
                if k == 1 {
                    acc = &acc + phi;
                    vals.push(acc.clone());
                } else {
                    vals.push(acc.clone());
                    acc = &acc + phi;
                }
                sk.push((j, i));
            }
        }
        index.push(sk.iter().enumerate().map(|(i, s)| (*s, i)).collect());
        states.push(sk);
        xi.push(vals);
    }
    let mut trans = vec![Vec::new()];
    for k in 1..n {
        let (sub_k, sub_prev) = (&stack.subs[k], &stack.subs[k - 1]);
        // every letter must occur in τ_k, so each state of S_k is reachable from above
        for l in Letter::ALL {
            assert!(
                Letter::ALL.iter().any(|j| sub_k.word(*j).contains(&l)),
                "letter {l} missing from τ_{k}"
            );
        }
        let rows = states[k + 1]
            .iter()
            .map(|&(j, i)| {
                let target = sub_k.word(j)[i];
                let denom = Surd::int(stack.height(k, target).clone());
                sub_prev
                    .word(target)
                    .iter()
                    .enumerate()
                    .map(|(kk, l)| {
                        let col = *index[k].get(&(target, kk)).expect("transition target lies in S_k");
                        (col, &Surd::int(stack.height(k - 1, *l).clone()) / &denom)
                    })
                    .collect()
            })
            .collect();
        trans.push(rows);
    }
    let trans_f = trans
        .iter()
        .map(|m: &Vec<Vec<(usize, Surd)>>| {
            m.iter().map(|row| row.iter().map(|(c, p)| (*c, p.to_f64())).collect()).collect()
        })
        .collect();
    let xi_f = xi.iter().map(|v| v.iter().map(Surd::to_f64).collect()).collect();
    Ok(MarkovArray { stack: stack.clone(), n, states, index, trans, trans_f, xi, xi_f })
}

impl MarkovArray {
    pub fn states(&self, k: usize) -> &[MState] {
        &self.states[k]
    }

    pub fn xi(&self, k: usize, s: MState) -> Option<&Surd> {
        self.index[k].get(&s).map(|&i| &self.xi[k][i])
    }

    /// p⁽ᵏ⁾ from `from` ∈ S_{k+1} to `to` ∈ S_k.
    pub fn transition(&self, k: usize, from: MState, to: MState) -> Surd {
        let (Some(&r), Some(&c)) = (self.index[k + 1].get(&from), self.index[k].get(&to)) else {
            return Surd::zero();
        };
        self.trans[k][r]
            .iter()
            .find(|(cc, _)| *cc == c)
            .map(|(_, p)| p.clone())
            .unwrap_or_else(Surd::zero)
    }

    /// Dense p⁽ᵏ⁾, rows S_{k+1}, columns S_k.
    pub fn dense(&self, k: usize) -> Vec<Vec<Surd>> {
        self.trans[k]
            .iter()
            .map(|row| {
                let mut out = vec![Surd::zero(); self.states[k].len()];
                for (c, p) in row {
                    out[*c] = p.clone();
                }
                out
            })
            .collect()
    }

    /// Initial distribution at level m ≤ n.
    pub fn initial(&self, m: usize, variant: Variant) -> Vec<Surd> {
        let st = &self.stack;
        let sub = &st.subs[m - 1];
        let scale = st.params.domain_len();
        self.states[m]
            .iter()
            .map(|&(k, i)| {
                let below = Surd::int(st.height(m - 1, sub.word(k)[i]).clone());
                match variant {
                    Variant::Full => &(&st.geometry[m].piece(k).len() * &below) / &scale,
                    Variant::Tower(j) if j == k => &below / &Surd::int(st.height(m, j).clone()),
                    Variant::Tower(_) => Surd::zero(),
                }
            })
            .collect()
    }

    /// π_m(J_m,j_m) ∏ p⁽ⁱ⁾; `word[i]` is the level-(i+1) state.
    pub fn cylinder_measure(&self, word: &[MState], variant: Variant) -> Surd {
        let m = word.len();
        assert!(m >= 1 && m <= self.n, "word length outside 1..={}", self.n);
        let Some(&top) = self.index[m].get(&word[m - 1]) else {
            return Surd::zero();
        };
        let mut w = self.initial(m, variant)[top].clone();
        for i in 1..m {
            if w.is_zero() {
                break;
            }
            w = &w * &self.transition(i, word[i], word[i - 1]);
        }
        w
    }

    /// Visit every positive-weight path from level m down to 1 with its weight and ξ-sum.
    pub fn enumerate_paths(&self, m: usize, variant: Variant, mut visit: impl FnMut(&[MState], &Surd, &Surd)) {
        let init = self.initial(m, variant);
        let mut path = vec![(Letter::L, 0); m];
        for (i, w) in init.iter().enumerate() {
            if w.is_zero() {
                continue;
            }
            self.descend(m, i, w.clone(), self.xi[m][i].clone(), &mut path, &mut visit);
        }
    }

    fn descend(
        &self,
        k: usize,
        i: usize,
        w: Surd,
        sum: Surd,
        path: &mut Vec<MState>,
        visit: &mut impl FnMut(&[MState], &Surd, &Surd),
    ) {
        path[k - 1] = self.states[k][i];
        if k == 1 {
            visit(path, &w, &sum);
            return;
        }
        for (c, p) in &self.trans[k - 1][i] {
            let s = &sum + &self.xi[k - 1][*c];
            self.descend(k - 1, *c, &w * p, s, path, visit);
        }
    }

    /// Law of Σ_{k≤m} ξ_k(X_k) by dynamic programming over levels.
    pub fn sum_distribution(&self, m: usize, variant: Variant) -> BTreeMap<Surd, Surd> {
        let mut dist: Vec<BTreeMap<Surd, Surd>> =
            self.xi[1].iter().map(|x| BTreeMap::from([(x.clone(), Surd::one())])).collect();
        for k in 2..=m {
            dist = (0..self.states[k].len())
                .map(|i| {
                    let mut acc: BTreeMap<Surd, Surd> = BTreeMap::new();
                    for (c, p) in &self.trans[k - 1][i] {
                        for (v, w) in &dist[*c] {
                            let e = acc.entry(v + &self.xi[k][i]).or_insert_with(Surd::zero);
                            *e = &*e + &(p * w);
                        }
                    }
                    acc
                })
                .collect();
        }
        let mut out: BTreeMap<Surd, Surd> = BTreeMap::new();
        for (i, pi) in self.initial(m, variant).iter().enumerate() {
            if pi.is_zero() {
                continue;
            }
            for (v, w) in &dist[i] {
                let e = out.entry(v.clone()).or_insert_with(Surd::zero);
                *e = &*e + &(pi * w);
            }
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn perturb_xi(&mut self, k: usize, i: usize, by: &Surd) {
        self.xi[k][i] = &self.xi[k][i] + by;
        self.xi_f[k][i] = self.xi[k][i].to_f64();
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub n: usize,
    pub variant: Variant,
    pub e: f64,
    pub var: f64,
    #[serde(skip)]
    pub e_exact: Option<Surd>,
    #[serde(skip)]
    pub var_exact: Option<Surd>,
    pub exact: bool,
    /// absolute error target of the floating path; zero when exact
    pub error_target: f64,
}

fn neumaier(vals: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in vals {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

/// e_m and σ_m² for every m = 1..=n in one backward pass.
///
/// g_k(s) = E[Σ_{i<k} ξ_i | X_k = s] and m_k(s) the matching second moment, so
/// E = Σ π (ξ_m + g_m), E² = Σ π (ξ_m² + 2ξ_m g_m + m_m).
pub fn moment_profile(arr: &MarkovArray, variant: Variant, exact_cap: usize) -> Vec<MomentReport> {
    if arr.n <= exact_cap {
        exact_profile(arr, variant)
    } else {
        float_profile(arr, variant)
    }
}

pub fn chain_moments(arr: &MarkovArray, variant: Variant, exact_cap: usize) -> MomentReport {
    moment_profile(arr, variant, exact_cap).pop().expect("n ≥ 1")
}

fn exact_profile(arr: &MarkovArray, variant: Variant) -> Vec<MomentReport> {
    let mut g = vec![Surd::zero(); arr.states[1].len()];
    let mut m2 = g.clone();
    let mut out = Vec::with_capacity(arr.n);
    for k in 1..=arr.n {
        if k >= 2 {
            let xi = &arr.xi[k - 1];
            let (ng, nm): (Vec<Surd>, Vec<Surd>) = arr.trans[k - 1]
                .iter()
                .map(|row| {
                    let mut a = Surd::zero();
                    let mut b = Surd::zero();
                    for (c, p) in row {
                        let x = &xi[*c];
                        a = &a + &(p * &(x + &g[*c]));
                        let sq = &(x * x) + &(&(&Surd::int(2) * x) * &g[*c]);
                        b = &b + &(p * &(&sq + &m2[*c]));
                    }
                    (a, b)
                })
                .unzip();
            g = ng;
            m2 = nm;
        }
        let pi = arr.initial(k, variant);
        let mut e = Surd::zero();
        let mut e2 = Surd::zero();
        for (i, w) in pi.iter().enumerate() {
            if w.is_zero() {
                continue;
            }
            let x = &arr.xi[k][i];
            e = &e + &(w * &(x + &g[i]));
            let sq = &(x * x) + &(&(&Surd::int(2) * x) * &g[i]);
            e2 = &e2 + &(w * &(&sq + &m2[i]));
        }
        let var = &e2 - &(&e * &e);
        out.push(MomentReport {
            n: k,
            variant,
            e: e.to_f64(),
            var: var.to_f64(),
            e_exact: Some(e),
            var_exact: Some(var),
            exact: true,
            error_target: 0.0,
        });
    }
    out
}

fn float_profile(arr: &MarkovArray, variant: Variant) -> Vec<MomentReport> {
    let mut g = vec![0.0f64; arr.states[1].len()];
    let mut m2 = g.clone();
    let mut out = Vec::with_capacity(arr.n);
    for k in 1..=arr.n {
        if k >= 2 {
            let xi = &arr.xi_f[k - 1];
            let (ng, nm): (Vec<f64>, Vec<f64>) = arr.trans_f[k - 1]
                .iter()
                .map(|row| {
                    let a = neumaier(row.iter().map(|(c, p)| p * (xi[*c] + g[*c])));
                    let b = neumaier(row.iter().map(|(c, p)| p * (xi[*c] * xi[*c] + 2.0 * xi[*c] * g[*c] + m2[*c])));
                    (a, b)
                })
                .unzip();
            g = ng;
            m2 = nm;
        }
        let pi: Vec<f64> = arr.initial(k, variant).iter().map(Surd::to_f64).collect();
        let x = &arr.xi_f[k];
        let e = neumaier(pi.iter().enumerate().map(|(i, w)| w * (x[i] + g[i])));
        let e2 = neumaier(pi.iter().enumerate().map(|(i, w)| w * (x[i] * x[i] + 2.0 * x[i] * g[i] + m2[i])));
        out.push(MomentReport {
            n: k,
            variant,
            e,
            var: (e2 - e * e).max(0.0),
            e_exact: None,
            var_exact: None,
            exact: false,
            error_target: 1e-9,
        });
    }
    out
}

/// Mean and variance from level marginals and pairwise joints; the slow, auditable route.
pub fn chain_moments_pairwise(arr: &MarkovArray, variant: Variant) -> (Surd, Surd) {
    let n = arr.n;
    let mut marg: Vec<Vec<Surd>> = vec![Vec::new(); n + 1];
    marg[n] = arr.initial(n, variant);
    for k in (1..n).rev() {
        let mut next = vec![Surd::zero(); arr.states[k].len()];
        for (r, row) in arr.trans[k].iter().enumerate() {
            for (c, p) in row {
                next[*c] = &next[*c] + &(&marg[k + 1][r] * p);
            }
        }
        marg[k] = next;
    }
    let dot = |a: &[Surd], b: &[Surd]| -> Surd { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let means: Vec<Surd> = (0..=n)
        .map(|k| if k == 0 { Surd::zero() } else { dot(&marg[k], &arr.xi[k]) })
        .collect();
    let e: Surd = means[1..].iter().sum();
    let mut var = Surd::zero();
    for i in 1..=n {
        let sq: Vec<Surd> = arr.xi[i].iter().map(|x| x * x).collect();
        var = &var + &(&dot(&marg[i], &sq) - &(&means[i] * &means[i]));
        // h = E[ξ_i(X_i) | X_j = ·], pushed up one level at a time
        let mut h = arr.xi[i].clone();
        for j in i + 1..=n {
            h = arr.trans[j - 1]
                .iter()
                .map(|row| row.iter().map(|(c, p)| p * &h[*c]).sum())
                .collect();
            let joint: Surd = (0..h.len()).map(|s| &(&marg[j][s] * &arr.xi[j][s]) * &h[s]).sum();
            let cov = &joint - &(&means[i] * &means[j]);
            var = &var + &(&Surd::int(2) * &cov);
        }
    }
    (e, var)
}

/// Dobrushin coefficient ½ max_{s,s'} Σ_t |P(s,t) − P(s',t)|.
pub fn contraction_coeff(p: &[Vec<f64>]) -> Result<f64, MarkovError> {
    for (i, row) in p.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|v| *v < 0.0) {
            return Err(MarkovError::NonStochastic(format!("row {i} sums to {s}")));
        }
    }
    let mut best = 0.0f64;
    for a in p {
        for b in p {
            let l1: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
            best = best.max(0.5 * l1);
        }
    }
    Ok(best.min(1.0))
}

pub fn contraction_coeff_exact(p: &[Vec<Surd>]) -> Result<Surd, MarkovError> {
    for (i, row) in p.iter().enumerate() {
        let s: Surd = row.iter().sum();
        if s != Surd::one() || row.iter().any(|v| v.signum() < 0) {
            return Err(MarkovError::NonStochastic(format!("row {i} sums to {s}")));
        }
    }
    let mut best = Surd::zero();
    for a in p {
        for b in p {
            let l1: Surd = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
            if l1 > best {
                best = l1;
            }
        }
    }
    Ok(&best / &Surd::int(2))
}

fn mat_mul(a: &[Vec<Surd>], b: &[Vec<Surd>]) -> Vec<Vec<Surd>> {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).filter(|(x, _)| !x.is_zero()).map(|(x, br)| x * &br[j]).sum())
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub block_len: usize,
    /// (first level k, τ(p⁽ᵏ⁺ᵇ⁻¹⁾ ⋯ p⁽ᵏ⁾))
    pub taus: Vec<(usize, f64)>,
    pub delta: f64,
    /// bounded-type order of the stack's itinerary
    pub m: usize,
    /// whether block_len ≥ 5M+1, where δ < 1 is guaranteed
    pub guaranteed: bool,
}

pub fn block_product(arr: &MarkovArray, k: usize, block_len: usize) -> Vec<Vec<Surd>> {
    let mut acc = arr.dense(k + block_len - 1);
    for j in (k..k + block_len - 1).rev() {
        acc = mat_mul(&acc, &arr.dense(j));
    }
    acc
}

pub fn block_contraction(arr: &MarkovArray, block_len: usize) -> Result<ContractionReport, MarkovError> {
    assert!(block_len >= 1);
    let taus: Vec<(usize, f64)> = (1..arr.n.saturating_sub(block_len - 1))
        .into_par_iter()
        .map(|k| {
            let prod = block_product(arr, k, block_len);
            contraction_coeff_exact(&prod).map(|t| (k, t.to_f64()))
        })
        .collect::<Result<_, _>>()?;
    let delta = taus.iter().map(|t| t.1).fold(0.0, f64::max);
    let states: Vec<_> = arr.stack.steps.iter().map(|s| s.state).collect();
    let m = max_bm_bp_run(&states).max(1);
    let guaranteed = block_len > 5 * m;
    if guaranteed && delta >= 1.0 {
        return Err(MarkovError::ContractionBound { delta, block_len, m });
    }
    Ok(ContractionReport { block_len, taus, delta, m, guaranteed })
}

/// Upper bound on the φ-mixing coefficient at a lag, from block contractions,
/// and the matching ρ bound 2√φ.
pub fn mixing_bounds(arr: &MarkovArray, lag: usize) -> Result<(f64, f64), MarkovError> {
    let phi = block_contraction(arr, lag)?.delta;
    Ok((phi, 2.0 * phi.sqrt()))
}

fn pick(cum: &[(usize, f64)], u: f64) -> usize {
    cum.iter().find(|(_, c)| u < *c).unwrap_or_else(|| cum.last().unwrap()).0
}

fn cumulative(row: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut acc = 0.0;
    row.filter(|(_, p)| *p > 0.0)
        .map(|(c, p)| {
            acc += p;
            (c, acc)
        })
        .collect()
}

/// Path sums Σ ξ_k(X_k) of `count` independent chains; sample i uses its own RNG stream.
pub fn sample_paths(arr: &MarkovArray, variant: Variant, count: usize, seed: u64) -> Vec<f64> {
    let n = arr.n;
    let top = cumulative(arr.initial(n, variant).iter().map(Surd::to_f64).enumerate());
    let rows: Vec<Vec<Vec<(usize, f64)>>> = arr
        .trans_f
        .iter()
        .map(|m| m.iter().map(|row| cumulative(row.iter().copied())).collect())
        .collect();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut s = pick(&top, rng.random::<f64>());
            let mut sum = arr.xi_f[n][s];
            for k in (1..n).rev() {
                s = pick(&rows[k][s], rng.random::<f64>());
                sum += arr.xi_f[k][s];
            }
            sum
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renorm::{renorm_orbit, to_internal};
    use crate::towers::build_stack;
    use proptest::prelude::*;

    fn sd(p: i64, q: i64, r: i64, d: u64) -> Surd {
        Surd::new(p, q, r, d).unwrap()
    }

    fn stack_for(alpha: Surd, beta: Surd, depth: usize) -> TowerStack {
        let pp = to_internal(&alpha, &beta).unwrap();
        build_stack(&renorm_orbit(&pp, depth), depth).unwrap()
    }

    fn sqrt2(depth: usize) -> TowerStack {
        stack_for(sd(-1, 1, 1, 2), Surd::rational(1, 2).unwrap(), depth)
    }

    fn golden(depth: usize) -> TowerStack {
        let a = sd(3, -1, 2, 5);
        let b = &a / &Surd::int(2);
        stack_for(a, b, depth)
    }

    const VARIANTS: [Variant; 4] = [
        Variant::Full,
        Variant::Tower(Letter::L),
        Variant::Tower(Letter::M),
        Variant::Tower(Letter::S),
    ];

    #[test]
    fn stochastic_and_normalized() {
        for stack in [sqrt2(14), golden(14)] {
            let arr = build_markov(&stack, 12).unwrap();
            for k in 1..12 {
                for row in &arr.trans[k] {
                    assert_eq!(row.iter().map(|(_, p)| p).sum::<Surd>(), Surd::one());
                }
            }
            for m in 1..=12 {
                for v in VARIANTS {
                    let pi = arr.initial(m, v);
                    assert_eq!(pi.iter().sum::<Surd>(), Surd::one());
                    if let Variant::Tower(j) = v {
                        for (s, w) in arr.states(m).iter().zip(&pi) {
                            assert!(s.0 == j || w.is_zero());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn xi_and_transition_examples() {
        let arr = build_markov(&sqrt2(6), 4).unwrap();
        let half = Surd::rational(1, 2).unwrap();
        assert_eq!(arr.xi(2, (Letter::L, 0)), Some(&Surd::zero()));
        assert_eq!(arr.xi(2, (Letter::L, 1)), Some(&half));
        // τ₂(L) = SLL, so (L,1) at level 3 points to an L tower of level 2
        let row: Surd = arr
            .states(2)
            .iter()
            .map(|t| arr.transition(2, (Letter::L, 1), *t))
            .sum();
        assert_eq!(row, Surd::one());
        assert!(!arr.transition(2, (Letter::L, 1), (Letter::L, 0)).is_zero());
        assert!(arr.transition(2, (Letter::L, 1), (Letter::S, 0)).is_zero());
    }

    #[test]
    fn cylinders_are_lebesgue() {
        let arr = build_markov(&sqrt2(8), 6).unwrap();
        let scale = arr.stack.params.domain_len();
        for m in 1..=6 {
            let mut total = Surd::zero();
            arr.enumerate_paths(m, Variant::Full, |path, w, _| {
                let top = path[m - 1].0;
                let expect = &arr.stack.geometry[m].piece(top).len() / &scale;
                assert_eq!(arr.cylinder_measure(path, Variant::Full), expect);
                assert_eq!(*w, expect);
                total = &total + w;
            });
            assert_eq!(total, Surd::one());
        }
        let bad = [(Letter::S, 0), (Letter::M, 0)];
        assert!(arr.cylinder_measure(&bad, Variant::Full).is_zero());
    }

    fn brute_moments(arr: &MarkovArray, m: usize, v: Variant) -> (Surd, Surd) {
        let (mut e, mut e2) = (Surd::zero(), Surd::zero());
        arr.enumerate_paths(m, v, |_, w, s| {
            e = &e + &(w * s);
            e2 = &e2 + &(&(w * s) * s);
        });
        let var = &e2 - &(&e * &e);
        (e, var)
    }

    #[test]
    fn moments_three_ways() {
        for stack in [sqrt2(12), golden(12)] {
            let arr = build_markov(&stack, 10).unwrap();
            for v in VARIANTS {
                let prof = moment_profile(&arr, v, 60);
                for m in 1..=10 {
                    let (e, var) = brute_moments(&arr, m, v);
                    assert_eq!(prof[m - 1].e_exact.as_ref(), Some(&e));
                    assert_eq!(prof[m - 1].var_exact.as_ref(), Some(&var));
                }
                let (e, var) = chain_moments_pairwise(&arr, v);
                assert_eq!(prof[9].e_exact.as_ref(), Some(&e));
                assert_eq!(prof[9].var_exact.as_ref(), Some(&var));
            }
        }
    }

    #[test]
    fn float_path_tracks_exact() {
        let arr = build_markov(&sqrt2(62), 60).unwrap();
        let ex = moment_profile(&arr, Variant::Full, 60);
        let fl = moment_profile(&arr, Variant::Full, 10);
        for (a, b) in ex.iter().zip(&fl) {
            assert!((a.e - b.e).abs() < 1e-9, "{} {}", a.e, b.e);
            assert!((a.var - b.var).abs() < 1e-9, "{} {}", a.var, b.var);
        }
        assert!(ex[59].var > ex[29].var && ex[29].var > ex[9].var);
    }

    #[test]
    fn contraction_examples() {
        let rank1 = vec![vec![0.2, 0.3, 0.5]; 3];
        assert_eq!(contraction_coeff(&rank1).unwrap(), 0.0);
        let perm = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        assert_eq!(contraction_coeff(&perm).unwrap(), 1.0);
        assert!(contraction_coeff(&[vec![0.5, 0.4]]).is_err());
        let arr = build_markov(&sqrt2(20), 18).unwrap();
        let rep = block_contraction(&arr, 6).unwrap();
        assert!(rep.delta < 1.0);
        assert_eq!(rep.m, 1);
        let mut prev = 1.0;
        for b in 1..8 {
            let d = block_contraction(&arr, b).unwrap().delta;
            assert!(d <= prev + 1e-12);
            prev = d;
        }
    }

    #[test]
    fn one_step_b_minus_can_be_non_contracting() {
        let arr = build_markov(&sqrt2(6), 4).unwrap();
        // level 1 is B− for this pair: rows of p⁽¹⁾ land on disjoint supports
        let t = contraction_coeff_exact(&arr.dense(1)).unwrap();
        assert_eq!(t, Surd::one());
    }

    #[test]
    fn sampling_is_deterministic_and_centred() {
        let arr = build_markov(&sqrt2(22), 20).unwrap();
        let a = sample_paths(&arr, Variant::Full, 20_000, 9);
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sample_paths(&arr, Variant::Full, 20_000, 9));
        assert_eq!(a, b);
        assert!(sample_paths(&arr, Variant::Full, 0, 9).is_empty());
        let mom = chain_moments(&arr, Variant::Full, 60);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let se = (mom.var / a.len() as f64).sqrt();
        assert!((mean - mom.e).abs() < 5.0 * se, "{mean} vs {}", mom.e);
    }

    #[test]
    fn mutation_changes_distribution() {
        let mut arr = build_markov(&sqrt2(8), 5).unwrap();
        let before = arr.sum_distribution(5, Variant::Full);
        arr.perturb_xi(3, 0, &Surd::rational(1, 7).unwrap());
        assert_ne!(before, arr.sum_distribution(5, Variant::Full));
    }

    fn stochastic(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), n).prop_map(|m| {
            m.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn submultiplicative(p in stochastic(4), q in stochastic(4)) {
            let pq: Vec<Vec<f64>> = p.iter().map(|row| (0..4).map(|j| (0..4).map(|k| row[k] * q[k][j]).sum()).collect()).collect();
            let (tp, tq, tpq) = (contraction_coeff(&p).unwrap(), contraction_coeff(&q).unwrap(), contraction_coeff(&pq).unwrap());
            prop_assert!(tpq <= tp * tq + 1e-12);
            prop_assert!((0.0..=1.0).contains(&tp));
        }
    }
}
