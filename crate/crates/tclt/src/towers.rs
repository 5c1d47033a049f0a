//! Cutting and stacking: substitutions, incidence matrices, heights,
//! special Birkhoff sums and the geometry of the inducing intervals.

use std::fmt;

use num_bigint::BigInt;
use num_traits::One;
use serde::Serialize;

use crate::qfield::Surd;
use crate::renorm::{renorm_orbit, ParamPair, RenormOrbit, RenormStep, State};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Letter {
    L,
    M,
    S,
}

impl Letter {
    pub const ALL: [Letter; 3] = [Letter::L, Letter::M, Letter::S];

    pub fn idx(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Letter::L => "L",
            Letter::M => "M",
            Letter::S => "S",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TowerError {
    #[error("the expansion of β₀ terminates at level {0} (coboundary)")]
    Coboundary(usize),
    #[error("requested depth {wanted} exceeds available depth {have}")]
    Depth { wanted: usize, have: usize },
    #[error("first return not seen within {0} steps")]
    Horizon(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Substitution {
    pub words: [Vec<Letter>; 3],
}

impl Substitution {
    pub fn word(&self, j: Letter) -> &[Letter] {
        &self.words[j.idx()]
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, j) in Letter::ALL.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{j}→")?;
            for l in self.word(*j) {
                write!(f, "{l}")?;
            }
        }
        Ok(())
    }
}

pub fn substitution_for(state: State, a: u64, b: u64) -> Substitution {
    use Letter::*;
    let rep = |l: Letter, k: u64| std::iter::repeat_n(l, k as usize);
    let cat = |parts: Vec<Vec<Letter>>| parts.concat();
    let words = match state {
        State::G => [
            cat(vec![vec![S], rep(L, b - 1).collect(), rep(M, a - b + 1).collect()]),
            cat(vec![vec![S], rep(L, b).collect(), rep(M, a - b).collect()]),
            vec![M],
        ],
        State::BMinus => [cat(vec![vec![S], rep(L, a).collect()]), vec![M], vec![L]],
        State::BPlus => [
            cat(vec![vec![S], rep(L, a).collect()]),
            cat(vec![vec![M], rep(L, a).collect()]),
            vec![L],
        ],
    };
    Substitution { words }
}

pub fn substitution_of(step: &RenormStep) -> Substitution {
    substitution_for(step.state, step.a_n, step.b_n)
}

pub type Incidence = [[u64; 3]; 3];

pub fn incidence_of(sub: &Substitution) -> Incidence {
    let mut m = [[0u64; 3]; 3];
    for j in Letter::ALL {
        for l in sub.word(j) {
            m[j.idx()][l.idx()] += 1;
        }
    }
    m
}

/// Closed-left, open-right interval `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interval {
    pub lo: Surd,
    pub hi: Surd,
}

impl Interval {
    pub fn contains(&self, x: &Surd) -> bool {
        self.lo <= *x && *x < self.hi
    }

    pub fn len(&self) -> Surd {
        &self.hi - &self.lo
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub n: usize,
    /// I⁽ⁿ⁾
    pub whole: Interval,
    /// I_L⁽ⁿ⁾, I_M⁽ⁿ⁾, I_S⁽ⁿ⁾
    pub pieces: [Interval; 3],
    pub odd: bool,
}

impl Geometry {
    pub fn piece(&self, j: Letter) -> &Interval {
        &self.pieces[j.idx()]
    }

    pub fn piece_of(&self, x: &Surd) -> Option<Letter> {
        Letter::ALL.into_iter().find(|j| self.piece(*j).contains(x))
    }

    /// First-return map of the rotation to I⁽ⁿ⁾: a rotation of I⁽ⁿ⁾ itself.
    pub fn induced(&self, y: &Surd) -> Surd {
        if y.signum() < 0 {
            y + &self.whole.hi
        } else {
            y + &self.whole.lo
        }
    }

    pub fn induced_inv(&self, y: &Surd) -> Surd {
        if *y >= &self.whole.lo + &self.whole.hi {
            y - &self.whole.hi
        } else {
            y - &self.whole.lo
        }
    }
}

/// Level-n geometry; pieces are ψ_n(x) = (−1)ⁿ α⁽ⁿ⁻¹⁾ x of the rescaled partition.
pub fn geometry_at(step: &RenormStep) -> Geometry {
    let n = step.n;
    let one = Surd::one();
    let zero = Surd::zero();
    let odd = n % 2 == 1;
    let scale = if odd { -&step.alpha_prod_prev } else { step.alpha_prod_prev.clone() };
    let rescaled = match step.state {
        State::BPlus => [
            (-&one, zero.clone()),
            (zero.clone(), step.beta_n.clone()),
            (step.beta_n.clone(), step.alpha_n.clone()),
        ],
        State::G | State::BMinus => [
            (-&one, step.beta_n.clone()),
            (step.beta_n.clone(), zero.clone()),
            (zero.clone(), step.alpha_n.clone()),
        ],
    };
    let pieces = rescaled.map(|(u, v)| {
        let (a, b) = (&scale * &u, &scale * &v);
        if a <= b {
            Interval { lo: a, hi: b }
        } else {
            Interval { lo: b, hi: a }
        }
    });
    let whole = if odd {
        Interval { lo: -&step.alpha_prod, hi: step.alpha_prod_prev.clone() }
    } else {
        Interval { lo: -&step.alpha_prod_prev, hi: step.alpha_prod.clone() }
    };
    Geometry { n, whole, pieces, odd }
}

#[derive(Clone, Debug)]
pub struct TowerStack {
    pub params: ParamPair,
    pub steps: Vec<RenormStep>,
    /// τ_n, n < depth
    pub subs: Vec<Substitution>,
    pub incidence: Vec<Incidence>,
    /// h⁽ⁿ⁾, n ≤ depth
    pub heights: Vec<[BigInt; 3]>,
    /// φ⁽ⁿ⁾, n ≤ depth
    pub phi: Vec<[Surd; 3]>,
    /// geometry of level n, n < depth
    pub geometry: Vec<Geometry>,
}

pub fn build_stack(orbit: &RenormOrbit, depth: usize) -> Result<TowerStack, TowerError> {
    if depth > orbit.depth() {
        return Err(match orbit.coboundary {
            Some(n) => TowerError::Coboundary(n),
            None => TowerError::Depth { wanted: depth, have: orbit.depth() },
        });
    }
    let params = orbit.params.clone();
    let steps = orbit.steps[..depth].to_vec();
    let c = params.drift();
    let one = Surd::one();
    let hit = &one - &c;
    let miss = -&c;
    let phi0 = match steps.first().map(|s| s.state) {
        Some(State::BPlus) => [hit.clone(), hit, miss],
        _ => [hit, miss.clone(), miss],
    };
    let mut heights = vec![[BigInt::one(), BigInt::one(), BigInt::one()]];
    let mut phi = vec![phi0];
    let mut subs = Vec::with_capacity(depth);
    let mut incidence = Vec::with_capacity(depth);
    for step in &steps {
        let sub = substitution_of(step);
        let (h, f) = (heights.last().unwrap(), phi.last().unwrap());
        let nh = Letter::ALL.map(|j| sub.word(j).iter().map(|l| &h[l.idx()]).sum::<BigInt>());
        let nf = Letter::ALL.map(|j| sub.word(j).iter().map(|l| &f[l.idx()]).sum::<Surd>());
        heights.push(nh);
        phi.push(nf);
        incidence.push(incidence_of(&sub));
        subs.push(sub);
    }
    let geometry = steps.iter().map(geometry_at).collect();
    Ok(TowerStack { params, steps, subs, incidence, heights, phi, geometry })
}

impl TowerStack {
    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn height(&self, n: usize, j: Letter) -> &BigInt {
        &self.heights[n][j.idx()]
    }

    pub fn special_sum(&self, n: usize, j: Letter) -> &Surd {
        &self.phi[n][j.idx()]
    }

    /// Σ_J |I_J⁽ⁿ⁾| φ_J⁽ⁿ⁾, which vanishes for a mean-zero cocycle.
    pub fn conservation(&self, n: usize) -> Surd {
        Letter::ALL
            .iter()
            .map(|j| &self.geometry[n].piece(*j).len() * self.special_sum(n, *j))
            .sum()
    }

    /// N(n) = min{k : n ≤ h_S⁽ᵏ⁾}, when within the stack.
    pub fn level_for(&self, n: u64) -> Option<usize> {
        let n = BigInt::from(n);
        self.heights.iter().position(|h| n <= h[Letter::S.idx()])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FirstReturn {
    pub heights: [u64; 3],
    pub constant_on_pieces: bool,
}

/// Measure first-return times to I⁽ⁿ⁾ by running the rotation from probes in each piece.
pub fn first_return_oracle(params: &ParamPair, n: usize) -> Result<FirstReturn, TowerError> {
    let orbit = renorm_orbit(params, n + 1);
    if orbit.depth() <= n {
        return Err(TowerError::Coboundary(orbit.coboundary.unwrap_or(n)));
    }
    let geo = geometry_at(&orbit.steps[n]);
    let horizon: u64 = 50_000_000;
    let mut heights = [0u64; 3];
    let mut constant = true;
    for j in Letter::ALL {
        let piece = geo.piece(j);
        let width = piece.len();
        let mut seen = None;
        for k in 0..7 {
            let probe = &piece.lo + &(&width * &Surd::rational(k, 7).unwrap());
            let mut x = params.rotate(&probe);
            let mut t = 1u64;
            while !geo.whole.contains(&x) {
                x = params.rotate(&x);
                t += 1;
                if t > horizon {
                    return Err(TowerError::Horizon(horizon));
                }
            }
            match seen {
                None => seen = Some(t),
                Some(s) if s != t => constant = false,
                _ => {}
            }
        }
        heights[j.idx()] = seen.unwrap();
    }
    Ok(FirstReturn { heights, constant_on_pieces: constant })
}

pub const F_G: [[u8; 3]; 3] = [[0, 1, 1], [1, 0, 1], [0, 1, 0]];
pub const F_BMINUS: [[u8; 3]; 3] = [[1, 0, 1], [0, 1, 0], [1, 0, 0]];
pub const F_BPLUS: [[u8; 3]; 3] = [[1, 0, 1], [1, 1, 0], [1, 0, 0]];

pub fn sign_pattern(state: State) -> [[u8; 3]; 3] {
    match state {
        State::G => F_G,
        State::BMinus => F_BMINUS,
        State::BPlus => F_BPLUS,
    }
}

fn mat_mul(a: &[[u64; 3]; 3], b: &[[u64; 3]; 3]) -> [[u64; 3]; 3] {
    let mut c = [[0u64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] = c[i][j].saturating_add(a[i][k].saturating_mul(b[k][j]));
            }
        }
    }
    c
}

fn positive(m: &[[u64; 3]; 3]) -> bool {
    m.iter().flatten().all(|&v| v > 0)
}

/// `M_{k+w−1} ⋯ M_k`
fn window_product(mats: &[[[u64; 3]; 3]]) -> [[u64; 3]; 3] {
    let mut acc = mats[0];
    for m in &mats[1..] {
        acc = mat_mul(m, &acc);
    }
    acc
}

pub fn f_product_positive(states: &[State]) -> bool {
    let mats: Vec<[[u64; 3]; 3]> = states
        .iter()
        .map(|s| sign_pattern(*s).map(|row| row.map(u64::from)))
        .collect();
    positive(&window_product(&mats))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WindowCheck {
    pub start: usize,
    pub f_positive: bool,
    pub a_positive: bool,
}

/// Entries are `(state, a_n, b_n)`.
pub fn window_positivity(word: &[(State, u64, u64)], window: usize) -> Vec<WindowCheck> {
    if window == 0 || word.len() < window {
        return Vec::new();
    }
    let incid: Vec<Incidence> = word
        .iter()
        .map(|&(s, a, b)| incidence_of(&substitution_for(s, a, b)))
        .collect();
    let states: Vec<State> = word.iter().map(|w| w.0).collect();
    (0..=word.len() - window)
        .map(|k| WindowCheck {
            start: k,
            f_positive: f_product_positive(&states[k..k + window]),
            a_positive: positive(&window_product(&incid[k..k + window])),
        })
        .collect()
}

/// All state words of a given length that follow the admissibility graph.
pub fn admissible_words(len: usize) -> Vec<Vec<State>> {
    let mut out: Vec<Vec<State>> = State::ALL.iter().map(|s| vec![*s]).collect();
    for _ in 1..len {
        out = out
            .into_iter()
            .flat_map(|w| {
                let last = *w.last().unwrap();
                last.successors().iter().map(move |s| {
                    let mut v = w.clone();
                    v.push(*s);
                    v
                })
            })
            .collect();
    }
    if len == 0 {
        out.clear();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renorm::to_internal;
    use num_traits::ToPrimitive;

    fn sd(p: i64, q: i64, r: i64, d: u64) -> Surd {
        Surd::new(p, q, r, d).unwrap()
    }

    fn sqrt2() -> ParamPair {
        to_internal(&sd(-1, 1, 1, 2), &Surd::rational(1, 2).unwrap()).unwrap()
    }

    fn word(s: &str) -> Vec<Letter> {
        s.chars()
            .map(|c| match c {
                'L' => Letter::L,
                'M' => Letter::M,
                _ => Letter::S,
            })
            .collect()
    }

    #[test]
    fn substitutions() {
        let g = substitution_for(State::G, 4, 3);
        assert_eq!(g.words, [word("SLLMM"), word("SLLLM"), word("M")]);
        let bm = substitution_for(State::BMinus, 1, 0);
        assert_eq!(bm.words, [word("SL"), word("M"), word("L")]);
        let bp = substitution_for(State::BPlus, 2, 0);
        assert_eq!(bp.word(Letter::M), word("MLL").as_slice());
    }

    fn closed_form(state: State, a: u64, b: u64) -> Incidence {
        match state {
            State::G => [[b - 1, a - b + 1, 1], [b, a - b, 1], [0, 1, 0]],
            State::BMinus => [[a, 0, 1], [0, 1, 0], [1, 0, 0]],
            State::BPlus => [[a, 0, 1], [a, 1, 0], [1, 0, 0]],
        }
    }

    #[test]
    fn incidences() {
        assert_eq!(incidence_of(&substitution_for(State::G, 4, 3)), [[2, 2, 1], [3, 1, 1], [0, 1, 0]]);
        assert_eq!(incidence_of(&substitution_for(State::BMinus, 2, 0)), [[2, 0, 1], [0, 1, 0], [1, 0, 0]]);
        assert_eq!(incidence_of(&substitution_for(State::BPlus, 2, 0)), [[2, 0, 1], [2, 1, 0], [1, 0, 0]]);
        for a in 1..7 {
            for b in 1..=a {
                assert_eq!(incidence_of(&substitution_for(State::G, a, b)), closed_form(State::G, a, b));
            }
            for s in [State::BMinus, State::BPlus] {
                assert_eq!(incidence_of(&substitution_for(s, a, 0)), closed_form(s, a, 0));
            }
        }
    }

    #[test]
    fn sqrt2_stack() {
        let pp = sqrt2();
        let stack = build_stack(&renorm_orbit(&pp, 12), 12).unwrap();
        let hl: Vec<u64> = (0..10).map(|n| stack.height(n, Letter::L).to_u64().unwrap()).collect();
        assert_eq!(hl, vec![1, 2, 5, 12, 29, 70, 169, 408, 985, 2378]);
        let half = Surd::rational(1, 2).unwrap();
        assert_eq!(stack.phi[0], [half.clone(), -&half, -&half]);
        assert_eq!(stack.phi[1], [Surd::zero(), -&half, half]);
        assert_eq!(stack.level_for(1000), Some(10));
        assert_eq!(stack.level_for(985), Some(9));
    }

    #[test]
    fn geometry_partitions_and_measures() {
        let pp = sqrt2();
        let stack = build_stack(&renorm_orbit(&pp, 30), 30).unwrap();
        for (n, g) in stack.geometry.iter().enumerate() {
            let total: Surd = g.pieces.iter().map(|p| p.len()).sum();
            let step = &stack.steps[n];
            assert_eq!(total, &step.alpha_prod_prev + &step.alpha_prod);
            assert_eq!(g.whole.len(), total);
            let mut ends: Vec<&Interval> = g.pieces.iter().collect();
            ends.sort_by(|a, b| a.lo.cmp(&b.lo));
            assert_eq!(ends[0].lo, g.whole.lo);
            assert_eq!(ends[1].lo, ends[0].hi);
            assert_eq!(ends[2].lo, ends[1].hi);
            assert_eq!(ends[2].hi, g.whole.hi);
            assert!(g.whole.contains(&Surd::zero()));
            assert_eq!(stack.conservation(n), Surd::zero());
        }
    }

    #[test]
    fn heights_match_first_returns() {
        let pp = sqrt2();
        let stack = build_stack(&renorm_orbit(&pp, 9), 9).unwrap();
        for n in 0..=8 {
            let fr = first_return_oracle(&pp, n).unwrap();
            assert!(fr.constant_on_pieces, "level {n}");
            let rec = Letter::ALL.map(|j| stack.height(n, j).to_u64().unwrap());
            assert_eq!(fr.heights, rec, "level {n}");
        }
        assert_eq!(first_return_oracle(&pp, 2).unwrap().heights, [5, 5, 2]);
        assert_eq!(first_return_oracle(&pp, 1).unwrap().heights, [2, 1, 1]);
    }

    #[test]
    fn sign_patterns_bound_incidences() {
        for a in 1..6 {
            for b in 0..=a {
                for s in State::ALL {
                    if (s == State::G) != (b >= 1) {
                        continue;
                    }
                    let inc = incidence_of(&substitution_for(s, a, b));
                    let f = sign_pattern(s);
                    for i in 0..3 {
                        for j in 0..3 {
                            assert!(f[i][j] == 0 || inc[i][j] > 0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn positivity_windows() {
        assert!(!f_product_positive(&[State::G]));
        let words = admissible_words(5);
        for w in &words {
            let starts = w.starts_with(&[State::BMinus, State::BPlus, State::G]);
            if !w.contains(&State::BMinus) || starts {
                assert!(f_product_positive(w), "{w:?}");
            }
        }
        assert!(words.iter().all(|w| w.windows(2).all(|p| p[0].admits(p[1]))));
        let trace: Vec<(State, u64, u64)> = vec![
            (State::BMinus, 1, 0),
            (State::BPlus, 2, 0),
            (State::G, 2, 2),
            (State::G, 2, 2),
            (State::G, 2, 1),
            (State::G, 2, 2),
        ];
        for w in window_positivity(&trace, 5) {
            assert!(!w.f_positive || w.a_positive);
        }
    }

    #[test]
    fn coboundary_stack_refused() {
        let alpha = sd(-1, 1, 1, 2);
        let orbit = renorm_orbit(&to_internal(&alpha, &alpha).unwrap(), 50);
        let n = orbit.coboundary.unwrap();
        assert_eq!(build_stack(&orbit, 50).unwrap_err(), TowerError::Coboundary(n));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn denjoy_koksma_and_conservation(p in 1i64..90, q in -30i64..30, r in 2i64..90, d in prop::sample::select(vec![2u64, 3, 5, 7])) {
                let alpha = match d {
                    2 => sd(-1, 1, 1, 2),
                    3 => sd(2, -1, 1, 3),
                    5 => sd(3, -1, 2, 5),
                    _ => sd(3, -1, 1, 7),
                };
                let beta = Surd::new(p, q, r, d).unwrap();
                prop_assume!(beta.signum() > 0 && beta < Surd::one());
                let pp = to_internal(&alpha, &beta).unwrap();
                let orbit = renorm_orbit(&pp, 40);
                let depth = orbit.depth();
                let stack = build_stack(&orbit, depth).unwrap();
                let two = Surd::int(2);
                for n in 0..depth {
                    for j in Letter::ALL {
                        prop_assert!(stack.special_sum(n, j).abs() <= two);
                    }
                    prop_assert_eq!(stack.conservation(n), Surd::zero());
                }
                let c = stack.subs.iter().map(|s| s.word(Letter::L).len()).max().unwrap_or(1) as f64;
                for n in 1..=depth {
                    for j in Letter::ALL {
                        let lh = stack.height(n, j).to_f64().unwrap().ln();
                        prop_assert!(lh <= (c + 1.0).ln() * n as f64);
                    }
                }
            }
        }
    }
}
