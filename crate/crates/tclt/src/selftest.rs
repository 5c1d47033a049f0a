//! The exact-identity suite behind `tclt selftest`: digit traces, remainders,
//! heights, special sums, cylinder measures, the tower/chain equivalence,
//! positivity and moment growth.

use std::time::{Duration, Instant};

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::markov::{block_contraction, build_markov, moment_profile, MState, Variant};
use crate::qfield::Surd;
use crate::renorm::{renorm_orbit, to_internal, ParamPair, State};
use crate::towers::{admissible_words, build_stack, f_product_positive, first_return_oracle, Letter, TowerStack};
use crate::walk::{code_point, tower_distribution_check};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub id: &'static str,
    pub passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub elapsed: Duration,
    #[serde(skip)]
    pub budget: Duration,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.passed && self.elapsed <= self.budget
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} ({:.2}s, budget {}s)",
            self.id,
            if self.ok() { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

fn timed(id: &'static str, budget_s: u64, f: impl FnOnce() -> (bool, String)) -> Check {
    let t = Instant::now();
    let (passed, detail) = f();
    Check { id, passed, detail, elapsed: t.elapsed(), budget: Duration::from_secs(budget_s) }
}

fn sd(p: i64, q: i64, r: i64, d: u64) -> Surd {
    Surd::new(p, q, r, d).expect("valid literal")
}

/// (√2−1, 1/2)
pub fn silver_pair() -> ParamPair {
    to_internal(&sd(-1, 1, 1, 2), &Surd::rational(1, 2).unwrap()).unwrap()
}

/// ((3−√5)/2, α/2)
pub fn golden_pair() -> ParamPair {
    let a = sd(3, -1, 2, 5);
    to_internal(&a, &(&a / &Surd::int(2))).unwrap()
}

/// (2−√3, 1/3)
pub fn third_pair() -> ParamPair {
    to_internal(&sd(2, -1, 1, 3), &Surd::rational(1, 3).unwrap()).unwrap()
}

pub fn a1() -> Check {
    timed("A1", 1, || {
        let orbit = renorm_orbit(&silver_pair(), 40);
        let b: Vec<u64> = orbit.steps.iter().map(|s| s.b_n).collect();
        let want_b = [0, 0, 2, 2, 1, 2, 1];
        let want_s = [State::BMinus, State::BPlus, State::G, State::G, State::G];
        let ok_b = b[..7] == want_b;
        let ok_s = orbit.states()[..5] == want_s;
        // the tail must keep repeating (2, 1)
        let ok_tail = b[3..].chunks(2).all(|c| c == &[2, 1][..c.len()]);
        let ok_cycle = orbit.cycle == Some((3, 2));
        (
            ok_b && ok_s && ok_tail && ok_cycle,
            format!("b = {:?}…, cycle = {:?}", &b[..7], orbit.cycle),
        )
    })
}

/// 50 seeded β ∈ ℚ(√2) ∩ (0, 1) for α = √2 − 1.
pub fn seeded_betas(seed: u64) -> Vec<Surd> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (zero, one) = (Surd::zero(), Surd::one());
    let mut out = Vec::new();
    while out.len() < 50 {
        let p: i64 = rng.random_range(-40..=40);
        let q: i64 = rng.random_range(-25..=25);
        let r: i64 = rng.random_range(1..=60);
        let b = sd(p, q, r, 2);
        if b > zero && b < one {
            out.push(b);
        }
    }
    out
}

pub fn a2() -> Check {
    timed("A2", 5, || {
        let alpha = sd(-1, 1, 1, 2);
        let mut checked = 0usize;
        let mut bad = Vec::new();
        for beta in seeded_betas(20240917) {
            let pp = to_internal(&alpha, &beta).expect("β in range");
            let orbit = renorm_orbit(&pp, 41);
            let mut sum = Surd::zero();
            for n in 0..orbit.depth().min(41) {
                sum = &sum + &orbit.steps[n].x_term;
                let rem = (&pp.beta0 - &sum).abs();
                if rem != orbit.beta_marked(n + 1).abs() {
                    bad.push((beta.literal(), n));
                }
                checked += 1;
            }
        }
        (bad.is_empty(), format!("{checked} identities, {} violations {:?}", bad.len(), bad.first()))
    })
}

pub fn a3() -> Check {
    timed("A3", 5, || {
        let pp = silver_pair();
        let st = build_stack(&renorm_orbit(&pp, 24), 24).expect("deep enough");
        let mut mismatch = Vec::new();
        for n in 0..=8 {
            let fr = first_return_oracle(&pp, n).expect("oracle");
            let rec: Vec<u64> = Letter::ALL.iter().map(|j| st.height(n, *j).to_u64().unwrap()).collect();
            if !fr.constant_on_pieces || rec != fr.heights {
                mismatch.push(n);
            }
        }
        let pell = [2u64, 5, 12, 29, 70, 169, 408];
        let hl: Vec<u64> = (1..=7).map(|n| st.height(n, Letter::L).to_u64().unwrap()).collect();
        let ratio = st.height(21, Letter::L).to_f64().unwrap() / st.height(20, Letter::L).to_f64().unwrap();
        let err = (ratio - (1.0 + 2f64.sqrt())).abs();
        (
            mismatch.is_empty() && hl == pell && err < 1e-6,
            format!("first-return mismatches {mismatch:?}, h_L = {hl:?}, ratio error {err:.2e}"),
        )
    })
}

pub fn a4() -> Check {
    timed("A4", 5, || {
        let two = Surd::int(2);
        let mut worst = Vec::new();
        let mut ok = true;
        for pp in [silver_pair(), golden_pair(), third_pair()] {
            let st = build_stack(&renorm_orbit(&pp, 201), 201).expect("non-coboundary");
            let mut max = 0.0f64;
            for n in 0..=200 {
                for j in Letter::ALL {
                    let v = st.special_sum(n, j);
                    ok &= v.abs() <= two;
                    max = max.max(v.to_f64().abs());
                }
                ok &= st.conservation(n).is_zero();
            }
            worst.push(max);
        }
        (ok, format!("max |φ_J| per pair {worst:.4?}, conservation exact"))
    })
}

fn cylinders_ok(st: &TowerStack, len: usize) -> (usize, usize, bool) {
    let arr = build_markov(st, len).expect("stack deeper than word length");
    let scale = st.params.domain_len();
    let (mut adm, mut inadm, mut ok) = (0, 0, true);
    // every word over S_1 × … × S_len
    let mut words: Vec<Vec<MState>> = vec![vec![]];
    for k in 1..=len {
        words = words
            .into_iter()
            .flat_map(|w| {
                arr.states(k).iter().map(move |s| {
                    let mut v = w.clone();
                    v.push(*s);
                    v
                })
            })
            .collect();
    }
    for w in words {
        let admissible = (1..len).all(|k| st.subs[k].word(w[k].0)[w[k].1] == w[k - 1].0);
        let mu = arr.cylinder_measure(&w, Variant::Full);
        if !admissible {
            inadm += 1;
            ok &= mu.is_zero();
            continue;
        }
        adm += 1;
        let top = w[len - 1].0;
        let base = st.geometry[len].piece(top);
        ok &= mu == &base.len() / &scale;
        // climb to the level this word names and check the coding reads it back
        let mut level = 0u64;
        for (k, (j, i)) in w.iter().enumerate() {
            for l in &st.subs[k].word(*j)[..*i] {
                level += st.height(k, *l).to_u64().unwrap();
            }
        }
        let mut y = base.lo.clone();
        for _ in 0..level {
            y = st.params.rotate(&y);
        }
        ok &= code_point(st, &y, len).map(|c| c.digits == w).unwrap_or(false);
    }
    (adm, inadm, ok)
}

pub fn a5() -> Check {
    timed("A5", 10, || {
        let mut ok = true;
        let (mut adm, mut inadm) = (0, 0);
        for pp in [silver_pair(), golden_pair()] {
            let st = build_stack(&renorm_orbit(&pp, 8), 8).unwrap();
            for len in 1..=6 {
                let (a, i, good) = cylinders_ok(&st, len);
                adm += a;
                inadm += i;
                ok &= good;
            }
        }
        (ok, format!("{adm} admissible words matched, {inadm} inadmissible words have measure 0"))
    })
}

pub fn a6() -> Check {
    timed("A6", 30, || {
        let mut bad = Vec::new();
        for (name, pp) in [("silver", silver_pair()), ("golden", golden_pair())] {
            let st = build_stack(&renorm_orbit(&pp, 12), 12).unwrap();
            for n in 1..=10 {
                let arr = build_markov(&st, n).unwrap();
                for j in Letter::ALL {
                    if !tower_distribution_check(&st, &arr, n, j) {
                        bad.push(format!("{name} n={n} J={j}"));
                    }
                }
            }
        }
        (bad.is_empty(), format!("60 tower/chain laws compared, mismatches {bad:?}"))
    })
}

pub fn a7() -> Check {
    timed("A7", 5, || {
        let words = admissible_words(5);
        let free: Vec<_> = words.iter().filter(|w| !w.contains(&State::BMinus)).collect();
        let lead: Vec<_> = words.iter().filter(|w| w[..3] == [State::BMinus, State::BPlus, State::G]).collect();
        let pos = free.iter().chain(&lead).all(|w| f_product_positive(w));
        let st = build_stack(&renorm_orbit(&silver_pair(), 62), 62).unwrap();
        let arr = build_markov(&st, 60).unwrap();
        let rep = block_contraction(&arr, 6);
        let (delta, all_below) = match &rep {
            Ok(r) => (r.delta, r.taus.iter().all(|t| t.1 < 1.0)),
            Err(_) => (f64::NAN, false),
        };
        (
            pos && all_below && !free.is_empty() && !lead.is_empty(),
            format!("{} B−-free and {} B−B+G words positive: {pos}; δ(6) = {delta:.4}", free.len(), lead.len()),
        )
    })
}

pub fn a8() -> Check {
    timed("A8", 60, || {
        let pp = silver_pair();
        let st = build_stack(&renorm_orbit(&pp, 62), 62).unwrap();
        let arr = build_markov(&st, 60).unwrap();
        let full = moment_profile(&arr, Variant::Full, 60);
        let towers: Vec<_> = Letter::ALL.iter().map(|j| moment_profile(&arr, Variant::Tower(*j), 60)).collect();
        let gap = |n: usize| towers.iter().map(|t| (full[n - 1].e - t[n - 1].e).abs()).fold(0.0, f64::max);
        let early = (10..=30).map(gap).fold(0.0, f64::max);
        let late = (40..=60).map(gap).fold(0.0, f64::max);
        let v = |n: usize| full[n - 1].var;
        let grows = v(60) > v(30) && v(30) > v(10);
        (
            late <= 1.5 * early && grows,
            format!(
                "max gap [10,30] {early:.4}, [40,60] {late:.4}; σ² at 10/30/60 = {:.4}/{:.4}/{:.4}",
                v(10),
                v(30),
                v(60)
            ),
        )
    })
}

pub fn run_exact_suite() -> Vec<Check> {
    vec![a1(), a2(), a3(), a4(), a5(), a6(), a7(), a8()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_betas_are_reproducible() {
        assert_eq!(seeded_betas(1), seeded_betas(1));
        assert_ne!(seeded_betas(1), seeded_betas(2));
    }

    #[test]
    fn quick_checks_pass() {
        for c in [a1(), a3(), a7()] {
            assert!(c.passed, "{}", c.line());
        }
    }
}
