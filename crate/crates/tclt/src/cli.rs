//! Command-line front end. `run` parses argv, runs one verb and returns the
//! process exit code: 0 success, 1 selftest failure, 2 invalid parameters,
//! 3 coboundary, 4 depth or horizon exhausted.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;
use serde_json::{json, Map, Value};

use crate::markov::{block_contraction, build_markov, mixing_bounds, moment_profile, sample_paths, MarkovError, Variant};
use crate::qfield::{FieldError, Literal, Surd};
use crate::renorm::{classify_diophantine, continued_fraction, renorm_orbit, to_internal, ParamPair, RenormError, RenormOrbit};
use crate::selftest::run_exact_suite;
use crate::towers::{build_stack, TowerError, TowerStack};
use crate::walk::{birkhoff, experiment_on_trace, ks_statistic, sig12, Mode, WalkConfig, WalkError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "tclt", version, about = "Renormalization, towers and the temporal CLT for rotation walks")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Ostrowski expansion of β₀ and the state itinerary
    Expand(Common),
    /// Substitutions, heights and special Birkhoff sums per level
    Towers(Common),
    /// Chain moments and contraction at a level
    Markov(MarkovArgs),
    /// Birkhoff sums along an orbit
    Simulate(WalkArgs),
    /// Temporal CLT experiment with a KS verdict
    Tclt(TcltArgs),
    /// Run the exact-identity suite
    Selftest(Output),
}

#[derive(Args, Debug, Clone)]
struct Output {
    /// write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// include wall-clock timing in the report
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// rat:p/r or surd:d:p:q:r
    #[arg(long)]
    alpha: String,
    /// rat:, surd: or inalpha:up/ur:vp/vr
    #[arg(long)]
    beta: String,
    #[arg(long, default_value_t = 64)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug, Clone)]
struct MarkovArgs {
    #[command(flatten)]
    common: Common,
    /// chain length (renormalization level)
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[arg(long, default_value_t = 60)]
    exact_cap: usize,
    #[arg(long, default_value_t = 6)]
    block: usize,
    /// sampled paths for a chain-level KS check
    #[arg(long, default_value_t = 0)]
    samples: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Exact,
    Fixed,
}

#[derive(Args, Debug, Clone)]
struct WalkArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "rat:0/1")]
    x: String,
    /// number of Birkhoff sums φ₀ … φ_{n−1}
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    mode: ModeArg,
    #[arg(long, default_value_t = 128)]
    frac_bits: u32,
    #[arg(long, default_value_t = 64)]
    guard_bits: u32,
}

#[derive(Args, Debug, Clone)]
struct TcltArgs {
    #[command(flatten)]
    walk: WalkArgs,
    #[arg(long, default_value_t = 80)]
    bins: usize,
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[arg(long, default_value_t = 60)]
    exact_cap: usize,
    /// histogram CSV path
    #[arg(long)]
    hist: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Coboundary(Value),
    Exhausted(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 2,
            Failure::Coboundary(_) => 3,
            Failure::Exhausted(_) | Failure::Io(_) => 4,
        }
    }
}

impl From<FieldError> for Failure {
    fn from(e: FieldError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<RenormError> for Failure {
    fn from(e: RenormError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<TowerError> for Failure {
    fn from(e: TowerError) -> Self {
        match e {
            TowerError::Coboundary(n) => Failure::Coboundary(json!({ "coboundary_level": n, "error": e.to_string() })),
            _ => Failure::Exhausted(e.to_string()),
        }
    }
}

impl From<MarkovError> for Failure {
    fn from(e: MarkovError) -> Self {
        match e {
            MarkovError::Depth { .. } => Failure::Exhausted(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<WalkError> for Failure {
    fn from(e: WalkError) -> Self {
        match e {
            WalkError::Depth { .. } => Failure::Exhausted(e.to_string()),
            WalkError::Degenerate(_) => Failure::Coboundary(json!({ "error": e.to_string() })),
            WalkError::Tower(t) => t.into(),
            WalkError::Markov(m) => m.into(),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

/// Exact literal, the field tuple (d, p, q, r) and a 12-digit decimal.
pub fn surd_json(s: &Surd) -> Value {
    json!({
        "exact": s.literal(),
        "field": [s.d().to_string(), s.p().to_string(), s.q().to_string(), s.r().to_string()],
        "decimal": sig12(s.to_f64()),
    })
}

fn big(b: &BigInt) -> Value {
    Value::String(b.to_string())
}

struct Setup {
    params: ParamPair,
    orbit: RenormOrbit,
    inputs: Map<String, Value>,
}

fn setup(c: &Common) -> Result<Setup, Failure> {
    let alpha = match c.alpha.parse::<Literal>()? {
        Literal::Value(s) => s,
        Literal::InAlpha { .. } => return Err(Failure::Invalid("α cannot be given relative to itself".into())),
    };
    let beta = c.beta.parse::<Literal>()?.resolve(&alpha)?;
    let params = to_internal(&alpha, &beta)?;
    if c.depth == 0 {
        return Err(Failure::Invalid("depth must be positive".into()));
    }
    let orbit = renorm_orbit(&params, c.depth);
    let mut inputs = Map::new();
    inputs.insert("alpha".into(), Value::String(alpha.literal()));
    inputs.insert("beta".into(), Value::String(beta.literal()));
    inputs.insert("depth".into(), json!(c.depth));
    Ok(Setup { params, orbit, inputs })
}

fn params_json(pp: &ParamPair) -> Value {
    json!({
        "alpha": surd_json(&pp.alpha),
        "beta": surd_json(&pp.beta),
        "alpha0": surd_json(&pp.alpha0),
        "beta0": surd_json(&pp.beta0),
        "drift": surd_json(&pp.drift()),
    })
}

fn stack_for(s: &Setup) -> Result<TowerStack, Failure> {
    build_stack(&s.orbit, s.orbit.depth().max(1)).and_then(|st| {
        if let Some(n) = s.orbit.coboundary {
            Err(TowerError::Coboundary(n))
        } else {
            Ok(st)
        }
    })
    .map_err(Failure::from)
}

fn expand(c: &Common) -> Result<(Map<String, Value>, Value, bool), Failure> {
    let s = setup(c)?;
    let steps: Vec<Value> = s
        .orbit
        .steps
        .iter()
        .map(|st| {
            json!({
                "n": st.n,
                "a": st.a_n,
                "b": st.b_n,
                "state": st.state.to_string(),
                "alpha_n": surd_json(&st.alpha_n),
                "beta_n": surd_json(&st.beta_n),
                "x_term": surd_json(&st.x_term),
                "beta_marked": surd_json(&st.beta_marked),
            })
        })
        .collect();
    let payload = json!({
        "params": params_json(&s.params),
        "continued_fraction": continued_fraction(&s.params.alpha, 20),
        "steps": steps,
        "coboundary_level": s.orbit.coboundary,
        "cycle": s.orbit.cycle.map(|(pre, per)| json!({ "pre_period": pre, "period": per })),
        "diophantine": classify_diophantine(&s.orbit),
    });
    Ok((s.inputs, payload, s.orbit.coboundary.is_some()))
}

fn towers(c: &Common) -> Result<(Map<String, Value>, Value, bool), Failure> {
    let s = setup(c)?;
    let st = stack_for(&s)?;
    let levels: Vec<Value> = (0..=st.depth())
        .map(|n| {
            let mut v = json!({
                "n": n,
                "heights": st.heights[n].iter().map(big).collect::<Vec<_>>(),
                "special_sums": st.phi[n].iter().map(surd_json).collect::<Vec<_>>(),
            });
            if n < st.depth() {
                v["conservation_zero"] = json!(st.conservation(n).is_zero());
                v["substitution"] = json!(st.subs[n].to_string());
                v["state"] = json!(st.steps[n].state.to_string());
                v["lengths"] = json!(st.geometry[n].pieces.iter().map(|p| surd_json(&p.len())).collect::<Vec<_>>());
            }
            v
        })
        .collect();
    Ok((s.inputs, json!({ "params": params_json(&s.params), "levels": levels }), false))
}

fn markov(a: &MarkovArgs) -> Result<(Map<String, Value>, Value, bool), Failure> {
    let mut s = setup(&a.common)?;
    let st = stack_for(&s)?;
    let arr = build_markov(&st, a.n)?;
    let profile = moment_profile(&arr, a.variant, a.exact_cap);
    let moments: Vec<Value> = profile
        .iter()
        .map(|m| {
            let mut v = json!({ "n": m.n, "e": sig12(m.e), "var": sig12(m.var), "exact": m.exact });
            if let (Some(e), Some(var)) = (&m.e_exact, &m.var_exact) {
                v["e_exact"] = surd_json(e);
                v["var_exact"] = surd_json(var);
            }
            v
        })
        .collect();
    let mut payload = json!({
        "params": params_json(&s.params),
        "state_counts": (1..=a.n).map(|k| arr.states(k).len()).collect::<Vec<_>>(),
        "moments": moments,
    });
    if a.block <= a.n {
        let rep = block_contraction(&arr, a.block)?;
        let (phi, rho) = mixing_bounds(&arr, a.block)?;
        payload["contraction"] = json!({
            "block_len": rep.block_len,
            "delta": sig12(rep.delta),
            "bounded_type_m": rep.m,
            "guaranteed": rep.guaranteed,
            "phi_mixing_bound": sig12(phi),
            "rho_mixing_bound": sig12(rho),
        });
    }
    if a.samples > 0 {
        let last = profile.last().expect("n ≥ 1");
        let sigma = last.var.sqrt();
        let mut z: Vec<f64> = sample_paths(&arr, a.variant, a.samples, a.common.seed)
            .into_iter()
            .map(|v| (v - last.e) / sigma)
            .collect();
        payload["sampled_ks"] = json!({ "samples": a.samples, "D": sig12(ks_statistic(&mut z)) });
    }
    s.inputs.insert("n".into(), json!(a.n));
    s.inputs.insert("variant".into(), json!(a.variant.to_string()));
    s.inputs.insert("exact_cap".into(), json!(a.exact_cap));
    s.inputs.insert("block".into(), json!(a.block));
    s.inputs.insert("samples".into(), json!(a.samples));
    Ok((s.inputs, payload, false))
}

fn walk_config(a: &WalkArgs, s: &mut Setup) -> Result<WalkConfig, Failure> {
    let x = a.x.parse::<Literal>()?.resolve(&s.params.alpha)?;
    let mode = match a.mode {
        ModeArg::Exact => Mode::Exact,
        ModeArg::Fixed => Mode::FixedPoint { frac_bits: a.frac_bits, guard_bits: a.guard_bits },
    };
    s.inputs.insert("x".into(), json!(x.literal()));
    s.inputs.insert("n".into(), json!(a.n));
    s.inputs.insert("mode".into(), serde_json::to_value(mode).unwrap());
    let cfg = WalkConfig { params: s.params.clone(), x, steps: a.n, mode };
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(a: &WalkArgs) -> Result<(Map<String, Value>, Value, bool), Failure> {
    let mut s = setup(&a.common)?;
    let cfg = walk_config(a, &mut s)?;
    let trace = birkhoff(&cfg)?;
    let mut checkpoints = Vec::new();
    let mut k = 1usize;
    while k < trace.len() {
        checkpoints.push(json!({ "k": k, "phi": surd_json(&trace.sum(k)) }));
        k *= 10;
    }
    let last = trace.len() - 1;
    let sums = trace.sums_f64(trace.len());
    let payload = json!({
        "params": params_json(&s.params),
        "checkpoints": checkpoints,
        "last": { "k": last, "phi": surd_json(&trace.sum(last)) },
        "min": sig12(sums.iter().copied().fold(f64::INFINITY, f64::min)),
        "max": sig12(sums.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        "exact_escapes": trace.escapes,
        "coboundary_level": s.orbit.coboundary,
    });
    Ok((s.inputs, payload, s.orbit.coboundary.is_some()))
}

fn tclt(a: &TcltArgs) -> Result<(Map<String, Value>, Value, bool), Failure> {
    let mut s = setup(&a.walk.common)?;
    let cfg = walk_config(&a.walk, &mut s)?;
    let st = stack_for(&s)?;
    let trace = birkhoff(&cfg)?;
    let ex = experiment_on_trace(&st, &cfg.x, &trace, cfg.steps, a.bins, a.variant, a.exact_cap)?;
    if let Some(path) = &a.hist {
        std::fs::write(path, ex.histogram.to_csv()).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }
    s.inputs.insert("bins".into(), json!(a.bins));
    s.inputs.insert("variant".into(), json!(a.variant.to_string()));
    s.inputs.insert("exact_cap".into(), json!(a.exact_cap));
    let payload = json!({
        "params": params_json(&s.params),
        "N": ex.big_n,
        "c_n_x": surd_json(&ex.c_n_x),
        "e_N": sig12(ex.e_n),
        "sigma_N": sig12(ex.sigma_n),
        "D": sig12(ex.ks),
        "samples": ex.samples.len(),
        "histogram": {
            "lo": ex.histogram.lo,
            "hi": ex.histogram.hi,
            "counts": ex.histogram.counts,
            "below": ex.histogram.below,
            "above": ex.histogram.above,
        },
        "exact_escapes": trace.escapes,
    });
    Ok((s.inputs, payload, false))
}

fn emit(out: &Option<PathBuf>, report: &Value, stdout: &mut dyn Write) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).expect("serializable") + "\n";
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Failure::Io(e.to_string())),
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("TCLT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // already-initialized pools are fine: results never depend on the worker count
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    configure_threads();
    let started = Instant::now();
    let (verb, output, seed) = match &cli.verb {
        Verb::Expand(c) | Verb::Towers(c) => (verb_name(&cli.verb), c.output.clone(), c.seed),
        Verb::Markov(m) => ("markov", m.common.output.clone(), m.common.seed),
        Verb::Simulate(w) => ("simulate", w.common.output.clone(), w.common.seed),
        Verb::Tclt(t) => ("tclt", t.walk.common.output.clone(), t.walk.common.seed),
        Verb::Selftest(o) => ("selftest", o.clone(), 0),
    };
    let result = match &cli.verb {
        Verb::Expand(c) => expand(c),
        Verb::Towers(c) => towers(c),
        Verb::Markov(m) => markov(m),
        Verb::Simulate(w) => simulate(w),
        Verb::Tclt(t) => tclt(t),
        Verb::Selftest(_) => {
            let checks = run_exact_suite();
            let all = checks.iter().all(|c| c.ok());
            for c in &checks {
                let _ = writeln!(stderr, "{}", c.line());
            }
            let list: Vec<Value> = checks
                .iter()
                .map(|c| json!({ "id": c.id, "passed": c.ok(), "detail": c.detail }))
                .collect();
            let report = wrap(verb, Map::new(), json!({ "checks": list, "all_passed": all }), seed, &output, started);
            return match emit(&output.out, &report, stdout) {
                Ok(()) if all => 0,
                Ok(()) => 1,
                Err(f) => fail(f, stderr),
            };
        }
    };
    match result {
        Ok((inputs, payload, coboundary)) => {
            let report = wrap(verb, inputs, payload, seed, &output, started);
            if let Err(f) = emit(&output.out, &report, stdout) {
                return fail(f, stderr);
            }
            if coboundary {
                let _ = writeln!(stderr, "tclt: β₀ has a finite expansion (coboundary case)");
                return 3;
            }
            0
        }
        Err(Failure::Coboundary(detail)) => {
            let report = wrap(verb, Map::new(), detail, seed, &output, started);
            let _ = emit(&output.out, &report, stdout);
            fail(Failure::Coboundary(Value::Null), stderr)
        }
        Err(f) => fail(f, stderr),
    }
}

fn verb_name(v: &Verb) -> &'static str {
    match v {
        Verb::Expand(_) => "expand",
        Verb::Towers(_) => "towers",
        Verb::Markov(_) => "markov",
        Verb::Simulate(_) => "simulate",
        Verb::Tclt(_) => "tclt",
        Verb::Selftest(_) => "selftest",
    }
}

fn wrap(verb: &str, inputs: Map<String, Value>, payload: Value, seed: u64, out: &Output, started: Instant) -> Value {
    let mut r = json!({
        "schema_version": SCHEMA_VERSION,
        "verb": verb,
        "inputs": inputs,
        "seed": seed,
        "payload": payload,
    });
    if out.timing {
        r["timing_ms"] = json!(started.elapsed().as_millis() as u64);
    }
    r
}

fn fail(f: Failure, stderr: &mut dyn Write) -> i32 {
    let msg = match &f {
        Failure::Invalid(m) | Failure::Exhausted(m) | Failure::Io(m) => m.clone(),
        Failure::Coboundary(_) => "β₀ has a finite expansion (coboundary case)".into(),
    };
    let _ = writeln!(stderr, "tclt: {msg}");
    f.code()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let mut argv = vec!["tclt"];
        argv.extend_from_slice(args);
        let code = run(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(call(&["expand", "--alpha", "rat:1/3", "--beta", "rat:1/2"]).0, 2);
        assert_eq!(call(&["expand", "--alpha", "surd:2:-1:1:1", "--beta", "inalpha:1/1:1/1"]).0, 2);
        assert_eq!(call(&["expand", "--alpha", "surd:2:1:1:1", "--beta", "rat:1/2"]).0, 2);
        assert_eq!(call(&["expand", "--alpha", "surd:4:1:1:1", "--beta", "rat:1/2"]).0, 2);
        assert_eq!(call(&["expand", "--beta", "rat:1/2"]).0, 2);
    }

    #[test]
    fn expand_report_round_trips() {
        let (code, out, _) = call(&["expand", "--alpha", "surd:2:-1:1:1", "--beta", "rat:1/2", "--depth", "12"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert!(v.get("timing_ms").is_none());
        let steps = v["payload"]["steps"].as_array().unwrap();
        assert_eq!(steps.len(), 12);
        assert_eq!(steps[2]["b"], 2);
        for s in steps {
            let lit = s["beta_n"]["exact"].as_str().unwrap();
            let back: Surd = lit.parse().unwrap();
            assert_eq!(back.literal(), lit);
        }
        // identical inputs, identical bytes
        assert_eq!(out, call(&["expand", "--alpha", "surd:2:-1:1:1", "--beta", "rat:1/2", "--depth", "12"]).1);
    }

    #[test]
    fn coboundary_exits_three_after_report() {
        // β = 1 − α puts β₀ on the orbit of 0
        let (code, out, _) = call(&["expand", "--alpha", "surd:2:-1:1:1", "--beta", "inalpha:1/1:-1/1"]);
        assert_eq!(code, 3);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!(v["payload"]["coboundary_level"].is_u64());
        let (code, out, _) = call(&["towers", "--alpha", "surd:2:-1:1:1", "--beta", "inalpha:1/1:-1/1"]);
        assert_eq!(code, 3);
        assert!(out.contains("coboundary"));
    }

    #[test]
    fn depth_exhaustion_exits_four() {
        let args = ["tclt", "--alpha", "surd:2:-1:1:1", "--beta", "rat:1/2", "--n", "100000", "--depth", "8"];
        assert_eq!(call(&args).0, 4);
    }

    #[test]
    fn small_tclt_run() {
        let (code, out, _) =
            call(&["tclt", "--alpha", "surd:2:-1:1:1", "--beta", "rat:1/2", "--n", "2000", "--bins", "20", "--seed", "7"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        let d: f64 = v["payload"]["D"].as_str().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&d));
        assert_eq!(v["payload"]["N"], 10);
        assert_eq!(v["seed"], 7);
    }

    #[test]
    fn markov_and_towers_run() {
        let (code, out, _) = call(&[
            "markov", "--alpha", "surd:5:3:-1:2", "--beta", "inalpha:0/1:1/2", "--n", "12", "--samples", "500", "--seed", "3",
        ]);
        assert_eq!(code, 0, "{out}");
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["payload"]["moments"].as_array().unwrap().len(), 12);
        assert!(v["payload"]["sampled_ks"]["D"].is_string());
        let (code, out, _) = call(&["towers", "--alpha", "surd:2:-1:1:1", "--beta", "rat:1/2", "--depth", "10"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["payload"]["levels"][3]["heights"][0], "12");
    }

    #[test]
    fn simulate_modes_match() {
        let base = ["simulate", "--alpha", "surd:2:-1:1:1", "--beta", "rat:1/2", "--n", "5000"];
        let run_mode = |m: &str| {
            let mut a = base.to_vec();
            a.extend(["--mode", m]);
            let v: Value = serde_json::from_str(&call(&a).1).unwrap();
            v["payload"]["last"].clone()
        };
        assert_eq!(run_mode("exact"), run_mode("fixed"));
    }
}
