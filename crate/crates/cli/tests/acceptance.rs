//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

// checks are written as `!(a <= b)` so that a NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use promptshap::analysis::{relative_delta, RelativeDelta};
use promptshap::experiment::{Experiment, LoadedConfig};
use promptshap::oracle::synthetic::TabularOracle;
use promptshap::oracle::{
    AdditiveOracle, CountingOracle, FieldView, LogisticOracle, RemoteConfig, RemoteOracle,
};
use promptshap::{
    cosine_similarity, efficiency_residual, exact_shapley, field_info_classes, mc_shapley, normalize_abs,
    parse_template, run_framing_experiment, token_noise_share, AttributionVector, ChoiceSpec, EstimatorConfig,
    InfoClass, Method, NormalizedAttribution, Oracle, PromptTemplate, PromptVector, Query, ReferenceVector,
    ResponseCache, ValueFunctionBinding,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/assets")
}

fn read(name: &str) -> String {
    std::fs::read_to_string(assets().join(name)).unwrap()
}

fn numbered_template(n: usize) -> PromptTemplate {
    let src: Vec<String> = (1..=n).map(|i| format!("{{{{ f{i} }}}}")).collect();
    parse_template(&src.join(" ")).unwrap()
}

fn bind(n: usize, oracle: Arc<dyn Oracle>, cache: Option<Arc<ResponseCache>>) -> ValueFunctionBinding {
    let t = numbered_template(n);
    let x = PromptVector::new((1..=n).map(|i| format!("x{i}")).collect());
    let r = ReferenceVector::uniform(&t, "_");
    ValueFunctionBinding::new(t, x, r, oracle, ChoiceSpec::binary_ab(), cache).unwrap()
}

/// `f` at every presence mask over `n` fields, asked of the oracle directly.
fn value_table(n: usize, oracle: &dyn Oracle) -> Vec<f64> {
    let t = numbered_template(n);
    let spec = ChoiceSpec::binary_ab();
    let reference = vec!["_".to_string(); n];
    (0..1usize << n)
        .map(|mask| {
            let values: Vec<String> = (0..n)
                .map(|i| if mask >> i & 1 == 1 { format!("x{}", i + 1) } else { "_".into() })
                .collect();
            let prompt = t.render_values(&values).unwrap();
            let q = Query {
                prompt: &prompt,
                fields: Some(FieldView {
                    values: &values,
                    reference: &reference,
                }),
            };
            oracle.evaluate(&q, &spec).unwrap().get("A").unwrap()
        })
        .collect()
}

/// Shapley values by averaging marginals over all n! orderings.
fn permutation_shapley(n: usize, table: &[f64]) -> Vec<f64> {
    fn walk(n: usize, table: &[f64], order: &mut Vec<usize>, used: u32, acc: &mut [f64], count: &mut f64) {
        if order.len() == n {
            let mut mask = 0usize;
            for &i in order.iter() {
                let next = mask | 1 << i;
                acc[i] += table[next] - table[mask];
                mask = next;
            }
            *count += 1.0;
            return;
        }
        for i in 0..n {
            if used >> i & 1 == 0 {
                order.push(i);
                walk(n, table, order, used | 1 << i, acc, count);
                order.pop();
            }
        }
    }
    let mut acc = vec![0.0; n];
    let mut count = 0.0;
    walk(n, table, &mut Vec::new(), 0, &mut acc, &mut count);
    acc.iter().map(|a| a / count).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn seeded_table(n: usize, seed: u64) -> Vec<f64> {
    value_table(n, &TabularOracle::seeded(seed))
}

fn exact_of(n: usize, table: Vec<f64>) -> AttributionVector {
    let b = bind(n, Arc::new(TabularOracle::table(table).unwrap()), None);
    exact_shapley(&b, &EstimatorConfig::default()).unwrap()
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..20u64 {
        let n = 2 + (k % 7) as usize;
        let oracle: Arc<dyn Oracle> = Arc::new(TabularOracle::seeded(1000 + k));
        let expected = permutation_shapley(n, &value_table(n, oracle.as_ref()));
        let b = bind(n, oracle, None);
        let got = exact_shapley(&b, &EstimatorConfig::default()).unwrap();
        let err = max_abs_diff(&got.phi, &expected);
        ensure!(err <= 1e-10, "oracle {k} (N={n}): error {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("20 oracles, N=2..8, max error {worst:e}"))
}

fn criterion_2() -> Outcome {
    let mut worst_eff = 0.0f64;
    for k in 0..10u64 {
        let n = 2 + (k % 5) as usize;
        let table = seeded_table(n, 2000 + k);
        let exact = exact_of(n, table.clone());
        worst_eff = worst_eff.max(efficiency_residual(&exact));
        let b = bind(n, Arc::new(TabularOracle::table(table.clone()).unwrap()), None);
        for t in [1u64, 2, 3, 7, 50, 333] {
            let cfg = EstimatorConfig {
                iterations: t,
                seed: k,
                ..EstimatorConfig::default()
            };
            worst_eff = worst_eff.max(efficiency_residual(&mc_shapley(&b, &cfg).unwrap()));
        }

        // additivity and scaling on a second table
        let other = seeded_table(n, 3000 + k);
        let mix: Vec<f64> = table.iter().zip(&other).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let (a1, a2, am) = (exact.phi.clone(), exact_of(n, other).phi, exact_of(n, mix).phi);
        let sum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
        let add_err = max_abs_diff(&am, &sum);
        ensure!(add_err <= 1e-12, "additivity error {add_err:e}");
        let alpha = 0.37;
        let scaled = exact_of(n, table.iter().map(|v| alpha * v).collect()).phi;
        let scale_err = max_abs_diff(&scaled, &a1.iter().map(|x| alpha * x).collect::<Vec<_>>());
        ensure!(scale_err <= 1e-12, "scaling error {scale_err:e}");

        // fields 1 and 2 interchangeable: value depends on the count of present fields
        let sym: Vec<f64> = (0..1usize << n)
            .map(|m| table[(1usize << m.count_ones()) - 1])
            .collect();
        let s = exact_of(n, sym).phi;
        ensure!((s[0] - s[1]).abs() <= 1e-12, "symmetry violated: {} vs {}", s[0], s[1]);
    }
    ensure!(worst_eff <= 1e-12, "efficiency residual {worst_eff:e}");

    // null players on additive oracles
    let weights = vec![0.1, 0.0, -0.05, 0.0, 0.2];
    let b = bind(5, Arc::new(AdditiveOracle::new(0.4, weights.clone()).unwrap()), None);
    let exact = exact_shapley(&b, &EstimatorConfig::default()).unwrap();
    let mc = mc_shapley(&b, &EstimatorConfig { iterations: 25, ..EstimatorConfig::default() }).unwrap();
    for i in [1, 3] {
        ensure!(exact.phi[i] == 0.0 && mc.phi[i] == 0.0, "null player {} got {} / {}", i + 1, exact.phi[i], mc.phi[i]);
    }
    Ok(format!("efficiency {worst_eff:e}, symmetry/null/additivity/scaling hold"))
}

fn criterion_3() -> Outcome {
    let n = 8;
    let mut report = Vec::new();
    for seed in 0..5u64 {
        let table = seeded_table(n, 4000 + seed);
        let exact = permutation_shapley(n, &table);
        let b = bind(n, Arc::new(TabularOracle::table(table).unwrap()), None);
        let err = |t: u64| {
            let cfg = EstimatorConfig {
                iterations: t,
                seed,
                parallelism: 8,
                ..EstimatorConfig::default()
            };
            max_abs_diff(&mc_shapley(&b, &cfg).unwrap().phi, &exact)
        };
        let (e1k, e20k, e40k) = (err(1000), err(20000), err(40000));
        ensure!(e20k <= 0.01, "seed {seed}: error at T=20000 is {e20k}");
        ensure!(e40k <= e1k, "seed {seed}: error(40000)={e40k} > error(1000)={e1k}");
        report.push(format!("{e20k:.4}"));
    }
    Ok(format!("N=8, error at T=20000 per seed: {}", report.join(", ")))
}

fn criterion_4() -> Outcome {
    let mut checked = 0;
    for (k, weights) in [
        vec![0.1, -0.2, 0.05],
        vec![0.013, 0.027, -0.031, 0.0, 0.0999, -0.0123, 0.04],
        vec![1.0 / 3.0, -1.0 / 7.0, 1.0 / 11.0, -1.0 / 13.0],
        vec![0.3],
    ]
    .into_iter()
    .enumerate()
    {
        let oracle = AdditiveOracle::new(0.45, weights.clone()).unwrap();
        let snapped = oracle.weights().to_vec();
        let n = weights.len();
        let b = bind(n, Arc::new(oracle), None);
        for seed in 0..4u64 {
            let cfg = EstimatorConfig {
                iterations: 1,
                seed: seed * 31 + k as u64,
                ..EstimatorConfig::default()
            };
            let a = mc_shapley(&b, &cfg).unwrap();
            for (i, (got, want)) in a.phi.iter().zip(&snapped).enumerate() {
                ensure!(
                    got.to_bits() == want.to_bits(),
                    "weights {weights:?}, field {}: {got} != {want}",
                    i + 1
                );
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} runs bit-identical to the additive weights"))
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["promptshap"];
    argv.extend_from_slice(args);
    let code = promptshap_cli::run(argv, &mut out, &mut err);
    (code, out, err)
}

fn criterion_5() -> Outcome {
    let template = assets().join("flight_template.txt");
    let values = assets().join("flight_values.json");
    let (template, values) = (template.to_str().unwrap(), values.to_str().unwrap());
    let run = |parallelism: &str| {
        let (code, out, err) = run_cli(&[
            "analyze",
            "--template",
            template,
            "--values",
            values,
            "--model",
            "synthetic:logistic:17",
            "--iterations",
            "400",
            "--seed",
            "9",
            "--parallelism",
            parallelism,
        ]);
        assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
        out
    };
    let reports = [run("1"), run("1"), run("8"), run("8")];
    for r in &reports[1..] {
        ensure!(r == &reports[0], "reports differ");
    }
    Ok(format!("4 runs, {} identical bytes each", reports[0].len()))
}

fn criterion_6() -> Outcome {
    let template = parse_template(&read("flight_template.txt")).unwrap();
    ensure!(template.field_count() == 32, "template has {} fields", template.field_count());
    let named: BTreeMap<String, String> = serde_json::from_str(&read("flight_values.json")).unwrap();
    let rendered = template.render(&PromptVector::from_named(&template, &named).unwrap()).unwrap();
    ensure!(rendered == read("flight_prompt.txt"), "flight prompt differs:\n{rendered}");

    let framed: BTreeMap<String, String> = serde_json::from_str(&read("flight_framed_values.json")).unwrap();
    let rendered = template.render(&PromptVector::from_named(&template, &framed).unwrap()).unwrap();
    ensure!(rendered == read("flight_framed_prompt.txt"), "framed prompt differs:\n{rendered}");

    // every marker replaced by the bare reference token
    let mut expected = String::new();
    let mut rest = read("flight_template.txt");
    while let Some(start) = rest.find("{{") {
        let end = rest[start..].find("}}").unwrap() + start + 2;
        expected.push_str(&rest[..start]);
        expected.push('_');
        rest = rest[end..].to_string();
    }
    expected.push_str(&rest);
    let reference = template
        .render_values(ReferenceVector::uniform(&template, "_").values())
        .unwrap();
    ensure!(reference == expected, "reference rendering differs:\n{reference}");
    ensure!(reference.starts_with("_ _ _ _ _ _ _ _ _. _ _ _ _ _?"), "{reference}");
    Ok("plain and framed flight prompts byte-exact, reference renders as \" _ \"".into())
}

fn criterion_7() -> Outcome {
    let mut lines = Vec::new();
    for n in [3usize, 6, 9] {
        let counter = Arc::new(CountingOracle::new(LogisticOracle::new(n as u64)));
        let cache = Arc::new(ResponseCache::in_memory());
        let b = bind(n, counter.clone(), Some(cache.clone()));
        let a = exact_shapley(&b, &EstimatorConfig::default()).unwrap();
        let distinct = counter.calls();
        ensure!(distinct <= 1 << n, "exact N={n}: {distinct} distinct calls");
        ensure!(cache.stats().entries == distinct, "cache holds {} entries", cache.stats().entries);
        ensure!(a.oracle_calls <= 1 << n, "exact N={n}: reported {}", a.oracle_calls);
        lines.push(format!("exact N={n}: {distinct}"));
    }
    for (n, t) in [(4usize, 50u64), (7, 120), (10, 33)] {
        let counter = Arc::new(CountingOracle::new(LogisticOracle::new(t)));
        let b = bind(n, counter.clone(), None);
        let cfg = EstimatorConfig {
            iterations: t,
            seed: 5,
            parallelism: 4,
            ..EstimatorConfig::default()
        };
        let a = mc_shapley(&b, &cfg).unwrap();
        let expected = t * n as u64 + 1;
        ensure!(counter.calls() == expected, "MC N={n} T={t}: {} calls, expected {expected}", counter.calls());
        ensure!(a.oracle_calls == expected, "MC N={n} T={t}: reported {}", a.oracle_calls);

        // a cold cache only removes repeats (single worker, so no two misses race on one key)
        let counter = Arc::new(CountingOracle::new(LogisticOracle::new(t)));
        let cache = Arc::new(ResponseCache::in_memory());
        let b = bind(n, counter.clone(), Some(cache.clone()));
        let a = mc_shapley(&b, &EstimatorConfig { parallelism: 1, ..cfg }).unwrap();
        ensure!(a.oracle_calls == expected, "cached MC reported {}", a.oracle_calls);
        ensure!(counter.calls() == b.call_set().len() as u64, "cached MC issued repeat calls");
        lines.push(format!("MC N={n} T={t}: {expected}"));
    }
    Ok(lines.join("; "))
}

fn normalized(names: &[&str], weights: &[f64]) -> NormalizedAttribution {
    NormalizedAttribution {
        names: names.iter().map(|s| s.to_string()).collect(),
        weights: weights.to_vec(),
        degenerate: false,
    }
}

fn attribution(phi: &[f64]) -> AttributionVector {
    AttributionVector {
        fields: (1..=phi.len()).map(|i| format!("f{i}")).collect(),
        phi: phi.to_vec(),
        phi0: 0.0,
        f_x: 0.0,
        method: Method::Exact,
        iterations: None,
        seed: None,
        oracle_calls: 0,
        std_errors: None,
    }
}

fn criterion_8() -> Outcome {
    let n = normalize_abs(&attribution(&[-0.13, 0.08, 0.05]));
    let expected = [0.13 / 0.26, 0.08 / 0.26, 0.05 / 0.26];
    ensure!(max_abs_diff(&n.weights, &expected) <= 1e-9, "normalize_abs gave {:?}", n.weights);
    ensure!((n.weights[0] - 0.5).abs() <= 1e-9, "first weight {}", n.weights[0]);
    let z = normalize_abs(&attribution(&[0.0, 0.0, 0.0]));
    ensure!(z.degenerate && z.weights.iter().all(|w| (w - 1.0 / 3.0).abs() <= 1e-12), "zero vector {z:?}");

    let names = ["a", "b", "c"];
    let cos = cosine_similarity(
        &normalized(&names, &[0.2, 0.2, 0.6]),
        &normalized(&names, &[0.6, 0.2, 0.2]),
        &BTreeSet::new(),
    )
    .unwrap();
    ensure!((cos - 0.28 / 0.44).abs() <= 1e-9, "cosine {cos}");
    let ortho = cosine_similarity(&normalized(&["a", "b"], &[1.0, 0.0]), &normalized(&["a", "b"], &[0.0, 1.0]), &BTreeSet::new())
        .unwrap();
    ensure!(ortho.abs() <= 1e-9, "orthogonal cosine {ortho}");

    let classes: BTreeMap<usize, InfoClass> =
        [(1, InfoClass::HighInformation), (2, InfoClass::LowInformation)].into_iter().collect();
    let noise = token_noise_share(&normalized(&["x", "y"], &[0.3, 0.7]), &classes);
    ensure!((noise.low_info_share - 0.7).abs() <= 1e-9, "low share {}", noise.low_info_share);

    // flight classification against direct summation
    let template = parse_template(&read("flight_template.txt")).unwrap();
    let weights: Vec<f64> = (1..=32).map(|i| i as f64 / 528.0).collect();
    let names: Vec<String> = template.fields().iter().map(|f| f.name.clone()).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let noise = token_noise_share(&normalized(&refs, &weights), &field_info_classes(&template));
    let direct: f64 = names
        .iter()
        .zip(&weights)
        .filter(|(name, _)| !(name.starts_with("__") && name.ends_with("__")))
        .map(|(_, w)| w)
        .sum();
    ensure!((noise.low_info_share - direct).abs() <= 1e-9, "flight low share {}", noise.low_info_share);

    match relative_delta(0.028, 0.046) {
        RelativeDelta::Value(v) => ensure!((v - 1.8 / 2.8).abs() <= 1e-9, "relative delta {v}"),
        RelativeDelta::New => return Err("relative delta reported as new".into()),
    }
    ensure!(
        promptshap::analysis::format_percent((4.6 - 2.8) / 2.8) == "64.29%",
        "formatted {}",
        promptshap::analysis::format_percent((4.6 - 2.8) / 2.8)
    );
    ensure!(matches!(relative_delta(0.0, 0.1), RelativeDelta::New), "zero baseline not flagged");
    Ok(format!("0.28/0.44 = {cos:.10}, (4.6-2.8)/2.8 = 64.29%"))
}

fn criterion_9() -> Outcome {
    let exp = Experiment::load(&assets().join("flight_framing_exact.json")).unwrap();
    let loaded: LoadedConfig = exp.loaded().clone();
    let report = run_framing_experiment(&exp).map_err(|e| e.to_string())?;
    let framing = report.framing.as_ref().ok_or("no framing headline")?;
    ensure!(report.variants[1].attribution.method == Method::Exact, "not solved exactly");
    ensure!((framing.framed_phi + 0.08).abs() <= 1e-10, "phi(only) = {}", framing.framed_phi);

    // the shift must equal two fresh evaluations of the recorded prompts
    let variants = loaded.resolve_variants().unwrap();
    let oracle = loaded.config.oracle.build(&variants[0].template).unwrap();
    let spec = &loaded.config.choice;
    let direct = |i: usize| {
        let v = &variants[i];
        let prompt = &report.variants[i].rendered_prompt;
        let q = Query {
            prompt,
            fields: Some(FieldView {
                values: v.x.values(),
                reference: v.r.values(),
            }),
        };
        oracle.evaluate(&q, spec).unwrap().get(spec.target()).unwrap()
    };
    let shift = direct(1) - direct(0);
    ensure!(shift == framing.shift.delta, "shift {} vs direct {shift}", framing.shift.delta);
    ensure!(
        report.variants[1].rendered_prompt.contains("Costs only $600"),
        "framed prompt missing the injected word"
    );
    Ok(format!("phi(only) = {:.12}, shift = {shift:.12}", framing.framed_phi))
}

type Handler = Box<dyn Fn(&Value) -> String + Send + Sync>;

/// Completions endpoint on a loopback port; returns the base URL and the request log.
fn stub_server(handler: Handler) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            let mut len = 0usize;
            reader.read_line(&mut line).unwrap();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let request: Value = serde_json::from_slice(&body).unwrap();
            let payload = handler(&request);
            seen.lock().unwrap().push(request);
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    (url, log)
}

fn criterion_10() -> Outcome {
    let spec = ChoiceSpec::binary_ab();
    let (url, log) = stub_server(Box::new(|_| {
        json!({"choices": [{"text": " A", "logprobs": {"top_logprobs": [
            {" A": 0.48f64.ln(), "A": 0.12f64.ln(), " B": 0.15f64.ln(), " The": 0.25f64.ln()}
        ]}}]})
        .to_string()
    }));
    let oracle = RemoteOracle::new(RemoteConfig::new(&url, "stub")).unwrap();
    let d = oracle.evaluate(&Query::text("Which flight?"), &spec).unwrap();
    // 0.6 on A variants, 0.15 on B, the rest discarded
    ensure!((d.get("A").unwrap() - 0.8).abs() <= 1e-12, "P(A) = {:?}", d.get("A"));
    ensure!((d.get("B").unwrap() - 0.2).abs() <= 1e-12, "P(B) = {:?}", d.get("B"));
    ensure!(log.lock().unwrap()[0]["max_tokens"] == 1, "request {:?}", log.lock().unwrap()[0]);

    let (url, log) = stub_server(Box::new(|req| {
        let text = if req["temperature"] == 1 && req["prompt"].as_str().unwrap().len() % 2 == 0 { "B" } else { " A" };
        json!({"choices": [{"text": text}]}).to_string()
    }));
    let mut cfg = RemoteConfig::new(&url, "stub");
    cfg.fallback_samples = 4;
    let oracle = RemoteOracle::new(cfg).unwrap();
    let d = oracle.evaluate(&Query::text("odd"), &spec).unwrap();
    ensure!(oracle.using_fallback(), "fallback not engaged");
    ensure!(d.get("A") == Some(1.0), "fallback distribution {d:?}");
    let d = oracle.evaluate(&Query::text("even"), &spec).unwrap();
    ensure!(d.get("B") == Some(1.0), "fallback distribution {d:?}");
    ensure!(log.lock().unwrap().len() == 9, "{} requests", log.lock().unwrap().len());

    // the same endpoint through the command line
    let dir = tempfile::tempdir().unwrap();
    let prompt = dir.path().join("prompt.txt");
    std::fs::write(&prompt, "even").unwrap();
    let (url, _) = stub_server(Box::new(|_| {
        json!({"choices": [{"text": "B", "logprobs": {"top_logprobs": [{"B": -0.5, "A": -1.5}]}}]}).to_string()
    }));
    let model = format!("remote:{url}:stub");
    let (code, out, err) = run_cli(&["probe", "--prompt", prompt.to_str().unwrap(), "--model", &model, "--no-cache"]);
    ensure!(code == 0, "probe failed: {}", String::from_utf8_lossy(&err));
    let v: Value = serde_json::from_slice(&out).unwrap();
    let expected = 1.0 / (1.0 + 1.0f64.exp());
    let got = v["distribution"]["A"].as_f64().unwrap();
    ensure!((got - expected).abs() <= 1e-12, "probe P(A) = {got}");
    Ok("renormalized logprobs, sampling fallback, CLI probe".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("exact engine matches permutation enumeration", Duration::from_secs(10), criterion_1),
        ("axiom suite", Duration::from_secs(5), criterion_2),
        ("Monte Carlo convergence", Duration::from_secs(60), criterion_3),
        ("additive shortcut at T=1", Duration::from_secs(1), criterion_4),
        ("analyze output is deterministic", Duration::from_secs(30), criterion_5),
        ("template fidelity", Duration::from_secs(1), criterion_6),
        ("call accounting", Duration::from_secs(10), criterion_7),
        ("analysis arithmetic", Duration::from_secs(1), criterion_8),
        ("framing pipeline", Duration::from_secs(10), criterion_9),
        ("remote adapter contract", Duration::from_secs(10), criterion_10),
    ];
    let quiet = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    // `cargo test --test acceptance -- 3 9` runs a subset
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(outcome) => outcome,
            Err(panic) => Err(panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  criterion {:>2}: {name} ({elapsed:.2?}) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {:>2}: {name} ({elapsed:.2?}) {why}", i + 1);
            }
        }
    }
    std::panic::set_hook(quiet);
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
