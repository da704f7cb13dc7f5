//! One test per acceptance criterion. Each prints a PASS or FAIL line
//! straight to stdout, so the verdicts show even under output capture.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use poolforge::analysis::{bootstrap_cell, bootstrap_ci, pipeline_tokens, r_tok, CellInputs, CellTokens, Stat};
use poolforge::backend::{MockBackend, RetryPolicy};
use poolforge::config::RunConfig;
use poolforge::diversity::{d_ent, d_med, d_mst, d_nn, d_pair, mst_weight, rarefy, RareMetric};
use poolforge::geometry::{select_anchors, AnchorRule, DistanceMatrix, Embedder, MockEmbedder};
use poolforge::orchestrator::{GenerationSettings, Orchestrator};
use poolforge::pipeline::{self, AnalysisBundle, CellMeta, RunDir, StageOptions};
use poolforge::prompts::{export_judge_prompts, export_prompts, PromptKit};
use poolforge::quality::{boilerplate_table, standardize, Commonness, NgramIndex};
use poolforge::{CellCoord, Family, Method, Strategy};
use rand::Rng;

type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(name: &str, limit: Option<Duration>, body: impl FnOnce() -> Check) {
    let t = Instant::now();
    let mut verdict = body();
    let took = t.elapsed();
    if let (Ok(()), Some(limit)) = (&verdict, limit) {
        if took > limit {
            verdict = Err(format!("took {took:.1?}, limit {limit:?}"));
        }
    }
    let line = match &verdict {
        Ok(()) => format!("PASS  {name}  ({took:.2?})\n"),
        Err(e) => format!("FAIL  {name}  ({took:.2?}): {e}\n"),
    };
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    if let Err(e) = verdict {
        panic!("{name}: {e}");
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn metric_oracle_equivalence() {
    criterion("metric oracle equivalence", Some(Duration::from_secs(10)), || {
        let mut r = rng(1001);
        for trial in 0..50 {
            let n = r.random_range(3..=10);
            let d = mock_pool(&mut r, n);
            let m = dense(&d);
            let pairs = [
                ("d_pair", d_pair(&d).map_err(|e| e.to_string())?, oracle_d_pair(&m)),
                ("d_nn", d_nn(&d).map_err(|e| e.to_string())?, oracle_d_nn(&m)),
                ("d_med", d_med(&d), oracle_d_med(&m)),
                ("d_mst", d_mst(&d).map_err(|e| e.to_string())?, oracle_mst_weight(&m) / (n - 1) as f64),
            ];
            for (name, got, want) in pairs {
                ensure(close(got, want, 1e-9), || format!("trial {trial} n={n}: {name} {got} vs {want}"))?;
            }
            if n <= 7 {
                let (got, want) = (mst_weight(&d), enumerate_mst_weight(&m));
                ensure(close(got, want, 1e-9), || format!("trial {trial}: MST {got} vs enumeration {want}"))?;
            }
        }
        Ok(())
    });
}

#[test]
fn entropy_bounds_and_exact_cases() {
    criterion("entropy bounds and exact cases", None, || {
        let e = |labels: &[usize], k| d_ent(labels, k).map_err(|e| e.to_string());
        for k in [2, 5, 12] {
            let single = e(&[k - 1; 9], k)?;
            ensure(close(single, 0.0, 1e-9), || format!("single region, K={k}: {single}"))?;
            let uniform: Vec<usize> = (0..3 * k).map(|i| i % k).collect();
            let u = e(&uniform, k)?;
            ensure(close(u, 1.0, 1e-9), || format!("uniform, K={k}: {u}"))?;
        }
        let three: Vec<usize> = (0..12).map(|i| [0, 5, 9][i % 3]).collect();
        let got = e(&three, 12)?;
        let want = 3f64.ln() / 12f64.ln();
        ensure(close(got, want, 1e-9), || format!("3 of 12: {got} vs {want}"))?;
        ensure(close(want, 0.4421, 5e-5), || format!("log 3 / log 12 = {want}"))?;
        let mut r = rng(1002);
        for _ in 0..200 {
            let k = r.random_range(2..=15);
            let labels: Vec<usize> = (0..r.random_range(1..50)).map(|_| r.random_range(0..k)).collect();
            let v = e(&labels, k)?;
            ensure((-1e-12..=1.0 + 1e-12).contains(&v), || format!("out of [0, 1]: {v}"))?;
        }
        Ok(())
    });
}

#[test]
fn anchor_selection_oracle() {
    criterion("anchor selection oracle", None, || {
        let mut r = rng(1003);
        for trial in 0..200 {
            let n = r.random_range(3..=8);
            let m = r.random_range(1..=3);
            // every other trial draws from a few distance levels so ties are frequent
            let d = if trial % 2 == 0 { tied_matrix(&mut r, n, 3) } else { mock_pool(&mut r, n) };
            let got = select_anchors(&d, m, AnchorRule::MaxMin).map_err(|e| e.to_string())?;
            let want = oracle_anchors(&dense(&d), m);
            ensure(got == want, || format!("trial {trial} n={n} m={m}: {got:?} vs {want:?}"))?;
        }
        Ok(())
    });
}

#[test]
fn prompt_golden_equality() {
    criterion("prompt golden equality", None, || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let kit = PromptKit::reference();
        export_prompts(&kit, dir.path()).map_err(|e| e.to_string())?;
        export_judge_prompts(&kit, dir.path()).map_err(|e| e.to_string())?;
        let exported = read_tree(dir.path());
        let golden = read_tree(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/goldens"));
        let rendered = golden.keys().filter(|k| k.starts_with("rendered/")).count();
        let judge = golden.keys().filter(|k| k.starts_with("judge/")).count();
        ensure(rendered == 12 * (6 * 2 + 1), || format!("{rendered} rendered goldens"))?;
        ensure(judge == 5, || format!("{judge} judge goldens"))?;
        for (rel, want) in &golden {
            ensure(exported.get(rel) == Some(want), || format!("{rel} differs or is missing"))?;
        }
        Ok(())
    });
}

fn orchestrator<'a>(kit: &'a PromptKit, b: &'a MockBackend, e: &'a MockEmbedder, n: usize) -> Orchestrator<'a> {
    let mut settings = GenerationSettings::new(n);
    settings.concurrency = 16;
    settings.retry = RetryPolicy::no_delay();
    Orchestrator { kit, backend: b, embedder: e, settings }
}

#[test]
fn structural_counts() {
    criterion("structural counts", None, || {
        let kit = PromptKit::reference();
        let (b, e) = (MockBackend::new(5), MockEmbedder::new(32, 5));
        let orch = orchestrator(&kit, &b, &e, 150);
        let cell = |m| CellCoord::new("claude-sonnet-4.6", "story_parachute", Family::Stories, m, Strategy::Neutral);
        let fail = |f: Box<poolforge::orchestrator::CellFailure>| format!("{}: {}", f.stage, f.message);

        let strat = orch.run_cell(&cell(Method::Strat)).map_err(fail)?;
        let mut per: BTreeMap<u8, usize> = BTreeMap::new();
        for rec in &strat.evaluated.records {
            *per.entry(rec.stratum_id.ok_or("strat record without stratum")?).or_default() += 1;
        }
        ensure(per.len() == 5 && per.values().all(|&c| c == 30), || format!("per stratum {per:?}"))?;

        for (m, arity, groups) in [(Method::Peer1, 2, 75), (Method::Peer2, 3, 50)] {
            let run = orch.run_cell(&cell(m)).map_err(fail)?;
            let p = run.partition.as_ref().ok_or("no partition")?;
            let sizes_ok = p.groups.iter().all(|g| g.len() == arity);
            ensure(p.groups.len() == groups && sizes_ok, || format!("{m}: {} groups", p.groups.len()))?;
            let mut covered: Vec<usize> = p.groups.iter().flatten().copied().collect();
            covered.sort_unstable();
            ensure(covered == (0..150).collect::<Vec<_>>(), || format!("{m}: slots not covered once"))?;
            let shown = run.evaluated.records.iter().all(|r| r.anchor_slots.as_ref().is_some_and(|a| a.len() == arity));
            ensure(shown, || format!("{m}: a call saw the wrong number of seeds"))?;
        }

        let repr = orch.run_cell(&cell(Method::Repr)).map_err(fail)?;
        let anchors = repr.anchors.clone().ok_or("no repr anchors")?;
        let distinct = anchors.iter().collect::<std::collections::BTreeSet<_>>().len();
        ensure(anchors.len() == 3 && distinct == 3, || format!("anchors {anchors:?}"))?;
        let same = repr.evaluated.records.iter().filter(|r| r.anchor_slots.as_deref() == Some(&anchors[..])).count();
        ensure(same == 150, || format!("{same} of 150 stage-2 calls saw the shared anchors"))
    });
}

#[test]
fn token_accounting_identities() {
    criterion("token accounting identities", None, || {
        let kit = PromptKit::reference();
        let (b, e) = (MockBackend::new(6), MockEmbedder::new(16, 6));
        let orch = orchestrator(&kit, &b, &e, 30);
        for (prompt, family) in [("story_horror", Family::Stories), ("aut_key", Family::Aut), ("slogan_blood", Family::Slogans)] {
            let base_cell = CellCoord::new("gemini-2.5-pro", prompt, family, Method::Indep, Strategy::Neutral);
            let fail = |f: Box<poolforge::orchestrator::CellFailure>| format!("{}: {}", f.stage, f.message);
            let base = orch.run_cell(&base_cell).map_err(fail)?;
            let base_tokens = base.evaluated.usage().total();
            let r = r_tok(base_tokens, base_tokens).map_err(|e| e.to_string())?;
            ensure(r == 1.0, || format!("{prompt}: baseline r_tok {r}"))?;
            for method in Method::ALL {
                for strategy in Strategy::ALL {
                    let run = orch.run_cell(&CellCoord { method, strategy, ..base_cell.clone() }).map_err(fail)?;
                    let sum = |p: &poolforge::Pool| p.records.iter().map(|x| x.usage.total()).sum::<u64>();
                    let eval = sum(&run.evaluated);
                    let t = CellTokens {
                        planning: run.planning.as_ref().map(|p| p.usage()),
                        seed: run.seed.as_ref().map(|p| p.usage()),
                        evaluated: Some(run.evaluated.usage()),
                    };
                    let got = pipeline_tokens(method, &t).map_err(|e| e.to_string())?;
                    let want = match method {
                        Method::Indep => eval,
                        Method::Strat => {
                            let plan = run.planning.as_ref().ok_or("strat without planning")?;
                            plan.attempts.iter().map(|a| a.usage.total()).sum::<u64>() + eval
                        }
                        _ => sum(run.seed.as_ref().ok_or("two-stage without seed pool")?) + eval,
                    };
                    ensure(got == want, || format!("{prompt} {method}-{strategy}: {got} vs {want}"))?;
                }
            }
        }

        // same identities through the staged pipeline and its analysis output
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = RunConfig {
            output_dir: dir.path().to_path_buf(),
            n: 30,
            models: vec!["gemini-2.5-pro".into()],
            prompts: vec!["story_horror".into(), "aut_key".into(), "slogan_blood".into()],
            ..small_analysis(RunConfig::default())
        };
        run_pipeline(&cfg)?;
        let run = RunDir::new(dir.path());
        let bundle = AnalysisBundle::load(&run.analysis_json()).map_err(|e| e.to_string())?;
        ensure(bundle.cells.len() == 36, || format!("{} analyzed cells", bundle.cells.len()))?;
        for a in &bundle.cells {
            let s = &a.summary;
            let raw = std::fs::read(run.cell_dir(&s.cell).join("meta.json")).map_err(|e| e.to_string())?;
            let meta: CellMeta = serde_json::from_slice(&raw).map_err(|e| e.to_string())?;
            let total = |u: Option<poolforge::TokenUsage>| u.map_or(0, |u| u.total());
            let want = match s.cell.method {
                Method::Indep => total(meta.tokens.evaluated),
                Method::Strat => total(meta.tokens.planning) + total(meta.tokens.evaluated),
                _ => total(meta.tokens.seed) + total(meta.tokens.evaluated),
            };
            ensure(s.pipeline_tokens == want, || format!("{}: {} vs {want}", s.cell, s.pipeline_tokens))?;
            if s.cell.is_baseline() {
                ensure(s.r_tok == Some(1.0), || format!("{}: r_tok {:?}", s.cell, s.r_tok))?;
            }
        }
        Ok(())
    });
}

#[test]
fn rarefaction_correctness() {
    criterion("rarefaction correctness", None, || {
        let err = |e: poolforge::Error| e.to_string();
        let mut r = rng(1007);
        for _ in 0..10 {
            let n = r.random_range(4..=25);
            let d = mock_pool(&mut r, n);
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..6)).collect();
            let full_pair = d_pair(&d).map_err(err)?;
            let full_ent = d_ent(&labels, 6).map_err(err)?;
            let pair = rarefy(&d, &labels, 6, RareMetric::DPair, 25, 9).map_err(err)?;
            let ent = rarefy(&d, &labels, 6, RareMetric::DEnt, 25, 9).map_err(err)?;
            let exact = pair.values[n - 1].iter().all(|&v| v == full_pair) && ent.values[n - 1].iter().all(|&v| v == full_ent);
            ensure(exact, || format!("n={n}: q=n replicate differs from the full pool"))?;
            ensure(ent.values[0].iter().all(|&v| v == 0.0), || format!("n={n}: d_ent at q=1 is not 0"))?;
        }

        let d = mock_pool(&mut r, 6);
        let labels = [0, 0, 1, 2, 2, 3];
        let mut want = (0.0, 0.0);
        let mut subsets = 0;
        for a in 0..6 {
            for b in a + 1..6 {
                for c in b + 1..6 {
                    let idx = [a, b, c];
                    want.0 += d_pair(&d.view(&idx)).map_err(err)?;
                    want.1 += d_ent(&[labels[a], labels[b], labels[c]], 4).map_err(err)?;
                    subsets += 1;
                }
            }
        }
        ensure(subsets == 20, || format!("{subsets} subsets"))?;
        let want = (want.0 / 20.0, want.1 / 20.0);
        let pair = rarefy(&d, &labels, 4, RareMetric::DPair, 5000, 31).map_err(err)?.mean_at(3);
        let ent = rarefy(&d, &labels, 4, RareMetric::DEnt, 5000, 31).map_err(err)?.mean_at(3);
        ensure(close(pair, want.0, 0.01), || format!("d_pair at q=3: {pair} vs exhaustive {}", want.0))?;
        ensure(close(ent, want.1, 0.01), || format!("d_ent at q=3: {ent} vs exhaustive {}", want.1))
    });
}

#[test]
fn slogan_score_oracle() {
    criterion("slogan score oracle", None, || {
        let (slogans, want) = slogan_fixture();
        let idx = NgramIndex::build("slogan_soda", slogans.iter().map(|(k, s)| (k.as_str(), *s)))
            .map_err(|e| e.to_string())?;
        let table = boilerplate_table(&idx, Commonness::Count);
        for ((key, text), w) in slogans.iter().zip(&want) {
            let got = table.scores[key];
            ensure(got == *w, || format!("{text:?}: B = {got}, manual {w}"))?;
        }
        let raw: Vec<f64> = slogans.iter().map(|(k, _)| table.scores[k]).collect();
        let z = standardize(&raw).map_err(|e| e.to_string())?;
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
        ensure(close(mean, 0.0, 1e-9) && close(sd, 1.0, 1e-9), || format!("mean {mean}, sd {sd}"))
    });
}

/// Draws `n` points i.i.d. from a uniform distribution over `support`.
fn iid_pool(r: &mut rand_chacha::ChaCha8Rng, support: &[Vec<f64>], n: usize) -> (DistanceMatrix, Vec<usize>) {
    let draws: Vec<usize> = (0..n).map(|_| r.random_range(0..support.len())).collect();
    let data = draws.iter().flat_map(|&a| draws.iter().map(move |&b| support[a][b])).collect();
    (DistanceMatrix::from_full(n, data).expect("valid distances"), draws)
}

#[test]
fn bootstrap_sanity() {
    criterion("bootstrap sanity", Some(Duration::from_secs(120)), || {
        let err = |e: poolforge::Error| e.to_string();
        let mut r = rng(1009);

        // reproducible regardless of thread count
        let d = mock_pool(&mut r, 40);
        let labels: Vec<usize> = (0..40).map(|i| i % 7).collect();
        let q: Vec<f64> = (0..40).map(|_| r.random_range(-2.0..2.0)).collect();
        let inputs = CellInputs { distances: &d, labels: &labels, k: 8, quality: Some(&q) };
        let a = bootstrap_cell(&inputs, 500, 77, "cell").map_err(err)?;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
        let b = one.install(|| bootstrap_cell(&inputs, 500, 77, "cell")).map_err(err)?;
        let bits = |c: &poolforge::analysis::CellBootstrap| {
            c.replicates.values().flatten().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        ensure(bits(&a) == bits(&b), || "replicates differ between runs".into())?;
        for (s, reps) in &a.replicates {
            let (x, y) = (bootstrap_ci(reps), bootstrap_ci(&b.replicates[s]));
            let same = x.low.to_bits() == y.low.to_bits() && x.high.to_bits() == y.high.to_bits();
            ensure(same, || format!("{s:?} interval differs"))?;
        }

        // every point identical: zero-width intervals
        let flat = DistanceMatrix::from_full(20, vec![0.0; 400]).map_err(err)?;
        let one_region = vec![3; 20];
        let constant = vec![0.25; 20];
        let degenerate = CellInputs { distances: &flat, labels: &one_region, k: 8, quality: Some(&constant) };
        let reps = bootstrap_cell(&degenerate, 200, 78, "flat").map_err(err)?;
        for (s, v) in &reps.replicates {
            let ci = bootstrap_ci(v);
            ensure(ci.low == ci.high, || format!("{s:?}: [{}, {}]", ci.low, ci.high))?;
            if *s != Stat::Quality {
                ensure(ci.low == 0.0, || format!("{s:?}: [{}, {}]", ci.low, ci.high))?;
            }
        }

        // coverage of the generating-process value on i.i.d. pools of the canonical size
        let points = 40;
        let texts: Vec<String> = (0..points).map(|i| format!("support {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let rows = MockEmbedder::new(6, 3).embed(&refs).map_err(err)?;
        let support = dense(&poolforge::geometry::distance_matrix(
            &poolforge::geometry::EmbeddingSet::from_rows("support", rows).map_err(err)?,
        ));
        let values: Vec<f64> = (0..points).map(|_| r.random_range(1.0..5.0)).collect();
        // E d(X, Y) for independent draws, zero on the diagonal included
        let true_pair = support.iter().flatten().sum::<f64>() / (points * points) as f64;
        let true_quality = values.iter().sum::<f64>() / points as f64;
        let (mut pair_hits, mut quality_hits) = (0, 0);
        for trial in 0..100 {
            let (d, draws) = iid_pool(&mut r, &support, 150);
            let q: Vec<f64> = draws.iter().map(|&a| values[a]).collect();
            let labels: Vec<usize> = draws.iter().map(|&a| a % 8).collect();
            let inputs = CellInputs { distances: &d, labels: &labels, k: 8, quality: Some(&q) };
            let reps = bootstrap_cell(&inputs, 500, 500 + trial, "iid").map_err(err)?;
            let p = bootstrap_ci(&reps.replicates[&Stat::DPair]);
            let m = bootstrap_ci(&reps.replicates[&Stat::Quality]);
            pair_hits += usize::from(p.low <= true_pair && true_pair <= p.high);
            quality_hits += usize::from(m.low <= true_quality && true_quality <= m.high);
        }
        let _ = std::io::stdout()
            .lock()
            .write_all(format!("      coverage: d_pair {pair_hits}/100, quality {quality_hits}/100\n").as_bytes());
        ensure(pair_hits >= 90, || format!("d_pair covered {pair_hits}/100"))?;
        ensure(quality_hits >= 90, || format!("quality covered {quality_hits}/100"))
    });
}

fn small_analysis(mut cfg: RunConfig) -> RunConfig {
    cfg.analysis.rarefaction_repeats = 20;
    cfg.analysis.bootstrap_replicates = 100;
    cfg.concurrency = 16;
    cfg.retry = RetryPolicy::no_delay();
    cfg
}

fn run_pipeline(cfg: &RunConfig) -> Check {
    let backend = pipeline::build_backend(cfg).map_err(|e| e.to_string())?;
    let embedder = pipeline::build_embedder(cfg).map_err(|e| e.to_string())?;
    let opts = StageOptions::default();
    let out = pipeline::run_all(cfg, &opts, backend.as_ref(), embedder.as_ref()).map_err(|e| e.to_string())?;
    ensure(!out.is_partial(), || format!("{} cells failed: {:?}", out.failures.len(), out.failures.first()))
}

#[test]
fn end_to_end_mock_reproduction() {
    criterion("end-to-end mock reproduction", Some(Duration::from_secs(15 * 60)), || {
        let mut reports = Vec::new();
        let mut dirs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let cfg = small_analysis(RunConfig { output_dir: dir.path().to_path_buf(), n: 30, ..RunConfig::default() });
            run_pipeline(&cfg)?;
            let report = read_tree(&RunDir::new(dir.path()).report_dir());
            reports.push(report.into_iter().filter(|(k, _)| k.ends_with(".csv")).collect::<Vec<_>>());
            dirs.push(dir);
        }
        ensure(reports[0].len() == 6, || format!("{} report CSVs", reports[0].len()))?;
        for ((name, a), (_, b)) in reports[0].iter().zip(&reports[1]) {
            ensure(a == b, || format!("{name} differs between identical runs"))?;
        }
        let path = RunDir::new(dirs[0].path()).report_dir().join("cell_summaries.csv");
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
        let mut cells = std::collections::BTreeSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            cells.insert(format!("{}/{}/{}-{}", &rec[0], &rec[1], &rec[3], &rec[4]));
        }
        let rows = csv::Reader::from_path(&path).map_err(|e| e.to_string())?.records().count();
        ensure(rows == 432 && cells.len() == 432, || format!("{rows} summary rows over {} cells", cells.len()))
    });
}
