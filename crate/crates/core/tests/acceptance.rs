//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use navsim::action::{bin_of_angle, fuse, select_edge, ActionDistribution, FusionWeights};
use navsim::citygraph::{CityGraph, EdgeRecord, GeoPoint, NodeId, NodeRecord};
use navsim::dataset::{EpisodeSpec, World};
use navsim::engine::{replay, run_episode, EpisodeConfig, Outcome, Registry, TrajectoryLog};
use navsim::eval::{spl, subsample_difficulty, EpisodeResult};
use navsim::instruction::{attend, attention_weights, peak_index, EmbeddedInstruction};
use navsim::landmarks::{objective, select_exact, select_greedy, HashScorer, ObjectiveWeights};
use navsim::memory::{MemoryImage, MARGIN};
use navsim::routegen::{shortest_route, Route};
use navsim::service::{router, AppState};
use navsim::synthworld::{build_dataset, generate_episode, generate_world, SynthWorld, WorldSpec};
use navsim::NavError;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn astar_matches_dijkstra() -> Check {
    let start = Instant::now();
    let pairs: Vec<(usize, usize)> = (0..200u64)
        .into_par_iter()
        .map(|seed| -> Result<(usize, usize), String> {
            let n = 20 + (seed as usize * 131) % 481;
            let g = common::random_graph(seed, n);
            let ids: Vec<NodeId> = g.node_ids().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5);
            let (mut checked, mut unreachable) = (0, 0);
            for _ in 0..5 {
                let s = ids[rng.random_range(0..ids.len())];
                let dist = common::dijkstra(&g, s);
                for _ in 0..8 {
                    let d = ids[rng.random_range(0..ids.len())];
                    checked += 1;
                    match (shortest_route(&g, s, d), dist.get(&d)) {
                        (Ok(r), Some(&want)) => {
                            let got = r.total_length();
                            ensure((got - want).abs() <= 1e-9 * want.max(1.0), || {
                                format!("graph {seed}: {s}->{d} A* {got} vs Dijkstra {want}")
                            })?;
                            let nodes = r.node_ids();
                            ensure(nodes[0] == s && *nodes.last().unwrap() == d, || "endpoints".into())?;
                            ensure(nodes.windows(2).all(|w| g.edge(w[0], w[1]).is_some()), || {
                                format!("graph {seed}: route {s}->{d} leaves the graph")
                            })?;
                        }
                        (Err(NavError::Unreachable { .. }), None) => unreachable += 1,
                        (got, want) => {
                            return Err(format!("graph {seed}: {s}->{d} A* {got:?} vs Dijkstra {want:?}"))
                        }
                    }
                }
            }
            Ok((checked, unreachable))
        })
        .collect::<Result<_, _>>()?;
    let elapsed = start.elapsed();
    let checked: usize = pairs.iter().map(|p| p.0).sum();
    let unreachable: usize = pairs.iter().map(|p| p.1).sum();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "200 graphs, {checked} pairs ({unreachable} unreachable) agree within 1e-9; {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn landmark_mining() -> Check {
    let mut ratios = Vec::new();
    let mut instances = 0;
    let mut seed = 0u64;
    while instances < 100 {
        seed += 1;
        let g = common::random_graph(seed, 60);
        let edges = 4 + (seed as usize % 10);
        let Some(path) = common::random_simple_path(&g, edges, seed) else { continue };
        let route = Route::from_nodes(&g, path).map_err(|e| e.to_string())?;
        let interior = route.node_ids().len() - 2;
        if !(3..=12).contains(&interior) {
            continue;
        }
        instances += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = if seed.is_multiple_of(2) {
            ObjectiveWeights::default()
        } else {
            // comparable term magnitudes so all three terms matter
            ObjectiveWeights {
                w1: rng.random_range(0.0..0.01),
                w2: rng.random_range(0.0..10.0),
                w3: rng.random_range(0.0..3.0),
                sigma: 15.0,
                l: 3,
            }
        };
        let scorer = HashScorer { salt: seed };
        let inter = g.intersections();

        let exact = select_exact(&route, &w, &scorer, &inter).map_err(|e| e.to_string())?;
        let greedy = select_greedy(&route, &w, &scorer, &inter).map_err(|e| e.to_string())?;
        let (want_set, want_val) = common::enumerate_best(&route, &w, &scorer, &inter);
        let mut got_set = exact.node_ids.clone();
        got_set.sort();
        ensure(got_set == want_set, || format!("instance {seed}: exact {got_set:?} vs enumerator {want_set:?}"))?;
        ensure((exact.objective_value - want_val).abs() <= 1e-9 * want_val.abs().max(1.0), || {
            format!("instance {seed}: value {} vs {want_val}", exact.objective_value)
        })?;
        let recomputed = objective(&route, &greedy.node_ids, &w, &scorer, &inter).map_err(|e| e.to_string())?;
        let oracle = common::objective_oracle(&route, &greedy.node_ids, &w, &scorer, &inter);
        ensure((recomputed - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), || {
            format!("instance {seed}: objective {recomputed} vs recomputation {oracle}")
        })?;
        ensure(greedy.objective_value <= exact.objective_value, || {
            format!("instance {seed}: greedy {} above exact {}", greedy.objective_value, exact.objective_value)
        })?;
        if exact.objective_value > 0.0 {
            ratios.push(greedy.objective_value / exact.objective_value);
        }
        for factor in [0.5, 2.0, 7.3, 1000.0] {
            let ws = w.scaled(factor);
            let e2 = select_exact(&route, &ws, &scorer, &inter).map_err(|e| e.to_string())?;
            let g2 = select_greedy(&route, &ws, &scorer, &inter).map_err(|e| e.to_string())?;
            ensure(e2.node_ids == exact.node_ids && g2.node_ids == greedy.node_ids, || {
                format!("instance {seed}: selection changed under scaling by {factor}")
            })?;
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let optimal = ratios.iter().filter(|&&r| r == 1.0).count();
    Ok(format!(
        "100 instances: exact == enumerator; greedy/exact ratio mean {mean:.4}, min {min:.4}, optimal on {optimal}; scaling invariant"
    ))
}

fn attention_kernel() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let j_count = rng.random_range(1..=8usize);
        let eta = rng.random_range(1.0..=j_count as f64);
        let w = attention_weights(eta, j_count);
        for (j, &x) in w.iter().enumerate() {
            let want = (-(eta - (j + 1) as f64).abs()).exp();
            worst = worst.max((x - want).abs());
        }
        // argmax of the kernel is the nearest index, halves to the lower one
        let argmax = w
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (k, &v)| if v > bv { (k, v) } else { (bi, bv) })
            .0
            + 1;
        ensure(argmax == peak_index(eta, j_count), || {
            format!("sample {i}: argmax {argmax} vs peak_index {} at eta {eta}", peak_index(eta, j_count))
        })?;
    }
    ensure(worst <= 1e-12, || format!("max kernel error {worst:e}"))?;

    for _ in 0..100 {
        let l: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let one = EmbeddedInstruction { landmark: vec![l.clone()], direction: vec![d.clone()] };
        ensure(attend(&one, 1.0, false) == (l.clone(), d.clone()), || "J=1 at eta=1 is not the identity".into())?;
        let eta = rng.random_range(0.0..3.0);
        ensure(attend(&one, eta, true) == (l, d), || "normalized J=1 is not the identity".into())?;
    }
    Ok(format!("1000 samples, max |error| {worst:.1e}; argmax at round(eta); J=1 identity exact"))
}

fn expected_pixel(origin: GeoPoint, p: GeoPoint, scale: f64) -> (i64, i64) {
    let k = common::R * std::f64::consts::PI / 180.0;
    let e = (p.lon - origin.lon) * origin.lat.to_radians().cos() * k;
    let n = (p.lat - origin.lat) * k;
    ((100.0 + e / scale).round() as i64, (100.0 - n / scale).round() as i64)
}

fn fits(origin: GeoPoint, trace: &[GeoPoint], scale: f64) -> bool {
    trace.iter().all(|&p| {
        let (x, y) = expected_pixel(origin, p, scale);
        (MARGIN..=200 - MARGIN).contains(&x) && (MARGIN..=200 - MARGIN).contains(&y)
    })
}

fn memory_raster() -> Check {
    let stats: Vec<(u32, usize)> = (0..10_000u64)
        .into_par_iter()
        .map(|seed| -> Result<(u32, usize), String> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let origin = GeoPoint { lat: rng.random_range(-60.0..60.0), lon: rng.random_range(-179.0..179.0) };
            let mut mem = MemoryImage::init(origin).map_err(|e| e.to_string())?;
            let (mut e, mut n) = (0.0, 0.0);
            let steps = rng.random_range(1..40);
            let mut max_rescale = 0;
            let mut resets = 0;
            for step in 0..steps {
                if rng.random_bool(0.05) {
                    let here = *mem.trace().last().unwrap();
                    mem.reset_at_landmark(here).map_err(|e| e.to_string())?;
                    resets += 1;
                }
                if !rng.random_bool(0.05) {
                    let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let dist = rng.random_range(5.0f64..400.0);
                    e += dist * heading.sin();
                    n += dist * heading.cos();
                }
                let p = common::offset(origin, e, n);
                mem.append(p).map_err(|e| e.to_string())?;

                let s = mem.scale();
                let r = mem.rescale_count();
                ensure(s == 5.0 * 1.25f64.powi(r as i32), || format!("walk {seed}: scale {s} with {r} rescales"))?;
                ensure(fits(mem.origin(), mem.trace(), s), || format!("walk {seed} step {step}: pixel in margin"))?;
                if r > 0 {
                    let smaller = 5.0 * 1.25f64.powi(r as i32 - 1);
                    ensure(!fits(mem.origin(), mem.trace(), smaller), || {
                        format!("walk {seed} step {step}: rescaled more than needed")
                    })?;
                }
                ensure(mem.current_pixel() == expected_pixel(mem.origin(), p, s), || {
                    format!("walk {seed} step {step}: current pixel")
                })?;
                max_rescale = max_rescale.max(r);
            }
            ensure(mem.raster() == mem.rerender().as_slice(), || {
                format!("walk {seed}: incremental raster differs from full render")
            })?;
            Ok((max_rescale, resets))
        })
        .collect::<Result<_, _>>()?;

    let origin = GeoPoint { lat: 40.7484, lon: -73.9857 };
    let mut mem = MemoryImage::init(origin).unwrap();
    mem.append(common::offset(origin, 0.0, 500.0)).unwrap();
    ensure(mem.rescale_count() == 1 && mem.scale() == 6.25, || {
        format!("500 m north: {} rescales, scale {}", mem.rescale_count(), mem.scale())
    })?;
    ensure(mem.current_pixel() == (100, 20), || format!("500 m north lands at {:?}", mem.current_pixel()))?;
    let max_r = stats.iter().map(|s| s.0).max().unwrap();
    Ok(format!(
        "10000 walks inside margin, incremental == full render, scale 5*1.25^n (n up to {max_r}); 500 m north -> 6.25 m/px at (100, 20)"
    ))
}

fn star(bearings: &[f64]) -> CityGraph {
    let c = GeoPoint { lat: 0.0, lon: 0.0 };
    let mut nodes = vec![NodeRecord { id: 0, lat: 0.0, lon: 0.0, pano: None }];
    let mut edges = Vec::new();
    for (i, &b) in bearings.iter().enumerate() {
        let p = common::offset(c, 100.0 * b.to_radians().sin(), 100.0 * b.to_radians().cos());
        nodes.push(NodeRecord { id: i as u64 + 1, lat: p.lat, lon: p.lon, pano: None });
        edges.push(EdgeRecord { from: 0, to: i as u64 + 1, bearing: Some(b), length: None });
    }
    CityGraph::from_records(nodes, edges).unwrap()
}

fn action_fusion() -> Check {
    let f = fuse(&ActionDistribution::delta(0), &ActionDistribution::delta(2), FusionWeights { w0: 1.0, w1: 3.0 })
        .map_err(|e| e.to_string())?;
    ensure(f.probs() == &[0.25, 0.0, 0.75, 0.0, 0.0, 0.0, 0.0, 0.0], || format!("{:?}", f.probs()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let random_dist = |rng: &mut ChaCha8Rng| {
        let raw: Vec<f64> = (0..8).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let mut p = [0.0; 8];
        let s: f64 = raw.iter().sum::<f64>() + 1e-300;
        for (o, r) in p.iter_mut().zip(&raw) {
            *o = r / s;
        }
        if s < 1e-200 {
            p[0] = 1.0;
        }
        ActionDistribution::new(p).unwrap()
    };
    for _ in 0..10_000 {
        let a = random_dist(&mut rng);
        let b = random_dist(&mut rng);
        let w = FusionWeights { w0: rng.random_range(0.0..5.0), w1: rng.random_range(1e-6..5.0) };
        let out = fuse(&a, &b, w).map_err(|e| e.to_string())?;
        ensure(out.probs().iter().all(|&p| p >= 0.0), || "negative probability".into())?;
        worst = worst.max((out.probs().iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst <= 1e-9, || format!("normalization error {worst:e}"))?;

    let to = |g: &CityGraph, angle: f64, heading: f64| select_edge(g, NodeId(0), angle, heading).unwrap().bearing;
    let g = star(&[0.0, 90.0]);
    ensure(to(&g, 50.0, 0.0) == 90.0, || "50 deg should pick the 90 deg edge".into())?;
    let g = star(&[10.0, 180.0]);
    ensure(to(&g, 350.0, 0.0) == 10.0, || "350 deg should wrap to the 10 deg edge".into())?;
    ensure(to(&g, -10.0, 0.0) == 10.0 && to(&g, 710.0, 0.0) == 10.0, || "equivalent angles disagree".into())?;
    let g = star(&[45.0, 315.0]);
    ensure(to(&g, 0.0, 0.0) == 45.0, || "tie should go to the lower bearing".into())?;
    ensure(bin_of_angle(22.5) == 1 && bin_of_angle(350.0) == 0, || "bin edges".into())?;
    Ok(format!("worked example exact; 10000 fusions, max |sum - 1| {worst:.1e}; select_edge wraparound and tie cases"))
}

fn results_of(logs: &[TrajectoryLog]) -> Vec<EpisodeResult> {
    logs.iter().map(|l| EpisodeResult::from_summary(&l.summary)).collect()
}

fn run_all(world: &Arc<World>, specs: &[EpisodeSpec], policy: &str, base_seed: u64) -> Result<Vec<TrajectoryLog>, String> {
    let registry = Registry::default();
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let seed = base_seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut bundle = registry.bundle(policy, "oracle", seed).map_err(|e| e.to_string())?;
            run_episode(Arc::clone(world), &format!("e{i}"), spec, &mut bundle, EpisodeConfig::default(), seed)
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn episodes(sw: &SynthWorld, difficulty: usize, count: usize, base: u64) -> Result<Vec<EpisodeSpec>, String> {
    (0..count)
        .into_par_iter()
        .map(|i| generate_episode(sw, difficulty, base + i as u64).map_err(|e| e.to_string()))
        .collect()
}

fn end_to_end(sw: &SynthWorld, parents: &[EpisodeSpec]) -> Check {
    let mut lines = Vec::new();
    let mut independent = Vec::new();
    for d in 1..=4 {
        let specs = episodes(sw, d, 500, 10_000 * d as u64)?;
        let logs = run_all(&sw.world, &specs, "oracle", d as u64)?;
        for (log, spec) in logs.iter().zip(&specs) {
            let s = &log.summary;
            ensure(s.outcome == Outcome::Success, || format!("difficulty {d}: oracle {}", s.outcome))?;
            ensure(s.traveled == spec.route.total_length(), || {
                format!("difficulty {d}: traveled {} vs shortest {}", s.traveled, spec.route.total_length())
            })?;
            let fired: Vec<NodeId> = log.steps.iter().filter(|r| r.phi).map(|r| r.node).collect();
            ensure(fired == spec.route.targets(), || format!("difficulty {d}: indicator fired at {fired:?}"))?;
        }
        let value = spl(&results_of(&logs)).map_err(|e| e.to_string())?;
        ensure(value == 100.0, || format!("difficulty {d}: oracle SPL {value}"))?;
        let random = run_all(&sw.world, &specs, "random", 40 + d as u64)?;
        independent.push(spl(&results_of(&random)).map_err(|e| e.to_string())?);
    }
    lines.push("oracle SPL 100 at d1-d4".to_string());

    // random policy across levels, on windows of the same 4-landmark routes
    let mut random = Vec::new();
    for level in 1..=4 {
        let windows: Vec<EpisodeSpec> = parents
            .iter()
            .map(|p| subsample_difficulty(p, level))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?
            .into_iter()
            .flatten()
            .collect();
        let logs = run_all(&sw.world, &windows, "random", 77 + level as u64)?;
        let results = results_of(&logs);
        let successes = results.iter().filter(|r| r.success).count();
        random.push((spl(&results).map_err(|e| e.to_string())?, successes, results.len()));
    }
    let trend = random
        .iter()
        .enumerate()
        .map(|(i, (v, s, n))| format!("L{} {v:.2} ({s}/{n})", i + 1))
        .collect::<Vec<_>>()
        .join(" > ");
    ensure(random.windows(2).all(|w| w[0].0 > w[1].0), || format!("random SPL not decreasing: {trend}"))?;
    let separate = independent.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" / ");
    Ok(format!("{}; random SPL on windows {trend}; on separately drawn d1-d4 routes {separate}", lines.join(", ")))
}

fn cross_difficulty(parents: &[EpisodeSpec]) -> Check {
    for (i, p) in parents.iter().enumerate() {
        for (level, count) in [(1, 4), (2, 3), (3, 2)] {
            let w = subsample_difficulty(p, level).map_err(|e| e.to_string())?;
            ensure(w.len() == count, || format!("route {i} level {level}: {} windows", w.len()))?;
            for sub in &w {
                ensure(
                    sub.instruction.instruction.len() == level && sub.route.targets().len() == level,
                    || format!("route {i} level {level}: pair/landmark count"),
                )?;
                ensure(sub.instruction.landmark_node_ids == sub.route.targets(), || "correspondence".into())?;
            }
        }
        let tiles = subsample_difficulty(p, 1).map_err(|e| e.to_string())?;
        let mut joined = vec![p.route.source()];
        for t in &tiles {
            ensure(t.route.source() == *joined.last().unwrap(), || "tiles do not chain".into())?;
            joined.extend(&t.route.node_ids()[1..]);
        }
        ensure(joined == p.route.node_ids(), || format!("route {i}: level-1 windows do not tile"))?;
        let total: f64 = tiles.iter().map(|t| t.route.total_length()).sum();
        ensure((total - p.route.total_length()).abs() <= 1e-9 * total, || "tile lengths".into())?;
    }
    let mut bad = parents[0].clone();
    bad.instruction.instruction = bad.instruction.instruction.window(0..3).unwrap();
    ensure(subsample_difficulty(&bad, 1).is_err(), || "3-pair route accepted".into())?;
    Ok(format!("{} routes: 4/3/2 windows, level-1 windows tile the parent", parents.len()))
}

fn spl_identities() -> Check {
    let r = |success, p| EpisodeResult { success, shortest_length: 250.0, traveled: p, final_error: 0.0, steps: 3 };
    let cases = [(r(true, 250.0), 100.0), (r(false, 250.0), 0.0), (r(true, 500.0), 50.0)];
    for (res, want) in cases {
        let got = spl(&[res]).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{res:?}: {got} != {want}"))?;
    }
    Ok("p = l -> 100, failure -> 0, p = 2l -> 50".into())
}

fn determinism(sw: &SynthWorld) -> Check {
    let mut specs = Vec::new();
    for d in 1..=4 {
        specs.extend(episodes(sw, d, 25, 900 + d as u64)?);
    }
    let registry = Registry::default();
    let mut replayed = 0;
    for policy in ["random", "oracle"] {
        let a = run_all(&sw.world, &specs, policy, 5)?;
        let b = run_all(&sw.world, &specs, policy, 5)?;
        for (i, ((x, y), spec)) in a.iter().zip(&b).zip(&specs).enumerate() {
            let text = x.to_jsonl();
            ensure(text == y.to_jsonl(), || format!("{policy} episode {i}: logs differ"))?;
            let parsed = TrajectoryLog::from_jsonl(&text).map_err(|e| e.to_string())?;
            replay(Arc::clone(&sw.world), spec, &parsed, &registry).map_err(|e| format!("{policy} episode {i}: {e}"))?;
            replayed += 1;
        }
    }
    Ok(format!("{replayed} logs byte-identical across reruns and replayed"))
}

fn service(sw: &SynthWorld) -> Check {
    let ds = build_dataset(sw, "grid", [4, 8, 4, 4], 31).map_err(|e| e.to_string())?;
    let routes: Vec<(String, EpisodeSpec)> = ds.episodes.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let world = Arc::clone(&ds.world);
    let state = Arc::new(AppState::new(vec![ds]));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(async move { axum::serve(listener, router(state)).await });
        let client = reqwest::Client::new();

        // round-trip latency
        let mut times = Vec::new();
        for i in 0..20 {
            let (id, _) = &routes[i % routes.len()];
            let t = Instant::now();
            let created: Value = client
                .post(format!("{base}/sessions"))
                .json(&json!({"dataset": "grid", "route": id, "mode": "human"}))
                .send().await.map_err(|e| e.to_string())?
                .json().await.map_err(|e| e.to_string())?;
            let sid = created["session_id"].as_str().ok_or("no session id")?.to_string();
            let obs = client.get(format!("{base}/sessions/{sid}/observation")).send().await.map_err(|e| e.to_string())?;
            ensure(obs.status() == 200, || format!("observe {}", obs.status()))?;
            let _: Value = obs.json().await.map_err(|e| e.to_string())?;
            let acted = client
                .post(format!("{base}/sessions/{sid}/action"))
                .json(&json!({"bin": 0}))
                .send().await.map_err(|e| e.to_string())?;
            ensure(acted.status() == 200, || format!("act {}", acted.status()))?;
            let _: Value = acted.json().await.map_err(|e| e.to_string())?;
            times.push(t.elapsed());
        }
        times.sort();
        let median = times[times.len() / 2];
        let max = *times.last().unwrap();
        ensure(median < Duration::from_millis(50), || format!("median round trip {median:?}"))?;

        // 16 human sessions driven in parallel along their ground-truth routes
        let tasks: Vec<_> = routes
            .iter()
            .take(16)
            .cloned()
            .map(|(rid, spec)| {
                let client = client.clone();
                let base = base.clone();
                let world = Arc::clone(&world);
                tokio::spawn(async move { drive(&client, &base, &rid, &spec, &world).await })
            })
            .collect();
        let mut ok = 0;
        for t in tasks {
            t.await.map_err(|e| e.to_string())??;
            ok += 1;
        }
        Ok(format!(
            "create/observe/act median {:.1} ms (max {:.1} ms); {ok} parallel sessions isolated, logs replay",
            median.as_secs_f64() * 1e3,
            max.as_secs_f64() * 1e3
        ))
    })
}

/// Walks one session along its route, checking every observation against
/// the expected position, then replays the server log.
async fn drive(client: &reqwest::Client, base: &str, rid: &str, spec: &EpisodeSpec, world: &Arc<World>) -> Result<(), String> {
    let created: Value = client
        .post(format!("{base}/sessions"))
        .json(&json!({"dataset": "grid", "route": rid, "mode": "human"}))
        .send().await.map_err(|e| e.to_string())?
        .json().await.map_err(|e| e.to_string())?;
    let sid = created["session_id"].as_str().ok_or("no id")?.to_string();
    let nodes = spec.route.node_ids();
    let mut heading = created["observation"]["heading"].as_f64().ok_or("no heading")?;
    for (k, w) in nodes.windows(2).enumerate() {
        let edge = world.graph.edge(w[0], w[1]).ok_or("route edge missing")?;
        let bin = bin_of_angle(edge.bearing - heading);
        let resp: Value = client
            .post(format!("{base}/sessions/{sid}/action"))
            .json(&json!({"bin": bin}))
            .send().await.map_err(|e| e.to_string())?
            .json().await.map_err(|e| e.to_string())?;
        let obs = &resp["observation"];
        ensure(obs["node"] == json!(w[1].0), || format!("{rid}: expected node {} got {}", w[1], obs["node"]))?;
        ensure(obs["steps"] == json!(k + 1), || format!("{rid}: step counter {}", obs["steps"]))?;
        heading = obs["heading"].as_f64().ok_or("no heading")?;
        tokio::task::yield_now().await;
    }
    let resp = client.post(format!("{base}/sessions/{sid}/action")).json(&json!({"bin": 0})).send().await.map_err(|e| e.to_string())?;
    ensure(resp.status() == 409, || format!("{rid}: act after success gave {}", resp.status()))?;
    let log: Value = client.get(format!("{base}/sessions/{sid}/log")).send().await.map_err(|e| e.to_string())?
        .json().await.map_err(|e| e.to_string())?;
    ensure(log["summary"]["outcome"] == "success", || format!("{rid}: outcome {}", log["summary"]["outcome"]))?;
    let mut text = String::new();
    for s in log["steps"].as_array().ok_or("no steps")? {
        let mut s = s.clone();
        s["type"] = json!("step");
        text.push_str(&s.to_string());
        text.push('\n');
    }
    let mut summary = log["summary"].clone();
    summary["type"] = json!("summary");
    text.push_str(&summary.to_string());
    let parsed = TrajectoryLog::from_jsonl(&text).map_err(|e| e.to_string())?;
    ensure(parsed.summary.nodes == nodes, || format!("{rid}: foreign trajectory in log"))?;
    replay(Arc::clone(world), spec, &parsed, &Registry::default()).map_err(|e| format!("{rid}: {e}"))?;
    Ok(())
}

fn main() {
    let suite = Instant::now();
    let sw = generate_world(&WorldSpec::default()).expect("world");
    let parents = episodes(&sw, 4, 500, 50_000).expect("4-landmark routes");

    let criteria: Vec<Criterion> = vec![
        ("A* correctness", Box::new(astar_matches_dijkstra)),
        ("Landmark mining", Box::new(landmark_mining)),
        ("Attention kernel", Box::new(attention_kernel)),
        ("Memory raster", Box::new(memory_raster)),
        ("Action fusion", Box::new(action_fusion)),
        ("End-to-end oracle and random trend", Box::new(|| end_to_end(&sw, &parents))),
        ("Cross-difficulty sub-sampling", Box::new(|| cross_difficulty(&parents))),
        ("SPL identities", Box::new(spl_identities)),
        ("Engine determinism and replay", Box::new(|| determinism(&sw))),
        ("Service", Box::new(|| service(&sw))),
    ];

    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.2} s]");
            }
        }
    }
    let total = suite.elapsed();
    if total < Duration::from_secs(120) {
        println!("PASS Suite runtime: {:.1} s (limit 120 s)", total.as_secs_f64());
    } else {
        failed += 1;
        println!("FAIL Suite runtime: {:.1} s (limit 120 s)", total.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
