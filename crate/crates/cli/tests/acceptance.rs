//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Library-level criteria use independent oracles defined here; the pipeline
//! criteria drive the `gmop` binary. The process exits nonzero if any fail.

use std::collections::HashSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use gmop::evaljoint::{joint_min_ade, joint_min_fde, kde_nll};
use gmop::flow::{forward_normalize, inverse_generate, log_prob, nll_loss_tape, FlowConfig, FlowInit, FlowStack};
use gmop::graphs::{all_pairs, dagify_with_log, topological_order, Edge, GraphStrategy, InteractionGraph};
use gmop::model::*;
use gmop::neural::{
    grad_check, weighted_cross_entropy_tape, Activation, Dense, GruCell, GruDecoder, ParamStore, Tape, Tensor, Var,
};
use gmop::scene::{generate_synthetic, split_dataset, Agent, AgentId, GeneratorConfig, ObservedScene, Preset, Scene, Template};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Traj = Vec<Vec<[f64; 2]>>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn randv(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

fn gmop_cli(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gmop"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| format!("cannot run gmop: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "gmop {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn random_flow(dim: usize, cond: usize, hidden: usize, seed: u64) -> (FlowStack, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = FlowConfig {
        hidden,
        init: FlowInit::Random(0.5),
        ..FlowConfig::new(dim, cond)
    };
    (FlowStack::new(&mut store, "f", cfg, &mut rng).unwrap(), store)
}

// ---------------------------------------------------------------- flows

fn flow_invertibility() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for init in 0..10 {
        let (flow, store) = random_flow(6, 4, 64, 1000 + init);
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + init);
        for _ in 0..1000 {
            let y = randv(&mut rng, 6, 3.0);
            let c = randv(&mut rng, 4, 2.0);
            let (z, _) = forward_normalize(&y, &c, &flow, &store).map_err(|e| e.to_string())?;
            let back = inverse_generate(&z, &c, &flow, &store).map_err(|e| e.to_string())?;
            let err = y.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
            pairs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-6, || format!("max reconstruction error {worst:e}"))?;
    check(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{pairs} pairs over 10 initializations, max error {worst:.1e}, {secs:.1} s"))
}

/// Central-difference Jacobian of the forward map.
fn fd_jacobian(flow: &FlowStack, store: &ParamStore, y: &[f64], c: &[f64]) -> DMatrix<f64> {
    let d = y.len();
    let h = 1e-6;
    let mut j = DMatrix::zeros(d, d);
    for col in 0..d {
        let mut up = y.to_vec();
        let mut dn = y.to_vec();
        up[col] += h;
        dn[col] -= h;
        let (zu, _) = forward_normalize(&up, c, flow, store).unwrap();
        let (zd, _) = forward_normalize(&dn, c, flow, store).unwrap();
        for row in 0..d {
            j[(row, col)] = (zu[row] - zd[row]) / (2.0 * h);
        }
    }
    j
}

fn flow_log_determinant() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for dim in 2..=6 {
        let (flow, store) = random_flow(dim, 3, 32, 30 + dim as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(40 + dim as u64);
        for _ in 0..100 {
            let y = randv(&mut rng, dim, 2.0);
            let c = randv(&mut rng, 3, 1.0);
            let (_, ld) = forward_normalize(&y, &c, &flow, &store).map_err(|e| e.to_string())?;
            let det = fd_jacobian(&flow, &store, &y, &c).determinant().abs();
            worst = worst.max((ld.exp() - det).abs() / det);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4, || format!("max relative determinant error {worst:e}"))?;
    check(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("dims 2-6 x 100 points, max relative error {worst:.1e}, {secs:.1} s"))
}

// ---------------------------------------------------------------- gradients

/// Random parameters of the given shapes, kept at least 0.1 away from zero
/// (or strictly positive) so kinks and clamps are not straddled.
fn op_store(shapes: &[(usize, usize)], positive: bool, seed: u64) -> (ParamStore, Vec<gmop::neural::ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(k, &(r, c))| {
            let data = (0..r * c)
                .map(|_| {
                    let m = rng.random_range(0.1..1.0);
                    if positive {
                        m + 0.4
                    } else if rng.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            store.add(format!("p{k}"), Tensor::from_vec(r, c, data))
        })
        .collect();
    (store, ids)
}

/// Projects `out` onto fixed random weights so every output entry matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = (tape.value(out).rows(), tape.value(out).cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::from_vec(r, c, randv(&mut rng, r * c, 1.0)));
    let prod = tape.mul(out, w);
    tape.sum_all(prod)
}

type OpFn = fn(&mut Tape, &[Var]) -> Var;

fn gradient_suite() -> Outcome {
    let ops: Vec<(&str, Vec<(usize, usize)>, bool, OpFn)> = vec![
        ("matmul", vec![(3, 4), (4, 2)], false, |t, v| t.matmul(v[0], v[1])),
        ("add", vec![(3, 4), (3, 4)], false, |t, v| t.add(v[0], v[1])),
        ("sub", vec![(3, 4), (3, 4)], false, |t, v| t.sub(v[0], v[1])),
        ("mul", vec![(3, 4), (3, 4)], false, |t, v| t.mul(v[0], v[1])),
        ("add_row", vec![(3, 4), (1, 4)], false, |t, v| t.add_row(v[0], v[1])),
        ("scale_rows", vec![(3, 4), (3, 1)], false, |t, v| t.scale_rows(v[0], v[1])),
        ("scale", vec![(3, 4)], false, |t, v| t.scale(v[0], -1.7)),
        ("add_scalar", vec![(3, 4)], false, |t, v| {
            let s = t.add_scalar(v[0], 0.3);
            t.square(s)
        }),
        ("one_minus", vec![(3, 4)], false, |t, v| t.one_minus(v[0])),
        ("tanh", vec![(3, 4)], false, |t, v| t.tanh(v[0])),
        ("sigmoid", vec![(3, 4)], false, |t, v| t.sigmoid(v[0])),
        ("relu", vec![(3, 4)], false, |t, v| t.relu(v[0])),
        ("exp", vec![(3, 4)], false, |t, v| t.exp(v[0])),
        ("log_clamped", vec![(3, 4)], true, |t, v| t.log_clamped(v[0], 1e-3)),
        ("square", vec![(3, 4)], false, |t, v| t.square(v[0])),
        ("concat_cols", vec![(3, 2), (3, 3)], false, |t, v| t.concat_cols(&[v[0], v[1]])),
        ("slice_cols", vec![(3, 4)], false, |t, v| t.slice_cols(v[0], 1, 3)),
        ("gather_cols", vec![(3, 4)], false, |t, v| t.gather_cols(v[0], &[2, 0, 2])),
        ("concat_rows", vec![(2, 3), (1, 3)], false, |t, v| t.concat_rows(&[v[0], v[1]])),
        ("gather_rows", vec![(3, 4)], false, |t, v| t.gather_rows(v[0], &[1, 1, 0])),
        ("scatter_add_rows", vec![(3, 4)], false, |t, v| t.scatter_add_rows(v[0], &[0, 2, 0], 4)),
        ("broadcast_rows", vec![(1, 3)], false, |t, v| t.broadcast_rows(v[0], 4)),
        ("sum_all", vec![(3, 4)], false, |t, v| {
            let s = t.square(v[0]);
            t.sum_all(s)
        }),
        ("row_sums", vec![(3, 4)], false, |t, v| t.row_sums(v[0])),
        ("softmax_rows", vec![(3, 4)], false, |t, v| t.softmax_rows(v[0])),
    ];
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut record = |name: String, report: gmop::neural::GradCheckReport| {
        checked += 1;
        worst = worst.max(report.max_rel_error);
        if !report.pass {
            failures.push(format!("{name} ({:.1e})", report.max_rel_error));
        }
    };

    for (k, (name, shapes, positive, op)) in ops.into_iter().enumerate() {
        let (mut store, ids) = op_store(&shapes, positive, 500 + k as u64);
        let report = grad_check(&mut store, 1e-4, |tape, store| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let out = op(tape, &vars);
            project(tape, out, 900 + k as u64)
        });
        record(name.to_string(), report);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let x = Tensor::from_vec(5, 3, randv(&mut rng, 15, 1.5));
    for (act, name) in [(Activation::Identity, "dense identity"), (Activation::Tanh, "dense tanh"), (Activation::Relu, "dense relu")] {
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "d", 3, 4, act, &mut rng);
        let bias = randv(&mut rng, 4, 0.3);
        store.value_mut(layer.b).data_mut().copy_from_slice(&bias);
        let report = grad_check(&mut store, 1e-4, |tape, store| {
            let xv = tape.constant(x.clone());
            let y = layer.forward(tape, store, xv);
            project(tape, y, 62)
        });
        record(name.to_string(), report);
    }

    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "g", 2, 5, &mut rng);
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
    }
    let seq: Vec<Tensor> = (0..6).map(|_| Tensor::from_vec(3, 2, randv(&mut rng, 6, 1.0))).collect();
    let report = grad_check(&mut store, 1e-4, |tape, store| {
        let steps: Vec<Var> = seq.iter().map(|s| tape.constant(s.clone())).collect();
        let h = cell.encode(tape, store, &steps);
        project(tape, h, 63)
    });
    record("gru encoder".into(), report);

    let mut store = ParamStore::new();
    let dec = GruDecoder::new(&mut store, "dec", 6, &mut rng);
    let h0 = Tensor::from_vec(2, 6, randv(&mut rng, 12, 0.8));
    let report = grad_check(&mut store, 1e-4, |tape, store| {
        let hv = tape.constant(h0.clone());
        let ys = dec.decode(tape, store, hv, 5);
        let all = tape.concat_cols(&ys);
        project(tape, all, 64)
    });
    record("gru decoder".into(), report);

    let (flow, mut store) = random_flow(4, 3, 16, 65);
    let y = Tensor::from_vec(5, 4, randv(&mut rng, 20, 1.5));
    let c = Tensor::from_vec(5, 3, randv(&mut rng, 15, 1.0));
    let report = grad_check(&mut store, 1e-4, |tape, store| {
        let yv = tape.constant(y.clone());
        let cv = tape.constant(c.clone());
        nll_loss_tape(tape, &flow, store, yv, cv)
    });
    record("flow nll".into(), report);

    let (mut store, ids) = op_store(&[(6, 3)], false, 66);
    let report = grad_check(&mut store, 1e-4, |tape, store| {
        let logits = tape.param(store, ids[0]);
        let probs = tape.softmax_rows(logits);
        weighted_cross_entropy_tape(tape, probs, &[0, 2, 1, 1, 0, 2], &[0.3, 1.4, 1.3])
    });
    record("weighted cross-entropy".into(), report);

    let scene = &corpus(Template::CrossingIntersection, 2, 2, 1, 19)[0];
    let ae = Autoencoder::new(AutoencoderConfig {
        hidden: 8,
        latent_dim: 8,
        ..AutoencoderConfig::default()
    });
    let ids = scene.ids();
    let graph = InteractionGraph::from_edges(ids.clone(), vec![Edge { src: ids[1], dst: ids[0], weight: 0.8 }]).unwrap();
    for strategy in [GraphStrategy::Euclidean, GraphStrategy::NoHeuristic] {
        let cfg = ModelConfig {
            latent_dim: 8,
            past_hidden: 4,
            context_dim: 4,
            flow_layers: 2,
            flow_hidden: 4,
            classifier_enc_dim: 3,
            classifier_embed_dim: 4,
            seed: 9,
            ..ModelConfig::default()
        };
        let mut model = GmopModel::new(GmopVariant::new(strategy, cfg)).map_err(|e| e.to_string())?;
        if let Some(net) = model.classifier.clone() {
            let fit: Vec<_> = corpus(Template::CrossingIntersection, 2, 4, 20, 22).iter().map(|s| s.observed()).collect();
            net.fit_standardization(&mut model.store, &fit);
        }
        perturb(&mut model.store, 5, 0.5);
        let mut store = model.store.clone();
        let report = grad_check(&mut store, 1e-4, |tape, store| model.joint_nll_tape(tape, store, scene, &graph, &ae).unwrap());
        record(format!("joint loss ({strategy})"), report);
    }

    check(failures.is_empty(), || format!("failed: {}", failures.join(", ")))?;
    Ok(format!("{checked} checks, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- factorization

fn corpus(template: Template, min: usize, max: usize, count: usize, seed: u64) -> Vec<Scene> {
    let cfg = GeneratorConfig::single(template, Preset::InteractionLike, min, max);
    generate_synthetic(&cfg, count, seed).unwrap()
}

fn perturb(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}

/// Concatenates the agents of several scenes into one, renumbering ids.
fn merge_scenes(parts: &[Scene]) -> Scene {
    let mut agents = Vec::new();
    for s in parts {
        for a in &s.agents {
            agents.push(Agent {
                id: AgentId(agents.len() as u32),
                ..a.clone()
            });
        }
    }
    Scene::new("merged", parts[0].sampling_hz, agents, None).unwrap()
}

fn random_dag(ids: &[AgentId], rng: &mut ChaCha8Rng) -> InteractionGraph {
    let mut order = ids.to_vec();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if rng.random_bool(0.4) {
                edges.push(Edge {
                    src: order[i],
                    dst: order[j],
                    weight: rng.random_range(0.1..1.0),
                });
            }
        }
    }
    InteractionGraph::from_edges(ids.to_vec(), edges).unwrap()
}

/// Inner classifier probability of the class pointing along `src -> dst`.
fn learned_edge_weight(model: &GmopModel, scene: &ObservedScene, src: usize, dst: usize) -> f64 {
    let net = model.classifier.as_ref().unwrap();
    let pairs = all_pairs(scene.n_agents());
    let mut tape = Tape::new();
    let p = net.pair_probs(&mut tape, &model.store, scene, &pairs);
    let probs = tape.value(p);
    let (lo, hi, class) = if src < dst { (src, dst, 1) } else { (dst, src, 2) };
    let row = pairs.iter().position(|&q| q == (lo, hi)).unwrap();
    probs.get(row, class)
}

/// Sum over agents of `-log p(y_a | c_a, pooled parents)`, one agent at a time.
fn oracle_nll(scene: &Scene, graph: &InteractionGraph, model: &GmopModel, ae: &Autoencoder) -> f64 {
    let observed = scene.observed();
    let context = encode_context(&observed, graph, model).unwrap();
    let latents = ae.scene_latents(scene);
    let mut total = 0.0;
    for (a, agent) in scene.agents.iter().enumerate() {
        let mut pooled = vec![0.0; model.latent_dim()];
        for (parent, _) in graph.parents(agent.id) {
            let p = scene.index_of(parent).unwrap();
            let factor = if model.weighted_pooling() {
                learned_edge_weight(model, &observed, p, a)
            } else {
                1.0
            };
            for (acc, y) in pooled.iter_mut().zip(latents.row(p)) {
                *acc += factor * y;
            }
        }
        let cond: Vec<f64> = context[a].iter().chain(&pooled).copied().collect();
        total -= log_prob(latents.row(a), &cond, &model.flow, &model.store).unwrap();
    }
    total
}

fn likelihood_factorization() -> Outcome {
    let parts = corpus(Template::IndependentLanes, 4, 4, 200, 71);
    let ae = Autoencoder::new(AutoencoderConfig {
        hidden: 8,
        latent_dim: 4,
        seed: 72,
        ..AutoencoderConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for strategy in [GraphStrategy::Euclidean, GraphStrategy::NoHeuristic] {
        let cfg = ModelConfig {
            latent_dim: 4,
            past_hidden: 8,
            context_dim: 8,
            flow_layers: 2,
            flow_hidden: 8,
            classifier_enc_dim: 4,
            classifier_embed_dim: 8,
            seed: 74,
            ..ModelConfig::default()
        };
        let mut model = GmopModel::new(GmopVariant::new(strategy, cfg)).map_err(|e| e.to_string())?;
        perturb(&mut model.store, 75, 0.3);
        for t in 0..100 {
            let merged = merge_scenes(&parts[2 * t..2 * t + 2]);
            let n = rng.random_range(1..=8);
            let scene = Scene::new("sub", merged.sampling_hz, merged.agents[..n].to_vec(), None).unwrap();
            let graph = random_dag(&scene.ids(), &mut rng);
            let got = joint_scene_nll(&scene, &graph, &model, &ae).map_err(|e| e.to_string())?;
            let expected = oracle_nll(&scene, &graph, &model, &ae);
            worst = worst.max((got - expected).abs());
            cases += 1;
        }
    }
    check(worst < 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("{cases} random DAGs of 1-8 agents, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- dagify

/// Transitive closure by Warshall's algorithm; `reach[u][v]` means a path of length >= 1.
fn closure(n: usize, edges: &[Edge]) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; n]; n];
    for e in edges {
        reach[e.src.0 as usize][e.dst.0 as usize] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

fn on_cycle(n: usize, edges: &[Edge], e: &Edge) -> bool {
    closure(n, edges)[e.dst.0 as usize][e.src.0 as usize]
}

fn random_digraph(rng: &mut ChaCha8Rng) -> InteractionGraph {
    let n = rng.random_range(1..=10u32);
    let density = rng.random_range(0.0..1.0);
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random_bool(density) {
                let weight = rng.random_range(1..=5) as f64 / 5.0;
                edges.push(Edge { src: AgentId(s), dst: AgentId(d), weight });
            }
        }
    }
    InteractionGraph::from_edges((0..n).map(AgentId).collect(), edges).unwrap()
}

fn dagify_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut removed_total = 0;
    for trial in 0..10_000 {
        let g = random_digraph(&mut rng);
        let n = g.nodes.len();
        let (dag, removed) = dagify_with_log(&g);
        let mut current = g.edges.clone();
        for r in &removed {
            check(on_cycle(n, &current, r), || format!("graph {trial}: removed {r:?} was not on a cycle"))?;
            let lightest = current
                .iter()
                .filter(|e| on_cycle(n, &current, e))
                .min_by(|a, b| a.weight.total_cmp(&b.weight).then((a.src, a.dst).cmp(&(b.src, b.dst))))
                .unwrap();
            check(lightest == r, || format!("graph {trial}: removed {r:?} but {lightest:?} was lighter"))?;
            current.retain(|e| e != r);
        }
        removed_total += removed.len();
        check(current == dag.edges, || format!("graph {trial}: kept edges differ from the removal log"))?;
        let reach = closure(n, &dag.edges);
        check((0..n).all(|v| !reach[v][v]), || format!("graph {trial}: output has a cycle"))?;
        let order = topological_order(&dag).map_err(|e| format!("graph {trial}: {e}"))?;
        let pos = |id| order.iter().position(|&o| o == id).unwrap();
        check(dag.edges.iter().all(|e| pos(e.src) < pos(e.dst)), || format!("graph {trial}: order violates an edge"))?;
    }
    Ok(format!("10000 random digraphs, {removed_total} edges removed, all on cycles"))
}

// ---------------------------------------------------------------- graphs via CLI

fn heuristic_directions() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let p = dir.path();
    gmop_cli(&["generate", "--template", "crossing-intersection", "--n", "500", "--seed", "11", "--out", "d"], p)?;
    gmop_cli(&["graphs", "--scenes", "d/scenes.jsonl", "--strategies", "crossing,flipped-crossing", "--out", "g"], p)?;
    let m = read_json(&p.join("g/manifest.json"))?;
    let direct = m["strategies"]["crossing"]["direction_accuracy"].as_f64().ok_or("missing crossing accuracy")?;
    let flipped = m["strategies"]["flipped-crossing"]["reversed_accuracy"].as_f64().ok_or("missing flipped accuracy")?;
    let detail = format!("crossing direction accuracy {direct:.3}, flipped reversed accuracy {flipped:.3}");
    check(direct >= 0.95 && flipped >= 0.95, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- classifier via CLI

const CLASSIFIER_CONFIG: &str = "\
[pretrain]
val_fraction = 0.2
split_seed = 3
[pretrain.classifier]
enc_dim = 32
embed_dim = 128
epochs = 80
";

fn classifier_accuracy() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let p = dir.path();
    fs::write(p.join("clf.toml"), CLASSIFIER_CONFIG).map_err(|e| e.to_string())?;
    gmop_cli(&["generate", "--template", "balanced", "--n", "8000", "--seed", "1", "--out", "d"], p)?;
    let start = Instant::now();
    let stdout = gmop_cli(&["--config", "clf.toml", "pretrain", "classifier", "--scenes", "d/scenes.jsonl", "--out", "p"], p)?;
    let secs = start.elapsed().as_secs_f64();
    let m = read_json(&p.join("p/classifier/manifest.json"))?;
    let acc = m["report"]["accuracy"].as_f64().ok_or("missing accuracy")?;
    let held = m["report"]["confusion"]
        .as_array()
        .map(|rows| rows.iter().flat_map(|r| r.as_array().into_iter().flatten()).filter_map(|v| v.as_u64()).sum::<u64>())
        .unwrap_or(0);
    check(stdout.contains("true\\pred"), || "no confusion table printed".into())?;
    check(acc >= 0.90, || format!("held-out accuracy {acc:.4} on {held} pairs"))?;
    check(secs < 600.0, || format!("took {secs:.0} s"))?;
    Ok(format!("held-out accuracy {acc:.4} on {held} pairs, {secs:.0} s"))
}

// ---------------------------------------------------------------- multimodality

/// Which agent's future moves the furthest relative to constant-speed
/// extrapolation of its last observed step: that agent went first.
fn leader(scene: &Scene, future: &[Vec<[f64; 2]>]) -> usize {
    let ratios: Vec<f64> = scene
        .agents
        .iter()
        .zip(future)
        .map(|(a, f)| {
            let p = &a.past.positions;
            let last = p[p.len() - 1];
            let speed = last.distance(p[p.len() - 2]);
            let end = f[f.len() - 1];
            (end[0] - last.x).hypot(end[1] - last.y) / (speed * f.len() as f64)
        })
        .collect();
    usize::from(ratios[1] > ratios[0])
}

fn yield_or_go_modes() -> Outcome {
    let start = Instant::now();
    let cfg = GeneratorConfig::single(Template::YieldOrGo, Preset::InteractionLike, 2, 2);
    let scenes = generate_synthetic(&cfg, 1500, 8).map_err(|e| e.to_string())?;
    let (train_all, test) = split_dataset(&scenes, 0.8, 1).map_err(|e| e.to_string())?;
    let (tr, val) = split_dataset(&train_all, 0.85, 2).map_err(|e| e.to_string())?;
    let agree = test
        .iter()
        .filter(|s| {
            let f: Traj = s.future_positions().iter().map(|t| t.iter().map(|v| v.to_array()).collect()).collect();
            leader(s, &f) as u32 == s.annotations.as_ref().unwrap().priority[0].0
        })
        .count();
    check(agree == test.len(), || format!("mode oracle matches ground truth on only {agree}/{}", test.len()))?;

    let ae_cfg = AutoencoderConfig {
        steps: 1500,
        ..AutoencoderConfig::default()
    };
    let (ae, _) = pretrain_autoencoder(&tr, &val, &ae_cfg).map_err(|e| e.to_string())?;
    let mc = ModelConfig {
        epochs: 60,
        ..ModelConfig::default()
    };
    let out = train(GmopVariant::new(GraphStrategy::Euclidean, mc), &tr, &val, ae, None, None).map_err(|e| e.to_string())?;
    let initial = out.log[0].val_nll;
    let best = out.log.iter().map(|r| r.val_nll).fold(f64::INFINITY, f64::min);

    let mut covered = 0;
    for (i, s) in test.iter().enumerate() {
        let samples = predict_scene(&s.observed(), &out.bundle, 100, i as u64).map_err(|e| e.to_string())?;
        let first = samples.iter().filter(|x| leader(s, x) == 1).count();
        if first.min(100 - first) >= 20 {
            covered += 1;
        }
    }
    let share = covered as f64 / test.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{covered}/{} scenes show both orders in >= 20% of 100 samples, validation NLL {initial:.2} -> {best:.2}, {secs:.0} s",
        test.len()
    );
    check(share >= 0.8 && best < initial && secs < 1800.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- metrics

fn random_joint(rng: &mut ChaCha8Rng, agents: usize, steps: usize) -> Traj {
    (0..agents)
        .map(|_| (0..steps).map(|_| [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)]).collect())
        .collect()
}

fn brute_min(samples: &[Traj], gt: &Traj, final_only: bool) -> f64 {
    let mut best = f64::INFINITY;
    for s in samples {
        let mut total = 0.0;
        let mut count = 0;
        for a in 0..gt.len() {
            let first = if final_only { gt[a].len() - 1 } else { 0 };
            for t in first..gt[a].len() {
                total += (s[a][t][0] - gt[a][t][0]).hypot(s[a][t][1] - gt[a][t][1]);
                count += 1;
            }
        }
        best = best.min(total / count as f64);
    }
    best
}

/// Direct Gaussian product-kernel density with rule-of-thumb bandwidths.
fn brute_kde_nll(samples: &[Traj], gt: &Traj) -> f64 {
    let flat = |j: &Traj| -> Vec<f64> { j.iter().flatten().flat_map(|p| [p[0], p[1]]).collect() };
    let pts: Vec<Vec<f64>> = samples.iter().map(flat).collect();
    let x = flat(gt);
    let (m, d) = (pts.len() as f64, x.len());
    let h: Vec<f64> = (0..d)
        .map(|k| {
            let mean = pts.iter().map(|p| p[k]).sum::<f64>() / m;
            let sd = (pts.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
            (sd * m.powf(-1.0 / (d as f64 + 4.0))).max(1e-3)
        })
        .collect();
    let density: f64 = pts
        .iter()
        .map(|p| {
            (0..d)
                .map(|k| (-0.5 * ((x[k] - p[k]) / h[k]).powi(2)).exp() / (h[k] * (2.0 * std::f64::consts::PI).sqrt()))
                .product::<f64>()
        })
        .sum::<f64>()
        / m;
    -density.ln()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, t, s) = (rng.random_range(1..5), rng.random_range(1..12), rng.random_range(1..8));
        let gt = random_joint(&mut rng, a, t);
        let samples: Vec<Traj> = (0..s).map(|_| random_joint(&mut rng, a, t)).collect();
        let ade = joint_min_ade(&samples, &gt).map_err(|e| e.to_string())?;
        let fde = joint_min_fde(&samples, &gt).map_err(|e| e.to_string())?;
        worst = worst.max((ade - brute_min(&samples, &gt, false)).abs());
        worst = worst.max((fde - brute_min(&samples, &gt, true)).abs());
    }
    check(worst < 1e-9, || format!("distance metrics deviate by {worst:e}"))?;

    for _ in 0..200 {
        let gt = random_joint(&mut rng, 3, 10);
        let mut samples: Vec<Traj> = (0..5).map(|_| random_joint(&mut rng, 3, 10)).collect();
        samples.insert(rng.random_range(0..=5), gt.clone());
        let (ade, fde) = (joint_min_ade(&samples, &gt).unwrap(), joint_min_fde(&samples, &gt).unwrap());
        check(ade == 0.0 && fde == 0.0, || format!("ground truth among samples gave {ade}, {fde}"))?;
    }

    for _ in 0..200 {
        let gt = random_joint(&mut rng, 3, 8);
        let samples: Vec<Traj> = (0..12).map(|_| random_joint(&mut rng, 3, 8)).collect();
        let (mut ade, mut fde) = (f64::INFINITY, f64::INFINITY);
        for k in 1..=samples.len() {
            let (a, f) = (joint_min_ade(&samples[..k], &gt).unwrap(), joint_min_fde(&samples[..k], &gt).unwrap());
            check(a <= ade && f <= fde, || format!("metric grew when adding sample {k}"))?;
            (ade, fde) = (a, f);
        }
    }

    let mut kde_worst: f64 = 0.0;
    for _ in 0..200 {
        let gt: Traj = (0..2).map(|_| (0..2).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()).collect();
        let samples: Vec<Traj> = (0..30)
            .map(|_| gt.iter().map(|t| t.iter().map(|p| [p[0] + rng.random_range(-1.0..1.0), p[1] + rng.random_range(-1.0..1.0)]).collect()).collect())
            .collect();
        let got = kde_nll(&samples, &gt).map_err(|e| e.to_string())?;
        kde_worst = kde_worst.max((got - brute_kde_nll(&samples, &gt)).abs());
    }
    check(kde_worst < 1e-9, || format!("density NLL deviates by {kde_worst:e}"))?;
    Ok(format!("1000 brute-force instances (max deviation {worst:.1e}), zero with ground truth, monotone over nested sets, density NLL within {kde_worst:.1e}"))
}

// ---------------------------------------------------------------- pipelines

const TREND_CONFIG: &str = "\
[pretrain.autoencoder]
steps = 1500
[pretrain.classifier]
epochs = 30
[train.model]
epochs = 30
";

/// generate, pretrain, train both variants over `seeds`, evaluate, compare.
fn pipeline(p: &Path, config: &str, n_train: &str, n_test: &str, variants: &[&str], seeds: &[&str]) -> Result<String, String> {
    fs::write(p.join("run.toml"), config).map_err(|e| e.to_string())?;
    gmop_cli(&["generate", "--template", "crossing-intersection", "--n", n_train, "--seed", "1", "--out", "d"], p)?;
    gmop_cli(&["generate", "--template", "crossing-intersection", "--n", n_test, "--seed", "2", "--out", "t"], p)?;
    gmop_cli(&["--config", "run.toml", "pretrain", "both", "--scenes", "d/scenes.jsonl", "--out", "p"], p)?;
    for v in variants {
        for s in seeds {
            let bundle = format!("b/{v}-{s}");
            let metrics = format!("runs/{v}-{s}.csv");
            gmop_cli(
                &[
                    "--config", "run.toml", "train", "--variant", v, "--scenes", "d/scenes.jsonl", "--autoencoder", "p/autoencoder",
                    "--classifier", "p/classifier", "--seed", s, "--out", &bundle,
                ],
                p,
            )?;
            gmop_cli(&["evaluate", "--bundle", &bundle, "--scenes", "t/scenes.jsonl", "--out", &metrics], p)?;
        }
    }
    gmop_cli(&["compare", "--runs", "runs", "--out", "summary/summary.csv", "--plot", "summary/strip.svg"], p)
}

fn structure_helps() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let p = dir.path();
    let start = Instant::now();
    let stdout = pipeline(p, TREND_CONFIG, "1500", "200", &["crossing", "no-heuristic"], &["0", "1", "2"])?;
    let t = read_json(&p.join("summary/trend.json"))?;
    let better = t["better_nll"].as_f64().unwrap_or(f64::NAN);
    let worse = t["worse_nll"].as_f64().unwrap_or(f64::NAN);
    let detail = format!(
        "mean joint NLL crossing {better:.2} vs no-heuristic {worse:.2} over 3 seeds, {:.0} s",
        start.elapsed().as_secs_f64()
    );
    check(t["holds"] == serde_json::Value::Bool(true), || detail.clone())?;
    check(stdout.contains("holds"), || "compare did not report the trend".into())?;
    Ok(detail)
}

const SMALL_CONFIG: &str = "\
[pretrain.autoencoder]
steps = 200
[pretrain.classifier]
epochs = 4
[train.model]
epochs = 4
";

fn reproducibility() -> Outcome {
    let runs: Vec<TempDir> = (0..2).map(|_| TempDir::new().unwrap()).collect();
    for r in &runs {
        pipeline(r.path(), SMALL_CONFIG, "120", "30", &["euclidean", "crossing", "no-heuristic"], &["0", "1"])?;
    }
    let mut files = vec!["summary/summary.csv".to_string(), "summary/trend.json".to_string(), "summary/strip.svg".to_string()];
    for v in ["euclidean", "crossing", "no-heuristic"] {
        for s in ["0", "1"] {
            files.push(format!("runs/{v}-{s}.csv"));
            files.push(format!("b/{v}-{s}/{}", ModelBundle::EPOCH_LOG));
        }
    }
    let mut differing = Vec::new();
    for f in &files {
        let a = fs::read(runs[0].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(runs[1].path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            differing.push(f.clone());
        }
    }
    check(differing.is_empty(), || format!("differing outputs: {}", differing.join(", ")))?;
    Ok(format!("{} output files identical across two full runs", files.len()))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("flow forward/inverse round trip", flow_invertibility),
        ("flow log-determinant vs numerical Jacobian", flow_log_determinant),
        ("analytic gradients vs finite differences", gradient_suite),
        ("joint likelihood factorizes over the DAG", likelihood_factorization),
        ("cycle removal drops only cycle edges", dagify_property),
        ("crossing heuristic directions", heuristic_directions),
        ("interaction classifier accuracy", classifier_accuracy),
        ("yield-or-go samples cover both orders", yield_or_go_modes),
        ("joint metrics vs brute force", metric_oracles),
        ("crossing beats no-heuristic on joint NLL", structure_helps),
        ("pipeline outputs are reproducible", reproducibility),
    ];
    let only: HashSet<usize> = std::env::var("GMOP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let took = fmt_duration(start.elapsed());
        match result {
            Ok(detail) => println!("criterion {n:>2}: PASS  {name}: {detail} [{took}]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {name}: {detail} [{took}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
