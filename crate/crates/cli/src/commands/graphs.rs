use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use gmop::graphs::{
    all_pairs, crossing_labels, ground_truth_labels, heuristic_graph, GraphDump, GraphStrategy, HeuristicConfig, InteractionClass,
    InteractionGraph, PairLabel,
};
use gmop::scene::Scene;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ensure_distinct, read_scene_file, required, write_manifest, MANIFEST};
use crate::config::ConfigFile;
use crate::error::CliError;

pub const GRAPHS: &str = "graphs.jsonl";
pub const AGREEMENT: &str = "agreement.csv";
pub const GROUND_TRUTH: &str = "ground-truth";

#[derive(Debug, Args, Serialize)]
pub struct GraphsArgs {
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Comma-separated heuristic strategies (default: all six heuristic ones)
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Euclidean heuristic radius in meters
    #[arg(long, name = "eps")]
    #[serde(rename = "heuristic.euclidean_eps_m")]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphsSettings {
    pub scenes: Option<PathBuf>,
    pub strategies: Vec<String>,
    pub out: PathBuf,
    pub heuristic: HeuristicConfig,
}

impl Default for GraphsSettings {
    fn default() -> Self {
        Self {
            scenes: None,
            strategies: GraphStrategy::ALL
                .iter()
                .filter(|s| **s != GraphStrategy::NoHeuristic)
                .map(|s| s.name().to_string())
                .collect(),
            out: PathBuf::from("graphs"),
            heuristic: HeuristicConfig::default(),
        }
    }
}

pub fn parse_strategies(names: &[String]) -> Result<Vec<GraphStrategy>, CliError> {
    if names.is_empty() {
        return Err(CliError::Usage("no strategy given".into()));
    }
    let mut out = Vec::new();
    for n in names {
        let s: GraphStrategy = n.parse().map_err(|_| CliError::Usage(format!("unknown strategy {n:?}")))?;
        if s == GraphStrategy::NoHeuristic {
            return Err(CliError::Usage("no-heuristic graphs are learned by the model and cannot be listed here".into()));
        }
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Pair labels read off a graph's edges, in the order of `all_pairs`.
fn labels_from_graph(scene: &Scene, graph: &InteractionGraph) -> Vec<PairLabel> {
    let ids = scene.ids();
    all_pairs(ids.len())
        .into_iter()
        .map(|(i, j)| {
            let (m, n) = (ids[i], ids[j]);
            let class = if graph.edge(m, n).is_some() {
                InteractionClass::MInfluencesN
            } else if graph.edge(n, m).is_some() {
                InteractionClass::NInfluencesM
            } else {
                InteractionClass::NoInteraction
            };
            PairLabel { m, n, class }
        })
        .collect()
}

fn strategy_labels(scene: &Scene, strategy: GraphStrategy, graph: &InteractionGraph, cfg: &HeuristicConfig) -> Result<Vec<PairLabel>, CliError> {
    match strategy.crossing_flags() {
        Some((hyp, flip)) => crossing_labels(scene, hyp, flip, cfg).map_err(|e| CliError::Validation(e.to_string())),
        None => Ok(labels_from_graph(scene, graph)),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    same_class: usize,
    pairs: usize,
    same_direction: usize,
    both_interacting: usize,
}

/// Accuracy on ground-truth interacting pairs, plain and with directions reversed.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DirectionScore {
    pub interacting_pairs: usize,
    pub direction_accuracy: f64,
    pub reversed_accuracy: f64,
}

pub fn run(args: &GraphsArgs, file: &ConfigFile) -> Result<(), CliError> {
    let settings: GraphsSettings = file.resolve("graphs", args)?;
    let strategies = parse_strategies(&settings.strategies)?;
    let scenes_path = required(&settings.scenes, "scenes")?;
    let scenes = read_scene_file(&scenes_path)?;
    std::fs::create_dir_all(&settings.out)?;
    let graphs_path = settings.out.join(GRAPHS);
    ensure_distinct(&graphs_path, &[&scenes_path])?;

    let mut names: Vec<String> = strategies.iter().map(|s| s.name().to_string()).collect();
    let has_truth = scenes.iter().all(|s| s.annotations.is_some());
    if has_truth {
        names.push(GROUND_TRUTH.to_string());
    }
    let k = names.len();
    let mut tally = vec![vec![Tally::default(); k]; k];
    let mut hits = vec![(0usize, 0usize); strategies.len()];
    let mut gt_pairs = 0usize;
    let mut empty_counts = vec![0usize; strategies.len()];

    let mut out = BufWriter::new(File::create(&graphs_path)?);
    for scene in &scenes {
        let mut sets = Vec::with_capacity(k);
        for (si, &strategy) in strategies.iter().enumerate() {
            let graph = heuristic_graph(scene, strategy, &settings.heuristic)
                .map_err(|e| CliError::Validation(e.to_string()))?
                .expect("heuristic strategies build a graph");
            if graph.edges.is_empty() {
                empty_counts[si] += 1;
            }
            writeln!(out, "{}", GraphDump::new(&scene.scene_id, strategy, &graph).to_json())?;
            sets.push(strategy_labels(scene, strategy, &graph, &settings.heuristic)?);
        }
        if has_truth {
            let gt = ground_truth_labels(scene).expect("annotated scene");
            for (si, labels) in sets.iter().enumerate() {
                for (g, e) in gt.iter().zip(labels) {
                    if g.class != InteractionClass::NoInteraction {
                        hits[si].0 += usize::from(e.class == g.class);
                        hits[si].1 += usize::from(e.class == g.class.flipped());
                    }
                }
            }
            gt_pairs += gt.iter().filter(|g| g.class != InteractionClass::NoInteraction).count();
            sets.push(gt);
        }
        for a in 0..k {
            for b in 0..k {
                let t = &mut tally[a][b];
                for (x, y) in sets[a].iter().zip(&sets[b]) {
                    t.pairs += 1;
                    t.same_class += usize::from(x.class == y.class);
                    if x.class != InteractionClass::NoInteraction && y.class != InteractionClass::NoInteraction {
                        t.both_interacting += 1;
                        t.same_direction += usize::from(x.class == y.class);
                    }
                }
            }
        }
    }
    out.flush()?;

    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    let mut w = csv::Writer::from_path(settings.out.join(AGREEMENT)).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record(["a", "b", "pairs", "label_agreement", "interacting_pairs", "direction_agreement"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    for a in 0..k {
        for b in 0..k {
            let t = tally[a][b];
            w.write_record([
                names[a].clone(),
                names[b].clone(),
                t.pairs.to_string(),
                format!("{:.6}", ratio(t.same_class, t.pairs)),
                t.both_interacting.to_string(),
                format!("{:.6}", ratio(t.same_direction, t.both_interacting)),
            ])
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    w.flush()?;

    println!("label agreement (direction agreement on pairs both call interacting):");
    print!("{:>30}", "");
    for n in &names {
        print!(" {:>14}", abbreviate(n));
    }
    println!();
    for a in 0..k {
        print!("{:>30}", names[a]);
        for b in 0..k {
            let t = tally[a][b];
            print!(" {:>14}", format!("{:.2} ({:.2})", ratio(t.same_class, t.pairs), ratio(t.same_direction, t.both_interacting)));
        }
        println!();
    }

    let mut scores = serde_json::Map::new();
    for (si, s) in strategies.iter().enumerate() {
        let score = DirectionScore {
            interacting_pairs: gt_pairs,
            direction_accuracy: ratio(hits[si].0, gt_pairs),
            reversed_accuracy: ratio(hits[si].1, gt_pairs),
        };
        if has_truth {
            println!(
                "{}: direction accuracy vs ground truth {:.4}, reversed {:.4} over {} interacting pairs; {} empty graphs",
                s, score.direction_accuracy, score.reversed_accuracy, gt_pairs, empty_counts[si]
            );
        } else {
            println!("{}: {} empty graphs", s, empty_counts[si]);
        }
        scores.insert(
            s.name().to_string(),
            json!({
                "empty_graphs": empty_counts[si],
                "interacting_pairs": score.interacting_pairs,
                "direction_accuracy": has_truth.then_some(score.direction_accuracy),
                "reversed_accuracy": has_truth.then_some(score.reversed_accuracy),
            }),
        );
    }
    write_manifest(
        &settings.out.join(MANIFEST),
        "graphs",
        &settings,
        json!({ "n_scenes": scenes.len(), "graphs": GRAPHS, "agreement": AGREEMENT, "strategies": scores }),
    )?;
    Ok(())
}

fn abbreviate(name: &str) -> String {
    name.split('-').map(|w| &w[..w.len().min(4)]).collect::<Vec<_>>().join("-")
}
