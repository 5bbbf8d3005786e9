//! JSON-lines scene files.
//!
//! The first line is a header `{"format":"gmop-scenes","version":1}`; every
//! following line is one scene record. A file without a header (or an empty
//! file) is accepted on read.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentId, AgentKind, Annotations, Scene, SceneError, Trajectory, Vec2};

pub const SCENE_FORMAT: &str = "gmop-scenes";
pub const SCENE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct AgentRecord {
    id: AgentId,
    #[serde(rename = "type")]
    kind: AgentKind,
    past: Vec<Vec2>,
    future: Vec<Vec2>,
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    scene_id: String,
    sampling_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_past: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_future: Option<usize>,
    agents: Vec<AgentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<Annotations>,
}

impl SceneRecord {
    fn from_scene(s: &Scene) -> Self {
        Self {
            scene_id: s.scene_id.clone(),
            sampling_hz: s.sampling_hz,
            n_past: Some(s.n_past()),
            n_future: Some(s.n_future()),
            agents: s
                .agents
                .iter()
                .map(|a| AgentRecord {
                    id: a.id,
                    kind: a.kind,
                    past: a.past.positions.clone(),
                    future: a.future.positions.clone(),
                })
                .collect(),
            annotations: s.annotations.clone(),
        }
    }

    fn into_scene(self, line: usize) -> Result<Scene, SceneError> {
        let dt = 1.0 / self.sampling_hz;
        let (n_past, n_future) = (self.n_past, self.n_future);
        let id = self.scene_id.clone();
        let agents: Vec<Agent> = self
            .agents
            .into_iter()
            .map(|a| Agent {
                id: a.id,
                kind: a.kind,
                past: Trajectory::new(a.past, dt),
                future: Trajectory::new(a.future, dt),
            })
            .collect();
        let invalid = |message: String| SceneError::Validation {
            context: format!("line {line} (scene {id})"),
            message,
        };
        for a in &agents {
            if let Some(n) = n_past.filter(|&n| n != a.past.len()) {
                return Err(invalid(format!("agent {} has n_I={} while the scene declares {n}", a.id, a.past.len())));
            }
            if let Some(n) = n_future.filter(|&n| n != a.future.len()) {
                return Err(invalid(format!("agent {} has n_O={} while the scene declares {n}", a.id, a.future.len())));
            }
        }
        Scene::new(self.scene_id, self.sampling_hz, agents, self.annotations).map_err(|e| match e {
            SceneError::Validation { message, .. } => invalid(message),
            other => other,
        })
    }
}

pub fn write_scenes<W: Write>(scenes: &[Scene], mut out: W) -> Result<(), SceneError> {
    let header = Header {
        format: SCENE_FORMAT.into(),
        version: SCENE_FORMAT_VERSION,
    };
    let to_err = |e: serde_json::Error| SceneError::Io(std::io::Error::other(e));
    serde_json::to_writer(&mut out, &header).map_err(to_err)?;
    out.write_all(b"\n")?;
    for s in scenes {
        serde_json::to_writer(&mut out, &SceneRecord::from_scene(s)).map_err(to_err)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scenes<R: BufRead>(input: R) -> Result<Vec<Scene>, SceneError> {
    let mut scenes = Vec::new();
    let mut first = true;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            if let Ok(h) = serde_json::from_str::<Header>(&line) {
                if h.format != SCENE_FORMAT || h.version != SCENE_FORMAT_VERSION {
                    return Err(SceneError::Parse {
                        line: line_no,
                        message: format!("unsupported scene file format {} v{}", h.format, h.version),
                    });
                }
                continue;
            }
        }
        let record: SceneRecord = serde_json::from_str(&line).map_err(|e| SceneError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        scenes.push(record.into_scene(line_no)?);
    }
    Ok(scenes)
}

pub fn load_scenes(path: &Path) -> Result<Vec<Scene>, SceneError> {
    read_scenes(BufReader::new(fs::File::open(path)?))
}

pub fn save_scenes(scenes: &[Scene], path: &Path) -> Result<(), SceneError> {
    let f = fs::File::create(path)?;
    write_scenes(scenes, std::io::BufWriter::new(f))
}
