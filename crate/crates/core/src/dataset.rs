//! Multi-traverse datasets on disk: one event file and one pose CSV per
//! traverse plus a JSON manifest.

use crate::error::{Error, Result};
use crate::event::{
    parse_event_file, parse_pose_file, slice_places_from, write_event_file, write_pose_file, EventFormat, EventStream,
    Geometry, PlaceSample, PoseTrack,
};
use crate::synth::{generate, Direction, Role, RouteConfig, SynthTraverse};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraverseEntry {
    pub id: u32,
    pub role: Role,
    pub direction: Direction,
    /// Relative to the manifest directory.
    pub events: String,
    pub poses: String,
    #[serde(default)]
    pub speed_factor: Option<f64>,
    #[serde(default)]
    pub start_offset_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub width: u32,
    pub height: u32,
    pub place_spacing_m: f64,
    /// Arc length of the first place.
    pub place_offset_m: f64,
    pub half_window_us: u64,
    /// Generation seed and settings, absent for recorded data.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub synth: Option<RouteConfig>,
    pub traverses: Vec<TraverseEntry>,
}

impl Manifest {
    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.width, self.height)
    }
}

#[derive(Clone, Debug)]
pub struct Traverse {
    pub entry: TraverseEntry,
    pub stream: Arc<EventStream>,
    pub track: PoseTrack,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub traverses: Vec<Traverse>,
}

impl Dataset {
    /// Generates a synthetic dataset in memory.
    pub fn synthetic(cfg: &RouteConfig, seed: u64) -> Result<Self> {
        let generated = generate(cfg, seed)?;
        let manifest = synth_manifest(cfg, seed, &generated);
        let traverses = generated
            .into_iter()
            .zip(&manifest.traverses)
            .map(|(t, e)| Traverse {
                entry: e.clone(),
                stream: Arc::new(t.stream),
                track: t.track,
            })
            .collect();
        Ok(Self { manifest, traverses })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::VersionMismatch {
                what: "dataset manifest",
                found: manifest.version,
                expected: MANIFEST_VERSION,
            });
        }
        let g = manifest.geometry();
        let mut traverses = Vec::with_capacity(manifest.traverses.len());
        for e in &manifest.traverses {
            let ev_path = dir.join(&e.events);
            let parsed = parse_event_file(&ev_path, EventFormat::from_path(&ev_path), Some(g))?;
            if parsed.resorted > 0 {
                log::warn!("{}: {} events arrived out of order and were re-sorted", ev_path.display(), parsed.resorted);
            }
            traverses.push(Traverse {
                entry: e.clone(),
                stream: Arc::new(parsed.stream),
                track: parse_pose_file(&dir.join(&e.poses))?,
            });
        }
        Ok(Self { manifest, traverses })
    }

    /// Writes event files, pose files and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in &self.traverses {
            let ev = dir.join(&t.entry.events);
            write_event_file(&ev, EventFormat::from_path(&ev), &t.stream)?;
            write_pose_file(&dir.join(&t.entry.poses), &t.track)?;
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn traverses_with(&self, role: Role) -> impl Iterator<Item = &Traverse> {
        self.traverses.iter().filter(move |t| t.entry.role == role)
    }

    pub fn places_of(&self, t: &Traverse) -> Result<Vec<PlaceSample>> {
        let m = &self.manifest;
        slice_places_from(&t.stream, &t.track, m.place_spacing_m, m.half_window_us, t.entry.id, m.place_offset_m)
    }

    /// Places of every traverse with the given role, in traverse order.
    pub fn places(&self, role: Role) -> Result<Vec<PlaceSample>> {
        let mut out = Vec::new();
        for t in self.traverses_with(role) {
            out.extend(self.places_of(t)?);
        }
        Ok(out)
    }
}

fn synth_manifest(cfg: &RouteConfig, seed: u64, generated: &[SynthTraverse]) -> Manifest {
    Manifest {
        version: MANIFEST_VERSION,
        width: cfg.width,
        height: cfg.height,
        place_spacing_m: cfg.spacing_m,
        place_offset_m: cfg.lead_m,
        half_window_us: cfg.half_window_us,
        seed: Some(seed),
        synth: Some(cfg.clone()),
        traverses: generated
            .iter()
            .map(|t| TraverseEntry {
                id: t.id,
                role: t.spec.role,
                direction: t.spec.direction,
                events: format!("traverse{:02}.evt", t.id),
                poses: format!("traverse{:02}_poses.csv", t.id),
                speed_factor: Some(t.spec.speed_factor),
                start_offset_m: Some(t.start_offset_m),
            })
            .collect(),
    }
}

/// Generates and writes a synthetic dataset; returns the manifest path.
pub fn write_synthetic(cfg: &RouteConfig, seed: u64, dir: &Path) -> Result<PathBuf> {
    Dataset::synthetic(cfg, seed)?.save(dir)?;
    Ok(dir.join(MANIFEST_FILE))
}
