//! Single-file binary container for datasets and checkpoints.
//!
//! Layout: 4-byte magic `RLC1`, little-endian u64 header length, JSON header,
//! then raw section payloads in header order. The header carries the kind
//! string, arbitrary JSON metadata, and per-section name/dtype/shape. Floats
//! are stored as little-endian IEEE-754 bits, so `load(save(x)) == x` holds
//! bit-exactly.

use crate::data::{
    OfflineDataset, PrefLabel, PreferenceDataset, PreferencePair, Provenance, Trajectory,
};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"RLC1";
const SCHEMA_VERSION: u32 = 1;

/// One named payload block.
#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    /// Row-major f64 matrix.
    F64(Array2<f64>),
    /// Flat u64 vector (indices, offsets, flags).
    U64(Vec<u64>),
}

#[derive(Serialize, Deserialize)]
struct SectionDesc {
    name: String,
    dtype: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
    meta: serde_json::Value,
    sections: Vec<SectionDesc>,
}

/// In-memory view of a container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    sections: Vec<(String, Section)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, section: Section) {
        self.sections.push((name.into(), section));
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn f64(&self, name: &str) -> Result<&Array2<f64>> {
        match self.get(name) {
            Some(Section::F64(a)) => Ok(a),
            _ => Err(Error::Format(format!("missing f64 section `{name}`"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Section::U64(v)) => Ok(v),
            _ => Err(Error::Format(format!("missing u64 section `{name}`"))),
        }
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let descs: Vec<SectionDesc> = self
            .sections
            .iter()
            .map(|(name, s)| match s {
                Section::F64(a) => SectionDesc {
                    name: name.clone(),
                    dtype: "f64".into(),
                    rows: a.nrows(),
                    cols: a.ncols(),
                },
                Section::U64(v) => SectionDesc {
                    name: name.clone(),
                    dtype: "u64".into(),
                    rows: v.len(),
                    cols: 1,
                },
            })
            .collect();
        let header = Header {
            schema_version: SCHEMA_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            sections: descs,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for (_, s) in &self.sections {
            match s {
                Section::F64(a) => {
                    for v in a.iter() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Section::U64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema version {}",
                header.schema_version
            )));
        }
        let mut sections = Vec::with_capacity(header.sections.len());
        for desc in &header.sections {
            match desc.dtype.as_str() {
                "f64" => {
                    let n = desc.rows * desc.cols;
                    let mut buf = vec![0u8; n * 8];
                    r.read_exact(&mut buf)?;
                    let vals: Vec<f64> = buf
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    let arr = Array2::from_shape_vec((desc.rows, desc.cols), vals)
                        .map_err(|e| Error::Format(e.to_string()))?;
                    sections.push((desc.name.clone(), Section::F64(arr)));
                }
                "u64" => {
                    let mut buf = vec![0u8; desc.rows * 8];
                    r.read_exact(&mut buf)?;
                    let vals: Vec<u64> = buf
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    sections.push((desc.name.clone(), Section::U64(vals)));
                }
                other => return Err(Error::Format(format!("unknown dtype `{other}`"))),
            }
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            sections,
        })
    }
}

fn meta_str(meta: &serde_json::Value, key: &str) -> Result<String> {
    meta.get(key)
        .and_then(|v| v.as_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::Format(format!("missing meta key `{key}`")))
}

fn meta_u64(meta: &serde_json::Value, key: &str) -> Result<u64> {
    meta.get(key)
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format(format!("missing meta key `{key}`")))
}

fn provenance_to_meta(p: Provenance) -> serde_json::Value {
    match p {
        Provenance::Noisy(rate) => serde_json::json!({ "kind": "noisy", "rate": rate }),
        other => serde_json::json!({ "kind": other.kind() }),
    }
}

fn provenance_from_meta(v: &serde_json::Value) -> Result<Provenance> {
    match v.get("kind").and_then(|k| k.as_str()) {
        Some("human-style") => Ok(Provenance::HumanStyle),
        Some("script") => Ok(Provenance::Script),
        Some("noisy") => {
            let rate = v
                .get("rate")
                .and_then(|r| r.as_f64())
                .ok_or_else(|| Error::Format("noisy provenance without rate".into()))?;
            Ok(Provenance::Noisy(rate))
        }
        _ => Err(Error::Format("bad provenance".into())),
    }
}

impl PreferenceDataset {
    /// Serialize as one container: flat state/action/reward arrays for all
    /// segments plus a pair index table with labels stored as floats.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.pairs.len();
        let (sdim, adim, has_rewards) = match self.pairs.first() {
            Some(p) => (
                p.seg0.state_dim(),
                p.seg0.action_dim(),
                p.seg0.true_rewards().is_some(),
            ),
            None => (0, 0, false),
        };
        let rows = 2 * n * self.h;
        let mut states = Array2::zeros((rows, sdim));
        let mut actions = Array2::zeros((rows, adim));
        let mut rewards = Array2::zeros((if has_rewards { rows } else { 0 }, 1));
        let mut pair_table = Vec::with_capacity(2 * n);
        let mut labels = Array2::zeros((n, 1));
        for (i, pair) in self.pairs.iter().enumerate() {
            for (j, seg) in [&pair.seg0, &pair.seg1].into_iter().enumerate() {
                let traj_idx = 2 * i + j;
                let r0 = traj_idx * self.h;
                states
                    .slice_mut(ndarray::s![r0..r0 + self.h, ..])
                    .assign(seg.states());
                actions
                    .slice_mut(ndarray::s![r0..r0 + self.h, ..])
                    .assign(seg.actions());
                if let Some(tr) = seg.true_rewards() {
                    for (t, v) in tr.iter().enumerate() {
                        rewards[[r0 + t, 0]] = *v;
                    }
                }
            }
            pair_table.push((2 * i) as u64);
            pair_table.push((2 * i + 1) as u64);
            labels[[i, 0]] = pair.label.as_f64();
        }
        let meta = serde_json::json!({
            "env_id": self.env_id,
            "h": self.h as u64,
            "n_pairs": n as u64,
            "state_dim": sdim as u64,
            "action_dim": adim as u64,
            "has_rewards": has_rewards,
            "provenance": provenance_to_meta(self.provenance),
        });
        let mut c = Container::new("preference", meta);
        c.push("states", Section::F64(states));
        c.push("actions", Section::F64(actions));
        if has_rewards {
            c.push("rewards", Section::F64(rewards));
        }
        c.push("pair_index", Section::U64(pair_table));
        c.push("labels", Section::F64(labels));
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PreferenceDataset> {
        let c = Container::load(path)?;
        if c.kind != "preference" {
            return Err(Error::Format(format!("expected preference container, got {}", c.kind)));
        }
        let env_id = meta_str(&c.meta, "env_id")?;
        let h = meta_u64(&c.meta, "h")? as usize;
        let n = meta_u64(&c.meta, "n_pairs")? as usize;
        let has_rewards = c.meta.get("has_rewards").and_then(|v| v.as_bool()).unwrap_or(false);
        let provenance = provenance_from_meta(
            c.meta
                .get("provenance")
                .ok_or_else(|| Error::Format("missing provenance".into()))?,
        )?;
        let states = c.f64("states")?;
        let actions = c.f64("actions")?;
        let labels = c.f64("labels")?;
        let pair_index = c.u64("pair_index")?;
        if pair_index.len() != 2 * n || labels.nrows() != n {
            return Err(Error::Format("pair table size mismatch".into()));
        }
        let rewards = if has_rewards { Some(c.f64("rewards")?) } else { None };
        let take = |traj_idx: usize| -> Result<Trajectory> {
            let r0 = traj_idx * h;
            Trajectory::new(
                env_id.clone(),
                states.slice(ndarray::s![r0..r0 + h, ..]).to_owned(),
                actions.slice(ndarray::s![r0..r0 + h, ..]).to_owned(),
                rewards.map(|rw| rw.slice(ndarray::s![r0..r0 + h, 0]).to_owned()),
            )
        };
        let mut pairs = Vec::with_capacity(n);
        for i in 0..n {
            let seg0 = take(pair_index[2 * i] as usize)?;
            let seg1 = take(pair_index[2 * i + 1] as usize)?;
            let label = PrefLabel::from_f64(labels[[i, 0]])?;
            pairs.push(PreferencePair::new(seg0, seg1, label)?);
        }
        PreferenceDataset::new(env_id, h, pairs, provenance)
    }
}

impl OfflineDataset {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.n_transitions();
        let meta = serde_json::json!({
            "env_id": self.env_id,
            "n_transitions": n as u64,
            "n_episodes": self.n_episodes() as u64,
            "state_dim": self.state_dim() as u64,
            "action_dim": self.action_dim() as u64,
            "has_orig_rewards": self.orig_rewards().is_some(),
        });
        let mut c = Container::new("offline", meta);
        c.push("states", Section::F64(self.states().clone()));
        c.push("actions", Section::F64(self.actions().clone()));
        c.push(
            "rewards",
            Section::F64(self.rewards().clone().into_shape_with_order((n, 1)).unwrap()),
        );
        c.push("next_states", Section::F64(self.next_states().clone()));
        c.push(
            "dones",
            Section::U64(self.dones().iter().map(|&d| d as u64).collect()),
        );
        c.push(
            "episode_offsets",
            Section::U64(self.episode_offsets().iter().map(|&o| o as u64).collect()),
        );
        if let Some(orig) = self.orig_rewards() {
            c.push(
                "orig_rewards",
                Section::F64(orig.clone().into_shape_with_order((n, 1)).unwrap()),
            );
        }
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<OfflineDataset> {
        let c = Container::load(path)?;
        if c.kind != "offline" {
            return Err(Error::Format(format!("expected offline container, got {}", c.kind)));
        }
        let env_id = meta_str(&c.meta, "env_id")?;
        let rewards: Array1<f64> = c.f64("rewards")?.column(0).to_owned();
        let dones: Vec<bool> = c.u64("dones")?.iter().map(|&d| d != 0).collect();
        let offsets: Vec<usize> = c.u64("episode_offsets")?.iter().map(|&o| o as usize).collect();
        let mut ds = OfflineDataset::new(
            env_id,
            c.f64("states")?.clone(),
            c.f64("actions")?.clone(),
            rewards,
            c.f64("next_states")?.clone(),
            dones,
            offsets,
        )?;
        if c.meta.get("has_orig_rewards").and_then(|v| v.as_bool()) == Some(true) {
            let orig: Array1<f64> = c.f64("orig_rewards")?.column(0).to_owned();
            // Re-create the shadow by swapping through replace_rewards.
            let current = ds.rewards().clone();
            ds.set_rewards_with_shadow(current, orig);
        }
        Ok(ds)
    }
}
