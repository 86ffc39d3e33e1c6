//! Synthetic eye-closure sequences and their split into operators and test shards.
//!
//! Each frame shows two Gaussian "eye" blobs on a flat background. Class 0
//! keeps the blob intensity constant over the sequence; higher classes fade
//! it geometrically, the top class at the participant's full decay rate.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FrameSequence;
use crate::numerics::Rng;
use crate::vision::{read_pgm, write_pgm, Frame};

/// Frame geometry shared with the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub height: usize,
    pub width: usize,
    pub length: usize,
    pub classes: usize,
}

/// Label noise injected into one operator's training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub operator: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    /// Participants whose data is spread over the operators.
    pub participants: usize,
    pub operators: usize,
    pub sequences_per_class: usize,
    /// Training participants re-sampled with fresh sequences for testing.
    pub trained_test_participants: usize,
    /// Held-out participants never seen by any operator.
    pub untrained_test_participants: usize,
    pub test_sequences_per_class: usize,
    pub validation_fraction: f64,
    pub noise: f64,
    /// Scales the spread of per-participant appearance.
    pub heterogeneity: f64,
    pub corruption: Vec<CorruptionSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            participants: 42,
            operators: 5,
            sequences_per_class: 40,
            trained_test_participants: 6,
            untrained_test_participants: 6,
            test_sequences_per_class: 10,
            validation_fraction: 0.2,
            noise: 0.05,
            heterogeneity: 1.0,
            corruption: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.participants == 0 {
            return Err(Error::config("scenario.participants", "must be at least 1"));
        }
        if self.operators == 0 {
            return Err(Error::config("scenario.operators", "must be at least 1"));
        }
        if self.operators > self.participants {
            return Err(Error::config(
                "scenario.operators",
                format!(
                    "{} operators cannot each hold one of {} participants",
                    self.operators, self.participants
                ),
            ));
        }
        if self.sequences_per_class == 0 {
            return Err(Error::config(
                "scenario.sequences_per_class",
                "must be at least 1",
            ));
        }
        if self.trained_test_participants > self.participants {
            return Err(Error::config(
                "scenario.trained_test_participants",
                format!(
                    "only {} training participants are available",
                    self.participants
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config(
                "scenario.validation_fraction",
                "must be in [0, 1)",
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config(
                "scenario.noise",
                "must be a non-negative number",
            ));
        }
        if !(0.0..=2.0).contains(&self.heterogeneity) {
            return Err(Error::config("scenario.heterogeneity", "must be in [0, 2]"));
        }
        for c in &self.corruption {
            if c.operator == 0 || c.operator > self.operators {
                return Err(Error::config(
                    "scenario.corruption.operator",
                    format!(
                        "no operator with id {} (ids run 1..={})",
                        c.operator, self.operators
                    ),
                ));
            }
            if !(0.0..=1.0).contains(&c.probability) {
                return Err(Error::config(
                    "scenario.corruption.probability",
                    "must be in [0, 1]",
                ));
            }
        }
        Ok(())
    }

    pub fn total_participants(&self) -> usize {
        self.participants + self.untrained_test_participants
    }
}

/// Appearance and dynamics of one synthetic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: usize,
    pub background: f64,
    /// Blob-centre offset in pixels at 16×16 scale.
    pub offset_y: f64,
    pub offset_x: f64,
    /// In radians, about the frame centre.
    pub rotation: f64,
    pub eye_spacing: f64,
    pub blob_sigma: f64,
    /// Fraction of intensity lost per frame in the drowsiest class.
    pub decay: f64,
}

impl Participant {
    pub fn generate(id: usize, heterogeneity: f64, seed_rng: &Rng) -> Participant {
        let mut rng = seed_rng.child("participant", id as u64);
        let h = heterogeneity;
        Participant {
            id,
            background: 0.1 + h * rng.uniform_range(-0.05, 0.05),
            offset_y: h * rng.uniform_range(-1.5, 1.5),
            offset_x: h * rng.uniform_range(-1.5, 1.5),
            rotation: h * rng.uniform_range(-0.3, 0.3),
            eye_spacing: 6.0 + h * rng.uniform_range(-1.0, 1.0),
            blob_sigma: 1.6 + h * rng.uniform_range(-0.3, 0.3),
            decay: 0.35 + h * rng.uniform_range(-0.1, 0.1),
        }
    }
}

/// Blob intensity of every frame: constant for class 0, `i0 (1 - r)^k` with
/// `r = decay · class / (classes - 1)` otherwise.
pub fn intensity_profile(i0: f64, decay: f64, class: usize, spec: &FrameSpec) -> Vec<f64> {
    let rate = if spec.classes > 1 {
        decay * class as f64 / (spec.classes - 1) as f64
    } else {
        0.0
    };
    (0..spec.length)
        .map(|k| i0 * (1.0 - rate).powi(k as i32))
        .collect()
}

/// Renders one labelled sequence for `p`.
pub fn gen_sequence(
    p: &Participant,
    class: usize,
    rng: &mut Rng,
    spec: &FrameSpec,
    noise: f64,
) -> Result<FrameSequence> {
    if class >= spec.classes {
        return Err(Error::Input(format!(
            "class {class} out of range for {} classes",
            spec.classes
        )));
    }
    let i0 = rng.uniform_range(0.55, 0.7);
    let (jy, jx) = (rng.uniform_range(-0.5, 0.5), rng.uniform_range(-0.5, 0.5));
    let scale_y = spec.height as f64 / 16.0;
    let scale_x = spec.width as f64 / 16.0;
    let cy = (spec.height as f64 - 1.0) / 2.0;
    let cx = (spec.width as f64 - 1.0) / 2.0;
    // eye centres before rotation, relative to the frame centre
    let ey = (-1.5 + p.offset_y + jy) * scale_y;
    let half = p.eye_spacing / 2.0 * scale_x;
    let (sin, cos) = p.rotation.sin_cos();
    let eyes: Vec<(f64, f64)> = [-half, half]
        .iter()
        .map(|&ex| {
            let ex = ex + (p.offset_x + jx) * scale_x;
            (cy + ey * cos + ex * sin, cx - ey * sin + ex * cos)
        })
        .collect();
    let sigma = p.blob_sigma * scale_y.min(scale_x).max(0.25);
    let two_s2 = 2.0 * sigma * sigma;

    let profile = intensity_profile(i0, p.decay, class, spec);
    let mut frames = Vec::with_capacity(spec.length);
    for intensity in profile {
        let mut px = Vec::with_capacity(spec.height * spec.width);
        for y in 0..spec.height {
            for x in 0..spec.width {
                let blob: f64 = eyes
                    .iter()
                    .map(|(ey, ex)| {
                        let d2 = (y as f64 - ey).powi(2) + (x as f64 - ex).powi(2);
                        (-d2 / two_s2).exp()
                    })
                    .sum();
                let n = if noise > 0.0 {
                    noise * rng.normal()
                } else {
                    0.0
                };
                px.push((p.background + intensity * blob + n).clamp(0.0, 1.0));
            }
        }
        frames.push(Frame::new(spec.height, spec.width, 1, px)?);
    }
    FrameSequence::new(frames, class, spec.classes)
}

/// A sequence tagged with the participant it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub participant: usize,
    pub sequence: FrameSequence,
}

#[derive(Debug, Clone)]
pub struct OperatorData {
    /// 1-based.
    pub id: usize,
    pub participants: Vec<usize>,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub participants: Vec<Participant>,
    pub operators: Vec<OperatorData>,
    pub trained_test: Vec<Sample>,
    pub untrained_test: Vec<Sample>,
}

impl Partition {
    pub fn trained_test_ids(&self) -> BTreeSet<usize> {
        self.trained_test.iter().map(|s| s.participant).collect()
    }

    pub fn untrained_test_ids(&self) -> BTreeSet<usize> {
        self.untrained_test.iter().map(|s| s.participant).collect()
    }

    /// Validation samples of every operator, in operator order.
    pub fn validation(&self) -> Vec<&Sample> {
        self.operators
            .iter()
            .flat_map(|o| o.validation.iter())
            .collect()
    }
}

/// Deals participant ids round-robin after a seeded shuffle; the first
/// `n % operators` operators get one extra participant.
pub fn assign_participants(ids: &[usize], operators: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut shuffled = ids.to_vec();
    rng.shuffle(&mut shuffled);
    let mut groups = vec![Vec::new(); operators];
    for (i, id) in shuffled.into_iter().enumerate() {
        groups[i % operators].push(id);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups
}

fn gen_samples(
    p: &Participant,
    per_class: usize,
    stream: &str,
    rng: &Rng,
    spec: &FrameSpec,
    noise: f64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(per_class * spec.classes);
    for class in 0..spec.classes {
        let mut r = rng.child(&format!("{stream}/p{}/c{class}", p.id), 0);
        for _ in 0..per_class {
            out.push(Sample {
                participant: p.id,
                sequence: gen_sequence(p, class, &mut r, spec, noise)?,
            });
        }
    }
    Ok(out)
}

/// Generates every participant's data and splits it per the scenario.
///
/// Participants `0..participants` train; the next
/// `untrained_test_participants` ids are held out entirely. Labels of
/// corrupted operators are flipped on their training split only.
pub fn partition(scenario: &Scenario, spec: &FrameSpec, seed: u64) -> Result<Partition> {
    scenario.validate()?;
    let root = Rng::new(seed);
    let synth = root.child("synth", 0);
    let participants: Vec<Participant> = (0..scenario.total_participants())
        .map(|id| Participant::generate(id, scenario.heterogeneity, &synth))
        .collect();
    let training_ids: Vec<usize> = (0..scenario.participants).collect();
    let groups = assign_participants(
        &training_ids,
        scenario.operators,
        &mut synth.child("assign", 0),
    );

    let mut operators = Vec::with_capacity(scenario.operators);
    for (i, group) in groups.into_iter().enumerate() {
        let id = i + 1;
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for &pid in &group {
            let mut samples = gen_samples(
                &participants[pid],
                scenario.sequences_per_class,
                "train",
                &synth,
                spec,
                scenario.noise,
            )?;
            // hold out the same fraction of every class
            let n_val = (scenario.validation_fraction * scenario.sequences_per_class as f64).round()
                as usize;
            for class_chunk in samples.chunks_mut(scenario.sequences_per_class) {
                let (v, t) = class_chunk.split_at(n_val.min(class_chunk.len()));
                validation.extend_from_slice(v);
                train.extend_from_slice(t);
            }
        }
        if train.is_empty() {
            return Err(Error::config(
                "scenario.validation_fraction",
                format!("operator {id} has no training data left"),
            ));
        }
        let mut rng = synth.child("corrupt", id as u64);
        for c in scenario.corruption.iter().filter(|c| c.operator == id) {
            train = corrupt(&train, c.probability, &mut rng)?;
        }
        operators.push(OperatorData {
            id,
            participants: group,
            train,
            validation,
        });
    }

    let mut pick = training_ids.clone();
    synth.child("trained-test", 0).shuffle(&mut pick);
    pick.truncate(scenario.trained_test_participants);
    pick.sort_unstable();
    let mut trained_test = Vec::new();
    for pid in pick {
        trained_test.extend(gen_samples(
            &participants[pid],
            scenario.test_sequences_per_class,
            "test",
            &synth,
            spec,
            scenario.noise,
        )?);
    }
    let mut untrained_test = Vec::new();
    for p in &participants[scenario.participants..] {
        untrained_test.extend(gen_samples(
            p,
            scenario.test_sequences_per_class,
            "test",
            &synth,
            spec,
            scenario.noise,
        )?);
    }
    Ok(Partition {
        participants,
        operators,
        trained_test,
        untrained_test,
    })
}

/// Returns a copy with each label replaced, with probability `probability`,
/// by a different class (the other class when there are two).
pub fn corrupt(samples: &[Sample], probability: f64, rng: &mut Rng) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::config(
            "scenario.corruption.probability",
            format!("{probability} is not in [0, 1]"),
        ));
    }
    samples
        .iter()
        .map(|s| {
            if probability > 0.0 && rng.bernoulli(probability) {
                let c = s.sequence.classes();
                let shift = 1 + rng.below(c - 1);
                let label = (s.sequence.label() + shift) % c;
                Ok(Sample {
                    participant: s.participant,
                    sequence: s.sequence.relabeled(label)?,
                })
            } else {
                Ok(s.clone())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub participant: usize,
    /// `None` for test shards.
    pub operator: Option<usize>,
    /// `train`, `validation`, `trained_test` or `untrained_test`.
    pub split: String,
    pub class: usize,
    pub sequence: usize,
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: usize,
    pub entries: Vec<ManifestEntry>,
}

/// Writes every frame as an 8-bit PGM plus `manifest.json`.
pub fn export_dataset(part: &Partition, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir.join("frames"))?;
    let mut entries = Vec::new();
    let mut classes = 0;
    let mut emit = |s: &Sample, operator: Option<usize>, split: &str, idx: usize| -> Result<()> {
        classes = s.sequence.classes();
        let mut frames = Vec::new();
        for (k, f) in s.sequence.frames().iter().enumerate() {
            let name = format!("frames/{split}_{idx:05}_f{k}.pgm");
            write_pgm(&dir.join(&name), f)?;
            frames.push(name);
        }
        entries.push(ManifestEntry {
            participant: s.participant,
            operator,
            split: split.to_string(),
            class: s.sequence.label(),
            sequence: idx,
            frames,
        });
        Ok(())
    };
    let mut counters = [0usize; 4];
    for op in &part.operators {
        for s in &op.train {
            emit(s, Some(op.id), "train", counters[0])?;
            counters[0] += 1;
        }
        for s in &op.validation {
            emit(s, Some(op.id), "validation", counters[1])?;
            counters[1] += 1;
        }
    }
    for s in &part.trained_test {
        emit(s, None, "trained_test", counters[2])?;
        counters[2] += 1;
    }
    for s in &part.untrained_test {
        emit(s, None, "untrained_test", counters[3])?;
        counters[3] += 1;
    }
    let manifest = Manifest { classes, entries };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

/// Reads a directory written by [`export_dataset`] back into tagged samples.
pub fn import_dataset(dir: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let frames = e
            .frames
            .iter()
            .map(|f| read_pgm(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            participant: e.participant,
            sequence: FrameSequence::new(frames, e.class, manifest.classes)?,
        });
    }
    Ok((manifest, samples))
}
