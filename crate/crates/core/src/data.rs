//! Skeleton sequences: JSON-lines loading, fixed-length preprocessing and a
//! sinusoidal synthetic action generator.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::Array;
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;

pub const DEFAULT_TARGET_FRAMES: usize = 64;

/// One labelled sequence, `frames: [T, V, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSample {
    pub id: String,
    pub label: usize,
    pub frames: Array,
}

impl SkeletonSample {
    pub fn new(id: impl Into<String>, label: usize, frames: Array) -> Result<Self> {
        let id = id.into();
        if frames.ndim() != 3 || frames.is_empty() {
            return Err(Error::Data(format!(
                "sample {id}: frames must be a non-empty T×V×C array"
            )));
        }
        if !frames.is_finite() {
            return Err(Error::Data(format!("sample {id}: non-finite coordinate")));
        }
        Ok(Self { id, label, frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn num_joints(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn num_channels(&self) -> usize {
        self.frames.shape()[2]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    label: usize,
    joints: usize,
    channels: usize,
    frames: Vec<Vec<Vec<f64>>>,
}

impl SampleRecord {
    fn into_sample(self) -> Result<SkeletonSample> {
        let t = self.frames.len();
        let mut data = Vec::with_capacity(t * self.joints * self.channels);
        for (f, frame) in self.frames.iter().enumerate() {
            if frame.len() != self.joints {
                return Err(Error::Data(format!(
                    "sample {}: frame {f} has {} joints, header says {}",
                    self.id,
                    frame.len(),
                    self.joints
                )));
            }
            for (j, joint) in frame.iter().enumerate() {
                if joint.len() != self.channels {
                    return Err(Error::Data(format!(
                        "sample {}: frame {f} joint {j} has {} channels, header says {}",
                        self.id,
                        joint.len(),
                        self.channels
                    )));
                }
                data.extend_from_slice(joint);
            }
        }
        let frames = Array::new(&[t, self.joints, self.channels], data)?;
        SkeletonSample::new(self.id, self.label, frames)
    }

    fn from_sample(s: &SkeletonSample) -> Self {
        let (v, c) = (s.num_joints(), s.num_channels());
        let frames = s
            .frames
            .data()
            .chunks(v * c)
            .map(|frame| frame.chunks(c).map(<[f64]>::to_vec).collect())
            .collect();
        Self {
            id: s.id.clone(),
            label: s.label,
            joints: v,
            channels: c,
            frames,
        }
    }
}

/// Parses one sample per non-blank line. Every sample must have
/// `expected_joints` joints.
pub fn read_dataset<R: BufRead>(reader: R, expected_joints: usize) -> Result<Vec<SkeletonSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        if record.joints != expected_joints {
            return Err(Error::Data(format!(
                "sample {}: {} joints, topology has {expected_joints}",
                record.id, record.joints
            )));
        }
        let sample = record
            .into_sample()
            .map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, expected_joints: usize) -> Result<Vec<SkeletonSample>> {
    read_dataset(BufReader::new(File::open(path)?), expected_joints)
}

pub fn write_dataset<W: Write>(mut writer: W, samples: &[SkeletonSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut writer, &SampleRecord::from_sample(s))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[SkeletonSample]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), samples)
}

/// Checks labels and shapes against a run before any compute.
pub fn validate_dataset(samples: &[SkeletonSample], joints: usize, channels: usize, num_classes: usize) -> Result<()> {
    for s in samples {
        if s.num_joints() != joints || s.num_channels() != channels {
            return Err(Error::Data(format!(
                "sample {}: shape {:?}, expected [T, {joints}, {channels}]",
                s.id,
                s.frames.shape()
            )));
        }
        if s.label >= num_classes {
            return Err(Error::Data(format!(
                "sample {}: label {} outside {num_classes} classes",
                s.id, s.label
            )));
        }
    }
    Ok(())
}

/// Frame indices kept when resampling `t` frames to `target`: the last frame
/// repeats when short, `⌊i·t/target⌋` when long.
pub fn resample_indices(t: usize, target: usize) -> Vec<usize> {
    if t <= target {
        (0..target).map(|i| i.min(t - 1)).collect()
    } else {
        (0..target).map(|i| i * t / target).collect()
    }
}

/// Centers on the frame-0 position of `root` and unifies the length to
/// `target_frames`.
pub fn preprocess(sample: &SkeletonSample, root: usize, target_frames: usize) -> SkeletonSample {
    assert!(target_frames >= 1, "target length must be positive");
    let (t, v, c) = (sample.num_frames(), sample.num_joints(), sample.num_channels());
    let frame_len = v * c;
    let src = sample.frames.data();
    let origin = src[root * c..(root + 1) * c].to_vec();
    let mut data = Vec::with_capacity(target_frames * frame_len);
    for f in resample_indices(t, target_frames) {
        for (i, x) in src[f * frame_len..(f + 1) * frame_len].iter().enumerate() {
            data.push(x - origin[i % c]);
        }
    }
    SkeletonSample {
        id: sample.id.clone(),
        label: sample.label,
        frames: Array::new(&[target_frames, v, c], data).expect("shape matches data"),
    }
}

pub fn preprocess_all(samples: &[SkeletonSample], root: usize, target_frames: usize) -> Vec<SkeletonSample> {
    samples.iter().map(|s| preprocess(s, root, target_frames)).collect()
}

/// Parameters of the synthetic action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 20,
            frames: 16,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

/// Rest pose: each bone has unit length and a direction fixed by the child
/// index, so positions are a pure function of the tree.
fn rest_pose(topology: &SkeletonTopology) -> Vec<[f64; 3]> {
    let v = topology.num_joints();
    let depth = topology.hop_distances();
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by_key(|&j| depth[j]);
    let mut pos = vec![[0.0; 3]; v];
    for j in order {
        if let Some(p) = topology.parent(j) {
            let angle = std::f64::consts::TAU * j as f64 / v as f64;
            pos[j] = [pos[p][0] + angle.cos(), pos[p][1] + angle.sin(), pos[p][2] + 0.25];
        }
    }
    pos
}

/// Class `c` oscillates every joint at frequency `c + 1` cycles per sequence,
/// with a phase that advances by `(c + 1)·π/4` per tree level and by `π/3`
/// per coordinate axis. Amplitude grows with depth.
pub fn generate_synthetic(spec: &SyntheticSpec, topology: &SkeletonTopology) -> Result<Vec<SkeletonSample>> {
    if spec.num_classes == 0 || spec.samples_per_class == 0 || spec.frames == 0 {
        return Err(Error::Config(
            "synthetic spec needs positive classes, samples and frames".into(),
        ));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::Config(format!(
            "noise std {} must be finite and non-negative",
            spec.noise_std
        )));
    }
    let noise = Normal::new(0.0, spec.noise_std).expect("validated std");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rest = rest_pose(topology);
    let depth = topology.hop_distances();
    let (t, v) = (spec.frames, topology.num_joints());
    let mut out = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for c in 0..spec.num_classes {
        let freq = (c + 1) as f64;
        for s in 0..spec.samples_per_class {
            let mut data = Vec::with_capacity(t * v * 3);
            for f in 0..t {
                let phase_t = std::f64::consts::TAU * freq * f as f64 / t as f64;
                for j in 0..v {
                    let d = depth[j].unwrap_or(0) as f64;
                    let amp = 0.2 * (1.0 + d);
                    for (axis, base) in rest[j].iter().enumerate() {
                        let phase = freq * d * std::f64::consts::FRAC_PI_4 + axis as f64 * std::f64::consts::FRAC_PI_3;
                        let mut x = base + amp * (phase_t + phase).sin();
                        if spec.noise_std > 0.0 {
                            x += noise.sample(&mut rng);
                        }
                        data.push(x);
                    }
                }
            }
            let frames = Array::new(&[t, v, 3], data)?;
            out.push(SkeletonSample::new(format!("syn-c{c}-s{s}"), c, frames)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy5() -> SkeletonTopology {
        SkeletonTopology::builtin("toy5").unwrap()
    }

    fn sample(t: usize, v: usize) -> SkeletonSample {
        let data = (0..t * v * 3).map(|i| i as f64 * 0.5 - 3.0).collect();
        SkeletonSample::new("s", 1, Array::new(&[t, v, 3], data).unwrap()).unwrap()
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        assert!(read_dataset("".as_bytes(), 25).unwrap().is_empty());
    }

    #[test]
    fn one_line_two_frames_two_joints() {
        let line = r#"{"id":"a","label":0,"joints":2,"channels":3,"frames":[[[1,2,3],[4,5,6]],[[7,8,9],[10,11,12]]]}"#;
        let d = read_dataset(line.as_bytes(), 2).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].frames.shape(), &[2, 2, 3]);
        assert_eq!(d[0].frames.get(&[1, 0, 2]), 9.0);
    }

    #[test]
    fn joint_mismatch_names_the_sample() {
        let frame: Vec<[f64; 3]> = vec![[0.0; 3]; 24];
        let line = serde_json::json!({"id":"bad-one","label":0,"joints":24,"channels":3,"frames":[frame]}).to_string();
        let err = read_dataset(line.as_bytes(), 25).unwrap_err().to_string();
        assert!(err.contains("bad-one"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = r#"{"id":"a","label":0,"joints":1,"channels":3,"frames":[[[1,2,3]]]}"#;
        let text = format!("{good}\n{{not json\n");
        let err = read_dataset(text.as_bytes(), 1).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let ragged = r#"{"id":"r","label":0,"joints":2,"channels":3,"frames":[[[1,2,3]]]}"#;
        let err = read_dataset(ragged.as_bytes(), 2).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("r"), "{err}");
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut s = sample(3, 5);
        s.frames.data_mut()[4] = 0.1 + 0.2;
        s.frames.data_mut()[7] = -1.0e-300;
        s.frames.data_mut()[8] = std::f64::consts::PI;
        let mut buf = Vec::new();
        write_dataset(&mut buf, &[s.clone(), sample(1, 5)]).unwrap();
        let back = read_dataset(buf.as_slice(), 5).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, s.id);
        assert_eq!(back[0].label, s.label);
        let bits = |a: &Array| a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back[0].frames), bits(&s.frames));
    }

    #[test]
    fn preprocess_centers_on_frame0_root() {
        let mut s = sample(4, 5);
        for a in 0..3 {
            s.frames.set(&[0, 0, a], 5.0);
        }
        let p = preprocess(&s, 0, 4);
        assert_eq!(&p.frames.data()[..3], &[0.0, 0.0, 0.0]);
        for i in 3..s.frames.len() {
            assert_eq!(p.frames.data()[i], s.frames.data()[i] - 5.0);
        }
    }

    #[test]
    fn preprocess_resamples_by_index() {
        let s = sample(8, 2);
        let p = preprocess(&s, 0, 4);
        let centered = preprocess(&s, 0, 8);
        for (i, kept) in [0, 2, 4, 6].into_iter().enumerate() {
            assert_eq!(
                p.frames.data()[i * 6..(i + 1) * 6],
                centered.frames.data()[kept * 6..(kept + 1) * 6]
            );
        }
        assert_eq!(resample_indices(2, 5), vec![0, 1, 1, 1, 1]);
        assert_eq!(resample_indices(5, 2), vec![0, 2]);
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(t in 1usize..20, target in 1usize..20, seed in 0u64..50) {
            let frames = Array::uniform(&[t, 5, 3], 3.0, &mut ChaCha8Rng::seed_from_u64(seed));
            let s = SkeletonSample::new("p", 0, frames).unwrap();
            let once = preprocess(&s, 2, target);
            let twice = preprocess(&once, 2, target);
            prop_assert_eq!(once.frames.data(), twice.frames.data());
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_class_distinct() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            ..Default::default()
        };
        let a = generate_synthetic(&spec, &toy5()).unwrap();
        let b = generate_synthetic(&spec, &toy5()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 80);
        assert_eq!(a[0].frames, a[1].frames);
        for c in 1..4 {
            let d: f64 = a[0]
                .frames
                .data()
                .iter()
                .zip(a[c * 20].frames.data())
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            assert!(d > 0.0);
        }
        let noisy = SyntheticSpec {
            noise_std: 0.1,
            seed: 3,
            ..Default::default()
        };
        let n1 = generate_synthetic(&noisy, &toy5()).unwrap();
        assert_eq!(n1, generate_synthetic(&noisy, &toy5()).unwrap());
        assert_ne!(n1[0].frames, n1[1].frames);
        assert!(generate_synthetic(
            &SyntheticSpec {
                noise_std: -1.0,
                ..Default::default()
            },
            &toy5()
        )
        .is_err());
    }

    /// Perceptron on flattened frames with a bias feature.
    fn perceptron_accuracy(samples: &[SkeletonSample], epochs: usize) -> f64 {
        let dim = samples[0].frames.len() + 1;
        let mut w = vec![0.0; dim];
        let features = |s: &SkeletonSample| {
            let mut f = s.frames.data().to_vec();
            f.push(1.0);
            f
        };
        let sign = |s: &SkeletonSample| if s.label == 0 { -1.0 } else { 1.0 };
        for _ in 0..epochs {
            for s in samples {
                let x = features(s);
                let score: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
                if score * sign(s) <= 0.0 {
                    for (wi, xi) in w.iter_mut().zip(&x) {
                        *wi += sign(s) * xi;
                    }
                }
            }
        }
        let correct = samples
            .iter()
            .filter(|s| {
                let score: f64 = w.iter().zip(features(s)).map(|(a, b)| a * b).sum();
                score * sign(s) > 0.0
            })
            .count();
        correct as f64 / samples.len() as f64
    }

    #[test]
    fn noiseless_two_class_set_is_linearly_separable() {
        let spec = SyntheticSpec {
            num_classes: 2,
            samples_per_class: 5,
            frames: 8,
            noise_std: 0.0,
            seed: 1,
        };
        let d = generate_synthetic(&spec, &toy5()).unwrap();
        assert_eq!(perceptron_accuracy(&d, 50), 1.0);
    }

    #[test]
    fn validation_rejects_bad_labels_and_shapes() {
        let s = sample(2, 5);
        validate_dataset(std::slice::from_ref(&s), 5, 3, 2).unwrap();
        assert!(validate_dataset(std::slice::from_ref(&s), 5, 3, 1).is_err());
        assert!(validate_dataset(&[s], 4, 3, 2).is_err());
    }
}
