use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ddgcn::data::{
    generate_synthetic, load_dataset, preprocess_all, validate_dataset, SkeletonSample, SyntheticSpec,
    DEFAULT_TARGET_FRAMES,
};
use ddgcn::graph::BUILTIN_TOPOLOGIES;
use ddgcn::layers::{DEFAULT_CHANNELS, DEFAULT_STRIDES};
use ddgcn::train::TrainConfig;
use ddgcn::{ModelConfig, PartitionStrategy, SkeletonTopology, WindowSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    Joint,
    Bone,
    Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub window_frames: usize,
    /// Defaults to every joint of the topology.
    pub window_joints: Option<usize>,
    pub heads: usize,
    pub kernel: usize,
    pub groups: usize,
    pub num_classes: usize,
    pub attention: bool,
    pub position_bias: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            in_channels: 3,
            channels: DEFAULT_CHANNELS.to_vec(),
            strides: DEFAULT_STRIDES.to_vec(),
            window_frames: 4,
            window_joints: None,
            heads: 4,
            kernel: 5,
            groups: 4,
            num_classes: 60,
            attention: true,
            position_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    File {
        path: PathBuf,
        #[serde(default = "default_target_frames")]
        target_frames: usize,
    },
}

fn default_target_frames() -> usize {
    DEFAULT_TARGET_FRAMES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in topology name, or a path to a topology JSON file.
    pub topology: String,
    pub partition: PartitionStrategy,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub data: DataSource,
    pub stream: StreamMode,
    pub output_dir: PathBuf,
    /// Model initialization seed.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            topology: "ntu25".into(),
            partition: PartitionStrategy::Activity,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
            stream: StreamMode::Joint,
            output_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

/// Everything a command needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub topology: SkeletonTopology,
    pub model: ModelConfig,
}

/// Applies `key.path=value`; the value is parsed as JSON and falls back to a
/// plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("empty segment in override key `{key}`")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

pub fn parse_config(text: &str, overrides: &[String]) -> CliResult<RunConfig> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
    if !doc.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).map_err(|e| CliError::Config(format!("config: {e}")))
}

pub fn load_config(path: &Path, overrides: &[String]) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

impl RunConfig {
    pub fn resolve_topology(&self) -> CliResult<SkeletonTopology> {
        if BUILTIN_TOPOLOGIES.contains(&self.topology.as_str()) {
            return Ok(SkeletonTopology::builtin(&self.topology)?);
        }
        let path = Path::new(&self.topology);
        if !path.exists() {
            return Err(CliError::Config(format!(
                "topology `{}` is neither built-in ({}) nor an existing file",
                self.topology,
                BUILTIN_TOPOLOGIES.join(", ")
            )));
        }
        SkeletonTopology::load(path).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn resolve(self) -> CliResult<Resolved> {
        let topology = self.resolve_topology()?;
        let m = &self.model;
        let joints = m.window_joints.unwrap_or(topology.num_joints());
        let model = ModelConfig {
            topology: topology.clone(),
            partition: self.partition,
            in_channels: m.in_channels,
            channels: m.channels.clone(),
            strides: m.strides.clone(),
            window: WindowSpec::new(m.window_frames, joints)?,
            heads: m.heads,
            kernel: m.kernel,
            groups: m.groups,
            num_classes: m.num_classes,
            attention: m.attention,
            position_bias: m.position_bias,
        };
        model.validate()?;
        self.train.validate()?;
        if let DataSource::File { target_frames: 0, .. } = self.data {
            return Err(CliError::Config("target_frames must be positive".into()));
        }
        Ok(Resolved {
            run: self,
            topology,
            model,
        })
    }
}

impl Resolved {
    /// Loads or generates the dataset and checks it against the model.
    pub fn dataset(&self) -> CliResult<Vec<SkeletonSample>> {
        let samples = match &self.run.data {
            DataSource::Synthetic(spec) => generate_synthetic(spec, &self.topology)?,
            DataSource::File { path, target_frames } => {
                let raw = load_dataset(path, self.topology.num_joints()).map_err(|e| match e {
                    ddgcn::Error::Io(io) => CliError::Data(format!("{}: {io}", path.display())),
                    other => other.into(),
                })?;
                preprocess_all(&raw, self.topology.root(), *target_frames)
            }
        };
        if samples.is_empty() {
            return Err(CliError::Data("dataset is empty".into()));
        }
        validate_dataset(
            &samples,
            self.topology.num_joints(),
            self.model.in_channels,
            self.model.num_classes,
        )?;
        Ok(samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = parse_config("{}", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let r = c.resolve().unwrap();
        assert_eq!(r.model.window, WindowSpec::new(4, 25).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse_config(r#"{"bogus": 1}"#, &[]), Err(CliError::Config(_))));
        assert!(matches!(
            parse_config(r#"{"model": {"layers": 3}}"#, &[]),
            Err(CliError::Config(_))
        ));
        assert!(parse_config("{}", &["train.momentum=0.9".into()]).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let c = parse_config(
            r#"{"train": {"epochs": 3}}"#,
            &[
                "train.base_lr=0.001".into(),
                "topology=toy5".into(),
                "model.channels=[8,8]".into(),
                "data.synthetic.frames=8".into(),
                "stream=bone".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.base_lr, 0.001);
        assert_eq!(c.topology, "toy5");
        assert_eq!(c.model.channels, vec![8, 8]);
        assert_eq!(c.stream, StreamMode::Bone);
        assert!(matches!(c.data, DataSource::Synthetic(SyntheticSpec { frames: 8, .. })));
        assert!(parse_config("{}", &["novalue".into()]).is_err());
        assert!(parse_config("{}", &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn resolve_validates_model() {
        let c = parse_config(
            r#"{"topology": "toy5", "model": {"channels": [8], "strides": [1, 2]}}"#,
            &[],
        )
        .unwrap();
        assert!(matches!(c.resolve(), Err(CliError::Config(_))));
        let c = parse_config(r#"{"topology": "nope"}"#, &[]).unwrap();
        assert!(matches!(c.resolve(), Err(CliError::Config(_))));
    }
}
