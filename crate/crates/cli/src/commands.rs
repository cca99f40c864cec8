use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ddgcn::data::SkeletonSample;
use ddgcn::engine::checkpoint;
use ddgcn::graph::{build_adjacency, normalized_subsets, partition};
use ddgcn::layers::checks::{run_gradient_suite, GradCheckSetup};
use ddgcn::train::{evaluate, evaluate_fused, train_with, write_history, EpochRecord, Stream, HISTORY_HEADER};
use ddgcn::DdGcn;

use crate::config::{Resolved, StreamMode};
use crate::error::{CliError, CliResult};

fn streams(mode: StreamMode) -> &'static [Stream] {
    match mode {
        StreamMode::Joint => &[Stream::Joint],
        StreamMode::Bone => &[Stream::Bone],
        StreamMode::Fusion => &[Stream::Joint, Stream::Bone],
    }
}

fn stream_name(s: Stream) -> &'static str {
    match s {
        Stream::Joint => "joint",
        Stream::Bone => "bone",
    }
}

pub fn history_path(dir: &Path, s: Stream) -> PathBuf {
    dir.join(format!("history_{}.csv", stream_name(s)))
}

pub fn checkpoint_path(dir: &Path, s: Stream) -> PathBuf {
    dir.join(format!("checkpoint_{}.bin", stream_name(s)))
}

fn create_output_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

pub fn train(cfg: &Resolved) -> CliResult<()> {
    let data = cfg.dataset()?;
    let out = &cfg.run.output_dir;
    create_output_dir(out)?;
    for &stream in streams(cfg.run.stream) {
        let inputs = stream.prepare(&data, &cfg.topology)?;
        let mut model = DdGcn::new(cfg.model.clone(), cfg.run.seed)?;
        let name = stream_name(stream);
        let history = train_with(&mut model, &inputs, &cfg.run.train, |r: &EpochRecord| {
            println!(
                "[{name}] epoch {:>3}  lr {:.3e}  loss {:.6}  acc {:.4}",
                r.epoch, r.lr, r.loss, r.accuracy
            );
        })?;
        write_history(BufWriter::new(File::create(history_path(out, stream))?), &history)?;
        checkpoint::save(model.params(), checkpoint_path(out, stream))?;
        println!("[{name}] train accuracy {:.4}", evaluate(&model, &inputs)?);
    }
    Ok(())
}

fn load_model(cfg: &Resolved, path: &Path) -> CliResult<DdGcn> {
    if !path.exists() {
        return Err(CliError::Data(format!("checkpoint {} not found", path.display())));
    }
    let mut model = DdGcn::new(cfg.model.clone(), cfg.run.seed)?;
    let stored = checkpoint::load(path)?;
    model.params_mut().copy_values_from(&stored)?;
    Ok(model)
}

/// Single-stream accuracy, or two-stream fusion when a second checkpoint is
/// given (first = joint, second = bone).
pub fn eval(cfg: &Resolved, first: &Path, second: Option<&Path>) -> CliResult<()> {
    let data = cfg.dataset()?;
    match (cfg.run.stream, second) {
        (StreamMode::Fusion, None) => Err(CliError::Config(
            "fusion evaluation needs --checkpoint2 (bone stream)".into(),
        )),
        (_, Some(second)) => {
            let joint = load_model(cfg, first)?;
            let bone = load_model(cfg, second)?;
            let bones = Stream::Bone.prepare(&data, &cfg.topology)?;
            println!("joint accuracy {:.4}", evaluate(&joint, &data)?);
            println!("bone accuracy {:.4}", evaluate(&bone, &bones)?);
            println!("fused accuracy {:.4}", evaluate_fused(&joint, &bone, &data)?);
            Ok(())
        }
        (mode, None) => {
            let stream = streams(mode)[0];
            let model = load_model(cfg, first)?;
            let inputs: Vec<SkeletonSample> = stream.prepare(&data, &cfg.topology)?;
            println!("{} accuracy {:.4}", stream_name(stream), evaluate(&model, &inputs)?);
            Ok(())
        }
    }
}

/// Runs the layer and model checks on T=8, C=8 with the configured topology,
/// partition and attention settings.
pub fn gradcheck(cfg: &Resolved) -> CliResult<()> {
    let mut setup = GradCheckSetup::small(cfg.topology.clone(), cfg.run.partition);
    setup.window_frames = cfg.model.window.frames;
    setup.heads = cfg.model.heads;
    setup.kernel = cfg.model.kernel;
    setup.groups = cfg.model.groups;
    let results = run_gradient_suite(&setup)?;
    let mut failed = Vec::new();
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<20} max rel err {:.3e}  {verdict}", r.name, r.max_rel_err);
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

pub fn render_partition(cfg: &Resolved) -> CliResult<(String, String)> {
    let t = &cfg.topology;
    let v = t.num_joints();
    let labeling = partition(t, cfg.run.partition);
    let mats = normalized_subsets(&build_adjacency(t), &labeling)?;
    let mut text = String::new();
    let mut csv = String::from("subset,row,col,value\n");
    writeln!(text, "{} partition, K = {}", cfg.run.partition, labeling.num_subsets()).unwrap();
    writeln!(text, "subset labels (row = root, column = neighbor, . = not adjacent)").unwrap();
    write!(text, "{:>6}", "root").unwrap();
    for j in 0..v {
        write!(text, "{j:>4}").unwrap();
    }
    writeln!(text).unwrap();
    for i in 0..v {
        write!(text, "{i:>6}").unwrap();
        for j in 0..v {
            match labeling.label(i, j) {
                Some(k) => write!(text, "{k:>4}").unwrap(),
                None => write!(text, "{:>4}", ".").unwrap(),
            }
        }
        writeln!(text).unwrap();
    }
    for (k, m) in mats.iter().enumerate() {
        writeln!(text, "\nsubset {k}: normalized masked adjacency").unwrap();
        for i in 0..v {
            for j in 0..v {
                let x = m.get(&[i, j]);
                write!(text, "{x:>8.4}").unwrap();
                writeln!(csv, "{k},{i},{j},{x:?}").unwrap();
            }
            writeln!(text).unwrap();
        }
    }
    Ok((text, csv))
}

pub fn inspect_partition(cfg: &Resolved, write_csv: bool) -> CliResult<()> {
    let (text, csv) = render_partition(cfg)?;
    print!("{text}");
    if write_csv {
        let out = &cfg.run.output_dir;
        create_output_dir(out)?;
        let path = out.join(format!("partition_{}.csv", cfg.run.partition));
        fs::write(&path, csv)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Copies one history CSV, or merges several with a leading `run` column
/// holding each file's stem.
pub fn export_metrics(inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    let expected: Vec<&str> = HISTORY_HEADER.split(',').collect();
    let merge = inputs.len() > 1;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for path in inputs {
        if !path.exists() {
            return Err(CliError::Data(format!("{} not found", path.display())));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != expected {
            return Err(CliError::Data(format!(
                "{}: header {:?}, expected {HISTORY_HEADER}",
                path.display(),
                header
            )));
        }
        let run = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for row in reader.records() {
            let row = row?;
            for field in row.iter().skip(1) {
                field
                    .parse::<f64>()
                    .map_err(|_| CliError::Data(format!("{}: bad number `{field}`", path.display())))?;
            }
            let prefix = merge.then(|| run.clone());
            rows.push(prefix.into_iter().chain(row.iter().map(str::to_string)).collect());
        }
    }
    let mut writer = csv::Writer::from_path(out)?;
    let run_col = merge.then_some("run");
    writer.write_record(run_col.into_iter().chain(expected.iter().copied()))?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
