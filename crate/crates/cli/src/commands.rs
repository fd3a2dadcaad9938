use std::io::Write;
use std::path::{Path, PathBuf};

use edgecnn::data::{balanced_subset, load_fer2013, load_raf_db, synthetic, Dataset, Normalization, Split};
use edgecnn::model::{Model, ModelConfig};
use edgecnn::profile::{bench_forward, bench_grouped_vs_dense, cost_report, GroupedBenchRow, TimingStats, EDGEBLOCK_SHAPES};
use edgecnn::train::{checkpoint_precision, evaluate, load_model, model_checkpoint, Checkpoint, CropPolicy, TrainConfig, Trainer};
use edgecnn::{Element, Precision};

use crate::args::{
    BenchArgs, Cli, Command, DataArgs, DatasetKind, EvalArgs, ExportArgs, Format, ProfileArgs, SplitArg, TraceArgs,
    TrainArgs,
};
use crate::{CliError, CliResult};

type Out<'a> = &'a mut (dyn Write + Send);

pub fn dispatch(cli: Cli, out: Out<'_>) -> CliResult<()> {
    let threads = match &cli.command {
        Command::Train(a) => a.common.threads,
        Command::Eval(a) => a.common.threads,
        Command::Profile(a) => a.common.threads,
        Command::Bench(a) => a.common.threads,
        Command::Trace(a) => a.common.threads,
        Command::Export(a) => a.common.threads,
    };
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Profile(a) => profile(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Trace(a) => trace(a, out),
        Command::Export(a) => export(a, out),
    })
}

fn emit(out: Out<'_>, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Runtime(format!("writing output: {e}")))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist or is not a file", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist or is not a directory", path.display())))
    }
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    require_file(path, "checkpoint")?;
    Checkpoint::load(path).map_err(|e| CliError::from(e).about(path))
}

/// Data-loading failures, including I/O, are data errors.
fn data_err(path: &Path) -> impl Fn(edgecnn::Error) -> CliError + '_ {
    move |e| match e {
        edgecnn::Error::Io { .. } => CliError::Data(e.to_string()),
        other => CliError::from(other).about(path),
    }
}

/// Checks dataset paths without reading any data.
fn dataset_paths(d: &DataArgs) -> CliResult<Option<(PathBuf, Option<PathBuf>)>> {
    let need_dir = || {
        d.data_dir
            .clone()
            .ok_or_else(|| CliError::Usage(format!("--data-dir is required for --dataset {:?}", d.dataset).to_lowercase()))
    };
    Ok(match d.dataset {
        DatasetKind::Synthetic => match &d.data_dir {
            Some(dir) => {
                require_dir(dir, "synthetic fixture directory")?;
                Some((dir.clone(), None))
            }
            None => None,
        },
        DatasetKind::Fer2013 => {
            let p = need_dir()?;
            let csv = if p.is_dir() { p.join("fer2013.csv") } else { p };
            require_file(&csv, "FER-2013 CSV")?;
            Some((csv, None))
        }
        DatasetKind::Rafdb => {
            let root = need_dir()?;
            require_dir(&root, "RAF-DB root")?;
            let labels = d.label_file.clone().unwrap_or_else(|| root.join("EmoLabel").join("list_patition_label.txt"));
            require_file(&labels, "RAF-DB label file")?;
            let aligned = root.join("Image").join("aligned");
            let images = if aligned.is_dir() { aligned } else { root };
            Some((images, Some(labels)))
        }
    })
}

fn load_dataset(d: &DataArgs, seed: u64) -> CliResult<Dataset> {
    let paths = dataset_paths(d)?;
    match (d.dataset, paths) {
        (DatasetKind::Synthetic, None) => {
            if d.synthetic_per_class == 0 {
                return Err(CliError::Usage("--synthetic-per-class must be positive".into()));
            }
            let held = (d.synthetic_per_class / 3).max(1);
            Ok(synthetic::generate_dataset(d.synthetic_per_class, held, held, seed))
        }
        (DatasetKind::Synthetic, Some((dir, _))) => synthetic::load_synthetic(&dir).map_err(data_err(&dir)),
        (DatasetKind::Fer2013, Some((csv, _))) => load_fer2013(&csv).map_err(data_err(&csv)),
        (DatasetKind::Rafdb, Some((images, Some(labels)))) => load_raf_db(&images, &labels).map_err(data_err(&labels)),
        _ => unreachable!("dataset_paths covers every dataset kind"),
    }
}

fn train(a: TrainArgs, out: Out<'_>) -> CliResult<()> {
    if let Some(ck) = &a.checkpoint {
        require_file(ck, "checkpoint")?;
    }
    match Precision::from(a.precision) {
        Precision::F32 => train_as::<f32>(a, out),
        Precision::F64 => train_as::<f64>(a, out),
    }
}

fn train_as<T: Element>(a: TrainArgs, out: Out<'_>) -> CliResult<()> {
    let seed = a.common.seed;
    let config = TrainConfig {
        base_lr: a.lr,
        weight_decay: a.weight_decay,
        momentum: a.momentum,
        batch_size: a.batch_size,
        total_epochs: a.epochs,
        seed,
        decay_all: a.decay_all,
        stop_at_train_acc: a.stop_at_acc,
        ..TrainConfig::default()
    };
    config.validate()?;
    let mut data = load_dataset(&a.data, seed)?;
    if let Some(n) = a.subset_per_class {
        data.train = balanced_subset(&data.train, n, seed);
    }
    if data.train.len() < 2 {
        return Err(CliError::Data(format!("training split holds {} images", data.train.len())));
    }
    let mut trainer = match &a.checkpoint {
        Some(path) => Trainer::<T>::from_checkpoint(&load_checkpoint(path)?).map_err(|e| CliError::from(e).about(path))?,
        None => {
            let norm = Normalization::from_images(&data.train)?;
            let model = Model::<T>::build(&ModelConfig::for_variant(a.arch.into()), seed)?;
            Trainer::new(model, config, norm)?
        }
    };
    let text = a.common.format == Format::Text;
    if text {
        emit(
            out,
            &format!(
                "training {} on {} images ({} validation), epochs {}..{}\n",
                trainer.model.config.variant.arch_name(),
                data.train.len(),
                data.validation().len(),
                trainer.epoch,
                trainer.config.total_epochs
            ),
        )?;
    }
    let mut write_err = None;
    let fitted = trainer.fit(&data, Some(&a.out), |m| {
        if text {
            let val = m.val_acc.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let line = format!(
                "epoch {:>3}  lr {:.0e}  loss {:.4}  train {:.4}  val {val}  {:.1}s\n",
                m.epoch, m.lr, m.train_loss, m.train_acc, m.wall_seconds
            );
            if let Err(e) = emit(out, &line) {
                write_err.get_or_insert(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    fitted.map_err(|e| match e {
        edgecnn::Error::Io { .. } => CliError::Runtime(e.to_string()),
        other => CliError::from(other),
    })?;
    let last = trainer.history.last();
    let summary = if text {
        let mut s = format!(
            "done: {} epochs, best score {:.4}, outputs in {}\n",
            trainer.epoch,
            trainer.best_score.unwrap_or(f64::NAN),
            a.out.display()
        );
        for ev in &trainer.events {
            s.push_str(&format!("condensed {} to stage {} at epoch {}\n", ev.layer, ev.stage, ev.epoch));
        }
        s
    } else {
        format!(
            "{{\n  \"epochs\": {},\n  \"best_score\": {},\n  \"train_loss\": {},\n  \"train_acc\": {},\n  \"val_acc\": {},\n  \"condense_events\": {},\n  \"out\": {:?}\n}}\n",
            trainer.epoch,
            json_num(trainer.best_score),
            json_num(last.map(|m| m.train_loss)),
            json_num(last.map(|m| m.train_acc)),
            json_num(last.and_then(|m| m.val_acc)),
            trainer.events.len(),
            a.out.display().to_string()
        )
    };
    emit(out, &summary)
}

fn json_num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => "null".into(),
    }
}

fn eval(a: EvalArgs, out: Out<'_>) -> CliResult<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    dataset_paths(&a.data)?;
    let precision = match a.precision {
        Some(p) => p.into(),
        None => checkpoint_precision(&ck).map_err(|e| CliError::from(e).about(&a.checkpoint))?,
    };
    match precision {
        Precision::F32 => eval_as::<f32>(&a, &ck, out),
        Precision::F64 => eval_as::<f64>(&a, &ck, out),
    }
}

fn eval_as<T: Element>(a: &EvalArgs, ck: &Checkpoint, out: Out<'_>) -> CliResult<()> {
    let (model, norm) = load_model::<T>(ck).map_err(|e| CliError::from(e).about(&a.checkpoint))?;
    let data = load_dataset(&a.data, a.common.seed)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let images = data.split(split);
    if images.is_empty() {
        return Err(CliError::Data(format!("the {} split is empty", split.name())));
    }
    let policy = if a.random_crops {
        CropPolicy::RandomTenCrop { seed: a.common.seed }
    } else {
        CropPolicy::TenCrop
    };
    let e = evaluate(&model, images, &norm, policy)?;
    emit(
        out,
        &match a.common.format {
            Format::Text => format!("{} split, {} images, ten-crop\n{}", split.name(), images.len(), e.render_text()),
            Format::Json => e.render_json(),
        },
    )
}

fn condense_fully<T: Element>(model: &mut Model<T>) -> CliResult<()> {
    for (_, l) in model.learned_layers_mut() {
        while !l.is_fully_condensed() {
            l.condense()?;
        }
    }
    Ok(())
}

fn profile(a: ProfileArgs, out: Out<'_>) -> CliResult<()> {
    match a.checkpoint.as_ref().map(|p| load_checkpoint(p)).transpose()? {
        Some(ck) => match checkpoint_precision(&ck)? {
            Precision::F32 => profile_as(&a, load_model::<f32>(&ck)?.0, out),
            Precision::F64 => profile_as(&a, load_model::<f64>(&ck)?.0, out),
        },
        None => match Precision::from(a.precision) {
            Precision::F32 => profile_as(&a, Model::<f32>::build(&ModelConfig::for_variant(a.arch.into()), a.common.seed)?, out),
            Precision::F64 => profile_as(&a, Model::<f64>::build(&ModelConfig::for_variant(a.arch.into()), a.common.seed)?, out),
        },
    }
}

fn profile_as<T: Element>(a: &ProfileArgs, mut model: Model<T>, out: Out<'_>) -> CliResult<()> {
    if a.condensed {
        condense_fully(&mut model)?;
    }
    let mut report = cost_report(&model)?;
    if !a.skip_timing {
        report.timing = Some(bench_forward(&model, a.runs, a.common.seed)?);
    }
    emit(
        out,
        &match a.common.format {
            Format::Text => report.render_text(),
            Format::Json => report.render_json(),
        },
    )
}

fn bench(a: BenchArgs, out: Out<'_>) -> CliResult<()> {
    let cfg = ModelConfig::for_variant(a.arch.into());
    let forward = match Precision::from(a.precision) {
        Precision::F32 => bench_forward(&Model::<f32>::build(&cfg, a.common.seed)?, a.runs, a.common.seed)?,
        Precision::F64 => bench_forward(&Model::<f64>::build(&cfg, a.common.seed)?, a.runs, a.common.seed)?,
    };
    let rows = bench_grouped_vs_dense(&EDGEBLOCK_SHAPES, &[1, 4, 8], a.runs, a.common.seed)?;
    emit(
        out,
        &match a.common.format {
            Format::Text => bench_text(cfg.variant.arch_name(), &forward, &rows),
            Format::Json => bench_json(cfg.variant.arch_name(), &forward, &rows),
        },
    )
}

fn bench_text(arch: &str, t: &TimingStats, rows: &[GroupedBenchRow]) -> String {
    let mut s = format!(
        "{arch} forward: median {:.3} ms, p10 {:.3} ms, p90 {:.3} ms over {} runs, {:.1} fps\nthreads {}, cpu {}\n\n",
        t.median_ms, t.p10_ms, t.p90_ms, t.runs, t.fps, t.threads, t.cpu
    );
    s.push_str("3x3 convolution, grouped vs dense (f32); time ratios depend on the host\n");
    s.push_str(&format!(
        "{:<18} {:>6} {:>11} {:>9} {:>10} {:>10} {:>11} {:>10}\n",
        "in,out,h,w", "groups", "macs", "mac_ratio", "bytes", "macs/byte", "median_ms", "time_ratio"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:<18} {:>6} {:>11} {:>9.4} {:>10} {:>10.3} {:>11.4} {:>10.3}\n",
            format!("{},{},{},{}", r.in_channels, r.out_channels, r.h, r.w),
            r.groups,
            r.macs,
            r.mac_ratio,
            r.bytes,
            r.intensity,
            r.median_ms,
            r.time_ratio
        ));
    }
    s
}

fn bench_json(arch: &str, t: &TimingStats, rows: &[GroupedBenchRow]) -> String {
    let rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{{\"in\": {}, \"out\": {}, \"h\": {}, \"w\": {}, \"groups\": {}, \"macs\": {}, \"mac_ratio\": {}, \"bytes\": {}, \"intensity\": {}, \"median_ms\": {}, \"time_ratio\": {}}}",
                r.in_channels, r.out_channels, r.h, r.w, r.groups, r.macs, r.mac_ratio, r.bytes, r.intensity, r.median_ms, r.time_ratio
            )
        })
        .collect();
    format!(
        "{{\n  \"arch\": \"{arch}\",\n  \"median_ms\": {},\n  \"p10_ms\": {},\n  \"p90_ms\": {},\n  \"runs\": {},\n  \"fps\": {},\n  \"threads\": {},\n  \"cpu\": {:?},\n  \"grouped_vs_dense\": [\n    {}\n  ]\n}}\n",
        t.median_ms, t.p10_ms, t.p90_ms, t.runs, t.fps, t.threads, t.cpu, rows.join(",\n    ")
    )
}

fn trace(a: TraceArgs, out: Out<'_>) -> CliResult<()> {
    let model = Model::<f32>::build(&ModelConfig::for_variant(a.arch.into()), a.common.seed)?;
    let rows = model.shape_trace()?;
    let text = match a.common.format {
        Format::Text => {
            let mut s = format!("{:<22} {:<52} {}\n", "Layers", "Operator", "Output");
            for r in &rows {
                s.push_str(&format!("{:<22} {:<52} {}\n", r.layer, r.operator, r.hwc()));
            }
            s
        }
        Format::Json => {
            let items: Vec<String> = rows
                .iter()
                .map(|r| format!("{{\"layer\": {:?}, \"operator\": {:?}, \"output\": {:?}}}", r.layer, r.operator, r.hwc()))
                .collect();
            format!("[\n  {}\n]\n", items.join(",\n  "))
        }
    };
    emit(out, &text)
}

fn export(a: ExportArgs, out: Out<'_>) -> CliResult<()> {
    if !a.grouped {
        return Err(CliError::Usage("export needs --grouped (the only supported target)".into()));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let about = |e: edgecnn::Error| CliError::from(e).about(&a.checkpoint);
    let written = match checkpoint_precision(&ck).map_err(about)? {
        Precision::F32 => export_as::<f32>(&ck, &a.out).map_err(about)?,
        Precision::F64 => export_as::<f64>(&ck, &a.out).map_err(about)?,
    };
    emit(out, &format!("wrote {} ({written} records)\n", a.out.display()))
}

fn export_as<T: Element>(ck: &Checkpoint, dst: &Path) -> edgecnn::Result<usize> {
    let (model, norm) = load_model::<T>(ck)?;
    if model.learned_layers().is_empty() {
        return Err(edgecnn::Error::Condense("architecture has no learned group convolutions to export".into()));
    }
    if !model.is_fully_condensed() {
        let pending: Vec<String> = model
            .learned_layers()
            .into_iter()
            .filter(|(_, l)| !l.is_fully_condensed())
            .map(|(n, l)| format!("{n} (stage {} of {})", l.stage(), l.condensation() - 1))
            .collect();
        return Err(edgecnn::Error::Condense(format!("not fully condensed: {}", pending.join(", "))));
    }
    let packed = model_checkpoint(&model, &norm, true)?;
    packed.save(dst)?;
    Ok(packed.records.len())
}
