use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use payload_sentinel::blockfeat::{fit_dictionary, BlockDictionary};
use payload_sentinel::ingest::{
    extract_pcap_payloads, parse_http_text, parse_labeled_lines, renumber, serialize_labeled_lines, split_dataset,
    DatasetSplit, Label, PayloadSample,
};
use payload_sentinel::nn::{Checkpoint, Variant};
use payload_sentinel::pipeline::report::{parse_jsonl, reference_table, summary_table, to_jsonl, Record};
use payload_sentinel::pipeline::{
    evaluate, perturb_samples, run_ablation, run_sweep, train as train_model, PerturbMode, PipelineError, SweepAxis,
    TrainRunConfig,
};

use crate::manifest::{InputDigest, RunManifest, MANIFEST_FILE};
use crate::settings::{ConfigFile, Pair};
use crate::{read_file, write_file, CliError, EvalArgs, IngestArgs, PerturbArgs, ReportArgs, RunFlags, SweepArgs};
use crate::{AblationArgs, TrainArgs};

pub const DATASET_FILE: &str = "dataset.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LAST_GOOD_FILE: &str = "checkpoint.last_good.bin";
pub const DICTIONARY_FILE: &str = "dictionary.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const PERTURBED_FILE: &str = "perturbed.tsv";

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), CliError> {
    out.write_all(text.as_ref().as_bytes())
        .map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn out_dir(file: &ConfigFile, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = required(file.pick(flag, "out-dir")?, "out-dir")?;
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    Ok(dir)
}

fn parse<T: std::str::FromStr<Err = String>>(v: Option<String>, flag: &str) -> Result<Option<T>, CliError> {
    v.map(|s| s.parse::<T>().map_err(|e| CliError::Usage(format!("--{flag}: {e}"))))
        .transpose()
}

/// Defaults, then the config file, then flags.
pub fn resolve_run(flags: &RunFlags, file: &ConfigFile) -> Result<TrainRunConfig, CliError> {
    let mut c = TrainRunConfig::default();
    let f = flags.clone();
    c.seed = file.pick(f.seed, "seed")?.unwrap_or(c.seed);
    c.epochs = file.pick(f.epochs, "epochs")?.unwrap_or(c.epochs);
    c.batch_size = file.pick(f.batch_size, "batch-size")?.unwrap_or(c.batch_size);
    c.lr = file.pick(f.lr, "lr")?.unwrap_or(c.lr);
    c.early_stop_patience = file.pick(f.patience, "patience")?.unwrap_or(c.early_stop_patience);
    c.block.block_length = file
        .pick(f.block_length, "block-length")?
        .unwrap_or(c.block.block_length);
    c.block.stride = file.pick(f.stride, "stride")?.unwrap_or(c.block.stride);
    c.block.dict_size = file.pick(f.dict_size, "dict-size")?.unwrap_or(c.block.dict_size);
    let m = &mut c.model;
    m.chosen_states = file.pick(f.chosen_states, "chosen-states")?.unwrap_or(m.chosen_states);
    m.variant = file
        .pick(parse::<Variant>(f.variant, "variant")?, "variant")?
        .unwrap_or(m.variant);
    m.embed_dim = file.pick(f.embed_dim, "embed-dim")?.unwrap_or(m.embed_dim);
    m.lstm_hidden = file.pick(f.lstm_hidden, "lstm-hidden")?.unwrap_or(m.lstm_hidden);
    m.conv1_filters = file.pick(f.conv1_filters, "conv1-filters")?.unwrap_or(m.conv1_filters);
    m.conv2_filters = file.pick(f.conv2_filters, "conv2-filters")?.unwrap_or(m.conv2_filters);
    if let Some(Pair(r, k)) = file.pick(parse::<Pair>(f.filter_size, "filter-size")?, "filter-size")? {
        m.filter_size = (r, k);
    }
    if let Some(Pair(r, k)) = file.pick(parse::<Pair>(f.pool_size, "pool-size")?, "pool-size")? {
        m.pool_size = (r, k);
    }
    m.mlp_hidden = file.pick(f.mlp_hidden, "mlp-hidden")?.unwrap_or(m.mlp_hidden);
    m.dropout_rate = file.pick(f.dropout, "dropout")?.unwrap_or(m.dropout_rate);
    if !(0.0..1.0).contains(&m.dropout_rate) {
        return Err(CliError::Usage(format!(
            "--dropout must be in [0, 1), got {}",
            m.dropout_rate
        )));
    }
    c.validate()?;
    Ok(c)
}

/// Reads a canonical dataset and its digest.
fn load_dataset(path: &Path) -> Result<(Vec<PayloadSample>, InputDigest), CliError> {
    let raw = read_file(path)?;
    let samples = parse_labeled_lines(&raw, &path.display().to_string())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((samples, InputDigest::of(path, &raw)))
}

fn members(samples: &[PayloadSample], ids: &[u64]) -> Vec<PayloadSample> {
    let keep: HashSet<u64> = ids.iter().copied().collect();
    samples.iter().filter(|s| keep.contains(&s.id)).cloned().collect()
}

fn split(samples: &[PayloadSample], seed: u64) -> Result<DatasetSplit, CliError> {
    split_dataset(samples, seed).map_err(|e| CliError::Data(e.to_string()))
}

fn write_jsonl(path: &Path, records: &[Record]) -> Result<(), CliError> {
    write_file(path, to_jsonl(records).as_bytes())
}

pub fn ingest(a: IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let format = required(file.pick(a.format, "format")?, "format")?;
    let strip = file.switch(a.strip_headers, "strip-headers")?;
    let inputs: Vec<PathBuf> = file.list(a.input, "input")?;
    let anomalous: Vec<PathBuf> = file.list(a.anomalous, "anomalous")?;
    let label = parse::<Label>(file.pick(a.label, "label")?, "label")?;
    if inputs.is_empty() && anomalous.is_empty() {
        return Err(CliError::Usage("--input is required".into()));
    }
    let mut manifest = RunManifest::new("ingest", TrainRunConfig::default());
    manifest.options.insert("format".into(), format.clone());
    manifest.options.insert("strip-headers".into(), strip.to_string());

    let mut samples = Vec::new();
    let mut summary = String::new();
    match format.as_str() {
        "csic-text" => {
            let base = label.unwrap_or(Label::Normal);
            for (path, l) in inputs
                .iter()
                .map(|p| (p, base))
                .chain(anomalous.iter().map(|p| (p, Label::Anomalous)))
            {
                let raw = read_file(path)?;
                let parsed = parse_http_text(&raw, l, strip, &path.display().to_string())
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                samples.extend(parsed);
                manifest.inputs.push(InputDigest::of(path, &raw));
            }
        }
        "labeled-lines" | "pcap" => {
            if !anomalous.is_empty() {
                return Err(CliError::Usage(format!(
                    "--anomalous applies to csic-text, not {format}"
                )));
            }
            for path in &inputs {
                let raw = read_file(path)?;
                let src = path.display().to_string();
                if format == "pcap" {
                    let l = label.ok_or_else(|| CliError::Usage("pcap input needs --label".into()))?;
                    let ex = extract_pcap_payloads(&raw, l, &src).map_err(|e| CliError::Data(format!("{src}: {e}")))?;
                    let s = &ex.skipped;
                    summary += &format!(
                        "{src}: {} packets, {} payloads; skipped {} empty, {} non-ipv4, {} link type, {} transport, {} malformed\n",
                        ex.packets,
                        ex.samples.len(),
                        s.empty_payload,
                        s.non_ipv4,
                        s.unsupported_link,
                        s.unsupported_transport,
                        s.malformed
                    );
                    samples.extend(ex.samples);
                } else {
                    samples.extend(parse_labeled_lines(&raw, &src).map_err(|e| CliError::Data(format!("{src}: {e}")))?);
                }
                manifest.inputs.push(InputDigest::of(path, &raw));
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown --format {other:?} (expected csic-text, labeled-lines or pcap)"
            )))
        }
    }
    renumber(&mut samples);
    let dir = out_dir(&file, a.out_dir)?;
    let dataset = dir.join(DATASET_FILE);
    write_file(&dataset, &serialize_labeled_lines(&samples))?;
    manifest.artifacts.insert("dataset".into(), dataset);
    manifest.write(&dir)?;
    let normal = samples.iter().filter(|s| s.label == Label::Normal).count();
    say(out, summary)?;
    say(
        out,
        format!("normal\t{normal}\nanomalous\t{}\n", samples.len() - normal),
    )
}

pub fn train(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(a.run.config.as_deref())?;
    let (input, cfg) = match &a.manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            if m.command != "train" {
                return Err(CliError::Usage(format!(
                    "{} is a {} manifest",
                    path.display(),
                    m.command
                )));
            }
            m.verify_inputs()?;
            let input = m.inputs.first().map(|i| i.path.clone());
            (required(input, "input")?, m.config)
        }
        None => (
            required(file.pick(a.input, "input")?, "input")?,
            resolve_run(&a.run, &file)?,
        ),
    };
    let dir = out_dir(&file, a.out_dir)?;
    let (samples, digest) = load_dataset(&input)?;
    let split = split(&samples, cfg.seed)?;
    let dict = fit_dictionary(&members(&samples, &split.train), cfg.block).map_err(PipelineError::from)?;

    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(io(&log_path))?);
    let mut log_err = None;
    let result = train_model(&samples, &split, &dict, &cfg, |r| {
        let line = Record::Epoch(r.clone()).to_line();
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
        eprintln!(
            "epoch {:>3}  loss {:.5}  val f1 {:.4}  dr {:.4}  fpr {:.4}{}",
            r.epoch,
            r.train_loss,
            r.validation.f1,
            r.validation.dr,
            r.validation.fpr,
            if r.improved { "  *" } else { "" }
        );
    });
    log.flush().map_err(io(&log_path))?;
    if let Some(e) = log_err {
        return Err(io(&log_path)(e));
    }
    let outcome = match result {
        Ok(o) => o,
        Err(PipelineError::Diverged { epoch, last_good }) => {
            let p = dir.join(LAST_GOOD_FILE);
            write_file(&p, &last_good.to_bytes())?;
            return Err(CliError::Diverged(format!(
                "epoch {epoch}; last good checkpoint written to {}",
                p.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let ckpt_path = dir.join(CHECKPOINT_FILE);
    write_file(&ckpt_path, &outcome.checkpoint.to_bytes())?;
    let dict_path = dir.join(DICTIONARY_FILE);
    let mut buf = Vec::new();
    dict.write_to(&mut buf).map_err(io(&dict_path))?;
    write_file(&dict_path, &buf)?;

    let mut manifest = RunManifest::new("train", cfg);
    manifest.inputs.push(digest);
    manifest.dictionary_fingerprint = Some(dict.fingerprint());
    manifest
        .options
        .insert("variant".into(), cfg.model.variant.as_str().into());
    manifest
        .options
        .insert("checkpoint_sha256".into(), outcome.checkpoint.digest());
    manifest.artifacts.insert("checkpoint".into(), ckpt_path);
    manifest.artifacts.insert("dictionary".into(), dict_path);
    manifest.artifacts.insert("train_log".into(), log_path);
    manifest.write(&dir)?;

    let best = &outcome.log[outcome.best_epoch - 1].validation;
    say(
        out,
        format!(
            "trained {} epochs{}; best epoch {} (validation f1 {:.4}, dr {:.4}, fpr {:.4})\ncheckpoint sha256 {}\n",
            outcome.log.len(),
            if outcome.stopped_early { " (early stop)" } else { "" },
            outcome.best_epoch,
            best.f1,
            best.dr,
            best.fpr,
            outcome.checkpoint.digest()
        ),
    )
}

pub fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let input = required(file.pick(a.input, "input")?, "input")?;
    let model_dir = required(file.pick(a.model_dir, "model-dir")?, "model-dir")?;
    let ckpt_path = model_dir.join(CHECKPOINT_FILE);
    let checkpoint = Checkpoint::read_from(BufReader::new(File::open(&ckpt_path).map_err(io(&ckpt_path))?))
        .map_err(|e| CliError::Data(format!("{}: {e}", ckpt_path.display())))?;
    let dict_path = model_dir.join(DICTIONARY_FILE);
    let dict = BlockDictionary::read_from(BufReader::new(File::open(&dict_path).map_err(io(&dict_path))?))
        .map_err(|e| CliError::Data(format!("{}: {e}", dict_path.display())))?;

    let (samples, digest) = load_dataset(&input)?;
    let which = file.pick(a.split, "split")?.unwrap_or_else(|| "all".into());
    let chosen = if which == "all" {
        samples
    } else {
        let seed = match file.pick(a.seed, "seed")? {
            Some(s) => s,
            None => {
                let m = model_dir.join(MANIFEST_FILE);
                if m.exists() {
                    RunManifest::read(&m)?.seed
                } else {
                    0
                }
            }
        };
        let s = split(&samples, seed)?;
        let ids = match which.as_str() {
            "train" => &s.train,
            "validation" => &s.validation,
            "test" => &s.test,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown --split {other:?} (expected all, train, validation or test)"
                )))
            }
        };
        members(&samples, ids)
    };
    let report = evaluate(&checkpoint, &dict, &chosen)?;
    let c = report.counts;
    say(
        out,
        format!(
            "precision\t{:.6}\ndr\t{:.6}\nfpr\t{:.6}\naccuracy\t{:.6}\nf1\t{:.6}\ncounts\ttp={} fp={} fn={} tn={}\n",
            report.precision, report.dr, report.fpr, report.accuracy, report.f1, c.tp, c.fp, c.r#fn, c.tn
        ),
    )?;
    if let Some(dir) = file.pick(a.out_dir, "out-dir")? {
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let path = dir.join("eval.jsonl");
        write_jsonl(
            &path,
            &[Record::Eval {
                name: which.clone(),
                metrics: report,
            }],
        )?;
        let mut m = RunManifest::new(
            "eval",
            TrainRunConfig {
                model: checkpoint.model,
                block: *dict.config(),
                ..TrainRunConfig::default()
            },
        );
        m.inputs = vec![digest, InputDigest::of(&ckpt_path, &checkpoint.to_bytes())];
        m.dictionary_fingerprint = Some(dict.fingerprint());
        m.options.insert("split".into(), which);
        m.artifacts.insert("report".into(), path);
        m.write(&dir)?;
    }
    Ok(())
}

pub fn ablation(a: AblationArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(a.run.config.as_deref())?;
    let input = required(file.pick(a.input, "input")?, "input")?;
    let cfg = resolve_run(&a.run, &file)?;
    let mut seeds = file.list(a.seeds, "seeds")?;
    if seeds.is_empty() {
        seeds.push(cfg.seed);
    }
    let dir = out_dir(&file, a.out_dir)?;
    let (samples, digest) = load_dataset(&input)?;
    let split = split(&samples, cfg.seed)?;
    let cells = run_ablation(&samples, &split, &cfg, &seeds)?;
    let records: Vec<Record> = cells.into_iter().map(Record::Ablation).collect();
    let path = dir.join("ablation.jsonl");
    write_jsonl(&path, &records)?;
    let mut m = RunManifest::new("ablation", cfg);
    m.inputs.push(digest);
    m.options.insert(
        "seeds".into(),
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    );
    m.artifacts.insert("report".into(), path);
    m.write(&dir)?;
    say(out, summary_table(&records))
}

pub fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(a.run.config.as_deref())?;
    let input = required(file.pick(a.input, "input")?, "input")?;
    let axis: SweepAxis = required(parse(file.pick(a.axis, "axis")?, "axis")?, "axis")?;
    let values: Vec<usize> = file.list(a.values, "values")?;
    if values.is_empty() {
        return Err(CliError::Usage("--values is required".into()));
    }
    let cfg = resolve_run(&a.run, &file)?;
    for &v in &values {
        axis.apply(&cfg, v)
            .validate()
            .map_err(|e| CliError::Usage(format!("--values: {axis} = {v}: {e}")))?;
    }
    let dir = out_dir(&file, a.out_dir)?;
    let (samples, digest) = load_dataset(&input)?;
    let split = split(&samples, cfg.seed)?;
    let rows = run_sweep(&samples, &split, &cfg, axis, &values)?;
    let records: Vec<Record> = rows.into_iter().map(Record::Sweep).collect();
    let path = dir.join("sweep.jsonl");
    write_jsonl(&path, &records)?;
    let mut m = RunManifest::new("sweep", cfg);
    m.inputs.push(digest);
    m.options.insert("axis".into(), axis.to_string());
    m.options.insert(
        "values".into(),
        values.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    m.artifacts.insert("report".into(), path);
    m.write(&dir)?;
    say(out, summary_table(&records))
}

pub fn perturb(a: PerturbArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let input = required(file.pick(a.input, "input")?, "input")?;
    let seed = file.pick(a.seed, "seed")?.unwrap_or(0);
    let mode: PerturbMode = parse(file.pick(a.perturb_mode, "perturb-mode")?, "perturb-mode")?.unwrap_or_default();
    let dir = out_dir(&file, a.out_dir)?;
    let (samples, digest) = load_dataset(&input)?;
    let split = match mode {
        PerturbMode::All => None,
        PerturbMode::TestOnly => Some(split(&samples, seed)?),
    };
    let noisy = perturb_samples(&samples, seed, mode, split.as_ref());
    let changed = samples.iter().zip(&noisy).filter(|(a, b)| a != b).count();
    let path = dir.join(PERTURBED_FILE);
    write_file(&path, &serialize_labeled_lines(&noisy))?;
    let mut m = RunManifest::new(
        "perturb",
        TrainRunConfig {
            seed,
            ..TrainRunConfig::default()
        },
    );
    m.inputs.push(digest);
    m.options.insert(
        "perturb-mode".into(),
        match mode {
            PerturbMode::All => "all",
            PerturbMode::TestOnly => "test-only",
        }
        .into(),
    );
    m.artifacts.insert("dataset".into(), path.clone());
    m.write(&dir)?;
    say(
        out,
        format!(
            "perturbed {changed} of {} samples -> {}\n",
            samples.len(),
            path.display()
        ),
    )
}

pub fn report(a: ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let inputs: Vec<PathBuf> = file.list(a.input, "input")?;
    let mut records = Vec::new();
    for path in &inputs {
        let raw = read_file(path)?;
        let text = String::from_utf8(raw).map_err(|_| CliError::Data(format!("{}: not UTF-8", path.display())))?;
        records
            .extend(parse_jsonl(&text).map_err(|(line, e)| CliError::Data(format!("{}:{line}: {e}", path.display())))?);
    }
    let mut text = summary_table(&records);
    if !text.is_empty() {
        text.push('\n');
    }
    text += &reference_table();
    if let Some(dir) = file.pick(a.out_dir, "out-dir")? {
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        write_file(&dir.join("report.txt"), text.as_bytes())?;
    }
    say(out, text)
}
