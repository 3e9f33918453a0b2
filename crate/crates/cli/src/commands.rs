use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};

use stormloc::calibrate::temperature_fit;
use stormloc::checkpoint::{load_checkpoint, quantize_params, save_checkpoint};
use stormloc::eval::{denoising_report, simulated_rater, SUMMARY_HEADER};
use stormloc::ingest::ingest_table;
use stormloc::pack::{read_pack, write_pack};
use stormloc::stats::{format_table, study_summary, PreferenceRecord, PreferenceTally};
use stormloc::synth::build_dataset;
use stormloc::train::{train_with, TrainConfig};
use stormloc::unet::build_unet;
use stormloc::{Dataset, GridSpec, ModelConfig, ModelState, NoiseModel, Split};
use stormloc_study::items::sample_study_items;
use stormloc_study::render::{render_quiver, Marker, MarkerStyle};
use stormloc_study::{Study, StudyConfig, StudyError};

use crate::manifest;
use crate::{
    Command, EvalArgs, GenArgs, IngestArgs, ModelInput, OracleArgs, PlotArgs, Preset, ReportArgs, ServeArgs, SplitArg,
    StudyCommand, StudySetup, SweepArgs, TrainArgs,
};

/// Error carrying an explicit exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

fn config_error(message: impl Into<String>) -> anyhow::Error {
    Failure { code: EXIT_CONFIG, message: message.into() }.into()
}

fn core_code(e: &stormloc::Error) -> u8 {
    use stormloc::Error as E;
    match e {
        E::NonFinite(_) => EXIT_NUMERIC,
        E::InvalidArgument(_) | E::InvalidGrid(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(c) = cause.downcast_ref::<stormloc::Error>() {
            return core_code(c);
        }
        if let Some(s) = cause.downcast_ref::<StudyError>() {
            return match s {
                StudyError::Core(c) => core_code(c),
                StudyError::BadRequest(_) | StudyError::UnknownSplit(_) => EXIT_CONFIG,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    1
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(config_error(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

pub fn parse_grid(spec: Option<&str>) -> Result<GridSpec> {
    let Some(spec) = spec else { return Ok(GridSpec::default()) };
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 6 {
        return Err(config_error(format!("--grid needs lat0,lon0,dlat,dlon,height,width, got {spec:?}")));
    }
    let f = |i: usize| parts[i].parse::<f64>().map_err(|_| config_error(format!("bad grid number {:?}", parts[i])));
    let u = |i: usize| parts[i].parse::<usize>().map_err(|_| config_error(format!("bad grid size {:?}", parts[i])));
    Ok(GridSpec::new(f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?)?)
}

fn or_default(p: &Option<PathBuf>, out: &Path, name: &str) -> Option<PathBuf> {
    Some(p.clone().unwrap_or_else(|| out.join(name)))
}

fn resolve_input(i: &ModelInput, out: &Path) -> ModelInput {
    ModelInput { data: or_default(&i.data, out, "dataset.pack"), checkpoint: or_default(&i.checkpoint, out, "model.ckpt") }
}

fn resolve_setup(s: &StudySetup, out: &Path) -> StudySetup {
    StudySetup { input: resolve_input(&s.input, out), ..s.clone() }
}

/// Fills every defaulted path so the recorded command is self-contained.
fn resolve(out: &Path, cmd: &Command) -> Command {
    match cmd {
        Command::Gen(a) => Command::Gen(GenArgs { output: or_default(&a.output, out, "dataset.pack"), ..a.clone() }),
        Command::Ingest(a) => {
            Command::Ingest(IngestArgs { output: or_default(&a.output, out, "dataset.pack"), ..a.clone() })
        }
        Command::Train(a) => Command::Train(TrainArgs {
            data: or_default(&a.data, out, "dataset.pack"),
            epochs: Some(a.epochs.unwrap_or(match a.preset {
                Preset::Desk => TrainConfig::default().epochs,
                Preset::Paper => TrainConfig::paper().epochs,
            })),
            output_dir: Some(a.output_dir.clone().unwrap_or_else(|| out.to_path_buf())),
            ..a.clone()
        }),
        Command::Eval(a) => Command::Eval(EvalArgs {
            input: resolve_input(&a.input, out),
            split: if a.split.is_empty() { vec![SplitArg::Train, SplitArg::Val, SplitArg::Test] } else { a.split.clone() },
        }),
        Command::Sweep(a) => Command::Sweep(a.clone()),
        Command::Plot(a) => Command::Plot(PlotArgs {
            data: or_default(&a.data, out, "dataset.pack"),
            output: or_default(&a.output, out, &format!("sample-{}.svg", a.index)),
            ..a.clone()
        }),
        Command::Study(StudyCommand::Serve(a)) => Command::Study(StudyCommand::Serve(ServeArgs {
            setup: resolve_setup(&a.setup, out),
            log: or_default(&a.log, out, "study.log"),
            ..a.clone()
        })),
        Command::Study(StudyCommand::Report(a)) => Command::Study(StudyCommand::Report(ReportArgs {
            setup: resolve_setup(&a.setup, out),
            log: or_default(&a.log, out, "study.log"),
            ..a.clone()
        })),
        Command::OracleStudy(a) => Command::OracleStudy(OracleArgs {
            setup: resolve_setup(&a.setup, out),
            output: or_default(&a.output, out, "oracle-study.json"),
        }),
        Command::Replay(a) => Command::Replay(a.clone()),
    }
}

fn name_of(cmd: &Command) -> &'static str {
    match cmd {
        Command::Gen(_) => "gen",
        Command::Ingest(_) => "ingest",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Sweep(_) => "sweep",
        Command::Plot(_) => "plot",
        Command::Study(StudyCommand::Serve(_)) => "study-serve",
        Command::Study(StudyCommand::Report(_)) => "study-report",
        Command::OracleStudy(_) => "oracle-study",
        Command::Replay(_) => "replay",
    }
}

pub fn run(out: &Path, cmd: &Command) -> Result<()> {
    if let Command::Replay(a) = cmd {
        let m = manifest::read(&a.manifest)?;
        eprintln!("replaying {} from {}", name_of(&m.command), a.manifest.display());
        return run(&m.out, &m.command);
    }
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let out = &fs::canonicalize(out)?;
    let resolved = resolve(out, cmd);
    let outputs = match &resolved {
        Command::Gen(a) => gen(a)?,
        Command::Ingest(a) => ingest(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a, out)?,
        Command::Sweep(a) => sweep(a, out)?,
        Command::Plot(a) => plot(a)?,
        Command::Study(StudyCommand::Serve(a)) => serve(a)?,
        Command::Study(StudyCommand::Report(a)) => report(a)?,
        Command::OracleStudy(a) => oracle_study(a)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    let path = manifest::write(out, name_of(&resolved), &resolved, outputs)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn gen(a: &GenArgs) -> Result<Vec<PathBuf>> {
    let grid = parse_grid(a.grid.grid.as_deref())?;
    let noise = NoiseModel {
        corrupt_prob: a.corrupt_prob,
        offset_min_cells: a.offset_min,
        offset_max_cells: a.offset_max,
        background_sigma: a.background_sigma,
    };
    let d = build_dataset(a.n, &noise, a.seed, &grid)?;
    let out = a.output.clone().expect("resolved");
    write_pack(&d, &out).with_context(|| format!("writing {}", out.display()))?;
    let [tr, va, te] = d.split_counts();
    let corrupted = d.samples.iter().filter(|s| s.corrupted).count();
    println!("wrote {} samples ({tr} train / {va} val / {te} test, {corrupted} corrupted) to {}", d.len(), out.display());
    Ok(vec![out])
}

fn ingest(a: &IngestArgs) -> Result<Vec<PathBuf>> {
    require_file(&a.manifest, "manifest")?;
    let got = ingest_table(&a.manifest, a.seed)?;
    let out = a.output.clone().expect("resolved");
    write_pack(&got.dataset, &out)?;
    println!(
        "wrote {} samples to {} (dropped {} off-synoptic, {} multi-storm timestamps)",
        got.dataset.len(),
        out.display(),
        got.dropped_off_synoptic,
        got.dropped_multi_storm
    );
    Ok(vec![out])
}

fn load_data(path: &Option<PathBuf>) -> Result<Dataset> {
    let path = path.as_ref().expect("resolved");
    require_file(path, "dataset")?;
    read_pack(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(input: &ModelInput, data: &Dataset) -> Result<ModelState> {
    let path = input.checkpoint.as_ref().expect("resolved");
    require_file(path, "checkpoint")?;
    let model = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    if model.config.grid != data.grid {
        return Err(Failure { code: EXIT_DATA, message: "checkpoint grid does not match the dataset grid".into() }.into());
    }
    Ok(model)
}

fn calibrate(model: &mut ModelState, data: &Dataset, label: &str) -> Result<()> {
    let fit = temperature_fit(model, &data.split_samples(Split::Val))?;
    model.temperature = fit.temperature;
    println!("{label}: temperature {:.4} (val NLL {:.4} at T=1, {:.4} fitted)", fit.temperature, fit.nll_at_one, fit.nll_fitted);
    Ok(())
}

fn train(a: &TrainArgs) -> Result<Vec<PathBuf>> {
    let data = load_data(&a.data)?;
    let cfg = match a.preset {
        Preset::Desk => ModelConfig::desk(data.grid),
        Preset::Paper => ModelConfig::paper(data.grid),
    };
    let tcfg = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs.expect("resolved"),
        lr: a.lr,
        seed: a.train_seed,
        shuffle: true,
    };
    tcfg.validate()?;
    let model = build_unet(&cfg, a.model_seed)?;
    eprintln!("training {} parameters for {} epochs", model.param_count(), tcfg.epochs);
    let outcome = train_with(model, &data, &tcfg, |r| {
        eprintln!("epoch {:>3}  train {:.4}  val {:.4}  {:.1}s", r.epoch, r.train_loss, r.val_loss, r.seconds);
    })?;
    let (mut last, mut best) = (outcome.last, outcome.best);
    // Calibrate what the checkpoint will actually hold.
    quantize_params(&mut last);
    quantize_params(&mut best);
    if !a.no_calibrate {
        calibrate(&mut last, &data, "last")?;
        calibrate(&mut best, &data, "best")?;
    }
    let dir = a.output_dir.clone().expect("resolved");
    fs::create_dir_all(&dir)?;
    let (ck, ck_best, hist) = (dir.join("model.ckpt"), dir.join("model_best.ckpt"), dir.join("history.csv"));
    save_checkpoint(&last, &ck)?;
    save_checkpoint(&best, &ck_best)?;
    fs::write(&hist, outcome.history.to_csv())?;
    println!(
        "val loss {:.4} -> {:.4}; best epoch {}; wrote {}",
        outcome.history.initial_val_loss,
        outcome.history.epochs.last().map_or(f64::NAN, |e| e.val_loss),
        outcome.best_epoch,
        ck.display()
    );
    Ok(vec![ck, ck_best, hist])
}

fn eval(a: &EvalArgs, out: &Path) -> Result<Vec<PathBuf>> {
    let data = load_data(&a.input.data)?;
    let model = load_model(&a.input, &data)?;
    println!("{SUMMARY_HEADER}");
    let mut written = Vec::new();
    for &s in &a.split {
        let split = split_of(s);
        if data.indices(split).is_empty() {
            eprintln!("split {split} is empty, skipped");
            continue;
        }
        let report = denoising_report(&model, &data, split)?;
        print!("{}", report.summary_tsv());
        let path = out.join(format!("eval-{split}.tsv"));
        fs::write(&path, report.records_tsv())?;
        written.push(path);
    }
    Ok(written)
}

fn sweep(a: &SweepArgs, out: &Path) -> Result<Vec<PathBuf>> {
    let grid = parse_grid(a.grid.grid.as_deref())?;
    let tcfg = TrainConfig { epochs: a.epochs, seed: a.seed, ..TrainConfig::default() };
    let mut table = format!("corrupt_prob\t{SUMMARY_HEADER}\n");
    println!("{}", table.trim_end());
    for &rate in &a.rates {
        let noise = NoiseModel { corrupt_prob: rate, ..NoiseModel::default() };
        let data = build_dataset(a.n, &noise, a.seed, &grid)?;
        let model = build_unet(&ModelConfig::desk(grid), a.seed)?;
        let trained = train_with(model, &data, &tcfg, |_| {})?.last;
        for split in [Split::Train, Split::Test] {
            for line in denoising_report(&trained, &data, split)?.summary_tsv().lines() {
                let row = format!("{rate}\t{line}\n");
                print!("{row}");
                table.push_str(&row);
            }
        }
    }
    let path = out.join("sweep.tsv");
    fs::write(&path, table)?;
    Ok(vec![path])
}

fn plot(a: &PlotArgs) -> Result<Vec<PathBuf>> {
    let data = load_data(&a.data)?;
    let sample = data
        .samples
        .get(a.index)
        .ok_or_else(|| config_error(format!("index {} outside the {} samples", a.index, data.len())))?;
    let prob = match &a.checkpoint {
        Some(_) => {
            let model = load_model(&ModelInput { data: None, checkpoint: a.checkpoint.clone() }, &data)?;
            Some(model.predict_proba(&sample.field)?)
        }
        None => None,
    };
    let label = stormloc::grid::cell_center(sample.label_cell, &data.grid);
    let svg = render_quiver(&sample.field, &[Marker { point: label, style: MarkerStyle::Label }], prob.as_deref());
    let out = a.output.clone().expect("resolved");
    fs::write(&out, svg)?;
    println!("wrote {}", out.display());
    Ok(vec![out])
}

fn study_config(s: &StudySetup) -> StudyConfig {
    StudyConfig { splits: s.splits.iter().map(|&x| split_of(x)).collect(), n_items: s.n_items, seed: s.seed, ..StudyConfig::default() }
}

fn serve(a: &ServeArgs) -> Result<Vec<PathBuf>> {
    let addr: SocketAddr = a.addr.parse().map_err(|_| config_error(format!("bad --addr {:?}", a.addr)))?;
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(config_error(format!("static directory {} does not exist", dir.display())));
        }
    }
    let data = load_data(&a.setup.input.data)?;
    let model = load_model(&a.setup.input, &data)?;
    let cfg = StudyConfig { show_prob: a.show_prob, static_dir: a.static_dir.clone(), ..study_config(&a.setup) };
    let log = a.log.clone().expect("resolved");
    let study = Study::new(data, model, cfg, &log)?;
    for s in study.truncated_splits() {
        eprintln!("warning: split {s} has fewer than {} samples; using all of them", a.setup.n_items);
    }
    if study.log().skipped() > 0 {
        eprintln!("warning: skipped {} unreadable log lines", study.log().skipped());
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(stormloc_study::server::serve(Arc::new(study), addr))?;
    Ok(vec![log])
}

fn parse_counts(spec: &str) -> Result<(String, PreferenceTally)> {
    let bad = || config_error(format!("--counts expects name=model,label,neither, got {spec:?}"));
    let (name, rest) = spec.split_once('=').ok_or_else(bad)?;
    let n: Vec<u64> = rest.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [m, l, ne] = n[..] else { return Err(bad()) };
    Ok((name.to_string(), PreferenceTally::from_counts(m, l, ne)))
}

fn print_table(columns: &[(String, PreferenceTally)]) {
    let cols: Vec<(&str, &PreferenceTally)> = columns.iter().map(|(n, t)| (n.as_str(), t)).collect();
    print!("{}", format_table(&cols));
}

fn report(a: &ReportArgs) -> Result<Vec<PathBuf>> {
    if !a.counts.is_empty() {
        let cols = a.counts.iter().map(|c| parse_counts(c)).collect::<Result<Vec<_>>>()?;
        print_table(&cols);
        return Ok(vec![]);
    }
    let log = a.log.clone().expect("resolved");
    require_file(&log, "study log")?;
    let data = load_data(&a.setup.input.data)?;
    let model = load_model(&a.setup.input, &data)?;
    let study = Study::new(data, model, study_config(&a.setup), &log)?;
    let cols: Vec<(String, PreferenceTally)> =
        a.setup.splits.iter().map(|&s| (split_of(s).to_string(), study_summary(&study.resolved_records(split_of(s))))).collect();
    print_table(&cols);
    Ok(vec![])
}

fn oracle_study(a: &OracleArgs) -> Result<Vec<PathBuf>> {
    let data = load_data(&a.setup.input.data)?;
    let model = load_model(&a.setup.input, &data)?;
    let mut cols = Vec::new();
    let mut json = BTreeMap::new();
    for &s in &a.setup.splits {
        let split = split_of(s);
        let sampled = sample_study_items(&data, split, a.setup.n_items, a.setup.seed, &model)?;
        if sampled.truncated {
            eprintln!("warning: split {split} has only {} samples", sampled.items.len());
        }
        let mut records = Vec::with_capacity(sampled.items.len());
        for item in &sampled.items {
            let resolved = simulated_rater(&model, &data.samples[item.sample_index])?;
            records.push(PreferenceRecord {
                item_id: item.item_id.clone(),
                rater_id: "oracle".into(),
                choice: resolved.to_choice(item.model_first),
                timestamp: 0,
                resolved,
            });
        }
        let tally = study_summary(&records);
        json.insert(split.to_string(), tally.clone());
        cols.push((split.to_string(), tally));
    }
    print_table(&cols);
    let out = a.output.clone().expect("resolved");
    fs::write(&out, serde_json::to_string_pretty(&json)? + "\n")?;
    Ok(vec![out])
}
