use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use mmfuse_core::alignment::{
    align_tokens, frame_resolution, read_timing_file, ta_pad_position_plan, ta_position_plan, PositionPlan,
};
use mmfuse_core::classifier::{init_model, predict, train as train_model, LabeledSequence};
use mmfuse_core::dataset::Dataset;
use mmfuse_core::evaluation::metrics::predictions as argmax_labels;
use mmfuse_core::evaluation::{
    centered_cosine_matrix, layer_sweep, log_loss, macro_f1, multi_seed_eval, probe_layer, stratified_split,
    EvalOptions, Partition, PartitionBreakdown, PartitionMetrics, Strategy, DEFAULT_RATIOS,
};
use mmfuse_core::fusion::{build_fused, late_fuse, ClassPosterior};
use mmfuse_core::hypersearch::{run_search, validation_objective, SearchSettings, SearchSpace};
use mmfuse_core::synthgen::{generate_corpus, SynthParams};
use mmfuse_core::tensorio::{validate_manifest, ContainerHeader, EmbeddingContainer, Manifest, RecordingManifestEntry};
use mmfuse_core::Label;

use crate::cache::{Cache, Key};
use crate::configs::{self, RunDir};
use crate::predictions;
use crate::{CacheArgs, CorpusArgs};

/// A manifest that failed validation; carries the printed report.
#[derive(Debug)]
pub struct ValidationFailed(pub String);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailed {}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let manifest = Manifest::read_file(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let report = validate_manifest(&manifest);
    if !report.is_usable() {
        return Err(ValidationFailed(report.to_string()).into());
    }
    Ok(manifest)
}

fn load_dataset(manifest: &Manifest, layers: Option<&[u8]>) -> Result<Dataset> {
    // token spans are defined on the acoustic frame grid, so text-only
    // runs still need one layer
    let fallback: Vec<u8> = manifest.layers().into_iter().take(1).collect();
    let layers = match layers {
        Some([]) => Some(fallback.as_slice()),
        other => other,
    };
    let ds = Dataset::load(manifest, layers)?;
    info!("loaded {} recordings", ds.len());
    Ok(ds)
}

fn open_cache(corpus: &CorpusArgs, args: &CacheArgs) -> Cache {
    Cache::new(args.cache.clone().unwrap_or_else(|| corpus.out.join("cache")))
}

fn seeds_of(spec: Option<&str>) -> Result<EvalOptions> {
    let mut options = EvalOptions::default();
    if let Some(s) = spec {
        options.seeds = configs::parse_list(s)?;
    }
    Ok(options)
}

fn layers_of(spec: Option<&str>, manifest: &Manifest) -> Result<Vec<u8>> {
    match spec {
        Some(s) => configs::parse_layers(s),
        None => Ok(manifest.layers().into_iter().collect()),
    }
}

fn require_layer(strategy: Strategy, layer: Option<u8>) -> Result<Option<u8>> {
    match (strategy.uses_layer(), layer) {
        (true, None) => bail!("{strategy} needs --layer"),
        (true, Some(l)) if !(1..=12).contains(&l) => bail!("layer {l} outside 1..12"),
        (true, l) => Ok(l),
        (false, _) => Ok(None),
    }
}

fn sequences(ds: &Dataset, strategy: Strategy, layer: Option<u8>) -> Result<Vec<LabeledSequence>> {
    Ok(match (strategy, layer) {
        (Strategy::AcousticOnly, Some(l)) => ds.acoustic_sequences(l)?,
        (Strategy::EarlyFusion, Some(l)) => ds.fused_sequences(l)?,
        (Strategy::TextOnly, _) => ds.text_sequences()?,
        (Strategy::LateFusion, _) => {
            bail!("late fusion trains no model; train acoustic_only and text_only, then run latefuse")
        }
        (s, None) => bail!("{s} needs a layer"),
    })
}

pub fn validate(manifest: &Path) -> Result<()> {
    let m = Manifest::read_file(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    let report = validate_manifest(&m);
    if !report.is_usable() {
        return Err(ValidationFailed(report.to_string()).into());
    }
    print!("{report}");
    Ok(())
}

pub fn synth(out: &Path, config: Option<&Path>, seed: Option<u64>, recordings: Option<usize>) -> Result<()> {
    let mut params: SynthParams = match config {
        Some(p) => configs::read_toml(p)?,
        None => SynthParams::default(),
    };
    if let Some(s) = seed {
        params.seed = s;
    }
    if let Some(n) = recordings {
        params.n_recordings = n;
    }
    params.validate()?;
    let run = RunDir::create(out)?;
    run.freeze("synth", &params)?;
    let manifest = generate_corpus(&params, out)?;
    println!(
        "wrote {} recordings to {}",
        manifest.entries.len(),
        out.display()
    );
    Ok(())
}

fn first_acoustic_header(manifest: &Manifest, e: &RecordingManifestEntry) -> Result<(std::path::PathBuf, ContainerHeader)> {
    let (_, path) = e
        .acoustic_paths
        .iter()
        .next()
        .with_context(|| format!("{}: no acoustic layers", e.recording_id))?;
    let path = manifest.resolve(path);
    let header = ContainerHeader::read_file(&path)?;
    Ok((path, header))
}

fn spans_tsv(manifest: &Manifest, e: &RecordingManifestEntry, header: &ContainerHeader) -> Result<Vec<u8>> {
    let duration = header
        .duration_s
        .with_context(|| format!("{}: acoustic container carries no duration", e.recording_id))?;
    let words = read_timing_file(manifest.resolve(&e.timing_path))?;
    let res = frame_resolution(duration, header.rows)?;
    let alignment = align_tokens(&words, res, header.rows)?;
    let mut out = String::from("token\tword\tstart_frame\tend_frame\n");
    let mut spans = alignment.token_spans.iter();
    let mut k = 0;
    for w in &words {
        for _ in &w.token_chars {
            let s = spans.next().expect("one span per token");
            let _ = writeln!(out, "{k}\t{}\t{}\t{}", w.timing.word, s.start, s.end);
            k += 1;
        }
    }
    Ok(out.into_bytes())
}

pub fn align(corpus: &CorpusArgs, cache_args: &CacheArgs) -> Result<()> {
    let manifest = read_manifest(&corpus.manifest)?;
    let cache = open_cache(corpus, cache_args);
    let run = RunDir::create(&corpus.out)?;
    let mut hits = 0;
    for e in &manifest.entries {
        let (_, header) = first_acoustic_header(&manifest, e)?;
        let mut key = Key::new("spans-v1");
        key.file(&manifest.resolve(&e.timing_path))?
            .bytes(&(header.rows as u64).to_le_bytes())
            .bytes(&header.duration_s.unwrap_or(f64::NAN).to_le_bytes());
        let (data, hit) = cache.get_or_insert("spans", &key.finish(), "tsv", || spans_tsv(&manifest, e, &header))?;
        hits += hit as usize;
        run.write(format!("spans/{}.tsv", e.recording_id), data)?;
    }
    println!(
        "aligned {} recordings ({hits} from cache {})",
        manifest.entries.len(),
        cache.root().display()
    );
    Ok(())
}

fn fused_container(manifest: &Manifest, e: &RecordingManifestEntry, layer: u8) -> Result<Vec<u8>> {
    let acoustic = EmbeddingContainer::read_file(manifest.resolve(&e.acoustic_paths[&layer]))?;
    let duration = acoustic
        .duration_s
        .with_context(|| format!("{}: acoustic container carries no duration", e.recording_id))?;
    let frames = acoustic.matrix()?;
    let text = EmbeddingContainer::read_file(manifest.resolve(&e.text_path))?.matrix()?;
    let words = read_timing_file(manifest.resolve(&e.timing_path))?;
    let alignment = align_tokens(&words, frame_resolution(duration, frames.nrows())?, frames.nrows())?;
    let fused = build_fused(frames.view(), text.view(), &alignment.token_spans)?;
    Ok(EmbeddingContainer::fused(&fused.matrix, Some(layer), duration).to_bytes()?)
}

pub fn fuse(corpus: &CorpusArgs, cache_args: &CacheArgs, layers: Option<&str>) -> Result<()> {
    let manifest = read_manifest(&corpus.manifest)?;
    let layers = layers_of(layers, &manifest)?;
    let cache = open_cache(corpus, cache_args);
    let run = RunDir::create(&corpus.out)?;
    let (mut hits, mut total) = (0, 0);
    for e in &manifest.entries {
        for &layer in &layers {
            let Some(path) = e.acoustic_paths.get(&layer) else {
                bail!("{}: no container for layer {layer}", e.recording_id);
            };
            let mut key = Key::new("fused-v1");
            key.file(&manifest.resolve(path))?
                .file(&manifest.resolve(&e.text_path))?
                .file(&manifest.resolve(&e.timing_path))?;
            let (data, hit) = cache.get_or_insert("fused", &key.finish(), "mmf", || fused_container(&manifest, e, layer))?;
            hits += hit as usize;
            total += 1;
            run.write(format!("fused/{}_L{layer:02}.mmf", e.recording_id), data)?;
        }
    }
    println!("fused {total} containers ({hits} from cache {})", cache.root().display());
    Ok(())
}

fn partition_metrics(posteriors: &[ClassPosterior], labels: &[Label], parts: &[Partition]) -> Result<PartitionBreakdown> {
    let of = |p: Partition| -> Result<PartitionMetrics> {
        let idx: Vec<usize> = (0..parts.len()).filter(|&i| parts[i] == p).collect();
        let post: Vec<ClassPosterior> = idx.iter().map(|&i| posteriors[i]).collect();
        let lab: Vec<Label> = idx.iter().map(|&i| labels[i]).collect();
        Ok(PartitionMetrics {
            f1: macro_f1(&argmax_labels(&post), &lab)?,
            log_loss: log_loss(&post, &lab)?,
        })
    };
    Ok(PartitionBreakdown {
        train: of(Partition::Train)?,
        validation: of(Partition::Validation)?,
        test: of(Partition::Test)?,
    })
}

pub fn train(corpus: &CorpusArgs, strategy: Strategy, layer: Option<u8>, config: Option<&Path>, seed: u64) -> Result<()> {
    let layer = require_layer(strategy, layer)?;
    let manifest = read_manifest(&corpus.manifest)?;
    let mut cfg = configs::load_classifier(config)?;
    let ds = load_dataset(&manifest, Some(layer.as_slice()))?;
    let data = sequences(&ds, strategy, layer)?;
    cfg.input_dim = data[0].sequence.features.ncols();
    cfg.seed = seed;
    cfg.validate()?;
    let run = RunDir::create(&corpus.out)?;
    run.freeze("classifier", &cfg)?;

    let split = stratified_split(&ds.split_items(), DEFAULT_RATIOS, seed)?;
    let parts: Vec<Partition> = ds
        .ids()
        .iter()
        .map(|id| split.partition(id).expect("every recording is assigned"))
        .collect();
    let select = |p: Partition| -> Vec<&LabeledSequence> {
        data.iter().zip(&parts).filter(|(_, q)| **q == p).map(|(d, _)| d).collect()
    };
    info!("training {strategy} layer {layer:?} seed {seed}");
    let (model, history) = train_model(init_model(&cfg)?, &select(Partition::Train), &select(Partition::Validation))?;
    let posteriors = predict(&model, data.iter().map(|d| &d.sequence))?;
    let metrics = partition_metrics(&posteriors, &ds.labels(), &parts)?;

    model.save(run.join("model.json"))?;
    run.write("history.json", serde_json::to_string_pretty(&history)?)?;
    run.write("metrics.json", serde_json::to_string_pretty(&metrics)?)?;
    let mut split_tsv = String::from("recording_id\tpartition\n");
    for (id, p) in ds.ids().iter().zip(&parts) {
        let _ = writeln!(split_tsv, "{id}\t{}", p.as_str());
    }
    run.write("split.tsv", split_tsv)?;
    let rows: Vec<(String, ClassPosterior)> = ds.ids().iter().map(|s| s.to_string()).zip(posteriors).collect();
    run.write("predictions.tsv", predictions::format(&rows))?;
    println!(
        "best epoch {} of {}; test F1 {:.4}, log loss {:.4}",
        history.best_epoch, history.stopped_epoch, metrics.test.f1, metrics.test.log_loss
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn search(
    corpus: &CorpusArgs,
    strategy: Strategy,
    layers: Option<&str>,
    config: Option<&Path>,
    space: Option<&Path>,
    budget: usize,
    seed: u64,
) -> Result<()> {
    if strategy == Strategy::LateFusion {
        bail!("late fusion has no model to search; search acoustic_only and text_only");
    }
    let manifest = read_manifest(&corpus.manifest)?;
    let layers: Vec<Option<u8>> = match (strategy.uses_layer(), layers) {
        (false, _) => vec![None],
        (true, None) => bail!("{strategy} needs --layers"),
        (true, Some(s)) => configs::parse_layers(s)?.into_iter().map(Some).collect(),
    };
    let base = configs::load_classifier(config)?;
    let space: SearchSpace = match space {
        Some(p) => configs::read_toml(p)?,
        None => SearchSpace::default(),
    };
    let settings = SearchSettings {
        budget,
        seed,
        ..SearchSettings::default()
    };
    let run = RunDir::create(&corpus.out)?;
    run.freeze("classifier", &base)?;
    run.freeze("space", &space)?;
    run.freeze("search", &settings)?;

    let wanted: Vec<u8> = layers.iter().flatten().copied().collect();
    let ds = load_dataset(&manifest, Some(&wanted))?;
    let split = stratified_split(&ds.split_items(), DEFAULT_RATIOS, seed)?;
    let parts: Vec<Partition> = ds
        .ids()
        .iter()
        .map(|id| split.partition(id).expect("every recording is assigned"))
        .collect();

    for layer in &layers {
        let data = sequences(&ds, strategy, *layer)?;
        let select = |p: Partition| -> Vec<&LabeledSequence> {
            data.iter().zip(&parts).filter(|(_, q)| **q == p).map(|(d, _)| d).collect()
        };
        let (train_set, val_set) = (select(Partition::Train), select(Partition::Validation));
        let dir = match layer {
            Some(l) if layers.len() > 1 => format!("L{l:02}/"),
            _ => String::new(),
        };
        let log_path = run.join(format!("{dir}trials.jsonl"));
        if let Some(parent) = log_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        info!("searching {strategy} layer {layer:?}, {budget} trials");
        let mut layer_base = base.clone();
        layer_base.input_dim = data[0].sequence.features.ncols();
        let result = run_search(
            &space,
            &layer_base,
            &settings,
            Some(&log_path),
            validation_objective(&train_set, &val_set),
        )?;
        run.write(format!("{dir}best_config.toml"), toml::to_string(&result.best.config)?)?;
        println!(
            "{strategy} layer {}: best trial {} validation log loss {:.4}",
            layer.map_or_else(|| "-".to_string(), |l| l.to_string()),
            result.best.trial_id,
            result.best.loss.expect("best trial completed")
        );
    }
    Ok(())
}

pub fn eval(corpus: &CorpusArgs, strategy: Strategy, layer: Option<u8>, config: Option<&Path>, seeds: Option<&str>) -> Result<()> {
    let layer = require_layer(strategy, layer)?;
    let manifest = read_manifest(&corpus.manifest)?;
    let configs = configs::load_sweep_configs(config)?;
    let options = seeds_of(seeds)?;
    let set = layer.map_or(&configs.shared, |l| configs.for_layer(l));
    let run = RunDir::create(&corpus.out)?;
    run.freeze("classifiers", set)?;
    run.freeze("eval", &options)?;
    let ds = load_dataset(&manifest, Some(layer.as_slice()))?;
    let report = multi_seed_eval(set, &ds, strategy, layer, &options)?;
    run.write("report.json", report.to_json()?)?;
    match (report.mean_f1, report.mean_log_loss) {
        (Some(f1), Some(ll)) => println!(
            "{strategy}: {}/{} seeds, mean test F1 {f1:.4}, log loss {ll:.4}",
            report.completed,
            report.seeds.len()
        ),
        _ => bail!("{strategy}: every seed failed; see report.json"),
    }
    Ok(())
}

pub fn sweep(
    corpus: &CorpusArgs,
    strategies: Option<Vec<Strategy>>,
    layers: Option<&str>,
    config: Option<&Path>,
    seeds: Option<&str>,
) -> Result<()> {
    let manifest = read_manifest(&corpus.manifest)?;
    let strategies = strategies.unwrap_or_else(|| Strategy::ALL.to_vec());
    let layers = layers_of(layers, &manifest)?;
    let configs = configs::load_sweep_configs(config)?;
    let options = seeds_of(seeds)?;
    let run = RunDir::create(&corpus.out)?;
    run.freeze_text("classifiers", &configs::sweep_configs_toml(&configs)?)?;
    run.freeze("eval", &options)?;
    let available: Vec<u8> = layers.iter().copied().filter(|l| manifest.layers().contains(l)).collect();
    let ds = load_dataset(&manifest, Some(&available))?;
    let result = layer_sweep(&ds, &strategies, &layers, &configs, &options)?;
    run.write("table.tsv", result.table_tsv())?;
    run.write("summary.tsv", result.summary_tsv())?;
    run.write("reports.json", serde_json::to_string_pretty(&result)?)?;
    run.write("plot.json", serde_json::to_string_pretty(&result.plot_data(&layers))?)?;
    print!("{}", result.summary_tsv());
    Ok(())
}

pub fn latefuse(first: &Path, second: &Path, out: &Path) -> Result<()> {
    let a = predictions::read(first)?;
    let b = predictions::read(second)?;
    let by_id: HashMap<&str, &ClassPosterior> = b.iter().map(|(id, p)| (id.as_str(), p)).collect();
    if by_id.len() != b.len() {
        bail!("{}: duplicate recording ids", second.display());
    }
    if a.len() != b.len() {
        bail!(
            "{} has {} recordings, {} has {}",
            first.display(),
            a.len(),
            second.display(),
            b.len()
        );
    }
    let mut rows = Vec::with_capacity(a.len());
    for (id, p) in &a {
        let q = by_id
            .get(id.as_str())
            .with_context(|| format!("{id} missing from {}", second.display()))?;
        rows.push((id.clone(), late_fuse(p, q)?));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, predictions::format(&rows)).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn plan_tsv(plan: &PositionPlan) -> String {
    let mut out = String::from("token\tposition_index\tis_pad\n");
    for i in 0..plan.len() {
        let _ = writeln!(out, "{}\t{}\t{}", plan.tokens[i], plan.position_index[i], plan.is_pad[i] as u8);
    }
    out
}

/// Writes the time-aware position plan for one transcript. `tokens` holds
/// one line per word with that word's tokens separated by whitespace.
pub fn plan(timing: &Path, tokens: &Path, res: f64, pad: Option<&str>, out: &Path) -> Result<()> {
    let words = read_timing_file(timing)?;
    let text = std::fs::read_to_string(tokens).with_context(|| format!("reading {}", tokens.display()))?;
    let word_tokens: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    let timings: Vec<_> = words.into_iter().map(|w| w.timing).collect();
    let plan = match pad {
        None => ta_position_plan(&timings, &word_tokens, res)?,
        Some(pad) => ta_pad_position_plan(&timings, &word_tokens, res, pad)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, plan_tsv(&plan)).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

pub fn probe(corpus: &CorpusArgs, layers: Option<&str>, matrices: &[String]) -> Result<()> {
    let manifest = read_manifest(&corpus.manifest)?;
    let layers = layers_of(layers, &manifest)?;
    let run = RunDir::create(&corpus.out)?;
    let ds = load_dataset(&manifest, Some(&layers))?;
    for id in matrices {
        if !ds.ids().contains(&id.as_str()) {
            bail!("unknown recording {id:?}");
        }
    }
    let mut table = String::from("layer\trecordings\tmean\tstd\n");
    for &layer in &layers {
        let p = probe_layer(&ds, layer)?;
        let _ = writeln!(table, "{layer}\t{}\t{}\t{}", p.values.len(), p.mean, p.std);
        for r in ds.recordings.iter().filter(|r| matrices.contains(&r.recording_id)) {
            let sim = centered_cosine_matrix(r.layer(layer)?.view())?;
            let mut text = String::new();
            for row in sim.matrix.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                let _ = writeln!(text, "{}", cells.join("\t"));
            }
            run.write(format!("matrices/{}_L{layer:02}.tsv", r.recording_id), text)?;
        }
    }
    run.write("probe.tsv", &table)?;
    print!("{table}");
    Ok(())
}
