use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use histtag::charlm::{corpus_perplexity, train_lm, CharLm, CharLmConfig, Direction, PerplexityReport};
use histtag::corpus::{read_conll, read_plain, CharVocabulary, ConllColumns, Split, TaggedCorpus, VocabBuilder};
use histtag::embed::{ComponentSpec, StackedEmbedder};
use histtag::eval::{average_runs, evaluate, evaluate_predictions, write_conll_predictions, EvalReport, RunSummary};
use histtag::smlm::{corruption_stats, select_mask_char, smlm_transform, SmlmConfig, SmlmReport, DEFAULT_MASK_CANDIDATES};
use histtag::tagger::{predict, train_ner, NerModel};
use histtag::{toy, TagScheme};

use crate::config::{read_text, require_file, RunConfig};
use crate::manifest::{replay, Outcome};
use crate::{Cmd, EvalArgs, LmCmd, LmPplArgs, LmTrainArgs, NerCmd, NerPredictArgs, NerTrainArgs, PipelineArgs};
use crate::{SmlmArgs, ToyDataArgs, UsageError, VocabArgs};

pub fn run(cmd: Cmd) -> anyhow::Result<Outcome> {
    match cmd {
        Cmd::Vocab(a) => cmd_vocab(a),
        Cmd::Smlm(a) => cmd_smlm(a),
        Cmd::Lm(LmCmd::Train(a)) => cmd_lm_train(a),
        Cmd::Lm(LmCmd::Ppl(a)) => cmd_lm_ppl(a),
        Cmd::Ner(NerCmd::Train(a)) => cmd_ner_train(a),
        Cmd::Ner(NerCmd::Predict(a)) => cmd_ner_predict(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Pipeline(a) => cmd_pipeline(a),
        Cmd::Replay(a) => {
            let mismatched = replay(&a.manifest)?;
            if mismatched.is_empty() {
                println!("all outputs reproduced identically");
                Ok(Outcome::default())
            } else {
                for p in &mismatched {
                    println!("differs: {}", p.display());
                }
                bail!("{} output(s) differ from the recorded run", mismatched.len())
            }
        }
        Cmd::ToyData(a) => cmd_toy_data(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create_parent(p: &Path) -> anyhow::Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    create_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_tagged(path: &Path, columns: ConllColumns, scheme: TagScheme, split: Split) -> anyhow::Result<TaggedCorpus> {
    read_conll(path, columns, scheme, split).with_context(|| format!("reading {}", path.display()))
}

fn tokens_only(token: usize) -> ConllColumns {
    ConllColumns {
        token,
        gold: None,
        predicted: None,
    }
}

// ---------------------------------------------------------------- vocab

fn build_vocab(conll: &[PathBuf], plain: &[PathBuf], token_column: usize, output: &Path) -> anyhow::Result<CharVocabulary> {
    let mut builder = VocabBuilder::new();
    for p in conll {
        builder.add_corpus(&read_tagged(p, tokens_only(token_column), TagScheme::Iob2, Split::Train)?);
    }
    for p in plain {
        builder
            .add_lines(read_plain(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("reading {}", p.display()))?;
    }
    let vocab = builder.build();
    create_parent(output)?;
    vocab
        .write_to(BufWriter::new(File::create(output)?))
        .with_context(|| format!("writing {}", output.display()))?;
    log::info!("{} characters written to {}", vocab.len(), output.display());
    Ok(vocab)
}

fn cmd_vocab(a: VocabArgs) -> anyhow::Result<Outcome> {
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let (mut conll, plain) = (a.conll, a.plain);
    if conll.is_empty() && plain.is_empty() {
        if let Some(c) = &cfg {
            conll = c.vocab_sources();
        }
    }
    if conll.is_empty() && plain.is_empty() {
        return Err(usage("no input: pass --conll/--plain files or --config"));
    }
    for p in conll.iter().chain(&plain) {
        require_file(p, "input")?;
    }
    let output = match (a.output, &cfg) {
        (Some(o), _) => o,
        (None, Some(c)) => c.vocab_output(),
        (None, None) => return Err(usage("--output is required without --config")),
    };
    let vocab = build_vocab(&conll, &plain, a.token_column, &output)?;
    println!("{} characters", vocab.len());
    let mut out = Outcome::beside(&output);
    out.config = cfg.map(|c| c.path);
    out.inputs = conll.into_iter().chain(plain).collect();
    out.outputs = vec![output];
    Ok(out)
}

// ---------------------------------------------------------------- smlm

/// A vocabulary file, or the characters of a CoNLL dataset.
fn load_target_vocab(path: &Path) -> anyhow::Result<CharVocabulary> {
    let mut first = String::new();
    BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?).read_line(&mut first)?;
    if first.starts_with("# characters") {
        CharVocabulary::read_from(BufReader::new(File::open(path)?)).with_context(|| format!("reading {}", path.display()))
    } else {
        let corpus = read_tagged(path, tokens_only(0), TagScheme::Iob2, Split::Train)?;
        Ok(histtag::corpus::extract_char_vocab(&[&corpus]))
    }
}

fn run_smlm(input: &Path, vocab: &CharVocabulary, config: &SmlmConfig, output: &Path, stats: Option<&Path>) -> anyhow::Result<SmlmReport> {
    create_parent(output)?;
    let lines = read_plain(input).with_context(|| format!("reading {}", input.display()))?;
    let counts = smlm_transform(lines, vocab, config, BufWriter::new(File::create(output)?))?;
    let report = SmlmReport {
        config: config.clone(),
        vocabulary_size: vocab.len(),
        stats: counts,
        rates: corruption_stats(&counts)?,
    };
    if let Some(s) = stats {
        write_json(s, &report)?;
    }
    log::info!(
        "corrupted {} characters: keep {:.4} mask {:.4} replace {:.4}",
        counts.total_chars,
        report.rates.keep,
        report.rates.mask,
        report.rates.replace
    );
    Ok(report)
}

fn smlm_config(vocab: &CharVocabulary, p_keep: f64, seed: u64, mask: Option<char>) -> anyhow::Result<SmlmConfig> {
    let mask_char = match mask {
        Some(c) => c,
        None => select_mask_char(vocab, &DEFAULT_MASK_CANDIDATES)?,
    };
    let c = SmlmConfig {
        p_keep,
        mask_char,
        seed,
        ..SmlmConfig::default()
    };
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn cmd_smlm(a: SmlmArgs) -> anyhow::Result<Outcome> {
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let section = cfg.as_ref().and_then(|c| c.smlm.clone()).unwrap_or_default();
    let input = match (a.input, &cfg) {
        (Some(p), _) => p,
        (None, Some(c)) => c.smlm_input()?,
        (None, None) => return Err(usage("--input is required without --config")),
    };
    require_file(&input, "input")?;
    let (vocab, vocab_inputs) = match (&a.vocab, &cfg) {
        (Some(p), _) => {
            require_file(p, "vocabulary")?;
            (load_target_vocab(p)?, vec![p.clone()])
        }
        (None, Some(c)) => {
            let sources = c.vocab_sources();
            for p in &sources {
                require_file(p, "vocabulary source")?;
            }
            let corpora = sources
                .iter()
                .map(|p| read_tagged(p, tokens_only(c.data.token_column), TagScheme::Iob2, Split::Train))
                .collect::<anyhow::Result<Vec<_>>>()?;
            (histtag::corpus::extract_char_vocab(&corpora.iter().collect::<Vec<_>>()), sources)
        }
        (None, None) => return Err(usage("--vocab is required without --config")),
    };
    let output = match (a.output, &cfg) {
        (Some(p), _) => p,
        (None, Some(c)) => c.smlm_output(),
        (None, None) => return Err(usage("--output is required without --config")),
    };
    let stats = a.stats.or_else(|| cfg.as_ref().map(RunConfig::smlm_stats));
    let seed = a.seed.unwrap_or(section.seed);
    let config = smlm_config(&vocab, a.p_keep.unwrap_or(section.p_keep), seed, a.mask_char.or(section.mask_char))?;
    run_smlm(&input, &vocab, &config, &output, stats.as_deref())?;
    let mut out = Outcome::beside(&output);
    out.config = cfg.map(|c| c.path);
    out.seeds.insert("smlm".into(), seed);
    out.inputs = std::iter::once(input).chain(vocab_inputs).collect();
    out.outputs = std::iter::once(output).chain(stats).collect();
    Ok(out)
}

// ---------------------------------------------------------------- lm

fn lm_log_path(model: &Path) -> PathBuf {
    model.with_extension("log.json")
}

fn run_lm_train(input: &Path, vocab: Option<&CharVocabulary>, config: &CharLmConfig, seed: u64, output: &Path) -> anyhow::Result<()> {
    let text = read_text(input)?;
    let (model, log) = train_lm(&text, vocab, config, seed).with_context(|| format!("training {} LM", config.direction))?;
    create_parent(output)?;
    model.save(output).with_context(|| format!("writing {}", output.display()))?;
    write_json(&lm_log_path(output), &log)?;
    log::info!(
        "{} LM: test perplexity {:.3} -> {:.3}",
        config.direction,
        log.initial_test_perplexity,
        log.final_test_perplexity()
    );
    Ok(())
}

fn cmd_lm_train(a: LmTrainArgs) -> anyhow::Result<Outcome> {
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let section = cfg.as_ref().and_then(|c| c.lm.clone()).unwrap_or_default();
    let mut config = section.config(a.direction);
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.hidden {
        config.hidden_size = v;
    }
    if let Some(v) = a.embed_dim {
        config.char_embed_dim = v;
    }
    if let Some(v) = a.sequence_length {
        config.sequence_length = v;
    }
    if let Some(v) = a.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = a.dropout {
        config.dropout = v;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let input = match (a.input, &cfg) {
        (Some(p), _) => p,
        (None, Some(c)) => c.lm_input()?,
        (None, None) => return Err(usage("--input is required without --config")),
    };
    require_file(&input, "input")?;
    let output = match (a.output, &cfg) {
        (Some(p), _) => p,
        (None, Some(c)) => c.lm_output(a.direction),
        (None, None) => return Err(usage("--output is required without --config")),
    };
    let vocab = match &a.vocab {
        Some(p) => {
            require_file(p, "vocabulary")?;
            Some(CharVocabulary::read_from(BufReader::new(File::open(p)?)).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    let seed = a.seed.unwrap_or(section.seed);
    run_lm_train(&input, vocab.as_ref(), &config, seed, &output)?;
    let mut out = Outcome::beside(&output);
    out.config = cfg.map(|c| c.path);
    out.seeds.insert(format!("lm.{}", a.direction), seed);
    out.inputs = std::iter::once(input).chain(a.vocab).collect();
    out.outputs = vec![lm_log_path(&output), output];
    Ok(out)
}

fn cmd_lm_ppl(a: LmPplArgs) -> anyhow::Result<Outcome> {
    require_file(&a.model, "model")?;
    require_file(&a.input, "input")?;
    let model = CharLm::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let sentences: Vec<String> = if a.conll {
        read_tagged(&a.input, tokens_only(a.token_column), TagScheme::Iob2, Split::Test)?
            .sentences
            .iter()
            .map(|s| s.render())
            .collect()
    } else {
        read_text(&a.input)?.lines().map(str::to_string).collect()
    };
    let report = corpus_perplexity(&model, &sentences)?;
    println!(
        "perplexity {:.4} over {} sentences ({} skipped)",
        report.mean, report.scored, report.skipped
    );
    let mut out = Outcome::default();
    if let Some(o) = &a.output {
        write_json(o, &report)?;
        out = Outcome::beside(o);
        out.outputs = vec![o.clone()];
    }
    out.inputs = vec![a.model, a.input];
    Ok(out)
}

// ---------------------------------------------------------------- ner

struct NerData {
    train: TaggedCorpus,
    dev: TaggedCorpus,
    test: Option<TaggedCorpus>,
    paths: Vec<PathBuf>,
}

fn load_ner_data(cfg: &RunConfig, train: Option<PathBuf>, dev: Option<PathBuf>, test: Option<PathBuf>) -> anyhow::Result<NerData> {
    let train = train.map_or_else(|| cfg.data_path("train"), Ok)?;
    let dev = dev.map_or_else(|| cfg.data_path("dev"), Ok)?;
    let test = test.or_else(|| cfg.data.test.as_ref().map(|p| cfg.resolve(p)));
    for p in [&train, &dev].into_iter().chain(&test) {
        require_file(p, "data file")?;
    }
    let cols = cfg.data.columns();
    let scheme = cfg.data.scheme;
    Ok(NerData {
        train: read_tagged(&train, cols, scheme, Split::Train)?,
        dev: read_tagged(&dev, cols, scheme, Split::Dev)?,
        test: test.as_deref().map(|p| read_tagged(p, cols, scheme, Split::Test)).transpose()?,
        paths: [train, dev].into_iter().chain(test).collect(),
    })
}

fn check_embedding_files(specs: &[ComponentSpec]) -> anyhow::Result<()> {
    for s in specs {
        match s {
            ComponentSpec::Word { path } => require_file(path, "word vectors")?,
            ComponentSpec::Contextual { forward, backward } => {
                require_file(forward, "forward LM")?;
                require_file(backward, "backward LM")?;
            }
            ComponentSpec::Char { .. } => {}
        }
    }
    Ok(())
}

fn embedding_inputs(specs: &[ComponentSpec]) -> Vec<PathBuf> {
    specs
        .iter()
        .flat_map(|s| match s {
            ComponentSpec::Word { path } => vec![path.clone()],
            ComponentSpec::Contextual { forward, backward } => vec![forward.clone(), backward.clone()],
            ComponentSpec::Char { .. } => vec![],
        })
        .collect()
}

fn run_dir(out_dir: &Path, run: usize) -> PathBuf {
    out_dir.join(format!("run-{}", run + 1))
}

/// Trains one tagger, writes its model, log, test predictions and report.
fn ner_run(
    cfg: &RunConfig,
    data: &NerData,
    specs: &[ComponentSpec],
    seed: u64,
    dir: &Path,
) -> anyhow::Result<(EvalReport, Vec<PathBuf>)> {
    fs::create_dir_all(dir)?;
    let char_vocab = histtag::corpus::extract_char_vocab(&[&data.train, &data.dev]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let embedder = StackedEmbedder::from_specs(specs, &char_vocab, &mut rng)?;
    let mut tagger = cfg.tagger.clone();
    tagger.seed = seed;
    let (model, log) = train_ner(embedder, &data.train, &data.dev, &tagger)?;
    let model_path = dir.join("model.bin");
    model.save(&model_path)?;
    let log_path = dir.join("training_log.json");
    write_json(&log_path, &log)?;
    let eval_corpus = data.test.as_ref().unwrap_or(&data.dev);
    let predicted = predict(&model, eval_corpus)?;
    let report = evaluate_predictions(&predicted)?;
    let pred_path = dir.join("predictions.conll");
    write_conll_predictions(&predicted, &predicted, &pred_path)?;
    let report_path = dir.join("report.json");
    write_json(&report_path, &report)?;
    log::info!(
        "{}: best dev F1 {:.2} at epoch {}, evaluation F1 {:.2}",
        dir.display(),
        100.0 * log.best_dev_f1,
        log.best_epoch,
        100.0 * report.f1
    );
    Ok((report, vec![model_path, log_path, pred_path, report_path]))
}

fn summary_table(summary: &RunSummary, seeds: &[u64]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6}  {:>6}  {:>9}  {:>7}  {:>7}", "run", "seed", "precision", "recall", "f1");
    for (i, (r, seed)) in summary.reports.iter().zip(seeds).enumerate() {
        let _ = writeln!(
            s,
            "{:<6}  {:>6}  {:>9.2}  {:>7.2}  {:>7.2}",
            i + 1,
            seed,
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1
        );
    }
    let _ = writeln!(s, "mean F1 {:.2}", 100.0 * summary.mean_f1);
    s
}

/// Runs `runs` taggers in parallel with seeds `base_seed + i`.
fn ner_runs(cfg: &RunConfig, data: &NerData, runs: usize, base_seed: u64, out_dir: &Path, out: &mut Outcome) -> anyhow::Result<RunSummary> {
    let specs = cfg.component_specs();
    check_embedding_files(&specs)?;
    fs::create_dir_all(out_dir)?;
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base_seed + i).collect();
    let results: Vec<anyhow::Result<(EvalReport, Vec<PathBuf>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .enumerate()
            .map(|(i, &seed)| {
                let specs = &specs;
                scope.spawn(move || ner_run(cfg, data, specs, seed, &run_dir(out_dir, i)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("training thread panicked"))))
            .collect()
    });
    let mut reports = Vec::with_capacity(runs);
    for (i, r) in results.into_iter().enumerate() {
        let (report, files) = r.with_context(|| format!("run {}", i + 1))?;
        reports.push(report);
        out.outputs.extend(files);
        out.seeds.insert(format!("ner.run-{}", i + 1), seeds[i]);
    }
    let summary = average_runs(&reports)?;
    let json = out_dir.join("summary.json");
    write_json(&json, &summary)?;
    let table = summary_table(&summary, &seeds);
    let txt = out_dir.join("summary.txt");
    fs::write(&txt, &table)?;
    print!("{table}");
    out.outputs.extend([json, txt]);
    out.inputs.extend(embedding_inputs(&specs));
    Ok(summary)
}

fn cmd_ner_train(a: NerTrainArgs) -> anyhow::Result<Outcome> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(e) = a.max_epochs {
        cfg.tagger.max_epochs = e;
    }
    let runs = a.runs.unwrap_or(cfg.eval.runs);
    if runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let data = load_ner_data(&cfg, a.train, a.dev, a.test)?;
    let out_dir = a.output_dir.unwrap_or_else(|| cfg.ner_dir());
    let mut out = Outcome::in_dir(&out_dir);
    out.config = Some(cfg.path.clone());
    out.inputs = data.paths.clone();
    ner_runs(&cfg, &data, runs, a.seed.unwrap_or(cfg.tagger.seed), &out_dir, &mut out)?;
    Ok(out)
}

fn cmd_ner_predict(a: NerPredictArgs) -> anyhow::Result<Outcome> {
    require_file(&a.model, "model")?;
    require_file(&a.input, "input")?;
    let model = NerModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let columns = if a.no_gold {
        tokens_only(a.token_column)
    } else {
        ConllColumns::new(a.token_column, a.tag_column)
    };
    let corpus = read_tagged(&a.input, columns, a.scheme, Split::Test)?;
    let predicted = predict(&model, &corpus)?;
    create_parent(&a.output)?;
    if a.no_gold {
        let mut text = String::new();
        for s in &predicted.sentences {
            let tags = histtag::corpus::convert_tags(&s.predicted_tags().unwrap_or_default(), TagScheme::Iobes, TagScheme::Iob2)?;
            for (t, tag) in s.tokens().iter().zip(tags) {
                let _ = writeln!(text, "{} {tag}", t.text);
            }
            text.push('\n');
        }
        fs::write(&a.output, text)?;
    } else {
        write_conll_predictions(&predicted, &predicted, &a.output)?;
        let report = evaluate_predictions(&predicted)?;
        print!("{}", report.to_table());
    }
    let mut out = Outcome::beside(&a.output);
    out.inputs = vec![a.model, a.input];
    out.outputs = vec![a.output];
    Ok(out)
}

// ---------------------------------------------------------------- eval

fn last_column(path: &Path) -> anyhow::Result<usize> {
    let f = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    for line in f.lines() {
        let line = line?;
        let fields = line.split_whitespace().count();
        if fields > 0 && !line.starts_with("-DOCSTART-") {
            return Ok(fields - 1);
        }
    }
    Ok(1)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<Outcome> {
    require_file(&a.gold, "gold file")?;
    for p in &a.pred {
        require_file(p, "prediction file")?;
    }
    let gold = read_tagged(&a.gold, ConllColumns::new(0, a.gold_column), a.scheme, Split::Test)?;
    let mut reports = Vec::new();
    for p in &a.pred {
        let column = match a.pred_column {
            Some(c) => c,
            None => last_column(p)?,
        };
        let pred = read_tagged(p, ConllColumns::new(0, column), a.scheme, Split::Test)?;
        let report = evaluate(&gold, &pred).with_context(|| format!("scoring {}", p.display()))?;
        if a.pred.len() > 1 {
            println!("{}", p.display());
        }
        print!("{}", report.to_table());
        reports.push(report);
    }
    let summary = average_runs(&reports)?;
    if reports.len() > 1 {
        println!("mean F1 over {} runs: {:.2}", reports.len(), 100.0 * summary.mean_f1);
    }
    let mut out = Outcome::default();
    if let Some(o) = &a.output {
        write_json(o, &summary)?;
        out = Outcome::beside(o);
        out.outputs = vec![o.clone()];
    }
    out.inputs = std::iter::once(a.gold).chain(a.pred).collect();
    Ok(out)
}

// ---------------------------------------------------------------- pipeline

fn cmd_pipeline(a: PipelineArgs) -> anyhow::Result<Outcome> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    if let Some(r) = a.runs {
        if r == 0 {
            return Err(usage("--runs must be at least 1"));
        }
        cfg.eval.runs = r;
    }
    let mut out = Outcome::in_dir(&cfg.output_dir);
    out.config = Some(cfg.path.clone());

    // every input that no earlier step produces must exist up front
    let data = load_ner_data(&cfg, None, None, None)?;
    let sources = cfg.vocab_sources();
    for p in &sources {
        require_file(p, "vocabulary source")?;
    }
    if cfg.smlm.is_some() {
        require_file(&cfg.smlm_input()?, "SMLM input")?;
    }
    if cfg.lm.is_some() && !(cfg.smlm.is_some() && cfg.lm_input()? == cfg.smlm_output()) {
        require_file(&cfg.lm_input()?, "LM training text")?;
    }
    let trained: Vec<PathBuf> = if cfg.lm.is_some() {
        vec![cfg.lm_output(Direction::Forward), cfg.lm_output(Direction::Backward)]
    } else {
        vec![]
    };
    let specs = cfg.component_specs();
    for p in embedding_inputs(&specs) {
        if !trained.contains(&p) {
            require_file(&p, "embedding file")?;
        }
    }
    fs::create_dir_all(&cfg.output_dir)?;
    out.inputs = data.paths.clone();

    let vocab_out = cfg.vocab_output();
    let vocab = build_vocab(&sources, &[], cfg.data.token_column, &vocab_out)?;
    out.outputs.push(vocab_out);

    if let Some(s) = &cfg.smlm {
        let input = cfg.smlm_input()?;
        let config = smlm_config(&vocab, s.p_keep, s.seed, s.mask_char)?;
        run_smlm(&input, &vocab, &config, &cfg.smlm_output(), Some(&cfg.smlm_stats()))?;
        out.seeds.insert("smlm".into(), s.seed);
        out.inputs.push(input);
        out.outputs.extend([cfg.smlm_output(), cfg.smlm_stats()]);
    }

    if let Some(lm) = &cfg.lm {
        let input = cfg.lm_input()?;
        if input != cfg.smlm_output() {
            out.inputs.push(input.clone());
        }
        let mut ppl: Vec<(Direction, PerplexityReport)> = Vec::new();
        let eval_corpus = data.test.as_ref().unwrap_or(&data.dev);
        let sentences: Vec<String> = eval_corpus.sentences.iter().map(|s| s.render()).collect();
        for d in [Direction::Forward, Direction::Backward] {
            let path = cfg.lm_output(d);
            run_lm_train(&input, None, &lm.config(d), lm.seed, &path)?;
            out.seeds.insert(format!("lm.{d}"), lm.seed);
            let model = CharLm::load(&path)?;
            ppl.push((d, corpus_perplexity(&model, &sentences)?));
            out.outputs.extend([lm_log_path(&path), path]);
        }
        let ppl_path = cfg.output_dir.join("lm").join("perplexity.json");
        let by_dir: std::collections::BTreeMap<String, &PerplexityReport> =
            ppl.iter().map(|(d, r)| (d.to_string(), r)).collect();
        write_json(&ppl_path, &by_dir)?;
        for (d, r) in &ppl {
            println!("{d} LM perplexity on evaluation sentences: {:.3}", r.mean);
        }
        out.outputs.push(ppl_path);
    }

    let ner_dir = cfg.ner_dir();
    let inputs_before = out.inputs.len();
    ner_runs(&cfg, &data, cfg.eval.runs, cfg.tagger.seed, &ner_dir, &mut out)?;
    // trained LMs are outputs, not inputs
    let produced = out.outputs.clone();
    let tail: Vec<PathBuf> = out.inputs.split_off(inputs_before);
    out.inputs.extend(tail.into_iter().filter(|p| !produced.contains(p)));
    Ok(out)
}

// ---------------------------------------------------------------- toy data

pub const TOY_CONFIG: &str = include_str!("toy_run.toml");

fn cmd_toy_data(a: ToyDataArgs) -> anyhow::Result<Outcome> {
    let data = toy::generate(a.seed);
    toy::write_toy_data(&data, &a.output)?;
    fs::write(a.output.join("run.toml"), TOY_CONFIG)?;
    println!(
        "wrote {} train, {} dev, {} test sentences and {} plain lines to {}",
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        data.plain.lines().count(),
        a.output.display()
    );
    Ok(Outcome::default())
}
