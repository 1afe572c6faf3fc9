use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde_json::json;

use ketod_core::augment::{
    attach_kb_rows, augment_corpus, AugmentConfig, ConstraintExtractor, NoConstraintPolicy, ANCHOR_RULE,
};
use ketod_core::camrest::{import_corpus, import_kb, CorpusLayout};
use ketod_core::corpus::{load_corpus, split_corpus, write_corpus, Corpus, SplitSizes, SplitTag};
use ketod_core::eval::{
    emit_report, entity_counts_against, evaluate as score, extract_entities, format_likert_means, likert_mean,
    load_report_rows, parse_likert, parse_likert_means, Entity,
};
use ketod_core::knowledge::{build_ontology, load_kb, write_kb, KnowledgeBase};
use ketod_core::serialize::{
    build_vocab, decode, encode, read_lines, read_parallel, render_corpus, truncate_context, unk_rate, write_parallel,
    ContextPair, Vocabulary,
};
use ketod_core::tokens::{DTA, SYS, USR};
use ketod_model::data::{encode_pairs, TokenScorer};
use ketod_model::train::EpochRecord;
use ketod_model::{fit, greedy_generate, load_checkpoint, save_checkpoint, Budget, ModelConfig, Params, TrainConfig};

use crate::manifest::Manifest;
use crate::{
    AugmentArgs, BuildArgs, EvaluateArgs, F1Gold, GenerateArgs, GridArgs, IngestArgs, ModelName, ReportArgs, Roots,
    TrainArgs,
};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parse_split(text: &str) -> Result<SplitSizes> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad --split `{text}`, expected train,valid,test"))?;
    let [train, valid, test] = parts[..] else {
        bail!("bad --split `{text}`, expected three sizes");
    };
    Ok(SplitSizes { train, valid, test })
}

/// Label counts when every dialogue is labeled, else the CamRest sizes for a
/// 676-dialogue corpus, else 60/20/20.
fn default_split(corpus: &Corpus) -> SplitSizes {
    let labels: Vec<Option<SplitTag>> = corpus.dialogues.iter().map(|d| d.split).collect();
    if labels
        .iter()
        .all(|l| matches!(l, Some(SplitTag::Train | SplitTag::Valid | SplitTag::Test)))
    {
        let count = |tag| labels.iter().filter(|l| **l == Some(tag)).count();
        return SplitSizes {
            train: count(SplitTag::Train),
            valid: count(SplitTag::Valid),
            test: count(SplitTag::Test),
        };
    }
    let n = corpus.len();
    if n == SplitSizes::CAMREST.total() {
        return SplitSizes::CAMREST;
    }
    let valid = n / 5;
    SplitSizes {
        train: n - 2 * valid,
        valid,
        test: valid,
    }
}

pub fn ingest(args: &IngestArgs, roots: &Roots) -> Result<()> {
    let kb_path = roots.input(&args.kb);
    let corpus_path = roots.input(&args.corpus);
    let out = roots.output(&args.out);
    let kb = import_kb(&kb_path)?;
    let (corpus, layout) = import_corpus(&corpus_path, &kb)?;
    let sizes = match &args.split {
        Some(s) => parse_split(s)?,
        None => default_split(&corpus),
    };
    let splits = split_corpus(&corpus, sizes, args.seed)?;

    create_dir(&out)?;
    write_kb(&kb, out.join("kb.jsonl"))?;
    write_corpus(&splits.train, out.join("train.jsonl"))?;
    write_corpus(&splits.valid, out.join("valid.jsonl"))?;
    write_corpus(&splits.test, out.join("test.jsonl"))?;

    let mut m = Manifest::new("ingest", args)?;
    m.seed("split", args.seed);
    m.input(&kb_path)?;
    m.input(&corpus_path)?;
    for name in ["kb.jsonl", "train.jsonl", "valid.jsonl", "test.jsonl"] {
        m.output(&out, name)?;
    }
    let layout = match layout {
        CorpusLayout::Native(_) => "native",
        CorpusLayout::RawRelease(_) => "raw-release",
        CorpusLayout::SplitFiles(_) => "split-files",
    };
    m.results = json!({
        "layout": layout,
        "kb_records": kb.len(),
        "dialogues": corpus.len(),
        "turns": corpus.turn_count(),
        "train": splits.train.len(),
        "valid": splits.valid.len(),
        "test": splits.test.len(),
    });
    m.write(&out.join("manifest.json"))?;
    println!(
        "{} dialogues, {} KB records -> train {} / valid {} / test {}",
        corpus.len(),
        kb.len(),
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );
    Ok(())
}

pub fn augment(args: &AugmentArgs, roots: &Roots) -> Result<()> {
    let data = roots.input(&args.data);
    let out = roots.output(&args.out);
    let train = load_corpus(data.join("train.jsonl"))?;
    let kb = load_kb(data.join("kb.jsonl"))?;
    let config = AugmentConfig {
        budget: args.budget,
        seed: args.seed,
        respect_constraints: args.respect_constraints,
    };
    let augmented = augment_corpus(&train, &kb, &config)?;
    let templates = Corpus::new(
        augmented
            .templates
            .iter()
            .enumerate()
            .map(|(i, t)| t.to_dialogue(format!("template-{i:04}")))
            .collect(),
        SplitTag::Train,
    )?;

    create_dir(&out)?;
    write_corpus(&augmented.corpus, out.join("train_ke.jsonl"))?;
    write_corpus(&templates, out.join("templates.jsonl"))?;
    let provenance: Vec<_> = augmented
        .generated()
        .iter()
        .zip(&augmented.provenance)
        .map(|(d, (t, records))| json!({"id": d.id, "template": format!("template-{t:04}"), "records": records}))
        .collect();
    let mut text = String::new();
    for p in &provenance {
        text.push_str(&p.to_string());
        text.push('\n');
    }
    fs::write(out.join("provenance.jsonl"), text)?;

    let generated = augmented.provenance.len();
    let mut m = Manifest::new("augment", args)?;
    m.seed("augment", args.seed);
    m.input(&data.join("train.jsonl"))?;
    m.input(&data.join("kb.jsonl"))?;
    for name in ["train_ke.jsonl", "templates.jsonl", "provenance.jsonl"] {
        m.output(&out, name)?;
    }
    m.results = json!({
        "templates": augmented.templates.len(),
        "anchor_rule": ANCHOR_RULE,
        "original": train.len(),
        "generated": generated,
        "total": augmented.corpus.len(),
    });
    m.write(&out.join("manifest.json"))?;
    println!("{} templates extracted", augmented.templates.len());
    println!("anchor rule: {ANCHOR_RULE}");
    println!(
        "{} original + {generated} generated = {} training dialogues",
        train.len(),
        augmented.corpus.len()
    );
    Ok(())
}

pub fn build(args: &BuildArgs, roots: &Roots) -> Result<()> {
    let data = roots.input(&args.data);
    let out = roots.output(&args.out);
    let train_path = if args.mode.uses_augmentation() {
        let Some(aug) = &args.augmented else {
            bail!("mode {:?} needs --augmented", args.mode);
        };
        roots.input(aug).join("train_ke.jsonl")
    } else {
        data.join("train.jsonl")
    };
    let kb = load_kb(data.join("kb.jsonl"))?;
    let train = load_corpus(&train_path)?;
    let valid = load_corpus(data.join("valid.jsonl"))?;
    let test = load_corpus(data.join("test.jsonl"))?;

    let mut extractor = ConstraintExtractor::new(&build_ontology(&kb));
    if args.all_rows_without_constraints {
        extractor.policy = NoConstraintPolicy::All;
    }
    let attach = |pair: &ContextPair| attach_kb_rows(pair, &kb, &extractor);
    let attach: Option<&dyn Fn(&ContextPair) -> ContextPair> =
        if args.mode.uses_kb_rows() { Some(&attach) } else { None };
    let render = |corpus: &Corpus| -> Vec<(Vec<String>, Vec<String>)> {
        render_corpus(corpus, attach)
            .into_iter()
            .map(|(src, tgt)| (truncate_context(&src, args.max_src_len), tgt))
            .collect()
    };
    let (train_pairs, valid_pairs, test_pairs) = (render(&train), render(&valid), render(&test));
    let vocab = build_vocab(&[&train], &kb)?;

    create_dir(&out)?;
    vocab.save(out.join("vocab.txt"))?;
    write_kb(&kb, out.join("kb.jsonl"))?;
    for (name, pairs) in [("train", &train_pairs), ("valid", &valid_pairs), ("test", &test_pairs)] {
        write_parallel(pairs, out.join(format!("{name}.src")), out.join(format!("{name}.tgt")))?;
    }

    let valid_unk = unk_rate(
        &vocab,
        valid_pairs.iter().flat_map(|(s, t)| [s.as_slice(), t.as_slice()]),
    );
    let rows = |pairs: &[(Vec<String>, Vec<String>)]| {
        pairs
            .iter()
            .map(|(s, _)| s.iter().filter(|t| *t == DTA).count())
            .sum::<usize>() as f64
            / pairs.len().max(1) as f64
    };
    let mut m = Manifest::new("build", args)?;
    m.input(&train_path)?;
    for name in ["kb.jsonl", "valid.jsonl", "test.jsonl"] {
        m.input(&data.join(name))?;
    }
    for name in [
        "vocab.txt",
        "kb.jsonl",
        "train.src",
        "train.tgt",
        "valid.src",
        "valid.tgt",
        "test.src",
        "test.tgt",
    ] {
        m.output(&out, name)?;
    }
    m.results = json!({
        "mode": args.mode,
        "vocab_size": vocab.len(),
        "vocab_hash": vocab.hash(),
        "pairs": {"train": train_pairs.len(), "valid": valid_pairs.len(), "test": test_pairs.len()},
        "valid_unk_rate": valid_unk,
        "mean_kb_rows": {"train": rows(&train_pairs), "valid": rows(&valid_pairs), "test": rows(&test_pairs)},
    });
    m.write(&out.join("manifest.json"))?;
    println!(
        "{:?}: {} / {} / {} pairs, vocabulary {} (valid UNK rate {:.4})",
        args.mode,
        train_pairs.len(),
        valid_pairs.len(),
        test_pairs.len(),
        vocab.len(),
        valid_unk
    );
    Ok(())
}

pub fn model_config(args: &TrainArgs, vocab_size: usize) -> ModelConfig {
    let mut config = ModelConfig::preset(args.model.into(), vocab_size);
    if let Some(p) = args.dropout {
        config.dropout = p;
    }
    if let Some(ls) = args.label_smoothing {
        config.label_smoothing = ls;
    }
    config.tie_embeddings |= args.tie_embeddings;
    config
}

pub fn train_config(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        batch_size: args.batch_size,
        lr0: args.lr,
        budget: match args.steps {
            Some(s) => Budget::Steps(s),
            None => Budget::Epochs(args.epochs.unwrap_or(30)),
        },
        warmup_steps: args.warmup_steps,
        seed: args.seed,
        clip_norm: (args.clip_norm > 0.0).then_some(args.clip_norm),
        patience: args.patience,
        max_decode_len: args.max_decode_len,
        ..TrainConfig::default()
    }
}

pub fn train(args: &TrainArgs, roots: &Roots) -> Result<()> {
    let built = roots.input(&args.built);
    let out = roots.output(&args.out);
    let vocab = Vocabulary::load(built.join("vocab.txt"))?;
    let kb = load_kb(built.join("kb.jsonl"))?;
    let ontology = build_ontology(&kb);
    let model = model_config(args, vocab.len());
    model.validate()?;
    let config = train_config(args);
    config.validate()?;

    let train_set = encode_pairs(
        &vocab,
        &read_parallel(built.join("train.src"), built.join("train.tgt"))?,
        &model,
    );
    let valid_set = encode_pairs(
        &vocab,
        &read_parallel(built.join("valid.src"), built.join("valid.tgt"))?,
        &model,
    );
    if args.strict_deterministic {
        log::info!("training is single-threaded with a fixed reduction order in every mode");
    }

    create_dir(&out)?;
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics =
        fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut write_error = None;
    let mut on_epoch = |r: &EpochRecord| {
        let mut line = serde_json::to_string(r).expect("epoch record serializes");
        line.push('\n');
        if let Err(e) = metrics.write_all(line.as_bytes()) {
            write_error.get_or_insert(e);
        }
    };
    let init = Params::<f32>::init(&model, args.seed)?;
    let n_params = init.layout.num_params();
    log::info!(
        "{:?} model, {n_params} parameters, {} training pairs",
        args.model,
        train_set.len()
    );
    let scorer = TokenScorer {
        vocab: &vocab,
        ontology: &ontology,
    };
    let mut outcome = fit(init, &train_set, &valid_set, &config, &scorer, &mut on_epoch)?;
    if let Some(e) = write_error {
        return Err(e).context("writing metrics.jsonl");
    }
    drop(metrics);
    outcome.best.vocab_hash = vocab.hash();
    save_checkpoint(out.join("best.ckpt"), &outcome.best)?;

    let mut m = Manifest::new("train", args)?;
    m.seed("init", args.seed);
    m.seed("shuffle", args.seed);
    m.seed("dropout", args.seed);
    for name in [
        "vocab.txt",
        "kb.jsonl",
        "train.src",
        "train.tgt",
        "valid.src",
        "valid.tgt",
    ] {
        m.input(&built.join(name))?;
    }
    m.output(&out, "best.ckpt")?;
    m.output(&out, "metrics.jsonl")?;
    m.results = json!({
        "model": model,
        "train": config,
        "parameters": n_params,
        "vocab_hash": vocab.hash(),
        "steps": outcome.step_losses.len(),
        "best_epoch": outcome.best_epoch,
        "best_step": outcome.best.step,
        "best_validation_bleu": outcome.best.validation_bleu,
        "final_step_loss": outcome.step_losses.last(),
        "history": outcome.history,
    });
    m.write(&out.join("manifest.json"))?;
    println!(
        "best epoch {} (step {}), validation BLEU {:.3}",
        outcome.best_epoch, outcome.best.step, outcome.best.validation_bleu
    );
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn generate(args: &GenerateArgs, roots: &Roots) -> Result<()> {
    let ckpt_path = roots.input(&args.checkpoint);
    let vocab_path = roots.input(&args.vocab);
    let src_path = roots.input(&args.src);
    let out = roots.output(&args.out);
    let vocab = Vocabulary::load(&vocab_path)?;
    let ckpt = load_checkpoint::<f32>(&ckpt_path, Some(&vocab.hash()))?;
    let max_src = ckpt.params.config.max_src_len;

    let mut text = String::new();
    let sources = read_lines(&src_path)?;
    for (i, src) in sources.iter().enumerate() {
        let ids = encode(&vocab, &truncate_context(src, max_src));
        let hyp = greedy_generate(&ckpt.params, &ids, args.max_len)
            .with_context(|| format!("{} line {}", src_path.display(), i + 1))?;
        text.push_str(&decode(&vocab, &hyp)?.join(" "));
        text.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;

    let mut m = Manifest::new("generate", args)?;
    m.input(&ckpt_path)?;
    m.input(&vocab_path)?;
    m.input(&src_path)?;
    let sha = ketod_core::sha256_hex(&fs::read(&out)?);
    m.outputs.insert(out.display().to_string(), sha);
    m.results = json!({"lines": sources.len(), "checkpoint_step": ckpt.step});
    m.write(&sidecar(&out))?;
    println!("{} responses written to {}", sources.len(), out.display());
    Ok(())
}

/// Entities of the `<DTA>` rows of a rendered context.
fn kb_row_entities(src: &[String], ontology: &ketod_core::knowledge::Ontology) -> BTreeSet<Entity> {
    let mut rows = Vec::new();
    let mut inside = false;
    for tok in src {
        match tok.as_str() {
            DTA => inside = true,
            USR | SYS => inside = false,
            _ if inside => rows.push(tok.clone()),
            _ => {}
        }
    }
    extract_entities(&rows, ontology)
}

pub fn evaluate(args: &EvaluateArgs, roots: &Roots) -> Result<()> {
    let hyp_path = roots.input(&args.hyp);
    let ref_path = roots.input(&args.reference);
    let kb_path = roots.input(&args.kb);
    let out = roots.output(&args.out);
    let hyps = read_lines(&hyp_path)?;
    let refs = read_lines(&ref_path)?;
    let kb: KnowledgeBase = import_kb(&kb_path)?;
    let ontology = build_ontology(&kb);
    let mut report = score(&hyps, &refs, &ontology)?;

    let mut m = Manifest::new("evaluate", args)?;
    m.input(&hyp_path)?;
    m.input(&ref_path)?;
    m.input(&kb_path)?;
    if args.f1_against == F1Gold::Kb {
        let Some(src) = &args.src else {
            bail!("--f1-against kb needs --src");
        };
        let src_path = roots.input(src);
        let sources = read_lines(&src_path)?;
        let gold: Vec<BTreeSet<Entity>> = sources.iter().map(|s| kb_row_entities(s, &ontology)).collect();
        let counts = entity_counts_against(&hyps, &gold, &ontology)?;
        report.entity_f1 = counts.f1();
        report.entity_precision = counts.precision();
        report.entity_recall = counts.recall();
        report
            .f1_definition
            .push_str(" Gold entities: the KB rows attached to each context.");
        m.input(&src_path)?;
    }

    create_dir(&out)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(out.join("report.txt"), report.summary())?;
    m.output(&out, "report.json")?;
    m.output(&out, "report.txt")?;
    m.results = json!({
        "bleu": report.bleu,
        "entity_f1": report.entity_f1,
        "entity_precision": report.entity_precision,
        "entity_recall": report.entity_recall,
        "examples": report.n_examples,
    });
    m.write(&out.join("manifest.json"))?;
    print!("{}", report.summary());
    Ok(())
}

pub fn report(args: &ReportArgs, roots: &Roots) -> Result<()> {
    ensure!(
        args.rows.is_some() || args.likert_means.is_some() || args.likert.is_some(),
        "nothing to report: give --rows, --likert-means or --likert"
    );
    let mut text = String::new();
    let mut json = serde_json::Map::new();

    let means = match &args.likert_means {
        Some(p) => {
            let p = roots.input(p);
            let body = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            Some(parse_likert_means(&body, &p.display().to_string())?)
        }
        None => None,
    };
    if let Some(rows_path) = &args.rows {
        let mut rows = load_report_rows(&roots.input(rows_path))?;
        if let Some(means) = &means {
            for row in &mut rows {
                if let Some((_, mean)) = means.iter().find(|(label, _)| *label == row.label) {
                    row.likert = Some(*mean);
                }
            }
        }
        let report = emit_report(&rows)?;
        text.push_str(&report.to_text());
        json.insert("table".into(), serde_json::to_value(&report)?);
    } else if let Some(means) = &means {
        text.push_str(&format_likert_means(means));
        json.insert("likert_means".into(), json!(means));
    }
    if let Some(p) = &args.likert {
        let p = roots.input(p);
        let body = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let summary = likert_mean(&parse_likert(&body, &p.display().to_string())?)?;
        text.push_str(&format!("Likert mean {:.2} over {} ratings\n", summary.mean, summary.n));
        for (annotator, mean) in &summary.per_annotator {
            text.push_str(&format!("  {annotator}\t{mean:.2}\n"));
        }
        json.insert("likert".into(), serde_json::to_value(&summary)?);
    }

    print!("{text}");
    if let Some(out) = &args.out {
        let out = roots.output(out);
        create_dir(&out)?;
        fs::write(out.join("report.txt"), &text)?;
        fs::write(out.join("report.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    }
    Ok(())
}

/// Training arguments of one grid cell.
fn cell(args: &GridArgs, model: ModelName, batch_size: usize, lr: f64, budget: Budget, name: &str) -> TrainArgs {
    let (epochs, steps) = match budget {
        Budget::Epochs(e) => (Some(e), None),
        Budget::Steps(s) => (None, Some(s)),
    };
    TrainArgs {
        built: args.built.clone(),
        out: args.out.join(name),
        model,
        batch_size,
        lr,
        epochs,
        steps,
        warmup_steps: 0,
        seed: args.seed,
        strict_deterministic: args.strict_deterministic,
        dropout: None,
        label_smoothing: None,
        tie_embeddings: false,
        patience: None,
        clip_norm: 1.0,
        max_decode_len: 64,
    }
}

pub fn cell_name(model: ModelName, batch_size: usize, lr: f64) -> String {
    format!("{}-b{batch_size}-lr{lr:e}", model_label(model))
}

fn model_label(model: ModelName) -> &'static str {
    match model {
        ModelName::Small => "small",
        ModelName::Large => "large",
        ModelName::Tiny => "tiny",
    }
}

pub fn grid(args: &GridArgs, roots: &Roots) -> Result<()> {
    let mut cells = Vec::new();
    for &model in &args.models {
        for &b in &args.batch_sizes {
            for &lr in &args.lrs {
                let name = cell_name(model, b, lr);
                cells.push((
                    name.clone(),
                    cell(args, model, b, lr, Budget::Epochs(args.epochs), &name),
                ));
            }
        }
        if args.seq2seq {
            let (batch, steps) = match model {
                ModelName::Large => (16, 50_000),
                _ => (8, 100_000),
            };
            let name = format!("{}-seq2seq", model_label(model));
            cells.push((
                name.clone(),
                cell(args, model, batch, 6.25e-5, Budget::Steps(steps), &name),
            ));
        }
    }

    let out = roots.output(&args.out);
    create_dir(&out)?;
    let mut summary = String::from("cell\tbest_epoch\tbest_validation_bleu\n");
    for (name, train_args) in &cells {
        let dir = roots.output(&train_args.out);
        create_dir(&dir)?;
        let mut m = Manifest::new("train", train_args)?;
        m.seed("init", args.seed);
        m.write(&dir.join("manifest.json"))?;
        if args.run {
            train(train_args, roots).with_context(|| format!("grid cell {name}"))?;
            let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
            let r = &written["results"];
            summary.push_str(&format!("{name}\t{}\t{}\n", r["best_epoch"], r["best_validation_bleu"]));
        }
    }
    let names: Vec<&str> = cells.iter().map(|(n, _)| n.as_str()).collect();
    fs::write(
        out.join("grid.json"),
        serde_json::to_string_pretty(&json!({"cells": names}))? + "\n",
    )?;
    if args.run {
        fs::write(out.join("results.tsv"), &summary)?;
        print!("{summary}");
    } else {
        for n in &names {
            println!("{}", out.join(n).join("manifest.json").display());
        }
    }
    Ok(())
}
