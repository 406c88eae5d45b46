//! Command drivers binding the pipeline together.
//!
//! Every command reads its inputs and outputs from config keys, writes
//! its primary artifact plus a manifest recording the config hash, the
//! seed and the content hash of every input file it consumed. Two runs
//! with equal manifests produce identical artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::alignment::{prune_top_k, train_alignment, AlignmentTable};
use crate::checkpoint;
use crate::config::{file_hash, Config};
use crate::corpus::{read_sentences, write_sentences, ParallelCorpus};
use crate::decoding::{beam_decode, greedy_decode, Hypothesis, ModelScorer};
use crate::eval::{evaluate_outputs, lead_baseline, train_lm};
use crate::model::CoreModel;
use crate::training::{train, VocabSet};
use crate::vocab::{
    build_vocab, coverage_ratio, frequent_table, ranked_target_tokens, CoverageInputs,
    CoverageSpec, Side, Vocabulary,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Align,
    Coverage,
    Train,
    Generate,
    Evaluate,
}

impl CommandKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "align" => Ok(CommandKind::Align),
            "coverage" => Ok(CommandKind::Coverage),
            "train" => Ok(CommandKind::Train),
            "generate" => Ok(CommandKind::Generate),
            "evaluate" => Ok(CommandKind::Evaluate),
            other => Err(Error::Config(format!(
                "unknown command '{other}'; expected align|coverage|train|generate|evaluate"
            ))),
        }
    }
}

/// Manifest rows: config hash, seed, then one row per consumed input.
fn write_manifest(path: &Path, cfg: &Config, inputs: &[(&str, &Path)]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "config_hash\t{}", cfg.content_hash());
    let _ = writeln!(out, "seed\t{}", cfg.uint("seed"));
    for (key, p) in inputs {
        let _ = writeln!(out, "input\t{key}\t{}", file_hash(p)?);
    }
    fs::write(path, out)?;
    Ok(())
}

fn manifest_sibling(primary: &Path) -> PathBuf {
    let mut name = primary
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".manifest.tsv");
    primary.with_file_name(name)
}

/// Dispatch one command. Returns the artifacts written.
pub fn run(cmd: CommandKind, cfg: &Config) -> Result<Vec<PathBuf>> {
    match cmd {
        CommandKind::Align => run_align(cfg),
        CommandKind::Coverage => run_coverage(cfg),
        CommandKind::Train => run_train(cfg),
        CommandKind::Generate => run_generate(cfg),
        CommandKind::Evaluate => run_evaluate(cfg),
    }
}

fn run_align(cfg: &Config) -> Result<Vec<PathBuf>> {
    let corpus_path = PathBuf::from(cfg.required_path("train_corpus")?);
    let out_path = PathBuf::from(cfg.required_path("alignment_table")?);
    let corpus = ParallelCorpus::load(&corpus_path)?;
    let trained = train_alignment(
        &corpus,
        cfg.uint("align_iterations") as usize,
        cfg.diagonal_tension(),
    )?;
    let pruned = prune_top_k(&trained.table, cfg.uint("k_alignments") as usize)?;
    pruned.save(&out_path)?;
    let manifest = manifest_sibling(&out_path);
    write_manifest(&manifest, cfg, &[("train_corpus", &corpus_path)])?;
    Ok(vec![out_path, manifest])
}

fn run_coverage(cfg: &Config) -> Result<Vec<PathBuf>> {
    let train_path = PathBuf::from(cfg.required_path("train_corpus")?);
    let test_path = PathBuf::from(cfg.required_path("test_corpus")?);
    let table_path = PathBuf::from(cfg.required_path("alignment_table")?);
    let report_path = PathBuf::from(cfg.required_path("coverage_report")?);

    let train_corpus = ParallelCorpus::load(&train_path)?;
    let test_corpus = ParallelCorpus::load(&test_path)?;
    let table = AlignmentTable::load(&table_path)?;
    let frequent = frequent_table(&train_corpus, cfg.uint("frequent_size") as usize)?;
    let ranked = ranked_target_tokens(&train_corpus);
    let inputs = CoverageInputs {
        table: &table,
        frequent: &frequent,
        ranked_target: &ranked,
    };
    let specs = [
        CoverageSpec::Source,
        CoverageSpec::SourceAlign,
        CoverageSpec::SourceAlignFrequent,
        CoverageSpec::TopTarget(cfg.uint("coverage_top_n") as usize),
    ];
    let mut out = String::new();
    for spec in specs {
        let pct = coverage_ratio(&test_corpus, spec, &inputs);
        let _ = writeln!(out, "{}\t{pct:.2}", spec.label());
    }
    fs::write(&report_path, out)?;
    let manifest = manifest_sibling(&report_path);
    write_manifest(
        &manifest,
        cfg,
        &[
            ("train_corpus", &train_path),
            ("test_corpus", &test_path),
            ("alignment_table", &table_path),
        ],
    )?;
    Ok(vec![report_path, manifest])
}

fn run_train(cfg: &Config) -> Result<Vec<PathBuf>> {
    let train_path = PathBuf::from(cfg.required_path("train_corpus")?);
    let table_path = PathBuf::from(cfg.required_path("alignment_table")?);
    let out_dir = PathBuf::from(cfg.required_path("checkpoint_dir")?);
    fs::create_dir_all(&out_dir)?;

    let train_corpus = ParallelCorpus::load(&train_path)?;
    let table = AlignmentTable::load(&table_path)?;
    let valid_corpus = match cfg.text("valid_corpus") {
        "" => None,
        path => match ParallelCorpus::load(Path::new(path)) {
            Ok(c) if !c.is_empty() => Some(c),
            Ok(_) => {
                eprintln!("warning: validation corpus {path} is empty; validation skipped");
                None
            }
            Err(e) => return Err(e),
        },
    };

    let tc = cfg.train_config();
    let vocabs = VocabSet {
        source: build_vocab(&train_corpus, Side::Source, cfg.uint("min_count_source"))?,
        target: build_vocab(&train_corpus, Side::Target, cfg.uint("min_count_target"))?,
        frequent: frequent_table(&train_corpus, tc.frequent_size)?,
    };
    let src_vocab_path = out_dir.join("src_vocab.txt");
    let tgt_vocab_path = out_dir.join("tgt_vocab.txt");
    let frequent_path = out_dir.join("frequent_vocab.txt");
    vocabs.source.save(&src_vocab_path)?;
    vocabs.target.save(&tgt_vocab_path)?;
    vocabs.frequent.save(&frequent_path)?;

    // the checkpoint snapshot pins the artifacts it was trained against
    let mut snapshot_cfg = cfg.clone();
    snapshot_cfg.set("src_vocab_hash", &file_hash(&src_vocab_path)?)?;
    snapshot_cfg.set("tgt_vocab_hash", &file_hash(&tgt_vocab_path)?)?;
    snapshot_cfg.set("table_hash", &file_hash(&table_path)?)?;
    let snapshot = snapshot_cfg.canonical_text();

    let mut artifacts = vec![src_vocab_path.clone(), tgt_vocab_path.clone(), frequent_path.clone()];
    let mut log = String::new();
    let mut best: Option<(f64, PathBuf)> = None;
    let outcome = train(
        &tc,
        &train_corpus,
        valid_corpus.as_ref(),
        &table,
        &vocabs,
        &mut |metrics, model| {
            log.push_str(&metrics.tsv_line());
            log.push('\n');
            let path = out_dir.join(format!("epoch_{:04}.core", metrics.epoch));
            checkpoint::save_checkpoint(&model.params, &snapshot, &path)?;
            let score = metrics.val_eps.unwrap_or(metrics.train_eps1 + metrics.train_eps2);
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, path.clone()));
            }
            artifacts.push(path);
            Ok(())
        },
    )?;
    drop(outcome);

    let log_path = out_dir.join("train_log.tsv");
    fs::write(&log_path, log)?;
    artifacts.push(log_path);
    if let Some((_, best_path)) = best {
        let best_copy = out_dir.join("best.core");
        fs::copy(&best_path, &best_copy)?;
        artifacts.push(best_copy);
    }

    let manifest = out_dir.join("manifest.tsv");
    let mut inputs: Vec<(&str, &Path)> = vec![
        ("train_corpus", train_path.as_path()),
        ("alignment_table", table_path.as_path()),
    ];
    let valid_path = PathBuf::from(cfg.text("valid_corpus"));
    if valid_corpus.is_some() {
        inputs.push(("valid_corpus", valid_path.as_path()));
    }
    write_manifest(&manifest, cfg, &inputs)?;
    artifacts.push(manifest);
    Ok(artifacts)
}

/// Load the model plus the vocabularies and alignment table named in the
/// config, verifying any content hashes recorded in the checkpoint.
pub fn load_generation_stack(cfg: &Config) -> Result<(CoreModel, VocabSet, AlignmentTable)> {
    let ckpt_path = PathBuf::from(cfg.required_path("checkpoint")?);
    let src_vocab_path = PathBuf::from(cfg.required_path("src_vocab")?);
    let tgt_vocab_path = PathBuf::from(cfg.required_path("tgt_vocab")?);
    let frequent_path = PathBuf::from(cfg.required_path("frequent_vocab")?);
    let table_path = PathBuf::from(cfg.required_path("alignment_table")?);

    let (entries, snapshot_text) = checkpoint::load_checkpoint(&ckpt_path)?;
    let (dims, params) = checkpoint::model_from_entries(&entries)?;
    let snapshot = Config::from_text(&snapshot_text)
        .map_err(|e| Error::Checkpoint(format!("bad config snapshot: {e}")))?;
    for (key, path) in [
        ("src_vocab_hash", &src_vocab_path),
        ("tgt_vocab_hash", &tgt_vocab_path),
        ("table_hash", &table_path),
    ] {
        let recorded = snapshot.text(key);
        if !recorded.is_empty() && recorded != file_hash(path)? {
            return Err(Error::Checkpoint(format!(
                "{key} mismatch: checkpoint was trained against a different {}",
                path.display()
            )));
        }
    }

    let vocabs = VocabSet {
        source: Vocabulary::load(&src_vocab_path)?,
        target: Vocabulary::load(&tgt_vocab_path)?,
        frequent: Vocabulary::load(&frequent_path)?,
    };
    if vocabs.source.len() != dims.source_vocab || vocabs.target.len() != dims.target_vocab {
        return Err(Error::Checkpoint(format!(
            "vocabulary sizes ({}, {}) do not match checkpoint dimensions ({}, {})",
            vocabs.source.len(),
            vocabs.target.len(),
            dims.source_vocab,
            dims.target_vocab
        )));
    }
    let table = AlignmentTable::load(&table_path)?;
    Ok((CoreModel::from_params(dims, params), vocabs, table))
}

fn run_generate(cfg: &Config) -> Result<Vec<PathBuf>> {
    let sources_path = PathBuf::from(cfg.required_path("sources_file")?);
    let out_path = PathBuf::from(cfg.required_path("generate_output")?);
    let sources = read_sentences(&sources_path)?;
    let max_len = cfg.uint("max_decode_len") as usize;
    let mode = cfg.text("decode_mode").to_string();

    let mut outputs: Vec<Vec<String>> = Vec::with_capacity(sources.len());
    let mut traces: Vec<String> = Vec::with_capacity(sources.len());
    let mut inputs: Vec<(String, PathBuf)> = vec![("sources_file".into(), sources_path.clone())];

    match mode.as_str() {
        "lead" => {
            let k = cfg.uint("lead_k") as usize;
            for src in &sources {
                outputs.push(lead_baseline(src, k));
                traces.push(String::new());
            }
        }
        "greedy" | "beam" => {
            let (model, vocabs, table) = load_generation_stack(cfg)?;
            for key in [
                "checkpoint",
                "src_vocab",
                "tgt_vocab",
                "frequent_vocab",
                "alignment_table",
            ] {
                inputs.push((key.to_string(), PathBuf::from(cfg.text(key))));
            }
            let width = cfg.uint("beam_width") as usize;
            for src in &sources {
                if src.is_empty() {
                    return Err(Error::Input("generate: empty source line".into()));
                }
                let scorer = ModelScorer::new(&model, &vocabs, &table, src)?;
                let hyp: Hypothesis = match mode.as_str() {
                    "greedy" => greedy_decode(&scorer, max_len)?,
                    _ => beam_decode(&scorer, width, max_len)?,
                };
                traces.push(hyp.trace_tsv());
                outputs.push(hyp.tokens);
            }
        }
        other => {
            return Err(Error::Config(format!(
                "decode_mode must be greedy|beam|lead, got '{other}'"
            )));
        }
    }

    write_sentences(&out_path, &outputs)?;
    let mut artifacts = vec![out_path.clone()];
    if !cfg.text("trace_output").is_empty() {
        let trace_path = PathBuf::from(cfg.text("trace_output"));
        fs::write(&trace_path, traces.join("\n"))?;
        artifacts.push(trace_path);
    }
    let manifest = manifest_sibling(&out_path);
    let input_refs: Vec<(&str, &Path)> = inputs
        .iter()
        .map(|(k, p)| (k.as_str(), p.as_path()))
        .collect();
    write_manifest(&manifest, cfg, &input_refs)?;
    artifacts.push(manifest);
    Ok(artifacts)
}

fn run_evaluate(cfg: &Config) -> Result<Vec<PathBuf>> {
    let outputs_path = PathBuf::from(cfg.required_path("outputs_file")?);
    let references_path = PathBuf::from(cfg.required_path("references_file")?);
    let sources_path = PathBuf::from(cfg.required_path("sources_file")?);
    let report_path = PathBuf::from(cfg.required_path("eval_report")?);
    let lm_path = match cfg.text("lm_corpus") {
        "" => PathBuf::from(cfg.required_path("train_corpus").map_err(|_| {
            Error::Config("evaluate needs lm_corpus (or train_corpus) for perplexity".into())
        })?),
        p => PathBuf::from(p),
    };

    let outputs = read_sentences(&outputs_path)?;
    let references = read_sentences(&references_path)?;
    let sources = read_sentences(&sources_path)?;
    let lm_corpus = ParallelCorpus::load(&lm_path)?;
    let lm_targets: Vec<Vec<String>> = lm_corpus.targets().cloned().collect();
    let lm = train_lm(&lm_targets)?;
    let report = evaluate_outputs(&outputs, &references, &sources, &lm)?;
    fs::write(&report_path, report.to_tsv())?;

    let manifest = manifest_sibling(&report_path);
    write_manifest(
        &manifest,
        cfg,
        &[
            ("outputs_file", &outputs_path),
            ("references_file", &references_path),
            ("sources_file", &sources_path),
            ("lm_corpus", &lm_path),
        ],
    )?;
    Ok(vec![report_path, manifest])
}
