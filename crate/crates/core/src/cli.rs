//! Command-line front end: one subcommand per pipeline stage.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::config::{Group, RunConfig, KEYS};
use crate::corpus::{load_monolingual_with, load_parallel_with, read_lines, LanguageId, SentenceStore};
use crate::error::{Result, XlmError};
use crate::evaluation::{
    accuracy, alignment_metrics, finetune_classifier, load_similarity_gold, perplexity, word_similarity,
    LabeledSet, PplObjective, TranslationDictionary,
};
use crate::model::ModelState;
use crate::rng::Rng;
use crate::sampling::sample_sentences;
use crate::subword::{count_subwords, learn_bpe, BpeCodec, MergeTable, TokenId, Vocabulary};
use crate::synthetic::make_synthetic;
use crate::training::{load_checkpoint, save_checkpoint, Checkpoint, ObjectiveSet, TrainData, Trainer};

struct CommandSpec {
    name: &'static str,
    about: &'static str,
    groups: &'static [Group],
}

const COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "learn-bpe",
        about: "Learn BPE merges from a smoothed multilingual sample of the training corpora",
        groups: &[Group::General, Group::Bpe, Group::Data],
    },
    CommandSpec {
        name: "apply-bpe",
        about: "Segment a text file with learned merges",
        groups: &[Group::General],
    },
    CommandSpec {
        name: "build-vocab",
        about: "Build the shared vocabulary from segmented training corpora",
        groups: &[Group::General, Group::Bpe, Group::Data],
    },
    CommandSpec {
        name: "train",
        about: "Pretrain with clm, mlm or mlm+tlm",
        groups: &[Group::General, Group::Data, Group::Model, Group::Plan],
    },
    CommandSpec {
        name: "eval-ppl",
        about: "Held-out perplexity per language",
        groups: &[Group::General, Group::Data, Group::Eval],
    },
    CommandSpec {
        name: "eval-align",
        about: "Embedding alignment of dictionary translation pairs",
        groups: &[Group::General, Group::Eval],
    },
    CommandSpec {
        name: "eval-wordsim",
        about: "Correlation of embedding cosines with word-similarity gold scores",
        groups: &[Group::General, Group::Eval],
    },
    CommandSpec {
        name: "finetune-classify",
        about: "Fine-tune a classifier on one language and score test sets",
        groups: &[Group::General, Group::Finetune],
    },
    CommandSpec {
        name: "export-embeddings",
        about: "Write the token embedding table as text",
        groups: &[Group::General],
    },
    CommandSpec {
        name: "make-synthetic",
        about: "Generate synthetic cipher-language corpora",
        groups: &[Group::General, Group::Synthetic],
    },
];

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let subs = COMMANDS.iter().map(|c| {
        let mut sub = Command::new(c.name).about(c.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("flat key = value file; flags take precedence"),
        );
        for k in KEYS.iter().filter(|k| c.groups.contains(&k.group)) {
            let mut arg = Arg::new(k.key).long(flag(k.key)).value_name("VALUE").help(k.help);
            if k.key.contains('_') {
                arg = arg.alias(k.key);
            }
            sub = sub.arg(arg);
        }
        sub
    });
    Command::new("xlm")
        .about("Cross-lingual language-model pretraining toolkit")
        .subcommand_required(true)
        .subcommands(subs)
}

fn build_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(Path::new(path))?;
    }
    let cwd = std::env::current_dir().map_err(|e| XlmError::io(".", e))?;
    for k in KEYS {
        if let Ok(Some(v)) = m.try_get_one::<String>(k.key) {
            cfg.set(k.key, v, &cwd)?;
        }
    }
    Ok(cfg)
}

/// Parse `args` (program name first) and run the command, writing results
/// to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command()
        .try_get_matches_from(args)
        .map_err(|e| XlmError::Usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cfg = build_config(sub)?;
    match name {
        "learn-bpe" => learn_bpe_cmd(&cfg, out),
        "apply-bpe" => apply_bpe_cmd(&cfg, out),
        "build-vocab" => build_vocab_cmd(&cfg, out),
        "train" => train_cmd(&cfg, out),
        "eval-ppl" => eval_ppl_cmd(&cfg, out),
        "eval-align" => eval_align_cmd(&cfg, out),
        "eval-wordsim" => eval_wordsim_cmd(&cfg, out),
        "finetune-classify" => finetune_cmd(&cfg, out),
        "export-embeddings" => export_cmd(&cfg, out),
        "make-synthetic" => make_synthetic_cmd(&cfg, out),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

/// One-line error report: `error kind=<kind> msg=<quoted message>`.
pub fn error_line(e: &XlmError) -> String {
    let msg = e.to_string();
    let msg = msg.strip_prefix("error: ").unwrap_or(&msg).trim_end();
    let first = msg.lines().next().unwrap_or("");
    format!("error kind={} msg={first:?}", e.kind())
}

/// Process entry point; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let help = command().try_get_matches_from(&args).err().filter(|e| {
        matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
        )
    });
    if let Some(h) = help {
        let _ = h.print();
        return if h.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(args, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("{}", error_line(&e));
            if e.kind() == "usage" {
                2
            } else {
                1
            }
        }
    }
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| XlmError::io("<stdout>", e))
}

/// A required input file that must exist.
fn input_file(cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    let p = cfg.require_path(key)?;
    check_exists(&p)?;
    Ok(p)
}

fn check_exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(XlmError::io(p, std::io::ErrorKind::NotFound.into()))
    }
}

fn output_file(cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    let p = cfg.require_path(key)?;
    if let Some(dir) = p.parent() {
        std::fs::create_dir_all(dir).map_err(|e| XlmError::io(dir, e))?;
    }
    Ok(p)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| XlmError::io(path, e))
}

fn named_inputs(cfg: &RunConfig, key: &str) -> Result<Vec<(String, PathBuf)>> {
    let list = cfg.named_paths(key);
    for (_, p) in &list {
        check_exists(p)?;
    }
    Ok(list)
}

fn load_codes(cfg: &RunConfig) -> Result<Option<MergeTable>> {
    match cfg.path("codes") {
        Some(p) => {
            check_exists(&p)?;
            MergeTable::load(&p).map(Some)
        }
        None => Ok(None),
    }
}

/// Sentence encoder: BPE when codes are configured, whole words otherwise.
struct TextEncoder {
    vocab: Vocabulary,
    merges: Option<MergeTable>,
}

impl TextEncoder {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let merges = load_codes(cfg)?;
        let vocab = Vocabulary::load(&input_file(cfg, "vocab")?)?;
        Ok(TextEncoder { vocab, merges })
    }

    fn encoder(&self) -> impl FnMut(&str) -> Vec<TokenId> + '_ {
        let mut codec = self.merges.as_ref().map(BpeCodec::new);
        move |s| match codec.as_mut() {
            Some(c) => c.encode(s, &self.vocab),
            None => self.vocab.encode_words(s),
        }
    }

    fn store(&self, path: &Path, language: LanguageId) -> Result<SentenceStore> {
        load_monolingual_with(path, language, self.encoder())
    }

    fn labeled(&self, path: &Path) -> Result<LabeledSet> {
        LabeledSet::load(path, self.encoder())
    }
}

fn segment_lines(lines: &[String], merges: Option<&MergeTable>) -> Vec<Vec<String>> {
    let mut codec = merges.map(BpeCodec::new);
    lines
        .iter()
        .map(|l| match codec.as_mut() {
            Some(c) => c.segment(l),
            None => l.split_whitespace().map(str::to_string).collect(),
        })
        .collect()
}

fn learn_bpe_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let corpora = named_inputs(cfg, "train")?;
    if corpora.is_empty() {
        return Err(XlmError::Config("train is required".into()));
    }
    let codes = output_file(cfg, "codes")?;
    let texts = corpora
        .iter()
        .map(|(_, p)| Ok(read_lines(p)?.into_iter().filter(|l| !l.trim().is_empty()).collect()))
        .collect::<Result<Vec<Vec<String>>>>()?;
    let mut rng = Rng::seed_from_u64(cfg.seed()?);
    let sample = sample_sentences(&texts, cfg.get("bpe_sentences")?, cfg.get("alpha_bpe")?, &mut rng)?;
    let merges = learn_bpe(&sample, cfg.get("num_merges")?)?;
    merges.save(&codes)?;
    emit(out, &format!("sampled={} merges={}", sample.len(), merges.len()))
}

fn apply_bpe_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let lines = read_lines(&input_file(cfg, "input")?)?;
    let merges = load_codes(cfg)?;
    let mut text = String::new();
    for seg in segment_lines(&lines, merges.as_ref()) {
        text.push_str(&seg.join(" "));
        text.push('\n');
    }
    match cfg.path("output") {
        Some(_) => write_text(&output_file(cfg, "output")?, &text),
        None => out.write_all(text.as_bytes()).map_err(|e| XlmError::io("<stdout>", e)),
    }
}

fn build_vocab_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let corpora = named_inputs(cfg, "train")?;
    if corpora.is_empty() {
        return Err(XlmError::Config("train is required".into()));
    }
    let merges = load_codes(cfg)?;
    let vocab_path = output_file(cfg, "vocab")?;
    let mut segmented = Vec::new();
    for (_, p) in &corpora {
        segmented.extend(segment_lines(&read_lines(p)?, merges.as_ref()));
    }
    let counts = count_subwords(&segmented);
    let vocab = Vocabulary::build(&counts, cfg.get("min_count")?)?;
    vocab.save(&vocab_path)?;
    emit(out, &format!("vocab_size={}", vocab.len()))
}

fn language_id(names: &[String], name: &str) -> Result<LanguageId> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| XlmError::Config(format!("language {name:?} is not one of {names:?}")))
}

fn train_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut plan = cfg.train_plan()?;
    let parallel = cfg.parallel_specs("parallel");
    if plan.objectives == ObjectiveSet::MlmTlm && parallel.is_empty() {
        return Err(XlmError::Config("mlm+tlm requires parallel data".into()));
    }
    let train = named_inputs(cfg, "train")?;
    if train.is_empty() {
        return Err(XlmError::Config("train is required".into()));
    }
    let valid = named_inputs(cfg, "valid")?;
    for p in &parallel {
        check_exists(&p.source_path)?;
        check_exists(&p.target_path)?;
    }
    let resume = cfg.path("resume");
    if let Some(r) = &resume {
        check_exists(r)?;
    }
    let ck_path = output_file(cfg, "checkpoint")?;
    let best_path = cfg.path("best").map(|_| output_file(cfg, "best")).transpose()?;
    let log_path = cfg.path("log").map(|_| output_file(cfg, "log")).transpose()?;

    let enc = TextEncoder::load(cfg)?;
    let names: Vec<String> = train.iter().map(|(n, _)| n.clone()).collect();
    let mut data = TrainData {
        names: names.clone(),
        train: Vec::new(),
        valid: vec![None; names.len()],
        parallel: Vec::new(),
    };
    for (i, (_, p)) in train.iter().enumerate() {
        data.train.push(enc.store(p, i)?);
    }
    for (n, p) in &valid {
        let id = language_id(&names, n)?;
        data.valid[id] = Some(enc.store(p, id)?);
    }
    for p in &parallel {
        let (s, t) = (language_id(&names, &p.source)?, language_id(&names, &p.target)?);
        let load = load_parallel_with(&p.source_path, &p.target_path, s, t, enc.encoder())?;
        if load.dropped > 0 {
            emit(out, &format!("parallel={}-{} dropped_pairs={}", p.source, p.target, load.dropped))?;
        }
        data.parallel.push(load.store);
    }

    let mut trainer = match &resume {
        Some(r) => {
            let ck = load_checkpoint(r)?;
            if ck.names != names {
                return Err(XlmError::Checkpoint(format!(
                    "checkpoint languages {:?} differ from {names:?}",
                    ck.names
                )));
            }
            let max_steps = plan.max_steps;
            let mut t = Trainer::resume(ck, &data)?;
            t.plan.max_steps = max_steps;
            t
        }
        None => {
            let config = cfg.model_config(enc.vocab.len(), names.len())?;
            Trainer::new(plan.clone(), config, &data)?
        }
    };
    plan = trainer.plan.clone();
    for (p, &n) in parallel.iter().zip(trainer.skipped_pairs()) {
        if n > 0 {
            emit(out, &format!("parallel={}-{} skipped_long_pairs={n}", p.source, p.target))?;
        }
    }
    let mut log = String::new();
    let mut write_err = None;
    let report = trainer.run_with(&mut |line| {
        log.push_str(line);
        log.push('\n');
        if let Err(e) = emit(out, line) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    trainer.save(&ck_path)?;
    if let Some(p) = &best_path {
        let best = Checkpoint::fresh(trainer.best_model().clone(), plan, names);
        save_checkpoint(&best, p)?;
    }
    if let Some(p) = &log_path {
        write_text(p, &log)?;
    }
    if let Some(m) = &report.diverged {
        return Err(XlmError::NonFinite(format!("training diverged at step {}: {m}", report.steps)));
    }
    let best = report.best_ppl.map_or("none".to_string(), |p| format!("{p:.4}"));
    let last = report.losses.last().map_or("none".to_string(), |l| format!("{l:.4}"));
    emit(
        out,
        &format!(
            "steps={} last_loss={last} best_ppl={best} stopped_early={}",
            report.steps, report.stopped_early
        ),
    )
}

fn load_model(cfg: &RunConfig) -> Result<Checkpoint> {
    load_checkpoint(&input_file(cfg, "checkpoint")?)
}

fn eval_ppl_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ck = load_model(cfg)?;
    let valid = named_inputs(cfg, "valid")?;
    if valid.is_empty() {
        return Err(XlmError::Config("valid is required".into()));
    }
    let enc = TextEncoder::load(cfg)?;
    let objective = match cfg.raw("ppl_objective") {
        "clm" => PplObjective::Clm,
        "mlm" => PplObjective::Mlm,
        "auto" if ck.plan.objectives == ObjectiveSet::Clm => PplObjective::Clm,
        "auto" => PplObjective::Mlm,
        o => return Err(XlmError::Config(format!("ppl_objective must be clm, mlm or auto, got {o:?}"))),
    };
    let seed = cfg.seed()?;
    let mut sum = 0.0;
    for (name, path) in &valid {
        let id = language_id(&ck.names, name)?;
        let store = enc.store(path, id)?;
        let ppl = perplexity(&ck.model, &store, objective, ck.plan.stream_len, seed)?;
        sum += ppl;
        emit(out, &format!("lang={name} ppl={ppl:.4}"))?;
    }
    emit(out, &format!("avg_ppl={:.4}", sum / valid.len() as f64))
}

fn eval_align_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ck = load_model(cfg)?;
    let vocab = Vocabulary::load(&input_file(cfg, "vocab")?)?;
    let dict = TranslationDictionary::load(&input_file(cfg, "dict")?)?;
    let r = alignment_metrics(&ck.model, &vocab, &dict)?;
    emit(
        out,
        &format!(
            "mean_cosine={:.4} mean_l2={:.4} used={} skipped={}",
            r.mean_cosine, r.mean_l2, r.used, r.skipped
        ),
    )
}

fn eval_wordsim_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ck = load_model(cfg)?;
    let vocab = Vocabulary::load(&input_file(cfg, "vocab")?)?;
    let gold = load_similarity_gold(&input_file(cfg, "gold")?)?;
    let r = word_similarity(&ck.model, &vocab, &gold)?;
    emit(out, &format!("pearson={:.4} used={} skipped={}", r.pearson, r.used, r.skipped))
}

fn finetune_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ck = load_model(cfg)?;
    let train = named_inputs(cfg, "cls_train")?;
    let [(train_lang, train_path)] = train.as_slice() else {
        return Err(XlmError::Config("cls_train must name exactly one lang=path".into()));
    };
    let tests = named_inputs(cfg, "cls_test")?;
    let save_to = cfg.path("output").map(|_| output_file(cfg, "output")).transpose()?;
    let enc = TextEncoder::load(cfg)?;
    let plan = cfg.finetune_plan()?;
    let train_set = enc.labeled(train_path)?;
    let train_id = language_id(&ck.names, train_lang)?;
    let mut model: ModelState<f32> = ck.model.clone();
    model.classes = 0;
    model.params.truncate(model.config.param_shapes(0).len());
    let losses = finetune_classifier(&mut model, &train_set, train_id, &plan)?;
    let last = losses.last().copied().unwrap_or(f32::NAN);
    emit(out, &format!("train_lang={train_lang} steps={} last_loss={last:.4}", losses.len()))?;
    for (name, path) in &tests {
        let id = language_id(&ck.names, name)?;
        let set = enc.labeled(path)?;
        if set.label_set().iter().any(|&l| l >= model.classes) {
            return Err(XlmError::InvalidArgument(format!("{name} test set has labels the head lacks")));
        }
        let acc = accuracy(&model, &set, id, plan.max_len)?;
        emit(out, &format!("lang={name} accuracy={acc:.4}"))?;
    }
    if let Some(p) = save_to {
        save_checkpoint(&Checkpoint::fresh(model, ck.plan, ck.names), &p)?;
    }
    Ok(())
}

fn export_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ck = load_model(cfg)?;
    let vocab = Vocabulary::load(&input_file(cfg, "vocab")?)?;
    let path = output_file(cfg, "output")?;
    let table = ck.model.token_table();
    let (rows, dim) = (table.shape()[0], table.shape()[1]);
    if vocab.len() != rows {
        return Err(XlmError::Shape(format!(
            "vocabulary has {} entries, embedding table {rows}",
            vocab.len()
        )));
    }
    let mut text = String::new();
    for (token, row) in vocab.tokens().iter().zip(table.data().chunks(dim)) {
        text.push_str(token);
        for v in row {
            text.push(' ');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    write_text(&path, &text)?;
    emit(out, &format!("tokens={rows} dim={dim}"))
}

fn make_synthetic_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let syn = cfg.synthetic_config()?;
    let dir = cfg.require_path("output")?;
    let corpus = make_synthetic(&syn)?;
    let files = corpus.write(&dir)?;
    emit(out, &format!("dir={} files={}", dir.display(), files.join(",")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_ok(args: &[&str]) -> String {
        let mut out = Vec::new();
        run(std::iter::once("xlm").chain(args.iter().copied()), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    fn run_err(args: &[&str]) -> XlmError {
        let mut out = Vec::new();
        run(std::iter::once("xlm").chain(args.iter().copied()), &mut out).unwrap_err()
    }

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn every_command_takes_config_and_seed() {
        let cmd = command();
        for c in COMMANDS {
            let sub = cmd.find_subcommand(c.name).unwrap();
            let longs: Vec<_> = sub.get_arguments().filter_map(|a| a.get_long()).collect();
            assert!(longs.contains(&"config") && longs.contains(&"seed"), "{}", c.name);
        }
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        let e = run_err(&["frobnicate"]);
        assert_eq!(e.kind(), "usage");
        let line = error_line(&e);
        assert!(line.starts_with("error kind=usage msg=\""), "{line}");
        assert!(!line.contains('\n'));
    }

    #[test]
    fn tlm_without_parallel_data_is_refused() {
        let e = run_err(&["train", "--objective", "mlm+tlm", "--train", "a=x.txt"]);
        assert_eq!(e.kind(), "config");
        assert!(e.to_string().contains("mlm+tlm requires parallel data"));
    }

    #[test]
    fn missing_input_is_an_io_error() {
        let e = run_err(&["apply-bpe", "--input", "/definitely/not/here.txt"]);
        assert_eq!(e.kind(), "io");
    }

    #[test]
    fn unknown_config_key_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("c.conf");
        std::fs::write(&conf, "colour = blue\n").unwrap();
        let e = run_err(&["make-synthetic", "--config", conf.to_str().unwrap()]);
        assert_eq!(e.kind(), "config");
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("c.conf");
        std::fs::write(&conf, "num_merges = 7\nseed = 3\n").unwrap();
        let m = command()
            .try_get_matches_from(["xlm", "learn-bpe", "--config", conf.to_str().unwrap(), "--seed", "5"])
            .unwrap();
        let cfg = build_config(m.subcommand().unwrap().1).unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 5);
        assert_eq!(cfg.get::<u64>("num_merges").unwrap(), 7);
    }

    #[test]
    fn apply_bpe_without_codes_keeps_words() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "hello  world\n").unwrap();
        assert_eq!(run_ok(&["apply-bpe", "--input", input.to_str().unwrap()]), "hello world\n");
    }

    #[test]
    fn underscore_spelling_is_accepted() {
        let m = command()
            .try_get_matches_from(["xlm", "learn-bpe", "--num_merges", "3"])
            .unwrap();
        let cfg = build_config(m.subcommand().unwrap().1).unwrap();
        assert_eq!(cfg.get::<u64>("num_merges").unwrap(), 3);
    }
}
