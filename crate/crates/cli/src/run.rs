//! Model-facing subcommands: training runs and checkpoint-driven
//! generation.

use std::fs;
use std::path::{Path, PathBuf};

use cadenza_midi::corpus::{list_token_files, read_tokens_file};
use cadenza_midi::encode::{decode, DecodeOptions as TimingOptions};
use cadenza_midi::smf::write_midi;
use cadenza_midi::vocab::{parse_clamp_value, Attribute, AttributeVocab, NoteTokens, K};
use cadenza_model::config::{dump_toml, parse_toml, ConfigFile};
use cadenza_model::diffusion::{generate_sequence, CommitMode, DecodeOptions, UnmaskRule};
use cadenza_model::net::SeqModel;
use cadenza_model::trainer::{run_training, RunOptions, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{echo, CmdResult, Failure};

#[derive(clap::Args)]
pub struct TrainArgs {
    /// TOML file with optional [model] and [train] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of .tokens files.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints and the step log.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides train.max_steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Overrides train.batch_size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop once the rolling mean masked cross-entropy drops below this.
    #[arg(long)]
    pub early_stop_ce: Option<f64>,
    /// Window for the early-stop rolling mean (default 25 steps).
    #[arg(long)]
    pub early_stop_window: Option<usize>,
}

/// Where a resolved value came from: a flag beats the config file, which
/// beats the built-in default.
fn source(raw: &Option<toml::Value>, table: &str, key: &str, flagged: bool) -> &'static str {
    if flagged {
        return "flag";
    }
    let in_file = raw
        .as_ref()
        .and_then(|v| v.get(table))
        .and_then(|t| t.get(key))
        .is_some();
    if in_file {
        "config"
    } else {
        "default"
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<(ConfigFile, Option<toml::Value>), Failure> {
    match path {
        None => Ok((ConfigFile::default(), None)),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
            let cfg = parse_toml(&text).map_err(Failure::usage)?;
            let raw: toml::Value = text.parse().expect("validated TOML reparses");
            Ok((cfg, Some(raw)))
        }
    }
}

/// Read every token sequence under `dir` as model index rows, checking
/// each index against the model's content sizes.
fn token_corpus(dir: &Path, sizes: &[usize]) -> Result<Vec<Vec<Vec<usize>>>, Failure> {
    if sizes.len() != K {
        return Err(Failure::usage(format!(
            "model has {} attributes but token files carry {K}",
            sizes.len()
        )));
    }
    let files = list_token_files(dir).map_err(Failure::data)?;
    if files.is_empty() {
        return Err(Failure::data(format!("no token files in {}", dir.display())));
    }
    let mut corpus = Vec::with_capacity(files.len());
    for path in &files {
        let notes = read_tokens_file(path)
            .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let mut seq = Vec::with_capacity(notes.len());
        for (pos, note) in notes.iter().enumerate() {
            for (k, (&idx, &size)) in note.indices.iter().zip(sizes).enumerate() {
                if idx >= size {
                    return Err(Failure::data(format!(
                        "{}: note {pos}: {} index {idx} outside content range {size}",
                        path.display(),
                        Attribute::ALL[k].name()
                    )));
                }
            }
            seq.push(note.indices.to_vec());
        }
        corpus.push(seq);
    }
    Ok(corpus)
}

pub fn train(args: &TrainArgs, dump_only: bool) -> CmdResult {
    let (mut cfg, raw) = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(steps) = args.max_steps {
        cfg.train.max_steps = steps;
    }
    if let Some(batch) = args.batch_size {
        cfg.train.batch_size = batch;
    }
    cfg.validate().map_err(Failure::usage)?;

    match &args.config {
        Some(p) => echo("config", p.display(), "flag"),
        None => echo("config", "built-in defaults", "default"),
    }
    echo("data", args.data.display(), "flag");
    echo("out", args.out.display(), "flag");
    echo("train.seed", cfg.train.seed, source(&raw, "train", "seed", args.seed.is_some()));
    echo(
        "train.max_steps",
        cfg.train.max_steps,
        source(&raw, "train", "max_steps", args.max_steps.is_some()),
    );
    echo(
        "train.batch_size",
        cfg.train.batch_size,
        source(&raw, "train", "batch_size", args.batch_size.is_some()),
    );
    println!("resolved configuration:");
    print!("{}", dump_toml(&cfg));
    if dump_only {
        return Ok(());
    }

    let corpus = token_corpus(&args.data, &cfg.model.attr_sizes)?;
    if corpus.len() < cfg.train.batch_size {
        return Err(Failure::data(format!(
            "corpus has {} sequences but the batch size is {}",
            corpus.len(),
            cfg.train.batch_size
        )));
    }
    let model =
        SeqModel::new(cfg.model.clone(), cfg.train.seed).map_err(Failure::usage)?;
    let mut trainer = Trainer::new(model, cfg.train.clone()).map_err(Failure::usage)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let csv = args.out.join("train_log.csv");
    let opts = RunOptions {
        csv_path: Some(&csv),
        checkpoint_dir: Some(&args.out),
        early_stop_ce: args.early_stop_ce,
        early_stop_window: args.early_stop_window.unwrap_or(0),
    };
    let summary = run_training(&mut trainer, &corpus, &opts).map_err(Failure::runtime)?;

    if summary.truncated_sequences > 0 {
        println!(
            "note: {} sequences truncated to m_max = {}",
            summary.truncated_sequences, cfg.model.m_max
        );
    }
    println!(
        "trained {} steps ({})",
        summary.steps_run,
        if summary.stopped_early { "stopped early" } else { "full run" }
    );
    println!("rolling mean masked ce = {:.6} nats", summary.rolling_mean_masked_ce);
    println!("checkpoint: {}", args.out.join("last.json").display());
    println!("log: {}", csv.display());
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    /// Most probable content token; deterministic.
    Argmax,
    /// Categorical draw from the predicted distribution.
    Sample,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RuleArg {
    /// Commit the highest-probability masked positions first.
    Confidence,
    /// Commit uniformly random masked positions (reference sampler).
    Uniform,
}

#[derive(clap::Args)]
pub struct GenerateArgs {
    /// Checkpoint: a run directory holding last.json/last.bin, or a
    /// manifest .json whose .bin sits beside it.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Notes per piece; 0 still writes a valid empty MIDI file.
    #[arg(long)]
    pub notes: usize,
    /// Denoising steps per note (default 8).
    #[arg(long)]
    pub steps: Option<usize>,
    /// How committed tokens are picked (default argmax).
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// How positions to commit are chosen (default confidence).
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    /// Fix one attribute for every note, e.g. `--clamp tempo=120`;
    /// repeatable across attributes.
    #[arg(long)]
    pub clamp: Vec<String>,
    /// Sampler seed; piece i uses seed + i (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of pieces; above one, file names gain numeric suffixes.
    #[arg(long)]
    pub count: Option<usize>,
    /// Output MIDI path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Locate the manifest/binary pair for a checkpoint argument.
fn checkpoint_paths(ckpt: &Path) -> Result<(PathBuf, PathBuf), Failure> {
    let manifest = if ckpt.is_dir() { ckpt.join("last.json") } else { ckpt.to_path_buf() };
    let bin = manifest.with_extension("bin");
    for path in [&manifest, &bin] {
        if !path.is_file() {
            return Err(Failure::data(format!("missing checkpoint file {}", path.display())));
        }
    }
    Ok((bin, manifest))
}

/// Parse repeated `attr=value` clamp specs into per-attribute indices.
fn parse_clamps(
    specs: &[String],
    vocab: &AttributeVocab,
) -> Result<Vec<Option<usize>>, Failure> {
    let mut clamps = vec![None; K];
    for spec in specs {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("clamp '{spec}' is not attr=value")))?;
        let attr = Attribute::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| {
                Failure::usage(format!(
                    "unknown attribute '{}' (expected type, beat, chord, tempo, instrument, \
                     pitch, duration, or velocity)",
                    name.trim()
                ))
            })?;
        if clamps[attr.index()].is_some() {
            return Err(Failure::usage(format!("attribute {} clamped twice", attr.name())));
        }
        let idx = parse_clamp_value(attr, value, vocab).map_err(Failure::usage)?;
        clamps[attr.index()] = Some(idx);
    }
    Ok(clamps)
}

/// Output path for piece `i`; single pieces keep the name as given.
fn piece_path(out: &Path, i: usize, count: usize) -> PathBuf {
    if count == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("piece");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("mid");
    out.with_file_name(format!("{stem}_{i:03}.{ext}"))
}

fn opt_source<T>(value: &Option<T>) -> &'static str {
    if value.is_some() {
        "flag"
    } else {
        "default"
    }
}

pub fn generate(args: &GenerateArgs, dump_only: bool) -> CmdResult {
    let (bin, manifest) = checkpoint_paths(&args.ckpt)?;
    let trainer = Trainer::load_checkpoint(&bin, &manifest).map_err(Failure::data)?;
    let stored = ConfigFile {
        model: trainer.model.config.clone(),
        train: trainer.train.clone(),
    };
    let trained_steps = trainer.completed_steps();
    let model = trainer.model;

    let vocab = AttributeVocab::canonical();
    if model.config.attr_sizes != vocab.content_sizes() {
        return Err(Failure::data(
            "checkpoint attribute sizes do not match the tokenizer vocabulary",
        ));
    }

    let steps = args.steps.unwrap_or(8);
    let mode = args.mode.unwrap_or(ModeArg::Argmax);
    let rule = args.rule.unwrap_or(RuleArg::Confidence);
    let seed = args.seed.unwrap_or(0);
    let count = args.count.unwrap_or(1);

    echo("ckpt", manifest.display(), "flag");
    echo("out", args.out.display(), "flag");
    echo("notes", args.notes, "flag");
    echo("steps", steps, opt_source(&args.steps));
    echo(
        "mode",
        match mode {
            ModeArg::Argmax => "argmax",
            ModeArg::Sample => "sample",
        },
        opt_source(&args.mode),
    );
    echo(
        "rule",
        match rule {
            RuleArg::Confidence => "confidence",
            RuleArg::Uniform => "uniform",
        },
        opt_source(&args.rule),
    );
    echo("seed", seed, opt_source(&args.seed));
    echo("count", count, opt_source(&args.count));
    println!("checkpoint trained steps = {trained_steps}");

    let clamps = parse_clamps(&args.clamp, &vocab)?;
    for (k, clamp) in clamps.iter().enumerate() {
        if let Some(idx) = clamp {
            let attr = Attribute::ALL[k];
            let symbol = vocab.table(attr).symbol(*idx).unwrap_or("?");
            echo(&format!("clamp.{}", attr.name()), format!("{symbol} (index {idx})"), "flag");
        }
    }
    println!("resolved configuration:");
    print!("{}", dump_toml(&stored));
    if dump_only {
        return Ok(());
    }

    if steps == 0 {
        return Err(Failure::usage("steps must be at least 1"));
    }
    if count == 0 {
        return Err(Failure::usage("count must be at least 1"));
    }
    if 1 + args.notes > model.config.m_max {
        return Err(Failure::usage(format!(
            "{} notes exceed the model's maximum length {} (anchor included)",
            args.notes, model.config.m_max
        )));
    }

    let opts = DecodeOptions {
        steps,
        mode: match mode {
            ModeArg::Argmax => CommitMode::Argmax,
            ModeArg::Sample => CommitMode::Sample,
        },
        rule: match rule {
            RuleArg::Confidence => UnmaskRule::Confidence,
            RuleArg::Uniform => UnmaskRule::UniformRandom,
        },
    };

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                Failure::runtime(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let (rows, stats) =
            generate_sequence(&model, &[], &[], args.notes, &opts, &clamps, &mut rng)
                .map_err(Failure::runtime)?;
        let mut notes = vec![NoteTokens::zero()];
        for row in &rows {
            let mut indices = [0usize; K];
            indices.copy_from_slice(row);
            notes.push(NoteTokens { indices });
        }
        let score = decode(&notes, &vocab, TimingOptions::default())
            .map_err(Failure::runtime)?;
        let path = piece_path(&args.out, i, count);
        fs::write(&path, write_midi(&score))
            .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
        println!(
            "wrote {} ({} notes, {} denoiser calls)",
            path.display(),
            rows.len(),
            stats.denoiser_calls
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_specs_parse_by_name_and_value() {
        let vocab = AttributeVocab::canonical();
        let clamps =
            parse_clamps(&["tempo=120".into(), "velocity=64".into()], &vocab).unwrap();
        assert!(clamps[Attribute::Tempo.index()].is_some());
        assert!(clamps[Attribute::Velocity.index()].is_some());
        assert!(clamps[Attribute::Pitch.index()].is_none());

        let drum = parse_clamps(&["instrument=Drums".into()], &vocab).unwrap();
        let expect = vocab.table(Attribute::Instrument).index_of("Drums");
        assert_eq!(drum[Attribute::Instrument.index()], expect);
        assert!(expect.is_some());
    }

    #[test]
    fn bad_clamp_specs_are_usage_errors() {
        let vocab = AttributeVocab::canonical();
        for spec in ["tempo", "loudness=3", "tempo=verdi"] {
            let err = parse_clamps(&[spec.to_string()], &vocab)
                .err()
                .expect("bad clamp must fail");
            assert!(matches!(err, Failure::Usage(_)), "{spec} gave {err:?}");
        }
        let twice = parse_clamps(&["tempo=120".into(), "tempo=90".into()], &vocab);
        assert!(matches!(twice.err().expect("duplicate"), Failure::Usage(_)));
    }

    #[test]
    fn piece_paths_gain_suffixes_only_for_multiple_pieces() {
        let out = PathBuf::from("runs/gen.mid");
        assert_eq!(piece_path(&out, 0, 1), out);
        assert_eq!(piece_path(&out, 2, 5), PathBuf::from("runs/gen_002.mid"));
    }

    #[test]
    fn flag_sources_track_presence() {
        assert_eq!(opt_source(&Some(1)), "flag");
        assert_eq!(opt_source::<usize>(&None), "default");
        let raw: Option<toml::Value> = Some("[train]\nseed = 3\n".parse().unwrap());
        assert_eq!(source(&raw, "train", "seed", false), "config");
        assert_eq!(source(&raw, "train", "max_steps", false), "default");
        assert_eq!(source(&raw, "train", "seed", true), "flag");
        assert_eq!(source(&None, "train", "seed", false), "default");
    }

    #[test]
    fn missing_checkpoints_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = checkpoint_paths(dir.path()).err().expect("no checkpoint must fail");
        assert!(matches!(err, Failure::Data(_)));
        assert!(err.message().contains("last.json"));
    }

    #[test]
    fn token_corpora_reject_out_of_range_indices() {
        let dir = tempfile::tempdir().unwrap();
        let mut note = NoteTokens::zero();
        note.indices[0] = 5;
        cadenza_midi::corpus::write_tokens_file(
            &dir.path().join("seq.tokens"),
            &[NoteTokens::zero(), note],
        )
        .unwrap();
        let sizes = AttributeVocab::canonical().content_sizes();
        let err = token_corpus(dir.path(), &sizes).err().expect("index 5 of 3 must fail");
        assert!(err.message().contains("type index 5"));
    }
}
