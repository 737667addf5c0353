//! Corpus-facing subcommands: tokenization, filtering, vocabulary export,
//! and round-trip verification.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use cadenza_eval::parallel_map;
use cadenza_midi::corpus::{
    csv_escape, keeps_score, list_midi_files, round_trip_score, write_tokens_file, RoundTrip,
};
use cadenza_midi::encode::encode;
use cadenza_midi::score::Score;
use cadenza_midi::smf::{parse_midi, ParseWarnings};
use cadenza_midi::vocab::{Attribute, AttributeVocab, NoteTokens};

use crate::{echo, CmdResult, Failure};

/// Load a vocabulary file, or fall back to the built-in tables.
pub(crate) fn load_vocab(path: &Option<PathBuf>) -> Result<AttributeVocab, Failure> {
    match path {
        None => Ok(AttributeVocab::canonical()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::data(format!("cannot read {}: {e}", p.display())))?;
            AttributeVocab::from_json(&text)
                .map_err(|e| Failure::data(format!("{}: {e}", p.display())))
        }
    }
}

pub(crate) fn echo_vocab(path: &Option<PathBuf>) {
    match path {
        Some(p) => echo("vocab", p.display(), "flag"),
        None => echo("vocab", "built-in", "default"),
    }
}

/// All MIDI files under `dir`; an empty corpus is a data error.
pub(crate) fn midi_corpus(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let files = list_midi_files(dir).map_err(Failure::data)?;
    if files.is_empty() {
        return Err(Failure::data(format!("no MIDI files in {}", dir.display())));
    }
    Ok(files)
}

/// Parse one MIDI file from disk.
pub(crate) fn parse_file(path: &Path) -> Result<(Score, ParseWarnings), Failure> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    parse_midi(&bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

pub(crate) fn print_warnings(path: &Path, warnings: &ParseWarnings) {
    if *warnings != ParseWarnings::default() {
        println!(
            "note: {}: {} orphan note-offs, {} unterminated notes",
            path.display(),
            warnings.orphan_note_offs,
            warnings.unterminated_notes
        );
    }
}

/// File stems, rejecting duplicates so output names stay unambiguous.
pub(crate) fn unique_stems(files: &[PathBuf]) -> Result<Vec<String>, Failure> {
    let mut seen = BTreeSet::new();
    let mut stems = Vec::with_capacity(files.len());
    for file in files {
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Failure::data(format!("non-UTF-8 file name {}", file.display())))?
            .to_string();
        if !seen.insert(stem.clone()) {
            return Err(Failure::data(format!("duplicate file stem '{stem}'")));
        }
        stems.push(stem);
    }
    Ok(stems)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

#[derive(clap::Args)]
pub struct TokenizeArgs {
    /// Directory of .mid/.midi input files.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory that receives one .tokens file per kept score.
    #[arg(long)]
    pub out: PathBuf,
    /// Vocabulary JSON; defaults to the built-in tables.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Optional per-file CSV report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

enum Tokenized {
    Kept { tokens: Vec<NoteTokens>, clipped: usize, warnings: ParseWarnings },
    DrumOnly,
}

pub fn tokenize(args: &TokenizeArgs, dump_only: bool) -> CmdResult {
    echo("data", args.data.display(), "flag");
    echo("out", args.out.display(), "flag");
    echo_vocab(&args.vocab);
    if dump_only {
        return Ok(());
    }
    let vocab = load_vocab(&args.vocab)?;
    let files = midi_corpus(&args.data)?;
    let stems = unique_stems(&files)?;

    let outcomes: Vec<Result<Tokenized, Failure>> = parallel_map(&files, |path| {
        let (score, warnings) = parse_file(path)?;
        if !keeps_score(&score) {
            return Ok(Tokenized::DrumOnly);
        }
        let (tokens, clip) = encode(&score, &vocab);
        Ok(Tokenized::Kept { tokens, clipped: clip.total(), warnings })
    });

    create_dir(&args.out)?;
    let mut kept = 0usize;
    let mut drum_only = 0usize;
    let mut clipped_total = 0usize;
    let mut report = String::from("file,status,notes,clipped\n");
    for ((path, stem), outcome) in files.iter().zip(&stems).zip(outcomes) {
        let name = csv_escape(&path.display().to_string());
        match outcome? {
            Tokenized::Kept { tokens, clipped, warnings } => {
                print_warnings(path, &warnings);
                let dest = args.out.join(format!("{stem}.tokens"));
                write_tokens_file(&dest, &tokens)
                    .map_err(|e| Failure::runtime(format!("{}: {e}", dest.display())))?;
                report.push_str(&format!("{name},kept,{},{clipped}\n", tokens.len() - 1));
                kept += 1;
                clipped_total += clipped;
            }
            Tokenized::DrumOnly => {
                println!("skipped {}: drum-only", path.display());
                report.push_str(&format!("{name},drum_only,,\n"));
                drum_only += 1;
            }
        }
    }
    if let Some(path) = &args.report {
        write_text(path, &report)?;
    }
    println!(
        "tokenized {kept} of {} files ({drum_only} drum-only skipped, {clipped_total} values clipped)",
        files.len()
    );
    Ok(())
}

#[derive(clap::Args)]
pub struct BuildVocabArgs {
    /// Destination JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn build_vocab(args: &BuildVocabArgs, dump_only: bool) -> CmdResult {
    echo("out", args.out.display(), "flag");
    if dump_only {
        return Ok(());
    }
    let vocab = AttributeVocab::canonical();
    for attr in Attribute::ALL {
        println!(
            "{}: {} content symbols (+ mask, pad)",
            attr.name(),
            vocab.table(attr).content_len()
        );
    }
    write_text(&args.out, &vocab.to_json())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(clap::Args)]
pub struct FilterArgs {
    /// Directory of .mid/.midi input files.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory the kept files are copied into.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-file CSV report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn filter(args: &FilterArgs, dump_only: bool) -> CmdResult {
    echo("data", args.data.display(), "flag");
    echo("out", args.out.display(), "flag");
    if dump_only {
        return Ok(());
    }
    let files = midi_corpus(&args.data)?;
    create_dir(&args.out)?;
    let same_dir = match (fs::canonicalize(&args.data), fs::canonicalize(&args.out)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same_dir {
        return Err(Failure::usage("out must differ from data"));
    }

    let outcomes: Vec<Result<bool, Failure>> =
        parallel_map(&files, |path| Ok(keeps_score(&parse_file(path)?.0)));

    let mut kept = 0usize;
    let mut report = String::from("file,kept\n");
    for (path, outcome) in files.iter().zip(outcomes) {
        let keep = outcome?;
        let name = csv_escape(&path.display().to_string());
        report.push_str(&format!("{name},{keep}\n"));
        if keep {
            let dest = args.out.join(path.file_name().expect("listed files have names"));
            fs::copy(path, &dest)
                .map_err(|e| Failure::runtime(format!("cannot copy to {}: {e}", dest.display())))?;
            kept += 1;
        } else {
            println!("dropped {}: drum-only", path.display());
        }
    }
    if let Some(path) = &args.report {
        write_text(path, &report)?;
    }
    println!("kept {kept} of {} files", files.len());
    Ok(())
}

#[derive(clap::Args)]
pub struct RoundtripArgs {
    /// Directory of .mid/.midi files to check.
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary JSON; defaults to the built-in tables.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Optional per-file CSV report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn roundtrip_check(args: &RoundtripArgs, dump_only: bool) -> CmdResult {
    echo("data", args.data.display(), "flag");
    echo_vocab(&args.vocab);
    if dump_only {
        return Ok(());
    }
    let vocab = load_vocab(&args.vocab)?;
    let files = midi_corpus(&args.data)?;

    let outcomes: Vec<Result<Option<RoundTrip>, Failure>> = parallel_map(&files, |path| {
        let (score, _) = parse_file(path)?;
        if !keeps_score(&score) {
            return Ok(None);
        }
        round_trip_score(&score, &vocab)
            .map(Some)
            .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    });

    let mut checked = 0usize;
    let mut failed = 0usize;
    let mut drum_only = 0usize;
    let mut report = String::from(
        "file,status,notes,pitch_mismatches,instrument_mismatches,onset_violations,\
         duration_violations,velocity_violations,max_onset_steps,max_duration_steps,\
         max_velocity_error,pass\n",
    );
    for (path, outcome) in files.iter().zip(outcomes) {
        let name = csv_escape(&path.display().to_string());
        match outcome? {
            None => {
                drum_only += 1;
                report.push_str(&format!("{name},drum_only,,,,,,,,,,\n"));
            }
            Some(trip) => {
                checked += 1;
                if !trip.pass() {
                    failed += 1;
                    println!(
                        "violation {}: {} pitch, {} instrument, {} onset, {} duration, {} velocity",
                        path.display(),
                        trip.pitch_mismatches,
                        trip.instrument_mismatches,
                        trip.onset_violations,
                        trip.duration_violations,
                        trip.velocity_violations
                    );
                }
                report.push_str(&format!(
                    "{name},checked,{},{},{},{},{},{},{},{},{},{}\n",
                    trip.notes,
                    trip.pitch_mismatches,
                    trip.instrument_mismatches,
                    trip.onset_violations,
                    trip.duration_violations,
                    trip.velocity_violations,
                    trip.max_onset_error_steps,
                    trip.max_duration_error_steps,
                    trip.max_velocity_error,
                    trip.pass()
                ));
            }
        }
    }
    if let Some(path) = &args.report {
        write_text(path, &report)?;
    }
    println!("round trip: {checked} scores checked, {drum_only} drum-only filtered");
    if failed > 0 {
        return Err(Failure::data(format!(
            "{failed} of {checked} scores violate round-trip tolerances"
        )));
    }
    println!("all round trips within tolerance");
    Ok(())
}
