//! Reporting subcommands: quality and control metrics over generated
//! MIDI, and information-theoretic analysis of tokenized corpora.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use cadenza_eval::control::{control_csv, control_metrics, Key, Ratio, Reference};
use cadenza_eval::metrics::{quality_csv, quality_metrics};
use cadenza_eval::mi::mutual_information_analysis;
use cadenza_eval::parallel_map;
use cadenza_midi::corpus::{list_token_files, read_tokens_file};
use cadenza_midi::score::Instrument;
use cadenza_midi::vocab::instrument_from_symbol;

use crate::data::{midi_corpus, parse_file, print_warnings, unique_stems};
use crate::{echo, CmdResult, Failure};

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Directory of .mid/.midi files to evaluate.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving quality.csv (and control.csv with --refs).
    #[arg(long)]
    pub out: PathBuf,
    /// Reference CSV enabling the control metrics.
    #[arg(long)]
    pub refs: Option<PathBuf>,
}

const REFS_HEADER: &str = "piece,tempo_bpm,key,numerator,denominator,instruments";

/// Parse a key name like `C major` or `f# minor`.
fn parse_key(text: &str) -> Result<Key, String> {
    const SHARPS: [&str; 12] =
        ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
    const FLATS: [&str; 12] =
        ["C", "Db", "D", "Eb", "E", "F", "Gb", "G", "Ab", "A", "Bb", "B"];
    let mut parts = text.split_whitespace();
    let tonic_txt = parts.next().ok_or("empty key")?;
    let mode_txt = parts
        .next()
        .ok_or_else(|| format!("key '{text}' needs a mode (major or minor)"))?;
    if parts.next().is_some() {
        return Err(format!("key '{text}' has trailing text"));
    }
    let tonic = SHARPS
        .iter()
        .position(|n| n.eq_ignore_ascii_case(tonic_txt))
        .or_else(|| FLATS.iter().position(|n| n.eq_ignore_ascii_case(tonic_txt)))
        .ok_or_else(|| format!("unknown tonic '{tonic_txt}'"))?;
    let major = match mode_txt.to_ascii_lowercase().as_str() {
        "major" => true,
        "minor" => false,
        other => return Err(format!("unknown mode '{other}'")),
    };
    Ok(Key { tonic, major })
}

/// Parse `;`-separated instrument names or numeric ids.
fn parse_instruments(text: &str) -> Result<BTreeSet<Instrument>, String> {
    let mut out = BTreeSet::new();
    for part in text.split(';') {
        let name = part.trim();
        if name.is_empty() {
            continue;
        }
        let inst = instrument_from_symbol(name)
            .or_else(|| name.parse::<usize>().ok().and_then(Instrument::from_id))
            .ok_or_else(|| format!("unknown instrument '{name}'"))?;
        out.insert(inst);
    }
    if out.is_empty() {
        return Err("empty instrument list".into());
    }
    Ok(out)
}

fn opt_field(field: &str) -> Option<&str> {
    let trimmed = field.trim();
    (!trimmed.is_empty()).then_some(trimmed)
}

/// Read a reference CSV as one [`Reference`] per piece stem. Empty cells
/// leave the matching field unset (excluding the piece from that metric).
fn read_refs(path: &Path) -> Result<BTreeMap<String, Reference>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    let bad = |line: usize, msg: String| {
        Failure::data(format!("{} line {line}: {msg}", path.display()))
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Failure::data(format!("{} is empty", path.display())))?;
    if header.trim() != REFS_HEADER {
        return Err(Failure::data(format!(
            "{}: header must be '{REFS_HEADER}'",
            path.display()
        )));
    }

    let mut out = BTreeMap::new();
    for (no, line) in lines {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad(line_no, format!("expected 6 fields, found {}", fields.len())));
        }
        let piece = fields[0].trim().to_string();
        if piece.is_empty() {
            return Err(bad(line_no, "empty piece name".into()));
        }

        let tempo_bpm = opt_field(fields[1])
            .map(|f| f.parse::<f64>().map_err(|e| bad(line_no, format!("tempo: {e}"))))
            .transpose()?;
        let key = opt_field(fields[2])
            .map(|f| parse_key(f).map_err(|e| bad(line_no, e)))
            .transpose()?;
        let time_signature = match (opt_field(fields[3]), opt_field(fields[4])) {
            (None, None) => None,
            (Some(n), Some(d)) => {
                let numerator =
                    n.parse::<u8>().map_err(|e| bad(line_no, format!("numerator: {e}")))?;
                let denominator =
                    d.parse::<u8>().map_err(|e| bad(line_no, format!("denominator: {e}")))?;
                Some((numerator, denominator))
            }
            _ => {
                return Err(bad(line_no, "numerator and denominator must come together".into()))
            }
        };
        let instruments = opt_field(fields[5])
            .map(|f| parse_instruments(f).map_err(|e| bad(line_no, e)))
            .transpose()?;

        let reference = Reference { tempo_bpm, key, time_signature, instruments };
        if out.insert(piece.clone(), reference).is_some() {
            return Err(bad(line_no, format!("piece '{piece}' listed twice")));
        }
    }
    Ok(out)
}

fn ratio_line(name: &str, ratio: &Ratio) -> String {
    match ratio.value() {
        Some(v) => format!(
            "{name}: {}/{} hits ({:.4}, {} excluded)",
            ratio.hits, ratio.evaluated, v, ratio.excluded
        ),
        None => format!("{name}: no evaluated pieces ({} excluded)", ratio.excluded),
    }
}

fn mean_line(name: &str, mean: Option<f64>) -> String {
    match mean {
        Some(v) => format!("mean {name} = {v:.4}"),
        None => format!("mean {name} = n/a (no pitched notes)"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn eval(args: &EvalArgs, dump_only: bool) -> CmdResult {
    echo("data", args.data.display(), "flag");
    echo("out", args.out.display(), "flag");
    match &args.refs {
        Some(p) => echo("refs", p.display(), "flag"),
        None => echo("refs", "none", "default"),
    }
    if dump_only {
        return Ok(());
    }

    let files = midi_corpus(&args.data)?;
    let stems = unique_stems(&files)?;
    let parsed = parallel_map(&files, |path| parse_file(path));
    let mut scores = Vec::with_capacity(files.len());
    for (path, outcome) in files.iter().zip(parsed) {
        let (score, warnings) = outcome?;
        print_warnings(path, &warnings);
        scores.push(score);
    }

    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let quality = quality_metrics(&scores);
    write_text(&args.out.join("quality.csv"), &quality_csv(&quality, &stems))?;
    println!(
        "quality: {} pieces, {} skipped (no pitched notes)",
        quality.pieces.len(),
        quality.skipped
    );
    println!("{}", mean_line("sc", quality.mean_sc));
    println!("{}", mean_line("pe_bits", quality.mean_pe));
    println!("{}", mean_line("pce_bits", quality.mean_pce));

    if let Some(refs_path) = &args.refs {
        let table = read_refs(refs_path)?;
        let known: BTreeSet<&String> = stems.iter().collect();
        let orphans = table.keys().filter(|k| !known.contains(k)).count();
        if orphans > 0 {
            println!("note: {orphans} reference rows match no evaluated piece");
        }
        let mut missing = 0usize;
        let references: Vec<Reference> = stems
            .iter()
            .map(|stem| {
                table.get(stem).cloned().unwrap_or_else(|| {
                    missing += 1;
                    Reference::default()
                })
            })
            .collect();
        if missing > 0 {
            println!("note: {missing} pieces have no reference row (excluded everywhere)");
        }
        let control = control_metrics(&scores, &references).map_err(Failure::data)?;
        write_text(&args.out.join("control.csv"), &control_csv(&control))?;
        println!("{}", ratio_line("tbt", &control.tbt));
        println!("{}", ratio_line("ck", &control.ck));
        println!("{}", ratio_line("cts", &control.cts));
        println!("{}", ratio_line("ci", &control.ci));
    }
    Ok(())
}

#[derive(clap::Args)]
pub struct AnalyzeMiArgs {
    /// Directory of .tokens files.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving mi.csv, nmi.csv, cond_entropy.csv, entropy.csv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn analyze_mi(args: &AnalyzeMiArgs, dump_only: bool) -> CmdResult {
    echo("data", args.data.display(), "flag");
    echo("out", args.out.display(), "flag");
    if dump_only {
        return Ok(());
    }

    let files = list_token_files(&args.data).map_err(Failure::data)?;
    if files.is_empty() {
        return Err(Failure::data(format!("no token files in {}", args.data.display())));
    }
    let mut seqs = Vec::with_capacity(files.len());
    for path in &files {
        seqs.push(
            read_tokens_file(path)
                .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?,
        );
    }
    let matrices = mutual_information_analysis(&seqs).map_err(Failure::data)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", args.out.display())))?;
    write_text(&args.out.join("mi.csv"), &matrices.mi_csv())?;
    write_text(&args.out.join("nmi.csv"), &matrices.nmi_csv())?;
    write_text(&args.out.join("cond_entropy.csv"), &matrices.cond_csv())?;
    write_text(&args.out.join("entropy.csv"), &matrices.entropy_csv())?;

    println!("analyzed {} sequences ({} notes)", seqs.len(), matrices.notes_counted);
    if !matrices.constant.is_empty() {
        println!("constant attributes: {}", matrices.constant.join(", "));
    }
    println!("wrote mi.csv, nmi.csv, cond_entropy.csv, entropy.csv in {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_names_parse_in_both_spellings() {
        assert_eq!(parse_key("C major").unwrap(), Key { tonic: 0, major: true });
        assert_eq!(parse_key("f# minor").unwrap(), Key { tonic: 6, major: false });
        assert_eq!(parse_key("Eb MAJOR").unwrap(), Key { tonic: 3, major: true });
        assert!(parse_key("H major").is_err());
        assert!(parse_key("C").is_err());
        assert!(parse_key("C major extra").is_err());
    }

    #[test]
    fn instrument_lists_accept_names_and_ids() {
        let set = parse_instruments("Drums;0").unwrap();
        assert!(set.contains(&Instrument::Drums));
        assert!(set.contains(&Instrument::Program(0)));
        assert!(parse_instruments("sousaphone ensemble").is_err());
        assert!(parse_instruments(" ; ").is_err());
    }

    #[test]
    fn reference_rows_parse_field_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refs.csv");
        fs::write(
            &path,
            "piece,tempo_bpm,key,numerator,denominator,instruments\n\
             a,120,C major,4,4,Drums;0\n\
             b,,A minor,,,\n",
        )
        .unwrap();
        let refs = read_refs(&path).unwrap();
        assert_eq!(refs.len(), 2);
        let a = &refs["a"];
        assert_eq!(a.tempo_bpm, Some(120.0));
        assert_eq!(a.key, Some(Key { tonic: 0, major: true }));
        assert_eq!(a.time_signature, Some((4, 4)));
        assert_eq!(a.instruments.as_ref().map(|s| s.len()), Some(2));
        let b = &refs["b"];
        assert_eq!(b.tempo_bpm, None);
        assert_eq!(b.key, Some(Key { tonic: 9, major: false }));
        assert_eq!(b.time_signature, None);
        assert!(b.instruments.is_none());
    }

    #[test]
    fn malformed_reference_rows_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refs.csv");
        let cases = [
            "wrong,header\n",
            "piece,tempo_bpm,key,numerator,denominator,instruments\na,x,,,,\n",
            "piece,tempo_bpm,key,numerator,denominator,instruments\na,,,4,,\n",
            "piece,tempo_bpm,key,numerator,denominator,instruments\na,,,,,\na,,,,,\n",
        ];
        for text in cases {
            fs::write(&path, text).unwrap();
            let err = read_refs(&path).err().expect("malformed refs must fail");
            assert!(matches!(err, Failure::Data(_)), "{text:?} gave {err:?}");
        }
    }
}
