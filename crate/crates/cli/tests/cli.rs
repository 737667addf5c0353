//! End-to-end runs of the `cadenza` binary: the tokenize → train →
//! generate pipeline, reporting commands, exit codes, and determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cadenza_midi::grid::{velocity_bin, velocity_value};
use cadenza_midi::score::{Instrument, RawNote, Score, TempoEvent, TimeSignature, Track};
use cadenza_midi::smf::{parse_midi, write_midi};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadenza"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

fn melody_score(offset: u8) -> Score {
    let notes = (0..8u64)
        .map(|i| RawNote {
            onset_tick: i * 240,
            pitch: 60 + offset + (i % 5) as u8,
            duration_ticks: 240,
            velocity: 80,
        })
        .collect();
    Score {
        ticks_per_quarter: 480,
        tempo_map: vec![TempoEvent { tick: 0, bpm: 120.0 }],
        time_signatures: vec![TimeSignature { tick: 0, numerator: 4, denominator: 4 }],
        tracks: vec![Track { instrument: Instrument::Program(0), notes }],
    }
}

fn drum_score() -> Score {
    let notes = (0..4u64)
        .map(|i| RawNote { onset_tick: i * 480, pitch: 36, duration_ticks: 120, velocity: 100 })
        .collect();
    let mut score = melody_score(0);
    score.tracks = vec![Track { instrument: Instrument::Drums, notes }];
    score
}

fn write_fixture_corpus(dir: &Path) {
    for (i, score) in [melody_score(0), melody_score(3), melody_score(7)].iter().enumerate() {
        fs::write(dir.join(format!("piece_{i}.mid")), write_midi(score)).unwrap();
    }
    fs::write(dir.join("drums.mid"), write_midi(&drum_score())).unwrap();
}

const SMALL_CONFIG: &str = "\
[model]
d = 16
l_gen = 1
l_dec = 1
heads = 2
m_max = 16

[train]
max_steps = 3
batch_size = 2
seed = 1
";

#[test]
fn version_exits_zero() {
    let out = run(&["--version"]);
    assert_code(&out, 0, "--version");
    assert!(stdout(&out).contains("cadenza"));
}

#[test]
fn unknown_flags_are_single_line_usage_errors() {
    let out = run(&["tokenize", "--bogus"]);
    assert_code(&out, 1, "unknown flag");
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "stderr was:\n{err}");
    assert!(err.starts_with("cadenza: usage: "), "stderr was:\n{err}");
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();

    let out = run(&[
        "tokenize",
        "--data",
        empty.to_str().unwrap(),
        "--out",
        dir.path().join("t").to_str().unwrap(),
    ]);
    assert_code(&out, 2, "tokenize of empty dir");
    assert!(stderr(&out).starts_with("cadenza: data: "));

    let out = run(&[
        "generate",
        "--ckpt",
        dir.path().join("nothing").to_str().unwrap(),
        "--notes",
        "4",
        "--out",
        dir.path().join("g.mid").to_str().unwrap(),
    ]);
    assert_code(&out, 2, "generate from missing checkpoint");
}

#[test]
fn dump_config_echoes_resolved_values_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL_CONFIG).unwrap();
    let out_dir = dir.path().join("run");

    let out = run(&[
        "train",
        "--dump-config",
        "--config",
        config.to_str().unwrap(),
        "--data",
        dir.path().join("missing").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert_code(&out, 0, "train --dump-config");
    let text = stdout(&out);
    assert!(text.contains("resolved train.seed = 9 (flag)"), "stdout:\n{text}");
    assert!(text.contains("resolved train.max_steps = 3 (config)"), "stdout:\n{text}");
    assert!(text.contains("[model]"), "stdout:\n{text}");
    assert!(text.contains("d = 16"), "stdout:\n{text}");
    assert!(!out_dir.exists(), "dump-config must not create the run directory");
}

#[test]
fn pipeline_tokenize_train_generate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let midi_dir = dir.path().join("midi");
    fs::create_dir(&midi_dir).unwrap();
    write_fixture_corpus(&midi_dir);

    let tokens_dir = dir.path().join("tokens");
    let report = dir.path().join("tokenize.csv");
    let out = run(&[
        "tokenize",
        "--data",
        midi_dir.to_str().unwrap(),
        "--out",
        tokens_dir.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "tokenize");
    let text = stdout(&out);
    assert!(text.contains("drum-only"), "stdout:\n{text}");
    assert!(text.contains("tokenized 3 of 4 files"), "stdout:\n{text}");
    assert_eq!(fs::read_dir(&tokens_dir).unwrap().count(), 3);
    let report_text = fs::read_to_string(&report).unwrap();
    assert!(report_text.starts_with("file,status,notes,clipped\n"));
    assert!(report_text.contains(",drum_only,"));

    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL_CONFIG).unwrap();
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        tokens_dir.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "train");
    assert!(stdout(&out).contains("trained 3 steps"));
    assert!(run_dir.join("last.bin").is_file());
    assert!(run_dir.join("last.json").is_file());
    let log = fs::read_to_string(run_dir.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,lr,l_cl,l_ce,total,mean_masked_ce,grad_norm\n"));
    assert_eq!(log.lines().count(), 4, "header plus one row per step:\n{log}");

    let gen_a = dir.path().join("a.mid");
    let gen_b = dir.path().join("b.mid");
    for path in [&gen_a, &gen_b] {
        let out = run(&[
            "generate",
            "--ckpt",
            run_dir.to_str().unwrap(),
            "--notes",
            "4",
            "--steps",
            "2",
            "--seed",
            "11",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_code(&out, 0, "generate");
        assert!(stdout(&out).contains("resolved seed = 11 (flag)"));
    }
    let bytes_a = fs::read(&gen_a).unwrap();
    let bytes_b = fs::read(&gen_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed must give byte-identical MIDI");
    let (score, _) = parse_midi(&bytes_a).unwrap();
    assert_eq!(score.note_count(), 4);

    let empty = dir.path().join("empty.mid");
    let out = run(&[
        "generate",
        "--ckpt",
        run_dir.to_str().unwrap(),
        "--notes",
        "0",
        "--out",
        empty.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "generate --notes 0");
    let (score, _) = parse_midi(&fs::read(&empty).unwrap()).unwrap();
    assert_eq!(score.note_count(), 0, "zero notes still writes a valid file");

    let clamped = dir.path().join("clamped.mid");
    let out = run(&[
        "generate",
        "--ckpt",
        run_dir.to_str().unwrap(),
        "--notes",
        "5",
        "--seed",
        "3",
        "--clamp",
        "velocity=64",
        "--clamp",
        "instrument=Drums",
        "--out",
        clamped.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "generate with clamps");
    let (score, _) = parse_midi(&fs::read(&clamped).unwrap()).unwrap();
    assert!(score.note_count() > 0);
    let want_velocity = velocity_value(velocity_bin(64));
    for track in &score.tracks {
        assert_eq!(track.instrument, Instrument::Drums);
        for note in &track.notes {
            assert_eq!(note.velocity, want_velocity);
        }
    }
}

#[test]
fn roundtrip_check_passes_a_clean_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let midi_dir = dir.path().join("midi");
    fs::create_dir(&midi_dir).unwrap();
    write_fixture_corpus(&midi_dir);

    let report = dir.path().join("trips.csv");
    let out = run(&[
        "roundtrip-check",
        "--data",
        midi_dir.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "roundtrip-check");
    let text = stdout(&out);
    assert!(text.contains("3 scores checked, 1 drum-only filtered"), "stdout:\n{text}");
    let report_text = fs::read_to_string(&report).unwrap();
    assert_eq!(report_text.lines().count(), 5, "header + 4 rows:\n{report_text}");
    assert!(report_text.contains(",drum_only,"));
}

#[test]
fn filter_copies_only_kept_files() {
    let dir = tempfile::tempdir().unwrap();
    let midi_dir = dir.path().join("midi");
    fs::create_dir(&midi_dir).unwrap();
    write_fixture_corpus(&midi_dir);
    let kept_dir = dir.path().join("kept");

    let out = run(&[
        "filter",
        "--data",
        midi_dir.to_str().unwrap(),
        "--out",
        kept_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "filter");
    assert!(stdout(&out).contains("kept 3 of 4 files"));
    assert_eq!(fs::read_dir(&kept_dir).unwrap().count(), 3);
    assert!(!kept_dir.join("drums.mid").exists());
}

#[test]
fn eval_and_analyze_mi_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let midi_dir = dir.path().join("midi");
    fs::create_dir(&midi_dir).unwrap();
    for (i, score) in [melody_score(0), melody_score(4)].iter().enumerate() {
        fs::write(midi_dir.join(format!("gen_{i}.mid")), write_midi(score)).unwrap();
    }
    let refs = dir.path().join("refs.csv");
    fs::write(
        &refs,
        "piece,tempo_bpm,key,numerator,denominator,instruments\n\
         gen_0,120,,4,4,0\n\
         gen_1,90,,,,\n",
    )
    .unwrap();

    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--data",
        midi_dir.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--refs",
        refs.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "eval");
    let quality = fs::read_to_string(eval_dir.join("quality.csv")).unwrap();
    assert!(quality.starts_with("piece,sc,pe_bits,pce_bits\n"));
    assert!(quality.contains("gen_0,"));
    let control = fs::read_to_string(eval_dir.join("control.csv")).unwrap();
    assert!(control.starts_with("metric,hits,evaluated,excluded,ratio\n"));
    assert!(control.contains("tbt,1,2,0,0.5"), "control was:\n{control}");

    let tokens_dir = dir.path().join("tokens");
    let out = run(&[
        "tokenize",
        "--data",
        midi_dir.to_str().unwrap(),
        "--out",
        tokens_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "tokenize for analyze-mi");

    let mi_dir = dir.path().join("mi");
    let out = run(&[
        "analyze-mi",
        "--data",
        tokens_dir.to_str().unwrap(),
        "--out",
        mi_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "analyze-mi");
    for name in ["mi.csv", "nmi.csv", "cond_entropy.csv", "entropy.csv"] {
        assert!(mi_dir.join(name).is_file(), "{name} missing");
    }
    let mi = fs::read_to_string(mi_dir.join("mi.csv")).unwrap();
    assert!(
        mi.starts_with("mi_nats,Beat,Pitch,Velocity,Duration,Instrument,Chord,Tempo,Type\n"),
        "mi.csv was:\n{mi}"
    );
}
