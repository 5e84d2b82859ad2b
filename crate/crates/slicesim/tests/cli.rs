use std::fs;
use std::path::Path;
use std::process::ExitCode;

use slicesim::cli::main_with;
use slicesim::output::{csv_view, load_csv, read_csv, write_csv, CSV_COLUMNS};
use slicesim_core::sim::{gen_scenario, RunConfig, Simulation};

fn cli(args: &[&str]) -> (ExitCode, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("slicesim").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_seed(dir: &Path, policy: &str, seed: u64, extra: &[&str]) -> (ExitCode, String, String) {
    let seed = seed.to_string();
    let mut args = vec!["run", "--policy", policy, "--seed", &seed, "--out", path(dir)];
    args.extend_from_slice(extra);
    cli(&args)
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run_seed(dir.path(), "agent", 4, &[]);
    assert_eq!(code, ExitCode::SUCCESS);
    assert!(stdout.contains("arrivals"));
    for f in [
        "agent_seed4.csv",
        "agent_seed4_plot.txt",
        "agent_seed4_plot.svg",
        "agent_seed4_actions.csv",
        "agent_seed4_trace.tsv",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let (code, _, _) = run_seed(dir.path(), "traditional", 4, &[]);
    assert_eq!(code, ExitCode::SUCCESS);
    assert!(dir.path().join("traditional_seed4.csv").is_file());
    assert!(!dir.path().join("traditional_seed4_actions.csv").exists());
}

#[test]
fn csv_has_header_and_one_row_per_arrival() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run_seed(dir.path(), "agent", 1, &["--users", "37"]);
    assert_eq!(code, ExitCode::SUCCESS);
    let text = fs::read_to_string(dir.path().join("agent_seed1.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 37 + 1);
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
}

#[test]
fn csv_round_trips_to_the_same_log() {
    let dir = tempfile::tempdir().unwrap();
    run_seed(dir.path(), "agent", 12, &[]);
    let file = dir.path().join("agent_seed12.csv");
    let parsed = load_csv(&file).unwrap();

    let config = RunConfig::default();
    let sc = gen_scenario(12, 120, 450.0, &config.catalog).unwrap();
    let direct = Simulation::new(config).unwrap().run(&sc);
    assert_eq!(parsed, csv_view(&direct.log.steps));

    let mut rewritten = Vec::new();
    write_csv(&parsed, &mut rewritten).unwrap();
    assert_eq!(rewritten, fs::read(&file).unwrap());
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for policy in ["agent", "traditional"] {
        for channel in ["ideal", "zfbf"] {
            run_seed(a.path(), policy, 77, &["--channel", channel]);
            run_seed(b.path(), policy, 77, &["--channel", channel]);
            for suffix in [".csv", "_plot.txt", "_plot.svg"] {
                let f = format!("{policy}_seed77{suffix}");
                assert_eq!(
                    fs::read(a.path().join(&f)).unwrap(),
                    fs::read(b.path().join(&f)).unwrap(),
                    "{f} {channel}"
                );
            }
        }
    }
}

#[test]
fn compare_reports_deltas_and_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    run_seed(dir.path(), "agent", 6, &[]);
    run_seed(dir.path(), "traditional", 6, &[]);
    run_seed(dir.path(), "traditional", 7, &[]);
    let f = |n: &str| dir.path().join(n).to_str().unwrap().to_owned();

    let (code, table, _) = cli(&["compare", &f("agent_seed6.csv"), &f("agent_seed6.csv")]);
    assert_eq!(code, ExitCode::SUCCESS);
    for row in table.lines().skip(1) {
        let cells: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(&cells[3..6], ["0", "0", "0"], "{row}");
        assert_eq!(cells[8], "+0.0000");
    }
    assert_eq!(table.lines().count(), 1 + 120 / 5);

    let (code, table, _) = cli(&["compare", &f("agent_seed6.csv"), &f("traditional_seed6.csv")]);
    assert_eq!(code, ExitCode::SUCCESS);
    assert!(table
        .lines()
        .skip(1)
        .all(|r| r.split_whitespace().nth(3).unwrap().parse::<i64>().unwrap() >= 0));

    let (code, _, err) = cli(&["compare", &f("agent_seed6.csv"), &f("traditional_seed7.csv")]);
    assert_eq!(code, ExitCode::from(2));
    assert!(err.contains("scenario"), "{err}");
}

#[test]
fn config_errors_exit_2_and_io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = path(dir.path());
    assert_eq!(cli(&["run", "--out", d, "--users", "0"]).0, ExitCode::from(2));
    assert_eq!(cli(&["run", "--out", d, "--area", "-5"]).0, ExitCode::from(2));
    assert_eq!(cli(&["run", "--out", d, "--llm", "sometimes"]).0, ExitCode::from(2));
    assert_eq!(cli(&["run", "--out", d, "--policy", "greedy"]).0, ExitCode::from(2));
    assert_eq!(cli(&["batch", "--seeds", "9..2", "--out", d]).0, ExitCode::from(2));
    assert_eq!(
        cli(&["run", "--out", d, "--policy", "traditional", "--llm", "live"]).0,
        ExitCode::from(2)
    );

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "mode = \"lenient\"\n[[intent]]\nlabel = \"x\"\n").unwrap();
    assert_eq!(cli(&["run", "--out", d, "--catalog", path(&bad)]).0, ExitCode::from(2));

    let missing = dir.path().join("nope.toml");
    assert_eq!(
        cli(&["run", "--out", d, "--catalog", path(&missing)]).0,
        ExitCode::from(3)
    );
    assert_eq!(cli(&["compare", path(&missing), path(&missing)]).0, ExitCode::from(3));
    assert_eq!(cli(&["replay", "--trace", path(&missing)]).0, ExitCode::from(3));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let nested = blocker.join("sub");
    assert_eq!(cli(&["run", "--out", path(&nested)]).0, ExitCode::from(3));
}

#[test]
fn recorded_fixture_replays_to_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("rules");
    let replayed = dir.path().join("replayed");
    let fixture = dir.path().join("fixture.jsonl");
    let (code, _, _) = run_seed(&rules, "agent", 31, &["--record", path(&fixture)]);
    assert_eq!(code, ExitCode::SUCCESS);
    assert!(fs::read_to_string(&fixture).unwrap().lines().count() > 120);
    let spec = format!("replay:{}", path(&fixture));
    let (code, _, _) = run_seed(&replayed, "agent", 31, &["--llm", &spec]);
    assert_eq!(code, ExitCode::SUCCESS);
    let a = fs::read(rules.join("agent_seed31.csv")).unwrap();
    let b = fs::read(replayed.join("agent_seed31.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn batch_writes_each_seed_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = cli(&[
        "batch",
        "--seeds",
        "3..5",
        "--policy",
        "traditional",
        "--users",
        "30",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code, ExitCode::SUCCESS);
    let mut per_seed = Vec::new();
    for s in 3..=5 {
        per_seed.push(load_csv(&dir.path().join(format!("traditional_seed{s}.csv"))).unwrap());
    }
    let summary = fs::read_to_string(dir.path().join("batch_summary.csv")).unwrap();
    assert_eq!(summary, stdout);
    let last = summary.lines().last().unwrap();
    let cells: Vec<f64> = last.split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(cells[0], 30.0);
    let mean_embb = per_seed.iter().map(|s| f64::from(s[29].embb_users)).sum::<f64>() / 3.0;
    assert!((cells[1] - mean_embb).abs() < 1e-4);
}

#[test]
fn replay_prints_a_trace_per_request() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("requests.txt");
    fs::write(
        &trace,
        "# two arrivals\nid=1 pos=10,20 service=4K video\n\nid=2 pos=30,40 service=voice call\n",
    )
    .unwrap();
    let (code, stdout, _) = cli(&["replay", "--trace", path(&trace)]);
    assert_eq!(code, ExitCode::SUCCESS);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("# ")).count(), 2);
    assert!(stdout.contains("= admitted eMBB 12 Mb/s"), "{stdout}");
    assert!(stdout.contains("= admitted URLLC 1 Mb/s"), "{stdout}");

    fs::write(&trace, "id=1 pos=10 service=web\n").unwrap();
    let (code, _, err) = cli(&["replay", "--trace", path(&trace)]);
    assert_eq!(code, ExitCode::from(2));
    assert!(err.contains(":1:"), "{err}");
}

#[test]
fn read_csv_rejects_foreign_headers() {
    assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
}
