use std::path::PathBuf;
use std::process::{Command, Output};

use clap::Parser;

use l3o_cli::args::Cli;
use l3o_cli::config::{CommandKind, RunConfig};
use l3o_cli::report::{self, CsOut, Report};
use l3o_cli::{commands, input};
use l3o_core::alt_variance::ProcedureId;
use l3o_core::design::{Dataset, Encoding};
use l3o_core::simulate::{make_design, ErrorParams, Family, SimDesign};

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write(name: &str, text: &str) -> PathBuf {
    let p = tmp(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn l3o(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l3o")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn judge(k: usize, e_tfs: f64, seed: u64) -> SimDesign {
    judge_c(k, 5, e_tfs, seed)
}

fn judge_c(k: usize, c: usize, e_tfs: f64, seed: u64) -> SimDesign {
    let p = ErrorParams::default_for(Family::BinaryJudge);
    make_design(Family::BinaryJudge, k, c, e_tfs, 0.0, 0.0, p, seed).unwrap()
}

fn save(name: &str, ds: &Dataset) -> PathBuf {
    let p = tmp(name);
    input::write_dataset(ds, std::fs::File::create(&p).unwrap()).unwrap();
    p
}

fn config(args: &[&str]) -> RunConfig {
    let mut v = vec!["l3o"];
    v.extend_from_slice(args);
    RunConfig::from_command(&Cli::try_parse_from(v).unwrap().command).unwrap()
}

fn run(args: &[&str]) -> Report {
    commands::run(&config(args)).unwrap()
}

#[test]
fn schema_errors_name_the_column_and_row() {
    let p = write("noy.csv", "x,z\n1,0\n0,1\n");
    let o = l3o(&["estimate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`y`"), "{}", stderr(&o));

    let p = write("badrow.csv", "y,x,z\n1,0,0\n1,abc,1\n");
    let o = l3o(&["estimate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("column x") && msg.contains("row 2"), "{msg}");

    let o = l3o(&["estimate"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write("unknown.cfg", "alpha = 0.05\nbogus = 1\n");
    let o = l3o(&["simulate", "--config", cfg.to_str().unwrap(), "--reps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn oracle_procedures_need_a_design() {
    let p = save("oracle.csv", &judge(8, 4.0, 1).draw(0));
    let o = l3o(&["test", p.to_str().unwrap(), "--procedures", "LM_ORACLE"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rank_deficiency_exits_with_three() {
    let mut text = String::from("y,x,z1,z2\n");
    for i in 0..30 {
        let a = (i % 7) as i64 - 3;
        text.push_str(&format!("{},{},{},{}\n", (i % 5) as f64 * 0.5, a + (i % 3) as i64, a, 2 * a));
    }
    let p = write("rank.csv", &text);
    let o = l3o(&["test", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("rank"));
}

#[test]
fn invalid_design_exits_with_four() {
    let cfg = write("k6.cfg", "family = judge\nk = 6\n");
    let o = l3o(&["simulate", "--config", cfg.to_str().unwrap(), "--reps", "1"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn singular_triples_exit_with_five_unless_conservative() {
    // Groups of three leave nothing once a triple is removed.
    let mut text = String::from("y,x,z\n");
    for g in 0..12 {
        let size = if g < 2 { 3 } else { 6 };
        for i in 0..size {
            text.push_str(&format!("{},{},{}\n", ((g * 7 + i * 3) % 11) as f64 / 5.0, (g + i) % 2, g));
        }
    }
    let p = write("small.csv", &text);
    let o = l3o(&["test", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("--conservative"));

    let o = l3o(&["test", p.to_str().unwrap(), "--conservative", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    let Report::Test(doc) = rep else { panic!("wrong report") };
    assert_eq!(doc.tests[0].status, "conservative");

    let o = l3o(&["diagnose", p.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let Report::Diagnose(d) = report::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap() else {
        panic!("wrong report")
    };
    assert!(!d.invertible_all_triples);
    assert!(d.n_offending > 0);
}

#[test]
fn dense_and_label_encodings_agree() {
    let ds = judge(12, 6.0, 4).draw(3);
    let dense = Dataset::new(ds.y.clone(), ds.x.clone(), Encoding::Dense(ds.z.to_dense(false)), None).unwrap();
    let a = save("labels.csv", &ds);
    let b = save("dense.csv", &dense);
    let head = std::fs::read_to_string(&b).unwrap();
    assert!(head.starts_with("y,x,z1,z2"));

    let beta = |p: &PathBuf| match run(&["estimate", p.to_str().unwrap()]) {
        Report::Estimate(e) => e.beta_hat.unwrap(),
        _ => unreachable!(),
    };
    assert!((beta(&a) - beta(&b)).abs() < 1e-10);

    let stat = |p: &PathBuf| match run(&["test", p.to_str().unwrap(), "--procedures", "L3O,MO", "--beta0", "0.3"]) {
        Report::Test(t) => t.tests.iter().map(|r| r.statistic.unwrap()).collect::<Vec<_>>(),
        _ => unreachable!(),
    };
    for (u, v) in stat(&a).iter().zip(stat(&b)) {
        assert!((u - v).abs() < 1e-8 * u.abs().max(1.0), "{u} vs {v}");
    }
}

#[test]
fn json_round_trips() {
    let p = save("rt.csv", &judge(8, 5.0, 2).draw(1));
    let s = p.to_str().unwrap();
    let all = "L3O,MO,MS,CMS,TSLS,EK,XTILDE_T,XTILDE_AR";
    for args in [
        vec!["estimate", s],
        vec!["test", s, "--procedures", all, "--beta0", "-0.25"],
        vec!["cs", s, "--procedures", "L3O,MO,MS"],
        vec!["diagnose", s],
        vec!["simulate", "--reps", "6", "--seed", "9"],
    ] {
        let rep = run(&args);
        let back = report::from_json(&report::to_json(&rep).unwrap()).unwrap();
        assert_eq!(rep, back, "{args:?}");
    }
}

#[test]
fn simulation_output_is_reproducible_across_worker_counts() {
    let cfg = write("small_design.cfg", "family = judge\nk = 16\nc = 5\ne_tfs = 2\ne_tar = 1sqrtK\n");
    let c = cfg.to_str().unwrap();
    let base = ["simulate", "--config", c, "--reps", "40", "--seed", "11", "--format", "csv"];
    let one = l3o(&[&base[..], &["--threads", "1"]].concat());
    let two = l3o(&[&base[..], &["--threads", "2"]].concat());
    let again = l3o(&[&base[..], &["--threads", "1"]].concat());
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    assert!(!one.stdout.is_empty());
    assert_eq!(one.stdout, two.stdout);
    assert_eq!(one.stdout, again.stdout);

    let other = l3o(&["simulate", "--config", c, "--reps", "40", "--seed", "12", "--format", "csv"]);
    assert_ne!(one.stdout, other.stdout);
}

#[test]
fn strong_first_stage_gives_bounded_sets() {
    let d = judge_c(40, 20, 60.0, 5);
    for r in 0..3 {
        let p = save(&format!("strong{r}.csv"), &d.draw(r));
        let Report::Cs(doc) = run(&["cs", p.to_str().unwrap(), "--procedures", "L3O,MO"]) else { unreachable!() };
        for set in &doc.sets {
            assert_eq!(set.shape, "interval", "{set:?}");
            assert!(set.lower.unwrap() < set.upper.unwrap());
        }
        let est = doc.estimate.unwrap();
        assert!(doc.sets[0].lower.unwrap() <= est && est <= doc.sets[0].upper.unwrap());
    }
}

#[test]
fn irrelevant_instruments_give_unbounded_sets() {
    let d = judge(40, 0.0, 6);
    let mut bounded = 0;
    for r in 0..8 {
        let p = save(&format!("weak{r}.csv"), &d.draw(r));
        let Report::Cs(doc) = run(&["cs", p.to_str().unwrap()]) else { unreachable!() };
        let shape = doc.sets[0].shape.as_str();
        if shape == "interval" {
            bounded += 1;
        } else {
            assert!(shape == "two_rays" || shape == "whole_line", "{shape}");
            assert!(doc.sets[0].length.is_none());
        }
    }
    assert!(bounded <= 2, "{bounded} bounded sets without a first stage");
}

#[test]
fn grid_and_closed_form_sets_agree_through_the_cli() {
    let p = save("grid.csv", &judge_c(20, 20, 20.0, 8).draw(0));
    let s = p.to_str().unwrap();
    let Report::Cs(a) = run(&["cs", s]) else { unreachable!() };
    let Report::Cs(b) = run(&["cs", s, "--grid"]) else { unreachable!() };
    assert_eq!(a.sets[0].method, "closed_form");
    assert_eq!(b.sets[0].method, "grid");
    assert_eq!(a.sets[0].shape, b.sets[0].shape);
    assert!((a.sets[0].lower.unwrap() - b.sets[0].lower.unwrap()).abs() < 1e-5);
    assert!((a.sets[0].upper.unwrap() - b.sets[0].upper.unwrap()).abs() < 1e-5);
}

#[test]
fn set_rendering() {
    let mut set = CsOut {
        procedure: "MS".into(),
        method: "grid".into(),
        shape: "empty".into(),
        lower: None,
        upper: None,
        length: None,
        discriminant: None,
        leading_coeff: None,
    };
    assert_eq!(set.render(), "∅");
    set.shape = "whole_line".into();
    assert_eq!(set.render(), "(-∞, ∞)");
    set.shape = "interval".into();
    set.lower = Some(-1.5);
    set.upper = Some(2.0);
    assert_eq!(set.render(), "[-1.5000, 2.0000]");
    set.shape = "two_rays".into();
    assert_eq!(set.render(), "(-∞, -1.5000] ∪ [2.0000, ∞)");
}

#[test]
fn defaults_and_config_precedence() {
    let c = config(&["test", "data.csv"]);
    assert_eq!(c.command, CommandKind::Test);
    assert_eq!(c.alpha, 0.05);
    assert_eq!(c.procedures, vec![ProcedureId::L3o]);
    assert_eq!(c.beta0, None);
    assert!(!c.conservative);

    let s = config(&["simulate"]);
    assert_eq!(s.reps, 1000);
    assert_eq!(s.procedures.len(), 9);

    let cfg = write("prec.cfg", "# comment\nalpha = 0.10\nprocedures = MO,MS\nbeta0 = 0.5\nalpha = 0.2\n");
    let c = config(&["test", "data.csv", "--config", cfg.to_str().unwrap()]);
    assert_eq!(c.alpha, 0.2);
    assert_eq!(c.beta0, Some(0.5));
    assert_eq!(c.procedures, vec![ProcedureId::Mo, ProcedureId::Ms]);
    let c = config(&["test", "data.csv", "--config", cfg.to_str().unwrap(), "--alpha", "0.01", "--beta0", "-1"]);
    assert_eq!(c.alpha, 0.01);
    assert_eq!(c.beta0, Some(-1.0));
    assert_eq!(c.procedures, vec![ProcedureId::Mo, ProcedureId::Ms]);

    let bad = |args: &[&str]| {
        let mut v = vec!["l3o"];
        v.extend_from_slice(args);
        RunConfig::from_command(&Cli::try_parse_from(v).unwrap().command).is_err()
    };
    assert!(bad(&["test", "d.csv", "--alpha", "1.5"]));
    assert!(bad(&["simulate", "--threads", "0"]));
    assert!(bad(&["test", "d.csv", "--procedures", "NOPE"]));
}

#[test]
fn benchmark_preset_shape() {
    let Report::Simulate(doc) = run(&["simulate", "--table1", "--reps", "2", "--procedures", "L3O,MS,LM_ORACLE"]) else {
        unreachable!()
    };
    assert_eq!(doc.designs.len(), 9);
    for d in &doc.designs {
        assert_eq!(d.rows.len(), 3);
        assert!(d.rows.iter().all(|r| r.k == 400 && r.c == 5 && r.n_reps == 2));
    }
    let csv = report::to_csv(&Report::Simulate(doc)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 27);
    assert!(csv.starts_with("family,K,c,e_tfs,e_tar"));
}
