//! The acceptance suite end to end: `accept --seed 7` twice through the built
//! binary, one PASS/FAIL line per criterion, and a byte comparison of the two
//! artifact trees for determinism.

use flatsaddle_cli::acceptance::{CRITERIA, KNOWN_UNATTAINABLE};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const SEED: &str = "7";

fn out_dir(name: &str) -> PathBuf {
    let p = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&p);
    p
}

struct Run {
    status: i32,
    summary: serde_json::Value,
    timings: BTreeMap<u32, f64>,
}

fn accept(dir: &Path) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_flatsaddle"))
        .args(["--out", dir.to_str().unwrap(), "accept", "--seed", SEED])
        .env("FLATSADDLE_GIT_REV", "acceptance")
        .output()
        .expect("binary runs");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let timings = stderr
        .lines()
        .filter_map(|l| {
            let mut w = l.strip_prefix("timing ")?.split_whitespace();
            Some((w.next()?.parse().ok()?, w.next()?.parse().ok()?))
        })
        .collect();
    let text = fs::read_to_string(dir.join("summary.json")).unwrap_or_else(|e| panic!("no summary ({e}); stderr:\n{stderr}"));
    Run { status: out.status.code().unwrap_or(-1), summary: serde_json::from_str(&text).unwrap(), timings }
}

/// Relative path → bytes of every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn main() {
    let (a, b) = (out_dir("accept-a"), out_dir("accept-b"));
    let first = accept(&a);
    let second = accept(&b);

    let criteria = first.summary["result"]["criteria"].as_array().expect("criteria list").clone();
    let mut verdicts: BTreeMap<u32, bool> = BTreeMap::new();
    for c in &criteria {
        let id = c["id"].as_u64().unwrap() as u32;
        let pass = c["pass"].as_bool().unwrap();
        let (_, name, budget) = CRITERIA[id as usize - 1];
        let secs = first.timings.get(&id).copied().unwrap_or(f64::NAN);
        println!(
            "{} {id:>2} {name}: {} [{}] ({secs:.1} s of {budget} s)",
            if pass { "PASS" } else { "FAIL" },
            c["measured"],
            c["tolerance"].as_str().unwrap_or_default()
        );
        verdicts.insert(id, pass);
    }

    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<&PathBuf> = ta.keys().chain(tb.keys()).filter(|k| ta.get(*k) != tb.get(*k)).collect();
    let deterministic = !ta.is_empty() && differing.is_empty();
    println!(
        "{} 14 determinism: {} files, {} differ",
        if deterministic { "PASS" } else { "FAIL" },
        ta.len(),
        differing.len()
    );
    verdicts.insert(14, deterministic);

    for (id, why) in KNOWN_UNATTAINABLE {
        println!("known unattainable {id}: {why}");
    }
    assert_eq!(verdicts.len(), 14, "every criterion reports");
    let unexpected: Vec<u32> = verdicts
        .iter()
        .filter(|&(id, &pass)| !pass && !KNOWN_UNATTAINABLE.iter().any(|k| k.0 == *id))
        .map(|(id, _)| *id)
        .collect();
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
    // accept exits 1 exactly when some criterion fails
    let any_fail = verdicts.iter().any(|(id, pass)| *id <= 13 && !pass);
    assert_eq!(first.status, i32::from(any_fail));
    assert_eq!(second.status, first.status);
    assert_eq!(second.summary, first.summary);
}
