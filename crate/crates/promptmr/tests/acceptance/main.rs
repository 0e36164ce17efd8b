//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_CRITERIA=1,2,9` restricts the run to a subset. The process
//! fails only when an exact criterion (1, 2, 3, 9) fails; the trained
//! criteria are reported as measured.

mod common;
mod empirical;
mod exact;
mod probe;

use std::process::ExitCode;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

const EXACT: [u8; 4] = [1, 2, 3, 9];

fn selected() -> Vec<u8> {
    match std::env::var("ACCEPTANCE_CRITERIA") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        _ => (1..=9).collect(),
    }
}

fn main() -> ExitCode {
    let want = selected();
    let on = |n: u8| want.contains(&n);
    let mut results: Vec<(u8, Outcome)> = Vec::new();
    let mut report = |n: u8, o: Outcome| {
        println!("criterion {n}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };

    if on(1) {
        report(1, exact::operators());
    }
    if on(2) {
        report(2, exact::gradients());
    }
    if on(3) {
        report(3, exact::degenerate());
    }

    let needs_desk = [4, 7, 8].iter().any(|&n| on(n));
    let tmp = tempfile::tempdir().expect("temp dir");
    let desk = if needs_desk { Some(empirical::desk_run(tmp.path())) } else { None };

    if on(4) {
        let (soft_ok, soft) = exact::prompt_softmax();
        let o = match &desk {
            Some(Ok(run)) => {
                let (probe_ok, probe) = empirical::prompt_probe(run);
                Outcome::new(soft_ok && probe_ok, format!("{soft}; {probe}"))
            }
            Some(Err(e)) => Outcome::new(false, format!("{soft}; desk run failed: {e}")),
            None => unreachable!(),
        };
        report(4, o);
    }
    if on(5) {
        report(5, empirical::adjacency());
    }
    if on(6) {
        report(6, empirical::prompts_vs_baseline());
    }
    for (n, f) in [(7u8, empirical::two_stage as fn(&empirical::DeskRun) -> Outcome), (8, empirical::quality_floor)] {
        if on(n) {
            let o = match &desk {
                Some(Ok(run)) => f(run),
                Some(Err(e)) => Outcome::new(false, format!("desk run failed: {e}")),
                None => unreachable!(),
            };
            report(n, o);
        }
    }
    if on(9) {
        report(9, exact::metrics());
    }

    results.sort_by_key(|r| r.0);
    let passed = results.iter().filter(|r| r.1.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    let exact_fail = results.iter().any(|(n, o)| EXACT.contains(n) && !o.pass);
    if exact_fail {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
