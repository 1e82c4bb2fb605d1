//! Every flag the parser accepts shows up in the matching `--help` output.

use std::process::Command;

use clap::CommandFactory;
use lambda_cli::Cli;

fn leaves(cmd: &clap::Command, path: Vec<String>, out: &mut Vec<(Vec<String>, Vec<String>)>) {
    let flags: Vec<String> = cmd.get_arguments().filter_map(|a| a.get_long()).map(|l| format!("--{l}")).collect();
    out.push((path.clone(), flags));
    for sub in cmd.get_subcommands() {
        let mut p = path.clone();
        p.push(sub.get_name().to_string());
        leaves(sub, p, out);
    }
}

#[test]
fn help_lists_every_flag() {
    let mut all = Vec::new();
    leaves(&Cli::command(), Vec::new(), &mut all);
    assert!(all.len() > 20, "expected a full command tree, got {}", all.len());
    for (path, flags) in all {
        let out = Command::new(env!("CARGO_BIN_EXE_lambda")).args(&path).arg("--help").output().unwrap();
        assert!(out.status.success(), "{path:?}: {}", String::from_utf8_lossy(&out.stderr));
        let help = String::from_utf8_lossy(&out.stdout);
        for f in flags {
            assert!(help.contains(&f), "`lambda {} --help` does not mention {f}", path.join(" "));
        }
    }
}

#[test]
fn version_and_bad_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_lambda")).arg("--version").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_lambda")).args(["bag", "info", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
