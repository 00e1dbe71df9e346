//! `--help` output of every command against files in `tests/snapshots`.
//! Set `UPDATE_SNAPSHOTS=1` to rewrite them.

use std::path::PathBuf;
use std::process::Command;

const COMMANDS: [&str; 7] = ["inspect", "train", "colorize", "evaluate", "gradcheck", "study-serve", "study-report"];

fn help(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_colorfuse"))
        .args(args)
        .arg("--help")
        .env_remove("COLORFUSE_THREADS")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?} --help failed");
    String::from_utf8(out.stdout).unwrap()
}

fn check(name: &str, text: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots").join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::write(&path, text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
    assert_eq!(text, want, "help for `{name}` changed; rerun with UPDATE_SNAPSHOTS=1 if intended");
}

#[test]
fn top_level_help() {
    let text = help(&[]);
    for cmd in COMMANDS {
        assert!(text.contains(cmd), "{cmd} missing from top-level help");
    }
    check("colorfuse", &text);
}

#[test]
fn every_command_help() {
    for cmd in COMMANDS {
        let text = help(&[cmd]);
        assert!(text.contains("Exit codes:"), "{cmd} does not document exit codes");
        assert!(text.contains("--threads"), "{cmd} does not list the global thread cap");
        check(cmd, &text);
    }
}

#[test]
fn unknown_flags_are_usage_errors() {
    for cmd in COMMANDS {
        let out = Command::new(env!("CARGO_BIN_EXE_colorfuse")).args([cmd, "--no-such-flag"]).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{cmd}");
    }
}
