#![allow(dead_code)]

use std::path::Path;
use std::sync::OnceLock;

use template_fit::assets::{shipped_rig_dir, Character};

pub fn shipped() -> &'static Character {
    static CELL: OnceLock<Character> = OnceLock::new();
    CELL.get_or_init(|| Character::load_dir(&shipped_rig_dir(), None).expect("shipped rig loads"))
}

/// Runs the command line in-process and returns its exit code.
pub fn cli(args: &[&str]) -> i32 {
    template_fit::cli::run(std::iter::once("template-fit").chain(args.iter().copied()))
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
