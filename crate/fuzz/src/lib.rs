//! Corpus replay for builds without libFuzzer.

use std::path::{Path, PathBuf};

/// Runs `check` on every file under the given paths, or under
/// `corpus/<target>` when no paths are given.
pub fn replay(target: &str, check: fn(&[u8])) {
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let roots = if args.is_empty() {
        vec![Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target)]
    } else {
        args
    };
    let mut count = 0;
    for root in roots {
        let files: Vec<PathBuf> = if root.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(&root)
                .unwrap_or_else(|e| panic!("reading {}: {e}", root.display()))
                .map(|e| e.expect("dir entry").path())
                .collect();
            v.sort();
            v
        } else {
            vec![root]
        };
        for f in files {
            let data = std::fs::read(&f).unwrap_or_else(|e| panic!("reading {}: {e}", f.display()));
            check(&data);
            count += 1;
        }
    }
    println!("{target}: replayed {count} inputs");
}
