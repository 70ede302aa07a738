use std::io;
use std::path::Path;

/// An example input shipped inside the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundledFile {
    pub name: &'static str,
    pub contents: &'static str,
}

macro_rules! bundle {
    ($($name:literal),* $(,)?) => {
        &[$(BundledFile { name: $name, contents: include_str!(concat!("../../data/examples/", $name)) }),*]
    };
}

const FILES: &[BundledFile] = bundle![
    "case_control.study.json",
    "cohort.decision.json",
    "cohort.study.json",
    "coin.study.json",
    "metoprolol.decision.json",
    "metoprolol.flip.json",
    "metoprolol.request.json",
    "metoprolol.study.json",
    "metoprolol.sweep.json",
    "trial_a.study.json",
    "trial_b.study.json",
];

pub fn bundled_examples() -> Vec<BundledFile> {
    FILES.to_vec()
}

/// Writes every bundled example into `dir`, creating it if needed.
pub fn write_examples(dir: &Path) -> io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    FILES
        .iter()
        .map(|f| {
            std::fs::write(dir.join(f.name), f.contents)?;
            Ok(f.name.to_string())
        })
        .collect()
}
