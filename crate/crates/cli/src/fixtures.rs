//! Golden fixtures: a fixed set of small CLI runs whose output digests and
//! CSV heads are committed, so behavioural drift shows up as a diff.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::output::{ensure_dir, write_text};

pub const MANIFEST: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str = "name\tfile\tsha256\tcommand";
/// Header line plus this many rows are kept per file.
pub const HEAD_ROWS: usize = 10;

pub struct Fixture {
    pub name: &'static str,
    /// Arguments after `dif`, without `--out`.
    pub args: &'static [&'static str],
}

pub const FIXTURES: [Fixture; 4] = [
    Fixture {
        name: "illustrate",
        args: &["illustrate"],
    },
    Fixture {
        name: "example1d",
        args: &["example1d"],
    },
    Fixture {
        name: "track-sweep",
        args: &[
            "track-sweep",
            "--seed",
            "7",
            "--mc-runs",
            "3",
            "--variants",
            "ekf,iekf,diekf,ukf,diukf",
            "--set",
            "track.q1_values=0.01,1",
            "--set",
            "track.sigma_sq_values=0.1,10",
            "--set",
            "track.steps=40",
        ],
    },
    Fixture {
        name: "tdoa-sweep",
        args: &[
            "tdoa-sweep",
            "--seed",
            "7",
            "--mc-runs",
            "2",
            "--variants",
            "ekf,iekf,diekf,ls-diekf",
            "--set",
            "tdoa.q1_values=0.0001,0.01",
            "--set",
            "tdoa.q2_values=0.001,0.1",
            "--set",
            "tdoa.steps=40",
        ],
    },
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub file: String,
    pub digest: String,
    pub command: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn head(text: &str) -> String {
    text.lines().take(HEAD_ROWS + 1).fold(String::new(), |mut s, l| {
        s.push_str(l);
        s.push('\n');
        s
    })
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(dir, err)))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    Ok(files)
}

pub fn render_manifest(entries: &[Entry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", e.name, e.file, e.digest, e.command);
    }
    out
}

pub fn parse_manifest(text: &str) -> Vec<Entry> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let mut it = l.splitn(4, '\t');
            Some(Entry {
                name: it.next()?.to_string(),
                file: it.next()?.to_string(),
                digest: it.next()?.to_string(),
                command: it.next()?.to_string(),
            })
        })
        .collect()
}

/// Runs every fixture into `work` through `exec` and digests the outputs.
/// Heads are written below `heads` when given.
pub fn generate<E>(work: &Path, heads: Option<&Path>, mut exec: E) -> Result<Vec<Entry>, CliError>
where
    E: FnMut(Vec<String>) -> Result<(), CliError>,
{
    let mut entries = Vec::new();
    for fx in &FIXTURES {
        let out = work.join(fx.name);
        let mut args: Vec<String> = fx.args.iter().map(|s| s.to_string()).collect();
        args.push("--out".into());
        args.push(out.display().to_string());
        exec(args)?;
        let command = format!("dif {}", fx.args.join(" "));
        for path in sorted_files(&out)? {
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            let file = path
                .file_name()
                .expect("files have names")
                .to_string_lossy()
                .into_owned();
            if let Some(dir) = heads {
                let d = dir.join(fx.name);
                ensure_dir(&d)?;
                write_text(&d.join(&file), &head(&String::from_utf8_lossy(&bytes)))?;
            }
            entries.push(Entry {
                name: fx.name.to_string(),
                file,
                digest: sha256_hex(&bytes),
                command: command.clone(),
            });
        }
    }
    Ok(entries)
}

/// Lines describing every difference between two manifests.
pub fn diff(expected: &[Entry], actual: &[Entry]) -> Vec<String> {
    let mut out = Vec::new();
    for e in expected {
        match actual.iter().find(|a| a.name == e.name && a.file == e.file) {
            None => out.push(format!("{}/{}: missing from the regenerated outputs", e.name, e.file)),
            Some(a) if a.digest != e.digest => out.push(format!(
                "{}/{}: digest {} differs from the recorded {}",
                e.name, e.file, a.digest, e.digest
            )),
            Some(a) if a.command != e.command => {
                out.push(format!("{}/{}: command changed to '{}'", e.name, e.file, a.command))
            }
            Some(_) => {}
        }
    }
    for a in actual {
        if !expected.iter().any(|e| e.name == a.name && e.file == a.file) {
            out.push(format!("{}/{}: new output not in the manifest", a.name, a.file));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip_and_diff() {
        let entries = vec![
            Entry {
                name: "a".into(),
                file: "x.csv".into(),
                digest: "00".into(),
                command: "dif a".into(),
            },
            Entry {
                name: "b".into(),
                file: "y.csv".into(),
                digest: "11".into(),
                command: "dif b --seed 1".into(),
            },
        ];
        let parsed = parse_manifest(&render_manifest(&entries));
        assert_eq!(parsed, entries);
        assert!(diff(&entries, &parsed).is_empty());
        let mut changed = parsed.clone();
        changed[1].digest = "12".into();
        changed.remove(0);
        let d = diff(&entries, &changed);
        assert_eq!(d.len(), 2, "{d:?}");
        assert!(d[0].starts_with("a/x.csv: missing"));
        assert!(d[1].starts_with("b/y.csv: digest 12"));
    }

    #[test]
    fn head_keeps_header_and_ten_rows() {
        let text: String = (0..20).map(|i| format!("{i}\n")).collect();
        assert_eq!(head(&text).lines().count(), HEAD_ROWS + 1);
        assert_eq!(head("a\nb\n"), "a\nb\n");
    }
}
