//! Where each artifact lives under the output directory, and staged writes.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const MANIFESTS: &str = "manifests";
pub const FEATURES: &str = "features";
pub const INDICATORS: &str = "indicators";
pub const LATENT: &str = "latent";
pub const CORPUS: &str = "corpus";
pub const CHECKPOINTS: &str = "checkpoints";
pub const EVAL: &str = "eval";
pub const STRATEGY_EVAL: &str = "eval/strategies.json";
pub const TRANSFER_EVAL: &str = "eval/transfer.json";
pub const RESPONSE_EVAL: &str = "eval/responses.json";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSONL: &str = "report.jsonl";

pub fn manifest_file(name: &str) -> PathBuf {
    Path::new(MANIFESTS).join(format!("{name}.tsv"))
}

pub fn feature_file(name: &str) -> PathBuf {
    Path::new(FEATURES).join(format!("{name}.tsv"))
}

pub fn strategy_checkpoint(slug: &str) -> PathBuf {
    Path::new(CHECKPOINTS).join(format!("{slug}.ckpt"))
}

pub fn transfer_checkpoint(source: &str) -> PathBuf {
    Path::new(CHECKPOINTS).join("transfer").join(format!("{source}.ckpt"))
}

/// Files written into a temporary directory inside the output directory and
/// moved into place only by [`Staging::commit`]. Dropping an uncommitted
/// staging area removes it.
pub struct Staging {
    root: PathBuf,
    dir: tempfile::TempDir,
    files: Vec<PathBuf>,
}

impl Staging {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".staging-")
            .tempdir_in(root)
            .with_context(|| format!("cannot create staging directory in {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            dir,
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
        let rel = rel.as_ref();
        let path = self.dir.path().join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("cannot stage {}", rel.display()))?;
        self.files.push(rel.to_path_buf());
        Ok(())
    }

    /// Renames every staged file to its final location; returns the final
    /// paths in write order.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut done = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let dest = self.root.join(rel);
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
            }
            std::fs::rename(self.dir.path().join(rel), &dest).with_context(|| format!("cannot move output into {}", dest.display()))?;
            done.push(dest);
        }
        Ok(done)
    }
}

/// `*.tsv` files of `dir` sorted by name; an error names `dir` when it is
/// missing or holds none.
pub fn list_tsv(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("expected upstream artifacts in {}", dir.display()))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    out.sort();
    if out.is_empty() {
        anyhow::bail!("no .tsv files in {}", dir.display());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_lands_until_commit() {
        let root = tempfile::tempdir().unwrap();
        let mut s = Staging::new(root.path()).unwrap();
        s.write("a/b.txt", "x").unwrap();
        assert!(!root.path().join("a/b.txt").exists());
        s.commit().unwrap();
        assert_eq!(std::fs::read_to_string(root.path().join("a/b.txt")).unwrap(), "x");
        let leftovers: Vec<_> = std::fs::read_dir(root.path()).unwrap().filter_map(|e| e.ok()).collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn dropped_staging_leaves_no_files() {
        let root = tempfile::tempdir().unwrap();
        {
            let mut s = Staging::new(root.path()).unwrap();
            s.write("x.txt", "x").unwrap();
        }
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
    }
}
