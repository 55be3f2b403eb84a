use std::path::{Path, PathBuf};

use anyhow::Context;
use softswim::config::RunConfig;

/// Files written by one command, recorded with the config hash in `manifest-<command>.json`.
pub struct Outputs {
    dir: PathBuf,
    hash: String,
    command: &'static str,
    files: Vec<PathBuf>,
    extra: serde_json::Map<String, serde_json::Value>,
}

impl Outputs {
    /// Writes the resolved config next to the results so the hash can be reproduced.
    pub fn new(cfg: &RunConfig, command: &'static str) -> anyhow::Result<Outputs> {
        let dir = cfg.output_dir.clone();
        let resolved = dir.join("config.resolved.toml");
        std::fs::write(&resolved, cfg.to_toml()).with_context(|| format!("writing {}", resolved.display()))?;
        Ok(Outputs { dir, hash: cfg.hash(), command, files: vec![resolved], extra: Default::default() })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.dir.join(name)
    }

    pub fn subdir(&self, name: &str) -> anyhow::Result<PathBuf> {
        let d = self.dir.join(name);
        std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    pub fn add(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    pub fn note(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.extra.insert(key.to_string(), value.into());
    }

    /// Prefixes a CSV written by the library with a `# config_hash=` comment line.
    pub fn add_csv(&mut self, path: PathBuf) -> anyhow::Result<()> {
        let body = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        if !body.starts_with("# config_hash=") {
            std::fs::write(&path, format!("# config_hash={}\n{body}", self.hash))?;
        }
        self.files.push(path);
        Ok(())
    }

    pub fn finish(self) -> anyhow::Result<()> {
        let rel = |p: &PathBuf| p.strip_prefix(&self.dir).unwrap_or(p).display().to_string();
        let mut doc = serde_json::Map::new();
        doc.insert("command".into(), self.command.into());
        doc.insert("config_hash".into(), self.hash.clone().into());
        doc.insert("files".into(), self.files.iter().map(rel).collect::<Vec<_>>().into());
        doc.extend(self.extra);
        let path = self.dir.join(format!("manifest-{}.json", self.command));
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(doc))?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
