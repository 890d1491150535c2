//! Output files stamped with the config digest and seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub config_digest: String,
    pub seed: u64,
}

impl Stamp {
    pub fn comment(&self) -> String {
        format!("# config_digest={} seed={}\n", self.config_digest, self.seed)
    }
}

/// Writes one output file and reports where it went.
pub struct Outputs {
    dir: PathBuf,
    pub stamp: Stamp,
    pub written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path, stamp: Stamp) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            stamp,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&mut self, path: PathBuf) -> Result<BufWriter<File>> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        log::info!("writing {}", path.display());
        self.written.push(path);
        Ok(BufWriter::new(file))
    }

    /// Delimited table preceded by the stamp comment line.
    pub fn table<F>(&mut self, path: PathBuf, body: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let mut w = self.create(path)?;
        w.write_all(self.stamp.comment().as_bytes())?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn csv_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.path(name);
        self.table(path, |w| {
            let mut c = csv::Writer::from_writer(w);
            for r in rows {
                c.serialize(r)?;
            }
            c.flush()?;
            Ok(())
        })
    }

    /// JSON document with `schema`, `config_digest` and `seed` at the top.
    pub fn json<T: Serialize>(&mut self, path: PathBuf, schema: &str, body: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            schema: &'a str,
            config_digest: &'a str,
            seed: u64,
            #[serde(flatten)]
            body: &'a T,
        }
        let stamp = self.stamp.clone();
        let mut w = self.create(path)?;
        serde_json::to_writer_pretty(
            &mut w,
            &Doc {
                schema,
                config_digest: &stamp.config_digest,
                seed: stamp.seed,
                body,
            },
        )?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}
