use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use epistoch::model::ModelDocument;
use epistoch::ModelSpec;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub struct Input {
    pub digest: String,
    pub doc: ModelDocument,
    pub spec: ModelSpec,
    pub out: Option<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything that determines the contents of a run's outputs.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub input_digest: String,
    pub master_seed: Option<u64>,
    pub replica_count: Option<usize>,
    pub flags: serde_json::Value,
    pub outputs: Vec<String>,
    pub version: &'static str,
}

/// Collects result files under `--out`; without it nothing is written.
pub struct Outputs {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: Option<PathBuf>) -> anyhow::Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Outputs { dir, files: Vec::new() })
    }

    pub fn enabled(&self) -> bool {
        self.dir.is_some()
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut dyn Write) -> anyhow::Result<()>,
    {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn finish(
        mut self,
        command: &str,
        input: &Input,
        seed: Option<u64>,
        replicas: Option<usize>,
        flags: serde_json::Value,
    ) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: command.to_string(),
            input_digest: format!("sha256:{}", input.digest),
            master_seed: seed,
            replica_count: replicas,
            flags,
            outputs: self.files.clone(),
            version: env!("CARGO_PKG_VERSION"),
        };
        self.write_json("manifest.json", &manifest)
    }
}

pub fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| anyhow::anyhow!("bad {what} `{x}`")))
        .collect()
}
