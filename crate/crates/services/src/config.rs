//! Run configuration and the manifest written next to every run's outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ahd_core::evolution::DatabaseConfig;
use ahd_core::kernels::KernelParams;
use ahd_core::kernelscript::{parse, seeds, KernelProgram};
use ahd_core::phy::{Link, LinkConfig};
use ahd_core::scoring::EvalProtocol;
use ahd_core::seed::{derive_seed, DEFAULT_SEED};
use ahd_core::tanner::{build_code, CodeSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mutator::MutatorConfig;
use crate::ServiceError;

/// Where the distributed services live. With no addresses the orchestrator
/// starts its own database and evaluators on loopback ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistributedConfig {
    pub db_addr: Option<String>,
    pub evaluator_addrs: Vec<String>,
    pub samplers: usize,
    pub evaluators: usize,
}

impl Default for DistributedConfig {
    fn default() -> Self {
        DistributedConfig { db_addr: None, evaluator_addrs: Vec::new(), samplers: 2, evaluators: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Code file in the `qcldpc` text form; the default rate-1/2 code at
    /// `lift` when absent.
    pub code: Option<PathBuf>,
    pub lift: usize,
    pub link: LinkConfig,
    pub protocol: EvalProtocol,
    pub database: DatabaseConfig,
    pub mutator: MutatorConfig,
    pub kernel_params: KernelParams,
    /// Built-in kernel used as the first candidate.
    pub seed_kernel: String,
    /// Kernel source overriding `seed_kernel`.
    pub seed_source: Option<String>,
    /// Candidates to generate, counting the seed.
    pub budget: u64,
    pub seed: u64,
    pub distributed: DistributedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            code: None,
            lift: 32,
            link: LinkConfig::default(),
            protocol: EvalProtocol::default(),
            database: DatabaseConfig::default(),
            mutator: MutatorConfig::default(),
            kernel_params: KernelParams::default(),
            seed_kernel: "offset-min-sum".into(),
            seed_source: None,
            budget: 500,
            seed: DEFAULT_SEED,
            distributed: DistributedConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that can be checked before a worker starts.
    pub fn validate(&self) -> Result<(), ServiceError> {
        let cfg = |e: String| ServiceError::Config(e);
        self.protocol.validate().map_err(|e| cfg(e.to_string()))?;
        self.database.validate().map_err(|e| cfg(e.to_string()))?;
        self.mutator.validate().map_err(|e| cfg(e.to_string()))?;
        self.kernel_params.validate().map_err(|e| cfg(e.to_string()))?;
        if self.budget == 0 {
            return Err(cfg("budget must be at least 1".into()));
        }
        self.seed_program()?;
        self.code_spec()?;
        Ok(())
    }

    pub fn code_spec(&self) -> Result<CodeSpec, ServiceError> {
        match &self.code {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                text.parse().map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))
            }
            None => CodeSpec::default_rate_half(self.lift).map_err(|e| ServiceError::Config(e.to_string())),
        }
    }

    pub fn build_link(&self) -> Result<Link, ServiceError> {
        let graph = build_code(self.code_spec()?).map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(Link::new(Arc::new(graph), self.link.clone()))
    }

    pub fn seed_program(&self) -> Result<KernelProgram, ServiceError> {
        let src = match &self.seed_source {
            Some(s) => s.clone(),
            None => seeds::by_name(&self.seed_kernel, &self.kernel_params)
                .ok_or_else(|| ServiceError::Config(format!("unknown seed kernel `{}`", self.seed_kernel)))?,
        };
        parse(&src).map_err(|e| ServiceError::Config(format!("seed program: {e}")))
    }

    /// Database settings with the reset seed tied to the run seed.
    pub fn database_config(&self) -> DatabaseConfig {
        DatabaseConfig { seed: derive_seed(self.seed, 0xdb), ..self.database.clone() }
    }

    /// Stable identifier of (config, seed).
    pub fn run_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(self.seed.to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// `# run_id=.. seed=.. tb_batch_seed=..` line opening every CSV.
    pub fn csv_comment(&self) -> String {
        format!("# run_id={} seed={} tb_batch_seed={}", self.run_id(), self.seed, self.protocol.tb_batch_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSeeds {
    pub run: u64,
    pub tb_batch: u64,
    pub database: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub code_spec_hash: String,
    pub protocol_hash: Option<String>,
    pub seeds: ManifestSeeds,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub out_dir: PathBuf,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, out_dir: &Path) -> Result<Self, ServiceError> {
        Ok(RunManifest {
            run_id: cfg.run_id(),
            command: command.to_string(),
            config: serde_json::to_value(cfg)?,
            code_spec_hash: sha256_hex(cfg.code_spec()?.to_text().as_bytes()),
            protocol_hash: None,
            seeds: ManifestSeeds { run: cfg.seed, tb_batch: cfg.protocol.tb_batch_seed, database: cfg.database_config().seed },
            started_at: unix_now(),
            finished_at: None,
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ServiceError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
