//! `sola` command line.
//!
//! `serve` runs the HTTP API. The other subcommands work offline: `stats`
//! and `verify` read bundle files; `export`, `import` and `fork` act on a
//! data directory directly and should not run while a server holds it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sola_core::analytics::{compute_deployment_stats, stats_csv, StatsOptions};
use sola_core::model::{CommunityId, TimeInterval};
use sola_core::portability::{
    export_bundle, fork_bundle, DeploymentBundle, ExportScope, ForkOptions,
};
use sola_core::service::{operator_membership, Service, ServiceOptions, SystemClock};
use sola_core::storage::FileStorage;

use crate::config::ApiConfig;

#[derive(Debug, Parser)]
#[command(name = "sola", version, about = "Coordination service for pop-up communities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a community from a data directory to a bundle file.
    Export {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        community: String,
        #[arg(long, value_enum, default_value = "full")]
        scope: ScopeArg,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Load a bundle file into a data directory as a new community.
    Import {
        #[command(flatten)]
        store: StoreArgs,
        bundle: PathBuf,
    },
    /// Start a new deployment from a bundle, either into a data directory or
    /// as a new bundle file.
    Fork {
        bundle: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        inherit_roles: bool,
        #[arg(long)]
        carry_archive: bool,
        #[arg(long, conflicts_with = "output", required_unless_present = "output")]
        data_dir: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print deployment statistics for bundle files as CSV.
    Stats {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        #[arg(long)]
        include_co_hosts: bool,
        #[arg(long)]
        from: Option<DateTime<Utc>>,
        #[arg(long)]
        to: Option<DateTime<Utc>>,
    },
    /// Check a bundle file's framing, hashes and references.
    Verify { bundle: PathBuf },
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub secrets_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Full,
    StructureOnly,
    Anonymized,
}

impl From<ScopeArg> for ExportScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Full => ExportScope::Full,
            ScopeArg::StructureOnly => ExportScope::StructureOnly,
            ScopeArg::Anonymized => ExportScope::Anonymized,
        }
    }
}

pub type CliResult = Result<(), Box<dyn std::error::Error>>;

fn open_store(data_dir: &Path, secrets_dir: Option<&Path>) -> Result<Service, Box<dyn std::error::Error>> {
    let secrets = secrets_dir.map(Path::to_path_buf).unwrap_or_else(|| data_dir.join("secrets"));
    let storage = Arc::new(FileStorage::with_secrets_dir(data_dir, secrets)?);
    Ok(Service::open(storage, Arc::new(SystemClock), ServiceOptions::default())?)
}

fn read_bundle(path: &Path) -> Result<DeploymentBundle, Box<dyn std::error::Error>> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    DeploymentBundle::from_file_bytes(&bytes).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write_output(path: Option<&Path>, bytes: &[u8], out: &mut dyn Write) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => out.write_all(bytes)?,
    }
    Ok(())
}

/// Statistics window: explicit bounds, else the span of live events.
fn window(bundle: &DeploymentBundle, from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> TimeInterval {
    let live = bundle.events.iter().filter(|e| e.state.is_live());
    let start = from.or_else(|| live.clone().map(|e| e.interval.start).min()).unwrap_or(bundle.community.created_at);
    let end = to.or_else(|| live.map(|e| e.interval.end).max()).unwrap_or(start).max(start);
    TimeInterval { start, end }
}

/// Runs one parsed command, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Serve { config } => {
            let config = ApiConfig::load(config.as_deref(), std::env::vars())?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(crate::serve(config))?;
        }
        Command::Export { store, community, scope, output } => {
            let svc = open_store(&store.data_dir, store.secrets_dir.as_deref())?;
            let bundle = svc.operator_export(&CommunityId::from(community), scope.into())?;
            write_output(output.as_deref(), &bundle.to_file_bytes(), out)?;
        }
        Command::Import { store, bundle } => {
            let svc = open_store(&store.data_dir, store.secrets_dir.as_deref())?;
            let bytes = std::fs::read(&bundle)?;
            let report = svc.import(None, &bytes)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Command::Fork { bundle, name, inherit_roles, carry_archive, data_dir, output } => {
            let options = ForkOptions { inherit_roles, carry_archive };
            if let Some(dir) = data_dir {
                let svc = open_store(&dir, None)?;
                let report = svc.fork(None, &std::fs::read(&bundle)?, &name, options)?;
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                let source = read_bundle(&bundle)?;
                let forked = fork_bundle(&source, &name, options, None, Utc::now())?;
                let operator = operator_membership(&forked.data.community.id);
                let bundle = export_bundle(
                    &forked.data,
                    sola_core::access::Actor::Member(&operator),
                    ExportScope::Full,
                )?;
                write_output(output.as_deref(), &bundle.to_file_bytes(), out)?;
            }
        }
        Command::Stats { bundles, include_co_hosts, from, to } => {
            let options = StatsOptions { include_co_hosts };
            let mut rows = Vec::new();
            for path in &bundles {
                let b = read_bundle(path)?;
                let stats = compute_deployment_stats(
                    &b.events,
                    &b.participation_records,
                    &window(&b, from, to),
                    b.community.timezone,
                    options,
                );
                rows.push((b.community.name.clone(), stats));
            }
            out.write_all(stats_csv(rows.iter().map(|(n, s)| (n.as_str(), s))).as_bytes())?;
        }
        Command::Verify { bundle } => {
            let b = read_bundle(&bundle)?;
            writeln!(
                out,
                "ok {} ({:?}, {} events, {} records) sha256 {}",
                b.community.name,
                b.scope,
                b.events.len(),
                b.participation_records.len(),
                b.content_hash
            )?;
        }
    }
    Ok(())
}
