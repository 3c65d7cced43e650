//! Run configuration shared by the subcommands. Values resolve as
//! command-line flag, then `--config` file, then built-in default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use oodkit::ScorerKind;
use serde::Deserialize;

use crate::UsageError;

/// Default repetition count: three independently trained networks per cell.
pub const DEFAULT_REPS: usize = 3;

/// JSON config file schema.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub manifest: Vec<PathBuf>,
    pub scorers: Vec<String>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut cfg.manifest {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        if let Some(o) = &mut cfg.out {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        Ok(cfg)
    }
}

/// Flags every pipeline subcommand accepts.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Dataset manifest; repeat (or comma-separate) for a multi-dataset grid.
    #[arg(long, value_delimiter = ',')]
    pub manifest: Vec<PathBuf>,
    /// Comma-separated scorers, e.g. baseline,cosine,maha-sum.
    #[arg(long)]
    pub scorers: Option<String>,
    /// Master seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repetitions with independently trained heads.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub manifests: Vec<PathBuf>,
    pub scorers: Vec<String>,
    pub seed: u64,
    pub reps: usize,
    pub out: PathBuf,
}

impl Resolved {
    pub fn merge(
        command: &str,
        flags: &CommonArgs,
        file: Option<&RunConfig>,
        default_scorers: &[&str],
        default_reps: usize,
    ) -> anyhow::Result<Self> {
        let empty = RunConfig::default();
        let file = file.unwrap_or(&empty);
        if let Some(c) = &file.command {
            if c != command {
                return Err(UsageError(format!("config file is for `{c}`, not `{command}`")).into());
            }
        }
        let manifests = if flags.manifest.is_empty() {
            file.manifest.clone()
        } else {
            flags.manifest.clone()
        };
        let scorers: Vec<String> = match (&flags.scorers, file.scorers.is_empty()) {
            (Some(s), _) => s
                .split(',')
                .map(|x| x.trim().to_string())
                .filter(|x| !x.is_empty())
                .collect(),
            (None, false) => file.scorers.clone(),
            (None, true) => default_scorers.iter().map(|s| s.to_string()).collect(),
        };
        if scorers.is_empty() {
            return Err(UsageError("at least one scorer must be selected".into()).into());
        }
        let reps = flags.reps.or(file.reps).unwrap_or(default_reps);
        if reps == 0 {
            return Err(UsageError("--reps must be at least 1".into()).into());
        }
        Ok(Resolved {
            manifests,
            scorers,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            reps,
            out: flags
                .out
                .clone()
                .or_else(|| file.out.clone())
                .unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    pub fn single_manifest(&self) -> anyhow::Result<&Path> {
        match self.manifests.as_slice() {
            [m] => Ok(m),
            [] => Err(UsageError("--manifest is required".into()).into()),
            _ => Err(UsageError("this command takes a single --manifest".into()).into()),
        }
    }

    /// Per-sample scorer kinds; `pad` is rejected here.
    pub fn scorer_kinds(&self) -> anyhow::Result<Vec<ScorerKind>> {
        self.scorers
            .iter()
            .map(|s| s.parse::<ScorerKind>().map_err(|e| UsageError(e.to_string()).into()))
            .collect()
    }
}

pub fn parse_split(s: &str) -> anyhow::Result<(usize, usize)> {
    let Some((a, b)) = s.split_once(':') else {
        bail!(UsageError(format!("split must look like 6:13, got {s:?}")));
    };
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| UsageError(format!("bad split count {v:?}")))
    };
    Ok((parse(a)?, parse(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_beat_defaults() {
        let file = RunConfig {
            scorers: vec!["cosine".into()],
            seed: Some(4),
            reps: Some(7),
            ..Default::default()
        };
        let flags = CommonArgs {
            seed: Some(9),
            ..Default::default()
        };
        let r = Resolved::merge("eval-ood", &flags, Some(&file), &["baseline"], 3).unwrap();
        assert_eq!(r.seed, 9);
        assert_eq!(r.reps, 7);
        assert_eq!(r.scorers, ["cosine"]);
        assert_eq!(r.out, PathBuf::from("out"));
        let r = Resolved::merge("eval-ood", &CommonArgs::default(), None, &["baseline"], 3).unwrap();
        assert_eq!((r.seed, r.reps), (0, 3));
        assert_eq!(r.scorers, ["baseline"]);
    }

    #[test]
    fn config_for_another_command_is_a_usage_error() {
        let file = RunConfig {
            command: Some("eval-shift".into()),
            ..Default::default()
        };
        let err = Resolved::merge("eval-ood", &CommonArgs::default(), Some(&file), &["baseline"], 3).unwrap_err();
        assert!(err.is::<UsageError>());
    }

    #[test]
    fn split_parsing() {
        assert_eq!(parse_split("6:13").unwrap(), (6, 13));
        assert!(parse_split("6-13").is_err());
    }
}
