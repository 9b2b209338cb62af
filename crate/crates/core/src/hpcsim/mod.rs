//! Resource suggestions and a discrete-event model of a partitioned batch cluster.

mod sched;

pub use sched::{Backend, JobId, JobRecord, JobState, RunOutcome, Scheduler, TraceEvent};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qeio::{parse_input, QeError};

const BUILTIN: &str = include_str!("../../data/cluster.toml");
pub const CLUSTER_FORMAT: &str = "matscreen-cluster v1";
pub const RESOURCE_FORMAT: &str = "matscreen-res v1";

#[derive(Debug, Error)]
pub enum HpcError {
    #[error("cluster config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no partition can run {ntasks} tasks for {minutes} min")]
    NoFeasiblePartition { ntasks: usize, minutes: u32 },
    #[error("no resource suggestion for {0}")]
    MissingSuggestion(PathBuf),
    #[error("bad resource file {path}: {reason}")]
    BadSuggestion { path: PathBuf, reason: String },
    #[error("unknown job id {0}")]
    UnknownJobId(JobId),
    #[error("job {id} ({input}) is {state}, not done")]
    JobNotFinished { id: JobId, input: String, state: JobState },
    #[error(transparent)]
    Qe(#[from] QeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HpcError + '_ {
    move |source| HpcError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub name: String,
    pub node_count: u32,
    pub cores_per_node: u32,
    pub max_walltime_minutes: u32,
}

impl Partition {
    pub fn total_cores(&self) -> u64 {
        self.node_count as u64 * self.cores_per_node as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub format: String,
    pub c0_seconds: f64,
    pub c1_seconds: f64,
    #[serde(rename = "partition")]
    pub partitions: Vec<Partition>,
}

impl ClusterSpec {
    pub fn parse(text: &str) -> Result<Self, HpcError> {
        let c: ClusterSpec = toml::from_str(text).map_err(|e| HpcError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("shipped cluster config parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HpcError> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), HpcError> {
        if self.format != CLUSTER_FORMAT {
            return Err(HpcError::Config(format!("unsupported format {:?}", self.format)));
        }
        if self.partitions.is_empty() {
            return Err(HpcError::Config("no partitions".into()));
        }
        if !(self.c0_seconds >= 0.0 && self.c1_seconds >= 0.0) {
            return Err(HpcError::Config("duration constants must be >= 0".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.partitions {
            if p.node_count < 1 || p.cores_per_node < 1 || p.max_walltime_minutes < 1 {
                return Err(HpcError::Config(format!("partition {} needs at least one node, core and minute", p.name)));
            }
            if !names.insert(p.name.as_str()) {
                return Err(HpcError::Config(format!("duplicate partition {}", p.name)));
            }
        }
        Ok(())
    }

    pub fn partition(&self, name: &str) -> Option<&Partition> {
        self.partitions.iter().find(|p| p.name == name)
    }

    /// Requested walltime: three times the duration estimate, rounded up to 10 minutes.
    pub fn runtime_minutes(&self, electron_maxstep: u32) -> u32 {
        let estimate = self.c0_seconds + self.c1_seconds * electron_maxstep as f64;
        let minutes = (3.0 * estimate / 60.0 - 1e-9).ceil().max(1.0) as u32;
        minutes.div_ceil(10) * 10
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSuggestion {
    pub format: String,
    pub input: String,
    pub partition: String,
    pub nnodes: u32,
    pub ntasks: usize,
    pub runtime_minutes: u32,
    pub script: String,
}

/// Resource file that belongs to an input file.
pub fn resource_path(input: &Path) -> PathBuf {
    input.with_extension("res")
}

/// Output file a job writes.
pub fn output_path(input: &Path) -> PathBuf {
    input.with_extension("pwo")
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `#SBATCH` preamble for one job.
pub fn sbatch_header(job_name: &str, partition: &str, nnodes: u32, ntasks: usize, minutes: u32) -> String {
    format!(
        "#!/bin/bash\n\
         #SBATCH --job-name={job_name}\n\
         #SBATCH --partition={partition}\n\
         #SBATCH --nodes={nnodes}\n\
         #SBATCH --ntasks={ntasks}\n\
         #SBATCH --time={:02}:{:02}:00\n",
        minutes / 60,
        minutes % 60,
    )
}

/// Job body that runs pw.x on `input`.
pub fn run_line(input: &Path) -> String {
    format!("srun pw.x -in {} > {}\n", file_name(input), file_name(&output_path(input)))
}

fn submission_script(input: &Path, partition: &str, nnodes: u32, ntasks: usize, minutes: u32) -> String {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    sbatch_header(&stem, partition, nnodes, ntasks, minutes) + &run_line(input)
}

impl ResourceSuggestion {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("suggestions serialize")
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let s: ResourceSuggestion = toml::from_str(text).map_err(|e| e.to_string())?;
        if s.format != RESOURCE_FORMAT {
            return Err(format!("unsupported format {:?}", s.format));
        }
        if s.nnodes < 1 || s.ntasks < 1 {
            return Err("nnodes and ntasks must be >= 1".into());
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), HpcError> {
        fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, HpcError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(HpcError::MissingSuggestion(path.to_path_buf()))
            }
            Err(e) => return Err(io_err(path)(e)),
        };
        Self::from_text(&text).map_err(|reason| HpcError::BadSuggestion {
            path: path.to_path_buf(),
            reason,
        })
    }
}

/// Pick the partition for `ntasks` tasks and a walltime, without touching disk.
pub fn choose_partition(cluster: &ClusterSpec, ntasks: usize, minutes: u32) -> Result<(&Partition, u32), HpcError> {
    cluster
        .partitions
        .iter()
        .filter_map(|p| {
            let nnodes = ntasks.div_ceil(p.cores_per_node as usize) as u32;
            (nnodes <= p.node_count && minutes <= p.max_walltime_minutes).then_some((p, nnodes))
        })
        .min_by(|(a, na), (b, nb)| {
            let waste = |p: &Partition, n: u32| n as u64 * p.cores_per_node as u64 - ntasks as u64;
            (waste(a, *na), &a.name).cmp(&(waste(b, *nb), &b.name))
        })
        .ok_or(HpcError::NoFeasiblePartition { ntasks, minutes })
}

/// Suggest resources for an input file and persist them next to it.
pub fn suggest_resources(input: impl AsRef<Path>, cluster: &ClusterSpec) -> Result<ResourceSuggestion, HpcError> {
    let input = input.as_ref();
    let (spec, structure) = parse_input(input)?;
    let ntasks = structure.len();
    let minutes = cluster.runtime_minutes(spec.electron_maxstep);
    let (p, nnodes) = choose_partition(cluster, ntasks, minutes)?;
    let s = ResourceSuggestion {
        format: RESOURCE_FORMAT.to_string(),
        input: file_name(input),
        partition: p.name.clone(),
        nnodes,
        ntasks,
        runtime_minutes: minutes,
        script: submission_script(input, &p.name, nnodes, ntasks, minutes),
    };
    s.save(&resource_path(input))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(parts: &[(&str, u32, u32, u32)]) -> ClusterSpec {
        ClusterSpec {
            format: CLUSTER_FORMAT.into(),
            c0_seconds: 30.0,
            c1_seconds: 2.0,
            partitions: parts
                .iter()
                .map(|&(name, node_count, cores_per_node, max_walltime_minutes)| Partition {
                    name: name.into(),
                    node_count,
                    cores_per_node,
                    max_walltime_minutes,
                })
                .collect(),
        }
    }

    #[test]
    fn builtin_config() {
        let c = ClusterSpec::builtin();
        assert_eq!(c.partitions.len(), 3);
        assert_eq!(c.partition("standard").unwrap().total_cores(), 288);
    }

    #[test]
    fn config_invariants() {
        assert!(cluster(&[("a", 1, 1, 1), ("a", 1, 1, 1)]).validate().is_err());
        assert!(cluster(&[("a", 0, 1, 1)]).validate().is_err());
        assert!(cluster(&[]).validate().is_err());
        assert!(ClusterSpec::parse("format = 'x'").is_err());
    }

    #[test]
    fn runtime_heuristic() {
        let c = ClusterSpec::builtin();
        // 3 * (30 + 2 * 200) s = 21.5 min
        assert_eq!(c.runtime_minutes(200), 30);
        // 3 * (30 + 600) s = 31.5 min
        assert_eq!(c.runtime_minutes(300), 40);
        // 3 * (30 + 2 * 85) s = 10 min exactly
        assert_eq!(c.runtime_minutes(85), 10);
    }

    #[test]
    fn partition_choice() {
        let c = cluster(&[("wide", 2, 64, 100), ("b", 4, 36, 100), ("a", 4, 36, 100)]);
        let (p, n) = choose_partition(&c, 24, 30).unwrap();
        assert_eq!((p.name.as_str(), n), ("a", 1));
        let (p, n) = choose_partition(&c, 64, 30).unwrap();
        assert_eq!((p.name.as_str(), n), ("wide", 1));
        let (p, n) = choose_partition(&c, 100, 30).unwrap();
        assert_eq!((p.name.as_str(), n), ("a", 3));
        let small = cluster(&[("only", 1, 64, 100)]);
        assert!(matches!(
            choose_partition(&small, 100, 30),
            Err(HpcError::NoFeasiblePartition { ntasks: 100, .. })
        ));
        assert!(choose_partition(&small, 2, 101).is_err());
    }

    #[test]
    fn suggestion_text_round_trip() {
        let s = ResourceSuggestion {
            format: RESOURCE_FORMAT.into(),
            input: "x.pwi".into(),
            partition: "debug".into(),
            nnodes: 1,
            ntasks: 2,
            runtime_minutes: 30,
            script: submission_script(Path::new("x.pwi"), "debug", 1, 2, 30),
        };
        let t = s.to_text();
        assert_eq!(ResourceSuggestion::from_text(&t).unwrap(), s);
        assert_eq!(ResourceSuggestion::from_text(&t).unwrap().to_text(), t);
        assert!(s.script.contains("--ntasks=2") && s.script.contains("--time=00:30:00"));
        assert!(s.script.contains("x.pwo"));
    }
}
