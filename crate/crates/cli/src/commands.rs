use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time;

use rayon::prelude::*;
use thiserror::Error;
use unipos_core::airsim::{run_scenario, TraceReport, ValidationError};
use unipos_core::bidir::{compare_protocols, BidirError, Comparison};

use crate::report::{read_jsonl, summarize, write_csv, write_jsonl, ReportRecord};
use crate::schema::{load_scenario, LoadError, LoadedScenario, Protocol};

pub const EXIT_OK: i32 = 0;
pub const EXIT_LOAD: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{}: {source}", file.display())]
    Scenario {
        file: PathBuf,
        #[source]
        source: ValidationError,
    },
    #[error("{}: {source}", file.display())]
    Comparison {
        file: PathBuf,
        #[source]
        source: BidirError,
    },
}

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct Execution {
    pub record: ReportRecord,
    pub trace: TraceReport,
    pub comparison: Option<Comparison>,
}

pub fn execute(loaded: &LoadedScenario) -> Result<Execution, RunError> {
    let file = || loaded.source.clone();
    match loaded.protocol {
        Protocol::Unidirectional => {
            let trace = run_scenario(&loaded.scenario).map_err(|source| RunError::Scenario {
                file: file(),
                source,
            })?;
            Ok(Execution {
                record: ReportRecord::from_trace(&trace, Protocol::Unidirectional, None),
                trace,
                comparison: None,
            })
        }
        Protocol::Bidirectional | Protocol::Compare => {
            let cmp = compare_protocols(&loaded.scenario, &loaded.bidir).map_err(|source| {
                RunError::Comparison {
                    file: file(),
                    source,
                }
            })?;
            let record = if loaded.protocol == Protocol::Compare {
                ReportRecord::from_trace(
                    &cmp.unidirectional,
                    Protocol::Compare,
                    Some(&cmp.bidirectional),
                )
            } else {
                ReportRecord::from_bidir(&cmp.unidirectional, &cmp.bidirectional)
            };
            Ok(Execution {
                record,
                trace: cmp.unidirectional.clone(),
                comparison: Some(cmp),
            })
        }
    }
}

pub fn run_path(path: &Path, seed: Option<u64>, timing: bool) -> Result<ReportRecord, RunError> {
    let start = time::Instant::now();
    let loaded = load_scenario(path, seed)?;
    let mut record = execute(&loaded)?.record;
    if timing {
        record.runtime_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(record)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub timing: bool,
}

/// Runs every file, in parallel, and returns results in input order.
pub fn run_all(paths: &[PathBuf], opts: &RunOptions) -> Vec<Result<ReportRecord, RunError>> {
    let work = || {
        paths
            .par_iter()
            .map(|p| run_path(p, opts.seed, opts.timing))
            .collect::<Vec<_>>()
    };
    match opts.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        },
        None => work(),
    }
}

/// The `run` command. Diagnostics go to `err`; records to `--out` or `out`.
pub fn run_command(
    paths: &[PathBuf],
    opts: &RunOptions,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let results = run_all(paths, opts);
    let mut records = Vec::with_capacity(results.len());
    let mut failed = false;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                failed = true;
                let _ = writeln!(err, "error: {e}");
            }
        }
    }

    let written = match &opts.out {
        Some(path) => {
            File::create(path).and_then(|f| emit(BufWriter::new(f), opts.format, &records))
        }
        None => emit(&mut *out, opts.format, &records),
    };
    if let Err(e) = written {
        let _ = writeln!(err, "error: writing report: {e}");
        return EXIT_IO;
    }
    if failed {
        EXIT_LOAD
    } else {
        EXIT_OK
    }
}

fn emit<W: Write>(w: W, format: Format, records: &[ReportRecord]) -> io::Result<()> {
    match format {
        Format::Jsonl => write_jsonl(w, records),
        Format::Csv => write_csv(w, records),
    }
}

pub fn validate_command(paths: &[PathBuf], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut code = EXIT_OK;
    for p in paths {
        match load_scenario(p, None) {
            Ok(l) => {
                let _ = writeln!(
                    out,
                    "ok {} ({}, {} stations, {} attacks)",
                    p.display(),
                    l.protocol.name(),
                    l.scenario.stations.len(),
                    l.scenario.attacks.len()
                );
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                code = EXIT_LOAD;
            }
        }
    }
    code
}

pub fn report_command(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let records = match File::open(path) {
        Ok(f) => read_jsonl(BufReader::new(f)),
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return EXIT_IO;
        }
    };
    match records {
        Ok(r) => match out.write_all(summarize(&r).as_bytes()) {
            Ok(()) => EXIT_OK,
            Err(_) => EXIT_IO,
        },
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            EXIT_LOAD
        }
    }
}
