use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::dataset::DesignSample;
use crate::error::PipelineError;

use super::InterpretationResult;

#[derive(Debug)]
pub enum SampleOutcome {
    Done(InterpretationResult),
    Failed {
        sample_id: String,
        error: PipelineError,
    },
    /// Not started because the batch was cancelled.
    Skipped {
        sample_id: String,
    },
}

impl SampleOutcome {
    pub fn sample_id(&self) -> &str {
        match self {
            SampleOutcome::Done(r) => &r.sample_id,
            SampleOutcome::Failed { sample_id, .. } | SampleOutcome::Skipped { sample_id } => {
                sample_id
            }
        }
    }
}

/// Interpret `samples` on a pool of `workers` threads. Outcomes come back in
/// input order whatever the scheduling. Once `cancel` is set, samples not yet
/// started are skipped and in-flight ones finish.
pub fn run_batch<F>(
    samples: &[DesignSample],
    workers: usize,
    cancel: &AtomicBool,
    interpret: F,
) -> Result<Vec<SampleOutcome>, PipelineError>
where
    F: Fn(&DesignSample) -> Result<InterpretationResult, PipelineError> + Sync,
{
    if workers == 0 {
        return Err(PipelineError::Input(
            "worker count must be at least 1".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Input(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                if cancel.load(Ordering::SeqCst) {
                    return SampleOutcome::Skipped {
                        sample_id: s.id.clone(),
                    };
                }
                match interpret(s) {
                    Ok(r) => SampleOutcome::Done(r),
                    Err(error) => {
                        log::debug!("sample {} failed: {error}", s.id);
                        SampleOutcome::Failed {
                            sample_id: s.id.clone(),
                            error,
                        }
                    }
                }
            })
            .collect()
    }))
}
