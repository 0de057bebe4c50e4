//! Threaded training runtime. Gradient jobs are spread over scoped threads
//! and returned in job order, so the reduction is independent of the thread
//! count.

use std::io::Write;
use std::time::Instant;

use bilinear_core::model::BilinearModel;
use bilinear_core::train::{EpochRecord, GradientJob, Gradients, TrainRuntime};

pub struct ThreadedRuntime<W: Write> {
    threads: usize,
    start: Instant,
    progress: Option<W>,
}

impl<W: Write> ThreadedRuntime<W> {
    pub fn new(threads: usize, progress: Option<W>) -> Self {
        Self {
            threads: threads.max(1),
            start: Instant::now(),
            progress,
        }
    }
}

/// `epoch=<k> loss=<f> val_acc=<f> lr=<f>`, with a one-based epoch.
pub fn progress_line(record: &EpochRecord) -> String {
    let val = record
        .val_accuracy
        .map_or_else(|| "nan".to_owned(), |a| format!("{a:.6}"));
    format!(
        "epoch={} loss={:.6} val_acc={} lr={:.6e}",
        record.epoch + 1,
        record.loss,
        val,
        record.learning_rate
    )
}

impl<W: Write> TrainRuntime for ThreadedRuntime<W> {
    fn now_seconds(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn gradients(
        &self,
        model: &BilinearModel,
        jobs: &[GradientJob],
    ) -> bilinear_core::Result<Vec<(f64, Gradients)>> {
        if self.threads == 1 || jobs.len() <= 1 {
            return jobs.iter().map(|j| j.run(model)).collect();
        }
        let per_thread = jobs.len().div_ceil(self.threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(per_thread)
                .map(|chunk| {
                    scope.spawn(move || chunk.iter().map(|j| j.run(model)).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    }

    fn on_epoch(&mut self, record: &EpochRecord) {
        if let Some(out) = &mut self.progress {
            // Progress output is best effort.
            let _ = writeln!(out, "{}", progress_line(record));
            let _ = out.flush();
        }
    }
}
