use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use dapper_core::mathkit::softmax_stable;
use ndarray::s;

use crate::run::{self, Run};
use crate::CliResult;

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory written by `dapper train`.
    #[arg(long)]
    pub run: PathBuf,

    /// Directory for the exported files.
    #[arg(long)]
    pub output: PathBuf,

    /// Checkpoint to export [default: the run's final model, else its latest epoch].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Configuration the checkpoint must match [default: the run's config.toml].
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Words listed per topic.
    #[arg(long, default_value_t = 8)]
    pub top_n: usize,

    /// Also write the raw (pre-softmax) trajectories.
    #[arg(long)]
    pub raw: bool,
}

pub fn run(args: ExportArgs) -> CliResult {
    let run = Run::open(
        &args.run,
        args.checkpoint.as_deref(),
        args.config.as_deref(),
    )?;
    let state = &run.checkpoint.state;
    run::create_dir(&args.output)?;

    // Top words per topic from the normalized topic-word matrix.
    let mut topics = String::from("topic\trank\tword\tweight\n");
    for (k, row) in state.lambda.rows().into_iter().enumerate() {
        let total = row.sum();
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for (rank, &w) in order.iter().take(args.top_n).enumerate() {
            writeln!(
                topics,
                "{k}\t{}\t{}\t{}",
                rank + 1,
                run.vocab[w],
                row[w] / total
            )
            .expect("write to string");
        }
    }
    run::write(&args.output.join("topics.tsv"), &topics)?;

    let (t_len, p_len, _) = state.alpha_hat.dim();
    let mut weights = String::from("persona\ttopic\tslice\tweight\n");
    let mut raw = String::from("persona\ttopic\tslice\talpha\tvariance\n");
    for p in 0..p_len {
        let per_slice: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                softmax_stable(
                    state
                        .alpha_hat
                        .slice(s![t, p, ..])
                        .as_slice()
                        .expect("contiguous"),
                )
            })
            .collect::<dapper_core::Result<_>>()?;
        for k in 0..state.num_topics() {
            for (t, w) in per_slice.iter().enumerate() {
                writeln!(weights, "{p}\t{k}\t{t}\t{}", w[k]).expect("write to string");
                writeln!(
                    raw,
                    "{p}\t{k}\t{t}\t{}\t{}",
                    state.alpha_hat[[t, p, k]],
                    state.alpha_var[[t, p, k]]
                )
                .expect("write to string");
            }
        }
    }
    run::write(&args.output.join("trajectories.tsv"), &weights)?;
    if args.raw {
        run::write(&args.output.join("trajectories_raw.tsv"), &raw)?;
    }
    Ok(())
}
