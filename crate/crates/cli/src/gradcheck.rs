use clap::Args;
use pointray::gradcheck::{run_gradcheck, GradcheckOptions, REL_TOLERANCE};

use crate::common::{CliError, Output};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random configurations.
    #[arg(long, default_value_t = 200)]
    configs: usize,
    #[arg(long, default_value_t = 20)]
    max_points: usize,
    /// Largest canvas side (a multiple of 4).
    #[arg(long, default_value_t = 16)]
    max_canvas: usize,
    #[arg(long, default_value_t = 8)]
    max_ray_len: usize,
    /// Debug hook: corrupt the analytic gradient; the check must then fail.
    #[arg(long, hide = true)]
    tamper: bool,
}

pub fn run(args: GradcheckArgs, out: &Output) -> Result<(), CliError> {
    if args.max_canvas < 4 || args.max_canvas % 4 != 0 || args.max_ray_len == 0 {
        return Err(CliError::Usage("--max-canvas must be a positive multiple of 4 and --max-ray-len positive".into()));
    }
    let report = run_gradcheck(&GradcheckOptions {
        seed: args.seed,
        configs: args.configs,
        max_points: args.max_points,
        max_canvas: args.max_canvas,
        max_ray_len: args.max_ray_len,
        tamper: args.tamper,
    })
    .map_err(CliError::at("gradcheck"))?;
    out.event(
        "gradcheck",
        &serde_json::json!({ "passed": report.passed(), "report": &report }),
    );
    out.text(format_args!(
        "gradcheck: {} configs, {} partials, max relative error {:.3e} (tolerance {REL_TOLERANCE:e}), \
         max small-gradient abs error {:.3e}, {} failures",
        report.configs, report.entries, report.max_rel_error, report.max_abs_error_small, report.failures
    ));
    out.text(format_args!(
        "coverage: {} empty rays, {} truncated rays, {} saturated points, {} jitter configs, {} head configs",
        report.empty_rays, report.truncated_rays, report.saturated_points, report.jitter_configs, report.head_configs
    ));
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Numerical {
            stage: "gradcheck",
            message: report.worst.unwrap_or_else(|| "no configurations checked".into()),
        })
    }
}
