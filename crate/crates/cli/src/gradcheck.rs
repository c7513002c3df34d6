use capsnet_core::gradcheck::{layer_suite, model_check, LayerReport, ModelCheckOptions};
use capsnet_core::models::{Architecture, ModelConfig};
use clap::Args;

use crate::{runtime, usage, Outcome};

/// Acceptance threshold on the relative error.
const TOLERANCE: f64 = 1e-4;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random shapes per layer.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Skip the end-to-end model checks.
    #[arg(long)]
    layers_only: bool,
}

fn print(scope: &str, reports: &[LayerReport]) -> bool {
    let mut ok = true;
    for r in reports {
        let pass = r.max_rel_error < TOLERANCE;
        ok &= pass;
        let kinks = if r.kinks > 0 { format!("  ({} kink coords skipped)", r.kinks) } else { String::new() };
        println!(
            "{scope:<10} {:<24} max rel error {:>10.3e}  {}{kinks}",
            r.layer,
            r.max_rel_error,
            if pass { "ok" } else { "FAIL" }
        );
    }
    ok
}

/// Layer suite always; end-to-end model checks only at reduced width,
/// where 64-bit finite differences over a whole network stay cheap.
pub fn run(args: &GradcheckArgs, reduced: bool, seed: u64) -> Outcome {
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let layers = layer_suite(args.trials, seed).map_err(runtime)?;
    let mut ok = print("layer", &layers);
    if reduced && !args.layers_only {
        for arch in Architecture::ALL {
            let cfg = ModelConfig::new(arch, 10).reduced();
            let opts = ModelCheckOptions {
                seed,
                ..ModelCheckOptions::default()
            };
            let reports = model_check(cfg, &opts).map_err(runtime)?;
            ok &= print(arch.name(), &reports);
        }
    } else if !args.layers_only {
        println!("(whole-model checks run with --profile reduced)");
    }
    if ok {
        println!("all gradients within {TOLERANCE:e}");
        Ok(())
    } else {
        Err(runtime(format!("gradient check above {TOLERANCE:e}")))
    }
}
