//! Per-subcommand key listings shown by `--help`.

pub const COMMON: &str = "  schema_version   config schema version, must be 1 (default 1)
  output_dir       directory for all output files (default \"out\")";

pub const BENCH: &str = "\
CONFIG KEYS:
  G                blocks conditioned per pass (default 14876)
  m                attribute dimension, 1..=4 (default 3)
  n_list           latent dimensions to sweep (default [1,2,4,8,16,32,64,128])
  runs             measured passes per cell (default 1000)
  warmup           untimed passes per cell (default 10)
  time_budget_s    optional per-cell cap in seconds for warmup and for
                   measurement separately; null disables (default null)
  parallel         use the data-parallel batch path (default false)
  seed             parameter generation seed (default 0)
{COMMON}

OUTPUTS: bench.csv, run.json. A timing table is printed to stdout.";

pub const FIT: &str = "\
CONFIG KEYS:
  scene_file       JSON scene description; overrides preset (default null)
  preset           swirl | blink | glint, generated with `seed` (default \"blink\")
  latent_dim       latent dimension n (default 8)
  iterations       Adam steps (default 400)
  lr               learning rate of the hyper-block parameters (default 1e-4)
  lr_latent        learning rate of the per-frame latents (default 1e-2)
  lr_position      base position learning rate (default 1e-3)
  lr_rotation      base rotation learning rate (default 1e-3)
  lr_scale         base log-scale learning rate (default 5e-3)
  lr_opacity       opacity logit learning rate (default 5e-2)
  lr_color         color learning rate (default 1e-2)
  beta1            Adam first-moment decay (default 0.9)
  beta2            Adam second-moment decay (default 0.999)
  adam_eps         Adam denominator floor (default 1e-8)
  num_primitives   primitives in the fitted model (default 64)
  init_jitter      std. dev. of initial position jitter (default 0.02)
  seed             initialization seed, also the preset scene seed (default 0)
{COMMON}

OUTPUTS: checkpoint.json, report.json, trace.csv, run.json.";

pub const RENDER: &str = "\
CONFIG KEYS:
  checkpoint       checkpoint written by `fit` (required)
  frame            frame index to render; all frames when null (default null)
{COMMON}

OUTPUTS: frame_NNNN.ppm per frame, run.json.";

pub const UNCERTAINTY: &str = "\
CONFIG KEYS:
  checkpoint       checkpoint written by `fit` (required)
  frame            frame index to render; all frames when null (default null)
{COMMON}

Primitives are colored from green (low) to red (high) by the sigmoid of
their conditional log-determinant.

OUTPUTS: uncertainty_NNNN.ppm per frame, run.json.";

pub const GRADCHECK: &str = "\
CONFIG KEYS:
  seed             first instance seed (default 0)
  seeds            number of consecutive seeds (default 1)
  eps              central-difference step, 1e-8..=1e-3 (default 1e-5)
  ops              operators to check: quadratic, condition_fast,
                   apply_offsets, pipeline (default all)
  tolerance        exit with status 1 above this relative error (default 1e-4)
{COMMON}

OUTPUTS: gradcheck.csv, run.json.";

/// Fills in the shared key block.
pub fn keys(text: &str) -> String {
    text.replace("{COMMON}", COMMON)
}
