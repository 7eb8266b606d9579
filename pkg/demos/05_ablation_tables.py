"""Produce miniature versions of the ablation and ROI-comparison tables.

Runs each variant over the same seeds and data and prints the aggregated
"mean (std)" tables. The scale here is deliberately tiny so the demo finishes
in a couple of minutes; use the CLI (`walnet ablate`, `walnet roi-compare`)
with a bigger config for meaningful numbers.
"""

import warnings
from pathlib import Path

from walnet.data import SyntheticSpec, generate_synthetic
from walnet.model import ModelConfig
from walnet.pgm import PgmConfig
from walnet.training import TrainConfig, run_ablation, run_roi_comparison

warnings.filterwarnings("ignore", category=RuntimeWarning)

out_dir = Path(__file__).parent / "output"
records = generate_synthetic(SyntheticSpec(counts=(24, 48, 28), size=32, seed=1))
cfg = TrainConfig(
    epochs=2, seed=0,
    model=ModelConfig(input_size=32, widths=(8, 16, 32, 64),
                      aspp_channels=16, decoder_channels=16,
                      low_level_channels=16),
    pgm=PgmConfig(felz_min_size=8))

ablation = run_ablation(cfg, records, n_seeds=2,
                        out_root=out_dir / "ablation_demo")
print("module ablation (2 seeds, toy scale):\n")
print(ablation["table_md"])

roi = run_roi_comparison(cfg, records, n_seeds=2,
                         out_root=out_dir / "roi_demo")
print("ROI strategy comparison (2 seeds, toy scale):\n")
print(roi["table_md"])
print(f"full reports under {out_dir / 'ablation_demo'} and {out_dir / 'roi_demo'}")
