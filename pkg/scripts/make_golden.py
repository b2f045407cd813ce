"""Regenerate tests/data/golden.spf.

Only run this when the checkpoint byte layout or the rng contract changes on
purpose; the golden tests exist to catch accidental drift in either.
"""

from pathlib import Path

from skipfuse.checkpoint import save
from skipfuse.config import FfnKind, ModelConfig, Positional
from skipfuse.model import random_model

config = ModelConfig(
    d=4, n_layers=2, n_heads=2, n_kv_heads=1, f=8, vocab_size=5,
    ffn_kind=FfnKind.GLU, positional=Positional.ROTARY,
)

out = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden.spf"
out.parent.mkdir(parents=True, exist_ok=True)
save(random_model(config, seed=0), "f64", out)
print(f"wrote {out} ({out.stat().st_size} bytes)")
