"""Parameter budgets and bandwidth-bound speedup estimates.

All counts are exact integers derived from the architecture (biases,
normalization parameters and rotary tables do not exist in these models).
The speedup figure is the ratio of weight bytes before/after removing Q and
P, which is the right estimate only for batch-1 autoregressive decoding
limited by memory bandwidth; it is an estimate, not a measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import FfnKind, ModelConfig
from .model import ModelWeights


@dataclass(frozen=True)
class WeightCountReport:
    qp_per_layer: int      # 2 d^2
    kv_per_layer: int      # 2 d e
    ffn_per_layer: int     # (2 or 3) d f
    embed_total: int       # 2 d vocab_size (untied tables)
    total: int
    total_without_qp: int  # total after removing Q and P everywhere
    savings_fraction: float
    speedup: float


def count_weights(config: ModelConfig) -> WeightCountReport:
    """Exact weight counts for a full-form model of this architecture."""
    d, f, layers = config.d, config.f, config.n_layers
    qp = 2 * d * d
    kv = 2 * d * config.e
    ffn = (3 if config.ffn_kind is FfnKind.GLU else 2) * d * f
    embed = 2 * d * config.vocab_size
    total = layers * (qp + kv + ffn) + embed
    without = total - layers * qp
    return WeightCountReport(
        qp_per_layer=qp,
        kv_per_layer=kv,
        ffn_per_layer=ffn,
        embed_total=embed,
        total=total,
        total_without_qp=without,
        savings_fraction=1.0 - without / total,
        speedup=total / without,
    )


def savings_and_speedup(report: WeightCountReport) -> tuple[float, float]:
    """(savings percent, speedup factor), unrounded.

    Display rounding is percent to the nearest integer and speedup to two
    decimals; see render_table.
    """
    return 100.0 * report.savings_fraction, report.speedup


def count_stored_weights(model: ModelWeights) -> int:
    """Number of floats actually materialized, whatever the reduced form."""
    total = model.E.size + model.U.size
    for block in model.blocks:
        for name in ("Q", "K", "V", "P", "M", "O"):
            arr = getattr(block, name)
            if arr is not None:
                total += arr.size
    return total


def _with_billions(n: int) -> str:
    # annotate counts that are large enough not to round to 0.0B
    if n >= 50_000_000:
        return f"{n:,} ({n / 1e9:.1f}B)"
    return f"{n:,}"


def render_table(config: ModelConfig, report: WeightCountReport, name: str = "model") -> str:
    """Aligned plain-text table of the architecture, counts and savings."""
    percent, speedup = savings_and_speedup(report)
    ffn_label = "mlp with glu" if config.ffn_kind is FfnKind.GLU else "mlp"
    rows = [
        ("model", name),
        ("topology", config.topology.value),
        ("attention", config.attention_kind),
        ("d", f"{config.d:,}"),
        ("n_layers", f"{config.n_layers:,}"),
        ("n_heads", f"{config.n_heads:,}"),
        ("n_kv_heads", f"{config.n_kv_heads:,}"),
        ("e (K/V output dim)", f"{config.e:,}"),
        ("ffn type", ffn_label),
        ("f (ffn hidden dim)", f"{config.f:,}"),
        ("vocab_size", f"{config.vocab_size:,}"),
        ("", ""),
        ("Q+P weights per layer", f"{report.qp_per_layer:,}"),
        ("K+V weights per layer", f"{report.kv_per_layer:,}"),
        ("FFN weights per layer", f"{report.ffn_per_layer:,}"),
        ("input+output embeddings", f"{report.embed_total:,}"),
        ("total weights", _with_billions(report.total)),
        ("", ""),
        ("total without Q+P", _with_billions(report.total_without_qp)),
        ("weight savings", f"{round(percent)}%"),
        ("possible speedup (batch 1)", f"{speedup:.2f}x"),
    ]
    width = max(len(label) for label, _ in rows)
    return "\n".join(
        f"{label:<{width}}  {value}".rstrip() for label, value in rows
    )


def machine_lines(config: ModelConfig, report: WeightCountReport) -> list[str]:
    """key=value rendering (config fields first, then the counts)."""
    from .config import config_to_lines

    percent, speedup = savings_and_speedup(report)
    lines = config_to_lines(config)
    lines += [
        f"qp_per_layer={report.qp_per_layer}",
        f"kv_per_layer={report.kv_per_layer}",
        f"ffn_per_layer={report.ffn_per_layer}",
        f"embed_total={report.embed_total}",
        f"total={report.total}",
        f"total_without_qp={report.total_without_qp}",
        f"savings_fraction={report.savings_fraction!r}",
        f"speedup={report.speedup!r}",
        f"savings_percent={round(percent)}",
        f"speedup_display={speedup:.2f}",
    ]
    return lines
