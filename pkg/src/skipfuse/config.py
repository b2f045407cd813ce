"""Model architecture configuration and the key=value config file format.

A config describes a skipless decoder-only transformer: no skip connections
and no normalization anywhere, which is what makes exact weight fusion
possible in the first place. The same key=value vocabulary is used by config
files, checkpoint headers and the CLI's machine output.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path

from .errors import InvalidConfig, InvalidValue, MissingKey, UnknownKey


class Topology(Enum):
    SERIAL = "serial"      # attention feeds the FFN
    PARALLEL = "parallel"  # attention and FFN both read the block input


class FfnKind(Enum):
    MLP = "mlp"  # act(x M) O
    GLU = "glu"  # (act(x M_gate) * (x M_up)) O, first layer packs gate|up


class Activation(Enum):
    GELU = "gelu"  # exact erf form
    SILU = "silu"


class Positional(Enum):
    NONE = "none"
    ROTARY = "rotary"  # base 10000, applied per head to q and k after projection


class ReducedForm(Enum):
    FULL = "full"    # Q, K, V, P all present
    NO_QP = "no_qp"  # Q eliminated, P merged (serial) or retained (parallel fold)
    NO_KP = "no_kp"  # K eliminated, requires e == d
    NO_VP = "no_vp"  # V eliminated, requires e == d


@dataclass(frozen=True)
class ModelConfig:
    d: int
    n_layers: int
    n_heads: int
    n_kv_heads: int
    f: int
    vocab_size: int
    topology: Topology = Topology.SERIAL
    ffn_kind: FfnKind = FfnKind.MLP
    activation: Activation | None = None  # None resolves per ffn_kind
    positional: Positional = Positional.NONE
    causal: bool = True
    reduced_form: ReducedForm = ReducedForm.FULL

    def __post_init__(self):
        if self.activation is None:
            default = Activation.SILU if self.ffn_kind is FfnKind.GLU else Activation.GELU
            object.__setattr__(self, "activation", default)
        for name in ("d", "n_heads", "n_kv_heads", "f", "vocab_size"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_layers < 0:
            raise InvalidConfig(f"n_layers must be >= 0, got {self.n_layers}")
        if self.d % self.n_heads != 0:
            raise InvalidConfig(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.n_heads % self.n_kv_heads != 0:
            raise InvalidConfig(
                f"n_heads={self.n_heads} not divisible by n_kv_heads={self.n_kv_heads}"
            )
        if self.reduced_form in (ReducedForm.NO_KP, ReducedForm.NO_VP) and self.e != self.d:
            raise InvalidConfig(
                f"reduced form {self.reduced_form.value} requires e == d (MHA), "
                f"got e={self.e}, d={self.d}"
            )
        if self.positional is Positional.ROTARY and self.head_dim % 2 != 0:
            raise InvalidConfig(
                f"rotary needs an even head dim, got d/n_heads = {self.head_dim}"
            )

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    @property
    def e(self) -> int:
        """Output dimension of the K and V projections."""
        return self.d * self.n_kv_heads // self.n_heads

    @property
    def f_prime(self) -> int:
        """Width of the first FFN matrix: 2f for GLU (gate|up packed), else f."""
        return 2 * self.f if self.ffn_kind is FfnKind.GLU else self.f

    @property
    def attention_kind(self) -> str:
        if self.n_kv_heads == self.n_heads:
            return "mha"
        if self.n_kv_heads == 1:
            return "mqa"
        return "gqa"


def compute_e(config: ModelConfig) -> int:
    """e = d * n_kv_heads / n_heads (d for MHA, d / n_heads for MQA)."""
    return config.e


# --- key=value serialization -------------------------------------------------

_INT_KEYS = ("d", "n_layers", "n_heads", "n_kv_heads", "f", "vocab_size")
_ENUM_KEYS = {
    "topology": Topology,
    "ffn_kind": FfnKind,
    "activation": Activation,
    "positional": Positional,
    "reduced_form": ReducedForm,
}
_ALL_KEYS = _INT_KEYS + tuple(_ENUM_KEYS) + ("causal",)
_REQUIRED_KEYS = set(_INT_KEYS)


def config_to_lines(config: ModelConfig) -> list[str]:
    """Render a config as key=value lines in canonical field order."""
    out = []
    for field in fields(ModelConfig):
        value = getattr(config, field.name)
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{field.name}={value}")
    return out


def _parse_value(key: str, raw: str):
    if key in _INT_KEYS:
        try:
            value = int(raw)
        except ValueError:
            raise InvalidValue(f"{key}={raw!r} is not an integer") from None
        minimum = 0 if key == "n_layers" else 1
        if value < minimum:
            raise InvalidValue(f"{key}={value} must be >= {minimum}")
        return value
    if key in _ENUM_KEYS:
        enum_cls = _ENUM_KEYS[key]
        try:
            return enum_cls(raw)
        except ValueError:
            allowed = ", ".join(m.value for m in enum_cls)
            raise InvalidValue(f"{key}={raw!r} not one of: {allowed}") from None
    if key == "causal":
        if raw == "true":
            return True
        if raw == "false":
            return False
        raise InvalidValue(f"causal={raw!r} must be 'true' or 'false'")
    raise UnknownKey(f"unknown config key {key!r}")


def config_from_lines(lines, source: str = "<config>") -> ModelConfig:
    """Build a ModelConfig from key=value lines.

    Blank lines and '#' comments are skipped. Unknown keys are rejected, the
    six dimension keys are required, everything else takes its default.
    """
    values = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise InvalidValue(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = text.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _ALL_KEYS:
            raise UnknownKey(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise InvalidValue(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    missing = _REQUIRED_KEYS - values.keys()
    if missing:
        raise MissingKey(f"{source}: missing required keys: {', '.join(sorted(missing))}")
    return ModelConfig(**values)


# --- presets ------------------------------------------------------------------

# Architectures of the two reference models used throughout the analysis
# module. Weight counts derived from these are golden-tested.
PRESETS: dict[str, ModelConfig] = {
    "pythia-6.9b": ModelConfig(
        d=4096, n_layers=32, n_heads=32, n_kv_heads=32,
        f=16384, vocab_size=50400,
        topology=Topology.PARALLEL, ffn_kind=FfnKind.MLP,
        activation=Activation.GELU, positional=Positional.ROTARY,
    ),
    "mistral-7b": ModelConfig(
        d=4096, n_layers=32, n_heads=32, n_kv_heads=8,
        f=14336, vocab_size=32000,
        topology=Topology.SERIAL, ffn_kind=FfnKind.GLU,
        activation=Activation.SILU, positional=Positional.ROTARY,
    ),
}


def parse_config(path_or_preset: str | Path) -> ModelConfig:
    """Load a config from a key=value file, or resolve a preset by name."""
    name = str(path_or_preset)
    if name in PRESETS:
        return PRESETS[name]
    path = Path(path_or_preset)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidValue(f"cannot read config {name!r}: {exc}") from exc
    return config_from_lines(text.splitlines(), source=name)
