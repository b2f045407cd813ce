"""Skipless transformer weights and exact forward passes.

Row-vector convention throughout: activations are T x d, weight matrices map
inputs from the left (x @ W), so W has shape (in, out). There are no skip
connections, no normalization layers and no biases anywhere; the forward pass
is exactly the chain of projections that the fusion transforms rewrite.

A projection eliminated by fusion is simply an absent field on BlockWeights
and the corresponding path is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from .config import Activation, FfnKind, ModelConfig, Positional, ReducedForm, Topology
from .errors import InvalidModel, NonFinite, ShapeMismatch, TokenOutOfRange

ROTARY_BASE = 10000.0


@dataclass
class BlockWeights:
    """Per-block matrices. Absent entries (None) mean an identity path."""

    Q: np.ndarray | None  # d x d
    K: np.ndarray | None  # d x e
    V: np.ndarray | None  # d x e
    P: np.ndarray | None  # d x d, post-attention projection
    M: np.ndarray         # d x f' (gate|up packed for GLU)
    O: np.ndarray         # f x d


@dataclass
class ModelWeights:
    config: ModelConfig
    E: np.ndarray               # vocab_size x d input embedding
    blocks: list[BlockWeights]  # length n_layers
    U: np.ndarray               # d x vocab_size output embedding (untied)


# --- validation ---------------------------------------------------------------

def _expect_shape(arr, shape, what):
    if arr.shape != shape:
        raise InvalidModel(f"{what} has shape {arr.shape}, expected {shape}")
    if not np.isfinite(arr).all():
        raise InvalidModel(f"{what} contains NaN or Inf")


def block_layout(config: ModelConfig) -> dict[str, tuple[int, int] | None]:
    """Expected shape of every BlockWeights field, None where the form
    eliminates the matrix. P is optional (None here means 'not required');
    see validate_model for the per-topology rule."""
    d, e = config.d, config.e
    form = config.reduced_form
    return {
        "Q": None if form is ReducedForm.NO_QP else (d, d),
        "K": None if form is ReducedForm.NO_KP else (d, e),
        "V": None if form is ReducedForm.NO_VP else (d, e),
        "P": (d, d) if form is ReducedForm.FULL else None,
        "M": (d, config.f_prime),
        "O": (config.f, d),
    }


def validate_model(model: ModelWeights) -> None:
    """Check every matrix against the config, raising InvalidModel.

    Presence rules: the eliminated projection of the reduced form must be
    absent and everything else present. P must be present in full form and
    absent in serial reduced forms. In parallel reduced forms P is optional:
    the exact parallel Q-fold keeps P, while from-scratch parallel reduced
    architectures have none.
    """
    config = model.config
    d = config.d
    _expect_shape(model.E, (config.vocab_size, d), "E")
    _expect_shape(model.U, (d, config.vocab_size), "U")
    if len(model.blocks) != config.n_layers:
        raise InvalidModel(
            f"{len(model.blocks)} blocks for n_layers={config.n_layers}"
        )
    layout = block_layout(config)
    p_optional = (
        config.topology is Topology.PARALLEL
        and config.reduced_form is not ReducedForm.FULL
    )
    for i, block in enumerate(model.blocks):
        for name, shape in layout.items():
            arr = getattr(block, name)
            if shape is None:
                if name == "P" and p_optional:
                    if arr is not None:
                        _expect_shape(arr, (d, d), f"blk{i}.P")
                    continue
                if arr is not None:
                    raise InvalidModel(
                        f"blk{i}.{name} must be absent in form "
                        f"{config.reduced_form.value}"
                    )
            else:
                if arr is None:
                    raise InvalidModel(f"blk{i}.{name} is missing")
                _expect_shape(arr, shape, f"blk{i}.{name}")


# --- activations ----------------------------------------------------------------

def gelu(x):
    """Exact erf-form GELU (not the tanh approximation)."""
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def silu(x):
    return x / (1.0 + np.exp(-x))


_ACTIVATIONS = {Activation.GELU: gelu, Activation.SILU: silu}


# --- forward passes ---------------------------------------------------------------

def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row softmax. -inf entries come out exactly 0 (exp(-inf) == 0.0)."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def _rotate_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    """Apply rotary embedding per head of width x.cols / n_heads.

    Even/odd column pairs within a head are rotated by position-dependent
    angles, base 10000. Positions are absolute row indices 0..T-1.
    """
    t, total = x.shape
    dh = total // n_heads
    half = dh // 2
    freqs = ROTARY_BASE ** (-np.arange(half) * 2.0 / dh)
    angles = np.arange(t)[:, None] * freqs[None, :]  # T x half
    cos, sin = np.cos(angles), np.sin(angles)
    out = np.empty_like(x)
    for h in range(n_heads):
        head = x[:, h * dh:(h + 1) * dh]
        even, odd = head[:, 0::2], head[:, 1::2]
        out[:, h * dh:(h + 1) * dh:2] = even * cos - odd * sin
        out[:, h * dh + 1:(h + 1) * dh:2] = even * sin + odd * cos
    return out


def attention_forward(x: np.ndarray, block: BlockWeights, config: ModelConfig) -> np.ndarray:
    """Multi/grouped/multi-query attention on T x d input, returning T x d.

    Query head h attends to kv head h // (n_heads / n_kv_heads). Masked
    scores are -inf before the softmax, so weights on future positions are
    exactly zero when config.causal.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.d:
        raise ShapeMismatch(f"input must be T x {config.d}, got {x.shape}")
    if not np.isfinite(x).all():
        raise NonFinite("attention input contains NaN or Inf")

    q = x @ block.Q if block.Q is not None else x
    k = x @ block.K if block.K is not None else x
    v = x @ block.V if block.V is not None else x
    if config.positional is Positional.ROTARY:
        q = _rotate_heads(q, config.n_heads)
        k = _rotate_heads(k, config.n_kv_heads)

    t = x.shape[0]
    dh = config.head_dim
    group = config.n_heads // config.n_kv_heads
    inv_sqrt = 1.0 / np.sqrt(dh)
    future = np.triu(np.ones((t, t), dtype=bool), k=1) if config.causal else None

    out = np.empty((t, config.d))
    for h in range(config.n_heads):
        g = h // group
        qh = q[:, h * dh:(h + 1) * dh]
        kh = k[:, g * dh:(g + 1) * dh]
        vh = v[:, g * dh:(g + 1) * dh]
        scores = (qh @ kh.T) * inv_sqrt
        if future is not None:
            scores = np.where(future, -np.inf, scores)
        out[:, h * dh:(h + 1) * dh] = _softmax_rows(scores) @ vh
    return out @ block.P if block.P is not None else out


def ffn_forward(x: np.ndarray, block: BlockWeights, config: ModelConfig) -> np.ndarray:
    """Feedforward path on T x d input, returning T x d."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.d:
        raise ShapeMismatch(f"input must be T x {config.d}, got {x.shape}")
    act = _ACTIVATIONS[config.activation]
    hidden = x @ block.M
    if config.ffn_kind is FfnKind.GLU:
        gate, up = hidden[:, :config.f], hidden[:, config.f:]
        hidden = act(gate) * up
    else:
        hidden = act(hidden)
    return hidden @ block.O


def block_forward(x: np.ndarray, block: BlockWeights, config: ModelConfig) -> np.ndarray:
    """One transformer block: serial composes attention into the FFN,
    parallel sums the two branches over the same input."""
    if config.topology is Topology.PARALLEL:
        return attention_forward(x, block, config) + ffn_forward(x, block, config)
    return ffn_forward(attention_forward(x, block, config), block, config)


def _check_tokens(tokens, vocab_size: int) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 1:
        raise TokenOutOfRange("tokens must be a non-empty 1-D sequence of ids")
    if ids.min() < 0 or ids.max() >= vocab_size:
        bad = ids[(ids < 0) | (ids >= vocab_size)][0]
        raise TokenOutOfRange(f"token id {bad} outside [0, {vocab_size})")
    return ids


def forward_trace(model: ModelWeights, tokens) -> tuple[list[np.ndarray], np.ndarray]:
    """Forward pass keeping every inter-block activation.

    Returns (states, logits) where states[0] is the embedding output and
    states[i + 1] the output of block i (n_layers + 1 entries).
    """
    ids = _check_tokens(tokens, model.config.vocab_size)
    x = model.E[ids]
    states = [x]
    for block in model.blocks:
        x = block_forward(x, block, model.config)
        states.append(x)
    return states, x @ model.U


def model_forward(model: ModelWeights, tokens) -> tuple[np.ndarray, np.ndarray]:
    """Embed tokens, run every block, unembed. Returns (hidden, logits)."""
    states, logits = forward_trace(model, tokens)
    return states[-1], logits


# --- construction ---------------------------------------------------------------

def random_model(config: ModelConfig, seed: int, scale: float | None = None) -> ModelWeights:
    """Gaussian-initialized model, reproducible from (config, seed, scale).

    Tensors are drawn from one PCG64 stream in checkpoint order: E, then each
    block's present matrices in Q, K, V, P, M, O order, then U. Default scale
    is 1/sqrt(d), which keeps activations O(1) without normalization layers.
    """
    if scale is None:
        scale = 1.0 / np.sqrt(config.d)
    rng = np.random.Generator(np.random.PCG64(seed))

    def draw(rows, cols):
        return rng.standard_normal((rows, cols)) * scale

    layout = block_layout(config)
    e_table = draw(config.vocab_size, config.d)
    blocks = []
    for _ in range(config.n_layers):
        tensors = {
            name: draw(*shape) if shape is not None else None
            for name, shape in layout.items()
        }
        blocks.append(BlockWeights(**tensors))
    u_table = draw(config.d, config.vocab_size)
    return ModelWeights(config=config, E=e_table, blocks=blocks, U=u_table)


def copy_model(model: ModelWeights) -> ModelWeights:
    """Deep copy (weights are treated as immutable elsewhere)."""
    blocks = [
        BlockWeights(**{
            name: None if getattr(b, name) is None else getattr(b, name).copy()
            for name in ("Q", "K", "V", "P", "M", "O")
        })
        for b in model.blocks
    ]
    return ModelWeights(
        config=model.config, E=model.E.copy(), blocks=blocks, U=model.U.copy()
    )


def with_form(config: ModelConfig, form: ReducedForm) -> ModelConfig:
    return replace(config, reduced_form=form)
