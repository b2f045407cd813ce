"""Exact weight-fusion transforms for skipless transformers.

Serial models admit three equivalent reduced forms, each dropping 2*d^2
weights per block: the post-attention projection P always merges into the
first FFN matrix (M* = P M), and one of Q, K or V folds into the previous
block's output matrix (the input embedding for block 0). Folding X needs
X^-1 to compensate on the remaining projections, so X must be invertible.
K and V folds additionally need e == d, i.e. plain multi-head attention.

Parallel models get a change of basis instead: choosing T = Q on every
inter-block activation makes each query projection the identity, dropping
d^2 weights per block while P stays. All transforms preserve the model
function exactly up to float64 round-off, which run_equivalence measures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import ReducedForm, Topology
from .errors import ApplicabilityError, ConfigMismatch, ShapeMismatch, SingularMatrix
from .linalg import invert, norm_1
from .model import (
    BlockWeights,
    ModelWeights,
    forward_trace,
    with_form,
)

logger = logging.getLogger(__name__)

# Conditioning above this degrades how tightly the fused model tracks the
# original; worth a warning but not an error.
CONDITION_WARN_THRESHOLD = 1e8


class FusionVariant(Enum):
    ELIMINATE_Q = "q"
    ELIMINATE_K = "k"  # serial MHA only
    ELIMINATE_V = "v"  # serial MHA only


def _checked_inverse(mat: np.ndarray, what: str, block: int | None = None) -> np.ndarray:
    try:
        inv = invert(mat)
    except SingularMatrix as exc:
        raise SingularMatrix(
            f"{what} is singular" + (f" in block {block}" if block is not None else "")
            + f": {exc}",
            block=block,
        ) from exc
    cond = norm_1(mat) * norm_1(inv)
    if cond > CONDITION_WARN_THRESHOLD:
        logger.warning(
            "%s has 1-norm condition number %.3e; fused model may track the "
            "original loosely", what, cond,
        )
    return inv


def _require(shape_ok: bool, message: str) -> None:
    if not shape_ok:
        raise ShapeMismatch(message)


def merge_pm(P: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Collapse the post-attention projection into the first FFN matrix."""
    _require(P.ndim == 2 and P.shape[0] == P.shape[1], f"P must be square, got {P.shape}")
    _require(M.ndim == 2 and M.shape[0] == P.shape[1], f"P {P.shape} @ M {M.shape} mismatch")
    return P @ M


def fold_q(prev_out: np.ndarray, Q: np.ndarray, K: np.ndarray, V: np.ndarray):
    """Fold Q into the upstream producer of this block's input.

    Returns (prev_out Q, Q^-1 K, Q^-1 V); the query projection becomes the
    identity. prev_out is the previous block's O, or the input embedding for
    the first block. Works for any e (MHA, MQA, GQA).
    """
    d = Q.shape[0]
    _require(Q.ndim == 2 and Q.shape == (d, d), f"Q must be square, got {Q.shape}")
    _require(prev_out.ndim == 2 and prev_out.shape[1] == d,
             f"prev_out {prev_out.shape} does not feed d={d}")
    _require(K.shape[0] == d and V.shape[0] == d,
             f"K {K.shape} / V {V.shape} do not consume d={d}")
    q_inv = _checked_inverse(Q, "Q")
    return prev_out @ Q, q_inv @ K, q_inv @ V


def fold_k(prev_out: np.ndarray, Q: np.ndarray, K: np.ndarray, V: np.ndarray):
    """Fold K upstream; returns (prev_out K, K^-1 Q, K^-1 V). Needs e == d."""
    d = Q.shape[0]
    if K.shape != (d, d):
        raise ApplicabilityError(
            f"cannot eliminate K: e != d (K is {K.shape[0]}x{K.shape[1]}); "
            "K elimination requires MHA"
        )
    _require(prev_out.ndim == 2 and prev_out.shape[1] == d,
             f"prev_out {prev_out.shape} does not feed d={d}")
    _require(V.shape[0] == d, f"V {V.shape} does not consume d={d}")
    k_inv = _checked_inverse(K, "K")
    return prev_out @ K, k_inv @ Q, k_inv @ V


def fold_v(prev_out: np.ndarray, Q: np.ndarray, K: np.ndarray, V: np.ndarray):
    """Fold V upstream; returns (prev_out V, V^-1 Q, V^-1 K). Needs e == d."""
    d = Q.shape[0]
    if V.shape != (d, d):
        raise ApplicabilityError(
            f"cannot eliminate V: e != d (V is {V.shape[0]}x{V.shape[1]}); "
            "V elimination requires MHA"
        )
    _require(prev_out.ndim == 2 and prev_out.shape[1] == d,
             f"prev_out {prev_out.shape} does not feed d={d}")
    _require(K.shape[0] == d, f"K {K.shape} does not consume d={d}")
    v_inv = _checked_inverse(V, "V")
    return prev_out @ V, v_inv @ Q, v_inv @ K


_VARIANT_FORM = {
    FusionVariant.ELIMINATE_Q: ReducedForm.NO_QP,
    FusionVariant.ELIMINATE_K: ReducedForm.NO_KP,
    FusionVariant.ELIMINATE_V: ReducedForm.NO_VP,
}


def fuse_model(model: ModelWeights, variant: FusionVariant) -> ModelWeights:
    """Apply one serial reduced form to a full serial model.

    Every block loses its P (merged into M) and the variant's matrix (folded
    into the previous block's O, or into E for block 0), exactly 2*d^2*L
    fewer stored weights. Blocks are processed in increasing order; each fold
    uses the block's original projections, and the last block's O receives no
    fold because it has no successor.
    """
    config = model.config
    if config.topology is not Topology.SERIAL:
        raise ApplicabilityError(
            "fuse_model handles serial models; use fold_q_parallel for "
            "parallel topology"
        )
    if config.reduced_form is not ReducedForm.FULL:
        raise ApplicabilityError(
            f"model is already reduced ({config.reduced_form.value})"
        )
    if variant in (FusionVariant.ELIMINATE_K, FusionVariant.ELIMINATE_V) \
            and config.e != config.d:
        raise ApplicabilityError(
            f"cannot eliminate {variant.value.upper()}: e != d "
            f"(e={config.e}, d={config.d}); only MHA supports this variant"
        )

    new_e = model.E
    new_blocks: list[BlockWeights] = []
    for i, block in enumerate(model.blocks):
        prev = new_e if i == 0 else new_blocks[i - 1].O
        try:
            if variant is FusionVariant.ELIMINATE_Q:
                prev_new, k_new, v_new = fold_q(prev, block.Q, block.K, block.V)
                fused = BlockWeights(Q=None, K=k_new, V=v_new, P=None,
                                     M=merge_pm(block.P, block.M), O=block.O)
            elif variant is FusionVariant.ELIMINATE_K:
                prev_new, q_new, v_new = fold_k(prev, block.Q, block.K, block.V)
                fused = BlockWeights(Q=q_new, K=None, V=v_new, P=None,
                                     M=merge_pm(block.P, block.M), O=block.O)
            else:
                prev_new, q_new, k_new = fold_v(prev, block.Q, block.K, block.V)
                fused = BlockWeights(Q=q_new, K=k_new, V=None, P=None,
                                     M=merge_pm(block.P, block.M), O=block.O)
        except SingularMatrix as exc:
            raise SingularMatrix(f"block {i}: {exc}", block=i) from exc
        if i == 0:
            new_e = prev_new
        else:
            new_blocks[i - 1].O = prev_new
        new_blocks.append(fused)

    return ModelWeights(
        config=with_form(config, _VARIANT_FORM[variant]),
        E=new_e, blocks=new_blocks, U=model.U,
    )


def fold_q_parallel(model: ModelWeights) -> ModelWeights:
    """Exact Q elimination for parallel models via change of basis.

    Every inter-block activation y_i is re-expressed as y_i Q_{i+1}: the
    producers of block i+1's input (E for block 0, else P_i and O_i) absorb
    Q_{i+1}, and block i+1's consumers (K, V, M) absorb its inverse. Each
    query projection becomes the identity; P stays, so the model drops
    exactly d^2 * L weights. Valid for MHA, MQA and GQA alike because no K
    or V is ever inverted. The last block's P and O are unchanged, so the
    final hidden states and logits are numerically identical.
    """
    config = model.config
    if config.topology is not Topology.PARALLEL:
        raise ApplicabilityError("fold_q_parallel requires parallel topology")
    if config.reduced_form is not ReducedForm.FULL:
        raise ApplicabilityError(
            f"model is already reduced ({config.reduced_form.value})"
        )

    n = config.n_layers
    inverses = [
        _checked_inverse(block.Q, "Q", block=i)
        for i, block in enumerate(model.blocks)
    ]

    new_e = model.E @ model.blocks[0].Q if n > 0 else model.E
    new_blocks = []
    for i, block in enumerate(model.blocks):
        q_inv = inverses[i]
        last = i == n - 1
        new_blocks.append(BlockWeights(
            Q=None,
            K=q_inv @ block.K,
            V=q_inv @ block.V,
            P=block.P if last else block.P @ model.blocks[i + 1].Q,
            M=q_inv @ block.M,
            O=block.O if last else block.O @ model.blocks[i + 1].Q,
        ))
    return ModelWeights(
        config=with_form(config, ReducedForm.NO_QP),
        E=new_e, blocks=new_blocks, U=model.U,
    )


# --- equivalence harness --------------------------------------------------------

@dataclass
class EquivalenceReport:
    """Numerical comparison of two models on the same random token stream.

    max_abs_diff / max_rel_diff cover the observable outputs (final hidden
    states and logits); per_layer_max_abs traces every inter-block activation
    for diagnostics. Fused models re-express intermediate activations in a
    different basis, so interior entries are expected to be large while the
    final ones vanish.
    """

    max_abs_diff: float
    max_rel_diff: float
    per_layer_max_abs: list[float]
    tolerance: float
    passed: bool
    tokens_tested: int
    seed: int


def _max_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).max())


def _max_rel(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.abs(a), np.abs(b))
    diff = np.abs(a - b)
    rel = np.where(denom > 0.0, diff / np.where(denom > 0.0, denom, 1.0), 0.0)
    return float(rel.max())


def run_equivalence(a: ModelWeights, b: ModelWeights, n_tokens: int,
                    seed: int, tol: float) -> EquivalenceReport:
    """Drive both models over seeded uniform tokens and compare outputs."""
    ca, cb = a.config, b.config
    if (ca.d, ca.vocab_size, ca.n_layers) != (cb.d, cb.vocab_size, cb.n_layers):
        raise ConfigMismatch(
            f"models are not comparable: (d, vocab, layers) "
            f"{(ca.d, ca.vocab_size, ca.n_layers)} vs "
            f"{(cb.d, cb.vocab_size, cb.n_layers)}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    tokens = rng.integers(0, ca.vocab_size, size=n_tokens)

    states_a, logits_a = forward_trace(a, tokens)
    states_b, logits_b = forward_trace(b, tokens)
    per_layer = [_max_abs(sa, sb) for sa, sb in zip(states_a, states_b)]
    max_abs = max(_max_abs(states_a[-1], states_b[-1]), _max_abs(logits_a, logits_b))
    max_rel = max(_max_rel(states_a[-1], states_b[-1]), _max_rel(logits_a, logits_b))
    return EquivalenceReport(
        max_abs_diff=max_abs,
        max_rel_diff=max_rel,
        per_layer_max_abs=per_layer,
        tolerance=tol,
        passed=max_abs <= tol,
        tokens_tested=n_tokens,
        seed=seed,
    )
