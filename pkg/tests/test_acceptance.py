"""End-to-end acceptance checks.

One test per shipped guarantee, each printing a single PASS/FAIL line that
survives pytest's capture (run plain `pytest -v tests/test_acceptance.py`).
Tolerances are part of the contract:

    exact        weight counts, stored-float deltas, checkpoint bytes
    1e-9         fused-vs-original max abs diff on final hidden and logits,
                 and inversion residuals
    1e-12        attention against the scalar brute-force oracle
"""

import time
from pathlib import Path

import numpy as np
import pytest

import reference
from test_checkpoint import GOLDEN_CONFIG, build_blob
from skipfuse.analysis import count_stored_weights, count_weights, render_table, savings_and_speedup
from skipfuse.checkpoint import load, save, tensor_entries
from skipfuse.config import (
    FfnKind,
    ModelConfig,
    PRESETS,
    Positional,
    ReducedForm,
    Topology,
)
from skipfuse.errors import (
    ApplicabilityError,
    BadMagic,
    CorruptHeader,
    InconsistentForm,
    SingularMatrix,
    TruncatedPayload,
)
from skipfuse.fusion import FusionVariant, fold_q_parallel, fuse_model, run_equivalence
from skipfuse.linalg import invert, random_gaussian
from skipfuse.model import attention_forward, model_forward, random_model

N_SEEDS = 10
N_TOKENS = 64
EQUIV_TOL = 1e-9
ORACLE_TOL = 1e-12


@pytest.fixture
def report(capsys):
    def _report(label, problems):
        status = "PASS" if not problems else "FAIL"
        with capsys.disabled():
            print(f"\nacceptance [{label}]: {status}")
        assert not problems, f"{label}: " + "; ".join(problems)
    return _report


def serial_config(**overrides):
    kwargs = dict(d=64, n_layers=3, n_heads=4, n_kv_heads=4, f=256, vocab_size=97)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def check_fused_pair(model, fused, seed, problems, what):
    rep = run_equivalence(model, fused, n_tokens=N_TOKENS, seed=seed, tol=EQUIV_TOL)
    if not rep.passed:
        problems.append(f"{what}: max abs diff {rep.max_abs_diff:.3e}")
        return
    tokens = np.random.Generator(np.random.PCG64(seed)).integers(
        0, model.config.vocab_size, N_TOKENS)
    _, logits = model_forward(model, tokens)
    _, fused_logits = model_forward(fused, tokens)
    if not np.array_equal(np.argmax(logits, axis=1),
                          np.argmax(fused_logits, axis=1)):
        problems.append(f"{what}: argmax drift")


def run_serial_sweep(positional, problems):
    for ffn_kind in (FfnKind.MLP, FfnKind.GLU):
        config = serial_config(ffn_kind=ffn_kind, positional=positional)
        for seed in range(N_SEEDS):
            model = random_model(config, seed=seed)
            for variant in FusionVariant:
                fused = fuse_model(model, variant)
                check_fused_pair(
                    model, fused, seed, problems,
                    f"{ffn_kind.value}/{variant.value}/seed {seed}")


def run_grouped_gating(positional, problems):
    for n_kv_heads, kind in ((1, "mqa"), (2, "gqa")):
        config = serial_config(n_kv_heads=n_kv_heads, positional=positional)
        model = random_model(config, seed=0)
        fused = fuse_model(model, FusionVariant.ELIMINATE_Q)
        check_fused_pair(model, fused, 0, problems, f"{kind}/q")
        for variant in (FusionVariant.ELIMINATE_K, FusionVariant.ELIMINATE_V):
            try:
                fuse_model(model, variant)
                problems.append(f"{kind}/{variant.value}: accepted, expected rejection")
            except ApplicabilityError:
                pass


def run_parallel_sweep(positional, problems):
    d, layers = 32, 3
    for n_kv_heads in (4, 1, 2):
        config = ModelConfig(d=d, n_layers=layers, n_heads=4,
                             n_kv_heads=n_kv_heads, f=64, vocab_size=97,
                             topology=Topology.PARALLEL, positional=positional)
        for seed in range(3):
            model = random_model(config, seed=seed)
            folded = fold_q_parallel(model)
            check_fused_pair(model, folded, seed, problems,
                             f"parallel kv={n_kv_heads}/seed {seed}")
            delta = count_stored_weights(model) - count_stored_weights(folded)
            if delta != d * d * layers:
                problems.append(
                    f"parallel kv={n_kv_heads}: delta {delta} != {d * d * layers}")


def test_weight_count_tables(report):
    problems = []
    expected = {
        "pythia-6.9b": dict(qp=33_554_432, kv=33_554_432, ffn=134_217_728,
                            embed=412_876_800, total=6_855_327_744,
                            without=5_781_585_920, pct=16, speed="1.19x",
                            shown=("6.9B", "5.8B")),
        "mistral-7b": dict(qp=33_554_432, kv=8_388_608, ffn=176_160_768,
                           embed=262_144_000, total=7_241_465_856,
                           without=6_167_724_032, pct=15, speed="1.17x",
                           shown=("7.2B", "6.2B")),
    }
    for name, want in expected.items():
        config = PRESETS[name]
        rep = count_weights(config)
        got = dict(qp=rep.qp_per_layer, kv=rep.kv_per_layer, ffn=rep.ffn_per_layer,
                   embed=rep.embed_total, total=rep.total, without=rep.total_without_qp)
        for key, value in got.items():
            if value != want[key]:
                problems.append(f"{name}: {key} = {value}, expected {want[key]}")
        pct, speed = savings_and_speedup(rep)
        if round(pct) != want["pct"]:
            problems.append(f"{name}: savings {round(pct)}%, expected {want['pct']}%")
        if f"{speed:.2f}x" != want["speed"]:
            problems.append(f"{name}: speedup {speed:.2f}x, expected {want['speed']}")
        table = render_table(config, rep, name=name)
        for token in want["shown"]:
            if token not in table:
                problems.append(f"{name}: table is missing {token!r}")
    report("weight-count tables match the published figures", problems)


def test_serial_fusion_equivalence(report):
    problems = []
    started = time.monotonic()
    run_serial_sweep(Positional.NONE, problems)
    elapsed = time.monotonic() - started
    if elapsed >= 10.0:
        problems.append(f"sweep took {elapsed:.1f}s, budget is 10s")
    report("serial q/k/v fusion is exact over seeds and ffn kinds", problems)


def test_grouped_kv_gating(report):
    problems = []
    run_grouped_gating(Positional.NONE, problems)
    report("mqa/gqa accept q-fusion and reject k/v", problems)


def test_parallel_fold(report):
    problems = []
    run_parallel_sweep(Positional.NONE, problems)
    report("parallel q-fold is exact and removes d^2 per layer", problems)


def test_rotary_repeats(report):
    problems = []
    run_serial_sweep(Positional.ROTARY, problems)
    run_grouped_gating(Positional.ROTARY, problems)
    run_parallel_sweep(Positional.ROTARY, problems)
    report("fusion guarantees hold with rotary embeddings", problems)


def test_serial_weight_reduction(report):
    problems = []
    config = serial_config()
    d, layers = config.d, config.n_layers
    model = random_model(config, seed=3)
    before = count_stored_weights(model)
    for variant in FusionVariant:
        after = count_stored_weights(fuse_model(model, variant))
        if before - after != 2 * d * d * layers:
            problems.append(
                f"{variant.value}: removed {before - after}, "
                f"expected {2 * d * d * layers}")
    report("serial fusion stores exactly 2 d^2 fewer floats per layer", problems)


def test_singularity_handling(report):
    problems = []
    model = random_model(serial_config(), seed=4)
    model.blocks[2].Q[1] = model.blocks[2].Q[0]
    try:
        fuse_model(model, FusionVariant.ELIMINATE_Q)
        problems.append("singular Q accepted")
    except SingularMatrix as exc:
        if exc.block != 2:
            problems.append(f"error names block {exc.block}, expected 2")
        if "block 2" not in str(exc):
            problems.append(f"message {str(exc)!r} does not name block 2")

    worst = 0.0
    for seed in range(100):
        a = random_gaussian(64, 64, seed=seed)
        worst = max(worst, np.max(np.abs(a @ invert(a) - np.eye(64))))
    if worst >= 1e-9:
        problems.append(f"worst inversion residual {worst:.3e} >= 1e-9")
    report("singular projections are reported, generic ones invert cleanly", problems)


def test_checkpoint_contract(report, tmp_path):
    problems = []
    golden = Path(__file__).parent / "data" / "golden.spf"

    model = random_model(serial_config(ffn_kind=FfnKind.GLU), seed=5)
    path = tmp_path / "model.spf"
    save(model, "f64", path)
    loaded = load(path)
    for (name, a), (_, b) in zip(tensor_entries(model), tensor_entries(loaded)):
        if not np.array_equal(a, b):
            problems.append(f"f64 round trip is not bit-exact at {name}")
            break

    regen = tmp_path / "golden.spf"
    save(random_model(GOLDEN_CONFIG, seed=0), "f64", regen)
    if regen.read_bytes() != golden.read_bytes():
        problems.append("regenerated golden checkpoint differs from committed bytes")

    blob = golden.read_bytes()
    cases = [
        (b"X" + blob[1:], BadMagic),
        (blob[:len(blob) // 2], TruncatedPayload),
        (blob[:12], CorruptHeader),
        (blob + b"\x00", CorruptHeader),
    ]
    for i, (corrupt, expected) in enumerate(cases):
        bad = tmp_path / f"bad{i}.spf"
        bad.write_bytes(corrupt)
        try:
            load(bad)
            problems.append(f"malformed case {i} loaded")
        except expected:
            pass
        except Exception as exc:
            problems.append(f"malformed case {i}: {type(exc).__name__}, "
                            f"expected {expected.__name__}")

    config = ModelConfig(d=2, n_layers=1, n_heads=1, n_kv_heads=1, f=2,
                         vocab_size=2, reduced_form=ReducedForm.NO_QP)
    tensors = [("E", np.ones((2, 2)), None), ("blk0.Q", np.eye(2), None),
               ("blk0.K", np.ones((2, 2)), None), ("blk0.V", np.ones((2, 2)), None),
               ("blk0.M", np.ones((2, 2)), None), ("blk0.O", np.ones((2, 2)), None),
               ("U", np.ones((2, 2)), None)]
    contradiction = tmp_path / "contradiction.spf"
    contradiction.write_bytes(build_blob(config, tensors))
    try:
        load(contradiction)
        problems.append("form-contradicting checkpoint loaded")
    except InconsistentForm:
        pass
    except Exception as exc:
        problems.append(f"form contradiction raised {type(exc).__name__}")

    report("checkpoints are bit-exact, golden-stable and strictly validated", problems)


def test_attention_oracle(report):
    problems = []
    shapes = [
        dict(d=16, n_heads=4, n_kv_heads=4),
        dict(d=16, n_heads=4, n_kv_heads=1),
        dict(d=16, n_heads=4, n_kv_heads=2),
        dict(d=8, n_heads=2, n_kv_heads=2),
    ]
    for seed in range(20):
        dims = shapes[seed % len(shapes)]
        config = ModelConfig(n_layers=1, f=8, vocab_size=5,
                             causal=bool(seed % 2), **dims)
        model = random_model(config, seed=seed)
        t = 2 + seed % 7  # up to 8 positions
        x = np.random.Generator(np.random.PCG64(1000 + seed)).standard_normal(
            (t, config.d))
        got = attention_forward(x, model.blocks[0], config)
        want = reference.attention_ref(x, model.blocks[0], config)
        diff = reference.max_abs_diff(got.tolist(), want)
        if diff >= ORACLE_TOL:
            problems.append(f"seed {seed}: oracle diff {diff:.3e}")
    report("attention matches the scalar brute-force oracle", problems)
