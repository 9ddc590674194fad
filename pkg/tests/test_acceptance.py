"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Exact algebraic checks run at machine precision; oracle checks against
independently computed references; the table-direction checks run on the
default engineered dataset with the default training budget (session fixture).
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from flowinv.autodiff import StepLossSpec, step_loss_and_grad
from flowinv.checkpoint import save_checkpoint
from flowinv.cli import dispatch
from flowinv.core import constant_field, embed_condition, eval_velocity, init_field, raw_condition
from flowinv.dataset import default_spec
from flowinv.diagnostics import (
    run_prompt_type_experiment,
    run_reconstruction_table,
    run_sink_experiment,
)
from flowinv.editing import EditRequest, edit
from flowinv.nti import NTIConfig, nti_optimize
from flowinv.sampler import GuidanceConfig, guided_velocity, invert, sample
from flowinv.training import TrainConfig, train


@contextmanager
def criterion(number, name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} {name}: FAIL")
        raise
    print(f"ACCEPTANCE {number} {name}: PASS")


def seeded_source(spec, token, seed):
    rng = np.random.default_rng(seed)
    return spec.mode_of(token) + spec.stddev * rng.standard_normal(spec.d)


def test_criterion_1_gradient_correctness():
    with criterion(1, "gradient-correctness"):
        t0 = time.time()
        h, worst = 1e-5, 0.0
        for cfg_idx in range(100):
            rng = np.random.default_rng(1000 + cfg_idx)
            d = int(rng.integers(2, 7))
            d_c = int(rng.integers(2, 9))
            width = int(rng.integers(4, 16))
            field = init_field(d=d, d_c=d_c, vocab=3, widths=(width,), seed=cfg_idx)
            z = rng.standard_normal(d)
            t = float(rng.uniform(0, 1))
            e = rng.standard_normal(d_c)
            spec = StepLossSpec(
                target=rng.standard_normal(d),
                dt=float(rng.uniform(-0.1, 0.1)),
                cond_embedding=rng.standard_normal(d_c),
                guidance=float(rng.uniform(0, 6)),
            )
            _, grad = step_loss_and_grad(field, z, t, e, spec)
            fd = np.zeros(d_c)
            for k in range(d_c):
                ep, em = e.copy(), e.copy()
                ep[k] += h
                em[k] -= h
                fd[k] = (step_loss_and_grad(field, z, t, ep, spec)[0]
                         - step_loss_and_grad(field, z, t, em, spec)[0]) / (2 * h)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-10)
            worst = max(worst, rel)
        elapsed = time.time() - t0
        assert worst < 1e-4, f"worst relative error {worst:.3e}"
        assert elapsed < 10.0, f"took {elapsed:.1f}s"


def test_criterion_2_cfg_identities(default_checkpoint):
    with criterion(2, "cfg-identities"):
        field = default_checkpoint.field
        empty = default_checkpoint.condition(0)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            z = rng.standard_normal(field.d)
            t = float(rng.uniform(0, 1))
            cond = raw_condition(rng.standard_normal(field.d_c))
            v_c = eval_velocity(field, z, t, cond)
            v_u = eval_velocity(field, z, t, empty)
            assert np.max(np.abs(guided_velocity(field, z, t, cond, guidance=1.0) - v_c)) < 1e-12
            assert np.max(np.abs(guided_velocity(field, z, t, cond, guidance=0.0) - v_u)) < 1e-12
            for w in (0.0, 1.0, 2.5, 5.0, 11.0):
                drift = guided_velocity(field, z, t, empty, guidance=w) - v_u
                assert np.max(np.abs(drift)) < 1e-12


def test_criterion_3_constant_field_oracle():
    with criterion(3, "constant-field-oracle"):
        base = init_field(seed=1)
        c = np.array([0.4, -1.1, 0.06, 1.7, -0.5, 0.98, -0.27, 1.42])
        field = constant_field(base, c)
        cond = embed_condition(field, 0)
        for n in (1, 7, 50):
            rng = np.random.default_rng(n)
            z0 = rng.standard_normal(8)
            cfg = GuidanceConfig(steps=n)
            traj = invert(field, z0, cond, cfg)
            assert np.max(np.abs(traj.final - (z0 + c))) < 1e-12
            back = sample(field, traj.final, cond, cfg,
                          start_compensation=traj.final_compensation)
            assert np.array_equal(back.final, z0), f"round trip not bitwise at N={n}"


def test_criterion_4_euler_convergence_order(default_checkpoint):
    with criterion(4, "euler-convergence-order"):
        t0 = time.time()
        field = default_checkpoint.field
        spec = default_checkpoint.spec
        empty = default_checkpoint.condition(0)
        steps = (25, 50, 100, 200)
        errs = []
        for n in steps:
            cfg = GuidanceConfig(steps=n)
            vals = []
            for seed in range(4):
                z0 = seeded_source(spec, spec.trained_tokens()[seed], 40 + seed)
                z1 = invert(field, z0, empty, cfg).final
                vals.append(np.mean(np.abs(sample(field, z1, empty, cfg).final - z0)))
            errs.append(np.mean(vals))
        slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
        elapsed = time.time() - t0
        assert -1.3 < slope < -0.7, f"slope {slope:.3f}"
        assert elapsed < 30.0, f"took {elapsed:.1f}s"


def test_criterion_5_nti_fixpoint(default_checkpoint):
    with criterion(5, "nti-fixpoint"):
        field = default_checkpoint.field
        empty = default_checkpoint.condition(0)
        z0 = seeded_source(default_checkpoint.spec, 1, 7)
        reference = invert(field, z0, empty, GuidanceConfig())
        schedule, _, _ = nti_optimize(field, reference, empty, NTIConfig(inner_steps=10))
        assert schedule.initial_losses.max() < 1e-10, (
            f"max initial loss {schedule.initial_losses.max():.3e}")
        drift = np.abs(schedule.embeddings - field.embeddings[0]).max()
        assert drift < 1e-8, f"embedding drift {drift:.3e}"


def test_criterion_6_reconstruction_table_ordering(default_run):
    with criterion(6, "reconstruction-table-ordering"):
        t0 = time.time()
        rows = {r.config: r.l1_mean for r in
                run_reconstruction_table(default_run.ckpt, trials=64, seed=3)}
        elapsed = time.time() - t0 + default_run.train_seconds
        ea, na = rows["euler_approx"], rows["nti_approx"]
        ee, ne = rows["euler_empty"], rows["nti_empty"]
        assert ea > na > ee, f"ordering violated: {ea:.4f}, {na:.4f}, {ee:.4f}"
        assert ea >= 3.0 * ee, f"separation {ea / ee:.2f}x < 3x"
        assert ee <= 2.0 * ne and ne <= 2.0 * ee, f"parity violated: {ee:.4f} vs {ne:.4f}"
        assert elapsed < 300.0, f"took {elapsed:.1f}s including training"


def test_criterion_7_ood_velocity_norms(default_checkpoint):
    with criterion(7, "ood-velocity-norms"):
        result = run_prompt_type_experiment(default_checkpoint, trials=32, seed=5)
        rows = {r.kind: r for r in result.rows}
        ratio = rows["ood"].norm_mean / rows["empty"].norm_mean
        assert ratio >= 1.2, f"ood/empty norm ratio {ratio:.3f}"


def test_criterion_8_sink_trap_diversity(default_checkpoint):
    with criterion(8, "sink-trap-diversity"):
        reports = {r.anchor: r.ratio for r in
                   run_sink_experiment(default_checkpoint, samples_per_token=8, seed=11)}
        spec = default_checkpoint.spec
        for sink in (a.name for a in spec.anchors if a.sink):
            for diverse in (a.name for a in spec.anchors if not a.sink):
                assert reports[sink] < 0.5 * reports[diverse], (
                    f"R({sink})={reports[sink]:.3f} not < 0.5*R({diverse})={reports[diverse]:.3f}")


def test_criterion_9_edit_retargeting(default_checkpoint):
    with criterion(9, "edit-retargeting"):
        spec = default_checkpoint.spec
        diverse_tokens = [t for a in spec.anchors if not a.sink for t in a.tokens]
        hits = 0
        nti_not_worse = 0
        for i in range(16):
            rng = np.random.default_rng(100 + i)
            src = int(diverse_tokens[rng.integers(len(diverse_tokens))])
            others = [t for t in diverse_tokens if t != src]
            tgt = int(others[rng.integers(len(others))])
            z0 = seeded_source(spec, src, 200 + i)
            with_nti = edit(default_checkpoint, EditRequest(source=z0, edit_token=tgt))
            without = edit(default_checkpoint,
                           EditRequest(source=z0, edit_token=tgt, use_nti=False))
            if with_nti.edited_mode == with_nti.target_mode:
                hits += 1
            if with_nti.reconstruction_l1 <= without.reconstruction_l1:
                nti_not_worse += 1
        assert hits >= 14, f"only {hits}/16 edits reached the target mode"
        assert nti_not_worse >= 12, f"NTI reconstruction better in only {nti_not_worse}/16"


def test_criterion_10_cli_determinism(tmp_path):
    with criterion(10, "cli-determinism"):
        def artifacts(root):
            return sorted(p for p in root.rglob("*") if p.is_file())

        def compare(a, b):
            fa, fb = artifacts(a), artifacts(b)
            assert [p.relative_to(a) for p in fa] == [p.relative_to(b) for p in fb]
            for pa, pb in zip(fa, fb):
                assert pa.read_bytes() == pb.read_bytes(), f"{pa.name} differs"

        ckpt_dir = tmp_path / "ckpt"
        ckpt_dir.mkdir(parents=True)
        ckpt = ckpt_dir / "model.finv"
        save_checkpoint(train(default_spec(seed=0), TrainConfig(iterations=120, seed=0)), ckpt)

        commands = {
            "train": ["train", "--seed", "7", "--iterations", "120"],
            "invert": ["invert", "--ckpt", str(ckpt), "--seed", "3",
                       "--source-token", "2", "--steps", "12"],
            "edit": ["edit", "--ckpt", str(ckpt), "--seed", "3", "--source-token", "2",
                     "--edit-token", "10", "--steps", "12"],
            "exp-sink": ["experiment", "sink", "--ckpt", str(ckpt), "--seed", "3",
                         "--samples-per-token", "2", "--steps", "12"],
            "exp-prompt": ["experiment", "prompt-type", "--ckpt", str(ckpt), "--seed", "3",
                           "--trials", "2", "--steps", "12"],
            "exp-recon": ["experiment", "recon-table", "--ckpt", str(ckpt), "--seed", "3",
                          "--trials", "2", "--steps", "12"],
        }
        for name, argv in commands.items():
            runs = []
            for attempt in ("one", "two"):
                out = tmp_path / name / attempt
                assert dispatch(argv + ["--out", str(out)]) == 0, f"{name} failed"
                runs.append(out)
            compare(*runs)
