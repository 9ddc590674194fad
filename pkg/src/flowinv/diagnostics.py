"""Measurement instruments: diversity ratio, velocity-norm statistics, L1
reconstruction, and the three experiment runners behind the CSV contract.

CSV schemas consumed downstream by the plotting component:
  sink_experiment.csv : anchor, delta_vis, delta_txt, R, n
  prompt_type.csv     : kind, l1_mean, l1_std, fail_rate, norm_mean
  recon_table.csv     : config, l1_mean, l1_std
  norm_trace.csv      : kind, step, t, norm_mean   (per-step traces, extra)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import EMPTY_TOKEN, KIND_APPROXIMATE
from .dataset import draw_mode_sample
from .errors import LatentExplosionError, MetricError, ShapeMismatchError
from .nti import NTIConfig, nti_optimize
from .rng import stream
from .sampler import GuidanceConfig, Trajectory, invert, sample
from .training import Checkpoint

PROMPT_KINDS = ("true", "approximate", "empty", "ood")
RECON_CONFIGS = ("euler_approx", "nti_approx", "euler_empty", "nti_empty")


@dataclass(frozen=True)
class DiversityReport:
    anchor: str
    delta_vis: float
    delta_txt: float
    ratio: float | None   # absent when the prompt set is degenerate
    n: int
    degenerate_prompts: bool = False


@dataclass(frozen=True)
class NormStats:
    mean: float
    median: float
    max: float


def avg_pairwise_cosine_distance(vectors) -> float:
    """Mean of (1 - cosine similarity) over all ordered pairs i != j."""
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 2:
        raise MetricError("need at least two vectors")
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise MetricError("zero-norm vector in cosine-distance input")
    unit = mat / norms[:, None]
    # clip keeps each pair distance in [0, 2]; dot products of identical unit
    # vectors can round to 1 + eps
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    n = mat.shape[0]
    off_diag_sum = float(cos.sum() - np.trace(cos))
    return max(0.0, 1.0 - off_diag_sum / (n * (n - 1)))


# Below this, a prompt set is treated as collapsed to a single direction: an
# identical-vector set lands at ~1e-16 through float rounding, never exactly 0.
DEGENERATE_DELTA = 1e-12


def diversity_ratio(vis_embeddings, txt_embeddings, anchor: str = "") -> DiversityReport:
    """Delta_vis, Delta_txt, and their ratio R for matched sample/prompt sets."""
    vis = np.asarray(vis_embeddings, dtype=np.float64)
    txt = np.asarray(txt_embeddings, dtype=np.float64)
    if vis.shape[0] != txt.shape[0]:
        raise ShapeMismatchError(
            f"{vis.shape[0]} visual vs {txt.shape[0]} text embeddings"
        )
    delta_vis = avg_pairwise_cosine_distance(vis)
    delta_txt = avg_pairwise_cosine_distance(txt)
    if delta_txt < DEGENERATE_DELTA:
        return DiversityReport(anchor=anchor, delta_vis=delta_vis, delta_txt=delta_txt,
                               ratio=None, n=vis.shape[0], degenerate_prompts=True)
    return DiversityReport(anchor=anchor, delta_vis=delta_vis, delta_txt=delta_txt,
                           ratio=delta_vis / delta_txt, n=vis.shape[0])


def l1_reconstruction(x_hat: np.ndarray, x_ref: np.ndarray) -> float:
    """Mean absolute coordinate difference."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x_hat.shape != x_ref.shape:
        raise ShapeMismatchError(f"shapes {x_hat.shape} vs {x_ref.shape}")
    return float(np.mean(np.abs(x_hat - x_ref)))


def norm_trace_stats(groups: dict[str, list[Trajectory]]) -> dict[str, NormStats]:
    """Per-group mean/median/max of the step-wise normalized velocity norms."""
    if not groups:
        raise MetricError("no trajectory groups")
    out = {}
    for kind, trajectories in groups.items():
        if not trajectories:
            raise MetricError(f"empty trajectory group {kind!r}")
        norms = np.concatenate([t.velocity_norms for t in trajectories])
        out[kind] = NormStats(mean=float(norms.mean()), median=float(np.median(norms)),
                              max=float(norms.max()))
    return out


def visual_projection(d: int, seed: int, out_dim: int = 16) -> np.ndarray:
    """Fixed seeded linear map standing in for the external visual encoder."""
    return stream(seed, "phi-vis").standard_normal((out_dim, d))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise MetricError("zero-norm embedding")
    return v / n


def run_sink_experiment(
    ckpt: Checkpoint,
    anchors: list[str] | None = None,
    samples_per_token: int = 8,
    seed: int = 0,
    cfg: GuidanceConfig = GuidanceConfig(),
) -> list[DiversityReport]:
    """Per anchor: generate seeded samples for each token, embed samples through
    the visual projection and tokens through their (normalized) embeddings,
    and report the diversity ratio."""
    field, spec = ckpt.field, ckpt.spec
    proj = visual_projection(field.d, seed)
    selected = spec.anchors if anchors is None else tuple(
        a for a in spec.anchors if a.name in anchors
    )
    reports = []
    for anchor in selected:
        if len(anchor.tokens) < 2:
            raise MetricError(f"anchor {anchor.name} has a single token; need >= 2")
        vis, txt = [], []
        for token in anchor.tokens:
            cond = ckpt.condition(token)
            for s in range(samples_per_token):
                rng = stream(seed, "sink", anchor.name, str(token), str(s))
                z1 = rng.standard_normal(field.d)
                out = sample(field, z1, cond, cfg).final
                vis.append(_unit(proj @ out))
                txt.append(_unit(field.embeddings[token]))
        reports.append(diversity_ratio(np.stack(vis), np.stack(txt), anchor=anchor.name))
    return reports


def write_sink_csv(path, reports: list[DiversityReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["anchor", "delta_vis", "delta_txt", "R", "n"])
        for r in reports:
            ratio = "" if r.ratio is None else repr(r.ratio)
            writer.writerow([r.anchor, repr(r.delta_vis), repr(r.delta_txt), ratio, r.n])


@dataclass(frozen=True)
class PromptTypeRow:
    kind: str
    l1_mean: float
    l1_std: float
    fail_rate: float
    norm_mean: float


@dataclass(frozen=True)
class PromptTypeResult:
    rows: tuple[PromptTypeRow, ...]
    # kind -> (times, per-step mean norm) over successful inversions
    traces: dict[str, tuple[np.ndarray, np.ndarray]]
    inversions: dict[str, list[Trajectory]]


def _trial_source(ckpt: Checkpoint, seed: int, label: str, trial: int):
    """Seeded (token, source latent) draw shared by the experiment runners."""
    spec = ckpt.spec
    rng = stream(seed, label, f"trial{trial}")
    tokens = spec.trained_tokens()
    token = int(tokens[rng.integers(len(tokens))])
    return rng, token, draw_mode_sample(spec, token, rng)


def run_prompt_type_experiment(
    ckpt: Checkpoint,
    trials: int,
    seed: int = 0,
    cfg: GuidanceConfig = GuidanceConfig(),
) -> PromptTypeResult:
    """Invert + resample known-mode samples under true / approximate / empty /
    OOD conditions; latent explosions count as per-trial failures, not aborts."""
    field, spec = ckpt.field, ckpt.spec
    l1s: dict[str, list[float]] = {k: [] for k in PROMPT_KINDS}
    fails: dict[str, int] = {k: 0 for k in PROMPT_KINDS}
    inversions: dict[str, list[Trajectory]] = {k: [] for k in PROMPT_KINDS}

    for trial in range(trials):
        rng, token, z0 = _trial_source(ckpt, seed, "prompt-type", trial)
        ood_token = int(spec.ood_tokens[rng.integers(len(spec.ood_tokens))])
        conditions = {
            "true": ckpt.condition(token),
            "approximate": ckpt.condition(spec.approximate_token(token)).as_kind(KIND_APPROXIMATE),
            "empty": ckpt.condition(EMPTY_TOKEN),
            "ood": ckpt.condition(ood_token),
        }
        for kind in PROMPT_KINDS:
            try:
                inv = invert(field, z0, conditions[kind], cfg)
                rec = sample(field, inv.final, conditions[kind], cfg)
            except LatentExplosionError:
                fails[kind] += 1
                continue
            inversions[kind].append(inv)
            l1s[kind].append(l1_reconstruction(rec.final, z0))

    rows = []
    traces = {}
    for kind in PROMPT_KINDS:
        vals = np.asarray(l1s[kind])
        group = inversions[kind]
        norm_mean = (
            float(np.concatenate([t.velocity_norms for t in group]).mean())
            if group else float("nan")
        )
        rows.append(PromptTypeRow(
            kind=kind,
            l1_mean=float(vals.mean()) if vals.size else float("nan"),
            l1_std=float(vals.std()) if vals.size else float("nan"),
            fail_rate=fails[kind] / trials if trials else 0.0,
            norm_mean=norm_mean,
        ))
        if group:
            traces[kind] = (group[0].times.copy(),
                            np.mean([t.velocity_norms for t in group], axis=0))
    return PromptTypeResult(rows=tuple(rows), traces=traces, inversions=inversions)


def write_prompt_type_csv(path, result: PromptTypeResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "l1_mean", "l1_std", "fail_rate", "norm_mean"])
        for row in result.rows:
            writer.writerow([row.kind, repr(row.l1_mean), repr(row.l1_std),
                             repr(row.fail_rate), repr(row.norm_mean)])


def write_norm_trace_csv(path, result: PromptTypeResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "step", "t", "norm_mean"])
        for kind, (times, norms) in result.traces.items():
            for i in range(times.size):
                writer.writerow([kind, i, repr(float(times[i])), repr(float(norms[i]))])


@dataclass(frozen=True)
class ReconRow:
    config: str
    l1_mean: float
    l1_std: float
    n_failed: int


# Inner learning rate of the prompted null-text baseline. The classic method
# pairs its w=1 pivotal inversion with a 1e-2 inner optimizer; this pipeline's
# own null optimization (the empty-prompt rows) keeps the 1e-4 default.
BASELINE_NTI_LR = 1e-2


def run_reconstruction_table(
    ckpt: Checkpoint,
    trials: int,
    seed: int = 0,
    cfg: GuidanceConfig = GuidanceConfig(),
    nti_cfg: NTIConfig | None = None,
    baseline_lr: float = BASELINE_NTI_LR,
) -> list[ReconRow]:
    """Four-configuration reconstruction comparison.

    euler_approx : invert and resample with the approximate prompt at the CFG scale.
    nti_approx   : pivotal reference inverted with the approximate prompt at
                   w=1, null-optimized at the baseline's inner lr, resampled
                   at the CFG scale with the schedule (the classic prompted
                   null-text baseline).
    euler_empty  : invert and resample with the empty prompt.
    nti_empty    : null-optimize against the empty-prompt reference, resample
                   with the schedule.
    """
    field, spec = ckpt.field, ckpt.spec
    if nti_cfg is None:
        nti_cfg = NTIConfig(guidance=cfg.guidance)
    baseline_cfg = NTIConfig(inner_steps=nti_cfg.inner_steps, lr=baseline_lr,
                             guidance=cfg.guidance, early_stop=nti_cfg.early_stop)
    pivot_cfg = GuidanceConfig(guidance=1.0, steps=cfg.steps)
    l1s: dict[str, list[float]] = {c: [] for c in RECON_CONFIGS}
    fails: dict[str, int] = {c: 0 for c in RECON_CONFIGS}

    for trial in range(trials):
        _, token, z0 = _trial_source(ckpt, seed, "recon-table", trial)
        approx = ckpt.condition(spec.approximate_token(token)).as_kind(KIND_APPROXIMATE)
        empty = ckpt.condition(EMPTY_TOKEN)

        def run(config: str, fn) -> None:
            try:
                l1s[config].append(l1_reconstruction(fn(), z0))
            except LatentExplosionError:
                fails[config] += 1

        def euler_approx():
            inv = invert(field, z0, approx, cfg)
            return sample(field, inv.final, approx, cfg).final

        def nti_approx():
            ref = invert(field, z0, approx, pivot_cfg)
            schedule, _, _ = nti_optimize(field, ref, approx, baseline_cfg)
            return sample(field, ref.final, approx, cfg, schedule).final

        def euler_empty():
            inv = invert(field, z0, empty, cfg)
            return sample(field, inv.final, empty, cfg).final

        def nti_empty():
            ref = invert(field, z0, empty, cfg)
            schedule, _, _ = nti_optimize(field, ref, empty, nti_cfg)
            return sample(field, ref.final, empty, cfg, schedule).final

        run("euler_approx", euler_approx)
        run("nti_approx", nti_approx)
        run("euler_empty", euler_empty)
        run("nti_empty", nti_empty)

    rows = []
    for config in RECON_CONFIGS:
        vals = np.asarray(l1s[config])
        rows.append(ReconRow(
            config=config,
            l1_mean=float(vals.mean()) if vals.size else float("nan"),
            l1_std=float(vals.std()) if vals.size else float("nan"),
            n_failed=fails[config],
        ))
    return rows


def write_recon_csv(path, rows: list[ReconRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "l1_mean", "l1_std"])
        for row in rows:
            writer.writerow([row.config, repr(row.l1_mean), repr(row.l1_std)])
