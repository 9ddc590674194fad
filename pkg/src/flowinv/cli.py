"""Command-line front end: thin composition of module operations.

Exit codes: 0 success, 1 usage error, 2 runtime numeric/IO error. Every
failure prints one machine-parsable line `error: <category>: <message>` on
stderr. All stochastic commands require --seed; randomness derives from it
through named Philox streams only.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import dataset, diagnostics, editing, sampler, training
from .core import EMPTY_TOKEN
from .errors import FlowInvError, UsageError
from .nti import NTIConfig, nti_optimize
from .rng import stream
from .sampler import GuidanceConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise UsageError(message)


def _add_guidance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--guidance", type=float, default=5.0, help="CFG scale w")
    p.add_argument("--steps", type=int, default=50, help="sampling timesteps")


def _add_nti_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--inner-steps", type=int, default=10,
                   help="inner optimization steps per sampling step")
    p.add_argument("--nti-lr", type=float, default=1e-4,
                   help="learning rate of the null-embedding optimizer")


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="flowinv", description=__doc__,
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML file with flag defaults (key = flag name)")
    sub = parser.add_subparsers(dest="command", metavar="command")
    leaves: dict[str, argparse.ArgumentParser] = {}

    def leaf(owner, name: str, help_text: str) -> argparse.ArgumentParser:
        p = owner.add_parser(name, help=help_text,
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        leaves[name if owner is sub else f"experiment.{name}"] = p
        return p

    p = leaf(sub, "train", "train a velocity field on the default dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--iterations", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--train-lr", type=float, default=1e-3)
    p.add_argument("--d", type=int, default=8, help="latent dimension")
    p.add_argument("--dc", type=int, default=16, help="condition embedding dimension")
    p.add_argument("--widths", type=str, default="64,64", help="hidden widths, comma separated")

    p = leaf(sub, "generate", "sample a latent from seeded noise under a token")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--token", type=int, default=EMPTY_TOKEN)
    _add_guidance_flags(p)

    p = leaf(sub, "invert", "invert a seeded mode sample to its noise latent")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--source-token", type=int, required=True,
                   help="trained token whose mode the source is drawn from")
    p.add_argument("--cond-token", type=int, default=EMPTY_TOKEN,
                   help="condition used during inversion (0 = empty prompt)")
    _add_guidance_flags(p)

    p = leaf(sub, "reconstruct", "invert then resample; reports the L1 error")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--source-token", type=int, required=True)
    p.add_argument("--cond-token", type=int, default=EMPTY_TOKEN)
    p.add_argument("--nti", action="store_true", help="optimize the null schedule")
    _add_guidance_flags(p)
    _add_nti_flags(p)

    p = leaf(sub, "edit", "invert with the empty prompt, resample under an edit token")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--source-token", type=int, required=True)
    p.add_argument("--edit-token", type=int, required=True)
    p.add_argument("--nti", dest="nti", action="store_true", default=True)
    p.add_argument("--no-nti", dest="nti", action="store_false")
    _add_guidance_flags(p)
    _add_nti_flags(p)

    exp = leaf(sub, "experiment", "run one of the diagnostic experiments")
    exp_sub = exp.add_subparsers(dest="experiment", metavar="kind")

    p = leaf(exp_sub, "sink", "diversity ratios per anchor")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--samples-per-token", type=int, default=8)
    _add_guidance_flags(p)

    p = leaf(exp_sub, "prompt-type", "inversion quality per prompt kind")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trials", type=int, default=32)
    _add_guidance_flags(p)

    p = leaf(exp_sub, "recon-table", "four-configuration reconstruction table")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trials", type=int, default=64)
    _add_guidance_flags(p)
    _add_nti_flags(p)

    p = leaf(sub, "inspect", "print a checkpoint's header as JSON")
    p.add_argument("--ckpt", type=Path, required=True)

    return parser, leaves


def _apply_config(path: Path, leaves: dict[str, argparse.ArgumentParser]) -> None:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"bad config file: {exc}") from exc
    known: set[str] = set()
    for p in leaves.values():
        known |= {a.dest for a in p._actions}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for p in leaves.values():
        dests = {a.dest for a in p._actions}
        p.set_defaults(**{k: v for k, v in cfg.items() if k in dests})


def _outdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _source_latent(ckpt, token: int, seed: int) -> np.ndarray:
    if token not in ckpt.spec.trained_tokens():
        raise UsageError(f"--source-token {token} is not a trained token")
    rng = stream(seed, "cli", "source", str(token))
    return dataset.draw_mode_sample(ckpt.spec, token, rng)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def _cmd_train(args) -> int:
    out = _outdir(args.out)
    widths = tuple(int(w) for w in str(args.widths).split(",") if w)
    spec = dataset.default_spec(seed=args.seed, d=args.d)
    config = training.TrainConfig(
        batch_size=args.batch_size, iterations=args.iterations, lr=args.train_lr,
        seed=args.seed, d=args.d, d_c=args.dc, widths=widths,
    )
    ckpt = training.train(spec, config)
    ckpt_io.save_checkpoint(ckpt, out / "model.finv")
    training.write_loss_curve(out / "loss_curve.csv", ckpt.loss_curve)
    print(f"wrote {out / 'model.finv'}")
    return 0


def _cmd_generate(args) -> int:
    out = _outdir(args.out)
    ckpt = ckpt_io.load_checkpoint(args.ckpt)
    cfg = GuidanceConfig(guidance=args.guidance, steps=args.steps)
    z1 = stream(args.seed, "cli", "noise").standard_normal(ckpt.field.d)
    traj = sampler.sample(ckpt.field, z1, ckpt.condition(args.token), cfg)
    sampler.dump_trajectories(out / "trajectory.csv", out / "latents.json",
                              [("generate", traj)])
    _write_json(out / "sample.json", {
        "token": args.token, "seed": args.seed,
        "latent": [float(x) for x in traj.final],
    })
    print(f"wrote {out / 'sample.json'}")
    return 0


def _cmd_invert(args) -> int:
    out = _outdir(args.out)
    ckpt = ckpt_io.load_checkpoint(args.ckpt)
    cfg = GuidanceConfig(guidance=args.guidance, steps=args.steps)
    z0 = _source_latent(ckpt, args.source_token, args.seed)
    traj = sampler.invert(ckpt.field, z0, ckpt.condition(args.cond_token), cfg)
    sampler.dump_trajectories(out / "trajectory.csv", out / "latents.json",
                              [("invert", traj)])
    _write_json(out / "noise.json", {
        "source_token": args.source_token, "cond_token": args.cond_token,
        "seed": args.seed, "noise_latent": [float(x) for x in traj.final],
    })
    print(f"wrote {out / 'noise.json'}")
    return 0


def _cmd_reconstruct(args) -> int:
    out = _outdir(args.out)
    ckpt = ckpt_io.load_checkpoint(args.ckpt)
    cfg = GuidanceConfig(guidance=args.guidance, steps=args.steps)
    z0 = _source_latent(ckpt, args.source_token, args.seed)
    cond = ckpt.condition(args.cond_token)
    inv = sampler.invert(ckpt.field, z0, cond, cfg)
    runs = [("invert", inv)]
    if args.nti:
        nti_cfg = NTIConfig(inner_steps=args.inner_steps, lr=args.nti_lr,
                            guidance=args.guidance)
        schedule, recon, tracked = nti_optimize(ckpt.field, inv, cond, nti_cfg)
        ckpt_io.save_null_schedule(schedule, args.guidance, out / "null_schedule.finv")
        runs.append(("nti-tracked", tracked))
    else:
        traj = sampler.sample(ckpt.field, inv.final, cond, cfg)
        recon = traj.final
        runs.append(("resample", traj))
    sampler.dump_trajectories(out / "trajectory.csv", out / "latents.json", runs)
    _write_json(out / "recon.json", {
        "source_token": args.source_token, "cond_token": args.cond_token,
        "nti": args.nti, "seed": args.seed,
        "l1": diagnostics.l1_reconstruction(recon, z0),
        "reconstruction": [float(x) for x in recon],
    })
    print(f"wrote {out / 'recon.json'}")
    return 0


def _cmd_edit(args) -> int:
    out = _outdir(args.out)
    ckpt = ckpt_io.load_checkpoint(args.ckpt)
    request = editing.EditRequest(
        source=_source_latent(ckpt, args.source_token, args.seed),
        edit_token=args.edit_token,
        use_nti=args.nti,
        guidance=GuidanceConfig(guidance=args.guidance, steps=args.steps),
        nti=NTIConfig(inner_steps=args.inner_steps, lr=args.nti_lr, guidance=args.guidance),
        seed=args.seed,
    )
    result = editing.edit(ckpt, request)
    sampler.dump_trajectories(out / "trajectory.csv", out / "latents.json", [
        ("inversion", result.inversion_trajectory),
        ("edited", result.edited_trajectory),
        ("reconstruction", result.reconstruction_trajectory),
    ])
    if result.null_schedule is not None:
        ckpt_io.save_null_schedule(result.null_schedule, args.guidance,
                                   out / "null_schedule.finv")
    payload = editing.edit_result_json(request, result)
    payload["request"]["source_token"] = args.source_token
    _write_json(out / "edit.json", payload)
    print(f"wrote {out / 'edit.json'}")
    return 0


def _cmd_experiment(args) -> int:
    out = _outdir(args.out)
    ckpt = ckpt_io.load_checkpoint(args.ckpt)
    cfg = GuidanceConfig(guidance=args.guidance, steps=args.steps)
    if args.experiment == "sink":
        reports = diagnostics.run_sink_experiment(
            ckpt, samples_per_token=args.samples_per_token, seed=args.seed, cfg=cfg)
        diagnostics.write_sink_csv(out / "sink_experiment.csv", reports)
        print(f"wrote {out / 'sink_experiment.csv'}")
    elif args.experiment == "prompt-type":
        result = diagnostics.run_prompt_type_experiment(
            ckpt, trials=args.trials, seed=args.seed, cfg=cfg)
        diagnostics.write_prompt_type_csv(out / "prompt_type.csv", result)
        diagnostics.write_norm_trace_csv(out / "norm_trace.csv", result)
        print(f"wrote {out / 'prompt_type.csv'}")
    elif args.experiment == "recon-table":
        nti_cfg = NTIConfig(inner_steps=args.inner_steps, lr=args.nti_lr,
                            guidance=args.guidance)
        rows = diagnostics.run_reconstruction_table(
            ckpt, trials=args.trials, seed=args.seed, cfg=cfg, nti_cfg=nti_cfg)
        diagnostics.write_recon_csv(out / "recon_table.csv", rows)
        print(f"wrote {out / 'recon_table.csv'}")
    else:
        raise UsageError("experiment kind required: sink | prompt-type | recon-table")
    return 0


def _cmd_inspect(args) -> int:
    ckpt = ckpt_io.load_checkpoint(args.ckpt)
    print(json.dumps({
        "d": ckpt.field.d, "d_c": ckpt.field.d_c, "vocab": ckpt.field.vocab,
        "widths": list(ckpt.field.widths), "activation": ckpt.field.activation,
        "param_count": ckpt.field.param_count(),
        "dataset": ckpt.spec.to_dict(), "train_config": ckpt.config.to_dict(),
    }, sort_keys=True, indent=2))
    return 0


def dispatch(argv) -> int:
    parser, leaves = build_parser()
    try:
        # Config files supply defaults, so they must be applied before parsing.
        if "--config" in argv:
            idx = argv.index("--config")
            if idx + 1 >= len(argv):
                raise UsageError("--config needs a file path")
            _apply_config(Path(argv[idx + 1]), leaves)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (see --help)")
        if args.command == "experiment" and getattr(args, "experiment", None) is None:
            raise UsageError("experiment kind required: sink | prompt-type | recon-table")
        handler = {
            "train": _cmd_train,
            "generate": _cmd_generate,
            "invert": _cmd_invert,
            "reconstruct": _cmd_reconstruct,
            "edit": _cmd_edit,
            "experiment": _cmd_experiment,
            "inspect": _cmd_inspect,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    except FlowInvError as exc:
        category = type(exc).__name__
        print(f"error: {category}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
