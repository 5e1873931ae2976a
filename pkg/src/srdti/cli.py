"""Command-line pipeline: ``srdti <subcommand> --config file.json [--out dir] [--seed N]``.

Every stage reads earlier stages' outputs from the output directory and
writes its own subdirectory atomically (via a ``.partial`` sibling that is
renamed on success and removed on failure). The effective config is echoed
into each stage directory; timestamps only ever go to ``srdti.log``.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from . import __version__
from .cnn import (GradCheckReport, gradient_check, load_model, predict_volume, save_model, stack_to_input,
                  stack_to_target, train)
from .cnn.gradcheck import SMALL_CASE
from .config import ConfigError, PipelineConfig, load_config
from .io import read_gradient_table, read_stack, write_gradient_table, write_nifti, write_stack
from .metrics import evaluate_report
from .phantom import make_phantom, noisy_stack, render_dwis
from .render import direction_encoded_rgb, residual_gray, take_slice, write_pgm, write_ppm
from .resample import downsample_stack, resample_stack
from .scheme import EncodingScheme, condition_number, fibonacci_directions, optimize_directions
from .tensor import COMPONENTS, TensorField, dti_maps, fit_tensor, synthesize_dwi
from .tiling import extract_blocks
from .volume import GradientTable

log = logging.getLogger("srdti")


class PipelineError(RuntimeError):
    """A stage could not run (typically a missing upstream output)."""


# --- plumbing -----------------------------------------------------------------

class Context:
    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg = cfg
        self.out = out

    def stage_dir(self, name: str) -> Path:
        return self.out / name

    def require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise PipelineError(f"missing input {path} (run the '{producer}' subcommand first)")
        return path

    @contextmanager
    def stage(self, name: str):
        final = self.stage_dir(name)
        partial = final.with_name(final.name + ".partial")
        if partial.exists():
            shutil.rmtree(partial)
        partial.mkdir(parents=True)
        try:
            yield partial
            (partial / "config.json").write_text(self.cfg.to_json())
        except BaseException:
            shutil.rmtree(partial, ignore_errors=True)
            raise
        if final.exists():
            shutil.rmtree(final)
        partial.rename(final)
        log.info("wrote %s", final)


def _subjects(cfg: PipelineConfig) -> List[str]:
    s = cfg.subjects()
    return s["train"] + s["eval"]


def _noise_rng(cfg: PipelineConfig, subject: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, cfg.subject_seed(subject), 1])


def _load_scheme(ctx: Context) -> EncodingScheme:
    d = ctx.require(ctx.stage_dir("scheme") / "bvecs", "optimize-dirs").parent
    table = read_gradient_table(d / "bvecs", d / "bvals")
    return EncodingScheme.from_table(table)


def _acquisition(ctx: Context, scheme: EncodingScheme) -> GradientTable:
    acq = ctx.cfg.section("acquisition")
    if acq["directions"] == "scheme":
        return scheme.table()
    dirs = fibonacci_directions(int(acq["directions"]))
    return GradientTable(dirs, np.full(len(dirs), float(acq["b"])))


def _write_tensor(field: TensorField, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(COMPONENTS):
        write_nifti(field.s0.with_data(field.components[i]), directory / f"tensor_{name}.nii")
    write_nifti(field.s0, directory / "s0.nii")
    maps = dti_maps(field)
    for name in ("fa", "md", "ad", "rd"):
        write_nifti(field.s0.with_data(getattr(maps, name)), directory / f"{name}.nii")
    for i, ax in enumerate("xyz"):
        write_nifti(field.s0.with_data(maps.v1[..., i]), directory / f"v1_{ax}.nii")


# --- stages -------------------------------------------------------------------

def cmd_optimize_dirs(ctx: Context) -> None:
    sc = ctx.cfg.section("scheme")
    if sc["source"] == "file":
        table = read_gradient_table(sc["bvecs"], sc["bvals"])
        scheme = EncodingScheme.from_table(table)
    else:
        scheme = optimize_directions(seed=ctx.cfg.seed, restarts=int(sc["restarts"]), b=float(sc["b"]))
    with ctx.stage("scheme") as d:
        write_gradient_table(scheme.table(), d / "bvecs", d / "bvals")
        info = {"condition_number": float(scheme.condition_number),
                "condition_number_weighted": float(condition_number(scheme.directions, weighted=True)),
                "directions": scheme.directions.tolist(), "b": scheme.b}
        (d / "scheme.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    log.info("scheme condition number %.6f", scheme.condition_number)


def cmd_phantom(ctx: Context) -> None:
    scheme = _load_scheme(ctx)
    table = _acquisition(ctx, scheme)
    with ctx.stage("phantom") as root:
        for name in _subjects(ctx.cfg):
            ph = make_phantom(ctx.cfg.phantom_spec(ctx.cfg.subject_seed(name)))
            stack = render_dwis(ph, table, seed=int(np.random.SeedSequence(
                [ctx.cfg.seed, ph.spec.seed, 0]).generate_state(1)[0]))
            d = root / name
            write_stack(stack, d, extra={"subject": name, "phantom": ph.spec.to_dict()})
            write_nifti(ph.labels, d / "labels.nii")
            write_nifti(ph.striated, d / "striated.nii")
            _write_tensor(ph.field, d / "tensor")
            log.info("phantom %s", name)


def cmd_degrade(ctx: Context) -> None:
    cfg = ctx.cfg.section("degrade")
    src = ctx.stage_dir("phantom")
    with ctx.stage("degraded") as root:
        for name in _subjects(ctx.cfg):
            stack = read_stack(ctx.require(src / name, "phantom"))
            low = downsample_stack(stack, cfg["target_spacing"])
            low = noisy_stack(low, float(cfg["noise_sigma"]), int(cfg["n_b0"]), _noise_rng(ctx.cfg, name),
                              cfg["noise"])
            write_stack(low, root / name, extra={"subject": name})
            log.info("degraded %s to %s", name, low.b0.dims)


def cmd_upsample(ctx: Context) -> None:
    methods = ctx.cfg.section("upsample")["methods"]
    with ctx.stage("upsampled") as root:
        for name in _subjects(ctx.cfg):
            low = read_stack(ctx.require(ctx.stage_dir("degraded") / name, "degrade"))
            hr = read_stack(ctx.require(ctx.stage_dir("phantom") / name, "phantom"))
            for m in methods:
                up = resample_stack(low, m, hr.b0, t1=hr.t1, mask=hr.mask)
                write_stack(up, root / m / name, extra={"subject": name, "method": m})
            log.info("upsampled %s", name)


def _fit_sources(ctx: Context) -> Dict[str, Callable[[str], Path]]:
    sources = {"gt": lambda n: ctx.require(ctx.stage_dir("phantom") / n, "phantom")}
    for m in ctx.cfg.section("upsample")["methods"]:
        sources[m] = lambda n, m=m: ctx.require(ctx.stage_dir("upsampled") / m / n, "upsample")
    return sources


def cmd_fit(ctx: Context) -> None:
    with ctx.stage("fit") as root:
        for source, where in _fit_sources(ctx).items():
            for name in _subjects(ctx.cfg):
                stack = read_stack(where(name))
                _write_tensor(fit_tensor(stack), root / source / name)


def cmd_synth(ctx: Context) -> None:
    scheme = _load_scheme(ctx)
    with ctx.stage("synth") as root:
        for source, where in _fit_sources(ctx).items():
            for name in _subjects(ctx.cfg):
                stack = read_stack(where(name))
                out = synthesize_dwi(fit_tensor(stack), scheme, t1=stack.t1, mask=stack.mask)
                write_stack(out, root / source / name, extra={"subject": name, "source": source})
        log.info("synthesized %d sources", len(_fit_sources(ctx)))


def _training_blocks(ctx: Context):
    spec = ctx.cfg.train_blocks
    min_frac = float(ctx.cfg.section("blocks")["min_mask_fraction"])
    xs, ys = [], []
    for name in ctx.cfg.subjects()["train"]:
        inp = read_stack(ctx.require(ctx.stage_dir("synth") / "cubic" / name, "synth"))
        gt = read_stack(ctx.require(ctx.stage_dir("synth") / "gt" / name, "synth"))
        xb, _ = extract_blocks(stack_to_input(inp), spec)
        yb, _ = extract_blocks(stack_to_target(gt), spec)
        mb, _ = extract_blocks(gt.mask.data[None].astype(np.float32), spec)
        keep = mb.reshape(len(mb), -1).mean(axis=1) > min_frac
        xs.append(xb[keep])
        ys.append(yb[keep])
    return np.concatenate(xs), np.concatenate(ys)


def cmd_train(ctx: Context) -> None:
    x, y = _training_blocks(ctx)
    cfg = ctx.cfg.cnn
    log.info("training on %d blocks for %d iterations", len(x), cfg.iterations)
    with ctx.stage("model") as d:
        ckpt = d / "checkpoints"

        def checkpoint(it, model, state):
            ckpt.mkdir(exist_ok=True)
            save_model(model, ckpt / f"iter{it:06d}.srdti")

        model, state = train(cfg, x, y, checkpoint=checkpoint)
        save_model(model, d / "model.srdti")
        lines = ["iteration,loss"] + [f"{i + 1},{v:.9g}" for i, v in enumerate(state.history)]
        (d / "loss.csv").write_text("\n".join(lines) + "\n")


def cmd_predict(ctx: Context) -> None:
    model = load_model(ctx.require(ctx.stage_dir("model") / "model.srdti", "train"))
    with ctx.stage("predict") as root:
        for name in ctx.cfg.subjects()["eval"]:
            inp = read_stack(ctx.require(ctx.stage_dir("synth") / "cubic" / name, "synth"))
            out = predict_volume(model, inp, ctx.cfg.predict_blocks)
            write_stack(out, root / name, extra={"subject": name, "method": "srdti"})
            log.info("predicted %s", name)


def _eval_stacks(ctx: Context):
    names = ctx.cfg.subjects()["eval"]
    synth = ctx.stage_dir("synth")
    gts = [read_stack(ctx.require(synth / "gt" / n, "synth")) for n in names]
    cands = {}
    for m in ctx.cfg.section("upsample")["methods"]:
        cands[m] = [read_stack(ctx.require(synth / m / n, "synth")) for n in names]
    cands["srdti"] = [read_stack(ctx.require(ctx.stage_dir("predict") / n, "predict")) for n in names]
    return names, gts, cands


def cmd_metrics(ctx: Context) -> None:
    _, gts, cands = _eval_stacks(ctx)
    thr = float(ctx.cfg.section("metrics")["v1_fa_threshold"])
    report = evaluate_report(gts, cands, [g.mask for g in gts], v1_fa_threshold=thr)
    with ctx.stage("metrics") as d:
        (d / "report.json").write_text(report.to_json())
        (d / "report.txt").write_text(report.to_text())
    log.info("report:\n%s", report.to_text())


def cmd_render(ctx: Context) -> None:
    names, gts, cands = _eval_stacks(ctx)
    rc = ctx.cfg.section("render")
    with ctx.stage("render") as root:
        for i, name in enumerate(names):
            d = root / name
            d.mkdir()
            stacks = {"gt": gts[i], **{k: v[i] for k, v in cands.items()}}
            nz = gts[i].b0.dims[2]
            slices = rc["slices"] if rc["slices"] is not None else [nz // 2]
            for method, stack in stacks.items():
                maps = dti_maps(fit_tensor(stack), stack.mask)
                rgb = direction_encoded_rgb(maps.v1, maps.fa)
                resid = stack.b0.data.astype(np.float64) - gts[i].b0.data
                for z in slices:
                    img = np.stack([take_slice(rgb[..., c], 2, z) for c in range(3)], axis=-1)
                    write_ppm(d / f"{method}_fa_rgb_z{z:03d}.ppm", img)
                    if method != "gt":
                        write_pgm(d / f"{method}_b0_residual_z{z:03d}.pgm",
                                  residual_gray(take_slice(resid, 2, z), float(rc["residual_range"])))


def cmd_gradcheck(ctx: Context) -> GradCheckReport:
    report = gradient_check(SMALL_CASE, seed=ctx.cfg.seed)
    for line in report.lines():
        print(line)
    return report


def cmd_run(ctx: Context) -> None:
    for name in PIPELINE:
        log.info("stage %s", name)
        COMMANDS[name](ctx)


PIPELINE = ("optimize-dirs", "phantom", "degrade", "upsample", "synth", "train", "predict", "metrics", "render")
COMMANDS: Dict[str, Callable[[Context], object]] = {
    "optimize-dirs": cmd_optimize_dirs,
    "phantom": cmd_phantom,
    "degrade": cmd_degrade,
    "upsample": cmd_upsample,
    "fit": cmd_fit,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "metrics": cmd_metrics,
    "render": cmd_render,
    "gradcheck": cmd_gradcheck,
    "run": cmd_run,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srdti", description="Super-resolution DTI pipeline on synthetic phantoms.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("subcommand", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", default="srdti-out", help="output directory (default: %(default)s)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true", help="also log to stderr")
    return p


def _setup_logging(out: Path, verbose: bool) -> List[logging.Handler]:
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    handlers: List[logging.Handler] = [logging.FileHandler(out / "srdti.log")]
    if verbose:
        handlers.append(logging.StreamHandler(sys.stderr))
    root = logging.getLogger()
    root.setLevel(logging.INFO)
    for h in handlers:
        h.setFormatter(fmt)
        root.addHandler(h)
    return handlers


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"srdti: config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handlers = _setup_logging(out, args.verbose)
    try:
        log.info("srdti %s: %s (seed %d)", __version__, args.subcommand, cfg.seed)
        result = COMMANDS[args.subcommand](Context(cfg, out))
        if isinstance(result, GradCheckReport) and not result.passed:
            print("srdti: gradient check failed", file=sys.stderr)
            return 1
        return 0
    except (PipelineError, ConfigError, FileNotFoundError, ValueError, OSError) as exc:
        log.error("%s failed: %s", args.subcommand, exc)
        print(f"srdti: {args.subcommand} failed: {exc}", file=sys.stderr)
        return 1
    finally:
        root = logging.getLogger()
        for h in handlers:
            root.removeHandler(h)
            h.close()


if __name__ == "__main__":
    sys.exit(main())
