"""
Command-line front end.

Every subcommand writes its outputs plus a ``<command>.manifest.json``
listing them with SHA-256 checksums; ``cpisim verify`` re-checks a
manifest. Exit codes: 0 success, 2 configuration error, 3 numerical
precondition violated, 4 I/O or file-format failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import MODALITIES, dof_report, geometric_bound, visibility, visibility_map
from .core import (SampledGrid, ScenarioConfig, dump_scenario, load_scenario, paper_setup,
                   parse_mask_spec, parse_scenario)
from .engine import footprint_grids, gamma_map, ghost_image, refocus
from .errors import ConfigError, FormatError, PreconditionError
from .framestore import FrameStore
from .gridio import load_tensor, profile_csv, save_tensor, sha256_file, write_text
from .speckle import PropagationPlan, default_lowpass, estimate_gamma, generate_frames, postprocess

log = logging.getLogger("cpisim")

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_IO = 0, 2, 3, 4
MEASUREMENT_B = "slits:n=3,a=99e-6,d=198e-6"


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


class RunManifest:
    """Inputs and checksummed outputs of one command."""

    def __init__(self, command: str, argv: list[str], scenario: ScenarioConfig, seeds: list[int]):
        self.command = command
        self.argv = list(argv)
        self.scenario = scenario
        self.seeds = list(seeds)
        self.started = datetime.now(timezone.utc).isoformat()
        self.outputs: list[Path] = []

    def add(self, path: Path):
        self.outputs.append(Path(path))

    def write(self, out_dir: Path) -> Path:
        text = dump_scenario(self.scenario)
        doc = {
            "command": self.command,
            "argv": self.argv,
            "scenario": self.scenario.as_dict(),
            "scenario_sha256": hashlib.sha256(text.encode()).hexdigest(),
            "seeds": self.seeds,
            "code_version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": [{"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
                        for p in self.outputs],
        }
        path = out_dir / f"{self.command}.manifest.json"
        write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def verify_manifest(path) -> list[str]:
    """Problems found when re-checking a manifest; empty when all outputs match."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        outputs = doc["outputs"]
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: not a run manifest") from exc
    problems = []
    for entry in outputs:
        f = path.parent / entry["path"]
        if not f.exists():
            problems.append(f"{entry['path']}: missing")
        elif sha256_file(f) != entry["sha256"]:
            problems.append(f"{entry['path']}: checksum mismatch")
    return problems


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _scenario(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario) if args.scenario else paper_setup()
    if args.set:
        text = dump_scenario(cfg)
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", key="set")
            text += f"{key.strip()} = {value.strip()}\n"
        # later assignments override: rebuild from the last value of each key
        values: dict[str, str] = {}
        for line in text.splitlines():
            k, _, v = line.partition("=")
            values[k.strip()] = v.strip()
        cfg = parse_scenario("".join(f"{k} = {v}\n" for k, v in values.items()), source="--set")
    return cfg


def _mask(args):
    spec = args.mask
    if spec is None and getattr(args, "mask_file", None):
        try:
            spec = Path(args.mask_file).read_text().strip()
        except OSError as exc:
            raise FormatError(f"{args.mask_file}: cannot read ({exc.strerror})") from exc
    return parse_mask_spec(spec or MEASUREMENT_B)


def _grid(text: str, key: str) -> SampledGrid:
    try:
        n, spacing = text.split(",")
        return SampledGrid.centered(int(n), float(spacing))
    except ValueError:
        raise ConfigError(f"expected N,SPACING, got {text!r}", key=key) from None


def _range(text: str, key: str) -> np.ndarray:
    """START:STOP:NUM (inclusive) or a comma list."""
    try:
        if ":" in text:
            start, stop, num = text.split(":")
            num = int(num)
            if num < 1 or float(stop) < float(start):
                raise ConfigError(f"empty range {text!r}", key=key)
            return np.linspace(float(start), float(stop), num)
        values = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ConfigError(f"cannot parse range {text!r}", key=key) from None
    if values.size == 0:
        raise ConfigError("empty range", key=key)
    return values


def _postprocess_opts(text: str | None, cfg, mask):
    if text is None:
        return None
    opts = {"lowpass": default_lowpass(cfg, mask), "threshold": 0.01}
    for item in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep or key not in opts:
            raise ConfigError(f"bad --postprocess item {item!r}; use lowpass=..,threshold=..",
                              key="postprocess")
        try:
            opts[key] = float(value)
        except ValueError:
            raise ConfigError(f"bad number {value!r}", key="postprocess") from None
    return opts


def _out(args, name: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gamma(args, man: RunManifest):
    cfg, mask = man.scenario, _mask(args)
    ga, gb, _ = footprint_grids(cfg, mask)
    ga = _grid(args.grid_a, "grid-a") if args.grid_a else ga
    gb = _grid(args.grid_b, "grid-b") if args.grid_b else gb
    log.info("gamma: %d x %d samples", ga.n, gb.n)
    tensor = gamma_map(cfg, mask, ga, gb, workers=args.threads)
    path = _out(args, args.output or "gamma.cgrid")
    save_tensor(path, tensor)
    man.add(path)


def _profile_cmd(args, man: RunManifest, kind: str):
    tensor = load_tensor(args.tensor)
    man.scenario = tensor.scenario
    if args.postprocess is not None:
        tensor = postprocess(tensor, *_pp_values(args, tensor.scenario))
    profile = ghost_image(tensor) if kind == "ghost" else refocus(tensor)
    path = _out(args, args.output or f"{kind}.csv")
    write_text(path, profile_csv(profile, normalized=args.normalize))
    man.add(path)
    if args.mask:
        print(f"visibility = {visibility(profile, parse_mask_spec(args.mask)):.4f}")


def _pp_values(args, cfg):
    opts = _postprocess_opts(args.postprocess, cfg, _mask(args))
    return opts["lowpass"], opts["threshold"]


def cmd_refocus(args, man):
    _profile_cmd(args, man, "refocused")


def cmd_ghost(args, man):
    _profile_cmd(args, man, "ghost")


def _write_estimate(args, man, stack):
    tensor = estimate_gamma(stack, workers=args.threads)
    if args.postprocess is not None:
        tensor = postprocess(tensor, *_pp_values(args, stack.scenario))
    path = _out(args, args.output or "gamma_mc.cgrid")
    save_tensor(path, tensor)
    man.add(path)


def cmd_speckle(args, man: RunManifest):
    cfg, mask = man.scenario, _mask(args)
    if args.frames < 2:
        raise ConfigError("at least 2 frames are needed", key="frames")
    plan = PropagationPlan.from_scenario(cfg, oversample=args.oversample)
    path = _out(args, args.stack)
    batch = max(2, args.batch)
    store = None
    done = 0
    if args.resume and path.exists():
        store = FrameStore.open(path)
        probe = generate_frames(cfg, mask, plan, 2, args.seed, pixels_a=args.pixels_a,
                                pixels_b=args.pixels_b)
        if not store.compatible(probe):
            raise ConfigError(f"{path}: stored frames belong to a different run; "
                              "drop --resume or change --stack", key="resume")
        done = store.n_frames
        log.info("resuming after %d stored frames", done)
    while done < args.frames:
        n = min(batch, args.frames - done)
        if n == 1:
            # the generator needs two frames: redraw the last stored one and drop it
            stack = generate_frames(cfg, mask, plan, 2, args.seed, pixels_a=args.pixels_a,
                                    pixels_b=args.pixels_b, start=done - 1).select(slice(1, 2))
        else:
            stack = generate_frames(cfg, mask, plan, n, args.seed, pixels_a=args.pixels_a,
                                    pixels_b=args.pixels_b, start=done, workers=args.threads)
        if store is None:
            store = FrameStore.create(path, stack)
        store.append(stack)
        done += n
        log.info("%d / %d frames", done, args.frames)
    man.add(path)
    _write_estimate(args, man, store.load().head(args.frames))


def cmd_estimate(args, man: RunManifest):
    store = FrameStore.open(args.stack_file)
    man.scenario = store.scenario
    man.seeds = [store.seed]
    if args.mask is None:
        args.mask = store.mask if store.mask.startswith("slits:") else None
    _write_estimate(args, man, store.load())


def cmd_vismap(args, man: RunManifest):
    cfg = man.scenario
    d = _range(args.d_range, "d-range")
    dz = _range(args.dz_range, "dz-range") * 1e-3
    modalities = MODALITIES[:3] if args.modality == "all" else (args.modality,)
    for modality in modalities:
        vm = visibility_map(modality, cfg, d, dz, n_u=args.n_u, workers=args.threads)
        if vm.n_failed:
            log.warning("%s: %d cells failed numerically (NaN)", modality, vm.n_failed)
        path = _out(args, f"vismap_{modality}.csv")
        write_text(path, vm.to_csv())
        man.add(path)


def cmd_dof(args, man: RunManifest):
    cfg = man.scenario
    ds = _range(args.d, "d") * 1e-3
    near = io.StringIO()
    far = io.StringIO()
    wn = csv.writer(near, lineterminator="\n")
    wf = csv.writer(far, lineterminator="\n")
    wn.writerow(["d_m", "modality", "z_b_min_m", "dz_m", "clamped"])
    wf.writerow(["d_m", "modality", "z_b_max_m", "dz_m", "clamped"])
    reports = []
    for d in ds:
        rep = dof_report(cfg, float(d), n_u=args.n_u, threshold=args.threshold, tol=args.tol,
                         workers=args.threads)
        reports.append(rep.summary())
        for name, iv in rep.intervals.items():
            wn.writerow([repr(float(d)), name, repr(iv.z_min), repr(iv.z_min - cfg.z_a),
                         int(iv.floor_clamped)])
            wf.writerow([repr(float(d)), name, repr(iv.z_max), repr(iv.z_max - cfg.z_a),
                         int(iv.ceil_clamped)])
    text = "\n\n".join(reports) + "\n"
    print(text, end="")
    for name, body in (("dof_near.csv", near.getvalue()), ("dof_far.csv", far.getvalue()),
                       ("dof_report.txt", text)):
        path = _out(args, name)
        write_text(path, body)
        man.add(path)


def cmd_bound(args, man: RunManifest):
    cfg, mask = man.scenario, _mask(args)
    lo, hi = geometric_bound(cfg, mask)
    body = ("mask,z_b_min_m,z_b_max_m,length_m\n"
            f"{args.mask or MEASUREMENT_B},{lo!r},{hi!r},{hi - lo!r}\n")
    print(f"geometric refocusing range: {lo * 1e3:.3f} mm .. {hi * 1e3:.3f} mm")
    path = _out(args, "bound.csv")
    write_text(path, body)
    man.add(path)


def cmd_verify(args, man):
    problems = verify_manifest(args.manifest)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        raise FormatError(f"{len(problems)} output(s) failed verification")
    print("all outputs verified")
    return False  # no manifest for verify itself


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpisim",
                                description="Correlation plenoptic imaging with chaotic light.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    g = p.add_argument_group("global options")
    g.add_argument("--scenario", help="scenario file (default: built-in experimental setup)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one scenario key, e.g. --set z_b=0.113")
    g.add_argument("--out-dir", default=".", help="directory for outputs and manifests")
    g.add_argument("--threads", type=int, default=1, help="worker threads")
    g.add_argument("--seed", type=int, default=0, help="Monte-Carlo seed")
    g.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def mask_opts(sp):
        sp.add_argument("--mask", help=f"inline mask spec (default {MEASUREMENT_B})")
        sp.add_argument("--mask-file", help="file holding a mask spec; --mask wins")

    s = sub.add_parser("gamma", help="analytic correlation tensor")
    mask_opts(s)
    s.add_argument("--grid-a", help="N,SPACING of the spatial sensor (default: footprint)")
    s.add_argument("--grid-b", help="N,SPACING of the angular sensor (default: footprint)")
    s.add_argument("--output")
    s.set_defaults(func=cmd_gamma)

    for name, func, what in (("refocus", cmd_refocus, "refocused image"),
                             ("ghost", cmd_ghost, "ghost image")):
        s = sub.add_parser(name, help=f"{what} CSV from a tensor file")
        s.add_argument("tensor")
        s.add_argument("--mask", help="report the visibility for this mask spec")
        s.add_argument("--normalize", action="store_true", help="peak-normalize the profile")
        s.add_argument("--postprocess", nargs="?", const="", metavar="lowpass=..,threshold=..")
        s.add_argument("--output")
        s.set_defaults(func=func)

    s = sub.add_parser("speckle", help="Monte-Carlo frames and estimated tensor")
    mask_opts(s)
    s.add_argument("--frames", type=int, default=10000)
    s.add_argument("--pixels-a", type=int, default=128)
    s.add_argument("--pixels-b", type=int, default=64)
    s.add_argument("--oversample", type=int, default=3, help="simulation samples per S_a pixel")
    s.add_argument("--batch", type=int, default=1024, help="frames per stored chunk")
    s.add_argument("--stack", default="frames.cfs", help="frame-stack file name")
    s.add_argument("--resume", action="store_true", help="continue an existing frame stack")
    s.add_argument("--postprocess", nargs="?", const="", metavar="lowpass=..,threshold=..")
    s.add_argument("--output")
    s.set_defaults(func=cmd_speckle)

    s = sub.add_parser("estimate", help="estimated tensor from a stored frame stack")
    s.add_argument("stack_file")
    s.add_argument("--mask", help="mask spec used for post-processing defaults")
    s.add_argument("--postprocess", nargs="?", const="", metavar="lowpass=..,threshold=..")
    s.add_argument("--output")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("vismap", help="visibility maps of double slits")
    s.add_argument("--modality", choices=MODALITIES[:3] + ("all",), default="all")
    s.add_argument("--d-range", default="2:20:19", help="d / Dx^f as START:STOP:NUM or list")
    s.add_argument("--dz-range", default="-60:60:61",
                   help="z_b - z_a in mm; use --dz-range=-60:60:61 when the value starts with '-'")
    s.add_argument("--n-u", type=float, default=3)
    s.set_defaults(func=cmd_vismap)

    s = sub.add_parser("dof", help="depth of field per modality")
    s.add_argument("--d", default="0.198,0.354", help="slit pitch(es) in mm")
    s.add_argument("--n-u", type=float, default=3)
    s.add_argument("--threshold", type=float, default=0.1)
    s.add_argument("--tol", type=float, default=1e-4, help="bisection tolerance in metres")
    s.set_defaults(func=cmd_dof)

    s = sub.add_parser("bound", help="geometrical range of perfect refocusing")
    mask_opts(s)
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("verify", help="re-check the checksums of a manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1", key="threads")
        cfg = paper_setup() if args.command == "verify" else _scenario(args)
        man = RunManifest(args.command, argv, cfg, [args.seed])
        if args.func(args, man) is not False:
            man.write(Path(args.out_dir))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"numerical precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
