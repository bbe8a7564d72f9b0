"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, CurvecalError, StageError
from .pipeline import STAGES, load_run_config, run_pipeline, run_stage
from .synth import load_synth_spec, synth_testbed

log = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run config TOML")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvecal",
        description="Bayesian validation of computer models with curve output",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_common(p)
    p = sub.add_parser("all", help="run the whole pipeline and write the manifest")
    _add_common(p)

    p = sub.add_parser("synth", help="generate the synthetic test bed")
    p.add_argument("--config", required=True, help="synth spec TOML")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--seed", type=int, required=True)
    return parser


def _write_run_toml(dataset, out: Path, seed: int) -> None:
    spec = dataset.spec
    lines = [
        "[paths]",
        'iumap = "iumap.toml"',
        'field_dir = "field"',
        'model_dir = "model"',
        'design = "design.csv"',
        'out = "run"',
    ]
    if dataset.model_curves_b is not None:
        lines += ['model_dir_b = "model_b"', 'design_b = "design_b.csv"']
    lines += [
        "",
        "[grid]",
        f"levels = {spec.J}",
        f"t0 = {spec.t0!r}",
        f"t1 = {spec.t1!r}",
        "",
    ]
    for w in dataset.windows:
        lines += [
            "[[registration.window]]",
            f"lo = {w.lo!r}",
            f"hi = {w.hi!r}",
            f"features = {list(w.features)!r}".replace("'", '"'),
            "",
        ]
    lines += [
        "[wavelet]",
        "keep_levels = 3",
        "pct = 0.05",
        "",
        "[mcmc]",
        "draws = 1000",
        "thin = 50",
        f"seed = {seed}",
        "",
        "[band]",
        "alpha = 0.1",
        'mode = "symmetric"',
        "",
        "[extrapolate]",
        "same_type = true",
        f'new_nominals_mode = "{"both" if dataset.model_curves_b is not None else "off"}"',
    ]
    (out / "run.toml").write_text("\n".join(lines) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            spec = load_synth_spec(args.config)
            dataset = synth_testbed(spec, np.random.default_rng(args.seed))
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            dataset.write(out)
            _write_run_toml(dataset, out, args.seed)
            print(f"synthetic test bed written to {out} "
                  f"({len(dataset.model_curves)} model runs, "
                  f"{len(dataset.field_curves)} field replicates)")
            return 0

        cfg = load_run_config(args.config, out=args.out, seed=args.seed)
        if args.command == "all":
            manifest = run_pipeline(cfg)
            print(json.dumps(manifest["counts"], sort_keys=True))
        else:
            artifacts = run_stage(cfg, args.command)
            print(json.dumps(artifacts, sort_keys=True))
        return 0
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CurvecalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
