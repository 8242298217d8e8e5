"""Command-line surface for batch hide/reveal/refgen/eval/sweep runs.

Configuration can come from a ``key = value`` text file (``--config``);
explicit flags override file values, and the backend address falls back
to the ``MIDAS_BACKEND`` environment variable.  Exit codes: 0 success,
1 usage error, 2 backend error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from . import metrics
from .backend import BackendError
from .channel import apply_degradation, parse_degradation
from .codec import load_image, save_image
from .diffusion import make_schedule
from .experiments import sweep_rows
from .pipeline import StegoConfig, hide, refgen, resolve_backend, reveal, split_factors

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BACKEND = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise ValueError(f"seed {value} outside unsigned 64-bit range")
    return value


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# keys accepted in config files, with their parsers
CONFIG_KEYS = {
    "prompt": str,
    "pub_seed": _parse_seed,
    "priv_seeds": lambda s: tuple(_parse_seed(x) for x in s.replace(",", " ").split()),
    "backend": str,
    "steps": int,
    "xi_priv": float,
    "xi_pub": float,
    "alpha": float,
    "gamma_priv": float,
    "gamma_fuse": float,
    "edict_p": float,
    "smoothing_steps": int,
    "extra_denoise_steps": int,
    "ref_weight": float,
    "joint_denoise": _parse_bool,
    "use_edict": _parse_bool,
    "n": int,
    "user": int,
    "priv_seed": _parse_seed,
    "size": int,
    "secrets": lambda s: tuple(s.split()),
    "stego": str,
    "out": str,
    "outdir": str,
    "degrade": str,
}

# config keys forwarded into StegoConfig construction
_STEGO_FIELDS = (
    "steps",
    "xi_priv",
    "xi_pub",
    "alpha",
    "gamma_priv",
    "gamma_fuse",
    "edict_p",
    "smoothing_steps",
    "extra_denoise_steps",
    "ref_weight",
    "joint_denoise",
    "use_edict",
)


def load_config_file(path) -> dict:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            if key not in CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](value.strip())
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
    return values


def _merged(args: argparse.Namespace, names: list[str]) -> dict:
    """File values first, then flag overrides, for the listed option names."""
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return merged


def _require(merged: dict, names: list[str]) -> None:
    missing = [n for n in names if merged.get(n) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")


def _backend_spec(merged: dict) -> str:
    return merged.get("backend") or os.environ.get("MIDAS_BACKEND") or "toy"


def _stego_overrides(merged: dict) -> dict:
    return {k: merged[k] for k in _STEGO_FIELDS if k in merged}


def _cmd_hide(args) -> int:
    merged = _merged(args, ["secrets", "priv_seeds", "pub_seed", "prompt", "out", "backend", *list(_STEGO_FIELDS)])
    _require(merged, ["secrets", "priv_seeds", "pub_seed", "prompt", "out"])
    secrets = [load_image(p) for p in merged["secrets"]]
    seeds = merged["priv_seeds"]
    if len(seeds) != len(secrets):
        raise UsageError(
            f"got {len(seeds)} private seeds for {len(secrets)} secret images; counts must match"
        )
    cfg = StegoConfig.with_defaults(
        seeds,
        merged["pub_seed"],
        merged["prompt"],
        backend=_backend_spec(merged),
        **_stego_overrides(merged),
    )
    stego = hide(secrets, cfg)
    save_image(stego, merged["out"])
    return EXIT_OK


def _cmd_reveal(args) -> int:
    merged = _merged(
        args,
        ["stego", "user", "priv_seed", "pub_seed", "prompt", "outdir", "n", "degrade", "degrade_seed", "backend", *list(_STEGO_FIELDS)],
    )
    _require(merged, ["stego", "user", "priv_seed", "pub_seed", "prompt", "outdir"])
    n = merged.get("n", 2)
    placeholder = tuple(range(n))  # reveal only uses the caller's own seed
    cfg = StegoConfig.with_defaults(
        placeholder,
        merged["pub_seed"],
        merged["prompt"],
        backend=_backend_spec(merged),
        **_stego_overrides(merged),
    )
    stego = load_image(merged["stego"])
    if merged.get("degrade"):
        stego = apply_degradation(
            stego, parse_degradation(merged["degrade"], seed=merged.get("degrade_seed", 0))
        )
    report = reveal(stego, merged["user"], merged["priv_seed"], cfg)
    outdir = Path(merged["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    for j, img in enumerate(report.images, start=1):
        save_image(img, outdir / f"secret_{j:02d}.png")
    return EXIT_OK


def _cmd_refgen(args) -> int:
    merged = _merged(args, ["pub_seed", "prompt", "out", "size", "backend"])
    _require(merged, ["pub_seed", "prompt", "out"])
    size = merged.get("size", 64)
    backend_obj = resolve_backend(_backend_spec(merged))
    sched = make_schedule(50, 0.4)
    image, _ = refgen(
        merged["pub_seed"], merged["prompt"], sched, backend_obj, backend_obj.latent_shape(size, size)
    )
    save_image(image, merged["out"])
    return EXIT_OK


def _cmd_eval(args) -> int:
    rows = []
    with open(args.pairs, "r", encoding="utf-8", newline="") as fh:
        for record in csv.reader(fh):
            if not record or record == ["name", "a", "b"]:
                continue
            if len(record) != 3:
                raise UsageError(f"manifest rows must be name,a,b; got {record!r}")
            name, path_a, path_b = record
            rows.append((name, metrics.report(load_image(path_a), load_image(path_b))))
    metrics.write_metrics_csv(args.out, rows)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    merged = _merged(
        args,
        ["param", "values", "secrets", "priv_seeds", "pub_seed", "prompt", "out", "backend", *list(_STEGO_FIELDS)],
    )
    _require(merged, ["param", "values", "secrets", "priv_seeds", "pub_seed", "prompt", "out"])
    secrets = [load_image(p) for p in merged["secrets"]]
    seeds = merged["priv_seeds"]
    if len(seeds) != len(secrets):
        raise UsageError(
            f"got {len(seeds)} private seeds for {len(secrets)} secret images; counts must match"
        )
    cfg = StegoConfig.with_defaults(
        seeds,
        merged["pub_seed"],
        merged["prompt"],
        backend=_backend_spec(merged),
        **_stego_overrides(merged),
    )
    values = [float(v) for v in str(merged["values"]).replace(",", " ").split()]
    rows = sweep_rows(merged["param"], values, secrets, cfg)
    with open(merged["out"], "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["param", "value", "stego_region_psnr", "correct_psnr", "wrong_psnr"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


def _add_stego_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--backend", help="toy or tcp:HOST:PORT (default: MIDAS_BACKEND or toy)")
    p.add_argument("--steps", type=int)
    p.add_argument("--xi-priv", dest="xi_priv", type=float)
    p.add_argument("--xi-pub", dest="xi_pub", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma-priv", dest="gamma_priv", type=float)
    p.add_argument("--gamma-fuse", dest="gamma_fuse", type=float)
    p.add_argument("--edict-p", dest="edict_p", type=float)
    p.add_argument("--smoothing-steps", dest="smoothing_steps", type=int)
    p.add_argument("--ref-weight", dest="ref_weight", type=float)
    p.add_argument("--joint-denoise", dest="joint_denoise", type=_parse_bool)
    p.add_argument("--use-edict", dest="use_edict", type=_parse_bool)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="midas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("hide", help="embed secret images into one carrier")
    p.add_argument("--secrets", nargs="+")
    p.add_argument("--priv-seeds", dest="priv_seeds", nargs="+", type=_parse_seed)
    p.add_argument("--pub-seed", dest="pub_seed", type=_parse_seed)
    p.add_argument("--prompt")
    p.add_argument("--out")
    _add_stego_flags(p)
    p.set_defaults(func=_cmd_hide)

    p = sub.add_parser("reveal", help="reconstruct one user's view of a carrier")
    p.add_argument("--stego")
    p.add_argument("--user", type=int)
    p.add_argument("--priv-seed", dest="priv_seed", type=_parse_seed)
    p.add_argument("--pub-seed", dest="pub_seed", type=_parse_seed)
    p.add_argument("--prompt")
    p.add_argument("--outdir")
    p.add_argument("--n", type=int, help="segment count used at hide time (default 2)")
    p.add_argument("--degrade", help="simulate channel damage: gaussian:SIGMA or jpeg:QUALITY")
    p.add_argument("--degrade-seed", dest="degrade_seed", type=int, default=0)
    p.add_argument("--extra-denoise", dest="extra_denoise_steps", type=int)
    _add_stego_flags(p)
    p.set_defaults(func=_cmd_reveal)

    p = sub.add_parser("refgen", help="generate the shared reference image")
    p.add_argument("--pub-seed", dest="pub_seed", type=_parse_seed)
    p.add_argument("--prompt")
    p.add_argument("--out")
    p.add_argument("--size", type=int)
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--backend")
    p.set_defaults(func=_cmd_refgen)

    p = sub.add_parser("eval", help="metrics over reconstruction pairs")
    p.add_argument("--pairs", required=True, help="CSV manifest: name,imageA,imageB")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="rerun hide/reveal across one parameter axis")
    p.add_argument("--param", choices=["alpha", "gamma_priv", "gamma_fuse"])
    p.add_argument("--values", help="comma- or space-separated numbers")
    p.add_argument("--secrets", nargs="+")
    p.add_argument("--priv-seeds", dest="priv_seeds", nargs="+", type=_parse_seed)
    p.add_argument("--pub-seed", dest="pub_seed", type=_parse_seed)
    p.add_argument("--prompt")
    p.add_argument("--out")
    _add_stego_flags(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
