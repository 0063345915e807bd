"""Command-line entry point: run, sweep, compare, validate."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import re
import sys
from pathlib import Path

import yaml

from . import __version__
from . import config as C
from . import metrics as M
from .core import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
OUTPUT_ENV = "V2XSIM_OUTPUT_DIR"

log = logging.getLogger("v2xsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="v2xsim", description=__doc__)
    p.add_argument("--version", action="version", version=f"v2xsim {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one config over all its seeds")
    r.add_argument("config")
    r.add_argument("-o", "--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")

    s = sub.add_parser("sweep", help="Cartesian sweep over config key paths")
    s.add_argument("config")
    s.add_argument("--param", action="append", required=True, metavar="PATH=VALUES",
                   help="e.g. wifi.mitigation=[NoCoex,Aifs900]; repeat for more axes")
    s.add_argument("-o", "--out")

    c = sub.add_parser("compare", help="PDR drop of result A relative to baseline B")
    c.add_argument("result_a")
    c.add_argument("result_b")
    c.add_argument("--probe", help="compare pdr_<probe>.csv instead of pdr.csv")

    v = sub.add_parser("validate", help="schema and invariant check without simulating")
    v.add_argument("config")
    return p


def parse_param(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise UsageError(f"--param needs PATH=VALUES, got {text!r}")
    path, raw = text.split("=", 1)
    path = path.strip()
    if not re.fullmatch(r"[A-Za-z_][\w]*(\.[\w]+)*", path):
        raise UsageError(f"bad key path {path!r}")
    raw = raw.strip()
    if raw.startswith("[") and raw.endswith("]"):
        raw = raw[1:-1]
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if not items:
        raise UsageError(f"--param {path} has no values")
    return path, [yaml.safe_load(x) for x in items]


def _slug(value) -> str:
    return re.sub(r"[^\w.-]+", "_", str(value))


def _out_dir(arg: str | None, cfg: C.RunConfig) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def cmd_run(args) -> int:
    from .runner import run_config
    cfg = C.load(args.config)
    out = _out_dir(args.out, cfg)
    run_config(cfg, out)
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .runner import run_config
    raw = C.load_raw(args.config)
    axes = [parse_param(p) for p in args.param]
    base_cfg = C.parse(raw)
    root = _out_dir(args.out, base_cfg)
    combos = list(itertools.product(*[vals for _, vals in axes]))
    # validate every point before simulating any
    cfgs = []
    for combo in combos:
        data = raw
        for (path, _), value in zip(axes, combo):
            data = C.set_path(data, path, value)
        try:
            cfgs.append(C.parse(data))
        except ConfigError as err:
            label = ", ".join(f"{p}={v}" for (p, _), v in zip(axes, combo))
            raise ConfigError(f"sweep point {label}: {err}") from None
    index = []
    for combo, cfg in zip(combos, cfgs):
        name = "__".join(f"{p.split('.')[-1]}={_slug(v)}" for (p, _), v in zip(axes, combo))
        out = root / name
        log.info("sweep point %s", name)
        run_config(cfg, out)
        index.append({"dir": name, "params": {p: v for (p, _), v in zip(axes, combo)}})
        print(out)
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.json").write_text(json.dumps({"version": __version__, "points": index},
                                                indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _pdr_file(res: str, probe: str | None) -> Path:
    p = Path(res)
    if p.is_dir():
        p = p / (f"pdr_{probe}.csv" if probe else "pdr.csv")
    if not p.is_file():
        raise ConfigError(f"no PDR table at {p}")
    return p


def cmd_compare(args) -> int:
    from .runner import read_pdr
    a = read_pdr(_pdr_file(args.result_a, args.probe))
    b = read_pdr(_pdr_file(args.result_b, args.probe))
    if [r.bin_lo for r in a] != [r.bin_lo for r in b]:
        raise ConfigError("result sets use different distance bins")
    print("bin_m,pdr_a,pdr_b,drop_percent")
    for ra, rb in zip(a, b):
        drop = M.pdr_drop_percent(ra.pdr if ra.pdr is not None else float("nan"),
                                  rb.pdr if rb.pdr is not None else 0.0)
        cells = [f"{ra.bin_lo:g}"] + ["" if x is None else f"{x:.6f}" for x in (ra.pdr, rb.pdr)]
        cells.append("" if drop is None or drop != drop else f"{drop:.3f}")
        print(",".join(cells))
    ra, rb = M.range_at_pdr(a, 0.9), M.range_at_pdr(b, 0.9)
    print(f"# range at 90% PDR: A {ra:.1f} m, B {rb:.1f} m, reduction {rb - ra:.1f} m")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = C.load(args.config)
    print(f"ok: {cfg.name} ({len(cfg.seeds)} seeds, {len(cfg.node_classes)} node classes)")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:          # --help / --version
        return int(err.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:           # noqa: BLE001 - mapped to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
