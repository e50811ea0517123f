"""Command-line entry point: ``tiledattn {verify,gradcheck,sweep,predict}``.

Exit codes: 0 all checks pass, 1 a check failed, 2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import itertools
import sys

from . import bench, iomodel
from .config import AttnConfig, parse_mask
from .errors import AttentionError
from .flash import flash_backward, flash_forward
from .memory import MemoryModel
from .reference import standard_backward, standard_forward
from .tiling import parse_pattern, plan_tiles

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x]


def _opt_int_list(text):
    return [None if x == "auto" else int(x) for x in str(text).split(",") if x]


def _float_list(text):
    return [float(x) for x in str(text).split(",") if x]


def _m_list(text):
    return [None if x == "auto" else int(x) for x in str(text).split(",") if x]


# dest -> (flag, converter, default, help)
OPTIONS = {
    "n": ("--n", _int_list, "128", "sequence length(s), comma separated"),
    "d": ("--d", _int_list, "16", "head dimension(s)"),
    "m": ("--m", _m_list, "auto", "SRAM capacity(ies) in elements, or auto"),
    "bc": ("--bc", _opt_int_list, "auto", "key block size override(s)"),
    "br": ("--br", _opt_int_list, "auto", "query block size override(s)"),
    "tau": ("--tau", float, None, "softmax scale (default 1/sqrt(d))"),
    "mask": ("--mask", parse_mask, "none", "none | causal | padding:<len>"),
    "p_drop": ("--p-drop", float, "0.0", "dropout probability"),
    "seed": ("--seed", int, "0", "input and dropout seed"),
    "sparsity": ("--sparsity", _float_list, "0.5", "block density(ies) for random patterns"),
    "pattern": ("--pattern", parse_pattern, "butterfly", "random | butterfly | local:<w>+<g>"),
    "repeats": ("--repeats", int, "3", "timed repetitions (one extra warmup is discarded)"),
    "algo": ("--algo", lambda t: str(t).split(","), ",".join(iomodel.ALGOS), "algorithm id(s) for sweep"),
    "out": ("--out", str, None, "CSV output path for sweep"),
    "h": ("--h", float, "1e-5", "finite-difference step"),
    "element_bytes": ("--element-bytes", int, "2", "bytes per element"),
    "multiplier": ("--multiplier", int, "1", "batch*heads multiplier for byte reports"),
    "oracle_cap": ("--oracle-cap", int, "4096", "largest n compared against the oracle"),
}
FLAG_KEYS = {"zero_do": "--zero-do"}


def _parse_config(path):
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = (x.strip() for x in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in OPTIONS and key not in FLAG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = val
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="tiledattn", description="Tiled exact attention: checks and IO sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "verify": "check tiled forward/backward/block-sparse against the reference",
        "gradcheck": "compare tiled gradients with central finite differences",
        "sweep": "run a counted-IO grid and write CSV",
        "predict": "print predicted vs counted HBM traffic",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key=value file; command-line flags take precedence")
        for dest, (flag, _, _, hlp) in OPTIONS.items():
            p.add_argument(flag, dest=dest, default=None, help=hlp)
        p.add_argument("--zero-do", dest="zero_do", action="store_true", default=None,
                       help="gradcheck with dO = 0 (all gradients must vanish)")
    return parser


def resolve(args):
    raw = {k: OPTIONS[k][2] for k in OPTIONS}
    raw["zero_do"] = "false"
    if args.config:
        raw.update(_parse_config(args.config))
    for dest in list(OPTIONS) + list(FLAG_KEYS):
        val = getattr(args, dest)
        if val is not None:
            raw[dest] = val
    opts = {}
    for dest, (flag, conv, _, _) in OPTIONS.items():
        if raw[dest] is None:
            opts[dest] = None
            continue
        try:
            opts[dest] = conv(raw[dest])
        except ValueError as exc:
            raise UsageError(f"{flag}: {exc}") from None
    z = raw["zero_do"]
    opts["zero_do"] = z is True or str(z).lower() in ("1", "true", "yes")
    for key in ("n", "d", "algo", "sparsity", "m", "bc", "br"):
        if not opts[key]:
            raise UsageError(f"--{key} must not be empty")
    if min(opts["n"]) < 1 or min(opts["d"]) < 1:
        raise UsageError("--n and --d must be >= 1")
    if not 0.0 <= opts["p_drop"] < 1.0:
        raise UsageError("--p-drop must lie in [0, 1)")
    if opts["repeats"] < 1:
        raise UsageError("--repeats must be >= 1")
    for a in opts["algo"]:
        if a not in iomodel.ALGOS:
            raise UsageError(f"unknown algorithm {a!r}; choose from {', '.join(iomodel.ALGOS)}")
    return opts


def _grid(opts):
    for n, d, m, bc, br in itertools.product(opts["n"], opts["d"], opts["m"], opts["bc"], opts["br"]):
        yield n, d, (bench.auto_m(n, d) if m is None else m), bc, br


def cmd_verify(opts):
    ok = True
    kind, pargs = opts["pattern"]
    for n, d, m, bc, br in _grid(opts):
        print(f"# n={n} d={d} M={m} mask={type(opts['mask']).__name__} p_drop={opts['p_drop']} seed={opts['seed']}")
        checks = bench.verify_suite(
            n, d, m, mask=opts["mask"], p_drop=opts["p_drop"], seed=opts["seed"], tau=opts["tau"],
            br=br, bc=bc, pattern=kind, sparsity=opts["sparsity"][0], pattern_args=pargs,
        )
        for c in checks:
            print(c.line())
            ok &= c.ok
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gradcheck(opts):
    ok = True
    for n, d, m, _, _ in _grid(opts):
        errors, g = bench.gradcheck(
            n, d, m, mask=opts["mask"], p_drop=opts["p_drop"], seed=opts["seed"], tau=opts["tau"],
            h=opts["h"], zero_do=opts["zero_do"],
        )
        print(f"# n={n} d={d} M={m} h={opts['h']}")
        for name, err in errors.items():
            good = err <= bench.GRAD_REL_TOL
            ok &= good
            print(f"{'PASS' if good else 'FAIL'}  {name} max rel err {err:.3e}  (tol {bench.GRAD_REL_TOL:.0e})")
        if opts["zero_do"]:
            zero = not (g.dq.any() or g.dk.any() or g.dv.any())
            ok &= zero
            print(f"{'PASS' if zero else 'FAIL'}  gradients vanish for dO = 0")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(opts):
    if not opts["out"]:
        raise UsageError("sweep needs --out")
    kind, pargs = opts["pattern"]
    records = []
    for n, d in itertools.product(opts["n"], opts["d"]):
        spec = bench.SweepSpec(
            algos=opts["algo"], ns=[n], ds=[d], ms=[bench.auto_m(n, d) if x is None else x for x in opts["m"]],
            bcs=opts["bc"], brs=opts["br"], sparsities=opts["sparsity"], mask=opts["mask"],
            p_drop=opts["p_drop"], seed=opts["seed"], tau=opts["tau"], pattern=kind, pattern_args=pargs,
            repeats=opts["repeats"], element_bytes=opts["element_bytes"], oracle_cap=opts["oracle_cap"],
        )
        records.extend(bench.run_sweep(spec))
    bench.write_records(opts["out"], records)
    print(f"wrote {len(records)} rows to {opts['out']}")
    return EXIT_OK


def cmd_predict(opts):
    ok = True
    eb, mult = opts["element_bytes"], opts["multiplier"]
    for n, d, m, bc, br in _grid(opts):
        cfg = AttnConfig(n, d, tau=opts["tau"], mask=opts["mask"], p_drop=opts["p_drop"], seed=opts["seed"])
        plan = plan_tiles(n, d, m, br=br, bc=bc)
        q, k, v, do = bench.random_inputs(n, d, opts["seed"])
        print(f"# n={n} d={d} M={m} br={plan.br} bc={plan.bc} Tc={plan.tc}")
        rows = []
        mem = MemoryModel(m, eb)
        art = standard_forward(q, k, v, cfg, mem.counter)
        rows.append(("standard_forward", iomodel.predict_standard_forward_io(n, d), mem.counter))
        mem = MemoryModel(m, eb)
        standard_backward(art, q, k, v, do, cfg, mem.counter)
        rows.append(("standard_backward", iomodel.predict_standard_backward_io(n, d), mem.counter))
        mem = MemoryModel(m, eb)
        saved = flash_forward(q, k, v, cfg, plan, mem)
        rows.append(("flash_forward", iomodel.predict_flash_forward_io(n, d, plan), mem.counter))
        mem = MemoryModel(m, eb)
        flash_backward(saved, q, k, v, do, mem)
        rows.append(("flash_backward", iomodel.predict_flash_backward_io(n, d, plan), mem.counter))
        print(f"{'algo':<20}{'pred reads':>14}{'pred writes':>14}{'counted':>14}  match  {'bytes':>16}")
        for name, pred, counter in rows:
            match = pred.matches(counter)
            ok &= match
            r_b, w_b = iomodel.byte_report(pred, eb, mult)
            print(f"{name:<20}{pred.reads:>14}{pred.writes:>14}{counter.hbm_total_elems:>14}  "
                  f"{'yes' if match else 'NO ':<5}  {r_b + w_b:>16}")
        std = rows[0][1].total + rows[1][1].total
        fl = rows[2][1].total + rows[3][1].total
        print(f"standard/tiled forward {rows[0][1].total / rows[2][1].total:.3f}  "
              f"backward {rows[1][1].total / rows[3][1].total:.3f}  forward+backward {std / fl:.3f}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"verify": cmd_verify, "gradcheck": cmd_gradcheck, "sweep": cmd_sweep, "predict": cmd_predict}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AttentionError, ValueError) as exc:
        # bad shapes, capacities, plans or parameter values are configuration errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"FAIL: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
