"""Command line: sample | marginal | asymptotics | verify | render."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("qloz")

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CLIError(f"no such file: {path}", EXIT_IO)
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO)


def _profile(args):
    from .asymptotics import Profile, ProfileError, hexagon
    if args.profile in (None, "hexagon"):
        return hexagon()
    d = _read_json(args.profile)
    try:
        return Profile.from_dict(d)
    except (ProfileError, KeyError, TypeError) as exc:
        raise CLIError(f"invalid profile {args.profile}: {exc}", EXIT_INVALID)


def _nu(args):
    """Top row from ``--nu`` or by discretizing the profile at ``--N``."""
    from .lattice import ShapeError, as_signature, signature_from_profile
    if getattr(args, "nu", None):
        try:
            nu = as_signature([int(v) for v in args.nu.split(",")])
        except (ValueError, ShapeError) as exc:
            raise CLIError(f"invalid --nu: {exc}", EXIT_INVALID)
        if args.N is not None and args.N != len(nu):
            raise CLIError(f"--nu has {len(nu)} parts but --N is {args.N}", EXIT_INVALID)
        return nu
    if args.N is None:
        raise CLIError("give --N (with a profile) or --nu", EXIT_INVALID)
    return signature_from_profile(_profile(args), args.N)


def _params(args, N):
    from .qnum import QParams
    if args.gamma is None or not args.gamma > 0:
        raise CLIError("--gamma must be positive", EXIT_INVALID)
    return QParams(args.gamma, N)


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot create output directory {out}: {exc}", EXIT_IO)
    if not os.access(out, os.W_OK):
        raise CLIError(f"output directory {out} is not writable", EXIT_IO)
    return out


def _manifest(args, out: Path, extra: dict) -> None:
    conf = {k: v for k, v in vars(args).items() if k not in ("func", "q", "config")}
    from .qnum import default_precision
    conf["precision_bits"] = args.bits or default_precision()
    body = {"version": __version__, "config": conf, **extra}
    atomic_write(out / f"{args.command}.manifest.json", json.dumps(body, indent=2, sort_keys=True) + "\n")


# -- subcommands ------------------------------------------------------------------

AUTO_ENUMERATION_ARRAYS = 10**4
AUTO_SEQUENTIAL_N = 24


def resolve_method(method: str, nu) -> str:
    """``auto``: enumeration for tiny cases, the exact sequential sampler while it
    stays fast, Glauber dynamics beyond that."""
    if method != "auto":
        return method
    from .lattice import count_arrays
    if count_arrays(nu) <= AUTO_ENUMERATION_ARRAYS:
        return "enumeration"
    return "sequential" if len(nu) <= AUTO_SEQUENTIAL_N else "glauber"


def cmd_sample(args) -> int:
    from .lattice import array_to_json
    from .sampler import GlauberSettings, InfeasibleMethodError, SamplerConfig, sample
    nu = _nu(args)
    params = _params(args, len(nu))
    out = _outdir(args)
    method = resolve_method(args.method, nu)
    if method == "marginal":
        from .marginal import marginal_table
        from .sampler import sample_bottom_rows
        K = args.K or 1
        if K >= params.N:
            raise CLIError(f"K = {K} must be below N = {params.N}", EXIT_INVALID)
        table = marginal_table(params, nu, K, box="auto" if params.N > 40 else "full", center=None)
        rows = sample_bottom_rows(table, args.M, args.seed)
        lines = []
        for r in rows:
            levels, c = [], 0
            for k in range(1, K + 1):
                levels.append([int(v) for v in r[c:c + k]])
                c += k
            lines.append(json.dumps({"K": K, "rows": levels}, separators=(", ", ": ")))
    else:
        glauber = GlauberSettings(burn_in=args.burn_in, thinning=args.thinning, chains=args.chains)
        cfg = SamplerConfig(params, nu, method=method, seed=args.seed, glauber=glauber)
        try:
            if method != "glauber" and args.threads > 1:
                arrays = _parallel_exact(cfg, args.M, args.threads)
            else:
                arrays = sample(cfg, args.M)
        except InfeasibleMethodError as exc:
            raise CLIError(str(exc), EXIT_INVALID)
        lines = [array_to_json(a) for a in arrays]
    path = out / "samples.jsonl"
    atomic_write(path, "".join(line + "\n" for line in lines))
    _manifest(args, out, {"nu": list(nu), "method": method, "outputs": [path.name],
                          "count": len(lines)})
    print(f"wrote {len(lines)} samples to {path}")
    return EXIT_OK


def _exact_chunk(job):
    from .sampler import sample_exact
    cfg, n, start = job
    return sample_exact(cfg, n, start=start)


def _parallel_exact(cfg, M: int, threads: int):
    """Split draws along substream blocks; the result does not depend on ``threads``."""
    from concurrent.futures import ProcessPoolExecutor
    from .sampler import BLOCK_SIZE
    jobs = [(cfg, min(BLOCK_SIZE, M - s), s) for s in range(0, M, BLOCK_SIZE)]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return [a for part in ex.map(_exact_chunk, jobs) for a in part]


def cmd_marginal(args) -> int:
    from .marginal import SupportError, marginal_table
    nu = _nu(args)
    params = _params(args, len(nu))
    if not 1 <= args.K < params.N:
        raise CLIError(f"need 1 <= K < N, got K = {args.K}, N = {params.N}", EXIT_INVALID)
    out = _outdir(args)
    try:
        table = marginal_table(params, nu, args.K, box=args.box)
    except SupportError as exc:
        raise CLIError(str(exc), EXIT_INVALID)
    path = out / f"marginal_K{args.K}.csv"
    tmp = path.with_suffix(".csv.tmp")
    table.write_csv(tmp)
    os.replace(tmp, path)
    deficit = table.mass_deficit
    _manifest(args, out, {"nu": list(nu), "outputs": [path.name], "rows": len(table.probabilities),
                          "mass_deficit": deficit, "bits": table.bits})
    print(f"wrote {len(table.probabilities)} rows to {path}; mass deficit {deficit:.3e} "
          f"at {table.bits} bits")
    return EXIT_OK


def cmd_asymptotics(args) -> int:
    from .asymptotics import (ContourError, CriticalPointError, critical_points, limit_params,
                              trace_steepest_contour)
    profile = _profile(args)
    if args.gamma is None or not args.gamma > 0:
        raise CLIError("--gamma must be positive", EXIT_INVALID)
    out = _outdir(args)
    try:
        lp = limit_params(profile, args.gamma)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_INVALID)
    result = {"gamma": lp.gamma, "u": lp.u, "sigma2": lp.sigma2, "s2_at_0": lp.s2_at_0}
    outputs = ["asymptotics.json"]
    if profile.kind == "piecewise":
        try:
            result["critical_points"] = list(critical_points(profile, lp).roots)
        except CriticalPointError as exc:
            result["critical_points_error"] = str(exc)
    if not args.no_contour:
        try:
            tr = trace_steepest_contour(profile, lp)
            tmp = out / ".contour.csv.tmp"
            tr.write_csv(tmp)
            os.replace(tmp, out / "contour.csv")
            result["contour_crossing"] = tr.crossing
            outputs.append("contour.csv")
        except ContourError as exc:
            result["contour_error"] = str(exc)
    atomic_write(out / "asymptotics.json", json.dumps(result, indent=2) + "\n")
    _manifest(args, out, {"outputs": outputs})
    print(json.dumps(result))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite
    out = _outdir(args)
    report = run_suite(args.suite, budget=args.budget, seed=args.seed)
    path = out / f"verify_{args.suite}.json"
    from .stats import report_json
    atomic_write(path, report_json(report) + "\n")
    _manifest(args, out, {"outputs": [path.name], "passed": report["passed"]})
    for c in report["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}: {c['detail']}")
    if not report["passed"]:
        failed = [c for c in report["checks"] if not c["pass"]]
        print(json.dumps({"failed": failed}, default=str), file=sys.stderr)
        return 3
    return EXIT_OK


def cmd_render(args) -> int:
    from . import render
    out = _outdir(args)
    if args.kind == "tiling":
        from .lattice import EXAMPLE_ROWS, InterlacingArray, ShapeError, min_volume_array, read_jsonl
        if args.input == "example":
            arr = InterlacingArray(EXAMPLE_ROWS)
        elif args.input:
            try:
                arrays = read_jsonl(args.input)
            except FileNotFoundError:
                raise CLIError(f"no such file: {args.input}", EXIT_IO)
            except (ValueError, KeyError, ShapeError) as exc:
                raise CLIError(f"cannot parse {args.input}: {exc}", EXIT_INVALID)
            if not arrays:
                raise CLIError(f"{args.input} holds no arrays", EXIT_INVALID)
            arr = arrays[min(args.index, len(arrays) - 1)]
        else:
            arr = min_volume_array(_nu(args))
        svg = render.render_tiling_svg(arr)
    elif args.kind == "contour":
        from .asymptotics import grid_real_part, limit_params, singular_segment, trace_steepest_contour
        profile = _profile(args)
        lp = limit_params(profile, args.gamma)
        seg = singular_segment(profile, lp)
        R = max(1.5, 1.3 * seg[1])
        re_ax, im_ax, rel = grid_real_part(profile, lp, (-R, R), (-R, R), n=args.grid)
        tr = trace_steepest_contour(profile, lp)
        svg = render.render_contour_svg(rel, re_ax, im_ax, 0.0, tr.points, seg)
    else:
        from .lattice import read_jsonl
        from scipy import stats as sps
        from .asymptotics import limit_params
        profile = _profile(args)
        lp = limit_params(profile, args.gamma)
        try:
            arrays = read_jsonl(args.input)
        except (FileNotFoundError, TypeError):
            raise CLIError(f"no such file: {args.input}", EXIT_IO)
        N = arrays[0].depth
        z = np.array([(a.row(1).parts[0] - lp.u * N) / math.sqrt(N) for a in arrays])
        sd = math.sqrt(lp.sigma2)
        svg = render.render_histogram_svg(z, lambda x: sps.norm.pdf(x, scale=sd))
    path = out / f"{args.kind}.svg"
    atomic_write(path, svg)
    _manifest(args, out, {"outputs": [path.name]})
    print(f"wrote {path}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _reject_q(value):
    raise argparse.ArgumentTypeError("q is derived as exp(-gamma/N); give --gamma and --N instead")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qloz", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, profile=True, nu=True):
        sp.add_argument("--config", help="JSON file of defaults (flags take precedence)")
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--N", type=int)
        sp.add_argument("--q", type=_reject_q, help=argparse.SUPPRESS)
        if profile:
            sp.add_argument("--profile", help="profile JSON file, or 'hexagon'")
        if nu:
            sp.add_argument("--nu", help="top row as comma separated integers")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--bits", type=int, help="starting precision (else QLOZ_PRECISION_BITS)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", default=".")

    s = sub.add_parser("sample", help="draw random arrays")
    common(s)
    s.add_argument("--M", type=int, default=100)
    s.add_argument("--K", type=int, help="rows to keep with --method marginal")
    s.add_argument("--method", choices=["auto", "sequential", "enumeration", "glauber", "marginal"],
                   default="auto")
    s.add_argument("--chains", type=int, default=1, help="independent Glauber chains")
    s.add_argument("--burn-in", type=int)
    s.add_argument("--thinning", type=int)
    s.set_defaults(func=cmd_sample)

    m = sub.add_parser("marginal", help="exact law of row K")
    common(m)
    m.add_argument("--K", type=int, default=1)
    m.add_argument("--box", default="full", choices=["full", "auto"])
    m.set_defaults(func=cmd_marginal)

    a = sub.add_parser("asymptotics", help="u, sigma^2, critical points, descent contour")
    common(a, nu=False)
    a.add_argument("--no-contour", action="store_true")
    a.set_defaults(func=cmd_asymptotics)

    v = sub.add_parser("verify", help="run a verification suite")
    common(v, profile=False, nu=False)
    v.add_argument("--suite", choices=["exact", "clt"], default="exact")
    v.add_argument("--budget", choices=["small", "full"], default="small")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("render", help="write an SVG figure")
    common(r)
    r.add_argument("kind", choices=["tiling", "contour", "histogram"])
    r.add_argument("--input", help="JSONL samples, or 'example' for the tiling example")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--grid", type=int, default=120)
    r.set_defaults(func=cmd_render)
    p.subcommands = {"sample": s, "marginal": m, "asymptotics": a, "verify": v, "render": r}
    return p


def _apply_config(parser, argv):
    """Flags > config file > defaults.  A run manifest is accepted as a config file."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        conf = _read_json(args.config)
        if "config" in conf and "version" in conf:
            conf = dict(conf["config"])
            conf.pop("command", None)
            bits = conf.pop("precision_bits", None)
            conf.setdefault("bits", bits)
        sub = parser.subcommands[args.command]
        for k, v in conf.items():
            k = k.replace("-", "_")
            if k == "q":
                raise CLIError("q is derived as exp(-gamma/N); give gamma and N instead", EXIT_INVALID)
            if hasattr(args, k) and getattr(args, k) == sub.get_default(k):
                setattr(args, k, v)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.bits:
        os.environ["QLOZ_PRECISION_BITS"] = str(args.bits)
    t0 = time.time()
    try:
        code = args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    log.info("%s finished in %.1fs", args.command, time.time() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
