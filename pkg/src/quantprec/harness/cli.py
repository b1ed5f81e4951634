"""Command line entry point: ``quantprec <subcommand> [flags]``.

Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

import numpy as np

from .. import analysis as an
from .. import precond as pc
from ..optimizer import FirstOrderConfig, ShampooConfig
from ..rng import default_seed
from . import checkpoint, config
from .memory import memory_report
from .problems import Quadratic, TinyMLP, desk_logistic
from .training import Trainer, TrainingDiverged, regret_check, run_training

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("shared flags")
    g.add_argument("--config", help="key=value file; flags given on the command line win")
    g.add_argument("--bits", help="3, 4, 8, 32 or lossless")
    g.add_argument("--mapping", help="dt, linear2 or linear")
    g.add_argument("--block-size", type=int)
    g.add_argument("--t1", type=int, help="rectification steps before each PU")
    g.add_argument("--t2", type=int, help="rectification steps before each PIRU")
    g.add_argument("--T1", type=int, help="preconditioner update interval")
    g.add_argument("--T2", type=int, help="inverse root update interval")
    g.add_argument("--beta", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--variant", choices=["shampoo", "caspr", "none"])
    g.add_argument("--fo", choices=["sgdm", "adamw", "adagrad"])
    g.add_argument("--lr", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--steps", type=int)
    g.add_argument("--out", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quantprec", description=__doc__, allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("quant-bench", help="quantization error sweeps as CSV", allow_abbrev=False)
    _common(p)
    p.add_argument("--bench", choices=["table1", "fig3", "contraction"], default="table1")
    p.add_argument("--order", type=int, default=512)
    p.add_argument("--cond", type=float, default=1e4)
    p.add_argument("--seeds", type=int, default=1, help="number of seeded matrices to average")
    p.add_argument("--power", type=float, default=-0.25, help="exponent s of A^s")

    p = sub.add_parser("train", help="train a desk-scale problem, per-step loss CSV", allow_abbrev=False)
    _common(p)
    p.add_argument("--problem", choices=["quadratic", "logistic", "mlp"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint", help="write the final optimizer state here")
    p.add_argument("--resume", help="continue from this checkpoint")

    p = sub.add_parser("verify", help="numeric checks of the analysis results", allow_abbrev=False)
    _common(p)
    p.add_argument("--suite", choices=["lemma1", "lemma2", "prop1", "regret", "all"], default="all")

    p = sub.add_parser("mem-report", help="analytic state-byte report", allow_abbrev=False)
    _common(p)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)

    p = sub.add_parser("roundtrip", help="check save(load(checkpoint)) is byte-identical", allow_abbrev=False)
    _common(p)
    p.add_argument("checkpoint")
    return parser


# ------------------------------------------------------------------ helpers

_FLAG_KEYS = ("bits", "mapping", "block_size", "t1", "t2", "T1", "T2", "beta", "eps", "variant", "fo", "lr",
              "seed", "steps", "out", "problem", "batch_size")


def _settings(args) -> dict:
    file_values = config.load_config(args.config) if args.config else {}
    cli = {k: getattr(args, k, None) for k in _FLAG_KEYS}
    merged = config.merge(file_values, cli)
    merged.setdefault("seed", default_seed())
    return merged


def _quant_config(s: dict) -> pc.QuantConfig:
    bits = str(s.get("bits", "4")).lower()
    if bits in ("32", "lossless"):
        return pc.LOSSLESS
    return pc.QuantConfig(bits=int(bits), mapping=s.get("mapping", "linear2"), block_size=s.get("block_size", 64))


def _shampoo_config(s: dict) -> ShampooConfig | None:
    if s.get("variant") == "none":
        return None
    kw = {k: s[k] for k in ("t1", "t2", "T1", "T2", "beta", "eps", "mapping", "block_size", "variant") if k in s}
    return ShampooConfig(precision=str(s.get("bits", "4")).lower(), **kw)


def _fo_config(s: dict) -> FirstOrderConfig:
    return FirstOrderConfig(s.get("fo", "sgdm"), lr=s.get("lr"))


@contextlib.contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as f:
            yield f


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# ---------------------------------------------------------------- commands


def cmd_quant_bench(args, s) -> int:
    qc = _quant_config(s)
    if qc.lossless:
        raise UsageError("quant-bench needs --bits 3, 4 or 8")
    seed = s["seed"]
    rows = []
    if args.bench == "table1":
        header = "scheme,bits,or,nre,ae_deg"
        mats = [an.make_synthetic_pd(args.order - 4, 4, args.cond, seed=seed + i) for i in range(args.seeds)]
        for scheme in an.Scheme:
            reps = [an.table1_experiment(A, scheme, qc, s=args.power, t1=s.get("t1", 1)) for A in mats]
            nre = float(np.mean([r.nre for r in reps]))
            ae = float(np.mean([r.ae_degrees for r in reps]))
            rows.append(f"{scheme.value},{qc.bits},{int(scheme.rectified)},{_fmt(nre)},{_fmt(ae)}")
    elif args.bench == "fig3":
        header = "s,t2,error"
        s_list = (-0.25, -0.5, -1.0, -2.0)
        t2_list = range(0, 5)
        state, _ = an.noisy_eigenfactor(min(args.order, 256), qc, cond=args.cond, seed=seed)
        grid = an.fig3_sweep(state, pc.QuantConfig(qc.bits, qc.mapping, qc.block_size, 0), s_list, t2_list)
        for i, sv in enumerate(s_list):
            for j, t in enumerate(t2_list):
                rows.append(f"{sv},{t},{_fmt(grid[i, j])}")
    else:
        header = "tau,nre_A,nre_U_or"
        A = an.make_synthetic_pd(args.order - 4, 4, args.cond, seed=seed)
        taus = (1.0, 0.5, 0.1, 0.05, 0.01)
        rows = [f"{t},{_fmt(a)},{_fmt(u)}" for t, a, u in an.contraction_sweep(A, taus, qc, args.power)]
    with _output(s.get("out")) as f:
        print(header, file=f)
        for r in rows:
            print(r, file=f)
    return EXIT_OK


def _make_problem(s: dict):
    kind = s.get("problem", "quadratic")
    seed = s["seed"]
    if kind == "quadratic":
        return Quadratic(seed=seed)
    if kind == "logistic":
        return desk_logistic(seed=seed, batch_size=s.get("batch_size", 128))
    return TinyMLP(seed=seed)


def cmd_train(args, s) -> int:
    problem = _make_problem(s)
    sh, fo = _shampoo_config(s), _fo_config(s)
    trainer = None
    if args.resume:
        trainer = Trainer(problem, sh, fo, optimizers=checkpoint.load(args.resume))
    steps = s.get("steps", 200)
    try:
        result = run_training(problem, sh, fo, steps, trainer=trainer)
    except TrainingDiverged as e:
        print(f"quantprec: {e}", file=sys.stderr)
        return EXIT_FAIL
    start = result.trainer.step_count - steps
    with _output(s.get("out")) as f:
        print("step,loss", file=f)
        for i, v in enumerate(result.losses):
            print(f"{start + i + 1},{v!r}", file=f)
    if args.checkpoint:
        checkpoint.save(args.checkpoint, result.trainer.optimizers)
    timing = ", ".join(f"{k}={v:.3f}s" for k, v in sorted(result.timings.items()))
    print(f"# wall {result.wall_time:.2f}s; {timing or 'no preconditioner phases'}", file=sys.stderr)
    for rep in result.memory:
        print(f"# memory {rep.m}x{rep.n}: quantized {rep.quantized_total} B, 32-bit {rep.full_total} B",
              file=sys.stderr)
    return EXIT_OK


def _suite_lemma1(s):
    out = []
    for i in range(100):
        r = an.lemma1_instance(64, 0.1, 0.005, -0.25, seed=s["seed"] + i)
        out.append((f"lemma1[{i}]", r.bound1_holds and r.bound2_holds, f"nre={_fmt(r.rel_err)} cos={_fmt(r.cosine)}"))
    return out


def _suite_lemma2(s):
    rep = an.verify_lemma2_numeric()
    out = [(f"lemma2[c={c:g},l={l:g},k={k:g}]", d <= 1e-10, f"discrepancy={d:.2e}") for c, l, k, d in rep.cells]
    out.append(("lemma2[h1 decreasing in s]", rep.h1_monotone_s, ""))
    out.append(("lemma2[h1 increasing in l]", rep.h1_monotone_l, ""))
    out.append(("lemma2[h2 minimized at (c/t)^s]", rep.h2_argmin_ok, ""))
    return out


def _suite_prop1(s):
    out = []
    for i in range(10):
        r = an.verify_proposition1(seed=s["seed"] + i)
        f1, f2 = r.part3
        ok = r.ineq1 and r.ineq2 and f1 >= 0.4 and f2 <= 0.94
        out.append((f"prop1[{i}]", ok, f"nre_b1={_fmt(r.nre_b1)} nre_b2={_fmt(r.nre_b2)} f1={_fmt(f1)} f2={_fmt(f2)}"))
    return out


def _suite_regret(s):
    bits = str(s.get("bits", "4"))
    quantizer = "identity" if bits in ("32", "lossless") else "matrix"
    r = regret_check(T=200, m=8, n=8, quantizer=quantizer, bits=4 if quantizer == "identity" else int(bits),
                     seed=s["seed"])
    detail = (f"regret={_fmt(r.regret)} bound={_fmt(r.bound)} eta={_fmt(r.eta)} D={_fmt(r.D)} "
              f"rho={_fmt(r.rho)} mu={_fmt(r.mu)} fixed_point={int(r.fixed_point)}")
    return [("regret", r.ok, detail)]


_SUITES = {"lemma1": _suite_lemma1, "lemma2": _suite_lemma2, "prop1": _suite_prop1, "regret": _suite_regret}


def cmd_verify(args, s) -> int:
    names = list(_SUITES) if args.suite == "all" else [args.suite]
    failures = 0
    with _output(s.get("out")) as f:
        for name in names:
            for label, ok, detail in _SUITES[name](s):
                failures += not ok
                print(f"{'PASS' if ok else 'FAIL'} {label} {detail}".rstrip(), file=f)
        print(f"# {failures} failure(s)", file=f)
    return EXIT_FAIL if failures else EXIT_OK


def cmd_mem_report(args, s) -> int:
    bits = str(s.get("bits", "4"))
    if bits in ("32", "lossless"):
        raise UsageError("mem-report needs --bits 3, 4 or 8")
    rep = memory_report(args.m, args.n, bits=int(bits), block_size=s.get("block_size", 64), fo=s.get("fo", "sgdm"))
    with _output(s.get("out")) as f:
        for line in rep.lines():
            print(line, file=f)
    return EXIT_OK


def cmd_roundtrip(args, s) -> int:
    data = Path(args.checkpoint).read_bytes()
    try:
        again = checkpoint.dumps(checkpoint.loads(data))
    except checkpoint.CheckpointError as e:
        print(f"quantprec: {e}", file=sys.stderr)
        return EXIT_FAIL
    ok = again == data
    print(f"{'identical' if ok else 'MISMATCH'} {len(data)} bytes")
    return EXIT_OK if ok else EXIT_FAIL


_COMMANDS = {
    "quant-bench": cmd_quant_bench,
    "train": cmd_train,
    "verify": cmd_verify,
    "mem-report": cmd_mem_report,
    "roundtrip": cmd_roundtrip,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("quantprec: error: a subcommand is required")
        settings = _settings(args)
        return _COMMANDS[args.command](args, settings)
    except (UsageError, config.ConfigError, ValueError) as e:
        print(str(e), file=sys.stderr)
        if isinstance(e, UsageError):
            parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"quantprec: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
