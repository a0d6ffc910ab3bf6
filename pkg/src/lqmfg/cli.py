"""Command-line surface.

Subcommands: solve {nce|master|lambda|finite-n}, compare {nce-master|
lambda-phi|finite-structure}, check-solvability, simulate. Artifacts are
CSV files (17 significant digits, round-trip exact) plus a plain-text
summary per run. Exit codes: 0 success/PASS, 1 usage or configuration
error, 2 mathematical failure (finite escape, equivalence FAIL,
non-finite simulation).
"""

import argparse
import math
import os
import sys

import numpy as np

from . import asymptotic, master, nce, sim
from .errors import (AsymmetryDrift, BadPi, BlowUp, DimensionMismatch,
                     EmptyBatch, EmptyType, GridMismatch, IndexOutOfRange,
                     KNotOne, ModelFileError, NonFiniteField, NonFiniteState,
                     NotPD, NotPSD, NTooLargeForMemory, PermutationMismatch,
                     TimeOutOfRange)
from .modelfile import load_model
from .model import TimeGrid, default_steps
from .ode import BlowUpReport, MatrixPath

_USAGE_ERRORS = (ModelFileError, DimensionMismatch, NotPSD, NotPD, BadPi,
                 GridMismatch, KNotOne, NTooLargeForMemory, IndexOutOfRange,
                 TimeOutOfRange, EmptyType, EmptyBatch, ValueError, OSError)
_MATH_ERRORS = (BlowUp, NonFiniteState, NonFiniteField, AsymmetryDrift,
                PermutationMismatch)


def _fmt(x) -> str:
    return format(float(x), ".17g")


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    mathematical failure, so remap."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"expected a comma-separated integer list, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lqmfg",
                description="Solvers and checks for linear-quadratic mean "
                            "field games with a major player.")
    sub = p.add_subparsers(dest="command", required=True)

    def shared(sp, need_model=True):
        sp.add_argument("--model", required=need_model,
                        help="path to a key=value model file")
        sp.add_argument("--grid", type=int, default=None,
                        help="number of integrator steps (default by horizon)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--tol", type=float, default=None,
                        help="comparison tolerance override")
        sp.add_argument("--seed", type=_int_list, default=[0],
                        help="comma-separated seed list")
        sp.add_argument("--N", type=_int_list, default=None,
                        help="comma-separated population sizes")
        sp.add_argument("--dt", type=float, default=None,
                        help="simulation step")
        sp.add_argument("--dense", action="store_true",
                        help="force the dense finite-N mode")

    sp = sub.add_parser("solve", help="solve one equation system")
    sp.add_argument("system", choices=["nce", "master", "lambda", "finite-n"])
    shared(sp)

    sp = sub.add_parser("compare", help="run two routes and diff them")
    sp.add_argument("pair", choices=["nce-master", "lambda-phi",
                                     "finite-structure"])
    shared(sp)

    sp = sub.add_parser("check-solvability",
                        help="finite-N boundedness vs the limit-system verdict")
    shared(sp)

    sp = sub.add_parser("simulate", help="closed-loop Monte Carlo runs")
    shared(sp)
    sp.add_argument("--type-counts", type=_int_list, default=None,
                    help="players per type (single N only)")
    sp.add_argument("--feedback", choices=["nce", "master"], default="nce")
    sp.add_argument("--use-empirical", action="store_true",
                    help="feed empirical means into the controls")
    return p


def _make_grid(args, model) -> TimeGrid:
    M = args.grid if args.grid is not None else default_steps(model.T)
    return TimeGrid(M=M, T=model.T)


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_lines(path: str, lines):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _entry_names(prefix: str, shape: tuple):
    if len(shape) == 0:
        return [prefix]
    if len(shape) == 1:
        return [f"{prefix}_{i}" for i in range(shape[0])]
    return [f"{prefix}_{i}_{j}" for i in range(shape[0]) for j in range(shape[1])]


def _write_path_csv(path: str, mp: MatrixPath, prefix: str):
    """Wide CSV: node time plus every entry of the state, row-major."""
    names = _entry_names(prefix, mp.state_shape)
    lines = [",".join(["t"] + names)]
    flat = mp.values.reshape(mp.values.shape[0], -1)
    for t, row in zip(mp.grid.nodes, flat):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in row]))
    _write_lines(path, lines)


def _sub_path(mp: MatrixPath, k: int) -> MatrixPath:
    return MatrixPath(mp.grid, mp.values[:, k])


def _psd_minimum(values: np.ndarray) -> float:
    worst = np.inf
    for j in range(values.shape[0]):
        worst = min(worst, float(np.linalg.eigvalsh(values[j]).min()))
    return worst


def _blow_lines(grid: TimeGrid, rep: BlowUpReport):
    t = grid.nodes[rep.escape_node]
    return [
        "verdict: finite escape",
        f"escape node: {rep.escape_node}",
        f"escape time: {_fmt(t)}",
        f"norm at escape: {_fmt(rep.norm_at_escape)}",
        f"threshold: {_fmt(rep.threshold)}",
    ]


def cmd_solve(args) -> int:
    model = load_model(args.model)
    grid = _make_grid(args, model)
    out = _outdir(args)
    summary = [f"system: {args.system}", f"grid: M={grid.M} T={_fmt(grid.T)}"]

    if args.system == "nce":
        res = nce.solve_nce(model, grid)
        if isinstance(res, BlowUpReport):
            summary += _blow_lines(grid, res)
            _write_lines(os.path.join(out, "summary.txt"), summary)
            print("\n".join(summary))
            return 2
        _write_path_csv(os.path.join(out, "nce_P0.csv"), res.P0, "P0")
        _write_path_csv(os.path.join(out, "nce_s0.csv"), res.s0, "s0")
        for k in range(model.K):
            _write_path_csv(os.path.join(out, f"nce_P{k + 1}.csv"),
                            _sub_path(res.P, k), f"P{k + 1}")
            _write_path_csv(os.path.join(out, f"nce_s{k + 1}.csv"),
                            _sub_path(res.s, k), f"s{k + 1}")
        _write_path_csv(os.path.join(out, "nce_Abar.csv"), res.Abar, "Abar")
        _write_path_csv(os.path.join(out, "nce_Gbar.csv"), res.Gbar, "Gbar")
        _write_path_csv(os.path.join(out, "nce_mbar.csv"), res.mbar, "mbar")
        pin0 = float(np.abs(res.P0.at(grid.M) - res.lifted.Q0f_pi).max())
        pink = float(np.abs(res.P.at(grid.M) - res.lifted.Qf_pi).max())
        summary += [
            "verdict: solved",
            f"terminal pin max deviation (major): {_fmt(pin0)}",
            f"terminal pin max deviation (minor): {_fmt(pink)}",
            f"min eigenvalue of P0 path: {_fmt(_psd_minimum(res.P0.values))}",
            f"min eigenvalue of minor P paths: "
            f"{_fmt(min(_psd_minimum(res.P.values[:, k]) for k in range(model.K)))}",
        ]
    elif args.system == "master":
        res = master.solve_master(model, grid)
        if isinstance(res, BlowUpReport):
            summary += _blow_lines(grid, res)
            _write_lines(os.path.join(out, "summary.txt"), summary)
            print("\n".join(summary))
            return 2
        _write_path_csv(os.path.join(out, "master_P0.csv"), res.Pd0, "P0")
        _write_path_csv(os.path.join(out, "master_s0.csv"), res.sd0, "s0")
        _write_path_csv(os.path.join(out, "master_r0.csv"), res.rd0, "r0")
        for k in range(model.K):
            _write_path_csv(os.path.join(out, f"master_P{k + 1}.csv"),
                            _sub_path(res.Pd, k), f"P{k + 1}")
            _write_path_csv(os.path.join(out, f"master_s{k + 1}.csv"),
                            _sub_path(res.sd, k), f"s{k + 1}")
        _write_path_csv(os.path.join(out, "master_r_minor.csv"), res.rd, "r")
        pin0 = float(np.abs(res.Pd0.at(grid.M) - res.lifted.Q0f_pi).max())
        pink = float(np.abs(res.Pd.at(grid.M) - res.lifted.Qf_pi).max())
        summary += [
            "verdict: solved",
            f"terminal pin max deviation (major): {_fmt(pin0)}",
            f"terminal pin max deviation (minor): {_fmt(pink)}",
            f"min eigenvalue of P0 path: {_fmt(_psd_minimum(res.Pd0.values))}",
            f"min eigenvalue of minor P paths: "
            f"{_fmt(min(_psd_minimum(res.Pd.values[:, k]) for k in range(model.K)))}",
        ]
    elif args.system == "lambda":
        res = asymptotic.solve_lambda(model, grid)
        if isinstance(res, BlowUpReport):
            summary += _blow_lines(grid, res)
            _write_lines(os.path.join(out, "summary.txt"), summary)
            print("\n".join(summary))
            return 2
        for key in asymptotic.BLOCK_KEYS:
            _write_path_csv(os.path.join(out, f"lambda_{key}.csv"),
                            res.blocks[key], f"L{key}")
        summary.append("verdict: solved")
    else:
        if not args.N or len(args.N) != 1:
            raise ValueError("solve finite-n needs --N with exactly one value")
        N = args.N[0]
        res = asymptotic.solve_finite_n(model, N, grid, dense=args.dense)
        if isinstance(res, BlowUpReport):
            summary += _blow_lines(grid, res)
            _write_lines(os.path.join(out, "summary.txt"), summary)
            print("\n".join(summary))
            return 2
        _write_path_csv(os.path.join(out, "finite_P0.csv"), res.P0_big, "P0")
        _write_path_csv(os.path.join(out, "finite_P1.csv"), res.P1_big, "P1")
        _write_path_csv(os.path.join(out, "finite_S0.csv"), res.S0_big, "S0")
        _write_path_csv(os.path.join(out, "finite_S1.csv"), res.S1_big, "S1")
        summary += [
            "verdict: solved",
            f"N: {N}",
            f"mode: {res.mode}",
            f"min eigenvalue of P0 path: {_fmt(_psd_minimum(res.P0_big.values))}",
        ]

    _write_lines(os.path.join(out, "summary.txt"), summary)
    print("\n".join(summary))
    return 0


def _write_diff_csv(path: str, report) -> None:
    lines = ["name,diff,tol,pass"]
    for name, value in report.diffs.items():
        lines.append(f"{name},{_fmt(value)},{_fmt(report.tol)},"
                     f"{value <= report.tol}")
    _write_lines(path, lines)


def cmd_compare(args) -> int:
    model = load_model(args.model)
    grid = _make_grid(args, model)
    out = _outdir(args)

    if args.pair == "nce-master":
        tol = args.tol if args.tol is not None else 1e-8
        a = nce.solve_nce(model, grid)
        b = master.solve_master(model, grid)
        blew_a = isinstance(a, BlowUpReport)
        blew_b = isinstance(b, BlowUpReport)
        if blew_a or blew_b:
            print(f"finite escape: nce={blew_a} master={blew_b}")
            return 2
        report = master.compare_nce_master(a, b, tol=tol)
    elif args.pair == "lambda-phi":
        tol = args.tol if args.tol is not None else 1e-8
        a = nce.solve_nce(model, grid)
        b = asymptotic.solve_lambda(model, grid)
        blew_a = isinstance(a, BlowUpReport)
        blew_b = isinstance(b, BlowUpReport)
        if blew_a or blew_b:
            print(f"finite escape: nce={blew_a} lambda={blew_b}")
            return 2
        report = asymptotic.compare_lambda_phi(b, asymptotic.phi_from_nce(a),
                                               tol=tol)
    else:
        N = args.N[0] if args.N else 10
        fin = asymptotic.solve_finite_n(model, N, grid, dense=args.dense)
        if isinstance(fin, BlowUpReport):
            print("\n".join(_blow_lines(grid, fin)))
            return 2
        tol = args.tol if args.tol is not None else asymptotic.TILE_TOL
        report = asymptotic.extract_block_structure(fin, tol=tol)
        lines = ["matrix,node,clusters"]
        for name in ("P0", "P1"):
            for j, c in enumerate(report.cluster_counts[name]):
                lines.append(f"{name},{j},{int(c)}")
        _write_lines(os.path.join(out, "finite_structure.csv"), lines)
        text = report.summary()
        _write_lines(os.path.join(out, "summary.txt"), text.splitlines())
        print(text)
        hi0 = report.counts_everywhere("P0")[1]
        hi1 = report.counts_everywhere("P1")[1]
        ok = hi0 <= 3 and hi1 <= 6
        print(f"structure bound (<=3 / <=6 clusters): {'PASS' if ok else 'FAIL'}")
        return 0 if ok else 2

    stem = args.pair.replace("-", "_")
    _write_diff_csv(os.path.join(out, f"compare_{stem}.csv"), report)
    text = report.summary()
    _write_lines(os.path.join(out, "summary.txt"), text.splitlines())
    print(text)
    return 0 if report.passed else 2


def cmd_check_solvability(args) -> int:
    model = load_model(args.model)
    grid = _make_grid(args, model)
    out = _outdir(args)
    N_list = args.N if args.N else [4, 8, 16]
    report = asymptotic.check_asymptotic_solvability(model, N_list, grid)
    lines = ["N,sup_node_norm,escape_node"]
    for N, norm in zip(report.N_list, report.norms):
        if norm is None:
            lines.append(f"{N},,{report.escapes[N].escape_node}")
        else:
            lines.append(f"{N},{_fmt(norm)},")
    _write_lines(os.path.join(out, "solvability.csv"), lines)
    text = report.summary()
    _write_lines(os.path.join(out, "summary.txt"), text.splitlines())
    print(text)
    return 0 if report.consistent else 2


def _downsample(k: int, total: int) -> np.ndarray:
    stride = max(1, total // k)
    idx = np.arange(0, total, stride)
    if idx[-1] != total - 1:
        idx = np.append(idx, total - 1)
    return idx


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    grid = _make_grid(args, model)
    out = _outdir(args)
    if not args.N:
        raise ValueError("simulate needs --N")
    if args.type_counts is not None and len(args.N) != 1:
        raise ValueError("--type-counts only applies to a single --N")

    if args.feedback == "master":
        sol = master.solve_master(model, grid)
    else:
        sol = nce.solve_nce(model, grid)
    if isinstance(sol, BlowUpReport):
        print("\n".join(_blow_lines(grid, sol)))
        return 2

    sup_by_N = []
    cost_lines = ["N,player,mean,std_error,samples"]
    for N in args.N:
        batch = []
        sups = []
        for seed in args.seed:
            traj = sim.simulate(model, N, sol, dt=args.dt, seed=seed,
                                type_counts=args.type_counts,
                                use_empirical=args.use_empirical)
            batch.append(traj)
            err = sim.empirical_mean_error(traj)
            sups.append(err.sup)

            idx = _downsample(200, traj.times.shape[0])
            show = min(N, 3)
            names = (["t"] + _entry_names("X0", (model.n,))
                     + _entry_names("Zbar", (model.n * model.K,))
                     + _entry_names("U0", (model.n1,)))
            for i in range(show):
                names += _entry_names(f"X{i + 1}", (model.n,))
            lines = [",".join(names)]
            for s in idx:
                row = ([traj.times[s]] + list(traj.X0[s]) + list(traj.Zbar[s])
                       + list(traj.U0[s]))
                for i in range(show):
                    row += list(traj.X[i, s])
                lines.append(",".join(_fmt(v) for v in row))
            _write_lines(os.path.join(out, f"sim_traj_N{N}_seed{seed}.csv"),
                         lines)

            lines = ["t,type,error"]
            for k in range(model.K):
                for s in idx:
                    lines.append(f"{_fmt(err.times[s])},{k + 1},"
                                 f"{_fmt(err.per_type[k, s])}")
            _write_lines(os.path.join(out, f"sim_error_N{N}_seed{seed}.csv"),
                         lines)

        for player in (0, 1):
            est = sim.evaluate_cost(model, batch, player)
            cost_lines.append(f"{N},{player},{_fmt(est.mean)},"
                              f"{_fmt(est.std_error)},{est.samples}")
        sup_by_N.append(math.fsum(sups) / len(sups))

    _write_lines(os.path.join(out, "sim_costs.csv"), cost_lines)

    summary = [f"feedback: {args.feedback}",
               f"seeds: {','.join(str(s) for s in args.seed)}"]
    for N, sup in zip(args.N, sup_by_N):
        summary.append(f"N={N}: mean sup-node empirical-mean error {_fmt(sup)}")
    if len(args.N) >= 2:
        lx = np.log(np.asarray(args.N, dtype=np.float64))
        ly = np.log(np.maximum(sup_by_N, 1e-300))
        slope = float(np.polyfit(lx, ly, 1)[0])
        summary.append(f"log-log error slope across N: {_fmt(slope)} "
                       f"(consistency predicts about -0.5)")
    _write_lines(os.path.join(out, "summary.txt"), summary)
    print("\n".join(summary))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "check-solvability":
            return cmd_check_solvability(args)
        return cmd_simulate(args)
    except _MATH_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
