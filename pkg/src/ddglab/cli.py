"""Command-line front end: experiments in, CSV tables and SVG plots out."""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .analysis import (
    build_toy_dataset,
    mechanism_compare,
    schedule_sweep,
    three_piece_coefficient_curves,
    toy_combined_panels,
    toy_tilt_panels,
)
from .closed_form import (
    constant_step_2d,
    piecewise_mixture_1d,
    schedule_mixture_1d,
    three_piece_2d,
    unmasking_curve,
)
from .core import build_base, forward_evolve
from .counters import WarningCounters
from .distio import fmt, read_distribution_csv, write_distribution_csv, write_table_csv
from .guidance import (
    Constant,
    GuidanceSchedule,
    LeftInterval,
    PiecewiseConstant,
    RampDown,
    RampUp,
    RightInterval,
    progress_from_time,
    schedule_eval,
)
from .sampling import Mechanism, SamplerConfig, SamplerKind, simulate_reverse
from .schedules import ConstantRate, LogLinear, NoiseSchedule
from .space import DiscreteDistribution, Mode, StateSpace
from .svg import render_heat_grid, render_line_plot


def parse_guidance_spec(spec: str) -> GuidanceSchedule:
    """Parse `const:w`, `piecewise:t1,..;w0,..`, `left:w,r`, `right:w,l`,
    `rampup:w,r`, `rampdown:w,l` (progress coordinate)."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "const":
            return Constant(float(rest))
        if kind == "piecewise":
            times_s, _, weights_s = rest.partition(";")
            inner = [float(x) for x in times_s.split(",") if x]
            weights = tuple(float(x) for x in weights_s.split(",") if x)
            return PiecewiseConstant(tuple([0.0] + inner + [1.0]), weights)
        params = [float(x) for x in rest.split(",")]
        if kind == "left":
            return LeftInterval(*params)
        if kind == "right":
            return RightInterval(*params)
        if kind == "rampup":
            return RampUp(*params)
        if kind == "rampdown":
            return RampDown(*params)
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"invalid schedule spec {spec!r}: {exc}")
    raise SystemExit(f"unknown schedule kind {kind!r} in {spec!r}")


def parse_noise_spec(spec: str, horizon: float) -> NoiseSchedule:
    kind, _, rest = spec.partition(":")
    try:
        if kind == "loglinear":
            return LogLinear(delta=float(rest), horizon=horizon)
        if kind in ("const", "constant"):
            return ConstantRate(sigma_value=float(rest), horizon=horizon)
    except ValueError as exc:
        raise SystemExit(f"invalid noise schedule {spec!r}: {exc}")
    raise SystemExit(f"unknown noise schedule kind {kind!r}")


def _space_from_args(args) -> StateSpace:
    return StateSpace(args.vocab, args.dims, Mode(args.mode))


def _add_space_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=["masked", "uniform"], default="masked")
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--dims", type=int, default=1)


def _add_noise_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", default="loglinear:0.99",
                   help="loglinear:<delta> or const:<sigma>")
    p.add_argument("--horizon", type=float, default=1.0)


class _Run:
    """Collects outputs and writes the manifest they reference."""

    def __init__(self, args, out_dir: str):
        self.args = args
        self.warnings = WarningCounters()
        self.started = time.time()
        os.makedirs(out_dir, exist_ok=True)
        self.manifest_path = os.path.join(out_dir, f"{args.command}_manifest.json")
        self.outputs: list[str] = []

    def finish(self) -> int:
        payload = {
            "command": self.args.command,
            "flags": {k: v for k, v in sorted(vars(self.args).items()) if k != "func"},
            "seed": getattr(self.args, "seed", None),
            "version": __version__,
            "started": self.started,
            "finished": time.time(),
            "warnings": self.warnings.as_dict(),
            "outputs": self.outputs,
        }
        with open(self.manifest_path, "w") as fh:
            json.dump(payload, fh, indent=2, default=str)
        strict = getattr(self.args, "strict", None)
        if strict is not None and self.warnings.total() > strict:
            print(
                f"warning total {self.warnings.total()} exceeds --strict {strict}",
                file=sys.stderr,
            )
            return 2
        return 0


def _out_dir(path: str) -> str:
    return os.path.dirname(os.path.abspath(path)) or "."


def _workers() -> int:
    return max(1, int(os.environ.get("DDG_THREADS", "1")))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_forward(args) -> int:
    run = _Run(args, _out_dir(args.out))
    space = _space_from_args(args)
    noise = parse_noise_spec(args.schedule, args.horizon)
    dist = read_distribution_csv(args.dist, space)
    base = build_base(space)
    evolved = forward_evolve(dist, base, noise, 0.0, args.t, run.warnings)
    write_distribution_csv(
        args.out, evolved, run.manifest_path, [f"t={fmt(args.t)}"]
    )
    run.outputs.append(args.out)
    return run.finish()


def cmd_sample(args) -> int:
    run = _Run(args, _out_dir(args.out))
    space = _space_from_args(args)
    noise = parse_noise_spec(args.schedule, args.horizon)
    p0 = read_distribution_csv(args.dist, space)
    q0 = read_distribution_csv(args.guide, space)
    schedule = parse_guidance_spec(args.w_schedule)
    cfg = SamplerConfig(
        kind=SamplerKind(args.sampler),
        steps=args.steps,
        trajectories=args.trajectories,
        seed=args.seed,
        t_end=args.t_end,
    )
    emp = simulate_reverse(
        space,
        p0,
        q0,
        Mechanism(args.mechanism),
        schedule,
        noise,
        cfg,
        max_workers=_workers(),
    )
    for key, val in emp.meta.items():
        run.warnings.bump(key, val)
    freq = DiscreteDistribution(space, emp.counts / emp.total)
    write_distribution_csv(
        args.out,
        freq,
        run.manifest_path,
        [f"trajectories={emp.total}", f"mechanism={args.mechanism}"],
    )
    run.outputs.append(args.out)
    return run.finish()


def cmd_closed_form(args) -> int:
    run = _Run(args, _out_dir(args.out))
    noise = parse_noise_spec(args.schedule, args.horizon)

    if args.which == "unmask-curve":
        zw = [float(z) for z in args.zw.split(",")]
        curve = unmasking_curve(zw, noise, n_samples=args.samples)
        header = ["t"] + [f"zw_{fmt(z)}" for z in curve.zw_values]
        rows = [
            [curve.times[i]] + [curve.masses[j, i] for j in range(len(zw))]
            for i in range(curve.times.size)
        ]
        write_table_csv(args.out, header, rows, run.manifest_path)
        run.outputs.append(args.out)
        if args.svg:
            mid = curve.times.size // 2
            order = np.argsort(curve.zw_values)
            mids = curve.masses[order, mid]
            if not np.all(np.diff(mids) <= 0):
                print("curve ordering check failed; not rendering", file=sys.stderr)
                return 2
            svg_path = args.out.rsplit(".", 1)[0] + ".svg"
            render_line_plot(
                svg_path,
                curve.times,
                [(f"Z={fmt(z)}", curve.masses[j]) for j, z in enumerate(curve.zw_values)],
                "mask mass over time",
                _csv_block(header, rows),
            )
            run.outputs.append(svg_path)
        return run.finish()

    space = StateSpace(args.vocab, args.dims, Mode.MASKED)
    p0 = read_distribution_csv(args.dist, space)
    q0 = read_distribution_csv(args.guide, space)

    if args.which in ("thm1d-piecewise", "thm1d-piecewise-norm"):
        partition = [float(x) for x in args.partition.split(",")]
        weights = [float(x) for x in args.weights.split(",")]
        result = piecewise_mixture_1d(
            p0, q0, partition, weights, noise,
            normalized=args.which.endswith("norm"),
        )
        trace = ";".join(f"{fmt(t)}:{fmt(m)}" for t, m in result.mask_mass_trace)
        write_distribution_csv(
            args.out,
            result.distribution,
            run.manifest_path,
            [
                f"segment_weights={','.join(fmt(w) for w in result.per_segment_weights)}",
                f"mask_mass_trace={trace}",
            ],
        )
    elif args.which == "thm1d-general":
        schedule = parse_guidance_spec(args.w_schedule)
        horizon = noise.horizon

        def w_of_t(s: float) -> float:
            return schedule_eval(schedule, min(max(progress_from_time(s, horizon), 0.0), 1.0))

        dist = schedule_mixture_1d(p0, q0, w_of_t, noise, args.t, args.quad_tol)
        write_distribution_csv(args.out, dist, run.manifest_path, [f"t={fmt(args.t)}"])
    elif args.which == "thm2d":
        init = (
            read_distribution_csv(args.init, space)
            if args.init
            else DiscreteDistribution.point_mass(space, space.all_mask_state)
        )
        dist = constant_step_2d(init, p0, q0, args.w, noise, args.t, args.s)
        write_distribution_csv(args.out, dist, run.manifest_path)
    elif args.which == "cor2d-3piece":
        dist, coeffs = three_piece_2d(
            p0, q0, args.w0, args.w1, args.w2, args.t1, args.t2, noise
        )
        write_distribution_csv(
            args.out,
            dist,
            run.manifest_path,
            [f"coefficients={','.join(fmt(c) for c in coeffs.as_tuple())}"],
        )
    else:
        raise SystemExit(f"unknown closed-form subcommand {args.which!r}")
    run.outputs.append(args.out)
    return run.finish()


def cmd_compare(args) -> int:
    run = _Run(args, _out_dir(args.out))
    space = StateSpace(args.vocab, 1, Mode.MASKED)
    noise = parse_noise_spec(args.schedule, args.horizon)
    p0 = read_distribution_csv(args.dist, space)
    q0 = read_distribution_csv(args.guide, space)
    cfg = SamplerConfig(
        kind=SamplerKind(args.sampler),
        steps=args.steps,
        trajectories=args.trajectories,
        seed=args.seed,
        t_end=args.t_end,
    )
    rows = mechanism_compare(
        space, p0, q0, [float(w) for w in args.w_grid.split(",")], noise, cfg
    )
    write_table_csv(
        args.out,
        ["mechanism", "w", "tv_closed_form", "tv_tilt", "mask_mass_mid", "euler_clips"],
        [
            (r.mechanism, r.w, r.tv_closed_form, r.tv_tilt, r.mask_mass_mid, r.euler_clips)
            for r in rows
        ],
        run.manifest_path,
    )
    run.outputs.append(args.out)
    return run.finish()


def cmd_sweep(args) -> int:
    run = _Run(args, _out_dir(args.out))
    space = StateSpace(args.vocab, args.dims, Mode.MASKED)
    noise = parse_noise_spec(args.schedule, args.horizon)
    p0 = read_distribution_csv(args.dist, space)
    q0 = read_distribution_csv(args.guide, space)
    cfg = SamplerConfig(
        kind=SamplerKind(args.sampler),
        steps=args.steps,
        trajectories=args.trajectories,
        seed=args.seed,
        t_end=args.t_end,
    )
    schedules = [parse_guidance_spec(s) for s in args.w_schedule]
    rows = schedule_sweep(
        space, p0, q0, schedules, noise, cfg, Mechanism(args.mechanism)
    )
    table_rows = []
    for r in rows:
        coeff = ";".join(fmt(c) for c in r.coefficients) if r.coefficients else ""
        table_rows.append((r.schedule, r.mechanism, r.tv_reference, coeff))
    write_table_csv(
        args.out,
        ["schedule", "mechanism", "tv_reference", "coefficients"],
        table_rows,
        run.manifest_path,
    )
    run.outputs.append(args.out)
    if args.coefficients:
        points = three_piece_coefficient_curves()
        coeff_path = args.out.rsplit(".", 1)[0] + "_coefficients.csv"
        header = ["t2", "t1", "c_early", "c_mid", "c_late", "c_mid_late",
                  "c_early_late", "c_early_mid"]
        coeff_rows = [(p.t2, p.t1, *p.coefficients) for p in points]
        write_table_csv(coeff_path, header, coeff_rows, run.manifest_path)
        run.outputs.append(coeff_path)
        if args.svg:
            for t2 in sorted({p.t2 for p in points}):
                sel = [p for p in points if p.t2 == t2]
                xs = [p.t1 for p in sel]
                labels = header[2:]
                series = [
                    (labels[j], [p.coefficients[j] for p in sel]) for j in range(6)
                ]
                svg_path = args.out.rsplit(".", 1)[0] + f"_coeff_t2_{t2:g}.svg"
                render_line_plot(
                    svg_path, xs, series, f"coefficients at t2={t2:g}",
                    _csv_block(header, [(p.t2, p.t1, *p.coefficients) for p in sel]),
                )
                run.outputs.append(svg_path)
    return run.finish()


def cmd_toy(args) -> int:
    run = _Run(args, args.out_dir)
    dataset = build_toy_dataset()
    tables = {
        "class1": dataset.class_one,
        "class2": dataset.class_two,
        "mixture": dataset.mixture,
    }
    for w, dist in toy_tilt_panels(dataset).items():
        tables[f"tilt_w{w:g}"] = dist
    for name, dist in tables.items():
        path = os.path.join(args.out_dir, f"{name}.csv")
        write_distribution_csv(path, dist, run.manifest_path)
        run.outputs.append(path)
        if args.svg:
            v = dataset.space.vocab_size
            grid = dist.values.reshape(v, v)[: v - 1, : v - 1]
            svg_path = os.path.join(args.out_dir, f"{name}.svg")
            render_heat_grid(svg_path, grid, name, f"{name} max={grid.max():.6g}")
            run.outputs.append(svg_path)
    for (w, g), table in toy_combined_panels(dataset).items():
        name = f"combined_w{w:g}_g{g:g}"
        path = os.path.join(args.out_dir, f"{name}.csv")
        rows = [(i, table.reshape(-1)[i]) for i in range(table.size)]
        write_table_csv(path, ["index", "value"], rows, run.manifest_path)
        run.outputs.append(path)
        if args.svg:
            v = dataset.space.vocab_size
            svg_path = os.path.join(args.out_dir, f"{name}.svg")
            render_heat_grid(
                svg_path, table[: v - 1, : v - 1], name, f"{name} mass={table.sum():.6g}"
            )
            run.outputs.append(svg_path)
    return run.finish()


def _csv_block(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(x) if isinstance(x, float) else str(x) for x in row))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sampler", choices=["euler", "tau"], default="euler")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--trajectories", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-end", dest="t_end", type=float, default=1e-3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddg",
        description="Exact experiments for guided discrete diffusion at desk scale",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="evolve a distribution forward in time")
    _add_space_flags(p)
    _add_noise_flags(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("sample", help="simulate the guided reverse chain")
    _add_space_flags(p)
    _add_noise_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--mechanism", choices=["unlocking", "simple", "normalized"],
                   required=True)
    p.add_argument("--w-schedule", dest="w_schedule", default="const:1")
    p.add_argument("--dist", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("closed-form", help="evaluate an analytic distribution")
    p.add_argument("which", choices=[
        "thm1d-general", "thm1d-piecewise", "thm1d-piecewise-norm",
        "thm2d", "cor2d-3piece", "unmask-curve",
    ])
    _add_noise_flags(p)
    p.add_argument("--vocab", type=int, default=3)
    p.add_argument("--dims", type=int, default=1)
    p.add_argument("--dist")
    p.add_argument("--guide")
    p.add_argument("--init")
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--w0", type=float, default=1.0)
    p.add_argument("--w1", type=float, default=1.0)
    p.add_argument("--w2", type=float, default=1.0)
    p.add_argument("--t", type=float, default=1e-3)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=1.0 / 3.0)
    p.add_argument("--t2", type=float, default=2.0 / 3.0)
    p.add_argument("--partition", default="0.001,1.0")
    p.add_argument("--weights", default="1.0")
    p.add_argument("--w-schedule", dest="w_schedule", default="const:1")
    p.add_argument("--quad-tol", dest="quad_tol", type=float, default=1e-8)
    p.add_argument("--zw", default="1,2,4")
    p.add_argument("--samples", type=int, default=101)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_closed_form)

    p = sub.add_parser("compare", help="compare guidance mechanisms")
    _add_noise_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--w-grid", dest="w_grid", default="1,2,4")
    p.add_argument("--dist", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="sweep guidance schedules")
    _add_noise_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--dims", type=int, default=1)
    p.add_argument("--mechanism", choices=["unlocking", "simple", "normalized"],
                   default="normalized")
    p.add_argument("--w-schedule", dest="w_schedule", action="append", required=True)
    p.add_argument("--coefficients", action="store_true",
                   help="also emit the three-piece coefficient curves")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--dist", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("toy", help="emit the two-class toy dataset tables")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_toy)

    for sp in sub.choices.values():
        sp.add_argument("--strict", nargs="?", const=0, type=int, default=None,
                        help="exit nonzero if warning total exceeds this")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
