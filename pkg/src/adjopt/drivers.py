"""Run the shipped example problems from a :class:`ProblemConfig`.

Every ``run_*`` function returns a :class:`RunResult` holding CSV tables,
fields and a summary; :func:`write_outputs` puts them in a directory.
Tables never contain timings, so repeated runs give identical CSV files.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjoint import adjoint_cost_ratio, compute_gradient, taylor_test
from .checkpointing import adjoint_with_checkpoints, plan_multistage
from .config import ProblemConfig
from .fem import FieldFunction, SolverError, assemble, write_field
from .forms import Coefficient, PointwiseData, dx, smooth_max0
from .optimize import Bounds, OptimizationError, ReducedFunctional, TerminationSpec, minimize
from .problems import heat_control, mms, mpec, transient_control


class VerificationError(RuntimeError):
    """A run finished but failed one of its self-checks."""


@dataclass
class RunResult:
    problem: str
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)      # file name -> csv text
    fields: dict = field(default_factory=dict)      # stem -> FieldFunction
    error: str | None = None                        # set when the run aborted part way

    def report(self) -> str:
        lines = [f"problem: {self.problem}"]
        lines += [f"{k}: {_fmt(v)}" for k, v in self.summary.items()]
        if self.error:
            lines.append(f"error: {self.error}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6e}"
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in result.tables.items():
        (out / name).write_text(text)
    for stem, f in result.fields.items():
        write_field(out / f"{stem}.field", f)
    (out / "report.txt").write_text(result.report())
    return out


def termination(cfg: ProblemConfig) -> TerminationSpec:
    return TerminationSpec(gtol=cfg.gtol, ftol=cfg.ftol, max_iter=cfg.max_iter)


def bounds_for(cfg: ProblemConfig, size: int) -> Bounds | None:
    if math.isinf(cfg.lower) and math.isinf(cfg.upper):
        return None
    return Bounds.uniform(size, cfg.lower, cfg.upper)


def taylor_direction(rf, m, seed: int = 1234) -> np.ndarray:
    """The gradient at ``m`` scaled to unit max norm.

    Along a random direction the slope at a nearly stationary point can
    hide under the curvature term; the gradient keeps it visible.  Falls
    back to a seeded random direction when the gradient vanishes.
    """
    rf(m)
    g = rf.gradient(m)
    top = np.abs(g).max() if g.size else 0.0
    if top > 0 and np.isfinite(top):
        return g / top
    return np.random.default_rng(seed).standard_normal(m.shape)


def verify_final(rf, x, cfg: ProblemConfig, summary: dict) -> None:
    """Taylor test at the returned iterate; second order must reach 1.9."""
    res = taylor_test(rf, x, taylor_direction(rf, x, cfg.seed))
    order = min(res.second_orders)
    summary["taylor_second_order"] = order
    if not order >= 1.9:
        raise VerificationError(f"Taylor second-remainder order {order:.3f} < 1.9\n{res}")


def _optimise(rf, cfg, summary, callback=None):
    x0 = rf.initial_vector()
    t0 = time.perf_counter()
    summary["J_initial"] = rf(x0)
    x, hist = minimize(rf, bounds_for(cfg, rf.size), method=cfg.method,
                       termination=termination(cfg), callback=callback)
    summary["J_final"] = hist.values[-1] if hist.rows else rf(x)
    summary["iterations"] = len(hist.rows) - 1
    summary["status"] = hist.status
    summary["evaluations"] = rf.n_eval
    summary["gradients"] = rf.n_grad
    summary["optimisation_seconds"] = time.perf_counter() - t0
    return x, hist


def _solve_counts(tape, summary):
    summary["forward_linear_solves"] = tape.forward_linear_solves
    summary["adjoint_linear_solves"] = tape.adjoint_linear_solves


# -- drivers -------------------------------------------------------------------------------

def build_initial(cfg: ProblemConfig):
    """The driver's problem at its starting iterate, for Taylor tests."""
    if cfg.problem == "heat-control":
        return heat_control(cfg.n, cfg.alpha)
    if cfg.problem in ("mms-smooth", "mms-bangbang"):
        return mms(cfg.n, cfg.problem.split("-")[1])
    if cfg.problem == "transient-control":
        return transient_control(cfg.n, cfg.dt, cfg.steps, cfg.alpha)
    if cfg.problem == "mpec":
        return mpec(cfg.n, cfg.alpha0, cfg.eps, cfg.nu, cfg.f)
    raise ValueError(cfg.problem)


def run_taylor(cfg: ProblemConfig):
    """Taylor test at the initial iterate over h = 1e-2 * 2**-k, k = 0..3."""
    p = build_initial(cfg)
    rf = ReducedFunctional(p.tape, p.functional, p.control)
    m = rf.initial_vector()
    res = taylor_test(rf, m, taylor_direction(rf, m, cfg.seed))
    ok = (all(0.9 <= o <= 1.1 for o in res.first_orders)
          and all(o >= 1.9 for o in res.second_orders))
    return res, ok


def run_heat_control(cfg: ProblemConfig, verify: bool = False) -> RunResult:
    p = heat_control(cfg.n, cfg.alpha)
    rf = ReducedFunctional(p.tape, p.functional, p.control)
    out = RunResult(cfg.problem)
    x, hist = _optimise(rf, cfg, out.summary)
    _solve_counts(p.tape, out.summary)
    u = p.final_state
    ud = p.tape.data["u_d"]
    out.tables["history.csv"] = hist.to_csv()
    out.fields.update(u=u, m=p.tape.control_value(p.control),
                      u_minus_ud=FieldFunction(u.space, u.vector - ud.vector))
    if verify:
        verify_final(rf, x, cfg, out.summary)
    return out


def l2_error(f: FieldFunction, exact) -> float:
    c = Coefficient("f", f.space)
    return float(np.sqrt(assemble((c - PointwiseData("exact", exact)) ** 2 * dx, {"f": f})))


def observed_orders(hs, errors) -> list:
    out = [float("nan")]
    for i in range(1, len(errors)):
        out.append(float(np.log(errors[i - 1] / errors[i]) / np.log(hs[i - 1] / hs[i])))
    return out


def run_mms_study(cfg: ProblemConfig, verify: bool = False) -> RunResult:
    """Solve the manufactured problem on every level and tabulate L2 errors."""
    kind = cfg.problem.split("-")[1]
    out = RunResult(cfg.problem)
    rows, hs, em, eu = [], [], [], []
    t0 = time.perf_counter()
    for n in cfg.levels:
        p = mms(n, kind)
        rf = ReducedFunctional(p.tape, p.functional, p.control)
        x, hist = minimize(rf, bounds_for(cfg, rf.size), method=cfg.method,
                           termination=termination(cfg))
        exact = p.extras["exact"]
        hs.append(1.0 / n)
        em.append(l2_error(p.tape.control_value(p.control), exact["m"]))
        eu.append(l2_error(p.final_state, exact["u"]))
        rows.append([n, hist])
        out.tables[f"history_n{n}.csv"] = hist.to_csv()
    om, ou = observed_orders(hs, em), observed_orders(hs, eu)
    table = [[n, hs[i], em[i], om[i], eu[i], ou[i], len(h.rows) - 1]
             for i, (n, h) in enumerate(rows)]
    out.tables["convergence.csv"] = _csv(
        ["n", "h", "error_m", "order_m", "error_u", "order_u", "iterations"], table)
    out.summary.update(levels=" ".join(map(str, cfg.levels)), order_m_finest=om[-1],
                       order_u_finest=ou[-1], error_m_coarsest=em[0], error_u_coarsest=eu[0],
                       seconds=time.perf_counter() - t0)
    out.fields.update(m=p.tape.control_value(p.control), u=p.final_state)
    if verify:
        verify_final(rf, x, cfg, out.summary)
    return out


def run_transient_control(cfg: ProblemConfig, verify: bool = False) -> RunResult:
    """Backward Euler control problem, optionally under a checkpoint plan.

    With checkpointing the gradient at the initial control is computed both
    ways first and must agree bit for bit.
    """
    p = transient_control(cfg.n, cfg.dt, cfg.steps, cfg.alpha)
    out = RunResult(cfg.problem)
    plan = None
    if cfg.checkpoint:
        plan = plan_multistage(cfg.steps, cfg.snaps_ram, cfg.snaps_disk)
        plain = compute_gradient(p.tape, p.functional, [p.control])[0]
        run = adjoint_with_checkpoints(p.tape, p.functional, [p.control], plan)
        same = np.array_equal(plain, run.gradients[0])
        out.summary.update(checkpoint_advances=run.advances,
                           checkpoint_re_advances=plan.re_advances,
                           checkpoint_gradient_identical=same)
        out.tables["plan.txt"] = str(plan) + "\n"
        if not same:
            raise VerificationError("checkpointed gradient differs from the stored-trajectory one")
    rf = ReducedFunctional(p.tape, p.functional, p.control, plan=plan)
    x, hist = _optimise(rf, cfg, out.summary)
    _solve_counts(p.tape, out.summary)
    out.summary["newton_iterations_last_replay"] = " ".join(
        str(p.tape.newton_iterations[k]) for k in sorted(p.tape.newton_iterations))
    out.tables["history.csv"] = hist.to_csv()
    out.fields.update(u_final=p.final_state, m=p.tape.control_value(p.control))
    if verify:
        verify_final(rf, x, cfg, out.summary)
    return out


def feasibility(u: FieldFunction, eps: float) -> float:
    """L2 norm of the smoothed constraint violation max_eps(-u)."""
    c = Coefficient("u", u.space)
    return float(np.sqrt(assemble(smooth_max0(-c, eps) ** 2 * dx, {"u": u})))


def run_mpec(cfg: ProblemConfig, verify: bool = False) -> RunResult:
    """Penalty loop: halve the penalty parameter, warm-start each stage.

    On a failed stage the loop stops and the result keeps the stages done
    so far, with ``error`` set.
    """
    out = RunResult(cfg.problem)
    rows = []
    m = u = None
    p = rf = x = None
    alpha = cfg.alpha0
    t0 = time.perf_counter()
    for stage in range(cfg.halvings + 1):
        try:
            p = mpec(cfg.n, alpha, cfg.eps, cfg.nu, cfg.f, m0=m, u_guess=u)
            rf = ReducedFunctional(p.tape, p.functional, p.control)
            x, hist = minimize(rf, bounds_for(cfg, rf.size), method=cfg.method,
                               termination=termination(cfg))
        except (SolverError, OptimizationError) as exc:
            out.error = f"stage {stage} (alpha={alpha:.6e}): {exc}"
            break
        m, u = p.tape.control_value(p.control), p.final_state
        rows.append([stage, alpha, hist.values[-1], feasibility(u, cfg.eps),
                     len(hist.rows) - 1, p.tape.newton_iterations[0]])
        alpha /= 2
    out.tables["history.csv"] = _csv(
        ["stage", "alpha", "J", "feasibility", "iterations", "newton_iterations"], rows)
    out.summary.update(stages=len(rows), seconds=time.perf_counter() - t0)
    if rows:
        out.summary.update(J_final=rows[-1][2], feasibility_initial=rows[0][3],
                           feasibility_final=rows[-1][3],
                           feasibility_ratio=rows[-1][3] / rows[0][3])
        out.fields.update(u=u, m=m)
        # cold-start forward solve at the last stage's data, then one adjoint sweep
        cold = mpec(cfg.n, rows[-1][1], cfg.eps, cfg.nu, cfg.f, m0=m)
        cost = adjoint_cost_ratio(cold.tape, cold.functional, [cold.control])
        out.summary.update(cost_newton_iterations=cost.forward_solves,
                           cost_adjoint_solves=cost.adjoint_solves,
                           cost_ratio=cost.ratio, cost_wall_ratio=cost.wall_ratio)
    if verify and out.error is None:
        verify_final(rf, x, cfg, out.summary)
    return out


DRIVERS = {
    "heat-control": run_heat_control,
    "mms-smooth": run_mms_study,
    "mms-bangbang": run_mms_study,
    "transient-control": run_transient_control,
    "mpec": run_mpec,
}


def run(cfg: ProblemConfig, verify: bool = False) -> RunResult:
    return DRIVERS[cfg.problem](cfg, verify)
