"""Experiment harness: single runs, budget-matched comparisons,
aggregation, and results emission.

A run drives ``sqp_iterate`` under the outer stopping rule that checks,
at each iterate before stepping, the true-gradient KKT errors:
infinity-norm feasibility below ``feasibility_tol`` and least-squares
stationarity below ``stationarity_tol``.

Budget-matched comparisons rerun the same problem and seed with a
near-exact subproblem tolerance, capped at the total MINRES iterations
the truncated run consumed, and report the best iterate the exact
variant visited.  The cap is enforced at outer-iteration boundaries, so
the final iteration may overshoot; the overshoot is reported alongside
the budget.
"""

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .engine import (IterationFailure, StationaryPointDetected, init_state,
                     sqp_iterate)
from .krylov import least_squares_multipliers
from .problems import GradientOracle, substream

__all__ = ["IterationRow", "RunRecord", "ComparisonRecord", "run_single",
           "run_budget_matched_pair", "select_exact_iterate", "aggregate",
           "emit_results", "load_results", "true_kkt_errors", "make_oracle",
           "resolve_output_path", "CSV_COLUMNS"]

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("problem", "strategy", "eps_n", "seed", "feas_err", "stat_err",
               "minres_iters", "outer_iters", "status")

OUTPUT_DIR_ENV = "SISQO_OUTPUT_DIR"


@dataclass
class IterationRow:
    """Per-iteration trace: KKT errors at the iterate the step left
    from, then the step's own quantities."""

    k: int
    feas_err: float
    stat_err: float
    tau: float
    xi: float
    beta: float
    alpha: float
    accepted_test: int
    hessian_rung: int
    delta_l: float
    minres_iters: int
    cg_iters: int


@dataclass
class RunRecord:
    problem: str
    strategy: str
    eps_n: float
    seed: int
    status: str
    outer_iters: int
    total_minres_iters: int
    feasibility_error: float
    stationarity_error: float
    x_final: np.ndarray
    y_ls_final: np.ndarray
    rows: list
    wall_time: float
    config_digest: str
    info: dict = field(default_factory=dict)


@dataclass
class ComparisonRecord:
    """Paired truncated / near-exact runs under one MINRES budget."""

    inexact: RunRecord
    exact: Optional[RunRecord]
    budget: int
    overshoot: int
    aborted: bool = False
    info: dict = field(default_factory=dict)

    def runs(self):
        return [self.inexact] if self.exact is None \
            else [self.inexact, self.exact]


def _config_digest(cfg, oracle_kind, eps_n):
    payload = repr(sorted(asdict(cfg).items())) + f"|{oracle_kind}|{eps_n!r}"
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def true_kkt_errors(problem, x, j, ls_tol):
    """Infinity-norm feasibility and true-gradient stationarity with
    least-squares multipliers; returns (feas, stat, y_ls)."""
    c = problem.eval_c(x)
    feas = float(np.max(np.abs(c), initial=0.0))
    grad = problem.eval_grad_f(x)
    y_ls = least_squares_multipliers(j, grad, ls_tol)
    stat = float(np.max(np.abs(grad + j.apply_transpose(y_ls)), initial=0.0))
    return feas, stat, y_ls


def make_oracle(kind, eps_n, seed):
    if kind == "exact":
        return GradientOracle("exact")
    return GradientOracle(kind, rng=substream(seed, "oracle"), eps_n=eps_n)


def run_single(problem, cfg, seed, *, oracle_kind="gaussian", eps_n=0.0,
               strategy="sisqo", stop_rule=True, budget=None,
               collect_history=False):
    """One run of the method on a problem with a fixed seed.

    ``stop_rule=False`` with a ``budget`` runs until the MINRES budget
    is spent (checked before each outer iteration) or the iteration cap
    hits; that mode also wants ``collect_history=True`` so the caller
    can select an iterate afterwards.  Both run modes record metrics at
    each iterate before stepping, so a converged start yields a record
    with zero iterations.
    """
    start = time.perf_counter()
    oracle = make_oracle(oracle_kind, eps_n, seed)
    probe_rng = substream(seed, "lipschitz")
    state = init_state(problem, cfg)
    rows = []
    history = [] if collect_history else None
    total_minres = 0
    status = None
    info = {"oracle_m_g": oracle.variance_bound(problem)}

    while True:
        feas, stat, _ = true_kkt_errors(problem, state.x, state.j,
                                        cfg.ls_multiplier_tol)
        if collect_history:
            history.append({"k": state.k, "x": state.x.copy(),
                            "feas": feas, "stat": stat})
        if stop_rule and feas <= cfg.feasibility_tol \
                and stat <= cfg.stationarity_tol:
            status = "converged"
            break
        if budget is not None and total_minres >= budget:
            status = "budget_exhausted"
            info["stop"] = "minres_budget"
            break
        if state.k >= cfg.max_outer_iterations:
            status = "budget_exhausted"
            info["stop"] = "outer_cap"
            break
        try:
            state, step = sqp_iterate(state, problem, oracle, cfg,
                                      probe_rng=probe_rng)
        except StationaryPointDetected as exc:
            status = "stationary"
            info["stationary_residual"] = exc.grad_residual
            info["stationary_resampled"] = exc.resampled
            break
        except IterationFailure as exc:
            status = "failed"
            info["failure"] = str(exc)
            info["failure_diagnostics"] = exc.diagnostics
            break
        total_minres += step.minres_iters
        rows.append(IterationRow(
            k=step.k, feas_err=feas, stat_err=stat, tau=step.tau,
            xi=step.xi, beta=step.beta, alpha=step.alpha,
            accepted_test=step.accepted_test,
            hessian_rung=step.hessian_rung, delta_l=step.delta_l,
            minres_iters=step.minres_iters, cg_iters=step.cg_iters))
        if step.violations:
            info.setdefault("violations", []).extend(
                (step.k, v) for v in step.violations)

    feas, stat, y_ls = true_kkt_errors(problem, state.x, state.j,
                                       cfg.ls_multiplier_tol)
    record = RunRecord(
        problem=problem.name, strategy=strategy, eps_n=eps_n, seed=seed,
        status=status, outer_iters=state.k, total_minres_iters=total_minres,
        feasibility_error=feas, stationarity_error=stat,
        x_final=state.x.copy(), y_ls_final=y_ls, rows=rows,
        wall_time=time.perf_counter() - start,
        config_digest=_config_digest(cfg, oracle_kind, eps_n), info=info)
    if collect_history:
        record.info["history"] = history
    return record


def select_exact_iterate(history, feasibility_tol):
    """Pick the iterate a budget-capped run should be judged by: the
    smallest stationarity error among iterates within the feasibility
    tolerance, else the smallest feasibility error; earliest iterate
    wins ties.  Returns (entry, provenance)."""
    if not history:
        raise ValueError("empty iterate history")
    feasible = [e for e in history if e["feas"] <= feasibility_tol]
    if feasible:
        best = min(feasible, key=lambda e: (e["stat"], e["k"]))
        rule = "min stationarity among feasible"
    else:
        best = min(history, key=lambda e: (e["feas"], e["k"]))
        rule = "min feasibility"
    return best, {"k": best["k"], "rule": rule, "feas": best["feas"],
                  "stat": best["stat"]}


def run_budget_matched_pair(problem, cfg_inexact, cfg_exact, seed, *,
                            oracle_kind="gaussian", eps_n=0.0):
    """Truncated run with the stopping rule, then a near-exact run of
    the same problem and seed capped at the truncated run's total
    MINRES iterations, judged at its best visited iterate."""
    diff = [name for name, a in asdict(cfg_inexact).items()
            if a != asdict(cfg_exact)[name]]
    if set(diff) - {"kappa"}:
        logger.warning("budget-matched configs differ beyond kappa: %s", diff)

    inexact = run_single(problem, cfg_inexact, seed, oracle_kind=oracle_kind,
                         eps_n=eps_n, strategy="sisqo")
    if inexact.status == "failed":
        return ComparisonRecord(inexact=inexact, exact=None, budget=0,
                                overshoot=0, aborted=True,
                                info={"reason": "truncated run failed"})

    budget = inexact.total_minres_iters
    exact = run_single(problem, cfg_exact, seed, oracle_kind=oracle_kind,
                       eps_n=eps_n, strategy="sisqo_exact", stop_rule=False,
                       budget=budget, collect_history=True)
    history = exact.info.pop("history")
    best, provenance = select_exact_iterate(history, cfg_exact.feasibility_tol)
    j_best = problem.eval_jacobian(best["x"])
    feas, stat, y_ls = true_kkt_errors(problem, best["x"], j_best,
                                       cfg_exact.ls_multiplier_tol)
    exact.x_final = best["x"]
    exact.y_ls_final = y_ls
    exact.feasibility_error = feas
    exact.stationarity_error = stat
    exact.info["selected_iterate"] = provenance

    overshoot = max(0, exact.total_minres_iters - budget)
    return ComparisonRecord(inexact=inexact, exact=exact, budget=budget,
                            overshoot=overshoot)


# -- aggregation and emission -----------------------------------------------

def aggregate(records):
    """Group records of one problem by (strategy, eps_n) and produce
    summary statistics; failed runs are counted but excluded from the
    error statistics.  Mixing problems in one call is an error."""
    records = list(records)
    if not records:
        return []
    names = {r.problem for r in records}
    if len(names) > 1:
        raise ValueError(f"aggregate expects a single problem,"
                         f" got {sorted(names)}")
    groups = {}
    for r in records:
        groups.setdefault((r.strategy, r.eps_n), []).append(r)
    out = []
    for (strategy, eps_n), runs in sorted(groups.items()):
        clean = [r for r in runs if r.status != "failed"]
        row = {"problem": records[0].problem, "strategy": strategy,
               "eps_n": eps_n, "count": len(runs),
               "n_failed": len(runs) - len(clean)}
        if clean:
            feas = np.array([r.feasibility_error for r in clean])
            stat = np.array([r.stationarity_error for r in clean])
            row.update(
                mean_feas=float(feas.mean()), median_feas=float(np.median(feas)),
                max_feas=float(feas.max()),
                mean_stat=float(stat.mean()), median_stat=float(np.median(stat)),
                max_stat=float(stat.max()),
                mean_minres=float(np.mean(
                    [r.total_minres_iters for r in clean])),
                mean_outer=float(np.mean([r.outer_iters for r in clean])))
        out.append(row)
    return out


def resolve_output_path(path):
    """Relative paths land in SISQO_OUTPUT_DIR when the variable is set."""
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _float_repr(x):
    return "%.17g" % float(x)


def emit_results(records, path, fmt=None):
    """Write run records as CSV (summary columns) or JSON (full
    records, including per-iteration rows).  The format comes from the
    extension unless given explicitly.  Returns the resolved path."""
    path = resolve_output_path(path)
    if fmt is None:
        fmt = "json" if str(path).endswith(".json") else "csv"
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown results format {fmt!r}")
    flat = []
    for rec in records:
        flat.extend(rec.runs() if isinstance(rec, ComparisonRecord) else [rec])
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(CSV_COLUMNS)
                for r in flat:
                    writer.writerow([
                        r.problem, r.strategy, _float_repr(r.eps_n), r.seed,
                        _float_repr(r.feasibility_error),
                        _float_repr(r.stationarity_error),
                        r.total_minres_iters, r.outer_iters, r.status])
        else:
            payload = {"schema": "sisqo-results-v1",
                       "records": [_record_json(r) for r in flat]}
            with open(path, "w") as fh:
                json.dump(payload, fh, indent=1)
    except OSError as exc:
        raise OSError(f"cannot write results to {path!r}: {exc}") from exc
    return path


def _record_json(r):
    d = {"problem": r.problem, "strategy": r.strategy, "eps_n": r.eps_n,
         "seed": r.seed, "status": r.status, "outer_iters": r.outer_iters,
         "total_minres_iters": r.total_minres_iters,
         "feasibility_error": r.feasibility_error,
         "stationarity_error": r.stationarity_error,
         "x_final": r.x_final.tolist(), "y_ls_final": r.y_ls_final.tolist(),
         "wall_time": r.wall_time, "config_digest": r.config_digest,
         "rows": [asdict(row) for row in r.rows]}
    d["info"] = {k: v for k, v in r.info.items()
                 if isinstance(v, (int, float, str, bool, list))}
    return d


@dataclass
class _LoadedRun:
    """Summary-level record reconstructed from a results CSV."""

    problem: str
    strategy: str
    eps_n: float
    seed: int
    feasibility_error: float
    stationarity_error: float
    total_minres_iters: int
    outer_iters: int
    status: str


def load_results(path):
    """Read a results CSV back into summary records that ``aggregate``
    accepts."""
    path = resolve_output_path(path)
    out = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != list(CSV_COLUMNS):
                raise ValueError(f"unexpected results header in {path!r}:"
                                 f" {reader.fieldnames}")
            for row in reader:
                out.append(_LoadedRun(
                    problem=row["problem"], strategy=row["strategy"],
                    eps_n=float(row["eps_n"]), seed=int(row["seed"]),
                    feasibility_error=float(row["feas_err"]),
                    stationarity_error=float(row["stat_err"]),
                    total_minres_iters=int(row["minres_iters"]),
                    outer_iters=int(row["outer_iters"]),
                    status=row["status"]))
    except OSError as exc:
        raise OSError(f"cannot read results from {path!r}: {exc}") from exc
    return out
