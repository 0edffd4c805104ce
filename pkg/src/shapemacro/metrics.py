"""Corpus-level metrics: compression tables and perturbation robustness.

The compression report mirrors the objective's structure per library:
weighted library size plus mean per-kind free-parameter counts and mean
continuous error of the best refactorings. The perturbation harness adds
Gaussian noise to every exposed continuous parameter and measures the mean
corner distance to the unperturbed shape, for macro-refactored programs
versus raw base programs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .executor import corner_distance, execute
from .lang import CUBOID, F, FLOAT_DOMAINS, PARAM_KINDS, ParamValue, fval, lines_to_program
from .library import (
    Call, Library, ObjectiveWeights, RefactoredProgram,
    expand_refactored, program_cost, refactored_counts,
)
from .search import SearchConfig
from .discovery import Dataset, RefactorCache


@dataclass(frozen=True)
class MetricsRow:
    method: str
    f: float
    library_size: int
    mean_counts: dict  # kind -> mean free-parameter count
    mean_cont_error: float


def compression_report(
    dataset: Dataset, libs, w: ObjectiveWeights | None = None,
    cfg: SearchConfig | None = None, cache: RefactorCache | None = None,
) -> list:
    """One row per library; ``libs`` holds (name, Library) pairs."""
    cfg = cfg or SearchConfig()
    w = w or cfg.weights
    cache = cache or RefactorCache(cfg)
    rows = []
    n = len(dataset.entries)
    for name, lib in libs:
        totals = {k: 0.0 for k in PARAM_KINDS}
        err = 0.0
        f_acc = 0.0
        for e in dataset.entries:
            rp = cache.best(e, lib)
            for k, v in refactored_counts(rp).items():
                totals[k] += v
            err += rp.cont_error
            f_acc += program_cost(rp, w)
        rows.append(
            MetricsRow(
                method=name,
                f=w.lam_n * lib.size + f_acc / n,
                library_size=lib.size,
                mean_counts={k: totals[k] / n for k in PARAM_KINDS},
                mean_cont_error=err / n,
            )
        )
    return rows


def rows_to_json(rows) -> list:
    return [
        {
            "method": r.method,
            "f": r.f,
            "library_size": r.library_size,
            "mean_counts": r.mean_counts,
            "mean_cont_error": r.mean_cont_error,
        }
        for r in rows
    ]


def _clamp_domain(command: str, slot: int, v: float) -> float:
    lo, hi = FLOAT_DOMAINS.get(command, {}).get(slot, (None, None))
    if lo is not None:
        v = max(v, lo if lo > 0 else 1e-4 if command == CUBOID else lo)
    if hi is not None:
        v = min(v, hi)
    return v


def _perturb_call_args(call: Call, lib: Library, rng, sigma: float) -> Call:
    macro = lib.get(call.fn)
    args = []
    for i, pv in enumerate(call.args):
        if pv.kind != F or sigma == 0.0:
            args.append(pv)
            continue
        v = pv.value + rng.normal(0.0, sigma)
        if macro is not None:
            f = macro.formals[i]
            if f.lo is not None:
                v = max(v, f.lo if f.lo > 0 else 1e-4 if f.hi is None else f.lo)
            if f.hi is not None:
                v = min(v, f.hi)
        else:
            v = _clamp_domain(call.fn, i, v)
        args.append(fval(v))
    return Call(call.fn, tuple(args))


def free_continuous_count(rp: RefactoredProgram) -> int:
    return refactored_counts(rp)[F]


def perturbation_harness(
    dataset: Dataset, refactored: dict, sigmas, lib: Library,
    seed: int = 0, trials: int = 1,
) -> list:
    """Mean corner distance to the unperturbed shape per noise level.

    Condition "macro" perturbs the free continuous arguments of each
    program's refactoring under ``lib``; condition "base" perturbs every
    continuous value of the raw program. Returns one dict per sigma.
    """
    rng = np.random.default_rng(seed)
    rows = []
    base_calls = {
        e.uid: RefactoredProgram(
            tuple(Call(ln.command, ln.params) for ln in e.program.lines()),
            tuple(range(len(e.program.blocks))), 0.0,
        )
        for e in dataset.entries
    }
    refs = {}
    for e in dataset.entries:
        refs[("macro", e.uid)] = execute(
            lines_to_program(expand_refactored(lib, refactored[e.uid]))
        )
        refs[("base", e.uid)] = execute(e.program)

    for sigma in sigmas:
        acc = {"macro": [], "base": []}
        for e in dataset.entries:
            for condition, rp in (("macro", refactored[e.uid]), ("base", base_calls[e.uid])):
                for _ in range(trials):
                    calls = tuple(
                        _perturb_call_args(c, lib, rng, float(sigma)) for c in rp.calls
                    )
                    noisy = lines_to_program(
                        expand_refactored(lib, RefactoredProgram(calls, rp.order, 0.0))
                    )
                    acc[condition].append(
                        corner_distance(refs[(condition, e.uid)], execute(noisy))
                    )
        rows.append({
            "sigma": float(sigma),
            "macro": float(np.mean(acc["macro"])),
            "base": float(np.mean(acc["base"])),
        })
    return rows
