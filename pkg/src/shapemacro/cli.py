"""Command-line interface.

Subcommands: gen-corpus, discover, baseline, refactor, report, perturb,
serve. Every subcommand is deterministic given --seed; run reports leave
wall-clock times in a sidecar meta file so the main artifacts stay
byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from .corpus import CorpusSpec, generate_corpus, load_corpus, save_corpus
from .discovery import (
    Dataset, DiscoveryConfig, RefactorCache, run_baseline, run_shapemod,
)
from .library import (
    Call, Library, ObjectiveWeights, expand_refactored, library_to_json,
    load_library, save_library,
)
from .metrics import compression_report, perturbation_harness, rows_to_json
from .search import SearchConfig


def _weights_from_file(path) -> ObjectiveWeights:
    if path is None:
        return ObjectiveWeights()
    data = json.loads(Path(path).read_text())
    return ObjectiveWeights(**data)


def _write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _discovery_config(args, weights: ObjectiveWeights) -> DiscoveryConfig:
    search = SearchConfig(weights=weights)
    return DiscoveryConfig(
        num_rounds=args.rounds,
        num_proposal_steps=args.proposal_steps,
        num_integration_steps=args.integration_steps,
        subsample_size=args.subsample,
        seed=args.seed,
        search=search,
        uniform_cluster_sampling=args.uniform_cluster_sampling,
        disable_generalize=args.disable_generalize,
        disable_order_filter=args.disable_order_filter,
        disable_validity_criteria=args.disable_validity_criteria,
        best_first_instead_of_beam=args.best_first,
    )


def cmd_gen_corpus(args) -> int:
    spec = CorpusSpec(
        total=args.count, seed=args.seed,
        planted_fraction=args.planted_fraction,
        max_orders=args.max_orders,
    )
    dataset = generate_corpus(spec)
    manifest = save_corpus(dataset, args.out)
    print(f"wrote {len(dataset.entries)} programs to {manifest}")
    return 0


def cmd_discover(args) -> int:
    dataset = load_corpus(args.corpus)
    weights = _weights_from_file(args.weights)
    cfg = _discovery_config(args, weights)
    t0 = time.time()
    result = run_shapemod(dataset, cfg)
    wall = time.time() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "discovery.json", result.report)
    _write_json(out / "discovery.meta.json", {"wall_time_s": wall})
    save_library(result.library, out / "library.json")
    print(f"f={result.report['final_f']:.4f} |L|={result.library.size} "
          f"macros={len(result.library.macros)} ({wall:.1f}s)")
    return 0


def cmd_baseline(args) -> int:
    dataset = load_corpus(args.corpus)
    lib = run_baseline(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_library(lib, out / "baseline_library.json")
    print(f"baseline |L|={lib.size} macros={len(lib.macros)}")
    return 0


def cmd_refactor(args) -> int:
    dataset = load_corpus(args.corpus)
    lib = load_library(args.library) if args.library else Library()
    weights = _weights_from_file(args.weights)
    cache = RefactorCache(SearchConfig(weights=weights))
    rows = []
    for e in dataset.entries:
        rp = cache.best(e, lib)
        rows.append({
            "id": e.uid,
            "order": list(rp.order),
            "cont_error": rp.cont_error,
            "calls": [
                {"fn": c.fn, "args": [pv.value for pv in c.args]} for c in rp.calls
            ],
        })
    _write_json(args.out, rows)
    print(f"refactored {len(rows)} programs -> {args.out}")
    return 0


def cmd_report(args) -> int:
    dataset = load_corpus(args.corpus)
    weights = _weights_from_file(args.weights)
    libs = [("base", Library())]
    for path in args.libraries or []:
        libs.append((Path(path).stem, load_library(path)))
    rows = compression_report(dataset, libs, weights, SearchConfig(weights=weights))
    _write_json(args.out, rows_to_json(rows))
    for r in rows:
        counts = " ".join(f"{k}={v:.2f}" for k, v in sorted(r.mean_counts.items()))
        print(f"{r.method:>16}  f={r.f:9.3f} |L|={r.library_size:3d} {counts} "
              f"err={r.mean_cont_error:.4f}")
    return 0


def cmd_perturb(args) -> int:
    dataset = load_corpus(args.corpus)
    lib = load_library(args.library) if args.library else Library()
    weights = _weights_from_file(args.weights)
    cache = RefactorCache(SearchConfig(weights=weights))
    refactored = cache.best_map(dataset.entries, lib)
    rows = perturbation_harness(
        dataset, refactored, [float(s) for s in args.sigmas], lib, seed=args.seed,
    )
    _write_json(args.out, rows)
    for row in rows:
        print(f"sigma={row['sigma']:.3f} macro={row['macro']:.4f} base={row['base']:.4f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    dataset = load_corpus(args.corpus)
    lib = load_library(args.library) if args.library else Library()
    app = build_app(
        dataset, lib,
        SearchConfig(weights=_weights_from_file(args.weights)),
        log_path=args.log, seed=args.seed,
        static_dir=args.static if args.static else None,
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapemacro",
                                 description="macro discovery for cuboid shape programs")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--planted-fraction", type=float, default=0.0)
    p.add_argument("--max-orders", type=int, default=8)
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("discover", help="run macro discovery")
    p.add_argument("--corpus", required=True, help="corpus manifest.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--proposal-steps", type=int, default=500)
    p.add_argument("--integration-steps", type=int, default=20)
    p.add_argument("--subsample", type=int, default=100)
    p.add_argument("--weights", help="objective weight overrides (json)")
    p.add_argument("--uniform-cluster-sampling", action="store_true")
    p.add_argument("--disable-generalize", action="store_true")
    p.add_argument("--disable-order-filter", action="store_true")
    p.add_argument("--disable-validity-criteria", action="store_true")
    p.add_argument("--best-first", action="store_true")
    p.set_defaults(fn=cmd_discover)

    p = sub.add_parser("baseline", help="run the single-pass baseline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("refactor", help="best programs under a library")
    p.add_argument("--corpus", required=True)
    p.add_argument("--library")
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_refactor)

    p = sub.add_parser("report", help="compression metrics per library")
    p.add_argument("--corpus", required=True)
    p.add_argument("--libraries", nargs="*")
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("perturb", help="noise-robustness table")
    p.add_argument("--corpus", required=True)
    p.add_argument("--library")
    p.add_argument("--weights")
    p.add_argument("--sigmas", nargs="*", default=["0", "0.01", "0.02", "0.04", "0.08"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_perturb)

    p = sub.add_parser("serve", help="editor backend")
    p.add_argument("--corpus", required=True)
    p.add_argument("--library")
    p.add_argument("--weights")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default="edit_events.jsonl")
    p.add_argument("--static", help="directory with the built editor UI")
    p.set_defaults(fn=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
