"""HTTP service for the goal-directed program editor.

Stateless JSON endpoints over a corpus and a macro library: program
listings, program text in base and macro form with slider descriptions for
every free continuous parameter, execution with parameter overrides,
corner distance against a target, editing-task generation, and an
append-only edit-event log (JSON lines with server timestamps).

Editing tasks pair a source program with a target that differs only in
continuous parameters, so a zero-distance slider assignment always exists.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .executor import corner_distance, execute, geometry_json
from .lang import F, FLOAT_DOMAINS, Line, Program, lines_to_program, print_program, fval
from .library import Call, Library, RefactoredProgram, expand_refactored
from .search import SearchConfig
from .discovery import Dataset, RefactorCache

DIM_SLIDER_HI = 2.0


@dataclass
class Slider:
    slot: str
    label: str
    value: float
    lo: float
    hi: float
    line: int  # line (base mode) or call (macro mode) the slot belongs to


@dataclass
class EditTask:
    task_id: int
    program_id: int
    mode: str
    target_values: dict  # slot -> float reaching the target exactly
    target_geometry: list
    best_distance: float = float("inf")
    history: list = field(default_factory=list)


class ExecuteRequest(BaseModel):
    program_id: int
    mode: str = "base"
    overrides: dict = {}


class DistanceRequest(ExecuteRequest):
    target_program_id: int


class TaskRequest(BaseModel):
    mode: str = "macro"


class OverridesRequest(BaseModel):
    overrides: dict = {}


class EventRequest(BaseModel):
    slot: str
    value: float


def _slider_bounds(lo, hi, value):
    lo = 0.0 if lo is None else lo
    if lo == 0.0 and (hi is None or hi > 1.0):
        lo = 0.01
    hi = DIM_SLIDER_HI if hi is None else hi
    return lo, max(hi, value)


def base_sliders(p: Program) -> list:
    out = []
    for li, line in enumerate(p.lines()):
        doms = FLOAT_DOMAINS.get(line.command, {})
        for si, pv in enumerate(line.params):
            if pv.kind != F:
                continue
            lo, hi = _slider_bounds(*doms.get(si, (None, None)), pv.value)
            out.append(Slider(f"L{li}.P{si}", f"{line.command}[{li}].{si}",
                              pv.value, lo, hi, li))
    return out


def macro_sliders(rp: RefactoredProgram, lib: Library) -> list:
    out = []
    for ci, call in enumerate(rp.calls):
        macro = lib.get(call.fn)
        for ai, pv in enumerate(call.args):
            if pv.kind != F:
                continue
            if macro is not None:
                f = macro.formals[ai]
                lo, hi = _slider_bounds(f.lo, f.hi, pv.value)
            else:
                doms = FLOAT_DOMAINS.get(call.fn, {})
                lo, hi = _slider_bounds(*doms.get(ai, (None, None)), pv.value)
            out.append(Slider(f"C{ci}.A{ai}", f"{call.fn}[{ci}].{ai}",
                              pv.value, lo, hi, ci))
    return out


def macro_text(rp: RefactoredProgram, lib: Library) -> str:
    rows = []
    for call in rp.calls:
        args = []
        for pv in call.args:
            if pv.kind == F:
                args.append(f"{pv.value:.4f}")
            elif pv.kind == "cid":
                args.append("bbox" if pv.value == 0 else f"c{pv.value}")
            else:
                args.append(str(pv.value))
        rows.append(f"{call.fn}({', '.join(args)})")
    return "\n".join(rows) + "\n"


def _sliders_json(sliders) -> list:
    return [
        {"slot": s.slot, "label": s.label, "value": s.value,
         "lo": s.lo, "hi": s.hi, "line": s.line}
        for s in sliders
    ]


class EditorService:
    """Owns the corpus, refactorings, task registry, and the edit log."""

    def __init__(self, dataset: Dataset, lib: Library,
                 cfg: SearchConfig | None = None, log_path=None, seed: int = 0):
        self.dataset = dataset
        self.lib = lib
        self.cfg = cfg or SearchConfig()
        self.cache = RefactorCache(self.cfg)
        self.by_uid = {e.uid: e for e in dataset.entries}
        self.tasks: dict = {}
        self.rng = np.random.default_rng(seed)
        self.log_path = Path(log_path) if log_path else None
        self._families: dict = {}
        for e in dataset.entries:
            self._families.setdefault(e.family, []).append(e.uid)

    # -- core helpers -------------------------------------------------------

    def entry(self, pid: int):
        e = self.by_uid.get(pid)
        if e is None:
            raise HTTPException(status_code=404, detail=f"unknown program {pid}")
        return e

    def refactored(self, pid: int) -> RefactoredProgram:
        return self.cache.best(self.entry(pid), self.lib)

    def _apply_base(self, p: Program, overrides: dict) -> Program:
        lines = [list(ln.params) for ln in p.lines()]
        cmds = [ln.command for ln in p.lines()]
        for slot, value in overrides.items():
            li, si = self._parse_slot(slot, "L", "P", len(lines))
            if si >= len(lines[li]) or lines[li][si].kind != F:
                raise HTTPException(400, detail={"slot": slot, "reason": "not a continuous slot"})
            lines[li][si] = fval(self._coerce(slot, value))
        new_lines = [Line(c, tuple(ps)) for c, ps in zip(cmds, lines)]
        try:
            return lines_to_program(new_lines)
        except Exception as e:
            raise HTTPException(400, detail={"slot": "?", "reason": str(e)})

    def _apply_macro(self, rp: RefactoredProgram, overrides: dict) -> RefactoredProgram:
        calls = [list(c.args) for c in rp.calls]
        for slot, value in overrides.items():
            ci, ai = self._parse_slot(slot, "C", "A", len(calls))
            if ai >= len(calls[ci]) or calls[ci][ai].kind != F:
                raise HTTPException(400, detail={"slot": slot, "reason": "not a continuous slot"})
            calls[ci][ai] = fval(self._coerce(slot, value))
        new_calls = tuple(
            Call(c.fn, tuple(args)) for c, args in zip(rp.calls, calls)
        )
        return RefactoredProgram(new_calls, rp.order, rp.cont_error)

    @staticmethod
    def _coerce(slot: str, value) -> float:
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise HTTPException(400, detail={"slot": slot, "reason": "value must be a number"})
        if v != v:
            raise HTTPException(400, detail={"slot": slot, "reason": "value must be finite"})
        return v

    @staticmethod
    def _parse_slot(slot: str, a: str, b: str, n: int):
        try:
            left, right = slot.split(".")
            i, j = int(left[1:]), int(right[1:])
            if left[0] != a or right[0] != b:
                raise ValueError
        except Exception:
            raise HTTPException(400, detail={"slot": slot, "reason": "malformed slot id"})
        if not 0 <= i < n:
            raise HTTPException(400, detail={"slot": slot, "reason": "slot out of range"})
        return i, j

    def geometry(self, pid: int, mode: str, overrides: dict):
        e = self.entry(pid)
        if mode == "base":
            prog = self._apply_base(e.program, overrides)
        elif mode == "macro":
            rp = self._apply_macro(self.refactored(pid), overrides)
            try:
                prog = lines_to_program(expand_refactored(self.lib, rp))
            except HTTPException:
                raise
            except Exception as err:
                raise HTTPException(400, detail={"slot": "?", "reason": str(err)})
        else:
            raise HTTPException(400, detail={"slot": "mode", "reason": "mode must be base or macro"})
        return execute(prog)

    def log_event(self, payload: dict) -> None:
        if self.log_path is None:
            return
        payload = {"t": time.time(), **payload}
        with self.log_path.open("a") as fh:
            fh.write(json.dumps(payload, sort_keys=True) + "\n")

    # -- tasks ---------------------------------------------------------------

    def new_task(self, mode: str) -> EditTask:
        if mode not in ("base", "macro"):
            raise HTTPException(400, detail={"slot": "mode", "reason": "mode must be base or macro"})
        families = sorted(f for f, uids in self._families.items() if len(uids) >= 2)
        if not families:
            raise HTTPException(404, detail="corpus has no family with two members")
        fam = families[int(self.rng.integers(len(families)))]
        uids = self._families[fam]
        src, tgt = (int(x) for x in self.rng.choice(uids, size=2, replace=False))

        if mode == "base":
            src_sliders = base_sliders(self.entry(src).program)
            tgt_lines = self.entry(tgt).program.lines()
            target_values = {
                s.slot: tgt_lines[s.line].params[int(s.slot.split(".P")[1])].value
                for s in src_sliders
            }
            target_geom = execute(self.entry(tgt).program)
        else:
            rp_src = self.refactored(src)
            rp_tgt = self.refactored(tgt)
            if [c.fn for c in rp_src.calls] == [c.fn for c in rp_tgt.calls]:
                args_tgt = rp_tgt
            else:
                args_tgt = self._resample_args(rp_src)
            target_values = {
                s.slot: args_tgt.calls[s.line].args[int(s.slot.split(".A")[1])].value
                for s in macro_sliders(rp_src, self.lib)
            }
            target_geom = execute(
                lines_to_program(expand_refactored(self.lib, args_tgt))
            )

        task = EditTask(
            task_id=len(self.tasks) + 1,
            program_id=src,
            mode=mode,
            target_values=target_values,
            target_geometry=geometry_json(target_geom),
        )
        self.tasks[task.task_id] = task
        self.log_event({"event": "task_created", "task_id": task.task_id,
                        "program_id": src, "mode": mode, "target_id": tgt})
        return task

    def _resample_args(self, rp: RefactoredProgram) -> RefactoredProgram:
        calls = []
        for call in rp.calls:
            macro = self.lib.get(call.fn)
            args = []
            for ai, pv in enumerate(call.args):
                if pv.kind != F:
                    args.append(pv)
                    continue
                if macro is not None:
                    lo, hi = macro.formals[ai].lo, macro.formals[ai].hi
                else:
                    lo, hi = FLOAT_DOMAINS.get(call.fn, {}).get(ai, (None, None))
                lo, hi = _slider_bounds(lo, hi, pv.value)
                delta = float(self.rng.uniform(-0.15, 0.15))
                args.append(fval(min(max(pv.value + delta, lo), hi)))
            calls.append(Call(call.fn, tuple(args)))
        return RefactoredProgram(tuple(calls), rp.order, rp.cont_error)

    def task(self, tid: int) -> EditTask:
        t = self.tasks.get(tid)
        if t is None:
            raise HTTPException(status_code=404, detail=f"unknown task {tid}")
        return t

    def task_target_geom(self, t: EditTask):
        from .executor import CuboidGeom, ShapeGeometry

        g = ShapeGeometry()
        g.cuboids = [
            CuboidGeom(row["id"], tuple(row["center"]), tuple(row["dims"]))
            for row in t.target_geometry
        ]
        return g


def build_app(dataset: Dataset, lib: Library, cfg: SearchConfig | None = None,
              log_path=None, seed: int = 0, static_dir=None) -> FastAPI:
    svc = EditorService(dataset, lib, cfg, log_path, seed)
    app = FastAPI(title="shape program editor")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    app.state.service = svc

    @app.get("/programs")
    def list_programs():
        return [
            {"id": e.uid, "family": e.family, "lines": e.program.n_lines,
             "blocks": len(e.program.blocks)}
            for e in svc.dataset.entries
        ]

    @app.get("/programs/{pid}")
    def get_program(pid: int):
        e = svc.entry(pid)
        rp = svc.refactored(pid)
        return {
            "id": e.uid,
            "family": e.family,
            "base": {
                "text": print_program(e.program),
                "sliders": _sliders_json(base_sliders(e.program)),
            },
            "macro": {
                "text": macro_text(rp, svc.lib),
                "sliders": _sliders_json(macro_sliders(rp, svc.lib)),
            },
        }

    @app.post("/execute")
    def run(req: ExecuteRequest):
        geom = svc.geometry(req.program_id, req.mode, req.overrides)
        return {"geometry": geometry_json(geom), "warnings": geom.warnings}

    @app.post("/distance")
    def distance(req: DistanceRequest):
        geom = svc.geometry(req.program_id, req.mode, req.overrides)
        target = execute(svc.entry(req.target_program_id).program)
        return {"distance": corner_distance(geom, target)}

    @app.post("/tasks")
    def create_task(req: TaskRequest):
        t = svc.new_task(req.mode)
        e = svc.entry(t.program_id)
        rp = svc.refactored(t.program_id)
        sliders = (
            base_sliders(e.program) if t.mode == "base" else macro_sliders(rp, svc.lib)
        )
        geom = svc.geometry(t.program_id, t.mode, {})
        d0 = corner_distance(geom, svc.task_target_geom(t))
        t.best_distance = d0
        return {
            "task_id": t.task_id,
            "program_id": t.program_id,
            "mode": t.mode,
            "text": print_program(e.program) if t.mode == "base" else macro_text(rp, svc.lib),
            "sliders": _sliders_json(sliders),
            "geometry": geometry_json(geom),
            "target_geometry": t.target_geometry,
            "initial_distance": d0,
        }

    @app.post("/tasks/{tid}/execute")
    def task_execute(tid: int, req: OverridesRequest):
        t = svc.task(tid)
        geom = svc.geometry(t.program_id, t.mode, req.overrides)
        d = corner_distance(geom, svc.task_target_geom(t))
        t.best_distance = min(t.best_distance, d)
        t.history.append({"overrides": dict(req.overrides), "distance": d})
        svc.log_event({"event": "execute", "task_id": tid,
                       "overrides": req.overrides, "distance": d})
        return {
            "geometry": geometry_json(geom),
            "distance": d,
            "best_distance": t.best_distance,
        }

    @app.post("/tasks/{tid}/events")
    def task_event(tid: int, req: EventRequest):
        svc.task(tid)
        svc.log_event({"event": "slider", "task_id": tid,
                       "slot": req.slot, "value": req.value})
        return {"ok": True}

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
