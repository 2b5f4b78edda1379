import asyncio
import csv
import io
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

import numpy as np
import pydantic
from pydantic import BaseModel

from core.config import Config
from core.formats import append_jsonl, format_keyvalue, write_json
from core.logging_config import add_run_log, init_worker, remove_run_log
from core.models import DepthMetrics, ExperimentSpec, FitConfig, LossConfig
from core.ui import UI
from modules.evaluation import component_abs_rel, depth_metrics, mask_iou, moving_region
from modules.optim import fit_scene, jsonl_logger, save_fit
from modules.synth import generate_scene, load_scene_config

logger = logging.getLogger("STRATA.Runner")


class Cell(BaseModel):
    """One fit of the experiment grid."""
    scene_path: str
    scene_name: str
    k: int
    ordering: bool
    auto_mask: bool
    seed: int
    steps: int
    pose_noise_rotation: float = 0.0
    pose_noise_translation: float = 0.0
    schedule: str = "direct"
    engine: str = "dense"

    @property
    def cell_id(self) -> str:
        return (f"{self.scene_name}__k{self.k}__ord-{'on' if self.ordering else 'off'}"
                f"__am-{'on' if self.auto_mask else 'off'}__s{self.seed}")

    def fit_config(self) -> FitConfig:
        loss = LossConfig(
            use_depth_ordering=self.ordering,
            mask_smooth_weight=0.0 if self.ordering else Config.ABLATION_MASK_SMOOTH_WEIGHT,
            auto_mask=self.auto_mask,
        )
        return FitConfig.with_schedule(self.schedule, K=self.k, steps=self.steps, loss=loss, seed=self.seed,
                                       engine=self.engine,
                                       pose_noise_rotation=self.pose_noise_rotation,
                                       pose_noise_translation=self.pose_noise_translation)


def plan_cells(spec: ExperimentSpec, seed_override: Optional[int] = None) -> List[Cell]:
    seeds = [seed_override] if seed_override is not None else spec.seeds
    cells = []
    for path in spec.scenes:
        name = load_scene_config(path).name
        for k in spec.k_values:
            for ordering in spec.ordering:
                for seed in seeds:
                    cells.append(Cell(scene_path=path, scene_name=name, k=k, ordering=ordering,
                                      auto_mask=spec.auto_mask, seed=seed, steps=spec.steps,
                                      pose_noise_rotation=spec.pose_noise_rotation,
                                      pose_noise_translation=spec.pose_noise_translation,
                                      schedule=spec.schedule, engine=spec.engine))
    return cells


def run_cell(cell: Cell, out_dir: str) -> Dict:
    """Fit and evaluate one cell; failures are reported, never raised."""
    cell_dir = os.path.join(out_dir, cell.cell_id)
    os.makedirs(cell_dir, exist_ok=True)
    started = time.perf_counter()
    try:
        scene = generate_scene(load_scene_config(cell.scene_path))
        loss_log = os.path.join(cell_dir, "loss.jsonl")
        if os.path.exists(loss_log):
            os.remove(loss_log)
        result = fit_scene(scene, cell.fit_config(), on_step=jsonl_logger(loss_log), run_dir=cell_dir)
        save_fit(result, cell_dir, color_seed=cell.seed)

        moving = moving_region(scene.gt_labels)
        report = {
            "cell": cell.cell_id,
            "status": "ok",
            "overall": depth_metrics(result.depth, scene.gt_depth).model_dump(by_alias=True),
            "moving": None,
            "mask_iou": None,
            "mask_channels": None,
            "components": {str(k): v for k, v in component_abs_rel(result.depth, scene.gt_depth,
                                                                     scene.gt_labels).items()},
            "final_loss": result.loss_history[-1].model_dump(),
        }
        if moving.any():
            report["moving"] = depth_metrics(result.depth, scene.gt_depth, moving).model_dump(by_alias=True)
            iou, channels = mask_iou(result.masks, moving)
            report["mask_iou"] = iou
            report["mask_channels"] = list(channels)
        write_json(os.path.join(cell_dir, "metrics.json"), report)
    except Exception as e:
        logger.error(f"Cell {cell.cell_id} failed: {e}")
        report = {"cell": cell.cell_id, "status": "failed", "error": f"{type(e).__name__}: {e}"}
        write_json(os.path.join(cell_dir, "metrics.json"), report)
    report["wall_time"] = time.perf_counter() - started
    return report


# ───────────────────── reports ─────────────────────

_CELL_COLUMNS = ["scene", "K", "ordering", "auto_mask", "seed", "status"]


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def _cell_rows(cells: List[Cell], reports: List[Dict]) -> List[Dict]:
    rows = []
    for cell, rep in zip(cells, reports):
        row = {
            "scene": cell.scene_name, "K": cell.k, "ordering": "on" if cell.ordering else "off",
            "auto_mask": "on" if cell.auto_mask else "off", "seed": cell.seed, "status": rep["status"],
        }
        overall = rep.get("overall") or {}
        for col in DepthMetrics.csv_header():
            row[col] = overall.get(col)
        row["moving Abs Rel"] = (rep.get("moving") or {}).get("Abs Rel")
        row["mask IoU"] = rep.get("mask_iou")
        rows.append(row)
    return rows


def _aggregate(rows: List[Dict]) -> List[Dict]:
    """Mean over scenes and seeds per (K, ordering, auto_mask), in first-seen order."""
    groups: Dict[tuple, List[Dict]] = {}
    for row in rows:
        groups.setdefault((row["K"], row["ordering"], row["auto_mask"]), []).append(row)
    out = []
    for (k, ordering, auto_mask), members in groups.items():
        ok = [r for r in members if r["status"] == "ok"]
        agg = {"K": k, "ordering": ordering, "auto_mask": auto_mask, "cells": len(members), "failed": len(members) - len(ok)}
        for col in DepthMetrics.csv_header() + ["moving Abs Rel", "mask IoU"]:
            vals = [r[col] for r in ok if r[col] is not None]
            agg[col] = float(np.mean(vals)) if vals else None
        out.append(agg)
    return out


def _csv_text(rows: List[Dict], columns: List[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) if isinstance(row[c], float) or row[c] is None else row[c] for c in columns])
    return buf.getvalue()


def write_reports(out_dir: str, cells: List[Cell], reports: List[Dict]):
    rows = _cell_rows(cells, reports)
    summary = _aggregate(rows)
    metric_cols = DepthMetrics.csv_header() + ["moving Abs Rel", "mask IoU"]
    with open(os.path.join(out_dir, "cells.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(_csv_text(rows, _CELL_COLUMNS + metric_cols))
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(_csv_text(summary, ["K", "ordering", "auto_mask", "cells", "failed"] + metric_cols))
    write_json(os.path.join(out_dir, "summary.json"), {"summary": summary, "cells": rows})


def _spec_keyvalue(spec: ExperimentSpec, workers: int) -> Dict[str, str]:
    return {
        "scenes": " ".join(spec.scenes),
        "k": " ".join(str(k) for k in spec.k_values),
        "steps": str(spec.steps),
        "ordering": " ".join("on" if o else "off" for o in spec.ordering),
        "auto_mask": "on" if spec.auto_mask else "off",
        "seeds": " ".join(str(s) for s in spec.seeds),
        "workers": str(workers),
        "pose_noise_rotation": repr(spec.pose_noise_rotation),
        "pose_noise_translation": repr(spec.pose_noise_translation),
        "schedule": spec.schedule,
        "engine": spec.engine,
    }


# ───────────────────── orchestration ─────────────────────

async def run_experiment(spec: ExperimentSpec, out_dir: str, workers: int = 1, dry_run: bool = False,
                         seed_override: Optional[int] = None) -> int:
    """Run every cell; returns 0 when all cells succeed, 1 otherwise."""
    cells = plan_cells(spec, seed_override)
    UI.info(f"Planned {len(cells)} cell(s) with {workers} worker(s)")
    if dry_run:
        for cell in cells:
            UI.info(f"  {cell.cell_id} ({cell.steps} steps)")
        return 0

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "spec.cfg"), "w", encoding="utf-8", newline="\n") as f:
        f.write(format_keyvalue(_spec_keyvalue(spec, workers), header="experiment spec (resolved)"))
    write_json(os.path.join(out_dir, "run.json"), {
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "pydantic": pydantic.VERSION},
        "seeds": sorted({c.seed for c in cells}),
        "cells": [c.cell_id for c in cells],
    })
    timings = os.path.join(out_dir, "timings.jsonl")
    if os.path.exists(timings):
        os.remove(timings)

    reports: List[Optional[Dict]] = [None] * len(cells)
    run_log = add_run_log(out_dir)
    try:
        await _run_cells(cells, out_dir, workers, reports, timings)
        for i, cell in enumerate(cells):
            if reports[i] is None:
                reports[i] = {"cell": cell.cell_id, "status": "failed", "error": "worker crashed", "wall_time": 0.0}
        write_reports(out_dir, cells, reports)
        failed = [r["cell"] for r in reports if r["status"] != "ok"]
        logger.info(f"{len(cells) - len(failed)}/{len(cells)} cell(s) ok")
    finally:
        remove_run_log(run_log)

    if failed:
        UI.error(f"{len(failed)} cell(s) failed: {', '.join(failed)}")
        return 1
    UI.info(f"All {len(cells)} cell(s) finished; reports in {out_dir}")
    return 0


async def _run_cells(cells: List[Cell], out_dir: str, workers: int, reports: List[Optional[Dict]],
                     timings: str):
    """Fill `reports` in place; workers log to the console at the parent's level."""
    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(workers)
    completed = 0
    start_time = time.time()
    level = logging.getLogger().getEffectiveLevel()

    with ProcessPoolExecutor(max_workers=workers, initializer=init_worker, initargs=(level,)) as pool:
        async def run_one(i: int, cell: Cell):
            nonlocal completed
            async with semaphore:
                report = await loop.run_in_executor(pool, run_cell, cell, out_dir)
                reports[i] = report
                append_jsonl(timings, {"cell": cell.cell_id, "wall_time": report["wall_time"]})

                completed += 1
                elapsed = time.time() - start_time
                rate = completed / elapsed if elapsed > 0 else 0
                remaining = (len(cells) - completed) / rate if rate > 0 else 0
                status = "ok" if report["status"] == "ok" else "FAILED"
                UI.info(f"[{completed}/{len(cells)}] ({100 * completed // len(cells)}%) {cell.cell_id} "
                        f"{status} | {rate * 60:.1f} cells/min | ETA: {remaining / 60:.1f}min")

        await asyncio.gather(*(run_one(i, c) for i, c in enumerate(cells)), return_exceptions=True)
