"""The annotation loop: train, evaluate, select, annotate; then a final model.

Results for one run live in ``<root>/<dataset>/<strategy>/<mode>/<seed>/``:

``config.snapshot``  canonical TOML of the resolved config
``rounds.jsonl``     one round record per line (deterministic fields only)
``timings.jsonl``    wall-clock seconds per round and for the final model
``final.json``       metrics of the final model
``model.ckpt``       latest loop model
``state.json``       label state and progress marker, written last each round
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import ConfigError, ExperimentConfig, loads_config
from .core import EmbalError, LabelState, apply_annotations, derive_seed, init_label_state, stream
from .metrics import confusion, balanced_accuracy, macro_f1, accuracy, pool_accuracy
from .models import CorruptCheckpoint, load_checkpoint, save_checkpoint
from .semisl import train_semi_supervised
from .strategies import select, select_random

log = logging.getLogger(__name__)

TIMING_FIELDS = ("train_seconds", "select_seconds")


class ConfigMismatch(EmbalError):
    pass


class IncompatibleRuns(EmbalError):
    pass


class NoRuns(EmbalError):
    pass


@dataclass
class RoundRecord:
    round: int
    budget: int
    test_acc: float
    balanced_acc: float
    macro_f1: float
    pool_acc: float
    train_seconds: float
    select_seconds: float
    strategy: str
    tier: str

    def deterministic(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in TIMING_FIELDS}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rounds: list[RoundRecord]
    final: dict | None
    status: str
    run_dir: Path | None = None


def load_dataset(cfg: ExperimentConfig) -> data_mod.EmbeddingStore:
    dc = cfg.data
    if dc.path is not None:
        path = Path(dc.path)
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        store = data_mod.read_store(path)
        if (store.split != data_mod.POOL).any():
            return store
    else:
        s = dc.synthetic
        store = data_mod.generate_synthetic(s.k, s.n, s.d, s.v, s.separation, s.noise, s.seed, name=cfg.dataset_name)
    return data_mod.split_dataset(store, dc.val_fraction, dc.test_fraction, dc.split_seed)


def evaluate(model, store, pool_rows, state: LabelState) -> dict:
    test = store.test_indices
    C = confusion(store.labels[test], model.predict(store.view(0, test)), store.k)
    pool_pred = model.predict(store.view(0, pool_rows))
    return {
        "test_acc": accuracy(C),
        "balanced_acc": balanced_accuracy(C),
        "macro_f1": macro_f1(C),
        "pool_acc": pool_accuracy(store.labels[pool_rows], state, pool_pred),
    }


def _train(cfg: ExperimentConfig, store, state, pool_rows, tier, method, *seed_names):
    tcfg = cfg.train[tier]
    tcfg = type(tcfg)(**{**asdict(tcfg), "seed": derive_seed(cfg.seed, *seed_names)})
    t0 = time.perf_counter()
    model = train_semi_supervised(store, state, method, tier, tcfg, cfg.semi, pool_rows=pool_rows)
    return model, time.perf_counter() - t0


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _append_line(path: Path, obj) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(obj, sort_keys=True) + "\n")


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _truncate_jsonl(path: Path, keep) -> None:
    rows = [r for r in _read_jsonl(path) if keep(r)]
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def run_experiment(cfg: ExperimentConfig, out_root=None, stop_after: int | None = None) -> ExperimentResult:
    """Run the full loop for ``cfg`` and persist every round.

    ``stop_after`` ends the run after that many completed rounds, leaving a
    resumable directory (used to exercise resume).
    """
    run_dir = cfg.run_dir(out_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    for name in ("rounds.jsonl", "timings.jsonl", "final.json", "model.ckpt", "state.json"):
        (run_dir / name).unlink(missing_ok=True)
    (run_dir / "config.snapshot").write_text(cfg.snapshot())
    store = load_dataset(cfg)
    pool_rows = store.pool_indices
    state = init_label_state(pool_rows.size, cfg.budget_schedule)
    first = select_random(state, state.next_batch_size, stream(cfg.seed, "select", 0))
    state = apply_annotations(state, first.indices)
    return _loop(cfg, store, pool_rows, state, 0, [], run_dir, stop_after)


def _loop(cfg, store, pool_rows, state, start, records, run_dir, stop_after) -> ExperimentResult:
    X_pool = store.view(0, pool_rows)
    n_rounds = len(cfg.budget_schedule)
    tier = cfg.loop_tier
    snapshot_sha = hashlib.sha256(cfg.snapshot().encode()).hexdigest()
    for r in range(start, n_rounds):
        model, t_train = _train(cfg, store, state, pool_rows, tier, cfg.semi_sl, "train", r)
        metrics = evaluate(model, store, pool_rows, state)
        t_sel = 0.0
        if r + 1 < n_rounds:
            t0 = time.perf_counter()
            res = select(
                cfg.strategy, model, X_pool, state, state.next_batch_size,
                stream(cfg.seed, "select", r + 1), cfg.strategy_params,
            )
            t_sel = time.perf_counter() - t0
            state = apply_annotations(state, res.indices)
        rec = RoundRecord(
            round=r, budget=int(sum(cfg.budget_schedule[: r + 1])), train_seconds=t_train,
            select_seconds=t_sel, strategy=cfg.strategy, tier=tier, **metrics,
        )
        records.append(rec)
        _append_line(run_dir / "rounds.jsonl", rec.deterministic())
        _append_line(run_dir / "timings.jsonl", {"round": r, "train_seconds": t_train, "select_seconds": t_sel})
        save_checkpoint(model, run_dir / "model.ckpt")
        _write_json(run_dir / "state.json", {
            "completed_rounds": r + 1,
            "status": "running",
            "snapshot_sha256": snapshot_sha,
            "checkpoint_sha256": _sha(run_dir / "model.ckpt"),
            "label_state": state.to_dict(),
        })
        log.info("round %d budget %d test_acc %.4f pool_acc %.4f", r, rec.budget, rec.test_acc, rec.pool_acc)
        if stop_after is not None and r + 1 >= stop_after and r + 1 < n_rounds:
            return ExperimentResult(cfg, records, None, "interrupted", run_dir)

    final = _final(cfg, store, pool_rows, state, run_dir)
    st = json.loads((run_dir / "state.json").read_text())
    st["status"] = "complete"
    _write_json(run_dir / "state.json", st)
    return ExperimentResult(cfg, records, final, "complete", run_dir)


def _final(cfg, store, pool_rows, state, run_dir) -> dict:
    model, t_train = _train(cfg, store, state, pool_rows, cfg.final_tier, cfg.final_semi_sl, "final")
    final = {
        "tier": cfg.final_tier,
        "semi_sl": cfg.final_semi_sl,
        "budget": int(sum(cfg.budget_schedule)),
        **evaluate(model, store, pool_rows, state),
    }
    _write_json(run_dir / "final.json", final)
    _append_line(run_dir / "timings.jsonl", {"round": "final", "train_seconds": t_train})
    return final


def _load_records(run_dir: Path) -> list[RoundRecord]:
    timings = {t["round"]: t for t in _read_jsonl(run_dir / "timings.jsonl")}
    out = []
    for row in _read_jsonl(run_dir / "rounds.jsonl"):
        t = timings.get(row["round"], {})
        out.append(RoundRecord(**row, **{k: t.get(k, math.nan) for k in TIMING_FIELDS}))
    return out


def resume_experiment(run_dir, cfg: ExperimentConfig | None = None, stop_after: int | None = None) -> ExperimentResult:
    """Continue an interrupted run from its last completed round.

    ``cfg``, if given, must match the stored snapshot; the snapshot itself
    must be unmodified since the run started.
    """
    run_dir = Path(run_dir)
    snap_path = run_dir / "config.snapshot"
    state_path = run_dir / "state.json"
    if not snap_path.exists():
        raise FileNotFoundError(f"{run_dir}: no config.snapshot")
    snap = snap_path.read_text()
    try:
        stored = loads_config(snap)
    except ConfigError as e:
        raise ConfigMismatch(f"{snap_path}: {e}") from e
    if cfg is not None:
        if cfg.snapshot() != snap:
            raise ConfigMismatch(f"{run_dir}: supplied config differs from the stored snapshot")
        stored = cfg
    if not state_path.exists():
        # nothing completed yet: start over in place
        return _restart(stored, run_dir, stop_after)
    st = json.loads(state_path.read_text())
    if st["snapshot_sha256"] != hashlib.sha256(snap.encode()).hexdigest():
        raise ConfigMismatch(f"{snap_path} was modified after the run started")
    ckpt = run_dir / "model.ckpt"
    if not ckpt.exists() or _sha(ckpt) != st["checkpoint_sha256"]:
        raise CorruptCheckpoint(f"{ckpt}: missing or does not match state.json")
    load_checkpoint(ckpt)

    done = int(st["completed_rounds"])
    if st.get("status") == "complete" and (run_dir / "final.json").exists():
        final = json.loads((run_dir / "final.json").read_text())
        return ExperimentResult(stored, _load_records(run_dir), final, "complete", run_dir)
    _truncate_jsonl(run_dir / "rounds.jsonl", lambda r: r["round"] < done)
    _truncate_jsonl(run_dir / "timings.jsonl", lambda r: r["round"] != "final" and r["round"] < done)
    (run_dir / "final.json").unlink(missing_ok=True)
    state = LabelState.from_dict(st["label_state"])
    store = load_dataset(stored)
    pool_rows = store.pool_indices
    if state.n_pool != pool_rows.size:
        raise ConfigMismatch(f"{run_dir}: stored label state does not fit the dataset")
    records = _load_records(run_dir)
    return _loop(stored, store, pool_rows, state, done, records, run_dir, stop_after)


def _restart(cfg, run_dir, stop_after):
    for name in ("rounds.jsonl", "timings.jsonl", "final.json", "model.ckpt"):
        (run_dir / name).unlink(missing_ok=True)
    store = load_dataset(cfg)
    pool_rows = store.pool_indices
    state = init_label_state(pool_rows.size, cfg.budget_schedule)
    first = select_random(state, state.next_batch_size, stream(cfg.seed, "select", 0))
    state = apply_annotations(state, first.indices)
    return _loop(cfg, store, pool_rows, state, 0, [], run_dir, stop_after)


# ---------------------------------------------------------------------------
# comparison across runs

CSV_COLUMNS = (
    "round", "budget", "strategy", "mean_test_acc", "stderr_test_acc",
    "mean_pool_acc", "stderr_pool_acc", "mean_balanced_acc", "mean_macro_f1",
)


def find_runs(root) -> list[Path]:
    root = Path(root)
    return sorted(p.parent for p in root.rglob("rounds.jsonl") if (p.parent / "config.snapshot").exists())


def mean_stderr(values) -> tuple[float, float | None]:
    """Mean and standard error (sample std / sqrt(n)); stderr is None for n < 2."""
    a = np.asarray(values, dtype=np.float64)
    if a.size < 2:
        return float(a.mean()), None
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))


def compare_runs(run_dirs) -> list[dict]:
    """Per-round mean and standard error across seeds, one row per (round, strategy)."""
    runs = []
    for d in run_dirs:
        d = Path(d)
        cfg = loads_config((d / "config.snapshot").read_text())
        runs.append((cfg, _read_jsonl(d / "rounds.jsonl")))
    if not runs:
        raise NoRuns("no completed runs to compare")
    ref = runs[0][0]
    for cfg, _ in runs[1:]:
        if cfg.budget_schedule != ref.budget_schedule:
            raise IncompatibleRuns(
                f"budget schedules differ: {list(ref.budget_schedule)} vs {list(cfg.budget_schedule)}"
            )
        if cfg.to_dict()["data"] != ref.to_dict()["data"]:
            raise IncompatibleRuns(f"datasets differ: {ref.dataset_name} vs {cfg.dataset_name}")
    modes = {cfg.mode for cfg, _ in runs}
    groups: dict[str, dict[int, list[dict]]] = {}
    for cfg, rows in runs:
        label = cfg.strategy if len(modes) == 1 else f"{cfg.strategy}:{cfg.mode}"
        for row in rows:
            groups.setdefault(label, {}).setdefault(row["round"], []).append(row)
    out = []
    for label in sorted(groups):
        for r in sorted(groups[label]):
            rows = groups[label][r]
            m_test, se_test = mean_stderr([x["test_acc"] for x in rows])
            m_pool, se_pool = mean_stderr([x["pool_acc"] for x in rows])
            if se_test is None:
                log.warning("%s round %d: single run, standard error undefined", label, r)
            out.append({
                "round": r,
                "budget": rows[0]["budget"],
                "strategy": label,
                "mean_test_acc": m_test,
                "stderr_test_acc": se_test,
                "mean_pool_acc": m_pool,
                "stderr_pool_acc": se_pool,
                "mean_balanced_acc": float(np.mean([x["balanced_acc"] for x in rows])),
                "mean_macro_f1": float(np.mean([x["macro_f1"] for x in rows])),
                "n_runs": len(rows),
            })
    return out


def write_comparison_csv(rows: list[dict], path) -> None:
    """Write ``rows`` as CSV to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_csv(rows, path)
        return
    with open(path, "w", newline="") as f:
        _write_csv(rows, f)


def _write_csv(rows, f) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(["" if row[c] is None else (format(row[c], ".10g") if isinstance(row[c], float) else row[c])
                    for c in CSV_COLUMNS])
