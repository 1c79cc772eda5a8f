"""Run orchestration: dataset/split loading, single training runs, manifests and group comparison."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ansatz import AnsatzKind
from .metrics import MetricsReport, aggregate, evaluate, table_rows, wilcoxon_one_sided
from .rng import SPLIT, stream
from .specgen import Spectrum, _stratified_take, load_jsonl, load_splits, splits_path, stratified_split
from .trainer import RunRecord, SpsaConfig, TrainConfig, train, write_run

FORMAT_VERSION = 1
OUTPUT_ROOT_ENV = "QUANVNN_OUTPUT_ROOT"
SPLIT_NAMES = ("train", "val", "test", "all")


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_dataset(path) -> tuple[list[Spectrum], dict]:
    """Spectra plus their split indices.

    The sidecar written by ``generate`` is used when present; otherwise a
    default 80/10/10 split with seed 0 is derived on the fly.
    """
    spectra = load_jsonl(path)
    side = splits_path(path)
    if side.exists():
        doc = load_splits(side)
        splits = {k: np.asarray(doc[k], dtype=int) for k in ("train", "val", "test")}
    else:
        train_idx, val_idx, test_idx = stratified_split(spectra)
        splits = {"train": train_idx, "val": val_idx, "test": test_idx}
    n = len(spectra)
    for name, idx in splits.items():
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError(f"split {name!r} indexes past the end of the dataset")
    return spectra, splits


def select(spectra: Sequence[Spectrum], splits: dict, split: str) -> list[Spectrum]:
    if split not in SPLIT_NAMES:
        raise ValueError(f"unknown split {split!r}")
    if split == "all":
        return list(spectra)
    return [spectra[i] for i in splits[split]]


def run_splits(spectra: Sequence[Spectrum], splits: dict, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Train and validation indices for one run.

    The stored test indices are kept; everything else is re-split with the
    run seed into the stored train/validation sizes, stratified the same
    way as the original split.
    """
    n_val = len(splits["val"])
    if len(splits["train"]) == 0 or n_val == 0:
        raise ValueError("dataset has an empty train or validation split")
    rest = np.setdiff1d(np.arange(len(spectra)), splits["test"])
    val, train = _stratified_take(spectra, rest, n_val, stream(seed, SPLIT, 1), min_size=2)
    return train, val


def subsample(spectra: Sequence[Spectrum], indices, limit: int | None, seed: int, key: int) -> np.ndarray:
    """Stratified subset of ``indices`` of size ``limit``, drawn with the run seed."""
    indices = np.asarray(indices, dtype=int)
    if limit is None or limit >= indices.size:
        return indices
    if limit < 1:
        raise ValueError("limit must be positive")
    taken, _ = _stratified_take(spectra, indices, limit, stream(seed, SPLIT, key), min_size=2)
    return taken


def train_run(dataset_path, config: TrainConfig, out, limit: int | None = None,
              val_limit: int | None = None, progress=None) -> tuple[Path, RunRecord]:
    """Train on the run's train split (optionally subsampled) and write the run directory."""
    spectra, splits = load_dataset(dataset_path)
    tr, va = run_splits(spectra, splits, config.seed)
    tr = subsample(spectra, tr, limit, config.seed, 2)
    va = subsample(spectra, va, val_limit, config.seed, 3)
    model = config.build_model()
    record = train(model, [spectra[i] for i in tr], [spectra[i] for i in va], config, progress=progress)
    extra = {"dataset_sha256": file_digest(dataset_path), "n_train": int(tr.size), "n_val": int(va.size)}
    return write_run(out, model, record, extra), record


# ------------------------------------------------------------------ manifests


@dataclass
class RunEntry:
    frontend: str = "quantum"
    ansatz: str = "se"
    seed: int = 0
    noisy: bool = False
    static: bool = False

    @property
    def group(self) -> str:
        name = "classical" if self.frontend == "classical" else f"quantum-{self.ansatz}"
        if self.static:
            name += "-static"
        if self.noisy:
            name += "-noisy"
        return name

    @property
    def run_id(self) -> str:
        return f"{self.group}-s{self.seed}"


@dataclass
class ExperimentManifest:
    runs: list[RunEntry]
    dataset: str
    out: str
    train: dict = field(default_factory=dict)
    limit: int | None = None
    val_limit: int | None = None
    split: str = "test"
    difficulty: str = "all"
    baseline: str = "classical"

    def __post_init__(self):
        ids = [r.run_id for r in self.runs]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValueError(f"duplicate run identifiers: {', '.join(dupes)}")

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        doc.pop("format_version", None)
        doc["runs"] = [RunEntry(**r) for r in doc.get("runs", [])]
        # relative paths are taken relative to the manifest file
        for key in ("dataset", "out"):
            if key in doc and not Path(doc[key]).is_absolute():
                doc[key] = str(path.parent / doc[key])
        doc.setdefault("out", str(output_root() / "experiment"))
        return cls(**doc)

    def config_for(self, run: RunEntry) -> TrainConfig:
        opts = dict(self.train)
        spsa = SpsaConfig(**opts.pop("spsa", {}))
        ansatz = AnsatzKind(run.ansatz, int(opts.pop("ansatz_seed", 0)), int(opts.pop("gate_count", 30)))
        return TrainConfig(seed=run.seed, frontend=run.frontend, ansatz=ansatz, learnable_frontend=not run.static,
                           noisy=run.noisy, spsa=spsa, **opts)

    def rundir(self, run: RunEntry) -> Path:
        return Path(self.out) / run.run_id


def _run_entry(manifest: ExperimentManifest, run: RunEntry) -> str:
    rundir, _ = train_run(manifest.dataset, manifest.config_for(run), manifest.rundir(run),
                          manifest.limit, manifest.val_limit)
    return str(rundir)


def run_manifest(manifest: ExperimentManifest, jobs: int = 1, reuse: bool = False) -> list[Path]:
    """Train every run in the manifest; ``jobs > 1`` trains independent runs in parallel."""
    todo = [r for r in manifest.runs if not (reuse and (manifest.rundir(r) / "checkpoint.json").exists())]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_run_entry, [manifest] * len(todo), todo))
    else:
        for r in todo:
            _run_entry(manifest, r)
    return [manifest.rundir(r) for r in manifest.runs]


def compare_groups(per_seed: dict[str, dict[int, MetricsReport]], baseline: str = "classical") -> dict:
    """Aggregate each group and test every other group against ``baseline``.

    Two one-sided Wilcoxon tests per group, paired by seed: F1 higher than
    the baseline, and MAE lower than the baseline.
    """
    if len(per_seed) < 2:
        raise ValueError("comparison needs at least two groups")
    if baseline not in per_seed:
        raise ValueError(f"baseline group {baseline!r} missing")
    base = per_seed[baseline]
    groups = {name: aggregate([reports[s] for s in sorted(reports)]) for name, reports in sorted(per_seed.items())}
    tests = {}
    for name, reports in sorted(per_seed.items()):
        if name == baseline:
            continue
        if set(reports) != set(base):
            raise ValueError(f"group {name!r} seeds {sorted(reports)} do not pair with baseline seeds {sorted(base)}")
        seeds = sorted(reports)
        f1 = [reports[s].f1 for s in seeds]
        f1_base = [base[s].f1 for s in seeds]
        mae = [reports[s].mae for s in seeds]
        mae_base = [base[s].mae for s in seeds]
        tests[name] = {"seeds": seeds, "f1_greater_p": wilcoxon_one_sided(f1, f1_base),
                       "mae_lower_p": wilcoxon_one_sided(mae_base, mae)}
    return {"format_version": FORMAT_VERSION, "baseline": baseline,
            "groups": {k: v.to_dict() for k, v in groups.items()}, "tests": tests}


def compare_manifest(manifest: ExperimentManifest, noisy: bool = False) -> dict:
    spectra, splits = load_dataset(manifest.dataset)
    subset = select(spectra, splits, manifest.split)
    per_seed: dict[str, dict[int, MetricsReport]] = {}
    for r in manifest.runs:
        ckpt = manifest.rundir(r) / "checkpoint.json"
        if not ckpt.exists():
            raise FileNotFoundError(f"missing checkpoint {ckpt}")
        per_seed.setdefault(r.group, {})[r.seed] = evaluate(ckpt, subset, manifest.difficulty, noisy)
    report = compare_groups(per_seed, manifest.baseline)
    report.update(split=manifest.split, difficulty=manifest.difficulty)
    return report


def write_table(path, named: dict[str, MetricsReport]) -> None:
    rows = table_rows(named)
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def manifest_to_dict(manifest: ExperimentManifest) -> dict:
    d = asdict(manifest)
    d["format_version"] = FORMAT_VERSION
    return d

