"""Experiment orchestration: single runs, loss comparisons, the ablation sweep
and safety/accuracy trade-off points."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, NamedTuple, Optional

import numpy as np

from .data import SCENARIOS, DEFAULT_FRACTIONS, Dataset, load_csv, stratified_split
from .hierarchy import preset_taxonomy, read_taxonomy
from .losses import LossConfig
from .metrics import TaxonomyReport, confusion_matrix, taxonomy_report
from .model import EpochRecord, TrainConfig, predict, train


class ExperimentError(ValueError):
    pass


class AblationConfig(NamedTuple):
    name: str
    alpha: float
    beta: float


_ABLATION_GRID = (
    AblationConfig("Light", 5.0, 5.0),
    AblationConfig("Balanced", 2.0, 10.0),
    AblationConfig("StructSafe", 5.0, 10.0),
    AblationConfig("Uniform", 10.0, 10.0),
    AblationConfig("Sparse", 1.0, 20.0),
    AblationConfig("Proposed", 5.0, 20.0),
    AblationConfig("HighStruct", 10.0, 20.0),
)

BASELINE_LOSSES = (
    ("CE", LossConfig("ce")),
    ("WCE", LossConfig("wce")),
    ("Focal", LossConfig("focal")),
    ("LS", LossConfig("label_smoothing")),
)


def ablation_grid() -> list[AblationConfig]:
    return list(_ABLATION_GRID)


def ablation_losses() -> list[tuple[str, LossConfig]]:
    """The four baselines followed by one RCL entry per grid configuration."""
    rcl = [
        (f"RCL-{cfg.name}", LossConfig("rcl", alpha=cfg.alpha, beta=cfg.beta))
        for cfg in _ABLATION_GRID
    ]
    return list(BASELINE_LOSSES) + rcl


@dataclass(frozen=True)
class DatasetSource:
    scenario: Optional[str] = None
    csv: Optional[str] = None
    taxonomy: Optional[str] = None
    preset: Optional[str] = None
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS

    def __post_init__(self):
        if (self.scenario is None) == (self.csv is None):
            raise ExperimentError("dataset needs exactly one of 'scenario' or 'csv'")
        if self.scenario is not None and self.scenario not in SCENARIOS:
            raise ExperimentError(
                f"unknown scenario {self.scenario!r}; available: {', '.join(SCENARIOS)}"
            )
        if self.csv is not None and (self.taxonomy is None) == (self.preset is None):
            raise ExperimentError("csv datasets need exactly one of 'taxonomy' or 'preset'")
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))

    def build(self, seed: int) -> Dataset:
        if self.scenario is not None:
            return SCENARIOS[self.scenario](seed)
        taxonomy = (
            preset_taxonomy(self.preset) if self.preset else read_taxonomy(self.taxonomy)
        )
        return stratified_split(load_csv(self.csv, taxonomy), self.fractions, seed)

    def to_dict(self) -> dict[str, Any]:
        if self.scenario is not None:
            return {"scenario": self.scenario}
        out: dict[str, Any] = {"csv": self.csv}
        if self.taxonomy is not None:
            out["taxonomy"] = self.taxonomy
        else:
            out["preset"] = self.preset
        out["fractions"] = list(self.fractions)
        return out


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: DatasetSource
    train: dict[str, Any]
    losses: list[tuple[str, LossConfig]]
    seeds: list[int]
    architecture: str = "linear"
    hidden_dim: Optional[int] = None
    baseline: Optional[str] = None

    def __post_init__(self):
        if not self.losses:
            raise ExperimentError("experiment needs at least one loss")
        if not self.seeds:
            raise ExperimentError("experiment needs at least one seed")
        names = [name for name, _ in self.losses]
        if len(set(names)) != len(names):
            raise ExperimentError("loss names must be unique")
        if self.baseline is not None and self.baseline not in names:
            raise ExperimentError(f"baseline {self.baseline!r} is not one of the losses")
        if "epochs" not in self.train:
            raise ExperimentError("train section needs 'epochs'")
        unknown = set(self.train) - {
            "epochs", "learning_rate", "batch_size", "weight_decay", "schedule"
        }
        if unknown:
            raise ExperimentError(f"unknown train fields: {', '.join(sorted(unknown))}")
        # Validate the template once, up front.
        self.train_config(self.losses[0][1], self.seeds[0])

    @property
    def loss_names(self) -> list[str]:
        return [name for name, _ in self.losses]

    @property
    def baseline_name(self) -> str:
        return self.baseline if self.baseline is not None else self.losses[0][0]

    def loss_config(self, name: str) -> LossConfig:
        for loss_name, cfg in self.losses:
            if loss_name == name:
                return cfg
        raise ExperimentError(
            f"unknown loss {name!r}; available: {', '.join(self.loss_names)}"
        )

    def train_config(self, loss: LossConfig, seed: int) -> TrainConfig:
        return TrainConfig(
            loss=loss,
            seed=seed,
            architecture=self.architecture,
            hidden_dim=self.hidden_dim,
            **self.train,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset.to_dict(),
            "model": {"architecture": self.architecture, "hidden_dim": self.hidden_dim},
            "train": dict(self.train),
            "losses": [{"name": name, **cfg.to_dict()} for name, cfg in self.losses],
            "seeds": list(self.seeds),
            "baseline": self.baseline_name,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Optional[Path] = None) -> "ExperimentSpec":
        try:
            ds = dict(data["dataset"])
            for key in ("csv", "taxonomy"):
                if base_dir is not None and ds.get(key):
                    ds[key] = str((base_dir / ds[key]).resolve())
            model = data.get("model", {})
            losses = []
            for entry in data["losses"]:
                entry = dict(entry)
                name = entry.pop("name", None) or entry["kind"]
                losses.append((name, LossConfig.from_dict(entry)))
            return cls(
                dataset=DatasetSource(**ds),
                train=dict(data["train"]),
                losses=losses,
                seeds=[int(s) for s in data["seeds"]],
                architecture=model.get("architecture", "linear"),
                hidden_dim=model.get("hidden_dim"),
                baseline=data.get("baseline"),
            )
        except KeyError as exc:
            raise ExperimentError(f"experiment spec is missing field {exc}") from None
        except TypeError as exc:
            raise ExperimentError(f"malformed experiment spec: {exc}") from None


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return ExperimentSpec.from_dict(data, base_dir=path.parent)


def default_spec(seeds=range(10), epochs: int = 80) -> ExperimentSpec:
    """CE against RCL-Proposed on the overlap fixture with a linear model."""
    return ExperimentSpec(
        dataset=DatasetSource(scenario="default-overlap"),
        train={"epochs": epochs, "learning_rate": 1e-2},
        losses=[("CE", LossConfig("ce")), ("RCL-Proposed", LossConfig("rcl", alpha=5, beta=20))],
        seeds=list(seeds),
        baseline="CE",
    )


@dataclass
class RunResult:
    loss: str
    seed: int
    report: TaxonomyReport
    final_epoch: EpochRecord
    wall_seconds: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict[str, Any]:
        # wall-clock time is left out so results files are reproducible
        return {
            "loss": self.loss,
            "seed": self.seed,
            "report": self.report.to_dict(),
            "final_epoch": {
                "epoch": self.final_epoch.epoch,
                "train_loss": self.final_epoch.train_loss,
                "val_accuracy": self.final_epoch.val_accuracy,
                "val_cer": self.final_epoch.val_cer,
                "learning_rate": self.final_epoch.learning_rate,
            },
        }


def run_single(spec: ExperimentSpec, loss_name: str, seed: int) -> RunResult:
    loss = spec.loss_config(loss_name)
    start = time.perf_counter()
    try:
        dataset = spec.dataset.build(seed)
        model, history = train(dataset, spec.train_config(loss, seed))
    except Exception as exc:
        raise ExperimentError(f"run {loss_name!r} seed {seed}: {exc}") from exc
    x_test, y_test = dataset.subset("test")
    cm = confusion_matrix(y_test, predict(model, x_test), dataset.taxonomy.k)
    return RunResult(
        loss=loss_name,
        seed=seed,
        report=taxonomy_report(cm, dataset.taxonomy),
        final_epoch=history.records[-1],
        wall_seconds=time.perf_counter() - start,
    )


def _run_job(args) -> RunResult:
    spec, name, seed = args
    return run_single(spec, name, seed)


def run_all(spec: ExperimentSpec, jobs: int = 1) -> list[RunResult]:
    """Every (loss, seed) run, ordered by loss name then seed."""
    tasks = [(spec, name, seed) for name in spec.loss_names for seed in spec.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, tasks))
    else:
        results = [_run_job(t) for t in tasks]
    return sorted(results, key=lambda r: (r.loss, r.seed))


SUMMARY_METRICS = (
    "cer",
    "f1_macro",
    "accuracy",
    "type1_count",
    "type2_count",
    "visual_ambiguity_count",
)


def _quartiles(values: list[float]) -> Optional[dict[str, float]]:
    if not values:
        return None
    q1, median, q3 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75])
    return {
        "median": float(median),
        "q1": float(q1),
        "q3": float(q3),
        "iqr": float(q3 - q1),
    }


def summarize(runs: list[RunResult]) -> dict[str, dict[str, Any]]:
    by_loss: dict[str, list[RunResult]] = {}
    for r in runs:
        by_loss.setdefault(r.loss, []).append(r)
    summary = {}
    for name in sorted(by_loss):
        group = by_loss[name]
        entry: dict[str, Any] = {"n_runs": len(group)}
        for metric in SUMMARY_METRICS:
            values = [getattr(r.report, metric) for r in group]
            entry[metric] = _quartiles([float(v) for v in values if v is not None])
        summary[name] = entry
    return summary


def relative_improvement(baseline_cer: float, new_cer: float) -> tuple[float, Optional[float]]:
    """Absolute change in CER points and relative change in percent.

    The relative change is undefined (None) when the baseline CER is zero.
    """
    absolute = new_cer - baseline_cer
    if baseline_cer == 0:
        return absolute, None
    return absolute, 100.0 * absolute / baseline_cer


def format_improvement(baseline_cer: float, new_cer: float) -> str:
    """Rendered as in a results table: ``-9.88 (-92.4%)``; ``(-)`` when the
    baseline is already zero. Both numbers are computed from the inputs as
    given, so pass the table's rounded CERs to reproduce a printed cell."""
    absolute, rel = relative_improvement(baseline_cer, new_cer)
    abs_txt = f"{round(absolute, 2) + 0.0:.2f}"
    if rel is None:
        return f"{abs_txt} (-)"
    return f"{abs_txt} ({round(rel, 1) + 0.0:.1f}%)"


def improvements(summary: dict[str, dict[str, Any]], baseline: str) -> dict[str, Any]:
    base = summary[baseline]["cer"]
    out = {}
    for name, entry in summary.items():
        if name == baseline or entry["cer"] is None or base is None:
            continue
        absolute, rel = relative_improvement(base["median"], entry["cer"]["median"])
        out[name] = {
            "cer_abs": absolute,
            "cer_rel_percent": rel,
            "formatted": format_improvement(base["median"], entry["cer"]["median"]),
        }
    return out


def run_comparison(spec: ExperimentSpec, jobs: int = 1) -> dict[str, Any]:
    runs = run_all(spec, jobs)
    summary = summarize(runs)
    return {
        "spec": spec.to_dict(),
        "baseline": spec.baseline_name,
        "runs": [r.to_dict() for r in runs],
        "summary": summary,
        "improvements": improvements(summary, spec.baseline_name),
    }


def ablation_spec(spec: ExperimentSpec) -> ExperimentSpec:
    return replace(spec, losses=ablation_losses(), baseline="CE")


def _cer_key(run: dict[str, Any]):
    cer_value = run["report"]["cer"]
    return (cer_value is None, cer_value if cer_value is not None else 0.0, run["loss"], run["seed"])


def run_ablation(spec: ExperimentSpec, jobs: int = 1) -> dict[str, Any]:
    """Baselines plus every grid configuration under the spec's seeds and
    training template; runs are listed by ascending test CER."""
    result = run_comparison(ablation_spec(spec), jobs)
    result["runs"] = sorted(result["runs"], key=_cer_key)
    return result


TABLE_COLUMNS = (
    "loss",
    "seed",
    "cer_percent",
    "f1_macro",
    "accuracy",
    "correct",
    "visual_ambiguity",
    "type1",
    "type2",
)


def _fmt(value: Optional[float], digits: int) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def render_table(results: dict[str, Any]) -> str:
    """Per-run CSV rendered from the results document; CER with two decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for run in results["runs"]:
        rep = run["report"]
        writer.writerow(
            [
                run["loss"],
                run["seed"],
                _fmt(rep["cer"], 2),
                _fmt(rep["f1_macro"], 4),
                _fmt(rep["accuracy"], 4),
                rep["correct_count"],
                rep["visual_ambiguity_count"],
                rep["type1_count"],
                rep["type2_count"],
            ]
        )
    return buf.getvalue()


TRADEOFF_HEADER_COMMENT = (
    "# median over seeds per loss; lower cer_percent is safer, higher f1_macro "
    "is better; low CER with high F1 is the target region"
)


def tradeoff_points(results: dict[str, Any]) -> list[tuple[str, float, Optional[float]]]:
    summary = results.get("summary") or summarize_documents(results.get("runs", []))
    if not summary:
        raise ExperimentError("no results to build trade-off points from")
    points = []
    for name, entry in summary.items():
        cer_entry = entry["cer"]
        points.append(
            (
                name,
                entry["f1_macro"]["median"],
                None if cer_entry is None else cer_entry["median"],
            )
        )
    return points


def summarize_documents(runs: list[dict[str, Any]]) -> dict[str, dict[str, Any]]:
    return summarize(
        [
            RunResult(
                loss=r["loss"],
                seed=r["seed"],
                report=TaxonomyReport.from_dict(r["report"]),
                final_epoch=EpochRecord(**r["final_epoch"]),
            )
            for r in runs
        ]
    )


def emit_tradeoff(results: dict[str, Any]) -> str:
    buf = io.StringIO()
    buf.write(TRADEOFF_HEADER_COMMENT + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "f1_macro", "cer_percent"])
    for name, f1, cer_value in tradeoff_points(results):
        writer.writerow([name, repr(f1), "" if cer_value is None else repr(cer_value)])
    return buf.getvalue()


def dump_results(results: dict[str, Any]) -> str:
    return json.dumps(results, indent=2, allow_nan=False) + "\n"
