import csv
import io
import json

import numpy as np
import pytest

from riskcal.data import default_overlap_scenario
from riskcal.experiment import (
    BASELINE_LOSSES,
    DatasetSource,
    ExperimentError,
    ExperimentSpec,
    ablation_grid,
    ablation_losses,
    default_spec,
    dump_results,
    emit_tradeoff,
    format_improvement,
    relative_improvement,
    render_table,
    run_ablation,
    run_all,
    run_comparison,
    run_single,
    tradeoff_points,
)
from riskcal.hierarchy import build_severity_matrix
from riskcal.losses import LossConfig


def small_spec(seeds=(0, 1), epochs=10, losses=None):
    return ExperimentSpec(
        dataset=DatasetSource(scenario="default-overlap"),
        train={"epochs": epochs, "learning_rate": 1e-2},
        losses=losses or [("CE", LossConfig("ce")), ("RCL", LossConfig("rcl", alpha=5, beta=20))],
        seeds=list(seeds),
        baseline="CE",
    )


def test_ablation_grid_values():
    grid = {c.name: (c.alpha, c.beta) for c in ablation_grid()}
    assert grid == {
        "Light": (5, 5), "Balanced": (2, 10), "StructSafe": (5, 10), "Uniform": (10, 10),
        "Sparse": (1, 20), "Proposed": (5, 20), "HighStruct": (10, 20),
    }
    for alpha, beta in grid.values():
        assert 1 <= alpha <= beta


def test_ablation_losses_listing():
    names = [n for n, _ in ablation_losses()]
    assert names[: len(BASELINE_LOSSES)] == ["CE", "WCE", "Focal", "LS"]
    assert len(names) == 11 and len(set(names)) == 11


def test_uniform_symmetric_proposed_not(four_class):
    cfgs = dict(ablation_losses())
    uni = build_severity_matrix(four_class, cfgs["RCL-Uniform"].alpha, cfgs["RCL-Uniform"].beta)
    prop = build_severity_matrix(four_class, cfgs["RCL-Proposed"].alpha, cfgs["RCL-Proposed"].beta)
    assert np.array_equal(uni.entries, uni.entries.T)
    assert not np.array_equal(prop.entries, prop.entries.T)


def test_run_single_deterministic():
    spec = small_spec()
    a = run_single(spec, "RCL", 3)
    b = run_single(spec, "RCL", 3)
    assert a.to_dict() == b.to_dict()


def test_run_single_unknown_loss():
    with pytest.raises(ExperimentError, match="available: CE, RCL"):
        run_single(small_spec(), "Nope", 0)


def test_ce_beats_chance_on_fixture():
    r = run_single(small_spec(epochs=40), "CE", 0)
    assert r.report.accuracy > 0.5


def test_seed_isolation():
    # a run does not depend on which other seeds share the experiment
    alone = run_all(small_spec(seeds=[2]))
    together = run_all(small_spec(seeds=[0, 1, 2]))
    pick = [r for r in together if r.seed == 2]
    assert [r.to_dict() for r in alone] == [r.to_dict() for r in pick]


def test_run_all_parallel_matches_serial():
    spec = small_spec(seeds=[0, 1], epochs=3)
    assert [r.to_dict() for r in run_all(spec, jobs=2)] == [r.to_dict() for r in run_all(spec)]


def test_relative_improvement_examples():
    assert relative_improvement(10.0, 5.0) == (-5.0, -50.0)
    assert relative_improvement(0.0, 0.0) == (0.0, None)
    assert format_improvement(10.69, 0.81) == "-9.88 (-92.4%)"
    assert format_improvement(0.0, 3.0) == "3.00 (-)"
    assert format_improvement(7.5, 7.5) == "0.00 (0.0%)"


def test_identical_results_give_zero_improvement():
    spec = small_spec(
        seeds=[0], epochs=3, losses=[("CE", LossConfig("ce")), ("CE-again", LossConfig("ce"))]
    )
    res = run_comparison(spec)
    imp = res["improvements"]["CE-again"]
    assert imp["cer_abs"] == 0.0
    assert imp["cer_rel_percent"] in (0.0, None)


def test_table_matches_json():
    res = run_comparison(small_spec(epochs=3))
    rows = list(csv.DictReader(io.StringIO(render_table(res))))
    assert len(rows) == len(res["runs"])
    for row, run in zip(rows, res["runs"]):
        rep = run["report"]
        assert row["loss"] == run["loss"] and int(row["seed"]) == run["seed"]
        assert row["cer_percent"] == f"{rep['cer']:.2f}"
        assert int(row["type2"]) == rep["type2_count"]
        total = sum(int(row[c]) for c in ("correct", "visual_ambiguity", "type1", "type2"))
        assert total == 138


def test_results_are_json_and_reproducible():
    spec = small_spec(epochs=3)
    a = dump_results(run_comparison(spec))
    b = dump_results(run_comparison(spec))
    assert a == b
    doc = json.loads(a)
    assert set(doc) == {"spec", "baseline", "runs", "summary", "improvements"}
    assert ExperimentSpec.from_dict(doc["spec"]) == spec


def test_summary_medians():
    res = run_comparison(small_spec(seeds=[0, 1, 2], epochs=3))
    for name in ("CE", "RCL"):
        cers = sorted(r["report"]["cer"] for r in res["runs"] if r["loss"] == name)
        assert res["summary"][name]["cer"]["median"] == cers[1]
        assert res["summary"][name]["n_runs"] == 3


def test_ablation_rows_and_order():
    res = run_ablation(small_spec(seeds=[0], epochs=2))
    assert len(res["runs"]) == 11
    cers = [r["report"]["cer"] for r in res["runs"]]
    assert cers == sorted(cers)


def test_tradeoff_csv():
    res = run_comparison(small_spec(epochs=3))
    text = emit_tradeoff(res)
    lines = text.splitlines()
    assert lines[0].startswith("#")
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
    assert [r["name"] for r in rows] == ["CE", "RCL"]
    for row in rows:
        assert float(row["f1_macro"]) == res["summary"][row["name"]]["f1_macro"]["median"]
    # also derivable from runs alone
    bare = {"runs": res["runs"]}
    assert tradeoff_points(bare) == tradeoff_points(res)


def test_tradeoff_requires_results():
    with pytest.raises(ExperimentError):
        tradeoff_points({"runs": []})


@pytest.mark.parametrize(
    "patch,msg",
    [
        ({"losses": []}, "at least one loss"),
        ({"seeds": []}, "at least one seed"),
        ({"baseline": "zzz"}, "baseline"),
        ({"train": {"learning_rate": 1e-3}}, "epochs"),
        ({"train": {"epochs": 1, "momentum": 0.9}}, "unknown train fields"),
    ],
)
def test_spec_validation(patch, msg):
    doc = default_spec(seeds=[0], epochs=1).to_dict()
    doc.update(patch)
    with pytest.raises(ExperimentError, match=msg):
        ExperimentSpec.from_dict(doc)


def test_spec_missing_field():
    with pytest.raises(ExperimentError, match="missing field"):
        ExperimentSpec.from_dict({"dataset": {"scenario": "default-overlap"}})


def test_dataset_source_validation():
    with pytest.raises(ExperimentError):
        DatasetSource()
    with pytest.raises(ExperimentError, match="unknown scenario"):
        DatasetSource(scenario="nope")
    with pytest.raises(ExperimentError):
        DatasetSource(csv="x.csv")


def test_csv_dataset_source(tmp_path):
    from riskcal.data import write_csv

    ds = default_overlap_scenario(0)
    write_csv(ds, tmp_path / "d.csv")
    (tmp_path / "t.csv").write_text(ds.taxonomy.to_csv())
    src = DatasetSource(csv=str(tmp_path / "d.csv"), taxonomy=str(tmp_path / "t.csv"))
    built = src.build(0)
    assert built.n == ds.n
    assert {k: v.size for k, v in built.split.items()} == {"train": 644, "val": 138, "test": 138}
