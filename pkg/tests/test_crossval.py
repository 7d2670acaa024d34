import json

import numpy as np
import pytest

from mrseg.crossval import CrossValError, cross_validate, render_report, report_json
from mrseg.metrics import evaluate
from mrseg.synthetic import SceneParams, make_scene, scene_config

SMALL = SceneParams(density=3000)


@pytest.fixture(scope="module")
def clouds():
    return [make_scene(s, SMALL) for s in range(4)]


@pytest.fixture(scope="module")
def trained(clouds):
    cfg = scene_config(classifier={"epochs": 3})
    return cfg, cross_validate(clouds, [0, 1, 2, 3], cfg, baseline=True)


def test_oracle_two_folds(clouds):
    cfg = scene_config()
    res = cross_validate(clouds, [0, 1, 0, 1], cfg, oracle=True)
    assert res.pooled.oa == 100.0
    assert res.pooled.miou == 100.0
    assert res.unrecoverable == 0
    for c, labels in zip(clouds, res.labels):
        assert np.array_equal(labels, c.labels)


def test_pooled_is_sum_of_folds(trained, clouds):
    cfg, res = trained
    assert len(res.folds) == 4
    total = sum(r.confusion for r in res.folds)
    assert np.array_equal(res.pooled.confusion, total)
    assert res.pooled.total == sum(len(c) for c in clouds)
    # each fold's report is recomputable from the stored labels
    for i, c in enumerate(clouds):
        again = evaluate(c.labels, res.labels[i], len(cfg.schema), cfg.schema.names)
        assert np.array_equal(again.confusion, res.folds[i].confusion)


def test_baseline_and_report(trained):
    cfg, res = trained
    assert res.baseline is not None and len(res.baseline_folds) == 4
    text = render_report(res, cfg)
    for row in ("single-stage", "two-stage", "two-stage (init)", "fold 3", "fold mean"):
        assert row in text
    doc = json.loads(json.dumps(report_json(res, cfg)))
    assert doc["pooled"]["OA"] == round(res.pooled.oa, 2)
    assert 0 < doc["stage2_points"] < doc["total_points"]


def test_initial_row_hides_high_classes(trained):
    cfg, res = trained
    line = [ln for ln in render_report(res, cfg).splitlines() if ln.startswith("two-stage (init)")][0]
    assert line.split("|")[-1].split()[-3:] == ["n/a"] * 3


@pytest.mark.parametrize("folds", [[0, 0, 0, 0], [0, 2, 0, 2], [0, 1]])
def test_bad_folds(clouds, folds):
    with pytest.raises(CrossValError):
        cross_validate(clouds, folds, scene_config(), oracle=True)
