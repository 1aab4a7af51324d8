import numpy as np
import pytest

from keyframe_stylize.core import ImageBuffer, TrainingConfig
from keyframe_stylize.evaluation import (
    MetricReport,
    ablation_report,
    format_table,
    sampling_report,
    split_frames,
    style_distance,
    write_report,
)
from keyframe_stylize.fixtures import make_dataset
from keyframe_stylize.generator import GeneratorConfig
from keyframe_stylize.sampler import SamplingSpec

FAST = TrainingConfig.desk(iterations=2)
TINY = GeneratorConfig(residual_blocks=1, base_channels=2)


def test_style_distance_zero_on_style(stand_in, rand_img):
    style = rand_img(16, 16, 1)
    assert style_distance([style, ImageBuffer(style.data.copy())], style, stand_in) == 0.0


def test_style_distance_symmetric_single(stand_in, rand_img):
    a, b = rand_img(16, 16, 1), rand_img(16, 16, 2)
    assert style_distance([a], b, stand_in) == pytest.approx(style_distance([b], a, stand_in), rel=1e-12)
    assert style_distance([a], b, stand_in) > 0


def test_style_distance_zero_iff_grams_equal(stand_in, rand_img):
    style = rand_img(8, 8, 3)
    assert style_distance([ImageBuffer(style.data.copy())], style, stand_in) == 0.0
    assert style_distance([style, rand_img(8, 8, 4)], style, stand_in) > 0.0
    with pytest.raises(ValueError):
        style_distance([], style, stand_in)


def test_metric_report_validation():
    with pytest.raises(ValueError):
        MetricReport(style_distance=-1.0, keyframe_l1=0.0)
    with pytest.raises(ValueError):
        MetricReport(style_distance=float("nan"), keyframe_l1=0.0)


def test_split_frames_excludes_z_and_keyframes():
    frames = make_dataset(n_frames=20, size=16).frames
    z, ev = split_frames(20, SamplingSpec("uniform", 0.1), frames, keyframe_indices=(0,))
    assert z == [0, 10]
    assert 0 not in ev and 10 not in ev and len(ev) == 18
    z, ev = split_frames(20, SamplingSpec("dense", 1.0), frames, (0,), holdout_every=5)
    assert ev == [2, 7, 12, 17]
    assert not set(z) & set(ev)


def test_ablation_harness_contract(stand_in, tmp_path):
    ds = make_dataset(n_frames=6, size=16)
    res = ablation_report(ds, seeds=[0, 1], training_config=FAST, generator_config=TINY,
                          spec=SamplingSpec("uniform", 0.34), extractor=stand_in, out_dir=tmp_path)
    assert set(res.arms) == {"l1_only", "vgg_only", "full"}
    assert all(len(v) == 2 for v in res.arms.values())
    assert all(r.extra["style_log_max"] == 0.0 for r in res.arms["l1_only"])
    assert all(r.extra["style_log_max"] > 0.0 for r in res.arms["full"])
    assert len(res.orderings()) == 2
    assert (tmp_path / "full_seed1" / "report.json").exists()


def test_sampling_harness_contract(stand_in, tmp_path):
    ds = make_dataset(n_frames=20, size=16)
    reports = sampling_report(ds, training_config=FAST, generator_config=TINY, extractor=stand_in,
                              out_dir=tmp_path)
    assert list(reports) == ["dense", "uniform", "adaptive"]
    assert len(reports["uniform"].z_indices) == 2
    assert len(reports["dense"].z_indices) == 16
    evaluated = {r["index"] for r in reports["dense"].per_frame}
    for rep in reports.values():
        assert {r["index"] for r in rep.per_frame} == evaluated
        assert not evaluated & set(rep.z_indices)
    table = format_table(list(reports.values()))
    assert all(table.count(f"sampling_{s}") == 1 for s in ("dense", "uniform", "adaptive"))
    with pytest.raises(ValueError):
        sampling_report(make_dataset(n_frames=10, size=16), extractor=stand_in)


def test_write_report(tmp_path):
    import json

    r = MetricReport(0.5, 0.1, [{"index": 3, "style_distance": 0.5, "input_l1": 0.2}], "abc", "run", [0])
    txt, js = write_report([r], tmp_path / "rep")
    assert "run" in txt.read_text()
    data = json.loads(js.read_text())
    assert data[0]["style_distance"] == 0.5 and data[0]["input_l1"] == 0.2
