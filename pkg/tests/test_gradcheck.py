import numpy as np
import pytest

from hypergcn.errors import BoundaryDegeneracy
from hypergcn.gradcheck import (GradcheckReport, gradcheck, group_of, linear_config,
                                relative_error)
from hypergcn.network import ModelConfig
from hypergcn.nn import Conv1x1, TemporalConv

SMALL = ModelConfig.tiny(layers_per_stage=1)


def test_group_names():
    assert group_of("stage1.layer0.mshgc.phi") == "mshgc.phi"
    assert group_of("stage0.layer2.mstc.branch3.reduce.weight") == "mstc.reduce.weight"
    assert group_of("classifier.bias") == "classifier.bias"


def test_relative_error_floor():
    assert relative_error(1.0, 1.0 + 1e-6) == pytest.approx(1e-6 / (1 + 1e-6))
    assert relative_error(1e-12, 0.0, floor=1e-5) == pytest.approx(1e-7)


def test_report_lines():
    r = GradcheckReport(1e-4, 3, groups={"a": 1e-6, "b": 2e-5}, checked=10)
    lines = list(r.lines())
    assert lines[0].startswith("group=a max_rel_err=")
    assert lines[-1] == "PASS"
    r.groups["c"] = 0.5
    assert not r.passed and list(r.lines())[-1] == "FAIL"


def test_linear_config():
    cfg = linear_config(ModelConfig.tiny())
    assert cfg.nonlinear is False and cfg.V_h == 0 and set(cfg.k_scales) == {0}


def test_linear_model_is_exact():
    report = gradcheck(linear=True, max_per_tensor=3)
    assert report.kinks == 0 and report.excluded == 0
    assert report.max_normwise < 1e-8, report.max_normwise
    assert report.passed


def test_small_model_passes():
    report = gradcheck(SMALL, max_per_tensor=2, seed=1)
    assert report.passed, list(report.lines())
    groups = set(report.groups)
    for g in ("mshgc.weight", "mshgc.alpha", "mshgc.phi", "mshgc.psi", "mshgc.ln_gain",
              "mshgc.ln_bias", "mshgc.hyper_joints", "mstc.conv.weight", "classifier.weight"):
        assert g in groups, g


@pytest.mark.parametrize("cls", [Conv1x1, TemporalConv])
def test_sign_flip_is_caught(monkeypatch, cls):
    original = cls.backward

    def flipped(self, dy):
        before = self.grads["weight"].copy()
        dx = original(self, dy)
        self.grads["weight"] = before - (self.grads["weight"] - before)
        return dx

    monkeypatch.setattr(cls, "backward", flipped)
    report = gradcheck(SMALL, max_per_tensor=2, seed=1)
    assert report.max_error > 0.1
    assert not report.passed


def test_degenerate_seeds_raise():
    with pytest.raises(BoundaryDegeneracy):
        gradcheck(SMALL, max_per_tensor=1, max_attempts=2, max_boundary_fraction=-1.0)
