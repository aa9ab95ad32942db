import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpnet.dilation import (
    ArchitectureSpec,
    build_plan,
    format_plan_report,
    pitch_dilation_factors,
    plan_from_f0,
    preset,
    receptive_field,
    round_half_up,
)
from qpnet.exceptions import InputRangeError, ShapeError


def test_dilation_factor_formula():
    assert pitch_dilation_factors(np.array([100.0]), 22050, 8)[0] == pytest.approx(27.5625)
    e = pitch_dilation_factors(np.array([200.0, 100.0]), 22050, 8)
    assert e[1] == 2 * e[0]


def test_dilation_factor_rejects_nonpositive_f0():
    with pytest.raises(InputRangeError):
        pitch_dilation_factors(np.array([100.0, 0.0]), 22050)


def test_round_half_up():
    assert round_half_up([0.5, 1.5, 2.5, 2.49]).tolist() == [1, 2, 3, 2]


def test_fixed_dilation_pattern():
    assert preset("wnf").fixed_dilations() == [2 ** k for k in range(10)] * 3
    assert preset("wnc").fixed_dilations() == [1, 2, 4, 8] * 4
    spec = preset("qpnet")
    assert spec.n_fixed == 12 and spec.n_adaptive == 4
    assert spec.adaptive_multipliers() == [1, 2, 4, 8]


def test_closed_form_receptive_fields():
    assert receptive_field(preset("wnf")) == 1 + 3 * 1023
    assert receptive_field(preset("wnc")) == 60 + 1
    # fixed 4x3 spans 45, adaptive at e=5: 5 + 10 + 20 + 40
    assert receptive_field(preset("qpnet"), 5.0) == 1 + 45 + 75


def test_receptive_field_argument_checks():
    with pytest.raises(InputRangeError):
        receptive_field(preset("qpnet"))
    with pytest.raises(InputRangeError):
        receptive_field(preset("wnc"), 3.0)


def test_plan_loop_oracle():
    spec = preset("desk-qpnet")
    e = np.array([0.2, 0.5, 1.49, 3.25, 10.0])
    plan = build_plan(spec, e)
    for t, et in enumerate(e):
        for k, base in enumerate(spec.adaptive_multipliers()):
            expected = max(1, int(np.floor(et * base + 0.5)))
            assert plan.adaptive_dilations[t, k] == expected


@given(st.floats(0.05, 100), st.integers(1, 5), st.integers(1, 3))
def test_plan_properties(e, layers, repeats):
    spec = ArchitectureSpec(adaptive_layers=layers, adaptive_repeats=repeats)
    plan = build_plan(spec, np.array([e]))
    dil = plan.adaptive_dilations[0]
    assert len(dil) == layers * repeats
    assert np.all(dil >= 1)
    assert np.all(np.abs(dil - np.maximum(1, e * np.array(spec.adaptive_multipliers()))) <= 0.5 + 1e-9)


def test_plan_window_and_vanilla():
    spec = preset("desk-qpnet")
    plan = build_plan(spec, np.linspace(2, 20, 50))
    sub = plan.window(10, 20)
    assert np.array_equal(sub.adaptive_dilations, plan.adaptive_dilations[10:20])
    wn = build_plan(preset("desk-wn"))
    assert wn.n_adaptive == 0 and wn.adaptive_dilations.size == 0
    assert wn.window(0, 5) is wn


def test_plan_requires_factors_for_adaptive():
    with pytest.raises(ShapeError):
        build_plan(preset("desk-qpnet"))
    with pytest.raises(InputRangeError):
        build_plan(preset("desk-qpnet"), np.array([1.0, -1.0]))


def test_plan_from_f0_and_layer_order():
    spec = preset("desk-qpnet")
    plan = plan_from_f0(spec, np.full(4, 22050 / 80.0), 22050)
    assert plan.adaptive_dilations[0].tolist() == [10, 20]
    layers = plan.layer_dilations()
    assert layers[:3] == [1, 2, 4]
    assert plan.layer_dilations(fixed_first=False)[-3:] == [1, 2, 4]
    assert plan.max_dilations() == [1, 2, 4, 10, 20]


def test_spec_validation_and_json():
    with pytest.raises(InputRangeError):
        ArchitectureSpec(fixed_layers=0)
    with pytest.raises(InputRangeError):
        ArchitectureSpec(quant_levels=1024)
    with pytest.raises(InputRangeError):
        preset("nope")
    spec = preset("desk-qpnet", residual_channels=8)
    assert ArchitectureSpec.from_json(spec.to_json()) == spec


def test_plan_report_mentions_every_layer():
    spec = preset("desk-qpnet")
    text = format_plan_report(spec, plan_from_f0(spec, np.full(10, 150.0), 22050), 22050)
    assert text.count("fixed[") == 3 and text.count("adaptive[") == 2
    assert "cascade order: fixed -> adaptive" in text
