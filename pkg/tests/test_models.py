import numpy as np
import pytest

from dastraffic import models
from dastraffic.models import OCCUPANCY_SVM, SIZE_SOFTMAX, build, build_1d, build_2d
from dastraffic.nn import Conv2D, Dense, Dropout, MaxPool1D, MaxPool2D, ShapeError, predict

D_M = 1687


@pytest.mark.parametrize("variant", [OCCUPANCY_SVM, SIZE_SOFTMAX])
def test_fourteen_stages_with_feature_at_eight(variant):
    net = build_1d(D_M, 2, variant)
    stages = net.stages()
    assert len(stages) == 14
    assert net.feature_stage() == 8
    assert stages[7][0] == "Dense(64)"
    assert net.feature_width == 64
    assert [s[0] for s in stages[-3:]] == [
        "SvmLinear" if variant == OCCUPANCY_SVM else "Softmax", "Argmax", "Output"]


def test_two_d_stages():
    net = build_2d((6, D_M), 2)
    assert len(net.stages()) == 14 and net.feature_stage() == 8 and net.feature_width == 64


def test_head_sizes():
    assert build_1d(D_M, 5, OCCUPANCY_SVM).num_classes == 5
    net = build_1d(D_M, 2, SIZE_SOFTMAX)
    assert net.head == "softmax"
    p = predict(net, np.random.default_rng(0).normal(size=D_M))
    assert abs(p.scores.sum() - 1) <= 1e-6


def test_variants_differ_only_in_dropout_and_head():
    occ = build_1d(D_M, 2, OCCUPANCY_SVM)
    size = build_1d(D_M, 2, SIZE_SOFTMAX)
    strip = [repr(l) for l in occ.layers if not (isinstance(l, Dropout) and l.rate == 0.3)]
    assert strip == [repr(l) for l in size.layers]
    pool_drops = [i for i, l in enumerate(occ.layers) if isinstance(l, Dropout) and l.rate == 0.3]
    assert all(isinstance(occ.layers[i - 1], MaxPool1D) for i in pool_drops)
    assert len(pool_drops) == 2
    assert (occ.head, size.head) == ("svm", "softmax")


def test_two_d_bin_axis_and_strides():
    net = build_2d((6, D_M), 2)
    conv_out = [net.shapes[i + 1] for i, l in enumerate(net.layers) if isinstance(l, Conv2D)]
    assert [s[0] for s in conv_out] == [4, 2]
    assert all(l.stride_hw[0] == 1 for l in net.layers if isinstance(l, Conv2D))
    assert all(l.hw[0] == 1 for l in net.layers if isinstance(l, MaxPool2D))
    pools = [i for i, l in enumerate(net.layers) if isinstance(l, MaxPool2D)]
    assert all(isinstance(net.layers[i + 1], Dropout) for i in pools)


def test_two_d_has_more_parameters():
    one, two = build_1d(D_M, 2), build_2d((6, D_M), 2)
    assert two.param_count() > one.param_count()
    assert (one.param_count(), two.param_count()) == (215906, 267742)


def test_minimum_length_error():
    need = models.min_input_length(lambda: models.layers_1d(2), lambda n: (n, 1))
    build_1d(need, 2)
    with pytest.raises(ShapeError, match=f"minimum is {need}"):
        build_1d(need - 1, 2)
    with pytest.raises(ShapeError, match="minimum"):
        build_2d((6, 10), 2)


def test_build_dispatch():
    assert repr(build("1d", (D_M,), 2, seed=3)) == repr(build_1d(D_M, 2, seed=3))
    assert repr(build("2d", (6, D_M), 2)) == repr(build_2d((6, D_M), 2))
    with pytest.raises(ValueError):
        build("3d", (D_M,), 2)
    with pytest.raises(ValueError):
        build_1d(D_M, 2, "hinge")


def test_custom_layers():
    net = build("1d", (100,), 3, layers="conv1d(4,5,2) relu maxpool1d(2) flatten dense(16) "
                                        "relu dense(T)")
    assert net.num_classes == 3 and net.feature_width == 16


@pytest.mark.parametrize("layers", [models.layers_1d(5), models.layers_1d(2, SIZE_SOFTMAX),
                                    models.layers_2d(2)])
def test_layer_syntax_round_trip(layers):
    text = models.format_layers(layers)
    back = models.parse_layers(text, 99)
    assert [repr(l) for l in back] == [repr(l) for l in layers]
    assert models.format_layers(back) == text


def test_layer_syntax_placeholder_and_errors():
    layers = models.parse_layers("conv2d(20, 3x5, 1x2); maxpool2d(1x2) | dense(T)", 4)
    assert isinstance(layers[-1], Dense) and layers[-1].out_units == 4
    assert layers[0].kernel_hw == (3, 5) and layers[0].stride_hw == (1, 2)
    for bad in ("", "lstm(4)", "conv1d(4)", "dense(x)", "dropout(1.5)"):
        with pytest.raises(ValueError):
            models.parse_layers(bad, 2)
