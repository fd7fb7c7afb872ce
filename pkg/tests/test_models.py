import subprocess
import sys
import time

import numpy as np
import pytest

from wafernet.errors import ConfigurationError, DimensionError
from wafernet.gradcheck import check_gradients, model_loss_fn
from wafernet.layers import Conv2d, Dense, ResBlock
from wafernet.models import ArchId, basenet8_pools, build_model, count_params, predict
from wafernet.tensor import Tensor

SMALL = [a for a in ArchId if a is not ArchId.VGG16]


def conv_count(cin, cout, k):
    return cout * (cin * k * k + 1)


def dense_count(f, fo):
    return fo * (f + 1)


def expected_count(arch, c, res):
    """Closed-form count from the documented layer plans."""
    if arch == "BaseNet":
        return conv_count(1, 8, 5) + conv_count(8, 8, 5) + dense_count(8 * (res // 4) ** 2, 256) + dense_count(256, c)
    if arch in ("BaseNet8", "BaseNet8Plus"):
        widths = [8, 16, 32, 64, 128, 256, 512, 512]
        total, cin = 0, 1
        for w in widths:
            total += conv_count(cin, w, 3) + (2 * w if arch == "BaseNet8Plus" else 0)
            cin = w
        side = res // 2 ** min(int(np.log2(res)), 8)
        return total + dense_count(512 * side * side, 256) + dense_count(256, c)
    if arch == "IncNet":
        total, cin = conv_count(1, 16, 3), 16
        for w in [32, 64, 128, 256]:
            q = w // 4
            total += sum(conv_count(cin, q, k) for k in (1, 3, 5, 9)) + conv_count(q, q, 9)
            cin = w
        return total + dense_count(256, c)
    if arch == "ResiNet":
        total, cin = conv_count(1, 16, 3), 16
        for w in [16, 32, 64, 128]:
            total += conv_count(cin, w, 3) + conv_count(w, w, 3)
            if cin != w:
                total += conv_count(cin, w, 1)
            cin = w
        return total + dense_count(128, c)
    raise KeyError(arch)


def test_vgg16_count_exact_and_fast():
    t0 = time.perf_counter()
    n = count_params(build_model(ArchId.VGG16, 1000, 224))
    assert n == 138_357_544
    assert time.perf_counter() - t0 < 1.0


@pytest.mark.parametrize("arch", SMALL)
@pytest.mark.parametrize("c,res", [(8, 256), (3, 64), (5, 16)])
def test_counts_match_closed_form(arch, c, res):
    assert count_params(build_model(arch, c, res)) == expected_count(arch.value, c, res)


def test_single_layer_counts():
    seeds = np.random.SeedSequence(0)
    assert sum(p.size for p in Conv2d(1, 8, 5, name="c", rng=seeds).parameters()) == 208
    assert sum(p.size for p in Dense(10, 5, name="d", rng=seeds).parameters()) == 55


def test_count_ordering_default_plans():
    b8 = count_params(build_model("BaseNet8", 8))
    b = count_params(build_model("BaseNet", 8))
    v = count_params(build_model("VGG16", 1000))
    assert b8 < b < v


def test_count_independent_of_weights():
    m = build_model("BaseNet", 8, 32)
    before = count_params(m)
    for p in m.parameters():
        p.data = p.data * 0 + 3
    assert count_params(m) == before


@pytest.mark.parametrize("arch", SMALL)
def test_forward_shape_and_batch_independence(arch):
    m = build_model(arch, 5, 32, seed=3)
    x = np.random.default_rng(0).random((4, 1, 32, 32)).astype(np.float32)
    full = m.forward(x).data
    assert full.shape == (4, 5)
    single = np.concatenate([m.forward(x[i:i + 1]).data for i in range(4)])
    np.testing.assert_allclose(single, full, rtol=1e-5, atol=1e-6)


def test_basenet_logits_2x8_at_256():
    m = build_model("BaseNet", 8, 256)
    assert m.forward(np.zeros((2, 1, 256, 256), np.float32)).shape == (2, 8)


def test_predict_argmax():
    m = build_model("BaseNet", 3, 16)
    x = np.random.default_rng(1).random((1, 1, 16, 16)).astype(np.float32)
    x = np.concatenate([x, x])
    logits, cls = predict(m, x)
    assert cls[0] == cls[1] == logits[0].argmax()
    np.testing.assert_array_equal(logits[0], logits[1])


def test_shape_mismatch():
    m = build_model("BaseNet", 3, 16)
    with pytest.raises(DimensionError):
        m.forward(np.zeros((1, 1, 32, 32), np.float32))


@pytest.mark.parametrize("arch,res", [("VGG16", 256), ("BaseNet8", 48), ("IncNet", 24), ("ResiNet", 8), ("BaseNet", 10)])
def test_bad_resolution(arch, res):
    with pytest.raises(ConfigurationError):
        build_model(arch, 8, res)


def test_bad_arch_and_classes():
    with pytest.raises(ConfigurationError):
        build_model("AlexNet")
    with pytest.raises(ConfigurationError):
        build_model("BaseNet", 1)


def test_arch_parse_aliases():
    assert ArchId.parse("basenet8+") is ArchId.BaseNet8Plus
    assert ArchId.parse("VGG16") is ArchId.VGG16


def test_basenet8_pools():
    assert basenet8_pools(256) == 8
    assert basenet8_pools(64) == 6
    assert basenet8_pools(16) == 4


def test_basenet8plus_defaults_multistep():
    assert build_model("BaseNet8Plus", 8, 16).train_defaults == {"multistep": True}
    assert build_model("BaseNet8", 8, 16).train_defaults == {}


def test_parameters_unique():
    for arch in SMALL:
        m = build_model(arch, 8, 32)
        ids = [id(p) for p in m.parameters()]
        assert len(ids) == len(set(ids))


def test_resblock_identity_with_zeroed_body():
    blk = ResBlock(4, 4, name="r", rng=np.random.SeedSequence(0), dtype=np.float64)
    for p in blk.body.parameters():
        p.data = np.zeros_like(p.data)
    x = np.random.default_rng(0).random((2, 4, 6, 6))
    out = blk.forward(Tensor(x), False).data
    np.testing.assert_array_equal(out, x)


def test_untrained_logits_identical_across_processes():
    code = (
        "import numpy as np, hashlib\n"
        "from wafernet.models import build_model\n"
        "m = build_model('ResiNet', 8, 32, seed=7)\n"
        "x = np.random.default_rng(0).random((2, 1, 32, 32)).astype(np.float32)\n"
        "print(hashlib.sha256(m.forward(x).data.tobytes()).hexdigest())\n"
    )
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)}
    assert len(outs) == 1


def test_two_layer_conv_net_gradients():
    from wafernet.layers import Activation, Flatten
    from wafernet.models import ModelGraph

    seeds = np.random.SeedSequence(5)
    m = ModelGraph("tiny", [Conv2d(1, 2, 3, 1, 1, name="c1", rng=seeds, dtype=np.float64), Activation(),
                            Conv2d(2, 2, 3, 1, 1, name="c2", rng=seeds, dtype=np.float64), Flatten(),
                            Dense(128, 3, name="fc", rng=seeds, dtype=np.float64)], (1, 8, 8))
    x = np.random.default_rng(1).normal(size=(1, 1, 8, 8))
    rep = check_gradients(model_loss_fn(m, x, np.array([2])), m.parameters(), samples=10)
    assert rep.ok(1e-4), rep


@pytest.mark.parametrize("arch", SMALL)
def test_architecture_gradients_16px(arch, backend):
    m = build_model(arch, 3, 16, seed=0).astype(np.float64)
    r = np.random.default_rng(0)
    # batch 8: batchnorm over 1x1 maps with only 4 samples is curved enough
    # that step-1e-4 central differences lose accuracy
    x = r.normal(size=(8, 1, 16, 16))
    y = np.arange(8) % 3
    rep = check_gradients(model_loss_fn(m, x, y), m.parameters(), samples=6, seed=0)
    assert rep.ok(1e-4), rep
