import sys

import numpy as np
import pytest

from ydg import diffusion
from ydg.dataset import generate_dataset
from ydg.model import Model
from ydg.nn import mlp_init
from ydg.sampler import DOMAIN_INIT, DOMAIN_TRAIN, SampleConfig, derive_stream


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(SampleConfig(seed=11), 400, workers=1)


@pytest.fixture(scope="session")
def small_model(small_dataset, tmp_path_factory):
    """A briefly trained model: enough for plumbing tests, not for quality claims."""
    ds = small_dataset
    sched = diffusion.make_schedule()
    net = mlp_init(diffusion.net_sizes((64, 64)), derive_stream(0, 0, DOMAIN_INIT))
    diffusion.train(ds.x, ds.cond, net, sched, diffusion.GuidanceConfig(), 300,
                    derive_stream(0, 0, DOMAIN_TRAIN), batch=64, log_every=0)
    model = Model(net, sched, ds.meta, {"steps": 300, "cond_drop_p": 0.1, "hidden": [64, 64]})
    path = tmp_path_factory.mktemp("model") / "small.ydgw"
    model.save(path)
    return model, path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for k in sorted(verdicts):
            terminalreporter.write_line(verdicts[k])
