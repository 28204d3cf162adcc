import time

import numpy as np
import pytest

from pcupsample import dataprep, nn
from pcupsample.projection import LearnedEstimator

ACCEPTANCE = []

# toy-scale recipe shared by the learned-estimator tests
TOY_FAMILY = ("sphere:r=0.3~0.6", "torus:R=0.25~0.35,r=0.08~0.15")
TOY_SHAPES_PER_FAMILY = 4
TOY_SEEDS_PER_SHAPE = 640  # 8 shapes x 640 = 5120 samples
TOY_EPOCHS = 40


def record(number: int, name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE.append((number, name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}  {detail}")


def toy_sources(seed: int):
    rng = np.random.default_rng([seed, 2])
    out = []
    for spec in TOY_FAMILY:
        out += dataprep.expand_family(spec, TOY_SHAPES_PER_FAMILY, rng)
    return out


@pytest.fixture(scope="session")
def toy_models():
    """Direction and distance nets trained on the toy family; returns (estimator, info)."""
    t0 = time.perf_counter()
    ts = dataprep.build_training_set(toy_sources(0), dataprep.DataConfig(seeds_per_source=TOY_SEEDS_PER_SHAPE, seed=0))
    cfg = nn.TrainConfig(epochs=TOY_EPOCHS, batch_size=64, lr=1e-4)
    dir_net = nn.train(nn.NetworkSpec(output_dim=3), dataprep.direction_inputs(ts), ts.gt_directions, cfg)
    dist_net = nn.train(nn.NetworkSpec(output_dim=1, output_scale=0.01), dataprep.distance_inputs(ts), ts.gt_distances, cfg)
    info = {
        "train_seconds": time.perf_counter() - t0,
        "n_samples": len(ts),
        "dir_curve": dir_net.loss_curve,
        "dist_curve": dist_net.loss_curve,
    }
    return LearnedEstimator(dir_net.params, dist_net.params), info
