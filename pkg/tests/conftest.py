import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# paired two-moons models shared by the separation, rejection and MCN checks
PAIR_SEED = 1
PAIR_ARCH = (2, 32, 32, 2)
PAIR_EPOCHS = 1000
PAIR_LR = 0.5
TRAIN_RADIUS = 0.1


@pytest.fixture(scope="session")
def moons_pair():
    from confsep.harness.data import make_synthetic
    from confsep.training import TrainConfig, adversarial_inner_budget, train

    train_set = make_synthetic("two_moons", 400, 0.05, seed=10 * PAIR_SEED + 1)
    test_set = make_synthetic("two_moons", 200, 0.05, seed=10 * PAIR_SEED + 2)
    base = TrainConfig(epochs=PAIR_EPOCHS, learning_rate=PAIR_LR, seed=PAIR_SEED, activation="tanh")
    natural = train(train_set, PAIR_ARCH, base)
    adv_cfg = TrainConfig(epochs=PAIR_EPOCHS, learning_rate=PAIR_LR, seed=PAIR_SEED, activation="tanh",
                          inner_budget=adversarial_inner_budget(TRAIN_RADIUS))
    adversarial = train(train_set, PAIR_ARCH, adv_cfg)
    return {"natural": natural, "adversarial": adversarial, "train": train_set, "test": test_set}


def pytest_terminal_summary(terminalreporter):
    import verdicts
    if verdicts.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts.LINES):
            terminalreporter.write_line(verdicts.LINES[n])
