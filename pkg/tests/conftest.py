import pytest

from dpla.adjust import AdjustConfig
from dpla.datagen import DatasetSpec
from dpla.trainer import ExperimentConfig


def small_config(**kw):
    spec = DatasetSpec(c_k=3, c_n=3, N_1=20, H_1=120, M_1=120, gamma_l=5, gamma_u=5,
                       input_dim=2, seed=kw.pop("seed", 0))
    base = dict(dataset=spec, adjust=AdjustConfig(), hidden_dim=16, embed_dim=8, epochs=2,
                batch_size=64, seed=spec.seed, test_per_class=30)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def small_cfg():
    return small_config()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
