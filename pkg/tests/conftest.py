import os

os.environ.setdefault("OMP_NUM_THREADS", "1")

import pytest  # noqa: E402

from mhn.data.synthetic import ALL_TASKS, SyntheticConfig, generate_synthetic  # noqa: E402
from mhn.training import ModelSection, OptimSection, RunConfig  # noqa: E402


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_data")
    generate_synthetic(SyntheticConfig(n_train=48, n_val=24, n_test=24, frames=16, d_app=8, d_mot=8,
                                       count_max=4, tasks=list(ALL_TASKS), seed=11), out)
    return str(out)


def tiny_run(data_dir, out_dir, task="frameqa_attr", epochs=2, **model):
    m = {"d": 16, "heads": 2, "n_levels": 2, "T": 2, "embed_dim": 12, **model}
    return RunConfig(model=ModelSection(**m), optim=OptimSection(lr=1e-3, max_epochs=epochs, batch_size=16),
                     data_dir=data_dir, task=task, seed=0, out_dir=str(out_dir))


ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(passed, detail)``."""
    def record(passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {request.node.name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
