import pytest

from torsionlab import constants as C
from torsionlab import experiments as X


@pytest.fixture(scope="session")
def consts():
    return C.paper_constants()


@pytest.fixture(scope="session")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("scenarios")


@pytest.fixture(scope="session")
def oracle_report(outdir):
    cfg = X.ExperimentConfig(scenario="oracle", kind="oracle", output_dir=str(outdir))
    return X.run_oracle_suite(cfg)


@pytest.fixture(scope="session")
def corpus_report(outdir, oracle_report):
    cfg = X.ExperimentConfig(scenario="corpus", kind="corpus", output_dir=str(outdir))
    return X.run_corpus_audit(cfg, oracle=oracle_report)


@pytest.fixture(scope="session")
def dumbbell_report(outdir):
    cfg = X.ExperimentConfig(scenario="dumbbell", kind="dumbbell", output_dir=str(outdir))
    return X.sweep_dumbbell(cfg)


@pytest.fixture(scope="session")
def punctured_report(outdir):
    cfg = X.ExperimentConfig(scenario="punctured", kind="punctured", output_dir=str(outdir))
    return X.sweep_punctured(cfg)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
