import pytest

from lonecast import synth

_RESULTS: dict[int, tuple[bool, str]] = {}


class AcceptanceLog:
    def record(self, criterion: int, passed: bool, detail: str) -> None:
        _RESULTS[criterion] = (bool(passed), detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        passed, detail = _RESULTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_config():
    return synth.SynthConfig(n_participants=4, weeks=6, seed=3, effect_strength=3.0, ppg_segments_per_day=1)


@pytest.fixture(scope="session")
def small_cohort(small_config):
    """(streams, truth) for a 4-participant, 6-week synthetic cohort."""
    return synth.generate(small_config)


@pytest.fixture(scope="session")
def small_grid(small_cohort):
    """(grid, labels, extraction) built from ``small_cohort``."""
    from lonecast import align, model, pipeline

    streams, _ = small_cohort
    ext = pipeline.extract_features(streams)
    labels, _ = pipeline.cohort_labels(streams)
    return align.FeatureGrid.build(ext.frame, labels, model.StudyClock()), labels, ext
