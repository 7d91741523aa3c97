import numpy as np
import pytest

from fcac.dsp import DSPConfig, log_mel
from fcac.harness.synth import SynthSpec, gen_synthetic, tone_clips


def tone_spectrograms(num_classes=3, per_class=6, seed=0, duration_s=0.3, n_mels=32):
    spec = SynthSpec(kind="audio_tones", num_base_classes=num_classes, num_sessions=0, duration_s=duration_s)
    clips = tone_clips(spec, per_class, seed)
    return [log_mel(c, DSPConfig(n_mels=n_mels)) for c in clips], np.array([c.class_id for c in clips])


@pytest.fixture(scope="session")
def tones():
    return tone_spectrograms()


@pytest.fixture(scope="session")
def gaussian_manifest(tmp_path_factory):
    """Ten base classes plus two 5-way 5-shot sessions of well separated 16-d embeddings."""
    return gen_synthetic(SynthSpec(), tmp_path_factory.mktemp("gauss"), seed=0)


@pytest.fixture(scope="session")
def tiny_audio_manifest(tmp_path_factory):
    """Four base tone classes and one 2-way 2-shot session of short clips."""
    spec = SynthSpec(kind="audio_tones", num_base_classes=4, num_sessions=1, n_way=2, k_shot=2, k_query=2,
                     base_train_per_class=6, eval_per_class=3, duration_s=0.3)
    return gen_synthetic(spec, tmp_path_factory.mktemp("tones"), seed=0)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    previous = _CRITERIA.get(number, (title, True, 0.0))
    _CRITERIA[number] = (title, previous[1] and not failed, previous[2] + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, seconds = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title} ({seconds:.2f} s)")
