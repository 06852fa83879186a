import json
from pathlib import Path

import numpy as np
import pytest

from carbosound.pipeline import AnalysisConfig, build_report
from carbosound.signal_model import Waveform, load_manifest
from carbosound.synth_oracle import PaperProfile, synth_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gaussian_burst():
    def make(f=400e3, sigma=8e-6, delay=2e-4, amp=1.0, dt=1e-7, n=8192):
        t = np.arange(n) * dt
        x = amp * np.exp(-0.5 * ((t - delay) / sigma) ** 2) * np.sin(2 * np.pi * f * (t - delay))
        return Waveform(x, dt)

    return make


@pytest.fixture(scope="session")
def profile_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("profile")
    synth_dataset(PaperProfile(), out)
    return out


@pytest.fixture(scope="session")
def profile_truth(profile_dir) -> list[dict]:
    return json.loads((profile_dir / "truth.json").read_text())["days"]


@pytest.fixture(scope="session")
def profile_config(profile_dir) -> AnalysisConfig:
    settings = json.loads((profile_dir / "analysis.json").read_text())
    return AnalysisConfig(min_prominence=settings["min_prominence"])


@pytest.fixture(scope="session")
def profile_report(profile_dir, profile_config) -> dict:
    return build_report(load_manifest(profile_dir / "manifest.json"), profile_config)


@pytest.fixture(scope="session")
def specimens(profile_report) -> dict:
    return {s["wc_ratio"]: s for s in profile_report["specimens"]}


_acceptance = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for a numbered criterion."""
    results = request.config.stash.setdefault(_acceptance, {})

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        results[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_acceptance, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
