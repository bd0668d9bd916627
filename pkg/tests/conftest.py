import numpy as np
import pytest

from strnoc.kit import default_kit
from strnoc.simulator import SimParams, SimulatedPeak, SimulatedProfile, iter_simulated


@pytest.fixture(scope="session")
def kit():
    return default_kit()


@pytest.fixture(scope="session")
def small_profiles(kit):
    return list(iter_simulated(kit, SimParams(noc_min=1, noc_max=4, seed=11), 8))


def make_peak(locus, allele, height, plp=1.0, size=None, allelic=None, copies=(1,)):
    return SimulatedPeak(
        locus=locus, allele=allele, size_bp=100.0 + 4 * allele if size is None else size,
        height_rfu=height, allelic_rfu=height if allelic is None else allelic,
        stutter_rfu=0.0, artefact_rfu=0.0, donor_copies=tuple(copies), plp=plp,
    )


def make_profile(peaks, noc=1, templates=None):
    templates = templates or [1000.0] * noc
    total = sum(templates)
    return SimulatedProfile(peaks=list(peaks), noc=noc, donor_templates_rfu=list(templates),
                            donor_proportions=[t / total for t in templates])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def quiet_params(**kw):
    """Noise-free, artefact-free, stutter-free single-source parameters."""
    base = dict(noc_min=1, noc_max=1, template_rfu_range=(1000.0, 1000.0), degradation_range=(0.0, 0.0),
                peak_height_cv=0.0, artefact_rate=0.0, pullup_threshold_rfu=1e12, noise_floor_rfu=0.0)
    base.update(kw)
    return SimParams(**base).without_stutter()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
