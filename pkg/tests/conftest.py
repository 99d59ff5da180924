import pytest

from sharedsteer.engine import (MASTER_SEED, SimConfig, run_trial,
                                subject_setup, trial_seed)
from sharedsteer.guidance import GuidanceConfig
from sharedsteer.track import TrackLayout, build_dlc_path

# kept under the name the tests grew up with
subject_bundle = subject_setup


@pytest.fixture(scope="session")
def dlc_path():
    return build_dlc_path(TrackLayout())


@pytest.fixture(scope="session")
def subject0():
    return subject_bundle(0)


@pytest.fixture(scope="session")
def manual_log(dlc_path, subject0):
    driver, synth, cal = subject0
    cfg = SimConfig(seed=trial_seed(0, 0, 0),
                    guidance=GuidanceConfig(mode="manual"))
    return run_trial(cfg, driver, cal, synth, subject_id=0, trial_index=0,
                     path=dlc_path)
