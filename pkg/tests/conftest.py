from __future__ import annotations

import numpy as np
import pytest

from crsbench.cohort import PatientRecord
from crsbench.schema import load_schema

BASE_RECORD = dict(
    patient_id="t0",
    snot22_baseline=60,
    age=40,
    sex="Female",
    ct_total=10,
    endoscopy_total=8,
    crs_polyps=True,
    previous_surgery=False,
    allergy_testing=False,
    septal_deviation=False,
    depression=False,
    fibromyalgia=False,
    smoker=False,
    copd=False,
    asthma=False,
    osa=False,
    diabetes=False,
    gerd=False,
    asa_intolerance=False,
    insurance="Private",
    income_bracket="<25k",
    race="White",
)


def make_record(**overrides) -> PatientRecord:
    kwargs = dict(BASE_RECORD)
    kwargs.update(overrides)
    return PatientRecord(**kwargs)


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
