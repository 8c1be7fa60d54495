import numpy as np
import pytest

from ecmsense.ecm import CurrentProfile
from ecmsense.ocv import OcvCurve, average_sweeps, fit_polynomial
from ecmsense.params import ParameterSet
from ecmsense.synthetic import reference_ocv_sweeps

Q_740MAH = 2664.0


@pytest.fixture(scope="session")
def ocv_curve() -> OcvCurve:
    charge, discharge = reference_ocv_sweeps()
    return fit_polynomial(average_sweeps(charge, discharge).restrict(0.05, 1.0), 10)


@pytest.fixture(scope="session")
def flat_ocv() -> OcvCurve:
    return OcvCurve((3.7, 0.0), (0.0, 1.0))


@pytest.fixture
def example_params() -> ParameterSet:
    return ParameterSet(tau1=10.0, tau2=100.0, c1=500.0, c2=5000.0, rs=0.03)


def constant_profile(current: float, duration: float, dt: float) -> CurrentProfile:
    return CurrentProfile(dt, np.full(int(round(duration / dt)), float(current)))
