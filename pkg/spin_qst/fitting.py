"""Power-law fit a·N^b of mean infidelities, by least squares in log-log space."""

import math

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import linregress

from spin_qst.errors import ConfigError


class PowerLawFit(BaseModel):
    a: float = Field(description="Prefactor")
    a_err: float = Field(description="Standard error of a, propagated from ln a")
    b: float = Field(description="Exponent")
    b_err: float = Field(description="Standard error of b")
    n_points: int


def fit_power_law(ns, mean_infidelities) -> PowerLawFit:
    """Unweighted OLS of ln(infidelity) on ln(N); errors come from the residual variance."""
    x = np.asarray(ns, dtype=float)
    y = np.asarray(mean_infidelities, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ConfigError("power-law fit needs at least three (N, infidelity) pairs")
    if np.any(x <= 0.0) or np.any(y <= 0.0):
        raise ConfigError("power-law fit needs positive N and positive infidelities")
    if np.unique(x).size < 2:
        raise ConfigError("power-law fit needs at least two distinct N")
    result = linregress(np.log(x), np.log(y))
    a = math.exp(result.intercept)
    return PowerLawFit(
        a=a,
        a_err=a * float(result.intercept_stderr),
        b=float(result.slope),
        b_err=float(result.stderr),
        n_points=int(x.size),
    )
