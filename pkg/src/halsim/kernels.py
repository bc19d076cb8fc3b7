"""Active kernel backend (numba loops or vectorized numpy).

``HALSIM_DISABLE_NUMBA=1`` selects the numpy path at import time.
"""
from ._accel import NUMBA_ENABLED, backend_name

if NUMBA_ENABLED:
    from . import _loops as _impl
else:
    from . import _vectorized as _impl

EXPONENTIAL, NORMAL, LOGISTIC, LOMAX = 0, 1, 2, 3

ses_fit = _impl.ses_fit
ses_sse = _impl.ses_sse
ses_forecast = _impl.ses_forecast
hw_fit = _impl.hw_fit
hw_sse = _impl.hw_sse
hw_forecast = _impl.hw_forecast
l2_loss = _impl.l2_loss
fit_search = _impl.fit_search
score_trajectories = _impl.score_trajectories

BACKEND = backend_name()

__all__ = [
    "BACKEND", "EXPONENTIAL", "NORMAL", "LOGISTIC", "LOMAX",
    "ses_fit", "ses_sse", "ses_forecast", "hw_fit", "hw_sse", "hw_forecast",
    "l2_loss", "fit_search", "score_trajectories",
]
