from collections.abc import Mapping, Sequence
from typing import NamedTuple

import numpy as np
from scipy.signal import periodogram

from ..engine import Tensor, no_grad
from ..engine.functional import adaptive_max_pool_1d
from ..utilities.constants import DE_POWER_FLOOR, DEFAULT_BANDS, TWO_PI_E
from ..utilities.errors import ConfigError, DimensionError
from ..utilities.logging import get_logger
from .records import Dataset, TrialRecord

logger = get_logger(__name__)


class DifferentialEntropy(NamedTuple):
    values: np.ndarray
    """Channel-major (channels * bands) DE values."""
    floored: np.ndarray
    """Same layout; True where the band power was raised to the floor."""


def differential_entropy(power: np.ndarray | float) -> np.ndarray:
    """h(X) = 1/2 log(2 pi e sigma^2) of a Gaussian with variance `power`."""
    return 0.5 * np.log(TWO_PI_E * np.asarray(power, dtype=np.float64))


def band_power(signal_window: np.ndarray, bands: Sequence[tuple[float, float]],
               sample_rate: float) -> np.ndarray:
    """(channels x bands) power from a Hann-windowed periodogram."""
    x = np.atleast_2d(np.asarray(signal_window, dtype=np.float64))
    if x.shape[-1] < 2:
        raise DimensionError(f"window needs at least 2 samples, got {x.shape[-1]}")
    nyquist = sample_rate / 2.0
    for lo, hi in bands:
        if not 0.0 <= lo < hi <= nyquist:
            raise ConfigError(f"band ({lo}, {hi}) must satisfy 0 <= lo < hi <= {nyquist}")
    freqs, density = periodogram(x, fs=sample_rate, window="hann", scaling="density", axis=-1)
    df = freqs[1] - freqs[0]
    columns = []
    for lo, hi in bands:
        # half-open bins, except that a band ending at Nyquist keeps the last bin
        mask = (freqs >= lo) & ((freqs < hi) | ((hi == nyquist) & (freqs == hi)))
        columns.append(density[:, mask].sum(axis=1) * df)
    return np.stack(columns, axis=1)


def de_feature(signal_window: np.ndarray,
               bands: Sequence[tuple[float, float]] = DEFAULT_BANDS,
               sample_rate: float = 200.0) -> DifferentialEntropy:
    """
    Differential-entropy features of one window.

    Args:
        signal_window: (channels x samples) raw signal; a 1-D array is one channel.
        bands: Frequency ranges in Hz, each within Nyquist.
        sample_rate: Sampling rate in Hz.

    Returns:
        DifferentialEntropy with channel-major values; 62 channels x 5 bands
        gives the 310-long vector of the EEG setup.
    """
    power = band_power(signal_window, bands, sample_rate)
    floored = power < DE_POWER_FLOOR
    if floored.any():
        logger.warning(f"{int(floored.sum())} band powers below {DE_POWER_FLOOR}; floored")
    values = differential_entropy(np.where(floored, DE_POWER_FLOOR, power))
    return DifferentialEntropy(values.reshape(-1), floored.reshape(-1))


def pool_features(dataset: Mapping[str, Sequence[TrialRecord]], out_len: int) -> Dataset:
    """Adaptive max pooling of every trial's x to `out_len` values."""
    pooled: Dataset = {}
    with no_grad():
        for subject, records in dataset.items():
            pooled[subject] = [
                TrialRecord(r.subject, r.class_label,
                            adaptive_max_pool_1d(Tensor(r.x), out_len).data, r.e)
                for r in records
            ]
    return pooled
