import os
import pathlib
import tempfile

import numpy as np
from scipy.signal import savgol_filter


# ==================== Derivatives of sampled data ====================
def is_uniform(times: np.ndarray, rtol: float = 1e-6) -> bool:
    steps = np.diff(times)
    return bool(np.all(np.abs(steps - steps[0]) <= rtol * abs(steps[0])))


def smoothed_derivative(times: np.ndarray, values: np.ndarray, window: int = 5) -> np.ndarray:
    """
    dv/dt of a sampled signal, Savitzky-Golay smoothed.

    Falls back to plain central differences when the time axis is not uniform
    or the record is shorter than the window.

    @param times: strictly increasing sample times
    @param values: sample values
    @param window: smoothing window length in samples, odd, >= 3 (1 disables smoothing)
    """
    if window % 2 == 0:
        window += 1
    if window >= 3 and len(values) >= window and is_uniform(times):
        return savgol_filter(values, window, polyorder=2, deriv=1, delta=times[1] - times[0])
    return np.gradient(values, times)


# ==================== Files ====================
def atomic_write_text(path: "str | os.PathLike", text: str) -> None:
    """Write through a temp file in the same directory, then rename over the target"""
    path = pathlib.Path(path)
    fd, tmp = tempfile.mkstemp(prefix=".%s." % path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="u8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


if __name__ == "__main__":
    t = np.linspace(0, 1e-9, 101)
    print(smoothed_derivative(t, 1.2e9 * t)[:5])
