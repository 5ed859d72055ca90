"""Complex baseband trace container and its on-disk formats.

Traces are stored either as CSV (columns t_seconds, re, im) or as a compact
binary record: a single ASCII header line carrying the sample rate, followed
by little-endian float64 triplets (t_seconds, re, im).
"""

from dataclasses import dataclass, field

import numpy as np

_BINARY_MAGIC = "cavmag-trace-v1"


@dataclass
class ReflectionTrace:
    """Complex baseband time series with its sample clock.

    samples : (n,) complex array (envelope in the drive rotating frame).
    sample_rate : Hz.
    t0 : time of the first sample (s).
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    def to_csv(self, path):
        data = np.column_stack([self.times, self.samples.real, self.samples.imag])
        np.savetxt(path, data, delimiter=",", header="t_seconds,re,im", comments="")

    @classmethod
    def from_csv(cls, path) -> "ReflectionTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 3:
            raise ValueError("trace CSV must have columns t_seconds,re,im")
        t = data[:, 0]
        if len(t) > 1:
            dt = np.diff(t)
            if np.max(np.abs(dt - dt[0])) > 1e-9 * abs(dt[0]):
                raise ValueError("trace CSV is not uniformly sampled")
            rate = 1.0 / dt[0]
        else:
            rate = 1.0
        return cls(samples=data[:, 1] + 1j * data[:, 2], sample_rate=rate, t0=t[0])

    def to_binary(self, path):
        header = f"{_BINARY_MAGIC} sample_rate_hz={self.sample_rate!r} n={len(self)}\n"
        rec = np.empty((len(self), 3), dtype="<f8")
        rec[:, 0] = self.times
        rec[:, 1] = self.samples.real
        rec[:, 2] = self.samples.imag
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(rec.tobytes())

    @classmethod
    def from_binary(cls, path) -> "ReflectionTrace":
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii").strip()
            fields = header.split()
            if not fields or fields[0] != _BINARY_MAGIC:
                raise ValueError("not a cavmag trace file")
            meta = dict(f.split("=", 1) for f in fields[1:])
            rate = float(meta["sample_rate_hz"])
            n = int(meta["n"])
            rec = np.frombuffer(fh.read(n * 3 * 8), dtype="<f8").reshape(n, 3)
        t0 = rec[0, 0] if n else 0.0
        return cls(samples=rec[:, 1] + 1j * rec[:, 2], sample_rate=rate, t0=t0)
