"""Per-trial random streams split off one master seed.

Every stream is `SeedSequence(master_seed, spawn_key=(tag, N, trial))`, so a trial's
draws depend only on its coordinates, never on which worker ran it or in what order.
"""

import numpy as np

TRUTH_STATE = 1
TRUTH_NOISE = 2
ESTIMATOR = 3
WAVEFORM = 4

# N = 0 never names a real ensemble; used for the campaign-wide shared waveform
SHARED = 0


def stream(master_seed: int, tag: int, num_qubits: int = SHARED, trial: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(tag, num_qubits, trial)))


def shared_waveform_stream(master_seed: int) -> np.random.Generator:
    return stream(master_seed, WAVEFORM)
