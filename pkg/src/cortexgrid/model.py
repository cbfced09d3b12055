"""Domain types shared by every part of the simulator.

Covers the packed 32-bit neuron identifiers, the 12-byte packed synapse
record, the fixed-point weight encoding, and the parameter presets for
the three network working regimes (one slow-wave and two asynchronous
states).  Presets are frozen against a golden table shipped as package
data; tests byte-compare the two.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class PopulationKind(IntEnum):
    """Per-column subpopulations: foreground / background excitatory, inhibitory."""

    F = 0
    B = 1
    I = 2


# full-scale per-column sizes, ratio 2:6:2 over K = 1250
K_FULL = {PopulationKind.F: 250, PopulationKind.B: 750, PopulationKind.I: 250}


def scaled_counts(module_scale: float = 1.0) -> tuple[int, int, int]:
    """Per-column (K_F, K_B, K_I) at the given module scale."""
    if not 0.0 < module_scale <= 1.0:
        raise ValueError(f"module_scale must be in (0, 1], got {module_scale}")
    return tuple(int(round(K_FULL[k] * module_scale)) for k in PopulationKind)


# ---------------------------------------------------------------------------
# Neuron identifiers: high bits = hosting rank, low bits = local index
# ---------------------------------------------------------------------------

MAX_NEURON_ID_BITS = 32


def encode_neuron_id(rank, local_index, bits_for_local: int):
    """Pack (rank, local index) into one uint32."""
    if not 0 < bits_for_local < MAX_NEURON_ID_BITS:
        raise ValueError(f"bits_for_local out of range: {bits_for_local}")
    rank = np.asarray(rank, dtype=np.uint64)
    local = np.asarray(local_index, dtype=np.uint64)
    if np.any(local >> np.uint64(bits_for_local)):
        raise ValueError("local index overflows its bit field")
    if np.any(rank >> np.uint64(MAX_NEURON_ID_BITS - bits_for_local)):
        raise ValueError("rank overflows its bit field")
    packed = (rank << np.uint64(bits_for_local)) | local
    return packed.astype(np.uint32)[()]


def decode_neuron_id(packed, bits_for_local: int):
    """Inverse of :func:`encode_neuron_id`; returns (rank, local index)."""
    if not 0 < bits_for_local < MAX_NEURON_ID_BITS:
        raise ValueError(f"bits_for_local out of range: {bits_for_local}")
    packed = np.asarray(packed, dtype=np.uint32)
    local = packed & np.uint32((1 << bits_for_local) - 1)
    rank = packed >> np.uint32(bits_for_local)
    return rank.astype(np.int64)[()], local.astype(np.int64)[()]


# ---------------------------------------------------------------------------
# Fixed-point synaptic weights: 1/256 mV per LSB in a signed 16-bit code
# ---------------------------------------------------------------------------

WEIGHT_LSB_MV = 1.0 / 256.0
WEIGHT_MAX_MV = 128.0


def quantize_weight(w_mv):
    """Encode a weight in mV as a signed 16-bit fixed-point code."""
    w = np.asarray(w_mv, dtype=np.float64)
    if np.any(np.abs(w) >= WEIGHT_MAX_MV):
        raise ValueError("weight magnitude out of the representable +/-128 mV range")
    return np.round(w / WEIGHT_LSB_MV).astype(np.int16)[()]


def dequantize_weight(code):
    """Decode a 16-bit weight code back to mV."""
    return np.asarray(code, dtype=np.float64)[()] * WEIGHT_LSB_MV


# ---------------------------------------------------------------------------
# Packed synapse records (12 bytes, little-endian, field order fixed)
# ---------------------------------------------------------------------------

SYNAPSE_DTYPE = np.dtype(
    [
        ("source", "<u4"),
        ("target", "<u4"),
        ("weight", "<i2"),
        ("delay", "u1"),
        ("kind", "u1"),
    ]
)
assert SYNAPSE_DTYPE.itemsize == 12

# optional plastic extension (absent in all runs here): last spike time + derivative
PLASTIC_EXTENSION_DTYPE = np.dtype([("last_spike", "<f4"), ("derivative", "<f4")])
assert PLASTIC_EXTENSION_DTYPE.itemsize == 8


def write_synapse_records(records: np.ndarray, path) -> None:
    """Dump records to a raw little-endian binary file (12 bytes each)."""
    np.ascontiguousarray(records, dtype=SYNAPSE_DTYPE).tofile(path)


def read_synapse_records(path) -> np.ndarray:
    return np.fromfile(path, dtype=SYNAPSE_DTYPE)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeuronParams:
    """Membrane and adaptation constants of one population.

    Inhibitory populations carry no fatigue dynamics; their adaptation
    fields are None.
    """

    tau_m: float          # membrane time constant, ms
    c_m: float            # membrane capacitance, pF
    e_rest: float         # resting potential, mV
    v_theta: float        # firing threshold, mV
    v_reset: float        # post-spike reset, mV
    tau_arp: float        # absolute refractory period, ms
    alpha_c: float | None = None   # fatigue jump per spike
    tau_c: float | None = None     # fatigue decay time, ms
    g_c: float | None = None       # fatigue conductance, nS

    def __post_init__(self):
        if not (self.v_theta > self.v_reset >= self.e_rest):
            raise ValueError("require v_theta > v_reset >= e_rest")
        for name in ("tau_m", "tau_arp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tau_c is not None and self.tau_c <= 0:
            raise ValueError("tau_c must be positive")

    @property
    def adaptive(self) -> bool:
        return self.g_c is not None

    @property
    def g_over_c(self) -> float:
        """Fatigue drift coefficient g_c/C_m in 1/ms (0 for inhibitory)."""
        return 0.0 if self.g_c is None else self.g_c / self.c_m


@dataclass(frozen=True)
class SynapticParams:
    """Recurrent efficacy matrix and external-drive constants.

    `j` is indexed [target][source] over (F, B, I).  Inhibitory-source
    entries are hyperpolarizing magnitudes: the applied jump is -|j| no
    matter the sign they carry in the table.  The relative spread of every
    efficacy is `rho` (Gaussian, sd = rho*|mean|).
    """

    j: tuple[tuple[float, float, float], ...]
    j_ext: tuple[float, float, float]
    nu_ext_hz: float
    n_ext: int
    rho: float = 0.25

    def j_matrix(self) -> np.ndarray:
        return np.asarray(self.j, dtype=np.float64)

    def j_signed(self) -> np.ndarray:
        """Efficacy matrix with the inhibitory sign convention applied."""
        m = self.j_matrix().copy()
        m[:, PopulationKind.I] = -np.abs(m[:, PopulationKind.I])
        return m

    def delta_j(self) -> np.ndarray:
        return self.rho * np.abs(self.j_matrix())

    def ext_rate_per_ms(self) -> float:
        """Total external event rate per neuron, events/ms."""
        return self.n_ext * self.nu_ext_hz / 1000.0


@dataclass(frozen=True)
class StatePreset:
    """Complete parameter bundle for one network working regime."""

    name: str
    excitatory: NeuronParams
    inhibitory: NeuronParams
    synapses: SynapticParams
    connection_fraction: float = 0.9   # in-degree target fraction of K_s

    def neuron_params(self, kind: PopulationKind) -> NeuronParams:
        return self.inhibitory if kind == PopulationKind.I else self.excitatory


_EXC = NeuronParams(
    tau_m=20.0, c_m=1.0, e_rest=0.0, v_theta=20.0, v_reset=15.0,
    tau_arp=2.0, alpha_c=1.0, tau_c=1000.0, g_c=0.02,
)
_INH = NeuronParams(
    tau_m=10.0, c_m=1.0, e_rest=0.0, v_theta=20.0, v_reset=15.0, tau_arp=1.0,
)

_PRESETS = {
    "SW-3.1Hz": StatePreset(
        name="SW-3.1Hz",
        excitatory=_EXC,
        inhibitory=_INH,
        synapses=SynapticParams(
            j=(
                (0.600, 0.422, 3.17),
                (0.224, 0.429, 3.00),
                (0.776, 0.706, 3.00),
            ),
            j_ext=(0.484, 0.653, 0.227),
            nu_ext_hz=3.17,
            n_ext=400,
        ),
    ),
    "AW-8.8Hz": StatePreset(
        name="AW-8.8Hz",
        excitatory=_EXC,
        inhibitory=_INH,
        synapses=SynapticParams(
            j=(
                (0.515, 0.416, -1.5),
                (0.386, 0.429, -1.5),
                (0.615, 0.615, -1.5),
            ),
            j_ext=(1.416, 1.416, 1.013),
            nu_ext_hz=3.17,
            n_ext=400,
        ),
    ),
    "AW-2.8Hz": StatePreset(
        name="AW-2.8Hz",
        excitatory=_EXC,
        inhibitory=_INH,
        synapses=SynapticParams(
            j=(
                (0.515, 0.416, -1.5),
                (0.386, 0.429, -1.5),
                (0.615, 0.615, -1.5),
            ),
            j_ext=(0.858, 0.858, 1.013),
            nu_ext_hz=3.17,
            n_ext=400,
        ),
    ),
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset(name: str) -> StatePreset:
    """Look up a working-regime preset by name."""
    try:
        return _PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        ) from None


def format_preset_table(p: StatePreset) -> str:
    """Render one preset in the line format of the golden fixture."""
    lines = [f"[{p.name}]"]
    for nrn, tag in ((p.excitatory, "exc"), (p.inhibitory, "inh")):
        fields = [
            f"tau_m={nrn.tau_m:g}", f"c_m={nrn.c_m:g}", f"e_rest={nrn.e_rest:g}",
            f"v_theta={nrn.v_theta:g}", f"v_reset={nrn.v_reset:g}",
            f"tau_arp={nrn.tau_arp:g}",
        ]
        if nrn.adaptive:
            fields += [f"alpha_c={nrn.alpha_c:g}", f"tau_c={nrn.tau_c:g}",
                       f"g_c={nrn.g_c:g}"]
        lines.append(f"neuron.{tag}: " + " ".join(fields))
    names = "FBI"
    for t in range(3):
        row = " ".join(f"{v:.3f}" for v in p.synapses.j[t])
        lines.append(f"j.{names[t]}: {row}")
    lines.append("j_ext: " + " ".join(f"{v:.3f}" for v in p.synapses.j_ext))
    lines.append(f"nu_ext={p.synapses.nu_ext_hz:g} n_ext={p.synapses.n_ext:d} "
                 f"rho={p.synapses.rho:g}")
    return "\n".join(lines)


def golden_preset_text() -> str:
    """All presets rendered for comparison against the shipped fixture."""
    return "\n\n".join(format_preset_table(_PRESETS[n]) for n in preset_names()) + "\n"


def load_golden_fixture() -> str:
    return (
        importlib.resources.files("cortexgrid")
        .joinpath("data/preset_tables.txt")
        .read_text()
    )
