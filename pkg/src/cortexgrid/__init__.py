"""cortexgrid: distributed spiking simulation of cortical column grids.

Subpackages cover the packed data model, grid topology and partitioning,
parallel network construction, the per-rank simulation engine with its
spike-exchange protocol, a mean-field companion for parameter analysis,
and post-processing of spike logs (rates, spectra, slow-wave fronts).
"""

from .model import (
    PopulationKind,
    NeuronParams,
    SynapticParams,
    StatePreset,
    preset,
    preset_names,
    encode_neuron_id,
    decode_neuron_id,
    quantize_weight,
    dequantize_weight,
    SYNAPSE_DTYPE,
    scaled_counts,
)
from .grid import GridSpec, PartitionMap, partition, distance
from .harness import SimConfig, build_network, run_simulation

__all__ = [
    "PopulationKind", "NeuronParams", "SynapticParams", "StatePreset",
    "preset", "preset_names", "encode_neuron_id", "decode_neuron_id",
    "quantize_weight", "dequantize_weight", "SYNAPSE_DTYPE", "scaled_counts",
    "GridSpec", "PartitionMap", "partition", "distance",
    "SimConfig", "build_network", "run_simulation",
]
