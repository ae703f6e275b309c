"""Digital twin of a Rydberg-atom array preparing GHZ states.

Modules
-------
lattice    geometry, symmetry and site orders
circuit    layered logical and native circuits, JSON interchange
compiler   layer search for shallow GHZ preparation under a parallel-gate radius
scheduler  lowering to native gates and layer timelines
physics    device constants, Hamiltonian terms, pulses and CZ calibration
engine     ideal and pulse-level state-vector backends, measurement sampling
analysis   fidelities, Rydberg observables, dephasing and readout
"""

__version__ = "0.1.0"
