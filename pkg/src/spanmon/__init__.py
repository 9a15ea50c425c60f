"""spanmon: bridge long-term monitoring toolkit.

Simulated multimetric sensor node (event-driven triggering, acquisition,
FIR conditioning, packetized uplink with retry), a TCP ingestion service
with a file-backed record store, and an analysis engine that fuses strain
and acceleration into reference-free displacement, natural frequencies,
and long-term statistics and power budgets.
"""

from spanmon._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
