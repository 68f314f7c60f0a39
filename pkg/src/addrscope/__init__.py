"""addrscope: passive ADDR-gossip measurement of the Bitcoin P2P network.

Subpackages and modules:

- ``codec``     -- wire-level message encoding/decoding
- ``events``    -- the newline-delimited JSON event log format
- ``monitor``   -- the passive monitor node (sans-IO core + TCP driver)
- ``analysis``  -- daily set-algebra pipeline (A/P/R/U, overlap, validation)
- ``sim``       -- deterministic gossip simulator with ground truth
- ``cli``       -- the ``addrscope`` command line entry point
"""

__version__ = "0.1.0"
