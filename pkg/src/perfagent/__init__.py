"""Harness for evaluating LLM-driven performance optimization of C/C++ kernels.

The package is organized around a small pipeline:

- ``manifest``: benchmark discovery, selection, and source preparation
- ``toolchain``: compiler detection, builds, timed runs, speedup math
- ``verify``: output comparison and correctness classification
- ``llm_gateway``: prompt rendering, model providers, response parsing
- ``profile``: calling-context-tree profile ingestion and summaries
- ``patch``: lexical C/C++ function location and replacement
- ``agent``: iterative profile-guided optimization loop
- ``experiments``: end-to-end experiment drivers and reporting
"""

__version__ = "0.1.0"
