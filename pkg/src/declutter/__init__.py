"""Clutter detection and removal for photographic guidance.

Subpackages and modules:

- ``diffcore``     minimal reverse-mode autodiff over a static op graph
- ``scenes``       synthetic scene corpus, manifests, image I/O
- ``segmentation`` object masks, detection, the blur operator
- ``decomposer``   per-object score decomposition and its trainer
- ``inpaint``      dual-branch inpainting GAN and the iterative refill loop
- ``guidance``     analysis sessions, suggestions, overrides, cleaning
- ``server``       HTTP/JSON facade
- ``cli``          command-line driver
"""

__version__ = "0.1.0"
