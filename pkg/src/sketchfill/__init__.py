"""Sketch-conditioned image completion: data forging, training, editing.

Subpackages are imported explicitly (`sketchfill.sketch`, `sketchfill.autodiff`,
...) rather than re-exported here, so light consumers such as the CLI help
path do not pay for heavy imports.
"""

__version__ = "0.1.0"
