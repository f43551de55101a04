"""Label-free video re-identification at desk scale.

Pipeline: bounding-box tracks -> staggered fixed-length clips -> frame
tokens -> a recurrent video-embedding head trained with co-occurrence-
constrained hard triplets -> query/gallery top-k evaluation. See README.md
for the CLI surface and the acceptance suite.
"""

__version__ = "0.1.0"
