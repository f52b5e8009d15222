"""archslim: one-shot width/depth/dimension search for small transformers.

The package decomposes transformer blocks into gated sub-components joined
by connector units, trains selection and connection gates jointly with the
network weights against a profiled-cost objective (direct relaxation or
sampled Bernoulli policies), and exports the selected architecture.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
