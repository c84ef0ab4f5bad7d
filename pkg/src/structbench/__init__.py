"""Global-structure sensitivity testbench.

Texture synthesis that disrupts an image's global layout while keeping
its local statistics, an odd-one-out metric over embeddings, a 2n-class
training scheme that forces structure sensitivity, diagnostic probes,
and a timed psychophysics session service.
"""

__version__ = "0.1.0"
