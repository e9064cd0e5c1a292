"""Streaming video-QA pipeline over embedding streams.

Continuous perception (scene-based clip segmentation), respond/wait decisions
over an interleaved token sequence, and asynchronous answer generation that
never blocks perception.
"""

__version__ = "0.1.0"
