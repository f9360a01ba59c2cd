"""Multi-scale attention fusion self-training on a desk-scale synthetic benchmark.

Modules: ``tensor`` (SMT1 tensors), ``geometry`` (resize / flip), ``backbone``
(tiny CNN with manual backprop), ``losses``, ``fusion`` (teacher targets),
``synth`` (dataset), ``training``, ``evaluation`` (mIoU and ablations),
``heatmap`` (PPM output), ``config`` and ``cli``.
"""

__version__ = "0.1.0"
