"""Domain adaptation for recognition embeddings by style matching and perceptual scoring.

Submodules: ``tensor`` (array helpers, seeded streams), ``sinkhorn``
(entropic transport and its divergence), ``style`` (feature statistics,
matching loss, MMD), ``discriminator``, ``network`` (backbone, losses,
training), ``evaluation`` (verification and identification metrics),
``datagen`` (synthetic two-domain benchmark), ``cli``.
"""

__version__ = "0.1.0"
