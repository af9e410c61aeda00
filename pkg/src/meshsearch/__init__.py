"""meshsearch: a desk-scale 3D model search engine.

Triangle meshes are reduced to bags of quantized geometric words; an
inverted index over those words answers similarity (3DSS) and
part-in-part (PiP) queries, a catalog tracks provenance, versions,
dedup and takedown, and an HTTP service plus CLI expose the whole
pipeline.
"""

__version__ = "0.1.0"

from .mesh import TriangleMesh, parse_obj, parse_stl, weld_vertices  # noqa: F401
from .words import WordBag, WordConfig, build_bag  # noqa: F401
from .index import InvertedIndex  # noqa: F401
from .catalog import Catalog, IngestMeta  # noqa: F401
