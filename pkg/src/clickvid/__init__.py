"""Virtual-ID pseudo labels from click logs, and the networks trained on them.

Stages: page-view logs (:mod:`clickvid.pvlog`) become co-click graphs
(:mod:`clickvid.graph`), whose DeepWalk embeddings (:mod:`clickvid.embed`) are
clustered into virtual IDs (:mod:`clickvid.vid`). Click semantics and the
virtual IDs yield training samples (:mod:`clickvid.mining`) for a category
network and a feature network (:mod:`clickvid.train`), scored by
:mod:`clickvid.evaluate`. :mod:`clickvid.cli` wires the stages through files.
"""

__version__ = "0.1.0"
