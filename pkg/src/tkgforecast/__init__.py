"""Temporal knowledge graph forecasting pipeline.

Stages: rule-guided multi-hop history sampling (:mod:`.sampler`), prompt
rendering (:mod:`.prompts`), contrastive pair tooling (:mod:`.contrastive`),
test-time semantic filtering (:mod:`.filtering`) and temporal-aware filtered
Hits@k evaluation (:mod:`.evaluation`).
"""

__version__ = "0.1.0"
