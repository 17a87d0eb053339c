"""Multi-granularity clue alignment for multimodal fake-news detection and attribution.

The pipeline stages, in dependency order:

- ``data``       post schema, JSONL ingestion, stratified splitting
- ``images``     visual asset loading (video middle frame, 224x224 normalization)
- ``clues``      multi-view clue collection (entities, event, reverse search, time)
- ``providers``  deterministic fixture clue providers
- ``encoders``   frozen encoder adapters and the per-post feature bundle
- ``alignment``  comparison layers producing entity/event/temporal consistency features
- ``heads``      judgment heads, probability-gated fusion, detection/attribution heads
- ``training``   training loop, evaluation, prediction, ablation
- ``analysis``   discrimination heatmaps over 16-dim representations
- ``cli``        command-line surface
"""

__version__ = "0.1.0"
