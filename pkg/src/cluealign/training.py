"""Training loop, evaluation, prediction, and ablation over the clue pipeline."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from .clues import ClueCache, ProviderRegistry, collect_clues
from .config import RunConfig
from .data import DatasetSplit, NewsPost, ingest_dataset, stratified_split
from .encoders import AdapterRegistry, FeatureCache, build_feature_bundle, build_fixture_adapters
from .heads import BRANCHES, ClueFusionModel
from .images import VisualAssetError, load_visual_asset
from .metrics import MetricsReport, evaluate_predictions
from .providers import build_fixture_registry

FEATURE_KEYS = (
    "text_joint",
    "image_joint",
    "text_semantic",
    "entities_text",
    "entities_visual",
    "event",
    "retrieved",
    "manipulation",
)

ABLATION_NAMES = {
    "pscc-net": "manipulation",
    "entity": "entity",
    "event": "event",
    "temporal": "temporal",
    "vem": "visual",
    "manipulation": "manipulation",
    "visual": "visual",
}


class TrainingError(RuntimeError):
    pass


@dataclass
class PipelineContext:
    """Providers, adapters, and caches shared by every stage of a run."""

    providers: ProviderRegistry
    adapters: AdapterRegistry
    clue_cache: Optional[ClueCache] = None
    feature_cache: Optional[FeatureCache] = None


def build_pipeline(config: RunConfig) -> PipelineContext:
    if config.providers != "fixture" or config.adapters != "fixture":
        raise TrainingError(
            "only fixture providers/adapters ship with this package; live services "
            "must be registered programmatically"
        )
    providers = build_fixture_registry(table=config.fixture_table or None)
    adapters = build_fixture_adapters(
        d_joint=config.d_joint,
        d_sem=config.d_sem,
        d_manip=config.d_manip,
        seed=config.adapter_seed,
    )
    clue_cache = None
    if config.clue_cache:
        clue_cache = ClueCache(config.clue_cache, provider_names=providers.names())
    feature_cache = None
    if config.feature_cache:
        feature_cache = FeatureCache(config.feature_cache, adapters=adapters)
    return PipelineContext(
        providers=providers,
        adapters=adapters,
        clue_cache=clue_cache,
        feature_cache=feature_cache,
    )


def compute_post_features(post: NewsPost, pipeline: PipelineContext):
    """Clues and feature bundle for one post, going through caches when bound."""
    if pipeline.feature_cache is not None:
        cached = pipeline.feature_cache.get(post.id)
        if cached is not None:
            return cached
    clues = collect_clues(post, pipeline.providers, cache=pipeline.clue_cache)
    return build_feature_bundle(
        post, clues, pipeline.adapters, cache=pipeline.feature_cache
    )


@dataclass
class SplitTensors:
    ids: list
    features: Dict[str, torch.Tensor]
    y_binary: Optional[torch.Tensor]
    y_attribution: Optional[torch.Tensor]

    def __len__(self) -> int:
        return len(self.ids)

    def slice(self, index: torch.Tensor) -> Dict[str, torch.Tensor]:
        return {key: value[index] for key, value in self.features.items()}


def assemble_tensors(
    posts: Sequence[NewsPost],
    pipeline: PipelineContext,
    dtype: torch.dtype = torch.float32,
    require_labels: bool = True,
) -> SplitTensors:
    """Stack per-post feature bundles into batched tensors."""
    if not posts:
        raise TrainingError("empty split: nothing to encode")
    columns = {key: [] for key in FEATURE_KEYS}
    gaps = []
    y_binary = []
    y_attribution = []
    ids = []
    for post in posts:
        bundle = compute_post_features(post, pipeline)
        vectors = bundle.vectors()
        for key in FEATURE_KEYS:
            columns[key].append(vectors[key])
        gaps.append(bundle.gap)
        ids.append(post.id)
        if require_labels:
            if post.label_binary is None:
                raise TrainingError(f"post {post.id!r} has no binary label")
            y_binary.append(post.label_binary)
            y_attribution.append(
                post.label_attribution if post.label_attribution is not None else -1
            )
    features = {
        key: torch.from_numpy(np.stack(values)).to(dtype) for key, values in columns.items()
    }
    features["gap"] = torch.tensor(gaps, dtype=dtype)
    return SplitTensors(
        ids=ids,
        features=features,
        y_binary=torch.tensor(y_binary, dtype=dtype) if require_labels else None,
        y_attribution=torch.tensor(y_attribution, dtype=torch.long) if require_labels else None,
    )


def build_model(config: RunConfig) -> ClueFusionModel:
    torch.manual_seed(config.seed)
    model = ClueFusionModel(
        dims=config.dims(),
        share_compare=config.share_compare,
        gate_stop_gradient=config.gate_stop_gradient,
    )
    if config.precision == "float64":
        model = model.double()
    return model


def load_labeled_posts(config: RunConfig):
    result = ingest_dataset(config.dataset, schema_check=True)
    if not result.posts:
        raise TrainingError(f"dataset {config.dataset!r} produced no usable posts")
    return result.posts


def resolve_split(config: RunConfig, posts: Sequence[NewsPost]) -> DatasetSplit:
    path = Path(config.split_manifest) if config.split_manifest else None
    if path is not None and path.exists():
        return DatasetSplit.load(path)
    split = stratified_split(posts, ratios=tuple(config.split_ratios), seed=config.seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        split.save(path)
    return split


def posts_for_ids(posts: Sequence[NewsPost], ids: Sequence[str]) -> list:
    by_id = {post.id: post for post in posts}
    missing = [post_id for post_id in ids if post_id not in by_id]
    if missing:
        raise TrainingError(f"split references unknown post ids: {missing[:5]}")
    return [by_id[post_id] for post_id in ids]


def _predictions_from_output(output, task: str) -> torch.Tensor:
    if task == "detect":
        return (output.detect_prob >= 0.5).to(torch.long)
    return output.attr_probs.argmax(dim=-1)


def _labels_for_task(tensors: SplitTensors, task: str) -> torch.Tensor:
    if task == "detect":
        return tensors.y_binary.to(torch.long)
    return tensors.y_attribution


@torch.no_grad()
def evaluate_split(
    model: ClueFusionModel,
    tensors: SplitTensors,
    task: str,
    branch_mask: Sequence[str] = (),
):
    """Loss, accuracy, and predictions over one split in eval mode."""
    model.eval()
    output = model(tensors.features, task=task, branch_mask=branch_mask)
    loss, _ = model.compute_loss(
        output, tensors.y_binary, tensors.y_attribution, task=task
    )
    predictions = _predictions_from_output(output, task)
    labels = _labels_for_task(tensors, task)
    accuracy = float((predictions == labels).to(torch.float64).mean())
    return float(loss), accuracy, predictions, labels


@dataclass
class TrainResult:
    checkpoint_path: Path
    log_path: Path
    history: List[dict] = field(default_factory=list)
    best_val_accuracy: float = 0.0
    best_epoch: int = -1


def train(config: RunConfig) -> TrainResult:
    """Mini-batch training of the composite objective with best-val selection.

    Deterministic for a fixed seed and thread count: model init, batch order,
    and optimizer state all derive from ``config.seed``.
    """
    pipeline = build_pipeline(config)
    posts = load_labeled_posts(config)
    split = resolve_split(config, posts)
    dtype = torch.float64 if config.precision == "float64" else torch.float32
    train_tensors = assemble_tensors(posts_for_ids(posts, split.train), pipeline, dtype)
    val_tensors = assemble_tensors(posts_for_ids(posts, split.val), pipeline, dtype)
    if len(train_tensors) == 0 or len(val_tensors) == 0:
        raise TrainingError("train and val splits must be non-empty")
    if config.task == "attribute" and int(train_tensors.y_attribution.min()) < 0:
        raise TrainingError("attribution task requires attribution labels on every post")

    model = build_model(config)
    if config.warm_start_from:
        load_checkpoint(config.warm_start_from, model, task=config.task, warm_start=True)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    mask = tuple(config.branch_mask)

    log_path = config.log_path()
    log_path.parent.mkdir(parents=True, exist_ok=True)
    checkpoint_path = config.checkpoint_path()
    result = TrainResult(checkpoint_path=checkpoint_path, log_path=log_path)

    generator = torch.Generator().manual_seed(config.seed)
    n = len(train_tensors)
    labels = _labels_for_task(train_tensors, config.task)

    with log_path.open("w", encoding="utf-8") as log:
        if config.epochs == 0:
            save_checkpoint(model, checkpoint_path, task=config.task, seed=config.seed, epoch=-1)
            return result
        for epoch in range(config.epochs):
            model.train()
            perm = torch.randperm(n, generator=generator)
            epoch_loss = 0.0
            epoch_correct = 0
            seen = 0
            for start in range(0, n, config.batch_size):
                index = perm[start : start + config.batch_size]
                if index.numel() < 2:
                    continue  # BatchNorm needs at least two samples in train mode
                batch = train_tensors.slice(index)
                output = model(batch, task=config.task, branch_mask=mask)
                loss, _ = model.compute_loss(
                    output,
                    train_tensors.y_binary[index],
                    train_tensors.y_attribution[index]
                    if train_tensors.y_attribution is not None
                    else None,
                    task=config.task,
                )
                if not math.isfinite(float(loss)):
                    raise TrainingError(
                        f"non-finite loss in epoch {epoch}, batch starting at {start} "
                        f"(ids {train_tensors.ids[int(index[0])]}...)"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                batch_size = index.numel()
                epoch_loss += float(loss) * batch_size
                predictions = _predictions_from_output(output, config.task)
                epoch_correct += int((predictions == labels[index]).sum())
                seen += batch_size

            val_loss, val_accuracy, _, _ = evaluate_split(
                model, val_tensors, config.task, branch_mask=mask
            )
            record = {
                "epoch": epoch,
                "train_loss": epoch_loss / max(seen, 1),
                "train_acc": epoch_correct / max(seen, 1),
                "val_loss": val_loss,
                "val_acc": val_accuracy,
            }
            result.history.append(record)
            log.write(json.dumps(record) + "\n")
            log.flush()
            if val_accuracy > result.best_val_accuracy or result.best_epoch < 0:
                result.best_val_accuracy = val_accuracy
                result.best_epoch = epoch
                save_checkpoint(
                    model, checkpoint_path, task=config.task, seed=config.seed, epoch=epoch
                )
    return result


def evaluate(checkpoint_path, split_name: str, config: RunConfig) -> MetricsReport:
    """Metrics for a trained checkpoint over the named split; writes the report."""
    manifest = read_manifest(checkpoint_path)
    if manifest.get("task") != config.task:
        raise CheckpointError(
            f"checkpoint task {manifest.get('task')!r} does not match config task "
            f"{config.task!r}"
        )
    pipeline = build_pipeline(config)
    posts = load_labeled_posts(config)
    split = resolve_split(config, posts)
    ids = split.subset(split_name)
    if not ids:
        raise TrainingError(f"split {split_name!r} is empty")
    dtype = torch.float64 if config.precision == "float64" else torch.float32
    tensors = assemble_tensors(posts_for_ids(posts, ids), pipeline, dtype)
    model = build_model(config)
    load_checkpoint(checkpoint_path, model, task=config.task)
    _, _, predictions, labels = evaluate_split(
        model, tensors, config.task, branch_mask=tuple(config.branch_mask)
    )
    report = evaluate_predictions(labels.tolist(), predictions.tolist(), config.task)
    report_dir = Path(config.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    report.save(report_dir / f"eval_{config.task}_{split_name}.json")
    return report


@dataclass
class PredictionRecord:
    """Per-post inference output: branch evidence plus task prediction."""

    post_id: str
    phi: Dict[str, Optional[float]] = field(default_factory=dict)
    y_b_hat: Optional[float] = None
    y_hat: Optional[list] = None
    rep16_detect: Optional[list] = None
    rep16_attr: Optional[list] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.post_id,
            "phi": self.phi,
            "y_b_hat": self.y_b_hat,
            "y_hat": self.y_hat,
            "rep16_detect": self.rep16_detect,
            "rep16_attr": self.rep16_attr,
            "error": self.error,
        }


def predict(checkpoint_path, posts: Sequence[NewsPost], config: RunConfig) -> list:
    """Run inference over posts; unreadable assets produce error records."""
    manifest = read_manifest(checkpoint_path)
    task = manifest.get("task", config.task)
    pipeline = build_pipeline(config)
    model = build_model(config)
    load_checkpoint(checkpoint_path, model, task=task)
    model.eval()
    mask = tuple(config.branch_mask)
    dtype = torch.float64 if config.precision == "float64" else torch.float32

    records = []
    usable = []
    for post in posts:
        try:
            load_visual_asset(post.visual_ref)
        except VisualAssetError as exc:
            records.append(PredictionRecord(post_id=post.id, error=str(exc)))
            continue
        usable.append(post)
    if not usable:
        return records

    tensors = assemble_tensors(usable, pipeline, dtype, require_labels=False)
    with torch.no_grad():
        output = model(tensors.features, task=task, branch_mask=mask)
    for row, post in enumerate(usable):
        phi = {
            name: (None if output.phi[name] is None else float(output.phi[name][row]))
            for name in BRANCHES
        }
        record = PredictionRecord(post_id=post.id, phi=phi)
        if task == "detect":
            record.y_b_hat = float(output.detect_prob[row])
            record.rep16_detect = [float(x) for x in output.detect_rep[row]]
        else:
            record.y_hat = [float(x) for x in output.attr_probs[row]]
            record.rep16_attr = [float(x) for x in output.attr_rep[row]]
        records.append(record)
    return records


def resolve_branch_name(branch: str) -> str:
    key = branch.strip().lower()
    if key not in ABLATION_NAMES:
        raise TrainingError(
            f"unknown branch {branch!r}; valid names: "
            f"{sorted(set(ABLATION_NAMES) | set(ABLATION_NAMES.values()))}"
        )
    return ABLATION_NAMES[key]


def ablate(config: RunConfig, branch: str, split_name: str = "test") -> MetricsReport:
    """Train and evaluate with one evidence branch masked out."""
    canonical = resolve_branch_name(branch)
    import dataclasses

    masked_config = dataclasses.replace(config, branch_mask=[canonical])
    result = train(masked_config)
    return evaluate(result.checkpoint_path, split_name, masked_config)
