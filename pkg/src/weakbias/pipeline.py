"""End-to-end wiring: text embeddings, two-stage training, prediction.

One root seed drives every stage through named sub-seeds, so rerunning a
pipeline reproduces each stage exactly and adding a later stage can never
perturb an earlier one.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .classifier import BiasModel, TrainSpec, predict_batch, train_stage1, train_stage2
from .corpus import Corpus, SideLabel, class_weights
from .doc2vec import PvdmConfig, PvdmModel, train_pvdm
from .seeding import derive_seed


@dataclasses.dataclass
class PipelineConfig:
    pvdm: PvdmConfig
    stage1_epochs: int
    stage2_epochs: int
    lr: float = 1e-4
    batch_size: int = 64
    hidden: int = 256
    fused: int = 256
    use_class_weights: bool = True
    seed: int = 0


@dataclasses.dataclass
class PipelineResult:
    text_model: PvdmModel
    model: BiasModel
    predictions: list[SideLabel]
    probabilities: np.ndarray


def normalize_embedding(vector: np.ndarray) -> np.ndarray:
    """Unit-length copy of a document vector (zero vectors stay zero).

    Document vectors come out of training at norms well below the image
    features they are fused with; normalizing keeps the text channel
    audible without letting it drown the image path.
    """
    norm = float(np.linalg.norm(vector))
    return vector / norm if norm > 0.0 else vector.copy()


def training_embeddings(model: PvdmModel) -> dict[str, np.ndarray]:
    """Per-document vectors learned during training, keyed by sample id."""
    return {
        doc_id: model.doc_vectors[i] for i, doc_id in enumerate(model.doc_ids)
    }


def run_pipeline(train: Corpus, test: Corpus, config: PipelineConfig) -> PipelineResult:
    """Text model, stage 1, stage 2, and image-only test predictions.

    The pipeline owns stage seeding: the configured pvdm seed is replaced by
    a sub-seed of the root, as are both training stages.
    """
    pvdm_config = dataclasses.replace(
        config.pvdm, seed=derive_seed(config.seed, "text")
    )
    text_model = train_pvdm(train, pvdm_config)
    embeddings = {
        doc_id: normalize_embedding(vector)
        for doc_id, vector in training_embeddings(text_model).items()
    }
    weights = class_weights(train) if config.use_class_weights else None
    stage1 = train_stage1(
        train,
        embeddings,
        TrainSpec(
            epochs=config.stage1_epochs,
            lr=config.lr,
            batch_size=config.batch_size,
            class_weights=weights,
            seed=derive_seed(config.seed, "stage1"),
        ),
        hidden=config.hidden,
        fused=config.fused,
    )
    model = train_stage2(
        stage1,
        train,
        TrainSpec(
            epochs=config.stage2_epochs,
            lr=config.lr,
            batch_size=config.batch_size,
            class_weights=weights,
            seed=derive_seed(config.seed, "stage2"),
        ),
    )
    predictions, probabilities = predict_batch(model, test.features())
    return PipelineResult(text_model, model, predictions, probabilities)


def make_pipeline(config: PipelineConfig):
    """Adapter for the evaluation protocols: a callable
    (train, test, seed) -> predictions that reruns the full pipeline under
    the given root seed."""

    def pipeline(train: Corpus, test: Corpus, seed: int):
        return run_pipeline(
            train, test, dataclasses.replace(config, seed=seed)
        ).predictions

    return pipeline
