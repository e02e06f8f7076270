"""Cross-modal joint-embedding training for signal encoders, desk scale.

Pipeline in three stages: align signal and tabular embeddings with a
redundancy-reduction loss, fine-tune a diagnosis head, fine-tune a
lab-abnormality head on the same frozen features.  Everything runs on an
in-repo float64 autodiff core and a fully deterministic synthetic
multimodal generator.
"""

__version__ = "0.1.0"
